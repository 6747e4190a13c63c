use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use domino::energy::{DesignSummary, EnergyConfig, EnergyLedger, LedgerFile};
use domino::fabric::EventCounts;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn domino(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domino")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_prints_the_layer_table() {
    let o = domino(&["validate", "--network", path(&fixture("vgg19_imagenet.toml"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("conv5_4"));
    assert!(s.contains("224x224x64"));
    assert_eq!(s.lines().filter(|l| l.contains(" conv ")).count(), 16);
}

#[test]
fn validate_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(fixture("toy_conv.toml")).unwrap().replace("stride = 1", "stride = 0");
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, bad).unwrap();
    let o = domino(&["validate", "--network", path(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stride"), "{}", stderr(&o));
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let o = domino(&["validate", "--network", path(&empty)]);
    assert_eq!(o.status.code(), Some(1));
    let o = domino(&["validate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn map_reports_tiles_chips_and_periods() {
    let o = domino(&["map", "--network", path(&fixture("toy_conv.toml"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("tiles: 9\n"), "{s}");
    // 2 (P + W) with P = 1, W = 8.
    assert!(s.lines().any(|l| l.contains("conv") && l.trim_end().ends_with(" 18")), "{s}");
    let o = domino(&["map", "--network", path(&fixture("vgg19_imagenet.toml"))]);
    assert!(stdout(&o).contains("chips: 10 "), "{}", stdout(&o));
}

#[test]
fn map_respects_a_chip_cap() {
    let o = domino(&["map", "--network", path(&fixture("vgg19_imagenet.toml")), "--max-chips", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("chips"));
}

#[test]
fn map_writes_the_design() {
    let dir = tempfile::tempdir().unwrap();
    let o = domino(&["map", "--network", path(&fixture("toy_conv.toml")), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["design.toml", "schedules.txt", "map_summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn run_checks_against_the_oracle_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = domino(&[
            "run",
            "--network",
            path(&fixture("toy_conv.toml")),
            "--seed",
            "5",
            "--trace",
            "--symbolic-verify",
            "--out",
            path(out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let s = stdout(&o);
        assert!(s.contains("output matches oracle: yes"), "{s}");
        assert!(s.contains("symbolic check: yes"), "{s}");
    }
    for f in ["report.toml", "report.csv", "ledger.json", "trace.csv", "output.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert_eq!(x, y, "{f}");
    }
    // The saved ledger reports the same figures.
    let o = domino(&["report", "--ledger", path(&a.join("ledger.json")), "--csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), std::fs::read_to_string(a.join("report.csv")).unwrap());
}

#[test]
fn run_reads_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("toy_conv.toml"), dir.path().join("net.toml")).unwrap();
    std::fs::copy(fixture("energy.toml"), dir.path().join("energy.toml")).unwrap();
    let m = "network = \"net.toml\"\nenergy = \"energy.toml\"\nseed = 9\nout = \"res\"\n";
    std::fs::write(dir.path().join("run.toml"), m).unwrap();
    let o = domino(&["run", "--manifest", path(&dir.path().join("run.toml"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("res/report.toml").exists());
    std::fs::write(dir.path().join("bad.toml"), "network = \"missing.toml\"\n").unwrap();
    let o = domino(&["run", "--manifest", path(&dir.path().join("bad.toml"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_of_a_zero_ledger_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EnergyConfig::default();
    let design = DesignSummary {
        network: "empty".into(),
        macs: 0,
        tiles: 1,
        chips: 1,
    };
    let f = LedgerFile::new(design, cfg.clone(), EventCounts::new(1), EnergyLedger::zero(1, cfg.step_hz));
    let p = dir.path().join("ledger.json");
    std::fs::write(&p, f.to_json()).unwrap();
    let o = domino(&["report", "--ledger", path(&p), "--csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    for key in ["energy_j", "power_w", "ce_tops_per_w", "cim_pct"] {
        assert!(s.contains(&format!("\n{key},0\n")), "{key}: {s}");
    }
}

#[test]
fn report_can_reprice_a_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = domino(&["run", "--network", path(&fixture("toy_conv.toml")), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let e = dir.path().join("free_cim.toml");
    std::fs::write(&e, "pe_mac = 0.0\n").unwrap();
    let o = domino(&["report", "--ledger", path(&out.join("ledger.json")), "--energy", path(&e), "--csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("\ncim_j,0\n"));
}
