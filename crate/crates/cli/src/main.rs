//! `domino`: validate, compile, simulate and report on networks.
//!
//! Exit status is 0 on success, 1 when an input (network, config, flag)
//! is invalid and 2 when a valid input fails to map or run, including an
//! output that disagrees with the oracle.

mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use domino::energy::{account, report, DesignSummary, EnergyConfig, LedgerFile};
use domino::fabric::{write_trace, Fabric, FabricOptions};
use domino::fixtures::fixture_input;
use domino::mapper::manifest::{write_manifest, write_schedule_dump};
use domino::mapper::symbolic::symbolic_inference;
use domino::mapper::{map_network, ArchConfig, MapOptions, MappedDesign, PoolMode, RegionKind};
use domino::netspec::{parse_network_file, reference_inference, NetworkSpec};
use domino::MapError;

use manifest::RunManifest;

const VALIDATION: u8 = 1;
const RUNTIME: u8 = 2;

/// An error with the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: VALIDATION,
        message: e.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: RUNTIME,
        message: e.to_string(),
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "domino", version, about = "Mapping compiler and simulator for a mesh of CIM tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a network file; prints its layer table.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Compile a network and print the mapping summary.
    Map(CommonArgs),
    /// Compile, simulate one inference and price it.
    Run(RunArgs),
    /// Print the report of a saved ledger.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        /// Reprice with this energy config instead of the saved one.
        #[arg(long)]
        energy: Option<PathBuf>,
        /// CSV instead of the text table.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Run manifest; explicit flags override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    arch: Option<PathBuf>,
    /// `block-reuse` or `weight-duplication`.
    #[arg(long)]
    pool_mode: Option<String>,
    /// Upper bound on chips, overriding the arch file.
    #[arg(long)]
    max_chips: Option<usize>,
    /// Directory for output files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    energy: Option<PathBuf>,
    /// Seed of the random input image.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the event trace.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    max_cycles: Option<u64>,
    /// Skip the oracle comparison.
    #[arg(long)]
    no_oracle: bool,
    /// Also check the design with the symbolic executor.
    #[arg(long)]
    symbolic_verify: bool,
    /// Fail on ROFM buffer overflow instead of only reporting it.
    #[arg(long)]
    strict_capacity: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Validate { network } => cmd_validate(&network),
        Command::Map(a) => resolve(&a, None).and_then(|m| cmd_map(&m)),
        Command::Run(a) => resolve(&a.common, Some(&a)).and_then(|m| cmd_run(&m)),
        Command::Report { ledger, energy, csv } => cmd_report(&ledger, energy.as_deref(), csv),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn resolve(common: &CommonArgs, run: Option<&RunArgs>) -> Result<RunManifest> {
    let mut m = match &common.manifest {
        Some(p) => RunManifest::load(p).map_err(invalid)?,
        None => RunManifest::default(),
    };
    m.apply(common, run);
    if m.network.is_none() {
        return Err(invalid("no network given (use --network or a manifest)"));
    }
    Ok(m)
}

fn load_network(path: &Path) -> Result<NetworkSpec> {
    parse_network_file(path).map_err(invalid)
}

fn cmd_validate(path: &Path) -> Result<String> {
    let net = load_network(path)?;
    let mut s = String::new();
    let _ = writeln!(s, "network {} ok: input {}", net.name.as_deref().unwrap_or("-"), net.input_shape);
    let _ = writeln!(s, "{:<4} {:<22} {:<13} {:<24} output", "idx", "name", "kind", "params");
    for (i, l) in net.layers().iter().enumerate() {
        let params = match l.kind {
            domino::netspec::LayerKind::Conv => {
                format!("K{} C{} M{} S{} P{}", l.kernel, l.in_channels, l.out_channels, l.stride, l.padding)
            }
            domino::netspec::LayerKind::Fc => format!("C{} M{}", l.in_channels, l.out_channels),
            domino::netspec::LayerKind::ResidualAdd => format!("skip {}", l.skip_source.unwrap_or(0)),
            _ => format!("K{} S{}", l.pool_kernel, l.pool_stride),
        };
        let _ = writeln!(
            s,
            "{:<4} {:<22} {:<13} {:<24} {}",
            i,
            l.name.as_deref().unwrap_or("-"),
            l.kind.as_str(),
            params,
            net.output_shape(i)
        );
    }
    let _ = writeln!(s, "MACs per inference: {}", net.mac_count());
    Ok(s)
}

fn load_arch(m: &RunManifest) -> Result<ArchConfig> {
    let mut arch = match &m.arch {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("reading {}: {e}", p.display())))?;
            ArchConfig::from_toml(&text).map_err(invalid)?
        }
        None => ArchConfig::default(),
    };
    if let Some(c) = m.max_chips {
        arch.max_chips = Some(c);
    }
    arch.validate().map_err(invalid)?;
    Ok(arch)
}

fn pool_mode(m: &RunManifest) -> Result<PoolMode> {
    match &m.pool_mode {
        None => Ok(PoolMode::default()),
        Some(s) => PoolMode::parse(s).ok_or_else(|| invalid(format!("unknown pool mode `{s}`"))),
    }
}

fn compile(m: &RunManifest) -> Result<MappedDesign> {
    let net = load_network(m.network.as_deref().expect("resolved"))?;
    let arch = load_arch(m)?;
    let opts = MapOptions { pool_mode: pool_mode(m)? };
    map_network(&net, &arch, &opts).map_err(|e| match e {
        MapError::Arch(_) => invalid(e),
        _ => runtime(e),
    })
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("creating {}: {e}", dir.display())))?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| runtime(format!("writing {}: {e}", p.display())))
}

fn map_summary(d: &MappedDesign) -> String {
    let mut s = String::new();
    let per_chip = d.tiles_per_chip();
    let _ = writeln!(s, "tiles: {}", d.tile_count());
    let _ = writeln!(s, "chips: {} (tiles per chip {:?})", d.chips, per_chip);
    let _ = writeln!(s, "pool mode: {}", d.pool_mode.as_str());
    let _ = writeln!(s, "{:<4} {:<22} {:<6} {:>6} {:>7}", "reg", "layer", "kind", "tiles", "period");
    for (i, r) in d.regions.iter().enumerate() {
        let (kind, period) = match r.kind {
            RegionKind::Conv { geom, replicas } => ("conv", geom.period(replicas > 1).to_string()),
            RegionKind::Fc { .. } => ("fc", "-".to_string()),
        };
        let _ = writeln!(s, "{:<4} {:<22} {:<6} {:>6} {:>7}", i, d.net.layers()[r.layer].label(r.layer), kind, r.tiles.len(), period);
    }
    s
}

fn cmd_map(m: &RunManifest) -> Result<String> {
    let d = compile(m)?;
    let summary = map_summary(&d);
    if let Some(dir) = &m.out {
        write_out(dir, "design.toml", &write_manifest(&d))?;
        write_out(dir, "schedules.txt", &write_schedule_dump(&d).map_err(runtime)?)?;
        write_out(dir, "map_summary.txt", &summary)?;
    }
    Ok(summary)
}

fn load_energy(path: Option<&Path>) -> Result<EnergyConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("reading {}: {e}", p.display())))?;
            EnergyConfig::from_toml(&text).map_err(invalid)
        }
        None => Ok(EnergyConfig::default()),
    }
}

fn cmd_run(m: &RunManifest) -> Result<String> {
    let energy = load_energy(m.energy.as_deref())?;
    let d = compile(m)?;
    let x = fixture_input(&d.net, m.seed);
    let opts = FabricOptions {
        max_cycles: m.max_cycles,
        strict_capacity: m.strict_capacity,
        record_trace: m.trace,
        shuffle_seed: None,
    };
    let r = Fabric::new(&d, opts).run(&x).map_err(runtime)?;
    let mut s = String::new();
    let _ = writeln!(s, "network: {}", d.net.name.as_deref().unwrap_or("-"));
    let _ = writeln!(s, "tiles: {} chips: {}", d.tile_count(), d.chips);
    let _ = writeln!(s, "cycles: {}", r.cycles);
    let o = &r.occupancy;
    let _ = writeln!(
        s,
        "rofm peak: {} B (capacity {} B, {} tiles over)",
        o.rofm_peak_bytes, d.arch.rofm_buffer_bytes, o.rofm_overflow_tiles
    );
    let mut mismatch = None;
    if m.oracle {
        let want = reference_inference(&d.net, &x).map_err(runtime)?;
        let ok = want == r.output;
        let _ = writeln!(s, "output matches oracle: {}", if ok { "yes" } else { "no" });
        if !ok {
            mismatch = Some("fabric output differs from the oracle");
        }
    }
    if m.symbolic_verify {
        let sym = symbolic_inference(&d, &x).map_err(runtime)?;
        let ok = sym == r.output;
        let _ = writeln!(s, "symbolic check: {}", if ok { "yes" } else { "no" });
        if !ok && mismatch.is_none() {
            mismatch = Some("fabric output differs from the symbolic executor");
        }
    }
    let ledger = account(&r.counts, &energy).map_err(runtime)?;
    let summary = DesignSummary::of(&d);
    let rep = report(&ledger, &summary, &energy).map_err(runtime)?;
    s.push_str(&rep.to_text());
    if let Some(dir) = &m.out {
        let out = serde_json::to_string(&r.output).expect("tensor serializes");
        write_out(dir, "output.json", &out)?;
        write_out(dir, "ledger.json", &LedgerFile::new(summary, energy.clone(), r.counts.clone(), ledger).to_json())?;
        write_out(dir, "report.toml", &rep.to_toml())?;
        write_out(dir, "report.csv", &rep.to_csv())?;
        if m.trace {
            write_out(dir, "trace.csv", &write_trace(&r.events))?;
        }
    }
    match mismatch {
        Some(msg) => {
            print!("{s}");
            Err(runtime(msg))
        }
        None => Ok(s),
    }
}

fn cmd_report(path: &Path, energy: Option<&Path>, csv: bool) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    let f = LedgerFile::from_json(&text).map_err(invalid)?;
    let (ledger, config) = match energy {
        Some(_) => {
            let config = load_energy(energy)?;
            (account(&f.counts, &config).map_err(runtime)?, config)
        }
        None => (f.ledger, f.config),
    };
    let rep = report(&ledger, &f.design, &config).map_err(runtime)?;
    Ok(if csv { rep.to_csv() } else { rep.to_text() })
}
