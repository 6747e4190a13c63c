use std::path::PathBuf;

use domino::energy::EnergyConfig;
use domino::fixtures;
use domino::mapper::ArchConfig;
use domino::netspec::parse_network_file;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn network_files_match_their_builders() {
    let mut all = fixtures::benchmarks();
    all.push(("toy_conv", fixtures::toy_conv));
    for (stem, build) in all {
        let parsed = parse_network_file(&dir().join(format!("{stem}.toml"))).unwrap();
        assert_eq!(parsed, build(), "{stem}");
    }
}

#[test]
fn config_files_are_the_defaults() {
    let arch = std::fs::read_to_string(dir().join("arch.toml")).unwrap();
    assert_eq!(ArchConfig::from_toml(&arch).unwrap(), ArchConfig::default());
    let energy = std::fs::read_to_string(dir().join("energy.toml")).unwrap();
    assert_eq!(EnergyConfig::from_toml(&energy).unwrap(), EnergyConfig::default());
}
