use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Bucket, EnergyConfig, EnergyLedger};
use crate::error::EnergyError;
use crate::fabric::EventCounts;
use crate::mapper::MappedDesign;

pub const REPORT_VERSION: &str = "domino-report v1";
pub const LEDGER_VERSION: &str = "domino-ledger v1";

/// What a report needs to know about the design that produced a ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub network: String,
    /// Multiply-accumulates of one inference.
    pub macs: u64,
    pub tiles: usize,
    pub chips: usize,
}

impl DesignSummary {
    pub fn of(d: &MappedDesign) -> Self {
        Self {
            network: d.net.name.clone().unwrap_or_default(),
            macs: d.net.mac_count(),
            tiles: d.tile_count(),
            chips: d.chips,
        }
    }
}

/// A ledger saved together with what is needed to report on it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerFile {
    pub version: String,
    pub design: DesignSummary,
    pub config: EnergyConfig,
    /// The counts the ledger was priced from, so it can be repriced.
    pub counts: EventCounts,
    pub ledger: EnergyLedger,
}

impl LedgerFile {
    pub fn new(design: DesignSummary, config: EnergyConfig, counts: EventCounts, ledger: EnergyLedger) -> Self {
        Self {
            version: LEDGER_VERSION.into(),
            design,
            config,
            counts,
            ledger,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EnergyError> {
        let f: Self = serde_json::from_str(text).map_err(|e| EnergyError::Malformed(e.to_string()))?;
        if f.version != LEDGER_VERSION {
            return Err(EnergyError::Malformed(format!("unsupported ledger version `{}`", f.version)));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub network: String,
    pub tiles: usize,
    pub chips: usize,
    pub cycles: u64,
    pub seconds: f64,
    pub macs: u64,
    /// Two per MAC.
    pub ops: u64,
    pub energy_j: f64,
    pub power_w: f64,
    pub cim_j: f64,
    pub on_chip_data_j: f64,
    pub off_chip_data_j: f64,
    pub cim_power_w: f64,
    pub on_chip_data_power_w: f64,
    pub off_chip_data_power_w: f64,
    pub cim_pct: f64,
    pub on_chip_data_pct: f64,
    pub off_chip_data_pct: f64,
    /// Off-chip share of all data movement energy.
    pub off_chip_share_of_data_pct: f64,
    pub ce_tops_per_w: f64,
    pub ce_normalized_tops_per_w: f64,
    pub area_mm2: f64,
    pub tops_per_mm2: f64,
    pub images_per_s: f64,
    pub images_per_s_per_tile: f64,
    pub images_per_s_per_chip: f64,
    pub config: EnergyConfig,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Efficiency and throughput figures of one inference.
pub fn report(ledger: &EnergyLedger, design: &DesignSummary, config: &EnergyConfig) -> Result<Report, EnergyError> {
    config.validate()?;
    let energy = ledger.total_j();
    let secs = ledger.seconds();
    if ledger.cycles == 0 && energy > 0.0 {
        return Err(EnergyError::Degenerate("energy was spent in zero time"));
    }
    let area_mm2 = design.tiles as f64 * config.tile_area_um2() / 1e6;
    if area_mm2 == 0.0 && design.macs > 0 {
        return Err(EnergyError::Degenerate("zero active area"));
    }
    let ops = 2 * design.macs;
    let [cim, on, off] = Bucket::ALL.map(|b| ledger.bucket_j(b));
    let pct = |v: f64| 100.0 * ratio(v, energy);
    let ce = ratio(ops as f64, energy) / 1e12;
    let images = ratio(1.0, secs);
    Ok(Report {
        version: REPORT_VERSION.into(),
        network: design.network.clone(),
        tiles: design.tiles,
        chips: design.chips,
        cycles: ledger.cycles,
        seconds: secs,
        macs: design.macs,
        ops,
        energy_j: energy,
        power_w: ratio(energy, secs),
        cim_j: cim,
        on_chip_data_j: on,
        off_chip_data_j: off,
        cim_power_w: ratio(cim, secs),
        on_chip_data_power_w: ratio(on, secs),
        off_chip_data_power_w: ratio(off, secs),
        cim_pct: pct(cim),
        on_chip_data_pct: pct(on),
        off_chip_data_pct: pct(off),
        off_chip_share_of_data_pct: 100.0 * ratio(off, on + off),
        ce_tops_per_w: ce,
        ce_normalized_tops_per_w: ce * config.tech_coefficient * config.voltage_coefficient,
        area_mm2,
        tops_per_mm2: ratio(ratio(ops as f64, secs) / 1e12, area_mm2),
        images_per_s: images,
        images_per_s_per_tile: ratio(images, design.tiles as f64),
        images_per_s_per_chip: ratio(images, design.chips as f64),
        config: config.clone(),
    })
}

impl Report {
    /// Key-value document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, EnergyError> {
        toml::from_str(text).map_err(|e| EnergyError::Malformed(e.to_string()))
    }

    /// `metric,value` rows after a version comment.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {REPORT_VERSION}\nmetric,value\n");
        let rows: [(&str, String); 27] = [
            ("network", self.network.clone()),
            ("tiles", self.tiles.to_string()),
            ("chips", self.chips.to_string()),
            ("cycles", self.cycles.to_string()),
            ("seconds", self.seconds.to_string()),
            ("macs", self.macs.to_string()),
            ("ops", self.ops.to_string()),
            ("energy_j", self.energy_j.to_string()),
            ("power_w", self.power_w.to_string()),
            ("cim_j", self.cim_j.to_string()),
            ("on_chip_data_j", self.on_chip_data_j.to_string()),
            ("off_chip_data_j", self.off_chip_data_j.to_string()),
            ("cim_power_w", self.cim_power_w.to_string()),
            ("on_chip_data_power_w", self.on_chip_data_power_w.to_string()),
            ("off_chip_data_power_w", self.off_chip_data_power_w.to_string()),
            ("cim_pct", self.cim_pct.to_string()),
            ("on_chip_data_pct", self.on_chip_data_pct.to_string()),
            ("off_chip_data_pct", self.off_chip_data_pct.to_string()),
            ("off_chip_share_of_data_pct", self.off_chip_share_of_data_pct.to_string()),
            ("ce_tops_per_w", self.ce_tops_per_w.to_string()),
            ("ce_normalized_tops_per_w", self.ce_normalized_tops_per_w.to_string()),
            ("area_mm2", self.area_mm2.to_string()),
            ("tops_per_mm2", self.tops_per_mm2.to_string()),
            ("images_per_s", self.images_per_s.to_string()),
            ("images_per_s_per_tile", self.images_per_s_per_tile.to_string()),
            ("images_per_s_per_chip", self.images_per_s_per_chip.to_string()),
            ("step_hz", self.config.step_hz.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    /// Short human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "network            {}", self.network);
        let _ = writeln!(s, "tiles / chips      {} / {}", self.tiles, self.chips);
        let _ = writeln!(s, "cycles             {} ({:.3} us)", self.cycles, self.seconds * 1e6);
        let _ = writeln!(s, "energy             {:.6e} J", self.energy_j);
        let _ = writeln!(s, "power              {:.4} W", self.power_w);
        for (name, w, p) in [
            ("  cim", self.cim_power_w, self.cim_pct),
            ("  on-chip data", self.on_chip_data_power_w, self.on_chip_data_pct),
            ("  off-chip data", self.off_chip_data_power_w, self.off_chip_data_pct),
        ] {
            let _ = writeln!(s, "{name:<19}{w:.4} W ({p:.2}%)");
        }
        let _ = writeln!(s, "CE                 {:.4} TOPS/W", self.ce_tops_per_w);
        let _ = writeln!(s, "throughput         {:.4} TOPS/mm2", self.tops_per_mm2);
        let _ = writeln!(s, "images/s           {:.2}", self.images_per_s);
        let _ = writeln!(s, "images/s per tile  {:.4}", self.images_per_s_per_tile);
        let _ = writeln!(s, "images/s per chip  {:.4}", self.images_per_s_per_chip);
        s
    }
}
