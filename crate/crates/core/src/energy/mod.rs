//! Energy, power and efficiency figures from fabric event counts.
//!
//! Every event category has one price. Energies are kept as integer
//! attojoules so sums are exact and merging partial ledgers is associative.

mod report;

pub use report::{report, DesignSummary, LedgerFile, Report, LEDGER_VERSION, REPORT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::EnergyError;
use crate::fabric::{EventCategory, EventCounts, FabricEvent};

/// Per-component energies (pJ) and areas (µm²) of one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// RIFM 256 B buffer, per access.
    pub rifm_buffer_access: f64,
    /// RIFM control, per active cycle.
    pub rifm_control: f64,
    /// Per 8-bit add.
    pub adder: f64,
    /// Pooling unit, per 8 bits.
    pub pooling_cmp: f64,
    /// Activation unit, per 8 bits.
    pub activation: f64,
    /// ROFM 16 KiB data buffer, per access.
    pub rofm_data_buffer_access: f64,
    /// Per 16-bit schedule entry fetched.
    pub schedule_fetch: f64,
    /// Per 64-bit register transfer.
    pub reg_io: f64,
    /// ROFM control, per active cycle.
    pub rofm_control: f64,
    /// Per bit crossing a chip boundary.
    pub inter_chip: f64,
    /// One `N_c x N_m` MVM in the CIM array. The default is a stand-in
    /// 8-bit SRAM array at 10 fJ per MAC over 256 x 256 cells; supply the
    /// figure of the array actually assumed.
    pub pe_mac: f64,
    pub rifm_area_um2: f64,
    pub rofm_area_um2: f64,
    /// Area of one CIM core. Zero unless supplied, in which case
    /// throughput per area covers the routers only.
    pub cim_area_um2: f64,
    /// Instruction step frequency.
    pub step_hz: f64,
    /// Technology and voltage normalization factors applied to the
    /// normalized CE figure.
    pub tech_coefficient: f64,
    pub voltage_coefficient: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            rifm_buffer_access: 281.3,
            rifm_control: 10.4,
            adder: 0.02,
            pooling_cmp: 0.0077,
            activation: 0.0009,
            rofm_data_buffer_access: 281.3,
            schedule_fetch: 2.2,
            reg_io: 42.1,
            rofm_control: 28.5,
            inter_chip: 0.55,
            pe_mac: 655.36,
            rifm_area_um2: 2227.1,
            rofm_area_um2: 57972.7,
            cim_area_um2: 0.0,
            step_hz: 10e6,
            tech_coefficient: 1.0,
            voltage_coefficient: 1.0,
        }
    }
}

impl EnergyConfig {
    fn fields(&self) -> [(&'static str, f64); 17] {
        [
            ("rifm_buffer_access", self.rifm_buffer_access),
            ("rifm_control", self.rifm_control),
            ("adder", self.adder),
            ("pooling_cmp", self.pooling_cmp),
            ("activation", self.activation),
            ("rofm_data_buffer_access", self.rofm_data_buffer_access),
            ("schedule_fetch", self.schedule_fetch),
            ("reg_io", self.reg_io),
            ("rofm_control", self.rofm_control),
            ("inter_chip", self.inter_chip),
            ("pe_mac", self.pe_mac),
            ("rifm_area_um2", self.rifm_area_um2),
            ("rofm_area_um2", self.rofm_area_um2),
            ("cim_area_um2", self.cim_area_um2),
            ("step_hz", self.step_hz),
            ("tech_coefficient", self.tech_coefficient),
            ("voltage_coefficient", self.voltage_coefficient),
        ]
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        for (name, v) in self.fields() {
            if !v.is_finite() || v < 0.0 {
                return Err(EnergyError::Config(format!("`{name}` must be a finite non-negative number, got {v}")));
            }
        }
        if self.step_hz == 0.0 {
            return Err(EnergyError::Config("`step_hz` must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, EnergyError> {
        let c: Self = toml::from_str(text).map_err(|e| EnergyError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Price of one event, in pJ.
    pub fn price_pj(&self, category: EventCategory) -> f64 {
        use EventCategory::*;
        match category {
            BufRead | BufWrite => self.rofm_data_buffer_access,
            SchedFetch => self.schedule_fetch,
            // A hop is an output-register write at the sender plus an
            // input-register read at the receiver, one event each.
            RegIo | HopTx | HopRx => self.reg_io,
            Add => self.adder,
            // The pooling unit also does the average-pool scaling.
            Cmp | Mul => self.pooling_cmp,
            Act => self.activation,
            PeMac => self.pe_mac,
            InterChipBit => self.inter_chip,
            RifmCtrl => self.rifm_control,
            RofmCtrl => self.rofm_control,
        }
    }

    /// Price of one event in attojoules.
    pub fn price_aj(&self, category: EventCategory) -> u128 {
        (self.price_pj(category) * 1e6).round() as u128
    }

    /// Area of one tile in µm².
    pub fn tile_area_um2(&self) -> f64 {
        self.rifm_area_um2 + self.rofm_area_um2 + self.cim_area_um2
    }
}

/// The three power groups of the breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Cim,
    OnChipData,
    OffChipData,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Cim, Bucket::OnChipData, Bucket::OffChipData];

    pub fn of(category: EventCategory) -> Self {
        match category {
            EventCategory::PeMac => Bucket::Cim,
            EventCategory::InterChipBit => Bucket::OffChipData,
            _ => Bucket::OnChipData,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Bucket::Cim => "cim",
            Bucket::OnChipData => "on_chip_data",
            Bucket::OffChipData => "off_chip_data",
        }
    }
}

/// Priced events: `aj[chip][category]` in attojoules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub aj: Vec<[u128; 14]>,
    pub cycles: u64,
    pub step_hz: f64,
}

const AJ_PER_J: f64 = 1e18;

impl EnergyLedger {
    pub fn zero(chips: usize, step_hz: f64) -> Self {
        Self {
            aj: vec![[0; 14]; chips],
            cycles: 0,
            step_hz,
        }
    }

    pub fn category_aj(&self, category: EventCategory) -> u128 {
        self.aj.iter().map(|c| c[category.index()]).sum()
    }

    pub fn bucket_aj(&self, bucket: Bucket) -> u128 {
        EventCategory::ALL.iter().filter(|c| Bucket::of(**c) == bucket).map(|c| self.category_aj(*c)).sum()
    }

    pub fn chip_aj(&self, chip: usize) -> u128 {
        self.aj.get(chip).map_or(0, |c| c.iter().sum())
    }

    pub fn total_aj(&self) -> u128 {
        self.aj.iter().flatten().sum()
    }

    pub fn total_j(&self) -> f64 {
        self.total_aj() as f64 / AJ_PER_J
    }

    pub fn bucket_j(&self, bucket: Bucket) -> f64 {
        self.bucket_aj(bucket) as f64 / AJ_PER_J
    }

    /// Run time in seconds.
    pub fn seconds(&self) -> f64 {
        self.cycles as f64 / self.step_hz
    }

    /// Mean power in watts, or `None` for a zero-length run.
    pub fn power_w(&self) -> Option<f64> {
        (self.cycles > 0).then(|| self.total_j() / self.seconds())
    }

    /// Adds a partial ledger of the same run, e.g. another chip's or
    /// another batch of its events.
    pub fn merge(&mut self, other: &EnergyLedger) {
        if other.aj.len() > self.aj.len() {
            self.aj.resize(other.aj.len(), [0; 14]);
        }
        for (row, o) in self.aj.iter_mut().zip(&other.aj) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
        self.cycles = self.cycles.max(other.cycles);
    }
}

/// Prices every counted event.
pub fn account(counts: &EventCounts, config: &EnergyConfig) -> Result<EnergyLedger, EnergyError> {
    config.validate()?;
    let mut l = EnergyLedger::zero(counts.counts.len(), config.step_hz);
    l.cycles = counts.cycles;
    for (row, c) in l.aj.iter_mut().zip(&counts.counts) {
        for cat in EventCategory::ALL {
            row[cat.index()] = c[cat.index()] as u128 * config.price_aj(cat);
        }
    }
    Ok(l)
}

/// Prices a trace. `cycles` is the run length, which a trace alone does
/// not record exactly.
pub fn account_events(events: &[FabricEvent], cycles: u64, config: &EnergyConfig) -> Result<EnergyLedger, EnergyError> {
    let mut counts = EventCounts::from_events(events);
    counts.cycles = counts.cycles.max(cycles);
    account(&counts, config)
}

/// Prices a trace file's text; unknown categories are errors.
pub fn account_trace(text: &str, cycles: u64, config: &EnergyConfig) -> Result<EnergyLedger, EnergyError> {
    let events = crate::fabric::parse_trace(text).map_err(|e| {
        let unknown = text
            .lines()
            .skip(2)
            .filter_map(|l| l.split(',').nth(4))
            .find(|c| EventCategory::parse(c).is_none());
        match unknown {
            Some(c) => EnergyError::UnknownCategory(c.to_string()),
            None => EnergyError::Malformed(e),
        }
    })?;
    account_events(&events, cycles, config)
}

/// Whether an energy figure counts multiply-accumulates or anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Mac,
    Other,
}

/// Factor that rescales an energy measured at a design's weight/activation
/// precision `(b_wd, b_ad)` to a target precision `(b_wt, b_at)`:
/// `b_wd b_ad / (b_wt b_at)` for MACs, `b_ad / b_at` otherwise. All bit
/// widths must be at least 1.
pub fn precision_scale(b_wt: u32, b_at: u32, b_wd: u32, b_ad: u32, class: OpClass) -> f64 {
    debug_assert!(b_wt >= 1 && b_at >= 1 && b_wd >= 1 && b_ad >= 1);
    match class {
        OpClass::Mac => (b_wd as f64 * b_ad as f64) / (b_wt as f64 * b_at as f64),
        OpClass::Other => b_ad as f64 / b_at as f64,
    }
}
