use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mapper::TileCoord;

/// Trace format identifier written as the first line of every trace.
pub const TRACE_VERSION: &str = "# domino-trace v1";

/// Event kinds. Each prices against exactly one energy row.
///
/// Units: `Add`, `Cmp`, `Mul` and `Act` count 8-bit lane operations;
/// `HopTx`, `HopRx` and `RegIo` count 64-bit flits; `InterChipBit` counts
/// bits; `PeMac` counts full array MVMs; the rest count accesses or
/// active tile-cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventCategory {
    BufRead,
    BufWrite,
    SchedFetch,
    RegIo,
    Add,
    Cmp,
    Mul,
    Act,
    PeMac,
    HopTx,
    HopRx,
    InterChipBit,
    RifmCtrl,
    RofmCtrl,
}

impl EventCategory {
    pub const ALL: [EventCategory; 14] = [
        EventCategory::BufRead,
        EventCategory::BufWrite,
        EventCategory::SchedFetch,
        EventCategory::RegIo,
        EventCategory::Add,
        EventCategory::Cmp,
        EventCategory::Mul,
        EventCategory::Act,
        EventCategory::PeMac,
        EventCategory::HopTx,
        EventCategory::HopRx,
        EventCategory::InterChipBit,
        EventCategory::RifmCtrl,
        EventCategory::RofmCtrl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EventCategory::BufRead => "BufRead",
            EventCategory::BufWrite => "BufWrite",
            EventCategory::SchedFetch => "SchedFetch",
            EventCategory::RegIo => "RegIO",
            EventCategory::Add => "Add",
            EventCategory::Cmp => "Cmp",
            EventCategory::Mul => "Mul",
            EventCategory::Act => "Act",
            EventCategory::PeMac => "PeMac",
            EventCategory::HopTx => "HopTx",
            EventCategory::HopRx => "HopRx",
            EventCategory::InterChipBit => "InterChipBit",
            EventCategory::RifmCtrl => "RifmCtrl",
            EventCategory::RofmCtrl => "RofmCtrl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FabricEvent {
    pub cycle: u64,
    pub tile: TileCoord,
    pub category: EventCategory,
    pub count: u64,
}

/// Per-chip event totals of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    /// `counts[chip][category]`.
    pub counts: Vec<[u64; 14]>,
    pub cycles: u64,
}

impl EventCounts {
    pub fn new(chips: usize) -> Self {
        Self {
            counts: vec![[0; 14]; chips],
            cycles: 0,
        }
    }

    pub fn add(&mut self, chip: usize, category: EventCategory, count: u64) {
        if chip >= self.counts.len() {
            self.counts.resize(chip + 1, [0; 14]);
        }
        self.counts[chip][category.index()] += count;
    }

    pub fn total(&self, category: EventCategory) -> u64 {
        self.counts.iter().map(|c| c[category.index()]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|c| c.iter().all(|&n| n == 0))
    }

    /// Element-wise sum; used to merge per-batch counts.
    pub fn merge(&mut self, other: &EventCounts) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), [0; 14]);
        }
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
        self.cycles = self.cycles.max(other.cycles);
    }

    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a FabricEvent>) -> Self {
        let mut c = Self::default();
        for e in events {
            c.add(e.tile.chip, e.category, e.count);
            c.cycles = c.cycles.max(e.cycle + 1);
        }
        c
    }
}

/// CSV trace: version line, header, one row per event in commit order.
pub fn write_trace(events: &[FabricEvent]) -> String {
    let mut s = String::with_capacity(events.len() * 24 + 64);
    s.push_str(TRACE_VERSION);
    s.push('\n');
    s.push_str("cycle,x,y,chip,category,count\n");
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.cycle,
            e.tile.x,
            e.tile.y,
            e.tile.chip,
            e.category.name(),
            e.count
        );
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<FabricEvent>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_VERSION) {
        return Err("missing trace version line".into());
    }
    if lines.next() != Some("cycle,x,y,chip,category,count") {
        return Err("missing trace header".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || format!("trace line {}: `{l}`", i + 3);
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
            Ok(FabricEvent {
                cycle: num(f[0])?,
                tile: TileCoord {
                    x: num(f[1])? as usize,
                    y: num(f[2])? as usize,
                    chip: num(f[3])? as usize,
                },
                category: EventCategory::parse(f[4]).ok_or_else(bad)?,
                count: num(f[5])?,
            })
        })
        .collect()
}
