//! Cycle-stepped execution of a compiled design.
//!
//! Tiles have a three-stage pipeline: a packet accepted at cycle `t` feeds
//! the PE at `t + 1` and the ROFM commits and transmits at `t + 2`. Conv
//! regions step through their padded input stream in lock-step, one slot
//! per cycle, and stall only when the slot's pixel has not arrived yet.
//! Everything that crosses tiles outside a chain goes through a delivery
//! calendar that rejects two packets entering one port in one cycle.

mod conv;
mod engine;
pub mod events;
mod fc;
mod station;

pub use engine::Fabric;
pub use events::{parse_trace, write_trace, EventCategory, EventCounts, FabricEvent, TRACE_VERSION};

use crate::error::FabricError;
use crate::mapper::{MappedDesign, TileCoord, WeightBlock};
use crate::tensor::Tensor;

/// Cycles from a tile accepting its input slice to its partial sum
/// leaving on a link.
pub const TILE_LATENCY: u64 = 2;

/// Bits per link flit.
pub const FLIT_BITS: usize = 64;

/// Width of partial sums on links and in ROFM buffers.
pub const PSUM_BITS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FabricOptions {
    pub max_cycles: u64,
    /// Fail with `BufferOverflow` instead of only recording the peak.
    pub strict_capacity: bool,
    /// Keep every event for a trace; counts are always kept.
    pub record_trace: bool,
    /// Permutes component evaluation order inside each cycle.
    pub shuffle_seed: Option<u64>,
}

impl Default for FabricOptions {
    fn default() -> Self {
        Self {
            max_cycles: 10_000_000,
            strict_capacity: false,
            record_trace: false,
            shuffle_seed: None,
        }
    }
}

/// Peak buffer use seen during a run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Occupancy {
    pub rofm_peak_bytes: usize,
    pub rofm_peak_tile: Option<TileCoord>,
    /// Tiles whose ROFM data buffer went past capacity.
    pub rofm_overflow_tiles: usize,
    pub rifm_peak_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: Tensor,
    /// Cycles until the last output element reached the output port.
    pub cycles: u64,
    pub counts: EventCounts,
    /// Canonically ordered events; empty unless `record_trace` was set.
    pub events: Vec<FabricEvent>,
    pub occupancy: Occupancy,
    /// Pre-activation accumulators of every conv output, by layer, when
    /// instrumentation is on.
    pub accumulators: Vec<(usize, Vec<i64>)>,
}

/// Exact integer MVM of one input slice against a PE weight block.
pub fn pe_compute(w: &WeightBlock, x: &[i32]) -> Vec<i64> {
    let mut y = vec![0i64; w.cols];
    pe_accumulate(w, x, &mut y);
    y
}

/// `y += x * W`, with a 32-bit inner loop when the block cannot overflow it.
pub(crate) fn pe_accumulate(w: &WeightBlock, x: &[i32], y: &mut [i64]) {
    let xmax = x.iter().map(|v| v.unsigned_abs() as u64).max().unwrap_or(0);
    let wmax = w.data.iter().map(|v| v.unsigned_abs() as u64).max().unwrap_or(0);
    if xmax * wmax * (w.rows as u64) < (1u64 << 31) {
        let mut acc = vec![0i32; w.cols];
        for (r, &xv) in x.iter().enumerate().take(w.rows) {
            if xv == 0 {
                continue;
            }
            let row = &w.data[r * w.cols..(r + 1) * w.cols];
            for (a, &wv) in acc.iter_mut().zip(row) {
                *a += xv * wv as i32;
            }
        }
        for (o, a) in y.iter_mut().zip(acc) {
            *o += a as i64;
        }
    } else {
        w.mvm_into(x, y);
    }
}

/// Runs one inference with default options and a cycle cap.
pub fn run_inference(design: &MappedDesign, input: &Tensor, max_cycles: u64) -> Result<RunResult, FabricError> {
    let opts = FabricOptions {
        max_cycles,
        ..Default::default()
    };
    Fabric::new(design, opts).run(input)
}
