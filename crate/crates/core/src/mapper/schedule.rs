//! Schedule table generators.
//!
//! Conv chain tiles are indexed by a slot counter that starts when the
//! tile first sees its window, so counter value `c` of tile `(kr, cg, kc)`
//! works on base `c`. Entries for masked bases clear the accumulate and
//! transmit bits.

use super::ConvGeometry;
use crate::error::IsaError;
use crate::isa::{BufferOp, Dir, FuncCode, Instruction, RxCtrl, ScheduleTable, SumCtrl, TxCtrl};
use crate::netspec::{Activation, LayerKind};

/// Position of a conv tile inside one replica's chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainPos {
    pub kr: usize,
    pub cg: usize,
    pub kc: usize,
}

/// Per-phase meaning of a conv chain entry, decoded from the geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChainPhase {
    /// The tile adds its PE result for base `c`.
    pub psum: bool,
    /// A block output from an earlier channel group passes through.
    pub carry: bool,
    /// A previous row block's output arrives and is queued.
    pub arrival: bool,
}

fn rx_from(pred: Option<Dir>) -> RxCtrl {
    match pred {
        Some(d) => RxCtrl::none().with(d),
        None => RxCtrl::none(),
    }
}

fn tx_to(succ: Option<Dir>) -> TxCtrl {
    match succ {
        Some(d) => TxCtrl::none().with(d),
        None => TxCtrl::none(),
    }
}

/// Whether phase `phi` carries an output that replica `replica` owns.
pub fn owns_phase(geom: &ConvGeometry, replica: Option<usize>, phi: usize) -> bool {
    let replicated = replica.is_some();
    if !geom.phase_valid(phi, replicated) {
        return false;
    }
    match replica {
        None => true,
        Some(r) => geom.phase_parity(phi % geom.period(true)) == (r / 2, r % 2),
    }
}

pub fn chain_phase(geom: &ConvGeometry, pos: ChainPos, replica: Option<usize>, phi: usize) -> ChainPhase {
    let period = geom.period(replica.is_some());
    let shifted = |delta: isize| ((phi as isize + delta).rem_euclid(period as isize)) as usize;
    let psum = owns_phase(geom, replica, phi);
    let carry = pos.cg > 0 && owns_phase(geom, replica, shifted(-(geom.carry_delay(pos.cg) as isize)));
    let arrival = pos.kc == 0
        && pos.cg == 0
        && pos.kr > 0
        && owns_phase(geom, replica, shifted(geom.row_slack()));
    ChainPhase { psum, carry, arrival }
}

/// Chain schedule of one conv tile. `pred` is the direction the previous
/// chain tile's packets enter from, `succ` the direction toward the next.
pub fn gen_conv_schedule(
    geom: &ConvGeometry,
    pos: ChainPos,
    replica: Option<usize>,
    pred: Option<Dir>,
    succ: Option<Dir>,
) -> Result<ScheduleTable, IsaError> {
    let k = geom.kernel;
    let final_tile = pos.kc == k - 1;
    let period = geom.period(replica.is_some());
    let entries = (0..period)
        .map(|phi| {
            let ph = chain_phase(geom, pos, replica, phi);
            let mut rx = if (pos.kc > 0 && ph.psum) || ph.carry || ph.arrival {
                rx_from(pred)
            } else {
                RxCtrl::none()
            };
            let mut sum = 0u8;
            if ph.psum {
                rx = rx.with_local();
                sum |= SumCtrl::ACCUMULATE;
                if pos.kc == 0 && pos.cg == 0 && pos.kr > 0 {
                    sum |= SumCtrl::FROM_BUFFER | SumCtrl::POP;
                }
                if final_tile && pos.cg > 0 {
                    sum |= SumCtrl::PUSH;
                }
            }
            let buffer = if ph.arrival {
                BufferOp::Write
            } else if final_tile && ph.carry {
                BufferOp::Read
            } else {
                BufferOp::None
            };
            let sends = if !final_tile {
                ph.psum || ph.carry
            } else if pos.cg == 0 {
                ph.psum
            } else {
                ph.carry
            };
            let tx = if sends { tx_to(succ) } else { TxCtrl::none() };
            Instruction::CType {
                rx,
                sum: SumCtrl(sum),
                buffer,
                tx,
            }
        })
        .collect();
    ScheduleTable::build(entries)
}

fn act_param(activation: Activation) -> u8 {
    let relu = match activation {
        Activation::Relu => FuncCode::ACT_RELU,
        Activation::None => 0,
    };
    relu | FuncCode::ACT_SHIFT
}

/// Output-stage schedule of the tile that completes a conv output slice.
/// Indexed by the same counter as that tile's chain schedule.
pub fn gen_conv_output_schedule(
    geom: &ConvGeometry,
    replica: Option<usize>,
    activation: Activation,
    succ: Option<Dir>,
) -> Result<ScheduleTable, IsaError> {
    let period = geom.period(replica.is_some());
    let delay = geom.carry_delay(geom.cg - 1);
    let entries = (0..period)
        .map(|phi| {
            let b = (phi + period - delay % period) % period;
            if owns_phase(geom, replica, b) {
                Instruction::MType {
                    rx: RxCtrl::none().with_local(),
                    func: FuncCode::Act(act_param(activation)),
                    tx: tx_to(succ),
                }
            } else {
                Instruction::NOP
            }
        })
        .collect();
    ScheduleTable::build(entries)
}

/// FC tile schedule: a single entry run once per inference.
pub fn gen_fc_schedule(row: usize, pred: Option<Dir>, succ: Option<Dir>) -> Result<ScheduleTable, IsaError> {
    let rx = if row > 0 { rx_from(pred) } else { RxCtrl::none() };
    ScheduleTable::plain(vec![Instruction::CType {
        rx: rx.with_local(),
        sum: SumCtrl(SumCtrl::ACCUMULATE),
        buffer: BufferOp::None,
        tx: tx_to(succ),
    }])
}

pub fn gen_fc_output_schedule(activation: Activation, succ: Option<Dir>) -> Result<ScheduleTable, IsaError> {
    ScheduleTable::plain(vec![Instruction::MType {
        rx: RxCtrl::none().with_local(),
        func: FuncCode::Act(act_param(activation)),
        tx: tx_to(succ),
    }])
}

/// Pool window phase of a pixel: column offset inside the window plus
/// `s_p` when the pixel is on the window's last row.
pub fn pool_phase(row: usize, col: usize, s_p: usize) -> usize {
    col % s_p + if row % s_p == s_p - 1 { s_p } else { 0 }
}

/// Row-buffer pooling schedule with period `2 * s_p`.
pub fn gen_pool_schedule(kind: LayerKind, s_p: usize) -> Result<ScheduleTable, IsaError> {
    let entries = (0..2 * s_p)
        .map(|phi| {
            let c = phi % s_p;
            let last_row = phi >= s_p;
            let mut p = 0;
            if c == 0 {
                p |= FuncCode::WINDOW_OPEN;
            }
            if c == s_p - 1 {
                p |= FuncCode::WINDOW_ROW_END;
                if last_row {
                    p |= FuncCode::WINDOW_EMIT;
                }
            }
            let func = match kind {
                LayerKind::AvgPool => FuncCode::Mul(p),
                _ => FuncCode::Cmp(p),
            };
            Instruction::MType {
                rx: RxCtrl::none().with_local(),
                func,
                tx: TxCtrl::none(),
            }
        })
        .collect();
    ScheduleTable::plain(entries)
}

/// In-transit compare schedule of pooling replica `replica` (0..4).
/// Replica `r` owns window position `(r / 2, r % 2)`.
pub fn gen_duplicated_pool_schedule(replica: usize, succ: Option<Dir>) -> Result<ScheduleTable, IsaError> {
    let entries = (0..4)
        .map(|phi| {
            if phi != pool_phase(replica / 2, replica % 2, 2) {
                return Instruction::NOP;
            }
            let func = match replica {
                0 => FuncCode::Bp(0),
                3 => FuncCode::Cmp(FuncCode::WINDOW_EMIT),
                _ => FuncCode::Cmp(0),
            };
            Instruction::MType {
                rx: RxCtrl::none().with_local(),
                func,
                tx: tx_to(succ),
            }
        })
        .collect();
    ScheduleTable::plain(entries)
}

pub fn gen_residual_schedule() -> Result<ScheduleTable, IsaError> {
    ScheduleTable::plain(vec![Instruction::MType {
        rx: RxCtrl::none().with_local(),
        func: FuncCode::Add(FuncCode::ADD_RESIDUAL),
        tx: TxCtrl::none(),
    }])
}
