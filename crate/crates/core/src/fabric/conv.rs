//! Conv regions: chains of tiles stepping through the padded input stream.
//!
//! All tiles of a region see slot `u` in the same cycle. A tile at
//! `(kr, cg, kc)` runs counter `u - (kr * lrow + kc)` into its schedule.
//! Links between chain neighbours are registers: what a tile transmits at
//! slot `u` is what its successor receives at slot `u + 1`.

use std::collections::VecDeque;

use super::engine::{flits, Ctx, Packet, Payload, Port};
use super::events::EventCategory;
use super::station::Station;
use super::{pe_accumulate, PSUM_BITS};
use crate::error::FabricError;
use crate::isa::{BufferOp, Dir, FuncCode, Instruction, SumCtrl};
use crate::mapper::{ConvGeometry, MappedDesign, Region, RegionKind, TileRole};
use crate::netspec::{requantize, Activation};

#[derive(Debug)]
struct ChainTile {
    tile: usize,
    cg: usize,
    offset: usize,
    pred_dir: Option<Dir>,
    /// Last tile of its `(kr, cg)` block.
    block_final: bool,
    lanes: usize,
    psum: Option<Vec<i64>>,
    carry: Option<Vec<i64>>,
    queue: VecDeque<Vec<i64>>,
}

#[derive(Debug)]
struct Chain {
    mg: usize,
    tiles: Vec<ChainTile>,
    station: usize,
}

#[derive(Debug)]
pub(crate) struct ConvRegion {
    pub geom: ConvGeometry,
    layer: usize,
    entry: usize,
    n_tiles: usize,
    chains: Vec<Chain>,
    slot: usize,
    total: usize,
    /// `(slot, cycle delivered, pixel)` in stream order.
    pending: VecDeque<(usize, u64, Vec<i32>)>,
    acc: Option<Vec<i64>>,
}

impl ConvRegion {
    pub(crate) fn new(d: &MappedDesign, ri: usize, stations: &[Station], instrument: bool) -> Self {
        let r = &d.regions[ri];
        let RegionKind::Conv { geom, replicas } = r.kind else {
            unreachable!("conv region")
        };
        let k = geom.kernel;
        let mut chains = Vec::new();
        for rep in 0..replicas {
            for mg in 0..geom.mg {
                let mut tiles = Vec::new();
                for kr in 0..k {
                    for cg in 0..geom.cg {
                        for kc in 0..k {
                            let idx = Region::conv_index(&geom, rep, mg, kr, cg, kc);
                            let t = r.tiles[idx];
                            debug_assert!(matches!(d.tiles[t].role, TileRole::Conv { kr: a, cg: b, kc: c, .. } if (a, b, c) == (kr, cg, kc)));
                            let pred_dir = (!tiles.is_empty()).then(|| d.tiles[t].coord.entry_dir(&d.tiles[r.tiles[idx - 1]].coord));
                            tiles.push(ChainTile {
                                tile: t,
                                cg,
                                offset: kr * geom.lrow + kc,
                                pred_dir,
                                block_final: kc == k - 1,
                                lanes: geom.output_range(mg).len(),
                                psum: None,
                                carry: None,
                                queue: VecDeque::new(),
                            });
                        }
                    }
                }
                let station = stations
                    .iter()
                    .position(|s| s.is_merge(ri, (rep, mg)))
                    .expect("every chain has an output stage");
                chains.push(Chain { mg, tiles, station });
            }
        }
        Self {
            geom,
            layer: r.layer,
            entry: r.entry_tile(),
            n_tiles: r.tiles.len(),
            chains,
            slot: 0,
            total: geom.total_slots(),
            pending: VecDeque::new(),
            acc: instrument.then(|| vec![0; geom.out_shape.elements()]),
        }
    }

    pub(crate) fn deliver(&mut self, ctx: &mut Ctx, p: Packet) -> Result<(), FabricError> {
        let Payload::Act(v) = p.payload else {
            return Err(ctx.fault(self.entry, "partial sum on the activation input"));
        };
        let slot = self.geom.pixel_slot(p.key.0, p.key.1);
        if self.pending.back().is_some_and(|b| b.0 >= slot) || slot < self.slot {
            return Err(ctx.fault(self.entry, format!("input pixel {:?} out of stream order", p.key)));
        }
        self.pending.push_back((slot, ctx.now, v));
        let bytes = self.pending.len() * self.geom.in_shape.channels * ctx.act_bits / 8;
        ctx.rifm_level(bytes);
        Ok(())
    }

    pub(crate) fn take_accumulators(&mut self) -> Option<(usize, Vec<i64>)> {
        self.acc.take().map(|a| (self.layer, a))
    }

    pub(crate) fn step(&mut self, ctx: &mut Ctx) -> Result<(), FabricError> {
        if self.slot >= self.total {
            return Ok(());
        }
        let u = self.slot;
        let px = match self.geom.slot_pixel(u) {
            None => None,
            Some(_) => match self.pending.front() {
                // Accepted last cycle, so the PE can use it now.
                Some(&(s, at, _)) if s == u && at < ctx.now => self.pending.pop_front().map(|p| p.2),
                _ => return Ok(()),
            },
        };
        if let Some(px) = &px {
            // Forwarding the pixel along the region's RIFM chain.
            let f = flits(px.len() * ctx.act_bits) * (self.n_tiles as u64 - 1);
            ctx.emit(self.entry, EventCategory::HopTx, f);
            ctx.emit(self.entry, EventCategory::HopRx, f);
        }
        for ci in 0..self.chains.len() {
            self.step_chain(ctx, ci, u, px.as_deref())?;
        }
        self.slot += 1;
        Ok(())
    }

    fn step_chain(&mut self, ctx: &mut Ctx, ci: usize, u: usize, px: Option<&[i32]>) -> Result<(), FabricError> {
        let d = ctx.d;
        let g = self.geom;
        let n = self.chains[ci].tiles.len();
        // Back to front, so each tile still sees its predecessor's
        // registers from the previous slot.
        for j in (0..n).rev() {
            let (head, tail) = self.chains[ci].tiles.split_at_mut(j);
            let t = &mut tail[0];
            let pred = head.last_mut();
            if u < t.offset {
                // A merge tile latches group sums from the row above that
                // arrive before its first window.
                let sched = &d.tiles[t.tile].schedule;
                let lead = t.offset - u;
                let phase = (sched.period() as usize - lead % sched.period() as usize) % sched.period() as usize;
                if let (Some(p), Some(dir), Instruction::CType { rx, buffer: BufferOp::Write, .. }) =
                    (pred, t.pred_dir, sched.fetch(phase as u64)?)
                {
                    if rx.accepts(dir) {
                        if let Some(v) = p.carry.take() {
                            t.queue.push_back(v);
                            ctx.emit(t.tile, EventCategory::BufWrite, 1);
                            ctx.rofm_delta(t.tile, (t.lanes * PSUM_BITS / 8) as isize)?;
                        }
                    }
                }
                continue;
            }
            let c = u - t.offset;
            let instr = d.tiles[t.tile].schedule.fetch(c as u64)?;
            let Instruction::CType { rx, sum, buffer, tx } = instr else {
                return Err(ctx.fault(t.tile, "M-type entry in a chain schedule"));
            };
            let (pp, mut pc) = match (pred, t.pred_dir) {
                (Some(p), Some(dir)) if rx.accepts(dir) => (p.psum.take(), p.carry.take()),
                _ => (None, None),
            };
            if instr == Instruction::NOP {
                t.psum = None;
                t.carry = None;
                continue;
            }
            ctx.active(t.tile);
            let lanes = t.lanes as u64;
            let mut out_psum = None;
            let mut out_carry = None;
            let mut block = None;

            if buffer == BufferOp::Write && pc.is_some() {
                t.queue.push_back(pc.take().expect("checked"));
                ctx.emit(t.tile, EventCategory::BufWrite, 1);
                ctx.rofm_delta(t.tile, (t.lanes * PSUM_BITS / 8) as isize)?;
            }
            if sum.has(SumCtrl::ACCUMULATE) {
                let mut acc = vec![0i64; t.lanes];
                if rx.local() {
                    if let Some(x) = px {
                        let cr = g.channel_range(t.cg);
                        pe_accumulate(&d.tiles[t.tile].weights, &x[cr], &mut acc);
                    }
                    ctx.emit(t.tile, EventCategory::PeMac, 1);
                }
                if sum.has(SumCtrl::FROM_BUFFER) && sum.has(SumCtrl::POP) {
                    let q = t.queue.pop_front().ok_or_else(|| ctx.fault(t.tile, "pop from an empty buffer"))?;
                    ctx.rofm_delta(t.tile, -((t.lanes * PSUM_BITS / 8) as isize))?;
                    ctx.emit(t.tile, EventCategory::BufRead, 1);
                    add_into(&mut acc, &q);
                    ctx.emit(t.tile, EventCategory::Add, lanes * 4);
                } else if let Some(p) = &pp {
                    add_into(&mut acc, p);
                    ctx.emit(t.tile, EventCategory::Add, lanes * 4);
                }
                if sum.has(SumCtrl::PUSH) {
                    t.queue.push_back(acc);
                    ctx.emit(t.tile, EventCategory::BufWrite, 1);
                    ctx.rofm_delta(t.tile, (t.lanes * PSUM_BITS / 8) as isize)?;
                } else if t.block_final {
                    block = Some(acc);
                } else {
                    out_psum = Some(acc);
                }
            }
            // A read pairs the queued group sum with the arriving carry; in
            // the first slots there is no carry yet and the entry idles.
            if buffer == BufferOp::Read && pc.is_some() {
                let carry = pc.take().expect("checked");
                let mut q = t.queue.pop_front().ok_or_else(|| ctx.fault(t.tile, "buffer read from an empty queue"))?;
                ctx.rofm_delta(t.tile, -((t.lanes * PSUM_BITS / 8) as isize))?;
                ctx.emit(t.tile, EventCategory::BufRead, 1);
                add_into(&mut q, &carry);
                ctx.emit(t.tile, EventCategory::Add, lanes * 4);
                block = Some(q);
            } else if let Some(c) = pc.take() {
                out_carry = Some(c);
            }

            if j + 1 == n {
                if let Some(b) = block.take() {
                    self.output_stage(ctx, ci, c, b)?;
                }
            } else if let Some(b) = block.take() {
                out_carry = Some(b);
            }
            let t = &mut self.chains[ci].tiles[j];
            if tx.any() {
                let bits = (out_psum.is_some() as usize + out_carry.is_some() as usize) * t.lanes * PSUM_BITS;
                let f = flits(bits);
                ctx.emit(t.tile, EventCategory::HopTx, f);
                let succ = self.chains[ci].tiles[j + 1].tile;
                ctx.emit(succ, EventCategory::HopRx, f);
            } else if out_psum.is_some() || out_carry.is_some() {
                return Err(ctx.fault(t.tile, format!("sum for counter {c} has no transmit direction")));
            }
            let t = &mut self.chains[ci].tiles[j];
            t.psum = out_psum;
            t.carry = out_carry;
        }
        Ok(())
    }

    /// Executes the output-stage entry of the chain's last tile.
    fn output_stage(&mut self, ctx: &mut Ctx, ci: usize, c: usize, acc: Vec<i64>) -> Result<(), FabricError> {
        let d = ctx.d;
        let g = self.geom;
        let chain = &self.chains[ci];
        let tile = chain.tiles.last().expect("non-empty").tile;
        let sched = d.tiles[tile]
            .out_schedule
            .as_ref()
            .ok_or_else(|| ctx.fault(tile, "chain end has no output schedule"))?;
        let Instruction::MType { func, .. } = sched.fetch(c as u64)? else {
            // Not this replica's output.
            return Ok(());
        };
        let FuncCode::Act(p) = func else {
            return Err(ctx.fault(tile, format!("output entry {func:?} is not Act")));
        };
        let b = c
            .checked_sub(g.carry_delay(g.cg - 1))
            .and_then(|b| g.base_output(b))
            .ok_or_else(|| ctx.fault(tile, format!("Act at counter {c} has no output pixel")))?;
        let l = &d.net.layers()[self.layer];
        let act = if p & FuncCode::ACT_RELU != 0 {
            Activation::Relu
        } else {
            Activation::None
        };
        let shift = if p & FuncCode::ACT_SHIFT != 0 { l.requant_shift } else { 0 };
        let bits = d.net.precision.activation_bits;
        let range = g.output_range(chain.mg);
        if let Some(rec) = &mut self.acc {
            let at = g.out_shape.index(b.0, b.1, range.start);
            rec[at..at + acc.len()].copy_from_slice(&acc);
        }
        let v: Vec<i32> = acc.iter().map(|&a| requantize(a, shift, act, bits)).collect();
        ctx.emit(tile, EventCategory::Act, v.len() as u64 * 4);
        ctx.local(Port::Own(chain.station), b, Payload::Act(v));
        Ok(())
    }
}

fn add_into(acc: &mut [i64], v: &[i64]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
