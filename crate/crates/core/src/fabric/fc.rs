//! FC regions. Tile `(row, col)` fires once its input slice is complete;
//! partial sums run down each column and the last row applies the
//! activation.

use super::engine::{flits, Ctx, Net, Packet, Payload, Port};
use super::events::EventCategory;
use super::pe_accumulate;
use super::station::Station;
use crate::error::FabricError;
use crate::isa::{Dir, FuncCode, Instruction, SumCtrl};
use crate::mapper::{MappedDesign, Region, RegionKind};
use crate::netspec::{requantize, Activation};
use crate::tensor::FmapShape;

#[derive(Debug)]
struct FcTile {
    tile: usize,
    row: usize,
    pred_dir: Option<Dir>,
    succ: Option<usize>,
    station: Option<usize>,
    pe_at: Option<u64>,
    pe: Vec<i64>,
    pred: Option<Vec<i64>>,
    done: bool,
}

#[derive(Debug)]
pub(crate) struct FcRegion {
    layer: usize,
    entry: usize,
    in_shape: FmapShape,
    n_c: usize,
    cols: usize,
    x: Vec<i32>,
    filled: Vec<usize>,
    ready_at: Vec<Option<u64>>,
    tiles: Vec<FcTile>,
    /// Chip boundaries crossed when forwarding input along the region.
    crossings: u64,
}

impl FcRegion {
    pub(crate) fn new(d: &MappedDesign, ri: usize, stations: &[Station]) -> Self {
        let r = &d.regions[ri];
        let RegionKind::Fc { rows, cols } = r.kind else {
            unreachable!("FC region")
        };
        let l = &d.net.layers()[r.layer];
        let n_c = d.arch.cim_rows;
        let mut tiles = Vec::with_capacity(rows * cols);
        for col in 0..cols {
            for row in 0..rows {
                let idx = Region::fc_index(rows, row, col);
                let t = r.tiles[idx];
                let coord = d.tiles[t].coord;
                tiles.push(FcTile {
                    tile: t,
                    row,
                    pred_dir: (row > 0).then(|| coord.entry_dir(&d.tiles[r.tiles[idx - 1]].coord)),
                    succ: (row + 1 < rows).then(|| r.tiles[idx + 1]),
                    station: (row + 1 == rows).then(|| {
                        stations.iter().position(|s| s.is_merge(ri, (0, col))).expect("column stage exists")
                    }),
                    pe_at: None,
                    pe: Vec::new(),
                    pred: None,
                    done: false,
                });
            }
        }
        let crossings = r.tiles.windows(2).filter(|w| d.tiles[w[0]].coord.chip != d.tiles[w[1]].coord.chip).count() as u64;
        Self {
            layer: r.layer,
            entry: r.entry_tile(),
            in_shape: d.net.input_shape_of(r.layer),
            n_c,
            cols,
            x: vec![0; l.in_channels],
            filled: (0..rows).map(|_| 0).collect(),
            ready_at: vec![None; rows],
            tiles,
            crossings,
        }
    }

    fn row_len(&self, row: usize) -> usize {
        (self.x.len() - row * self.n_c).min(self.n_c)
    }

    pub(crate) fn deliver(&mut self, ctx: &mut Ctx, p: Packet) -> Result<(), FabricError> {
        let Payload::Act(v) = p.payload else {
            return Err(ctx.fault(self.entry, "partial sum on the activation input"));
        };
        let (r, c) = p.key;
        let s = self.in_shape;
        let start = (r * s.cols + c) * s.channels;
        if v.len() != s.channels || start + v.len() > self.x.len() {
            return Err(ctx.fault(self.entry, format!("input pixel {:?} does not fit the FC input", p.key)));
        }
        self.x[start..start + v.len()].copy_from_slice(&v);
        let (first, last) = (start / self.n_c, (start + v.len() - 1) / self.n_c);
        for row in first..=last {
            let lo = start.max(row * self.n_c);
            let hi = (start + v.len()).min((row + 1) * self.n_c);
            self.filled[row] += hi - lo;
            // Each column's tile in this row receives its part.
            let f = flits((hi - lo) * ctx.act_bits) * self.cols as u64;
            ctx.emit(self.entry, EventCategory::HopTx, f);
            ctx.emit(self.entry, EventCategory::HopRx, f);
            if self.filled[row] == self.row_len(row) {
                self.ready_at[row] = Some(ctx.now);
            }
        }
        if self.crossings > 0 {
            ctx.emit(self.entry, EventCategory::InterChipBit, (v.len() * ctx.act_bits) as u64 * self.crossings);
        }
        Ok(())
    }

    pub(crate) fn deliver_psum(&mut self, tile: usize, p: Packet) -> Result<(), FabricError> {
        let Payload::Psum(v) = p.payload else {
            unreachable!("FC links carry partial sums")
        };
        let t = self.tiles.iter_mut().find(|t| t.tile == tile).expect("tile of this region");
        t.pred = Some(v);
        Ok(())
    }

    pub(crate) fn step(&mut self, ctx: &mut Ctx) -> Result<(), FabricError> {
        let d = ctx.d;
        let now = ctx.now;
        for i in 0..self.tiles.len() {
            let t = &self.tiles[i];
            if t.done || (t.pe_at.is_none() && !self.ready_at[t.row].is_some_and(|r| r < now)) {
                continue;
            }
            let Instruction::CType { rx, sum, tx, .. } = d.tiles[t.tile].schedule.fetch(0)? else {
                return Err(ctx.fault(t.tile, "FC schedule entry is not C-type"));
            };
            match t.pe_at {
                None => {
                    // Accept stage happened at `ready_at`.
                    if !self.ready_at[t.row].is_some_and(|r| r < now) {
                        continue;
                    }
                    let tile = t.tile;
                    let w = &d.tiles[tile].weights;
                    let mut pe = vec![0i64; w.cols];
                    if rx.local() && sum.has(SumCtrl::ACCUMULATE) {
                        let start = t.row * self.n_c;
                        pe_accumulate(w, &self.x[start..start + w.rows], &mut pe);
                        ctx.emit(tile, EventCategory::PeMac, 1);
                    }
                    ctx.active(tile);
                    let t = &mut self.tiles[i];
                    t.pe = pe;
                    t.pe_at = Some(now);
                }
                Some(at) if at < now => {
                    let needs_pred = t.pred_dir.is_some_and(|dir| rx.accepts(dir));
                    if needs_pred && t.pred.is_none() {
                        continue;
                    }
                    let tile = t.tile;
                    ctx.emit(tile, EventCategory::RifmCtrl, 1);
                    ctx.emit(tile, EventCategory::RofmCtrl, 1);
                    let t = &mut self.tiles[i];
                    let mut acc = std::mem::take(&mut t.pe);
                    if let Some(p) = t.pred.take() {
                        for (a, b) in acc.iter_mut().zip(p) {
                            *a += b;
                        }
                        ctx.emit(tile, EventCategory::Add, acc.len() as u64 * 4);
                    }
                    t.done = true;
                    if tx.any() {
                        let succ = t.succ.ok_or_else(|| ctx.fault(tile, "transmit past the column end"))?;
                        ctx.send(Some(tile), Some(succ), Net::Rofm, Port::FcPsum(succ), (0, 0), Payload::Psum(acc))?;
                    } else {
                        let station = t.station.ok_or_else(|| ctx.fault(tile, "column sum has nowhere to go"))?;
                        self.output_stage(ctx, tile, station, acc)?;
                    }
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn output_stage(&mut self, ctx: &mut Ctx, tile: usize, station: usize, acc: Vec<i64>) -> Result<(), FabricError> {
        let d = ctx.d;
        let sched = d.tiles[tile]
            .out_schedule
            .as_ref()
            .ok_or_else(|| ctx.fault(tile, "column end has no output schedule"))?;
        let Instruction::MType { func: FuncCode::Act(p), .. } = sched.fetch(0)? else {
            return Err(ctx.fault(tile, "FC output entry is not Act"));
        };
        let l = &d.net.layers()[self.layer];
        let act = if p & FuncCode::ACT_RELU != 0 {
            Activation::Relu
        } else {
            Activation::None
        };
        let shift = if p & FuncCode::ACT_SHIFT != 0 { l.requant_shift } else { 0 };
        let bits = d.net.precision.activation_bits;
        let v: Vec<i32> = acc.iter().map(|&a| requantize(a, shift, act, bits)).collect();
        ctx.emit(tile, EventCategory::Act, v.len() as u64 * 4);
        ctx.local(Port::Own(station), (0, 0), Payload::Act(v));
        Ok(())
    }
}
