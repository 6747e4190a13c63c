//! Untimed evaluation of a compiled design.
//!
//! Every value is computed from what the compiler produced: each tile's
//! weight block and role, the decoded accumulate bits of its chain
//! schedule, and the decoded M-type entries of its output and post-op
//! schedules. Agreement with the golden model checks the compiler
//! without involving the cycle simulator.

use super::schedule::pool_phase;
use super::{ConvGeometry, MappedDesign, Region, RegionKind, TileConfig};
use crate::error::MapError;
use crate::isa::{FuncCode, Instruction, ScheduleTable, SumCtrl};
use crate::netspec::{avg_pool_multiplier, requantize, AVG_POOL_SHIFT};
use crate::netspec::{Activation, LayerKind};
use crate::tensor::{saturate, FmapShape, Tensor};

fn fetch(s: &ScheduleTable, c: usize) -> Result<Instruction, MapError> {
    Ok(s.fetch(c as u64)?)
}

fn accumulates(t: &TileConfig, c: usize) -> Result<bool, MapError> {
    Ok(match fetch(&t.schedule, c)? {
        Instruction::CType { sum, .. } => sum.has(SumCtrl::ACCUMULATE),
        Instruction::MType { .. } => false,
    })
}

/// Activation and shift selected by an output-stage entry, if it is one.
fn output_act(s: &ScheduleTable, c: usize) -> Result<Option<(Activation, bool)>, MapError> {
    Ok(match fetch(s, c)? {
        Instruction::MType {
            func: FuncCode::Act(p), ..
        } => {
            let act = if p & FuncCode::ACT_RELU != 0 {
                Activation::Relu
            } else {
                Activation::None
            };
            Some((act, p & FuncCode::ACT_SHIFT != 0))
        }
        _ => None,
    })
}

fn manifest_err(msg: String) -> MapError {
    MapError::Manifest(msg)
}

fn eval_conv(d: &MappedDesign, region: &Region, geom: &ConvGeometry, replicas: usize, x: &Tensor) -> Result<Tensor, MapError> {
    let l = &d.net.layers()[region.layer];
    let bits = d.net.precision.activation_bits;
    let o = geom.out_shape;
    let s = geom.in_shape;
    let k = geom.kernel;
    let mut out = vec![0i32; o.elements()];
    let tile = |rep, mg, kr, cg, kc| &d.tiles[region.tiles[Region::conv_index(geom, rep, mg, kr, cg, kc)]];
    let out_delay = geom.carry_delay(geom.cg - 1);
    for or in 0..o.rows {
        for oc in 0..o.cols {
            let b = geom.base(or, oc);
            for mg in 0..geom.mg {
                // The owning replica is the one whose output stage fires.
                let mut owner = None;
                for rep in 0..replicas {
                    let last = tile(rep, mg, k - 1, geom.cg - 1, k - 1);
                    let sched = last
                        .out_schedule
                        .as_ref()
                        .ok_or_else(|| manifest_err(format!("tile {} lacks an output schedule", last.coord)))?;
                    if let Some(a) = output_act(sched, b + out_delay)? {
                        if owner.is_some() {
                            return Err(manifest_err(format!("layer {}: two replicas own base {b}", region.layer)));
                        }
                        owner = Some((rep, a));
                    }
                }
                let Some((rep, (act, shift))) = owner else {
                    if replicas == 1 {
                        return Err(manifest_err(format!("layer {}: base {b} is never emitted", region.layer)));
                    }
                    continue;
                };
                let range = geom.output_range(mg);
                let mut acc = vec![0i64; range.len()];
                for kr in 0..k {
                    for cg in 0..geom.cg {
                        for kc in 0..k {
                            let t = tile(rep, mg, kr, cg, kc);
                            if !accumulates(t, b)? {
                                continue;
                            }
                            let Some((r, c)) = geom.slot_pixel(b + kr * geom.lrow + kc) else {
                                continue;
                            };
                            let cr = geom.channel_range(cg);
                            let px = &x.data()[s.index(r, c, cr.start)..s.index(r, c, cr.start) + cr.len()];
                            t.weights.mvm_into(px, &mut acc);
                        }
                    }
                }
                let sh = if shift { l.requant_shift } else { 0 };
                for (i, &a) in acc.iter().enumerate() {
                    out[o.index(or, oc, range.start + i)] = requantize(a, sh, act, bits);
                }
            }
        }
    }
    Ok(Tensor::fmap(o, out).expect("shape is consistent"))
}

fn eval_fc(d: &MappedDesign, region: &Region, rows: usize, cols: usize, x: &Tensor) -> Result<Tensor, MapError> {
    let l = &d.net.layers()[region.layer];
    let bits = d.net.precision.activation_bits;
    let n_c = d.arch.cim_rows;
    let mut out = Vec::with_capacity(l.out_channels);
    for col in 0..cols {
        let last = &d.tiles[region.tiles[Region::fc_index(rows, rows - 1, col)]];
        let (act, shift) = last
            .out_schedule
            .as_ref()
            .map(|s| output_act(s, 0))
            .transpose()?
            .flatten()
            .ok_or_else(|| manifest_err(format!("tile {} lacks an Act entry", last.coord)))?;
        let mut acc = vec![0i64; last.weights.cols];
        for row in 0..rows {
            let t = &d.tiles[region.tiles[Region::fc_index(rows, row, col)]];
            if accumulates(t, 0)? {
                let start = row * n_c;
                t.weights.mvm_into(&x.data()[start..start + t.weights.rows], &mut acc);
            }
        }
        let sh = if shift { l.requant_shift } else { 0 };
        out.extend(acc.iter().map(|&a| requantize(a, sh, act, bits)));
    }
    Ok(Tensor::new(vec![1, 1, l.out_channels], out).expect("shape is consistent"))
}

fn window_func(s: &ScheduleTable, phase: usize) -> Result<Option<(FuncCode, u8)>, MapError> {
    Ok(match fetch(s, phase)? {
        Instruction::MType { func, .. } => Some((func, func.param())),
        _ => None,
    })
}

/// Row-buffer pooling driven by the decoded window entries.
fn eval_pool(d: &MappedDesign, layer: usize, sched: &ScheduleTable, x: &Tensor) -> Result<Tensor, MapError> {
    let l = &d.net.layers()[layer];
    let sp = l.pool_stride;
    let s = x.fmap_shape();
    let o = FmapShape::new(s.rows / sp, s.cols / sp, s.channels);
    let mul = avg_pool_multiplier(sp);
    let bits = d.net.precision.activation_bits;
    let mut out = vec![0i32; o.elements()];
    let mut row_buf = vec![None::<Vec<i64>>; o.cols];
    for r in 0..o.rows * sp {
        for c in 0..o.cols * sp {
            let Some((func, p)) = window_func(sched, pool_phase(r, c, sp))? else {
                continue;
            };
            let slot = &mut row_buf[c / sp];
            let px = &x.data()[s.index(r, c, 0)..s.index(r, c, 0) + s.channels];
            match slot {
                None => *slot = Some(px.iter().map(|&v| v as i64).collect()),
                Some(acc) => {
                    for (a, &v) in acc.iter_mut().zip(px) {
                        match func {
                            FuncCode::Mul(_) => *a += v as i64,
                            _ => *a = (*a).max(v as i64),
                        }
                    }
                }
            }
            if p & FuncCode::WINDOW_EMIT != 0 {
                let acc = slot.take().expect("window opened");
                for (ch, a) in acc.into_iter().enumerate() {
                    let v = match func {
                        FuncCode::Mul(_) => (a * mul) >> AVG_POOL_SHIFT,
                        _ => a,
                    };
                    out[o.index(r / sp, c / sp, ch)] = requantize(v, 0, l.activation, bits);
                }
            }
        }
    }
    Ok(Tensor::fmap(o, out).expect("shape is consistent"))
}

/// In-transit compare across the four replica output tiles.
fn eval_duplicated_pool(d: &MappedDesign, region: &Region, geom: &ConvGeometry, layer: usize, x: &Tensor) -> Result<Tensor, MapError> {
    let l = &d.net.layers()[layer];
    let bits = d.net.precision.activation_bits;
    let s = x.fmap_shape();
    let o = FmapShape::new(s.rows / 2, s.cols / 2, s.channels);
    let k = geom.kernel;
    let mut out = vec![0i32; o.elements()];
    let scheds: Vec<&ScheduleTable> = (0..4)
        .map(|rep| {
            let t = &d.tiles[region.tiles[Region::conv_index(geom, rep, geom.mg - 1, k - 1, geom.cg - 1, k - 1)]];
            t.post.first().map(|p| &p.schedule).ok_or_else(|| manifest_err(format!("replica {rep} lacks a pool stage")))
        })
        .collect::<Result<_, _>>()?;
    for pr in 0..o.rows {
        for pc in 0..o.cols {
            let mut acc: Option<Vec<i64>> = None;
            let mut emitted = false;
            for (rep, sched) in scheds.iter().enumerate() {
                let (r, c) = (2 * pr + rep / 2, 2 * pc + rep % 2);
                let Some((func, p)) = window_func(sched, pool_phase(r, c, 2))? else {
                    return Err(manifest_err(format!("replica {rep} skips window position")));
                };
                let px = &x.data()[s.index(r, c, 0)..s.index(r, c, 0) + s.channels];
                acc = Some(match (func, acc) {
                    (FuncCode::Bp(_), _) | (_, None) => px.iter().map(|&v| v as i64).collect(),
                    (_, Some(mut a)) => {
                        for (a, &v) in a.iter_mut().zip(px) {
                            *a = (*a).max(v as i64);
                        }
                        a
                    }
                });
                emitted |= p & FuncCode::WINDOW_EMIT != 0;
            }
            if !emitted {
                return Err(manifest_err("duplicated pool never emits".into()));
            }
            for (ch, a) in acc.expect("four replicas").into_iter().enumerate() {
                out[o.index(pr, pc, ch)] = requantize(a, 0, l.activation, bits);
            }
        }
    }
    Ok(Tensor::fmap(o, out).expect("shape is consistent"))
}

/// Evaluates the design and returns every layer's output.
pub fn symbolic_trace(d: &MappedDesign, input: &Tensor) -> Result<Vec<Tensor>, MapError> {
    let net = &d.net;
    if input.fmap_shape() != net.input_shape || input.dims().len() != 3 {
        return Err(manifest_err(format!("input shape {:?} does not match {}", input.dims(), net.input_shape)));
    }
    let bits = net.precision.activation_bits;
    let mut outs: Vec<Tensor> = Vec::with_capacity(net.layers().len());
    for (i, l) in net.layers().iter().enumerate() {
        let x = match net.input_index(i) {
            Some(s) => &outs[s],
            None => input,
        };
        let src = d.sources[i];
        let region = &d.regions[src.region];
        let y = match (l.kind, region.kind) {
            (LayerKind::Conv, RegionKind::Conv { geom, replicas }) => eval_conv(d, region, &geom, replicas, x)?,
            (LayerKind::Fc, RegionKind::Fc { rows, cols }) => {
                let flat = x.clone().reshaped(vec![x.len()]).expect("length preserved");
                eval_fc(d, region, rows, cols, &flat)?
            }
            (LayerKind::MaxPool | LayerKind::AvgPool, RegionKind::Conv { geom, .. }) if region.duplicated_pool == Some(i) => {
                eval_duplicated_pool(d, region, &geom, i, x)?
            }
            (LayerKind::MaxPool | LayerKind::AvgPool, _) => {
                let out_tile = &d.tiles[region.output_tile()];
                let op = out_tile
                    .post
                    .iter()
                    .find(|p| p.layer == i)
                    .ok_or_else(|| manifest_err(format!("layer {i} has no post-op stage")))?;
                eval_pool(d, i, &op.schedule, x)?
            }
            (LayerKind::ResidualAdd, _) => {
                let out_tile = &d.tiles[region.output_tile()];
                let op = out_tile
                    .post
                    .iter()
                    .find(|p| p.layer == i)
                    .ok_or_else(|| manifest_err(format!("layer {i} has no post-op stage")))?;
                let adds = matches!(
                    fetch(&op.schedule, 0)?,
                    Instruction::MType { func: FuncCode::Add(p), .. } if p & FuncCode::ADD_RESIDUAL != 0
                );
                if !adds {
                    return Err(manifest_err(format!("layer {i} post-op is not a residual add")));
                }
                let skip = &outs[l.skip_source.expect("validated")];
                let data = x
                    .data()
                    .iter()
                    .zip(skip.data())
                    .map(|(&a, &b)| requantize(saturate(a as i64 + b as i64, bits) as i64, 0, l.activation, bits))
                    .collect();
                Tensor::new(x.dims().to_vec(), data).expect("same dims")
            }
            (kind, _) => {
                return Err(manifest_err(format!("layer {i} ({}) placed in a mismatched region", kind.as_str())));
            }
        };
        outs.push(y);
    }
    Ok(outs)
}

pub fn symbolic_inference(d: &MappedDesign, input: &Tensor) -> Result<Tensor, MapError> {
    Ok(symbolic_trace(d, input)?.pop().expect("at least one layer"))
}

