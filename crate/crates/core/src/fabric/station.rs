//! Output-side stages: slice merging, in-transit pooling, row-buffer
//! pooling and residual addition. Each stage lives on one tile's ROFM and
//! handles at most one pixel per cycle.

use std::collections::VecDeque;

use super::engine::{Ctx, Net, Packet, Payload, Port};
use super::events::EventCategory;
use crate::error::FabricError;
use crate::isa::{FuncCode, Instruction, ScheduleTable};
use crate::mapper::schedule::pool_phase;
use crate::mapper::{MappedDesign, Region, RegionKind, StreamTarget};
use crate::netspec::{avg_pool_multiplier, requantize, LayerKind, AVG_POOL_SHIFT};
use crate::tensor::{saturate, FmapShape, Tensor};

type Key = (usize, usize);

#[derive(Debug)]
pub(crate) enum StationKind {
    /// Prepends the upstream slices to this tile's own slice.
    Merge { region: usize, group: (usize, usize), has_up: bool },
    /// One replica's step of the in-transit 2x2 max pool.
    DupPool { layer: usize, out: FmapShape },
    Pool {
        layer: usize,
        out: FmapShape,
        row_buf: Vec<Option<Vec<i64>>>,
        avg: bool,
    },
    Residual { layer: usize },
}

#[derive(Debug)]
pub(crate) struct Station {
    pub tile: usize,
    pub kind: StationKind,
    own: VecDeque<(Key, Vec<i32>)>,
    up: VecDeque<(Key, Vec<i32>)>,
    next: Option<usize>,
    next_tile: Option<usize>,
    stage_layer: Option<usize>,
    targets: Vec<(Port, Option<usize>, Net)>,
}

impl Station {
    fn new(tile: usize, kind: StationKind) -> Self {
        Self {
            tile,
            kind,
            own: VecDeque::new(),
            up: VecDeque::new(),
            next: None,
            next_tile: None,
            stage_layer: None,
            targets: Vec::new(),
        }
    }

    pub(crate) fn is_merge(&self, region: usize, group: (usize, usize)) -> bool {
        matches!(self.kind, StationKind::Merge { region: r, group: g, .. } if r == region && g == group)
    }

    pub(crate) fn deliver(&mut self, ctx: &mut Ctx, p: Packet) -> Result<(), FabricError> {
        let Payload::Act(v) = p.payload else {
            return Err(ctx.fault(self.tile, "partial sum delivered to an output stage"));
        };
        ctx.rofm_delta(self.tile, v.len() as isize)?;
        match p.port {
            Port::Own(_) => self.own.push_back((p.key, v)),
            _ => self.up.push_back((p.key, v)),
        }
        Ok(())
    }

    fn pop_own(&mut self, ctx: &mut Ctx) -> Result<(Key, Vec<i32>), FabricError> {
        let it = self.own.pop_front().expect("checked non-empty");
        ctx.rofm_delta(self.tile, -(it.1.len() as isize))?;
        Ok(it)
    }

    fn pop_up(&mut self, ctx: &mut Ctx, key: Key) -> Result<Vec<i32>, FabricError> {
        let (k, v) = self.up.pop_front().expect("checked non-empty");
        if k != key {
            return Err(ctx.fault(self.tile, format!("operands for {key:?} and {k:?} met")));
        }
        ctx.rofm_delta(self.tile, -(v.len() as isize))?;
        Ok(v)
    }

    fn table<'d>(&self, d: &'d MappedDesign, layer: usize) -> &'d ScheduleTable {
        &d.tiles[self.tile]
            .post
            .iter()
            .find(|p| p.layer == layer)
            .expect("stations are built from post-ops")
            .schedule
    }

    pub(crate) fn step(&mut self, ctx: &mut Ctx) -> Result<(), FabricError> {
        let Some(&(key, _)) = self.own.front() else {
            return Ok(());
        };
        let d = ctx.d;
        let bits = d.net.precision.activation_bits;
        let tile = self.tile;
        let needs_up = match &self.kind {
            StationKind::Merge { has_up, .. } => *has_up,
            StationKind::Residual { .. } => true,
            StationKind::DupPool { layer, out } => {
                let (r, c) = key;
                if r / 2 < out.rows && c / 2 < out.cols {
                    match self.table(d, *layer).fetch(pool_phase(r, c, 2) as u64)? {
                        Instruction::MType { func: FuncCode::Cmp(_), .. } => true,
                        Instruction::MType { func: FuncCode::Bp(_), .. } => false,
                        other => return Err(ctx.fault(tile, format!("unexpected {other} in pool stage"))),
                    }
                } else {
                    false
                }
            }
            StationKind::Pool { .. } => false,
        };
        if needs_up && self.up.is_empty() {
            return Ok(());
        }
        let (key, own) = self.pop_own(ctx)?;
        ctx.emit(tile, EventCategory::RofmCtrl, 1);
        let lanes = own.len() as u64;
        let out: Option<(Key, Vec<i32>)> = match &mut self.kind {
            StationKind::Merge { has_up, .. } => {
                if *has_up {
                    let mut v = self.up.pop_front().expect("checked");
                    if v.0 != key {
                        return Err(ctx.fault(tile, format!("slices of {key:?} and {:?} met", v.0)));
                    }
                    ctx.rofm_delta(tile, -(v.1.len() as isize))?;
                    v.1.extend_from_slice(&own);
                    Some((key, v.1))
                } else {
                    Some((key, own))
                }
            }
            StationKind::DupPool { layer, out } => {
                let (r, c) = key;
                let (layer, out) = (*layer, *out);
                if r / 2 >= out.rows || c / 2 >= out.cols {
                    None
                } else {
                    ctx.emit(tile, EventCategory::SchedFetch, 1);
                    let w = (r / 2, c / 2);
                    let instr = self.table(d, layer).fetch(pool_phase(r, c, 2) as u64)?;
                    let Instruction::MType { func, .. } = instr else { unreachable!() };
                    let merged = match func {
                        FuncCode::Cmp(_) => {
                            let up = self.pop_up(ctx, w)?;
                            ctx.emit(tile, EventCategory::Cmp, lanes);
                            up.iter().zip(&own).map(|(&a, &b)| a.max(b)).collect()
                        }
                        _ => own,
                    };
                    if func.param() & FuncCode::WINDOW_EMIT != 0 {
                        let act = d.net.layers()[layer].activation;
                        let v = merged.iter().map(|&a| requantize(a as i64, 0, act, bits)).collect();
                        Some((w, v))
                    } else {
                        Some((w, merged))
                    }
                }
            }
            StationKind::Pool { layer, out, row_buf, avg } => {
                let l = &d.net.layers()[*layer];
                let sp = l.pool_stride;
                let (r, c) = key;
                if r >= out.rows * sp || c >= out.cols * sp {
                    None
                } else {
                    ctx.emit(tile, EventCategory::SchedFetch, 1);
                    let sched = &d.tiles[tile].post.iter().find(|p| p.layer == *layer).expect("built").schedule;
                    let Instruction::MType { func, .. } = sched.fetch(pool_phase(r, c, sp) as u64)? else {
                        return Err(ctx.fault(tile, "pool entry is not M-type"));
                    };
                    let lane_bytes = if *avg { 2 } else { 1 };
                    let slot = &mut row_buf[c / sp];
                    match slot {
                        None => {
                            *slot = Some(own.iter().map(|&v| v as i64).collect());
                            ctx.emit(tile, EventCategory::BufWrite, 1);
                            ctx.rofm_delta(tile, (own.len() * lane_bytes) as isize)?;
                        }
                        Some(acc) => {
                            for (a, &v) in acc.iter_mut().zip(&own) {
                                match func {
                                    FuncCode::Mul(_) => *a += v as i64,
                                    _ => *a = (*a).max(v as i64),
                                }
                            }
                            ctx.emit(tile, EventCategory::BufRead, 1);
                            ctx.emit(tile, EventCategory::BufWrite, 1);
                            let cat = if *avg { EventCategory::Add } else { EventCategory::Cmp };
                            ctx.emit(tile, cat, lanes * if *avg { 2 } else { 1 });
                        }
                    }
                    if func.param() & FuncCode::WINDOW_EMIT != 0 {
                        let acc = slot.take().expect("window opened");
                        ctx.emit(tile, EventCategory::BufRead, 1);
                        ctx.rofm_delta(tile, -((acc.len() * lane_bytes) as isize))?;
                        let mul = avg_pool_multiplier(sp);
                        let v = acc
                            .into_iter()
                            .map(|a| {
                                let a = if *avg { (a * mul) >> AVG_POOL_SHIFT } else { a };
                                requantize(a, 0, l.activation, bits)
                            })
                            .collect();
                        if *avg {
                            ctx.emit(tile, EventCategory::Mul, lanes * 2);
                        }
                        Some((key_div(key, sp), v))
                    } else {
                        None
                    }
                }
            }
            StationKind::Residual { layer } => {
                let layer = *layer;
                ctx.emit(tile, EventCategory::SchedFetch, 1);
                let adds = matches!(
                    self.table(d, layer).fetch(0)?,
                    Instruction::MType { func: FuncCode::Add(p), .. } if p & FuncCode::ADD_RESIDUAL != 0
                );
                if !adds {
                    return Err(ctx.fault(tile, "residual stage is not an Add"));
                }
                let skip = self.pop_up(ctx, key)?;
                ctx.emit(tile, EventCategory::BufRead, 1);
                ctx.emit(tile, EventCategory::Add, lanes);
                let act = d.net.layers()[layer].activation;
                let v = own
                    .iter()
                    .zip(&skip)
                    .map(|(&a, &b)| requantize(saturate(a as i64 + b as i64, bits) as i64, 0, act, bits))
                    .collect();
                Some((key, v))
            }
        };
        if let Some((k, v)) = out {
            self.forward(ctx, k, v)?;
        }
        Ok(())
    }

    fn forward(&mut self, ctx: &mut Ctx, key: Key, v: Vec<i32>) -> Result<(), FabricError> {
        // One packet per destination tile; it fans out to every port there.
        let mut sent: Vec<(usize, u64)> = Vec::new();
        for &(port, to, net) in &self.targets {
            let payload = Payload::Act(v.clone());
            match to.and_then(|t| sent.iter().find(|s| s.0 == t)) {
                Some(&(_, arrival)) => ctx.copy_at(arrival, port, key, payload),
                None => {
                    let arrival = ctx.send(Some(self.tile), to, net, port, key, payload)?;
                    if let Some(t) = to {
                        sent.push((t, arrival));
                    }
                }
            }
        }
        if let (Some(next), Some(nt)) = (self.next, self.next_tile) {
            if nt == self.tile {
                ctx.local(Port::Own(next), key, Payload::Act(v));
            } else {
                // Pooling replicas pass activations; slice merges use the
                // ROFM output links.
                let net = match self.kind {
                    StationKind::DupPool { .. } => Net::Rifm,
                    _ => Net::Rofm,
                };
                ctx.send(Some(self.tile), Some(nt), net, Port::Up(next), key, Payload::Act(v))?;
            }
        }
        Ok(())
    }
}

fn key_div((r, c): Key, s: usize) -> Key {
    (r / s, c / s)
}

/// Builds every region's output stages and wires them to each other and
/// to their stream targets.
pub(crate) fn build_stations(d: &MappedDesign) -> Result<Vec<Station>, FabricError> {
    let net = &d.net;
    let mut st: Vec<Station> = Vec::new();
    let link = |st: &mut Vec<Station>, from: usize, to: usize| {
        st[from].next = Some(to);
        st[from].next_tile = Some(st[to].tile);
    };
    for (ri, r) in d.regions.iter().enumerate() {
        let mut last;
        match r.kind {
            RegionKind::Conv { geom, replicas } => {
                let k = geom.kernel;
                let mut finals = Vec::new();
                for rep in 0..replicas {
                    let mut prev: Option<usize> = None;
                    for mg in 0..geom.mg {
                        let tile = r.tiles[Region::conv_index(&geom, rep, mg, k - 1, geom.cg - 1, k - 1)];
                        let i = st.len();
                        st.push(Station::new(
                            tile,
                            StationKind::Merge {
                                region: ri,
                                group: (rep, mg),
                                has_up: mg > 0,
                            },
                        ));
                        if let Some(p) = prev {
                            link(&mut st, p, i);
                        }
                        prev = Some(i);
                    }
                    finals.push(prev.expect("mg >= 1"));
                }
                match r.duplicated_pool {
                    Some(pool) => {
                        let out = net.output_shape(pool);
                        let mut prev: Option<usize> = None;
                        for &f in &finals {
                            let i = st.len();
                            st.push(Station::new(st[f].tile, StationKind::DupPool { layer: pool, out }));
                            link(&mut st, f, i);
                            if let Some(p) = prev {
                                link(&mut st, p, i);
                            }
                            prev = Some(i);
                        }
                        last = prev.expect("four replicas");
                        st[last].stage_layer = Some(pool);
                    }
                    None => {
                        last = finals[0];
                        st[last].stage_layer = Some(r.layer);
                    }
                }
            }
            RegionKind::Fc { rows, cols } => {
                let mut prev: Option<usize> = None;
                for col in 0..cols {
                    let i = st.len();
                    st.push(Station::new(
                        r.tiles[Region::fc_index(rows, rows - 1, col)],
                        StationKind::Merge {
                            region: ri,
                            group: (0, col),
                            has_up: col > 0,
                        },
                    ));
                    if let Some(p) = prev {
                        link(&mut st, p, i);
                    }
                    prev = Some(i);
                }
                last = prev.expect("cols >= 1");
                st[last].stage_layer = Some(r.layer);
            }
        }
        let out_tile = r.output_tile();
        for &j in &r.post_layers {
            if Some(j) == r.duplicated_pool {
                continue;
            }
            let l = &net.layers()[j];
            let kind = match l.kind {
                LayerKind::ResidualAdd => StationKind::Residual { layer: j },
                LayerKind::MaxPool | LayerKind::AvgPool => {
                    let out = net.output_shape(j);
                    StationKind::Pool {
                        layer: j,
                        out,
                        row_buf: vec![None; out.cols],
                        avg: l.kind == LayerKind::AvgPool,
                    }
                }
                _ => unreachable!("weight layers have their own region"),
            };
            let i = st.len();
            st.push(Station::new(out_tile, kind));
            st[i].stage_layer = Some(j);
            link(&mut st, last, i);
            last = i;
        }
    }
    // Stream targets, now that every residual stage exists.
    for i in 0..st.len() {
        let Some(layer) = st[i].stage_layer else { continue };
        let mut targets = Vec::new();
        for t in d.stream_targets(layer) {
            targets.push(match t {
                StreamTarget::Entry { region } => (Port::Entry(region), Some(d.regions[region].entry_tile()), Net::Rifm),
                StreamTarget::Skip { region, layer } => {
                    let res = st
                        .iter()
                        .position(|s| matches!(s.kind, StationKind::Residual { layer: l } if l == layer))
                        .expect("residual stage exists");
                    (Port::Up(res), Some(d.regions[region].output_tile()), Net::Rifm)
                }
                StreamTarget::Output => (Port::Output, None, Net::Rifm),
            });
        }
        st[i].targets = targets;
    }
    Ok(st)
}

/// Network output port.
pub(crate) struct Collector {
    shape: FmapShape,
    data: Vec<i32>,
    seen: Vec<bool>,
    remaining: usize,
    pub last_arrival: u64,
}

impl Collector {
    pub(crate) fn new(shape: FmapShape) -> Self {
        Self {
            shape,
            data: vec![0; shape.elements()],
            seen: vec![false; shape.pixels()],
            remaining: shape.pixels(),
            last_arrival: 0,
        }
    }

    pub(crate) fn deliver(&mut self, now: u64, p: Packet) -> Result<(), FabricError> {
        let Payload::Act(v) = p.payload else {
            unreachable!("outputs are activations")
        };
        let (r, c) = p.key;
        let s = self.shape;
        if r >= s.rows || c >= s.cols || v.len() != s.channels {
            return Err(FabricError::Shape(crate::error::ShapeError::Mismatch {
                expected: format!("pixel of {s}"),
                actual: format!("{} values at {:?}", v.len(), p.key),
            }));
        }
        let px = r * s.cols + c;
        if !self.seen[px] {
            self.seen[px] = true;
            self.remaining -= 1;
        }
        let at = s.index(r, c, 0);
        self.data[at..at + s.channels].copy_from_slice(&v);
        self.last_arrival = now;
        Ok(())
    }

    pub(crate) fn is_complete(&self) -> bool {
        self.remaining == 0
    }

    pub(crate) fn missing(&self) -> (usize, Vec<(usize, usize, usize)>) {
        let s = self.shape;
        let first = (0..s.pixels())
            .filter(|&p| !self.seen[p])
            .take(8)
            .map(|p| (p / s.cols, p % s.cols, 0))
            .collect();
        (self.remaining * s.channels, first)
    }

    pub(crate) fn into_tensor(self) -> Result<Tensor, FabricError> {
        Ok(Tensor::fmap(self.shape, self.data)?)
    }
}
