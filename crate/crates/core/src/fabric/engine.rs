use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::ConvRegion;
use super::events::{EventCategory, EventCounts, FabricEvent};
use super::fc::FcRegion;
use super::station::{build_stations, Collector, Station};
use super::{FabricOptions, Occupancy, RunResult, FLIT_BITS, PSUM_BITS};
use crate::error::FabricError;
use crate::isa::Dir;
use crate::mapper::{MappedDesign, RegionKind, TileCoord};
use crate::tensor::Tensor;

/// Destination of a calendar packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Port {
    /// Main input of a region.
    Entry(usize),
    /// Primary queue of a station.
    Own(usize),
    /// Upstream or shortcut queue of a station.
    Up(usize),
    /// Partial-sum input of an FC tile, by global tile index.
    FcPsum(usize),
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Net {
    /// Activation network between RIFMs.
    Rifm,
    /// Partial-sum and output network between ROFMs.
    Rofm,
}

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Act(Vec<i32>),
    Psum(Vec<i64>),
}

impl Payload {
    pub(crate) fn bits(&self, act_bits: usize) -> usize {
        match self {
            Payload::Act(v) => v.len() * act_bits,
            Payload::Psum(v) => v.len() * PSUM_BITS,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Packet {
    pub port: Port,
    pub key: (usize, usize),
    pub payload: Payload,
}

pub(crate) fn flits(bits: usize) -> u64 {
    bits.div_ceil(FLIT_BITS) as u64
}

/// Shared per-run state handed to every component.
pub(crate) struct Ctx<'a> {
    pub d: &'a MappedDesign,
    pub now: u64,
    pub act_bits: usize,
    calendar: BTreeMap<u64, Vec<Packet>>,
    ports: HashSet<(u64, usize, Net, Dir)>,
    counts: EventCounts,
    trace: Option<Vec<FabricEvent>>,
    rofm: Vec<usize>,
    over: Vec<bool>,
    pub occ: Occupancy,
    strict: bool,
}

impl<'a> Ctx<'a> {
    pub(crate) fn coord(&self, tile: usize) -> TileCoord {
        self.d.tiles[tile].coord
    }

    pub(crate) fn emit_at(&mut self, cycle: u64, coord: TileCoord, category: EventCategory, count: u64) {
        if count == 0 {
            return;
        }
        self.counts.add(coord.chip, category, count);
        if let Some(t) = &mut self.trace {
            t.push(FabricEvent {
                cycle,
                tile: coord,
                category,
                count,
            });
        }
    }

    pub(crate) fn emit(&mut self, tile: usize, category: EventCategory, count: u64) {
        let c = self.coord(tile);
        self.emit_at(self.now, c, category, count);
    }

    /// One active tile-cycle: a schedule fetch plus both control units.
    pub(crate) fn active(&mut self, tile: usize) {
        self.emit(tile, EventCategory::SchedFetch, 1);
        self.emit(tile, EventCategory::RifmCtrl, 1);
        self.emit(tile, EventCategory::RofmCtrl, 1);
    }

    /// Hands a packet to the next stage of the same tile.
    pub(crate) fn local(&mut self, port: Port, key: (usize, usize), payload: Payload) {
        self.calendar.entry(self.now + 1).or_default().push(Packet { port, key, payload });
    }

    /// Sends a packet over the mesh. `from == None` is the host input port
    /// next to tile (0, 0) of chip 0; `to == None` is the output port.
    pub(crate) fn send(
        &mut self,
        from: Option<usize>,
        to: Option<usize>,
        net: Net,
        port: Port,
        key: (usize, usize),
        payload: Payload,
    ) -> Result<u64, FabricError> {
        let bits = payload.bits(self.act_bits);
        let f = flits(bits);
        let (hops, off_chip, tx_tile, rx_tile) = match (from, to) {
            (Some(a), Some(b)) => {
                let (ca, cb) = (self.coord(a), self.coord(b));
                (ca.hops(&cb), ca.chip != cb.chip, ca, cb)
            }
            (None, Some(b)) => {
                let cb = self.coord(b);
                (cb.x + cb.y + 1, true, cb, cb)
            }
            (Some(a), None) => {
                let ca = self.coord(a);
                (ca.x + ca.y + 1, true, ca, ca)
            }
            (None, None) => unreachable!("packets have an endpoint"),
        };
        let hops = hops.max(1) as u64;
        let arrival = self.now + hops;
        let mesh_hops = if off_chip { hops - 1 } else { hops };
        let now = self.now;
        self.emit_at(now, tx_tile, EventCategory::HopTx, f * mesh_hops);
        self.emit_at(arrival, rx_tile, EventCategory::HopRx, f * mesh_hops);
        if off_chip {
            self.emit_at(now, tx_tile, EventCategory::InterChipBit, bits as u64);
        }
        if let Some(b) = to {
            let cb = self.coord(b);
            let dir = match from {
                Some(a) => cb.entry_dir(&self.coord(a)),
                None => Dir::West,
            };
            if !self.ports.insert((arrival, b, net, dir)) {
                return Err(FabricError::Contention {
                    cycle: arrival,
                    x: cb.x,
                    y: cb.y,
                    chip: cb.chip,
                    dir: dir.name(),
                });
            }
        }
        self.calendar.entry(arrival).or_default().push(Packet { port, key, payload });
        Ok(arrival)
    }

    /// Hands an already transmitted packet to another port of its
    /// destination tile.
    pub(crate) fn copy_at(&mut self, arrival: u64, port: Port, key: (usize, usize), payload: Payload) {
        self.calendar.entry(arrival).or_default().push(Packet { port, key, payload });
    }

    /// Adjusts the ROFM data-buffer occupancy of a tile.
    pub(crate) fn rofm_delta(&mut self, tile: usize, delta: isize) -> Result<(), FabricError> {
        let cap = self.d.arch.rofm_buffer_bytes;
        let b = &mut self.rofm[tile];
        *b = (*b as isize + delta).max(0) as usize;
        let bytes = *b;
        if bytes > self.occ.rofm_peak_bytes {
            self.occ.rofm_peak_bytes = bytes;
            self.occ.rofm_peak_tile = Some(self.d.tiles[tile].coord);
        }
        if bytes > cap {
            let c = self.d.tiles[tile].coord;
            if self.strict {
                return Err(FabricError::BufferOverflow {
                    x: c.x,
                    y: c.y,
                    chip: c.chip,
                    bytes,
                    capacity: cap,
                });
            }
            if !self.over[tile] {
                self.over[tile] = true;
                self.occ.rofm_overflow_tiles += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn rifm_level(&mut self, bytes: usize) {
        self.occ.rifm_peak_bytes = self.occ.rifm_peak_bytes.max(bytes);
    }

    pub(crate) fn fault(&self, tile: usize, message: impl Into<String>) -> FabricError {
        let c = self.coord(tile);
        FabricError::ScheduleFault {
            x: c.x,
            y: c.y,
            chip: c.chip,
            cycle: self.now,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy)]
enum Comp {
    Conv(usize),
    Fc(usize),
    Station(usize),
}

/// A design loaded onto the mesh, ready to run inferences.
pub struct Fabric<'a> {
    design: &'a MappedDesign,
    opts: FabricOptions,
    /// Record pre-activation accumulators of conv layers.
    pub instrument: bool,
}

impl<'a> Fabric<'a> {
    pub fn new(design: &'a MappedDesign, opts: FabricOptions) -> Self {
        Self {
            design,
            opts,
            instrument: false,
        }
    }

    pub fn run(&self, input: &Tensor) -> Result<RunResult, FabricError> {
        let d = self.design;
        let net = &d.net;
        if input.dims().len() != 3 || input.fmap_shape() != net.input_shape {
            return Err(FabricError::InputShape {
                got: input.dims().to_vec(),
                want: net.input_shape.to_string(),
            });
        }
        let mut ctx = Ctx {
            d,
            now: 0,
            act_bits: net.precision.activation_bits as usize,
            calendar: BTreeMap::new(),
            ports: HashSet::new(),
            counts: EventCounts::new(d.chips),
            trace: self.opts.record_trace.then(Vec::new),
            rofm: vec![0; d.tiles.len()],
            over: vec![false; d.tiles.len()],
            occ: Occupancy::default(),
            strict: self.opts.strict_capacity,
        };

        let mut stations = build_stations(d)?;
        let mut convs: Vec<ConvRegion> = Vec::new();
        let mut fcs: Vec<FcRegion> = Vec::new();
        // region index -> component
        let mut by_region = Vec::with_capacity(d.regions.len());
        for (ri, r) in d.regions.iter().enumerate() {
            match r.kind {
                RegionKind::Conv { .. } => {
                    by_region.push(Comp::Conv(convs.len()));
                    convs.push(ConvRegion::new(d, ri, &stations, self.instrument));
                }
                RegionKind::Fc { .. } => {
                    by_region.push(Comp::Fc(fcs.len()));
                    fcs.push(FcRegion::new(d, ri, &stations));
                }
            }
        }
        let mut collector = Collector::new(net.final_shape());

        // Host input: row-major pixels, paced by the first consumer's slots.
        let mut injections: Vec<(u64, usize, (usize, usize))> = Vec::new();
        for (li, l) in net.layers().iter().enumerate() {
            if !l.kind.has_weights() || net.input_index(li).is_some() {
                continue;
            }
            let ri = d.sources[li].region;
            let s = net.input_shape;
            for r in 0..s.rows {
                for c in 0..s.cols {
                    let at = match by_region[ri] {
                        Comp::Conv(i) => convs[i].geom.pixel_slot(r, c) as u64,
                        _ => (r * s.cols + c) as u64,
                    };
                    injections.push((at, ri, (r, c)));
                }
            }
        }
        injections.sort();
        let mut inj = injections.into_iter().peekable();

        let mut order: Vec<Comp> = (0..convs.len())
            .map(Comp::Conv)
            .chain((0..fcs.len()).map(Comp::Fc))
            .chain((0..stations.len()).map(Comp::Station))
            .collect();
        let mut rng = self.opts.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
        let s = net.input_shape;

        loop {
            let now = ctx.now;
            while let Some(&(at, ri, (r, c))) = inj.peek() {
                if at > now {
                    break;
                }
                inj.next();
                let px = input.data()[s.index(r, c, 0)..s.index(r, c, 0) + s.channels].to_vec();
                let entry = d.regions[ri].entry_tile();
                ctx.send(None, Some(entry), Net::Rifm, Port::Entry(ri), (r, c), Payload::Act(px))?;
            }
            if let Some(pkts) = ctx.calendar.remove(&now) {
                for p in pkts {
                    match p.port {
                        Port::Entry(ri) => match by_region[ri] {
                            Comp::Conv(i) => convs[i].deliver(&mut ctx, p)?,
                            Comp::Fc(i) => fcs[i].deliver(&mut ctx, p)?,
                            Comp::Station(_) => unreachable!(),
                        },
                        Port::FcPsum(tile) => {
                            let ri = d.tiles[tile].region;
                            match by_region[ri] {
                                Comp::Fc(i) => fcs[i].deliver_psum(tile, p)?,
                                _ => return Err(ctx.fault(tile, "partial sum sent to a non-FC tile")),
                            }
                        }
                        Port::Own(st) | Port::Up(st) => {
                            let st_ref: &mut Station = &mut stations[st];
                            st_ref.deliver(&mut ctx, p)?;
                        }
                        Port::Output => collector.deliver(now, p)?,
                    }
                }
            }
            ctx.ports.retain(|&(c, ..)| c > now);

            if let Some(rng) = &mut rng {
                order.shuffle(rng);
            }
            for &comp in &order {
                match comp {
                    Comp::Conv(i) => convs[i].step(&mut ctx)?,
                    Comp::Fc(i) => fcs[i].step(&mut ctx)?,
                    Comp::Station(i) => stations[i].step(&mut ctx)?,
                }
            }

            if collector.is_complete() {
                break;
            }
            ctx.now += 1;
            if ctx.now >= self.opts.max_cycles {
                let (missing, first) = collector.missing();
                return Err(FabricError::Timeout {
                    cycles: ctx.now,
                    missing,
                    first,
                });
            }
        }

        let cycles = collector.last_arrival + 1;
        let mut counts = ctx.counts;
        counts.cycles = cycles;
        let mut events = ctx.trace.unwrap_or_default();
        canonicalize(&mut events);
        let accumulators = convs.iter_mut().filter_map(|c| c.take_accumulators()).collect();
        Ok(RunResult {
            output: collector.into_tensor()?,
            cycles,
            counts,
            events,
            occupancy: ctx.occ,
            accumulators,
        })
    }
}

/// Sorts events and merges those sharing cycle, tile and category.
fn canonicalize(events: &mut Vec<FabricEvent>) {
    events.sort_by_key(|e| (e.cycle, e.tile, e.category));
    let mut out: Vec<FabricEvent> = Vec::with_capacity(events.len());
    for e in events.drain(..) {
        match out.last_mut() {
            Some(l) if l.cycle == e.cycle && l.tile == e.tile && l.category == e.category => l.count += e.count,
            _ => out.push(e),
        }
    }
    *events = out;
}
