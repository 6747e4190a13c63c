use super::schedule::{self, ChainPos};
use super::{
    ArchConfig, ConvGeometry, LayerSource, MappedDesign, PoolMode, PostOp, Region, RegionKind, RifmConfig,
    TileConfig, TileCoord, TileRole, WeightBlock, DUPLICATION_FACTOR,
};
use crate::error::MapError;
use crate::isa::Dir;
use crate::netspec::{LayerKind, NetworkSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapOptions {
    pub pool_mode: PoolMode,
}

/// Where a layer output stream must be delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTarget {
    /// Main input of a region; delivered to its entry tile.
    Entry { region: usize },
    /// Residual shortcut operand of a post-op on a region's output tile.
    Skip { region: usize, layer: usize },
    /// Network output port.
    Output,
}

struct Plan {
    layer: usize,
    kind: RegionKind,
    post: Vec<usize>,
    duplicated_pool: Option<usize>,
}

fn unsupported(layer: usize, message: impl Into<String>) -> MapError {
    MapError::Unsupported {
        layer,
        message: message.into(),
    }
}

fn plan_regions(net: &NetworkSpec, arch: &ArchConfig, opts: &MapOptions) -> Result<(Vec<Plan>, Vec<LayerSource>), MapError> {
    let mut plans: Vec<Plan> = Vec::new();
    let mut sources: Vec<LayerSource> = Vec::with_capacity(net.layers().len());
    for (i, l) in net.layers().iter().enumerate() {
        let in_shape = net.input_shape_of(i);
        match l.kind {
            LayerKind::Conv => {
                let geom = ConvGeometry::new(l, in_shape, net.output_shape(i), arch.cim_rows, arch.cim_cols);
                sources.push(LayerSource { region: plans.len(), stage: 0 });
                plans.push(Plan {
                    layer: i,
                    kind: RegionKind::Conv { geom, replicas: 1 },
                    post: Vec::new(),
                    duplicated_pool: None,
                });
            }
            LayerKind::Fc => {
                let (rows, cols) = super::tiles_for_fc(l.in_channels, l.out_channels, arch.cim_rows, arch.cim_cols);
                sources.push(LayerSource { region: plans.len(), stage: 0 });
                plans.push(Plan {
                    layer: i,
                    kind: RegionKind::Fc { rows, cols },
                    post: Vec::new(),
                    duplicated_pool: None,
                });
            }
            _ => {
                let main = net
                    .input_index(i)
                    .ok_or_else(|| unsupported(i, "a non-weight layer cannot read the network input"))?;
                let src = sources[main];
                let plan = &mut plans[src.region];
                if src.stage != plan.post.len() {
                    return Err(unsupported(i, "branching inside a post-op chain"));
                }
                if l.kind.is_pool() && l.pool_kernel != l.pool_stride {
                    return Err(unsupported(i, "pooling windows must not overlap"));
                }
                let dup = opts.pool_mode == PoolMode::WeightDuplication
                    && l.kind == LayerKind::MaxPool
                    && l.pool_kernel == 2
                    && plan.post.is_empty()
                    && matches!(plan.kind, RegionKind::Conv { .. })
                    && (0..net.layers().len())
                        .filter(|&j| j != i)
                        .all(|j| net.input_index(j) != Some(main) && net.layers()[j].skip_source != Some(main));
                if dup {
                    if let RegionKind::Conv { replicas, .. } = &mut plan.kind {
                        *replicas = DUPLICATION_FACTOR;
                    }
                    plan.duplicated_pool = Some(i);
                }
                plan.post.push(i);
                sources.push(LayerSource {
                    region: src.region,
                    stage: plan.post.len(),
                });
            }
        }
    }
    if plans.is_empty() {
        return Err(unsupported(0, "network has no conv or FC layer"));
    }
    Ok((plans, sources))
}

fn region_size(kind: &RegionKind) -> usize {
    match kind {
        RegionKind::Conv { geom, replicas } => geom.tiles() * replicas,
        RegionKind::Fc { rows, cols } => rows * cols,
    }
}

fn coord_of(arch: &ArchConfig, g: usize) -> TileCoord {
    let (x, y) = arch.snake_xy(g % arch.tiles_per_chip);
    TileCoord {
        chip: g / arch.tiles_per_chip,
        x,
        y,
    }
}

fn rifm_config(arch: &ArchConfig, channels: usize, kernel: usize) -> RifmConfig {
    let shift_step = if channels <= 64 { 64 } else { channels.div_ceil(128) * 128 }.min(arch.cim_rows.max(64));
    let packing = if 2 * channels <= arch.cim_rows {
        (arch.cim_rows / channels).min(kernel * kernel)
    } else {
        1
    };
    RifmConfig {
        shift_step,
        packing,
        shortcut: false,
    }
}

/// Compiles `net` onto tiles.
///
/// Regions are laid along a boustrophedon path through each chip's mesh
/// in layer order. A conv region never straddles chips; FC regions may.
pub fn map_network(net: &NetworkSpec, arch: &ArchConfig, opts: &MapOptions) -> Result<MappedDesign, MapError> {
    arch.validate()?;
    let (plans, sources) = plan_regions(net, arch, opts)?;
    let tpc = arch.tiles_per_chip;

    let mut starts = Vec::with_capacity(plans.len());
    let mut cursor = 0usize;
    for p in &plans {
        let n = region_size(&p.kind);
        if matches!(p.kind, RegionKind::Conv { .. }) {
            if n > tpc {
                return Err(MapError::LayerTooLarge {
                    layer: p.layer,
                    needed: n,
                    per_chip: tpc,
                });
            }
            if cursor % tpc + n > tpc {
                cursor = cursor.div_ceil(tpc) * tpc;
            }
        }
        starts.push(cursor);
        cursor += n;
    }
    let chips = cursor.div_ceil(tpc);
    if let Some(limit) = arch.max_chips {
        if chips > limit {
            return Err(MapError::InsufficientChips { needed: chips, limit });
        }
    }

    let mut regions = Vec::with_capacity(plans.len());
    let mut tiles = Vec::with_capacity(cursor);
    for (ri, (p, &start)) in plans.iter().zip(&starts).enumerate() {
        let n = region_size(&p.kind);
        let coords: Vec<TileCoord> = (start..start + n).map(|g| coord_of(arch, g)).collect();
        let first = tiles.len();
        build_region_tiles(net, arch, ri, p, &coords, &mut tiles)?;
        regions.push(Region {
            layer: p.layer,
            kind: p.kind,
            tiles: (first..first + n).collect(),
            post_layers: p.post.clone(),
            duplicated_pool: p.duplicated_pool,
        });
    }

    Ok(MappedDesign {
        arch: arch.clone(),
        net: net.clone(),
        pool_mode: opts.pool_mode,
        regions,
        tiles,
        sources,
        chips,
    })
}

fn link(coords: &[TileCoord], from: usize, to: usize) -> (Dir, Dir) {
    (coords[from].dir_to(&coords[to]), coords[to].entry_dir(&coords[from]))
}

fn build_region_tiles(
    net: &NetworkSpec,
    arch: &ArchConfig,
    ri: usize,
    p: &Plan,
    coords: &[TileCoord],
    tiles: &mut Vec<TileConfig>,
) -> Result<(), MapError> {
    let l = &net.layers()[p.layer];
    let act = l.activation;
    match p.kind {
        RegionKind::Conv { geom, replicas } => {
            let k = geom.kernel;
            let chain = k * geom.cg * k;
            let rifm = rifm_config(arch, geom.in_shape.channels, k);
            for replica in 0..replicas {
                let rep = (replicas > 1).then_some(replica);
                for mg in 0..geom.mg {
                    let base = Region::conv_index(&geom, replica, mg, 0, 0, 0);
                    for kr in 0..k {
                        for cg in 0..geom.cg {
                            for kc in 0..k {
                                let idx = Region::conv_index(&geom, replica, mg, kr, cg, kc);
                                let j = idx - base;
                                let pred = (j > 0).then(|| link(coords, idx - 1, idx).1);
                                let succ = (j + 1 < chain).then(|| link(coords, idx, idx + 1).0);
                                let pos = ChainPos { kr, cg, kc };
                                let sched = schedule::gen_conv_schedule(&geom, pos, rep, pred, succ)?;
                                let cr = geom.channel_range(cg);
                                let or = geom.output_range(mg);
                                let mut data = Vec::with_capacity(cr.len() * or.len());
                                for c in cr.clone() {
                                    for m in or.clone() {
                                        data.push(l.conv_weight(kr, kc, c, m));
                                    }
                                }
                                let mut t = TileConfig {
                                    coord: coords[idx],
                                    region: ri,
                                    role: TileRole::Conv { replica, mg, kr, cg, kc },
                                    weights: WeightBlock {
                                        rows: cr.len(),
                                        cols: or.len(),
                                        data,
                                    },
                                    rifm,
                                    schedule: sched,
                                    out_schedule: None,
                                    post: Vec::new(),
                                };
                                if j + 1 == chain {
                                    // Slices of one replica merge along mg,
                                    // replicas chain after their last slice.
                                    let target = if mg + 1 < geom.mg {
                                        Some(Region::conv_index(&geom, replica, mg + 1, k - 1, geom.cg - 1, k - 1))
                                    } else if replica + 1 < replicas {
                                        Some(Region::conv_index(&geom, replica + 1, geom.mg - 1, k - 1, geom.cg - 1, k - 1))
                                    } else {
                                        None
                                    };
                                    let succ = target.map(|t| link(coords, idx, t).0);
                                    t.out_schedule = Some(schedule::gen_conv_output_schedule(&geom, rep, act, succ)?);
                                    if let (Some(pool), true) = (p.duplicated_pool, mg + 1 == geom.mg) {
                                        t.post.push(PostOp {
                                            layer: pool,
                                            schedule: schedule::gen_duplicated_pool_schedule(replica, succ)?,
                                        });
                                    }
                                }
                                tiles.push(t);
                            }
                        }
                    }
                }
            }
        }
        RegionKind::Fc { rows, cols } => {
            let (n_c, n_m) = (arch.cim_rows, arch.cim_cols);
            let rifm = rifm_config(arch, l.in_channels.min(n_c), 1);
            for col in 0..cols {
                let oc = col * n_m..((col + 1) * n_m).min(l.out_channels);
                for row in 0..rows {
                    let ic = row * n_c..((row + 1) * n_c).min(l.in_channels);
                    let idx = Region::fc_index(rows, row, col);
                    let pred = (row > 0).then(|| link(coords, idx - 1, idx).1);
                    let succ = (row + 1 < rows).then(|| link(coords, idx, idx + 1).0);
                    let mut data = Vec::with_capacity(ic.len() * oc.len());
                    for c in ic.clone() {
                        for m in oc.clone() {
                            data.push(l.weights[c * l.out_channels + m]);
                        }
                    }
                    let out_schedule = if row + 1 == rows {
                        let target = (col + 1 < cols).then(|| Region::fc_index(rows, rows - 1, col + 1));
                        Some(schedule::gen_fc_output_schedule(act, target.map(|t| link(coords, idx, t).0))?)
                    } else {
                        None
                    };
                    tiles.push(TileConfig {
                        coord: coords[idx],
                        region: ri,
                        role: TileRole::Fc { row, col },
                        weights: WeightBlock {
                            rows: ic.len(),
                            cols: oc.len(),
                            data,
                        },
                        rifm,
                        schedule: schedule::gen_fc_schedule(row, pred, succ)?,
                        out_schedule,
                        post: Vec::new(),
                    });
                }
            }
        }
    }
    let out = tiles.last_mut().expect("region has tiles");
    for &j in &p.post {
        if Some(j) == p.duplicated_pool {
            continue;
        }
        let lj = &net.layers()[j];
        let sched = match lj.kind {
            LayerKind::ResidualAdd => {
                out.rifm.shortcut = true;
                schedule::gen_residual_schedule()?
            }
            kind => schedule::gen_pool_schedule(kind, lj.pool_stride)?,
        };
        out.post.push(PostOp { layer: j, schedule: sched });
    }
    Ok(())
}

impl MappedDesign {
    /// Destinations of layer `layer`'s output stream.
    pub fn stream_targets(&self, layer: usize) -> Vec<StreamTarget> {
        let src = self.sources[layer];
        let mut v = Vec::new();
        for j in 0..self.net.layers().len() {
            if self.net.input_index(j) == Some(layer) {
                let sj = self.sources[j];
                let internal = sj.region == src.region && sj.stage == src.stage + 1;
                if !internal {
                    v.push(StreamTarget::Entry { region: sj.region });
                }
            }
            if self.net.layers()[j].skip_source == Some(layer) {
                v.push(StreamTarget::Skip {
                    region: self.sources[j].region,
                    layer: j,
                });
            }
        }
        if layer + 1 == self.net.layers().len() {
            v.push(StreamTarget::Output);
        }
        v
    }

    /// Layers whose output leaves their region.
    pub fn streamed_layers(&self) -> Vec<usize> {
        (0..self.net.layers().len())
            .filter(|&l| !self.stream_targets(l).is_empty())
            .collect()
    }

    pub fn target_tile(&self, target: StreamTarget) -> Option<usize> {
        match target {
            StreamTarget::Entry { region } => Some(self.regions[region].entry_tile()),
            StreamTarget::Skip { region, .. } => Some(self.regions[region].output_tile()),
            StreamTarget::Output => None,
        }
    }
}

/// Activation or partial-sum traffic crossing a chip boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterChipEdge {
    pub layer: usize,
    pub from_chip: usize,
    pub to_chip: usize,
    /// Bits per inference.
    pub bits: u64,
}

/// Inter-chip traffic of one inference.
pub fn partition_traffic(design: &MappedDesign) -> Vec<InterChipEdge> {
    let net = &design.net;
    let p = &net.precision;
    let mut edges = Vec::new();
    for layer in design.streamed_layers() {
        let src = design.tiles[design.regions[design.sources[layer].region].output_tile()].coord.chip;
        let bits = (net.output_shape(layer).elements() as u64) * p.activation_bits as u64;
        for t in design.stream_targets(layer) {
            if let Some(tile) = design.target_tile(t) {
                let dst = design.tiles[tile].coord.chip;
                if dst != src {
                    edges.push(InterChipEdge {
                        layer,
                        from_chip: src,
                        to_chip: dst,
                        bits,
                    });
                }
            }
        }
    }
    for r in &design.regions {
        if let RegionKind::Fc { rows, cols } = r.kind {
            let lanes = design.arch.cim_cols as u64;
            for col in 0..cols {
                for row in 1..rows {
                    let a = design.tiles[r.tiles[Region::fc_index(rows, row - 1, col)]].coord.chip;
                    let b = design.tiles[r.tiles[Region::fc_index(rows, row, col)]].coord.chip;
                    if a != b {
                        edges.push(InterChipEdge {
                            layer: r.layer,
                            from_chip: a,
                            to_chip: b,
                            bits: lanes * p.accumulator_bits as u64,
                        });
                    }
                }
                if col + 1 < cols {
                    let a = design.tiles[r.tiles[Region::fc_index(rows, rows - 1, col)]].coord.chip;
                    let b = design.tiles[r.tiles[Region::fc_index(rows, rows - 1, col + 1)]].coord.chip;
                    if a != b {
                        edges.push(InterChipEdge {
                            layer: r.layer,
                            from_chip: a,
                            to_chip: b,
                            bits: ((col + 1) * design.arch.cim_cols).min(net.layers()[r.layer].out_channels) as u64
                                * p.activation_bits as u64,
                        });
                    }
                }
            }
        }
    }
    edges
}
