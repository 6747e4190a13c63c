//! Text form of a compiled design: a TOML manifest plus a schedule dump.
//!
//! Weights are not stored; they are re-sliced from the network by tile
//! role when the manifest is loaded.

use serde::{Deserialize, Serialize};

use super::{
    ArchConfig, LayerSource, MappedDesign, PoolMode, PostOp, Region, RegionKind, RifmConfig, TileConfig, TileCoord,
    TileRole, WeightBlock,
};
use crate::error::MapError;
use crate::isa::{parse_dump, ScheduleTable};
use crate::netspec::{LayerKind, NetworkSpec};

pub const MANIFEST_FORMAT: &str = "domino-design/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    format: String,
    pool_mode: PoolMode,
    chips: usize,
    arch: ArchConfig,
    sources: Vec<LayerSource>,
    regions: Vec<RegionDoc>,
    tiles: Vec<TileDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    layer: usize,
    kind: RegionKind,
    first_tile: usize,
    tile_count: usize,
    post_layers: Vec<usize>,
    duplicated_pool: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TileDoc {
    coord: TileCoord,
    region: usize,
    role: TileRole,
    rifm: RifmConfig,
    has_out_schedule: bool,
    post_layers: Vec<usize>,
}

pub fn write_manifest(d: &MappedDesign) -> String {
    let doc = ManifestDoc {
        format: MANIFEST_FORMAT.into(),
        pool_mode: d.pool_mode,
        chips: d.chips,
        arch: d.arch.clone(),
        sources: d.sources.clone(),
        regions: d
            .regions
            .iter()
            .map(|r| RegionDoc {
                layer: r.layer,
                kind: r.kind,
                first_tile: r.tiles[0],
                tile_count: r.tiles.len(),
                post_layers: r.post_layers.clone(),
                duplicated_pool: r.duplicated_pool,
            })
            .collect(),
        tiles: d
            .tiles
            .iter()
            .map(|t| TileDoc {
                coord: t.coord,
                region: t.region,
                role: t.role,
                rifm: t.rifm,
                has_out_schedule: t.out_schedule.is_some(),
                post_layers: t.post.iter().map(|p| p.layer).collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("manifest serializes")
}

/// Every schedule table: chain, then output stage, then post-ops, per tile.
pub fn write_schedule_dump(d: &MappedDesign) -> Result<String, MapError> {
    let mut s = String::new();
    for t in &d.tiles {
        let TileCoord { chip, x, y } = t.coord;
        s.push_str(&t.schedule.dump(chip, x, y)?);
        if let Some(o) = &t.out_schedule {
            s.push_str(&o.dump(chip, x, y)?);
        }
        for p in &t.post {
            s.push_str(&p.schedule.dump(chip, x, y)?);
        }
    }
    Ok(s)
}

fn slice_weights(net: &NetworkSpec, arch: &ArchConfig, region: &RegionDoc, role: &TileRole) -> Result<WeightBlock, MapError> {
    let l = &net.layers()[region.layer];
    match (role, &region.kind) {
        (TileRole::Conv { mg, kr, cg, kc, .. }, RegionKind::Conv { geom, .. }) => {
            let (cr, or) = (geom.channel_range(*cg), geom.output_range(*mg));
            let mut data = Vec::with_capacity(cr.len() * or.len());
            for c in cr.clone() {
                for m in or.clone() {
                    data.push(l.conv_weight(*kr, *kc, c, m));
                }
            }
            Ok(WeightBlock {
                rows: cr.len(),
                cols: or.len(),
                data,
            })
        }
        (TileRole::Fc { row, col }, RegionKind::Fc { .. }) => {
            let ic = row * arch.cim_rows..((row + 1) * arch.cim_rows).min(l.in_channels);
            let oc = col * arch.cim_cols..((col + 1) * arch.cim_cols).min(l.out_channels);
            let mut data = Vec::with_capacity(ic.len() * oc.len());
            for c in ic.clone() {
                for m in oc.clone() {
                    data.push(l.weights[c * l.out_channels + m]);
                }
            }
            Ok(WeightBlock {
                rows: ic.len(),
                cols: oc.len(),
                data,
            })
        }
        _ => Err(MapError::Manifest(format!("tile role {role:?} does not match its region"))),
    }
}

/// Rebuilds a design from its manifest and schedule dump.
pub fn load_design(net: &NetworkSpec, manifest: &str, dump: &str) -> Result<MappedDesign, MapError> {
    let doc: ManifestDoc = toml::from_str(manifest).map_err(|e| MapError::Manifest(e.to_string()))?;
    if doc.format != MANIFEST_FORMAT {
        return Err(MapError::Manifest(format!("unknown format `{}`", doc.format)));
    }
    if doc.sources.len() != net.layers().len() {
        return Err(MapError::Manifest("layer count does not match the network".into()));
    }
    let mut tables = parse_dump(dump)?.into_iter();
    let mut next = |coord: TileCoord| -> Result<ScheduleTable, MapError> {
        let (key, t) = tables
            .next()
            .ok_or_else(|| MapError::Manifest(format!("schedule dump ends before tile {coord}")))?;
        if key != (coord.chip, coord.x, coord.y) {
            return Err(MapError::Manifest(format!("dump table for {key:?} where {coord} was expected")));
        }
        Ok(t)
    };
    let mut tiles = Vec::with_capacity(doc.tiles.len());
    for td in &doc.tiles {
        let region = doc
            .regions
            .get(td.region)
            .ok_or_else(|| MapError::Manifest(format!("tile {} names missing region {}", td.coord, td.region)))?;
        let weights = slice_weights(net, &doc.arch, region, &td.role)?;
        let schedule = next(td.coord)?;
        let out_schedule = if td.has_out_schedule { Some(next(td.coord)?) } else { None };
        let mut post = Vec::new();
        for &layer in &td.post_layers {
            if layer >= net.layers().len() || net.layers()[layer].kind.has_weights() {
                return Err(MapError::Manifest(format!("tile {} post-op layer {layer} is invalid", td.coord)));
            }
            post.push(PostOp {
                layer,
                schedule: next(td.coord)?,
            });
        }
        tiles.push(TileConfig {
            coord: td.coord,
            region: td.region,
            role: td.role,
            weights,
            rifm: td.rifm,
            schedule,
            out_schedule,
            post,
        });
    }
    if tables.next().is_some() {
        return Err(MapError::Manifest("schedule dump has extra tables".into()));
    }
    let regions = doc
        .regions
        .iter()
        .map(|r| {
            if r.first_tile + r.tile_count > tiles.len() || !matches!(net.layers()[r.layer].kind, LayerKind::Conv | LayerKind::Fc) {
                return Err(MapError::Manifest(format!("region for layer {} is inconsistent", r.layer)));
            }
            Ok(Region {
                layer: r.layer,
                kind: r.kind,
                tiles: (r.first_tile..r.first_tile + r.tile_count).collect(),
                post_layers: r.post_layers.clone(),
                duplicated_pool: r.duplicated_pool,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MappedDesign {
        arch: doc.arch,
        net: net.clone(),
        pool_mode: doc.pool_mode,
        regions,
        tiles,
        sources: doc.sources,
        chips: doc.chips,
    })
}
