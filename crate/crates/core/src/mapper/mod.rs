//! Network-to-fabric compiler: tile counts, placement and schedules.

mod arch;
mod geometry;
pub mod manifest;
mod place;
pub mod schedule;
pub mod symbolic;

pub use arch::ArchConfig;
pub use geometry::ConvGeometry;
pub use place::{map_network, partition_traffic, InterChipEdge, MapOptions, StreamTarget};

use serde::{Deserialize, Serialize};

use crate::isa::{Dir, ScheduleTable};
use crate::netspec::NetworkSpec;

/// Tiles of a conv layer: `K^2 * ceil(C/N_c) * ceil(M/N_m)`.
pub fn tiles_for_conv(k: usize, c: usize, m: usize, n_c: usize, n_m: usize) -> usize {
    k * k * c.div_ceil(n_c) * m.div_ceil(n_m)
}

/// Tile grid `(rows, cols)` of an FC layer.
pub fn tiles_for_fc(c_in: usize, c_out: usize, n_c: usize, n_m: usize) -> (usize, usize) {
    (c_in.div_ceil(n_c), c_out.div_ceil(n_m))
}

/// How a 2x2 pooling layer right after a conv is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// One copy of the weights; the output tile keeps a row buffer.
    #[default]
    BlockReuse,
    /// Four weight replicas, one per window position, compared in transit.
    WeightDuplication,
}

impl PoolMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolMode::BlockReuse => "block-reuse",
            PoolMode::WeightDuplication => "weight-dup",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "block-reuse" => Some(PoolMode::BlockReuse),
            "weight-dup" | "weight-duplication" => Some(PoolMode::WeightDuplication),
            _ => None,
        }
    }
}

/// Replica count used by weight duplication.
pub const DUPLICATION_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub chip: usize,
    pub x: usize,
    pub y: usize,
}

impl TileCoord {
    /// Mesh hops between two tiles. Crossing chips goes through the
    /// chip port next to tile (0, 0) on both sides.
    pub fn hops(&self, other: &TileCoord) -> usize {
        if self.chip == other.chip {
            self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
        } else {
            self.x + self.y + other.x + other.y + 1
        }
    }

    /// Direction of the first hop from `self` toward `other`.
    pub fn dir_to(&self, other: &TileCoord) -> Dir {
        if self.chip != other.chip {
            return Dir::West;
        }
        if other.x > self.x {
            Dir::East
        } else if other.x < self.x {
            Dir::West
        } else if other.y > self.y {
            Dir::South
        } else {
            Dir::North
        }
    }

    /// Direction from which a packet sent by `from` enters `self`.
    pub fn entry_dir(&self, from: &TileCoord) -> Dir {
        if self.chip != from.chip {
            return Dir::West;
        }
        // XY routing: the last hop is along y unless the rows agree.
        if from.y != self.y {
            if from.y < self.y {
                Dir::North
            } else {
                Dir::South
            }
        } else if from.x < self.x {
            Dir::West
        } else {
            Dir::East
        }
    }
}

impl std::fmt::Display for TileCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{},{}", self.chip, self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileRole {
    Conv {
        replica: usize,
        mg: usize,
        kr: usize,
        cg: usize,
        kc: usize,
    },
    Fc {
        row: usize,
        col: usize,
    },
}

/// Weight sub-block held by one PE, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i16>,
}

impl WeightBlock {
    pub fn get(&self, r: usize, c: usize) -> i16 {
        self.data[r * self.cols + c]
    }

    /// `y[c] += sum_r x[r] * w[r][c]`.
    pub fn mvm_into(&self, x: &[i32], y: &mut [i64]) {
        for (r, &xv) in x.iter().enumerate().take(self.rows) {
            if xv == 0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (acc, &w) in y.iter_mut().zip(row) {
                *acc += xv as i64 * w as i64;
            }
        }
    }
}

/// RIFM settings of a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RifmConfig {
    /// Buffer shift granularity in channels.
    pub shift_step: usize,
    /// Kernel pixels that could share one array (first layers with few
    /// channels). Informational; the base mapping does not pack.
    pub packing: usize,
    /// Whether the tile receives a residual shortcut stream.
    pub shortcut: bool,
}

/// Element-wise stage run by a region's output tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostOp {
    pub layer: usize,
    pub schedule: ScheduleTable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileConfig {
    pub coord: TileCoord,
    pub region: usize,
    pub role: TileRole,
    pub weights: WeightBlock,
    pub rifm: RifmConfig,
    /// Chain schedule indexed by the tile's slot counter.
    pub schedule: ScheduleTable,
    /// M-type output schedule, present on tiles that finish an output slice.
    pub out_schedule: Option<ScheduleTable>,
    /// Post-ops on the region output tile, in order.
    pub post: Vec<PostOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    Conv { geom: ConvGeometry, replicas: usize },
    Fc { rows: usize, cols: usize },
}

/// Tiles that run one weight layer plus its attached post-ops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub layer: usize,
    pub kind: RegionKind,
    /// Indices into [`MappedDesign::tiles`] in chain order.
    pub tiles: Vec<usize>,
    /// Non-weight layers executed on the output tile.
    pub post_layers: Vec<usize>,
    /// Pooling layer realised through replicas, if any.
    pub duplicated_pool: Option<usize>,
}

impl Region {
    pub fn entry_tile(&self) -> usize {
        self.tiles[0]
    }

    pub fn output_tile(&self) -> usize {
        *self.tiles.last().expect("regions are non-empty")
    }

    /// Position in `tiles` of a conv tile.
    pub fn conv_index(geom: &ConvGeometry, replica: usize, mg: usize, kr: usize, cg: usize, kc: usize) -> usize {
        let k = geom.kernel;
        (((replica * geom.mg + mg) * k + kr) * geom.cg + cg) * k + kc
    }

    /// Position in `tiles` of an FC tile.
    pub fn fc_index(rows: usize, row: usize, col: usize) -> usize {
        col * rows + row
    }
}

/// Where a layer's output stream is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSource {
    pub region: usize,
    /// 0 is the weight layer itself, `i` is after `post_layers[i - 1]`.
    pub stage: usize,
}

/// Output of the compiler.
#[derive(Debug, Clone)]
pub struct MappedDesign {
    pub arch: ArchConfig,
    pub net: NetworkSpec,
    pub pool_mode: PoolMode,
    pub regions: Vec<Region>,
    pub tiles: Vec<TileConfig>,
    pub sources: Vec<LayerSource>,
    pub chips: usize,
}

impl MappedDesign {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    /// Tiles used on each chip.
    pub fn tiles_per_chip(&self) -> Vec<usize> {
        let mut v = vec![0; self.chips];
        for t in &self.tiles {
            v[t.coord.chip] += 1;
        }
        v
    }

    /// Region that owns weight layer `layer`.
    pub fn region_of(&self, layer: usize) -> Option<usize> {
        self.regions.iter().position(|r| r.layer == layer)
    }

    /// Layers whose main input is `layer`'s output, plus skip consumers.
    pub fn consumers(&self, layer: usize) -> Vec<usize> {
        (0..self.net.layers().len())
            .filter(|&j| {
                self.net.input_index(j) == Some(layer) || self.net.layers()[j].skip_source == Some(layer)
            })
            .collect()
    }
}
