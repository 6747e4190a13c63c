use serde::{Deserialize, Serialize};

use crate::error::MapError;

/// Hardware parameters the compiler targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// CIM array rows `N_c`.
    pub cim_rows: usize,
    /// CIM array columns `N_m`.
    pub cim_cols: usize,
    pub tiles_per_chip: usize,
    pub mesh_cols: usize,
    pub mesh_rows: usize,
    /// Instruction step frequency in Hz.
    pub step_hz: f64,
    /// Flit width in bits; energy and trace counts are per flit.
    pub flit_bits: usize,
    pub inter_chip_lanes: usize,
    pub inter_chip_lane_bps: f64,
    /// Upper bound on chips; `None` is unbounded.
    pub max_chips: Option<usize>,
    pub rifm_buffer_bytes: usize,
    pub rofm_buffer_bytes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            cim_rows: 256,
            cim_cols: 256,
            tiles_per_chip: 240,
            mesh_cols: 16,
            mesh_rows: 15,
            step_hz: 1e7,
            flit_bits: 64,
            inter_chip_lanes: 8,
            inter_chip_lane_bps: 80e9,
            max_chips: None,
            rifm_buffer_bytes: 256,
            rofm_buffer_bytes: 16 * 1024,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        let positive = [
            ("cim_rows", self.cim_rows),
            ("cim_cols", self.cim_cols),
            ("tiles_per_chip", self.tiles_per_chip),
            ("mesh_cols", self.mesh_cols),
            ("mesh_rows", self.mesh_rows),
            ("flit_bits", self.flit_bits),
            ("inter_chip_lanes", self.inter_chip_lanes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MapError::Arch(format!("{name} must be positive")));
            }
        }
        if !(self.step_hz > 0.0) || !(self.inter_chip_lane_bps > 0.0) {
            return Err(MapError::Arch("frequencies must be positive".into()));
        }
        if self.mesh_cols * self.mesh_rows < self.tiles_per_chip {
            return Err(MapError::Arch(format!(
                "mesh {}x{} cannot hold {} tiles",
                self.mesh_cols, self.mesh_rows, self.tiles_per_chip
            )));
        }
        if self.max_chips == Some(0) {
            return Err(MapError::Arch("max_chips must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, MapError> {
        let arch: ArchConfig = toml::from_str(text).map_err(|e| MapError::Arch(e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch config serializes")
    }

    /// Mesh coordinate of snake position `pos` within a chip.
    pub fn snake_xy(&self, pos: usize) -> (usize, usize) {
        let y = pos / self.mesh_cols;
        let x = pos % self.mesh_cols;
        if y % 2 == 0 {
            (x, y)
        } else {
            (self.mesh_cols - 1 - x, y)
        }
    }
}
