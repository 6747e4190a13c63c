//! Mapping compiler and cycle-stepped simulator for a 2-D mesh of
//! compute-in-memory tiles running the computing-on-the-move dataflow.
//!
//! Pipeline: [`netspec`] describes a quantized network and provides the
//! integer oracle, [`mapper`] compiles it onto tiles, [`fabric`] executes
//! the compiled design cycle by cycle and [`energy`] prices the events.

pub mod energy;
pub mod error;
pub mod fabric;
pub mod fixtures;
pub mod isa;
pub mod netspec;
pub mod mapper;
pub mod tensor;

pub use error::{EnergyError, FabricError, IsaError, MapError, NetError, ShapeError};
pub use tensor::{FmapShape, Tensor};
