//! The full network: configuration, parameter layout, forward pass and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod layout;
mod mat;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{AttentionMode, DilationPolicy, MabSchedule, ModelConfig, Variant};
pub use layout::{param_specs, Init, ParamSpec};
pub use mat::{MatModel, TileOptions};
pub use params::{Binding, ParamStore, Scope};
