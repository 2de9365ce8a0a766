//! Deformation field: temporal embedding tables, fusion strategies, the
//! deformation MLP, and the deformed-attribute update with the opacity modes.

pub mod field;
pub mod fusion;
pub mod mlp;
pub mod opacity;
pub mod sidecar;
pub mod temporal;

pub use field::{DeformationDelta, DeformationField, DeltaBatch, DeltaLayout, FieldConfig, FieldGrad};
pub use fusion::{fuse, FusionMode, Fused};
pub use mlp::{Activation, Linear, Mlp, MlpGrad};
pub use opacity::{apply_delta, apply_delta_backward, deformed_opacity, DeformedCloud, DeformedGrad, OpacityMode};
pub use temporal::{TableGrad, TemporalEmbeddingTable, TemporalSample};
