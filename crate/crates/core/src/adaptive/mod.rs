//! Density control: gradient-driven clone/split/prune, and error-guided
//! anchor injection from median-depth backprojection.

pub mod densify;
pub mod sampling;

pub use densify::{densify_and_prune, DensifyConfig, DensifyReport};
pub use sampling::{backproject, error_map, inject_anchors, select_pixels, Injection, SamplingConfig, SelectedPixel};
