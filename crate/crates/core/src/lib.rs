//! Deformable 3D Gaussian splatting on the CPU.
//!
//! A canonical set of Gaussians is deformed per timestep by a small MLP fed
//! with per-Gaussian embeddings and Hadamard-fused coarse/fine temporal
//! embeddings, rendered by a differentiable tiled rasterizer, and trained with
//! L1 + intermittent D-SSIM + a KNN embedding smoothness term. Density control
//! combines gradient-driven clone/split/prune with error-guided anchor
//! injection from median-depth backprojection.

pub mod adaptive;
pub mod deform;
pub mod error;
pub mod gaussian;
pub mod loss;
pub mod par;
pub mod pipeline;
pub mod ply;
pub mod raster;
pub mod scene;
pub mod train;

pub use error::{Error, ErrorKind, Result};
