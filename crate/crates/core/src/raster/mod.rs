//! Differentiable tiled software rasterizer.

pub mod camera;
pub mod image;
pub mod project;
pub mod render;
pub mod splat;

pub use camera::Camera;
pub use image::{Image, ScalarMap};
pub use project::{project, Projection};
pub use render::{render, render_backward, render_reference, RenderOutput, Splat2D, SplatGrads};
pub use splat::{prepare_splats, render_cloud, render_cloud_backward, Frame, SplatSet};
