//! Canonical Gaussian field: raw parameter storage, activations, covariance
//! construction, spherical-harmonic color, PLY export/import.

pub mod activation;
pub mod cloud;
pub mod covariance;
pub mod io;
pub mod sh;

pub use activation::{activated_view, logit, sigmoid, ActivatedCloud};
pub use cloud::{GaussianCloud, ParamGroup, RowEdit};
pub use covariance::{build_covariance, quat_to_rotmat, Covariance3D};
pub use sh::{eval_sh_color, sh_coeff_count, SH_C0};
