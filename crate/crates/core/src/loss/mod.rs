//! Photometric losses, the D-SSIM schedule and the KNN embedding regularizer.

pub mod knn;
pub mod photometric;
pub mod ssim;

pub use knn::{build_knn, emb_reg_loss, KnnGraph};
pub use photometric::{l1_loss, mse, psnr, PSNR_CAP};
pub use ssim::{dssim_loss, ssim};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_emb: f64,
    /// Falloff of the neighbor weights, world units^-2.
    pub lambda_w: f64,
    pub k_neighbors: usize,
    pub dssim_start_iter: u64,
    pub dssim_period: u64,
    pub dssim_active_span: u64,
    /// Weight of the D-SSIM term on the iterations where it is active.
    pub lambda_dssim: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_emb: 0.01,
            lambda_w: 2000.0,
            k_neighbors: 5,
            dssim_start_iter: 10_000,
            dssim_period: 50,
            dssim_active_span: 5,
            lambda_dssim: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_emb >= 0.0 && self.lambda_w >= 0.0 && self.lambda_dssim >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        if self.dssim_period == 0 || self.dssim_active_span > self.dssim_period {
            return Err(Error::Config("dssim_active_span must not exceed a non-zero dssim_period".into()));
        }
        Ok(())
    }
}

/// Whether D-SSIM is applied at `iter`.
pub fn dssim_active(iter: u64, cfg: &LossConfig) -> bool {
    iter >= cfg.dssim_start_iter && (iter - cfg.dssim_start_iter) % cfg.dssim_period < cfg.dssim_active_span
}
