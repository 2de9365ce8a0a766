use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{quat_to_rotmat, GaussianCloud, RowEdit};
use crate::gaussian::covariance::normalize_quat;

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyConfig {
    pub enabled: bool,
    /// Average screen-space positional gradient norm (normalized device units).
    pub grad_threshold: f64,
    /// Largest world-space scale still cloned rather than split.
    pub split_scale_threshold: f64,
    pub prune_opacity: f64,
    pub interval: u64,
    pub start_iter: u64,
    pub stop_iter: u64,
    /// Densification pauses once the cloud reaches this size.
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            enabled: true,
            grad_threshold: 2e-4,
            split_scale_threshold: 0.03,
            prune_opacity: 0.005,
            interval: 100,
            start_iter: 500,
            stop_iter: 15_000,
            max_gaussians: 200_000,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_threshold > 0.0 && self.split_scale_threshold > 0.0 && self.prune_opacity > 0.0) {
            return Err(Error::Config("densification thresholds must be positive".into()));
        }
        if self.start_iter >= self.stop_iter || self.interval == 0 {
            return Err(Error::Config("densification needs start < stop and a non-zero interval".into()));
        }
        Ok(())
    }

    pub fn due(&self, iter: u64) -> bool {
        self.enabled && iter > self.start_iter && iter < self.stop_iter && iter % self.interval == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub edit: RowEdit,
}

const SPLIT_SHRINK: f64 = 1.6;

/// Clones small and splits large Gaussians whose mean screen gradient
/// (`grad_sum / grad_count`) reaches the threshold, then prunes those below
/// the opacity floor. Gaussians about to be pruned are not densified.
pub fn densify_and_prune<R: Rng>(
    cloud: &mut GaussianCloud,
    grad_sum: &[f64],
    grad_count: &[u32],
    cfg: &DensifyConfig,
    rng: &mut R,
) -> Result<DensifyReport> {
    let n = cloud.len();
    if grad_sum.len() != n || grad_count.len() != n {
        return Err(Error::Shape(format!("gradient accumulators {} / {} vs cloud {n}", grad_sum.len(), grad_count.len())));
    }
    let grow = n < cfg.max_gaussians;
    let mut keep = vec![true; n];
    let mut new_rows = GaussianCloud::new(cloud.sh_degree(), cloud.embed_dim());
    let (mut cloned, mut split, mut pruned) = (0, 0, 0);
    for i in 0..n {
        if cloud.opacity(i) < cfg.prune_opacity {
            keep[i] = false;
            pruned += 1;
            continue;
        }
        if !grow || grad_count[i] == 0 || grad_sum[i] / (grad_count[i] as f64) < cfg.grad_threshold {
            continue;
        }
        let ls = cloud.log_scale(i);
        let s = ls.map(f64::exp);
        if s.iter().cloned().fold(0.0, f64::max) <= cfg.split_scale_threshold {
            new_rows.push_row_from(cloud, i);
            cloned += 1;
        } else {
            let r = quat_to_rotmat(normalize_quat(cloud.rotation(i))?);
            let mu = Vector3::from(cloud.position(i));
            for _ in 0..2 {
                let z = Vector3::new(rng.sample::<f64, _>(StandardNormal) * s[0], rng.sample::<f64, _>(StandardNormal) * s[1], rng.sample::<f64, _>(StandardNormal) * s[2]);
                let p = mu + r * z;
                let shrunk = ls.map(|v| v - SPLIT_SHRINK.ln());
                new_rows.push_raw([p.x, p.y, p.z], shrunk, cloud.rotation(i), cloud.opacity_logits[i], cloud.sh_of(i), cloud.embedding(i));
            }
            keep[i] = false;
            split += 1;
        }
    }
    if keep.iter().all(|k| !k) && new_rows.is_empty() {
        // never empty the field completely; keep the most opaque Gaussian
        let best = (0..n).max_by(|&a, &b| cloud.opacity_logits[a].total_cmp(&cloud.opacity_logits[b])).unwrap();
        keep[best] = true;
        pruned -= 1;
    }
    let edit = cloud.retain_and_append(&keep, &new_rows)?;
    Ok(DensifyReport { cloned, split, pruned, edit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud() -> GaussianCloud {
        let mut c = GaussianCloud::new(0, 1);
        c.push_isotropic([0.0; 3], 0.01, [0.5; 3], 0.6, &[1.0]);
        c.push_isotropic([1.0, 0.0, 0.0], 0.2, [0.5; 3], 0.6, &[2.0]);
        c.push_isotropic([0.0, 1.0, 0.0], 0.01, [0.5; 3], 0.001, &[3.0]);
        c
    }

    #[test]
    fn zero_gradients_only_prune() {
        let mut c = cloud();
        let r = densify_and_prune(&mut c, &[0.0; 3], &[1; 3], &DensifyConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((r.cloned, r.split, r.pruned), (0, 0, 1));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn small_high_gradient_is_cloned() {
        let mut c = cloud();
        let r = densify_and_prune(&mut c, &[1.0, 0.0, 0.0], &[1, 1, 1], &DensifyConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((r.cloned, r.split, r.pruned), (1, 0, 1));
        assert_eq!(c.len(), 3);
        assert_eq!(c.position(2), [0.0; 3]);
        assert_eq!(c.embedding(2), &[1.0]);
        assert_eq!(r.edit.new_len(), 3);
    }

    #[test]
    fn large_high_gradient_is_split() {
        let mut c = cloud();
        let r = densify_and_prune(&mut c, &[0.0, 1.0, 0.0], &[1, 1, 1], &DensifyConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((r.cloned, r.split, r.pruned), (0, 1, 1));
        assert_eq!(c.len(), 3);
        for i in 1..3 {
            assert!((c.log_scale(i)[0] - (0.2f64 / 1.6).ln()).abs() < 1e-12);
            assert_eq!(c.embedding(i), &[2.0]);
        }
        c.validate().unwrap();
    }

    #[test]
    fn mean_gradient_uses_counts() {
        let mut c = cloud();
        let cfg = DensifyConfig::default();
        let r = densify_and_prune(&mut c, &[3e-4, 0.0, 0.0], &[2, 1, 1], &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.cloned, 0);
    }

    #[test]
    fn schedule() {
        let cfg = DensifyConfig::default();
        assert!(!cfg.due(500));
        assert!(cfg.due(600));
        assert!(!cfg.due(650));
        assert!(!cfg.due(15_000));
    }
}
