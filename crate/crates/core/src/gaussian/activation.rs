//! Raw parameter -> activated attribute conventions.

use super::cloud::GaussianCloud;
use super::covariance::normalize_quat;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`sigmoid`] expressed through its output.
pub fn sigmoid_grad_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Activated attributes of a cloud: `exp` scales, `sigmoid` opacities,
/// normalized rotations. Raw log-scales and logits ride along for the
/// deformation step which works in raw space.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivatedCloud {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub raw_rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub opacities: Vec<f64>,
    pub sh: Vec<f64>,
    pub sh_degree: usize,
}

impl ActivatedCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let w = super::sh_coeff_count(self.sh_degree) * 3;
        &self.sh[i * w..(i + 1) * w]
    }
}

pub fn activated_view(cloud: &GaussianCloud) -> Result<ActivatedCloud> {
    let n = cloud.len();
    let mut out = ActivatedCloud {
        positions: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        raw_rotations: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        sh: cloud.sh_coeffs.clone(),
        sh_degree: cloud.sh_degree(),
    };
    for i in 0..n {
        let p = cloud.position(i);
        let ls = cloud.log_scale(i);
        let q = cloud.rotation(i);
        let o = cloud.opacity_logits[i];
        let bad = |attribute| Error::NonFiniteParameter { index: i, attribute };
        if !p.iter().all(|v| v.is_finite()) {
            return Err(bad("position"));
        }
        if !ls.iter().all(|v| v.is_finite()) {
            return Err(bad("log_scale"));
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(bad("rotation"));
        }
        if !o.is_finite() {
            return Err(bad("opacity_logit"));
        }
        if !cloud.sh_of(i).iter().all(|v| v.is_finite()) {
            return Err(bad("sh"));
        }
        out.positions.push(p);
        out.log_scales.push(ls);
        out.scales.push(ls.map(f64::exp));
        out.rotations.push(normalize_quat(q)?);
        out.raw_rotations.push(q);
        out.opacity_logits.push(o);
        out.opacities.push(sigmoid(o));
    }
    Ok(out)
}
