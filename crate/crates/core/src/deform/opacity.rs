//! Additive attribute update `G_t = G + dG` and the opacity modes.

use ndarray::{Array2, ArrayView2};

use super::field::DeltaLayout;
use crate::error::{Error, Result};
use crate::gaussian::activation::{sigmoid, sigmoid_grad_from_output, ActivatedCloud};
use crate::gaussian::covariance::{normalize_quat_backward, quat_norm};
use crate::gaussian::{logit, sh_coeff_count};

/// How the opacity delta enters the rendered opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpacityMode {
    /// `sigmoid(logit + dalpha)`.
    Standard,
    /// `sigmoid(logit + dalpha) * sigmoid(k * dalpha)`.
    Aggressive { k: f64 },
    /// Opacity deformation disabled: canonical opacity is rendered.
    Bypass,
}

impl OpacityMode {
    /// Aggressive reduction with strength `k`; `k = 0` disables the strategy.
    pub fn aggressive(k: f64) -> Self {
        if k == 0.0 {
            OpacityMode::Standard
        } else {
            OpacityMode::Aggressive { k }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpacityMode::Standard => "standard",
            OpacityMode::Aggressive { .. } => "aggressive",
            OpacityMode::Bypass => "bypass",
        }
    }

    pub fn tag(&self) -> u32 {
        match self {
            OpacityMode::Standard => 0,
            OpacityMode::Aggressive { .. } => 1,
            OpacityMode::Bypass => 2,
        }
    }

    pub fn k(&self) -> f64 {
        match self {
            OpacityMode::Aggressive { k } => *k,
            _ => 0.0,
        }
    }

    pub fn from_tag(tag: u32, k: f64) -> Result<Self> {
        match tag {
            0 => Ok(OpacityMode::Standard),
            1 => Ok(OpacityMode::aggressive(k)),
            2 => Ok(OpacityMode::Bypass),
            _ => Err(Error::Format(format!("bad opacity mode tag {tag}"))),
        }
    }

    pub fn parse(name: &str, k: f64) -> Result<Self> {
        match name {
            "standard" => Ok(OpacityMode::Standard),
            "aggressive" => Ok(OpacityMode::aggressive(k)),
            "bypass" => Ok(OpacityMode::Bypass),
            other => Err(Error::Config(format!("unknown opacity mode `{other}`"))),
        }
    }
}

/// Rendered opacity from the canonical logit and the delta, with partials
/// `(value, d/d logit, d/d dalpha)`.
pub fn opacity_with_partials(opacity_logit: f64, dalpha: f64, mode: OpacityMode) -> (f64, f64, f64) {
    match mode {
        OpacityMode::Bypass => (sigmoid(opacity_logit), sigmoid_grad_from_output(sigmoid(opacity_logit)), 0.0),
        OpacityMode::Standard => {
            let a = sigmoid(opacity_logit + dalpha);
            let g = sigmoid_grad_from_output(a);
            (a, g, g)
        }
        OpacityMode::Aggressive { k } => {
            let a = sigmoid(opacity_logit + dalpha);
            let p = sigmoid(k * dalpha);
            let ga = sigmoid_grad_from_output(a);
            let gp = sigmoid_grad_from_output(p);
            (a * p, ga * p, ga * p + a * k * gp)
        }
    }
}

/// Rendered opacity for activated canonical opacity `alpha`.
pub fn deformed_opacity(alpha: f64, dalpha: f64, mode: OpacityMode) -> f64 {
    opacity_with_partials(logit(alpha), dalpha, mode).0
}

/// Gaussians at time `t`, plus what the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedCloud {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub scales: Vec<[f64; 3]>,
    /// Unit quaternions.
    pub rotations: Vec<[f64; 4]>,
    /// `q_canonical + dq` before renormalization (or the canonical unit quaternion on fallback).
    pub rotations_pre: Vec<[f64; 4]>,
    pub rotation_fallback: Vec<bool>,
    pub opacities: Vec<f64>,
    /// `(d opacity / d logit, d opacity / d dalpha)`.
    pub opacity_partials: Vec<(f64, f64)>,
    pub sh: Vec<f64>,
    pub sh_degree: usize,
    pub degenerate_rotations: usize,
}

impl DeformedCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let w = sh_coeff_count(self.sh_degree) * 3;
        &self.sh[i * w..(i + 1) * w]
    }
}

/// Gradient with respect to deformed attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedGrad {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    /// With respect to the unit quaternion.
    pub rotations: Vec<[f64; 4]>,
    pub opacities: Vec<f64>,
    pub sh: Vec<f64>,
}

impl DeformedGrad {
    pub fn zeros(n: usize, sh_width: usize) -> Self {
        DeformedGrad {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacities: vec![0.0; n],
            sh: vec![0.0; n * sh_width],
        }
    }
}

/// Canonical gradients produced by [`apply_delta_backward`], row-major like `GaussianCloud`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalGrad {
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

const DEGENERATE_QUAT: f64 = 1e-8;

/// Applies `deltas` (`N x layout.width()`) to the activated canonical field.
pub fn apply_delta(view: &ActivatedCloud, deltas: ArrayView2<f64>, layout: DeltaLayout, mode: OpacityMode) -> Result<DeformedCloud> {
    let n = view.len();
    if deltas.dim() != (n, layout.width()) {
        return Err(Error::Shape(format!("deltas {:?} vs {n} gaussians of width {}", deltas.dim(), layout.width())));
    }
    let sh_w = sh_coeff_count(view.sh_degree) * 3;
    if layout.sh_width != sh_w && layout.sh_width != 3 {
        return Err(Error::Shape(format!("SH delta width {} vs {sh_w}", layout.sh_width)));
    }
    let mut out = DeformedCloud {
        positions: Vec::with_capacity(n),
        log_scales: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        rotations_pre: Vec::with_capacity(n),
        rotation_fallback: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        opacity_partials: Vec::with_capacity(n),
        sh: view.sh.clone(),
        sh_degree: view.sh_degree,
        degenerate_rotations: 0,
    };
    for i in 0..n {
        let d = deltas.row(i);
        let p = view.positions[i];
        out.positions.push([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
        let ls = view.log_scales[i];
        let ls = [ls[0] + d[3], ls[1] + d[4], ls[2] + d[5]];
        out.log_scales.push(ls);
        out.scales.push(ls.map(f64::exp));
        let q = view.rotations[i];
        let pre = [q[0] + d[6], q[1] + d[7], q[2] + d[8], q[3] + d[9]];
        let norm = quat_norm(pre);
        if norm.is_finite() && norm > DEGENERATE_QUAT {
            out.rotations.push(pre.map(|v| v / norm));
            out.rotations_pre.push(pre);
            out.rotation_fallback.push(false);
        } else {
            let qn = quat_norm(q);
            out.rotations.push(q.map(|v| v / qn));
            out.rotations_pre.push(q);
            out.rotation_fallback.push(true);
            out.degenerate_rotations += 1;
        }
        let (a, da_dl, da_dd) = opacity_with_partials(view.opacity_logits[i], d[DeltaLayout::ALPHA], mode);
        out.opacities.push(a);
        out.opacity_partials.push((da_dl, da_dd));
        for j in 0..layout.sh_width {
            out.sh[i * sh_w + j] += d[DeltaLayout::SH + j];
        }
    }
    if out.degenerate_rotations > 0 {
        log::debug!("{} degenerate rotations fell back to canonical", out.degenerate_rotations);
    }
    Ok(out)
}

/// Backward of [`apply_delta`]: splits deformed-attribute gradients into
/// canonical gradients and delta gradients (`N x layout.width()`).
pub fn apply_delta_backward(
    view: &ActivatedCloud,
    deformed: &DeformedCloud,
    layout: DeltaLayout,
    grad: &DeformedGrad,
) -> (CanonicalGrad, Array2<f64>) {
    let n = view.len();
    let sh_w = sh_coeff_count(view.sh_degree) * 3;
    let mut canon = CanonicalGrad {
        positions: Vec::with_capacity(n * 3),
        log_scales: Vec::with_capacity(n * 3),
        rotations: Vec::with_capacity(n * 4),
        opacity_logits: Vec::with_capacity(n),
        sh: grad.sh.clone(),
    };
    let mut d_delta = Array2::zeros((n, layout.width()));
    for i in 0..n {
        let mut row = d_delta.row_mut(i);
        let dp = grad.positions[i];
        let ds = grad.log_scales[i];
        canon.positions.extend_from_slice(&dp);
        canon.log_scales.extend_from_slice(&ds);
        for k in 0..3 {
            row[DeltaLayout::MU + k] = dp[k];
            row[DeltaLayout::SCALE + k] = ds[k];
        }
        // q_t = normalize(q_hat + dq); q_hat = normalize(q_raw)
        let d_pre = normalize_quat_backward(deformed.rotations_pre[i], grad.rotations[i]);
        let d_hat = if deformed.rotation_fallback[i] {
            d_pre
        } else {
            for k in 0..4 {
                row[DeltaLayout::ROT + k] = d_pre[k];
            }
            d_pre
        };
        canon.rotations.extend_from_slice(&normalize_quat_backward(view.raw_rotations[i], d_hat));
        let (da_dl, da_dd) = deformed.opacity_partials[i];
        canon.opacity_logits.push(grad.opacities[i] * da_dl);
        row[DeltaLayout::ALPHA] = grad.opacities[i] * da_dd;
        for j in 0..layout.sh_width {
            row[DeltaLayout::SH + j] = grad.sh[i * sh_w + j];
        }
    }
    (canon, d_delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{activated_view, GaussianCloud};
    use ndarray::Array2;

    #[test]
    fn zero_delta_halves_under_aggressive() {
        for k in [0.5, 3.0, 10.0, 20.0] {
            let a = deformed_opacity(0.6, 0.0, OpacityMode::aggressive(k));
            assert!((a - 0.30).abs() < 1e-12);
        }
    }

    #[test]
    fn large_negative_delta_vanishes() {
        let a = deformed_opacity(0.9, -60.0, OpacityMode::aggressive(10.0));
        assert!(a < 1e-200);
    }

    #[test]
    fn aggressive_reference_value() {
        // independent evaluation: sigmoid(0.2) * sigmoid(2.0)
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let want = sig(0.2) * sig(2.0);
        let got = deformed_opacity(0.5, 0.2, OpacityMode::aggressive(10.0));
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.48429).abs() < 1e-5);
    }

    #[test]
    fn k_zero_is_standard() {
        assert_eq!(OpacityMode::aggressive(0.0), OpacityMode::Standard);
        let a = deformed_opacity(0.6, 0.7, OpacityMode::aggressive(0.0));
        assert_eq!(a, deformed_opacity(0.6, 0.7, OpacityMode::Standard));
    }

    #[test]
    fn bypass_keeps_canonical() {
        let a = deformed_opacity(0.37, -3.0, OpacityMode::Bypass);
        assert!((a - 0.37).abs() < 1e-12);
    }

    #[test]
    fn partials_match_finite_differences() {
        let h = 1e-6;
        for mode in [OpacityMode::Standard, OpacityMode::aggressive(10.0), OpacityMode::Bypass] {
            for (l, d) in [(0.3, -0.2), (-1.5, 0.4), (2.0, -1.0)] {
                let (_, gl, gd) = opacity_with_partials(l, d, mode);
                let f = |l: f64, d: f64| opacity_with_partials(l, d, mode).0;
                assert!((gl - (f(l + h, d) - f(l - h, d)) / (2.0 * h)).abs() < 1e-8);
                assert!((gd - (f(l, d + h) - f(l, d - h)) / (2.0 * h)).abs() < 1e-8);
            }
        }
    }

    fn sample_view() -> ActivatedCloud {
        let mut c = GaussianCloud::new(1, 1);
        let sh: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        c.push_raw([1.0, 2.0, 3.0], [-0.5, 0.1, 0.2], [0.9, 0.1, -0.3, 0.2], 0.4, &sh, &[0.0]);
        c.push_raw([-1.0, 0.0, 0.5], [0.3, 0.3, -0.1], [0.2, 0.8, 0.1, -0.4], -1.0, &sh, &[0.0]);
        activated_view(&c).unwrap()
    }

    #[test]
    fn zero_delta_is_identity() {
        let v = sample_view();
        let layout = DeltaLayout { sh_width: 12 };
        let d = apply_delta(&v, Array2::zeros((2, layout.width())).view(), layout, OpacityMode::Standard).unwrap();
        assert_eq!(d.positions, v.positions);
        assert_eq!(d.scales, v.scales);
        assert_eq!(d.sh, v.sh);
        for i in 0..2 {
            assert!((d.opacities[i] - v.opacities[i]).abs() < 1e-15);
            for k in 0..4 {
                assert!((d.rotations[i][k] - v.rotations[i][k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cancelling_rotation_delta_falls_back() {
        let v = sample_view();
        let layout = DeltaLayout { sh_width: 12 };
        let mut deltas = Array2::zeros((2, layout.width()));
        for k in 0..4 {
            deltas[(0, DeltaLayout::ROT + k)] = -v.rotations[0][k];
        }
        let d = apply_delta(&v, deltas.view(), layout, OpacityMode::Standard).unwrap();
        assert_eq!(d.degenerate_rotations, 1);
        assert!(d.rotation_fallback[0]);
        assert!((quat_norm(d.rotations[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let v = sample_view();
        let layout = DeltaLayout { sh_width: 12 };
        let deltas = Array2::from_shape_fn((2, layout.width()), |(i, j)| ((i * 23 + j) as f64 * 0.7).sin() * 0.2);
        let mode = OpacityMode::aggressive(10.0);
        let mut g = DeformedGrad::zeros(2, 12);
        for i in 0..2 {
            g.positions[i] = [0.3, -0.1, 0.5];
            g.log_scales[i] = [0.2, 0.4, -0.3];
            g.rotations[i] = [0.7, -0.2, 0.1, 0.6];
            g.opacities[i] = -0.8;
        }
        for (j, x) in g.sh.iter_mut().enumerate() {
            *x = (j as f64 * 0.41).cos();
        }
        let loss = |d: &DeformedCloud| {
            let mut s = 0.0;
            for i in 0..2 {
                for k in 0..3 {
                    s += d.positions[i][k] * g.positions[i][k] + d.log_scales[i][k] * g.log_scales[i][k];
                }
                for k in 0..4 {
                    s += d.rotations[i][k] * g.rotations[i][k];
                }
                s += d.opacities[i] * g.opacities[i];
            }
            s + d.sh.iter().zip(&g.sh).map(|(a, b)| a * b).sum::<f64>()
        };
        let d = apply_delta(&v, deltas.view(), layout, mode).unwrap();
        let (_, d_delta) = apply_delta_backward(&v, &d, layout, &g);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..layout.width() {
                let mut p = deltas.clone();
                let mut m = deltas.clone();
                p[(i, j)] += h;
                m[(i, j)] -= h;
                let fp = loss(&apply_delta(&v, p.view(), layout, mode).unwrap());
                let fm = loss(&apply_delta(&v, m.view(), layout, mode).unwrap());
                assert!((d_delta[(i, j)] - (fp - fm) / (2.0 * h)).abs() < 1e-7, "({i},{j})");
            }
        }
    }

    #[test]
    fn aggressive_is_monotone_and_bounded_on_grid() {
        let mode = OpacityMode::aggressive(10.0);
        for a in [0.01, 0.2, 0.5, 0.8, 0.99] {
            let mut prev = 0.0;
            for step in 0..400 {
                let da = -8.0 + step as f64 * 0.04;
                let v = deformed_opacity(a, da, mode);
                assert!(v > prev && v > 0.0 && v < 1.0);
                prev = v;
            }
        }
    }
}
