//! Real spherical-harmonic color, degrees 0 through 3.
//!
//! Coefficients are stored coefficient-major: `sh[k * 3 + channel]`, DC first.

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values for `dir`, zero beyond `degree`.
pub fn sh_basis(degree: usize, dir: [f64; 3]) -> [f64; 16] {
    sh_basis_with_grad(degree, dir).0
}

/// Basis values and their gradients with respect to the (unnormalized) direction components.
pub fn sh_basis_with_grad(degree: usize, dir: [f64; 3]) -> ([f64; 16], [[f64; 3]; 16]) {
    let [x, y, z] = dir;
    let mut b = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let c = SH_C2;
        b[4] = c[0] * x * y;
        b[5] = c[1] * y * z;
        b[6] = c[2] * (2.0 * zz - xx - yy);
        b[7] = c[3] * x * z;
        b[8] = c[4] * (xx - yy);
        g[4] = [c[0] * y, c[0] * x, 0.0];
        g[5] = [0.0, c[1] * z, c[1] * y];
        g[6] = [-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z];
        g[7] = [c[3] * z, 0.0, c[3] * x];
        g[8] = [2.0 * c[4] * x, -2.0 * c[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let c = SH_C3;
        b[9] = c[0] * y * (3.0 * xx - yy);
        b[10] = c[1] * x * y * z;
        b[11] = c[2] * y * (4.0 * zz - xx - yy);
        b[12] = c[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = c[4] * x * (4.0 * zz - xx - yy);
        b[14] = c[5] * z * (xx - yy);
        b[15] = c[6] * x * (xx - 3.0 * yy);
        g[9] = [6.0 * c[0] * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0];
        g[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
        g[11] = [-2.0 * c[2] * x * y, c[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * c[2] * y * z];
        g[12] = [-6.0 * c[3] * x * z, -6.0 * c[3] * y * z, c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)];
        g[13] = [c[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * c[4] * x * y, 8.0 * c[4] * x * z];
        g[14] = [2.0 * c[5] * x * z, -2.0 * c[5] * y * z, c[5] * (xx - yy)];
        g[15] = [c[6] * (3.0 * xx - 3.0 * yy), -6.0 * c[6] * x * y, 0.0];
    }
    (b, g)
}

/// View-dependent RGB: basis dot coefficients, plus 0.5, clamped at zero.
pub fn eval_sh_color(sh: &[f64], view_dir: [f64; 3], degree: usize) -> [f64; 3] {
    let basis = sh_basis(degree, view_dir);
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().enumerate().take(sh_coeff_count(degree)) {
        for c in 0..3 {
            rgb[c] += b * sh[k * 3 + c];
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// Backward of [`eval_sh_color`]. Channels clamped in the forward pass pass no gradient.
/// Accumulates into `d_sh` and returns the gradient on `view_dir`.
pub fn eval_sh_backward(sh: &[f64], view_dir: [f64; 3], degree: usize, d_rgb: [f64; 3], d_sh: &mut [f64]) -> [f64; 3] {
    let (basis, grad) = sh_basis_with_grad(degree, view_dir);
    let n = sh_coeff_count(degree);
    let mut raw = [0.5; 3];
    for k in 0..n {
        for c in 0..3 {
            raw[c] += basis[k] * sh[k * 3 + c];
        }
    }
    let live: [f64; 3] = std::array::from_fn(|c| if raw[c] < 0.0 { 0.0 } else { d_rgb[c] });
    let mut d_dir = [0.0; 3];
    for k in 0..n {
        let mut dk = 0.0;
        for c in 0..3 {
            d_sh[k * 3 + c] += basis[k] * live[c];
            dk += sh[k * 3 + c] * live[c];
        }
        for a in 0..3 {
            d_dir[a] += dk * grad[k][a];
        }
    }
    d_dir
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dc_zero_gives_mid_gray() {
        let c = eval_sh_color(&[0.0; 3], [0.3, -0.2, 0.93], 0);
        assert_eq!(c, [0.5; 3]);
    }

    #[test]
    fn dc_inverse_gives_white() {
        let v = (1.0 - 0.5) / 0.282_094_79;
        let c = eval_sh_color(&[v; 3], [0.0, 0.0, 1.0], 0);
        for ch in c {
            assert_abs_diff_eq!(ch, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn degree_zero_ignores_direction() {
        let sh = [0.2, -0.4, 0.9];
        let a = eval_sh_color(&sh, [1.0, 0.0, 0.0], 0);
        let b = eval_sh_color(&sh, [0.0, -0.6, 0.8], 0);
        assert_eq!(a, b);
    }

    #[test]
    fn degree_one_z_lobe_difference() {
        // Brute force: only the z basis (index 2) carries a coefficient.
        let coeff = [0.1, 0.2, 0.3];
        let mut sh = vec![0.0; 12];
        sh[6..9].copy_from_slice(&coeff);
        let up = eval_sh_color(&sh, [0.0, 0.0, 1.0], 1);
        let down = eval_sh_color(&sh, [0.0, 0.0, -1.0], 1);
        for c in 0..3 {
            assert_abs_diff_eq!(up[c] - down[c], 2.0 * 0.488_602_511_902_919_9 * coeff[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_colors_clamp() {
        let sh = [-5.0, -5.0, -5.0];
        assert_eq!(eval_sh_color(&sh, [0.0, 0.0, 1.0], 0), [0.0; 3]);
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let dir = [0.31, -0.52, 0.77];
        let (_, g) = sh_basis_with_grad(3, dir);
        let h = 1e-6;
        for a in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[a] += h;
            m[a] -= h;
            let bp = sh_basis(3, p);
            let bm = sh_basis(3, m);
            for k in 0..16 {
                assert_abs_diff_eq!(g[k][a], (bp[k] - bm[k]) / (2.0 * h), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn color_backward_matches_finite_differences() {
        let sh: Vec<f64> = (0..48).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.03).collect();
        let dir = [0.2, 0.4, -0.89];
        let w = [0.7, -1.1, 0.4];
        let f = |sh: &[f64], d: [f64; 3]| {
            let c = eval_sh_color(sh, d, 3);
            c[0] * w[0] + c[1] * w[1] + c[2] * w[2]
        };
        let mut d_sh = vec![0.0; 48];
        let d_dir = eval_sh_backward(&sh, dir, 3, w, &mut d_sh);
        let h = 1e-6;
        for i in 0..48 {
            let mut p = sh.clone();
            let mut m = sh.clone();
            p[i] += h;
            m[i] -= h;
            assert_abs_diff_eq!(d_sh[i], (f(&p, dir) - f(&m, dir)) / (2.0 * h), epsilon = 1e-7);
        }
        for a in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[a] += h;
            m[a] -= h;
            assert_abs_diff_eq!(d_dir[a], (f(&sh, p) - f(&sh, m)) / (2.0 * h), epsilon = 1e-7);
        }
    }
}
