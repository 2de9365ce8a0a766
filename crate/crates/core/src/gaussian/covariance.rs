use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Symmetric 3x3 covariance stored as `(xx, xy, xz, yy, yz, zz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance3D(pub [f64; 6]);

impl Covariance3D {
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// Symmetrizes `m` before storing its upper triangle.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let s = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        Covariance3D([m[(0, 0)], s(0, 1), s(0, 2), m[(1, 1)], s(1, 2), m[(2, 2)]])
    }
}

/// Normalizes a `(w, x, y, z)` quaternion.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = quat_norm(q);
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::InvalidRotation);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Backward of `q / |q|`: maps a gradient on the unit quaternion to the raw one.
pub fn normalize_quat_backward(q_raw: [f64; 4], d_unit: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q_raw);
    let u = [q_raw[0] / n, q_raw[1] / n, q_raw[2] / n, q_raw[3] / n];
    let dot = u[0] * d_unit[0] + u[1] * d_unit[1] + u[2] * d_unit[2] + u[3] * d_unit[3];
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (d_unit[k] - u[k] * dot) / n;
    }
    out
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotmat(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`quat_to_rotmat`] with respect to `w, x, y, z`.
fn rotmat_partials(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    let (w2, x2, y2, z2) = (2.0 * w, 2.0 * x, 2.0 * y, 2.0 * z);
    [
        Matrix3::new(0.0, -z2, y2, z2, 0.0, -x2, -y2, x2, 0.0),
        Matrix3::new(0.0, y2, z2, y2, -2.0 * x2, -w2, z2, w2, -2.0 * x2),
        Matrix3::new(-2.0 * y2, x2, w2, x2, 0.0, z2, -w2, z2, -2.0 * y2),
        Matrix3::new(-2.0 * z2, -w2, x2, w2, -2.0 * z2, y2, x2, y2, 0.0),
    ]
}

/// `R diag(s) diag(s) R^T` with `R` the rotation of the normalized `q`.
pub fn build_covariance(s: [f64; 3], q: [f64; 4]) -> Result<Covariance3D> {
    let u = normalize_quat(q)?;
    Ok(covariance_from_unit(s, u))
}

pub(crate) fn covariance_from_unit(s: [f64; 3], u: [f64; 4]) -> Covariance3D {
    let r = quat_to_rotmat(u);
    let m = r * Matrix3::from_diagonal(&s.into());
    Covariance3D::from_matrix(&(m * m.transpose()))
}

/// Backward of [`covariance_from_unit`].
///
/// `d_sigma` holds `dL/dSigma_ij` with the two off-diagonal copies treated as
/// independent entries. Returns gradients for the activated scale and the
/// unit quaternion.
pub fn covariance_backward(s: [f64; 3], u: [f64; 4], d_sigma: &Matrix3<f64>) -> ([f64; 3], [f64; 4]) {
    let r = quat_to_rotmat(u);
    let m = r * Matrix3::from_diagonal(&s.into());
    let d_m = (d_sigma + d_sigma.transpose()) * m;
    let mut ds = [0.0; 3];
    let mut d_r = Matrix3::zeros();
    for k in 0..3 {
        for j in 0..3 {
            ds[k] += d_m[(j, k)] * r[(j, k)];
            d_r[(j, k)] = d_m[(j, k)] * s[k];
        }
    }
    let partials = rotmat_partials(u);
    let mut dq = [0.0; 4];
    for (k, p) in partials.iter().enumerate() {
        dq[k] = d_r.component_mul(p).sum();
    }
    (ds, dq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn isotropic_unit_is_identity() {
        let c = build_covariance([1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.to_matrix(), Matrix3::identity());
    }

    #[test]
    fn axis_aligned_squares_scales() {
        let c = build_covariance([2.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.0, [4.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        // Oracle: explicit rotation matrix for +90 degrees about z.
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = rot * Matrix3::from_diagonal(&[4.0, 1.0, 1.0].into()) * rot.transpose();
        let h = std::f64::consts::FRAC_PI_4;
        let c = build_covariance([2.0, 1.0, 1.0], [h.cos(), 0.0, 0.0, h.sin()]).unwrap();
        assert_abs_diff_eq!(c.to_matrix(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(c.to_matrix(), Matrix3::from_diagonal(&[1.0, 4.0, 1.0].into()), epsilon = 1e-12);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(build_covariance([1.0; 3], [0.0; 4]), Err(Error::InvalidRotation)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = [0.7, 1.3, 0.4];
        let q = normalize_quat([0.8, -0.3, 0.5, 0.1]).unwrap();
        let g = Matrix3::new(0.3, -0.2, 0.5, 0.1, 0.9, -0.4, 0.25, 0.6, -0.7);
        let loss_full = |s: [f64; 3], q: [f64; 4]| {
            let r = quat_to_rotmat(q);
            let m = r * Matrix3::from_diagonal(&s.into());
            (m * m.transpose()).component_mul(&g).sum()
        };
        let (ds, dq) = covariance_backward(s, q, &g);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = s;
            let mut b = s;
            a[k] += h;
            b[k] -= h;
            let fd = (loss_full(a, q) - loss_full(b, q)) / (2.0 * h);
            assert_abs_diff_eq!(ds[k], fd, epsilon = 1e-6);
        }
        for k in 0..4 {
            let mut a = q;
            let mut b = q;
            a[k] += h;
            b[k] -= h;
            let fd = (loss_full(s, a) - loss_full(s, b)) / (2.0 * h);
            assert_abs_diff_eq!(dq[k], fd, epsilon = 1e-6);
        }
    }

    fn sorted_eigs(m: Matrix3<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    proptest! {
        #[test]
        fn double_cover_invariance(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                                   s0 in 0.05f64..3.0, s1 in 0.05f64..3.0, s2 in 0.05f64..3.0) {
            prop_assume!(quat_norm([w, x, y, z]) > 1e-3);
            let a = build_covariance([s0, s1, s2], [w, x, y, z]).unwrap();
            let b = build_covariance([s0, s1, s2], [-w, -x, -y, -z]).unwrap();
            for k in 0..6 {
                prop_assert!((a.0[k] - b.0[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn eigenvalues_are_squared_scales(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                                          s0 in 0.05f64..3.0, s1 in 0.05f64..3.0, s2 in 0.05f64..3.0) {
            prop_assume!(quat_norm([w, x, y, z]) > 1e-3);
            let c = build_covariance([s0, s1, s2], [w, x, y, z]).unwrap();
            let got = sorted_eigs(c.to_matrix());
            let mut want = vec![s0 * s0, s1 * s1, s2 * s2];
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for k in 0..3 {
                prop_assert!((got[k] - want[k]).abs() < 1e-6);
                prop_assert!(got[k] >= -1e-9);
            }
        }
    }
}
