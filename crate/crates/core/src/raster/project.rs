//! EWA projection of a 3D Gaussian onto the image plane.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::Camera;

pub const NEAR_PLANE: f64 = 0.01;
pub const DILATION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub p_cam: Vector3<f64>,
    pub mean2d: [f64; 2],
    /// Dilated screen covariance `(xx, xy, yy)`.
    pub cov2d: [f64; 3],
    pub depth_z: f64,
    pub depth_euclidean: f64,
    /// `J W`.
    pub t: Matrix2x3<f64>,
}

fn jacobian(p: &Vector3<f64>, cam: &Camera) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z))
}

/// Projects `mu` with world covariance `sigma`; `None` when in front of the near plane.
pub fn project(mu: &Vector3<f64>, sigma: &Matrix3<f64>, cam: &Camera) -> Option<Projection> {
    let w = cam.rotation_w2c();
    let o = cam.center();
    let p = w * (mu - o);
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let t = jacobian(&p, cam) * w;
    let c = t * sigma * t.transpose();
    Some(Projection {
        p_cam: p,
        mean2d: [cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy],
        cov2d: [c[(0, 0)] + DILATION, 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)] + DILATION],
        depth_z: p.z,
        depth_euclidean: (mu - o).norm(),
        t,
    })
}

/// Backward of [`project`] for the mean and covariance outputs.
///
/// `d_cov2d` is the full-matrix gradient (each off-diagonal copy carries its
/// own partial). Returns `(dL/dmu, dL/dSigma)` with `dL/dSigma` in the same
/// full-matrix convention.
pub fn project_backward(
    proj: &Projection,
    sigma: &Matrix3<f64>,
    cam: &Camera,
    d_mean2d: [f64; 2],
    d_cov2d: &Matrix2<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let w = cam.rotation_w2c();
    let p = proj.p_cam;
    let (x, y, z) = (p.x, p.y, p.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let j = jacobian(&p, cam);
    let dm = Vector2::from(d_mean2d);
    let mut d_p = j.transpose() * dm;

    let d_sigma = proj.t.transpose() * d_cov2d * proj.t;
    let d_t = (d_cov2d + d_cov2d.transpose()) * proj.t * sigma;
    let d_j = d_t * w.transpose();
    let (z2, z3) = (z * z, z * z * z);
    d_p.x += -d_j[(0, 2)] * fx / z2;
    d_p.y += -d_j[(1, 2)] * fy / z2;
    d_p.z += -d_j[(0, 0)] * fx / z2 + d_j[(0, 2)] * 2.0 * fx * x / z3 - d_j[(1, 1)] * fy / z2 + d_j[(1, 2)] * 2.0 * fy * y / z3;
    (w.transpose() * d_p, d_sigma)
}
