//! Deformed Gaussians -> screen splats, and the matching backward pass.

use nalgebra::{Matrix2, Matrix3, Vector3};

use super::camera::Camera;
use super::project::{project, project_backward, Projection};
use super::render::{render, render_backward, screen_gradient_norms, RenderOutput, Splat2D, SplatGrads};
use super::image::Image;
use crate::deform::{DeformedCloud, DeformedGrad};
use crate::error::Result;
use crate::gaussian::covariance::{covariance_backward, covariance_from_unit};
use crate::gaussian::sh::{eval_sh_backward, eval_sh_color};
use crate::gaussian::sh_coeff_count;
use crate::par;

#[derive(Clone, Debug)]
struct Geometry {
    gaussian: usize,
    proj: Projection,
    sigma: Matrix3<f64>,
    view: Vector3<f64>,
}

/// Splats of the visible Gaussians plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct SplatSet {
    pub splats: Vec<Splat2D>,
    geometry: Vec<Geometry>,
    /// Gaussians behind the near plane.
    pub culled: usize,
    pub total: usize,
}

impl SplatSet {
    /// Source Gaussian of each splat.
    pub fn gaussian_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.geometry.iter().map(|g| g.gaussian)
    }
}

pub fn prepare_splats(cloud: &DeformedCloud, cam: &Camera) -> SplatSet {
    let o = cam.center();
    let items = par::map_range(cloud.len(), |i| {
        let mu = Vector3::from(cloud.positions[i]);
        let sigma = covariance_from_unit(cloud.scales[i], cloud.rotations[i]).to_matrix();
        let proj = project(&mu, &sigma, cam)?;
        let view = mu - o;
        let dir = view / view.norm();
        let color = eval_sh_color(cloud.sh_of(i), [dir.x, dir.y, dir.z], cloud.sh_degree);
        let splat = Splat2D {
            index: i,
            mean2d: proj.mean2d,
            cov2d: proj.cov2d,
            depth_euclidean: proj.depth_euclidean,
            depth_z: proj.depth_z,
            color,
            alpha: cloud.opacities[i],
        };
        Some((splat, Geometry { gaussian: i, proj, sigma, view }))
    });
    let mut set = SplatSet { splats: Vec::new(), geometry: Vec::new(), culled: 0, total: cloud.len() };
    for item in items {
        match item {
            Some((s, g)) => {
                set.splats.push(s);
                set.geometry.push(g);
            }
            None => set.culled += 1,
        }
    }
    set
}

/// Maps splat gradients back onto the deformed attributes. Culled Gaussians
/// receive exact zeros.
pub fn splat_backward(cloud: &DeformedCloud, set: &SplatSet, cam: &Camera, grads: &SplatGrads) -> DeformedGrad {
    let sh_w = sh_coeff_count(cloud.sh_degree) * 3;
    let mut out = DeformedGrad::zeros(cloud.len(), sh_w);
    let per = par::map_range(set.splats.len(), |k| {
        let g = &set.geometry[k];
        let i = g.gaussian;
        let gc = grads.cov2d[k];
        let d_cov2d = Matrix2::new(gc[0], gc[1], gc[1], gc[2]);
        let (mut d_mu, d_sigma) = project_backward(&g.proj, &g.sigma, cam, grads.mean2d[k], &d_cov2d);
        let mut d_sh = vec![0.0; sh_w];
        let dist = g.view.norm();
        let dir = g.view / dist;
        let d_dir = Vector3::from(eval_sh_backward(cloud.sh_of(i), [dir.x, dir.y, dir.z], cloud.sh_degree, grads.color[k], &mut d_sh));
        d_mu += (d_dir - dir * dir.dot(&d_dir)) / dist;
        let s = cloud.scales[i];
        let (ds, dq) = covariance_backward(s, cloud.rotations[i], &d_sigma);
        (i, d_mu, [ds[0] * s[0], ds[1] * s[1], ds[2] * s[2]], dq, d_sh, grads.alpha[k])
    });
    for (i, d_mu, d_ls, dq, d_sh, d_alpha) in per {
        out.positions[i] = [d_mu.x, d_mu.y, d_mu.z];
        out.log_scales[i] = d_ls;
        out.rotations[i] = dq;
        out.opacities[i] = d_alpha;
        out.sh[i * sh_w..(i + 1) * sh_w].copy_from_slice(&d_sh);
    }
    out
}

/// A rendered frame together with its splats, ready for backward.
#[derive(Clone, Debug)]
pub struct Frame {
    pub set: SplatSet,
    pub output: RenderOutput,
}

pub fn render_cloud(cloud: &DeformedCloud, cam: &Camera, keep_state: bool) -> Frame {
    let set = prepare_splats(cloud, cam);
    let output = render(&set.splats, cam, keep_state);
    Frame { set, output }
}

/// Gradients on the deformed attributes and per-Gaussian screen-space
/// positional gradient norms.
pub fn render_cloud_backward(cloud: &DeformedCloud, frame: &Frame, cam: &Camera, d_color: &Image) -> Result<(DeformedGrad, Vec<f64>)> {
    let grads = render_backward(&frame.set.splats, &frame.output, cam, d_color)?;
    let norms_visible = screen_gradient_norms(&grads, cam);
    let mut norms = vec![0.0; cloud.len()];
    for (k, g) in frame.set.geometry.iter().enumerate() {
        norms[g.gaussian] = norms_visible[k];
    }
    Ok((splat_backward(cloud, &frame.set, cam, &grads), norms))
}
