//! Analytic moving Gaussians rendered with the reference renderer.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{FrameRecord, InitPoint, SceneDataset, Split};
use crate::deform::{apply_delta, DeltaLayout, OpacityMode};
use crate::error::{Error, Result};
use crate::gaussian::{activated_view, logit, GaussianCloud};
use crate::gaussian::cloud::rgb_to_sh_dc;
use crate::raster::{prepare_splats, project, render_reference, Camera};

pub const CANNED: [&str; 2] = ["orbit-blobs", "dim-shadow"];

/// `mu(t) = center + linear t + amplitude sin(2 pi frequency t + phase)`, per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub center: [f64; 3],
    pub linear: [f64; 3],
    pub amplitude: [f64; 3],
    pub frequency: [f64; 3],
    pub phase: [f64; 3],
}

impl Trajectory {
    pub fn fixed(center: [f64; 3]) -> Self {
        Trajectory { center, linear: [0.0; 3], amplitude: [0.0; 3], frequency: [0.0; 3], phase: [0.0; 3] }
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + self.linear[a] * t + self.amplitude[a] * (2.0 * PI * self.frequency[a] * t + self.phase[a]).sin())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub trajectory: Trajectory,
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub rgb: [f64; 3],
}

/// Cameras evenly spaced on a horizontal ring (world up is +z), all looking at `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub count: usize,
    pub radius: f64,
    pub elevation: f64,
    pub target: [f64; 3],
    pub focal: f64,
    /// Ring positions rendered as the test split.
    pub held_out: Vec<usize>,
}

impl Rig {
    pub fn cameras(&self, width: usize, height: usize) -> Result<Vec<Camera>> {
        (0..self.count)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / self.count as f64;
                let eye = [self.target[0] + self.radius * a.cos(), self.target[1] + self.radius * a.sin(), self.target[2] + self.elevation];
                Camera::look_at(eye, self.target, [0.0, 0.0, 1.0], self.focal, width, height)
            })
            .collect()
    }
}

/// Removes `fraction` of the init points inside an axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct Decimation {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub fraction: f64,
}

impl Decimation {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub rig: Rig,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Jittered copies of each primitive center at `t = 0`.
    pub points_per_primitive: usize,
    pub jitter: f64,
    pub decimation: Option<Decimation>,
}

impl SyntheticSpec {
    pub fn times(&self) -> Vec<f64> {
        if self.frames == 1 {
            vec![0.0]
        } else {
            (0..self.frames).map(|k| k as f64 / (self.frames - 1) as f64).collect()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() || self.frames == 0 || self.rig.count == 0 {
            return Err(Error::Synthetic("need at least one primitive, frame and camera".into()));
        }
        if self.rig.held_out.iter().any(|&h| h >= self.rig.count) || self.rig.held_out.len() >= self.rig.count {
            return Err(Error::Synthetic("held-out cameras must be a strict subset of the rig".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.opacity > 0.0 && p.opacity < 1.0) || p.scale.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Synthetic(format!("primitive {i} needs opacity in (0, 1) and positive scales")));
            }
        }
        if let Some(d) = &self.decimation {
            if !(0.0..=1.0).contains(&d.fraction) {
                return Err(Error::Synthetic(format!("decimation fraction {} outside [0, 1]", d.fraction)));
            }
        }
        Ok(())
    }

    /// The primitives at time `t` as a degree-0 cloud.
    pub fn cloud_at(&self, t: f64) -> GaussianCloud {
        let mut c = GaussianCloud::new(0, 1);
        for p in &self.primitives {
            let sh = p.rgb.map(rgb_to_sh_dc);
            c.push_raw(p.trajectory.at(t), p.scale.map(f64::ln), p.rotation, logit(p.opacity), &sh, &[0.0]);
        }
        c
    }
}

/// Renders every (camera, time) pair with the reference renderer; images are
/// quantized to 8 bits as if stored as PNG.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let cams = spec.rig.cameras(spec.width, spec.height)?;
    let times = spec.times();
    let mut per_time = Vec::with_capacity(times.len());
    for &t in &times {
        let cloud = spec.cloud_at(t);
        for i in 0..cloud.len() {
            let mu = nalgebra::Vector3::from(cloud.position(i));
            let seen = cams.iter().any(|c| {
                project(&mu, &nalgebra::Matrix3::identity(), c)
                    .is_some_and(|p| (0.0..c.width as f64).contains(&p.mean2d[0]) && (0.0..c.height as f64).contains(&p.mean2d[1]))
            });
            if !seen {
                return Err(Error::Synthetic(format!("primitive {i} leaves every view at t = {t}")));
            }
        }
        let view = activated_view(&cloud)?;
        let layout = DeltaLayout { sh_width: 3 };
        per_time.push(apply_delta(&view, Array2::zeros((cloud.len(), layout.width())).view(), layout, OpacityMode::Bypass)?);
    }
    let mut frames = Vec::with_capacity(cams.len() * times.len());
    for (ci, cam) in cams.iter().enumerate() {
        let split = if spec.rig.held_out.contains(&ci) { Split::Test } else { Split::Train };
        for (k, &t) in times.iter().enumerate() {
            let set = prepare_splats(&per_time[k], cam);
            let image = render_reference(&set.splats, cam).quantized();
            frames.push(FrameRecord { camera_id: ci, camera: cam.clone(), time: t, image, split, image_path: None });
        }
    }
    Ok(SceneDataset { frames, init_points: init_points(spec) })
}

fn init_points(spec: &SyntheticSpec) -> Vec<InitPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.jitter.max(0.0)).expect("non-negative jitter");
    let mut points = Vec::with_capacity(spec.primitives.len() * spec.points_per_primitive);
    for p in &spec.primitives {
        let c = p.trajectory.at(0.0);
        for _ in 0..spec.points_per_primitive {
            let position = std::array::from_fn(|a| c[a] + noise.sample(&mut rng));
            points.push(InitPoint { position, rgb: p.rgb });
        }
    }
    if let Some(d) = &spec.decimation {
        let mut inside: Vec<usize> = (0..points.len()).filter(|&i| d.contains(&points[i].position)).collect();
        inside.shuffle(&mut rng);
        let remove = (d.fraction * inside.len() as f64).round() as usize;
        let mut drop = vec![false; points.len()];
        for &i in &inside[..remove] {
            drop[i] = true;
        }
        points = points.into_iter().enumerate().filter(|(i, _)| !drop[*i]).map(|(_, p)| p).collect();
    }
    points
}

fn rot_z(deg: f64) -> [f64; 4] {
    let h = deg.to_radians() / 2.0;
    [h.cos(), 0.0, 0.0, h.sin()]
}

fn blob(center: [f64; 3], scale: [f64; 3], rot_deg: f64, opacity: f64, rgb: [f64; 3]) -> Primitive {
    Primitive { trajectory: Trajectory::fixed(center), scale, rotation: rot_z(rot_deg), opacity, rgb }
}

fn orbit_blobs() -> SyntheticSpec {
    let mut a = blob([-0.4, 0.0, 0.1], [0.2, 0.1, 0.1], 30.0, 0.9, [0.95, 0.3, 0.2]);
    a.trajectory.amplitude = [0.0, 0.3, 0.0];
    a.trajectory.frequency = [0.0, 0.5, 0.0];
    let mut b = blob([0.45, 0.1, -0.1], [0.12, 0.12, 0.18], 0.0, 0.85, [0.2, 0.85, 0.35]);
    b.trajectory.linear = [-0.3, 0.0, 0.15];
    let mut c = blob([0.0, -0.4, 0.2], [0.15, 0.15, 0.1], -20.0, 0.8, [0.25, 0.4, 0.95]);
    c.trajectory.amplitude = [0.25, 0.25, 0.0];
    c.trajectory.frequency = [0.5, 0.5, 0.0];
    c.trajectory.phase = [0.0, PI / 2.0, 0.0];
    let mut d = blob([0.1, 0.4, -0.3], [0.1, 0.22, 0.1], 45.0, 0.9, [0.9, 0.85, 0.2]);
    d.trajectory.amplitude = [0.0, 0.0, 0.2];
    d.trajectory.frequency = [0.0, 0.0, 1.0];
    let e = blob([0.0, 0.0, 0.5], [0.25, 0.25, 0.06], 0.0, 0.75, [0.85, 0.4, 0.85]);
    SyntheticSpec {
        name: "orbit-blobs".into(),
        primitives: vec![a, b, c, d, e],
        rig: Rig { count: 9, radius: 3.0, elevation: 1.0, target: [0.0; 3], focal: 72.0, held_out: vec![4] },
        frames: 60,
        width: 64,
        height: 64,
        seed: 7,
        points_per_primitive: 40,
        jitter: 0.08,
        decimation: None,
    }
}

fn dim_shadow() -> SyntheticSpec {
    let p1 = blob([-0.35, 0.2, 0.0], [0.22, 0.15, 0.12], 10.0, 0.9, [0.22, 0.16, 0.12]);
    let p2 = blob([0.35, -0.2, 0.1], [0.18, 0.18, 0.14], -30.0, 0.85, [0.12, 0.18, 0.24]);
    let p3 = blob([0.0, 0.3, -0.3], [0.3, 0.12, 0.08], 60.0, 0.8, [0.18, 0.22, 0.12]);
    let p4 = blob([0.05, -0.25, 0.35], [0.14, 0.14, 0.14], 0.0, 0.9, [0.26, 0.2, 0.2]);
    let mut occluder = blob([-0.6, 0.0, 0.05], [0.12, 0.3, 0.25], 0.0, 0.9, [0.03, 0.03, 0.04]);
    // Rises out of most views mid-sequence, like a shadow that comes and goes.
    occluder.trajectory.amplitude = [0.0, 0.0, 1.2];
    occluder.trajectory.frequency = [0.0, 0.0, 0.5];
    let mut drifter = blob([0.0, 0.0, -0.1], [0.1, 0.1, 0.1], 0.0, 0.7, [0.08, 0.07, 0.05]);
    drifter.trajectory.amplitude = [0.2, 0.2, 0.0];
    drifter.trajectory.frequency = [0.5, 0.5, 0.0];
    drifter.trajectory.phase = [PI / 2.0, 0.0, 0.0];
    SyntheticSpec {
        name: "dim-shadow".into(),
        primitives: vec![p1, p2, p3, p4, occluder, drifter],
        rig: Rig { count: 9, radius: 3.0, elevation: 1.0, target: [0.0; 3], focal: 72.0, held_out: vec![4] },
        frames: 60,
        width: 64,
        height: 64,
        seed: 11,
        points_per_primitive: 40,
        jitter: 0.08,
        decimation: None,
    }
}

pub fn canned(name: &str) -> Result<SyntheticSpec> {
    match name {
        "orbit-blobs" => Ok(orbit_blobs()),
        "dim-shadow" => Ok(dim_shadow()),
        other => Err(Error::Synthetic(format!("unknown canned scene `{other}` (known: {})", CANNED.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn small(spec: SyntheticSpec) -> SyntheticSpec {
        SyntheticSpec { frames: 4, width: 24, height: 24, rig: Rig { focal: 27.0, ..spec.rig.clone() }, ..spec }
    }

    #[test]
    fn canned_scenes_generate() {
        for name in CANNED {
            let spec = small(canned(name).unwrap());
            let ds = generate_synthetic(&spec).unwrap();
            assert_eq!(ds.frames.len(), 9 * 4);
            assert_eq!(ds.split(Split::Test).len(), 4);
            assert_eq!(ds.init_points.len(), spec.primitives.len() * 40);
            ds.validate().unwrap();
        }
        assert!(canned("nope").is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = small(canned("orbit-blobs").unwrap());
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn rig_rotations_are_orthonormal() {
        for cam in canned("orbit-blobs").unwrap().rig.cameras(64, 64).unwrap() {
            let r = cam.rotation_c2w();
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn static_scene_is_constant_over_time() {
        let mut spec = small(canned("orbit-blobs").unwrap());
        for p in &mut spec.primitives {
            p.trajectory = Trajectory::fixed(p.trajectory.center);
        }
        let ds = generate_synthetic(&spec).unwrap();
        for f in &ds.frames {
            let first = ds.frames.iter().find(|g| g.camera_id == f.camera_id).unwrap();
            assert_eq!(f.image, first.image);
        }
    }

    #[test]
    fn linear_motion_projects_linearly_for_fronto_parallel_camera() {
        let cam = Camera::new(nalgebra::Matrix4::identity(), 40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        let traj = Trajectory { linear: [0.6, -0.3, 0.0], ..Trajectory::fixed([-0.2, 0.1, 3.0]) };
        let px = |t: f64| project(&Vector3::from(traj.at(t)), &Matrix3::identity(), &cam).unwrap().mean2d;
        let (a, b, c) = (px(0.0), px(0.5), px(1.0));
        for k in 0..2 {
            assert!(((a[k] + c[k]) / 2.0 - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn full_decimation_empties_region() {
        let mut spec = small(canned("orbit-blobs").unwrap());
        let d = Decimation { min: [-0.8, -0.4, -0.3], max: [0.0, 0.4, 0.5], fraction: 1.0 };
        spec.decimation = Some(d.clone());
        let ds = generate_synthetic(&spec).unwrap();
        assert!(!ds.init_points.is_empty());
        assert!(ds.init_points.iter().all(|p| !d.contains(&p.position)));
    }

    #[test]
    fn primitive_outside_all_views_is_rejected() {
        let mut spec = small(canned("orbit-blobs").unwrap());
        spec.primitives[0].trajectory.center = [0.0, 0.0, 40.0];
        assert!(matches!(generate_synthetic(&spec), Err(Error::Synthetic(_))));
    }

    #[test]
    fn write_then_load_roundtrip() {
        let spec = small(canned("orbit-blobs").unwrap());
        let ds = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = super::super::write_dataset(&ds, dir.path()).unwrap();
        let back = super::super::load_dataset(&manifest).unwrap();
        assert_eq!(back.frames.len(), ds.frames.len());
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.time, b.time);
            assert_eq!((a.camera_id, a.split), (b.camera_id, b.split));
            assert!((a.camera.camera_to_world - b.camera.camera_to_world).abs().max() < 1e-9);
        }
        assert_eq!(back.init_points.len(), ds.init_points.len());
    }
}
