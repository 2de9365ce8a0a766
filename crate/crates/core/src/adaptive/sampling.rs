use nalgebra::Vector3;

use crate::deform::DeformationField;
use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianCloud, RowEdit};
use crate::gaussian::cloud::rgb_to_sh_dc;
use crate::raster::{Camera, Image, ScalarMap};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub enabled: bool,
    pub start_iter: u64,
    pub stop_iter: u64,
    pub interval: u64,
    pub error_threshold: f64,
    pub top_fraction: f64,
    pub max_new_per_pass: usize,
    pub anchor_opacity: f64,
    pub neighbor_pool: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            enabled: true,
            start_iter: 3000,
            stop_iter: 15_000,
            interval: 1000,
            error_threshold: 0.10,
            top_fraction: 0.001,
            max_new_per_pass: 5000,
            anchor_opacity: 0.1,
            neighbor_pool: 8,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::Config(format!("sampling top_fraction {} outside (0, 1]", self.top_fraction)));
        }
        if self.max_new_per_pass == 0 || self.neighbor_pool == 0 || self.interval == 0 {
            return Err(Error::Config("sampling max_new_per_pass, neighbor_pool and interval must be at least 1".into()));
        }
        if !(self.anchor_opacity > 0.0 && self.anchor_opacity < 1.0) {
            return Err(Error::Config(format!("anchor opacity {} outside (0, 1)", self.anchor_opacity)));
        }
        if !(0.0..=1.0).contains(&self.error_threshold) {
            return Err(Error::Config(format!("error threshold {} outside [0, 1]", self.error_threshold)));
        }
        Ok(())
    }

    pub fn due(&self, iter: u64) -> bool {
        self.enabled && iter >= self.start_iter && iter <= self.stop_iter && iter % self.interval == 0
    }
}

/// Per-pixel channel-mean absolute difference.
pub fn error_map(render: &Image, gt: &Image) -> Result<ScalarMap> {
    render.same_size(gt)?;
    let mut m = ScalarMap::new(render.width, render.height, 0.0);
    for (i, v) in m.data.iter_mut().enumerate() {
        let a = &render.data[i * 3..i * 3 + 3];
        let b = &gt.data[i * 3..i * 3 + 3];
        *v = ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectedPixel {
    pub x: usize,
    pub y: usize,
    pub depth: f64,
    pub error: f64,
}

/// High-error pixels with a surface estimate, highest error first (ties row-major).
pub fn select_pixels(err: &ScalarMap, median_depth: &ScalarMap, cfg: &SamplingConfig) -> Result<Vec<SelectedPixel>> {
    if err.width != median_depth.width || err.height != median_depth.height {
        return Err(Error::ImageSize(err.width, err.height, median_depth.width, median_depth.height));
    }
    let n = err.data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| err.data[b].total_cmp(&err.data[a]).then(a.cmp(&b)));
    let top = ((cfg.top_fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    Ok(idx
        .into_iter()
        .take(top)
        .filter(|&i| err.data[i] >= cfg.error_threshold && err.data[i] > 0.0)
        .filter(|&i| median_depth.data[i].is_finite() && median_depth.data[i] > 0.0)
        .take(cfg.max_new_per_pass)
        .map(|i| SelectedPixel { x: i % err.width, y: i / err.width, depth: median_depth.data[i], error: err.data[i] })
        .collect())
}

/// World point at Euclidean distance `depth` along the ray through the pixel center.
pub fn backproject(x: usize, y: usize, depth: f64, cam: &Camera) -> Vector3<f64> {
    cam.center() + cam.ray_direction(x as f64 + 0.5, y as f64 + 0.5) * depth
}

#[derive(Clone, Debug, PartialEq)]
pub struct Injection {
    pub added: usize,
    /// Embedding donor for each new Gaussian.
    pub donors: Vec<usize>,
    pub edit: RowEdit,
}

/// Appends one anchor Gaussian per coordinate. Existing rows are untouched.
pub fn inject_anchors(
    cloud: &mut GaussianCloud,
    field: &DeformationField,
    coords: &[Vector3<f64>],
    colors: &[[f64; 3]],
    t: f64,
    cfg: &SamplingConfig,
) -> Result<Injection> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if coords.len() != colors.len() {
        return Err(Error::Shape(format!("{} anchor points but {} colors", coords.len(), colors.len())));
    }
    if coords.is_empty() {
        return Ok(Injection { added: 0, donors: Vec::new(), edit: RowEdit::append_only(n, 0) });
    }
    let batch = field.deform_batch(&cloud.embeddings, t, false)?;
    let cost: Vec<f64> = (0..n).map(|i| batch.delta(i).total_magnitude()).collect();
    let deformed: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let p = cloud.position(i);
            Vector3::new(p[0] + batch.out[(i, 0)], p[1] + batch.out[(i, 1)], p[2] + batch.out[(i, 2)])
        })
        .collect();
    let canonical: Vec<Vector3<f64>> = (0..n).map(|i| Vector3::from(cloud.position(i))).collect();
    let pool = cfg.neighbor_pool.min(n);
    let sh_k = cloud.row_width(crate::gaussian::ParamGroup::Sh);
    let mut new_rows = GaussianCloud::new(cloud.sh_degree(), cloud.embed_dim());
    let mut donors = Vec::with_capacity(coords.len());
    for (p, rgb) in coords.iter().zip(colors) {
        let nearest = canonical.iter().map(|c| (c - p).norm()).fold(f64::INFINITY, f64::min);
        let mut by_dist: Vec<(f64, usize)> = deformed.iter().enumerate().map(|(i, q)| ((q - p).norm_squared(), i)).collect();
        by_dist.select_nth_unstable_by(pool - 1, |a, b| a.partial_cmp(b).unwrap());
        by_dist.truncate(pool);
        let donor = by_dist.iter().map(|&(_, i)| i).min_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(a.cmp(&b))).unwrap();
        donors.push(donor);
        let ls = nearest.max(1e-7).ln();
        let mut sh = vec![0.0; sh_k];
        for c in 0..3 {
            sh[c] = rgb_to_sh_dc(rgb[c]);
        }
        new_rows.push_raw([p.x, p.y, p.z], [ls; 3], [1.0, 0.0, 0.0, 0.0], logit(cfg.anchor_opacity), &sh, cloud.embedding(donor));
    }
    let keep = vec![true; n];
    let edit = cloud.retain_and_append(&keep, &new_rows)?;
    Ok(Injection { added: coords.len(), donors, edit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{FieldConfig, FusionMode};
    use crate::raster::project;
    use nalgebra::Matrix3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::look_at([0.3, -0.2, -3.0], [0.0; 3], [0.0, -1.0, 0.0], 60.0, 32, 24).unwrap()
    }

    fn field() -> DeformationField {
        let cfg = FieldConfig { embed_dim: 2, temporal_dim: 3, hidden_width: 8, hidden_layers: 1, fine_len: 4, coarse_len: 2, fusion: FusionMode::Product, ..FieldConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = DeformationField::new(&cfg, &mut rng).unwrap();
        f.randomize_head(0.2, &mut rng);
        f
    }

    fn cloud(n: usize) -> GaussianCloud {
        let mut c = GaussianCloud::new(1, 2);
        for i in 0..n {
            let x = i as f64 * 0.3 - 0.5;
            c.push_isotropic([x, 0.1 * x, 0.2], 0.05, [0.3, 0.6, 0.9], 0.7, &[x, -x]);
        }
        c
    }

    #[test]
    fn error_map_examples() {
        let black = Image::new(4, 3);
        let white = Image::filled(4, 3, [1.0; 3]);
        assert!(error_map(&black, &black).unwrap().data.iter().all(|v| *v == 0.0));
        assert!(error_map(&black, &white).unwrap().data.iter().all(|v| *v == 1.0));
        let mut one = black.clone();
        one.set(2, 1, [0.5; 3]);
        let m = error_map(&one, &black).unwrap();
        assert_eq!(m.get(2, 1), 0.5);
        assert_eq!(m.data.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn selection_examples() {
        let cfg = SamplingConfig { top_fraction: 0.5, ..SamplingConfig::default() };
        let depth = ScalarMap::new(4, 4, 2.0);
        assert!(select_pixels(&ScalarMap::new(4, 4, 0.0), &depth, &cfg).unwrap().is_empty());
        let mut err = ScalarMap::new(4, 4, 0.0);
        err.set(1, 2, 0.8);
        let sel = select_pixels(&err, &depth, &cfg).unwrap();
        assert_eq!(sel, vec![SelectedPixel { x: 1, y: 2, depth: 2.0, error: 0.8 }]);
        let mut nan_depth = depth.clone();
        nan_depth.set(1, 2, f64::NAN);
        assert!(select_pixels(&err, &nan_depth, &cfg).unwrap().is_empty());
    }

    #[test]
    fn selection_is_ordered_and_truncated() {
        let cfg = SamplingConfig { top_fraction: 1.0, max_new_per_pass: 3, error_threshold: 0.1, ..SamplingConfig::default() };
        let mut err = ScalarMap::new(3, 3, 0.0);
        for (i, v) in [0.5, 0.2, 0.5, 0.05, 0.9, 0.3, 0.5, 0.0, 0.1].iter().enumerate() {
            err.data[i] = *v;
        }
        let sel = select_pixels(&err, &ScalarMap::new(3, 3, 1.0), &cfg).unwrap();
        let order: Vec<(usize, usize)> = sel.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(order, vec![(1, 1), (0, 0), (2, 0)]);
    }

    #[test]
    fn backprojection_examples() {
        let id = Camera::new(nalgebra::Matrix4::identity(), 10.0, 10.0, 4.5, 4.5, 9, 9).unwrap();
        let p = backproject(4, 4, 1.0, &id);
        assert!((p - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let c = cam();
        for (x, y, d) in [(0, 0, 1.5), (31, 23, 4.0), (17, 5, 2.2)] {
            let p = backproject(x, y, d, &c);
            let proj = project(&p, &Matrix3::identity(), &c).unwrap();
            assert!((proj.mean2d[0] - (x as f64 + 0.5)).abs() < 1e-6);
            assert!((proj.mean2d[1] - (y as f64 + 0.5)).abs() < 1e-6);
            assert!((proj.depth_euclidean - d).abs() < 1e-9);
        }
    }

    #[test]
    fn injection_appends_without_touching_existing_rows() {
        let mut c = cloud(5);
        let before = c.clone();
        let f = field();
        let pts = [Vector3::new(0.1, 0.0, 0.2), Vector3::new(-0.5, -0.05, 1.2)];
        let inj = inject_anchors(&mut c, &f, &pts, &[[1.0, 0.5, 0.0], [0.2, 0.2, 0.2]], 0.4, &SamplingConfig::default()).unwrap();
        assert_eq!(inj.added, 2);
        assert_eq!(c.len(), 7);
        assert_eq!(&c.positions[..15], &before.positions[..]);
        assert_eq!(&c.embeddings[..10], &before.embeddings[..]);
        for i in 5..7 {
            assert!((c.opacity(i) - 0.1).abs() < 1e-15);
            assert_eq!(c.rotation(i), [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(c.embedding(i), before.embedding(inj.donors[i - 5]));
        }
        c.validate().unwrap();
    }

    #[test]
    fn anchor_scale_is_nearest_distance() {
        let mut c = GaussianCloud::new(0, 2);
        c.push_isotropic([0.0; 3], 0.1, [0.5; 3], 0.5, &[0.0, 0.0]);
        let cfg = FieldConfig { embed_dim: 2, temporal_dim: 2, hidden_width: 4, hidden_layers: 1, fine_len: 2, coarse_len: 2, sh_degree: 0, ..FieldConfig::default() };
        let f = DeformationField::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let inj = inject_anchors(&mut c, &f, &[Vector3::new(0.0, 1.0, 0.0)], &[[0.5; 3]], 0.0, &SamplingConfig::default()).unwrap();
        assert_eq!(c.log_scale(1), [0.0; 3]);
        assert_eq!(inj.donors, vec![0]);
        assert_eq!(&c.sh_of(1)[..3], &[0.0; 3]);
    }

    #[test]
    fn injected_anchor_projects_to_its_pixel() {
        let mut c = cloud(5);
        let f = field();
        let cam = cam();
        let px = [(3usize, 4usize, 2.7), (20, 11, 3.1)];
        let pts: Vec<Vector3<f64>> = px.iter().map(|&(x, y, d)| backproject(x, y, d, &cam)).collect();
        inject_anchors(&mut c, &f, &pts, &[[0.5; 3]; 2], 0.0, &SamplingConfig::default()).unwrap();
        for (k, &(x, y, _)) in px.iter().enumerate() {
            let p = Vector3::from(c.position(5 + k));
            let proj = project(&p, &Matrix3::identity(), &cam).unwrap();
            assert!((proj.mean2d[0] - (x as f64 + 0.5)).abs() < 0.5);
            assert!((proj.mean2d[1] - (y as f64 + 0.5)).abs() < 0.5);
        }
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let mut c = GaussianCloud::new(1, 2);
        let r = inject_anchors(&mut c, &field(), &[Vector3::zeros()], &[[0.0; 3]], 0.0, &SamplingConfig::default());
        assert!(matches!(r, Err(Error::EmptyCloud)));
    }
}
