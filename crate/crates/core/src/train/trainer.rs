//! The optimization loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{AdamGroup, AdamState};
use super::config::TrainConfig;
use crate::adaptive::{backproject, densify_and_prune, error_map, inject_anchors, select_pixels};
use crate::deform::sidecar::{load_field, save_field};
use crate::deform::temporal::default_lengths;
use crate::deform::{DeformationField, FieldGrad};
use crate::error::{Error, Result};
use crate::gaussian::io::{read_gaussians_ply, write_gaussians_ply};
use crate::gaussian::{GaussianCloud, ParamGroup, RowEdit};
use crate::loss::{build_knn, dssim_active, dssim_loss, emb_reg_loss, l1_loss, psnr, ssim, KnnGraph};
use crate::pipeline::{FrameState, Model};
use crate::raster::{render_cloud, Image};
use crate::scene::{FrameRecord, SceneDataset, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub iter: u64,
    pub frame: usize,
    pub loss: f64,
    pub l1: f64,
    /// `None` on iterations where D-SSIM is inactive.
    pub dssim: Option<f64>,
    pub emb_reg: f64,
    pub psnr: f64,
    pub gaussians: usize,
    pub deform_ms: f64,
    pub render_ms: f64,
    pub backward_ms: f64,
    pub step_ms: f64,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub anchors: usize,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str =
        "iter,frame,loss,l1,dssim,emb_reg,psnr,gaussians,deform_ms,render_ms,backward_ms,step_ms,cloned,split,pruned,anchors";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.8},{:.8},{},{:.8},{:.4},{},{:.3},{:.3},{:.3},{:.3},{},{},{},{}",
            self.iter,
            self.frame,
            self.loss,
            self.l1,
            self.dssim.map(|d| format!("{d:.8}")).unwrap_or_default(),
            self.emb_reg,
            self.psnr,
            self.gaussians,
            self.deform_ms,
            self.render_ms,
            self.backward_ms,
            self.step_ms,
            self.cloned,
            self.split,
            self.pruned,
            self.anchors
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub frames: usize,
}

/// Mean PSNR, SSIM and L1 of `model` over `frames`. Never mutates the model.
pub fn evaluate_model(model: &Model, frames: &[&FrameRecord]) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let (mut p, mut s, mut l) = (0.0, 0.0, 0.0);
    for f in frames {
        let img = model.render(&f.camera, f.time)?;
        p += psnr(&img, &f.image)?;
        s += ssim(&img, &f.image)?;
        l += l1_loss(&img, &f.image)?.0;
    }
    let n = frames.len() as f64;
    Ok(EvalReport { psnr: p / n, ssim: s / n, l1: l / n, frames: frames.len() })
}

/// Canonical cloud from the dataset's init points: isotropic scale from the
/// mean squared distance to the 3 nearest neighbors, identity rotation,
/// fixed opacity, DC color from the point color, Gaussian-random embeddings.
pub fn init_cloud<R: Rng>(ds: &SceneDataset, cfg: &TrainConfig, rng: &mut R) -> Result<GaussianCloud> {
    if ds.init_points.is_empty() {
        return Err(Error::Dataset("no initial points to start from".into()));
    }
    let pos: Vec<f64> = ds.init_points.iter().flat_map(|p| p.position).collect();
    let knn = build_knn(&pos, 3, 0.0, 0)?;
    let normal = Normal::new(0.0, cfg.init_embedding_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut cloud = GaussianCloud::new(cfg.field.sh_degree, cfg.field.embed_dim);
    for (i, p) in ds.init_points.iter().enumerate() {
        let nb = knn.neighbors_of(i);
        let d2 = if nb.is_empty() {
            0.01
        } else {
            nb.iter()
                .map(|&j| {
                    let q = &ds.init_points[j as usize].position;
                    (0..3).map(|a| (q[a] - p.position[a]).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / nb.len() as f64
        };
        let scale = d2.max(1e-14).sqrt();
        let emb: Vec<f64> = (0..cfg.field.embed_dim).map(|_| normal.sample(rng)).collect();
        cloud.push_isotropic(p.position, scale, p.rgb, cfg.init_opacity, &emb);
    }
    Ok(cloud)
}

fn mlp_group_names(field: &DeformationField) -> Vec<String> {
    (0..field.mlp.layers.len()).flat_map(|l| [format!("mlp.{l}.weight"), format!("mlp.{l}.bias")]).collect()
}

fn fresh_optimizer(model: &Model) -> AdamState {
    let mut groups: Vec<AdamGroup> = ParamGroup::ALL.iter().map(|&g| AdamGroup::new(g.name(), model.cloud.group(g).len())).collect();
    let field = &model.field;
    for (name, layer) in mlp_group_names(field).chunks(2).zip(&field.mlp.layers) {
        groups.push(AdamGroup::new(name[0].clone(), layer.weight.len()));
        groups.push(AdamGroup::new(name[1].clone(), layer.bias.len()));
    }
    groups.push(AdamGroup::new("table.fine", field.tables.fine.len()));
    groups.push(AdamGroup::new("table.coarse", field.tables.coarse.len()));
    AdamState { groups }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub dataset: SceneDataset,
    pub optimizer: AdamState,
    pub iter: u64,
    /// Canonical positions of every injected anchor, in injection order.
    pub anchors: Vec<[f64; 3]>,
    train: Vec<usize>,
    test: Vec<usize>,
    extent: f64,
    rng: ChaCha8Rng,
    knn: Option<KnnGraph>,
    grad_sum: Vec<f64>,
    grad_count: Vec<u32>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, dataset: SceneDataset) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cloud = init_cloud(&dataset, &cfg, &mut rng)?;
        let mut fcfg = cfg.field.clone();
        if fcfg.fine_len == 0 {
            (fcfg.fine_len, fcfg.coarse_len) = default_lengths(dataset.frame_count());
        }
        let field = DeformationField::new(&fcfg, &mut rng)?;
        let model = Model::new(cloud, field, cfg.opacity()?)?;
        Self::with_model(cfg, dataset, model, rng)
    }

    /// Starts from an existing model (fresh optimizer state).
    pub fn from_model(cfg: TrainConfig, dataset: SceneDataset, model: Model) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::with_model(cfg, dataset, model, rng)
    }

    fn with_model(cfg: TrainConfig, dataset: SceneDataset, model: Model, rng: ChaCha8Rng) -> Result<Self> {
        model.check()?;
        let pick = |s| (0..dataset.frames.len()).filter(|&i| dataset.frames[i].split == s).collect::<Vec<_>>();
        let (train, test) = (pick(Split::Train), pick(Split::Test));
        if train.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        let extent = dataset.camera_extent();
        let n = model.cloud.len();
        let optimizer = fresh_optimizer(&model);
        Ok(Trainer {
            cfg,
            model,
            dataset,
            optimizer,
            iter: 0,
            anchors: Vec::new(),
            train,
            test,
            extent,
            rng,
            knn: None,
            grad_sum: vec![0.0; n],
            grad_count: vec![0; n],
        })
    }

    pub fn test_frames(&self) -> Vec<&FrameRecord> {
        self.test.iter().map(|&i| &self.dataset.frames[i]).collect()
    }

    pub fn train_frames(&self) -> Vec<&FrameRecord> {
        self.train.iter().map(|&i| &self.dataset.frames[i]).collect()
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate_model(&self.model, &self.test_frames())
    }

    fn ensure_knn(&mut self) -> Result<()> {
        let n = self.model.cloud.len();
        let rebuild = match &self.knn {
            None => true,
            Some(g) => g.is_stale_for(n) || self.iter.saturating_sub(g.built_at_iter) >= self.cfg.knn_rebuild_every.max(1),
        };
        if rebuild {
            let l = &self.cfg.loss;
            self.knn = Some(build_knn(&self.model.cloud.positions, l.k_neighbors, l.lambda_w, self.iter)?);
        }
        Ok(())
    }

    /// Loss terms, the image gradient and the embedding-regularizer gradient
    /// for one rendered frame.
    fn loss_terms(&mut self, state: &FrameState, gt: &Image) -> Result<(f64, f64, Option<f64>, f64, Image, Option<Vec<f64>>)> {
        let iter = self.iter;
        let bad = |term: &str| Error::NonFiniteLoss { iter, term: term.to_string() };
        let (l1, mut d_img) = l1_loss(state.image(), gt)?;
        if !l1.is_finite() {
            return Err(bad("l1"));
        }
        let mut total = l1;
        let mut dssim = None;
        if dssim_active(iter, &self.cfg.loss) && self.cfg.loss.lambda_dssim > 0.0 {
            let (d, g) = dssim_loss(state.image(), gt)?;
            if !d.is_finite() {
                return Err(bad("dssim"));
            }
            let w = self.cfg.loss.lambda_dssim;
            for (a, b) in d_img.data.iter_mut().zip(&g.data) {
                *a += w * b;
            }
            total += w * d;
            dssim = Some(d);
        }
        let (mut emb, mut d_emb) = (0.0, None);
        if self.cfg.loss.lambda_emb > 0.0 {
            let dim = self.model.cloud.embed_dim();
            self.ensure_knn()?;
            let (e, g) = emb_reg_loss(&self.model.cloud.embeddings, dim, self.knn.as_ref().unwrap())?;
            if !e.is_finite() {
                return Err(bad("emb_reg"));
            }
            emb = e;
            total += self.cfg.loss.lambda_emb * e;
            d_emb = Some(g);
        }
        if !total.is_finite() {
            return Err(bad("total"));
        }
        Ok((total, l1, dssim, emb, d_img, d_emb))
    }

    fn apply_gradients(&mut self, grad: &crate::pipeline::CloudGrad, field: &FieldGrad) -> Result<()> {
        let lr = &self.cfg.lr;
        let pos_lr = self.cfg.position_lr(self.iter) * self.extent;
        let rates = [pos_lr, lr.scale, lr.rotation, lr.opacity, lr.sh, lr.embedding];
        let groups = &mut self.optimizer.groups;
        for (k, g) in ParamGroup::ALL.iter().enumerate() {
            groups[k].update(self.model.cloud.group_mut(*g), grad.group(*g), rates[k])?;
        }
        let mut k = ParamGroup::ALL.len();
        let (mlp_lr, table_lr) = (lr.mlp, lr.tables);
        let mlp_grads = field.mlp_slices();
        for (p, g) in self.model.field.mlp_params_mut().into_iter().zip(mlp_grads) {
            groups[k].update(p, g, mlp_lr)?;
            k += 1;
        }
        for (p, g) in self.model.field.table_params_mut().into_iter().zip(field.table_slices()) {
            groups[k].update(p, g, table_lr)?;
            k += 1;
        }
        Ok(())
    }

    fn apply_edit(&mut self, edit: &RowEdit) {
        if edit.is_identity() {
            return;
        }
        for (k, g) in ParamGroup::ALL.iter().enumerate() {
            let w = self.model.cloud.row_width(*g);
            self.optimizer.groups[k].apply_edit(edit, w);
        }
        edit.apply(&mut self.grad_sum, 1, 0.0);
        edit.apply(&mut self.grad_count, 1, 0);
        if let Some(g) = self.knn.as_mut() {
            g.mark_stale();
        }
    }

    /// One optimization step on a uniformly drawn training view.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let start = Instant::now();
        self.iter += 1;
        let fi = self.train[self.rng.random_range(0..self.train.len())];
        let (cam, t, gt) = {
            let f = &self.dataset.frames[fi];
            (f.camera.clone(), f.time, f.image.clone())
        };
        let t0 = Instant::now();
        let (view, batch, deformed) = self.model.deform_at(t, true)?;
        let deform_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let frame = render_cloud(&deformed, &cam, true);
        let render_ms = t1.elapsed().as_secs_f64() * 1e3;
        let state = FrameState { t, view, batch, deformed, frame };

        let (loss, l1, dssim, emb_reg, d_img, d_emb) = self.loss_terms(&state, &gt)?;
        let frame_psnr = psnr(state.image(), &gt)?;

        let t2 = Instant::now();
        let (mut grad, norms) = self.model.backward_frame(&state, &cam, &d_img)?;
        let backward_ms = t2.elapsed().as_secs_f64() * 1e3;
        if let Some(g) = d_emb {
            let w = self.cfg.loss.lambda_emb;
            for (a, b) in grad.cloud.embeddings.iter_mut().zip(&g) {
                *a += w * b;
            }
        }
        for i in state.frame.set.gaussian_indices() {
            self.grad_sum[i] += norms[i];
            self.grad_count[i] += 1;
        }
        self.apply_gradients(&grad.cloud, &grad.field)?;
        self.model.cloud.validate()?;

        let mut m = StepMetrics {
            iter: self.iter,
            frame: fi,
            loss,
            l1,
            dssim,
            emb_reg,
            psnr: frame_psnr,
            gaussians: 0,
            deform_ms,
            render_ms,
            backward_ms,
            step_ms: 0.0,
            cloned: 0,
            split: 0,
            pruned: 0,
            anchors: 0,
        };

        if self.cfg.densify.due(self.iter) {
            let r = densify_and_prune(&mut self.model.cloud, &self.grad_sum, &self.grad_count, &self.cfg.densify, &mut self.rng)?;
            self.apply_edit(&r.edit);
            self.grad_sum.iter_mut().for_each(|v| *v = 0.0);
            self.grad_count.iter_mut().for_each(|v| *v = 0);
            (m.cloned, m.split, m.pruned) = (r.cloned, r.split, r.pruned);
        }
        if self.cfg.sampling.due(self.iter) {
            let out = &state.frame.output;
            let err = error_map(&out.color, &gt)?;
            let picked = select_pixels(&err, &out.median_depth, &self.cfg.sampling)?;
            let coords: Vec<_> = picked.iter().map(|p| backproject(p.x, p.y, p.depth, &cam)).collect();
            let colors: Vec<_> = picked.iter().map(|p| gt.get(p.x, p.y)).collect();
            let inj = inject_anchors(&mut self.model.cloud, &self.model.field, &coords, &colors, t, &self.cfg.sampling)?;
            self.apply_edit(&inj.edit);
            self.anchors.extend(coords.iter().map(|c| [c.x, c.y, c.z]));
            m.anchors = inj.added;
        }
        m.gaussians = self.model.cloud.len();
        m.step_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(m)
    }

    /// Writes `gaussians.ply`, `field.frgd`, `optimizer.frgo` and `config.txt` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let ply = dir.join("gaussians.ply");
        write_gaussians_ply(&ply, &self.model.cloud)?;
        let field = dir.join("field.frgd");
        save_field(&field, &self.model.field, self.model.opacity_mode)?;
        let opt = dir.join("optimizer.frgo");
        let mut w = BufWriter::new(File::create(&opt)?);
        w.write_all(&self.iter.to_le_bytes())?;
        self.optimizer.write(&mut w)?;
        w.flush()?;
        let cfg = dir.join("config.txt");
        std::fs::write(&cfg, self.cfg.to_text())?;
        Ok(vec![ply, field, opt, cfg])
    }

    /// Trains for the configured iterations, logging every step to
    /// `out/metrics.csv`, with periodic evaluation and checkpoints. The final
    /// checkpoint goes to `out/checkpoint`.
    pub fn run(&mut self, out: &Path, mut observe: impl FnMut(&StepMetrics)) -> Result<RunSummary> {
        std::fs::create_dir_all(out)?;
        let csv_path = out.join("metrics.csv");
        let mut csv = BufWriter::new(File::create(&csv_path)?);
        writeln!(csv, "{}", StepMetrics::CSV_HEADER)?;
        let start = Instant::now();
        let mut deform_ms = 0.0;
        let steps = self.cfg.iterations.saturating_sub(self.iter);
        for _ in 0..steps {
            let m = self.train_step()?;
            deform_ms += m.deform_ms;
            writeln!(csv, "{}", m.csv_row())?;
            observe(&m);
            if self.cfg.eval_every > 0 && self.iter % self.cfg.eval_every == 0 && !self.test.is_empty() {
                let e = self.evaluate()?;
                log::info!("iter {}: held-out PSNR {:.3} SSIM {:.4}", self.iter, e.psnr, e.ssim);
            }
            if self.cfg.checkpoint_every > 0 && self.iter % self.cfg.checkpoint_every == 0 && self.iter < self.cfg.iterations {
                self.save_checkpoint(&out.join(format!("checkpoint_{:06}", self.iter)))?;
            }
        }
        csv.flush()?;
        let train_seconds = start.elapsed().as_secs_f64();
        let checkpoint = out.join("checkpoint");
        let mut artifacts = vec![csv_path];
        artifacts.extend(self.save_checkpoint(&checkpoint)?);
        let eval = if self.test.is_empty() { None } else { Some(self.evaluate()?) };
        Ok(RunSummary {
            eval,
            gaussians: self.model.cloud.len(),
            train_seconds,
            deform_ms_per_step: deform_ms / steps.max(1) as f64,
            mlp_passes: self.model.field.fusion.passes(),
            checkpoint,
            artifacts,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub eval: Option<EvalReport>,
    pub gaussians: usize,
    pub train_seconds: f64,
    pub deform_ms_per_step: f64,
    pub mlp_passes: usize,
    pub checkpoint: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

/// Loads the model stored by [`Trainer::save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let cloud = read_gaussians_ply(dir.join("gaussians.ply"))?;
    let (field, mode) = load_field(&dir.join("field.frgd"))?;
    Model::new(cloud, field, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{canned, generate_synthetic, Rig, SyntheticSpec};

    pub(crate) fn tiny_spec() -> SyntheticSpec {
        let spec = canned("orbit-blobs").unwrap();
        SyntheticSpec { frames: 3, width: 24, height: 24, points_per_primitive: 6, rig: Rig { count: 4, focal: 27.0, held_out: vec![1], ..spec.rig.clone() }, ..spec }
    }

    pub(crate) fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(
            "iterations = 20\nfield.hidden_width = 16\nfield.hidden_layers = 2\nfield.embed_dim = 4\nfield.temporal_dim = 4\nfield.sh_degree = 1\nloss.k_neighbors = 3\ndensify.start_iter = 5\ndensify.interval = 5\nsampling.start_iter = 10\nsampling.interval = 10\nsampling.top_fraction = 0.05\nsampling.error_threshold = 0.0",
        )
        .unwrap();
        cfg.validate().unwrap();
        cfg
    }

    fn trainer() -> Trainer {
        Trainer::new(tiny_config(), generate_synthetic(&tiny_spec()).unwrap()).unwrap()
    }

    fn assert_rows_consistent(t: &Trainer) {
        let n = t.model.cloud.len();
        for (k, g) in ParamGroup::ALL.iter().enumerate() {
            assert_eq!(t.optimizer.groups[k].len(), n * t.model.cloud.row_width(*g), "{}", g.name());
        }
        assert_eq!(t.grad_sum.len(), n);
        assert_eq!(t.grad_count.len(), n);
    }

    #[test]
    fn init_matches_points() {
        let t = trainer();
        assert_eq!(t.model.cloud.len(), 5 * 6);
        assert!((t.model.cloud.opacity(0) - 0.1).abs() < 1e-12);
        assert_eq!(t.optimizer.groups.len(), 6 + 2 * 3 + 2);
        assert_rows_consistent(&t);
    }

    #[test]
    fn optimizer_rows_track_adaptive_events() {
        let mut t = trainer();
        t.cfg.densify.grad_threshold = 1e-12;
        let mut events = 0;
        for _ in 0..20 {
            let m = t.train_step().unwrap();
            events += m.cloned + m.split + m.pruned + m.anchors;
            assert_rows_consistent(&t);
            assert_eq!(m.gaussians, t.model.cloud.len());
        }
        assert!(events > 0);
        assert!(!t.anchors.is_empty());
    }

    #[test]
    fn evaluate_does_not_mutate() {
        let mut t = trainer();
        t.train_step().unwrap();
        let before = t.model.clone();
        let e = t.evaluate().unwrap();
        assert_eq!(t.model, before);
        assert_eq!(e.frames, 3);
        assert!(e.psnr.is_finite() && e.ssim <= 1.0);
    }

    #[test]
    fn empty_eval_set_errors() {
        assert!(matches!(evaluate_model(&trainer().model, &[]), Err(Error::EmptyEvalSet)));
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let run = || {
            let mut t = trainer();
            let m: Vec<_> = (0..8).map(|_| {
                let mut m = t.train_step().unwrap();
                (m.deform_ms, m.render_ms, m.backward_ms, m.step_ms) = (0.0, 0.0, 0.0, 0.0);
                m
            }).collect();
            (m, t.model)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn zero_lambda_emb_and_equal_embeddings_leave_no_regularizer_gradient() {
        let mut t = trainer();
        t.cfg.loss.lambda_emb = 0.0;
        let e0 = t.model.cloud.embedding(0).to_vec();
        let n = t.model.cloud.len();
        t.model.cloud.embeddings = e0.iter().cloned().cycle().take(n * e0.len()).collect();
        let m = t.train_step().unwrap();
        assert_eq!(m.emb_reg, 0.0);
        assert!(t.knn.is_none());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut t = trainer();
        t.train_step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = t.save_checkpoint(dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let m = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m.cloud.len(), t.model.cloud.len());
        assert_eq!(m.opacity_mode, t.model.opacity_mode);
        let f = t.test_frames()[0];
        let a = t.model.render(&f.camera, f.time).unwrap();
        let b = m.render(&f.camera, f.time).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < 1e-3));
        assert_eq!(TrainConfig::parse(&std::fs::read_to_string(dir.path().join("config.txt")).unwrap()).unwrap(), t.cfg);
    }

    #[test]
    fn static_single_frame_loss_decreases() {
        let mut spec = tiny_spec();
        spec.frames = 1;
        for p in &mut spec.primitives {
            p.trajectory = crate::scene::Trajectory::fixed(p.trajectory.center);
        }
        spec.rig.count = 2;
        let mut cfg = tiny_config();
        cfg.iterations = 100;
        cfg.densify.enabled = false;
        cfg.sampling.enabled = false;
        let mut t = Trainer::new(cfg, generate_synthetic(&spec).unwrap()).unwrap();
        let losses: Vec<f64> = (0..100).map(|_| t.train_step().unwrap().loss).collect();
        let smooth: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] < w[0], "{smooth:?}");
        }
    }
}
