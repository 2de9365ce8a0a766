use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::fusion::{fuse_backward, FusionMode};
use super::mlp::{Mlp, MlpGrad, MlpTrace};
use super::temporal::{TableGrad, TemporalEmbeddingTable, TemporalSample};
use crate::error::{Error, Result};
use crate::gaussian::sh_coeff_count;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    pub embed_dim: usize,
    pub temporal_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub fine_len: usize,
    pub coarse_len: usize,
    pub sh_degree: usize,
    /// Deform only the DC band of the SH coefficients.
    pub sh_dc_only: bool,
    pub fusion: FusionMode,
    /// Standard deviation of the initial temporal table entries.
    pub table_std: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            embed_dim: 32,
            temporal_dim: 32,
            hidden_width: 128,
            hidden_layers: 4,
            fine_len: 12,
            coarse_len: 2,
            sh_degree: 1,
            sh_dc_only: false,
            fusion: FusionMode::Product,
            table_std: 1.0,
        }
    }
}

/// Column layout of the MLP output: `[dmu(3) ds(3) dq(4) dalpha(1) dsh(..)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeltaLayout {
    pub sh_width: usize,
}

impl DeltaLayout {
    pub const MU: usize = 0;
    pub const SCALE: usize = 3;
    pub const ROT: usize = 6;
    pub const ALPHA: usize = 10;
    pub const SH: usize = 11;

    pub fn width(&self) -> usize {
        Self::SH + self.sh_width
    }
}

/// Attribute variations of one Gaussian at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationDelta {
    pub dmu: [f64; 3],
    pub ds: [f64; 3],
    pub dq: [f64; 4],
    pub dalpha: f64,
    pub dsh: Vec<f64>,
}

impl DeformationDelta {
    pub fn zeros(layout: DeltaLayout) -> Self {
        DeformationDelta { dmu: [0.0; 3], ds: [0.0; 3], dq: [0.0; 4], dalpha: 0.0, dsh: vec![0.0; layout.sh_width] }
    }

    pub fn from_row(row: &[f64]) -> Self {
        let r3 = |o: usize| [row[o], row[o + 1], row[o + 2]];
        DeformationDelta {
            dmu: r3(DeltaLayout::MU),
            ds: r3(DeltaLayout::SCALE),
            dq: [row[6], row[7], row[8], row[9]],
            dalpha: row[DeltaLayout::ALPHA],
            dsh: row[DeltaLayout::SH..].to_vec(),
        }
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(DeltaLayout::SH + self.dsh.len());
        r.extend_from_slice(&self.dmu);
        r.extend_from_slice(&self.ds);
        r.extend_from_slice(&self.dq);
        r.push(self.dalpha);
        r.extend_from_slice(&self.dsh);
        r
    }

    /// `|dmu| + |ds| + |dq| + |dalpha| + |dsh|`, each an L2 norm.
    pub fn total_magnitude(&self) -> f64 {
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        n(&self.dmu) + n(&self.ds) + n(&self.dq) + self.dalpha.abs() + n(&self.dsh)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PassKind {
    Fused,
    Coarse,
    Fine,
}

#[derive(Clone, Debug)]
struct Pass {
    kind: PassKind,
    temporal: Vec<f64>,
    trace: Option<MlpTrace>,
}

/// Deltas for a batch of Gaussians at one time, plus the state for backward.
#[derive(Clone, Debug)]
pub struct DeltaBatch {
    /// `N x layout.width()`.
    pub out: Array2<f64>,
    pub sample: TemporalSample,
    passes: Vec<Pass>,
}

impl DeltaBatch {
    pub fn len(&self) -> usize {
        self.out.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.out.nrows() == 0
    }

    pub fn delta(&self, i: usize) -> DeformationDelta {
        DeformationDelta::from_row(self.out.row(i).as_slice().expect("standard layout"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrad {
    pub mlp: MlpGrad,
    pub tables: TableGrad,
}

impl FieldGrad {
    pub fn add_assign(&mut self, other: &FieldGrad) {
        self.mlp.add_assign(&other.mlp);
        self.tables.add_assign(&other.tables);
    }

    pub fn mlp_slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for (w, b) in self.mlp.weights.iter().zip(&self.mlp.biases) {
            v.push(w.as_slice().unwrap());
            v.push(b.as_slice().unwrap());
        }
        v
    }

    pub fn table_slices(&self) -> Vec<&[f64]> {
        vec![self.tables.fine.as_slice().unwrap(), self.tables.coarse.as_slice().unwrap()]
    }
}

/// Maps `(per-Gaussian embedding, time)` to attribute deltas.
#[derive(Debug)]
pub struct DeformationField {
    pub mlp: Mlp,
    pub tables: TemporalEmbeddingTable,
    pub fusion: FusionMode,
    layout: DeltaLayout,
    embed_dim: usize,
    sh_degree: usize,
    evaluations: AtomicU64,
}

impl Clone for DeformationField {
    fn clone(&self) -> Self {
        DeformationField {
            mlp: self.mlp.clone(),
            tables: self.tables.clone(),
            fusion: self.fusion,
            layout: self.layout,
            embed_dim: self.embed_dim,
            sh_degree: self.sh_degree,
            evaluations: AtomicU64::new(self.mlp_evaluations()),
        }
    }
}

impl PartialEq for DeformationField {
    fn eq(&self, other: &Self) -> bool {
        self.mlp == other.mlp
            && self.tables == other.tables
            && self.fusion == other.fusion
            && self.layout == other.layout
            && self.embed_dim == other.embed_dim
            && self.sh_degree == other.sh_degree
    }
}

impl DeformationField {
    pub fn new<R: Rng>(cfg: &FieldConfig, rng: &mut R) -> Result<Self> {
        let tables = TemporalEmbeddingTable::random(cfg.fine_len, cfg.coarse_len, cfg.temporal_dim, cfg.table_std, rng)?;
        let layout = layout_for(cfg.sh_degree, cfg.sh_dc_only);
        let input = cfg.fusion.temporal_width(cfg.temporal_dim) + cfg.embed_dim;
        let mlp = Mlp::new(input, cfg.hidden_width, cfg.hidden_layers, layout.width(), rng);
        Self::from_parts(mlp, tables, cfg.fusion, cfg.embed_dim, cfg.sh_degree, cfg.sh_dc_only)
    }

    pub fn from_parts(
        mlp: Mlp,
        tables: TemporalEmbeddingTable,
        fusion: FusionMode,
        embed_dim: usize,
        sh_degree: usize,
        sh_dc_only: bool,
    ) -> Result<Self> {
        let layout = layout_for(sh_degree, sh_dc_only);
        let input = fusion.temporal_width(tables.dim()) + embed_dim;
        if mlp.input_width() != input {
            return Err(Error::Shape(format!("MLP input width {} but fusion/embedding need {input}", mlp.input_width())));
        }
        if mlp.output_width() != layout.width() {
            return Err(Error::Shape(format!("MLP output width {} but deltas need {}", mlp.output_width(), layout.width())));
        }
        Ok(DeformationField { mlp, tables, fusion, layout, embed_dim, sh_degree, evaluations: AtomicU64::new(0) })
    }

    pub fn layout(&self) -> DeltaLayout {
        self.layout
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn sh_dc_only(&self) -> bool {
        self.layout.sh_width == 3 && sh_coeff_count(self.sh_degree) > 1
    }

    /// Total MLP row evaluations so far (one per Gaussian per pass).
    pub fn mlp_evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    /// Same weights, different fusion strategy. The MLP input width must not change.
    pub fn with_fusion(&self, fusion: FusionMode) -> Result<Self> {
        Self::from_parts(self.mlp.clone(), self.tables.clone(), fusion, self.embed_dim, self.sh_degree, self.sh_dc_only())
    }

    fn passes_at(&self, t: f64) -> (TemporalSample, Vec<Pass>) {
        let sample = self.tables.sample(t);
        let pass = |kind, temporal| Pass { kind, temporal, trace: None };
        let passes = match self.fusion {
            FusionMode::Dual => vec![
                pass(PassKind::Coarse, sample.coarse.clone()),
                pass(PassKind::Fine, sample.fine.clone()),
            ],
            mode => {
                let fused = match super::fusion::fuse(&sample.coarse, &sample.fine, mode).expect("table widths agree") {
                    super::fusion::Fused::Single(v) => v,
                    super::fusion::Fused::Pair(..) => unreachable!(),
                };
                vec![pass(PassKind::Fused, fused)]
            }
        };
        (sample, passes)
    }

    fn input_matrix(&self, temporal: &[f64], embeddings: &[f64], n: usize) -> Array2<f64> {
        let tw = temporal.len();
        let mut x = Array2::zeros((n, tw + self.embed_dim));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            let r = row.as_slice_mut().unwrap();
            r[..tw].copy_from_slice(temporal);
            r[tw..].copy_from_slice(&embeddings[i * self.embed_dim..(i + 1) * self.embed_dim]);
        }
        x
    }

    /// Deltas for `n = embeddings.len() / D_e` Gaussians at time `t`: one MLP
    /// pass on `concat(t_fused, e)`, or two summed passes in dual mode.
    pub fn deform_batch(&self, embeddings: &[f64], t: f64, keep_trace: bool) -> Result<DeltaBatch> {
        if self.embed_dim == 0 || embeddings.len() % self.embed_dim != 0 {
            return Err(Error::Shape(format!("{} embedding values for width {}", embeddings.len(), self.embed_dim)));
        }
        let n = embeddings.len() / self.embed_dim;
        let (sample, mut passes) = self.passes_at(t);
        let mut out = Array2::zeros((n, self.layout.width()));
        for pass in passes.iter_mut() {
            let x = self.input_matrix(&pass.temporal, embeddings, n);
            let y = if keep_trace {
                let (y, trace) = self.mlp.forward(x.view())?;
                pass.trace = Some(trace);
                y
            } else {
                self.mlp.forward_inference(x.view())?
            };
            self.evaluations.fetch_add(n as u64, Ordering::Relaxed);
            out += &y;
        }
        Ok(DeltaBatch { out, sample, passes })
    }

    /// Single-pass deformation of one Gaussian. Not available in dual mode.
    pub fn deform(&self, embedding: &[f64], t: f64) -> Result<DeformationDelta> {
        if self.fusion == FusionMode::Dual {
            return Err(Error::Config("deform requires a single-pass fusion mode; use deform_dual".into()));
        }
        Ok(self.deform_batch(embedding, t, false)?.delta(0))
    }

    /// Late-fusion deformation of one Gaussian: coarse and fine passes summed.
    pub fn deform_dual(&self, embedding: &[f64], t: f64) -> Result<DeformationDelta> {
        if self.fusion != FusionMode::Dual {
            return Err(Error::Config("deform_dual requires fusion mode `dual`".into()));
        }
        Ok(self.deform_batch(embedding, t, false)?.delta(0))
    }

    pub fn zero_grad(&self) -> FieldGrad {
        FieldGrad { mlp: MlpGrad::zeros_like(&self.mlp), tables: self.tables.zero_grad() }
    }

    /// Backward of [`deform_batch`]. Returns field gradients and `N x D_e` embedding gradients.
    pub fn backward(&self, batch: &DeltaBatch, d_out: ArrayView2<f64>) -> Result<(FieldGrad, Vec<f64>)> {
        let n = batch.len();
        if d_out.dim() != (n, self.layout.width()) {
            return Err(Error::Shape(format!("delta gradient {:?} vs batch {n}x{}", d_out.dim(), self.layout.width())));
        }
        let mut grad = self.zero_grad();
        let mut d_emb = vec![0.0; n * self.embed_dim];
        let dt = self.tables.dim();
        let mut d_coarse = vec![0.0; dt];
        let mut d_fine = vec![0.0; dt];
        for pass in &batch.passes {
            let trace = pass.trace.as_ref().ok_or(Error::MissingForwardState("deformation trace"))?;
            let (g, dx) = self.mlp.backward(trace, d_out);
            grad.mlp.add_assign(&g);
            let tw = pass.temporal.len();
            let d_temporal: Vec<f64> = (0..tw).map(|j| dx.column(j).sum()).collect();
            let de = dx.slice(s![.., tw..]);
            for (i, row) in de.rows().into_iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    d_emb[i * self.embed_dim + j] += v;
                }
            }
            let (dc, df) = match pass.kind {
                PassKind::Coarse => (d_temporal, vec![0.0; dt]),
                PassKind::Fine => (vec![0.0; dt], d_temporal),
                PassKind::Fused => fuse_backward(&batch.sample.coarse, &batch.sample.fine, self.fusion, &d_temporal),
            };
            for j in 0..dt {
                d_coarse[j] += dc[j];
                d_fine[j] += df[j];
            }
        }
        grad.tables.accumulate(&batch.sample, &d_coarse, &d_fine);
        Ok((grad, d_emb))
    }

    pub fn mlp_params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for layer in self.mlp.layers.iter_mut() {
            v.push(layer.weight.as_slice_mut().unwrap());
            v.push(layer.bias.as_slice_mut().unwrap());
        }
        v
    }

    pub fn table_params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.tables.fine.as_slice_mut().unwrap(), self.tables.coarse.as_slice_mut().unwrap()]
    }

    /// Randomizes the (zero-initialized) head; used by gradient checks and tests.
    pub fn randomize_head<R: Rng>(&mut self, std: f64, rng: &mut R) {
        let normal = Normal::new(0.0, std).unwrap();
        let head = self.mlp.layers.last_mut().unwrap();
        head.weight.mapv_inplace(|_| normal.sample(rng));
        head.bias.mapv_inplace(|_| normal.sample(rng));
    }
}

fn layout_for(sh_degree: usize, dc_only: bool) -> DeltaLayout {
    DeltaLayout { sh_width: if dc_only { 3 } else { 3 * sh_coeff_count(sh_degree) } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(fusion: FusionMode) -> FieldConfig {
        FieldConfig {
            embed_dim: 4,
            temporal_dim: 3,
            hidden_width: 8,
            hidden_layers: 2,
            fine_len: 5,
            coarse_len: 2,
            sh_degree: 1,
            sh_dc_only: false,
            fusion,
            table_std: 1.0,
        }
    }

    fn field(fusion: FusionMode, seed: u64) -> DeformationField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = DeformationField::new(&small_cfg(fusion), &mut rng).unwrap();
        f.randomize_head(0.3, &mut rng);
        f
    }

    #[test]
    fn zero_weights_give_zero_delta() {
        let mut f = field(FusionMode::Product, 1);
        for l in f.mlp.layers.iter_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let d = f.deform(&[0.3, -0.2, 1.0, 0.5], 0.4).unwrap();
        assert_eq!(d, DeformationDelta::zeros(f.layout()));
        let fd = f.with_fusion(FusionMode::Dual).unwrap();
        assert_eq!(fd.deform_dual(&[0.3, -0.2, 1.0, 0.5], 0.4).unwrap(), DeformationDelta::zeros(f.layout()));
    }

    #[test]
    fn deform_is_deterministic() {
        let a = field(FusionMode::Product, 5);
        let b = field(FusionMode::Product, 5);
        let e = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(a.deform(&e, 0.77).unwrap(), b.deform(&e, 0.77).unwrap());
        assert_eq!(a.deform(&e, 0.77).unwrap(), a.deform(&e, 0.77).unwrap());
    }

    #[test]
    fn pass_counters() {
        let f = field(FusionMode::Product, 2);
        f.deform(&[0.0; 4], 0.5).unwrap();
        assert_eq!(f.mlp_evaluations(), 1);
        let d = f.with_fusion(FusionMode::Dual).unwrap();
        d.deform_dual(&[0.0; 4], 0.5).unwrap();
        assert_eq!(d.mlp_evaluations(), 2);
        assert!(f.deform_dual(&[0.0; 4], 0.5).is_err());
        assert!(d.deform(&[0.0; 4], 0.5).is_err());
    }

    #[test]
    fn dual_with_equal_tables_doubles_single_pass() {
        let mut f = field(FusionMode::Dual, 3);
        // coarse rows equal to fine rows at the sampled time: use equal-length copies
        f.tables.coarse = f.tables.fine.clone();
        let e = [0.5, -0.1, 0.2, 0.9];
        let dual = f.deform_dual(&e, 0.3).unwrap();
        let single = f.with_fusion(FusionMode::Fine).unwrap().deform(&e, 0.3).unwrap();
        let a = dual.to_row();
        let b = single.to_row();
        for k in 0..a.len() {
            assert!((a[k] - 2.0 * b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn product_with_unit_coarse_equals_fine() {
        let mut f = field(FusionMode::Product, 4);
        f.tables.coarse.fill(1.0);
        let e = [0.2, 0.4, -0.6, 0.8];
        let a = f.deform(&e, 0.61).unwrap();
        let b = f.with_fusion(FusionMode::Fine).unwrap().deform(&e, 0.61).unwrap();
        assert_eq!(a, b);
    }

    fn check_backward(fusion: FusionMode) {
        let f = field(fusion, 11);
        let n = 3;
        let emb: Vec<f64> = (0..n * 4).map(|i| ((i as f64) * 0.61).sin()).collect();
        let t = 0.37;
        let w = Array2::from_shape_fn((n, f.layout().width()), |(i, j)| ((i * 7 + j) as f64 * 0.3).cos());
        let loss = |f: &DeformationField, emb: &[f64]| (f.deform_batch(emb, t, false).unwrap().out * &w).sum();
        let batch = f.deform_batch(&emb, t, true).unwrap();
        let (g, d_emb) = f.backward(&batch, w.view()).unwrap();
        let h = 1e-6;
        for i in 0..emb.len() {
            let mut p = emb.clone();
            let mut m = emb.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (loss(&f, &p) - loss(&f, &m)) / (2.0 * h);
            assert!((d_emb[i] - fd).abs() < 1e-6, "{fusion} emb {i}: {} vs {fd}", d_emb[i]);
        }
        for r in 0..f.tables.fine.nrows() {
            for c in 0..f.tables.dim() {
                let mut p = f.clone();
                let mut m = f.clone();
                p.tables.fine[(r, c)] += h;
                m.tables.fine[(r, c)] -= h;
                let fd = (loss(&p, &emb) - loss(&m, &emb)) / (2.0 * h);
                assert!((g.tables.fine[(r, c)] - fd).abs() < 1e-6, "{fusion} fine ({r},{c})");
            }
        }
        for r in 0..f.tables.coarse.nrows() {
            for c in 0..f.tables.dim() {
                let mut p = f.clone();
                let mut m = f.clone();
                p.tables.coarse[(r, c)] += h;
                m.tables.coarse[(r, c)] -= h;
                let fd = (loss(&p, &emb) - loss(&m, &emb)) / (2.0 * h);
                assert!((g.tables.coarse[(r, c)] - fd).abs() < 1e-6, "{fusion} coarse ({r},{c})");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_all_modes() {
        for mode in FusionMode::ALL {
            check_backward(mode);
        }
    }

    #[test]
    fn missing_trace_is_an_error() {
        let f = field(FusionMode::Product, 1);
        let batch = f.deform_batch(&[0.0; 4], 0.2, false).unwrap();
        let d = Array2::zeros((1, f.layout().width()));
        assert!(matches!(f.backward(&batch, d.view()), Err(Error::MissingForwardState(_))));
    }
}
