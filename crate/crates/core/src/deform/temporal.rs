use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Learnable coarse and fine temporal embedding sequences, sampled by linear
/// interpolation at normalized time `t in [0, 1]`.
#[derive(Debug)]
pub struct TemporalEmbeddingTable {
    /// `L_f x D_t`.
    pub fine: Array2<f64>,
    /// `L_c x D_t`.
    pub coarse: Array2<f64>,
    clamped: AtomicU64,
}

impl Clone for TemporalEmbeddingTable {
    fn clone(&self) -> Self {
        TemporalEmbeddingTable {
            fine: self.fine.clone(),
            coarse: self.coarse.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for TemporalEmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.fine == other.fine && self.coarse == other.coarse
    }
}

/// Interpolation stencil: `(1 - w) * row[lo] + w * row[lo + 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lerp {
    pub lo: usize,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSample {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub coarse_lerp: Lerp,
    pub fine_lerp: Lerp,
}

/// Gradient with the table's shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct TableGrad {
    pub fine: Array2<f64>,
    pub coarse: Array2<f64>,
}

/// Default sequence lengths: fine = frames / 5, coarse = fine / 5, both at least 2.
pub fn default_lengths(frames: usize) -> (usize, usize) {
    let fine = (frames / 5).max(2);
    (fine, (fine / 5).max(2))
}

impl TemporalEmbeddingTable {
    pub fn new(fine: Array2<f64>, coarse: Array2<f64>) -> Result<Self> {
        if fine.nrows() < 2 || coarse.nrows() < 2 {
            return Err(Error::Shape("temporal tables need at least 2 rows".into()));
        }
        if coarse.nrows() > fine.nrows() {
            return Err(Error::Shape(format!("coarse length {} exceeds fine length {}", coarse.nrows(), fine.nrows())));
        }
        if fine.ncols() != coarse.ncols() {
            return Err(Error::Shape("coarse and fine tables differ in width".into()));
        }
        if !fine.iter().chain(coarse.iter()).all(|v| v.is_finite()) {
            return Err(Error::Shape("temporal table has non-finite entries".into()));
        }
        Ok(TemporalEmbeddingTable { fine, coarse, clamped: AtomicU64::new(0) })
    }

    pub fn random<R: Rng>(fine_len: usize, coarse_len: usize, dim: usize, std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let fine = Array2::from_shape_fn((fine_len, dim), |_| normal.sample(rng));
        let coarse = Array2::from_shape_fn((coarse_len, dim), |_| normal.sample(rng));
        Self::new(fine, coarse)
    }

    pub fn dim(&self) -> usize {
        self.fine.ncols()
    }

    /// Number of samples whose time had to be clamped into `[0, 1]`.
    pub fn clamped_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn sample(&self, t: f64) -> TemporalSample {
        let tc = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        if tc != t {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            log::warn!("time {t} clamped into [0, 1]");
        }
        let (fine, fine_lerp) = interpolate(&self.fine, tc);
        let (coarse, coarse_lerp) = interpolate(&self.coarse, tc);
        TemporalSample { coarse, fine, coarse_lerp, fine_lerp }
    }

    pub fn zero_grad(&self) -> TableGrad {
        TableGrad { fine: Array2::zeros(self.fine.raw_dim()), coarse: Array2::zeros(self.coarse.raw_dim()) }
    }
}

impl TableGrad {
    pub fn accumulate(&mut self, sample: &TemporalSample, d_coarse: &[f64], d_fine: &[f64]) {
        scatter(&mut self.coarse, sample.coarse_lerp, d_coarse);
        scatter(&mut self.fine, sample.fine_lerp, d_fine);
    }

    pub fn add_assign(&mut self, other: &TableGrad) {
        self.fine += &other.fine;
        self.coarse += &other.coarse;
    }
}

fn interpolate(table: &Array2<f64>, t: f64) -> (Vec<f64>, Lerp) {
    let last = table.nrows() - 1;
    let pos = t * last as f64;
    let lo = (pos.floor() as usize).min(last - 1);
    let w = pos - lo as f64;
    let a = table.row(lo);
    let b = table.row(lo + 1);
    let row = a.iter().zip(b.iter()).map(|(x, y)| (1.0 - w) * x + w * y).collect();
    (row, Lerp { lo, w })
}

fn scatter(grad: &mut Array2<f64>, lerp: Lerp, d: &[f64]) {
    for (j, g) in d.iter().enumerate() {
        grad[(lerp.lo, j)] += (1.0 - lerp.w) * g;
        grad[(lerp.lo + 1, j)] += lerp.w * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table() -> TemporalEmbeddingTable {
        let fine = array![[1.0, 2.0], [3.0, 5.0], [-1.0, 0.5]];
        let coarse = array![[0.5, 0.25], [4.0, -4.0]];
        TemporalEmbeddingTable::new(fine, coarse).unwrap()
    }

    #[test]
    fn endpoints_are_exact_rows() {
        let t = table();
        let s0 = t.sample(0.0);
        assert_eq!(s0.fine, vec![1.0, 2.0]);
        assert_eq!(s0.coarse, vec![0.5, 0.25]);
        let s1 = t.sample(1.0);
        assert_eq!(s1.fine, vec![-1.0, 0.5]);
        assert_eq!(s1.coarse, vec![4.0, -4.0]);
    }

    #[test]
    fn quarter_time_is_midpoint_of_first_two_rows() {
        // t * (L - 1) = 0.5 -> halfway between rows 0 and 1
        let s = table().sample(0.25);
        assert_eq!(s.fine, vec![2.0, 3.5]);
    }

    #[test]
    fn out_of_range_is_clamped_and_counted() {
        let t = table();
        assert_eq!(t.sample(1.5).fine, vec![-1.0, 0.5]);
        assert_eq!(t.sample(-0.1).fine, vec![1.0, 2.0]);
        assert_eq!(t.clamped_count(), 2);
    }

    #[test]
    fn invariants_enforced() {
        assert!(TemporalEmbeddingTable::new(Array2::zeros((2, 3)), Array2::zeros((3, 3))).is_err());
        assert!(TemporalEmbeddingTable::new(Array2::zeros((1, 3)), Array2::zeros((1, 3))).is_err());
    }

    #[test]
    fn default_lengths_follow_divisors() {
        assert_eq!(default_lengths(60), (12, 2));
        assert_eq!(default_lengths(300), (60, 12));
        assert_eq!(default_lengths(3), (2, 2));
    }

    #[test]
    fn scatter_matches_finite_differences() {
        let t = table();
        let w = [0.3, -0.7];
        let time = 0.8;
        let mut g = t.zero_grad();
        let s = t.sample(time);
        g.accumulate(&s, &w, &w);
        let f = |tab: &TemporalEmbeddingTable| {
            let s = tab.sample(time);
            s.fine.iter().chain(s.coarse.iter()).zip(w.iter().chain(w.iter())).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let mut p = t.clone();
                let mut m = t.clone();
                p.fine[(r, c)] += h;
                m.fine[(r, c)] -= h;
                assert!((g.fine[(r, c)] - (f(&p) - f(&m)) / (2.0 * h)).abs() < 1e-8);
            }
        }
    }
}
