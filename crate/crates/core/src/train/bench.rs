//! Deformation throughput per fusion mode.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::deform::{DeformationField, FieldConfig, FusionMode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DeformBench {
    pub mode: FusionMode,
    /// Median over repetitions of the time to deform all Gaussians at all timesteps.
    pub median_ms: f64,
    /// MLP row evaluations per (Gaussian, timestep), from the field's counter.
    pub passes: f64,
}

/// Times `deform_batch` for `n` random embeddings at `timesteps` evenly spaced
/// times. Every mode gets a field built from `cfg` with the same seed, so the
/// MLP sizes agree (concat only widens the input layer).
pub fn benchmark_deform(cfg: &FieldConfig, n: usize, timesteps: usize, modes: &[FusionMode], reps: usize, seed: u64) -> Result<Vec<DeformBench>> {
    if n == 0 || timesteps == 0 {
        return Err(Error::Config("benchmark needs at least one Gaussian and one timestep".into()));
    }
    let reps = reps.max(20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let embeddings: Vec<f64> = (0..n * cfg.embed_dim).map(|_| normal.sample(&mut rng)).collect();
    let times: Vec<f64> = (0..timesteps).map(|k| if timesteps == 1 { 0.5 } else { k as f64 / (timesteps - 1) as f64 }).collect();
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let field = DeformationField::new(&FieldConfig { fusion: mode, ..cfg.clone() }, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let mut samples = Vec::with_capacity(reps);
        field.reset_evaluations();
        for _ in 0..reps {
            let start = Instant::now();
            for &t in &times {
                std::hint::black_box(field.deform_batch(&embeddings, t, false)?);
            }
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        samples.sort_by(f64::total_cmp);
        let passes = field.mlp_evaluations() as f64 / (reps * n * timesteps) as f64;
        out.push(DeformBench { mode, median_ms: samples[reps / 2], passes });
    }
    Ok(out)
}
