//! Replication data: covariates, latent component tags and responses.
//!
//! Each replication seeds ChaCha20 with `seed + rep`; stream 0 draws the
//! estimation sample and stream 1 the test sample.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{PmlsError, Result};
use crate::model::{Component, Dataset, ErrorFamily};
use crate::simulation::scenario::ExperimentConfig;

pub const RNG_ALGORITHM: &str =
    "ChaCha20 (rand_chacha), seed_from_u64(seed + rep), stream 0 train / 1 test";

/// Rows per component: `floor(N / L)` each, the remainder going one apiece
/// to the last components.
pub fn component_counts(n: usize, l: usize) -> Vec<usize> {
    let base = n / l;
    let extra = n % l;
    (0..l).map(|t| base + usize::from(t >= l - extra)).collect()
}

fn rng_for(config: &ExperimentConfig, rep: usize, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(rep as u64));
    rng.set_stream(stream);
    rng
}

pub fn draw_error<R: Rng + ?Sized>(c: &Component, rng: &mut R) -> Result<f64> {
    let sd = c.variance.sqrt();
    match c.family {
        ErrorFamily::Normal => Normal::new(c.mean, sd)
            .map(|d| d.sample(rng))
            .map_err(|e| PmlsError::InvalidConfig(e.to_string())),
        ErrorFamily::Uniform => {
            let half = sd * 3f64.sqrt();
            Uniform::new(c.mean - half, c.mean + half)
                .map(|d| d.sample(rng))
                .map_err(|e| PmlsError::InvalidConfig(e.to_string()))
        }
    }
}

fn draw(config: &ExperimentConfig, n: usize, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    let comps = config.scenario.components();
    let mut labels: Vec<usize> = component_counts(n, comps.len())
        .into_iter()
        .enumerate()
        .flat_map(|(t, k)| std::iter::repeat_n(t, k))
        .collect();
    labels.shuffle(rng);

    let p = config.beta_true.len();
    let laws = config
        .x_distribution
        .iter()
        .map(|l| Normal::new(l.mean, l.variance.sqrt()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| PmlsError::InvalidConfig(e.to_string()))?;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut signal = 0.0;
        for (j, law) in laws.iter().enumerate() {
            let v = law.sample(rng);
            x[(i, j)] = v;
            signal += config.beta_true[j] * v;
        }
        y[i] = signal + draw_error(&comps[labels[i]], rng)?;
    }
    Dataset::new(x, y)?.with_labels(labels)
}

/// Estimation sample of replication `rep`.
pub fn generate(config: &ExperimentConfig, rep: usize) -> Result<Dataset> {
    draw(config, config.n, &mut rng_for(config, rep, 0))
}

/// Independent test sample of replication `rep`, if the config has one.
pub fn generate_test(config: &ExperimentConfig, rep: usize) -> Result<Option<Dataset>> {
    if config.test_size == 0 {
        return Ok(None);
    }
    draw(config, config.test_size, &mut rng_for(config, rep, 1)).map(Some)
}
