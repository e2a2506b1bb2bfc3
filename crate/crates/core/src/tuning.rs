//! Cross-validated choice of `(lambda, n)` for the first step and of
//! `(lambda_tilde, n_tilde)` for the second step.
//!
//! Folds are drawn once over all rows. For a candidate `(lambda, n)` each
//! training part is fitted at the proportionally scaled size, and each test
//! fold contributes its `n_nu = max(1, round(n |T_nu| / N))` largest
//! held-out losses. The criterion is the pooled held-out mean plus a
//! `k log(n) / n` complexity term (`k = p + 2` first step, `k = 2` second).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};
use crate::estimators::first_step::pmls_improved_local;
use crate::estimators::penalty::MIN_SELECTION;
use crate::estimators::second_step::top_mean_fit;
use crate::model::{squared_quantities, Dataset, TuningParams};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CvGrid {
    pub lambda_grid: Vec<f64>,
    /// Selection sizes on the full data.
    pub n_grid: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl CvGrid {
    /// `lambda in {0, N^-0.7, N^-0.5, N^-0.3}`, `n / N in {0.1, ..., 1.0}`.
    pub fn default_for(n_rows: usize, p: usize, seed: u64) -> Self {
        let nf = n_rows as f64;
        let lambda_grid = vec![0.0, nf.powf(-0.7), nf.powf(-0.5), nf.powf(-0.3)];
        let floor = MIN_SELECTION.max(p + 2);
        let mut n_grid: Vec<usize> = (1..=10)
            .map(|k| ((k as f64 / 10.0) * nf).round() as usize)
            .map(|n| n.clamp(floor.min(n_rows), n_rows))
            .collect();
        n_grid.dedup();
        CvGrid {
            lambda_grid,
            n_grid,
            folds: DEFAULT_FOLDS,
            seed,
        }
    }

    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(PmlsError::InvalidConfig(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.lambda_grid.is_empty() || self.n_grid.is_empty() {
            return Err(PmlsError::InvalidConfig(
                "cross-validation grids must be non-empty".into(),
            ));
        }
        if self
            .lambda_grid
            .iter()
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(PmlsError::InvalidConfig(
                "lambda grid must be finite and >= 0".into(),
            ));
        }
        if !self.lambda_grid.windows(2).all(|w| w[0] <= w[1])
            || !self.n_grid.windows(2).all(|w| w[0] <= w[1])
        {
            return Err(PmlsError::InvalidConfig(
                "cross-validation grids must be sorted".into(),
            ));
        }
        if let Some(&n) = self
            .n_grid
            .iter()
            .find(|&&n| n < MIN_SELECTION || n > n_rows)
        {
            return Err(PmlsError::InvalidConfig(format!(
                "grid size {n} outside [{MIN_SELECTION}, {n_rows}]"
            )));
        }
        Ok(())
    }
}

/// One grid point of the criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CvRow {
    pub lambda: f64,
    pub n: usize,
    pub held_out: f64,
    pub complexity: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CvOutcome {
    pub lambda: f64,
    pub n: usize,
    pub table: Vec<CvRow>,
}

/// Test-fold row indices: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n_rows: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for (fold, rows) in out.iter_mut().enumerate() {
        if rows.is_empty() {
            return Err(PmlsError::EmptyFold { fold });
        }
        rows.sort_unstable();
    }
    Ok(out)
}

/// Training and test parts of every fold.
pub struct Folds {
    pub test: Vec<Vec<usize>>,
    pub train: Vec<Vec<usize>>,
    pub n_rows: usize,
}

impl Folds {
    pub fn new(n_rows: usize, folds: usize, seed: u64) -> Result<Self> {
        let test = fold_assignment(n_rows, folds, seed)?;
        let train = test
            .iter()
            .map(|t| {
                let mut mask = vec![true; n_rows];
                t.iter().for_each(|&i| mask[i] = false);
                (0..n_rows).filter(|&i| mask[i]).collect()
            })
            .collect();
        Ok(Folds {
            test,
            train,
            n_rows,
        })
    }

    /// `round(n |part| / N)`.
    pub fn scaled(&self, n: usize, part: usize) -> usize {
        (n as f64 * part as f64 / self.n_rows as f64).round() as usize
    }

    /// Selection size used when fitting on fold `nu`'s training part.
    pub fn train_size(&self, n: usize, nu: usize, p: usize) -> usize {
        let len = self.train[nu].len();
        self.scaled(n, len).max(MIN_SELECTION.max(p + 2)).min(len)
    }

    /// Number of held-out losses fold `nu` contributes.
    pub fn test_size(&self, n: usize, nu: usize) -> usize {
        let len = self.test[nu].len();
        self.scaled(n, len).clamp(1, len)
    }
}

/// Sum of the `k` largest entries.
fn top_k_sum(mut v: Vec<f64>, k: usize) -> f64 {
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        v.truncate(k);
    }
    v.iter().sum()
}

fn complexity(k: f64, n: usize) -> f64 {
    k * (n as f64).ln() / n as f64
}

/// Ties go to the smallest `lambda`, then the smallest `n`.
fn pick(table: Vec<CvRow>) -> CvOutcome {
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        let b = &table[best];
        let better =
            row.score < b.score || (row.score == b.score && (row.lambda, row.n) < (b.lambda, b.n));
        if better {
            best = i;
        }
    }
    CvOutcome {
        lambda: table[best].lambda,
        n: table[best].n,
        table,
    }
}

/// First-step criterion at one grid point.
pub fn cv_criterion(
    ds: &Dataset,
    folds: &Folds,
    train_sets: &[Dataset],
    base: &TuningParams,
    lambda: f64,
    n: usize,
) -> Result<CvRow> {
    let p = ds.n_cols();
    let (mut loss, mut count) = (0.0, 0usize);
    for (nu, train) in train_sets.iter().enumerate() {
        let tuning = TuningParams {
            lambda: Some(lambda),
            n_lambda: Some(folds.train_size(n, nu, p)),
            ..base.clone()
        };
        let fit = pmls_improved_local(train, &tuning)?;
        let test = ds.select_rows(&folds.test[nu])?;
        let g = squared_quantities(&test, &fit.beta, fit.mu);
        let k = folds.test_size(n, nu);
        loss += top_k_sum(g, k);
        count += k;
    }
    let held_out = loss / count as f64;
    let complexity = complexity((p + 2) as f64, n);
    Ok(CvRow {
        lambda,
        n,
        held_out,
        complexity,
        score: held_out + complexity,
    })
}

fn grid_points(grid: &CvGrid) -> Vec<(f64, usize)> {
    grid.lambda_grid
        .iter()
        .flat_map(|&l| grid.n_grid.iter().map(move |&n| (l, n)))
        .collect()
}

/// Selects `(lambda, n_lambda)` for the first step (improved when
/// `base.lambda1 > 0`; at fixed `n` the extra term is constant).
pub fn cv_select_theta(
    ds: &Dataset,
    grid: &CvGrid,
    base: &TuningParams,
) -> Result<(TuningParams, CvOutcome)> {
    grid.validate(ds.n_rows())?;
    let folds = Folds::new(ds.n_rows(), grid.folds, grid.seed)?;
    let train_sets = folds
        .train
        .iter()
        .map(|rows| ds.select_rows(rows))
        .collect::<Result<Vec<_>>>()?;
    let table = grid_points(grid)
        .into_par_iter()
        .map(|(l, n)| cv_criterion(ds, &folds, &train_sets, base, l, n))
        .collect::<Result<Vec<_>>>()?;
    let outcome = pick(table);
    let tuning = TuningParams {
        lambda: Some(outcome.lambda),
        n_lambda: Some(outcome.n),
        ..base.clone()
    };
    Ok((tuning, outcome))
}

/// Second-step criterion at one grid point, on `h = Y - X beta`.
///
/// Test folds are truncated in their own descending order of `h`, the
/// ranking the estimator uses, rather than by the size of the loss.
pub fn cv_criterion_tilde(h: &[f64], folds: &Folds, lambda: f64, n: usize) -> Result<CvRow> {
    let (mut loss, mut count) = (0.0, 0usize);
    for nu in 0..folds.test.len() {
        let train: Vec<f64> = folds.train[nu].iter().map(|&i| h[i]).collect();
        let n_train = folds.train_size(n, nu, 0);
        let fit = top_mean_fit(&train, &[n_train], &|_| lambda, true)?;
        let mut test: Vec<f64> = folds.test[nu].iter().map(|&i| h[i]).collect();
        test.sort_by(|a, b| b.total_cmp(a));
        let k = folds.test_size(n, nu);
        loss += test[..k].iter().map(|v| (v - fit.mu).powi(2)).sum::<f64>();
        count += k;
    }
    let held_out = loss / count as f64;
    let complexity = complexity(2.0, n);
    Ok(CvRow {
        lambda,
        n,
        held_out,
        complexity,
        score: held_out + complexity,
    })
}

fn select_tilde(h: &[f64], grid: &CvGrid) -> Result<CvOutcome> {
    grid.validate(h.len())?;
    let folds = Folds::new(h.len(), grid.folds, grid.seed)?;
    let table = grid_points(grid)
        .into_par_iter()
        .map(|(l, n)| cv_criterion_tilde(h, &folds, l, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(pick(table))
}

/// Selects `(lambda_tilde, n_lambda_tilde)` for the upper second step.
pub fn cv_select_theta_tilde(
    ds: &Dataset,
    beta: &[f64],
    grid: &CvGrid,
    base: &TuningParams,
) -> Result<(TuningParams, CvOutcome)> {
    let h: Vec<f64> = ds.residuals(beta).iter().copied().collect();
    let outcome = select_tilde(&h, grid)?;
    let tuning = TuningParams {
        lambda_tilde: Some(outcome.lambda),
        n_lambda_tilde: Some(outcome.n),
        ..base.clone()
    };
    Ok((tuning, outcome))
}

/// Same selection for the lower tail: runs on `-(Y - X beta)`.
pub fn cv_select_theta_tilde_lower(
    ds: &Dataset,
    beta: &[f64],
    grid: &CvGrid,
    base: &TuningParams,
) -> Result<(TuningParams, CvOutcome)> {
    let h: Vec<f64> = ds.residuals(beta).iter().map(|v| -v).collect();
    let outcome = select_tilde(&h, grid)?;
    let tuning = TuningParams {
        lambda_tilde: Some(outcome.lambda),
        n_lambda_tilde: Some(outcome.n),
        ..base.clone()
    };
    Ok((tuning, outcome))
}
