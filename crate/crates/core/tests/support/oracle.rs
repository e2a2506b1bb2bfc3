//! Brute-force oracles for the four penalized problems on tiny instances.
//!
//! Each objective is recomputed here with plain loops, then minimized by a
//! zoomed lattice search over the parameters and full enumeration of the
//! selection size. The library's objective must come within 1e-6 of the
//! oracle minimum and must equal the oracle objective at its own estimate.

use nalgebra::{DMatrix, DVector};
use pmls::estimators::first_step::{default_n_grid, pmls_first_step, pmls_improved};
use pmls::estimators::second_step::{default_top_grid, second_step_top, upper_expectation_sample};
use pmls::{Dataset, TuningParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const INSTANCES: usize = 20;
const TOL: f64 = 1e-6;

pub struct Instance {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub lambda: f64,
}

impl Instance {
    pub fn random(seed: u64) -> Instance {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = rng.random_range(6..=10);
        let p = rng.random_range(1..=2);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-2.0..3.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| {
                let level = if rng.random_bool(0.5) { 2.0 } else { -1.0 };
                r.iter().sum::<f64>() + level + rng.random_range(-1.0..1.0)
            })
            .collect();
        let lambda = [0.0, 0.05, 0.3, 1.0][rng.random_range(0..4)];
        Instance { x, y, lambda }
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::from_rows(&self.x, &self.y).expect("random instance is full rank")
    }

    fn p(&self) -> usize {
        self.x[0].len()
    }
}

/// Descending order, ties by ascending index.
fn order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// `mean over U_n - mean over L_n` of `values`, halves taken from `rank`.
fn half_diff(values: &[f64], rank: &[usize], n: usize) -> f64 {
    let h = n / 2;
    let mut up = 0.0;
    for &i in &rank[..h] {
        up += values[i];
    }
    let mut lo = 0.0;
    for &i in &rank[h..n] {
        lo += values[i];
    }
    up / h as f64 - lo / (n - h) as f64
}

fn ols_residuals(inst: &Instance) -> Vec<f64> {
    let p = inst.p();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (r, y) in inst.x.iter().zip(&inst.y) {
        for a in 0..p {
            xty[a] += r[a] * y;
            for b in 0..p {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
    }
    let beta = xtx.lu().solve(&xty).expect("invertible");
    inst.x
        .iter()
        .zip(&inst.y)
        .map(|(r, y)| y - (0..p).map(|j| r[j] * beta[j]).sum::<f64>())
        .collect()
}

/// First-step objective at `(beta, mu, n)`, plus `lambda1 |Lambda_n|`.
fn first_step_objective(
    inst: &Instance,
    d: &[f64],
    beta: &[f64],
    mu: f64,
    n: usize,
    lambda1: f64,
) -> f64 {
    let p = inst.p();
    let resid: Vec<f64> = inst
        .x
        .iter()
        .zip(&inst.y)
        .map(|(r, y)| y - (0..p).map(|j| r[j] * beta[j]).sum::<f64>() - mu)
        .collect();
    let g: Vec<f64> = resid.iter().map(|e| e * e).collect();
    let rank = order(&g);
    let data: f64 = rank[..n].iter().map(|&i| g[i]).sum::<f64>() / n as f64;

    let centered_sq: Vec<f64> = inst.y.iter().map(|y| (y - mu) * (y - mu)).collect();
    let d_sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    let upsilon2 = half_diff(&centered_sq, &rank, n);
    let upsilon1 = half_diff(&d_sq, &rank, n);
    let mut xb = 0.0;
    for &i in &rank[..n] {
        xb += (0..p).map(|j| inst.x[i][j] * beta[j]).sum::<f64>();
    }
    xb /= n as f64;
    let delta = upsilon2 - 2.0 * xb * upsilon1;
    let lambda_n = half_diff(d, &order(d), n);
    data + inst.lambda * delta.abs() + lambda1 * lambda_n.abs()
}

/// Minimizes `f` over a box by a lattice followed by zooming around the
/// best few points.
fn zoom_min(f: &dyn Fn(&[f64]) -> f64, center: &[f64], half_width: &[f64]) -> f64 {
    zoom_argmin(f, center, half_width).0
}

fn zoom_argmin(f: &dyn Fn(&[f64]) -> f64, center: &[f64], half_width: &[f64]) -> (f64, Vec<f64>) {
    let dim = center.len();
    let lattice = |c: &[f64], w: &[f64], k: usize| -> Vec<(f64, Vec<f64>)> {
        let total = (2 * k + 1).pow(dim as u32);
        (0..total)
            .map(|mut code| {
                let pt: Vec<f64> = (0..dim)
                    .map(|j| {
                        let step = (code % (2 * k + 1)) as f64 - k as f64;
                        code /= 2 * k + 1;
                        c[j] + w[j] * step / k as f64
                    })
                    .collect();
                (f(&pt), pt)
            })
            .collect()
    };
    let mut coarse = lattice(center, half_width, 20);
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = coarse[0].clone();
    for (_, start) in coarse.iter().take(12) {
        let mut c = start.clone();
        let mut w: Vec<f64> = half_width.iter().map(|h| h / 10.0).collect();
        for _ in 0..40 {
            let pts = lattice(&c, &w, 4);
            let (v, pt) = pts
                .into_iter()
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("non-empty lattice");
            if v < best.0 {
                best = (v, pt.clone());
            }
            c = pt;
            w.iter_mut().for_each(|h| *h *= 0.6);
        }
    }
    best
}

fn first_step_oracle(inst: &Instance, lambda1: f64) -> f64 {
    let d = ols_residuals(inst);
    let p = inst.p();
    let spread = inst.y.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
    let mut center = vec![1.0; p];
    center.push(0.0);
    let mut width = vec![4.0; p];
    width.push(2.0 * spread);
    default_n_grid(inst.y.len(), p)
        .into_iter()
        .map(|n| {
            let f = |t: &[f64]| first_step_objective(inst, &d, &t[..p], t[p], n, lambda1);
            zoom_min(&f, &center, &width)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `(1/n) sum (h_(j) - mu)^2 + lambda * pen(Gamma_n)` minimized over the
/// lattice in `mu` for every `n`.
fn top_mean_oracle(h: &[f64], lambda: f64, signed: bool) -> f64 {
    let rank = order(h);
    let spread = h.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
    default_top_grid(h.len())
        .into_iter()
        .map(|n| {
            let gamma = half_diff(h, &rank, n);
            let pen = if signed { gamma } else { gamma.abs() };
            let f = |t: &[f64]| {
                rank[..n]
                    .iter()
                    .map(|&i| (h[i] - t[0]).powi(2))
                    .sum::<f64>()
                    / n as f64
                    + lambda * pen
            };
            zoom_min(&f, &[0.0], &[2.0 * spread])
        })
        .fold(f64::INFINITY, f64::min)
}

fn tuning(lambda: f64, lambda1: f64) -> TuningParams {
    TuningParams {
        lambda: Some(lambda),
        lambda_tilde: Some(lambda),
        lambda1,
        ..TuningParams::default()
    }
}

/// Worst shortfall `solver - oracle` over the instances, for each problem.
pub struct OracleReport {
    pub first_step: f64,
    pub second_step: f64,
    pub improved: f64,
    pub beta_zero: f64,
    /// Largest gap between a reported objective and the oracle objective
    /// recomputed at the reported estimate.
    pub consistency: f64,
}

pub fn run_oracles(instances: usize) -> OracleReport {
    let mut rep = OracleReport {
        first_step: f64::NEG_INFINITY,
        second_step: f64::NEG_INFINITY,
        improved: f64::NEG_INFINITY,
        beta_zero: f64::NEG_INFINITY,
        consistency: 0.0,
    };
    for seed in 0..instances as u64 {
        let inst = Instance::random(seed);
        let ds = inst.dataset();
        let d = ols_residuals(&inst);

        let first = pmls_first_step(&ds, &tuning(inst.lambda, 0.0)).unwrap();
        let at = first_step_objective(&inst, &d, &first.beta, first.mu, first.n_selected, 0.0);
        rep.consistency = rep.consistency.max((at - first.objective).abs());
        rep.first_step = rep
            .first_step
            .max(first.objective - first_step_oracle(&inst, 0.0));

        let lambda1 = 0.5;
        let improved = pmls_improved(&ds, &tuning(inst.lambda, lambda1)).unwrap();
        let at = first_step_objective(
            &inst,
            &d,
            &improved.beta,
            improved.mu,
            improved.n_selected,
            lambda1,
        );
        rep.consistency = rep.consistency.max((at - improved.objective).abs());
        rep.improved = rep
            .improved
            .max(improved.objective - first_step_oracle(&inst, lambda1));

        let second = second_step_top(&ds, &first.beta, &tuning(inst.lambda, 0.0)).unwrap();
        let h: Vec<f64> = ds.residuals(&first.beta).iter().copied().collect();
        rep.second_step = rep
            .second_step
            .max(second.objective - top_mean_oracle(&h, inst.lambda, false));

        let zero = upper_expectation_sample(&inst.y, &tuning(inst.lambda, 0.0)).unwrap();
        rep.beta_zero = rep
            .beta_zero
            .max(zero.objective - top_mean_oracle(&inst.y, inst.lambda, true));
    }
    rep
}

pub fn passes(rep: &OracleReport) -> bool {
    [rep.first_step, rep.second_step, rep.improved, rep.beta_zero]
        .iter()
        .all(|gap| *gap <= TOL)
        && rep.consistency <= 1e-9
}
