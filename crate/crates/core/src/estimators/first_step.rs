//! First-step PMLS estimate of `(beta, mu_*)` and its improved variant.
//!
//! For a fixed selection size `n` the objective is
//!
//! ```text
//! (1/n) sum_{j<=n} G_(j)(beta, mu) + lambda |Delta_hat_n(beta, mu)|  [+ lambda1 |Lambda_n|]
//! ```
//!
//! `Delta_hat` is affine in `theta = (beta, mu)` once the half split of the
//! ordered `G` is fixed, and the top-`n` mean is convex in `theta`. The
//! solver alternates between ranking `G` at the current `theta` and solving
//! the fixed-split problem exactly, keeping the best true objective seen.
//!
//! The objective jumps where the split changes, and its optima sit on the
//! faces between split cells. A global phase therefore samples the region
//! where the data term can still beat the best value, solves the cells of
//! the promising samples as quadratic programs, walks to neighbouring cells
//! while that helps, and finishes with a pattern search. On small samples
//! it also follows random rays, tracking every change of the ordering
//! exactly. The phase repeats while it improves, up to a fixed count.
//! Search directions come from a whitening whose axis signs follow the
//! data, so the computed estimate is equivariant under column scaling.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashSet};
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{PmlsError, Result};
use crate::estimators::cell;
use crate::estimators::convex::{self, AffinePenalty};
use crate::estimators::ols::{ols_fit, Centering};
use crate::estimators::penalty::{self, half_difference, penalty_stats, MIN_SELECTION};
use crate::linalg;
use crate::model::{order_view, squared_quantities, Dataset, TuningParams};

/// Cap on rank/solve alternations per selection size.
pub const MAX_ALTERNATIONS: usize = 50;

/// Skewness of squared least squares residuals below which the asymmetry
/// the penalty relies on is considered absent.
pub const C0_SKEWNESS_WARN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStepFit {
    pub beta: Vec<f64>,
    /// Intercept estimate; its target is the star component mean.
    pub mu: f64,
    pub n_selected: usize,
    pub lambda: f64,
    pub lambda1: f64,
    /// Full penalized objective including any `lambda1 |Lambda_n|` term.
    pub objective: f64,
    pub data_term: f64,
    pub delta_hat: f64,
    pub lambda_stat: f64,
    /// Original indices of the selected rows, by descending `G`.
    pub selected: Vec<usize>,
    pub sigma_star_sq: f64,
    /// `(p+1) x (p+1)` plug-in covariance of `(beta, mu)`.
    pub cov_beta_mu: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub c0_skewness: f64,
    pub beta_ols: Vec<f64>,
}

/// Data shared by the fits at every selection size.
struct Context<'a> {
    ds: &'a Dataset,
    z: DMatrix<f64>,
    y: DVector<f64>,
    ols_residuals: Vec<f64>,
    ols_beta: Vec<f64>,
    init: DVector<f64>,
}

impl<'a> Context<'a> {
    fn new(ds: &'a Dataset) -> Result<Self> {
        let ols = ols_fit(ds, Centering::None)?;
        let positive: Vec<f64> = ols.residuals.iter().copied().filter(|r| *r > 0.0).collect();
        let mu0 = if positive.is_empty() {
            0.0
        } else {
            linalg::mean(&positive)
        };
        let p = ds.n_cols();
        let init = DVector::from_fn(p + 1, |j, _| if j < p { ols.beta[j] } else { mu0 });
        Ok(Context {
            ds,
            z: linalg::with_intercept(ds.x()),
            y: ds.y().clone(),
            ols_residuals: ols.residuals,
            ols_beta: ols.beta,
            init,
        })
    }

    fn split_theta(&self, theta: &DVector<f64>) -> (Vec<f64>, f64) {
        let p = self.ds.n_cols();
        (theta.rows(0, p).iter().copied().collect(), theta[p])
    }
}

/// Objective pieces at one `theta`, with the split induced by `theta`.
#[derive(Clone)]
struct Evaluation {
    objective: f64,
    data_term: f64,
    delta_hat: f64,
    upper: Vec<usize>,
    lower: Vec<usize>,
    penalty: AffinePenalty,
}

fn evaluate(ctx: &Context, n: usize, lambda: f64, theta: &DVector<f64>) -> Result<Evaluation> {
    let (beta, mu) = ctx.split_theta(theta);
    let g = squared_quantities(ctx.ds, &beta, mu);
    let view = order_view(&g);
    let stats = penalty_stats(ctx.ds, &view, n, &ctx.ols_residuals, &beta, mu)?;
    let data_term = view.top_sum(n) / n as f64;
    let (a, c) = stats.affine_coefficients();
    let mut upper = view.upper_half(n).to_vec();
    let mut lower = view.lower_half(n).to_vec();
    upper.sort_unstable();
    lower.sort_unstable();
    Ok(Evaluation {
        objective: data_term + lambda * stats.delta_hat.abs(),
        data_term,
        delta_hat: stats.delta_hat,
        upper,
        lower,
        penalty: AffinePenalty {
            weight: lambda,
            a,
            c,
        },
    })
}

/// The objective of [`evaluate`] without building the penalty, in linear
/// time. Selection on the squared residuals gives the `n`-th and
/// `floor(n/2)`-th largest values; one pass in index order then assigns
/// rows to the halves, ties going to the lower index as in [`order_view`].
/// `x_bar^T beta` is the mean of `y_i - r_i - mu` over the selected rows.
fn quick_objective(ctx: &Context, n: usize, lambda: f64, theta: &DVector<f64>) -> f64 {
    let (data, delta) = quick_terms(ctx, n, theta);
    data + lambda * delta.abs()
}

/// Data term and `Delta_hat` of [`quick_objective`].
fn quick_terms(ctx: &Context, n: usize, theta: &DVector<f64>) -> (f64, f64) {
    let r = &ctx.y - &ctx.z * theta;
    let g: Vec<f64> = r.iter().map(|v| v * v).collect();
    let half = n / 2;
    let mut sel = g.clone();
    let desc = |a: &f64, b: &f64| b.total_cmp(a);
    let t_n = *sel.select_nth_unstable_by(n - 1, desc).1;
    let t_h = *sel[..n].select_nth_unstable_by(half - 1, desc).1;
    let mut quota_n = n - g.iter().filter(|v| v.total_cmp(&t_n).is_gt()).count();
    let mut quota_h = half - g.iter().filter(|v| v.total_cmp(&t_h).is_gt()).count();

    let mu = theta[theta.len() - 1];
    let mut data = 0.0;
    let mut fitted = 0.0;
    // [y, y^2, d^2] summed over each half.
    let mut upper = [0.0; 3];
    let mut lower = [0.0; 3];
    for (i, gi) in g.iter().enumerate() {
        let top = match gi.total_cmp(&t_n) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal if quota_n > 0 => {
                quota_n -= 1;
                true
            }
            _ => false,
        };
        if !top {
            continue;
        }
        let in_upper = match gi.total_cmp(&t_h) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal if quota_h > 0 => {
                quota_h -= 1;
                true
            }
            _ => false,
        };
        let (y, d) = (ctx.y[i], ctx.ols_residuals[i]);
        data += gi;
        fitted += y - r[i] - mu;
        let acc = if in_upper { &mut upper } else { &mut lower };
        acc[0] += y;
        acc[1] += y * y;
        acc[2] += d * d;
    }
    let (nu, nl) = (half as f64, (n - half) as f64);
    let diff = |j: usize| upper[j] / nu - lower[j] / nl;
    let delta = diff(1) - 2.0 * diff(0) * mu - 2.0 * (fitted / n as f64) * diff(2);
    (data / n as f64, delta)
}

struct AtN {
    theta: DVector<f64>,
    eval: Evaluation,
    iterations: usize,
    converged: bool,
}

fn split_key(eval: &Evaluation) -> u64 {
    let mut h = DefaultHasher::new();
    eval.upper.hash(&mut h);
    eval.lower.hash(&mut h);
    h.finish()
}

/// Alternating solve at a fixed selection size from one start. Stops when
/// the split repeats: unchanged means converged, an earlier split means
/// the alternation has entered a cycle it would repeat until the cap.
fn alternate(ctx: &Context, n: usize, lambda: f64, start: DVector<f64>) -> Result<AtN> {
    let mut theta = start;
    let mut eval = evaluate(ctx, n, lambda, &theta)?;
    let mut seen = HashSet::from([split_key(&eval)]);
    let mut best = AtN {
        theta: theta.clone(),
        eval: eval.clone(),
        iterations: 0,
        converged: false,
    };
    for it in 1..=MAX_ALTERNATIONS {
        let target = convex::solve(&ctx.z, &ctx.y, n, Some(&eval.penalty), &theta)?;
        let (next, next_eval) = segment_best(ctx, n, lambda, &theta, &target)?;
        let same_split = next_eval.upper == eval.upper && next_eval.lower == eval.lower;
        theta = next;
        eval = next_eval;
        if eval.objective < best.eval.objective {
            best.theta = theta.clone();
            best.eval = eval.clone();
        }
        best.iterations = it;
        if same_split {
            best.converged = true;
            break;
        }
        if !seen.insert(split_key(&eval)) {
            break;
        }
    }
    Ok(best)
}

const SEGMENT_POINTS: usize = 16;
const SEGMENT_ZOOMS: usize = 12;

/// Best true objective on the segment from `from` to `to`. The fixed-split
/// minimizer `to` can overshoot: the split changes along the way, and a
/// neighbouring split may balance the halves at a lower cost.
fn segment_best(
    ctx: &Context,
    n: usize,
    lambda: f64,
    from: &DVector<f64>,
    to: &DVector<f64>,
) -> Result<(DVector<f64>, Evaluation)> {
    let step = to - from;
    let at = |t: f64| (t, quick_objective(ctx, n, lambda, &(from + &step * t)));
    let mut best = at(1.0);
    for k in 1..SEGMENT_POINTS {
        let cand = at(k as f64 / SEGMENT_POINTS as f64);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    let mut width = 1.0 / SEGMENT_POINTS as f64;
    for _ in 0..SEGMENT_ZOOMS {
        let centre = best.0;
        for t in [
            centre - width,
            centre - width / 2.0,
            centre + width / 2.0,
            centre + width,
        ] {
            if t > 0.0 && t < 1.0 {
                let cand = at(t);
                if cand.1 < best.1 {
                    best = cand;
                }
            }
        }
        width /= 2.0;
    }
    let theta = from + &step * best.0;
    let eval = evaluate(ctx, n, lambda, &theta)?;
    Ok((theta, eval))
}

fn fit_at_n(ctx: &Context, n: usize, lambda: f64, search: Search) -> Result<AtN> {
    // The unpenalized optimum is a second start; with lambda = 0 it is the answer.
    let free = convex::solve(&ctx.z, &ctx.y, n, None, &ctx.init)?;
    let free_eval = evaluate(ctx, n, lambda, &free)?;
    if lambda == 0.0 {
        return Ok(AtN {
            theta: free,
            eval: free_eval,
            iterations: 1,
            converged: true,
        });
    }
    let a = alternate(ctx, n, lambda, ctx.init.clone())?;
    let b = alternate(ctx, n, lambda, free.clone())?;
    let mut best = if b.eval.objective < a.eval.objective {
        b
    } else {
        a
    };
    if search == Search::Global {
        // Each round that improves the best value shrinks the region.
        for round in 0..GLOBAL_ROUNDS {
            if !global_round(ctx, n, lambda, &free, free_eval.data_term, round, &mut best)? {
                break;
            }
        }
    }
    Ok(best)
}

/// Best attained point of the cell containing `start`: the cell optimum
/// sits on a face, where ties may hand the rows to another split, so the
/// candidates step back towards `start`.
fn cell_point(
    ctx: &Context,
    n: usize,
    lambda: f64,
    start: &DVector<f64>,
    eval: &Evaluation,
) -> (DVector<f64>, f64) {
    let mut best = (start.clone(), eval.objective);
    if let Some(at) = cell::cell_minimum(
        &ctx.z,
        &ctx.y,
        &eval.upper,
        &eval.lower,
        &eval.penalty,
        start,
    ) {
        for cand in cell::towards_interior(&at, start) {
            let f = quick_objective(ctx, n, lambda, &cand);
            if f < best.1 {
                best = (cand, f);
            }
        }
    }
    best
}

/// For each distinct split among `starts`, the best point of its cell;
/// sorted by objective.
fn refine_cells(
    ctx: &Context,
    n: usize,
    lambda: f64,
    starts: &[DVector<f64>],
) -> Result<Vec<(DVector<f64>, f64)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for start in starts {
        let eval = evaluate(ctx, n, lambda, start)?;
        if seen.insert(split_key(&eval)) {
            out.push(cell_point(ctx, n, lambda, start, &eval));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}

/// Descent over neighbouring cells. Optima of the cells lie on faces; tiny
/// steps off the current point reach the cells sharing that face, and the
/// best of their optima becomes the next point.
fn descend_cells(
    ctx: &Context,
    n: usize,
    lambda: f64,
    shape: &Ellipsoid,
    stencil: &Stencil,
    mut theta: DVector<f64>,
    mut f: f64,
) -> Result<(DVector<f64>, f64)> {
    let mut seen = HashSet::new();
    seen.insert(split_key(&evaluate(ctx, n, lambda, &theta)?));
    for _ in 0..CELL_DESCENT_STEPS {
        let mut next: Option<(DVector<f64>, f64)> = None;
        for d in &stencil.dirs {
            let probe = &theta + &shape.axes * d * CELL_PROBE;
            let eval = evaluate(ctx, n, lambda, &probe)?;
            if !seen.insert(split_key(&eval)) {
                continue;
            }
            let cand = cell_point(ctx, n, lambda, &probe, &eval);
            if cand.1 < next.as_ref().map_or(f, |b| b.1) {
                next = Some(cand);
            }
        }
        match next {
            Some((t, v)) => {
                theta = t;
                f = v;
            }
            None => break,
        }
    }
    Ok((theta, f))
}

/// One round of the global phase; returns whether `best` improved.
///
/// Only points whose data term is below the best objective can win, and
/// the data term is convex: the search region is an ellipsoid around the
/// unpenalized optimum `free`.
fn global_round(
    ctx: &Context,
    n: usize,
    lambda: f64,
    free: &DVector<f64>,
    free_data: f64,
    round: u64,
    best: &mut AtN,
) -> Result<bool> {
    let before = best.eval.objective;
    let budget = before - free_data;
    if !(budget > 0.0) {
        return Ok(false);
    }
    let Some(shape) = Ellipsoid::new(ctx, free, n, budget) else {
        return Ok(false);
    };
    let seed = (n as u64) << 8 | round;
    let stencil = Stencil::new(shape.centre.len(), seed);
    let mut starts = explore(ctx, n, lambda, &shape, seed);
    if ctx.z.nrows() <= RAY_MAX_ROWS {
        starts.extend(rays(ctx, n, lambda, &shape, seed)?);
    }
    starts.push(best.theta.clone());
    let mut refined = refine_cells(ctx, n, lambda, &starts)?;
    refined.truncate(DESCENT_STARTS);
    let (theta, f) = refined
        .into_iter()
        .map(|(t, f)| descend_cells(ctx, n, lambda, &shape, &stencil, t, f))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .map(|(t, _)| polish(ctx, n, lambda, &shape, &stencil, t))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("refine_cells keeps its starts");
    if f < best.eval.objective {
        let c = alternate(ctx, n, lambda, theta.clone())?;
        *best = if c.eval.objective < f {
            c
        } else {
            AtN {
                eval: evaluate(ctx, n, lambda, &theta)?,
                theta,
                iterations: c.iterations,
                converged: c.converged,
            }
        };
    }
    let (theta, f) = refine_cells(ctx, n, lambda, std::slice::from_ref(&best.theta))?.remove(0);
    let (theta, _) = descend_cells(ctx, n, lambda, &shape, &stencil, theta, f)?;
    let (theta, f) = polish(ctx, n, lambda, &shape, &stencil, theta);
    if f < best.eval.objective {
        best.eval = evaluate(ctx, n, lambda, &theta)?;
        best.theta = theta;
    }
    Ok(best.eval.objective < before)
}

/// Row evaluations spent on sampling per selection size. Small problems
/// get dense coverage; large ones, where the alternation is reliable, stay
/// cheap.
const EXPLORE_WORK: usize = 1 << 19;
const EXPLORE_MIN_PER_DIM: usize = 64;
const DESCENT_STARTS: usize = 2;
const GLOBAL_ROUNDS: u64 = 2;
const RADIUS_FLOOR: f64 = 1e-3;
/// Ray search runs on problems up to this many rows, with about
/// `RAY_WORK / N^2` rays.
const RAY_MAX_ROWS: usize = 64;
const RAY_WORK: usize = 1 << 18;
const RAY_SEED: u64 = 0x5eed;
const RAY_KEEP: usize = 64;
/// Whitened step used to reach neighbouring cells, and the cap on moves.
const CELL_PROBE: f64 = 1e-7;
const CELL_DESCENT_STEPS: usize = 20;
/// Best samples whose cells are solved exactly.
const CELL_STARTS: usize = 16;
const POLISH_MIN_STEP: f64 = 1e-9;

/// `{centre + sqrt(budget) L^-T u : |u| <= 1}` with `L L^T` the Gram matrix
/// of the selected rows of `Z`, i.e. the region where the quadratic model
/// of the data term rises by at most `budget`.
struct Ellipsoid {
    centre: DVector<f64>,
    /// Columns are the principal steps `sqrt(budget) L^-T e_j`.
    axes: DMatrix<f64>,
}

impl Ellipsoid {
    fn new(ctx: &Context, centre: &DVector<f64>, n: usize, budget: f64) -> Option<Self> {
        let (beta, mu) = ctx.split_theta(centre);
        let rows = order_view(&squared_quantities(ctx.ds, &beta, mu))
            .top(n)
            .to_vec();
        let zs = ctx.z.select_rows(rows.iter());
        let gram = zs.transpose() * &zs / n as f64;
        let l = gram.cholesky()?.l();
        let dim = centre.len();
        let mut axes = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(dim, dim))?
            * budget.sqrt();
        // Column signs follow the covector `Z^T y`, so rescaling a column
        // of `X`, sign included, maps every sample onto its image.
        let g = ctx.z.transpose() * &ctx.y;
        for mut col in axes.column_iter_mut() {
            if g.dot(&col) < 0.0 {
                col.neg_mut();
            }
        }
        Some(Ellipsoid {
            centre: centre.clone(),
            axes,
        })
    }
}

/// Seeded uniform samples of the ellipsoid. Returns the best few by
/// objective and the best few by data term alone: a cell whose samples
/// carry a large penalty can still reach `Delta_hat = 0` inside.
fn explore(
    ctx: &Context,
    n: usize,
    lambda: f64,
    shape: &Ellipsoid,
    seed: u64,
) -> Vec<DVector<f64>> {
    let dim = shape.centre.len();
    let count = (EXPLORE_WORK / ctx.z.nrows()).max(EXPLORE_MIN_PER_DIM * dim);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut scored = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u = DVector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        // Half the samples fill the ball, half are log-uniform in radius:
        // the optimum tends to sit close to the centre.
        let radius: f64 = if rng.random::<bool>() {
            rng.random::<f64>().powf(1.0 / dim as f64)
        } else {
            (RADIUS_FLOOR.ln() * rng.random::<f64>()).exp()
        };
        u *= radius / u.norm().max(f64::MIN_POSITIVE);
        let theta = &shape.centre + &shape.axes * u;
        let (data, delta) = quick_terms(ctx, n, &theta);
        scored.push((data + lambda * delta.abs(), data, theta));
    }
    let mut out = Vec::with_capacity(2 * CELL_STARTS);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.extend(scored.iter().take(CELL_STARTS).map(|s| s.2.clone()));
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    out.extend(scored.iter().take(CELL_STARTS).map(|s| s.2.clone()));
    out
}

/// Exact search along seeded rays from the ellipsoid centre. On a ray the
/// split only changes where two residuals tie in absolute value, so the
/// ray falls into segments of constant split however thin the cells, and
/// on each segment the objective is a convex function of the ray
/// parameter, minimized in closed form. Returns the best point of each of
/// the best few splits met.
fn rays(
    ctx: &Context,
    n: usize,
    lambda: f64,
    shape: &Ellipsoid,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let rows = ctx.z.nrows();
    let dim = shape.centre.len();
    let count = (RAY_WORK / (rows * rows)).max(EXPLORE_MIN_PER_DIM * dim);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ RAY_SEED);
    let r0 = &ctx.y - &ctx.z * &shape.centre;
    let mut by_split: BTreeMap<u64, (f64, DVector<f64>)> = BTreeMap::new();
    let mut events: Vec<(f64, usize, usize)> = Vec::with_capacity(rows * rows);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut pos = vec![0; rows];
    let half = n / 2;
    for _ in 0..count {
        let u = DVector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let v = &shape.axes * (&u / u.norm().max(f64::MIN_POSITIVE));
        // r_i(t) = r0_i - t s_i for t in [0, 1].
        let s = &ctx.z * &v;
        events.clear();
        for i in 0..rows {
            for j in 0..i {
                for (num, den) in [(r0[i] - r0[j], s[i] - s[j]), (r0[i] + r0[j], s[i] + s[j])] {
                    let t = num / den;
                    if t > 0.0 && t < 1.0 {
                        events.push((t, i, j));
                    }
                }
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        events.push((1.0, usize::MAX, usize::MAX));

        // Ranks by |r| just after `t`, kept current by swapping tied pairs.
        let rank_at = |t: f64, order: &mut Vec<usize>, pos: &mut Vec<usize>| {
            let abs = |i: usize| (r0[i] - t * s[i]).abs();
            order.sort_by(|&a, &b| abs(b).total_cmp(&abs(a)).then(a.cmp(&b)));
            for (k, &i) in order.iter().enumerate() {
                pos[i] = k;
            }
        };
        let first = events[0].0;
        rank_at(0.5 * first, &mut order, &mut pos);
        let mut start = 0.0;
        for (k, &(t, i, j)) in events.iter().enumerate() {
            let last = i == usize::MAX;
            let mut boundary = last;
            if !last {
                let (lo, hi) = (pos[i].min(pos[j]), pos[i].max(pos[j]));
                if hi == lo + 1 {
                    order.swap(lo, hi);
                    pos[order[lo]] = lo;
                    pos[order[hi]] = hi;
                    boundary = (half > 0 && lo == half - 1) || lo == n - 1;
                } else {
                    // Simultaneous ties: re-rank between this event and the next.
                    let next = events[k + 1].0;
                    rank_at(0.5 * (t + next), &mut order, &mut pos);
                    boundary = true;
                }
            }
            if !boundary || t <= start {
                continue;
            }
            let mid = &shape.centre + &v * (0.5 * (start + t));
            let eval = evaluate(ctx, n, lambda, &mid)?;
            let tm = segment_minimum(&r0, &s, &eval, &shape.centre, &v, lambda, n, start, t);
            let theta = &shape.centre + &v * tm;
            let f = quick_objective(ctx, n, lambda, &theta);
            let key = split_key(&eval);
            if by_split.get(&key).is_none_or(|b| f < b.0) {
                by_split.insert(key, (f, theta));
            }
            start = t;
        }
    }
    let mut scored: Vec<(f64, DVector<f64>)> = by_split.into_values().collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored.into_iter().take(RAY_KEEP).map(|(_, t)| t).collect())
}

/// Minimizer over `[ta, tb]` of `(1/n) sum_S (r0_i - t s_i)^2 + lambda |a - c^T (centre + t v)|`,
/// kept strictly inside the segment.
#[allow(clippy::too_many_arguments)]
fn segment_minimum(
    r0: &DVector<f64>,
    s: &DVector<f64>,
    eval: &Evaluation,
    centre: &DVector<f64>,
    v: &DVector<f64>,
    lambda: f64,
    n: usize,
    ta: f64,
    tb: f64,
) -> f64 {
    // Quadratic q2 t^2 - 2 q1 t + const, penalty lambda |e0 - e1 t|.
    let (mut q1, mut q2) = (0.0, 0.0);
    for &i in eval.upper.iter().chain(&eval.lower) {
        q1 += r0[i] * s[i];
        q2 += s[i] * s[i];
    }
    let (q1, q2) = (q1 / n as f64, q2 / n as f64);
    let e0 = eval.penalty.inner(centre);
    let e1 = eval.penalty.c.dot(v);
    let f = |t: f64| q2 * t * t - 2.0 * q1 * t + lambda * (e0 - e1 * t).abs();
    let mut cands = vec![ta, tb];
    if e1 != 0.0 {
        cands.push(e0 / e1);
    }
    if q2 > 0.0 {
        for sign in [1.0, -1.0] {
            // d/dt: 2 q2 t - 2 q1 - sign lambda e1 = 0 on the branch sign(e0 - e1 t) = sign.
            cands.push((2.0 * q1 + sign * lambda * e1) / (2.0 * q2));
        }
    }
    let margin = (tb - ta) * 1e-6;
    cands
        .into_iter()
        .map(|t| t.clamp(ta + margin, tb - margin))
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("candidates")
}

/// Search directions in whitened coordinates: every nonzero vector of
/// `{-1, 0, 1}^dim` in low dimension, else the axes and a few seeded
/// random directions.
struct Stencil {
    dirs: Vec<DVector<f64>>,
}

impl Stencil {
    const FULL_MAX_DIM: usize = 4;

    fn new(dim: usize, seed: u64) -> Self {
        let mut dirs = Vec::new();
        if dim <= Self::FULL_MAX_DIM {
            for code in 0..3usize.pow(dim as u32) {
                let mut c = code;
                let d = DVector::from_fn(dim, |_, _| {
                    let v = (c % 3) as f64 - 1.0;
                    c /= 3;
                    v
                });
                if d.iter().any(|v| *v != 0.0) {
                    dirs.push(d);
                }
            }
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for j in 0..dim {
                let e = DVector::from_fn(dim, |i, _| if i == j { 1.0 } else { 0.0 });
                dirs.push(-&e);
                dirs.push(e);
                let r = DVector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
                let r = &r / r.norm().max(f64::MIN_POSITIVE);
                dirs.push(-&r);
                dirs.push(r);
            }
        }
        Stencil { dirs }
    }
}

/// Pattern search on the true objective. Split changes make the objective
/// discontinuous, which rules out gradients.
fn polish(
    ctx: &Context,
    n: usize,
    lambda: f64,
    shape: &Ellipsoid,
    stencil: &Stencil,
    mut theta: DVector<f64>,
) -> (DVector<f64>, f64) {
    let dirs: Vec<DVector<f64>> = stencil.dirs.iter().map(|d| &shape.axes * d).collect();
    let mut f = quick_objective(ctx, n, lambda, &theta);
    let mut step = 0.25;
    while step > POLISH_MIN_STEP {
        let mut moved = false;
        for d in &dirs {
            let cand = &theta + d * step;
            let fc = quick_objective(ctx, n, lambda, &cand);
            if fc < f {
                theta = cand;
                f = fc;
                moved = true;
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    (theta, f)
}

/// Default selection-size grid: every size in `[max(4, p+2, 0.05 N), N]`,
/// thinned to about 200 points when `N > 500`.
pub fn default_n_grid(n_rows: usize, p: usize) -> Vec<usize> {
    let lo = MIN_SELECTION.max(p + 2).max(n_rows / 20).min(n_rows);
    let stride = if n_rows > 500 {
        n_rows.div_ceil(200)
    } else {
        1
    };
    let mut grid: Vec<usize> = (lo..=n_rows).step_by(stride).collect();
    if grid.last() != Some(&n_rows) {
        grid.push(n_rows);
    }
    grid
}

/// First-step PMLS fit. Uses `tuning.n_lambda` when set, otherwise
/// minimizes over [`default_n_grid`].
pub fn pmls_first_step(ds: &Dataset, tuning: &TuningParams) -> Result<FirstStepFit> {
    fit(ds, tuning, 0.0, Search::Global)
}

/// Improved first step with the extra `lambda1 |Lambda_n|` penalty, where
/// `Lambda_n` is the half difference of the descending least squares
/// residuals. For fixed `n` it does not depend on `(beta, mu)`, so it only
/// steers the choice of `n`.
pub fn pmls_improved(ds: &Dataset, tuning: &TuningParams) -> Result<FirstStepFit> {
    fit(ds, tuning, tuning.lambda1, Search::Global)
}

/// [`pmls_improved`] without the global phase: only the two alternations.
/// Cross-validation fits many training parts and uses this.
pub fn pmls_improved_local(ds: &Dataset, tuning: &TuningParams) -> Result<FirstStepFit> {
    fit(ds, tuning, tuning.lambda1, Search::Local)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Search {
    Local,
    Global,
}

fn fit(ds: &Dataset, tuning: &TuningParams, lambda1: f64, search: Search) -> Result<FirstStepFit> {
    tuning.validate(ds.n_rows())?;
    let ctx = Context::new(ds)?;
    let p = ds.n_cols();
    let grid = match tuning.n_lambda {
        Some(n) => {
            penalty::check_n(n, ds.n_rows())?;
            vec![n]
        }
        None => default_n_grid(ds.n_rows(), p),
    };
    let d_view = order_view(&ctx.ols_residuals);

    let mut best: Option<(f64, usize, f64, AtN)> = None;
    for &n in &grid {
        let lambda = tuning.lambda_at(n);
        let at = fit_at_n(&ctx, n, lambda, search)?;
        let lambda_stat = half_difference(&ctx.ols_residuals, &d_view, n)?;
        let total = at.eval.objective + lambda1 * lambda_stat.abs();
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, n, lambda_stat, at));
        }
    }
    let (objective, n, lambda_stat, at) = best.expect("non-empty selection grid");
    let lambda = tuning.lambda_at(n);
    let (beta, mu) = ctx.split_theta(&at.theta);

    let g = squared_quantities(ds, &beta, mu);
    let selected = order_view(&g).top(n).to_vec();
    let sel_resid: Vec<f64> = selected
        .iter()
        .map(|&i| {
            ds.y()[i]
                - ds.x()
                    .row(i)
                    .iter()
                    .zip(&beta)
                    .map(|(x, b)| x * b)
                    .sum::<f64>()
                - mu
        })
        .collect();
    let sigma_star_sq = linalg::sample_variance(&sel_resid);
    let cov_beta_mu = plug_in_covariance(&ctx.z, &selected, sigma_star_sq)?;

    let sq_ols: Vec<f64> = ctx.ols_residuals.iter().map(|d| d * d).collect();
    let c0_skewness = linalg::skewness(&sq_ols);
    if c0_skewness.abs() < C0_SKEWNESS_WARN {
        log::warn!(
            "squared residuals look symmetric (skewness {c0_skewness:.3}); the half-split penalty may not identify the star component"
        );
    }

    Ok(FirstStepFit {
        beta,
        mu,
        n_selected: n,
        lambda,
        lambda1,
        objective,
        data_term: at.eval.data_term,
        delta_hat: at.eval.delta_hat,
        lambda_stat,
        selected,
        sigma_star_sq,
        cov_beta_mu,
        iterations: at.iterations,
        converged: at.converged,
        c0_skewness,
        beta_ols: ctx.ols_beta,
    })
}

/// `sigma^2 (Z_s^T Z_s / n)^{-1} / n` over the selected rows of `Z = [X, 1]`.
fn plug_in_covariance(z: &DMatrix<f64>, selected: &[usize], sigma_sq: f64) -> Result<DMatrix<f64>> {
    let zs = z.select_rows(selected.iter());
    let n = selected.len() as f64;
    let avg_phi = zs.transpose() * &zs / n;
    let inv = linalg::inverse_spd(&avg_phi).ok_or_else(|| PmlsError::RankDeficient {
        ratio: linalg::singular_value_ratio(&zs),
    })?;
    Ok(inv * (sigma_sq / n))
}
