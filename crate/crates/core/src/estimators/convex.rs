//! Exact solver for the fixed-split first-step subproblem
//!
//! ```text
//! minimize_theta  (1/n) * sum of the n largest r_i(theta)^2  +  w * |a - c^T theta|
//! ```
//!
//! with `r_i = y_i - z_i^T theta`. The sum of the `n` largest convex
//! functions is convex, so the problem is convex. For `n = N` it is a plain
//! quadratic with an absolute-value term and is solved in closed form per
//! sign branch. For `n < N` it is rewritten with an auxiliary level `t`,
//!
//! ```text
//! minimize  t + (1/n) sum_i s_i + w u
//! s.t.      s_i >= 0,  s_i >= r_i^2 - t,  u >= |a - c^T theta|
//! ```
//!
//! and solved with a log-barrier Newton method. The slack block is diagonal
//! and is eliminated, so each Newton step solves a `(dim theta + 2)` system.

use nalgebra::{DMatrix, DVector};

use crate::error::{PmlsError, Result};
use crate::linalg;

/// `weight * |a - c^T theta|`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePenalty {
    pub weight: f64,
    pub a: f64,
    pub c: DVector<f64>,
}

impl AffinePenalty {
    pub fn inner(&self, theta: &DVector<f64>) -> f64 {
        self.a - self.c.dot(theta)
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        self.weight * self.inner(theta).abs()
    }
}

fn top_n_mean_of(r: &[f64], n: usize) -> f64 {
    let mut sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    if n < sq.len() {
        sq.select_nth_unstable_by(n - 1, |a, b| b.total_cmp(a));
    }
    sq[..n].iter().sum::<f64>() / n as f64
}

/// Mean of the `n` largest squared residuals.
pub fn top_n_mean(z: &DMatrix<f64>, y: &DVector<f64>, n: usize, theta: &DVector<f64>) -> f64 {
    top_n_mean_of((y - z * theta).as_slice(), n)
}

pub fn objective(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    n: usize,
    penalty: Option<&AffinePenalty>,
    theta: &DVector<f64>,
) -> f64 {
    top_n_mean(z, y, n, theta) + penalty.map_or(0.0, |p| p.value(theta))
}

/// Minimizes the fixed-split objective. `start` seeds the barrier method
/// and is returned if the solver cannot improve on it.
pub fn solve(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    n: usize,
    penalty: Option<&AffinePenalty>,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let rows = z.nrows();
    if n == 0 || n > rows {
        return Err(PmlsError::InvalidConfig(format!(
            "selection size {n} for {rows} rows"
        )));
    }
    let penalty = penalty.filter(|p| p.weight > 0.0);
    let theta = if n == rows {
        solve_full(z, y, penalty)?
    } else {
        Barrier::new(z, y, n, penalty).run(start)?
    };
    let f_new = objective(z, y, n, penalty, &theta);
    let f_start = objective(z, y, n, penalty, start);
    Ok(if f_new <= f_start || !f_start.is_finite() {
        theta
    } else {
        start.clone()
    })
}

/// `n = N`: quadratic plus `w |a - c^T theta|`, exact by sign branch.
fn solve_full(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: Option<&AffinePenalty>,
) -> Result<DVector<f64>> {
    let rows = z.nrows() as f64;
    let gram = z.transpose() * z;
    let zty = z.transpose() * y;
    let solve = |rhs: &DVector<f64>| {
        linalg::solve_spd(&gram, rhs).ok_or(PmlsError::RankDeficient { ratio: 0.0 })
    };
    let free = solve(&zty)?;
    let Some(pen) = penalty else {
        return Ok(free);
    };

    // Stationarity on branch s: (2/N)(G theta - Z'y) - w s c = 0.
    let mut best: Option<(f64, DVector<f64>)> = None;
    let consider = |best: &mut Option<(f64, DVector<f64>)>, theta: DVector<f64>| {
        let f = objective(z, y, z.nrows(), Some(pen), &theta);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            *best = Some((f, theta));
        }
    };
    for s in [1.0, -1.0] {
        let rhs = &zty + &pen.c * (0.5 * rows * pen.weight * s);
        let theta = solve(&rhs)?;
        if s * pen.inner(&theta) >= 0.0 {
            consider(&mut best, theta);
        }
    }
    if best.is_none() {
        // Kink: minimize the quadratic on the hyperplane c^T theta = a.
        let ginv_c = solve(&pen.c)?;
        let denom = pen.c.dot(&ginv_c);
        let theta = if denom > 0.0 {
            &free + &ginv_c * (pen.inner(&free) / denom)
        } else {
            free
        };
        consider(&mut best, theta);
    }
    Ok(best.expect("at least one candidate").1)
}

const MAX_NEWTON: usize = 300;
const GROWTH: f64 = 60.0;
/// Relative duality gap at which the barrier path is stopped.
const GAP_TOL: f64 = 1e-8;
/// Newton decrement below which a centering step is complete.
const DECREMENT_TOL: f64 = 1e-8;

/// Barrier iterate: `theta`, level `t`, penalty bound `u`, slacks `s`, and
/// the residuals at `theta`.
#[derive(Clone)]
struct Point {
    theta: Vec<f64>,
    t: f64,
    u: f64,
    s: Vec<f64>,
    r: Vec<f64>,
}

struct Barrier<'a> {
    /// Row-major copy of `z`.
    rows: Vec<f64>,
    y: &'a DVector<f64>,
    n_rows: usize,
    n: usize,
    penalty: Option<&'a AffinePenalty>,
    dim: usize,
}

impl<'a> Barrier<'a> {
    fn new(
        z: &DMatrix<f64>,
        y: &'a DVector<f64>,
        n: usize,
        penalty: Option<&'a AffinePenalty>,
    ) -> Self {
        let (n_rows, dim) = z.shape();
        let mut rows = Vec::with_capacity(n_rows * dim);
        for i in 0..n_rows {
            rows.extend(z.row(i).iter());
        }
        Barrier {
            rows,
            y,
            n_rows,
            n,
            penalty,
            dim,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                self.y[i]
                    - self
                        .row(i)
                        .iter()
                        .zip(theta)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    fn inner(&self, theta: &[f64]) -> f64 {
        self.penalty.map_or(0.0, |p| {
            p.a - p.c.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
        })
    }

    fn n_constraints(&self) -> f64 {
        (2 * self.n_rows + if self.penalty.is_some() { 2 } else { 0 }) as f64
    }

    fn primal(&self, x: &Point) -> f64 {
        let w = self.penalty.map_or(0.0, |p| p.weight);
        x.t + x.s.iter().sum::<f64>() / self.n as f64 + w * x.u
    }

    fn initial_point(&self, start: &DVector<f64>) -> Point {
        let theta: Vec<f64> = start.iter().copied().collect();
        let r = self.residuals(&theta);
        let mut sq: Vec<f64> = r.iter().map(|v| v * v).collect();
        let mean_sq = sq.iter().sum::<f64>() / sq.len() as f64;
        // Slacks well inside the domain keep the first centering short.
        let delta = 2.0 * (mean_sq + 1.0);
        sq.select_nth_unstable_by(self.n - 1, |a, b| b.total_cmp(a));
        let t = sq[self.n - 1];
        let s = r.iter().map(|v| (v * v - t).max(0.0) + delta).collect();
        let u = self.inner(&theta).abs() + delta;
        Point { theta, t, u, s, r }
    }

    fn run(&self, start: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.initial_point(start);
        let m = self.n_constraints();
        // Gap tolerance relative to the true objective at the start; the
        // initial slacks inflate the barrier primal.
        let w = self.penalty.map_or(0.0, |p| p.weight);
        let scale = top_n_mean_of(&x.r, self.n) + w * self.inner(&x.theta).abs() + 1.0;
        let mut tau = m / self.primal(&x).abs().max(1.0);
        let mut steps = 0;
        loop {
            steps += self.center(&mut x, tau, MAX_NEWTON.saturating_sub(steps))?;
            if m / tau < GAP_TOL * scale || steps >= MAX_NEWTON {
                break;
            }
            tau *= GROWTH;
        }
        Ok(DVector::from_vec(x.theta))
    }

    /// Change of the barrier value from `x` to `x + alpha * (dtheta, dt, du, ds)`,
    /// with `zd = Z dtheta` and `cd = c^T dtheta`; `None` outside the domain.
    /// Computed from relative changes so that it stays accurate when `tau`
    /// is large.
    #[allow(clippy::too_many_arguments)]
    fn change_along(
        &self,
        x: &Point,
        tau: f64,
        alpha: f64,
        zd: &[f64],
        dt: f64,
        du: f64,
        dsl: &[f64],
        cd: f64,
    ) -> Option<f64> {
        let inv_n = 1.0 / self.n as f64;
        let mut lin = dt;
        let mut logs = 0.0;
        for i in 0..self.n_rows {
            let s = x.s[i];
            let r = x.r[i];
            let q = s + x.t - r * r;
            let ds = alpha * dsl[i];
            let az = alpha * zd[i];
            let dq = ds + alpha * dt + 2.0 * r * az - az * az;
            let (rs, rq) = (ds / s, dq / q);
            if !(rs > -1.0 && rq > -1.0) {
                return None;
            }
            lin += inv_n * dsl[i];
            logs += (rs + rq + rs * rq).ln_1p();
        }
        if let Some(p) = self.penalty {
            let e = self.inner(&x.theta);
            let (v1, v2) = (x.u - e, x.u + e);
            let (r1, r2) = (alpha * (du + cd) / v1, alpha * (du - cd) / v2);
            if !(r1 > -1.0 && r2 > -1.0) {
                return None;
            }
            lin += p.weight * du;
            logs += (r1 + r2 + r1 * r2).ln_1p();
        }
        Some(tau * alpha * lin - logs)
    }

    /// Newton iterations on the barrier at fixed `tau`; returns the count.
    fn center(&self, x: &mut Point, tau: f64, budget: usize) -> Result<usize> {
        let d = self.dim;
        let has_pen = self.penalty.is_some();
        let k = d + 1 + usize::from(has_pen);
        let (it, iu) = (d, d + 1);
        let inv_n = 1.0 / self.n as f64;
        let mut h = vec![0.0; k * k];
        let mut g = vec![0.0; k];
        let mut e = vec![0.0; d + 1];
        let mut gs = vec![0.0; self.n_rows];
        let mut dd = vec![0.0; self.n_rows];
        let mut al = vec![0.0; self.n_rows];
        let mut dsl = vec![0.0; self.n_rows];
        let mut zd = vec![0.0; self.n_rows];

        for step in 0..budget {
            h.iter_mut().for_each(|v| *v = 0.0);
            g.iter_mut().for_each(|v| *v = 0.0);
            g[it] = tau;
            for i in 0..self.n_rows {
                let zi = self.row(i);
                let (s, r) = (x.s[i], x.r[i]);
                let q = s + x.t - r * r;
                let alpha = 1.0 / (q * q);
                let beta = 1.0 / (s * s);
                let di = alpha + beta;
                let g_s = tau * inv_n - 1.0 / s - 1.0 / q;
                gs[i] = g_s;
                dd[i] = di;
                al[i] = alpha;
                for j in 0..d {
                    e[j] = 2.0 * r * zi[j];
                }
                e[it] = 1.0;
                let omega = alpha * beta / di;
                let gcoef = -1.0 / q - alpha * g_s / di;
                let curv = 2.0 / q;
                for a in 0..=it {
                    g[a] += gcoef * e[a];
                    let oa = omega * e[a];
                    let row = &mut h[a * k..a * k + it + 1];
                    for b in 0..=a {
                        row[b] += oa * e[b];
                    }
                    if a < d {
                        let ca = curv * zi[a];
                        for b in 0..=a {
                            row[b] += ca * zi[b];
                        }
                    }
                }
            }
            let mut ev = 0.0;
            if let Some(p) = self.penalty {
                g[iu] += tau * p.weight;
                ev = self.inner(&x.theta);
                for (v, sign) in [(x.u - ev, 1.0), (x.u + ev, -1.0)] {
                    // gradient of v over (theta, u) is (sign c, 1)
                    let grad = |j: usize| {
                        if j == iu {
                            1.0
                        } else if j < d {
                            sign * p.c[j]
                        } else {
                            0.0
                        }
                    };
                    let w2 = 1.0 / (v * v);
                    for a in 0..k {
                        g[a] -= grad(a) / v;
                        for b in 0..=a {
                            h[a * k + b] += w2 * grad(a) * grad(b);
                        }
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    h[b * k + a] = h[a * k + b];
                }
            }
            let hm = DMatrix::from_row_slice(k, k, &h);
            let rhs = DVector::from_iterator(k, g.iter().map(|v| -v));
            let Some(dw) = linalg::solve_spd(&hm, &rhs) else {
                return Err(PmlsError::Numerical(
                    "singular barrier Newton system".into(),
                ));
            };

            // Slack steps: D_i ds_i = -g_s_i - alpha_i e_i^T dw.
            let mut slope = 0.0;
            for i in 0..self.n_rows {
                let zi = self.row(i);
                let z_dot: f64 = zi.iter().zip(dw.iter()).map(|(a, b)| a * b).sum();
                zd[i] = z_dot;
                let ed = 2.0 * x.r[i] * z_dot + dw[it];
                dsl[i] = (-gs[i] - al[i] * ed) / dd[i];
            }
            // Directional derivative of the full barrier; minus half of it is
            // the Newton decrement.
            let mut gt = tau;
            let mut gtheta = vec![0.0; d];
            for i in 0..self.n_rows {
                let (s, r) = (x.s[i], x.r[i]);
                let q = s + x.t - r * r;
                let zi = self.row(i);
                for j in 0..d {
                    gtheta[j] -= 2.0 * r * zi[j] / q;
                }
                gt -= 1.0 / q;
                slope += gs[i] * dsl[i];
            }
            slope += gt * dw[it]
                + gtheta
                    .iter()
                    .zip(dw.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            let mut cd = 0.0;
            let mut du = 0.0;
            if let Some(p) = self.penalty {
                let (v1, v2) = (x.u - ev, x.u + ev);
                cd = p.c.iter().zip(dw.iter()).map(|(a, b)| a * b).sum();
                du = dw[iu];
                slope += -cd / v1 + cd / v2 + (tau * p.weight - 1.0 / v1 - 1.0 / v2) * du;
            }
            if -slope * 0.5 < DECREMENT_TOL {
                return Ok(step);
            }

            let mut alpha = 1.0;
            // Largest step keeping the slacks positive.
            for (d, s) in dsl.iter().zip(&x.s) {
                if *d < 0.0 {
                    alpha = f64::min(alpha, -0.99 * s / d);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                if let Some(df) = self.change_along(x, tau, alpha, &zd, dw[it], du, &dsl, cd) {
                    if df <= 0.25 * alpha * slope {
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Ok(step + 1);
            }
            for j in 0..d {
                x.theta[j] += alpha * dw[j];
            }
            x.t += alpha * dw[it];
            x.u += alpha * du;
            for i in 0..self.n_rows {
                x.s[i] += alpha * dsl[i];
                x.r[i] -= alpha * zd[i];
            }
        }
        Ok(budget)
    }
}
