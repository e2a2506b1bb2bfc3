//! Order-statistic example with two uniform laws: `Z ~ U(-1, 3)`,
//! `Z* ~ U(0, 4)`. With `M = max(Z_1..Z_n)` and `p = P(Z*_i <= M)`, the
//! probability that at least `m` of `n` draws of `Z*` fall below `M` is
//! bounded by the binomial tail `sum_{k>=m} C(n,k) p^k (1-p)^(n-k)`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};

pub const DEFAULT_TRIALS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagnosticResult {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    /// Exact binomial tail.
    pub bound: f64,
    /// Stirling form `(n-m) n^n / (m^m (n-m)^(n-m)) 3^m / 4^n`.
    pub asymptotic: f64,
    pub monte_carlo: f64,
    /// Agresti-Coull standard error, positive even when no trial hits.
    pub monte_carlo_se: f64,
    pub trials: usize,
}

/// `p = 3/4 - 1/(n+1) + 1/((n+1) 4^(n+1))`.
pub fn exceedance_probability(n: usize) -> f64 {
    let n1 = (n + 1) as f64;
    0.75 - 1.0 / n1 + 1.0 / (n1 * 4f64.powf(n1))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// `sum_{k=m}^n C(n,k) p^k (1-p)^(n-k)`, summed in log space.
pub fn binomial_tail(n: usize, m: usize, p: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let terms: Vec<f64> = (m..=n)
        .map(|k| ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln())
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return 0.0;
    }
    (top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln())
        .exp()
        .min(1.0)
}

/// Stirling approximation of the tail; `NaN` outside `0 < m < n`.
pub fn asymptotic_tail(n: usize, m: usize) -> f64 {
    if m == 0 || m >= n {
        return f64::NAN;
    }
    let (nf, mf) = (n as f64, m as f64);
    let d = nf - mf;
    (d.ln() + nf * nf.ln() - mf * mf.ln() - d * d.ln() + mf * 3f64.ln() - nf * 4f64.ln()).exp()
}

/// `ceil(n^0.8)`.
pub fn default_m(n: usize) -> usize {
    (n as f64).powf(0.8).ceil() as usize
}

pub fn order_statistic_diagnostic(
    n: usize,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<DiagnosticResult> {
    if n == 0 || m > n {
        return Err(PmlsError::InvalidConfig(format!(
            "need 1 <= n and m <= n, got n = {n}, m = {m}"
        )));
    }
    if trials == 0 {
        return Err(PmlsError::InvalidConfig("need at least one trial".into()));
    }
    let p = exceedance_probability(n);
    let z = Uniform::new(-1.0, 3.0).expect("valid range");
    let z_star = Uniform::new(0.0, 4.0).expect("valid range");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let top = (0..n)
            .map(|_| z.sample(&mut rng))
            .fold(f64::NEG_INFINITY, f64::max);
        let below = (0..n).filter(|_| z_star.sample(&mut rng) <= top).count();
        if below >= m {
            hits += 1;
        }
    }
    let t = trials as f64;
    let adjusted = (hits as f64 + 2.0) / (t + 4.0);
    Ok(DiagnosticResult {
        n,
        m,
        p,
        bound: binomial_tail(n, m, p),
        asymptotic: asymptotic_tail(n, m),
        monte_carlo: hits as f64 / t,
        monte_carlo_se: (adjusted * (1.0 - adjusted) / (t + 4.0)).sqrt(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_one_closed_form() {
        assert_eq!(exceedance_probability(1), 9.0 / 32.0);
        let d = order_statistic_diagnostic(1, 1, 1000, 1).unwrap();
        assert!((d.bound - 9.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn tail_matches_direct_sum_for_small_n() {
        let (n, p): (usize, f64) = (12, 0.37);
        for m in 0..=n {
            let direct: f64 = (m..=n)
                .map(|k| {
                    let c = (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
                    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
                })
                .sum();
            assert!((binomial_tail(n, m, p) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn large_n_does_not_overflow() {
        let b = binomial_tail(5000, 4000, exceedance_probability(5000));
        assert!(b.is_finite() && (0.0..=1.0).contains(&b));
    }

    #[test]
    fn rejects_m_above_n() {
        assert!(order_statistic_diagnostic(5, 6, 10, 0).is_err());
    }
}
