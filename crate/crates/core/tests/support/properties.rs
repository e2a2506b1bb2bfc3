//! Randomized properties, 100 deterministic cases each. Every property
//! returns `Err` with the failing case instead of panicking so that the
//! acceptance runner can report it.

use nalgebra::{DMatrix, DVector};
use pmls::estimators::first_step::pmls_first_step;
use pmls::estimators::ols::{ols_fit, Centering};
use pmls::estimators::penalty::{half_difference, penalty_stats};
use pmls::estimators::second_step::{default_top_grid, second_step_top, top_mean_fit};
use pmls::model::{order_view, squared_quantities};
use pmls::tuning::{cv_select_theta, cv_select_theta_tilde, fold_assignment, CvGrid};
use pmls::{Dataset, FitResult, TuningParams};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const CASES: u32 = 100;

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn check<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Full-rank designs with `N in 12..=24`, `p in 1..=2` and skewed errors.
fn dataset() -> impl Strategy<Value = Dataset> {
    (12usize..=24, 1usize..=2)
        .prop_flat_map(|(n, p)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n * p),
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(-0.5f64..0.5, n),
                Just((n, p)),
            )
        })
        .prop_filter_map("rank deficient", |(xs, u, noise, (n, p))| {
            let x = DMatrix::from_row_slice(n, p, &xs);
            let y = DVector::from_fn(n, |i, _| {
                let signal: f64 = (0..p).map(|j| (j + 1) as f64 * x[(i, j)]).sum();
                // Two error laws: most rows near 0, some near 4.
                signal
                    + if u[i] < 0.7 {
                        noise[i]
                    } else {
                        4.0 + 2.0 * noise[i]
                    }
            });
            Dataset::new(x, y).ok()
        })
}

fn scaled(ds: &Dataset, d: &[f64]) -> Dataset {
    let x = DMatrix::from_fn(ds.n_rows(), ds.n_cols(), |i, j| ds.x()[(i, j)] * d[j]);
    Dataset::new(x, ds.y().clone()).expect("scaling keeps the rank")
}

fn with_y(ds: &Dataset, y: DVector<f64>) -> Dataset {
    Dataset::new(ds.x().clone(), y).expect("same design")
}

fn fixed(n: usize, lambda: f64) -> TuningParams {
    TuningParams {
        lambda: Some(lambda),
        n_lambda: Some(n),
        lambda_tilde: Some(lambda),
        n_lambda_tilde: Some(n),
        ..TuningParams::default()
    }
}

/// Scaling column `j` of `X` by `d_j` divides `beta_j` by `d_j` and leaves
/// every objective and intercept unchanged.
pub fn x_scaling() -> Result<(), String> {
    let scales = proptest::collection::vec(prop_oneof![0.2f64..5.0, -5.0f64..-0.2], 2);
    check((dataset(), scales, 0.0f64..1.0), |(ds, d, lambda)| {
        let d = &d[..ds.n_cols()];
        let sc = scaled(&ds, d);
        let ols = ols_fit(&ds, Centering::None).unwrap();
        let ols_s = ols_fit(&sc, Centering::None).unwrap();
        for ((b, bs), dj) in ols.beta.iter().zip(&ols_s.beta).zip(d.iter()) {
            prop_assert!(close(*b, bs * dj, 1e-9));
        }

        let n = ds.n_rows() * 3 / 4;
        let a = pmls_first_step(&ds, &fixed(n, lambda)).unwrap();
        let b = pmls_first_step(&sc, &fixed(n, lambda)).unwrap();
        prop_assert!(
            close(a.objective, b.objective, 1e-6),
            "first-step objective {} vs {}",
            a.objective,
            b.objective
        );

        let beta_s: Vec<f64> = a.beta.iter().zip(d).map(|(b, s)| b / s).collect();
        let t = fixed(n, lambda);
        let s1 = second_step_top(&ds, &a.beta, &t).unwrap();
        let s2 = second_step_top(&sc, &beta_s, &t).unwrap();
        prop_assert!(close(s1.mu, s2.mu, 1e-9));
        prop_assert!(close(s1.objective, s2.objective, 1e-9));
        Ok(())
    })
}

/// Shifting `Y` by `c + X gamma` shifts least squares by `gamma`, and the
/// second step at the shifted slope by `c`.
pub fn y_shift() -> Result<(), String> {
    let gamma = proptest::collection::vec(-3.0f64..3.0, 2);
    check((dataset(), -20.0f64..20.0, gamma), |(ds, c, gamma)| {
        let p = ds.n_cols();
        let gamma = &gamma[..p];
        let xg = ds.linear_predictor(gamma);
        let ols = ols_fit(&ds, Centering::None).unwrap();
        let ols_s = ols_fit(&with_y(&ds, ds.y() + &xg), Centering::None).unwrap();
        for ((b, g), bs) in ols.beta.iter().zip(gamma).zip(&ols_s.beta) {
            prop_assert!(close(b + g, *bs, 1e-9));
        }

        let shifted = with_y(&ds, ds.y() + &xg + DVector::repeat(ds.n_rows(), c));
        let beta_s: Vec<f64> = ols.beta.iter().zip(gamma).map(|(b, g)| b + g).collect();
        let t = TuningParams::default();
        let a = second_step_top(&ds, &ols.beta, &t).unwrap();
        let b = second_step_top(&shifted, &beta_s, &t).unwrap();
        prop_assert_eq!(a.n_selected, b.n_selected);
        prop_assert!(close(a.mu + c, b.mu, 1e-9), "{} + {c} vs {}", a.mu, b.mu);
        Ok(())
    })
}

/// `Upsilon2(mu)` is affine in `mu` and equals the half difference of
/// `(Y - mu)^2` over the split.
pub fn upsilon2_affinity() -> Result<(), String> {
    let point = (
        proptest::collection::vec(-3.0f64..3.0, 2),
        -5.0f64..5.0,
        proptest::collection::vec(-10.0f64..10.0, 3),
    );
    check(
        (dataset(), point, 0.0f64..1.0),
        |(ds, (beta, mu, mus), frac)| {
            let beta = &beta[..ds.n_cols()];
            let n = 4 + ((ds.n_rows() - 4) as f64 * frac) as usize;
            let ols = ols_fit(&ds, Centering::None).unwrap();
            let view = order_view(&squared_quantities(&ds, beta, mu));
            let st = penalty_stats(&ds, &view, n, &ols.residuals, beta, mu).unwrap();
            for &m in &mus {
                let sq: Vec<f64> = ds.y().iter().map(|y| (y - m) * (y - m)).collect();
                let direct = half_difference(&sq, &view, n).unwrap();
                prop_assert!(
                    close(st.upsilon2(m), direct, 1e-9),
                    "{} vs {direct}",
                    st.upsilon2(m)
                );
            }
            let (u0, u1, u2) = (
                st.upsilon2(mus[0]),
                st.upsilon2(mus[1]),
                st.upsilon2(mus[2]),
            );
            let lhs = (u1 - u0) * (mus[2] - mus[0]);
            let rhs = (u2 - u0) * (mus[1] - mus[0]);
            prop_assert!(close(lhs, rhs, 1e-9));
            Ok(())
        },
    )
}

/// Ordering is a stable descending permutation, and the top-mean fit
/// depends on the values only, not on their positions.
pub fn ordering() -> Result<(), String> {
    let values = proptest::collection::vec((-5i32..5).prop_map(|v| v as f64 * 0.5), 8..40);
    check(
        values.prop_flat_map(|v| {
            let n = v.len();
            (Just(v), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
        |(v, perm)| {
            let view = order_view(&v);
            let idx = view.original_index();
            let mut sorted = idx.to_vec();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..v.len()).collect::<Vec<_>>());
            for j in 0..v.len() {
                prop_assert_eq!(view.values()[j], v[idx[j]]);
                if j > 0 {
                    let (a, b) = (idx[j - 1], idx[j]);
                    prop_assert!(v[a] > v[b] || (v[a] == v[b] && a < b));
                }
            }

            let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let pv = order_view(&permuted);
            prop_assert_eq!(view.values(), pv.values());
            let grid = default_top_grid(v.len());
            let lam = |n: usize| (n as f64).powf(-0.5);
            let a = top_mean_fit(&v, &grid, &lam, true).unwrap();
            let b = top_mean_fit(&permuted, &grid, &lam, true).unwrap();
            prop_assert_eq!(a.n_selected, b.n_selected);
            prop_assert_eq!(a.mu, b.mu);
            prop_assert_eq!(a.objective, b.objective);
            let rows: Vec<usize> = b.selected.iter().map(|&i| perm[i]).collect();
            let mut ra = a.selected.clone();
            let mut rb = rows;
            ra.sort_unstable();
            rb.sort_unstable();
            let va: Vec<f64> = ra.iter().map(|&i| v[i]).collect();
            let vb: Vec<f64> = rb.iter().map(|&i| v[i]).collect();
            let (mut va, mut vb) = (va, vb);
            va.sort_by(f64::total_cmp);
            vb.sort_by(f64::total_cmp);
            prop_assert_eq!(va, vb);
            Ok(())
        },
    )
}

/// Cross-validation is a pure function of data, grid and seed.
pub fn cv_determinism() -> Result<(), String> {
    check((dataset(), any::<u64>()), |(ds, seed)| {
        let rows = ds.n_rows();
        let folds = fold_assignment(rows, 3, seed).unwrap();
        prop_assert_eq!(&folds, &fold_assignment(rows, 3, seed).unwrap());
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..rows).collect::<Vec<_>>());

        let grid = CvGrid {
            lambda_grid: vec![0.0, 0.3],
            n_grid: vec![rows / 2, rows],
            folds: 3,
            seed,
        };
        let base = TuningParams::default();
        let a = cv_select_theta(&ds, &grid, &base).unwrap();
        let b = cv_select_theta(&ds, &grid, &base).unwrap();
        prop_assert_eq!(&a, &b);
        let beta = a.0.n_lambda.map(|_| vec![1.0; ds.n_cols()]).unwrap();
        let c = cv_select_theta_tilde(&ds, &beta, &grid, &base).unwrap();
        let d = cv_select_theta_tilde(&ds, &beta, &grid, &base).unwrap();
        prop_assert_eq!(c, d);
        Ok(())
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn fit_result() -> impl Strategy<Value = FitResult> {
    let tuning = (
        proptest::option::of(0.0f64..10.0),
        proptest::option::of(4usize..1000),
        proptest::option::of(0.0f64..10.0),
        proptest::option::of(4usize..1000),
        0.0f64..5.0,
        0.01f64..0.99,
        any::<bool>(),
    )
        .prop_map(|(l, n, lt, nt, l1, eps, signed)| TuningParams {
            lambda: l,
            n_lambda: n,
            lambda_tilde: lt,
            n_lambda_tilde: nt,
            lambda1: l1,
            epsilon: eps,
            signed_penalty: signed,
        });
    (1usize..4).prop_flat_map(move |p| {
        (
            proptest::collection::vec(finite(), p),
            proptest::option::of(finite()),
            finite(),
            proptest::option::of(finite()),
            (1usize..500, 1usize..500),
            proptest::collection::vec(finite(), 0..30),
            proptest::collection::vec(proptest::collection::vec(finite(), p + 1), p + 1),
            (finite(), proptest::collection::vec(finite(), p)),
            tuning.clone(),
            proptest::collection::btree_map("[a-zA-Z]{1,12}", finite(), 0..6),
        )
            .prop_map(
                |(beta, mu_star, mu_upper, mu_lower, (n1, n2), res, cov, (var, bols), t, diag)| {
                    FitResult {
                        beta,
                        mu_star,
                        mu_upper,
                        mu_lower,
                        n_selected: n1,
                        n_selected_second: n2,
                        residuals: res,
                        cov_beta_mu: cov,
                        var_mu_upper: var,
                        beta_ols: bols,
                        tuning: t,
                        diagnostics: diag,
                    }
                },
            )
    })
}

/// JSON round trip is the identity, bit for bit.
pub fn serde_round_trip() -> Result<(), String> {
    check(fit_result(), |fit| {
        let text = serde_json::to_string(&fit).unwrap();
        let back: FitResult = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &fit);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.beta), bits(&fit.beta));
        prop_assert_eq!(back.mu_upper.to_bits(), fit.mu_upper.to_bits());
        Ok(())
    })
}

pub type Property = fn() -> Result<(), String>;

pub const ALL: [(&str, Property); 6] = [
    ("X-scaling equivariance", x_scaling),
    ("Y-shift covariance", y_shift),
    ("Upsilon2 affinity", upsilon2_affinity),
    ("ordering and permutation invariants", ordering),
    ("CV determinism", cv_determinism),
    ("serialization round trip", serde_round_trip),
];
