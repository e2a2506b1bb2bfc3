//! Minimization of the first-step objective over one split cell.
//!
//! Fix the rows `U` ranked in the upper half, `L` in the lower half, and
//! the signs of their residuals. The set of `theta` inducing that split is
//! then a polyhedron: with two levels `t1 >= t2`,
//!
//! ```text
//! s_i r_i >= t1 (i in U),   |r_i| <= t1 and s_i r_i >= t2 (i in L),   |r_i| <= t2 (rest)
//! ```
//!
//! and on it the objective is `(1/n) sum_{U+L} r_i^2 + w |a - c^T theta|`,
//! a convex quadratic program. The objective jumps across cell faces, so a
//! minimizer on a face is moved back towards the interior point that
//! defined the cell.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
};
use nalgebra::{DMatrix, DVector};

use crate::estimators::convex::AffinePenalty;

/// Fractions of the way back from the face optimum to the interior point.
const INTERIOR_STEPS: [f64; 7] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

/// Minimizer over the closure of the cell containing `inside`, or `None`
/// if the solver does not reach optimality.
pub fn cell_minimum(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    upper: &[usize],
    lower: &[usize],
    penalty: &AffinePenalty,
    inside: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (rows, dim) = z.shape();
    let n = (upper.len() + lower.len()) as f64;
    let (iw, it1, it2) = (dim, dim + 1, dim + 2);
    let vars = dim + 3;
    let r = y - z * inside;
    let sign = |i: usize| if r[i] < 0.0 { -1.0 } else { 1.0 };

    let sel: Vec<usize> = upper.iter().chain(lower).copied().collect();
    let zs = z.select_rows(sel.iter());
    let ys = DVector::from_iterator(sel.len(), sel.iter().map(|&i| y[i]));
    let gram = zs.transpose() * &zs * (2.0 / n);
    let mut q = vec![0.0; vars];
    for (j, v) in (zs.transpose() * &ys * (-2.0 / n)).iter().enumerate() {
        q[j] = *v;
    }
    q[iw] = penalty.weight;
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for b in 0..dim {
        for a in 0..=b {
            pi.push(a);
            pj.push(b);
            pv.push(gram[(a, b)]);
        }
    }
    let p = CscMatrix::new_from_triplets(vars, vars, pi, pj, pv);

    // Rows of `A x <= b`.
    let (mut ai, mut aj, mut av, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut push = |coef_theta: f64, row_z: usize, extra: &[(usize, f64)], rhs: f64| {
        let k = b.len();
        for j in 0..dim {
            ai.push(k);
            aj.push(j);
            av.push(coef_theta * z[(row_z, j)]);
        }
        for &(j, v) in extra {
            ai.push(k);
            aj.push(j);
            av.push(v);
        }
        b.push(rhs);
    };
    let mut role = vec![0u8; rows];
    upper.iter().for_each(|&i| role[i] = 1);
    lower.iter().for_each(|&i| role[i] = 2);
    for i in 0..rows {
        match role[i] {
            1 => push(sign(i), i, &[(it1, 1.0)], sign(i) * y[i]),
            2 => {
                push(1.0, i, &[(it1, -1.0)], y[i]);
                push(-1.0, i, &[(it1, -1.0)], -y[i]);
                push(sign(i), i, &[(it2, 1.0)], sign(i) * y[i]);
            }
            _ => {
                push(1.0, i, &[(it2, -1.0)], y[i]);
                push(-1.0, i, &[(it2, -1.0)], -y[i]);
            }
        }
    }
    // w >= |a - c^T theta|
    let mut m = b.len();
    for s in [1.0, -1.0] {
        for j in 0..dim {
            ai.push(m);
            aj.push(j);
            av.push(-s * penalty.c[j]);
        }
        ai.push(m);
        aj.push(iw);
        av.push(-1.0);
        b.push(-s * penalty.a);
        m += 1;
    }
    let a = CscMatrix::new_from_triplets(m, vars, ai, aj, av);

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .tol_ktratio(1e-10)
        .build()
        .ok()?;
    let cones = [NonnegativeConeT(m)];
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).ok()?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        _ => return None,
    }
    let x = &solver.solution.x;
    Some(DVector::from_fn(dim, |j, _| x[j]))
}

/// Points on the segment from the face optimum `at` towards `inside`.
pub fn towards_interior(at: &DVector<f64>, inside: &DVector<f64>) -> Vec<DVector<f64>> {
    let step = inside - at;
    INTERIOR_STEPS.iter().map(|t| at + &step * *t).collect()
}
