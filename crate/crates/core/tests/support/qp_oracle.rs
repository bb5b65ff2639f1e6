//! Reference QP solver for tests: accelerated projected gradient on the
//! dual, then an equality-constrained polish on the identified active set.
//! Shares no code with the library solver.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safebrake_core::qp::QpProblem;

pub struct OracleSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation at `x`.
    pub violation: f64,
}

/// All constraints stacked as `G x <= h`, bounds included.
fn stacked(problem: &QpProblem) -> (DMatrix<f64>, DVector<f64>) {
    let n = problem.n;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..problem.m() {
        rows.push(problem.a[i * n..(i + 1) * n].to_vec());
        rhs.push(problem.b[i]);
    }
    for k in 0..n {
        if problem.ub[k].is_finite() {
            let mut r = vec![0.0; n];
            r[k] = 1.0;
            rows.push(r);
            rhs.push(problem.ub[k]);
        }
        if problem.lb[k].is_finite() {
            let mut r = vec![0.0; n];
            r[k] = -1.0;
            rows.push(r);
            rhs.push(-problem.lb[k]);
        }
    }
    let g = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    (g, DVector::from_vec(rhs))
}

fn objective(h: &DMatrix<f64>, f: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + f.dot(x)
}

pub fn solve(problem: &QpProblem, iterations: usize) -> OracleSolution {
    let n = problem.n;
    let h = DMatrix::from_row_slice(n, n, &problem.h);
    let f = DVector::from_column_slice(&problem.f);
    let (g, rhs) = stacked(problem);
    let m = g.nrows();
    let h_inv = h.clone().cholesky().expect("oracle needs a positive definite H").inverse();
    let primal = |lambda: &DVector<f64>| -(&h_inv * (&f + g.transpose() * lambda));

    let x = if m == 0 {
        primal(&DVector::zeros(0))
    } else {
        let dual_hessian = &g * &h_inv * g.transpose();
        let lipschitz = dual_hessian.symmetric_eigenvalues().max().max(1e-12);
        let step = 1.0 / lipschitz;
        let mut lambda = DVector::zeros(m);
        let mut y = lambda.clone();
        let mut t = 1.0f64;
        let dual_value = |l: &DVector<f64>| {
            let x = primal(l);
            objective(&h, &f, &x) + l.dot(&(&g * &x - &rhs))
        };
        let mut last = dual_value(&lambda);
        for it in 0..iterations {
            if it % 200 == 199 {
                // a feasible polish with non-negative multipliers is a KKT
                // point, hence the unique optimum
                if let Some(xp) = polish(&h, &f, &g, &rhs, &lambda, &primal(&lambda)) {
                    return finish(&h, &f, &g, &rhs, xp);
                }
            }
            let grad = &g * primal(&y) - &rhs;
            let next = (&y + step * grad).map(|v| v.max(0.0));
            let value = dual_value(&next);
            if value < last {
                // restart momentum when the dual stops improving
                t = 1.0;
                y = lambda.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + ((t - 1.0) / t_next) * (&next - &lambda);
            lambda = next;
            t = t_next;
            last = value;
        }
        let x = primal(&lambda);
        polish(&h, &f, &g, &rhs, &lambda, &x).unwrap_or(x)
    };
    finish(&h, &f, &g, &rhs, x)
}

fn finish(h: &DMatrix<f64>, f: &DVector<f64>, g: &DMatrix<f64>, rhs: &DVector<f64>, x: DVector<f64>) -> OracleSolution {
    let violation = if g.nrows() == 0 {
        0.0
    } else {
        (g * &x - rhs).max().max(0.0)
    };
    OracleSolution {
        objective: objective(h, f, &x),
        x: x.iter().copied().collect(),
        violation,
    }
}

/// Re-solve exactly with the constraints the dual iterate marks as active.
fn polish(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    lambda: &DVector<f64>,
    x: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let scale = lambda.amax().max(1.0);
    let residual = g * x - rhs;
    let active: Vec<usize> = (0..g.nrows())
        .filter(|&i| lambda[i] > 1e-7 * scale || residual[i].abs() < 1e-9)
        .filter(|&i| lambda[i] > 0.0)
        .collect();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut r = DVector::zeros(n + k);
    r.rows_mut(0, n).copy_from(&(-f));
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = g[(i, c)];
            kkt[(c, n + j)] = g[(i, c)];
        }
        r[n + j] = rhs[i];
    }
    let sol = kkt.lu().solve(&r)?;
    let xp = sol.rows(0, n).into_owned();
    let mult = sol.rows(n, k);
    let feasible = (g * &xp - rhs).max() <= 1e-9 * (1.0 + rhs.amax());
    let signs_ok = mult.iter().all(|&l| l >= -1e-9 * scale);
    (feasible && signs_ok).then_some(xp)
}

/// Feasible strictly convex problem: bounds and rows are built around a
/// known interior-or-boundary point.
pub fn random_problem(seed: u64, max_n: usize, max_m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let m = rng.random_range(0..=max_m);
    let mut gauss = || {
        let u: f64 = rng.random::<f64>().max(1e-300);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    };
    let mf = DMatrix::from_fn(n, n, |_, _| gauss() / (n as f64).sqrt());
    let h = mf.transpose() * &mf + DMatrix::identity(n, n) * 0.5;
    let f: Vec<f64> = (0..n).map(|_| 3.0 * gauss()).collect();
    let x0: Vec<f64> = (0..n).map(|_| gauss()).collect();
    let mut a = Vec::with_capacity(m * n);
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| gauss()).collect();
        let ax: f64 = row.iter().zip(&x0).map(|(r, x)| r * x).sum();
        let margin = gauss().abs() * 0.5;
        a.extend_from_slice(&row);
        b.push(ax + margin);
    }
    let mut lb = vec![f64::NEG_INFINITY; n];
    let mut ub = vec![f64::INFINITY; n];
    let mut coin = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for k in 0..n {
        if coin.random::<f64>() < 0.7 {
            lb[k] = x0[k] - 0.1 - coin.random::<f64>();
        }
        if coin.random::<f64>() < 0.7 {
            ub[k] = x0[k] + 0.1 + coin.random::<f64>();
        }
    }
    let mut flat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            flat[i * n + j] = 0.5 * (h[(i, j)] + h[(j, i)]);
        }
    }
    QpProblem {
        n,
        h: flat,
        f,
        a,
        b,
        lb,
        ub,
    }
}
