//! Data sources for estimator tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safebrake_core::estimator::Regressor;
use safebrake_core::hdv::{cthrv_speed_next, CthRvParams};

pub const TRUTH: CthRvParams = CthRvParams {
    eta: 1.0,
    nu: 1.8,
    rho: 1.5,
};

/// Leader speed with three incommensurate tones.
pub fn exciting_speed(t: f64) -> f64 {
    10.0 + 2.0 * (0.5 * t).sin() + 1.5 * (1.3 * t + 1.0).sin() + 0.8 * (2.9 * t + 0.3).sin()
}

/// `(regressor, next speed)` pairs for a follower obeying the linear model
/// exactly behind a leader with [`exciting_speed`].
pub fn cthrv_follower(params: &CthRvParams, samples: usize, tau: f64) -> Vec<(Regressor, f64)> {
    let l_c = 5.0;
    let mut lead_p = 0.0;
    let mut v = exciting_speed(0.0);
    let mut p = lead_p - l_c - params.rho * v;
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = k as f64 * tau;
        let lead_v = exciting_speed(t);
        let dp = lead_p - p - l_c;
        let next = cthrv_speed_next(params, v, dp, lead_v, tau, None);
        out.push((Regressor([v, dp, lead_v]), next));
        lead_p += lead_v * tau;
        p += v * tau;
        v = next;
    }
    out
}

/// Uniform regressors in the operating box with noisy targets.
pub fn random_regressors(seed: u64, len: usize) -> Vec<(Regressor, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = TRUTH.to_gamma(0.1);
    (0..len)
        .map(|_| {
            let phi = [rng.random_range(0.0..15.0), rng.random_range(0.0..80.0), rng.random_range(0.0..15.0)];
            let y = gamma[0] * phi[0] + gamma[1] * phi[1] + gamma[2] * phi[2] + rng.random_range(-0.3..0.3);
            (Regressor(phi), y)
        })
        .collect()
}

/// Minimizer of the exponentially weighted, prior-regularized least squares
/// cost `sum xi^(N-k) (y_k - g'phi_k)^2 + xi^N (g - g0)' P0^-1 (g - g0)`.
pub fn batch_estimate(data: &[(Regressor, f64)], gamma0: [f64; 3], p0_scale: f64, xi: f64) -> [f64; 3] {
    let n = data.len() as i32;
    let g0 = Vector3::from(gamma0);
    let prior = xi.powi(n) / p0_scale;
    let mut normal = Matrix3::identity() * prior;
    let mut rhs = g0 * prior;
    for (k, (phi, y)) in data.iter().enumerate() {
        let w = xi.powi(n - 1 - k as i32);
        let phi = Vector3::from(phi.0);
        normal += w * phi * phi.transpose();
        rhs += w * phi * *y;
    }
    let sol = DMatrix::from_column_slice(3, 3, normal.as_slice())
        .cholesky()
        .expect("normal equations are positive definite")
        .solve(&DVector::from_column_slice(rhs.as_slice()));
    [sol[0], sol[1], sol[2]]
}
