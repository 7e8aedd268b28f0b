//! Closed-form proximal steps for the three primal blocks.

use crate::error::Result;
use crate::numerics::{hermitian_eig, monotone_scalar_root, positive_cubic_root, water_level, HermitianMatrix};

/// Joint projection of `x_tilde` onto `{X_k PSD, sum_k tr X_k <= P_T}`.
///
/// Every block is shrunk by the same water level `gamma / 2`; the returned
/// level is `gamma / 2`.
pub fn prox_x(x_tilde: &[HermitianMatrix], power_budget: f64) -> Result<(Vec<HermitianMatrix>, f64)> {
    let eigs = x_tilde.iter().map(hermitian_eig).collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = eigs.iter().flat_map(|e| e.values.iter().copied()).collect();
    let level = water_level(&all, power_budget);
    let out = eigs
        .iter()
        .map(|e| {
            let shrunk: Vec<f64> = e.values.iter().map(|v| (v - level).max(0.0)).collect();
            HermitianMatrix::from_eigen(&e.vectors, &shrunk)
        })
        .collect();
    Ok((out, level))
}

/// `argmin_Y tr(Y^{-1}) + ||Y - y_tilde||^2 / (2 tau)` over positive definite `Y`.
pub fn prox_y(y_tilde: &HermitianMatrix, tau: f64) -> Result<HermitianMatrix> {
    let e = hermitian_eig(y_tilde)?;
    let roots: Vec<f64> = e.values.iter().map(|&s| positive_cubic_root(s, tau)).collect();
    Ok(HermitianMatrix::from_eigen(&e.vectors, &roots))
}

/// `argmin_Z (Nt-K)^2 / (P_T - tr Z) + ||Z - z_tilde||^2 / (2 tau)` over PSD `Z`
/// with `tr Z < P_T`. Returns `Z` and the shrinkage level `lambda`, which
/// satisfies `P_T - tr Z = (Nt - K) sqrt(tau / lambda)`.
pub fn prox_z(
    z_tilde: &HermitianMatrix,
    tau: f64,
    power_budget: f64,
    n_tx: usize,
    n_users: usize,
) -> Result<(HermitianMatrix, f64)> {
    let e = hermitian_eig(z_tilde)?;
    let c2 = ((n_tx - n_users) as f64).powi(2);
    let slack = |l: f64| power_budget - e.values.iter().map(|v| (v - l).max(0.0)).sum::<f64>();
    let f = |l: f64| l * slack(l).powi(2) - tau * c2;
    // Below lo the slack is negative; on [lo, hi] f is increasing and changes sign.
    let lo = water_level(&e.values, power_budget);
    let hi = lo.max(e.max_value()).max(0.0) + tau * c2 / (power_budget * power_budget);
    let mut lambda = monotone_scalar_root(f, (lo, hi), 0.0)?;
    // Bisection resolves lambda relative to the bracket width; Newton steps on
    // the locally smooth branch restore full relative accuracy when lambda is tiny.
    for _ in 0..4 {
        let active = e.values.iter().filter(|v| **v > lambda).count() as f64;
        let s = slack(lambda);
        let slope = s * s + 2.0 * lambda * active * s;
        if !(slope > 0.0) {
            break;
        }
        let next = lambda - f(lambda) / slope;
        if !(next > lo && next < hi) {
            break;
        }
        lambda = next;
    }
    let shrunk: Vec<f64> = e.values.iter().map(|v| (v - lambda).max(0.0)).collect();
    Ok((HermitianMatrix::from_eigen(&e.vectors, &shrunk), lambda))
}
