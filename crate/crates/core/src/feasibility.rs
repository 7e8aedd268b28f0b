//! Minimum transmit power for the SINR constraints.
//!
//! The minimum power equals the total uplink power of the dual uplink problem,
//! found by iterating the standard interference map
//! `lambda_k = sigma^2 / (rho_k hb_k^H (H^H H + sum_i lambda_i / sigma^2 hb_i hb_i^H)^{-1} hb_k)`
//! with `hb_i = H^H h_i`. Everything happens in K dimensions.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector, C64};
use crate::scenario::{ChannelMatrix, Scenario};

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;
/// Relative slack below `p_low` still reported as feasible.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;
/// Relative distance from `p_low` flagged as borderline.
pub const BORDERLINE_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub p_low: f64,
    pub lambdas: Vec<f64>,
    pub feasible: bool,
    /// Power budget within `BORDERLINE_MARGIN` of `p_low`.
    pub borderline: bool,
    pub iterations: usize,
    /// Largest relative fixed-point residual `|lambda_k - T_k(lambda)| / lambda_k`.
    pub residual: f64,
}

/// Applies the interference map once.
fn interference_map(
    gram: &ComplexMatrix,
    lambdas: &[f64],
    rho: &[f64],
    noise: f64,
) -> Result<Vec<f64>> {
    let k_users = lambdas.len();
    let mut m = gram.clone();
    for (i, &l) in lambdas.iter().enumerate() {
        let hb = gram.column(i);
        m += (hb * hb.adjoint()).scale(l / noise);
    }
    let chol = Cholesky::new(m)
        .ok_or_else(|| Error::NumericalFailure("uplink covariance is not positive definite".into()))?;
    (0..k_users)
        .map(|k| {
            let hb = gram.column(k).into_owned();
            let q = hb.dotc(&chol.solve(&hb)).re;
            if !(q > 0.0) {
                return Err(Error::NumericalFailure(format!("non-positive uplink gain for user {k}")));
            }
            Ok(noise / (rho[k] * q))
        })
        .collect()
}

pub fn compute_p_low(scenario: &Scenario, channel: &ChannelMatrix) -> Result<FeasibilityReport> {
    scenario.validate()?;
    channel.check_matches(scenario)?;
    let gram = channel.gram().into_inner();
    let rho: Vec<f64> = scenario.sinr_thresholds.iter().map(|g| 1.0 + 1.0 / g).collect();
    let noise = scenario.noise_power;

    let mut lambdas = vec![0.0; scenario.n_users];
    let mut change = f64::INFINITY;
    let mut prev_change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < FIXED_POINT_MAX_ITER {
        let next = interference_map(&gram, &lambdas, &rho, noise)?;
        iterations += 1;
        change = next
            .iter()
            .zip(&lambdas)
            .map(|(n, o)| (n - o).abs() / n.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        lambdas = next;
        // The map contracts linearly (factor about 1 / rho); stop on the
        // predicted distance to the fixed point rather than the last step.
        let ratio = if prev_change.is_finite() && prev_change > 0.0 { (change / prev_change).min(0.999) } else { 0.999 };
        prev_change = change;
        if change <= FIXED_POINT_TOL && change * ratio / (1.0 - ratio) <= FIXED_POINT_TOL {
            break;
        }
    }
    if change > FIXED_POINT_TOL || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::FixedPointDiverged { iterations, change });
    }
    let check = interference_map(&gram, &lambdas, &rho, noise)?;
    let residual = check.iter().zip(&lambdas).map(|(c, l)| (c - l).abs() / l).fold(0.0, f64::max);
    let p_low: f64 = lambdas.iter().sum();
    let pt = scenario.power_budget;
    Ok(FeasibilityReport {
        p_low,
        lambdas,
        feasible: pt >= (1.0 - FEASIBILITY_MARGIN) * p_low,
        borderline: (pt - p_low).abs() <= BORDERLINE_MARGIN * p_low,
        iterations,
        residual,
    })
}

/// Beamformers meeting every SINR target with equality at total power `p_low`.
///
/// Receive filters `u_k = (sigma^2 I + sum_i lambda_i h_i h_i^H)^{-1} h_k` from the
/// uplink fixed point are reused as downlink directions; the downlink powers
/// then solve a `K x K` linear system. Uses `H (sigma^2 I + Lambda H^H H)^{-1}`
/// in place of the `n_tx`-dimensional inverse.
pub fn minimum_power_beamformers(
    scenario: &Scenario,
    channel: &ChannelMatrix,
    report: &FeasibilityReport,
) -> Result<Vec<ComplexVector>> {
    let k_users = scenario.n_users;
    let noise = scenario.noise_power;
    let gram = channel.gram().into_inner();
    let mut m = ComplexMatrix::from_diagonal_element(k_users, k_users, C64::new(noise, 0.0));
    for i in 0..k_users {
        for j in 0..k_users {
            m[(i, j)] += gram[(i, j)] * report.lambdas[i];
        }
    }
    let coeffs = m
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("uplink filter system is singular".into()))?;
    // cross[(j, i)] = h_j^H u_i for unnormalized u_i = H c_i.
    let cross = &gram * &coeffs;
    let norms: Vec<f64> = (0..k_users)
        .map(|i| {
            let c = coeffs.column(i);
            c.dotc(&(&gram * c)).re
        })
        .collect();
    let f = DMatrix::from_fn(k_users, k_users, |k, i| {
        let g = cross[(k, i)].norm_sqr() / norms[i];
        if k == i {
            g / scenario.sinr_thresholds[k]
        } else {
            -g
        }
    });
    let powers = f
        .lu()
        .solve(&DVector::from_element(k_users, noise))
        .ok_or_else(|| Error::NumericalFailure("downlink power system is singular".into()))?;
    if powers.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::NumericalFailure("downlink power system has a negative solution".into()));
    }
    let h = channel.matrix();
    Ok((0..k_users)
        .map(|i| {
            let u = h * coeffs.column(i);
            u.scale((powers[i] / norms[i]).sqrt())
        })
        .collect())
}
