//! Optimality certificate for a recovered design.
//!
//! With multipliers `omega` (power), `mu_k >= 0` (SINR) the stationarity
//! conditions of the semidefinite relaxation read
//!
//! ```text
//! Theta_k     = -R^{-2} + omega I + sum_j mu_j Q_j - mu_k rho_k Q_k  (PSD, Theta_k W_k = 0)
//! Theta_{K+1} = -R^{-2} + omega I + sum_j mu_j Q_j                   (PSD, Theta_{K+1} W_{K+1} = 0)
//! ```
//!
//! `omega` is read off the null-space power (`1 / theta^2`) and `mu` is
//! fitted by least squares to `Theta_k w_k = 0` and `Theta_{K+1} W_A = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{hermitian_eig, ComplexMatrix, HermitianMatrix};
use crate::recovery::{sensing_factor, BeamformingSolution};
use crate::scenario::{evaluate_sinr, ChannelMatrix, Scenario};

/// All residuals are relative to `||R^{-2}||_2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KktResiduals {
    pub omega: f64,
    pub mu: Vec<f64>,
    pub stationarity: f64,
    pub dual_feasibility: f64,
    pub complementary_slackness: f64,
    pub primal_feasibility: f64,
}

impl KktResiduals {
    pub fn worst(&self) -> f64 {
        self.stationarity
            .max(self.dual_feasibility)
            .max(self.complementary_slackness)
            .max(self.primal_feasibility)
    }
}

pub fn kkt_residuals(sol: &BeamformingSolution, scenario: &Scenario, channel: &ChannelMatrix) -> Result<KktResiduals> {
    channel.check_matches(scenario)?;
    let nt = scenario.n_tx;
    let k_users = scenario.n_users;
    let h = channel.matrix();
    let full = sol.full_cov();
    let sensing = sol.sensing_cov();
    let eig = hermitian_eig(&full)?;
    let inv_sq: Vec<f64> = eig.values.iter().map(|v| v.powi(-2)).collect();
    let r_inv2 = HermitianMatrix::from_eigen(&eig.vectors, &inv_sq);
    let scale = inv_sq.iter().copied().fold(0.0, f64::max);

    let beam_power: f64 = sol.w.iter().map(|w| w.norm_squared()).sum();
    let theta = (scenario.power_budget - beam_power - sol.sensing_range.trace_re()) / (nt - k_users) as f64;
    let omega = theta.powi(-2);
    let base = HermitianMatrix::scaled_identity(nt, omega).sub(&r_inv2);

    // Directions whose Theta-image must vanish, normalized.
    let factor = sensing_factor(&sensing)?;
    let mut directions: Vec<(Option<usize>, nalgebra::DVector<crate::numerics::C64>)> = Vec::new();
    for (k, w) in sol.w.iter().enumerate() {
        directions.push((Some(k), w.unscale(w.norm())));
    }
    for c in 0..factor.ncols() {
        let f = factor.column(c).into_owned();
        directions.push((None, f.unscale(f.norm())));
    }

    // Real least-squares system A mu = rhs.
    let rows = directions.len() * nt * 2;
    let mut a = DMatrix::<f64>::zeros(rows, k_users);
    let mut rhs = DVector::<f64>::zeros(rows);
    let rho: Vec<f64> = scenario.sinr_thresholds.iter().map(|g| 1.0 + 1.0 / g).collect();
    for (block, (owner, d)) in directions.iter().enumerate() {
        let off = block * nt * 2;
        let target = -(base.as_matrix() * d);
        for j in 0..k_users {
            let hj = h.column(j);
            let mut coef = hj.dotc(d);
            if *owner == Some(j) {
                coef *= 1.0 - rho[j];
            }
            for r in 0..nt {
                let v = hj[r] * coef;
                a[(off + r, j)] = v.re;
                a[(off + nt + r, j)] = v.im;
            }
        }
        for r in 0..nt {
            rhs[off + r] = target[r].re;
            rhs[off + nt + r] = target[r].im;
        }
    }
    let svd = a.svd(true, true);
    let mu: Vec<f64> = svd
        .solve(&rhs, 1e-12 * svd.singular_values.max())
        .map(|m| m.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; k_users]);

    let q_sum = {
        let mut scaled = h.clone();
        for (j, m) in mu.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*m);
        }
        HermitianMatrix::symmetrized(scaled * h.adjoint())
    };
    let theta_sense = base.add(&q_sum);
    let theta_user = |k: usize| -> HermitianMatrix {
        let hk = channel.user(k);
        theta_sense.add_scaled(-mu[k] * rho[k], &HermitianMatrix::outer(&hk))
    };

    let mut stationarity: f64 = 0.0;
    let mut dual_feasibility: f64 = 0.0;
    let mut complementary: f64 = 0.0;
    for k in 0..k_users {
        let t = theta_user(k);
        let w = &sol.w[k];
        let wn = w.norm();
        stationarity = stationarity.max((t.as_matrix() * w).norm() / (scale * wn));
        complementary = complementary.max(t.quad_form(w).abs() / (scale * wn * wn));
        dual_feasibility = dual_feasibility.max(-hermitian_eig(&t)?.min_value() / scale);
    }
    if factor.ncols() > 0 {
        stationarity = stationarity.max((theta_sense.as_matrix() * &factor).norm() / (scale * factor.norm()));
        let tr = (factor.adjoint() * theta_sense.as_matrix() * &factor).trace().re;
        complementary = complementary.max(tr.abs() / (scale * sensing.trace_re()));
    }
    dual_feasibility = dual_feasibility.max(-hermitian_eig(&theta_sense)?.min_value() / scale);
    for (k, m) in mu.iter().enumerate() {
        dual_feasibility = dual_feasibility.max(-m * channel.user_gain(k) / scale);
    }

    let sinr = evaluate_sinr(channel, &sol.w, &sensing, scenario.noise_power)?;
    let mut primal: f64 = 0.0;
    for k in 0..k_users {
        let hk = channel.user(k);
        let received = full.quad_form(&hk) + scenario.noise_power;
        let slack = rho[k] * hk.dotc(&sol.w[k]).norm_sqr() - received;
        complementary = complementary.max((mu[k] * channel.user_gain(k) * slack).abs() / (scale * received));
        primal = primal.max(1.0 - sinr[k] / scenario.sinr_thresholds[k]);
    }
    let pt = scenario.power_budget;
    complementary = complementary.max((full.trace_re() - pt).abs() / pt);
    primal = primal.max((full.trace_re() - pt) / pt);
    primal = primal.max(-eig.min_value() / (pt / nt as f64));

    Ok(KktResiduals {
        omega,
        mu,
        stationarity,
        dual_feasibility: dual_feasibility.max(0.0),
        complementary_slackness: complementary,
        primal_feasibility: primal.max(0.0),
    })
}

/// A feasible but suboptimal copy of `sol`: every beam scaled by `factor`
/// with the null-space power reduced to keep the budget.
pub fn perturbed_feasible(sol: &BeamformingSolution, factor: f64) -> Option<BeamformingSolution> {
    let mut out = sol.clone();
    let extra: f64 = sol.w.iter().map(|w| w.norm_squared()).sum::<f64>() * (factor * factor - 1.0);
    out.theta = sol.theta - extra / (sol.n_tx() - sol.n_users()) as f64;
    if !(out.theta > 0.0) {
        return None;
    }
    for w in &mut out.w {
        *w = w.scale(factor);
    }
    let range: ComplexMatrix = out.range_covariance().into_inner();
    let eig = hermitian_eig(&HermitianMatrix::symmetrized(range)).ok()?;
    let null = (sol.n_tx() - sol.n_users()) as f64;
    out.objective = eig.values.iter().map(|v| 1.0 / v).sum::<f64>() + null / out.theta;
    Some(out)
}
