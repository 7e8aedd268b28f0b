//! K-dimensional reformulation, dual-update constants and the degenerate case.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::numerics::{compact_svd, hermitian_eig, ComplexMatrix, ComplexVector, HermitianMatrix};
use crate::scenario::{evaluate_sinr, ChannelMatrix, Scenario};

/// The problem restricted to the range of `H`.
#[derive(Clone, Debug)]
pub struct ReducedInstance {
    /// `n_tx x K`, orthonormal basis of the range of `H`.
    pub u_tilde: ComplexMatrix,
    /// `U~^H H` (`K x K`).
    pub h_tilde: ComplexMatrix,
    /// `Q~_k = g_k g_k^H` with `g_k = H~ e_k`.
    pub q_tilde: Vec<HermitianMatrix>,
    /// `rho_k = 1 + 1 / Gamma_k`.
    pub rho: Vec<f64>,
    /// `|h_k^H h_j|^2`, real symmetric `K x K`.
    pub cross_gain: DMatrix<f64>,
    pub power_budget: f64,
    pub noise_power: f64,
    pub n_tx: usize,
    pub n_users: usize,
}

impl ReducedInstance {
    /// Projected channel `g_k` of user k.
    pub fn g(&self, k: usize) -> ComplexVector {
        self.h_tilde.column(k).into_owned()
    }

    /// `tr(Q~_k M) = g_k^H M g_k`.
    pub fn q_trace(&self, k: usize, m: &HermitianMatrix) -> f64 {
        m.quad_form(&self.g(k))
    }

    /// `diag(H~^H M H~)`, i.e. `tr(Q~_k M)` for every k.
    pub fn q_traces(&self, m: &HermitianMatrix) -> Vec<f64> {
        let mh = m.as_matrix() * &self.h_tilde;
        (0..self.n_users)
            .map(|k| self.h_tilde.column(k).dotc(&mh.column(k)).re)
            .collect()
    }

    /// `sum_k c_k Q~_k = H~ Diag(c) H~^H`.
    pub fn q_combination(&self, c: &[f64]) -> HermitianMatrix {
        let mut scaled = self.h_tilde.clone();
        for (k, &ck) in c.iter().enumerate() {
            scaled.column_mut(k).scale_mut(ck);
        }
        HermitianMatrix::symmetrized(scaled * self.h_tilde.adjoint())
    }

    pub fn null_dim(&self) -> f64 {
        (self.n_tx - self.n_users) as f64
    }

    /// `tr(S^{-1}) + (Nt - K)^2 / (P_T - tr S)`, the objective in terms of the
    /// reduced covariance `S`.
    pub fn objective_of_covariance(&self, s: &HermitianMatrix) -> Result<f64> {
        let slack = self.power_budget - s.trace_re();
        if !(slack > 0.0) {
            return Err(Error::NumericalFailure(format!(
                "reduced covariance exhausts the power budget (slack {slack:.3e})"
            )));
        }
        let eig = hermitian_eig(s)?;
        if eig.min_value() <= 0.0 {
            return Err(Error::SingularCovariance { min_eig: eig.min_value() });
        }
        let inv_trace: f64 = eig.values.iter().map(|v| 1.0 / v).sum();
        Ok(inv_trace + self.null_dim().powi(2) / slack)
    }

    /// Objective at `S = sum_k X_k`.
    pub fn objective(&self, x: &[HermitianMatrix]) -> Result<f64> {
        let mut s = HermitianMatrix::zeros(self.n_users);
        for xk in x {
            s = s.add(xk);
        }
        self.objective_of_covariance(&s)
    }

    /// SINR constraint slack `rho_k tr(Q~_k X_k) - tr(Q~_k sum_i X_i) - sigma^2`.
    pub fn sinr_residuals(&self, x: &[HermitianMatrix]) -> Vec<f64> {
        let mut s = HermitianMatrix::zeros(self.n_users);
        for xk in x {
            s = s.add(xk);
        }
        let total = self.q_traces(&s);
        (0..self.n_users)
            .map(|k| self.rho[k] * self.q_trace(k, &x[k]) - total[k] - self.noise_power)
            .collect()
    }
}

pub fn build_reduced(scenario: &Scenario, channel: &ChannelMatrix) -> Result<ReducedInstance> {
    scenario.validate()?;
    channel.check_matches(scenario)?;
    let h = channel.matrix();
    let svd = compact_svd(h)?;
    let u_tilde = svd.left_basis;
    let h_tilde = u_tilde.adjoint() * h;
    let k_users = scenario.n_users;
    let q_tilde = (0..k_users)
        .map(|k| HermitianMatrix::outer(&h_tilde.column(k).into_owned()))
        .collect();
    let gram = h.adjoint() * h;
    let cross_gain = DMatrix::from_fn(k_users, k_users, |i, j| gram[(i, j)].norm_sqr());
    Ok(ReducedInstance {
        u_tilde,
        h_tilde,
        q_tilde,
        rho: scenario.sinr_thresholds.iter().map(|g| 1.0 + 1.0 / g).collect(),
        cross_gain,
        power_budget: scenario.power_budget,
        noise_power: scenario.noise_power,
        n_tx: scenario.n_tx,
        n_users: k_users,
    })
}

/// Constants of the closed-form inverse of `D D^H + delta I`.
#[derive(Clone, Debug)]
pub struct DualPrecompute {
    pub delta: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub l_matrix: DMatrix<f64>,
    pub l_factor: Cholesky<f64, Dyn>,
}

impl DualPrecompute {
    /// `L^{-1} v`.
    pub fn solve_l(&self, v: &[f64]) -> Vec<f64> {
        let rhs = nalgebra::DVector::from_column_slice(v);
        self.l_factor.solve(&rhs).iter().copied().collect()
    }
}

pub const DEFAULT_DELTA: f64 = 1e-4;

pub fn precompute_dual(instance: &ReducedInstance, delta: f64) -> Result<DualPrecompute> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    let k_users = instance.n_users;
    let kf = k_users as f64;
    let alpha = kf + 1.0 + delta;
    let beta = delta + 2.0;
    let kappa = 1.0 / (alpha * beta - 1.0);
    let rho = &instance.rho;
    let theta1: Vec<f64> = rho.iter().map(|r| kappa * (1.0 - beta * r - beta)).collect();
    let theta2: Vec<f64> = rho.iter().map(|r| kappa * (alpha - r - 1.0)).collect();

    // P = beta (rho+1)(rho+1)^T - (rho+1) 1^T - 1 (rho+1)^T + alpha 1 1^T
    let l_matrix = DMatrix::from_fn(k_users, k_users, |i, j| {
        let (ri, rj) = (rho[i] + 1.0, rho[j] + 1.0);
        let p = beta * ri * rj - ri - rj + alpha;
        let diag = if i == j { rho[i] * rho[i] } else { 0.0 };
        let reg = if i == j { delta } else { 0.0 };
        reg + instance.cross_gain[(i, j)] * (diag + 1.0 - kappa * p)
    });
    let l_factor = Cholesky::new(l_matrix.clone()).ok_or(Error::IllConditionedDual { delta })?;
    Ok(DualPrecompute { delta, kappa, alpha, beta, theta1, theta2, l_matrix, l_factor })
}

/// Closed-form optimum used when the degeneracy condition holds.
#[derive(Clone, Debug)]
pub struct DegenerateWitness {
    /// User whose channel direction carries every data stream.
    pub anchor: usize,
    /// `W_k = a_k h_l h_l^H`.
    pub coefficients: Vec<f64>,
    /// `w_k = sqrt(a_k) h_l`.
    pub beams: Vec<ComplexVector>,
    /// `(P_T / Nt) I - sum_k a_k h_l h_l^H`.
    pub sensing_cov: HermitianMatrix,
}

impl DegenerateWitness {
    /// The K + 1 full-space matrices `W_1, ..., W_K, W_{K+1}`.
    pub fn matrices(&self) -> Vec<HermitianMatrix> {
        let mut out: Vec<HermitianMatrix> = self.beams.iter().map(HermitianMatrix::outer).collect();
        out.push(self.sensing_cov.clone());
        out
    }
}

#[derive(Clone, Debug)]
pub struct DegeneracyVerdict {
    pub degenerate_condition_holds: bool,
    /// `P_T - LHS_l` per candidate anchor; `-inf` when some user is orthogonal to `h_l`.
    pub slack: Vec<f64>,
    pub witness: Option<DegenerateWitness>,
}

/// Cross gains below this fraction of `||h_k||^2 ||h_l||^2` count as orthogonal.
pub const ORTHOGONAL_TOL: f64 = 1e-14;
/// Relative tolerance for the witness self-check.
pub const WITNESS_TOL: f64 = 1e-8;

pub fn check_degenerate(scenario: &Scenario, channel: &ChannelMatrix) -> Result<DegeneracyVerdict> {
    scenario.validate()?;
    channel.check_matches(scenario)?;
    let k_users = scenario.n_users;
    let nt = scenario.n_tx as f64;
    let pt = scenario.power_budget;
    let noise = scenario.noise_power;
    let h = channel.matrix();
    let gram = h.adjoint() * h;
    let gains: Vec<f64> = (0..k_users).map(|k| gram[(k, k)].re).collect();
    let rho: Vec<f64> = scenario.sinr_thresholds.iter().map(|g| 1.0 + 1.0 / g).collect();

    let slack: Vec<f64> = (0..k_users)
        .map(|l| {
            let mut sum = 0.0;
            for k in 0..k_users {
                let cross = gram[(k, l)].norm_sqr();
                if cross < ORTHOGONAL_TOL * gains[k] * gains[l] {
                    return f64::NEG_INFINITY;
                }
                sum += (pt * gains[k] + noise * nt) / (rho[k] * cross);
            }
            pt - gains[l] * sum
        })
        .collect();
    let holds = slack.iter().all(|s| *s > 0.0);
    if !holds {
        return Ok(DegeneracyVerdict { degenerate_condition_holds: false, slack, witness: None });
    }

    let anchor = (0..k_users).max_by(|&a, &b| slack[a].total_cmp(&slack[b])).expect("K >= 1");
    let coefficients: Vec<f64> = (0..k_users)
        .map(|k| (pt * gains[k] + noise * nt) / (rho[k] * nt * gram[(k, anchor)].norm_sqr()))
        .collect();
    let hl = channel.user(anchor);
    let beams: Vec<ComplexVector> = coefficients.iter().map(|a| hl.scale(a.sqrt())).collect();
    let total: f64 = coefficients.iter().sum();
    let sensing_cov = HermitianMatrix::scaled_identity(scenario.n_tx, pt / nt)
        .add_scaled(-total, &HermitianMatrix::outer(&hl));
    let witness = DegenerateWitness { anchor, coefficients, beams, sensing_cov };
    verify_witness(&witness, scenario, channel)?;
    Ok(DegeneracyVerdict { degenerate_condition_holds: true, slack, witness: Some(witness) })
}

fn verify_witness(w: &DegenerateWitness, scenario: &Scenario, channel: &ChannelMatrix) -> Result<()> {
    let pt = scenario.power_budget;
    let power: f64 = w.beams.iter().map(|b| b.norm_squared()).sum::<f64>() + w.sensing_cov.trace_re();
    if (power - pt).abs() > WITNESS_TOL * pt {
        return Err(Error::WitnessInconsistent(format!("total power {power} differs from budget {pt}")));
    }
    let min_eig = hermitian_eig(&w.sensing_cov)?.min_value();
    if min_eig < -WITNESS_TOL * pt / scenario.n_tx as f64 {
        return Err(Error::WitnessInconsistent(format!("sensing covariance has eigenvalue {min_eig:.3e}")));
    }
    let sinr = evaluate_sinr(channel, &w.beams, &w.sensing_cov, scenario.noise_power)?;
    for (k, (s, g)) in sinr.iter().zip(&scenario.sinr_thresholds).enumerate() {
        if (s - g).abs() > WITNESS_TOL * g {
            return Err(Error::WitnessInconsistent(format!("user {k} SINR {s} differs from threshold {g}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c64;
    use crate::scenario::generate_channel;

    fn single_user(pt: f64) -> (Scenario, ChannelMatrix) {
        let mut h = ComplexMatrix::zeros(4, 1);
        h[(0, 0)] = c64(1.0, 0.0);
        h[(1, 0)] = c64(0.0, 1.0);
        (Scenario::uniform(4, 1, pt, 10.0, 1.0).unwrap(), ChannelMatrix::new(h).unwrap())
    }

    #[test]
    fn identity_channel() {
        let s = Scenario::uniform(5, 3, 10.0, 10.0, 1.0).unwrap();
        let ch = ChannelMatrix::new(ComplexMatrix::identity(5, 3)).unwrap();
        let r = build_reduced(&s, &ch).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let expected = if i == k && j == k { 1.0 } else { 0.0 };
                    assert!((r.q_tilde[k][(i, j)].norm() - expected).abs() < 1e-14);
                }
            }
        }
        // H~ equals I up to a phase per column of U~.
        for i in 0..3 {
            assert!((r.h_tilde[(i, i)].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn single_user_scalar() {
        let (s, ch) = single_user(8.0);
        let r = build_reduced(&s, &ch).unwrap();
        assert!((r.q_tilde[0][(0, 0)].re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn traces_match_gains() {
        let s = Scenario::uniform(16, 4, 100.0, 10.0, 1.0).unwrap();
        let ch = generate_channel(&s, 1);
        let r = build_reduced(&s, &ch).unwrap();
        for k in 0..4 {
            let g = ch.user_gain(k);
            assert!((r.q_tilde[k].trace_re() - g).abs() < 1e-10 * g);
            let eig = hermitian_eig(&r.q_tilde[k]).unwrap();
            assert!(eig.values[1].abs() < 1e-10 * g);
        }
    }

    #[test]
    fn q_helpers_agree() {
        let s = Scenario::uniform(10, 3, 100.0, 10.0, 1.0).unwrap();
        let r = build_reduced(&s, &generate_channel(&s, 2)).unwrap();
        let m = HermitianMatrix::symmetrized(ComplexMatrix::from_fn(3, 3, |i, j| c64((i + 2 * j) as f64, (i as f64) - (j as f64))));
        let t = r.q_traces(&m);
        for k in 0..3 {
            let direct = (r.q_tilde[k].as_matrix() * m.as_matrix()).trace().re;
            assert!((t[k] - direct).abs() < 1e-10 * (1.0 + direct.abs()));
        }
        let c = [0.5, -1.0, 2.0];
        let comb = r.q_combination(&c);
        let mut direct = HermitianMatrix::zeros(3);
        for k in 0..3 {
            direct = direct.add_scaled(c[k], &r.q_tilde[k]);
        }
        assert!((comb.as_matrix() - direct.as_matrix()).norm() < 1e-10 * direct.frobenius());
    }

    #[test]
    fn dual_constants_single_user() {
        let (s, ch) = single_user(8.0);
        let r = build_reduced(&s, &ch).unwrap();
        let d = precompute_dual(&r, 1e-4).unwrap();
        assert!((d.alpha - 2.0001).abs() < 1e-15);
        assert!((d.beta - 2.0001).abs() < 1e-15);
        assert!((d.kappa - 1.0 / (2.0001f64.powi(2) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn dual_constants_eight_users() {
        let s = Scenario::uniform(16, 8, 100.0, 10.0, 1.0).unwrap();
        let r = build_reduced(&s, &generate_channel(&s, 3)).unwrap();
        let d = precompute_dual(&r, 1e-4).unwrap();
        let rho = 1.1;
        for k in 0..8 {
            assert!((d.theta1[k] - d.kappa * (1.0 - 2.0001 * rho - 2.0001)).abs() < 1e-14);
            assert!((d.theta2[k] - d.kappa * (9.0001 - rho - 1.0)).abs() < 1e-14);
        }
        assert!(precompute_dual(&r, 0.0).is_err());
    }

    #[test]
    fn degeneracy_single_user() {
        let (s, ch) = single_user(100.0);
        let v = check_degenerate(&s, &ch).unwrap();
        assert!(v.degenerate_condition_holds);
        // LHS = 2 * 204 / (1.1 * 4)
        assert!((v.slack[0] - (100.0 - 2.0 * 204.0 / 4.4)).abs() < 1e-10);
        let w = v.witness.unwrap();
        let mut cov = w.sensing_cov.clone();
        for b in &w.beams {
            cov = cov.add(&HermitianMatrix::outer(b));
        }
        let crb = crate::scenario::evaluate_crb_objective(&cov).unwrap();
        assert!((crb - 0.16).abs() < 1e-12);

        let (s, ch) = single_user(8.0);
        let v = check_degenerate(&s, &ch).unwrap();
        assert!(!v.degenerate_condition_holds);
        assert!(v.witness.is_none());
    }

    #[test]
    fn orthogonal_users_are_not_degenerate() {
        let s = Scenario::uniform(4, 2, 1e6, 10.0, 1.0).unwrap();
        let ch = ChannelMatrix::new(ComplexMatrix::identity(4, 2)).unwrap();
        let v = check_degenerate(&s, &ch).unwrap();
        assert!(!v.degenerate_condition_holds);
        assert!(v.slack.iter().all(|s| *s == f64::NEG_INFINITY));
    }

    #[test]
    fn degeneracy_scale_consistency() {
        // h -> c h together with P_T -> P_T / c^2 divides both sides of the
        // condition by c^2, so the verdict is unchanged.
        let mut seen = [false, false];
        for seed in 0..20u64 {
            let sinr = if seed % 2 == 0 { 10.0 } else { 0.1 };
            let base = Scenario::uniform(8, 2, 10f64.powf(1.0 + (seed % 5) as f64 * 0.5), sinr, 1.0).unwrap();
            let ch = generate_channel(&base, seed);
            let c: f64 = 2.0;
            let scaled_ch = ChannelMatrix::new(ch.matrix().scale(c)).unwrap();
            let scaled = base.with_power_budget(base.power_budget / (c * c));
            let a = check_degenerate(&base, &ch).unwrap();
            let b = check_degenerate(&scaled, &scaled_ch).unwrap();
            assert_eq!(a.degenerate_condition_holds, b.degenerate_condition_holds);
            for (sa, sb) in a.slack.iter().zip(&b.slack) {
                if sa.is_finite() {
                    assert!((sa / (c * c) - sb).abs() < 1e-9 * sa.abs().max(1.0));
                }
            }
            seen[a.degenerate_condition_holds as usize] = true;
        }
        assert!(seen[0] && seen[1], "both verdicts should occur in this sample");
    }
}
