//! Literal dense form of the equality constraints and of one BAL step.
//!
//! Primal vector `u = [vec X_1; ...; vec X_K; vec Y; vec Z]`, dual vector
//! `lambda = [mu; vec Omega1; vec Omega2]`, column-major `vec`. Only for small K:
//! `D` has `K + 2K^2` rows and `K^3 + 2K^2` columns.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, HermitianMatrix, C64};
use crate::rbal::{prox_x, prox_y, prox_z, SolverState};
use crate::reduction::{DualPrecompute, ReducedInstance};

#[derive(Clone, Debug)]
pub struct DenseSystem {
    pub d: ComplexMatrix,
    pub b: DVector<C64>,
    pub n_users: usize,
}

impl DenseSystem {
    pub fn build(instance: &ReducedInstance) -> Self {
        let k = instance.n_users;
        let k2 = k * k;
        let rows = k + 2 * k2;
        let cols = k * k2 + 2 * k2;
        let y0 = k * k2;
        let z0 = y0 + k2;
        let mut d = ComplexMatrix::zeros(rows, cols);
        for user in 0..k {
            let q = instance.q_tilde[user].as_matrix();
            for (idx, qv) in q.iter().enumerate() {
                // vec(Q)^H vec(X) = tr(Q X) for Hermitian Q.
                d[(user, user * k2 + idx)] = qv.conj() * instance.rho[user];
                d[(user, y0 + idx)] = -qv.conj();
            }
        }
        let one = C64::new(1.0, 0.0);
        for idx in 0..k2 {
            // sum_k X_k - Y
            for user in 0..k {
                d[(k + idx, user * k2 + idx)] = one;
            }
            d[(k + idx, y0 + idx)] = -one;
            // Y - Z
            d[(k + k2 + idx, y0 + idx)] = one;
            d[(k + k2 + idx, z0 + idx)] = -one;
        }
        let mut b = DVector::zeros(rows);
        for user in 0..k {
            b[user] = C64::new(instance.noise_power, 0.0);
        }
        Self { d, b, n_users: k }
    }

    /// `D D^H + delta I`.
    pub fn regularized_gram(&self, delta: f64) -> ComplexMatrix {
        let n = self.d.nrows();
        &self.d * self.d.adjoint() + ComplexMatrix::from_diagonal_element(n, n, C64::new(delta, 0.0))
    }

    pub fn primal_vector(&self, x: &[HermitianMatrix], y: &HermitianMatrix, z: &HermitianMatrix) -> DVector<C64> {
        let mut parts: Vec<C64> = Vec::with_capacity(self.d.ncols());
        for xk in x {
            parts.extend(xk.as_matrix().iter());
        }
        parts.extend(y.as_matrix().iter());
        parts.extend(z.as_matrix().iter());
        DVector::from_vec(parts)
    }

    pub fn dual_vector(&self, mu: &[f64], omega1: &HermitianMatrix, omega2: &HermitianMatrix) -> DVector<C64> {
        let mut parts: Vec<C64> = mu.iter().map(|m| C64::new(*m, 0.0)).collect();
        parts.extend(omega1.as_matrix().iter());
        parts.extend(omega2.as_matrix().iter());
        DVector::from_vec(parts)
    }

    fn block(&self, v: &DVector<C64>, start: usize) -> Result<HermitianMatrix> {
        let k = self.n_users;
        let m = ComplexMatrix::from_column_slice(k, k, &v.as_slice()[start..start + k * k]);
        let asym = crate::numerics::max_asymmetry(&m);
        let scale = m.norm().max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::NotHermitian { asymmetry: asym, limit: 1e-9 * scale });
        }
        Ok(HermitianMatrix::symmetrized(m))
    }
}

/// Applies the closed-form inverse of `D D^H + delta I` (built from the dual
/// constants) to an arbitrary complex vector `[r; vec R1; vec R2]`.
pub fn structured_inverse_apply(instance: &ReducedInstance, dual: &DualPrecompute, v: &DVector<C64>) -> DVector<C64> {
    let k = instance.n_users;
    let k2 = k * k;
    let r1 = ComplexMatrix::from_column_slice(k, k, &v.as_slice()[k..k + k2]);
    let r2 = ComplexMatrix::from_column_slice(k, k, &v.as_slice()[k + k2..k + 2 * k2]);
    let ht = &instance.h_tilde;
    let q = |m: &ComplexMatrix| -> Vec<C64> {
        (0..k).map(|u| ht.column(u).dotc(&(m * ht.column(u)))).collect()
    };
    let (q1, q2) = (q(&r1), q(&r2));
    let rhs: Vec<C64> = (0..k).map(|u| v[u] + q1[u] * dual.theta1[u] + q2[u] * dual.theta2[u]).collect();
    let re: Vec<f64> = rhs.iter().map(|z| z.re).collect();
    let im: Vec<f64> = rhs.iter().map(|z| z.im).collect();
    let (sr, si) = (dual.solve_l(&re), dual.solve_l(&im));
    let d_mu: Vec<C64> = (0..k).map(|u| C64::new(sr[u], si[u])).collect();
    let combo = |theta: &[f64]| -> ComplexMatrix {
        let mut scaled = ht.clone();
        for u in 0..k {
            let c = d_mu[u] * theta[u];
            for r in 0..k {
                scaled[(r, u)] *= c;
            }
        }
        scaled * ht.adjoint()
    };
    let (kappa, alpha, beta) = (dual.kappa, dual.alpha, dual.beta);
    let o1 = r1.scale(kappa * beta) + r2.scale(kappa) + combo(&dual.theta1);
    let o2 = r1.scale(kappa) + r2.scale(kappa * alpha) + combo(&dual.theta2);
    let mut out: Vec<C64> = d_mu;
    out.extend(o1.iter());
    out.extend(o2.iter());
    DVector::from_vec(out)
}

/// `max |S (D D^H + delta I) - I|` with `S` the structured inverse assembled column by column.
pub fn dense_dual_inverse_check(instance: &ReducedInstance, dual: &DualPrecompute) -> f64 {
    let dense = DenseSystem::build(instance);
    let gram = dense.regularized_gram(dual.delta);
    let n = gram.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let col = gram.column(j).into_owned();
        let out = structured_inverse_apply(instance, dual, &col);
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((out[i] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// One BAL step with everything materialized:
///
/// ```text
/// u+      = prox_{tau f}(u - tau D^H lambda)
/// lambda+ = lambda + (D D^H + delta I)^{-1} (D (2u+ - u) - b) / tau
/// ```
///
/// using a dense LU inverse. Only the current iterate of `state` is read.
pub fn reference_bal_step(
    state: &SolverState,
    instance: &ReducedInstance,
    dense: &DenseSystem,
    tau: f64,
    delta: f64,
) -> Result<SolverState> {
    let k = instance.n_users;
    let k2 = k * k;
    let u = dense.primal_vector(&state.x, &state.y, &state.z);
    let lambda = dense.dual_vector(&state.mu, &state.omega1, &state.omega2);
    let shifted = &u - (dense.d.adjoint() * &lambda).scale(tau);

    let x_tilde = (0..k).map(|j| dense.block(&shifted, j * k2)).collect::<Result<Vec<_>>>()?;
    let (x, _) = prox_x(&x_tilde, instance.power_budget)?;
    let y = prox_y(&dense.block(&shifted, k * k2)?, tau)?;
    let (z, _) = prox_z(&dense.block(&shifted, (k + 1) * k2)?, tau, instance.power_budget, instance.n_tx, k)?;

    let u_new = dense.primal_vector(&x, &y, &z);
    let resid = &dense.d * (u_new.scale(2.0) - &u) - &dense.b;
    let inv = dense
        .regularized_gram(delta)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("D D^H + delta I is singular".into()))?;
    let lambda_new = lambda + (inv * resid).unscale(tau);

    let mu = (0..k).map(|j| lambda_new[j].re).collect();
    let omega1 = dense.block(&lambda_new, k)?;
    let omega2 = dense.block(&lambda_new, k + k2)?;
    Ok(SolverState {
        x_prev: state.x.clone(),
        y_prev: state.y.clone(),
        z_prev: state.z.clone(),
        x,
        y,
        z,
        mu,
        omega1,
        omega2,
        iteration: state.iteration + 1,
    })
}

/// Difference between two states relative to the size of the primal iterate.
///
/// Primal blocks are compared directly. Multipliers converge to zero on
/// instances with inactive SINR constraints, so they are compared through
/// `tau D^H (lambda_a - lambda_b)`, the primal-space shift they cause.
pub fn state_difference(a: &SolverState, b: &SolverState, dense: &DenseSystem, tau: f64) -> f64 {
    let ua = dense.primal_vector(&a.x, &a.y, &a.z);
    let ub = dense.primal_vector(&b.x, &b.y, &b.z);
    let scale = ub.norm().max(f64::MIN_POSITIVE);
    let la = dense.dual_vector(&a.mu, &a.omega1, &a.omega2);
    let lb = dense.dual_vector(&b.mu, &b.omega1, &b.omega2);
    let primal = (ua - ub).norm() / scale;
    let dual = (dense.d.adjoint() * (la - lb)).norm() * tau / scale;
    primal.max(dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbal::{default_tau, iterate};
    use crate::reduction::{build_reduced, precompute_dual};
    use crate::scenario::{generate_channel, Scenario};

    fn instance(k: usize, seed: u64) -> ReducedInstance {
        let s = Scenario::uniform(2 * k + 2, k, 10.0, 3.0, 1.0).unwrap();
        build_reduced(&s, &generate_channel(&s, seed)).unwrap()
    }

    #[test]
    fn dense_rows_match_residuals() {
        let inst = instance(2, 3);
        let dense = DenseSystem::build(&inst);
        let st = SolverState::initial(&inst, 1.0);
        let u = dense.primal_vector(&st.x, &st.y, &st.z);
        let lhs = &dense.d * u - &dense.b;
        let res = crate::rbal::Residuals::compute(&inst, &st.x, &st.y, &st.z);
        for k in 0..2 {
            assert!((lhs[k].re - res.r[k]).abs() < 1e-12 && lhs[k].im.abs() < 1e-12);
        }
        assert!(lhs.rows(2, 8).norm() < 1e-12);
    }

    #[test]
    fn structured_inverse_small() {
        for (k, delta) in [(1, 1e-4), (2, 1e-2), (3, 1e-4)] {
            let inst = instance(k, 11);
            let dual = precompute_dual(&inst, delta).unwrap();
            let err = dense_dual_inverse_check(&inst, &dual);
            assert!(err < 1e-8, "K = {k}: {err:.3e}");
        }
    }

    #[test]
    fn reference_step_matches_iterate() {
        for k in [1, 2] {
            let inst = instance(k, 5);
            let dual = precompute_dual(&inst, 1e-4).unwrap();
            let dense = DenseSystem::build(&inst);
            let tau = default_tau(&inst, 1.0);
            let mut a = SolverState::initial(&inst, 2.0);
            let mut b = a.clone();
            for _ in 0..10 {
                a = iterate(&a, &inst, &dual, tau, false).unwrap().0;
                b = reference_bal_step(&b, &inst, &dense, tau, 1e-4).unwrap();
            }
            let diff = state_difference(&a, &b, &dense, tau);
            assert!(diff < 1e-10, "K = {k}: {diff:.3e}");
        }
    }
}
