//! Reduced balanced augmented Lagrangian solver.
//!
//! Works on the split problem over `K x K` blocks
//!
//! ```text
//! min  I(X) + tr(Y^{-1}) + (Nt-K)^2 / (P_T - tr Z)
//! s.t. rho_k tr(Q~_k X_k) - tr(Q~_k Y) = sigma^2,  sum_k X_k = Y,  Y = Z
//! ```
//!
//! with multipliers `mu` (one per user), `Omega1` and `Omega2`. The dual step
//! uses the closed-form inverse of `D D^H + delta I`, so an iteration costs
//! `K + 2` small eigendecompositions regardless of the antenna count.

pub mod prox;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::HermitianMatrix;
use crate::reduction::{DualPrecompute, ReducedInstance, DEFAULT_DELTA};

pub use prox::{prox_x, prox_y, prox_z};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Primal stepsize; `None` selects [`default_tau`].
    pub tau: Option<f64>,
    pub delta: f64,
    /// Bound on the combined constraint violation.
    pub tol_violation: f64,
    /// Bound on the relative stationarity residual.
    pub tol_dual: f64,
    pub max_iterations: usize,
    /// Record (and log) progress every this many iterations; 0 disables.
    pub log_every: usize,
    /// Applies `Z - tau Omega2` instead of `Z + tau Omega2` in the Z step.
    /// Only for checking that the trajectory oracle detects the wrong sign.
    #[serde(default)]
    pub flip_z_sign: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: None,
            delta: DEFAULT_DELTA,
            tol_violation: 1e-9,
            tol_dual: 1e-9,
            max_iterations: 200_000,
            log_every: 0,
            flip_z_sign: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if let Some(t) = self.tau {
            if !pos(t) {
                return Err(Error::InvalidConfig(format!("tau must be positive, got {t}")));
            }
        }
        if !pos(self.delta) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if !pos(self.tol_violation) || !pos(self.tol_dual) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve_tau(&self, instance: &ReducedInstance, p_low: f64) -> f64 {
        self.tau.unwrap_or_else(|| default_tau(instance, p_low))
    }
}

/// Stepsize matched to the inverse curvature of the smooth terms, damped by
/// the largest SINR target.
///
/// `tr(Y^{-1})` has curvature `2 / y^3`, with `y` of order `P_T / Nt`;
/// `(Nt-K)^2 / s` has curvature `2 (Nt-K)^2 / s^3` in the slack
/// `s = P_T - tr Z <= P_T - p_low`. The smaller inverse curvature wins, which
/// matters when the budget is close to `p_low`.
pub fn default_tau(instance: &ReducedInstance, p_low: f64) -> f64 {
    let level = instance.power_budget / instance.n_tx as f64;
    let slack = (instance.power_budget - p_low).max(1e-6 * instance.power_budget);
    let gamma_max = instance.rho.iter().map(|r| 1.0 / (r - 1.0)).fold(0.0, f64::max);
    let scale = level.powi(3).min(slack.powi(3) / instance.null_dim().powi(2));
    scale / gamma_max.max(1.0)
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub x: Vec<HermitianMatrix>,
    pub y: HermitianMatrix,
    pub z: HermitianMatrix,
    pub x_prev: Vec<HermitianMatrix>,
    pub y_prev: HermitianMatrix,
    pub z_prev: HermitianMatrix,
    pub mu: Vec<f64>,
    pub omega1: HermitianMatrix,
    pub omega2: HermitianMatrix,
    pub iteration: usize,
}

impl SolverState {
    /// Isotropic start `X_k = p0 / K^2 I`, `Y = Z = sum_k X_k`, zero duals, with
    /// `p0 = min(P_T, 2 p_low)`.
    pub fn initial(instance: &ReducedInstance, p_low: f64) -> Self {
        let k = instance.n_users;
        let p0 = instance.power_budget.min(2.0 * p_low);
        let xk = HermitianMatrix::scaled_identity(k, p0 / (k * k) as f64);
        let y = HermitianMatrix::scaled_identity(k, p0 / k as f64);
        Self {
            x: vec![xk.clone(); k],
            y: y.clone(),
            z: y.clone(),
            x_prev: vec![xk; k],
            y_prev: y.clone(),
            z_prev: y,
            mu: vec![0.0; k],
            omega1: HermitianMatrix::zeros(k),
            omega2: HermitianMatrix::zeros(k),
            iteration: 0,
        }
    }

    /// Start from given primal blocks with `Y = Z = sum_k X_k` and zero duals.
    pub fn from_blocks(x: Vec<HermitianMatrix>) -> Self {
        let k = x.len();
        let mut y = HermitianMatrix::zeros(k);
        for xk in &x {
            y = y.add(xk);
        }
        Self {
            x_prev: x.clone(),
            x,
            y: y.clone(),
            z: y.clone(),
            y_prev: y.clone(),
            z_prev: y,
            mu: vec![0.0; k],
            omega1: HermitianMatrix::zeros(k),
            omega2: HermitianMatrix::zeros(k),
            iteration: 0,
        }
    }

    /// Reduced objective `tr(Y^{-1}) + (Nt-K)^2 / (P_T - tr Z)`.
    pub fn objective(&self, instance: &ReducedInstance) -> Result<f64> {
        let inv = crate::numerics::hermitian_eig(&self.y)?
            .values
            .iter()
            .map(|v| 1.0 / v)
            .sum::<f64>();
        Ok(inv + instance.null_dim().powi(2) / (instance.power_budget - self.z.trace_re()))
    }

    fn is_finite(&self) -> bool {
        let fin = |m: &HermitianMatrix| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        self.x.iter().all(fin)
            && fin(&self.y)
            && fin(&self.z)
            && fin(&self.omega1)
            && fin(&self.omega2)
            && self.mu.iter().all(|m| m.is_finite())
    }
}

/// Constraint residuals `(r, R1, R2)` of the split problem.
#[derive(Clone, Debug)]
pub struct Residuals {
    pub r: Vec<f64>,
    pub r1: HermitianMatrix,
    pub r2: HermitianMatrix,
}

impl Residuals {
    pub fn compute(instance: &ReducedInstance, x: &[HermitianMatrix], y: &HermitianMatrix, z: &HermitianMatrix) -> Self {
        let qy = instance.q_traces(y);
        let r = (0..instance.n_users)
            .map(|k| instance.rho[k] * instance.q_trace(k, &x[k]) - qy[k] - instance.noise_power)
            .collect();
        let mut sum = HermitianMatrix::zeros(instance.n_users);
        for xk in x {
            sum = sum.add(xk);
        }
        Self { r, r1: sum.sub(y), r2: y.sub(z) }
    }

    pub fn norms(&self) -> (f64, f64, f64) {
        let r = self.r.iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, self.r1.frobenius(), self.r2.frobenius())
    }

    /// `sqrt(||r||^2 + ||R1||_F^2 + ||R2||_F^2)`.
    pub fn combined(&self) -> f64 {
        let (a, b, c) = self.norms();
        (a * a + b * b + c * c).sqrt()
    }
}

/// Quantities produced by one sweep, beyond the new state.
#[derive(Clone, Debug)]
pub struct StepInfo {
    /// Residuals at the new (non-extrapolated) iterates.
    pub residuals: Residuals,
    /// `||D^H (lambda+ - lambda) - (u+ - u) / tau||` divided by the gradient scale.
    pub dual_residual: f64,
    /// Shrinkage level of the Z step.
    pub z_lambda: f64,
}

/// One R-BAL sweep.
pub fn iterate(
    state: &SolverState,
    instance: &ReducedInstance,
    dual: &DualPrecompute,
    tau: f64,
    flip_z_sign: bool,
) -> Result<(SolverState, StepInfo)> {
    let k_users = instance.n_users;
    let mu = &state.mu;

    // Primal steps.
    let rho_mu: Vec<f64> = (0..k_users).map(|k| instance.rho[k] * mu[k]).collect();
    let x_tilde: Vec<HermitianMatrix> = (0..k_users)
        .map(|k| {
            let grad = instance.q_tilde[k].scale(rho_mu[k]).add(&state.omega1);
            state.x[k].add_scaled(-tau, &grad)
        })
        .collect();
    let (x_new, _) = prox_x(&x_tilde, instance.power_budget)?;

    let mu_q = instance.q_combination(mu);
    let y_tilde = state.y.add_scaled(tau, &mu_q.add(&state.omega1).sub(&state.omega2));
    let y_new = prox_y(&y_tilde, tau)?;

    let z_sign = if flip_z_sign { -tau } else { tau };
    let z_tilde = state.z.add_scaled(z_sign, &state.omega2);
    let (z_new, z_lambda) = prox_z(&z_tilde, tau, instance.power_budget, instance.n_tx, k_users)?;

    // Residuals at the extrapolated points 2u+ - u.
    let extrap = |new: &HermitianMatrix, old: &HermitianMatrix| new.scale(2.0).sub(old);
    let x_hat: Vec<HermitianMatrix> = (0..k_users).map(|k| extrap(&x_new[k], &state.x[k])).collect();
    let y_hat = extrap(&y_new, &state.y);
    let z_hat = extrap(&z_new, &state.z);
    let res_hat = Residuals::compute(instance, &x_hat, &y_hat, &z_hat);

    // Dual step.
    let q1 = instance.q_traces(&res_hat.r1);
    let q2 = instance.q_traces(&res_hat.r2);
    let rhs: Vec<f64> = (0..k_users)
        .map(|k| res_hat.r[k] + dual.theta1[k] * q1[k] + dual.theta2[k] * q2[k])
        .collect();
    let d_mu: Vec<f64> = dual.solve_l(&rhs).into_iter().map(|v| v / tau).collect();
    let mu_new: Vec<f64> = mu.iter().zip(&d_mu).map(|(a, b)| a + b).collect();

    let (kappa, alpha, beta) = (dual.kappa, dual.alpha, dual.beta);
    let t1: Vec<f64> = (0..k_users).map(|k| dual.theta1[k] * d_mu[k]).collect();
    let t2: Vec<f64> = (0..k_users).map(|k| dual.theta2[k] * d_mu[k]).collect();
    let d_omega1 = res_hat
        .r1
        .scale(kappa * beta / tau)
        .add_scaled(kappa / tau, &res_hat.r2)
        .add(&instance.q_combination(&t1));
    let d_omega2 = res_hat
        .r1
        .scale(kappa / tau)
        .add_scaled(kappa * alpha / tau, &res_hat.r2)
        .add(&instance.q_combination(&t2));
    let omega1_new = state.omega1.add(&d_omega1);
    let omega2_new = state.omega2.add(&d_omega2);

    let residuals = Residuals::compute(instance, &x_new, &y_new, &z_new);
    let dual_residual =
        stationarity_residual(instance, state, &x_new, &y_new, &z_new, &d_mu, &d_omega1, &d_omega2, tau)?;

    let next = SolverState {
        x_prev: state.x.clone(),
        y_prev: state.y.clone(),
        z_prev: state.z.clone(),
        x: x_new,
        y: y_new,
        z: z_new,
        mu: mu_new,
        omega1: omega1_new,
        omega2: omega2_new,
        iteration: state.iteration + 1,
    };
    if !next.is_finite() {
        return Err(Error::NumericalDivergence { iteration: next.iteration });
    }
    Ok((next, StepInfo { residuals, dual_residual, z_lambda }))
}

/// The prox step makes `-D^H lambda+ + e` a subgradient of the objective at
/// the new point, with `e = D^H (lambda+ - lambda) - (u+ - u) / tau`. Returns
/// `||e||` relative to the size of the smooth gradients.
#[allow(clippy::too_many_arguments)]
fn stationarity_residual(
    instance: &ReducedInstance,
    old: &SolverState,
    x: &[HermitianMatrix],
    y: &HermitianMatrix,
    z: &HermitianMatrix,
    d_mu: &[f64],
    d_omega1: &HermitianMatrix,
    d_omega2: &HermitianMatrix,
    tau: f64,
) -> Result<f64> {
    let k_users = instance.n_users;
    let mut total = 0.0;
    for k in 0..k_users {
        let e = instance.q_tilde[k]
            .scale(instance.rho[k] * d_mu[k])
            .add(d_omega1)
            .add_scaled(-1.0 / tau, &x[k].sub(&old.x[k]));
        total += e.frobenius().powi(2);
    }
    let e_y = instance
        .q_combination(d_mu)
        .scale(-1.0)
        .sub(d_omega1)
        .add(d_omega2)
        .add_scaled(-1.0 / tau, &y.sub(&old.y));
    let e_z = d_omega2.scale(-1.0).add_scaled(-1.0 / tau, &z.sub(&old.z));
    total += e_y.frobenius().powi(2) + e_z.frobenius().powi(2);

    let eig = crate::numerics::hermitian_eig(y)?;
    let grad_y = eig.values.iter().map(|v| v.powi(-4)).sum::<f64>().sqrt();
    let gap = instance.power_budget - z.trace_re();
    let grad_z = (k_users as f64).sqrt() * instance.null_dim().powi(2) / (gap * gap);
    Ok(total.sqrt() / (grad_y + grad_z))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationCapReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub violation: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub tau: f64,
    /// Combined violation at the final iterate.
    pub final_violation: f64,
    /// `(||r||, ||R1||_F, ||R2||_F)` at the final iterate.
    pub violation_components: (f64, f64, f64),
    pub dual_residual: f64,
    pub objective: f64,
    pub trace_history: Vec<TracePoint>,
}

/// Runs [`iterate`] until both the violation and the stationarity residual
/// are below tolerance, or the iteration cap is hit. `p_low` only feeds the
/// default stepsize.
pub fn solve(
    instance: &ReducedInstance,
    dual: &DualPrecompute,
    config: &SolverConfig,
    init: SolverState,
    p_low: f64,
) -> Result<(SolverState, SolveReport)> {
    config.validate()?;
    let tau = config.resolve_tau(instance, p_low);
    let start = init.iteration;
    let mut state = init;
    let mut history = Vec::new();
    let mut last: Option<StepInfo> = None;
    let mut status = SolveStatus::IterationCapReached;
    for _ in 0..config.max_iterations {
        let (next, info) = iterate(&state, instance, dual, tau, config.flip_z_sign)?;
        state = next;
        let violation = info.residuals.combined();
        if config.log_every > 0 && state.iteration % config.log_every == 0 {
            let objective = state.objective(instance).unwrap_or(f64::NAN);
            log::debug!(
                "iter {:>7}  violation {:.3e}  dual {:.3e}  objective {:.12e}",
                state.iteration,
                violation,
                info.dual_residual,
                objective
            );
            history.push(TracePoint {
                iteration: state.iteration,
                violation,
                dual_residual: info.dual_residual,
                objective,
            });
        }
        let done = violation <= config.tol_violation && info.dual_residual <= config.tol_dual;
        last = Some(info);
        if done {
            status = SolveStatus::Converged;
            break;
        }
    }
    let (final_violation, violation_components, dual_residual) = match &last {
        Some(info) => (info.residuals.combined(), info.residuals.norms(), info.dual_residual),
        None => {
            let r = Residuals::compute(instance, &state.x, &state.y, &state.z);
            (r.combined(), r.norms(), f64::NAN)
        }
    };
    let objective = state.objective(instance)?;
    if status == SolveStatus::Converged && !objective.is_finite() {
        return Err(Error::NumericalFailure("converged to a non-finite objective".into()));
    }
    let iterations = state.iteration - start;
    Ok((
        state,
        SolveReport {
            status,
            iterations,
            tau,
            final_violation,
            violation_components,
            dual_residual,
            objective,
            trace_history: history,
        },
    ))
}
