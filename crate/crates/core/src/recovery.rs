//! Full-space beamformers from reduced optimal blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, ComplexMatrix, ComplexVector, HermitianMatrix};
use crate::reduction::{DegenerateWitness, ReducedInstance};
use crate::scenario::{evaluate_sinr, ChannelMatrix, Scenario};

/// Recovered transmit design.
///
/// Everything lives in `range(H)` except the sensing power `theta` spread
/// evenly over the null space of `H^H`, so Nt x Nt matrices are only built on
/// request.
#[derive(Clone, Debug)]
pub struct BeamformingSolution {
    pub w: Vec<ComplexVector>,
    /// Orthonormal basis of `range(H)`.
    pub u_tilde: ComplexMatrix,
    /// Power per null-space direction, `(P_T - sum_k tr W_k) / (Nt - K)` for R-BAL output.
    pub theta: f64,
    /// `U~^H W_{K+1} U~`; zero when the sensing covariance has the null-space form.
    pub sensing_range: HermitianMatrix,
    /// `tr(R_W^{-1})`.
    pub objective: f64,
    pub sinr: Vec<f64>,
    /// Whether the beams were re-decomposed to clear the range-space sensing part.
    pub structure_restored: bool,
}

impl BeamformingSolution {
    pub fn n_tx(&self) -> usize {
        self.u_tilde.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.w.len()
    }

    /// `U~^H R_W U~`.
    pub fn range_covariance(&self) -> HermitianMatrix {
        let mut s = self.sensing_range.clone();
        for w in &self.w {
            s = s.add(&HermitianMatrix::outer(&(self.u_tilde.adjoint() * w)));
        }
        s
    }

    pub fn total_power(&self) -> f64 {
        let beams: f64 = self.w.iter().map(|w| w.norm_squared()).sum();
        beams + self.sensing_range.trace_re() + self.theta * (self.n_tx() - self.n_users()) as f64
    }

    /// `I - U~ U~^H`.
    pub fn null_projector(&self) -> HermitianMatrix {
        let n = self.n_tx();
        HermitianMatrix::symmetrized(ComplexMatrix::identity(n, n) - &self.u_tilde * self.u_tilde.adjoint())
    }

    /// `W_{K+1}` (`Nt x Nt`).
    pub fn sensing_cov(&self) -> HermitianMatrix {
        self.sensing_range
            .congruence(&self.u_tilde)
            .add_scaled(self.theta, &self.null_projector())
    }

    /// `R_W = sum_k w_k w_k^H + W_{K+1}` (`Nt x Nt`).
    pub fn full_cov(&self) -> HermitianMatrix {
        self.range_covariance()
            .congruence(&self.u_tilde)
            .add_scaled(self.theta, &self.null_projector())
    }

    /// `W_A` with `W_A W_A^H = W_{K+1}`.
    pub fn sensing_factor(&self) -> Result<ComplexMatrix> {
        sensing_factor(&self.sensing_cov())
    }
}

/// Relative threshold on `tr(Q~_k X_k)` below which extraction is refused.
pub const EXTRACTION_TOL: f64 = 1e-12;
/// Relative Frobenius size of the range-space sensing part treated as zero.
pub const STRUCTURE_TOL: f64 = 1e-10;

/// Rank-one beams `w_k = U~ X_k g_k / sqrt(g_k^H X_k g_k)` with the remaining
/// power assigned to sensing.
///
/// When some `X_k` is not rank one (SINR multipliers that vanish) the
/// remainder `sum_k X_k - sum_k v_k v_k^H` lands in `range(H)`. With
/// `restore_structure` the beams are then re-chosen as `S^{1/2} U` for a
/// unitary `U`, which keeps `R_W` unchanged; the split is accepted only if no
/// SINR margin drops more than `RESTORE_SINR_SLACK` below the smaller of zero
/// and the extracted margins.
pub fn extract_rank_one(
    x_star: &[HermitianMatrix],
    instance: &ReducedInstance,
    restore_structure: bool,
) -> Result<BeamformingSolution> {
    let k_users = instance.n_users;
    if x_star.len() != k_users {
        return Err(Error::DimensionMismatch(format!("{} blocks for {} users", x_star.len(), k_users)));
    }
    let mut s = HermitianMatrix::zeros(k_users);
    let mut v = Vec::with_capacity(k_users);
    for (k, xk) in x_star.iter().enumerate() {
        s = s.add(xk);
        let g = instance.g(k);
        let xg = xk.as_matrix() * &g;
        let power = g.dotc(&xg).re;
        if power <= EXTRACTION_TOL * xk.trace_re() * instance.q_tilde[k].trace_re() || power <= 0.0 {
            return Err(Error::ExtractionDegenerate { user: k, value: power });
        }
        v.push(xg.unscale(power.sqrt()));
    }
    let null_dim = instance.null_dim();
    let theta = (instance.power_budget - s.trace_re()) / null_dim;
    if !(theta > 0.0) {
        return Err(Error::NumericalFailure(format!("no sensing power left in the null space (theta = {theta:.3e})")));
    }
    let mut remainder = s.clone();
    for vk in &v {
        remainder = remainder.sub(&HermitianMatrix::outer(vk));
    }

    let mut restored = false;
    if restore_structure && remainder.frobenius() > STRUCTURE_TOL * s.frobenius() {
        let base_margin = reduced_sinr_margins(instance, &v, &remainder);
        let floor = base_margin.iter().copied().fold(0.0, f64::min) - RESTORE_SINR_SLACK;
        if let Some(candidate) = unitary_split(&s, instance, floor)? {
            v = candidate;
            remainder = HermitianMatrix::zeros(k_users);
            restored = true;
        }
    }
    let sensing_range = remainder;
    let w = v.iter().map(|vk| &instance.u_tilde * vk).collect();
    finish(instance, w, theta, sensing_range, restored)
}

/// Relative SINR margins `SINR_k / Gamma_k - 1` computed from `K`-dimensional data.
fn reduced_sinr_margins(instance: &ReducedInstance, v: &[ComplexVector], sensing: &HermitianMatrix) -> Vec<f64> {
    let mut cov = sensing.clone();
    for vk in v {
        cov = cov.add(&HermitianMatrix::outer(vk));
    }
    (0..instance.n_users)
        .map(|k| {
            let g = instance.g(k);
            let signal = g.dotc(&v[k]).norm_sqr();
            let sinr = signal / (cov.quad_form(&g) - signal + instance.noise_power);
            let gamma = 1.0 / (instance.rho[k] - 1.0);
            sinr / gamma - 1.0
        })
        .collect()
}

/// Relative SINR loss tolerated when re-decomposing the beams.
pub const RESTORE_SINR_SLACK: f64 = 1e-9;
/// Reweighting rounds tried by the restoration step.
pub const RESTORE_ROUNDS: usize = 1000;
/// Users needing at least this fraction of their best possible alignment are pinned.
const PIN_RATIO: f64 = 1.0 - 1e-6;

/// Splits `S = V V^H` as `v_k = S^{1/2} u_k` with `U` unitary.
///
/// With `a_k = S^{1/2} g_k`, user k meets its target iff
/// `|a_k^H u_k|^2 >= (|a_k|^2 + sigma^2) / rho_k`. Users for which this needs
/// (almost) perfect alignment are pinned to `u_k = a_k / |a_k|`; the others
/// take the polar factor of their weighted, projected `a_k` inside the
/// orthogonal complement, and users below target get more weight each round.
fn unitary_split(s: &HermitianMatrix, instance: &ReducedInstance, floor: f64) -> Result<Option<Vec<ComplexVector>>> {
    let k_users = instance.n_users;
    let eig = hermitian_eig(s)?;
    if eig.min_value() <= 0.0 {
        return Ok(None);
    }
    let sqrt_vals: Vec<f64> = eig.values.iter().map(|v| v.sqrt()).collect();
    let root = HermitianMatrix::from_eigen(&eig.vectors, &sqrt_vals);
    let a = root.as_matrix() * &instance.h_tilde;
    let need: Vec<f64> = (0..k_users)
        .map(|k| {
            let norm2 = a.column(k).norm_squared();
            (norm2 + instance.noise_power) / (instance.rho[k] * norm2)
        })
        .collect();

    // Pinned users, orthonormalized in order of need.
    let mut order: Vec<usize> = (0..k_users).filter(|&k| need[k] >= PIN_RATIO).collect();
    order.sort_by(|&i, &j| need[j].total_cmp(&need[i]));
    let mut u = ComplexMatrix::zeros(k_users, k_users);
    let mut pinned: Vec<ComplexVector> = Vec::new();
    for &k in &order {
        let mut col = a.column(k).into_owned();
        for p in &pinned {
            col -= p * p.dotc(&col);
        }
        let n = col.norm();
        if n <= 1e-8 * a.column(k).norm() {
            return Ok(None);
        }
        col.unscale_mut(n);
        u.set_column(k, &col);
        pinned.push(col);
    }
    let free: Vec<usize> = (0..k_users).filter(|k| !order.contains(k)).collect();
    let mut b = ComplexMatrix::zeros(k_users, free.len());
    for (c, &k) in free.iter().enumerate() {
        let mut col = a.column(k).into_owned();
        for p in &pinned {
            col -= p * p.dotc(&col);
        }
        let n = col.norm();
        b.set_column(c, &col.unscale(n));
    }

    let zero = HermitianMatrix::zeros(k_users);
    let mut weights = vec![1.0; free.len()];
    let mut step = 1.0;
    let mut best_worst = f64::NEG_INFINITY;
    for _ in 0..RESTORE_ROUNDS {
        if !free.is_empty() {
            let mut bd = b.clone();
            for (c, w) in weights.iter().enumerate() {
                bd.column_mut(c).scale_mut(*w);
            }
            // Polar factor of B D from its SVD.
            let svd = bd.svd(true, true);
            let smax = svd.singular_values.max();
            if svd.singular_values.min() <= 1e-10 * smax {
                return Ok(None);
            }
            let (Some(left), Some(right)) = (svd.u, svd.v_t) else {
                return Err(Error::NumericalFailure("SVD did not return singular vectors".into()));
            };
            let polar = left * right;
            for (c, &k) in free.iter().enumerate() {
                u.set_column(k, &polar.column(c));
            }
        }
        let vm = root.as_matrix() * &u;
        let v: Vec<ComplexVector> = (0..k_users).map(|k| vm.column(k).into_owned()).collect();
        let margins = reduced_sinr_margins(instance, &v, &zero);
        if margins.iter().all(|m| *m >= floor) {
            let mut rebuilt = s.scale(-1.0);
            for vk in &v {
                rebuilt = rebuilt.add(&HermitianMatrix::outer(vk));
            }
            return Ok((rebuilt.frobenius() <= 1e-12 * s.frobenius()).then_some(v));
        }
        if free.is_empty() {
            return Ok(None);
        }
        // Shrink the step whenever the worst margin stops improving.
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        if worst <= best_worst {
            step *= 0.7;
        }
        best_worst = best_worst.max(worst);
        for (c, &k) in free.iter().enumerate() {
            weights[c] *= (-step * (margins[k] - floor).clamp(-1.0, 1.0)).exp();
        }
        let top = weights.iter().copied().fold(0.0, f64::max);
        weights.iter_mut().for_each(|w| *w = (*w / top).max(1e-6));
    }
    Ok(None)
}

fn finish(
    instance: &ReducedInstance,
    w: Vec<ComplexVector>,
    theta: f64,
    sensing_range: HermitianMatrix,
    structure_restored: bool,
) -> Result<BeamformingSolution> {
    let mut sol = BeamformingSolution {
        w,
        u_tilde: instance.u_tilde.clone(),
        theta,
        sensing_range,
        objective: f64::NAN,
        sinr: vec![],
        structure_restored,
    };
    let range_cov = sol.range_covariance();
    let eig = hermitian_eig(&range_cov)?;
    if eig.min_value() <= 0.0 {
        return Err(Error::SingularCovariance { min_eig: eig.min_value() });
    }
    sol.objective = eig.values.iter().map(|v| 1.0 / v).sum::<f64>() + instance.null_dim() / theta;
    let v: Vec<ComplexVector> = sol.w.iter().map(|w| instance.u_tilde.adjoint() * w).collect();
    sol.sinr = (0..instance.n_users)
        .map(|k| {
            let g = instance.g(k);
            let signal = g.dotc(&v[k]).norm_sqr();
            signal / (range_cov.quad_form(&g) - signal + instance.noise_power)
        })
        .collect();
    Ok(sol)
}

/// Packages the closed-form degenerate optimum in the same shape as R-BAL output.
pub fn from_witness(witness: &DegenerateWitness, instance: &ReducedInstance) -> Result<BeamformingSolution> {
    let theta = instance.power_budget / instance.n_tx as f64;
    let sensing_range = witness.sensing_cov.congruence_adjoint(&instance.u_tilde);
    finish(instance, witness.beams.clone(), theta, sensing_range, false)
}

/// Eigenvalue square root `F = U sqrt(Lambda)` keeping only positive eigenvalues.
pub fn sensing_factor(cov: &HermitianMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(cov)?;
    let n = cov.dim();
    let scale = eig.values.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let floor = 1e-8 * scale;
    if eig.min_value() < -floor {
        return Err(Error::NotPsd { min_eig: eig.min_value() });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| eig.values[i] > 1e-14 * scale).collect();
    Ok(ComplexMatrix::from_fn(n, keep.len(), |r, c| {
        eig.vectors[(r, keep[c])] * eig.values[keep[c]].sqrt()
    }))
}

/// Checks of a recovered design against the original problem and the
/// null-space structure. All residuals are relative.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionDiagnostics {
    /// `SINR_k / Gamma_k - 1`.
    pub sinr_margins: Vec<f64>,
    pub min_sinr_margin: f64,
    /// `|tr R_W - P_T| / P_T`.
    pub power_residual: f64,
    /// Smallest eigenvalue of `W_{K+1}` over `tr W_{K+1} / Nt`.
    pub sensing_min_eig: f64,
    /// `max |H^H W_{K+1}|` over `||H||_F ||W_{K+1}||_F`.
    pub null_leakage: f64,
    /// `||W_{K+1} - theta U_C U_C^H||_F / ||theta U_C U_C^H||_F`.
    pub null_structure: f64,
    /// `||R_W - sum_k w_k w_k^H - W_{K+1}||_F / ||R_W||_F`.
    pub covariance_consistency: f64,
    /// `tr(R_W^{-1})` from the materialized covariance.
    pub full_objective: f64,
    /// `|full_objective - reference| / reference` when a reference objective is given.
    pub objective_gap: Option<f64>,
}

/// Materializes `R_W` and `W_{K+1}` and measures everything the recovered design
/// promises. `reference_objective` is typically the reduced objective.
pub fn verify_solution(
    sol: &BeamformingSolution,
    scenario: &Scenario,
    channel: &ChannelMatrix,
    reference_objective: Option<f64>,
) -> Result<SolutionDiagnostics> {
    channel.check_matches(scenario)?;
    let nt = scenario.n_tx as f64;
    let sensing = sol.sensing_cov();
    let full = sol.full_cov();
    let sinr = evaluate_sinr(channel, &sol.w, &sensing, scenario.noise_power)?;
    let sinr_margins: Vec<f64> = sinr.iter().zip(&scenario.sinr_thresholds).map(|(s, g)| s / g - 1.0).collect();
    let min_sinr_margin = sinr_margins.iter().copied().fold(f64::INFINITY, f64::min);

    let pt = scenario.power_budget;
    let power_residual = (full.trace_re() - pt).abs() / pt;
    let sensing_eig = hermitian_eig(&sensing)?;
    let sensing_trace = sensing.trace_re();
    let sensing_min_eig = sensing_eig.min_value() / (sensing_trace / nt).max(f64::MIN_POSITIVE);

    let h = channel.matrix();
    let leak = h.adjoint() * sensing.as_matrix();
    let leak_max = leak.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let null_leakage = leak_max / (h.norm() * sensing.frobenius()).max(f64::MIN_POSITIVE);

    let theta = (pt - sol.w.iter().map(|w| w.norm_squared()).sum::<f64>()) / (nt - scenario.n_users as f64);
    let target = sol.null_projector().scale(theta);
    let null_structure = (sensing.as_matrix() - target.as_matrix()).norm() / target.frobenius().max(f64::MIN_POSITIVE);

    let mut rebuilt = sensing.clone();
    for w in &sol.w {
        rebuilt = rebuilt.add(&HermitianMatrix::outer(w));
    }
    let covariance_consistency = (full.as_matrix() - rebuilt.as_matrix()).norm() / full.frobenius();

    let full_objective = crate::scenario::evaluate_crb_objective(&full)?;
    let objective_gap = reference_objective.map(|r| (full_objective - r).abs() / r.abs());
    Ok(SolutionDiagnostics {
        sinr_margins,
        min_sinr_margin,
        power_residual,
        sensing_min_eig,
        null_leakage,
        null_structure,
        covariance_consistency,
        full_objective,
        objective_gap,
    })
}
