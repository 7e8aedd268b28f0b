//! Oracle suite behind the `verify` command.

use serde::Serialize;

use crate::error::Result;
use crate::feasibility::compute_p_low;
use crate::pipeline::{run_pipeline, PipelineOptions};
use crate::rbal::{default_tau, iterate, SolverState};
use crate::reduction::{build_reduced, precompute_dual};
use crate::scenario::{generate_channel, Scenario};

use super::dense::{dense_dual_inverse_check, reference_bal_step, state_difference, DenseSystem};
use super::oracle::scalar_oracle_k1;

pub const DUAL_INVERSE_TOL: f64 = 1e-8;
pub const TRAJECTORY_TOL: f64 = 1e-7;
pub const TRAJECTORY_STEPS: usize = 100;
pub const ORACLE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: String, measured: f64, threshold: f64) -> Self {
        Self { name, measured, threshold, passed: measured <= threshold }
    }
}

/// Instance used by the dense checks: `Nt = 2K + 2`, 10 dBm budget, 5 dB targets.
pub fn small_instance(k: usize, seed: u64) -> Result<(Scenario, crate::scenario::ChannelMatrix)> {
    let s = Scenario::uniform(2 * k + 2, k, 10.0, 10f64.powf(0.5), 1.0)?;
    let ch = generate_channel(&s, seed);
    Ok((s, ch))
}

pub fn dual_inverse_error(k: usize, delta: f64, seed: u64) -> Result<f64> {
    let (s, ch) = small_instance(k, seed)?;
    let inst = build_reduced(&s, &ch)?;
    let dual = precompute_dual(&inst, delta)?;
    Ok(dense_dual_inverse_check(&inst, &dual))
}

/// Largest relative state difference between the structured iteration and the
/// dense reference over `steps` iterations from the standard start. With
/// `budget_factor` the budget is set to that multiple of `p_low`, which keeps
/// the SINR multipliers away from zero.
pub fn trajectory_difference(
    k: usize,
    seed: u64,
    steps: usize,
    budget_factor: Option<f64>,
    flip_z_sign: bool,
) -> Result<f64> {
    let (mut s, ch) = small_instance(k, seed)?;
    if let Some(f) = budget_factor {
        s = s.with_power_budget(f * compute_p_low(&s, &ch)?.p_low);
    }
    let inst = build_reduced(&s, &ch)?;
    let delta = crate::reduction::DEFAULT_DELTA;
    let dual = precompute_dual(&inst, delta)?;
    let dense = DenseSystem::build(&inst);
    let p_low = compute_p_low(&s, &ch)?.p_low;
    let tau = default_tau(&inst, p_low);
    let mut a = SolverState::initial(&inst, p_low);
    let mut b = a.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        a = iterate(&a, &inst, &dual, tau, flip_z_sign)?.0;
        b = reference_bal_step(&b, &inst, &dense, tau, delta)?;
        worst = worst.max(state_difference(&a, &b, &dense, tau));
    }
    Ok(worst)
}

/// Single-user instance number `index`: `Nt` cycles through 2, 4, 8, 16 and the
/// budget alternates between binding and non-binding SINR constraint.
pub fn scalar_instance(index: usize) -> Result<(Scenario, crate::scenario::ChannelMatrix)> {
    let nt = [2usize, 4, 8, 16][index % 4];
    let base = Scenario::uniform(nt, 1, 1.0, 10.0, 1.0)?;
    let ch = generate_channel(&base, 1000 + index as u64);
    let x_min = 10.0 / ch.user_gain(0);
    let n = nt as f64;
    // The constraint is inactive exactly when P_T / Nt exceeds x_min.
    let factor = [1.2, 0.5 * n + 0.6, 3.0 * n, 20.0 * n, 1.01][(index / 4) % 5];
    Ok((base.with_power_budget(factor * x_min), ch))
}

/// Relative objective gap between the pipeline and the scalar oracle.
pub fn scalar_oracle_gap(index: usize) -> Result<(f64, bool, bool)> {
    let (s, ch) = scalar_instance(index)?;
    let oracle = scalar_oracle_k1(&s, &ch)?;
    let outcome = run_pipeline(&s, &ch, &PipelineOptions::default())?;
    let gap = (outcome.solution.objective - oracle.objective).abs() / oracle.objective;
    Ok((gap, oracle.degenerate, outcome.degenerate))
}

pub fn run_suite(level: Level, flip_z_sign: bool) -> Vec<CheckResult> {
    let (inverse_ks, traj_ks, scalar_count): (&[usize], &[usize], usize) = match level {
        Level::Quick => (&[1, 2], &[1, 2], 8),
        Level::Full => (&[1, 2, 3, 6], &[1, 2, 4], 20),
    };
    let mut out = Vec::new();
    let record = |out: &mut Vec<CheckResult>, name: String, value: Result<f64>, threshold: f64| {
        out.push(CheckResult::new(name, value.unwrap_or(f64::INFINITY), threshold));
    };
    for &k in inverse_ks {
        for delta in [1e-4, 1e-2] {
            record(&mut out, format!("dual inverse K={k} delta={delta:.0e}"), dual_inverse_error(k, delta, 7 + k as u64), DUAL_INVERSE_TOL);
        }
    }
    for &k in traj_ks {
        for (label, factor) in [("10 dBm budget", None), ("budget 1.5 p_low", Some(1.5))] {
            record(
                &mut out,
                format!("trajectory K={k}, {label} ({TRAJECTORY_STEPS} iterations)"),
                trajectory_difference(k, 21 + k as u64, TRAJECTORY_STEPS, factor, flip_z_sign),
                TRAJECTORY_TOL,
            );
        }
    }
    for i in 0..scalar_count {
        let gap = scalar_oracle_gap(i).map(|(gap, a, b)| if a == b { gap } else { f64::INFINITY });
        record(&mut out, format!("single-user oracle #{i}"), gap, ORACLE_TOL);
    }
    out
}
