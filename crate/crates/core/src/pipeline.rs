//! Feasibility check, degenerate shortcut, R-BAL and recovery in one call.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{compute_p_low, FeasibilityReport};
use crate::rbal::{solve, SolveReport, SolveStatus, SolverConfig, SolverState};
use crate::recovery::{extract_rank_one, from_witness, BeamformingSolution};
use crate::reduction::{build_reduced, check_degenerate, precompute_dual, ReducedInstance};
use crate::scenario::{ChannelMatrix, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub solver: SolverConfig,
    /// Run the solver even when the budget is below `p_low`.
    pub allow_infeasible: bool,
    /// Re-decompose the beams when extraction leaves sensing power in `range(H)`.
    pub restore_structure: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), allow_infeasible: false, restore_structure: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionPath {
    ClosedForm,
    Rbal,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub feasibility: FeasibilityReport,
    pub degenerate: bool,
    pub path: SolutionPath,
    /// `None` on the closed-form path.
    pub solve_report: Option<SolveReport>,
    pub instance: ReducedInstance,
    pub solution: BeamformingSolution,
    /// Reduced objective at the final iterate (the closed-form value on the shortcut).
    pub reduced_objective: f64,
    pub setup_seconds: f64,
    pub iter_seconds: f64,
}

impl PipelineOutcome {
    pub fn converged(&self) -> bool {
        self.solve_report.as_ref().is_none_or(|r| r.status == SolveStatus::Converged)
    }

    pub fn iterations(&self) -> usize {
        self.solve_report.as_ref().map_or(0, |r| r.iterations)
    }

    pub fn final_violation(&self) -> f64 {
        self.solve_report.as_ref().map_or(0.0, |r| r.final_violation)
    }

    /// `min_k SINR_k / Gamma_k - 1`.
    pub fn min_sinr_margin(&self, scenario: &Scenario) -> f64 {
        self.solution
            .sinr
            .iter()
            .zip(&scenario.sinr_thresholds)
            .map(|(s, g)| s / g - 1.0)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn run_pipeline(scenario: &Scenario, channel: &ChannelMatrix, options: &PipelineOptions) -> Result<PipelineOutcome> {
    options.solver.validate()?;
    let setup_start = Instant::now();
    let feasibility = compute_p_low(scenario, channel)?;
    if !feasibility.feasible && !options.allow_infeasible {
        return Err(Error::Infeasible { power_budget: scenario.power_budget, p_low: feasibility.p_low });
    }
    if feasibility.borderline {
        log::warn!("power budget is within {:.0e} of p_low = {:.6e}", crate::feasibility::BORDERLINE_MARGIN, feasibility.p_low);
    }
    let verdict = check_degenerate(scenario, channel)?;
    let instance = build_reduced(scenario, channel)?;

    if let Some(witness) = verdict.witness.as_ref().filter(|_| feasibility.feasible) {
        let solution = from_witness(witness, &instance)?;
        let reduced_objective = (scenario.n_tx as f64).powi(2) / scenario.power_budget;
        return Ok(PipelineOutcome {
            feasibility,
            degenerate: true,
            path: SolutionPath::ClosedForm,
            solve_report: None,
            instance,
            solution,
            reduced_objective,
            setup_seconds: setup_start.elapsed().as_secs_f64(),
            iter_seconds: 0.0,
        });
    }

    let dual = precompute_dual(&instance, options.solver.delta)?;
    let init = SolverState::initial(&instance, feasibility.p_low);
    let setup_seconds = setup_start.elapsed().as_secs_f64();

    let iter_start = Instant::now();
    let (state, report) = solve(&instance, &dual, &options.solver, init, feasibility.p_low)?;
    let iter_seconds = iter_start.elapsed().as_secs_f64();
    if report.status != SolveStatus::Converged {
        log::warn!(
            "iteration cap reached after {} iterations (violation {:.3e}, dual residual {:.3e})",
            report.iterations,
            report.final_violation,
            report.dual_residual
        );
    }
    let solution = extract_rank_one(&state.x, &instance, options.restore_structure)?;
    Ok(PipelineOutcome {
        feasibility,
        degenerate: false,
        path: SolutionPath::Rbal,
        reduced_objective: report.objective,
        solve_report: Some(report),
        instance,
        solution,
        setup_seconds,
        iter_seconds,
    })
}
