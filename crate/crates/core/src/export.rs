//! JSON form of a solved instance.
//!
//! Complex numbers are `[re, im]` pairs, matrices are lists of rows and
//! beamformers are lists of complex entries. `schema_version` changes whenever
//! a field is renamed or removed.

use serde::{Deserialize, Serialize};

use crate::numerics::{ComplexMatrix, ComplexVector};
use crate::pipeline::{PipelineOutcome, SolutionPath};
use crate::recovery::SolutionDiagnostics;
use crate::scenario::Scenario;
use crate::verification::KktResiduals;

pub const SCHEMA_VERSION: u32 = 1;

pub type JsonComplex = [f64; 2];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub scenario: Scenario,
    pub p_low: f64,
    pub feasible: bool,
    pub degenerate: bool,
    pub path: SolutionPath,
    pub converged: bool,
    pub iterations: usize,
    pub final_violation: f64,
    /// `tr(R_W^{-1})` of the recovered design.
    pub crb_objective: f64,
    pub reduced_objective: f64,
    pub sinr: Vec<f64>,
    /// Null-space power per direction.
    pub theta: f64,
    pub structure_restored: bool,
    /// `w[k][i]`, entry i of user k's beamformer.
    pub w: Vec<Vec<JsonComplex>>,
    /// `W_{K+1}`, row-major.
    pub sensing_cov: Vec<Vec<JsonComplex>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SolutionDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktResiduals>,
}

pub fn vector_to_json(v: &ComplexVector) -> Vec<JsonComplex> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn matrix_to_json(m: &ComplexMatrix) -> Vec<Vec<JsonComplex>> {
    m.row_iter().map(|row| row.iter().map(|z| [z.re, z.im]).collect()).collect()
}

pub fn matrix_from_json(rows: &[Vec<JsonComplex>]) -> ComplexMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    ComplexMatrix::from_fn(n, m, |i, j| crate::numerics::C64::new(rows[i][j][0], rows[i][j][1]))
}

impl SolutionRecord {
    pub fn new(
        seed: u64,
        scenario: &Scenario,
        outcome: &PipelineOutcome,
        diagnostics: Option<SolutionDiagnostics>,
        kkt: Option<KktResiduals>,
    ) -> Self {
        let sol = &outcome.solution;
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            scenario: scenario.clone(),
            p_low: outcome.feasibility.p_low,
            feasible: outcome.feasibility.feasible,
            degenerate: outcome.degenerate,
            path: outcome.path,
            converged: outcome.converged(),
            iterations: outcome.iterations(),
            final_violation: outcome.final_violation(),
            crb_objective: sol.objective,
            reduced_objective: outcome.reduced_objective,
            sinr: sol.sinr.clone(),
            theta: sol.theta,
            structure_restored: sol.structure_restored,
            w: sol.w.iter().map(vector_to_json).collect(),
            sensing_cov: matrix_to_json(sol.sensing_cov().as_matrix()),
            diagnostics,
            kkt,
        }
    }
}
