//! Run configuration, per-trial result rows and sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, PipelineOptions, PipelineOutcome};
use crate::rbal::SolverConfig;
use crate::reduction::DEFAULT_DELTA;
use crate::scenario::{dbm_to_linear, generate_channel, trial_seed, ChannelMatrix, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaDb {
    Scalar(f64),
    PerUser(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    K,
    Nt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<usize>,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_tol() -> f64 {
    1e-9
}
fn default_max_iters() -> usize {
    200_000
}
fn default_trials() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// JSON run description. Powers in dBm, SINR targets in dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_tx: usize,
    pub n_users: usize,
    pub p_t_dbm: f64,
    pub gamma_db: GammaDb,
    pub sigma2_dbm: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Tolerance for both the constraint violation and the stationarity residual.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_true")]
    pub restore_structure: bool,
    /// Run sweep trials on the rayon pool. Off by default so timings are not contended.
    #[serde(default)]
    pub parallel: bool,
}

impl RunConfig {
    /// Defaults of the reference experiments: 64 antennas, 8 users, 20 dBm, 10 dB, 0 dBm noise.
    pub fn reference() -> Self {
        Self {
            n_tx: 64,
            n_users: 8,
            p_t_dbm: 20.0,
            gamma_db: GammaDb::Scalar(10.0),
            sigma2_dbm: 0.0,
            tau: None,
            delta: DEFAULT_DELTA,
            tol: 1e-9,
            max_iters: 200_000,
            trials: 1,
            base_seed: 1,
            sweep: None,
            restore_structure: true,
            parallel: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// `(n_tx, n_users)` for every sweep point, or the base point.
    pub fn points(&self) -> Vec<(usize, usize)> {
        match &self.sweep {
            None => vec![(self.n_tx, self.n_users)],
            Some(s) => s
                .values
                .iter()
                .map(|&v| match s.parameter {
                    SweepParameter::K => (self.n_tx, v),
                    SweepParameter::Nt => (v, self.n_users),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.values[0] == 0 {
                return Err(Error::InvalidConfig("sweep.values must be non-empty positive integers".into()));
            }
            if s.values.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidConfig("sweep.values must be strictly increasing".into()));
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        for (nt, k) in self.points() {
            self.scenario_for(nt, k)?;
        }
        self.solver_config().validate()
    }

    pub fn scenario_for(&self, n_tx: usize, n_users: usize) -> Result<Scenario> {
        let thresholds = match &self.gamma_db {
            GammaDb::Scalar(g) => vec![dbm_to_linear(*g); n_users],
            GammaDb::PerUser(v) => {
                if v.len() != n_users {
                    return Err(Error::InvalidConfig(format!(
                        "gamma_db lists {} users but the scenario has {n_users}",
                        v.len()
                    )));
                }
                v.iter().map(|g| dbm_to_linear(*g)).collect()
            }
        };
        Scenario::new(n_tx, n_users, dbm_to_linear(self.p_t_dbm), thresholds, dbm_to_linear(self.sigma2_dbm))
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario_for(self.n_tx, self.n_users)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tau: self.tau,
            delta: self.delta,
            tol_violation: self.tol,
            tol_dual: self.tol,
            max_iterations: self.max_iters,
            ..SolverConfig::default()
        }
    }

    pub fn pipeline_options(&self, allow_infeasible: bool) -> PipelineOptions {
        PipelineOptions { solver: self.solver_config(), allow_infeasible, restore_structure: self.restore_structure }
    }
}

/// One CSV line. Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub seed: u64,
    pub n_tx: usize,
    pub n_users: usize,
    pub feasible: bool,
    pub degenerate: bool,
    pub crb_objective: Option<f64>,
    pub iterations: usize,
    pub setup_seconds: f64,
    pub iter_seconds_total: f64,
    pub final_violation: f64,
    pub min_sinr_margin: f64,
    /// `converged`, `closed_form`, `iteration_cap`, `infeasible` or `error: ...`.
    pub status: String,
}

impl ResultRow {
    pub fn from_outcome(trial: usize, seed: u64, scenario: &Scenario, outcome: &PipelineOutcome) -> Self {
        let status = match (&outcome.solve_report, outcome.converged()) {
            (None, _) => "closed_form",
            (Some(_), true) => "converged",
            (Some(_), false) => "iteration_cap",
        };
        Self {
            trial,
            seed,
            n_tx: scenario.n_tx,
            n_users: scenario.n_users,
            feasible: outcome.feasibility.feasible,
            degenerate: outcome.degenerate,
            crb_objective: outcome.feasibility.feasible.then_some(outcome.solution.objective),
            iterations: outcome.iterations(),
            setup_seconds: outcome.setup_seconds,
            iter_seconds_total: outcome.iter_seconds,
            final_violation: outcome.final_violation(),
            min_sinr_margin: outcome.min_sinr_margin(scenario),
            status: status.into(),
        }
    }

    fn failed(trial: usize, seed: u64, scenario: &Scenario, error: &Error) -> Self {
        let (feasible, status) = match error {
            Error::Infeasible { .. } => (false, "infeasible".to_string()),
            other => (true, format!("error: {other}")),
        };
        Self {
            trial,
            seed,
            n_tx: scenario.n_tx,
            n_users: scenario.n_users,
            feasible,
            degenerate: false,
            crb_objective: None,
            iterations: 0,
            setup_seconds: 0.0,
            iter_seconds_total: 0.0,
            final_violation: f64::NAN,
            min_sinr_margin: f64::NAN,
            status,
        }
    }
}

/// Seeded channel for one trial.
pub fn trial_channel(scenario: &Scenario, base_seed: u64, trial: usize) -> (u64, ChannelMatrix) {
    let seed = trial_seed(base_seed, trial as u64);
    (seed, generate_channel(scenario, seed))
}

/// Runs every (sweep point, trial) pair. Rows come back ordered by sweep point,
/// then trial, whatever the execution order.
pub fn run_sweep(config: &RunConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let options = config.pipeline_options(false);
    let mut jobs = Vec::new();
    for (nt, k) in config.points() {
        let scenario = config.scenario_for(nt, k)?;
        for trial in 0..config.trials {
            jobs.push((scenario.clone(), trial));
        }
    }
    let run = |(scenario, trial): &(Scenario, usize)| {
        let (seed, channel) = trial_channel(scenario, config.base_seed, *trial);
        match run_pipeline(scenario, &channel, &options) {
            Ok(outcome) => ResultRow::from_outcome(*trial, seed, scenario, &outcome),
            Err(e) => ResultRow::failed(*trial, seed, scenario, &e),
        }
    };
    Ok(if config.parallel { jobs.par_iter().map(run).collect() } else { jobs.iter().map(run).collect() })
}

/// Per sweep point summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub n_tx: usize,
    pub n_users: usize,
    pub trials: usize,
    pub solved: usize,
    pub mean_crb: Option<f64>,
    pub mean_iterations: f64,
    pub mean_setup_seconds: f64,
    pub mean_iter_seconds_total: f64,
    pub median_iter_seconds_total: f64,
    /// Total loop time over total iterations, R-BAL trials only.
    pub seconds_per_iteration: Option<f64>,
}

pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.n_tx, r.n_users)) {
            keys.push((r.n_tx, r.n_users));
        }
    }
    keys.into_iter()
        .map(|(nt, k)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.n_tx == nt && r.n_users == k).collect();
            let n = group.len() as f64;
            let crbs: Vec<f64> = group.iter().filter_map(|r| r.crb_objective).collect();
            let mut times: Vec<f64> = group.iter().map(|r| r.iter_seconds_total).collect();
            times.sort_by(f64::total_cmp);
            let median = if times.len() % 2 == 1 {
                times[times.len() / 2]
            } else {
                0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
            };
            let iters: usize = group.iter().map(|r| r.iterations).sum();
            let loop_time: f64 = group.iter().filter(|r| r.iterations > 0).map(|r| r.iter_seconds_total).sum();
            AggregateRow {
                n_tx: nt,
                n_users: k,
                trials: group.len(),
                solved: crbs.len(),
                mean_crb: (!crbs.is_empty()).then(|| crbs.iter().sum::<f64>() / crbs.len() as f64),
                mean_iterations: iters as f64 / n,
                mean_setup_seconds: group.iter().map(|r| r.setup_seconds).sum::<f64>() / n,
                mean_iter_seconds_total: times.iter().sum::<f64>() / n,
                median_iter_seconds_total: median,
                seconds_per_iteration: (iters > 0).then(|| loop_time / iters as f64),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in rows {
        writer.serialize(r).map_err(|e| Error::Output(format!("CSV write failed: {e}")))?;
    }
    writer.flush().map_err(|e| Error::Output(format!("CSV write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_config() {
        let cfg = RunConfig::from_json(r#"{"n_tx": 8, "n_users": 2, "p_t_dbm": 20, "gamma_db": 10, "sigma2_dbm": 0}"#)
            .unwrap();
        assert_eq!(cfg.delta, 1e-4);
        assert_eq!(cfg.max_iters, 200_000);
        let s = cfg.scenario().unwrap();
        assert!((s.power_budget - 100.0).abs() < 1e-12);
        assert!((s.sinr_thresholds[1] - 10.0).abs() < 1e-12);
        assert_eq!(s.noise_power, 1.0);
    }

    #[test]
    fn per_user_gamma() {
        let cfg = RunConfig::from_json(
            r#"{"n_tx": 8, "n_users": 2, "p_t_dbm": 20, "gamma_db": [0, 10], "sigma2_dbm": -10}"#,
        )
        .unwrap();
        let s = cfg.scenario().unwrap();
        assert_eq!(s.sinr_thresholds, vec![1.0, 10.0]);
        assert!((s.noise_power - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = r#""p_t_dbm": 20, "gamma_db": 10, "sigma2_dbm": 0"#;
        for body in [
            format!(r#"{{"n_tx": 4, "n_users": 4, {base}}}"#),
            format!(r#"{{"n_tx": 8, "n_users": 2, {base}, "sweep": {{"parameter": "K", "values": [2, 2]}}}}"#),
            format!(r#"{{"n_tx": 8, "n_users": 2, {base}, "sweep": {{"parameter": "K", "values": [4, 8]}}}}"#),
            format!(r#"{{"n_tx": 8, "n_users": 2, {base}, "unknown": 1}}"#),
            format!(r#"{{"n_tx": 8, "n_users": 3, "p_t_dbm": 20, "gamma_db": [1, 2], "sigma2_dbm": 0}}"#),
            format!(r#"{{"n_tx": 8, "n_users": 2, {base}, "delta": -1}}"#),
        ] {
            assert!(RunConfig::from_json(&body).is_err(), "{body}");
        }
        let err = RunConfig::from_json("{\n  \"n_tx\": 8,\n  \"n_users\": \"two\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn sweep_points() {
        let mut cfg = RunConfig::reference();
        cfg.sweep = Some(Sweep { parameter: SweepParameter::Nt, values: vec![16, 64, 128] });
        assert_eq!(cfg.points(), vec![(16, 8), (64, 8), (128, 8)]);
        cfg.sweep = Some(Sweep { parameter: SweepParameter::K, values: vec![4, 8] });
        assert_eq!(cfg.points(), vec![(64, 4), (64, 8)]);
    }

    #[test]
    fn csv_header_order() {
        let row = ResultRow {
            trial: 0,
            seed: 1,
            n_tx: 4,
            n_users: 1,
            feasible: false,
            degenerate: false,
            crb_objective: None,
            iterations: 0,
            setup_seconds: 0.0,
            iter_seconds_total: 0.0,
            final_violation: 0.0,
            min_sinr_margin: 0.0,
            status: "infeasible".into(),
        };
        let mut buf = Vec::new();
        write_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "trial,seed,n_tx,n_users,feasible,degenerate,crb_objective,iterations,setup_seconds,\
             iter_seconds_total,final_violation,min_sinr_margin,status\n"
        ));
        assert!(text.contains("0,1,4,1,false,false,,0,"));
    }
}
