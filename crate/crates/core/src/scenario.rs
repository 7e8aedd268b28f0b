//! Problem instances, random channels and unit conversion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, ComplexMatrix, ComplexVector, HermitianMatrix, C64};

/// Downlink instance in linear units (powers in mW).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_tx: usize,
    pub n_users: usize,
    pub power_budget: f64,
    pub sinr_thresholds: Vec<f64>,
    pub noise_power: f64,
}

impl Scenario {
    /// Scenario with the same threshold for every user.
    pub fn uniform(n_tx: usize, n_users: usize, power_budget: f64, sinr: f64, noise_power: f64) -> Result<Self> {
        Self::new(n_tx, n_users, power_budget, vec![sinr; n_users], noise_power)
    }

    pub fn new(
        n_tx: usize,
        n_users: usize,
        power_budget: f64,
        sinr_thresholds: Vec<f64>,
        noise_power: f64,
    ) -> Result<Self> {
        let s = Self { n_tx, n_users, power_budget, sinr_thresholds, noise_power };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::InvalidScenario("at least one user is required".into()));
        }
        if self.n_tx <= self.n_users {
            return Err(Error::InvalidScenario(format!(
                "need more antennas than users, got n_tx = {} and n_users = {}",
                self.n_tx, self.n_users
            )));
        }
        if self.sinr_thresholds.len() != self.n_users {
            return Err(Error::InvalidScenario(format!(
                "{} SINR thresholds given for {} users",
                self.sinr_thresholds.len(),
                self.n_users
            )));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.power_budget) {
            return Err(Error::InvalidScenario(format!("power budget must be positive, got {}", self.power_budget)));
        }
        if !positive(self.noise_power) {
            return Err(Error::InvalidScenario(format!("noise power must be positive, got {}", self.noise_power)));
        }
        if let Some(g) = self.sinr_thresholds.iter().find(|g| !positive(**g)) {
            return Err(Error::InvalidScenario(format!("SINR thresholds must be positive, got {g}")));
        }
        Ok(())
    }

    pub fn with_power_budget(&self, power_budget: f64) -> Self {
        Self { power_budget, ..self.clone() }
    }
}

/// Channel matrix `H` (`n_tx x n_users`); column `k` is user k's channel `h_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    h: ComplexMatrix,
}

impl ChannelMatrix {
    pub fn new(h: ComplexMatrix) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::DimensionMismatch("channel matrix must be non-empty".into()));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidScenario("channel contains non-finite entries".into()));
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.h
    }

    pub fn n_tx(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.h.ncols()
    }

    pub fn user(&self, k: usize) -> ComplexVector {
        self.h.column(k).into_owned()
    }

    pub fn user_gain(&self, k: usize) -> f64 {
        self.h.column(k).norm_squared()
    }

    /// `H^H H`.
    pub fn gram(&self) -> HermitianMatrix {
        HermitianMatrix::symmetrized(self.h.adjoint() * &self.h)
    }

    pub fn check_matches(&self, scenario: &Scenario) -> Result<()> {
        if self.n_tx() != scenario.n_tx || self.n_users() != scenario.n_users {
            return Err(Error::DimensionMismatch(format!(
                "channel is {}x{} but scenario has n_tx = {}, n_users = {}",
                self.n_tx(),
                self.n_users(),
                scenario.n_tx,
                scenario.n_users
            )));
        }
        Ok(())
    }
}

/// i.i.d. CN(0, 1) channel: each entry is `(a + ib) / sqrt(2)` with `a, b ~ N(0, 1)`.
pub fn generate_channel(scenario: &Scenario, seed: u64) -> ChannelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    // Column-major fill, so the draw order is user by user.
    let h = ComplexMatrix::from_fn(scenario.n_tx, scenario.n_users, |_, _| {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        C64::new(a * scale, b * scale)
    });
    ChannelMatrix { h }
}

/// Seed used for trial `trial` of an experiment seeded with `base_seed`.
pub fn trial_seed(base_seed: u64, trial: u64) -> u64 {
    base_seed ^ trial
}

pub fn dbm_to_linear(x_dbm: f64) -> f64 {
    10f64.powf(x_dbm / 10.0)
}

pub fn linear_to_dbm(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Per-user SINR of the beamformers `w` with sensing covariance `W_{K+1}`.
pub fn evaluate_sinr(
    channel: &ChannelMatrix,
    w: &[ComplexVector],
    sensing_cov: &HermitianMatrix,
    noise: f64,
) -> Result<Vec<f64>> {
    let nt = channel.n_tx();
    let k_users = channel.n_users();
    if w.len() != k_users {
        return Err(Error::DimensionMismatch(format!("{} beamformers for {} users", w.len(), k_users)));
    }
    if w.iter().any(|v| v.len() != nt) || sensing_cov.dim() != nt {
        return Err(Error::DimensionMismatch(format!("beamformers and sensing covariance must have dimension {nt}")));
    }
    let h = channel.matrix();
    // gains[(k, i)] = |h_k^H w_i|^2
    let mut wm = ComplexMatrix::zeros(nt, k_users);
    for (i, v) in w.iter().enumerate() {
        wm.set_column(i, v);
    }
    let cross = h.adjoint() * wm;
    Ok((0..k_users)
        .map(|k| {
            let hk = h.column(k).into_owned();
            let signal = cross[(k, k)].norm_sqr();
            let interference: f64 = (0..k_users).filter(|&i| i != k).map(|i| cross[(k, i)].norm_sqr()).sum();
            signal / (interference + sensing_cov.quad_form(&hk) + noise)
        })
        .collect())
}

/// Smallest eigenvalue ratio accepted as positive definite.
pub const PD_RATIO: f64 = 1e-12;

/// `tr(R^{-1})` for a positive definite covariance `R`.
pub fn evaluate_crb_objective(cov: &HermitianMatrix) -> Result<f64> {
    let eig = hermitian_eig(cov)?;
    let (lo, hi) = (eig.min_value(), eig.max_value());
    if !(hi > 0.0) || lo <= PD_RATIO * hi {
        return Err(Error::SingularCovariance { min_eig: lo });
    }
    Ok(eig.values.iter().map(|v| 1.0 / v).sum())
}
