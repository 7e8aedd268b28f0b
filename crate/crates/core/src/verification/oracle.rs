//! Single-user problem solved as a scalar minimization.

use crate::error::{Error, Result};
use crate::scenario::{ChannelMatrix, Scenario};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarOptimum {
    /// Optimal data-stream power.
    pub x_opt: f64,
    pub objective: f64,
    /// The SINR constraint is inactive at the optimum.
    pub degenerate: bool,
}

/// Minimizes `1/x + (Nt-1)^2 / (P_T - x)` over `Gamma sigma^2 / ||h||^2 <= x < P_T`
/// by golden-section search.
pub fn scalar_oracle_k1(scenario: &Scenario, channel: &ChannelMatrix) -> Result<ScalarOptimum> {
    scenario.validate()?;
    channel.check_matches(scenario)?;
    if scenario.n_users != 1 {
        return Err(Error::InvalidScenario(format!("scalar oracle needs one user, got {}", scenario.n_users)));
    }
    let pt = scenario.power_budget;
    let x_min = scenario.sinr_thresholds[0] * scenario.noise_power / channel.user_gain(0);
    if x_min >= pt {
        return Err(Error::Infeasible { power_budget: pt, p_low: x_min });
    }
    let c2 = ((scenario.n_tx - 1) as f64).powi(2);
    let f = |x: f64| 1.0 / x + c2 / (pt - x);

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (x_min, pt * (1.0 - 1e-15));
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-14 * pt {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mut x_opt = 0.5 * (a + b);
    // A minimizer within the search resolution of the bound is the bound.
    if x_opt - x_min <= 1e-12 * pt {
        x_opt = x_min;
    }
    let degenerate = x_opt > x_min;
    Ok(ScalarOptimum { x_opt, objective: f(x_opt), degenerate })
}
