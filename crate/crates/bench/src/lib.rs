//! Fixtures shared by the benchmarks.

use isac_bf::feasibility::compute_p_low;
use isac_bf::rbal::{default_tau, iterate, SolverState};
use isac_bf::reduction::{build_reduced, precompute_dual, DualPrecompute, DEFAULT_DELTA};
use isac_bf::scenario::generate_channel;
use isac_bf::{ChannelMatrix, ReducedInstance, Scenario};

/// A reduced instance with a warm iterate, ready for timing single steps.
pub struct Fixture {
    pub scenario: Scenario,
    pub channel: ChannelMatrix,
    pub instance: ReducedInstance,
    pub dual: DualPrecompute,
    pub tau: f64,
    pub state: SolverState,
}

/// 20 dBm budget, 10 dB targets, unit noise.
pub fn fixture(n_tx: usize, n_users: usize, seed: u64) -> Fixture {
    let scenario = Scenario::uniform(n_tx, n_users, 100.0, 10.0, 1.0).expect("valid scenario");
    let channel = generate_channel(&scenario, seed);
    let p_low = compute_p_low(&scenario, &channel).expect("feasibility").p_low;
    let instance = build_reduced(&scenario, &channel).expect("reduction");
    let dual = precompute_dual(&instance, DEFAULT_DELTA).expect("dual constants");
    let tau = default_tau(&instance, p_low);
    let mut state = SolverState::initial(&instance, p_low);
    // Move off the starting point so the prox steps do representative work.
    for _ in 0..50 {
        state = iterate(&state, &instance, &dual, tau, false).expect("iteration").0;
    }
    Fixture { scenario, channel, instance, dual, tau, state }
}
