use isac_bf::export::{matrix_from_json, SolutionRecord};
use isac_bf::feasibility::minimum_power_beamformers;
use isac_bf::numerics::HermitianMatrix;
use isac_bf::recovery::verify_solution;
use isac_bf::scenario::{evaluate_sinr, generate_channel};
use isac_bf::{compute_p_low, run_pipeline, PipelineOptions, Scenario, SolutionPath};
use proptest::prelude::*;

fn scenario(nt: usize, k: usize, factor: f64, gamma: f64, seed: u64) -> (Scenario, isac_bf::ChannelMatrix) {
    let base = Scenario::uniform(nt, k, 1.0, gamma, 1.0).unwrap();
    let ch = generate_channel(&base, seed);
    let p_low = compute_p_low(&base, &ch).unwrap().p_low;
    (base.with_power_budget(factor * p_low), ch)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    // tr(R^{-1}) >= Nt^2 / tr(R) for any positive definite R, with equality only
    // for the isotropic covariance.
    #[test]
    fn designs_are_feasible_and_respect_the_isotropic_bound(
        nt in 3usize..10,
        k_raw in 1usize..4,
        factor in 1.2f64..30.0,
        gamma_db in 0.0f64..12.0,
        seed in 0u64..1000,
    ) {
        let k = k_raw.min(nt - 1);
        let (s, ch) = scenario(nt, k, factor, 10f64.powf(gamma_db / 10.0), seed);
        let out = run_pipeline(&s, &ch, &PipelineOptions::default()).unwrap();
        prop_assert!(out.converged());
        let d = verify_solution(&out.solution, &s, &ch, Some(out.reduced_objective)).unwrap();
        prop_assert!(d.min_sinr_margin > -1e-6, "margin {}", d.min_sinr_margin);
        prop_assert!(d.power_residual < 1e-8);
        prop_assert!(d.objective_gap.unwrap() < 1e-6);
        let bound = (nt * nt) as f64 / s.power_budget;
        prop_assert!(d.full_objective >= bound * (1.0 - 1e-12));
        if out.path == SolutionPath::ClosedForm {
            prop_assert!((d.full_objective - bound).abs() < 1e-9 * bound);
        }
    }

    // More power can only help.
    #[test]
    fn objective_decreases_with_budget(seed in 0u64..500, factor in 1.5f64..6.0) {
        let (s, ch) = scenario(8, 3, factor, 10.0, seed);
        let lo = run_pipeline(&s, &ch, &PipelineOptions::default()).unwrap();
        let hi = run_pipeline(&s.with_power_budget(1.5 * s.power_budget), &ch, &PipelineOptions::default()).unwrap();
        prop_assert!(hi.solution.objective < lo.solution.objective);
    }

    #[test]
    fn p_low_design_meets_targets_with_equality(seed in 0u64..1000, nt in 3usize..12) {
        let k = (nt - 1).min(4);
        let (s, ch) = scenario(nt, k, 1.0, 10.0, seed);
        let report = compute_p_low(&s, &ch).unwrap();
        let beams = minimum_power_beamformers(&s, &ch, &report).unwrap();
        let power: f64 = beams.iter().map(|w| w.norm_squared()).sum();
        prop_assert!((power - report.p_low).abs() < 1e-8 * report.p_low);
        let sinr = evaluate_sinr(&ch, &beams, &HermitianMatrix::zeros(nt), 1.0).unwrap();
        for v in sinr {
            prop_assert!((v / 10.0 - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn exported_design_rebuilds_the_covariance() {
    let (s, ch) = scenario(12, 3, 4.0, 10.0, 9);
    let out = run_pipeline(&s, &ch, &PipelineOptions::default()).unwrap();
    let record = SolutionRecord::new(9, &s, &out, None, None);
    let text = serde_json::to_string(&record).unwrap();
    let back: SolutionRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back.scenario, s);
    assert_eq!(back.w.len(), 3);
    let mut r = matrix_from_json(&back.sensing_cov);
    for w in &back.w {
        let v = nalgebra::DVector::from_iterator(w.len(), w.iter().map(|z| isac_bf::C64::new(z[0], z[1])));
        r += &v * v.adjoint();
    }
    let expected = out.solution.full_cov();
    assert!((r - expected.as_matrix()).norm() < 1e-12 * expected.frobenius());
}
