use langevin_core::estimators::{mass_on_set, mc_expected_gap, SetDescriptor};
use langevin_core::objective::{Flat, SquaredNorm};
use langevin_core::sde_sim::{simulate_ensemble, simulate_sgd, LangevinNoiseGradient};
use langevin_core::stats::mean_and_stderr;
use langevin_core::{Execution, InitialLaw, SimConfig};
use statrs::function::erf::erf;

fn cfg(sigma: f64, dt: f64, t_final: f64, n: usize, seed: u64, rec: Vec<f64>) -> SimConfig {
    SimConfig { sigma, dt, t_final, n_paths: n, seed, record_times: rec, execution: Execution::Parallel }
}

#[test]
fn ou_second_moment_matches_discrete_recursion() {
    // EM on L = w²: w' = (1 - 2dt) w + √(2σdt) z, so m2' = (1 - 2dt)² m2 + 2σdt exactly
    let (sigma, dt) = (0.5, 0.02);
    let obj = SquaredNorm::new(1, 1.0);
    let snaps =
        simulate_ensemble(&obj, &InitialLaw::Point { w0: vec![1.5] }, &cfg(sigma, dt, 1.0, 40_000, 3, vec![0.2, 1.0]))
            .unwrap();
    for s in &snaps {
        let mut m2 = 2.25;
        for _ in 0..s.step {
            m2 = (1.0 - 2.0 * dt).powi(2) * m2 + 2.0 * sigma * dt;
        }
        let g = mc_expected_gap(s, &obj, Execution::Parallel).unwrap();
        assert!((g.mean - m2).abs() < 4.0 * g.stderr, "t={} {} vs {m2}", s.t, g.mean);
    }
}

#[test]
fn ou_weak_error_shrinks_with_dt() {
    // exact discrete second moments against the continuous one: first-order weak error
    let (sigma, t) = (0.5f64, 1.0f64);
    let exact = 2.25 * (-4.0 * t).exp() + 0.5 * sigma * (1.0 - (-4.0 * t).exp());
    let err = |dt: f64| {
        let mut m2: f64 = 2.25;
        for _ in 0..(t / dt).round() as usize {
            m2 = (1.0 - 2.0 * dt).powi(2) * m2 + 2.0 * sigma * dt;
        }
        (m2 - exact).abs()
    };
    let ratios: Vec<f64> = [0.04, 0.02, 0.01, 0.005].windows(2).map(|w| err(w[0]) / err(w[1])).collect();
    assert!(ratios.iter().all(|r| (r - 2.0).abs() < 0.3), "{ratios:?}");
}

#[test]
fn brownian_mass_follows_erf() {
    let sigma = 0.5;
    let snaps = simulate_ensemble(
        &Flat::new(1),
        &InitialLaw::Point { w0: vec![0.0] },
        &cfg(sigma, 0.05, 4.0, 50_000, 8, vec![1.0, 4.0]),
    )
    .unwrap();
    let set = SetDescriptor::Box { lo: vec![-1.0], hi: vec![1.0] };
    for s in &snaps {
        let p = mass_on_set(s, &set, &Flat::new(1), Execution::Sequential).unwrap();
        let exact = erf(1.0 / (4.0 * sigma * s.t).sqrt());
        assert!((p.value - exact).abs() < 4.0 * (exact * (1.0 - exact) / p.n as f64).sqrt());
    }
}

#[test]
fn execution_modes_agree_bitwise() {
    let obj = SquaredNorm::new(3, 0.7);
    let init = InitialLaw::Gaussian { mean: vec![1.0, 0.0, -1.0], var: vec![0.5, 1.0, 2.0] };
    let mut c = cfg(0.3, 0.01, 0.5, 777, 4, vec![0.25, 0.5]);
    let par = simulate_ensemble(&obj, &init, &c).unwrap();
    c.execution = Execution::Sequential;
    let seq = simulate_ensemble(&obj, &init, &c).unwrap();
    assert_eq!(par, seq);
    c.seed = 5;
    assert_ne!(simulate_ensemble(&obj, &init, &c).unwrap()[0].positions, seq[0].positions);
}

#[test]
fn langevin_sgd_stationary_moment() {
    // η-step Langevin recursion on w² with σ: m2 → 2ση / (1 - (1-2η)²) = σ / (2(1-η))
    let (sigma, eta) = (0.4, 0.05);
    let oracle = LangevinNoiseGradient { objective: SquaredNorm::new(1, 1.0), sigma, eta };
    let finals: Vec<f64> = (0..4000u64)
        .map(|seed| simulate_sgd(&oracle, &[0.0], eta, 200, seed).unwrap().last().unwrap()[0].powi(2))
        .collect();
    let (m, se) = mean_and_stderr(&finals);
    let target = sigma / (2.0 * (1.0 - eta));
    assert!((m - target).abs() < 4.0 * se, "{m} vs {target}");
}
