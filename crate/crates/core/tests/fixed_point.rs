mod common;

use macprecode::channel::PrecoderSet;
use macprecode::constellation::ConstellationKind;
use macprecode::fixed_point::{
    asymptotic_conditional_mi, solve_fixed_point, sweep, wsr_objective, FixedPointOptions, FixedPointState,
};
use macprecode::linalg::{frobenius, CMatrix};
use macprecode::model::SystemModel;
use macprecode::noise::{derive_seed, rng_from_seed, NoiseBank};
use macprecode::optimizer::{optimize, OptimizerConfig};

fn rel_change(new: &[Vec<f64>], old: &[Vec<f64>]) -> f64 {
    let scale = new.iter().flatten().chain(old.iter().flatten()).fold(0.0f64, |m, v| m.max(v.abs()));
    new.iter()
        .flatten()
        .zip(old.iter().flatten())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8 * scale).max(1e-12))
        .fold(0.0, f64::max)
}

fn np_set(model: &SystemModel, snr_db: f64) -> PrecoderSet {
    let p = model.stats().snr_to_power(0, snr_db).unwrap();
    PrecoderSet::no_precoding(2, vec![p, p], vec![1.0, 1.0]).unwrap()
}

/// Copy of `state` whose stored `ψ` (the warm-start point) is replaced.
fn with_psi(state: &FixedPointState, f: impl Fn(usize, f64) -> f64) -> FixedPointState {
    let mut s = state.clone();
    for u in &mut s.users {
        u.psi = u.psi.iter().enumerate().map(|(i, &p)| f(i, p)).collect();
    }
    s
}

#[test]
fn zero_precoders_give_the_trivial_solution() {
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let zero = PrecoderSet::new(vec![CMatrix::zeros(2, 2); 2], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let noise = NoiseBank::new(2, 2, 200, 1);
    let st = solve_fixed_point(&model, &zero, &[0, 1], &noise, &FixedPointOptions::default(), None).unwrap();
    assert!(st.converged);
    for u in &st.users {
        assert!(u.gamma.iter().all(|g| (g - 1.0).abs() < 1e-12));
        assert!(u.psi.iter().all(|p| p.abs() < 1e-12));
        let (r_t, _) = model.stats().correlation_matrices(u.user);
        assert!(frobenius(&(&u.t - r_t)) < 1e-12);
    }
    assert!(asymptotic_conditional_mi(&model, &st).unwrap().abs() < 1e-12);
}

#[test]
fn converged_states_are_self_consistent() {
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let noise = NoiseBank::new(2, 2, 500, 3);
    let opts = FixedPointOptions::default();
    for snr in [-10.0, 0.0, 10.0, 20.0] {
        let set = np_set(&model, snr);
        for subset in [vec![0], vec![1], vec![0, 1]] {
            let st = solve_fixed_point(&model, &set, &subset, &noise, &opts, None).unwrap();
            assert!(st.converged && st.residual <= opts.tol, "snr {snr} {subset:?}");
            let psi: Vec<Vec<f64>> = st.users.iter().map(|u| u.psi.clone()).collect();
            let gamma: Vec<Vec<f64>> = st.users.iter().map(|u| u.gamma.clone()).collect();
            let (g_hat, p_hat) = sweep(&model, &set, &subset, &noise, &psi).unwrap();
            assert!(rel_change(&p_hat, &psi) <= 1e-6, "snr {snr}: ψ change {:e}", rel_change(&p_hat, &psi));
            assert!(rel_change(&g_hat, &gamma) <= 1e-6, "snr {snr}: γ change {:e}", rel_change(&g_hat, &gamma));
            assert!(gamma.iter().flatten().all(|&g| g > 0.0 && g <= 1.0));
            assert!(psi.iter().flatten().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn different_initialisations_agree() {
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let noise = NoiseBank::new(2, 2, 500, 4);
    let opts = FixedPointOptions { tol: 1e-9, ..Default::default() };
    let set = np_set(&model, 10.0);
    let cold = solve_fixed_point(&model, &set, &[0, 1], &noise, &opts, None).unwrap();
    let big = with_psi(&cold, |_, p| 3.0 * p + 0.5);
    let small = with_psi(&cold, |i, p| 0.1 * p * (1 + i) as f64);
    let mi = asymptotic_conditional_mi(&model, &cold).unwrap();
    for init in [big, small] {
        let st = solve_fixed_point(&model, &set, &[0, 1], &noise, &opts, Some(&init)).unwrap();
        assert!(st.converged && st.warm_started);
        for (a, b) in st.users.iter().zip(&cold.users) {
            for (x, y) in a.psi.iter().zip(&b.psi) {
                assert!((x - y).abs() < 1e-6 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
        assert!((asymptotic_conditional_mi(&model, &st).unwrap() - mi).abs() < 1e-6);
    }
}

#[test]
fn warm_start_from_the_solution_returns_at_once() {
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let noise = NoiseBank::new(2, 2, 500, 5);
    let opts = FixedPointOptions::default();
    let set = np_set(&model, 5.0);
    let cold = solve_fixed_point(&model, &set, &[0, 1], &noise, &opts, None).unwrap();
    let warm = solve_fixed_point(&model, &set, &[0, 1], &noise, &opts, Some(&cold)).unwrap();
    assert!(warm.converged && warm.warm_started);
    assert!(warm.iterations <= 2, "{}", warm.iterations);
    // a state of another group is ignored
    let single = solve_fixed_point(&model, &set, &[0], &noise, &opts, Some(&cold)).unwrap();
    assert!(!single.warm_started);
}

#[test]
fn random_precoders_at_high_snr_converge() {
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let opts = FixedPointOptions::default();
    let mut rng = rng_from_seed(21);
    for trial in 0..6 {
        let p = model.stats().snr_to_power(0, 10.0 + 2.0 * trial as f64).unwrap();
        let bs = (0..2).map(|_| common::random_precoder(&mut rng, 2, p)).collect();
        let set = PrecoderSet::new(bs, vec![p, p], vec![1.0, 1.0]).unwrap();
        let noise = NoiseBank::new(2, 2, 500, 100 + trial);
        let ev = wsr_objective(&model, &set, &noise, &opts, None).unwrap();
        assert!(ev.converged(), "trial {trial}: residual {:e}", ev.max_residual());
    }
}

#[test]
fn more_power_never_lowers_np_sum_rate() {
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let noise = NoiseBank::new(2, 2, 2000, 6);
    let opts = FixedPointOptions::default();
    let mut last = 0.0;
    for snr in [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 30.0] {
        let ev = wsr_objective(&model, &np_set(&model, snr), &noise, &opts, None).unwrap();
        assert!(ev.converged());
        assert!(ev.value >= last - 1e-9 && ev.value <= 8.0 + 1e-9, "snr {snr}: {}", ev.value);
        last = ev.value;
    }
    assert!(last > 7.9);
}

#[test]
fn options_are_validated() {
    let model = common::example_model(ConstellationKind::Bpsk, 2);
    let set = np_set(&model, 0.0);
    let noise = NoiseBank::new(2, 2, 50, 1);
    let bad = FixedPointOptions { damping: 0.0, ..Default::default() };
    assert!(solve_fixed_point(&model, &set, &[0], &noise, &bad, None).is_err());
    assert!(solve_fixed_point(&model, &set, &[2], &noise, &FixedPointOptions::default(), None).is_err());
}

#[test]
fn near_tangent_map_is_crossed() {
    // After ten outer iterations at 10 dB this pool puts the solution far
    // beyond a region where the map almost touches the identity; secant
    // steps stall there, the relaxed fallback gets through.
    let model = common::example_model(ConstellationKind::Qpsk, 4);
    let p = model.stats().snr_to_power(0, 10.0).unwrap();
    let cfg = OptimizerConfig { n_starts: 1, max_outer: 10, ..Default::default() };
    let set = optimize(&model, &[p, p], &[1.0, 1.0], &cfg, None).unwrap().precoders;
    let noise = NoiseBank::new(2, 2, 500, derive_seed(derive_seed(cfg.seed, 0), 10));
    let opts = FixedPointOptions::default();
    let st = solve_fixed_point(&model, &set, &[0, 1], &noise, &opts, None).unwrap();
    assert!(st.converged, "residual {:e} after {} sweeps", st.residual, st.iterations);
    let plain = FixedPointOptions { anderson_depth: 0, relax_after: usize::MAX, max_iter: 5000, ..opts };
    let reference = solve_fixed_point(&model, &set, &[0, 1], &noise, &plain, None).unwrap();
    assert!(reference.converged);
    let a = asymptotic_conditional_mi(&model, &st).unwrap();
    let b = asymptotic_conditional_mi(&model, &reference).unwrap();
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}
