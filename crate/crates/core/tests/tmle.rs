use ipm_tmle::demography::{empirical_model, evaluate_target};
use ipm_tmle::simgen::{Design, IdahoParams};
use ipm_tmle::tmle::run_cv_tmle;
use ipm_tmle::{FitConfig, IpmError, ModelSpec, SimSpec, TargetKind, TmleConfig};

fn parametric() -> ModelSpec {
    ModelSpec::Parametric(FitConfig::default())
}

#[test]
fn repeated_runs_are_identical() {
    let data = SimSpec::basic(400, 15, 21).generate(0).unwrap();
    let cfg = TmleConfig { seed: 8, ..Default::default() };
    let a = run_cv_tmle(&data, &parametric(), &cfg).unwrap();
    let b = run_cv_tmle(&data, &parametric(), &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_cv_tmle(&data, &parametric(), &TmleConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.1.fold_assignments, c.1.fold_assignments);
}

#[test]
fn infinite_tolerance_stops_at_the_plug_in() {
    let data = SimSpec::basic(400, 15, 22).generate(0).unwrap();
    let cfg = TmleConfig { epsilon_tol: f64::INFINITY, ..Default::default() };
    let (est, state) = run_cv_tmle(&data, &parametric(), &cfg).unwrap();
    assert!(state.converged);
    assert_eq!(state.iterations.len(), 1);
    let plug_in: Vec<f64> = state
        .initial_models
        .iter()
        .flatten()
        .map(|m| evaluate_target(TargetKind::Lambda, m).unwrap())
        .collect();
    let avg = plug_in.iter().sum::<f64>() / plug_in.len() as f64;
    assert!((est.estimate - avg).abs() < 1e-12);
    assert_eq!(state.models, state.initial_models);
}

#[test]
fn targeting_an_empirical_fit_on_its_own_sample_is_a_no_op() {
    // the empirical model already solves its own score equations
    let spec = SimSpec::from_json(r#"{"design": "rotifer_like", "n": 3000, "seed": 4}"#).unwrap();
    let data = spec.generate(0).unwrap();
    for target in [TargetKind::Lambda, TargetKind::Elasticity] {
        let cfg = TmleConfig { target, cross_fit: false, n_folds: 1, ..Default::default() };
        let (est, state) = run_cv_tmle(&data, &ModelSpec::Empirical, &cfg).unwrap();
        let plug_in = evaluate_target(target, &empirical_model(&data).unwrap()).unwrap();
        assert!(state.converged);
        let (e1, e2) = state.epsilon_history[0];
        assert!(e1.abs() < 1e-6 && e2.abs() < 1e-6, "{e1} {e2}");
        assert!((est.estimate - plug_in).abs() < 1e-10 * plug_in.abs());
        assert!(state.last().mean_psi_growth.abs() < 1e-10);
        assert!(state.last().mean_psi_fecundity.abs() < 1e-10);
    }
}

#[test]
fn targeting_shrinks_the_influence_mean() {
    let data = SimSpec::basic(600, 15, 23).generate(0).unwrap();
    for target in [TargetKind::Lambda, TargetKind::Elasticity] {
        let cfg = TmleConfig { target, max_iterations: 10, ..Default::default() };
        let (est, state) = run_cv_tmle(&data, &parametric(), &cfg).unwrap();
        let first = state.initial();
        let last = state.last();
        let m0 = (first.mean_psi_growth + first.mean_psi_fecundity).abs();
        let m1 = (last.mean_psi_growth + last.mean_psi_fecundity).abs();
        assert!(m1 <= m0 + 1e-12, "{target:?}: {m0} -> {m1}");
        assert!(m1 < 0.1 * est.std_error, "{target:?}: {m1} vs se {}", est.std_error);
        assert!(est.ci_low < est.estimate && est.estimate < est.ci_high);
        assert_eq!(est.psi_validation.len(), data.len());
    }
}

#[test]
fn log_stochastic_growth_needs_environments() {
    let data = SimSpec::basic(100, 10, 1).generate(0).unwrap();
    let cfg = TmleConfig { target: TargetKind::LogLambdaS, ..Default::default() };
    assert!(matches!(run_cv_tmle(&data, &parametric(), &cfg), Err(IpmError::EnvironmentRequired)));

    let spec = SimSpec { design: Design::IdahoLike(IdahoParams::illustrative()), n: 800, n_classes: 15, seed: 2, truth: Default::default() };
    let data = spec.generate(0).unwrap();
    let (est, state) = run_cv_tmle(&data, &parametric(), &cfg).unwrap();
    assert!(est.estimate.is_finite() && est.std_error > 0.0);
    assert!(!state.iterations.is_empty());
}
