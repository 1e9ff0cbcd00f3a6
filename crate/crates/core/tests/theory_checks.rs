use msrl_core::theory::{
    check_consistency_bounds, check_entropy_change, check_rownorm_bound, check_translation_invariance,
    lipschitz_constant, run_all, simulate_attractivity, TheoryConfig,
};

#[test]
fn lipschitz_constant_examples() {
    assert!((lipschitz_constant((-1.0f64).exp(), 2).unwrap() - 2.0).abs() < 1e-15);
    assert!((lipschitz_constant(1e-8, 10).unwrap() - (1.0 + 8.0 * 10f64.ln())).abs() < 1e-12);
    assert!(lipschitz_constant(0.0, 3).is_err());
    assert!(lipschitz_constant(0.5, 3).is_err());
}

#[test]
fn zero_radius_checks_are_exact() {
    let [entropy, spread, _] = check_consistency_bounds(200, 5, 4, 0.0, 3, 1.0);
    assert!(entropy.pass && spread.pass);
    assert_eq!(spread.max_violation, 0.0);
    assert!(simulate_attractivity(8, 0.0, 20, 4, 3).pass);
    let change = check_entropy_change(6, 0.0, 20, 4, 3, 1.0);
    assert!(change.pass);
}

#[test]
fn single_view_consistency_is_trivial() {
    let [entropy, spread, _] = check_consistency_bounds(100, 4, 1, 0.2, 9, 1.0);
    assert!(entropy.pass && spread.pass);
}

#[test]
fn reference_sized_checks_pass() {
    assert!(check_translation_invariance(10_000, 10, 0).pass);
    assert!(check_rownorm_bound(10_000, 64, 10, 0).pass);
    let [a, b, _] = check_consistency_bounds(10_000, 5, 4, 0.1, 0, 1.0);
    assert!(a.pass && a.violations == 0);
    assert!(b.pass && b.violations == 0);
    let attract = simulate_attractivity(64, 0.05, 1000, 5, 0);
    assert!(attract.pass, "{}", attract.note);
    assert!(check_entropy_change(16, 0.05, 1000, 5, 0, 1.0).pass);
}

#[test]
fn shrunken_constant_is_detected() {
    let report = run_all(&TheoryConfig {
        trials: 500,
        seed: 1,
        q_scale: 0.1,
    });
    assert!(!report.all_pass());
    let failing: Vec<_> = report.checks.iter().filter(|c| c.gating && !c.pass).collect();
    assert!(failing.iter().all(|c| c.worst_trial.is_some()));
}

#[test]
fn report_is_reproducible_and_tabulates() {
    let cfg = TheoryConfig { trials: 300, seed: 4, q_scale: 1.0 };
    let a = run_all(&cfg);
    assert_eq!(a, run_all(&cfg));
    assert!(a.all_pass());
    assert_eq!(a.to_csv().lines().count(), a.checks.len() + 1);
    assert!(a.check("row-norm amplification").is_some());
    assert!(a.to_table().contains("pass"));
}
