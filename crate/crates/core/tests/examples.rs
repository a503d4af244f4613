mod common;

use common::{gauss_solve, max_dist, Chain};
use eqcausal::catalog::{self, load};
use eqcausal::pipeline::{DiagramSettings, Status};
use eqcausal::scm::{Body, Lemma1Settings, ScmError, ScmSettings, SolvabilityMethod, StructuralSettings};
use eqcausal::{
    apply_hard_intervention, check_lemma1, check_structural_solvability, check_theorem1, derive_lee, induce_scm,
    intervene_lee, intervene_scm, probe_stability, solve_lee, solve_scm, verify_diagram, InterventionSpec, SolveSettings,
    SolveVerdict,
};

/// Bundled models whose equations admit no structural model.
const NO_SCM: [&str; 2] = ["lotka_volterra", "labeling_b"];

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn two_mass_chain_structural_function() {
    let e = derive_lee(&load("mass_spring_d2").unwrap());
    let scm = induce_scm(&e, &ScmSettings::default()).unwrap();
    let h1 = scm.eval_fn(0, &[0.0, 0.0, 2.5, 0.0]).unwrap();
    assert!((h1[0] - 1.25).abs() < 1e-12 && h1[1].abs() < 1e-12, "{h1:?}");
    assert_eq!(scm.functions()[0].parents.iter().copied().collect::<Vec<_>>(), vec![1]);
    assert!(matches!(scm.functions()[0].body, Body::Closed(_)));
}

#[test]
fn two_mass_chain_equilibrium() {
    let m = load("mass_spring_d2").unwrap();
    let lee = solve_lee(&derive_lee(&m), &SolveSettings::default()).unwrap();
    assert_eq!(lee.verdict, SolveVerdict::Unique);
    assert!(max_dist(lee.unique_solution().unwrap(), &[1.0, 0.0, 2.0, 0.0]) < 1e-8);
    let ode = probe_stability(&m, &Default::default()).unwrap();
    assert!(ode.stable);
    assert!(max_dist(ode.point.as_ref().unwrap(), &[1.0, 0.0, 2.0, 0.0]) < 1e-6);
}

#[test]
fn two_mass_chain_intervened() {
    // do(X2 = (2.5, 0)) moves the free mass to the midpoint of wall and clamp.
    let m = load("mass_spring_d2").unwrap();
    let spec = InterventionSpec::hard([("X2", vec![2.5, 0.0])]);
    let scm = intervene_scm(&induce_scm(&derive_lee(&m), &ScmSettings::default()).unwrap(), &spec).unwrap();
    let r = solve_scm(&scm, &SolveSettings::default()).unwrap();
    assert!(max_dist(r.unique_solution().unwrap(), &[1.25, 0.0, 2.5, 0.0]) < 1e-10);
    assert!(verify_diagram(&m, &spec, &DiagramSettings::default()).unwrap().passed());
}

#[test]
fn predator_prey_equations_and_solution() {
    let m = load("lotka_volterra").unwrap();
    let e = derive_lee(&m);
    let text: Vec<String> = e.equations().iter().flatten().map(ToString::to_string).collect();
    assert_eq!(text, ["X1 * (th11 - th12 * X2)", "-X2 * (th22 - th21 * X1)"]);
    for xi in [1.5, 2.0, 3.0] {
        let spec = InterventionSpec::hard([("X2", vec![xi])]);
        let r = solve_lee(&intervene_lee(&e, &spec).unwrap(), &SolveSettings::default()).unwrap();
        assert!(max_dist(r.unique_solution().unwrap(), &[0.0, xi]) < 1e-8, "{xi}: {r:?}");
    }
}

#[test]
fn predator_prey_theorem1_for_clamped_predators() {
    let m = load("lotka_volterra").unwrap();
    let spec = InterventionSpec::hard([("X2", vec![2.0])]);
    let r = check_theorem1(&m, &spec, &Default::default()).unwrap();
    assert!(r.structural_equal && r.passed, "{r:?}");
    assert!(max_dist(r.ode_equilibrium.as_ref().unwrap(), &[0.0, 2.0]) < 1e-6);
}

#[test]
fn predator_prey_has_no_structural_model() {
    let e = derive_lee(&load("lotka_volterra").unwrap());
    let report = check_structural_solvability(&e, &StructuralSettings::default()).unwrap();
    let fail = report.first_failure().unwrap();
    assert_eq!(fail.atom, "X1");
    assert_eq!(fail.method, SolvabilityMethod::AffineSingular);
    let witness = fail.witness.as_ref().unwrap();
    assert!((witness["X2"][0] - 1.0).abs() < 1e-8, "{witness:?}");
    assert!(matches!(induce_scm(&e, &ScmSettings::default()), Err(ScmError::NotStructurallySolvable { .. })));
    let d = verify_diagram(&load("lotka_volterra").unwrap(), &InterventionSpec::hard([("X2", vec![2.0])]), &Default::default())
        .unwrap();
    assert_eq!(d.edge("lee->scm").unwrap().status, Status::Fail);
    assert!(!d.passed());
}

#[test]
fn cubic_cascade_matches_scalar_roots() {
    let m = load("cubic_cascade").unwrap();
    let x1 = bisect(|x| 1.5 - x - x.powi(3), -2.0, 2.0);
    let x2 = bisect(|x| x1 - x - x.powi(3), -2.0, 2.0);
    let x3 = x2.sin() / 2.0;
    let e = derive_lee(&m);
    let lee = solve_lee(&e, &SolveSettings::default()).unwrap();
    assert!(max_dist(lee.unique_solution().unwrap(), &[x1, x2, x3]) < 1e-8);
    let scm = induce_scm(&e, &ScmSettings::default()).unwrap();
    assert!(scm.graph().is_acyclic());
    assert!(matches!(scm.functions()[0].body, Body::Implicit(_)));
    assert!(matches!(scm.functions()[2].body, Body::Closed(_)));
    let sol = solve_scm(&scm, &SolveSettings::default()).unwrap();
    assert!(max_dist(sol.unique_solution().unwrap(), &[x1, x2, x3]) < 1e-8);
}

#[test]
fn lemma1_on_every_bundled_intervention() {
    for (name, _) in catalog::BUNDLED {
        if NO_SCM.contains(name) {
            continue;
        }
        let e = derive_lee(&load(name).unwrap());
        for spec in catalog::interventions(name) {
            let r = check_lemma1(&e, &spec, &Lemma1Settings::default()).unwrap();
            assert!(r.passed, "{name} {spec}: {r:?}");
        }
    }
}

#[test]
fn bundled_diagrams_pass_exactly_when_a_structural_model_exists() {
    for (name, _) in catalog::BUNDLED {
        let m = load(name).unwrap();
        for spec in catalog::interventions(name) {
            let r = verify_diagram(&m, &spec, &DiagramSettings::default()).unwrap();
            assert_eq!(r.passed(), !NO_SCM.contains(name), "{name} {spec}: {r:#?}");
            if NO_SCM.contains(name) {
                assert_eq!(r.edge("lee->scm").unwrap().status, Status::Fail);
            }
        }
    }
}

#[test]
fn chain_equilibrium_against_dense_solve() {
    // Force balance for three unit masses between walls at 0 and 6: Q_i = 1.5 i.
    let chain = Chain::uniform(3, 6.0);
    let lee = solve_lee(&derive_lee(&chain.model()), &SolveSettings::default()).unwrap();
    let q = gauss_solve(
        vec![vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]],
        vec![0.0, 0.0, 6.0],
    );
    assert!(max_dist(&q, &[1.5, 3.0, 4.5]) < 1e-12);
    assert!(max_dist(lee.unique_solution().unwrap(), &Chain::full_state(&q)) < 1e-8);
}

#[test]
fn hard_intervention_rejects_unknown_targets_and_wrong_arity() {
    let m = load("mass_spring_d2").unwrap();
    assert!(apply_hard_intervention(&m, &InterventionSpec::hard([("X9", vec![0.0, 0.0])])).is_err());
    assert!(apply_hard_intervention(&m, &InterventionSpec::hard([("X1", vec![0.0])])).is_err());
}

#[test]
fn reports_are_deterministic() {
    let m = load("nonlinear_feedback").unwrap();
    let spec = InterventionSpec::hard([("X2", vec![0.3])]);
    let settings = DiagramSettings::default();
    let a = serde_json::to_string(&verify_diagram(&m, &spec, &settings).unwrap()).unwrap();
    let b = serde_json::to_string(&verify_diagram(&m, &spec, &settings).unwrap()).unwrap();
    assert_eq!(a, b);
    let p1 = serde_json::to_string(&probe_stability(&m, &Default::default()).unwrap()).unwrap();
    let p2 = serde_json::to_string(&probe_stability(&m, &Default::default()).unwrap()).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn momenta_vanish_at_chain_equilibria() {
    let m = load("mass_spring_d4").unwrap();
    for spec in catalog::interventions("mass_spring_d4") {
        let r = check_theorem1(&m, &spec, &Default::default()).unwrap();
        let x = r.ode_equilibrium.unwrap();
        for p in x.iter().skip(1).step_by(2) {
            assert!(p.abs() <= 1e-8, "{spec}: {x:?}");
        }
    }
}

#[test]
fn acyclic_substitution_is_exact() {
    let scm = induce_scm(&derive_lee(&load("cubic_cascade").unwrap()), &ScmSettings::default()).unwrap();
    let sol = solve_scm(&scm, &SolveSettings::default()).unwrap();
    let x = sol.unique_solution().unwrap();
    for a in 0..3 {
        let h = scm.eval_fn(a, x).unwrap();
        assert!((h[0] - x[a]).abs() <= 4.0 * f64::EPSILON, "atom {a}: {} vs {}", h[0], x[a]);
    }
}
