//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::{max_dist, random_polynomial_model, rng, Chain};
use eqcausal::catalog::{self, load};
use eqcausal::dynamics::{eigenvalues, probe_stability, IntegrationSettings, ProbeSettings, Verdict};
use eqcausal::lee::derive_lee;
use eqcausal::pipeline::{ComparisonKind, DiagramSettings, Status};
use eqcausal::scm::{induce_scm, induce_scm_unchecked, ScmSettings};
use eqcausal::{
    apply_hard_intervention, apply_soft_intervention, detect_equilibrium, graph_of, integrate, intervene_lee, jacobian,
    solve_lee, solve_scm, verify_diagram, InterventionSpec, SolveSettings, SolveVerdict,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let m = load("lotka_volterra").unwrap();
    let r = solve_lee(&derive_lee(&m), &SolveSettings::default()).map_err(|e| e.to_string())?;
    ensure(r.verdict == SolveVerdict::Multiple && r.solutions.len() == 2, || format!("clusters {:?}", r.solutions))?;
    for target in [[0.0, 0.0], [1.0, 1.0]] {
        let d = r.distance_to(&target).unwrap();
        ensure(d <= 1e-6, || format!("{target:?} off by {d:e}"))?;
    }
    let ev0 = eigenvalues(&jacobian(&m, &[0.0, 0.0]).unwrap());
    let ev1 = eigenvalues(&jacobian(&m, &[1.0, 1.0]).unwrap());
    let close = |e: &eqcausal::dynamics::Eigenvalue, re: f64, im: f64| (e.re - re).abs() <= 1e-4 && (e.im - im).abs() <= 1e-4;
    ensure(close(&ev0[0], -1.0, 0.0) && close(&ev0[1], 1.0, 0.0), || format!("spectrum at origin {ev0:?}"))?;
    ensure(close(&ev1[0], 0.0, -1.0) && close(&ev1[1], 0.0, 1.0), || format!("spectrum at (1,1) {ev1:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("clusters (0,0), (1,1); spectra {{-1, 1}} and {{-i, i}}; {elapsed:.2?}"))
}

fn criterion2() -> Outcome {
    let m = load("lotka_volterra").unwrap();
    let integration = IntegrationSettings { t_max: 200.0, ..Default::default() };
    let probe = ProbeSettings { n_samples: 16, seed: 7, integration: integration.clone(), ..Default::default() };
    let r = probe_stability(&m, &probe).map_err(|e| e.to_string())?;
    let oscillatory = r.samples.iter().filter(|s| s.verdict == Verdict::Oscillatory).count();
    let converged = r.samples.iter().filter(|s| s.verdict == Verdict::Converged).count();
    ensure(!r.stable && oscillatory > 0 && converged == 0, || {
        format!("stable={} oscillatory={oscillatory} converged={converged}", r.stable)
    })?;
    let traj = integrate(&m, &integration).map_err(|e| e.to_string())?;
    let min = traj.residuals.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(min > 1e-8, || format!("residual dropped to {min:e}"))?;
    let single = detect_equilibrium(&traj, &m, 1e-8);
    ensure(single.verdict == Verdict::Oscillatory, || format!("trajectory from init: {:?}", single.verdict))?;
    Ok(format!("not stable; {oscillatory}/16 samples oscillatory; min residual {min:.3e}"))
}

fn criterion3() -> Outcome {
    let m = load("lotka_volterra").unwrap();
    let spec = InterventionSpec::hard([("X2", vec![2.0])]);
    let d = apply_hard_intervention(&m, &spec).unwrap();
    let r = probe_stability(&d, &ProbeSettings { n_samples: 16, seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let p = r.point.clone().ok_or_else(|| format!("not stable: {:?}", r.verdict))?;
    let dev = max_dist(&p, &[0.0, 2.0]);
    ensure(r.stable && dev <= 1e-6, || format!("limit {p:?}"))?;
    let settings = DiagramSettings { premise_samples: 0, ..Default::default() };
    let report = verify_diagram(&m, &spec, &settings).map_err(|e| e.to_string())?;
    let c = report.comparison("theorem1-solution").unwrap();
    ensure(c.status == Status::Pass, || format!("theorem1-solution: {c:?}"))?;
    Ok(format!("16/16 samples reach (0, 2) within {dev:.1e}; theorem1-solution deviation {:.1e}", c.deviation.unwrap()))
}

/// Root of `-x + kappa (2 - x)` by bisection on [0, 2].
fn soft_oracle(kappa: f64) -> f64 {
    let g = |x: f64| -x + kappa * (2.0 - x);
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion4() -> Outcome {
    let m = load("lotka_volterra").unwrap();
    let mut gaps = Vec::new();
    let mut x2_100 = f64::NAN;
    for kappa in [10.0, 100.0, 1000.0] {
        let soft = apply_soft_intervention(&m, &InterventionSpec::soft([("X2", vec![2.0])], kappa)).unwrap();
        let traj = integrate(&soft, &IntegrationSettings::default()).map_err(|e| e.to_string())?;
        let eq = detect_equilibrium(&traj, &soft, 1e-8);
        let p = eq.point.ok_or_else(|| format!("kappa={kappa}: {:?}", eq.verdict))?;
        ensure(p[0].abs() <= 1e-6, || format!("kappa={kappa}: X1={}", p[0]))?;
        ensure((p[1] - soft_oracle(kappa)).abs() <= 1e-6, || format!("kappa={kappa}: X2={}", p[1]))?;
        if kappa == 100.0 {
            x2_100 = p[1];
        }
        gaps.push((p[1] - 2.0).abs());
    }
    ensure(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] <= gaps[0] / 10.0, || format!("gaps {gaps:?}"))?;
    ensure((x2_100 - 200.0 / 101.0).abs() <= 1e-6, || format!("X2(100) = {x2_100}"))?;
    Ok(format!("|X2 - 2| = {:.3e}, {:.3e}, {:.3e}; X2(100) = {x2_100:.7}", gaps[0], gaps[1], gaps[2]))
}

fn check_chain_diagram(chain: &Chain, atom: usize, xi: f64, settings: &DiagramSettings) -> Result<f64, String> {
    let m = chain.model();
    let spec = InterventionSpec::hard([(format!("X{atom}"), vec![xi, 0.0])]);
    let r = verify_diagram(&m, &spec, settings).map_err(|e| e.to_string())?;
    for c in &r.comparisons {
        ensure(c.status == Status::Pass, || format!("{chain:?} do(X{atom}={xi}): {} {:?}", c.name, c))?;
        if c.kind == ComparisonKind::Structural && c.name == "lemma1-structural" {
            ensure(r.lemma1.closed_forms_equal == Some(true), || "closed forms not compared exactly".into())?;
        }
    }
    ensure(r.passed(), || format!("verdict {:?}", r.verdict))?;
    let oracle = Chain::full_state(&chain.equilibrium(&[(atom, xi)]));
    let ode = r.theorem1.ode_equilibrium.clone().ok_or("intervened dynamics did not converge")?;
    let dev = max_dist(&ode, &oracle);
    ensure(dev <= 1e-5, || format!("equilibrium off the linear solve by {dev:e}"))?;
    Ok(r.comparisons.iter().filter_map(|c| c.deviation).fold(0.0, f64::max))
}

fn criterion5() -> Outcome {
    let settings = DiagramSettings::default();
    let start = Instant::now();
    let worst = check_chain_diagram(&Chain::uniform(4, 5.0), 2, 1.7, &settings)?;
    let first = start.elapsed();
    ensure(first < Duration::from_secs(30), || format!("took {first:?}"))?;
    let mut r = rng(5);
    let mut worst_random: f64 = 0.0;
    for _ in 0..10 {
        let chain = Chain::random(4, &mut r);
        let atom = r.random_range(1..=4);
        let xi = r.random_range(0.0..chain.length);
        worst_random = worst_random.max(check_chain_diagram(&chain, atom, xi, &settings)?);
    }
    Ok(format!(
        "D=4 do(X2=(1.7,0)) passes in {first:.2?} (max deviation {worst:.1e}); 10 random draws pass (max deviation {worst_random:.1e})"
    ))
}

fn criterion6() -> Outcome {
    let chain = Chain { d: 4, k: vec![0.7, 1.3, 2.0, 0.9, 1.6], l: vec![1.1, 0.8, 1.4, 0.6, 1.2], b: vec![1.0; 4], m: vec![1.0; 4], length: 7.0 };
    let e = derive_lee(&chain.model());
    let implicit = induce_scm(&e, &ScmSettings { closed_forms: false, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut r = rng(6);
    let (mut derived_dev, mut printed_dev, mut oracle_dev): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (k, l, d) = (&chain.k, &chain.l, chain.d);
    for _ in 0..20 {
        let q: Vec<f64> = (0..d).map(|_| r.random_range(0.0..chain.length)).collect();
        let x = Chain::full_state(&q);
        for i in 1..=d {
            let h = implicit.eval_fn(i - 1, &x).map_err(|e| e.to_string())?;
            let q_prev = if i > 1 { q[i - 2] } else { 0.0 };
            let q_next = if i < d { q[i] } else { chain.length };
            // Every other mass clamped at the grid values.
            let clamps: Vec<(usize, f64)> = (1..=d).filter(|&j| j != i).map(|j| (j, q[j - 1])).collect();
            let solved = chain.equilibrium(&clamps)[i - 1];
            let numerator = k[i] * (q_next - l[i]) + k[i - 1] * (q_prev + l[i - 1]);
            let derived = numerator / (k[i - 1] + k[i]);
            oracle_dev = oracle_dev.max((h[0] - solved).abs()).max(h[1].abs());
            derived_dev = derived_dev.max((h[0] - derived).abs());
            if i < d {
                printed_dev = printed_dev.max((h[0] - numerator / (k[i] + k[i + 1])).abs());
            }
        }
    }
    ensure(oracle_dev <= 1e-8, || format!("implicit h deviates from the linear solve by {oracle_dev:e}"))?;
    let verdict = match (derived_dev <= 1e-8, printed_dev <= 1e-8) {
        (true, false) => "derived denominator k[i-1] + k[i] agrees; printed k[i] + k[i+1] does not",
        (false, true) => "printed denominator k[i] + k[i+1] agrees; derived k[i-1] + k[i] does not",
        (true, true) => "both denominators agree on this draw",
        (false, false) => return Err(format!("neither formula agrees (derived {derived_dev:e}, printed {printed_dev:e})")),
    };
    Ok(format!(
        "{verdict} (max deviation derived {derived_dev:.1e}, printed {printed_dev:.1e}; linear-solve oracle {oracle_dev:.1e})"
    ))
}

fn criterion7() -> Outcome {
    let mut r = rng(7);
    for tag in 0..50 {
        let m = random_polynomial_model(&mut r, tag);
        let scm = induce_scm_unchecked(&derive_lee(&m), &ScmSettings::default()).map_err(|e| e.to_string())?;
        for f in scm.functions() {
            ensure(!f.parents.contains(&f.target), || format!("model {tag}: self-loop on atom {}", f.target))?;
        }
        ensure((0..m.atoms().len()).all(|a| !scm.graph().has_self_loop(a)), || format!("model {tag}: graph self-loop"))?;

        let n = m.atoms().len();
        let targets: BTreeSet<usize> = (0..n).filter(|_| r.random_bool(0.4)).collect();
        let spec = InterventionSpec::hard(targets.iter().map(|&a| {
            let atom = &m.atoms()[a];
            (atom.name.clone(), atom.members.iter().map(|_| r.random_range(-2.0..2.0)).collect::<Vec<f64>>())
        }));
        let once = apply_hard_intervention(&m, &spec).map_err(|e| e.to_string())?;
        let twice = apply_hard_intervention(&once, &spec).map_err(|e| e.to_string())?;
        ensure(once == twice, || format!("model {tag}: intervention not idempotent"))?;
        let original = graph_of(&m);
        let expected: BTreeSet<(usize, usize)> =
            original.edges().iter().copied().filter(|(_, to)| !targets.contains(to)).collect();
        ensure(graph_of(&once).edges() == &expected, || format!("model {tag}: surgery law violated for {spec}"))?;
    }
    Ok("50 random models: no self-loops, surgery law and idempotence hold".into())
}

fn criterion8() -> Outcome {
    let mut checked = Vec::new();
    let mut r = rng(8);
    for (name, _) in catalog::BUNDLED {
        let e = derive_lee(&load(name).unwrap());
        let Ok(scm) = induce_scm(&e, &ScmSettings::default()) else { continue };
        let g = e.compile().map_err(|e| e.to_string())?;
        let layout = e.layout();
        for _ in 0..50 {
            let x: Vec<f64> = (0..layout.n_vars()).map(|_| r.random_range(-3.0..3.0)).collect();
            for (a, atom) in layout.atoms().iter().enumerate() {
                let rows: Vec<usize> = equation_rows(&e, a);
                // Random state: both sides of the biconditional agree.
                let h = scm.eval_fn(a, &x).map_err(|e| e.to_string())?;
                let lhs = rows.iter().all(|&k| g.component(k).eval(&x).unwrap().abs() <= 1e-8);
                let rhs = atom.members.iter().zip(&h).all(|(&v, hv)| (x[v] - hv).abs() <= 1e-8);
                ensure(lhs == rhs, || format!("{name}: biconditional fails for {} at {x:?}", atom.name))?;
                // Same state with the atom moved onto its structural function.
                let mut y = x.clone();
                for (&v, hv) in atom.members.iter().zip(&h) {
                    y[v] = *hv;
                }
                let worst = rows.iter().map(|&k| g.component(k).eval(&y).unwrap().abs()).fold(0.0, f64::max);
                ensure(worst <= 1e-8, || format!("{name}: g_{} = {worst:e} on X_i = h_i", atom.name))?;
            }
        }
        let lee = solve_lee(&e, &SolveSettings::default()).map_err(|e| e.to_string())?;
        let sol = solve_scm(&scm, &SolveSettings::default()).map_err(|e| e.to_string())?;
        let dist = eqcausal::scm::solution_set_distance(&lee, &sol);
        ensure(dist <= 1e-7, || format!("{name}: solution sets differ ({} vs {} clusters, {dist:e})", lee.solutions.len(), sol.solutions.len()))?;
        checked.push(*name);
    }
    ensure(checked.len() >= 4, || format!("only {checked:?} induced"))?;
    Ok(format!("biconditional and solution sets agree on {}", checked.join(", ")))
}

/// Positions of atom `a`'s residuals in the concatenated residual vector.
fn equation_rows(e: &eqcausal::Lee, a: usize) -> Vec<usize> {
    let offset: usize = e.equations()[..a].iter().map(Vec::len).sum();
    (offset..offset + e.equations()[a].len()).collect()
}

fn criterion9() -> Outcome {
    let a = derive_lee(&load("labeling_a").unwrap());
    let b = derive_lee(&load("labeling_b").unwrap());
    let unlabeled = |e: &eqcausal::Lee| e.equations().iter().flatten().map(ToString::to_string).collect::<BTreeSet<_>>();
    ensure(unlabeled(&a) == unlabeled(&b), || "unlabeled equation sets differ".into())?;
    let spec = InterventionSpec::hard([("X2", vec![3.0])]);
    let solve = |e: &eqcausal::Lee| -> Result<Vec<f64>, String> {
        let r = solve_lee(&intervene_lee(e, &spec).unwrap(), &SolveSettings::default()).map_err(|e| e.to_string())?;
        r.unique_solution().map(<[f64]>::to_vec).ok_or_else(|| format!("{:?}", r.verdict))
    };
    let (sa, sb) = (solve(&a)?, solve(&b)?);
    ensure(max_dist(&sa, &[1.0, 3.0]) <= 1e-8 && max_dist(&sb, &[3.0, 3.0]) <= 1e-8, || format!("{sa:?} {sb:?}"))?;
    ensure(max_dist(&sa, &sb) > 1.0, || "labelings gave the same intervened solution".into())?;
    Ok(format!("do(X2=3): labeling a gives {sa:?}, labeling b gives {sb:?}"))
}

fn main() {
    let criteria: [(u8, fn() -> Outcome); 9] = [
        (1, criterion1),
        (2, criterion2),
        (3, criterion3),
        (4, criterion4),
        (5, criterion5),
        (6, criterion6),
        (7, criterion7),
        (8, criterion8),
        (9, criterion9),
    ];
    let mut failed = 0;
    for (n, run) in criteria {
        match run() {
            Ok(detail) => println!("criterion {n}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
