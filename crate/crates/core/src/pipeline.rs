//! End-to-end check that deriving representations and intervening commute.
//!
//! Starting from a model and a hard intervention, the diagram is
//!
//! ```text
//! ODE  --derive-->  LEE  --induce-->  SCM
//!  |do               |do               |do
//! ODE' --derive-->  LEE' --induce-->  SCM'
//! ```
//!
//! and each square is compared structurally, functionally, and by solutions.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    apply_hard_intervention, detect_equilibrium, integrate, probe_stability, IntegrationSettings, ProbeSettings,
};
use crate::intervention::InterventionSpec;
use crate::lee::{check_theorem1, derive_lee, intervene_lee, LeeError, Theorem1Report, Theorem1Settings};
use crate::model::Model;
use crate::newton::{max_dist, SolveSettings};
use crate::scm::{
    check_lemma1, induce_scm, intervene_scm, missing_self_dependence, solve_scm, Lemma1Report, Lemma1Settings,
    ScmError, ScmSettings, StructuralSettings,
};

pub const CAVEAT: &str = "Structural stability of the original and intervened dynamics is a premise of the \
diagram. It is checked only by sampling initial states and clamp values, so a pass certifies commutation \
relative to sampled premises.";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramSettings {
    pub solve: SolveSettings,
    pub integration: IntegrationSettings,
    pub xi_samples: usize,
    pub grid_points: usize,
    /// Tolerance for comparing structural functions.
    pub functional_tol: f64,
    /// Tolerance for comparing algebraic solutions with each other.
    pub solution_tol: f64,
    /// Tolerance for comparing integrated equilibria with algebraic solutions.
    pub dynamic_tol: f64,
    /// Initial states per stability probe of the premises; 0 skips probing.
    pub premise_samples: usize,
}

impl Default for DiagramSettings {
    fn default() -> Self {
        DiagramSettings {
            solve: SolveSettings::default(),
            integration: IntegrationSettings::default(),
            xi_samples: 8,
            grid_points: 20,
            functional_tol: 1e-8,
            solution_tol: 1e-8,
            dynamic_tol: 1e-5,
            premise_samples: 4,
        }
    }
}

impl DiagramSettings {
    fn scm(&self) -> ScmSettings {
        ScmSettings {
            structural: StructuralSettings { xi_samples: self.xi_samples, solve: self.solve.clone() },
            closed_forms: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Not applicable, e.g. the intervened dynamics did not converge.
    Skipped,
}

impl Status {
    fn from_bool(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub name: &'static str,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonKind {
    Structural,
    Functional,
    Solution,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: &'static str,
    pub kind: ComparisonKind,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Premises {
    /// Sampled stability of the original dynamics, when probed.
    pub observational_stable: Option<bool>,
    pub intervened_stable: Option<bool>,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagramVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramReport {
    pub model: String,
    pub intervention: String,
    pub edges: Vec<Edge>,
    pub comparisons: Vec<Comparison>,
    pub premises: Premises,
    pub theorem1: Theorem1Report,
    pub lemma1: Lemma1Report,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub verdict: DiagramVerdict,
    pub caveat: &'static str,
}

impl DiagramReport {
    pub fn passed(&self) -> bool {
        self.verdict == DiagramVerdict::Pass
    }

    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    pub fn edge(&self, name: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.name == name)
    }
}

fn edge<T>(name: &'static str, result: Result<T, &String>) -> Edge {
    Edge { name, status: Status::from_bool(result.is_ok()), detail: result.err().cloned() }
}

/// Runs every square of the diagram for one hard intervention.
/// Structural-solvability failures show up as failed edges and
/// comparisons, not as errors.
pub fn verify_diagram(m: &Model, s: &InterventionSpec, settings: &DiagramSettings) -> Result<DiagramReport, LeeError> {
    let e = derive_lee(m);
    let intervened_model = apply_hard_intervention(m, s)?;
    let intervened_lee = intervene_lee(&e, s)?;
    let scm_settings = settings.scm();

    let theorem1 = check_theorem1(
        m,
        s,
        &Theorem1Settings {
            solve: settings.solve.clone(),
            integration: settings.integration.clone(),
            dynamic_tol: settings.dynamic_tol,
        },
    )?;
    let lemma1 = check_lemma1(
        &e,
        s,
        &Lemma1Settings {
            scm: scm_settings.clone(),
            solve: settings.solve.clone(),
            grid_points: settings.grid_points,
            functional_tol: settings.functional_tol,
            solution_tol: settings.solution_tol,
        },
    )
    .map_err(|err| match err {
        ScmError::Eval(e) => LeeError::Eval(e),
        ScmError::Intervention(e) => LeeError::Intervention(e),
        ScmError::NotStructurallySolvable { .. } => unreachable!("reported inside the lemma check"),
    })?;

    let induce = |lee| match induce_scm(lee, &scm_settings) {
        Ok(scm) => Ok(scm),
        Err(ScmError::NotStructurallySolvable { atom, witness, .. }) => {
            Err(format!("not structurally solvable at {atom}; witness {witness}"))
        }
        Err(err) => Err(err.to_string()),
    };
    let scm = induce(&e);
    let intervened_scm_direct = induce(&intervened_lee);
    let scm_then_do = match &scm {
        Ok(scm) => Some(intervene_scm(scm, s)?),
        _ => None,
    };

    let no_scm = "no SCM to intervene on".to_string();
    let edges = vec![
        edge("ode->lee", Ok::<(), _>(())),
        edge("lee->scm", scm.as_ref()),
        edge("do(ode)", Ok::<(), _>(())),
        edge("do(lee)", Ok::<(), _>(())),
        edge("do(scm)", scm.as_ref().map_err(|_| &no_scm)),
        edge("do(ode)->lee", Ok::<(), _>(())),
        edge("do(lee)->scm", intervened_scm_direct.as_ref()),
    ];

    let mut comparisons = vec![
        Comparison {
            name: "theorem1-structural",
            kind: ComparisonKind::Structural,
            status: Status::from_bool(theorem1.structural_equal),
            deviation: None,
            tolerance: None,
            detail: (!theorem1.differences.is_empty()).then(|| theorem1.differences.join("; ")),
        },
        Comparison {
            name: "theorem1-solution",
            kind: ComparisonKind::Dynamic,
            status: match (&theorem1.ode_equilibrium, theorem1.max_deviation) {
                (None, _) => Status::Skipped,
                (Some(_), Some(d)) => Status::from_bool(d <= settings.dynamic_tol),
                (Some(_), None) => Status::Fail,
            },
            deviation: theorem1.max_deviation,
            tolerance: Some(settings.dynamic_tol),
            detail: theorem1
                .ode_equilibrium
                .is_none()
                .then(|| format!("intervened dynamics ended {:?}; not compared", theorem1.ode_verdict).to_lowercase()),
        },
    ];
    let lemma_detail = lemma1.failure.clone();
    let structural_ok = lemma1.failure.is_none() && lemma1.parents_equal && lemma1.closed_forms_equal != Some(false);
    comparisons.push(Comparison {
        name: "lemma1-structural",
        kind: ComparisonKind::Structural,
        status: Status::from_bool(structural_ok),
        deviation: None,
        tolerance: None,
        detail: lemma_detail.clone().or_else(|| {
            (lemma1.closed_forms_equal.is_none()).then(|| "implicit functions compared on the grid only".to_string())
        }),
    });
    comparisons.push(Comparison {
        name: "lemma1-functional",
        kind: ComparisonKind::Functional,
        status: Status::from_bool(lemma1.failure.is_none() && lemma1.functional_max_deviation <= settings.functional_tol),
        deviation: lemma1.failure.is_none().then_some(lemma1.functional_max_deviation),
        tolerance: Some(settings.functional_tol),
        detail: lemma_detail.clone(),
    });
    comparisons.push(Comparison {
        name: "lemma1-solution",
        kind: ComparisonKind::Solution,
        status: Status::from_bool(lemma1.failure.is_none() && lemma1.solution_max_deviation <= settings.solution_tol),
        deviation: lemma1.failure.is_none().then_some(lemma1.solution_max_deviation),
        tolerance: Some(settings.solution_tol),
        detail: lemma_detail,
    });

    let traj = integrate(&intervened_model, &settings.integration)?;
    let eq = detect_equilibrium(&traj, &intervened_model, settings.integration.tol);
    comparisons.push(match (&eq.point, &scm_then_do, &intervened_scm_direct) {
        (None, _, _) => Comparison {
            name: "theorem2-solution",
            kind: ComparisonKind::Dynamic,
            status: Status::Skipped,
            deviation: None,
            tolerance: Some(settings.dynamic_tol),
            detail: Some(format!("intervened dynamics ended {:?}; not compared", eq.verdict).to_lowercase()),
        },
        (Some(x), Some(left), Ok(right)) => {
            let mut worst: f64 = 0.0;
            let mut detail = None;
            for scm in [left, right] {
                let r = solve_scm(scm, &settings.solve)?;
                match r.unique_solution() {
                    Some(sol) => worst = worst.max(max_dist(sol, x)),
                    None => {
                        worst = f64::INFINITY;
                        detail = Some(format!("intervened SCM solve: {:?}", r.verdict).to_lowercase());
                    }
                }
            }
            Comparison {
                name: "theorem2-solution",
                kind: ComparisonKind::Dynamic,
                status: Status::from_bool(worst <= settings.dynamic_tol),
                deviation: Some(worst),
                tolerance: Some(settings.dynamic_tol),
                detail,
            }
        }
        (Some(_), _, _) => Comparison {
            name: "theorem2-solution",
            kind: ComparisonKind::Dynamic,
            status: Status::Fail,
            deviation: None,
            tolerance: Some(settings.dynamic_tol),
            detail: Some("no induced SCM to compare against".into()),
        },
    });

    let premises = if settings.premise_samples >= 2 {
        let probe = ProbeSettings {
            n_samples: settings.premise_samples,
            seed: settings.solve.seed,
            integration: settings.integration.clone(),
            ..Default::default()
        };
        let (obs, int) = rayon::join(|| probe_stability(m, &probe), || probe_stability(&intervened_model, &probe));
        Premises {
            observational_stable: Some(obs?.stable),
            intervened_stable: Some(int?.stable),
            samples: settings.premise_samples,
        }
    } else {
        Premises { observational_stable: None, intervened_stable: None, samples: 0 }
    };

    let mut warnings: Vec<String> = missing_self_dependence(&e)
        .into_iter()
        .map(|a| format!("equation {a} does not depend on {a}; the dynamics cannot be structurally stable"))
        .collect();
    if traj.domain_violations > 0 {
        warnings.push(format!("{} recorded samples left the variable domains", traj.domain_violations));
    }

    let all_ok = edges.iter().all(|e| e.status != Status::Fail) && comparisons.iter().all(|c| c.status != Status::Fail);
    Ok(DiagramReport {
        model: m.name().to_string(),
        intervention: s.to_string(),
        edges,
        comparisons,
        premises,
        theorem1,
        lemma1,
        warnings,
        verdict: if all_ok { DiagramVerdict::Pass } else { DiagramVerdict::Fail },
        caveat: CAVEAT,
    })
}

/// One report per intervention, in input order.
pub fn verify_batch(
    m: &Model,
    specs: &[InterventionSpec],
    settings: &DiagramSettings,
) -> Vec<Result<DiagramReport, LeeError>> {
    specs.par_iter().map(|s| verify_diagram(m, s, settings)).collect()
}
