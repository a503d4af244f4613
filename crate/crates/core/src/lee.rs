//! Labeled equilibrium equations.
//!
//! One residual vector per atom: the equilibrium system `0 = g_i(x)`
//! together with the label `i` that an intervention on atom `i` replaces.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::dynamics::{
    apply_hard_intervention, detect_equilibrium, integrate, DynamicsError, IntegrationSettings, Verdict,
};
use crate::expr::{sub, EvalError, Expr};
use crate::field::VectorField;
use crate::intervention::{InterventionError, InterventionSpec};
use crate::model::{CausalGraph, Layout, Model};
use crate::newton::{multi_start, start_points, SolveReport, SolveSettings, SolveVerdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LeeError {
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("atom `{atom}` has {members} member(s) but {got} equation(s)")]
    EquationCount { atom: String, members: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lee {
    name: String,
    params: IndexMap<String, f64>,
    layout: Layout,
    equations: Vec<Vec<Expr>>,
    parents: Vec<BTreeSet<usize>>,
}

/// The canonical clamp residual `x - xi`.
pub(crate) fn clamp_residual(var: &str, xi: f64) -> Expr {
    sub(Expr::var(var), Expr::Const(xi))
}

impl Lee {
    /// Builds an LEE from one residual vector per atom (atom order, member
    /// order within an atom). Parents are read off the residuals.
    pub fn new(
        name: impl Into<String>,
        params: IndexMap<String, f64>,
        layout: Layout,
        equations: Vec<Vec<Expr>>,
    ) -> Result<Lee, LeeError> {
        for (atom, eqs) in layout.atoms().iter().zip(&equations) {
            if eqs.len() != atom.members.len() {
                return Err(LeeError::EquationCount {
                    atom: atom.name.clone(),
                    members: atom.members.len(),
                    got: eqs.len(),
                });
            }
        }
        let parents = equations.iter().map(|eqs| layout.atoms_referenced(eqs)).collect();
        Ok(Lee { name: name.into(), params, layout, equations, parents })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &IndexMap<String, f64> {
        &self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn labels(&self) -> Vec<&str> {
        self.layout.atoms().iter().map(|a| a.name.as_str()).collect()
    }

    /// Residuals per atom, in member order.
    pub fn equations(&self) -> &[Vec<Expr>] {
        &self.equations
    }

    pub fn parents(&self) -> &[BTreeSet<usize>] {
        &self.parents
    }

    pub fn graph(&self) -> CausalGraph {
        CausalGraph::from_parents(self.labels().iter().map(|s| s.to_string()).collect(), &self.parents)
    }

    /// All residuals concatenated in atom order.
    pub fn compile(&self) -> Result<VectorField, EvalError> {
        let flat: Vec<Expr> = self.equations.iter().flatten().cloned().collect();
        VectorField::compile(&flat, &self.params, &self.layout)
    }

    /// Atoms none of whose members occur in any equation.
    pub fn undetermined_atoms(&self) -> Vec<usize> {
        let used: BTreeSet<usize> = self.parents.iter().flatten().copied().collect();
        (0..self.equations.len()).filter(|a| !used.contains(a)).collect()
    }

    /// Differences between two LEEs: labels, residual bodies, parent sets.
    pub fn differences(&self, other: &Lee) -> Vec<String> {
        let mut out = Vec::new();
        if self.labels() != other.labels() {
            out.push(format!("labels differ: {:?} vs {:?}", self.labels(), other.labels()));
            return out;
        }
        if self.params != other.params {
            out.push("parameters differ".into());
        }
        for (a, label) in self.labels().into_iter().enumerate() {
            if self.equations[a] != other.equations[a] {
                let show = |eqs: &[Expr]| eqs.iter().map(Expr::to_string).collect::<Vec<_>>().join("; ");
                out.push(format!(
                    "equation {label}: [{}] vs [{}]",
                    show(&self.equations[a]),
                    show(&other.equations[a])
                ));
            }
            if self.parents[a] != other.parents[a] {
                out.push(format!("parents of {label} differ"));
            }
        }
        out
    }
}

/// Equilibrium equations of `m`, labeled by atom. Variables clamped by a
/// hard intervention contribute their canonical clamp residual `x - xi`.
pub fn derive_lee(m: &Model) -> Lee {
    let equations = m
        .atoms()
        .iter()
        .map(|atom| {
            atom.members
                .iter()
                .map(|&v| {
                    if m.is_clamped(v) {
                        clamp_residual(&m.vars()[v].name, m.vars()[v].init)
                    } else {
                        m.rhs()[v].clone()
                    }
                })
                .collect()
        })
        .collect();
    Lee::new(m.name(), m.params().clone(), m.layout().clone(), equations).expect("one residual per variable")
}

/// Replaces the equations labeled by the targets with clamp residuals.
pub fn intervene_lee(e: &Lee, s: &InterventionSpec) -> Result<Lee, InterventionError> {
    s.require_hard()?;
    let mut out = e.clone();
    for t in s.resolve(&e.layout)? {
        let mut eqs = Vec::with_capacity(t.clamps.len());
        for &(var, xi) in &t.clamps {
            let decl = &e.layout.vars()[var];
            if !decl.domain.contains(xi) {
                return Err(InterventionError::DomainViolation { var: decl.name.clone(), value: xi });
            }
            eqs.push(clamp_residual(&decl.name, xi));
            out.layout.set_init(var, xi);
        }
        out.equations[t.atom] = eqs;
        out.parents[t.atom] = BTreeSet::from([t.atom]);
    }
    Ok(out)
}

pub(crate) fn admissible(layout: &Layout, slack: f64) -> impl Fn(&[f64]) -> bool + Sync + '_ {
    move |x: &[f64]| {
        layout.vars().iter().zip(x).all(|(v, &xi)| xi >= v.domain.lo - slack && xi <= v.domain.hi + slack)
    }
}

/// Multi-start Newton on the full residual vector. Solutions outside the
/// variable domains (beyond `10 * tol`) are discarded.
pub fn solve_lee(e: &Lee, s: &SolveSettings) -> Result<SolveReport, EvalError> {
    let field = e.compile()?;
    let f = |x: &[f64], r: &mut [f64]| field.eval(x, r);
    let starts = start_points(&e.layout, &e.layout.init_state(), s);
    let mut report = multi_start(&f, starts, &admissible(&e.layout, 10.0 * s.tol), s);
    let undetermined = e.undetermined_atoms();
    if !undetermined.is_empty() {
        let names: Vec<&str> = undetermined.iter().map(|&a| e.layout.atoms()[a].name.as_str()).collect();
        report.notes.push(format!("no equation constrains {}; the value is undetermined", names.join(", ")));
        if report.verdict != SolveVerdict::NoneFound {
            report.verdict = SolveVerdict::Multiple;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Settings {
    pub solve: SolveSettings,
    pub integration: IntegrationSettings,
    /// Allowed gap between the integrated equilibrium and the LEE solution.
    pub dynamic_tol: f64,
}

impl Default for Theorem1Settings {
    fn default() -> Self {
        Theorem1Settings { solve: SolveSettings::default(), integration: IntegrationSettings::default(), dynamic_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    /// Intervening on the LEE equals deriving the LEE of the intervened model.
    pub structural_equal: bool,
    pub differences: Vec<String>,
    pub ode_verdict: Verdict,
    pub ode_equilibrium: Option<Vec<f64>>,
    pub lee: SolveReport,
    /// Distance from the integrated equilibrium to the nearest LEE solution.
    pub max_deviation: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `intervene_lee(derive_lee(m), s)` with
/// `derive_lee(apply_hard_intervention(m, s))`, then, when the intervened
/// model converges from its initial state, its equilibrium with the LEE
/// solutions.
pub fn check_theorem1(m: &Model, s: &InterventionSpec, settings: &Theorem1Settings) -> Result<Theorem1Report, LeeError> {
    let via_lee = intervene_lee(&derive_lee(m), s)?;
    let intervened = apply_hard_intervention(m, s)?;
    let via_ode = derive_lee(&intervened);
    let differences = via_lee.differences(&via_ode);
    let lee = solve_lee(&via_lee, &settings.solve)?;
    let traj = integrate(&intervened, &settings.integration)?;
    let eq = detect_equilibrium(&traj, &intervened, settings.integration.tol);
    let max_deviation = eq.point.as_ref().and_then(|p| lee.distance_to(p));
    let dynamic_ok = match (&eq.point, max_deviation) {
        (None, _) => true,
        (Some(_), Some(d)) => d <= settings.dynamic_tol,
        (Some(_), None) => false,
    };
    Ok(Theorem1Report {
        structural_equal: differences.is_empty(),
        passed: differences.is_empty() && dynamic_ok,
        differences,
        ode_verdict: eq.verdict,
        ode_equilibrium: eq.point,
        lee,
        max_deviation,
        tolerance: settings.dynamic_tol,
    })
}

impl Serialize for Lee {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let labels = self.labels();
        let equations: IndexMap<&str, Vec<String>> = labels
            .iter()
            .zip(&self.equations)
            .map(|(l, eqs)| (*l, eqs.iter().map(Expr::to_string).collect()))
            .collect();
        let parents: IndexMap<&str, Vec<&str>> = labels
            .iter()
            .zip(&self.parents)
            .map(|(l, ps)| (*l, ps.iter().map(|&p| labels[p]).collect()))
            .collect();
        let mut st = ser.serialize_struct("Lee", 6)?;
        st.serialize_field("name", &self.name)?;
        st.serialize_field("labels", &labels)?;
        st.serialize_field("equations", &equations)?;
        st.serialize_field("parents", &parents)?;
        st.serialize_field("params", &self.params)?;
        st.serialize_field("variables", self.layout.vars())?;
        st.end()
    }
}
