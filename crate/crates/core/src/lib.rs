//! Equilibrium causal semantics for ODE systems.
//!
//! A [`model::Model`] describes `d/dt x = f(x)`. From it the crate derives
//! labeled equilibrium equations ([`lee::Lee`]) and, when every
//! all-but-one intervention has a unique solution, a deterministic
//! structural causal model ([`scm::Scm`]). Perfect interventions can be
//! applied at each of the three levels; [`pipeline::verify_diagram`] checks
//! that both orders agree.

pub mod catalog;
pub mod dynamics;
pub mod expr;
pub mod field;
pub mod intervention;
pub mod lee;
pub mod model;
pub mod newton;
pub mod pipeline;
pub mod scm;

pub use catalog::{lotka_volterra_model, mass_spring_model};
pub use dynamics::{
    apply_hard_intervention, apply_soft_intervention, detect_equilibrium, integrate, jacobian, probe_stability,
    probe_stability_wrt, EquilibriumReport, IntegrationSettings, Verdict,
};
pub use expr::{eval_expr, EvalError, Expr};
pub use intervention::{InterventionError, InterventionSpec, Mode};
pub use lee::{check_theorem1, derive_lee, intervene_lee, solve_lee, Lee};
pub use model::{graph_of, parse_model, structural_parents, CausalGraph, Model, ParseError};
pub use newton::{SolveReport, SolveSettings, SolveVerdict};
pub use pipeline::{verify_diagram, DiagramReport, DiagramSettings};
pub use scm::{check_lemma1, check_structural_solvability, induce_scm, intervene_scm, solve_scm, Scm};
