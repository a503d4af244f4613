//! ODE models: declarations, validation, and the text format.

mod graph;
mod parser;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::field::VectorField;

pub use graph::{graph_of, structural_parents, vacuous_dependencies, CausalGraph, VacuousEdge};
pub use parser::{parse_expr, parse_model, IdentKind, ParseError, ParseErrorKind};

/// Closed interval with optionally infinite ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    #[serde(serialize_with = "bound::serialize", deserialize_with = "bound::lower")]
    pub lo: f64,
    #[serde(serialize_with = "bound::serialize", deserialize_with = "bound::upper")]
    pub hi: f64,
}

impl Domain {
    pub const REAL: Domain = Domain { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Domain {
        Domain { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Intersection with `[center - radius, center + radius]`.
    pub fn clip_box(&self, center: f64, radius: f64) -> (f64, f64) {
        ((center - radius).max(self.lo), (center + radius).min(self.hi))
    }
}

// JSON has no infinities; unbounded ends serialize as null.
mod bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn lower<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn upper<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub domain: Domain,
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub members: Vec<String>,
}

/// Intervention unit: a declared group or an ungrouped variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Atom {
    pub name: String,
    /// Indices into the variable list, in group declaration order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("group `{group}` refers to undeclared variable `{member}`")]
    GroupMemberMissing { group: String, member: String },
    #[error("variable `{0}` belongs to more than one group")]
    OverlappingGroups(String),
    #[error("group `{0}` has no members")]
    EmptyGroup(String),
    #[error("variable `{var}`: init {init} outside [{lo}, {hi}]")]
    InitOutsideDomain { var: String, init: f64, lo: f64, hi: f64 },
    #[error("variable `{0}`: empty domain")]
    EmptyDomain(String),
    #[error("expected {expected} right-hand sides, got {got}")]
    RhsCount { expected: usize, got: usize },
    #[error("right-hand side of `{var}` refers to undeclared `{name}`")]
    Undeclared { var: String, name: String },
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}

/// Variables, groups, and the derived atom list shared by models,
/// equilibrium equations, and causal models.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    vars: Vec<Variable>,
    groups: Vec<Group>,
    atoms: Vec<Atom>,
    atom_of_var: Vec<usize>,
}

impl Layout {
    pub fn new(vars: Vec<Variable>, groups: Vec<Group>) -> Result<Layout, ModelError> {
        let mut names = BTreeSet::new();
        for v in &vars {
            if !names.insert(v.name.as_str()) {
                return Err(ModelError::DuplicateName(v.name.clone()));
            }
            if !(v.domain.lo <= v.domain.hi) {
                return Err(ModelError::EmptyDomain(v.name.clone()));
            }
            if !v.domain.contains(v.init) {
                return Err(ModelError::InitOutsideDomain {
                    var: v.name.clone(),
                    init: v.init,
                    lo: v.domain.lo,
                    hi: v.domain.hi,
                });
            }
        }
        let index: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let mut group_of = vec![None; vars.len()];
        for (g, group) in groups.iter().enumerate() {
            if !names.insert(group.name.as_str()) {
                return Err(ModelError::DuplicateName(group.name.clone()));
            }
            if group.members.is_empty() {
                return Err(ModelError::EmptyGroup(group.name.clone()));
            }
            for m in &group.members {
                let &i = index.get(m.as_str()).ok_or_else(|| ModelError::GroupMemberMissing {
                    group: group.name.clone(),
                    member: m.clone(),
                })?;
                if group_of[i].replace(g).is_some() {
                    return Err(ModelError::OverlappingGroups(m.clone()));
                }
            }
        }
        let mut atoms = Vec::new();
        let mut atom_of_var = vec![usize::MAX; vars.len()];
        let mut atom_of_group = vec![None; groups.len()];
        for (i, v) in vars.iter().enumerate() {
            match group_of[i] {
                None => {
                    atom_of_var[i] = atoms.len();
                    atoms.push(Atom { name: v.name.clone(), members: vec![i] });
                }
                Some(g) => {
                    if atom_of_group[g].is_none() {
                        let members: Vec<usize> = groups[g].members.iter().map(|m| index[m.as_str()]).collect();
                        for &m in &members {
                            atom_of_var[m] = atoms.len();
                        }
                        atom_of_group[g] = Some(atoms.len());
                        atoms.push(Atom { name: groups[g].name.clone(), members });
                    }
                }
            }
        }
        Ok(Layout { vars, groups, atoms, atom_of_var })
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn atom_index(&self, name: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.name == name)
    }

    /// The atom that owns variable `var`.
    pub fn atom_of(&self, var: usize) -> usize {
        self.atom_of_var[var]
    }

    pub fn init_state(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.init).collect()
    }

    pub(crate) fn set_init(&mut self, var: usize, value: f64) {
        self.vars[var].init = value;
    }

    /// Atoms whose members occur in `e`.
    pub fn atoms_referenced<'a>(&self, exprs: impl IntoIterator<Item = &'a Expr>) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for e in exprs {
            for v in e.vars() {
                if let Some(i) = self.var_index(v) {
                    out.insert(self.atom_of(i));
                }
            }
        }
        out
    }

    pub(crate) fn slot_fn(&self) -> impl Fn(&str) -> Option<usize> + '_ {
        move |n: &str| self.var_index(n)
    }
}

/// A first-order ODE system `d/dt x = f(x)` with an initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    name: String,
    params: IndexMap<String, f64>,
    layout: Layout,
    rhs: Vec<Expr>,
    clamped: Vec<bool>,
}

impl Model {
    pub fn new(
        name: impl Into<String>,
        params: IndexMap<String, f64>,
        layout: Layout,
        rhs: Vec<Expr>,
    ) -> Result<Model, ModelError> {
        if rhs.len() != layout.n_vars() {
            return Err(ModelError::RhsCount { expected: layout.n_vars(), got: rhs.len() });
        }
        for (v, e) in layout.vars().iter().zip(&rhs) {
            check_names(e, &params, &layout, &v.name)?;
        }
        for p in params.keys() {
            if layout.var_index(p).is_some() || layout.atom_index(p).is_some() {
                return Err(ModelError::DuplicateName(p.clone()));
            }
        }
        let clamped = vec![false; rhs.len()];
        Ok(Model { name: name.into(), params, layout, rhs, clamped })
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

    pub fn vars(&self) -> &[Variable] {
        self.layout.vars()
    }

    pub fn atoms(&self) -> &[Atom] {
        self.layout.atoms()
    }

    pub fn rhs(&self) -> &[Expr] {
        &self.rhs
    }

    /// Whether variable `var` is held fixed by a hard intervention.
    pub fn is_clamped(&self, var: usize) -> bool {
        self.clamped[var]
    }

    pub fn clamped(&self) -> &[bool] {
        &self.clamped
    }

    pub fn init_state(&self) -> Vec<f64> {
        self.layout.init_state()
    }

    pub fn compile(&self) -> Result<VectorField, EvalError> {
        VectorField::compile(&self.rhs, &self.params, &self.layout)
    }

    pub(crate) fn set_rhs(&mut self, var: usize, e: Expr) {
        self.rhs[var] = e;
    }

    pub(crate) fn clamp(&mut self, var: usize, value: f64) {
        self.rhs[var] = Expr::Const(0.0);
        self.layout.set_init(var, value);
        self.clamped[var] = true;
    }
}

pub(crate) fn check_names(
    e: &Expr,
    params: &IndexMap<String, f64>,
    layout: &Layout,
    owner: &str,
) -> Result<(), ModelError> {
    for v in e.vars() {
        if layout.var_index(v).is_none() {
            return Err(ModelError::Undeclared { var: owner.to_string(), name: v.to_string() });
        }
    }
    for p in e.params() {
        if !params.contains_key(p) {
            return Err(ModelError::Undeclared { var: owner.to_string(), name: p.to_string() });
        }
    }
    Ok(())
}

/// Writes the model in the text format accepted by [`parse_model`].
impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {}", self.name)?;
        for (p, v) in &self.params {
            writeln!(f, "param {p} = {v}")?;
        }
        for v in self.vars() {
            writeln!(f, "var {} in [{}, {}] init {}", v.name, v.domain.lo, v.domain.hi, v.init)?;
        }
        for g in self.layout.groups() {
            writeln!(f, "group {} = ({})", g.name, g.members.join(", "))?;
        }
        for (v, e) in self.vars().iter().zip(&self.rhs) {
            writeln!(f, "ddt {} = {}", v.name, e)?;
        }
        Ok(())
    }
}
