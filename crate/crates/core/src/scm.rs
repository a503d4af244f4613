//! Deterministic structural causal models induced by equilibrium equations.
//!
//! Each atom `i` gets a structural function `h_i` of its parents
//! `pa_E(i) \ {i}`, defined by solving equation `i` for the members of `i`
//! with every other variable held fixed. Affine equations with a constant
//! invertible coefficient matrix are solved in closed form; everything else
//! is solved on demand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::expr::{add, div, mul, neg, sub, Affine, CompiledExpr, EvalError, Expr};
use crate::field::{central_jacobian, VectorField};
use crate::intervention::{InterventionError, InterventionSpec};
use crate::lee::{admissible, intervene_lee, solve_lee, Lee};
use crate::model::{CausalGraph, Layout};
use crate::newton::{max_dist, multi_start, newton_from, start_points, SolveReport, SolveSettings, SolveVerdict};

const NO_IMPLICIT_SOLUTION: EvalError = EvalError::Domain("implicit structural equation has no admissible solution");

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    /// One expression per member of the target atom.
    Closed(Vec<Expr>),
    /// The residuals to solve for the target's members.
    Implicit(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFn {
    pub target: usize,
    /// Never contains `target`.
    pub parents: BTreeSet<usize>,
    pub body: Body,
    compiled: VectorField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scm {
    name: String,
    params: IndexMap<String, f64>,
    layout: Layout,
    fns: Vec<StructuralFn>,
    /// Used by implicit evaluations.
    settings: SolveSettings,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScmError {
    #[error("not structurally solvable at atom `{atom}` (witness {witness})")]
    NotStructurallySolvable { atom: String, witness: String, report: Box<StructuralReport> },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
}

fn compile_body(body: &Body, params: &IndexMap<String, f64>, layout: &Layout) -> Result<VectorField, EvalError> {
    match body {
        Body::Closed(es) | Body::Implicit(es) => VectorField::compile(es, params, layout),
    }
}

impl StructuralFn {
    pub fn is_closed(&self) -> bool {
        matches!(self.body, Body::Closed(_))
    }
}

impl Scm {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &IndexMap<String, f64> {
        &self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn functions(&self) -> &[StructuralFn] {
        &self.fns
    }

    pub fn parents(&self) -> Vec<BTreeSet<usize>> {
        self.fns.iter().map(|f| f.parents.clone()).collect()
    }

    pub fn graph(&self) -> CausalGraph {
        let nodes = self.layout.atoms().iter().map(|a| a.name.clone()).collect();
        CausalGraph::from_parents(nodes, &self.parents())
    }

    /// `h_i` at the parent values found in the full state `x`. Entries of
    /// `x` belonging to atom `i` only seed the implicit solver.
    pub fn eval_fn(&self, atom: usize, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let f = &self.fns[atom];
        match &f.body {
            Body::Closed(_) => f.compiled.eval_vec(x),
            Body::Implicit(_) => {
                let members = &self.layout.atoms()[atom].members;
                solve_members(&f.compiled, &self.layout, members, x, &self.settings)
            }
        }
    }

    /// Canonical equation form `0 = h_i(x) - x_i`; implicit functions keep
    /// their captured residuals.
    pub fn to_lee(&self) -> Lee {
        let equations = self
            .fns
            .iter()
            .map(|f| match &f.body {
                Body::Closed(hs) => self.layout.atoms()[f.target]
                    .members
                    .iter()
                    .zip(hs)
                    .map(|(&v, h)| sub(h.clone(), Expr::var(&self.layout.vars()[v].name)))
                    .collect(),
                Body::Implicit(rs) => rs.clone(),
            })
            .collect();
        Lee::new(&self.name, self.params.clone(), self.layout.clone(), equations).expect("arity preserved")
    }
}

/// Solves `g(x with members replaced by y) = 0` for `y`: first from the
/// members' current values, then from seeded starts in the box.
fn solve_members(
    g: &VectorField,
    layout: &Layout,
    members: &[usize],
    x: &[f64],
    s: &SolveSettings,
) -> Result<Vec<f64>, EvalError> {
    let f = member_residual(g, members, x);
    let ok = |y: &[f64]| members.iter().zip(y).all(|(&v, &yi)| layout.vars()[v].domain.contains(yi));
    let warm: Vec<f64> = members.iter().map(|&v| x[v]).collect();
    let o = newton_from(&f, &warm, s);
    if o.converged && ok(&o.x) {
        return Ok(o.x);
    }
    for y0 in member_starts(layout, members, s) {
        let o = newton_from(&f, &y0, s);
        if o.converged && ok(&o.x) {
            return Ok(o.x);
        }
    }
    Err(NO_IMPLICIT_SOLUTION)
}

fn member_residual<'a>(
    g: &'a VectorField,
    members: &'a [usize],
    x: &'a [f64],
) -> impl Fn(&[f64], &mut [f64]) -> Result<(), EvalError> + Sync + 'a {
    move |y: &[f64], r: &mut [f64]| {
        let mut z = x.to_vec();
        for (&v, &yi) in members.iter().zip(y) {
            z[v] = yi;
        }
        g.eval(&z, r)
    }
}

fn member_starts(layout: &Layout, members: &[usize], s: &SolveSettings) -> Vec<Vec<f64>> {
    start_points(layout, &layout.init_state(), s)
        .into_iter()
        .map(|p| members.iter().map(|&v| p[v]).collect())
        .collect()
}

/// Closed form for residuals affine in the members with a constant
/// invertible coefficient matrix.
fn closed_form(eqs: &[Expr], own: &[&str], params: &IndexMap<String, f64>) -> Option<Vec<Expr>> {
    let affine: Vec<Affine> = eqs.iter().map(|g| g.affine_in(own)).collect::<Option<_>>()?;
    if affine.iter().any(|a| a.coeffs.iter().any(Expr::mentions_any_var)) {
        return None;
    }
    let k = own.len();
    let none = BTreeMap::<String, f64>::new();
    let mut a = DMatrix::zeros(k, k);
    for (r, aff) in affine.iter().enumerate() {
        for (c, coeff) in aff.coeffs.iter().enumerate() {
            a[(r, c)] = coeff.eval(params, &none).ok()?;
        }
    }
    if !well_conditioned(&a) {
        return None;
    }
    if k == 1 {
        let aff = &affine[0];
        let rest = aff.rest.clone();
        return Some(vec![match aff.coeffs[0] {
            Expr::Const(c) if c == 1.0 => neg(rest),
            Expr::Const(c) if c == -1.0 => rest,
            Expr::Const(c) => div(rest, Expr::Const(-c)),
            ref coeff => neg(div(rest, coeff.clone())),
        }]);
    }
    let inv = a.try_inverse()?;
    Some(
        (0..k)
            .map(|j| {
                let mut acc = Expr::Const(0.0);
                for (c, aff) in affine.iter().enumerate() {
                    if inv[(j, c)] != 0.0 {
                        acc = add(acc, mul(Expr::Const(inv[(j, c)]), aff.rest.clone()));
                    }
                }
                neg(acc)
            })
            .collect(),
    )
}

fn well_conditioned(a: &DMatrix<f64>) -> bool {
    let sv = a.clone().singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-12 * max && sv.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralSettings {
    /// Clamp-value draws per atom when no exact argument applies.
    pub xi_samples: usize,
    pub solve: SolveSettings,
}

impl Default for StructuralSettings {
    fn default() -> Self {
        StructuralSettings { xi_samples: 8, solve: SolveSettings::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolvabilityMethod {
    /// Affine with constant invertible coefficients: solvable for every clamp.
    AffineExact,
    /// Affine with a coefficient matrix that is singular somewhere in the box.
    AffineSingular,
    /// Unique solutions found at every sampled clamp value.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomSolvability {
    pub atom: String,
    pub solvable: bool,
    pub method: SolvabilityMethod,
    /// Clamp values of all other atoms at which uniqueness fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    pub atoms: Vec<AtomSolvability>,
    pub solvable: bool,
}

impl StructuralReport {
    pub fn first_failure(&self) -> Option<&AtomSolvability> {
        self.atoms.iter().find(|a| !a.solvable)
    }
}

fn witness_of(layout: &Layout, skip: usize, x: &[f64]) -> BTreeMap<String, Vec<f64>> {
    layout
        .atoms()
        .iter()
        .enumerate()
        .filter(|(a, _)| *a != skip)
        .map(|(_, atom)| (atom.name.clone(), atom.members.iter().map(|&v| x[v]).collect()))
        .collect()
}

fn format_witness(w: &BTreeMap<String, Vec<f64>>) -> String {
    let spec = InterventionSpec::hard(w.iter().map(|(k, v)| (k.clone(), v.clone())));
    spec.to_string()
}

/// Checks, atom by atom, that clamping every other atom leaves a uniquely
/// solvable equation. Exact for the affine class; sampled otherwise.
pub fn check_structural_solvability(e: &Lee, s: &StructuralSettings) -> Result<StructuralReport, EvalError> {
    let layout = e.layout();
    let init = layout.init_state();
    let mut atoms = Vec::with_capacity(layout.atoms().len());
    for (i, atom) in layout.atoms().iter().enumerate() {
        let own: Vec<&str> = atom.members.iter().map(|&v| layout.vars()[v].name.as_str()).collect();
        let eqs = &e.equations()[i];
        let seed = s.solve.seed.wrapping_add(i as u64);
        let affine: Option<Vec<Affine>> = eqs.iter().map(|g| g.affine_in(&own)).collect();
        let mut verdict = None;
        if let Some(affine) = &affine {
            let constant = !affine.iter().any(|a| a.coeffs.iter().any(Expr::mentions_any_var));
            if constant {
                let none = BTreeMap::<String, f64>::new();
                let mut a = DMatrix::zeros(own.len(), own.len());
                for (r, aff) in affine.iter().enumerate() {
                    for (c, coeff) in aff.coeffs.iter().enumerate() {
                        a[(r, c)] = coeff.eval(e.params(), &none)?;
                    }
                }
                verdict = Some(if well_conditioned(&a) {
                    AtomSolvability {
                        atom: atom.name.clone(),
                        solvable: true,
                        method: SolvabilityMethod::AffineExact,
                        witness: None,
                        note: None,
                    }
                } else {
                    AtomSolvability {
                        atom: atom.name.clone(),
                        solvable: false,
                        method: SolvabilityMethod::AffineSingular,
                        witness: Some(witness_of(layout, i, &init)),
                        note: Some("coefficient matrix of the own variables is singular".into()),
                    }
                });
            } else if let Some(x) = singular_coefficients(e, affine, &SolveSettings { seed, ..s.solve.clone() })? {
                verdict = Some(AtomSolvability {
                    atom: atom.name.clone(),
                    solvable: false,
                    method: SolvabilityMethod::AffineSingular,
                    witness: Some(witness_of(layout, i, &x)),
                    note: Some("coefficient matrix of the own variables vanishes in determinant".into()),
                });
            }
        }
        let verdict = match verdict {
            Some(v) => v,
            None => sampled_solvability(e, i, s, seed)?,
        };
        atoms.push(verdict);
    }
    let solvable = atoms.iter().all(|a| a.solvable);
    Ok(StructuralReport { atoms, solvable })
}

/// Searches the start box for a state where the affine coefficient matrix
/// is singular, by Gauss-Newton on its determinant.
fn singular_coefficients(e: &Lee, affine: &[Affine], s: &SolveSettings) -> Result<Option<Vec<f64>>, EvalError> {
    let layout = e.layout();
    let slot = layout.slot_fn();
    let k = affine.len();
    let coeffs: Vec<CompiledExpr> = affine
        .iter()
        .flat_map(|a| a.coeffs.iter())
        .map(|c| c.compile(e.params(), &slot))
        .collect::<Result<_, _>>()?;
    let det = |x: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
        let vals: Vec<f64> = coeffs.iter().map(|c| c.eval(x)).collect::<Result<_, _>>()?;
        out[0] = DMatrix::from_row_slice(k, k, &vals).determinant();
        Ok(())
    };
    let inside = admissible(layout, 0.0);
    let mut phi = [0.0];
    for x0 in start_points(layout, &layout.init_state(), s) {
        let mut x = x0;
        if det(&x, &mut phi).is_err() {
            continue;
        }
        for _ in 0..s.max_iter {
            if phi[0].abs() <= 1e-12 {
                break;
            }
            let Ok(grad) = central_jacobian(1, &x, det) else { break };
            let g2 = grad.norm_squared();
            if !(g2 > 0.0) {
                break;
            }
            let mut lambda = 1.0;
            let mut moved = false;
            for _ in 0..=s.max_halvings {
                let trial: Vec<f64> = x.iter().zip(grad.iter()).map(|(xi, gi)| xi - lambda * phi[0] * gi / g2).collect();
                let mut p = [0.0];
                if det(&trial, &mut p).is_ok() && p[0].abs() < phi[0].abs() {
                    x = trial;
                    phi = p;
                    moved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if phi[0].abs() <= 1e-12 && inside(&x) {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

fn sampled_solvability(e: &Lee, i: usize, s: &StructuralSettings, seed: u64) -> Result<AtomSolvability, EvalError> {
    let layout = e.layout();
    let atom = &layout.atoms()[i];
    let g = VectorField::compile(&e.equations()[i], e.params(), layout)?;
    let draws = start_points(layout, &layout.init_state(), &SolveSettings { n_starts: s.xi_samples, seed, ..s.solve.clone() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let own_ok = |y: &[f64]| {
        atom.members.iter().zip(y).all(|(&v, &yi)| {
            let d = &layout.vars()[v].domain;
            yi >= d.lo - 10.0 * s.solve.tol && yi <= d.hi + 10.0 * s.solve.tol
        })
    };
    for xi in draws {
        let f = member_residual(&g, &atom.members, &xi);
        let solve = SolveSettings { seed: rng.next_u64(), ..s.solve.clone() };
        let report = multi_start(&f, member_starts(layout, &atom.members, &solve), &own_ok, &solve);
        if report.verdict != SolveVerdict::Unique {
            return Ok(AtomSolvability {
                atom: atom.name.clone(),
                solvable: false,
                method: SolvabilityMethod::Sampled,
                witness: Some(witness_of(layout, i, &xi)),
                note: Some(format!("{} solution cluster(s) at the witness", report.solutions.len())),
            });
        }
    }
    Ok(AtomSolvability {
        atom: atom.name.clone(),
        solvable: true,
        method: SolvabilityMethod::Sampled,
        witness: None,
        note: Some(format!("unique at {} sampled clamp values", s.xi_samples)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScmSettings {
    pub structural: StructuralSettings,
    /// Emit closed forms where the affine fast path applies.
    pub closed_forms: bool,
}

impl Default for ScmSettings {
    fn default() -> Self {
        ScmSettings { structural: StructuralSettings::default(), closed_forms: true }
    }
}

/// Induced SCM, after checking structural solvability.
pub fn induce_scm(e: &Lee, s: &ScmSettings) -> Result<Scm, ScmError> {
    let report = check_structural_solvability(e, &s.structural)?;
    if let Some(fail) = report.first_failure() {
        return Err(ScmError::NotStructurallySolvable {
            atom: fail.atom.clone(),
            witness: fail.witness.as_ref().map(format_witness).unwrap_or_default(),
            report: Box::new(report.clone()),
        });
    }
    Ok(induce_scm_unchecked(e, s)?)
}

/// Induced SCM without the solvability check. Implicit functions on a
/// non-solvable LEE fail or pick an arbitrary root when evaluated.
pub fn induce_scm_unchecked(e: &Lee, s: &ScmSettings) -> Result<Scm, EvalError> {
    let layout = e.layout();
    let mut fns = Vec::with_capacity(layout.atoms().len());
    for (i, atom) in layout.atoms().iter().enumerate() {
        let own: Vec<&str> = atom.members.iter().map(|&v| layout.vars()[v].name.as_str()).collect();
        let eqs = &e.equations()[i];
        let body = match s.closed_forms.then(|| closed_form(eqs, &own, e.params())).flatten() {
            Some(hs) => Body::Closed(hs),
            None => Body::Implicit(eqs.clone()),
        };
        let mut parents = e.parents()[i].clone();
        parents.remove(&i);
        let compiled = compile_body(&body, e.params(), layout)?;
        fns.push(StructuralFn { target: i, parents, body, compiled });
    }
    Ok(Scm {
        name: e.name().to_string(),
        params: e.params().clone(),
        layout: layout.clone(),
        fns,
        settings: s.structural.solve.clone(),
    })
}

/// Replaces `h_i` by the constant clamp values for every target.
pub fn intervene_scm(m: &Scm, s: &InterventionSpec) -> Result<Scm, InterventionError> {
    s.require_hard()?;
    let mut out = m.clone();
    for t in s.resolve(&m.layout)? {
        let mut values = Vec::with_capacity(t.clamps.len());
        for &(var, xi) in &t.clamps {
            let decl = &m.layout.vars()[var];
            if !decl.domain.contains(xi) {
                return Err(InterventionError::DomainViolation { var: decl.name.clone(), value: xi });
            }
            out.layout.set_init(var, xi);
            values.push(Expr::Const(xi));
        }
        let body = Body::Closed(values);
        let compiled = compile_body(&body, &m.params, &m.layout).expect("constants compile");
        out.fns[t.atom] = StructuralFn { target: t.atom, parents: BTreeSet::new(), body, compiled };
    }
    Ok(out)
}

/// `x - h(x)` over the full state.
fn fixed_point_residual(m: &Scm) -> impl Fn(&[f64], &mut [f64]) -> Result<(), EvalError> + Sync + '_ {
    move |x: &[f64], r: &mut [f64]| {
        for (a, atom) in m.layout.atoms().iter().enumerate() {
            let h = m.eval_fn(a, x)?;
            for (&v, hv) in atom.members.iter().zip(h) {
                r[v] = x[v] - hv;
            }
        }
        Ok(())
    }
}

/// Acyclic SCMs are solved by one substitution pass in topological order;
/// cyclic ones by multi-start Newton on `x - h(x) = 0`.
pub fn solve_scm(m: &Scm, s: &SolveSettings) -> Result<SolveReport, EvalError> {
    let Some(order) = m.graph().topological_order() else {
        let f = fixed_point_residual(m);
        let starts = start_points(&m.layout, &m.layout.init_state(), s);
        return Ok(multi_start(&f, starts, &admissible(&m.layout, 10.0 * s.tol), s));
    };
    let mut x = m.layout.init_state();
    let mut notes = vec!["solved by substitution in topological order".to_string()];
    let mut ok = true;
    for a in order {
        match m.eval_fn(a, &x) {
            Ok(h) => {
                for (&v, hv) in m.layout.atoms()[a].members.iter().zip(h) {
                    x[v] = hv;
                }
            }
            Err(err) => {
                notes.push(format!("evaluating h for {} failed: {err}", m.layout.atoms()[a].name));
                ok = false;
                break;
            }
        }
    }
    let mut r = vec![0.0; x.len()];
    let residual = if ok {
        fixed_point_residual(m)(&x, &mut r)?;
        r.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    } else {
        f64::INFINITY
    };
    if ok && !admissible(&m.layout, 10.0 * s.tol)(&x) {
        notes.push("substitution left the variable domains".into());
        ok = false;
    }
    let found = ok && residual <= s.tol;
    Ok(SolveReport {
        solutions: if found { vec![x] } else { Vec::new() },
        residuals: if found { vec![residual] } else { Vec::new() },
        support: if found { vec![1] } else { Vec::new() },
        starts: 1,
        converged_starts: usize::from(found),
        verdict: if found { SolveVerdict::Unique } else { SolveVerdict::NoneFound },
        notes,
    })
}

/// Max over pairings of the nearest-neighbour distance between two solution
/// sets; infinite when the sets differ in size or are empty.
pub fn solution_set_distance(a: &SolveReport, b: &SolveReport) -> f64 {
    if a.solutions.len() != b.solutions.len() || a.solutions.is_empty() {
        return f64::INFINITY;
    }
    let one_way = |p: &SolveReport, q: &SolveReport| {
        p.solutions.iter().map(|x| q.distance_to(x).unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Settings {
    pub scm: ScmSettings,
    pub solve: SolveSettings,
    pub grid_points: usize,
    pub functional_tol: f64,
    pub solution_tol: f64,
}

impl Default for Lemma1Settings {
    fn default() -> Self {
        Lemma1Settings {
            scm: ScmSettings::default(),
            solve: SolveSettings::default(),
            grid_points: 20,
            functional_tol: 1e-8,
            solution_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    /// Set when either induced SCM could not be built.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub parents_equal: bool,
    /// `None` when some pair of functions is not available in closed form.
    pub closed_forms_equal: Option<bool>,
    pub functional_max_deviation: f64,
    pub grid_points: usize,
    pub lee_verdict: Option<SolveVerdict>,
    pub scm_verdict: Option<SolveVerdict>,
    /// Distance between the solution sets of the intervened LEE and of both SCMs.
    pub solution_max_deviation: f64,
    pub functional_tol: f64,
    pub solution_tol: f64,
    pub passed: bool,
}

impl Lemma1Report {
    fn failed(msg: String, s: &Lemma1Settings) -> Self {
        Lemma1Report {
            failure: Some(msg),
            parents_equal: false,
            closed_forms_equal: None,
            functional_max_deviation: f64::INFINITY,
            grid_points: 0,
            lee_verdict: None,
            scm_verdict: None,
            solution_max_deviation: f64::INFINITY,
            functional_tol: s.functional_tol,
            solution_tol: s.solution_tol,
            passed: false,
        }
    }
}

/// Compares `intervene_scm(induce_scm(e), s)` with
/// `induce_scm(intervene_lee(e, s))` on a seeded grid, and both solution
/// sets with that of the intervened LEE.
pub fn check_lemma1(e: &Lee, s: &InterventionSpec, settings: &Lemma1Settings) -> Result<Lemma1Report, ScmError> {
    let intervened = intervene_lee(e, s)?;
    let left = match induce_scm(e, &settings.scm) {
        Ok(m) => intervene_scm(&m, s)?,
        Err(ScmError::NotStructurallySolvable { atom, witness, .. }) => {
            return Ok(Lemma1Report::failed(format!("LEE not structurally solvable at {atom} ({witness})"), settings))
        }
        Err(err) => return Err(err),
    };
    let right = match induce_scm(&intervened, &settings.scm) {
        Ok(m) => m,
        Err(ScmError::NotStructurallySolvable { atom, witness, .. }) => {
            return Ok(Lemma1Report::failed(
                format!("intervened LEE not structurally solvable at {atom} ({witness})"),
                settings,
            ))
        }
        Err(err) => return Err(err),
    };
    let parents_equal = left.parents() == right.parents();
    let closed_forms_equal = left
        .fns
        .iter()
        .zip(&right.fns)
        .map(|(l, r)| match (&l.body, &r.body) {
            (Body::Closed(a), Body::Closed(b)) => Some(a == b),
            _ => None,
        })
        .collect::<Option<Vec<bool>>>()
        .map(|v| v.into_iter().all(|b| b));

    let grid = start_points(
        &intervened.layout().clone(),
        &intervened.layout().init_state(),
        &SolveSettings { n_starts: settings.grid_points, ..settings.solve.clone() },
    );
    let mut functional_max_deviation: f64 = 0.0;
    for x in &grid {
        for a in 0..left.fns.len() {
            let d = match (left.eval_fn(a, x), right.eval_fn(a, x)) {
                (Ok(u), Ok(v)) => max_dist(&u, &v),
                _ => f64::INFINITY,
            };
            functional_max_deviation = functional_max_deviation.max(d);
        }
    }

    let lee = solve_lee(&intervened, &settings.solve)?;
    let sl = solve_scm(&left, &settings.solve)?;
    let sr = solve_scm(&right, &settings.solve)?;
    let solution_max_deviation = solution_set_distance(&lee, &sl).max(solution_set_distance(&lee, &sr));
    let passed = parents_equal
        && closed_forms_equal != Some(false)
        && functional_max_deviation <= settings.functional_tol
        && solution_max_deviation <= settings.solution_tol;
    Ok(Lemma1Report {
        failure: None,
        parents_equal,
        closed_forms_equal,
        functional_max_deviation,
        grid_points: grid.len(),
        lee_verdict: Some(lee.verdict),
        scm_verdict: Some(sl.verdict),
        solution_max_deviation,
        functional_tol: settings.functional_tol,
        solution_tol: settings.solution_tol,
        passed,
    })
}

/// Components whose structural function is a constant (such as momenta
/// that vanish at every equilibrium), and the components that remain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub kept: Vec<String>,
    pub dropped: BTreeMap<String, f64>,
}

pub fn projection(m: &Scm) -> Projection {
    let mut kept = Vec::new();
    let mut dropped = BTreeMap::new();
    for f in &m.fns {
        let members = &m.layout.atoms()[f.target].members;
        for (k, &v) in members.iter().enumerate() {
            let name = m.layout.vars()[v].name.clone();
            match (&f.body, f.compiled.component(k).as_const()) {
                (Body::Closed(_), Some(c)) if members.len() > 1 => {
                    dropped.insert(name, c);
                }
                _ => kept.push(name),
            }
        }
    }
    Projection { kept, dropped }
}

/// Atoms whose own equation does not involve them. Structural stability of
/// the dynamics needs self-dependence, so these are worth a warning.
pub fn missing_self_dependence(e: &Lee) -> Vec<String> {
    e.parents()
        .iter()
        .enumerate()
        .filter(|(i, ps)| !ps.contains(i))
        .map(|(i, _)| e.layout().atoms()[i].name.clone())
        .collect()
}

impl fmt::Display for Scm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for sf in &self.fns {
            let atom = &self.layout.atoms()[sf.target];
            let names: Vec<&str> = atom.members.iter().map(|&v| self.layout.vars()[v].name.as_str()).collect();
            match &sf.body {
                Body::Closed(hs) => {
                    for (n, h) in names.iter().zip(hs) {
                        writeln!(f, "{n} := {h}")?;
                    }
                }
                Body::Implicit(rs) => {
                    let rs: Vec<String> = rs.iter().map(Expr::to_string).collect();
                    writeln!(f, "({}) := solve 0 = [{}]", names.join(", "), rs.join(", "))?;
                }
            }
        }
        Ok(())
    }
}

impl Serialize for Scm {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Function<'a> {
            kind: &'static str,
            #[serde(skip_serializing_if = "Option::is_none")]
            expr: Option<Vec<String>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            residual: Option<Vec<String>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            source: Option<&'a str>,
            #[serde(skip_serializing_if = "Option::is_none")]
            template: Option<String>,
        }
        let atoms: Vec<&str> = self.layout.atoms().iter().map(|a| a.name.as_str()).collect();
        let parents: IndexMap<&str, Vec<&str>> = self
            .fns
            .iter()
            .map(|f| (atoms[f.target], f.parents.iter().map(|&p| atoms[p]).collect()))
            .collect();
        let functions: IndexMap<&str, Function> = self
            .fns
            .iter()
            .map(|f| {
                let strings = |es: &[Expr]| es.iter().map(Expr::to_string).collect::<Vec<_>>();
                let func = match &f.body {
                    Body::Closed(hs) => {
                        Function { kind: "closed", expr: Some(strings(hs)), residual: None, source: None, template: None }
                    }
                    Body::Implicit(rs) => Function {
                        kind: "implicit",
                        expr: None,
                        residual: Some(strings(rs)),
                        source: Some(&self.name),
                        template: Some(format!(
                            "do({})",
                            atoms.iter().filter(|a| **a != atoms[f.target]).copied().collect::<Vec<_>>().join(", ")
                        )),
                    },
                };
                (atoms[f.target], func)
            })
            .collect();
        let mut st = ser.serialize_struct("Scm", 5)?;
        st.serialize_field("name", &self.name)?;
        st.serialize_field("atoms", &atoms)?;
        st.serialize_field("parents", &parents)?;
        st.serialize_field("functions", &functions)?;
        st.serialize_field("graph", &self.graph())?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lee::derive_lee;
    use crate::model::parse_model;

    const LV: &str = "model lv
param th11 = 1
param th12 = 1
param th21 = 1
param th22 = 1
var X1 in [0, inf] init 1
var X2 in [0, inf] init 0.5
ddt X1 = X1*(th11 - th12*X2)
ddt X2 = -X2*(th22 - th21*X1)
";

    const CHAIN: &str = "model chain
param a = 2
var X in [-inf, inf] init 0
var Y in [-inf, inf] init 0
ddt X = a - X
ddt Y = X - 2*Y
";

    #[test]
    fn lv_fails_at_x1_with_singular_witness() {
        let e = derive_lee(&parse_model(LV).unwrap());
        let r = check_structural_solvability(&e, &StructuralSettings::default()).unwrap();
        let fail = r.first_failure().unwrap();
        assert_eq!(fail.atom, "X1");
        assert_eq!(fail.method, SolvabilityMethod::AffineSingular);
        assert!((fail.witness.as_ref().unwrap()["X2"][0] - 1.0).abs() < 1e-9);
        assert!(matches!(induce_scm(&e, &ScmSettings::default()), Err(ScmError::NotStructurallySolvable { .. })));
    }

    #[test]
    fn affine_chain_has_closed_forms() {
        let e = derive_lee(&parse_model(CHAIN).unwrap());
        let m = induce_scm(&e, &ScmSettings::default()).unwrap();
        assert!(m.functions().iter().all(StructuralFn::is_closed));
        assert_eq!(m.to_string(), "X := a\nY := X / 2\n");
        assert!(m.graph().is_acyclic());
        let r = solve_scm(&m, &SolveSettings::default()).unwrap();
        assert_eq!(r.solutions, vec![vec![2.0, 1.0]]);
    }

    #[test]
    fn implicit_matches_closed_form() {
        let e = derive_lee(&parse_model(CHAIN).unwrap());
        let closed = induce_scm(&e, &ScmSettings::default()).unwrap();
        let implicit = induce_scm(&e, &ScmSettings { closed_forms: false, ..Default::default() }).unwrap();
        for x in [[0.0, 0.0], [3.5, -1.0], [-4.0, 9.0]] {
            for a in 0..2 {
                let u = closed.eval_fn(a, &x).unwrap();
                let v = implicit.eval_fn(a, &x).unwrap();
                assert!(max_dist(&u, &v) < 1e-10);
            }
        }
    }

    #[test]
    fn intervention_replaces_function() {
        let e = derive_lee(&parse_model(CHAIN).unwrap());
        let m = induce_scm(&e, &ScmSettings::default()).unwrap();
        let d = intervene_scm(&m, &InterventionSpec::hard([("X", vec![-3.0])])).unwrap();
        assert!(d.functions()[0].parents.is_empty());
        let r = solve_scm(&d, &SolveSettings::default()).unwrap();
        assert_eq!(r.solutions, vec![vec![-3.0, -1.5]]);
        assert_eq!(intervene_scm(&m, &InterventionSpec::empty()).unwrap(), m);
    }

    #[test]
    fn lemma1_on_chain() {
        let e = derive_lee(&parse_model(CHAIN).unwrap());
        let r = check_lemma1(&e, &InterventionSpec::hard([("Y", vec![0.25])]), &Lemma1Settings::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.closed_forms_equal, Some(true));
    }

    #[test]
    fn degenerate_lee_is_not_solvable() {
        let e = derive_lee(&parse_model("model z\nvar X in [-inf, inf] init 0\nddt X = 0\n").unwrap());
        let r = check_structural_solvability(&e, &StructuralSettings::default()).unwrap();
        assert!(!r.solvable);
    }

    #[test]
    fn constant_target_has_no_parents() {
        let e = derive_lee(&parse_model("model c\nvar x in [-inf, inf] init 0\nddt x = x - 4\n").unwrap());
        let m = induce_scm(&e, &ScmSettings::default()).unwrap();
        assert!(m.functions()[0].parents.is_empty());
        assert_eq!(m.eval_fn(0, &[0.0]).unwrap(), vec![4.0]);
    }
}
