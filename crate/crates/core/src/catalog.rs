//! Bundled example models and generators for their parameter families.

use std::fmt::Write as _;

use thiserror::Error;

use crate::intervention::InterventionSpec;
use crate::model::{parse_model, Model, ParseError};

/// Shipped model files, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("lotka_volterra", include_str!("../../../models/lotka_volterra.mdl")),
    ("mass_spring_d4", include_str!("../../../models/mass_spring_d4.mdl")),
    ("mass_spring_d2", include_str!("../../../models/mass_spring_d2.mdl")),
    ("cubic_cascade", include_str!("../../../models/cubic_cascade.mdl")),
    ("nonlinear_feedback", include_str!("../../../models/nonlinear_feedback.mdl")),
    ("labeling_a", include_str!("../../../models/labeling_a.mdl")),
    ("labeling_b", include_str!("../../../models/labeling_b.mdl")),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("no bundled model named `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Dimension(String),
    #[error("parameter `{name}` must be {requirement}, got {value}")]
    Sign { name: String, requirement: &'static str, value: f64 },
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<Model, CatalogError> {
    let text = source(name).ok_or_else(|| CatalogError::Unknown(name.to_string()))?;
    Ok(parse_model(text)?)
}

/// Interventions exercised by the test suite on each bundled model.
pub fn interventions(name: &str) -> Vec<InterventionSpec> {
    let h = |items: &[(&str, &[f64])]| InterventionSpec::hard(items.iter().map(|(k, v)| (*k, v.to_vec())));
    match name {
        "lotka_volterra" => vec![h(&[("X2", &[2.0])]), h(&[("X2", &[1.5])])],
        "mass_spring_d4" => vec![InterventionSpec::empty(), h(&[("X2", &[1.7, 0.0])]), h(&[("X1", &[0.4, 0.0])])],
        "mass_spring_d2" => vec![InterventionSpec::empty(), h(&[("X2", &[2.5, 0.0])]), h(&[("X1", &[0.4, 0.0])])],
        "cubic_cascade" => vec![InterventionSpec::empty(), h(&[("X1", &[0.5])]), h(&[("X2", &[-1.0])])],
        "nonlinear_feedback" => vec![InterventionSpec::empty(), h(&[("X2", &[0.3])])],
        "labeling_a" | "labeling_b" => vec![h(&[("X2", &[3.0])])],
        _ => Vec::new(),
    }
}

fn positive(name: String, value: f64) -> Result<(), CatalogError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(CatalogError::Sign { name, requirement: "positive", value })
    }
}

/// Chain of `d` damped masses between walls at `0` and `length`, with
/// springs `k[0..=d]` of rest lengths `l[0..=d]`, frictions `b[0..d]`, and
/// masses `m[0..d]`. Atom `X{i}` groups `(Q{i}, P{i})`.
pub fn mass_spring_model(d: usize, k: &[f64], l: &[f64], b: &[f64], m: &[f64], length: f64) -> Result<Model, CatalogError> {
    if d == 0 {
        return Err(CatalogError::Dimension("need at least one mass".into()));
    }
    for (what, got, want) in [("k", k.len(), d + 1), ("l", l.len(), d + 1), ("b", b.len(), d), ("m", m.len(), d)] {
        if got != want {
            return Err(CatalogError::Dimension(format!("`{what}` has {got} entries, expected {want}")));
        }
    }
    for (i, &v) in k.iter().enumerate() {
        positive(format!("k{i}"), v)?;
    }
    for (i, (&bi, &mi)) in b.iter().zip(m).enumerate() {
        positive(format!("b{}", i + 1), bi)?;
        positive(format!("m{}", i + 1), mi)?;
    }
    let mut s = String::new();
    writeln!(s, "model mass_spring_d{d}").unwrap();
    for (p, vals) in [("k", k), ("l", l)] {
        for (i, v) in vals.iter().enumerate() {
            writeln!(s, "param {p}{i} = {v:?}").unwrap();
        }
    }
    for (p, vals) in [("b", b), ("m", m)] {
        for (i, v) in vals.iter().enumerate() {
            writeln!(s, "param {p}{} = {v:?}", i + 1).unwrap();
        }
    }
    writeln!(s, "param L = {length:?}").unwrap();
    for i in 1..=d {
        let q = (i as f64 - 0.5) * length / (d as f64 + 1.0);
        writeln!(s, "var Q{i} in [-inf, inf] init {q:?}").unwrap();
        writeln!(s, "var P{i} in [-inf, inf] init 0").unwrap();
    }
    for i in 1..=d {
        writeln!(s, "group X{i} = (Q{i}, P{i})").unwrap();
    }
    for i in 1..=d {
        let right = if i < d { format!("Q{}", i + 1) } else { "L".into() };
        let left = if i > 1 { format!("k{0}*(Q{i} - Q{0} - l{0})", i - 1) } else { "k0*(Q1 - l0)".into() };
        writeln!(s, "ddt Q{i} = P{i}/m{i}").unwrap();
        writeln!(s, "ddt P{i} = k{i}*({right} - Q{i} - l{i}) - {left} - (b{i}/m{i})*P{i}").unwrap();
    }
    Ok(parse_model(&s)?)
}

/// Predator-prey system with prey `X1` starting at `a` and predators `X2`
/// at `b`.
pub fn lotka_volterra_model(th11: f64, th12: f64, th21: f64, th22: f64, a: f64, b: f64) -> Result<Model, CatalogError> {
    for (name, v) in [("th11", th11), ("th12", th12), ("th21", th21), ("th22", th22)] {
        positive(name.into(), v)?;
    }
    for (name, v) in [("a", a), ("b", b)] {
        if !(v >= 0.0) {
            return Err(CatalogError::Sign { name: name.into(), requirement: "non-negative", value: v });
        }
    }
    let s = format!(
        "model lotka_volterra
param th11 = {th11:?}
param th12 = {th12:?}
param th21 = {th21:?}
param th22 = {th22:?}
var X1 in [0, inf] init {a:?}
var X2 in [0, inf] init {b:?}
ddt X1 = X1*(th11 - th12*X2)
ddt X2 = -X2*(th22 - th21*X1)
"
    );
    Ok(parse_model(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_file_parses() {
        for (name, _) in BUNDLED {
            let m = load(name).unwrap();
            assert_eq!(m.name(), *name);
        }
        assert!(matches!(load("nope"), Err(CatalogError::Unknown(_))));
    }

    #[test]
    fn shipped_files_match_generators() {
        assert_eq!(load("lotka_volterra").unwrap(), lotka_volterra_model(1.0, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap());
        let ones = |n| vec![1.0; n];
        assert_eq!(load("mass_spring_d4").unwrap(), mass_spring_model(4, &ones(5), &ones(5), &ones(4), &ones(4), 5.0).unwrap());
        assert_eq!(load("mass_spring_d2").unwrap(), mass_spring_model(2, &ones(3), &ones(3), &ones(2), &ones(2), 3.0).unwrap());
    }

    #[test]
    fn generator_checks_arguments() {
        assert!(matches!(mass_spring_model(2, &[1.0; 2], &[1.0; 3], &[1.0; 2], &[1.0; 2], 3.0), Err(CatalogError::Dimension(_))));
        assert!(matches!(mass_spring_model(1, &[1.0, 0.0], &[1.0; 2], &[1.0], &[1.0], 3.0), Err(CatalogError::Sign { .. })));
        assert!(matches!(lotka_volterra_model(1.0, -1.0, 1.0, 1.0, 1.0, 1.0), Err(CatalogError::Sign { .. })));
        assert!(matches!(lotka_volterra_model(1.0, 1.0, 1.0, 1.0, -0.1, 1.0), Err(CatalogError::Sign { .. })));
    }
}
