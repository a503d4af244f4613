//! Perfect interventions `do(X_I = xi_I)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    /// Replace the dynamics of the targets by `d/dt x = 0`.
    Hard,
    /// Add `kappa * (xi - x)` feedback to the targets' dynamics.
    Soft { kappa: f64 },
}

/// Targets keyed by atom name, with one clamp value per member variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionSpec {
    pub targets: BTreeMap<String, Vec<f64>>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterventionError {
    #[error("unknown intervention target `{0}`")]
    UnknownTarget(String),
    #[error("atom `{atom}` has {expected} member(s) but {got} value(s) were given")]
    Arity { atom: String, expected: usize, got: usize },
    #[error("value {value} for `{var}` violates its domain")]
    DomainViolation { var: String, value: f64 },
    #[error("gain must be positive, got {0}")]
    NonPositiveGain(f64),
    #[error("expected a hard intervention")]
    NotHard,
    #[error("expected a soft intervention")]
    NotSoft,
    #[error("malformed do-clause: {0}")]
    Syntax(String),
}

/// A target resolved against a layout: atom index and `(variable, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTarget {
    pub atom: usize,
    pub clamps: Vec<(usize, f64)>,
}

impl InterventionSpec {
    pub fn empty() -> Self {
        InterventionSpec { targets: BTreeMap::new(), mode: Mode::Hard }
    }

    pub fn hard<S: Into<String>>(targets: impl IntoIterator<Item = (S, Vec<f64>)>) -> Self {
        InterventionSpec { targets: targets.into_iter().map(|(k, v)| (k.into(), v)).collect(), mode: Mode::Hard }
    }

    pub fn soft<S: Into<String>>(targets: impl IntoIterator<Item = (S, Vec<f64>)>, kappa: f64) -> Self {
        InterventionSpec {
            targets: targets.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            mode: Mode::Soft { kappa },
        }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn require_hard(&self) -> Result<(), InterventionError> {
        match self.mode {
            Mode::Hard => Ok(()),
            Mode::Soft { .. } => Err(InterventionError::NotHard),
        }
    }

    /// Checks targets and arities against `layout`. Targets come back in
    /// atom order.
    pub fn resolve(&self, layout: &Layout) -> Result<Vec<ResolvedTarget>, InterventionError> {
        if let Mode::Soft { kappa } = self.mode {
            if !(kappa > 0.0) {
                return Err(InterventionError::NonPositiveGain(kappa));
            }
        }
        let mut out = Vec::with_capacity(self.targets.len());
        for (name, values) in &self.targets {
            let atom = layout.atom_index(name).ok_or_else(|| InterventionError::UnknownTarget(name.clone()))?;
            let members = &layout.atoms()[atom].members;
            if members.len() != values.len() {
                return Err(InterventionError::Arity { atom: name.clone(), expected: members.len(), got: values.len() });
            }
            out.push(ResolvedTarget { atom, clamps: members.iter().copied().zip(values.iter().copied()).collect() });
        }
        out.sort_by_key(|t| t.atom);
        Ok(out)
    }

    /// Parses `atom=value` / `atom=(v1, v2, ...)` items separated by commas.
    /// An empty string is the empty intervention. `kappa` selects soft mode.
    pub fn parse(text: &str, layout: &Layout, kappa: Option<f64>) -> Result<Self, InterventionError> {
        let mut targets = BTreeMap::new();
        let mut rest = text.trim();
        while !rest.is_empty() {
            let eq = rest.find('=').ok_or_else(|| InterventionError::Syntax(format!("missing `=` in `{rest}`")))?;
            let atom = rest[..eq].trim();
            if atom.is_empty() {
                return Err(InterventionError::Syntax("missing target name".into()));
            }
            let after = rest[eq + 1..].trim_start();
            let (values, tail) = if let Some(inner) = after.strip_prefix('(') {
                let close = inner.find(')').ok_or_else(|| InterventionError::Syntax("unclosed `(`".into()))?;
                let values = inner[..close].split(',').map(parse_real).collect::<Result<Vec<_>, _>>()?;
                (values, &inner[close + 1..])
            } else {
                let end = after.find(',').unwrap_or(after.len());
                (vec![parse_real(&after[..end])?], &after[end..])
            };
            let tail = tail.trim_start();
            rest = match tail.strip_prefix(',') {
                Some(t) => t.trim_start(),
                None if tail.is_empty() => tail,
                None => return Err(InterventionError::Syntax(format!("unexpected `{tail}`"))),
            };
            if targets.insert(atom.to_string(), values).is_some() {
                return Err(InterventionError::Syntax(format!("`{atom}` given twice")));
            }
        }
        let mode = match kappa {
            Some(kappa) => Mode::Soft { kappa },
            None => Mode::Hard,
        };
        let spec = InterventionSpec { targets, mode };
        spec.resolve(layout)?;
        Ok(spec)
    }
}

fn parse_real(s: &str) -> Result<f64, InterventionError> {
    let s = s.trim();
    s.parse::<f64>().map_err(|_| InterventionError::Syntax(format!("`{s}` is not a number")))
}

impl fmt::Display for InterventionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("do(")?;
        for (i, (atom, values)) in self.targets.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if values.len() == 1 {
                write!(f, "{atom}={}", values[0])?;
            } else {
                let vs: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(f, "{atom}=({})", vs.join(", "))?;
            }
        }
        f.write_str(")")?;
        if let Mode::Soft { kappa } = self.mode {
            write!(f, " with kappa={kappa}")?;
        }
        Ok(())
    }
}
