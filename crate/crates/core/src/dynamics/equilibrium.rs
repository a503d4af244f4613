use serde::Serialize;

use super::integrate::{Termination, Trajectory};
use super::jacobian::{eigenvalues, jacobian, Eigenvalue};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Oscillatory,
    Diverged,
    Ambiguous,
}

/// Per-initial-state summary inside a probing report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub init: Vec<f64>,
    pub verdict: Verdict,
    pub limit: Option<Vec<f64>>,
    pub residual: f64,
    pub final_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub point: Option<Vec<f64>>,
    /// `max_i |f_i|` at `point`, or at the last sample when there is none.
    pub residual: f64,
    pub verdict: Verdict,
    /// Spectrum of the Jacobian at `point`.
    pub jacobian_eigenvalues: Option<Vec<Eigenvalue>>,
    pub basin_samples: usize,
    pub distinct_limits: usize,
    /// One representative per limit cluster.
    pub limits: Vec<Vec<f64>>,
    /// True only for probes where every sample converged to a single cluster.
    pub stable: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleOutcome>,
    /// `(t, max_i |f_i|)` for every recorded sample of a single trajectory.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub residual_series: Vec<(f64, f64)>,
}

/// Length of the trailing window used by the convergence test.
pub fn window_len(samples: usize) -> usize {
    10usize.max((0.05 * samples as f64).ceil() as usize)
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x) })
}

/// Classifies the tail of a trajectory.
///
/// Converged when every residual in the trailing window is at most `tol`;
/// oscillatory when the trailing maximum exceeds `tol` but stays within a
/// factor of two of the maximum over a window in the middle of the run.
pub fn detect_equilibrium(traj: &Trajectory, m: &Model, tol: f64) -> EquilibriumReport {
    let residuals: Vec<f64> = match m.compile() {
        Ok(field) => traj.states.iter().map(|x| field.max_abs(x).unwrap_or(f64::NAN)).collect(),
        Err(_) => vec![f64::NAN; traj.states.len()],
    };
    let len = residuals.len();
    let w = window_len(len).min(len);
    let trailing = max_of(&residuals[len - w..]);
    let mid_start = (len / 2).saturating_sub(w / 2).min(len - w);
    let mid = max_of(&residuals[mid_start..mid_start + w]);

    let verdict = if traj.termination == Termination::Diverged {
        Verdict::Diverged
    } else if trailing <= tol {
        Verdict::Converged
    } else if trailing.is_finite() && mid.is_finite() && trailing <= 2.0 * mid && 2.0 * trailing >= mid {
        Verdict::Oscillatory
    } else {
        Verdict::Ambiguous
    };

    let last = traj.last_state().to_vec();
    let converged = verdict == Verdict::Converged;
    let jacobian_eigenvalues = converged.then(|| jacobian(m, &last).ok().map(|j| eigenvalues(&j))).flatten();
    EquilibriumReport {
        point: converged.then(|| last.clone()),
        residual: residuals[len - 1],
        verdict,
        jacobian_eigenvalues,
        basin_samples: 1,
        distinct_limits: usize::from(converged),
        limits: if converged { vec![last] } else { Vec::new() },
        stable: false,
        samples: Vec::new(),
        residual_series: traj.times.iter().copied().zip(residuals.iter().copied()).collect(),
    }
}
