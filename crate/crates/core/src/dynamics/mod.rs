//! Time evolution, interventions on the dynamics, and stability probing.

mod equilibrium;
mod integrate;
mod intervene;
mod jacobian;
mod stability;

use thiserror::Error;

use crate::expr::EvalError;
use crate::intervention::InterventionError;

pub use equilibrium::{detect_equilibrium, window_len, EquilibriumReport, SampleOutcome, Verdict};
pub use integrate::{integrate, integrate_from, IntegrationSettings, Termination, Trajectory};
pub use intervene::{apply_hard_intervention, apply_soft_intervention};
pub use jacobian::{eigenvalues, jacobian, Eigenvalue};
pub(crate) use stability::centroid;
pub use stability::{
    cluster_points, probe_stability, probe_stability_wrt, FamilySettings, FamilyVerdict, ProbeSettings, XiOutcome,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("evaluation failed at t = {time}: {source}")]
    Eval { time: f64, source: EvalError },
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error("empty sampling box for `{0}`")]
    EmptySamplingBox(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}
