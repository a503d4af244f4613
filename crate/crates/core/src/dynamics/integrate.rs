use serde::Serialize;

use super::equilibrium::window_len;
use super::DynamicsError;
use crate::field::VectorField;
use crate::model::Model;

/// Fixed-step integration settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrationSettings {
    pub dt: f64,
    pub t_max: f64,
    /// Convergence threshold on `max_i |f_i(x)|`.
    pub tol: f64,
    /// Time between recorded samples; rounded to a whole number of steps.
    pub sample_interval: f64,
    pub divergence_guard: f64,
    /// Stop as soon as the trailing window satisfies the convergence test.
    pub early_stop: bool,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        IntegrationSettings { dt: 1e-3, t_max: 1e3, tol: 1e-8, sample_interval: 0.1, divergence_guard: 1e12, early_stop: true }
    }
}

impl IntegrationSettings {
    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.t_max > 0.0 && self.sample_interval > 0.0) {
            return Err(DynamicsError::InvalidSettings("dt, t_max and sample_interval must be positive".into()));
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        ((self.sample_interval / self.dt).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ReachedTMax,
    Converged,
    Diverged,
    DomainViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `max_i |f_i|` at each recorded sample.
    pub residuals: Vec<f64>,
    pub termination: Termination,
    /// Recorded samples with some variable outside its declared domain.
    pub domain_violations: usize,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }
}

/// Classic fourth-order Runge-Kutta from the model's initial state.
pub fn integrate(m: &Model, settings: &IntegrationSettings) -> Result<Trajectory, DynamicsError> {
    integrate_from(m, &m.init_state(), settings)
}

pub fn integrate_from(m: &Model, x0: &[f64], settings: &IntegrationSettings) -> Result<Trajectory, DynamicsError> {
    settings.validate()?;
    let field = m.compile().map_err(|source| DynamicsError::Eval { time: 0.0, source })?;
    let n = field.dim();
    assert_eq!(x0.len(), n, "initial state has wrong dimension");

    let steps = (settings.t_max / settings.dt - 1e-9).ceil().max(1.0) as usize;
    let stride = settings.stride();
    let mut rk = Rk4::new(n);
    let mut x = x0.to_vec();
    let in_domain = |x: &[f64]| m.vars().iter().zip(x).all(|(v, &xi)| v.domain.contains(xi));

    let r0 = field.max_abs(&x).map_err(|source| DynamicsError::Eval { time: 0.0, source })?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        residuals: vec![r0],
        termination: Termination::ReachedTMax,
        domain_violations: usize::from(!in_domain(&x)),
    };
    let mut quiet = usize::from(r0 <= settings.tol);

    for step in 1..=steps {
        let t_prev = (step - 1) as f64 * settings.dt;
        let h = settings.dt.min(settings.t_max - t_prev);
        rk.step(&field, &mut x, h).map_err(|source| DynamicsError::Eval { time: t_prev, source })?;
        let t = if step == steps { settings.t_max } else { step as f64 * settings.dt };

        let blown = x.iter().any(|v| !v.is_finite() || v.abs() > settings.divergence_guard);
        if blown || step % stride == 0 || step == steps {
            let r = if blown {
                f64::INFINITY
            } else {
                field.max_abs(&x).map_err(|source| DynamicsError::Eval { time: t, source })?
            };
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.residuals.push(r);
            traj.domain_violations += usize::from(!in_domain(&x));
            if blown {
                traj.termination = Termination::Diverged;
                break;
            }
            quiet = if r <= settings.tol { quiet + 1 } else { 0 };
            if settings.early_stop && quiet >= window_len(traj.times.len()) {
                traj.termination = Termination::Converged;
                break;
            }
        }
    }
    Ok(traj)
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    fn step(&mut self, f: &VectorField, x: &mut [f64], h: f64) -> Result<(), crate::expr::EvalError> {
        let n = x.len();
        f.eval(x, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f.eval(&self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f.eval(&self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f.eval(&self.tmp, &mut self.k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}
