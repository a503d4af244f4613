//! Multi-start damped Newton for square nonlinear systems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::cluster_points;
use crate::expr::EvalError;
use crate::field::central_jacobian;
use crate::model::Layout;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSettings {
    pub n_starts: usize,
    pub seed: u64,
    /// Acceptance threshold on `max_i |r_i|`.
    pub tol: f64,
    /// Half-width of the start box around the initial state.
    pub box_radius: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings { n_starts: 32, seed: 0, tol: 1e-8, box_radius: 5.0, max_iter: 100, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveVerdict {
    Unique,
    Multiple,
    NoneFound,
    /// One solution cluster, reached by fewer than half of the starts.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Cluster representatives, ordered by first discovering start.
    pub solutions: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Number of starts that ended in each cluster.
    pub support: Vec<usize>,
    pub starts: usize,
    pub converged_starts: usize,
    pub verdict: SolveVerdict,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SolveReport {
    pub fn unique_solution(&self) -> Option<&[f64]> {
        (self.verdict == SolveVerdict::Unique).then(|| self.solutions[0].as_slice())
    }

    /// Max-norm distance from `x` to the nearest reported solution.
    pub fn distance_to(&self, x: &[f64]) -> Option<f64> {
        self.solutions.iter().map(|s| max_dist(s, x)).min_by(f64::total_cmp)
    }
}

pub(crate) fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

fn norm2(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub singular_steps: usize,
    pub iterations: usize,
}

/// Damped Newton from `x0`. Singular Jacobians fall back to a least-squares
/// step. Iterates past `tol` until the residual drops another three orders of
/// magnitude or stops improving, so cluster radii near `10 * tol` separate
/// cleanly.
pub(crate) fn newton_from<F>(f: &F, x0: &[f64], s: &SolveSettings) -> NewtonOutcome
where
    F: Fn(&[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    let mut singular_steps = 0;
    let fail = |x: Vec<f64>, singular_steps, iterations| NewtonOutcome {
        x,
        residual: f64::INFINITY,
        converged: false,
        singular_steps,
        iterations,
    };
    if f(&x, &mut r).is_err() || r.iter().any(|v| !v.is_finite()) {
        return fail(x, 0, 0);
    }
    let target = 1e-3 * s.tol;
    let mut iterations = 0;
    while iterations < s.max_iter && max_abs(&r) > target {
        iterations += 1;
        let Ok(jac) = central_jacobian(n, &x, f) else { break };
        let rhs = DVector::from_column_slice(&r);
        let step = match jac.clone().lu().solve(&rhs) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                singular_steps += 1;
                match least_squares(jac, &rhs) {
                    Some(d) => d,
                    None => break,
                }
            }
        };
        let base = norm2(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=s.max_halvings {
            for i in 0..n {
                trial[i] = x[i] - lambda * step[i];
            }
            if f(&trial, &mut r_trial).is_ok() && r_trial.iter().all(|v| v.is_finite()) && norm2(&r_trial) < base {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut r, &mut r_trial);
    }
    let residual = max_abs(&r);
    NewtonOutcome { x, residual, converged: residual <= s.tol, singular_steps, iterations }
}

fn least_squares(jac: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = jac.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps).ok().filter(|d| d.iter().all(|v| v.is_finite()) && d.iter().any(|v| *v != 0.0))
}

/// Seeded start points drawn uniformly from `init ± radius` clipped to the
/// domains of `layout`.
pub(crate) fn start_points(layout: &Layout, init: &[f64], s: &SolveSettings) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let bounds: Vec<(f64, f64)> =
        layout.vars().iter().zip(init).map(|(v, &c)| v.domain.clip_box(c, s.box_radius)).collect();
    (0..s.n_starts)
        .map(|_| bounds.iter().map(|&(lo, hi)| if lo < hi { rng.random_range(lo..hi) } else { lo }).collect())
        .collect()
}

/// Runs Newton from every start in parallel, drops converged points outside
/// `admissible`, clusters the rest with radius `10 * tol`, and classifies.
pub(crate) fn multi_start<F>(
    f: &F,
    starts: Vec<Vec<f64>>,
    admissible: &(dyn Fn(&[f64]) -> bool + Sync),
    s: &SolveSettings,
) -> SolveReport
where
    F: Fn(&[f64], &mut [f64]) -> Result<(), EvalError> + Sync,
{
    let n_starts = starts.len();
    let outcomes: Vec<NewtonOutcome> = starts.into_par_iter().map(|x0| newton_from(f, &x0, s)).collect();
    let mut notes = Vec::new();
    let converged: Vec<&NewtonOutcome> = outcomes.iter().filter(|o| o.converged).collect();
    let kept: Vec<Vec<f64>> = converged.iter().filter(|o| admissible(&o.x)).map(|o| o.x.clone()).collect();
    if kept.len() < converged.len() {
        notes.push(format!("{} converged starts left the variable domains", converged.len() - kept.len()));
    }
    if converged.is_empty() && outcomes.iter().all(|o| o.iterations > 0 && o.singular_steps == o.iterations) {
        notes.push("Jacobian singular at every iterate of every start".into());
    }
    let clusters = cluster_points(&kept, 10.0 * s.tol);
    let mut solutions = Vec::with_capacity(clusters.len());
    let mut residuals = Vec::with_capacity(clusters.len());
    let mut support = Vec::with_capacity(clusters.len());
    let mut r = vec![0.0; kept.first().map_or(0, Vec::len)];
    for c in &clusters {
        let rep = crate::dynamics::centroid(&kept, c);
        let res = match f(&rep, &mut r) {
            Ok(()) => max_abs(&r),
            Err(_) => f64::NAN,
        };
        // Averaging can only hurt on curved solution sets; keep the best member then.
        let (rep, res) = if res <= s.tol {
            (rep, res)
        } else {
            let best = c
                .iter()
                .map(|&i| (i, f(&kept[i], &mut r).map(|_| max_abs(&r)).unwrap_or(f64::NAN)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("cluster is nonempty");
            (kept[best.0].clone(), best.1)
        };
        solutions.push(rep);
        residuals.push(res);
        support.push(c.len());
    }
    let verdict = match clusters.len() {
        0 => SolveVerdict::NoneFound,
        1 if 2 * support[0] >= n_starts => SolveVerdict::Unique,
        1 => SolveVerdict::Inconclusive,
        _ => SolveVerdict::Multiple,
    };
    SolveReport { solutions, residuals, support, starts: n_starts, converged_starts: kept.len(), verdict, notes }
}
