//! Sampled stability probing.
//!
//! Uniqueness and global attraction cannot be decided numerically, so every
//! verdict here is relative to a seeded set of initial states (and clamp
//! values). A "stable" verdict means no sample refuted stability.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::equilibrium::{detect_equilibrium, EquilibriumReport, SampleOutcome, Verdict};
use super::integrate::{integrate_from, IntegrationSettings};
use super::intervene::apply_hard_intervention;
use super::jacobian::{eigenvalues, jacobian};
use super::DynamicsError;
use crate::intervention::InterventionSpec;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSettings {
    pub n_samples: usize,
    pub seed: u64,
    /// Half-width of the sampling box around the initial state.
    pub box_radius: f64,
    pub integration: IntegrationSettings,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings { n_samples: 16, seed: 0, box_radius: 5.0, integration: IntegrationSettings::default() }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Groups points whose max-norm distance chains below `radius`.
/// Clusters are ordered by their first member.
pub fn cluster_points(points: &[Vec<f64>], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if d <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(i);
    }
    clusters.into_values().collect()
}

pub(crate) fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[members[0]].len();
    let mut c = vec![0.0; dim];
    for &i in members {
        for (ck, pk) in c.iter_mut().zip(&points[i]) {
            *ck += pk;
        }
    }
    c.iter_mut().for_each(|x| *x /= members.len() as f64);
    c
}

/// Integrates from `n_samples` seeded initial states drawn from the box
/// `init ± box_radius` intersected with the domains. Clamped variables keep
/// their clamp value. Limits are clustered with radius `10 * tol`.
pub fn probe_stability(m: &Model, s: &ProbeSettings) -> Result<EquilibriumReport, DynamicsError> {
    if s.n_samples < 2 {
        return Err(DynamicsError::InvalidSettings("probing needs at least 2 samples".into()));
    }
    let mut bounds = Vec::with_capacity(m.vars().len());
    for (i, v) in m.vars().iter().enumerate() {
        let (lo, hi) = if m.is_clamped(i) { (v.init, v.init) } else { v.domain.clip_box(v.init, s.box_radius) };
        if !(lo <= hi) {
            return Err(DynamicsError::EmptySamplingBox(v.name.clone()));
        }
        bounds.push((lo, hi));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let inits: Vec<Vec<f64>> =
        (0..s.n_samples).map(|_| bounds.iter().map(|&(lo, hi)| uniform(&mut rng, lo, hi)).collect()).collect();

    let tol = s.integration.tol;
    let samples: Vec<SampleOutcome> = inits
        .into_par_iter()
        .map(|x0| match integrate_from(m, &x0, &s.integration) {
            Ok(traj) => {
                let r = detect_equilibrium(&traj, m, tol);
                SampleOutcome {
                    init: x0,
                    verdict: r.verdict,
                    limit: r.point,
                    residual: r.residual,
                    final_time: traj.final_time(),
                    error: None,
                }
            }
            Err(e) => SampleOutcome {
                init: x0,
                verdict: Verdict::Ambiguous,
                limit: None,
                residual: f64::NAN,
                final_time: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let limits: Vec<Vec<f64>> = samples.iter().filter_map(|o| o.limit.clone()).collect();
    let clusters = cluster_points(&limits, 10.0 * tol);
    let reps: Vec<Vec<f64>> = clusters.iter().map(|c| centroid(&limits, c)).collect();
    let all_converged = samples.iter().all(|o| o.verdict == Verdict::Converged);
    let stable = all_converged && clusters.len() == 1;
    let verdict = if stable {
        Verdict::Converged
    } else if samples.iter().any(|o| o.verdict == Verdict::Diverged) {
        Verdict::Diverged
    } else if samples.iter().any(|o| o.verdict == Verdict::Oscillatory) {
        Verdict::Oscillatory
    } else {
        Verdict::Ambiguous
    };
    let point = stable.then(|| reps[0].clone());
    let residual = match &point {
        Some(p) => m.compile().ok().and_then(|f| f.max_abs(p).ok()).unwrap_or(f64::NAN),
        None => samples.iter().map(|o| o.residual).fold(0.0, f64::max),
    };
    let jacobian_eigenvalues = point.as_ref().and_then(|p| jacobian(m, p).ok()).map(|j| eigenvalues(&j));
    Ok(EquilibriumReport {
        point,
        residual,
        verdict,
        jacobian_eigenvalues,
        basin_samples: s.n_samples,
        distinct_limits: clusters.len(),
        limits: reps,
        stable,
        samples,
        residual_series: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySettings {
    /// Clamp-value draws per target set.
    pub xi_samples: usize,
    pub probe: ProbeSettings,
    /// Optional per-atom, per-member sampling ranges for clamp values.
    /// Atoms not listed use the probe box.
    pub xi_ranges: BTreeMap<String, Vec<(f64, f64)>>,
}

impl Default for FamilySettings {
    fn default() -> Self {
        FamilySettings { xi_samples: 5, probe: ProbeSettings::default(), xi_ranges: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiOutcome {
    pub xi: BTreeMap<String, Vec<f64>>,
    pub stable: bool,
    pub verdict: Verdict,
    pub limit: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyVerdict {
    pub targets: Vec<String>,
    pub stable: bool,
    pub samples: Vec<XiOutcome>,
}

/// Stability with respect to a family of target sets: for each set, probe
/// the hard-intervened model at `xi_samples` sampled clamp values. The empty
/// target set probes the model itself with the probe seed.
pub fn probe_stability_wrt(
    m: &Model,
    family: &[Vec<String>],
    s: &FamilySettings,
) -> Result<Vec<FamilyVerdict>, DynamicsError> {
    let mut top = ChaCha8Rng::seed_from_u64(s.probe.seed);
    let mut out = Vec::with_capacity(family.len());
    for targets in family {
        let mut rng = ChaCha8Rng::seed_from_u64(top.next_u64());
        if targets.is_empty() {
            let r = probe_stability(m, &s.probe)?;
            out.push(FamilyVerdict {
                targets: Vec::new(),
                stable: r.stable,
                samples: vec![XiOutcome { xi: BTreeMap::new(), stable: r.stable, verdict: r.verdict, limit: r.point }],
            });
            continue;
        }
        let mut samples = Vec::with_capacity(s.xi_samples);
        for _ in 0..s.xi_samples {
            let mut xi = BTreeMap::new();
            for name in targets {
                let atom = m
                    .layout()
                    .atom_index(name)
                    .ok_or_else(|| crate::intervention::InterventionError::UnknownTarget(name.clone()))?;
                let members = &m.atoms()[atom].members;
                let values: Vec<f64> = match s.xi_ranges.get(name) {
                    Some(ranges) => {
                        if ranges.len() != members.len() {
                            return Err(crate::intervention::InterventionError::Arity {
                                atom: name.clone(),
                                expected: members.len(),
                                got: ranges.len(),
                            }
                            .into());
                        }
                        ranges.iter().map(|&(lo, hi)| uniform(&mut rng, lo, hi)).collect()
                    }
                    None => members
                        .iter()
                        .map(|&v| {
                            let d = &m.vars()[v];
                            let (lo, hi) = d.domain.clip_box(d.init, s.probe.box_radius);
                            uniform(&mut rng, lo, hi)
                        })
                        .collect(),
                };
                xi.insert(name.clone(), values);
            }
            let spec = InterventionSpec { targets: xi.clone(), mode: crate::intervention::Mode::Hard };
            let intervened = apply_hard_intervention(m, &spec)?;
            let probe = ProbeSettings { seed: rng.next_u64(), ..s.probe.clone() };
            let r = probe_stability(&intervened, &probe)?;
            samples.push(XiOutcome { xi, stable: r.stable, verdict: r.verdict, limit: r.point });
        }
        out.push(FamilyVerdict { targets: targets.clone(), stable: samples.iter().all(|x| x.stable), samples });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_linkage_chains_close_points() {
        let pts = vec![vec![0.0], vec![0.9], vec![1.8], vec![5.0]];
        assert_eq!(cluster_points(&pts, 1.0), vec![vec![0, 1, 2], vec![3]]);
        assert!(cluster_points(&[], 1.0).is_empty());
    }

    #[test]
    fn probing_needs_two_samples() {
        let m = crate::model::parse_model("model d\nvar X in [-inf, inf] init 1\nddt X = -X\n").unwrap();
        let s = ProbeSettings { n_samples: 1, ..Default::default() };
        assert!(matches!(probe_stability(&m, &s), Err(DynamicsError::InvalidSettings(_))));
        let s = ProbeSettings { box_radius: -1.0, ..Default::default() };
        assert!(matches!(probe_stability(&m, &s), Err(DynamicsError::EmptySamplingBox(_))));
    }

    #[test]
    fn stable_linear_decay() {
        let m = crate::model::parse_model("model d\nvar X in [-inf, inf] init 1\nddt X = 2 - X\n").unwrap();
        let r = probe_stability(&m, &ProbeSettings::default()).unwrap();
        assert!(r.stable);
        assert_eq!(r.distinct_limits, 1);
        assert!((r.point.unwrap()[0] - 2.0).abs() < 1e-7);
    }
}
