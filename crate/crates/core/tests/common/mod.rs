//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use eqcausal::catalog::mass_spring_model;
use eqcausal::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian elimination with partial pivoting on a dense row-major system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        assert!(a[pivot][col].abs() > 1e-14, "singular system");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub d: usize,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub b: Vec<f64>,
    pub m: Vec<f64>,
    pub length: f64,
}

impl Chain {
    pub fn uniform(d: usize, length: f64) -> Chain {
        Chain { d, k: vec![1.0; d + 1], l: vec![1.0; d + 1], b: vec![1.0; d], m: vec![1.0; d], length }
    }

    /// k, l, b, m uniform in [0.5, 2]; L uniform in [D, 2D].
    pub fn random(d: usize, rng: &mut ChaCha8Rng) -> Chain {
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.5..2.0)).collect::<Vec<f64>>();
        let (k, l, b, m) = (draw(d + 1), draw(d + 1), draw(d), draw(d));
        let length = rng.random_range(d as f64..2.0 * d as f64);
        Chain { d, k, l, b, m, length }
    }

    pub fn model(&self) -> Model {
        mass_spring_model(self.d, &self.k, &self.l, &self.b, &self.m, self.length).unwrap()
    }

    /// Equilibrium positions with optional clamps `(mass index 1..=D, position)`,
    /// from the force balance assembled by hand.
    pub fn equilibrium(&self, clamps: &[(usize, f64)]) -> Vec<f64> {
        let d = self.d;
        let (k, l) = (&self.k, &self.l);
        let mut a = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for i in 1..=d {
            let row = i - 1;
            if let Some(&(_, xi)) = clamps.iter().find(|(j, _)| *j == i) {
                a[row][row] = 1.0;
                rhs[row] = xi;
                continue;
            }
            a[row][row] = -(k[i] + k[i - 1]);
            if i < d {
                a[row][row + 1] = k[i];
            }
            if i > 1 {
                a[row][row - 1] = k[i - 1];
            }
            rhs[row] = k[i] * l[i] - k[i - 1] * l[i - 1];
            if i == d {
                rhs[row] -= k[d] * self.length;
            }
        }
        gauss_solve(a, rhs)
    }

    /// Full state `(Q1, P1, Q2, P2, ...)` with zero momenta.
    pub fn full_state(q: &[f64]) -> Vec<f64> {
        q.iter().flat_map(|&qi| [qi, 0.0]).collect()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random polynomial system over 2 to 5 atoms. Some atoms are pairs of
/// variables; some equations omit their own variable.
pub fn random_polynomial_model(rng: &mut ChaCha8Rng, tag: usize) -> Model {
    let n_atoms = rng.random_range(2..=5);
    let mut vars: Vec<String> = Vec::new();
    let mut groups = Vec::new();
    for a in 0..n_atoms {
        if rng.random_bool(0.25) {
            let (p, q) = (format!("u{a}"), format!("v{a}"));
            groups.push(format!("group A{a} = ({p}, {q})"));
            vars.push(p);
            vars.push(q);
        } else {
            vars.push(format!("x{a}"));
        }
    }
    let mut text = format!("model random_{tag}\n");
    for v in &vars {
        text += &format!("var {v} in [-inf, inf] init {:.2}\n", rng.random_range(-1.0..1.0));
    }
    for g in &groups {
        text += &format!("{g}\n");
    }
    for (i, v) in vars.iter().enumerate() {
        let mut terms = Vec::new();
        if rng.random_bool(0.8) {
            terms.push(format!("-{:.2}*{v}", rng.random_range(0.5..2.0)));
        }
        for _ in 0..rng.random_range(0..=3) {
            let j = rng.random_range(0..vars.len());
            let c = rng.random_range(-1.0..1.0);
            if rng.random_bool(0.3) {
                let k = rng.random_range(0..vars.len());
                terms.push(format!("{c:.2}*{}*{}", vars[j], vars[k]));
            } else if j != i {
                terms.push(format!("{c:.2}*{}", vars[j]));
            }
        }
        terms.push(format!("{:.2}", rng.random_range(-1.0..1.0)));
        text += &format!("ddt {v} = {}\n", terms.join(" + "));
    }
    eqcausal::parse_model(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}
