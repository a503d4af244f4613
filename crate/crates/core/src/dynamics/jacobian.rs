use nalgebra::DMatrix;
use serde::Serialize;

use crate::expr::EvalError;
use crate::field::central_jacobian;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// Central-difference Jacobian of the right-hand side at `x`.
pub fn jacobian(m: &Model, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
    let field = m.compile()?;
    central_jacobian(field.dim(), x, |y, out| field.eval(y, out))
}

/// Eigenvalues sorted by real part, then imaginary part.
pub fn eigenvalues(j: &DMatrix<f64>) -> Vec<Eigenvalue> {
    if j.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<Eigenvalue> =
        j.clone().complex_eigenvalues().iter().map(|c| Eigenvalue { re: c.re, im: c.im }).collect();
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    #[test]
    fn linear_scalar_model() {
        let m = parse_model("model a\nparam a = -0.75\nvar X in [-inf, inf] init 0\nddt X = a*X\n").unwrap();
        let j = jacobian(&m, &[3.0]).unwrap();
        assert_eq!(j.shape(), (1, 1));
        assert!((j[(0, 0)] + 0.75).abs() < 1e-6);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&j);
        assert!(ev.iter().all(|e| e.re.abs() < 1e-12));
        assert!((ev[0].im + 1.0).abs() < 1e-12 && (ev[1].im - 1.0).abs() < 1e-12);
    }
}
