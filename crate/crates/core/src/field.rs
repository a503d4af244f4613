//! Compiled vector-valued functions over a state vector.

use indexmap::IndexMap;
use nalgebra::DMatrix;

use crate::expr::{CompiledExpr, EvalError, Expr};
use crate::model::Layout;

/// A list of compiled expressions evaluated together, `R^n -> R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    exprs: Vec<CompiledExpr>,
}

impl VectorField {
    pub fn compile(exprs: &[Expr], params: &IndexMap<String, f64>, layout: &Layout) -> Result<Self, EvalError> {
        let slot = layout.slot_fn();
        let exprs = exprs.iter().map(|e| e.compile(params, &slot)).collect::<Result<_, _>>()?;
        Ok(VectorField { exprs })
    }

    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(x)?;
        }
        Ok(())
    }

    pub fn eval_vec(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, &mut out)?;
        Ok(out)
    }

    /// `max_i |f_i(x)|`.
    pub fn max_abs(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut m: f64 = 0.0;
        for e in &self.exprs {
            let v = e.eval(x)?;
            if v.is_nan() {
                return Ok(f64::NAN);
            }
            m = m.max(v.abs());
        }
        Ok(m)
    }

    pub fn component(&self, i: usize) -> &CompiledExpr {
        &self.exprs[i]
    }
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

/// Central-difference Jacobian of `f: R^n -> R^m` at `x`.
pub fn central_jacobian<E>(
    m: usize,
    x: &[f64],
    mut f: impl FnMut(&[f64], &mut [f64]) -> Result<(), E>,
) -> Result<DMatrix<f64>, E> {
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..n {
        let h = fd_step(x[j]);
        probe[j] = x[j] + h;
        f(&probe, &mut plus)?;
        probe[j] = x[j] - h;
        f(&probe, &mut minus)?;
        probe[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}
