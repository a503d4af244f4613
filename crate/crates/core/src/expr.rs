//! Expression trees for right-hand sides and residuals.
//!
//! An [`Expr`] keeps identifiers by name so it can be printed back into the
//! model format. Hot loops (integration, Newton) use [`CompiledExpr`], where
//! parameters are folded into constants and variables are resolved to slots
//! of a state vector.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => PREC_ADD,
            BinOp::Mul | BinOp::Div => PREC_MUL,
            BinOp::Pow => PREC_POW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

/// Expression tree over named parameters and variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(String),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(&'static str),
}

/// Name lookup used by [`Expr::eval`].
pub trait Lookup {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Lookup for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Lookup for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Lookup for IndexMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl<F: Fn(&str) -> Option<f64>> Lookup for F {
    fn lookup(&self, name: &str) -> Option<f64> {
        self(name)
    }
}

/// Evaluates `e` with parameters and variables bound by name.
pub fn eval_expr(e: &Expr, params: &impl Lookup, state: &impl Lookup) -> Result<f64, EvalError> {
    e.eval(params, state)
}

pub(crate) fn apply_binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::Domain("division by zero"));
            }
            a / b
        }
        BinOp::Pow => {
            let r = if b.fract() == 0.0 && b.abs() <= 64.0 {
                a.powi(b as i32)
            } else {
                a.powf(b)
            };
            if r.is_nan() && !a.is_nan() && !b.is_nan() {
                return Err(EvalError::Domain("non-real power"));
            }
            r
        }
    })
}

pub(crate) fn apply_func(f: Func, x: f64) -> Result<f64, EvalError> {
    Ok(match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Log => {
            if x <= 0.0 {
                return Err(EvalError::Domain("log of non-positive value"));
            }
            x.ln()
        }
        Func::Sqrt => {
            if x < 0.0 {
                return Err(EvalError::Domain("sqrt of negative value"));
            }
            x.sqrt()
        }
        Func::Abs => x.abs(),
    })
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn param(name: impl Into<String>) -> Expr {
        Expr::Param(name.into())
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn eval(&self, params: &impl Lookup, state: &impl Lookup) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Param(p) => params.lookup(p).ok_or_else(|| EvalError::Unbound(p.clone())),
            Expr::Var(v) => state.lookup(v).ok_or_else(|| EvalError::Unbound(v.clone())),
            Expr::Neg(a) => Ok(-a.eval(params, state)?),
            Expr::Binary(op, a, b) => apply_binary(*op, a.eval(params, state)?, b.eval(params, state)?),
            Expr::Call(f, a) => apply_func(*f, a.eval(params, state)?),
        }
    }

    /// Names of all variables referenced by this expression.
    pub fn vars(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                out.insert(v.as_str());
            }
        });
        out
    }

    /// Names of all parameters referenced by this expression.
    pub fn params(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                out.insert(p.as_str());
            }
        });
        out
    }

    pub fn mentions_any_var(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Var(_)));
        found
    }

    fn mentions_one_of(&self, names: &[&str]) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                found |= names.contains(&v.as_str());
            }
        });
        found
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Neg(a) | Expr::Call(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Resolves the expression against a parameter table and a variable
    /// slot map. Parameters become constants.
    pub fn compile(
        &self,
        params: &impl Lookup,
        slot: &impl Fn(&str) -> Option<usize>,
    ) -> Result<CompiledExpr, EvalError> {
        Ok(CompiledExpr(self.lower(params, slot)?))
    }

    fn lower(&self, params: &impl Lookup, slot: &impl Fn(&str) -> Option<usize>) -> Result<Node, EvalError> {
        Ok(match self {
            Expr::Const(c) => Node::Const(*c),
            Expr::Param(p) => Node::Const(params.lookup(p).ok_or_else(|| EvalError::Unbound(p.clone()))?),
            Expr::Var(v) => Node::Slot(slot(v).ok_or_else(|| EvalError::Unbound(v.clone()))?),
            Expr::Neg(a) => match a.lower(params, slot)? {
                Node::Const(c) => Node::Const(-c),
                n => Node::Neg(Box::new(n)),
            },
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.lower(params, slot)?, b.lower(params, slot)?);
                if let (Node::Const(x), Node::Const(y)) = (&a, &b) {
                    if let Ok(v) = apply_binary(*op, *x, *y) {
                        return Ok(Node::Const(v));
                    }
                }
                Node::Binary(*op, Box::new(a), Box::new(b))
            }
            Expr::Call(f, a) => {
                let a = a.lower(params, slot)?;
                if let Node::Const(x) = a {
                    if let Ok(v) = apply_func(*f, x) {
                        return Ok(Node::Const(v));
                    }
                }
                Node::Call(*f, Box::new(a))
            }
        })
    }

    /// Splits the expression as `sum_k coeffs[k] * own[k] + rest`, where the
    /// coefficients and `rest` do not mention any variable in `own`.
    ///
    /// Returns `None` when the expression is not affine in `own` under the
    /// structural rules (products and quotients need one factor free of
    /// `own`). Coefficients may still depend on other variables.
    pub fn affine_in(&self, own: &[&str]) -> Option<Affine> {
        if !self.mentions_one_of(own) {
            return Some(Affine { coeffs: vec![Expr::Const(0.0); own.len()], rest: self.clone() });
        }
        match self {
            Expr::Var(v) => {
                let k = own.iter().position(|o| o == v)?;
                let mut coeffs = vec![Expr::Const(0.0); own.len()];
                coeffs[k] = Expr::Const(1.0);
                Some(Affine { coeffs, rest: Expr::Const(0.0) })
            }
            Expr::Neg(a) => Some(a.affine_in(own)?.map(|e| neg(e))),
            Expr::Binary(BinOp::Add, a, b) => Some(a.affine_in(own)?.zip(b.affine_in(own)?, add)),
            Expr::Binary(BinOp::Sub, a, b) => Some(a.affine_in(own)?.zip(b.affine_in(own)?, sub)),
            Expr::Binary(BinOp::Mul, a, b) => {
                if !a.mentions_one_of(own) {
                    Some(b.affine_in(own)?.map(|e| mul((**a).clone(), e)))
                } else if !b.mentions_one_of(own) {
                    Some(a.affine_in(own)?.map(|e| mul(e, (**b).clone())))
                } else {
                    None
                }
            }
            Expr::Binary(BinOp::Div, a, b) if !b.mentions_one_of(own) => {
                Some(a.affine_in(own)?.map(|e| div(e, (**b).clone())))
            }
            _ => None,
        }
    }
}

/// Affine split of an expression with respect to a list of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub coeffs: Vec<Expr>,
    pub rest: Expr,
}

impl Affine {
    fn map(self, f: impl Fn(Expr) -> Expr) -> Affine {
        Affine { coeffs: self.coeffs.into_iter().map(&f).collect(), rest: f(self.rest) }
    }

    fn zip(self, other: Affine, f: impl Fn(Expr, Expr) -> Expr) -> Affine {
        Affine {
            coeffs: self.coeffs.into_iter().zip(other.coeffs).map(|(a, b)| f(a, b)).collect(),
            rest: f(self.rest, other.rest),
        }
    }
}

// Smart constructors that drop trivial zeros and ones.

pub(crate) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(if c == 0.0 { 0.0 } else { -c }),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => b,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (a, b) => Expr::binary(BinOp::Add, a, b),
    }
}

pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, b) => Expr::binary(BinOp::Sub, a, b),
    }
}

pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, b) if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        (Expr::Const(x), b) if x == 1.0 => b,
        (a, Expr::Const(y)) if y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (a, b) => Expr::binary(BinOp::Mul, a, b),
    }
}

pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, _) if a.is_zero() => Expr::Const(0.0),
        (a, Expr::Const(y)) if y == 1.0 => a,
        (a, b) => Expr::binary(BinOp::Div, a, b),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Slot(i) => Ok(x[*i]),
            Node::Neg(a) => Ok(-a.eval(x)?),
            Node::Binary(op, a, b) => match op {
                BinOp::Add => Ok(a.eval(x)? + b.eval(x)?),
                BinOp::Sub => Ok(a.eval(x)? - b.eval(x)?),
                BinOp::Mul => Ok(a.eval(x)? * b.eval(x)?),
                _ => apply_binary(*op, a.eval(x)?, b.eval(x)?),
            },
            Node::Call(f, a) => apply_func(*f, a.eval(x)?),
        }
    }
}

/// An expression resolved against a parameter table and state layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr(Node);

impl CompiledExpr {
    pub fn eval(&self, state: &[f64]) -> Result<f64, EvalError> {
        self.0.eval(state)
    }

    /// `Some(c)` when the expression folded to a constant.
    pub fn as_const(&self) -> Option<f64> {
        match self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => PREC_UNARY,
            Expr::Neg(_) => PREC_UNARY,
            Expr::Binary(op, _, _) => op.precedence(),
            _ => PREC_ATOM,
        }
    }

    // Negations on the right of an operator are always parenthesized.
    fn right_operand_min(&self, min: u8) -> u8 {
        if self.precedence() == PREC_UNARY {
            PREC_ATOM
        } else {
            min
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let wrap = self.precedence() < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Expr::Const(c) => write!(f, "{c}")?,
            Expr::Param(p) => f.write_str(p)?,
            Expr::Var(v) => f.write_str(v)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_prec(f, PREC_UNARY)?;
            }
            Expr::Binary(BinOp::Pow, a, b) => {
                a.fmt_prec(f, PREC_POW + 1)?;
                f.write_str("^")?;
                b.fmt_prec(f, b.right_operand_min(PREC_UNARY))?;
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                a.fmt_prec(f, p)?;
                write!(f, " {} ", op.symbol())?;
                b.fmt_prec(f, b.right_operand_min(p + 1))?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0)?;
                f.write_str(")")?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Prints in the model-file grammar; negative literals are parenthesized so
/// the output reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
