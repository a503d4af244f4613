use crate::expr::{BinOp, Expr};
use crate::intervention::{InterventionError, InterventionSpec, Mode};
use crate::model::Model;

/// Replaces the dynamics of every targeted member by `d/dt x = 0` and its
/// initial value by the clamp value. The targets lose all parents.
pub fn apply_hard_intervention(m: &Model, s: &InterventionSpec) -> Result<Model, InterventionError> {
    s.require_hard()?;
    let targets = s.resolve(m.layout())?;
    let mut out = m.clone();
    for t in &targets {
        for &(var, value) in &t.clamps {
            let decl = &m.vars()[var];
            if !decl.domain.contains(value) {
                return Err(InterventionError::DomainViolation { var: decl.name.clone(), value });
            }
            out.clamp(var, value);
        }
    }
    Ok(out)
}

/// Adds `kappa * (xi - x)` to the right-hand side of every targeted member.
pub fn apply_soft_intervention(m: &Model, s: &InterventionSpec) -> Result<Model, InterventionError> {
    let Mode::Soft { kappa } = s.mode else {
        return Err(InterventionError::NotSoft);
    };
    let targets = s.resolve(m.layout())?;
    let mut out = m.clone();
    for t in &targets {
        for &(var, value) in &t.clamps {
            let pull = Expr::binary(
                BinOp::Mul,
                Expr::Const(kappa),
                Expr::binary(BinOp::Sub, Expr::Const(value), Expr::var(m.vars()[var].name.clone())),
            );
            out.set_rhs(var, Expr::binary(BinOp::Add, m.rhs()[var].clone(), pull));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{graph_of, parse_model};

    const LV: &str = "model lv
param th11 = 1
param th12 = 1
param th21 = 1
param th22 = 1
var X1 in [0, inf] init 1
var X2 in [0, inf] init 0.5
ddt X1 = X1*(th11 - th12*X2)
ddt X2 = -X2*(th22 - th21*X1)
";

    #[test]
    fn hard_do_on_predators_freezes_them() {
        let m = parse_model(LV).unwrap();
        let d = apply_hard_intervention(&m, &InterventionSpec::hard([("X2", vec![2.0])])).unwrap();
        assert_eq!(d.rhs()[1], Expr::Const(0.0));
        assert_eq!(d.rhs()[0], m.rhs()[0]);
        assert_eq!(d.init_state(), vec![1.0, 2.0]);
        assert!(d.is_clamped(1) && !d.is_clamped(0));
        let g = graph_of(&d);
        assert_eq!(g.named_edges(), vec![("X1", "X1"), ("X2", "X1")]);
    }

    #[test]
    fn hard_do_on_everything() {
        let m = parse_model(LV).unwrap();
        let d = apply_hard_intervention(&m, &InterventionSpec::hard([("X1", vec![0.3]), ("X2", vec![4.0])])).unwrap();
        assert!(d.rhs().iter().all(Expr::is_zero));
        assert_eq!(d.init_state(), vec![0.3, 4.0]);
    }

    #[test]
    fn hard_do_rejects_out_of_domain_and_unknown() {
        let m = parse_model(LV).unwrap();
        let err = apply_hard_intervention(&m, &InterventionSpec::hard([("X2", vec![-1.0])])).unwrap_err();
        assert!(matches!(err, InterventionError::DomainViolation { .. }));
        let err = apply_hard_intervention(&m, &InterventionSpec::hard([("Y", vec![1.0])])).unwrap_err();
        assert_eq!(err, InterventionError::UnknownTarget("Y".into()));
    }

    #[test]
    fn soft_do_adds_feedback_term() {
        let m = parse_model(LV).unwrap();
        let d = apply_soft_intervention(&m, &InterventionSpec::soft([("X2", vec![2.0])], 100.0)).unwrap();
        assert_eq!(d.rhs()[1].to_string(), "-X2 * (th22 - th21 * X1) + 100 * (2 - X2)");
        assert_eq!(d.init_state(), m.init_state());
        assert!(apply_soft_intervention(&m, &InterventionSpec::hard([("X2", vec![2.0])])).is_err());
    }
}
