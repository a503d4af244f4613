//! Line-oriented model format.
//!
//! ```text
//! # comment
//! model lotka_volterra
//! param th11 = 1
//! var X1 in [0, inf] init 1
//! group X = (Q1, P1)
//! ddt X1 = X1*(th11 - th12*X2)
//! ```
//!
//! Declarations may appear in any order; `ddt` lines are resolved after all
//! declarations have been read.

use std::collections::{HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use super::{Domain, Group, Layout, Model, ModelError, Variable};
use crate::expr::{BinOp, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undeclared identifier `{0}`")]
    Undeclared(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate declaration of `{0}`")]
    Duplicate(String),
    #[error("init {init} of `{var}` lies outside its domain")]
    InitOutsideDomain { var: String, init: f64 },
    #[error("group `{group}` member `{member}` is not a declared variable")]
    GroupMemberMissing { group: String, member: String },
    #[error("variable `{0}` has no ddt equation")]
    MissingRhs(String),
    #[error("{0}")]
    Invalid(String),
}

/// A parse failure at a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentKind {
    Param,
    Var,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn lex(line: &str, line_no: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ParseError {
                line: line_no,
                col,
                kind: ParseErrorKind::Syntax(format!("malformed number `{text}`")),
            })?;
            out.push(Token { tok: Tok::Num(value), col });
        } else if "+-*/^()[],=".contains(c) {
            out.push(Token { tok: Tok::Sym(c), col });
            i += 1;
        } else {
            return Err(ParseError { line: line_no, col, kind: ParseErrorKind::Syntax(format!("unexpected character `{c}`")) });
        }
    }
    Ok(out)
}

const RESERVED: &[&str] = &["model", "param", "var", "group", "ddt", "in", "init", "inf"];

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, end_col: usize) -> Self {
        Cursor { toks, pos: 0, line, end_col }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line, col: self.col(), kind }
    }

    fn syntax(&self, msg: impl Into<String>) -> ParseError {
        self.err(ParseErrorKind::Syntax(msg.into()))
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{c}`")))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.syntax(format!("expected `{kw}`"))),
        }
    }

    fn ident(&mut self) -> Result<(String, usize), ParseError> {
        let col = self.col();
        match self.peek() {
            Some(Tok::Ident(s)) if !RESERVED.contains(&s.as_str()) && Func::from_name(s).is_none() => {
                let s = s.clone();
                self.pos += 1;
                Ok((s, col))
            }
            Some(Tok::Ident(s)) => Err(self.syntax(format!("`{s}` is reserved"))),
            _ => Err(self.syntax("expected identifier")),
        }
    }

    /// Signed real literal; `allow_inf` admits `inf`, `+inf`, `-inf`.
    fn real(&mut self, allow_inf: bool) -> Result<f64, ParseError> {
        let sign = if self.eat_sym('-') {
            -1.0
        } else {
            self.eat_sym('+');
            1.0
        };
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(sign * v)
            }
            Some(Tok::Ident(s)) if allow_inf && s == "inf" => {
                self.pos += 1;
                Ok(sign * f64::INFINITY)
            }
            _ => Err(self.syntax("expected a number")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.syntax("unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

struct ExprParser<'a, 'r> {
    cur: Cursor<'a>,
    resolve: &'r dyn Fn(&str) -> Option<IdentKind>,
}

impl ExprParser<'_, '_> {
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.cur.peek() {
                Some(Tok::Sym('+')) => BinOp::Add,
                Some(Tok::Sym('-')) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.cur.bump();
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.cur.peek() {
                Some(Tok::Sym('*')) => BinOp::Mul,
                Some(Tok::Sym('/')) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.cur.bump();
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.cur.eat_sym('-') {
            return Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.cur.eat_sym('^') {
            return Ok(Expr::binary(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let col = self.cur.col();
        match self.cur.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Sym('(')) => {
                let e = self.expr()?;
                self.cur.expect_sym(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if self.cur.peek() == Some(&Tok::Sym('(')) {
                    let f = Func::from_name(&name).ok_or(ParseError {
                        line: self.cur.line,
                        col,
                        kind: ParseErrorKind::Syntax(format!("unknown function `{name}`")),
                    })?;
                    self.cur.bump();
                    let arg = self.expr()?;
                    self.cur.expect_sym(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match (self.resolve)(&name) {
                    Some(IdentKind::Param) => Ok(Expr::Param(name)),
                    Some(IdentKind::Var) => Ok(Expr::Var(name)),
                    None => Err(ParseError { line: self.cur.line, col, kind: ParseErrorKind::Undeclared(name) }),
                }
            }
            _ => {
                self.cur.pos -= 1;
                Err(self.cur.syntax("expected an operand"))
            }
        }
    }
}

/// Parses a single expression; identifiers are classified by `resolve`.
pub fn parse_expr(text: &str, resolve: &dyn Fn(&str) -> Option<IdentKind>) -> Result<Expr, ParseError> {
    let toks = lex(text, 1)?;
    parse_expr_tokens(&toks, 1, text.chars().count() + 1, resolve)
}

fn parse_expr_tokens(
    toks: &[Token],
    line: usize,
    end_col: usize,
    resolve: &dyn Fn(&str) -> Option<IdentKind>,
) -> Result<Expr, ParseError> {
    let mut p = ExprParser { cur: Cursor::new(toks, line, end_col), resolve };
    let e = p.expr()?;
    p.cur.finish()?;
    Ok(e)
}

struct PendingRhs {
    var: String,
    var_col: usize,
    line: usize,
    end_col: usize,
    toks: Vec<Token>,
    expr_start: usize,
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<Model, ParseError> {
    let mut name: Option<String> = None;
    let mut params: IndexMap<String, f64> = IndexMap::new();
    let mut vars: Vec<(Variable, usize, usize)> = Vec::new();
    let mut groups: Vec<(Group, usize, Vec<usize>)> = Vec::new();
    let mut pending: Vec<PendingRhs> = Vec::new();
    let mut declared: HashSet<String> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = lex(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let end_col = raw.chars().count() + 1;
        let mut cur = Cursor::new(&toks, line, end_col);
        let kw = match cur.bump() {
            Some(Tok::Ident(k)) => k,
            _ => return Err(ParseError { line, col: toks[0].col, kind: ParseErrorKind::Syntax("expected a keyword".into()) }),
        };
        match kw.as_str() {
            "model" => {
                if name.is_some() {
                    return Err(ParseError { line, col: 1, kind: ParseErrorKind::Duplicate("model".into()) });
                }
                let (n, _) = cur.ident()?;
                cur.finish()?;
                name = Some(n);
            }
            "param" => {
                let (n, col) = cur.ident()?;
                cur.expect_sym('=')?;
                let v = cur.real(false)?;
                cur.finish()?;
                if !declared.insert(n.clone()) {
                    return Err(ParseError { line, col, kind: ParseErrorKind::Duplicate(n) });
                }
                params.insert(n, v);
            }
            "var" => {
                let (n, col) = cur.ident()?;
                cur.expect_keyword("in")?;
                cur.expect_sym('[')?;
                let lo = cur.real(true)?;
                cur.expect_sym(',')?;
                let hi = cur.real(true)?;
                cur.expect_sym(']')?;
                cur.expect_keyword("init")?;
                let init_col = cur.col();
                let init = cur.real(false)?;
                cur.finish()?;
                if !declared.insert(n.clone()) {
                    let kind = if vars.iter().any(|(v, _, _)| v.name == n) {
                        ParseErrorKind::DuplicateVariable(n)
                    } else {
                        ParseErrorKind::Duplicate(n)
                    };
                    return Err(ParseError { line, col, kind });
                }
                let domain = Domain::new(lo, hi);
                if !(lo <= hi) {
                    return Err(ParseError { line, col, kind: ParseErrorKind::Invalid(format!("empty domain for `{n}`")) });
                }
                if !domain.contains(init) {
                    return Err(ParseError { line, col: init_col, kind: ParseErrorKind::InitOutsideDomain { var: n, init } });
                }
                vars.push((Variable { name: n, domain, init }, line, col));
            }
            "group" => {
                let (n, col) = cur.ident()?;
                cur.expect_sym('=')?;
                cur.expect_sym('(')?;
                let mut members = Vec::new();
                let mut cols = Vec::new();
                loop {
                    let (m, mcol) = cur.ident()?;
                    members.push(m);
                    cols.push(mcol);
                    if cur.eat_sym(')') {
                        break;
                    }
                    cur.expect_sym(',')?;
                }
                cur.finish()?;
                if !declared.insert(n.clone()) {
                    return Err(ParseError { line, col, kind: ParseErrorKind::Duplicate(n) });
                }
                groups.push((Group { name: n, members }, line, cols));
            }
            "ddt" => {
                let (v, var_col) = cur.ident()?;
                cur.expect_sym('=')?;
                pending.push(PendingRhs { var: v, var_col, line, end_col, expr_start: cur.pos, toks: toks.clone() });
            }
            other => {
                return Err(ParseError { line, col: toks[0].col, kind: ParseErrorKind::Syntax(format!("unknown keyword `{other}`")) })
            }
        }
    }

    let name = name.ok_or(ParseError { line: 1, col: 1, kind: ParseErrorKind::Syntax("missing `model <name>` line".into()) })?;

    let var_names: HashMap<String, usize> = vars.iter().enumerate().map(|(i, (v, _, _))| (v.name.clone(), i)).collect();
    let mut seen_in_group: HashMap<&str, &str> = HashMap::new();
    for (g, line, cols) in &groups {
        for (m, &col) in g.members.iter().zip(cols) {
            if !var_names.contains_key(m) {
                return Err(ParseError {
                    line: *line,
                    col,
                    kind: ParseErrorKind::GroupMemberMissing { group: g.name.clone(), member: m.clone() },
                });
            }
            if let Some(prev) = seen_in_group.insert(m, &g.name) {
                return Err(ParseError {
                    line: *line,
                    col,
                    kind: ParseErrorKind::Invalid(format!("`{m}` already belongs to group `{prev}`")),
                });
            }
        }
    }

    let resolve = |n: &str| {
        if var_names.contains_key(n) {
            Some(IdentKind::Var)
        } else if params.contains_key(n) {
            Some(IdentKind::Param)
        } else {
            None
        }
    };
    let mut rhs: Vec<Option<Expr>> = vec![None; vars.len()];
    for p in &pending {
        let &i = var_names.get(&p.var).ok_or_else(|| ParseError {
            line: p.line,
            col: p.var_col,
            kind: ParseErrorKind::Undeclared(p.var.clone()),
        })?;
        let e = parse_expr_tokens(&p.toks[p.expr_start..], p.line, p.end_col, &resolve)?;
        if rhs[i].replace(e).is_some() {
            return Err(ParseError { line: p.line, col: p.var_col, kind: ParseErrorKind::Duplicate(format!("ddt {}", p.var)) });
        }
    }
    let rhs = rhs
        .into_iter()
        .zip(&vars)
        .map(|(e, (v, line, col))| e.ok_or(ParseError { line: *line, col: *col, kind: ParseErrorKind::MissingRhs(v.name.clone()) }))
        .collect::<Result<Vec<_>, _>>()?;

    let layout = Layout::new(vars.into_iter().map(|(v, _, _)| v).collect(), groups.into_iter().map(|(g, _, _)| g).collect())
        .map_err(model_error_at_top)?;
    Model::new(name, params, layout, rhs).map_err(model_error_at_top)
}

// Anything that slips past the per-line checks is reported at the top.
fn model_error_at_top(e: ModelError) -> ParseError {
    ParseError { line: 1, col: 1, kind: ParseErrorKind::Invalid(e.to_string()) }
}
