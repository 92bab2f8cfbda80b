//! Link functions: a closed expression algebra over parent values and named
//! graph parameters.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := NUMBER | 'p' DIGITS | IDENT | FUNC '(' expr ')' | '(' expr ')'
//! FUNC   := 'tanh' | 'exp' | 'softplus'
//! ```
//!
//! `p0`, `p1`, … select the node's parents by slot; any other identifier
//! names a graph parameter (after its transform, e.g. softplus).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LinkExpr {
    Const(f64),
    Parent(usize),
    Param(String),
    Add(Box<LinkExpr>, Box<LinkExpr>),
    Sub(Box<LinkExpr>, Box<LinkExpr>),
    Mul(Box<LinkExpr>, Box<LinkExpr>),
    Div(Box<LinkExpr>, Box<LinkExpr>),
    Neg(Box<LinkExpr>),
    Tanh(Box<LinkExpr>),
    Exp(Box<LinkExpr>),
    Softplus(Box<LinkExpr>),
}

/// Supplies parameter values (already transformed) during evaluation.
pub trait ParamLookup {
    fn param(&self, name: &str) -> Result<Var>;
    fn is_positive(&self, name: &str) -> bool;
}

impl LinkExpr {
    pub fn constant(v: f64) -> Self {
        LinkExpr::Const(v)
    }

    pub fn parent(slot: usize) -> Self {
        LinkExpr::Parent(slot)
    }

    pub fn param(name: &str) -> Self {
        LinkExpr::Param(name.to_string())
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(Error::Parse(format!(
                "unexpected trailing input at {} in link '{src}'",
                p.pos
            )));
        }
        Ok(e)
    }

    /// Number of parent slots the expression needs: `1 + max slot`, or 0.
    pub fn arity(&self) -> usize {
        let mut m = 0;
        self.visit(&mut |e| {
            if let LinkExpr::Parent(k) = e {
                m = m.max(k + 1);
            }
        });
        m
    }

    pub fn param_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let LinkExpr::Param(n) = e {
                out.insert(n.clone());
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&LinkExpr)) {
        f(self);
        match self {
            LinkExpr::Add(a, b) | LinkExpr::Sub(a, b) | LinkExpr::Mul(a, b) | LinkExpr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            LinkExpr::Neg(a) | LinkExpr::Tanh(a) | LinkExpr::Exp(a) | LinkExpr::Softplus(a) => {
                a.visit(f)
            }
            _ => {}
        }
    }

    /// True when the expression is strictly positive for every input.
    pub fn is_positive(&self, params: &dyn ParamLookup) -> bool {
        match self {
            LinkExpr::Const(c) => *c > 0.0,
            LinkExpr::Param(n) => params.is_positive(n),
            LinkExpr::Exp(_) | LinkExpr::Softplus(_) => true,
            LinkExpr::Add(a, b) | LinkExpr::Mul(a, b) | LinkExpr::Div(a, b) => {
                a.is_positive(params) && b.is_positive(params)
            }
            _ => false,
        }
    }

    /// Evaluates on tape values. `parents[k]` is the value of parent slot k.
    pub fn eval(&self, tape: &Tape, parents: &[Var], params: &dyn ParamLookup) -> Result<Var> {
        use LinkExpr::*;
        Ok(match self {
            Const(c) => tape.scalar(*c),
            Parent(k) => parents
                .get(*k)
                .cloned()
                .ok_or_else(|| Error::Shape(format!("link references missing parent slot p{k}")))?,
            Param(n) => params.param(n)?,
            Add(a, b) => match (&**a, &**b) {
                (Const(c), e) | (e, Const(c)) => e.eval(tape, parents, params)?.add_scalar(*c),
                _ => a.eval(tape, parents, params)?.add(&b.eval(tape, parents, params)?),
            },
            Sub(a, b) => match (&**a, &**b) {
                (e, Const(c)) => e.eval(tape, parents, params)?.add_scalar(-*c),
                (Const(c), e) => e.eval(tape, parents, params)?.rsub_scalar(*c),
                _ => a.eval(tape, parents, params)?.sub(&b.eval(tape, parents, params)?),
            },
            Mul(a, b) => match (&**a, &**b) {
                (Const(c), e) | (e, Const(c)) => e.eval(tape, parents, params)?.mul_scalar(*c),
                _ => a.eval(tape, parents, params)?.mul(&b.eval(tape, parents, params)?),
            },
            Div(a, b) => match (&**a, &**b) {
                (e, Const(c)) => e.eval(tape, parents, params)?.mul_scalar(1.0 / *c),
                _ => a.eval(tape, parents, params)?.div(&b.eval(tape, parents, params)?),
            },
            Neg(a) => a.eval(tape, parents, params)?.neg(),
            Tanh(a) => a.eval(tape, parents, params)?.tanh(),
            Exp(a) => a.eval(tape, parents, params)?.exp(),
            Softplus(a) => a.eval(tape, parents, params)?.softplus(),
        })
    }
}

impl fmt::Display for LinkExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use LinkExpr::*;
        match self {
            Const(c) if *c < 0.0 => write!(f, "({c:?})"),
            Const(c) => write!(f, "{c:?}"),
            Parent(k) => write!(f, "p{k}"),
            Param(n) => write!(f, "{n}"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Neg(a) => write!(f, "(-{a})"),
            Tanh(a) => write!(f, "tanh({a})"),
            Exp(a) => write!(f, "exp({a})"),
            Softplus(a) => write!(f, "softplus({a})"),
        }
    }
}

impl From<LinkExpr> for String {
    fn from(e: LinkExpr) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for LinkExpr {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        LinkExpr::parse(&s)
    }
}

impl std::str::FromStr for LinkExpr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LinkExpr::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!(
            "{msg} at offset {} in link '{}'",
            self.pos,
            String::from_utf8_lossy(self.src)
        ))
    }

    fn expr(&mut self) -> Result<LinkExpr> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' {
                LinkExpr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                LinkExpr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<LinkExpr> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == b'*' {
                LinkExpr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                LinkExpr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<LinkExpr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(match inner {
                LinkExpr::Const(c) => LinkExpr::Const(-c),
                e => LinkExpr::Neg(Box::new(e)),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<LinkExpr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if let Some(func) = match ident {
                    "tanh" => Some(LinkExpr::Tanh as fn(Box<LinkExpr>) -> LinkExpr),
                    "exp" => Some(LinkExpr::Exp as fn(Box<LinkExpr>) -> LinkExpr),
                    "softplus" => Some(LinkExpr::Softplus as fn(Box<LinkExpr>) -> LinkExpr),
                    _ => None,
                } {
                    if self.peek() != Some(b'(') {
                        return Err(self.err("expected '(' after function name"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    self.pos += 1;
                    return Ok(func(Box::new(arg)));
                }
                if let Some(slot) = ident.strip_prefix('p').and_then(|d| d.parse::<usize>().ok()) {
                    return Ok(LinkExpr::Parent(slot));
                }
                Ok(LinkExpr::Param(ident.to_string()))
            }
            _ => Err(self.err("expected a number, name, or '('")),
        }
    }

    fn number(&mut self) -> Result<LinkExpr> {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let exp_sign = (c == b'-' || c == b'+')
                && self.pos > start
                && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(LinkExpr::Const)
            .map_err(|_| self.err(&format!("bad number '{text}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct NoParams;
    impl ParamLookup for NoParams {
        fn param(&self, name: &str) -> Result<Var> {
            Err(Error::Config(format!("no param {name}")))
        }
        fn is_positive(&self, _: &str) -> bool {
            false
        }
    }

    fn eval_scalar(src: &str, parents: &[f64]) -> f64 {
        let tape = Tape::no_grad();
        let ps: Vec<Var> = parents.iter().map(|&v| tape.scalar(v)).collect();
        LinkExpr::parse(src).unwrap().eval(&tape, &ps, &NoParams).unwrap().item()
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(eval_scalar("2*p0 - p1", &[3.0, 1.0]), 5.0);
        assert_eq!(eval_scalar("1 + 2 * 3", &[]), 7.0);
        assert_eq!(eval_scalar("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(eval_scalar("-p0 / 4", &[2.0]), -0.5);
        let v = eval_scalar("tanh(p0) - tanh(p1)", &[0.3, -0.2]);
        assert!((v - (0.3f64.tanh() - (-0.2f64).tanh())).abs() < 1e-15);
        assert_eq!(eval_scalar("1e-2 * 100", &[]), 1.0);
    }

    #[test]
    fn lorenz_drift_expression() {
        // x + s·φ·(y − x) with s = 0.02, φ = 10
        let v = eval_scalar("p0 + 0.02*(10*(p1 - p0))", &[0.0, 1.0]);
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn arity_and_params() {
        let e = LinkExpr::parse("p2 * sigma + p0").unwrap();
        assert_eq!(e.arity(), 3);
        assert!(e.param_names().contains("sigma"));
        assert_eq!(LinkExpr::parse("0").unwrap().arity(), 0);
    }

    #[test]
    fn display_parses_back_to_same_value() {
        for src in ["2*p0 - p1", "exp(p1) / (0.5 + p0)", "-3.25*softplus(p0)", "-(p0 - 1)"] {
            let e = LinkExpr::parse(src).unwrap();
            let again = LinkExpr::parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src}");
        }
    }

    #[test]
    fn parse_errors() {
        assert!(LinkExpr::parse("p0 +").is_err());
        assert!(LinkExpr::parse("tanh p0").is_err());
        assert!(LinkExpr::parse("(p0").is_err());
        assert!(LinkExpr::parse("p0 p1").is_err());
    }
}
