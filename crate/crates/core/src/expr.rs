//! Closed-form expressions in `x1`, `x2`.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, `sin`, `cos`, `exp`,
//! numeric literals and the constants `pi`, `e`. Expressions can be
//! differentiated symbolically, which is how metric derivatives are obtained
//! when a metric is given in closed form.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// 0 for `x1`, 1 for `x2`.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    /// Only produced by differentiation of non-constant exponents.
    Ln(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn x1() -> Expr {
        Expr::Var(0)
    }

    pub fn x2() -> Expr {
        Expr::Var(1)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(v) if *v == 1.0)
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var(0) => x1,
            Expr::Var(_) => x2,
            Expr::Neg(a) => -a.eval(x1, x2),
            Expr::Add(a, b) => a.eval(x1, x2) + b.eval(x1, x2),
            Expr::Sub(a, b) => a.eval(x1, x2) - b.eval(x1, x2),
            Expr::Mul(a, b) => a.eval(x1, x2) * b.eval(x1, x2),
            Expr::Div(a, b) => a.eval(x1, x2) / b.eval(x1, x2),
            Expr::Pow(a, b) => {
                let base = a.eval(x1, x2);
                match **b {
                    Expr::Const(p) if p.fract() == 0.0 && p.abs() < 64.0 => base.powi(p as i32),
                    _ => base.powf(b.eval(x1, x2)),
                }
            }
            Expr::Sin(a) => a.eval(x1, x2).sin(),
            Expr::Cos(a) => a.eval(x1, x2).cos(),
            Expr::Exp(a) => a.eval(x1, x2).exp(),
            Expr::Ln(a) => a.eval(x1, x2).ln(),
        }
    }

    /// Symbolic partial derivative with respect to `x1` (`axis = 0`) or `x2`.
    pub fn diff(&self, axis: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == axis { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(axis)),
            Expr::Add(a, b) => add(a.diff(axis), b.diff(axis)),
            Expr::Sub(a, b) => sub(a.diff(axis), b.diff(axis)),
            Expr::Mul(a, b) => add(mul(a.diff(axis), (**b).clone()), mul((**a).clone(), b.diff(axis))),
            Expr::Div(a, b) => div(
                sub(mul(a.diff(axis), (**b).clone()), mul((**a).clone(), b.diff(axis))),
                pow((**b).clone(), Expr::Const(2.0)),
            ),
            Expr::Pow(a, b) => {
                if let Expr::Const(p) = **b {
                    mul(mul(Expr::Const(p), pow((**a).clone(), Expr::Const(p - 1.0))), a.diff(axis))
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    mul(
                        self.clone(),
                        add(
                            mul(b.diff(axis), Expr::Ln(a.clone())),
                            div(mul((**b).clone(), a.diff(axis)), (**a).clone()),
                        ),
                    )
                }
            }
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(axis)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(axis))),
            Expr::Exp(a) => mul(self.clone(), a.diff(axis)),
            Expr::Ln(a) => div(a.diff(axis), (**a).clone()),
        }
    }

    pub fn scaled(&self, factor: f64) -> Expr {
        mul(Expr::Const(factor), self.clone())
    }

    pub fn times(&self, other: &Expr) -> Expr {
        mul(self.clone(), other.clone())
    }

    pub fn plus(&self, other: &Expr) -> Expr {
        add(self.clone(), other.clone())
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(v) => Expr::Const(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
        _ if a.is_zero() => Expr::Const(0.0),
        _ if b.is_one() => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x.powf(*y)),
        _ if b.is_zero() => Expr::Const(1.0),
        _ if b.is_one() => a,
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Ln(a) => write!(f, "ln({a})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
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
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                match ident {
                    "x1" => Ok(Expr::Var(0)),
                    "x2" => Ok(Expr::Var(1)),
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    "sin" | "cos" | "exp" => {
                        if self.peek() != Some(b'(') {
                            return Err(self.err("expected '(' after function name"));
                        }
                        let arg = Box::new(self.atom()?);
                        Ok(match ident {
                            "sin" => Expr::Sin(arg),
                            "cos" => Expr::Cos(arg),
                            _ => Expr::Exp(arg),
                        })
                    }
                    _ => {
                        self.pos = start;
                        Err(self.err(&format!("unknown identifier '{ident}'")))
                    }
                }
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        // exponent part, e.g. 1e-5
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'-' || self.src[self.pos] == b'+') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::Parse { pos: start, msg: format!("bad number '{text}'") })
    }
}

type NativeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A scalar function of `x'`: either a closed-form expression (with exact
/// derivatives) or an opaque closure (differentiated by central differences).
#[derive(Clone)]
pub enum ScalarFn {
    Expr(Expr),
    Native(NativeFn),
}

/// Step for finite-difference derivatives of opaque closures.
pub const METRIC_FD_STEP: f64 = 1e-5;
const METRIC_FD_STEP_2ND: f64 = 1e-4;

impl ScalarFn {
    pub fn native(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Native(Arc::new(f))
    }

    pub fn constant(v: f64) -> Self {
        ScalarFn::Expr(Expr::Const(v))
    }

    pub fn parse(src: &str) -> Result<Self> {
        Expr::parse(src).map(ScalarFn::Expr)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Expr(e) if e.is_zero())
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            ScalarFn::Expr(e) => e.eval(x1, x2),
            ScalarFn::Native(f) => f(x1, x2),
        }
    }

    /// First partial derivatives; symbolic for expressions.
    pub fn gradient_fn(&self) -> [ScalarFn; 2] {
        match self {
            ScalarFn::Expr(e) => [ScalarFn::Expr(e.diff(0)), ScalarFn::Expr(e.diff(1))],
            ScalarFn::Native(f) => {
                let fx = f.clone();
                let fy = f.clone();
                let h = METRIC_FD_STEP;
                [
                    ScalarFn::native(move |a, b| (fx(a + h, b) - fx(a - h, b)) / (2.0 * h)),
                    ScalarFn::native(move |a, b| (fy(a, b + h) - fy(a, b - h)) / (2.0 * h)),
                ]
            }
        }
    }

    /// Second partials `[f_11, f_12, f_22]`.
    pub fn hessian_fn(&self) -> [ScalarFn; 3] {
        match self {
            ScalarFn::Expr(e) => {
                let ex = e.diff(0);
                let ey = e.diff(1);
                [ScalarFn::Expr(ex.diff(0)), ScalarFn::Expr(ex.diff(1)), ScalarFn::Expr(ey.diff(1))]
            }
            ScalarFn::Native(f) => {
                let h = METRIC_FD_STEP_2ND;
                let (a, b, c) = (f.clone(), f.clone(), f.clone());
                [
                    ScalarFn::native(move |x, y| (a(x + h, y) - 2.0 * a(x, y) + a(x - h, y)) / (h * h)),
                    ScalarFn::native(move |x, y| {
                        (b(x + h, y + h) - b(x + h, y - h) - b(x - h, y + h) + b(x - h, y - h)) / (4.0 * h * h)
                    }),
                    ScalarFn::native(move |x, y| (c(x, y + h) - 2.0 * c(x, y) + c(x, y - h)) / (h * h)),
                ]
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> ScalarFn {
        match self {
            ScalarFn::Expr(e) => ScalarFn::Expr(e.scaled(factor)),
            ScalarFn::Native(f) => {
                let f = f.clone();
                ScalarFn::native(move |a, b| factor * f(a, b))
            }
        }
    }

    pub fn times(&self, other: &ScalarFn) -> ScalarFn {
        match (self, other) {
            (ScalarFn::Expr(a), ScalarFn::Expr(b)) => ScalarFn::Expr(a.times(b)),
            _ => {
                let (f, g) = (self.clone(), other.clone());
                ScalarFn::native(move |a, b| f.eval(a, b) * g.eval(a, b))
            }
        }
    }

    pub fn plus(&self, other: &ScalarFn) -> ScalarFn {
        match (self, other) {
            (ScalarFn::Expr(a), ScalarFn::Expr(b)) => ScalarFn::Expr(a.plus(b)),
            _ => {
                let (f, g) = (self.clone(), other.clone());
                ScalarFn::native(move |a, b| f.eval(a, b) + g.eval(a, b))
            }
        }
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Expr(e) => write!(f, "Expr({e})"),
            ScalarFn::Native(_) => write!(f, "Native(..)"),
        }
    }
}

impl From<Expr> for ScalarFn {
    fn from(e: Expr) -> Self {
        ScalarFn::Expr(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_precedence_and_power() {
        let e = Expr::parse("1 + 2*x1^2 - x2/4").unwrap();
        assert_eq!(e.eval(3.0, 8.0), 1.0 + 18.0 - 2.0);
        let e = Expr::parse("-2^2").unwrap();
        assert_eq!(e.eval(0.0, 0.0), -4.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval(0.0, 0.0), 512.0);
    }

    #[test]
    fn parses_functions_and_constants() {
        let e = Expr::parse("sin(pi*x1)*exp(x2) + cos(0)").unwrap();
        let v = e.eval(0.5, 1.0);
        assert!((v - (std::f64::consts::E + 1.0)).abs() < 1e-14);
        assert!((Expr::parse("1e-2").unwrap().eval(0.0, 0.0) - 0.01).abs() < 1e-18);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("x3 + 1").is_err());
        assert!(Expr::parse("sin x1").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn symbolic_derivative_matches_central_difference() {
        let e = Expr::parse("exp(2*x1)*sin(x2) + x1^3*x2 / (1 + x2^2) + 2^x1").unwrap();
        let (x, y) = (0.37, 0.81);
        for axis in 0..2 {
            let d = e.diff(axis).eval(x, y);
            let h = 1e-6;
            let (xp, yp, xm, ym) = if axis == 0 { (x + h, y, x - h, y) } else { (x, y + h, x, y - h) };
            let fd = (e.eval(xp, yp) - e.eval(xm, ym)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-7, "axis {axis}: {d} vs {fd}");
        }
    }

    #[test]
    fn native_functions_get_fd_derivatives() {
        let f = ScalarFn::native(|x, y| x * x * y);
        let [fx, fy] = f.gradient_fn();
        assert!((fx.eval(0.5, 2.0) - 2.0).abs() < 1e-8);
        assert!((fy.eval(0.5, 2.0) - 0.25).abs() < 1e-8);
        let [fxx, fxy, fyy] = f.hessian_fn();
        assert!((fxx.eval(0.5, 2.0) - 4.0).abs() < 1e-5);
        assert!((fxy.eval(0.5, 2.0) - 1.0).abs() < 1e-5);
        assert!(fyy.eval(0.5, 2.0).abs() < 1e-5);
    }
}
