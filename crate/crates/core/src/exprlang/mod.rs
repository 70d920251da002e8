//! Scalar field language over `(t, q1..qn)`.
//!
//! Every model coefficient (potential, gauge field `psi`, kinetic matrix and
//! coefficients, friction, noise, forcing) is written in this language and
//! evaluated with exact first and second derivatives by forward-mode
//! propagation of value, gradient and Hessian in a single pass.
//!
//! ```
//! use langevin_homog::exprlang::Expr;
//!
//! let e = Expr::parse("0.5*q1^2", 1).unwrap();
//! let d = e.eval_dual(0.0, &[3.0]).unwrap();
//! assert_eq!(d.value, 4.5);
//! assert_eq!(d.dq, vec![3.0]);
//! assert_eq!(d.hess(0, 0), 1.0);
//! ```

mod parser;
mod tape;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub(crate) use tape::packed_index;
use tape::{stride, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum NodeKind {
    Num(f64),
    T,
    Q(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub kind: NodeKind,
    /// Byte range in the source text.
    pub span: (usize, usize),
}

impl Node {
    fn has_variables(&self) -> bool {
        match &self.kind {
            NodeKind::Num(_) => false,
            NodeKind::T | NodeKind::Q(_) => true,
            NodeKind::Neg(a) | NodeKind::Call(_, a) => a.has_variables(),
            NodeKind::Bin(_, a, b) | NodeKind::Pow(a, b) => a.has_variables() || b.has_variables(),
        }
    }

    fn visit_vars(&self, f: &mut impl FnMut(&NodeKind)) {
        match &self.kind {
            NodeKind::Num(_) => {}
            k @ (NodeKind::T | NodeKind::Q(_)) => f(k),
            NodeKind::Neg(a) | NodeKind::Call(_, a) => a.visit_vars(f),
            NodeKind::Bin(_, a, b) | NodeKind::Pow(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }
}

/// Parse failure with the byte offset into the source.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: found {found}, expected one of: {}", expected.join(", "))]
    Syntax { offset: usize, found: String, expected: Vec<String> },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), got {found}")]
    Arity { offset: usize, name: String, expected: usize, found: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
            ParseError::ZeroDimension => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogOfNonPositive(f64),
    SqrtOfNegative(f64),
    NonPositivePowerBase(f64),
    NonFinite,
    NonFiniteDerivative,
    DimensionMismatch { expected: usize, found: usize },
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalErrorKind::DivisionByZero => write!(f, "division by zero"),
            EvalErrorKind::LogOfNonPositive(x) => write!(f, "log of non-positive value {x}"),
            EvalErrorKind::SqrtOfNegative(x) => write!(f, "sqrt outside its differentiable domain (argument {x})"),
            EvalErrorKind::NonPositivePowerBase(x) => {
                write!(f, "non-integer or negative exponent needs a positive base (base {x})")
            }
            EvalErrorKind::NonFinite => write!(f, "non-finite value"),
            EvalErrorKind::NonFiniteDerivative => write!(f, "non-finite derivative"),
            EvalErrorKind::DimensionMismatch { expected, found } => {
                write!(f, "expected {expected} coordinates, got {found}")
            }
        }
    }
}

/// Evaluation failure naming the offending sub-expression.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{subexpr}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub span: (usize, usize),
    pub subexpr: String,
}

/// Value, q-gradient, symmetric q-Hessian and t-derivative at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub dq: Vec<f64>,
    /// Upper triangle of the Hessian, row-major packed.
    pub dqq: Vec<f64>,
    pub dt: f64,
}

impl DualValue {
    pub fn zeros(n: usize) -> DualValue {
        DualValue { value: 0.0, dq: vec![0.0; n], dqq: vec![0.0; n * (n + 1) / 2], dt: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dq.len()
    }

    /// Hessian entry (i, j); symmetric by construction.
    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.dqq[packed_index(self.dim(), i, j)]
    }
}

/// A parsed scalar field of `(t, q1..qn)`. Immutable and cheap to clone.
#[derive(Clone)]
pub struct Expr {
    inner: Arc<ExprInner>,
}

struct ExprInner {
    n: usize,
    source: String,
    root: Node,
    tape: Tape,
    uses_t: bool,
    uses_q: bool,
    constant: Option<f64>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?}, n={})", self.inner.source, self.inner.n)
    }
}

impl fmt::Display for Expr {
    /// Canonical printed form; re-parsing it yields an identical tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_node(&self.inner.root))
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n == other.inner.n && self.inner.root.kind_eq(&other.inner.root)
    }
}

impl Node {
    // structural equality ignoring spans
    fn kind_eq(&self, other: &Node) -> bool {
        match (&self.kind, &other.kind) {
            (NodeKind::Num(a), NodeKind::Num(b)) => a.to_bits() == b.to_bits(),
            (NodeKind::T, NodeKind::T) => true,
            (NodeKind::Q(a), NodeKind::Q(b)) => a == b,
            (NodeKind::Neg(a), NodeKind::Neg(b)) => a.kind_eq(b),
            (NodeKind::Bin(o1, a1, b1), NodeKind::Bin(o2, a2, b2)) => o1 == o2 && a1.kind_eq(a2) && b1.kind_eq(b2),
            (NodeKind::Pow(a1, b1), NodeKind::Pow(a2, b2)) => a1.kind_eq(a2) && b1.kind_eq(b2),
            (NodeKind::Call(f1, a1), NodeKind::Call(f2, a2)) => f1 == f2 && a1.kind_eq(a2),
            _ => false,
        }
    }
}

impl Expr {
    /// Parses `source` as a field over `t, q1..qn`.
    pub fn parse(source: &str, n: usize) -> Result<Expr, ParseError> {
        if n == 0 {
            return Err(ParseError::ZeroDimension);
        }
        let root = parser::parse_ast(source, n)?;
        Ok(Expr::from_root(source.to_string(), root, n))
    }

    /// The constant field `value`.
    pub fn constant(value: f64, n: usize) -> Expr {
        assert!(value.is_finite(), "constant must be finite");
        let source = print_num(value);
        let root = if value.is_sign_negative() && value != 0.0 {
            let inner = Node { kind: NodeKind::Num(-value), span: (1, source.len()) };
            Node { kind: NodeKind::Neg(Box::new(inner)), span: (0, source.len()) }
        } else {
            Node { kind: NodeKind::Num(value.abs()), span: (0, source.len()) }
        };
        Expr::from_root(source, root, n)
    }

    fn from_root(source: String, root: Node, n: usize) -> Expr {
        let tape = Tape::compile(&root);
        let (mut uses_t, mut uses_q) = (false, false);
        root.visit_vars(&mut |k| match k {
            NodeKind::T => uses_t = true,
            _ => uses_q = true,
        });
        let constant = if uses_t || uses_q {
            None
        } else {
            let mut buf = Vec::new();
            tape.run(0, 0.0, &[], 0, &mut buf).ok()
        };
        Expr { inner: Arc::new(ExprInner { n, source, root, tape, uses_t, uses_q, constant }) }
    }

    pub fn dim(&self) -> usize {
        self.inner.n
    }

    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.inner.source
    }

    pub fn depends_on_t(&self) -> bool {
        self.inner.uses_t
    }

    pub fn depends_on_q(&self) -> bool {
        self.inner.uses_q
    }

    /// `Some(c)` when the expression has no variables and evaluates cleanly.
    pub fn as_constant(&self) -> Option<f64> {
        self.inner.constant
    }

    fn check_dim(&self, q: &[f64]) -> Result<(), EvalError> {
        if q.len() != self.inner.n {
            return Err(EvalError {
                kind: EvalErrorKind::DimensionMismatch { expected: self.inner.n, found: q.len() },
                span: (0, self.inner.source.len()),
                subexpr: self.inner.source.clone(),
            });
        }
        Ok(())
    }

    fn annotate(&self, mut e: EvalError) -> EvalError {
        let (a, b) = e.span;
        e.subexpr = self.inner.source.get(a..b).unwrap_or(&self.inner.source).to_string();
        e
    }

    /// Value only.
    pub fn eval(&self, t: f64, q: &[f64]) -> Result<f64, EvalError> {
        if let Some(c) = self.inner.constant {
            return Ok(c);
        }
        self.check_dim(q)?;
        let mut out = [0.0];
        self.inner.tape.eval_into(0, t, q, self.inner.n, &mut out).map_err(|e| self.annotate(e))?;
        Ok(out[0])
    }

    /// Value and first derivatives; the q-gradient is written into `grad`.
    /// Returns `(value, d/dt)`.
    pub fn eval_gradient(&self, t: f64, q: &[f64], grad: &mut [f64]) -> Result<(f64, f64), EvalError> {
        let n = self.inner.n;
        assert_eq!(grad.len(), n, "gradient buffer length");
        if let Some(c) = self.inner.constant {
            grad.fill(0.0);
            return Ok((c, 0.0));
        }
        self.check_dim(q)?;
        let mut buf = [0.0; 18];
        let s = stride(1, n);
        if s <= buf.len() {
            self.inner.tape.eval_into(1, t, q, n, &mut buf[..s]).map_err(|e| self.annotate(e))?;
            grad.copy_from_slice(&buf[2..2 + n]);
            Ok((buf[0], buf[1]))
        } else {
            let mut v = vec![0.0; s];
            self.inner.tape.eval_into(1, t, q, n, &mut v).map_err(|e| self.annotate(e))?;
            grad.copy_from_slice(&v[2..2 + n]);
            Ok((v[0], v[1]))
        }
    }

    /// Value, gradient, Hessian and time derivative.
    pub fn eval_dual(&self, t: f64, q: &[f64]) -> Result<DualValue, EvalError> {
        let mut out = DualValue::zeros(self.inner.n);
        self.eval_dual_into(t, q, &mut out)?;
        Ok(out)
    }

    /// As [`Expr::eval_dual`], reusing the buffers of `out`.
    pub fn eval_dual_into(&self, t: f64, q: &[f64], out: &mut DualValue) -> Result<(), EvalError> {
        let n = self.inner.n;
        out.dq.resize(n, 0.0);
        out.dqq.resize(n * (n + 1) / 2, 0.0);
        if let Some(c) = self.inner.constant {
            out.value = c;
            out.dt = 0.0;
            out.dq.fill(0.0);
            out.dqq.fill(0.0);
            return Ok(());
        }
        self.check_dim(q)?;
        let s = stride(2, n);
        let mut v = vec![0.0; s];
        self.inner.tape.eval_into(2, t, q, n, &mut v).map_err(|e| self.annotate(e))?;
        out.value = v[0];
        out.dt = v[1];
        out.dq.copy_from_slice(&v[2..2 + n]);
        out.dqq.copy_from_slice(&v[2 + n..]);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// printing

fn print_num(x: f64) -> String {
    // Debug gives the shortest representation that round-trips exactly.
    format!("{x:?}")
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn prec(node: &Node) -> u8 {
    match &node.kind {
        NodeKind::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
        NodeKind::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
        NodeKind::Neg(_) => PREC_UNARY,
        NodeKind::Pow(..) => PREC_POW,
        _ => PREC_ATOM,
    }
}

fn wrap(node: &Node, min_prec: u8) -> String {
    let s = print_node(node);
    if prec(node) < min_prec {
        format!("({s})")
    } else {
        s
    }
}

pub(crate) fn print_node(node: &Node) -> String {
    match &node.kind {
        NodeKind::Num(x) => print_num(*x),
        NodeKind::T => "t".into(),
        NodeKind::Q(i) => format!("q{}", i + 1),
        NodeKind::Neg(a) => format!("-{}", wrap(a, PREC_UNARY)),
        NodeKind::Bin(op, a, b) => {
            let (sym, p) = match op {
                BinOp::Add => ("+", PREC_ADD),
                BinOp::Sub => ("-", PREC_ADD),
                BinOp::Mul => ("*", PREC_MUL),
                BinOp::Div => ("/", PREC_MUL),
            };
            // left-associative: the right operand needs strictly higher precedence
            format!("{} {} {}", wrap(a, p), sym, wrap(b, p + 1))
        }
        NodeKind::Pow(a, b) => format!("{}^{}", wrap(a, PREC_ATOM), wrap(b, PREC_UNARY)),
        NodeKind::Call(f, a) => format!("{}({})", f.name(), print_node(a)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn parses_constant_zero() {
        let e = Expr::parse("0", 1).unwrap();
        assert_eq!(e.as_constant(), Some(0.0));
        assert_eq!(e.eval(1.0, &[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn half_square() {
        let e = Expr::parse("0.5*q1^2", 1).unwrap();
        assert_eq!(e.eval(0.0, &[3.0]).unwrap(), 4.5);
        let d = e.eval_dual(0.0, &[3.0]).unwrap();
        assert_eq!((d.value, d.dq[0], d.hess(0, 0), d.dt), (4.5, 3.0, 1.0, 0.0));
    }

    #[test]
    fn unbalanced_paren_reports_end_offset() {
        let err = Expr::parse("2 + sin(q1", 1).unwrap_err();
        assert_eq!(err.offset(), 10);
        match err {
            ParseError::Syntax { expected, .. } => assert!(expected.iter().any(|e| e == "`)`")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sine_at_zero() {
        let d = Expr::parse("sin(q1)", 1).unwrap().eval_dual(0.0, &[0.0]).unwrap();
        assert_eq!((d.value, d.dq[0], d.hess(0, 0)), (0.0, 1.0, -0.0));
    }

    #[test]
    fn exp_of_product_matches_finite_differences() {
        let e = Expr::parse("exp(q1*q2)", 2).unwrap();
        let d = e.eval_dual(0.0, &[1.0, 1.0]).unwrap();
        // oracle: central finite differences with step 1e-5
        let f = |x: f64, y: f64| e.eval(0.0, &[x, y]).unwrap();
        let h = 1e-5;
        let fx = (f(1.0 + h, 1.0) - f(1.0 - h, 1.0)) / (2.0 * h);
        let fxx = (f(1.0 + h, 1.0) - 2.0 * f(1.0, 1.0) + f(1.0 - h, 1.0)) / (h * h);
        let fxy =
            (f(1.0 + h, 1.0 + h) - f(1.0 + h, 1.0 - h) - f(1.0 - h, 1.0 + h) + f(1.0 - h, 1.0 - h)) / (4.0 * h * h);
        let e1 = std::f64::consts::E;
        assert!(close(d.value, e1, 1e-15));
        assert!(close(d.dq[0], fx, 1e-6) && close(d.dq[1], fx, 1e-6));
        assert!(close(d.hess(0, 0), fxx, 1e-4));
        assert!(close(d.hess(0, 1), fxy, 1e-4));
        // and the frozen closed form
        assert!(close(d.hess(0, 1), 2.0 * e1, 1e-14));
        assert!(close(d.hess(1, 1), e1, 1e-14));
    }

    #[test]
    fn time_derivative() {
        let d = Expr::parse("t*q1 + cos(t)", 1).unwrap().eval_dual(0.5, &[2.0]).unwrap();
        assert!(close(d.dt, 2.0 - 0.5f64.sin(), 1e-15));
        assert_eq!(d.dq[0], 0.5);
    }

    #[test]
    fn unknown_identifiers_and_arity() {
        assert!(matches!(Expr::parse("q3", 2), Err(ParseError::UnknownIdentifier { offset: 0, .. })));
        assert!(matches!(Expr::parse("1 + x", 1), Err(ParseError::UnknownIdentifier { offset: 4, .. })));
        assert!(matches!(Expr::parse("q0", 1), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expr::parse("sin(1, 2)", 1), Err(ParseError::Arity { found: 2, .. })));
        assert!(matches!(Expr::parse("sin + 1", 1), Err(ParseError::Arity { found: 0, .. })));
        assert!(matches!(Expr::parse("cos()", 1), Err(ParseError::Arity { found: 0, .. })));
        assert!(matches!(Expr::parse("foo(1)", 1), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expr::parse("1 2", 1), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(Expr::parse("", 1), Err(ParseError::Syntax { offset: 0, .. })));
        assert!(matches!(Expr::parse("1", 0), Err(ParseError::ZeroDimension)));
    }

    #[test]
    fn unicode_minus_and_exponents() {
        let e = Expr::parse("2 \u{2212} 1.5e1*q1", 1).unwrap();
        assert_eq!(e.eval(0.0, &[1.0]).unwrap(), -13.0);
        assert_eq!(Expr::parse(".5E-1", 1).unwrap().as_constant(), Some(0.05));
        assert!(Expr::parse("1e", 1).is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |s: &str| Expr::parse(s, 1).unwrap().eval(0.0, &[2.0]).unwrap();
        assert_eq!(v("-2^2"), -4.0);
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("8/2/2"), 2.0);
        assert_eq!(v("8-2-2"), 4.0);
        assert_eq!(v("2*-q1"), -4.0);
        assert_eq!(v("q1^-1"), 0.5);
        assert_eq!(v("(1+q1)*3"), 9.0);
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let e = Expr::parse("1 + sqrt(q1 - 3)", 1).unwrap();
        let err = e.eval(0.0, &[1.0]).unwrap_err();
        assert!(matches!(err.kind, EvalErrorKind::SqrtOfNegative(_)));
        assert_eq!(err.subexpr, "sqrt(q1 - 3)");
        let err = Expr::parse("log(q1)", 1).unwrap().eval(0.0, &[0.0]).unwrap_err();
        assert!(matches!(err.kind, EvalErrorKind::LogOfNonPositive(_)));
        let err = Expr::parse("1/(q1-1)", 1).unwrap().eval(0.0, &[1.0]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        let err = Expr::parse("(q1-2)^0.5", 1).unwrap().eval(0.0, &[1.0]).unwrap_err();
        assert!(matches!(err.kind, EvalErrorKind::NonPositivePowerBase(_)));
        let err = Expr::parse("exp(q1)", 1).unwrap().eval(0.0, &[1000.0]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::NonFinite);
        // sqrt(0) has a value but no derivative
        let s = Expr::parse("sqrt(q1)", 1).unwrap();
        assert_eq!(s.eval(0.0, &[0.0]).unwrap(), 0.0);
        assert!(s.eval_dual(0.0, &[0.0]).is_err());
    }

    #[test]
    fn integer_power_of_negative_base() {
        let e = Expr::parse("q1^3", 1).unwrap();
        let d = e.eval_dual(0.0, &[-2.0]).unwrap();
        assert_eq!((d.value, d.dq[0], d.hess(0, 0)), (-8.0, 12.0, -12.0));
        // constant integer exponent given as an expression
        assert_eq!(Expr::parse("q1^(1+1)", 1).unwrap().eval(0.0, &[-3.0]).unwrap(), 9.0);
        assert_eq!(Expr::parse("q1^0", 1).unwrap().eval_dual(0.0, &[0.0]).unwrap().value, 1.0);
    }

    #[test]
    fn general_power_derivatives() {
        // d/dx x^x = x^x (ln x + 1)
        let d = Expr::parse("q1^q1", 1).unwrap().eval_dual(0.0, &[2.0]).unwrap();
        assert!(close(d.value, 4.0, 1e-15));
        assert!(close(d.dq[0], 4.0 * (2f64.ln() + 1.0), 1e-14));
        let h = 4.0 * ((2f64.ln() + 1.0).powi(2) + 0.5);
        assert!(close(d.hess(0, 0), h, 1e-14));
    }

    #[test]
    fn printing_round_trips() {
        for src in ["-(q1 + 2)^2", "q1 - (q2 - 3)", "2^-q1", "(-2)^2", "1e-7*t/(q1*q2)", "-(-q1)", "(q1^2)^3"] {
            let e = Expr::parse(src, 2).unwrap();
            let printed = e.to_string();
            let again = Expr::parse(&printed, 2).unwrap();
            assert_eq!(e, again, "{src} -> {printed}");
            assert_eq!(again.to_string(), printed);
        }
    }

    #[test]
    fn constant_builder() {
        assert_eq!(Expr::constant(-0.25, 2).eval(0.0, &[1.0, 1.0]).unwrap(), -0.25);
        let e = Expr::constant(1e-300, 1);
        assert_eq!(Expr::parse(&e.to_string(), 1).unwrap().as_constant(), Some(1e-300));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let e = Expr::parse("q1+q2", 2).unwrap();
        assert!(matches!(
            e.eval(0.0, &[1.0]).unwrap_err().kind,
            EvalErrorKind::DimensionMismatch { expected: 2, found: 1 }
        ));
    }
}
