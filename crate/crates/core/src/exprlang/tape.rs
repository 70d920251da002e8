//! Flat postfix tape and second-order forward-mode evaluation.
//!
//! Every tape slot holds a jet laid out as
//! `[value, d/dt, d/dq_0 .. d/dq_{n-1}, packed upper Hessian]`. Order 0 uses
//! only the value, order 1 adds the time derivative and gradient, order 2
//! the Hessian. Evaluation is allocation-free after the thread-local scratch
//! buffer has grown to the largest tape seen.

use std::cell::RefCell;

use super::{BinOp, EvalError, EvalErrorKind, Func, Node, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum Op {
    Const(f64),
    T,
    Q(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    PowInt(usize, i32),
    PowReal(usize, usize),
    Call(Func, usize),
}

#[derive(Debug, Clone)]
pub(super) struct Instr {
    pub op: Op,
    pub span: (usize, usize),
}

#[derive(Debug, Clone)]
pub(super) struct Tape {
    pub instrs: Vec<Instr>,
}

/// Largest exponent compiled to repeated multiplication semantics.
const MAX_INT_EXPONENT: f64 = 1024.0;

impl Tape {
    pub fn compile(root: &Node) -> Tape {
        let mut instrs = Vec::new();
        emit(root, &mut instrs);
        Tape { instrs }
    }
}

fn emit(node: &Node, out: &mut Vec<Instr>) -> usize {
    let op = match &node.kind {
        NodeKind::Num(x) => Op::Const(*x),
        NodeKind::T => Op::T,
        NodeKind::Q(i) => Op::Q(*i),
        NodeKind::Neg(a) => Op::Neg(emit(a, out)),
        NodeKind::Bin(op, a, b) => {
            let a = emit(a, out);
            let b = emit(b, out);
            match op {
                BinOp::Add => Op::Add(a, b),
                BinOp::Sub => Op::Sub(a, b),
                BinOp::Mul => Op::Mul(a, b),
                BinOp::Div => Op::Div(a, b),
            }
        }
        NodeKind::Pow(base, exp) => {
            let int_exp = if exp.has_variables() {
                None
            } else {
                constant_value(exp).filter(|k| k.fract() == 0.0 && *k >= 0.0 && *k <= MAX_INT_EXPONENT)
            };
            let b = emit(base, out);
            match int_exp {
                Some(k) => Op::PowInt(b, k as i32),
                None => Op::PowReal(b, emit(exp, out)),
            }
        }
        NodeKind::Call(f, a) => Op::Call(*f, emit(a, out)),
    };
    out.push(Instr { op, span: node.span });
    out.len() - 1
}

/// Value of a variable-free subtree, `None` if it is not finite or hits a
/// domain error.
fn constant_value(node: &Node) -> Option<f64> {
    let tape = Tape::compile(node);
    let mut buf = Vec::new();
    tape.run(0, 0.0, &[], 1, &mut buf).ok()
}

/// Packed index of the upper-triangle entry (i, j), i <= j.
#[inline]
pub(crate) fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

#[inline]
pub(super) fn stride(order: u8, n: usize) -> usize {
    match order {
        0 => 1,
        1 => 2 + n,
        _ => 2 + n + n * (n + 1) / 2,
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

impl Tape {
    /// Evaluates the tape and copies the root jet into `out`
    /// (`out.len() == stride(order, n)`).
    pub fn eval_into(&self, order: u8, t: f64, q: &[f64], n: usize, out: &mut [f64]) -> Result<(), EvalError> {
        SCRATCH.with(|cell| match cell.try_borrow_mut() {
            Ok(mut buf) => {
                let v = self.run(order, t, q, n, &mut buf)?;
                let s = stride(order, n);
                let root = (self.instrs.len() - 1) * s;
                out.copy_from_slice(&buf[root..root + s]);
                let _ = v;
                Ok(())
            }
            // re-entrant use on the same thread: fall back to a fresh buffer
            Err(_) => {
                let mut buf = Vec::new();
                self.run(order, t, q, n, &mut buf)?;
                let s = stride(order, n);
                let root = (self.instrs.len() - 1) * s;
                out.copy_from_slice(&buf[root..root + s]);
                Ok(())
            }
        })
    }

    /// Runs the tape in `buf`, returning the root value.
    pub fn run(&self, order: u8, t: f64, q: &[f64], n: usize, buf: &mut Vec<f64>) -> Result<f64, EvalError> {
        let s = stride(order, n);
        // two extra slots of temporaries for the composite real power
        let needed = (self.instrs.len() + 2) * s;
        if buf.len() < needed {
            buf.resize(needed, 0.0);
        }
        for (k, instr) in self.instrs.iter().enumerate() {
            let (done, rest) = buf.split_at_mut(k * s);
            let (dst, tmp) = rest.split_at_mut(s);
            dst.fill(0.0);
            let slot = |i: usize| &done[i * s..(i + 1) * s];
            let fail = |kind: EvalErrorKind| EvalError { kind, span: instr.span, subexpr: String::new() };
            match instr.op {
                Op::Const(x) => dst[0] = x,
                Op::T => {
                    dst[0] = t;
                    if order >= 1 {
                        dst[1] = 1.0;
                    }
                }
                Op::Q(i) => {
                    dst[0] = q[i];
                    if order >= 1 {
                        dst[2 + i] = 1.0;
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (slot(a), slot(b));
                    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
                        *d = x + y;
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (slot(a), slot(b));
                    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
                        *d = x - y;
                    }
                }
                Op::Neg(a) => {
                    for (d, x) in dst.iter_mut().zip(slot(a)) {
                        *d = -x;
                    }
                }
                Op::Mul(a, b) => mul(order, n, slot(a), slot(b), dst),
                Op::Div(a, b) => {
                    let (a, b) = (slot(a), slot(b));
                    if b[0] == 0.0 {
                        return Err(fail(EvalErrorKind::DivisionByZero));
                    }
                    div(order, n, a, b, dst);
                }
                Op::PowInt(a, k) => {
                    let a = slot(a);
                    let x = a[0];
                    let kf = k as f64;
                    let f0 = x.powi(k);
                    let f1 = if k >= 1 { kf * x.powi(k - 1) } else { 0.0 };
                    let f2 = if k >= 2 { kf * (kf - 1.0) * x.powi(k - 2) } else { 0.0 };
                    chain(order, n, a, f0, f1, f2, dst);
                }
                Op::PowReal(a, b) => {
                    let (a, b) = (slot(a), slot(b));
                    let x = a[0];
                    if x <= 0.0 {
                        return Err(fail(EvalErrorKind::NonPositivePowerBase(x)));
                    }
                    // b^e = exp(e * ln b)
                    let (ln_a, prod) = tmp[..2 * s].split_at_mut(s);
                    chain(order, n, a, x.ln(), 1.0 / x, -1.0 / (x * x), ln_a);
                    mul(order, n, b, ln_a, prod);
                    let e = prod[0].exp();
                    chain(order, n, prod, e, e, e, dst);
                }
                Op::Call(f, a) => {
                    let a = slot(a);
                    let x = a[0];
                    let (f0, f1, f2) = match f {
                        Func::Sin => (x.sin(), x.cos(), -x.sin()),
                        Func::Cos => (x.cos(), -x.sin(), -x.cos()),
                        Func::Exp => {
                            let e = x.exp();
                            (e, e, e)
                        }
                        Func::Log => {
                            if x <= 0.0 {
                                return Err(fail(EvalErrorKind::LogOfNonPositive(x)));
                            }
                            (x.ln(), 1.0 / x, -1.0 / (x * x))
                        }
                        Func::Sqrt => {
                            if x < 0.0 || (x == 0.0 && order >= 1) {
                                return Err(fail(EvalErrorKind::SqrtOfNegative(x)));
                            }
                            let r = x.sqrt();
                            if order == 0 {
                                (r, 0.0, 0.0)
                            } else {
                                (r, 0.5 / r, -0.25 / (r * x))
                            }
                        }
                        Func::Tanh => {
                            let th = x.tanh();
                            let sech2 = 1.0 - th * th;
                            (th, sech2, -2.0 * th * sech2)
                        }
                    };
                    chain(order, n, a, f0, f1, f2, dst);
                }
            }
            if !dst[0].is_finite() {
                return Err(fail(EvalErrorKind::NonFinite));
            }
        }
        let root = (self.instrs.len() - 1) * s;
        if buf[root..root + s].iter().any(|x| !x.is_finite()) {
            let last = self.instrs.last().expect("non-empty tape");
            return Err(EvalError {
                kind: EvalErrorKind::NonFiniteDerivative,
                span: last.span,
                subexpr: String::new(),
            });
        }
        Ok(buf[root])
    }
}

/// dst = f(a) given f(a.v), f'(a.v), f''(a.v).
#[inline]
fn chain(order: u8, n: usize, a: &[f64], f0: f64, f1: f64, f2: f64, dst: &mut [f64]) {
    dst[0] = f0;
    if order == 0 {
        return;
    }
    dst[1] = f1 * a[1];
    for i in 0..n {
        dst[2 + i] = f1 * a[2 + i];
    }
    if order >= 2 {
        let h = 2 + n;
        for i in 0..n {
            for j in i..n {
                let k = packed_index(n, i, j);
                dst[h + k] = f1 * a[h + k] + f2 * a[2 + i] * a[2 + j];
            }
        }
    }
}

#[inline]
fn mul(order: u8, n: usize, a: &[f64], b: &[f64], dst: &mut [f64]) {
    let (u, v) = (a[0], b[0]);
    dst[0] = u * v;
    if order == 0 {
        return;
    }
    dst[1] = a[1] * v + u * b[1];
    for i in 0..n {
        dst[2 + i] = a[2 + i] * v + u * b[2 + i];
    }
    if order >= 2 {
        let h = 2 + n;
        for i in 0..n {
            for j in i..n {
                let k = packed_index(n, i, j);
                dst[h + k] = a[h + k] * v + u * b[h + k] + a[2 + i] * b[2 + j] + a[2 + j] * b[2 + i];
            }
        }
    }
}

#[inline]
fn div(order: u8, n: usize, a: &[f64], b: &[f64], dst: &mut [f64]) {
    let v = b[0];
    let w = a[0] / v;
    dst[0] = w;
    if order == 0 {
        return;
    }
    dst[1] = (a[1] - w * b[1]) / v;
    for i in 0..n {
        dst[2 + i] = (a[2 + i] - w * b[2 + i]) / v;
    }
    if order >= 2 {
        let h = 2 + n;
        for i in 0..n {
            for j in i..n {
                let k = packed_index(n, i, j);
                dst[h + k] = (a[h + k] - w * b[h + k] - dst[2 + i] * b[2 + j] - b[2 + i] * dst[2 + j]) / v;
            }
        }
    }
}
