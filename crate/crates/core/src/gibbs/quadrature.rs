//! Globally adaptive Gauss–Legendre quadrature for vector-valued integrands.
//!
//! Each panel is estimated with the 10-point rule on the whole panel and on
//! its two halves; the difference is the panel's error estimate. The panel
//! with the largest scaled error is split until every component meets
//! `max(abs_tol, rel_tol·|I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const ORDER: usize = 10;

/// Tolerances and limits for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings { rel_tol: 1e-10, abs_tol: 1e-12, max_panels: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadOutcome {
    pub value: Vec<f64>,
    /// Summed per-panel error estimate, per component.
    pub error: Vec<f64>,
    pub panels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadFailure {
    pub panels: usize,
    pub error: f64,
    pub value: Vec<f64>,
}

/// Nodes and weights on [-1, 1], by Newton iteration on P_10.
fn rule() -> &'static [(f64, f64); ORDER] {
    static RULE: OnceLock<[(f64, f64); ORDER]> = OnceLock::new();
    RULE.get_or_init(|| {
        let m = ORDER;
        let mut out = [(0.0, 0.0); ORDER];
        for i in 0..m.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=m {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            out[i] = (-x, w);
            out[m - 1 - i] = (x, w);
        }
        out
    })
}

fn gl<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, buf: &mut [f64], acc: &mut [f64]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    acc.fill(0.0);
    for &(x, w) in rule() {
        f(c + h * x, buf);
        for (s, v) in acc.iter_mut().zip(buf.iter()) {
            *s += w * v;
        }
    }
    for s in acc.iter_mut() {
        *s *= h;
    }
}

struct Panel {
    a: f64,
    b: f64,
    left: Vec<f64>,
    right: Vec<f64>,
    delta: Vec<f64>,
    key: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.key.total_cmp(&other.key) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        // ties broken by position so the split order is deterministic
        self.key.total_cmp(&other.key).then(other.a.total_cmp(&self.a))
    }
}

/// Integrates the `dim`-vector `f` over `[a, b]`, starting from
/// `initial_panels` equal panels.
pub fn integrate<F: FnMut(f64, &mut [f64])>(
    mut f: F,
    a: f64,
    b: f64,
    dim: usize,
    initial_panels: usize,
    settings: &QuadSettings,
) -> Result<QuadOutcome, QuadFailure> {
    let mut buf = vec![0.0; dim];
    let mut whole = vec![0.0; dim];
    let make = |f: &mut F, a: f64, b: f64, whole: &[f64], buf: &mut [f64]| -> Panel {
        let m = 0.5 * (a + b);
        let mut left = vec![0.0; dim];
        let mut right = vec![0.0; dim];
        gl(f, a, m, buf, &mut left);
        gl(f, m, b, buf, &mut right);
        let delta = (0..dim).map(|c| (whole[c] - left[c] - right[c]).abs()).collect();
        Panel { a, b, left, right, delta, key: 0.0 }
    };

    let k = initial_panels.max(1);
    let mut panels = Vec::with_capacity(k);
    for i in 0..k {
        let pa = a + (b - a) * i as f64 / k as f64;
        let pb = if i + 1 == k { b } else { a + (b - a) * (i + 1) as f64 / k as f64 };
        gl(&mut f, pa, pb, &mut buf, &mut whole);
        panels.push(make(&mut f, pa, pb, &whole, &mut buf));
    }

    let totals = |ps: &mut dyn Iterator<Item = &Panel>| {
        let mut v = vec![0.0; dim];
        let mut e = vec![0.0; dim];
        for p in ps {
            for c in 0..dim {
                v[c] += p.left[c] + p.right[c];
                e[c] += p.delta[c];
            }
        }
        (v, e)
    };
    let tol_of =
        |v: &[f64]| -> Vec<f64> { v.iter().map(|x| settings.abs_tol.max(settings.rel_tol * x.abs())).collect() };
    let key_of = |p: &Panel, tol: &[f64]| p.delta.iter().zip(tol).map(|(d, t)| d / t).fold(0.0, f64::max);

    let (v, _) = totals(&mut panels.iter());
    let mut tol = tol_of(&v);
    let mut heap = BinaryHeap::with_capacity(2 * k);
    for mut p in panels {
        p.key = key_of(&p, &tol);
        heap.push(p);
    }
    let mut count = k;
    loop {
        let (value, error) = totals(&mut heap.iter());
        tol = tol_of(&value);
        if error.iter().zip(&tol).all(|(e, t)| e <= t) {
            return Ok(QuadOutcome { value, error, panels: count });
        }
        if count >= settings.max_panels {
            let worst = error.iter().fold(0.0, |m: f64, e| m.max(*e));
            return Err(QuadFailure { panels: count, error: worst, value });
        }
        // split the worst few panels between total recomputations
        let batch = (count / 8).max(1);
        for _ in 0..batch {
            let Some(p) = heap.pop() else { break };
            let m = 0.5 * (p.a + p.b);
            let mut l = make(&mut f, p.a, m, &p.left, &mut buf);
            let mut r = make(&mut f, m, p.b, &p.right, &mut buf);
            l.key = key_of(&l, &tol);
            r.key = key_of(&r, &tol);
            heap.push(l);
            heap.push(r);
            count += 1;
        }
    }
}
