//! Model description: scaled Hamiltonian, friction, noise and forcing.
//!
//! The Hamiltonian is `H = K̃(t, q, zᵀAz) + V(t, q)` with `z = (p - ψ)/√ε`
//! and `K̃(t, q, ζ) = Σ_l d_l(t, q) ζ^l`. Every coefficient is an [`Expr`].

mod source;
mod validate;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::exprlang::{DualValue, EvalError, Expr, ParseError};
use crate::linalg;

pub use source::{AMode, FrictionSource, KineticSource, MatrixSource, ModelSource, NoiseSource};
pub use validate::{validate, Check, CheckStatus, ValidationGrid, ValidationReport, Witness};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{pointer}: {message}")]
    Source { pointer: String, message: String },
    #[error("{pointer}: {source}")]
    Parse { pointer: String, source: ParseError },
    #[error("evaluating {what} at t={t}, q={q:?}: {source}")]
    Eval { what: String, t: f64, q: Vec<f64>, source: EvalError },
    #[error("{what} is singular or not positive definite at t={t}, q={q:?}")]
    NotPositiveDefinite { what: String, t: f64, q: Vec<f64> },
    #[error("{what} must be positive at t={t}, q={q:?} (got {value})")]
    NotPositive { what: String, t: f64, q: Vec<f64>, value: f64 },
    #[error("non-finite {what} at t={t}, q={q:?}")]
    NonFinite { what: String, t: f64, q: Vec<f64> },
}

/// Friction matrix γ.
#[derive(Debug, Clone)]
pub enum Friction {
    /// Entries of γ, row-major n×n.
    Explicit(Vec<Expr>),
    /// γ = b₂·A⁻¹.
    Scaled { b2: Expr },
}

/// Noise coefficient σ (Σ = σσᵀ).
#[derive(Debug, Clone)]
pub enum Noise {
    /// Entries of σ, row-major n×k.
    Explicit { k: usize, sigma: Vec<Expr> },
    /// Σ = b₁·A⁻¹ with σ the symmetric root √b₁·A^{-1/2}.
    FluctuationDissipation { b1: Expr },
}

/// A validated-by-construction model. Immutable; cheap to share.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    n: usize,
    kinetic_powers: Vec<u32>,
    kinetic_coeffs: Vec<Expr>,
    // row-major n×n; only the upper triangle is read, the lower is mirrored
    a: Vec<Expr>,
    psi: Vec<Expr>,
    v: Expr,
    friction: Friction,
    noise: Noise,
    f: Vec<Expr>,
    lambda_floor: f64,
    source: ModelSource,
}

/// How many derivatives [`ModelSpec::eval_coeffs_into`] fills in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    /// Values plus first q-derivatives of A and the kinetic coefficients,
    /// `∂_qψ`, `∂_tψ`, `∇V`. Enough for one step of the full system.
    First,
    /// Adds `∂_qγ` and `∂_q∂_qψ`, needed by γ̃⁻¹ derivatives.
    Second,
}

impl ModelSpec {
    pub fn from_source(src: &ModelSource) -> Result<ModelSpec, ModelError> {
        source::build(src)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Dimension of the driving Wiener process.
    pub fn wiener_dim(&self) -> usize {
        match &self.noise {
            Noise::Explicit { k, .. } => *k,
            Noise::FluctuationDissipation { .. } => self.n,
        }
    }

    pub fn kinetic_powers(&self) -> &[u32] {
        &self.kinetic_powers
    }

    pub fn kinetic_coeffs(&self) -> &[Expr] {
        &self.kinetic_coeffs
    }

    pub fn psi(&self) -> &[Expr] {
        &self.psi
    }

    pub fn potential(&self) -> &Expr {
        &self.v
    }

    pub fn friction(&self) -> &Friction {
        &self.friction
    }

    pub fn noise(&self) -> &Noise {
        &self.noise
    }

    pub fn forcing(&self) -> &[Expr] {
        &self.f
    }

    pub fn lambda_floor(&self) -> f64 {
        self.lambda_floor
    }

    /// Entry (i, j) of A (upper triangle is authoritative).
    pub fn a_entry(&self, i: usize, j: usize) -> &Expr {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        &self.a[i * self.n + j]
    }

    /// The source this model was built from.
    pub fn source(&self) -> &ModelSource {
        &self.source
    }

    /// K̃ = d₁ζ, i.e. kinetic energy quadratic in z.
    pub fn kinetic_is_quadratic(&self) -> bool {
        self.kinetic_powers == [1]
    }

    /// Both γ and Σ proportional to A⁻¹.
    pub fn is_scaled(&self) -> bool {
        matches!(self.friction, Friction::Scaled { .. }) && matches!(self.noise, Noise::FluctuationDissipation { .. })
    }

    /// ψ has identically zero source (`"0"`) in every component.
    pub fn psi_is_zero(&self) -> bool {
        self.psi.iter().all(|e| e.as_constant() == Some(0.0))
    }

    fn eval_err(&self, what: impl Into<String>, t: f64, q: &[f64]) -> impl FnOnce(EvalError) -> ModelError {
        let what = what.into();
        let q = q.to_vec();
        move |source| ModelError::Eval { what, t, q, source }
    }

    /// Coefficients of K̃ and their q-gradients at a fixed (t, q).
    pub fn frozen_kinetic(&self, t: f64, q: &[f64]) -> Result<FrozenKinetic, ModelError> {
        let mut fk = FrozenKinetic::new(self.n, self.kinetic_powers.clone());
        self.fill_kinetic(t, q, &mut fk)?;
        Ok(fk)
    }

    fn fill_kinetic(&self, t: f64, q: &[f64], fk: &mut FrozenKinetic) -> Result<(), ModelError> {
        let n = self.n;
        for (l, e) in self.kinetic_coeffs.iter().enumerate() {
            let (v, _) = e.eval_gradient(t, q, &mut fk.dd[l * n..(l + 1) * n]).map_err(self.eval_err(
                format!("kinetic coefficient {l}"),
                t,
                q,
            ))?;
            fk.d[l] = v;
        }
        Ok(())
    }

    /// Full derivative set of K̃ at (t, q, ζ).
    pub fn kinetic_eval(&self, t: f64, q: &[f64], zeta: f64) -> Result<KineticValue, ModelError> {
        Ok(self.frozen_kinetic(t, q)?.eval(zeta))
    }

    /// Fresh bundle with the right shapes for this model.
    pub fn new_bundle(&self) -> CoeffBundle {
        CoeffBundle::zeros(self.n, self.wiener_dim(), self.kinetic_powers.clone())
    }

    /// All coefficients at (t, q).
    pub fn eval_coeffs(&self, t: f64, q: &[f64], order: Order) -> Result<CoeffBundle, ModelError> {
        let mut b = self.new_bundle();
        self.eval_coeffs_into(t, q, order, &mut b)?;
        Ok(b)
    }

    /// As [`ModelSpec::eval_coeffs`], reusing the storage of `b`.
    pub fn eval_coeffs_into(&self, t: f64, q: &[f64], order: Order, b: &mut CoeffBundle) -> Result<(), ModelError> {
        let n = self.n;
        assert_eq!(q.len(), n, "position dimension");
        b.t = t;
        b.q.as_mut_slice().copy_from_slice(q);
        b.order = order;
        let mut grad = [0.0; 8];
        let mut grad_vec;
        let g: &mut [f64] = if n <= grad.len() {
            &mut grad[..n]
        } else {
            grad_vec = vec![0.0; n];
            &mut grad_vec
        };

        // A and its q-gradient
        for i in 0..n {
            for j in i..n {
                let e = &self.a[i * n + j];
                let (v, _) = e.eval_gradient(t, q, g).map_err(self.eval_err(format!("A[{i}][{j}]"), t, q))?;
                b.a[(i, j)] = v;
                b.a[(j, i)] = v;
                for k in 0..n {
                    b.da[k][(i, j)] = g[k];
                    b.da[k][(j, i)] = g[k];
                }
            }
        }
        b.a_inv.copy_from(&b.a);
        if !b.a_inv.try_inverse_mut() || (n == 1 && !(b.a[(0, 0)] > 0.0)) {
            return Err(ModelError::NotPositiveDefinite { what: "A".into(), t, q: q.to_vec() });
        }

        self.fill_kinetic(t, q, &mut b.kinetic)?;

        // psi
        for (i, e) in self.psi.iter().enumerate() {
            if order == Order::Second {
                e.eval_dual_into(t, q, &mut b.dual).map_err(self.eval_err(format!("psi[{i}]"), t, q))?;
                b.psi[i] = b.dual.value;
                b.dt_psi[i] = b.dual.dt;
                for k in 0..n {
                    b.dpsi[(i, k)] = b.dual.dq[k];
                    for l in 0..n {
                        b.ddpsi[i][(k, l)] = b.dual.hess(k, l);
                    }
                }
            } else {
                let (v, dt) = e.eval_gradient(t, q, g).map_err(self.eval_err(format!("psi[{i}]"), t, q))?;
                b.psi[i] = v;
                b.dt_psi[i] = dt;
                for k in 0..n {
                    b.dpsi[(i, k)] = g[k];
                }
            }
        }

        // potential and forcing
        self.v.eval_gradient(t, q, g).map_err(self.eval_err("V", t, q))?;
        b.grad_v.as_mut_slice().copy_from_slice(g);
        for (i, e) in self.f.iter().enumerate() {
            b.f[i] = e.eval(t, q).map_err(self.eval_err(format!("F[{i}]"), t, q))?;
        }

        // friction
        match &self.friction {
            Friction::Scaled { b2 } => {
                let (v, _) = b2.eval_gradient(t, q, g).map_err(self.eval_err("b2", t, q))?;
                if !(v > 0.0) {
                    return Err(ModelError::NotPositive { what: "b2".into(), t, q: q.to_vec(), value: v });
                }
                b.b2 = v;
                b.gamma.copy_from(&b.a_inv);
                b.gamma *= v;
                if order == Order::Second {
                    // ∂(b₂A⁻¹) = ∂b₂·A⁻¹ − b₂·A⁻¹(∂A)A⁻¹
                    for k in 0..n {
                        let m = &b.a_inv * &b.da[k] * &b.a_inv;
                        b.dgamma[k] = &b.a_inv * g[k] - m * v;
                    }
                }
            }
            Friction::Explicit(entries) => {
                for i in 0..n {
                    for j in 0..n {
                        let e = &entries[i * n + j];
                        let what = || format!("gamma[{i}][{j}]");
                        if order == Order::Second {
                            let (v, _) = e.eval_gradient(t, q, g).map_err(self.eval_err(what(), t, q))?;
                            b.gamma[(i, j)] = v;
                            for k in 0..n {
                                b.dgamma[k][(i, j)] = g[k];
                            }
                        } else {
                            b.gamma[(i, j)] = e.eval(t, q).map_err(self.eval_err(what(), t, q))?;
                        }
                    }
                }
                b.b2 = (&b.gamma * &b.a).trace() / n as f64;
            }
        }

        // noise
        match &self.noise {
            Noise::FluctuationDissipation { b1 } => {
                let v = b1.eval(t, q).map_err(self.eval_err("b1", t, q))?;
                if !(v > 0.0) {
                    return Err(ModelError::NotPositive { what: "b1".into(), t, q: q.to_vec(), value: v });
                }
                b.b1 = v;
                b.sigma_cov.copy_from(&b.a_inv);
                b.sigma_cov *= v;
                if n == 1 {
                    b.sigma[(0, 0)] = (v / b.a[(0, 0)]).sqrt();
                } else {
                    let r = linalg::spd_power(&b.a, -0.5).ok_or_else(|| ModelError::NotPositiveDefinite {
                        what: "A".into(),
                        t,
                        q: q.to_vec(),
                    })?;
                    b.sigma.copy_from(&(r * v.sqrt()));
                }
            }
            Noise::Explicit { k, sigma } => {
                for i in 0..n {
                    for r in 0..*k {
                        b.sigma[(i, r)] =
                            sigma[i * k + r].eval(t, q).map_err(self.eval_err(format!("sigma[{i}][{r}]"), t, q))?;
                    }
                }
                b.sigma_cov = &b.sigma * b.sigma.transpose();
                b.b1 = (&b.sigma_cov * &b.a).trace() / n as f64;
            }
        }
        // may be non-positive in the explicit modes; consumers that need β check it
        b.kbt = b.b1 / (2.0 * b.b2);
        Ok(())
    }

    /// `K^ε`-free kinetic energy `K̃(t, q, zᵀAz)` of a momentum deviation z.
    pub fn kinetic_energy(&self, b: &CoeffBundle, z: &[f64]) -> f64 {
        let zeta = quad_form(&b.a, z);
        b.kinetic.value(zeta)
    }
}

/// `zᵀ A z`.
pub fn quad_form(a: &DMatrix<f64>, z: &[f64]) -> f64 {
    let n = z.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[(i, j)] * z[j];
        }
        s += z[i] * row;
    }
    s
}

/// Every coefficient of the model at one (t, q).
#[derive(Debug, Clone)]
pub struct CoeffBundle {
    pub t: f64,
    pub q: DVector<f64>,
    pub order: Order,
    pub a: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
    /// `da[k] = ∂A/∂q^k`.
    pub da: Vec<DMatrix<f64>>,
    pub gamma: DMatrix<f64>,
    /// `dgamma[k] = ∂γ/∂q^k`; only filled at [`Order::Second`].
    pub dgamma: Vec<DMatrix<f64>>,
    /// n×k.
    pub sigma: DMatrix<f64>,
    /// Σ = σσᵀ.
    pub sigma_cov: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub dt_psi: DVector<f64>,
    /// `dpsi[(i, k)] = ∂ψ_i/∂q^k`.
    pub dpsi: DMatrix<f64>,
    /// `ddpsi[i]` is the Hessian of ψ_i; only filled at [`Order::Second`].
    pub ddpsi: Vec<DMatrix<f64>>,
    pub grad_v: DVector<f64>,
    pub f: DVector<f64>,
    /// b₁ (exact in the scaled noise mode, `tr(ΣA)/n` otherwise).
    pub b1: f64,
    /// b₂ (exact in the scaled friction mode, `tr(γA)/n` otherwise).
    pub b2: f64,
    /// Generalized temperature `b₁/(2b₂)`, with k_B = 1.
    pub kbt: f64,
    pub kinetic: FrozenKinetic,
    dual: DualValue,
}

impl CoeffBundle {
    fn zeros(n: usize, k: usize, powers: Vec<u32>) -> CoeffBundle {
        let z = || DMatrix::zeros(n, n);
        CoeffBundle {
            t: 0.0,
            q: DVector::zeros(n),
            order: Order::First,
            a: z(),
            a_inv: z(),
            da: vec![z(); n],
            gamma: z(),
            dgamma: vec![z(); n],
            sigma: DMatrix::zeros(n, k),
            sigma_cov: z(),
            psi: DVector::zeros(n),
            dt_psi: DVector::zeros(n),
            dpsi: z(),
            ddpsi: vec![z(); n],
            grad_v: DVector::zeros(n),
            f: DVector::zeros(n),
            b1: 0.0,
            b2: 0.0,
            kbt: 0.0,
            kinetic: FrozenKinetic::new(n, powers),
            dual: DualValue::zeros(n),
        }
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.kbt
    }

    /// Max-entry residual of Σ = 2k_BT·γ relative to the size of Σ.
    pub fn fd_residual(&self) -> f64 {
        let diff = &self.sigma_cov - &self.gamma * (2.0 * self.kbt);
        linalg::frob(&diff) / linalg::frob(&self.sigma_cov).max(f64::MIN_POSITIVE)
    }
}

/// K̃ at fixed (t, q): coefficients d_l and their q-gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenKinetic {
    pub n: usize,
    pub powers: Vec<u32>,
    pub d: Vec<f64>,
    /// Row l holds ∂_q d_l (length n), row-major.
    pub dd: Vec<f64>,
}

/// K̃ and its derivatives at one ζ.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticValue {
    pub k: f64,
    /// ∂_ζ K̃
    pub kp: f64,
    /// ∂²_ζ K̃
    pub kpp: f64,
    /// ∂_q K̃
    pub dq: Vec<f64>,
    /// ∂_q ∂_ζ K̃
    pub dq_kp: Vec<f64>,
}

impl FrozenKinetic {
    pub fn new(n: usize, powers: Vec<u32>) -> FrozenKinetic {
        let m = powers.len();
        FrozenKinetic { n, powers, d: vec![0.0; m], dd: vec![0.0; m * n] }
    }

    /// A single-term kinetic energy `d·ζ^power` with q-independent coefficient.
    pub fn constant(n: usize, power: u32, d: f64) -> FrozenKinetic {
        FrozenKinetic { n, powers: vec![power], d: vec![d], dd: vec![0.0; n] }
    }

    #[inline]
    pub fn value(&self, zeta: f64) -> f64 {
        self.powers.iter().zip(&self.d).map(|(&l, &d)| d * zeta.powi(l as i32)).sum()
    }

    /// (K̃, K̃′).
    #[inline]
    pub fn value_and_slope(&self, zeta: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut kp = 0.0;
        for (&l, &d) in self.powers.iter().zip(&self.d) {
            let zl1 = zeta.powi(l as i32 - 1);
            k += d * zl1 * zeta;
            kp += d * l as f64 * zl1;
        }
        (k, kp)
    }

    /// ∂_q K̃ at ζ, written into `out`.
    #[inline]
    pub fn dq_into(&self, zeta: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (l, &p) in self.powers.iter().enumerate() {
            let zl = zeta.powi(p as i32);
            for (o, g) in out.iter_mut().zip(&self.dd[l * self.n..(l + 1) * self.n]) {
                *o += g * zl;
            }
        }
    }

    pub fn eval(&self, zeta: f64) -> KineticValue {
        let n = self.n;
        let (k, kp) = self.value_and_slope(zeta);
        let mut kpp = 0.0;
        let mut dq = vec![0.0; n];
        let mut dq_kp = vec![0.0; n];
        for (l, (&p, &d)) in self.powers.iter().zip(&self.d).enumerate() {
            let pf = p as f64;
            let zl = zeta.powi(p as i32);
            let zl1 = if p >= 1 { pf * zeta.powi(p as i32 - 1) } else { 0.0 };
            if p >= 2 {
                kpp += d * pf * (pf - 1.0) * zeta.powi(p as i32 - 2);
            }
            for i in 0..n {
                dq[i] += self.dd[l * n + i] * zl;
                dq_kp[i] += self.dd[l * n + i] * zl1;
            }
        }
        KineticValue { k, kp, kpp, dq, dq_kp }
    }

    /// No coefficient depends on q at this point (gradients all zero).
    pub fn q_independent(&self) -> bool {
        self.dd.iter().all(|&x| x == 0.0)
    }

    /// Highest power and its coefficient.
    pub fn leading(&self) -> (u32, f64) {
        let m = self.powers.len() - 1;
        (self.powers[m], self.d[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1d(coeffs: &[&str], powers: &[u32], a: &str) -> ModelSpec {
        let mut s = ModelSource::benchmark_1d();
        s.kinetic = KineticSource { powers: powers.to_vec(), coeffs: coeffs.iter().map(|c| c.to_string()).collect() };
        s.a = MatrixSource { mode: AMode::Diagonal, entries: vec![a.into()] };
        ModelSpec::from_source(&s).unwrap()
    }

    #[test]
    fn temperature_from_b1_b2() {
        let mut s = ModelSource::benchmark_1d();
        s.friction = FrictionSource::Scaled { b2: "1".into() };
        s.noise = NoiseSource::Fd { b1: "2".into() };
        let spec = ModelSpec::from_source(&s).unwrap();
        let b = spec.eval_coeffs(0.0, &[0.3], Order::First).unwrap();
        assert_eq!(b.kbt, 1.0);
    }

    #[test]
    fn constant_a_inverse_and_gradient() {
        let spec = spec_1d(&["1"], &[1], "2");
        let b = spec.eval_coeffs(0.0, &[0.7], Order::Second).unwrap();
        assert_eq!(b.a_inv[(0, 0)], 0.5);
        assert_eq!(b.da[0][(0, 0)], 0.0);
    }

    #[test]
    fn psi_derivatives() {
        let mut s = ModelSource::benchmark_1d();
        s.psi = vec!["sin(q1)".into()];
        let spec = ModelSpec::from_source(&s).unwrap();
        let b = spec.eval_coeffs(0.0, &[0.0], Order::Second).unwrap();
        assert_eq!(b.dpsi[(0, 0)], 1.0);
        assert_eq!(b.ddpsi[0][(0, 0)], 0.0);
    }

    #[test]
    fn kinetic_examples() {
        let k = spec_1d(&["0.5"], &[1], "1").kinetic_eval(0.0, &[0.0], 4.0).unwrap();
        assert_eq!((k.k, k.kp, k.kpp), (2.0, 0.5, 0.0));
        let k = spec_1d(&["1"], &[2], "1").kinetic_eval(0.0, &[0.0], 2.0).unwrap();
        assert_eq!((k.k, k.kp, k.kpp), (4.0, 4.0, 2.0));
        let k = spec_1d(&["1+0.1*sin(q1)"], &[1], "1").kinetic_eval(0.0, &[0.0], 1.0).unwrap();
        assert!((k.dq[0] - 0.1).abs() < 1e-16);
    }

    #[test]
    fn kinetic_zeta_derivatives_match_finite_differences() {
        let spec = spec_1d(&["1+0.2*q1^2", "0.3", "0.05*exp(q1)"], &[1, 2, 4], "1");
        let fk = spec.frozen_kinetic(0.0, &[0.4]).unwrap();
        for &z in &[0.3, 1.0, 2.5] {
            let h = 1e-5 * z;
            let kv = fk.eval(z);
            let (kp_fd, kpp_fd) = {
                let (a, b, c) = (fk.value(z - h), fk.value(z), fk.value(z + h));
                ((c - a) / (2.0 * h), (c - 2.0 * b + a) / (h * h))
            };
            assert!((kv.kp - kp_fd).abs() <= 1e-8 * kv.kp.abs());
            assert!((kv.kpp - kpp_fd).abs() <= 1e-4 * kv.kpp.abs());
            // Richardson-extrapolated slope for the tighter bound
            let d = |h: f64| (fk.value(z + h) - fk.value(z - h)) / (2.0 * h);
            let rich = (4.0 * d(h) - d(2.0 * h)) / 3.0;
            assert!((kv.kp - rich).abs() <= 1e-8 * kv.kp.abs());
        }
    }

    #[test]
    fn scaled_modes_commute() {
        let mut s = ModelSource::benchmark_1d();
        s.n = 2;
        s.kinetic.coeffs = vec!["1".into()];
        s.a = MatrixSource {
            mode: AMode::Full,
            entries: vec!["2+sin(q1)".into(), "0.3*cos(q2)".into(), "0.3*cos(q2)".into(), "1.5".into()],
        };
        s.psi = vec!["0".into(), "0".into()];
        s.v = "0".into();
        s.friction = FrictionSource::Scaled { b2: "1+0.5*q1^2".into() };
        s.noise = NoiseSource::Fd { b1: "3".into() };
        s.forcing = None;
        let spec = ModelSpec::from_source(&s).unwrap();
        for q in [[0.1, 0.2], [-1.0, 2.0], [3.0, -0.5]] {
            let b = spec.eval_coeffs(0.3, &q, Order::First).unwrap();
            let c = &b.sigma_cov * b.gamma.transpose() - &b.gamma * &b.sigma_cov;
            assert!(c.abs().max() < 1e-14);
            let back = &b.sigma * b.sigma.transpose() - &b.sigma_cov;
            assert!(back.abs().max() < 1e-13);
        }
    }
}
