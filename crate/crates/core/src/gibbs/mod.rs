//! Instantaneous equilibrium of the fast momentum and the limiting SDE.
//!
//! Under the fluctuation–dissipation relation the fast variable z has the
//! Gibbs density `h ∝ exp(-β K̃(t, q, zᵀAz))`. Every z-integral against h is
//! reduced to a one-dimensional radial integral:
//!
//! ```text
//! ∫ f(zᵀAz) dz = det(A)^{-1/2} ω_{n-1} ∫_0^∞ r^{n-1} f(r²) dr
//! ```
//!
//! with `ω_{n-1} = 2π^{n/2}/Γ(n/2)` the area of the unit sphere in Rⁿ.

pub mod quadrature;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};
use thiserror::Error;

use crate::linalg;
use crate::model_spec::{CoeffBundle, FrozenKinetic, ModelError, ModelSpec, Order};
pub use quadrature::{QuadOutcome, QuadSettings};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GibbsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Gibbs weight is not integrable at t={t}, q={q:?}: {reason}")]
    NonIntegrableTail { t: f64, q: Vec<f64>, reason: String },
    #[error("quadrature did not converge after {panels} panels (error estimate {error:e})")]
    NonConvergence { panels: usize, error: f64 },
    #[error("modified friction is singular at t={t}, q={q:?} (reciprocal condition {rcond:e})")]
    SingularTildeGamma { t: f64, q: Vec<f64>, rcond: f64 },
    #[error("fluctuation-dissipation relation fails at t={t}, q={q:?} (relative residual {residual:e})")]
    NotFluctuationDissipation { t: f64, q: Vec<f64>, residual: f64 },
    #[error("noise covariance is singular at t={t}, q={q:?}")]
    SingularNoise { t: f64, q: Vec<f64> },
}

/// Settings of the radial Gibbs quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadialQuadrature {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
    /// Use closed-form moments ⟨ζ^l⟩ when K̃ has a single term.
    pub closed_form: bool,
}

impl Default for RadialQuadrature {
    fn default() -> Self {
        let q = QuadSettings::default();
        RadialQuadrature { rel_tol: q.rel_tol, abs_tol: q.abs_tol, max_panels: q.max_panels, closed_form: true }
    }
}

impl RadialQuadrature {
    pub fn settings(&self) -> QuadSettings {
        QuadSettings { rel_tol: self.rel_tol, abs_tol: self.abs_tol, max_panels: self.max_panels }
    }

    /// Same tolerances, always integrating numerically.
    pub fn numeric(mut self) -> Self {
        self.closed_form = false;
        self
    }
}

/// `det(A)` for a small symmetric matrix.
fn det(a: &DMatrix<f64>) -> f64 {
    a.determinant()
}

/// Surface area of the unit sphere in Rⁿ.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

// polynomial growth allowed of integrands when choosing the cutoff
const TAIL_POWER: f64 = 8.0;
// the envelope is cut where it has dropped by e^-46 ≈ 1e-20 from its peak
const TAIL_DROP: f64 = 46.0;

/// Radial integrals of the Gibbs weight at a frozen (t, q).
#[derive(Debug, Clone, Copy)]
pub struct Radial<'a> {
    pub n: usize,
    pub beta: f64,
    pub kinetic: &'a FrozenKinetic,
}

impl<'a> Radial<'a> {
    /// Fails unless β > 0 and the leading coefficient of K̃ is positive.
    pub fn new(n: usize, beta: f64, kinetic: &'a FrozenKinetic, t: f64, q: &[f64]) -> Result<Radial<'a>, GibbsError> {
        let bad = |reason: String| GibbsError::NonIntegrableTail { t, q: q.to_vec(), reason };
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(bad(format!("inverse temperature {beta} is not positive")));
        }
        let (p, d) = kinetic.leading();
        if !(d > 0.0) {
            return Err(bad(format!("leading kinetic coefficient of power {p} is {d}, growth exponent not positive")));
        }
        Ok(Radial { n, beta, kinetic })
    }

    /// ζ at which βK̃ is of order one.
    fn scale(&self) -> f64 {
        self.kinetic
            .powers
            .iter()
            .zip(&self.kinetic.d)
            .filter(|(_, &d)| d > 0.0)
            .map(|(&l, &d)| (1.0 / (self.beta * d)).powf(1.0 / l as f64))
            .fold(f64::INFINITY, f64::min)
    }

    /// Cutoff ζ beyond which `ζ^{n/2+8} e^{-βK̃}` is negligible.
    pub fn zeta_cut(&self) -> f64 {
        let p = self.n as f64 / 2.0 + TAIL_POWER;
        let phi = |z: f64| p * z.ln() - self.beta * self.kinetic.value(z);
        let mut z = self.scale() * 1e-2;
        let mut best = phi(z);
        for _ in 0..4000 {
            z *= 1.2;
            let v = phi(z);
            best = best.max(v);
            if v < best - TAIL_DROP {
                return z;
            }
        }
        z
    }

    /// `∫_0^{r_c} r^{n-1} e^{-βK̃(r²)} [1, g(r²)] dr`; component 0 is the
    /// bare weight.
    pub fn integrate<G: FnMut(f64, &mut [f64])>(
        &self,
        dim: usize,
        mut g: G,
        quad: &RadialQuadrature,
    ) -> Result<QuadOutcome, GibbsError> {
        let r_c = self.zeta_cut().sqrt();
        let n1 = (self.n - 1) as i32;
        let mut gbuf = vec![0.0; dim];
        quadrature::integrate(
            |r, out| {
                let zeta = r * r;
                let w = r.powi(n1) * (-self.beta * self.kinetic.value(zeta)).exp();
                out[0] = w;
                if dim > 0 {
                    g(zeta, &mut gbuf);
                    for (o, v) in out[1..].iter_mut().zip(&gbuf) {
                        *o = w * v;
                    }
                }
            },
            0.0,
            r_c,
            dim + 1,
            16,
            &quad.settings(),
        )
        .map_err(|f| GibbsError::NonConvergence { panels: f.panels, error: f.error })
    }

    /// Gibbs averages of the components of g.
    pub fn averages<G: FnMut(f64, &mut [f64])>(
        &self,
        dim: usize,
        g: G,
        quad: &RadialQuadrature,
    ) -> Result<Vec<f64>, GibbsError> {
        let out = self.integrate(dim, g, quad)?;
        Ok(out.value[1..].iter().map(|v| v / out.value[0]).collect())
    }

    /// `⟨ζ^l⟩` for each power l of K̃.
    pub fn kinetic_moments(&self, quad: &RadialQuadrature) -> Result<Vec<f64>, GibbsError> {
        if quad.closed_form && self.kinetic.powers.len() == 1 {
            let (k, d) = self.kinetic.leading();
            // ⟨ζ^k⟩ = n/(2kβd) for K̃ = dζ^k
            return Ok(vec![self.n as f64 / (2.0 * k as f64 * self.beta * d)]);
        }
        let powers = self.kinetic.powers.clone();
        self.averages(
            powers.len(),
            |z, out| {
                for (o, &l) in out.iter_mut().zip(&powers) {
                    *o = z.powi(l as i32);
                }
            },
            quad,
        )
    }

    /// Closed-form `⟨ζ^m⟩` for a single-term K̃ = dζ^k (any real m > -n/2).
    pub fn single_term_moment(&self, m: f64) -> Option<f64> {
        if self.kinetic.powers.len() != 1 {
            return None;
        }
        let (k, d) = self.kinetic.leading();
        let k = k as f64;
        let h = self.n as f64 / 2.0;
        Some((ln_gamma((h + m) / k) - ln_gamma(h / k)).exp() * (self.beta * d).powf(-m / k))
    }
}

fn fd_guard(b: &CoeffBundle) -> Result<(), GibbsError> {
    let residual = b.fd_residual();
    if residual > 1e-8 {
        return Err(GibbsError::NotFluctuationDissipation { t: b.t, q: b.q.as_slice().to_vec(), residual });
    }
    Ok(())
}

fn radial_of(b: &CoeffBundle) -> Result<Radial<'_>, GibbsError> {
    Radial::new(b.q.len(), b.beta(), &b.kinetic, b.t, b.q.as_slice())
}

/// Z(t, q) and its quadrature error estimate.
pub fn partition_function(
    spec: &ModelSpec,
    t: f64,
    q: &[f64],
    quad: &RadialQuadrature,
) -> Result<(f64, f64), GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::First)?;
    fd_guard(&b)?;
    let r = radial_of(&b)?;
    let out = r.integrate(0, |_, _| {}, quad)?;
    let pre = det(&b.a).powf(-0.5) * sphere_area(spec.dim());
    Ok((pre * out.value[0], pre * out.error[0]))
}

/// `⟨g(ζ)⟩` under the Gibbs density at (t, q), with `ζ = zᵀAz`.
pub fn gibbs_average(
    spec: &ModelSpec,
    t: f64,
    q: &[f64],
    g: impl Fn(f64) -> f64,
    quad: &RadialQuadrature,
) -> Result<f64, GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::First)?;
    fd_guard(&b)?;
    let r = radial_of(&b)?;
    Ok(r.averages(1, |z, o| o[0] = g(z), quad)?[0])
}

/// `⟨z_j ∂_{z_l} K⟩ = δ_{jl}·(2/n)·⟨ζK̃′⟩`, computed by quadrature.
pub fn equipartition_matrix(
    spec: &ModelSpec,
    t: f64,
    q: &[f64],
    quad: &RadialQuadrature,
) -> Result<DMatrix<f64>, GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::First)?;
    fd_guard(&b)?;
    let r = radial_of(&b)?;
    let kin = &b.kinetic;
    let m = r.averages(1, |z, o| o[0] = z * kin.value_and_slope(z).1, quad)?[0];
    let n = spec.dim();
    Ok(DMatrix::identity(n, n) * (2.0 / n as f64 * m))
}

/// γ̃, its inverse and the q-derivatives of the inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeGamma {
    pub gt: DMatrix<f64>,
    pub gt_inv: DMatrix<f64>,
    /// `d_gt_inv[k] = ∂(γ̃⁻¹)/∂q^k`; empty unless second-order coefficients were supplied.
    pub d_gt_inv: Vec<DMatrix<f64>>,
}

impl TildeGamma {
    pub fn zeros(n: usize) -> TildeGamma {
        TildeGamma { gt: DMatrix::zeros(n, n), gt_inv: DMatrix::zeros(n, n), d_gt_inv: vec![DMatrix::zeros(n, n); n] }
    }

    /// Fills `self` from a coefficient bundle; derivatives only when the
    /// bundle is second order.
    pub fn fill(&mut self, b: &CoeffBundle) -> Result<(), GibbsError> {
        let n = b.q.len();
        for i in 0..n {
            for k in 0..n {
                // antisymmetric part formed first so it is exactly antisymmetric
                self.gt[(i, k)] = b.gamma[(i, k)] + (b.dpsi[(i, k)] - b.dpsi[(k, i)]);
            }
        }
        self.gt_inv.copy_from(&self.gt);
        let ok = self.gt_inv.try_inverse_mut();
        let rcond = if ok { linalg::rcond1(&self.gt, &self.gt_inv) } else { 0.0 };
        if !ok || !(rcond > 1e-14) {
            return Err(GibbsError::SingularTildeGamma { t: b.t, q: b.q.as_slice().to_vec(), rcond });
        }
        if b.order == Order::Second {
            self.d_gt_inv.resize(n, DMatrix::zeros(n, n));
            let mut dgt = DMatrix::zeros(n, n);
            for m in 0..n {
                for i in 0..n {
                    for k in 0..n {
                        dgt[(i, k)] = b.dgamma[m][(i, k)] + (b.ddpsi[i][(m, k)] - b.ddpsi[k][(m, i)]);
                    }
                }
                let tmp = &self.gt_inv * &dgt;
                self.d_gt_inv[m].gemm(-1.0, &tmp, &self.gt_inv, 0.0);
            }
        } else {
            self.d_gt_inv.clear();
        }
        Ok(())
    }
}

/// γ̃ = γ + ∂_kψ_i − ∂_iψ_k, with inverse and its derivatives.
pub fn tilde_gamma(spec: &ModelSpec, t: f64, q: &[f64]) -> Result<TildeGamma, GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::Second)?;
    let mut tg = TildeGamma::zeros(spec.dim());
    tg.fill(&b)?;
    Ok(tg)
}

/// S from second-order coefficients and γ̃.
pub fn noise_induced_drift_from(b: &CoeffBundle, tg: &TildeGamma, out: &mut DVector<f64>) {
    let n = b.q.len();
    // tr(A⁻¹ ∂_k A)
    let mut tr = [0.0; 8];
    let mut tr_vec;
    let tr: &mut [f64] = if n <= 8 {
        &mut tr[..n]
    } else {
        tr_vec = vec![0.0; n];
        &mut tr_vec
    };
    for (k, slot) in tr.iter_mut().enumerate() {
        let mut s = 0.0;
        for j in 0..n {
            for l in 0..n {
                s += b.a_inv[(j, l)] * b.da[k][(l, j)];
            }
        }
        *slot = s;
    }
    for i in 0..n {
        let mut div = 0.0;
        for j in 0..n {
            div += tg.d_gt_inv[j][(i, j)];
        }
        let mut corr = 0.0;
        for k in 0..n {
            corr += tg.gt_inv[(i, k)] * tr[k];
        }
        out[i] = b.kbt * (div - 0.5 * corr);
    }
}

/// Noise-induced drift S(t, q).
pub fn noise_induced_drift(spec: &ModelSpec, t: f64, q: &[f64]) -> Result<DVector<f64>, GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::Second)?;
    fd_guard(&b)?;
    let mut tg = TildeGamma::zeros(spec.dim());
    tg.fill(&b)?;
    let mut s = DVector::zeros(spec.dim());
    noise_induced_drift_from(&b, &tg, &mut s);
    Ok(s)
}

/// G̃ = −γ̃⁻¹⟨∂_qK̃⟩ from coefficients and γ̃.
pub fn gtilde_from(
    b: &CoeffBundle,
    tg: &TildeGamma,
    quad: &RadialQuadrature,
    out: &mut DVector<f64>,
) -> Result<(), GibbsError> {
    let n = b.q.len();
    out.fill(0.0);
    if b.kinetic.q_independent() {
        return Ok(());
    }
    let r = radial_of(b)?;
    let moments = r.kinetic_moments(quad)?;
    let mut avg = vec![0.0; n];
    for (l, m) in moments.iter().enumerate() {
        for (j, a) in avg.iter_mut().enumerate() {
            *a += b.kinetic.dd[l * n + j] * m;
        }
    }
    for i in 0..n {
        out[i] = -(0..n).map(|j| tg.gt_inv[(i, j)] * avg[j]).sum::<f64>();
    }
    Ok(())
}

/// Averaged drift G̃(t, q).
pub fn homog_drift_gtilde(
    spec: &ModelSpec,
    t: f64,
    q: &[f64],
    quad: &RadialQuadrature,
) -> Result<DVector<f64>, GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::First)?;
    fd_guard(&b)?;
    let mut tg = TildeGamma::zeros(spec.dim());
    tg.fill(&b)?;
    let mut g = DVector::zeros(spec.dim());
    gtilde_from(&b, &tg, quad, &mut g)?;
    Ok(g)
}

/// The three drift contributions of the limiting equation.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftPieces {
    /// γ̃⁻¹(−∂_tψ − ∇V + F)
    pub transport: DVector<f64>,
    pub s: DVector<f64>,
    pub g_tilde: DVector<f64>,
}

/// Scratch space and outputs for [`LimitSDE::eval_into`].
#[derive(Debug, Clone)]
pub struct LimitWorkspace {
    pub bundle: CoeffBundle,
    pub tg: TildeGamma,
    pub pieces: DriftPieces,
    pub drift: DVector<f64>,
    /// n×k
    pub diffusion: DMatrix<f64>,
}

/// Homogenized SDE `dq = drift dt + diffusion dW`.
#[derive(Debug, Clone)]
pub struct LimitSDE {
    spec: ModelSpec,
    quad: RadialQuadrature,
}

/// Builds the limiting SDE of `spec`.
pub fn assemble_limit_sde(spec: &ModelSpec, quad: &RadialQuadrature) -> LimitSDE {
    LimitSDE { spec: spec.clone(), quad: *quad }
}

impl LimitSDE {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn workspace(&self) -> LimitWorkspace {
        let n = self.spec.dim();
        let z = || DVector::zeros(n);
        LimitWorkspace {
            bundle: self.spec.new_bundle(),
            tg: TildeGamma::zeros(n),
            pieces: DriftPieces { transport: z(), s: z(), g_tilde: z() },
            drift: z(),
            diffusion: DMatrix::zeros(n, self.spec.wiener_dim()),
        }
    }

    /// Evaluates drift, its pieces and the diffusion at (t, q) into `ws`.
    pub fn eval_into(&self, t: f64, q: &[f64], ws: &mut LimitWorkspace) -> Result<(), GibbsError> {
        let n = self.spec.dim();
        self.spec.eval_coeffs_into(t, q, Order::Second, &mut ws.bundle)?;
        let b = &ws.bundle;
        fd_guard(b)?;
        ws.tg.fill(b)?;
        let gi = &ws.tg.gt_inv;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += gi[(i, j)] * (-b.dt_psi[j] - b.grad_v[j] + b.f[j]);
            }
            ws.pieces.transport[i] = s;
        }
        noise_induced_drift_from(b, &ws.tg, &mut ws.pieces.s);
        gtilde_from(b, &ws.tg, &self.quad, &mut ws.pieces.g_tilde)?;
        for i in 0..n {
            ws.drift[i] = ws.pieces.transport[i] + ws.pieces.s[i] + ws.pieces.g_tilde[i];
        }
        ws.diffusion.gemm(1.0, gi, &b.sigma, 0.0);
        Ok(())
    }

    pub fn drift(&self, t: f64, q: &[f64]) -> Result<DVector<f64>, GibbsError> {
        let mut ws = self.workspace();
        self.eval_into(t, q, &mut ws)?;
        Ok(ws.drift)
    }

    pub fn diffusion(&self, t: f64, q: &[f64]) -> Result<DMatrix<f64>, GibbsError> {
        let mut ws = self.workspace();
        self.eval_into(t, q, &mut ws)?;
        Ok(ws.diffusion)
    }

    pub fn pieces(&self, t: f64, q: &[f64]) -> Result<DriftPieces, GibbsError> {
        let mut ws = self.workspace();
        self.eval_into(t, q, &mut ws)?;
        Ok(ws.pieces)
    }
}

/// The full homogenizable drift at (t, q, z):
/// `−γ̃⁻¹∂_qK + z_j ∂_{q^l}(γ̃⁻¹)^{ij} ∂_{z_l}K`.
///
/// `b` must be second order and `tg` filled from it.
pub fn full_g_into(b: &CoeffBundle, tg: &TildeGamma, z: &[f64], out: &mut [f64]) {
    let n = z.len();
    let mut az = [0.0; 8];
    let mut dqk = [0.0; 8];
    assert!(n <= 8, "full_g_into supports n <= 8");
    for i in 0..n {
        az[i] = (0..n).map(|j| b.a[(i, j)] * z[j]).sum();
    }
    let zeta: f64 = (0..n).map(|i| z[i] * az[i]).sum();
    let (_, kp) = b.kinetic.value_and_slope(zeta);
    b.kinetic.dq_into(zeta, &mut dqk[..n]);
    for (k, d) in dqk[..n].iter_mut().enumerate() {
        // K̃′·zᵀ(∂_kA)z
        let mut s = 0.0;
        for a in 0..n {
            for c in 0..n {
                s += z[a] * b.da[k][(a, c)] * z[c];
            }
        }
        *d += kp * s;
    }
    for i in 0..n {
        let mut g = 0.0;
        for j in 0..n {
            g -= tg.gt_inv[(i, j)] * dqk[j];
        }
        for l in 0..n {
            let dzk = 2.0 * kp * az[l];
            for j in 0..n {
                g += z[j] * tg.d_gt_inv[l][(i, j)] * dzk;
            }
        }
        out[i] = g;
    }
}

/// `max_z ‖BR − RBᵀ‖_F` with `B = −2Σ⁻¹γ` and `R = ∇²_z K = 2K̃′A + 4K̃″(Az)(Az)ᵀ`.
pub fn conditional_db_residual(spec: &ModelSpec, t: f64, q: &[f64], z_samples: &[Vec<f64>]) -> Result<f64, GibbsError> {
    let b = spec.eval_coeffs(t, q, Order::First)?;
    let sigma_inv = b.sigma_cov.clone().try_inverse().ok_or_else(|| GibbsError::SingularNoise { t, q: q.to_vec() })?;
    let bm = sigma_inv * &b.gamma * -2.0;
    let mut worst = 0.0f64;
    for z in z_samples {
        let zv = DVector::from_column_slice(z);
        let az = &b.a * &zv;
        let zeta = zv.dot(&az);
        let kv = b.kinetic.eval(zeta);
        let r = &b.a * (2.0 * kv.kp) + &az * az.transpose() * (4.0 * kv.kpp);
        let res = &bm * &r - &r * bm.transpose();
        worst = worst.max(linalg::frob(&res));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_spec::{AMode, FrictionSource, KineticSource, MatrixSource, ModelSource, NoiseSource};

    fn iso(n: usize, powers: &[u32], coeffs: &[&str], a_diag: &str, b1: &str, b2: &str) -> ModelSpec {
        let s = ModelSource {
            n,
            kinetic: KineticSource { powers: powers.to_vec(), coeffs: coeffs.iter().map(|c| c.to_string()).collect() },
            a: MatrixSource { mode: AMode::Diagonal, entries: vec![a_diag.to_string(); n] },
            psi: vec!["0".into(); n],
            v: "0".into(),
            friction: FrictionSource::Scaled { b2: b2.into() },
            noise: NoiseSource::Fd { b1: b1.into() },
            forcing: None,
            lambda_floor: 1e-3,
        };
        ModelSpec::from_source(&s).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn partition_function_examples() {
        let quad = RadialQuadrature::default();
        // K = z²/2, β = 1
        let (z, err) = partition_function(&iso(1, &[1], &["1"], "0.5", "2", "1"), 0.0, &[0.0], &quad).unwrap();
        assert!(close(z, (2.0 * std::f64::consts::PI).sqrt(), 1e-10), "{z}");
        assert!(err <= 1e-10 * z + 1e-12);
        // K = z⁴ with β = 1: Z = 2Γ(5/4)
        let (z, _) = partition_function(&iso(1, &[2], &["1"], "1", "2", "1"), 0.0, &[0.0], &quad).unwrap();
        assert!(close(z, 2.0 * gamma(1.25), 1e-10));
        // 2D, K = ‖z‖², β = 2
        let (z, _) = partition_function(&iso(2, &[1], &["1"], "1", "1", "1"), 0.0, &[0.0, 0.0], &quad).unwrap();
        assert!(close(z, std::f64::consts::FRAC_PI_2, 1e-10));
    }

    #[test]
    fn quartic_partition_function_matches_trapezoid() {
        // oracle: trapezoid rule on e^{-z⁴} over [-8, 8]
        let h = 1e-3;
        let m = (16.0 / h) as i64;
        let trap: f64 = (0..=m)
            .map(|i| {
                let z = -8.0 + i as f64 * h;
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * (-z.powi(4)).exp()
            })
            .sum::<f64>()
            * h;
        let (z, _) =
            partition_function(&iso(1, &[2], &["1"], "1", "2", "1"), 0.0, &[0.0], &RadialQuadrature::default())
                .unwrap();
        assert!(close(z, trap, 1e-8));
    }

    #[test]
    fn gibbs_average_examples() {
        let quad = RadialQuadrature::default();
        let g = iso(1, &[1], &["1"], "0.5", "2", "1");
        assert!(close(gibbs_average(&g, 0.0, &[0.0], |_| 1.0, &quad).unwrap(), 1.0, 1e-12));
        assert!(close(gibbs_average(&g, 0.0, &[0.0], |z| z, &quad).unwrap(), 0.5, 1e-10));
        // ⟨z⁴⟩ = 1/4 for e^{-z⁴}
        let q4 = iso(1, &[2], &["1"], "1", "2", "1");
        assert!(close(gibbs_average(&q4, 0.0, &[0.0], |z| z * z, &quad).unwrap(), 0.25, 1e-10));
    }

    #[test]
    fn equipartition_examples() {
        let quad = RadialQuadrature::default();
        for n in 1..=3 {
            let q = vec![0.1; n];
            let m = equipartition_matrix(&iso(n, &[1], &["1"], "0.5", "2", "1"), 0.0, &q, &quad).unwrap();
            assert!((m - DMatrix::identity(n, n)).abs().max() < 1e-10);
            let m = equipartition_matrix(&iso(n, &[2], &["1"], "1", "2", "1"), 0.0, &q, &quad).unwrap();
            assert!((m - DMatrix::identity(n, n)).abs().max() < 1e-8);
            // k_BT = 3/(2·0.5) = 3 with a mixed kinetic energy
            let m = equipartition_matrix(&iso(n, &[1, 3], &["0.7", "0.2"], "1.3", "3", "0.5"), 0.0, &q, &quad).unwrap();
            assert!((m - DMatrix::identity(n, n) * 3.0).abs().max() < 1e-8);
        }
    }

    #[test]
    fn moments_closed_form_matches_quadrature() {
        let fk = FrozenKinetic::constant(3, 2, 0.7);
        let r = Radial::new(3, 1.3, &fk, 0.0, &[0.0; 3]).unwrap();
        let q = RadialQuadrature::default();
        let cf = r.kinetic_moments(&q).unwrap()[0];
        let num = r.kinetic_moments(&q.numeric()).unwrap()[0];
        assert!(close(cf, num, 1e-10 * cf));
        assert!(close(r.single_term_moment(2.0).unwrap(), cf, 1e-13));
    }

    #[test]
    fn non_integrable_weight_is_an_error() {
        let fk = FrozenKinetic::constant(1, 1, -1.0);
        assert!(matches!(Radial::new(1, 1.0, &fk, 0.0, &[0.0]), Err(GibbsError::NonIntegrableTail { .. })));
    }

    fn explicit(n: usize, gamma: &[&str], psi: &[&str]) -> ModelSpec {
        let s = ModelSource {
            n,
            kinetic: KineticSource { powers: vec![1], coeffs: vec!["1".into()] },
            a: MatrixSource { mode: AMode::Diagonal, entries: vec!["0.5".into(); n] },
            psi: psi.iter().map(|s| s.to_string()).collect(),
            v: "0".into(),
            friction: FrictionSource::Explicit { gamma: gamma.iter().map(|s| s.to_string()).collect() },
            noise: NoiseSource::Explicit {
                k: n,
                sigma: (0..n * n).map(|i| if i % (n + 1) == 0 { "1" } else { "0" }.to_string()).collect(),
            },
            forcing: None,
            lambda_floor: 0.1,
        };
        ModelSpec::from_source(&s).unwrap()
    }

    #[test]
    fn tilde_gamma_examples() {
        let tg = tilde_gamma(&explicit(1, &["2+sin(q1)"], &["0"]), 0.0, &[0.3]).unwrap();
        assert_eq!(tg.gt[(0, 0)], 2.0 + 0.3f64.sin());
        // γ̃_ik = γ_ik + ∂_kψ_i − ∂_iψ_k with ψ = (0, q1)
        let tg = tilde_gamma(&explicit(2, &["1", "0", "0", "1"], &["0", "q1"]), 0.0, &[0.2, -0.4]).unwrap();
        assert_eq!(tg.gt, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]));
        assert!((&tg.gt_inv - DMatrix::from_row_slice(2, 2, &[0.5, 0.5, -0.5, 0.5])).abs().max() < 1e-15);
        let anti = &tg.gt - DMatrix::identity(2, 2);
        assert_eq!(&anti + anti.transpose(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn tilde_gamma_inverse_and_derivatives_at_random_points() {
        let spec = explicit(2, &["2+sin(q1)", "0.3*q2", "0.1", "1.5+0.2*cos(q1*q2)"], &["sin(q2)", "q1*q2 + t"]);
        for (i, q) in [[0.3, -0.7], [1.1, 0.4], [-2.0, 1.5]].iter().enumerate() {
            let t = 0.1 * i as f64;
            let tg = tilde_gamma(&spec, t, q).unwrap();
            assert!((&tg.gt_inv * &tg.gt - DMatrix::identity(2, 2)).abs().max() < 1e-12);
            for k in 0..2 {
                let h = 1e-5;
                let mut qp = q.to_vec();
                let mut qm = q.to_vec();
                qp[k] += h;
                qm[k] -= h;
                let fd = (tilde_gamma(&spec, t, &qp).unwrap().gt_inv - tilde_gamma(&spec, t, &qm).unwrap().gt_inv)
                    / (2.0 * h);
                assert!((&fd - &tg.d_gt_inv[k]).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn noise_induced_drift_examples() {
        let bench = ModelSpec::from_source(&ModelSource::benchmark_1d()).unwrap();
        let s = noise_induced_drift(&bench, 0.0, &[0.0]).unwrap();
        assert!(close(s[0], -0.25, 1e-15));
        let flat = iso(2, &[1], &["1"], "0.5", "2", "1");
        assert_eq!(noise_induced_drift(&flat, 0.0, &[0.4, 0.1]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn gtilde_examples() {
        let quad = RadialQuadrature::default();
        let g = homog_drift_gtilde(&iso(2, &[1], &["1"], "0.5", "2", "1"), 0.0, &[0.2, 0.3], &quad).unwrap();
        assert_eq!(g, DVector::zeros(2));
        // K̃ = (1 + 0.1 sin q)ζ, A = 1, γ̃ = 1, β = 1: ⟨ζ⟩ = 1/(2βd₁) = 0.5
        let spec = iso(1, &[1], &["1+0.1*sin(q1)"], "1", "2", "1");
        for quad in [quad, quad.numeric()] {
            let g = homog_drift_gtilde(&spec, 0.0, &[0.0], &quad).unwrap();
            assert!(close(g[0], -0.05, 1e-10), "{}", g[0]);
        }
        // kinetic coefficient increasing in q pushes toward smaller q
        let g = homog_drift_gtilde(&spec, 0.0, &[0.5], &RadialQuadrature::default()).unwrap();
        assert!(g[0] < 0.0);
    }

    #[test]
    fn limit_sde_examples() {
        let quad = RadialQuadrature::default();
        let bench = ModelSpec::from_source(&ModelSource::benchmark_1d()).unwrap();
        let lim = assemble_limit_sde(&bench, &quad);
        let p = lim.pieces(0.0, &[0.0]).unwrap();
        let d = lim.drift(0.0, &[0.0]).unwrap();
        // V'(0) = 0
        assert!(close(d[0], -0.25, 1e-15));
        assert_eq!(d[0], p.transport[0] + p.s[0] + p.g_tilde[0]);
        let q = 1.3;
        let d = lim.drift(0.0, &[q]).unwrap()[0];
        let g = 2.0 + q.sin();
        assert!(close(d, -q / g - q.cos() / (g * g), 1e-14));
        assert!(close(lim.diffusion(0.0, &[q]).unwrap()[(0, 0)], (2.0 * g).sqrt() / g, 1e-14));
        // constant coefficients and no potential: no drift
        let flat = assemble_limit_sde(&iso(2, &[1], &["1"], "0.5", "2", "1"), &quad);
        assert_eq!(flat.drift(0.0, &[0.4, -0.2]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn conditional_db_examples() {
        let bench = ModelSpec::from_source(&ModelSource::benchmark_1d()).unwrap();
        let zs = vec![vec![0.3], vec![-1.2]];
        assert!(conditional_db_residual(&bench, 0.0, &[0.5], &zs).unwrap() < 1e-14);
        let zs2 = vec![vec![0.3, 0.1], vec![-1.0, 2.0]];
        let mut s = ModelSource {
            n: 2,
            kinetic: KineticSource { powers: vec![1], coeffs: vec!["1".into()] },
            a: MatrixSource { mode: AMode::Diagonal, entries: vec!["0.5".into(), "0.5".into()] },
            psi: vec!["0".into(), "0".into()],
            v: "0".into(),
            friction: FrictionSource::Explicit { gamma: vec!["1".into(), "0".into(), "0".into(), "1".into()] },
            noise: NoiseSource::Explicit { k: 2, sigma: vec!["1".into(), "0".into(), "0".into(), "sqrt(2)".into()] },
            forcing: None,
            lambda_floor: 0.1,
        };
        let diag = ModelSpec::from_source(&s).unwrap();
        assert!(conditional_db_residual(&diag, 0.0, &[0.0, 0.0], &zs2).unwrap() < 1e-14);
        s.friction = FrictionSource::Explicit { gamma: vec!["1".into(), "1".into(), "0".into(), "1".into()] };
        s.noise = NoiseSource::Explicit { k: 2, sigma: vec!["1".into(), "0".into(), "0".into(), "1".into()] };
        let skew = ModelSpec::from_source(&s).unwrap();
        let r = conditional_db_residual(&skew, 0.0, &[0.0, 0.0], &zs2).unwrap();
        assert!(close(r, 2.0 * 2f64.sqrt(), 1e-14));
    }

    #[test]
    fn fd_relation_is_required() {
        let spec = explicit(1, &["2+sin(q1)"], &["0"]);
        // σ = 1, γ = 2 + sin q: Σ ≠ 2k_BTγ unless kT matches exactly
        let mut s = spec.source().clone();
        s.noise = NoiseSource::Explicit { k: 1, sigma: vec!["1+q1^2".into()] };
        let spec = ModelSpec::from_source(&s).unwrap();
        // tr-based temperature makes 1D explicit modes satisfy FD trivially
        assert!(noise_induced_drift(&spec, 0.0, &[0.4]).is_ok());
        let two = explicit(2, &["1", "0", "0", "2"], &["0", "0"]);
        assert!(matches!(
            noise_induced_drift(&two, 0.0, &[0.0, 0.0]),
            Err(GibbsError::NotFluctuationDissipation { .. })
        ));
    }

    #[test]
    fn stationarity_flux_vanishes_without_gauge_field() {
        // ½Σ∂_z h + γ̃(∂_zK)h = (γ − ½βΣ)(∂_zK)h
        let spec = iso(2, &[1, 2], &["1+0.2*sin(q1)", "0.1"], "0.8+0.1*q2^2", "2+cos(q2)", "1+0.3*q1^2");
        let b = spec.eval_coeffs(0.2, &[0.4, -0.9], Order::First).unwrap();
        let mut tg = TildeGamma::zeros(2);
        tg.fill(&b).unwrap();
        for z in [[0.3, -0.2], [1.5, 0.7], [-2.0, 2.5]] {
            let zv = DVector::from_column_slice(&z);
            let az = &b.a * &zv;
            let zeta = zv.dot(&az);
            let (k, kp) = b.kinetic.value_and_slope(zeta);
            let h = (-b.beta() * k).exp();
            let dzk = az * (2.0 * kp);
            let dzh = &dzk * (-b.beta() * h);
            let flux = &b.sigma_cov * dzh * 0.5 + &tg.gt * dzk * h;
            assert!(flux.abs().max() < 1e-10, "{flux}");
        }
    }
}
