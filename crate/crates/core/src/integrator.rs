//! Time stepping for the full (q, p) system and for the limiting equation,
//! driven by one shared Wiener stream.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::gibbs::{GibbsError, LimitSDE, LimitWorkspace};
use crate::model_spec::{CoeffBundle, ModelError, ModelSpec, Order};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error("state diverged or became non-finite at t={t} (eps={eps}, dt={dt})")]
    NonFinite { t: f64, eps: f64, dt: f64 },
    #[error("{0}")]
    Config(String),
    #[error("path {path}: {source}")]
    Path { path: u64, source: Box<IntegratorError> },
}

/// States beyond this magnitude count as diverged.
pub const DIVERGENCE: f64 = 1e100;

/// Gaussian increments as a pure function of (seed, path, step, component).
///
/// Path `j` reads ChaCha8 stream `j`; the increment for step `s`, component
/// `c` is built from 64-bit word `s·k + c` by the normal inverse CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WienerStream {
    pub seed: u64,
    pub k: usize,
    pub path: u64,
}

impl WienerStream {
    pub fn new(seed: u64, k: usize) -> WienerStream {
        WienerStream { seed, k, path: 0 }
    }

    pub fn for_path(&self, path: u64) -> WienerStream {
        WienerStream { path, ..*self }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.path);
        r
    }

    /// Sequential reader starting at `step`.
    pub fn cursor_at(&self, step: u64) -> WienerCursor {
        let mut rng = self.rng();
        rng.set_word_pos(2 * step as u128 * self.k as u128);
        WienerCursor { rng, k: self.k, normal: Normal::standard() }
    }

    pub fn cursor(&self) -> WienerCursor {
        self.cursor_at(0)
    }

    /// The increment of `step` over an interval of length `dt`.
    pub fn increment(&self, step: u64, dt: f64, out: &mut [f64]) {
        self.cursor_at(step).next_into(dt, out);
    }
}

pub struct WienerCursor {
    rng: ChaCha8Rng,
    k: usize,
    normal: Normal,
}

impl WienerCursor {
    /// Standard normal from the next word, via a uniform in (0, 1).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let u = ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        self.normal.inverse_cdf(u)
    }

    /// Next k increments, each N(0, dt).
    #[inline]
    pub fn next_into(&mut self, dt: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.k);
        let s = dt.sqrt();
        for o in out.iter_mut() {
            *o = s * self.next_normal();
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// θ = ½ in the stiff linear friction; needs K̃ linear in ζ.
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl FullState {
    /// `p₀ = ψ(0, q₀) + √ε z₀`.
    pub fn initial(spec: &ModelSpec, t0: f64, q0: &[f64], z0: &[f64], eps: f64) -> Result<FullState, IntegratorError> {
        let b = spec.eval_coeffs(t0, q0, Order::First)?;
        let p = (0..spec.dim()).map(|i| b.psi[i] + eps.sqrt() * z0[i]).collect();
        Ok(FullState { t: t0, q: q0.to_vec(), p })
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && x.abs() < DIVERGENCE)
}

/// Stepper for the full system with reusable scratch space.
#[derive(Debug, Clone)]
pub struct FullStepper<'a> {
    spec: &'a ModelSpec,
    scheme: Scheme,
    order: Order,
    bundle: CoeffBundle,
    z: Vec<f64>,
    az: Vec<f64>,
    dzk: Vec<f64>,
    dqk: Vec<f64>,
    rhs: DVector<f64>,
    lhs: DMatrix<f64>,
    m: DMatrix<f64>,
    prepared: bool,
}

impl<'a> FullStepper<'a> {
    pub fn new(spec: &'a ModelSpec, scheme: Scheme) -> Result<FullStepper<'a>, IntegratorError> {
        if scheme == Scheme::SemiImplicit && !spec.kinetic_is_quadratic() {
            return Err(IntegratorError::Config("semi-implicit scheme needs a kinetic energy linear in zeta".into()));
        }
        let n = spec.dim();
        Ok(FullStepper {
            spec,
            scheme,
            order: Order::First,
            bundle: spec.new_bundle(),
            z: vec![0.0; n],
            az: vec![0.0; n],
            dzk: vec![0.0; n],
            dqk: vec![0.0; n],
            rhs: DVector::zeros(n),
            lhs: DMatrix::zeros(n, n),
            m: DMatrix::zeros(n, n),
            prepared: false,
        })
    }

    /// Evaluate coefficients to second order in `prepare` (for observers
    /// that need derivatives of γ̃⁻¹).
    pub fn with_order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    /// Coefficients at the point of the last `prepare`.
    pub fn bundle(&self) -> &CoeffBundle {
        &self.bundle
    }

    /// Evaluates the coefficients at the state's (t, q).
    pub fn prepare(&mut self, state: &FullState) -> Result<(), IntegratorError> {
        self.spec.eval_coeffs_into(state.t, &state.q, self.order, &mut self.bundle)?;
        self.prepared = true;
        Ok(())
    }

    /// `z = (p − ψ)/√ε` at the prepared point.
    pub fn fast_variable(&self, state: &FullState, eps: f64, out: &mut [f64]) {
        let s = 1.0 / eps.sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (state.p[i] - self.bundle.psi[i]) * s;
        }
    }

    /// One step from the prepared point.
    pub fn advance(&mut self, state: &mut FullState, dt: f64, dw: &[f64], eps: f64) -> Result<(), IntegratorError> {
        assert!(self.prepared, "advance without prepare");
        self.prepared = false;
        let n = state.q.len();
        let b = &self.bundle;
        let rs = 1.0 / eps.sqrt();
        for i in 0..n {
            self.z[i] = (state.p[i] - b.psi[i]) * rs;
        }
        for i in 0..n {
            self.az[i] = (0..n).map(|j| b.a[(i, j)] * self.z[j]).sum();
        }
        let zeta: f64 = (0..n).map(|i| self.z[i] * self.az[i]).sum();
        let (_, kp) = b.kinetic.value_and_slope(zeta);
        b.kinetic.dq_into(zeta, &mut self.dqk);
        for k in 0..n {
            let mut s = 0.0;
            for a in 0..n {
                for c in 0..n {
                    s += self.z[a] * b.da[k][(a, c)] * self.z[c];
                }
            }
            self.dqk[k] += kp * s;
        }
        // M_il = γ_il − ∂_iψ_l
        for i in 0..n {
            for l in 0..n {
                self.m[(i, l)] = b.gamma[(i, l)] - b.dpsi[(l, i)];
            }
        }
        // σ dW
        let mut sdw = [0.0; 16];
        let mut sdw_vec;
        let sdw: &mut [f64] = if n <= 16 {
            &mut sdw[..n]
        } else {
            sdw_vec = vec![0.0; n];
            &mut sdw_vec
        };
        for (i, s) in sdw.iter_mut().enumerate() {
            *s = (0..dw.len()).map(|c| b.sigma[(i, c)] * dw[c]).sum();
        }
        match self.scheme {
            Scheme::EulerMaruyama => {
                for i in 0..n {
                    self.dzk[i] = 2.0 * kp * self.az[i];
                }
                for i in 0..n {
                    state.q[i] += dt * rs * self.dzk[i];
                }
                for i in 0..n {
                    let fr: f64 = (0..n).map(|l| self.m[(i, l)] * self.dzk[l]).sum();
                    state.p[i] += dt * (-rs * fr - self.dqk[i] - b.grad_v[i] + b.f[i]) + sdw[i];
                }
            }
            Scheme::SemiImplicit => {
                // ∇_zK = (2d/√ε) A (p − ψ); stiff part −L(p − ψ) with L = (2d/ε) M A
                let d = kp;
                let theta = 0.5;
                let l = &self.m * &b.a * (2.0 * d / eps);
                self.lhs.fill_with_identity();
                self.lhs += &l * (theta * dt);
                let p_old = DVector::from_column_slice(&state.p);
                let mut base = p_old.clone() * (1.0 - theta);
                for i in 0..n {
                    base[i] -= b.psi[i];
                }
                let lb = &l * &base;
                for i in 0..n {
                    self.rhs[i] = state.p[i] - dt * lb[i] + dt * (-self.dqk[i] - b.grad_v[i] + b.f[i]) + sdw[i];
                }
                let lu = self.lhs.clone().lu();
                let p_new = lu.solve(&self.rhs).ok_or(IntegratorError::NonFinite { t: state.t, eps, dt })?;
                for i in 0..n {
                    self.z[i] = (theta * p_new[i] + (1.0 - theta) * p_old[i] - b.psi[i]) * rs;
                }
                for i in 0..n {
                    let az: f64 = (0..n).map(|j| b.a[(i, j)] * self.z[j]).sum();
                    state.q[i] += dt * rs * 2.0 * d * az;
                }
                state.p.copy_from_slice(p_new.as_slice());
            }
        }
        state.t += dt;
        if !finite(&state.q) || !finite(&state.p) {
            return Err(IntegratorError::NonFinite { t: state.t, eps, dt });
        }
        Ok(())
    }

    pub fn step(&mut self, state: &mut FullState, dt: f64, dw: &[f64], eps: f64) -> Result<(), IntegratorError> {
        self.prepare(state)?;
        self.advance(state, dt, dw, eps)
    }
}

/// One Euler–Maruyama step of the full system.
pub fn step_full(
    spec: &ModelSpec,
    state: &FullState,
    dt: f64,
    dw: &[f64],
    eps: f64,
) -> Result<FullState, IntegratorError> {
    let mut s = state.clone();
    FullStepper::new(spec, Scheme::EulerMaruyama)?.step(&mut s, dt, dw, eps)?;
    Ok(s)
}

/// Euler–Maruyama step of the limiting equation, in place.
pub fn step_limit_into(
    limit: &LimitSDE,
    ws: &mut LimitWorkspace,
    t: f64,
    q: &mut [f64],
    dt: f64,
    dw: &[f64],
) -> Result<(), IntegratorError> {
    limit.eval_into(t, q, ws)?;
    for (i, qi) in q.iter_mut().enumerate() {
        let noise: f64 = (0..dw.len()).map(|c| ws.diffusion[(i, c)] * dw[c]).sum();
        *qi += ws.drift[i] * dt + noise;
    }
    if !finite(q) {
        return Err(IntegratorError::NonFinite { t: t + dt, eps: 0.0, dt });
    }
    Ok(())
}

/// `(t + dt, q′)` for one step of the limiting equation.
pub fn step_limit(
    limit: &LimitSDE,
    t: f64,
    q: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<(f64, Vec<f64>), IntegratorError> {
    let mut ws = limit.workspace();
    let mut q = q.to_vec();
    step_limit_into(limit, &mut ws, t, &mut q, dt, dw)?;
    Ok((t + dt, q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledConfig {
    pub eps: f64,
    pub t_end: f64,
    pub dt_fine: f64,
    /// Limit steps span this many fine steps.
    pub coarsen: usize,
    pub scheme: Scheme,
    pub q0: Vec<f64>,
    pub z0: Vec<f64>,
    pub with_limit: bool,
    /// Keep every k-th fine state in the returned trajectories.
    pub record_every: Option<usize>,
}

impl CoupledConfig {
    /// Number of fine steps; `dt_fine` is shrunk so they tile `[0, T]`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt_fine).ceil().max(1.0) as usize
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps() as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    /// max over coarse times of ‖q^ε − q‖
    pub sup_q_err: f64,
    /// max over fine times of ‖p − ψ(t, q)‖
    pub sup_p_dev: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathPair {
    pub times: Vec<f64>,
    pub q_full: Vec<Vec<f64>>,
    pub p_full: Vec<Vec<f64>>,
    /// Empty without a limit path.
    pub q_limit: Vec<Vec<f64>>,
    pub diag: PathDiagnostics,
}

/// What an observer sees after each fine step (and at t = 0).
pub struct Observation<'b> {
    pub step: usize,
    pub t: f64,
    pub q: &'b [f64],
    pub p: &'b [f64],
    pub z: &'b [f64],
    /// Coefficients at (t, q).
    pub bundle: &'b CoeffBundle,
    /// Limit state, at the last coarse time not after t.
    pub q_limit: Option<&'b [f64]>,
    /// `q_limit` was updated at exactly this step.
    pub coarse: bool,
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs one coupled path and calls `observe` at every fine time.
pub fn simulate_coupled_observed<O: FnMut(&Observation)>(
    spec: &ModelSpec,
    limit: Option<&LimitSDE>,
    cfg: &CoupledConfig,
    stream: &WienerStream,
    order: Order,
    mut observe: O,
) -> Result<PathPair, IntegratorError> {
    let n = spec.dim();
    let k = spec.wiener_dim();
    if !(cfg.eps > 0.0 && cfg.t_end > 0.0 && cfg.dt_fine > 0.0) || cfg.coarsen == 0 {
        return Err(IntegratorError::Config("eps, T and dt must be positive and coarsen at least 1".into()));
    }
    if cfg.q0.len() != n || cfg.z0.len() != n || stream.k != k {
        return Err(IntegratorError::Config("q0, z0 or stream dimension mismatch".into()));
    }
    if cfg.with_limit && limit.is_none() {
        return Err(IntegratorError::Config("limit path requested without a limit SDE".into()));
    }
    let steps = cfg.steps();
    let dt = cfg.dt();
    let eps = cfg.eps;
    let mut stepper = FullStepper::new(spec, cfg.scheme)?.with_order(order);
    let mut state = FullState::initial(spec, 0.0, &cfg.q0, &cfg.z0, eps)?;
    let mut ql = cfg.q0.clone();
    let mut lws = limit.filter(|_| cfg.with_limit).map(|l| (l, l.workspace()));
    let mut cursor = stream.cursor();
    let mut dw = vec![0.0; k];
    let mut dw_sum = vec![0.0; k];
    let mut z = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut pair = PathPair::default();
    let mut ql_t = 0.0;

    for step in 0..=steps {
        stepper.prepare(&state)?;
        stepper.fast_variable(&state, eps, &mut z);
        let coarse = step % cfg.coarsen == 0 || step == steps;
        let dev = norm(&z) * eps.sqrt();
        pair.diag.sup_p_dev = pair.diag.sup_p_dev.max(dev);
        if lws.is_some() && coarse {
            for i in 0..n {
                diff[i] = state.q[i] - ql[i];
            }
            pair.diag.sup_q_err = pair.diag.sup_q_err.max(norm(&diff));
        }
        observe(&Observation {
            step,
            t: state.t,
            q: &state.q,
            p: &state.p,
            z: &z,
            bundle: stepper.bundle(),
            q_limit: lws.as_ref().map(|_| ql.as_slice()),
            coarse,
        });
        if cfg.record_every.is_some_and(|r| step % r == 0 || step == steps) {
            pair.times.push(state.t);
            pair.q_full.push(state.q.clone());
            pair.p_full.push(state.p.clone());
            if lws.is_some() {
                pair.q_limit.push(ql.clone());
            }
        }
        if step == steps {
            break;
        }
        cursor.next_into(dt, &mut dw);
        stepper.advance(&mut state, dt, &dw, eps)?;
        // pin the clock to the grid
        state.t = (step + 1) as f64 * dt;
        if let Some((l, ws)) = lws.as_mut() {
            for c in 0..k {
                dw_sum[c] += dw[c];
            }
            let next = step + 1;
            if next % cfg.coarsen == 0 || next == steps {
                let h = next as f64 * dt - ql_t;
                step_limit_into(l, ws, ql_t, &mut ql, h, &dw_sum)?;
                ql_t = next as f64 * dt;
                dw_sum.fill(0.0);
            }
        }
    }
    pair.diag.steps = steps;
    Ok(pair)
}

/// Runs one coupled path; trajectories are kept only with `record_every`.
pub fn simulate_coupled(
    spec: &ModelSpec,
    limit: Option<&LimitSDE>,
    cfg: &CoupledConfig,
    stream: &WienerStream,
) -> Result<PathPair, IntegratorError> {
    simulate_coupled_observed(spec, limit, cfg, stream, Order::First, |_| {})
        .map_err(|e| IntegratorError::Path { path: stream.path, source: Box::new(e) })
}
