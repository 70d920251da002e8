//! ε-ladder Monte Carlo: momentum attraction, strong error of the limiting
//! equation, and the averaged-drift integral test, with log-log rate fits.
//!
//! Paths run in parallel but every estimate is a pairwise sum over paths in
//! index order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gibbs::{self, assemble_limit_sde, GibbsError, LimitSDE, RadialQuadrature, TildeGamma};
use crate::integrator::{simulate_coupled_observed, CoupledConfig, IntegratorError, Scheme, WienerStream};
use crate::model_spec::{ModelSpec, Order};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("eps={eps}: {failed} of {paths} paths failed (first: {first})")]
    TooManyFailures { eps: f64, failed: usize, paths: usize, first: String },
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("{0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `sup_t E‖p − ψ‖^p` (sup over the observation grid of per-time means)
    MomentumSupOfMean,
    /// `E sup_t ‖p − ψ‖^p`
    MomentumMeanOfSup,
    /// `E sup_t ‖q^ε − q‖^p`
    StrongError,
    /// `E sup_t |∫G − ∫(S + G̃)|^p`
    IntegralHomog,
}

impl Metric {
    pub fn tag(self) -> &'static str {
        match self {
            Metric::MomentumSupOfMean => "momentum-sup-of-mean",
            Metric::MomentumMeanOfSup => "momentum-mean-of-sup",
            Metric::StrongError => "strong-error",
            Metric::IntegralHomog => "integral-homog",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// Limit path driven by the full path's increments.
    #[default]
    Common,
    /// Limit path on its own stream (for variance comparisons).
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderConfig {
    pub epsilons: Vec<f64>,
    pub paths: usize,
    /// Moment exponent.
    pub p: f64,
    pub t_end: f64,
    /// Fine step is `dt_factor·ε`.
    pub dt_factor: f64,
    pub coarsen: usize,
    pub scheme: Scheme,
    /// Defaults to the origin.
    pub q0: Option<Vec<f64>>,
    /// Defaults to zero.
    pub z0: Option<Vec<f64>>,
    pub seed: u64,
    /// Time points for the per-time momentum means.
    pub observation_points: usize,
    pub coupling: Coupling,
    pub quadrature: RadialQuadrature,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            epsilons: default_epsilons(),
            paths: 1000,
            p: 2.0,
            t_end: 1.0,
            dt_factor: 0.05,
            coarsen: 1,
            scheme: Scheme::EulerMaruyama,
            q0: None,
            z0: None,
            seed: 0,
            observation_points: 1000,
            coupling: Coupling::Common,
            quadrature: RadialQuadrature::default(),
        }
    }
}

/// `10^{-1}, 10^{-1.5}, …, 10^{-3}`.
pub fn default_epsilons() -> Vec<f64> {
    (0..5).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub eps: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub paths: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// NaN with exactly two points.
    pub slope_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub metric: Metric,
    pub points: Vec<LadderPoint>,
    /// Present with at least three positive estimates.
    pub fit: Option<RateFit>,
    /// Some estimate is zero to rounding, so the fit is meaningless.
    pub floor_limited: bool,
}

impl LadderResult {
    fn from_points(metric: Metric, points: Vec<LadderPoint>) -> LadderResult {
        let floor_limited = points.iter().any(|p| !(p.estimate > 1e-300));
        let fit = if points.len() >= 3 && !floor_limited {
            let data: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.eps, p.estimate, p.stderr)).collect();
            fit_rate(&data).ok()
        } else {
            None
        };
        LadderResult { metric, points, fit, floor_limited }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Weighted least squares of `ln estimate` on `ln ε` with weights
/// `(estimate/stderr)²`; unweighted if any stderr is zero.
pub fn fit_rate(data: &[(f64, f64, f64)]) -> Result<RateFit, LabError> {
    if data.len() < 2 {
        return Err(LabError::Fit("need at least two points".into()));
    }
    if data.iter().any(|d| !(d.0 > 0.0 && d.1 > 0.0) || !d.2.is_finite() || d.2 < 0.0) {
        return Err(LabError::Fit("epsilons and estimates must be positive".into()));
    }
    let weighted = data.iter().all(|d| d.2 > 0.0);
    let pts: Vec<(f64, f64, f64)> =
        data.iter().map(|&(e, y, s)| (e.ln(), y.ln(), if weighted { (y / s).powi(2) } else { 1.0 })).collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !(hi - lo > 1e-12) {
        return Err(LabError::Fit("degenerate design: all epsilons equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if pts.len() < 3 {
        f64::NAN
    } else if weighted {
        // variances known from the per-point standard errors
        (1.0 / sxx).sqrt()
    } else {
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (pts.len() as f64 - 2.0) / sxx).sqrt()
    };
    Ok(RateFit { slope, intercept, slope_stderr })
}

/// Pairwise (cascade) sum in index order.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let m = x.len() / 2;
    pairwise_sum(&x[..m]) + pairwise_sum(&x[m..])
}

/// Mean and standard error of the mean.
pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(x) / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
}

/// Which metrics a run collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub momentum: bool,
    pub strong: bool,
    pub integral: bool,
}

impl MetricSet {
    pub const ALL: MetricSet = MetricSet { momentum: true, strong: true, integral: true };
}

#[derive(Debug, Clone, Default)]
struct PathOut {
    series: Vec<f64>,
    mom_sup: f64,
    q_err: f64,
    int_err: f64,
}

struct Ctx<'a> {
    spec: &'a ModelSpec,
    limit: Option<&'a LimitSDE>,
    quad: RadialQuadrature,
    cfg: CoupledConfig,
    obs_every: usize,
    p: f64,
    metrics: MetricSet,
    stream: WienerStream,
    independent: bool,
}

fn run_path(ctx: &Ctx, path: u64) -> Result<PathOut, IntegratorError> {
    let n = ctx.spec.dim();
    let eps = ctx.cfg.eps;
    let dt = ctx.cfg.dt();
    let mut out = PathOut::default();
    let mut tg = TildeGamma::zeros(n);
    let (mut gf, mut s, mut gt) = (vec![0.0; n], nalgebra::DVector::zeros(n), nalgebra::DVector::zeros(n));
    let mut diff = vec![0.0; n];
    let mut diff_prev = vec![0.0; n];
    let mut int_diff = vec![0.0; n];
    let mut failure: Option<IntegratorError> = None;
    let order = if ctx.metrics.integral { Order::Second } else { Order::First };
    let stream = ctx.stream.for_path(path);
    let mut cfg = ctx.cfg.clone();
    cfg.with_limit = ctx.metrics.strong;
    let pair = if ctx.independent && ctx.metrics.strong {
        // limit on stream path + 2^63, full path on its own
        run_independent(ctx, &cfg, &stream, &mut out)?;
        None
    } else {
        Some(simulate_coupled_observed(ctx.spec, ctx.limit, &cfg, &stream, order, |o| {
            if failure.is_some() {
                return;
            }
            let dev = o.z.iter().map(|x| x * x).sum::<f64>().sqrt() * eps.sqrt();
            let dp = dev.powf(ctx.p);
            if ctx.metrics.momentum {
                out.mom_sup = out.mom_sup.max(dp);
                if o.step % ctx.obs_every == 0 {
                    out.series.push(dp);
                }
            }
            if ctx.metrics.integral {
                let r = tg.fill(o.bundle).map_err(IntegratorError::from).and_then(|_| {
                    gibbs::full_g_into(o.bundle, &tg, o.z, &mut gf);
                    gibbs::noise_induced_drift_from(o.bundle, &tg, &mut s);
                    gibbs::gtilde_from(o.bundle, &tg, &ctx.quad, &mut gt).map_err(IntegratorError::from)
                });
                if let Err(e) = r {
                    failure = Some(e);
                    return;
                }
                for i in 0..n {
                    diff[i] = gf[i] - s[i] - gt[i];
                }
                if o.step > 0 {
                    for i in 0..n {
                        int_diff[i] += 0.5 * dt * (diff[i] + diff_prev[i]);
                    }
                    let m = int_diff.iter().map(|x| x * x).sum::<f64>().sqrt();
                    out.int_err = out.int_err.max(m.powf(ctx.p));
                }
                diff_prev.copy_from_slice(&diff);
            }
        })?)
    };
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(pair) = pair {
        out.q_err = pair.diag.sup_q_err.powf(ctx.p);
    }
    Ok(out)
}

/// Full and limit paths on unrelated streams; only the strong error.
fn run_independent(
    ctx: &Ctx,
    cfg: &CoupledConfig,
    stream: &WienerStream,
    out: &mut PathOut,
) -> Result<(), IntegratorError> {
    let mut full_cfg = cfg.clone();
    full_cfg.with_limit = false;
    full_cfg.record_every = Some(cfg.coarsen);
    let full = simulate_coupled_observed(ctx.spec, None, &full_cfg, stream, Order::First, |_| {})?;
    let mut lim_cfg = cfg.clone();
    lim_cfg.record_every = Some(cfg.coarsen);
    let other = stream.for_path(stream.path | (1 << 63));
    let lim = simulate_coupled_observed(ctx.spec, ctx.limit, &lim_cfg, &other, Order::First, |_| {})?;
    let mut sup = 0.0f64;
    for (a, b) in full.q_full.iter().zip(&lim.q_limit) {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        sup = sup.max(d);
    }
    out.q_err = sup.powf(ctx.p);
    Ok(())
}

/// All requested metrics over the ε-ladder, from one set of paths per ε.
pub fn run_ladder(
    spec: &ModelSpec,
    cfg: &LadderConfig,
    metrics: MetricSet,
    threads: Option<usize>,
) -> Result<Vec<LadderResult>, LabError> {
    let n = spec.dim();
    if cfg.epsilons.is_empty()
        || cfg.epsilons.windows(2).any(|w| !(w[0] > w[1]))
        || cfg.epsilons.iter().any(|e| !(*e > 0.0))
    {
        return Err(LabError::Config("epsilons must be positive and strictly decreasing".into()));
    }
    if cfg.paths == 0 || !(cfg.p > 0.0) || !(cfg.t_end > 0.0) || !(cfg.dt_factor > 0.0) || cfg.observation_points == 0 {
        return Err(LabError::Config("paths, p, T, dt_factor and observation_points must be positive".into()));
    }
    let q0 = cfg.q0.clone().unwrap_or_else(|| vec![0.0; n]);
    let z0 = cfg.z0.clone().unwrap_or_else(|| vec![0.0; n]);
    let limit = if metrics.strong { Some(assemble_limit_sde(spec, &cfg.quadrature)) } else { None };
    if let Some(l) = &limit {
        // surface configuration problems (FD relation, singular γ̃) before spawning paths
        l.drift(0.0, &q0)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Pool(e.to_string()))?;

    let mut by_metric: Vec<(Metric, Vec<LadderPoint>)> = Vec::new();
    let mut push = |m: Metric, pt: LadderPoint| match by_metric.iter_mut().find(|x| x.0 == m) {
        Some(x) => x.1.push(pt),
        None => by_metric.push((m, vec![pt])),
    };
    for (ei, &eps) in cfg.epsilons.iter().enumerate() {
        let cc = CoupledConfig {
            eps,
            t_end: cfg.t_end,
            dt_fine: cfg.dt_factor * eps,
            coarsen: cfg.coarsen,
            scheme: cfg.scheme,
            q0: q0.clone(),
            z0: z0.clone(),
            with_limit: metrics.strong,
            record_every: None,
        };
        let steps = cc.steps();
        let obs_every = (steps / cfg.observation_points).max(1);
        let ctx = Ctx {
            spec,
            limit: limit.as_ref(),
            quad: cfg.quadrature,
            cfg: cc,
            obs_every,
            p: cfg.p,
            metrics,
            // each ε gets its own seed so ladder points are independent
            stream: WienerStream::new(
                cfg.seed.wrapping_add(ei as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                spec.wiener_dim(),
            ),
            independent: cfg.coupling == Coupling::Independent,
        };
        let results: Vec<Result<PathOut, IntegratorError>> =
            pool.install(|| (0..cfg.paths as u64).into_par_iter().map(|j| run_path(&ctx, j)).collect());
        let failed = results.iter().filter(|r| r.is_err()).count();
        if failed * 100 > cfg.paths {
            let first = results.iter().find_map(|r| r.as_ref().err()).unwrap().to_string();
            return Err(LabError::TooManyFailures { eps, failed, paths: cfg.paths, first });
        }
        let ok: Vec<PathOut> = results.into_iter().filter_map(Result::ok).collect();
        let point = |x: &[f64]| {
            let (m, s) = mean_stderr(x);
            LadderPoint { eps, estimate: m, stderr: s, paths: ok.len(), failures: failed }
        };
        if metrics.momentum {
            let sups: Vec<f64> = ok.iter().map(|o| o.mom_sup).collect();
            push(Metric::MomentumMeanOfSup, point(&sups));
            let len = ok.iter().map(|o| o.series.len()).min().unwrap_or(0);
            let mut best: Option<LadderPoint> = None;
            for k in 0..len {
                let col: Vec<f64> = ok.iter().map(|o| o.series[k]).collect();
                let pt = point(&col);
                if best.as_ref().is_none_or(|b| pt.estimate > b.estimate) {
                    best = Some(pt);
                }
            }
            if let Some(b) = best {
                push(Metric::MomentumSupOfMean, b);
            }
        }
        if metrics.strong {
            let v: Vec<f64> = ok.iter().map(|o| o.q_err).collect();
            push(Metric::StrongError, point(&v));
        }
        if metrics.integral {
            let v: Vec<f64> = ok.iter().map(|o| o.int_err).collect();
            push(Metric::IntegralHomog, point(&v));
        }
    }
    Ok(by_metric.into_iter().map(|(m, pts)| LadderResult::from_points(m, pts)).collect())
}

fn pick(results: Vec<LadderResult>, m: Metric) -> LadderResult {
    results.into_iter().find(|r| r.metric == m).expect("metric collected")
}

/// `(sup_t E‖p − ψ‖^p, E sup_t ‖p − ψ‖^p)` ladders.
pub fn momentum_attraction(
    spec: &ModelSpec,
    cfg: &LadderConfig,
    threads: Option<usize>,
) -> Result<(LadderResult, LadderResult), LabError> {
    let r = run_ladder(spec, cfg, MetricSet { momentum: true, strong: false, integral: false }, threads)?;
    let a = pick(r.clone(), Metric::MomentumSupOfMean);
    Ok((a, pick(r, Metric::MomentumMeanOfSup)))
}

/// `E sup_t ‖q^ε − q‖^p` ladder on coupled paths.
pub fn strong_error_ladder(
    spec: &ModelSpec,
    cfg: &LadderConfig,
    threads: Option<usize>,
) -> Result<LadderResult, LabError> {
    let r = run_ladder(spec, cfg, MetricSet { momentum: false, strong: true, integral: false }, threads)?;
    Ok(pick(r, Metric::StrongError))
}

/// `E sup_t |∫G − ∫(S + G̃)|^p` ladder along full paths.
pub fn integral_homog_test(
    spec: &ModelSpec,
    cfg: &LadderConfig,
    threads: Option<usize>,
) -> Result<LadderResult, LabError> {
    let r = run_ladder(spec, cfg, MetricSet { momentum: false, strong: false, integral: true }, threads)?;
    Ok(pick(r, Metric::IntegralHomog))
}
