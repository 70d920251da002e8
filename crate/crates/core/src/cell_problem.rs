//! Radial corrector χ̃(ζ) solving
//!
//! ```text
//! ζχ̃″ + (n/2 − βζK̃′)χ̃′ = (G − G̃)/(2b₁),   χ̃(0) = 0
//! ```
//!
//! where `G(ζ) = −γ̃⁻¹∂_qK̃(ζ)` and `G̃ = ⟨G⟩`.
//!
//! All inner integrals run in `u = √ζ`, where `ζ^{(n−2)/2}dζ = 2u^{n−1}du`
//! has no endpoint singularity. The scaled prefix integral
//! `H(ζ) = e^{βK̃(ζ)}∫_0^ζ …` is swept forward up to the mode of the Gibbs
//! weight and the scaled suffix `S(ζ) = e^{βK̃(ζ)}∫_ζ^∞ …` backward from the
//! tail cutoff, so `e^{βK̃}` never appears on its own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gibbs::quadrature::{self, QuadSettings};
use crate::gibbs::{GibbsError, Radial, RadialQuadrature, TildeGamma};
use crate::model_spec::{FrozenKinetic, ModelError, ModelSpec, Order};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CellError {
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error("zeta grid: {0}")]
    Grid(String),
    #[error("head and tail forms disagree at zeta={zeta} (relative {relative:e}); G~ is inconsistent with G")]
    Cancellation { zeta: f64, relative: f64 },
    #[error("cell quadrature did not converge on [{a}, {b}] (error estimate {error:e})")]
    NonConvergence { a: f64, b: f64, error: f64 },
}

impl From<ModelError> for CellError {
    fn from(e: ModelError) -> Self {
        CellError::Gibbs(GibbsError::Model(e))
    }
}

/// `G_i(ζ) = Σ_m coeffs[i][m]·ζ^{exps[m]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyG {
    pub exps: Vec<u32>,
    pub coeffs: Vec<Vec<f64>>,
}

impl PolyG {
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn eval_into(&self, zeta: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (m, &e) in self.exps.iter().enumerate() {
            let z = zeta.powi(e as i32);
            for (o, c) in out.iter_mut().zip(&self.coeffs) {
                *o += c[m] * z;
            }
        }
    }

    /// `a·self + b·other` on the union of exponents.
    pub fn combine(&self, a: f64, other: &PolyG, b: f64) -> PolyG {
        let mut exps: Vec<u32> = self.exps.iter().chain(&other.exps).copied().collect();
        exps.sort_unstable();
        exps.dedup();
        let coeffs = (0..self.dim())
            .map(|i| {
                exps.iter()
                    .map(|e| {
                        let pick = |g: &PolyG| g.exps.iter().position(|x| x == e).map_or(0.0, |m| g.coeffs[i][m]);
                        a * pick(self) + b * pick(other)
                    })
                    .collect()
            })
            .collect();
        PolyG { exps, coeffs }
    }
}

/// The radial corrector equation at one frozen (t, q).
#[derive(Debug, Clone, PartialEq)]
pub struct CellProblem {
    pub n: usize,
    pub beta: f64,
    pub b1: f64,
    pub kinetic: FrozenKinetic,
    pub g: PolyG,
}

impl CellProblem {
    /// G from the model: `G_i = −Σ_j (γ̃⁻¹)_{ij} Σ_l ∂_j d_l ζ^l`.
    pub fn from_spec(spec: &ModelSpec, t: f64, q: &[f64]) -> Result<CellProblem, CellError> {
        let b = spec.eval_coeffs(t, q, Order::First)?;
        let mut tg = TildeGamma::zeros(spec.dim());
        tg.fill(&b)?;
        let n = spec.dim();
        let kin = b.kinetic.clone();
        let coeffs = (0..n)
            .map(|i| {
                (0..kin.powers.len())
                    .map(|l| -(0..n).map(|j| tg.gt_inv[(i, j)] * kin.dd[l * n + j]).sum::<f64>())
                    .collect()
            })
            .collect();
        Ok(CellProblem { n, beta: b.beta(), b1: b.b1, g: PolyG { exps: kin.powers.clone(), coeffs }, kinetic: kin })
    }

    fn radial(&self) -> Result<Radial<'_>, CellError> {
        Ok(Radial::new(self.n, self.beta, &self.kinetic, f64::NAN, &[])?)
    }

    /// `⟨G⟩` under the Gibbs weight.
    pub fn g_tilde(&self, quad: &RadialQuadrature) -> Result<Vec<f64>, CellError> {
        let r = self.radial()?;
        let exps = self.g.exps.clone();
        let moments = r.averages(
            exps.len(),
            |z, o| {
                for (x, &e) in o.iter_mut().zip(&exps) {
                    *x = z.powi(e as i32);
                }
            },
            quad,
        )?;
        Ok(self.g.coeffs.iter().map(|c| c.iter().zip(&moments).map(|(a, m)| a * m).sum()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub t: f64,
    pub q: Vec<f64>,
    pub n: usize,
    pub beta: f64,
    pub b1: f64,
    pub g_tilde: Vec<f64>,
    /// Mode of the Gibbs weight, where the sweeps meet.
    pub zeta_switch: f64,
    /// Where the tail sweep starts.
    pub zeta_end: f64,
    /// Largest panel count used by any segment integral.
    pub max_panels: usize,
}

/// χ̃ and χ̃′ on a grid; `chi[i][k]` is component i at `zeta_grid[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub zeta_grid: Vec<f64>,
    pub chi: Vec<Vec<f64>>,
    pub chi_prime: Vec<Vec<f64>>,
    pub meta: CellMeta,
}

/// Below this ζ, χ̃′ comes from the rescaled form `∫_0^1 … dv` directly.
pub const SMALL_ZETA: f64 = 1e-3;

struct Sweep<'a> {
    p: &'a CellProblem,
    gt: Vec<f64>,
    settings: QuadSettings,
    max_panels: usize,
    gbuf: Vec<f64>,
}

impl Sweep<'_> {
    fn bk(&self, zeta: f64) -> f64 {
        self.p.beta * self.p.kinetic.value(zeta)
    }

    /// `∫_{ua}^{ub} 2u^{n−1} e^{e_ref − βK̃(u²)} (G(u²) − G̃) du`, last
    /// component with G − G̃ replaced by 1.
    fn seg(&mut self, ua: f64, ub: f64, e_ref: f64) -> Result<Vec<f64>, CellError> {
        let dim = self.p.g.dim();
        if ub <= ua {
            return Ok(vec![0.0; dim + 1]);
        }
        let n1 = (self.p.n - 1) as i32;
        let p = self.p;
        let gt = &self.gt;
        let gbuf = &mut self.gbuf;
        let out = quadrature::integrate(
            |u, o| {
                let z = u * u;
                let w = 2.0 * u.powi(n1) * (e_ref - p.beta * p.kinetic.value(z)).exp();
                p.g.eval_into(z, gbuf);
                for i in 0..dim {
                    o[i] = w * (gbuf[i] - gt[i]);
                }
                o[dim] = w;
            },
            ua,
            ub,
            dim + 1,
            1,
            &self.settings,
        )
        .map_err(|f| CellError::NonConvergence { a: ua * ua, b: ub * ub, error: f.error })?;
        self.max_panels = self.max_panels.max(out.panels);
        Ok(out.value)
    }

    /// χ̃′ at small ζ: `(1/2b₁)∫_0^1 2v^{n−1} e^{β(K̃(ζ) − K̃(v²ζ))}(G(v²ζ) − G̃) dv`.
    fn chi_prime_small(&mut self, zeta: f64, out: &mut [f64]) -> Result<(), CellError> {
        let dim = self.p.g.dim();
        let n1 = (self.p.n - 1) as i32;
        let e = self.bk(zeta);
        let p = self.p;
        let gt = &self.gt;
        let gbuf = &mut self.gbuf;
        let v = quadrature::integrate(
            |v, o| {
                let z = v * v * zeta;
                let w = 2.0 * v.powi(n1) * (e - p.beta * p.kinetic.value(z)).exp();
                p.g.eval_into(z, gbuf);
                for i in 0..dim {
                    o[i] = w * (gbuf[i] - gt[i]);
                }
            },
            0.0,
            1.0,
            dim,
            1,
            &self.settings,
        )
        .map_err(|f| CellError::NonConvergence { a: 0.0, b: zeta, error: f.error })?;
        for (o, x) in out.iter_mut().zip(&v.value) {
            *o = x / (2.0 * p.b1);
        }
        Ok(())
    }
}

fn mode_of_weight(p: &CellProblem, scale: f64) -> f64 {
    let h = p.n as f64 / 2.0;
    let phi = |z: f64| h * z.ln() - p.beta * p.kinetic.value(z);
    let mut z = scale * 1e-3;
    let (mut best_z, mut best) = (z, phi(z));
    for _ in 0..10_000 {
        z *= 1.02;
        let v = phi(z);
        if v > best {
            best = v;
            best_z = z;
        } else if v < best - 2.0 {
            break;
        }
    }
    best_z
}

/// Solves for χ̃ on `grid` (non-negative, strictly increasing).
pub fn solve(
    p: &CellProblem,
    grid: &[f64],
    quad: &RadialQuadrature,
    t: f64,
    q: &[f64],
) -> Result<CellSolution, CellError> {
    if grid.is_empty() {
        return Err(CellError::Grid("empty".into()));
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|z| !z.is_finite()) {
        return Err(CellError::Grid("must be non-negative, finite and strictly increasing".into()));
    }
    if p.n == 0 || !(p.b1 > 0.0) {
        return Err(CellError::Grid(format!("need n >= 1 and b1 > 0 (b1 = {})", p.b1)));
    }
    let dim = p.g.dim();
    let radial = p.radial()?;
    let gt = p.g_tilde(quad)?;
    let zeta_s = mode_of_weight(p, radial.zeta_cut() * 1e-2);
    let grid_max = *grid.last().unwrap();
    // tail sweep starts where the scaled suffix is negligible
    let zeta_end = {
        let base = grid_max.max(zeta_s);
        let ref_e = p.beta * p.kinetic.value(base);
        let lead = p.n as f64 / 2.0 + 8.0;
        let mut z = base.max(radial.zeta_cut() * 1e-3) * 1.1;
        for _ in 0..4000 {
            if p.beta * p.kinetic.value(z) - ref_e - lead * (z / base).ln() > 46.0 {
                break;
            }
            z *= 1.2;
        }
        z.max(radial.zeta_cut())
    };

    // knots: 0, grid, ζ_s, ζ_end
    let mut knots: Vec<f64> = std::iter::once(0.0).chain(grid.iter().copied()).chain([zeta_s, zeta_end]).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let s_idx = knots.iter().position(|&z| z == zeta_s).unwrap();
    let m = knots.len();

    let mut sw = Sweep { p, gt: gt.clone(), settings: quad.settings(), max_panels: 0, gbuf: vec![0.0; dim] };
    let e: Vec<f64> = knots.iter().map(|&z| sw.bk(z)).collect();

    // forward: H_k = e^{E_k − E_{k−1}} H_{k−1} + seg
    let mut h = vec![vec![0.0; dim + 1]; s_idx + 1];
    for k in 1..=s_idx {
        let seg = sw.seg(knots[k - 1].sqrt(), knots[k].sqrt(), e[k])?;
        let f = (e[k] - e[k - 1]).exp();
        for c in 0..=dim {
            h[k][c] = f * h[k - 1][c] + seg[c];
        }
    }
    // backward: S_k = e^{E_k − E_{k+1}} S_{k+1} + seg
    let mut s = vec![vec![0.0; dim + 1]; m];
    for k in (s_idx..m - 1).rev() {
        let seg = sw.seg(knots[k].sqrt(), knots[k + 1].sqrt(), e[k])?;
        let f = (e[k] - e[k + 1]).exp();
        for c in 0..=dim {
            s[k][c] = f * s[k + 1][c] + seg[c];
        }
    }
    // the two forms must agree at the switch: H + S = e^{E}∫_0^∞ (G − G̃) = 0
    {
        let hs = &h[s_idx];
        let ss = &s[s_idx];
        let weight = hs[dim] + ss[dim];
        let g_scale = gt.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        for c in 0..dim {
            let mismatch = (hs[c] + ss[c]).abs();
            let size = hs[c].abs().max(ss[c].abs());
            if mismatch > 1e-8 * size + 1e-12 * weight * g_scale {
                return Err(CellError::Cancellation { zeta: zeta_s, relative: mismatch / size.max(f64::MIN_POSITIVE) });
            }
        }
    }

    let inv2b1 = 1.0 / (2.0 * p.b1);
    let half_n = p.n as f64 / 2.0;
    // χ̃′ at a knot
    let mut cp_knot = vec![vec![0.0; dim]; m];
    for k in 0..m {
        let z = knots[k];
        if z < SMALL_ZETA {
            sw.chi_prime_small(z, &mut cp_knot[k])?;
        } else if k <= s_idx {
            for c in 0..dim {
                cp_knot[k][c] = inv2b1 * z.powf(-half_n) * h[k][c];
            }
        } else {
            for c in 0..dim {
                cp_knot[k][c] = -inv2b1 * z.powf(-half_n) * s[k][c];
            }
        }
    }

    // χ̃ by integrating χ̃′ over each segment up to the grid maximum
    let last = knots.iter().position(|&z| z == grid_max).unwrap();
    let mut chi_knot = vec![vec![0.0; dim]; last + 1];
    for k in 1..=last {
        let (a, b) = (knots[k - 1], knots[k]);
        let head = k <= s_idx;
        let anchor = if head { k - 1 } else { k };
        let (za, ea) = (knots[anchor], e[anchor]);
        let base: Vec<f64> = if head { h[anchor][..dim].to_vec() } else { s[anchor][..dim].to_vec() };
        let settings = sw.settings;
        let mut err = None;
        let mut cp = vec![0.0; dim];
        let out = quadrature::integrate(
            |x, o| {
                if err.is_some() {
                    o.fill(0.0);
                    return;
                }
                if x < SMALL_ZETA {
                    if let Err(e) = sw.chi_prime_small(x, &mut cp) {
                        err = Some(e);
                    }
                    o.copy_from_slice(&cp);
                    return;
                }
                let ex = sw.bk(x);
                let f = (ex - ea).exp();
                let seg = if head { sw.seg(za.sqrt(), x.sqrt(), ex) } else { sw.seg(x.sqrt(), za.sqrt(), ex) };
                match seg {
                    Ok(seg) => {
                        let sign = if head { 1.0 } else { -1.0 };
                        let pre = sign * inv2b1 * x.powf(-half_n);
                        for c in 0..dim {
                            o[c] = pre * (f * base[c] + seg[c]);
                        }
                    }
                    Err(e) => {
                        err = Some(e);
                        o.fill(0.0);
                    }
                }
            },
            a,
            b,
            dim,
            1,
            &settings,
        )
        .map_err(|f| CellError::NonConvergence { a, b, error: f.error })?;
        if let Some(e) = err {
            return Err(e);
        }
        for c in 0..dim {
            chi_knot[k][c] = chi_knot[k - 1][c] + out.value[c];
        }
    }

    let mut chi = vec![Vec::with_capacity(grid.len()); dim];
    let mut chi_prime = vec![Vec::with_capacity(grid.len()); dim];
    let mut k = 0;
    for &z in grid {
        while knots[k] != z {
            k += 1;
        }
        for c in 0..dim {
            chi[c].push(chi_knot[k][c]);
            chi_prime[c].push(cp_knot[k][c]);
        }
    }
    Ok(CellSolution {
        zeta_grid: grid.to_vec(),
        chi,
        chi_prime,
        meta: CellMeta {
            t,
            q: q.to_vec(),
            n: p.n,
            beta: p.beta,
            b1: p.b1,
            g_tilde: gt,
            zeta_switch: zeta_s,
            zeta_end,
            max_panels: sw.max_panels,
        },
    })
}

/// χ̃ for the model at (t, q).
pub fn solve_chi(
    spec: &ModelSpec,
    t: f64,
    q: &[f64],
    zeta_grid: &[f64],
    quad: &RadialQuadrature,
) -> Result<CellSolution, CellError> {
    let p = CellProblem::from_spec(spec, t, q)?;
    solve(&p, zeta_grid, quad, t, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub at_zeta: f64,
    /// Estimated finite-difference error in the residual.
    pub fd_error: f64,
    /// Points where a 9-point uniform stencil was available.
    pub points: usize,
    /// The FD error is too large to resolve the residual.
    pub inconclusive: bool,
    /// Per grid point (NaN where no stencil).
    pub residual: Vec<f64>,
}

/// ODE residual with χ̃″ from 4th-order central differences of χ̃′.
pub fn residual_of(p: &CellProblem, sol: &CellSolution) -> ResidualReport {
    let z = &sol.zeta_grid;
    let m = z.len();
    let dim = p.g.dim();
    let half_n = p.n as f64 / 2.0;
    let gt = &sol.meta.g_tilde;
    let mut gbuf = vec![0.0; dim];
    let mut residual = vec![f64::NAN; m];
    let (mut worst, mut at, mut fd_err, mut points) = (0.0f64, f64::NAN, 0.0f64, 0);
    for k in 4..m.saturating_sub(4) {
        let h = z[k + 1] - z[k];
        let uniform = (k - 4..k + 4).all(|j| ((z[j + 1] - z[j]) - h).abs() <= 1e-9 * h.max(z[j + 1].abs() * 1e-7));
        if !uniform {
            continue;
        }
        points += 1;
        let (_, kp) = p.kinetic.value_and_slope(z[k]);
        p.g.eval_into(z[k], &mut gbuf);
        let mut r = 0.0f64;
        for c in 0..dim {
            let f = &sol.chi_prime[c];
            let d4 =
                |s: usize| (-f[k + 2 * s] + 8.0 * f[k + s] - 8.0 * f[k - s] + f[k - 2 * s]) / (12.0 * h * s as f64);
            let dd = d4(1);
            let err = (dd - d4(2)).abs() / 15.0;
            let res = z[k] * dd + (half_n - p.beta * z[k] * kp) * f[k] - (gbuf[c] - gt[c]) / (2.0 * p.b1);
            r = r.max(res.abs());
            fd_err = fd_err.max(err * z[k]);
        }
        residual[k] = r;
        if r > worst {
            worst = r;
            at = z[k];
        }
    }
    let inconclusive = points == 0 || (fd_err > 1e-6 && fd_err >= 0.1 * worst);
    ResidualReport { max_residual: worst, at_zeta: at, fd_error: fd_err, points, inconclusive, residual }
}

/// Residual of `sol` against the model's own cell equation at the solution's (t, q).
pub fn residual_check(spec: &ModelSpec, t: f64, q: &[f64], sol: &CellSolution) -> Result<ResidualReport, CellError> {
    let p = CellProblem::from_spec(spec, t, q)?;
    Ok(residual_of(&p, sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub degree: f64,
    pub coefficient: f64,
    /// `max |χ̃|/(c ζ^d) − 1` over the fitted points.
    pub max_excursion: f64,
}

/// Power-law envelope `c·ζ^d` of `max_i |χ̃_i|` over the top decade of the grid.
pub fn growth_probe(sol: &CellSolution) -> GrowthFit {
    let z = &sol.zeta_grid;
    let top = *z.last().unwrap_or(&0.0);
    let pts: Vec<(f64, f64)> = z
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= top / 10.0 && x > 0.0)
        .map(|(k, &x)| (x, sol.chi.iter().map(|c| c[k].abs()).fold(0.0, f64::max)))
        .collect();
    if pts.iter().all(|p| p.1 == 0.0) || pts.len() < 2 {
        return GrowthFit { degree: 0.0, coefficient: 0.0, max_excursion: 0.0 };
    }
    let pts: Vec<(f64, f64)> = pts.into_iter().filter(|p| p.1 > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let degree = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ln_c = my - degree * mx;
    let max_excursion = pts.iter().map(|p| (p.1 - ln_c - degree * p.0).exp() - 1.0).fold(f64::NEG_INFINITY, f64::max);
    GrowthFit { degree, coefficient: ln_c.exp(), max_excursion }
}

/// Uniform grid `lo, lo+h, …, hi`.
pub fn uniform_grid(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let m = ((hi - lo) / h).round() as usize;
    (0..=m).map(|i| lo + i as f64 * h).collect()
}
