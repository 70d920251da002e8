//! Sampled-grid checks of the standing assumptions on a model.

use serde::{Deserialize, Serialize};

use super::{Friction, ModelError, ModelSpec, Order};
use crate::linalg;

/// Tensor grid over `[0, t_max] × box`, plus ζ samples for growth checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationGrid {
    pub t_max: f64,
    pub t_points: usize,
    /// Per-coordinate lower corner of the box (length n, or length 1 to broadcast).
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    /// Points per coordinate.
    pub q_points: usize,
    pub zeta_max: f64,
    pub zeta_points: usize,
    /// Lower bound demanded of the first and last kinetic coefficients.
    pub coeff_floor: f64,
}

impl ValidationGrid {
    /// `[0, t_max] × [-half_width, half_width]^n`.
    pub fn cube(half_width: f64, q_points: usize, t_max: f64) -> ValidationGrid {
        ValidationGrid {
            t_max,
            t_points: 3,
            q_lo: vec![-half_width],
            q_hi: vec![half_width],
            q_points,
            zeta_max: 100.0,
            zeta_points: 40,
            coeff_floor: 1e-8,
        }
    }

    fn points(&self, n: usize) -> Result<Vec<(f64, Vec<f64>)>, ModelError> {
        let bad = |m: &str| ModelError::Source { pointer: "/grid".into(), message: m.into() };
        let pick = |v: &Vec<f64>, i: usize| {
            if v.len() == 1 {
                Ok(v[0])
            } else {
                v.get(i).copied().ok_or(bad("box corner length"))
            }
        };
        if self.q_points == 0 || self.t_points == 0 {
            return Err(bad("grid needs at least one point per axis"));
        }
        let total = (self.q_points as f64).powi(n as i32) * self.t_points as f64;
        if total > 2.0e6 {
            return Err(bad("grid has more than 2e6 points"));
        }
        let axis = |lo: f64, hi: f64, m: usize| -> Vec<f64> {
            if m == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
            }
        };
        let mut axes = Vec::with_capacity(n);
        for i in 0..n {
            axes.push(axis(pick(&self.q_lo, i)?, pick(&self.q_hi, i)?, self.q_points));
        }
        let ts = axis(0.0, self.t_max, self.t_points);
        let ts = if self.t_points == 1 { vec![0.0] } else { ts };
        let mut out = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let q: Vec<f64> = (0..n).map(|i| axes[i][idx[i]]).collect();
            for &t in &ts {
                out.push((t, q.clone()));
            }
            let mut d = 0;
            loop {
                if d == n {
                    return Ok(out);
                }
                idx[d] += 1;
                if idx[d] < self.q_points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    fn zetas(&self) -> Vec<f64> {
        let m = self.zeta_points.max(2);
        let top = self.zeta_max.max(2.0);
        (0..m).map(|k| top.powf(k as f64 / (m - 1) as f64)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub q: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    /// Signed distance from failing at the worst point (negative = violated).
    pub margin: f64,
    pub witness: Option<Witness>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub grid: ValidationGrid,
    pub checks: Vec<Check>,
    /// Observations that do not fail validation, e.g. unbounded-looking ∇V.
    pub flags: Vec<String>,
    /// Growth fit K̃ ≥ c·ζ^η (c, η), worst case over the grid.
    pub growth: Option<(f64, f64)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Keeps the minimum margin and where it occurred.
struct Worst {
    margin: f64,
    at: Option<Witness>,
}

impl Worst {
    fn new() -> Worst {
        Worst { margin: f64::INFINITY, at: None }
    }

    fn see(&mut self, margin: f64, t: f64, q: &[f64], zeta: Option<f64>) {
        if margin < self.margin || self.at.is_none() {
            self.margin = margin;
            self.at = Some(Witness { t, q: q.to_vec(), zeta });
        }
    }

    fn into_check(self, name: &str, tol: f64, detail: String) -> Check {
        let status = if self.at.is_none() {
            CheckStatus::NotChecked
        } else if self.margin >= -tol {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Check { name: name.into(), status, margin: self.margin, witness: self.at, detail }
    }
}

/// Checks the model's assumptions on every point of `grid`.
///
/// Expression evaluation errors are returned with the grid point attached.
/// Loss of positive definiteness of A or non-positive b₁, b₂ is reported as
/// a failed check rather than an error.
pub fn validate(spec: &ModelSpec, grid: &ValidationGrid) -> Result<ValidationReport, ModelError> {
    let n = spec.dim();
    let points = grid.points(n)?;
    let zetas = grid.zetas();
    let rel = 1e-12;

    let mut friction = Worst::new();
    let mut a_sym = Worst::new();
    let mut a_pd = Worst::new();
    let (mut a_min, mut a_max) = (f64::INFINITY, 0.0f64);
    let mut b_pos = Worst::new();
    let mut k_nonneg = Worst::new();
    let mut k_floor = Worst::new();
    let mut growth = Worst::new();
    let mut growth_fit: Option<(f64, f64)> = None;
    let mut fd = Worst::new();
    let mut max_deriv = [0.0f64; 4];
    let mut grad_v_inner = 0.0f64;
    let mut grad_v_outer = 0.0f64;
    let lo: Vec<f64> = (0..n).map(|i| *grid.q_lo.get(i).unwrap_or(&grid.q_lo[0])).collect();
    let hi: Vec<f64> = (0..n).map(|i| *grid.q_hi.get(i).unwrap_or(&grid.q_hi[0])).collect();

    let mut b = spec.new_bundle();
    for (t, q) in &points {
        let (t, q) = (*t, q.as_slice());

        // raw symmetry of A, read from both triangles
        for i in 0..n {
            for j in i + 1..n {
                let up = spec.a[i * n + j].eval(t, q);
                let lo_ = spec.a[j * n + i].eval(t, q);
                let (up, lo_) = match (up, lo_) {
                    (Ok(u), Ok(l)) => (u, l),
                    (Err(e), _) | (_, Err(e)) => {
                        return Err(ModelError::Eval { what: format!("A[{i}][{j}]"), t, q: q.to_vec(), source: e })
                    }
                };
                a_sym.see(-(up - lo_).abs() / up.abs().max(lo_.abs()).max(1.0), t, q, None);
            }
        }
        if n == 1 {
            a_sym.see(0.0, t, q, None);
        }

        match spec.eval_coeffs_into(t, q, Order::Second, &mut b) {
            Ok(()) => {}
            Err(ModelError::NotPositiveDefinite { .. }) => {
                a_pd.see(-1.0, t, q, None);
                continue;
            }
            Err(ModelError::NotPositive { value, .. }) => {
                b_pos.see(value.min(-f64::MIN_POSITIVE), t, q, None);
                continue;
            }
            Err(e) => return Err(e),
        }

        let ev = linalg::sym_eigenvalues(&b.a);
        a_pd.see(ev[0], t, q, None);
        a_min = a_min.min(ev[0]);
        a_max = a_max.max(ev[n - 1]);
        b_pos.see(b.b1.min(b.b2), t, q, None);

        let g_ev = linalg::sym_eigenvalues(&b.gamma);
        friction.see(g_ev[0] - spec.lambda_floor, t, q, None);

        let d = &b.kinetic.d;
        k_nonneg.see(d.iter().copied().fold(f64::INFINITY, f64::min), t, q, None);
        k_floor.see(d[0].min(d[d.len() - 1]) - grid.coeff_floor, t, q, None);

        // growth fit on ζ ∈ [1, ζ_max]: log K̃ ≈ log c + η log ζ
        let logs: Vec<(f64, f64)> = zetas.iter().map(|&z| (z.ln(), b.kinetic.value(z))).collect();
        if logs.iter().all(|(_, k)| *k > 0.0) {
            let m = logs.len() as f64;
            let sx: f64 = logs.iter().map(|p| p.0).sum();
            let sy: f64 = logs.iter().map(|p| p.1.ln()).sum();
            let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = logs.iter().map(|p| p.0 * p.1.ln()).sum();
            let eta = (m * sxy - sx * sy) / (m * sxx - sx * sx);
            let c = logs.iter().map(|(lz, k)| k / (eta * lz).exp()).fold(f64::INFINITY, f64::min);
            let margin = c.min(eta);
            growth.see(margin, t, q, None);
            growth_fit = Some(match growth_fit {
                Some((c0, e0)) => (c0.min(c), e0.min(eta)),
                None => (c, eta),
            });
        } else {
            let z = logs.iter().find(|(_, k)| *k <= 0.0).map(|(lz, _)| lz.exp());
            growth.see(-1.0, t, q, z);
        }

        fd.see(-b.fd_residual(), t, q, None);

        // derivative magnitudes: ∂ψ, ∂²ψ, ∂γ, ∂A
        max_deriv[0] = max_deriv[0].max(b.dpsi.abs().max());
        for h in &b.ddpsi {
            max_deriv[1] = max_deriv[1].max(h.abs().max());
        }
        for dg in &b.dgamma {
            max_deriv[2] = max_deriv[2].max(dg.abs().max());
        }
        for da in &b.da {
            max_deriv[3] = max_deriv[3].max(da.abs().max());
        }
        let gv = b.grad_v.abs().max();
        let inner = (0..n).all(|i| {
            let (c, w) = (0.5 * (lo[i] + hi[i]), 0.5 * (hi[i] - lo[i]));
            (q[i] - c).abs() <= 0.5 * w + 1e-12
        });
        if inner {
            grad_v_inner = grad_v_inner.max(gv);
        }
        grad_v_outer = grad_v_outer.max(gv);
    }

    let fd_declared = matches!(spec.noise, super::Noise::FluctuationDissipation { .. })
        && matches!(spec.friction, Friction::Scaled { .. });
    let fd_check = {
        let mut c = fd.into_check("fluctuation_dissipation", 1e-10, "relative residual of Σ − 2k_BT·γ".into());
        if !fd_declared && c.status == CheckStatus::Fail {
            c.status = CheckStatus::NotChecked;
            c.detail.push_str(" (not declared by the noise and friction modes)");
        }
        c
    };

    let mut flags = Vec::new();
    if grad_v_outer > 1.5 * grad_v_inner.max(1e-300) && grad_v_outer > 1e-12 {
        flags.push(format!(
            "grad V grows across the box (max {grad_v_inner:.3e} on the inner half, {grad_v_outer:.3e} overall); \
             global boundedness is assumed but only the box is used"
        ));
    }

    let checks = vec![
        friction.into_check(
            "friction_floor",
            rel * spec.lambda_floor,
            format!("min eigenvalue of sym(γ) minus lambda_floor = {}", spec.lambda_floor),
        ),
        a_sym.into_check("A_symmetric", 1e-14, "relative asymmetry of A".into()),
        a_pd.into_check("A_bounds", 0.0, format!("eigenvalues of A within [{a_min:.6e}, {a_max:.6e}]")),
        b_pos.into_check("b_positive", 0.0, "min of b1, b2".into()),
        k_nonneg.into_check("kinetic_nonneg", 0.0, "min kinetic coefficient".into()),
        k_floor.into_check("kinetic_extreme_floor", 0.0, format!("first/last coefficient minus {}", grid.coeff_floor)),
        growth.into_check(
            "kinetic_growth",
            0.0,
            match growth_fit {
                Some((c, eta)) => format!("K̃ ≥ c·ζ^η with c = {c:.6e}, η = {eta:.6e}"),
                None => "no positive growth fit".into(),
            },
        ),
        Check {
            name: "derivative_bounds".into(),
            status: if max_deriv.iter().all(|x| x.is_finite()) { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: max_deriv.iter().copied().fold(0.0, f64::max),
            witness: None,
            detail: format!(
                "max |∂ψ| = {:.3e}, |∂²ψ| = {:.3e}, |∂γ| = {:.3e}, |∂A| = {:.3e}",
                max_deriv[0], max_deriv[1], max_deriv[2], max_deriv[3]
            ),
        },
        fd_check,
    ];
    let growth = growth_fit.filter(|_| checks[6].status == CheckStatus::Pass);
    Ok(ValidationReport { grid: grid.clone(), checks, flags, growth })
}
