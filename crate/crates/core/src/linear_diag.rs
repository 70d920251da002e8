//! Constant-coefficient linear theory (`dy = −γy dt + σ dW`) and the
//! one-dimensional closed-form limit, used as reference values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::{EvalError, Expr};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearError {
    #[error("gamma has an eigenvalue with real part {min_re} <= 0")]
    Unstable { min_re: f64 },
    #[error("matrix shapes do not match")]
    Shape,
    #[error("Sigma is not symmetric positive semidefinite")]
    BadSigma,
    #[error("vectorized Lyapunov system is singular")]
    SingularLyapunov,
    #[error("M is singular")]
    SingularM,
    #[error("M is not symmetric positive definite")]
    NotSpd,
    #[error("expression must have dimension 1, got {0}")]
    NotOneDimensional(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// `dy = −γy dt + σ dW` with `Σ = σσᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    gamma: DMatrix<f64>,
    sigma_cov: DMatrix<f64>,
}

impl LinearModel {
    /// Checks that every eigenvalue of γ has positive real part and that Σ
    /// is symmetric PSD.
    pub fn new(gamma: DMatrix<f64>, sigma_cov: DMatrix<f64>) -> Result<LinearModel, LinearError> {
        let n = gamma.nrows();
        if gamma.ncols() != n || sigma_cov.shape() != (n, n) || n == 0 {
            return Err(LinearError::Shape);
        }
        let min_re = gamma.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if !(min_re > 0.0) {
            return Err(LinearError::Unstable { min_re });
        }
        let scale = linalg::frob(&sigma_cov).max(f64::MIN_POSITIVE);
        if linalg::frob(&(&sigma_cov - sigma_cov.transpose())) > 1e-12 * scale
            || linalg::sym_eigenvalues(&sigma_cov)[0] < -1e-12 * scale
        {
            return Err(LinearError::BadSigma);
        }
        Ok(LinearModel { gamma, sigma_cov })
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn sigma_cov(&self) -> &DMatrix<f64> {
        &self.sigma_cov
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lyapunov {
    pub m: DMatrix<f64>,
    /// `‖γM + Mγᵀ − Σ‖_F`
    pub residual: f64,
}

/// Solves `γM + Mγᵀ = Σ` as `(I⊗γ + γ⊗I) vec M = vec Σ`.
pub fn solve_lyapunov(model: &LinearModel) -> Result<Lyapunov, LinearError> {
    let n = model.dim();
    let g = &model.gamma;
    let mut k = DMatrix::zeros(n * n, n * n);
    // column-major vec: index of M[(i, j)] is i + n·j
    for j in 0..n {
        for i in 0..n {
            let row = i + n * j;
            for l in 0..n {
                // (γM)_ij = Σ_l γ_il M_lj
                k[(row, l + n * j)] += g[(i, l)];
                // (Mγᵀ)_ij = Σ_l M_il γ_jl
                k[(row, i + n * l)] += g[(j, l)];
            }
        }
    }
    let rhs = DVector::from_column_slice(model.sigma_cov.as_slice());
    let x = k.lu().solve(&rhs).ok_or(LinearError::SingularLyapunov)?;
    let m = DMatrix::from_column_slice(n, n, x.as_slice());
    let residual = linalg::frob(&(g * &m + &m * g.transpose() - &model.sigma_cov));
    Ok(Lyapunov { m, residual })
}

/// `‖Σγᵀ − γΣ‖_F`; zero iff detailed balance holds.
pub fn detailed_balance_residual(model: &LinearModel) -> f64 {
    let s = &model.sigma_cov;
    let g = &model.gamma;
    linalg::frob(&(s * g.transpose() - g * s))
}

/// `N = γ − ½ΣM⁻¹`.
pub fn oscillatory_part(model: &LinearModel, m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinearError> {
    let m_inv = m.clone().try_inverse().ok_or(LinearError::SingularM)?;
    Ok(&model.gamma - &model.sigma_cov * m_inv * 0.5)
}

/// Centered Gaussian density with covariance M.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    m_inv: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn eval(&self, y: &[f64]) -> f64 {
        let y = DVector::from_column_slice(y);
        (self.log_norm - 0.5 * y.dot(&(&self.m_inv * &y))).exp()
    }
}

pub fn gaussian_stationary_density(m: &DMatrix<f64>) -> Result<GaussianDensity, LinearError> {
    let n = m.nrows();
    if m.ncols() != n || linalg::frob(&(m - m.transpose())) > 1e-12 * linalg::frob(m) {
        return Err(LinearError::NotSpd);
    }
    let chol = m.clone().cholesky().ok_or(LinearError::NotSpd)?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let m_inv = chol.inverse();
    let log_norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
    Ok(GaussianDensity { m_inv, log_norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference1d {
    pub drift: f64,
    pub diffusion: f64,
}

/// Limit of the 1D equation with `H = V(q) + p²/2`:
/// drift `−V′/γ − ½(γ′/γ³)σ²`, diffusion `σ/γ`, at t = 0.
pub fn multiscale_1d_reference(gamma: &Expr, sigma: &Expr, v: &Expr, q: f64) -> Result<Reference1d, LinearError> {
    for e in [gamma, sigma, v] {
        if e.dim() != 1 {
            return Err(LinearError::NotOneDimensional(e.dim()));
        }
    }
    let mut dg = [0.0];
    let mut dv = [0.0];
    let (g, _) = gamma.eval_gradient(0.0, &[q], &mut dg)?;
    let (_, _) = v.eval_gradient(0.0, &[q], &mut dv)?;
    let s = sigma.eval(0.0, &[q])?;
    Ok(Reference1d { drift: -dv[0] / g - 0.5 * dg[0] / g.powi(3) * s * s, diffusion: s / g })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn lyapunov_examples() {
        let l = solve_lyapunov(&LinearModel::new(m(2, &[1., 0., 0., 2.]), m(2, &[2., 0., 0., 4.])).unwrap()).unwrap();
        assert!((l.m - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!(l.residual < 1e-15);
        let l = solve_lyapunov(&LinearModel::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap()).unwrap();
        assert!((l.m - DMatrix::identity(3, 3) * 0.5).abs().max() < 1e-15);
    }

    #[test]
    fn jordan_block_lyapunov_by_hand() {
        // γ = [[1,1],[0,1]], Σ = I: M = [[3/4, -1/4], [-1/4, 1/2]]
        let l = solve_lyapunov(&LinearModel::new(m(2, &[1., 1., 0., 1.]), DMatrix::identity(2, 2)).unwrap()).unwrap();
        assert!((l.m - m(2, &[0.75, -0.25, -0.25, 0.5])).abs().max() < 1e-14);
    }

    #[test]
    fn db_examples() {
        let id = DMatrix::identity(2, 2);
        assert_eq!(detailed_balance_residual(&LinearModel::new(id.clone(), id.clone()).unwrap()), 0.0);
        assert_eq!(
            detailed_balance_residual(&LinearModel::new(m(2, &[1., 0., 0., 2.]), m(2, &[2., 0., 0., 4.])).unwrap()),
            0.0
        );
        let r = detailed_balance_residual(&LinearModel::new(m(2, &[1., 1., 0., 1.]), id).unwrap());
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_part_examples() {
        let db = LinearModel::new(m(2, &[1., 0., 0., 2.]), m(2, &[2., 0., 0., 4.])).unwrap();
        let mm = solve_lyapunov(&db).unwrap().m;
        assert!(oscillatory_part(&db, &mm).unwrap().abs().max() < 1e-15);
        let nd = LinearModel::new(m(2, &[1., 1., 0., 1.]), DMatrix::identity(2, 2)).unwrap();
        let mm = solve_lyapunov(&nd).unwrap().m;
        assert!(linalg::frob(&oscillatory_part(&nd, &mm).unwrap()) > 0.1);
    }

    #[test]
    fn rejects_unstable_and_bad_sigma() {
        assert!(matches!(LinearModel::new(m(1, &[-1.0]), m(1, &[1.0])), Err(LinearError::Unstable { .. })));
        // rotation generator: eigenvalues ±i
        assert!(matches!(
            LinearModel::new(m(2, &[0., 1., -1., 0.]), DMatrix::identity(2, 2)),
            Err(LinearError::Unstable { .. })
        ));
        assert!(matches!(
            LinearModel::new(DMatrix::identity(2, 2), m(2, &[1., 2., 0., 1.])),
            Err(LinearError::BadSigma)
        ));
    }

    #[test]
    fn density_examples() {
        let h = gaussian_stationary_density(&DMatrix::identity(1, 1)).unwrap();
        assert!((h.eval(&[0.0]) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let mm = m(2, &[1.0, 0.3, 0.3, 0.5]);
        let h = gaussian_stationary_density(&mm).unwrap();
        assert!(h.eval(&[0.0, 0.0]) > h.eval(&[0.01, -0.02]));
        // tensor-grid midpoint rule on [-8, 8]²
        let k = 800;
        let dx = 16.0 / k as f64;
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                s += h.eval(&[-8.0 + (i as f64 + 0.5) * dx, -8.0 + (j as f64 + 0.5) * dx]);
            }
        }
        assert!((s * dx * dx - 1.0).abs() < 1e-6);
        assert!(gaussian_stationary_density(&m(2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn reference_1d_examples() {
        let e = |s: &str| Expr::parse(s, 1).unwrap();
        let r = multiscale_1d_reference(&e("2+sin(q1)"), &e("sqrt(2*(2+sin(q1)))"), &e("0"), 0.0).unwrap();
        assert!((r.drift + 0.25).abs() < 1e-15);
        assert!((r.diffusion - 1.0).abs() < 1e-15);
        let r = multiscale_1d_reference(&e("3"), &e("1.5"), &e("q1^2"), 2.0).unwrap();
        assert!((r.drift + 4.0 / 3.0).abs() < 1e-15);
        assert!((r.diffusion - 0.5).abs() < 1e-15);
        let r = multiscale_1d_reference(&e("1"), &e("sqrt(2)"), &e("0.5*q1^2"), 1.0).unwrap();
        assert!((r.drift + 1.0).abs() < 1e-15);
        assert!((r.diffusion - 2f64.sqrt()).abs() < 1e-15);
    }
}
