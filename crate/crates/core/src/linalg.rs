//! Small dense helpers shared by several modules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Symmetric part `(m + mᵀ)/2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 1 {
        return vec![m[(0, 0)]];
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(sym(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `m^{power}` for symmetric positive definite `m`, through its
/// eigendecomposition. `None` when an eigenvalue is not positive.
pub fn spd_power(m: &DMatrix<f64>, power: f64) -> Option<DMatrix<f64>> {
    if m.nrows() == 1 {
        let x = m[(0, 0)];
        return (x > 0.0).then(|| DMatrix::from_element(1, 1, x.powf(power)));
    }
    let eig = SymmetricEigen::new(sym(m));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let d = eig.eigenvalues.map(|l| l.powf(power));
    let v = &eig.eigenvectors;
    Some(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// Frobenius norm.
pub fn frob(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reciprocal condition estimate in the 1-norm from an explicit inverse.
pub fn rcond1(m: &DMatrix<f64>, inv: &DMatrix<f64>) -> f64 {
    let norm1 =
        |a: &DMatrix<f64>| (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    1.0 / (norm1(m) * norm1(inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_square_root_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = spd_power(&a, -0.5).unwrap();
        let back = (&r * &r) * &a;
        assert!((back - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!(spd_power(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.5).is_none());
    }
}
