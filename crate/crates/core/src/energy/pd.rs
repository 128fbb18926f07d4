use nalgebra::{DMatrix, SymmetricEigen};

/// Default clamp `1e-8 * max(1, |A|_inf)` for positive-definite projection.
pub fn pd_eps(block: &DMatrix<f64>) -> f64 {
    let inf_norm = block
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    1e-8 * inf_norm.max(1.0)
}

/// Symmetrizes `block` and clamps its eigenvalues from below at `eps`.
///
/// Blocks whose spectrum already lies above `eps` are returned symmetrized
/// but otherwise untouched.
pub fn project_pd(block: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let sym = (block + block.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(eps));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    (&out + out.transpose()) * 0.5
}
