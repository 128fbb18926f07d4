use nalgebra::{DMatrix, DVector};

use super::NeuralError;

/// Mean and leading principal directions of a set of row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// `dim x k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Set when fewer than `k` directions carry variance and the basis was
    /// completed with an orthonormal complement.
    pub rank_deficient: bool,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(x - &self.mean))
    }

    pub fn reconstruct(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c + &self.mean
    }
}

/// Top-`k` principal components of the rows of `frames`. Each direction is
/// signed so that its largest-magnitude entry is positive.
pub fn pca_fit(frames: &DMatrix<f64>, k: usize) -> Result<PcaBasis, NeuralError> {
    let (n, dim) = frames.shape();
    if n < k.min(dim) || n == 0 {
        return Err(NeuralError::TooFewFrames { frames: n, k });
    }
    let k = k.min(dim);
    let mean = frames.row_mean().transpose();
    let mut centered = frames.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let tol = 1e-12 * s_max.max(f64::MIN_POSITIVE) * (n.max(dim) as f64);

    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let s = svd.singular_values[i];
        if s <= tol || s == 0.0 {
            break;
        }
        cols.push(v_t.row(i).transpose());
        values.push(s);
    }
    let rank_deficient = cols.len() < k;
    // complete with standard basis vectors orthogonalized against the rest
    let mut e = 0;
    while cols.len() < k {
        let mut c = DVector::zeros(dim);
        c[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for q in &cols {
                let d = q.dot(&c);
                c.axpy(-d, q, 1.0);
            }
        }
        let norm = c.norm();
        if norm > 1e-6 {
            cols.push(c / norm);
            values.push(0.0);
        }
    }
    for c in &mut cols {
        let imax = c.iamax();
        if c[imax] < 0.0 {
            c.neg_mut();
        }
    }
    Ok(PcaBasis {
        mean,
        basis: DMatrix::from_columns(&cols),
        singular_values: values,
        rank_deficient,
    })
}
