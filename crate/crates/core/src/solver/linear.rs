//! Assembly of the projected Hessian on free DOFs and the two linear solvers.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::energy::{pd_eps, project_pd, ElementHessian};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LinearSolver {
    SparseCholesky,
    /// Jacobi-preconditioned conjugate gradients.
    Pcg { tol: f64, max_iter_factor: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::SparseCholesky
    }
}

impl LinearSolver {
    pub fn pcg() -> Self {
        LinearSolver::Pcg {
            tol: 1e-10,
            max_iter_factor: 10,
        }
    }
}

/// Maps global DOFs to positions in the reduced (free) system.
#[derive(Clone, Debug)]
pub struct FreeDofs {
    map: Vec<Option<usize>>,
    free: Vec<usize>,
}

impl FreeDofs {
    pub fn new(n_vertices: usize, constrained_vertices: &[usize]) -> Self {
        let mut fixed = vec![false; n_vertices];
        for &v in constrained_vertices {
            fixed[v] = true;
        }
        let mut map = vec![None; 3 * n_vertices];
        let mut free = Vec::new();
        for v in 0..n_vertices {
            if !fixed[v] {
                for k in 0..3 {
                    map[3 * v + k] = Some(free.len());
                    free.push(3 * v + k);
                }
            }
        }
        Self { map, free }
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn global(&self) -> &[usize] {
        &self.free
    }

    pub fn is_free(&self, dof: usize) -> bool {
        self.map[dof].is_some()
    }

    pub fn restrict(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&d| v[d]))
    }
}

/// Assembles the free-DOF block of the Hessian, projecting every element
/// block that is not already positive definite.
pub fn assemble_projected(blocks: &[ElementHessian], dofs: &FreeDofs) -> CscMatrix<f64> {
    let n = dofs.len();
    let mut coo = CooMatrix::new(n, n);
    for b in blocks {
        let projected;
        let block = if b.definite {
            &b.block
        } else {
            projected = project_pd(&b.block, pd_eps(&b.block));
            &projected
        };
        let local: Vec<Option<usize>> = b
            .vertices
            .iter()
            .flat_map(|&v| (0..3).map(move |k| 3 * v + k))
            .map(|d| dofs.map[d])
            .collect();
        for (r, gr) in local.iter().enumerate() {
            let Some(gr) = gr else { continue };
            for (c, gc) in local.iter().enumerate() {
                let Some(gc) = gc else { continue };
                let v = block[(r, c)];
                if v != 0.0 {
                    coo.push(*gr, *gc, v);
                }
            }
        }
    }
    CscMatrix::from(&coo)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearSolveError {
    Factorization(String),
    NotConverged { iterations: usize, residual: f64 },
}

impl std::fmt::Display for LinearSolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinearSolveError::Factorization(s) => write!(f, "Cholesky factorization failed: {s}"),
            LinearSolveError::NotConverged { iterations, residual } => {
                write!(f, "PCG did not converge after {iterations} iterations (residual {residual:e})")
            }
        }
    }
}

pub fn solve(matrix: &CscMatrix<f64>, rhs: &DVector<f64>, solver: LinearSolver) -> Result<DVector<f64>, LinearSolveError> {
    if rhs.is_empty() {
        return Ok(DVector::zeros(0));
    }
    match solver {
        LinearSolver::SparseCholesky => {
            let chol = CscCholesky::factor(matrix).map_err(|e| LinearSolveError::Factorization(e.to_string()))?;
            let x = chol.solve(rhs);
            Ok(x.column(0).into_owned())
        }
        LinearSolver::Pcg { tol, max_iter_factor } => pcg(matrix, rhs, tol, max_iter_factor * rhs.len()),
    }
}

fn matvec(a: &CscMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (j, col) in a.col_iter().enumerate() {
        let xj = x[j];
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            y[i] += v * xj;
        }
    }
    y
}

/// Conjugate gradients with a diagonal preconditioner; `tol` is relative to |b|.
pub fn pcg(a: &CscMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>, LinearSolveError> {
    let n = b.len();
    let mut diag = DVector::from_element(n, 1.0);
    for (j, col) in a.col_iter().enumerate() {
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            if i == j && v > 0.0 {
                diag[j] = v;
            }
        }
    }
    let bnorm = b.norm();
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = r.component_div(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 0..max_iter {
        if r.norm() <= tol * bnorm {
            return Ok(x);
        }
        let ap = matvec(a, &p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(LinearSolveError::NotConverged {
                iterations: it,
                residual: r.norm() / bnorm,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    if r.norm() <= tol * bnorm {
        return Ok(x);
    }
    Err(LinearSolveError::NotConverged {
        iterations: max_iter,
        residual: r.norm() / bnorm,
    })
}
