//! Scalar energies of the implicit Euler incremental potential with analytic
//! gradients and per-element Hessian blocks.

mod pd;
mod rod;
mod shell;
mod solid;
mod terms;

use std::cell::Cell;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{SimObject, TopologyKind};

pub use pd::{pd_eps, project_pd};
pub use rod::{curvature_binormal, rod_bend_energy, rod_stretch_energy};
pub use shell::{shell_hinge_bend_energy, shell_membrane_energy};
pub use solid::tet_stvk_energy;
pub use terms::{bc_penalty_energy, gravity_energy, inertial_energy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("rod edge {0} has zero length")]
    ZeroLengthEdge(usize),
    #[error("antiparallel edges at rod vertex {0}")]
    AntiparallelEdges(usize),
    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),
    #[error("degenerate hinge {0}")]
    DegenerateHinge(usize),
    #[error("vector length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub gravity: [f64; 3],
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.youngs_modulus > 0.0) {
            return Err(EnergyError::InvalidMaterial("Young's modulus must be positive".into()));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(EnergyError::InvalidMaterial("Poisson ratio must lie in (0, 0.5)".into()));
        }
        if !(self.density > 0.0) {
            return Err(EnergyError::InvalidMaterial("density must be positive".into()));
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }
}

/// Dense Hessian block coupling the listed vertices (3 rows per vertex).
#[derive(Clone, Debug, PartialEq)]
pub struct ElementHessian {
    pub vertices: Vec<usize>,
    pub block: DMatrix<f64>,
    /// The block is positive definite by construction and needs no projection.
    pub definite: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub element_hessians: Option<Vec<ElementHessian>>,
}

impl EnergyReport {
    pub fn zero(ndof: usize, with_hessian: bool) -> Self {
        Self {
            value: 0.0,
            gradient: vec![0.0; ndof],
            element_hessians: with_hessian.then(Vec::new),
        }
    }

    /// Adds another report in place. Hessian blocks are appended in order.
    pub fn accumulate(&mut self, other: EnergyReport) {
        self.value += other.value;
        for (g, o) in self.gradient.iter_mut().zip(&other.gradient) {
            *g += o;
        }
        if let (Some(h), Some(o)) = (self.element_hessians.as_mut(), other.element_hessians) {
            h.extend(o);
        }
    }

    pub(crate) fn add_block(&mut self, vertices: &[usize], block: DMatrix<f64>, definite: bool) {
        if let Some(h) = self.element_hessians.as_mut() {
            h.push(ElementHessian {
                vertices: vertices.to_vec(),
                block,
                definite,
            });
        }
    }

    pub(crate) fn add_grad(&mut self, i: usize, g: &Vector3<f64>) {
        self.gradient[3 * i] += g.x;
        self.gradient[3 * i + 1] += g.y;
        self.gradient[3 * i + 2] += g.z;
    }

    /// Assembles all blocks into a dense matrix. Intended for tests and small systems.
    pub fn dense_hessian(&self) -> Option<DMatrix<f64>> {
        let n = self.gradient.len();
        let blocks = self.element_hessians.as_ref()?;
        let mut h = DMatrix::zeros(n, n);
        for b in blocks {
            for (a, &va) in b.vertices.iter().enumerate() {
                for (c, &vc) in b.vertices.iter().enumerate() {
                    for i in 0..3 {
                        for j in 0..3 {
                            h[(3 * va + i, 3 * vc + j)] += b.block[(3 * a + i, 3 * c + j)];
                        }
                    }
                }
            }
        }
        Some(h)
    }
}

thread_local! {
    static EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn count_evaluation() {
    EVALUATIONS.with(|c| c.set(c.get() + 1));
}

/// Number of energy-term evaluations made on the current thread.
pub fn evaluation_count() -> u64 {
    EVALUATIONS.with(|c| c.get())
}

/// Quadratic Dirichlet penalty `w * sum |x_i - x*_i|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct BcPenalty {
    pub targets: Vec<(usize, Vector3<f64>)>,
    pub weight: f64,
}

pub(crate) fn check_len(x: &[f64], expected: usize) -> Result<(), EnergyError> {
    if x.len() != expected {
        return Err(EnergyError::LengthMismatch {
            got: x.len(),
            expected,
        });
    }
    Ok(())
}

/// Sum of the elastic terms appropriate for the object's topology.
pub fn elastic_energy(
    x: &[f64],
    object: &SimObject,
    params: &MaterialParams,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    let rest = &object.rest;
    let mut report = match object.topology.kind() {
        TopologyKind::RodSet => {
            let mut r = rod_stretch_energy(x, rest, params, with_hessian)?;
            r.accumulate(rod_bend_energy(x, rest, params, with_hessian)?);
            r
        }
        TopologyKind::TriMesh => {
            let mut r = shell_membrane_energy(x, rest, params, with_hessian)?;
            r.accumulate(shell_hinge_bend_energy(x, rest, params, with_hessian)?);
            r
        }
        TopologyKind::TetMesh => tet_stvk_energy(x, rest, params, with_hessian)?,
    };
    if report.gradient.is_empty() {
        report.gradient = vec![0.0; x.len()];
    }
    Ok(report)
}

/// Implicit Euler incremental potential: inertia, elasticity, gravity and an
/// optional Dirichlet penalty evaluated at the end-of-step positions `x`.
#[allow(clippy::too_many_arguments)]
pub fn total_incremental_potential(
    x: &[f64],
    x_prev: &[f64],
    x_prev2: &[f64],
    object: &SimObject,
    params: &MaterialParams,
    bc: Option<&BcPenalty>,
    dt: f64,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    let ndof = object.topology.n_dofs();
    check_len(x, ndof)?;
    let mut report = inertial_energy(x, x_prev, x_prev2, &object.mass, dt, with_hessian)?;
    report.accumulate(elastic_energy(x, object, params, with_hessian)?);
    report.accumulate(gravity_energy(x, &object.mass, &params.gravity(), with_hessian)?);
    if let Some(bc) = bc {
        report.accumulate(bc_penalty_energy(x, &bc.targets, bc.weight, with_hessian)?);
    }
    Ok(report)
}
