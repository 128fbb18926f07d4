use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::linear::{assemble_projected, solve, FreeDofs, LinearSolver};
use super::SolverError;
use crate::energy::{total_incremental_potential, BcPenalty, EnergyError, EnergyReport, MaterialParams};
use crate::geometry::{set_vertex, SimObject};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_newton_iters: usize,
    /// Free-DOF gradient infinity-norm tolerance, relative to the objective's
    /// characteristic force.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    pub linear_solver: LinearSolver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_newton_iters: 50,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_halvings: 20,
            linear_solver: LinearSolver::SparseCholesky,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = self.grad_tol > 0.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && match self.linear_solver {
                LinearSolver::Pcg { tol, max_iter_factor } => tol > 0.0 && max_iter_factor > 0,
                LinearSolver::SparseCholesky => true,
            };
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Prescribed positions for a set of vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletSet {
    pub vertices: Vec<usize>,
    pub targets: Vec<Vector3<f64>>,
}

impl DirichletSet {
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn validate(&self, n_vertices: usize) -> Result<(), SolverError> {
        if self.vertices.len() != self.targets.len() {
            return Err(SolverError::InvalidDirichlet("vertex and target counts differ".into()));
        }
        let mut seen = vec![false; n_vertices];
        for &v in &self.vertices {
            if v >= n_vertices || seen[v] {
                return Err(SolverError::InvalidDirichlet(format!("vertex {v} out of range or repeated")));
            }
            seen[v] = true;
        }
        Ok(())
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (v, t) in self.vertices.iter().zip(&self.targets) {
            set_vertex(x, *v, t);
        }
    }
}

/// Something Newton's method can minimize.
pub trait Objective {
    fn evaluate(&self, x: &[f64], with_hessian: bool) -> Result<EnergyReport, EnergyError>;
    /// Characteristic force used to make the gradient tolerance dimensionless.
    fn force_scale(&self) -> f64 {
        1.0
    }
}

/// Incremental potential of one implicit Euler step.
pub struct IncrementalPotential<'a> {
    pub object: &'a SimObject,
    pub params: &'a MaterialParams,
    pub x_prev: &'a [f64],
    pub x_prev2: &'a [f64],
    pub dt: f64,
    pub penalty: Option<&'a BcPenalty>,
}

impl Objective for IncrementalPotential<'_> {
    fn evaluate(&self, x: &[f64], with_hessian: bool) -> Result<EnergyReport, EnergyError> {
        total_incremental_potential(
            x,
            self.x_prev,
            self.x_prev2,
            self.object,
            self.params,
            self.penalty,
            self.dt,
            with_hessian,
        )
    }

    /// Mean vertex weight, `total mass * |g| / N`, with |g| floored at 1 m/s^2.
    fn force_scale(&self) -> f64 {
        let n = self.object.n_vertices().max(1) as f64;
        self.object.mass.total() * self.params.gravity().norm().max(1.0) / n
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    /// Iterations where the Newton direction was not a descent direction.
    pub gradient_fallbacks: usize,
    pub grad_norm: f64,
    pub tolerance: f64,
    /// Objective value at every accepted iterate, starting with `x0`.
    pub energies: Vec<f64>,
}

fn free_grad_norm(g: &[f64], dofs: &FreeDofs) -> f64 {
    dofs.global().iter().map(|&d| g[d].abs()).fold(0.0, f64::max)
}

/// Newton's method with Armijo backtracking on the free DOFs.
pub fn newton_minimize(
    objective: &dyn Objective,
    x0: &[f64],
    dirichlet: &DirichletSet,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, NewtonStats), SolverError> {
    let n_vertices = x0.len() / 3;
    dirichlet.validate(n_vertices)?;
    let dofs = FreeDofs::new(n_vertices, &dirichlet.vertices);
    let mut x = x0.to_vec();
    dirichlet.apply(&mut x);

    let tol = cfg.grad_tol * objective.force_scale();
    let mut stats = NewtonStats {
        tolerance: tol,
        ..Default::default()
    };
    let mut report = objective.evaluate(&x, true)?;
    stats.energies.push(report.value);
    loop {
        stats.grad_norm = free_grad_norm(&report.gradient, &dofs);
        if stats.grad_norm < tol {
            stats.converged = true;
            break;
        }
        if stats.iterations >= cfg.max_newton_iters {
            break;
        }
        stats.iterations += 1;

        let g = dofs.restrict(&report.gradient);
        let blocks = report.element_hessians.as_deref().unwrap_or(&[]);
        let h = assemble_projected(blocks, &dofs);
        let mut d = solve(&h, &(-&g), cfg.linear_solver).map_err(|e| SolverError::LinearSolveFailure(e.to_string()))?;
        let mut slope = g.dot(&d);
        if !(slope < 0.0) || !d.iter().all(|v| v.is_finite()) {
            d = -&g;
            slope = -g.norm_squared();
            stats.gradient_fallbacks += 1;
        }

        let e0 = report.value;
        // Below this predicted decrease the objective value is dominated by
        // round-off and cannot rank iterates; the free gradient norm is used.
        let resolvable = -slope > 256.0 * f64::EPSILON * e0.abs();
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut trial = x.clone();
        for _ in 0..=cfg.max_halvings {
            step(&mut trial, &x, &d, alpha, &dofs);
            if let Ok(r) = objective.evaluate(&trial, false) {
                let ok = if resolvable {
                    r.value <= e0 + cfg.armijo_c * alpha * slope
                } else {
                    r.value.is_finite() && free_grad_norm(&r.gradient, &dofs) < stats.grad_norm
                };
                if ok {
                    accepted = Some(r.value);
                    break;
                }
            }
            alpha *= cfg.backtrack;
        }
        if accepted.is_none() {
            stats.line_search_failed = true;
            break;
        }
        x.copy_from_slice(&trial);
        report = objective.evaluate(&x, true)?;
        stats.energies.push(report.value);
    }
    Ok((x, stats))
}

fn step(out: &mut [f64], x: &[f64], d: &DVector<f64>, alpha: f64, dofs: &FreeDofs) {
    out.copy_from_slice(x);
    for (k, &dof) in dofs.global().iter().enumerate() {
        out[dof] += alpha * d[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CrossSection, Strand, Topology};

    fn particle(mass_density: f64) -> SimObject {
        // a 3-vertex rod with tiny stiffness stands in for free particles
        let topo = Topology::RodSet {
            n_vertices: 3,
            strands: vec![Strand { start: 0, len: 3 }],
        };
        let x = vec![0., 0., 0., 1., 0., 0., 2., 0., 0.];
        SimObject::new(topo, &x, mass_density, CrossSection::Rod { radius: 0.1 }).unwrap()
    }

    #[test]
    fn minimum_returns_immediately() {
        let obj = particle(1.0);
        let params = MaterialParams {
            youngs_modulus: 1e3,
            poisson_ratio: 0.3,
            density: 1.0,
            gravity: [0.0; 3],
        };
        let x = obj.rest.positions.clone();
        let ip = IncrementalPotential {
            object: &obj,
            params: &params,
            x_prev: &x,
            x_prev2: &x,
            dt: 1.0 / 30.0,
            penalty: None,
        };
        let (xs, stats) = newton_minimize(&ip, &x, &DirichletSet::empty(), &SolverConfig::default()).unwrap();
        assert_eq!(xs, x);
        assert_eq!(stats.iterations, 0);
        assert!(stats.converged);
    }

    #[test]
    fn invalid_dirichlet_sets_are_rejected() {
        let d = DirichletSet {
            vertices: vec![1, 1],
            targets: vec![Vector3::zeros(); 2],
        };
        assert!(d.validate(3).is_err());
        let d = DirichletSet {
            vertices: vec![7],
            targets: vec![Vector3::zeros()],
        };
        assert!(d.validate(3).is_err());
    }
}
