use nalgebra::{Matrix3, Rotation3, Vector3};

use super::newton::{newton_minimize, DirichletSet, IncrementalPotential, NewtonStats, SolverConfig};
use super::SolverError;
use crate::energy::MaterialParams;
use crate::geometry::{vertex, Frame, SimObject, StateSequence};

/// Rigid placement `x -> R (x - c) + c + d` of the rest shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            center: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(d: Vector3<f64>) -> Self {
        Self {
            translation: d,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` about `axis` through `center`.
    pub fn rotation_about(axis: Vector3<f64>, angle: f64, center: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *r.matrix(),
            center,
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.center) + self.center + self.translation
    }

    pub fn apply_all(&self, x: &[f64]) -> Vec<f64> {
        x.chunks_exact(3)
            .flat_map(|v| {
                let q = self.apply(&Vector3::new(v[0], v[1], v[2]));
                [q.x, q.y, q.z]
            })
            .collect()
    }
}

/// Scripted boundary: which vertices are driven, where the driving frame is
/// at each step, and the parameter vector recorded with each frame.
pub trait BoundaryMotion {
    fn constrained(&self) -> &[usize];
    fn placement(&self, t: usize) -> RigidMotion;
    fn bc_params(&self, t: usize) -> Vec<f64>;
    fn bc_dim(&self) -> usize;

    /// Dirichlet targets for frame `t`, obtained by placing the rest positions.
    fn dirichlet(&self, rest: &[f64], t: usize) -> DirichletSet {
        let m = self.placement(t);
        DirichletSet {
            vertices: self.constrained().to_vec(),
            targets: self.constrained().iter().map(|&v| m.apply(&vertex(rest, v))).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub sequence: StateSequence,
    /// Newton statistics for frames 2.. (frames 0 and 1 are scripted).
    pub stats: Vec<NewtonStats>,
}

/// Runs `frames` implicit Euler steps.
///
/// Frame 0 is the rest shape, frame 1 the rest shape carried rigidly by the
/// boundary motion. Every later frame minimizes the incremental potential with
/// the scripted vertices eliminated, warm-started at the inertial prediction
/// when the energy is defined there and at the previous frame otherwise.
pub fn simulate(
    name: &str,
    object: &SimObject,
    params: &MaterialParams,
    motion: &dyn BoundaryMotion,
    frames: usize,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<SimulationOutput, SolverError> {
    params.validate()?;
    cfg.validate()?;
    let rest = &object.rest.positions;
    let mut out = Vec::with_capacity(frames);
    let mut stats = Vec::new();
    for t in 0..frames.min(2) {
        out.push(Frame {
            t,
            x: motion.placement(t).apply_all(rest),
            p: motion.bc_params(t),
        });
    }
    for t in 2..frames {
        let x1 = &out[t - 1].x;
        let x2 = &out[t - 2].x;
        let y: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| 2.0 * a - b).collect();
        let dirichlet = motion.dirichlet(rest, t);
        let ip = IncrementalPotential {
            object,
            params,
            x_prev: x1,
            x_prev2: x2,
            dt,
            penalty: None,
        };
        // A fast reversal of the driven vertices can put the inertial
        // prediction outside the energy's domain; the previous frame is then
        // used as the starting point.
        let solved = match newton_minimize(&ip, &y, &dirichlet, cfg) {
            Err(SolverError::Energy(_)) => newton_minimize(&ip, x1, &dirichlet, cfg),
            other => other,
        };
        let (x, s) = solved.map_err(|e| SolverError::AtFrame {
            frame: t,
            source: Box::new(e),
        })?;
        stats.push(s);
        out.push(Frame {
            t,
            x,
            p: motion.bc_params(t),
        });
    }
    Ok(SimulationOutput {
        sequence: StateSequence {
            scenario: name.to_string(),
            dt,
            bc_dim: motion.bc_dim(),
            topology: object.topology.clone(),
            frames: out,
        },
        stats,
    })
}

/// A fixed set of vertices held at rest.
pub struct StaticBoundary {
    pub vertices: Vec<usize>,
}

impl BoundaryMotion for StaticBoundary {
    fn constrained(&self) -> &[usize] {
        &self.vertices
    }
    fn placement(&self, _t: usize) -> RigidMotion {
        RigidMotion::identity()
    }
    fn bc_params(&self, _t: usize) -> Vec<f64> {
        vec![0.0]
    }
    fn bc_dim(&self) -> usize {
        1
    }
}
