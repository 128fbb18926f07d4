//! Autoregressive latent rollouts, rollout metrics, timing benchmarks and
//! OBJ export.

pub mod bench;
pub mod export;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{vertex, MassVector};
use crate::latent::{Autoencoder, Integrator, LatentError};
use crate::solver::BoundaryMotion;

pub use bench::{bench, BenchConfig, BenchResult, InferencePipeline};
pub use export::{export_obj_sequence, write_metrics_csv};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("latent became non-finite at step {step}")]
    NonFiniteLatent { step: usize },
    #[error("sequence lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub z: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub dt: f64,
}

impl LatentTrajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Runs the integrator for `steps` steps after the start latents `z0`, `z1`
/// (frames 0 and 1). Only the boundary parameters of `motion` are used.
pub fn rollout(
    integrator: &Integrator,
    z0: &[f64],
    z1: &[f64],
    motion: &dyn BoundaryMotion,
    steps: usize,
    dt: f64,
) -> Result<LatentTrajectory, RolloutError> {
    let mut z = vec![z0.to_vec(), z1.to_vec()];
    let p: Vec<Vec<f64>> = (0..steps + 2).map(|t| motion.bc_params(t)).collect();
    for t in 2..steps + 2 {
        let next = integrator.step(&z[t - 1], &z[t - 2], &p[t], &p[t - 1], &p[t - 2]);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(RolloutError::NonFiniteLatent { step: t });
        }
        z.push(next);
    }
    Ok(LatentTrajectory { z, p, dt })
}

/// Anchor targets of `motion` at frame `t`, in the autoencoder's anchor order.
pub fn anchor_targets(ae: &Autoencoder, motion: &dyn BoundaryMotion, rest: &[f64], t: usize) -> Vec<nalgebra::Vector3<f64>> {
    let m = motion.placement(t);
    ae.encoding.anchors.iter().map(|&a| m.apply(&vertex(rest, a))).collect()
}

/// Absolute frames of a latent trajectory.
pub fn decode_trajectory(
    ae: &Autoencoder,
    traj: &LatentTrajectory,
    motion: &dyn BoundaryMotion,
    rest: &[f64],
) -> Result<Vec<Vec<f64>>, RolloutError> {
    traj.z
        .iter()
        .enumerate()
        .map(|(t, z)| Ok(ae.decode(z, &anchor_targets(ae, motion, rest, t))?))
        .collect()
}

/// Per frame, the largest distance of a constrained vertex from its target.
pub fn metric_bc_residual(frames: &[Vec<f64>], motion: &dyn BoundaryMotion, rest: &[f64]) -> Vec<f64> {
    frames
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let d = motion.dirichlet(rest, t);
            d.vertices
                .iter()
                .zip(&d.targets)
                .map(|(&v, target)| (vertex(x, v) - target).norm())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Kinetic energy of frames `1..`, from backward differences.
pub fn metric_kinetic_energy(frames: &[Vec<f64>], mass: &MassVector, dt: f64) -> Vec<f64> {
    frames
        .windows(2)
        .map(|w| {
            mass.0
                .iter()
                .enumerate()
                .map(|(i, m)| 0.5 * m * ((vertex(&w[1], i) - vertex(&w[0], i)) / dt).norm_squared())
                .sum()
        })
        .collect()
}

/// Per frame, the RMS over vertices of the position difference.
pub fn metric_vertex_rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>, RolloutError> {
    if a.len() != b.len() {
        return Err(RolloutError::LengthMismatch { a: a.len(), b: b.len() });
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.len() != y.len() {
                return Err(RolloutError::LengthMismatch { a: x.len(), b: y.len() });
            }
            let n = (x.len() / 3).max(1) as f64;
            Ok((x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n).sqrt())
        })
        .collect()
}
