//! Latent representation and training: relative encodings, the autoencoder,
//! the self-supervised incremental-potential loss and the integrator.

pub mod autoencoder;
pub mod encoding;
pub mod integrator;
pub mod selfsup;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autoencoder::{train_autoencoder, AeConfig, Autoencoder};
pub use encoding::{EncodingMode, RelativeEncoding};
pub use integrator::{
    train_integrator_selfsup, train_integrator_supervised, Integrator, IntegratorConfig, TrainingData, Triple,
};
pub use selfsup::{balance_weight, perturb_latents, selfsup_loss, LossContext, LossParts, SelfSupLoss, BALANCE_EPS};

use crate::energy::EnergyError;
use crate::neural::{CheckpointError, NeuralError};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("decode needs {expected} boundary values, got {got}")]
    MissingBcValues { got: usize, expected: usize },
    #[error("vector of length {got}, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize, report: Box<TrainReport> },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Loss summary of one epoch. Autoencoder runs fill only `total`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub inertial: f64,
    pub elastic: f64,
    pub external: f64,
    pub bc: f64,
    /// Seconds since training started.
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_s: f64,
}

impl TrainReport {
    fn start(kind: &str, seed: u64) -> (Self, Instant) {
        (
            Self {
                kind: kind.into(),
                seed,
                ..Default::default()
            },
            Instant::now(),
        )
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.total)
    }

    /// One JSON object per epoch, each tagged with the run kind and seed.
    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).map_err(std::io::Error::other)?;
            v["kind"] = self.kind.clone().into();
            v["seed"] = self.seed.into();
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

/// Typed field of a checkpoint's JSON metadata.
pub(crate) fn meta_field<T: serde::de::DeserializeOwned>(
    c: &crate::neural::Checkpoint,
    name: &str,
) -> Result<T, LatentError> {
    let v = c
        .meta
        .get(name)
        .cloned()
        .ok_or_else(|| LatentError::InvalidConfig(format!("checkpoint lacks `{name}`")))?;
    serde_json::from_value(v).map_err(|e| LatentError::InvalidConfig(format!("`{name}`: {e}")))
}
