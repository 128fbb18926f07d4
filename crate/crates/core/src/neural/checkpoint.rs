//! "SDWT1" weight files: magic `SDWT0001`, a u32 little-endian header length,
//! a JSON header naming each blob and its length, then the blobs as
//! little-endian f64 values in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Mlp, MlpSpec, NeuralError};

const MAGIC: &[u8; 8] = b"SDWT0001";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not an SDWT1 file (magic {0:?})")]
    FormatVersionMismatch(Vec<u8>),
    #[error("checkpoint truncated: {0}")]
    TruncatedFile(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint has no blob `{0}`")]
    MissingBlob(String),
    #[error("checkpoint kind `{got}`, expected `{expected}`")]
    WrongKind { got: String, expected: String },
    #[error(transparent)]
    Network(#[from] NeuralError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    blobs: Vec<BlobInfo>,
}

/// In-memory contents of a weight file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blobs: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            blobs: Vec::new(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind {
                got: self.kind.clone(),
                expected: kind.into(),
            });
        }
        Ok(())
    }

    pub fn push(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.blobs.push((name.into(), data));
    }

    pub fn blob(&self, name: &str) -> Result<&[f64], CheckpointError> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| CheckpointError::MissingBlob(name.into()))
    }

    /// Stores every parameter matrix and the BN running statistics of `net`.
    pub fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (i, p) in net.params.iter().enumerate() {
            self.push(format!("{prefix}.p{i}"), p.iter().copied().collect());
        }
        self.push(format!("{prefix}.bn"), net.bn_state());
    }

    /// Rebuilds a network of layout `spec` from blobs stored by `push_mlp`.
    pub fn take_mlp(&self, prefix: &str, spec: MlpSpec) -> Result<Mlp, CheckpointError> {
        let mut net = Mlp::new(spec, 0)?;
        for i in 0..net.params.len() {
            let data = self.blob(&format!("{prefix}.p{i}"))?;
            let shape = net.params[i].raw_dim();
            if data.len() != net.params[i].len() {
                return Err(NeuralError::ShapeMismatch {
                    got: data.len(),
                    expected: net.params[i].len(),
                }
                .into());
            }
            net.params[i] = Array2::from_shape_vec(shape, data.to_vec()).expect("length checked");
        }
        net.set_bn_state(self.blob(&format!("{prefix}.bn"))?)?;
        Ok(net)
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint_to(ckpt, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint_to(ckpt: &Checkpoint, w: &mut impl Write) -> Result<(), CheckpointError> {
    let header = Header {
        kind: ckpt.kind.clone(),
        meta: ckpt.meta.clone(),
        blobs: ckpt
            .blobs
            .iter()
            .map(|(name, d)| BlobInfo {
                name: name.clone(),
                len: d.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, d) in &ckpt.blobs {
        for v in d {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint_from(&mut BufReader::new(File::open(path)?))
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::TruncatedFile(what.into()),
        _ => CheckpointError::Io(e),
    })
}

pub fn read_checkpoint_from(r: &mut impl Read) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    read_exact_or(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::FormatVersionMismatch(magic.to_vec()));
    }
    let mut len = [0u8; 4];
    read_exact_or(r, &mut len, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact_or(r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut blobs = Vec::with_capacity(header.blobs.len());
    for b in header.blobs {
        let mut raw = vec![0u8; 8 * b.len];
        read_exact_or(r, &mut raw, &b.name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        blobs.push((b.name, data));
    }
    Ok(Checkpoint {
        kind: header.kind,
        meta: header.meta,
        blobs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let mut spec = MlpSpec::plain(5, vec![8, 8], 3);
        spec.batchnorm = true;
        spec.residual = true;
        let mut net = Mlp::new(spec.clone(), 9).unwrap();
        net.forward(&Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64).sin()), super::super::Mode::Train)
            .unwrap();
        let mut c = Checkpoint::new("test", serde_json::json!({"spec": spec}));
        c.push_mlp("net", &net);
        let mut buf = Vec::new();
        write_checkpoint_to(&c, &mut buf).unwrap();
        let back = read_checkpoint_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let net2 = back.take_mlp("net", spec).unwrap();
        assert_eq!(net2, net);
        assert!(matches!(
            read_checkpoint_from(&mut &buf[..buf.len() - 3]),
            Err(CheckpointError::TruncatedFile(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint_from(&mut bad.as_slice()),
            Err(CheckpointError::FormatVersionMismatch(_))
        ));
    }
}
