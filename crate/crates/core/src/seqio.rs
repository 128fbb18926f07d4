//! SDSQ1 dataset files.
//!
//! Layout: the 8-byte magic `SDSQ0001`, a little-endian `u32` byte length,
//! that many bytes of UTF-8 JSON header, then `frame_count` records of
//! little-endian `f32`: the 3N position scalars followed by the `bc_dim`
//! boundary-condition parameters.
//!
//! Positions are stored in single precision. Writing a sequence whose values
//! are already representable in `f32` and reading it back is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame, StateSequence, Topology};

pub const SEQUENCE_MAGIC: &[u8; 8] = b"SDSQ0001";

#[derive(Debug, Error)]
pub enum SequenceIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format version mismatch: found magic {0:?}")]
    FormatVersionMismatch(Vec<u8>),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    topology: Topology,
    dt: f64,
    bc_dim: usize,
    frame_count: usize,
    scenario: String,
}

pub fn write_sequence(seq: &StateSequence, path: impl AsRef<Path>) -> Result<(), SequenceIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequence_to(seq, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_sequence_to(seq: &StateSequence, w: &mut impl Write) -> Result<(), SequenceIoError> {
    let header = Header {
        topology: seq.topology.clone(),
        dt: seq.dt,
        bc_dim: seq.bc_dim,
        frame_count: seq.frames.len(),
        scenario: seq.scenario.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(SEQUENCE_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for f in &seq.frames {
        for &v in f.x.iter().chain(f.p.iter()) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<StateSequence, SequenceIoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_sequence_from(&mut r)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), SequenceIoError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SequenceIoError::TruncatedFile(what.to_string()),
        _ => SequenceIoError::Io(e),
    })
}

pub fn read_sequence_from(r: &mut impl Read) -> Result<StateSequence, SequenceIoError> {
    let mut magic = [0u8; 8];
    read_exact_or_truncated(r, &mut magic, "magic")?;
    if &magic != SEQUENCE_MAGIC {
        return Err(SequenceIoError::FormatVersionMismatch(magic.to_vec()));
    }
    let mut len = [0u8; 4];
    read_exact_or_truncated(r, &mut len, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact_or_truncated(r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json)?;
    let ndof = header.topology.n_dofs();
    let record = ndof + header.bc_dim;
    let mut buf = vec![0u8; 4 * record];
    let mut frames = Vec::with_capacity(header.frame_count);
    for t in 0..header.frame_count {
        read_exact_or_truncated(r, &mut buf, &format!("frame {t} of {}", header.frame_count))?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        frames.push(Frame {
            t,
            x: values[..ndof].to_vec(),
            p: values[ndof..].to_vec(),
        });
    }
    Ok(StateSequence {
        scenario: header.scenario,
        dt: header.dt,
        bc_dim: header.bc_dim,
        topology: header.topology,
        frames,
    })
}
