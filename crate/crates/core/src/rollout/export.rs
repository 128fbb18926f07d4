use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::geometry::Topology;

/// Writes `frame_NNNNN.obj` per frame: rods as polylines, shells as their
/// triangles, solids as their boundary faces.
pub fn export_obj_sequence(frames: &[Vec<f64>], topology: &Topology, dir: impl AsRef<Path>) -> std::io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut elements = String::new();
    match topology {
        Topology::RodSet { strands, .. } => {
            for s in strands {
                elements.push('l');
                for v in s.vertices() {
                    elements.push_str(&format!(" {}", v + 1));
                }
                elements.push('\n');
            }
        }
        Topology::TriMesh { triangles, .. } => {
            for t in triangles {
                elements.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
            }
        }
        Topology::TetMesh { .. } => {
            for t in topology.boundary_faces() {
                elements.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
            }
        }
    }
    let mut paths = Vec::with_capacity(frames.len());
    for (i, x) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:05}.obj"));
        let mut w = BufWriter::new(File::create(&path)?);
        for v in x.chunks_exact(3) {
            writeln!(w, "v {} {} {}", v[0] as f32, v[1] as f32, v[2] as f32)?;
        }
        w.write_all(elements.as_bytes())?;
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// CSV with a `frame` column followed by the named series (shorter series
/// leave empty cells).
pub fn write_metrics_csv(path: impl AsRef<Path>, columns: &[(&str, &[f64])]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = std::iter::once("frame").chain(columns.iter().map(|c| c.0)).collect();
    writeln!(w, "{}", header.join(","))?;
    let rows = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for i in 0..rows {
        let cells: Vec<String> = columns.iter().map(|c| c.1.get(i).map_or(String::new(), |v| v.to_string())).collect();
        writeln!(w, "{i},{}", cells.join(","))?;
    }
    w.flush()
}
