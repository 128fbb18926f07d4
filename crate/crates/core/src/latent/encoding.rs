//! Positions expressed relative to the Dirichlet vertices.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::geometry::{set_vertex, vertex, Topology, TopologyKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodingMode {
    /// Rod vertices as offsets from their strand root; roots are dropped.
    RootRelative,
    /// Every vertex as an offset from the mean of the anchor positions.
    DirichletMeanRelative,
}

/// Encoding between absolute positions and the reduced input of the
/// autoencoder. Decoding needs the anchor positions of the frame
/// (`anchors` order), which are the boundary values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeEncoding {
    pub mode: EncodingMode,
    pub n_vertices: usize,
    pub anchors: Vec<usize>,
    /// Vertices present in the code, in code order.
    pub kept: Vec<usize>,
    /// For root-relative codes, the position in `anchors` of each kept vertex's root.
    #[serde(default)]
    pub reference: Vec<usize>,
}

impl RelativeEncoding {
    /// Root-relative encoding of a rod set; the anchors are the strand roots.
    pub fn root_relative(topology: &Topology) -> Self {
        let strands = topology.strands();
        let anchors: Vec<usize> = strands.iter().map(|s| s.root()).collect();
        let mut kept = Vec::new();
        let mut reference = Vec::new();
        for (k, s) in strands.iter().enumerate() {
            for v in s.vertices().skip(1) {
                kept.push(v);
                reference.push(k);
            }
        }
        Self {
            mode: EncodingMode::RootRelative,
            n_vertices: topology.n_vertices(),
            anchors,
            kept,
            reference,
        }
    }

    pub fn dirichlet_mean(n_vertices: usize, anchors: &[usize]) -> Self {
        Self {
            mode: EncodingMode::DirichletMeanRelative,
            n_vertices,
            anchors: anchors.to_vec(),
            kept: (0..n_vertices).collect(),
            reference: Vec::new(),
        }
    }

    /// Root-relative for rods, anchor-mean-relative otherwise.
    pub fn for_object(topology: &Topology, anchors: &[usize]) -> Self {
        match topology.kind() {
            TopologyKind::RodSet => Self::root_relative(topology),
            _ => Self::dirichlet_mean(topology.n_vertices(), anchors),
        }
    }

    pub fn code_dim(&self) -> usize {
        3 * self.kept.len()
    }

    /// Anchor positions of a full frame.
    pub fn bc_values(&self, x: &[f64]) -> Vec<Vector3<f64>> {
        self.anchors.iter().map(|&a| vertex(x, a)).collect()
    }

    fn anchor_mean(bc: &[Vector3<f64>]) -> Vector3<f64> {
        if bc.is_empty() {
            return Vector3::zeros();
        }
        bc.iter().sum::<Vector3<f64>>() / bc.len() as f64
    }

    fn offset(&self, k: usize, bc: &[Vector3<f64>], mean: &Vector3<f64>) -> Vector3<f64> {
        match self.mode {
            EncodingMode::RootRelative => bc[self.reference[k]],
            EncodingMode::DirichletMeanRelative => *mean,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let bc = self.bc_values(x);
        let mean = Self::anchor_mean(&bc);
        let mut out = Vec::with_capacity(self.code_dim());
        for (k, &v) in self.kept.iter().enumerate() {
            let r = vertex(x, v) - self.offset(k, &bc, &mean);
            out.extend_from_slice(r.as_slice());
        }
        out
    }

    pub fn decode(&self, code: &[f64], bc: &[Vector3<f64>]) -> Result<Vec<f64>, LatentError> {
        if bc.len() != self.anchors.len() {
            return Err(LatentError::MissingBcValues {
                got: bc.len(),
                expected: self.anchors.len(),
            });
        }
        if code.len() != self.code_dim() {
            return Err(LatentError::ShapeMismatch {
                got: code.len(),
                expected: self.code_dim(),
            });
        }
        let mean = Self::anchor_mean(bc);
        let mut x = vec![0.0; 3 * self.n_vertices];
        if self.mode == EncodingMode::RootRelative {
            for (a, p) in self.anchors.iter().zip(bc) {
                set_vertex(&mut x, *a, p);
            }
        }
        for (k, &v) in self.kept.iter().enumerate() {
            let r = Vector3::new(code[3 * k], code[3 * k + 1], code[3 * k + 2]);
            set_vertex(&mut x, v, &(r + self.offset(k, bc, &mean)));
        }
        Ok(x)
    }

    /// Pulls a full-space gradient back to the code (anchor values are fixed).
    pub fn pullback(&self, grad_x: &[f64]) -> Vec<f64> {
        self.kept
            .iter()
            .flat_map(|&v| [grad_x[3 * v], grad_x[3 * v + 1], grad_x[3 * v + 2]])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::mesh::{cloth_grid, hanging_rods, root_grid};

    fn rods() -> (Topology, Vec<f64>) {
        hanging_rods(&root_grid(3, 1, 0.02), 5, 0.01)
    }

    fn translated(x: &[f64], d: [f64; 3]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| v + d[i % 3]).collect()
    }

    #[test]
    fn roots_are_excluded() {
        let (topo, _) = rods();
        let e = RelativeEncoding::root_relative(&topo);
        assert_eq!(e.code_dim(), 3 * (15 - 3));
    }

    #[test]
    fn translation_of_anchors_is_removed() {
        let (topo, x) = rods();
        let e = RelativeEncoding::root_relative(&topo);
        let moved = translated(&x, [0.3, -0.1, 0.05]);
        for (a, b) in e.encode(&moved).iter().zip(e.encode(&x)) {
            assert!((a - b).abs() < 1e-15);
        }
        let (topo, x) = cloth_grid(4, 4, 1.0, 1.0);
        let e = RelativeEncoding::for_object(&topo, &[0, 3]);
        let moved = translated(&x, [0.3, -0.1, 0.05]);
        for (a, b) in e.encode(&moved).iter().zip(e.encode(&x)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_inverts_encode() {
        let (topo, x) = rods();
        let x = translated(&x, [0.123, 0.456, -0.789]);
        for e in [RelativeEncoding::root_relative(&topo), RelativeEncoding::dirichlet_mean(15, &[0, 7])] {
            let y = e.decode(&e.encode(&x), &e.bc_values(&x)).unwrap();
            for (a, b) in x.iter().zip(&y) {
                // one rounding of the subtraction and one of the addition
                assert!((a - b).abs() <= 2.0 * f64::EPSILON * a.abs().max(1.0), "{a} {b}");
            }
            if e.mode == EncodingMode::RootRelative {
                for &a in &e.anchors {
                    assert_eq!(vertex(&y, a), vertex(&x, a));
                }
            }
        }
    }

    #[test]
    fn decode_requires_bc_values() {
        let (topo, x) = rods();
        let e = RelativeEncoding::root_relative(&topo);
        let err = e.decode(&e.encode(&x), &[]).unwrap_err();
        assert!(matches!(err, LatentError::MissingBcValues { got: 0, expected: 3 }));
    }
}
