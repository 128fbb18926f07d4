//! Topologies, rest-state precomputation, lumped masses and the frame
//! containers shared by the simulator and the learning pipeline.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("element {element} references vertex {index} but the mesh has {n_vertices} vertices")]
    IndexOutOfRange {
        element: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("degenerate element {0}")]
    DegenerateElement(usize),
    #[error("invalid strand layout: {0}")]
    InvalidStrand(String),
    #[error("position vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    RodSet,
    TriMesh,
    TetMesh,
}

/// A contiguous run of vertices forming one rod. The first vertex is the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strand {
    pub start: usize,
    pub len: usize,
}

impl Strand {
    pub fn root(&self) -> usize {
        self.start
    }

    pub fn vertices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Topology {
    RodSet {
        n_vertices: usize,
        strands: Vec<Strand>,
    },
    TriMesh {
        n_vertices: usize,
        triangles: Vec<[usize; 3]>,
    },
    TetMesh {
        n_vertices: usize,
        tets: Vec<[usize; 4]>,
    },
}

/// Interior edge shared by two triangles. `v[0]`-`v[1]` is the shared edge,
/// `v[2]` the opposite vertex of the first triangle, `v[3]` of the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hinge {
    pub v: [usize; 4],
    pub faces: [usize; 2],
}

impl Topology {
    pub fn kind(&self) -> TopologyKind {
        match self {
            Topology::RodSet { .. } => TopologyKind::RodSet,
            Topology::TriMesh { .. } => TopologyKind::TriMesh,
            Topology::TetMesh { .. } => TopologyKind::TetMesh,
        }
    }

    pub fn n_vertices(&self) -> usize {
        match self {
            Topology::RodSet { n_vertices, .. }
            | Topology::TriMesh { n_vertices, .. }
            | Topology::TetMesh { n_vertices, .. } => *n_vertices,
        }
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_vertices()
    }

    pub fn strands(&self) -> &[Strand] {
        match self {
            Topology::RodSet { strands, .. } => strands,
            _ => &[],
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.n_vertices();
        let check = |element: usize, idx: &[usize]| -> Result<(), GeometryError> {
            for (a, &i) in idx.iter().enumerate() {
                if i >= n {
                    return Err(GeometryError::IndexOutOfRange {
                        element,
                        index: i,
                        n_vertices: n,
                    });
                }
                if idx[..a].contains(&i) {
                    return Err(GeometryError::DegenerateElement(element));
                }
            }
            Ok(())
        };
        match self {
            Topology::RodSet { strands, .. } => {
                let mut sorted: Vec<Strand> = strands.clone();
                sorted.sort_by_key(|s| s.start);
                let mut end = 0;
                for s in &sorted {
                    if s.len < 3 {
                        return Err(GeometryError::InvalidStrand(format!(
                            "strand at {} has {} vertices, need at least 3",
                            s.start, s.len
                        )));
                    }
                    if s.start < end {
                        return Err(GeometryError::InvalidStrand(format!(
                            "strand at {} overlaps its predecessor",
                            s.start
                        )));
                    }
                    end = s.start + s.len;
                    if end > n {
                        return Err(GeometryError::IndexOutOfRange {
                            element: s.start,
                            index: end - 1,
                            n_vertices: n,
                        });
                    }
                }
                Ok(())
            }
            Topology::TriMesh { triangles, .. } => triangles
                .iter()
                .enumerate()
                .try_for_each(|(e, t)| check(e, t)),
            Topology::TetMesh { tets, .. } => {
                tets.iter().enumerate().try_for_each(|(e, t)| check(e, t))
            }
        }
    }

    /// Rod edges in strand order.
    pub fn rod_edges(&self) -> Vec<[usize; 2]> {
        self.strands()
            .iter()
            .flat_map(|s| (s.start..s.start + s.len - 1).map(|i| [i, i + 1]))
            .collect()
    }

    /// Bending stencils (previous, center, next) for every interior rod vertex.
    pub fn rod_bend_stencils(&self) -> Vec<[usize; 3]> {
        self.strands()
            .iter()
            .flat_map(|s| (s.start + 1..s.start + s.len - 1).map(|i| [i - 1, i, i + 1]))
            .collect()
    }

    /// Interior edges of a triangle mesh, ordered by first occurrence.
    pub fn hinges(&self) -> Vec<Hinge> {
        let Topology::TriMesh { triangles, .. } = self else {
            return Vec::new();
        };
        let mut first: HashMap<(usize, usize), (usize, usize, usize, usize)> = HashMap::new();
        let mut order: Vec<(usize, usize)> = Vec::new();
        let mut hinges: HashMap<(usize, usize), Hinge> = HashMap::new();
        for (f, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (i, j, opp) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let key = (i.min(j), i.max(j));
                match first.get(&key) {
                    None => {
                        first.insert(key, (i, j, opp, f));
                        order.push(key);
                    }
                    Some(&(a, b, opp_a, fa)) => {
                        hinges.insert(
                            key,
                            Hinge {
                                v: [a, b, opp_a, opp],
                                faces: [fa, f],
                            },
                        );
                    }
                }
            }
        }
        order.iter().filter_map(|k| hinges.get(k).copied()).collect()
    }

    /// Boundary faces of a tet mesh, outward oriented.
    pub fn boundary_faces(&self) -> Vec<[usize; 3]> {
        match self {
            Topology::TriMesh { triangles, .. } => triangles.clone(),
            Topology::TetMesh { tets, .. } => {
                let mut count: HashMap<[usize; 3], ([usize; 3], usize)> = HashMap::new();
                let mut order = Vec::new();
                for t in tets {
                    // faces oriented outward for a positively oriented tet
                    let faces = [
                        [t[0], t[2], t[1]],
                        [t[0], t[1], t[3]],
                        [t[1], t[2], t[3]],
                        [t[0], t[3], t[2]],
                    ];
                    for f in faces {
                        let mut key = f;
                        key.sort_unstable();
                        let e = count.entry(key).or_insert_with(|| {
                            order.push(key);
                            (f, 0)
                        });
                        e.1 += 1;
                    }
                }
                order
                    .iter()
                    .filter_map(|k| {
                        let (f, c) = count[k];
                        (c == 1).then_some(f)
                    })
                    .collect()
            }
            Topology::RodSet { .. } => Vec::new(),
        }
    }
}

/// Geometric cross-section data needed to turn edge lengths and areas into
/// masses and stiffnesses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CrossSection {
    Rod { radius: f64 },
    Shell { thickness: f64 },
    Solid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RodEdgeRest {
    pub v: [usize; 2],
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RodBendRest {
    pub v: [usize; 3],
    pub lengths: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleRest {
    pub v: [usize; 3],
    pub dm_inv: Matrix2<f64>,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HingeRest {
    pub v: [usize; 4],
    pub theta: f64,
    pub edge_length: f64,
    /// One third of the summed rest areas of the two incident triangles.
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TetRest {
    pub v: [usize; 4],
    pub dm_inv: Matrix3<f64>,
    pub volume: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestState {
    /// Flat rest positions, 3 scalars per vertex.
    pub positions: Vec<f64>,
    pub section: CrossSection,
    pub rod_edges: Vec<RodEdgeRest>,
    pub rod_bends: Vec<RodBendRest>,
    pub triangles: Vec<TriangleRest>,
    pub hinges: Vec<HingeRest>,
    pub tets: Vec<TetRest>,
}

/// Per-vertex lumped mass in kilograms.
#[derive(Clone, Debug, PartialEq)]
pub struct MassVector(pub Vec<f64>);

impl MassVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub fn vertex(x: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

#[inline]
pub fn set_vertex(x: &mut [f64], i: usize, v: &Vector3<f64>) {
    x[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
}

/// Signed dihedral angle of the hinge (shared edge x0-x1, wings x2 and x3).
/// Zero for a flat hinge.
pub fn dihedral_angle(x0: &Vector3<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>, x3: &Vector3<f64>) -> f64 {
    let e = x1 - x0;
    let a = x2 - x0;
    let b = x3 - x0;
    let s = -e.norm() * e.dot(&a.cross(&b));
    let c = e.dot(&a) * e.dot(&b) - e.norm_squared() * a.dot(&b);
    s.atan2(c)
}

/// Rest lengths, areas, metrics and lumped masses for a topology.
pub fn precompute_rest(
    topology: &Topology,
    positions: &[f64],
    density: f64,
    section: CrossSection,
) -> Result<(RestState, MassVector), GeometryError> {
    topology.validate()?;
    let n = topology.n_vertices();
    if positions.len() != 3 * n {
        return Err(GeometryError::LengthMismatch {
            got: positions.len(),
            expected: 3 * n,
        });
    }
    if !(density > 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "density must be positive, got {density}"
        )));
    }
    let mut mass = vec![0.0; n];
    let mut rest = RestState {
        positions: positions.to_vec(),
        section,
        rod_edges: Vec::new(),
        rod_bends: Vec::new(),
        triangles: Vec::new(),
        hinges: Vec::new(),
        tets: Vec::new(),
    };
    let x = |i: usize| vertex(positions, i);

    match topology {
        Topology::RodSet { .. } => {
            let CrossSection::Rod { radius } = section else {
                return Err(GeometryError::InvalidParameter(
                    "rod sets need CrossSection::Rod".into(),
                ));
            };
            if !(radius > 0.0) {
                return Err(GeometryError::InvalidParameter("rod radius must be positive".into()));
            }
            let line_density = density * PI * radius * radius;
            for (e, v) in topology.rod_edges().into_iter().enumerate() {
                let length = (x(v[1]) - x(v[0])).norm();
                if !(length > 0.0) {
                    return Err(GeometryError::DegenerateElement(e));
                }
                let m = line_density * length;
                mass[v[0]] += 0.5 * m;
                mass[v[1]] += 0.5 * m;
                rest.rod_edges.push(RodEdgeRest { v, length });
            }
            for v in topology.rod_bend_stencils() {
                let l0 = (x(v[1]) - x(v[0])).norm();
                let l1 = (x(v[2]) - x(v[1])).norm();
                rest.rod_bends.push(RodBendRest { v, lengths: [l0, l1] });
            }
        }
        Topology::TriMesh { triangles, .. } => {
            let CrossSection::Shell { thickness } = section else {
                return Err(GeometryError::InvalidParameter(
                    "triangle meshes need CrossSection::Shell".into(),
                ));
            };
            if !(thickness > 0.0) {
                return Err(GeometryError::InvalidParameter("shell thickness must be positive".into()));
            }
            for (f, &v) in triangles.iter().enumerate() {
                let e1 = x(v[1]) - x(v[0]);
                let e2 = x(v[2]) - x(v[0]);
                let area = 0.5 * e1.cross(&e2).norm();
                if !(area > 1e-14) {
                    return Err(GeometryError::DegenerateElement(f));
                }
                let l1 = e1.norm();
                let t1 = e1 / l1;
                let t2 = (e2 - t1 * e2.dot(&t1)).normalize();
                let dm = Matrix2::new(l1, e2.dot(&t1), 0.0, e2.dot(&t2));
                let dm_inv = dm.try_inverse().ok_or(GeometryError::DegenerateElement(f))?;
                let m = density * thickness * area / 3.0;
                for &i in &v {
                    mass[i] += m;
                }
                rest.triangles.push(TriangleRest { v, dm_inv, area });
            }
            for h in topology.hinges() {
                let [a, b, c, d] = h.v;
                let theta = dihedral_angle(&x(a), &x(b), &x(c), &x(d));
                let edge_length = (x(b) - x(a)).norm();
                let area = (rest.triangles[h.faces[0]].area + rest.triangles[h.faces[1]].area) / 3.0;
                rest.hinges.push(HingeRest {
                    v: h.v,
                    theta,
                    edge_length,
                    area,
                });
            }
        }
        Topology::TetMesh { tets, .. } => {
            let mut lmin = f64::INFINITY;
            for &v in tets {
                for a in 0..4 {
                    for b in a + 1..4 {
                        lmin = lmin.min((x(v[a]) - x(v[b])).norm());
                    }
                }
            }
            for (e, &v) in tets.iter().enumerate() {
                let dm = Matrix3::from_columns(&[x(v[1]) - x(v[0]), x(v[2]) - x(v[0]), x(v[3]) - x(v[0])]);
                let det = dm.determinant();
                let volume = det.abs() / 6.0;
                if !(det.abs() > 1e-12 * lmin.powi(3)) {
                    return Err(GeometryError::DegenerateElement(e));
                }
                let dm_inv = dm.try_inverse().ok_or(GeometryError::DegenerateElement(e))?;
                let m = density * volume / 4.0;
                for &i in &v {
                    mass[i] += m;
                }
                rest.tets.push(TetRest { v, dm_inv, volume });
            }
        }
    }
    if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(GeometryError::InvalidParameter(format!(
            "vertex {i} belongs to no element and would have zero mass"
        )));
    }
    Ok((rest, MassVector(mass)))
}

/// Topology, rest state and masses of one simulated object.
#[derive(Clone, Debug)]
pub struct SimObject {
    pub topology: Topology,
    pub rest: RestState,
    pub mass: MassVector,
}

impl SimObject {
    pub fn new(
        topology: Topology,
        positions: &[f64],
        density: f64,
        section: CrossSection,
    ) -> Result<Self, GeometryError> {
        let (rest, mass) = precompute_rest(&topology, positions, density, section)?;
        Ok(Self { topology, rest, mass })
    }

    /// Free point masses with no elastic elements.
    pub fn point_masses(positions: &[f64], masses: Vec<f64>) -> Result<Self, GeometryError> {
        if positions.len() != 3 * masses.len() {
            return Err(GeometryError::LengthMismatch {
                got: positions.len(),
                expected: 3 * masses.len(),
            });
        }
        if let Some(i) = masses.iter().position(|m| !(*m > 0.0)) {
            return Err(GeometryError::InvalidParameter(format!("mass of vertex {i} must be positive")));
        }
        Ok(Self {
            topology: Topology::TetMesh {
                n_vertices: masses.len(),
                tets: Vec::new(),
            },
            rest: RestState {
                positions: positions.to_vec(),
                section: CrossSection::Solid,
                rod_edges: Vec::new(),
                rod_bends: Vec::new(),
                triangles: Vec::new(),
                hinges: Vec::new(),
                tets: Vec::new(),
            },
            mass: MassVector(masses),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.topology.n_vertices()
    }

    /// Diagonal of the axis-aligned bounding box of the rest shape.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.rest.positions)
    }
}

pub fn bbox_diagonal(x: &[f64]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in x.chunks_exact(3) {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSequence {
    pub scenario: String,
    pub dt: f64,
    pub bc_dim: usize,
    pub topology: Topology,
    pub frames: Vec<Frame>,
}

impl StateSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks frame numbering and vector lengths.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let ndof = self.topology.n_dofs();
        for (i, f) in self.frames.iter().enumerate() {
            if f.t != i {
                return Err(GeometryError::InvalidParameter(format!(
                    "frame {i} carries index {}",
                    f.t
                )));
            }
            if f.x.len() != ndof {
                return Err(GeometryError::LengthMismatch {
                    got: f.x.len(),
                    expected: ndof,
                });
            }
            if f.p.len() != self.bc_dim {
                return Err(GeometryError::LengthMismatch {
                    got: f.p.len(),
                    expected: self.bc_dim,
                });
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<&[f64]> {
        self.frames.iter().map(|f| f.x.as_slice()).collect()
    }
}
