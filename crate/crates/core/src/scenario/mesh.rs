//! Procedural meshes for the built-in scenarios.

use std::collections::BTreeMap;

use crate::geometry::{Strand, Topology};

/// Strands hanging straight down (-z) from the given root positions.
pub fn hanging_rods(roots: &[[f64; 3]], vertices_per_strand: usize, edge_length: f64) -> (Topology, Vec<f64>) {
    let mut x = Vec::with_capacity(3 * roots.len() * vertices_per_strand);
    let mut strands = Vec::with_capacity(roots.len());
    for r in roots {
        strands.push(Strand {
            start: x.len() / 3,
            len: vertices_per_strand,
        });
        for i in 0..vertices_per_strand {
            x.extend_from_slice(&[r[0], r[1], r[2] - i as f64 * edge_length]);
        }
    }
    let topo = Topology::RodSet {
        n_vertices: x.len() / 3,
        strands,
    };
    (topo, x)
}

/// Roots on a rectangular `nx` x `ny` grid in the z = 0 plane.
pub fn root_grid(nx: usize, ny: usize, spacing: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
        }
    }
    out
}

/// Roots evenly spaced on a horizontal circle around the origin.
pub fn root_ring(count: usize, radius: f64) -> Vec<[f64; 3]> {
    (0..count)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            [radius * a.cos(), radius * a.sin(), 0.0]
        })
        .collect()
}

/// Vertical sheet in the x-z plane, `nx` columns by `nz` rows, top row at z = 0.
/// Vertex `(i, k)` has index `k * nx + i`; row 0 is the top edge.
pub fn cloth_grid(nx: usize, nz: usize, width: f64, height: f64) -> (Topology, Vec<f64>) {
    let mut x = Vec::with_capacity(3 * nx * nz);
    for k in 0..nz {
        for i in 0..nx {
            x.extend_from_slice(&[
                width * i as f64 / (nx - 1) as f64,
                0.0,
                -height * k as f64 / (nz - 1) as f64,
            ]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (nz - 1));
    for k in 0..nz - 1 {
        for i in 0..nx - 1 {
            let a = k * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            // alternate the diagonal to avoid a directional bias
            if (i + k) % 2 == 0 {
                triangles.push([a, c, b]);
                triangles.push([b, c, d]);
            } else {
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
    }
    (
        Topology::TriMesh {
            n_vertices: nx * nz,
            triangles,
        },
        x,
    )
}

/// Conforming tet mesh of a set of unit voxels scaled by `cell`, six tets
/// per voxel along the main diagonal. Vertices are numbered in lexicographic
/// (x, y, z) order of their lattice coordinates.
pub fn voxel_tets(cells: &[[i64; 3]], cell: f64) -> (Topology, Vec<f64>, Vec<[i64; 3]>) {
    let mut lattice: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    for c in cells {
        for d in 0..8 {
            let p = [c[0] + (d & 1), c[1] + ((d >> 1) & 1), c[2] + ((d >> 2) & 1)];
            lattice.insert(p, 0);
        }
    }
    let mut coords = Vec::with_capacity(lattice.len());
    for (i, (p, idx)) in lattice.iter_mut().enumerate() {
        *idx = i;
        coords.push(*p);
    }
    let x: Vec<f64> = coords
        .iter()
        .flat_map(|p| [p[0] as f64 * cell, p[1] as f64 * cell, p[2] as f64 * cell])
        .collect();
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * cells.len());
    for c in cells {
        for perm in PERMS {
            let mut p = *c;
            let mut tet = [lattice[&p]; 4];
            for (k, &axis) in perm.iter().enumerate() {
                p[axis] += 1;
                tet[k + 1] = lattice[&p];
            }
            if signed_volume(&x, &tet) < 0.0 {
                tet.swap(2, 3);
            }
            tets.push(tet);
        }
    }
    (
        Topology::TetMesh {
            n_vertices: coords.len(),
            tets,
        },
        x,
        coords,
    )
}

fn signed_volume(x: &[f64], t: &[usize; 4]) -> f64 {
    let v = |i: usize, k: usize| x[3 * t[i] + k] - x[3 * t[0] + k];
    let (a, b, c) = ([v(1, 0), v(1, 1), v(1, 2)], [v(2, 0), v(2, 1), v(2, 2)], [v(3, 0), v(3, 1), v(3, 2)]);
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Box of voxels `[0, nx) x [0, ny) x [0, nz)`.
pub fn voxel_box(nx: i64, ny: i64, nz: i64) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                out.push([i, j, k]);
            }
        }
    }
    out
}
