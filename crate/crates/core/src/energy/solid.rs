use nalgebra::{DMatrix, Matrix3};

use super::{check_len, count_evaluation, EnergyError, EnergyReport, MaterialParams};
use crate::geometry::{vertex, RestState};

/// Linear-tetrahedron StVK: `sum V (mu |E|^2 + lambda/2 tr(E)^2)` with
/// `F = Ds Dm^-1` and `E = (F^T F - I) / 2`. Inverted elements are allowed.
pub fn tet_stvk_energy(
    x: &[f64],
    rest: &RestState,
    params: &MaterialParams,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    check_len(x, rest.positions.len())?;
    let (mu, lambda) = params.lame();
    let mut report = EnergyReport::zero(x.len(), with_hessian);
    let id = Matrix3::identity();
    for tet in &rest.tets {
        let [i0, i1, i2, i3] = tet.v;
        let x0 = vertex(x, i0);
        let ds = Matrix3::from_columns(&[vertex(x, i1) - x0, vertex(x, i2) - x0, vertex(x, i3) - x0]);
        let f = ds * tet.dm_inv;
        let strain = (f.transpose() * f - id) * 0.5;
        let tr = strain.trace();
        report.value += tet.volume * (mu * strain.norm_squared() + 0.5 * lambda * tr * tr);
        let stress = strain * (2.0 * mu) + id * (lambda * tr);
        let dm_inv_t = tet.dm_inv.transpose();
        let g = f * stress * dm_inv_t * tet.volume;
        let (g1, g2, g3) = (g.column(0).into_owned(), g.column(1).into_owned(), g.column(2).into_owned());
        report.add_grad(i0, &-(g1 + g2 + g3));
        report.add_grad(i1, &g1);
        report.add_grad(i2, &g2);
        report.add_grad(i3, &g3);
        if with_hessian {
            let mut block = DMatrix::zeros(12, 12);
            for col in 0..12 {
                let (v, k) = (col / 3, col % 3);
                let mut dds = Matrix3::zeros();
                match v {
                    0 => {
                        for c in 0..3 {
                            dds[(k, c)] = -1.0;
                        }
                    }
                    _ => dds[(k, v - 1)] = 1.0,
                }
                let df = dds * tet.dm_inv;
                let ftdf = f.transpose() * df;
                let dstrain = (ftdf + ftdf.transpose()) * 0.5;
                let dstress = dstrain * (2.0 * mu) + id * (lambda * dstrain.trace());
                let dg = (df * stress + f * dstress) * dm_inv_t * tet.volume;
                let d1 = dg.column(0).into_owned();
                let d2 = dg.column(1).into_owned();
                let d3 = dg.column(2).into_owned();
                let d0 = -(d1 + d2 + d3);
                for (r, d) in [d0, d1, d2, d3].iter().enumerate() {
                    block.view_mut((3 * r, col), (3, 1)).copy_from(d);
                }
            }
            report.add_block(&tet.v, block, false);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::testing::*;
    use crate::geometry::{precompute_rest, CrossSection, Topology};

    fn params() -> MaterialParams {
        MaterialParams {
            youngs_modulus: 1e5,
            poisson_ratio: 0.3,
            density: 1.0,
            gravity: [0.0; 3],
        }
    }

    #[test]
    fn uniform_scale_of_unit_tet() {
        let topo = Topology::TetMesh {
            n_vertices: 4,
            tets: vec![[0, 1, 2, 3]],
        };
        let x0 = vec![0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let rest = precompute_rest(&topo, &x0, 1.0, CrossSection::Solid).unwrap().0;
        let p = params();
        assert!(tet_stvk_energy(&x0, &rest, &p, false).unwrap().value.abs() < 1e-20);
        let scaled: Vec<f64> = x0.iter().map(|v| v * 1.1).collect();
        let (mu, lambda) = p.lame();
        let eg = (1.21 - 1.0) / 2.0;
        let psi = mu * 3.0 * eg * eg + 0.5 * lambda * (3.0 * eg).powi(2);
        let e = tet_stvk_energy(&scaled, &rest, &p, false).unwrap().value;
        assert!((e - psi / 6.0).abs() < 1e-10 * e, "{e} vs {}", psi / 6.0);
    }

    #[test]
    fn two_tet_gradient_and_hessian_match_fd() {
        let topo = Topology::TetMesh {
            n_vertices: 5,
            tets: vec![[0, 1, 2, 3], [1, 2, 3, 4]],
        };
        let x0 = vec![0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 1., 1.];
        let rest = precompute_rest(&topo, &x0, 1.0, CrossSection::Solid).unwrap().0;
        let p = params();
        for seed in 0..5 {
            let mut r = rng(seed);
            let x = perturb(&x0, 0.2, &mut r);
            let f = |y: &[f64]| tet_stvk_energy(y, &rest, &p, false).unwrap().value;
            let g = |y: &[f64]| tet_stvk_energy(y, &rest, &p, false).unwrap().gradient;
            let rep = tet_stvk_energy(&x, &rest, &p, true).unwrap();
            assert!(rel_err(&rep.gradient, &fd_gradient(&f, &x, 1e-6)) < 1e-4);
            let h = rep.dense_hessian().unwrap();
            assert!(rel_err_mat(&h, &fd_hessian(&g, &x, 1e-6)) < 1e-3);
        }
    }

    #[test]
    fn inverted_element_has_finite_energy() {
        let topo = Topology::TetMesh {
            n_vertices: 4,
            tets: vec![[0, 1, 2, 3]],
        };
        let x0 = vec![0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let rest = precompute_rest(&topo, &x0, 1.0, CrossSection::Solid).unwrap().0;
        let inverted = vec![0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., -1.];
        let e = tet_stvk_energy(&inverted, &rest, &params(), false).unwrap().value;
        assert!(e.is_finite() && e < 1e-10);
    }
}
