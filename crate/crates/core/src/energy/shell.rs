//! StVK membrane and hinge bending for thin shells.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x2, SMatrix, SVector, Vector3};

use super::{check_len, count_evaluation, EnergyError, EnergyReport, MaterialParams};
use crate::geometry::{vertex, CrossSection, RestState};

fn thickness(rest: &RestState) -> f64 {
    match rest.section {
        CrossSection::Shell { thickness } => thickness,
        _ => 0.0,
    }
}

/// Hinge stiffness, half the plate flexural rigidity `E h^3 / (12 (1 - nu^2))`.
pub fn hinge_stiffness(rest: &RestState, params: &MaterialParams) -> f64 {
    let h = thickness(rest);
    let nu = params.poisson_ratio;
    0.5 * params.youngs_modulus * h.powi(3) / (12.0 * (1.0 - nu * nu))
}

/// Per triangle `A h (mu |E|^2 + lambda/2 tr(E)^2)` with the Green strain of
/// the 3x2 deformation gradient.
pub fn shell_membrane_energy(
    x: &[f64],
    rest: &RestState,
    params: &MaterialParams,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    check_len(x, rest.positions.len())?;
    let (mu, lambda) = params.lame();
    let h = thickness(rest);
    let mut report = EnergyReport::zero(x.len(), with_hessian);
    for (idx, tri) in rest.triangles.iter().enumerate() {
        if !(tri.area > 1e-14) {
            return Err(EnergyError::DegenerateTriangle(idx));
        }
        let [i0, i1, i2] = tri.v;
        let x0 = vertex(x, i0);
        let ds = Matrix3x2::from_columns(&[vertex(x, i1) - x0, vertex(x, i2) - x0]);
        let f = ds * tri.dm_inv;
        let strain = (f.transpose() * f - Matrix2::identity()) * 0.5;
        let tr = strain.trace();
        let scale = tri.area * h;
        report.value += scale * (mu * strain.norm_squared() + 0.5 * lambda * tr * tr);
        let stress = strain * (2.0 * mu) + Matrix2::identity() * (lambda * tr);
        let dm_inv_t = tri.dm_inv.transpose();
        let g = (f * stress) * dm_inv_t * scale;
        let g1 = g.column(0).into_owned();
        let g2 = g.column(1).into_owned();
        report.add_grad(i0, &-(g1 + g2));
        report.add_grad(i1, &g1);
        report.add_grad(i2, &g2);
        if with_hessian {
            let mut block = DMatrix::zeros(9, 9);
            for col in 0..9 {
                let (v, k) = (col / 3, col % 3);
                let mut dds = Matrix3x2::zeros();
                match v {
                    0 => {
                        dds[(k, 0)] = -1.0;
                        dds[(k, 1)] = -1.0;
                    }
                    _ => dds[(k, v - 1)] = 1.0,
                }
                let df = dds * tri.dm_inv;
                let ftdf = f.transpose() * df;
                let dstrain = (ftdf + ftdf.transpose()) * 0.5;
                let dstress = dstrain * (2.0 * mu) + Matrix2::identity() * (lambda * dstrain.trace());
                let dg = (df * stress + f * dstress) * dm_inv_t * scale;
                let d1 = dg.column(0).into_owned();
                let d2 = dg.column(1).into_owned();
                let d0 = -(d1 + d2);
                for (r, d) in [d0, d1, d2].iter().enumerate() {
                    block.view_mut((3 * r, col), (3, 1)).copy_from(d);
                }
            }
            report.add_block(&tri.v, block, false);
        }
    }
    Ok(report)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

fn put3(v: &mut SVector<f64, 9>, block: usize, x: &Vector3<f64>) {
    v.fixed_view_mut::<3, 1>(3 * block, 0).copy_from(x);
}

fn put33(m: &mut SMatrix<f64, 9, 9>, r: usize, c: usize, x: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(3 * r, 3 * c).copy_from(x);
    if r != c {
        m.fixed_view_mut::<3, 3>(3 * c, 3 * r).copy_from(&x.transpose());
    }
}

/// Dihedral angle with its gradient and Hessian with respect to the hinge
/// vectors `(e, a, b) = (x1 - x0, x2 - x0, x3 - x0)`.
///
/// `theta = atan2(S, C)` with `S = -|e| det(e, a, b)` and
/// `C = (e.a)(e.b) - |e|^2 (a.b)`.
fn dihedral_derivatives(
    e: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    with_hessian: bool,
) -> Option<(f64, SVector<f64, 9>, Option<SMatrix<f64, 9, 9>>)> {
    let le = e.norm();
    let ee = le * le;
    let det = e.dot(&a.cross(b));
    let s = -le * det;
    let (ea, eb, ab) = (e.dot(a), e.dot(b), a.dot(b));
    let c = ea * eb - ee * ab;
    let r = s * s + c * c;
    if !(r.sqrt() > 1e-12 * ee * ee) {
        return None;
    }
    let theta = s.atan2(c);

    let mut grad_det = SVector::<f64, 9>::zeros();
    put3(&mut grad_det, 0, &a.cross(b));
    put3(&mut grad_det, 1, &b.cross(e));
    put3(&mut grad_det, 2, &e.cross(a));
    let unit_e = e / le;
    let mut grad_le = SVector::<f64, 9>::zeros();
    put3(&mut grad_le, 0, &unit_e);
    let grad_s = -(grad_det * le + grad_le * det);
    let mut grad_c = SVector::<f64, 9>::zeros();
    put3(&mut grad_c, 0, &(a * eb + b * ea - e * (2.0 * ab)));
    put3(&mut grad_c, 1, &(e * eb - b * ee));
    put3(&mut grad_c, 2, &(e * ea - a * ee));
    let u = grad_s * c - grad_c * s;
    let grad = u / r;
    if !with_hessian {
        return Some((theta, grad, None));
    }

    let id = Matrix3::identity();
    let mut h_det = SMatrix::<f64, 9, 9>::zeros();
    put33(&mut h_det, 0, 1, &-skew(b));
    put33(&mut h_det, 0, 2, &skew(a));
    put33(&mut h_det, 1, 2, &-skew(e));
    let mut h_le = SMatrix::<f64, 9, 9>::zeros();
    put33(&mut h_le, 0, 0, &((id - unit_e * unit_e.transpose()) / le));
    let cross = grad_le * grad_det.transpose();
    let h_s = -(h_le * det + cross + cross.transpose() + h_det * le);
    let mut h_c = SMatrix::<f64, 9, 9>::zeros();
    put33(&mut h_c, 0, 0, &(a * b.transpose() + b * a.transpose() - id * (2.0 * ab)));
    put33(&mut h_c, 0, 1, &(id * eb + b * e.transpose() - e * b.transpose() * 2.0));
    put33(&mut h_c, 0, 2, &(a * e.transpose() + id * ea - e * a.transpose() * 2.0));
    put33(&mut h_c, 1, 2, &(e * e.transpose() - id * ee));
    let du = grad_s * grad_c.transpose() + h_s * c - grad_c * grad_s.transpose() - h_c * s;
    let grad_r = grad_s * (2.0 * s) + grad_c * (2.0 * c);
    let hess = du / r - u * grad_r.transpose() / (r * r);
    let hess = (hess + hess.transpose()) * 0.5;
    Some((theta, grad, Some(hess)))
}

/// `E = sum_h k (theta - theta_rest)^2 |e_rest|^2 / A_h`.
pub fn shell_hinge_bend_energy(
    x: &[f64],
    rest: &RestState,
    params: &MaterialParams,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    check_len(x, rest.positions.len())?;
    let k = hinge_stiffness(rest, params);
    let mut report = EnergyReport::zero(x.len(), with_hessian);
    // (e, a, b) = S * (x0, x1, x2, x3)
    let id = Matrix3::identity();
    let mut s_map = SMatrix::<f64, 9, 12>::zeros();
    for r in 0..3 {
        s_map.fixed_view_mut::<3, 3>(3 * r, 0).copy_from(&-id);
        s_map.fixed_view_mut::<3, 3>(3 * r, 3 * (r + 1)).copy_from(&id);
    }
    for (idx, hinge) in rest.hinges.iter().enumerate() {
        if !(hinge.area > 0.0) {
            return Err(EnergyError::DegenerateHinge(idx));
        }
        let [i0, i1, i2, i3] = hinge.v;
        let x0 = vertex(x, i0);
        let e = vertex(x, i1) - x0;
        let a = vertex(x, i2) - x0;
        let b = vertex(x, i3) - x0;
        let (theta, grad, hess) =
            dihedral_derivatives(&e, &a, &b, with_hessian).ok_or(EnergyError::DegenerateHinge(idx))?;
        let w = k * hinge.edge_length * hinge.edge_length / hinge.area;
        let dtheta = wrap_angle(theta - hinge.theta);
        report.value += w * dtheta * dtheta;
        let g = s_map.transpose() * grad * (2.0 * w * dtheta);
        for (slot, &vi) in hinge.v.iter().enumerate() {
            report.add_grad(vi, &g.fixed_rows::<3>(3 * slot).into_owned());
        }
        if let Some(hess) = hess {
            let h9 = (grad * grad.transpose() + hess * dtheta) * (2.0 * w);
            let h12 = s_map.transpose() * h9 * s_map;
            report.add_block(&hinge.v, DMatrix::from_column_slice(12, 12, h12.as_slice()), false);
        }
    }
    Ok(report)
}
