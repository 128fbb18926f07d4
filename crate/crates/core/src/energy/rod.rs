//! Discrete rod stretching and isotropic curvature-binormal bending.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

use super::{check_len, count_evaluation, EnergyError, EnergyReport, MaterialParams};
use crate::geometry::{vertex, CrossSection, RestState};

fn radius(rest: &RestState) -> f64 {
    match rest.section {
        CrossSection::Rod { radius } => radius,
        _ => 0.0,
    }
}

/// Stretching stiffness `E * pi * r^2`.
pub fn stretch_stiffness(rest: &RestState, params: &MaterialParams) -> f64 {
    let r = radius(rest);
    params.youngs_modulus * PI * r * r
}

/// Bending stiffness `E * pi * r^4 / 4`.
pub fn bend_stiffness(rest: &RestState, params: &MaterialParams) -> f64 {
    let r = radius(rest);
    params.youngs_modulus * PI * r.powi(4) / 4.0
}

/// `E = sum_e k_s/2 (|e|/|e_rest| - 1)^2 |e_rest|`.
pub fn rod_stretch_energy(
    x: &[f64],
    rest: &RestState,
    params: &MaterialParams,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    check_len(x, rest.positions.len())?;
    let ks = stretch_stiffness(rest, params);
    let mut report = EnergyReport::zero(x.len(), with_hessian);
    for (idx, edge) in rest.rod_edges.iter().enumerate() {
        let [i, j] = edge.v;
        let e = vertex(x, j) - vertex(x, i);
        let l = e.norm();
        if l < 1e-12 {
            return Err(EnergyError::ZeroLengthEdge(idx));
        }
        let rl = edge.length;
        let strain = l / rl - 1.0;
        report.value += 0.5 * ks * strain * strain * rl;
        let t = e / l;
        let de = ks * strain * t;
        report.add_grad(i, &-de);
        report.add_grad(j, &de);
        if with_hessian {
            let tt = t * t.transpose();
            let hee = ks * (tt / rl + (Matrix3::identity() - tt) * (strain / l));
            let mut block = DMatrix::zeros(6, 6);
            block.view_mut((0, 0), (3, 3)).copy_from(&hee);
            block.view_mut((3, 3), (3, 3)).copy_from(&hee);
            block.view_mut((0, 3), (3, 3)).copy_from(&-hee);
            block.view_mut((3, 0), (3, 3)).copy_from(&-hee);
            report.add_block(&edge.v, block, false);
        }
    }
    Ok(report)
}

/// Curvature binormal `2 (a x b) / (|a_rest||b_rest| + a . b)`.
pub fn curvature_binormal(a: &Vector3<f64>, b: &Vector3<f64>, rest_product: f64) -> Option<Vector3<f64>> {
    let d = rest_product + a.dot(b);
    (d >= 1e-12).then(|| 2.0 * a.cross(b) / d)
}

/// `E = sum_i (k_b / l_i) |kb_i|^2` over interior vertices, with `l_i` the
/// mean of the two adjacent rest lengths.
pub fn rod_bend_energy(
    x: &[f64],
    rest: &RestState,
    params: &MaterialParams,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    check_len(x, rest.positions.len())?;
    let kb = bend_stiffness(rest, params);
    let mut report = EnergyReport::zero(x.len(), with_hessian);
    for stencil in &rest.rod_bends {
        let [i0, i1, i2] = stencil.v;
        let a = vertex(x, i1) - vertex(x, i0);
        let b = vertex(x, i2) - vertex(x, i1);
        let rest_product = stencil.lengths[0] * stencil.lengths[1];
        let d = rest_product + a.dot(&b);
        if d < 1e-12 {
            return Err(EnergyError::AntiparallelEdges(i1));
        }
        let c = kb / (0.5 * (stencil.lengths[0] + stencil.lengths[1]));
        // |kb|^2 = 4 f / d^2 with f = |a x b|^2 = |a|^2 |b|^2 - (a.b)^2
        let (aa, bb, ab) = (a.norm_squared(), b.norm_squared(), a.dot(&b));
        let f = aa * bb - ab * ab;
        let d2 = d * d;
        let d3 = d2 * d;
        report.value += 4.0 * c * f / d2;
        let fa = 2.0 * bb * a - 2.0 * ab * b;
        let fb = 2.0 * aa * b - 2.0 * ab * a;
        let ga = 4.0 * c * (fa / d2 - 2.0 * f * b / d3);
        let gb = 4.0 * c * (fb / d2 - 2.0 * f * a / d3);
        report.add_grad(i0, &-ga);
        report.add_grad(i1, &(ga - gb));
        report.add_grad(i2, &gb);
        if with_hessian {
            let id = Matrix3::identity();
            let haa = 2.0 * bb * id - 2.0 * b * b.transpose();
            let hbb = 2.0 * aa * id - 2.0 * a * a.transpose();
            let hab = 4.0 * a * b.transpose() - 2.0 * b * a.transpose() - 2.0 * ab * id;
            let mut hf = SMatrix::<f64, 6, 6>::zeros();
            hf.fixed_view_mut::<3, 3>(0, 0).copy_from(&haa);
            hf.fixed_view_mut::<3, 3>(3, 3).copy_from(&hbb);
            hf.fixed_view_mut::<3, 3>(0, 3).copy_from(&hab);
            hf.fixed_view_mut::<3, 3>(3, 0).copy_from(&hab.transpose());
            let mut grad_f = SMatrix::<f64, 6, 1>::zeros();
            grad_f.fixed_view_mut::<3, 1>(0, 0).copy_from(&fa);
            grad_f.fixed_view_mut::<3, 1>(3, 0).copy_from(&fb);
            let mut grad_d = SMatrix::<f64, 6, 1>::zeros();
            grad_d.fixed_view_mut::<3, 1>(0, 0).copy_from(&b);
            grad_d.fixed_view_mut::<3, 1>(3, 0).copy_from(&a);
            let mut hd = SMatrix::<f64, 6, 6>::zeros();
            hd.fixed_view_mut::<3, 3>(0, 3).copy_from(&id);
            hd.fixed_view_mut::<3, 3>(3, 0).copy_from(&id);
            let cross = grad_f * grad_d.transpose();
            let h_ab = 4.0
                * c
                * (hf / d2 - (cross + cross.transpose()) * (2.0 / d3)
                    + grad_d * grad_d.transpose() * (6.0 * f / (d2 * d2))
                    - hd * (2.0 * f / d3));
            // a = x1 - x0, b = x2 - x1
            let mut s = SMatrix::<f64, 6, 9>::zeros();
            s.fixed_view_mut::<3, 3>(0, 0).copy_from(&-id);
            s.fixed_view_mut::<3, 3>(0, 3).copy_from(&id);
            s.fixed_view_mut::<3, 3>(3, 3).copy_from(&-id);
            s.fixed_view_mut::<3, 3>(3, 6).copy_from(&id);
            let hx = s.transpose() * h_ab * s;
            report.add_block(&stencil.v, DMatrix::from_column_slice(9, 9, hx.as_slice()), false);
        }
    }
    Ok(report)
}
