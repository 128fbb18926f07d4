use nalgebra::{DMatrix, Vector3};

use super::{check_len, count_evaluation, EnergyError, EnergyReport};
use crate::geometry::{vertex, MassVector};

/// `E = 1/(2 dt^2) (x - y)^T M (x - y)` with the inertial prediction
/// `y = 2 x_prev - x_prev2`.
pub fn inertial_energy(
    x: &[f64],
    x_prev: &[f64],
    x_prev2: &[f64],
    mass: &MassVector,
    dt: f64,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    let n = mass.len();
    check_len(x, 3 * n)?;
    check_len(x_prev, 3 * n)?;
    check_len(x_prev2, 3 * n)?;
    let inv_dt2 = 1.0 / (dt * dt);
    let mut report = EnergyReport::zero(3 * n, with_hessian);
    let mut value = 0.0;
    for i in 0..n {
        let m = mass.0[i];
        for k in 0..3 {
            let j = 3 * i + k;
            let d = x[j] - (2.0 * x_prev[j] - x_prev2[j]);
            value += m * d * d;
            report.gradient[j] = m * d * inv_dt2;
        }
        if with_hessian {
            report.add_block(&[i], DMatrix::identity(3, 3) * (m * inv_dt2), true);
        }
    }
    report.value = 0.5 * inv_dt2 * value;
    Ok(report)
}

/// `E = -sum_i m_i g . x_i`.
pub fn gravity_energy(
    x: &[f64],
    mass: &MassVector,
    g: &Vector3<f64>,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    let n = mass.len();
    check_len(x, 3 * n)?;
    let mut report = EnergyReport::zero(3 * n, with_hessian);
    for i in 0..n {
        let m = mass.0[i];
        report.value -= m * g.dot(&vertex(x, i));
        report.add_grad(i, &(-m * g));
    }
    Ok(report)
}

/// `E = w * sum |x_i - x*_i|^2` over the constrained vertices.
pub fn bc_penalty_energy(
    x: &[f64],
    targets: &[(usize, Vector3<f64>)],
    weight: f64,
    with_hessian: bool,
) -> Result<EnergyReport, EnergyError> {
    count_evaluation();
    let mut report = EnergyReport::zero(x.len(), with_hessian);
    for (i, target) in targets {
        if 3 * i + 2 >= x.len() {
            return Err(EnergyError::LengthMismatch {
                got: x.len(),
                expected: 3 * (i + 1),
            });
        }
        let d = vertex(x, *i) - target;
        report.value += weight * d.norm_squared();
        report.add_grad(*i, &(2.0 * weight * d));
        if with_hessian {
            report.add_block(&[*i], DMatrix::identity(3, 3) * (2.0 * weight), true);
        }
    }
    Ok(report)
}
