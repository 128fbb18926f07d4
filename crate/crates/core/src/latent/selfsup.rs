//! The incremental potential as a training loss on decoded latents, training
//! noise and per-sample velocity balancing.

use nalgebra::Vector3;
use ndarray::{Array2, Axis};
use rand::Rng;

use super::{Autoencoder, LatentError};
use crate::energy::{bc_penalty_energy, elastic_energy, gravity_energy, inertial_energy, MaterialParams};
use crate::geometry::SimObject;

/// Clamp on the averaged velocity magnitude in [`balance_weight`] (m/s).
pub const BALANCE_EPS: f64 = 1e-6;

/// Full-space history and boundary targets of one prediction.
#[derive(Clone, Copy, Debug)]
pub struct LossContext<'a> {
    pub x_prev: &'a [f64],
    pub x_prev2: &'a [f64],
    /// Anchor target positions at the predicted step, in encoding order.
    pub bc_targets: &'a [Vector3<f64>],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub inertial: f64,
    pub elastic: f64,
    pub external: f64,
    pub bc: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.inertial + self.elastic + self.external + self.bc
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self {
            inertial: w * self.inertial,
            elastic: w * self.elastic,
            external: w * self.external,
            bc: w * self.bc,
        }
    }

    pub fn add(&mut self, o: &Self) {
        self.inertial += o.inertial;
        self.elastic += o.elastic;
        self.external += o.external;
        self.bc += o.bc;
    }
}

/// Everything fixed while the integrator trains.
#[derive(Clone, Copy)]
pub struct SelfSupLoss<'a> {
    pub ae: &'a Autoencoder,
    pub object: &'a SimObject,
    pub params: &'a MaterialParams,
    pub dt: f64,
    /// Dirichlet penalty weight; `None` leaves the boundary term out, as for
    /// rods whose roots are placed exactly by the decoder.
    pub penalty: Option<f64>,
}

impl SelfSupLoss<'_> {
    /// Incremental potential and its gradient at absolute positions `x`.
    pub fn full_space(&self, x: &[f64], ctx: &LossContext) -> Result<(LossParts, Vec<f64>), LatentError> {
        let mass = &self.object.mass;
        let inertial = inertial_energy(x, ctx.x_prev, ctx.x_prev2, mass, self.dt, false)?;
        let elastic = elastic_energy(x, self.object, self.params, false)?;
        let external = gravity_energy(x, mass, &self.params.gravity(), false)?;
        let mut grad = inertial.gradient;
        for (g, (a, b)) in grad.iter_mut().zip(elastic.gradient.iter().zip(&external.gradient)) {
            *g += a + b;
        }
        let mut parts = LossParts {
            inertial: inertial.value,
            elastic: elastic.value,
            external: external.value,
            bc: 0.0,
        };
        if let Some(w) = self.penalty {
            let targets: Vec<(usize, Vector3<f64>)> =
                self.ae.encoding.anchors.iter().copied().zip(ctx.bc_targets.iter().copied()).collect();
            let bc = bc_penalty_energy(x, &targets, w, false)?;
            parts.bc = bc.value;
            for (g, b) in grad.iter_mut().zip(&bc.gradient) {
                *g += b;
            }
        }
        Ok((parts, grad))
    }

    /// Losses of a latent batch and their gradients with respect to the
    /// latents (one row per sample).
    pub fn batch(&self, z: &Array2<f64>, ctxs: &[LossContext]) -> Result<(Vec<LossParts>, Array2<f64>), LatentError> {
        let (codes, cache) = self.ae.decode_codes_cached(z)?;
        let mut code_grad = Array2::zeros(codes.raw_dim());
        let mut parts = Vec::with_capacity(ctxs.len());
        for (i, ctx) in ctxs.iter().enumerate() {
            let code = codes.row(i);
            let x = self.ae.encoding.decode(code.as_slice().expect("contiguous row"), ctx.bc_targets)?;
            let (p, g) = self.full_space(&x, ctx)?;
            parts.push(p);
            let gc = self.ae.encoding.pullback(&g);
            code_grad.row_mut(i).assign(&ndarray::Array1::from(gc));
        }
        Ok((parts, self.ae.latent_gradient(&cache, &code_grad)))
    }
}

/// Loss of one predicted latent with its gradient.
pub fn selfsup_loss(z_pred: &[f64], ctx: &LossContext, loss: &SelfSupLoss) -> Result<(LossParts, Vec<f64>), LatentError> {
    if z_pred.len() != loss.ae.latent_dim() {
        return Err(LatentError::ShapeMismatch {
            got: z_pred.len(),
            expected: loss.ae.latent_dim(),
        });
    }
    let z = Array2::from_shape_vec((1, z_pred.len()), z_pred.to_vec()).expect("row vector");
    let (mut parts, grad) = loss.batch(&z, std::slice::from_ref(ctx))?;
    Ok((parts.remove(0), grad.row(0).to_vec()))
}

/// Adds uniform noise in `[-scale * sd_d, scale * sd_d]` to both history
/// batches, where `sd_d` is the standard deviation of latent dimension `d`
/// over the rows of both batches together.
pub fn perturb_latents(
    z_prev: &Array2<f64>,
    z_prev2: &Array2<f64>,
    scale: f64,
    rng: &mut impl Rng,
) -> (Array2<f64>, Array2<f64>) {
    let both = ndarray::concatenate(Axis(0), &[z_prev.view(), z_prev2.view()]).expect("equal widths");
    let sd = both.std_axis(Axis(0), 0.0);
    let mut noisy = |z: &Array2<f64>| {
        let mut out = z.clone();
        for mut row in out.rows_mut() {
            for (v, s) in row.iter_mut().zip(&sd) {
                let u: f64 = rng.random_range(-1.0..=1.0);
                *v += u * scale * s;
            }
        }
        out
    };
    let a = noisy(z_prev);
    let b = noisy(z_prev2);
    (a, b)
}

/// `1 / max(|v|, BALANCE_EPS)` where `v` is the vertex-averaged velocity
/// between the two history frames.
pub fn balance_weight(x_prev: &[f64], x_prev2: &[f64], dt: f64) -> f64 {
    let n = (x_prev.len() / 3).max(1) as f64;
    let mut v = Vector3::zeros();
    for (a, b) in x_prev.chunks_exact(3).zip(x_prev2.chunks_exact(3)) {
        v += Vector3::new(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    }
    let speed = (v / (n * dt)).norm();
    1.0 / speed.max(BALANCE_EPS)
}
