//! Latent integrator `z_t = I(z_{t-1}, z_{t-2}, p_t, p_{t-1}, p_{t-2})` and
//! its self-supervised and supervised training loops.

use nalgebra::Vector3;
use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::batches;
use super::selfsup::{balance_weight, perturb_latents, LossContext, LossParts, SelfSupLoss};
use super::{meta_field, Autoencoder, EpochRecord, LatentError, TrainReport};
use crate::geometry::StateSequence;
use crate::neural::{AdamState, Checkpoint, Mlp, MlpSpec, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Train on perturbed histories in addition to the clean ones.
    pub noise: bool,
    /// Scale each sample loss by [`balance_weight`].
    pub balancing: bool,
    /// Noise half-width as a fraction of the batch standard deviation.
    pub noise_scale: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            epochs: 10_000,
            batch: 128,
            lr: 1e-4,
            seed: 0,
            noise: true,
            balancing: true,
            noise_scale: 0.1,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<(), LatentError> {
        if self.batch < 2 || !(self.lr > 0.0) || !(self.noise_scale >= 0.0) {
            return Err(LatentError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Integrator {
    pub net: Mlp,
    pub config: IntegratorConfig,
    pub latent_dim: usize,
    pub bc_dim: usize,
    pub z_mean: Vec<f64>,
    pub z_std: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub p_std: Vec<f64>,
}

fn moments(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let data: Vec<Vec<f64>> = rows.collect();
    let n = data.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in &data {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for r in &data {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std = std
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let s = s.sqrt();
            if s > 1e-12 * (1.0 + m.abs()) {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Integrator {
    pub fn input_dim(&self) -> usize {
        2 * self.latent_dim + 3 * self.bc_dim
    }

    /// Standardized network input for one step.
    pub fn input_row(&self, z1: &[f64], z2: &[f64], p0: &[f64], p1: &[f64], p2: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.input_dim());
        for z in [z1, z2] {
            row.extend(z.iter().zip(&self.z_mean).zip(&self.z_std).map(|((v, m), s)| (v - m) / s));
        }
        for p in [p0, p1, p2] {
            row.extend(p.iter().zip(&self.p_mean).zip(&self.p_std).map(|((v, m), s)| (v - m) / s));
        }
        row
    }

    fn inputs(&self, z1: &Array2<f64>, z2: &Array2<f64>, p: &Array2<f64>) -> Array2<f64> {
        let r = self.latent_dim;
        let mut x = Array2::zeros((z1.nrows(), self.input_dim()));
        let zm = Array1::from(self.z_mean.clone());
        let zs = Array1::from(self.z_std.clone());
        x.slice_mut(s![.., 0..r]).assign(&((z1 - &zm) / &zs));
        x.slice_mut(s![.., r..2 * r]).assign(&((z2 - &zm) / &zs));
        let pm = Array1::from(self.p_mean.clone());
        let ps = Array1::from(self.p_std.clone());
        let b = self.bc_dim;
        for k in 0..3 {
            let cols = s![.., 2 * r + k * b..2 * r + (k + 1) * b];
            x.slice_mut(cols).assign(&((&p.slice(s![.., k * b..(k + 1) * b]) - &pm) / &ps));
        }
        x
    }

    fn output(&self, y: &Array2<f64>) -> Array2<f64> {
        y * &Array1::from(self.z_std.clone()) + &Array1::from(self.z_mean.clone())
    }

    /// One integration step.
    pub fn step(&self, z1: &[f64], z2: &[f64], p0: &[f64], p1: &[f64], p2: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, self.input_dim()), self.input_row(z1, z2, p0, p1, p2)).expect("input row");
        self.output(&self.net.predict(&x)).row(0).to_vec()
    }

    /// Stored so that the inference copy can undo it.
    pub fn output_affine(&self) -> (&[f64], &[f64]) {
        (&self.z_std, &self.z_mean)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "latent_dim": self.latent_dim,
            "bc_dim": self.bc_dim,
            "spec": self.net.spec,
        });
        let mut c = Checkpoint::new("integrator", meta);
        c.push("z_mean", self.z_mean.clone());
        c.push("z_std", self.z_std.clone());
        c.push("p_mean", self.p_mean.clone());
        c.push("p_std", self.p_std.clone());
        c.push_mlp("net", &self.net);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, LatentError> {
        c.expect_kind("integrator")?;
        let spec: MlpSpec = meta_field(c, "spec")?;
        Ok(Self {
            net: c.take_mlp("net", spec)?,
            config: meta_field(c, "config")?,
            latent_dim: meta_field(c, "latent_dim")?,
            bc_dim: meta_field(c, "bc_dim")?,
            z_mean: c.blob("z_mean")?.to_vec(),
            z_std: c.blob("z_std")?.to_vec(),
            p_mean: c.blob("p_mean")?.to_vec(),
            p_std: c.blob("p_std")?.to_vec(),
        })
    }
}

/// Index of a training triple `(t - 2, t - 1, t)` in sequence `seq`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub seq: usize,
    pub t: usize,
}

/// Training sequences with their ground-truth latents cached by the frozen
/// encoder, and the decoded histories the loss sees.
pub struct TrainingData {
    pub latents: Vec<Array2<f64>>,
    pub params: Vec<Vec<Vec<f64>>>,
    pub bc: Vec<Vec<Vec<Vector3<f64>>>>,
    pub decoded: Vec<Vec<Vec<f64>>>,
    pub triples: Vec<Triple>,
    pub bc_dim: usize,
}

impl TrainingData {
    pub fn new(ae: &Autoencoder, sequences: &[StateSequence]) -> Result<Self, LatentError> {
        let mut data = Self {
            latents: Vec::new(),
            params: Vec::new(),
            bc: Vec::new(),
            decoded: Vec::new(),
            triples: Vec::new(),
            bc_dim: sequences.first().map_or(0, |s| s.bc_dim),
        };
        for (k, seq) in sequences.iter().enumerate() {
            let xs = seq.positions();
            let z = ae.encode_frames(&xs);
            let bc: Vec<Vec<Vector3<f64>>> = xs.iter().map(|x| ae.encoding.bc_values(x)).collect();
            let codes = ae.decode_codes(&z);
            let decoded = codes
                .rows()
                .into_iter()
                .zip(&bc)
                .map(|(c, b)| ae.encoding.decode(c.as_slice().expect("contiguous row"), b))
                .collect::<Result<Vec<_>, _>>()?;
            data.latents.push(z);
            data.params.push(seq.frames.iter().map(|f| f.p.clone()).collect());
            data.bc.push(bc);
            data.decoded.push(decoded);
            data.triples.extend((2..seq.len()).map(|t| Triple { seq: k, t }));
        }
        if data.triples.is_empty() {
            return Err(LatentError::EmptyDataset);
        }
        Ok(data)
    }

    fn z(&self, seq: usize, t: usize) -> Vec<f64> {
        self.latents[seq].row(t).to_vec()
    }

    fn gather(&self, idx: &[&Triple]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let r = self.latents[0].ncols();
        let b = self.bc_dim;
        let mut z1 = Array2::zeros((idx.len(), r));
        let mut z2 = Array2::zeros((idx.len(), r));
        let mut p = Array2::zeros((idx.len(), 3 * b));
        for (i, tr) in idx.iter().enumerate() {
            z1.row_mut(i).assign(&self.latents[tr.seq].row(tr.t - 1));
            z2.row_mut(i).assign(&self.latents[tr.seq].row(tr.t - 2));
            for k in 0..3 {
                for (j, v) in self.params[tr.seq][tr.t - k].iter().enumerate() {
                    p[(i, k * b + j)] = *v;
                }
            }
        }
        (z1, z2, p)
    }

    fn fresh_integrator(&self, cfg: &IntegratorConfig) -> Result<Integrator, LatentError> {
        let r = self.latents[0].ncols();
        let (z_mean, z_std) = moments(self.latents.iter().flat_map(|z| z.rows().into_iter().map(|v| v.to_vec())), r);
        let (p_mean, p_std) = moments(self.params.iter().flatten().cloned(), self.bc_dim);
        let spec = MlpSpec::plain(2 * r + 3 * self.bc_dim, cfg.hidden.clone(), r);
        Ok(Integrator {
            net: Mlp::new(spec, cfg.seed)?,
            config: cfg.clone(),
            latent_dim: r,
            bc_dim: self.bc_dim,
            z_mean,
            z_std,
            p_mean,
            p_std,
        })
    }
}

fn finish(report: &mut TrainReport, clock: std::time::Instant, record: EpochRecord) -> Result<(), LatentError> {
    let finite = record.total.is_finite();
    let epoch = record.epoch;
    report.epochs.push(record);
    report.wall_time_s = clock.elapsed().as_secs_f64();
    if !finite {
        return Err(LatentError::DivergedLoss {
            epoch,
            report: Box::new(report.clone()),
        });
    }
    Ok(())
}

/// Decodes latent rows to absolute positions with per-row anchor values.
fn decode_rows(ae: &Autoencoder, z: &Array2<f64>, bc: &[&[Vector3<f64>]]) -> Result<Vec<Vec<f64>>, LatentError> {
    let codes = ae.decode_codes(z);
    codes
        .rows()
        .into_iter()
        .zip(bc)
        .map(|(c, b)| ae.encoding.decode(c.as_slice().expect("contiguous row"), b))
        .collect()
}

/// Self-supervised training: the incremental potential of the decoded
/// prediction is the loss, the autoencoder stays frozen.
pub fn train_integrator_selfsup(
    data: &TrainingData,
    loss: &SelfSupLoss,
    cfg: &IntegratorConfig,
) -> Result<(Integrator, TrainReport), LatentError> {
    cfg.validate()?;
    let ae = loss.ae;
    let mut integ = data.fresh_integrator(cfg)?;
    let (mut report, clock) = TrainReport::start("integrator-selfsup", cfg.seed);
    let mut opt = AdamState::new(&integ.net.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.triples.len()).collect();
    let z_std = Array1::from(integ.z_std.clone());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let mut count = 0usize;
        for idx in batches(&order, cfg.batch) {
            let trip: Vec<&Triple> = idx.iter().map(|&i| &data.triples[i]).collect();
            let (z1, z2, p) = data.gather(&trip);
            let targets: Vec<&[Vector3<f64>]> = trip.iter().map(|t| data.bc[t.seq][t.t].as_slice()).collect();
            let mut inputs = vec![(z1.clone(), z2.clone())];
            let mut hist: Vec<(Vec<&[f64]>, Vec<&[f64]>)> = vec![(
                trip.iter().map(|t| data.decoded[t.seq][t.t - 1].as_slice()).collect(),
                trip.iter().map(|t| data.decoded[t.seq][t.t - 2].as_slice()).collect(),
            )];
            let noisy_hist;
            if cfg.noise {
                let (n1, n2) = perturb_latents(&z1, &z2, cfg.noise_scale, &mut noise_rng);
                let bc1: Vec<&[Vector3<f64>]> = trip.iter().map(|t| data.bc[t.seq][t.t - 1].as_slice()).collect();
                let bc2: Vec<&[Vector3<f64>]> = trip.iter().map(|t| data.bc[t.seq][t.t - 2].as_slice()).collect();
                noisy_hist = (decode_rows(ae, &n1, &bc1)?, decode_rows(ae, &n2, &bc2)?);
                hist.push((
                    noisy_hist.0.iter().map(Vec::as_slice).collect(),
                    noisy_hist.1.iter().map(Vec::as_slice).collect(),
                ));
                inputs.push((n1, n2));
            }
            let views: Vec<Array2<f64>> = inputs.iter().map(|(a, b)| integ.inputs(a, b, &p)).collect();
            let x = ndarray::concatenate(Axis(0), &views.iter().map(|v| v.view()).collect::<Vec<_>>())
                .expect("equal widths");
            let (y, cache) = integ.net.forward(&x, Mode::Train)?;
            let z_pred = integ.output(&y);
            let mut ctxs = Vec::with_capacity(x.nrows());
            let mut weights = Vec::with_capacity(x.nrows());
            for (h1, h2) in &hist {
                for i in 0..trip.len() {
                    ctxs.push(LossContext {
                        x_prev: h1[i],
                        x_prev2: h2[i],
                        bc_targets: targets[i],
                    });
                    weights.push(if cfg.balancing {
                        balance_weight(h1[i], h2[i], loss.dt)
                    } else {
                        1.0
                    });
                }
            }
            let (parts, gz) = loss.batch(&z_pred, &ctxs)?;
            let n = ctxs.len() as f64;
            let mut gy = gz * &z_std;
            for (mut row, w) in gy.rows_mut().into_iter().zip(&weights) {
                row *= *w / n;
            }
            for (p, w) in parts.iter().zip(&weights) {
                sum.add(&p.scaled(*w));
            }
            count += ctxs.len();
            let mut grads = integ.net.zero_grads();
            integ.net.backward(&cache, &gy, &mut grads);
            opt.update(&mut integ.net.params, &grads);
        }
        let mean = sum.scaled(1.0 / count as f64);
        finish(
            &mut report,
            clock,
            EpochRecord {
                epoch,
                total: mean.total(),
                inertial: mean.inertial,
                elastic: mean.elastic,
                external: mean.external,
                bc: mean.bc,
                wall_time_s: clock.elapsed().as_secs_f64(),
            },
        )?;
    }
    Ok((integ, report))
}

/// Supervised baseline: squared latent error against the cached ground
/// truth. Perturbed histories have no ground-truth successor, so the noise
/// and balancing flags do not apply.
pub fn train_integrator_supervised(
    data: &TrainingData,
    cfg: &IntegratorConfig,
) -> Result<(Integrator, TrainReport), LatentError> {
    cfg.validate()?;
    let mut integ = data.fresh_integrator(cfg)?;
    let (mut report, clock) = TrainReport::start("integrator-supervised", cfg.seed);
    let mut opt = AdamState::new(&integ.net.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.triples.len()).collect();
    let z_std = Array1::from(integ.z_std.clone());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in batches(&order, cfg.batch) {
            let trip: Vec<&Triple> = idx.iter().map(|&i| &data.triples[i]).collect();
            let (z1, z2, p) = data.gather(&trip);
            let gt = Array2::from_shape_fn((trip.len(), integ.latent_dim), |(i, j)| {
                data.latents[trip[i].seq][(trip[i].t, j)]
            });
            let x = integ.inputs(&z1, &z2, &p);
            let (y, cache) = integ.net.forward(&x, Mode::Train)?;
            let diff = integ.output(&y) - &gt;
            let n = trip.len() as f64;
            total += diff.mapv(|v| v * v).sum();
            let gy = (diff * (2.0 / n)) * &z_std;
            let mut grads = integ.net.zero_grads();
            integ.net.backward(&cache, &gy, &mut grads);
            opt.update(&mut integ.net.params, &grads);
        }
        let total = total / data.triples.len() as f64;
        finish(
            &mut report,
            clock,
            EpochRecord {
                epoch,
                total,
                wall_time_s: clock.elapsed().as_secs_f64(),
                ..Default::default()
            },
        )?;
    }
    Ok((integ, report))
}

/// Ground-truth latent of a cached frame, for callers that start rollouts.
pub fn cached_latent(data: &TrainingData, seq: usize, t: usize) -> Vec<f64> {
    data.z(seq, t)
}
