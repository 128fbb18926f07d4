//! PCA-initialized residual autoencoder over relative-encoded frames.

use nalgebra::{DMatrix, Vector3};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{meta_field, EpochRecord, LatentError, RelativeEncoding, TrainReport};
use crate::neural::{pca_fit, AdamState, Checkpoint, ForwardCache, Mlp, MlpSpec, Mode, PcaBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub latent_dim: usize,
    /// Width of the PCA layers; capped by the code size and frame count.
    pub pca_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl AeConfig {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            pca_dim: 50,
            hidden: vec![128, 128, 128],
            epochs: 20_000,
            batch: 500,
            lr: 1e-4,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), LatentError> {
        if self.latent_dim == 0 || self.pca_dim == 0 || self.batch < 2 || !(self.lr > 0.0) {
            return Err(LatentError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoding: RelativeEncoding,
    pub config: AeConfig,
    /// Per-coordinate mean of the training codes.
    pub mean: Vec<f64>,
    /// Global standard deviation of the centered training codes.
    pub scale: f64,
    pub pca: PcaBasis,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

fn rows(data: &[Vec<f64>]) -> Array2<f64> {
    let d = data.first().map_or(0, Vec::len);
    Array2::from_shape_fn((data.len(), d), |(i, j)| data[i][j])
}

fn specs(code_dim: usize, k: usize, cfg: &AeConfig) -> (MlpSpec, MlpSpec) {
    let mut enc = MlpSpec::plain(code_dim, cfg.hidden.clone(), cfg.latent_dim);
    enc.residual = true;
    enc.batchnorm = true;
    enc.input_projection = Some(k);
    enc.linear_shortcut = true;
    let mut dec = MlpSpec::plain(cfg.latent_dim, cfg.hidden.clone(), code_dim);
    dec.residual = true;
    dec.batchnorm = true;
    dec.output_expansion = Some(k);
    dec.linear_shortcut = true;
    (enc, dec)
}

impl Autoencoder {
    /// Fresh network with normalization and PCA layers fitted to `codes`.
    fn initialize(encoding: RelativeEncoding, codes: &[Vec<f64>], cfg: &AeConfig) -> Result<Self, LatentError> {
        let n = codes.len();
        let d = encoding.code_dim();
        let mut mean = vec![0.0; d];
        for c in codes {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v / n as f64;
            }
        }
        let var: f64 = codes
            .iter()
            .flat_map(|c| c.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)))
            .sum::<f64>()
            / (n * d) as f64;
        let magnitude = mean.iter().fold(1.0f64, |a, m| a.max(m.abs()));
        let scale = var.sqrt().max(1e-9 * magnitude);
        let u = DMatrix::from_fn(n, d, |i, j| (codes[i][j] - mean[j]) / scale);
        let k = cfg.pca_dim.min(d).min(n);
        let pca = pca_fit(&u, k)?;
        let (enc_spec, dec_spec) = specs(d, k, cfg);
        let mut encoder = Mlp::new(enc_spec, cfg.seed)?;
        let mut decoder = Mlp::new(dec_spec, cfg.seed.wrapping_add(1))?;
        let basis = Array2::from_shape_fn((d, k), |(i, j)| pca.basis[(i, j)]);
        let pmean = Array2::from_shape_fn((1, d), |(_, j)| pca.mean[j]);
        let (w, b) = encoder.first_dense();
        encoder.params[b] = -pmean.dot(&basis);
        encoder.params[w] = basis.clone();
        let (w, b) = decoder.last_dense();
        decoder.params[w] = basis.t().to_owned();
        decoder.params[b] = pmean;
        Ok(Self {
            encoding,
            config: cfg.clone(),
            mean,
            scale,
            pca,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn code_dim(&self) -> usize {
        self.encoding.code_dim()
    }

    fn normalize(&self, code: &[f64]) -> Vec<f64> {
        code.iter().zip(&self.mean).map(|(c, m)| (c - m) / self.scale).collect()
    }

    fn denormalize(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut out = u * self.scale;
        for mut row in out.rows_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        out
    }

    /// Latents of absolute frames, one row per frame.
    pub fn encode_frames(&self, xs: &[&[f64]]) -> Array2<f64> {
        let u: Vec<Vec<f64>> = xs.iter().map(|x| self.normalize(&self.encoding.encode(x))).collect();
        self.encoder.predict(&rows(&u))
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.encode_frames(&[x]).row(0).to_vec()
    }

    /// Relative codes of a latent batch.
    pub fn decode_codes(&self, z: &Array2<f64>) -> Array2<f64> {
        self.denormalize(&self.decoder.predict(z))
    }

    /// Relative codes with the cache needed by [`Self::latent_gradient`].
    pub fn decode_codes_cached(&self, z: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), LatentError> {
        let (u, cache) = self.decoder.forward_eval(z)?;
        Ok((self.denormalize(&u), cache))
    }

    /// Pulls code-space gradients (one row per sample) back to the latents.
    pub fn latent_gradient(&self, cache: &ForwardCache, code_grad: &Array2<f64>) -> Array2<f64> {
        self.decoder.input_gradient(cache, &(code_grad * self.scale))
    }

    /// Absolute positions of latent `z` with anchor positions `bc`.
    pub fn decode(&self, z: &[f64], bc: &[Vector3<f64>]) -> Result<Vec<f64>, LatentError> {
        let za = Array2::from_shape_vec((1, z.len()), z.to_vec()).map_err(|_| LatentError::ShapeMismatch {
            got: z.len(),
            expected: self.latent_dim(),
        })?;
        if z.len() != self.latent_dim() {
            return Err(LatentError::ShapeMismatch {
                got: z.len(),
                expected: self.latent_dim(),
            });
        }
        let code = self.decode_codes(&za);
        self.encoding.decode(code.row(0).as_slice().expect("contiguous row"), bc)
    }

    /// Encode then decode with the frame's own boundary values.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>, LatentError> {
        self.decode(&self.encode(x), &self.encoding.bc_values(x))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "encoding": self.encoding,
            "config": self.config,
            "scale": self.scale,
            "pca_k": self.pca.k(),
            "pca_rank_deficient": self.pca.rank_deficient,
            "encoder_spec": self.encoder.spec,
            "decoder_spec": self.decoder.spec,
        });
        let mut c = Checkpoint::new("autoencoder", meta);
        c.push("mean", self.mean.clone());
        c.push("pca.mean", self.pca.mean.as_slice().to_vec());
        c.push("pca.basis", self.pca.basis.as_slice().to_vec());
        c.push("pca.singular_values", self.pca.singular_values.clone());
        c.push_mlp("encoder", &self.encoder);
        c.push_mlp("decoder", &self.decoder);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, LatentError> {
        c.expect_kind("autoencoder")?;
        let encoding: RelativeEncoding = meta_field(c, "encoding")?;
        let config: AeConfig = meta_field(c, "config")?;
        let scale: f64 = meta_field(c, "scale")?;
        let k: usize = meta_field(c, "pca_k")?;
        let rank_deficient: bool = meta_field(c, "pca_rank_deficient")?;
        let enc_spec: MlpSpec = meta_field(c, "encoder_spec")?;
        let dec_spec: MlpSpec = meta_field(c, "decoder_spec")?;
        let d = encoding.code_dim();
        let basis = c.blob("pca.basis")?;
        if basis.len() != d * k {
            return Err(LatentError::ShapeMismatch {
                got: basis.len(),
                expected: d * k,
            });
        }
        let pca = PcaBasis {
            mean: nalgebra::DVector::from_column_slice(c.blob("pca.mean")?),
            basis: DMatrix::from_column_slice(d, k, basis),
            singular_values: c.blob("pca.singular_values")?.to_vec(),
            rank_deficient,
        };
        Ok(Self {
            encoding,
            config,
            mean: c.blob("mean")?.to_vec(),
            scale,
            pca,
            encoder: c.take_mlp("encoder", enc_spec)?,
            decoder: c.take_mlp("decoder", dec_spec)?,
        })
    }
}

/// Batches of a shuffled index list; a trailing singleton joins the previous
/// batch so batch normalization always sees at least two rows.
pub(crate) fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

pub(crate) fn select_rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Trains on absolute frames `frames`, minimizing the mean squared error of
/// the normalized relative codes.
pub fn train_autoencoder(
    frames: &[&[f64]],
    encoding: RelativeEncoding,
    cfg: &AeConfig,
) -> Result<(Autoencoder, TrainReport), LatentError> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(LatentError::EmptyDataset);
    }
    let codes: Vec<Vec<f64>> = frames.iter().map(|x| encoding.encode(x)).collect();
    let mut ae = Autoencoder::initialize(encoding, &codes, cfg)?;
    let u: Vec<Vec<f64>> = codes.iter().map(|c| ae.normalize(c)).collect();
    let data = rows(&u);
    let (mut report, clock) = TrainReport::start("autoencoder", cfg.seed);
    let mut opt_e = AdamState::new(&ae.encoder.params, cfg.lr);
    let mut opt_d = AdamState::new(&ae.decoder.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in batches(&order, cfg.batch) {
            let x = select_rows(&data, idx);
            let (z, enc_cache) = ae.encoder.forward(&x, Mode::Train)?;
            let (y, dec_cache) = ae.decoder.forward(&z, Mode::Train)?;
            let diff = &y - &x;
            let count = diff.len() as f64;
            let loss = diff.mapv(|v| v * v).sum() / count;
            total += loss * idx.len() as f64;
            let mut g_dec = ae.decoder.zero_grads();
            let dz = ae.decoder.backward(&dec_cache, &(diff * (2.0 / count)), &mut g_dec);
            let mut g_enc = ae.encoder.zero_grads();
            ae.encoder.backward(&enc_cache, &dz, &mut g_enc);
            opt_d.update(&mut ae.decoder.params, &g_dec);
            opt_e.update(&mut ae.encoder.params, &g_enc);
        }
        let total = total / data.nrows() as f64;
        report.epochs.push(EpochRecord {
            epoch,
            total,
            wall_time_s: clock.elapsed().as_secs_f64(),
            ..Default::default()
        });
        if !total.is_finite() {
            report.wall_time_s = clock.elapsed().as_secs_f64();
            return Err(LatentError::DivergedLoss {
                epoch,
                report: Box::new(report),
            });
        }
    }
    report.wall_time_s = clock.elapsed().as_secs_f64();
    Ok((ae, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(latent: usize, epochs: usize) -> AeConfig {
        AeConfig {
            hidden: vec![32, 32],
            epochs,
            ..AeConfig::new(latent)
        }
    }

    #[test]
    fn constant_dataset_reconstructs() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let frames = vec![x.as_slice(); 8];
        let enc = RelativeEncoding::dirichlet_mean(10, &[0]);
        let (ae, _) = train_autoencoder(&frames, enc, &cfg(2, 200)).unwrap();
        let y = ae.reconstruct(&x).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..20).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let frames: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let enc = RelativeEncoding::dirichlet_mean(4, &[0]);
        let (a, ra) = train_autoencoder(&frames, enc.clone(), &cfg(2, 5)).unwrap();
        let (b, rb) = train_autoencoder(&frames, enc, &cfg(2, 5)).unwrap();
        assert_eq!(ra.losses(), rb.losses());
        assert_eq!(a.decoder.params, b.decoder.params);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<Vec<f64>> = (0..10).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let frames: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let enc = RelativeEncoding::dirichlet_mean(4, &[1, 2]);
        let (ae, _) = train_autoencoder(&frames, enc, &cfg(3, 3)).unwrap();
        let back = Autoencoder::from_checkpoint(&ae.to_checkpoint()).unwrap();
        assert_eq!(back.reconstruct(&data[0]).unwrap(), ae.reconstruct(&data[0]).unwrap());
    }

    #[test]
    fn singleton_tail_batch_is_merged() {
        let order: Vec<usize> = (0..11).collect();
        let b = batches(&order, 5);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].len(), 6);
    }
}
