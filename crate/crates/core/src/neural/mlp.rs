use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{swish, swish_grad, NeuralError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Swish,
}

/// Layer layout of a multilayer perceptron.
///
/// The body maps `input_dim` (or `input_projection` when set) through the
/// hidden widths to `output_dim` (or `output_expansion` when set). With
/// `residual`, every hidden width equal to its predecessor becomes a residual
/// block `Linear, BN, Swish, Linear, BN, +skip, Swish`. The optional
/// projection and expansion are bare linear maps at either end. The body
/// ends with the expansion layer when one is set, else with the output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub residual: bool,
    pub batchnorm: bool,
    #[serde(default)]
    pub input_projection: Option<usize>,
    #[serde(default)]
    pub output_expansion: Option<usize>,
    /// Adds the leading coordinates of the body input to the body output
    /// (truncating or zero-padding) and zero-initializes the body's last
    /// dense layer, so the network starts as the linear end layers alone.
    #[serde(default)]
    pub linear_shortcut: bool,
}

impl MlpSpec {
    pub fn plain(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Swish,
            residual: false,
            batchnorm: false,
            input_projection: None,
            output_expansion: None,
            linear_shortcut: false,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let dims = [self.input_dim, self.output_dim];
        let extra = self.input_projection.iter().chain(&self.output_expansion);
        if dims.iter().chain(&self.hidden).chain(extra).any(|&d| d == 0) {
            return Err(NeuralError::InvalidSpec("layer widths must be positive".into()));
        }
        if self.residual && !self.batchnorm {
            return Err(NeuralError::InvalidSpec("residual blocks include batch normalization".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layer {
    /// Parameter indices of the weight (in x out) and bias (1 x out).
    Dense { w: usize, b: usize },
    BatchNorm { gamma: usize, beta: usize, stats: usize },
    Swish,
    Residual(Vec<Layer>),
    /// `inner(x)` plus the leading coordinates of `x`.
    Shortcut(Vec<Layer>),
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A multilayer perceptron with parameters kept as a flat list of matrices
/// in declaration order (biases and BN scales are `1 x n`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub(crate) layers: Vec<Layer>,
    pub params: Vec<Array2<f64>>,
    pub bn: Vec<BnStats>,
}

#[derive(Clone, Debug)]
enum Cache {
    Dense { input: Array2<f64> },
    BatchNorm { x_hat: Array2<f64>, inv_std: Array1<f64>, train: bool },
    Swish { input: Array2<f64> },
    Residual { inner: Vec<Cache>, sum: Array2<f64> },
    Shortcut { inner: Vec<Cache>, input_width: usize },
}

/// Intermediates of one forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    caches: Vec<Cache>,
}

/// `a` plus the first `min` columns of `b`, where `min` is the smaller width.
fn add_leading(mut a: Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let k = a.ncols().min(b.ncols());
    let mut lead = a.slice_mut(ndarray::s![.., 0..k]);
    lead += &b.slice(ndarray::s![.., 0..k]);
    a
}

struct Builder {
    layers: Vec<Layer>,
    params: Vec<Array2<f64>>,
    bn: Vec<BnStats>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn dense(&mut self, fan_in: usize, fan_out: usize) -> Layer {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        self.params.push(w);
        self.params.push(Array2::zeros((1, fan_out)));
        Layer::Dense {
            w: self.params.len() - 2,
            b: self.params.len() - 1,
        }
    }

    fn batchnorm(&mut self, n: usize) -> Layer {
        self.params.push(Array2::ones((1, n)));
        self.params.push(Array2::zeros((1, n)));
        self.bn.push(BnStats {
            mean: Array1::zeros(n),
            var: Array1::ones(n),
            momentum: 0.9,
            eps: 1e-5,
        });
        Layer::BatchNorm {
            gamma: self.params.len() - 2,
            beta: self.params.len() - 1,
            stats: self.bn.len() - 1,
        }
    }
}

impl Mlp {
    /// Builds the network with uniform Kaiming initialization from `seed`.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self, NeuralError> {
        spec.validate()?;
        let mut b = Builder {
            layers: Vec::new(),
            params: Vec::new(),
            bn: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut width = spec.input_dim;
        if let Some(k) = spec.input_projection {
            let l = b.dense(width, k);
            b.layers.push(l);
            width = k;
        }
        let head = b.layers.len();
        for &h in &spec.hidden {
            if spec.residual && h == width && !b.layers.is_empty() {
                let inner = vec![b.dense(h, h), b.batchnorm(h), Layer::Swish, b.dense(h, h), b.batchnorm(h)];
                b.layers.push(Layer::Residual(inner));
            } else {
                let l = b.dense(width, h);
                b.layers.push(l);
                if spec.batchnorm {
                    let l = b.batchnorm(h);
                    b.layers.push(l);
                }
                b.layers.push(Layer::Swish);
            }
            width = h;
        }
        let body_out = spec.output_expansion.unwrap_or(spec.output_dim);
        let l = b.dense(width, body_out);
        b.layers.push(l);
        if spec.linear_shortcut {
            if let Some(Layer::Dense { w, b: bias }) = b.layers.last() {
                b.params[*w].fill(0.0);
                b.params[*bias].fill(0.0);
            }
            let body = b.layers.split_off(head);
            b.layers.push(Layer::Shortcut(body));
        }
        if spec.output_expansion.is_some() {
            let l = b.dense(body_out, spec.output_dim);
            b.layers.push(l);
        }
        Ok(Self {
            spec,
            layers: b.layers,
            params: b.params,
            bn: b.bn,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect()
    }

    /// Indices of the first and last dense layers' (weight, bias) parameters.
    pub fn first_dense(&self) -> (usize, usize) {
        match self.layers.first() {
            Some(Layer::Dense { w, b }) => (*w, *b),
            _ => unreachable!("networks start with a dense layer"),
        }
    }

    pub fn last_dense(&self) -> (usize, usize) {
        match self.layers.last() {
            Some(Layer::Dense { w, b }) => (*w, *b),
            _ => unreachable!("networks end with a dense layer"),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
        if x.ncols() != self.spec.input_dim {
            return Err(NeuralError::ShapeMismatch {
                got: x.ncols(),
                expected: self.spec.input_dim,
            });
        }
        if mode == Mode::Train && self.spec.batchnorm && x.nrows() < 2 {
            return Err(NeuralError::BatchTooSmall(x.nrows()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut updates = Vec::new();
        let out = self.run(&self.layers, x.clone(), mode, &mut caches, &mut updates);
        for (i, mean, var) in updates {
            let s = &mut self.bn[i];
            s.mean = &s.mean * s.momentum + &mean * (1.0 - s.momentum);
            s.var = &s.var * s.momentum + &var * (1.0 - s.momentum);
        }
        Ok((out, ForwardCache { caches }))
    }

    /// Eval-mode forward pass that keeps the cache for a backward pass.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
        if x.ncols() != self.spec.input_dim {
            return Err(NeuralError::ShapeMismatch {
                got: x.ncols(),
                expected: self.spec.input_dim,
            });
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = self.run(&self.layers, x.clone(), Mode::Eval, &mut caches, &mut Vec::new());
        Ok((out, ForwardCache { caches }))
    }

    /// Eval-mode forward pass without a cache.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.spec.input_dim, "input width");
        let mut h = x.clone();
        for l in &self.layers {
            h = self.apply_eval(l, h);
        }
        h
    }

    fn apply_eval(&self, layer: &Layer, x: Array2<f64>) -> Array2<f64> {
        match layer {
            Layer::Dense { w, b } => x.dot(&self.params[*w]) + &self.params[*b],
            Layer::BatchNorm { gamma, beta, stats } => {
                let s = &self.bn[*stats];
                let inv = s.var.mapv(|v| 1.0 / (v + s.eps).sqrt());
                let x_hat = (x - &s.mean) * &inv;
                x_hat * &self.params[*gamma] + &self.params[*beta]
            }
            Layer::Swish => x.mapv(swish),
            Layer::Residual(inner) => {
                let mut h = x.clone();
                for l in inner {
                    h = self.apply_eval(l, h);
                }
                (h + x).mapv(swish)
            }
            Layer::Shortcut(inner) => {
                let mut h = x.clone();
                for l in inner {
                    h = self.apply_eval(l, h);
                }
                add_leading(h, &x)
            }
        }
    }

    fn run(
        &self,
        layers: &[Layer],
        x: Array2<f64>,
        mode: Mode,
        caches: &mut Vec<Cache>,
        updates: &mut Vec<(usize, Array1<f64>, Array1<f64>)>,
    ) -> Array2<f64> {
        let mut h = x;
        for l in layers {
            h = match l {
                Layer::Dense { w, b } => {
                    let out = h.dot(&self.params[*w]) + &self.params[*b];
                    caches.push(Cache::Dense { input: h });
                    out
                }
                Layer::BatchNorm { gamma, beta, stats } => {
                    let train = mode == Mode::Train;
                    let s = &self.bn[*stats];
                    let (mean, var) = if train {
                        let n = h.nrows() as f64;
                        let mean = h.mean_axis(Axis(0)).expect("nonempty batch");
                        let var = (&h - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / n;
                        updates.push((*stats, mean.clone(), &var * (n / (n - 1.0))));
                        (mean, var)
                    } else {
                        (s.mean.clone(), s.var.clone())
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + s.eps).sqrt());
                    let x_hat = (h - &mean) * &inv_std;
                    let out = &x_hat * &self.params[*gamma] + &self.params[*beta];
                    caches.push(Cache::BatchNorm { x_hat, inv_std, train });
                    out
                }
                Layer::Swish => {
                    let out = h.mapv(swish);
                    caches.push(Cache::Swish { input: h });
                    out
                }
                Layer::Residual(inner) => {
                    let mut inner_caches = Vec::with_capacity(inner.len());
                    let body = self.run(inner, h.clone(), mode, &mut inner_caches, updates);
                    let sum = body + h;
                    let out = sum.mapv(swish);
                    caches.push(Cache::Residual {
                        inner: inner_caches,
                        sum,
                    });
                    out
                }
                Layer::Shortcut(inner) => {
                    let mut inner_caches = Vec::with_capacity(inner.len());
                    let body = self.run(inner, h.clone(), mode, &mut inner_caches, updates);
                    let out = add_leading(body, &h);
                    caches.push(Cache::Shortcut {
                        inner: inner_caches,
                        input_width: h.ncols(),
                    });
                    out
                }
            };
        }
        h
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` and returns
    /// the gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Array2<f64>, grads: &mut [Array2<f64>]) -> Array2<f64> {
        self.back(&self.layers, &cache.caches, output_grad.clone(), Some(grads))
    }

    /// Reverse pass for the input gradient only.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Array2<f64> {
        self.back(&self.layers, &cache.caches, output_grad.clone(), None)
    }

    fn back(
        &self,
        layers: &[Layer],
        caches: &[Cache],
        grad: Array2<f64>,
        mut grads: Option<&mut [Array2<f64>]>,
    ) -> Array2<f64> {
        let mut g = grad;
        for (l, c) in layers.iter().zip(caches).rev() {
            g = match (l, c) {
                (Layer::Dense { w, b }, Cache::Dense { input }) => {
                    if let Some(grads) = grads.as_deref_mut() {
                        grads[*w] += &input.t().dot(&g);
                        grads[*b] += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                    g.dot(&self.params[*w].t())
                }
                (Layer::BatchNorm { gamma, beta, .. }, Cache::BatchNorm { x_hat, inv_std, train }) => {
                    if let Some(grads) = grads.as_deref_mut() {
                        grads[*gamma] += &(&g * x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        grads[*beta] += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                    let dx_hat = &g * &self.params[*gamma];
                    if *train {
                        let n = g.nrows() as f64;
                        let sum = dx_hat.sum_axis(Axis(0));
                        let dot = (&dx_hat * x_hat).sum_axis(Axis(0));
                        ((dx_hat * n - &sum) - x_hat * &dot) * &(inv_std / n)
                    } else {
                        dx_hat * inv_std
                    }
                }
                (Layer::Swish, Cache::Swish { input }) => g * &input.mapv(swish_grad),
                (Layer::Residual(inner), Cache::Residual { inner: ic, sum }) => {
                    let gs = g * &sum.mapv(swish_grad);
                    let gb = self.back(inner, ic, gs.clone(), grads.as_deref_mut());
                    gb + gs
                }
                (Layer::Shortcut(inner), Cache::Shortcut { inner: ic, input_width }) => {
                    let gb = self.back(inner, ic, g.clone(), grads.as_deref_mut());
                    let skip = Array2::zeros((g.nrows(), *input_width));
                    gb + add_leading(skip, &g)
                }
                _ => unreachable!("cache does not match layer"),
            };
        }
        g
    }

    /// Running statistics flattened as `[mean..., var...]` per BN layer.
    pub fn bn_state(&self) -> Vec<f64> {
        self.bn.iter().flat_map(|s| s.mean.iter().chain(s.var.iter()).copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_bn_state(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        let need: usize = self.bn.iter().map(|s| 2 * s.mean.len()).sum();
        if flat.len() != need {
            return Err(NeuralError::ShapeMismatch {
                got: flat.len(),
                expected: need,
            });
        }
        let mut k = 0;
        for s in &mut self.bn {
            let n = s.mean.len();
            s.mean = Array1::from(flat[k..k + n].to_vec());
            s.var = Array1::from(flat[k + n..k + 2 * n].to_vec());
            k += 2 * n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Scalar test loss `sum(out * proj)` and its FD gradient check.
    fn check_gradients(spec: MlpSpec, mode: Mode) {
        let mut net = Mlp::new(spec, 3).unwrap();
        // non-trivial BN state and parameters
        for (i, p) in net.params.iter_mut().enumerate() {
            p.mapv_inplace(|v| v + 0.05 * ((i as f64) + v).sin());
        }
        for s in &mut net.bn {
            s.mean.mapv_inplace(|_| 0.1);
            s.var.mapv_inplace(|_| 1.7);
        }
        let x = batch(5, net.input_dim(), 11);
        let proj = batch(5, net.output_dim(), 12);
        let loss = |n: &Mlp, x: &Array2<f64>| {
            let mut n = n.clone();
            let (y, _) = n.forward(x, mode).unwrap();
            (&y * &proj).sum()
        };
        let mut grads = net.zero_grads();
        let mut work = net.clone();
        let (_, cache) = work.forward(&x, mode).unwrap();
        let gx = work.backward(&cache, &proj, &mut grads);
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for pi in 0..net.params.len() {
            for j in 0..net.params[pi].len() {
                let mut a = net.clone();
                a.params[pi].as_slice_mut().unwrap()[j] += h;
                let mut b = net.clone();
                b.params[pi].as_slice_mut().unwrap()[j] -= h;
                let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
                let an = grads[pi].as_slice().unwrap()[j];
                num += (fd - an).powi(2);
                den += fd * fd;
            }
        }
        assert!((num / den).sqrt() < 1e-4, "weights: {}", (num / den).sqrt());
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..x.len() {
            let mut xa = x.clone();
            xa.as_slice_mut().unwrap()[j] += h;
            let mut xb = x.clone();
            xb.as_slice_mut().unwrap()[j] -= h;
            let fd = (loss(&net, &xa) - loss(&net, &xb)) / (2.0 * h);
            num += (fd - gx.as_slice().unwrap()[j]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < 1e-4, "input: {}", (num / den).sqrt());
    }

    #[test]
    fn plain_gradients_match_fd() {
        check_gradients(MlpSpec::plain(4, vec![6, 5], 3), Mode::Train);
    }

    #[test]
    fn batchnorm_train_gradients_match_fd() {
        let mut s = MlpSpec::plain(4, vec![6, 5], 3);
        s.batchnorm = true;
        check_gradients(s, Mode::Train);
    }

    #[test]
    fn batchnorm_eval_gradients_match_fd() {
        let mut s = MlpSpec::plain(4, vec![6, 5], 3);
        s.batchnorm = true;
        check_gradients(s, Mode::Eval);
    }

    #[test]
    fn residual_gradients_match_fd() {
        let mut s = MlpSpec::plain(7, vec![5, 5, 5], 2);
        s.batchnorm = true;
        s.residual = true;
        s.input_projection = Some(4);
        s.output_expansion = Some(3);
        check_gradients(s.clone(), Mode::Train);
        check_gradients(s, Mode::Eval);
    }

    #[test]
    fn shortcut_gradients_match_fd() {
        let mut enc = MlpSpec::plain(7, vec![5, 5], 2);
        enc.batchnorm = true;
        enc.residual = true;
        enc.input_projection = Some(4);
        enc.linear_shortcut = true;
        check_gradients(enc.clone(), Mode::Train);
        check_gradients(enc, Mode::Eval);
        let mut dec = MlpSpec::plain(2, vec![5, 5], 7);
        dec.batchnorm = true;
        dec.residual = true;
        dec.output_expansion = Some(4);
        dec.linear_shortcut = true;
        check_gradients(dec.clone(), Mode::Train);
        check_gradients(dec, Mode::Eval);
    }

    #[test]
    fn shortcut_network_starts_linear() {
        let mut spec = MlpSpec::plain(2, vec![6, 6], 5);
        spec.batchnorm = true;
        spec.residual = true;
        spec.output_expansion = Some(3);
        spec.linear_shortcut = true;
        let mut net = Mlp::new(spec, 4).unwrap();
        let (w, b) = net.last_dense();
        net.params[w] = Array2::eye(5).slice(ndarray::s![0..3, ..]).to_owned();
        net.params[b].fill(0.0);
        let x = batch(4, 2, 9);
        let y = net.predict(&x);
        for i in 0..4 {
            assert_eq!(y.row(i).to_vec(), vec![x[(i, 0)], x[(i, 1)], 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn identity_layer_passes_input_and_gradient() {
        let mut net = Mlp::new(MlpSpec::plain(3, vec![], 3), 0).unwrap();
        net.params[0] = Array2::eye(3);
        let x = batch(4, 3, 1);
        let (y, cache) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y, x);
        let g = batch(4, 3, 2);
        let mut grads = net.zero_grads();
        assert_eq!(net.backward(&cache, &g, &mut grads), g);
    }

    #[test]
    fn zero_network_outputs_zero_and_zero_grad_gives_zero() {
        let mut s = MlpSpec::plain(3, vec![4, 4], 2);
        s.batchnorm = false;
        let mut net = Mlp::new(s, 0).unwrap();
        for p in &mut net.params {
            p.fill(0.0);
        }
        let x = batch(4, 3, 1);
        let (y, cache) = net.forward(&x, Mode::Train).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let mut net = Mlp::new(MlpSpec::plain(3, vec![4, 4], 2), 0).unwrap();
        let (_, cache2) = net.forward(&x, Mode::Train).unwrap();
        let mut grads = net.zero_grads();
        let gx = net.backward(&cache2, &Array2::zeros((4, 2)), &mut grads);
        assert!(gx.iter().chain(grads.iter().flatten()).all(|&v| v == 0.0));
        drop(cache);
    }

    #[test]
    fn eval_mode_is_batch_independent() {
        let mut s = MlpSpec::plain(3, vec![8, 8], 2);
        s.batchnorm = true;
        s.residual = true;
        let mut net = Mlp::new(s, 5).unwrap();
        net.forward(&batch(16, 3, 9), Mode::Train).unwrap();
        let a = batch(3, 3, 1);
        let b = batch(4, 3, 2);
        let ab = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
        let (fab, _) = net.forward(&ab, Mode::Eval).unwrap();
        assert_eq!(fab.slice(ndarray::s![..3, ..]), net.predict(&a));
        assert_eq!(fab.slice(ndarray::s![3.., ..]), net.predict(&b));
    }

    #[test]
    fn train_mode_rejects_single_sample_with_batchnorm() {
        let mut s = MlpSpec::plain(3, vec![4], 2);
        s.batchnorm = true;
        let mut net = Mlp::new(s, 0).unwrap();
        assert!(matches!(net.forward(&batch(1, 3, 0), Mode::Train), Err(NeuralError::BatchTooSmall(1))));
    }

    #[test]
    fn forward_is_deterministic() {
        let s = MlpSpec::plain(3, vec![8, 8], 2);
        let x = batch(6, 3, 4);
        let a = Mlp::new(s.clone(), 42).unwrap().predict(&x);
        let b = Mlp::new(s, 42).unwrap().predict(&x);
        assert_eq!(a, b);
    }
}
