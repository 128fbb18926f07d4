//! Single-precision eval-mode copy of an [`Mlp`] with batch normalization
//! folded into the preceding dense layer.

use ndarray::{s, Array1, Array2, Axis};

use super::mlp::Layer;
use super::Mlp;

#[derive(Clone, Debug)]
enum Op {
    Dense { w: Array2<f32>, b: Array1<f32> },
    Swish,
    Residual(Vec<Op>),
    Shortcut(Vec<Op>),
}

#[derive(Clone, Debug)]
pub struct InferenceMlp {
    ops: Vec<Op>,
    input_dim: usize,
    output_dim: usize,
}

fn swish32(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

fn swish32_grad(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn add_leading(mut a: Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    let k = a.ncols().min(b.ncols());
    let mut lead = a.slice_mut(s![.., 0..k]);
    lead += &b.slice(s![.., 0..k]);
    a
}

fn fold(net: &Mlp, layers: &[Layer]) -> Vec<Op> {
    let mut ops: Vec<Op> = Vec::new();
    for l in layers {
        match l {
            Layer::Dense { w, b } => ops.push(Op::Dense {
                w: net.params[*w].mapv(|v| v as f32),
                b: net.params[*b].row(0).mapv(|v| v as f32),
            }),
            Layer::BatchNorm { gamma, beta, stats } => {
                let st = &net.bn[*stats];
                let scale: Array1<f64> = net.params[*gamma].row(0).to_owned() / st.var.mapv(|v| (v + st.eps).sqrt());
                let shift: Array1<f64> = net.params[*beta].row(0).to_owned() - &st.mean * &scale;
                match ops.last_mut() {
                    Some(Op::Dense { w, b }) => {
                        let s32 = scale.mapv(|v| v as f32);
                        *w = &*w * &s32;
                        *b = &*b * &s32 + &shift.mapv(|v| v as f32);
                    }
                    _ => unreachable!("batch normalization always follows a dense layer"),
                }
            }
            Layer::Swish => ops.push(Op::Swish),
            Layer::Residual(inner) => ops.push(Op::Residual(fold(net, inner))),
            Layer::Shortcut(inner) => ops.push(Op::Shortcut(fold(net, inner))),
        }
    }
    ops
}

fn run(ops: &[Op], x: Array2<f32>, tape: Option<&mut Vec<Array2<f32>>>) -> Array2<f32> {
    let mut tape = tape;
    let mut h = x;
    for op in ops {
        h = match op {
            Op::Dense { w, b } => h.dot(w) + b,
            Op::Swish => {
                if let Some(t) = tape.as_deref_mut() {
                    t.push(h.clone());
                }
                h.mapv(swish32)
            }
            Op::Residual(inner) => {
                let body = run(inner, h.clone(), tape.as_deref_mut());
                let sum = body + h;
                if let Some(t) = tape.as_deref_mut() {
                    t.push(sum.clone());
                }
                sum.mapv(swish32)
            }
            Op::Shortcut(inner) => add_leading(run(inner, h.clone(), tape.as_deref_mut()), &h),
        };
    }
    h
}

/// Reverse sweep over `ops`; `tape` pops pre-activations pushed by `run`.
fn back(ops: &[Op], g: Array2<f32>, tape: &mut Vec<Array2<f32>>, skip_last_dense: bool) -> Array2<f32> {
    let mut g = g;
    for (i, op) in ops.iter().enumerate().rev() {
        g = match op {
            Op::Dense { w, .. } => {
                if skip_last_dense && i == ops.len() - 1 {
                    g
                } else {
                    g.dot(&w.t())
                }
            }
            Op::Swish => g * &tape.pop().expect("tape entry").mapv(swish32_grad),
            Op::Residual(inner) => {
                let gs = g * &tape.pop().expect("tape entry").mapv(swish32_grad);
                back(inner, gs.clone(), tape, false) + gs
            }
            Op::Shortcut(inner) => {
                let body = back(inner, g.clone(), tape, false);
                add_leading(body, &g)
            }
        };
    }
    g
}

impl InferenceMlp {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            ops: fold(net, &net.layers),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        run(&self.ops, x.clone(), None)
    }

    pub fn forward_one(&self, x: &[f32]) -> Vec<f32> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        self.forward(&row).into_raw_vec_and_offset().0
    }

    /// Rows `rows` of the Jacobian at `x`, one reverse sweep per row, with the
    /// last layer restricted to those rows.
    pub fn jacobian_rows(&self, x: &[f32], rows: std::ops::Range<usize>) -> Array2<f32> {
        let Some((Op::Dense { w, .. }, body)) = self.ops.split_last() else {
            unreachable!("networks end with a dense layer");
        };
        let mut tape = Vec::new();
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        run(body, row, Some(&mut tape));
        // cotangents of the selected outputs pulled through the last layer
        let g = w.slice(s![.., rows]).t().to_owned();
        let reps = g.nrows();
        let mut tapes: Vec<Array2<f32>> = tape
            .into_iter()
            .map(|t| {
                let r = t.row(0).to_owned();
                ndarray::stack(Axis(0), &vec![r.view(); reps]).expect("same shapes")
            })
            .collect();
        back(body, g, &mut tapes, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{MlpSpec, Mode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_net() -> Mlp {
        let mut spec = MlpSpec::plain(4, vec![16, 16], 9);
        spec.batchnorm = true;
        spec.residual = true;
        spec.output_expansion = Some(5);
        spec.linear_shortcut = true;
        let mut net = Mlp::new(spec, 1).unwrap();
        for p in net.params.iter_mut() {
            p.mapv_inplace(|v| v + 0.1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = Array2::from_shape_fn((32, 4), |_| rng.random_range(-2.0..2.0));
            net.forward(&x, Mode::Train).unwrap();
        }
        net
    }

    #[test]
    fn folded_network_matches_eval_mode() {
        let net = trained_net();
        let inf = InferenceMlp::from_mlp(&net);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64);
        let y64 = net.predict(&x);
        let y32 = inf.forward(&x.mapv(|v| v as f32));
        for (a, b) in y64.iter().zip(y32.iter()) {
            assert!((a - *b as f64).abs() < 1e-4 * (1.0 + a.abs()), "{a} {b}");
        }
    }

    #[test]
    fn jacobian_rows_match_finite_differences() {
        let net = trained_net();
        let inf = InferenceMlp::from_mlp(&net);
        let x = [0.3f32, -0.2, 0.5, 0.1];
        let j = inf.jacobian_rows(&x, 3..6);
        assert_eq!(j.dim(), (3, 4));
        let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for c in 0..4 {
            let mut a = xd.clone();
            a[c] += 1e-5;
            let mut b = xd.clone();
            b[c] -= 1e-5;
            let fa = net.predict(&Array2::from_shape_vec((1, 4), a).unwrap());
            let fb = net.predict(&Array2::from_shape_vec((1, 4), b).unwrap());
            for r in 0..3 {
                let fd = (fa[(0, 3 + r)] - fb[(0, 3 + r)]) / 2e-5;
                assert!((fd - j[(r, c)] as f64).abs() < 1e-3 * (1.0 + fd.abs()), "{fd} {}", j[(r, c)]);
            }
        }
    }
}
