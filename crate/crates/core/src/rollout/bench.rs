//! Single-precision inference path and the timing harness.

use std::time::Instant;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::energy::MaterialParams;
use crate::geometry::SimObject;
use crate::latent::{Autoencoder, EncodingMode, Integrator};
use crate::neural::InferenceMlp;
use crate::solver::{newton_minimize, DirichletSet, IncrementalPotential, SolverConfig};

/// Integrator and decoder in `f32` with batch normalization folded.
#[derive(Clone, Debug)]
pub struct InferencePipeline {
    integrator: InferenceMlp,
    decoder: InferenceMlp,
    z_mean: Vec<f32>,
    z_std: Vec<f32>,
    p_mean: Vec<f32>,
    p_std: Vec<f32>,
    code_mean: Vec<f32>,
    scale: f32,
    mode: EncodingMode,
    n_vertices: usize,
    anchors: Vec<usize>,
    kept: Vec<usize>,
    reference: Vec<usize>,
}

fn f32s(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl InferencePipeline {
    pub fn new(ae: &Autoencoder, integ: &Integrator) -> Self {
        Self {
            integrator: InferenceMlp::from_mlp(&integ.net),
            decoder: InferenceMlp::from_mlp(&ae.decoder),
            z_mean: f32s(&integ.z_mean),
            z_std: f32s(&integ.z_std),
            p_mean: f32s(&integ.p_mean),
            p_std: f32s(&integ.p_std),
            code_mean: f32s(&ae.mean),
            scale: ae.scale as f32,
            mode: ae.encoding.mode,
            n_vertices: ae.encoding.n_vertices,
            anchors: ae.encoding.anchors.clone(),
            kept: ae.encoding.kept.clone(),
            reference: ae.encoding.reference.clone(),
        }
    }

    pub fn step(&self, z1: &[f32], z2: &[f32], p0: &[f32], p1: &[f32], p2: &[f32]) -> Vec<f32> {
        let mut row = Vec::with_capacity(self.integrator.input_dim());
        for z in [z1, z2] {
            row.extend(z.iter().zip(&self.z_mean).zip(&self.z_std).map(|((v, m), s)| (v - m) / s));
        }
        for p in [p0, p1, p2] {
            row.extend(p.iter().zip(&self.p_mean).zip(&self.p_std).map(|((v, m), s)| (v - m) / s));
        }
        let mut y = self.integrator.forward_one(&row);
        for ((v, m), s) in y.iter_mut().zip(&self.z_mean).zip(&self.z_std) {
            *v = *v * s + m;
        }
        y
    }

    /// Absolute positions from a latent and the anchor positions.
    pub fn decode(&self, z: &[f32], bc: &[[f32; 3]]) -> Vec<f32> {
        let code = self.decoder.forward_one(z);
        let mut mean = [0f32; 3];
        if self.mode == EncodingMode::DirichletMeanRelative && !bc.is_empty() {
            for p in bc {
                for k in 0..3 {
                    mean[k] += p[k] / bc.len() as f32;
                }
            }
        }
        let mut x = vec![0f32; 3 * self.n_vertices];
        if self.mode == EncodingMode::RootRelative {
            for (a, p) in self.anchors.iter().zip(bc) {
                x[3 * a..3 * a + 3].copy_from_slice(p);
            }
        }
        for (k, &v) in self.kept.iter().enumerate() {
            let off = match self.mode {
                EncodingMode::RootRelative => bc[self.reference[k]],
                EncodingMode::DirichletMeanRelative => mean,
            };
            for c in 0..3 {
                let i = 3 * k + c;
                x[3 * v + c] = code[i] * self.scale + self.code_mean[i] + off[c];
            }
        }
        x
    }

    /// Directional derivative of the decoded position of code vertex `k`
    /// along `dir`, from one reverse sweep per coordinate.
    pub fn decoder_jvp(&self, z: &[f32], dir: &[f32], k: usize) -> [f32; 3] {
        let j = self.decoder.jacobian_rows(z, 3 * k..3 * k + 3);
        let v = Array2::from_shape_vec((dir.len(), 1), dir.to_vec()).expect("column vector");
        let jv = j.dot(&v);
        [jv[(0, 0)] * self.scale, jv[(1, 0)] * self.scale, jv[(2, 0)] * self.scale]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub repeats: usize,
}

impl BenchConfig {
    /// Discarded warm-up calls: a tenth of the repeats, at least one.
    pub fn warmup(&self) -> usize {
        (self.repeats / 10).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Median wall times in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: String,
    pub integrator_ms: f64,
    pub decoder_ms: f64,
    pub total_ms: f64,
    pub decoder_jvp_ms: f64,
    pub newton_step_ms: f64,
    pub newton_iterations: usize,
    /// Newton step time over integrator plus decoder time.
    pub speedup: f64,
    pub repeats: usize,
    pub warmup: usize,
    pub precision: String,
    pub threads: usize,
    pub config_hash: String,
    pub machine: MachineInfo,
}

/// Everything one benchmark run touches.
pub struct BenchInputs<'a> {
    pub scenario: &'a str,
    pub object: &'a SimObject,
    pub params: &'a MaterialParams,
    pub ae: &'a Autoencoder,
    pub integrator: &'a Integrator,
    pub solver: &'a SolverConfig,
    pub dt: f64,
    /// Full-space history and Dirichlet set of the Newton step.
    pub x_prev: &'a [f64],
    pub x_prev2: &'a [f64],
    pub dirichlet: &'a DirichletSet,
    /// Latent history and boundary parameters `p_t, p_{t-1}, p_{t-2}`.
    pub z_prev: &'a [f64],
    pub z_prev2: &'a [f64],
    pub p: [&'a [f64]; 3],
    pub anchors: &'a [Vector3<f64>],
    /// Canonical text of the configuration, hashed into the result.
    pub config: &'a str,
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn median_ms(warmup: usize, repeats: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    }
}

pub fn bench(inp: &BenchInputs, cfg: &BenchConfig) -> BenchResult {
    let pipe = InferencePipeline::new(inp.ae, inp.integrator);
    let (z1, z2) = (f32s(inp.z_prev), f32s(inp.z_prev2));
    let p: Vec<Vec<f32>> = inp.p.iter().map(|v| f32s(v)).collect();
    let bc: Vec<[f32; 3]> = inp.anchors.iter().map(|a| [a.x as f32, a.y as f32, a.z as f32]).collect();
    let warmup = cfg.warmup();
    let z = pipe.step(&z1, &z2, &p[0], &p[1], &p[2]);
    let integrator_ms = median_ms(warmup, cfg.repeats, || {
        std::hint::black_box(pipe.step(&z1, &z2, &p[0], &p[1], &p[2]));
    });
    let decoder_ms = median_ms(warmup, cfg.repeats, || {
        std::hint::black_box(pipe.decode(&z, &bc));
    });
    let dir: Vec<f32> = (0..z.len()).map(|i| 1.0 / (1.0 + i as f32)).collect();
    let k = inp.ae.encoding.kept.len() / 2;
    let decoder_jvp_ms = median_ms(warmup, cfg.repeats, || {
        std::hint::black_box(pipe.decoder_jvp(&z, &dir, k));
    });
    let ip = IncrementalPotential {
        object: inp.object,
        params: inp.params,
        x_prev: inp.x_prev,
        x_prev2: inp.x_prev2,
        dt: inp.dt,
        penalty: None,
    };
    let y: Vec<f64> = inp.x_prev.iter().zip(inp.x_prev2).map(|(a, b)| 2.0 * a - b).collect();
    let mut newton_iterations = 0;
    let newton_step_ms = median_ms(warmup.min(3), cfg.repeats, || {
        if let Ok((_, s)) = newton_minimize(&ip, &y, inp.dirichlet, inp.solver) {
            newton_iterations = s.iterations;
        }
    });
    let total_ms = integrator_ms + decoder_ms;
    BenchResult {
        scenario: inp.scenario.into(),
        integrator_ms,
        decoder_ms,
        total_ms,
        decoder_jvp_ms,
        newton_step_ms,
        newton_iterations,
        speedup: newton_step_ms / total_ms,
        repeats: cfg.repeats,
        warmup,
        precision: "f32".into(),
        threads: 1,
        config_hash: config_hash(inp.config),
        machine: MachineInfo::current(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(""), "cbf29ce484222325");
        assert_eq!(config_hash("a"), "af63dc4c8601ec8c");
    }
}
