//! `subdyn` command-line driver: dataset generation, training, rollout,
//! evaluation, benchmarking and export.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use subdyn::geometry::{Frame, SimObject, StateSequence};
use subdyn::latent::{
    train_autoencoder, train_integrator_selfsup, train_integrator_supervised, Autoencoder, Integrator, LatentError,
    RelativeEncoding, SelfSupLoss, TrainReport, TrainingData,
};
use subdyn::neural::{read_checkpoint, write_checkpoint, CheckpointError};
use subdyn::rollout::bench::{config_hash, BenchInputs};
use subdyn::rollout::{
    bench, decode_trajectory, export_obj_sequence, metric_bc_residual, metric_kinetic_energy, metric_vertex_rmse,
    rollout, write_metrics_csv, BenchConfig, LatentTrajectory, RolloutError,
};
use subdyn::scenario::{generate_sequences, DatasetSplit, ScenarioError, ScenarioSpec, SequenceSpec};
use subdyn::seqio::{read_sequence, write_sequence, SequenceIoError};
use subdyn::solver::BoundaryMotion;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sequence(#[from] SequenceIoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "subdyn", version, about = "Latent-space elastodynamics pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the scenario's training and test sequences.
    Gen(Common),
    /// Train the autoencoder on the training split.
    TrainAe(Common),
    /// Train the latent integrator against a frozen autoencoder.
    TrainInt(Common),
    /// Roll out the integrator and write latents and decoded frames.
    Rollout(Common),
    /// Time integrator, decoder, decoder JVP and a full-space Newton step.
    Bench(Common),
    /// Roll out and write boundary, kinetic energy and error metrics.
    Eval(Common),
    /// Write a sequence file as one OBJ per frame.
    Export(Common),
}

/// Flags shared by every subcommand; each one reads the flags it needs.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub scenario: Option<String>,
    /// JSON configuration (or a previous manifest) applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub no_balancing: bool,
    #[arg(long)]
    pub supervised: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Autoencoder checkpoint (file or the directory holding `ae.sdwt`).
    #[arg(long)]
    pub ae: Option<PathBuf>,
    /// Integrator checkpoint (file or the directory holding `integrator.sdwt`).
    #[arg(long = "int")]
    pub integrator: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Sequence label for rollout, eval and bench.
    #[arg(long)]
    pub sequence: Option<String>,
    /// Sequence file for `export`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("usage: subdyn <gen|train-ae|train-int|rollout|bench|eval|export> [--scenario NAME] [--out DIR] ...");
            }
            e.exit_code()
        }
    }
}

/// `SUBDYN_THREADS`, a positive cap on internal parallelism. Every command
/// currently runs on one thread, which satisfies any cap.
fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("SUBDYN_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(1),
            _ => Err(CliError::Usage(format!("SUBDYN_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn run(command: Command) -> Result<(), CliError> {
    let threads = thread_cap()?;
    let (name, common) = match &command {
        Command::Gen(c) => ("gen", c),
        Command::TrainAe(c) => ("train-ae", c),
        Command::TrainInt(c) => ("train-int", c),
        Command::Rollout(c) => ("rollout", c),
        Command::Bench(c) => ("bench", c),
        Command::Eval(c) => ("eval", c),
        Command::Export(c) => ("export", c),
    };
    let out = required(&common.out, "--out")?.clone();
    let mut ctx = Run {
        name,
        threads,
        common,
        out,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Command::Export(c) = &command {
        return ctx.export(c);
    }
    let mut cfg = config::resolve(common)?;
    fs::create_dir_all(&ctx.out)?;
    match &command {
        Command::Gen(_) => ctx.gen(&cfg)?,
        Command::TrainAe(c) => {
            let a = &mut cfg.ae;
            config::apply_training_flags(c, &mut a.epochs, &mut a.batch, &mut a.lr, &mut a.seed);
            ctx.train_ae(&cfg)?
        }
        Command::TrainInt(c) => {
            let i = &mut cfg.integrator;
            config::apply_training_flags(c, &mut i.epochs, &mut i.batch, &mut i.lr, &mut i.seed);
            ctx.train_int(&cfg)?
        }
        Command::Rollout(_) => ctx.rollout(&cfg, false)?,
        Command::Eval(_) => ctx.rollout(&cfg, true)?,
        Command::Bench(_) => ctx.bench(&cfg)?,
        Command::Export(_) => unreachable!("handled above"),
    }
    let seed = if name == "train-int" { cfg.integrator.seed } else { cfg.ae.seed };
    ctx.manifest(&cfg, seed)
}

struct Run<'a> {
    name: &'a str,
    threads: usize,
    common: &'a Common,
    out: PathBuf,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

/// Checkpoint path: the flag value, or `default` inside it when it is a directory.
fn checkpoint_path(flag: &Path, default: &str) -> PathBuf {
    if flag.is_dir() {
        flag.join(default)
    } else {
        flag.to_path_buf()
    }
}

fn find_script<'s>(spec: &'s ScenarioSpec, label: &str) -> Result<&'s SequenceSpec, CliError> {
    spec.sequences
        .iter()
        .chain(&spec.test_sequences)
        .find(|s| s.label == label)
        .ok_or_else(|| CliError::Usage(format!("scenario {} has no sequence `{label}`", spec.name)))
}

/// Sequence used by rollout, eval and bench when `--sequence` is absent:
/// the first test sequence, else the first held-out one, else the first.
fn default_label(spec: &ScenarioSpec) -> String {
    if let Some(s) = spec.test_sequences.first() {
        return s.label.clone();
    }
    if let subdyn::scenario::SplitRule::BySequence { held_out } = &spec.split {
        if let Some(&i) = held_out.first() {
            return spec.sequences[i].label.clone();
        }
    }
    spec.sequences[0].label.clone()
}

#[derive(Serialize)]
struct Metrics<'a> {
    scenario: &'a str,
    sequence: &'a str,
    steps: usize,
    bc_residual_max: f64,
    bc_residual: Vec<f64>,
    kinetic_energy: Vec<f64>,
    ground_truth_kinetic_energy: Vec<f64>,
    vertex_rmse: Vec<f64>,
    vertex_rmse_mean: f64,
}

impl Run<'_> {
    fn record(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn data_dir(&mut self) -> Result<PathBuf, CliError> {
        let d = required(&self.common.data, "--data")?.clone();
        self.inputs.push(d.display().to_string());
        Ok(d)
    }

    fn load(&self, path: &Path) -> Result<StateSequence, CliError> {
        read_sequence(path).map_err(|e| match e {
            SequenceIoError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                CliError::Usage(format!("missing dataset file {}", path.display()))
            }
            other => other.into(),
        })
    }

    fn split(&mut self, spec: &ScenarioSpec) -> Result<DatasetSplit, CliError> {
        let dir = self.data_dir()?;
        let train = spec
            .sequences
            .iter()
            .map(|s| self.load(&dir.join(format!("{}.sdsq", s.label))))
            .collect::<Result<Vec<_>, _>>()?;
        let test = spec
            .test_sequences
            .iter()
            .map(|s| self.load(&dir.join("test").join(format!("{}.sdsq", s.label))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DatasetSplit::new(spec, train, test))
    }

    fn ground_truth(&mut self, spec: &ScenarioSpec, label: &str) -> Result<StateSequence, CliError> {
        let dir = self.data_dir()?;
        let in_test = spec.test_sequences.iter().any(|s| s.label == label);
        let path = if in_test {
            dir.join("test").join(format!("{label}.sdsq"))
        } else {
            dir.join(format!("{label}.sdsq"))
        };
        self.load(&path)
    }

    fn autoencoder(&mut self) -> Result<Autoencoder, CliError> {
        let p = checkpoint_path(required(&self.common.ae, "--ae")?, "ae.sdwt");
        self.inputs.push(p.display().to_string());
        Ok(Autoencoder::from_checkpoint(&read_checkpoint(&p)?)?)
    }

    fn integrator(&mut self) -> Result<Integrator, CliError> {
        let p = checkpoint_path(required(&self.common.integrator, "--int")?, "integrator.sdwt");
        self.inputs.push(p.display().to_string());
        Ok(Integrator::from_checkpoint(&read_checkpoint(&p)?)?)
    }

    fn write_report(&mut self, report: &TrainReport, file: &str) -> Result<(), CliError> {
        let path = self.out.join(file);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        report.write_jsonl(&mut w)?;
        w.flush()?;
        self.record(&path);
        Ok(())
    }

    fn gen(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let spec = &cfg.scenario;
        let train = generate_sequences(spec, &spec.sequences)?;
        for (s, seq) in spec.sequences.iter().zip(&train) {
            let path = self.out.join(format!("{}.sdsq", s.label));
            write_sequence(seq, &path)?;
            self.record(&path);
        }
        if !spec.test_sequences.is_empty() {
            let dir = self.out.join("test");
            fs::create_dir_all(&dir)?;
            let test = generate_sequences(spec, &spec.test_sequences)?;
            for (s, seq) in spec.test_sequences.iter().zip(&test) {
                let path = dir.join(format!("{}.sdsq", s.label));
                write_sequence(seq, &path)?;
                self.record(&path);
            }
        }
        Ok(())
    }

    fn train_ae(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let split = self.split(&cfg.scenario)?;
        let (object, anchors) = cfg.scenario.object()?;
        let frames: Vec<&[f64]> = split.train.iter().flat_map(|s| s.positions()).collect();
        let encoding = RelativeEncoding::for_object(&object.topology, &anchors);
        let (ae, report) = train_autoencoder(&frames, encoding, &cfg.ae)?;
        let path = self.out.join("ae.sdwt");
        write_checkpoint(&ae.to_checkpoint(), &path)?;
        self.record(&path);
        self.write_report(&report, "ae_train.jsonl")
    }

    fn train_int(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let spec = &cfg.scenario;
        let split = self.split(spec)?;
        let ae = self.autoencoder()?;
        let (object, _) = spec.object()?;
        let data = TrainingData::new(&ae, &split.train)?;
        let (integ, report) = if cfg.supervised {
            train_integrator_supervised(&data, &cfg.integrator)?
        } else {
            let loss = SelfSupLoss {
                ae: &ae,
                object: &object,
                params: &spec.material,
                dt: spec.dt,
                penalty: spec.penalty_weight,
            };
            train_integrator_selfsup(&data, &loss, &cfg.integrator)?
        };
        let path = self.out.join("integrator.sdwt");
        write_checkpoint(&integ.to_checkpoint(), &path)?;
        self.record(&path);
        self.write_report(&report, "integrator_train.jsonl")
    }

    fn rollout(&mut self, cfg: &RunConfig, metrics: bool) -> Result<(), CliError> {
        let spec = &cfg.scenario;
        let label = cfg.sequence.clone().unwrap_or_else(|| default_label(spec));
        let script = &find_script(spec, &label)?.script;
        let gt = self.ground_truth(spec, &label)?;
        let ae = self.autoencoder()?;
        let integ = self.integrator()?;
        let (object, anchors) = spec.object()?;
        if gt.len() < 2 {
            return Err(CliError::Usage(format!("sequence `{label}` has fewer than 2 frames")));
        }
        let motion = spec.boundary(&anchors, script);
        let steps = cfg.steps.unwrap_or(gt.len() - 2);
        let z0 = ae.encode(&gt.frames[0].x);
        let z1 = ae.encode(&gt.frames[1].x);
        let traj = rollout(&integ, &z0, &z1, &motion, steps, spec.dt)?;
        let rest = &object.rest.positions;
        let frames = decode_trajectory(&ae, &traj, &motion, rest)?;
        if metrics {
            self.write_metrics(spec, &label, &object, &motion, &gt, &traj, &frames)
        } else {
            let path = self.out.join("latents.json");
            fs::write(&path, serde_json::to_string_pretty(&traj)?)?;
            self.record(&path);
            let seq = StateSequence {
                scenario: format!("{}/{label}/rollout", spec.name),
                dt: spec.dt,
                bc_dim: motion.bc_dim(),
                topology: object.topology.clone(),
                frames: frames
                    .into_iter()
                    .zip(&traj.p)
                    .enumerate()
                    .map(|(t, (x, p))| Frame { t, x, p: p.clone() })
                    .collect(),
            };
            let path = self.out.join("rollout.sdsq");
            write_sequence(&seq, &path)?;
            self.record(&path);
            Ok(())
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn write_metrics(
        &mut self,
        spec: &ScenarioSpec,
        label: &str,
        object: &SimObject,
        motion: &dyn BoundaryMotion,
        gt: &StateSequence,
        traj: &LatentTrajectory,
        frames: &[Vec<f64>],
    ) -> Result<(), CliError> {
        let rest = &object.rest.positions;
        let truth: Vec<Vec<f64>> = gt.frames.iter().map(|f| f.x.clone()).collect();
        let n = frames.len().min(truth.len());
        let bc = metric_bc_residual(frames, motion, rest);
        let rmse = metric_vertex_rmse(&frames[..n], &truth[..n])?;
        let ke = metric_kinetic_energy(frames, &object.mass, spec.dt);
        let gt_ke = metric_kinetic_energy(&truth, &object.mass, spec.dt);
        let m = Metrics {
            scenario: &spec.name,
            sequence: label,
            steps: traj.len() - 2,
            bc_residual_max: bc.iter().copied().fold(0.0, f64::max),
            vertex_rmse_mean: rmse.iter().sum::<f64>() / rmse.len().max(1) as f64,
            bc_residual: bc,
            kinetic_energy: ke,
            ground_truth_kinetic_energy: gt_ke,
            vertex_rmse: rmse,
        };
        let path = self.out.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        self.record(&path);
        // kinetic energy series start at frame 1; pad so rows line up by frame
        let pad = |v: &[f64]| std::iter::once(f64::NAN).chain(v.iter().copied()).collect::<Vec<_>>();
        let (ke, gt_ke) = (pad(&m.kinetic_energy), pad(&m.ground_truth_kinetic_energy));
        let path = self.out.join("metrics.csv");
        write_metrics_csv(
            &path,
            &[
                ("bc_residual", &m.bc_residual),
                ("vertex_rmse", &m.vertex_rmse),
                ("kinetic_energy", &ke),
                ("ground_truth_kinetic_energy", &gt_ke),
            ],
        )?;
        self.record(&path);
        Ok(())
    }

    fn bench(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let spec = &cfg.scenario;
        let label = cfg.sequence.clone().unwrap_or_else(|| default_label(spec));
        let script = &find_script(spec, &label)?.script;
        let gt = self.ground_truth(spec, &label)?;
        let ae = self.autoencoder()?;
        let integ = self.integrator()?;
        let (object, anchors) = spec.object()?;
        if gt.len() < 3 {
            return Err(CliError::Usage(format!("sequence `{label}` has fewer than 3 frames")));
        }
        let motion = spec.boundary(&anchors, script);
        let k = (gt.len() / 2).max(2);
        let (x1, x2) = (&gt.frames[k - 1].x, &gt.frames[k - 2].x);
        let (z1, z2) = (ae.encode(x1), ae.encode(x2));
        let targets = subdyn::rollout::anchor_targets(&ae, &motion, &object.rest.positions, k);
        let config_text = serde_json::to_string(cfg)?;
        let result = bench(
            &BenchInputs {
                scenario: &spec.name,
                object: &object,
                params: &spec.material,
                ae: &ae,
                integrator: &integ,
                solver: &spec.solver,
                dt: spec.dt,
                x_prev: x1,
                x_prev2: x2,
                dirichlet: &motion.dirichlet(&object.rest.positions, k),
                z_prev: &z1,
                z_prev2: &z2,
                p: [&gt.frames[k].p, &gt.frames[k - 1].p, &gt.frames[k - 2].p],
                anchors: &targets,
                config: &config_text,
            },
            &BenchConfig { repeats: cfg.repeats },
        );
        let path = self.out.join("bench.json");
        fs::write(&path, serde_json::to_string_pretty(&result)?)?;
        self.record(&path);
        Ok(())
    }

    fn export(&mut self, c: &Common) -> Result<(), CliError> {
        let input = required(&c.input, "--input")?.clone();
        let seq = self.load(&input)?;
        self.inputs.push(input.display().to_string());
        let frames: Vec<Vec<f64>> = seq.frames.iter().map(|f| f.x.clone()).collect();
        for p in export_obj_sequence(&frames, &seq.topology, &self.out)? {
            self.record(&p);
        }
        let path = self.out.join("manifest.json");
        let manifest = serde_json::json!({
            "command": self.name,
            "input": input.display().to_string(),
            "scenario": seq.scenario,
            "frames": frames.len(),
            "threads": self.threads,
            "versions": config::versions(),
            "outputs": self.outputs,
        });
        fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn manifest(&self, cfg: &RunConfig, seed: u64) -> Result<(), CliError> {
        let m = config::Manifest {
            command: self.name,
            config: cfg,
            config_hash: config_hash(&serde_json::to_string(cfg)?),
            seed,
            threads: self.threads,
            versions: config::versions(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        };
        fs::write(self.out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}
