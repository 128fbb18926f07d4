//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Training budgets are pinned below so the whole run fits a single CPU core.
//! Timing artifacts go to `$CARGO_TARGET_TMPDIR/acceptance/`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subdyn::energy::{
    bc_penalty_energy, gravity_energy, inertial_energy, pd_eps, project_pd, rod_bend_energy, rod_stretch_energy,
    shell_hinge_bend_energy, shell_membrane_energy, tet_stvk_energy, EnergyReport, MaterialParams,
};
use subdyn::geometry::{CrossSection, SimObject, StateSequence};
use subdyn::latent::{
    train_autoencoder, train_integrator_selfsup, train_integrator_supervised, AeConfig, Autoencoder, Integrator,
    IntegratorConfig, RelativeEncoding, SelfSupLoss, TrainingData,
};
use subdyn::rollout::bench::BenchInputs;
use subdyn::rollout::{
    anchor_targets, bench, decode_trajectory, metric_bc_residual, metric_kinetic_energy, metric_vertex_rmse, rollout,
    BenchConfig, BenchResult, RolloutError,
};
use subdyn::scenario::mesh::{cloth_grid, hanging_rods, root_grid, voxel_box, voxel_tets};
use subdyn::scenario::{build_scenario, generate_sequences, prefix_boundary, DatasetSplit, ScenarioSpec, SCENARIO_NAMES};
use subdyn::solver::{simulate, BoundaryMotion, RigidMotion, SolverConfig};

const ROD_AE_EPOCHS: usize = 200;
const ROD_INT_EPOCHS: usize = 1000;
const ROTATION_AE_EPOCHS: usize = 300;
const ROTATION_INT_EPOCHS: usize = 1000;
const CLOTH_AE_EPOCHS: usize = 1500;
const BEAM_AE_EPOCHS: usize = 1000;
const BEAM_INT_EPOCHS: usize = 1000;
const INT_LR: f64 = 1e-3;
const SEED: u64 = 7;

enum Verdict {
    Pass,
    Fail,
    Logged,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn artifact_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).expect("artifact dir");
    d
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

// ---------------------------------------------------------------- criterion 1

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = xp[i];
            xp[i] = v + h;
            let fp = f(&xp);
            xp[i] = v - h;
            let fm = f(&xp);
            xp[i] = v;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn fd_hessian(g: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let v = xp[j];
        xp[j] = v + h;
        let gp = g(&xp);
        xp[j] = v - h;
        let gm = g(&xp);
        xp[j] = v;
        for i in 0..n {
            out[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    out
}

type Term<'a> = Box<dyn Fn(&[f64], bool) -> EnergyReport + 'a>;

/// Inertia, gravity and Dirichlet penalty terms on `obj`.
fn shared_terms<'a>(tag: &str, obj: &'a SimObject) -> Vec<(String, Term<'a>)> {
    let rest = obj.rest.positions.clone();
    let prev2: Vec<f64> = rest.iter().map(|v| v - 1e-3).collect();
    let targets: Vec<(usize, Vector3<f64>)> = (0..2).map(|i| (i, Vector3::new(0.01, -0.02, 0.005))).collect();
    vec![
        (
            format!("{tag}/inertial"),
            Box::new(move |x: &[f64], h: bool| inertial_energy(x, &rest, &prev2, &obj.mass, 1.0 / 30.0, h).unwrap())
                as Term,
        ),
        (
            format!("{tag}/gravity"),
            Box::new(move |x: &[f64], h: bool| gravity_energy(x, &obj.mass, &Vector3::new(0.0, 0.0, -9.81), h).unwrap()),
        ),
        (
            format!("{tag}/bc-penalty"),
            Box::new(move |x: &[f64], h: bool| bc_penalty_energy(x, &targets, 1e5, h).unwrap()),
        ),
    ]
}


fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mat = |e: f64, nu: f64, rho: f64| MaterialParams {
        youngs_modulus: e,
        poisson_ratio: nu,
        density: rho,
        gravity: [0.0, 0.0, -9.81],
    };
    let (rt, rx) = hanging_rods(&root_grid(2, 1, 0.02), 5, 0.01);
    let rods = SimObject::new(rt, &rx, 1320.0, CrossSection::Rod { radius: 7e-4 }).unwrap();
    let (ct, cx) = cloth_grid(4, 4, 0.3, 0.3);
    let cloth = SimObject::new(ct, &cx, 1500.0, CrossSection::Shell { thickness: 0.003 }).unwrap();
    let (st, sx, _) = voxel_tets(&voxel_box(2, 1, 1), 0.1);
    let solid = SimObject::new(st, &sx, 1000.0, CrossSection::Solid).unwrap();
    let rod_p = mat(4e7, 0.3, 1320.0);
    let cloth_p = mat(1e6, 0.45, 1500.0);
    let solid_p = mat(1e7, 0.48, 1000.0);

    let mut cases: Vec<(String, &SimObject, Term)> = Vec::new();
    for (name, t) in shared_terms("rods", &rods) {
        cases.push((name, &rods, t));
    }
    for (name, t) in shared_terms("shell", &cloth) {
        cases.push((name, &cloth, t));
    }
    for (name, t) in shared_terms("solid", &solid) {
        cases.push((name, &solid, t));
    }
    cases.push(("rods/stretch".into(), &rods, Box::new(|x, h| rod_stretch_energy(x, &rods.rest, &rod_p, h).unwrap())));
    cases.push(("rods/bend".into(), &rods, Box::new(|x, h| rod_bend_energy(x, &rods.rest, &rod_p, h).unwrap())));
    cases.push((
        "shell/membrane".into(),
        &cloth,
        Box::new(|x, h| shell_membrane_energy(x, &cloth.rest, &cloth_p, h).unwrap()),
    ));
    cases.push((
        "shell/hinge".into(),
        &cloth,
        Box::new(|x, h| shell_hinge_bend_energy(x, &cloth.rest, &cloth_p, h).unwrap()),
    ));
    cases.push(("solid/stvk".into(), &solid, Box::new(|x, h| tet_stvk_energy(x, &solid.rest, &solid_p, h).unwrap())));

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    let mut worst_names = (String::new(), String::new());
    for (name, obj, term) in &cases {
        let scale = 0.05 * obj.bbox_diagonal();
        for _ in 0..10 {
            let x: Vec<f64> = obj.rest.positions.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
            let h = 1e-6 * obj.bbox_diagonal();
            let analytic = term(&x, true);
            let g_fd = fd_gradient(&|y| term(y, false).value, &x, h);
            let eg = rel_err(&analytic.gradient, &g_fd);
            let h_fd = fd_hessian(&|y| term(y, false).gradient, &x, h);
            let h_an = analytic.dense_hessian().expect("hessian requested");
            let eh = (&h_an - &h_fd).norm() / h_fd.norm().max(1e-300);
            let eh = if h_fd.norm() == 0.0 && h_an.norm() == 0.0 { 0.0 } else { eh };
            if eg > worst_g {
                worst_g = eg;
                worst_names.0 = name.clone();
            }
            if eh > worst_h {
                worst_h = eh;
                worst_names.1 = name.clone();
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_g < 1e-4 && worst_h < 1e-3 && secs < 60.0,
        format!(
            "{} terms x 10 configs: worst gradient rel err {worst_g:.2e} ({}), worst Hessian rel err {worst_h:.2e} ({}), {secs:.1}s",
            cases.len(),
            worst_names.0,
            worst_names.1
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

struct Launch {
    v0: Vector3<f64>,
    dt: f64,
}

impl BoundaryMotion for Launch {
    fn constrained(&self) -> &[usize] {
        &[]
    }
    fn placement(&self, t: usize) -> RigidMotion {
        RigidMotion::translation(self.v0 * (t as f64 * self.dt))
    }
    fn bc_params(&self, _t: usize) -> Vec<f64> {
        vec![]
    }
    fn bc_dim(&self) -> usize {
        0
    }
}

fn particle_oracle() -> Outcome {
    let dt = 1.0 / 30.0;
    let g = -9.81;
    let obj = SimObject::point_masses(&[0.1, -0.2, 0.3], vec![0.7]).unwrap();
    let params = MaterialParams {
        youngs_modulus: 1.0,
        poisson_ratio: 0.3,
        density: 1.0,
        gravity: [0.0, 0.0, g],
    };
    let motion = Launch {
        v0: Vector3::new(0.5, 0.0, 2.0),
        dt,
    };
    let out = simulate("particle", &obj, &params, &motion, 102, dt, &SolverConfig::default()).unwrap();
    let xs = &out.sequence.frames;
    let mut expected = vec![xs[0].x.clone(), xs[1].x.clone()];
    let mut worst = 0.0f64;
    for t in 2..xs.len() {
        let next: Vec<f64> = (0..3)
            .map(|k| 2.0 * expected[t - 1][k] - expected[t - 2][k] + if k == 2 { dt * dt * g } else { 0.0 })
            .collect();
        worst = worst.max(next.iter().zip(&xs[t].x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        expected.push(next);
    }
    check(worst < 1e-10, format!("100 steps, max |x - x_bdf1| = {worst:.2e} m"))
}

// ---------------------------------------------------------------- criterion 3

fn pd_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_margin = f64::INFINITY;
    for _ in 0..1000 {
        let n = 3 * rng.random_range(1..=4);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-3..4)));
        let sym = (&a + a.transpose()) * 0.5;
        let eps = pd_eps(&sym);
        let p = project_pd(&sym, eps);
        let min = p.symmetric_eigen().eigenvalues.min();
        worst_margin = worst_margin.min(min - (eps - 1e-12));
    }
    let spec = build_scenario("beam-cantilever").unwrap();
    let (object, anchors) = spec.object().unwrap();
    let script = &spec.sequences[0].script;
    let motion = spec.boundary(&anchors, script);
    let out = simulate("cantilever", &object, &spec.material, &motion, 30, spec.dt, &spec.solver).unwrap();
    let mut increases = 0;
    let mut iterations = 0;
    for s in &out.stats {
        iterations += s.iterations;
        for w in s.energies.windows(2) {
            if w[1] > w[0] + 1e-12 * w[0].abs() {
                increases += 1;
            }
        }
    }
    let converged = out.stats.iter().all(|s| s.converged);
    check(
        worst_margin >= 0.0 && increases == 0 && converged,
        format!(
            "1000 blocks, min(lambda - eps + 1e-12) = {worst_margin:.2e}; cantilever 28 steps, {iterations} Newton iterations, {increases} objective increases"
        ),
    )
}

// ---------------------------------------------------------------- shared data

struct Scenario {
    spec: ScenarioSpec,
    object: SimObject,
    anchors: Vec<usize>,
    split: DatasetSplit,
}

impl Scenario {
    fn load(name: &str) -> Self {
        let spec = build_scenario(name).unwrap();
        let (object, anchors) = spec.object().unwrap();
        let train = generate_sequences(&spec, &spec.sequences).unwrap();
        let test = generate_sequences(&spec, &spec.test_sequences).unwrap();
        let split = DatasetSplit::new(&spec, train, test);
        Self {
            spec,
            object,
            anchors,
            split,
        }
    }

    fn diag(&self) -> f64 {
        self.object.bbox_diagonal()
    }

    fn rest(&self) -> &[f64] {
        &self.object.rest.positions
    }

    fn train_ae(&self, epochs: usize) -> Autoencoder {
        let frames: Vec<&[f64]> = self.split.train.iter().flat_map(|s| s.positions()).collect();
        let encoding = RelativeEncoding::for_object(&self.object.topology, &self.anchors);
        let cfg = AeConfig {
            epochs,
            seed: SEED,
            ..AeConfig::new(self.spec.latent_dim)
        };
        train_autoencoder(&frames, encoding, &cfg).unwrap().0
    }

    fn loss<'a>(&'a self, ae: &'a Autoencoder) -> SelfSupLoss<'a> {
        SelfSupLoss {
            ae,
            object: &self.object,
            params: &self.spec.material,
            dt: self.spec.dt,
            penalty: self.spec.penalty_weight,
        }
    }

    fn train_int(&self, ae: &Autoencoder, epochs: usize, noise: bool, balancing: bool, supervised: bool) -> Integrator {
        let data = TrainingData::new(ae, &self.split.train).unwrap();
        let cfg = IntegratorConfig {
            epochs,
            lr: INT_LR,
            seed: SEED,
            noise,
            balancing,
            ..Default::default()
        };
        if supervised {
            train_integrator_supervised(&data, &cfg).unwrap().0
        } else {
            train_integrator_selfsup(&data, &self.loss(ae), &cfg).unwrap().0
        }
    }

    /// Script of sequence `label` among training and test sequences.
    fn motion(&self, label: &str) -> Box<dyn BoundaryMotion + '_> {
        let s = self
            .spec
            .sequences
            .iter()
            .chain(&self.spec.test_sequences)
            .find(|s| s.label == label)
            .unwrap_or_else(|| panic!("no sequence {label}"));
        Box::new(self.spec.boundary(&self.anchors, &s.script))
    }

    fn sequence(&self, label: &str) -> &StateSequence {
        let name = format!("{}/{label}", self.spec.name);
        self.split
            .test
            .iter()
            .chain(&self.split.train)
            .find(|s| s.scenario == name)
            .unwrap_or_else(|| panic!("no sequence {name}"))
    }
}

/// Rollout started from the first two ground-truth frames of `label`.
struct Rolled {
    frames: Vec<Vec<f64>>,
    bc_residual: Vec<f64>,
    rmse: Vec<f64>,
}

fn roll(sc: &Scenario, ae: &Autoencoder, integ: &Integrator, label: &str, steps: usize) -> Result<Rolled, RolloutError> {
    let gt = sc.sequence(label);
    let motion = sc.motion(label);
    let z0 = ae.encode(&gt.frames[0].x);
    let z1 = ae.encode(&gt.frames[1].x);
    let traj = rollout(integ, &z0, &z1, motion.as_ref(), steps, sc.spec.dt)?;
    let frames = decode_trajectory(ae, &traj, motion.as_ref(), sc.rest())?;
    let bc_residual = metric_bc_residual(&frames, motion.as_ref(), sc.rest());
    let truth: Vec<Vec<f64>> = gt.frames.iter().map(|f| f.x.clone()).collect();
    let n = truth.len().min(frames.len());
    let rmse = metric_vertex_rmse(&frames[..n], &truth[..n])?;
    Ok(Rolled {
        frames,
        bc_residual,
        rmse,
    })
}

struct RodModels {
    sc: Scenario,
    ae: Autoencoder,
    full: Integrator,
    supervised: Integrator,
    unbalanced: Integrator,
}

fn rod_models() -> &'static RodModels {
    static CELL: OnceLock<RodModels> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let sc = Scenario::load("rod-translation");
        let ae = sc.train_ae(ROD_AE_EPOCHS);
        let full = sc.train_int(&ae, ROD_INT_EPOCHS, true, true, false);
        let supervised = sc.train_int(&ae, ROD_INT_EPOCHS, true, true, true);
        let unbalanced = sc.train_int(&ae, ROD_INT_EPOCHS, true, false, false);
        eprintln!("rod-translation models ready in {:.0}s", t.elapsed().as_secs_f64());
        RodModels {
            sc,
            ae,
            full,
            supervised,
            unbalanced,
        }
    })
}

struct BeamModels {
    sc: Scenario,
    ae: Autoencoder,
    noisy: Integrator,
    clean: Integrator,
    noisy_balanced: Integrator,
    clean_balanced: Integrator,
}

fn beam_models() -> &'static BeamModels {
    static CELL: OnceLock<BeamModels> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let sc = Scenario::load("beam-cantilever");
        let ae = sc.train_ae(BEAM_AE_EPOCHS);
        // a single static sequence: balancing would weight every settled
        // frame by 1/eps, so the ablation pair trains without it
        let noisy = sc.train_int(&ae, BEAM_INT_EPOCHS, true, false, false);
        let clean = sc.train_int(&ae, BEAM_INT_EPOCHS, false, false, false);
        let noisy_balanced = sc.train_int(&ae, BEAM_INT_EPOCHS, true, true, false);
        let clean_balanced = sc.train_int(&ae, BEAM_INT_EPOCHS, false, true, false);
        eprintln!("beam-cantilever models ready in {:.0}s", t.elapsed().as_secs_f64());
        BeamModels {
            sc,
            ae,
            noisy,
            clean,
            noisy_balanced,
            clean_balanced,
        }
    })
}

struct ClothModel {
    sc: Scenario,
    ae: Autoencoder,
    train_secs: f64,
}

fn cloth_model() -> &'static ClothModel {
    static CELL: OnceLock<ClothModel> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = Scenario::load("cloth-pinned");
        let t = Instant::now();
        let ae = sc.train_ae(CLOTH_AE_EPOCHS);
        ClothModel {
            sc,
            ae,
            train_secs: t.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------- criterion 4

fn autoencoder_quality() -> Outcome {
    let m = cloth_model();
    let seq = &m.sc.split.test[0];
    let start = prefix_boundary(seq.len(), 0.5);
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut worst_frame = 0.0f64;
    for f in &seq.frames[start..] {
        let r = m.ae.reconstruct(&f.x).unwrap();
        let e: f64 = r.iter().zip(&f.x).map(|(a, b)| (a - b).powi(2)).sum();
        let n = f.x.len() / 3;
        sq += e;
        count += n;
        worst_frame = worst_frame.max((e / n as f64).sqrt());
    }
    let rms = (sq / count as f64).sqrt();
    let diag = m.sc.diag();
    check(
        rms < 0.01 * diag && m.train_secs <= 1800.0,
        format!(
            "held-out frames {start}..{}: RMS {:.2e} m = {:.3}% of diag (worst frame {:.3}%), training {:.0}s",
            seq.len(),
            rms,
            100.0 * rms / diag,
            100.0 * worst_frame / diag,
            m.train_secs
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn selfsup_stability() -> Outcome {
    let m = rod_models();
    let label = "speed-65";
    let diag = m.sc.diag();
    let ours = match roll(&m.sc, &m.ae, &m.full, label, 998) {
        Ok(r) => r,
        Err(e) => return check(false, format!("self-supervised rollout failed: {e}")),
    };
    let bc_max = max_of(&ours.bc_residual);
    let ours_rmse = mean(&ours.rmse[..300]);
    let sup = roll(&m.sc, &m.ae, &m.supervised, label, 998);
    let (sup_ok, sup_detail) = match &sup {
        Err(RolloutError::NonFiniteLatent { step }) => (true, format!("supervised non-finite at step {step}")),
        Err(e) => (false, format!("supervised rollout error: {e}")),
        Ok(r) => {
            let s = mean(&r.rmse[..300]);
            (
                s > 2.0 * ours_rmse,
                format!("supervised RMSE(0..300) {:.3}% of diag, ratio {:.2}", 100.0 * s / diag, s / ours_rmse),
            )
        }
    };
    let finite = ours.frames.iter().flatten().all(|v| v.is_finite());
    check(
        finite && bc_max < 0.05 * diag && sup_ok,
        format!(
            "1000 frames finite={finite}, max BC residual {:.2e} m ({:.3}% of diag), self-supervised RMSE(0..300) {:.3}% of diag; {sup_detail}",
            bc_max,
            100.0 * bc_max / diag,
            100.0 * ours_rmse / diag
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn noise_ablation() -> Outcome {
    let m = beam_models();
    let gt = &m.sc.split.test[0];
    let steady = &gt.frames.last().unwrap().x;
    let label = &m.sc.spec.sequences[0].label;
    let diag = m.sc.diag();
    let deviation = |integ: &Integrator| -> Result<Vec<f64>, RolloutError> {
        let r = roll(&m.sc, &m.ae, integ, label, gt.len() - 2)?;
        let steady_seq = vec![steady.clone(); r.frames.len()];
        metric_vertex_rmse(&r.frames, &steady_seq)
    };
    let summary = |d: &Result<Vec<f64>, RolloutError>| match d {
        Ok(v) => format!("{:.3e}", mean(v) / diag),
        Err(e) => e.to_string(),
    };
    let balanced = format!(
        "with balancing: noise {}, no noise {}",
        summary(&deviation(&m.noisy_balanced)),
        summary(&deviation(&m.clean_balanced))
    );
    let (with, without) = match (deviation(&m.noisy), deviation(&m.clean)) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            return check(
                false,
                format!("rollout failed: with noise {:?}, without {:?}; {balanced}", a.err(), b.err()),
            )
        }
    };
    let n = with.len();
    let (mw, mo) = (mean(&with), mean(&without));
    let (sw, so) = (std_dev(&with[n - 100..]), std_dev(&without[n - 100..]));
    check(
        mw < mo && so >= 2.0 * sw,
        format!(
            "mean deviation / diag with noise {:.3e} vs without {:.3e}; last-100 std with {sw:.2e} vs without {so:.2e} m (ratio {:.2}); {balanced}",
            mw / diag,
            mo / diag,
            so / sw
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn balancing_ablation() -> Outcome {
    let m = rod_models();
    let label = "speed-10-long";
    let steps = m.sc.sequence(label).len() - 2;
    let err = |integ: &Integrator| roll(&m.sc, &m.ae, integ, label, steps).map(|r| mean(&r.rmse));
    match (err(&m.full), err(&m.unbalanced)) {
        (Ok(b), Ok(u)) => {
            let diag = m.sc.diag();
            check(
                b < u,
                format!(
                    "slowest sequence ({label}) RMSE balanced {:.3}% vs unbalanced {:.3}% of diag",
                    100.0 * b / diag,
                    100.0 * u / diag
                ),
            )
        }
        (b, u) => check(false, format!("rollout failed: balanced {:?}, unbalanced {:?}", b.err(), u.err())),
    }
}

// ---------------------------------------------------------------- criterion 8

fn bench_scenario(sc: &Scenario, ae: &Autoencoder, integ: &Integrator) -> BenchResult {
    let gt = &sc.split.test.first().unwrap_or(&sc.split.train[0]);
    let label = gt.scenario.rsplit('/').next().unwrap().to_string();
    let motion = sc.motion(&label);
    let k = (gt.len() / 2).max(2);
    let (x1, x2) = (&gt.frames[k - 1].x, &gt.frames[k - 2].x);
    let (z1, z2) = (ae.encode(x1), ae.encode(x2));
    let targets = anchor_targets(ae, motion.as_ref(), sc.rest(), k);
    let config = format!("{}|{:?}|{:?}", sc.spec.to_json(), ae.config, integ.config);
    bench(
        &BenchInputs {
            scenario: &sc.spec.name,
            object: &sc.object,
            params: &sc.spec.material,
            ae,
            integrator: integ,
            solver: &sc.spec.solver,
            dt: sc.spec.dt,
            x_prev: x1,
            x_prev2: x2,
            dirichlet: &motion.dirichlet(sc.rest(), k),
            z_prev: &z1,
            z_prev2: &z2,
            p: [&gt.frames[k].p, &gt.frames[k - 1].p, &gt.frames[k - 2].p],
            anchors: &targets,
            config: &config,
        },
        &BenchConfig { repeats: 100 },
    )
}

/// Scenario with its training sequences cut to `frames`, for timing only.
fn short_scenario(name: &str, frames: usize) -> Scenario {
    let mut spec = build_scenario(name).unwrap();
    for s in spec.sequences.iter_mut() {
        s.frames = frames;
    }
    spec.test_sequences.clear();
    let (object, anchors) = spec.object().unwrap();
    let train = generate_sequences(&spec, &spec.sequences[..1]).unwrap();
    spec.sequences.truncate(1);
    spec.split = subdyn::scenario::SplitRule::BySequence { held_out: vec![] };
    let split = DatasetSplit::new(&spec, train, vec![]);
    Scenario {
        spec,
        object,
        anchors,
        split,
    }
}

fn speed_ratios() -> Outcome {
    let mut results = Vec::new();
    let rods = rod_models();
    results.push(bench_scenario(&rods.sc, &rods.ae, &rods.full));
    let rot = rotation_models();
    results.push(bench_scenario(&rot.sc, &rot.ae, &rot.integ));
    let cloth = cloth_model();
    let cloth_int = cloth.sc.train_int(&cloth.ae, 1, true, true, false);
    results.push(bench_scenario(&cloth.sc, &cloth.ae, &cloth_int));
    let beam = beam_models();
    results.push(bench_scenario(&beam.sc, &beam.ae, &beam.noisy));
    for name in SCENARIO_NAMES {
        if results.iter().any(|r| r.scenario == name) {
            continue;
        }
        // only the layer sizes matter for timing, so these train briefly
        let sc = short_scenario(name, 60);
        let ae = sc.train_ae(2);
        let integ = sc.train_int(&ae, 1, true, true, false);
        results.push(bench_scenario(&sc, &ae, &integ));
    }
    let path = artifact_dir().join("bench.json");
    std::fs::write(&path, serde_json::to_string_pretty(&results).unwrap()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &results {
        let a = r.speedup >= 10.0;
        let b = r.total_ms < r.decoder_jvp_ms;
        ok &= a && b;
        parts.push(format!(
            "{}: total {:.3} ms, Newton {:.2} ms ({}x), JVP {:.3} ms",
            r.scenario,
            r.total_ms,
            r.newton_step_ms,
            r.speedup.round(),
            r.decoder_jvp_ms
        ));
    }
    check(ok, format!("{}; written to {}", parts.join("; "), path.display()))
}

// ---------------------------------------------------------------- criterion 9

fn generalization() -> Outcome {
    let m = rod_models();
    let diag = m.sc.diag();
    let mut ok = true;
    let mut parts = Vec::new();
    for label in ["speed-65", "speed-change-140-to-14"] {
        match roll(&m.sc, &m.ae, &m.full, label, 298) {
            Ok(r) => {
                let finite = r.frames.iter().flatten().all(|v| v.is_finite());
                let bc = max_of(&r.bc_residual);
                ok &= finite && bc < 0.05 * diag;
                parts.push(format!(
                    "{label}: finite={finite}, max BC residual {:.2e} m, RMSE {:.2}% of diag",
                    bc,
                    100.0 * mean(&r.rmse) / diag
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    check(ok, parts.join("; "))
}

// ---------------------------------------------------------------- criterion 10

struct RotationModels {
    sc: Scenario,
    ae: Autoencoder,
    integ: Integrator,
}

fn rotation_models() -> &'static RotationModels {
    static CELL: OnceLock<RotationModels> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let sc = Scenario::load("rod-rotation");
        let ae = sc.train_ae(ROTATION_AE_EPOCHS);
        let integ = sc.train_int(&ae, ROTATION_INT_EPOCHS, true, true, false);
        eprintln!("rod-rotation models ready in {:.0}s", t.elapsed().as_secs_f64());
        RotationModels { sc, ae, integ }
    })
}

fn kinetic_energy_check() -> Outcome {
    let m = rotation_models();
    let gt = &m.sc.split.test[0];
    let label = gt.scenario.rsplit('/').next().unwrap().to_string();
    let r = match roll(&m.sc, &m.ae, &m.integ, &label, gt.len() - 2) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                verdict: Verdict::Logged,
                detail: format!("{label}: rollout failed: {e}"),
            }
        }
    };
    let truth: Vec<Vec<f64>> = gt.frames.iter().map(|f| f.x.clone()).collect();
    let ke = mean(&metric_kinetic_energy(&r.frames, &m.sc.object.mass, m.sc.spec.dt));
    let ke_gt = mean(&metric_kinetic_energy(&truth, &m.sc.object.mass, m.sc.spec.dt));
    Outcome {
        verdict: Verdict::Logged,
        detail: format!(
            "{label}: mean kinetic energy rollout {ke:.3e} J vs ground truth {ke_gt:.3e} J (ratio {:.3}, {} the expected loss)",
            ke / ke_gt,
            if ke <= ke_gt { "shows" } else { "does not show" }
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("integrator oracle", particle_oracle),
        ("PD projection", pd_projection),
        ("autoencoder quality", autoencoder_quality),
        ("self-supervised stability", selfsup_stability),
        ("noise ablation", noise_ablation),
        ("balancing ablation", balancing_ablation),
        ("speed ratios", speed_ratios),
        ("generalization", generalization),
        ("kinetic energy (logged)", kinetic_energy_check),
    ];
    // ACCEPTANCE_ONLY=4,6 runs a subset
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut asserted = 0;
    let mut lines = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Outcome {
            verdict: Verdict::Fail,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ),
        });
        if !matches!(outcome.verdict, Verdict::Logged) {
            asserted += 1;
        }
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Logged => "LOG ",
        };
        let line = format!("criterion {:>2} {tag} {name}: {} [{:.0}s]", i + 1, outcome.detail, t.elapsed().as_secs_f64());
        println!("{line}");
        lines.push(line);
    }
    std::fs::write(artifact_dir().join("summary.txt"), lines.join("\n") + "\n").unwrap();
    println!("acceptance: {} of {asserted} asserted criteria passed", asserted - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
