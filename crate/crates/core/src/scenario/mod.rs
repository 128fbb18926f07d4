//! Built-in scenarios, boundary scripts, dataset generation and splits.

pub mod mesh;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::MaterialParams;
use crate::geometry::{CrossSection, GeometryError, SimObject, StateSequence, Topology};
use crate::solver::{simulate, BoundaryMotion, RigidMotion, SolverConfig, SolverError};

pub const SCENARIO_NAMES: [&str; 6] = [
    "rod-translation",
    "rod-rotation",
    "cloth-pinned",
    "beam-cantilever",
    "solid-swing",
    "bunny-ears-like",
];

/// Nominal rod-translation speeds are scaled by this factor (m/s per unit)
/// so that a speed of 140 stays within what a 20-vertex strand can follow.
pub const ROD_SPEED_UNIT: f64 = 0.004;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sequence `{sequence}`: {source}")]
    Solver {
        sequence: String,
        #[source]
        source: SolverError,
    },
    #[error("sequence `{sequence}` frame {frame}: Newton did not converge (|g| = {grad_norm:e}, tol {tolerance:e})")]
    NotConverged {
        sequence: String,
        frame: usize,
        grad_norm: f64,
        tolerance: f64,
    },
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RootLayout {
    Grid { nx: usize, ny: usize, spacing: f64 },
    Ring { count: usize, radius: f64 },
}

/// Procedural object generator. Each variant also fixes which vertices the
/// boundary script drives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologySpec {
    /// Driven vertices: strand roots.
    HangingRods {
        roots: RootLayout,
        vertices_per_strand: usize,
        edge_length: f64,
        radius: f64,
    },
    /// Driven vertices: the two top corners.
    ClothGrid {
        nx: usize,
        nz: usize,
        width: f64,
        height: f64,
        thickness: f64,
    },
    /// Box of `cells` voxels along x; driven vertices: the x = 0 face.
    BeamTetGrid { cells: [i64; 3], cell: f64 },
    /// Two cubic lobes joined by a one-voxel neck; driven vertices: the outer
    /// face of the first lobe.
    TwoLobeSolid { lobe: i64, cell: f64 },
    /// A head block with two upright ears; driven vertices: the whole head.
    EarsSolid { head: [i64; 3], ear_height: i64, cell: f64 },
}

pub struct BuiltObject {
    pub topology: Topology,
    pub positions: Vec<f64>,
    pub section: CrossSection,
    pub anchors: Vec<usize>,
}

impl TopologySpec {
    pub fn build(&self) -> BuiltObject {
        match self {
            TopologySpec::HangingRods {
                roots,
                vertices_per_strand,
                edge_length,
                radius,
            } => {
                let roots = match roots {
                    RootLayout::Grid { nx, ny, spacing } => mesh::root_grid(*nx, *ny, *spacing),
                    RootLayout::Ring { count, radius } => mesh::root_ring(*count, *radius),
                };
                let (topology, positions) = mesh::hanging_rods(&roots, *vertices_per_strand, *edge_length);
                let anchors = topology.strands().iter().map(|s| s.root()).collect();
                BuiltObject {
                    topology,
                    positions,
                    section: CrossSection::Rod { radius: *radius },
                    anchors,
                }
            }
            TopologySpec::ClothGrid {
                nx,
                nz,
                width,
                height,
                thickness,
            } => {
                let (topology, positions) = mesh::cloth_grid(*nx, *nz, *width, *height);
                BuiltObject {
                    topology,
                    positions,
                    section: CrossSection::Shell { thickness: *thickness },
                    anchors: vec![0, nx - 1],
                }
            }
            TopologySpec::BeamTetGrid { cells, cell } => {
                let (topology, positions, lattice) = mesh::voxel_tets(&mesh::voxel_box(cells[0], cells[1], cells[2]), *cell);
                let anchors = select(&lattice, |p| p[0] == 0);
                solid(topology, positions, anchors)
            }
            TopologySpec::TwoLobeSolid { lobe, cell } => {
                let n = *lobe;
                let mut cells = mesh::voxel_box(n, n, n);
                let mid = n / 2;
                cells.push([n, mid, mid]);
                cells.extend(mesh::voxel_box(n, n, n).into_iter().map(|c| [c[0] + n + 1, c[1], c[2]]));
                let (topology, positions, lattice) = mesh::voxel_tets(&cells, *cell);
                let anchors = select(&lattice, |p| p[0] == 0);
                solid(topology, positions, anchors)
            }
            TopologySpec::EarsSolid { head, ear_height, cell } => {
                let mut cells = mesh::voxel_box(head[0], head[1], head[2]);
                for x in [0, head[0] - 1] {
                    for z in 0..*ear_height {
                        cells.push([x, 0, head[2] + z]);
                    }
                }
                let (topology, positions, lattice) = mesh::voxel_tets(&cells, *cell);
                let top = head[2];
                let anchors = select(&lattice, |p| p[2] <= top);
                solid(topology, positions, anchors)
            }
        }
    }
}

fn select(lattice: &[[i64; 3]], pred: impl Fn(&[i64; 3]) -> bool) -> Vec<usize> {
    lattice.iter().enumerate().filter(|(_, p)| pred(p)).map(|(i, _)| i).collect()
}

fn solid(topology: Topology, positions: Vec<f64>, anchors: Vec<usize>) -> BuiltObject {
    BuiltObject {
        topology,
        positions,
        section: CrossSection::Solid,
        anchors,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedChange {
    pub at_frame: usize,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityKey {
    pub frame: usize,
    pub speed: f64,
}

/// Boundary motion of the driven vertices.
///
/// Translating scripts move the anchors by `d(t) = d(t-1) + v(t) dt` with
/// `d(0) = 0`; rotations turn them by `omega * t * dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BcScript {
    /// Constant speed along `direction`, flipping sign every `period_frames`.
    /// Parameters: the anchor velocity.
    TranslationReversing {
        speed: f64,
        period_frames: usize,
        direction: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        speed_change: Option<SpeedChange>,
    },
    /// Rotation about `axis` through `center` at `omega` rad/s.
    /// Parameters: `[omega]`.
    ConstantRotation { omega: f64, axis: [f64; 3], center: [f64; 3] },
    /// Translation along `direction` with a speed interpolated linearly between
    /// keys and held constant outside them. Parameters: the displacement.
    LinearTrajectory { direction: [f64; 3], keys: Vec<VelocityKey> },
    /// Parameters: `[0]`.
    Static,
}

impl BcScript {
    pub fn bc_dim(&self) -> usize {
        match self {
            BcScript::TranslationReversing { .. } | BcScript::LinearTrajectory { .. } => 3,
            BcScript::ConstantRotation { .. } | BcScript::Static => 1,
        }
    }

    /// Anchor velocity at frame `t` for translating scripts.
    fn velocity(&self, t: usize) -> Vector3<f64> {
        match self {
            BcScript::TranslationReversing {
                speed,
                period_frames,
                direction,
                speed_change,
            } => {
                let s = match speed_change {
                    Some(c) if t >= c.at_frame => c.speed,
                    _ => *speed,
                };
                let sign = if (t / period_frames.max(&1)) % 2 == 0 { 1.0 } else { -1.0 };
                Vector3::from(*direction).normalize() * (sign * s)
            }
            BcScript::LinearTrajectory { direction, keys } => {
                Vector3::from(*direction).normalize() * interpolate_speed(keys, t)
            }
            _ => Vector3::zeros(),
        }
    }

    fn displacement(&self, t: usize, dt: f64) -> Vector3<f64> {
        (1..=t).fold(Vector3::zeros(), |d, s| d + self.velocity(s) * dt)
    }

    pub fn placement(&self, t: usize, dt: f64) -> RigidMotion {
        match self {
            BcScript::ConstantRotation { omega, axis, center } => {
                RigidMotion::rotation_about(Vector3::from(*axis), omega * t as f64 * dt, Vector3::from(*center))
            }
            BcScript::Static => RigidMotion::identity(),
            _ => RigidMotion::translation(self.displacement(t, dt)),
        }
    }

    pub fn params_at(&self, t: usize, dt: f64) -> Vec<f64> {
        match self {
            BcScript::TranslationReversing { .. } => self.velocity(t).as_slice().to_vec(),
            BcScript::LinearTrajectory { .. } => self.displacement(t, dt).as_slice().to_vec(),
            BcScript::ConstantRotation { omega, .. } => vec![*omega],
            BcScript::Static => vec![0.0],
        }
    }
}

fn interpolate_speed(keys: &[VelocityKey], t: usize) -> f64 {
    match keys {
        [] => 0.0,
        [first, ..] if t <= first.frame => first.speed,
        _ => {
            for w in keys.windows(2) {
                if t <= w[1].frame {
                    let span = (w[1].frame - w[0].frame).max(1) as f64;
                    let a = (t - w[0].frame) as f64 / span;
                    return w[0].speed + a * (w[1].speed - w[0].speed);
                }
            }
            keys[keys.len() - 1].speed
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub label: String,
    pub script: BcScript,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitRule {
    /// Sequences listed in `held_out` plus all `test_sequences` are test
    /// data; the remaining `sequences` train.
    BySequence { held_out: Vec<usize> },
    /// Every sequence contributes its first `fraction` of frames to training
    /// and is kept whole for testing.
    ByPrefix { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub topology: TopologySpec,
    pub material: MaterialParams,
    pub dt: f64,
    pub bc_dim: usize,
    /// Default frame count for sequences that do not override it.
    pub frames: usize,
    pub sequences: Vec<SequenceSpec>,
    #[serde(default)]
    pub test_sequences: Vec<SequenceSpec>,
    pub split: SplitRule,
    pub latent_dim: usize,
    /// Dirichlet penalty weight used by the learned integrator; `None` means
    /// the driven vertices are set directly from the script.
    pub penalty_weight: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt = {}", self.dt));
        }
        if self.frames < 3 {
            return bad(format!("frames = {} < 3", self.frames));
        }
        self.material.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for s in self.sequences.iter().chain(&self.test_sequences) {
            if s.script.bc_dim() != self.bc_dim {
                return bad(format!("sequence `{}` has bc_dim {} but the scenario declares {}", s.label, s.script.bc_dim(), self.bc_dim));
            }
            if s.frames < 3 {
                return bad(format!("sequence `{}` has {} frames", s.label, s.frames));
            }
        }
        if let SplitRule::BySequence { held_out } = &self.split {
            if held_out.iter().any(|&i| i >= self.sequences.len()) {
                return bad(format!("held-out index out of range in {held_out:?}"));
            }
        }
        if let SplitRule::ByPrefix { fraction } = self.split {
            for s in &self.sequences {
                let b = prefix_boundary(s.frames, fraction);
                if b < 3 || b >= s.frames {
                    return bad(format!("prefix fraction {fraction} does not split `{}` strictly inside", s.label));
                }
            }
        }
        if self.latent_dim == 0 {
            return bad("latent_dim = 0".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn object(&self) -> Result<(SimObject, Vec<usize>), ScenarioError> {
        let b = self.topology.build();
        let obj = SimObject::new(b.topology, &b.positions, self.material.density, b.section)?;
        Ok((obj, b.anchors))
    }

    pub fn boundary<'a>(&self, anchors: &'a [usize], script: &'a BcScript) -> ScriptedBoundary<'a> {
        ScriptedBoundary {
            anchors,
            script,
            dt: self.dt,
        }
    }
}

pub fn prefix_boundary(frames: usize, fraction: f64) -> usize {
    (frames as f64 * fraction).round() as usize
}

/// Boundary parameter vector of `script` at frame `t`.
pub fn bc_params_at(spec: &ScenarioSpec, script: &BcScript, t: usize) -> Vec<f64> {
    script.params_at(t, spec.dt)
}

/// A script bound to the vertices it drives.
pub struct ScriptedBoundary<'a> {
    pub anchors: &'a [usize],
    pub script: &'a BcScript,
    pub dt: f64,
}

impl BoundaryMotion for ScriptedBoundary<'_> {
    fn constrained(&self) -> &[usize] {
        self.anchors
    }
    fn placement(&self, t: usize) -> RigidMotion {
        self.script.placement(t, self.dt)
    }
    fn bc_params(&self, t: usize) -> Vec<f64> {
        self.script.params_at(t, self.dt)
    }
    fn bc_dim(&self) -> usize {
        self.script.bc_dim()
    }
}

fn rod_material() -> MaterialParams {
    MaterialParams {
        youngs_modulus: 4e7,
        poisson_ratio: 0.3,
        density: 1320.0,
        gravity: [0.0, 0.0, -9.81],
    }
}

fn solid_material() -> MaterialParams {
    MaterialParams {
        youngs_modulus: 1e7,
        poisson_ratio: 0.48,
        density: 1000.0,
        gravity: [0.0, 0.0, -9.81],
    }
}

fn rod_objects(roots: RootLayout) -> TopologySpec {
    TopologySpec::HangingRods {
        roots,
        vertices_per_strand: 20,
        edge_length: 0.01,
        radius: 7e-4,
    }
}

/// Rod-translation script at nominal speed `speed` (see [`ROD_SPEED_UNIT`]).
pub fn rod_translation_script(speed: f64) -> BcScript {
    BcScript::TranslationReversing {
        speed: speed * ROD_SPEED_UNIT,
        period_frames: 10,
        direction: [1.0, 0.0, 0.0],
        speed_change: None,
    }
}

/// Rod-rotation script at `rev_per_s` revolutions per second about +z.
pub fn rod_rotation_script(rev_per_s: f64) -> BcScript {
    BcScript::ConstantRotation {
        omega: rev_per_s * 2.0 * std::f64::consts::PI,
        axis: [0.0, 0.0, 1.0],
        center: [0.0; 3],
    }
}

fn swing_keys(period: usize, speeds: &[f64]) -> Vec<VelocityKey> {
    speeds
        .iter()
        .enumerate()
        .map(|(i, &speed)| VelocityKey { frame: i * period, speed })
        .collect()
}

pub fn build_scenario(name: &str) -> Result<ScenarioSpec, ScenarioError> {
    let dt = 1.0 / 30.0;
    let seq = |label: String, script: BcScript, frames: usize| SequenceSpec { label, script, frames };
    let spec = match name {
        "rod-translation" => {
            let frames = 100;
            ScenarioSpec {
                name: name.into(),
                topology: rod_objects(RootLayout::Grid {
                    nx: 5,
                    ny: 2,
                    spacing: 0.02,
                }),
                material: rod_material(),
                dt,
                bc_dim: 3,
                frames,
                sequences: (1..=12)
                    .map(|k| {
                        let v = 10.0 * k as f64;
                        seq(format!("speed-{v}"), rod_translation_script(v), frames)
                    })
                    .collect(),
                test_sequences: vec![
                    seq("speed-10-long".into(), rod_translation_script(10.0), 300),
                    seq("speed-65".into(), rod_translation_script(65.0), 300),
                    seq(
                        "speed-change-140-to-14".into(),
                        BcScript::TranslationReversing {
                            speed: 140.0 * ROD_SPEED_UNIT,
                            period_frames: 10,
                            direction: [1.0, 0.0, 0.0],
                            speed_change: Some(SpeedChange {
                                at_frame: 150,
                                speed: 14.0 * ROD_SPEED_UNIT,
                            }),
                        },
                        300,
                    ),
                ],
                split: SplitRule::BySequence { held_out: vec![] },
                latent_dim: 4,
                penalty_weight: None,
                solver: SolverConfig::default(),
            }
        }
        "rod-rotation" => {
            let frames = 100;
            let omegas = [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];
            ScenarioSpec {
                name: name.into(),
                topology: rod_objects(RootLayout::Ring { count: 10, radius: 0.1 }),
                material: rod_material(),
                dt,
                bc_dim: 1,
                frames,
                sequences: omegas
                    .iter()
                    .map(|&w| seq(format!("omega-{w}"), rod_rotation_script(w), frames))
                    .collect(),
                test_sequences: vec![],
                split: SplitRule::BySequence { held_out: vec![3] },
                latent_dim: 4,
                penalty_weight: None,
                solver: SolverConfig::default(),
            }
        }
        "cloth-pinned" => {
            let frames = 300;
            ScenarioSpec {
                name: name.into(),
                topology: TopologySpec::ClothGrid {
                    nx: 8,
                    nz: 8,
                    width: 0.5,
                    height: 0.5,
                    thickness: 0.003,
                },
                material: MaterialParams {
                    youngs_modulus: 1e6,
                    poisson_ratio: 0.45,
                    density: 1500.0,
                    gravity: [0.0, 0.0, -9.81],
                },
                dt,
                bc_dim: 3,
                frames,
                sequences: vec![seq(
                    "swing".into(),
                    BcScript::LinearTrajectory {
                        direction: [0.0, 1.0, 0.0],
                        keys: swing_keys(30, &[0.0, 0.4, -0.4, 0.3, -0.3, 0.5, -0.5, 0.35, -0.35, 0.45, 0.0]),
                    },
                    frames,
                )],
                test_sequences: vec![],
                split: SplitRule::ByPrefix { fraction: 0.5 },
                latent_dim: 4,
                penalty_weight: Some(1e5),
                solver: SolverConfig::default(),
            }
        }
        "beam-cantilever" => {
            let frames = 300;
            ScenarioSpec {
                name: name.into(),
                topology: TopologySpec::BeamTetGrid {
                    cells: [11, 3, 3],
                    cell: 0.1,
                },
                material: solid_material(),
                dt,
                bc_dim: 1,
                frames,
                sequences: vec![seq("sag".into(), BcScript::Static, frames)],
                test_sequences: vec![],
                split: SplitRule::ByPrefix { fraction: 1.0 / 3.0 },
                latent_dim: 4,
                penalty_weight: Some(1e5),
                solver: SolverConfig::default(),
            }
        }
        "solid-swing" => {
            let frames = 200;
            ScenarioSpec {
                name: name.into(),
                topology: TopologySpec::TwoLobeSolid { lobe: 3, cell: 0.05 },
                material: solid_material(),
                dt,
                bc_dim: 3,
                frames,
                sequences: vec![seq(
                    "swing".into(),
                    BcScript::LinearTrajectory {
                        direction: [0.0, 1.0, 0.0],
                        keys: swing_keys(25, &[0.0, 0.3, -0.3, 0.4, -0.4, 0.2, -0.2, 0.35, -0.35]),
                    },
                    frames,
                )],
                test_sequences: vec![],
                split: SplitRule::ByPrefix { fraction: 0.6 },
                latent_dim: 12,
                penalty_weight: Some(1e5),
                solver: SolverConfig::default(),
            }
        }
        "bunny-ears-like" => {
            let frames = 200;
            ScenarioSpec {
                name: name.into(),
                topology: TopologySpec::EarsSolid {
                    head: [4, 1, 2],
                    ear_height: 4,
                    cell: 0.04,
                },
                material: solid_material(),
                dt,
                bc_dim: 3,
                frames,
                sequences: vec![seq(
                    "shake".into(),
                    BcScript::LinearTrajectory {
                        direction: [1.0, 0.0, 0.0],
                        keys: swing_keys(20, &[0.0, 0.3, -0.3, 0.25, -0.25, 0.4, -0.4, 0.3, -0.3, 0.2, 0.0]),
                    },
                    frames,
                )],
                test_sequences: vec![],
                split: SplitRule::ByPrefix { fraction: 0.6 },
                latent_dim: 8,
                penalty_weight: Some(1e5),
                solver: SolverConfig::default(),
            }
        }
        other => return Err(ScenarioError::UnknownScenario(other.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}

/// Simulates `sequences` of `spec`, requiring every Newton solve to converge.
pub fn generate_sequences(spec: &ScenarioSpec, sequences: &[SequenceSpec]) -> Result<Vec<StateSequence>, ScenarioError> {
    spec.validate()?;
    let (object, anchors) = spec.object()?;
    sequences
        .iter()
        .map(|s| {
            let name = format!("{}/{}", spec.name, s.label);
            let boundary = spec.boundary(&anchors, &s.script);
            let out = simulate(&name, &object, &spec.material, &boundary, s.frames, spec.dt, &spec.solver).map_err(|e| {
                ScenarioError::Solver {
                    sequence: name.clone(),
                    source: e,
                }
            })?;
            if let Some((i, st)) = out.stats.iter().enumerate().find(|(_, st)| !st.converged) {
                return Err(ScenarioError::NotConverged {
                    sequence: name,
                    frame: i + 2,
                    grad_norm: st.grad_norm,
                    tolerance: st.tolerance,
                });
            }
            Ok(out.sequence)
        })
        .collect()
}

/// One sequence per scripted training sequence of `spec`.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<Vec<StateSequence>, ScenarioError> {
    generate_sequences(spec, &spec.sequences)
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<StateSequence>,
    pub test: Vec<StateSequence>,
    pub rule: SplitRule,
}

impl DatasetSplit {
    /// Splits generated data. `extra_test` holds the simulated
    /// `test_sequences` for a by-sequence rule and is ignored for a prefix rule.
    pub fn new(spec: &ScenarioSpec, dataset: Vec<StateSequence>, extra_test: Vec<StateSequence>) -> Self {
        match &spec.split {
            SplitRule::BySequence { held_out } => {
                let (mut test, mut train) = (Vec::new(), Vec::new());
                for (i, s) in dataset.into_iter().enumerate() {
                    if held_out.contains(&i) {
                        test.push(s);
                    } else {
                        train.push(s);
                    }
                }
                test.extend(extra_test);
                Self {
                    train,
                    test,
                    rule: spec.split.clone(),
                }
            }
            &SplitRule::ByPrefix { fraction } => {
                let train = dataset
                    .iter()
                    .map(|s| {
                        let mut p = s.clone();
                        p.frames.truncate(prefix_boundary(s.len(), fraction));
                        p
                    })
                    .collect();
                Self {
                    train,
                    test: dataset,
                    rule: spec.split.clone(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vertex;

    #[test]
    fn every_builtin_validates_and_builds() {
        for name in SCENARIO_NAMES {
            let spec = build_scenario(name).unwrap();
            let (obj, anchors) = spec.object().unwrap();
            assert!(!anchors.is_empty(), "{name}");
            assert!(anchors.iter().all(|&a| a < obj.n_vertices()));
            let back = ScenarioSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back, spec);
        }
        assert!(matches!(build_scenario("teapot"), Err(ScenarioError::UnknownScenario(_))));
    }

    #[test]
    fn sequence_counts() {
        assert_eq!(build_scenario("rod-translation").unwrap().sequences.len(), 12);
        assert_eq!(build_scenario("rod-rotation").unwrap().sequences.len(), 7);
        let beam = build_scenario("beam-cantilever").unwrap();
        assert_eq!(beam.sequences[0].script, BcScript::Static);
        let SplitRule::ByPrefix { fraction } = beam.split else { panic!() };
        assert_eq!(prefix_boundary(beam.frames, fraction), 100);
    }

    #[test]
    fn reversing_translation_flips_every_period() {
        let spec = build_scenario("rod-translation").unwrap();
        let s = rod_translation_script(10.0);
        let v = 10.0 * ROD_SPEED_UNIT;
        for t in 0..10 {
            assert_eq!(bc_params_at(&spec, &s, t), vec![v, 0.0, 0.0]);
        }
        for t in 10..20 {
            assert_eq!(bc_params_at(&spec, &s, t), vec![-v, 0.0, 0.0]);
        }
        assert_eq!(bc_params_at(&spec, &BcScript::Static, 7), vec![0.0]);
        let r = rod_rotation_script(0.2);
        assert_eq!(bc_params_at(&spec, &r, 0), bc_params_at(&spec, &r, 99));
    }

    #[test]
    fn params_reconstruct_from_anchor_motion() {
        let dt = 1.0 / 30.0;
        let s = rod_translation_script(70.0);
        for t in 1..60 {
            let d1 = s.placement(t, dt).translation;
            let d0 = s.placement(t - 1, dt).translation;
            let v = (d1 - d0) / dt;
            let p = s.params_at(t, dt);
            assert!((v - Vector3::from_column_slice(&p)).amax() < 1e-10);
        }
        let c = build_scenario("cloth-pinned").unwrap().sequences[0].script.clone();
        for t in 0..300 {
            let d = c.placement(t, dt).translation;
            assert!((d - Vector3::from_column_slice(&c.params_at(t, dt))).amax() < 1e-12);
        }
    }

    #[test]
    fn speed_keys_interpolate() {
        let keys = swing_keys(10, &[0.0, 1.0, -1.0]);
        assert_eq!(interpolate_speed(&keys, 5), 0.5);
        assert_eq!(interpolate_speed(&keys, 15), 0.0);
        assert_eq!(interpolate_speed(&keys, 40), -1.0);
    }

    #[test]
    fn static_equilibrium_dataset_is_constant() {
        let mut spec = build_scenario("beam-cantilever").unwrap();
        spec.material.gravity = [0.0; 3];
        spec.frames = 12;
        spec.sequences[0].frames = 12;
        let data = generate_dataset(&spec).unwrap();
        let x0 = &data[0].frames[0].x;
        for f in &data[0].frames {
            assert_eq!(&f.x, x0);
        }
    }

    #[test]
    fn rod_dataset_follows_script() {
        let mut spec = build_scenario("rod-translation").unwrap();
        let mut s = spec.sequences[11].clone();
        s.frames = 25;
        spec.sequences = vec![s.clone()];
        let data = generate_dataset(&spec).unwrap();
        let (obj, anchors) = spec.object().unwrap();
        for f in &data[0].frames {
            let m = s.script.placement(f.t, spec.dt);
            for &a in &anchors {
                let want = m.apply(&vertex(&obj.rest.positions, a));
                assert_eq!(vertex(&f.x, a), want);
            }
            assert_eq!(f.p, s.script.params_at(f.t, spec.dt));
        }
    }

    #[test]
    fn prefix_split() {
        let spec = build_scenario("cloth-pinned").unwrap();
        let mut seq = StateSequence {
            scenario: "x".into(),
            dt: spec.dt,
            bc_dim: 3,
            topology: spec.object().unwrap().0.topology,
            frames: vec![],
        };
        for t in 0..300 {
            seq.frames.push(crate::geometry::Frame {
                t,
                x: vec![],
                p: vec![],
            });
        }
        let split = DatasetSplit::new(&spec, vec![seq], vec![]);
        assert_eq!(split.train[0].len(), 150);
        assert_eq!(split.test[0].len(), 300);
    }
}
