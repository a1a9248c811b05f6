//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrections::{CorrectionModel, DirectionalCnn, ForceMode};
use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;
use crate::optimize::OptimizerConfig;
use crate::plants::io::Field;
use crate::plants::{BoundaryCondition, BoundarySpec, Plant, PlantConfig, PlantKind};
use crate::solver::NewtonConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    Cartesian {
        ni: usize,
        nj: usize,
        #[serde(default = "one")]
        lx: f64,
        #[serde(default = "one")]
        ly: f64,
        #[serde(default = "one")]
        stretch_j: f64,
    },
    BumpChannel {
        ni: usize,
        nj: usize,
        #[serde(default = "default_bump_height")]
        bump_height: f64,
        #[serde(default = "default_bump_width")]
        bump_width: f64,
    },
    File {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

fn default_bump_height() -> f64 {
    0.1
}

fn default_bump_width() -> f64 {
    0.3
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec::BumpChannel {
            ni: 16,
            nj: 8,
            bump_height: default_bump_height(),
            bump_width: default_bump_width(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySetup {
    /// Inflow, outflow, lower wall and upper far field.
    Channel {
        #[serde(default)]
        angle_deg: f64,
        #[serde(default = "one")]
        pressure_ratio: f64,
    },
    /// One condition on all four edges.
    Uniform { bc: BoundaryCondition },
    Explicit { edges: BoundarySpec },
}

impl Default for BoundarySetup {
    fn default() -> Self {
        BoundarySetup::Channel {
            angle_deg: 0.0,
            pressure_ratio: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpecKind {
    Zero,
    Field,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSpec {
    /// Defaults to the mode matching the plant.
    pub mode: Option<ForceMode>,
    pub model: ModelSpecKind,
    /// Initial value of every field parameter.
    pub initial: f64,
    /// Field dump with an `alpha` column.
    pub theta_file: Option<PathBuf>,
    /// Network checkpoint.
    pub checkpoint: Option<PathBuf>,
    pub k1: usize,
    pub k2: usize,
    pub seed: u64,
}

impl Default for CorrectionSpec {
    fn default() -> Self {
        CorrectionSpec {
            mode: None,
            model: ModelSpecKind::Zero,
            initial: 0.0,
            theta_file: None,
            checkpoint: None,
            k1: 3,
            k2: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Residual of a measured full state.
    FullState,
    /// Observations of a converged state.
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedSet {
    Velocities,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Measured state dump (full-state objective).
    pub measured: Option<PathBuf>,
    /// Observation file (partial objective).
    pub observations: Option<PathBuf>,
    /// What `twin` writes to the observation file.
    pub observe: ObservedSet,
    /// Regularization weight on `||alpha||^2`, relative to the initial loss
    /// per unit area and squared correction scale.
    pub gamma: f64,
    /// Truth dump used to report the recovery error.
    pub truth: Option<PathBuf>,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::FullState,
            measured: None,
            observations: None,
            observe: ObservedSet::Velocities,
            gamma: 0.0,
            truth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthShape {
    Zero,
    Constant {
        value: f64,
    },
    GaussianBump {
        center: [f64; 2],
        width: f64,
        amplitude: f64,
    },
}

impl TruthShape {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match *self {
            TruthShape::Zero => 0.0,
            TruthShape::Constant { value } => value,
            TruthShape::GaussianBump { center, width, amplitude } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                amplitude * (-(dx * dx + dy * dy) / (width * width)).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinSpec {
    pub truth: TruthShape,
    /// Relative standard deviation of the Gaussian noise on observations.
    pub noise: f64,
}

impl Default for TwinSpec {
    fn default() -> Self {
        TwinSpec {
            truth: TruthShape::Zero,
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Dataset directory read by `train`.
    pub path: Option<PathBuf>,
    pub n: usize,
    /// Attempts allowed per requested sample before giving up.
    pub attempts_per_sample: usize,
    pub angle_deg: [f64; 2],
    pub pressure_ratio: [f64; 2],
    pub bump_height: [f64; 2],
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            path: None,
            n: 8,
            attempts_per_sample: 4,
            angle_deg: [-10.0, 10.0],
            pressure_ratio: [0.9, 1.1],
            bump_height: [0.0, 0.15],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub train_fraction: f64,
    /// Number of networks differing only by initialization seed.
    pub ensemble: usize,
    /// Samples per mini-batch; 0 means the whole training set.
    pub batch_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            train_fraction: 0.8,
            ensemble: 1,
            batch_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckGradSpec {
    pub samples: usize,
    pub steps: Vec<f64>,
    pub tol: f64,
}

impl Default for CheckGradSpec {
    fn default() -> Self {
        CheckGradSpec {
            samples: 5,
            steps: vec![1e-5, 1e-6],
            tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub plant: PlantKind,
    pub physics: PlantConfig,
    pub mesh: MeshSpec,
    pub boundary: BoundarySetup,
    pub correction: CorrectionSpec,
    pub newton: NewtonConfig,
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerConfig,
    pub twin: TwinSpec,
    pub dataset: DatasetSpec,
    pub train: TrainSpec,
    pub checkgrad: CheckGradSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            plant: PlantKind::NsSa,
            physics: PlantConfig::default(),
            mesh: MeshSpec::default(),
            boundary: BoundarySetup::default(),
            correction: CorrectionSpec::default(),
            newton: NewtonConfig::default(),
            objective: ObjectiveSpec::default(),
            optimizer: OptimizerConfig::default(),
            twin: TwinSpec::default(),
            dataset: DatasetSpec::default(),
            train: TrainSpec::default(),
            checkgrad: CheckGradSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, defaults included.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        if let MeshSpec::File { path } = &mut self.mesh {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        fix(&mut self.correction.theta_file);
        fix(&mut self.correction.checkpoint);
        fix(&mut self.objective.measured);
        fix(&mut self.objective.observations);
        fix(&mut self.objective.truth);
        fix(&mut self.dataset.path);
    }

    /// Checks value ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.newton.validate()?;
        let mut files: Vec<&Path> = Vec::new();
        if let MeshSpec::File { path } = &self.mesh {
            files.push(path);
        }
        for p in [
            &self.correction.theta_file,
            &self.correction.checkpoint,
            &self.objective.measured,
            &self.objective.observations,
            &self.objective.truth,
        ]
        .into_iter()
        .flatten()
        {
            files.push(p);
        }
        for f in files {
            if !f.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        if !(self.objective.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} is negative", self.objective.gamma)));
        }
        if !(self.twin.noise >= 0.0) {
            return Err(Error::Config(format!("noise level {} is negative", self.twin.noise)));
        }
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1]",
                self.train.train_fraction
            )));
        }
        if self.optimizer.max_iters == 0 {
            return Err(Error::Config("optimizer max_iters must be at least 1".into()));
        }
        if let Some(mode) = self.correction.mode {
            if mode.plant_kind() != self.plant {
                return Err(Error::Config(format!("{mode:?} correction needs the {:?} plant", mode.plant_kind())));
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> ForceMode {
        self.correction.mode.unwrap_or(match self.plant {
            PlantKind::Scalar => ForceMode::ScalarSource,
            PlantKind::Ns => ForceMode::MuT,
            PlantKind::NsSa => ForceMode::Beta,
        })
    }

    pub fn build_mesh(&self) -> Result<StructuredMesh> {
        match &self.mesh {
            MeshSpec::Cartesian { ni, nj, lx, ly, stretch_j } => StructuredMesh::build_cartesian(*ni, *nj, *lx, *ly, *stretch_j),
            MeshSpec::BumpChannel {
                ni,
                nj,
                bump_height,
                bump_width,
            } => StructuredMesh::build_bump_channel(*ni, *nj, *bump_height, *bump_width),
            MeshSpec::File { path } => {
                let f = std::fs::File::open(path)?;
                StructuredMesh::read_from(std::io::BufReader::new(f))
            }
        }
    }

    pub fn build_boundary(&self) -> BoundarySpec {
        match &self.boundary {
            BoundarySetup::Channel {
                angle_deg,
                pressure_ratio,
            } => BoundarySpec::channel(&self.physics, *angle_deg, *pressure_ratio),
            BoundarySetup::Uniform { bc } => BoundarySpec::uniform(bc.clone()),
            BoundarySetup::Explicit { edges } => edges.clone(),
        }
    }

    /// The plant, with the ghost depth raised to the stencil radius.
    pub fn build_plant(&self) -> Result<Plant> {
        let mut mesh = self.build_mesh()?;
        let r = self.physics.stencil_radius;
        if mesh.g < r {
            mesh = mesh.with_ghost_depth(r)?;
        }
        Plant::new(self.plant, self.physics.clone(), mesh, self.build_boundary())
    }

    /// The correction described by `[correction]`, with parameters loaded
    /// from file when given.
    pub fn build_model(&self, plant: &Plant) -> Result<CorrectionModel> {
        let mode = self.mode();
        let spec = &self.correction;
        match spec.model {
            ModelSpecKind::Zero => Ok(CorrectionModel::zero(mode)),
            ModelSpecKind::Field => {
                let theta = match &spec.theta_file {
                    Some(p) => read_alpha(p, plant)?,
                    None => vec![spec.initial; plant.layout.n_interior()],
                };
                CorrectionModel::field(plant, mode, theta)
            }
            ModelSpecKind::Cnn => {
                let (net, theta) = match &spec.checkpoint {
                    Some(p) => {
                        let f = std::fs::File::open(p)?;
                        let (net, theta) = DirectionalCnn::read_checkpoint(std::io::BufReader::new(f))?;
                        (net, Some(theta))
                    }
                    None => (self.fresh_network(plant, spec.seed)?, None),
                };
                CorrectionModel::cnn(plant, mode, net, theta)
            }
        }
    }

    /// Untrained network; in eddy-viscosity mode its output is scaled by the
    /// laminar viscosity.
    pub fn fresh_network(&self, plant: &Plant, seed: u64) -> Result<DirectionalCnn> {
        let mode = self.mode();
        let mut net = DirectionalCnn::new(plant, self.correction.k1, self.correction.k2, mode == ForceMode::MuT, seed)?;
        if mode == ForceMode::MuT {
            net.output_scale = plant.config.mu();
        }
        Ok(net)
    }
}

/// The `alpha` column of a field dump, checked against the plant's grid.
pub fn read_alpha(path: &Path, plant: &Plant) -> Result<Vec<f64>> {
    let field = Field::load(path)?;
    if field.ni != plant.layout.ni || field.nj != plant.layout.nj {
        return Err(Error::Config(format!(
            "{} holds a {}x{} field, the mesh is {}x{}",
            path.display(),
            field.ni,
            field.nj,
            plant.layout.ni,
            plant.layout.nj
        )));
    }
    field
        .column("alpha")
        .ok_or_else(|| Error::Config(format!("{} has no alpha column", path.display())))
}
