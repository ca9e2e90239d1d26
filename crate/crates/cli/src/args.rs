//! Command-line flags and the fully resolved configuration of every subcommand.
//!
//! Flags are all optional so that a config file can supply any of them; the
//! `*Config` structs carry the defaults and are what gets written next to outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eit_manifold::baseline::DEFAULT_TV_SEARCH_STEPS;
use eit_manifold::dataset::DatasetConfig;
use eit_manifold::geometry::{DomainShape, MeshSpec};
use eit_manifold::phantom::Family;
use eit_manifold::pipeline::{ComparisonConfig, DEFAULT_GRID_RESOLUTION};
use eit_manifold::regressor::{DEFAULT_EPOCHS as REGRESSOR_EPOCHS, DEFAULT_HIDDEN};
use eit_manifold::vae::{KlFormula, TrainConfig, DEFAULT_LATENT};
use eit_manifold::workbench::WorkbenchConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "eitm", version, about = "Time-difference EIT simulation, baselines and learned manifold reconstruction")]
pub struct Cli {
    /// JSON file with option values; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 gives bit-exact reruns.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default: a subdirectory of $EITM_OUTPUT_ROOT or ./eitm-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the mesh, electrode layout and pixel grid and write them out.
    MeshGen(MeshFlags),
    /// Sample phantoms and simulate their difference frames.
    Simulate(SimulateFlags),
    /// Generate a paired image/frame training corpus.
    MakeDataset(DatasetFlags),
    /// Train the variational autoencoder on a dataset's images.
    TrainVae(TrainVaeFlags),
    /// Train the frame-to-latent regressor against a trained autoencoder.
    TrainRegressor(TrainRegressorFlags),
    /// Reconstruct images from frames with trained models.
    Reconstruct(ReconstructFlags),
    /// Reconstruct frames with Tikhonov or total-variation regularization.
    Baseline(BaselineFlags),
    /// Score the learned method against the baselines on fresh phantoms.
    Compare(CompareFlags),
    /// Latent grid, axis walks and interpolation mosaics of a trained autoencoder.
    VisualizeManifold(ManifoldFlags),
    /// Data distance against reconstruction distance on phantom pairs.
    StabilityProbe(StabilityFlags),
    /// Run the property suite; exits 2 if any check fails.
    Verify(MeshFlags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MeshGen(_) => "mesh-gen",
            Command::Simulate(_) => "simulate",
            Command::MakeDataset(_) => "make-dataset",
            Command::TrainVae(_) => "train-vae",
            Command::TrainRegressor(_) => "train-regressor",
            Command::Reconstruct(_) => "reconstruct",
            Command::Baseline(_) => "baseline",
            Command::Compare(_) => "compare",
            Command::VisualizeManifold(_) => "visualize-manifold",
            Command::StabilityProbe(_) => "stability-probe",
            Command::Verify(_) => "verify",
        }
    }
}

pub fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

#[derive(Debug, Default, Args, Serialize)]
pub struct MeshFlags {
    /// Domain shape: disk or thorax.
    #[arg(long)]
    pub shape: Option<String>,
    /// Width/height ratio of the thorax ellipse.
    #[arg(long)]
    pub aspect: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Target element count.
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long)]
    pub electrodes: Option<usize>,
    /// Fraction of the boundary covered by electrodes.
    #[arg(long)]
    pub coverage: Option<f64>,
    /// Pixel grid side length.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Boundary filter regularization scale.
    #[arg(long)]
    pub filter_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub shape: String,
    pub aspect: f64,
    pub radius: f64,
    pub elements: usize,
    pub electrodes: usize,
    pub coverage: f64,
    pub grid: usize,
    pub filter_scale: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        let wb = WorkbenchConfig::default();
        let (aspect, radius) = match wb.mesh.shape {
            DomainShape::Thorax { aspect, radius } => (aspect, radius),
            DomainShape::Disk { radius } => (1.0, radius),
        };
        Self {
            shape: "thorax".into(),
            aspect,
            radius,
            elements: wb.mesh.target_elements,
            electrodes: wb.mesh.electrodes,
            coverage: wb.mesh.coverage,
            grid: wb.grid,
            filter_scale: wb.filter_scale,
        }
    }
}

impl MeshParams {
    pub fn workbench(&self) -> Result<WorkbenchConfig, CliError> {
        let shape = match self.shape.as_str() {
            "disk" => DomainShape::Disk { radius: self.radius },
            "thorax" => DomainShape::Thorax {
                aspect: self.aspect,
                radius: self.radius,
            },
            other => return Err(CliError::Usage(format!("shape must be disk or thorax, got {other:?}"))),
        };
        Ok(WorkbenchConfig {
            mesh: MeshSpec {
                shape,
                target_elements: self.elements,
                electrodes: self.electrodes,
                coverage: self.coverage,
            },
            grid: self.grid,
            filter_scale: self.filter_scale,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshFlags,
    /// Phantom family: normal, obese or mixed.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise std relative to frame RMS; 0 for clean frames.
    #[arg(long)]
    pub noise_level: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub mesh: MeshParams,
    pub family: String,
    pub count: usize,
    pub seed: u64,
    pub noise_level: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            mesh: MeshParams::default(),
            family: "normal".into(),
            count: 8,
            seed: 1,
            noise_level: 0.05,
        }
    }
}

impl SimulateConfig {
    pub fn family(&self) -> Result<Family, CliError> {
        parse(&self.family, "family")
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshFlags,
    /// Number of base phantoms.
    #[arg(long)]
    pub n_base: Option<usize>,
    /// Noise replicates per phantom.
    #[arg(long)]
    pub n_noise: Option<usize>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub family: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRunConfig {
    #[serde(flatten)]
    pub mesh: MeshParams,
    pub n_base: usize,
    pub n_noise: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub family: String,
}

impl Default for DatasetRunConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            mesh: MeshParams::default(),
            n_base: d.n_base,
            n_noise: d.n_noise,
            noise_level: d.noise_level,
            seed: d.seed,
            family: d.family.to_string(),
        }
    }
}

impl DatasetRunConfig {
    pub fn dataset(&self) -> Result<DatasetConfig, CliError> {
        Ok(DatasetConfig {
            n_base: self.n_base,
            n_noise: self.n_noise,
            noise_level: self.noise_level,
            seed: self.seed,
            family: parse(&self.family, "family")?,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainVaeFlags {
    /// Dataset directory written by make-dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Latent dimension.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// KL term: standard or log-sigma.
    #[arg(long)]
    pub kl_formula: Option<String>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainVaeConfig {
    pub dataset: Option<PathBuf>,
    pub latent_dim: usize,
    pub kl_formula: String,
    pub init_seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainVaeConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: None,
            latent_dim: DEFAULT_LATENT,
            kl_formula: "standard".into(),
            init_seed: 1,
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            seed: t.seed,
        }
    }
}

impl TrainVaeConfig {
    pub fn kl_formula(&self) -> Result<KlFormula, CliError> {
        parse(&self.kl_formula, "kl formula")
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainRegressorFlags {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Trained autoencoder directory.
    #[arg(long)]
    pub vae: Option<PathBuf>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRegressorConfig {
    pub dataset: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainRegressorConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: None,
            vae: None,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init_seed: 2,
            epochs: REGRESSOR_EPOCHS,
            batch: t.batch,
            lr: t.lr,
            seed: t.seed,
        }
    }
}

impl TrainRegressorConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructFlags {
    /// Directory holding the setup: a dataset or a mesh-gen/simulate output.
    #[arg(long)]
    pub workbench: Option<PathBuf>,
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long)]
    pub regressor: Option<PathBuf>,
    /// Directory holding `<stem>.json` + `<stem>.f32` frames.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub stem: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructConfig {
    pub workbench: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub regressor: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub stem: String,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            workbench: None,
            vae: None,
            regressor: None,
            frames: None,
            stem: "raw".into(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineFlags {
    #[arg(long)]
    pub workbench: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub stem: Option<String>,
    /// tikhonov or tv.
    #[arg(long)]
    pub method: Option<String>,
    /// Fixed regularization weight; chosen by the discrepancy principle when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Noise level assumed by the discrepancy principle.
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Bisection steps of the TV discrepancy search.
    #[arg(long)]
    pub tv_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub workbench: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub stem: String,
    pub method: String,
    pub lambda: Option<f64>,
    pub noise_level: f64,
    pub tv_steps: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            workbench: None,
            frames: None,
            stem: "raw".into(),
            method: "tikhonov".into(),
            lambda: None,
            noise_level: 0.05,
            tv_steps: DEFAULT_TV_SEARCH_STEPS,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long)]
    pub regressor: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub models: ModelFlags,
    /// Which families to run: both, normal or obese.
    #[arg(long)]
    pub cases: Option<String>,
    /// Test cases per family.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total-variation runs on this many cases per family.
    #[arg(long)]
    pub tv_cases: Option<usize>,
    #[arg(long)]
    pub tv_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub dataset: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub regressor: Option<PathBuf>,
    pub cases: String,
    pub count: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub tv_cases: usize,
    pub tv_steps: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let c = ComparisonConfig::default();
        Self {
            dataset: None,
            vae: None,
            regressor: None,
            cases: "both".into(),
            count: c.normal,
            noise_level: c.noise_level,
            seed: c.seed,
            tv_cases: c.tv_cases,
            tv_steps: c.tv_steps,
        }
    }
}

impl CompareConfig {
    pub fn comparison(&self) -> Result<ComparisonConfig, CliError> {
        let (normal, obese) = match self.cases.as_str() {
            "both" => (self.count, self.count),
            "normal" => (self.count, 0),
            "obese" => (0, self.count),
            other => return Err(CliError::Usage(format!("cases must be both, normal or obese, got {other:?}"))),
        };
        Ok(ComparisonConfig {
            normal,
            obese,
            noise_level: self.noise_level,
            seed: self.seed,
            tv_cases: self.tv_cases,
            tv_steps: self.tv_steps,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ManifoldFlags {
    /// Dataset the autoencoder was trained on (interpolation uses its held-out images).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub vae: Option<PathBuf>,
    /// Latent grid points per axis (two-dimensional latents only).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Half-width of the latent grid box.
    #[arg(long)]
    pub range: Option<f64>,
    /// Largest axis-walk step; walks use every integer in [-max, max].
    #[arg(long)]
    pub max_delta: Option<i32>,
    /// Random held-out pairs to interpolate.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    pub dataset: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub resolution: usize,
    pub range: f64,
    pub max_delta: i32,
    pub pairs: usize,
    pub seed: u64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            vae: None,
            resolution: DEFAULT_GRID_RESOLUTION,
            range: 3.0,
            max_delta: 6,
            pairs: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct StabilityFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub models: ModelFlags,
    /// Phantom pairs to probe.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative frame perturbation for the latent stability statistic.
    #[arg(long)]
    pub perturbation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub dataset: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub regressor: Option<PathBuf>,
    pub pairs: usize,
    pub seed: u64,
    pub perturbation: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            vae: None,
            regressor: None,
            pairs: 20,
            seed: 1,
            perturbation: 0.01,
        }
    }
}
