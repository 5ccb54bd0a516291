//! TOML experiment configuration.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/ring8"
//!
//! [dataset]
//! preset = "ring8"            # ring8 | grid25 | custom (with modes, weights)
//!
//! [train]                     # any TrainConfig field
//! generator_iters = 5000
//!
//! [finetune]                  # any DcdConfig field; chain is a preset name or a table
//! iterations = 300
//! chain = "latent"
//!
//! [sample]
//! n = 10000
//! preset = "latent"
//! trajectory = false
//!
//! [presets.short]             # user-defined Langevin presets
//! step_size = 0.2
//! steps = 10
//! ```
//!
//! The seed is mandatory. Nothing reads the clock or the environment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dcd_core::dcd::DcdConfig;
use dcd_core::eval::DEFAULT_HQ_SIGMAS;
use dcd_core::sampler::{LangevinConfig, Space};
use dcd_core::synth::MixtureSpec;
use dcd_core::wgan::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DEFAULT_RESOLUTION: (usize, usize) = (200, 200);
pub const DEFAULT_SAMPLES: usize = 10_000;

/// Image-scale settings kept for reference. They describe 32×32 and 48×48
/// image models and cannot run on 2D data.
pub const DOCUMENTATION_PRESETS: &[(&str, &str)] = &[
    ("cifar-pixel", "pixel space, 6-8 steps of size 10, noise 0.01"),
    ("cifar-latent", "latent space, 50 steps of size 0.2, noise 0.1"),
    ("stl", "150 steps of size 0.05, noise 0.1"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum Dataset {
    Ring8,
    Grid25,
    Custom(MixtureSpec),
}

impl Dataset {
    pub fn spec(&self) -> MixtureSpec {
        match self {
            Dataset::Ring8 => MixtureSpec::ring8(),
            Dataset::Grid25 => MixtureSpec::grid25(),
            Dataset::Custom(spec) => spec.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ChainRef {
    Named(String),
    Inline(LangevinConfig),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    #[serde(default = "default_samples")]
    n: usize,
    #[serde(default = "latent_name")]
    preset: String,
    #[serde(default)]
    trajectory: bool,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn latent_name() -> String {
    "latent".into()
}

impl Default for RawSample {
    fn default() -> Self {
        Self {
            n: DEFAULT_SAMPLES,
            preset: latent_name(),
            trajectory: false,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvaluate {
    hq_sigmas: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevelset {
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
    resolution: Option<(usize, usize)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    dataset: Dataset,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    finetune: toml::Table,
    #[serde(default)]
    sample: RawSample,
    #[serde(default)]
    evaluate: RawEvaluate,
    #[serde(default)]
    levelset: RawLevelset,
    #[serde(default)]
    presets: BTreeMap<String, LangevinConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSettings {
    pub n: usize,
    pub preset: String,
    pub chain: LangevinConfig,
    pub trajectory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelsetSettings {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: (usize, usize),
}

/// Fully resolved configuration: presets looked up, seed applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub dataset: Dataset,
    pub train: TrainConfig,
    pub finetune: DcdConfig,
    pub finetune_preset: Option<String>,
    pub sample: SampleSettings,
    pub hq_sigmas: f64,
    pub levelset: LevelsetSettings,
    pub presets: BTreeMap<String, LangevinConfig>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub preset: Option<String>,
}

fn builtin_preset(name: &str) -> Option<LangevinConfig> {
    match name {
        "latent" => Some(LangevinConfig::latent_preset()),
        "pixel" => Some(LangevinConfig::pixel_preset()),
        _ => None,
    }
}

fn resolve_preset(
    name: &str,
    user: &BTreeMap<String, LangevinConfig>,
    field: &str,
) -> Result<LangevinConfig, CliError> {
    if let Some(cfg) = user.get(name).cloned().or_else(|| builtin_preset(name)) {
        return Ok(cfg);
    }
    if let Some((_, what)) = DOCUMENTATION_PRESETS.iter().find(|(n, _)| *n == name) {
        return Err(CliError::Config(format!(
            "{field}: preset \"{name}\" ({what}) is recorded for reference only and cannot run on 2D data"
        )));
    }
    let mut known: Vec<&str> = vec!["latent", "pixel"];
    known.extend(user.keys().map(String::as_str));
    Err(CliError::Config(format!(
        "{field}: unknown preset \"{name}\" (available: {})",
        known.join(", ")
    )))
}

fn check_range(field: &str, (lo, hi): (f64, f64)) -> Result<(), CliError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field}: need min < max, got [{lo}, {hi}]")))
    }
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let seed = overrides
            .seed
            .or(raw.seed)
            .ok_or_else(|| CliError::Config("seed: missing (set `seed = <integer>` or pass --seed)".into()))?;
        let out_dir = overrides
            .out_dir
            .clone()
            .or(raw.out_dir)
            .unwrap_or_else(|| PathBuf::from("."));
        for name in raw.presets.keys() {
            if builtin_preset(name).is_some() || DOCUMENTATION_PRESETS.iter().any(|(n, _)| n == name) {
                return Err(CliError::Config(format!("presets.{name}: name is reserved")));
            }
        }
        for (name, p) in &raw.presets {
            p.validate()
                .map_err(|e| CliError::Config(format!("presets.{name}: {e}")))?;
        }

        let mut train = raw.train;
        train.seed = seed;
        train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;

        let mut ft_table = raw.finetune;
        let chain_ref = match ft_table.remove("chain") {
            None => ChainRef::Named(latent_name()),
            Some(v) => v
                .try_into()
                .map_err(|e| CliError::Config(format!("finetune.chain: {e}")))?,
        };
        let mut finetune: DcdConfig = ft_table
            .try_into()
            .map_err(|e| CliError::Config(format!("finetune: {e}")))?;
        let finetune_preset = match (overrides.preset.clone(), chain_ref) {
            (Some(name), _) | (None, ChainRef::Named(name)) => {
                finetune.chain = resolve_preset(name.as_str(), &raw.presets, "finetune.chain")?;
                Some(name)
            }
            (None, ChainRef::Inline(cfg)) => {
                finetune.chain = cfg;
                None
            }
        };
        finetune.seed = seed;
        finetune
            .validate()
            .map_err(|e| CliError::Config(format!("finetune: {e}")))?;

        let preset = overrides.preset.clone().unwrap_or(raw.sample.preset);
        let sample = SampleSettings {
            n: raw.sample.n,
            chain: resolve_preset(&preset, &raw.presets, "sample.preset")?,
            preset,
            trajectory: raw.sample.trajectory,
        };

        let hq_sigmas = raw.evaluate.hq_sigmas.unwrap_or(DEFAULT_HQ_SIGMAS);
        if !(hq_sigmas > 0.0 && hq_sigmas.is_finite()) {
            return Err(CliError::Config(format!(
                "evaluate.hq_sigmas: must be positive, got {hq_sigmas}"
            )));
        }

        let spec = raw.dataset.spec();
        let [x0, x1, y0, y1] = spec.bounding_box(1.0);
        let levelset = LevelsetSettings {
            x_range: raw.levelset.x_range.unwrap_or((x0, x1)),
            y_range: raw.levelset.y_range.unwrap_or((y0, y1)),
            resolution: raw.levelset.resolution.unwrap_or(DEFAULT_RESOLUTION),
        };
        check_range("levelset.x_range", levelset.x_range)?;
        check_range("levelset.y_range", levelset.y_range)?;
        let (nx, ny) = levelset.resolution;
        if nx < 2 || ny < 2 {
            return Err(CliError::Config(format!(
                "levelset.resolution: need at least 2 points per axis, got [{nx}, {ny}]"
            )));
        }

        Ok(Self {
            seed,
            out_dir,
            dataset: raw.dataset,
            train,
            finetune,
            finetune_preset,
            sample,
            hq_sigmas,
            levelset,
            presets: raw.presets,
        })
    }

    pub fn spec(&self) -> MixtureSpec {
        self.dataset.spec()
    }

    /// Hex SHA-256 of the resolved configuration. The output directory is
    /// left out so that the same experiment hashes the same wherever it runs.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Whether the sampling chain moves in latent space.
    pub fn samples_in_latent(&self) -> bool {
        self.sample.chain.space == Space::Latent
    }
}
