use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterConfig, FilterKind, ScoringConfig};
use crate::manifold::{ProjectionStrategy, TreeConfig};
use crate::scene::Scene;
use crate::signal::{FrameConfig, ZScoreConfig};

/// A filter paired with a projection strategy, written `PF-none`, `NH-root`,
/// `NH-1`, `PF-rand` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub kind: FilterKind,
    pub strategy: ProjectionStrategy,
}

impl Variant {
    pub fn new(kind: FilterKind, strategy: ProjectionStrategy) -> Self {
        Self { kind, strategy }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.strategy {
            ProjectionStrategy::None => "none".to_string(),
            ProjectionStrategy::FixedDepth(0) => "root".to_string(),
            ProjectionStrategy::FixedDepth(d) => d.to_string(),
            ProjectionStrategy::Randomized => "rand".to_string(),
        };
        write!(f, "{}-{}", self.kind, s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown variant `{s}` (expected e.g. PF-none, NH-root, NH-2, NH-rand)"));
        let (kind, strategy) = s.trim().split_once('-').ok_or_else(bad)?;
        let kind = match kind.to_ascii_uppercase().as_str() {
            "PF" | "SIR" => FilterKind::Sir,
            "NH" => FilterKind::NormalHedge,
            _ => return Err(bad()),
        };
        let strategy = match strategy.to_ascii_lowercase().as_str() {
            "none" => ProjectionStrategy::None,
            "root" => ProjectionStrategy::FixedDepth(0),
            "rand" | "randomized" => ProjectionStrategy::Randomized,
            d => ProjectionStrategy::FixedDepth(d.parse().map_err(|_| bad())?),
        };
        Ok(Self { kind, strategy })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    CentralWalk,
    NearMicWalk,
}

impl Preset {
    pub fn scene(self) -> Scene {
        match self {
            Preset::CentralWalk => Scene::central_walk(),
            Preset::NearMicWalk => Scene::near_mic_walk(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central_walk" | "central" => Ok(Preset::CentralWalk),
            "near_mic_walk" | "near_mic" => Ok(Preset::NearMicWalk),
            _ => Err(Error::InvalidConfig(format!("unknown preset `{s}`"))),
        }
    }
}

/// How the initial particle states are chosen from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Uniform draws from the whole training set.
    #[default]
    Uniform,
    /// Uniform draws from the `m` training vectors that score highest on the
    /// first frame.
    Informed,
}

/// Resampling noise used by experiments. Projection onto a k-dimensional
/// node keeps only about `sqrt(k / D)` of isotropic noise per pair, so the
/// library default of 2 samples cannot follow even a slow walk once projected.
pub const EXPERIMENT_RESAMPLE_SIGMA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene description file; when absent `preset` is used.
    pub scene_file: Option<PathBuf>,
    pub preset: Preset,
    /// Overrides the scene's seed.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Cached observations to reuse instead of simulating.
    pub observations_file: Option<PathBuf>,
    /// Trained tree; required by every projecting variant.
    pub tree_file: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub init: InitMode,
    /// Threshold of the within-delta metric, samples.
    pub delta: f64,
    pub frame: FrameConfig,
    pub zscore: ZScoreConfig,
    pub tree: TreeConfig,
    /// `strategy` and `rng_seed` are set per variant and ignored here.
    pub filter: FilterConfig,
    pub scoring: ScoringConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene_file: None,
            preset: Preset::default(),
            seed: None,
            out_dir: PathBuf::from("out"),
            observations_file: None,
            tree_file: None,
            variants: ["PF-none", "PF-root", "NH-none", "NH-root"]
                .iter()
                .map(|v| v.parse().expect("built-in variant"))
                .collect(),
            init: InitMode::Informed,
            delta: 5.0,
            frame: FrameConfig::default(),
            zscore: ZScoreConfig::default(),
            tree: TreeConfig::default(),
            filter: FilterConfig {
                resample_sigma: EXPERIMENT_RESAMPLE_SIGMA,
                ..FilterConfig::default()
            },
            scoring: ScoringConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("experiment config", e))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.scene_file, &mut cfg.observations_file, &mut cfg.tree_file]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("at least one variant is required".into()));
        }
        for (k, v) in self.variants.iter().enumerate() {
            if self.variants[..k].contains(v) {
                return Err(Error::InvalidConfig(format!("variant {v} listed twice")));
            }
        }
        for p in [&self.scene_file, &self.observations_file]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("{} does not exist", p.display())));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig("delta must be >= 0".into()));
        }
        self.zscore.validate()?;
        self.filter.validate()?;
        self.scoring.validate()
    }

    pub fn needs_tree(&self) -> bool {
        self.variants.iter().any(|v| v.strategy.uses_tree())
    }

    /// The scene with the config's seed applied.
    pub fn scene(&self) -> Result<Scene> {
        let mut scene = match &self.scene_file {
            Some(p) => Scene::load(p)?,
            None => self.preset.scene(),
        };
        if let Some(seed) = self.seed {
            scene.seed = seed;
        }
        Ok(scene)
    }

    pub fn frame_config(&self, scene: &Scene) -> Result<FrameConfig> {
        let cfg = scene.frame_config(&self.frame);
        cfg.validate()?;
        Ok(cfg)
    }
}
