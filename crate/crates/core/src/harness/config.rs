use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::AdaptationConfig;
use crate::detector::{CellGrid, PretrainOptions};
use crate::error::{EtaError, Result};
use crate::exploration::{ExplorationConfig, Strategy};
use crate::scene::{CameraConfig, Family};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Pretrain on the test families.
    SameDomain,
    /// Pretrain on disjoint families with a different appearance.
    CrossDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Pretrained detector, viewpoint 0 only, no adaptation.
    Baseline,
    /// Detector fine-tuned on labelled target scenes, multi-view, frozen.
    FinetuneGt,
    /// Viewpoint 0 only, with adaptation.
    EtaSingle,
    /// Full exploration with knowledge and adaptation.
    EtaMulti,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Baseline,
        Method::FinetuneGt,
        Method::EtaSingle,
        Method::EtaMulti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::FinetuneGt => "finetune_gt",
            Method::EtaSingle => "eta_single",
            Method::EtaMulti => "eta_multi",
        }
    }

    pub fn adapts(self) -> bool {
        matches!(self, Method::EtaSingle | Method::EtaMulti)
    }

    pub fn single_view(self) -> bool {
        matches!(self, Method::Baseline | Method::EtaSingle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EtaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EtaError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub cell_px: usize,
    pub w_max_px: f64,
    pub negative_weight: f64,
    pub width_unit_px: f64,
    /// Load this checkpoint instead of pretraining.
    pub checkpoint: Option<PathBuf>,
    pub pretrain_scenes: usize,
    /// Viewpoints rendered per pretraining scene.
    pub pretrain_views: Vec<usize>,
    pub pretrain: PretrainOptions,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            cell_px: 8,
            w_max_px: 100.0,
            negative_weight: 1.0,
            width_unit_px: crate::detector::DEFAULT_WIDTH_UNIT_PX,
            checkpoint: None,
            pretrain_scenes: 30,
            pretrain_views: vec![0, 3, 5, 9, 14],
            pretrain: PretrainOptions {
                epochs: 600,
                lr: 0.05,
                batch_size: None,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub scenes: usize,
    pub views: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            scenes: 30,
            views: vec![0, 3, 5, 9, 14],
            epochs: 600,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnowledgeConfig {
    pub hidden: usize,
    pub init_seed: u64,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            init_seed: 0,
        }
    }
}

/// Everything a benchmark run depends on. Loaded from TOML; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub version: u32,
    pub seeds: Vec<u64>,
    pub domain: Domain,
    pub methods: Vec<Method>,
    pub strategy: Strategy,
    /// Test families; each seed shows `objects_per_family` of each in a
    /// shuffled order.
    pub families: Vec<Family>,
    pub objects_per_family: usize,
    /// Held-out scenes per family for before/after detector accuracy.
    pub heldout_per_family: usize,
    pub camera: CameraConfig,
    pub exploration: ExplorationConfig,
    pub adaptation: AdaptationConfig,
    pub detector: DetectorConfig,
    pub finetune: FinetuneConfig,
    pub knowledge: KnowledgeConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seeds: (0..10).collect(),
            domain: Domain::CrossDomain,
            methods: Method::ALL.to_vec(),
            strategy: Strategy::Kr,
            families: Family::TARGET.to_vec(),
            objects_per_family: 7,
            heldout_per_family: 4,
            camera: CameraConfig::default(),
            exploration: ExplorationConfig::default(),
            adaptation: AdaptationConfig {
                lr: 0.2,
                steps: 50,
                ..AdaptationConfig::default()
            },
            detector: DetectorConfig::default(),
            finetune: FinetuneConfig::default(),
            knowledge: KnowledgeConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig =
            toml::from_str(text).map_err(|e| EtaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EtaError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EtaError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(EtaError::Version {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        if self.seeds.is_empty() {
            return Err(EtaError::Config("seeds must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(EtaError::Config("methods must not be empty".into()));
        }
        if self.families.is_empty() || self.objects_per_family == 0 {
            return Err(EtaError::Config("need at least one test object".into()));
        }
        self.camera.validate()?;
        self.exploration.validate()?;
        self.adaptation.validate()?;
        let d = &self.detector;
        if d.cell_px == 0 || d.cell_px > self.camera.resolution {
            return Err(EtaError::Config("detector.cell_px out of range".into()));
        }
        if !(d.w_max_px > 0.0) || !(d.negative_weight >= 0.0) || !(d.width_unit_px > 0.0) {
            return Err(EtaError::Config(
                "detector.w_max_px, width_unit_px and negative_weight must be positive".into(),
            ));
        }
        let views = self.camera.views;
        if d.pretrain_views
            .iter()
            .chain(&self.finetune.views)
            .any(|&v| v >= views)
        {
            return Err(EtaError::Config(format!(
                "training viewpoints must be < {views}"
            )));
        }
        if d.checkpoint.is_none() && (d.pretrain_scenes == 0 || d.pretrain_views.is_empty()) {
            return Err(EtaError::Config(
                "pretraining needs scenes and viewpoints".into(),
            ));
        }
        if !(d.pretrain.lr > 0.0) || !(self.finetune.lr > 0.0) {
            return Err(EtaError::Config(
                "training learning rates must be positive".into(),
            ));
        }
        if self.methods.contains(&Method::FinetuneGt)
            && (self.finetune.scenes == 0 || self.finetune.views.is_empty())
        {
            return Err(EtaError::Config(
                "finetune_gt needs scenes and viewpoints".into(),
            ));
        }
        if self.knowledge.hidden == 0 {
            return Err(EtaError::Config("knowledge.hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> CellGrid {
        CellGrid::for_resolution(self.camera.resolution, self.detector.cell_px)
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
