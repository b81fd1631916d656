//! Pipeline configuration: one TOML or JSON file with a section per stage.
//! Stage seeds default to the top-level `seed`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use segaug::dataset::ClassScheme;
use segaug::swd::SWDConfig;
use segaug::synthsrc::PhantomParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub classes: usize,
    pub split: SplitSection,
    pub gen: GenSection,
    pub qc: QcSection,
    pub swd: SWDConfig,
    pub mix: MixSection,
    pub unet: UnetSection,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 7,
            split: SplitSection::default(),
            gen: GenSection::default(),
            qc: QcSection::default(),
            swd: SWDConfig::default(),
            mix: MixSection::default(),
            unet: UnetSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: [f64; 3],
    pub seed: Option<u64>,
    /// Keep every slice of a volume in one split.
    pub by_volume: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed: None,
            by_volume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub n: usize,
    pub seed: Option<u64>,
    pub phantom: PhantomParams,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            n: 100,
            seed: None,
            phantom: PhantomParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcSection {
    pub threshold: f64,
}

impl Default for QcSection {
    fn default() -> Self {
        Self {
            threshold: segaug::qc::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    /// All real entries of the fraction when absent.
    pub n_real: Option<usize>,
    pub n_synth: usize,
    pub fraction: f64,
    pub seed: Option<u64>,
}

impl Default for MixSection {
    fn default() -> Self {
        Self {
            n_real: None,
            n_synth: 0,
            fraction: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSection {
    pub n_levels: usize,
    pub base_filters: usize,
    pub seed: Option<u64>,
}

impl Default for UnetSection {
    fn default() -> Self {
        Self {
            n_levels: 4,
            base_filters: 64,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 150,
            seed: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    /// Every violation, joined into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if ClassScheme::for_classes(self.classes).is_err() {
            problems.push(format!("classes = {} (expected 2, 4 or 7)", self.classes));
        }
        let r = self.split.ratios;
        if r.iter().any(|&x| !(x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            problems.push(format!("split.ratios = {r:?} must be non-negative and sum to 1"));
        }
        if self.gen.n == 0 {
            problems.push("gen.n must be at least 1".into());
        }
        if let Err(e) = self.gen.phantom.validate() {
            problems.push(format!("gen.phantom: {e}"));
        }
        if !(self.qc.threshold > 0.0) {
            problems.push(format!("qc.threshold = {} must be positive", self.qc.threshold));
        }
        if let Err(e) = self.swd.validate() {
            problems.push(format!("swd: {e}"));
        }
        if !(self.mix.fraction > 0.0 && self.mix.fraction <= 1.0) {
            problems.push(format!("mix.fraction = {} outside (0, 1]", self.mix.fraction));
        }
        if self.unet.n_levels == 0 || self.unet.base_filters == 0 {
            problems.push("unet.n_levels and unet.base_filters must be positive".into());
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            problems.push(format!("train.lr = {} must be positive", self.train.lr));
        }
        if self.train.batch_size == 0 {
            problems.push("train.batch_size must be at least 1".into());
        }
        if self.train.epochs == 0 {
            problems.push("train.epochs must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", problems.join("\n  "))
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn gen_seed(&self) -> u64 {
        self.gen.seed.unwrap_or(self.seed)
    }

    pub fn mix_seed(&self) -> u64 {
        self.mix.seed.unwrap_or(self.seed)
    }

    pub fn init_seed(&self) -> u64 {
        self.unet.seed.unwrap_or(self.seed)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.train.seed.unwrap_or(self.seed)
    }
}
