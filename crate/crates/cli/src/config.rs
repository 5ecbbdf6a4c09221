//! Experiment configuration, stored as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semctx::ingest::AugmentationConfig;
use semctx::{Hyperparameters, Roi};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HierarchyMode {
    SceneName,
    LabelCluster,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Baseline,
    Sequential,
    Hierarchical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    pub mode: HierarchyMode,
    pub rho: f64,
    /// Odd side length, or "inf" for the whole label map.
    pub roi: String,
    pub pixels_per_cell: usize,
    pub infill_threshold: f64,
}

impl Default for HierarchySection {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            mode: HierarchyMode::LabelCluster,
            rho: h.rho,
            roi: h.roi.to_string(),
            pixels_per_cell: 300,
            infill_threshold: semctx::hierarchy::DEFAULT_LABELED_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub strategy: Strategy,
    pub include_step3: bool,
    pub sequential_iters: [u64; 4],
    pub hierarchical_iters: [u64; 2],
    pub baseline_iters: u64,
    pub alpha: f64,
    pub beta: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_step: u64,
    pub lr_factor: f64,
    pub report_interval: u64,
    pub early_stop: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            strategy: Strategy::Baseline,
            include_step3: true,
            sequential_iters: [2000, 2000, 500, 2000],
            hierarchical_iters: [2000, 2000],
            baseline_iters: 6500,
            alpha: h.alpha,
            beta: h.beta,
            patch_size: 64,
            batch_size: h.batch_size,
            lr0: h.lr0,
            lr_step: h.lr_step,
            lr_factor: h.lr_factor,
            report_interval: 10,
            early_stop: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub enabled: bool,
    pub copies: usize,
    pub scale_range: [f64; 2],
    pub rotation_range_deg: [f64; 2],
    pub flip_probability: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentationConfig::default();
        Self {
            enabled: false,
            copies: a.n_copies,
            scale_range: [a.scale_range.0, a.scale_range.1],
            rotation_range_deg: [a.rotation_range_deg.0, a.rotation_range_deg.1],
            flip_probability: a.flip_probability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub stride: usize,
    /// Average per-class accuracy over all classes instead of present ones.
    pub all_classes: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            stride: 4,
            all_classes: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training dataset directory.
    pub dataset: PathBuf,
    /// Held-out dataset for `eval`; defaults to `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<PathBuf>,
    /// Hierarchy file for training; defaults to `<out>/hierarchy.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub hierarchy_builder: HierarchySection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn new(seed: u64, dataset: PathBuf, out: PathBuf) -> Self {
        Self {
            seed,
            dataset,
            test_dataset: None,
            hierarchy: None,
            out,
            hierarchy_builder: HierarchySection::default(),
            train: TrainSection::default(),
            augment: AugmentSection::default(),
            eval: EvalSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset);
        resolve(&mut cfg.out);
        cfg.test_dataset.as_mut().map(resolve);
        cfg.hierarchy.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_toml()).map_err(|e| CliError::Core(semctx::Error::io(path, e)))
    }

    /// Checks that referenced inputs exist and values are in range.
    pub fn validate(&self) -> Result<(), CliError> {
        for p in [Some(&self.dataset), self.test_dataset.as_ref(), self.hierarchy.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Usage(format!("{} does not exist", p.display())));
            }
        }
        self.roi()?;
        self.hyperparameters()?.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.eval.stride == 0 || self.hierarchy_builder.pixels_per_cell == 0 {
            return Err(CliError::Usage("stride and pixels_per_cell must be positive".into()));
        }
        Ok(())
    }

    pub fn roi(&self) -> Result<Roi, CliError> {
        self.hierarchy_builder
            .roi
            .parse()
            .map_err(|e: semctx::Error| CliError::Usage(format!("bad roi: {e}")))
    }

    pub fn hyperparameters(&self) -> Result<Hyperparameters, CliError> {
        let t = &self.train;
        Ok(Hyperparameters {
            rho: self.hierarchy_builder.rho,
            roi: self.roi()?,
            alpha: t.alpha,
            beta: t.beta,
            patch_size: t.patch_size,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_step: t.lr_step,
            lr_factor: t.lr_factor,
        })
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        let a = &self.augment;
        AugmentationConfig {
            n_copies: a.copies,
            scale_range: (a.scale_range[0], a.scale_range[1]),
            rotation_range_deg: (a.rotation_range_deg[0], a.rotation_range_deg[1]),
            flip_probability: a.flip_probability,
            seed: self.seed,
        }
    }

    pub fn hierarchy_path(&self) -> PathBuf {
        self.hierarchy.clone().unwrap_or_else(|| self.out.join("hierarchy.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut cfg = ExperimentConfig::new(7, "data".into(), "out".into());
        cfg.train.strategy = Strategy::Hierarchical;
        cfg.hierarchy_builder.roi = "inf".into();
        cfg.test_dataset = Some("test".into());
        cfg.train.lr0 = 0.1 + 0.2;
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn seed_is_required() {
        let err = ExperimentConfig::from_toml("dataset = \"d\"\nout = \"o\"\n").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 1\ndataset = \"d\"\nout = \"o\"\nsede = 2\n").is_err());
    }

    #[test]
    fn even_roi_is_rejected() {
        let mut cfg = ExperimentConfig::new(1, ".".into(), "o".into());
        cfg.hierarchy_builder.roi = "32".into();
        assert!(cfg.validate().is_err());
        cfg.hierarchy_builder.roi = "33".into();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn missing_dataset_is_rejected() {
        let cfg = ExperimentConfig::new(1, "/definitely/not/here".into(), "o".into());
        assert!(cfg.validate().is_err());
    }
}
