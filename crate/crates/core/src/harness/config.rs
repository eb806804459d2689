use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{load_idx_dataset, Dataset, SyntheticShapes};
use crate::mis::{BackendKind, MisConfig};
use crate::model::{build_mini_inception_from, build_plain_cnn, MiniInceptionSpec, ModelGraph, PlainCnnSpec, UnitAggregation};
use crate::pruning::{Criterion, Method, PruningPlan, Scope};
use crate::train::{ScheduleSpec, TrainConfig};

fn default_val_fraction() -> f64 {
    0.25
}
fn default_seeds() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        samples: usize,
        seed: u64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    IdxFiles {
        train_images: PathBuf,
        train_labels: PathBuf,
        /// Without a separate validation pair the training files are split.
        #[serde(default)]
        val_images: Option<PathBuf>,
        #[serde(default)]
        val_labels: Option<PathBuf>,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

impl DatasetSpec {
    /// Loads (train, val). Relative IDX paths resolve against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<(Dataset, Dataset), HarnessError> {
        match self {
            Self::Synthetic { classes, samples, seed, val_fraction } => {
                Ok(SyntheticShapes::new(*classes, *samples, *seed).generate()?.split(*val_fraction)?)
            }
            Self::IdxFiles { train_images, train_labels, val_images, val_labels, val_fraction, num_classes } => {
                let p = |f: &PathBuf| base_dir.join(f);
                let train = load_idx_dataset(p(train_images), p(train_labels), *num_classes)?;
                match (val_images, val_labels) {
                    (Some(vi), Some(vl)) => {
                        let val = load_idx_dataset(p(vi), p(vl), Some(train.num_classes()))?;
                        Ok((train, val))
                    }
                    (None, None) => Ok(train.split(*val_fraction)?),
                    _ => Err(HarnessError::Config("val_images and val_labels must be given together".into())),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    MiniInception,
    PlainCnn,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub arch: Arch,
    /// Conv widths of the plain CNN; ignored for MiniInception.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
}

impl ModelSpec {
    pub fn build(&self, in_channels: usize, num_classes: usize, seed: u64) -> Result<ModelGraph, HarnessError> {
        Ok(match self.arch {
            Arch::MiniInception => build_mini_inception_from(&MiniInceptionSpec::new(in_channels, num_classes), seed)?,
            Arch::PlainCnn => {
                let mut spec = PlainCnnSpec::new(in_channels, num_classes);
                if let Some(w) = &self.widths {
                    spec.widths = w.clone();
                }
                build_plain_cnn(&spec, seed)?
            }
        })
    }
}

/// One sweep line: a method/criterion/scope and schedule evaluated at
/// every listed rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub method: Method,
    pub criterion: Criterion,
    pub scope: Scope,
    pub rates: Vec<f64>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Offset for random-criterion draws; the run seed is added to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PlanEntry {
    pub fn plan(&self, rate: f64, run_seed: u64) -> PruningPlan {
        let plan = PruningPlan::new(self.method, self.criterion, self.scope, rate);
        if self.criterion == Criterion::Random {
            plan.with_seed(self.seed.unwrap_or(0).wrapping_add(run_seed))
        } else {
            plan
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MisSettings {
    pub enabled: bool,
    pub k: usize,
    pub tasks: usize,
    pub beta: f64,
    pub shuffle_seed: Option<u64>,
    pub aggregation: UnitAggregation,
    pub backend: BackendKind,
    /// Probe images taken from the start of the validation split; `None`
    /// uses all of it.
    pub probe_samples: Option<usize>,
    /// Training epochs of the frozen reference network behind
    /// `embed_cosine`; `None` reuses the base training config.
    pub reference_epochs: Option<u32>,
}

impl Default for MisSettings {
    fn default() -> Self {
        let m = MisConfig::default();
        Self {
            enabled: true,
            k: m.k,
            tasks: m.tasks,
            beta: m.beta,
            shuffle_seed: m.shuffle_seed,
            aggregation: m.aggregation,
            backend: BackendKind::PixelCosine,
            probe_samples: None,
            reference_epochs: None,
        }
    }
}

impl MisSettings {
    pub fn mis_config(&self) -> MisConfig {
        MisConfig { k: self.k, tasks: self.tasks, beta: self.beta, shuffle_seed: self.shuffle_seed, aggregation: self.aggregation }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    /// Base (pre-pruning) training.
    #[serde(default)]
    pub train: TrainConfig,
    /// Retraining after pruning; schedule `retrain_epochs` overrides its
    /// epoch count.
    #[serde(default)]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub plans: Vec<PlanEntry>,
    #[serde(default)]
    pub mis: MisSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Independent runs per row, seeded `seed`, `seed + 1`, ...
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    /// Synthetic shapes, 10 classes, 2000 samples; no plans.
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic { classes: 10, samples: 2000, seed: 0, val_fraction: default_val_fraction() },
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig::default(),
            plans: Vec::new(),
            mis: MisSettings::default(),
            output_dir: default_output_dir(),
            seed: 0,
            seeds: default_seeds(),
            save_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
        self.train.validate().map_err(|e| cfg(&e))?;
        self.finetune.validate().map_err(|e| cfg(&e))?;
        self.mis.mis_config().validate().map_err(|e| cfg(&e))?;
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be >= 1".into()));
        }
        match &self.dataset {
            DatasetSpec::Synthetic { classes, samples, val_fraction, .. } => {
                if *classes < 2 || *classes > SyntheticShapes::max_classes() {
                    return Err(HarnessError::Config(format!(
                        "synthetic classes must be in 2..={}, got {classes}",
                        SyntheticShapes::max_classes()
                    )));
                }
                if *samples < 2 * classes {
                    return Err(HarnessError::Config(format!("{samples} samples cannot cover {classes} classes twice")));
                }
                check_fraction(*val_fraction)?;
            }
            DatasetSpec::IdxFiles { val_fraction, .. } => check_fraction(*val_fraction)?,
        }
        for (i, entry) in self.plans.iter().enumerate() {
            let at = |e: &dyn std::fmt::Display| HarnessError::Config(format!("plans[{i}]: {e}"));
            if entry.rates.is_empty() {
                return Err(at(&"empty rate list"));
            }
            entry.schedule.validate().map_err(|e| at(&e))?;
            if entry.seed.is_some() && entry.criterion != Criterion::Random {
                return Err(at(&"seed is only meaningful for the random criterion"));
            }
            for &rate in &entry.rates {
                entry.plan(rate, self.seed).validate().map_err(|e| at(&e))?;
            }
        }
        Ok(())
    }

    /// The config with every default written out.
    pub fn resolved(&self) -> Self {
        Self { train: self.train.resolved(), finetune: self.finetune.resolved(), ..self.clone() }
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

fn check_fraction(f: f64) -> Result<(), HarnessError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("val_fraction must be in (0, 1), got {f}")))
    }
}
