//! Run configuration: one JSON document with a section per pipeline stage.
//! Unknown keys are rejected everywhere so a manifest snapshot is always a
//! faithful record of what ran.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wave_core::bench::{
    from_idx, synthetic, Budgets, Dataset, ExperimentSpec, IdxSpec, Method, SyntheticSpec,
};
use wave_core::learngene::BankCounts;
use wave_core::lifecycle::TrainBudget;
use wave_core::vit::ModelConfig;
use wave_core::{Error, Result};

/// Dataset source; exactly one variant must be present.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSpec>,
}

impl DatasetSection {
    /// Existence checks for every referenced file, before any compute.
    pub fn check_paths(&self) -> Result<()> {
        if let Some(idx) = &self.idx {
            let mut paths = vec![&idx.train_images, &idx.train_labels];
            paths.extend(&idx.test_images);
            paths.extend(&idx.test_labels);
            for p in paths {
                require_file(p, "dataset file")?;
            }
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Dataset> {
        match (&self.synthetic, &self.idx) {
            (Some(spec), None) => synthetic(spec),
            (None, Some(spec)) => from_idx(spec),
            _ => Err(Error::Input(
                "dataset section needs exactly one of `synthetic` or `idx`".into(),
            )),
        }
    }
}

/// Bank geometry for `condense`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    pub template_size: usize,
    pub counts: BankCounts,
}

/// Condensation budget; the auxiliary model shape lives here too.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenseSection {
    pub aux: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

/// Scaler-fit budget for `init`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompressSection {
    pub fit_iterations: usize,
    pub fit_subset_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

/// Grid description for `sweep` and `ablate`; the base model shape comes
/// from the `model` section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub budgets: Budgets,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentSection {
    pub fn to_spec(&self, base: ModelConfig) -> ExperimentSpec {
        ExperimentSpec {
            base,
            methods: self
                .methods
                .clone()
                .unwrap_or_else(|| vec![Method::Wave, Method::HeInit, Method::DirectPt]),
            depths: self.depths.clone(),
            widths: self.widths.clone(),
            seeds: self.seeds.clone(),
            budgets: self.budgets,
            record_wall_time: self.record_wall_time,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<BankSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condense: Option<CondenseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompress: Option<DecompressSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    require_file(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("config {}: {e}", path.display())))
}

/// Validation-time existence check; names the path in the error.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Input(format!("missing {what}: {}", path.display())));
    }
    Ok(())
}

fn missing(section: &str) -> Error {
    Error::Input(format!("config is missing the `{section}` section"))
}

impl RunConfig {
    pub fn need_dataset(&self) -> Result<&DatasetSection> {
        self.dataset.as_ref().ok_or_else(|| missing("dataset"))
    }

    pub fn need_model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| missing("model"))
    }

    pub fn need_bank(&self) -> Result<&BankSection> {
        self.bank.as_ref().ok_or_else(|| missing("bank"))
    }

    pub fn need_condense(&self) -> Result<&CondenseSection> {
        self.condense.as_ref().ok_or_else(|| missing("condense"))
    }

    pub fn need_decompress(&self) -> Result<&DecompressSection> {
        self.decompress.as_ref().ok_or_else(|| missing("decompress"))
    }

    pub fn need_train(&self) -> Result<&TrainBudget> {
        self.train.as_ref().ok_or_else(|| missing("train"))
    }

    pub fn need_experiment(&self) -> Result<&ExperimentSection> {
        self.experiment.as_ref().ok_or_else(|| missing("experiment"))
    }

    /// Output directory: the --out flag wins over the config's `output`.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.output.clone()).ok_or_else(|| {
            Error::Input("no output directory: pass --out or set `output` in the config".into())
        })
    }
}
