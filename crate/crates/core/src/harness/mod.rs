//! Experiment pipeline: configuration, staged training, evaluation and
//! exports. Every command is a pure function of the resolved
//! [`ExperimentConfig`] and the files it reads.

mod export;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::baselines::PlainCfConfig;
use crate::classifier::ClassifierConfig;
use crate::datasets::{ConstraintSpec, CsvSchema};
use crate::engine::CfTrainConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, sha256_hex};
use crate::vae::VaeTrainConfig;

pub use export::{pca_2d, write_arrow_csv, ArtifactRecord, RunManifest, EXCLUDED_BASELINES_NOTE};
pub use run::{
    build_dataset, cmd_evaluate, cmd_explain, cmd_gen_data, cmd_grid_search, cmd_loo_evaluate, cmd_train, explain_record,
    load_dataset, load_models, read_record, EvaluateSummary, ExplainOutcome, GridCell, GridReport, LooReport, Models,
    Progress, RunPaths, TrainSummary, METHODS,
};

pub const DEFAULT_PIMA_PATH: &str = "data/pima_indians_diabetes.csv";

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Toy,
    Nonlinear,
    Csv(PathBuf),
}

impl DatasetSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "nonlinear" => Ok(Self::Nonlinear),
            "pima" => Ok(Self::Csv(PathBuf::from(DEFAULT_PIMA_PATH))),
            _ => match s.strip_prefix("csv:") {
                Some(p) if !p.is_empty() => Ok(Self::Csv(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "unknown dataset `{s}` (expected toy, nonlinear, pima or csv:<path>)"
                ))),
            },
        }
    }

    pub fn is_synthetic(&self) -> bool {
        !matches!(self, Self::Csv(_))
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Toy => f.write_str("toy"),
            Self::Nonlinear => f.write_str("nonlinear"),
            Self::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

impl Serialize for DatasetSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DatasetSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Hyperparameter lists searched by `grid-search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub hidden_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            hidden_size: vec![32, 64],
            learning_rate: vec![5e-4, 1e-3, 2e-3],
            batch_size: vec![16, 32],
        }
    }
}

impl GridConfig {
    pub fn n_cells(&self) -> usize {
        self.hidden_size.len() * self.learning_rate.len() * self.batch_size.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Column layout for `csv:` datasets.
    pub schema: Option<CsvSchema>,
    /// Rows drawn for synthetic datasets.
    pub n_samples: usize,
    pub seed: u64,
    pub classifier: ClassifierConfig,
    pub vae: VaeTrainConfig,
    pub cf: CfTrainConfig,
    pub grid: GridConfig,
    pub plain_cf: PlainCfConfig,
    pub plain_cf_k: PlainCfConfig,
    /// Replaces the dataset's own relationship constraints when set.
    pub constraints: Option<Vec<ConstraintSpec>>,
    pub output_dir: PathBuf,
    pub loo: bool,
    /// Seeded subsample of leave-one-out folds; `None` runs every fold.
    pub loo_folds: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults for a dataset.
    pub fn preset(dataset: DatasetSource) -> Self {
        let mut classifier = ClassifierConfig::default();
        let mut schema = None;
        let mut loo = false;
        match &dataset {
            DatasetSource::Toy => classifier.patience = 200,
            DatasetSource::Nonlinear => {
                classifier.learning_rate = 5e-3;
                classifier.batch_size = 32;
                classifier.epochs = 8000;
                classifier.patience = 1500;
            }
            DatasetSource::Csv(_) => {
                classifier.hidden_size = 16;
                let s = CsvSchema::pima();
                loo = s.split == crate::datasets::SplitPolicy::LeaveOneOut;
                schema = Some(s);
            }
        }
        Self {
            output_dir: PathBuf::from("runs").join(match &dataset {
                DatasetSource::Csv(p) => p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "csv".into()),
                other => other.to_string(),
            }),
            dataset,
            schema,
            n_samples: 20000,
            seed: 0,
            classifier,
            vae: VaeTrainConfig::default(),
            cf: CfTrainConfig::default(),
            grid: GridConfig::default(),
            plain_cf: PlainCfConfig::default(),
            plain_cf_k: PlainCfConfig::default(),
            constraints: None,
            loo,
            loo_folds: Some(40),
        }
    }

    /// Resolves a configuration from an optional JSON file plus dotted
    /// `key=value` overrides. The dataset named by the file or overrides
    /// selects the preset the rest is merged onto.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut overlay = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !overlay.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        for s in sets {
            apply_set(&mut overlay, s)?;
        }
        let dataset = match overlay.get("dataset") {
            Some(Value::String(s)) => DatasetSource::parse(s)?,
            Some(other) => return Err(Error::Config(format!("dataset must be a string, got {other}"))),
            None => DatasetSource::Toy,
        };
        let mut base = serde_json::to_value(Self::preset(dataset))?;
        merge(&mut base, overlay, "")?;
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.hidden_size.is_empty() || g.learning_rate.is_empty() || g.batch_size.is_empty() {
            return Err(Error::Config("grid lists must be non-empty".into()));
        }
        if self.dataset.is_synthetic() && self.n_samples < 10 {
            return Err(Error::Config("n_samples must be at least 10".into()));
        }
        if self.loo && self.dataset.is_synthetic() {
            return Err(Error::Config("leave-one-out applies to csv datasets only".into()));
        }
        if let DatasetSource::Csv(p) = &self.dataset {
            if self.schema.is_none() {
                return Err(Error::Config("csv datasets need a schema".into()));
            }
            if !p.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
            }
        }
        if self.loo_folds == Some(0) {
            return Err(Error::Config("loo_folds must be positive".into()));
        }
        self.cf.validate()?;
        self.vae.validate()?;
        self.plain_cf.validate()?;
        self.plain_cf_k.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Named stage seed derived from the root seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

fn apply_set(overlay: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = overlay;
    for p in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-object")))?;
        node = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Recursive object merge; keys must already exist in `base`.
fn merge(base: &mut Value, overlay: Value, path: &str) -> Result<()> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &here)?,
                    Some(slot) => *slot = v,
                    None => return Err(Error::Config(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_names_round_trip() {
        for s in ["toy", "nonlinear", "csv:/tmp/x.csv"] {
            assert_eq!(DatasetSource::parse(s).unwrap().to_string(), s);
        }
        assert!(matches!(DatasetSource::parse("iris"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_land_in_nested_fields() {
        let cfg = ExperimentConfig::resolve(
            None,
            &["cf.hidden_size=64".into(), "seed=9".into(), "grid.batch_size=[16]".into()],
        )
        .unwrap();
        assert_eq!(cfg.cf.hidden_size, 64);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.grid.batch_size, vec![16]);
        assert_eq!(cfg.grid.n_cells(), 6);
    }

    #[test]
    fn dataset_override_selects_preset() {
        let cfg = ExperimentConfig::resolve(None, &["dataset=nonlinear".into()]).unwrap();
        assert_eq!(cfg.classifier.learning_rate, 5e-3);
        assert_eq!(cfg.dataset, DatasetSource::Nonlinear);
    }

    #[test]
    fn unknown_keys_and_empty_grids_rejected() {
        assert!(matches!(
            ExperimentConfig::resolve(None, &["cf.hiden_size=64".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::resolve(None, &["grid.hidden_size=[]".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(ExperimentConfig::resolve(None, &["seed".into()]), Err(Error::Config(_))));
    }

    #[test]
    fn missing_csv_rejected() {
        assert!(matches!(
            ExperimentConfig::resolve(None, &["dataset=csv:/nonexistent/file.csv".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset(DatasetSource::Toy);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
