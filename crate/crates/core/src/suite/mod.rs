//! Few-shot experiment suite: for every `(k, seed)` sample, train and
//! evaluate, then aggregate per `k`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::DecodeOptions;
use crate::doc::funsd::{load_funsd, FunsdOptions};
use crate::doc::{build_vocab, generate_synthetic_split, sample_few_shot, Dataset, LabelSet, SyntheticSpec, Vocab};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, render_csv, render_text, EvalOptions, RunReport, SeedRun};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Precision, Real};
use crate::train::{train, TrainConfig};

/// Where the train pool and test split come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Generated on the fly; `spec` defaults to the built-in forms layout.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<PathBuf>,
        seed: u64,
    },
    Funsd {
        root: PathBuf,
    },
    /// Dataset JSON files.
    Files {
        train: PathBuf,
        test: PathBuf,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Synthetic { spec, seed } => {
                let spec = match spec {
                    Some(p) => SyntheticSpec::load(p)?,
                    None => SyntheticSpec::forms(),
                };
                generate_synthetic_split(&spec, *seed)
            }
            DatasetSource::Funsd { root } => load_funsd(root, &FunsdOptions::default()),
            DatasetSource::Files { train, test } => Ok((Dataset::load(train)?, Dataset::load(test)?)),
        }
    }
}

/// Surface names for the dataset's labels. Without `names` each label is
/// named by its id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNames {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl Default for LabelNames {
    fn default() -> Self {
        LabelNames {
            id: "orig".into(),
            names: None,
        }
    }
}

impl LabelNames {
    pub fn resolve(&self, dataset: &Dataset) -> Result<LabelSet> {
        let base = LabelSet::from_ids(self.id.clone(), &dataset.labels)?;
        match &self.names {
            None => Ok(base),
            Some(names) => {
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                base.renamed(self.id.clone(), &names)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub labels: LabelNames,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Minimum training-pool frequency for a word to enter the vocabulary.
    pub min_freq: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeOptions,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            name: "suite".into(),
            dataset: DatasetSource::Synthetic { spec: None, seed: 7 },
            labels: LabelNames::default(),
            shots: vec![1, 3, 5, 7],
            seeds: (0..6).collect(),
            min_freq: 1,
            model: ModelConfig::tiny(32, 2, 4),
            train: TrainConfig::default(),
            decode: DecodeOptions::default(),
        }
    }
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SuiteConfig = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::Config("shots must be a non-empty list of positive counts".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.train.validate()?;
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(1);
        model.validate()
    }
}

/// Record written before any computation; sufficient to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub out_dir: PathBuf,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, config: &impl Serialize) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            out_dir: out_dir.to_path_buf(),
            config: serde_json::to_value(config).expect("config serializes"),
        }
    }

    /// Create `out_dir` and write `manifest.json` into it.
    pub fn write(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Inputs shared by every cell of a suite.
pub struct Prepared {
    pub pool: Dataset,
    pub test: Dataset,
    pub labels: LabelSet,
    pub vocab: Vocab,
}

pub fn prepare(cfg: &SuiteConfig) -> Result<Prepared> {
    let (pool, test) = cfg.dataset.load()?;
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let labels = cfg.labels.resolve(&pool)?;
    let vocab = build_vocab(&pool.pages, &[&labels], cfg.min_freq);
    Ok(Prepared { pool, test, labels, vocab })
}

fn cell<T: Real>(cfg: &SuiteConfig, data: &Prepared, k: usize, seed: u64) -> Result<crate::eval::EntityMetrics> {
    let split = sample_few_shot(&data.pool.pages, &data.test.pages, k, seed)?;
    let model: Model<T> = Model::new(cfg.model.clone(), data.vocab.clone(), data.labels.clone(), seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let trained = train(model, &split.train, &train_cfg)?;
    evaluate_model(&trained.model, &data.test.pages, &eval_options(cfg))
}

fn eval_options(cfg: &SuiteConfig) -> EvalOptions {
    EvalOptions {
        decode: cfg.decode.clone(),
        exec: cfg.train.exec,
    }
}

/// Train and evaluate one `(k, seed)` cell.
pub fn run_cell(cfg: &SuiteConfig, data: &Prepared, k: usize, seed: u64) -> SeedRun {
    let result = match cfg.model.precision {
        Precision::F32 => cell::<f32>(cfg, data, k, seed),
        Precision::F64 => cell::<f64>(cfg, data, k, seed),
    };
    match result {
        Ok(m) => {
            log::info!("k={k} seed={seed}: F1 {:.4}", m.f1);
            SeedRun {
                seed,
                metrics: Some(m),
                error: None,
            }
        }
        Err(e) => {
            log::error!("k={k} seed={seed}: {e}");
            SeedRun {
                seed,
                metrics: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Run every cell; failed cells are recorded and the suite continues.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    Ok(cfg
        .shots
        .iter()
        .map(|&k| {
            let runs = cfg.seeds.iter().map(|&s| run_cell(cfg, &data, k, s)).collect();
            RunReport::new(&data.pool.name, &data.labels.id, &cfg.labels.id, k, runs)
        })
        .collect())
}

/// Write `report.txt`, `metrics.csv` and `runs.json` into `dir`.
pub fn write_reports(reports: &[RunReport], dir: &Path) -> Result<()> {
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    write("report.txt", render_text(reports))?;
    write("metrics.csv", render_csv(reports))?;
    write("runs.json", serde_json::to_string_pretty(reports).expect("reports serialize"))
}

#[cfg(test)]
mod tests;
