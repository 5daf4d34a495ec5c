use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use layout_ner::analysis::{emit_grid, label_grids, region_contrast, GridFormat, Region, DEFAULT_STRIDE};
use layout_ner::codec::decode_entities;
use layout_ner::decode::{decode_page, decode_page_traced, DecodeOptions};
use layout_ner::doc::{build_vocab, sample_few_shot, BoundingBox, Dataset, Entity, Page, SyntheticSpec};
use layout_ner::eval::{predict_pages, render_csv, render_text, score_predictions, EvalOptions, RunReport, SeedRun};
use layout_ner::model::{load_checkpoint, read_checkpoint, save_checkpoint, Model, ModelConfig};
use layout_ner::suite::{run_suite, write_reports, LabelNames, RunManifest, SuiteConfig};
use layout_ner::tensor::{Precision, Real};
use layout_ner::train::{train, write_log_jsonl, TrainConfig};

#[derive(Parser)]
#[command(name = "layout-ner", version, about = "Few-shot entity recognition on document layouts")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for sampling, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Label surface names: `orig` or `file:PATH` with `{"id": .., "names": [..]}`.
    #[arg(long, global = true, default_value = "orig")]
    labels: String,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Copy, Clone, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum FormatArg {
    Csv,
    Pgm,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test corpus.
    Synth {
        /// Generator spec; defaults to the built-in forms layout.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Fine-tune a model on a dataset file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Sample this many pages from the dataset instead of using all.
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Score a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Decode pages and export predicted entities.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only this page id.
        #[arg(long)]
        page: Option<String>,
        /// Also write per-step records to `trace.jsonl`.
        #[arg(long)]
        trace: bool,
    },
    /// Export spatial-identifier similarity grids for every label.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: usize,
        #[arg(long, value_enum, default_value = "both")]
        format: FormatArg,
    },
    /// Sample, train and evaluate over shot counts and seeds.
    FewshotSuite,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<layout_ner::Error> for Failure {
    fn from(e: layout_ner::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

/// Treat errors of input loading and validation as usage errors.
trait Usage<T> {
    fn usage(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Usage<T> for Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

/// `train` configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct TrainJob {
    model: ModelConfig,
    train: TrainConfig,
    min_freq: usize,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob {
            model: ModelConfig::tiny(32, 2, 4),
            train: TrainConfig::default(),
            min_freq: 1,
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a, C: Serialize> {
    #[serde(flatten)]
    config: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    labels: &'a LabelNames,
    inputs: serde_json::Value,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let raw = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    serde_json::from_str(&raw)
        .with_context(|| format!("parsing {}", path.display()))
        .usage()
}

fn config_or_default<T: Default + for<'de> Deserialize<'de>>(common: &Common) -> CliResult<T> {
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn label_names(spec: &str) -> CliResult<LabelNames> {
    match spec {
        "orig" => Ok(LabelNames::default()),
        s => match s.strip_prefix("file:") {
            Some(path) => read_json(Path::new(path)),
            None => Err(Failure::Usage(anyhow!("--labels expects `orig` or `file:PATH`, got `{s}`"))),
        },
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_manifest(common: &Common, command: &str, config: &impl Serialize) -> CliResult<()> {
    RunManifest::new(command, &common.out, config).write()?;
    Ok(())
}

fn cmd_synth(common: &Common, spec_path: Option<&Path>) -> CliResult<()> {
    let mut spec = match spec_path.or(common.config.as_deref()) {
        Some(p) => SyntheticSpec::load(p).usage()?,
        None => SyntheticSpec::forms(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    spec.check().usage()?;
    write_manifest(common, "synth", &spec)?;
    let (train, test) = layout_ner::doc::generate_synthetic_split(&spec, spec.seed).usage()?;
    train.save(&common.out.join("train.json"))?;
    test.save(&common.out.join("test.json"))?;
    println!(
        "wrote {} train and {} test pages to {}",
        train.len(),
        test.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_train(common: &Common, data: &Path, shots: Option<usize>) -> CliResult<()> {
    let mut job: TrainJob = config_or_default(common)?;
    let names = label_names(&common.labels)?;
    if let Some(seed) = common.seed {
        job.train.seed = seed;
    }
    if let Some(p) = common.precision {
        job.model.precision = p.into();
    }
    job.train.validate().usage()?;
    let dataset = Dataset::load(data).usage()?;
    let labels = names.resolve(&dataset).usage()?;
    let seed = job.train.seed;
    let inputs = serde_json::json!({ "data": data, "shots": shots });
    write_manifest(
        common,
        "train",
        &Resolved {
            config: &job,
            seed: Some(seed),
            labels: &names,
            inputs,
        },
    )?;
    let pages = match shots {
        Some(k) => sample_few_shot(&dataset.pages, &[], k, seed).usage()?.train,
        None => dataset.pages.clone(),
    };
    let vocab = build_vocab(&dataset.pages, &[&labels], job.min_freq);
    match job.model.precision {
        Precision::F32 => train_with::<f32>(common, &job, Model::new(job.model.clone(), vocab, labels, seed).usage()?, &pages),
        Precision::F64 => train_with::<f64>(common, &job, Model::new(job.model.clone(), vocab, labels, seed).usage()?, &pages),
    }
}

fn train_with<T: Real>(common: &Common, job: &TrainJob, model: Model<T>, pages: &[Page]) -> CliResult<()> {
    let out = train(model, pages, &job.train)?;
    let mut log = Vec::new();
    write_log_jsonl(&out.log, &mut log).context("encoding log")?;
    write_file(&common.out.join("train_log.jsonl"), log)?;
    save_checkpoint(&out.model, &common.out.join("model.ckpt"))?;
    println!(
        "trained on {} pages; best loss {:.5} at step {}",
        pages.len(),
        out.best_loss,
        out.best_step
    );
    Ok(())
}

fn load_model<T: Real>(path: &Path) -> CliResult<Model<T>> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path).usage()
}

fn checkpoint_precision(common: &Common, path: &Path) -> CliResult<Precision> {
    if let Some(p) = common.precision {
        return Ok(p.into());
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).usage()?;
    Ok(read_checkpoint(&bytes).usage()?.config.precision)
}

fn cmd_eval(common: &Common, checkpoint: &Path, data: &Path) -> CliResult<()> {
    if !checkpoint.is_file() {
        return Err(Failure::Usage(anyhow!("checkpoint {} not found", checkpoint.display())));
    }
    let opts: EvalOptions = config_or_default(common)?;
    let dataset = Dataset::load(data).usage()?;
    write_manifest(
        common,
        "eval",
        &serde_json::json!({ "checkpoint": checkpoint, "data": data, "options": opts }),
    )?;
    match checkpoint_precision(common, checkpoint)? {
        Precision::F32 => eval_with(common, &load_model::<f32>(checkpoint)?, &dataset, &opts),
        Precision::F64 => eval_with(common, &load_model::<f64>(checkpoint)?, &dataset, &opts),
    }
}

fn eval_with<T: Real>(common: &Common, model: &Model<T>, dataset: &Dataset, opts: &EvalOptions) -> CliResult<()> {
    if dataset.is_empty() {
        return Err(Failure::Usage(anyhow!("dataset has no pages")));
    }
    let preds = predict_pages(model, &dataset.pages, opts)?;
    let metrics = score_predictions(&dataset.pages, &preds)?;
    let seed = common.seed.unwrap_or(0);
    let report = RunReport::new(
        &dataset.name,
        &model.labels.id,
        &model.labels.id,
        0,
        vec![SeedRun {
            seed,
            metrics: Some(metrics),
            error: None,
        }],
    );
    let reports = [report];
    write_file(&common.out.join("report.txt"), render_text(&reports))?;
    write_file(&common.out.join("metrics.csv"), render_csv(&reports))?;
    write_file(
        &common.out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).context("encoding metrics")?,
    )?;
    write_file(
        &common.out.join("predictions.json"),
        serde_json::to_string_pretty(&preds).context("encoding predictions")?,
    )?;
    println!(
        "P {:.4}  R {:.4}  F1 {:.4}  ({} predicted, {} gold, {} correct)",
        metrics.precision, metrics.recall, metrics.f1, metrics.predicted, metrics.gold, metrics.tp
    );
    Ok(())
}

#[derive(Serialize)]
struct OverlayEntity<'a> {
    #[serde(flatten)]
    entity: &'a Entity,
    text: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Serialize)]
struct PageEntities<'a> {
    page: &'a str,
    width: f64,
    height: f64,
    entities: &'a [Entity],
    overlay: Vec<OverlayEntity<'a>>,
    truncated: bool,
}

fn union_box(page: &Page, e: &Entity) -> BoundingBox {
    let ws = &page.words[e.start..=e.end];
    let c = |f: fn(&BoundingBox) -> u16, min: bool| {
        let it = ws.iter().map(|w| f(&w.bbox));
        if min {
            it.min().unwrap()
        } else {
            it.max().unwrap()
        }
    };
    BoundingBox::new(c(|b| b.x0, true), c(|b| b.y0, true), c(|b| b.x1, false), c(|b| b.y1, false)).expect("union of valid boxes")
}

fn cmd_decode(common: &Common, checkpoint: &Path, data: &Path, page: Option<&str>, trace: bool) -> CliResult<()> {
    if !checkpoint.is_file() {
        return Err(Failure::Usage(anyhow!("checkpoint {} not found", checkpoint.display())));
    }
    let opts: DecodeOptions = config_or_default(common)?;
    let dataset = Dataset::load(data).usage()?;
    let pages: Vec<&Page> = dataset.pages.iter().filter(|p| page.is_none_or(|id| p.id == id)).collect();
    if pages.is_empty() {
        return Err(Failure::Usage(anyhow!("no matching pages in {}", data.display())));
    }
    write_manifest(
        common,
        "decode",
        &serde_json::json!({ "checkpoint": checkpoint, "data": data, "page": page, "options": opts }),
    )?;
    match checkpoint_precision(common, checkpoint)? {
        Precision::F32 => decode_with(common, &load_model::<f32>(checkpoint)?, &pages, &opts, trace),
        Precision::F64 => decode_with(common, &load_model::<f64>(checkpoint)?, &pages, &opts, trace),
    }
}

fn decode_with<T: Real>(common: &Common, model: &Model<T>, pages: &[&Page], opts: &DecodeOptions, trace: bool) -> CliResult<()> {
    let mut results = Vec::new();
    let mut trace_lines = String::new();
    for page in pages {
        let out = if trace {
            let mut steps = Vec::new();
            let out = decode_page_traced(model, page, opts, &mut steps)?;
            for s in &steps {
                let mut rec = serde_json::to_value(s).context("encoding trace")?;
                rec["page"] = serde_json::Value::from(page.id.as_str());
                trace_lines.push_str(&rec.to_string());
                trace_lines.push('\n');
            }
            out
        } else {
            decode_page(model, page, opts)?
        };
        let (entities, diags) = decode_entities(&out.sequence, page, &model.labels);
        for d in &diags {
            log::warn!("page {}: {} at {}: {}", page.id, d.kind, d.at, d.detail);
        }
        results.push((page, entities, out.truncated, out.sequence.render(page, &model.labels)));
    }
    let export: Vec<PageEntities> = results
        .iter()
        .map(|(page, entities, truncated, _)| PageEntities {
            page: &page.id,
            width: page.width,
            height: page.height,
            entities,
            overlay: entities
                .iter()
                .map(|e| OverlayEntity {
                    entity: e,
                    text: page.words[e.start..=e.end]
                        .iter()
                        .map(|w| w.text.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                    bbox: union_box(page, e),
                })
                .collect(),
            truncated: *truncated,
        })
        .collect();
    write_file(
        &common.out.join("entities.json"),
        serde_json::to_string_pretty(&export).context("encoding entities")?,
    )?;
    let sequences: String = results.iter().map(|(p, _, _, s)| format!("{}\t{s}\n", p.id)).collect();
    write_file(&common.out.join("sequences.tsv"), sequences)?;
    if trace {
        write_file(&common.out.join("trace.jsonl"), trace_lines)?;
    }
    println!("decoded {} pages into {}", results.len(), common.out.display());
    Ok(())
}

fn cmd_heatmap(common: &Common, checkpoint: &Path, stride: usize, format: FormatArg) -> CliResult<()> {
    if !checkpoint.is_file() {
        return Err(Failure::Usage(anyhow!("checkpoint {} not found", checkpoint.display())));
    }
    layout_ner::analysis::grid_coords(stride).usage()?;
    write_manifest(
        common,
        "heatmap",
        &serde_json::json!({ "checkpoint": checkpoint, "stride": stride }),
    )?;
    let model = load_model::<f64>(checkpoint)?;
    let grids = label_grids(&model, stride, Default::default())?;
    let formats: &[GridFormat] = match format {
        FormatArg::Csv => &[GridFormat::Csv],
        FormatArg::Pgm => &[GridFormat::Pgm],
        FormatArg::Both => &[GridFormat::Csv, GridFormat::Pgm],
    };
    let top = Region::band(0, 300);
    let bottom = Region::band(700, 1001);
    for g in &grids {
        for &f in formats {
            emit_grid(g, &common.out, f)?;
        }
        let c = region_contrast(g, &top, &bottom)?;
        println!(
            "{}: top {:.4} bottom {:.4} difference {:+.4}",
            g.label, c.mean_a, c.mean_b, c.difference
        );
    }
    Ok(())
}

fn cmd_suite(common: &Common) -> CliResult<()> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Usage(anyhow!("fewshot-suite requires --config")))?;
    let mut cfg = SuiteConfig::load(path).usage()?;
    if common.labels != "orig" {
        cfg.labels = label_names(&common.labels)?;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(p) = common.precision {
        cfg.model.precision = p.into();
    }
    cfg.validate().usage()?;
    write_manifest(common, "fewshot-suite", &cfg)?;
    let reports = run_suite(&cfg).usage()?;
    write_reports(&reports, &common.out)?;
    print!("{}", render_text(&reports));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth { spec } => cmd_synth(c, spec.as_deref()),
        Command::Train { data, shots } => cmd_train(c, data, *shots),
        Command::Eval { checkpoint, data } => cmd_eval(c, checkpoint, data),
        Command::Decode {
            checkpoint,
            data,
            page,
            trace,
        } => cmd_decode(c, checkpoint, data, page.as_deref(), *trace),
        Command::Heatmap {
            checkpoint,
            stride,
            format,
        } => cmd_heatmap(c, checkpoint, *stride, *format),
        Command::FewshotSuite => cmd_suite(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
