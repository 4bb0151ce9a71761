//! End-to-end pipelines behind the command-line interface.
//!
//! Output layout of a run directory:
//!
//! | file                | written by | contents                                  |
//! |---------------------|------------|-------------------------------------------|
//! | `source_train.xmeb` | synth      | source-domain training set                |
//! | `target_train.xmeb` | synth      | long-tailed target-domain training set    |
//! | `target_test.xmeb`  | synth      | class-balanced target-domain test set     |
//! | `manifest.json`     | synth      | counts, imbalance ratios, generator setup |
//! | `checkpoint.xmlt`   | train      | trained weights                           |
//! | `history.json`      | train      | per-epoch losses and accuracies           |
//! | `metrics.json`      | eval       | [`MetricsReport`]                         |
//! | `embeddings.csv`    | eval       | optional embedding export                 |
//! | `ablation.json/txt` | ablate     | component ablation table                  |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    assign_groups, evaluate, export_embeddings, EvalOptions, MetricsReport, Projection,
    TrainContext,
};
use crate::io::{read_embedding_file, write_embedding_file};
use crate::model::{InferenceText, ModelParams};
use crate::synth::{imbalance_ratio, Benchmark, BenchmarkConfig};
use crate::trainer::{train, TrainConfig, TrainHistory};

pub const SOURCE_TRAIN: &str = "source_train.xmeb";
pub const TARGET_TRAIN: &str = "target_train.xmeb";
pub const TARGET_TEST: &str = "target_test.xmeb";
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.xmlt";
pub const HISTORY: &str = "history.json";
pub const METRICS: &str = "metrics.json";
pub const EMBEDDINGS: &str = "embeddings.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TXT: &str = "ablation.txt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::write(path, e))
}

fn to_json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub samples: usize,
}

/// Audit record of a generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_fingerprint: String,
    pub imbalance_ratio: f64,
    pub source_imbalance_ratio: f64,
    pub target_imbalance_ratio: f64,
    pub source_counts: Vec<usize>,
    pub target_counts: Vec<usize>,
    pub test_per_class: usize,
    pub files: Vec<FileEntry>,
    pub generator: BenchmarkConfig,
}

/// Generates the benchmark of `config` into `out`.
pub fn run_synth(config: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    let bench = Benchmark::<f64>::generate(&config.benchmark)?;
    create_dir(out)?;
    let mut files = Vec::new();
    for (name, ds) in [
        (SOURCE_TRAIN, &bench.source_train),
        (TARGET_TRAIN, &bench.target_train),
        (TARGET_TEST, &bench.target_test),
    ] {
        write_embedding_file(ds, &out.join(name))?;
        files.push(FileEntry {
            name: name.into(),
            samples: ds.len(),
        });
    }
    let manifest = Manifest {
        seed: config.seed,
        config_fingerprint: config.fingerprint(),
        imbalance_ratio: config.benchmark.imbalance_ratio,
        source_imbalance_ratio: imbalance_ratio(&bench.source_counts)?,
        target_imbalance_ratio: imbalance_ratio(&bench.target_counts)?,
        source_counts: bench.source_counts.clone(),
        target_counts: bench.target_counts.clone(),
        test_per_class: config.benchmark.test_per_class,
        files,
        generator: config.benchmark.clone(),
    };
    write_text(&out.join(MANIFEST), &to_json(&manifest))?;
    Ok(manifest)
}

/// Training and test sets of a run.
pub struct RunData {
    pub source_train: Dataset<f64>,
    pub target_train: Dataset<f64>,
    pub target_test: Dataset<f64>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let data = Self {
            source_train: read_embedding_file(&dir.join(SOURCE_TRAIN))?,
            target_train: read_embedding_file(&dir.join(TARGET_TRAIN))?,
            target_test: read_embedding_file(&dir.join(TARGET_TEST))?,
        };
        data.source_train.check_compatible(&data.target_train)?;
        data.source_train.check_compatible(&data.target_test)?;
        Ok(data)
    }

    pub fn from_benchmark(bench: Benchmark<f64>) -> Self {
        Self {
            source_train: bench.source_train,
            target_train: bench.target_train,
            target_test: bench.target_test,
        }
    }

    fn context(&self) -> TrainContext<'_, f64> {
        TrainContext {
            source_counts: &self.source_train.class_counts().source,
            target_counts: &self.target_train.class_counts().target,
            gap_data: Some((&self.source_train, &self.target_train)),
        }
    }
}

fn data_dir(config: &ExperimentConfig, out: &Path) -> PathBuf {
    config.data_dir.clone().unwrap_or_else(|| out.to_path_buf())
}

/// Trains on the run's data and writes checkpoint and history to `out`.
pub fn run_train(config: &ExperimentConfig, out: &Path) -> Result<TrainHistory> {
    config.validate()?;
    let data = RunData::load(&data_dir(config, out))?;
    let (params, history) = train(&data.source_train, &data.target_train, &config.train)?;
    create_dir(out)?;
    save_checkpoint(&params, config.train.fusion(), &out.join(CHECKPOINT))?;
    write_text(&out.join(HISTORY), &to_json(&history))?;
    Ok(history)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalFlags {
    pub image_only: bool,
    pub export_embeddings: bool,
    pub pca2d: bool,
}

fn eval_options(config: &ExperimentConfig, image_only: bool) -> EvalOptions {
    EvalOptions {
        thresholds: config.eval.thresholds,
        weighting: config.eval.group_weighting,
        text: if image_only {
            InferenceText::ImageOnly
        } else {
            InferenceText::SampleText
        },
        config_fingerprint: config.fingerprint(),
        seed: config.seed,
    }
}

/// Evaluates the run's checkpoint on the balanced target test set.
pub fn run_eval(config: &ExperimentConfig, out: &Path, flags: EvalFlags) -> Result<MetricsReport> {
    config.validate()?;
    let checkpoint = load_checkpoint::<f64>(&out.join(CHECKPOINT))?;
    let data = RunData::load(&data_dir(config, out))?;
    let report = evaluate(
        &checkpoint.params,
        checkpoint.fusion,
        &data.target_test,
        &data.context(),
        &eval_options(config, flags.image_only),
    )?;
    write_text(&out.join(METRICS), &report.to_json())?;
    if flags.export_embeddings || flags.pca2d {
        export_run_embeddings(
            config,
            &checkpoint.params,
            &data,
            &out.join(EMBEDDINGS),
            flags.pca2d,
        )?;
    }
    Ok(report)
}

/// Writes embeddings of every training and test sample.
pub fn export_run_embeddings(
    config: &ExperimentConfig,
    params: &ModelParams<f64>,
    data: &RunData,
    path: &Path,
    pca2d: bool,
) -> Result<()> {
    let all: Vec<_> = data
        .source_train
        .samples()
        .iter()
        .chain(data.target_train.samples())
        .chain(data.target_test.samples())
        .cloned()
        .collect();
    let merged = Dataset::new(
        all,
        data.source_train.num_classes(),
        data.source_train.feature_dim(),
        data.source_train.text_dim(),
    )?;
    let groups = assign_groups(
        &data.target_train.class_counts().target,
        &config.eval.thresholds,
    );
    let projection = if pca2d {
        Projection::Pca2d
    } else {
        Projection::None
    };
    export_embeddings(params, &merged, &groups, path, projection)
}

/// Trains one configuration on in-memory data and evaluates it.
pub fn train_and_evaluate(
    config: &ExperimentConfig,
    train_config: &TrainConfig,
    data: &RunData,
) -> Result<MetricsReport> {
    let (params, _) = train(&data.source_train, &data.target_train, train_config)?;
    evaluate(
        &params,
        train_config.fusion(),
        &data.target_test,
        &data.context(),
        &eval_options(config, false),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alignment: bool,
    pub calibration: bool,
    pub title: bool,
    pub ingredients: bool,
    /// Medians over seeds; `None` when a group was empty for every seed.
    pub head_top1: Option<f64>,
    pub medium_top1: Option<f64>,
    pub tail_top1: Option<f64>,
    pub all_top1: f64,
    pub all_top5: f64,
    pub domain_gap: Option<f64>,
    pub per_seed: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub config_fingerprint: String,
    pub rows: Vec<AblationRow>,
}

/// Median of the defined values (mean of the middle pair for even counts).
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Trains and evaluates the five ablation rows for every configured seed.
///
/// For each seed the benchmark is regenerated with that seed and all rows
/// train on it with the same seed. Rows run on separate threads; the table
/// is assembled in fixed row order.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationTable> {
    config.validate()?;
    let seeds = config.eval.ablation_seeds.clone();
    let rows_cfg = config.train.ablation_rows();
    // reports[row][seed]
    let mut reports: Vec<Vec<MetricsReport>> = vec![Vec::new(); rows_cfg.len()];
    for &seed in &seeds {
        let mut seeded = config.clone();
        seeded.set_seed(seed);
        let data = RunData::from_benchmark(Benchmark::generate(&seeded.benchmark)?);
        let results: Vec<Result<MetricsReport>> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeded
                .train
                .ablation_rows()
                .into_iter()
                .map(|row| {
                    let (seeded, data) = (&seeded, &data);
                    scope.spawn(move || train_and_evaluate(seeded, &row, data))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        });
        for (slot, r) in reports.iter_mut().zip(results) {
            slot.push(r?);
        }
    }
    let rows = rows_cfg
        .iter()
        .zip(reports)
        .map(|(cfg, per_seed)| AblationRow {
            alignment: cfg.use_alignment,
            calibration: cfg.use_calibration,
            title: cfg.use_title,
            ingredients: cfg.use_ingredients,
            head_top1: median(per_seed.iter().filter_map(|r| r.group_top1.head)),
            medium_top1: median(per_seed.iter().filter_map(|r| r.group_top1.medium)),
            tail_top1: median(per_seed.iter().filter_map(|r| r.group_top1.tail)),
            all_top1: median(per_seed.iter().map(|r| r.top1_all)).expect("at least one seed"),
            all_top5: median(per_seed.iter().map(|r| r.top5_all)).expect("at least one seed"),
            domain_gap: median(per_seed.iter().filter_map(|r| r.domain_gap_after)),
            per_seed,
        })
        .collect();
    Ok(AblationTable {
        seeds,
        config_fingerprint: config.fingerprint(),
        rows,
    })
}

impl AblationTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let tick = |b: bool| if b { "x" } else { "" };
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut s = String::new();
        writeln!(s, "median over seeds {:?}", self.seeds).unwrap();
        writeln!(
            s,
            "{:^5} {:^5} {:^5} {:^5} | {:>6} {:>6} {:>6} {:>6} | {:>6} | {:>6}",
            "align", "calib", "title", "ingr", "head", "medium", "tail", "all", "top5", "gap"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:^5} {:^5} {:^5} {:^5} | {:>6} {:>6} {:>6} {:>6} | {:>6} | {:>6}",
                tick(r.alignment),
                tick(r.calibration),
                tick(r.title),
                tick(r.ingredients),
                num(r.head_top1),
                num(r.medium_top1),
                num(r.tail_top1),
                num(Some(r.all_top1)),
                num(Some(r.all_top5)),
                num(r.domain_gap),
            )
            .unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Runs the ablation and writes `ablation.json` and `ablation.txt`.
pub fn run_ablate(config: &ExperimentConfig, out: &Path) -> Result<AblationTable> {
    let table = run_ablation(config)?;
    create_dir(out)?;
    write_text(&out.join(ABLATION_JSON), &table.to_json())?;
    write_text(&out.join(ABLATION_TXT), &table.to_text())?;
    Ok(table)
}
