use std::fs;

use tempfile::TempDir;
use xmaug::checkpoint::load_checkpoint;
use xmaug::config::ExperimentConfig;
use xmaug::error::Error;
use xmaug::experiment::{
    run_ablate, run_eval, run_synth, run_train, EvalFlags, Manifest, RunData, ABLATION_JSON,
    ABLATION_TXT, CHECKPOINT, EMBEDDINGS, MANIFEST, SOURCE_TRAIN, TARGET_TEST, TARGET_TRAIN,
};
use xmaug::io::{decode_dataset, encode_dataset, read_embedding_file, write_embedding_file};
use xmaug::synth::BenchmarkConfig;
use xmaug::trainer::TrainConfig;
use xmaug::{Benchmark, Dataset};

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        benchmark: BenchmarkConfig {
            num_classes: 6,
            clusters: 2,
            feature_dim: 6,
            text_dim: 6,
            n_max: 40,
            imbalance_ratio: 10.0,
            test_per_class: 4,
            ..BenchmarkConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            batch_per_domain: 8,
            shared_dim: 6,
            ..TrainConfig::desk()
        },
        ..ExperimentConfig::default()
    };
    cfg.eval.ablation_seeds = vec![1, 2];
    cfg.set_seed(4);
    cfg
}

#[test]
fn manifest_matches_generated_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config();
    let manifest = run_synth(&cfg, tmp.path()).unwrap();
    let mut on_disk: Manifest =
        serde_json::from_str(&fs::read_to_string(tmp.path().join(MANIFEST)).unwrap()).unwrap();
    // the generator seed is carried by the top-level seed field
    on_disk.generator.seed = on_disk.seed;
    assert_eq!(on_disk, manifest);
    assert_eq!(manifest.seed, 4);
    assert_eq!(manifest.source_imbalance_ratio, 10.0);
    assert_eq!(manifest.target_imbalance_ratio, 10.0);
    for entry in &manifest.files {
        let ds: Dataset = read_embedding_file(&tmp.path().join(&entry.name)).unwrap();
        assert_eq!(ds.len(), entry.samples, "{}", entry.name);
    }
    let data = RunData::load(tmp.path()).unwrap();
    assert_eq!(
        data.source_train.class_counts().source,
        manifest.source_counts
    );
    assert_eq!(
        data.target_train.class_counts().target,
        manifest.target_counts
    );
}

#[test]
fn embedding_files_round_trip_generated_data() {
    let tmp = TempDir::new().unwrap();
    let bench = Benchmark::generate(&tiny_config().benchmark).unwrap();
    for (i, ds) in [&bench.source_train, &bench.target_train, &bench.target_test]
        .into_iter()
        .enumerate()
    {
        let path = tmp.path().join(format!("{i}.xmeb"));
        write_embedding_file(ds, &path).unwrap();
        let back: Dataset = read_embedding_file(&path).unwrap();
        assert_eq!(back, ds.quantized_f32());
        assert_eq!(fs::read(&path).unwrap(), encode_dataset(&back).unwrap());
    }
}

#[test]
fn single_precision_files_widen_losslessly() {
    let bench = Benchmark::generate(&tiny_config().benchmark).unwrap();
    let narrow = bench.target_test.cast::<f32>().unwrap();
    let bytes = encode_dataset(&narrow).unwrap();
    let back = decode_dataset::<f32>(&bytes).unwrap();
    assert_eq!(back, narrow);
    let wide = back.cast::<f64>().unwrap();
    assert_eq!(wide.cast::<f32>().unwrap(), narrow);
}

#[test]
fn mixed_runs_are_rejected_on_load() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config();
    run_synth(&cfg, tmp.path()).unwrap();
    let mut other = cfg.clone();
    other.benchmark.text_dim = 5;
    let foreign = Benchmark::generate(&other.benchmark).unwrap();
    write_embedding_file(&foreign.target_test, &tmp.path().join(TARGET_TEST)).unwrap();
    assert!(matches!(
        RunData::load(tmp.path()),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn eval_before_train_reports_missing_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config();
    run_synth(&cfg, tmp.path()).unwrap();
    let err = run_eval(&cfg, tmp.path(), EvalFlags::default()).unwrap_err();
    assert!(matches!(err, Error::ReadError { .. }), "{err}");
}

#[test]
fn train_then_eval_writes_consistent_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config();
    let manifest = run_synth(&cfg, tmp.path()).unwrap();
    let history = run_train(&cfg, tmp.path()).unwrap();
    assert_eq!(history.epochs.len(), 3);
    let ckpt = load_checkpoint::<f64>(&tmp.path().join(CHECKPOINT)).unwrap();
    assert_eq!(ckpt.fusion, cfg.train.fusion());
    let flags = EvalFlags {
        export_embeddings: true,
        ..EvalFlags::default()
    };
    let report = run_eval(&cfg, tmp.path(), flags).unwrap();
    assert_eq!(report.num_test, 6 * 4);
    assert_eq!(report.config_fingerprint, cfg.fingerprint());
    let csv = fs::read_to_string(tmp.path().join(EMBEDDINGS)).unwrap();
    let samples: usize = manifest.files.iter().map(|f| f.samples).sum();
    assert_eq!(csv.lines().count(), 1 + samples);
    let image_only = run_eval(
        &cfg,
        tmp.path(),
        EvalFlags {
            image_only: true,
            ..EvalFlags::default()
        },
    )
    .unwrap();
    assert!(image_only.image_only);
    for f in [SOURCE_TRAIN, TARGET_TRAIN] {
        assert!(tmp.path().join(f).is_file());
    }
}

#[test]
fn ablate_writes_table_files() {
    let tmp = TempDir::new().unwrap();
    let table = run_ablate(&tiny_config(), tmp.path()).unwrap();
    assert_eq!(table.seeds, vec![1, 2]);
    assert!(table.rows.iter().all(|r| r.per_seed.len() == 2));
    assert_eq!(
        fs::read_to_string(tmp.path().join(ABLATION_TXT)).unwrap(),
        table.to_text()
    );
    assert_eq!(
        fs::read_to_string(tmp.path().join(ABLATION_JSON)).unwrap(),
        table.to_json()
    );
}
