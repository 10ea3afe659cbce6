//! Dataset creation, data-parallel training, checkpoints, bundles and the zoo.

use std::path::Path;

use easyasr_core::config::ClusterSpec;
use easyasr_core::records::{create_dataset, list_record_files, read_record_file, DatasetOptions};
use easyasr_core::registry::{list_entries, register, resolve, RegistryError};
use easyasr_core::audio::normalize_features;
use easyasr_core::synth::{toy_config, toy_corpus, toy_records, write_toy_corpus};
use easyasr_core::trainer::{
    bundle_digest, checkpoint_path, decode_checkpoint, encode_checkpoint, export_bundle, load_bundle, load_checkpoint,
    save_checkpoint, train, TrainJobSpec, Trainer, TrainerError, BUNDLE_MANIFEST,
};
use easyasr_core::{compute_logmel, AudioClip, ModelConfig, UtteranceRecord, Vocabulary};

fn toy(steps: usize) -> (ModelConfig, Vocabulary, Vec<UtteranceRecord>) {
    let mut cfg = toy_config();
    cfg.training.max_steps = steps;
    cfg.training.eval_every = steps.clamp(1, 100);
    let (vocab, records) = toy_records(&cfg.features, 3);
    (cfg, vocab, records)
}

/// Largest per-tensor relative L2 difference.
fn max_relative_diff(a: &Trainer, b: &Trainer) -> f64 {
    a.model()
        .params
        .iter()
        .map(|(name, x)| {
            let y = b.model().params.get(name).unwrap();
            let diff: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = y.data().iter().map(|q| q * q).sum::<f64>().sqrt();
            diff / norm.max(1e-12)
        })
        .fold(0.0, f64::max)
}

#[test]
fn workers_match_a_single_large_batch() {
    let (cfg, vocab, records) = toy(10);
    let mut wide = cfg.clone();
    wide.training.batch_size_per_worker = 8;
    let mut narrow = cfg.clone();
    narrow.training.batch_size_per_worker = 2;
    let mut one = Trainer::new(&wide, ClusterSpec::single(), &vocab, records.clone()).unwrap();
    let mut four = Trainer::new(&narrow, ClusterSpec::with_workers(4), &vocab, records).unwrap();
    for _ in 0..10 {
        one.step().unwrap();
        four.step().unwrap();
        let d = four.replica_digests();
        assert!(d.iter().all(|&x| x == d[0]));
    }
    let diff = max_relative_diff(&one, &four);
    assert!(diff < 1e-6, "relative difference {diff:e}");
}

#[test]
fn resume_is_bitwise() {
    let (cfg, vocab, records) = toy(10);
    let cluster = ClusterSpec::with_workers(2);
    let mut straight = Trainer::new(&cfg, cluster, &vocab, records.clone()).unwrap();
    let mut first = Trainer::new(&cfg, cluster, &vocab, records.clone()).unwrap();
    for _ in 0..5 {
        straight.step().unwrap();
        first.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&first.checkpoint(None), &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt, first.checkpoint(None));
    let mut resumed = Trainer::from_checkpoint(&cfg, cluster, &vocab, records, &ckpt).unwrap();
    for _ in 0..5 {
        let a = straight.step().unwrap();
        let b = resumed.step().unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    assert_eq!(encode_checkpoint(&straight.checkpoint(None)), encode_checkpoint(&resumed.checkpoint(None)));
}

#[test]
fn checkpoint_rejects_corruption_and_other_configs() {
    let (cfg, vocab, records) = toy(1);
    let trainer = Trainer::new(&cfg, ClusterSpec::single(), &vocab, records.clone()).unwrap();
    let bytes = encode_checkpoint(&trainer.checkpoint(Some(0.5)));
    assert_eq!(decode_checkpoint(&bytes).unwrap().eval_metric, Some(0.5));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(TrainerError::Corrupt(_))));
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(matches!(decode_checkpoint(&bad_version), Err(TrainerError::BadVersion(_))));

    let mut other = cfg.clone();
    other.encoder_params.ff_dim = 96;
    let err = Trainer::from_checkpoint(&other, ClusterSpec::single(), &vocab, records.clone(), &trainer.checkpoint(None));
    assert!(matches!(err, Err(TrainerError::DigestMismatch { .. })));
    // a different schedule is still the same model
    let mut schedule = cfg.clone();
    schedule.training.learning_rate = 1e-4;
    assert!(Trainer::from_checkpoint(&schedule, ClusterSpec::single(), &vocab, records, &trainer.checkpoint(None)).is_ok());
}

#[test]
fn loss_falls_over_training() {
    let (cfg, vocab, records) = toy(60);
    let mut trainer = Trainer::new(&cfg, ClusterSpec::single(), &vocab, records).unwrap();
    let losses: Vec<f64> = (0..60).map(|_| trainer.step().unwrap().loss).collect();
    let window_min = |w: &[f64]| w.iter().copied().fold(f64::INFINITY, f64::min);
    let mins: Vec<f64> = losses.chunks(20).map(window_min).collect();
    assert!(mins.windows(2).all(|w| w[1] < w[0]), "{mins:?}");
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

fn dataset(cfg: &ModelConfig, options: &DatasetOptions) -> (Workspace, easyasr_core::records::DatasetReport) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let manifest = write_toy_corpus(&root.join("corpus"), cfg.features.sample_rate, 3).unwrap();
    let report = create_dataset(&manifest, &root.join("data"), cfg, options).unwrap();
    (Workspace { _dir: dir, root }, report)
}

#[test]
fn dataset_matches_in_memory_featurization() {
    let (cfg, vocab, records) = toy(0);
    let (ws, report) = dataset(&cfg, &DatasetOptions { shard_size: 4, augment_multiplier: 0 });
    assert_eq!((report.ok, report.failed, report.records_written), (10, 0, 10));
    assert_eq!(report.shard_paths.len(), 3);
    assert_eq!(Vocabulary::read(&report.vocab_path).unwrap(), vocab);
    let files = list_record_files(ws.root.join("data").to_str().unwrap()).unwrap();
    assert_eq!(files, report.shard_paths);
    let read: Vec<UtteranceRecord> = files.iter().flat_map(|f| read_record_file(f).unwrap()).collect();
    assert_eq!(read.len(), records.len());
    let corpus = toy_corpus(cfg.features.sample_rate, 3);
    for ((a, b), utt) in read.iter().zip(&records).zip(&corpus) {
        assert_eq!(a.utt_id, b.utt_id);
        assert_eq!(a.token_ids, b.token_ids);
        // the same pipeline over 16-bit quantized samples reproduces the stored features
        let clip = AudioClip {
            samples: utt.samples.iter().map(|s| (s.clamp(-1.0, 1.0) * 32767.0).round() / 32768.0).collect(),
            sample_rate: cfg.features.sample_rate,
        };
        let expected = normalize_features(&compute_logmel(&clip, &cfg.features).unwrap());
        assert_eq!(a.features, expected);
    }
}

#[test]
fn dataset_counts_failures_and_augments() {
    let (mut cfg, _, _) = toy(0);
    cfg.augment.enabled = true;
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_toy_corpus(dir.path(), cfg.features.sample_rate, 3).unwrap();
    let mut text = std::fs::read_to_string(&manifest).unwrap();
    text.push_str("wav/missing.wav,ab\n");
    std::fs::write(dir.path().join("wav/garbage.wav"), b"not a wav file").unwrap();
    text.push_str("wav/garbage.wav,cd\n");
    std::fs::write(&manifest, text).unwrap();
    let options = DatasetOptions { shard_size: 100, augment_multiplier: 2 };
    let report = create_dataset(&manifest, &dir.path().join("out"), &cfg, &options).unwrap();
    assert_eq!((report.ok, report.failed), (10, 2));
    assert_eq!(report.records_written, 30);
    let recs = read_record_file(&report.shard_paths[0]).unwrap();
    assert_eq!(recs[1].utt_id, "utt00-aug1");
    // a mask may draw width zero, but not for every copy
    assert!(recs.chunks(3).any(|c| c[1].features != c[0].features && c[2].features != c[0].features));
    assert!(recs.chunks(3).all(|c| c[1].features.frames == c[0].features.frames));
    assert_eq!(recs[0].token_ids, recs[2].token_ids);

    let again = create_dataset(&manifest, &dir.path().join("again"), &cfg, &options).unwrap();
    assert_eq!(std::fs::read(&report.shard_paths[0]).unwrap(), std::fs::read(&again.shard_paths[0]).unwrap());
}

fn job(ws: &Path, cfg: &ModelConfig, report: &easyasr_core::records::DatasetReport, tag: &str) -> TrainJobSpec {
    TrainJobSpec {
        config: cfg.clone(),
        cluster: ClusterSpec::with_workers(2),
        train_records: report.shard_paths.clone(),
        eval_records: report.shard_paths.clone(),
        vocab: report.vocab_path.clone(),
        finetune: false,
        init_checkpoint: None,
        export_dir: ws.join(tag).join("export"),
        checkpoint_dir: ws.join(tag).join("ckpt"),
    }
}

fn bundle_bytes(dir: &Path) -> Vec<Vec<u8>> {
    ["model.ckpt", "model_config.json", "vocab.txt"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn train_export_register_resolve() {
    let (mut cfg, _, _) = toy(12);
    cfg.training.eval_every = 4;
    let (ws, report) = dataset(&cfg, &DatasetOptions::default());
    let a = train(&job(&ws.root, &cfg, &report, "a")).unwrap();
    let b = train(&job(&ws.root, &cfg, &report, "b")).unwrap();
    assert_eq!(a.steps_run, 12);
    assert_eq!(a.eval_history.iter().map(|p| p.step).collect::<Vec<_>>(), vec![4, 8, 12]);
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.exported_checkpoint_step, b.exported_checkpoint_step);
    let best = a.eval_history.iter().find(|p| p.step == a.exported_checkpoint_step).unwrap();
    assert!(a.eval_history.iter().all(|p| p.cer >= best.cer));
    for p in &a.eval_history {
        assert!(checkpoint_path(&ws.root.join("a/ckpt"), p.step).exists());
    }
    let (ea, eb) = (ws.root.join("a/export"), ws.root.join("b/export"));
    assert_eq!(bundle_bytes(&ea), bundle_bytes(&eb));
    assert_eq!(bundle_digest(&ea).unwrap(), bundle_digest(&eb).unwrap());

    let bundle = load_bundle(&ea).unwrap();
    assert_eq!(bundle.manifest.step, a.exported_checkpoint_step);
    assert_eq!(bundle.manifest.cer, Some(best.cer));
    bundle.model().unwrap();

    // re-export of the same checkpoint is identical apart from the timestamp
    let again = ws.root.join("again");
    export_bundle(&bundle.checkpoint, &cfg, &report.vocab_path, &again).unwrap();
    assert_eq!(bundle_bytes(&again), bundle_bytes(&ea));
    assert!(export_bundle(&bundle.checkpoint, &cfg, &ws.root.join("nope.txt"), &again).is_err());

    let zoo = ws.root.join("zoo.json");
    assert!(list_entries(&zoo).unwrap().is_empty());
    let first = register(&zoo, "toy", &ea).unwrap();
    let second = register(&zoo, "toy", &eb).unwrap();
    assert_eq!((first.version, second.version), (1, 2));
    assert_eq!(resolve(&zoo, "toy", None).unwrap(), second.bundle_path);
    assert_eq!(resolve(&zoo, "toy", Some(1)).unwrap(), first.bundle_path);
    assert!(matches!(resolve(&zoo, "toy", Some(3)), Err(RegistryError::NotFound { .. })));
    assert!(matches!(resolve(&zoo, "other", None), Err(RegistryError::NotFound { .. })));
    assert!(register(&zoo, "toy", &ws.root.join("data")).is_err());

    // tampering after registration is caught on resolve
    std::fs::write(ea.join("vocab.txt"), "tampered\n").unwrap();
    assert!(resolve(&zoo, "toy", Some(1)).is_err());
    assert!(load_bundle(&ea).is_err());
}

#[test]
fn zero_steps_exports_initial_weights_and_finetune_resumes() {
    let (cfg, vocab, records) = toy(0);
    let (ws, report) = dataset(&cfg, &DatasetOptions::default());
    let spec = job(&ws.root, &cfg, &report, "zero");
    let r = train(&spec).unwrap();
    assert_eq!((r.steps_run, r.exported_checkpoint_step), (0, 0));
    assert!(r.eval_history.is_empty());
    let bundle = load_bundle(&spec.export_dir).unwrap();
    let fresh = Trainer::new(&cfg, ClusterSpec::single(), &vocab, records).unwrap();
    assert_eq!(bundle.checkpoint.params, fresh.model().params);
    assert!(ws.root.join("zero/export").join(BUNDLE_MANIFEST).exists());

    let mut cfg4 = cfg.clone();
    cfg4.training.max_steps = 4;
    cfg4.training.eval_every = 2;
    let base = train(&job(&ws.root, &cfg4, &report, "base")).unwrap();
    let mut cfg6 = cfg.clone();
    cfg6.training.max_steps = 6;
    cfg6.training.eval_every = 2;
    let mut ft = job(&ws.root, &cfg6, &report, "ft");
    ft.finetune = true;
    ft.init_checkpoint = Some(checkpoint_path(&ws.root.join("base/ckpt"), 4));
    let tuned = train(&ft).unwrap();
    assert_eq!(base.steps_run, 4);
    assert_eq!(tuned.steps_run, 2);
    assert_eq!(tuned.eval_history.iter().map(|p| p.step).collect::<Vec<_>>(), vec![6]);

    let mut no_init = ft.clone();
    no_init.init_checkpoint = None;
    assert!(matches!(train(&no_init), Err(TrainerError::InvalidJob(_))));
}
