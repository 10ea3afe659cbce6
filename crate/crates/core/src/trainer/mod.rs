//! Simulated synchronous data-parallel training.
//!
//! Every worker owns a replica of the model. A step takes the next global
//! window of `workers × batch_size_per_worker` records, deals it out
//! round-robin, computes local gradients concurrently, averages them in
//! worker order, clips, and applies the same optimizer update to every
//! replica.

mod bundle;
mod checkpoint;
mod optim;

pub use bundle::{
    bundle_digest, export_bundle, load_bundle, Bundle, BundleManifest, BUNDLE_CHECKPOINT, BUNDLE_CONFIG,
    BUNDLE_FORMAT_VERSION, BUNDLE_MANIFEST, BUNDLE_VOCAB,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{
    adam_update, allreduce_mean, clip_global_norm, sgd_update, GradMap, OptimizerState, ADAM_BETA1, ADAM_BETA2,
    ADAM_EPS,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::mix_seed;
use crate::config::{ClusterSpec, ModelConfig, OptimizerKind};
use crate::metrics::{edit_distance, evaluate_pairs, units, MetricsError, Unit};
use crate::model::{build_model, greedy_decode, loss_and_grads, Architecture, Model, ModelError};
use crate::records::{read_record_file, RecordError, UtteranceRecord, Vocabulary};

pub const CLIP_NORM: f64 = 5.0;
pub const BUCKET_FRAMES: usize = 100;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint was produced by config {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("evaluation history is empty")]
    EmptyHistory,
    #[error("{name}: shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter names differ: {0}")]
    NameSetMismatch(String),
    #[error("replicas diverged at step {step}")]
    ReplicaDivergence { step: usize },
    #[error("invalid bundle {path}: {reason}")]
    InvalidBundle { path: String, reason: String },
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl TrainerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainerError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Record `i` goes to shard `i mod k`.
pub fn shard_dataset<T: Clone>(records: &[T], k: usize) -> Vec<Vec<T>> {
    let k = k.max(1);
    let mut shards = vec![Vec::with_capacity(records.len() / k + 1); k];
    for (i, r) in records.iter().enumerate() {
        shards[i % k].push(r.clone());
    }
    shards
}

/// Deterministic infinite order over record indices, derived only from the
/// seed, so any step's window can be recomputed.
///
/// Each epoch shuffles, groups records into length buckets, cuts the
/// result into windows and shuffles the windows.
#[derive(Debug, Clone)]
pub struct BatchStream {
    buckets: Vec<usize>,
    window: usize,
    seed: u64,
    order: Vec<usize>,
    epochs: u64,
}

impl BatchStream {
    pub fn new(lengths: &[usize], window: usize, seed: u64) -> Self {
        Self {
            buckets: lengths.iter().map(|&l| l / BUCKET_FRAMES).collect(),
            window: window.max(1),
            seed,
            order: Vec::new(),
            epochs: 0,
        }
    }

    fn push_epoch(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, self.epochs));
        let mut idx: Vec<usize> = (0..self.buckets.len()).collect();
        idx.shuffle(&mut rng);
        idx.sort_by_key(|&i| self.buckets[i]);
        let mut chunks: Vec<&[usize]> = idx.chunks(self.window).collect();
        chunks.shuffle(&mut rng);
        self.order.extend(chunks.into_iter().flatten());
        self.epochs += 1;
    }

    /// Record indices used by global step `step` (0-based).
    pub fn window(&mut self, step: usize) -> Vec<usize> {
        let end = (step + 1) * self.window;
        while self.order.len() < end {
            self.push_epoch();
        }
        self.order[step * self.window..end].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// 1-based index of the completed step.
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEval {
    pub utt_id: String,
    pub reference: String,
    pub hypothesis: String,
    pub distance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cer: f64,
    pub wer: f64,
    pub utterances: Vec<UtteranceEval>,
}

/// Greedy-decodes every record and pools CER/WER over the set.
pub fn evaluate(model: &Model, vocab: &Vocabulary, records: &[UtteranceRecord]) -> Result<Evaluation, TrainerError> {
    if records.is_empty() {
        return Err(TrainerError::EmptyEvalSet);
    }
    let hyps = records
        .par_iter()
        .map(|rec| {
            let out = model.encode(&rec.features)?;
            Ok(vocab.detokenize(&greedy_decode(&out.logprobs))?)
        })
        .collect::<Result<Vec<String>, TrainerError>>()?;
    let pairs: Vec<(&str, &str)> = records.iter().map(|r| r.transcript.as_str()).zip(hyps.iter().map(String::as_str)).collect();
    let summary = evaluate_pairs(&pairs)?;
    let utterances = records
        .iter()
        .zip(&hyps)
        .map(|(r, h)| UtteranceEval {
            utt_id: r.utt_id.clone(),
            reference: r.transcript.clone(),
            hypothesis: h.clone(),
            distance: edit_distance(&units(&r.transcript, Unit::Char), &units(h, Unit::Char)).distance,
        })
        .collect();
    Ok(Evaluation {
        cer: summary.cer,
        wer: summary.wer,
        utterances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub cer: f64,
    pub wer: f64,
}

/// Step with the lowest CER; the later step wins a tie.
pub fn select_best_checkpoint(history: &[EvalPoint]) -> Result<usize, TrainerError> {
    history
        .iter()
        .fold(None::<&EvalPoint>, |best, p| match best {
            Some(b) if b.cer < p.cer => Some(b),
            _ => Some(p),
        })
        .map(|p| p.step)
        .ok_or(TrainerError::EmptyHistory)
}

/// Step-wise training driver over in-memory records.
pub struct Trainer {
    config: ModelConfig,
    cluster: ClusterSpec,
    records: Vec<UtteranceRecord>,
    replicas: Vec<Model>,
    optimizer: OptimizerState,
    stream: BatchStream,
    step: usize,
}

impl Trainer {
    /// Fresh replicas initialized from `config.training.seed`.
    pub fn new(
        config: &ModelConfig,
        cluster: ClusterSpec,
        vocab: &Vocabulary,
        records: Vec<UtteranceRecord>,
    ) -> Result<Self, TrainerError> {
        let model = build_model(config, vocab, config.training.seed)?;
        Self::with_model(config, cluster, model, OptimizerState::default(), 0, records)
    }

    /// Resumes from `ckpt`: its weights, optimizer state and step counter.
    pub fn from_checkpoint(
        config: &ModelConfig,
        cluster: ClusterSpec,
        vocab: &Vocabulary,
        records: Vec<UtteranceRecord>,
        ckpt: &Checkpoint,
    ) -> Result<Self, TrainerError> {
        let digest = config.digest();
        if ckpt.config_digest != digest {
            return Err(TrainerError::DigestMismatch {
                expected: digest,
                found: ckpt.config_digest.clone(),
            });
        }
        let arch = Architecture::new(config, vocab.len())?;
        let model = Model::from_params(arch, ckpt.params.clone())?;
        Self::with_model(config, cluster, model, ckpt.optimizer.clone(), ckpt.step, records)
    }

    fn with_model(
        config: &ModelConfig,
        cluster: ClusterSpec,
        model: Model,
        optimizer: OptimizerState,
        step: usize,
        records: Vec<UtteranceRecord>,
    ) -> Result<Self, TrainerError> {
        if records.is_empty() {
            return Err(TrainerError::EmptyTrainSet);
        }
        if cluster.worker_count == 0 {
            return Err(TrainerError::InvalidJob("a cluster needs at least one worker".into()));
        }
        let window = cluster.worker_count * config.training.batch_size_per_worker;
        let lengths: Vec<usize> = records.iter().map(|r| r.features.frames).collect();
        Ok(Self {
            config: config.clone(),
            cluster,
            replicas: vec![model; cluster.worker_count],
            optimizer,
            stream: BatchStream::new(&lengths, window, config.training.seed),
            records,
            step,
        })
    }

    /// Number of completed steps.
    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Replica of worker 0; all replicas are identical between steps.
    pub fn model(&self) -> &Model {
        &self.replicas[0]
    }

    pub fn replica_digests(&self) -> Vec<u64> {
        self.replicas.iter().map(|m| m.params.digest()).collect()
    }

    pub fn checkpoint(&self, eval_metric: Option<f64>) -> Checkpoint {
        Checkpoint {
            step: self.step,
            params: self.replicas[0].params.clone(),
            optimizer: self.optimizer.clone(),
            config_digest: self.config.digest(),
            eval_metric,
        }
    }

    /// One synchronous step across all workers.
    pub fn step(&mut self) -> Result<StepStats, TrainerError> {
        let window = self.stream.window(self.step);
        let shards = shard_dataset(&window, self.cluster.worker_count);
        let records = &self.records;
        let results = self
            .replicas
            .par_iter()
            .zip(shards.par_iter())
            .map(|(model, shard)| {
                let batch: Vec<&UtteranceRecord> = shard.iter().map(|&i| &records[i]).collect();
                loss_and_grads(model, &batch)
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let k = results.len() as f64;
        let loss = results.iter().map(|r| r.loss).sum::<f64>() / k;
        if !loss.is_finite() {
            return Err(TrainerError::NonFiniteLoss { step: self.step + 1 });
        }
        let grads: Vec<GradMap> = results.into_iter().map(|r| r.grads).collect();
        let mut mean = allreduce_mean(&grads)?;
        let grad_norm = clip_global_norm(&mut mean, CLIP_NORM);

        let lr = self.config.training.learning_rate;
        let before = self.optimizer.clone();
        for (w, replica) in self.replicas.iter_mut().enumerate() {
            let mut state = before.clone();
            match self.config.training.optimizer {
                OptimizerKind::Adam => adam_update(&mut replica.params, &mean, &mut state, lr)?,
                OptimizerKind::Sgd => sgd_update(&mut replica.params, &mean, lr)?,
            }
            optim::round_to_f32(replica.params.iter_mut().map(|(_, t)| t));
            if w == 0 {
                optim::round_to_f32(state.m.values_mut().chain(state.v.values_mut()));
                self.optimizer = state;
            }
        }
        self.step += 1;
        let digests = self.replica_digests();
        if digests.iter().any(|&d| d != digests[0]) {
            return Err(TrainerError::ReplicaDivergence { step: self.step });
        }
        Ok(StepStats {
            step: self.step,
            loss,
            grad_norm,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainJobSpec {
    pub config: ModelConfig,
    pub cluster: ClusterSpec,
    pub train_records: Vec<PathBuf>,
    pub eval_records: Vec<PathBuf>,
    pub vocab: PathBuf,
    pub finetune: bool,
    pub init_checkpoint: Option<PathBuf>,
    pub export_dir: PathBuf,
    /// Where periodic checkpoints are written.
    pub checkpoint_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps_run: usize,
    pub loss_history: Vec<f64>,
    pub eval_history: Vec<EvalPoint>,
    pub exported_checkpoint_step: usize,
    pub wall_time: f64,
}

pub fn load_records(paths: &[PathBuf]) -> Result<Vec<UtteranceRecord>, TrainerError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_record_file(p)?);
    }
    Ok(out)
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt-{step:06}.ckpt"))
}

/// Trains, evaluating and checkpointing every `eval_every` steps and at the
/// last step, then exports the checkpoint with the lowest eval CER.
pub fn train(job: &TrainJobSpec) -> Result<TrainReport, TrainerError> {
    let started = Instant::now();
    if job.finetune && job.init_checkpoint.is_none() {
        return Err(TrainerError::InvalidJob("finetune requires an initial checkpoint".into()));
    }
    let vocab = Vocabulary::read(&job.vocab)?;
    let train_set = load_records(&job.train_records)?;
    let eval_set = load_records(&job.eval_records)?;
    if eval_set.is_empty() {
        return Err(TrainerError::EmptyEvalSet);
    }
    let mut trainer = match (&job.init_checkpoint, job.finetune) {
        (Some(path), true) => {
            let ckpt = load_checkpoint(path)?;
            Trainer::from_checkpoint(&job.config, job.cluster, &vocab, train_set, &ckpt)?
        }
        _ => Trainer::new(&job.config, job.cluster, &vocab, train_set)?,
    };
    info!(
        "training {} on {} from step {}",
        job.config.encoder.name(),
        job.cluster,
        trainer.step_index()
    );

    let t = &job.config.training;
    let start_step = trainer.step_index();
    let mut loss_history = Vec::new();
    let mut eval_history = Vec::new();
    while trainer.step_index() < t.max_steps {
        let stats = trainer.step()?;
        loss_history.push(stats.loss);
        let due = t.eval_every > 0 && stats.step % t.eval_every == 0;
        if due || stats.step == t.max_steps {
            let eval = evaluate(trainer.model(), &vocab, &eval_set)?;
            info!(
                "step {}: loss {:.4}, CER {:.4}, WER {:.4}",
                stats.step, stats.loss, eval.cer, eval.wer
            );
            save_checkpoint(&trainer.checkpoint(Some(eval.cer)), &checkpoint_path(&job.checkpoint_dir, stats.step))?;
            eval_history.push(EvalPoint {
                step: stats.step,
                cer: eval.cer,
                wer: eval.wer,
            });
        }
    }

    let exported = if eval_history.is_empty() {
        let ckpt = trainer.checkpoint(None);
        export_bundle(&ckpt, &job.config, &job.vocab, &job.export_dir)?;
        ckpt.step
    } else {
        let best = select_best_checkpoint(&eval_history)?;
        let ckpt = load_checkpoint(&checkpoint_path(&job.checkpoint_dir, best))?;
        export_bundle(&ckpt, &job.config, &job.vocab, &job.export_dir)?;
        best
    };
    info!("exported step {exported} to {}", job.export_dir.display());
    Ok(TrainReport {
        steps_run: trainer.step_index() - start_step,
        loss_history,
        eval_history,
        exported_checkpoint_step: exported,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_shards() {
        let recs: Vec<usize> = (0..10).collect();
        let sizes: Vec<usize> = shard_dataset(&recs, 4).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        assert_eq!(shard_dataset(&recs, 1), vec![recs.clone()]);
        let wide = shard_dataset(&recs[..2], 5);
        assert_eq!(wide.iter().map(Vec::len).sum::<usize>(), 2);
        assert!(wide[4].is_empty());
        assert_eq!(shard_dataset(&recs, 4)[1], vec![1, 5, 9]);
    }

    #[test]
    fn best_checkpoint_rules() {
        let p = |step, cer| EvalPoint { step, cer, wer: 0.0 };
        assert_eq!(select_best_checkpoint(&[p(100, 0.5), p(200, 0.3)]).unwrap(), 200);
        assert_eq!(select_best_checkpoint(&[p(100, 0.3), p(200, 0.3)]).unwrap(), 200);
        assert_eq!(select_best_checkpoint(&[p(100, 0.2), p(200, 0.3)]).unwrap(), 100);
        assert_eq!(select_best_checkpoint(&[p(50, 0.9)]).unwrap(), 50);
        assert!(matches!(select_best_checkpoint(&[]), Err(TrainerError::EmptyHistory)));
    }

    #[test]
    fn stream_is_a_permutation_per_epoch() {
        let lengths = [50, 250, 120, 30, 310, 90, 180];
        let mut s = BatchStream::new(&lengths, 7, 3);
        let mut first = s.window(0);
        first.sort();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        let mut again = BatchStream::new(&lengths, 7, 3);
        assert_eq!(s.window(5), again.window(5));
    }

    #[test]
    fn windows_group_length_buckets() {
        let lengths: Vec<usize> = (0..8).map(|i| if i % 2 == 0 { 10 } else { 500 }).collect();
        let mut s = BatchStream::new(&lengths, 4, 11);
        for step in 0..6 {
            let w = s.window(step);
            let buckets: Vec<usize> = w.iter().map(|&i| lengths[i] / BUCKET_FRAMES).collect();
            assert!(buckets.iter().all(|&b| b == buckets[0]), "{buckets:?}");
        }
    }
}
