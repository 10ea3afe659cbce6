//! Desk-scale end-to-end speech recognition: log-mel features, SpecAugment
//! style masking, TFRecord datasets, a small reverse-mode autodiff engine,
//! transformer and Wav2Letter encoders with CTC and joint CTC/attention
//! losses, simulated data-parallel training and a local model zoo.

pub mod audio;
pub mod augment;
pub mod autodiff;
pub mod config;
pub mod metrics;
pub mod model;
pub mod records;
pub mod registry;
pub mod synth;
pub mod trainer;

pub use audio::{compute_logmel, AudioClip, AudioError, FeatureMatrix, FeatureParams};
pub use augment::{AugmentError, AugmentPolicy};
pub use autodiff::{Graph, NodeId, Tensor, TensorError};
pub use config::{
    parse_cluster_spec, parse_model_config, validate_config, ClusterSpec, ConfigError, DecoderKind, EncoderKind,
    LossKind, ModelConfig, OptimizerKind,
};
pub use metrics::{corpus_metrics, edit_distance, EditOps, EvalResult, MetricsError, Unit};
pub use model::{build_model, ctc_loss, greedy_decode, prefix_beam_search, Model, ModelError, NBest};
pub use records::{RecordError, UtteranceRecord, Vocabulary};
pub use registry::{RegistryError, ZooEntry};
pub use trainer::{train, Checkpoint, TrainJobSpec, TrainReport, Trainer, TrainerError};
