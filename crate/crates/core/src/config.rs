//! Model configuration and cluster resource documents.
//!
//! Configuration documents are JSON with two lenient extensions: registry
//! names may be written as bare identifiers (`"encoder": TransformerEncoder`)
//! and trailing commas before a closing bracket are dropped. Every key is
//! checked; unknown keys are rejected with their dotted key path.

use std::collections::BTreeSet;
use std::fmt;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::FeatureParams;
use crate::augment::AugmentPolicy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown architecture `{name}` at {path}")]
    UnknownArchitecture { path: String, name: String },
    #[error("constraint violation at {path}: {message}")]
    ConstraintViolation { path: String, message: String },
}

impl From<Violation> for ConfigError {
    fn from(v: Violation) -> Self {
        ConfigError::ConstraintViolation {
            path: v.path,
            message: v.message,
        }
    }
}

/// A single failed invariant, addressed by dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Transformer,
    Wav2Letter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Ctc,
    JointCtcAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Ctc,
    MultiTaskCtcEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Transformer => "TransformerEncoder",
            EncoderKind::Wav2Letter => "Wav2LetterEncoder",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "TransformerEncoder" => Some(EncoderKind::Transformer),
            "Wav2LetterEncoder" => Some(EncoderKind::Wav2Letter),
            _ => None,
        }
    }
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Ctc => "CTCDecoder",
            DecoderKind::JointCtcAttention => "JointCTCAttenDecoder",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "CTCDecoder" => Some(DecoderKind::Ctc),
            "JointCTCAttenDecoder" => Some(DecoderKind::JointCtcAttention),
            _ => None,
        }
    }
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ctc => "CTCLoss",
            LossKind::MultiTaskCtcEntropy => "MultiTaskCTCEntropyLoss",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "CTCLoss" => Some(LossKind::Ctc),
            "MultiTaskCTCEntropyLoss" => Some(LossKind::MultiTaskCtcEntropy),
            _ => None,
        }
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

const ATTN_DECODER_NAME: &str = "TransformerDecoder";
const CTC_DECODER_NAME: &str = "CTCDecoder";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub encoder_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    /// Wav2Letter convolution stack; ignored by the transformer encoder.
    pub conv_channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            num_heads: 4,
            hidden_dim: 64,
            ff_dim: 128,
            conv_channels: vec![64, 64],
            kernel_sizes: vec![5, 3],
            strides: vec![2, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnDecoderParams {
    pub hidden_layers: usize,
    pub num_heads: usize,
}

impl Default for AttnDecoderParams {
    fn default() -> Self {
        Self {
            hidden_layers: 1,
            num_heads: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcDecoderParams {
    pub beam_width: usize,
    pub blank_id: u32,
}

impl Default for CtcDecoderParams {
    fn default() -> Self {
        Self {
            beam_width: 4,
            blank_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecoderParams {
    /// Present exactly when the decoder is `JointCTCAttenDecoder`.
    pub attention: Option<AttnDecoderParams>,
    pub ctc: CtcDecoderParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    /// Weight of the CTC term: `L = λ·L_ctc + (1−λ)·L_attn`.
    pub lambda_value: f64,
    pub label_smoothing: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            lambda_value: 0.3,
            label_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size_per_worker: usize,
    /// Zero is allowed and yields a run that only exports the initial weights.
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size_per_worker: 4,
            max_steps: 1000,
            eval_every: 100,
            seed: 17,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub encoder_params: EncoderParams,
    pub decoder: DecoderKind,
    pub decoder_params: DecoderParams,
    pub loss: LossKind,
    pub loss_params: LossParams,
    pub features: FeatureParams,
    pub augment: AugmentPolicy,
    pub training: TrainParams,
}

impl ModelConfig {
    /// A joint CTC/attention transformer with every optional key defaulted.
    pub fn joint_transformer() -> Self {
        Self {
            encoder: EncoderKind::Transformer,
            encoder_params: EncoderParams::default(),
            decoder: DecoderKind::JointCtcAttention,
            decoder_params: DecoderParams {
                attention: Some(AttnDecoderParams::default()),
                ctc: CtcDecoderParams::default(),
            },
            loss: LossKind::MultiTaskCtcEntropy,
            loss_params: LossParams::default(),
            features: FeatureParams::default(),
            augment: AugmentPolicy::default(),
            training: TrainParams::default(),
        }
    }

    pub fn is_joint(&self) -> bool {
        self.decoder == DecoderKind::JointCtcAttention
    }

    /// Effective CTC weight; a pure CTC model always uses 1.
    pub fn ctc_weight(&self) -> f64 {
        if self.is_joint() {
            self.loss_params.lambda_value
        } else {
            1.0
        }
    }

    /// Serializes with every default materialized, keys in canonical order.
    pub fn to_json(&self) -> Value {
        let e = &self.encoder_params;
        let mut decoder_params = Map::new();
        if let Some(attn) = &self.decoder_params.attention {
            decoder_params.insert("attn_decoder".into(), json!(ATTN_DECODER_NAME));
            decoder_params.insert(
                "attn_decoder_params".into(),
                json!({"hidden_layers": attn.hidden_layers, "num_heads": attn.num_heads}),
            );
        }
        decoder_params.insert("ctc_decoder".into(), json!(CTC_DECODER_NAME));
        decoder_params.insert(
            "ctc_decoder_params".into(),
            json!({
                "beam_width": self.decoder_params.ctc.beam_width,
                "blank_id": self.decoder_params.ctc.blank_id,
            }),
        );
        let f = &self.features;
        let a = &self.augment;
        let t = &self.training;
        json!({
            "encoder": self.encoder.name(),
            "encoder_params": {
                "encoder_layers": e.encoder_layers,
                "num_heads": e.num_heads,
                "hidden_dim": e.hidden_dim,
                "ff_dim": e.ff_dim,
                "conv_channels": e.conv_channels,
                "kernel_sizes": e.kernel_sizes,
                "strides": e.strides,
            },
            "decoder": self.decoder.name(),
            "decoder_params": Value::Object(decoder_params),
            "loss": self.loss.name(),
            "loss_params": {
                "seq_loss_params": {"label_smoothing": self.loss_params.label_smoothing},
                "ctc_loss_params": {},
                "lambda_value": self.loss_params.lambda_value,
            },
            "features": {
                "frame_length_ms": f.frame_length_ms,
                "hop_ms": f.hop_ms,
                "fft_size": f.fft_size,
                "mel_bins": f.mel_bins,
                "sample_rate": f.sample_rate,
                "log_floor": f.log_floor,
            },
            "augment": {
                "enabled": a.enabled,
                "freq_mask_param": a.freq_mask_param,
                "freq_masks": a.freq_masks,
                "time_mask_param": a.time_mask_param,
                "time_masks": a.time_masks,
                "fill_value": a.fill_value,
            },
            "training": {
                "learning_rate": t.learning_rate,
                "batch_size_per_worker": t.batch_size_per_worker,
                "max_steps": t.max_steps,
                "eval_every": t.eval_every,
                "seed": t.seed,
                "optimizer": t.optimizer.name(),
            },
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical compact serialization of the sections
    /// that shape the network and its inputs. Training schedule and
    /// augmentation are left out so a checkpoint can be fine-tuned under a
    /// different schedule.
    pub fn digest(&self) -> String {
        let mut doc = self.to_json();
        if let Value::Object(map) = &mut doc {
            map.remove("training");
            map.remove("augment");
        }
        let canonical = serde_json::to_string(&doc).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Vocabulary-independent invariants.
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let e = &self.encoder_params;
        if !e.hidden_dim.is_multiple_of(e.num_heads) {
            out.push(Violation::new(
                "encoder_params",
                format!(
                    "hidden_dim {} is not divisible by num_heads {}",
                    e.hidden_dim, e.num_heads
                ),
            ));
        }
        if e.conv_channels.len() != e.kernel_sizes.len() || e.conv_channels.len() != e.strides.len()
        {
            out.push(Violation::new(
                "encoder_params",
                "conv_channels, kernel_sizes and strides must have equal length",
            ));
        }
        if self.encoder == EncoderKind::Wav2Letter && e.conv_channels.is_empty() {
            out.push(Violation::new(
                "encoder_params.conv_channels",
                "Wav2LetterEncoder needs at least one convolution",
            ));
        }
        let joint_decoder = self.decoder == DecoderKind::JointCtcAttention;
        let joint_loss = self.loss == LossKind::MultiTaskCtcEntropy;
        if joint_decoder != joint_loss {
            out.push(Violation::new(
                "loss",
                format!(
                    "decoder {} must be paired with loss {}",
                    self.decoder.name(),
                    if joint_decoder { "MultiTaskCTCEntropyLoss" } else { "CTCLoss" }
                ),
            ));
        }
        match (&self.decoder_params.attention, joint_decoder) {
            (None, true) => out.push(Violation::new(
                "decoder_params.attn_decoder",
                "required for JointCTCAttenDecoder",
            )),
            (Some(_), false) => out.push(Violation::new(
                "decoder_params.attn_decoder",
                "only allowed with JointCTCAttenDecoder",
            )),
            (Some(attn), true) if !e.hidden_dim.is_multiple_of(attn.num_heads) => {
                out.push(Violation::new(
                    "decoder_params.attn_decoder_params.num_heads",
                    format!(
                        "hidden_dim {} is not divisible by num_heads {}",
                        e.hidden_dim, attn.num_heads
                    ),
                ))
            }
            _ => {}
        }
        if self.decoder_params.ctc.blank_id != 0 {
            out.push(Violation::new(
                "decoder_params.ctc_decoder_params.blank_id",
                "the vocabulary reserves id 0 for blank",
            ));
        }
        let lp = &self.loss_params;
        if !(0.0..=1.0).contains(&lp.lambda_value) {
            out.push(Violation::new(
                "loss_params.lambda_value",
                format!("{} is outside [0, 1]", lp.lambda_value),
            ));
        }
        if !(0.0..1.0).contains(&lp.label_smoothing) {
            out.push(Violation::new(
                "loss_params.seq_loss_params.label_smoothing",
                format!("{} is outside [0, 1)", lp.label_smoothing),
            ));
        }
        let f = &self.features;
        if f.fft_size < f.frame_samples() {
            out.push(Violation::new(
                "features.fft_size",
                format!("{} is smaller than the frame ({} samples)", f.fft_size, f.frame_samples()),
            ));
        }
        if f.hop_samples() == 0 || f.frame_samples() == 0 {
            out.push(Violation::new("features", "frame and hop must span at least one sample"));
        }
        if f.log_floor.is_nan() || f.log_floor <= 0.0 {
            out.push(Violation::new("features.log_floor", "must be positive"));
        }
        if self.augment.freq_mask_param > f.mel_bins {
            out.push(Violation::new(
                "augment.freq_mask_param",
                format!("{} exceeds mel_bins {}", self.augment.freq_mask_param, f.mel_bins),
            ));
        }
        let t = &self.training;
        if t.learning_rate.is_nan() || t.learning_rate <= 0.0 {
            out.push(Violation::new("training.learning_rate", "must be positive"));
        }
        if t.max_steps > 0 && t.eval_every > t.max_steps {
            out.push(Violation::new(
                "training.eval_every",
                format!("{} exceeds max_steps {}", t.eval_every, t.max_steps),
            ));
        }
        out
    }
}

/// Checks every invariant of `config` against a vocabulary of `vocab_size` tokens.
/// An empty report means the configuration is valid.
pub fn validate_config(config: &ModelConfig, vocab_size: usize) -> Vec<Violation> {
    let mut out = config.violations();
    // 4 reserved ids plus at least one real token
    if vocab_size < 5 {
        out.push(Violation::new(
            "vocab",
            format!("vocabulary of {vocab_size} has no non-reserved tokens"),
        ));
    }
    out
}

/// Rewrites the lenient syntax into strict JSON: bare identifiers become
/// strings and trailing commas are removed.
fn normalize_lenient(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 16);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' {
            out.push(c);
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                out.push(d);
                i += 1;
                if d == '\\' && i < chars.len() {
                    out.push(chars[i]);
                    i += 1;
                } else if d == '"' {
                    break;
                }
            }
        } else if c.is_ascii_digit() || c == '-' {
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '.' | '+' | '-'))
            {
                out.push(chars[i]);
                i += 1;
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let ident: String = chars[start..i].iter().collect();
            if matches!(ident.as_str(), "true" | "false" | "null") {
                out.push_str(&ident);
            } else {
                out.push('"');
                out.push_str(&ident);
                out.push('"');
            }
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|ch| !ch.is_whitespace());
            if !matches!(next, Some('}') | Some(']')) {
                out.push(c);
            }
            i += 1;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

fn parse_document(text: &str) -> Result<Map<String, Value>, ConfigError> {
    if text.trim().is_empty() {
        return Err(ConfigError::Syntax("empty document".into()));
    }
    let value: Value = serde_json::from_str(&normalize_lenient(text))
        .map_err(|e| ConfigError::Syntax(e.to_string()))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(ConfigError::Syntax("top level must be an object".into())),
    }
}

/// One JSON object under validation, with its key path for error messages.
struct Section<'a> {
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Section<'a> {
    fn new(
        path: impl Into<String>,
        map: &'a Map<String, Value>,
        allowed: &[&str],
    ) -> Result<Self, ConfigError> {
        let path = path.into();
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        for key in map.keys() {
            if !allowed.contains(key.as_str()) {
                return Err(ConfigError::ConstraintViolation {
                    path: join(&path, key),
                    message: "unknown key".into(),
                });
            }
        }
        Ok(Self { path, map })
    }

    fn key_path(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn violation(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::ConstraintViolation {
            path: self.key_path(key),
            message: message.into(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key)
    }

    fn section(&self, key: &str, allowed: &[&str]) -> Result<Option<Section<'a>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Object(map)) => Section::new(self.key_path(key), map, allowed).map(Some),
            Some(_) => Err(self.violation(key, "expected an object")),
        }
    }

    fn name(&self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(self.violation(key, "expected an architecture name")),
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => match v.as_u64() {
                Some(n) if n > 0 => Ok(n as usize),
                _ => Err(self.violation(key, format!("expected a positive integer, got {v}"))),
            },
        }
    }

    fn count_or_zero(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| self.violation(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn integer(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| self.violation(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| self.violation(key, format!("expected a number, got {v}"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(v) => Err(self.violation(key, format!("expected true or false, got {v}"))),
        }
    }

    fn counts(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v.as_u64() {
                    Some(n) if n > 0 => Ok(n as usize),
                    _ => Err(self.violation(key, format!("expected positive integers, got {v}"))),
                })
                .collect(),
            Some(v) => Err(self.violation(key, format!("expected a list, got {v}"))),
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn unknown(path: String, name: &str) -> ConfigError {
    ConfigError::UnknownArchitecture {
        path,
        name: name.to_string(),
    }
}

/// Parses a model configuration document, filling omitted optional keys
/// with their defaults. `encoder`, `decoder` and `loss` are required, as is
/// `decoder_params.attn_decoder` for a joint decoder.
pub fn parse_model_config(text: &str) -> Result<ModelConfig, ConfigError> {
    let doc = parse_document(text)?;
    let root = Section::new(
        "",
        &doc,
        &[
            "encoder",
            "encoder_params",
            "decoder",
            "decoder_params",
            "loss",
            "loss_params",
            "features",
            "augment",
            "training",
        ],
    )?;

    let required = |key: &str| -> Result<&str, ConfigError> {
        root.name(key)?
            .ok_or_else(|| root.violation(key, "required key missing"))
    };
    let encoder_name = required("encoder")?;
    let encoder = EncoderKind::from_name(encoder_name).ok_or_else(|| unknown("encoder".into(), encoder_name))?;
    let decoder_name = required("decoder")?;
    let decoder = DecoderKind::from_name(decoder_name).ok_or_else(|| unknown("decoder".into(), decoder_name))?;
    let loss_name = required("loss")?;
    let loss = LossKind::from_name(loss_name).ok_or_else(|| unknown("loss".into(), loss_name))?;

    let defaults = EncoderParams::default();
    let encoder_params = match root.section(
        "encoder_params",
        &[
            "encoder_layers",
            "num_heads",
            "hidden_dim",
            "ff_dim",
            "conv_channels",
            "kernel_sizes",
            "strides",
        ],
    )? {
        None => defaults,
        Some(s) => EncoderParams {
            encoder_layers: s.count("encoder_layers", defaults.encoder_layers)?,
            num_heads: s.count("num_heads", defaults.num_heads)?,
            hidden_dim: s.count("hidden_dim", defaults.hidden_dim)?,
            ff_dim: s.count("ff_dim", defaults.ff_dim)?,
            conv_channels: s.counts("conv_channels", &defaults.conv_channels)?,
            kernel_sizes: s.counts("kernel_sizes", &defaults.kernel_sizes)?,
            strides: s.counts("strides", &defaults.strides)?,
        },
    };

    let mut decoder_params = DecoderParams::default();
    if let Some(s) = root.section(
        "decoder_params",
        &["attn_decoder", "attn_decoder_params", "ctc_decoder", "ctc_decoder_params"],
    )? {
        let attn_params = s.section("attn_decoder_params", &["hidden_layers", "num_heads"])?;
        match s.name("attn_decoder")? {
            Some(ATTN_DECODER_NAME) => {
                let d = AttnDecoderParams::default();
                decoder_params.attention = Some(match attn_params {
                    None => d,
                    Some(p) => AttnDecoderParams {
                        hidden_layers: p.count("hidden_layers", d.hidden_layers)?,
                        num_heads: p.count("num_heads", d.num_heads)?,
                    },
                });
            }
            Some(other) => return Err(unknown(s.key_path("attn_decoder"), other)),
            None if attn_params.is_some() => {
                return Err(s.violation("attn_decoder_params", "given without attn_decoder"))
            }
            None => {}
        }
        match s.name("ctc_decoder")? {
            None | Some(CTC_DECODER_NAME) => {}
            Some(other) => return Err(unknown(s.key_path("ctc_decoder"), other)),
        }
        if let Some(p) = s.section("ctc_decoder_params", &["beam_width", "blank_id"])? {
            let d = CtcDecoderParams::default();
            decoder_params.ctc = CtcDecoderParams {
                beam_width: p.count("beam_width", d.beam_width)?,
                blank_id: p.integer("blank_id", d.blank_id as u64)? as u32,
            };
        }
    }

    let mut loss_params = LossParams::default();
    if let Some(s) = root.section(
        "loss_params",
        &["seq_loss_params", "ctc_loss_params", "lambda_value"],
    )? {
        loss_params.lambda_value = s.real("lambda_value", loss_params.lambda_value)?;
        if let Some(seq) = s.section("seq_loss_params", &["label_smoothing"])? {
            loss_params.label_smoothing = seq.real("label_smoothing", loss_params.label_smoothing)?;
        }
        s.section("ctc_loss_params", &[])?;
    }

    let mut features = FeatureParams::default();
    if let Some(s) = root.section(
        "features",
        &["frame_length_ms", "hop_ms", "fft_size", "mel_bins", "sample_rate", "log_floor"],
    )? {
        features = FeatureParams {
            frame_length_ms: s.count("frame_length_ms", features.frame_length_ms)?,
            hop_ms: s.count("hop_ms", features.hop_ms)?,
            fft_size: s.count("fft_size", features.fft_size)?,
            mel_bins: s.count("mel_bins", features.mel_bins)?,
            sample_rate: s.count("sample_rate", features.sample_rate as usize)? as u32,
            log_floor: s.real("log_floor", features.log_floor)?,
        };
    }

    let mut augment = AugmentPolicy::default();
    if let Some(s) = root.section(
        "augment",
        &["enabled", "freq_mask_param", "freq_masks", "time_mask_param", "time_masks", "fill_value"],
    )? {
        augment = AugmentPolicy {
            enabled: s.flag("enabled", augment.enabled)?,
            freq_mask_param: s.count_or_zero("freq_mask_param", augment.freq_mask_param)?,
            freq_masks: s.count_or_zero("freq_masks", augment.freq_masks)?,
            time_mask_param: s.count_or_zero("time_mask_param", augment.time_mask_param)?,
            time_masks: s.count_or_zero("time_masks", augment.time_masks)?,
            fill_value: s.real("fill_value", augment.fill_value as f64)? as f32,
        };
    }

    let mut training = TrainParams::default();
    if let Some(s) = root.section(
        "training",
        &["learning_rate", "batch_size_per_worker", "max_steps", "eval_every", "seed", "optimizer"],
    )? {
        let optimizer = match s.name("optimizer")? {
            None => training.optimizer,
            Some("adam") => OptimizerKind::Adam,
            Some("sgd") => OptimizerKind::Sgd,
            Some(other) => return Err(unknown(s.key_path("optimizer"), other)),
        };
        training = TrainParams {
            learning_rate: s.real("learning_rate", training.learning_rate)?,
            batch_size_per_worker: s.count("batch_size_per_worker", training.batch_size_per_worker)?,
            max_steps: s.count_or_zero("max_steps", training.max_steps)?,
            eval_every: s.count("eval_every", training.eval_every)?,
            seed: s.integer("seed", training.seed)?,
            optimizer,
        };
    }

    let config = ModelConfig {
        encoder,
        encoder_params,
        decoder,
        decoder_params,
        loss,
        loss_params,
        features,
        augment,
        training,
    };
    if let Some(first) = config.violations().into_iter().next() {
        return Err(first.into());
    }
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterSpec {
    pub worker_count: usize,
    /// Hundredths of a core per worker.
    pub cpu_centi: u64,
    /// Hundredths of a device per worker.
    pub gpu_centi: u64,
    pub memory_mb: u64,
}

impl ClusterSpec {
    pub fn single() -> Self {
        Self {
            worker_count: 1,
            cpu_centi: 100,
            gpu_centi: 0,
            memory_mb: 1024,
        }
    }

    pub fn with_workers(worker_count: usize) -> Self {
        Self {
            worker_count,
            ..Self::single()
        }
    }

    pub fn cores_per_worker(&self) -> f64 {
        self.cpu_centi as f64 / 100.0
    }

    pub fn devices_per_worker(&self) -> f64 {
        self.gpu_centi as f64 / 100.0
    }

    pub fn memory_gb_per_worker(&self) -> f64 {
        self.memory_mb as f64 / 1000.0
    }
}

impl fmt::Display for ClusterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} worker(s), each {} cores / {} devices / {} GB",
            self.worker_count,
            self.cores_per_worker(),
            self.devices_per_worker(),
            self.memory_gb_per_worker()
        )
    }
}

/// Parses `{"worker": {"count": N, "cpu": C, "gpu": G, "memory": M}}`.
pub fn parse_cluster_spec(text: &str) -> Result<ClusterSpec, ConfigError> {
    let doc = parse_document(text)?;
    let root = Section::new("", &doc, &["worker"])?;
    let worker = root
        .section("worker", &["count", "cpu", "gpu", "memory"])?
        .ok_or_else(|| root.violation("worker", "required key missing"))?;
    let count = match worker.get("count").and_then(Value::as_u64) {
        Some(0) => return Err(worker.violation("count", "a cluster needs at least one worker")),
        Some(n) => n as usize,
        None => return Err(worker.violation("count", "expected a positive integer")),
    };
    Ok(ClusterSpec {
        worker_count: count,
        cpu_centi: worker.integer("cpu", 0)?,
        gpu_centi: worker.integer("gpu", 0)?,
        memory_mb: worker.integer("memory", 0)?,
    })
}
