//! Synthetic tone corpus for tests, benches and demos.
//!
//! Each character is rendered as its own pair of sine tones for a fixed
//! segment, so transcripts are recoverable from the spectrum.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{compute_logmel, encode_wav, normalize_features, AudioClip, FeatureParams};
use crate::config::ModelConfig;
use crate::records::{build_vocab, UtteranceRecord, Vocabulary};

pub const TOY_ALPHABET: &str = "abcdef";
pub const SEGMENT_SECONDS: f64 = 0.15;
const EDGE_SECONDS: f64 = 0.05;
const GAP_SECONDS: f64 = 0.02;

/// Ten distinct transcripts of two to four characters.
pub const TOY_TRANSCRIPTS: [&str; 10] = ["ab", "cd", "ef", "abc", "bcd", "cde", "def", "fab", "abcd", "cdef"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub transcript: String,
    pub samples: Vec<f32>,
}

/// Tone pair for a character; unknown characters get silence.
pub fn char_tones(c: char) -> Option<(f64, f64)> {
    let i = TOY_ALPHABET.find(c)? as f64;
    Some((300.0 + 170.0 * i, 1800.0 + 420.0 * i))
}

/// Renders `transcript` at `sample_rate` with faint seeded noise.
pub fn synth_utterance(transcript: &str, sample_rate: u32, seed: u64) -> Vec<f32> {
    let sr = sample_rate as f64;
    let seconds = |s: f64| (s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f32; seconds(EDGE_SECONDS)];
    for (k, c) in transcript.chars().enumerate() {
        if k > 0 {
            out.extend(std::iter::repeat_n(0.0, seconds(GAP_SECONDS)));
        }
        let n = seconds(SEGMENT_SECONDS);
        let (f1, f2) = char_tones(c).unwrap_or((0.0, 0.0));
        for i in 0..n {
            let t = i as f64 / sr;
            // short raised-cosine ramps avoid clicks at segment edges
            let ramp = (i.min(n - 1 - i) as f64 / (0.01 * sr)).min(1.0);
            let env = 0.5 - 0.5 * (std::f64::consts::PI * ramp).cos();
            let s = 0.3 * (2.0 * std::f64::consts::PI * f1 * t).sin() + 0.3 * (2.0 * std::f64::consts::PI * f2 * t).sin();
            out.push((env * s) as f32);
        }
    }
    out.extend(std::iter::repeat_n(0.0, seconds(EDGE_SECONDS)));
    for s in &mut out {
        *s += rng.gen_range(-1e-3f32..1e-3);
    }
    out
}

pub fn toy_corpus(sample_rate: u32, seed: u64) -> Vec<SynthUtterance> {
    TOY_TRANSCRIPTS
        .iter()
        .enumerate()
        .map(|(i, t)| SynthUtterance {
            id: format!("utt{i:02}"),
            transcript: t.to_string(),
            samples: synth_utterance(t, sample_rate, seed.wrapping_add(i as u64)),
        })
        .collect()
}

/// Writes `wav/<id>.wav` files and `manifest.csv` under `dir`; returns the
/// manifest path.
pub fn write_toy_corpus(dir: &Path, sample_rate: u32, seed: u64) -> std::io::Result<PathBuf> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let manifest = dir.join("manifest.csv");
    let mut csv = std::fs::File::create(&manifest)?;
    writeln!(csv, "path,transcript")?;
    for utt in toy_corpus(sample_rate, seed) {
        std::fs::write(wav_dir.join(format!("{}.wav", utt.id)), encode_wav(&utt.samples, sample_rate))?;
        writeln!(csv, "wav/{}.wav,{}", utt.id, utt.transcript)?;
    }
    Ok(manifest)
}

/// The toy corpus featurized in memory, with its vocabulary.
pub fn toy_records(features: &FeatureParams, seed: u64) -> (Vocabulary, Vec<UtteranceRecord>) {
    let corpus = toy_corpus(features.sample_rate, seed);
    let vocab = build_vocab(&corpus.iter().map(|u| u.transcript.as_str()).collect::<Vec<_>>());
    let records = corpus
        .into_iter()
        .map(|u| {
            let clip = AudioClip {
                samples: u.samples,
                sample_rate: features.sample_rate,
            };
            let feats = compute_logmel(&clip, features).expect("toy utterances exceed one frame");
            UtteranceRecord {
                token_ids: vocab.tokenize(&u.transcript),
                utt_id: u.id,
                features: normalize_features(&feats),
                transcript: u.transcript,
            }
        })
        .collect();
    (vocab, records)
}

/// Small joint transformer sized for the toy corpus.
pub fn toy_config() -> ModelConfig {
    let mut cfg = ModelConfig::joint_transformer();
    cfg.encoder_params.encoder_layers = 2;
    cfg.encoder_params.hidden_dim = 64;
    cfg.encoder_params.num_heads = 4;
    cfg.encoder_params.ff_dim = 128;
    cfg.loss_params.lambda_value = 0.3;
    cfg.features.mel_bins = 40;
    cfg.training.batch_size_per_worker = 2;
    cfg.training.learning_rate = 2e-3;
    cfg
}
