use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::audio::{normalize_features, read_wav_file, LogMelExtractor};
use crate::augment::{apply_policy, utterance_rng};
use crate::config::ModelConfig;

use super::frame::write_record_file;
use super::payload::UtteranceRecord;
use super::vocab::{build_vocab, Vocabulary};
use super::RecordError;

pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetOptions {
    pub shard_size: usize,
    /// Augmented copies written per utterance, in addition to the clean one.
    pub augment_multiplier: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            shard_size: 512,
            augment_multiplier: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub ok: usize,
    pub failed: usize,
    pub failures: Vec<(String, String)>,
    pub records_written: usize,
    pub vocab_path: PathBuf,
    pub shard_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub transcript: String,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, RecordError> {
    let manifest_err = |reason: String| RecordError::Manifest {
        path: path.display().to_string(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| RecordError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| manifest_err(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["path", "transcript"] {
        return Err(manifest_err(format!("expected header `path,transcript`, got {headers:?}")));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| manifest_err(e.to_string())))
        .collect()
}

fn utterance_id(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// manifest (CSV `path,transcript`) → WAV → log-mel → normalize → optional
/// augmented copies → sharded record files plus `vocab.txt` in `out_dir`.
/// Utterances that fail are logged, skipped and counted.
pub fn create_dataset(
    manifest: &Path,
    out_dir: &Path,
    config: &ModelConfig,
    options: &DatasetOptions,
) -> Result<DatasetReport, RecordError> {
    let rows = read_manifest(manifest)?;
    if rows.is_empty() {
        return Err(RecordError::EmptyManifest(manifest.display().to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| RecordError::io(out_dir, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));

    let transcripts: Vec<&str> = rows.iter().map(|r| r.transcript.as_str()).collect();
    let vocab = build_vocab(&transcripts);
    let vocab_path = out_dir.join(VOCAB_FILE);
    vocab.write(&vocab_path)?;

    let extractor = LogMelExtractor::new(&config.features);
    let copies = 1 + options.augment_multiplier;
    let results: Vec<Result<Vec<UtteranceRecord>, String>> = rows
        .par_iter()
        .enumerate()
        .map(|(index, row)| {
            process_row(index, row, base, &extractor, &vocab, config, copies)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (row, result) in rows.iter().zip(results) {
        match result {
            Ok(mut recs) => records.append(&mut recs),
            Err(reason) => {
                warn!("skipping {}: {reason}", row.path);
                failures.push((row.path.clone(), reason));
            }
        }
    }

    let shard_size = options.shard_size.max(1);
    let n_shards = records.len().div_ceil(shard_size);
    let mut shard_paths = Vec::with_capacity(n_shards);
    for (i, chunk) in records.chunks(shard_size).enumerate() {
        let path = out_dir.join(format!("data-{i:05}-of-{n_shards:05}.tfrecord"));
        write_record_file(chunk, &path)?;
        shard_paths.push(path);
    }
    info!(
        "wrote {} records in {} shard(s) to {}",
        records.len(),
        n_shards,
        out_dir.display()
    );
    Ok(DatasetReport {
        ok: rows.len() - failures.len(),
        failed: failures.len(),
        failures,
        records_written: records.len(),
        vocab_path,
        shard_paths,
    })
}

fn process_row(
    index: usize,
    row: &ManifestRow,
    base: &Path,
    extractor: &LogMelExtractor,
    vocab: &Vocabulary,
    config: &ModelConfig,
    copies: usize,
) -> Result<Vec<UtteranceRecord>, String> {
    let token_ids = vocab.tokenize(&row.transcript);
    if token_ids.is_empty() {
        return Err("empty transcript".into());
    }
    let wav_path = base.join(&row.path);
    let clip = read_wav_file(&wav_path, config.features.sample_rate).map_err(|e| e.to_string())?;
    let features = normalize_features(&extractor.compute(&clip).map_err(|e| e.to_string())?);
    let utt_id = utterance_id(&row.path);
    let mut out = Vec::with_capacity(copies);
    for copy in 0..copies {
        let (id, feats) = if copy == 0 {
            (utt_id.clone(), features.clone())
        } else {
            let mut rng = utterance_rng(config.training.seed, (index * copies + copy) as u64);
            let masked = apply_policy(&features, &config.augment, &mut rng).map_err(|e| e.to_string())?;
            (format!("{utt_id}-aug{copy}"), masked)
        };
        out.push(UtteranceRecord {
            utt_id: id,
            features: feats,
            token_ids: token_ids.clone(),
            transcript: row.transcript.clone(),
        });
    }
    Ok(out)
}

/// Resolves a dataset argument: a directory yields its `*.tfrecord` files in
/// name order; a comma-separated list is taken as given.
pub fn list_record_files(spec: &str) -> Result<Vec<PathBuf>, RecordError> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let path = PathBuf::from(part);
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&path)
                .map_err(|e| RecordError::io(&path, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "tfrecord"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(path);
        }
    }
    Ok(out)
}
