use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_model_config, ModelConfig};
use crate::model::{Architecture, Model};
use crate::records::Vocabulary;

use super::{decode_checkpoint, encode_checkpoint, Checkpoint, TrainerError};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const BUNDLE_CHECKPOINT: &str = "model.ckpt";
pub const BUNDLE_CONFIG: &str = "model_config.json";
pub const BUNDLE_VOCAB: &str = "vocab.txt";
pub const BUNDLE_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub step: usize,
    pub cer: Option<f64>,
    pub config_digest: String,
    pub format_version: u32,
    pub created_at: String,
}

/// A loaded, verified export directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub checkpoint: Checkpoint,
}

impl Bundle {
    pub fn model(&self) -> Result<Model, TrainerError> {
        let arch = Architecture::new(&self.config, self.vocab.len())?;
        Ok(Model::from_params(arch, self.checkpoint.params.clone())?)
    }
}

/// Writes `model.ckpt`, `model_config.json`, `vocab.txt` and `manifest.json`
/// into `export_dir`.
pub fn export_bundle(
    ckpt: &Checkpoint,
    config: &ModelConfig,
    vocab_path: &Path,
    export_dir: &Path,
) -> Result<BundleManifest, TrainerError> {
    let vocab = std::fs::read(vocab_path).map_err(|e| TrainerError::io(vocab_path, e))?;
    let digest = config.digest();
    if ckpt.config_digest != digest {
        return Err(TrainerError::DigestMismatch {
            expected: digest,
            found: ckpt.config_digest.clone(),
        });
    }
    std::fs::create_dir_all(export_dir).map_err(|e| TrainerError::io(export_dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = export_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| TrainerError::io(&path, e))
    };
    write(BUNDLE_CHECKPOINT, &encode_checkpoint(ckpt))?;
    write(BUNDLE_CONFIG, config.to_json_string().as_bytes())?;
    write(BUNDLE_VOCAB, &vocab)?;
    let manifest = BundleManifest {
        step: ckpt.step,
        cer: ckpt.eval_metric,
        config_digest: digest,
        format_version: BUNDLE_FORMAT_VERSION,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(BUNDLE_MANIFEST, json.as_bytes())?;
    Ok(manifest)
}

fn invalid(dir: &Path, reason: impl Into<String>) -> TrainerError {
    TrainerError::InvalidBundle {
        path: dir.display().to_string(),
        reason: reason.into(),
    }
}

fn read_member(dir: &Path, name: &str) -> Result<Vec<u8>, TrainerError> {
    let path = dir.join(name);
    std::fs::read(&path).map_err(|_| invalid(dir, format!("missing {name}")))
}

/// SHA-256 over the checkpoint, config and vocabulary files.
pub fn bundle_digest(dir: &Path) -> Result<String, TrainerError> {
    let mut hasher = Sha256::new();
    for name in [BUNDLE_CHECKPOINT, BUNDLE_CONFIG, BUNDLE_VOCAB] {
        let bytes = read_member(dir, name)?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Loads a bundle, checking that its members are present and that manifest,
/// config and checkpoint agree on the config digest.
pub fn load_bundle(dir: &Path) -> Result<Bundle, TrainerError> {
    let manifest: BundleManifest = serde_json::from_slice(&read_member(dir, BUNDLE_MANIFEST)?)
        .map_err(|e| invalid(dir, format!("manifest: {e}")))?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(invalid(dir, format!("format version {}", manifest.format_version)));
    }
    let config_text = String::from_utf8(read_member(dir, BUNDLE_CONFIG)?)
        .map_err(|_| invalid(dir, "config is not UTF-8"))?;
    let config = parse_model_config(&config_text).map_err(|e| invalid(dir, format!("config: {e}")))?;
    let vocab_text = String::from_utf8(read_member(dir, BUNDLE_VOCAB)?)
        .map_err(|_| invalid(dir, "vocabulary is not UTF-8"))?;
    let vocab = Vocabulary::from_file_contents(&vocab_text).map_err(|e| invalid(dir, format!("vocabulary: {e}")))?;
    let checkpoint = decode_checkpoint(&read_member(dir, BUNDLE_CHECKPOINT)?)?;
    let digest = config.digest();
    if manifest.config_digest != digest || checkpoint.config_digest != digest {
        return Err(invalid(dir, "config digest does not match manifest and checkpoint"));
    }
    Ok(Bundle {
        dir: dir.to_path_buf(),
        manifest,
        config,
        vocab,
        checkpoint,
    })
}
