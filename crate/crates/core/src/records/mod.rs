//! Audio-transcript records in TFRecord framing, the character vocabulary,
//! and the dataset creation pipeline.

mod dataset;
mod frame;
mod payload;
mod vocab;

pub use dataset::{create_dataset, list_record_files, DatasetOptions, DatasetReport, ManifestRow, VOCAB_FILE};
pub use frame::{
    crc32c, frame_record, mask_crc, masked_crc32c, read_frames, read_record_file, unmask_crc,
    write_record_file, FRAME_OVERHEAD,
};
pub use payload::{decode_record, encode_record, payload_len, UtteranceRecord, PAYLOAD_MAGIC};
pub use vocab::{build_vocab, Vocabulary, BLANK_ID, EOS_ID, RESERVED, SOS_ID, UNK_ID};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record{}: {reason}", index.map(|i| format!(" {i}")).unwrap_or_default())]
    Corrupt { index: Option<usize>, reason: String },
    #[error("unsupported payload version {0:?}")]
    BadVersion([u8; 4]),
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("manifest {0} has no rows")]
    EmptyManifest(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

impl RecordError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        RecordError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn corrupt(index: Option<usize>, reason: impl Into<String>) -> Self {
        RecordError::Corrupt {
            index,
            reason: reason.into(),
        }
    }
}
