use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crc::{Crc, CRC_32_ISCSI};

use super::payload::{decode_record, encode_record, UtteranceRecord};
use super::RecordError;

const CASTAGNOLI: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);
const MASK_DELTA: u32 = 0xa282_ead8;

/// Length (8) + length CRC (4) + payload CRC (4).
pub const FRAME_OVERHEAD: usize = 16;

pub fn crc32c(bytes: &[u8]) -> u32 {
    CASTAGNOLI.checksum(bytes)
}

pub fn mask_crc(crc: u32) -> u32 {
    crc.rotate_right(15).wrapping_add(MASK_DELTA)
}

pub fn unmask_crc(masked: u32) -> u32 {
    let rot = masked.wrapping_sub(MASK_DELTA);
    rot.rotate_left(15)
}

pub fn masked_crc32c(bytes: &[u8]) -> u32 {
    mask_crc(crc32c(bytes))
}

/// `len:u64le ‖ masked_crc(len):u32le ‖ payload ‖ masked_crc(payload):u32le`
pub fn frame_record(payload: &[u8], out: &mut Vec<u8>) {
    let len = (payload.len() as u64).to_le_bytes();
    out.extend_from_slice(&len);
    out.extend_from_slice(&masked_crc32c(&len).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&masked_crc32c(payload).to_le_bytes());
}

/// Splits a framed byte stream into payloads, verifying both checksums.
pub fn read_frames(bytes: &[u8]) -> Result<Vec<&[u8]>, RecordError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let index = Some(out.len());
        let rest = &bytes[pos..];
        if rest.len() < 12 {
            return Err(RecordError::corrupt(index, "truncated length header"));
        }
        let len_bytes = &rest[..8];
        let len_crc = u32::from_le_bytes(rest[8..12].try_into().unwrap());
        if masked_crc32c(len_bytes) != len_crc {
            return Err(RecordError::corrupt(index, "length checksum mismatch"));
        }
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap());
        let available = (rest.len() - 12) as u64;
        if available < 4 || len > available - 4 {
            return Err(RecordError::corrupt(index, "truncated payload"));
        }
        let len = len as usize;
        let payload = &rest[12..12 + len];
        let crc = u32::from_le_bytes(rest[12 + len..16 + len].try_into().unwrap());
        if masked_crc32c(payload) != crc {
            return Err(RecordError::corrupt(index, "payload checksum mismatch"));
        }
        out.push(payload);
        pos += FRAME_OVERHEAD + len;
    }
    Ok(out)
}

pub fn write_record_file(records: &[UtteranceRecord], path: &Path) -> Result<usize, RecordError> {
    let file = File::create(path).map_err(|e| RecordError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let mut buf = Vec::new();
    for rec in records {
        buf.clear();
        frame_record(&encode_record(rec), &mut buf);
        writer.write_all(&buf).map_err(|e| RecordError::io(path, e))?;
    }
    writer.flush().map_err(|e| RecordError::io(path, e))?;
    Ok(records.len())
}

pub fn read_record_file(path: &Path) -> Result<Vec<UtteranceRecord>, RecordError> {
    let bytes = std::fs::read(path).map_err(|e| RecordError::io(path, e))?;
    read_frames(&bytes)?
        .into_iter()
        .enumerate()
        .map(|(i, payload)| {
            decode_record(payload).map_err(|e| match e {
                RecordError::Corrupt { reason, .. } => RecordError::corrupt(Some(i), reason),
                other => other,
            })
        })
        .collect()
}
