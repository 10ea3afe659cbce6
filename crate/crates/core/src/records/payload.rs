use crate::audio::FeatureMatrix;

use super::RecordError;

pub const PAYLOAD_MAGIC: [u8; 4] = *b"EZA1";

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub features: FeatureMatrix,
    pub token_ids: Vec<u32>,
    pub transcript: String,
}

/// Exact encoded size: 24 fixed bytes plus the variable fields.
pub fn payload_len(rec: &UtteranceRecord) -> usize {
    24 + rec.utt_id.len() + rec.features.values.len() * 4 + rec.token_ids.len() * 4 + rec.transcript.len()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Little-endian layout:
/// `"EZA1" ‖ id_len ‖ id ‖ T ‖ F ‖ T·F f32 ‖ n_tokens ‖ ids u32 ‖ text_len ‖ text`.
pub fn encode_record(rec: &UtteranceRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload_len(rec));
    out.extend_from_slice(&PAYLOAD_MAGIC);
    put_u32(&mut out, rec.utt_id.len());
    out.extend_from_slice(rec.utt_id.as_bytes());
    put_u32(&mut out, rec.features.frames);
    put_u32(&mut out, rec.features.bins);
    for v in &rec.features.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut out, rec.token_ids.len());
    for id in &rec.token_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    put_u32(&mut out, rec.transcript.len());
    out.extend_from_slice(rec.transcript.as_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], RecordError> {
        if self.bytes.len() - self.pos < n {
            return Err(RecordError::corrupt(None, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, RecordError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String, RecordError> {
        let len = self.u32(what)?;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| RecordError::corrupt(None, format!("{what} is not UTF-8")))
    }
}

pub fn decode_record(bytes: &[u8]) -> Result<UtteranceRecord, RecordError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != PAYLOAD_MAGIC {
        if magic[..3] == PAYLOAD_MAGIC[..3] {
            return Err(RecordError::BadVersion(magic));
        }
        return Err(RecordError::corrupt(None, "bad payload magic"));
    }
    let utt_id = cur.string("utterance id")?;
    let frames = cur.u32("frame count")?;
    let bins = cur.u32("bin count")?;
    let n = frames
        .checked_mul(bins)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| RecordError::corrupt(None, "feature size overflow"))?;
    let values = cur
        .take(n, "features")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n_tokens = cur.u32("token count")?;
    let token_ids = cur
        .take(n_tokens.checked_mul(4).ok_or_else(|| RecordError::corrupt(None, "token count overflow"))?, "tokens")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let transcript = cur.string("transcript")?;
    if cur.pos != bytes.len() {
        return Err(RecordError::corrupt(None, "trailing bytes after transcript"));
    }
    Ok(UtteranceRecord {
        utt_id,
        features: FeatureMatrix::new(frames, bins, values),
        token_ids,
        transcript,
    })
}
