use std::collections::HashMap;
use std::path::Path;

use super::RecordError;

pub const BLANK_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const RESERVED: [&str; 4] = ["<blank>", "<unk>", "<sos>", "<eos>"];

/// Character vocabulary. Ids are dense line numbers of the vocabulary file;
/// ids 0..4 are reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<char, u32>,
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        Self {
            id_to_token: RESERVED.iter().map(|s| s.to_string()).collect(),
            token_to_id: HashMap::new(),
        }
    }

    fn push(&mut self, c: char) {
        if !self.token_to_id.contains_key(&c) {
            self.token_to_id.insert(c, self.id_to_token.len() as u32);
            self.id_to_token.push(c.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn blank_id(&self) -> u32 {
        BLANK_ID
    }

    /// Unknown characters become `<unk>`.
    pub fn tokenize(&self, transcript: &str) -> Vec<u32> {
        transcript
            .chars()
            .map(|c| self.token_to_id.get(&c).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Reserved ids render as the empty string.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, RecordError> {
        let mut out = String::new();
        for &id in ids {
            let token = self.id_to_token.get(id as usize).ok_or(RecordError::IdOutOfRange {
                id,
                size: self.len(),
            })?;
            if id as usize >= RESERVED.len() {
                out.push_str(token);
            }
        }
        Ok(out)
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for token in &self.id_to_token {
            out.push_str(token);
            out.push('\n');
        }
        out
    }

    pub fn from_file_contents(text: &str) -> Result<Self, RecordError> {
        let lines: Vec<&str> = text.split('\n').collect();
        // the file ends with a newline, leaving one empty trailing piece
        let lines = match lines.split_last() {
            Some((&"", rest)) => rest,
            _ => &lines[..],
        };
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(RecordError::corrupt(None, "vocabulary does not start with the reserved tokens"));
        }
        let mut vocab = Self::reserved_only();
        for line in &lines[RESERVED.len()..] {
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if !vocab.token_to_id.contains_key(&c) => vocab.push(c),
                _ => return Err(RecordError::corrupt(None, format!("bad vocabulary entry {line:?}"))),
            }
        }
        Ok(vocab)
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        std::fs::write(path, self.to_file_contents()).map_err(|e| RecordError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, RecordError> {
        let text = std::fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
        Self::from_file_contents(&text)
    }
}

/// Characters in first-appearance order after the reserved ids. Line breaks
/// are never tokens (they would break the one-token-per-line file).
pub fn build_vocab<S: AsRef<str>>(transcripts: &[S]) -> Vocabulary {
    let mut vocab = Vocabulary::reserved_only();
    for t in transcripts {
        for c in t.as_ref().chars().filter(|&c| c != '\n' && c != '\r') {
            vocab.push(c);
        }
    }
    vocab
}
