//! Levenshtein alignment and pooled character/word error rates.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("references contain no {0} units")]
    EmptyReference(Unit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Char,
    Word,
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unit::Char => "character",
            Unit::Word => "word",
        })
    }
}

/// A minimal alignment: `distance = substitutions + insertions + deletions`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditOps {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl std::ops::AddAssign for EditOps {
    fn add_assign(&mut self, o: Self) {
        self.distance += o.distance;
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Unit-cost Levenshtein distance. Among equally short alignments the
/// backtrace prefers substitution, then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditOps {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for (j, cell) in dp.iter_mut().take(w).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            dp[i * w + j] = (dp[(i - 1) * w + j - 1] + cost)
                .min(dp[(i - 1) * w + j] + 1)
                .min(dp[i * w + j - 1] + 1);
        }
    }

    let mut ops = EditOps {
        distance: dp[n * w + m],
        ..EditOps::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[(i - 1) * w + j - 1];
            if same && diag == here {
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                ops.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// Scoring units of `text`: non-whitespace scalars, or whitespace-separated words.
pub fn units(text: &str, unit: Unit) -> Vec<&str> {
    match unit {
        Unit::Char => text
            .char_indices()
            .filter(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect(),
        Unit::Word => text.split_whitespace().collect(),
    }
}

/// Pooled error rate for one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScore {
    pub rate: f64,
    pub ops: EditOps,
    pub ref_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub cer: f64,
    pub wer: f64,
    /// Character-level totals.
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

/// Σ distance ÷ Σ reference length over the corpus.
pub fn corpus_metrics<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)], unit: Unit) -> Result<UnitScore, MetricsError> {
    let mut ops = EditOps::default();
    let mut ref_len = 0;
    for (r, h) in pairs {
        let ru = units(r.as_ref(), unit);
        ref_len += ru.len();
        ops += edit_distance(&ru, &units(h.as_ref(), unit));
    }
    if ref_len == 0 {
        return Err(MetricsError::EmptyReference(unit));
    }
    Ok(UnitScore {
        rate: ops.distance as f64 / ref_len as f64,
        ops,
        ref_len,
    })
}

/// CER as the primary figure, WER alongside.
pub fn evaluate_pairs<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<EvalResult, MetricsError> {
    let chars = corpus_metrics(pairs, Unit::Char)?;
    let words = corpus_metrics(pairs, Unit::Word)?;
    Ok(EvalResult {
        cer: chars.rate,
        wer: words.rate,
        substitutions: chars.ops.substitutions,
        insertions: chars.ops.insertions,
        deletions: chars.ops.deletions,
        ref_len: chars.ref_len,
    })
}
