use std::collections::BTreeMap;

use crate::autodiff::Tensor;

use super::{Model, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub score: f64,
}

/// Ranked hypotheses, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NBest {
    pub hypotheses: Vec<Hypothesis>,
}

impl NBest {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn collapse(path: impl IntoIterator<Item = u32>, blank: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for id in path {
        if Some(id) != prev && id != blank {
            out.push(id);
        }
        prev = Some(id);
    }
    out
}

/// Best-path decoding with blank 0: per-frame argmax, merge repeats, drop blanks.
pub fn greedy_decode(logprobs: &Tensor) -> Vec<u32> {
    greedy_score(logprobs).0
}

/// Greedy tokens together with the log-probability of the argmax path.
pub fn greedy_score(logprobs: &Tensor) -> (Vec<u32>, f64) {
    let v = logprobs.cols();
    let mut score = 0.0;
    let path: Vec<u32> = logprobs
        .data()
        .chunks_exact(v.max(1))
        .map(|row| {
            let k = argmax(row);
            score += row[k];
            k as u32
        })
        .collect();
    (collapse(path, 0), score)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Clone, Copy)]
struct Mass {
    blank: f64,
    label: f64,
}

impl Mass {
    const EMPTY: Mass = Mass {
        blank: f64::NEG_INFINITY,
        label: f64::NEG_INFINITY,
    };

    fn total(self) -> f64 {
        log_add(self.blank, self.label)
    }
}

/// Keeps the `width` prefixes with the largest total mass; equal masses
/// order by prefix so the result does not depend on map iteration.
fn prune(beams: BTreeMap<Vec<u32>, Mass>, width: usize) -> Vec<(Vec<u32>, Mass)> {
    // prefixes reachable only through impossible paths hold no mass
    let mut ranked: Vec<(Vec<u32>, Mass)> = beams.into_iter().filter(|(_, m)| m.total() > f64::NEG_INFINITY).collect();
    ranked.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(width);
    ranked
}

/// CTC prefix beam search with blank 0. Each hypothesis score is the total
/// log-probability of its prefix summed over surviving alignments.
pub fn prefix_beam_search(logprobs: &Tensor, width: usize) -> NBest {
    let width = width.max(1);
    let v = logprobs.cols();
    let mut beams = vec![(
        Vec::new(),
        Mass {
            blank: 0.0,
            label: f64::NEG_INFINITY,
        },
    )];
    for row in logprobs.data().chunks_exact(v.max(1)) {
        let mut next: BTreeMap<Vec<u32>, Mass> = BTreeMap::new();
        for (prefix, mass) in &beams {
            let total = mass.total();
            let stay = next.entry(prefix.clone()).or_insert(Mass::EMPTY);
            stay.blank = log_add(stay.blank, total + row[0]);
            let last = prefix.last().copied();
            for (c, &lp) in row.iter().enumerate().skip(1) {
                let c = c as u32;
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                if last == Some(c) {
                    // repeat without a blank collapses onto the same prefix
                    let stay = next.entry(prefix.clone()).or_insert(Mass::EMPTY);
                    stay.label = log_add(stay.label, mass.label + lp);
                    let ext = next.entry(extended).or_insert(Mass::EMPTY);
                    ext.label = log_add(ext.label, mass.blank + lp);
                } else {
                    let ext = next.entry(extended).or_insert(Mass::EMPTY);
                    ext.label = log_add(ext.label, total + lp);
                }
            }
        }
        beams = prune(next, width);
    }
    NBest {
        hypotheses: beams
            .into_iter()
            .map(|(tokens, mass)| Hypothesis {
                tokens,
                score: mass.total(),
            })
            .collect(),
    }
}

/// `w·ctc + (1−w)·attention` for each hypothesis, re-ranked. Ties keep
/// their previous order.
pub fn rescore_nbest(model: &Model, states: &Tensor, nbest: &NBest, weight: f64) -> Result<NBest, ModelError> {
    if !model.has_attention_decoder() {
        return Err(ModelError::NotJointModel);
    }
    let mut hypotheses = nbest
        .hypotheses
        .iter()
        .map(|h| {
            let attn = model.attention_log_likelihood(states, &h.tokens)?;
            Ok(Hypothesis {
                tokens: h.tokens.clone(),
                score: weight * h.score + (1.0 - weight) * attn,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    hypotheses.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(NBest { hypotheses })
}
