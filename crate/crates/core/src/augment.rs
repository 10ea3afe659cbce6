//! Frequency and time masking of feature matrices.
//!
//! Draws are inclusive at both ends: a mask width is uniform over
//! `{0..=param}` and its start uniform over `{0..=len-width}`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AugmentError {
    #[error("frequency mask parameter {param} exceeds {bins} bins")]
    MaskTooWide { param: usize, bins: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub freq_mask_param: usize,
    pub freq_masks: usize,
    pub time_mask_param: usize,
    pub time_masks: usize,
    pub fill_value: f32,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            freq_mask_param: 27,
            freq_masks: 1,
            time_mask_param: 40,
            time_masks: 1,
            fill_value: 0.0,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            enabled: false,
            freq_mask_param: 0,
            freq_masks: 0,
            time_mask_param: 0,
            time_masks: 0,
            fill_value: 0.0,
        }
    }
}

/// Per-utterance generator derived from a global seed.
pub fn utterance_rng(global_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(global_seed, index))
}

/// splitmix64 over the pair.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sets bins `[start, start + width)` of every frame to `fill`.
pub fn mask_bins(feat: &mut FeatureMatrix, start: usize, width: usize, fill: f32) {
    let end = (start + width).min(feat.bins);
    for row in feat.values.chunks_exact_mut(feat.bins) {
        row[start..end].fill(fill);
    }
}

/// Sets frames `[start, start + width)` to `fill`.
pub fn mask_frames(feat: &mut FeatureMatrix, start: usize, width: usize, fill: f32) {
    let end = (start + width).min(feat.frames);
    feat.values[start * feat.bins..end * feat.bins].fill(fill);
}

pub fn freq_mask<R: Rng + ?Sized>(
    feat: &FeatureMatrix,
    max_width: usize,
    fill: f32,
    rng: &mut R,
) -> Result<FeatureMatrix, AugmentError> {
    let mut out = feat.clone();
    freq_mask_in_place(&mut out, max_width, fill, rng)?;
    Ok(out)
}

fn freq_mask_in_place<R: Rng + ?Sized>(
    feat: &mut FeatureMatrix,
    max_width: usize,
    fill: f32,
    rng: &mut R,
) -> Result<(), AugmentError> {
    if max_width > feat.bins {
        return Err(AugmentError::MaskTooWide {
            param: max_width,
            bins: feat.bins,
        });
    }
    let width = rng.gen_range(0..=max_width);
    let start = rng.gen_range(0..=feat.bins - width);
    mask_bins(feat, start, width, fill);
    Ok(())
}

pub fn time_mask<R: Rng + ?Sized>(
    feat: &FeatureMatrix,
    max_width: usize,
    fill: f32,
    rng: &mut R,
) -> FeatureMatrix {
    let mut out = feat.clone();
    time_mask_in_place(&mut out, max_width, fill, rng);
    out
}

fn time_mask_in_place<R: Rng + ?Sized>(feat: &mut FeatureMatrix, max_width: usize, fill: f32, rng: &mut R) {
    let width = rng.gen_range(0..=max_width.min(feat.frames));
    let start = rng.gen_range(0..=feat.frames - width);
    mask_frames(feat, start, width, fill);
}

/// `freq_masks` frequency masks then `time_masks` time masks from one rng stream.
pub fn apply_policy<R: Rng + ?Sized>(
    feat: &FeatureMatrix,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<FeatureMatrix, AugmentError> {
    let mut out = feat.clone();
    if !policy.enabled {
        return Ok(out);
    }
    for _ in 0..policy.freq_masks {
        freq_mask_in_place(&mut out, policy.freq_mask_param, policy.fill_value, rng)?;
    }
    for _ in 0..policy.time_masks {
        time_mask_in_place(&mut out, policy.time_mask_param, policy.fill_value, rng);
    }
    Ok(out)
}
