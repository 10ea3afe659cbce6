//! PCM WAV ingestion and log-mel filterbank features.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    UnsupportedRate { got: u32, expected: u32 },
    #[error("clip of {samples} samples is shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Normalized to [-1, 1).
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub frame_length_ms: usize,
    pub hop_ms: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            frame_length_ms: 25,
            hop_ms: 10,
            fft_size: 512,
            mel_bins: 80,
            sample_rate: 16000,
            log_floor: 1e-10,
        }
    }
}

impl FeatureParams {
    pub fn frame_samples(&self) -> usize {
        self.sample_rate as usize * self.frame_length_ms / 1000
    }

    pub fn hop_samples(&self) -> usize {
        self.sample_rate as usize * self.hop_ms / 1000
    }

    /// `1 + floor((n - frame) / hop)`, or zero when `n` is shorter than a frame.
    pub fn frame_count(&self, n: usize) -> usize {
        let frame = self.frame_samples();
        if n < frame {
            0
        } else {
            1 + (n - frame) / self.hop_samples()
        }
    }
}

/// Row-major `frames × bins` matrix of log energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, bins: usize, values: Vec<f32>) -> Self {
        assert_eq!(frames * bins, values.len(), "feature matrix shape mismatch");
        Self { frames, bins, values }
    }

    pub fn filled(frames: usize, bins: usize, value: f32) -> Self {
        Self::new(frames, bins, vec![value; frames * bins])
    }

    pub fn get(&self, frame: usize, bin: usize) -> f32 {
        self.values[frame * self.bins + bin]
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Decodes a 16-bit little-endian mono PCM WAV. Chunks other than `fmt `
/// and `data` are skipped.
pub fn read_wav(bytes: &[u8], expected_rate: u32) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWav);
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(len).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::UnsupportedFormat("truncated fmt chunk".into()));
                }
                let tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are padded to even length
        pos = body_start.saturating_add(len + (len & 1));
    }
    let (tag, channels, rate, bits) =
        format.ok_or_else(|| AudioError::UnsupportedFormat("missing fmt chunk".into()))?;
    if tag != 1 {
        return Err(AudioError::UnsupportedFormat(format!("audio format tag {tag} (need PCM = 1)")));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!("{bits}-bit samples (need 16)")));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!("{channels} channels (need mono)")));
    }
    if rate != expected_rate {
        return Err(AudioError::UnsupportedRate {
            got: rate,
            expected: expected_rate,
        });
    }
    let data = data.ok_or_else(|| AudioError::UnsupportedFormat("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f32 / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: rate,
    })
}

pub fn read_wav_file(path: &Path, expected_rate: u32) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_wav(&bytes, expected_rate)
}

/// Encodes samples as a canonical 44-byte-header 16-bit mono PCM WAV.
/// Samples are clamped to [-1, 1] and scaled by 32767.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `mel_bins + 2` edge frequencies evenly spaced on the mel scale from 0 Hz
/// to Nyquist. Filter `m` rises over `[edges[m], edges[m+1]]` and falls over
/// `[edges[m+1], edges[m+2]]`.
fn mel_edges(params: &FeatureParams) -> Vec<f64> {
    let top = hz_to_mel(params.sample_rate as f64 / 2.0);
    (0..params.mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (params.mel_bins + 1) as f64))
        .collect()
}

/// Peak frequency of each triangular filter.
pub fn mel_center_frequencies(params: &FeatureParams) -> Vec<f64> {
    mel_edges(params)[1..=params.mel_bins].to_vec()
}

/// `mel_bins` rows of `fft_size/2 + 1` weights over the one-sided spectrum.
pub fn mel_filterbank(params: &FeatureParams) -> Vec<Vec<f64>> {
    let edges = mel_edges(params);
    let n_freq = params.fft_size / 2 + 1;
    let bin_hz = params.sample_rate as f64 / params.fft_size as f64;
    (0..params.mel_bins)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_freq)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Reusable log-mel front end: FFT plan, window and filterbank are built once.
pub struct LogMelExtractor {
    params: FeatureParams,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per filter: first nonzero spectrum bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl LogMelExtractor {
    pub fn new(params: &FeatureParams) -> Self {
        let frame = params.frame_samples();
        let window = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos())
            .collect();
        let filters = mel_filterbank(params)
            .into_iter()
            .map(|row| {
                let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
                (start, row[start..end].to_vec())
            })
            .collect();
        Self {
            params: params.clone(),
            fft: FftPlanner::new().plan_fft_forward(params.fft_size),
            window,
            filters,
        }
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMatrix, AudioError> {
        let p = &self.params;
        if clip.sample_rate != p.sample_rate {
            return Err(AudioError::UnsupportedRate {
                got: clip.sample_rate,
                expected: p.sample_rate,
            });
        }
        let frame = p.frame_samples();
        let hop = p.hop_samples();
        let frames = p.frame_count(clip.samples.len());
        if frames == 0 {
            return Err(AudioError::TooShort {
                samples: clip.samples.len(),
                frame,
            });
        }
        let floor = p.log_floor;
        let n_freq = p.fft_size / 2 + 1;
        let mut values = Vec::with_capacity(frames * p.mel_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); p.fft_size];
        let mut power = vec![0.0f64; n_freq];
        for t in 0..frames {
            let chunk = &clip.samples[t * hop..t * hop + frame];
            for (slot, (&s, &w)) in buf.iter_mut().zip(chunk.iter().zip(&self.window)) {
                *slot = Complex::new(s as f64 * w, 0.0);
            }
            for slot in &mut buf[frame..] {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for (dst, c) in power.iter_mut().zip(&buf[..n_freq]) {
                *dst = c.norm_sqr();
            }
            for (start, weights) in &self.filters {
                let energy: f64 = weights
                    .iter()
                    .zip(&power[*start..])
                    .map(|(w, e)| w * e)
                    .sum();
                values.push(energy.max(floor).ln() as f32);
            }
        }
        Ok(FeatureMatrix::new(frames, p.mel_bins, values))
    }
}

/// Hann-windowed power spectrum → mel filterbank → natural log with floor.
pub fn compute_logmel(clip: &AudioClip, params: &FeatureParams) -> Result<FeatureMatrix, AudioError> {
    LogMelExtractor::new(params).compute(clip)
}

/// Per-utterance, per-bin standardization: `(x − mean) / sqrt(var + 1e-8)`.
pub fn normalize_features(feat: &FeatureMatrix) -> FeatureMatrix {
    let (t, f) = (feat.frames, feat.bins);
    let mut mean = vec![0.0f64; f];
    let mut var = vec![0.0f64; f];
    for row in feat.values.chunks_exact(f) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    for row in feat.values.chunks_exact(f) {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
            let d = x as f64 - m;
            *v += d * d;
        }
    }
    let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v / t as f64 + 1e-8).sqrt()).collect();
    let values = feat
        .values
        .chunks_exact(f)
        .flat_map(|row| {
            row.iter()
                .zip(mean.iter().zip(&scale))
                .map(|(&x, (&m, &s))| ((x as f64 - m) * s) as f32)
        })
        .collect();
    FeatureMatrix::new(t, f, values)
}
