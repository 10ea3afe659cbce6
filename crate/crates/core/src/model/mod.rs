//! Encoder/decoder assembly from a [`ModelConfig`], CTC and joint losses,
//! and decoding.
//!
//! The transformer encoder subsamples by 2 with a strided convolution, adds
//! sinusoidal positions and applies pre-norm self-attention blocks. The
//! Wav2Letter encoder is a plain conv/relu stack. The attention decoder is
//! a pre-norm transformer decoder with causal self-attention and
//! cross-attention over the encoder states.

mod ctc;
mod decode;
mod loss;
mod params;

pub use ctc::{ctc_loss, min_frames};
pub use decode::{greedy_decode, greedy_score, prefix_beam_search, rescore_nbest, Hypothesis, NBest};
pub use loss::{attention_loss, joint_loss, loss_and_grads, BatchLoss};
pub use params::{Bound, Init, ParamSpec, ParamStore};

use thiserror::Error;

use crate::audio::FeatureMatrix;
use crate::autodiff::{AttentionMask, Graph, NodeId, Padding, Tensor, TensorError};
use crate::config::{validate_config, ConfigError, EncoderKind, ModelConfig, Violation};
use crate::records::{Vocabulary, SOS_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("target of {target_len} tokens needs {min_frames} frames, got {frames}")]
    TargetTooLong {
        target_len: usize,
        min_frames: usize,
        frames: usize,
    },
    #[error("target token {0} is blank or outside the vocabulary")]
    BadToken(u32),
    #[error("attention loss needs a non-empty target")]
    EmptyTarget,
    #[error("operation needs a JointCTCAttenDecoder model")]
    NotJointModel,
    #[error("features have {got} bins, model expects {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),
}

const LN_EPS: f64 = 1e-5;
const SUBSAMPLE_KERNEL: usize = 3;

/// Pushes the weight (and optional bias) specs of one linear layer.
type LinearSpec<'a> = dyn FnMut(&mut Vec<ParamSpec>, &str, usize, usize, bool) + 'a;

/// Network shape derived from a config and vocabulary; holds no weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub input_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub states: Tensor,
    pub logprobs: Tensor,
    pub downsample_factor: usize,
}

/// Graph handles of an encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub states: NodeId,
    pub logprobs: NodeId,
}

fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[len, dim], |i| {
        let (pos, j) = (i / dim, i % dim);
        let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
        let angle = pos as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn features_tensor(features: &FeatureMatrix) -> Result<Tensor, TensorError> {
    Tensor::matrix(
        features.frames,
        features.bins,
        features.values.iter().map(|&v| v as f64).collect(),
    )
}

impl Architecture {
    pub fn new(config: &ModelConfig, vocab_size: usize) -> Result<Self, ModelError> {
        let report = validate_config(config, vocab_size);
        if !report.is_empty() {
            return Err(ModelError::Invalid(report));
        }
        Ok(Self {
            config: config.clone(),
            vocab_size,
            input_dim: config.features.mel_bins,
        })
    }

    pub fn is_joint(&self) -> bool {
        self.config.is_joint()
    }

    pub fn model_dim(&self) -> usize {
        self.config.encoder_params.hidden_dim
    }

    /// Width of the encoder states.
    pub fn encoder_dim(&self) -> usize {
        match self.config.encoder {
            EncoderKind::Transformer => self.model_dim(),
            EncoderKind::Wav2Letter => *self.config.encoder_params.conv_channels.last().unwrap(),
        }
    }

    pub fn downsample_factor(&self) -> usize {
        match self.config.encoder {
            EncoderKind::Transformer => 2,
            EncoderKind::Wav2Letter => self.config.encoder_params.strides.iter().product(),
        }
    }

    /// Encoder frames produced for `frames` input frames.
    pub fn encoded_frames(&self, frames: usize) -> usize {
        match self.config.encoder {
            EncoderKind::Transformer => frames.div_ceil(2),
            EncoderKind::Wav2Letter => self
                .config
                .encoder_params
                .strides
                .iter()
                .fold(frames, |t, &s| t.div_ceil(s)),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let d = self.model_dim();
        let ff = self.config.encoder_params.ff_dim;
        let v = self.vocab_size;
        let mut linear = |specs: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize, bias: bool| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: vec![fan_in, fan_out],
                init: Init::Xavier { fan_in, fan_out },
            });
            if bias {
                specs.push(ParamSpec {
                    name: format!("{name}.bias"),
                    shape: vec![fan_out],
                    init: Init::Zeros,
                });
            }
        };
        let norm = |specs: &mut Vec<ParamSpec>, name: &str, dim: usize| {
            specs.push(ParamSpec {
                name: format!("{name}.gamma"),
                shape: vec![dim],
                init: Init::Ones,
            });
            specs.push(ParamSpec {
                name: format!("{name}.beta"),
                shape: vec![dim],
                init: Init::Zeros,
            });
        };
        let conv = |specs: &mut Vec<ParamSpec>, name: &str, k: usize, cin: usize, cout: usize| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: vec![k, cin, cout],
                init: Init::Xavier {
                    fan_in: k * cin,
                    fan_out: k * cout,
                },
            });
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: vec![cout],
                init: Init::Zeros,
            });
        };
        // key projections carry no bias: softmax is invariant to it
        let attention = |specs: &mut Vec<ParamSpec>, linear: &mut LinearSpec, name: &str, kv_dim: usize| {
            linear(specs, &format!("{name}.query"), d, d, true);
            linear(specs, &format!("{name}.key"), kv_dim, d, false);
            linear(specs, &format!("{name}.value"), kv_dim, d, true);
            linear(specs, &format!("{name}.out"), d, d, true);
        };

        match self.config.encoder {
            EncoderKind::Transformer => {
                conv(&mut specs, "encoder.subsample", SUBSAMPLE_KERNEL, self.input_dim, d);
                for l in 0..self.config.encoder_params.encoder_layers {
                    let p = format!("encoder.layers.{l}");
                    norm(&mut specs, &format!("{p}.norm1"), d);
                    attention(&mut specs, &mut linear, &format!("{p}.self_attn"), d);
                    norm(&mut specs, &format!("{p}.norm2"), d);
                    linear(&mut specs, &format!("{p}.ff1"), d, ff, true);
                    linear(&mut specs, &format!("{p}.ff2"), ff, d, true);
                }
                norm(&mut specs, "encoder.final_norm", d);
            }
            EncoderKind::Wav2Letter => {
                let e = &self.config.encoder_params;
                let mut cin = self.input_dim;
                for (l, (&c, &k)) in e.conv_channels.iter().zip(&e.kernel_sizes).enumerate() {
                    conv(&mut specs, &format!("encoder.conv.{l}"), k, cin, c);
                    cin = c;
                }
            }
        }
        linear(&mut specs, "ctc_head", self.encoder_dim(), v, true);

        if let Some(attn) = &self.config.decoder_params.attention {
            specs.push(ParamSpec {
                name: "decoder.embedding".into(),
                shape: vec![v, d],
                init: Init::Xavier { fan_in: v, fan_out: d },
            });
            for l in 0..attn.hidden_layers {
                let p = format!("decoder.layers.{l}");
                norm(&mut specs, &format!("{p}.norm1"), d);
                attention(&mut specs, &mut linear, &format!("{p}.self_attn"), d);
                norm(&mut specs, &format!("{p}.norm2"), d);
                attention(&mut specs, &mut linear, &format!("{p}.cross_attn"), self.encoder_dim());
                norm(&mut specs, &format!("{p}.norm3"), d);
                linear(&mut specs, &format!("{p}.ff1"), d, ff, true);
                linear(&mut specs, &format!("{p}.ff2"), ff, d, true);
            }
            norm(&mut specs, "decoder.final_norm", d);
            linear(&mut specs, "decoder.output", d, v, true);
        }
        specs
    }

    fn linear(&self, g: &mut Graph, p: &Bound, name: &str, x: NodeId) -> Result<NodeId, TensorError> {
        let h = g.matmul(x, p.id(&format!("{name}.weight")))?;
        g.add(h, p.id(&format!("{name}.bias")))
    }

    fn norm(&self, g: &mut Graph, p: &Bound, name: &str, x: NodeId) -> Result<NodeId, TensorError> {
        g.layer_norm(x, p.id(&format!("{name}.gamma")), p.id(&format!("{name}.beta")), LN_EPS)
    }

    #[allow(clippy::too_many_arguments)]
    fn multi_head(
        &self,
        g: &mut Graph,
        p: &Bound,
        name: &str,
        query_in: NodeId,
        kv_in: NodeId,
        heads: usize,
        mask: &AttentionMask,
    ) -> Result<NodeId, TensorError> {
        let q = self.linear(g, p, &format!("{name}.query"), query_in)?;
        let k = g.matmul(kv_in, p.id(&format!("{name}.key.weight")))?;
        let v = self.linear(g, p, &format!("{name}.value"), kv_in)?;
        let head_dim = self.model_dim() / heads;
        let outputs = (0..heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * head_dim, head_dim)?;
                let kh = g.slice_cols(k, h * head_dim, head_dim)?;
                let vh = g.slice_cols(v, h * head_dim, head_dim)?;
                g.scaled_dot_attention(qh, kh, vh, mask)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let joined = if heads == 1 { outputs[0] } else { g.concat_cols(&outputs)? };
        self.linear(g, p, &format!("{name}.out"), joined)
    }

    fn feed_forward(&self, g: &mut Graph, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId, TensorError> {
        let h = self.linear(g, p, &format!("{prefix}.ff1"), x)?;
        let h = g.relu(h);
        self.linear(g, p, &format!("{prefix}.ff2"), h)
    }

    /// Runs the encoder and CTC head on `graph`.
    pub fn encode_on(&self, g: &mut Graph, p: &Bound, features: &FeatureMatrix) -> Result<EncoderNodes, ModelError> {
        if features.bins != self.input_dim {
            return Err(ModelError::FeatureDim {
                got: features.bins,
                expected: self.input_dim,
            });
        }
        let x = g.constant(features_tensor(features)?);
        let states = match self.config.encoder {
            EncoderKind::Transformer => {
                let w = p.id("encoder.subsample.weight");
                let h = g.conv1d(x, w, 2, Padding::Same)?;
                let h = g.add(h, p.id("encoder.subsample.bias"))?;
                let h = g.relu(h);
                let frames = g.shape(h)[0];
                let pe = g.constant(sinusoidal_positions(frames, self.model_dim()));
                let mut h = g.add(h, pe)?;
                let heads = self.config.encoder_params.num_heads;
                for l in 0..self.config.encoder_params.encoder_layers {
                    let prefix = format!("encoder.layers.{l}");
                    let a = self.norm(g, p, &format!("{prefix}.norm1"), h)?;
                    let a = self.multi_head(g, p, &format!("{prefix}.self_attn"), a, a, heads, &AttentionMask::None)?;
                    h = g.add(h, a)?;
                    let a = self.norm(g, p, &format!("{prefix}.norm2"), h)?;
                    let a = self.feed_forward(g, p, &prefix, a)?;
                    h = g.add(h, a)?;
                }
                self.norm(g, p, "encoder.final_norm", h)?
            }
            EncoderKind::Wav2Letter => {
                let e = &self.config.encoder_params;
                let mut h = x;
                for (l, &stride) in e.strides.iter().enumerate() {
                    let c = g.conv1d(h, p.id(&format!("encoder.conv.{l}.weight")), stride, Padding::Same)?;
                    let c = g.add(c, p.id(&format!("encoder.conv.{l}.bias")))?;
                    h = g.relu(c);
                }
                h
            }
        };
        let logits = self.linear(g, p, "ctc_head", states)?;
        let logprobs = g.log_softmax(logits);
        Ok(EncoderNodes { states, logprobs })
    }

    /// Teacher-forced decoder pass over `inputs`; returns `[len × V]` log-probabilities.
    pub fn decode_on(&self, g: &mut Graph, p: &Bound, states: NodeId, inputs: &[u32]) -> Result<NodeId, ModelError> {
        let attn = self
            .config
            .decoder_params
            .attention
            .as_ref()
            .ok_or(ModelError::NotJointModel)?;
        let ids: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        let e = g.embedding(&ids, p.id("decoder.embedding"))?;
        let pe = g.constant(sinusoidal_positions(ids.len(), self.model_dim()));
        let mut h = g.add(e, pe)?;
        for l in 0..attn.hidden_layers {
            let prefix = format!("decoder.layers.{l}");
            let a = self.norm(g, p, &format!("{prefix}.norm1"), h)?;
            let a = self.multi_head(g, p, &format!("{prefix}.self_attn"), a, a, attn.num_heads, &AttentionMask::Causal)?;
            h = g.add(h, a)?;
            let a = self.norm(g, p, &format!("{prefix}.norm2"), h)?;
            let a = self.multi_head(g, p, &format!("{prefix}.cross_attn"), a, states, attn.num_heads, &AttentionMask::None)?;
            h = g.add(h, a)?;
            let a = self.norm(g, p, &format!("{prefix}.norm3"), h)?;
            let a = self.feed_forward(g, p, &prefix, a)?;
            h = g.add(h, a)?;
        }
        let h = self.norm(g, p, "decoder.final_norm", h)?;
        let logits = self.linear(g, p, "decoder.output", h)?;
        Ok(g.log_softmax(logits))
    }
}

/// Assembles the configured network with seeded initialization.
pub fn build_model(config: &ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<Model, ModelError> {
    let arch = Architecture::new(config, vocab.len())?;
    let params = ParamStore::initialize(&arch.param_specs(), seed);
    Ok(Model { arch, params })
}

impl Model {
    /// Pairs an architecture with existing weights, checking names and shapes.
    pub fn from_params(arch: Architecture, params: ParamStore) -> Result<Self, ModelError> {
        let specs = arch.param_specs();
        if specs.len() != params.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            match params.get(&spec.name) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::ParamMismatch(format!(
                        "{} has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => return Err(ModelError::ParamMismatch(format!("missing {}", spec.name))),
            }
        }
        Ok(Self { arch, params })
    }

    pub fn has_attention_decoder(&self) -> bool {
        self.arch.is_joint()
    }

    pub fn encode(&self, features: &FeatureMatrix) -> Result<EncoderOutput, ModelError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let nodes = self.arch.encode_on(&mut g, &p, features)?;
        Ok(EncoderOutput {
            states: g.value(nodes.states).clone(),
            logprobs: g.value(nodes.logprobs).clone(),
            downsample_factor: self.arch.downsample_factor(),
        })
    }

    /// `log p(tokens, <eos> | states)` under the attention decoder.
    pub fn attention_log_likelihood(&self, states: &Tensor, tokens: &[u32]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let s = g.constant(states.clone());
        let mut inputs = vec![SOS_ID];
        inputs.extend_from_slice(tokens);
        let lp = self.arch.decode_on(&mut g, &p, s, &inputs)?;
        let lp = g.value(lp);
        let v = lp.cols();
        let mut total = 0.0;
        for (i, &t) in tokens.iter().chain(std::iter::once(&crate::records::EOS_ID)).enumerate() {
            total += lp.data()[i * v + t as usize];
        }
        Ok(total)
    }
}
