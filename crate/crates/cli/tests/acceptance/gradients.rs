use easyasr_core::autodiff::{grad_check, relative_error, AttentionMask, Graph, NodeId, Padding, Tensor, TensorError};
use easyasr_core::config::{DecoderKind, EncoderKind, LossKind, ModelConfig};
use easyasr_core::model::{build_model, joint_loss, loss_and_grads};
use easyasr_core::records::build_vocab;
use easyasr_core::{FeatureMatrix, UtteranceRecord};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

type Build = Box<dyn Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Scalarizes any node against fixed weights so every output element matters.
fn scalarize(g: &mut Graph, y: NodeId) -> Result<NodeId, TensorError> {
    let w = Tensor::from_fn(g.shape(y), |i| ((i * 31 % 17) as f64 - 8.0) / 7.0 + 0.03);
    g.dot(y, &w)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(String, Build, Tensor)> {
    let mut cases: Vec<(String, Build, Tensor)> = Vec::new();
    let b = random(rng, &[4, 3]);
    cases.push(("matmul".into(), Box::new(move |g, x| {
        let b = g.constant(b.clone());
        g.matmul(x, b)
    }), random(rng, &[2, 4])));
    let row = random(rng, &[4]);
    cases.push(("add".into(), Box::new(move |g, x| {
        let r = g.constant(row.clone());
        g.add(x, r)
    }), random(rng, &[3, 4])));
    cases.push(("mul_scalar".into(), Box::new(|g, x| Ok(g.mul_scalar(x, 2.5))), random(rng, &[3, 2])));
    let away = Tensor::from_fn(&[3, 3], |i| if i % 2 == 0 { 0.2 + 0.1 * i as f64 } else { -0.3 - 0.05 * i as f64 });
    cases.push(("relu".into(), Box::new(|g, x| Ok(g.relu(x))), away));
    cases.push(("log_softmax".into(), Box::new(|g, x| Ok(g.log_softmax(x))), random(rng, &[3, 5])));
    for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (2, Padding::Valid)] {
        let w = random(rng, &[3, 2, 3]);
        cases.push((format!("conv1d stride {stride} {padding:?}"), Box::new(move |g, x| {
            let w = g.constant(w.clone());
            g.conv1d(x, w, stride, padding)
        }), random(rng, &[7, 2])));
    }
    let x = random(rng, &[7, 2]);
    cases.push(("conv1d weight".into(), Box::new(move |g, w| {
        let x = g.constant(x.clone());
        g.conv1d(x, w, 2, Padding::Same)
    }), random(rng, &[3, 2, 3])));
    let (gamma, beta) = (random(rng, &[5]), random(rng, &[5]));
    cases.push(("layer_norm".into(), Box::new(move |g, x| {
        let (ga, be) = (g.constant(gamma.clone()), g.constant(beta.clone()));
        g.layer_norm(x, ga, be, 1e-5)
    }), random(rng, &[3, 5])));
    let x = random(rng, &[3, 5]);
    cases.push(("layer_norm gamma".into(), Box::new(move |g, ga| {
        let x = g.constant(x.clone());
        let be = g.constant(Tensor::zeros(&[5]));
        g.layer_norm(x, ga, be, 1e-5)
    }), random(rng, &[5])));
    cases.push(("embedding".into(), Box::new(|g, t| g.embedding(&[2, 0, 2, 3], t)), random(rng, &[4, 3])));
    for mask in [AttentionMask::None, AttentionMask::Causal, AttentionMask::KeyPadding(vec![true, false, true, true])] {
        let (k, v) = (random(rng, &[4, 3]), random(rng, &[4, 2]));
        let m = mask.clone();
        cases.push((format!("attention q {mask:?}"), Box::new(move |g, q| {
            let (k, v) = (g.constant(k.clone()), g.constant(v.clone()));
            g.scaled_dot_attention(q, k, v, &m)
        }), random(rng, &[4, 3])));
        let q = random(rng, &[4, 3]);
        let v = random(rng, &[4, 2]);
        // the same input feeds keys and values
        cases.push((format!("attention kv {mask:?}"), Box::new(move |g, k| {
            let q = g.constant(q.clone());
            let proj = g.constant(Tensor::from_fn(&[3, 2], |i| 0.3 * i as f64 - 0.7));
            let vv = g.matmul(k, proj)?;
            let bias = g.constant(v.clone());
            let vv = g.add(vv, bias)?;
            g.scaled_dot_attention(q, k, vv, &mask)
        }), random(rng, &[4, 3])));
    }
    cases.push(("slice_cols + concat_cols".into(), Box::new(|g, x| {
        let a = g.slice_cols(x, 1, 2)?;
        let b = g.slice_cols(x, 3, 2)?;
        g.concat_cols(&[b, a, a])
    }), random(rng, &[3, 5])));
    cases.push(("sum".into(), Box::new(|g, x| {
        let s = g.sum(x);
        Ok(g.mul_scalar(s, 1.0))
    }), random(rng, &[2, 3])));
    cases.push(("external_loss".into(), Box::new(|g, x| {
        let v = g.value(x).clone();
        let value = 0.5 * v.data().iter().map(|a| a * a).sum::<f64>();
        let loss = g.external_loss(x, value, v)?;
        Ok(g.mul_scalar(loss, 1.0))
    }), random(rng, &[2, 3])));
    cases
}

fn tiny(encoder: EncoderKind, joint: bool, smoothing: f64) -> ModelConfig {
    let mut cfg = ModelConfig::joint_transformer();
    cfg.encoder = encoder;
    cfg.encoder_params.encoder_layers = 1;
    cfg.encoder_params.hidden_dim = 8;
    cfg.encoder_params.num_heads = 2;
    cfg.encoder_params.ff_dim = 12;
    cfg.encoder_params.conv_channels = vec![6, 8];
    cfg.encoder_params.kernel_sizes = vec![3, 3];
    cfg.encoder_params.strides = vec![1, 1];
    cfg.features.mel_bins = 5;
    cfg.augment.freq_mask_param = 2;
    cfg.loss_params.label_smoothing = smoothing;
    cfg.loss_params.lambda_value = 0.3;
    if let Some(a) = cfg.decoder_params.attention.as_mut() {
        a.num_heads = 2;
    }
    if !joint {
        cfg.decoder = DecoderKind::Ctc;
        cfg.loss = LossKind::Ctc;
        cfg.decoder_params.attention = None;
    }
    cfg
}

/// Worst relative error over every parameter tensor of the model's loss.
fn full_loss_error(cfg: &ModelConfig) -> Result<f64, String> {
    let vocab = build_vocab(&["ab", "ba"]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bins = cfg.features.mel_bins;
    let recs: Vec<UtteranceRecord> = [("ab", 9), ("ba", 7)]
        .iter()
        .map(|&(text, frames)| UtteranceRecord {
            utt_id: text.into(),
            features: FeatureMatrix::new(frames, bins, (0..frames * bins).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            token_ids: vocab.tokenize(text),
            transcript: text.into(),
        })
        .collect();
    let batch: Vec<&UtteranceRecord> = recs.iter().collect();
    let model = build_model(cfg, &vocab, 3).map_err(|e| e.to_string())?;
    let analytic = loss_and_grads(&model, &batch).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (name, grad) in &analytic.grads {
        let base = model.params.get(name).unwrap().clone();
        let mut probe = model.clone();
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut at = |x: f64| {
                    probe.params.get_mut(name).unwrap().data_mut()[i] = x;
                    joint_loss(&probe, &batch).unwrap()
                };
                let d = (at(base.data()[i] + EPS) - at(base.data()[i] - EPS)) / (2.0 * EPS);
                at(base.data()[i]);
                d
            })
            .collect();
        let err = relative_error(grad.data(), &numeric);
        if err >= TOL {
            return Err(format!("{name}: relative error {err:.2e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cases = op_cases(&mut rng);
    let mut worst = 0.0f64;
    for (name, build, x) in &cases {
        let err = grad_check(|g, x| build(g, x).and_then(|y| scalarize(g, y)), x, EPS).map_err(|e| format!("{name}: {e}"))?;
        if err >= TOL {
            return Err(format!("{name}: relative error {err:.2e}"));
        }
        worst = worst.max(err);
    }
    let mut loss_worst = 0.0f64;
    for (label, cfg) in [
        ("joint", tiny(EncoderKind::Transformer, true, 0.0)),
        ("joint smoothed", tiny(EncoderKind::Transformer, true, 0.1)),
        ("ctc wav2letter", tiny(EncoderKind::Wav2Letter, false, 0.0)),
    ] {
        loss_worst = loss_worst.max(full_loss_error(&cfg).map_err(|e| format!("{label} loss: {e}"))?);
    }
    Ok(format!(
        "{} op checks (max {worst:.1e}), joint_loss over all parameters of 3 models (max {loss_worst:.1e})",
        cases.len()
    ))
}
