use std::collections::BTreeMap;

use easyasr_core::autodiff::{Graph, Tensor};
use easyasr_core::model::{ctc_loss, greedy_decode, min_frames, prefix_beam_search};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

fn log_softmax(logits: Tensor) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(logits);
    let y = g.log_softmax(x);
    g.value(y).clone()
}

fn random_logprobs(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Tensor {
    log_softmax(Tensor::from_fn(&[t, v], |_| rng.gen_range(-2.0..2.0)))
}

/// Total probability of every collapsed label sequence over all V^T paths.
fn posteriors(lp: &Tensor) -> BTreeMap<Vec<u32>, f64> {
    let (t, v) = (lp.rows(), lp.cols());
    let mut out = BTreeMap::new();
    for code in 0..v.pow(t as u32) {
        let mut rest = code;
        let mut logp = 0.0;
        let mut labels = Vec::new();
        let mut prev = usize::MAX;
        for frame in 0..t {
            let s = rest % v;
            rest /= v;
            logp += lp.row(frame)[s];
            if s != 0 && s != prev {
                labels.push(s as u32);
            }
            prev = s;
        }
        *out.entry(labels).or_insert(0.0) += logp.exp();
    }
    out
}

pub fn oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for n in 0..500 {
        let t = rng.gen_range(1..=6);
        let v = rng.gen_range(2..=4);
        let lp = random_logprobs(&mut rng, t, v);
        let target = loop {
            let len = rng.gen_range(0..=3);
            let y: Vec<u32> = (0..len).map(|_| rng.gen_range(1..v as u32)).collect();
            if min_frames(&y) <= t {
                break y;
            }
        };
        let exact = -posteriors(&lp).get(&target).copied().unwrap_or(0.0).ln();
        let (loss, _) = ctc_loss(&lp, &target, 0).map_err(|e| format!("instance {n}: {e}"))?;
        let err = (loss - exact).abs();
        worst = worst.max(err);
        ensure(err < 1e-6, || format!("instance {n} (T={t}, V={v}, y={target:?}): {loss} vs {exact}"))?;
    }
    Ok(format!("500 instances, max |error| {worst:.1e}"))
}

pub fn beam_vs_exact() -> Outcome {
    // greedy picks blank twice; the label "a" holds 0.64 of the mass
    let half = Tensor::matrix(2, 2, vec![0.6f64.ln(), 0.4f64.ln(), 0.6f64.ln(), 0.4f64.ln()]).unwrap();
    let post = posteriors(&half);
    ensure((post[&vec![1]] - 0.64).abs() < 1e-12 && (post[&vec![]] - 0.36).abs() < 1e-12, || {
        format!("constructed case posteriors {post:?}")
    })?;
    ensure(greedy_decode(&half).is_empty(), || "greedy should fail on the constructed case".into())?;
    let mut instances = vec![half];
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    while instances.len() < 200 {
        let t = rng.gen_range(1..=6);
        let v = rng.gen_range(2..=4);
        instances.push(random_logprobs(&mut rng, t, v));
    }
    let mut agree = 0;
    let mut greedy_case_ok = false;
    for (i, lp) in instances.iter().enumerate() {
        let post = posteriors(lp);
        let best = post
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k.clone())
            .unwrap();
        let hit = prefix_beam_search(lp, 64).best().map(|h| h.tokens.clone()) == Some(best);
        agree += usize::from(hit);
        if i == 0 {
            greedy_case_ok = hit;
        }
    }
    ensure(greedy_case_ok, || "beam missed the greedy-failure case".into())?;
    let rate = agree as f64 / instances.len() as f64;
    ensure(rate >= 0.99, || format!("{agree}/200 agree"))?;
    Ok(format!("{agree}/200 exact argmax, greedy-failure case recovered"))
}
