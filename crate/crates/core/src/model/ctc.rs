use crate::autodiff::Tensor;

use super::ModelError;

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

/// Shortest alignment for `target`: one frame per label plus a blank
/// between each adjacent repeat.
pub fn min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// `[T × V]`, and its gradient with respect to those log-probabilities.
pub fn ctc_loss(logprobs: &Tensor, target: &[u32], blank: u32) -> Result<(f64, Tensor), ModelError> {
    let (t_len, v) = (logprobs.rows(), logprobs.cols());
    if let Some(&bad) = target.iter().find(|&&id| id == blank || id as usize >= v) {
        return Err(ModelError::BadToken(bad));
    }
    let need = min_frames(target);
    if t_len < need {
        return Err(ModelError::TargetTooLong {
            target_len: target.len(),
            min_frames: need,
            frames: t_len,
        });
    }

    let ext: Vec<usize> = std::iter::once(blank as usize)
        .chain(target.iter().flat_map(|&id| [id as usize, blank as usize]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, s: usize| logprobs.data()[t * v + ext[s]];
    // label s may be reached by skipping s-1 when it is not blank and differs from s-2
    let can_skip = |s: usize| s >= 2 && ext[s] != blank as usize && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == ninf { ninf } else { acc + lp(t, s) };
        }
    }

    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == ninf { ninf } else { acc + lp(t, s) };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }

    // alpha·beta double counts the frame's own emission, hence the − lp term
    let mut occupancy = vec![ninf; t_len * v];
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab == ninf {
                continue;
            }
            let cell = &mut occupancy[t * v + ext[s]];
            *cell = log_add(*cell, ab - lp(t, s));
        }
    }
    let grad = Tensor::from_fn(&[t_len, v], |i| {
        let o = occupancy[i];
        if o == ninf {
            0.0
        } else {
            -(o - log_p).exp()
        }
    });
    Ok((-log_p, grad))
}
