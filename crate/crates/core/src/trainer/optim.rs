use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::model::ParamStore;

use super::TrainerError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub type GradMap = BTreeMap<String, Tensor>;

/// Adam moments plus the number of updates taken. SGD leaves the moments empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

fn check_shapes(params: &ParamStore, grads: &GradMap) -> Result<(), TrainerError> {
    if params.len() != grads.len() {
        return Err(TrainerError::NameSetMismatch(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| TrainerError::NameSetMismatch(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(TrainerError::ShapeMismatch {
                name: name.clone(),
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// `p ← p − lr·g`
pub fn sgd_update(params: &mut ParamStore, grads: &GradMap, lr: f64) -> Result<(), TrainerError> {
    check_shapes(params, grads)?;
    for (name, p) in params.iter_mut() {
        let g = &grads[name.as_str()];
        p.data_mut().iter_mut().zip(g.data()).for_each(|(p, g)| *p -= lr * g);
    }
    Ok(())
}

/// One bias-corrected Adam step.
pub fn adam_update(
    params: &mut ParamStore,
    grads: &GradMap,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TrainerError> {
    check_shapes(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name.as_str()];
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// `a + b` as an unevaluated pair `(sum, error)` with `sum + error` exact.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Elementwise mean over workers. Values are accumulated in worker order
/// with a compensated sum and divided once, so identical inputs reproduce
/// themselves exactly and the result never depends on completion order.
pub fn allreduce_mean(grads: &[GradMap]) -> Result<GradMap, TrainerError> {
    let first = grads
        .first()
        .ok_or_else(|| TrainerError::NameSetMismatch("no workers".into()))?;
    for (w, other) in grads.iter().enumerate().skip(1) {
        if other.len() != first.len() || other.keys().zip(first.keys()).any(|(a, b)| a != b) {
            return Err(TrainerError::NameSetMismatch(format!("worker {w} differs from worker 0")));
        }
        for (name, g) in other {
            let expected = first[name].shape();
            if g.shape() != expected {
                return Err(TrainerError::ShapeMismatch {
                    name: name.clone(),
                    expected: expected.to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
    }
    let k = grads.len() as f64;
    let mut out = GradMap::new();
    for (name, t) in first {
        let data = (0..t.len())
            .map(|i| {
                let (mut hi, mut lo) = (0.0, 0.0);
                for g in grads {
                    let (s, e) = two_sum(hi, g[name].data()[i]);
                    hi = s;
                    lo += e;
                }
                let q = hi / k;
                // residual of the division, exact by fma
                let r = (-q).mul_add(k, hi) + lo;
                q + r / k
            })
            .collect();
        out.insert(name.clone(), Tensor::new(t.shape().to_vec(), data).expect("shape preserved"));
    }
    Ok(out)
}

/// Rounds every value to the nearest f32 so that checkpoints, which store
/// f32, capture the training state exactly.
pub(crate) fn round_to_f32<'a>(tensors: impl Iterator<Item = &'a mut Tensor>) {
    for t in tensors {
        t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}
