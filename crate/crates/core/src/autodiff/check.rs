use super::{Graph, NodeId, Result, Tensor};

/// `‖a − n‖ / max(1e-8, ‖a‖ + ‖n‖)` with Euclidean norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-8)
}

/// Central differences `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` per element.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, eps: f64) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// Compares the backward-pass gradient of scalar `f` at `x` with central
/// differences and returns the relative error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let input = graph.param(x.clone());
    let out = f(&mut graph, input)?;
    let analytic = graph.backward(out)?.get(&graph, input);
    let numeric = numeric_gradient(
        |probe| {
            let mut g = Graph::new();
            let id = g.constant(probe.clone());
            let out = f(&mut g, id)?;
            Ok(g.value(out).item())
        },
        x,
        eps,
    )?;
    Ok(relative_error(analytic.data(), numeric.data()))
}
