use super::ops::matmul_acc;
use super::{Graph, NodeId, Op, Result, Tensor, TensorError};

/// Gradients of a scalar loss for every node that requires grad.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`; a zero tensor when `id` does not influence the loss.
    pub fn get(&self, graph: &Graph, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(graph.shape(id)),
        }
    }

    pub fn take(&mut self, graph: &Graph, id: NodeId) -> Tensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(id)))
    }
}

/// Adds into the gradient slot of `id`, allocating zeros on first touch.
fn slot<'a>(graph: &Graph, grads: &'a mut [Option<Tensor>], id: NodeId) -> Option<&'a mut [f64]> {
    if !graph.requires_grad(id) {
        return None;
    }
    let entry = &mut grads[id.0];
    if entry.is_none() {
        *entry = Some(Tensor::zeros(graph.shape(id)));
    }
    entry.as_mut().map(|t| t.data_mut())
}

impl Graph {
    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(NodeId(i), g.data(), &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id.0];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if let Some(da) = slot(self, grads, a) {
                    let bv = self.value(b).data();
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            da[i * k + l] += gi.iter().zip(&bv[l * n..(l + 1) * n]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(db) = slot(self, grads, b) {
                    let av = self.value(a).data();
                    for i in 0..m {
                        for l in 0..k {
                            let x = av[i * k + l];
                            for (d, &gv) in db[l * n..(l + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *d += x * gv;
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(da) = slot(self, grads, a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(db) = slot(self, grads, b) {
                    let n = db.len();
                    for chunk in g.chunks_exact(n) {
                        db.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                }
            }
            &Op::MulScalar(a, c) => {
                if let Some(da) = slot(self, grads, a) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
                }
            }
            &Op::Conv1d {
                x,
                w,
                stride,
                pad_left,
            } => {
                let (t, cin) = (self.shape(x)[0], self.shape(x)[1]);
                let (k, cout) = (self.shape(w)[0], self.shape(w)[2]);
                let t_out = node.value.shape()[0];
                let rows = |to: usize, kk: usize| (to * stride + kk).checked_sub(pad_left).filter(|&r| r < t);
                if let Some(dx) = slot(self, grads, x) {
                    let wv = self.value(w).data();
                    for to in 0..t_out {
                        let go = &g[to * cout..(to + 1) * cout];
                        for kk in 0..k {
                            let Some(r) = rows(to, kk) else { continue };
                            let wk = &wv[kk * cin * cout..(kk + 1) * cin * cout];
                            for c in 0..cin {
                                dx[r * cin + c] +=
                                    go.iter().zip(&wk[c * cout..(c + 1) * cout]).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
                if let Some(dw) = slot(self, grads, w) {
                    let xv = self.value(x).data();
                    for to in 0..t_out {
                        for kk in 0..k {
                            let Some(r) = rows(to, kk) else { continue };
                            matmul_acc(
                                &xv[r * cin..(r + 1) * cin],
                                &g[to * cout..(to + 1) * cout],
                                &mut dw[kk * cin * cout..(kk + 1) * cin * cout],
                                cin,
                                1,
                                cout,
                            );
                        }
                    }
                }
            }
            &Op::Relu(x) => {
                if let Some(dx) = slot(self, grads, x) {
                    let xv = self.value(x).data();
                    for ((d, &gv), &a) in dx.iter_mut().zip(g).zip(xv) {
                        if a > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                if let Some(dx) = slot(self, grads, x) {
                    let c = node.value.cols();
                    for (r, out_row) in node.value.data().chunks_exact(c).enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            dx[r * c + j] += gr[j] - out_row[j].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gam = self.value(*gamma).data();
                if let Some(dg) = slot(self, grads, *gamma) {
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(db) = slot(self, grads, *beta) {
                    for gr in g.chunks_exact(c) {
                        db.iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                    }
                }
                if let Some(dx) = slot(self, grads, *x) {
                    let n = c as f64;
                    for (r, (gr, hr)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[r * c + j] += inv_std[r] / n * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(dt) = slot(self, grads, *table) {
                    let d = node.value.cols();
                    for (pos, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[i * d + j] += g[pos * d + j];
                        }
                    }
                }
            }
            Op::Attention { q, k, v, probs } => {
                let (tq, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let tk = self.shape(*k)[0];
                let dv = self.shape(*v)[1];
                let scale = 1.0 / (d as f64).sqrt();
                if let Some(dvv) = slot(self, grads, *v) {
                    for i in 0..tq {
                        for j in 0..tk {
                            let p = probs[i * tk + j];
                            if p == 0.0 {
                                continue;
                            }
                            for c in 0..dv {
                                dvv[j * dv + c] += p * g[i * dv + c];
                            }
                        }
                    }
                }
                let need_scores = self.requires_grad(*q) || self.requires_grad(*k);
                if need_scores {
                    let vv = self.value(*v).data();
                    // dS = P ⊙ (dP − rowsum(P ⊙ dP)), dP = dO·vᵀ
                    let mut ds = vec![0.0; tq * tk];
                    for i in 0..tq {
                        let gi = &g[i * dv..(i + 1) * dv];
                        let mut acc = 0.0;
                        for j in 0..tk {
                            let p = probs[i * tk + j];
                            if p == 0.0 {
                                continue;
                            }
                            let dp: f64 = gi.iter().zip(&vv[j * dv..(j + 1) * dv]).map(|(a, b)| a * b).sum();
                            ds[i * tk + j] = dp;
                            acc += p * dp;
                        }
                        for j in 0..tk {
                            ds[i * tk + j] = probs[i * tk + j] * (ds[i * tk + j] - acc) * scale;
                        }
                    }
                    if let Some(dq) = slot(self, grads, *q) {
                        matmul_acc(&ds, self.value(*k).data(), dq, tq, tk, d);
                    }
                    if let Some(dk) = slot(self, grads, *k) {
                        let qv = self.value(*q).data();
                        for i in 0..tq {
                            for j in 0..tk {
                                let s = ds[i * tk + j];
                                if s == 0.0 {
                                    continue;
                                }
                                for c in 0..d {
                                    dk[j * d + c] += s * qv[i * d + c];
                                }
                            }
                        }
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                if let Some(dx) = slot(self, grads, x) {
                    let c = self.shape(x)[1];
                    let len = node.value.cols();
                    for (r, gr) in g.chunks_exact(len).enumerate() {
                        for (d, &v) in dx[r * c + start..r * c + start + len].iter_mut().zip(gr) {
                            *d += v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if let Some(dp) = slot(self, grads, p) {
                        for (r, gr) in g.chunks_exact(total).enumerate() {
                            for (d, &v) in dp[r * pc..(r + 1) * pc].iter_mut().zip(&gr[offset..offset + pc]) {
                                *d += v;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            &Op::Sum(x) => {
                if let Some(dx) = slot(self, grads, x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Dot { x, weights } => {
                if let Some(dx) = slot(self, grads, *x) {
                    dx.iter_mut().zip(weights).for_each(|(d, w)| *d += g[0] * w);
                }
            }
            Op::External { x, grad } => {
                if let Some(dx) = slot(self, grads, *x) {
                    dx.iter_mut().zip(grad).for_each(|(d, w)| *d += g[0] * w);
                }
            }
        }
    }
}
