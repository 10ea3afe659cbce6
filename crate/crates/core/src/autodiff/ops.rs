use super::{Graph, NodeId, Op, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output length `ceil(T / stride)`, input zero-padded evenly (extra on the right).
    Same,
    /// No padding: output length `(T - K) / stride + 1`.
    Valid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttentionMask {
    None,
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// `valid[j]` is false for padded keys.
    KeyPadding(Vec<bool>),
}

impl AttentionMask {
    fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            AttentionMask::None => true,
            AttentionMask::Causal => j <= i,
            AttentionMask::KeyPadding(valid) => valid[j],
        }
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b[l * n..(l + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn conv_geometry(t: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = t.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(t);
            Some((out, total / 2))
        }
        Padding::Valid if t >= k => Some(((t - k) / stride + 1, 0)),
        Padding::Valid => None,
    }
}

impl Graph {
    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.requires_grad(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).as_matrix("matmul")?;
        let (k2, n) = self.value(b).as_matrix("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may also match a trailing suffix of `a`'s shape
    /// and is then broadcast over the leading dims.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add", sa, sb));
        }
        let bv = self.value(b).data();
        let n = bv.len();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_exact_mut(n) {
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o += x;
            }
        }
        let shape = sa.to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x * c).collect(),
        };
        let rg = self.requires_grad(a);
        self.push(out, Op::MulScalar(a, c), rg)
    }

    /// `x[T×Cin] ⊛ w[K×Cin×Cout] → [T'×Cout]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
        let (t, cin) = self.value(x).as_matrix("conv1d")?;
        let (k, wcin, cout) = match self.shape(w) {
            &[k, c, o] => (k, c, o),
            other => return Err(mismatch("conv1d", self.shape(x), other)),
        };
        if wcin != cin || stride == 0 {
            return Err(mismatch("conv1d", self.shape(x), self.shape(w)));
        }
        let (t_out, pad_left) = conv_geometry(t, k, stride, padding)
            .ok_or_else(|| mismatch("conv1d", self.shape(x), self.shape(w)))?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; t_out * cout];
        for to in 0..t_out {
            for kk in 0..k {
                let Some(r) = (to * stride + kk).checked_sub(pad_left).filter(|&r| r < t) else {
                    continue;
                };
                matmul_acc(
                    &xv[r * cin..(r + 1) * cin],
                    &wv[kk * cin * cout..(kk + 1) * cin * cout],
                    &mut out[to * cout..(to + 1) * cout],
                    1,
                    cin,
                    cout,
                );
            }
        }
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(
            Tensor::new(vec![t_out, cout], out)?,
            Op::Conv1d {
                x,
                w,
                stride,
                pad_left,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect(),
        };
        let rg = self.requires_grad(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Along the last axis, with max subtraction.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let c = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data.chunks_exact(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&a| (a - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&a| a - lse));
        }
        let out = Tensor {
            shape: v.shape.clone(),
            data,
        };
        let rg = self.requires_grad(x);
        self.push(out, Op::LogSoftmax(x), rg)
    }

    /// Normalizes the last axis, then scales by `gamma` and shifts by `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let c = self.value(x).cols();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(mismatch("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data.chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &a) in row.iter().enumerate() {
                let h = (a - mean) * inv;
                xhat.push(h);
                data.push(g[j] * h + b[j]);
            }
        }
        let out = Tensor {
            shape: xv.shape.clone(),
            data,
        };
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, ids: &[usize], table: NodeId) -> Result<NodeId> {
        let (v, d) = self.value(table).as_matrix("embedding")?;
        if ids.is_empty() {
            return Err(TensorError::Invalid("embedding of an empty sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Invalid(format!("embedding id {bad} >= vocabulary {v}")));
        }
        let t = self.value(table);
        let data = ids.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let rg = self.requires_grad(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `softmax(q·kᵀ/√d + mask)·v`
    pub fn scaled_dot_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: &AttentionMask,
    ) -> Result<NodeId> {
        let (tq, d) = self.value(q).as_matrix("attention")?;
        let (tk, dk) = self.value(k).as_matrix("attention")?;
        let (tv, dv) = self.value(v).as_matrix("attention")?;
        if dk != d {
            return Err(mismatch("attention", self.shape(q), self.shape(k)));
        }
        if tv != tk {
            return Err(mismatch("attention", self.shape(k), self.shape(v)));
        }
        if let AttentionMask::KeyPadding(valid) = mask {
            if valid.len() != tk || !valid.iter().any(|&b| b) {
                return Err(TensorError::Invalid("padding mask must cover keys and keep one".into()));
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; tq * tk];
        for i in 0..tq {
            let qi = &qv[i * d..(i + 1) * d];
            let row = &mut probs[i * tk..(i + 1) * tk];
            let mut max = f64::NEG_INFINITY;
            for (j, p) in row.iter_mut().enumerate() {
                *p = if mask.allows(i, j) {
                    let s: f64 = qi.iter().zip(&kv[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
                    s * scale
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(*p);
            }
            let mut total = 0.0;
            for p in row.iter_mut() {
                *p = (*p - max).exp();
                total += *p;
            }
            row.iter_mut().for_each(|p| *p /= total);
        }
        let mut out = vec![0.0; tq * dv];
        matmul_acc(&probs, vv, &mut out, tq, tk, dv);
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(Tensor::new(vec![tq, dv], out)?, Op::Attention { q, k, v, probs }, rg))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).as_matrix("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::Invalid(format!("slice {start}+{len} of {c} columns")));
        }
        let xv = self.value(x);
        let data = (0..r).flat_map(|i| xv.row(i)[start..start + len].iter().copied()).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let (r, _) = self.value(first).as_matrix("concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).as_matrix("concat_cols")?;
            if pr != r {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(vec![r, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data.iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Scalar `Σ x ⊙ weights` with constant weights.
    pub fn dot(&mut self, x: NodeId, weights: &Tensor) -> Result<NodeId> {
        if self.shape(x) != weights.shape() {
            return Err(mismatch("dot", self.shape(x), weights.shape()));
        }
        let s = self.value(x).data.iter().zip(&weights.data).map(|(a, b)| a * b).sum();
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::Dot {
                x,
                weights: weights.data.clone(),
            },
            rg,
        ))
    }

    /// Scalar node with an externally computed value and gradient w.r.t. `x`.
    pub fn external_loss(&mut self, x: NodeId, value: f64, grad: Tensor) -> Result<NodeId> {
        if self.shape(x) != grad.shape() {
            return Err(mismatch("external_loss", self.shape(x), grad.shape()));
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::scalar(value), Op::External { x, grad: grad.data }, rg))
    }
}
