//! Reverse-mode differentiation over a linear tape of dense `f64` ops.
//!
//! Every op records its inputs; [`Tape::backward`] walks the tape from the
//! loss node back to the leaves. Parameter leaves borrow their values from a
//! [`ParamStore`], so building a graph never copies weights.

use std::collections::HashMap;

use super::activation::{gelu, gelu_grad, sigmoid};
use super::tensor::{matmul, matmul_nt_acc, matmul_t, matmul_tn_acc};
use super::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Reshape(Var),
    PadRows(Var),
    Gather(Var, Vec<Option<usize>>),
    Conv1d(Var, Var),
    MaskedMeanRows(Var, Vec<bool>),
    Sum(Var),
    Mean(Var),
    CrossEntropy(Var, Vec<usize>, Vec<bool>),
    KlGaussian(Var, Var),
    BceWithLogits(Var, f64),
}

struct Node {
    shape: Vec<usize>,
    // `None` for parameter leaves, whose values live in the store.
    value: Option<Vec<f64>>,
    op: Op,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.store.value(*id).data(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        rows_cols(&self.nodes[v.0].shape)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("consistent node")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let shape = self.store.value(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims");
        let out = matmul(self.value(a), self.value(b), m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_t inner dims");
        let out = matmul_t(self.value(a), self.value(b), m, k, n);
        self.push(vec![m, n], out, Op::MatMulT(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "elementwise shapes");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m×n] + b[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.dims(a);
        assert_eq!(self.value(b).len(), n, "add_row width");
        let bv = self.value(b).to_vec();
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|r| r.iter().zip(&bv).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::AddRow(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    /// Elementwise product with a constant (dropout masks, row masks).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        assert_eq!(self.value(a).len(), c.len(), "mul_const shape");
        let out = self.value(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::MulConst(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x >= 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    /// Row softmax; columns with `col_mask[j] == false` get weight 0.
    pub fn softmax_rows(&mut self, a: Var, col_mask: &[bool]) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(col_mask.len(), n, "softmax mask width");
        let x = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(col_mask)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if col_mask[j] {
                    orow[j] = (row[j] - max).exp();
                    total += orow[j];
                }
            }
            orow.iter_mut().for_each(|v| *v /= total);
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                assert_eq!(self.dims(p).0, m, "concat_cols rows");
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(vec![m, n], out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let (_, n) = self.dims(a);
        let out = self.value(a)[i * n..(i + 1) * n].to_vec();
        self.push(vec![1, n], out, Op::Row(a, i))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let n = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert_eq!(self.value(r).len(), n, "stack_rows width");
            out.extend_from_slice(self.value(r));
        }
        self.push(vec![rows.len(), n], out, Op::StackRows(rows.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(a).len());
        let out = self.value(a).to_vec();
        self.push(shape, out, Op::Reshape(a))
    }

    /// Append `extra` zero rows below `a`.
    pub fn pad_rows(&mut self, a: Var, extra: usize) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).to_vec();
        out.resize((m + extra) * n, 0.0);
        self.push(vec![m + extra, n], out, Op::PadRows(a))
    }

    /// Row lookup; `None` yields a zero row that receives no gradient.
    pub fn gather(&mut self, table: Var, indices: &[Option<usize>]) -> Var {
        let (rows, n) = self.dims(table);
        let t = self.value(table);
        let mut out = vec![0.0; indices.len() * n];
        for (i, idx) in indices.iter().enumerate() {
            if let Some(r) = *idx {
                assert!(r < rows, "gather index {r} out of {rows}");
                out[i * n..(i + 1) * n].copy_from_slice(&t[r * n..(r + 1) * n]);
            }
        }
        self.push(vec![indices.len(), n], out, Op::Gather(table, indices.to_vec()))
    }

    /// Valid 1-D convolution: `x[L×D]`, `filters[nf×F×D]` → `[(L−F+1)×nf]`.
    pub fn conv1d(&mut self, x: Var, filters: Var) -> Var {
        let (l, d) = self.dims(x);
        let fs = self.shape(filters).to_vec();
        assert_eq!(fs.len(), 3, "filters must be [nf, F, D]");
        let (nf, fw, fd) = (fs[0], fs[1], fs[2]);
        assert_eq!(fd, d, "filter depth");
        assert!(fw >= 1 && fw <= l, "filter width");
        let out_len = l - fw + 1;
        let xv = self.value(x);
        let wv = self.value(filters);
        let span = fw * d;
        let mut out = vec![0.0; out_len * nf];
        for i in 0..out_len {
            let window = &xv[i * d..i * d + span];
            for f in 0..nf {
                let w = &wv[f * span..(f + 1) * span];
                out[i * nf + f] = window.iter().zip(w).map(|(a, b)| a * b).sum();
            }
        }
        self.push(vec![out_len, nf], out, Op::Conv1d(x, filters))
    }

    /// Mean over rows with `mask[i] == true`, giving `[1×n]`.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(mask.len(), m, "mask length");
        let count = mask.iter().filter(|&&k| k).count();
        assert!(count > 0, "masked mean over empty selection");
        let x = self.value(a);
        let mut out = vec![0.0; n];
        for i in (0..m).filter(|&i| mask[i]) {
            out.iter_mut().zip(&x[i * n..(i + 1) * n]).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|v| *v /= count as f64);
        self.push(vec![1, n], out, Op::MaskedMeanRows(a, mask.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Mean token cross-entropy over rows with `mask[i] == true`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let (m, n) = self.dims(logits);
        assert_eq!(targets.len(), m);
        assert_eq!(mask.len(), m);
        let count = mask.iter().filter(|&&k| k).count();
        assert!(count > 0, "cross-entropy over empty selection");
        let z = self.value(logits);
        let mut total = 0.0;
        for i in (0..m).filter(|&i| mask[i]) {
            let row = &z[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
        }
        self.push(
            vec![1],
            vec![total / count as f64],
            Op::CrossEntropy(logits, targets.to_vec(), mask.to_vec()),
        )
    }

    /// `½ Σ (μ² + e^{lv} − 1 − lv)`, the KL divergence to a standard normal.
    pub fn kl_gaussian(&mut self, mu: Var, logvar: Var) -> Var {
        let kl = super::kl_divergence(self.value(mu), self.value(logvar));
        self.push(vec![1], vec![kl], Op::KlGaussian(mu, logvar))
    }

    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Var {
        let x = self.scalar(logit);
        let loss = x.max(0.0) - x * label + (-x.abs()).exp().ln_1p();
        self.push(vec![1], vec![loss], Op::BceWithLogits(logit, label))
    }

    /// Backpropagate from the scalar `loss`; returns per-parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0; self.value(loss).len()]);
        let mut out = Gradients::new(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let own = || node.value.as_deref().unwrap_or(&[]);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add_to(*id, &g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let bv = self.value(*b);
                    let av = self.value(*a);
                    // dA = g · Bᵀ ; dB = Aᵀ · g
                    matmul_nt_acc(&g, bv, m, n, k, slot(&mut grads, *a, m * k));
                    matmul_tn_acc(av, &g, m, k, n, slot(&mut grads, *b, k * n));
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).0;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // C = A·Bᵀ: dA = g·B ; dB = gᵀ·A
                    let da = matmul(&g, bv, m, n, k);
                    add_into(slot(&mut grads, *a, m * k), &da);
                    matmul_tn_acc(&g, av, m, n, k, slot(&mut grads, *b, n * k));
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    add_into(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    slot(&mut grads, *b, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, v)| *s -= v);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let sa = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        sa[i] += g[i] * bv[i];
                    }
                    let sb = slot(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        sb[i] += g[i] * av[i];
                    }
                }
                Op::AddRow(a, b) => {
                    let n = self.dims(*a).1;
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    let sb = slot(&mut grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(sb, row);
                    }
                }
                Op::Scale(a, c) => {
                    slot(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, v)| *s += c * v);
                }
                Op::AddScalar(a) | Op::Reshape(a) => add_into(slot(&mut grads, *a, g.len()), &g),
                Op::MulConst(a, c) => {
                    let s = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * c[i];
                    }
                }
                Op::Sigmoid(a) => {
                    let y = own();
                    let s = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(a) => {
                    let y = own();
                    let s = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let s = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * gelu_grad(x[i]);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let s = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        s[i] += if x[i] >= 0.0 { g[i] } else { slope * g[i] };
                    }
                }
                Op::Exp(a) => {
                    let y = own();
                    let s = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * y[i];
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (m, n) = self.dims(*a);
                    let y = own();
                    let s = slot(&mut grads, *a, m * n);
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            s[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = rows_cols(&node.shape);
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        let s = slot(&mut grads, p, m * w);
                        for i in 0..m {
                            add_into(&mut s[i * w..(i + 1) * w], &g[i * n + offset..i * n + offset + w]);
                        }
                        offset += w;
                    }
                }
                Op::Row(a, i) => {
                    let (m, n) = self.dims(*a);
                    let s = slot(&mut grads, *a, m * n);
                    add_into(&mut s[i * n..(i + 1) * n], &g);
                }
                Op::StackRows(rows) => {
                    let n = node.shape[1];
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(slot(&mut grads, r, n), &g[i * n..(i + 1) * n]);
                    }
                }
                Op::PadRows(a) => {
                    let len = self.value(*a).len();
                    add_into(slot(&mut grads, *a, len), &g[..len]);
                }
                Op::Gather(table, indices) => {
                    let (rows, n) = self.dims(*table);
                    let s = slot(&mut grads, *table, rows * n);
                    for (i, idx) in indices.iter().enumerate() {
                        if let Some(r) = *idx {
                            add_into(&mut s[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                        }
                    }
                }
                Op::Conv1d(x, filters) => {
                    let (l, d) = self.dims(*x);
                    let fs = self.shape(*filters);
                    let (nf, fw) = (fs[0], fs[1]);
                    let span = fw * d;
                    let out_len = l - fw + 1;
                    let xv = self.value(*x);
                    let wv = self.value(*filters);
                    {
                        let sx = slot(&mut grads, *x, l * d);
                        for i in 0..out_len {
                            for f in 0..nf {
                                let gv = g[i * nf + f];
                                let w = &wv[f * span..(f + 1) * span];
                                sx[i * d..i * d + span]
                                    .iter_mut()
                                    .zip(w)
                                    .for_each(|(s, wv)| *s += gv * wv);
                            }
                        }
                    }
                    let sw = slot(&mut grads, *filters, nf * span);
                    for i in 0..out_len {
                        let window = &xv[i * d..i * d + span];
                        for f in 0..nf {
                            let gv = g[i * nf + f];
                            sw[f * span..(f + 1) * span]
                                .iter_mut()
                                .zip(window)
                                .for_each(|(s, xv)| *s += gv * xv);
                        }
                    }
                }
                Op::MaskedMeanRows(a, mask) => {
                    let (m, n) = self.dims(*a);
                    let count = mask.iter().filter(|&&k| k).count() as f64;
                    let s = slot(&mut grads, *a, m * n);
                    for i in (0..m).filter(|&i| mask[i]) {
                        s[i * n..(i + 1) * n]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(s, v)| *s += v / count);
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    slot(&mut grads, *a, len).iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    let c = g[0] / len as f64;
                    slot(&mut grads, *a, len).iter_mut().for_each(|s| *s += c);
                }
                Op::CrossEntropy(logits, targets, mask) => {
                    let (m, n) = self.dims(*logits);
                    let count = mask.iter().filter(|&&k| k).count() as f64;
                    let z = self.value(*logits);
                    let s = slot(&mut grads, *logits, m * n);
                    let scale = g[0] / count;
                    for i in (0..m).filter(|&i| mask[i]) {
                        let row = &z[i * n..(i + 1) * n];
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..n {
                            let p = (row[j] - max).exp() / total;
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            s[i * n + j] += scale * (p - onehot);
                        }
                    }
                }
                Op::KlGaussian(mu, logvar) => {
                    let muv = self.value(*mu);
                    let lv = self.value(*logvar);
                    {
                        let s = slot(&mut grads, *mu, muv.len());
                        for i in 0..muv.len() {
                            s[i] += g[0] * muv[i];
                        }
                    }
                    let s = slot(&mut grads, *logvar, lv.len());
                    for i in 0..lv.len() {
                        s[i] += g[0] * 0.5 * (lv[i].exp() - 1.0);
                    }
                }
                Op::BceWithLogits(logit, label) => {
                    let x = self.scalar(*logit);
                    slot(&mut grads, *logit, 1)[0] += g[0] * (sigmoid(x) - label);
                }
            }
        }
        out
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one_over_unmasked() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.5, 9.0]]).unwrap());
        let mask = [true, true, false];
        let y = tape.softmax_rows(x, &mask);
        for row in tape.value(y).chunks(3) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn matmul_gradient_matches_hand_result() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = store.add("b", Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let mut tape = Tape::new(&store);
        let (va, vb) = (tape.param(a), tape.param(b));
        let c = tape.matmul(va, vb);
        let loss = tape.sum(c);
        assert_eq!(tape.scalar(loss), 11.0);
        let g = tape.backward(loss);
        assert_eq!(g.get(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(g.get(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn repeated_param_use_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0));
        let mut tape = Tape::new(&store);
        let v1 = tape.param(w);
        let v2 = tape.param(w);
        assert_eq!(v1, v2);
        let sq = tape.mul(v1, v2);
        let loss = tape.sum(sq);
        let g = tape.backward(loss);
        assert_eq!(g.get(w).unwrap(), &[6.0]);
    }
}
