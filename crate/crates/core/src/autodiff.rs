//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied during a forward pass in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the tape once in reverse, so each node is visited exactly once and
//! gradient accumulation order is fixed by the forward program.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, gemm_nn, gemm_nt, gemm_tn, COSINE_EPS};
use crate::tensor::{Scalar, Tensor};

/// Index of a learnable tensor in a [`crate::params::ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    CosineMatrix(Var, Var),
    Pick {
        x: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    checked: bool,
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    params: BTreeMap<ParamId, Tensor<F>>,
    nodes: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient for a parameter, summed over every leaf that referenced it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor<F>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<F>> {
        self.params
    }

    /// Gradient with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    /// A checked graph: every op verifies its output is finite.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn unchecked() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn leaf(&mut self, value: Tensor<F>, param: Option<ParamId>, requires_grad: bool) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf(param),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A learnable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor<F>) -> Result<Var> {
        self.leaf(value.clone(), Some(id), true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, None, false)
    }

    /// A non-parameter leaf that still receives a gradient; used by checks.
    pub fn input(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, None, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_nt(self.value(a), self.value(b))?;
        self.push("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2("add_row", x)?;
        let b = self.value(bias);
        if b.numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("bias length {} for width {n}", b.numel()),
            ));
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v = *v + bv;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            "add_row",
            Tensor::from_parts(shape, out),
            Op::AddRow(x, bias),
            &[x, bias],
        )
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(x))?;
        self.push("softmax_rows", out, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2("layer_norm", x)?;
        if n < 2 {
            return Err(Error::shape("layer_norm", "needs at least two columns"));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        if g.numel() != n || b.numel() != n {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/bias length {}/{} for width {n}", g.numel(), b.numel()),
            ));
        }
        let (xhat, rstd) = kernels::normalize_rows(self.value(x).data(), n);
        let mut out = xhat.clone();
        for row in out.chunks_mut(n) {
            for ((v, &gv), &bv) in row.iter_mut().zip(g.data()).zip(b.data()) {
                *v = *v * gv + bv;
            }
        }
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        self.push("layer_norm", Tensor::from_parts(shape, out), op, &[x, gain, bias])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2("slice_cols", x)?;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {n}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        self.push(
            "slice_cols",
            Tensor::from_parts(vec![m, len], out),
            Op::SliceCols { x, start },
            &[x],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let m = self.dims2("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2("concat_cols", p)?;
            if pm != m {
                return Err(Error::shape("concat_cols", format!("row counts {m} and {pm}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.dims2("slice_rows", x)?;
        let out = self.value(x).slice_rows(start, len)?;
        self.push("slice_rows", out, Op::SliceRows { x, start }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let n = self.dims2("concat_rows", parts[0])?.1;
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.dims2("concat_rows", p)?;
            if pn != n {
                return Err(Error::shape("concat_rows", format!("row widths {n} and {pn}")));
            }
            rows += pm;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            "concat_rows",
            Tensor::from_parts(vec![rows, n], out),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// `out[i, j] = cos(a_i, b_j)` over rows.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::cosine_matrix(self.value(a), self.value(b))?;
        self.push("cosine_matrix", out, Op::CosineMatrix(a, b), &[a, b])
    }

    /// Cosine similarity of two equal-length vectors, as a scalar node.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let nu = self.value(u).numel();
        let nv = self.value(v).numel();
        if nu != nv {
            return Err(Error::shape("cosine", format!("lengths {nu} and {nv}")));
        }
        let u2 = self.reshape(u, &[1, nu])?;
        let v2 = self.reshape(v, &[1, nv])?;
        let m = self.cosine_matrix(u2, v2)?;
        self.reshape(m, &[1])
    }

    /// Gathers flat-indexed entries into a vector.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if indices.is_empty() {
            return Err(Error::shape("pick", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.numel()) {
            return Err(Error::shape("pick", format!("index {bad} out of {}", src.numel())));
        }
        let out = indices.iter().map(|&i| src.data()[i]).collect();
        let op = Op::Pick {
            x,
            indices: indices.to_vec(),
        };
        self.push("pick", Tensor::from_parts(vec![indices.len()], out), op, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, F::one() / F::of(n as f64))
    }

    /// Sums a list of same-shaped nodes.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| Error::shape("add_all", "no inputs"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Mean softmax cross-entropy over the rows of `logits[N×C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} outside 0..{c}")));
        }
        let probs = kernels::softmax_rows(self.value(logits))?.to_vec();
        let mut loss = F::zero();
        for (r, &l) in labels.iter().enumerate() {
            // log-sum-exp form avoids log(0) when a probability underflows
            let row = self.value(logits).row(r);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            loss = loss + lse - row[l];
        }
        loss = loss / F::of(n as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);
        let mut params: BTreeMap<ParamId, Tensor<F>> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }

        let nodes = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::from_parts(n.value.shape().to_vec(), d)))
            .collect();
        Ok(Gradients { params, nodes })
    }

    fn propagate(
        &self,
        node: &Node<F>,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
        params: &mut BTreeMap<ParamId, Tensor<F>>,
    ) {
        let nodes = &self.nodes;
        // Runs `f` on the gradient buffer of `v`, allocating it on first use.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![F::zero(); nodes[v.0].value.numel()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        let dims = |v: Var| {
            let s = nodes[v.0].value.shape();
            (s[0], s[1..].iter().product::<usize>())
        };

        match &node.op {
            Op::Leaf(param) => {
                if let Some(id) = param {
                    let shape = node.value.shape().to_vec();
                    match params.get_mut(id) {
                        Some(t) => {
                            let summed = t.data().iter().zip(g).map(|(&a, &b)| a + b).collect();
                            *t = Tensor::from_parts(shape, summed);
                        }
                        None => {
                            params.insert(*id, Tensor::from_parts(shape, g.to_vec()));
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).1;
                acc(*a, &mut |da| gemm_nt(g, val(*b), da, m, n, k));
                acc(*b, &mut |db| gemm_tn(val(*a), g, db, m, k, n));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).0;
                acc(*a, &mut |da| gemm_nn(g, val(*b), da, m, n, k));
                acc(*b, &mut |db| gemm_tn(g, val(*a), db, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(o, &v)| *o = *o - v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((o, &gv), &y) in d.iter_mut().zip(g).zip(vb) {
                        *o = *o + gv * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((o, &gv), &x) in d.iter_mut().zip(g).zip(va) {
                        *o = *o + gv * x;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let n = dims(*x).1;
                acc(*x, &mut |d| add_into(d, g));
                acc(*bias, &mut |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(o, &v)| *o = *o + v * *c));
            }
            Op::Gelu(x) => {
                let vx = val(*x);
                acc(*x, &mut |d| {
                    for ((o, &gv), &xv) in d.iter_mut().zip(g).zip(vx) {
                        *o = *o + gv * kernels::gelu_grad(xv);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = dims(*x).1;
                acc(*x, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: F = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o = *o + yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = dims(*x).1;
                let gv = val(*gain);
                acc(*gain, &mut |d| {
                    for (grow, xrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((o, &a), &b) in d.iter_mut().zip(grow).zip(xrow) {
                            *o = *o + a * b;
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for grow in g.chunks(n) {
                        add_into(d, grow);
                    }
                });
                let nf = F::of(n as f64);
                acc(*x, &mut |d| {
                    for (r, (drow, grow)) in d.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        let xrow = &xhat[r * n..(r + 1) * n];
                        let mut sum_dx = F::zero();
                        let mut sum_dx_xhat = F::zero();
                        for c in 0..n {
                            let dxh = grow[c] * gv[c];
                            sum_dx = sum_dx + dxh;
                            sum_dx_xhat = sum_dx_xhat + dxh * xrow[c];
                        }
                        let k = rstd[r] / nf;
                        for c in 0..n {
                            let dxh = grow[c] * gv[c];
                            drow[c] = drow[c] + k * (nf * dxh - sum_dx - xrow[c] * sum_dx_xhat);
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let n = dims(*x).1;
                let len = node.value.shape()[1];
                acc(*x, &mut |d| {
                    for (drow, grow) in d.chunks_mut(n).zip(g.chunks(len)) {
                        add_into(&mut drow[*start..*start + len], grow);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = dims(p).1;
                    acc(p, &mut |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                let n = dims(*x).1;
                acc(*x, &mut |d| add_into(&mut d[start * n..start * n + g.len()], g));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    acc(p, &mut |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |d| add_into(d, g)),
            Op::CosineMatrix(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).0;
                let (va, vb) = (val(*a), val(*b));
                let norm = |row: &[F]| row.iter().map(|&v| v * v).sum::<F>().sqrt();
                let na: Vec<F> = va.chunks(k).map(norm).collect();
                let nb: Vec<F> = vb.chunks(k).map(norm).collect();
                let eps = F::of(COSINE_EPS);
                // For c = u·v / D with D = max(|u||v|, eps):
                //   dc/du = v / D - (u·v) |v| u / (|u| D²) above the floor,
                //   dc/du = v / eps below it.
                let mut da = vec![F::zero(); m * k];
                let mut db = vec![F::zero(); n * k];
                for i in 0..m {
                    let u = &va[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == F::zero() {
                            continue;
                        }
                        let v = &vb[j * k..(j + 1) * k];
                        let dot: F = u.iter().zip(v).map(|(&x, &y)| x * y).sum();
                        let prod = na[i] * nb[j];
                        let (denom, cu, cv) = if prod > eps {
                            let d2 = prod * prod;
                            (prod, gij * dot * nb[j] / (na[i] * d2), gij * dot * na[i] / (nb[j] * d2))
                        } else {
                            (eps, F::zero(), F::zero())
                        };
                        let inv = gij / denom;
                        let da_row = &mut da[i * k..(i + 1) * k];
                        for c in 0..k {
                            da_row[c] = da_row[c] + inv * v[c] - cu * u[c];
                        }
                        let db_row = &mut db[j * k..(j + 1) * k];
                        for c in 0..k {
                            db_row[c] = db_row[c] + inv * u[c] - cv * v[c];
                        }
                    }
                }
                acc(*a, &mut |d| add_into(d, &da));
                acc(*b, &mut |d| add_into(d, &db));
            }
            Op::Pick { x, indices } => {
                acc(*x, &mut |d| {
                    for (&i, &gv) in indices.iter().zip(g) {
                        d[i] = d[i] + gv;
                    }
                });
            }
            Op::Sum(x) => {
                let s = g[0];
                acc(*x, &mut |d| d.iter_mut().for_each(|o| *o = *o + s));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (rows, c) = dims(*logits);
                let k = g[0] / F::of(rows as f64);
                acc(*logits, &mut |d| {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == l { F::one() } else { F::zero() };
                            d[r * c + j] = d[r * c + j] + k * (probs[r * c + j] - target);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}
