//! Reverse-mode differentiation over a recorded arena of tensor operations.
//!
//! Nodes are appended in evaluation order, so every node's inputs have smaller
//! indices and walking the arena backwards is a valid reverse topological
//! order. A graph is built per batch and dropped afterwards.

use std::rc::Rc;

use super::kernels::gemm;
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_trans: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, factor: f64 },
    Relu { a: Var },
    Sigmoid { a: Var },
    MaskFill { a: Var, blocked: Rc<[bool]> },
    Softmax { a: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Dropout { a: Var, keep_scale: Vec<f64> },
    Gather { table: Var, indices: Vec<Option<usize>> },
    Block { a: Var, row0: usize, col0: usize },
    Assemble { parts: Vec<(Var, usize, usize)> },
    Sum { a: Var },
    Bce { pred: Var, coeff: Vec<f64> },
}

/// Recorded computation. Values are immutable once a node is created.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Gradient of the last `backward` output with respect to `v`. Nodes that
    /// the output does not depend on report a zero gradient.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if !self.requires_grad[v.0] || !self.backward_done {
            return None;
        }
        let shape = self.values[v.0].shape().to_vec();
        let data = match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.values[v.0].numel()],
        };
        Some(Tensor::new(shape, data).expect("gradient matches value shape"))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let rg = inputs.iter().any(|v| self.requires_grad[v.0]);
        Ok(self.push(value, op, rg))
    }

    fn matrix_dims(&self, v: Var) -> (usize, usize) {
        let t = &self.values[v.0];
        (t.rows(), t.cols())
    }

    /// `a · b` for `a: [m×k]`, `b: [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if b_trans { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.values[a.0].data(),
            false,
            self.values[b.0].data(),
            b_trans,
            &mut out,
            false,
        );
        let value = Tensor::matrix(m, n, out)?;
        self.push_checked("matmul", value, Op::MatMul { a, b, b_trans }, &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("add", value, Op::Add { a, b }, &[a, b])
    }

    /// Sum of one or more same-shaped nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all needs at least one term".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("mul", value, Op::Mul { a, b }, &[a, b])
    }

    /// Adds `bias` (with as many entries as `a` has columns) to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.values[a.0].cols();
        if self.values[bias.0].numel() != cols {
            return Err(Error::shape("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.values[bias.0].data();
        let mut data = self.values[a.0].data().to_vec();
        for row in data.chunks_mut(cols) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("add_row", value, Op::AddRow { a, bias }, &[a, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("scale", value, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("relu", value, Op::Relu { a }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("sigmoid", value, Op::Sigmoid { a }, &[a])
    }

    /// Writes `-inf` wherever `blocked` is set. The result is the only kind of
    /// node allowed to hold non-finite entries and is meant to feed
    /// [`Graph::softmax`].
    pub fn mask_fill(&mut self, a: Var, blocked: Rc<[bool]>) -> Result<Var> {
        if blocked.len() != self.values[a.0].numel() {
            return Err(Error::shape("mask_fill", self.shape(a), &[blocked.len()]));
        }
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(blocked.iter())
            .map(|(&x, &b)| if b { f64::NEG_INFINITY } else { x })
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.requires_grad[a.0];
        Ok(self.push(value, Op::MaskFill { a, blocked }, rg))
    }

    /// Softmax along `axis`, stabilised by subtracting the slice maximum.
    /// A slice that is entirely `-inf` produces all zeros.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Validation(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.values[a.0].data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |t: usize| base + t * inner;
                let max = (0..len).map(|t| x[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for t in 0..len {
                    let e = (x[idx(t)] - max).exp();
                    y[idx(t)] = e;
                    total += e;
                }
                for t in 0..len {
                    y[idx(t)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, y)?;
        self.push_checked("softmax", value, Op::Softmax { a, outer, len, inner }, &[a])
    }

    /// Normalises each row (last dimension) to zero mean and unit variance,
    /// then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let cols = self.values[x.0].cols();
        if self.values[gamma.0].numel() != cols || self.values[beta.0].numel() != cols {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let rows = self.values[x.0].rows();
        let xs = self.values[x.0].data();
        let g = self.values[gamma.0].data();
        let b = self.values[beta.0].data();
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        self.push_checked("layer_norm", value, op, &[x, gamma, beta])
    }

    /// Inverted dropout. Identity (returns `a` itself) outside training or at
    /// rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut RngStream, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Validation(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let keep_scale: Vec<f64> = (0..self.values[a.0].numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(&keep_scale)
            .map(|(x, s)| x * s)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push_checked("dropout", value, Op::Dropout { a, keep_scale }, &[a])
    }

    /// Row lookup: output row `i` is `table[indices[i]]`, or zeros for `None`.
    pub fn gather(&mut self, table: Var, indices: Vec<Option<usize>>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(table);
        if indices.is_empty() {
            return Err(Error::Validation("gather with no indices".into()));
        }
        let t = self.values[table.0].data();
        let mut out = vec![0.0; indices.len() * cols];
        for (i, idx) in indices.iter().enumerate() {
            if let Some(r) = *idx {
                if r >= rows {
                    return Err(Error::Validation(format!(
                        "row index {r} out of range for table with {rows} rows"
                    )));
                }
                out[i * cols..(i + 1) * cols].copy_from_slice(&t[r * cols..(r + 1) * cols]);
            }
        }
        let value = Tensor::matrix(indices.len(), cols, out)?;
        self.push_checked("gather", value, Op::Gather { table, indices }, &[table])
    }

    /// Sub-matrix `a[row0..row0+rows, col0..col0+cols]`.
    pub fn block(&mut self, a: Var, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(a);
        if rows == 0 || cols == 0 || row0 + rows > r || col0 + cols > c {
            return Err(Error::shape("block", &[r, c], &[row0, rows, col0, cols]));
        }
        let src = self.values[a.0].data();
        let mut out = Vec::with_capacity(rows * cols);
        for i in row0..row0 + rows {
            out.extend_from_slice(&src[i * c + col0..i * c + col0 + cols]);
        }
        let value = Tensor::matrix(rows, cols, out)?;
        self.push_checked("block", value, Op::Block { a, row0, col0 }, &[a])
    }

    /// Places each part at its `(row, col)` offset in a zero `[rows×cols]`
    /// matrix. Parts must not overlap.
    pub fn assemble(&mut self, rows: usize, cols: usize, parts: Vec<(Var, usize, usize)>) -> Result<Var> {
        let mut out = vec![0.0; rows * cols];
        let mut covered = vec![false; rows * cols];
        for &(p, r0, c0) in &parts {
            let (pr, pc) = self.matrix_dims(p);
            if r0 + pr > rows || c0 + pc > cols {
                return Err(Error::shape("assemble", &[rows, cols], &[r0, pr, c0, pc]));
            }
            let src = self.values[p.0].data();
            for i in 0..pr {
                for j in 0..pc {
                    let at = (r0 + i) * cols + c0 + j;
                    if covered[at] {
                        return Err(Error::Contract("assemble parts overlap".into()));
                    }
                    covered[at] = true;
                    out[at] = src[i * pc + j];
                }
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        let inputs: Vec<Var> = parts.iter().map(|p| p.0).collect();
        self.push_checked("assemble", value, Op::Assemble { parts }, &inputs)
    }

    /// Stacks same-width matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.values[p.0].cols(),
            None => return Err(Error::Contract("concat_rows needs at least one part".into())),
        };
        let mut placed = Vec::with_capacity(parts.len());
        let mut row = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p);
            if c != cols {
                return Err(Error::shape("concat_rows", &[row, cols], &[r, c]));
            }
            placed.push((p, row, 0));
            row += r;
        }
        self.assemble(row, cols, placed)
    }

    /// Stacks same-height matrices horizontally.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.values[p.0].rows(),
            None => return Err(Error::Contract("concat_cols needs at least one part".into())),
        };
        let mut placed = Vec::with_capacity(parts.len());
        let mut col = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p);
            if r != rows {
                return Err(Error::shape("concat_cols", &[rows, col], &[r, c]));
            }
            placed.push((p, 0, col));
            col += c;
        }
        self.assemble(rows, col, placed)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.values[a.0].data().iter().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// Weighted mean binary cross-entropy of probabilities `pred` against
    /// `targets`; positions with zero weight are excluded. Logs are clamped to
    /// `[eps, 1 - eps]`, and clamped positions pass no gradient.
    pub fn bce(&mut self, pred: Var, targets: &[f64], weights: &[f64], eps: f64) -> Result<Var> {
        let n = self.values[pred.0].numel();
        if targets.len() != n || weights.len() != n {
            return Err(Error::shape("bce", self.shape(pred), &[targets.len(), weights.len()]));
        }
        let total_weight: f64 = weights.iter().sum();
        if total_weight <= 0.0 {
            return Err(Error::Validation("loss mask selects no positions".into()));
        }
        let p = self.values[pred.0].data();
        let mut loss = 0.0;
        let mut coeff = vec![0.0; n];
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let (y, w) = (targets[i], weights[i]);
            let pc = p[i].clamp(eps, 1.0 - eps);
            loss += w * -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
            if p[i] > eps && p[i] < 1.0 - eps {
                coeff[i] = w * (-y / pc + (1.0 - y) / (1.0 - pc)) / total_weight;
            }
        }
        let value = Tensor::scalar(loss / total_weight);
        self.push_checked("bce", value, Op::Bce { pred, coeff }, &[pred])
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    /// Back-propagates from the scalar `output` into every node that
    /// requires a gradient.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        if !self.values[output.0].is_scalar() {
            return Err(Error::Contract(format!(
                "backward seed must be scalar, got shape {:?}",
                self.shape(output)
            )));
        }
        self.backward_done = true;
        if !self.requires_grad[output.0] {
            return Ok(());
        }
        self.grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let values = &self.values;
        let rg = &self.requires_grad;
        let grads = &mut self.grads;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, rg, values, $v)
            };
        }
        let dims = |v: Var| (values[v.0].rows(), values[v.0].cols());
        match &self.ops[i] {
            Op::Leaf => {}
            &Op::MatMul { a, b, b_trans } => {
                let (m, k) = dims(a);
                let n = values[i].cols();
                // dA = dC · op(B)ᵀ
                if rg[a.0] {
                    let bv = values[b.0].data();
                    let ga = acc!(a).unwrap();
                    gemm(m, n, k, g, false, bv, !b_trans, ga, true);
                }
                // dB = Aᵀ · dC, or (dC)ᵀ · A when B was used transposed.
                if rg[b.0] {
                    let av = values[a.0].data();
                    let gb = acc!(b).unwrap();
                    if b_trans {
                        gemm(n, m, k, g, true, av, false, gb, true);
                    } else {
                        gemm(k, m, n, av, true, g, false, gb, true);
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(ga) = acc!(v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::Mul { a, b } => {
                let av = values[a.0].data();
                let bv = values[b.0].data();
                if let Some(ga) = acc!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                }
                if let Some(gb) = acc!(b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            &Op::AddRow { a, bias } => {
                if let Some(ga) = acc!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = acc!(bias) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::Scale { a, factor } => {
                if let Some(ga) = acc!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += factor * y);
                }
            }
            &Op::Relu { a } => {
                let x = values[a.0].data();
                if let Some(ga) = acc!(a) {
                    for j in 0..g.len() {
                        if x[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            &Op::Sigmoid { a } => {
                let y = values[i].data();
                if let Some(ga) = acc!(a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::MaskFill { a, blocked } => {
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        if !blocked[j] {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            &Op::Softmax { a, outer, len, inner } => {
                let y = values[i].data();
                if let Some(ga) = acc!(a) {
                    for o in 0..outer {
                        for k in 0..inner {
                            let base = o * len * inner + k;
                            let dot: f64 = (0..len)
                                .map(|t| g[base + t * inner] * y[base + t * inner])
                                .sum();
                            for t in 0..len {
                                let j = base + t * inner;
                                ga[j] += y[j] * (g[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = values[x.0].cols();
                let gv = values[gamma.0].data();
                if let Some(gg) = acc!(*gamma) {
                    for (row_g, row_h) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            gg[c] += row_g[c] * row_h[c];
                        }
                    }
                }
                if let Some(gb) = acc!(*beta) {
                    for row_g in g.chunks(cols) {
                        gb.iter_mut().zip(row_g).for_each(|(s, y)| *s += y);
                    }
                }
                if let Some(gx) = acc!(*x) {
                    for (r, (row_g, row_h)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            let d = row_g[c] * gv[c];
                            mean_d += d;
                            mean_dh += d * row_h[c];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            let d = row_g[c] * gv[c];
                            out[c] += rstd[r] * (d - mean_d - row_h[c] * mean_dh);
                        }
                    }
                }
            }
            Op::Dropout { a, keep_scale } => {
                if let Some(ga) = acc!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * keep_scale[j];
                    }
                }
            }
            Op::Gather { table, indices } => {
                let cols = values[table.0].cols();
                if let Some(gt) = acc!(*table) {
                    for (k, idx) in indices.iter().enumerate() {
                        if let Some(r) = *idx {
                            let dst = &mut gt[r * cols..(r + 1) * cols];
                            dst.iter_mut()
                                .zip(&g[k * cols..(k + 1) * cols])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            &Op::Block { a, row0, col0 } => {
                let (rows, cols) = (values[i].rows(), values[i].cols());
                let src_cols = values[a.0].cols();
                if let Some(ga) = acc!(a) {
                    for r in 0..rows {
                        let dst = &mut ga[(row0 + r) * src_cols + col0..][..cols];
                        dst.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Assemble { parts } => {
                let cols = values[i].cols();
                for &(p, r0, c0) in parts {
                    let (pr, pc) = dims(p);
                    if let Some(gp) = acc!(p) {
                        for r in 0..pr {
                            let src = &g[(r0 + r) * cols + c0..][..pc];
                            gp[r * pc..(r + 1) * pc]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            &Op::Sum { a } => {
                if let Some(ga) = acc!(a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Bce { pred, coeff } => {
                if let Some(gp) = acc!(*pred) {
                    for j in 0..coeff.len() {
                        gp[j] += g[0] * coeff[j];
                    }
                }
            }
        }
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    rg: &[bool],
    values: &[Tensor],
    v: Var,
) -> Option<&'a mut [f64]> {
    if !rg[v.0] {
        return None;
    }
    let n = values[v.0].numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
