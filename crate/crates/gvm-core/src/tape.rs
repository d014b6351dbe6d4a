//! Reverse-mode differentiation on a linear tape.
//!
//! Every differentiable operation appends a node holding its output and
//! the ids of its inputs. `backward` walks the nodes in exact reverse
//! execution order, applying each operation's vector-Jacobian product and
//! accumulating gradients, then writes the gradients of all bound
//! parameters back into the [`Params`] store.
//!
//! All tape values are row-major matrices; scalars are [1,1]. Values are
//! never mutated after creation, which is what makes the reverse sweep
//! correct. A tape is single use: build, backward once, drop.

use crate::error::{Error, Result};
use crate::kernels;
use crate::math;
use crate::params::{ParamId, Params};
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

const LN_EPS: f64 = 1e-5;
const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Boolean attention mask; `true` keeps a (query, key) pair.
#[derive(Clone, Debug)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::BadShape { expected: rows * cols, got: keep.len() });
        }
        Ok(Mask { rows, cols, keep })
    }

    /// Lower-triangular mask: position i attends to positions <= i.
    pub fn causal(n: usize) -> Self {
        let mut keep = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                keep[i * n + j] = true;
            }
        }
        Mask { rows: n, cols: n, keep }
    }

    #[inline]
    pub fn keeps(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

enum Op {
    Leaf,
    #[allow(dead_code)] // id recorded for inspection; harvest uses param_leaves
    Param(ParamId),
    Matmul { a: ValueId, b: ValueId },
    Transpose { x: ValueId },
    Add { a: ValueId, b: ValueId },
    AddRow { x: ValueId, row: ValueId },
    Affine { x: ValueId, mul: f64 },
    Hadamard { a: ValueId, b: ValueId },
    SoftmaxRows {
        x: ValueId,
        // Masked outputs are exactly zero, so the VJP needs no mask.
        #[allow(dead_code)]
        mask: Option<Rc<Mask>>,
    },
    LayerNorm { x: ValueId, gain: ValueId, bias: ValueId },
    Gelu { x: ValueId },
    CrossEntropyRows { logits: ValueId, targets: Rc<Vec<usize>> },
    GatherRows { table: ValueId, ids: Rc<Vec<usize>> },
    ConcatRows { parts: Vec<ValueId> },
    ConcatCols { parts: Vec<ValueId> },
    SliceRows { x: ValueId, start: usize },
    SliceCols { x: ValueId, start: usize },
    SumRows { x: ValueId },
    SumAll { x: ValueId },
    Abs { x: ValueId },
    Diag { x: ValueId },
    L2NormalizeRows { x: ValueId },
    NormalizeRowsSoft { x: ValueId, eps: f64 },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: Vec<(ParamId, ValueId)>,
    bound: BTreeMap<ParamId, ValueId>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Copy a tape value out as a matrix tensor.
    pub fn to_tensor(&self, id: ValueId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::matrix(n.rows, n.cols, n.data.clone()).expect("node shape is consistent")
    }

    /// Ids of every softmax output on the tape, in execution order.
    /// Lets tests verify row-stochasticity of all attention sites in a
    /// real forward pass without threading probes through the models.
    pub fn softmax_nodes(&self) -> Vec<ValueId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::SoftmaxRows { .. }))
            .map(|(i, _)| ValueId(i))
            .collect()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f64>, needs_grad: bool) -> Result<ValueId> {
        debug_assert_eq!(data.len(), rows * cols);
        #[cfg(debug_assertions)]
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "tape op output" });
        }
        self.nodes.push(Node { op, rows, cols, data, needs_grad });
        Ok(ValueId(self.nodes.len() - 1))
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Non-differentiable input value.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<ValueId> {
        if data.len() != rows * cols {
            return Err(Error::BadShape { expected: rows * cols, got: data.len() });
        }
        self.push(Op::Leaf, rows, cols, data, false)
    }

    /// Leaf from a tensor, folding leading axes into rows.
    pub fn leaf_tensor(&mut self, t: &Tensor) -> Result<ValueId> {
        let (rows, cols, data) = t.as_rows();
        self.leaf(rows, cols, data.to_vec())
    }

    /// Bind a parameter; its gradient is harvested by `backward`.
    /// Binding the same parameter twice returns the same id so gradient
    /// accumulation sees one leaf.
    pub fn param(&mut self, params: &Params, id: ParamId) -> ValueId {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let (rows, cols) = params.shape(id);
        let data = params.data(id).to_vec();
        let v = self
            .push(Op::Param(id), rows, cols, data, true)
            .expect("parameter data is validated at creation");
        self.bound.insert(id, v);
        self.param_leaves.push((id, v));
        v
    }

    // ── Operations ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::ShapeMismatch { op: "matmul", left: (m, ka), right: (kb, n) });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nn(self.value(a), self.value(b), &mut out, m, ka, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Matmul { a, b }, m, n, out, ng)
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; r * c];
        kernels::transpose(self.value(x), &mut out, r, c);
        let ng = self.needs(x);
        self.push(Op::Transpose { x }, c, r, out, ng)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::ShapeMismatch { op: "add", left: (ra, ca), right: (rb, cb) });
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b }, ra, ca, out, ng)
    }

    /// Broadcast-add a [1,c] row to every row of x [r,c].
    pub fn add_row(&mut self, x: ValueId, row: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(Error::ShapeMismatch { op: "add_row", left: (r, c), right: (rr, rc) });
        }
        let mut out = Vec::with_capacity(r * c);
        for chunk in self.nodes[x.0].data.chunks_exact(c) {
            for (a, b) in chunk.iter().zip(&self.nodes[row.0].data) {
                out.push(a + b);
            }
        }
        let ng = self.needs(x) || self.needs(row);
        self.push(Op::AddRow { x, row }, r, c, out, ng)
    }

    /// Elementwise mul * x + add.
    pub fn affine(&mut self, x: ValueId, mul: f64, add: f64) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| mul * v + add).collect();
        let ng = self.needs(x);
        self.push(Op::Affine { x, mul }, r, c, out, ng)
    }

    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::ShapeMismatch { op: "hadamard", left: (ra, ca), right: (rb, cb) });
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Hadamard { a, b }, ra, ca, out, ng)
    }

    /// Row-wise softmax, stabilized by row-max subtraction. Masked-out
    /// entries come out exactly 0.0, so masked positions cannot leak into
    /// downstream sums even at the bit level.
    pub fn softmax_rows(&mut self, x: ValueId, mask: Option<Rc<Mask>>) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        if let Some(m) = &mask {
            if (m.rows(), m.cols()) != (r, c) {
                return Err(Error::ShapeMismatch {
                    op: "softmax mask",
                    left: (r, c),
                    right: (m.rows(), m.cols()),
                });
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if mask.as_ref().is_none_or(|m| m.keeps(i, j)) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: i });
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if mask.as_ref().is_none_or(|m| m.keeps(i, j)) {
                    let e = math::exp(v - max);
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let ng = self.needs(x);
        self.push(Op::SoftmaxRows { x, mask }, r, c, out, ng)
    }

    /// Per-row normalization to zero mean and unit variance (epsilon
    /// inside the square root), then elementwise gain and bias.
    pub fn layer_norm(&mut self, x: ValueId, gain: ValueId, bias: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        for (name, id) in [("layer_norm gain", gain), ("layer_norm bias", bias)] {
            let s = self.shape(id);
            if s != (1, c) {
                return Err(Error::ShapeMismatch { op: name, left: (r, c), right: s });
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / math::sqrt(var + LN_EPS);
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                out[i * c + j] = xhat * self.nodes[gain.0].data[j] + self.nodes[bias.0].data[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(Op::LayerNorm { x, gain, bias }, r, c, out, ng)
    }

    /// Gaussian error linear unit (tanh form), smooth everywhere.
    pub fn gelu(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + math::tanh(GELU_C0 * (v + GELU_C1 * v * v * v))))
            .collect();
        let ng = self.needs(x);
        self.push(Op::Gelu { x }, r, c, out, ng)
    }

    /// Per-row -log softmax(logits)[target], log-sum-exp stabilized.
    /// Output is a [rows, 1] column of losses.
    pub fn cross_entropy_rows(&mut self, logits: ValueId, targets: &[usize]) -> Result<ValueId> {
        let (r, v) = self.shape(logits);
        if targets.len() != r {
            return Err(Error::BadShape { expected: r, got: targets.len() });
        }
        let mut out = vec![0.0; r];
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::IndexOutOfRange { what: "target class", index: t, bound: v });
            }
            let row = &self.nodes[logits.0].data[i * v..(i + 1) * v];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|&x| math::exp(x - max)).sum();
            out[i] = max + math::ln(sum) - row[t];
        }
        let ng = self.needs(logits);
        let targets = Rc::new(targets.to_vec());
        self.push(Op::CrossEntropyRows { logits, targets }, r, 1, out, ng)
    }

    /// Select rows of a table by id (embedding lookup). Backward is a
    /// scatter-add into the table.
    pub fn gather_rows(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        let (rows, cols) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange { what: "embedding id", index: id, bound: rows });
            }
            out.extend_from_slice(&self.nodes[table.0].data[id * cols..(id + 1) * cols]);
        }
        let ng = self.needs(table);
        let n = ids.len();
        let ids = Rc::new(ids.to_vec());
        self.push(Op::GatherRows { table, ids }, n, cols, out, ng)
    }

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::invalid_config("concat_rows needs at least one part"));
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(Error::ShapeMismatch { op: "concat_rows", left: (rows, c), right: (r, pc) });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows { parts: parts.to_vec() }, rows, c, out, ng)
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::invalid_config("concat_cols needs at least one part"));
        }
        let (r, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(Error::ShapeMismatch { op: "concat_cols", left: (r, cols), right: (pr, pc) });
            }
            cols += pc;
        }
        let mut out = vec![0.0; r * cols];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = self.shape(p);
            for i in 0..r {
                out[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&self.nodes[p.0].data[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols { parts: parts.to_vec() }, r, cols, out, ng)
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        if start + len > r {
            return Err(Error::IndexOutOfRange { what: "row slice end", index: start + len, bound: r });
        }
        let out = self.nodes[x.0].data[start * c..(start + len) * c].to_vec();
        let ng = self.needs(x);
        self.push(Op::SliceRows { x, start }, len, c, out, ng)
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(Error::IndexOutOfRange { what: "col slice end", index: start + len, bound: c });
        }
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len]
                .copy_from_slice(&self.nodes[x.0].data[i * c + start..i * c + start + len]);
        }
        let ng = self.needs(x);
        self.push(Op::SliceCols { x, start }, r, len, out, ng)
    }

    /// Column-wise sum: [r,c] -> [1,c].
    pub fn sum_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (_, c) = self.shape(x);
        let mut out = vec![0.0; c];
        for row in self.nodes[x.0].data.chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let ng = self.needs(x);
        self.push(Op::SumRows { x }, 1, c, out, ng)
    }

    /// Full reduction: [r,c] -> [1,1].
    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        let total: f64 = self.value(x).iter().sum();
        let ng = self.needs(x);
        self.push(Op::SumAll { x }, 1, 1, vec![total], ng)
    }

    pub fn abs(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| math::abs(v)).collect();
        let ng = self.needs(x);
        self.push(Op::Abs { x }, r, c, out, ng)
    }

    /// Main diagonal of a square matrix as a [n,1] column.
    pub fn diag(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        if r != c {
            return Err(Error::ShapeMismatch { op: "diag", left: (r, c), right: (r, r) });
        }
        let out = (0..r).map(|i| self.nodes[x.0].data[i * c + i]).collect();
        let ng = self.needs(x);
        self.push(Op::Diag { x }, r, 1, out, ng)
    }

    /// Scale each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let norm = math::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm == 0.0 {
                return Err(Error::NonFinite { context: "l2_normalize of a zero row" });
            }
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
        }
        let ng = self.needs(x);
        self.push(Op::L2NormalizeRows { x }, r, c, out, ng)
    }

    /// Row scaling by 1/sqrt(|row|^2 + eps): smooth everywhere and maps
    /// zero rows to zero instead of erroring. Near-unit norm for rows
    /// well above sqrt(eps).
    pub fn normalize_rows_soft(&mut self, x: ValueId, eps: f64) -> Result<ValueId> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid_config("normalize_rows_soft eps must be positive"));
        }
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let inv = 1.0 / math::sqrt(row.iter().map(|v| v * v).sum::<f64>() + eps);
            for j in 0..c {
                out[i * c + j] = row[j] * inv;
            }
        }
        let ng = self.needs(x);
        self.push(Op::NormalizeRowsSoft { x, eps }, r, c, out, ng)
    }

    // ── Composites ───────────────────────────────────────────────────

    /// Row mean: [r,c] -> [1,c].
    pub fn mean_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, _) = self.shape(x);
        let s = self.sum_rows(x)?;
        self.affine(s, 1.0 / r as f64, 0.0)
    }

    /// Mean of all entries: [r,c] -> [1,1].
    pub fn mean_all(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.shape(x);
        let s = self.sum_all(x)?;
        self.affine(s, 1.0 / (r * c) as f64, 0.0)
    }

    /// Scalar read of a [1,1] value.
    pub fn scalar(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.shape(id), (1, 1));
        self.nodes[id.0].data[0]
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates the gradient of every
    /// parameter bound to this tape (zeros where no gradient flowed) and
    /// consumes the tape: a second call is an error.
    pub fn backward(&mut self, loss: ValueId, params: &mut Params) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        let (lr, lc) = self.shape(loss);
        if (lr, lc) != (1, 1) {
            return Err(Error::NotScalar { rows: lr, cols: lc });
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite { context: "loss" });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }

        for &(pid, vid) in &self.param_leaves {
            let g = grads[vid.0]
                .take()
                .unwrap_or_else(|| vec![0.0; self.nodes[vid.0].data.len()]);
            params.set_grad(pid, g);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: ValueId, add: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[id.0].data.len()]);
        }
        add(slot.as_mut().unwrap());
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::Param(_) => {
                // Leaves keep their accumulated gradient; put it back.
                grads[i] = Some(g.to_vec());
            }
            Op::Matmul { a, b } => {
                let (m, k) = self.shape(*a);
                let n = cols;
                let a_data = &self.nodes[a.0].data;
                let b_data = &self.nodes[b.0].data;
                self.accumulate(grads, *a, |da| {
                    kernels::matmul_nt(g, b_data, da, m, n, k);
                });
                self.accumulate(grads, *b, |db| {
                    kernels::matmul_tn(a_data, g, db, m, k, n);
                });
            }
            Op::Transpose { x } => {
                self.accumulate(grads, *x, |dx| {
                    // g has shape (rows, cols) = (c, r) of x.
                    for i2 in 0..rows {
                        for j in 0..cols {
                            dx[j * rows + i2] += g[i2 * cols + j];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |da| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::AddRow { x, row } => {
                self.accumulate(grads, *x, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accumulate(grads, *row, |dr| {
                    for chunk in g.chunks_exact(cols) {
                        for (d, &gv) in dr.iter_mut().zip(chunk) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Affine { x, mul } => {
                let mul = *mul;
                self.accumulate(grads, *x, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += mul * gv;
                    }
                });
            }
            Op::Hadamard { a, b } => {
                let a_data = &self.nodes[a.0].data;
                let b_data = &self.nodes[b.0].data;
                self.accumulate(grads, *a, |da| {
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(b_data) {
                        *d += gv * bv;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, &gv), &av) in db.iter_mut().zip(g).zip(a_data) {
                        *d += gv * av;
                    }
                });
            }
            Op::SoftmaxRows { x, .. } => {
                let y = &node.data;
                self.accumulate(grads, *x, |dx| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let x_data = &self.nodes[x.0].data;
                let gain_data = &self.nodes[gain.0].data;
                let c = cols as f64;
                // Recompute per-row statistics; cheaper than saving them.
                let mut xhat = vec![0.0; rows * cols];
                let mut inv_std = vec![0.0; rows];
                for r in 0..rows {
                    let row = &x_data[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / c;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                    let inv = 1.0 / math::sqrt(var + LN_EPS);
                    inv_std[r] = inv;
                    for j in 0..cols {
                        xhat[r * cols + j] = (row[j] - mean) * inv;
                    }
                }
                self.accumulate(grads, *bias, |db| {
                    for r in 0..rows {
                        for j in 0..cols {
                            db[j] += g[r * cols + j];
                        }
                    }
                });
                self.accumulate(grads, *gain, |dg| {
                    for r in 0..rows {
                        for j in 0..cols {
                            dg[j] += g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_gy = 0.0;
                        let mut mean_gy_xhat = 0.0;
                        for j in 0..cols {
                            let gy = gr[j] * gain_data[j];
                            mean_gy += gy;
                            mean_gy_xhat += gy * xh[j];
                        }
                        mean_gy /= c;
                        mean_gy_xhat /= c;
                        for j in 0..cols {
                            let gy = gr[j] * gain_data[j];
                            dx[r * cols + j] += inv_std[r] * (gy - mean_gy - xh[j] * mean_gy_xhat);
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let x_data = &self.nodes[x.0].data;
                self.accumulate(grads, *x, |dx| {
                    for (j, (&gv, &v)) in g.iter().zip(x_data).enumerate() {
                        let u = GELU_C0 * (v + GELU_C1 * v * v * v);
                        let t = math::tanh(u);
                        let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * v * v);
                        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                        dx[j] += gv * d;
                    }
                });
            }
            Op::CrossEntropyRows { logits, targets } => {
                let (r, v) = self.shape(*logits);
                let l_data = &self.nodes[logits.0].data;
                self.accumulate(grads, *logits, |dl| {
                    for i2 in 0..r {
                        let row = &l_data[i2 * v..(i2 + 1) * v];
                        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        let sum: f64 = row.iter().map(|&x| math::exp(x - max)).sum();
                        let gi = g[i2];
                        for j in 0..v {
                            let p = math::exp(row[j] - max) / sum;
                            dl[i2 * v + j] += gi * p;
                        }
                        dl[i2 * v + targets[i2]] -= gi;
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                self.accumulate(grads, *table, |dt| {
                    for (i2, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            dt[id * cols + j] += g[i2 * cols + j];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, _) = self.shape(p);
                    let seg = &g[offset * cols..(offset + pr) * cols];
                    self.accumulate(grads, p, |dp| {
                        for (d, &gv) in dp.iter_mut().zip(seg) {
                            *d += gv;
                        }
                    });
                    offset += pr;
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    self.accumulate(grads, p, |dp| {
                        for i2 in 0..pr {
                            for j in 0..pc {
                                dp[i2 * pc + j] += g[i2 * cols + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceRows { x, start } => {
                self.accumulate(grads, *x, |dx| {
                    for (d, &gv) in dx[start * cols..].iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (_, xc) = self.shape(*x);
                self.accumulate(grads, *x, |dx| {
                    for i2 in 0..rows {
                        for j in 0..cols {
                            dx[i2 * xc + start + j] += g[i2 * cols + j];
                        }
                    }
                });
            }
            Op::SumRows { x } => {
                let (xr, _) = self.shape(*x);
                self.accumulate(grads, *x, |dx| {
                    for i2 in 0..xr {
                        for j in 0..cols {
                            dx[i2 * cols + j] += g[j];
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let gv = g[0];
                self.accumulate(grads, *x, |dx| {
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Abs { x } => {
                let x_data = &self.nodes[x.0].data;
                self.accumulate(grads, *x, |dx| {
                    for (j, (&gv, &v)) in g.iter().zip(x_data).enumerate() {
                        let s = if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        dx[j] += gv * s;
                    }
                });
            }
            Op::Diag { x } => {
                let (_, xc) = self.shape(*x);
                self.accumulate(grads, *x, |dx| {
                    for (i2, &gv) in g.iter().enumerate() {
                        dx[i2 * xc + i2] += gv;
                    }
                });
            }
            Op::L2NormalizeRows { x } => {
                let x_data = &self.nodes[x.0].data;
                let y = &node.data;
                self.accumulate(grads, *x, |dx| {
                    for r in 0..rows {
                        let xr = &x_data[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let norm = math::sqrt(xr.iter().map(|v| v * v).sum::<f64>());
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[r * cols + j] += (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::NormalizeRowsSoft { x, eps } => {
                // y = x / n with n = sqrt(S + eps), S = |x|^2:
                // dx = g/n - x (g.x)/n^3.
                let x_data = &self.nodes[x.0].data;
                let eps = *eps;
                self.accumulate(grads, *x, |dx| {
                    for r in 0..rows {
                        let xr = &x_data[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let n2 = xr.iter().map(|v| v * v).sum::<f64>() + eps;
                        let n = math::sqrt(n2);
                        let dot: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[r * cols + j] += gr[j] / n - xr[j] * dot / (n2 * n);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::rng::Rng;

    #[test]
    fn softmax_closed_forms() {
        let mut tape = Tape::new();
        let x = tape.leaf(1, 2, vec![0.0, 0.0]).unwrap();
        let s = tape.softmax_rows(x, None).unwrap();
        assert_eq!(tape.value(s), &[0.5, 0.5]);

        let x = tape.leaf(1, 2, vec![math::ln(2.0), 0.0]).unwrap();
        let s = tape.softmax_rows(x, None).unwrap();
        assert!((tape.value(s)[0] - 2.0 / 3.0).abs() <= 1e-15);
        assert!((tape.value(s)[1] - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn softmax_thousand_random_rows_sum_to_one() {
        let mut rng = Rng::new(1000);
        let rows = 1000;
        let cols = 24;
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-30.0, 30.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(rows, cols, data).unwrap();
        let s = tape.softmax_rows(x, None).unwrap();
        for i in 0..rows {
            let sum: f64 = tape.value(s)[i * cols..(i + 1) * cols].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {i}: {sum}");
        }
    }

    #[test]
    fn layer_norm_closed_forms_and_two_pass_oracle() {
        let mut tape = Tape::new();
        let gain = tape.leaf(1, 4, vec![1.0; 4]).unwrap();
        let bias = tape.leaf(1, 4, vec![0.0; 4]).unwrap();

        // Constant row: zero variance numerator, output all zeros.
        let x = tape.leaf(1, 4, vec![3.7; 4]).unwrap();
        let y = tape.layer_norm(x, gain, bias).unwrap();
        for &v in tape.value(y) {
            assert_eq!(v, 0.0);
        }

        // [1, -1]: unit variance up to epsilon.
        let g2 = tape.leaf(1, 2, vec![1.0, 1.0]).unwrap();
        let b2 = tape.leaf(1, 2, vec![0.0, 0.0]).unwrap();
        let x = tape.leaf(1, 2, vec![1.0, -1.0]).unwrap();
        let y = tape.layer_norm(x, g2, b2).unwrap();
        assert!((tape.value(y)[0] - 1.0).abs() < 1e-4);
        assert!((tape.value(y)[1] + 1.0).abs() < 1e-4);

        // Random 16-wide rows against an independent two-pass oracle.
        let mut rng = Rng::new(77);
        let d = 16;
        let rows = 5;
        let data: Vec<f64> = (0..rows * d).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let gd: Vec<f64> = (0..d).map(|_| rng.uniform_in(0.5, 2.0)).collect();
        let bd: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let x = tape.leaf(rows, d, data.clone()).unwrap();
        let g = tape.leaf(1, d, gd.clone()).unwrap();
        let b = tape.leaf(1, d, bd.clone()).unwrap();
        let y = tape.layer_norm(x, g, b).unwrap();
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            for j in 0..d {
                let want = (row[j] - mean) / math::sqrt(var + 1e-5) * gd[j] + bd[j];
                let got = tape.value(y)[r * d + j];
                assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::new();

        // Uniform logits over 64 classes: ln 64.
        let x = tape.leaf(1, 64, vec![0.0; 64]).unwrap();
        let ce = tape.cross_entropy_rows(x, &[13]).unwrap();
        assert!((tape.value(ce)[0] - math::ln(64.0)).abs() <= 1e-12);

        // Two equal logits, target 1: ln 2.
        let x = tape.leaf(1, 2, vec![0.0, 0.0]).unwrap();
        let ce = tape.cross_entropy_rows(x, &[1]).unwrap();
        assert!((tape.value(ce)[0] - math::ln(2.0)).abs() <= 1e-15);

        // Confident correct logit: log(1 + e^{-20}), about 2.061e-9.
        let x = tape.leaf(1, 2, vec![10.0, -10.0]).unwrap();
        let ce = tape.cross_entropy_rows(x, &[0]).unwrap();
        let want = math::ln_1p(math::exp(-20.0));
        assert!((tape.value(ce)[0] - want).abs() <= 1e-15, "{} vs {want}", tape.value(ce)[0]);

        // Out-of-range target is an index error.
        let x = tape.leaf(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(
            tape.cross_entropy_rows(x, &[4]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(2, 3, vec![0.0; 6]).unwrap();
        let b = tape.leaf(2, 2, vec![0.0; 4]).unwrap();
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { left: (2, 3), right: (2, 2), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalar_loss_required_for_backward() {
        let mut params = crate::params::Params::new(1);
        let w = params.create("w", 2, 2, crate::params::WEIGHT_INIT).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&params, w);
        assert!(matches!(
            tape.backward(wv, &mut params),
            Err(Error::NotScalar { rows: 2, cols: 2 })
        ));
    }
}
