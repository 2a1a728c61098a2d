//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as it executes, then [`Tape::backward`]
//! walks the record once to accumulate gradients. The network code composes
//! forward passes out of these primitives, so a correct vector-Jacobian
//! product for each op gives correct gradients for every cell type and
//! attention variant without per-architecture backward code.

use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddSame(Var, Var),
    /// m x n plus a broadcast 1 x n row.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// m x n scaled per-row by an m x 1 column.
    MulCol(Var, Var),
    /// m x n scaled by a learnable 1 x 1 tensor.
    MulScalar(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Recip(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    /// Per-row dot product of two m x d tensors, yielding m x 1.
    RowDot(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        /// Saved (mean, 1/sigma) per row.
        stats: Vec<(f64, f64)>,
    },
    /// Gather rows of `table` by index.
    Embed { table: Var, ids: Vec<usize> },
    /// Summed negative log-likelihood of `gold[i]` under softmax of row i,
    /// skipping rows where `mask[i]` is false. Saves the softmax for backward.
    CrossEntropy {
        logits: Var,
        gold: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
    },
    SumAll(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the given shape if it never received one.
    pub fn take(&mut self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut out = va.clone();
        out.add_in_place(vb);
        self.push(out, Op::AddSame(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows(), 1, "bias must be a single row");
        assert_eq!(va.cols(), vr.cols(), "add_row width mismatch");
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(vr.row(0)) {
                *o += *b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(col));
        assert_eq!(vc.cols(), 1, "mul_col expects an m x 1 column");
        assert_eq!(va.rows(), vc.rows(), "mul_col height mismatch");
        let mut out = va.clone();
        for i in 0..out.rows() {
            let s = vc.at(i, 0);
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(a, col))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let out = self.value(a).map(|x| x * sv);
        self.push(out, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::recip);
        self.push(out, Op::Recip(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows, "concat_cols height mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + vp.cols()].copy_from_slice(vp.row(i));
            }
            offset += vp.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(va.rows(), len);
        for i in 0..va.rows() {
            out.row_mut(i).copy_from_slice(&va.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "row_dot shape mismatch");
        let mut out = Tensor::zeros(va.rows(), 1);
        for i in 0..va.rows() {
            let s: f64 = va.row(i).iter().zip(vb.row(i)).map(|(x, y)| x * y).sum();
            out.set(i, 0, s);
        }
        self.push(out, Op::RowDot(a, b))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization followed by learned gain and shift
    /// (both 1 x d). Variance is the population variance plus
    /// [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Var {
        let (vx, vg, vs) = (self.value(x), self.value(gain), self.value(shift));
        let d = vx.cols();
        assert_eq!(vg.shape(), (1, d), "gain shape mismatch");
        assert_eq!(vs.shape(), (1, d), "shift shape mismatch");
        let mut out = Tensor::zeros(vx.rows(), d);
        let mut stats = Vec::with_capacity(vx.rows());
        for i in 0..vx.rows() {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            stats.push((mean, rstd));
            for j in 0..d {
                out.set(i, j, (row[j] - mean) * rstd * vg.at(0, j) + vs.at(0, j));
            }
        }
        self.push(out, Op::LayerNorm { x, gain, shift, stats })
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let vt = self.value(table);
        let mut out = Tensor::zeros(ids.len(), vt.cols());
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < vt.rows(), "embedding id out of range");
            out.row_mut(i).copy_from_slice(vt.row(id));
        }
        self.push(out, Op::Embed { table, ids: ids.to_vec() })
    }

    /// Summed cross-entropy of gold ids under softmax rows of `logits`,
    /// masked per row. Returns a 1 x 1 tensor.
    pub fn cross_entropy(&mut self, logits: Var, gold: &[usize], mask: &[bool]) -> Var {
        let vl = self.value(logits);
        assert_eq!(gold.len(), vl.rows());
        assert_eq!(mask.len(), vl.rows());
        let mut probs = vl.clone();
        let mut total = 0.0;
        for i in 0..probs.rows() {
            if !mask[i] {
                continue;
            }
            assert!(gold[i] < vl.cols(), "gold id out of range");
            let row = probs.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
            total += -(row[gold[i]].ln());
        }
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, gold: gold.to_vec(), mask: mask.to_vec(), probs },
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Accumulate gradients of a scalar node with respect to every node.
    pub fn backward(&self, from: Var) -> Grads {
        assert_eq!(self.value(from).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[from.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=from.0).rev() {
            let Some(g_out) = grads[idx].take() else { continue };
            self.accumulate(idx, &g_out, &mut grads);
            grads[idx] = Some(g_out);
        }
        Grads { grads }
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let add_to = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(t) => t.add_in_place(&delta),
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(*b));
                let db = self.value(*a).matmul_tn(g);
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::AddSame(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                add_to(grads, *a, g.clone());
                let mut dr = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (slot, v) in dr.row_mut(0).iter_mut().zip(g.row(i)) {
                        *slot += v;
                    }
                }
                add_to(grads, *row, dr);
            }
            Op::Mul(a, b) => {
                let da = elementwise(g, self.value(*b), |x, y| x * y);
                let db = elementwise(g, self.value(*a), |x, y| x * y);
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::MulCol(a, col) => {
                let vc = self.value(*col);
                let va = self.value(*a);
                let mut da = g.clone();
                let mut dc = Tensor::zeros(vc.rows(), 1);
                for i in 0..g.rows() {
                    let s = vc.at(i, 0);
                    let mut acc = 0.0;
                    for (dslot, (&gv, &av)) in
                        da.row_mut(i).iter_mut().zip(g.row(i).iter().zip(va.row(i)))
                    {
                        *dslot = gv * s;
                        acc += gv * av;
                    }
                    dc.set(i, 0, acc);
                }
                add_to(grads, *a, da);
                add_to(grads, *col, dc);
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                let da = g.map(|x| x * sv);
                let ds: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                add_to(grads, *a, da);
                add_to(grads, *s, Tensor::scalar(ds));
            }
            Op::Scale(a, c) => {
                add_to(grads, *a, g.map(|x| x * c));
            }
            Op::Sigmoid(a) => {
                let da = elementwise(g, &node.value, |gv, y| gv * y * (1.0 - y));
                add_to(grads, *a, da);
            }
            Op::Tanh(a) => {
                let da = elementwise(g, &node.value, |gv, y| gv * (1.0 - y * y));
                add_to(grads, *a, da);
            }
            Op::Sqrt(a) => {
                let da = elementwise(g, &node.value, |gv, y| gv * 0.5 / y);
                add_to(grads, *a, da);
            }
            Op::Recip(a) => {
                let da = elementwise(g, &node.value, |gv, y| -gv * y * y);
                add_to(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Tensor::zeros(g.rows(), w);
                    for i in 0..g.rows() {
                        dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    add_to(grads, p, dp);
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.rows(), va.cols());
                for i in 0..g.rows() {
                    da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                add_to(grads, *a, da);
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(va.rows(), va.cols());
                let mut db = Tensor::zeros(vb.rows(), vb.cols());
                for i in 0..va.rows() {
                    let gv = g.at(i, 0);
                    for j in 0..va.cols() {
                        da.set(i, j, gv * vb.at(i, j));
                        db.set(i, j, gv * va.at(i, j));
                    }
                }
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(x, v)| x * v).sum();
                    for j in 0..y.cols() {
                        da.set(i, j, y.at(i, j) * (g.at(i, j) - dot));
                    }
                }
                add_to(grads, *a, da);
            }
            Op::LayerNorm { x, gain, shift, stats } => {
                let vx = self.value(*x);
                let vg = self.value(*gain);
                let d = vx.cols();
                let mut dx = Tensor::zeros(vx.rows(), d);
                let mut dgain = Tensor::zeros(1, d);
                let mut dshift = Tensor::zeros(1, d);
                for i in 0..vx.rows() {
                    let (mean, rstd) = stats[i];
                    // Recover the normalized row.
                    let norm: Vec<f64> = vx.row(i).iter().map(|&v| (v - mean) * rstd).collect();
                    let gl: Vec<f64> =
                        g.row(i).iter().zip(vg.row(0)).map(|(gv, gn)| gv * gn).collect();
                    let mean_gl = gl.iter().sum::<f64>() / d as f64;
                    let mean_gl_norm =
                        gl.iter().zip(&norm).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx.set(i, j, (gl[j] - mean_gl - norm[j] * mean_gl_norm) * rstd);
                        dgain.row_mut(0)[j] += g.at(i, j) * norm[j];
                        dshift.row_mut(0)[j] += g.at(i, j);
                    }
                }
                add_to(grads, *x, dx);
                add_to(grads, *gain, dgain);
                add_to(grads, *shift, dshift);
            }
            Op::Embed { table, ids } => {
                let vt = self.value(*table);
                let mut dt = Tensor::zeros(vt.rows(), vt.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (slot, v) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *slot += v;
                    }
                }
                add_to(grads, *table, dt);
            }
            Op::CrossEntropy { logits, gold, mask, probs } => {
                let scale = g.item();
                let mut dl = Tensor::zeros(probs.rows(), probs.cols());
                for i in 0..probs.rows() {
                    if !mask[i] {
                        continue;
                    }
                    for (j, slot) in dl.row_mut(i).iter_mut().enumerate() {
                        let delta = if j == gold[i] { 1.0 } else { 0.0 };
                        *slot = scale * (probs.at(i, j) - delta);
                    }
                }
                add_to(grads, *logits, dl);
            }
            Op::SumAll(a) => {
                let va = self.value(*a);
                add_to(grads, *a, Tensor::filled(va.rows(), va.cols(), g.item()));
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Natural-log softmax of a row, computed with max subtraction.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Central finite differences against the tape for an arbitrary graph.
    /// The builder must create one leaf per input, in order, as vars 0..n.
    fn check_gradients(
        build: impl Fn(&mut Tape, &[Tensor]) -> Var,
        inputs: &[Tensor],
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let root = build(&mut tape, inputs);
        let grads = tape.backward(root);
        let loss0 = tape.value(root).item();
        assert!(loss0.is_finite());

        let eps = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(Var(k))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
            for e in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[e] += eps;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[e] -= eps;
                let mut tp = Tape::new();
                let rp = build(&mut tp, &plus);
                let mut tm = Tape::new();
                let rm = build(&mut tm, &minus);
                let numeric = (tp.value(rp).item() - tm.value(rm).item()) / (2.0 * eps);
                let a = analytic.data()[e];
                let denom = a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "grad mismatch input {k} entry {e}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = Rng::new(17);
        let a = Tensor::uniform(3, 4, -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(4, 2, -1.0, 1.0, &mut rng);
        check_gradients(
            |tape, ins| {
                let a = tape.leaf(ins[0].clone());
                let b = tape.leaf(ins[1].clone());
                let c = tape.matmul(a, b);
                let t = tape.tanh(c);
                tape.sum_all(t)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn mixed_op_gradients() {
        let mut rng = Rng::new(23);
        let x = Tensor::uniform(2, 6, -1.0, 1.0, &mut rng);
        let col = Tensor::uniform(2, 1, 0.5, 1.5, &mut rng);
        let bias = Tensor::uniform(1, 6, -0.5, 0.5, &mut rng);
        check_gradients(
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let col = tape.leaf(ins[1].clone());
                let bias = tape.leaf(ins[2].clone());
                let xb = tape.add_row(x, bias);
                let s = tape.sigmoid(xb);
                let m = tape.mul_col(s, col);
                let sliced = tape.slice_cols(m, 1, 4);
                let soft = tape.softmax_rows(sliced);
                let prod = tape.mul(soft, soft);
                tape.sum_all(prod)
            },
            &[x, col, bias],
            1e-6,
        );
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = Rng::new(31);
        let x = Tensor::uniform(3, 5, -2.0, 2.0, &mut rng);
        let gain = Tensor::uniform(1, 5, 0.5, 1.5, &mut rng);
        let shift = Tensor::uniform(1, 5, -0.3, 0.3, &mut rng);
        check_gradients(
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let g = tape.leaf(ins[1].clone());
                let s = tape.leaf(ins[2].clone());
                let n = tape.layer_norm(x, g, s);
                let t = tape.tanh(n);
                tape.sum_all(t)
            },
            &[x, gain, shift],
            1e-5,
        );
    }

    #[test]
    fn cross_entropy_and_embed_gradients() {
        let mut rng = Rng::new(37);
        let table = Tensor::uniform(5, 3, -1.0, 1.0, &mut rng);
        let proj = Tensor::uniform(3, 4, -1.0, 1.0, &mut rng);
        check_gradients(
            |tape, ins| {
                let table = tape.leaf(ins[0].clone());
                let proj = tape.leaf(ins[1].clone());
                let e = tape.embed(table, &[0, 3, 3]);
                let logits = tape.matmul(e, proj);
                tape.cross_entropy(logits, &[1, 0, 2], &[true, true, false])
            },
            &[table, proj],
            1e-6,
        );
    }

    #[test]
    fn scalar_norm_chain_gradients() {
        // Exercises sqrt / recip / mul_scalar the way weight-normalized
        // attention uses them.
        let mut rng = Rng::new(41);
        let u = Tensor::uniform(1, 4, 0.2, 1.0, &mut rng);
        let g = Tensor::scalar(1.3);
        let q = Tensor::uniform(2, 4, -1.0, 1.0, &mut rng);
        check_gradients(
            |tape, ins| {
                let u = tape.leaf(ins[0].clone());
                let g = tape.leaf(ins[1].clone());
                let q = tape.leaf(ins[2].clone());
                let uu = tape.mul(u, u);
                let ss = tape.sum_all(uu);
                let norm = tape.sqrt(ss);
                let inv = tape.recip(norm);
                let gn = tape.mul_scalar(q, g);
                let scaled = tape.mul_scalar(gn, inv);
                let t = tape.tanh(scaled);
                tape.sum_all(t)
            },
            &[u, g, q],
            1e-6,
        );
    }

    #[test]
    fn concat_and_row_dot_gradients() {
        let mut rng = Rng::new(43);
        let a = Tensor::uniform(3, 2, -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(3, 3, -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(3, 5, -1.0, 1.0, &mut rng);
        check_gradients(
            |tape, ins| {
                let a = tape.leaf(ins[0].clone());
                let b = tape.leaf(ins[1].clone());
                let c = tape.leaf(ins[2].clone());
                let cat = tape.concat_cols(&[a, b]);
                let d = tape.row_dot(cat, c);
                let s = tape.sigmoid(d);
                tape.sum_all(s)
            },
            &[a, b, c],
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 1.0]));
        let s = tape.softmax_rows(x);
        for i in 0..2 {
            let sum: f64 = tape.value(s).row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_is_nonpositive_and_shift_invariant() {
        let row = vec![0.3, -2.0, 1.7, 0.0];
        let ls = log_softmax(&row);
        assert!(ls.iter().all(|&v| v <= 0.0));
        let shifted: Vec<f64> = row.iter().map(|v| v + 100.0).collect();
        let ls2 = log_softmax(&shifted);
        for (a, b) in ls.iter().zip(&ls2) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
