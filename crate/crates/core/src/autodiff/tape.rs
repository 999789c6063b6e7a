use super::tensor::{softmax_slice, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded primitive applications. Input node ids always precede the
/// node that consumes them, so a single reverse sweep suffices for the
/// backward pass.
#[derive(Debug, Clone)]
enum Op {
    /// Trainable leaf; gradients for these are returned by `backward`.
    Param,
    /// Frozen leaf (inputs, noise, masks); gradients are discarded.
    Constant,
    /// `a @ b`
    MatMul { a: NodeId, b: NodeId },
    /// `a + b`, same shape
    Add { a: NodeId, b: NodeId },
    /// Hadamard product, same shape
    Mul { a: NodeId, b: NodeId },
    /// `scale * x + shift`, element-wise with scalar coefficients
    Affine { x: NodeId, scale: f64, shift: f64 },
    /// `[a | b]`, horizontal concatenation
    ConcatCols { a: NodeId, b: NodeId },
    /// `[a; b]`, vertical concatenation
    ConcatRows { a: NodeId, b: NodeId },
    /// Columns `start..start+len` of `x`
    SliceCols { x: NodeId, start: usize, len: usize },
    /// `out[i] = x[idx[i]]`, row gather (indices may repeat)
    GatherRows { x: NodeId, idx: Vec<usize> },
    /// `out[idx[i]] += x[i]` into an `out_rows`-row zero tensor
    ScatterAddRows { x: NodeId, idx: Vec<usize>, out_rows: usize },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Exp { x: NodeId },
    Log { x: NodeId },
    /// Clamp to `[lo, hi]`; gradient passes inside the interval
    Clamp { x: NodeId, lo: f64, hi: f64 },
    /// Stable softmax applied independently to every row
    RowSoftmax { x: NodeId },
    /// Stable softmax over contiguous segments of a column vector
    SegmentSoftmax { x: NodeId, segments: Vec<(usize, usize)> },
    /// Sum of all entries, 1x1 result
    Sum { x: NodeId },
    /// Mean of all entries, 1x1 result
    Mean { x: NodeId },
    /// Element-wise product with a constant tensor (dropout masks,
    /// normalisation coefficients)
    MulConst { x: NodeId, k: Tensor },
    /// Scale row `i` of `x` by entry `i` of column vector `s`
    RowScale { x: NodeId, s: NodeId },
    /// Add a 1xC row to every row of an NxC tensor
    AddRowBroadcast { x: NodeId, row: NodeId },
    /// Mean over rows of `logsumexp(row) - row[label]`, 1x1 result
    CrossEntropyWithLogits { logits: NodeId, labels: Vec<usize> },
    /// Forward takes the pre-computed `hard` values; backward passes the
    /// upstream gradient to `x` unchanged
    StraightThrough { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward pass.
///
/// Only parameter nodes keep their gradient; everything else is dropped
/// once the sweep has consumed it. `nodes_visited` counts the nodes the
/// reverse sweep touched, which equals the tape length by construction.
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
    pub nodes_visited: usize,
}

impl GradientMap {
    /// Gradient of the loss with respect to a parameter node.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Wengert list of primitive applications.
///
/// A tape is built fresh for every forward pass and owned by a single
/// thread; parallelism happens across tapes, never inside one.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Register a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Param, value)
    }

    /// Register a frozen leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add { a, b }, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul { a, b }, value)
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { x, scale, shift }, value)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), tb.rows(), "concat_cols row mismatch");
        let (n, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        self.push(Op::ConcatCols { a, b }, Tensor::new(n, ca + cb, data))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols(), tb.cols(), "concat_rows column mismatch");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::new(ta.rows() + tb.rows(), ta.cols(), data);
        self.push(Op::ConcatRows { a, b }, value)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(x);
        assert!(start + len <= t.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let value = Tensor::new(t.rows(), len, data);
        self.push(Op::SliceCols { x, start, len }, value)
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            assert!(i < t.rows(), "gather_rows index out of range");
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(idx.len(), cols, data);
        self.push(Op::GatherRows { x, idx }, value)
    }

    pub fn scatter_add_rows(&mut self, x: NodeId, idx: Vec<usize>, out_rows: usize) -> NodeId {
        let t = self.value(x);
        assert_eq!(t.rows(), idx.len(), "scatter_add_rows needs one index per row");
        let cols = t.cols();
        let mut data = vec![0.0; out_rows * cols];
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < out_rows, "scatter_add_rows index out of range");
            let src = t.row(r);
            let dst = &mut data[i * cols..(i + 1) * cols];
            for c in 0..cols {
                dst[c] += src[c];
            }
        }
        let value = Tensor::new(out_rows, cols, data);
        self.push(Op::ScatterAddRows { x, idx, out_rows }, value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu { x }, value)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu { x, slope }, value)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::exp);
        self.push(Op::Exp { x }, value)
    }

    /// Natural logarithm; callers must keep inputs strictly positive
    /// (use [`Tape::clamp`] first when values can underflow).
    pub fn log(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::ln);
        self.push(Op::Log { x }, value)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, value)
    }

    pub fn row_softmax(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        assert!(t.cols() > 0, "row_softmax on empty rows");
        let mut value = t.clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            softmax_slice(&mut value.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(Op::RowSoftmax { x }, value)
    }

    /// Softmax over contiguous, non-overlapping segments of a column
    /// vector. Segments must cover every row exactly once, in order.
    pub fn segment_softmax(&mut self, x: NodeId, segments: Vec<(usize, usize)>) -> NodeId {
        let t = self.value(x);
        assert_eq!(t.cols(), 1, "segment_softmax expects a column vector");
        let mut cursor = 0;
        for &(start, end) in &segments {
            assert!(start == cursor && end > start, "segments must tile the rows in order");
            cursor = end;
        }
        assert_eq!(cursor, t.rows(), "segments must cover all rows");
        let mut value = t.clone();
        for &(start, end) in &segments {
            softmax_slice(&mut value.data_mut()[start..end]);
        }
        self.push(Op::SegmentSoftmax { x, segments }, value)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum { x }, value)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        assert!(!t.is_empty(), "mean of empty tensor");
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean { x }, value)
    }

    /// Element-wise product with a constant tensor of the same shape.
    /// This is how dropout masks and fixed normalisation coefficients are
    /// recorded: the constant is saved on the tape, so gradients are exact
    /// for the sampled mask.
    pub fn mul_const(&mut self, x: NodeId, k: Tensor) -> NodeId {
        let value = self.value(x).zip(&k, |a, b| a * b);
        self.push(Op::MulConst { x, k }, value)
    }

    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (tx, ts) = (self.value(x), self.value(s));
        assert_eq!(ts.cols(), 1, "row_scale scale must be a column vector");
        assert_eq!(tx.rows(), ts.rows(), "row_scale row mismatch");
        let cols = tx.cols();
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let f = ts.get(r, 0);
            data.extend(tx.row(r).iter().map(|v| v * f));
        }
        let value = Tensor::new(tx.rows(), cols, data);
        self.push(Op::RowScale { x, s }, value)
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (tx, tr) = (self.value(x), self.value(row));
        assert_eq!(tr.rows(), 1, "broadcast row must be 1xC");
        assert_eq!(tx.cols(), tr.cols(), "broadcast column mismatch");
        let cols = tx.cols();
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            data.extend(tx.row(r).iter().zip(tr.row(0)).map(|(a, b)| a + b));
        }
        let value = Tensor::new(tx.rows(), cols, data);
        self.push(Op::AddRowBroadcast { x, row }, value)
    }

    /// Mean cross-entropy between rows of logits and integer labels,
    /// computed through a stable log-sum-exp.
    pub fn cross_entropy_with_logits(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let t = self.value(logits);
        assert_eq!(t.rows(), labels.len(), "one label per logits row");
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            assert!(y < t.cols(), "label {y} out of range for {} classes", t.cols());
            let row = t.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        self.push(Op::CrossEntropyWithLogits { logits, labels }, value)
    }

    /// Straight-through estimator: the forward value is `hard` (same
    /// shape as `x`), the backward pass treats the op as identity on `x`.
    pub fn straight_through(&mut self, x: NodeId, hard: Tensor) -> NodeId {
        assert_eq!(self.value(x).shape(), hard.shape(), "straight_through shape mismatch");
        self.push(Op::StraightThrough { x }, hard)
    }

    /// Reverse sweep from a scalar loss node.
    ///
    /// Returns the gradient of the loss with respect to every parameter
    /// node; gradients of constants and intermediates are discarded.
    /// Parameters not on a path to the loss get a zero gradient.
    pub fn backward(&self, loss: NodeId) -> GradientMap {
        let t = self.value(loss);
        assert!(t.is_scalar(), "loss must be a 1x1 scalar, got {:?}", t.shape());

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        let mut visited = 0;
        for i in (0..n).rev() {
            visited += 1;
            let Some(gout) = grads[i].take() else {
                // Node not on any path to the loss; params keep a zero
                // gradient, everything else needs no work.
                if matches!(self.nodes[i].op, Op::Param) {
                    let z = Tensor::zeros(self.nodes[i].value.rows(), self.nodes[i].value.cols());
                    grads[i] = Some(z);
                }
                continue;
            };
            match &self.nodes[i].op {
                Op::Param => {
                    grads[i] = Some(gout);
                    continue;
                }
                Op::Constant => continue,
                Op::MatMul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, gout.matmul(&tb.transpose()));
                    accumulate(&mut grads, *b, ta.transpose().matmul(&gout));
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, gout.clone());
                    accumulate(&mut grads, *b, gout);
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                    accumulate(&mut grads, *a, gout.zip(&tb, |g, v| g * v));
                    accumulate(&mut grads, *b, gout.zip(&ta, |g, v| g * v));
                }
                Op::Affine { x, scale, shift } => {
                    debug_assert!(scale.is_finite() && shift.is_finite());
                    accumulate(&mut grads, *x, gout.map(|g| g * scale));
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let rows = gout.rows();
                    let mut da = Tensor::zeros(rows, ca);
                    let mut db = Tensor::zeros(rows, cb);
                    for r in 0..rows {
                        for c in 0..ca {
                            da.set(r, c, gout.get(r, c));
                        }
                        for c in 0..cb {
                            db.set(r, c, gout.get(r, ca + c));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::ConcatRows { a, b } => {
                    let ra = self.value(*a).rows();
                    let rb = self.value(*b).rows();
                    let cols = gout.cols();
                    let da = Tensor::new(ra, cols, gout.data()[..ra * cols].to_vec());
                    let db = Tensor::new(rb, cols, gout.data()[ra * cols..].to_vec());
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SliceCols { x, start, len } => {
                    let tx = self.value(*x);
                    let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                    for r in 0..gout.rows() {
                        for c in 0..*len {
                            dx.set(r, start + c, gout.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherRows { x, idx } => {
                    let tx = self.value(*x);
                    let cols = tx.cols();
                    let mut dx = Tensor::zeros(tx.rows(), cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            let v = dx.get(src, c) + gout.get(r, c);
                            dx.set(src, c, v);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ScatterAddRows { x, idx, out_rows } => {
                    debug_assert_eq!(gout.rows(), *out_rows);
                    let cols = gout.cols();
                    let mut dx = Tensor::zeros(idx.len(), cols);
                    for (r, &dst) in idx.iter().enumerate() {
                        for c in 0..cols {
                            dx.set(r, c, gout.get(dst, c));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu { x } => {
                    let tx = self.value(*x).clone();
                    accumulate(&mut grads, *x, gout.zip(&tx, |g, v| if v > 0.0 { g } else { 0.0 }));
                }
                Op::LeakyRelu { x, slope } => {
                    let tx = self.value(*x).clone();
                    let s = *slope;
                    accumulate(&mut grads, *x, gout.zip(&tx, |g, v| if v > 0.0 { g } else { s * g }));
                }
                Op::Exp { x } => {
                    let out = self.nodes[i].value.clone();
                    accumulate(&mut grads, *x, gout.zip(&out, |g, v| g * v));
                }
                Op::Log { x } => {
                    let tx = self.value(*x).clone();
                    accumulate(&mut grads, *x, gout.zip(&tx, |g, v| g / v));
                }
                Op::Clamp { x, lo, hi } => {
                    let tx = self.value(*x).clone();
                    let (lo, hi) = (*lo, *hi);
                    accumulate(
                        &mut grads,
                        *x,
                        gout.zip(&tx, |g, v| if v >= lo && v <= hi { g } else { 0.0 }),
                    );
                }
                Op::RowSoftmax { x } => {
                    let s = &self.nodes[i].value;
                    let cols = s.cols();
                    let mut dx = Tensor::zeros(s.rows(), cols);
                    for r in 0..s.rows() {
                        let srow = s.row(r);
                        let grow = gout.row(r);
                        let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx.set(r, c, srow[c] * (grow[c] - dot));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SegmentSoftmax { x, segments } => {
                    let s = &self.nodes[i].value;
                    let mut dx = Tensor::zeros(s.rows(), 1);
                    for &(start, end) in segments {
                        let mut dot = 0.0;
                        for r in start..end {
                            dot += s.get(r, 0) * gout.get(r, 0);
                        }
                        for r in start..end {
                            dx.set(r, 0, s.get(r, 0) * (gout.get(r, 0) - dot));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum { x } => {
                    let tx = self.value(*x);
                    let g = gout.get(0, 0);
                    accumulate(&mut grads, *x, Tensor::new(tx.rows(), tx.cols(), vec![g; tx.len()]));
                }
                Op::Mean { x } => {
                    let tx = self.value(*x);
                    let g = gout.get(0, 0) / tx.len() as f64;
                    accumulate(&mut grads, *x, Tensor::new(tx.rows(), tx.cols(), vec![g; tx.len()]));
                }
                Op::MulConst { x, k } => {
                    accumulate(&mut grads, *x, gout.zip(k, |g, v| g * v));
                }
                Op::RowScale { x, s } => {
                    let (tx, ts) = (self.value(*x).clone(), self.value(*s).clone());
                    let cols = tx.cols();
                    let mut dx = Tensor::zeros(tx.rows(), cols);
                    let mut ds = Tensor::zeros(tx.rows(), 1);
                    for r in 0..tx.rows() {
                        let f = ts.get(r, 0);
                        let mut acc = 0.0;
                        for c in 0..cols {
                            dx.set(r, c, gout.get(r, c) * f);
                            acc += gout.get(r, c) * tx.get(r, c);
                        }
                        ds.set(r, 0, acc);
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *s, ds);
                }
                Op::AddRowBroadcast { x, row } => {
                    let cols = gout.cols();
                    let mut drow = Tensor::zeros(1, cols);
                    for r in 0..gout.rows() {
                        for c in 0..cols {
                            let v = drow.get(0, c) + gout.get(r, c);
                            drow.set(0, c, v);
                        }
                    }
                    accumulate(&mut grads, *x, gout);
                    accumulate(&mut grads, *row, drow);
                }
                Op::CrossEntropyWithLogits { logits, labels } => {
                    let t = self.value(*logits);
                    let g = gout.get(0, 0) / labels.len() as f64;
                    let cols = t.cols();
                    let mut dx = Tensor::zeros(t.rows(), cols);
                    for (r, &y) in labels.iter().enumerate() {
                        let mut row = t.row(r).to_vec();
                        softmax_slice(&mut row);
                        for c in 0..cols {
                            let delta = if c == y { 1.0 } else { 0.0 };
                            dx.set(r, c, g * (row[c] - delta));
                        }
                    }
                    accumulate(&mut grads, *logits, dx);
                }
                Op::StraightThrough { x } => {
                    accumulate(&mut grads, *x, gout);
                }
            }
        }

        // Drop gradients of everything that is not a parameter.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Param) {
                grads[i] = None;
            }
        }
        GradientMap { grads, nodes_visited: visited }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(g) => {
            assert_eq!(g.shape(), delta.shape(), "gradient shape mismatch");
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        // f(x) = sum(x .* x), x = [3] -> grad [6]
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_matmul_gradient_matches_hand_chain_rule() {
        // f(W) = sum(relu(W @ [1, 1]^T)) with W = [[-1, 2]].
        // Forward: relu(-1 + 2) = 1; the row is active, so the gradient
        // flows to both entries: [[1, 1]]. Confirmed against central
        // differences below.
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![-1.0, 2.0]]));
        let x = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let y = tape.matmul(w, x);
        let r = tape.relu(y);
        let loss = tape.sum(r);
        assert_eq!(tape.value(loss).get(0, 0), 1.0);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0]);

        let f = |wd: &[f64]| {
            let a = wd[0] + wd[1];
            if a > 0.0 {
                a
            } else {
                0.0
            }
        };
        let eps = 1e-6;
        for (i, &g) in [1.0, 1.0].iter().enumerate() {
            let mut plus = vec![-1.0, 2.0];
            let mut minus = plus.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            assert!((fd - g).abs() < 1e-6);
        }
    }

    #[test]
    fn elementwise_relu_of_param_gates_gradient() {
        // The other reading of the same expression: relu applied to W
        // entry-wise before the product kills the negative entry.
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![-1.0, 2.0]]));
        let r = tape.relu(w);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let y = tape.matmul(r, x);
        let loss = tape.sum(y);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(w).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let unused = tape.param(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_visits_every_node_exactly_once() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]));
        let e = tape.exp(x);
        let s = tape.row_softmax(e);
        let l = tape.sum(s);
        let grads = tape.backward(l);
        assert_eq!(grads.nodes_visited, tape.len());
    }

    #[test]
    #[should_panic(expected = "loss must be a 1x1 scalar")]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![1.0, 2.0]]));
        tape.backward(x);
    }

    #[test]
    fn straight_through_passes_gradient_and_hard_value() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![0.7, 0.2]]));
        let st = tape.straight_through(x, Tensor::from_rows(&[vec![1.0, 0.0]]));
        assert_eq!(tape.value(st).data(), &[1.0, 0.0]);
        let tripled = tape.affine(st, 3.0, 0.0);
        let loss = tape.sum(tripled);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0]]));
        let ce = tape.cross_entropy_with_logits(logits, vec![0]);
        assert!((tape.value(ce).get(0, 0) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gather_scatter_are_adjoint() {
        // sum(scatter(gather(x))) routes each selected row's gradient
        // back, counting multiplicity.
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        let g = tape.gather_rows(x, vec![0, 0, 2]);
        let s = tape.scatter_add_rows(g, vec![1, 1, 0], 2);
        let loss = tape.sum(s);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "segments must tile")]
    fn segment_softmax_rejects_gaps() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        tape.segment_softmax(x, vec![(0, 1), (2, 3)]);
    }
}
