use super::{AutogradError, ParamId, ParamStore, Shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Hadamard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

/// Smallest argument accepted by `ln`; keeps `-ln(0)` finite.
pub const LN_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddRowBias(Var, Var),
    Unary(Unary, Var),
    Ln(Var),
    Affine { x: Var, scale: f64 },
    ScaleBy { x: Var, s: Var },
    Concat { inputs: Vec<Var>, axis: Axis },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Mean { x: Var, axis: Axis },
    Sum(Var),
    Transpose(Var),
    Embedding { table: Var, ids: Vec<usize> },
    MaskedSoftmax(Var),
    Pick { x: Var, row: usize, col: usize },
    BandScores { x: Var, half_width: usize },
    BandSoftmax(Var),
    BandApply { weights: Var, values: Var, half_width: usize },
}

#[derive(Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// index order is a valid topological order for backpropagation.
#[derive(Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    relu_signature: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: Shape, right: Shape) -> AutogradError {
    AutogradError::ShapeMismatch { op, left, right }
}

/// Column index range stored for row `i` of a banded matrix of length `len`.
#[inline]
fn band_width(len: usize, half_width: usize) -> (usize, usize) {
    let hw = half_width.min(len.saturating_sub(1));
    (hw, 2 * hw + 1)
}

/// Context position addressed by band slot `o` of row `i`, if in range.
#[inline]
fn band_col(i: usize, o: usize, hw: usize, len: usize) -> Option<usize> {
    let j = (i + o).checked_sub(hw)?;
    (j < len).then_some(j)
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            relu_signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient; `None` until a backward pass reached the node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Hash of the on/off pattern of every rectifier evaluated so far.
    pub fn relu_signature(&self) -> u64 {
        self.relu_signature
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf not backed by a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, op: Binary, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            let name = match op {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Hadamard => "hadamard",
            };
            return Err(mismatch(name, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match op {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Hadamard => x * y,
            })
            .collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.elementwise(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.elementwise(Binary::Sub, a, b)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.elementwise(Binary::Hadamard, a, b)
    }

    /// Adds a `1 x c` bias to every row of an `r x c` matrix. The only
    /// broadcasting the engine supports.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutogradError> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(mismatch("add_row_bias", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRowBias(a, bias), rg))
    }

    pub fn map(&mut self, op: Unary, a: Var) -> Var {
        let va = self.value(a);
        let out = match op {
            Unary::Sigmoid => va.map(sigmoid),
            Unary::Tanh => va.map(f64::tanh),
            Unary::Relu => va.map(|x| x.max(0.0)),
        };
        if op == Unary::Relu {
            let mut h = self.relu_signature;
            for &x in va.data() {
                h ^= u64::from(x > 0.0);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            self.relu_signature = h;
        }
        let rg = self.rg(a);
        self.push(out, Op::Unary(op, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(Unary::Relu, a)
    }

    /// Natural log with arguments floored at [`LN_FLOOR`].
    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(LN_FLOOR).ln());
        let rg = self.rg(a);
        self.push(out, Op::Ln(a), rg)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    /// Multiplies every entry of `x` by the `1 x 1` tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var, AutogradError> {
        let vs = self.value(s);
        if vs.shape() != Shape::new(1, 1) {
            return Err(mismatch("scale_by", self.shape(x), vs.shape()));
        }
        let k = vs.item();
        let out = self.value(x).map(|v| k * v);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy { x, s }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var, AutogradError> {
        let first = *inputs.first().ok_or(AutogradError::EmptyInput("concat"))?;
        let s0 = self.shape(first);
        let out = match axis {
            Axis::Cols => {
                let mut cols = 0;
                for &v in inputs {
                    let s = self.shape(v);
                    if s.rows != s0.rows {
                        return Err(mismatch("concat", s0, s));
                    }
                    cols += s.cols;
                }
                let mut out = Tensor::zeros(s0.rows, cols);
                for r in 0..s0.rows {
                    let mut off = 0;
                    for &v in inputs {
                        let src = self.value(v).row(r);
                        out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                        off += src.len();
                    }
                }
                out
            }
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in inputs {
                    let s = self.shape(v);
                    if s.cols != s0.cols {
                        return Err(mismatch("concat", s0, s));
                    }
                    rows += s.rows;
                    data.extend_from_slice(self.value(v).data());
                }
                Tensor::from_vec(rows, s0.cols, data)?
            }
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutogradError> {
        let s = self.shape(x);
        if start + len > s.rows {
            return Err(AutogradError::IndexOutOfRange {
                index: start + len,
                limit: s.rows,
            });
        }
        let data = self.value(x).data()[start * s.cols..(start + len) * s.cols].to_vec();
        let out = Tensor::from_vec(len, s.cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn row(&mut self, x: Var, r: usize) -> Result<Var, AutogradError> {
        self.slice_rows(x, r, 1)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutogradError> {
        let s = self.shape(x);
        if start + len > s.cols {
            return Err(AutogradError::IndexOutOfRange {
                index: start + len,
                limit: s.cols,
            });
        }
        let vx = self.value(x);
        let mut out = Tensor::zeros(s.rows, len);
        for r in 0..s.rows {
            out.row_mut(r).copy_from_slice(&vx.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Mean over `axis`: `Rows` averages rows into a `1 x c` row.
    pub fn mean_pool(&mut self, x: Var, axis: Axis) -> Result<Var, AutogradError> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.is_empty() {
            return Err(AutogradError::EmptyInput("mean_pool"));
        }
        let out = match axis {
            Axis::Rows => {
                let mut out = Tensor::zeros(1, s.cols);
                for r in 0..s.rows {
                    for (o, v) in out.data_mut().iter_mut().zip(vx.row(r)) {
                        *o += v;
                    }
                }
                out.map(|v| v / s.rows as f64)
            }
            Axis::Cols => {
                let data = (0..s.rows)
                    .map(|r| vx.row(r).iter().sum::<f64>() / s.cols as f64)
                    .collect();
                Tensor::from_vec(s.rows, 1, data)?
            }
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Mean { x, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    /// Gathers `table` rows; output row `i` is `table[ids[i]]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutogradError> {
        let vt = self.value(table);
        let mut out = Tensor::zeros(ids.len(), vt.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= vt.rows() {
                return Err(AutogradError::IndexOutOfRange {
                    index: id,
                    limit: vt.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(vt.row(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise softmax restricted to entries where `mask` is true. Masked
    /// entries come out as exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, AutogradError> {
        let vx = self.value(x);
        let s = vx.shape();
        if mask.len() != s.len() {
            return Err(mismatch("masked_softmax", s, Shape::new(1, mask.len())));
        }
        let mut out = Tensor::zeros(s.rows, s.cols);
        for r in 0..s.rows {
            let row = vx.row(r);
            let m = &mask[r * s.cols..(r + 1) * s.cols];
            softmax_row(row, |j| m[j], out.row_mut(r)).ok_or(AutogradError::FullyMaskedRow { row: r })?;
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::MaskedSoftmax(x),
            rg,
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, AutogradError> {
        let mask = vec![true; self.shape(x).len()];
        self.masked_softmax(x, &mask)
    }

    /// Single entry as a `1 x 1` tensor.
    pub fn pick(&mut self, x: Var, row: usize, col: usize) -> Result<Var, AutogradError> {
        let s = self.shape(x);
        if row >= s.rows || col >= s.cols {
            return Err(AutogradError::IndexOutOfRange {
                index: row * s.cols + col,
                limit: s.len(),
            });
        }
        let out = Tensor::scalar(self.value(x).get(row, col));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Pick { x, row, col }, rg))
    }

    /// Banded self-similarity scores of the rows of `x`.
    ///
    /// Output is `len x (2h+1)` with `h = min(half_width, len-1)`; slot `o` of
    /// row `i` holds `x_i . x_{i+o-h}`. Slots that fall outside the sequence
    /// hold `-inf`.
    pub fn band_scores(&mut self, x: Var, half_width: usize) -> Var {
        let vx = self.value(x);
        let len = vx.rows();
        let (hw, width) = band_width(len, half_width);
        let mut out = Tensor::filled(len, width, f64::NEG_INFINITY);
        for i in 0..len {
            for o in 0..width {
                if let Some(j) = band_col(i, o, hw, len) {
                    out.set(i, o, dot(vx.row(i), vx.row(j)));
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::BandScores { x, half_width }, rg)
    }

    /// Row-wise softmax over the in-range slots of banded scores.
    pub fn band_softmax(&mut self, x: Var, half_width: usize) -> Var {
        let vx = self.value(x);
        let len = vx.rows();
        let (hw, width) = band_width(len, half_width);
        let mut out = Tensor::zeros(len, width);
        for i in 0..len {
            // the diagonal slot is always in range
            softmax_row(vx.row(i), |o| band_col(i, o, hw, len).is_some(), out.row_mut(i))
                .expect("band row contains its diagonal");
        }
        let rg = self.rg(x);
        self.push(out, Op::BandSoftmax(x), rg)
    }

    /// Row `i` of the output is `sum_o weights[i,o] * values[i+o-h]`.
    pub fn band_apply(&mut self, weights: Var, values: Var, half_width: usize) -> Result<Var, AutogradError> {
        let (vw, vv) = (self.value(weights), self.value(values));
        let len = vv.rows();
        let (hw, width) = band_width(len, half_width);
        if vw.shape() != Shape::new(len, width) {
            return Err(mismatch("band_apply", vw.shape(), vv.shape()));
        }
        let mut out = Tensor::zeros(len, vv.cols());
        for i in 0..len {
            for o in 0..width {
                let w = vw.get(i, o);
                if w == 0.0 {
                    continue;
                }
                if let Some(j) = band_col(i, o, hw, len) {
                    let src = vv.row(j).to_vec();
                    for (t, s) in out.row_mut(i).iter_mut().zip(src) {
                        *t += w * s;
                    }
                }
            }
        }
        let rg = self.rg(weights) || self.rg(values);
        Ok(self.push(
            out,
            Op::BandApply {
                weights,
                values,
                half_width,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar. Gradients add onto whatever earlier passes
    /// left in the nodes.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        let s = self.shape(loss);
        if s != Shape::new(1, 1) {
            return Err(AutogradError::NonScalarLoss(s));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut adj);
            match &mut self.nodes[idx].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Clears node gradients so the next backward starts from zero.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Adds every parameter leaf's gradient into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let send = |v: Var, t: Tensor, adj: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, g.matmul_raw(&vb.transpose()), adj);
                }
                if self.rg(*b) {
                    send(*b, va.transpose().matmul_raw(g), adj);
                }
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                match op {
                    Binary::Add => {
                        send(*a, g.clone(), adj);
                        send(*b, g.clone(), adj);
                    }
                    Binary::Sub => {
                        send(*a, g.clone(), adj);
                        send(*b, g.map(|x| -x), adj);
                    }
                    Binary::Hadamard => {
                        if self.rg(*a) {
                            send(*a, zip_map(g, vb, |x, y| x * y), adj);
                        }
                        if self.rg(*b) {
                            send(*b, zip_map(g, va, |x, y| x * y), adj);
                        }
                    }
                }
            }
            Op::AddRowBias(a, bias) => {
                send(*a, g.clone(), adj);
                if self.rg(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*bias, gb, adj);
                }
            }
            Op::Unary(op, a) => {
                let t = match op {
                    Unary::Sigmoid => zip_map(g, y, |g, y| g * y * (1.0 - y)),
                    Unary::Tanh => zip_map(g, y, |g, y| g * (1.0 - y * y)),
                    Unary::Relu => zip_map(g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                };
                send(*a, t, adj);
            }
            Op::Ln(a) => {
                let t = zip_map(g, self.value(*a), |g, x| if x > LN_FLOOR { g / x } else { 0.0 });
                send(*a, t, adj);
            }
            Op::Affine { x, scale } => send(*x, g.map(|v| v * scale), adj),
            Op::ScaleBy { x, s } => {
                let k = self.value(*s).item();
                if self.rg(*x) {
                    send(*x, g.map(|v| v * k), adj);
                }
                if self.rg(*s) {
                    let ds = dot(g.data(), self.value(*x).data());
                    send(*s, Tensor::scalar(ds), adj);
                }
            }
            Op::Concat { inputs, axis } => {
                let mut off = 0;
                for &v in inputs {
                    let s = self.shape(v);
                    let part = match axis {
                        Axis::Cols => {
                            let mut t = Tensor::zeros(s.rows, s.cols);
                            for r in 0..s.rows {
                                t.row_mut(r).copy_from_slice(&g.row(r)[off..off + s.cols]);
                            }
                            off += s.cols;
                            t
                        }
                        Axis::Rows => {
                            let data = g.data()[off * s.cols..(off + s.rows) * s.cols].to_vec();
                            off += s.rows;
                            Tensor::from_vec(s.rows, s.cols, data).expect("concat part")
                        }
                    };
                    send(v, part, adj);
                }
            }
            Op::SliceRows { x, start } => {
                let s = self.shape(*x);
                let mut t = Tensor::zeros(s.rows, s.cols);
                t.data_mut()[start * s.cols..start * s.cols + g.data().len()].copy_from_slice(g.data());
                send(*x, t, adj);
            }
            Op::SliceCols { x, start } => {
                let s = self.shape(*x);
                let mut t = Tensor::zeros(s.rows, s.cols);
                for r in 0..s.rows {
                    t.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                send(*x, t, adj);
            }
            Op::Mean { x, axis } => {
                let s = self.shape(*x);
                let mut t = Tensor::zeros(s.rows, s.cols);
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        let v = match axis {
                            Axis::Rows => g.get(0, c) / s.rows as f64,
                            Axis::Cols => g.get(r, 0) / s.cols as f64,
                        };
                        t.set(r, c, v);
                    }
                }
                send(*x, t, adj);
            }
            Op::Sum(x) => {
                let s = self.shape(*x);
                send(*x, Tensor::filled(s.rows, s.cols, g.item()), adj);
            }
            Op::Transpose(x) => send(*x, g.transpose(), adj),
            Op::Embedding { table, ids } => {
                let s = self.shape(*table);
                let mut t = Tensor::zeros(s.rows, s.cols);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, v) in t.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                send(*table, t, adj);
            }
            Op::MaskedSoftmax(x) | Op::BandSoftmax(x) => {
                // dx_j = y_j (g_j - sum_k y_k g_k); masked entries have y = 0
                let mut t = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = dot(y.row(r), g.row(r));
                    for ((o, &yv), &gv) in t.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = yv * (gv - inner);
                    }
                }
                send(*x, t, adj);
            }
            Op::Pick { x, row, col } => {
                let s = self.shape(*x);
                let mut t = Tensor::zeros(s.rows, s.cols);
                t.set(*row, *col, g.item());
                send(*x, t, adj);
            }
            Op::BandScores { x, half_width } => {
                let vx = self.value(*x);
                let len = vx.rows();
                let (hw, width) = band_width(len, *half_width);
                let mut t = Tensor::zeros(len, vx.cols());
                for i in 0..len {
                    for o in 0..width {
                        let Some(j) = band_col(i, o, hw, len) else { continue };
                        let gv = g.get(i, o);
                        if gv == 0.0 {
                            continue;
                        }
                        for c in 0..vx.cols() {
                            let (xi, xj) = (vx.get(i, c), vx.get(j, c));
                            t.data_mut()[i * vx.cols() + c] += gv * xj;
                            t.data_mut()[j * vx.cols() + c] += gv * xi;
                        }
                    }
                }
                send(*x, t, adj);
            }
            Op::BandApply {
                weights,
                values,
                half_width,
            } => {
                let (vw, vv) = (self.value(*weights), self.value(*values));
                let len = vv.rows();
                let (hw, width) = band_width(len, *half_width);
                let mut gw = Tensor::zeros(len, width);
                let mut gv = Tensor::zeros(len, vv.cols());
                for i in 0..len {
                    for o in 0..width {
                        let Some(j) = band_col(i, o, hw, len) else { continue };
                        gw.set(i, o, dot(g.row(i), vv.row(j)));
                        let w = vw.get(i, o);
                        for c in 0..vv.cols() {
                            gv.data_mut()[j * vv.cols() + c] += w * g.get(i, c);
                        }
                    }
                }
                if self.rg(*weights) {
                    send(*weights, gw, adj);
                }
                if self.rg(*values) {
                    send(*values, gv, adj);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("zip_map shapes")
}

/// Stabilized softmax of `row` over entries where `keep` holds; returns
/// `None` when nothing is kept.
fn softmax_row(row: &[f64], keep: impl Fn(usize) -> bool, out: &mut [f64]) -> Option<()> {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &v)| v)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))?;
    let mut total = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
        *o = if keep(j) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Some(())
}
