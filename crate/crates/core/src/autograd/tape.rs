//! Reverse-mode differentiation by operation recording.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. Node ids are assigned in creation order, so inputs always
//! precede outputs and the backward sweep is a plain reverse scan.

use super::{AutogradError, Gradients, ParamId, ParamStore, Tensor};

/// Probability floor applied before taking a log in [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Constant,
    Affine { x: Var, w: Var, b: Option<Var> },
    AddRows { m: Var, row: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Activation(Var, Activation),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    StackRows(Vec<Var>),
    Reshape(Var),
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    CrossEntropy { probs: Var, gold: usize },
    Lookup { table: Var, index: usize, zeroed: bool },
    MulConst { x: Var, factors: Vec<f64> },
    Scale { x: Var, factor: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
}

/// Append-only record of a forward computation over a borrowed parameter set.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> AutogradError {
    AutogradError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { op: Op::Param(id), .. } => self.params.get(*id),
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("non-parameter node without value"),
        }
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// `x W + b` with `x` as `[m, k]` (or `[k]`, treated as one row),
    /// `W` as `[k, n]` and optional row-broadcast bias `b` as `[n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.rank() != 2 || xv.rank() > 2 {
            return Err(shape_err("affine", xv, wv));
        }
        let (m, k) = xv.as_matrix_dims();
        let (wk, n) = wv.as_matrix_dims();
        if k != wk {
            return Err(shape_err("affine", xv, wv));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [n] {
                return Err(shape_err("affine bias", wv, bv));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv.data());
            }
        }
        let xd = xv.data();
        let wd = wv.data();
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = xd[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let wrow = &wd[p * n..(p + 1) * n];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += a * wv;
                }
            }
        }
        let shape = if xv.rank() == 1 { vec![n] } else { vec![m, n] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    /// Adds a length-`c` row to every row of an `[r, c]` matrix.
    pub fn add_rows(&mut self, m: Var, row: Var) -> Result<Var, AutogradError> {
        let mv = self.value(m);
        let rv = self.value(row);
        let (_, c) = mv.as_matrix_dims();
        if mv.rank() != 2 || rv.shape() != [c] {
            return Err(shape_err("add_rows", mv, rv));
        }
        let mut out = mv.clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        Ok(self.push(Op::AddRows { m, row }, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn elementwise(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let data = match kind {
            Activation::Tanh => xv.data().iter().map(|v| v.tanh()).collect(),
            Activation::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
        };
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(Op::Activation(x, kind), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.elementwise(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.elementwise(x, Activation::Sigmoid)
    }

    /// Concatenates rank-1 nodes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutogradError> {
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 1 {
                return Err(AutogradError::RankMismatch {
                    op: "concat",
                    expected: 1,
                    shape: pv.shape().to_vec(),
                });
            }
            data.extend_from_slice(pv.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Contiguous sub-range `[start, start + len)` of a rank-1 node.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if xv.rank() != 1 || start + len > xv.len() {
            return Err(AutogradError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                len: xv.len(),
            });
        }
        let data = xv.data()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, Tensor::vector(data)))
    }

    /// Stacks equal-length rank-1 nodes into an `[rows, cols]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, AutogradError> {
        let first = rows.first().ok_or(AutogradError::Empty { op: "stack_rows" })?;
        let cols = self.value(*first).len();
        let mut data = Vec::with_capacity(cols * rows.len());
        for &r in rows {
            let rv = self.value(r);
            if rv.shape() != [cols] {
                return Err(shape_err("stack_rows", self.value(*first), rv));
            }
            data.extend_from_slice(rv.data());
        }
        let value = Tensor::matrix(rows.len(), cols, data)?;
        Ok(self.push(Op::StackRows(rows.to_vec()), value))
    }

    /// Reinterprets the node's data under a new shape of the same size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let value = Tensor::new(shape.to_vec(), xv.data().to_vec())?;
        Ok(self.push(Op::Reshape(x), value))
    }

    /// Softmax over positions where `valid` is set; masked positions get 0.
    pub fn masked_softmax(&mut self, x: Var, valid: &[bool]) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.len() != valid.len() {
            return Err(AutogradError::MaskLength {
                len: xv.len(),
                mask: valid.len(),
            });
        }
        let max = xv
            .data()
            .iter()
            .zip(valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(AutogradError::EmptyMask);
        }
        let mut out: Vec<f64> = xv
            .data()
            .iter()
            .zip(valid)
            .map(|(&v, &ok)| if ok { (v - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        let value = Tensor::vector(out);
        Ok(self.push(
            Op::MaskedSoftmax {
                x,
                mask: valid.to_vec(),
            },
            value,
        ))
    }

    /// `-ln(max(probs[gold], PROB_FLOOR))`.
    pub fn cross_entropy(&mut self, probs: Var, gold: usize) -> Result<Var, AutogradError> {
        let pv = self.value(probs);
        if pv.rank() != 1 {
            return Err(AutogradError::RankMismatch {
                op: "cross_entropy",
                expected: 1,
                shape: pv.shape().to_vec(),
            });
        }
        if gold >= pv.len() {
            return Err(AutogradError::IndexOutOfRange {
                op: "cross_entropy",
                index: gold,
                len: pv.len(),
            });
        }
        let total = pv.sum();
        if pv.data().iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(AutogradError::NotADistribution { sum: total });
        }
        let p = pv.data()[gold].max(PROB_FLOOR);
        Ok(self.push(Op::CrossEntropy { probs, gold }, Tensor::scalar(-p.ln())))
    }

    /// Row `index` of a `[V, e]` table, or zeros when `zeroed` is set.
    pub fn embedding_lookup(&mut self, table: Var, index: usize, zeroed: bool) -> Result<Var, AutogradError> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(AutogradError::RankMismatch {
                op: "embedding_lookup",
                expected: 2,
                shape: tv.shape().to_vec(),
            });
        }
        let (rows, cols) = tv.as_matrix_dims();
        if index >= rows {
            return Err(AutogradError::IndexOutOfRange {
                op: "embedding_lookup",
                index,
                len: rows,
            });
        }
        let value = if zeroed {
            Tensor::zeros(&[cols])
        } else {
            Tensor::vector(tv.row(index).to_vec())
        };
        Ok(self.push(Op::Lookup { table, index, zeroed }, value))
    }

    /// Entrywise product with a fixed factor vector (dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(AutogradError::MaskLength {
                len: xv.len(),
                mask: factors.len(),
            });
        }
        let data = xv.data().iter().zip(&factors).map(|(a, b)| a * b).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(Op::MulConst { x, factors }, value))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|a| a * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale { x, factor }, value)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(total))
    }

    /// Backward sweep from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutogradError> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(loss, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates `seed * d loss / d param` into `grads`.
    pub fn backward_into(&self, loss: Var, seed: f64, grads: &mut Gradients) -> Result<(), AutogradError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutogradError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(AutogradError::GradientLayout {
                expected: self.params.len(),
                found: grads.len(),
            });
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        node_grads.resize_with(loss.0 + 1, || None);
        node_grads[loss.0] = Some(vec![seed]);

        let mut acc = Accumulator {
            tape: self,
            node_grads: &mut node_grads,
            grads,
        };

        for id in (0..=loss.0).rev() {
            let Some(dy) = acc.node_grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Param(pid) => {
                    let g = acc.grads.get_mut(*pid).data_mut();
                    for (a, b) in g.iter_mut().zip(&dy) {
                        *a += b;
                    }
                }
                Op::Constant => {}
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (m, k) = xv.as_matrix_dims();
                    let (_, n) = wv.as_matrix_dims();
                    if acc.wants(*x) {
                        let wd = wv.data();
                        acc.with(*x, |gx| {
                            for i in 0..m {
                                let dyr = &dy[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let wrow = &wd[p * n..(p + 1) * n];
                                    let s: f64 = dyr.iter().zip(wrow).map(|(a, b)| a * b).sum();
                                    gx[i * k + p] += s;
                                }
                            }
                        });
                    }
                    if acc.wants(*w) {
                        let xd = xv.data();
                        acc.with(*w, |gw| {
                            for i in 0..m {
                                let dyr = &dy[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let a = xd[i * k + p];
                                    if a == 0.0 {
                                        continue;
                                    }
                                    let grow = &mut gw[p * n..(p + 1) * n];
                                    for (g, d) in grow.iter_mut().zip(dyr) {
                                        *g += a * d;
                                    }
                                }
                            }
                        });
                    }
                    if let Some(b) = b {
                        acc.with(*b, |gb| {
                            for row in dy.chunks(n) {
                                for (g, d) in gb.iter_mut().zip(row) {
                                    *g += d;
                                }
                            }
                        });
                    }
                }
                Op::AddRows { m, row } => {
                    acc.with(*m, |gm| add_into(gm, &dy));
                    let c = self.value(*row).len();
                    acc.with(*row, |gr| {
                        for chunk in dy.chunks(c) {
                            add_into(gr, chunk);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc.with(*a, |g| add_into(g, &dy));
                    acc.with(*b, |g| add_into(g, &dy));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    acc.with(*a, |g| {
                        for ((g, d), y) in g.iter_mut().zip(&dy).zip(bv) {
                            *g += d * y;
                        }
                    });
                    acc.with(*b, |g| {
                        for ((g, d), x) in g.iter_mut().zip(&dy).zip(av) {
                            *g += d * x;
                        }
                    });
                }
                Op::Activation(x, kind) => {
                    let y = node.value.as_ref().expect("activation value").data();
                    let kind = *kind;
                    acc.with(*x, |g| {
                        for ((g, d), y) in g.iter_mut().zip(&dy).zip(y) {
                            *g += match kind {
                                Activation::Tanh => d * (1.0 - y * y),
                                Activation::Sigmoid => d * y * (1.0 - y),
                            };
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc.with(p, |g| add_into(g, &dy[offset..offset + n]));
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let start = *start;
                    acc.with(*x, |g| add_into(&mut g[start..start + dy.len()], &dy));
                }
                Op::StackRows(rows) => {
                    let cols = dy.len() / rows.len();
                    for (i, &r) in rows.iter().enumerate() {
                        acc.with(r, |g| add_into(g, &dy[i * cols..(i + 1) * cols]));
                    }
                }
                Op::Reshape(x) => {
                    acc.with(*x, |g| add_into(g, &dy));
                }
                Op::MaskedSoftmax { x, mask } => {
                    let y = node.value.as_ref().expect("softmax value").data();
                    let dot: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
                    acc.with(*x, |g| {
                        for (i, g) in g.iter_mut().enumerate() {
                            if mask[i] {
                                *g += y[i] * (dy[i] - dot);
                            }
                        }
                    });
                }
                Op::CrossEntropy { probs, gold } => {
                    let p = self.value(*probs).data()[*gold];
                    if p > PROB_FLOOR {
                        let gold = *gold;
                        acc.with(*probs, |g| g[gold] -= dy[0] / p);
                    }
                }
                Op::Lookup { table, index, zeroed } => {
                    if !*zeroed {
                        let cols = dy.len();
                        let start = index * cols;
                        acc.with(*table, |g| add_into(&mut g[start..start + cols], &dy));
                    }
                }
                Op::MulConst { x, factors } => {
                    acc.with(*x, |g| {
                        for ((g, d), f) in g.iter_mut().zip(&dy).zip(factors) {
                            *g += d * f;
                        }
                    });
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    acc.with(*x, |g| {
                        for (g, d) in g.iter_mut().zip(&dy) {
                            *g += d * f;
                        }
                    });
                }
                Op::Sum(x) => {
                    let d = dy[0];
                    acc.with(*x, |g| g.iter_mut().for_each(|g| *g += d));
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

struct Accumulator<'a, 'p> {
    tape: &'a Tape<'p>,
    node_grads: &'a mut Vec<Option<Vec<f64>>>,
    grads: &'a mut Gradients,
}

impl Accumulator<'_, '_> {
    fn wants(&self, v: Var) -> bool {
        !matches!(self.tape.nodes[v.0].op, Op::Constant)
    }

    /// Runs `f` on the gradient buffer of `v`. Parameter leaves write straight
    /// into the caller's accumulators; constants are skipped.
    fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        match &self.tape.nodes[v.0].op {
            Op::Constant => {}
            Op::Param(pid) => f(self.grads.get_mut(*pid).data_mut()),
            _ => {
                let len = self.tape.value(v).len();
                let slot = self.node_grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(slot);
            }
        }
    }
}
