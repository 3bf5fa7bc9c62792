use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::{AutodiffError, Real, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// How a node was produced. Parents are tape indices; every backward rule is
/// written in terms of other recorded operations, so a gradient computed
/// with `create_graph = true` can itself be differentiated.
#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `c * x` or `c * x + d`; the shift does not affect the derivative.
    Scale(usize, T),
    Powf(usize, T),
    MulConst(usize, Rc<Tensor<T>>),
    MatMul(usize, usize),
    Transpose(usize),
    BroadcastRows(usize),
    SumRows(usize),
    BroadcastCols(usize),
    SumCols(usize),
    SumAll(usize),
    Expand(usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
    SelectElems(usize, Rc<[usize]>),
    ScatterElems(usize, Rc<[usize]>),
    Cross3(usize, usize),
}

impl<T> Op<T> {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | Cross3(a, b) => [Some(*a), Some(*b)],
            Scale(a, _)
            | Powf(a, _)
            | MulConst(a, _)
            | Transpose(a)
            | BroadcastRows(a)
            | SumRows(a)
            | BroadcastCols(a)
            | SumCols(a)
            | SumAll(a)
            | Expand(a)
            | GatherRows(a, _)
            | ScatterAddRows(a, _)
            | SelectElems(a, _)
            | ScatterElems(a, _) => [Some(*a), None],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward/backward computation.
///
/// Nodes are appended in creation order, which is a topological order, so
/// the backward sweep simply walks indices downwards.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
    kink_signature: Cell<u64>,
    ties: Cell<usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
            kink_signature: Cell::new(0xcbf2_9ce4_8422_2325),
            ties: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Rc::new(value), true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Rc::new(value), false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&self, value: Rc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let requires_grad = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.parents()
                .iter()
                .flatten()
                .any(|&p| nodes[p].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    /// Hash of every branch decision (row-max winners, rectifier signs)
    /// taken so far. Two evaluations with equal signatures lie on the same
    /// smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature.get()
    }

    /// Number of exact ties met at non-smooth points.
    pub fn ties(&self) -> usize {
        self.ties.get()
    }

    fn note_kink(&self, word: u64) {
        let h = (self.kink_signature.get() ^ word).wrapping_mul(0x0100_0000_01b3);
        self.kink_signature.set(h);
    }

    /// Gradients of the scalar `loss` with respect to `wrt`. Inputs that do
    /// not influence the loss get zeros. With `create_graph`, the returned
    /// gradients are themselves differentiable.
    pub fn grad<'t>(
        &'t self,
        loss: Var<'t, T>,
        wrt: &[Var<'t, T>],
        create_graph: bool,
    ) -> Result<Vec<Var<'t, T>>> {
        let shape = loss.shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss { shape });
        }
        let end = loss.id + 1;
        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; end];
        let previous = self.recording.replace(create_graph);
        let outcome = (|| {
            grads[loss.id] = Some(self.constant(Tensor::scalar(T::one())));
            for id in (0..end).rev() {
                let Some(g) = grads[id] else { continue };
                let op = {
                    let nodes = self.nodes.borrow();
                    if !nodes[id].requires_grad {
                        continue;
                    }
                    nodes[id].op.clone()
                };
                for (parent, contribution) in self.backward_rule(&op, id, g)? {
                    grads[parent] = Some(match grads[parent] {
                        Some(existing) => existing.add(contribution)?,
                        None => contribution,
                    });
                }
            }
            Ok(())
        })();
        self.recording.set(previous);
        outcome?;

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => {
                    let [r, c] = w.shape();
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    /// First-order gradients as plain tensors.
    pub fn backward<'t>(&'t self, loss: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Tensor<T>>> {
        Ok(self
            .grad(loss, wrt, false)?
            .into_iter()
            .map(|g| (*g.value()).clone())
            .collect())
    }

    fn backward_rule<'t>(
        &'t self,
        op: &Op<T>,
        out: usize,
        g: Var<'t, T>,
    ) -> Result<Vec<(usize, Var<'t, T>)>> {
        use Op::*;
        let needs = |id: usize| self.requires_grad(id);
        let mut out_grads = Vec::with_capacity(2);
        match op {
            Leaf => {}
            Add(a, b) => {
                if needs(*a) {
                    out_grads.push((*a, g));
                }
                if needs(*b) {
                    out_grads.push((*b, g));
                }
            }
            Sub(a, b) => {
                if needs(*a) {
                    out_grads.push((*a, g));
                }
                if needs(*b) {
                    out_grads.push((*b, g.scale(-T::one())));
                }
            }
            Mul(a, b) => {
                if needs(*a) {
                    out_grads.push((*a, g.mul(self.var(*b))?));
                }
                if needs(*b) {
                    out_grads.push((*b, g.mul(self.var(*a))?));
                }
            }
            Scale(a, c) => out_grads.push((*a, g.scale(*c))),
            Powf(a, p) => {
                let x = self.var(*a);
                let slope = x.powf(*p - T::one()).scale(*p);
                out_grads.push((*a, g.mul(slope)?));
            }
            MulConst(a, m) => out_grads.push((*a, g.mul_const(Rc::clone(m))?)),
            MatMul(a, b) => {
                if needs(*a) {
                    out_grads.push((*a, g.matmul(self.var(*b).transpose())?));
                }
                if needs(*b) {
                    out_grads.push((*b, self.var(*a).transpose().matmul(g)?));
                }
            }
            Transpose(a) => out_grads.push((*a, g.transpose())),
            BroadcastRows(a) => out_grads.push((*a, g.sum_rows())),
            SumRows(a) => {
                let rows = self.var(*a).shape()[0];
                out_grads.push((*a, g.broadcast_rows(rows)?));
            }
            BroadcastCols(a) => out_grads.push((*a, g.sum_cols())),
            SumCols(a) => {
                let cols = self.var(*a).shape()[1];
                out_grads.push((*a, g.broadcast_cols(cols)?));
            }
            SumAll(a) => out_grads.push((*a, g.expand(self.var(*a).shape())?)),
            Expand(a) => out_grads.push((*a, g.sum_all())),
            GatherRows(a, idx) => {
                let rows = self.var(*a).shape()[0];
                out_grads.push((*a, g.scatter_add_rows(Rc::clone(idx), rows)?));
            }
            ScatterAddRows(a, idx) => out_grads.push((*a, g.gather_rows(Rc::clone(idx))?)),
            SelectElems(a, idx) => {
                let shape = self.var(*a).shape();
                out_grads.push((*a, g.scatter_elems(Rc::clone(idx), shape)?));
            }
            ScatterElems(a, idx) => {
                let shape = self.var(*a).shape();
                out_grads.push((*a, g.select_elems(Rc::clone(idx), shape)?));
            }
            Cross3(a, b) => {
                if needs(*a) {
                    out_grads.push((*a, self.var(*b).cross3(g)?));
                }
                if needs(*b) {
                    out_grads.push((*b, g.cross3(self.var(*a))?));
                }
            }
        }
        debug_assert!(out_grads
            .iter()
            .all(|(p, v)| self.var(*p).shape() == v.shape()), "gradient shape mismatch below node {out}");
        Ok(out_grads)
    }
}

/// Handle to a tape node.
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> T {
        self.value().item()
    }

    /// A constant sharing this node's value.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.push_leaf(self.value(), false)
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("add", &self, &rhs)?;
        let v = self.value().zip_map(&rhs.value(), |a, b| a + b);
        Ok(self.tape.push(v, Op::Add(self.id, rhs.id)))
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("sub", &self, &rhs)?;
        let v = self.value().zip_map(&rhs.value(), |a, b| a - b);
        Ok(self.tape.push(v, Op::Sub(self.id, rhs.id)))
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("mul", &self, &rhs)?;
        let v = self.value().zip_map(&rhs.value(), |a, b| a * b);
        Ok(self.tape.push(v, Op::Mul(self.id, rhs.id)))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|a| a * c);
        self.tape.push(v, Op::Scale(self.id, c))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(self, scale: T, shift: T) -> Var<'t, T> {
        let v = self.value().map(|a| a * scale + shift);
        self.tape.push(v, Op::Scale(self.id, scale))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn powf(self, p: T) -> Var<'t, T> {
        let v = self.value().map(|a| a.powf(p));
        self.tape.push(v, Op::Powf(self.id, p))
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.powf(T::from(0.5).unwrap())
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, m: Rc<Tensor<T>>) -> Result<Var<'t, T>> {
        if self.shape() != m.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                left: self.shape(),
                right: m.shape(),
            });
        }
        let v = self.value().zip_map(&m, |a, b| a * b);
        Ok(self.tape.push(v, Op::MulConst(self.id, m)))
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.shape(), rhs.shape());
        if a[1] != b[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: a,
                right: b,
            });
        }
        let v = self.value().matmul(&rhs.value());
        Ok(self.tape.push(v, Op::MatMul(self.id, rhs.id)))
    }

    pub fn transpose(self) -> Var<'t, T> {
        let v = self.value().transpose();
        self.tape.push(v, Op::Transpose(self.id))
    }

    /// Repeat a `1 × n` row `rows` times.
    pub fn broadcast_rows(self, rows: usize) -> Result<Var<'t, T>> {
        let [r, c] = self.shape();
        if r != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                left: [r, c],
                right: [rows, c],
            });
        }
        let src = self.value();
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(src.data());
        }
        Ok(self
            .tape
            .push(Tensor::new(rows, c, data)?, Op::BroadcastRows(self.id)))
    }

    /// Column sums, `m × n -> 1 × n`.
    pub fn sum_rows(self) -> Var<'t, T> {
        let src = self.value();
        let [r, c] = src.shape();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(src.row(i)) {
                *o = *o + v;
            }
        }
        self.tape
            .push(Tensor::new(1, c, out).expect("shape"), Op::SumRows(self.id))
    }

    /// Repeat an `m × 1` column `cols` times.
    pub fn broadcast_cols(self, cols: usize) -> Result<Var<'t, T>> {
        let [r, c] = self.shape();
        if c != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_cols",
                left: [r, c],
                right: [r, cols],
            });
        }
        let src = self.value();
        let v = Tensor::from_fn(r, cols, |i, _| src.data()[i]);
        Ok(self.tape.push(v, Op::BroadcastCols(self.id)))
    }

    /// Row sums, `m × n -> m × 1`.
    pub fn sum_cols(self) -> Var<'t, T> {
        let src = self.value();
        let r = src.rows();
        let v = Tensor::from_fn(r, 1, |i, _| src.row(i).iter().fold(T::zero(), |acc, &x| acc + x));
        self.tape.push(v, Op::SumCols(self.id))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    /// Broadcast a `1 × 1` value to `shape`.
    pub fn expand(self, shape: [usize; 2]) -> Result<Var<'t, T>> {
        if self.shape() != [1, 1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "expand",
                left: self.shape(),
                right: shape,
            });
        }
        let v = Tensor::filled(shape[0], shape[1], self.item());
        Ok(self.tape.push(v, Op::Expand(self.id)))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(self, idx: Rc<[usize]>) -> Result<Var<'t, T>> {
        let src = self.value();
        let [r, c] = src.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: r });
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(src.row(i));
        }
        Ok(self
            .tape
            .push(Tensor::new(idx.len(), c, data)?, Op::GatherRows(self.id, idx)))
    }

    /// Adds input row `i` into output row `idx[i]` of a `rows`-row result.
    /// Rows are accumulated in input order.
    pub fn scatter_add_rows(self, idx: Rc<[usize]>, rows: usize) -> Result<Var<'t, T>> {
        let src = self.value();
        let [r, c] = src.shape();
        if r != idx.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_add_rows",
                left: [r, c],
                right: [idx.len(), c],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: rows });
        }
        let mut out = Tensor::zeros(rows, c);
        for (i, &dst) in idx.iter().enumerate() {
            let row = src.row(i);
            let o = &mut out.data_mut()[dst * c..(dst + 1) * c];
            for (a, &b) in o.iter_mut().zip(row) {
                *a = *a + b;
            }
        }
        Ok(self.tape.push(out, Op::ScatterAddRows(self.id, idx)))
    }

    /// Output element `j` (row-major in `shape`) is input element `idx[j]`.
    pub fn select_elems(self, idx: Rc<[usize]>, shape: [usize; 2]) -> Result<Var<'t, T>> {
        let src = self.value();
        if idx.len() != shape[0] * shape[1] {
            return Err(AutodiffError::DataLength {
                shape,
                len: idx.len(),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(AutodiffError::IndexOutOfRange {
                index: bad,
                len: src.len(),
            });
        }
        let data = idx.iter().map(|&i| src.data()[i]).collect();
        Ok(self
            .tape
            .push(Tensor::new(shape[0], shape[1], data)?, Op::SelectElems(self.id, idx)))
    }

    /// Adds input element `j` into output element `idx[j]` of a tensor with
    /// `shape`.
    pub fn scatter_elems(self, idx: Rc<[usize]>, shape: [usize; 2]) -> Result<Var<'t, T>> {
        let src = self.value();
        if idx.len() != src.len() {
            return Err(AutodiffError::DataLength {
                shape: src.shape(),
                len: idx.len(),
            });
        }
        let total = shape[0] * shape[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= total) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: total });
        }
        let mut out = Tensor::zeros(shape[0], shape[1]);
        for (j, &dst) in idx.iter().enumerate() {
            out.data_mut()[dst] = out.data()[dst] + src.data()[j];
        }
        Ok(self.tape.push(out, Op::ScatterElems(self.id, idx)))
    }

    /// Row-wise cross product of two `m × 3` tensors.
    pub fn cross3(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("cross3", &self, &rhs)?;
        if self.shape()[1] != 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross3",
                left: self.shape(),
                right: [self.shape()[0], 3],
            });
        }
        let (a, b) = (self.value(), rhs.value());
        let mut data = Vec::with_capacity(a.len());
        for i in 0..a.rows() {
            let (p, q) = (a.row(i), b.row(i));
            data.push(p[1] * q[2] - p[2] * q[1]);
            data.push(p[2] * q[0] - p[0] * q[2]);
            data.push(p[0] * q[1] - p[1] * q[0]);
        }
        Ok(self
            .tape
            .push(Tensor::new(a.rows(), 3, data)?, Op::Cross3(self.id, rhs.id)))
    }

    /// Column-wise maximum over consecutive blocks of `group` rows,
    /// `(group·m) × n -> m × n`. Ties go to the lowest row; the returned
    /// index list maps each output element to the winning input element.
    pub fn group_max(self, group: usize) -> Result<(Var<'t, T>, Rc<[usize]>)> {
        let src = self.value();
        let [r, c] = src.shape();
        if group == 0 || r % group != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "group_max",
                left: [r, c],
                right: [group, c],
            });
        }
        let m = r / group;
        let mut idx = Vec::with_capacity(m * c);
        let mut ties = 0;
        for g in 0..m {
            for j in 0..c {
                let mut best = g * group * c + j;
                for row in 1..group {
                    let at = (g * group + row) * c + j;
                    let (v, b) = (src.data()[at], src.data()[best]);
                    if v > b {
                        best = at;
                    } else if v == b {
                        ties += 1;
                    }
                }
                idx.push(best);
            }
        }
        for &i in &idx {
            self.tape.note_kink(i as u64);
        }
        self.tape.ties.set(self.tape.ties.get() + ties);
        let idx: Rc<[usize]> = idx.into();
        let out = self.select_elems(Rc::clone(&idx), [m, c])?;
        Ok((out, idx))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        let src = self.value();
        let mut zeros = 0;
        let mask = src.map(|v| if v > T::zero() { T::one() } else { slope });
        let mut word = 0u64;
        for (i, &v) in src.data().iter().enumerate() {
            if v == T::zero() {
                zeros += 1;
            }
            if v > T::zero() {
                word = word.rotate_left(1) ^ (i as u64);
            }
        }
        self.tape.note_kink(word);
        self.tape.ties.set(self.tape.ties.get() + zeros);
        self.mul_const(Rc::new(mask)).expect("mask has the input's shape")
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = T::from(self.value().len()).unwrap();
        self.sum_all().scale(T::one() / n)
    }

    /// Column means, `m × n -> 1 × n`.
    pub fn mean_rows(self) -> Var<'t, T> {
        let m = T::from(self.shape()[0]).unwrap();
        self.sum_rows().scale(T::one() / m)
    }

    pub fn square(self) -> Var<'t, T> {
        self.mul(self).expect("same shape")
    }

    /// Mean of squared entries.
    pub fn mean_square(self) -> Var<'t, T> {
        self.square().mean_all()
    }

    /// Euclidean norm of all entries, `1 × 1`.
    pub fn l2_norm(self) -> Var<'t, T> {
        self.square().sum_all().sqrt()
    }

    /// Per-row dot product of two `m × n` tensors, `m × 1`.
    pub fn row_dot(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.mul(rhs)?.sum_cols())
    }

    /// Per-row Euclidean norm, `m × 1`; `eps` is added under the root.
    pub fn row_norm(self, eps: T) -> Var<'t, T> {
        self.square().sum_cols().affine(T::one(), eps).sqrt()
    }

    /// Divide every row by its Euclidean norm.
    pub fn normalize_rows(self) -> Result<Var<'t, T>> {
        let cols = self.shape()[1];
        let inv = self.square().sum_cols().powf(T::from(-0.5).unwrap());
        self.mul(inv.broadcast_cols(cols)?)
    }

    /// Standardize each column over the rows (one instance), without the
    /// learned affine.
    pub fn instance_norm(self, eps: T) -> Result<Var<'t, T>> {
        let [r, _] = self.shape();
        if r < 2 {
            return Err(AutodiffError::TooFewRows { op: "instance_norm", rows: r });
        }
        let mean = self.mean_rows().broadcast_rows(r)?;
        let centered = self.sub(mean)?;
        let var = centered.square().mean_rows();
        let inv_std = var.affine(T::one(), eps).powf(T::from(-0.5).unwrap());
        centered.mul(inv_std.broadcast_rows(r)?)
    }

    /// Add a `1 × n` row to every row.
    pub fn add_row(self, row: Var<'t, T>) -> Result<Var<'t, T>> {
        let r = self.shape()[0];
        self.add(row.broadcast_rows(r)?)
    }

    /// Multiply every row elementwise by a `1 × n` row.
    pub fn mul_row(self, row: Var<'t, T>) -> Result<Var<'t, T>> {
        let r = self.shape()[0];
        self.mul(row.broadcast_rows(r)?)
    }
}
