//! Reverse-mode tape. Nodes are appended in evaluation order, so the node
//! list is always topologically sorted and backward is a single reverse sweep.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::conv::{self, CharConvCache};
use crate::error::{shape_err, NdError, Result};
use crate::kernels;
use crate::lstm::{self, LstmCache};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    Softmax(Var),
    Gather { table: Var, ids: Vec<Option<usize>> },
    PoolMaxLast { x: Var, len: usize, argmax: Vec<usize> },
    Lstm { x: Var, w: Var, b: Var, cache: LstmCache<T> },
    CharConv { table: Var, w: Var, b: Var, cache: CharConvCache },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
    BceWithLogits { logit: Var, label: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of primitive applications for one forward pass.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(NdError::ForeignVar);
        }
        Ok(&self.nodes[v.idx])
    }

    /// Value of a node. Panics on a handle from another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.idx].requires_grad)
    }

    /// A constant leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates gradient without being a stored parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a stored parameter. Repeated loads on one tape share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = if p.trainable {
            self.push(p.value.clone(), Op::Param(id), true)
        } else {
            self.push(p.value.clone(), Op::Leaf, false)
        };
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.check(a)?.value.shape(), self.check(b)?.value.shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let va = &self.nodes[a.idx].value;
        let vb = &self.nodes[b.idx].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a length-`d` vector to every row of `a` (`[n, d]` or `[d]`).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.check(a)?.value.dims2();
        let vb = &self.check(bias)?.value;
        if vb.rank() != 1 || vb.len() != cols {
            return Err(shape_err("add_row", format!("{:?} + {:?}", self.shape(a), vb.shape())));
        }
        let b = vb.data().to_vec();
        let va = &self.nodes[a.idx].value;
        let data = va
            .data()
            .chunks(cols.max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(&x, &y)| x + y).collect::<Vec<_>>())
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let va = &self.check(a)?.value;
        let data = va.data().iter().map(|&x| x * s).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Scale(a, s), rg))
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, a: Var, factors: Vec<T>) -> Result<Var> {
        let va = &self.check(a)?.value;
        if factors.len() != va.len() {
            return Err(shape_err("mul_const", format!("{} vs {}", va.len(), factors.len())));
        }
        let data = va.data().iter().zip(&factors).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::MulConst(a, factors), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let va = &self.check(a)?.value;
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, op, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::gelu, Op::Gelu(a))
    }

    /// `[m, k] x [k, n] -> [m, n]`; a rank-1 left operand yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = &self.check(a)?.value;
        let vb = &self.check(b)?.value;
        if va.rank() > 2 || vb.rank() != 2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let (m, k) = va.dims2();
        let (k2, n) = vb.dims2();
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(va.data(), vb.data(), m, k, n, &mut out);
        let shape = if va.rank() == 1 { vec![n] } else { vec![m, n] };
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `[m, k] x [k] -> [m]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let k = self.check(x)?.value.len();
        let xm = self.reshape(x, vec![k, 1])?;
        let y = self.matmul(a, xm)?;
        let m = self.value(y).shape()[0];
        self.reshape(y, vec![m])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = &self.check(a)?.value;
        if va.rank() != 2 {
            return Err(shape_err("transpose", format!("{:?}", va.shape())));
        }
        let (r, c) = va.dims2();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = va.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.check(a)?.value.clone().reshaped(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Concatenates rank-1 vectors end to end, or rank-2 matrices along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NdError::Invalid("concat of nothing".into()));
        }
        let rank = self.check(parts[0])?.value.rank();
        for &p in parts {
            if self.check(p)?.value.rank() != rank {
                return Err(shape_err("concat", "mixed ranks"));
            }
        }
        let value = match rank {
            1 => {
                let data: Vec<T> = parts
                    .iter()
                    .flat_map(|&p| self.nodes[p.idx].value.data().iter().copied())
                    .collect();
                Tensor::vector(data)
            }
            2 => {
                let rows = self.nodes[parts[0].idx].value.shape()[0];
                if parts.iter().any(|&p| self.nodes[p.idx].value.shape()[0] != rows) {
                    return Err(shape_err("concat", "row counts differ"));
                }
                let total: usize = parts.iter().map(|&p| self.nodes[p.idx].value.shape()[1]).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.nodes[p.idx].value.row(r));
                    }
                }
                Tensor::new(vec![rows, total], data)?
            }
            _ => return Err(shape_err("concat", format!("rank {rank}"))),
        };
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks rank-1 vectors as rows, or appends rank-2 blocks vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NdError::Invalid("stack of nothing".into()));
        }
        let (_, cols) = self.check(parts[0])?.value.dims2();
        let mut rows = 0;
        for &p in parts {
            let v = &self.check(p)?.value;
            if v.rank() == 0 || v.rank() > 2 || v.dims2().1 != cols {
                return Err(shape_err("stack_rows", format!("{:?}", v.shape())));
            }
            rows += v.dims2().0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.idx].value.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::StackRows(parts.to_vec()), rg))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = &self.check(a)?.value;
        if va.rank() != 2 || start > end || end > va.shape()[0] {
            return Err(shape_err("slice_rows", format!("{:?}[{start}..{end}]", va.shape())));
        }
        let cols = va.shape()[1];
        let value = Tensor::new(vec![end - start, cols], va.data()[start * cols..end * cols].to_vec())?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Row `i` of a rank-2 tensor as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let r = self.slice_rows(a, i, i + 1)?;
        let cols = self.value(r).shape()[1];
        self.reshape(r, vec![cols])
    }

    /// Columns `start..end` of a rank-2 tensor, or elements of a rank-1 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = &self.check(a)?.value;
        let (rows, cols) = va.dims2();
        if va.rank() == 0 || va.rank() > 2 || start > end || end > cols {
            return Err(shape_err("slice_cols", format!("{:?}[..,{start}..{end}]", va.shape())));
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        let shape = if va.rank() == 1 { vec![end - start] } else { vec![rows, end - start] };
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.check(a)?.value.data().iter().copied().sum();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.check(a)?.value.len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / lit::<T>(n as f64))
    }

    /// Softmax over the valid positions of a score vector; invalid positions are exactly 0.
    pub fn masked_softmax(&mut self, scores: Var, valid: &[bool]) -> Result<Var> {
        let v = &self.check(scores)?.value;
        if v.rank() != 1 || v.len() != valid.len() {
            return Err(shape_err(
                "masked_softmax",
                format!("scores {:?} vs mask of {}", v.shape(), valid.len()),
            ));
        }
        if !valid.iter().any(|&m| m) {
            return Err(NdError::EmptySupport);
        }
        let mut out = vec![T::zero(); v.len()];
        kernels::softmax_row(v.data(), Some(valid), &mut out);
        let value = Tensor::vector(out);
        let rg = self.any_grad(&[scores]);
        Ok(self.push(
            value,
            Op::Softmax(scores),
            rg,
        ))
    }

    /// Row-wise softmax of a rank-2 tensor; `key_mask` masks columns in every row.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let v = &self.check(a)?.value;
        if v.rank() != 2 {
            return Err(shape_err("softmax_rows", format!("{:?}", v.shape())));
        }
        let (rows, cols) = v.dims2();
        if let Some(m) = key_mask {
            if m.len() != cols {
                return Err(shape_err("softmax_rows", format!("mask {} vs {cols} columns", m.len())));
            }
            if !m.iter().any(|&x| x) {
                return Err(NdError::EmptySupport);
            }
        }
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            kernels::softmax_row(v.row(r), key_mask, &mut out[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::Softmax(a),
            rg,
        ))
    }

    fn gather(&mut self, table: Var, ids: Vec<Option<usize>>) -> Result<Var> {
        let t = &self.check(table)?.value;
        if t.rank() != 2 {
            return Err(shape_err("gather", format!("table {:?}", t.shape())));
        }
        let (rows, cols) = t.dims2();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for id in &ids {
            match id {
                Some(i) if *i >= rows => {
                    return Err(NdError::OutOfRange {
                        what: "embedding table",
                        index: *i,
                        size: rows,
                    })
                }
                Some(i) => data.extend_from_slice(t.row(*i)),
                None => data.extend(std::iter::repeat(T::zero()).take(cols)),
            }
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(value, Op::Gather { table, ids }, rg))
    }

    /// Looks up rows of an embedding table. Id 0 is padding and yields a zero row.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather(table, ids.iter().map(|&i| (i != 0).then_some(i)).collect())
    }

    /// Plain row gather with no padding convention.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather(table, ids.iter().map(|&i| Some(i)).collect())
    }

    /// `[max over first len rows ; row len-1]` of a `[T, D]` sequence.
    pub fn pool_max_last(&mut self, x: Var, len: usize) -> Result<Var> {
        let v = &self.check(x)?.value;
        if v.rank() != 2 {
            return Err(shape_err("pool_max_last", format!("{:?}", v.shape())));
        }
        let (rows, cols) = v.dims2();
        if len == 0 {
            return Err(NdError::EmptySequence);
        }
        if len > rows {
            return Err(shape_err("pool_max_last", format!("length {len} > {rows} rows")));
        }
        let mut out = vec![T::zero(); 2 * cols];
        let mut argmax = vec![0usize; cols];
        out[..cols].copy_from_slice(v.row(0));
        for r in 1..len {
            for (c, &val) in v.row(r).iter().enumerate() {
                if val > out[c] {
                    out[c] = val;
                    argmax[c] = r;
                }
            }
        }
        out[cols..].copy_from_slice(v.row(len - 1));
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::vector(out), Op::PoolMaxLast { x, len, argmax }, rg))
    }

    /// Unidirectional LSTM over the first `len` rows of `x` (`[T, in]`).
    /// `w` is `[in + h, 4h]` with gate column blocks (input, forget, cell, output),
    /// `b` is `[4h]`. Rows at and beyond `len` in the output are zero.
    pub fn lstm(&mut self, x: Var, len: usize, w: Var, b: Var, reverse: bool) -> Result<Var> {
        let vx = &self.check(x)?.value;
        let vw = &self.check(w)?.value;
        let vb = &self.check(b)?.value;
        let (out, cache) = lstm::forward(vx, len, vw, vb, reverse)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Lstm { x, w, b, cache }, rg))
    }

    /// Character convolution with max-over-time for a batch of words.
    /// `table` is `[chars, dc]` (row 0 padding), `w` is `[width * dc, filters]`.
    pub fn char_conv(
        &mut self,
        table: Var,
        words: &[Vec<usize>],
        w: Var,
        b: Var,
        width: usize,
    ) -> Result<Var> {
        let vt = &self.check(table)?.value;
        let vw = &self.check(w)?.value;
        let vb = &self.check(b)?.value;
        let (out, cache) = conv::forward(vt, words, vw, vb, width)?;
        let rg = self.any_grad(&[table, w, b]);
        Ok(self.push(out, Op::CharConv { table, w, b, cache }, rg))
    }

    /// Per-row layer normalisation with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = &self.check(x)?.value;
        let (rows, cols) = vx.dims2();
        let (vg, vb) = (&self.check(gamma)?.value, &self.check(beta)?.value);
        if vg.len() != cols || vb.len() != cols || vx.rank() > 2 {
            return Err(shape_err("layer_norm", format!("{:?}", vx.shape())));
        }
        let mut out = vec![T::zero(); rows * cols];
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        kernels::layer_norm(
            vx.data(),
            vg.data(),
            vb.data(),
            rows,
            cols,
            lit(eps),
            &mut out,
            &mut xhat,
            &mut inv_std,
        );
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
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

    /// Softmax cross-entropy of a logit vector against a target index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = &self.check(logits)?.value;
        if v.rank() != 1 || target >= v.len() {
            return Err(shape_err("cross_entropy", format!("{:?}, target {target}", v.shape())));
        }
        let mut probs = vec![T::zero(); v.len()];
        kernels::softmax_row(v.data(), None, &mut probs);
        let max = v.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + v.data().iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        let loss = lse - v.data()[target];
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            rg,
        ))
    }

    /// Numerically stable binary cross-entropy on a single logit.
    pub fn bce_with_logits(&mut self, logit: Var, label: bool) -> Result<Var> {
        let v = &self.check(logit)?.value;
        if v.len() != 1 {
            return Err(shape_err("bce_with_logits", format!("{:?}", v.shape())));
        }
        let z = v.item();
        let y = if label { T::one() } else { T::zero() };
        let loss = z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
        let rg = self.any_grad(&[logit]);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logit, label: y }, rg))
    }

    /// Inverted dropout: in training mode each unit is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`; otherwise identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NdError::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let n = self.check(x)?.value.len();
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = lit::<T>(1.0 / (1.0 - rate));
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ln = self.check(loss)?;
        if ln.value.len() != 1 {
            return Err(NdError::NonScalarLoss(ln.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.idx).map(|_| None).collect();
        grads[loss.idx] = Some(vec![T::one()]);
        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.idx].value;
        let wants = |v: Var| self.nodes[v.idx].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if wants(v) {
                        add_into(grads, v, g.len(), |d| kernels::axpy(T::one(), g, d));
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(grads, *a, g.len(), |d| kernels::axpy(T::one(), g, d));
                }
                if wants(*b) {
                    add_into(grads, *b, g.len(), |d| kernels::axpy(-T::one(), g, d));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let vb = val(*b).data();
                    add_into(grads, *a, g.len(), |d| {
                        for ((d, &gi), &bi) in d.iter_mut().zip(g).zip(vb) {
                            *d += gi * bi;
                        }
                    });
                }
                if wants(*b) {
                    let va = val(*a).data();
                    add_into(grads, *b, g.len(), |d| {
                        for ((d, &gi), &ai) in d.iter_mut().zip(g).zip(va) {
                            *d += gi * ai;
                        }
                    });
                }
            }
            Op::AddRow(a, bias) => {
                if wants(*a) {
                    add_into(grads, *a, g.len(), |d| kernels::axpy(T::one(), g, d));
                }
                if wants(*bias) {
                    let cols = val(*bias).len();
                    add_into(grads, *bias, cols, |d| {
                        for row in g.chunks(cols) {
                            kernels::axpy(T::one(), row, d);
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    add_into(grads, *a, g.len(), |d| kernels::axpy(*s, g, d));
                }
            }
            Op::MulConst(a, m) => {
                if wants(*a) {
                    add_into(grads, *a, g.len(), |d| {
                        for ((d, &gi), &mi) in d.iter_mut().zip(g).zip(m) {
                            *d += gi * mi;
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                add_into(grads, *a, g.len(), |d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (T::one() - yi);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                add_into(grads, *a, g.len(), |d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * (T::one() - yi * yi);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                add_into(grads, *a, g.len(), |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(x) {
                        if xi > T::zero() {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = val(*a).data();
                add_into(grads, *a, g.len(), |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(x) {
                        *d += gi * kernels::gelu_grad(xi);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = va.dims2();
                let n = vb.dims2().1;
                if wants(*a) {
                    add_into(grads, *a, m * k, |d| kernels::matmul_grad_a(g, vb.data(), m, k, n, d));
                }
                if wants(*b) {
                    add_into(grads, *b, k * n, |d| kernels::matmul_grad_b(va.data(), g, m, k, n, d));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = val(*a).dims2();
                add_into(grads, *a, r * c, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                add_into(grads, *a, g.len(), |d| kernels::axpy(T::one(), g, d));
            }
            Op::Concat(parts) => {
                let rank = node.value.rank();
                if rank == 1 {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).len();
                        if wants(p) {
                            add_into(grads, p, n, |d| kernels::axpy(T::one(), &g[off..off + n], d));
                        }
                        off += n;
                    }
                } else {
                    let (rows, total) = node.value.dims2();
                    let mut off = 0;
                    for &p in parts {
                        let c = val(p).dims2().1;
                        if wants(p) {
                            add_into(grads, p, rows * c, |d| {
                                for r in 0..rows {
                                    kernels::axpy(
                                        T::one(),
                                        &g[r * total + off..r * total + off + c],
                                        &mut d[r * c..(r + 1) * c],
                                    );
                                }
                            });
                        }
                        off += c;
                    }
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        add_into(grads, p, n, |d| kernels::axpy(T::one(), &g[off..off + n], d));
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let va = val(*a);
                let cols = va.dims2().1;
                add_into(grads, *a, va.len(), |d| {
                    kernels::axpy(T::one(), g, &mut d[start * cols..start * cols + g.len()]);
                });
            }
            Op::SliceCols(a, start) => {
                let va = val(*a);
                let (rows, cols) = va.dims2();
                let w = node.value.dims2().1;
                add_into(grads, *a, va.len(), |d| {
                    for r in 0..rows {
                        kernels::axpy(
                            T::one(),
                            &g[r * w..(r + 1) * w],
                            &mut d[r * cols + start..r * cols + start + w],
                        );
                    }
                });
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                add_into(grads, *a, n, |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (rows, cols) = y.dims2();
                add_into(grads, *x, rows * cols, |d| {
                    for r in 0..rows {
                        let yr = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let inner: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            d[r * cols + c] += yr[c] * (gr[c] - inner);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let vt = val(*table);
                let cols = vt.dims2().1;
                add_into(grads, *table, vt.len(), |d| {
                    for (k, id) in ids.iter().enumerate() {
                        if let Some(i) = id {
                            kernels::axpy(T::one(), &g[k * cols..(k + 1) * cols], &mut d[i * cols..(i + 1) * cols]);
                        }
                    }
                });
            }
            Op::PoolMaxLast { x, len, argmax } => {
                let vx = val(*x);
                let cols = vx.dims2().1;
                add_into(grads, *x, vx.len(), |d| {
                    for (c, &r) in argmax.iter().enumerate() {
                        d[r * cols + c] += g[c];
                    }
                    let last = (len - 1) * cols;
                    kernels::axpy(T::one(), &g[cols..], &mut d[last..last + cols]);
                });
            }
            Op::Lstm { x, w, b, cache } => {
                let (vx, vw) = (val(*x), val(*w));
                let mut dx = vec![T::zero(); vx.len()];
                let mut dw = vec![T::zero(); vw.len()];
                let mut db = vec![T::zero(); val(*b).len()];
                lstm::backward(vx, vw, cache, g, &mut dx, &mut dw, &mut db);
                merge(grads, *x, dx, wants(*x));
                merge(grads, *w, dw, wants(*w));
                merge(grads, *b, db, wants(*b));
            }
            Op::CharConv { table, w, b, cache } => {
                let (vt, vw) = (val(*table), val(*w));
                let mut dt = vec![T::zero(); vt.len()];
                let mut dw = vec![T::zero(); vw.len()];
                let mut db = vec![T::zero(); val(*b).len()];
                conv::backward(vt, vw, cache, g, &mut dt, &mut dw, &mut db);
                merge(grads, *table, dt, wants(*table));
                merge(grads, *w, dw, wants(*w));
                merge(grads, *b, db, wants(*b));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = val(*x).dims2();
                let vg = val(*gamma).data();
                let mut dx = vec![T::zero(); rows * cols];
                let mut dg = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                kernels::layer_norm_backward(g, xhat, inv_std, vg, rows, cols, &mut dx, &mut dg, &mut dbeta);
                merge(grads, *x, dx, wants(*x));
                merge(grads, *gamma, dg, wants(*gamma));
                merge(grads, *beta, dbeta, wants(*beta));
            }
            Op::CrossEntropy { logits, target, probs } => {
                add_into(grads, *logits, probs.len(), |d| {
                    for (k, (d, &p)) in d.iter_mut().zip(probs).enumerate() {
                        let y = if k == *target { T::one() } else { T::zero() };
                        *d += g[0] * (p - y);
                    }
                });
            }
            Op::BceWithLogits { logit, label } => {
                let z = val(*logit).item();
                add_into(grads, *logit, 1, |d| d[0] += g[0] * (kernels::sigmoid(z) - *label));
            }
        }
    }

    /// Index of the tape's node for a parameter, if it was loaded.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param(id) => Some((id, Var { tape: self.id, idx: i })),
            _ => None,
        })
    }
}

fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, n: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[v.idx].get_or_insert_with(|| vec![T::zero(); n]);
    f(slot);
}

fn merge<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>, wanted: bool) {
    if !wanted {
        return;
    }
    match &mut grads[v.idx] {
        Some(existing) => kernels::axpy(T::one(), &g, existing),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by one [`Tape::backward`] call.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node; `None` when the node did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's gradient slots.
    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for (id, var) in tape.param_nodes() {
            if let Some(g) = self.wrt(var) {
                let p = store.get_mut(id);
                kernels::axpy(T::one(), g, p.grad.data_mut());
            }
        }
    }
}
