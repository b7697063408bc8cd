//! Operation recording and reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape of nodes. Every operation computes its
//! value eagerly and records enough to run its backward rule later. Nodes are
//! referenced by [`Var`] handles, so inputs always precede outputs on the tape.

use super::params::{GradStore, ParamId, ParamStore};
use super::tensor::{add_assign, axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise functions supported by [`Graph::pointwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Unary(Var, Func),
    LogClamped(Var, f64),
    Softmax(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize),
    Row(Var, usize),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Pad(Var),
    Pick(Var, usize),
    Sum(Var),
    Lerp(Var, Var, Var),
    MaxRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    // `None` for parameters, whose values live in the borrowed store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording tape bound to an optional parameter store.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_grads: Option<GradStore>,
    track_params: bool,
    clamped: usize,
}

impl<'p> Graph<'p> {
    /// A tape with no parameter store; use [`Graph::leaf`] for differentiable inputs.
    pub fn standalone() -> Graph<'static> {
        Graph {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            param_grads: None,
            track_params: false,
            clamped: 0,
        }
    }

    /// A tape whose parameter nodes require gradients.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            grads: Vec::new(),
            param_grads: None,
            track_params: true,
            clamped: 0,
        }
    }

    /// A tape for forward evaluation only: parameters do not require gradients.
    pub fn inference(params: &'p ParamStore) -> Self {
        let mut g = Graph::new(params);
        g.track_params = false;
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of log evaluations that hit the probability floor so far.
    pub fn clamped_logs(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.expect("param node without store").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a node after [`Graph::backward`]. Leaf and parameter
    /// gradients accumulate across calls; others reflect the latest call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulated parameter gradients, if any backward pass reached a parameter.
    pub fn param_grads(&self) -> Option<&GradStore> {
        self.param_grads.as_ref()
    }

    pub fn take_param_grads(&mut self) -> Option<GradStore> {
        self.param_grads.take()
    }

    /// Zeroes every stored gradient.
    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill(0.0);
        }
        if let Some(pg) = &mut self.param_grads {
            pg.zero();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Domain {
                op: op_name(&op),
                message: "non-finite value produced".into(),
            });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// The node for a stored parameter; created once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: self.track_params,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m×k]·[k×n] → [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim("matmul", ta, tb));
        }
        let (m, k) = ta.dims2();
        let n = tb.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(ta.data()[i * k + p], tb.row(p), orow);
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// `[m×n]·[n] → [m]`
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.rank() != 2 || tx.rank() != 1 || tw.shape()[1] != tx.len() {
            return Err(dim("matvec", tw, tx));
        }
        let m = tw.shape()[0];
        let out: Vec<f64> = (0..m).map(|i| dot(tw.row(i), tx.data())).collect();
        let rg = self.rg(&[w, x]);
        self.push(Tensor::from_parts(vec![m], out), Op::MatVec(w, x), rg)
    }

    /// `[m×n]ᵀ·[m] → [n]`, i.e. a weighted sum of rows.
    pub fn mat_t_vec(&mut self, m: Var, a: Var) -> Result<Var> {
        let (tm, ta) = (self.value(m), self.value(a));
        if tm.rank() != 2 || ta.rank() != 1 || tm.shape()[0] != ta.len() {
            return Err(dim("mat_t_vec", tm, ta));
        }
        let (rows, cols) = tm.dims2();
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            axpy(ta.data()[i], tm.row(i), &mut out);
        }
        let rg = self.rg(&[m, a]);
        self.push(Tensor::from_parts(vec![cols], out), Op::MatTVec(m, a), rg)
    }

    /// `[m×k]·[n×k]ᵀ → [m×n]`
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(dim("matmul_nt", tx, tw));
        }
        let m = tx.shape()[0];
        let n = tw.shape()[0];
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let xi = tx.row(i);
            for j in 0..n {
                out.push(dot(xi, tw.row(j)));
            }
        }
        let rg = self.rg(&[x, w]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(x, w), rg)
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim(op, ta, tb));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector to every row of a matrix (or to a vector of equal length).
    pub fn add_row(&mut self, m: Var, b: Var) -> Result<Var> {
        let (tm, tb) = (self.value(m), self.value(b));
        let (_, cols) = tm.dims2();
        if tb.rank() != 1 || tb.len() != cols {
            return Err(dim("add_row", tm, tb));
        }
        let mut data = tm.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            add_assign(row, tb.data());
        }
        let t = Tensor::from_parts(tm.shape().to_vec(), data);
        let rg = self.rg(&[m, b]);
        self.push(t, Op::AddRow(m, b), rg)
    }

    /// `scale·x + offset`
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + offset).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(t, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    /// Multiplies every entry of `x` by the single entry of `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.len() != 1 {
            return Err(dim("scale_by", tx, ts));
        }
        let k = ts.item();
        let data = tx.data().iter().map(|v| k * v).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x, s]);
        self.push(t, Op::ScaleBy(x, s), rg)
    }

    pub fn pointwise(&mut self, f: Func, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if f == Func::Log {
            if let Some(bad) = tx.data().iter().find(|v| **v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    message: format!("nonpositive entry {bad}"),
                });
            }
        }
        let data = tx
            .data()
            .iter()
            .map(|&v| match f {
                Func::Sigmoid => sigmoid(v),
                Func::Tanh => v.tanh(),
                Func::Relu => v.max(0.0),
                Func::Exp => v.exp(),
                Func::Log => v.ln(),
            })
            .collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(t, Op::Unary(x, f), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Func::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Func::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Func::Relu, x)
    }

    /// `ln(max(x, floor))`; entries below the floor get zero gradient and are
    /// counted in [`Graph::clamped_logs`].
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        let tx = self.value(x);
        let mut clamped = 0;
        let data = tx
            .data()
            .iter()
            .map(|&v| {
                if v < floor {
                    clamped += 1;
                    floor.ln()
                } else {
                    v.ln()
                }
            })
            .collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.clamped += clamped;
        self.push(t, Op::LogClamped(x, floor), rg)
    }

    /// `c∘a + (1−c)∘b`
    pub fn lerp(&mut self, c: Var, a: Var, b: Var) -> Result<Var> {
        self.same_shape("lerp", c, a)?;
        self.same_shape("lerp", a, b)?;
        let (tc, ta, tb) = (self.value(c), self.value(a), self.value(b));
        let data = tc
            .data()
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(c, (a, b))| c * a + (1.0 - c) * b)
            .collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[c, a, b]);
        self.push(t, Op::Lerp(c, a, b), rg)
    }

    // ---- normalization and reductions -----------------------------------

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (_, cols) = tx.dims2();
        let mut data = Vec::with_capacity(tx.len());
        for row in tx.data().chunks_exact(cols) {
            data.extend(super::tensor::softmax_slice(row));
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    /// Softmax over a vector restricted to positions where `mask` is true;
    /// masked positions receive probability zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || mask.len() != tx.len() {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: tx.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::contract("softmax over a fully masked axis"));
        }
        let m = tx
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &k)| k)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut data: Vec<f64> = tx
            .data()
            .iter()
            .zip(mask)
            .map(|(v, &k)| if k { (v - m).exp() } else { 0.0 })
            .collect();
        let s: f64 = data.iter().sum();
        for v in &mut data {
            *v /= s;
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        // The softmax backward rule is exact here too: masked outputs are zero.
        self.push(t, Op::Softmax(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Selects one entry of a vector as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let tx = self.value(x);
        if index >= tx.len() {
            return Err(Error::Index {
                op: "pick",
                index,
                extent: tx.len(),
            });
        }
        let v = tx.data()[index];
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(v), Op::Pick(x, index), rg)
    }

    /// Columnwise maximum over the rows of a matrix.
    pub fn max_rows(&mut self, m: Var) -> Result<Var> {
        let tm = self.value(m);
        let (rows, cols) = tm.dims2();
        let mut arg = vec![0usize; cols];
        let mut out = tm.row(0).to_vec();
        for i in 1..rows {
            for (j, &v) in tm.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(&[m]);
        self.push(Tensor::from_parts(vec![cols], out), Op::MaxRows(m, arg), rg)
    }

    // ---- structural -----------------------------------------------------

    /// Concatenates along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.value(parts[0]);
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Dimension {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        for p in &parts[1..] {
            let t = self.value(*p);
            let ok = t.rank() == rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !ok {
                return Err(dim("concat", first, t));
            }
        }
        let (t, shape) = if rank == 1 || axis == 0 {
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            let mut shape = first.shape().to_vec();
            shape[0] = parts.iter().map(|p| self.value(*p).shape()[0]).sum();
            (data, shape)
        } else {
            let rows = first.shape()[0];
            let cols: usize = parts.iter().map(|p| self.value(*p).shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(i));
                }
            }
            (data, vec![rows, cols])
        };
        let rg = self.rg(parts);
        self.push(
            Tensor::from_parts(shape, t),
            Op::Concat(parts.to_vec(), axis),
            rg,
        )
    }

    /// Contiguous sub-vector `[start, start+len)` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || len == 0 || start + len > tx.len() {
            return Err(Error::Index {
                op: "slice",
                index: start + len,
                extent: tx.len(),
            });
        }
        let data = tx.data()[start..start + len].to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![len], data), Op::Slice(x, start), rg)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.rank() != 2 || i >= tm.shape()[0] {
            return Err(Error::Index {
                op: "row",
                index: i,
                extent: tm.shape()[0],
            });
        }
        let data = tm.row(i).to_vec();
        let rg = self.rg(&[m]);
        self.push(Tensor::from_parts(vec![data.len()], data), Op::Row(m, i), rg)
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::contract("stack of zero rows"));
        }
        let first = self.value(rows[0]);
        let n = first.len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            let t = self.value(*r);
            if t.rank() != 1 || t.len() != n {
                return Err(dim("stack_rows", first, t));
            }
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(rows);
        self.push(
            Tensor::from_parts(vec![rows.len(), n], data),
            Op::StackRows(rows.to_vec()),
            rg,
        )
    }

    /// Looks up rows of a `[V×d]` table; the result is `[ids.len()×d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(dim("gather_rows", tt, tt));
        }
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no ids"));
        }
        let (rows, cols) = tt.dims2();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: id,
                    extent: rows,
                });
            }
            data.extend_from_slice(tt.row(id));
        }
        let rg = self.rg(&[table]);
        self.push(
            Tensor::from_parts(vec![ids.len(), cols], data),
            Op::GatherRows(table, ids.to_vec()),
            rg,
        )
    }

    /// `out[index[i]] += x[i]` into a zero vector of length `size`.
    pub fn scatter_add(&mut self, x: Var, index: &[usize], size: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || tx.len() != index.len() {
            return Err(Error::Dimension {
                op: "scatter_add",
                lhs: tx.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut out = vec![0.0; size];
        for (&i, &v) in index.iter().zip(tx.data()) {
            if i >= size {
                return Err(Error::Index {
                    op: "scatter_add",
                    index: i,
                    extent: size,
                });
            }
            out[i] += v;
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_parts(vec![size], out),
            Op::ScatterAdd(x, index.to_vec()),
            rg,
        )
    }

    /// Extends a vector with zeros to length `size`.
    pub fn pad(&mut self, x: Var, size: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || size < tx.len() {
            return Err(Error::Dimension {
                op: "pad",
                lhs: tx.shape().to_vec(),
                rhs: vec![size],
            });
        }
        let mut data = tx.data().to_vec();
        data.resize(size, 0.0);
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![size], data), Op::Pad(x), rg)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse-mode accumulation from a scalar `loss`.
    ///
    /// Leaf and parameter gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; n];
        tmp[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(go) = tmp[i].take() else { continue };
            self.backprop_node(i, &go, &mut tmp)?;
            tmp[i] = Some(go);
        }

        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        for (i, g) in tmp.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match self.nodes[i].op {
                Op::Param(id) => {
                    let params = self.params.expect("param node without store");
                    let store = self
                        .param_grads
                        .get_or_insert_with(|| GradStore::zeros_like(params));
                    add_assign(store.get_mut(id), &g);
                    accumulate(&mut self.grads[i], &g);
                }
                Op::Leaf => accumulate(&mut self.grads[i], &g),
                _ => self.grads[i] = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, go: &[f64], tmp: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = self.value(Var(i));
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.shape()[1];
                if self.requires_grad(*a) {
                    let ga = slot(tmp, *a, m * k);
                    for r in 0..m {
                        let gor = &go[r * n..(r + 1) * n];
                        for p in 0..k {
                            ga[r * k + p] += dot(gor, tb.row(p));
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(tmp, *b, k * n);
                    for r in 0..m {
                        let gor = &go[r * n..(r + 1) * n];
                        for p in 0..k {
                            axpy(ta.data()[r * k + p], gor, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let (m, n) = tw.dims2();
                if self.requires_grad(*w) {
                    let gw = slot(tmp, *w, m * n);
                    for r in 0..m {
                        axpy(go[r], tx.data(), &mut gw[r * n..(r + 1) * n]);
                    }
                }
                if self.requires_grad(*x) {
                    let gx = slot(tmp, *x, n);
                    for r in 0..m {
                        axpy(go[r], tw.row(r), gx);
                    }
                }
            }
            Op::MatTVec(mv, a) => {
                let (tm, ta) = (self.value(*mv), self.value(*a));
                let (rows, cols) = tm.dims2();
                if self.requires_grad(*mv) {
                    let gm = slot(tmp, *mv, rows * cols);
                    for r in 0..rows {
                        axpy(ta.data()[r], go, &mut gm[r * cols..(r + 1) * cols]);
                    }
                }
                if self.requires_grad(*a) {
                    let ga = slot(tmp, *a, rows);
                    for r in 0..rows {
                        ga[r] += dot(tm.row(r), go);
                    }
                }
            }
            Op::MatMulNT(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k) = tx.dims2();
                let n = tw.shape()[0];
                if self.requires_grad(*x) {
                    let gx = slot(tmp, *x, m * k);
                    for r in 0..m {
                        let gxr = &mut gx[r * k..(r + 1) * k];
                        for j in 0..n {
                            axpy(go[r * n + j], tw.row(j), gxr);
                        }
                    }
                }
                if self.requires_grad(*w) {
                    let gw = slot(tmp, *w, n * k);
                    for r in 0..m {
                        let xr = tx.row(r);
                        for j in 0..n {
                            axpy(go[r * n + j], xr, &mut gw[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        add_assign(slot(tmp, *v, go.len()), go);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    add_assign(slot(tmp, *a, go.len()), go);
                }
                if self.requires_grad(*b) {
                    axpy(-1.0, go, slot(tmp, *b, go.len()));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = slot(tmp, *a, go.len());
                    for ((g, o), y) in ga.iter_mut().zip(go).zip(tb.data()) {
                        *g += o * y;
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(tmp, *b, go.len());
                    for ((g, o), x) in gb.iter_mut().zip(go).zip(ta.data()) {
                        *g += o * x;
                    }
                }
            }
            Op::AddRow(m, b) => {
                if self.requires_grad(*m) {
                    add_assign(slot(tmp, *m, go.len()), go);
                }
                if self.requires_grad(*b) {
                    let cols = self.value(*b).len();
                    let gb = slot(tmp, *b, cols);
                    for row in go.chunks_exact(cols) {
                        add_assign(gb, row);
                    }
                }
            }
            Op::Affine(x, s) => {
                if self.requires_grad(*x) {
                    axpy(*s, go, slot(tmp, *x, go.len()));
                }
            }
            Op::ScaleBy(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                if self.requires_grad(*x) {
                    axpy(ts.item(), go, slot(tmp, *x, go.len()));
                }
                if self.requires_grad(*s) {
                    slot(tmp, *s, 1)[0] += dot(tx.data(), go);
                }
            }
            Op::Unary(x, f) => {
                let tx = self.value(*x);
                let gx = slot(tmp, *x, go.len());
                let y = out.data();
                let xs = tx.data();
                for j in 0..go.len() {
                    let d = match f {
                        Func::Sigmoid => y[j] * (1.0 - y[j]),
                        Func::Tanh => 1.0 - y[j] * y[j],
                        Func::Relu => {
                            if xs[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Func::Exp => y[j],
                        Func::Log => 1.0 / xs[j],
                    };
                    gx[j] += go[j] * d;
                }
            }
            Op::LogClamped(x, floor) => {
                let tx = self.value(*x);
                let gx = slot(tmp, *x, go.len());
                for ((g, o), v) in gx.iter_mut().zip(go).zip(tx.data()) {
                    if *v >= *floor {
                        *g += o / v;
                    }
                }
            }
            Op::Softmax(x) => {
                let (_, cols) = out.dims2();
                let gx = slot(tmp, *x, go.len());
                for ((gr, gor), yr) in gx
                    .chunks_exact_mut(cols)
                    .zip(go.chunks_exact(cols))
                    .zip(out.data().chunks_exact(cols))
                {
                    let s = dot(gor, yr);
                    for j in 0..cols {
                        gr[j] += yr[j] * (gor[j] - s);
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let rank = out.rank();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        if self.requires_grad(*p) {
                            add_assign(slot(tmp, *p, len), &go[off..off + len]);
                        }
                        off += len;
                    }
                } else {
                    let (rows, cols) = out.dims2();
                    let mut col_off = 0;
                    for p in parts {
                        let pc = self.value(*p).shape()[1];
                        if self.requires_grad(*p) {
                            let gp = slot(tmp, *p, rows * pc);
                            for r in 0..rows {
                                add_assign(
                                    &mut gp[r * pc..(r + 1) * pc],
                                    &go[r * cols + col_off..r * cols + col_off + pc],
                                );
                            }
                        }
                        col_off += pc;
                    }
                }
            }
            Op::Slice(x, start) => {
                let n = self.value(*x).len();
                add_assign(&mut slot(tmp, *x, n)[*start..*start + go.len()], go);
            }
            Op::Row(m, r) => {
                let tm = self.value(*m);
                let (_, cols) = tm.dims2();
                let gm = slot(tmp, *m, tm.len());
                add_assign(&mut gm[r * cols..(r + 1) * cols], go);
            }
            Op::StackRows(rows) => {
                let cols = out.dims2().1;
                for (r, v) in rows.iter().enumerate() {
                    if self.requires_grad(*v) {
                        add_assign(slot(tmp, *v, cols), &go[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let tt = self.value(*table);
                let (_, cols) = tt.dims2();
                let gt = slot(tmp, *table, tt.len());
                for (r, &id) in ids.iter().enumerate() {
                    add_assign(&mut gt[id * cols..(id + 1) * cols], &go[r * cols..(r + 1) * cols]);
                }
            }
            Op::ScatterAdd(x, index) => {
                let gx = slot(tmp, *x, index.len());
                for (g, &j) in gx.iter_mut().zip(index) {
                    *g += go[j];
                }
            }
            Op::Pad(x) => {
                let n = self.value(*x).len();
                add_assign(slot(tmp, *x, n), &go[..n]);
            }
            Op::Pick(x, index) => {
                let n = self.value(*x).len();
                slot(tmp, *x, n)[*index] += go[0];
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                for g in slot(tmp, *x, n).iter_mut() {
                    *g += go[0];
                }
            }
            Op::Lerp(c, a, b) => {
                let (tc, ta, tb) = (self.value(*c), self.value(*a), self.value(*b));
                if self.requires_grad(*c) {
                    let gc = slot(tmp, *c, go.len());
                    for j in 0..go.len() {
                        gc[j] += go[j] * (ta.data()[j] - tb.data()[j]);
                    }
                }
                if self.requires_grad(*a) {
                    let ga = slot(tmp, *a, go.len());
                    for j in 0..go.len() {
                        ga[j] += go[j] * tc.data()[j];
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(tmp, *b, go.len());
                    for j in 0..go.len() {
                        gb[j] += go[j] * (1.0 - tc.data()[j]);
                    }
                }
            }
            Op::MaxRows(m, arg) => {
                let tm = self.value(*m);
                let cols = arg.len();
                let gm = slot(tmp, *m, tm.len());
                for (j, &r) in arg.iter().enumerate() {
                    gm[r * cols + j] += go[j];
                }
            }
        }
        Ok(())
    }
}

fn slot<'a>(tmp: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
    tmp[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

fn accumulate(dst: &mut Option<Vec<f64>>, g: &[f64]) {
    match dst {
        Some(d) => add_assign(d, g),
        None => *dst = Some(g.to_vec()),
    }
}

fn dim(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::MatVec(..) => "matvec",
        Op::MatTVec(..) => "mat_t_vec",
        Op::MatMulNT(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Affine(..) => "affine",
        Op::ScaleBy(..) => "scale_by",
        Op::Unary(_, Func::Exp) => "exp",
        Op::Unary(..) => "pointwise",
        Op::LogClamped(..) => "log_clamped",
        Op::Softmax(..) => "softmax",
        Op::Concat(..) => "concat",
        Op::Slice(..) => "slice",
        Op::Row(..) => "row",
        Op::StackRows(..) => "stack_rows",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterAdd(..) => "scatter_add",
        Op::Pad(..) => "pad",
        Op::Pick(..) => "pick",
        Op::Sum(..) => "sum",
        Op::Lerp(..) => "lerp",
        Op::MaxRows(..) => "max_rows",
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
