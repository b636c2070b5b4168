//! Minimal reverse-mode automatic differentiation over dense row-major
//! tensors.
//!
//! Tensors are immutable value handles; attaching one to a [`Graph`] records
//! every subsequent operation on a Wengert list. Operations on detached
//! tensors just compute, so inference costs no bookkeeping. Gradients come
//! from [`Tensor::backward`], which consumes the record and returns the
//! gradient of every named leaf.
//!
//! Broadcasting follows trailing-dimension alignment; the backward of a
//! broadcast operand is the reduce-sum over the broadcast axes. All public
//! operations validate shapes and domains and raise instead of returning
//! NaN/Inf.

mod graph;
mod kernels;

pub mod fd;
pub mod fft;


use std::cell::Cell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use graph::{CustomVjp, GradMap, Graph, NodeId};
use graph::{BinaryKind, Op, UnaryKind};
use kernels as kn;

thread_local! {
    static ALLOC_FLOATS: Cell<u64> = const { Cell::new(0) };
}

/// Resets the per-thread allocated-float counter used as a memory proxy.
pub fn alloc_floats_reset() {
    ALLOC_FLOATS.with(|c| c.set(0));
}

/// Floats allocated by tensor and sequence-buffer construction on this
/// thread since the last reset.
pub fn alloc_floats() -> u64 {
    ALLOC_FLOATS.with(|c| c.get())
}

pub(crate) fn count_alloc(n: usize) {
    ALLOC_FLOATS.with(|c| c.set(c.get() + n as u64));
}

pub(crate) fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn stable_softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + x.abs().neg().exp().ln_1p()
}

/// Dense row-major tensor, optionally attached to a recording graph.
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Rc<Vec<T>>,
    node: Option<(Graph<T>, NodeId)>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: self.node.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("attached", &self.node.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if kn::numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} covers {} elements, data has {}",
                kn::numel(shape),
                data.len()
            )));
        }
        count_alloc(data.len());
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = kn::numel(shape);
        count_alloc(n);
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(vec![v; n]),
            node: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(&[1], v)
    }

    pub(crate) fn attached(
        shape: Vec<usize>,
        data: Rc<Vec<T>>,
        graph: Graph<T>,
        id: NodeId,
    ) -> Self {
        Tensor {
            shape,
            data,
            node: Some((graph, id)),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<T>> {
        Rc::clone(&self.data)
    }

    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() needs a single-element tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_ref(&self) -> Option<(Graph<T>, NodeId)> {
        self.node.clone()
    }

    /// Same values, no graph membership.
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Gradients of all named leaves with respect to this scalar.
    /// Consumes the record.
    pub fn backward(&self) -> Result<GradMap<T>> {
        match &self.node {
            Some((g, _)) => g.backward_from(self),
            None => Err(Error::Graph("backward from a detached tensor".into())),
        }
    }

    fn graph_among(inputs: &[&Tensor<T>]) -> Result<Option<Graph<T>>> {
        let mut found: Option<Graph<T>> = None;
        for t in inputs {
            if let Some((g, _)) = &t.node {
                match &found {
                    None => found = Some(g.clone()),
                    Some(f) if Graph::ptr_eq(f, g) => {}
                    Some(_) => {
                        return Err(Error::Graph(
                            "operands belong to different graphs".into(),
                        ))
                    }
                }
            }
        }
        Ok(found)
    }

    fn id_in(g: &Graph<T>, t: &Tensor<T>) -> Result<NodeId> {
        match &t.node {
            Some((_, id)) => Ok(*id),
            None => g.intern_constant(t),
        }
    }

    fn finish(
        graph: Option<Graph<T>>,
        op: Op<T>,
        inputs: &[&Tensor<T>],
        data: Vec<T>,
        shape: Vec<usize>,
    ) -> Result<Tensor<T>> {
        count_alloc(data.len());
        let data = Rc::new(data);
        match graph {
            None => Ok(Tensor {
                shape,
                data,
                node: None,
            }),
            Some(g) => {
                let mut parents = Vec::with_capacity(inputs.len());
                for t in inputs {
                    parents.push(Self::id_in(&g, t)?);
                }
                let id = g.record(op, parents, Rc::clone(&data), shape.clone())?;
                Ok(Tensor {
                    shape,
                    data,
                    node: Some((g, id)),
                })
            }
        }
    }

    fn binary(&self, other: &Tensor<T>, kind: BinaryKind) -> Result<Tensor<T>> {
        let graph = Self::graph_among(&[self, other])?;
        let osh = kn::broadcast_shape(&self.shape, &other.shape)?;
        if kind == BinaryKind::Div && other.data.iter().any(|&b| b == T::zero()) {
            return Err(Error::Domain("division by zero".into()));
        }
        let out = kn::zip_map2(
            &self.data,
            &self.shape,
            &other.data,
            &other.shape,
            &osh,
            |a, b| match kind {
                BinaryKind::Add => a + b,
                BinaryKind::Sub => a - b,
                BinaryKind::Mul => a * b,
                BinaryKind::Div => a / b,
            },
        );
        kn::check_finite(&out, op_name(kind))?;
        Self::finish(graph, Op::Binary(kind), &[self, other], out, osh)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Div)
    }

    fn unary(&self, kind: UnaryKind) -> Result<Tensor<T>> {
        match kind {
            UnaryKind::Ln => {
                if self.data.iter().any(|&x| x <= T::zero()) {
                    return Err(Error::Domain("ln of a non-positive value".into()));
                }
            }
            UnaryKind::Sqrt => {
                if self.data.iter().any(|&x| x < T::zero()) {
                    return Err(Error::Domain("sqrt of a negative value".into()));
                }
            }
            _ => {}
        }
        let out: Vec<T> = self
            .data
            .iter()
            .map(|&x| match kind {
                UnaryKind::Neg => -x,
                UnaryKind::Exp => x.exp(),
                UnaryKind::Ln => x.ln(),
                UnaryKind::Tanh => x.tanh(),
                UnaryKind::Sigmoid => stable_sigmoid(x),
                UnaryKind::Silu => x * stable_sigmoid(x),
                UnaryKind::Softplus => stable_softplus(x),
                UnaryKind::Sin => x.sin(),
                UnaryKind::Cos => x.cos(),
                UnaryKind::Sqrt => x.sqrt(),
            })
            .collect();
        kn::check_finite(&out, unary_name(kind))?;
        let graph = Self::graph_among(&[self])?;
        Self::finish(graph, Op::Unary(kind), &[self], out, self.shape.clone())
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Neg)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Exp)
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Ln)
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn silu(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Silu)
    }

    pub fn softplus(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Softplus)
    }

    pub fn sin(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Sin)
    }

    pub fn cos(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Cos)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        let out: Vec<T> = self.data.iter().map(|&x| x * c).collect();
        kn::check_finite(&out, "scale")?;
        let graph = Self::graph_among(&[self])?;
        Self::finish(graph, Op::Scale(c), &[self], out, self.shape.clone())
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        let out: Vec<T> = self.data.iter().map(|&x| x + c).collect();
        kn::check_finite(&out, "add_scalar")?;
        let graph = Self::graph_among(&[self])?;
        Self::finish(graph, Op::AddScalar, &[self], out, self.shape.clone())
    }

    /// 2-D matrix product with the standard reverse rules
    /// dA = dC.Bᵀ and dB = Aᵀ.dC.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs two rank-2 tensors, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let out = kn::matmul_nn(&self.data, &other.data, m, k, n);
        kn::check_finite(&out, "matmul")?;
        let graph = Self::graph_among(&[self, other])?;
        Self::finish(graph, Op::Matmul, &[self, other], out, vec![m, n])
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "transpose needs rank 2, got {:?}",
                self.shape
            )));
        }
        let out = kn::transpose2(&self.data, self.shape[0], self.shape[1]);
        let osh = vec![self.shape[1], self.shape[0]];
        let graph = Self::graph_among(&[self])?;
        Self::finish(graph, Op::Transpose, &[self], out, osh)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if kn::numel(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        let graph = Self::graph_among(&[self])?;
        // data is shared, not copied; the node still records the edge
        match graph {
            None => Ok(Tensor {
                shape: shape.to_vec(),
                data: Rc::clone(&self.data),
                node: None,
            }),
            Some(g) => {
                let parent = Self::id_in(&g, self)?;
                let id = g.record(
                    Op::Reshape,
                    vec![parent],
                    Rc::clone(&self.data),
                    shape.to_vec(),
                )?;
                Ok(Tensor::attached(
                    shape.to_vec(),
                    Rc::clone(&self.data),
                    g,
                    id,
                ))
            }
        }
    }

    /// Reduce-sum over the given axes, keeping them as size-1 dims.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let mut osh = self.shape.clone();
        for &ax in axes {
            if ax >= self.rank() {
                return Err(Error::Shape(format!(
                    "axis {ax} out of range for shape {:?}",
                    self.shape
                )));
            }
            osh[ax] = 1;
        }
        let out = kn::reduce_to(&self.data, &self.shape, &osh);
        kn::check_finite(&out, "sum_axes")?;
        let graph = Self::graph_among(&[self])?;
        Self::finish(graph, Op::SumAxes, &[self], out, osh)
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let total = self.data.iter().fold(T::zero(), |a, &b| a + b);
        kn::check_finite(&[total], "sum_all")?;
        let all: Vec<usize> = (0..self.rank()).collect();
        let reduced = self.sum_axes(&all)?;
        reduced.reshape(&[1])
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        self.sum_all()?.scale(T::one() / T::of(n as f64))
    }

    /// Gathers rows by index; index -1 yields a zero row. Backward
    /// scatter-adds into the source rows and drops the zero rows.
    pub fn gather_rows(&self, idx: &[i64]) -> Result<Tensor<T>> {
        if self.rank() < 1 {
            return Err(Error::Shape("gather_rows needs rank >= 1".into()));
        }
        let rows = self.shape[0] as i64;
        let inner: usize = self.shape[1..].iter().product();
        let mut out = Vec::with_capacity(idx.len() * inner);
        for &r in idx {
            if r >= rows || r < -1 {
                return Err(Error::Shape(format!(
                    "row index {r} out of range for {rows} rows"
                )));
            }
            if r < 0 {
                out.extend(std::iter::repeat(T::zero()).take(inner));
            } else {
                let base = r as usize * inner;
                out.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut osh = vec![idx.len()];
        osh.extend_from_slice(&self.shape[1..]);
        let graph = Self::graph_among(&[self])?;
        Self::finish(
            graph,
            Op::GatherRows {
                idx: Rc::new(idx.to_vec()),
            },
            &[self],
            out,
            osh,
        )
    }

    pub fn row(&self, r: usize) -> Result<Tensor<T>> {
        self.gather_rows(&[r as i64])
    }

    /// Row-wise softmax over the causal prefix: entry (r, c) participates
    /// only when c <= r; masked entries are exactly zero.
    pub fn causal_softmax(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "causal_softmax needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let w = (r + 1).min(cols);
            let base = r * cols;
            let mut hi = self.data[base];
            for j in 1..w {
                hi = hi.max(self.data[base + j]);
            }
            let mut z = T::zero();
            for j in 0..w {
                let e = (self.data[base + j] - hi).exp();
                out[base + j] = e;
                z = z + e;
            }
            for j in 0..w {
                out[base + j] = out[base + j] / z;
            }
        }
        kn::check_finite(&out, "causal_softmax")?;
        let graph = Self::graph_among(&[self])?;
        Self::finish(
            graph,
            Op::CausalSoftmax,
            &[self],
            out,
            self.shape.clone(),
        )
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let rank = parts[0].rank();
        if axis >= rank {
            return Err(Error::Shape(format!("concat axis {axis} out of range")));
        }
        for p in parts {
            if p.rank() != rank {
                return Err(Error::Shape("concat rank mismatch".into()));
            }
            for d in 0..rank {
                if d != axis && p.shape[d] != parts[0].shape[d] {
                    return Err(Error::Shape(format!(
                        "concat shapes disagree off-axis: {:?} vs {:?}",
                        p.shape, parts[0].shape
                    )));
                }
            }
        }
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut osh = parts[0].shape.clone();
        osh[axis] = total_axis;
        let outer: usize = osh[..axis].iter().product();
        let inner: usize = osh[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(kn::numel(&osh));
        for o in 0..outer {
            for p in parts {
                let plen = p.shape[axis];
                let base = o * plen * inner;
                out.extend_from_slice(&p.data[base..base + plen * inner]);
            }
        }
        let graph = Self::graph_among(parts)?;
        Self::finish(graph, Op::Concat { axis }, parts, out, osh)
    }

    /// Stacks equally sized tensors as the rows of a new first axis.
    pub fn stack_rows(rows: &[Tensor<T>]) -> Result<Tensor<T>> {
        if rows.is_empty() {
            return Err(Error::Shape("stack of zero rows".into()));
        }
        let width = rows[0].numel();
        let mut out = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.numel() != width {
                return Err(Error::Shape(format!(
                    "stack_rows width mismatch: {} vs {width}",
                    r.numel()
                )));
            }
            out.extend_from_slice(&r.data);
        }
        let refs: Vec<&Tensor<T>> = rows.iter().collect();
        let graph = Self::graph_among(&refs)?;
        Self::finish(
            graph,
            Op::StackRows,
            &refs,
            out,
            vec![rows.len(), width],
        )
    }

    /// Records a fused operation whose forward the caller already computed.
    pub fn custom(
        op: Rc<dyn CustomVjp<T>>,
        inputs: &[&Tensor<T>],
        out_data: Vec<T>,
        out_shape: &[usize],
    ) -> Result<Tensor<T>> {
        if kn::numel(out_shape) != out_data.len() {
            return Err(Error::Shape(format!(
                "custom op {}: shape {out_shape:?} does not cover {} elements",
                op.name(),
                out_data.len()
            )));
        }
        kn::check_finite(&out_data, op.name())?;
        let graph = Self::graph_among(inputs)?;
        Self::finish(graph, Op::Custom(op), inputs, out_data, out_shape.to_vec())
    }
}

fn op_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    }
}

fn unary_name(kind: UnaryKind) -> &'static str {
    match kind {
        UnaryKind::Neg => "neg",
        UnaryKind::Exp => "exp",
        UnaryKind::Ln => "ln",
        UnaryKind::Tanh => "tanh",
        UnaryKind::Sigmoid => "sigmoid",
        UnaryKind::Silu => "silu",
        UnaryKind::Softplus => "softplus",
        UnaryKind::Sin => "sin",
        UnaryKind::Cos => "cos",
        UnaryKind::Sqrt => "sqrt",
    }
}
