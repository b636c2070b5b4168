//! The recording graph: a Wengert list of operations.
//!
//! Every recorded node stores its op tag, parent ids and produced value, in
//! topological order by construction. `backward_from` replays the list in
//! reverse, accumulating vector-Jacobian products, and returns the gradients
//! of every named leaf. A record is consumed by backward; recording onto or
//! differentiating a consumed graph is a [`Error::Graph`].

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels as kn;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Silu,
    Softplus,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// A fused operation with a hand-derived backward rule.
///
/// Implementations work on raw slices only and must not record onto any
/// graph from inside `backward`. `inputs` arrive in the order they were
/// passed to [`Tensor::custom`]; the returned vector holds one gradient per
/// input (`None` where no gradient is needed), each matching that input's
/// length.
pub trait CustomVjp<T: Scalar>: std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        grad_out: &[T],
        inputs: &[(&[T], &[usize])],
        out: (&[T], &[usize]),
    ) -> Result<Vec<Option<Vec<T>>>>;
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Constant,
    Unary(UnaryKind),
    Binary(BinaryKind),
    Scale(T),
    AddScalar,
    Matmul,
    SumAxes,
    Reshape,
    Transpose,
    Concat { axis: usize },
    GatherRows { idx: Rc<Vec<i64>> },
    StackRows,
    CausalSoftmax,
    Custom(Rc<dyn CustomVjp<T>>),
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) op: Op<T>,
    pub(crate) parents: Vec<NodeId>,
    pub(crate) value: Rc<Vec<T>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) needs_grad: bool,
}

struct Record<T: Scalar> {
    nodes: Vec<Node<T>>,
    leaves: Vec<(String, NodeId)>,
    consumed: bool,
}

pub struct Graph<T: Scalar> {
    rec: Rc<RefCell<Record<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            rec: Rc::clone(&self.rec),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the named leaves, in leaf registration order.
pub struct GradMap<T> {
    entries: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> GradMap<T> {
    /// Assemble a map directly, e.g. after merging per-example gradients.
    pub fn from_entries(entries: Vec<(String, Vec<T>)>) -> Self {
        GradMap { entries }
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            rec: Rc::new(RefCell::new(Record {
                nodes: Vec::new(),
                leaves: Vec::new(),
                consumed: false,
            })),
        }
    }

    pub fn ptr_eq(a: &Graph<T>, b: &Graph<T>) -> bool {
        Rc::ptr_eq(&a.rec, &b.rec)
    }

    /// Registers a named parameter leaf and returns the attached tensor.
    pub fn leaf(&self, name: &str, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if kn::numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "leaf {name}: shape {shape:?} does not cover {} elements",
                data.len()
            )));
        }
        let mut rec = self.rec.borrow_mut();
        if rec.consumed {
            return Err(Error::Graph("record already consumed by backward".into()));
        }
        if rec.leaves.iter().any(|(n, _)| n == name) {
            return Err(Error::Graph(format!("duplicate leaf name {name}")));
        }
        let value = Rc::new(data);
        let id = rec.nodes.len();
        rec.nodes.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            value: Rc::clone(&value),
            shape: shape.to_vec(),
            needs_grad: true,
        });
        rec.leaves.push((name.to_string(), id));
        drop(rec);
        Ok(Tensor::attached(shape.to_vec(), value, self.clone(), id))
    }

    /// Interns a detached tensor as a constant node.
    pub(crate) fn intern_constant(&self, t: &Tensor<T>) -> Result<NodeId> {
        let mut rec = self.rec.borrow_mut();
        if rec.consumed {
            return Err(Error::Graph("record already consumed by backward".into()));
        }
        let id = rec.nodes.len();
        rec.nodes.push(Node {
            op: Op::Constant,
            parents: Vec::new(),
            value: t.data_rc(),
            shape: t.shape().to_vec(),
            needs_grad: false,
        });
        Ok(id)
    }

    pub(crate) fn record(
        &self,
        op: Op<T>,
        parents: Vec<NodeId>,
        value: Rc<Vec<T>>,
        shape: Vec<usize>,
    ) -> Result<NodeId> {
        let mut rec = self.rec.borrow_mut();
        if rec.consumed {
            return Err(Error::Graph("record already consumed by backward".into()));
        }
        let needs_grad = parents.iter().any(|&p| rec.nodes[p].needs_grad);
        let id = rec.nodes.len();
        rec.nodes.push(Node {
            op,
            parents,
            value,
            shape,
            needs_grad,
        });
        Ok(id)
    }

    pub fn node_count(&self) -> usize {
        self.rec.borrow().nodes.len()
    }

    pub fn parents_of(&self, id: NodeId) -> Vec<NodeId> {
        self.rec.borrow().nodes[id].parents.clone()
    }

    pub fn is_consumed(&self) -> bool {
        self.rec.borrow().consumed
    }

    /// Reverse replay from a scalar loss. Consumes the record.
    pub fn backward_from(&self, loss: &Tensor<T>) -> Result<GradMap<T>> {
        let (lg, lid) = loss
            .node_ref()
            .ok_or_else(|| Error::Graph("backward from a detached tensor".into()))?;
        if !Graph::ptr_eq(self, &lg) {
            return Err(Error::Graph("loss belongs to a different graph".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut rec = self.rec.borrow_mut();
        if rec.consumed {
            return Err(Error::Graph("record already consumed by backward".into()));
        }
        rec.consumed = true;
        let rec = &mut *rec;
        let nodes = &rec.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[lid] = Some(vec![T::one()]);
        for id in (0..=lid).rev() {
            if !nodes[id].needs_grad
                || grads[id].is_none()
                || matches!(nodes[id].op, Op::Leaf | Op::Constant)
            {
                continue;
            }
            let g = grads[id].take().expect("checked above");
            backprop_one(nodes, id, &g, &mut grads)?;
        }
        let mut entries = Vec::with_capacity(rec.leaves.len());
        for (name, id) in &rec.leaves {
            let gv = grads[*id]
                .take()
                .unwrap_or_else(|| vec![T::zero(); nodes[*id].value.len()]);
            entries.push((name.clone(), gv));
        }
        Ok(GradMap { entries })
    }
}

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    pid: NodeId,
    contrib: Vec<T>,
) {
    if !nodes[pid].needs_grad {
        return;
    }
    debug_assert_eq!(contrib.len(), nodes[pid].value.len());
    match &mut grads[pid] {
        Some(buf) => kn::add_into(buf, &contrib),
        slot => *slot = Some(contrib),
    }
}

fn backprop_one<T: Scalar>(
    nodes: &[Node<T>],
    id: NodeId,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) -> Result<()> {
    let node = &nodes[id];
    let osh = &node.shape;
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Unary(kind) => {
            let p = node.parents[0];
            let x = &nodes[p].value;
            let y = &node.value;
            let two = T::of(2.0);
            let contrib: Vec<T> = match kind {
                UnaryKind::Neg => g.iter().map(|&gv| -gv).collect(),
                UnaryKind::Exp => g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv).collect(),
                UnaryKind::Ln => g.iter().zip(x.iter()).map(|(&gv, &xv)| gv / xv).collect(),
                UnaryKind::Tanh => g
                    .iter()
                    .zip(y.iter())
                    .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                    .collect(),
                UnaryKind::Sigmoid => g
                    .iter()
                    .zip(y.iter())
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect(),
                UnaryKind::Silu => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| {
                        let s = super::stable_sigmoid(xv);
                        gv * (s + xv * s * (T::one() - s))
                    })
                    .collect(),
                UnaryKind::Softplus => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| gv * super::stable_sigmoid(xv))
                    .collect(),
                UnaryKind::Sin => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| gv * xv.cos())
                    .collect(),
                UnaryKind::Cos => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| -gv * xv.sin())
                    .collect(),
                UnaryKind::Sqrt => g
                    .iter()
                    .zip(y.iter())
                    .map(|(&gv, &yv)| gv / (two * yv))
                    .collect(),
            };
            accumulate(nodes, grads, p, contrib);
        }
        Op::Binary(kind) => {
            let (pa, pb) = (node.parents[0], node.parents[1]);
            let (a, ash) = (&nodes[pa].value, nodes[pa].shape.as_slice());
            let (b, bsh) = (&nodes[pb].value, nodes[pb].shape.as_slice());
            if nodes[pa].needs_grad {
                let full = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                    BinaryKind::Mul => kn::zip_map3(g, a, ash, b, bsh, osh, |gv, _, bv| gv * bv),
                    BinaryKind::Div => kn::zip_map3(g, a, ash, b, bsh, osh, |gv, _, bv| gv / bv),
                };
                accumulate(nodes, grads, pa, kn::reduce_to(&full, osh, ash));
            }
            if nodes[pb].needs_grad {
                let full = match kind {
                    BinaryKind::Add => g.to_vec(),
                    BinaryKind::Sub => g.iter().map(|&gv| -gv).collect(),
                    BinaryKind::Mul => kn::zip_map3(g, a, ash, b, bsh, osh, |gv, av, _| gv * av),
                    BinaryKind::Div => {
                        kn::zip_map3(g, a, ash, b, bsh, osh, |gv, av, bv| -gv * av / (bv * bv))
                    }
                };
                accumulate(nodes, grads, pb, kn::reduce_to(&full, osh, bsh));
            }
        }
        Op::Scale(c) => {
            let contrib = g.iter().map(|&gv| gv * *c).collect();
            accumulate(nodes, grads, node.parents[0], contrib);
        }
        Op::AddScalar => {
            accumulate(nodes, grads, node.parents[0], g.to_vec());
        }
        Op::Matmul => {
            let (pa, pb) = (node.parents[0], node.parents[1]);
            let (m, k) = (nodes[pa].shape[0], nodes[pa].shape[1]);
            let n = nodes[pb].shape[1];
            if nodes[pa].needs_grad {
                let da = kn::matmul_nt(g, &nodes[pb].value, m, n, k);
                accumulate(nodes, grads, pa, da);
            }
            if nodes[pb].needs_grad {
                let db = kn::matmul_tn(&nodes[pa].value, g, m, k, n);
                accumulate(nodes, grads, pb, db);
            }
        }
        Op::SumAxes => {
            let p = node.parents[0];
            let contrib = kn::bcast_expand(g, osh, &nodes[p].shape);
            accumulate(nodes, grads, p, contrib);
        }
        Op::Reshape => {
            accumulate(nodes, grads, node.parents[0], g.to_vec());
        }
        Op::Transpose => {
            let contrib = kn::transpose2(g, osh[0], osh[1]);
            accumulate(nodes, grads, node.parents[0], contrib);
        }
        Op::Concat { axis } => {
            let axis = *axis;
            let outer: usize = osh[..axis].iter().product();
            let inner: usize = osh[axis + 1..].iter().product();
            let total_axis = osh[axis];
            let mut offset = 0usize;
            for &p in &node.parents {
                let plen = nodes[p].shape[axis];
                if nodes[p].needs_grad {
                    let mut contrib = Vec::with_capacity(nodes[p].value.len());
                    for o in 0..outer {
                        let base = (o * total_axis + offset) * inner;
                        contrib.extend_from_slice(&g[base..base + plen * inner]);
                    }
                    accumulate(nodes, grads, p, contrib);
                }
                offset += plen;
            }
        }
        Op::GatherRows { idx } => {
            let p = node.parents[0];
            let psh = &nodes[p].shape;
            let inner: usize = psh[1..].iter().product();
            let mut contrib = vec![T::zero(); nodes[p].value.len()];
            for (r, &src) in idx.iter().enumerate() {
                if src >= 0 {
                    let s = src as usize * inner;
                    let d = r * inner;
                    for i in 0..inner {
                        contrib[s + i] = contrib[s + i] + g[d + i];
                    }
                }
            }
            accumulate(nodes, grads, p, contrib);
        }
        Op::StackRows => {
            let width: usize = osh[1..].iter().product();
            for (r, &p) in node.parents.iter().enumerate() {
                if nodes[p].needs_grad {
                    accumulate(nodes, grads, p, g[r * width..(r + 1) * width].to_vec());
                }
            }
        }
        Op::CausalSoftmax => {
            let p = node.parents[0];
            let (rows, cols) = (osh[0], osh[1]);
            let y = &node.value;
            let mut contrib = vec![T::zero(); y.len()];
            for r in 0..rows {
                let w = (r + 1).min(cols);
                let row = r * cols;
                let mut dot = T::zero();
                for j in 0..w {
                    dot = dot + g[row + j] * y[row + j];
                }
                for j in 0..w {
                    contrib[row + j] = y[row + j] * (g[row + j] - dot);
                }
            }
            accumulate(nodes, grads, p, contrib);
        }
        Op::Custom(op) => {
            let inputs: Vec<(&[T], &[usize])> = node
                .parents
                .iter()
                .map(|&p| (nodes[p].value.as_slice(), nodes[p].shape.as_slice()))
                .collect();
            let gs = op.backward(g, &inputs, (node.value.as_slice(), osh))?;
            if gs.len() != node.parents.len() {
                return Err(Error::Graph(format!(
                    "custom op {} returned {} gradients for {} inputs",
                    op.name(),
                    gs.len(),
                    node.parents.len()
                )));
            }
            for (gv, &p) in gs.into_iter().zip(&node.parents) {
                if let Some(gv) = gv {
                    accumulate(nodes, grads, p, gv);
                }
            }
        }
    }
    Ok(())
}
