//! Sequence layers and the residual stack that composes them.
//!
//! Every layer maps a `T x width` sequence to a `T x width` sequence and is
//! strictly causal: row `t` of the output depends only on rows `0..=t` of
//! the input. The stack wraps each layer as
//! `h = dropout(layer_norm(h + layer(h)))`, with a linear embed in front,
//! a linear head behind, and (for attention stacks) sinusoidal positions
//! added right after the embed.
//!
//! Parameters live in plain [`Param`] buffers owned by the layer structs.
//! A [`Ctx`] decides how those buffers enter the math: bound to a graph
//! they become differentiable leaves (cached by name, so a layer applied
//! to many chunks registers each parameter once); unbound they enter as
//! detached constants and the same code runs in pure inference.

pub mod attention;
pub mod dssm;
pub mod lstm;
pub mod scan;
pub mod selective;


use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Graph, Real, Tensor};

pub use attention::AttnBlock;
pub use dssm::{discretize, dssm_convolutional, dssm_kernel, dssm_recurrent, Discretized, DssmLayer, SsmParams};
pub use lstm::LstmLayer;
pub use selective::{selective_scan, SelectiveLayer};

/// A named, mutable parameter buffer. Optimizers update `data` in place;
/// the shape never changes after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

impl Param {
    pub fn new(shape: &[usize], data: Vec<Real>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter shape must cover its data"
        );
        Param {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: Real) -> Self {
        Param::new(shape, vec![v; shape.iter().product()])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Forward-pass context: where parameters attach, how names are scoped,
/// and whether stochastic pieces (dropout) are live.
#[derive(Clone)]
pub struct Ctx<'g> {
    graph: Option<&'g Graph>,
    prefix: String,
    train: bool,
    rng: Option<Rc<RefCell<ChaCha8Rng>>>,
    cache: Rc<RefCell<HashMap<String, Tensor>>>,
}

impl<'g> Ctx<'g> {
    /// Pure inference: parameters enter detached, dropout is a no-op.
    pub fn infer() -> Ctx<'static> {
        Ctx {
            graph: None,
            prefix: String::new(),
            train: false,
            rng: None,
            cache: Rc::new(RefCell::new(HashMap::new())),
        }
    }

    /// Record onto `g` without training-time stochasticity. Used for
    /// gradient checks and evaluation losses.
    pub fn record(g: &'g Graph) -> Ctx<'g> {
        Ctx {
            graph: Some(g),
            prefix: String::new(),
            train: false,
            rng: None,
            cache: Rc::new(RefCell::new(HashMap::new())),
        }
    }

    /// Record onto `g` with dropout enabled, drawing masks from `rng`.
    pub fn train(g: &'g Graph, rng: Rc<RefCell<ChaCha8Rng>>) -> Ctx<'g> {
        Ctx {
            graph: Some(g),
            prefix: String::new(),
            train: true,
            rng: Some(rng),
            cache: Rc::new(RefCell::new(HashMap::new())),
        }
    }

    /// Child context whose parameter names are prefixed with `seg.`.
    /// The attachment cache is shared, so the same full name always
    /// resolves to the same graph leaf.
    pub fn scoped(&self, seg: &str) -> Ctx<'g> {
        let prefix = if self.prefix.is_empty() {
            format!("{seg}.")
        } else {
            format!("{}{seg}.", self.prefix)
        };
        Ctx {
            graph: self.graph,
            prefix,
            train: self.train,
            rng: self.rng.clone(),
            cache: Rc::clone(&self.cache),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.graph.is_some()
    }

    /// Bind a parameter under this scope. On a graph, the first call
    /// registers a leaf named `prefix + name` and later calls return the
    /// same node; detached, it returns the value as a constant tensor.
    pub fn param(&self, name: &str, p: &Param) -> Result<Tensor> {
        let full = format!("{}{name}", self.prefix);
        match self.graph {
            None => Tensor::from_vec(p.data.clone(), &p.shape),
            Some(g) => {
                if let Some(t) = self.cache.borrow().get(&full) {
                    return Ok(t.clone());
                }
                let t = g.leaf(&full, p.data.clone(), &p.shape)?;
                self.cache.borrow_mut().insert(full, t.clone());
                Ok(t)
            }
        }
    }

    /// Inverted-scale dropout. Identity unless training with `p > 0`.
    pub fn dropout(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let rng = self
            .rng
            .as_ref()
            .ok_or_else(|| Error::Config("dropout requires a training context with an rng".into()))?;
        let keep = 1.0 - p;
        let mut r = rng.borrow_mut();
        let mask: Vec<Real> = (0..x.numel())
            .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        drop(r);
        let m = Tensor::from_vec(mask, x.shape())?;
        x.mul(&m)
    }
}

/// Which sequence layer fills the residual blocks of a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dssm,
    Selective,
    Lstm,
    Attention,
}

fn default_state_dim() -> usize {
    16
}

/// Architecture of one residual stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStackSpec {
    pub kind: LayerKind,
    pub depth: usize,
    pub width: usize,
    /// State size per channel for the state-space kinds; ignored by
    /// lstm and attention.
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    #[serde(default)]
    pub dropout: f64,
    pub d_in: usize,
    pub d_out: usize,
}

impl LayerStackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config(format!(
                "stack dimensions must be positive: depth={} width={} d_in={} d_out={}",
                self.depth, self.width, self.d_in, self.d_out
            )));
        }
        if matches!(self.kind, LayerKind::Dssm | LayerKind::Selective) && self.state_dim == 0 {
            return Err(Error::Config("state_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1): {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One width-preserving sequence layer.
#[derive(Clone, Debug)]
pub enum Layer {
    Dssm(DssmLayer),
    Selective(SelectiveLayer),
    Lstm(LstmLayer),
    Attention(AttnBlock),
}

impl Layer {
    pub fn forward(&self, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dssm(l) => l.forward(ctx, u),
            Layer::Selective(l) => l.forward(ctx, u),
            Layer::Lstm(l) => l.forward(ctx, u),
            Layer::Attention(l) => l.forward(ctx, u),
        }
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        match self {
            Layer::Dssm(l) => l.params(),
            Layer::Selective(l) => l.params(),
            Layer::Lstm(l) => l.params(),
            Layer::Attention(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            Layer::Dssm(l) => l.params_mut(),
            Layer::Selective(l) => l.params_mut(),
            Layer::Lstm(l) => l.params_mut(),
            Layer::Attention(l) => l.params_mut(),
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    layer: Layer,
    ln_gamma: Param,
    ln_beta: Param,
}

/// Embed, `depth` residual blocks, head.
#[derive(Clone, Debug)]
pub struct LayerStack {
    pub spec: LayerStackSpec,
    embed_w: Param,
    embed_b: Param,
    blocks: Vec<Block>,
    head_w: Param,
    head_b: Param,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, the usual linear init.
pub(crate) fn linear_param(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Param {
    let bound = 1.0 / (rows as Real).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Param::new(&[rows, cols], data)
}

pub(crate) fn bias_param(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Param {
    let bound = 1.0 / (fan_in as Real).sqrt();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Param::new(&[n], data)
}

impl LayerStack {
    pub fn new(spec: &LayerStackSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let w = spec.width;
        let embed_w = linear_param(rng, spec.d_in, w);
        let embed_b = bias_param(rng, spec.d_in, w);
        let mut blocks = Vec::with_capacity(spec.depth);
        for _ in 0..spec.depth {
            let layer = match spec.kind {
                LayerKind::Dssm => Layer::Dssm(DssmLayer::init(w, spec.state_dim, rng)),
                LayerKind::Selective => Layer::Selective(SelectiveLayer::init(w, spec.state_dim, rng)),
                LayerKind::Lstm => Layer::Lstm(LstmLayer::init(w, rng)),
                LayerKind::Attention => Layer::Attention(AttnBlock::init(w, rng)),
            };
            blocks.push(Block {
                layer,
                ln_gamma: Param::full(&[w], 1.0),
                ln_beta: Param::zeros(&[w]),
            });
        }
        let head_w = linear_param(rng, w, spec.d_out);
        let head_b = bias_param(rng, w, spec.d_out);
        Ok(LayerStack {
            spec: spec.clone(),
            embed_w,
            embed_b,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Map a `T x d_in` sequence to `T x d_out`, causally.
    pub fn forward(&self, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
        if u.rank() != 2 || u.shape()[1] != self.spec.d_in {
            return Err(Error::Shape(format!(
                "stack expects [T, {}] input, got {:?}",
                self.spec.d_in,
                u.shape()
            )));
        }
        let t_len = u.shape()[0];
        let ec = ctx.scoped("embed");
        let mut h = u
            .matmul(&ec.param("w", &self.embed_w)?)?
            .add(&ec.param("b", &self.embed_b)?.reshape(&[1, self.spec.width])?)?;
        if self.spec.kind == LayerKind::Attention {
            h = h.add(&attention::sinusoidal_positions(t_len, self.spec.width)?)?;
        }
        for (i, block) in self.blocks.iter().enumerate() {
            let bc = ctx.scoped(&format!("block{i}"));
            let y = block.layer.forward(&bc, &h)?;
            let r = h.add(&y)?;
            let lc = bc.scoped("ln");
            let n = layer_norm(
                &r,
                &lc.param("gamma", &block.ln_gamma)?,
                &lc.param("beta", &block.ln_beta)?,
            )?;
            h = ctx.dropout(&n, self.spec.dropout)?;
        }
        let hc = ctx.scoped("head");
        h.matmul(&hc.param("w", &self.head_w)?)?
            .add(&hc.param("b", &self.head_b)?.reshape(&[1, self.spec.d_out])?)
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = vec![
            ("embed.w".into(), &self.embed_w),
            ("embed.b".into(), &self.embed_b),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, p) in block.layer.params() {
                out.push((format!("block{i}.{name}"), p));
            }
            out.push((format!("block{i}.ln.gamma"), &block.ln_gamma));
            out.push((format!("block{i}.ln.beta"), &block.ln_beta));
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = vec![
            ("embed.w".into(), &mut self.embed_w),
            ("embed.b".into(), &mut self.embed_b),
        ];
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (name, p) in block.layer.params_mut() {
                out.push((format!("block{i}.{name}"), p));
            }
            out.push((format!("block{i}.ln.gamma"), &mut block.ln_gamma));
            out.push((format!("block{i}.ln.beta"), &mut block.ln_beta));
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }
}

/// Row-wise layer norm over the channel axis with learned scale and shift.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!(
            "layer_norm expects rank 2, got {:?}",
            x.shape()
        )));
    }
    let w = x.shape()[1];
    let inv_w = 1.0 / w as Real;
    let mean = x.sum_axes(&[1])?.scale(inv_w)?;
    let xc = x.sub(&mean)?;
    let var = xc.mul(&xc)?.sum_axes(&[1])?.scale(inv_w)?;
    let denom = var.add_scalar(1e-5)?.sqrt()?;
    let normed = xc.div(&denom)?;
    normed
        .mul(&gamma.reshape(&[1, w])?)?
        .add(&beta.reshape(&[1, w])?)
}
