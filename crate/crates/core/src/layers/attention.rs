//! Single-head causal self-attention block.
//!
//! The block returns its residual branch only: for input `h` it computes
//! `a = attn(h)` and `f = ffn(h + a)` and returns `a + f`, so the stack's
//! outer `h + layer(h)` completes the usual two-residual wiring. Position
//! information comes from sinusoidal features added once after the embed
//! (see the stack), since attention is otherwise permutation-equivariant.
//!
//! The trainable path materializes the `T x T` score matrix on the tape.
//! For long sequences where only values are needed, [`attention_streaming`]
//! walks one query row at a time in O(T) extra memory.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seq::Seq;
use crate::{Real, Tensor};

use super::{bias_param, linear_param, Ctx, Param};

#[derive(Clone, Debug)]
pub struct AttnBlock {
    pub width: usize,
    w_q: Param,
    w_k: Param,
    w_v: Param,
    w_o: Param,
    w_f1: Param,
    b_f1: Param,
    w_f2: Param,
    b_f2: Param,
}

impl AttnBlock {
    pub fn init(width: usize, rng: &mut ChaCha8Rng) -> Self {
        AttnBlock {
            width,
            w_q: linear_param(rng, width, width),
            w_k: linear_param(rng, width, width),
            w_v: linear_param(rng, width, width),
            w_o: linear_param(rng, width, width),
            w_f1: linear_param(rng, width, 2 * width),
            b_f1: bias_param(rng, width, 2 * width),
            w_f2: linear_param(rng, 2 * width, width),
            b_f2: bias_param(rng, 2 * width, width),
        }
    }

    pub fn forward(&self, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
        let w = self.width;
        if u.rank() != 2 || u.shape()[1] != w {
            return Err(Error::Shape(format!(
                "block expects [T, {w}] input, got {:?}",
                u.shape()
            )));
        }
        let q = u.matmul(&ctx.param("w_q", &self.w_q)?)?;
        let k = u.matmul(&ctx.param("w_k", &self.w_k)?)?;
        let v = u.matmul(&ctx.param("w_v", &self.w_v)?)?;
        let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (w as Real).sqrt())?;
        let probs = scores.causal_softmax()?;
        let a = probs.matmul(&v)?.matmul(&ctx.param("w_o", &self.w_o)?)?;
        let h1 = u.add(&a)?;
        let f = h1
            .matmul(&ctx.param("w_f1", &self.w_f1)?)?
            .add(&ctx.param("b_f1", &self.b_f1)?.reshape(&[1, 2 * w])?)?
            .silu()?
            .matmul(&ctx.param("w_f2", &self.w_f2)?)?
            .add(&ctx.param("b_f2", &self.b_f2)?.reshape(&[1, w])?)?;
        a.add(&f)
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        vec![
            ("w_q".into(), &self.w_q),
            ("w_k".into(), &self.w_k),
            ("w_v".into(), &self.w_v),
            ("w_o".into(), &self.w_o),
            ("w_f1".into(), &self.w_f1),
            ("b_f1".into(), &self.b_f1),
            ("w_f2".into(), &self.w_f2),
            ("b_f2".into(), &self.b_f2),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("w_q".into(), &mut self.w_q),
            ("w_k".into(), &mut self.w_k),
            ("w_v".into(), &mut self.w_v),
            ("w_o".into(), &mut self.w_o),
            ("w_f1".into(), &mut self.w_f1),
            ("b_f1".into(), &mut self.b_f1),
            ("w_f2".into(), &mut self.w_f2),
            ("b_f2".into(), &mut self.b_f2),
        ]
    }
}

/// Fixed sinusoidal position features, `t_len x width`, detached.
pub fn sinusoidal_positions(t_len: usize, width: usize) -> Result<Tensor> {
    let mut data = vec![0.0; t_len * width];
    for t in 0..t_len {
        for c in 0..width {
            let pair = (c / 2) as Real;
            let rate = (10000.0 as Real).powf(2.0 * pair / width as Real);
            let arg = t as Real / rate;
            data[t * width + c] = if c % 2 == 0 { arg.sin() } else { arg.cos() };
        }
    }
    Tensor::from_vec(data, &[t_len, width])
}

/// Causal softmax attention over plain matrices, one query row at a time.
/// Same math as the tape path, never materializes the score matrix.
pub fn attention_streaming(q: &Seq, k: &Seq, v: &Seq) -> Result<Seq> {
    if q.rows != k.rows || k.rows != v.rows || q.cols != k.cols {
        return Err(Error::Shape(format!(
            "attention operands disagree: q {}x{}, k {}x{}, v {}x{}",
            q.rows, q.cols, k.rows, k.cols, v.rows, v.cols
        )));
    }
    let scale = 1.0 / (q.cols as Real).sqrt();
    let mut y = Seq::zeros(q.rows, v.cols);
    let mut scores = vec![0.0; q.rows];
    for t in 0..q.rows {
        let qt = q.row(t);
        let mut max = Real::NEG_INFINITY;
        for (s, slot) in scores[..=t].iter_mut().enumerate() {
            let dot: Real = qt.iter().zip(k.row(s)).map(|(a, b)| a * b).sum();
            *slot = dot * scale;
            max = max.max(*slot);
        }
        let mut z = 0.0;
        for slot in scores[..=t].iter_mut() {
            *slot = (*slot - max).exp();
            z += *slot;
        }
        let out = y.row_mut(t);
        for (s, &p) in scores[..=t].iter().enumerate() {
            let wgt = p / z;
            for (o, x) in out.iter_mut().zip(v.row(s)) {
                *o += wgt * x;
            }
        }
    }
    Ok(y)
}
