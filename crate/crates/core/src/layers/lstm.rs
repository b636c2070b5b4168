//! Standard LSTM with hidden size equal to the stack width.
//!
//! Input projections for all four gates are batched into one matmul per
//! gate ahead of the time loop; the loop itself only does the
//! hidden-to-hidden work. Initial hidden and cell states are zero.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Tensor;

use super::{bias_param, linear_param, Ctx, Param};

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub width: usize,
    w_xi: Param,
    w_xf: Param,
    w_xg: Param,
    w_xo: Param,
    w_hi: Param,
    w_hf: Param,
    w_hg: Param,
    w_ho: Param,
    b_i: Param,
    b_f: Param,
    b_g: Param,
    b_o: Param,
}

impl LstmLayer {
    pub fn init(width: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmLayer {
            width,
            w_xi: linear_param(rng, width, width),
            w_xf: linear_param(rng, width, width),
            w_xg: linear_param(rng, width, width),
            w_xo: linear_param(rng, width, width),
            w_hi: linear_param(rng, width, width),
            w_hf: linear_param(rng, width, width),
            w_hg: linear_param(rng, width, width),
            w_ho: linear_param(rng, width, width),
            b_i: bias_param(rng, width, width),
            b_f: bias_param(rng, width, width),
            b_g: bias_param(rng, width, width),
            b_o: bias_param(rng, width, width),
        }
    }

    pub fn forward(&self, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
        let w = self.width;
        if u.rank() != 2 || u.shape()[1] != w {
            return Err(Error::Shape(format!(
                "layer expects [T, {w}] input, got {:?}",
                u.shape()
            )));
        }
        let t_len = u.shape()[0];
        let xi = u
            .matmul(&ctx.param("w_xi", &self.w_xi)?)?
            .add(&ctx.param("b_i", &self.b_i)?.reshape(&[1, w])?)?;
        let xf = u
            .matmul(&ctx.param("w_xf", &self.w_xf)?)?
            .add(&ctx.param("b_f", &self.b_f)?.reshape(&[1, w])?)?;
        let xg = u
            .matmul(&ctx.param("w_xg", &self.w_xg)?)?
            .add(&ctx.param("b_g", &self.b_g)?.reshape(&[1, w])?)?;
        let xo = u
            .matmul(&ctx.param("w_xo", &self.w_xo)?)?
            .add(&ctx.param("b_o", &self.b_o)?.reshape(&[1, w])?)?;
        let w_hi = ctx.param("w_hi", &self.w_hi)?;
        let w_hf = ctx.param("w_hf", &self.w_hf)?;
        let w_hg = ctx.param("w_hg", &self.w_hg)?;
        let w_ho = ctx.param("w_ho", &self.w_ho)?;

        let mut h_prev: Option<Tensor> = None;
        let mut c_prev: Option<Tensor> = None;
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (gi, gf, gg, go) = match &h_prev {
                None => (xi.row(t)?, xf.row(t)?, xg.row(t)?, xo.row(t)?),
                Some(h) => (
                    xi.row(t)?.add(&h.matmul(&w_hi)?)?,
                    xf.row(t)?.add(&h.matmul(&w_hf)?)?,
                    xg.row(t)?.add(&h.matmul(&w_hg)?)?,
                    xo.row(t)?.add(&h.matmul(&w_ho)?)?,
                ),
            };
            let i = gi.sigmoid()?;
            let f = gf.sigmoid()?;
            let g = gg.tanh()?;
            let o = go.sigmoid()?;
            let c = match &c_prev {
                None => i.mul(&g)?,
                Some(cp) => f.mul(cp)?.add(&i.mul(&g)?)?,
            };
            let h = o.mul(&c.tanh()?)?;
            rows.push(h.clone());
            h_prev = Some(h);
            c_prev = Some(c);
        }
        Tensor::stack_rows(&rows)
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        vec![
            ("w_xi".into(), &self.w_xi),
            ("w_xf".into(), &self.w_xf),
            ("w_xg".into(), &self.w_xg),
            ("w_xo".into(), &self.w_xo),
            ("w_hi".into(), &self.w_hi),
            ("w_hf".into(), &self.w_hf),
            ("w_hg".into(), &self.w_hg),
            ("w_ho".into(), &self.w_ho),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_g".into(), &self.b_g),
            ("b_o".into(), &self.b_o),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("w_xi".into(), &mut self.w_xi),
            ("w_xf".into(), &mut self.w_xf),
            ("w_xg".into(), &mut self.w_xg),
            ("w_xo".into(), &mut self.w_xo),
            ("w_hi".into(), &mut self.w_hi),
            ("w_hf".into(), &mut self.w_hf),
            ("w_hg".into(), &mut self.w_hg),
            ("w_ho".into(), &mut self.w_ho),
            ("b_i".into(), &mut self.b_i),
            ("b_f".into(), &mut self.b_f),
            ("b_g".into(), &mut self.b_g),
            ("b_o".into(), &mut self.b_o),
        ]
    }
}
