//! Selective state-space layer: the recurrence coefficients are functions
//! of the input at every step.
//!
//! From the input row `u_t` (width `d`) the layer derives
//!
//! ```text
//! dt_t  = softplus(u_t W_dt + b_dt)        per-channel step, T x d
//! b_t   = u_t W_b                          shared input proj, T x n
//! c_t   = u_t W_c                          shared readout,    T x n
//! ```
//!
//! and runs, per channel `c` and mode `j`,
//!
//! ```text
//! abar_t = exp(dt_t[c] * a[c,j])
//! x_t    = abar_t * x_{t-1} + dt_t[c] * b_t[j] * u_t[c]
//! y_t[c] = Re(sum_j c_t[j] * x_t[c,j]) + d[c] * u_t[c]
//! ```
//!
//! The state update is evaluated with the parallel associative scan from
//! [`super::scan`]; a plain sequential loop over the same recurrence must
//! give the same trajectory.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seq::Seq;
use crate::{Real, Tensor};

use super::{linear_param, Ctx, Param};

const PI: Real = std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct SelectiveLayer {
    pub channels: usize,
    pub n: usize,
    /// continuous poles, stored as in the time-invariant layer
    pub log_neg_a_re: Param,
    pub a_im: Param,
    pub w_dt: Param,
    pub b_dt: Param,
    pub w_b: Param,
    pub w_c: Param,
    pub d: Param,
}

impl SelectiveLayer {
    /// Poles at `-1/2 + i*pi*j`; projections with the usual linear init;
    /// the step bias is set so the resting `softplus(b_dt)` is
    /// log-uniform in [1e-3, 1e-1].
    pub fn init(width: usize, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut a_im = vec![0.0; width * n];
        for c in 0..width {
            for j in 0..n {
                a_im[c * n + j] = PI * j as Real;
            }
        }
        let (lo, hi) = ((1e-3 as Real).ln(), (1e-1 as Real).ln());
        let b_dt: Vec<Real> = (0..width)
            .map(|_| {
                let dt0: Real = rng.gen_range(lo..hi).exp();
                // inverse softplus
                (dt0.exp() - 1.0).ln()
            })
            .collect();
        SelectiveLayer {
            channels: width,
            n,
            log_neg_a_re: Param::full(&[width, n], (0.5 as Real).ln()),
            a_im: Param::new(&[width, n], a_im),
            w_dt: linear_param(rng, width, width),
            b_dt: Param::new(&[width], b_dt),
            w_b: linear_param(rng, width, n),
            w_c: linear_param(rng, width, n),
            d: Param::full(&[width], 1.0),
        }
    }

    pub fn forward(&self, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
        let (d, n) = (self.channels, self.n);
        if u.rank() != 2 || u.shape()[1] != d {
            return Err(Error::Shape(format!(
                "layer expects [T, {d}] input, got {:?}",
                u.shape()
            )));
        }
        let t_len = u.shape()[0];
        let dn = d * n;

        let dt = u
            .matmul(&ctx.param("w_dt", &self.w_dt)?)?
            .add(&ctx.param("b_dt", &self.b_dt)?.reshape(&[1, d])?)?
            .softplus()?;
        let bt = u.matmul(&ctx.param("w_b", &self.w_b)?)?;
        let ct = u.matmul(&ctx.param("w_c", &self.w_c)?)?;

        let a_re = ctx
            .param("log_neg_a_re", &self.log_neg_a_re)?
            .exp()?
            .neg()?
            .reshape(&[1, d, n])?;
        let a_im = ctx.param("a_im", &self.a_im)?.reshape(&[1, d, n])?;
        let dt3 = dt.reshape(&[t_len, d, 1])?;
        let z_re = dt3.mul(&a_re)?;
        let z_im = dt3.mul(&a_im)?;
        let mag = z_re.exp()?;
        let ab_re = mag.mul(&z_im.cos()?)?.reshape(&[t_len, dn])?;
        let ab_im = mag.mul(&z_im.sin()?)?.reshape(&[t_len, dn])?;

        // drive_t[c,j] = dt_t[c] * u_t[c] * b_t[j], purely real
        let du = dt.mul(u)?.reshape(&[t_len, d, 1])?;
        let drive_re = du.mul(&bt.reshape(&[t_len, 1, n])?)?.reshape(&[t_len, dn])?;
        let drive_im = Tensor::zeros(&[t_len, dn]);

        let x = super::scan::diag_recurrence(&ab_re, &ab_im, &drive_re, &drive_im)?;
        let x_re = x.gather_rows(&[0])?.reshape(&[t_len, d, n])?;

        // readout is real, so only the real state plane contributes
        let y = x_re
            .mul(&ct.reshape(&[t_len, 1, n])?)?
            .sum_axes(&[2])?
            .reshape(&[t_len, d])?;
        let d_skip = ctx.param("d", &self.d)?.reshape(&[1, d])?;
        y.add(&u.mul(&d_skip)?)
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        vec![
            ("log_neg_a_re".into(), &self.log_neg_a_re),
            ("a_im".into(), &self.a_im),
            ("w_dt".into(), &self.w_dt),
            ("b_dt".into(), &self.b_dt),
            ("w_b".into(), &self.w_b),
            ("w_c".into(), &self.w_c),
            ("d".into(), &self.d),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("log_neg_a_re".into(), &mut self.log_neg_a_re),
            ("a_im".into(), &mut self.a_im),
            ("w_dt".into(), &mut self.w_dt),
            ("b_dt".into(), &mut self.b_dt),
            ("w_b".into(), &mut self.w_b),
            ("w_c".into(), &mut self.w_c),
            ("d".into(), &mut self.d),
        ]
    }
}

/// Plain-matrix entry point: run the layer detached on `u` rows.
pub fn selective_scan(layer: &SelectiveLayer, u: &Seq) -> Result<Seq> {
    let y = layer.forward(&Ctx::infer(), &u.to_tensor())?;
    Seq::from_tensor(&y)
}
