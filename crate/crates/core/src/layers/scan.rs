//! Prefix composition of diagonal complex affine maps, and the fused
//! recurrence op built on it.
//!
//! An element is a map `x -> a*x + b` acting elementwise on a width-`m`
//! complex state. Composing element `t` after the prefix of `0..t` gives
//! the state trajectory of the recurrence `x_t = a_t*x_{t-1} + b_t` with
//! `x_{-1} = 0`: the inclusive prefix at `t` has exactly `b = x_t`.
//!
//! Complex numbers are carried as separate real and imaginary planes;
//! there is no interleaving anywhere.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ndgrad::CustomVjp;
use crate::scalar::Scalar;
use crate::{Real, Tensor};

/// Inclusive scan of affine maps under "earlier applied first".
///
/// Inputs are `t_len` rows of width `m` (flat, row-major). Returns the
/// composed prefixes in the same layout. Blelloch two-phase sweep over a
/// power-of-two padded workspace: O(t_len * m) work, exact association
/// order aside this matches the sequential recurrence.
pub fn associative_scan<T: Scalar>(
    a_re: &[T],
    a_im: &[T],
    b_re: &[T],
    b_im: &[T],
    t_len: usize,
    m: usize,
) -> Result<(Vec<T>, Vec<T>, Vec<T>, Vec<T>)> {
    let n = t_len * m;
    if a_re.len() != n || a_im.len() != n || b_re.len() != n || b_im.len() != n {
        return Err(Error::Shape(format!(
            "scan planes must all be {t_len}x{m}, got lengths {}/{}/{}/{}",
            a_re.len(),
            a_im.len(),
            b_re.len(),
            b_im.len()
        )));
    }
    if t_len == 0 {
        return Ok((vec![], vec![], vec![], vec![]));
    }
    let p = t_len.next_power_of_two();
    // workspace padded with identity maps (a = 1, b = 0)
    let mut war = vec![T::one(); p * m];
    let mut wai = vec![T::zero(); p * m];
    let mut wbr = vec![T::zero(); p * m];
    let mut wbi = vec![T::zero(); p * m];
    war[..n].copy_from_slice(a_re);
    wai[..n].copy_from_slice(a_im);
    wbr[..n].copy_from_slice(b_re);
    wbi[..n].copy_from_slice(b_im);

    // combine(earlier e, later l) stored at `dst`:
    //   a = a_l * a_e,  b = a_l * b_e + b_l
    let combine = |war: &mut [T], wai: &mut [T], wbr: &mut [T], wbi: &mut [T], e: usize, l: usize, dst: usize| {
        for c in 0..m {
            let (aer, aei) = (war[e * m + c], wai[e * m + c]);
            let (ber, bei) = (wbr[e * m + c], wbi[e * m + c]);
            let (alr, ali) = (war[l * m + c], wai[l * m + c]);
            let (blr, bli) = (wbr[l * m + c], wbi[l * m + c]);
            war[dst * m + c] = alr * aer - ali * aei;
            wai[dst * m + c] = alr * aei + ali * aer;
            wbr[dst * m + c] = alr * ber - ali * bei + blr;
            wbi[dst * m + c] = alr * bei + ali * ber + bli;
        }
    };

    // up-sweep: right slot of each span accumulates the span's total
    let mut half = 1;
    while half < p {
        let stride = half * 2;
        let mut base = 0;
        while base < p {
            combine(&mut war, &mut wai, &mut wbr, &mut wbi, base + half - 1, base + stride - 1, base + stride - 1);
            base += stride;
        }
        half = stride;
    }

    // down-sweep: root becomes identity, each node hands its exclusive
    // prefix to the left child and `prefix ∘ left-total` to the right
    for c in 0..m {
        war[(p - 1) * m + c] = T::one();
        wai[(p - 1) * m + c] = T::zero();
        wbr[(p - 1) * m + c] = T::zero();
        wbi[(p - 1) * m + c] = T::zero();
    }
    let mut half = p / 2;
    while half >= 1 {
        let stride = half * 2;
        let mut base = 0;
        while base < p {
            let li = base + half - 1;
            let ri = base + stride - 1;
            for c in 0..m {
                let tar = war[li * m + c];
                let tai = wai[li * m + c];
                let tbr = wbr[li * m + c];
                let tbi = wbi[li * m + c];
                war[li * m + c] = war[ri * m + c];
                wai[li * m + c] = wai[ri * m + c];
                wbr[li * m + c] = wbr[ri * m + c];
                wbi[li * m + c] = wbi[ri * m + c];
                // right = later(old left total) ∘ earlier(parent prefix)
                let (aer, aei) = (war[li * m + c], wai[li * m + c]);
                let (ber, bei) = (wbr[li * m + c], wbi[li * m + c]);
                war[ri * m + c] = tar * aer - tai * aei;
                wai[ri * m + c] = tar * aei + tai * aer;
                wbr[ri * m + c] = tar * ber - tai * bei + tbr;
                wbi[ri * m + c] = tar * bei + tai * ber + tbi;
            }
            base += stride;
        }
        half /= 2;
    }

    // inclusive[t] = element[t] ∘ exclusive[t]
    let mut oar = vec![T::zero(); n];
    let mut oai = vec![T::zero(); n];
    let mut obr = vec![T::zero(); n];
    let mut obi = vec![T::zero(); n];
    for t in 0..t_len {
        for c in 0..m {
            let i = t * m + c;
            let (aer, aei) = (war[i], wai[i]);
            let (ber, bei) = (wbr[i], wbi[i]);
            let (alr, ali) = (a_re[i], a_im[i]);
            let (blr, bli) = (b_re[i], b_im[i]);
            oar[i] = alr * aer - ali * aei;
            oai[i] = alr * aei + ali * aer;
            obr[i] = alr * ber - ali * bei + blr;
            obi[i] = alr * bei + ali * ber + bli;
        }
    }
    Ok((oar, oai, obr, obi))
}

/// The same recurrence run as a plain loop: `x_t = a_t*x_{t-1} + b_t`,
/// `x_{-1} = 0`. Returns the state planes. With `a_broadcast` the `a`
/// planes hold a single row shared by all steps.
pub fn diag_recurrence_sequential(
    a_re: &[Real],
    a_im: &[Real],
    b_re: &[Real],
    b_im: &[Real],
    t_len: usize,
    m: usize,
    a_broadcast: bool,
) -> (Vec<Real>, Vec<Real>) {
    let mut xr = vec![0.0; t_len * m];
    let mut xi = vec![0.0; t_len * m];
    let mut sr = vec![0.0; m];
    let mut si = vec![0.0; m];
    for t in 0..t_len {
        let ao = if a_broadcast { 0 } else { t * m };
        for c in 0..m {
            let (ar, ai) = (a_re[ao + c], a_im[ao + c]);
            let nr = ar * sr[c] - ai * si[c] + b_re[t * m + c];
            let ni = ar * si[c] + ai * sr[c] + b_im[t * m + c];
            sr[c] = nr;
            si[c] = ni;
        }
        xr[t * m..(t + 1) * m].copy_from_slice(&sr);
        xi[t * m..(t + 1) * m].copy_from_slice(&si);
    }
    (xr, xi)
}

/// Fused recurrence node. Inputs, in order: `a_re`, `a_im` of shape
/// `[t_a, m]` with `t_a` either 1 (shared across steps) or `t_len`, and
/// `b_re`, `b_im` of shape `[t_len, m]`. Output is `[2, t_len, m]`:
/// plane 0 the real states, plane 1 the imaginary states.
///
/// The pullback treats each upstream pair as a complex gradient and runs
/// the recurrence backwards:
///   lam_t = g_t + conj(a_{t+1}) * lam_{t+1}
///   d b_t = lam_t
///   d a_t = conj(x_{t-1}) * lam_t   (zero at t = 0)
/// with `d a` summed over steps when `a` is shared.
#[derive(Debug)]
struct DiagRecurrence {
    t_len: usize,
    m: usize,
    a_steps: usize,
}

impl CustomVjp<Real> for DiagRecurrence {
    fn name(&self) -> &'static str {
        "diag_recurrence"
    }

    fn backward(
        &self,
        grad_out: &[Real],
        inputs: &[(&[Real], &[usize])],
        out: (&[Real], &[usize]),
    ) -> Result<Vec<Option<Vec<Real>>>> {
        let (t_len, m) = (self.t_len, self.m);
        let plane = t_len * m;
        let a_re = inputs[0].0;
        let a_im = inputs[1].0;
        let x = out.0;
        let (gre, gim) = (&grad_out[..plane], &grad_out[plane..]);
        let broadcast = self.a_steps == 1;

        let mut dar = vec![0.0; self.a_steps * m];
        let mut dai = vec![0.0; self.a_steps * m];
        let mut dbr = vec![0.0; plane];
        let mut dbi = vec![0.0; plane];
        let mut lr = vec![0.0; m];
        let mut li = vec![0.0; m];
        for t in (0..t_len).rev() {
            let an = if broadcast { 0 } else { (t + 1) * m };
            for c in 0..m {
                let i = t * m + c;
                let (mut vr, mut vi) = (gre[i], gim[i]);
                if t + 1 < t_len {
                    let (ar, ai) = (a_re[an + c], a_im[an + c]);
                    vr += ar * lr[c] + ai * li[c];
                    vi += ar * li[c] - ai * lr[c];
                }
                lr[c] = vr;
                li[c] = vi;
                dbr[i] = vr;
                dbi[i] = vi;
                if t > 0 {
                    let (pxr, pxi) = (x[(t - 1) * m + c], x[plane + (t - 1) * m + c]);
                    let gr = pxr * vr + pxi * vi;
                    let gi = pxr * vi - pxi * vr;
                    let ao = if broadcast { c } else { i };
                    dar[ao] += gr;
                    dai[ao] += gi;
                }
            }
        }
        Ok(vec![Some(dar), Some(dai), Some(dbr), Some(dbi)])
    }
}

/// Run the recurrence on tensors, recording the fused node when any input
/// is attached. `a` planes are `[1, m]` or `[t_len, m]`; `b` planes are
/// `[t_len, m]`. Output `[2, t_len, m]` as described on [`DiagRecurrence`].
pub fn diag_recurrence(
    a_re: &Tensor,
    a_im: &Tensor,
    b_re: &Tensor,
    b_im: &Tensor,
) -> Result<Tensor> {
    if b_re.rank() != 2 || b_re.shape() != b_im.shape() {
        return Err(Error::Shape(format!(
            "recurrence drive planes must be equal rank-2 shapes, got {:?} and {:?}",
            b_re.shape(),
            b_im.shape()
        )));
    }
    let (t_len, m) = (b_re.shape()[0], b_re.shape()[1]);
    if a_re.shape() != a_im.shape() || a_re.rank() != 2 || a_re.shape()[1] != m {
        return Err(Error::Shape(format!(
            "coefficient planes must be [1, {m}] or [{t_len}, {m}], got {:?}",
            a_re.shape()
        )));
    }
    let a_steps = a_re.shape()[0];
    if a_steps != 1 && a_steps != t_len {
        return Err(Error::Shape(format!(
            "coefficient planes cover {a_steps} steps, expected 1 or {t_len}"
        )));
    }

    let (xr, xi) = if a_steps == 1 {
        // scan wants one element per step; tile the shared coefficient
        let mut ar = Vec::with_capacity(t_len * m);
        let mut ai = Vec::with_capacity(t_len * m);
        for _ in 0..t_len {
            ar.extend_from_slice(a_re.data());
            ai.extend_from_slice(a_im.data());
        }
        let (_, _, br, bi) = associative_scan(&ar, &ai, b_re.data(), b_im.data(), t_len, m)?;
        (br, bi)
    } else {
        let (_, _, br, bi) =
            associative_scan(a_re.data(), a_im.data(), b_re.data(), b_im.data(), t_len, m)?;
        (br, bi)
    };

    for t in 0..t_len {
        let row_ok = |v: &[Real]| v[t * m..(t + 1) * m].iter().all(|x| x.is_finite());
        if !row_ok(&xr) || !row_ok(&xi) {
            return Err(Error::Numerical(format!(
                "recurrence state is non-finite at step {t}"
            )));
        }
    }

    let mut out = xr;
    out.extend_from_slice(&xi);
    Tensor::custom(
        Rc::new(DiagRecurrence { t_len, m, a_steps }),
        &[a_re, a_im, b_re, b_im],
        out,
        &[2, t_len, m],
    )
}
