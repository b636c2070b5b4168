//! Radix-2 FFT on explicit (re, im) pair buffers, plus the convolution
//! helpers built on it.
//!
//! `fft_real` pads the input with zeros up to the next power of two and
//! returns the spectrum at that padded length; `ifft_real` undoes it and
//! truncates back. Twiddle factors are evaluated in f64 and converted, so
//! accuracy does not degrade for narrower scalar types.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place iterative Cooley-Tukey transform. Length must be a power of two.
pub fn fft_inplace<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) -> Result<()> {
    let n = re.len();
    if n != im.len() {
        return Err(Error::Shape(format!(
            "fft buffers disagree: {} vs {}",
            n,
            im.len()
        )));
    }
    if !n.is_power_of_two() {
        return Err(Error::Shape(format!("fft length {n} is not a power of two")));
    }
    if n == 1 {
        return Ok(());
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2usize;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (T::of(ang.cos()), T::of(ang.sin()));
        let mut start = 0usize;
        while start < n {
            let (mut cr, mut ci) = (T::one(), T::zero());
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] = re[a] + tr;
                im[a] = im[a] + ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
    if inverse {
        let inv = T::one() / T::of(n as f64);
        for v in re.iter_mut() {
            *v = *v * inv;
        }
        for v in im.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok(())
}

/// Forward transform of a real sequence. Returns (re, im) of length
/// `next_pow2(x.len())`; the transform is linear in its input.
pub fn fft_real<T: Scalar>(x: &[T]) -> (Vec<T>, Vec<T>) {
    let p = next_pow2(x.len());
    let mut re = Vec::with_capacity(p);
    re.extend_from_slice(x);
    re.resize(p, T::zero());
    let mut im = vec![T::zero(); p];
    fft_inplace(&mut re, &mut im, false).expect("padded length is a power of two");
    (re, im)
}

/// Inverse of [`fft_real`], truncated back to the original length `n`.
pub fn ifft_real<T: Scalar>(re: &[T], im: &[T], n: usize) -> Result<Vec<T>> {
    if n > re.len() {
        return Err(Error::Shape(format!(
            "cannot truncate spectrum of length {} to {n}",
            re.len()
        )));
    }
    let mut r = re.to_vec();
    let mut i = im.to_vec();
    fft_inplace(&mut r, &mut i, true)?;
    r.truncate(n);
    Ok(r)
}

/// Full linear convolution of two real sequences via zero-padded FFT;
/// output length is `x.len() + h.len() - 1`.
pub fn linear_conv<T: Scalar>(x: &[T], h: &[T]) -> Result<Vec<T>> {
    if x.is_empty() || h.is_empty() {
        return Err(Error::Shape("convolution of an empty sequence".into()));
    }
    let out_len = x.len() + h.len() - 1;
    let p = next_pow2(out_len);
    let mut xr = Vec::with_capacity(p);
    xr.extend_from_slice(x);
    xr.resize(p, T::zero());
    let mut xi = vec![T::zero(); p];
    let mut hr = Vec::with_capacity(p);
    hr.extend_from_slice(h);
    hr.resize(p, T::zero());
    let mut hi = vec![T::zero(); p];
    fft_inplace(&mut xr, &mut xi, false)?;
    fft_inplace(&mut hr, &mut hi, false)?;
    for k in 0..p {
        let r = xr[k] * hr[k] - xi[k] * hi[k];
        let i = xr[k] * hi[k] + xi[k] * hr[k];
        xr[k] = r;
        xi[k] = i;
    }
    fft_inplace(&mut xr, &mut xi, true)?;
    xr.truncate(out_len);
    Ok(xr)
}

/// Circular convolution with period `x.len()`; works for any length by
/// folding the linear convolution tail back.
pub fn circular_conv<T: Scalar>(x: &[T], h: &[T]) -> Result<Vec<T>> {
    if x.len() != h.len() {
        return Err(Error::Shape(format!(
            "circular convolution needs equal lengths, got {} and {}",
            x.len(),
            h.len()
        )));
    }
    let n = x.len();
    let lin = linear_conv(x, h)?;
    let mut out = vec![T::zero(); n];
    for (t, &v) in lin.iter().enumerate() {
        out[t % n] = out[t % n] + v;
    }
    Ok(out)
}

/// Causal convolution y_t = sum_{s<=t} k_s u_{t-s}, truncated to u's length.
pub fn causal_conv<T: Scalar>(k: &[T], u: &[T]) -> Result<Vec<T>> {
    let mut y = linear_conv(k, u)?;
    y.truncate(u.len());
    Ok(y)
}

/// Causal cross-correlation c_tau = sum_{t>=tau} g_t u_{t-tau} for
/// tau in [0, u.len()); this is the adjoint of [`causal_conv`].
pub fn causal_corr<T: Scalar>(g: &[T], u: &[T]) -> Result<Vec<T>> {
    if g.len() != u.len() {
        return Err(Error::Shape(format!(
            "correlation needs equal lengths, got {} and {}",
            g.len(),
            u.len()
        )));
    }
    let n = u.len();
    let rev: Vec<T> = u.iter().rev().copied().collect();
    // corr(g, u)[tau] = linear_conv(g, reverse(u))[n - 1 + tau]
    let lin = linear_conv(g, &rev)?;
    Ok(lin[n - 1..2 * n - 1].to_vec())
}
