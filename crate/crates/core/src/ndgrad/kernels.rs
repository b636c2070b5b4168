//! Shape math and dense kernels shared by op forwards and backward rules.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Trailing-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = Vec::with_capacity(rank);
    for i in 0..rank {
        let ad = dim_or_one(a, i, rank);
        let bd = dim_or_one(b, i, rank);
        if ad == bd || ad == 1 || bd == 1 {
            out.push(ad.max(bd));
        } else {
            return Err(Error::Shape(format!(
                "cannot broadcast shapes {a:?} and {b:?}"
            )));
        }
    }
    Ok(out)
}

fn dim_or_one(s: &[usize], i: usize, rank: usize) -> usize {
    let off = rank - s.len();
    if i >= off {
        s[i - off]
    } else {
        1
    }
}

/// Row-major strides aligned to `out_rank`, zero on broadcast dimensions.
fn bcast_strides(shape: &[usize], out_rank: usize) -> Vec<usize> {
    let mut st = vec![0usize; out_rank];
    let off = out_rank - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        st[off + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    st
}

/// Elementwise map over two broadcast operands.
pub(crate) fn zip_map2<T: Scalar>(
    a: &[T],
    ash: &[usize],
    b: &[T],
    bsh: &[usize],
    osh: &[usize],
    mut f: impl FnMut(T, T) -> T,
) -> Vec<T> {
    if ash == osh && bsh == osh {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let n = numel(osh);
    let rank = osh.len();
    let sa = bcast_strides(ash, rank);
    let sb = bcast_strides(bsh, rank);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(a[ai], b[bi]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if idx[d] < osh[d] {
                break;
            }
            idx[d] = 0;
            ai -= sa[d] * osh[d];
            bi -= sb[d] * osh[d];
        }
    }
    out
}

/// Elementwise map combining an out-shaped gradient with two broadcast
/// operands; used by the backward rules of broadcasting binaries.
pub(crate) fn zip_map3<T: Scalar>(
    g: &[T],
    a: &[T],
    ash: &[usize],
    b: &[T],
    bsh: &[usize],
    osh: &[usize],
    mut f: impl FnMut(T, T, T) -> T,
) -> Vec<T> {
    if ash == osh && bsh == osh {
        return g
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&gv, (&x, &y))| f(gv, x, y))
            .collect();
    }
    let n = numel(osh);
    let rank = osh.len();
    let sa = bcast_strides(ash, rank);
    let sb = bcast_strides(bsh, rank);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for oi in 0..n {
        out.push(f(g[oi], a[ai], b[bi]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if idx[d] < osh[d] {
                break;
            }
            idx[d] = 0;
            ai -= sa[d] * osh[d];
            bi -= sb[d] * osh[d];
        }
    }
    out
}

/// Sums an out-shaped buffer down to a shape broadcastable to it.
pub(crate) fn reduce_to<T: Scalar>(src: &[T], osh: &[usize], dsh: &[usize]) -> Vec<T> {
    if dsh == osh {
        return src.to_vec();
    }
    let rank = osh.len();
    let sd = bcast_strides(dsh, rank);
    let mut out = vec![T::zero(); numel(dsh)];
    let mut idx = vec![0usize; rank];
    let mut di = 0usize;
    for &s in src {
        out[di] = out[di] + s;
        for d in (0..rank).rev() {
            idx[d] += 1;
            di += sd[d];
            if idx[d] < osh[d] {
                break;
            }
            idx[d] = 0;
            di -= sd[d] * osh[d];
        }
    }
    out
}

/// Replicates a reduced (keepdims) buffer back out to a full shape.
pub(crate) fn bcast_expand<T: Scalar>(src: &[T], ssh: &[usize], osh: &[usize]) -> Vec<T> {
    zip_map2(src, ssh, src, ssh, osh, |x, _| x)
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// C = A (m x k) . B (k x n)
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
    c
}

/// C = X (m x n) . Yᵀ  with Y stored k x n; result m x k.
pub(crate) fn matmul_nt<T: Scalar>(x: &[T], y: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    for i in 0..m {
        let xrow = &x[i * n..(i + 1) * n];
        for j in 0..k {
            let yrow = &y[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&xv, &yv) in xrow.iter().zip(yrow) {
                acc = acc + xv * yv;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// C = Xᵀ . Y with X stored m x k, Y stored m x n; result k x n.
pub(crate) fn matmul_tn<T: Scalar>(x: &[T], y: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for r in 0..m {
        let xrow = &x[r * k..(r + 1) * k];
        let yrow = &y[r * n..(r + 1) * n];
        for (j, &xv) in xrow.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let crow = &mut c[j * n..(j + 1) * n];
            for (cv, &yv) in crow.iter_mut().zip(yrow) {
                *cv = *cv + xv * yv;
            }
        }
    }
    c
}

pub(crate) fn transpose2<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

pub(crate) fn check_finite<T: Scalar>(xs: &[T], what: &str) -> Result<()> {
    for (i, x) in xs.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Numerical(format!(
                "{what} produced a non-finite value at flat index {i}"
            )));
        }
    }
    Ok(())
}
