//! Sensor preprocessing: resampling, resting-baseline subtraction,
//! difference augmentation, normalization, low-pass filtering, and the
//! IMU frame transform.
//!
//! Everything here is a pure function over plain matrices. All operations
//! are causal up to the documented exceptions: linear resampling reads one
//! sample ahead of a grid point, and the resting baseline is estimated
//! from the first `warmup` rows, so only outputs from the warmup boundary
//! onward are invariant to later edits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::Seq;
use crate::Real;

// ----------------------------------------------------------- resample --

/// Interpolate `values` (rows at `times`) onto an explicit grid.
/// Grid points must lie inside `[times[0], times[last]]`.
pub fn resample_onto(times: &[Real], values: &Seq, grid: &[Real]) -> Result<Seq> {
    if times.len() != values.rows {
        return Err(Error::Shape(format!(
            "{} timestamps for {} rows",
            times.len(),
            values.rows
        )));
    }
    if times.len() < 2 {
        return Err(Error::Length(format!(
            "resampling needs at least 2 samples, got {}",
            times.len()
        )));
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain(format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    let (t0, t1) = (times[0], *times.last().expect("nonempty"));
    let mut out = Seq::zeros(grid.len(), values.cols);
    for (gi, &t) in grid.iter().enumerate() {
        if t < t0 || t > t1 {
            return Err(Error::Extrapolation(format!(
                "grid point {t} s lies outside the data span [{t0}, {t1}]"
            )));
        }
        // rightmost segment start at or before t
        let seg = times.partition_point(|&x| x <= t).saturating_sub(1);
        let seg = seg.min(times.len() - 2);
        let (ta, tb) = (times[seg], times[seg + 1]);
        if t == ta {
            out.row_mut(gi).copy_from_slice(values.row(seg));
        } else if t == tb {
            out.row_mut(gi).copy_from_slice(values.row(seg + 1));
        } else {
            let alpha = (t - ta) / (tb - ta);
            for c in 0..values.cols {
                out.set(gi, c, (1.0 - alpha) * values.get(seg, c) + alpha * values.get(seg + 1, c));
            }
        }
    }
    Ok(out)
}

/// Resample onto the uniform grid `times[0] + i/target_hz`, keeping every
/// grid point that lies inside the data span. Linear interpolation: reads
/// the bracketing pair, so a grid point between samples uses one sample of
/// lookahead.
pub fn resample(times: &[Real], values: &Seq, target_hz: u32) -> Result<Seq> {
    if target_hz == 0 {
        return Err(Error::Rate("target rate must be positive".into()));
    }
    if times.len() < 2 {
        return Err(Error::Length(format!(
            "resampling needs at least 2 samples, got {}",
            times.len()
        )));
    }
    let t0 = times[0];
    let span = times.last().expect("nonempty") - t0;
    // small epsilon so an exact final grid point survives float division
    let n = (span * target_hz as Real + 1e-9).floor() as usize + 1;
    let grid: Vec<Real> = (0..n).map(|i| t0 + i as Real / target_hz as Real).collect();
    let mut grid = grid;
    if let Some(last) = grid.last_mut() {
        // clamp the last point onto the span if rounding pushed it past
        if *last > t0 + span {
            *last = t0 + span;
        }
    }
    resample_onto(times, values, &grid)
}

// ----------------------------------------------- baseline and diffs --

/// Subtract the per-channel mean of the first `warmup` rows.
pub fn subtract_resting(u: &Seq, warmup: usize) -> Result<Seq> {
    if warmup == 0 {
        return Err(Error::Config("warmup must cover at least one row".into()));
    }
    if u.rows < warmup {
        return Err(Error::Length(format!(
            "{} rows cannot provide a {warmup}-row resting estimate",
            u.rows
        )));
    }
    let mut baseline = vec![0.0; u.cols];
    for t in 0..warmup {
        for c in 0..u.cols {
            baseline[c] += u.get(t, c);
        }
    }
    for b in baseline.iter_mut() {
        *b /= warmup as Real;
    }
    let mut out = u.clone();
    for t in 0..u.rows {
        for c in 0..u.cols {
            out.set(t, c, u.get(t, c) - baseline[c]);
        }
    }
    Ok(out)
}

/// Append one-step differences as extra channels: row `t` becomes
/// `[u_t, u_t - u_{t-1}]`, with a zero difference at `t = 0`.
pub fn append_diffs(u: &Seq) -> Seq {
    let mut out = Seq::zeros(u.rows, 2 * u.cols);
    for t in 0..u.rows {
        for c in 0..u.cols {
            out.set(t, c, u.get(t, c));
            let d = if t == 0 {
                0.0
            } else {
                u.get(t, c) - u.get(t - 1, c)
            };
            out.set(t, u.cols + c, d);
        }
    }
    out
}

// ------------------------------------------------------ normalization --

/// Per-channel standardization statistics, fitted on the training split
/// and applied unchanged everywhere else. Channels that never vary are
/// flagged and passed through unscaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
    pub constant: Vec<bool>,
}

/// Pool all rows of the given series and compute per-channel mean and
/// population standard deviation.
pub fn fit_stats(series: &[&Seq]) -> Result<NormStats> {
    let cols = match series.first() {
        None => return Err(Error::Length("cannot fit statistics on no data".into())),
        Some(s) => s.cols,
    };
    let mut count = 0usize;
    let mut mean = vec![0.0; cols];
    for s in series {
        if s.cols != cols {
            return Err(Error::Shape(format!(
                "channel count varies across series: {} vs {cols}",
                s.cols
            )));
        }
        for t in 0..s.rows {
            for c in 0..cols {
                mean[c] += s.get(t, c);
            }
        }
        count += s.rows;
    }
    if count == 0 {
        return Err(Error::Length("cannot fit statistics on empty series".into()));
    }
    for m in mean.iter_mut() {
        *m /= count as Real;
    }
    let mut var = vec![0.0; cols];
    for s in series {
        for t in 0..s.rows {
            for c in 0..cols {
                let d = s.get(t, c) - mean[c];
                var[c] += d * d;
            }
        }
    }
    let mut std = vec![0.0; cols];
    let mut constant = vec![false; cols];
    for c in 0..cols {
        let v = var[c] / count as Real;
        if v <= 0.0 {
            constant[c] = true;
            std[c] = 1.0;
        } else {
            std[c] = v.sqrt();
        }
    }
    Ok(NormStats { mean, std, constant })
}

/// Standardize each channel with the fitted statistics.
pub fn normalize(u: &Seq, stats: &NormStats) -> Result<Seq> {
    if u.cols != stats.mean.len() {
        return Err(Error::Shape(format!(
            "series has {} channels, stats cover {}",
            u.cols,
            stats.mean.len()
        )));
    }
    let mut out = u.clone();
    for t in 0..u.rows {
        for c in 0..u.cols {
            out.set(t, c, (u.get(t, c) - stats.mean[c]) / stats.std[c]);
        }
    }
    Ok(out)
}

/// Invert [`normalize`].
pub fn denormalize(u: &Seq, stats: &NormStats) -> Result<Seq> {
    if u.cols != stats.mean.len() {
        return Err(Error::Shape(format!(
            "series has {} channels, stats cover {}",
            u.cols,
            stats.mean.len()
        )));
    }
    let mut out = u.clone();
    for t in 0..u.rows {
        for c in 0..u.cols {
            out.set(t, c, u.get(t, c) * stats.std[c] + stats.mean[c]);
        }
    }
    Ok(out)
}

// ----------------------------------------------------------- filtering --

/// Discrete low-pass filter as a rational transfer function
/// `H(z) = (b[0] + b[1] z^-1 + ...) / (1 + a[1] z^-1 + ...)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: Real,
    pub fs: Real,
    pub b: Vec<Real>,
    pub a: Vec<Real>,
}

/// Design a Butterworth low-pass by the bilinear transform.
///
/// The analog prototype has poles evenly spaced on the left half of the
/// circle of radius `wa = 2*fs*tan(pi*fc/fs)` (the prewarped cutoff, so
/// the discrete filter hits -3 dB exactly at `fc`). Each analog pole `p`
/// maps to the discrete pole `(2*fs + p) / (2*fs - p)`, which lies
/// strictly inside the unit circle whenever `Re(p) < 0`; the numerator is
/// `(1 + z^-1)^order`, scaled for unit DC gain.
pub fn design_butterworth(order: usize, cutoff_hz: Real, fs: Real) -> Result<FilterSpec> {
    if order == 0 {
        return Err(Error::Filter("filter order must be positive".into()));
    }
    if !(fs > 0.0) || !cutoff_hz.is_finite() {
        return Err(Error::Filter(format!(
            "bad rates: cutoff {cutoff_hz} Hz at fs {fs} Hz"
        )));
    }
    if cutoff_hz <= 0.0 || cutoff_hz >= fs / 2.0 {
        return Err(Error::Filter(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and the Nyquist rate {} Hz",
            fs / 2.0
        )));
    }
    let wa = 2.0 * fs * (std::f64::consts::PI * cutoff_hz / fs).tan();
    let two_fs = 2.0 * fs;

    // denominator: product of (1 - z_p z^-1) over all discrete poles,
    // assembled from real first/second-order factors
    let mut a = vec![1.0];
    let conv = |p: &[Real], q: &[Real]| -> Vec<Real> {
        let mut out = vec![0.0; p.len() + q.len() - 1];
        for (i, &x) in p.iter().enumerate() {
            for (j, &y) in q.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let n_pairs = order / 2;
    for k in 0..n_pairs {
        let theta = std::f64::consts::PI * (2 * k + order + 1) as Real / (2 * order) as Real;
        let (pr, pi) = (wa * theta.cos(), wa * theta.sin());
        // z = (2fs + p) / (2fs - p)
        let (nr, ni) = (two_fs + pr, pi);
        let (dr, di) = (two_fs - pr, -pi);
        let den = dr * dr + di * di;
        let zr = (nr * dr + ni * di) / den;
        let zi = (ni * dr - nr * di) / den;
        let zmag2 = zr * zr + zi * zi;
        if zmag2 >= 1.0 {
            return Err(Error::Filter(format!(
                "design produced a pole of magnitude {} outside the unit circle",
                zmag2.sqrt()
            )));
        }
        // conjugate pair: 1 - 2*Re(z) z^-1 + |z|^2 z^-2
        a = conv(&a, &[1.0, -2.0 * zr, zmag2]);
    }
    if order % 2 == 1 {
        // the real pole at angle pi: p = -wa
        let z = (two_fs - wa) / (two_fs + wa);
        if z.abs() >= 1.0 {
            return Err(Error::Filter(format!(
                "design produced a real pole of magnitude {} outside the unit circle",
                z.abs()
            )));
        }
        a = conv(&a, &[1.0, -z]);
    }

    // numerator: g * (1 + z^-1)^order with g = sum(a) / 2^order, so the
    // DC gain H(1) is one
    let mut b = vec![1.0];
    for _ in 0..order {
        b = conv(&b, &[1.0, 1.0]);
    }
    let g = a.iter().sum::<Real>() / (1u64 << order) as Real;
    for x in b.iter_mut() {
        *x *= g;
    }
    Ok(FilterSpec {
        order,
        cutoff_hz,
        fs,
        b,
        a,
    })
}

impl FilterSpec {
    /// Magnitude of `H(e^{j 2 pi f / fs})`.
    pub fn magnitude_at(&self, hz: Real) -> Real {
        let w = 2.0 * std::f64::consts::PI * hz / self.fs;
        let eval = |coef: &[Real]| -> (Real, Real) {
            let mut re = 0.0;
            let mut im = 0.0;
            for (k, &c) in coef.iter().enumerate() {
                re += c * (w * k as Real).cos();
                im -= c * (w * k as Real).sin();
            }
            (re, im)
        };
        let (nr, ni) = eval(&self.b);
        let (dr, di) = eval(&self.a);
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

/// Causal single-pass IIR filtering of every channel, direct form II
/// transposed, zero initial state.
pub fn butterworth_lowpass(u: &Seq, spec: &FilterSpec) -> Result<Seq> {
    if spec.a.is_empty() || spec.a[0] != 1.0 || spec.b.len() != spec.a.len() {
        return Err(Error::Filter(
            "coefficients must share a length and be normalized to a[0] = 1".into(),
        ));
    }
    let m = spec.a.len() - 1;
    let mut out = Seq::zeros(u.rows, u.cols);
    for c in 0..u.cols {
        let mut state = vec![0.0; m];
        for t in 0..u.rows {
            let x = u.get(t, c);
            let y = spec.b[0] * x + state.first().copied().unwrap_or(0.0);
            for i in 0..m {
                let next = if i + 1 < m { state[i + 1] } else { 0.0 };
                state[i] = spec.b[i + 1] * x - spec.a[i + 1] * y + next;
            }
            out.set(t, c, y);
        }
    }
    Ok(out)
}

// ------------------------------------------------------ frame transform --

/// Unit quaternion as `[w, x, y, z]`.
fn quat_check(q: &[Real]) -> Result<[Real; 4]> {
    if q.len() != 4 {
        return Err(Error::Calib(format!(
            "quaternion needs 4 components, got {}",
            q.len()
        )));
    }
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Calib(format!(
            "quaternion norm {norm} strays from 1 beyond 1e-6"
        )));
    }
    Ok([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm])
}

/// Rotate `v` by the unit quaternion `q`:
/// `v + 2w (u x v) + 2 u x (u x v)` with `u` the vector part.
fn quat_rotate(q: &[Real; 4], v: [Real; 3]) -> [Real; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let cross = |a: [Real; 3], b: [Real; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let u = [x, y, z];
    let uv = cross(u, v);
    let uuv = cross(u, uv);
    [
        v[0] + 2.0 * (w * uv[0] + uuv[0]),
        v[1] + 2.0 * (w * uv[1] + uuv[1]),
        v[2] + 2.0 * (w * uv[2] + uuv[2]),
    ]
}

/// Transform per-step accelerations from the sensor frame to the
/// reference frame: first the per-step sensor-to-inertial rotation, then
/// the fixed inertial-to-reference one.
pub fn imu_to_reference(
    a_imu: &Seq,
    q_imu_to_inertial: &Seq,
    q_inertial_to_reference: &[Real],
) -> Result<Seq> {
    if a_imu.cols != 3 {
        return Err(Error::Shape(format!(
            "acceleration rows must have 3 components, got {}",
            a_imu.cols
        )));
    }
    if q_imu_to_inertial.rows != a_imu.rows || q_imu_to_inertial.cols != 4 {
        return Err(Error::Shape(format!(
            "per-step quaternions must be {}x4, got {}x{}",
            a_imu.rows, q_imu_to_inertial.rows, q_imu_to_inertial.cols
        )));
    }
    let q_fixed = quat_check(q_inertial_to_reference)?;
    let mut out = Seq::zeros(a_imu.rows, 3);
    for t in 0..a_imu.rows {
        let q_t = quat_check(q_imu_to_inertial.row(t))?;
        let a = [a_imu.get(t, 0), a_imu.get(t, 1), a_imu.get(t, 2)];
        let inertial = quat_rotate(&q_t, a);
        let reference = quat_rotate(&q_fixed, inertial);
        out.row_mut(t).copy_from_slice(&reference);
    }
    Ok(out)
}
