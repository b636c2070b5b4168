//! Two-level chunked composition of sequence stacks.
//!
//! A sensor stream at `sensor_hz` is cut into one chunk per output tick:
//! chunk `i` covers sensor rows `[(i+1)*stride - k, (i+1)*stride)`, where
//! `stride = sensor_hz / output_hz`. Rows before the start of the stream
//! are zero. A low-level stack runs on each chunk from a fresh state and
//! its last output row becomes that tick's feature; a high-level stack
//! then runs over the feature sequence at the output rate.
//!
//! Output tick `i` therefore depends only on sensor rows strictly before
//! `(i+1)*stride`: windows never cross their tick boundary, and chunks
//! never share state.
//!
//! With `k = stride = 1` and an identity low level the composition
//! degenerates to running the high stack on the raw sequence, which is
//! exactly the flat baseline. [`flat_forward`] is that baseline for
//! arbitrary strides: run on the full sensor sequence, read out at the
//! tick rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Ctx, LayerStack, Param};
use crate::{Real, Tensor};

/// How a sensor stream maps onto output ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub sensor_hz: u32,
    pub output_hz: u32,
    /// rows per chunk
    pub k: usize,
    /// sensor rows per output tick
    pub stride: usize,
}

/// Derive the stride from the two rates. The sensor rate must be a
/// positive integer multiple of the output rate.
pub fn make_plan(sensor_hz: u32, output_hz: u32, k: usize) -> Result<ChunkPlan> {
    if sensor_hz == 0 || output_hz == 0 {
        return Err(Error::Rate(format!(
            "rates must be positive: sensor {sensor_hz} Hz, output {output_hz} Hz"
        )));
    }
    if sensor_hz % output_hz != 0 {
        return Err(Error::Rate(format!(
            "sensor rate {sensor_hz} Hz is not an integer multiple of output rate {output_hz} Hz"
        )));
    }
    if k == 0 {
        return Err(Error::Config("chunk length k must be positive".into()));
    }
    Ok(ChunkPlan {
        sensor_hz,
        output_hz,
        k,
        stride: (sensor_hz / output_hz) as usize,
    })
}

impl ChunkPlan {
    /// Number of chunks in a `t_len`-row stream. The stream must cover a
    /// whole number of ticks.
    pub fn num_chunks(&self, t_len: usize) -> Result<usize> {
        if t_len == 0 || t_len % self.stride != 0 {
            return Err(Error::Alignment(format!(
                "{t_len} sensor rows do not cover a whole number of ticks at stride {}",
                self.stride
            )));
        }
        Ok(t_len / self.stride)
    }

    /// Sensor row indices of chunk `i`, oldest first; -1 marks rows
    /// before the start of the stream (read as zeros).
    pub fn chunk_rows(&self, i: usize) -> Vec<i64> {
        let end = (i as i64 + 1) * self.stride as i64;
        (end - self.k as i64..end).map(|r| r.max(-1)).collect()
    }
}

/// Materialize all chunks of `u` as a `[num_chunks, k, d]` tensor.
pub fn chunk(u: &Tensor, plan: &ChunkPlan) -> Result<Tensor> {
    if u.rank() != 2 {
        return Err(Error::Shape(format!(
            "chunking expects a [T, d] sequence, got {:?}",
            u.shape()
        )));
    }
    let c = plan.num_chunks(u.shape()[0])?;
    let mut idx = Vec::with_capacity(c * plan.k);
    for i in 0..c {
        idx.extend(plan.chunk_rows(i));
    }
    u.gather_rows(&idx)?
        .reshape(&[c, plan.k, u.shape()[1]])
}

/// Low level of the hierarchy: either a trainable stack or the identity,
/// which passes chunk rows through untouched (so a tick's feature is the
/// raw sensor row that closes its window).
#[derive(Clone, Debug)]
pub enum LowLevel {
    Identity,
    Stack(LayerStack),
}

/// Chunked two-level model.
#[derive(Clone, Debug)]
pub struct HissModel {
    pub plan: ChunkPlan,
    pub low: LowLevel,
    pub high: LayerStack,
}

impl HissModel {
    fn check_dims(&self, d_in: usize) -> Result<()> {
        match &self.low {
            LowLevel::Identity => {
                if self.high.spec.d_in != d_in {
                    return Err(Error::Shape(format!(
                        "identity low level feeds {d_in} channels, high stack expects {}",
                        self.high.spec.d_in
                    )));
                }
            }
            LowLevel::Stack(s) => {
                if s.spec.d_in != d_in {
                    return Err(Error::Shape(format!(
                        "input has {d_in} channels, low stack expects {}",
                        s.spec.d_in
                    )));
                }
                if s.spec.d_out != self.high.spec.d_in {
                    return Err(Error::Shape(format!(
                        "low stack emits {} features, high stack expects {}",
                        s.spec.d_out, self.high.spec.d_in
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        if let LowLevel::Stack(s) = &self.low {
            for (n, p) in s.params() {
                out.push((format!("low.{n}"), p));
            }
        }
        for (n, p) in self.high.params() {
            out.push((format!("high.{n}"), p));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        if let LowLevel::Stack(s) = &mut self.low {
            for (n, p) in s.params_mut() {
                out.push((format!("low.{n}"), p));
            }
        }
        for (n, p) in self.high.params_mut() {
            out.push((format!("high.{n}"), p));
        }
        out
    }
}

/// Per-tick features: run the low level on every chunk from a fresh
/// state and keep the last output row of each. `[num_chunks, feature]`.
pub fn hiss_features(m: &HissModel, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
    if u.rank() != 2 {
        return Err(Error::Shape(format!(
            "expected a [T, d] sequence, got {:?}",
            u.shape()
        )));
    }
    m.check_dims(u.shape()[1])?;
    let c = m.plan.num_chunks(u.shape()[0])?;
    let low_ctx = ctx.scoped("low");
    let mut feats = Vec::with_capacity(c);
    for i in 0..c {
        let rows = m.plan.chunk_rows(i);
        let cu = u.gather_rows(&rows)?;
        let feat = match &m.low {
            LowLevel::Identity => cu.row(m.plan.k - 1)?,
            LowLevel::Stack(s) => s.forward(&low_ctx, &cu)?.row(m.plan.k - 1)?,
        };
        feats.push(feat);
    }
    Tensor::stack_rows(&feats)
}

/// Full two-level forward: `[num_chunks, d_out]` at the output rate.
pub fn hiss_forward(m: &HissModel, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
    let feats = hiss_features(m, ctx, u)?;
    m.high.forward(&ctx.scoped("high"), &feats)
}

/// Flat baseline: run one stack over the whole sensor sequence and read
/// out at the tick rows `(i+1)*stride - 1`.
pub fn flat_forward(stack: &LayerStack, ctx: &Ctx, u: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if u.rank() != 2 {
        return Err(Error::Shape(format!(
            "expected a [T, d] sequence, got {:?}",
            u.shape()
        )));
    }
    let t_len = u.shape()[0];
    if t_len == 0 || t_len % stride != 0 {
        return Err(Error::Alignment(format!(
            "{t_len} sensor rows do not cover a whole number of ticks at stride {stride}"
        )));
    }
    let y = stack.forward(ctx, u)?;
    if stride == 1 {
        return Ok(y);
    }
    let ticks: Vec<i64> = (0..t_len / stride)
        .map(|i| ((i + 1) * stride - 1) as i64)
        .collect();
    y.gather_rows(&ticks)
}

/// A trained model is one of the two shapes.
#[derive(Clone, Debug)]
pub enum Model {
    Flat { stack: LayerStack, stride: usize },
    Hiss(HissModel),
}

impl Model {
    pub fn forward(&self, ctx: &Ctx, u: &Tensor) -> Result<Tensor> {
        match self {
            Model::Flat { stack, stride } => flat_forward(stack, ctx, u, *stride),
            Model::Hiss(m) => hiss_forward(m, ctx, u),
        }
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        match self {
            Model::Flat { stack, .. } => stack.params(),
            Model::Hiss(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            Model::Flat { stack, .. } => stack.params_mut(),
            Model::Hiss(m) => m.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }
}

/// Computational regime being costed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    FlatSsm,
    FlatAttn,
    HissSsm,
    HissAttnOverSsm,
}

impl CostMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostMode::FlatSsm => "flat-ssm",
            CostMode::FlatAttn => "flat-attn",
            CostMode::HissSsm => "hiss-ssm",
            CostMode::HissAttnOverSsm => "hiss-attn-over-ssm",
        }
    }
}

/// Leading-order step count for processing a `t_len`-row stream.
///
/// Flat models touch every sensor row: linear for an SSM, quadratic for
/// attention. Hierarchical models pay `(t_len/stride) * k` for the chunked
/// low level, then the high level runs over `t_len/stride` ticks: linear
/// again for an SSM, quadratic in the tick count for attention.
pub fn cost_model(t_len: usize, k: usize, stride: usize, mode: CostMode) -> Result<Real> {
    if k == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "chunk geometry must be positive: k={k}, stride={stride}"
        )));
    }
    if t_len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let t = t_len as Real;
    let c = t / stride as Real;
    Ok(match mode {
        CostMode::FlatSsm => t,
        CostMode::FlatAttn => t * t,
        CostMode::HissSsm => c * k as Real + c,
        CostMode::HissAttnOverSsm => c * k as Real + c * c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{LayerKind, LayerStackSpec};
    use crate::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn small_stack(kind: LayerKind, d_in: usize, d_out: usize, seed: u64) -> LayerStack {
        let spec = LayerStackSpec {
            kind,
            depth: 1,
            width: 4,
            state_dim: 2,
            dropout: 0.0,
            d_in,
            d_out,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayerStack::new(&spec, &mut rng).unwrap()
    }

    #[test]
    fn plan_derives_stride_and_rejects_bad_rates() {
        let plan = make_plan(100, 10, 5).unwrap();
        assert_eq!(plan.stride, 10);
        assert!(matches!(make_plan(100, 30, 5), Err(Error::Rate(_))));
        assert!(matches!(make_plan(0, 10, 5), Err(Error::Rate(_))));
        assert!(matches!(make_plan(100, 0, 5), Err(Error::Rate(_))));
        assert!(matches!(make_plan(100, 10, 0), Err(Error::Config(_))));
        // equal rates are fine: stride 1
        assert_eq!(make_plan(50, 50, 1).unwrap().stride, 1);
    }

    #[test]
    fn chunks_cover_exactly_the_window_before_each_tick() {
        // addressable input: u[t, c] = 100*t + c
        let (t_len, d, stride) = (40usize, 2usize, 10usize);
        let data: Vec<Real> = (0..t_len * d)
            .map(|i| (100 * (i / d) + i % d) as Real)
            .collect();
        let u = Tensor::from_vec(data, &[t_len, d]).unwrap();
        for &k in &[5usize, 10, 15] {
            let plan = make_plan(100, 10, k).unwrap();
            assert_eq!(plan.stride, stride);
            let ch = chunk(&u, &plan).unwrap();
            assert_eq!(ch.shape(), &[4, k, d]);
            for i in 0..4 {
                for j in 0..k {
                    let row = ((i + 1) * stride) as i64 - k as i64 + j as i64;
                    for c in 0..d {
                        let got = ch.data()[(i * k + j) * d + c];
                        let want = if row < 0 {
                            0.0
                        } else {
                            (100 * row + c as i64) as Real
                        };
                        assert_eq!(got, want, "k={k} chunk={i} row={j} ch={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn chunking_rejects_partial_ticks() {
        let u = Tensor::zeros(&[41, 2]);
        let plan = make_plan(100, 10, 5).unwrap();
        assert!(matches!(chunk(&u, &plan), Err(Error::Alignment(_))));
        let plan1 = make_plan(100, 100, 1).unwrap();
        assert!(chunk(&Tensor::zeros(&[41, 2]), &plan1).is_ok());
    }

    #[test]
    fn degenerate_hierarchy_equals_flat() {
        // k = stride = 1 with an identity low level is the flat model
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let stack = small_stack(LayerKind::Dssm, 3, 2, 71);
        let m = HissModel {
            plan: make_plan(100, 100, 1).unwrap(),
            low: LowLevel::Identity,
            high: stack.clone(),
        };
        let u = Tensor::from_vec(randn(&mut rng, 12 * 3), &[12, 3]).unwrap();
        let yh = hiss_forward(&m, &Ctx::infer(), &u).unwrap();
        let yf = flat_forward(&stack, &Ctx::infer(), &u, 1).unwrap();
        assert_eq!(yh.data(), yf.data(), "degenerate case must match bitwise");
    }

    #[test]
    fn identity_low_features_are_window_closing_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let u = Tensor::from_vec(randn(&mut rng, 6 * 2), &[6, 2]).unwrap();
        let m = HissModel {
            plan: ChunkPlan {
                sensor_hz: 100,
                output_hz: 50,
                k: 3,
                stride: 2,
            },
            low: LowLevel::Identity,
            high: small_stack(LayerKind::Lstm, 2, 1, 73),
        };
        let feats = hiss_features(&m, &Ctx::infer(), &u).unwrap();
        assert_eq!(feats.shape(), &[3, 2]);
        for i in 0..3 {
            let tick = (i + 1) * 2 - 1;
            assert_eq!(&feats.data()[i * 2..(i + 1) * 2], &u.data()[tick * 2..(tick + 1) * 2]);
        }
    }

    #[test]
    fn chunks_before_a_perturbation_are_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let low = small_stack(LayerKind::Dssm, 2, 3, 75);
        let m = HissModel {
            plan: make_plan(100, 20, 5).unwrap(),
            low: LowLevel::Stack(low),
            high: small_stack(LayerKind::Selective, 3, 1, 76),
        };
        let base = randn(&mut rng, 20 * 2);
        let mut bumped = base.clone();
        bumped[7 * 2] += 4.0; // row 7 sits in chunk 1's window (rows 5..10)
        let u1 = Tensor::from_vec(base, &[20, 2]).unwrap();
        let u2 = Tensor::from_vec(bumped, &[20, 2]).unwrap();

        let f1 = hiss_features(&m, &Ctx::infer(), &u1).unwrap();
        let f2 = hiss_features(&m, &Ctx::infer(), &u2).unwrap();
        // chunk 0 precedes the edit; chunks 2 and 3 exclude row 7 because
        // windows never overlap here (k = stride): fresh state per chunk
        assert_eq!(&f1.data()[..3], &f2.data()[..3], "feature 0 moved");
        assert_ne!(&f1.data()[3..6], &f2.data()[3..6], "feature 1 should move");
        assert_eq!(&f1.data()[6..], &f2.data()[6..], "later features moved");

        let y1 = hiss_forward(&m, &Ctx::infer(), &u1).unwrap();
        let y2 = hiss_forward(&m, &Ctx::infer(), &u2).unwrap();
        assert_eq!(y1.data()[0], y2.data()[0], "tick before the edit moved");
        assert_ne!(y1.data()[1], y2.data()[1]);
    }

    #[test]
    fn flat_readout_rows_are_the_tick_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let stack = small_stack(LayerKind::Dssm, 2, 2, 78);
        let u = Tensor::from_vec(randn(&mut rng, 30 * 2), &[30, 2]).unwrap();
        let full = stack.forward(&Ctx::infer(), &u).unwrap();
        let ticked = flat_forward(&stack, &Ctx::infer(), &u, 10).unwrap();
        assert_eq!(ticked.shape(), &[3, 2]);
        for i in 0..3 {
            let tick = (i + 1) * 10 - 1;
            assert_eq!(
                &ticked.data()[i * 2..(i + 1) * 2],
                &full.data()[tick * 2..(tick + 1) * 2]
            );
        }
        assert!(matches!(
            flat_forward(&stack, &Ctx::infer(), &u, 7),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn model_gradients_cover_every_parameter() {
        let m = Model::Hiss(HissModel {
            plan: make_plan(100, 20, 5).unwrap(),
            low: LowLevel::Stack(small_stack(LayerKind::Dssm, 2, 3, 79)),
            high: small_stack(LayerKind::Dssm, 3, 1, 80),
        });
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let g = Graph::new();
        let ctx = Ctx::record(&g);
        let u = g.leaf("u", randn(&mut rng, 20 * 2), &[20, 2]).unwrap();
        let y = m.forward(&ctx, &u).unwrap();
        let grads = y.mul(&y).unwrap().sum_all().unwrap().backward().unwrap();
        let mut grad_names: Vec<&str> = grads.iter().map(|(n, _)| n).collect();
        grad_names.retain(|n| *n != "u");
        grad_names.sort_unstable();
        let mut param_names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        param_names.sort();
        assert_eq!(
            grad_names,
            param_names.iter().map(|s| s.as_str()).collect::<Vec<_>>()
        );
        assert_eq!(m.param_count(), m.params().iter().map(|(_, p)| p.numel()).sum::<usize>());
    }

    #[test]
    fn cost_model_matches_the_stated_regimes() {
        // non-overlapping chunks: linear with a small tick-rate tail
        assert_eq!(cost_model(1000, 10, 10, CostMode::HissSsm).unwrap(), 1100.0);
        // full overlap (stride 1): k work per input row
        assert_eq!(cost_model(1000, 10, 1, CostMode::HissSsm).unwrap(), 11000.0);
        assert_eq!(cost_model(1000, 10, 10, CostMode::FlatSsm).unwrap(), 1000.0);
        assert_eq!(cost_model(1000, 10, 10, CostMode::FlatAttn).unwrap(), 1_000_000.0);
        // attention over ticks pays quadratically only in the tick count
        assert_eq!(
            cost_model(1000, 10, 10, CostMode::HissAttnOverSsm).unwrap(),
            1000.0 + 100.0 * 100.0
        );
        assert!(cost_model(0, 10, 10, CostMode::FlatSsm).is_err());
        assert!(cost_model(100, 0, 10, CostMode::FlatSsm).is_err());
    }
}
