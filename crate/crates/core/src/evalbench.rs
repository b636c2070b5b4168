//! Evaluation reports, runtime scaling benchmarks, and ablation sweeps.
//!
//! Evaluation reloads the split and preprocessing a checkpoint trained
//! with, so a reported validation MSE is exactly the number the training
//! loop logged at its best epoch.
//!
//! Benchmarks time single-threaded forward passes (worker parallelism
//! would only add contention noise), take medians over repeated runs
//! with a warmup discarded, and proxy peak memory by the number of
//! floats allocated, which is deterministic where RSS is not.
//!
//! Ablations are resumable: each finished cell is persisted to the
//! output CSV, completed cells are skipped on re-run, and re-running a
//! finished sweep changes nothing on disk.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, SplitTag, Trajectory};
use crate::error::{Error, Result};
use crate::hierarchy::{cost_model, make_plan, CostMode, HissModel, LowLevel, Model};
use crate::layers::{dssm_recurrent, Ctx, LayerKind, LayerStack, LayerStackSpec, SsmParams};
use crate::seq::Seq;
use crate::train::{self, Checkpoint, ModelSpec, TrainConfig};
use crate::{ndgrad, Real};

// ----------------------------------------------------------- metrics --

/// Mean and population standard deviation.
pub fn mean_std(values: &[Real]) -> Result<(Real, Real)> {
    if values.is_empty() {
        return Err(Error::Config("cannot aggregate zero values".into()));
    }
    let n = values.len() as Real;
    let mean = values.iter().sum::<Real>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    Ok((mean, var.sqrt()))
}

pub fn median(values: &[Real]) -> Real {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in medians"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn kind_name(k: LayerKind) -> &'static str {
    match k {
        LayerKind::Dssm => "dssm",
        LayerKind::Selective => "selective",
        LayerKind::Lstm => "lstm",
        LayerKind::Attention => "attention",
    }
}

/// One-line human description of a model spec.
pub fn describe_model(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::Flat(s) => {
            format!("flat {} depth {} width {}", kind_name(s.kind), s.depth, s.width)
        }
        ModelSpec::Hiss(h) => {
            let k = if h.k == 0 {
                "stride".to_string()
            } else {
                h.k.to_string()
            };
            format!(
                "hiss low {} d{} w{} / high {} d{} w{} / k={k}",
                kind_name(h.low.kind),
                h.low.depth,
                h.low.width,
                kind_name(h.high.kind),
                h.high.depth,
                h.high.width,
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMse {
    pub seed: u64,
    pub mse: Real,
}

/// Validation (or train) MSE of one model family, aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub model: String,
    pub split: String,
    pub mse_mean: Real,
    pub mse_std: Real,
    pub per_seed: Vec<SeedMse>,
}

/// MSE of a checkpoint over one side of its own split, with its own
/// preprocessing. For the validation side this reproduces, bit for bit,
/// the loss the training history records at the best epoch.
pub fn eval_split(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
    split: SplitTag,
) -> Result<Real> {
    if trajs.len() != manifest.entries.len() {
        return Err(Error::Manifest(format!(
            "{} trajectories for {} manifest entries",
            trajs.len(),
            manifest.entries.len()
        )));
    }
    let (train_idx, val_idx) = train::split_for(&ckpt.config, manifest)?;
    let idx = match split {
        SplitTag::Train => train_idx,
        SplitTag::Val => val_idx,
        SplitTag::Unassigned => {
            return Err(Error::Config("evaluation split must be train or val".into()))
        }
    };
    let model = train::model_from_checkpoint(ckpt, manifest)?;
    let processed: Vec<Seq> = idx
        .iter()
        .map(|&i| train::preprocess_like_checkpoint(ckpt, manifest, &trajs[i].sensor))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&Seq, &Seq)> = processed
        .iter()
        .zip(&idx)
        .map(|(s, &i)| (s, &trajs[i].label))
        .collect();
    train::mean_mse(&model, &pairs)
}

/// Evaluate one checkpoint per seed and aggregate. All checkpoints must
/// describe the same model family; the seeds come from their configs.
pub fn evaluate(
    ckpts: &[Checkpoint],
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
    split: SplitTag,
) -> Result<EvalReport> {
    if ckpts.is_empty() {
        return Err(Error::Config("no checkpoints to evaluate".into()));
    }
    let model = describe_model(&ckpts[0].config.model);
    for c in &ckpts[1..] {
        if describe_model(&c.config.model) != model {
            return Err(Error::Config(format!(
                "cannot aggregate different models: {model} vs {}",
                describe_model(&c.config.model)
            )));
        }
    }
    let mut per_seed = Vec::with_capacity(ckpts.len());
    for c in ckpts {
        per_seed.push(SeedMse {
            seed: c.config.seed,
            mse: eval_split(c, manifest, trajs, split)?,
        });
    }
    let values: Vec<Real> = per_seed.iter().map(|s| s.mse).collect();
    let (mse_mean, mse_std) = mean_std(&values)?;
    Ok(EvalReport {
        task: manifest.task.clone(),
        model,
        split: match split {
            SplitTag::Train => "train".into(),
            _ => "val".into(),
        },
        mse_mean,
        mse_std,
        per_seed,
    })
}

/// MSE of the best constant predictor: per-channel means are fitted on
/// the training labels, then scored on the evaluation labels with the
/// same per-trajectory averaging the model metric uses. The reference
/// point for "did the model learn anything".
pub fn constant_predictor_mse(train_labels: &[&Seq], eval_labels: &[&Seq]) -> Result<Real> {
    let (first, rest) = train_labels
        .split_first()
        .ok_or_else(|| Error::Config("no training labels to fit".into()))?;
    let d = first.cols;
    for s in rest {
        if s.cols != d {
            return Err(Error::Shape(format!(
                "label widths differ: {} vs {d}",
                s.cols
            )));
        }
    }
    let mut mean = vec![0.0; d];
    let mut rows = 0usize;
    for s in train_labels {
        for r in 0..s.rows {
            for (m, v) in mean.iter_mut().zip(s.row(r)) {
                *m += v;
            }
        }
        rows += s.rows;
    }
    if rows == 0 {
        return Err(Error::Config("training labels are empty".into()));
    }
    for m in mean.iter_mut() {
        *m /= rows as Real;
    }

    if eval_labels.is_empty() {
        return Err(Error::Config("no labels to evaluate against".into()));
    }
    let mut total = 0.0;
    for s in eval_labels {
        if s.cols != d {
            return Err(Error::Shape(format!(
                "label widths differ: {} vs {d}",
                s.cols
            )));
        }
        let mut sq = 0.0;
        for r in 0..s.rows {
            for (m, v) in mean.iter().zip(s.row(r)) {
                sq += (v - m) * (v - m);
            }
        }
        total += sq / (s.rows * d) as Real;
    }
    Ok(total / eval_labels.len() as Real)
}

// --------------------------------------------------------- benchmarks --

/// What to time. Flat kinds run one layer stack over the full-rate
/// stream; hiss kinds run the chunked two-level model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    S4,
    Mamba,
    Lstm,
    Attn,
    HissS4,
    HissAttn,
}

impl BenchKind {
    pub fn parse(s: &str) -> Result<BenchKind> {
        Ok(match s {
            "s4" => BenchKind::S4,
            "mamba" => BenchKind::Mamba,
            "lstm" => BenchKind::Lstm,
            "attn" => BenchKind::Attn,
            "hiss-s4" => BenchKind::HissS4,
            "hiss-attn" => BenchKind::HissAttn,
            _ => {
                return Err(Error::Config(format!(
                    "unknown benchmark model {s:?}; expected one of s4, mamba, lstm, attn, hiss-s4, hiss-attn"
                )))
            }
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BenchKind::S4 => "s4",
            BenchKind::Mamba => "mamba",
            BenchKind::Lstm => "lstm",
            BenchKind::Attn => "attn",
            BenchKind::HissS4 => "hiss-s4",
            BenchKind::HissAttn => "hiss-attn",
        }
    }

    /// Leading-order cost family this kind is expected to follow.
    pub fn cost_mode(self) -> CostMode {
        match self {
            BenchKind::S4 | BenchKind::Mamba | BenchKind::Lstm => CostMode::FlatSsm,
            BenchKind::Attn => CostMode::FlatAttn,
            BenchKind::HissS4 => CostMode::HissSsm,
            BenchKind::HissAttn => CostMode::HissAttnOverSsm,
        }
    }

    pub fn is_hiss(self) -> bool {
        matches!(self, BenchKind::HissS4 | BenchKind::HissAttn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub width: usize,
    pub state_dim: usize,
    /// chunk size for hiss kinds
    pub k: usize,
    /// sensor rows per output tick for hiss kinds
    pub stride: usize,
    /// repetitions per length (at least 5; grows if timings are noisy)
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            width: 8,
            state_dim: 8,
            k: 10,
            stride: 10,
            reps: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub len: usize,
    pub median_s: Real,
    /// interquartile range over the median, a unitless noise measure
    pub spread: Real,
    pub reps: usize,
    /// floats allocated by one forward pass
    pub floats: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub model: String,
    pub points: Vec<ScalingPoint>,
    /// fitted log-log slope of median time vs length
    pub slope: Real,
    /// 95% half-width on the slope
    pub slope_ci: Real,
    /// slope of the analytic step-count model over the same lengths
    pub cost_slope: Real,
}

enum Runner {
    /// stepwise diagonal-SSM recurrence, the streaming O(N) path
    Recurrent(SsmParams),
    Stack(LayerStack),
    Hiss(Model),
}

impl Runner {
    fn run(&self, u: &Seq) -> Result<()> {
        match self {
            Runner::Recurrent(p) => {
                dssm_recurrent(p, u)?;
            }
            Runner::Stack(s) => {
                s.forward(&Ctx::infer(), &u.to_tensor())?;
            }
            Runner::Hiss(m) => {
                m.forward(&Ctx::infer(), &u.to_tensor())?;
            }
        }
        Ok(())
    }
}

fn bench_runner(kind: BenchKind, s: &BenchSettings) -> Result<Runner> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let stack = |kind: LayerKind, rng: &mut ChaCha8Rng| {
        LayerStack::new(
            &LayerStackSpec {
                kind,
                depth: 1,
                width: s.width,
                state_dim: s.state_dim,
                dropout: 0.0,
                d_in: s.width,
                d_out: s.width,
            },
            rng,
        )
    };
    Ok(match kind {
        BenchKind::S4 => Runner::Recurrent(SsmParams::init(s.width, s.state_dim, &mut rng)),
        BenchKind::Mamba => Runner::Stack(stack(LayerKind::Selective, &mut rng)?),
        BenchKind::Lstm => Runner::Stack(stack(LayerKind::Lstm, &mut rng)?),
        BenchKind::Attn => Runner::Stack(stack(LayerKind::Attention, &mut rng)?),
        BenchKind::HissS4 | BenchKind::HissAttn => {
            if s.stride == 0 || s.stride > u32::MAX as usize {
                return Err(Error::Config(format!("bad stride {}", s.stride)));
            }
            let plan = make_plan(s.stride as u32, 1, s.k)?;
            let low = stack(LayerKind::Dssm, &mut rng)?;
            let high_kind = if kind == BenchKind::HissS4 {
                LayerKind::Dssm
            } else {
                LayerKind::Attention
            };
            let high = stack(high_kind, &mut rng)?;
            Runner::Hiss(Model::Hiss(HissModel {
                plan,
                low: LowLevel::Stack(low),
                high,
            }))
        }
    })
}

fn bench_input(len: usize, width: usize, seed: u64) -> Seq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(len as u64);
    let data: Vec<Real> = (0..len * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Seq::from_vec(len, width, data).expect("consistent dims")
}

/// Median forward-pass time at each length, with a fitted log-log slope
/// and the analytic cost model's slope over the same lengths for
/// comparison. Noisy lengths (spread > 0.5) are retried with doubled
/// repetitions, twice at most.
pub fn scaling_bench(
    kind: BenchKind,
    lengths: &[usize],
    settings: &BenchSettings,
) -> Result<ScalingReport> {
    if lengths.len() < 4 {
        return Err(Error::Config(format!(
            "need at least 4 lengths for a slope, got {}",
            lengths.len()
        )));
    }
    if !lengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("lengths must be strictly increasing".into()));
    }
    if (lengths[lengths.len() - 1] as Real) < 8.0 * lengths[0] as Real {
        return Err(Error::Config(format!(
            "lengths must span at least 8x, got {}..{}",
            lengths[0],
            lengths[lengths.len() - 1]
        )));
    }
    if kind.is_hiss() {
        for &l in lengths {
            if l % settings.stride != 0 {
                return Err(Error::Config(format!(
                    "length {l} is not a multiple of the stride {}",
                    settings.stride
                )));
            }
        }
    }

    let runner = bench_runner(kind, settings)?;
    let base_reps = settings.reps.max(5);
    let mut points = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let u = bench_input(len, settings.width, settings.seed);

        // warmup, doubling as the allocation measurement
        ndgrad::alloc_floats_reset();
        runner.run(&u)?;
        let floats = ndgrad::alloc_floats();

        let mut reps = base_reps;
        let (median_s, spread, reps) = loop {
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                let t0 = Instant::now();
                runner.run(&u)?;
                times.push(t0.elapsed().as_secs_f64());
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
            let med = median(&times);
            let iqr = times[(times.len() * 3) / 4] - times[times.len() / 4];
            let spread = if med > 0.0 { iqr / med } else { 0.0 };
            if spread <= 0.5 || reps >= base_reps * 4 {
                break (med, spread, reps);
            }
            reps *= 2;
        };
        points.push(ScalingPoint {
            len,
            median_s,
            spread,
            reps,
            floats,
        });
    }

    let xs: Vec<Real> = points.iter().map(|p| p.len as Real).collect();
    let ys: Vec<Real> = points.iter().map(|p| p.median_s).collect();
    let (slope, slope_ci) = loglog_fit(&xs, &ys)?;
    let costs: Vec<Real> = lengths
        .iter()
        .map(|&l| cost_model(l, settings.k, settings.stride, kind.cost_mode()))
        .collect::<Result<_>>()?;
    let (cost_slope, _) = loglog_fit(&xs, &costs)?;

    Ok(ScalingReport {
        model: kind.as_str().to_string(),
        points,
        slope,
        slope_ci,
        cost_slope,
    })
}

/// Two-sided 95% t quantile for small residual degrees of freedom.
fn t95(df: usize) -> Real {
    const TABLE: [Real; 10] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    ];
    match df {
        0 => Real::INFINITY,
        1..=10 => TABLE[df - 1],
        11..=20 => 2.1,
        _ => 2.0,
    }
}

/// Least-squares slope of ln y on ln x, with a 95% confidence half-width
/// from the residual variance.
pub fn loglog_fit(xs: &[Real], ys: &[Real]) -> Result<(Real, Real)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Config(format!(
            "log-log fit needs at least 3 matched points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let lx: Vec<Real> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<Real> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as Real;
    let mx = lx.iter().sum::<Real>() / n;
    let my = ly.iter().sum::<Real>() / n;
    let sxx = lx.iter().map(|x| (x - mx) * (x - mx)).sum::<Real>();
    if sxx == 0.0 {
        return Err(Error::Domain("all x values coincide".into()));
    }
    let sxy = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<Real>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: Real = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let df = lx.len() - 2;
    let ci = if df == 0 {
        Real::INFINITY
    } else {
        t95(df) * (ss_res / df as Real / sxx).sqrt()
    };
    Ok((slope, ci))
}

/// Coefficients of `t = linear * n + quadratic * n^2`, least squares
/// through the origin. Used to compare the quadratic term of flat
/// attention against attention over chunk features.
pub fn fit_linear_quadratic(lens: &[usize], times: &[Real]) -> Result<(Real, Real)> {
    if lens.len() != times.len() || lens.len() < 3 {
        return Err(Error::Config(format!(
            "quadratic fit needs at least 3 matched points, got {} and {}",
            lens.len(),
            times.len()
        )));
    }
    if times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("quadratic fit needs positive times".into()));
    }
    // condition the normal equations by scaling n to [0, 1]
    let nmax = *lens.iter().max().expect("nonempty") as Real;
    if nmax == 0.0 {
        return Err(Error::Domain("lengths must be positive".into()));
    }
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&l, &t) in lens.iter().zip(times) {
        let x = l as Real / nmax;
        let x2 = x * x;
        s11 += x2;
        s12 += x * x2;
        s22 += x2 * x2;
        b1 += x * t;
        b2 += x2 * t;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-12 * s11 * s22 {
        return Err(Error::Numerical("quadratic fit is degenerate".into()));
    }
    let a = (b1 * s22 - b2 * s12) / det;
    let b = (s11 * b2 - s12 * b1) / det;
    Ok((a / nmax, b / (nmax * nmax)))
}

// ---------------------------------------------------------- ablations --

/// One trained cell of an ablation sweep. `setting` is the comma-joined
/// value of the sweep columns (one value for chunk/fraction sweeps, two
/// for the filter sweep).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub setting: String,
    pub seed: u64,
    pub val_mse: Real,
}

pub struct AblationOutcome {
    pub cells: Vec<Cell>,
    /// cells trained by this call (the rest were resumed from disk)
    pub ran: usize,
    pub csv_path: PathBuf,
}

fn read_cells(path: &Path, header: &str) -> Result<Vec<Cell>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::Io(format!("cannot read {}: {e}", path.display()))),
    };
    let fname = path.display();
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != header {
                return Err(Error::Parse(format!(
                    "{fname} line 1: header {line:?} does not match {header:?}"
                )));
            }
            continue;
        }
        let want = header.split(',').count();
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want {
            return Err(Error::Parse(format!(
                "{fname} line {}: {} fields, expected {want}",
                i + 1,
                fields.len()
            )));
        }
        let seed: u64 = fields[want - 2]
            .parse()
            .map_err(|e| Error::Parse(format!("{fname} line {}: seed: {e}", i + 1)))?;
        let val_mse: Real = fields[want - 1]
            .parse()
            .map_err(|e| Error::Parse(format!("{fname} line {}: val_mse: {e}", i + 1)))?;
        cells.push(Cell {
            setting: fields[..want - 2].join(","),
            seed,
            val_mse,
        });
    }
    Ok(cells)
}

fn write_cells(path: &Path, header: &str, cells: &[Cell]) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for c in cells {
        text.push_str(&format!("{},{},{}\n", c.setting, c.seed, c.val_mse));
    }
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, text)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::Io(format!("cannot move {} into place: {e}", path.display())))?;
    Ok(())
}

#[derive(Serialize)]
struct AblationSummary<'a> {
    kind: &'a str,
    columns: &'a str,
    cells: &'a [Cell],
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<&'a [FilterBest]>,
}

fn write_summary(
    dir: &Path,
    kind: &str,
    header: &str,
    cells: &[Cell],
    best: Option<&[FilterBest]>,
) -> Result<()> {
    let summary = AblationSummary {
        kind,
        columns: header,
        cells,
        best,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Io(format!("cannot serialize summary: {e}")))?;
    let path = dir.join(format!("{kind}_ablation.json"));
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, &path)
        .map_err(|e| Error::Io(format!("cannot move {} into place: {e}", path.display())))?;
    Ok(())
}

/// Shared sweep driver: enumerate (setting, seed) cells in a fixed
/// order, resume finished ones from the CSV, train the rest, persist
/// after every cell.
fn run_sweep(
    kind: &str,
    header: &str,
    out_dir: &Path,
    cells_wanted: Vec<(String, u64, TrainConfig)>,
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
) -> Result<AblationOutcome> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join(format!("{kind}_ablation.csv"));
    let existing = read_cells(&csv_path, header)?;
    let done: BTreeSet<(String, u64)> = existing
        .iter()
        .map(|c| (c.setting.clone(), c.seed))
        .collect();
    for c in &existing {
        if !cells_wanted
            .iter()
            .any(|(s, seed, _)| *s == c.setting && *seed == c.seed)
        {
            return Err(Error::Config(format!(
                "{} holds a cell ({}, seed {}) outside this sweep; refusing to mix results",
                csv_path.display(),
                c.setting,
                c.seed
            )));
        }
    }

    // fill resumed results first so every intermediate write holds all
    // completed cells, whatever order they finished in
    let mut slots: Vec<(String, u64, TrainConfig, Option<Cell>)> = cells_wanted
        .into_iter()
        .map(|(setting, seed, cfg)| {
            let resumed = done
                .contains(&(setting.clone(), seed))
                .then(|| {
                    existing
                        .iter()
                        .find(|c| c.setting == setting && c.seed == seed)
                        .expect("present in done set")
                        .clone()
                });
            (setting, seed, cfg, resumed)
        })
        .collect();

    let mut ran = 0;
    for i in 0..slots.len() {
        if slots[i].3.is_some() {
            continue;
        }
        let fit = train::fit_dataset(&slots[i].2, manifest, trajs, None)?;
        slots[i].3 = Some(Cell {
            setting: slots[i].0.clone(),
            seed: slots[i].1,
            val_mse: fit.checkpoint.best_val_mse(),
        });
        ran += 1;
        let so_far: Vec<Cell> = slots.iter().filter_map(|s| s.3.clone()).collect();
        write_cells(&csv_path, header, &so_far)?;
    }

    let cells: Vec<Cell> = slots
        .into_iter()
        .map(|s| s.3.expect("every cell resumed or trained"))
        .collect();
    Ok(AblationOutcome {
        cells,
        ran,
        csv_path,
    })
}

/// Chunk-size sweep at fixed stride. The base config must be a hiss
/// model; `ks` must include the dataset stride (the partition setting),
/// and k = 1 is the pure-downsampling baseline.
pub fn ablate_chunk(
    cfg: &TrainConfig,
    ks: &[usize],
    seeds: &[u64],
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
    out_dir: &Path,
) -> Result<AblationOutcome> {
    let ModelSpec::Hiss(base) = &cfg.model else {
        return Err(Error::Config(
            "the chunk sweep varies k, which only a hiss model has".into(),
        ));
    };
    let stride = manifest.stride();
    if ks.is_empty() || seeds.is_empty() {
        return Err(Error::Config("chunk sweep needs at least one k and one seed".into()));
    }
    if !ks.contains(&stride) {
        return Err(Error::Config(format!(
            "chunk sweep must include the stride {stride} (got {ks:?})"
        )));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::Config("chunk size 0 is meaningless".into()));
    }
    let mut wanted = Vec::new();
    for &k in ks {
        for &seed in seeds {
            let mut c = cfg.clone();
            let mut h = base.clone();
            h.k = k;
            c.model = ModelSpec::Hiss(h);
            c.seed = seed;
            wanted.push((k.to_string(), seed, c));
        }
    }
    let outcome = run_sweep("chunk", "k,seed,val_mse", out_dir, wanted, manifest, trajs)?;
    if outcome.ran > 0 {
        write_summary(out_dir, "chunk", "k,seed,val_mse", &outcome.cells, None)?;
    }
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBest {
    pub order: usize,
    pub cutoff_hz: Real,
    pub median_val_mse: Real,
}

/// Low-pass sweep over filter orders and cutoff frequencies. Returns the
/// cells plus, per order, the cutoff with the lowest median validation
/// MSE over seeds (the selection rule for which model to report).
pub fn ablate_filter(
    cfg: &TrainConfig,
    orders: &[usize],
    cutoffs_hz: &[Real],
    seeds: &[u64],
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
    out_dir: &Path,
) -> Result<(AblationOutcome, Vec<FilterBest>)> {
    if orders.is_empty() || cutoffs_hz.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "filter sweep needs at least one order, one cutoff, and one seed".into(),
        ));
    }
    let nyquist = manifest.sensor_hz as Real / 2.0;
    for &f in cutoffs_hz {
        if !(f > 0.0 && f < nyquist) {
            return Err(Error::Config(format!(
                "cutoff {f} Hz must lie in (0, {nyquist}) for a {} Hz stream",
                manifest.sensor_hz
            )));
        }
    }
    if orders.iter().any(|&o| o == 0) {
        return Err(Error::Config("filter order 0 is meaningless".into()));
    }
    let header = "order,cutoff_hz,seed,val_mse";
    let mut wanted = Vec::new();
    for &order in orders {
        for &f in cutoffs_hz {
            for &seed in seeds {
                let mut c = cfg.clone();
                c.filter = Some(train::FilterChoice {
                    order,
                    cutoff_hz: f,
                });
                c.seed = seed;
                wanted.push((format!("{order},{f}"), seed, c));
            }
        }
    }
    let outcome = run_sweep("filter", header, out_dir, wanted, manifest, trajs)?;

    let mut best = Vec::new();
    for &order in orders {
        let mut rows: Vec<(Real, Real)> = Vec::new();
        for &f in cutoffs_hz {
            let setting = format!("{order},{f}");
            let vals: Vec<Real> = outcome
                .cells
                .iter()
                .filter(|c| c.setting == setting)
                .map(|c| c.val_mse)
                .collect();
            rows.push((f, median(&vals)));
        }
        let (cutoff_hz, median_val_mse) = rows
            .into_iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite medians"))
            .expect("at least one cutoff");
        best.push(FilterBest {
            order,
            cutoff_hz,
            median_val_mse,
        });
    }
    if outcome.ran > 0 {
        write_summary(out_dir, "filter", header, &outcome.cells, Some(&best))?;
    }
    Ok((outcome, best))
}

/// Training-set-size sweep. `fractions` are of the train split, in
/// (0, 1]; the 1.0 cell is exactly the un-ablated run at that seed.
pub fn ablate_fraction(
    cfg: &TrainConfig,
    fractions: &[Real],
    seeds: &[u64],
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
    out_dir: &Path,
) -> Result<AblationOutcome> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "fraction sweep needs at least one fraction and one seed".into(),
        ));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("fraction {f} must lie in (0, 1]")));
        }
    }
    let mut wanted = Vec::new();
    for &f in fractions {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.fraction = f;
            c.seed = seed;
            wanted.push((f.to_string(), seed, c));
        }
    }
    let outcome = run_sweep(
        "fraction",
        "fraction,seed,val_mse",
        out_dir,
        wanted,
        manifest,
        trajs,
    )?;
    if outcome.ran > 0 {
        write_summary(
            out_dir,
            "fraction",
            "fraction,seed,val_mse",
            &outcome.cells,
            None,
        )?;
    }
    Ok(outcome)
}

// -------------------------------------------------------------- plots --

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(Real, Real)>,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: Real) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Self-contained SVG line chart. Log axes plot log10 of the values, so
/// every point on a log axis must be positive.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
    log_y: bool,
) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Config("chart needs at least one point per series".into()));
    }
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Domain(format!(
                    "series {:?} has a non-finite point ({x}, {y})",
                    s.name
                )));
            }
            if (log_x && x <= 0.0) || (log_y && y <= 0.0) {
                return Err(Error::Domain(format!(
                    "series {:?}: log axes need positive values, got ({x}, {y})",
                    s.name
                )));
            }
        }
    }

    let tx = |v: Real| if log_x { v.log10() } else { v };
    let ty = |v: Real| if log_y { v.log10() } else { v };
    let mut x_min = Real::INFINITY;
    let mut x_max = Real::NEG_INFINITY;
    let mut y_min = Real::INFINITY;
    let mut y_max = Real::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(tx(x));
            x_max = x_max.max(tx(x));
            y_min = y_min.min(ty(y));
            y_max = y_max.max(ty(y));
        }
    }
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_min == y_max {
        y_min -= 0.5;
        y_max += 0.5;
    }

    const W: Real = 720.0;
    const H: Real = 460.0;
    const L: Real = 78.0;
    const R: Real = 700.0;
    const T: Real = 46.0;
    const B: Real = 400.0;
    let px = |v: Real| L + (v - x_min) / (x_max - x_min) * (R - L);
    let py = |v: Real| B - (v - y_min) / (y_max - y_min) * (B - T);

    const PALETTE: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        (L + R) / 2.0,
        xml_escape(title)
    ));

    // grid and ticks, five per axis
    for i in 0..=4 {
        let f = i as Real / 4.0;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let xp = px(xv);
        let yp = py(yv);
        svg.push_str(&format!(
            "<line x1=\"{xp:.1}\" y1=\"{T}\" x2=\"{xp:.1}\" y2=\"{B}\" stroke=\"#ddd\"/>\n"
        ));
        svg.push_str(&format!(
            "<line x1=\"{L}\" y1=\"{yp:.1}\" x2=\"{R}\" y2=\"{yp:.1}\" stroke=\"#ddd\"/>\n"
        ));
        let xt = if log_x { (10.0 as Real).powf(xv) } else { xv };
        let yt = if log_y { (10.0 as Real).powf(yv) } else { yv };
        svg.push_str(&format!(
            "<text x=\"{xp:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            B + 20.0,
            fmt_tick(xt)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            L - 8.0,
            yp + 4.0,
            fmt_tick(yt)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{L}\" y1=\"{B}\" x2=\"{R}\" y2=\"{B}\" stroke=\"black\"/>\n\
         <line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{B}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (L + R) / 2.0,
        B + 46.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
        (T + B) / 2.0,
        (T + B) / 2.0,
        xml_escape(y_label)
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(tx(x)), py(ty(y))))
            .collect();
        if pts.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                pts.join(" ")
            ));
        }
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted above");
            svg.push_str(&format!(
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"2.6\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = T + 16.0 * si as Real;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            R - 150.0,
            R - 126.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\">{}</text>\n",
            R - 120.0,
            ly + 4.0,
            xml_escape(&s.name)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, TaskKind, TaskSpec};
    use crate::train::{fit_dataset, StackCfg};

    fn tiny_dataset(count: usize, seed: u64) -> (DatasetManifest, Vec<Trajectory>) {
        let mut spec = TaskSpec::new(TaskKind::DriftIntegrator, count, seed);
        spec.duration_s = (2.0, 2.0);
        let trajs = data::generate(&spec).unwrap();
        let manifest = data::manifest_for(&spec, &trajs).unwrap();
        (manifest, trajs)
    }

    fn tiny_config(model: ModelSpec) -> TrainConfig {
        TrainConfig {
            dataset: "unused".into(),
            model,
            epochs: 1,
            lr: 1e-3,
            batch_size: 2,
            seed: 0,
            clip_norm: 1.0,
            diffs: false,
            filter: None,
            fraction: 1.0,
            train_fraction: 0.8,
        }
    }

    fn flat_spec() -> ModelSpec {
        ModelSpec::Flat(StackCfg {
            kind: LayerKind::Dssm,
            depth: 1,
            width: 8,
            state_dim: 4,
            dropout: 0.0,
        })
    }

    fn hiss_spec() -> ModelSpec {
        let s = StackCfg {
            kind: LayerKind::Dssm,
            depth: 1,
            width: 6,
            state_dim: 4,
            dropout: 0.0,
        };
        ModelSpec::Hiss(crate::train::HissSpec {
            low: s.clone(),
            high: s,
            k: 0,
        })
    }

    #[test]
    fn aggregation_matches_hand_arithmetic() {
        let (mean, std) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mean, 2.0);
        assert!((std - (2.0_f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).is_err());

        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn constant_predictor_equals_label_variance() {
        // fit and evaluate on the same single sequence: the best constant
        // is the mean, so the MSE is the pooled population variance
        let s = Seq::from_vec(4, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let got = constant_predictor_mse(&[&s], &[&s]).unwrap();
        let mut want = 0.0;
        for c in 0..2 {
            let col = s.col(c);
            let m = col.iter().sum::<Real>() / 4.0;
            want += col.iter().map(|v| (v - m) * (v - m)).sum::<Real>() / 4.0;
        }
        want /= 2.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        let other = Seq::zeros(3, 5);
        assert!(constant_predictor_mse(&[&s], &[&other]).is_err());
        assert!(constant_predictor_mse(&[], &[&s]).is_err());
    }

    #[test]
    fn eval_reproduces_the_training_history() {
        let (manifest, trajs) = tiny_dataset(6, 17);
        let mut cfg = tiny_config(flat_spec());
        cfg.epochs = 3;
        let fit = fit_dataset(&cfg, &manifest, &trajs, None).unwrap();
        let val = eval_split(&fit.checkpoint, &manifest, &trajs, SplitTag::Val).unwrap();
        assert_eq!(val.to_bits(), fit.checkpoint.best_val_mse().to_bits());

        let train_mse = eval_split(&fit.checkpoint, &manifest, &trajs, SplitTag::Train).unwrap();
        assert!(train_mse.is_finite());
        assert!(eval_split(&fit.checkpoint, &manifest, &trajs, SplitTag::Unassigned).is_err());
    }

    #[test]
    fn report_aggregates_per_seed_checkpoints() {
        let (manifest, trajs) = tiny_dataset(6, 23);
        let mut ckpts = Vec::new();
        for seed in [0, 1] {
            let mut cfg = tiny_config(flat_spec());
            cfg.seed = seed;
            ckpts.push(fit_dataset(&cfg, &manifest, &trajs, None).unwrap().checkpoint);
        }
        let report = evaluate(&ckpts, &manifest, &trajs, SplitTag::Val).unwrap();
        assert_eq!(report.task, "drift-integrator");
        assert_eq!(report.model, "flat dssm depth 1 width 8");
        assert_eq!(report.split, "val");
        assert_eq!(report.per_seed.len(), 2);
        assert_eq!(report.per_seed[0].seed, 0);
        assert_eq!(report.per_seed[1].seed, 1);
        let values: Vec<Real> = report.per_seed.iter().map(|s| s.mse).collect();
        let (mean, std) = mean_std(&values).unwrap();
        assert_eq!(report.mse_mean.to_bits(), mean.to_bits());
        assert_eq!(report.mse_std.to_bits(), std.to_bits());

        let mut other = ckpts[0].clone();
        other.config.model = hiss_spec();
        assert!(evaluate(&[ckpts[0].clone(), other], &manifest, &trajs, SplitTag::Val).is_err());
    }

    #[test]
    fn bench_rejects_bad_length_grids() {
        let s = BenchSettings::default();
        let few = scaling_bench(BenchKind::S4, &[100, 200, 400], &s);
        assert!(matches!(few, Err(Error::Config(_))));
        let unordered = scaling_bench(BenchKind::S4, &[100, 400, 200, 800], &s);
        assert!(matches!(unordered, Err(Error::Config(_))));
        let narrow = scaling_bench(BenchKind::S4, &[100, 200, 300, 400], &s);
        assert!(matches!(narrow, Err(Error::Config(_))));
        let misaligned = scaling_bench(BenchKind::HissS4, &[100, 200, 400, 805], &s);
        assert!(matches!(misaligned, Err(Error::Config(_))));
    }

    #[test]
    fn bench_measures_every_length() {
        let settings = BenchSettings {
            width: 4,
            state_dim: 4,
            ..BenchSettings::default()
        };
        let lengths = [64, 128, 256, 512];
        let report = scaling_bench(BenchKind::S4, &lengths, &settings).unwrap();
        assert_eq!(report.model, "s4");
        assert_eq!(report.points.len(), 4);
        for (p, &l) in report.points.iter().zip(&lengths) {
            assert_eq!(p.len, l);
            assert!(p.median_s > 0.0);
            assert!(p.reps >= 5);
            assert!(p.floats > 0, "the forward allocates output buffers");
        }
        // the analytic cost of a flat SSM is exactly linear
        assert!((report.cost_slope - 1.0).abs() < 1e-9);
        assert!(report.slope.is_finite() && report.slope_ci.is_finite());

        assert_eq!(BenchKind::parse("hiss-attn").unwrap(), BenchKind::HissAttn);
        assert!(BenchKind::parse("transformer").is_err());
    }

    #[test]
    fn loglog_fit_recovers_exact_power_laws() {
        let xs: Vec<Real> = vec![64.0, 128.0, 256.0, 512.0, 1024.0];
        let ys: Vec<Real> = xs.iter().map(|x| 2e-9 * x * x).collect();
        let (slope, ci) = loglog_fit(&xs, &ys).unwrap();
        assert!((slope - 2.0).abs() < 1e-9, "{slope}");
        assert!(ci < 1e-6, "{ci}");

        let costs: Vec<Real> = xs
            .iter()
            .map(|&x| cost_model(x as usize, 10, 10, CostMode::HissSsm).unwrap())
            .collect();
        let (slope, _) = loglog_fit(&xs, &costs).unwrap();
        assert!((slope - 1.0).abs() < 0.05, "hiss-ssm cost is linear, got {slope}");

        assert!(loglog_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(loglog_fit(&[1.0, 2.0, 0.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn quadratic_fit_recovers_coefficients() {
        let lens = [512usize, 1024, 2048, 4096, 8192];
        let times: Vec<Real> = lens
            .iter()
            .map(|&n| 3e-6 * n as Real + 5e-10 * (n as Real) * (n as Real))
            .collect();
        let (a, b) = fit_linear_quadratic(&lens, &times).unwrap();
        assert!((a - 3e-6).abs() < 1e-12, "{a}");
        assert!((b - 5e-10).abs() < 1e-16, "{b}");

        let pure: Vec<Real> = lens.iter().map(|&n| 2e-9 * (n as Real).powi(2)).collect();
        let (a, b) = fit_linear_quadratic(&lens, &pure).unwrap();
        assert!(a.abs() < 1e-12, "{a}");
        assert!((b - 2e-9).abs() < 1e-15, "{b}");

        assert!(fit_linear_quadratic(&lens[..2], &times[..2]).is_err());
    }

    #[test]
    fn fraction_sweep_resumes_and_matches_direct_training() {
        let (manifest, trajs) = tiny_dataset(6, 31);
        let cfg = tiny_config(flat_spec());
        let dir = tempfile::tempdir().unwrap();

        let mut direct_cfg = cfg.clone();
        direct_cfg.seed = 3;
        let direct = fit_dataset(&direct_cfg, &manifest, &trajs, None).unwrap();

        let out = ablate_fraction(&cfg, &[0.5, 1.0], &[3], &manifest, &trajs, dir.path()).unwrap();
        assert_eq!(out.ran, 2);
        assert_eq!(out.cells.len(), 2);
        assert_eq!(out.cells[1].setting, "1");
        assert_eq!(
            out.cells[1].val_mse.to_bits(),
            direct.checkpoint.best_val_mse().to_bits(),
            "the fraction-1 cell is the un-ablated run"
        );

        let bytes = std::fs::read(&out.csv_path).unwrap();
        let again =
            ablate_fraction(&cfg, &[0.5, 1.0], &[3], &manifest, &trajs, dir.path()).unwrap();
        assert_eq!(again.ran, 0, "a finished sweep re-runs nothing");
        assert_eq!(again.cells, out.cells);
        assert_eq!(std::fs::read(&out.csv_path).unwrap(), bytes);

        assert!(ablate_fraction(&cfg, &[0.0], &[3], &manifest, &trajs, dir.path()).is_err());
    }

    #[test]
    fn sweeps_skip_cells_already_on_disk() {
        let (manifest, trajs) = tiny_dataset(6, 37);
        let cfg = tiny_config(flat_spec());
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("fraction_ablation.csv");
        std::fs::write(&csv, "fraction,seed,val_mse\n0.5,3,123.456\n").unwrap();

        let out = ablate_fraction(&cfg, &[0.5, 1.0], &[3], &manifest, &trajs, dir.path()).unwrap();
        assert_eq!(out.ran, 1, "only the missing cell trains");
        assert_eq!(out.cells[0].val_mse, 123.456, "the stored cell is kept verbatim");
        assert!(out.cells[1].val_mse < 100.0);

        // a result outside the sweep is refused, not silently mixed in
        std::fs::write(&csv, "fraction,seed,val_mse\n0.7,3,1.0\n").unwrap();
        let err = ablate_fraction(&cfg, &[0.5, 1.0], &[3], &manifest, &trajs, dir.path());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn chunk_sweep_checks_its_preconditions() {
        let (manifest, trajs) = tiny_dataset(6, 43);
        let cfg = tiny_config(hiss_spec());
        let dir = tempfile::tempdir().unwrap();

        let flat = tiny_config(flat_spec());
        assert!(ablate_chunk(&flat, &[1, 10], &[0], &manifest, &trajs, dir.path()).is_err());
        assert!(
            ablate_chunk(&cfg, &[1, 5], &[0], &manifest, &trajs, dir.path()).is_err(),
            "the sweep must include the stride"
        );

        let out = ablate_chunk(&cfg, &[1, 10], &[0], &manifest, &trajs, dir.path()).unwrap();
        assert_eq!(out.cells.len(), 2);
        assert_eq!(out.cells[0].setting, "1");
        assert_eq!(out.cells[1].setting, "10");
        assert!(out.cells.iter().all(|c| c.val_mse.is_finite()));
        let text = std::fs::read_to_string(&out.csv_path).unwrap();
        assert!(text.starts_with("k,seed,val_mse\n"));
        assert!(dir.path().join("chunk_ablation.json").exists());
    }

    #[test]
    fn filter_sweep_selects_the_best_cutoff() {
        let (manifest, trajs) = tiny_dataset(6, 47);
        let cfg = tiny_config(flat_spec());
        let dir = tempfile::tempdir().unwrap();

        assert!(
            ablate_filter(&cfg, &[3], &[30.0], &[0], &manifest, &trajs, dir.path()).is_err(),
            "cutoffs at or above Nyquist are rejected"
        );

        let (out, best) =
            ablate_filter(&cfg, &[3], &[2.5, 7.5], &[0], &manifest, &trajs, dir.path()).unwrap();
        assert_eq!(out.cells.len(), 2);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].order, 3);
        let want = out
            .cells
            .iter()
            .map(|c| c.val_mse)
            .fold(Real::INFINITY, Real::min);
        assert_eq!(best[0].median_val_mse, want);
        let text = std::fs::read_to_string(&out.csv_path).unwrap();
        assert!(text.starts_with("order,cutoff_hz,seed,val_mse\n"));
        assert!(text.contains("3,2.5,0,"));
    }

    #[test]
    fn charts_are_well_formed_svg() {
        let series = vec![
            Series {
                name: "s4 & friends".into(),
                points: vec![(64.0, 1e-4), (128.0, 2e-4), (256.0, 4.2e-4)],
            },
            Series {
                name: "attn".into(),
                points: vec![(64.0, 2e-4), (128.0, 8e-4), (256.0, 3.1e-3)],
            },
        ];
        let svg = svg_line_chart("scaling", "length", "seconds", &series, true, true).unwrap();
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("s4 &amp; friends"));
        assert!(svg.matches("<circle").count() >= 6);

        let flat = svg_line_chart("loss", "epoch", "mse", &series, false, false).unwrap();
        assert!(flat.contains("</svg>"));

        let bad = vec![Series {
            name: "zero".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0)],
        }];
        assert!(svg_line_chart("t", "x", "y", &bad, true, false).is_err());
        assert!(svg_line_chart("t", "x", "y", &[], false, false).is_err());
    }
}
