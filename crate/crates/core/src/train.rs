//! Training: the MSE objective, the Adam optimizer, the fit loop, and
//! checkpoints.
//!
//! Everything is seeded and iteration order is fixed, so a config is a
//! complete recipe: two runs with the same config produce bit-identical
//! loss curves and parameters, regardless of worker count.
//!
//! The probabilistic reading of the objective (a fixed-variance Gaussian
//! over labels) multiplies the loss by a positive constant, which moves
//! no argmin; we train on the plain per-entry mean of squared errors so
//! values are comparable across sequence lengths.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, DatasetManifest, SplitTag, Trajectory};
use crate::error::{Error, Result};
use crate::hierarchy::{make_plan, HissModel, LowLevel, Model};
use crate::layers::{Ctx, LayerKind, LayerStack, LayerStackSpec, Param};
use crate::preprocess::{self, NormStats};
use crate::seq::Seq;
use crate::{GradMap, Graph, Real, Tensor};

const DIVERGENCE_LIMIT: Real = 1e6;

// ------------------------------------------------------------- config --

fn default_state_dim() -> usize {
    16
}

/// One level of a model: the layer family and its sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackCfg {
    pub kind: LayerKind,
    pub depth: usize,
    pub width: usize,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HissSpec {
    pub low: StackCfg,
    pub high: StackCfg,
    /// chunk size; 0 means "use the stride"
    #[serde(default)]
    pub k: usize,
}

/// Model shape: a flat stack over the full-rate stream, or the chunked
/// two-level arrangement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    Flat(StackCfg),
    Hiss(HissSpec),
}

fn default_epochs() -> usize {
    100
}
fn default_lr() -> Real {
    1e-3
}
fn default_batch() -> usize {
    8
}
fn default_clip() -> Real {
    1.0
}
fn default_fraction() -> Real {
    1.0
}
fn default_train_fraction() -> Real {
    0.8
}
fn default_filter_order() -> usize {
    5
}

/// Causal low-pass applied to the sensor stream before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterChoice {
    #[serde(default = "default_filter_order")]
    pub order: usize,
    pub cutoff_hz: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// dataset manifest path
    pub dataset: PathBuf,
    pub model: ModelSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: Real,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: Real,
    /// append one-step differences as extra input channels
    #[serde(default)]
    pub diffs: bool,
    #[serde(default)]
    pub filter: Option<FilterChoice>,
    /// fraction of the train split actually used
    #[serde(default = "default_fraction")]
    pub fraction: Real,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: Real,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip norm {} must be positive (use infinity to disable)",
                self.clip_norm
            )));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dataset fraction {} must lie in (0, 1]",
                self.fraction
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} must lie strictly inside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

// --------------------------------------------------------------- loss --

/// Mean over timesteps and dimensions of the squared prediction error.
/// Mean rather than sum, so losses are comparable across lengths.
pub fn mse_seq_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let diff = pred.sub(target)?;
    diff.mul(&diff)?.mean_all()
}

// -------------------------------------------------------------- adam --

/// Adam with global-norm gradient clipping. Constant learning rate; no
/// schedule. State is keyed by parameter position, which is stable
/// because `params_mut` enumerates in a fixed order.
pub struct Adam {
    pub lr: Real,
    pub clip_norm: Real,
    beta1: Real,
    beta2: Real,
    eps: Real,
    t: u64,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl Adam {
    pub fn new(lr: Real, clip_norm: Real) -> Self {
        Adam {
            lr,
            clip_norm,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Gradients are looked up by parameter name; a missing
    /// entry counts as a zero gradient (the moments still decay).
    pub fn step(&mut self, params: &mut [(String, &mut Param)], grads: &GradMap) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Graph(format!(
                "optimizer state covers {} tensors, step got {}",
                self.m.len(),
                params.len()
            )));
        }

        let mut sq_norm = 0.0;
        for (name, p) in params.iter() {
            if let Some(g) = grads.get(name) {
                if g.len() != p.data.len() {
                    return Err(Error::Shape(format!(
                        "gradient for {name} has {} entries, parameter has {}",
                        g.len(),
                        p.data.len()
                    )));
                }
                sq_norm += g.iter().map(|x| x * x).sum::<Real>();
            }
        }
        let norm = sq_norm.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("gradient norm is {norm}")));
        }
        let scale = if norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in params.iter_mut().enumerate() {
            let g = grads.get(name);
            for j in 0..p.data.len() {
                let gj = g.map_or(0.0, |g| g[j]) * scale;
                if !gj.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient for {name} after clipping"
                    )));
                }
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * gj;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * gj * gj;
                let mh = self.m[i][j] / bc1;
                let vh = self.v[i][j] / bc2;
                p.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

// ------------------------------------------------------- model building --

/// Instantiate the model for a dataset geometry. `d_in` is the channel
/// count after preprocessing.
pub fn build_model(
    spec: &ModelSpec,
    d_in: usize,
    d_out: usize,
    sensor_hz: u32,
    output_hz: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    if output_hz == 0 || sensor_hz % output_hz != 0 {
        return Err(Error::Rate(format!(
            "sensor rate {sensor_hz} Hz is not a multiple of output rate {output_hz} Hz"
        )));
    }
    let stride = (sensor_hz / output_hz) as usize;
    match spec {
        ModelSpec::Flat(s) => {
            let stack = LayerStack::new(
                &LayerStackSpec {
                    kind: s.kind,
                    depth: s.depth,
                    width: s.width,
                    state_dim: s.state_dim,
                    dropout: s.dropout,
                    d_in,
                    d_out,
                },
                rng,
            )?;
            Ok(Model::Flat { stack, stride })
        }
        ModelSpec::Hiss(h) => {
            let k = if h.k == 0 { stride } else { h.k };
            let plan = make_plan(sensor_hz, output_hz, k)?;
            let low = LayerStack::new(
                &LayerStackSpec {
                    kind: h.low.kind,
                    depth: h.low.depth,
                    width: h.low.width,
                    state_dim: h.low.state_dim,
                    dropout: h.low.dropout,
                    d_in,
                    d_out: h.low.width,
                },
                rng,
            )?;
            let high = LayerStack::new(
                &LayerStackSpec {
                    kind: h.high.kind,
                    depth: h.high.depth,
                    width: h.high.width,
                    state_dim: h.high.state_dim,
                    dropout: h.high.dropout,
                    d_in: h.low.width,
                    d_out,
                },
                rng,
            )?;
            Ok(Model::Hiss(HissModel {
                plan,
                low: LowLevel::Stack(low),
                high,
            }))
        }
    }
}

// ------------------------------------------------------- preprocessing --

/// Filter and difference-augmentation for one sensor stream, as
/// configured. Normalization happens separately because its statistics
/// come from the train split alone.
fn preprocess_sensor(
    sensor: &Seq,
    cfg: &TrainConfig,
    filter: Option<&preprocess::FilterSpec>,
) -> Result<Seq> {
    let mut s = match filter {
        Some(spec) => preprocess::butterworth_lowpass(sensor, spec)?,
        None => sensor.clone(),
    };
    if cfg.diffs {
        s = preprocess::append_diffs(&s);
    }
    Ok(s)
}

/// Channel count the model sees for this config.
pub fn input_dim(sensor_dim: usize, cfg: &TrainConfig) -> usize {
    if cfg.diffs {
        2 * sensor_dim
    } else {
        sensor_dim
    }
}

// ------------------------------------------------------------ fitting --

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: Real,
    pub val_mse: Real,
}

/// Best-validation snapshot plus everything needed to rebuild and rerun.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub norm_stats: NormStats,
    /// epoch whose parameters these are (best validation loss)
    pub epoch: usize,
    pub params: Vec<(String, Param)>,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    /// Validation loss at the stored best epoch.
    pub fn best_val_mse(&self) -> Real {
        self.history
            .iter()
            .find(|h| h.epoch == self.epoch)
            .map(|h| h.val_mse)
            .expect("history covers the best epoch")
    }
}

#[derive(Debug)]
pub struct FitResult {
    pub checkpoint: Checkpoint,
    /// optimizer steps taken, for loop-contract checks
    pub steps: u64,
}

/// Load the dataset named by the config and train.
pub fn fit(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<FitResult> {
    let (manifest, trajs) = data::load_dataset(&cfg.dataset)?;
    fit_dataset(cfg, &manifest, &trajs, out_dir)
}

/// Train/validation indices a config sees for a dataset: the manifest's
/// stamped split when present, otherwise derived from the config seed.
/// Evaluation must use this same derivation to see the same split
/// training did. The retained-fraction subsetting applies to training
/// only and is not part of the split.
pub fn split_for(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train_idx = manifest.indices(SplitTag::Train);
    let mut val_idx = manifest.indices(SplitTag::Val);
    if train_idx.is_empty() && val_idx.is_empty() {
        let (tr, va) = data::split_indices(manifest.entries.len(), cfg.train_fraction, cfg.seed)?;
        train_idx = tr;
        val_idx = va;
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Split(
            "both train and validation splits need at least one trajectory".into(),
        ));
    }
    Ok((train_idx, val_idx))
}

/// Train on an already-loaded dataset. Uses the manifest's split tags if
/// assigned, otherwise derives a split from the config seed. Returns the
/// best-validation checkpoint; also writes it under `out_dir` if given.
pub fn fit_dataset(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    trajs: &[Trajectory],
    out_dir: Option<&Path>,
) -> Result<FitResult> {
    cfg.validate()?;
    if trajs.len() != manifest.entries.len() {
        return Err(Error::Manifest(format!(
            "{} trajectories for {} manifest entries",
            trajs.len(),
            manifest.entries.len()
        )));
    }

    let (mut train_idx, val_idx) = split_for(cfg, manifest)?;
    if cfg.fraction < 1.0 {
        train_idx = data::retain_fraction(&train_idx, cfg.fraction, cfg.seed)?;
    }

    // preprocess every stream; fit normalization on the retained train set only
    let filter = match &cfg.filter {
        Some(f) => Some(preprocess::design_butterworth(
            f.order,
            f.cutoff_hz,
            manifest.sensor_hz as Real,
        )?),
        None => None,
    };
    let mut sensors = Vec::with_capacity(trajs.len());
    for t in trajs {
        sensors.push(preprocess_sensor(&t.sensor, cfg, filter.as_ref())?);
    }
    let train_refs: Vec<&Seq> = train_idx.iter().map(|&i| &sensors[i]).collect();
    let norm_stats = preprocess::fit_stats(&train_refs)?;
    for s in sensors.iter_mut() {
        *s = preprocess::normalize(s, &norm_stats)?;
    }

    let d_in = input_dim(manifest.sensor_dim, cfg);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(
        &cfg.model,
        d_in,
        manifest.label_dim,
        manifest.sensor_hz,
        manifest.output_hz,
        &mut init_rng,
    )?;

    let mut adam = Adam::new(cfg.lr, cfg.clip_norm);
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Real, Vec<(String, Param)>)> = None;

    for epoch in 1..=cfg.epochs {
        // same-length buckets, shuffled within each bucket per epoch
        let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &train_idx {
            buckets.entry(sensors[i].rows).or_default().push(i);
        }
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64);
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for bucket in buckets.into_values() {
            let mut bucket = bucket;
            use rand::seq::SliceRandom;
            bucket.shuffle(&mut shuffle_rng);
            for group in bucket.chunks(cfg.batch_size) {
                batches.push(group.to_vec());
            }
        }

        let mut train_loss_sum = 0.0;
        for batch in &batches {
            let results = data::par_map(batch.len(), |bi| {
                let ti = batch[bi];
                train_example(&model, cfg, epoch, ti, &sensors[ti], &trajs[ti].label)
            });
            let mut merged: BTreeMap<String, Vec<Real>> = BTreeMap::new();
            let inv = 1.0 / batch.len() as Real;
            for r in results {
                let (loss, grads) = r?;
                if loss > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence(format!(
                        "training loss {loss} exceeded {DIVERGENCE_LIMIT} at epoch {epoch}"
                    )));
                }
                train_loss_sum += loss;
                for (name, g) in grads.iter() {
                    let acc = merged
                        .entry(name.to_string())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    for (a, &x) in acc.iter_mut().zip(g) {
                        *a += x * inv;
                    }
                }
            }
            let grads = GradMap::from_entries(merged.into_iter().collect());
            let mut params = model.params_mut();
            adam.step(&mut params, &grads)?;
        }
        let train_mse = train_loss_sum / train_idx.len() as Real;

        let val_losses = data::par_map(val_idx.len(), |vi| {
            let ti = val_idx[vi];
            eval_example(&model, &sensors[ti], &trajs[ti].label)
        });
        let mut val_sum = 0.0;
        for l in val_losses {
            let l = l?;
            if l > DIVERGENCE_LIMIT {
                return Err(Error::Divergence(format!(
                    "validation loss {l} exceeded {DIVERGENCE_LIMIT} at epoch {epoch}"
                )));
            }
            val_sum += l;
        }
        let val_mse = val_sum / val_idx.len() as Real;

        history.push(EpochStats { epoch, train_mse, val_mse });
        let improved = best.as_ref().map_or(true, |(_, b, _)| val_mse < *b);
        if improved {
            let snapshot = model
                .params()
                .into_iter()
                .map(|(n, p)| (n, p.clone()))
                .collect();
            best = Some((epoch, val_mse, snapshot));
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        norm_stats,
        epoch: best_epoch,
        params: best_params,
        history,
    };
    if let Some(dir) = out_dir {
        save_checkpoint(dir, &checkpoint)?;
    }
    Ok(FitResult {
        checkpoint,
        steps: adam.steps(),
    })
}

/// Forward + backward for one training example on its own graph.
/// Dropout noise is seeded by (config seed, epoch, trajectory index), so
/// results do not depend on batch grouping or thread count.
fn train_example(
    model: &Model,
    cfg: &TrainConfig,
    epoch: usize,
    traj_idx: usize,
    sensor: &Seq,
    label: &Seq,
) -> Result<(Real, GradMap)> {
    let g = Graph::new();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream((1 << 32) + ((epoch as u64) << 20) + traj_idx as u64);
    let ctx = Ctx::train(&g, Rc::new(RefCell::new(drop_rng)));
    let pred = model.forward(&ctx, &sensor.to_tensor())?;
    let loss = mse_seq_loss(&pred, &label.to_tensor())?;
    let value = loss.item()?;
    let grads = g.backward_from(&loss)?;
    Ok((value, grads))
}

fn eval_example(model: &Model, sensor: &Seq, label: &Seq) -> Result<Real> {
    let ctx = Ctx::infer();
    let pred = model.forward(&ctx, &sensor.to_tensor())?;
    mse_seq_loss(&pred, &label.to_tensor())?.item()
}

/// Mean MSE of a model over (preprocessed sensor, label) pairs,
/// averaged per trajectory (inference mode, no dropout).
pub fn mean_mse(model: &Model, examples: &[(&Seq, &Seq)]) -> Result<Real> {
    if examples.is_empty() {
        return Err(Error::Split("no trajectories to evaluate".into()));
    }
    let losses = data::par_map(examples.len(), |i| {
        eval_example(model, examples[i].0, examples[i].1)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len() as Real)
}

// --------------------------------------------------------- checkpoints --
//
// On disk: index.json (config, best epoch, tensor table), params.bin
// (little-endian f64, concatenated per the tensor table), norm_stats.json,
// history.csv. The index is written last via temp-file-and-rename.

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    config: TrainConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    let io = |what: &str, e: std::io::Error| Error::Io(format!("cannot write {what}: {e}"));

    let mut payload: Vec<u8> = Vec::new();
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, p) in &ckpt.params {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: p.shape.clone(),
            offset: payload.len() / 8,
            len: p.data.len(),
        });
        for v in &p.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(dir.join("params.bin"), &payload).map_err(|e| io("params.bin", e))?;

    let stats = serde_json::to_string_pretty(&ckpt.norm_stats)
        .map_err(|e| Error::Io(format!("cannot serialize stats: {e}")))?;
    std::fs::write(dir.join("norm_stats.json"), stats).map_err(|e| io("norm_stats.json", e))?;

    let mut hist = String::from("epoch,train_mse,val_mse\n");
    for h in &ckpt.history {
        hist.push_str(&format!("{},{},{}\n", h.epoch, h.train_mse, h.val_mse));
    }
    std::fs::write(dir.join("history.csv"), hist).map_err(|e| io("history.csv", e))?;

    let index = CheckpointIndex {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        tensors,
    };
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::Io(format!("cannot serialize index: {e}")))?;
    let tmp = dir.join("index.json.tmp");
    std::fs::write(&tmp, json).map_err(|e| io("index.json.tmp", e))?;
    std::fs::rename(&tmp, dir.join("index.json"))
        .map_err(|e| Error::Io(format!("cannot move index into place: {e}")))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let read = |name: &str| -> Result<Vec<u8>> {
        std::fs::read(dir.join(name))
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", dir.join(name).display())))
    };
    let index: CheckpointIndex = serde_json::from_slice(&read("index.json")?)
        .map_err(|e| Error::Parse(format!("index.json: {e}")))?;
    let norm_stats: NormStats = serde_json::from_slice(&read("norm_stats.json")?)
        .map_err(|e| Error::Parse(format!("norm_stats.json: {e}")))?;

    let payload = read("params.bin")?;
    if payload.len() % 8 != 0 {
        return Err(Error::Parse("params.bin: length is not a multiple of 8".into()));
    }
    let floats: Vec<Real> = payload
        .chunks_exact(8)
        .map(|b| Real::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = Vec::with_capacity(index.tensors.len());
    for t in &index.tensors {
        let end = t.offset.checked_add(t.len).filter(|&e| e <= floats.len());
        let Some(end) = end else {
            return Err(Error::Parse(format!(
                "params.bin: tensor {} spans [{}, {}) beyond the {}-float payload",
                t.name,
                t.offset,
                t.offset + t.len,
                floats.len()
            )));
        };
        if t.shape.iter().product::<usize>() != t.len {
            return Err(Error::Parse(format!(
                "index.json: tensor {} shape {:?} does not cover {} floats",
                t.name, t.shape, t.len
            )));
        }
        params.push((
            t.name.clone(),
            Param::new(&t.shape, floats[t.offset..end].to_vec()),
        ));
    }

    let mut history = Vec::new();
    let hist_text = String::from_utf8(read("history.csv")?)
        .map_err(|_| Error::Parse("history.csv: not UTF-8".into()))?;
    for (i, line) in hist_text.lines().enumerate() {
        if i == 0 {
            if line != "epoch,train_mse,val_mse" {
                return Err(Error::Parse(format!("history.csv line 1: bad header {line:?}")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("history.csv line {}: {line:?}", i + 1)));
        }
        let bad = |e: &dyn std::fmt::Display| {
            Error::Parse(format!("history.csv line {}: {e}", i + 1))
        };
        history.push(EpochStats {
            epoch: fields[0].parse().map_err(|e| bad(&e))?,
            train_mse: fields[1].parse().map_err(|e| bad(&e))?,
            val_mse: fields[2].parse().map_err(|e| bad(&e))?,
        });
    }

    Ok(Checkpoint {
        config: index.config,
        norm_stats,
        epoch: index.epoch,
        params,
        history,
    })
}

/// Rebuild the model a checkpoint was trained as and restore its
/// parameters, so forward passes reproduce the training-time model
/// bit for bit.
pub fn model_from_checkpoint(ckpt: &Checkpoint, manifest: &DatasetManifest) -> Result<Model> {
    let d_in = input_dim(manifest.sensor_dim, &ckpt.config);
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
    let mut model = build_model(
        &ckpt.config.model,
        d_in,
        manifest.label_dim,
        manifest.sensor_hz,
        manifest.output_hz,
        &mut rng,
    )?;
    let saved: BTreeMap<&str, &Param> =
        ckpt.params.iter().map(|(n, p)| (n.as_str(), p)).collect();
    let mut live = model.params_mut();
    if saved.len() != live.len() {
        return Err(Error::Manifest(format!(
            "checkpoint holds {} tensors, model wants {}",
            saved.len(),
            live.len()
        )));
    }
    for (name, p) in live.iter_mut() {
        let Some(s) = saved.get(name.as_str()) else {
            return Err(Error::Manifest(format!("checkpoint is missing tensor {name}")));
        };
        if s.shape != p.shape {
            return Err(Error::Manifest(format!(
                "tensor {name}: checkpoint shape {:?} vs model shape {:?}",
                s.shape, p.shape
            )));
        }
        p.data.copy_from_slice(&s.data);
    }
    Ok(model)
}

/// Preprocessing exactly as `fit_dataset` applied it, using the stored
/// statistics; run this before feeding new data to a restored model.
pub fn preprocess_like_checkpoint(ckpt: &Checkpoint, manifest: &DatasetManifest, sensor: &Seq) -> Result<Seq> {
    let filter = match &ckpt.config.filter {
        Some(f) => Some(preprocess::design_butterworth(
            f.order,
            f.cutoff_hz,
            manifest.sensor_hz as Real,
        )?),
        None => None,
    };
    let s = preprocess_sensor(sensor, &ckpt.config, filter.as_ref())?;
    preprocess::normalize(&s, &ckpt.norm_stats)
}
