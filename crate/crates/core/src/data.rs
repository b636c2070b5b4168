//! Trajectory datasets: deterministic synthetic task generators, the
//! on-disk manifest + CSV format, and train/validation splitting.
//!
//! Each trajectory pairs a fast sensor stream with a slow label stream.
//! The generators build a latent waypoint motion profile first and then
//! render sensors from it, so every dataset is a pure function of its
//! `TaskSpec` (seed included) and the label stream is exactly aligned:
//! `T_s == stride * T_o` by construction, never by resampling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::Seq;
use crate::Real;

const CARRIER_HZ: Real = 17.3;

// -------------------------------------------------------------- types --

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    DriftIntegrator,
    SlipRotation,
    JoystickLike,
}

struct KindCfg {
    name: &'static str,
    sensor_dim: usize,
    label_dim: usize,
    lo: &'static [Real],
    hi: &'static [Real],
    speed: (Real, Real),
    // reference speed scale for vibration/drift envelopes and map inputs
    vref: Real,
    // velocity labels integrate to the waypoint telescoping sum;
    // position labels read the latent state directly
    labels_are_rates: bool,
}

const FRAC_PI_4: Real = std::f64::consts::FRAC_PI_4;

impl TaskKind {
    pub fn name(&self) -> &'static str {
        self.cfg().name
    }

    pub fn dims(&self) -> (usize, usize) {
        let c = self.cfg();
        (c.sensor_dim, c.label_dim)
    }

    fn cfg(&self) -> KindCfg {
        match self {
            TaskKind::DriftIntegrator => KindCfg {
                name: "drift-integrator",
                sensor_dim: 30,
                label_dim: 2,
                lo: &[0.0, 0.0],
                hi: &[0.1, 0.1],
                speed: (0.05, 0.15),
                vref: 0.1,
                labels_are_rates: true,
            },
            TaskKind::SlipRotation => KindCfg {
                name: "slip-rotation",
                sensor_dim: 30,
                label_dim: 3,
                lo: &[0.0, 0.0, -FRAC_PI_4],
                hi: &[0.3, 0.03, FRAC_PI_4],
                speed: (0.05, 0.15),
                vref: 0.1,
                labels_are_rates: true,
            },
            TaskKind::JoystickLike => KindCfg {
                name: "joystick-like",
                sensor_dim: 48,
                label_dim: 3,
                lo: &[-1.0, -1.0, -1.0],
                hi: &[1.0, 1.0, 1.0],
                speed: (0.5, 1.5),
                vref: 1.0,
                labels_are_rates: false,
            },
        }
    }
}

fn default_duration() -> (Real, Real) {
    (9.0, 60.0)
}
fn default_noise() -> Real {
    0.02
}
fn default_drift() -> Real {
    0.05
}
fn default_vibration() -> Real {
    0.5
}
fn default_mixing() -> Real {
    1.0
}
fn default_sensor_hz() -> u32 {
    50
}
fn default_output_hz() -> u32 {
    5
}

/// Everything a generator needs; two specs with equal fields produce
/// bit-identical datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub count: usize,
    pub seed: u64,
    /// min and max duration in seconds
    #[serde(default = "default_duration")]
    pub duration_s: (Real, Real),
    /// white sensor noise level
    #[serde(default = "default_noise")]
    pub noise: Real,
    /// scale of the speed-driven random-walk drift
    #[serde(default = "default_drift")]
    pub drift: Real,
    /// amplitude of the speed-modulated high-frequency carrier
    #[serde(default = "default_vibration")]
    pub vibration: Real,
    /// 0 = sensor channels copy the label signal, 1 = full nonlinear map
    #[serde(default = "default_mixing")]
    pub mixing: Real,
    #[serde(default = "default_sensor_hz")]
    pub sensor_hz: u32,
    #[serde(default = "default_output_hz")]
    pub output_hz: u32,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, count: usize, seed: u64) -> Self {
        TaskSpec {
            kind,
            count,
            seed,
            duration_s: default_duration(),
            noise: default_noise(),
            drift: default_drift(),
            vibration: default_vibration(),
            mixing: default_mixing(),
            sensor_hz: default_sensor_hz(),
            output_hz: default_output_hz(),
        }
    }

    pub fn stride(&self) -> Result<usize> {
        if self.output_hz == 0 || self.sensor_hz == 0 {
            return Err(Error::Rate("rates must be positive".into()));
        }
        if self.sensor_hz % self.output_hz != 0 {
            return Err(Error::Rate(format!(
                "sensor rate {} Hz is not a multiple of output rate {} Hz",
                self.sensor_hz, self.output_hz
            )));
        }
        Ok((self.sensor_hz / self.output_hz) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("trajectory count must be at least 1".into()));
        }
        let (lo, hi) = self.duration_s;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "duration range [{lo}, {hi}] s must be positive and ordered"
            )));
        }
        for (knob, v) in [
            ("noise", self.noise),
            ("drift", self.drift),
            ("vibration", self.vibration),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{knob} magnitude {v} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::Config(format!(
                "mixing {} must lie in [0, 1]",
                self.mixing
            )));
        }
        self.stride()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub task: String,
    pub seed: u64,
    pub index: u64,
    /// net waypoint displacement of the latent profile; for rate-labeled
    /// tasks the label stream integrates to exactly this
    pub displacement: Vec<Real>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    /// T_s x d_s at sensor_hz
    pub sensor: Seq,
    /// T_o x d_o at output_hz, one row per chunk of `stride` sensor rows
    pub label: Seq,
    pub meta: TrajMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Unassigned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajEntry {
    pub id: String,
    pub file: String,
    pub rows: usize,
    pub split: SplitTag,
    pub seed: u64,
    pub index: u64,
    pub displacement: Vec<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: String,
    pub sensor_hz: u32,
    pub output_hz: u32,
    pub sensor_dim: usize,
    pub label_dim: usize,
    pub seed: u64,
    pub spec: TaskSpec,
    pub entries: Vec<TrajEntry>,
}

impl DatasetManifest {
    pub fn stride(&self) -> usize {
        (self.sensor_hz / self.output_hz) as usize
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == tag)
            .map(|(i, _)| i)
            .collect()
    }
}

// --------------------------------------------------------- generation --

/// Fixed smooth random map from the latent features to sensor channels,
/// plus the per-channel carrier bank. Drawn once per dataset so every
/// trajectory shares the same "sensor".
struct SensorPalette {
    w1: Vec<Real>,
    b1: Vec<Real>,
    w2: Vec<Real>,
    b2: Vec<Real>,
    hidden: usize,
    d_in: usize,
    d_s: usize,
    in_scale: Real,
    amp: Vec<Real>,
    phase: Vec<Real>,
}

fn randn(rng: &mut ChaCha8Rng) -> Real {
    StandardNormal.sample(rng)
}

impl SensorPalette {
    fn draw(rng: &mut ChaCha8Rng, d_in: usize, d_s: usize, in_scale: Real) -> Self {
        let hidden = 16;
        let w1 = (0..hidden * d_in).map(|_| randn(rng)).collect();
        let b1 = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2 = (0..d_s * hidden)
            .map(|_| randn(rng) / (hidden as Real).sqrt())
            .collect();
        let b2 = (0..d_s).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let amp = (0..d_s).map(|_| rng.gen_range(0.5..1.5)).collect();
        let phase = (0..d_s)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        SensorPalette {
            w1,
            b1,
            w2,
            b2,
            hidden,
            d_in,
            d_s,
            in_scale,
            amp,
            phase,
        }
    }

    fn map(&self, x: &[Real], scratch: &mut [Real], out: &mut [Real]) {
        debug_assert_eq!(x.len(), self.d_in);
        for j in 0..self.hidden {
            let mut acc = self.b1[j];
            for (k, &xv) in x.iter().enumerate() {
                acc += self.w1[j * self.d_in + k] * xv * self.in_scale;
            }
            scratch[j] = acc.tanh();
        }
        for c in 0..self.d_s {
            let mut acc = self.b2[c];
            for j in 0..self.hidden {
                acc += self.w2[c * self.hidden + j] * scratch[j];
            }
            out[c] = acc;
        }
    }
}

/// Run `f` over `0..n` across threads, returning results in index order
/// (so the outcome never depends on the worker count). HISS_SEQ_THREADS
/// caps the workers.
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let cap = std::env::var("HISS_SEQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(usize::MAX);
    let threads = std::thread::available_parallelism()
        .map(|c| c.get())
        .unwrap_or(1)
        .min(cap)
        .min(n)
        .max(1);
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        for (ci, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(ci * chunk + j));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("every slot filled")).collect()
}

/// Generate the whole dataset. Pure in `spec`; trajectories are built in
/// parallel from per-index RNG streams, so thread count never changes
/// the result.
pub fn generate(spec: &TaskSpec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let cfg = spec.kind.cfg();
    let mut palette_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    palette_rng.set_stream(0);
    let d_in = if cfg.labels_are_rates {
        cfg.label_dim + 1
    } else {
        2 * cfg.label_dim + 1
    };
    let palette = SensorPalette::draw(&mut palette_rng, d_in, cfg.sensor_dim, 1.0 / cfg.vref);
    Ok(par_map(spec.count, |i| gen_one(spec, &cfg, &palette, i)))
}

/// Latent motion profile: per-output-tick velocities. Segment and pause
/// lengths are quantized to whole ticks with the segment velocity
/// adjusted so each reached waypoint is hit exactly; the telescoping sum
/// of reached waypoints is returned alongside.
fn waypoint_profile(
    rng: &mut ChaCha8Rng,
    cfg: &KindCfg,
    spec: &TaskSpec,
) -> (Vec<Vec<Real>>, Vec<Real>, Vec<Real>) {
    let f_o = spec.output_hz as Real;
    let dt_out = 1.0 / f_o;
    let (lo_s, hi_s) = spec.duration_s;
    let min_ticks = ((lo_s * f_o - 1e-9).ceil() as usize).max(1);
    let max_ticks = (((hi_s * f_o) + 1e-9).floor() as usize).max(min_ticks);
    let d = cfg.label_dim;

    let n_points = rng.gen_range(8..=12);
    let points: Vec<Vec<Real>> = (0..n_points)
        .map(|_| (0..d).map(|j| rng.gen_range(cfg.lo[j]..cfg.hi[j])).collect())
        .collect();

    let mut ticks: Vec<Vec<Real>> = Vec::new();
    let pause = |rng: &mut ChaCha8Rng, ticks: &mut Vec<Vec<Real>>, want: usize| {
        let n = ((rng.gen_range(1.0..4.0) * f_o).round() as usize).max(1);
        for _ in 0..n.min(want.saturating_sub(ticks.len())) {
            ticks.push(vec![0.0; d]);
        }
    };
    pause(rng, &mut ticks, max_ticks);
    let mut reached = 0;
    for k in 0..n_points - 1 {
        let delta: Vec<Real> = (0..d).map(|j| points[k + 1][j] - points[k][j]).collect();
        let dist = delta.iter().map(|v| v * v).sum::<Real>().sqrt();
        let speed = rng.gen_range(cfg.speed.0..cfg.speed.1);
        let seg = (((dist / speed) * f_o).round() as usize).max(1);
        if ticks.len() + seg > max_ticks {
            break;
        }
        let v: Vec<Real> = delta.iter().map(|dv| dv / (seg as Real * dt_out)).collect();
        for _ in 0..seg {
            ticks.push(v.clone());
        }
        reached = k + 1;
        pause(rng, &mut ticks, max_ticks);
        if ticks.len() == max_ticks {
            break;
        }
    }
    while ticks.len() < min_ticks {
        ticks.push(vec![0.0; d]);
    }
    let displacement: Vec<Real> = (0..d).map(|j| points[reached][j] - points[0][j]).collect();
    (ticks, points[0].clone(), displacement)
}

fn gen_one(spec: &TaskSpec, cfg: &KindCfg, palette: &SensorPalette, i: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1 + i as u64);
    let stride = (spec.sensor_hz / spec.output_hz) as usize;
    let dt_s = 1.0 / spec.sensor_hz as Real;
    let d = cfg.label_dim;

    let (tick_vel, start, displacement) = waypoint_profile(&mut rng, cfg, spec);
    let traj_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let t_o = tick_vel.len();
    let t_s = t_o * stride;

    // latent position at each sensor row (row time t*dt_s; velocity is
    // constant inside each tick, and tick boundaries fall on whole rows)
    let mut pos = vec![0.0; t_s * d];
    pos[..d].copy_from_slice(&start);
    for t in 1..t_s {
        let v = &tick_vel[(t - 1) / stride];
        for j in 0..d {
            pos[t * d + j] = pos[(t - 1) * d + j] + v[j] * dt_s;
        }
    }

    let mut label = Seq::zeros(t_o, d);
    for i in 0..t_o {
        if cfg.labels_are_rates {
            label.row_mut(i).copy_from_slice(&tick_vel[i]);
        } else {
            let row = (i + 1) * stride - 1;
            label.row_mut(i).copy_from_slice(&pos[row * d..(row + 1) * d]);
        }
    }

    let mut sensor = Seq::zeros(t_s, cfg.sensor_dim);
    let mut walk = vec![0.0; cfg.sensor_dim];
    let mut features = vec![0.0; palette.d_in];
    let mut scratch = vec![0.0; palette.hidden];
    let mut mapped = vec![0.0; cfg.sensor_dim];
    for t in 0..t_s {
        let v = &tick_vel[t / stride];
        let speed = v.iter().map(|x| x * x).sum::<Real>().sqrt();
        let tile: &[Real] = if cfg.labels_are_rates {
            v
        } else {
            &pos[t * d..(t + 1) * d]
        };
        if cfg.labels_are_rates {
            features[..d].copy_from_slice(v);
            features[d] = speed;
        } else {
            features[..d].copy_from_slice(&pos[t * d..(t + 1) * d]);
            features[d..2 * d].copy_from_slice(v);
            features[2 * d] = speed;
        }
        palette.map(&features, &mut scratch, &mut mapped);
        let tt = t as Real * dt_s;
        let envelope = speed / cfg.vref;
        for c in 0..cfg.sensor_dim {
            walk[c] += spec.drift * speed * dt_s.sqrt() * randn(&mut rng);
            let clean = (1.0 - spec.mixing) * tile[c % d] + spec.mixing * mapped[c];
            let vib = spec.vibration
                * palette.amp[c]
                * envelope
                * (std::f64::consts::TAU * CARRIER_HZ * tt + palette.phase[c] + traj_phase).sin();
            let white = spec.noise * randn(&mut rng);
            sensor.set(t, c, clean + walk[c] + vib + white);
        }
    }

    Trajectory {
        id: format!("{}-{:04}", cfg.name, i),
        sensor,
        label,
        meta: TrajMeta {
            task: cfg.name.to_string(),
            seed: spec.seed,
            index: i as u64,
            displacement,
        },
    }
}

// ---------------------------------------------------------- splitting --

/// Deterministic shuffled partition of `0..n` into train and validation
/// index sets, both nonempty.
pub fn split_indices(n: usize, train_fraction: Real, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Split("cannot split an empty trajectory set".into()));
    }
    if n < 2 {
        return Err(Error::Split(
            "need at least 2 trajectories so both splits are nonempty".into(),
        ));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} must lie strictly inside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as Real * train_fraction).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Stamp the split assignment into the manifest.
pub fn assign_split(
    manifest: &mut DatasetManifest,
    train_fraction: Real,
    seed: u64,
) -> Result<()> {
    let (train, val) = split_indices(manifest.entries.len(), train_fraction, seed)?;
    for &i in &train {
        manifest.entries[i].split = SplitTag::Train;
    }
    for &i in &val {
        manifest.entries[i].split = SplitTag::Val;
    }
    Ok(())
}

/// Keep a deterministic random fraction of the given indices (used to
/// shrink the training set for data-budget sweeps). `fraction = 1`
/// returns everything.
pub fn retain_fraction(indices: &[usize], fraction: Real, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Split(format!(
            "retained fraction {fraction} must lie in (0, 1]"
        )));
    }
    if indices.is_empty() {
        return Err(Error::Split("no indices to retain from".into()));
    }
    let mut shuffled = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let keep = ((indices.len() as Real * fraction).round() as usize).clamp(1, indices.len());
    let mut kept = shuffled[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

// ------------------------------------------------------------ storage --
//
// One directory per dataset: manifest.json plus one CSV per trajectory.
// CSV layout: header `time,s0..s{d_s-1},y0..y{d_o-1}`, one row per sensor
// step, label cells filled only on the last row of each output chunk.

/// Manifest describing `trajs` as produced by `spec`, splits unassigned.
/// Entry file names follow the on-disk layout whether or not the CSVs
/// are ever written.
pub fn manifest_for(spec: &TaskSpec, trajs: &[Trajectory]) -> Result<DatasetManifest> {
    spec.validate()?;
    let (d_s, d_o) = spec.kind.dims();
    Ok(DatasetManifest {
        task: spec.kind.name().to_string(),
        sensor_hz: spec.sensor_hz,
        output_hz: spec.output_hz,
        sensor_dim: d_s,
        label_dim: d_o,
        seed: spec.seed,
        spec: spec.clone(),
        entries: trajs
            .iter()
            .map(|t| TrajEntry {
                id: t.id.clone(),
                file: format!("{}.csv", t.id),
                rows: t.sensor.rows,
                split: SplitTag::Unassigned,
                seed: t.meta.seed,
                index: t.meta.index,
                displacement: t.meta.displacement.clone(),
            })
            .collect(),
    })
}

pub fn store_dataset(dir: &Path, spec: &TaskSpec, trajs: &[Trajectory]) -> Result<PathBuf> {
    let manifest = manifest_for(spec, trajs)?;
    let stride = spec.stride()?;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    for t in trajs {
        write_trajectory_csv(&dir.join(format!("{}.csv", t.id)), t, stride, spec.sensor_hz)?;
    }
    let path = dir.join("manifest.json");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

/// Serialize the manifest via a temp file and rename, so readers never
/// observe a half-written manifest.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Manifest(format!("cannot serialize manifest: {e}")))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json.as_bytes())
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::Io(format!("cannot move manifest into place: {e}")))?;
    Ok(())
}

fn write_trajectory_csv(path: &Path, t: &Trajectory, stride: usize, sensor_hz: u32) -> Result<()> {
    if t.sensor.rows != t.label.rows * stride {
        return Err(Error::Alignment(format!(
            "trajectory {}: {} sensor rows is not {} label rows times stride {stride}",
            t.id, t.sensor.rows, t.label.rows
        )));
    }
    let io_err = |e: csv::Error| Error::Io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["time".to_string()];
    header.extend((0..t.sensor.cols).map(|c| format!("s{c}")));
    header.extend((0..t.label.cols).map(|c| format!("y{c}")));
    w.write_record(&header).map_err(io_err)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for row in 0..t.sensor.rows {
        rec.clear();
        rec.push(format!("{}", row as Real / sensor_hz as Real));
        for v in t.sensor.row(row) {
            rec.push(format!("{v}"));
        }
        if (row + 1) % stride == 0 {
            for v in t.label.row((row + 1) / stride - 1) {
                rec.push(format!("{v}"));
            }
        } else {
            rec.extend(std::iter::repeat(String::new()).take(t.label.cols));
        }
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::Io(format!("cannot flush {}: {e}", path.display())))?;
    Ok(())
}

// ------------------------------------------------------------ loading --

fn parse_fail(file: &str, line: u64, what: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{file} line {line}: {what}"))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    let m: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if m.output_hz == 0 || m.sensor_hz % m.output_hz != 0 {
        return Err(Error::Manifest(format!(
            "{}: sensor rate {} Hz is not a multiple of output rate {} Hz",
            path.display(),
            m.sensor_hz,
            m.output_hz
        )));
    }
    Ok(m)
}

/// Read one trajectory CSV back. Strict: the header, the time column,
/// the row count, and the label-cell placement all have to match the
/// manifest, so a truncated or edited file fails instead of yielding
/// partial data.
pub fn load_trajectory(dir: &Path, m: &DatasetManifest, e: &TrajEntry) -> Result<Trajectory> {
    let path = dir.join(&e.file);
    if !path.is_file() {
        return Err(Error::Manifest(format!(
            "manifest references a missing file: {}",
            e.file
        )));
    }
    let stride = m.stride();
    let csv_err = |err: &csv::Error| {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        parse_fail(&e.file, line, err)
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|err| csv_err(&err))?;
    let header = rdr.headers().map_err(|err| csv_err(&err))?.clone();
    let want_cols = 1 + m.sensor_dim + m.label_dim;
    if header.len() != want_cols || &header[0] != "time" {
        return Err(parse_fail(
            &e.file,
            1,
            format!("header must be time,s0..,y0.. with {want_cols} columns"),
        ));
    }
    for c in 0..m.sensor_dim {
        if &header[1 + c] != format!("s{c}").as_str() {
            return Err(parse_fail(&e.file, 1, format!("column {} must be s{c}", 1 + c)));
        }
    }
    for c in 0..m.label_dim {
        if &header[1 + m.sensor_dim + c] != format!("y{c}").as_str() {
            return Err(parse_fail(
                &e.file,
                1,
                format!("column {} must be y{c}", 1 + m.sensor_dim + c),
            ));
        }
    }

    let mut sensor = Vec::with_capacity(e.rows * m.sensor_dim);
    let mut label = Vec::new();
    let mut t = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|err| csv_err(&err))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |idx: usize| -> Result<Real> {
            rec[idx].parse::<Real>().map_err(|_| {
                parse_fail(&e.file, line, format!("bad number {:?} in column {idx}", &rec[idx]))
            })
        };
        let time = num(0)?;
        let want_time = t as Real / m.sensor_hz as Real;
        if (time - want_time).abs() > 1e-9 {
            return Err(parse_fail(
                &e.file,
                line,
                format!("time {time} strays from the {} Hz grid point {want_time}", m.sensor_hz),
            ));
        }
        for c in 0..m.sensor_dim {
            sensor.push(num(1 + c)?);
        }
        let filled = (0..m.label_dim)
            .filter(|c| !rec[1 + m.sensor_dim + c].is_empty())
            .count();
        let boundary = (t + 1) % stride == 0;
        match (boundary, filled) {
            (true, f) if f == m.label_dim => {
                for c in 0..m.label_dim {
                    label.push(num(1 + m.sensor_dim + c)?);
                }
            }
            (false, 0) => {}
            (true, _) => {
                return Err(parse_fail(&e.file, line, "chunk boundary row is missing label cells"))
            }
            (false, _) => {
                return Err(parse_fail(&e.file, line, "label cells on a non-boundary row"))
            }
        }
        t += 1;
    }
    if t != e.rows {
        return Err(Error::Parse(format!(
            "{}: expected {} rows, found {t} (truncated or padded file)",
            e.file, e.rows
        )));
    }
    Ok(Trajectory {
        id: e.id.clone(),
        sensor: Seq::from_vec(t, m.sensor_dim, sensor)?,
        label: Seq::from_vec(t / stride, m.label_dim, label)?,
        meta: TrajMeta {
            task: m.task.clone(),
            seed: e.seed,
            index: e.index,
            displacement: e.displacement.clone(),
        },
    })
}

/// Load the manifest and every trajectory it lists (in parallel, results
/// in manifest order).
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Trajectory>)> {
    let m = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let loaded = par_map(m.entries.len(), |i| load_trajectory(dir, &m, &m.entries[i]));
    let mut trajs = Vec::with_capacity(loaded.len());
    for r in loaded {
        trajs.push(r?);
    }
    Ok((m, trajs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quick_spec(kind: TaskKind, count: usize, seed: u64) -> TaskSpec {
        let mut s = TaskSpec::new(kind, count, seed);
        s.duration_s = (3.0, 8.0);
        s
    }

    #[test]
    fn default_trajectories_respect_shape_and_length_bounds() {
        let spec = TaskSpec::new(TaskKind::DriftIntegrator, 3, 7);
        let trajs = generate(&spec).unwrap();
        assert_eq!(trajs.len(), 3);
        for t in &trajs {
            assert_eq!(t.sensor.cols, 30);
            assert_eq!(t.label.cols, 2);
            assert_eq!(t.sensor.rows, t.label.rows * 10, "stride alignment");
            assert!(
                (450..=3000).contains(&t.sensor.rows),
                "length {} outside the default range",
                t.sensor.rows
            );
            assert!(t.sensor.data.iter().all(|v| v.is_finite()));
            assert!(t.label.data.iter().all(|v| v.is_finite()));
        }
        assert_eq!(trajs[0].id, "drift-integrator-0000");
        assert_ne!(trajs[0].sensor.data, trajs[1].sensor.data);
    }

    #[test]
    fn generation_is_a_pure_function_of_the_spec() {
        let spec = quick_spec(TaskKind::DriftIntegrator, 4, 11);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b, "same spec must give bit-identical datasets");
        let mut other = spec.clone();
        other.seed = 12;
        let c = generate(&other).unwrap();
        assert_ne!(a[0].sensor.data, c[0].sensor.data);
    }

    #[test]
    fn rate_labels_integrate_to_the_waypoint_displacement() {
        for kind in [TaskKind::DriftIntegrator, TaskKind::SlipRotation] {
            let spec = TaskSpec::new(kind, 5, 23);
            for t in generate(&spec).unwrap() {
                let d = t.label.cols;
                let dt_out = 1.0 / spec.output_hz as Real;
                for j in 0..d {
                    let integral: Real =
                        (0..t.label.rows).map(|i| t.label.get(i, j)).sum::<Real>() * dt_out;
                    assert!(
                        (integral - t.meta.displacement[j]).abs() < 1e-9,
                        "{}: axis {j} integrates to {integral}, waypoints telescope to {}",
                        t.id,
                        t.meta.displacement[j]
                    );
                }
            }
        }
    }

    #[test]
    fn noiseless_identity_task_copies_the_label_signal() {
        let mut spec = quick_spec(TaskKind::DriftIntegrator, 2, 5);
        spec.noise = 0.0;
        spec.drift = 0.0;
        spec.vibration = 0.0;
        spec.mixing = 0.0;
        for t in generate(&spec).unwrap() {
            for row in 0..t.sensor.rows {
                let tick = row / 10;
                for c in 0..t.sensor.cols {
                    assert_eq!(
                        t.sensor.get(row, c),
                        t.label.get(tick, c % 2),
                        "row {row} channel {c} is not a velocity copy"
                    );
                }
            }
        }
    }

    #[test]
    fn profile_pauses_hold_zero_velocity() {
        let spec = quick_spec(TaskKind::DriftIntegrator, 3, 31);
        for t in generate(&spec).unwrap() {
            let zero_rows = (0..t.label.rows)
                .filter(|&i| t.label.row(i).iter().all(|&v| v == 0.0))
                .count();
            assert!(zero_rows > 0, "{}: no pause ticks", t.id);
            assert!(zero_rows < t.label.rows, "{}: never moves", t.id);
            assert!(t.label.row(0).iter().all(|&v| v == 0.0), "starts paused");
        }
    }

    #[test]
    fn vibration_rides_only_on_motion() {
        let mut spec = quick_spec(TaskKind::DriftIntegrator, 1, 13);
        spec.noise = 0.0;
        spec.drift = 0.0;
        spec.vibration = 1.0;
        spec.mixing = 0.0;
        let t = &generate(&spec).unwrap()[0];
        let mut motion_dev: Real = 0.0;
        for row in 0..t.sensor.rows {
            let tick = row / 10;
            let moving = t.label.row(tick).iter().any(|&v| v != 0.0);
            if !moving {
                for c in 0..t.sensor.cols {
                    assert_eq!(t.sensor.get(row, c), 0.0, "carrier leaks into a pause");
                }
            } else {
                for c in 0..t.sensor.cols {
                    let clean = t.label.get(tick, c % 2);
                    motion_dev = motion_dev.max((t.sensor.get(row, c) - clean).abs());
                }
            }
        }
        assert!(motion_dev > 0.1, "carrier amplitude {motion_dev} too small to matter");
    }

    #[test]
    fn drift_walks_only_while_moving() {
        let mut spec = quick_spec(TaskKind::DriftIntegrator, 1, 17);
        spec.noise = 0.0;
        spec.drift = 1.0;
        spec.vibration = 0.0;
        spec.mixing = 0.0;
        let t = &generate(&spec).unwrap()[0];
        let mut saw_late_pause = false;
        let mut saw_motion_change = false;
        for row in 1..t.sensor.rows {
            let (tick, prev_tick) = (row / 10, (row - 1) / 10);
            let paused_now = t.label.row(tick).iter().all(|&v| v == 0.0);
            let paused_before = t.label.row(prev_tick).iter().all(|&v| v == 0.0);
            if paused_now && paused_before {
                // frozen walk: consecutive resting rows are identical
                assert_eq!(t.sensor.row(row), t.sensor.row(row - 1), "walk moved at rest");
                if t.sensor.row(row).iter().any(|&v| v != 0.0) {
                    saw_late_pause = true;
                }
            }
            if !paused_now && !paused_before && t.sensor.row(row) != t.sensor.row(row - 1) {
                saw_motion_change = true;
            }
        }
        assert!(saw_late_pause, "no pause after motion to observe the frozen walk");
        assert!(saw_motion_change, "walk never moved during motion");
    }

    #[test]
    fn joystick_labels_track_positions() {
        let spec = quick_spec(TaskKind::JoystickLike, 2, 41);
        for t in generate(&spec).unwrap() {
            assert_eq!(t.sensor.cols, 48);
            assert_eq!(t.label.cols, 3);
            // first label row sits inside the initial pause, on the start point;
            // the last one is within a sensor step of the final reached waypoint
            for j in 0..3 {
                let net = t.label.get(t.label.rows - 1, j) - t.label.get(0, j);
                assert!(
                    (net - t.meta.displacement[j]).abs() < 0.06,
                    "{}: axis {j} nets {net} vs waypoint sum {}",
                    t.id,
                    t.meta.displacement[j]
                );
            }
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(TaskKind::DriftIntegrator, 3, 53);
        let trajs = generate(&spec).unwrap();
        let manifest_path = store_dataset(dir.path(), &spec, &trajs).unwrap();
        let (m, loaded) = load_dataset(&manifest_path).unwrap();
        assert_eq!(m.task, "drift-integrator");
        assert_eq!((m.sensor_dim, m.label_dim), (30, 2));
        assert_eq!(m.spec, spec);
        assert_eq!(loaded, trajs, "numeric payloads and metadata must round trip exactly");
    }

    #[test]
    fn csv_layout_is_the_documented_one() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(TaskKind::DriftIntegrator, 1, 59);
        let trajs = generate(&spec).unwrap();
        store_dataset(dir.path(), &spec, &trajs).unwrap();
        let text =
            std::fs::read_to_string(dir.path().join("drift-integrator-0000.csv")).unwrap();
        assert!(!text.contains('\r'), "line endings must be LF");
        let lines: Vec<&str> = text.lines().collect();
        let header: Vec<&str> = lines[0].split(',').collect();
        assert_eq!(header[0], "time");
        assert_eq!(header[1], "s0");
        assert_eq!(header[30], "s29");
        assert_eq!(&header[31..], &["y0", "y1"]);
        // label cells only on every stride-th row
        for (i, line) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 33, "row {i}");
            let has_label = !fields[31].is_empty();
            assert_eq!(has_label, (i + 1) % 10 == 0, "label placement at row {i}");
            assert_eq!(fields[0].parse::<Real>().unwrap(), i as Real / 50.0);
        }
    }

    #[test]
    fn truncated_file_is_rejected_whole() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(TaskKind::DriftIntegrator, 1, 61);
        let trajs = generate(&spec).unwrap();
        let manifest_path = store_dataset(dir.path(), &spec, &trajs).unwrap();
        let csv_path = dir.path().join("drift-integrator-0000.csv");
        let bytes = std::fs::read(&csv_path).unwrap();
        std::fs::write(&csv_path, &bytes[..bytes.len() / 2]).unwrap();
        match load_dataset(&manifest_path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("drift-integrator-0000.csv"), "{msg}"),
            other => panic!("truncated file must fail to parse, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(TaskKind::DriftIntegrator, 2, 67);
        let trajs = generate(&spec).unwrap();
        let manifest_path = store_dataset(dir.path(), &spec, &trajs).unwrap();
        std::fs::remove_file(dir.path().join("drift-integrator-0001.csv")).unwrap();
        match load_dataset(&manifest_path) {
            Err(Error::Manifest(msg)) => {
                assert!(msg.contains("drift-integrator-0001.csv"), "{msg}")
            }
            other => panic!("missing file must raise a manifest error, got {other:?}"),
        }
    }

    #[test]
    fn label_cells_off_the_chunk_grid_are_rejected() {
        let write_tampered = |edit: &dyn Fn(&mut Vec<String>)| {
            let dir = tempfile::tempdir().unwrap();
            let spec = quick_spec(TaskKind::DriftIntegrator, 1, 71);
            let trajs = generate(&spec).unwrap();
            let manifest_path = store_dataset(dir.path(), &spec, &trajs).unwrap();
            let csv_path = dir.path().join("drift-integrator-0000.csv");
            let text = std::fs::read_to_string(&csv_path).unwrap();
            let mut lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
            edit(&mut lines);
            std::fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
            load_dataset(&manifest_path)
        };

        // labels where none belong (row 1 is not a chunk boundary)
        let res = write_tampered(&|lines| {
            let l = lines[2].clone();
            lines[2] = format!("{},0.5,0.5", &l[..l.len() - 2]);
        });
        match res {
            Err(Error::Parse(msg)) => assert!(msg.contains("non-boundary"), "{msg}"),
            other => panic!("misplaced labels must fail, got {other:?}"),
        }

        // boundary row with the labels blanked (row 9; line index 10)
        let res = write_tampered(&|lines| {
            let l = lines[10].clone();
            let parts: Vec<&str> = l.rsplitn(3, ',').collect();
            lines[10] = format!("{},,", parts[2]);
        });
        match res {
            Err(Error::Parse(msg)) => assert!(msg.contains("boundary"), "{msg}"),
            other => panic!("missing boundary labels must fail, got {other:?}"),
        }
    }

    #[test]
    fn split_partitions_without_leakage() {
        let (train, val) = split_indices(1000, 0.8, 3).unwrap();
        assert_eq!((train.len(), val.len()), (800, 200));
        let (train, val) = split_indices(10, 0.8, 3).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let mut union: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..10).collect::<Vec<_>>(), "union must cover everything");
        assert!(train.iter().all(|i| !val.contains(i)), "splits must be disjoint");
        assert_eq!(split_indices(10, 0.8, 3).unwrap(), (train.clone(), val));
        let mut seen_other = false;
        for seed in 4..10 {
            if split_indices(10, 0.8, seed).unwrap().0 != train {
                seen_other = true;
            }
        }
        assert!(seen_other, "assignment never varies with the seed");
        assert!(matches!(split_indices(0, 0.8, 3), Err(Error::Split(_))));
        assert!(matches!(split_indices(1, 0.8, 3), Err(Error::Split(_))));
        assert!(matches!(split_indices(10, 0.0, 3), Err(Error::Split(_))));
        assert!(matches!(split_indices(10, 1.0, 3), Err(Error::Split(_))));
    }

    #[test]
    fn split_assignment_is_stamped_into_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(TaskKind::DriftIntegrator, 5, 73);
        let trajs = generate(&spec).unwrap();
        let manifest_path = store_dataset(dir.path(), &spec, &trajs).unwrap();
        let mut m = load_manifest(&manifest_path).unwrap();
        assert!(m.entries.iter().all(|e| e.split == SplitTag::Unassigned));
        assign_split(&mut m, 0.8, 9).unwrap();
        assert_eq!(m.indices(SplitTag::Train).len(), 4);
        assert_eq!(m.indices(SplitTag::Val).len(), 1);
        assert!(m.indices(SplitTag::Unassigned).is_empty());
        write_manifest(&manifest_path, &m).unwrap();
        assert_eq!(load_manifest(&manifest_path).unwrap(), m);
    }

    #[test]
    fn retained_fraction_shrinks_deterministically() {
        let ids: Vec<usize> = (0..10).collect();
        let kept = retain_fraction(&ids, 0.3, 5).unwrap();
        assert_eq!(kept.len(), 3);
        assert!(kept.windows(2).all(|w| w[0] < w[1]), "kept set must be sorted");
        assert!(kept.iter().all(|i| ids.contains(i)));
        assert_eq!(retain_fraction(&ids, 0.3, 5).unwrap(), kept);
        assert_eq!(retain_fraction(&ids, 1.0, 5).unwrap(), ids);
        assert!(matches!(retain_fraction(&ids, 0.0, 5), Err(Error::Split(_))));
        assert!(matches!(retain_fraction(&[], 0.5, 5), Err(Error::Split(_))));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = TaskSpec::new(TaskKind::DriftIntegrator, 0, 1);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        s.count = 1;
        s.duration_s = (5.0, 3.0);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        s.duration_s = (3.0, 5.0);
        s.mixing = 1.5;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        s.mixing = 1.0;
        s.output_hz = 7;
        assert!(matches!(s.validate(), Err(Error::Rate(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 8, .. ProptestConfig::default() })]
        #[test]
        fn alignment_holds_for_random_specs(
            seed in 0u64..1000,
            kind_pick in 0usize..3,
            dur_lo in 2.0f64..6.0,
            extra in 0.5f64..10.0,
        ) {
            let kind = [TaskKind::DriftIntegrator, TaskKind::SlipRotation, TaskKind::JoystickLike][kind_pick];
            let mut spec = TaskSpec::new(kind, 2, seed);
            spec.duration_s = (dur_lo, dur_lo + extra);
            let f_o = spec.output_hz as Real;
            let min_ticks = ((dur_lo * f_o - 1e-9).ceil() as usize).max(1);
            let max_ticks = (((dur_lo + extra) * f_o + 1e-9).floor() as usize).max(min_ticks);
            for t in generate(&spec).unwrap() {
                prop_assert_eq!(t.sensor.rows, t.label.rows * 10);
                prop_assert!((min_ticks..=max_ticks).contains(&t.label.rows));
                prop_assert!(t.sensor.data.iter().all(|v| v.is_finite()));
            }
        }
    }
}
