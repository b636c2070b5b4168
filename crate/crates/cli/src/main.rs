//! `hiss`: the batch front end for everything in the toolkit. Dataset
//! generation, training, evaluation, scaling benchmarks, ablation
//! sweeps, and checkpoint inspection all run from here; there is no
//! interactive mode.
//!
//! Every failure exits nonzero with a single stderr line of the form
//! `error[category]: message`, so scripts can branch on the category
//! without parsing prose. Exit codes group the categories: 2 for bad
//! configuration, 3 for missing or malformed files, 4 for numeric
//! failures, 1 for the rest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hiss_core::data::{self, SplitTag, TaskKind, TaskSpec};
use hiss_core::evalbench::{
    ablate_chunk, ablate_filter, ablate_fraction, describe_model, evaluate, scaling_bench,
    svg_line_chart, AblationOutcome, BenchKind, BenchSettings, Series,
};
use hiss_core::train::{self, EpochStats, TrainConfig};
use hiss_core::{Error, Real, Result};

// ------------------------------------------------------------ config --

/// One experiment in one file: the training setup, an optional task
/// block that generates the dataset in place when its manifest is
/// missing, a default artifact directory, and grid lists for `ablate`.
/// Unknown keys anywhere in the tree are rejected before any work runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepGrid>,
}

/// Grid lists for ablation sweeps; each kind reads only the lists it
/// needs. `seeds` defaults to the training seed when left empty.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepGrid {
    #[serde(default)]
    ks: Vec<usize>,
    #[serde(default)]
    orders: Vec<usize>,
    #[serde(default)]
    cutoffs_hz: Vec<Real>,
    #[serde(default)]
    fractions: Vec<Real>,
    #[serde(default)]
    seeds: Vec<u64>,
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.train.validate()?;
    if let Some(task) = &cfg.task {
        task.validate()?;
    }
    Ok(cfg)
}

/// `--out` wins; the config's `out` is the fallback.
fn resolve_out(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.clone()).ok_or_else(|| {
        Error::Config("no output directory: pass --out or set \"out\" in the config".into())
    })
}

/// Dataset references may name either the manifest file or its
/// directory; normalize to the manifest path.
fn manifest_location(p: &Path) -> PathBuf {
    if p.extension().map_or(false, |e| e == "json") {
        p.to_owned()
    } else {
        p.join("manifest.json")
    }
}

/// Normalize the dataset path and, when the manifest is missing but the
/// config carries a task block, generate the dataset in place first.
fn ensure_dataset(cfg: &mut RunConfig) -> Result<()> {
    cfg.train.dataset = manifest_location(&cfg.train.dataset);
    if cfg.train.dataset.exists() {
        return Ok(());
    }
    let Some(spec) = &cfg.task else {
        return Err(Error::Io(format!(
            "dataset manifest {} not found and the config has no \"task\" block to generate it",
            cfg.train.dataset.display()
        )));
    };
    let dir = match cfg.train.dataset.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    let trajs = data::generate(spec)?;
    let manifest_path = data::store_dataset(&dir, spec, &trajs)?;
    println!("generated {} trajectories under {}", trajs.len(), dir.display());
    cfg.train.dataset = manifest_path;
    Ok(())
}

// --------------------------------------------------------- artifacts --

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::Io(format!("cannot move {} into place: {e}", path.display())))?;
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))
}

/// The frozen, fully resolved config a run was executed with; feeding
/// it back through `--config` reproduces the run bit for bit.
fn freeze_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    let json = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    write_atomic(&out.join("config.json"), format!("{json}\n").as_bytes())
}

/// Every run directory gets a `run.json` naming the command and its
/// artifacts, written last so its presence marks a completed run.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    artifacts: Vec<String>,
}

fn write_run_manifest(out: &Path, command: &str, artifacts: &[&str]) -> Result<()> {
    let m = RunManifest {
        command,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&m)
        .map_err(|e| Error::Io(format!("cannot serialize run manifest: {e}")))?;
    write_atomic(&out.join("run.json"), format!("{json}\n").as_bytes())
}

fn loss_curve_svg(history: &[EpochStats]) -> Result<String> {
    let series = vec![
        Series {
            name: "train".into(),
            points: history.iter().map(|e| (e.epoch as Real, e.train_mse)).collect(),
        },
        Series {
            name: "val".into(),
            points: history.iter().map(|e| (e.epoch as Real, e.val_mse)).collect(),
        },
    ];
    let log_y = history.iter().all(|e| e.train_mse > 0.0 && e.val_mse > 0.0);
    svg_line_chart("training and validation loss", "epoch", "mse", &series, false, log_y)
}

// ----------------------------------------------------------- parsing --

/// Length grids come either as an explicit comma list (`256,512,1024`)
/// or as a doubling range `LO..HI` where HI must be LO times a power of
/// two, e.g. `256..16384`.
fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    let parse_one = |t: &str| -> Result<usize> {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad length {:?}", t.trim())))
    };
    if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (parse_one(lo)?, parse_one(hi)?);
        if lo == 0 || hi < lo {
            return Err(Error::Config(format!(
                "length range needs 0 < LO <= HI, got {lo}..{hi}"
            )));
        }
        let mut lengths = Vec::new();
        let mut n = lo;
        while n < hi {
            lengths.push(n);
            n = n
                .checked_mul(2)
                .ok_or_else(|| Error::Config("length range overflows".into()))?;
        }
        if n != hi {
            return Err(Error::Config(format!(
                "range end {hi} is not {lo} doubled a whole number of times"
            )));
        }
        lengths.push(hi);
        Ok(lengths)
    } else {
        s.split(',').map(parse_one).collect()
    }
}

// ---------------------------------------------------------- commands --

#[derive(Parser)]
#[command(
    name = "hiss",
    version,
    about = "Sequence modeling workbench: synthetic datasets, state-space and attention models, hierarchical composition, benchmarks, and ablations.",
    after_help = "Set HISS_SEQ_THREADS to cap the number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset: trajectory CSVs plus a manifest.
    Gen(GenArgs),
    /// Train a model from a JSON run config and save a checkpoint.
    Train(TrainArgs),
    /// Report checkpoint MSE on a dataset split.
    Eval(EvalArgs),
    /// Measure wall-clock scaling of a model kind over sequence lengths.
    Bench(BenchArgs),
    /// Run a resumable ablation sweep driven by a run config.
    Ablate(AblateArgs),
    /// Print a checkpoint's parameter table and training summary.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    DriftIntegrator,
    SlipRotation,
    JoystickLike,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::DriftIntegrator => TaskKind::DriftIntegrator,
            TaskArg::SlipRotation => TaskKind::SlipRotation,
            TaskArg::JoystickLike => TaskKind::JoystickLike,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    task: TaskArg,
    /// number of trajectories
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// trajectory duration range in seconds
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    duration: Option<Vec<Real>>,
    /// white sensor noise level
    #[arg(long)]
    noise: Option<Real>,
    /// scale of the random-walk drift
    #[arg(long)]
    drift: Option<Real>,
    /// amplitude of the high-frequency carrier
    #[arg(long)]
    vibration: Option<Real>,
    /// 0 copies labels into the sensor channels, 1 is the full nonlinear map
    #[arg(long)]
    mixing: Option<Real>,
    #[arg(long)]
    sensor_hz: Option<u32>,
    #[arg(long)]
    output_hz: Option<u32>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config
    #[arg(long)]
    config: PathBuf,
    /// artifact directory; overrides the config's `out`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    /// checkpoint directory (or a run directory containing one); repeat
    /// for a multi-seed report
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    split: SplitArg,
    /// also write the report as eval.json under this directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// s4 | mamba | lstm | attn | hiss-s4 | hiss-attn
    #[arg(long)]
    model: String,
    /// comma list or doubling range, e.g. 256..16384
    #[arg(long)]
    lengths: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    state_dim: usize,
    /// chunk size for the hiss kinds
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// sensor samples per output tick for the hiss kinds
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// repetitions per length before spread-driven doubling
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateKindArg {
    Chunk,
    Filter,
    Fraction,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    kind: AblateKindArg,
    /// JSON run config with a `sweep` block
    #[arg(long)]
    config: PathBuf,
    /// artifact directory; overrides the config's `out`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// checkpoint directory (or a run directory containing one)
    #[arg(long)]
    ckpt: PathBuf,
}

// ------------------------------------------------------------ run --

fn run_gen(a: GenArgs) -> Result<()> {
    let mut spec = TaskSpec::new(a.task.into(), a.n, a.seed);
    if let Some(d) = &a.duration {
        spec.duration_s = (d[0], d[1]);
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.drift {
        spec.drift = v;
    }
    if let Some(v) = a.vibration {
        spec.vibration = v;
    }
    if let Some(v) = a.mixing {
        spec.mixing = v;
    }
    if let Some(v) = a.sensor_hz {
        spec.sensor_hz = v;
    }
    if let Some(v) = a.output_hz {
        spec.output_hz = v;
    }
    spec.validate()?;
    let trajs = data::generate(&spec)?;
    let manifest_path = data::store_dataset(&a.out, &spec, &trajs)?;
    println!("wrote {} trajectories under {}", trajs.len(), a.out.display());
    println!("manifest {}", manifest_path.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(&a.config)?;
    let out = resolve_out(a.out, &cfg)?;
    cfg.out = Some(out.clone());
    create_out_dir(&out)?;
    ensure_dataset(&mut cfg)?;
    freeze_config(&out, &cfg)?;

    let (manifest, trajs) = data::load_dataset(&cfg.train.dataset)?;
    let ckpt_dir = out.join("checkpoint");
    let fit = train::fit_dataset(&cfg.train, &manifest, &trajs, Some(&ckpt_dir))?;
    for e in &fit.checkpoint.history {
        println!("epoch {} train mse {} val mse {}", e.epoch, e.train_mse, e.val_mse);
    }
    println!(
        "best epoch {} val mse {}",
        fit.checkpoint.epoch,
        fit.checkpoint.best_val_mse()
    );

    let svg = loss_curve_svg(&fit.checkpoint.history)?;
    write_atomic(&out.join("loss_curve.svg"), svg.as_bytes())?;
    write_run_manifest(&out, "train", &["config.json", "checkpoint", "loss_curve.svg"])?;
    println!("checkpoint {}", ckpt_dir.display());
    Ok(())
}

/// Accept either a checkpoint directory or a run directory that holds
/// one under `checkpoint/`.
fn ckpt_dir(p: &Path) -> Result<PathBuf> {
    if p.join("index.json").exists() {
        return Ok(p.to_owned());
    }
    let nested = p.join("checkpoint");
    if nested.join("index.json").exists() {
        return Ok(nested);
    }
    Err(Error::Io(format!("no checkpoint found at {}", p.display())))
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let split = match a.split {
        SplitArg::Train => SplitTag::Train,
        SplitArg::Val => SplitTag::Val,
    };
    let mut ckpts = Vec::with_capacity(a.ckpts.len());
    for p in &a.ckpts {
        ckpts.push(train::load_checkpoint(&ckpt_dir(p)?)?);
    }
    let dataset = ckpts[0].config.dataset.clone();
    if ckpts.iter().any(|c| c.config.dataset != dataset) {
        return Err(Error::Config(
            "checkpoints reference different datasets; evaluate them separately".into(),
        ));
    }
    let (manifest, trajs) = data::load_dataset(&dataset)?;
    let report = evaluate(&ckpts, &manifest, &trajs, split)?;
    for s in &report.per_seed {
        println!("seed {} {} mse {}", s.seed, report.split, s.mse);
    }
    println!(
        "{} mse mean {} std {} over {} checkpoint(s)",
        report.split,
        report.mse_mean,
        report.mse_std,
        report.per_seed.len()
    );
    if let Some(out) = &a.out {
        create_out_dir(out)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Io(format!("cannot serialize report: {e}")))?;
        write_atomic(&out.join("eval.json"), format!("{json}\n").as_bytes())?;
        write_run_manifest(out, "eval", &["eval.json"])?;
        println!("report {}", out.join("eval.json").display());
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let kind = BenchKind::parse(&a.model)?;
    let lengths = parse_lengths(&a.lengths)?;
    let settings = BenchSettings {
        width: a.width,
        state_dim: a.state_dim,
        k: a.k,
        stride: a.stride,
        reps: a.reps,
        seed: a.seed,
    };
    let report = scaling_bench(kind, &lengths, &settings)?;

    create_out_dir(&a.out)?;
    let stem = format!("{}_scaling", kind.as_str());
    let mut csv = String::from("len,median_s,spread,reps,floats\n");
    for p in &report.points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.len, p.median_s, p.spread, p.reps, p.floats
        ));
    }
    write_atomic(&a.out.join(format!("{stem}.csv")), csv.as_bytes())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Io(format!("cannot serialize report: {e}")))?;
    write_atomic(&a.out.join(format!("{stem}.json")), format!("{json}\n").as_bytes())?;
    let series = vec![Series {
        name: kind.as_str().to_string(),
        points: report
            .points
            .iter()
            .map(|p| (p.len as Real, p.median_s))
            .collect(),
    }];
    let svg = svg_line_chart(
        "forward wall time",
        "sequence length",
        "median seconds",
        &series,
        true,
        true,
    )?;
    write_atomic(&a.out.join(format!("{stem}.svg")), svg.as_bytes())?;
    write_run_manifest(
        &a.out,
        "bench",
        &[&format!("{stem}.csv"), &format!("{stem}.json"), &format!("{stem}.svg")],
    )?;

    for p in &report.points {
        println!(
            "len {} median_s {} spread {} reps {} floats {}",
            p.len, p.median_s, p.spread, p.reps, p.floats
        );
    }
    println!(
        "slope {} ci {} cost slope {}",
        report.slope, report.slope_ci, report.cost_slope
    );
    println!("artifacts under {}", a.out.display());
    Ok(())
}

fn print_cells(out: &AblationOutcome, header: &str) {
    let cols: Vec<&str> = header.split(',').collect();
    let setting_cols = cols[..cols.len() - 2].join(",");
    for c in &out.cells {
        println!(
            "{} {} seed {} val mse {}",
            setting_cols, c.setting, c.seed, c.val_mse
        );
    }
    println!("{} new cell(s); results {}", out.ran, out.csv_path.display());
}

fn run_ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_run_config(&a.config)?;
    let out = resolve_out(a.out, &cfg)?;
    cfg.out = Some(out.clone());
    create_out_dir(&out)?;
    ensure_dataset(&mut cfg)?;
    freeze_config(&out, &cfg)?;

    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("ablate needs a \"sweep\" block in the config".into()))?;
    let seeds = if sweep.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        sweep.seeds.clone()
    };
    let (manifest, trajs) = data::load_dataset(&cfg.train.dataset)?;
    match a.kind {
        AblateKindArg::Chunk => {
            if sweep.ks.is_empty() {
                return Err(Error::Config("chunk ablation needs sweep.ks".into()));
            }
            let outcome = ablate_chunk(&cfg.train, &sweep.ks, &seeds, &manifest, &trajs, &out)?;
            print_cells(&outcome, "k,seed,val_mse");
        }
        AblateKindArg::Filter => {
            if sweep.orders.is_empty() || sweep.cutoffs_hz.is_empty() {
                return Err(Error::Config(
                    "filter ablation needs sweep.orders and sweep.cutoffs_hz".into(),
                ));
            }
            let (outcome, best) = ablate_filter(
                &cfg.train,
                &sweep.orders,
                &sweep.cutoffs_hz,
                &seeds,
                &manifest,
                &trajs,
                &out,
            )?;
            print_cells(&outcome, "order,cutoff_hz,seed,val_mse");
            for b in &best {
                println!(
                    "order {} best cutoff {} hz median val mse {}",
                    b.order, b.cutoff_hz, b.median_val_mse
                );
            }
        }
        AblateKindArg::Fraction => {
            if sweep.fractions.is_empty() {
                return Err(Error::Config("fraction ablation needs sweep.fractions".into()));
            }
            let outcome =
                ablate_fraction(&cfg.train, &sweep.fractions, &seeds, &manifest, &trajs, &out)?;
            print_cells(&outcome, "fraction,seed,val_mse");
        }
    }
    write_run_manifest(&out, "ablate", &["config.json"])?;
    Ok(())
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let ckpt = train::load_checkpoint(&ckpt_dir(&a.ckpt)?)?;
    println!("model {}", describe_model(&ckpt.config.model));
    println!("dataset {}", ckpt.config.dataset.display());
    let mut total = 0usize;
    for (name, p) in &ckpt.params {
        let shape = p
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        println!("param {name} {shape} {}", p.numel());
        total += p.numel();
    }
    println!("parameters {total}");
    println!("epochs run {}", ckpt.history.len());
    println!("best epoch {} val mse {}", ckpt.epoch, ckpt.best_val_mse());
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => run_gen(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Ablate(a) => run_ablate(a),
        Cmd::Inspect(a) => run_inspect(a),
    }
}

/// One stderr line per failure. The display string already leads with
/// the category ("config error: ..."), so strip that and re-tag it in
/// the bracket form scripts match on.
fn fail_line(e: &Error) -> String {
    let s = e.to_string().replace('\n', " ");
    let msg = match s.split_once(": ") {
        Some((head, rest)) if head.ends_with("error") => rest.to_string(),
        _ => s,
    };
    format!("error[{}]: {}", e.category(), msg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let first = e
                    .to_string()
                    .lines()
                    .find(|l| !l.trim().is_empty())
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ")
                    .to_string();
                eprintln!("error[config]: {first}");
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", fail_line(&e));
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_grids_parse_both_forms() {
        assert_eq!(parse_lengths("256..2048").unwrap(), vec![256, 512, 1024, 2048]);
        assert_eq!(parse_lengths("64..64").unwrap(), vec![64]);
        assert_eq!(parse_lengths("16, 32,64").unwrap(), vec![16, 32, 64]);
        assert!(parse_lengths("100..300").is_err(), "300 is not 100 doubled");
        assert!(parse_lengths("0..128").is_err());
        assert!(parse_lengths("128..64").is_err());
        assert!(parse_lengths("a,b").is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys_and_fills_defaults() {
        let good = r#"{
            "train": {
                "dataset": "ds",
                "model": {"flat": {"kind": "dssm", "depth": 1, "width": 8}}
            },
            "sweep": {"ks": [1, 10]}
        }"#;
        let cfg: RunConfig = serde_json::from_str(good).unwrap();
        assert_eq!(cfg.train.epochs, 100);
        assert!(cfg.task.is_none());
        assert_eq!(cfg.sweep.unwrap().ks, vec![1, 10]);

        let top = r#"{"train": {"dataset": "d", "model": {"flat": {"kind": "dssm", "depth": 1, "width": 8}}}, "uot": "x"}"#;
        assert!(serde_json::from_str::<RunConfig>(top).is_err());
        let nested = r#"{"train": {"dataset": "d", "model": {"flat": {"kind": "dssm", "depth": 1, "width": 8}}}, "sweep": {"kz": [1]}}"#;
        assert!(serde_json::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn failure_lines_carry_the_category_tag() {
        let line = fail_line(&Error::Config("bad\nthing".into()));
        assert_eq!(line, "error[config]: bad thing");
        assert_eq!(
            fail_line(&Error::Io("missing file".into())),
            "error[io]: missing file"
        );
    }

    #[test]
    fn dataset_paths_normalize_to_the_manifest() {
        assert_eq!(
            manifest_location(Path::new("runs/ds")),
            PathBuf::from("runs/ds/manifest.json")
        );
        assert_eq!(
            manifest_location(Path::new("runs/ds/manifest.json")),
            PathBuf::from("runs/ds/manifest.json")
        );
    }
}
