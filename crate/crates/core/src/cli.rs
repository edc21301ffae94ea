//! The `totr` command-line driver.
//!
//! Every subcommand writes its artifacts and a `manifest_<command>.json`
//! into `--out`. Failures print one line `error[<kind>]: <message>` to
//! stderr and exit with 1 (usage), 2 (data) or 3 (numeric).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cycle::{self, CycleDetection, ReferenceCycle, DEFAULT_CUTOFF};
use crate::error::{invalid, Error, ErrorKind, Result};
use crate::eval::io::{csv_io, ingest_csv, load_json, load_skeleton, save_json, save_skeleton, write_csv};
use crate::eval::manifest::RunManifest;
use crate::eval::metrics::to_skeleton_order;
use crate::eval::report::{
    angle_band_rows, coordinate_band_rows, horizon_see, plot_rows, prediction_rows, read_rows, summary_rows,
    summary_table, write_rows, CoordinateBandRow, CycleRow, PredictionRow, SeeRow,
};
use crate::eval::synth::{generate_motion, SynthConfig};
use crate::kinematics::{fix_segment_lengths, to_joint_angles, Skeleton};
use crate::motion::MotionSequence;
use crate::predictor::{
    build_collection, run_online, CoefficientCollection, PipelineConfig, PredictionBatch, RootPolicy,
};
use crate::regression::RegressionConfig;
use crate::stats;
use crate::uncertainty::{predictive_variation, DEFAULT_SAMPLES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "totr", version, about = "Tensor-on-tensor regression for repetitive motion prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic repetitive recording
    Synth(SynthArgs),
    /// Segment a recording into cycles and average them into a reference
    Prep(PrepArgs),
    /// Fit the coefficient collection along a reference
    Build(BuildArgs),
    /// Stream a recording through a collection and score the predictions
    Predict(PredictArgs),
    /// Predictive-variation bands of every model
    Uncertainty(UncertaintyArgs),
    /// Summaries and plot-ready tables from a SEE series
    Report(ReportArgs),
    /// Build collections over a hyperparameter grid
    Sweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Full configuration as JSON, or TOML when the extension is .toml
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Base cycle length in frames
    #[arg(long)]
    pub period: Option<usize>,
    /// Period jitter fraction
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub noise_cm: Option<f64>,
    /// Per-frame segment length jitter fraction
    #[arg(long)]
    pub length_jitter: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Skeleton TOML; the built-in upper body when omitted
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Segmentation signal as <segment>:<axis> with axis x, y or z; the
    /// angle channel of largest variance when omitted
    #[arg(long)]
    pub channel: Option<String>,
    /// Fraction of the spectrum kept by the smoothing filter
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 1)]
    pub peaks_per_cycle: usize,
    #[arg(long)]
    pub threshold_std: Option<f64>,
    #[arg(long)]
    pub min_distance: Option<usize>,
    /// Detected cycles averaged into the reference, comma separated; all
    /// when omitted
    #[arg(long, value_delimiter = ',')]
    pub use_cycles: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RootArg {
    Hold,
    Linear,
}

/// Model settings shared by `build` and `sweep`; unset values take the
/// library defaults.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Tensor rank R
    #[arg(long)]
    pub rank: Option<usize>,
    /// Ridge penalty lambda
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Frames between models (m)
    #[arg(long)]
    pub model_stride: Option<usize>,
    /// Frames between online updates (u)
    #[arg(long)]
    pub update_stride: Option<usize>,
    /// Past window in seconds (l)
    #[arg(long)]
    pub past: Option<f64>,
    /// Horizon in seconds (k)
    #[arg(long)]
    pub future: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub root_policy: Option<RootArg>,
}

impl ModelArgs {
    fn config(&self, frame_rate: f64) -> PipelineConfig {
        let d = PipelineConfig::default();
        let r = RegressionConfig::default();
        PipelineConfig {
            past_seconds: self.past.unwrap_or(d.past_seconds),
            future_seconds: self.future.unwrap_or(d.future_seconds),
            model_stride_frames: self.model_stride.unwrap_or(d.model_stride_frames),
            update_stride_frames: self.update_stride.unwrap_or(d.update_stride_frames),
            regression: RegressionConfig {
                rank: self.rank.unwrap_or(r.rank),
                penalty: self.penalty.unwrap_or(r.penalty),
                max_sweeps: self.max_sweeps.unwrap_or(r.max_sweeps),
                tolerance: self.tolerance.unwrap_or(r.tolerance),
                seed: self.seed.unwrap_or(r.seed),
                ..r
            },
            frame_rate,
            root_policy: match self.root_policy {
                Some(RootArg::Linear) => RootPolicy::LinearExtrapolation,
                Some(RootArg::Hold) => RootPolicy::Hold,
                None => d.root_policy,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Which recording frames are streamed.
#[derive(Debug, Clone, Args, Serialize)]
pub struct StreamArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub skeleton: PathBuf,
    /// First streamed frame
    #[arg(long, default_value_t = 0)]
    pub from: usize,
    /// End of the streamed frames (exclusive); the whole recording when
    /// omitted
    #[arg(long)]
    pub to: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub collection: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[command(flatten)]
    pub stream: StreamArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Report horizon in seconds; repeat for several reports
    #[arg(long = "horizon", default_values_t = [0.5, 1.0])]
    pub horizons: Vec<f64>,
    /// Cycle table from `prep`, used to tag targets with cycle indices
    #[arg(long)]
    pub cycles: Option<PathBuf>,
    /// Treat the input as a live stream without future truth
    #[arg(long)]
    pub no_truth: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub collection: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub skeleton: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiplier on the reference's per-timestep standard deviation
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// SEE series written by `predict`
    #[arg(long)]
    pub see: PathBuf,
    /// Prediction table written by `predict`
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Coordinate bands written by `uncertainty`
    #[arg(long)]
    pub bands: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPreset {
    /// R from 11 to 15 at lambda 50
    Rank,
    /// lambda over 0.1 to 100 at R 13
    Penalty,
    /// Both grids
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepPreset::Full)]
    pub preset: SweepPreset,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parallel builds; the number of available cores when omitted
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Recording streamed through every collection for scoring
    #[arg(long, requires = "eval_skeleton")]
    pub eval_input: Option<PathBuf>,
    #[arg(long)]
    pub eval_skeleton: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub eval_from: usize,
    /// Scored horizon in seconds; the full future window when omitted
    #[arg(long)]
    pub eval_horizon: Option<f64>,
}

/// Rank grid at the default penalty.
pub const SWEEP_RANKS: [usize; 5] = [11, 12, 13, 14, 15];
/// Penalty grid at the default rank.
pub const SWEEP_PENALTIES: [f64; 9] = [0.1, 0.6, 1.0, 5.0, 10.0, 15.0, 25.0, 50.0, 100.0];

/// `(rank, penalty)` grid points of a preset, without repeats.
pub fn sweep_grid(preset: SweepPreset) -> Vec<(usize, f64)> {
    let mut grid = Vec::new();
    if matches!(preset, SweepPreset::Rank | SweepPreset::Full) {
        grid.extend(SWEEP_RANKS.iter().map(|&r| (r, 50.0)));
    }
    if matches!(preset, SweepPreset::Penalty | SweepPreset::Full) {
        for &p in &SWEEP_PENALTIES {
            if !grid.contains(&(13, p)) {
                grid.push((13, p));
            }
        }
    }
    grid
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numeric => EXIT_NUMERIC,
    }
}

fn kind_label(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

/// `error[<kind>]: <message>` on one line.
pub fn error_line(kind: ErrorKind, message: &str) -> String {
    let flat: Vec<&str> = message.split_whitespace().collect();
    format!("error[{}]: {}", kind_label(kind), flat.join(" "))
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    let text = e.to_string();
                    let first = text.lines().next().unwrap_or_default();
                    eprintln!("{}", error_line(ErrorKind::Usage, first.trim_start_matches("error: ")));
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            exit_code(e.kind())
        }
    }
}

/// Runs one command and returns a one-line summary of what it wrote.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Prep(a) => prep(a),
        Command::Build(a) => build(a),
        Command::Predict(a) => predict(a),
        Command::Uncertainty(a) => uncertainty(a),
        Command::Report(a) => report(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn out_dir(path: &Path) -> Result<&Path> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))
}

fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("manifest_{command}.json"))
}

fn finish(mut manifest: RunManifest, out: &Path, outputs: &[PathBuf]) -> Result<String> {
    for p in outputs {
        manifest.output(p)?;
    }
    let path = manifest_path(out, &manifest.command);
    manifest.save(&path)?;
    Ok(format!("{}: wrote {} files to {}", manifest.command, outputs.len() + 1, out.display()))
}

fn load_config_file(path: &Path) -> Result<SynthConfig> {
    if path.extension().is_some_and(|e| e == "toml") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    } else {
        load_json(path)
    }
}

fn synth(a: &SynthArgs) -> Result<String> {
    let mut cfg = match &a.config {
        Some(p) => load_config_file(p)?,
        None => SynthConfig::default(),
    };
    if let Some(p) = &a.skeleton {
        cfg.skeleton = load_skeleton(p)?.specs();
    }
    cfg.cycle_count = a.cycles.unwrap_or(cfg.cycle_count);
    cfg.base_period_frames = a.period.unwrap_or(cfg.base_period_frames);
    cfg.period_jitter_fraction = a.jitter.unwrap_or(cfg.period_jitter_fraction);
    cfg.noise_std_cm = a.noise_cm.unwrap_or(cfg.noise_std_cm);
    cfg.length_jitter_fraction = a.length_jitter.unwrap_or(cfg.length_jitter_fraction);
    cfg.frame_rate = a.rate.unwrap_or(cfg.frame_rate);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let motion = generate_motion(&cfg)?;

    let out = out_dir(&a.out)?;
    let mut manifest = RunManifest::new("synth", to_json(&cfg)?, vec![cfg.seed]);
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    let files = [
        out.join("motion.csv"),
        out.join("boundaries.csv"),
        out.join("skeleton.toml"),
        out.join("synth_config.json"),
    ];
    write_csv(&files[0], &motion.sequence)?;
    let cycles: Vec<CycleRow> = motion
        .boundaries
        .windows(2)
        .enumerate()
        .map(|(i, w)| CycleRow { cycle: i, start: w[0], end: w[1] })
        .collect();
    write_rows(&files[1], &cycles)?;
    save_skeleton(&files[2], &Skeleton::new(cfg.skeleton.clone())?)?;
    save_json(&files[3], &cfg)?;
    finish(manifest, out, &files)
}

fn skeleton_or_default(path: Option<&PathBuf>) -> Result<Skeleton> {
    path.map_or_else(|| Ok(Skeleton::upper_body()), load_skeleton)
}

/// `<segment>:<axis>` to a segment index and axis.
pub fn parse_channel(spec: &str, segments: &[String]) -> Result<(usize, usize)> {
    let (name, axis) =
        spec.rsplit_once(':').ok_or_else(|| invalid!("channel {spec:?} is not <segment>:<axis>"))?;
    let seg = segments
        .iter()
        .position(|s| s == name)
        .ok_or_else(|| invalid!("unknown segment {name:?}; segments are {segments:?}"))?;
    let axis = match axis {
        "x" | "0" => 0,
        "y" | "1" => 1,
        "z" | "2" => 2,
        other => return Err(invalid!("axis {other:?} is not x, y or z")),
    };
    Ok((seg, axis))
}

fn widest_channel(angles: &MotionSequence) -> (usize, usize) {
    let mut best = (0, 0, -1.0);
    for s in 0..angles.joint_count() {
        for a in 0..3 {
            let sd = stats::population_std(&angles.channel(s, a));
            if sd > best.2 {
                best = (s, a, sd);
            }
        }
    }
    (best.0, best.1)
}

fn prep(a: &PrepArgs) -> Result<String> {
    let skel = skeleton_or_default(a.skeleton.as_ref())?;
    let seq = ingest_csv(&a.input)?;
    let angles = to_joint_angles(&seq, &skel)?.angles;
    let (seg, axis) = match &a.channel {
        Some(spec) => parse_channel(spec, angles.joints())?,
        None => widest_channel(&angles),
    };
    let smoothed = cycle::smooth_signal(&angles.channel(seg, axis), a.cutoff)?;
    let mut detection = CycleDetection::new(a.peaks_per_cycle);
    if let Some(t) = a.threshold_std {
        detection.threshold_std = t;
    }
    detection.min_distance = a.min_distance;
    let cycles = cycle::detect_cycles(&smoothed, &detection)?;
    let used: Vec<usize> =
        if a.use_cycles.is_empty() { (0..cycles.len()).collect() } else { a.use_cycles.clone() };
    if let Some(&bad) = used.iter().find(|&&c| c >= cycles.len()) {
        return Err(invalid!("cycle {bad} requested, {} detected", cycles.len()));
    }
    let ranges: Vec<_> = used.iter().map(|&c| cycles[c].clone()).collect();
    let parts = ranges.iter().map(|r| angles.slice(r.clone())).collect::<Result<Vec<_>>>()?;
    let reference = cycle::build_reference(&parts, cycle::median_length(&ranges))?;
    let fixed = fix_segment_lengths(&seq, &skel)?;

    let out = out_dir(&a.out)?;
    let mut config = to_json(a)?;
    config["channel_used"] = format!("{}:{}", angles.joints()[seg], ["x", "y", "z"][axis]).into();
    config["cycles_used"] = to_json(&used)?;
    let mut manifest = RunManifest::new("prep", config, vec![]);
    manifest.input(&a.input)?;
    if let Some(p) = &a.skeleton {
        manifest.input(p)?;
    }
    let files = [
        out.join("reference.json"),
        out.join("reference_std.csv"),
        out.join("skeleton.toml"),
        out.join("cycles.csv"),
    ];
    save_json(&files[0], &reference)?;
    write_std(&files[1], &reference)?;
    save_skeleton(&files[2], &fixed)?;
    let rows: Vec<CycleRow> =
        cycles.iter().enumerate().map(|(i, r)| CycleRow { cycle: i, start: r.start, end: r.end }).collect();
    write_rows(&files[3], &rows)?;
    finish(manifest, out, &files)
}

fn write_std(path: &Path, reference: &ReferenceCycle) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["frame".to_string()];
    for j in reference.angles.joints() {
        header.extend(["x", "y", "z"].iter().map(|a| format!("{j}_{a}")));
    }
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    let c = reference.angles.channels();
    for (t, chunk) in reference.per_timestep_std.chunks(c).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(chunk.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn build(a: &BuildArgs) -> Result<String> {
    let reference: ReferenceCycle = load_json(&a.reference)?;
    let cfg = a.model.config(reference.angles.frame_rate());
    cfg.validate()?;
    let extended = cycle::extend_reference(&reference, cfg.past_frames())?;
    let coll = build_collection(&extended, &cfg)?;
    let out = out_dir(&a.out)?;
    let mut manifest = RunManifest::new("build", to_json(&cfg)?, vec![cfg.regression.seed]);
    manifest.input(&a.reference)?;
    let file = out.join("collection.bin");
    coll.save(&file)?;
    finish(manifest, out, &[file])
}

/// The recording in skeleton joint order.
fn load_stream(s: &StreamArgs) -> Result<(Skeleton, MotionSequence)> {
    let skel = load_skeleton(&s.skeleton)?;
    let seq = to_skeleton_order(&ingest_csv(&s.input)?, &skel)?;
    let end = s.to.unwrap_or(seq.frames());
    if s.from >= end || end > seq.frames() {
        return Err(invalid!(
            "stream range {}..{end} outside the recording's {} frames",
            s.from,
            seq.frames()
        ));
    }
    Ok((skel, seq))
}

fn stream_batches(
    s: &StreamArgs,
    seq: &MotionSequence,
    skel: &Skeleton,
    coll: &CoefficientCollection,
    extended: &MotionSequence,
) -> Result<Vec<PredictionBatch>> {
    let end = s.to.unwrap_or(seq.frames());
    run_online((s.from..end).map(|t| (t as u64, seq.frame(t))), coll, extended, skel)
}

fn horizon_frame(seconds: f64, cfg: &PipelineConfig) -> Result<usize> {
    let h = (seconds * cfg.frame_rate).round();
    let kf = cfg.future_frames();
    if !(h >= 1.0 && h <= kf as f64) {
        return Err(invalid!("horizon {seconds} s is frame {h}, outside the model horizon 1..={kf}"));
    }
    Ok(h as usize)
}

fn horizon_label(seconds: f64) -> String {
    format!("{}ms", (seconds * 1000.0).round() as i64)
}

fn tag_cycles(rows: &mut [SeeRow], cycles: &[CycleRow]) {
    for r in rows {
        let t = r.target_frame as usize;
        r.cycle = cycles.iter().find(|c| c.start <= t && t < c.end).map(|c| c.cycle);
    }
}

fn predict(a: &PredictArgs) -> Result<String> {
    let coll = CoefficientCollection::load(&a.collection)?;
    let reference: ReferenceCycle = load_json(&a.reference)?;
    let extended = cycle::extend_reference(&reference, coll.config().past_frames())?;
    let horizons = a.horizons.iter().map(|&h| horizon_frame(h, coll.config())).collect::<Result<Vec<_>>>()?;
    let cycles: Option<Vec<CycleRow>> = a.cycles.as_ref().map(read_rows).transpose()?;
    let (skel, seq) = load_stream(&a.stream)?;
    let batches = stream_batches(&a.stream, &seq, &skel, &coll, &extended)?;

    let out = out_dir(&a.out)?;
    let mut manifest = RunManifest::new("predict", to_json(a)?, vec![]);
    for p in [&a.collection, &a.reference, &a.stream.input, &a.stream.skeleton] {
        manifest.input(p)?;
    }
    if let Some(p) = &a.cycles {
        manifest.input(p)?;
    }
    let truth = (!a.no_truth).then_some(&seq);
    let mut files = vec![out.join("predictions.csv")];
    write_rows(&files[0], &prediction_rows(&batches, &skel, truth))?;
    if let Some(truth) = truth {
        for (&seconds, &h) in a.horizons.iter().zip(&horizons) {
            let mut rows = horizon_see(&batches, truth, h)?;
            if let Some(c) = &cycles {
                tag_cycles(&mut rows, c);
            }
            let path = out.join(format!("see_{}.csv", horizon_label(seconds)));
            write_rows(&path, &rows)?;
            files.push(path);
        }
    }
    finish(manifest, out, &files)
}

/// Reference frame at extended-reference index `i`.
fn reference_frame(i: usize, lf: usize, t: usize) -> usize {
    (i + t - lf % t) % t
}

fn uncertainty(a: &UncertaintyArgs) -> Result<String> {
    if !(a.noise_scale >= 0.0) || !a.noise_scale.is_finite() {
        return Err(invalid!("noise scale must be finite and >= 0, got {}", a.noise_scale));
    }
    let coll = CoefficientCollection::load(&a.collection)?;
    let mut reference: ReferenceCycle = load_json(&a.reference)?;
    reference.per_timestep_std.iter_mut().for_each(|s| *s *= a.noise_scale);
    let skel = load_skeleton(&a.skeleton)?;
    let bands = predictive_variation(&reference, &coll, a.samples, a.seed)?;
    let lf = coll.config().past_frames();
    let t = reference.angles.frames();
    let roots: Vec<[f64; 3]> = bands
        .iter()
        .map(|b| {
            reference
                .angles
                .root_track()
                .map_or([0.0; 3], |track| track[reference_frame(b.time_index, lf, t)])
        })
        .collect();

    let out = out_dir(&a.out)?;
    let mut manifest = RunManifest::new("uncertainty", to_json(a)?, vec![a.seed]);
    for p in [&a.collection, &a.reference, &a.skeleton] {
        manifest.input(p)?;
    }
    let files = [out.join("bands_angle.csv"), out.join("bands_coord.csv")];
    write_rows(&files[0], &angle_band_rows(&bands))?;
    write_rows(&files[1], &coordinate_band_rows(&bands, &skel, &roots)?)?;
    finish(manifest, out, &files)
}

fn report(a: &ReportArgs) -> Result<String> {
    let see_rows: Vec<SeeRow> = read_rows(&a.see)?;
    let first = see_rows.first().ok_or_else(|| Error::Format(format!("{}: no SEE rows", a.see.display())))?;
    let h = first.target_frame - first.stamp;
    if see_rows.iter().any(|r| r.target_frame - r.stamp != h) {
        return Err(Error::Format(format!("{}: mixed horizons", a.see.display())));
    }
    let summary = summary_rows(&see_rows)?;

    let out = out_dir(&a.out)?;
    let mut manifest = RunManifest::new("report", to_json(a)?, vec![]);
    manifest.input(&a.see)?;
    let mut files = vec![out.join("summary.csv"), out.join("summary.txt")];
    write_rows(&files[0], &summary)?;
    fs::write(&files[1], summary_table(&summary)).map_err(|e| Error::io(&files[1], e))?;
    if let Some(p) = &a.predictions {
        manifest.input(p)?;
        let predictions: Vec<PredictionRow> = read_rows(p)?;
        let bands: Vec<CoordinateBandRow> = match &a.bands {
            Some(b) => {
                manifest.input(b)?;
                read_rows(b)?
            }
            None => Vec::new(),
        };
        let path = out.join("plot.csv");
        write_rows(&path, &plot_rows(&predictions, &bands, h as usize))?;
        files.push(path);
    }
    finish(manifest, out, &files)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub penalty: f64,
    pub file: String,
    pub models: usize,
    pub median_see_cm: Option<f64>,
    pub mean_see_cm: Option<f64>,
    pub median_baseline_cm: Option<f64>,
}

fn sweep(a: &SweepArgs) -> Result<String> {
    let reference: ReferenceCycle = load_json(&a.reference)?;
    let base = a.model.config(reference.angles.frame_rate());
    base.validate()?;
    let extended = cycle::extend_reference(&reference, base.past_frames())?;
    let eval = match (&a.eval_input, &a.eval_skeleton) {
        (Some(input), Some(skeleton)) => {
            let stream =
                StreamArgs { input: input.clone(), skeleton: skeleton.clone(), from: a.eval_from, to: None };
            let (skel, seq) = load_stream(&stream)?;
            Some((stream, skel, seq, horizon_frame(a.eval_horizon.unwrap_or(base.future_seconds), &base)?))
        }
        _ => None,
    };
    let out = out_dir(&a.out)?;
    let grid = sweep_grid(a.preset);
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, grid.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..grid.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(rank, penalty)) = grid.get(i) else { break };
                let mut cfg = base.clone();
                cfg.regression.rank = rank;
                cfg.regression.penalty = penalty;
                let row = (|| {
                    let coll = build_collection(&extended, &cfg)?;
                    let name = format!("collection_R{rank}_lambda{penalty}.bin");
                    coll.save(out.join(&name))?;
                    let mut row = SweepRow {
                        rank,
                        penalty,
                        file: name,
                        models: coll.len(),
                        median_see_cm: None,
                        mean_see_cm: None,
                        median_baseline_cm: None,
                    };
                    if let Some((stream, skel, seq, h)) = &eval {
                        let batches = stream_batches(stream, seq, skel, &coll, &extended)?;
                        let see = horizon_see(&batches, seq, *h)?;
                        let model: Vec<f64> = see.iter().map(|r| r.see_cm).collect();
                        let baseline: Vec<f64> = see.iter().map(|r| r.baseline_cm).collect();
                        if !model.is_empty() {
                            row.median_see_cm = Some(stats::median(&model));
                            row.mean_see_cm = Some(stats::mean(&model));
                            row.median_baseline_cm = Some(stats::median(&baseline));
                        }
                    }
                    Ok(row)
                })();
                results.lock().expect("no panics while holding the lock")[i] = Some(row);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every grid point visited"))
        .collect::<Result<Vec<_>>>()?;

    let mut config = to_json(a)?;
    config["grid"] = to_json(&grid)?;
    config["pipeline"] = to_json(&base)?;
    let mut manifest = RunManifest::new("sweep", config, vec![base.regression.seed]);
    manifest.input(&a.reference)?;
    if let Some((stream, ..)) = &eval {
        manifest.input(&stream.input)?;
        manifest.input(&stream.skeleton)?;
    }
    let mut files: Vec<PathBuf> = rows.iter().map(|r| out.join(&r.file)).collect();
    let table = out.join("sweep.csv");
    write_rows(&table, &rows)?;
    files.push(table);
    finish(manifest, out, &files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_presets() {
        assert_eq!(sweep_grid(SweepPreset::Rank).len(), 5);
        assert_eq!(sweep_grid(SweepPreset::Penalty).len(), 9);
        let full = sweep_grid(SweepPreset::Full);
        assert_eq!(full.len(), 13);
        assert_eq!(full.iter().filter(|&&g| g == (13, 50.0)).count(), 1);
    }

    #[test]
    fn channel_parsing() {
        let segs = vec!["spine".to_string(), "right_hand".to_string()];
        assert_eq!(parse_channel("right_hand:y", &segs).unwrap(), (1, 1));
        assert_eq!(parse_channel("spine:2", &segs).unwrap(), (0, 2));
        assert!(parse_channel("spine", &segs).is_err());
        assert!(parse_channel("leg:x", &segs).is_err());
        assert!(parse_channel("spine:w", &segs).is_err());
    }

    #[test]
    fn error_lines_are_single_line() {
        let line = error_line(ErrorKind::Data, "bad\nthing\n  here");
        assert_eq!(line, "error[data]: bad thing here");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["totr", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["totr", "build", "--rank", "x"]), EXIT_USAGE);
    }

    #[test]
    fn reference_frame_mapping() {
        // Extended reference: frames 7, 8, 9 of a 10-frame cycle then 0..10.
        assert_eq!(reference_frame(0, 3, 10), 7);
        assert_eq!(reference_frame(3, 3, 10), 0);
        assert_eq!(reference_frame(12, 3, 10), 9);
    }
}
