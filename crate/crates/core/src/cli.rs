//! Command-line front end: plan, inspect, train, eval, ablate, scale.
//!
//! Every command validates its config before doing any work, writes its
//! artifacts plus a `run.json` manifest into `--out`, and produces identical
//! bytes when rerun with the same inputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::encoder::scale_up;
use crate::error::{Error, Result};
use crate::model::TubeVit;
use crate::posemb::embed_positions;
use crate::tokenizer::read_clip;
use crate::trainer::presets::tasks_of;
use crate::trainer::{
    evaluate, halved_strides, load_model, load_state, result_rows, run_cell, save_model,
    save_state, train_joint, write_results_csv, AblationGrid, EvalMetrics, EvalSpec, ResultRow,
    StepLog, TrainState,
};
use crate::tube_config::{
    bank_grids, estimate_cost, validate_bank, CostReport, Dims, TubeBank, TubeSpec,
    ValidationReport,
};

/// Exit code for invalid input.
pub const EXIT_INVALID: i32 = 2;
/// Exit code for runtime failures (I/O, non-finite training).
pub const EXIT_FAILURE: i32 = 1;

pub const CHECKPOINT_FILE: &str = "checkpoint.tkc";
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(
    name = "tubekit",
    version,
    about = "Sparse video tube tokenizer and ViT toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Token counts, centers, parameters and MACs for a config. No weights.
    Plan(PlanArgs),
    /// Dump tokens, position embeddings and tube coverage for a clip file.
    Inspect(InspectArgs),
    /// Train on the synthetic tasks attached to the config's heads.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a grid file.
    Ablate(AblateArgs),
    /// Put a small model's tubes in front of a larger encoder.
    Scale(ScaleArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Input size; defaults to the config's `input_dims`.
    #[arg(long, value_parser = parse_dims)]
    pub input_dims: Option<Dims>,
    /// Print the JSON report instead of text.
    #[arg(long)]
    pub json: bool,
    /// Also write `plan.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
    /// Take kernels from this checkpoint instead of a fresh init.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Print only the position embedding CSV to stdout.
    #[arg(long)]
    pub posemb: bool,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// Crop grid as `TxX` (temporal x spatial).
    #[arg(long, value_parser = parse_crops, default_value = "1x1")]
    pub eval_crops: (usize, usize),
    /// Halve every tube stride at evaluation.
    #[arg(long)]
    pub halve_strides: bool,
    /// Render held-out clips at this size before cropping.
    #[arg(long, value_parser = parse_dims)]
    pub source_dims: Option<Dims>,
    #[arg(long, default_value_t = 512)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    /// Model init seed; defaults to the config's train seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stop after this many completed steps. The schedule still spans `--steps`.
    #[arg(long)]
    pub until: Option<usize>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub freeze_below: Option<usize>,
    #[arg(long)]
    pub gate_layer: Option<usize>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate only this head.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Grid file: `{ "cells": [ { "name": ..., "config": ... } ], "eval": ... }`.
    #[arg(long)]
    pub config: PathBuf,
    /// Shared seed for every cell, replacing each cell's train seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Steps for every cell.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Record wall-clock seconds in the results table.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[arg(long)]
    pub small: PathBuf,
    #[arg(long)]
    pub large: PathBuf,
    #[arg(long)]
    pub freeze_below: Option<usize>,
    #[arg(long)]
    pub gate_layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training steps after composing, on the small model's tasks.
    #[arg(long, default_value_t = 0)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub eval: EvalFlags,
}

pub fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected T,H,W, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("bad size {p:?}"))?;
        if *o == 0 {
            return Err("sizes must be positive".into());
        }
    }
    Ok(out)
}

pub fn parse_crops(s: &str) -> std::result::Result<(usize, usize), String> {
    let (t, x) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected TxX, got {s:?}"))?;
    let t: usize = t
        .trim()
        .parse()
        .map_err(|_| format!("bad crop count {t:?}"))?;
    let x: usize = x
        .trim()
        .parse()
        .map_err(|_| format!("bad crop count {x:?}"))?;
    if t == 0 || x == 0 {
        return Err("crop counts must be positive".into());
    }
    Ok((t, x))
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::NonFinite(_) => EXIT_FAILURE,
            _ => EXIT_INVALID,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_from<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = String::new();
    match run(&cli.command, &mut stdout) {
        Ok(()) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Runs one command, appending what it would print to `stdout`.
pub fn run(command: &Command, stdout: &mut String) -> CliResult<()> {
    match command {
        Command::Plan(a) => cmd_plan(a, stdout),
        Command::Inspect(a) => cmd_inspect(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Ablate(a) => cmd_ablate(a, stdout),
        Command::Scale(a) => cmd_scale(a, stdout),
    }
}

fn load_config(path: &Path) -> CliResult<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let cfg =
        ModelConfig::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    args: serde_json::Value,
    /// File name to sha256 of its contents.
    outputs: BTreeMap<String, String>,
}

/// Writes `files` into `out` and a `run.json` listing their hashes.
fn write_outputs(
    out: &Path,
    command: &str,
    config_hash: String,
    seed: u64,
    args: serde_json::Value,
    files: Vec<(&str, Vec<u8>)>,
) -> CliResult<()> {
    fs::create_dir_all(out).map_err(Error::from)?;
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(out.join(name), bytes).map_err(Error::from)?;
        outputs.insert(name.to_string(), sha256_hex(bytes));
    }
    let manifest = RunManifest {
        command,
        config_hash,
        seed,
        args,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    text.push('\n');
    fs::write(out.join(MANIFEST_FILE), text).map_err(Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------- plan

/// Known published configurations whose stated token total differs from
/// valid-window counting.
struct ReferenceTotal {
    tubes: fn() -> Vec<TubeSpec>,
    dims: Dims,
    total: usize,
}

/// The four-tube base configuration.
pub fn reference_tubes() -> Vec<TubeSpec> {
    vec![
        TubeSpec::new([8, 8, 8], [16, 32, 32]).with_group([2, 1, 1]),
        TubeSpec::new([16, 4, 4], [6, 32, 32])
            .with_offset([4, 8, 8])
            .with_group([1, 2, 2]),
        TubeSpec::new([4, 12, 12], [16, 32, 32]).with_offset([0, 16, 16]),
        TubeSpec::new([1, 16, 16], [32, 16, 16]).image(),
    ]
}

const REFERENCES: [ReferenceTotal; 1] = [ReferenceTotal {
    tubes: reference_tubes,
    dims: [32, 224, 224],
    total: 559,
}];

pub const DISCREPANCY_POINTER: &str = "README.md#token-count-discrepancy";

#[derive(Clone, Debug, Serialize)]
pub struct CenterSummary {
    pub first: [f64; 3],
    pub last: [f64; 3],
    pub mean: [f64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanTube {
    pub index: usize,
    pub kernel: Dims,
    pub stride: Dims,
    pub offset: Dims,
    pub s2d_group: Dims,
    pub counts: Dims,
    pub tokens: usize,
    pub centers: CenterSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReferenceNote {
    pub reported_total: usize,
    pub counted_total: usize,
    pub see: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReport {
    pub config_hash: String,
    pub input_dims: Dims,
    pub is_video: bool,
    pub hidden_size: usize,
    pub total_tokens: usize,
    pub tubes: Vec<PlanTube>,
    pub cost: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceNote>,
}

fn reference_for(bank: &TubeBank, dims: Dims, counted: usize) -> Option<ReferenceNote> {
    REFERENCES
        .iter()
        .find(|r| r.dims == dims && (r.tubes)() == bank.tubes)
        .filter(|r| r.total != counted)
        .map(|r| ReferenceNote {
            reported_total: r.total,
            counted_total: counted,
            see: DISCREPANCY_POINTER.into(),
        })
}

/// Builds the plan or the validation report that rejected it.
pub fn plan(cfg: &ModelConfig, dims: Dims) -> std::result::Result<PlanReport, ValidationReport> {
    let bank = cfg.bank();
    let validation = validate_bank(&bank, dims);
    let is_video = dims[0] > 1;
    let (grids, cost) = match (
        bank_grids(&bank, dims, is_video),
        estimate_cost(&bank, dims, &cfg.encoder_config(), cfg.channels),
    ) {
        (Ok(g), Ok(c)) if validation.is_valid() => (g, c),
        _ => return Err(validation),
    };
    let tubes: Vec<PlanTube> = grids
        .iter()
        .map(|(i, g)| {
            let t = &bank.tubes[*i];
            let n = g.centers.len() as f64;
            let mut mean = [0.0; 3];
            for c in &g.centers {
                for a in 0..3 {
                    mean[a] += c[a] / n;
                }
            }
            PlanTube {
                index: *i,
                kernel: t.kernel,
                stride: t.stride,
                offset: t.offset,
                s2d_group: t.s2d_group,
                counts: g.counts,
                tokens: g.len(),
                centers: CenterSummary {
                    first: g.centers[0],
                    last: *g.centers.last().expect("non-empty grid"),
                    mean,
                },
            }
        })
        .collect();
    let total = tubes.iter().map(|t| t.tokens).sum();
    Ok(PlanReport {
        config_hash: cfg.hash(),
        input_dims: dims,
        is_video,
        hidden_size: cfg.hidden_size,
        total_tokens: total,
        reference: reference_for(&bank, dims, total),
        tubes,
        cost,
    })
}

fn plan_text(r: &PlanReport) -> String {
    let mut s = String::new();
    let [t, h, w] = r.input_dims;
    let kind = if r.is_video { "video" } else { "image" };
    let _ = writeln!(s, "input {t}x{h}x{w} ({kind}), d = {}", r.hidden_size);
    for tube in &r.tubes {
        let [kt, kh, kw] = tube.kernel;
        let [st, sh, sw] = tube.stride;
        let [nt, nh, nw] = tube.counts;
        let c = tube.centers.first;
        let _ = writeln!(
            s,
            "tube {}: kernel {kt}x{kh}x{kw} stride {st}x{sh}x{sw} -> {nt}x{nh}x{nw} = {} tokens, first center ({}, {}, {})",
            tube.index, tube.tokens, c[0], c[1], c[2]
        );
    }
    let _ = writeln!(s, "total tokens: {}", r.total_tokens);
    if let Some(note) = &r.reference {
        let _ = writeln!(
            s,
            "note: the published figure for this configuration is {} tokens; valid-window counting gives {} (see {})",
            note.reported_total, note.counted_total, note.see
        );
    }
    let c = &r.cost;
    let _ = writeln!(
        s,
        "params: tokenizer {} + encoder {} = {}",
        c.tokenizer_params,
        c.encoder_params,
        c.total_params()
    );
    let _ = writeln!(
        s,
        "MACs: tokenizer {} + attention {} + mlp {} = {}",
        c.tokenizer_macs, c.attention_macs, c.mlp_macs, c.total_macs
    );
    s
}

fn validation_text(v: &ValidationReport) -> String {
    let mut s = String::new();
    for e in &v.bank_errors {
        let _ = writeln!(s, "bank: {e}");
    }
    for t in &v.tubes {
        for e in &t.errors {
            let _ = writeln!(s, "tube {}: {e}", t.index);
        }
    }
    if s.is_empty() {
        s.push_str("configuration is not valid for this input\n");
    }
    s
}

pub fn cmd_plan(a: &PlanArgs, stdout: &mut String) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let dims = a
        .input_dims
        .or(cfg.input_dims)
        .ok_or_else(|| invalid("no --input-dims and no input_dims in the config"))?;
    let report =
        plan(&cfg, dims).map_err(|v| invalid(validation_text(&v).trim_end().to_string()))?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(Error::from)?;
        fs::write(out.join("plan.json"), &json).map_err(Error::from)?;
    }
    stdout.push_str(&if a.json { json } else { plan_text(&report) });
    Ok(())
}

// ------------------------------------------------------------- inspect

/// Number of tube windows covering each voxel, `T x H x W`.
pub fn coverage(bank: &TubeBank, dims: Dims) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; dims.iter().product()];
    for (_, g) in bank_grids(bank, dims, dims[0] > 1)? {
        let [pt, ph, pw] = g.pre_counts;
        for it in 0..pt {
            for ih in 0..ph {
                for iw in 0..pw {
                    let o = g.pre_origin([it, ih, iw]);
                    for t in o[0]..o[0] + g.kernel[0] {
                        for h in o[1]..o[1] + g.kernel[1] {
                            let row = (t * dims[1] + h) * dims[2];
                            for w in o[2]..o[2] + g.kernel[2] {
                                counts[row + w] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Plain PGM with the frames stacked vertically.
pub fn coverage_pgm(counts: &[u32], dims: Dims) -> String {
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut s = format!("P2\n{} {}\n{max}\n", dims[2], dims[0] * dims[1]);
    for row in counts.chunks(dims[2]) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn matrix_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn value_header(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("v{j}")).collect()
}

pub fn cmd_inspect(a: &InspectArgs, stdout: &mut String) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    cfg.validate()?;
    let clip = read_clip(&a.clip)?;
    let model: TubeVit<f32> = match &a.checkpoint {
        Some(p) => load_model(p)?,
        None => TubeVit::init(cfg.clone(), a.seed)?,
    };
    let dims = clip.dims();
    let bank = model.bank();
    validate_bank(&bank, dims)
        .into_result()
        .map_err(Error::from)?;
    let batch = model.tokens(&clip)?;
    let d = cfg.hidden_size;
    let pos = embed_positions(&batch.centers, &cfg.embedding_params());
    let mut header = vec!["tube_id".to_string(), "t".into(), "x".into(), "y".into()];
    header.extend(value_header(d));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let coords = |i: usize| {
        let c = batch.centers[i];
        vec![
            batch.tube_id[i].to_string(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
        ]
    };
    let posemb_csv = matrix_csv(
        &header,
        (0..batch.len()).map(|i| {
            let mut r = coords(i);
            r.extend(pos.row(i).iter().map(|v| format!("{v:e}")));
            r
        }),
    );
    if a.posemb {
        stdout.push_str(&posemb_csv);
        return Ok(());
    }
    let tokens_csv = matrix_csv(
        &header,
        (0..batch.len()).map(|i| {
            let mut r = coords(i);
            r.extend(batch.tokens.row(i).iter().map(|v| format!("{v:e}")));
            r
        }),
    );
    let pgm = coverage_pgm(&coverage(&bank, dims)?, dims);
    let _ = writeln!(
        stdout,
        "{} tokens from a {}x{}x{} clip",
        batch.len(),
        dims[0],
        dims[1],
        dims[2]
    );
    write_outputs(
        &a.out,
        "inspect",
        cfg.hash(),
        a.seed,
        serde_json::json!({ "clip": sha256_hex(&fs::read(&a.clip).map_err(Error::from)?), "posemb": cfg.posemb }),
        vec![
            ("tokens.csv", tokens_csv.into_bytes()),
            ("posemb.csv", posemb_csv.into_bytes()),
            ("coverage.pgm", pgm.into_bytes()),
        ],
    )
}

// ------------------------------------------------- train / eval / scale

fn eval_spec(flags: &EvalFlags, bank: &TubeBank) -> EvalSpec {
    EvalSpec {
        temporal_crops: flags.eval_crops.0,
        spatial_crops: flags.eval_crops.1,
        source_dims: flags.source_dims,
        strides: flags.halve_strides.then(|| halved_strides(bank)),
        samples: flags.samples,
    }
}

fn results_csv(rows: &[ResultRow]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_results_csv(rows, &mut buf)?;
    Ok(buf)
}

fn metrics_json(metrics: &[EvalMetrics]) -> CliResult<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(metrics).map_err(Error::from)?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Evaluates every task head (or just `head`) of `model`.
pub fn evaluate_heads(
    model: &TubeVit<f32>,
    head: Option<&str>,
    spec: &EvalSpec,
) -> Result<Vec<EvalMetrics>> {
    let tasks = tasks_of(&model.config);
    let mut out = Vec::new();
    for t in tasks.iter().filter(|t| head.is_none_or(|h| h == t.head)) {
        out.push(evaluate(model, &t.head, &t.task, spec)?);
    }
    if out.is_empty() {
        return Err(Error::UnknownHead(
            head.unwrap_or("<any task head>").to_string(),
        ));
    }
    Ok(out)
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut String) -> CliResult<()> {
    let mut state: TrainState<f32> = match &a.resume {
        Some(p) => load_state(p)?,
        None => {
            let path = a
                .config
                .as_ref()
                .expect("clap requires --config without --resume");
            let mut cfg = load_config(path)?;
            if a.freeze_below.is_some() {
                cfg.encoder.freeze_below = a.freeze_below;
            }
            if a.gate_layer.is_some() {
                cfg.encoder.gate_layer = a.gate_layer;
            }
            cfg.validate()?;
            let mut train = cfg
                .train
                .clone()
                .ok_or_else(|| invalid("the config has no train section"))?;
            if let Some(s) = a.seed {
                train.seed = s;
            }
            let model = TubeVit::init(cfg, train.seed)?;
            TrainState::new(model, train)
        }
    };
    if let Some(steps) = a.steps {
        state.train.steps = steps;
    }
    let tasks = tasks_of(&state.model.config);
    let mut log = String::new();
    let mut sink = |l: &StepLog| {
        let _ = writeln!(log, "{l}");
    };
    let target = a
        .until
        .map_or(state.train.steps, |u| u.min(state.train.steps));
    let failure = state.run_until(&tasks, target, &mut sink).err();
    drop(sink);
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    save_state(&a.out.join(CHECKPOINT_FILE), &state)?;
    if let Some(e) = failure {
        fs::write(a.out.join("train.log"), &log).map_err(Error::from)?;
        return Err(CliError {
            code: EXIT_FAILURE,
            message: format!("{e}; last good state written at step {}", state.step),
        });
    }
    let spec = eval_spec(&a.eval, &state.model.bank());
    let rows = result_rows(&state.model.config.hash(), &state.model, &spec)?;
    let metrics = evaluate_heads(&state.model, None, &spec)?;
    let checkpoint = fs::read(a.out.join(CHECKPOINT_FILE)).map_err(Error::from)?;
    let _ = writeln!(stdout, "trained {} steps", state.step);
    for m in &metrics {
        let _ = writeln!(stdout, "{}: top1 {:.4} top5 {:.4}", m.head, m.top1, m.top5);
    }
    write_outputs(
        &a.out,
        "train",
        state.model.config.hash(),
        state.seed,
        serde_json::json!({ "steps": state.train.steps, "until": a.until, "resume": a.resume.is_some() }),
        vec![
            (CHECKPOINT_FILE, checkpoint),
            ("train.log", log.into_bytes()),
            (RESULTS_FILE, results_csv(&rows)?),
            ("eval.json", metrics_json(&metrics)?),
        ],
    )
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut String) -> CliResult<()> {
    let bytes = fs::read(&a.checkpoint).map_err(Error::from)?;
    let state = crate::trainer::decode_checkpoint::<f32>(&bytes)?;
    let model = state.model;
    let spec = eval_spec(&a.eval, &model.bank());
    let metrics = evaluate_heads(&model, a.head.as_deref(), &spec)?;
    let json = metrics_json(&metrics)?;
    stdout.push_str(std::str::from_utf8(&json).expect("utf8"));
    write_outputs(
        &a.out,
        "eval",
        model.config.hash(),
        state.seed,
        serde_json::json!({ "checkpoint": sha256_hex(&bytes), "head": a.head, "spec": spec }),
        vec![("eval.json", json)],
    )
}

pub fn cmd_ablate(a: &AblateArgs, stdout: &mut String) -> CliResult<()> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| invalid(format!("{}: {e}", a.config.display())))?;
    let mut grid: AblationGrid =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", a.config.display())))?;
    for cell in &mut grid.cells {
        cell.config.validate()?;
        let train = cell
            .config
            .train
            .as_mut()
            .ok_or_else(|| invalid(format!("cell {:?} has no train section", cell.name)))?;
        if let Some(s) = a.seed {
            train.seed = s;
        }
        if let Some(n) = a.steps {
            train.steps = n;
        }
    }
    let mut rows = Vec::new();
    for cell in &grid.cells {
        let (_, r) = run_cell::<f32>(cell, &grid.eval, a.timing)?;
        rows.extend(r);
    }
    let csv = results_csv(&rows)?;
    stdout.push_str(std::str::from_utf8(&csv).expect("utf8"));
    let grid_hash = sha256_hex(
        serde_json::to_string(&grid)
            .map_err(Error::from)?
            .as_bytes(),
    );
    write_outputs(
        &a.out,
        "ablate",
        grid_hash[..16].to_string(),
        a.seed.unwrap_or(0),
        serde_json::json!({ "cells": grid.cells.len(), "steps": a.steps, "timing": a.timing }),
        vec![(RESULTS_FILE, csv)],
    )
}

pub fn cmd_scale(a: &ScaleArgs, stdout: &mut String) -> CliResult<()> {
    let small: TubeVit<f32> = load_model(&a.small)?;
    let large: TubeVit<f32> = load_model(&a.large)?;
    let mut model = scale_up(&small, &large, a.freeze_below, a.gate_layer, a.seed)?;
    let tasks = tasks_of(&small.config);
    if a.steps > 0 {
        let mut train = small.config.train.clone().unwrap_or_default();
        train.steps = a.steps;
        train.seed = a.seed;
        model = train_joint(model, &tasks, &train, &mut |_| {})
            .map_err(|abort| CliError::from(abort.error))?
            .model;
    }
    let spec = eval_spec(&a.eval, &model.bank());
    let mut metrics = Vec::new();
    for t in &tasks {
        metrics.push(evaluate(&model, &t.head, &t.task, &spec)?);
    }
    let ckpt = a.out.join(CHECKPOINT_FILE);
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    save_model(&ckpt, &model, a.seed)?;
    let json = metrics_json(&metrics)?;
    stdout.push_str(std::str::from_utf8(&json).expect("utf8"));
    write_outputs(
        &a.out,
        "scale",
        model.config.hash(),
        a.seed,
        serde_json::json!({
            "small": sha256_hex(&fs::read(&a.small).map_err(Error::from)?),
            "large": sha256_hex(&fs::read(&a.large).map_err(Error::from)?),
            "freeze_below": a.freeze_below,
            "gate_layer": a.gate_layer,
            "steps": a.steps,
        }),
        vec![
            (CHECKPOINT_FILE, fs::read(&ckpt).map_err(Error::from)?),
            ("eval.json", json),
        ],
    )
}
