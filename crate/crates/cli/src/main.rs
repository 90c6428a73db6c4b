use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use microcrack::harness::{self, evaluation_table, TrainConfig};
use microcrack::mda;
use microcrack::model::Model;
use microcrack::wavegen::{generate_dataset, GenConfig};
use microcrack::{KvMap, ModelConfig};

/// Reference size of the published network.
const PUBLISHED_PARAMS: usize = 1_136_000;

#[derive(Parser)]
#[command(name = "microcrack", version, about = "Micro-crack segmentation from simulated wave fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a standardised dataset of wave-field samples.
    GenData(GenData),
    /// Train a model from a key = value config file.
    Train(Train),
    /// Evaluate a checkpoint on a dataset.
    Eval(Eval),
    /// Train every activation × loss pair and write a comparison report.
    Grid(Grid),
    /// Embed one layer's activations in 2D.
    Mda(MdaArgs),
    /// Print the parameter count of a model config.
    ParamCount(ParamCount),
}

#[derive(Args)]
struct GenData {
    /// Number of samples.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset file; the metadata sidecar goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides the config's `checkpoint`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Loss label shown in the report row.
    #[arg(long, default_value = "-")]
    loss: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct Grid {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.txt, report.csv and results.json.
    #[arg(long)]
    out: PathBuf,
    /// Base training config; activation and loss are overridden per cell.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct MdaArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Layer id or name, e.g. `head` or `bottleneck.act`.
    #[arg(long)]
    layer: String,
    /// Embedding CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG scatter plot.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Build pseudo-labels from this checkpoint's outputs instead.
    #[arg(long)]
    labels_from: Option<PathBuf>,
    #[arg(long, default_value_t = mda::DEFAULT_NEIGHBORS)]
    neighbors: usize,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ParamCount {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also print the per-module breakdown.
    #[arg(long)]
    breakdown: bool,
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(Model::load(path)?)
}

fn gen_data(a: GenData) -> Result<()> {
    let side = generate_dataset(&GenConfig::default(), a.n, a.seed, &a.out)?;
    println!(
        "wrote {} samples to {} (mean crack fraction {:.4})",
        side.count,
        a.out.display(),
        side.mean_crack_fraction
    );
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(c) = a.ckpt {
        cfg.checkpoint = Some(c);
    }
    let ckpt = cfg.checkpoint.clone().context("no checkpoint path: set `checkpoint` or pass --ckpt")?;
    let out = harness::train(&cfg)?;
    let r = &out.result;
    let json = ckpt.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(r)?).with_context(|| json.display().to_string())?;
    for (e, l) in r.loss_curve.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.6}", e + 1);
    }
    print!("{}", evaluation_table(&r.activation, &r.loss, r.split.label(), &r.evaluation));
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let data = harness::load_dataset_for(model.config(), &a.data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let e = harness::evaluate(&model, &data, &idx, a.threshold)?;
    print!("{}", evaluation_table(model.config().activation.label(), &a.loss, "all", &e));
    Ok(())
}

fn grid(a: Grid) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let data = harness::load_dataset_for(&cfg.model, &a.data)?;
    let report = harness::grid(&cfg, &data);
    report.write(&a.out)?;
    let results: Vec<_> = report.cells.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
    let json = a.out.join("results.json");
    std::fs::write(&json, serde_json::to_string_pretty(&results)?).with_context(|| json.display().to_string())?;
    print!("{}", report.to_text());
    if report.completed() == 0 {
        bail!("every grid cell failed");
    }
    Ok(())
}

fn resolve_layer(model: &Model, spec: &str) -> Result<usize> {
    if let Ok(id) = spec.parse::<usize>() {
        if id < model.layers().len() {
            return Ok(id);
        }
        bail!("unknown layer id {id} (model has {} layers)", model.layers().len());
    }
    match model.layer_by_name(spec) {
        Some(l) => Ok(l.id),
        None => {
            let names: Vec<&str> = model.layers().iter().map(|l| l.name.as_str()).collect();
            bail!("unknown layer `{spec}`; known layers: {}", names.join(", "))
        }
    }
}

fn run_mda(a: MdaArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let data = harness::load_dataset_for(model.config(), &a.data)?;
    let layer = resolve_layer(&model, &a.layer)?;
    let n = a.limit.map_or(data.len(), |l| l.min(data.len()));
    let x = data.batch_input(&(0..n).collect::<Vec<_>>())?;
    let (outputs, features) = mda::layer_features(&model, &x, layer, 8)?;
    let reference = match &a.labels_from {
        Some(p) => mda::layer_features(&load_model(p)?, &x, layer, 8)?.0,
        None => outputs,
    };
    let r = mda::analyze_features(layer, &features, &reference, a.neighbors)?;
    if r.labels.degenerate {
        eprintln!("warning: all outputs coincide; every sample falls in one bin");
    }
    r.write(&a.out, a.svg.as_deref())?;
    println!(
        "layer {} ({}): {} samples, {} bins, anchor {}, quality {:.4}",
        layer,
        model.layers()[layer].name,
        n,
        r.labels.bin_count(),
        r.labels.anchor,
        r.quality
    );
    Ok(())
}

fn param_count(a: ParamCount) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            ModelConfig::from_kv(&KvMap::parse(&text)?)?
        }
        None => ModelConfig::default(),
    };
    let model = Model::new(cfg)?;
    let n = model.param_count();
    println!("{n}");
    let delta = n as i64 - PUBLISHED_PARAMS as i64;
    eprintln!(
        "published {PUBLISHED_PARAMS}, delta {delta:+} ({:+.2}%)",
        100.0 * delta as f64 / PUBLISHED_PARAMS as f64
    );
    if a.breakdown {
        for (name, count) in model.param_breakdown() {
            println!("{name:<12} {count}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Mda(a) => run_mda(a),
        Command::ParamCount(a) => param_count(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
