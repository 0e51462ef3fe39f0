//! `goskit` command-line interface.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::FileConfig;
use goskit::harness::{
    self, evaluate, gradcheck, load_checkpoint, markdown_document, prepare_items, read_eval_report, train,
    write_eval_artifacts, Component, EvalMode, EvalReport,
};
use goskit::mask_oracle::{generate_supervision, read_supervision, write_supervision, MockSegmenter, SupervisionRecord};
use goskit::model::GosModel;
use goskit::scene::{generate_scene, read_dataset, write_dataset};

#[derive(Parser)]
#[command(name = "goskit", version, about = "Gaze object detection and segmentation toolkit")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scene generation and training (overrides the file).
    #[arg(long, global = true, env = "GOSKIT_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic train and test scenes with annotations.
    Generate(GenerateArgs),
    /// Produce mask supervision for every object box of a dataset.
    Masks(MasksArgs),
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write JSON, Markdown and overlay PNGs.
    Eval(EvalArgs),
    /// Finite-difference gradient check of the differentiable components.
    Gradcheck(GradcheckArgs),
    /// Combine evaluation JSON files into one Markdown table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct MasksArgs {
    #[arg(long)]
    data: PathBuf,
    /// Segmenter backend; only `mock` ships with the toolkit.
    #[arg(long, default_value = "mock")]
    backend: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Warm start from a checkpoint sidecar (pretrain, then finetune).
    #[arg(long)]
    init_from: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint sidecar (`.json`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_parser = ["real", "non_real"])]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    /// Number of overlay PNGs to render.
    #[arg(long, default_value_t = 8)]
    overlays: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Comma-separated component names; all when omitted.
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<String>>,
    /// Write the report as JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// `eval_*.json` files written by `goskit eval`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

const SPLITS: [&str; 2] = ["train", "test"];

fn supervision_path(data: &Path, split: &str) -> PathBuf {
    data.join("supervision").join(format!("{split}.json"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Generate(a) => generate(cfg, a),
        Command::Masks(a) => masks(a),
        Command::Train(a) => run_train(cfg, a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck(cfg, a),
        Command::Report(a) => run_report(a),
    }
}

fn generate(mut cfg: FileConfig, a: GenerateArgs) -> Result<()> {
    if let Some(n) = a.train_size {
        cfg.data.train_size = n;
    }
    if let Some(n) = a.test_size {
        cfg.data.test_size = n;
    }
    cfg.scene.validate()?;
    let ranges = [0..cfg.data.train_size, cfg.data.train_size..cfg.data.train_size + cfg.data.test_size];
    for (split, range) in SPLITS.iter().zip(ranges) {
        let samples = range.map(|i| generate_scene(&cfg.scene, i)).collect::<Result<Vec<_>, _>>()?;
        write_dataset(&samples, &a.out, split)?;
        log::info!("{split}: {} scenes", samples.len());
    }
    std::fs::write(a.out.join("scene_config.json"), serde_json::to_vec_pretty(&cfg.scene)?)?;
    Ok(())
}

fn masks(a: MasksArgs) -> Result<()> {
    if a.backend != "mock" {
        bail!("unknown segmenter backend {:?}; available: mock", a.backend);
    }
    for split in SPLITS {
        let samples = read_dataset(&a.data, split)?;
        let records = samples
            .iter()
            .map(|s| {
                let boxes: Vec<_> = s.objects.iter().map(|o| o.bbox).collect();
                let results = generate_supervision(&MockSegmenter, &s.image, &boxes)
                    .with_context(|| format!("scene {}", s.index))?;
                Ok(SupervisionRecord::from_results(s.index, &results))
            })
            .collect::<Result<Vec<_>>>()?;
        write_supervision(&supervision_path(&a.data, split), &a.backend, &records)?;
        log::info!("{split}: masks for {} scenes", records.len());
    }
    Ok(())
}

fn run_train(mut cfg: FileConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch {
        t.batch = v;
    }
    if a.steps.is_some() {
        t.max_steps = a.steps;
    }
    if a.init_from.is_some() {
        t.init_from = a.init_from;
    }
    t.validate()?;
    let samples = read_dataset(&a.data, "train")?;
    let sup_path = supervision_path(&a.data, "train");
    let supervision = read_supervision(&sup_path)
        .with_context(|| format!("mask supervision missing; run `goskit masks --data {}` first", a.data.display()))?;
    let mut model = GosModel::new(&cfg.train.model_config(), cfg.train.seed)?;
    let items = prepare_items(&samples, &supervision, cfg.train.input_size / 4)?;
    let outcome = train(&mut model, &items, &cfg.train, Some(&a.out))?;
    std::fs::write(a.out.join("history.json"), serde_json::to_vec_pretty(&outcome.history)?)?;
    if let Some(p) = outcome.checkpoint {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let mode: EvalMode = a.mode.parse()?;
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let samples = read_dataset(&a.data, &a.split)?;
    let (eval, predictions) = evaluate(&model, &samples, mode)?;
    if eval.gt_head_tainted {
        bail!("ground-truth head annotations were used as model input in real mode");
    }
    let report = EvalReport {
        checkpoint: a.checkpoint.display().to_string(),
        config_hash: meta.config_hash.clone(),
        config: meta.config,
        eval,
    };
    let path = write_eval_artifacts(&a.out, &report, &samples, &predictions, a.overlays)?;
    print!("{}", harness::markdown_table(std::slice::from_ref(&report)));
    println!("{}", path.display());
    Ok(())
}

fn run_gradcheck(cfg: FileConfig, a: GradcheckArgs) -> Result<()> {
    let components: Vec<Component> = match a.components {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?,
        None => Component::ALL.to_vec(),
    };
    let report = gradcheck(&components, cfg.train.seed)?;
    for e in &report.entries {
        println!(
            "{:<20} {:>10.3e} <= {:.0e} over {:>5} coords  {}",
            e.name,
            e.max_rel_error,
            e.tolerance,
            e.coordinates,
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(out) = a.out {
        std::fs::write(out, serde_json::to_vec_pretty(&report)?)?;
    }
    if !report.all_passed() {
        bail!("gradient check failed");
    }
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let reports = a.inputs.iter().map(|p| read_eval_report(p).with_context(|| p.display().to_string())).collect::<Result<Vec<_>>>()?;
    let md = markdown_document(&reports);
    std::fs::write(&a.out, &md)?;
    print!("{md}");
    Ok(())
}
