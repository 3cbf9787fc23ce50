use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use emoacc_model::{GenerationOptions, TrainingConfig};
use emoacc_service::commands::{self, GenerateArgs};
use emoacc_service::ServiceConfig;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "emoacc", version, about = "Emotion-guided piano accompaniment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a directory of `.mid` files with sibling `.chords.txt` annotations.
    Train(TrainArgs),
    /// Generate an accompaniment for a melody and a pair of curves.
    Generate(GenerateCli),
    /// Compare two files (`--pred/--ref`) or run the flow-correlation study (`--checkpoint/--data/--out`).
    Evaluate(EvaluateArgs),
    /// Measure the emotion flow of a song's accompaniment.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        chords: Option<PathBuf>,
        /// Print the measured flow as `{"valence": Curve, "arousal": Curve}`.
        #[arg(long)]
        emit_flow: bool,
    },
    /// Run the HTTP service. Flags override the EMOACC_* environment variables.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        max_bars: Option<usize>,
    },
    /// Write a deterministic toy corpus.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        min_bars: usize,
        #[arg(long, default_value_t = 24)]
        max_bars: usize,
    },
    /// Write an untrained checkpoint.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `full`, `desk` or a ModelConfig JSON file.
    #[arg(long, default_value = "desk")]
    model: String,
    /// TrainingConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_floor: Option<f64>,
    #[arg(long)]
    tf_ratio_pianotree: Option<f64>,
    #[arg(long)]
    tf_ratio_valence: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    kl_warmup: Option<bool>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainingConfig> {
        let mut c = match &self.config {
            Some(p) => TrainingConfig::from_json(&std::fs::read_to_string(p)?).map_err(anyhow::Error::msg)?,
            None => TrainingConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(batch_size, epochs, lr, lr_decay, lr_floor, tf_ratio_pianotree, tf_ratio_valence, seed, kl_weight, kl_warmup, clip_norm);
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct GenerateCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    melody: PathBuf,
    #[arg(long)]
    chords: Option<PathBuf>,
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output path with a `.json` extension.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_rules: bool,
    #[arg(long, default_value_t = 64)]
    max_bars: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, requires = "reference")]
    pred: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, requires_all = ["data", "out"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the song-level split (must match training).
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.config()?;
            let model = commands::model_config(&a.model)?;
            print_json(&commands::train_command(&a.data, &a.out, &model, &cfg)?)
        }
        Command::Generate(g) => {
            let result = commands::generate_command(&GenerateArgs {
                checkpoint: &g.checkpoint,
                melody: &g.melody,
                chords: g.chords.as_deref(),
                curves: &g.curves,
                out: &g.out,
                report: g.report.as_deref(),
                temperature: g.temperature,
                seed: g.seed,
                apply_rules: !g.no_rules,
                max_bars: g.max_bars,
            })?;
            print_json(&serde_json::json!({
                "out": g.out,
                "model_version": result.model_version,
                "correlation": result.correlation,
            }))
        }
        Command::Evaluate(e) => match (&e.pred, &e.reference, &e.checkpoint, &e.data, &e.out) {
            (Some(p), Some(r), None, _, _) => print_json(&commands::compare_command(p, r)?),
            (None, None, Some(c), Some(d), Some(o)) => {
                let opts = GenerationOptions { temperature: e.temperature, seed: e.seed, ..Default::default() };
                print_json(&commands::evaluate_command(c, d, o, &opts, e.split_seed)?)
            }
            _ => anyhow::bail!("evaluate needs either --pred/--ref or --checkpoint/--data/--out"),
        },
        Command::Convert { input, chords, emit_flow } => {
            anyhow::ensure!(emit_flow, "convert: nothing to emit (use --emit-flow)");
            print_json(&commands::convert_command(&input, chords.as_deref())?)
        }
        Command::Serve { port, checkpoint, pool_size, max_bars } => {
            let mut cfg = ServiceConfig::from_env()?;
            cfg.port = port.unwrap_or(cfg.port);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.pool_size = pool_size.unwrap_or(cfg.pool_size);
            cfg.max_bars = max_bars.unwrap_or(cfg.max_bars);
            tokio::runtime::Runtime::new()?.block_on(emoacc_service::server::serve(cfg))
        }
        Command::SynthCorpus { out, count, seed, min_bars, max_bars } => {
            let files = commands::synth_command(&out, count, seed, min_bars, max_bars)?;
            print_json(&serde_json::json!({ "written": files.len(), "dir": out }))
        }
        Command::Init { out, model, seed } => {
            commands::init_command(&out, &commands::model_config(&model)?, seed)?;
            print_json(&serde_json::json!({ "checkpoint": out }))
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
