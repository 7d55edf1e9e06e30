use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use opto_dfa_cli::commands::{
    cmd_bench, cmd_check, cmd_embed, cmd_train, BenchCmd, CheckCmd, EmbedCmd, TrainCmd,
};
use opto_dfa_cli::config::{parse_hidden, parse_precision, Overrides, Task};
use opto_dfa::linalg::Precision;
use opto_dfa::train::Mode;
use std::path::PathBuf;

/// Training engine with pluggable backward passes: exact backpropagation,
/// direct feedback alignment, and a simulated optical random-projection
/// co-processor.
#[derive(Parser)]
#[command(name = "opto-dfa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write reports, weights, and a manifest.
    Train(TrainArgs),
    /// Reproduce the benchmark grid (5 modes x tasks) with reference numbers.
    Bench(BenchArgs),
    /// Run gradient, oracle, and determinism self-checks.
    Check(CheckArgs),
    /// Extract a hidden layer and export its 2-D embedding.
    Embed(EmbedArgs),
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn parse_precision_arg(s: &str) -> Result<Precision, String> {
    parse_precision(s).map_err(|e| e.to_string())
}

fn parse_hidden_arg(s: &str) -> Result<Vec<usize>, String> {
    parse_hidden(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    /// Task: mnist or cora.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Training mode: bp, dfa, dfa-ternary, dfa-optical, shallow.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Flat key=value config file (e.g. a previous run's manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Ternarization threshold tau.
    #[arg(long)]
    threshold: Option<f64>,
    /// Optical read noise std, relative to signal RMS.
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Hidden layer widths, comma-separated (e.g. 2048,2048).
    #[arg(long, value_parser = parse_hidden_arg)]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    weight_seed: Option<u64>,
    #[arg(long)]
    feedback_seed: Option<u64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Record per-epoch DFA/BP alignment cosines.
    #[arg(long)]
    alignment: bool,
    /// Element precision: f32 or f64.
    #[arg(long, value_parser = parse_precision_arg)]
    precision: Option<Precision>,
    /// Dataset root (default: $OPTO_DFA_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Where run directories are created.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

impl TrainArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            task: self.task,
            mode: self.mode,
            precision: self.precision,
            hidden: self.hidden.clone(),
            lr: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            threshold: self.threshold,
            noise_std: self.noise_std,
            dropout: self.dropout,
            weight_decay: self.weight_decay,
            weight_seed: self.weight_seed,
            feedback_seed: self.feedback_seed,
            noise_seed: self.noise_seed,
            shuffle_seed: self.shuffle_seed,
            alignment_diagnostics: self.alignment.then_some(true),
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Restrict to one task (default: both).
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Independent seeds per grid cell.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Desk-scale MNIST variant (hidden 256,256, 5 epochs).
    #[arg(long)]
    quick: bool,
    #[arg(long, value_parser = parse_precision_arg, default_value = "f32")]
    precision: Precision,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs/bench")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Feedback spec size for the oracle suite, as OUTxIN (e.g. 8x4).
    #[arg(long, default_value = "8x4")]
    size: String,
    /// Negative control: flip analytic gradient signs; the gradient check
    /// must fail loudly.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

#[derive(Args)]
struct EmbedArgs {
    /// Weights file from a training run.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Hidden layer index to embed.
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    tsne_seed: u64,
    #[arg(long, value_parser = parse_precision_arg, default_value = "f32")]
    precision: Precision,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs/embed")]
    out_dir: PathBuf,
}

fn parse_size(raw: &str) -> Result<(usize, usize)> {
    let (a, b) = raw
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow::anyhow!("--size expects OUTxIN, e.g. 8x4"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn main() {
    let cli = Cli::parse();
    let result: Result<()> = match cli.command {
        Command::Train(args) => cmd_train(TrainCmd {
            overrides: args.overrides(),
            config_file: args.config.clone(),
            data_dir: args.data_dir.clone(),
            out_dir: args.out_dir.clone(),
        }),
        Command::Bench(args) => cmd_bench(BenchCmd {
            task: args.task,
            seeds: args.seeds.max(1),
            quick: args.quick,
            precision: args.precision,
            data_dir: args.data_dir,
            out_dir: args.out_dir,
        }),
        Command::Check(args) => parse_size(&args.size).and_then(|size| {
            cmd_check(CheckCmd {
                size,
                inject_sign_flip: args.inject_sign_flip,
            })
        }),
        Command::Embed(args) => cmd_embed(EmbedCmd {
            weights: args.weights,
            task: args.task,
            layer: args.layer,
            perplexity: args.perplexity,
            iterations: args.iterations,
            tsne_seed: args.tsne_seed,
            precision: args.precision,
            data_dir: args.data_dir,
            out_dir: args.out_dir,
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
