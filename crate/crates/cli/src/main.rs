use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ggnn::check::{equivalence_suite, gradient_suite, CheckOutcome};
use ggnn::experiment::{
    cmd_compare, cmd_sweep, cmd_train, ExperimentSpec, Overrides, Precision, DEFAULT_ALPHAS, DEFAULT_LAYERS,
};
use ggnn::model::Variant;
use ggnn::Error;

#[derive(Parser)]
#[command(name = "ggnn", version, about = "Gated graph networks on citation graphs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// cora, citeseer, or custom (with --content and --cites)
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    content: Option<PathBuf>,
    #[arg(long, global = true)]
    cites: Option<PathBuf>,
    /// TOML spec file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant for every seed and write reports, curves and checkpoints
    Train {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run all four variants with their preset settings and write compare.csv
    Compare {
        #[arg(long)]
        num_layers: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Grid over alpha and/or depth and write sweep.csv
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated list, or `default`
        #[arg(long)]
        alphas: Option<String>,
        /// Comma-separated list, or `default`
        #[arg(long)]
        layers: Option<String>,
    },
    /// Gradient-check and equivalence self-test
    Check {
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Comma-separated values, or `default` for the built-in grid.
fn parse_list<T>(flag: &str, s: &str, default: &[T]) -> Result<Vec<T>, Error>
where
    T: std::str::FromStr + Clone,
    T::Err: std::fmt::Display,
{
    if s == "default" {
        return Ok(default.to_vec());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|e| Error::Config(format!("--{flag}: `{x}`: {e}")))
        })
        .collect()
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            content: self.content.clone(),
            cites: self.cites.clone(),
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            runs: self.runs,
            threads: self.threads,
            precision: self.precision,
            ..Overrides::default()
        }
    }
}

impl ModelArgs {
    fn apply(&self, o: &mut Overrides) {
        o.variant = self.variant;
        o.epochs = self.epochs;
        o.learning_rate = self.lr;
        o.weight_decay = self.weight_decay;
        o.dropout = self.dropout;
        o.hidden = self.hidden;
        o.num_layers = self.num_layers;
        o.alpha = self.alpha;
    }
}

fn print_outcomes(outcomes: &[CheckOutcome]) -> bool {
    for o in outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    outcomes.iter().all(|o| o.passed)
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut spec = match &cli.global.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    let mut o = cli.global.overrides();
    match &cli.command {
        Command::Train { model } | Command::Sweep { model, .. } => model.apply(&mut o),
        Command::Compare { num_layers, alpha } => {
            o.num_layers = *num_layers;
            o.alpha = *alpha;
        }
        Command::Check { .. } => {}
    }
    if let Command::Sweep { alphas, layers, .. } = &cli.command {
        o.alphas = alphas
            .as_deref()
            .map(|a| parse_list("alphas", a, &DEFAULT_ALPHAS))
            .transpose()?;
        o.layers = layers
            .as_deref()
            .map(|l| parse_list("layers", l, &DEFAULT_LAYERS))
            .transpose()?;
    }
    spec.apply(&o);

    match cli.command {
        Command::Train { .. } => {
            let report = cmd_train(&spec)?;
            let a = &report.aggregate;
            println!(
                "{} {} on {}: test {} = {:.4} ± {:.4} over {} runs ({} diverged)",
                report.model.variant,
                report.precision,
                report.dataset,
                a.metric,
                a.test_mean.unwrap_or(f64::NAN),
                a.test_std.unwrap_or(f64::NAN),
                a.runs_completed,
                a.runs_diverged
            );
        }
        Command::Compare { .. } => {
            for row in cmd_compare(&spec)? {
                let a = &row.report.aggregate;
                println!(
                    "{:<15} train {:.4}  test {:.4} ± {:.4}",
                    row.variant.name(),
                    a.train_mean.unwrap_or(f64::NAN),
                    a.test_mean.unwrap_or(f64::NAN),
                    a.test_std.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Sweep { .. } => {
            for p in cmd_sweep(&spec)? {
                println!(
                    "alpha {:<5} layers {:<2} test {:.4} ± {:.4}",
                    p.alpha,
                    p.num_layers,
                    p.test_mean.unwrap_or(f64::NAN),
                    p.test_std.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Check { trials } => {
            let seed = spec.train.base_seed;
            let mut ok = print_outcomes(&gradient_suite(trials, seed)?);
            ok &= print_outcomes(&equivalence_suite(seed)?);
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
