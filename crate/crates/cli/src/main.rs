use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rnnattn_core::backtest::BacktestResult;
use rnnattn_core::metrics::MetricsReport;
use rnnattn_core::pipeline::run::{
    load_forecasts, prepare_inputs, resolve_plan, stage_backtest, stage_evaluate, stage_pretrain,
    stage_train, train_all, BacktestTables,
};
use rnnattn_core::pipeline::{run, write_synth, Dataset, RunConfig, RunManifest, SynthConfig};
use rnnattn_core::{Error, ErrorCategory};

/// Pretrained recurrent attention forecasters: data, training, evaluation and backtests.
#[derive(Debug, Parser)]
#[command(name = "rnnattn", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic factor/return/cap data set with a planted linear signal.
    Synth(SynthArgs),
    /// Fit the autoencoder for every refit chunk and write its log and inputs.
    Pretrain(ConfigArgs),
    /// Pretrain and train every model, writing forecasts.
    Train(ConfigArgs),
    /// Compute metrics and DM tests from persisted forecasts.
    Evaluate(ConfigArgs),
    /// Run the long-only backtests from persisted forecasts.
    Backtest(ConfigArgs),
    /// Evaluate and backtest persisted forecasts and print the tables.
    Report(ConfigArgs),
    /// Full pipeline with a manifest.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the seed (also `RNNATTN_SEED`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (also `RNNATTN_OUT`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(
        short,
        long,
        required_unless_present = "manifest",
        conflicts_with = "manifest"
    )]
    config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Override the seed (also `RNNATTN_SEED`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (also `RNNATTN_OUT`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for the CSV files and `truth.json`.
    #[arg(short, long)]
    out: PathBuf,
    /// Generator settings (TOML); flags below override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stocks: Option<usize>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    factors: Option<usize>,
    /// Noise standard deviation as a multiple of the signal's.
    #[arg(long)]
    noise: Option<f64>,
    /// Returns carry no signal.
    #[arg(long)]
    null: bool,
    /// Fraction of factor cells blanked at random.
    #[arg(long)]
    missing: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env()?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    if let Some(t) = threads {
        cfg.run.threads = t;
    }
    Ok(cfg)
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        load_config(&self.config, self.seed, self.out.clone(), self.threads)
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = a.stocks {
        cfg.stocks = v;
    }
    if let Some(v) = a.months {
        cfg.months = v;
    }
    if let Some(v) = a.factors {
        cfg.factors = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_ratio = v;
    }
    if let Some(v) = a.missing {
        cfg.missing_frac = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.null |= a.null;
    let data = rnnattn_core::pipeline::synth(&cfg)?;
    write_synth(&a.out, &data)?;
    println!(
        "wrote {} months x {} stocks, {} factors to {}",
        cfg.months,
        cfg.stocks,
        cfg.factors,
        a.out.display()
    );
    Ok(())
}

fn print_files(files: &[String], cfg: &RunConfig) {
    for f in files {
        println!("{}", cfg.output.dir.join(f).display());
    }
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(cfg)?;
    let plan = resolve_plan(&cfg.period, &ds.factors.dates)?;
    let inputs = prepare_inputs(cfg, &ds, &plan)?;
    print_files(&stage_pretrain(cfg, &ds, &plan, &inputs)?, cfg);
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(cfg)?;
    let plan = resolve_plan(&cfg.period, &ds.factors.dates)?;
    let inputs = prepare_inputs(cfg, &ds, &plan)?;
    let mut files = stage_pretrain(cfg, &ds, &plan, &inputs)?;
    let out = train_all(cfg, &ds, &plan, &inputs)?;
    files.extend(stage_train(cfg, &out)?);
    print_files(&files, cfg);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn print_metrics(report: &MetricsReport) {
    println!(
        "{:<12} {:>10} {:>12} {:>10} {:>8}",
        "model", "avg_R2", "avg_MSE", "ann_alpha", "t"
    );
    for m in &report.models {
        println!(
            "{:<12} {:>10} {:>12.6} {:>10.4} {:>8}",
            m.model,
            fmt_opt(m.avg_r2),
            m.avg_mse,
            m.ann_alpha,
            fmt_opt(m.alpha_t)
        );
    }
}

fn print_backtests(tables: &BacktestTables) {
    for (w, rows) in tables {
        println!("\n{} weighted", w.name());
        println!(
            "{:<12} {:>10} {:>8} {:>8} {:>8}",
            "strategy", "ann_ret", "SR", "SO", "MDD"
        );
        for (name, r) in rows {
            print_row(name, r);
        }
    }
}

fn print_row(name: &str, r: &BacktestResult) {
    println!(
        "{:<12} {:>10.4} {:>8} {:>8} {:>8.4}",
        name,
        r.ann_return,
        fmt_opt(r.sharpe),
        fmt_opt(r.sortino),
        r.max_drawdown
    );
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let sets = load_forecasts(cfg)?;
    let (report, files) = stage_evaluate(cfg, &sets)?;
    print_files(&files, cfg);
    Ok(report)
}

fn cmd_backtest(cfg: &RunConfig) -> Result<BacktestTables> {
    let ds = Dataset::load(cfg)?;
    let sets = load_forecasts(cfg)?;
    let (tables, files) = stage_backtest(cfg, &ds, &sets)?;
    print_files(&files, cfg);
    Ok(tables)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let cfg = match (&a.config, &a.manifest) {
        (Some(p), _) => load_config(p, a.seed, a.out.clone(), a.threads)?,
        (None, Some(m)) => {
            let mut cfg = RunManifest::load(m)?.config;
            cfg.apply_env()?;
            if let Some(s) = a.seed {
                cfg.run.seed = s;
            }
            if let Some(o) = &a.out {
                cfg.output.dir = o.clone();
            }
            if let Some(t) = a.threads {
                cfg.run.threads = t;
            }
            cfg.validate()?;
            cfg
        }
        (None, None) => unreachable!("clap requires --config or --manifest"),
    };
    let summary = run(&cfg)?;
    print_metrics(&summary.metrics);
    print_backtests(&summary.backtests);
    println!(
        "\nmanifest: {}",
        cfg.output.dir.join("manifest.json").display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(&a.load()?),
        Command::Train(a) => cmd_train(&a.load()?),
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a.load()?)?;
            print_metrics(&report);
            Ok(())
        }
        Command::Backtest(a) => {
            let tables = cmd_backtest(&a.load()?)?;
            print_backtests(&tables);
            Ok(())
        }
        Command::Report(a) => {
            let cfg = a.load()?;
            print_metrics(&cmd_evaluate(&cfg)?);
            print_backtests(&cmd_backtest(&cfg)?);
            Ok(())
        }
        Command::Run(a) => cmd_run(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::category)
    {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Numeric) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
