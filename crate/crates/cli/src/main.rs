//! `finmem` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use finmem_core::agent::RiskMode;
use finmem_core::config::{ConfigError, DataPaths, ProviderKind, RunConfig};
use finmem_core::report::{compare, RunReport};
use finmem_core::runner::{self, IngestSummary, RunInputs};
use finmem_core::synthetic::{self, SyntheticSpec};
use finmem_core::Error;

#[derive(Parser)]
#[command(name = "finmem", version, about = "Layered-memory trading agent backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the configured data and print counts per document kind.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train then test the agent and write report files.
    Run(RunArgs),
    /// Print a metric table for two or more report files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
    /// Write a synthetic dataset and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "leading-news")]
        preset: Preset,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Trading days assigned to training.
        #[arg(long, default_value_t = 20)]
        train_days: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    LeadingNews,
    DownTrend,
    Noise,
    LosingStreak,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Risk {
    #[value(name = "risk-seeking")]
    Seeking,
    #[value(name = "risk-averse")]
    Averse,
    SelfAdaptive,
}

/// Each override flag sets exactly one config key.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ticker: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    #[arg(long, value_enum)]
    risk: Option<Risk>,
    #[arg(long)]
    k_top: Option<usize>,
    #[arg(long)]
    m_window: Option<usize>,
    #[arg(long)]
    switch_window: Option<usize>,
    #[arg(long)]
    promotion_threshold: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    risk_free_daily: Option<f64>,
    #[arg(long)]
    annualize_sharpe: Option<bool>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Output directory (`output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this many seeds starting at `seed` and report metric means.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Run trials on separate threads.
    #[arg(long)]
    parallel: bool,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

impl RunArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.ticker {
            c.ticker = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = Some(v);
        }
        if let Some(v) = self.provider {
            c.provider = match v {
                Provider::Mock => ProviderKind::Mock,
                Provider::Remote => ProviderKind::Remote,
            };
        }
        if let Some(v) = self.risk {
            c.risk = match v {
                Risk::Seeking => RiskMode::RiskSeeking,
                Risk::Averse => RiskMode::RiskAverse,
                Risk::SelfAdaptive => RiskMode::SelfAdaptive,
            };
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(k_top, m_window, switch_window, promotion_threshold, temperature, max_retries, risk_free_daily, annualize_sharpe, embedding_dim);
        if let Some(v) = &self.out {
            c.output_dir = v.clone();
        }
    }
}

/// Parses and resolves paths without validating, so flags can fix the file.
fn read_config(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(dir) = path.parent() {
        config.resolve_paths(dir);
    }
    Ok(config)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ingest(config: &Path) -> Result<(), Error> {
    let config = read_config(config)?;
    let inputs = RunInputs::load(&config)?;
    println!("{}", IngestSummary::of(&inputs.warehouse, &config.ticker)?);
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let mut config = read_config(&args.config)?;
    args.apply(&mut config);
    config.validate()?;
    if args.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    if args.trials == 0 {
        return Err(ConfigError::Invalid {
            field: "trials".into(),
            reason: "must be >= 1".into(),
        }
        .into());
    }
    let inputs = RunInputs::load(&config)?;
    let out = &config.output_dir;
    if args.trials == 1 {
        let artifacts = runner::execute(&config, &inputs)?;
        artifacts.write_to(out)?;
        let rows = [
            (artifacts.report.label.clone(), artifacts.report.metrics.clone()),
            (artifacts.baseline.label.clone(), artifacts.baseline.metrics.clone()),
        ];
        print!("{}", compare(&rows)?);
        println!("wrote {}", out.display());
        return Ok(());
    }
    let (runs, summary) = runner::run_trials(&config, &inputs, args.trials, args.parallel)?;
    for r in &runs {
        let seed = r.report.config.seed.unwrap_or(0);
        r.write_to(&out.join(format!("trial-{seed}")))?;
    }
    let path = out.join("trials.json");
    std::fs::write(&path, summary.to_json()).map_err(io_err(&path))?;
    let mean = |m: &finmem_core::report::MeanMetrics| {
        format!(
            "cumulative return {:.4}%, sharpe {}",
            m.cumulative_return,
            m.sharpe.map_or("n/a".into(), |s| format!("{s:.4}"))
        )
    };
    println!("seeds {:?}", summary.seeds);
    println!("FinMem mean: {}", mean(&summary.agent));
    println!("B&H mean: {}", mean(&summary.baseline));
    println!("wrote {}", out.display());
    Ok(())
}

fn compare_reports(paths: &[PathBuf]) -> Result<(), Error> {
    let reports = paths
        .iter()
        .map(RunReport::load)
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<(String, _)> = Vec::new();
    for (report, path) in reports.into_iter().zip(paths) {
        let label = if rows.iter().any(|(l, _)| *l == report.label) {
            format!("{} ({})", report.label, path.display())
        } else {
            report.label
        };
        rows.push((label, report.metrics));
    }
    print!("{}", compare(&rows)?);
    Ok(())
}

fn synth(out: &Path, preset: Preset, seed: u64, train_days: usize) -> Result<(), Error> {
    let spec = match preset {
        Preset::LeadingNews => SyntheticSpec::leading_news(seed),
        Preset::DownTrend => SyntheticSpec::down_trend(seed),
        Preset::Noise => SyntheticSpec::noise(seed),
        Preset::LosingStreak => SyntheticSpec::with_losing_streak(seed),
    };
    if train_days == 0 || train_days + 1 >= spec.trading_days {
        return Err(ConfigError::Invalid {
            field: "train_days".into(),
            reason: format!("must lie in 1..{}", spec.trading_days - 1),
        }
        .into());
    }
    let data = synthetic::generate(&spec);
    data.write_to(out).map_err(io_err(out))?;
    let mut config = RunConfig::new(
        spec.ticker.clone(),
        DataPaths {
            prices: synthetic::PRICES_FILE.into(),
            documents: synthetic::DOCUMENTS_FILE.into(),
            metadata: synthetic::METADATA_FILE.into(),
            rulebook: None,
        },
        data.windows(train_days),
    );
    config.seed = Some(seed);
    let path = out.join("config.toml");
    std::fs::write(&path, config.to_toml()).map_err(io_err(&path))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest { config } => ingest(config),
        Command::Run(args) => run(args),
        Command::Compare { reports } => compare_reports(reports),
        Command::Synth {
            out,
            preset,
            seed,
            train_days,
        } => synth(out, *preset, *seed, *train_days),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
