use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use backscatter_ris::harness::{
    default_distance_grid, default_element_grid, emit_csv, oracle_cases, oracle_report, run_csi_impact,
    run_gain_vs_distance, run_gain_vs_elements, run_power_trace, run_random_search_experiment, Report, ScenarioConfig,
    SpacingMode, DEFAULT_MU_LIST,
};
use backscatter_ris::optimizer::{brute_force, format_instance, optimal_config, parse_instance};
use backscatter_ris::units::format_sig6;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "RIS_SIM_THREADS";

#[derive(Parser)]
#[command(name = "ris-sim", version, about = "Monte Carlo simulator for tag-based backscatter surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file overriding the experiment's preset scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Spacing {
    Dense,
    HalfLambda,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Mean gain versus distance between the surface and the link.
    GainVsDistance {
        #[command(flatten)]
        common: Common,
        /// Comma-separated distances in meters.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Mean gain versus number of elements.
    GainVsElements {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "both")]
        spacing: Spacing,
    },
    /// Gain with perfect versus estimated channel knowledge.
    CsiImpact {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        /// Use this estimation error variance for every channel.
        #[arg(long)]
        mmse: Option<f64>,
    },
    /// Running-max gain of randomly chosen tag subsets.
    RandomSearch {
        #[command(flatten)]
        common: Common,
        /// Comma-separated numbers of activated tags.
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<usize>>,
        #[arg(long, default_value_t = 200)]
        configs: usize,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Destination power trace while the reader cycles through configurations.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        mu: usize,
        #[arg(long, default_value_t = 3)]
        configs: usize,
    },
    /// Optimal loads for an instance dump.
    Optimize {
        instance: PathBuf,
        /// Also run exhaustive search and report both amplitudes.
        #[arg(long)]
        brute: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compares the sweep optimizer with exhaustive search on random instances.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        binary_cases: usize,
        #[arg(long, default_value_t = 100)]
        multi_cases: usize,
        /// Relative amplitude tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        /// Directory receiving dumps of failing instances.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
}

fn scenario(preset: ScenarioConfig, common: &Common) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => preset.overlay_file(path)?,
        None => preset,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing to stdout"),
    }
}

fn write_report(report: &Report, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => Ok(emit_csv(report, path)?),
        None => write_output(&report.to_csv(), None),
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value.trim().parse().with_context(|| format!("{THREADS_ENV}={value:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GainVsDistance { common, grid } => {
            let cfg = scenario(ScenarioConfig::distance_preset(), &common)?;
            let grid = grid.unwrap_or_else(default_distance_grid);
            write_report(&run_gain_vs_distance(&cfg, &grid)?, common.out.as_deref())
        }
        Command::GainVsElements { common, grid, spacing } => {
            let cfg = scenario(ScenarioConfig::elements_preset(), &common)?;
            let grid = grid.unwrap_or_else(default_element_grid);
            let modes: &[SpacingMode] = match spacing {
                Spacing::Dense => &[SpacingMode::Dense],
                Spacing::HalfLambda => &[SpacingMode::HalfLambda],
                Spacing::Both => &[SpacingMode::Dense, SpacingMode::HalfLambda],
            };
            write_report(&run_gain_vs_elements(&cfg, &grid, modes)?, common.out.as_deref())
        }
        Command::CsiImpact { common, grid, mmse } => {
            let cfg = scenario(ScenarioConfig::csi_preset(), &common)?;
            let grid = grid.unwrap_or_else(default_element_grid);
            write_report(&run_csi_impact(&cfg, &grid, mmse)?, common.out.as_deref())
        }
        Command::RandomSearch { common, mu, configs, repetitions } => {
            let cfg = scenario(ScenarioConfig::search_preset(), &common)?;
            let mu = mu.unwrap_or_else(|| DEFAULT_MU_LIST.to_vec());
            let report = run_random_search_experiment(&cfg, &mu, configs, repetitions)?;
            write_report(&report, common.out.as_deref())
        }
        Command::Trace { common, mu, configs } => {
            let cfg = scenario(ScenarioConfig::search_preset(), &common)?;
            let trace = run_power_trace(&cfg, mu, configs)?;
            write_output(&trace.to_csv(), common.out.as_deref())
        }
        Command::Optimize { instance, brute, out } => {
            let text = fs::read_to_string(&instance).with_context(|| format!("reading {}", instance.display()))?;
            let terms = parse_instance(&text)?;
            let best = optimal_config(&terms);
            let mut csv = String::from("element,load\n");
            for (m, k) in best.config.choice.iter().enumerate() {
                csv.push_str(&format!("{m},{k}\n"));
            }
            write_output(&csv, out.as_deref())?;
            eprintln!("amplitude {}", format_sig6(best.amplitude));
            if brute {
                let exact = brute_force(&terms)?;
                eprintln!("exhaustive amplitude {}", format_sig6(exact.amplitude));
            }
            Ok(())
        }
        Command::OracleCheck { common, binary_cases, multi_cases, tolerance, dump_dir } => {
            let cfg = scenario(ScenarioConfig::distance_preset(), &common)?;
            let cases = oracle_cases(&cfg, binary_cases, multi_cases)?;
            write_report(&oracle_report(&cases), common.out.as_deref())?;
            let failures: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].relative_gap() > tolerance).collect();
            if let Some(dir) = &dump_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                for &i in &failures {
                    let path = dir.join(format!("instance-{i}.txt"));
                    fs::write(&path, format_instance(&cases[i].terms)).with_context(|| format!("writing {}", path.display()))?;
                }
            }
            if !failures.is_empty() {
                bail!("{} of {} instances differ from exhaustive search by more than {tolerance}", failures.len(), cases.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
