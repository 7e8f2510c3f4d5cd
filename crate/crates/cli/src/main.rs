use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use eta_core::detector::ParametricDetector;
use eta_core::harness::{self, Benchmark, BenchmarkConfig, Method};

/// Embodied test-time adaptation benchmark.
#[derive(Parser)]
#[command(name = "eta", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file. Defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run this seed only, replacing the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> eta_core::Result<BenchmarkConfig> {
        let mut cfg = match &self.config {
            Some(p) => BenchmarkConfig::load(p)?,
            None => BenchmarkConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the detector and save a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Checkpoint output path (JSON).
        #[arg(short, long, default_value = "detector.json")]
        out: PathBuf,
    },
    /// Run one method over the configured seeds and print every episode.
    Run {
        #[command(flatten)]
        common: Common,
        /// baseline, finetune_gt, eta_single or eta_multi.
        #[arg(short, long, default_value = "eta_multi")]
        method: Method,
        /// Write episodes.csv, traces.csv and summary.json here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method and write the result files.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
    },
    /// Repeat the benchmark for several score thresholds.
    SweepEps {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = [3.0, 4.0, 5.0])]
        values: Vec<f64>,
        /// One sub-directory per threshold plus sweep.csv.
        #[arg(short, long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Top-candidate accuracy of a detector on held-out target scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Detector checkpoint; pretrains from the config when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-family, per-method success rates for bar charts.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Read rows from an existing episodes.csv instead of running.
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> eta_core::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| eta_core::EtaError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| eta_core::EtaError::io(path, e))
}

fn print_summaries(report: &harness::RunReport) {
    println!(
        "{:<12} {:>8} {:>9} {:>9} {:>8} {:>8}",
        "method", "episodes", "accuracy", "delta", "mean_sg", "mean_ee"
    );
    for s in &report.summaries {
        println!(
            "{:<12} {:>8} {:>9.2} {:>9} {:>8.2} {:>8.2}",
            s.method.name(),
            s.episodes,
            s.accuracy,
            s.delta_vs_baseline
                .map_or("-".into(), |d| format!("{d:+.2}")),
            s.mean_sg,
            s.mean_ee
        );
    }
}

fn run(cli: Cli) -> eta_core::Result<()> {
    match cli.command {
        Command::Pretrain { common, out } => {
            let cfg = common.load()?;
            let (det, history) = harness::pretrain_detector(&cfg)?;
            det.save(&out)?;
            if let (Some(first), Some(last)) = (history.first(), history.last()) {
                println!("loss {first:.5} -> {last:.5} over {} epochs", history.len());
            }
            println!("saved {}", out.display());
        }
        Command::Run {
            common,
            method,
            out,
        } => {
            let mut cfg = common.load()?;
            cfg.methods = vec![method];
            let report = harness::run_benchmark(&cfg)?;
            for r in &report.rows {
                println!(
                    "seed {} ep {:>3} {:<8} {:<7} start {} sg {:>2} ee {:>6.2} S {:>7} {}",
                    r.seed,
                    r.episode,
                    r.family.name(),
                    r.object,
                    r.start_group,
                    r.sg,
                    r.ee,
                    r.max_score.map_or("-".into(), |s| format!("{s:.2}")),
                    if r.success { "ok" } else { "miss" }
                );
            }
            print_summaries(&report);
            if let Some(dir) = out {
                report.write_to(&dir)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Bench { common, out } => {
            let cfg = common.load()?;
            let report = harness::run_benchmark(&cfg)?;
            report.write_to(&out)?;
            write(&out.join("config.toml"), &cfg.to_toml_string()?)?;
            print_summaries(&report);
            println!("config {} -> {}", report.config_hash, out.display());
        }
        Command::SweepEps {
            common,
            values,
            out,
        } => {
            let cfg = common.load()?;
            let entries = harness::sweep_epsilon(&cfg, &values)?;
            for e in &entries {
                let dir = out.join(format!("eps_{}", e.epsilon));
                e.report.write_to(&dir)?;
                info!("wrote {}", dir.display());
            }
            write(&out.join("sweep.csv"), &harness::sweep_csv(&entries)?)?;
            println!(
                "{:>7} {:<12} {:>9} {:>8} {:>9}",
                "epsilon", "method", "accuracy", "mean_ee", "retained"
            );
            for r in harness::sweep_table(&entries) {
                println!(
                    "{:>7.1} {:<12} {:>9.2} {:>8.2} {:>9}",
                    r.epsilon,
                    r.method.name(),
                    r.accuracy,
                    r.mean_ee,
                    r.retained_samples
                );
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let det = match checkpoint {
                Some(p) => ParametricDetector::load(p)?,
                None => harness::pretrain_detector(&cfg)?.0,
            };
            let scenes = harness::heldout_scenes(&cfg)?;
            let acc = harness::detector_accuracy(&det, &scenes)?;
            println!(
                "held-out top-candidate accuracy {:.2}% over {} scenes",
                100.0 * acc,
                scenes.len()
            );
        }
        Command::PlotData {
            common,
            episodes,
            out,
        } => {
            let rows = match episodes {
                Some(p) => harness::read_episode_rows(p)?,
                None => {
                    let cfg = common.load()?;
                    Benchmark::prepare(&cfg)?.run(&cfg)?.rows
                }
            };
            let text = harness::plot_csv(&harness::plot_rows(&rows))?;
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
