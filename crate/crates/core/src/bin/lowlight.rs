use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lowlight_core::pipeline::{run_build_profile, run_degrade, run_enhance, run_evaluate};
use lowlight_core::selftest::{check_ids, run_check, run_selftest, SelftestOptions};
use lowlight_core::{Error, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "lowlight", version, about = "Low-light video enhancement and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a dark sequence.
    Enhance {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Clean sequence for PSNR/SSIM.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        stages: Option<usize>,
        #[arg(long)]
        omega: Option<f64>,
        /// Illumination profile JSON (defaults to the bundled one).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Quality model file (defaults to the bundled one).
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize a low-light observation of a clean sequence.
    Degrade {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print (or write) the metric CSV for a sequence.
    Evaluate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build an illumination profile from a directory of images.
    BuildProfile {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in acceptance checks.
    Selftest {
        /// Quality model to check instead of the bundled one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Run only these checks (repeatable; default all).
        #[arg(long = "check")]
        checks: Vec<usize>,
    },
}

fn resolve(common: &Common, mut o: Overrides) -> Result<RunConfig, Error> {
    o.seed = common.seed;
    o.threads = common.threads;
    RunConfig::resolve(common.config.as_deref(), &o)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Enhance { input, output, reference, stages, omega, profile, model, common } => {
            let o = Overrides { stages, omega, input, output, reference, profile, model, ..Overrides::default() };
            let out = run_enhance(&resolve(&common, o)?)?;
            print!("{}", out.report.to_csv());
        }
        Command::Degrade { input, output, common } => {
            run_degrade(&resolve(&common, Overrides { input, output, ..Overrides::default() })?)?;
        }
        Command::Evaluate { input, reference, output, common } => {
            let cfg = resolve(&common, Overrides { input, reference, output, ..Overrides::default() })?;
            let rep = run_evaluate(&cfg)?;
            if cfg.paths.output.is_none() {
                print!("{}", rep.to_csv());
            }
        }
        Command::BuildProfile { corpus, out } => {
            let p = run_build_profile(&corpus, &out)?;
            println!("profile from {} images, mean {:.4}", p.source_count, p.target_mean);
        }
        Command::Selftest { model, threads, checks } => {
            let opts = SelftestOptions { model, threads: threads.unwrap_or(0) };
            let ids: Vec<usize> = check_ids().collect();
            if let Some(bad) = checks.iter().find(|c| !ids.contains(c)) {
                return Err(Error::param("check", format!("no check {bad}; expected 1..={}", ids.len())));
            }
            let results: Vec<_> = if checks.is_empty() {
                run_selftest(&opts)
            } else {
                checks.iter().map(|&id| run_check(id, &opts)).collect()
            };
            for r in &results {
                println!("{r}");
            }
            return Ok(if results.iter().all(|r| r.passed) { 0 } else { 4 });
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
