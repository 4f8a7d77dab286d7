//! `sqzlab` — run the squeezed-light experiment pipeline from the shell.
//!
//! Each pipeline subcommand runs every stage up to and including its own,
//! reusing the kernel cache in the output directory when the configuration
//! fingerprint matches. Exit codes: 0 success, 1 configuration error,
//! 2 numerical/invariant failure, 3 I/O error.

use clap::{Args, Parser, Subcommand};
use sqzlab_core::config::load_experiment;
use sqzlab_core::pipeline::{Report, Stage, ingest_traces, run_pipeline};
use sqzlab_core::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sqzlab",
    version,
    about = "Simulate and analyze single-pass multimode squeezed light",
    after_help = "Without --config, the built-in default experiment (2 mm BBO, \
                  397.5 nm pump) is used. Artifacts land in the --out directory \
                  (default: ./out)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML); omit for the built-in default
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the RNG seed from the config
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Override the output directory from the config
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override a config value by dotted path, e.g.
    /// `--override analysis.efficiency=0.3` or
    /// `--override 'pump.waist={ value = 50, unit = "um" }'` (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Stop after this stage instead of the one the subcommand implies
    #[arg(long, value_name = "NAME")]
    stage: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the gain kernel and store the cache
    Kernel(Common),
    /// … and extract the squeezing mode spectrum and detection modes
    Modes(Common),
    /// … and synthesize per-mode homodyne traces
    Homodyne(Common),
    /// … and measure, assemble, and diagonalize covariance blocks
    Covariance(Common),
    /// Run the whole pipeline and write report.json
    Report(Common),
    /// Analyze measured trace CSVs declared by a manifest
    Ingest {
        /// Manifest JSON listing basis labels and trace files
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let (implied, common, manifest) = match cli.command {
        Command::Kernel(c) => (Stage::Kernel, c, None),
        Command::Modes(c) => (Stage::Modes, c, None),
        Command::Homodyne(c) => (Stage::Homodyne, c, None),
        Command::Covariance(c) => (Stage::Covariance, c, None),
        Command::Report(c) => (Stage::Report, c, None),
        Command::Ingest { manifest, common } => (Stage::Report, common, Some(manifest)),
    };
    let (resolved, echo) = load_experiment(
        common.config.as_deref(),
        &common.overrides,
        common.seed,
        common.out.as_deref(),
    )?;
    if let Some(manifest) = manifest {
        if common.stage.is_some() {
            return Err(Error::Config("--stage does not apply to ingest".into()));
        }
        let report = ingest_traces(&manifest, &resolved, &echo)?;
        print_covariance_summaries(&report);
        println!("ingest complete; artifacts in {}", resolved.out_dir.display());
        return Ok(());
    }
    let stage = match &common.stage {
        Some(name) => name.parse::<Stage>()?,
        None => implied,
    };
    let report = run_pipeline(&resolved, &echo, stage)?;
    if let Some(report) = &report {
        print_report_summary(report);
    }
    println!("completed stage '{}'; artifacts in {}", stage.name(), resolved.out_dir.display());
    Ok(())
}

fn print_report_summary(report: &Report) {
    if let Some(g) = &report.gain {
        match g.target_db {
            Some(db) => println!("gain: {:.6} (calibrated to {db} dB)", g.value),
            None => println!("gain: {:.6} (fixed)", g.value),
        }
    }
    if let Some(s) = &report.spectrum {
        println!(
            "spectrum: {} modes retained, {} above 0.1 of the leading value",
            s.retained, s.above_tenth
        );
    }
    if !report.squeezing.is_empty() {
        println!("squeezing (dB, mean ± SE over periods):");
        for s in &report.squeezing {
            println!(
                "  {:>4}: {:+.3} ± {:.3} / {:+.3} ± {:.3}",
                s.label, s.squeezed_db, s.squeezed_db_se, s.antisqueezed_db, s.antisqueezed_db_se
            );
        }
    }
    print_covariance_summaries(report);
}

fn print_covariance_summaries(report: &Report) {
    let mut sets: Vec<&sqzlab_core::pipeline::CovarianceReport> = Vec::new();
    sets.extend(report.temporal.as_ref());
    sets.extend(report.spatial.iter());
    sets.extend(report.ingested.as_ref());
    for c in sets {
        println!(
            "covariance[{}]: basis {{{}}}, {} significant X / {} significant P, multimode: {}",
            c.name,
            c.basis.join(", "),
            c.verdict.significant_x,
            c.verdict.significant_p,
            c.verdict.multimode
        );
    }
}
