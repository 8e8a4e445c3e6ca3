use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dpsoc::duality::{verify_duality, DualitySettings};
use dpsoc::pipeline::{
    compare_runs, emit_comparison_plots, emit_plots, load_record, persist_run, run_pipeline_with, RunConfig,
};

#[derive(Parser)]
#[command(name = "dpsoc", version, about = "EM-guided stochastic trajectory optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write a run directory.
    Run {
        /// TOML or JSON run configuration; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// run directory (overrides the config's output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// run the iLQG baseline only, ignoring the switch rule
        #[arg(long)]
        baseline_only: bool,
    },
    /// Compare two runs of the same task; the first is the numerator.
    Compare {
        /// record.json or a run directory
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render plots for a recorded run.
    Plots {
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerically check the free-energy / relative-entropy duality.
    VerifyDuality {
        #[arg(long)]
        seed: Option<u64>,
        /// directory for duality.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn record_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("record.json")
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            baseline_only,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if baseline_only {
                cfg = cfg.baseline_only();
            }
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
            let output = run_pipeline_with(&cfg, baseline_only)?;
            persist_run(&output, &cfg, &dir).with_context(|| format!("writing {}", dir.display()))?;
            let r = &output.record;
            for it in &r.iterations {
                let note = match (&it.em, &it.refinement) {
                    (Some(em), _) => format!(
                        "  L {:.6} -> {:.6}  cost {:.6} -> {:.6}",
                        em.certificates.likelihood_before,
                        em.certificates.likelihood_after,
                        em.certificates.cost_before,
                        em.certificates.cost_after
                    ),
                    (_, Some(rf)) => format!("  eta {:.3e}  max KL {:.4}", rf.eta, rf.kl.iter().fold(0.0f64, |a, b| a.max(*b))),
                    _ => String::new(),
                };
                println!(
                    "{:>3} {:<8} cost {:>12.4} ± {:<10.4}{note}",
                    it.index,
                    it.phase.label(),
                    it.cost.mean,
                    it.cost.std
                );
            }
            for ev in [&r.baseline_eval, &r.final_eval].into_iter().flatten() {
                println!("eval {:<8} cost {:.4} ± {:.4}", ev.label, ev.cost.mean, ev.cost.std);
            }
            if let Some(f) = &r.failure {
                eprintln!("stage '{}' failed: {}", f.stage, f.message);
            } else if !r.certificates_ok {
                eprintln!("a certificate failed; see {}", dir.join("record.json").display());
            }
            println!("run written to {} ({:.1} s)", dir.display(), output.timing.total_seconds);
            Ok(r.passed())
        }
        Command::Compare { a, b, out } => {
            let ra = load_record(&record_path(&a))?;
            let rb = load_record(&record_path(&b))?;
            let cmp = compare_runs(&ra, &rb)?;
            print!("{cmp}");
            if let Some(dir) = out {
                emit_comparison_plots(&cmp, &dir)?;
                std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&cmp)?)?;
            }
            Ok(true)
        }
        Command::Plots { record, out } => {
            let r = load_record(&record_path(&record))?;
            for p in emit_plots(&r, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::VerifyDuality { seed, out } => {
            let mut settings = DualitySettings::default();
            if let Some(s) = seed {
                settings.seed = s;
            }
            let report = verify_duality(&settings)?;
            print!("{report}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("duality.json"), serde_json::to_string_pretty(&report)?)?;
            }
            Ok(report.passed())
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml_string()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
