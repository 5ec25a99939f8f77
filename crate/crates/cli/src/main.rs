use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use audit_cli::config::LoadedConfig;
use audit_cli::report::cmd_report;
use audit_cli::stages::{cmd_classify, cmd_estimate, cmd_generate, cmd_render, cmd_score, Run};
use audit_cli::validate::cmd_validate;
use audit_core::dml::Corruption;
use audit_core::popgen::fixtures::{synthetic_sources, write_bundle, OCCUPATIONS};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "audit",
    version,
    about = "Path-specific fairness audit of resume screeners"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorruptArg {
    Mu,
    Pi,
}

impl From<CorruptArg> for Corruption {
    fn from(c: CorruptArg) -> Self {
        match c {
            CorruptArg::Mu => Corruption::MuSide,
            CorruptArg::Pi => Corruption::PiSide,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample profiles for every configured occupation.
    Generate,
    /// Render profiles into resume text.
    Render,
    /// Score resumes with the configured scorer.
    Score,
    /// Cross-fit and bootstrap the five effects per occupation.
    Estimate {
        /// Replace one nuisance group by a constant (diagnostic only).
        #[arg(long, value_enum)]
        corrupt: Option<CorruptArg>,
    },
    /// Assign discrimination cases from the estimates.
    Classify,
    /// Write JSON, text and plot-series reports.
    Report,
    /// All stages in order.
    Run,
    /// Full pipeline against the exact effects of the synthetic scorer.
    ValidateSynthetic {
        #[arg(long, value_enum)]
        corrupt: Option<CorruptArg>,
    },
    /// Write a synthetic source bundle (survey, panel, name tables).
    Fixtures {
        #[arg(long, default_value_t = 20_000)]
        pums_per_job: usize,
        #[arg(long, default_value_t = 1_500)]
        panel_per_job: usize,
    },
}

/// Exclusive hold on an output directory for the lifetime of the value.
struct DirLock {
    path: PathBuf,
    _file: File,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".audit.lock");
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                )
            })?;
        writeln!(file, "{}", std::process::id())?;
        Ok(DirLock { path, _file: file })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Command::Fixtures {
        pums_per_job,
        panel_per_job,
    } = cli.command
    {
        let Some(out) = cli.out else {
            bail!("fixtures needs --out DIR");
        };
        let jobs: Vec<&str> = OCCUPATIONS.iter().map(|o| o.0).collect();
        let bundle = synthetic_sources(&jobs, pums_per_job, panel_per_job, cli.seed.unwrap_or(0))?;
        std::fs::create_dir_all(&out)?;
        write_bundle(&out, &bundle)?;
        println!("wrote source bundle to {}", out.display());
        return Ok(());
    }
    let Some(config) = cli.config else {
        bail!("--config is required");
    };
    let run = Run {
        loaded: LoadedConfig::load(&config, cli.seed, cli.out)?,
    };
    let _lock = DirLock::acquire(&run.cfg().out_dir)?;
    let done = match cli.command {
        Command::Generate => cmd_generate(&run)?,
        Command::Render => cmd_render(&run)?,
        Command::Score => cmd_score(&run)?,
        Command::Estimate { corrupt } => cmd_estimate(&run, corrupt.map(Into::into))?,
        Command::Classify => cmd_classify(&run)?,
        Command::Report => cmd_report(&run)?,
        Command::Run => {
            for stage in [cmd_generate, cmd_render, cmd_score] {
                eprintln!("{}", stage(&run)?);
            }
            eprintln!("{}", cmd_estimate(&run, None)?);
            eprintln!("{}", cmd_classify(&run)?);
            cmd_report(&run)?
        }
        Command::ValidateSynthetic { corrupt } => {
            let (pass, text) = cmd_validate(&run, corrupt.map(Into::into))?;
            print!("{text}");
            if !pass {
                bail!("synthetic validation failed");
            }
            return Ok(());
        }
        Command::Fixtures { .. } => unreachable!(),
    };
    println!("{}", done.trim_end());
    Ok(())
}
