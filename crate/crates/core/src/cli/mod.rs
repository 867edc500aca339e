//! Command-line front end. Every subcommand resolves a [`Settings`] from
//! defaults, an optional config file and overrides, snapshots it into the
//! output directory and holds a lock on that directory while it runs.

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::fs;
use std::io::ErrorKind as IoErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorKind, Result};
pub use settings::{Settings, SCHEMA};

/// Environment variable holding the default output root.
pub const OUT_ROOT_ENV: &str = "GRAPHAU_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";
pub const LOCK_FILE: &str = ".lock";
pub const SNAPSHOT_FILE: &str = "resolved.cfg";

#[derive(Debug, Parser)]
#[command(
    name = "graphau-pain",
    version,
    about = "Pain intensity estimation with an action-unit graph"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config key. Repeatable; wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: $GRAPHAU_OUT/<subcommand>, GRAPHAU_OUT defaults to ./runs]
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Relabel, undersample and/or split a manifest.
    Prepare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[arg(long, value_name = "RATE")]
        undersample_keep: Option<f64>,
        /// AU predictions written by `evaluate`.
        #[arg(long, value_name = "FILE")]
        relabel_from: Option<PathBuf>,
        /// Held-out fraction.
        #[arg(long, value_name = "FRACTION")]
        split: Option<f64>,
    },
    /// Fine-tune the representation on AU occurrence.
    PretrainAu {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
    },
    /// Train the pain classifier.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        /// Checkpoint from `pretrain-au`.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// 3cat or 4cat.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Train and score every wiring under identical seeds and data.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        test: Option<PathBuf>,
    },
    /// Render tables and confusion matrices from saved reports.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        evaluation: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        ablation: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Prepare { .. } => "prepare",
            Command::PretrainAu { .. } => "pretrain-au",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Report { .. } => "report",
        }
    }

    fn run_args(&self) -> &RunArgs {
        match self {
            Command::Synth { run, .. }
            | Command::Prepare { run, .. }
            | Command::PretrainAu { run, .. }
            | Command::Train { run, .. }
            | Command::Evaluate { run, .. }
            | Command::Ablate { run, .. }
            | Command::Report { run, .. } => run,
        }
    }

    /// Subcommand flags as config overrides.
    fn flag_overrides(&self) -> Vec<(&'static str, String)> {
        let p = |x: &PathBuf| x.display().to_string();
        let mut v = Vec::new();
        match self {
            Command::Synth { count, .. } => {
                if let Some(c) = count {
                    v.push(("synth.count", c.to_string()));
                }
            }
            Command::Prepare {
                manifest,
                undersample_keep,
                relabel_from,
                split,
                ..
            } => {
                v.extend(manifest.as_ref().map(|m| ("prepare.manifest", p(m))));
                v.extend(undersample_keep.map(|k| ("prepare.undersample_keep", k.to_string())));
                v.extend(
                    relabel_from
                        .as_ref()
                        .map(|m| ("prepare.relabel_from", p(m))),
                );
                v.extend(split.map(|f| ("prepare.split", f.to_string())));
            }
            Command::PretrainAu { train, .. } => {
                v.extend(train.as_ref().map(|m| ("data.train", p(m))));
            }
            Command::Train { train, init, .. } => {
                v.extend(train.as_ref().map(|m| ("data.train", p(m))));
                v.extend(init.as_ref().map(|m| ("pain.init", p(m))));
            }
            Command::Evaluate {
                checkpoint,
                manifest,
                scheme,
                ..
            } => {
                v.extend(checkpoint.as_ref().map(|m| ("eval.checkpoint", p(m))));
                v.extend(manifest.as_ref().map(|m| ("data.test", p(m))));
                v.extend(scheme.as_ref().map(|s| ("eval.scheme", s.clone())));
            }
            Command::Ablate { train, test, .. } => {
                v.extend(train.as_ref().map(|m| ("data.train", p(m))));
                v.extend(test.as_ref().map(|m| ("data.test", p(m))));
            }
            Command::Report {
                evaluation,
                ablation,
                ..
            } => {
                v.extend(evaluation.as_ref().map(|m| ("report.evaluation", p(m))));
                v.extend(ablation.as_ref().map(|m| ("report.ablation", p(m))));
            }
        }
        v
    }

    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve_settings(&self) -> Result<Settings> {
        let run = self.run_args();
        let mut s = Settings::default();
        if let Some(path) = &run.config {
            s.merge_file(path)?;
        }
        for o in &run.overrides {
            s.apply_override(o)?;
        }
        if let Some(seed) = run.seed {
            s.set("seed", &seed.to_string())?;
        }
        for (k, v) in self.flag_overrides() {
            s.set(k, &v)?;
        }
        Ok(s)
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.run_args().out {
            Some(dir) => dir.clone(),
            None => {
                let root = std::env::var_os(OUT_ROOT_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
                root.join(self.name())
            }
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == IoErrorKind::AlreadyExists => Err(Error::InvalidConfig(format!(
                "{} is in use by another run (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    let mut settings = cmd.resolve_settings()?;
    let out = cmd.output_dir();
    let _lock = OutputLock::acquire(&out)?;
    commands::dispatch(cmd, &mut settings, &out)
}

/// Parses arguments and runs; the returned code follows the documented exit
/// statuses.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_set() {
        let cli = Cli::try_parse_from([
            "graphau-pain",
            "train",
            "--set",
            "pain.init=a.bin",
            "--init",
            "b.bin",
            "--seed",
            "3",
        ])
        .unwrap();
        let s = cli.command.resolve_settings().unwrap();
        assert_eq!(s.raw("pain.init"), "b.bin");
        assert_eq!(s.raw("seed"), "3");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }
}
