use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use spatialgeo_core::training::Stage;

use crate::config::{parse_switch, RunConfig};
use crate::error::{Error, ExitCode, Result};
use crate::pipeline::{self, EvalRequest, ScoreInput, TrainRequest};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SPATIALGEO_OUT";

#[derive(Debug, Parser)]
#[command(name = "spatialgeo", version, about = "Geometry and semantics fusion for spatial question answering")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Configuration override, `key=value` with a dotted key. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    MakeData {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Render PPM files instead of inline scenes.
        #[arg(long)]
        images: bool,
    },
    /// Run one training stage (0 base, 1 alignment, 2 fine-tuning).
    Train {
        #[arg(long)]
        stage: u8,
        /// Checkpoint to start or resume from. Required for stage 2.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Training JSONL.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        switches: Switches,
    },
    /// Answer and score a dataset with a checkpoint.
    Eval {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        switches: Switches,
    },
    /// Score answers without a model.
    Score {
        /// Records with `gt_value`/`gt_unit`, or `{id, answer}` lines when
        /// `--data` is given.
        answers: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Encoder similarity on matched and unrelated scene pairs.
    Diagnose {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
    /// Check a dataset file.
    Validate { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct Switches {
    #[arg(long)]
    pub variant: Option<String>,
    /// Stage-2 dropping, on or off.
    #[arg(long)]
    pub drop: Option<String>,
    /// Semantic branch, on or off.
    #[arg(long)]
    pub clip: Option<String>,
    /// Geometry branch, on or off.
    #[arg(long)]
    pub geometry: Option<String>,
}

impl Switches {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.variant {
            cfg.model.variant = v.clone();
        }
        if let Some(d) = &self.drop {
            cfg.train.drop = parse_switch(d)?;
        }
        if let Some(c) = &self.clip {
            cfg.model.clip = Some(parse_switch(c)?);
        }
        if let Some(g) = &self.geometry {
            cfg.model.geometry = Some(parse_switch(g)?);
        }
        Ok(())
    }
}

fn config(common: &Common, switches: Option<&Switches>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(sw) = switches {
        sw.apply(&mut cfg)?;
        // Revalidate after the flags.
        cfg = RunConfig::from_toml(&toml::to_string(&cfg).map_err(|e| Error::Usage(e.to_string()))?, &[])?;
    }
    Ok(cfg)
}

/// Executes a parsed command, writing human-readable progress to `log`.
pub fn execute(cli: &Cli, log: &mut dyn Write) -> Result<()> {
    let out = cli.common.out.as_path();
    let say = |log: &mut dyn Write, msg: String| {
        let _ = writeln!(log, "{msg}");
    };
    match &cli.command {
        Command::MakeData { count, images } => {
            let cfg = config(&cli.common, None)?;
            let path = pipeline::make_data(*count, cfg.seed, cfg.model.image_side, *images, out)?;
            say(log, format!("wrote {count} records to {}", path.display()));
        }
        Command::Train { stage, from, data, switches } => {
            let cfg = config(&cli.common, Some(switches))?;
            let stage = Stage::from_id(*stage).map_err(|e| Error::Usage(e.to_string()))?;
            let data = data.clone().or_else(|| cfg.train.dataset.as_ref().map(PathBuf::from)).ok_or_else(|| Error::Usage("train needs --data".into()))?;
            let res = pipeline::train(&TrainRequest { config: &cfg, stage, from: from.as_deref(), data: &data, out })?;
            if let Some(e) = res.resumed_at_epoch {
                say(log, format!("resumed stage {} after epoch {e}", stage.id()));
            }
            let last = res.losses.last().map(|l| format!("{:.6}", l.loss)).unwrap_or_else(|| "n/a".into());
            say(log, format!("stage {} done, {} steps, final loss {last}, checkpoint {}", stage.id(), res.losses.len(), res.checkpoint.display()));
        }
        Command::Eval { from, data, workers, switches } => {
            let cfg = config(&cli.common, Some(switches))?;
            let workers = workers.unwrap_or(cfg.eval.workers);
            if workers == 0 {
                return Err(Error::Usage("--workers must be at least 1".into()));
            }
            let report = pipeline::eval(&EvalRequest { config: &cfg, checkpoint: from, data, out, workers })?;
            say(log, format!("{} records, average accuracy {:.2}", report.total, report.average()));
        }
        Command::Score { answers, data } => {
            let input = match data {
                Some(d) => ScoreInput::Answers { answers, dataset: d },
                None => ScoreInput::Records(answers),
            };
            let report = pipeline::score(input, out)?;
            say(log, format!("{} records, average accuracy {:.2}", report.total, report.average()));
        }
        Command::Diagnose { pairs } => {
            let cfg = config(&cli.common, None)?;
            let s = pipeline::diagnose(&cfg, *pairs, out)?;
            for (m, u) in s.matched.iter().zip(&s.unrelated) {
                say(log, format!("{:<18} matched {:.4} unrelated {:.4}", m.tap.to_string(), m.similarity, u.similarity));
            }
        }
        Command::Validate { path } => {
            let cfg = config(&cli.common, None)?;
            let report = pipeline::validate(path, cfg.model.image_side)?;
            say(log, report.to_string());
            if !report.is_clean() {
                let ids: Vec<&str> = report.violations.iter().map(|v| v.id.as_str()).filter(|s| !s.is_empty()).collect();
                return Err(Error::Invalid { count: report.violations.len(), ids: ids.join(", ") });
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs. Help and version exit 0, other parse errors 1.
pub fn run<I, T>(args: I, log: &mut dyn Write, err: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return ExitCode::Usage;
            }
            let _ = write!(log, "{}", e.render());
            return ExitCode::Success;
        }
    };
    match execute(&cli, log) {
        Ok(()) => ExitCode::Success,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

