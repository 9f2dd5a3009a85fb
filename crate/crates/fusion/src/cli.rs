//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fusion_core::model::Streams;

use crate::ablation::{ablation_table, run_ablation, write_ablation};
use crate::config::Config;
use crate::dataset::{prepare, DatasetManifest};
use crate::error::{Error, Result};
use crate::inspect::inspect;
use crate::report::{write_json, write_run_manifest};
use crate::run::{eval_command, load_for, train_command, EvalSplit};
use crate::synth::generate_dataset;
use crate::train::Progress;

#[derive(Debug, Parser)]
#[command(name = "fusion", version, about = "Skeleton + infrared action recognition")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration (default: $FUSION_CONFIG, else built-in defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (same as data.path=...).
    #[arg(long)]
    data: Option<String>,
    /// fusion, pose_only or ir_only.
    #[arg(long)]
    mode: Option<String>,
    /// IR clip length.
    #[arg(long = "T", value_name = "T")]
    clip_length: Option<String>,
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    deterministic: Option<bool>,
    /// `dotted.key=value` configuration overrides.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long = "per-class")]
        per_class: Option<usize>,
    },
    /// Compute training-split extrema and per-sample crop boxes.
    Prep {
        #[command(flatten)]
        common: Common,
    },
    /// Train, then score the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a resumable checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop (and write a resumable checkpoint) after this many steps.
        #[arg(long = "stop-after")]
        stop_after: Option<usize>,
    },
    /// Score a trained model.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `model.ckpt`, or the run directory holding it.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Mode × clip-length grid. `--T` takes a comma list here.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pose_only,ir_only,fusion")]
        modes: String,
        /// Comma list of seeds (default: the config seed).
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Write debug images and window indices for one sample.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sample: String,
        /// Reproduce the training draw of this epoch instead of midpoints.
        #[arg(long)]
        epoch: Option<usize>,
    },
}

fn comma_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Usage(format!("bad {what} `{s}` in `{raw}`"))))
        .collect()
}

impl Common {
    /// Resolve the configuration: file, then flags, then positional overrides.
    /// A comma list for `--T` is left to the caller.
    fn config(&self) -> Result<Config> {
        let mut c = Config::resolve(self.config.as_deref())?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(d) = &self.data {
            c.data.path = d.clone();
        }
        if let Some(m) = &self.mode {
            c.train.mode = Streams::parse(m).map_err(|e| Error::Usage(e.to_string()))?;
        }
        if let Some(t) = self.clip_length.as_deref().filter(|t| !t.contains(',')) {
            c.model.clip_length = t.parse().map_err(|_| Error::Usage(format!("bad --T `{t}`")))?;
        }
        if let Some(d) = self.deterministic {
            c.deterministic = d;
        }
        for o in &self.overrides {
            c.set(o)?;
        }
        Ok(c)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn command_line(args: &[OsString]) -> String {
    args.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>().join(" ")
}

fn dispatch(cli: Cli, line: &str) -> Result<()> {
    match cli.verb {
        Verb::Synth { common, classes, per_class } => {
            let mut cfg = common.config()?;
            if let Some(c) = classes {
                cfg.synth.classes = c;
            }
            if let Some(n) = per_class {
                cfg.synth.per_class = n;
            }
            let out = common.out("synthetic");
            let m = generate_dataset(&cfg.synth, cfg.seed, &out)?;
            println!("wrote {} samples in {} classes to {}", m.samples.len(), m.class_count, out.display());
        }
        Verb::Prep { common } => {
            let cfg = common.config()?;
            let data = require_data(&cfg)?;
            let out = common.out("prep");
            let manifest = DatasetManifest::load(&data)?;
            let prep = prepare(&data, &manifest, &cfg.data)?;
            prep.save(&out)?;
            write_run_manifest(&out, line, &cfg)?;
            println!(
                "extrema [{}, {}] over split {}; {} crop boxes in {}",
                prep.extrema.c_min,
                prep.extrema.c_max,
                prep.extrema.train_split_id,
                prep.boxes.len(),
                out.display()
            );
        }
        Verb::Train { common, resume, stop_after } => {
            let mut cfg = common.config()?;
            if let Some(r) = &resume {
                // A resumed run continues under the configuration it started with.
                if common.config.is_none() {
                    let archive = crate::checkpoint::Archive::read(r)?;
                    if let Some(text) = archive.metadata["config"].as_str() {
                        cfg = Config::from_toml(text, r)?;
                    }
                }
            }
            require_data(&cfg)?;
            let out = common.out("run");
            let o = train_command(&cfg, &out, resume.as_deref(), stop_after, line, true)?;
            match (o.progress, o.metrics) {
                (Progress::Paused, _) => println!("paused; resume with --resume {}", out.join(crate::report::RESUME_CKPT).display()),
                (_, Some(m)) => println!(
                    "trained {} epochs; test accuracy {}",
                    m.epochs_run,
                    m.accuracy.map_or_else(|| "n/a (no test split)".into(), |a| format!("{:.4}", a))
                ),
                _ => {}
            }
        }
        Verb::Eval { common, checkpoint, split } => {
            let path = if checkpoint.is_dir() { checkpoint.join(crate::report::MODEL_CKPT) } else { checkpoint };
            let out = common.out("eval");
            let m = eval_command(&path, common.data.as_deref(), EvalSplit::parse(&split)?, &out, line)?;
            println!("accuracy {:.4} on {} {} samples", m.accuracy.unwrap_or(0.0), m.sample_count, m.evaluated_on);
        }
        Verb::Ablate { common, modes, seeds } => {
            let cfg = common.config()?;
            require_data(&cfg)?;
            let modes: Vec<Streams> = modes
                .split(',')
                .map(|m| Streams::parse(m.trim()).map_err(|e| Error::Usage(e.to_string())))
                .collect::<Result<_>>()?;
            let lengths = match &common.clip_length {
                Some(t) => comma_list(t, "clip length")?,
                None => vec![cfg.model.clip_length],
            };
            let seeds = match &seeds {
                Some(s) => comma_list(s, "seed")?,
                None => vec![cfg.seed],
            };
            let data = load_for(&cfg)?;
            let cells = run_ablation(&cfg, &data, &modes, &lengths, &seeds, &mut |c| {
                eprintln!("{} T={} seed={}: test accuracy {:.4}", c.mode.name(), c.clip_length, c.seed, c.test_acc)
            })?;
            let out = common.out("ablation");
            write_ablation(&out, &cells)?;
            write_run_manifest(&out, line, &cfg)?;
            print!("{}", ablation_table(&cells));
        }
        Verb::Inspect { common, sample, epoch } => {
            let cfg = common.config()?;
            require_data(&cfg)?;
            let out = common.out(".");
            let o = inspect(&cfg, &sample, epoch, &out)?;
            write_json(&o.dir.join("config.json"), &cfg)?;
            println!("wrote {} overlay frames and {} to {}", o.overlays.len(), o.windows_json.display(), o.dir.display());
        }
    }
    Ok(())
}

fn require_data(cfg: &Config) -> Result<PathBuf> {
    if cfg.data.path.is_empty() {
        return Err(Error::Usage("no dataset: pass --data DIR or set data.path".into()));
    }
    let p = PathBuf::from(&cfg.data.path);
    if !Path::new(&p).is_dir() {
        return Err(Error::data(format!("dataset directory {} does not exist", p.display())));
    }
    Ok(p)
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, &command_line(&args)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
