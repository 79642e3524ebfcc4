use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ypose::cli::{self, EvalSplit, RunConfig};
use ypose::config::KeyValues;
use ypose::toy::ToyCorpusOptions;
use ypose::Error;

/// Yoga pose recognition: build, preprocess, train and evaluate YPose networks.
#[derive(Parser, Debug)]
#[command(name = "ypose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command. Each flag overrides the config file key
/// of the same name.
#[derive(Args, Debug, Default)]
struct Common {
    /// key=value config file (`#` starts a comment).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ypose, ypose-lite, b0, b4, b5, mobilenet-v2 or toy.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Comma-separated class counts per head, coarse to fine.
    #[arg(long, global = true)]
    heads: Option<String>,
    #[arg(long, global = true)]
    refinement_units: Option<usize>,
    /// Resize whole frames instead of cropping to the detected person.
    #[arg(long, global = true)]
    no_roi: bool,
    /// Drop the refinement stack (0 units).
    #[arg(long, global = true)]
    no_refinement: bool,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// CSV with path,label6,label20,label82,synthetic rows.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Hierarchy CSV; defaults to hierarchy.csv beside the manifest.
    #[arg(long, global = true)]
    hierarchy: Option<PathBuf>,
    /// joint, coarse, mid or fine.
    #[arg(long, global = true)]
    head_mode: Option<String>,
    /// Output directory (or file, for heatmap).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(k, v);
            }
        };
        set("seed", self.seed.map(|v| v.to_string()));
        set("variant", self.variant.clone());
        set("heads", self.heads.clone());
        set("refinement_units", self.refinement_units.map(|v| v.to_string()));
        set("roi", self.no_roi.then(|| "false".into()));
        set("refinement", self.no_refinement.then(|| "false".into()));
        set("epochs", self.epochs.map(|v| v.to_string()));
        set("batch_size", self.batch_size.map(|v| v.to_string()));
        set("lr", self.lr.map(|v| v.to_string()));
        set("manifest", self.manifest.as_ref().map(|p| p.display().to_string()));
        set("hierarchy", self.hierarchy.as_ref().map(|p| p.display().to_string()));
        set("head_mode", self.head_mode.clone());
        kv
    }

    fn run_config(&self) -> ypose::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }

    fn out_dir(&self) -> ypose::Result<&std::path::Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the per-layer parameter/MAC CSV and totals (writes layers.csv with --out).
    Build {
        #[command(flatten)]
        common: Common,
    },
    /// Crop and resize every manifest image to 224x224 and report provenance.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Ground-truth boxes (path,x0,y0,x1,y1) to score the crops against.
        #[arg(long)]
        boxes: Option<PathBuf>,
    },
    /// Train on the manifest's train split, keeping the best validation weights.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a state.ckpt written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the hierarchy labels and probabilities for one image.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Treat the image as synthetic (no cropping).
        #[arg(long)]
        synthetic: bool,
        /// Classes listed per head.
        #[arg(long, default_value_t = 3)]
        top: usize,
    },
    /// Train one model per refinement-unit count and tabulate the results.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,4,16")]
        counts: Vec<usize>,
    },
    /// Write the final-layer activation map of one image as a grayscale PNG.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        synthetic: bool,
    },
    /// Generate the synthetic blob corpus with its 2/4/8 hierarchy.
    ToyCorpus {
        #[command(flatten)]
        common: Common,
        /// Fine classes to draw (0-7).
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
        classes: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 80)]
        height: usize,
    },
}

fn run(command: Command, out: &mut dyn Write) -> ypose::Result<()> {
    match command {
        Command::Build { common } => {
            let cfg = common.run_config()?;
            let layers = match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                    Some(dir.join("layers.csv"))
                }
                None => None,
            };
            cli::build(&cfg, layers.as_deref(), out)?;
        }
        Command::Preprocess { common, boxes } => {
            let cfg = common.run_config()?;
            cli::preprocess(&cfg, common.out_dir()?, boxes.as_deref(), out)?;
        }
        Command::Train { common, resume } => {
            let cfg = common.run_config()?;
            cli::train(&cfg, common.out_dir()?, resume.as_deref(), out)?;
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = common.run_config()?;
            cli::eval(&cfg, &checkpoint, EvalSplit::parse(&split)?, common.out.as_deref(), out)?;
        }
        Command::Predict { common, checkpoint, image, synthetic, top } => {
            let cfg = common.run_config()?;
            cli::predict(&cfg, &checkpoint, &image, synthetic, top, out)?;
        }
        Command::Sweep { common, counts } => {
            let cfg = common.run_config()?;
            cli::sweep(&cfg, &counts, common.out.as_deref(), out)?;
        }
        Command::Heatmap { common, checkpoint, image, synthetic } => {
            let cfg = common.run_config()?;
            let dest = common.out.clone().unwrap_or_else(|| PathBuf::from("heatmap.png"));
            cli::heatmap(&cfg, &checkpoint, &image, synthetic, &dest, out)?;
        }
        Command::ToyCorpus { common, classes, per_class, width, height } => {
            let opts = ToyCorpusOptions { images_per_class: per_class, width, height, seed: common.seed.unwrap_or(0), ..Default::default() };
            cli::toy_corpus(common.out_dir()?, &classes, &opts, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
