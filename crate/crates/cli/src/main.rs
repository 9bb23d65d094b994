//! `echovit` command-line tool.
//!
//! Architecture and training settings come from a config file; flags carry
//! paths and seeds. Progress goes to stderr, results to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use echovit::config::RunConfig;
use echovit::mae::reconstruct_clip;
use echovit::metrics::{compute_report, export_scatter, EvalPair, EvalReport};
use echovit::model::{
    encoder_schema, finetune_schema, gradcheck_suite, load_checkpoint_checked, pretrain_schema,
};
use echovit::tensor::GradcheckOptions;
use echovit::train::{
    finetune, predict_clips, prepare_clip, prepare_records, pretrain, Dataset, FinetuneInit,
    PreparedClip, TrainMode,
};
use echovit::video::{load_raw_video, synthetic_corpus, write_synthetic_corpus, Split};
use echovit::Error;

#[derive(Parser)]
#[command(
    name = "echovit",
    version,
    about = "Masked video autoencoder pretraining and EF regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pulsating-ventricle clips and labels.csv.
    Synth(SynthArgs),
    /// Masked-autoencoder pretraining on every clip in a directory.
    Pretrain(PretrainArgs),
    /// EF fine-tuning on the TRAIN split, validated on VAL.
    Finetune(FinetuneArgs),
    /// Score a fine-tuned checkpoint on one split.
    Eval(EvalArgs),
    /// Write original/masked/recon/recon_visible PGM panels for one clip.
    Reconstruct(ReconstructArgs),
    /// Compare every gradient against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 50.0)]
    fps: f64,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Pretraining checkpoint supplying the encoder.
    #[arg(
        long,
        conflicts_with = "from_scratch",
        required_unless_present = "from_scratch"
    )]
    init: Option<PathBuf>,
    /// Random encoder initialization (the vanilla baseline).
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Kv,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, ignore_case = true, default_value = "test")]
    split: SplitArg,
    /// Scatter CSV (FileName,Truth,Prediction).
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Scatter plot as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    config: PathBuf,
    /// Pretraining checkpoint (encoder and decoder).
    #[arg(long)]
    ckpt: PathBuf,
    /// EAIV clip.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mask seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Toy,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "toy")]
    scale: Scale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Parameter { .. } | Error::Schema { .. } => 2,
            Error::Format { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Validation(_)
            | Error::InsufficientData(_)
            | Error::InsufficientFrames { .. } => 3,
            Error::Numeric(_) | Error::NumericInput(_) => 4,
            Error::Dimension { .. } | Error::Index { .. } | Error::Contract(_) => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure {
            code: 2,
            message: e.to_string(),
        },
        other => other.into(),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    if a.out.is_dir() && !a.force {
        let occupied = std::fs::read_dir(&a.out)
            .map_err(|e| Failure {
                code: 3,
                message: format!("{}: {e}", a.out.display()),
            })?
            .next()
            .is_some();
        if occupied {
            return Err(Failure {
                code: 3,
                message: format!(
                    "{} is not empty; pass --force to write into it",
                    a.out.display()
                ),
            });
        }
    }
    let samples =
        synthetic_corpus(a.count, a.frames, a.size, a.fps, a.seed).map_err(|e| Failure {
            code: 2,
            message: e.to_string(),
        })?;
    write_synthetic_corpus(&samples, &a.out)?;
    let count = |s: Split| samples.iter().filter(|x| x.split == s).count();
    log::info!("wrote {} clips to {}", samples.len(), a.out.display());
    println!("clips={}", samples.len());
    println!("train={}", count(Split::Train));
    println!("val={}", count(Split::Val));
    println!("test={}", count(Split::Test));
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> CmdResult {
    let cfg = load_config(&a.run.config, a.run.seed)?;
    let ds = Dataset::load_dir(&a.run.data)?;
    let clips = prepare_records(&ds.records.iter().collect::<Vec<_>>(), &cfg.model)?;
    let out = pretrain(
        &clips,
        &cfg.model,
        &cfg.train_config(TrainMode::Pretrain),
        Some(&a.out),
    )?;
    let last = out.log.last().map_or(f64::NAN, |r| r.loss);
    println!("iterations={}", out.log.len());
    println!("optimizer_steps={}", out.optimizer_steps);
    println!("final_loss={last}");
    println!("checkpoint={}", a.out.display());
    Ok(())
}

fn labeled_split(
    ds: &Dataset,
    split: Split,
    cfg: &RunConfig,
) -> Result<Vec<PreparedClip>, Failure> {
    let records = ds.split(split);
    if records.is_empty() && ds.records.iter().all(|r| r.split.is_none()) {
        return Err(Failure {
            code: 3,
            message: "data directory has no labels.csv".into(),
        });
    }
    Ok(prepare_records(&records, &cfg.model)?)
}

fn cmd_finetune(a: FinetuneArgs) -> CmdResult {
    let cfg = load_config(&a.run.config, a.run.seed)?;
    let ds = Dataset::load_dir(&a.run.data)?;
    let train = labeled_split(&ds, Split::Train, &cfg)?;
    let val = labeled_split(&ds, Split::Val, &cfg)?;
    let encoder;
    let (init, mode) = match &a.init {
        Some(path) => {
            encoder = load_checkpoint_checked(path, &encoder_schema(&cfg.model)?, |n| {
                n.starts_with("dec.")
            })?;
            (FinetuneInit::Pretrained(&encoder), TrainMode::Finetune)
        }
        None => (FinetuneInit::Random, TrainMode::VanillaFinetune),
    };
    let out = finetune(
        &train,
        &val,
        init,
        &cfg.model,
        &cfg.train_config(mode),
        Some(&a.out),
    )?;
    println!("iterations={}", out.log.len());
    println!("optimizer_steps={}", out.optimizer_steps);
    println!("final_loss={}", out.log.last().map_or(f64::NAN, |r| r.loss));
    if let Some(mae) = out.val_mae.last() {
        println!("val_mae={mae}");
        println!("best_epoch={}", out.best_epoch);
    }
    println!("checkpoint={}", a.out.display());
    Ok(())
}

/// Scores predictions and writes the optional scatter outputs.
fn report(
    clips: &[PreparedClip],
    preds: &[f64],
    scatter: Option<&Path>,
    svg: Option<&Path>,
) -> Result<EvalReport, Failure> {
    let pairs: Vec<EvalPair> = clips
        .iter()
        .zip(preds)
        .map(|(c, &p)| EvalPair::new(&c.name, c.ef.unwrap_or(f64::NAN), p))
        .collect();
    let r = compute_report(&pairs)?;
    if let Some(csv) = scatter {
        export_scatter(&pairs, csv, svg)?;
    } else if let Some(svg) = svg {
        std::fs::write(svg, echovit::metrics::scatter_svg(&pairs)).map_err(|e| Failure {
            code: 3,
            message: format!("{}: {e}", svg.display()),
        })?;
    }
    Ok(r)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cfg = load_config(&a.config, None)?;
    let ds = Dataset::load_dir(&a.data)?;
    let clips = labeled_split(&ds, a.split.into(), &cfg)?;
    let params = load_checkpoint_checked(&a.ckpt, &finetune_schema(&cfg.model)?, |_| false)?;
    let preds = predict_clips(&params, &cfg.model, &clips)?;
    let r = report(&clips, &preds, a.scatter.as_deref(), a.svg.as_deref())?;
    match a.format {
        ReportFormat::Text => print!("{}", r.to_text()),
        ReportFormat::Kv => print!("{}", r.to_key_values()),
    }
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> CmdResult {
    let cfg = load_config(&a.config, None)?;
    let params = load_checkpoint_checked(&a.ckpt, &pretrain_schema(&cfg.model)?, |_| false)?;
    let clip = load_raw_video(&a.input)?;
    let stem = a
        .input
        .file_stem()
        .map_or_else(|| "clip".to_string(), |s| s.to_string_lossy().into_owned());
    let prepared = prepare_clip(&stem, &clip, None, &cfg.model)?;
    let rec = reconstruct_clip(&params, &cfg.model, &prepared.frames, a.seed)?;
    let paths = rec.write_panels(&a.out, &stem, &cfg.model)?;
    log::info!("wrote {} panel frames to {}", paths.len(), a.out.display());
    println!("files={}", paths.len());
    println!("frames_per_panel={}", rec.target.frame_ids.len());
    println!("masked_loss={}", rec.loss);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let Scale::Toy = a.scale;
    let opts = GradcheckOptions {
        seed: a.seed,
        ..GradcheckOptions::default()
    };
    let results = gradcheck_suite(a.seed, &opts)?;
    let mut failed = 0;
    for (name, r) in &results {
        let status = if r.passed() { "ok" } else { "FAILED" };
        println!(
            "{name:<24} checked={:<6} failures={:<4} max_rel_error={:.3e} {status}",
            r.checked,
            r.failures.len(),
            r.max_rel_error
        );
        for m in r.failures.iter().take(3) {
            log::error!(
                "{name}: input {} element {}: analytic {} numeric {}",
                m.input,
                m.element,
                m.analytic,
                m.numeric
            );
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure {
            code: 4,
            message: format!("{failed} of {} gradient checks failed", results.len()),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
