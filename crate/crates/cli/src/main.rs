//! `gcdn` command-line front end.

mod analyze;
mod options;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gcdn::analysis::Table;
use gcdn::dataset::Dataset;
use gcdn::graph_conv::DEFAULT_CHUNK_PIXELS;
use gcdn::image::{encode_pgm, load_image, save_image, GrayImage};
use gcdn::metrics::{format_db, psnr, ssim};
use gcdn::network::{build_network, train, Checkpoint, TrainState};
use gcdn::noise::add_awgn;
use gcdn::par;
use gcdn::synthetic::synthetic_scene;

use crate::options::ModelFlags;

#[derive(Parser)]
#[command(name = "gcdn", version, about = "Graph-convolutional image denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Denoise images with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// PSNR and SSIM of images against a reference.
    Eval(EvalArgs),
    /// Add white Gaussian noise to an image.
    SynthNoise(SynthArgs),
    /// Analyses of a trained model.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Directory of clean training images (PGM or PNG).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Without --data, train on this many synthetic scenes.
    #[arg(long, default_value_t = 20)]
    synthetic: usize,
    /// Side length of the synthetic scenes.
    #[arg(long, default_value_t = 64)]
    synthetic_size: usize,
    /// Continue from the optimiser state stored in --checkpoint.
    #[arg(long)]
    resume: bool,
    /// Print the mean loss every this many iterations.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Noisy input images.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Output file (one input) or directory.
    #[arg(long)]
    out: PathBuf,
    /// Pixels per aggregation chunk.
    #[arg(long, default_value_t = DEFAULT_CHUNK_PIXELS)]
    chunk: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Clean reference image.
    #[arg(long)]
    reference: PathBuf,
    /// Images to score.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Also score the checkpoint's denoised version of every input.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Clean image; a synthetic scene is generated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Noise level on the 0–255 scale.
    #[arg(long, default_value_t = 25.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length of the generated scene.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Output image; PGM on stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub(crate) enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gcdn::Error> for Failure {
    fn from(e: gcdn::Error) -> Self {
        match e {
            gcdn::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

pub(crate) type CliResult<T = ()> = std::result::Result<T, Failure>;

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

pub(crate) fn write_output(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub(crate) fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn run_train(a: TrainArgs) -> CliResult {
    let cfg = a.model.resolve()?;
    let path = a
        .model
        .checkpoint
        .clone()
        .ok_or_else(|| Failure::Usage("train needs --checkpoint".into()))?;
    let data = match &a.data {
        Some(dir) => Dataset::load_dir(dir)?,
        None => Dataset::synthetic(a.synthetic, a.synthetic_size, a.synthetic_size, cfg.seed)?,
    };
    let (mut model, mut state) = if a.resume {
        let ck = load_checkpoint(&path)?;
        let state = ck
            .train
            .ok_or_else(|| Failure::Runtime(format!("{} holds no optimiser state", path.display())))?;
        if ck.model.config() != &cfg {
            eprintln!("note: resuming with the checkpoint's configuration");
        }
        (ck.model, state)
    } else {
        let model = build_network::<f32>(&cfg, cfg.seed)?;
        let state = TrainState::new(&model);
        (model, state)
    };
    eprintln!(
        "training {} parameters on {} images for {} iterations",
        model.parameter_count(),
        data.len(),
        model.config().iters
    );
    let start = Instant::now();
    let every = a.log_every.max(1);
    let mut window = 0.0;
    train(&mut model, &mut state, &data, |t, loss| {
        window += loss;
        if (t + 1) % every == 0 {
            eprintln!("iter {:>7}  loss {:.6}  {:.1}s", t + 1, window / every as f64, start.elapsed().as_secs_f64());
            window = 0.0;
        }
    })?;
    Checkpoint { model, train: Some(state) }.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run_denoise(a: DenoiseArgs) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let to_dir = a.inputs.len() > 1 || a.out.is_dir();
    if to_dir {
        fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    }
    let results = par::map_slice(&a.inputs, |p| -> CliResult<PathBuf> {
        let img = load_image(p)?;
        let out = ck.model.denoise(&img, a.chunk)?;
        let dest = if to_dir {
            a.out.join(p.file_name().unwrap_or_default())
        } else {
            a.out.clone()
        };
        save_image(&dest, &out)?;
        Ok(dest)
    });
    for r in results {
        eprintln!("wrote {}", r?.display());
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    let reference = load_image(&a.reference)?;
    let ck = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let rows = par::map_slice(&a.inputs, |p| -> CliResult<Vec<Vec<String>>> {
        let img = load_image(p)?;
        let score = |label: &str, x: &GrayImage| -> CliResult<Vec<String>> {
            Ok(vec![
                p.display().to_string(),
                label.to_string(),
                format_db(psnr(&reference, x)?),
                format!("{:.6}", ssim(&reference, x)?),
            ])
        };
        let mut rows = vec![score("input", &img)?];
        if let Some(ck) = &ck {
            rows.push(score("denoised", &ck.model.denoise(&img, DEFAULT_CHUNK_PIXELS)?)?);
        }
        Ok(rows)
    });
    let mut table = Table::new(&["file", "image", "psnr_db", "ssim"]);
    for r in rows {
        for row in r? {
            table.push(row)?;
        }
    }
    write_output(a.out.as_deref(), &table.to_tsv())
}

fn run_synth(a: SynthArgs) -> CliResult {
    let clean = match &a.input {
        Some(p) => load_image(p)?,
        None => synthetic_scene(a.size, a.size, a.seed),
    };
    let noisy = add_awgn(&clean, a.sigma, a.seed)?;
    match &a.out {
        Some(p) => save_image(p, &noisy)?,
        None => std::io::stdout()
            .write_all(&encode_pgm(&noisy))
            .map_err(|e| Failure::Runtime(format!("stdout: {e}")))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Denoise(a) => run_denoise(a),
        Command::Eval(a) => run_eval(a),
        Command::SynthNoise(a) => run_synth(a),
        Command::Analyze(a) => analyze::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `gcdn --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
