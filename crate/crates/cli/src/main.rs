use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use llvd_core::data::{self, FrameFormat, Manifest};
use llvd_core::eval::{self, MetricsReport};
use llvd_core::model::checkpoint::load_checkpoint;
use llvd_core::train::{self, TrainSetup};
use llvd_core::{flops, selfcheck, FlopConvention, Model, ModelConfig, RecurrentState, VideoSequence};
use serde_json::json;

/// Latent-space ConvLSTM video denoiser.
#[derive(Parser)]
#[command(name = "llvd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add white Gaussian noise to every frame of a sequence.
    Noise {
        /// Noise standard deviation on the 0-255 scale.
        #[arg(long)]
        sigma: f64,
        /// Noise seed; the same seed reproduces the same noise.
        #[arg(long)]
        seed: u64,
        /// Directory of clean frames.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for the noisy frames (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Output frame format: ppm8, ppm16 or llvt. Defaults to the input
        /// format; llvt keeps values unclipped.
        #[arg(long)]
        format: Option<FrameFormat>,
    },
    /// Train a model from a key=value config on a dataset manifest.
    Train {
        /// Config file holding model and training keys.
        #[arg(long)]
        config: PathBuf,
        /// Manifest listing `id directory layout frames` per line.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the loss log is written next to it as `<out>.log`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise a sequence with a trained checkpoint.
    Denoise {
        /// Checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// Directory of noisy frames.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for the denoised frames (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Recurrent state file. Restored before the first frame when it
        /// exists and overwritten with the state after the last frame, so
        /// consecutive calls continue one stream.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Output frame format: ppm8, ppm16 or llvt. Defaults to the input format.
        #[arg(long)]
        format: Option<FrameFormat>,
    },
    /// Score a checkpoint with PSNR and SSIM on paired noisy/clean data.
    Eval {
        /// Checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// Noisy frames: one sequence directory, or a directory of sequence
        /// subdirectories.
        #[arg(long)]
        noisy: PathBuf,
        /// Clean frames, laid out like `--noisy`.
        #[arg(long)]
        clean: PathBuf,
        /// File the report is written to.
        #[arg(long)]
        report: PathBuf,
        /// Write the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Per-layer FLOP report for one frame.
    Flops {
        /// Model config file.
        #[arg(long)]
        config: PathBuf,
        /// Frame width in pixels.
        #[arg(long)]
        width: usize,
        /// Frame height in pixels.
        #[arg(long)]
        height: usize,
        /// mac (one op per multiply-accumulate) or flop2 (two). Overrides
        /// the config's flop_convention.
        #[arg(long)]
        convention: Option<FlopConvention>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run gradient checks, shuffle round trips, adjointness and FLOP
    /// probes; exits 0 only when every check passes.
    Selfcheck {
        /// Seed for the random check inputs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print JSON instead of one line per check.
        #[arg(long)]
        json: bool,
    },
}

/// Parses argv, exiting with status 2 and the relevant usage text on
/// malformed arguments.
fn parse_args() -> Cli {
    let args: Vec<String> = std::env::args().collect();
    match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprint!("{msg}");
            if !msg.contains("Usage:") {
                let mut cmd = Cli::command();
                cmd.build();
                let usage = match args.get(1).and_then(|a| cmd.find_subcommand_mut(a)) {
                    Some(sub) => sub.render_usage(),
                    None => Cli::command().render_usage(),
                };
                eprintln!("\n{usage}");
            }
            std::process::exit(2);
        }
    }
}

fn main() -> ExitCode {
    let cli = parse_args();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Noise {
            sigma,
            seed,
            input,
            out,
            format,
        } => noise(sigma, seed, &input, &out, format),
        Command::Train { config, data, out } => train_cmd(&config, &data, &out),
        Command::Denoise {
            model,
            input,
            out,
            state,
            format,
        } => denoise(&model, &input, &out, state.as_deref(), format),
        Command::Eval {
            model,
            noisy,
            clean,
            report,
            json,
        } => eval_cmd(&model, &noisy, &clean, &report, json),
        Command::Flops {
            config,
            width,
            height,
            convention,
            json,
        } => flops_cmd(&config, width, height, convention, json),
        Command::Selfcheck { seed, json } => selfcheck_cmd(seed, json),
    }
}

fn output_format(seq: &VideoSequence, requested: Option<FrameFormat>) -> FrameFormat {
    requested.or(seq.meta.format).unwrap_or(FrameFormat::Ppm8)
}

fn noise(sigma: f64, seed: u64, input: &Path, out: &Path, format: Option<FrameFormat>) -> Result<()> {
    let clean = data::load_sequence(input)?;
    let noisy = data::add_awgn(&clean, sigma, seed)?;
    data::save_sequence(&noisy, out, output_format(&clean, format))?;
    println!("wrote {} noisy frames (sigma {sigma}, seed {seed}) to {}", noisy.len(), out.display());
    Ok(())
}

fn train_cmd(config: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let setup = TrainSetup::load(config)?;
    let data = Manifest::load(manifest)?.load_sequences()?;
    ensure!(!data.is_empty(), "{}: manifest lists no sequences", manifest.display());
    let model = Model::build(setup.model, setup.train.seed)?;
    let (_, summary) = train::train(model, setup.train, &data, out)?;
    println!(
        "trained {} steps; loss {} -> {}; checkpoint {}, log {}",
        summary.steps,
        fmt_loss(summary.initial_loss),
        fmt_loss(summary.final_loss),
        out.display(),
        summary.log.display()
    );
    Ok(())
}

fn fmt_loss(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.6}"))
}

fn denoise(
    model: &Path,
    input: &Path,
    out: &Path,
    state_path: Option<&Path>,
    format: Option<FrameFormat>,
) -> Result<()> {
    let model = load_checkpoint(model)?;
    let noisy = data::load_sequence(input)?;
    let state = match state_path {
        Some(p) if p.exists() => Some(RecurrentState::load(p)?),
        _ => None,
    };
    let (restored, state) = model.denoise_sequence(&noisy, state)?;
    data::save_sequence(&restored, out, output_format(&noisy, format))?;
    if let Some(p) = state_path {
        state.save(p)?;
    }
    println!("denoised {} frames into {}", restored.len(), out.display());
    Ok(())
}

fn has_frames(dir: &Path) -> Result<bool> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("{}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "llvt")) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `(id, sequence)` for a frame directory or a directory of them.
fn load_set(dir: &Path) -> Result<Vec<(String, VideoSequence)>> {
    if has_frames(dir)? {
        let id = dir.file_name().map_or("sequence".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(id, data::load_sequence(dir)?)]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("{}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    ensure!(!subdirs.is_empty(), "{}: no frames or sequence directories", dir.display());
    subdirs
        .into_iter()
        .map(|p| {
            let id = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((id, data::load_sequence(&p)?))
        })
        .collect()
}

fn eval_cmd(model: &Path, noisy: &Path, clean: &Path, report: &Path, json: bool) -> Result<()> {
    let model = load_checkpoint(model)?;
    let noisy = load_set(noisy)?;
    let mut clean = load_set(clean)?;
    let pairs = if noisy.len() == 1 && clean.len() == 1 {
        let (id, n) = noisy.into_iter().next().unwrap();
        vec![(id, n, clean.pop().unwrap().1)]
    } else {
        noisy
            .into_iter()
            .map(|(id, n)| {
                let Some(i) = clean.iter().position(|(c, _)| *c == id) else {
                    bail!("no clean sequence named {id}");
                };
                Ok((id, n, clean.swap_remove(i).1))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let r: MetricsReport = eval::evaluate(&model, &pairs)?;
    let text = if json {
        serde_json::to_string_pretty(&r)? + "\n"
    } else {
        r.to_table()
    };
    std::fs::write(report, &text).with_context(|| format!("{}", report.display()))?;
    print!("{}", r.to_table());
    Ok(())
}

fn flops_cmd(
    config: &Path,
    width: usize,
    height: usize,
    convention: Option<FlopConvention>,
    as_json: bool,
) -> Result<()> {
    let mut cfg = ModelConfig::load(config)?;
    if let Some(c) = convention {
        cfg.flop_convention = c;
    }
    ensure!(width > 0 && height > 0, "frame size must be positive, got {width}x{height}");
    let report = flops::count_flops_padded(&cfg, height, width)?;
    if as_json {
        let v = json!({
            "config": config.display().to_string(),
            "width": width,
            "height": height,
            "padded_width": report.width,
            "padded_height": report.height,
            "convention": report.convention,
            "total_macs": report.total_macs(),
            "total_flops": report.total_flops(),
            "total_elementwise": report.total_elementwise(),
            "total": report.total(),
            "gflops": report.gflops(),
            "entries": report.entries,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        if (report.width, report.height) != (width, height) {
            println!(
                "{width}x{height} is not a multiple of {}; counting the padded {}x{} frame",
                cfg.size_multiple(),
                report.width,
                report.height
            );
        }
        print!("{}", report.to_table());
    }
    Ok(())
}

fn selfcheck_cmd(seed: u64, as_json: bool) -> Result<()> {
    let results = selfcheck::run_all(seed)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if as_json {
        let v: Vec<_> = results
            .iter()
            .map(|r| json!({"group": r.group, "name": r.name, "passed": r.passed, "detail": r.detail}))
            .collect();
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        for r in &results {
            println!(
                "{}  {:<8}  {}: {}",
                if r.passed { "pass" } else { "FAIL" },
                r.group,
                r.name,
                r.detail
            );
        }
        println!("{} of {} checks passed", results.len() - failed, results.len());
    }
    ensure!(failed == 0, "{failed} of {} self-checks failed", results.len());
    Ok(())
}
