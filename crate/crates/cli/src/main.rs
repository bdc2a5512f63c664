//! Command-line surface for the voxseg toolkit.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (missing file,
//! failed check, shape mismatch, …) with a one-line diagnostic on
//! stderr, 2 on a usage error (unknown flag, malformed config).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use voxseg::{ablate, ckpt, fdcheck, infer, loss, metrics, train, volume, Real};

/// Desk-scale 3D segmentation toolkit: synthetic phantoms,
/// boundary-weighted training, sliding-window inference, and
/// surface-distance metrics.
#[derive(Parser)]
#[command(name = "voxseg", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic phantom dataset
    Synth {
        /// Master seed for the dataset
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of volumes to generate
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Volume shape as HxWxD
        #[arg(long, value_parser = parse_dims, default_value = "64x64x32")]
        shape: [usize; 3],
        /// Output directory; volumes land as case<i>_{image,mask}.{json,raw}
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model from a JSON config
    Train {
        /// JSON training config (fields mirror the training defaults;
        /// omitted fields keep them)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's checkpoint output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run sliding-window inference and write a probability volume
    Infer {
        /// Model or training checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Input volume: a dataset base path or its _image.json sidecar
        #[arg(long)]
        volume: PathBuf,
        /// Window shape HxWxD; each dim must be divisible by the
        /// model's pooling factor and no larger than the volume
        #[arg(long, value_parser = parse_dims, default_value = "32x32x16")]
        window: [usize; 3],
        /// Stride HxWxD [default: half the window]
        #[arg(long, value_parser = parse_dims)]
        stride: Option<[usize; 3]>,
        /// Output base path; writes <out>_prob.{json,raw}
        #[arg(long, default_value = "pred")]
        out: PathBuf,
    },
    /// Compare a prediction against a reference mask and write a JSON report
    Eval {
        /// Predicted mask or probability volume (base path or .json sidecar)
        #[arg(long)]
        pred: PathBuf,
        /// Reference mask (base path or .json sidecar)
        #[arg(long)]
        truth: PathBuf,
        /// Voxel spacing in millimetres [default: the truth sidecar's]
        #[arg(long)]
        spacing: Option<f64>,
        /// Binarization threshold applied when --pred holds probabilities
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Report path
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Train the variant grid and emit the ablation table
    Ablate {
        /// JSON ablation config
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a mask's dual fine-grained boundary weights as a volume
    Dfbmap {
        /// Binary mask: a dataset base path or its _mask.json sidecar
        #[arg(long)]
        mask: PathBuf,
        /// Odd neighborhood size
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Output base path; writes <out>_dfb.{json,raw}
        #[arg(long, default_value = "weights")]
        out: PathBuf,
    },
    /// Run finite-difference gradient checks; exits nonzero on failure
    Gradcheck {
        /// Restrict to one suite [default: run every suite]
        #[arg(long, value_enum)]
        module: Option<GradModule>,
        /// RNG seed for the checks
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GradModule {
    Dfb,
    Ce,
    Sram,
    Net,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(format!("expected HxWxD, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|_| format!("bad dimension {p:?} in {s:?}"))?;
        if *o == 0 {
            return Err(format!("dimensions must be positive, got {s:?}"));
        }
    }
    Ok(out)
}

/// A failure and the exit code it maps to.
enum Fail {
    /// Malformed config or other usage-level problem: exit 2.
    Usage(String),
    /// Runtime failure: exit 1.
    Run(String),
}

type CmdResult = Result<(), Fail>;

fn run_err(e: impl std::fmt::Display) -> Fail {
    Fail::Run(e.to_string())
}

/// Prefixes bare I/O errors with the file they concern; errors that
/// already name their file pass through untouched.
fn at_path(path: &Path) -> impl Fn(voxseg::Error) -> Fail + '_ {
    move |e| match e {
        voxseg::Error::Io(io) => Fail::Run(format!("{}: {io}", path.display())),
        other => Fail::Run(other.to_string()),
    }
}

/// `foo.json` is taken as-is; anything else is a dataset base path and
/// gets `_<suffix>.json` appended to its file name.
fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        path.with_file_name(format!("{name}_{suffix}.json"))
    }
}

/// Strips one trailing `.json`/`.raw` so `--out res.json` and
/// `--out res` both write `res_<suffix>.{json,raw}`.
fn out_base(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json" || e == "raw") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    }
}

fn read_config(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail::Run(format!("{}: {e}", path.display())))
}

fn cmd_synth(seed: u64, count: usize, shape: [usize; 3], out: &Path) -> CmdResult {
    let samples =
        volume::synth_generate(seed, count, shape, &volume::PhantomConfig::default())
            .map_err(run_err)?;
    for (i, sample) in samples.iter().enumerate() {
        volume::save_volume(sample, &out.join(format!("case{i:03}"))).map_err(run_err)?;
    }
    println!(
        "wrote {count} volumes ({}x{}x{}, seed {seed}) to {}",
        shape[0],
        shape[1],
        shape[2],
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &Path, out: Option<PathBuf>) -> CmdResult {
    let text = read_config(config)?;
    let mut cfg = train::TrainConfig::from_json(&text)
        .map_err(|e| Fail::Usage(format!("{}: {e}", config.display())))?;
    if let Some(out) = out {
        cfg.out_checkpoint = out;
    }
    let outcome = train::train(&cfg).map_err(run_err)?;
    let last = outcome.log.last().expect("training logs at least one step");
    println!(
        "trained {} iterations: total {:.6} (ce {:.6}, dfb {:.6}); checkpoint {}",
        last.iteration,
        last.total,
        last.ce,
        last.dfb,
        cfg.out_checkpoint.display()
    );
    Ok(())
}

fn cmd_infer(
    ckpt_path: &Path,
    volume_path: &Path,
    window: [usize; 3],
    stride: Option<[usize; 3]>,
    out: &Path,
) -> CmdResult {
    let model = ckpt::load_model(ckpt_path).map_err(at_path(ckpt_path))?;
    let volume_json = sidecar_path(volume_path, "image");
    let (image, spacing) = volume::load_field(&volume_json).map_err(at_path(&volume_json))?;
    let stride = stride.unwrap_or_else(|| window.map(|w| (w / 2).max(1)));
    let prob = infer::sliding_window_infer(&model, &image, window, stride).map_err(run_err)?;
    let base = out_base(out);
    volume::save_field(&prob, &base, "prob", spacing).map_err(run_err)?;
    println!(
        "wrote {}_prob.json ({}x{}x{}, window {}x{}x{}, stride {}x{}x{})",
        base.display(),
        prob.shape()[0],
        prob.shape()[1],
        prob.shape()[2],
        window[0],
        window[1],
        window[2],
        stride[0],
        stride[1],
        stride[2],
    );
    Ok(())
}

fn cmd_eval(
    pred: &Path,
    truth: &Path,
    spacing: Option<f64>,
    threshold: f64,
    out: &Path,
) -> CmdResult {
    let pred_json = sidecar_path(pred, "mask");
    let (pred_t, _) = volume::load_field(&pred_json).map_err(at_path(&pred_json))?;
    let truth_json = sidecar_path(truth, "mask");
    let (truth_t, truth_spacing) =
        volume::load_field(&truth_json).map_err(at_path(&truth_json))?;
    let spacing = spacing.map(|s| s as Real).unwrap_or(truth_spacing);
    let pred_mask = if pred_t.is_binary() {
        pred_t
    } else {
        metrics::binarize(&pred_t, threshold as Real)
    };
    let m = metrics::evaluate_pair("pred", &pred_mask, &truth_t, spacing).map_err(run_err)?;
    let report = serde_json::json!({
        "pred": pred.display().to_string(),
        "truth": truth.display().to_string(),
        "spacing_mm": spacing,
        "threshold": threshold,
        "dice": m.dice,
        "jaccard": m.jaccard,
        "hd95": m.hd95,
        "assd": m.assd,
    });
    let bytes = serde_json::to_vec_pretty(&report).map_err(run_err)?;
    fs::write(out, bytes).map_err(|e| Fail::Run(format!("{}: {e}", out.display())))?;
    println!(
        "dice {:.6} jaccard {:.6} hd95 {:.6} assd {:.6} -> {}",
        m.dice,
        m.jaccard,
        m.hd95,
        m.assd,
        out.display()
    );
    Ok(())
}

fn cmd_ablate(config: &Path, out: Option<PathBuf>) -> CmdResult {
    let text = read_config(config)?;
    let mut cfg = ablate::AblateConfig::from_json(&text)
        .map_err(|e| Fail::Usage(format!("{}: {e}", config.display())))?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    let report = ablate::ablate(&cfg, |cell, secs| {
        println!(
            "[{} seed {}] dice {:.4} jaccard {:.4} hd95 {:.3} assd {:.3} ({:.1}s)",
            cell.variant.label(),
            cell.seed,
            cell.dice,
            cell.jaccard,
            cell.hd95,
            cell.assd,
            secs
        );
    })
    .map_err(run_err)?;
    if let Some(gap) = report.dice_gap_all_vs_baseline {
        println!("all_k5 - baseline mean dice gap: {gap:+.4}");
    }
    println!("report written to {}", cfg.out_dir.join("report.csv").display());
    Ok(())
}

fn cmd_dfbmap(mask: &Path, k: usize, out: &Path) -> CmdResult {
    let mask_json = sidecar_path(mask, "mask");
    let (mask_t, spacing) = volume::load_field(&mask_json).map_err(at_path(&mask_json))?;
    let map = loss::dfb_map(&mask_t, k).map_err(run_err)?;
    let base = out_base(out);
    volume::save_field(&map.weights, &base, "dfb", spacing).map_err(run_err)?;
    println!("wrote {}_dfb.json (k {k})", base.display());
    Ok(())
}

fn cmd_gradcheck(module: Option<GradModule>, seed: u64) -> CmdResult {
    let reports = match module {
        None => fdcheck::check_all(seed),
        Some(GradModule::Dfb) => vec![fdcheck::check_dfb(seed)],
        Some(GradModule::Ce) => vec![fdcheck::check_ce(seed)],
        Some(GradModule::Sram) => vec![fdcheck::check_sram(seed)],
        Some(GradModule::Net) => vec![fdcheck::check_net(seed)],
    };
    let mut failed = Vec::new();
    for report in &reports {
        println!("{report}");
        if !report.passed() {
            failed.push(report.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Fail::Run(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn run(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::Synth { seed, count, shape, out } => cmd_synth(seed, count, shape, &out),
        Cmd::Train { config, out } => cmd_train(&config, out),
        Cmd::Infer { ckpt, volume, window, stride, out } => {
            cmd_infer(&ckpt, &volume, window, stride, &out)
        }
        Cmd::Eval { pred, truth, spacing, threshold, out } => {
            cmd_eval(&pred, &truth, spacing, threshold, &out)
        }
        Cmd::Ablate { config, out } => cmd_ablate(&config, out),
        Cmd::Dfbmap { mask, k, out } => cmd_dfbmap(&mask, k, &out),
        Cmd::Gradcheck { module, seed } => cmd_gradcheck(module, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Fail::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
