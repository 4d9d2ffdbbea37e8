//! Batch commands: `solve`, `train`, `superresolve`, `eval` and `synth`.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use unfoldsr::dataset::{check_scale, load_scenes, sample_crops, write_synthetic_dataset, PairedSample, SyntheticSpec};
use unfoldsr::imageops::{bicubic_resize, load_pgm, load_ppm, psnr, rgb_to_luma, save_pgm};
use unfoldsr::models::{load_checkpoint, save_checkpoint, train, Checkpoint, Network, Precision};
use unfoldsr::solvers::{ista_solve, l1l1_solve, DEFAULT_LAMBDA, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use unfoldsr::tensor::Real;
use unfoldsr::{Error, Result};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

/// Process exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::Shape(_) | Error::Unsupported(_) => EXIT_USAGE,
        Error::MissingData(_) | Error::EmptyDataset | Error::Io(_) => EXIT_MISSING_DATA,
        Error::NumericFailure { .. }
        | Error::NanLoss { .. }
        | Error::DegenerateInput(_)
        | Error::UninitializedGradients => EXIT_NUMERIC,
        Error::BadMagic(_)
        | Error::Truncated(_)
        | Error::MalformedHeader(_)
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedMaxval(_)
        | Error::ConfigMismatch(_) => EXIT_MISMATCH,
    }
}

#[derive(Debug, Parser)]
#[command(name = "unfoldsr", version, about = "Sparse coding with side information and guided super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveMode {
    /// Plain l1 sparse coding (ISTA).
    L1,
    /// l1-l1 sparse coding with side information.
    L1l1,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one synthetic sparse coding instance.
    Solve {
        #[arg(long, value_enum)]
        mode: SolveMode,
        #[arg(long, default_value_t = 16)]
        n_y: usize,
        #[arg(long, default_value_t = 32)]
        n_alpha: usize,
        #[arg(long, default_value_t = 4)]
        sparsity: usize,
        /// Entries of the side code that differ from the true code.
        #[arg(long, default_value_t = 1)]
        perturb: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long, default_value_t = DEFAULT_TOL, allow_negative_numbers = true)]
        tol: f64,
        /// Write the objective after every iteration, one per line.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Train a network from a `key = value` configuration file.
    Train { config: PathBuf },
    /// Super-resolve a low-resolution PGM with an RGB guide.
    Superresolve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        guide: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: usize,
    },
    /// PSNR of bicubic and model output for every scene of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset_root: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a dataset of synthetic scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Solve {
            mode,
            n_y,
            n_alpha,
            sparsity,
            perturb,
            lambda,
            noise,
            seed,
            max_iters,
            tol,
            trace_out,
        } => {
            let spec = SyntheticSpec {
                n_y,
                n_alpha,
                sparsity,
                side_perturb: perturb,
                noise_std: noise,
                lambda,
                seed,
            };
            let flags = SolveFlags { spec, max_iters, tol };
            cmd_solve(mode, &flags, trace_out.as_deref(), out)
        }
        Command::Train { config } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            cmd_train(&RunConfig::parse(&text)?, out)
        }
        Command::Superresolve {
            ckpt,
            input,
            guide,
            out: dest,
            scale,
        } => cmd_superresolve(&ckpt, &input, &guide, &dest, scale, out),
        Command::Eval {
            ckpt,
            dataset_root,
            scale,
            csv,
        } => cmd_eval(&ckpt, &dataset_root, scale, csv.as_deref(), out),
        Command::Synth {
            out: root,
            scenes,
            width,
            height,
            seed,
        } => {
            if scenes == 0 || width == 0 || height == 0 {
                return Err(Error::InvalidParameter("--scenes, --width and --height must be positive".into()));
            }
            write_synthetic_dataset(&root, scenes, width, height, seed)?;
            writeln!(out, "wrote {scenes} scenes to {}", root.display())?;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveFlags {
    pub spec: SyntheticSpec,
    pub max_iters: usize,
    pub tol: f64,
}

fn flag_error(flag: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("--{flag}: {msg}"))
}

impl SolveFlags {
    fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if !(s.lambda > 0.0 && s.lambda.is_finite()) {
            return Err(flag_error("lambda", format!("must be > 0, got {}", s.lambda)));
        }
        if s.n_y == 0 {
            return Err(flag_error("n-y", "must be positive"));
        }
        if s.n_alpha == 0 {
            return Err(flag_error("n-alpha", "must be positive"));
        }
        if s.sparsity > s.n_alpha {
            return Err(flag_error("sparsity", format!("exceeds --n-alpha {}", s.n_alpha)));
        }
        if s.side_perturb > s.n_alpha {
            return Err(flag_error("perturb", format!("exceeds --n-alpha {}", s.n_alpha)));
        }
        if !(s.noise_std >= 0.0 && s.noise_std.is_finite()) {
            return Err(flag_error("noise", format!("must be >= 0, got {}", s.noise_std)));
        }
        if self.max_iters == 0 {
            return Err(flag_error("max-iters", "must be positive"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(flag_error("tol", format!("must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Outcome of one `solve` run against the generating code.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub objective: f64,
    pub iterations: usize,
    pub recovery_error: f64,
    pub support_accuracy: f64,
    pub trace: Vec<f64>,
}

/// Entries with magnitude at most this count as zero.
pub const SUPPORT_TOL: f64 = 1e-6;

pub fn solve_synthetic(mode: SolveMode, flags: &SolveFlags) -> Result<SolveSummary> {
    flags.validate()?;
    let (problem, code) = unfoldsr::dataset::gen_synthetic(&flags.spec)?;
    let report = match mode {
        SolveMode::L1 => ista_solve(&problem.without_side(), flags.max_iters, flags.tol)?,
        SolveMode::L1l1 => l1l1_solve(&problem, flags.max_iters, flags.tol)?,
    };
    let sol = &report.solution;
    let recovery_error = sol.iter().zip(&code).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let hits = sol
        .iter()
        .zip(&code)
        .filter(|(a, b)| (a.abs() > SUPPORT_TOL) == (**b != 0.0))
        .count();
    Ok(SolveSummary {
        objective: report.objective_trace.last().copied().unwrap_or(f64::NAN),
        iterations: report.iterations,
        recovery_error,
        support_accuracy: hits as f64 / code.len() as f64,
        trace: report.objective_trace,
    })
}

fn cmd_solve(mode: SolveMode, flags: &SolveFlags, trace_out: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let s = solve_synthetic(mode, flags)?;
    writeln!(out, "objective: {:.12e}", s.objective)?;
    writeln!(out, "iterations: {}", s.iterations)?;
    writeln!(out, "recovery_error: {:.12e}", s.recovery_error)?;
    writeln!(out, "support_accuracy: {:.6}", s.support_accuracy)?;
    if let Some(path) = trace_out {
        let mut text = String::new();
        for v in &s.trace {
            let _ = writeln!(text, "{v:.17e}");
        }
        fs::write(path, text)?;
    }
    Ok(())
}

pub const REPORT_FILE: &str = "report.txt";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Training and validation crops for a run configuration.
pub fn build_crops(cfg: &RunConfig) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
    let scenes = load_scenes(&cfg.dataset_root)?;
    if cfg.val_scenes >= scenes.len() {
        return Err(Error::MissingData(format!(
            "{} scenes found but {} are reserved for validation",
            scenes.len(),
            cfg.val_scenes
        )));
    }
    let split = scenes.len() - cfg.val_scenes;
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    for (i, scene) in scenes.iter().enumerate() {
        let pair = scene.pair(cfg.model.scale)?;
        let seed = cfg.train.seed.wrapping_add(i as u64);
        if i < split {
            train_set.extend(sample_crops(&pair, cfg.crop, cfg.crops_per_scene, seed)?);
        } else {
            val_set.extend(sample_crops(&pair, cfg.crop, cfg.val_crops, seed)?);
        }
    }
    Ok((train_set, val_set))
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (train_set, val_set) = build_crops(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    match cfg.model.precision {
        Precision::Single => train_with::<f32>(cfg, &train_set, &val_set, out),
        Precision::Double => train_with::<f64>(cfg, &train_set, &val_set, out),
    }
}

fn train_with<F: Real>(cfg: &RunConfig, train_set: &[PairedSample], val_set: &[PairedSample], out: &mut dyn Write) -> Result<()> {
    let mut net = Network::<F>::random(cfg.kind, cfg.model, cfg.init_seed)?;
    let report_path = cfg.output_dir.join(REPORT_FILE);
    let mut partial = unfoldsr::models::TrainingReport::default();
    let report = train(&mut net, train_set, val_set, &cfg.train, |e, n| {
        save_checkpoint(cfg.output_dir.join(epoch_checkpoint_name(e.epoch)), n)?;
        partial.epochs.push(*e);
        fs::write(&report_path, partial.to_text())?;
        match e.val_psnr {
            Some(p) => writeln!(out, "epoch {} loss {:.6e} val_psnr {p:.4}", e.epoch, e.loss)?,
            None => writeln!(out, "epoch {} loss {:.6e}", e.epoch, e.loss)?,
        }
        Ok(())
    })?;
    save_checkpoint(cfg.output_dir.join(FINAL_CHECKPOINT), &net)?;
    fs::write(&report_path, report.to_text())?;
    Ok(())
}

enum AnyNetwork {
    Single(Network<f32>),
    Double(Network<f64>),
}

impl AnyNetwork {
    fn load(path: &Path, scale: usize) -> Result<Self> {
        check_scale(scale)?;
        let ckpt: Checkpoint = load_checkpoint(path)?;
        if ckpt.config.scale != scale {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint was trained for scale {}, requested {scale}",
                ckpt.config.scale
            )));
        }
        Ok(match ckpt.config.precision {
            Precision::Single => AnyNetwork::Single(ckpt.to_network()?),
            Precision::Double => AnyNetwork::Double(ckpt.to_network()?),
        })
    }

    fn forward(&self, y: &unfoldsr::imageops::ImagePlane, z: &unfoldsr::imageops::ImagePlane) -> Result<unfoldsr::imageops::ImagePlane> {
        match self {
            AnyNetwork::Single(n) => n.forward(y, z),
            AnyNetwork::Double(n) => n.forward(y, z),
        }
    }
}

fn cmd_superresolve(ckpt: &Path, input: &Path, guide: &Path, dest: &Path, scale: usize, out: &mut dyn Write) -> Result<()> {
    let net = AnyNetwork::load(ckpt, scale)?;
    let lr = load_pgm(input)?;
    let rgb = load_ppm(guide)?;
    let (w, h) = (lr.width() * scale, lr.height() * scale);
    if rgb.dims() != (w, h) {
        return Err(Error::ConfigMismatch(format!(
            "guide is {}x{} but the upscaled input is {w}x{h}",
            rgb.width(),
            rgb.height()
        )));
    }
    let y_up = bicubic_resize(&lr, w, h)?;
    let sr = net.forward(&y_up, &rgb_to_luma(&rgb))?;
    if !sr.all_finite() {
        return Err(Error::NumericFailure { tensor: "output".into() });
    }
    save_pgm(dest, &sr.clamped())?;
    writeln!(out, "wrote {w}x{h} image to {}", dest.display())?;
    Ok(())
}

/// One evaluated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub bicubic_psnr: f64,
    pub model_psnr: f64,
}

/// Rows for every scene plus the `Average` row last.
pub fn evaluate(ckpt: &Path, root: &Path, scale: usize) -> Result<Vec<EvalRow>> {
    let net = AnyNetwork::load(ckpt, scale)?;
    let scenes = load_scenes(root)?;
    let mut rows = Vec::with_capacity(scenes.len() + 1);
    for s in &scenes {
        let pair = s.pair(scale)?;
        let sr = net.forward(&pair.y_up, &pair.z)?;
        rows.push(EvalRow {
            name: s.name.clone(),
            bicubic_psnr: psnr(&pair.y_up.clamped(), &pair.x, 1.0)?,
            model_psnr: psnr(&sr.clamped(), &pair.x, 1.0)?,
        });
    }
    let n = rows.len() as f64;
    rows.push(EvalRow {
        name: "Average".into(),
        bicubic_psnr: rows.iter().map(|r| r.bicubic_psnr).sum::<f64>() / n,
        model_psnr: rows.iter().map(|r| r.model_psnr).sum::<f64>() / n,
    });
    Ok(rows)
}

pub const CSV_HEADER: &str = "name,bicubic_psnr,model_psnr";

fn fmt_psnr(v: f64) -> String {
    format!("{v:.4}")
}

pub fn eval_table(rows: &[EvalRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).chain([4]).max().unwrap_or(4);
    let mut s = format!("{:<width$}  {:>12}  {:>12}\n", "name", "bicubic_psnr", "model_psnr");
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>12}", r.name, fmt_psnr(r.bicubic_psnr), fmt_psnr(r.model_psnr));
    }
    s
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.name, fmt_psnr(r.bicubic_psnr), fmt_psnr(r.model_psnr));
    }
    s
}

fn cmd_eval(ckpt: &Path, root: &Path, scale: usize, csv: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let rows = evaluate(ckpt, root, scale)?;
    out.write_all(eval_table(&rows).as_bytes())?;
    if let Some(path) = csv {
        fs::write(path, eval_csv(&rows))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(seed: u64) -> SolveFlags {
        SolveFlags {
            spec: SyntheticSpec {
                side_perturb: 0,
                seed,
                ..SyntheticSpec::default()
            },
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }

    #[test]
    fn exact_side_information_recovers_at_least_as_well() {
        for seed in 0..10 {
            let plain = solve_synthetic(SolveMode::L1, &flags(seed)).unwrap();
            let side = solve_synthetic(SolveMode::L1l1, &flags(seed)).unwrap();
            assert!(side.recovery_error <= plain.recovery_error, "seed {seed}");
        }
    }

    #[test]
    fn lambda_flag_is_named() {
        let mut f = flags(0);
        f.spec.lambda = -1.0;
        let e = solve_synthetic(SolveMode::L1, &f).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        assert!(e.to_string().contains("--lambda"));
    }

    #[test]
    fn average_row_and_formats_agree() {
        let rows = vec![
            EvalRow { name: "a".into(), bicubic_psnr: 30.0, model_psnr: 31.5 },
            EvalRow { name: "Average".into(), bicubic_psnr: 30.0, model_psnr: 31.5 },
        ];
        let table = eval_table(&rows);
        let csv = eval_csv(&rows);
        assert!(csv.starts_with("name,bicubic_psnr,model_psnr\n"));
        let nums = |s: &str| -> Vec<String> {
            s.lines().skip(1).flat_map(|l| l.split([',', ' ']).filter(|t| t.parse::<f64>().is_ok()).map(str::to_string).collect::<Vec<_>>()).collect()
        };
        assert_eq!(nums(&table), nums(&csv));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::MissingData("x".into())), EXIT_MISSING_DATA);
        assert_eq!(exit_code(&Error::NanLoss { epoch: 1, batch: 2 }), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::ConfigMismatch("x".into())), EXIT_MISMATCH);
        assert_eq!(exit_code(&Error::BadMagic("x".into())), EXIT_MISMATCH);
    }
}
