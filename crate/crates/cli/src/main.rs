//! `lapsr`: train, run and evaluate Laplacian-pyramid super-resolution models.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lapsr_core::gradcheck::{run_gradcheck, GradcheckConfig, Precision};
use lapsr_core::imaging::{generate_synthetic_corpus, CorpusManifest, SyntheticSpec};
use lapsr_core::metrics::{format_db, EvalReport, MetricConfig};
use lapsr_core::pipeline::{
    evaluate, lambda_grid, superresolve, sweep_lambda, train_on_manifest, Method, SweepEntry,
    TrainConfig,
};
use lapsr_core::{Error, Scale};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "lapsr",
    version,
    about = "Laplacian-pyramid text super-resolution"
)]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the train split of a corpus.
    Train(TrainCmd),
    /// Super-resolve one PNG with a trained checkpoint.
    Sr(SrCmd),
    /// Score a checkpoint or bicubic upscaling on the test split.
    Eval(EvalCmd),
    /// Train and evaluate one model per λ_gdl.
    Sweep(SweepCmd),
    /// Write a synthetic glyph corpus with its manifest.
    MakeCorpus(MakeCorpusCmd),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckCmd),
}

/// Training parameters. Precedence: defaults < `--config` file < flags < `--set`.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iters_per_epoch: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_floor: Option<f64>,
    #[arg(long)]
    lr_halving_period: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda_gdl: Option<f64>,
    /// Comma-separated subset of 1.0,0.9,...,0.5.
    #[arg(long)]
    augment_scales: Option<String>,
    /// Comma-separated degrees from 0,90,180,270.
    #[arg(long)]
    augment_rotations: Option<String>,
    /// Comma-separated from none,horizontal,vertical.
    #[arg(long)]
    augment_flips: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Any configuration key, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainFlags {
    fn resolve(&self) -> CliResult<TrainConfig> {
        let usage = |e: Error| CliError::Usage(e.to_string());
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path).map_err(usage)?,
            None => TrainConfig::default(),
        };
        let s = |v: &Option<String>| v.clone();
        let flags: [(&str, Option<String>); 19] = [
            ("scale", self.scale.map(|v| v.to_string())),
            ("depth", self.depth.map(|v| v.to_string())),
            ("features", self.features.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            (
                "iters_per_epoch",
                self.iters_per_epoch.map(|v| v.to_string()),
            ),
            ("batch", self.batch.map(|v| v.to_string())),
            ("patch", self.patch.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("lr_floor", self.lr_floor.map(|v| v.to_string())),
            (
                "lr_halving_period",
                self.lr_halving_period.map(|v| v.to_string()),
            ),
            ("momentum", self.momentum.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("lambda_gdl", self.lambda_gdl.map(|v| v.to_string())),
            ("augment_scales", s(&self.augment_scales)),
            ("augment_rotations", s(&self.augment_rotations)),
            ("augment_flips", s(&self.augment_flips)),
            ("seed", self.seed.map(|v| v.to_string())),
            (
                "checkpoint_every",
                self.checkpoint_every.map(|v| v.to_string()),
            ),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value).map_err(usage)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v).map_err(usage)?;
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Corpus manifest (or its directory).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for config echo, logs and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to continue from (its `.lpso` optimizer state must sit beside it).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct SrCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// 2, 4 or 8; at most the model's own factor.
    #[arg(long)]
    scale: u32,
}

#[derive(Args, Debug)]
struct EvalCmd {
    /// `bicubic` or a checkpoint path.
    #[arg(long)]
    method: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    scale: u32,
    /// Border pixels removed before scoring (default: the scale).
    #[arg(long)]
    shave: Option<usize>,
    /// Output directory for eval.csv, eval.json and the config echo.
    #[arg(long)]
    out: PathBuf,
    /// Also write the upscaled images under `<out>/images`.
    #[arg(long)]
    save_images: bool,
}

#[derive(Args, Debug)]
struct SweepCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated λ values, all trained with the base learning rate.
    /// Default: the five-row grid with its per-λ learning-rate ranges.
    #[arg(long)]
    lambdas: Option<String>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct MakeCorpusCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// The first `train` images form the train split.
    #[arg(long, default_value_t = 8)]
    train: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PrecisionArg {
    Single,
    Double,
    Both,
}

#[derive(Args, Debug)]
struct GradcheckCmd {
    #[arg(long, value_enum, default_value_t = PrecisionArg::Both)]
    precision: PrecisionArg,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| {
            CliError::Runtime(Error::Io {
                path: parent.into(),
                source: e,
            })
        })?;
    }
    fs::write(path, text).map_err(|e| {
        CliError::Runtime(Error::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn check_scale(scale: u32) -> CliResult<Scale> {
    Scale::new(scale).map_err(|e| CliError::Usage(e.to_string()))
}

fn print_report(report: &EvalReport) {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} images ({} failed) at x{}, shave {}: PSNR {} dB, SSIM {}, IFC {}",
        report.count,
        report.failed,
        report.scale,
        report.shave,
        report.mean_psnr.map_or("n/a".into(), format_db),
        opt(report.mean_ssim),
        opt(report.mean_ifc)
    );
}

fn run_train(cmd: &TrainCmd) -> CliResult {
    let cfg = cmd.flags.resolve()?;
    let manifest = CorpusManifest::load(&cmd.manifest)?;
    let outcome = train_on_manifest(&cfg, &manifest, cmd.resume.as_deref(), Some(&cmd.out))?;
    if let Some(last) = outcome.log.rows.last() {
        println!(
            "trained to iteration {} (epoch {}): loss {}, model at {}",
            last.iteration,
            last.epoch,
            last.total,
            cmd.out.join("model.lpsr").display()
        );
    } else {
        println!(
            "nothing to do: checkpoint already at iteration {}",
            outcome.state.iteration
        );
    }
    Ok(())
}

fn run_sr(cmd: &SrCmd) -> CliResult {
    check_scale(cmd.scale)?;
    let img = superresolve(&cmd.checkpoint, &cmd.input, cmd.scale, &cmd.output)?;
    let mut echo = cmd.output.clone().into_os_string();
    echo.push(".config.txt");
    write_text(
        Path::new(&echo),
        &format!(
            "checkpoint = {}\ninput = {}\nscale = {}\noutput = {}\n",
            cmd.checkpoint.display(),
            cmd.input.display(),
            cmd.scale,
            cmd.output.display()
        ),
    )?;
    println!(
        "wrote {}x{} image to {}",
        img.width(),
        img.height(),
        cmd.output.display()
    );
    Ok(())
}

fn run_eval(cmd: &EvalCmd) -> CliResult {
    check_scale(cmd.scale)?;
    let manifest = CorpusManifest::load(&cmd.manifest)?;
    let method = Method::from_arg(&cmd.method)?;
    let images = cmd.save_images.then(|| cmd.out.join("images"));
    let report = evaluate(
        &method,
        &manifest,
        cmd.scale,
        cmd.shave,
        &MetricConfig::default(),
        images.as_deref(),
    )?;
    write_text(
        &cmd.out.join("config.txt"),
        &format!(
            "method = {}\nmanifest = {}\nscale = {}\nshave = {}\nsave_images = {}\n",
            cmd.method,
            cmd.manifest.display(),
            cmd.scale,
            report.shave,
            cmd.save_images
        ),
    )?;
    report.write(cmd.out.join("eval.csv"), cmd.out.join("eval.json"))?;
    print_report(&report);
    Ok(())
}

fn run_sweep(cmd: &SweepCmd) -> CliResult {
    let base = cmd.flags.resolve()?;
    let entries: Vec<SweepEntry> = match &cmd.lambdas {
        None => lambda_grid(),
        Some(list) => list
            .split(',')
            .map(|v| {
                let lambda_gdl = v
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("invalid λ `{v}`")))?;
                Ok(SweepEntry {
                    lambda_gdl,
                    lr: base.lr,
                    lr_floor: base.lr_floor,
                })
            })
            .collect::<CliResult<_>>()?,
    };
    if let Some(e) = entries
        .iter()
        .find(|e| e.lambda_gdl.is_nan() || e.lambda_gdl < 0.0)
    {
        return Err(CliError::Usage(format!(
            "λ must be >= 0, got {}",
            e.lambda_gdl
        )));
    }
    let manifest = CorpusManifest::load(&cmd.manifest)?;
    let grid: String = entries
        .iter()
        .map(|e| {
            format!(
                "# sweep lambda_gdl = {}, lr = {}, lr_floor = {}\n",
                e.lambda_gdl,
                e.lr,
                e.lr_floor.map_or("none".into(), |f| f.to_string())
            )
        })
        .collect();
    write_text(&cmd.out.join("config.txt"), &(base.to_text() + &grid))?;
    let table = sweep_lambda(
        &base,
        &entries,
        &manifest,
        &MetricConfig::default(),
        Some(&cmd.out),
    )?;
    print!("{}", table.to_csv());
    Ok(())
}

fn run_make_corpus(cmd: &MakeCorpusCmd) -> CliResult {
    let spec = SyntheticSpec {
        count: cmd.count,
        train: cmd.train,
        width: cmd.width,
        height: cmd.height,
    };
    if spec.train > spec.count {
        return Err(CliError::Usage(format!(
            "--train {} exceeds --count {}",
            spec.train, spec.count
        )));
    }
    let manifest = generate_synthetic_corpus(&spec, &cmd.out, cmd.seed)?;
    write_text(
        &cmd.out.join("corpus_config.txt"),
        &format!(
            "count = {}\ntrain = {}\nwidth = {}\nheight = {}\nseed = {}\n",
            spec.count, spec.train, spec.width, spec.height, cmd.seed
        ),
    )?;
    println!(
        "wrote {} images and {}",
        manifest.entries().len(),
        cmd.out.join("manifest.tsv").display()
    );
    Ok(())
}

fn run_gradcheck_cmd(cmd: &GradcheckCmd) -> CliResult {
    if cmd.instances == 0 || cmd.step.is_nan() || cmd.step <= 0.0 {
        return Err(CliError::Usage(
            "--instances and --step must be positive".into(),
        ));
    }
    let precisions = match cmd.precision {
        PrecisionArg::Single => vec![Precision::Single],
        PrecisionArg::Double => vec![Precision::Double],
        PrecisionArg::Both => vec![Precision::Double, Precision::Single],
    };
    let mut failed = 0;
    for precision in precisions {
        let cfg = GradcheckConfig {
            precision,
            instances: cmd.instances,
            seed: cmd.seed,
            step: cmd.step,
        };
        println!(
            "{precision:?} precision (tolerance {:e}, step {:e}, seed {})",
            precision.tolerance(),
            cmd.step,
            cmd.seed
        );
        for r in run_gradcheck(&cfg)? {
            println!(
                "  {:<18} {:>3} instances {:>4} probes  max rel error {:.3e}  {}",
                r.op,
                r.instances,
                r.probes,
                r.max_rel_error,
                if r.passed() { "ok" } else { "FAILED" }
            );
            failed += usize::from(!r.passed());
        }
    }
    if failed > 0 {
        return Err(CliError::Runtime(Error::InvalidArgument(format!(
            "{failed} gradient checks failed"
        ))));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "warn"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();
    let result = match &cli.command {
        Command::Train(cmd) => run_train(cmd),
        Command::Sr(cmd) => run_sr(cmd),
        Command::Eval(cmd) => run_eval(cmd),
        Command::Sweep(cmd) => run_sweep(cmd),
        Command::MakeCorpus(cmd) => run_make_corpus(cmd),
        Command::Gradcheck(cmd) => run_gradcheck_cmd(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
