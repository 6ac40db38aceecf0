//! Command-line surface: corrupt, train, denoise, evaluate, verify, sweep
//! and synth subcommands over the library pipeline.
//!
//! Every command accepts an optional plain-text `key=value` config file;
//! explicit flags override file values. Each run records its fully resolved
//! configuration: CSV outputs carry it as `# key=value` comment lines, and
//! file-producing commands write a `<output>.cfg` sidecar.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{self, DatasetConfig};
use crate::error::Error;
use crate::image::{ColorImage, NoiseMap};
use crate::io;
use crate::metrics;
use crate::model::{build_model, IdcnnModel, DEFAULT_DEPTH, DEFAULT_FILTERS, DEFAULT_THRESHOLD};
use crate::nn::gradcheck::{standard_checks, Fault};
use crate::noise::{self, NoiseModel, TrainingNoise};
use crate::oracle;
use crate::par;
use crate::restore::{adaptive_mean_restore, switching_filter, RestoreConfig};
use crate::rng::SeedRng;
use crate::synth::synth_image;
use crate::train::{TrainConfig, Trainer};

enum CliError {
    Usage(String),
    Data(String),
    Verification(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "idcnn",
    version,
    about = "Switching filter for impulsive noise in color images: CNN impulse detector + adaptive mean restoration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt an image with impulsive noise and write the ground-truth map.
    Corrupt(CorruptArgs),
    /// Build a patch set from a directory of PPMs and train the detector.
    Train(TrainArgs),
    /// Detect impulses and restore them (the full switching filter).
    Denoise(DenoiseArgs),
    /// Compute detection and image-quality metrics as CSV.
    Evaluate(EvaluateArgs),
    /// Run the gradient and oracle self-tests.
    Verify(VerifyArgs),
    /// Ablation sweep over patch size, dataset size and training density.
    Sweep(SweepArgs),
    /// Generate synthetic photographs for self-contained runs.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Plain-text key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = library default). Env: IDCNN_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Record deterministic mode. Kernels always reduce in a fixed order,
    /// so outputs are bit-stable regardless; the flag is part of the
    /// resolved config.
    #[arg(long, default_value_t = false)]
    deterministic: bool,
}

struct Resolver {
    map: BTreeMap<String, String>,
    echo: Vec<(String, String)>,
}

impl Resolver {
    fn new(config: Option<&Path>) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "{}:{}: expected key=value",
                        path.display(),
                        lineno + 1
                    )));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Resolver {
            map,
            echo: Vec::new(),
        })
    }

    /// Flag value, else config-file value, else default.
    fn value<T: FromStr + std::fmt::Display>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> CliResult<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.map.get(key) {
                Some(raw) => raw.parse::<T>().map_err(|_| {
                    CliError::Usage(format!("config key {key}: cannot parse '{raw}'"))
                })?,
                None => default,
            },
        };
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Optional value with no default.
    fn optional<T: FromStr + std::fmt::Display>(
        &mut self,
        flag: Option<T>,
        key: &str,
    ) -> CliResult<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.map.get(key) {
                Some(raw) => Some(raw.parse::<T>().map_err(|_| {
                    CliError::Usage(format!("config key {key}: cannot parse '{raw}'"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.echo.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.echo.push((key.to_string(), value.to_string()));
    }

    fn echo_lines(&self) -> String {
        let mut sorted = self.echo.clone();
        sorted.sort();
        sorted.dedup();
        let mut out = String::new();
        for (k, v) in sorted {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    fn write_sidecar(&self, primary_output: &Path) -> CliResult<()> {
        let path = sibling_with_suffix(primary_output, ".cfg");
        std::fs::write(&path, self.echo_lines())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

fn apply_common(common: &CommonArgs, resolver: &mut Resolver) {
    let threads = match common.threads {
        Some(t) => t,
        None => std::env::var("IDCNN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0),
    };
    par::configure_threads(threads);
    resolver.note("threads", threads);
    resolver.note("deterministic", common.deterministic);
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Train(args) => cmd_train(args),
        Command::Denoise(args) => cmd_denoise(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

// ---------------------------------------------------------------- corrupt

#[derive(Args)]
struct CorruptArgs {
    /// Clean input image (PPM P6).
    #[arg(long)]
    input: PathBuf,
    /// Noisy output image (PPM P6).
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth map output (PGM P5, 0/255).
    #[arg(long)]
    map_output: PathBuf,
    /// Noise model: ctri or spin.
    #[arg(long)]
    model: Option<NoiseModel>,
    /// Noise density in [0, 1].
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_corrupt(args: CorruptArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);
    let model = r.value(args.model, "model", NoiseModel::Ctri)?;
    let rho = r.value(args.rho, "rho", 0.3)?;
    let seed = r.value(args.seed, "seed", 0)?;
    r.note("input", args.input.display());
    r.note("output", args.output.display());
    r.note("map-output", args.map_output.display());

    let image = io::read_ppm(&args.input)?;
    let mut rng = SeedRng::new(seed);
    let (noisy, map) = noise::corrupt(&image, model, rho, &mut rng)?;
    io::write_ppm(&noisy, &args.output)?;
    io::write_map_pgm(&map, &args.map_output)?;
    r.write_sidecar(&args.output)?;
    println!(
        "corrupted {} of {} pixels (density {:.6})",
        map.flagged_count(),
        image.pixel_count(),
        map.flagged_count() as f64 / image.pixel_count() as f64
    );
    Ok(())
}

// ------------------------------------------------------------------ train

#[derive(Args)]
struct TrainArgs {
    /// Directory of clean PPM training images.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    model_out: PathBuf,
    /// Per-epoch loss CSV (default: <model-out>.loss.csv).
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    decay_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Fixed training noise density.
    #[arg(long, conflicts_with = "train_rho_range")]
    train_rho: Option<f64>,
    /// Uniform-random density per variant, as "lo,hi".
    #[arg(long)]
    train_rho_range: Option<String>,
    /// Noise model used for training corruption.
    #[arg(long)]
    noise_model: Option<NoiseModel>,
    /// Apply rotation/flip augmentation.
    #[arg(long, default_value_t = false)]
    augment: bool,
    /// Comma-separated resize scales.
    #[arg(long)]
    scales: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Save a resumable checkpoint every k epochs (0 = only at the end).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Resume training from a checkpoint that carries optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Patch cache: load it when present, otherwise build and save it.
    #[arg(long)]
    patch_cache: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_f64_list(raw: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number '{s}'")))
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);

    let depth = r.value(args.depth, "depth", DEFAULT_DEPTH)?;
    let filters = r.value(args.filters, "filters", DEFAULT_FILTERS)?;
    let defaults = TrainConfig::default();
    let epochs_flag = r.optional(args.epochs, "epochs")?;
    let epochs = epochs_flag.unwrap_or(defaults.epochs);
    let lr = r.value(args.lr, "lr", defaults.lr)?;
    let lr_decay = r.value(args.lr_decay, "lr-decay", defaults.lr_decay)?;
    let decay_epoch = r.value(args.decay_epoch, "decay-epoch", defaults.decay_epoch)?;
    let batch_size = r.value(args.batch_size, "batch-size", defaults.batch_size)?;
    let patch_size = r.value(args.patch_size, "patch-size", defaults.patch_size)?;
    let noise_model = r.value(args.noise_model, "noise-model", NoiseModel::Ctri)?;
    let seed = r.value(args.seed, "seed", 0)?;
    let checkpoint_every = r.value(args.checkpoint_every, "checkpoint-every", 0)?;
    let scales_raw = r.value(args.scales, "scales", "1,0.9,0.8,0.7".to_string())?;
    let scales = parse_f64_list(&scales_raw)?;

    let range_raw = r.optional(args.train_rho_range, "train-rho-range")?;
    let train_noise = match range_raw {
        Some(raw) => {
            let parts = parse_f64_list(&raw)?;
            if parts.len() != 2 {
                return Err(CliError::Usage("train-rho-range expects lo,hi".into()));
            }
            TrainingNoise::Uniform {
                lo: parts[0],
                hi: parts[1],
            }
        }
        None => TrainingNoise::Fixed(r.value(args.train_rho, "train-rho", 0.3)?),
    };
    r.note("augment", args.augment);
    r.note("data-dir", args.data_dir.display());
    r.note("model-out", args.model_out.display());

    let cfg = TrainConfig {
        epochs,
        lr,
        lr_decay,
        decay_epoch,
        batch_size,
        patch_size,
        train_noise,
        seed,
    };

    // Resume keeps the checkpoint's architecture, schedule and dataset
    // settings; only the total epoch count may be extended explicitly.
    let (mut model, mut adam, mut epochs_done, cfg, noise_model, augment, scales) =
        match &args.resume {
            Some(path) => {
                let ckpt = checkpoint::load(path)?;
                let Some(adam) = ckpt.optimizer else {
                    return Err(CliError::Data(format!(
                        "{} has no optimizer state; cannot resume",
                        path.display()
                    )));
                };
                println!(
                    "resuming after epoch {} from {}",
                    ckpt.epochs_done,
                    path.display()
                );
                r.note("resume", path.display());
                let mut cfg = ckpt.config;
                if let Some(e) = epochs_flag {
                    cfg.epochs = e;
                }
                (
                    ckpt.model,
                    Some(adam),
                    ckpt.epochs_done as usize,
                    cfg,
                    ckpt.noise_model,
                    ckpt.augment,
                    ckpt.scales,
                )
            }
            None => (
                build_model::<f32>(depth, filters, &mut SeedRng::derive(seed, &[0x1417]))?,
                None,
                0,
                cfg,
                noise_model,
                args.augment,
                scales,
            ),
        };

    let ds_cfg = DatasetConfig {
        patch_size: cfg.patch_size,
        scales: scales.clone(),
        augment,
        noise_model,
        density: cfg.train_noise,
        seed: cfg.seed,
    };
    let set = match &args.patch_cache {
        Some(cache) if cache.exists() => {
            let set = dataset::load_patchset(cache)?;
            println!("loaded {} cached patches from {}", set.len(), cache.display());
            set
        }
        _ => {
            let set = dataset::build_training_set(&args.data_dir, &ds_cfg)?;
            if let Some(cache) = &args.patch_cache {
                dataset::save_patchset(&set, cache)?;
                println!("cached {} patches at {}", set.len(), cache.display());
            }
            set
        }
    };
    if set.p != cfg.patch_size {
        return Err(CliError::Data(format!(
            "patch cache holds {}x{} patches, config wants {}",
            set.p, set.p, cfg.patch_size
        )));
    }
    println!("training on {} patches of {}x{}", set.len(), set.p, set.p);

    let loss_out = args
        .loss_out
        .unwrap_or_else(|| sibling_with_suffix(&args.model_out, ".loss.csv"));
    let mut loss_csv = if loss_out.exists() && epochs_done > 0 {
        std::fs::read_to_string(&loss_out)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", loss_out.display())))?
    } else {
        format!("{}epoch,mean_loss\n", r.echo_lines())
    };

    let save_ckpt =
        |model: &IdcnnModel<f32>, adam: &[crate::nn::AdamState<f32>], done: usize| -> CliResult<()> {
            let ckpt = Checkpoint {
                model: model.clone(),
                config: cfg.clone(),
                epochs_done: done as u32,
                noise_model,
                augment,
                scales: scales.clone(),
                optimizer: Some(adam.to_vec()),
            };
            checkpoint::save(&ckpt, &args.model_out)?;
            Ok(())
        };

    while epochs_done < cfg.epochs {
        let mut trainer = match adam.take() {
            Some(states) => {
                Trainer::resume(&mut model, cfg.clone(), states, epochs_done)?
            }
            None => Trainer::new(&mut model, cfg.clone())?,
        };
        let loss = trainer.run_epoch(&set.patches)?;
        epochs_done = trainer.epochs_done();
        let states = trainer.into_adam();
        println!("epoch {epochs_done}/{}: loss {loss:.8}", cfg.epochs);
        let _ = writeln!(loss_csv, "{epochs_done},{loss:.8}");
        if checkpoint_every > 0 && epochs_done % checkpoint_every == 0 {
            save_ckpt(&model, &states, epochs_done)?;
        }
        adam = Some(states);
    }
    save_ckpt(&model, adam.as_deref().unwrap_or(&[]), epochs_done)?;
    std::fs::write(&loss_out, loss_csv)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", loss_out.display())))?;
    r.write_sidecar(&args.model_out)?;
    println!("saved checkpoint to {}", args.model_out.display());
    Ok(())
}

// ---------------------------------------------------------------- denoise

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy input image (PPM P6).
    #[arg(long)]
    input: PathBuf,
    /// Detector checkpoint (optional when --oracle-map is given).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Restored output image (PPM P6).
    #[arg(long)]
    output: PathBuf,
    /// Detection map output (PGM P5; default <output>.map.pgm).
    #[arg(long)]
    map_output: Option<PathBuf>,
    /// Probability map output (16-bit PGM P5), detector mode only.
    #[arg(long)]
    prob_output: Option<PathBuf>,
    /// Detection threshold in (0, 1).
    #[arg(long)]
    threshold: Option<f64>,
    /// Restore with this ground-truth map instead of running the detector.
    #[arg(long)]
    oracle_map: Option<PathBuf>,
    /// Maximum adaptive window side (odd).
    #[arg(long)]
    max_window: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_denoise(args: DenoiseArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);
    let threshold = r.value(args.threshold, "threshold", DEFAULT_THRESHOLD)?;
    let max_window = r.optional(args.max_window, "max-window")?;
    r.note("input", args.input.display());
    r.note("output", args.output.display());

    let noisy = io::read_ppm(&args.input)?;
    let cfg = RestoreConfig {
        max_window,
        ..RestoreConfig::default()
    };

    let (restored, map) = match &args.oracle_map {
        Some(map_path) => {
            r.note("oracle-map", map_path.display());
            let map = io::read_map_pgm(map_path)?;
            let restored = adaptive_mean_restore(&noisy, &map, &cfg)?;
            (restored, map)
        }
        None => {
            let Some(model_path) = &args.model else {
                return Err(CliError::Usage(
                    "denoise needs --model unless --oracle-map is given".into(),
                ));
            };
            r.note("model", model_path.display());
            let ckpt = checkpoint::load(model_path)?;
            if let Some(prob_path) = &args.prob_output {
                let prob = ckpt.model.probability_map(&noisy)?;
                io::write_probability_pgm(&prob, prob_path)?;
                r.note("prob-output", prob_path.display());
            }
            switching_filter(&noisy, &ckpt.model, threshold, &cfg)?
        }
    };

    let map_out = args
        .map_output
        .unwrap_or_else(|| sibling_with_suffix(&args.output, ".map.pgm"));
    io::write_ppm(&restored, &args.output)?;
    io::write_map_pgm(&map, &map_out)?;
    r.note("map-output", map_out.display());
    r.write_sidecar(&args.output)?;
    println!(
        "restored {} flagged pixels -> {}",
        map.flagged_count(),
        args.output.display()
    );
    Ok(())
}

// --------------------------------------------------------------- evaluate

#[derive(Args)]
struct EvaluateArgs {
    /// Clean reference image.
    #[arg(long, required_unless_present = "clean_dir")]
    clean: Option<PathBuf>,
    /// Restored (or noisy) image under evaluation.
    #[arg(long)]
    restored: Option<PathBuf>,
    /// Ground-truth noise map (PGM).
    #[arg(long)]
    truth_map: Option<PathBuf>,
    /// Estimated noise map (PGM).
    #[arg(long)]
    est_map: Option<PathBuf>,
    /// Batch mode: directory of clean images; needs the three dirs below.
    #[arg(long)]
    clean_dir: Option<PathBuf>,
    #[arg(long)]
    restored_dir: Option<PathBuf>,
    #[arg(long)]
    truth_dir: Option<PathBuf>,
    #[arg(long)]
    est_dir: Option<PathBuf>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Nominal noise density recorded in the row (default: realized truth
    /// density).
    #[arg(long)]
    rho: Option<f64>,
    /// Method label recorded in the row.
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

struct EvalRow {
    image: String,
    rho: f64,
    wacc: f64,
    fpr: f64,
    fnr: f64,
    psnr: f64,
    mae: f64,
    ssim: f64,
    mae_tp: f64,
    mae_fp: f64,
    mae_fn: f64,
}

fn evaluate_one(
    image: String,
    clean: &ColorImage,
    restored: &ColorImage,
    truth: &NoiseMap,
    est: &NoiseMap,
    rho: Option<f64>,
) -> CliResult<EvalRow> {
    let c = metrics::confusion(truth, est)?;
    let q = metrics::quality(clean, restored)?;
    let aim = metrics::aim_diagram(clean, restored, truth, est)?;
    let realized = truth.flagged_count() as f64 / truth.data().len() as f64;
    Ok(EvalRow {
        image,
        rho: rho.unwrap_or(realized),
        wacc: metrics::wacc(&c),
        fpr: metrics::fpr(&c),
        fnr: metrics::fnr(&c),
        psnr: q.psnr,
        mae: q.mae,
        ssim: q.ssim,
        mae_tp: aim.mae_tp,
        mae_fp: aim.mae_fp,
        mae_fn: aim.mae_fn,
    })
}

fn row_csv(row: &EvalRow, method: &str) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        row.image,
        fmt_metric(row.rho),
        method,
        fmt_metric(row.wacc),
        fmt_metric(row.fpr),
        fmt_metric(row.fnr),
        fmt_metric(row.psnr),
        fmt_metric(row.mae),
        fmt_metric(row.ssim),
        fmt_metric(row.mae_tp),
        fmt_metric(row.mae_fp),
        fmt_metric(row.mae_fn),
    )
}

const EVAL_HEADER: &str = "image,rho,method,wacc,fpr,fnr,psnr,mae,ssim,mae_tp,mae_fp,mae_fn\n";

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);
    let method = r.value(args.method, "method", "idcnn".to_string())?;
    let rho = r.optional(args.rho, "rho")?;

    let mut rows = Vec::new();
    if let Some(clean_dir) = &args.clean_dir {
        let (Some(rdir), Some(tdir), Some(edir)) =
            (&args.restored_dir, &args.truth_dir, &args.est_dir)
        else {
            return Err(CliError::Usage(
                "batch mode needs --restored-dir, --truth-dir and --est-dir".into(),
            ));
        };
        r.note("clean-dir", clean_dir.display());
        let files = dataset::list_images(clean_dir)?;
        if files.is_empty() {
            return Err(CliError::Data(format!(
                "no PPM images in {}",
                clean_dir.display()
            )));
        }
        for file in files {
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let clean = io::read_ppm(&file)?;
            let restored = io::read_ppm(rdir.join(format!("{stem}.ppm")))?;
            let truth = io::read_map_pgm(tdir.join(format!("{stem}.pgm")))?;
            let est = io::read_map_pgm(edir.join(format!("{stem}.pgm")))?;
            rows.push(evaluate_one(stem, &clean, &restored, &truth, &est, rho)?);
        }
    } else {
        let (Some(clean), Some(restored), Some(truth), Some(est)) =
            (&args.clean, &args.restored, &args.truth_map, &args.est_map)
        else {
            return Err(CliError::Usage(
                "evaluate needs --clean, --restored, --truth-map and --est-map (or batch dirs)"
                    .into(),
            ));
        };
        let stem = clean
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        r.note("clean", clean.display());
        r.note("restored", restored.display());
        rows.push(evaluate_one(
            stem,
            &io::read_ppm(clean)?,
            &io::read_ppm(restored)?,
            &io::read_map_pgm(truth)?,
            &io::read_map_pgm(est)?,
            rho,
        )?);
    }

    let mut csv = format!("{}{}", r.echo_lines(), EVAL_HEADER);
    for row in &rows {
        csv.push_str(&row_csv(row, &method));
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = EvalRow {
            image: "mean".to_string(),
            rho: rows.iter().map(|r| r.rho).sum::<f64>() / n,
            wacc: rows.iter().map(|r| r.wacc).sum::<f64>() / n,
            fpr: rows.iter().map(|r| r.fpr).sum::<f64>() / n,
            fnr: rows.iter().map(|r| r.fnr).sum::<f64>() / n,
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            mae: rows.iter().map(|r| r.mae).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            mae_tp: rows.iter().map(|r| r.mae_tp).sum::<f64>() / n,
            mae_fp: rows.iter().map(|r| r.mae_fp).sum::<f64>() / n,
            mae_fn: rows.iter().map(|r| r.mae_fn).sum::<f64>() / n,
        };
        csv.push_str(&row_csv(&mean, &method));
    }

    match &args.output {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

// ----------------------------------------------------------------- verify

#[derive(Args)]
struct VerifyArgs {
    /// Corrupt a backward formula to prove the harness catches it.
    #[arg(long, default_value_t = false)]
    inject_fault: bool,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_verify(args: VerifyArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);
    let fault = if args.inject_fault {
        Fault::ScaleConvWeightGrad
    } else {
        Fault::None
    };

    let started = std::time::Instant::now();
    let mut all_ok = true;
    let mut report = |name: &str, worst: f64, threshold: f64| {
        let ok = worst < threshold;
        all_ok &= ok;
        println!(
            "check {name}: worst={worst:.3e} threshold={threshold:.1e} {}",
            if ok { "PASS" } else { "FAIL" }
        );
    };

    for check in standard_checks(fault)? {
        report(check.name, check.max_rel_err, check.threshold);
    }

    // Kernel and metric loop-oracles on random small instances.
    let mut rng = SeedRng::new(0xC0FFEE);
    let mut worst_conv: f64 = 0.0;
    let mut worst_mse: f64 = 0.0;
    for _ in 0..50 {
        let dims = (
            1 + rng.index(2),
            1 + rng.index(3),
            3 + rng.index(10),
            3 + rng.index(10),
        );
        let n = dims.0 * dims.1 * dims.2 * dims.3;
        let data: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let input =
            crate::tensor::Tensor::from_vec(dims.0, dims.1, dims.2, dims.3, data).unwrap();
        let k_out = 1 + rng.index(4);
        let params = crate::nn::ConvParams::from_parts(
            dims.1,
            k_out,
            (0..k_out * dims.1 * 9)
                .map(|_| rng.uniform_range(-1.0, 1.0))
                .collect(),
            (0..k_out).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        )?;
        let fast = crate::nn::conv2d(&input, &params)?;
        let slow = oracle::conv2d_reference(&input, &params);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            worst_conv = worst_conv.max((a - b).abs() / (a.abs() + b.abs()).max(1.0));
        }
        let tdata: Vec<f64> = (0..fast.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let target =
            crate::tensor::Tensor::from_vec(dims.0, k_out, dims.2, dims.3, tdata).unwrap();
        let (loss, _) = crate::nn::mse_loss(&fast, &target)?;
        let want = oracle::mse_loss_reference(&fast, &target);
        worst_mse = worst_mse.max((loss - want).abs() / want.abs().max(1.0));
    }
    report("oracle conv2d", worst_conv, 1e-6);
    report("oracle mse_loss", worst_mse, 1e-6);

    let mut worst_psnr: f64 = 0.0;
    let mut worst_mae: f64 = 0.0;
    let mut worst_ssim: f64 = 0.0;
    let mut confusion_exact = true;
    for _ in 0..50 {
        let (h, w) = (11 + rng.index(6), 11 + rng.index(6));
        let mut a = ColorImage::new(h, w);
        let mut b = ColorImage::new(h, w);
        for v in a.data_mut() {
            *v = rng.uniform_u8();
        }
        for v in b.data_mut() {
            *v = rng.uniform_u8();
        }
        let p = metrics::psnr(&a, &b)?;
        worst_psnr = worst_psnr.max((p - oracle::psnr_reference(&a, &b)).abs());
        let m = metrics::mae(&a, &b)?;
        worst_mae = worst_mae.max((m - oracle::mae_reference(&a, &b)).abs());
        let s = metrics::ssim_c(&a, &b)?;
        let s_ref = oracle::ssim_reference(&a, &b);
        worst_ssim = worst_ssim.max((s - s_ref).abs() / s_ref.abs().max(1e-9));

        let mut truth = NoiseMap::zeros(h, w);
        let mut est = NoiseMap::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                if rng.bernoulli(0.3) {
                    truth.set(y, x, 1.0);
                }
                if rng.bernoulli(0.3) {
                    est.set(y, x, 1.0);
                }
            }
        }
        let c = metrics::confusion(&truth, &est)?;
        let (tp, tn, fp, fneg) = oracle::confusion_reference(&truth, &est);
        confusion_exact &= (c.tp, c.tn, c.fp, c.fn_) == (tp, tn, fp, fneg);
    }
    report("oracle psnr", worst_psnr, 1e-9);
    report("oracle mae", worst_mae, 1e-9);
    report("oracle ssim_c", worst_ssim, 1e-6);
    report(
        "oracle confusion",
        if confusion_exact { 0.0 } else { 1.0 },
        0.5,
    );

    // Restoration against the brute-force minimal-window reference.
    let mut restore_exact = true;
    let mut switching_ok = true;
    let cfg = RestoreConfig::default();
    for case in 0..100 {
        let rho = 0.1 + 0.8 * (case % 9) as f64 / 8.0;
        let mut img = ColorImage::new(16, 16);
        for v in img.data_mut() {
            *v = rng.uniform_u8();
        }
        let mut map = NoiseMap::zeros(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                if rng.bernoulli(rho) {
                    map.set(y, x, 1.0);
                }
            }
        }
        if map.flagged_count() == 256 {
            continue;
        }
        let fast = adaptive_mean_restore(&img, &map, &cfg)?;
        let slow = oracle::restore_reference(&img, &map, &cfg).unwrap();
        restore_exact &= fast == slow;
        for y in 0..16 {
            for x in 0..16 {
                if !map.flagged(y, x) {
                    switching_ok &= fast.pixel(y, x) == img.pixel(y, x);
                }
            }
        }
    }
    report(
        "oracle adaptive_mean_restore",
        if restore_exact { 0.0 } else { 1.0 },
        0.5,
    );
    report(
        "switching property (clean pixels untouched)",
        if switching_ok { 0.0 } else { 1.0 },
        0.5,
    );

    println!("verify finished in {:.1}s", started.elapsed().as_secs_f64());
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Verification("one or more checks failed".into()))
    }
}

// ------------------------------------------------------------------ sweep

#[derive(Args)]
struct SweepArgs {
    /// Directory of clean PPM training images.
    #[arg(long)]
    data_dir: PathBuf,
    /// Directory of clean PPM test images.
    #[arg(long)]
    test_dir: PathBuf,
    /// Output directory for per-cell artifacts and sweep.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated patch sizes.
    #[arg(long, default_value = "41")]
    patch_sizes: String,
    /// Comma-separated training-set sizes in images (0 = all).
    #[arg(long, default_value = "0")]
    dataset_sizes: String,
    /// Comma-separated training densities; "random" uses U[0.1, 0.5].
    #[arg(long, default_value = "0.3")]
    train_rhos: String,
    /// Comma-separated test densities.
    #[arg(long, default_value = "0.1,0.3,0.5")]
    test_rhos: String,
    /// Training repetitions per cell.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 7)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    filters: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

fn run_self(args: &[String]) -> CliResult<()> {
    let exe = std::env::current_exe()
        .map_err(|e| CliError::Data(format!("cannot locate own executable: {e}")))?;
    let status = std::process::Command::new(exe)
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| CliError::Data(format!("cannot spawn subcommand: {e}")))?;
    if !status.success() {
        return Err(CliError::Data(format!(
            "subcommand {:?} failed with {status}",
            args.first()
        )));
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);
    let patch_sizes: Vec<usize> = args
        .patch_sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad patch size '{s}'")))
        })
        .collect::<CliResult<_>>()?;
    let dataset_sizes: Vec<usize> = args
        .dataset_sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad dataset size '{s}'")))
        })
        .collect::<CliResult<_>>()?;
    let train_rhos: Vec<String> = args
        .train_rhos
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let test_rhos = parse_f64_list(&args.test_rhos)?;
    r.note("data-dir", args.data_dir.display());
    r.note("test-dir", args.test_dir.display());
    r.note("patch-sizes", &args.patch_sizes);
    r.note("dataset-sizes", &args.dataset_sizes);
    r.note("train-rhos", &args.train_rhos);
    r.note("test-rhos", &args.test_rhos);
    r.note("repeats", args.repeats);
    r.note("epochs", args.epochs);
    r.note("depth", args.depth);
    r.note("filters", args.filters);

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let all_train = dataset::list_images(&args.data_dir)?;
    if all_train.is_empty() {
        return Err(CliError::Data("no training images".into()));
    }
    let test_images = dataset::list_images(&args.test_dir)?;
    if test_images.is_empty() {
        return Err(CliError::Data("no test images".into()));
    }

    let mut sweep_csv = format!(
        "{}patch_size,dataset_size,train_rho,repeat,test_rho,wacc,fpr,fnr,psnr,mae,ssim\n",
        r.echo_lines()
    );

    for &p in &patch_sizes {
        for &ds in &dataset_sizes {
            let n_images = if ds == 0 {
                all_train.len()
            } else {
                ds.min(all_train.len())
            };
            for rho_tr in &train_rhos {
                for rep in 0..args.repeats {
                    let cell = format!("p{p}_n{n_images}_r{rho_tr}_rep{rep}");
                    println!("cell {cell}");
                    let cell_dir = args.out_dir.join(&cell);
                    let subset = cell_dir.join("train");
                    std::fs::create_dir_all(&subset)
                        .map_err(|e| CliError::Data(format!("cannot create subset dir: {e}")))?;
                    for img in all_train.iter().take(n_images) {
                        let dst = subset.join(img.file_name().unwrap());
                        if !dst.exists() {
                            std::fs::copy(img, &dst)
                                .map_err(|e| CliError::Data(format!("copy failed: {e}")))?;
                        }
                    }
                    let seed = args.seed ^ (rep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                    let model_path = cell_dir.join("model.ckpt");
                    let mut train_args = vec![
                        "train".to_string(),
                        format!("--data-dir={}", subset.display()),
                        format!("--model-out={}", model_path.display()),
                        format!("--depth={}", args.depth),
                        format!("--filters={}", args.filters),
                        format!("--epochs={}", args.epochs),
                        format!("--batch-size={}", args.batch_size),
                        format!("--patch-size={p}"),
                        format!("--seed={seed}"),
                    ];
                    if rho_tr == "random" {
                        train_args.push("--train-rho-range=0.1,0.5".to_string());
                    } else {
                        train_args.push(format!("--train-rho={rho_tr}"));
                    }
                    run_self(&train_args)?;

                    for &rho_test in &test_rhos {
                        let eval_dir = cell_dir.join(format!("test_{rho_test}"));
                        for sub in ["clean", "noisy", "truth", "restored", "est"] {
                            std::fs::create_dir_all(eval_dir.join(sub))
                                .map_err(|e| CliError::Data(format!("mkdir failed: {e}")))?;
                        }
                        for (ti, img) in test_images.iter().enumerate() {
                            let stem = format!("t{ti:03}");
                            let clean_p = eval_dir.join("clean").join(format!("{stem}.ppm"));
                            std::fs::copy(img, &clean_p)
                                .map_err(|e| CliError::Data(format!("copy failed: {e}")))?;
                            let noisy_p = eval_dir.join("noisy").join(format!("{stem}.ppm"));
                            let truth_p = eval_dir.join("truth").join(format!("{stem}.pgm"));
                            run_self(&[
                                "corrupt".to_string(),
                                format!("--input={}", clean_p.display()),
                                format!("--output={}", noisy_p.display()),
                                format!("--map-output={}", truth_p.display()),
                                format!("--rho={rho_test}"),
                                format!("--seed={}", seed ^ (0xBEEF + ti as u64)),
                            ])?;
                            let restored_p = eval_dir.join("restored").join(format!("{stem}.ppm"));
                            let est_p = eval_dir.join("est").join(format!("{stem}.pgm"));
                            run_self(&[
                                "denoise".to_string(),
                                format!("--input={}", noisy_p.display()),
                                format!("--model={}", model_path.display()),
                                format!("--output={}", restored_p.display()),
                                format!("--map-output={}", est_p.display()),
                            ])?;
                        }
                        let csv_path = eval_dir.join("eval.csv");
                        run_self(&[
                            "evaluate".to_string(),
                            format!("--clean-dir={}", eval_dir.join("clean").display()),
                            format!("--restored-dir={}", eval_dir.join("restored").display()),
                            format!("--truth-dir={}", eval_dir.join("truth").display()),
                            format!("--est-dir={}", eval_dir.join("est").display()),
                            format!("--output={}", csv_path.display()),
                            format!("--rho={rho_test}"),
                        ])?;
                        let mean = read_metric_row(&csv_path)?;
                        let _ = writeln!(sweep_csv, "{p},{n_images},{rho_tr},{rep},{rho_test},{mean}");
                    }
                }
            }
        }
    }
    let out = args.out_dir.join("sweep.csv");
    std::fs::write(&out, sweep_csv)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
    println!("sweep results at {}", out.display());
    Ok(())
}

/// Pulls wacc..ssim from an evaluate CSV: the aggregated "mean" row when it
/// exists, otherwise the single data row.
fn read_metric_row(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut fallback = None;
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("image,") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 9 {
            continue;
        }
        let row = fields[3..9].join(",");
        if fields[0] == "mean" {
            return Ok(row);
        }
        fallback = Some(row);
    }
    fallback.ok_or_else(|| CliError::Data(format!("no usable metric row in {}", path.display())))
}

// ------------------------------------------------------------------ synth

#[derive(Args)]
struct SynthArgs {
    /// Output directory (images are named img000.ppm, img001.ppm, ...).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 321)]
    height: usize,
    #[arg(long, default_value_t = 481)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    apply_common(&args.common, &mut r);
    r.note("count", args.count);
    r.note("height", args.height);
    r.note("width", args.width);
    r.note("seed", args.seed);
    std::fs::create_dir_all(&args.output)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.output.display())))?;
    for i in 0..args.count {
        let img = synth_image(args.height, args.width, args.seed.wrapping_add(i as u64));
        io::write_ppm(&img, args.output.join(format!("img{i:03}.ppm")))?;
    }
    println!(
        "wrote {} synthetic {}x{} images to {}",
        args.count,
        args.height,
        args.width,
        args.output.display()
    );
    Ok(())
}
