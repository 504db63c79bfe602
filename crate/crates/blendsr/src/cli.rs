//! Batch command-line front end: degrade, train, sr, eval, compare.
//!
//! Configuration precedence is CLI flag > config file (key=value lines) >
//! built-in default, and the effective configuration is echoed into the
//! training log for provenance. Exit codes: 0 success, 1 internal error,
//! 2 usage or input error.

use crate::checkpoint;
use crate::data::{bicubic_resize, bilinear_resize, load_image, make_pairs, save_image, DatasetSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair, time_sr, EvalReport, EvalRow};
use crate::network::{build_model, count_params, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "blendsr", version, about = "Single-image super-resolution with a dense blended-attention network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ConfigFlags {
    /// Upscaling factor (2, 3 or 4)
    #[arg(long)]
    pub scale: Option<usize>,
    /// key=value config file; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed for model init, patch order and batch shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preset tiny model (2 units, 2 layers/unit, growth 8) for tests
    #[arg(long)]
    pub toy: bool,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// HR patch size (divisible by the scale)
    #[arg(long)]
    pub patch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bicubic-downscale every PNG in a directory
    Degrade {
        /// Directory of input PNGs
        #[arg(long)]
        input: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Train on a directory of HR PNGs; writes checkpoint.ckpt + train.log
    Train {
        /// Directory of HR training PNGs
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the checkpoint and metrics log
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Super-resolve one LR PNG with a trained checkpoint
    Sr {
        /// LR input PNG
        #[arg(long)]
        input: PathBuf,
        /// SR output PNG
        #[arg(long)]
        output: PathBuf,
        /// Trained checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Compare SR results against ground truth, paired by filename stem
    Eval {
        /// Directory of reconstructed PNGs
        #[arg(long)]
        input: PathBuf,
        /// Directory of ground-truth PNGs
        #[arg(long)]
        hr: PathBuf,
        /// Report CSV path (stdout when omitted)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Degrade-and-reconstruct baseline table: bilinear, bicubic and
    /// optionally the model
    Compare {
        /// Directory of HR PNGs
        #[arg(long)]
        input: PathBuf,
        /// Optional trained checkpoint for the model row
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Optional directory for the report and reconstructed images
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

/// Fully resolved run settings (flag > config file > default).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scale: usize,
    /// True when the scale came from a flag or config key rather than the
    /// built-in default; only then is it checked against checkpoints.
    pub scale_explicit: bool,
    pub seed: u64,
    pub toy: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub augment: bool,
    pub val_fraction: f64,
    pub patience: usize,
    pub lr_factor: f64,
    pub lr_floor: f64,
    pub in_channels: usize,
    pub num_units: Option<usize>,
    pub layers_per_unit: Option<usize>,
    pub growth: Option<usize>,
    pub feat_channels: Option<usize>,
    pub bottleneck_channels: Option<usize>,
    pub attention_ratio: Option<usize>,
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|source| Error::io(path, source))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parsed<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("config key {key}: cannot parse {raw:?}"))),
    }
}

fn parsed_bool(map: &BTreeMap<String, String>, key: &str) -> Result<Option<bool>> {
    match map.get(key).map(String::as_str) {
        None => Ok(None),
        Some("1") | Some("true") | Some("yes") | Some("on") => Ok(Some(true)),
        Some("0") | Some("false") | Some("no") | Some("off") => Ok(Some(false)),
        Some(other) => Err(Error::Config(format!("config key {key}: cannot parse {other:?} as bool"))),
    }
}

impl RunConfig {
    pub fn resolve(flags: &ConfigFlags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        let scale_from_file: Option<usize> = parsed(&file, "scale")?;
        let cfg = Self {
            scale: flags.scale.or(scale_from_file).unwrap_or(2),
            scale_explicit: flags.scale.is_some() || scale_from_file.is_some(),
            seed: flags.seed.or(parsed(&file, "seed")?).unwrap_or(0),
            toy: flags.toy || parsed_bool(&file, "toy")?.unwrap_or(false),
            epochs: flags.epochs.or(parsed(&file, "epochs")?).unwrap_or(100),
            batch_size: flags.batch_size.or(parsed(&file, "batch_size")?).unwrap_or(16),
            lr0: flags.lr.or(parsed(&file, "lr")?).unwrap_or(1e-4),
            patch_size: flags.patch_size.or(parsed(&file, "patch_size")?).unwrap_or(96),
            patch_stride: parsed(&file, "patch_stride")?.unwrap_or(0),
            augment: parsed_bool(&file, "augment")?.unwrap_or(true),
            val_fraction: parsed(&file, "val_fraction")?.unwrap_or(0.1),
            patience: parsed(&file, "patience")?.unwrap_or(10),
            lr_factor: parsed(&file, "lr_factor")?.unwrap_or(0.5),
            lr_floor: parsed(&file, "lr_floor")?.unwrap_or(1e-7),
            in_channels: parsed(&file, "in_channels")?.unwrap_or(3),
            num_units: parsed(&file, "units")?,
            layers_per_unit: parsed(&file, "layers_per_unit")?,
            growth: parsed(&file, "growth")?,
            feat_channels: parsed(&file, "feat_channels")?,
            bottleneck_channels: parsed(&file, "bottleneck_channels")?,
            attention_ratio: parsed(&file, "attention_ratio")?,
        };
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut mc = if self.toy {
            ModelConfig::toy(self.scale)
        } else {
            ModelConfig { scale: self.scale, ..ModelConfig::default() }
        };
        mc.in_channels = self.in_channels;
        if let Some(v) = self.num_units {
            mc.num_units = v;
        }
        if let Some(v) = self.layers_per_unit {
            mc.layers_per_unit = v;
        }
        if let Some(v) = self.growth {
            mc.growth = v;
        }
        if let Some(v) = self.feat_channels {
            mc.feat_channels = v;
        }
        if let Some(v) = self.bottleneck_channels {
            mc.bottleneck_channels = v;
        }
        if let Some(v) = self.attention_ratio {
            mc.attention_ratio = v;
        }
        mc.validate()?;
        Ok(mc)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            batch_size: self.batch_size,
            patience: self.patience,
            lr_factor: self.lr_factor,
            lr_floor: self.lr_floor,
            max_epochs: self.epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    fn stride(&self) -> usize {
        if self.patch_stride == 0 {
            self.patch_size
        } else {
            self.patch_stride
        }
    }

    /// One-line provenance echo (no paths, so seeded runs log identically).
    fn echo(&self, mc: &ModelConfig) -> String {
        format!(
            "# config scale={} seed={} toy={} epochs={} batch_size={} lr0={:e} patch_size={} patch_stride={} augment={} val_fraction={} patience={} lr_factor={} lr_floor={:e}\n# model units={} layers_per_unit={} growth={} feat_channels={} bottleneck_channels={} attention_ratio={} in_channels={} params={}",
            self.scale, self.seed, self.toy, self.epochs, self.batch_size, self.lr0, self.patch_size,
            self.stride(), self.augment, self.val_fraction, self.patience, self.lr_factor, self.lr_floor,
            mc.num_units, mc.layers_per_unit, mc.growth, mc.feat_channels, mc.bottleneck_channels,
            mc.attention_ratio, mc.in_channels,
            count_params(mc).expect("validated config")
        )
    }
}

/// Sorted PNG paths directly inside `dir`.
fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::io(dir, source))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e.eq_ignore_ascii_case("png")).unwrap_or(false))
        .collect();
    paths.sort();
    Ok(paths)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::io(dir, source))
}

/// Bicubic-downscales every PNG in `input` into `output`; returns the count.
pub fn cmd_degrade(input: &Path, output: &Path, scale: usize) -> Result<usize> {
    if !matches!(scale, 2..=4) {
        return Err(Error::Config(format!("scale must be 2, 3 or 4, got {scale}")));
    }
    let files = png_files(input)?;
    ensure_dir(output)?;
    for path in &files {
        let img = load_image(path, 3)?;
        let lr = bicubic_resize(&img, 1.0 / scale as f64)?;
        save_image(&lr, &output.join(path.file_name().expect("png path has a name")))?;
    }
    Ok(files.len())
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Full training run: dataset build, seeded split, training loop, best
/// checkpoint and per-epoch metrics log.
pub fn cmd_train(input: &Path, output: &Path, run: &RunConfig) -> Result<TrainArtifacts> {
    let mc = run.model_config()?;
    let paths = png_files(input)?;
    if paths.is_empty() {
        return Err(Error::Config(format!("no PNG images found in {}", input.display())));
    }
    let spec = DatasetSpec {
        image_paths: paths,
        patch_size: run.patch_size,
        patch_stride: run.stride(),
        scale: run.scale,
        augment: run.augment,
        seed: run.seed,
        channels: mc.in_channels,
    };
    let build = make_pairs(&spec)?;
    if build.samples.is_empty() {
        return Err(Error::Config("dataset is empty after patching (all images too small?)".into()));
    }
    let n_val = ((build.samples.len() as f64) * run.val_fraction).floor() as usize;
    let (train_set, val_set) = build.samples.split_at(build.samples.len() - n_val);

    ensure_dir(output)?;
    let ckpt_path = output.join("checkpoint.ckpt");
    let log_path = output.join("train.log");

    let mut log = String::new();
    let _ = writeln!(log, "# blendsr training log");
    let _ = writeln!(log, "{}", run.echo(&mc));
    let _ = writeln!(
        log,
        "# dataset samples={} train={} val={} skipped={}",
        build.samples.len(),
        train_set.len(),
        val_set.len(),
        build.skipped.len()
    );
    for (path, why) in &build.skipped {
        eprintln!("warning: skipped {}: {why}", path.display());
    }

    let model = build_model::<f32>(&mc, run.seed)?;
    let mut best_seen = f64::NEG_INFINITY;
    let ckpt_for_hook = ckpt_path.clone();
    let outcome = train(model, train_set, val_set, &run.train_config(), |record, model, state| {
        log.push_str(&record.log_line());
        log.push('\n');
        if record.val_psnr > best_seen {
            best_seen = record.val_psnr;
            checkpoint::save(&ckpt_for_hook, model, Some(state))?;
        }
        Ok(())
    })?;

    let _ = writeln!(log, "# best epoch {}", outcome.best_epoch);
    checkpoint::save(&ckpt_path, &outcome.best_model, Some(&outcome.best_state))?;
    fs::write(&log_path, &log).map_err(|source| Error::io(&log_path, source))?;
    Ok(TrainArtifacts {
        checkpoint: ckpt_path,
        log: log_path,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
    })
}

/// Loads a checkpoint, super-resolves one image, clamps to [0, 1] and
/// saves the PNG. An explicitly requested scale must match the checkpoint.
pub fn cmd_sr(input: &Path, output: &Path, ckpt: &Path, explicit_scale: Option<usize>) -> Result<()> {
    let (model, _, _) = checkpoint::load(ckpt)?;
    if let Some(scale) = explicit_scale {
        if scale != model.config.scale {
            return Err(Error::Config(format!(
                "requested scale {scale} but the checkpoint was trained for scale {}",
                model.config.scale
            )));
        }
    }
    let lr = load_image(input, model.config.in_channels)?;
    let sr = model.forward(&lr)?.map(|v| v.clamp(0.0, 1.0));
    if let Some(dir) = output.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    save_image(&sr, output)
}

/// Pairs files by stem and evaluates PSNR/SSIM on each pair.
pub fn cmd_eval(sr_dir: &Path, hr_dir: &Path) -> Result<EvalReport> {
    let sr_files = png_files(sr_dir)?;
    let hr_files = png_files(hr_dir)?;
    let hr_by_stem: BTreeMap<String, &PathBuf> = hr_files.iter().map(|p| (file_stem(p), p)).collect();
    let sr_by_stem: BTreeMap<String, &PathBuf> = sr_files.iter().map(|p| (file_stem(p), p)).collect();

    let mut report = EvalReport::default();
    for (stem, sr_path) in &sr_by_stem {
        let Some(hr_path) = hr_by_stem.get(stem) else {
            report.unmatched.push(format!("{stem} (no ground truth)"));
            continue;
        };
        let sr = load_image(sr_path, 3)?;
        let hr = load_image(hr_path, 3)?;
        let (psnr_db, ssim) = evaluate_pair(&sr, &hr)?;
        report.rows.push(EvalRow { id: stem.clone(), psnr_db, ssim, seconds: None });
    }
    for stem in hr_by_stem.keys() {
        if !sr_by_stem.contains_key(stem) {
            report.unmatched.push(format!("{stem} (no reconstruction)"));
        }
    }
    Ok(report)
}

/// Per-method accumulators: (name, psnrs, ssims, seconds).
type MethodStats = (&'static str, Vec<f64>, Vec<f64>, Vec<f64>);

pub struct CompareOutcome {
    /// One aggregate row per reconstruction method.
    pub report: EvalReport,
}

/// Degrades each HR image and reconstructs it with bilinear and bicubic
/// interpolation, plus the model when a checkpoint is given. Emits one
/// aggregate row per method. HR images are cropped to a multiple of the
/// scale so the round trip is size-exact.
pub fn cmd_compare(hr_dir: &Path, run: &RunConfig, ckpt: Option<&Path>, out_dir: Option<&Path>) -> Result<CompareOutcome> {
    let model: Option<ModelParams<f32>> = match ckpt {
        Some(path) => Some(checkpoint::load(path)?.0),
        None => None,
    };
    let scale = match (&model, run.scale_explicit) {
        (Some(m), true) if m.config.scale != run.scale => {
            return Err(Error::Config(format!(
                "compare at scale {} but the checkpoint was trained for scale {}",
                run.scale, m.config.scale
            )))
        }
        (Some(m), false) => m.config.scale,
        _ => run.scale,
    };
    let files = png_files(hr_dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no PNG images found in {}", hr_dir.display())));
    }
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
    }

    let mut methods: Vec<MethodStats> = vec![
        ("bilinear", Vec::new(), Vec::new(), Vec::new()),
        ("bicubic", Vec::new(), Vec::new(), Vec::new()),
    ];
    if model.is_some() {
        methods.push(("model", Vec::new(), Vec::new(), Vec::new()));
    }

    for path in &files {
        let channels = model.as_ref().map_or(3, |m| m.config.in_channels);
        let full = load_image(path, channels)?;
        let (ch, cw) = (full.h() / scale * scale, full.w() / scale * scale);
        if ch == 0 || cw == 0 {
            return Err(Error::Config(format!("{}: smaller than one scale factor", path.display())));
        }
        let hr = Tensor::from_fn(1, full.c(), ch, cw, |n, c, i, j| full.at(n, c, i, j));
        let lr = bicubic_resize(&hr, 1.0 / scale as f64)?;

        for (name, psnrs, ssims, times) in &mut methods {
            let (recon, secs) = match *name {
                "bilinear" => time_sr(|| bilinear_resize(&lr, scale as f64).expect("valid factor")),
                "bicubic" => time_sr(|| bicubic_resize(&lr, scale as f64).expect("valid factor")),
                "model" => {
                    let m = model.as_ref().expect("model row exists only with a checkpoint");
                    let (out, secs) = time_sr(|| m.forward(&lr).expect("shape-checked input"));
                    (out.map(|v| v.clamp(0.0, 1.0)), secs)
                }
                _ => unreachable!(),
            };
            let (p, s) = evaluate_pair(&recon, &hr)?;
            psnrs.push(p);
            ssims.push(s);
            times.push(secs);
            if let Some(dir) = out_dir {
                save_image(&recon, &dir.join(format!("{}_{name}.png", file_stem(path))))?;
            }
        }
    }

    let mut report = EvalReport::default();
    for (name, psnrs, ssims, times) in methods {
        let finite: Vec<f64> = psnrs.iter().copied().filter(|v| v.is_finite()).collect();
        let psnr_db = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        report.rows.push(EvalRow {
            id: name.to_string(),
            psnr_db,
            ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
            seconds: Some(times.iter().sum::<f64>() / times.len() as f64),
        });
    }
    if let Some(dir) = out_dir {
        let path = dir.join("compare.csv");
        fs::write(&path, report.to_csv()).map_err(|source| Error::io(&path, source))?;
    }
    Ok(CompareOutcome { report })
}

/// Entry point used by the binary.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Degrade { input, output, flags } => {
            let run = RunConfig::resolve(&flags)?;
            let count = cmd_degrade(&input, &output, run.scale)?;
            println!("degraded {count} image(s) at scale {}", run.scale);
        }
        Command::Train { input, output, flags } => {
            let run = RunConfig::resolve(&flags)?;
            let artifacts = cmd_train(&input, &output, &run)?;
            println!(
                "trained {} epoch(s); best epoch {}; checkpoint {}; log {}",
                artifacts.epochs_run,
                artifacts.best_epoch,
                artifacts.checkpoint.display(),
                artifacts.log.display()
            );
        }
        Command::Sr { input, output, checkpoint, flags } => {
            let run = RunConfig::resolve(&flags)?;
            cmd_sr(&input, &output, &checkpoint, run.scale_explicit.then_some(run.scale))?;
            println!("wrote {}", output.display());
        }
        Command::Eval { input, hr, output } => {
            let report = cmd_eval(&input, &hr)?;
            let csv = report.to_csv();
            match output {
                Some(path) => {
                    fs::write(&path, &csv).map_err(|source| Error::io(&path, source))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            for name in &report.unmatched {
                eprintln!("warning: unmatched {name}");
            }
        }
        Command::Compare { input, checkpoint, output, flags } => {
            let run = RunConfig::resolve(&flags)?;
            let outcome = cmd_compare(&input, &run, checkpoint.as_deref(), output.as_deref())?;
            print!("{}", outcome.report.to_csv());
        }
    }
    Ok(())
}
