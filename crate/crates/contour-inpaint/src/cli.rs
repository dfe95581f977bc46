//! Subcommand entry points: data synthesis, the training phases, inference,
//! evaluation and checkpoint inspection. Exit codes: 0 success, 1 usage,
//! 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::config::RunConfig;
use crate::data::{
    self, make_sample, read_image_png, read_mask_png, write_gray_png, write_image_png,
    ContourMap, DatasetMeta, FixedSamples, HoleMask, Regime, RegimeTag, SampleSource, ScenePool,
    SegMask, TrainingSample,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_with, MetricReport};
use crate::inpaint::ImageModel;
use crate::pipeline::{infer, Detector, ExternalDetector, InferOptions, OracleDetector};
use crate::trainer::{
    load_contour_model, load_image_model, run_training, Checkpoint, ContourTrainer, ImageTrainer,
    JointMode, JointTrainer, TrainerLoop,
};

#[derive(Parser)]
#[command(
    name = "contour-inpaint",
    about = "Foreground-aware image inpainting: contour completion guiding content completion",
    version
)]
struct Cli {
    /// Config file (TOML); falls back to $CONTOUR_INPAINT_CONFIG, then the
    /// selected profile's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base profile: desk or paper.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (PNG pairs + manifest).
    Synth(SynthArgs),
    /// Train one phase: contour, image-pretrain, image-finetune or joint.
    Train(TrainArgs),
    /// Complete one image: detect/clean contours, complete them, inpaint.
    Infer(InferArgs),
    /// Evaluate checkpoints with L1/L2/PSNR/SSIM reports.
    Eval(EvalArgs),
    /// Print checkpoint metadata and parameter shapes.
    InspectCkpt(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Hole regime: overlap, non_overlap or mixed.
    #[arg(long, default_value = "mixed")]
    regime: String,
    /// Overwrite an existing dataset directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// contour | image-pretrain | image-finetune | joint
    #[arg(long)]
    phase: String,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Total steps (overrides config).
    #[arg(long)]
    steps: Option<usize>,
    /// Dataset directory from `synth`; defaults to a config-driven scene pool.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Resume from a checkpoint of the same phase.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Initialize image fine-tuning from this pretraining checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Contour checkpoint (joint phase).
    #[arg(long)]
    contour_ckpt: Option<PathBuf>,
    /// Image checkpoint (joint phase).
    #[arg(long)]
    image_ckpt: Option<PathBuf>,
    /// Joint phase mode: joint (default) or fixed_contour.
    #[arg(long, default_value = "joint")]
    mode: String,
    /// Train the image model without contour conditioning.
    #[arg(long)]
    unguided: bool,
    /// Per-step CSV log path.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    hole: PathBuf,
    /// Optional external foreground mask; without it the built-in detectors
    /// are unavailable and detection falls back to an empty mask.
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long)]
    contour_ckpt: PathBuf,
    #[arg(long)]
    image_ckpt: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Sobel threshold for detector-derived contours.
    #[arg(long)]
    sobel_threshold: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Comma-separated entries TAG=IMAGE_CKPT[:CONTOUR_CKPT].
    #[arg(long)]
    models: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_images: Option<usize>,
    /// Comma-separated regimes: overlap,non_overlap.
    #[arg(long)]
    regimes: Option<String>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
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

    let cfg = match RunConfig::resolve(cli.config.as_deref(), cli.profile.as_deref()) {
        Ok(mut cfg) => {
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&cfg, &a),
        Command::Train(a) => cmd_train(&cfg, &a),
        Command::Infer(a) => cmd_infer(&cfg, &a),
        Command::Eval(a) => cmd_eval(&cfg, &a),
        Command::InspectCkpt(a) => cmd_inspect(&a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

fn parse_regime(s: &str) -> std::result::Result<RegimeTag, CliError> {
    match s {
        "overlap" => Ok(RegimeTag::Overlap),
        "non_overlap" => Ok(RegimeTag::NonOverlap),
        "mixed" => Ok(RegimeTag::Mixed),
        other => Err(CliError::Usage(format!(
            "unknown regime '{other}' (expected overlap, non_overlap or mixed)"
        ))),
    }
}

fn cmd_synth(cfg: &RunConfig, args: &SynthArgs) -> CliResult {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let regime = parse_regime(&args.regime)?;
    let sample_cfg = cfg.sample_config();
    let mut samples = Vec::with_capacity(args.n);
    for k in 0..args.n {
        let r = match regime {
            RegimeTag::Overlap => Regime::Overlap,
            RegimeTag::NonOverlap => Regime::NonOverlap,
            RegimeTag::Mixed => {
                if k % 2 == 0 {
                    Regime::Overlap
                } else {
                    Regime::NonOverlap
                }
            }
        };
        samples.push(make_sample(
            &sample_cfg,
            r,
            cfg.seed.wrapping_add(k as u64),
        )?);
    }
    let meta = DatasetMeta {
        version: 1,
        seed: cfg.seed,
        regime,
        config_hash: cfg.hash(),
        count: samples.len(),
    };
    data::save_dataset(&args.out, &samples, &meta, args.force)?;
    println!(
        "wrote {} samples to {} (config {})",
        samples.len(),
        args.out.display(),
        cfg.hash()
    );
    Ok(())
}

fn load_source(cfg: &RunConfig, data: Option<&Path>) -> Result<Box<dyn SampleSource>> {
    match data {
        Some(dir) => {
            let (samples, _) = data::load_dataset(dir)?;
            Ok(Box::new(FixedSamples(samples)))
        }
        None => Ok(Box::new(ScenePool::synth(
            &cfg.sample_config(),
            cfg.n_scenes,
            cfg.seed,
        )?)),
    }
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> CliResult {
    let source = load_source(cfg, args.data.as_deref())?;
    let steps = args.steps.unwrap_or(cfg.optim.steps);
    let diag = args.out.with_extension("diagnostic.ckpt");

    let mut trainer: Box<dyn TrainerLoop> = match args.phase.as_str() {
        "contour" => {
            if let Some(resume) = &args.resume {
                Box::new(ContourTrainer::from_checkpoint(&Checkpoint::read_from(
                    resume,
                )?)?)
            } else {
                let mut tc = cfg.contour_train_cfg();
                tc.optim.steps = steps;
                Box::new(ContourTrainer::new(tc, cfg.hash())?)
            }
        }
        "image-pretrain" => {
            if let Some(resume) = &args.resume {
                Box::new(ImageTrainer::from_checkpoint(&Checkpoint::read_from(
                    resume,
                )?)?)
            } else {
                let mut ic = cfg.image_train_cfg(false);
                ic.optim.steps = steps;
                Box::new(ImageTrainer::new(ic, cfg.hash())?)
            }
        }
        "image-finetune" => {
            let mut ic = cfg.image_train_cfg(!args.unguided);
            ic.optim.steps = steps;
            if let Some(resume) = &args.resume {
                Box::new(ImageTrainer::from_checkpoint(&Checkpoint::read_from(
                    resume,
                )?)?)
            } else if let Some(init) = &args.init {
                Box::new(ImageTrainer::from_pretrained(
                    &Checkpoint::read_from(init)?,
                    ic,
                    cfg.hash(),
                )?)
            } else {
                Box::new(ImageTrainer::new(ic, cfg.hash())?)
            }
        }
        "joint" => {
            if let Some(resume) = &args.resume {
                Box::new(JointTrainer::from_checkpoint(&Checkpoint::read_from(
                    resume,
                )?)?)
            } else {
                let (Some(cpath), Some(ipath)) = (&args.contour_ckpt, &args.image_ckpt) else {
                    return Err(CliError::Usage(
                        "--phase joint requires --contour-ckpt and --image-ckpt".into(),
                    ));
                };
                let mode = match args.mode.as_str() {
                    "joint" => JointMode::Joint,
                    "fixed_contour" => JointMode::FixedContour,
                    other => {
                        return Err(CliError::Usage(format!(
                            "unknown joint mode '{other}'"
                        )))
                    }
                };
                let mut jc = cfg.joint_train_cfg(mode);
                jc.optim.steps = steps;
                Box::new(JointTrainer::new(
                    &Checkpoint::read_from(cpath)?,
                    &Checkpoint::read_from(ipath)?,
                    jc,
                    cfg.hash(),
                )?)
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown phase '{other}' (contour, image-pretrain, image-finetune, joint)"
            )))
        }
    };

    let target = trainer.current_step().max(steps);
    run_training(
        trainer.as_mut(),
        source.as_ref(),
        target,
        args.log.as_deref(),
        Some(diag.as_path()),
    )?;
    let ckpt = trainer.to_checkpoint()?;
    ckpt.write_to(&args.out)?;
    println!(
        "trained {} to step {}; checkpoint at {} (config {})",
        args.phase,
        trainer.current_step(),
        args.out.display(),
        cfg.hash()
    );
    Ok(())
}

fn cmd_infer(cfg: &RunConfig, args: &InferArgs) -> CliResult {
    let image = read_image_png(&args.image)?;
    let (_, h, w) = image.dim();
    let hole = HoleMask::new(read_mask_png(&args.hole)?)
        .map_err(|_| CliError::Usage("hole mask must be binary".into()))?;
    if hole.dim() != (h, w) {
        return Err(CliError::Usage("hole mask size differs from image".into()));
    }

    let detector: Box<dyn Detector> = match &args.seg {
        Some(p) => Box::new(ExternalDetector {
            seg: SegMask::new(read_mask_png(p)?)?,
            label: p.display().to_string(),
        }),
        None => {
            eprintln!(
                "note: no --seg mask given; proceeding with an empty foreground detection"
            );
            Box::new(ExternalDetector {
                seg: SegMask(Array2::zeros((h, w))),
                label: "empty".into(),
            })
        }
    };

    let contour_model = load_contour_model(&Checkpoint::read_from(&args.contour_ckpt)?)?;
    let image_model = load_image_model(&Checkpoint::read_from(&args.image_ckpt)?)?;
    let mut opts = InferOptions::default_for(h, w);
    opts.sobel_threshold = args.sobel_threshold.unwrap_or(cfg.sobel_threshold);

    // zero out hole pixels exactly as the training inputs do
    let mut masked = image.clone();
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                if hole.0[[i, j]] == 1 {
                    masked[[c, i, j]] = 0.0;
                }
            }
        }
    }

    let out = infer(
        &masked,
        &hole,
        detector.as_ref(),
        &contour_model,
        &image_model,
        &opts,
    )?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::file_io(&args.out_dir, e))?;
    write_image_png(&args.out_dir.join("completed.png"), &out.image)?;
    write_gray_png(
        &args.out_dir.join("contour_incomplete.png"),
        &out.contour_incomplete.0,
    )?;
    write_gray_png(
        &args.out_dir.join("contour_completed.png"),
        &out.contour_completed.0,
    )?;
    write_image_png(
        &args.out_dir.join("overlay.png"),
        &overlay_contour(&out.image, &out.contour_completed),
    )?;
    println!("inference artifacts in {}", args.out_dir.display());
    Ok(())
}

/// Completed image with the completed contour drawn over it in green.
pub fn overlay_contour(image: &data::ImageTensor, contour: &ContourMap) -> data::ImageTensor {
    let mut out = image.clone();
    let (_, h, w) = image.dim();
    for i in 0..h {
        for j in 0..w {
            if contour.0[[i, j]] > 0.5 {
                out[[0, i, j]] = 0.0;
                out[[1, i, j]] = 1.0;
                out[[2, i, j]] = 0.0;
            }
        }
    }
    out
}

struct ModelSpec {
    tag: String,
    image_ckpt: PathBuf,
    contour_ckpt: Option<PathBuf>,
}

fn parse_models(s: &str) -> std::result::Result<Vec<ModelSpec>, CliError> {
    let mut out = Vec::new();
    for entry in s.split(',') {
        let (tag, rest) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("bad --models entry '{entry}'")))?;
        let (image, contour) = match rest.split_once(':') {
            Some((i, c)) => (i, Some(PathBuf::from(c))),
            None => (rest, None),
        };
        out.push(ModelSpec {
            tag: tag.to_string(),
            image_ckpt: PathBuf::from(image),
            contour_ckpt: contour,
        });
    }
    if out.is_empty() {
        return Err(CliError::Usage("--models must list at least one model".into()));
    }
    Ok(out)
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> CliResult {
    let specs = parse_models(&args.models)?;
    let n_images = args.n_images.unwrap_or(cfg.eval.n_images);
    if n_images == 0 {
        return Err(CliError::Usage("--n-images must be at least 1".into()));
    }
    let regimes: Vec<Regime> = match &args.regimes {
        Some(s) => s
            .split(',')
            .map(|r| match r {
                "overlap" => Ok(Regime::Overlap),
                "non_overlap" => Ok(Regime::NonOverlap),
                other => Err(CliError::Usage(format!("unknown regime '{other}'"))),
            })
            .collect::<std::result::Result<_, _>>()?,
        None => cfg.eval.regimes.clone(),
    };

    let sample_cfg = cfg.sample_config();
    for spec in &specs {
        let image_model = load_image_model(&Checkpoint::read_from(&spec.image_ckpt)?)?;
        let contour_model = match &spec.contour_ckpt {
            Some(p) => Some(load_contour_model(&Checkpoint::read_from(p)?)?),
            None => None,
        };
        for regime in &regimes {
            let samples: Vec<TrainingSample> = (0..n_images)
                .map(|k| {
                    make_sample(
                        &sample_cfg,
                        *regime,
                        cfg.seed.wrapping_add(0x5eed).wrapping_add(k as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let report = evaluate_model(
                &image_model,
                contour_model.as_ref(),
                &samples,
                &spec.tag,
                &format!("synth-{n_images}"),
                regime,
            )?;
            let regime_name = match regime {
                Regime::Overlap => "overlap",
                Regime::NonOverlap => "non_overlap",
            };
            report.write(&args.out_dir, &format!("{}_{}", spec.tag, regime_name))?;
            println!(
                "{} [{}]: L1 {:.6} L2 {:.6} PSNR {:.2} SSIM {:.4}",
                spec.tag, regime_name, report.mean.l1, report.mean.l2, report.mean.psnr, report.mean.ssim
            );
        }
    }
    Ok(())
}

/// Evaluate one model over samples. With a contour model the full pipeline
/// runs (oracle detection); a guided image model without one is conditioned
/// on the ground-truth contour; unguided models ignore contours entirely.
pub fn evaluate_model(
    image_model: &ImageModel<f32>,
    contour_model: Option<&crate::contour::ContourModel<f32>>,
    samples: &[TrainingSample],
    tag: &str,
    dataset: &str,
    regime: &Regime,
) -> Result<MetricReport> {
    let regime_name = match regime {
        Regime::Overlap => "overlap",
        Regime::NonOverlap => "non_overlap",
    };
    evaluate_with(
        |s| {
            let (h, w) = s.canvas();
            match contour_model {
                Some(cm) => {
                    let det = OracleDetector { seg: s.seg.clone() };
                    let out = infer(
                        &s.image_in,
                        &s.hole,
                        &det,
                        cm,
                        image_model,
                        &InferOptions::default_for(h, w),
                    )?;
                    Ok(out.image)
                }
                None => {
                    let img_b = crate::trainer::batch_from_samples(std::slice::from_ref(s))?;
                    let contour = image_model.guided.then_some(&img_b.contour_gt);
                    let (out, _) = image_model.forward(&img_b.image_in, contour, &img_b.hole)?;
                    let composited =
                        crate::inpaint::composite(&out.refined, &img_b.image_in, &img_b.hole);
                    Ok(batch1_to_image3(&composited))
                }
            }
        },
        samples,
        tag,
        dataset,
        regime_name,
    )
}

fn batch1_to_image3(x: &ndarray::Array4<f32>) -> data::ImageTensor {
    let (_, c, h, w) = x.dim();
    let mut out = data::ImageTensor::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[ci, i, j]] = x[[0, ci, i, j]];
            }
        }
    }
    out
}

fn cmd_inspect(args: &InspectArgs) -> CliResult {
    let ckpt = Checkpoint::read_from(&args.path)?;
    let meta = &ckpt.meta;
    println!("checkpoint {}", args.path.display());
    println!("  format version : {}", meta.format_version);
    println!("  phase          : {}", meta.phase);
    println!("  step           : {}", meta.step);
    println!(
        "  curriculum     : stage {} (content {}, adv {})",
        meta.curriculum.stage, meta.curriculum.content_weight, meta.curriculum.adv_weight
    );
    println!("  config hash    : {}", meta.config_hash);
    println!("  optimizer      : adam t_gen={} t_disc={}", meta.adam_t_gen, meta.adam_t_disc);
    let total: usize = ckpt
        .tensors
        .iter()
        .filter(|(n, _)| n.starts_with("model/"))
        .map(|(_, t)| t.len())
        .sum();
    println!("  parameters     : {total}");
    println!("  tensors        : {}", ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        if name.starts_with("model/") {
            println!("    {name}  {:?}", t.shape());
        }
    }
    Ok(())
}
