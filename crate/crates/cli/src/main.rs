//! `frbdet`: train, run and evaluate the text detector from the shell.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use frbdet_core::data::{
    apply_mask, apply_pixel_blur, load_corpus, load_image, save_png, write_synthetic_dataset, MANIFEST_NAME,
};
use frbdet_core::error::Error as CoreError;
use frbdet_core::geometry::io::write_detections;
use frbdet_core::train::{
    annotate, detect_image, evaluate_dirs, load_checkpoint, train, DetectOptions, GeometryKind, Matching, RunConfig,
};

#[derive(Parser)]
#[command(name = "frbdet", version, about = "Oriented scene-text detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Geometry {
    Rbox,
    Quad,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file; writes checkpoints into its out_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Detect text in one image.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DetectOptions::default().score_threshold)]
        score_thresh: f64,
        #[arg(long, value_enum, default_value = "rbox")]
        geometry: Geometry,
        /// Also write the image with boxes drawn on it.
        #[arg(long)]
        annotate: bool,
    },
    /// Score a directory of detection files against ground truth.
    Eval {
        #[arg(long)]
        det_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Write a synthetic corpus with a manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
    },
    /// Save each curriculum stage's augmentation of the first few samples.
    Augment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preview: PathBuf,
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Numerical(_) | CoreError::NonFinite(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    2
}

/// The cause chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => run_train(&config),
        Command::Detect {
            ckpt,
            image,
            out_dir,
            score_thresh,
            geometry,
            annotate,
        } => run_detect(&ckpt, &image, &out_dir, score_thresh, geometry, annotate),
        Command::Eval { det_dir, gt_dir, iou } => {
            let r = evaluate_dirs(&det_dir, &gt_dir, iou, Matching::Greedy)?;
            println!(
                "precision {:.4} recall {:.4} f-score {:.4} (matched {} detections {} ground truths {})",
                r.precision, r.recall, r.f_score, r.matched, r.detections, r.ground_truths
            );
            Ok(())
        }
        Command::Synth {
            count,
            seed,
            out_dir,
            height,
            width,
        } => {
            let cfg = RunConfig::default();
            let records = write_synthetic_dataset(&out_dir, count, height, width, seed, &cfg.difficulty)?;
            println!("wrote {} samples and {}", records.len(), out_dir.join(MANIFEST_NAME).display());
            Ok(())
        }
        Command::Augment {
            config,
            preview,
            samples,
        } => run_augment(&config, &preview, samples),
    }
}

fn manifest(cfg: &RunConfig, config: &Path) -> Result<PathBuf> {
    cfg.manifest
        .clone()
        .with_context(|| format!("{} does not set manifest", config.display()))
}

fn run_train(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let corpus = load_corpus(&manifest(&cfg, config)?, &cfg.difficulty)?;
    info!("{} samples, {} iterations", corpus.len(), cfg.iterations);
    let trainer = train(&cfg, &corpus, |_| {})?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let path = cfg.out_dir.join("final.ckpt");
    trainer.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn run_detect(ckpt: &Path, image: &Path, out_dir: &Path, thresh: f64, geometry: Geometry, draw: bool) -> Result<()> {
    if !(0.0..=1.0).contains(&thresh) {
        bail!(CoreError::InvalidParam(format!("score threshold {thresh} outside [0, 1]")));
    }
    let model = load_checkpoint(ckpt)?.model;
    let img = load_image(image)?;
    let opts = DetectOptions {
        score_threshold: thresh,
        geometry: match geometry {
            Geometry::Rbox => GeometryKind::Rbox,
            Geometry::Quad => GeometryKind::Quad,
        },
        ..DetectOptions::default()
    };
    let boxes = detect_image(&model, &img, &opts)?;
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .context("image path has no file name")?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let res = out_dir.join(format!("res_{stem}.txt"));
    write_detections(&res, &boxes)?;
    println!("{} boxes -> {}", boxes.len(), res.display());
    if draw {
        let png = out_dir.join(format!("{stem}_det.png"));
        annotate(&img, &boxes)
            .save(&png)
            .map_err(|source| CoreError::Image { path: png.clone(), source })?;
        println!("annotated -> {}", png.display());
    }
    Ok(())
}

fn run_augment(config: &Path, preview: &Path, samples: usize) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let corpus = load_corpus(&manifest(&cfg, config)?, &cfg.difficulty)?;
    std::fs::create_dir_all(preview).with_context(|| format!("creating {}", preview.display()))?;
    for (k, stage) in cfg.curriculum.stages().iter().enumerate() {
        for (i, s) in corpus.iter().take(samples).enumerate() {
            let seed = cfg.data_seed ^ ((k as u64) << 32 | i as u64);
            let img = apply_pixel_blur(&s.image, stage.blur, seed)?;
            let img = apply_mask(&img, &s.polygons, stage.mask, seed.wrapping_add(1))?;
            save_png(&preview.join(format!("stage{k}_sample{i:03}.png")), &img)?;
        }
        println!(
            "stage {k} from iteration {}: blur {:.3} mask {:.3} difficulty cutoff {:.2}",
            stage.start, stage.blur, stage.mask, stage.cutoff
        );
    }
    Ok(())
}
