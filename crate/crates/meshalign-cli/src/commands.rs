//! The four subcommands: pair synthesis, alignment, evaluation, and the
//! kernel benchmark.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use meshalign::aligner::align;
use meshalign::correlation::ccl;
use meshalign::evalkit::{
    psnr_overlap, rmse_4pt, ssim_overlap, synth_pair, tier_partition, TierReport,
};
use meshalign::homography::{FourPtMotion, Rect};
use meshalign::imaging::io::{load_image, save_image};
use meshalign::mesh::warp_mesh;
use meshalign::objective::{DepthMap, Warp};
use meshalign::pyramid::{build_layer_features, extract_features};
use meshalign::viz::{draw_mesh_overlay, flow_color_image, fuse_red_blue};

use crate::opts::{echo_config, AlignOverrides};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of source images (png/ppm/pgm)
    #[arg(long)]
    pub src: PathBuf,
    /// Output directory for the generated pairs
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Max corner perturbation in pixels
    #[arg(long, default_value_t = 8.0)]
    pub rho: f64,
    /// Patch side in pixels
    #[arg(long, default_value_t = 128)]
    pub patch: usize,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "ppm" | "pgm")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no png/ppm/pgm images in {}", dir.display());
    }
    Ok(files)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let sources = image_files(&args.src)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut manifest = String::new();
    let _ = writeln!(
        manifest,
        "n = {}\nrho = {}\npatch = {}\nseed = {}",
        args.n, args.rho, args.patch, args.seed
    );
    for i in 0..args.n {
        let src_path = &sources[i % sources.len()];
        let src = load_image(src_path)?;
        let pair = synth_pair(&src, args.rho, args.patch, args.seed.wrapping_add(i as u64))?;
        let stem = format!("pair_{i:04}");
        save_image(&pair.reference, args.out.join(format!("{stem}_ref.png")))?;
        save_image(&pair.target, args.out.join(format!("{stem}_tgt.png")))?;
        std::fs::write(
            args.out.join(format!("{stem}_gt.txt")),
            format!("{}\n", pair.gt_motion.to_text()),
        )?;
        let _ = writeln!(manifest, "{stem} {}", src_path.display());
    }
    std::fs::write(args.out.join("manifest.txt"), manifest)?;
    println!("wrote {} pairs to {}", args.n, args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Reference image
    pub reference: PathBuf,
    /// Target image to warp onto the reference
    pub target: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Relative depth map of the target (grayscale PGM/PNG, 16-bit ok)
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: AlignOverrides,
}

pub fn cmd_align(args: &AlignArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let i_r = load_image(&args.reference)?;
    let i_t = load_image(&args.target)?;
    let depth = match &args.depth {
        Some(p) => Some(DepthMap::load(p)?),
        None => None,
    };
    std::fs::create_dir_all(&args.out)?;

    let result = align(&i_r, &i_t, &cfg, depth.as_ref())?;

    let warped = warp_mesh(&i_t, &result.mesh)?;
    save_image(&warped, args.out.join("warped.png"))?;
    save_image(&fuse_red_blue(&i_r, &warped)?, args.out.join("fused.png"))?;
    save_image(
        &draw_mesh_overlay(&i_t, &result.mesh)?,
        args.out.join("mesh_overlay.ppm"),
    )?;

    // Flow of the coarsest layer before any alignment, as the CCL sees it.
    let r = cfg.working_resolution;
    let f_r = build_layer_features(&extract_features(&i_r.resize_bilinear(r, r)?, 3)?, 3)?;
    let f_t = build_layer_features(&extract_features(&i_t.resize_bilinear(r, r)?, 3)?, 3)?;
    let flow = ccl(&f_r, &f_t, cfg.patch_side, cfg.alpha)?;
    save_image(&flow_color_image(&flow), args.out.join("flow.ppm"))?;

    std::fs::write(
        args.out.join("homography.txt"),
        format!("{}\n", result.global_h.to_text()),
    )?;
    std::fs::write(args.out.join("mesh.txt"), result.mesh.to_text())?;

    let mut report = String::new();
    let _ = writeln!(report, "[config]");
    report.push_str(&echo_config(
        &cfg,
        &[
            ("reference", args.reference.display().to_string()),
            ("target", args.target.display().to_string()),
            (
                "depth",
                args.depth
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "none".into()),
            ),
        ],
    ));
    let _ = writeln!(report, "\n[result]");
    let _ = writeln!(report, "overlap = {:.4}", result.overlap);
    let _ = writeln!(report, "mesh_valid = {}", result.mesh_valid);
    let b = &result.losses;
    let _ = writeln!(
        report,
        "content_per_layer = {:.6} {:.6} {:.6}",
        b.content_per_layer[0], b.content_per_layer[1], b.content_per_layer[2]
    );
    let _ = writeln!(report, "content_total = {:.6}", b.content_total);
    let _ = writeln!(report, "shape = {:.6}", b.shape);
    let _ = writeln!(report, "objective_total = {:.6}", b.objective_total);
    for (i, stage) in result.stages.iter().enumerate() {
        let _ = writeln!(
            report,
            "stage{} = {} iters, {:.1} ms, loss {:.6} -> {:.6}",
            i + 1,
            stage.iterations,
            stage.millis,
            stage.loss_history.first().copied().unwrap_or(f64::NAN),
            stage.loss_history.last().copied().unwrap_or(f64::NAN),
        );
    }
    std::fs::write(args.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    /// 4-pt RMSE against ground-truth motions (synthetic pairs)
    Rmse,
    /// Overlap PSNR/SSIM of the aligned pair
    Psnr,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of pairs (pair_XXXX_ref/tgt images, optional _gt.txt)
    #[arg(long)]
    pub src: PathBuf,
    /// Output directory for results.csv and summary.txt
    #[arg(long)]
    pub out: PathBuf,
    /// Metric mode; defaults to rmse when ground truth is present
    #[arg(long, value_enum)]
    pub mode: Option<EvalMode>,
    /// Score the identity prediction instead of running the aligner
    #[arg(long, default_value_t = false)]
    pub identity: bool,
    #[command(flatten)]
    pub overrides: AlignOverrides,
}

struct PairPaths {
    id: String,
    reference: PathBuf,
    target: PathBuf,
    gt: Option<PathBuf>,
}

fn discover_pairs(dir: &Path) -> Result<Vec<PairPaths>> {
    let mut pairs = Vec::new();
    let mut refs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.contains("_ref."))
        })
        .collect();
    refs.sort();
    for reference in refs {
        let name = reference.file_name().unwrap().to_str().unwrap().to_string();
        let id = name.split("_ref.").next().unwrap().to_string();
        let target = ["png", "ppm", "pgm"]
            .iter()
            .map(|ext| dir.join(format!("{id}_tgt.{ext}")))
            .find(|p| p.exists());
        let Some(target) = target else { continue };
        let gt = dir.join(format!("{id}_gt.txt"));
        pairs.push(PairPaths {
            id,
            reference,
            target,
            gt: gt.exists().then_some(gt),
        });
    }
    if pairs.is_empty() {
        bail!("no pairs found in {}", dir.display());
    }
    Ok(pairs)
}

fn format_tier_block(metric: &str, report: &TierReport) -> String {
    let fmt = |v: f64| {
        if v.is_nan() {
            "-".to_string()
        } else {
            format!("{v:.4}")
        }
    };
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10} {:>10}", "metric", "easy", "moderate", "hard", "average");
    let _ = writeln!(
        s,
        "{:<10} {:>10} {:>10} {:>10} {:>10}",
        metric,
        fmt(report.easy_mean),
        fmt(report.moderate_mean),
        fmt(report.hard_mean),
        fmt(report.average)
    );
    let _ = writeln!(
        s,
        "tiers: easy {} / moderate {} / hard {} of {} pairs",
        report.easy_count,
        report.moderate_count,
        report.hard_count,
        report.scores.len()
    );
    s
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let pairs = discover_pairs(&args.src)?;
    let mode = args.mode.unwrap_or_else(|| {
        if pairs.iter().all(|p| p.gt.is_some()) {
            EvalMode::Rmse
        } else {
            EvalMode::Psnr
        }
    });
    std::fs::create_dir_all(&args.out)?;

    let mut csv = String::from("id,rmse_4pt,psnr,ssim\n");
    let mut primary = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let i_r = load_image(&pair.reference)?;
        let i_t = load_image(&pair.target)?;
        let gt = match &pair.gt {
            Some(p) => Some(FourPtMotion::from_text(&std::fs::read_to_string(p)?)?),
            None => None,
        };
        if mode == EvalMode::Rmse && gt.is_none() {
            bail!("pair {} has no ground truth for rmse mode", pair.id);
        }
        let rect = Rect::of_size(i_r.width() as f64, i_r.height() as f64);

        let (pred_motion, rmse, psnr, ssim);
        if args.identity {
            pred_motion = FourPtMotion::zero();
            let id = meshalign::homography::Homography::identity();
            let warp = Warp::Homography(&id);
            psnr = psnr_overlap(&i_r, &i_t, warp)?;
            ssim = ssim_overlap(&i_r, &i_t, warp)?;
        } else {
            let result = align(&i_r, &i_t, &cfg, None)?;
            pred_motion = result.predicted_motion(&rect)?;
            let warp = Warp::Mesh(&result.mesh);
            psnr = psnr_overlap(&i_r, &i_t, warp)?;
            ssim = ssim_overlap(&i_r, &i_t, warp)?;
        }
        rmse = gt.as_ref().map(|g| rmse_4pt(&pred_motion, g));

        let rmse_field = rmse.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{:.4},{:.6}", pair.id, rmse_field, psnr, ssim);
        primary.push(match mode {
            EvalMode::Rmse => rmse.expect("checked above"),
            EvalMode::Psnr => psnr,
        });
    }

    let report = tier_partition(&primary, mode == EvalMode::Psnr)?;
    let metric = match mode {
        EvalMode::Rmse => "rmse_4pt",
        EvalMode::Psnr => "psnr",
    };
    let mut summary = format_tier_block(metric, &report);
    summary.push_str("\n[config]\n");
    summary.push_str(&echo_config(
        &cfg,
        &[
            ("src", args.src.display().to_string()),
            ("identity", args.identity.to_string()),
        ],
    ));
    std::fs::write(args.out.join("results.csv"), &csv)?;
    std::fs::write(args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Also write the table to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let report = meshalign::bench::run_kernel_bench(&[8, 16, 32, 64], 8, 0x9E3779B9)?;
    let table = report.to_table();
    if let Some(path) = &args.out {
        std::fs::write(path, &table)?;
    }
    print!("{table}");
    Ok(())
}

