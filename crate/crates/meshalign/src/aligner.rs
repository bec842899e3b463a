//! Three-layer coarse-to-fine alignment with classical estimators.
//!
//! Layer 1 fits a global homography to the contextual-correlation flow of
//! the coarsest features and polishes it photometrically; layer 2 repeats
//! on the warped target at the next resolution and composes the residual;
//! layer 3 deforms a backward multi-grid mesh by gradient descent on the
//! content plus depth-aware shape objective.

use std::time::Instant;

use crate::correlation::ccl;
use crate::error::{Error, Result};
use crate::homography::{
    affine_conjugate, fit_flow, from_4pt, to_4pt, warp_global, FourPtMotion, Homography, Rect,
};
use crate::imaging::Image;
use crate::mesh::{mesh_from_homography, warp_mask, Mesh};
use crate::objective::{
    grid_depth_levels, objective, DepthMap, GridDepthLevels, LossBreakdown, LossWeights, MeshCost,
    Warp,
};
use crate::pyramid::{build_layer_features, extract_features};

/// Convergence threshold on the gradient norm of mesh refinement.
const GRAD_TOL: f64 = 1e-5;
/// Relative improvement below which refinement stops early.
const REL_IMPROVE_TOL: f64 = 1e-7;
/// Finite-difference step for the global 4-pt parameters, in pixels.
const GLOBAL_FD_STEP: f64 = 1e-3;
const MAX_HALVINGS: usize = 10;
/// Minimum mask support fraction before the pair counts as non-overlapping.
const MIN_OVERLAP: f64 = 0.01;

/// Pipeline configuration; defaults follow the deployment values
/// (8x8 grid, K = 3, alpha = 10, 32 depth levels, omega = (1, 4, 16),
/// lambda = 1, mu = 10, working resolution 128).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_side: usize,
    pub alpha: f64,
    pub depth_levels: usize,
    pub lambda: f64,
    pub mu: f64,
    pub omega: [f64; 3],
    pub refine_iters: usize,
    pub step_size: f64,
    pub working_resolution: usize,
    pub robust_fit: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            grid_rows: 8,
            grid_cols: 8,
            patch_side: 3,
            alpha: 10.0,
            depth_levels: 32,
            lambda: 1.0,
            mu: 10.0,
            omega: [1.0, 4.0, 16.0],
            refine_iters: 100,
            step_size: 1.0,
            working_resolution: 128,
            robust_fit: true,
        }
    }
}

impl AlignConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            mu: self.mu,
            omega: self.omega,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.patch_side == 0 || self.depth_levels == 0
        {
            return Err(Error::InvalidParameter("config counts must be positive".into()));
        }
        if !(self.alpha > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter(
                "alpha and step_size must be positive".into(),
            ));
        }
        if self.working_resolution < 16 {
            return Err(Error::InvalidParameter(
                "working resolution must be at least 16".into(),
            ));
        }
        Ok(())
    }
}

/// Accepted-iteration record of one refinement stage.
#[derive(Debug, Clone, Default)]
pub struct StageTrace {
    pub iterations: usize,
    /// Objective after each accepted step, preceded by the initial value.
    pub loss_history: Vec<f64>,
    pub millis: f64,
}

/// Everything the pipeline produced, at full input resolution.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// Composite global homography of layers 1-2 (canvas to target).
    pub global_h: Homography,
    /// Final multi-grid mesh of layer 3.
    pub mesh: Mesh,
    /// Final loss breakdown, evaluated at the working resolution.
    pub losses: LossBreakdown,
    pub stages: [StageTrace; 3],
    pub mesh_valid: bool,
    /// Mask support fraction of the final mesh warp.
    pub overlap: f64,
    /// RMS corner motion each global layer corrected, at the working
    /// canvas: layer 1 relative to identity, layer 2 relative to layer 1.
    pub stage_residual_rms: [f64; 2],
}

impl AlignmentResult {
    /// Corner motions the global homography induces on a rectangle,
    /// comparable against synthetic ground truth.
    pub fn predicted_motion(&self, rect: &Rect) -> Result<FourPtMotion> {
        to_4pt(&self.global_h, rect)
    }
}

/// Photometric polish of a global homography: gradient descent with
/// backtracking on the content loss over the 8 corner motions. Returns an
/// improved-or-equal homography; divergence returns `h0`.
pub fn refine_global(
    i_r: &Image,
    i_t: &Image,
    h0: &Homography,
    cfg: &AlignConfig,
) -> Result<(Homography, StageTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let rect = Rect::of_size(i_r.width() as f64, i_r.height() as f64);
    let mut motion = to_4pt(h0, &rect)?;

    let eval = |m: &FourPtMotion| -> Result<f64> {
        let h = from_4pt(m, &rect)?;
        crate::objective::content_loss_layer(i_r, i_t, Warp::Homography(&h))
    };

    let mut f_cur = eval(&motion)?;
    let mut trace = StageTrace {
        iterations: 0,
        loss_history: vec![f_cur],
        millis: 0.0,
    };

    for _ in 0..cfg.refine_iters {
        // Central differences over the 8 corner parameters.
        let mut grad = [[0.0f64; 2]; 4];
        let mut gnorm_sq = 0.0;
        for k in 0..4 {
            for axis in 0..2 {
                let mut plus = motion;
                plus.motions[k][axis] += GLOBAL_FD_STEP;
                let mut minus = motion;
                minus.motions[k][axis] -= GLOBAL_FD_STEP;
                let g = match (eval(&plus), eval(&minus)) {
                    (Ok(fp), Ok(fm)) => (fp - fm) / (2.0 * GLOBAL_FD_STEP),
                    // A perturbation hit a degenerate quad: freeze the axis.
                    _ => 0.0,
                };
                grad[k][axis] = g;
                gnorm_sq += g * g;
            }
        }
        if gnorm_sq.sqrt() < GRAD_TOL {
            break;
        }

        // First trial moves the largest coordinate by step_size pixels.
        let gmax = grad
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut step = cfg.step_size / gmax;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = motion;
            for k in 0..4 {
                cand.motions[k][0] -= step * grad[k][0];
                cand.motions[k][1] -= step * grad[k][1];
            }
            match eval(&cand) {
                Ok(f_new) if f_new < f_cur => {
                    let rel = (f_cur - f_new) / f_cur.max(1e-12);
                    motion = cand;
                    f_cur = f_new;
                    trace.iterations += 1;
                    trace.loss_history.push(f_cur);
                    accepted = true;
                    if rel < REL_IMPROVE_TOL {
                        trace.millis = start.elapsed().as_secs_f64() * 1e3;
                        let h = from_4pt(&motion, &rect)?;
                        return Ok((h, trace));
                    }
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    trace.millis = start.elapsed().as_secs_f64() * 1e3;
    let h = from_4pt(&motion, &rect)?;
    Ok((h, trace))
}

/// Gradient descent on the layer-3 objective with backtracking; steps that
/// would self-intersect the mesh are halved away. Depth levels are
/// recomputed from the candidate mesh each accepted step.
pub fn refine_mesh(
    i_r: &Image,
    i_t: &Image,
    mesh0: &Mesh,
    depth: Option<&DepthMap>,
    cfg: &AlignConfig,
) -> Result<(Mesh, StageTrace)> {
    cfg.validate()?;
    mesh0.validate()?;
    let start = Instant::now();
    let weights = cfg.weights();
    let cost = MeshCost {
        i_r,
        i_t,
        content_coeff: weights.lambda * weights.omega[2],
        mu: weights.mu,
    };
    let levels_of = |mesh: &Mesh| -> Result<GridDepthLevels> {
        match depth {
            Some(d) => grid_depth_levels(d, mesh, cfg.depth_levels),
            None => Ok(GridDepthLevels::uniform(mesh.cell_rows(), mesh.cell_cols())),
        }
    };

    let mut mesh = mesh0.clone();
    let mut levels = levels_of(&mesh)?;
    let mut f_cur = cost.value(&mesh, &levels)?;
    let mut trace = StageTrace {
        iterations: 0,
        loss_history: vec![f_cur],
        millis: 0.0,
    };

    for _ in 0..cfg.refine_iters {
        let grad = cost.gradient(&mesh, &levels)?;
        let gnorm = grad
            .iter()
            .map(|g| g[0] * g[0] + g[1] * g[1])
            .sum::<f64>()
            .sqrt();
        if gnorm < GRAD_TOL {
            break;
        }

        let gmax = grad
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut step = cfg.step_size / gmax;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = mesh.clone();
            for (v, g) in cand.vertices_mut().iter_mut().zip(&grad) {
                v[0] -= step * g[0];
                v[1] -= step * g[1];
            }
            if !cand.is_valid() {
                step *= 0.5;
                continue;
            }
            let cand_levels = levels_of(&cand)?;
            let f_new = cost.value(&cand, &cand_levels)?;
            if f_new < f_cur {
                let rel = (f_cur - f_new) / f_cur.max(1e-12);
                mesh = cand;
                levels = cand_levels;
                f_cur = f_new;
                trace.iterations += 1;
                trace.loss_history.push(f_cur);
                accepted = true;
                if rel < REL_IMPROVE_TOL {
                    trace.millis = start.elapsed().as_secs_f64() * 1e3;
                    return Ok((mesh, trace));
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    trace.millis = start.elapsed().as_secs_f64() * 1e3;
    Ok((mesh, trace))
}

/// Feature-grid flow fitted to a homography and lifted to image pixels.
fn fit_layer_homography(
    f_r: &crate::pyramid::FeatureMap,
    f_t: &crate::pyramid::FeatureMap,
    image_h: usize,
    image_w: usize,
    cfg: &AlignConfig,
) -> Result<Homography> {
    let flow = ccl(f_r, f_t, cfg.patch_side, cfg.alpha)?;
    let (gh, gw) = (flow.height(), flow.width());
    // Border cells correlate against clipped patches; mask them out when
    // enough interior remains.
    let mask: Vec<bool> = (0..gh * gw)
        .map(|i| {
            let (y, x) = (i / gw, i % gw);
            gh < 4 || gw < 4 || (y > 0 && x > 0 && y + 1 < gh && x + 1 < gw)
        })
        .collect();
    let h_feat = match fit_flow(&flow, Some(&mask), cfg.robust_fit) {
        Ok(h) => h,
        // A fit can fail on flat inputs; photometric refinement still runs.
        Err(Error::TooFewCorrespondences { .. }) | Err(Error::Degenerate(_)) => {
            Homography::identity()
        }
        Err(e) => return Err(e),
    };
    // Feature cell centers sit at (k + 0.5) * scale - 0.5 in image pixels.
    let sx = image_w as f64 / gw as f64;
    let sy = image_h as f64 / gh as f64;
    affine_conjugate(&h_feat, sx, sy, (sx - 1.0) / 2.0, (sy - 1.0) / 2.0)
}

fn mask_support(mask: &Image) -> f64 {
    let n = mask.plane(0).len();
    mask.plane(0).iter().filter(|&&v| v > 0.5).count() as f64 / n as f64
}

/// Errors when the warped validity mask supports less than 1% of a square
/// working canvas.
fn check_overlap(h: &Homography, resolution: usize) -> Result<f64> {
    let r = resolution;
    let support = mask_support(&Warp::Homography(h).mask(r, r, r, r)?);
    if support < MIN_OVERLAP {
        return Err(Error::NoOverlap { support });
    }
    Ok(support)
}

/// RMS corner motion of the correction `outer` applies on top of `prior`
/// over a square canvas.
fn residual_rms(prior: &Homography, outer: &Homography, resolution: usize) -> Result<f64> {
    let rect = Rect::of_size(resolution as f64, resolution as f64);
    let delta = prior.inverse()?.compose(outer)?;
    let motion = to_4pt(&delta, &rect)?;
    let sum: f64 = motion
        .motions
        .iter()
        .map(|m| m[0] * m[0] + m[1] * m[1])
        .sum();
    Ok((sum / 4.0).sqrt())
}

/// Runs the full pipeline: CCL flow and fitting at the two coarse layers
/// with photometric polish, then mesh refinement, all at the working
/// resolution; results are lifted back to the input resolution.
pub fn align(
    i_r: &Image,
    i_t: &Image,
    cfg: &AlignConfig,
    depth: Option<&DepthMap>,
) -> Result<AlignmentResult> {
    cfg.validate()?;
    if i_r.channels() != i_t.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} channels",
            i_r.channels(),
            i_t.channels()
        )));
    }
    let r = cfg.working_resolution;
    let work_r = i_r.resize_bilinear(r, r)?;
    let work_t = i_t.resize_bilinear(r, r)?;
    let depth_w = match depth {
        Some(d) => {
            if d.height() != i_t.height() || d.width() != i_t.width() {
                return Err(Error::ShapeMismatch(
                    "depth map must match the target image".into(),
                ));
            }
            Some(d.resized(r, r)?)
        }
        None => None,
    };

    let scales_r = extract_features(&work_r, 3)?;
    let scales_t = extract_features(&work_t, 3)?;

    // The flow fit is a proposal; the photometric objective arbitrates.
    // On low-texture inputs the handcrafted features can mismatch badly,
    // and a worse-than-prior proposal must not poison the next layer.
    let keep_better = |cand: Homography, prior: &Homography| -> Result<Homography> {
        let f_cand = crate::objective::content_loss_layer(
            &work_r,
            &work_t,
            Warp::Homography(&cand),
        );
        let f_prior =
            crate::objective::content_loss_layer(&work_r, &work_t, Warp::Homography(prior))?;
        Ok(match f_cand {
            Ok(f) if f < f_prior => cand,
            _ => *prior,
        })
    };

    // Layer 1: coarsest features, global residual from identity.
    let t1 = Instant::now();
    let f3_r = build_layer_features(&scales_r, 3)?;
    let f3_t = build_layer_features(&scales_t, 3)?;
    let h1_raw = fit_layer_homography(&f3_r, &f3_t, r, r, cfg)?;
    let h1_kept = keep_better(h1_raw, &Homography::identity())?;
    let (h1, mut trace1) = refine_global(&work_r, &work_t, &h1_kept, cfg)?;
    trace1.millis = t1.elapsed().as_secs_f64() * 1e3;

    // Layer 2: finer features of the target warped by the current estimate.
    let t2 = Instant::now();
    let warped_t = warp_global(&work_t, &h1, r, r);
    let scales_wt = extract_features(&warped_t, 3)?;
    let f2_r = build_layer_features(&scales_r, 2)?;
    let f2_wt = build_layer_features(&scales_wt, 2)?;
    let h2_residual = fit_layer_homography(&f2_r, &f2_wt, r, r, cfg)?;
    let composed = keep_better(h1.compose(&h2_residual)?, &h1)?;
    let (h_global, mut trace2) = refine_global(&work_r, &work_t, &composed, cfg)?;
    trace2.millis = t2.elapsed().as_secs_f64() * 1e3;

    check_overlap(&h_global, r)?;
    let stage_residual_rms = [
        residual_rms(&Homography::identity(), &h1, r)?,
        residual_rms(&h1, &h_global, r)?,
    ];

    // Layer 3: multi-grid mesh refinement from the global prior.
    let t3 = Instant::now();
    let mesh0 = mesh_from_homography(&h_global, cfg.grid_rows, cfg.grid_cols, r, r)?;
    let (mesh_w, mut trace3) = refine_mesh(&work_r, &work_t, &mesh0, depth_w.as_ref(), cfg)?;
    trace3.millis = t3.elapsed().as_secs_f64() * 1e3;

    let losses = objective(
        &work_r,
        &work_t,
        &[
            Warp::Homography(&h1),
            Warp::Homography(&h_global),
            Warp::Mesh(&mesh_w),
        ],
        depth_w.as_ref(),
        cfg.depth_levels,
        &cfg.weights(),
    )?;
    let overlap = mask_support(&warp_mask(&mesh_w, r, r)?);

    // Lift to the input resolution: canvas scales with the reference,
    // vertex coordinates with the target.
    let (canvas_sx, canvas_sy) = (i_r.width() as f64 / r as f64, i_r.height() as f64 / r as f64);
    let (target_sx, target_sy) = (i_t.width() as f64 / r as f64, i_t.height() as f64 / r as f64);
    let lift = nalgebra::Matrix3::new(target_sx, 0.0, 0.0, 0.0, target_sy, 0.0, 0.0, 0.0, 1.0)
        * h_global.matrix()
        * nalgebra::Matrix3::new(
            1.0 / canvas_sx,
            0.0,
            0.0,
            0.0,
            1.0 / canvas_sy,
            0.0,
            0.0,
            0.0,
            1.0,
        );
    let global_h = Homography::from_matrix(lift)?;
    let mesh = mesh_w.rescaled(i_r.height(), i_r.width(), target_sx, target_sy);

    Ok(AlignmentResult {
        global_h,
        mesh_valid: mesh.is_valid(),
        mesh,
        losses,
        stages: [trace1, trace2, trace3],
        overlap,
        stage_residual_rms,
    })
}
