//! Browser demo: interactive mesh warping, feature-flow exploration, and
//! end-to-end alignment on synthetic scenes.
//!
//! Build for the web with
//! `cargo build -p meshalign-demo --target wasm32-unknown-unknown --release`
//! followed by `wasm-bindgen --target web`; see the README. All exported
//! functions return RGBA buffers that `www/index.html` draws onto canvases.

use wasm_bindgen::prelude::*;

use meshalign::aligner::{align, AlignConfig};
use meshalign::evalkit::{parallax_pair, rmse_4pt, synth_pair, textured_image};
use meshalign::homography::{from_4pt, FourPtMotion, Rect};
use meshalign::imaging::Image;
use meshalign::mesh::{mesh_from_homography, warp_mesh, Mesh};
use meshalign::objective::{content_loss_layer, GridDepthLevels, Warp};
use meshalign::viz::{draw_mesh_overlay, flow_color_image, fuse_red_blue};

fn to_rgba(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![255u8; h * w * 4];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = if img.channels() == 1 {
                    img.get(y, x, 0)
                } else {
                    img.get(y, x, c)
                };
                out[(y * w + x) * 4 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

fn js_err(e: meshalign::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Output of the mesh-warp explorer: the deformed-mesh overlay, the warped
/// target, and the red/blue fusion against the original.
#[wasm_bindgen]
pub struct WarpView {
    size: u32,
    valid: bool,
    shape_loss: f64,
    overlay: Vec<u8>,
    warped: Vec<u8>,
    fused: Vec<u8>,
}

#[wasm_bindgen]
impl WarpView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> u32 {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn valid(&self) -> bool {
        self.valid
    }

    #[wasm_bindgen(getter)]
    pub fn shape_loss(&self) -> f64 {
        self.shape_loss
    }

    pub fn overlay_rgba(&self) -> Vec<u8> {
        self.overlay.clone()
    }

    pub fn warped_rgba(&self) -> Vec<u8> {
        self.warped.clone()
    }

    pub fn fused_rgba(&self) -> Vec<u8> {
        self.fused.clone()
    }
}

/// Warps a procedural test image with the four-corner motions (TL TR BL BR,
/// eight numbers) on a `grid x grid` mesh; `bulge` additionally displaces
/// the center vertex to show a non-projective deformation.
#[wasm_bindgen]
pub fn warp_explore(
    size: u32,
    grid: u32,
    motions: Vec<f64>,
    bulge: f64,
    seed: u32,
) -> Result<WarpView, JsError> {
    if motions.len() != 8 {
        return Err(JsError::new("expected eight corner motions"));
    }
    let size = size.clamp(64, 512) as usize;
    let grid = grid.clamp(1, 16) as usize;
    let base = textured_image(size, size, 3, seed as u64);

    let mut m = [[0.0f64; 2]; 4];
    for (i, mv) in m.iter_mut().enumerate() {
        mv[0] = motions[2 * i];
        mv[1] = motions[2 * i + 1];
    }
    let h = from_4pt(
        &FourPtMotion::new(m),
        &Rect::of_size(size as f64, size as f64),
    )
    .map_err(js_err)?;
    let mut mesh: Mesh = mesh_from_homography(&h, grid, grid, size, size).map_err(js_err)?;
    if bulge != 0.0 && grid >= 2 {
        let (ci, cj) = (grid / 2, grid / 2);
        let mut v = mesh.vertex(ci, cj);
        v[0] += bulge;
        v[1] += bulge * 0.5;
        mesh.set_vertex(ci, cj, v);
    }

    let valid = mesh.is_valid();
    let overlay = draw_mesh_overlay(&base, &mesh).map_err(js_err)?;
    let (warped, fused) = if valid {
        let w = warp_mesh(&base, &mesh).map_err(js_err)?;
        let f = fuse_red_blue(&base, &w).map_err(js_err)?;
        (w, f)
    } else {
        // Broken meshes are not warped; show the source so the overlay
        // still explains what went wrong.
        (base.clone(), base.clone())
    };
    let shape = if valid {
        meshalign::objective::shape_loss(&mesh, &GridDepthLevels::uniform(grid, grid))
            .map_err(js_err)?
    } else {
        f64::NAN
    };

    Ok(WarpView {
        size: size as u32,
        valid,
        shape_loss: shape,
        overlay: to_rgba(&overlay),
        warped: to_rgba(&warped),
        fused: to_rgba(&fused),
    })
}

/// Output of the flow explorer: color-wheel flow, the fitted displacement
/// in cells, and the mean matching confidence (max probability per cell).
#[wasm_bindgen]
pub struct FlowView {
    size: u32,
    fit_dx: f64,
    fit_dy: f64,
    confidence: f64,
    flow: Vec<u8>,
}

#[wasm_bindgen]
impl FlowView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> u32 {
        self.size
    }

    /// Fitted horizontal displacement in cells.
    #[wasm_bindgen(getter)]
    pub fn fit_dx(&self) -> f64 {
        self.fit_dx
    }

    #[wasm_bindgen(getter)]
    pub fn fit_dy(&self) -> f64 {
        self.fit_dy
    }

    /// Mean over cells of the maximum match probability.
    #[wasm_bindgen(getter)]
    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn flow_rgba(&self) -> Vec<u8> {
        self.flow.clone()
    }
}

/// Runs the correlation layer on a feature grid and its circularly shifted
/// copy. `distinctiveness` interpolates every cell's feature vector between
/// one shared direction (0: matching is impossible, flow collapses to the
/// grid centroid) and an independent random direction (1: matching is
/// near-one-hot). Exposes how the scale softmax concentrates or diffuses.
#[wasm_bindgen]
pub fn flow_explore(
    shift_x: i32,
    shift_y: i32,
    alpha: f64,
    k: u32,
    distinctiveness: f64,
    seed: u32,
) -> Result<FlowView, JsError> {
    let (gh, gw) = (24usize, 24usize);
    let channels = 8usize;
    let d = distinctiveness.clamp(0.0, 1.0) as f32;
    let mut rng = meshalign::evalkit::Rng::new(seed as u64);
    let mut data = vec![0.0f32; gh * gw * channels];
    for i in 0..gh * gw {
        for c in 0..channels {
            let random = rng.next_f64() as f32;
            data[c * gh * gw + i] = (1.0 - d) * 0.5 + d * random;
        }
    }
    let f_r = meshalign::pyramid::FeatureMap::from_vec(gh, gw, channels, data)
        .map_err(js_err)?
        .l2_normalize();

    let (sx, sy) = (
        shift_x.rem_euclid(gw as i32) as usize,
        shift_y.rem_euclid(gh as i32) as usize,
    );
    let mut shifted = vec![0.0f32; gh * gw * channels];
    for c in 0..channels {
        for y in 0..gh {
            for x in 0..gw {
                let src_y = (y + gh - sy) % gh;
                let src_x = (x + gw - sx) % gw;
                shifted[c * gh * gw + y * gw + x] = f_r.get(src_y, src_x, c);
            }
        }
    }
    let f_t = meshalign::pyramid::FeatureMap::from_vec(gh, gw, channels, shifted)
        .map_err(js_err)?
        .l2_normalize();

    let k = if k % 2 == 0 { k + 1 } else { k }.clamp(1, 7) as usize;
    let alpha = alpha.max(0.1);
    let volume = meshalign::correlation::correlation_volume(&f_r, &f_t, k).map_err(js_err)?;
    let probs = meshalign::correlation::scale_softmax(&volume, alpha).map_err(js_err)?;
    let confidence = {
        let ch = probs.channels();
        let mut sum = 0.0f64;
        for loc in 0..gh * gw {
            let row = &probs.data()[loc * ch..(loc + 1) * ch];
            sum += row.iter().fold(0.0f32, |a, &b| a.max(b)) as f64;
        }
        sum / (gh * gw) as f64
    };
    let flow = meshalign::correlation::feature_flow(&probs).map_err(js_err)?;

    let (fit_dx, fit_dy) = match meshalign::homography::fit_flow(&flow, None, true) {
        Ok(h) => {
            let c = [(gw as f64 - 1.0) / 2.0, (gh as f64 - 1.0) / 2.0];
            let p = h.apply_raw(c[0], c[1]);
            (p[0] - c[0], p[1] - c[1])
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    let display = flow_color_image(&flow)
        .resize_bilinear(240, 240)
        .map_err(js_err)?;
    Ok(FlowView {
        size: 240,
        fit_dx,
        fit_dy,
        confidence,
        flow: to_rgba(&display),
    })
}

/// Output of the alignment demo: fusions before and after, plus metrics.
#[wasm_bindgen]
pub struct AlignView {
    size: u32,
    before: Vec<u8>,
    after: Vec<u8>,
    content_before: f64,
    content_after: f64,
    rmse_before: f64,
    rmse_after: f64,
    iterations: u32,
}

#[wasm_bindgen]
impl AlignView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn before_rgba(&self) -> Vec<u8> {
        self.before.clone()
    }

    pub fn after_rgba(&self) -> Vec<u8> {
        self.after.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn content_before(&self) -> f64 {
        self.content_before
    }

    #[wasm_bindgen(getter)]
    pub fn content_after(&self) -> f64 {
        self.content_after
    }

    /// 4-pt RMSE of the identity prediction; NaN for parallax scenes.
    #[wasm_bindgen(getter)]
    pub fn rmse_before(&self) -> f64 {
        self.rmse_before
    }

    #[wasm_bindgen(getter)]
    pub fn rmse_after(&self) -> f64 {
        self.rmse_after
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> u32 {
        self.iterations
    }
}

/// Aligns a synthetic pair end to end. `parallax` switches between a
/// corner-perturbation pair (magnitude = rho) and a two-plane scene
/// (magnitude = per-plane shift) with a two-level depth map.
#[wasm_bindgen]
pub fn align_explore(
    parallax: bool,
    magnitude: f64,
    mu: f64,
    iters: u32,
    seed: u32,
) -> Result<AlignView, JsError> {
    let cfg = AlignConfig {
        working_resolution: 64,
        grid_rows: 4,
        grid_cols: 4,
        refine_iters: iters.clamp(1, 200) as usize,
        mu,
        depth_levels: 2,
        ..AlignConfig::default()
    };

    let (i_r, i_t, depth, gt) = if parallax {
        let (i_r, i_t, depth) = parallax_pair(128, 128, magnitude.clamp(0.0, 6.0), seed as u64);
        (i_r, i_t, Some(depth), None)
    } else {
        let src = textured_image(200, 200, 1, seed as u64);
        let pair = synth_pair(&src, magnitude.clamp(0.0, 24.0), 128, seed as u64)
            .map_err(js_err)?;
        (pair.reference, pair.target, None, Some(pair.gt_motion))
    };

    let result = align(&i_r, &i_t, &cfg, depth.as_ref()).map_err(js_err)?;
    let warped = warp_mesh(&i_t, &result.mesh).map_err(js_err)?;

    let before = fuse_red_blue(&i_r, &i_t).map_err(js_err)?;
    let after = fuse_red_blue(&i_r, &warped).map_err(js_err)?;
    let id = meshalign::homography::Homography::identity();
    let content_before = content_loss_layer(&i_r, &i_t, Warp::Homography(&id)).map_err(js_err)?;
    let content_after = content_loss_layer(&i_r, &i_t, Warp::Mesh(&result.mesh)).map_err(js_err)?;

    let rect = Rect::of_size(i_r.width() as f64, i_r.height() as f64);
    let (rmse_before, rmse_after) = match &gt {
        Some(gt) => {
            let pred = result.predicted_motion(&rect).map_err(js_err)?;
            (
                rmse_4pt(&FourPtMotion::zero(), gt),
                rmse_4pt(&pred, gt),
            )
        }
        None => (f64::NAN, f64::NAN),
    };

    Ok(AlignView {
        size: i_r.width() as u32,
        before: to_rgba(&before),
        after: to_rgba(&after),
        content_before,
        content_after,
        rmse_before,
        rmse_after,
        iterations: result.stages.iter().map(|s| s.iterations as u32).sum(),
    })
}
