//! Metrics and synthetic data: corner-perturbation pair generation,
//! 4-pt RMSE, overlap PSNR/SSIM, and difficulty tiers.

use crate::error::{Error, Result};
use crate::homography::{dlt_solve, warp_global, FourPtMotion, Rect};
use crate::imaging::Image;
use crate::objective::Warp;

/// SplitMix64: a tiny deterministic generator so synthetic data is
/// bit-reproducible across platforms.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[-amp, amp]`.
    pub fn next_symmetric(&mut self, amp: f64) -> f64 {
        amp * (2.0 * self.next_f64() - 1.0)
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n.max(1)
    }
}

/// A reference/target pair generated from one source image by perturbing
/// the four corners of a patch.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub reference: Image,
    pub target: Image,
    pub gt_motion: FourPtMotion,
    pub rho: f64,
    pub seed: u64,
}

/// Corner-perturbation pair synthesis: a patch with at least `rho` margin
/// is chosen, its corners are perturbed uniformly in `[-rho, rho]^2`, the
/// source is warped by the homography mapping perturbed corners back to
/// the originals, and both crops are taken at the same location. The
/// ground-truth motion realigns the target with the reference through
/// `from_4pt` on the patch rectangle.
pub fn synth_pair(src: &Image, rho: f64, patch: usize, seed: u64) -> Result<SynthPair> {
    if patch == 0 {
        return Err(Error::InvalidParameter("patch must be positive".into()));
    }
    if rho < 0.0 {
        return Err(Error::InvalidParameter("rho must be nonnegative".into()));
    }
    let margin = rho.ceil() as usize;
    if src.width() < patch + 2 * margin || src.height() < patch + 2 * margin {
        return Err(Error::InvalidParameter(format!(
            "source {}x{} too small for patch {} with margin {}",
            src.height(),
            src.width(),
            patch,
            margin
        )));
    }
    let mut rng = Rng::new(seed);
    let x0 = margin + rng.next_below(src.width() - patch - 2 * margin + 1);
    let y0 = margin + rng.next_below(src.height() - patch - 2 * margin + 1);

    let rect = Rect::new(x0 as f64, y0 as f64, patch as f64, patch as f64);
    let corners = rect.corners();
    let mut motions = [[0.0f64; 2]; 4];
    let mut warp = crate::homography::Homography::identity();
    // Redraw on the (rare) degenerate perturbation; deterministic in seed.
    for attempt in 0..16 {
        for m in &mut motions {
            m[0] = rng.next_symmetric(rho);
            m[1] = rng.next_symmetric(rho);
        }
        if rho == 0.0 {
            break;
        }
        let perturbed: Vec<[f64; 2]> = corners
            .iter()
            .zip(&motions)
            .map(|(c, m)| [c[0] + m[0], c[1] + m[1]])
            .collect();
        match dlt_solve(&perturbed, &corners) {
            Ok(h) => {
                warp = h;
                break;
            }
            Err(_) if attempt + 1 < 16 => continue,
            Err(e) => return Err(e),
        }
    }

    let warped = warp_global(src, &warp, src.height(), src.width());
    let reference = src.crop(y0, x0, patch, patch)?;
    let target = warped.crop(y0, x0, patch, patch)?;
    Ok(SynthPair {
        reference,
        target,
        gt_motion: FourPtMotion::new(motions),
        rho,
        seed,
    })
}

/// Root mean square corner error between two 4-pt motions:
/// `sqrt(1/4 sum_i ||pred_i - gt_i||^2)`.
pub fn rmse_4pt(pred: &FourPtMotion, gt: &FourPtMotion) -> f64 {
    let sum: f64 = pred
        .motions
        .iter()
        .zip(&gt.motions)
        .map(|(p, g)| (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2))
        .sum();
    (sum / 4.0).sqrt()
}

fn overlap_inputs(
    i_r: &Image,
    i_t: &Image,
    warp: Warp<'_>,
) -> Result<(Image, Image, Image)> {
    let (ch, cw) = (i_r.height(), i_r.width());
    let mask = warp.mask(i_t.height(), i_t.width(), ch, cw)?;
    let warped = warp.warp(i_t, ch, cw)?;
    Ok((mask, warped, i_r.clone()))
}

/// PSNR restricted to pixels whose warped validity mask exceeds 0.99,
/// comparing the mask-weighted reference against the warped target.
/// Capped at 99 dB; dynamic range 1.
pub fn psnr_overlap(i_r: &Image, i_t: &Image, warp: Warp<'_>) -> Result<f64> {
    if i_r.channels() != i_t.channels() {
        return Err(Error::ShapeMismatch("channel counts".into()));
    }
    let (mask, warped, reference) = overlap_inputs(i_r, i_t, warp)?;
    let (h, w) = (reference.height(), reference.width());
    let mplane = mask.plane(0);
    let mut se = 0.0f64;
    let mut count = 0usize;
    for c in 0..reference.channels() {
        let rp = reference.plane(c);
        let wp = warped.plane(c);
        for i in 0..h * w {
            if mplane[i] > 0.99 {
                let d = (mplane[i] * rp[i] - wp[i]) as f64;
                se += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("overlap mask".into()));
    }
    let mse = se / count as f64;
    if mse <= 0.0 {
        return Ok(99.0);
    }
    Ok((-10.0 * mse.log10()).min(99.0))
}

/// Mean SSIM on grayscale over 11x11 Gaussian windows (sigma 1.5,
/// k1 = 0.01, k2 = 0.03, dynamic range 1) whose pixels all have mask
/// above 0.99.
pub fn ssim_overlap(i_r: &Image, i_t: &Image, warp: Warp<'_>) -> Result<f64> {
    let g_r = i_r.to_grayscale()?;
    let g_t = i_t.to_grayscale()?;
    let (ch, cw) = (g_r.height(), g_r.width());
    let mask = warp.mask(g_t.height(), g_t.width(), ch, cw)?;
    let warped = warp.warp(&g_t, ch, cw)?;

    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut weights = [[0.0f64; WIN]; WIN];
    let mut wsum = 0.0;
    for (dy, row) in weights.iter_mut().enumerate() {
        for (dx, wv) in row.iter_mut().enumerate() {
            let y = dy as f64 - (WIN as f64 - 1.0) / 2.0;
            let x = dx as f64 - (WIN as f64 - 1.0) / 2.0;
            *wv = (-(x * x + y * y) / (2.0 * SIGMA * SIGMA)).exp();
            wsum += *wv;
        }
    }
    for row in weights.iter_mut() {
        for wv in row.iter_mut() {
            *wv /= wsum;
        }
    }

    let mplane = mask.plane(0);
    let rp = g_r.plane(0);
    let wp = warped.plane(0);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    let mut total = 0.0f64;
    let mut windows = 0usize;
    if ch >= WIN && cw >= WIN {
        for y0 in 0..=ch - WIN {
            'win: for x0 in 0..=cw - WIN {
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        if mplane[(y0 + dy) * cw + x0 + dx] <= 0.99 {
                            continue 'win;
                        }
                    }
                }
                let (mut ma, mut mb) = (0.0f64, 0.0f64);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let i = (y0 + dy) * cw + x0 + dx;
                        let wv = weights[dy][dx];
                        ma += wv * (mplane[i] * rp[i]) as f64;
                        mb += wv * wp[i] as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let i = (y0 + dy) * cw + x0 + dx;
                        let wv = weights[dy][dx];
                        let da = (mplane[i] * rp[i]) as f64 - ma;
                        let db = wp[i] as f64 - mb;
                        va += wv * da * da;
                        vb += wv * db * db;
                        cov += wv * da * db;
                    }
                }
                let ssim = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                total += ssim;
                windows += 1;
            }
        }
    }
    if windows == 0 {
        return Err(Error::EmptyInput("no fully valid SSIM window".into()));
    }
    Ok(total / windows as f64)
}

/// Difficulty tiers over per-pair scores: best 30% easy, next 30%
/// moderate, rest hard. Empty tiers (tiny n) report NaN means.
#[derive(Debug, Clone)]
pub struct TierReport {
    pub scores: Vec<f64>,
    pub higher_is_better: bool,
    pub easy_count: usize,
    pub moderate_count: usize,
    pub hard_count: usize,
    pub easy_mean: f64,
    pub moderate_mean: f64,
    pub hard_mean: f64,
    pub average: f64,
}

pub fn tier_partition(scores: &[f64], higher_is_better: bool) -> Result<TierReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores".into()));
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if higher_is_better {
        sorted.reverse();
    }
    let e = (0.3 * n as f64) as usize;
    let m = (0.6 * n as f64) as usize;
    let mean = |s: &[f64]| {
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    Ok(TierReport {
        scores: scores.to_vec(),
        higher_is_better,
        easy_count: e,
        moderate_count: m - e,
        hard_count: n - m,
        easy_mean: mean(&sorted[..e]),
        moderate_mean: mean(&sorted[e..m]),
        hard_mean: mean(&sorted[m..]),
        average: mean(&sorted),
    })
}

/// Two-plane parallax pair: the target is a textured scene whose left half
/// sits `shift` pixels right of the reference content and whose right half
/// sits `shift` pixels left, so no single homography aligns both. The
/// returned depth map labels the target's two planes.
pub fn parallax_pair(
    height: usize,
    width: usize,
    shift: f64,
    seed: u64,
) -> (Image, Image, crate::objective::DepthMap) {
    let target = textured_image(height, width, 1, seed);
    let reference = Image::from_fn(height, width, 1, |y, x, _| {
        let d = if x < width / 2 { shift } else { -shift };
        target.sample_bilinear_clamped_channel(0, x as f64 + d, y as f64)
    });
    let depth = crate::objective::DepthMap::new(
        height,
        width,
        (0..height * width)
            .map(|i| if i % width < width / 2 { 0.3 } else { 0.9 })
            .collect(),
    )
    .expect("buffer matches dimensions");
    (reference, target, depth)
}

/// Deterministic multi-octave value-noise texture in `[0.05, 0.95]`;
/// rich in gradients at every scale, which photometric refinement needs.
pub fn textured_image(height: usize, width: usize, channels: usize, seed: u64) -> Image {
    let octaves: [(usize, f64); 4] = [(32, 0.45), (16, 0.3), (8, 0.15), (3, 0.1)];
    let lattice = |o: usize, c: usize, yi: usize, xi: usize| -> f64 {
        let mut r = Rng::new(
            seed ^ (o as u64).wrapping_mul(0xA24BAED4963EE407)
                ^ (c as u64).wrapping_mul(0x9FB21C651E98DF25)
                ^ (yi as u64).wrapping_mul(0xD6E8FEB86659FD93)
                ^ (xi as u64).wrapping_mul(0xC2B2AE3D27D4EB4F),
        );
        r.next_f64()
    };
    Image::from_fn(height, width, channels, |y, x, c| {
        let mut v = 0.0f64;
        for (oi, &(cell, amp)) in octaves.iter().enumerate() {
            let fx = x as f64 / cell as f64;
            let fy = y as f64 / cell as f64;
            let (x0, y0) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let v00 = lattice(oi, c, y0, x0);
            let v01 = lattice(oi, c, y0, x0 + 1);
            let v10 = lattice(oi, c, y0 + 1, x0);
            let v11 = lattice(oi, c, y0 + 1, x0 + 1);
            let val = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01)
                + ty * ((1.0 - tx) * v10 + tx * v11);
            v += amp * val;
        }
        (0.05 + 0.9 * v) as f32
    })
}
