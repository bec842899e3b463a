//! Contextual correlation layer and the cost-volume baseline.
//!
//! Three stages: a patch-to-patch correlation volume with `H*W` channels,
//! a scale softmax that sharpens each location's match distribution, and a
//! feature flow that reads off the expected displacement per cell. The
//! point-to-point cost volume with a `(2r+1)^2` search window is kept as
//! the comparison baseline.
//!
//! Volumes store one contiguous channel vector per location
//! (`data[(y*W + x) * channels + k]`).

use crate::error::{Error, Result};
use crate::parallel::for_each_row;
use crate::pyramid::FeatureMap;

/// Whether a volume holds raw correlations or softmax probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Raw,
    Probability,
}

/// Patch-to-patch correlation volume of shape `H x W x (H*W)`.
///
/// Raw values are sums of `K*K` cosine similarities; with nonnegative
/// feature channels (as produced by the pyramid) and `K = 3` every value
/// lies in `[0, 9]`. Probability volumes hold a distribution over the
/// `H*W` target cells per location.
#[derive(Debug, Clone)]
pub struct CorrelationVolume {
    height: usize,
    width: usize,
    data: Vec<f32>,
    kind: VolumeKind,
}

impl CorrelationVolume {
    /// Wraps raw per-location channel vectors; `data` must hold
    /// `H * W * (H * W)` scalars.
    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * height * width {
            return Err(Error::ShapeMismatch(format!(
                "volume length {} does not match {h}x{w}x{}",
                data.len(),
                height * width,
                h = height,
                w = width,
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            kind: VolumeKind::Raw,
        })
    }

    /// Wraps per-location probability vectors: nonnegative, each location
    /// summing to 1 within 1e-5.
    pub fn from_probabilities(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let mut v = Self::from_raw(height, width, data)?;
        let ch = v.channels();
        for loc in 0..height * width {
            let row = &v.data[loc * ch..(loc + 1) * ch];
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidParameter(
                    "probabilities must be nonnegative".into(),
                ));
            }
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidParameter(format!(
                    "location {loc} probabilities sum to {sum}"
                )));
            }
        }
        v.kind = VolumeKind::Probability;
        Ok(v)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.height * self.width
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The channel vector at location `(y, x)`.
    pub fn vector_at(&self, y: usize, x: usize) -> &[f32] {
        let ch = self.channels();
        let base = (y * self.width + x) * ch;
        &self.data[base..base + ch]
    }
}

/// Point-to-point cost volume over a `(2*radius+1)^2` displacement window.
#[derive(Debug, Clone)]
pub struct CostVolume {
    height: usize,
    width: usize,
    radius: usize,
    data: Vec<f32>,
}

impl CostVolume {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn channels(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Similarity at displacement `(dx, dy)` from location `(y, x)`.
    pub fn at(&self, y: usize, x: usize, dy: i64, dx: i64) -> f32 {
        let r = self.radius as i64;
        debug_assert!(dy.abs() <= r && dx.abs() <= r);
        let side = 2 * self.radius + 1;
        let ch = ((dy + r) as usize) * side + (dx + r) as usize;
        self.data[(y * self.width + x) * self.channels() + ch]
    }
}

/// Dense per-cell feature motions `(m_hor, m_ver)` in cell units.
#[derive(Debug, Clone)]
pub struct FlowField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowField {
    pub fn from_components(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(Error::ShapeMismatch("flow component length".into()));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(m_hor, m_ver)` at cell `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }
}

fn check_pair(f_r: &FeatureMap, f_t: &FeatureMap) -> Result<()> {
    if f_r.height() != f_t.height()
        || f_r.width() != f_t.width()
        || f_r.channels() != f_t.channels()
    {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            f_r.height(),
            f_r.width(),
            f_r.channels(),
            f_t.height(),
            f_t.width(),
            f_t.channels()
        )));
    }
    if !f_r.is_normalized() || !f_t.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

/// Cost-volume baseline: the channel for displacement `(dx, dy)` holds the
/// cosine similarity `<F_r(x, y), F_t(x+dx, y+dy)>` (a plain dot product on
/// unit vectors); out-of-bounds targets contribute 0.
pub fn cost_volume(f_r: &FeatureMap, f_t: &FeatureMap, radius: usize) -> Result<CostVolume> {
    check_pair(f_r, f_t)?;
    let (h, w, c) = (f_r.height(), f_r.width(), f_r.channels());
    let side = 2 * radius + 1;
    let channels = side * side;
    let mut data = vec![0.0f32; h * w * channels];
    let r = radius as i64;

    for_each_row(&mut data, channels, |loc, out| {
        let yr = (loc / w) as i64;
        let xr = (loc % w) as i64;
        for dy in -r..=r {
            let yt = yr + dy;
            if yt < 0 || yt >= h as i64 {
                continue;
            }
            for dx in -r..=r {
                let xt = xr + dx;
                if xt < 0 || xt >= w as i64 {
                    continue;
                }
                let it = yt as usize * w + xt as usize;
                let mut dot = 0.0f32;
                for ch in 0..c {
                    dot += f_r.plane(ch)[loc] * f_t.plane(ch)[it];
                }
                out[((dy + r) as usize) * side + (dx + r) as usize] = dot;
            }
        }
    });

    Ok(CostVolume {
        height: h,
        width: w,
        radius,
        data,
    })
}

/// Patch-to-patch correlation volume: channel `k` at `(x_r, y_r)` holds the
/// sum over the `K x K` window of `<F_r(x_r+i, y_r+j), F_t(x_t+i, y_t+j)>`
/// where `(x_t, y_t) = (k mod W, k div W)`; out-of-bounds terms are 0.
///
/// Structured as a convolution with filters extracted from `F_t`: the
/// pointwise dot-product table between all location pairs is built once and
/// the `K*K` diagonal shifts of it are accumulated.
pub fn correlation_volume(f_r: &FeatureMap, f_t: &FeatureMap, k: usize) -> Result<CorrelationVolume> {
    check_pair(f_r, f_t)?;
    if k % 2 == 0 {
        return Err(Error::EvenPatchSize(k));
    }
    let (h, w, c) = (f_r.height(), f_r.width(), f_r.channels());
    let hw = h * w;

    // Dot-product table: dots[ir * hw + it] = <F_r(ir), F_t(it)>.
    let mut dots = vec![0.0f32; hw * hw];
    for_each_row(&mut dots, hw, |ir, row| {
        for ch in 0..c {
            let a = f_r.plane(ch)[ir];
            if a == 0.0 {
                continue;
            }
            for (out, &b) in row.iter_mut().zip(f_t.plane(ch)) {
                *out += a * b;
            }
        }
    });

    let r = (k / 2) as i64;
    let mut data = vec![0.0f32; hw * hw];
    for_each_row(&mut data, hw, |ir, out| {
        let yr = (ir / w) as i64;
        let xr = (ir % w) as i64;
        for j in -r..=r {
            let yrj = yr + j;
            if yrj < 0 || yrj >= h as i64 {
                continue;
            }
            // Valid target rows for this j: yt + j in [0, h).
            let yt_lo = (-j).max(0) as usize;
            let yt_hi = (h as i64 - j).min(h as i64) as usize;
            for i in -r..=r {
                let xri = xr + i;
                if xri < 0 || xri >= w as i64 {
                    continue;
                }
                let irs = yrj as usize * w + xri as usize;
                let xt_lo = (-i).max(0) as usize;
                let xt_hi = (w as i64 - i).min(w as i64) as usize;
                if xt_lo >= xt_hi {
                    continue;
                }
                for yt in yt_lo..yt_hi {
                    let ytj = (yt as i64 + j) as usize;
                    let out_base = yt * w;
                    let src_base = irs * hw + ytj * w;
                    let dst = &mut out[out_base + xt_lo..out_base + xt_hi];
                    let src =
                        &dots[src_base + (xt_lo as i64 + i) as usize
                            ..src_base + (xt_hi as i64 + i) as usize];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    });

    Ok(CorrelationVolume {
        height: h,
        width: w,
        data,
        kind: VolumeKind::Raw,
    })
}

/// Per-location softmax of `alpha * v`, computed with max subtraction.
pub fn scale_softmax(volume: &CorrelationVolume, alpha: f64) -> Result<CorrelationVolume> {
    if volume.kind != VolumeKind::Raw {
        return Err(Error::ExpectedRawVolume);
    }
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    let ch = volume.channels();
    let mut out = volume.clone();
    for_each_row(&mut out.data, ch, |_, row| {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            let e = (alpha * (*v as f64 - max)).exp();
            *v = e as f32;
            sum += e;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v = (*v as f64 * inv) as f32;
        }
    });
    out.kind = VolumeKind::Probability;
    Ok(out)
}

/// Expected displacement per cell: with 0-based channel `k`, the target
/// coordinate is `(k mod W, k div W)` and
/// `m_hor(i, j) = sum_k p_k * x_k - j`, `m_ver(i, j) = sum_k p_k * y_k - i`.
pub fn feature_flow(volume: &CorrelationVolume) -> Result<FlowField> {
    if volume.kind != VolumeKind::Probability {
        return Err(Error::ExpectedProbabilityVolume);
    }
    let (h, w) = (volume.height, volume.width);
    let ch = volume.channels();
    let mut dx = vec![0.0f64; h * w];
    let mut dy = vec![0.0f64; h * w];
    for loc in 0..h * w {
        let row = &volume.data[loc * ch..(loc + 1) * ch];
        let mut ex = 0.0f64;
        let mut ey = 0.0f64;
        for (k, &p) in row.iter().enumerate() {
            ex += p as f64 * (k % w) as f64;
            ey += p as f64 * (k / w) as f64;
        }
        dx[loc] = ex - (loc % w) as f64;
        dy[loc] = ey - (loc / w) as f64;
    }
    FlowField::from_components(h, w, dx, dy)
}

/// The full contextual correlation layer:
/// `feature_flow(scale_softmax(correlation_volume(f_r, f_t, k), alpha))`.
pub fn ccl(f_r: &FeatureMap, f_t: &FeatureMap, k: usize, alpha: f64) -> Result<FlowField> {
    let volume = correlation_volume(f_r, f_t, k)?;
    let prob = scale_softmax(&volume, alpha)?;
    feature_flow(&prob)
}
