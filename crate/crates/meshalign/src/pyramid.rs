//! Handcrafted multi-scale feature extraction.
//!
//! A deterministic surrogate for a learned backbone: each scale carries the
//! downsampled gray intensity plus rectified horizontal and vertical Sobel
//! responses. Channels are nonnegative so that patch correlations of
//! normalized features stay in `[0, K*K]`. Per-layer features stack the
//! scales from `l` to `N`, resized to scale `l`, and are l2-normalized.

use crate::error::{Error, Result};
use crate::imaging::Image;

const NORM_EPS: f32 = 1e-8;

/// A feature tensor with the same planar layout as [`Image`], plus a flag
/// recording whether channel vectors are unit length.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl FeatureMap {
    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            normalized: false,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One channel plane, row-major.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[c * self.height * self.width + y * self.width + x]
    }

    /// The channel vector at one spatial location.
    pub fn vector_at(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(y, x, c)).collect()
    }

    /// Divides every location's channel vector by `max(l2, 1e-8)`; all-zero
    /// vectors stay zero.
    pub fn l2_normalize(&self) -> FeatureMap {
        let n = self.height * self.width;
        let mut out = self.clone();
        for i in 0..n {
            let mut sq = 0.0f64;
            for c in 0..self.channels {
                let v = self.data[c * n + i] as f64;
                sq += v * v;
            }
            let inv = 1.0 / (sq.sqrt().max(NORM_EPS as f64));
            for c in 0..self.channels {
                out.data[c * n + i] = (self.data[c * n + i] as f64 * inv) as f32;
            }
        }
        out.normalized = true;
        out
    }

    /// Bilinear resize with the same convention as
    /// [`Image::resize_bilinear`]. The normalized flag is dropped because
    /// interpolation does not preserve unit length.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<FeatureMap> {
        let img = Image::from_vec(self.height, self.width, self.channels, self.data.clone())?;
        let resized = img.resize_bilinear(out_h, out_w)?;
        FeatureMap::from_vec(out_h, out_w, self.channels, resized.data().to_vec())
    }
}

/// Per-scale raw features: scale `k` (1-indexed) has size `(H/2^k, W/2^k)`
/// and 3 channels computed on the bilinearly downsampled grayscale image:
/// intensity, rectified horizontal Sobel, rectified vertical Sobel.
pub fn extract_features(img: &Image, num_scales: usize) -> Result<Vec<FeatureMap>> {
    if num_scales == 0 {
        return Err(Error::InvalidParameter("num_scales must be >= 1".into()));
    }
    let min_side = img.height().min(img.width());
    if min_side < (1usize << num_scales) {
        return Err(Error::InvalidParameter(format!(
            "image side {} too small for {} scales",
            min_side, num_scales
        )));
    }
    let gray = img.to_grayscale()?;
    let mut scales = Vec::with_capacity(num_scales);
    for k in 1..=num_scales {
        let h = img.height() >> k;
        let w = img.width() >> k;
        let small = gray.resize_bilinear(h, w)?;
        scales.push(sobel_features(&small));
    }
    Ok(scales)
}

/// Gray + rectified Sobel responses, with clamped borders so constant
/// images give zero gradients everywhere. Responses are divided by 4 to
/// stay within `[0, 1]`.
fn sobel_features(gray: &Image) -> FeatureMap {
    let (h, w) = (gray.height(), gray.width());
    let plane = gray.plane(0);
    let mut data = vec![0.0f32; h * w * 3];
    let at = |y: i64, x: i64| -> f32 {
        let y = y.clamp(0, h as i64 - 1) as usize;
        let x = x.clamp(0, w as i64 - 1) as usize;
        plane[y * w + x]
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let idx = y as usize * w + x as usize;
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            data[idx] = plane[idx];
            data[h * w + idx] = gx.abs() / 4.0;
            data[2 * h * w + idx] = gy.abs() / 4.0;
        }
    }
    FeatureMap {
        height: h,
        width: w,
        channels: 3,
        data,
        normalized: false,
    }
}

/// Layer `l` features (1-indexed): scales `l..=N` resized to scale `l`'s
/// size, concatenated on channels in scale order, then l2-normalized.
pub fn build_layer_features(scales: &[FeatureMap], layer: usize) -> Result<FeatureMap> {
    let n = scales.len();
    if layer == 0 || layer > n {
        return Err(Error::InvalidParameter(format!(
            "layer {layer} outside 1..={n}"
        )));
    }
    let base = &scales[layer - 1];
    let (h, w) = (base.height(), base.width());
    let total_ch: usize = scales[layer - 1..].iter().map(|s| s.channels()).sum();
    let mut data = Vec::with_capacity(h * w * total_ch);
    for scale in &scales[layer - 1..] {
        let resized = if scale.height() == h && scale.width() == w {
            scale.clone()
        } else {
            scale.resize_bilinear(h, w)?
        };
        data.extend_from_slice(resized.data());
    }
    Ok(FeatureMap::from_vec(h, w, total_ch, data)?.l2_normalize())
}
