//! Image container, bilinear sampling, and resizing.
//!
//! Pixel values are `f32` in `[0, 1]`, stored planar row-major: plane 0 is
//! `height * width` scalars, then plane 1, and so on. Continuous coordinates
//! put pixel centers on the integer grid, so `sample_bilinear(x, y)` with
//! integral `x`, `y` returns stored values exactly.

pub mod io;

use crate::error::{Error, Result};

/// Grayscale weights for RGB conversion.
const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A planar multi-channel raster with unit-interval intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Zero-filled image. Panics on zero dimensions or channels.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "image dimensions must be positive"
        );
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        let mut img = Self::new(height, width, channels);
        img.data.fill(value);
        img
    }

    /// Wraps an existing planar buffer. The length must be
    /// `height * width * channels`.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidImage("zero dimension".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "buffer length {} does not match {}x{}x{}",
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
        })
    }

    /// Builds an image by evaluating `f(y, x, c)`.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f32>(
        height: usize,
        width: usize,
        channels: usize,
        mut f: F,
    ) -> Self {
        let mut img = Self::new(height, width, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let v = f(y, x, c);
                    img.data[c * height * width + y * width + x] = v;
                }
            }
        }
        img
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// One channel plane, `height * width` scalars row-major.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[c * self.height * self.width + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[c * self.height * self.width + y * self.width + x] = v;
    }

    /// Converts to a single-channel image using (0.299, 0.587, 0.114)
    /// weights. Gray input is returned unchanged.
    pub fn to_grayscale(&self) -> Result<Image> {
        match self.channels {
            1 => Ok(self.clone()),
            3 => {
                let n = self.height * self.width;
                let mut data = vec![0.0f32; n];
                for (c, w) in LUMA_WEIGHTS.iter().enumerate() {
                    let plane = self.plane(c);
                    for (d, &p) in data.iter_mut().zip(plane) {
                        *d += w * p;
                    }
                }
                Image::from_vec(self.height, self.width, 1, data)
            }
            c => Err(Error::UnsupportedChannels(c)),
        }
    }

    /// Bilinear sample of one channel with zero padding: neighbors outside
    /// the image contribute 0, so coordinates fully outside
    /// `[-1, W] x [-1, H]` return 0.
    #[inline]
    pub fn sample_bilinear_channel(&self, c: usize, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;

        let plane_off = c * self.height * self.width;
        let fetch = |yy: i64, xx: i64| -> f64 {
            if yy < 0 || xx < 0 || yy >= self.height as i64 || xx >= self.width as i64 {
                0.0
            } else {
                self.data[plane_off + yy as usize * self.width + xx as usize] as f64
            }
        };

        let v00 = fetch(y0, x0);
        let v01 = fetch(y0, x0 + 1);
        let v10 = fetch(y0 + 1, x0);
        let v11 = fetch(y0 + 1, x0 + 1);

        ((1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)) as f32
    }

    /// Bilinear sample of all channels at `(x, y)`; see
    /// [`sample_bilinear_channel`](Self::sample_bilinear_channel) for the
    /// padding contract.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Vec<f32> {
        (0..self.channels)
            .map(|c| self.sample_bilinear_channel(c, x, y))
            .collect()
    }

    /// Bilinear sample with coordinates clamped to the valid range
    /// (border replication). Used by resizing, where zero padding would
    /// darken borders.
    #[inline]
    pub fn sample_bilinear_clamped_channel(&self, c: usize, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.sample_bilinear_channel(c, x, y)
    }

    /// Resizes with the align-corners=false convention:
    /// `src = (dst + 0.5) * scale - 0.5`, border-clamped.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Image> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidParameter("zero output dimensions".into()));
        }
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let mut out = Image::new(out_h, out_w, self.channels);
        for c in 0..self.channels {
            for y in 0..out_h {
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                for x in 0..out_w {
                    let src_x = (x as f64 + 0.5) * sx - 0.5;
                    out.set(y, x, c, self.sample_bilinear_clamped_channel(c, src_x, src_y));
                }
            }
        }
        Ok(out)
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Copies the `h x w` window whose top-left pixel is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidParameter(format!(
                "crop {}x{} at ({y0}, {x0}) exceeds {}x{}",
                h, w, self.height, self.width
            )));
        }
        let mut out = Image::new(h, w, self.channels);
        for c in 0..self.channels {
            let src = self.plane(c);
            for y in 0..h {
                let src_row = &src[(y0 + y) * self.width + x0..(y0 + y) * self.width + x0 + w];
                let dst = &mut out.data[c * h * w + y * w..c * h * w + (y + 1) * w];
                dst.copy_from_slice(src_row);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_4x4() -> Image {
        Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32 / 15.0)
    }

    #[test]
    fn grayscale_identity_for_gray_input() {
        let img = ramp_4x4();
        let gray = img.to_grayscale().unwrap();
        assert_eq!(gray, img);
    }

    #[test]
    fn grayscale_weights() {
        let white = Image::constant(2, 2, 3, 1.0);
        let g = white.to_grayscale().unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-6);
        }

        let mut red = Image::new(2, 2, 3);
        for y in 0..2 {
            for x in 0..2 {
                red.set(y, x, 0, 1.0);
            }
        }
        let g = red.to_grayscale().unwrap();
        for &v in g.data() {
            assert!((v - 0.299).abs() < 1e-6);
        }
    }

    #[test]
    fn grayscale_rejects_two_channels() {
        let img = Image::new(2, 2, 2);
        assert!(matches!(
            img.to_grayscale(),
            Err(Error::UnsupportedChannels(2))
        ));
    }

    #[test]
    fn bilinear_integer_coordinates_are_exact() {
        let img = ramp_4x4();
        for y in 0..4 {
            for x in 0..4 {
                let s = img.sample_bilinear_channel(0, x as f64, y as f64);
                assert_eq!(s, img.get(y, x, 0));
            }
        }
    }

    #[test]
    fn bilinear_midpoint() {
        let mut img = Image::new(1, 2, 1);
        img.set(0, 0, 0, 0.0);
        img.set(0, 1, 0, 1.0);
        let s = img.sample_bilinear_channel(0, 0.5, 0.0);
        assert!((s - 0.5).abs() < 1e-7);
    }

    #[test]
    fn bilinear_far_outside_is_zero() {
        let img = Image::constant(4, 4, 2, 0.7);
        assert_eq!(img.sample_bilinear(-10.0, -10.0), vec![0.0, 0.0]);
        assert_eq!(img.sample_bilinear(100.0, 2.0), vec![0.0, 0.0]);
    }

    #[test]
    fn bilinear_partial_overlap_blends_with_zero() {
        let img = Image::constant(4, 4, 1, 1.0);
        // Half a pixel outside the left edge: blends 1.0 with the zero pad.
        let s = img.sample_bilinear_channel(0, -0.5, 1.0);
        assert!((s - 0.5).abs() < 1e-7);
    }

    #[test]
    fn bilinear_is_linear_in_image_values() {
        let a = 0.3f32;
        let b = 0.6f32;
        let i1 = Image::from_fn(5, 5, 1, |y, x, _| ((y * 31 + x * 17) % 11) as f32 / 11.0);
        let i2 = Image::from_fn(5, 5, 1, |y, x, _| ((y * 7 + x * 13) % 9) as f32 / 9.0);
        let mix = Image::from_fn(5, 5, 1, |y, x, _| {
            a * i1.get(y, x, 0) + b * i2.get(y, x, 0)
        });
        for &(x, y) in &[(0.25, 0.75), (2.5, 3.1), (-0.4, 1.2), (3.9, 3.9)] {
            let sm = mix.sample_bilinear_channel(0, x, y);
            let s1 = i1.sample_bilinear_channel(0, x, y);
            let s2 = i2.sample_bilinear_channel(0, x, y);
            assert!((sm - (a * s1 + b * s2)).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_is_continuous() {
        let img = Image::from_fn(6, 6, 1, |y, x, _| ((y * 5 + x * 3) % 7) as f32 / 7.0);
        let eps = 1e-4;
        // max|grad| for unit-interval neighbors is 1 per pixel step.
        for &(x, y) in &[(1.3, 2.7), (0.0, 0.0), (4.99, 4.99), (2.5, 2.5)] {
            let s0 = img.sample_bilinear_channel(0, x, y) as f64;
            let s1 = img.sample_bilinear_channel(0, x + eps, y) as f64;
            assert!((s1 - s0).abs() <= eps * 1.0 + 1e-9);
        }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp_4x4();
        let out = img.resize_bilinear(4, 4).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::constant(5, 7, 3, 0.42);
        for &(h, w) in &[(2, 3), (10, 14), (1, 1), (9, 2)] {
            let out = img.resize_bilinear(h, w).unwrap();
            for &v in out.data() {
                assert!((v - 0.42).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_matches_independent_convention_oracle() {
        // Scalar per-pixel reimplementation of align-corners=false.
        let img = ramp_4x4();
        let out = img.resize_bilinear(2, 2).unwrap();
        let oracle = |dy: usize, dx: usize| -> f32 {
            let sy = (dy as f64 + 0.5) * 2.0 - 0.5;
            let sx = (dx as f64 + 0.5) * 2.0 - 0.5;
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            let v = |y: usize, x: usize| img.get(y.min(3), x.min(3), 0) as f64;
            (((1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)))
                + fy * ((1.0 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1))) as f32
        };
        for y in 0..2 {
            for x in 0..2 {
                assert!((out.get(y, x, 0) - oracle(y, x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_rejects_zero_dims() {
        let img = ramp_4x4();
        assert!(img.resize_bilinear(0, 2).is_err());
        assert!(img.resize_bilinear(2, 0).is_err());
    }
}
