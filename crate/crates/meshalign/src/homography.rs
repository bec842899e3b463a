//! Projective-transform algebra: DLT solving, 4-pt parameterization,
//! flow-to-homography fitting, and global backward warping.
//!
//! Direction convention: every stored homography maps warped-canvas
//! (reference-domain) coordinates to target-image coordinates, so warping
//! needs no inverse: output pixel `p` samples the target at `h(p)`.

use nalgebra::{DMatrix, Matrix3};

use crate::correlation::FlowField;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::parallel::for_each_row;

const INFINITY_EPS: f64 = 1e-12;

/// An axis-aligned rectangle, corner order TL, TR, BL, BR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    /// Rectangle `[0, w] x [0, h]` at the origin.
    pub fn of_size(width: f64, height: f64) -> Self {
        Self::new(0.0, 0.0, width, height)
    }

    /// Corners in TL, TR, BL, BR order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x, self.y],
            [self.x + self.width, self.y],
            [self.x, self.y + self.height],
            [self.x + self.width, self.y + self.height],
        ]
    }
}

/// Eight motions of four rectangle corners (TL, TR, BL, BR), each `(du, dv)`
/// in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FourPtMotion {
    pub motions: [[f64; 2]; 4],
}

impl FourPtMotion {
    pub fn new(motions: [[f64; 2]; 4]) -> Self {
        Self { motions }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Eight numbers on one line, `du dv` per corner in TL TR BL BR order.
    pub fn to_text(&self) -> String {
        self.motions
            .iter()
            .flat_map(|m| [m[0], m[1]])
            .map(|v| format!("{v:.17e}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_text(s: &str) -> Result<FourPtMotion> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParameter(format!("motion text: {e}")))?;
        if vals.len() != 8 {
            return Err(Error::InvalidParameter(format!(
                "motion text has {} numbers, expected 8",
                vals.len()
            )));
        }
        let mut motions = [[0.0; 2]; 4];
        for (i, m) in motions.iter_mut().enumerate() {
            m[0] = vals[2 * i];
            m[1] = vals[2 * i + 1];
        }
        Ok(FourPtMotion::new(motions))
    }
}

/// A 3x3 projective map, normalized so the bottom-right entry is 1 when
/// nonzero; guaranteed invertible at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Wraps a matrix, normalizing the bottom-right entry to 1 when it is
    /// nonzero. Fails when the matrix is singular.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let mut m = m;
        let s = m[(2, 2)];
        if s.abs() > INFINITY_EPS {
            m /= s;
        }
        if m.determinant().abs() <= INFINITY_EPS {
            return Err(Error::NotInvertible);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Projective application with an error when `p` maps to infinity.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let den = self.m[(2, 0)] * p[0] + self.m[(2, 1)] * p[1] + self.m[(2, 2)];
        if den.abs() < INFINITY_EPS {
            return Err(Error::PointAtInfinity);
        }
        Ok(self.apply_raw(p[0], p[1]))
    }

    /// Unchecked projective division; near-infinity points come back as
    /// huge coordinates that zero-padded sampling turns into 0.
    #[inline]
    pub fn apply_raw(&self, x: f64, y: f64) -> [f64; 2] {
        let u = self.m[(0, 0)] * x + self.m[(0, 1)] * y + self.m[(0, 2)];
        let v = self.m[(1, 0)] * x + self.m[(1, 1)] * y + self.m[(1, 2)];
        let den = self.m[(2, 0)] * x + self.m[(2, 1)] * y + self.m[(2, 2)];
        [u / den, v / den]
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self.m.try_inverse().ok_or(Error::NotInvertible)?;
        Homography::from_matrix(inv)
    }

    /// `self.compose(&inner)` applies `inner` first: the result maps `p` to
    /// `self(inner(p))`.
    pub fn compose(&self, inner: &Homography) -> Result<Homography> {
        Homography::from_matrix(self.m * inner.m)
    }

    /// Nine row-major decimal numbers on one line.
    pub fn to_text(&self) -> String {
        let mut parts = Vec::with_capacity(9);
        for r in 0..3 {
            for c in 0..3 {
                parts.push(format!("{:.17e}", self.m[(r, c)]));
            }
        }
        parts.join(" ")
    }

    pub fn from_text(s: &str) -> Result<Homography> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParameter(format!("homography text: {e}")))?;
        if vals.len() != 9 {
            return Err(Error::InvalidParameter(format!(
                "homography text has {} numbers, expected 9",
                vals.len()
            )));
        }
        Homography::from_matrix(Matrix3::from_row_slice(&vals))
    }
}

/// Hartley normalization: translate the centroid to the origin and scale
/// the mean distance to sqrt(2). Returns the transform and the points it
/// produces.
fn normalize_points(pts: &[[f64; 2]]) -> Result<(Matrix3<f64>, Vec<[f64; 2]>)> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < INFINITY_EPS {
        return Err(Error::Degenerate("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let mapped = pts
        .iter()
        .map(|p| [s * (p[0] - cx), s * (p[1] - cy)])
        .collect();
    Ok((t, mapped))
}

/// Normalized DLT: exact interpolation for 4 correspondences, algebraic
/// least squares for more. `src` and `dst` must have equal length >= 4.
pub fn dlt_solve(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(Error::TooFewCorrespondences {
            needed: 4,
            got: src.len(),
        });
    }
    let (t_src, src_n) = normalize_points(src)?;
    let (t_dst, dst_n) = normalize_points(dst)?;

    let n = src.len();
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y) = (p[0], p[1]);
        let (u, v) = (q[0], q[1]);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(Error::NotInvertible)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = order[0];
    // Rank below 8 means the correspondences do not pin down a homography.
    let sigma_max = svd.singular_values[order[8]];
    if svd.singular_values[order[1]] <= 1e-10 * sigma_max.max(1.0) {
        return Err(Error::Degenerate(
            "correspondences do not determine a unique homography".into(),
        ));
    }

    let h_vec = v_t.row(smallest);
    let h_n = Matrix3::from_row_slice(&[
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    ]);

    let t_dst_inv = t_dst.try_inverse().ok_or(Error::NotInvertible)?;
    Homography::from_matrix(t_dst_inv * h_n * t_src)
        .map_err(|_| Error::Degenerate("singular homography from correspondences".into()))
}

/// Homography moving `rect`'s corners by `m`: `dlt_solve(corners, corners + motions)`.
pub fn from_4pt(m: &FourPtMotion, rect: &Rect) -> Result<Homography> {
    let src = rect.corners();
    let mut dst = src;
    for (d, mv) in dst.iter_mut().zip(&m.motions) {
        d[0] += mv[0];
        d[1] += mv[1];
    }
    dlt_solve(&src, &dst)
}

/// Inverse of [`from_4pt`]: the corner displacements `h` induces on `rect`.
pub fn to_4pt(h: &Homography, rect: &Rect) -> Result<FourPtMotion> {
    let mut motions = [[0.0f64; 2]; 4];
    for (mv, c) in motions.iter_mut().zip(rect.corners()) {
        let p = h.apply(c)?;
        mv[0] = p[0] - c[0];
        mv[1] = p[1] - c[1];
    }
    Ok(FourPtMotion::new(motions))
}

/// Least-squares homography from a dense flow field: cell `(x, y)` maps to
/// `(x + m_hor, y + m_ver)`. `valid` masks cells (all cells when `None`).
/// With `robust`, three trimming rounds discard residuals above twice the
/// median before refitting.
pub fn fit_flow(flow: &FlowField, valid: Option<&[bool]>, robust: bool) -> Result<Homography> {
    let (h, w) = (flow.height(), flow.width());
    if let Some(mask) = valid {
        if mask.len() != h * w {
            return Err(Error::ShapeMismatch("valid mask length".into()));
        }
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if valid.map_or(true, |m| m[y * w + x]) {
                let (mh, mv) = flow.at(y, x);
                src.push([x as f64, y as f64]);
                dst.push([x as f64 + mh, y as f64 + mv]);
            }
        }
    }
    if src.len() < 8 {
        return Err(Error::TooFewCorrespondences {
            needed: 8,
            got: src.len(),
        });
    }

    let mut best = dlt_solve(&src, &dst)?;
    if !robust {
        return Ok(best);
    }
    for _ in 0..3 {
        let mut residuals: Vec<f64> = src
            .iter()
            .zip(&dst)
            .map(|(s, d)| {
                let p = best.apply_raw(s[0], s[1]);
                ((p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)).sqrt()
            })
            .collect();
        let mut sorted = residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let threshold = (2.0 * median).max(1e-12);
        let keep: Vec<usize> = (0..src.len())
            .filter(|&i| residuals[i] <= threshold)
            .collect();
        if keep.len() < 8 || keep.len() == src.len() {
            break;
        }
        src = keep.iter().map(|&i| src[i]).collect();
        dst = keep.iter().map(|&i| dst[i]).collect();
        residuals.clear();
        best = dlt_solve(&src, &dst)?;
    }
    Ok(best)
}

/// Backward global warp: output pixel `(x, y)` samples `img` at `h(x, y)`
/// with zero padding outside.
pub fn warp_global(img: &Image, h: &Homography, out_h: usize, out_w: usize) -> Image {
    let ch = img.channels();
    let mut coords = vec![[0.0f64; 2]; out_h * out_w];
    for_each_row(&mut coords, out_w, |y, row| {
        for (x, c) in row.iter_mut().enumerate() {
            *c = h.apply_raw(x as f64, y as f64);
        }
    });
    let mut data = vec![0.0f32; out_h * out_w * ch];
    for c in 0..ch {
        let plane = &mut data[c * out_h * out_w..(c + 1) * out_h * out_w];
        for_each_row(plane, out_w, |y, row| {
            for (x, v) in row.iter_mut().enumerate() {
                let p = coords[y * out_w + x];
                *v = img.sample_bilinear_channel(c, p[0], p[1]);
            }
        });
    }
    Image::from_vec(out_h, out_w, ch, data).expect("warp buffer sized to output")
}

/// Conjugates by the uniform scale `diag(s, s, 1)`: the result acts on
/// coordinates `s` times larger.
pub fn scale_adapt(h: &Homography, s: f64) -> Result<Homography> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale ratio must be positive, got {s}"
        )));
    }
    scale_adapt_xy(h, s, s)
}

/// Anisotropic variant of [`scale_adapt`] for non-square resizes.
pub fn scale_adapt_xy(h: &Homography, sx: f64, sy: f64) -> Result<Homography> {
    let s = Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0);
    let s_inv = Matrix3::new(1.0 / sx, 0.0, 0.0, 0.0, 1.0 / sy, 0.0, 0.0, 0.0, 1.0);
    Homography::from_matrix(s * h.m * s_inv)
}

/// Affine change of coordinates `p_outer = diag(sx, sy) * p_inner + t`,
/// used to lift feature-grid homographies to image pixels.
pub fn affine_conjugate(h: &Homography, sx: f64, sy: f64, tx: f64, ty: f64) -> Result<Homography> {
    let a = Matrix3::new(sx, 0.0, tx, 0.0, sy, ty, 0.0, 0.0, 1.0);
    let a_inv = a.try_inverse().ok_or(Error::NotInvertible)?;
    Homography::from_matrix(a * h.m * a_inv)
}

/// Max corner transfer distance between two homographies over a rectangle.
pub fn corner_transfer_error(a: &Homography, b: &Homography, rect: &Rect) -> f64 {
    rect.corners()
        .iter()
        .map(|&c| {
            let pa = a.apply_raw(c[0], c[1]);
            let pb = b.apply_raw(c[0], c[1]);
            ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> [[f64; 2]; 4] {
        Rect::of_size(1.0, 1.0).corners()
    }

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        (z ^ (z >> 31)) as f64 / u64::MAX as f64
    }

    fn smooth_image(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |y, x, _| {
            0.5 + 0.2 * (x as f32 / 5.0).sin() * (y as f32 / 6.0).sin()
                + 0.15 * ((x + 2 * y) as f32 / 11.0).cos()
        })
    }

    #[test]
    fn dlt_identity_for_equal_points() {
        let pts = unit_square();
        let h = dlt_solve(&pts, &pts).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((h.matrix()[(r, c)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dlt_pure_translation() {
        let src = unit_square();
        let dst: Vec<_> = src.iter().map(|p| [p[0] + 2.0, p[1] + 3.0]).collect();
        let h = dlt_solve(&src, &dst).unwrap();
        assert!((h.matrix()[(0, 2)] - 2.0).abs() < 1e-9);
        assert!((h.matrix()[(1, 2)] - 3.0).abs() < 1e-9);
        assert!((h.matrix()[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dlt_four_point_exact_interpolation() {
        let mut state = 7u64;
        for _ in 0..100 {
            let src = Rect::of_size(128.0, 128.0).corners();
            let dst: Vec<_> = src
                .iter()
                .map(|p| {
                    [
                        p[0] + 64.0 * (splitmix(&mut state) - 0.5),
                        p[1] + 64.0 * (splitmix(&mut state) - 0.5),
                    ]
                })
                .collect();
            let h = match dlt_solve(&src, &dst) {
                Ok(h) => h,
                // Rare degenerate draws are allowed.
                Err(Error::Degenerate(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            for (s, d) in src.iter().zip(&dst) {
                let p = h.apply(*s).unwrap();
                let err = ((p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)).sqrt();
                assert!(err < 1e-8, "residual {err}");
            }
        }
    }

    #[test]
    fn dlt_rejects_collinear_configuration() {
        let src = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let dst = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        assert!(matches!(dlt_solve(&src, &dst), Err(Error::Degenerate(_))));
    }

    #[test]
    fn dlt_least_squares_recovers_generating_homography() {
        let gt = from_4pt(
            &FourPtMotion::new([[3.0, -2.0], [-1.0, 2.5], [2.0, 1.0], [-2.0, -1.5]]),
            &Rect::of_size(32.0, 32.0),
        )
        .unwrap();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for y in 0..6 {
            for x in 0..6 {
                let p = [x as f64 * 6.0, y as f64 * 6.0];
                src.push(p);
                dst.push(gt.apply(p).unwrap());
            }
        }
        let h = dlt_solve(&src, &dst).unwrap();
        assert!(corner_transfer_error(&h, &gt, &Rect::of_size(32.0, 32.0)) < 1e-8);
    }

    #[test]
    fn dlt_is_invariant_to_input_scaling() {
        let src = Rect::of_size(128.0, 128.0).corners();
        let dst = [[4.0, -3.0], [120.0, 6.0], [-5.0, 131.0], [140.0, 122.0]];
        let h = dlt_solve(&src, &dst).unwrap();
        let src10: Vec<_> = src.iter().map(|p| [10.0 * p[0], 10.0 * p[1]]).collect();
        let dst10: Vec<_> = dst.iter().map(|p| [10.0 * p[0], 10.0 * p[1]]).collect();
        let h10 = dlt_solve(&src10, &dst10).unwrap();
        let back = scale_adapt(&h10, 0.1).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((back.matrix()[(r, c)] - h.matrix()[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn apply_identity_scale_and_inverse() {
        let id = Homography::identity();
        assert_eq!(id.apply([3.0, 4.0]).unwrap(), [3.0, 4.0]);

        let scale = Homography::from_matrix(Matrix3::new(
            2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0,
        ))
        .unwrap();
        assert_eq!(scale.apply([3.0, 4.0]).unwrap(), [6.0, 8.0]);

        let h = from_4pt(
            &FourPtMotion::new([[2.0, 1.0], [-1.0, 3.0], [0.5, -2.0], [1.5, 0.5]]),
            &Rect::of_size(64.0, 64.0),
        )
        .unwrap();
        let h_inv = h.inverse().unwrap();
        for p in [[5.0, 9.0], [30.0, 20.0], [60.0, 55.0]] {
            let q = h_inv.apply(h.apply(p).unwrap()).unwrap();
            assert!(((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt() < 1e-9);
        }
    }

    #[test]
    fn apply_detects_line_at_infinity() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.01, 0.0, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        assert!(matches!(
            h.apply([-100.0, 0.0]),
            Err(Error::PointAtInfinity)
        ));
    }

    #[test]
    fn four_pt_zero_motion_is_identity() {
        let h = from_4pt(&FourPtMotion::zero(), &Rect::of_size(128.0, 128.0)).unwrap();
        assert!(corner_transfer_error(&h, &Homography::identity(), &Rect::of_size(128.0, 128.0)) < 1e-9);
    }

    #[test]
    fn four_pt_uniform_motion_is_translation() {
        let h = from_4pt(
            &FourPtMotion::new([[3.0, 4.0]; 4]),
            &Rect::of_size(100.0, 50.0),
        )
        .unwrap();
        assert!((h.matrix()[(0, 2)] - 3.0).abs() < 1e-9);
        assert!((h.matrix()[(1, 2)] - 4.0).abs() < 1e-9);
        assert!((h.matrix()[(0, 1)]).abs() < 1e-12);
    }

    #[test]
    fn four_pt_round_trip() {
        let rect = Rect::of_size(128.0, 128.0);
        let mut state = 11u64;
        for _ in 0..200 {
            let mut motions = [[0.0; 2]; 4];
            for m in &mut motions {
                m[0] = 32.0 * (2.0 * splitmix(&mut state) - 1.0);
                m[1] = 32.0 * (2.0 * splitmix(&mut state) - 1.0);
            }
            let fm = FourPtMotion::new(motions);
            let h = match from_4pt(&fm, &rect) {
                Ok(h) => h,
                Err(_) => continue,
            };
            let back = to_4pt(&h, &rect).unwrap();
            for (a, b) in back.motions.iter().zip(&fm.motions) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fit_flow_recovers_synthesized_homography() {
        let gt = from_4pt(
            &FourPtMotion::new([[1.5, -0.8], [-1.2, 0.9], [0.7, 1.3], [-0.5, -1.1]]),
            &Rect::of_size(16.0, 16.0),
        )
        .unwrap();
        let (h, w) = (16, 16);
        let mut dx = vec![0.0; h * w];
        let mut dy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = gt.apply([x as f64, y as f64]).unwrap();
                dx[y * w + x] = p[0] - x as f64;
                dy[y * w + x] = p[1] - y as f64;
            }
        }
        let flow = FlowField::from_components(h, w, dx, dy).unwrap();
        let fitted = fit_flow(&flow, None, false).unwrap();
        assert!(corner_transfer_error(&fitted, &gt, &Rect::of_size(16.0, 16.0)) < 1e-6);
    }

    #[test]
    fn fit_flow_zero_flow_is_identity() {
        let flow = FlowField::from_components(8, 8, vec![0.0; 64], vec![0.0; 64]).unwrap();
        let h = fit_flow(&flow, None, true).unwrap();
        assert!(corner_transfer_error(&h, &Homography::identity(), &Rect::of_size(8.0, 8.0)) < 1e-9);
    }

    #[test]
    fn fit_flow_robust_survives_outliers() {
        let gt = from_4pt(
            &FourPtMotion::new([[0.9, 0.4], [-0.6, 1.0], [0.3, -0.8], [-1.0, 0.2]]),
            &Rect::of_size(16.0, 16.0),
        )
        .unwrap();
        let (h, w) = (16, 16);
        let mut dx = vec![0.0; h * w];
        let mut dy = vec![0.0; h * w];
        let mut state = 99u64;
        for y in 0..h {
            for x in 0..w {
                let p = gt.apply([x as f64, y as f64]).unwrap();
                dx[y * w + x] = p[0] - x as f64;
                dy[y * w + x] = p[1] - y as f64;
            }
        }
        // 10% outlier cells of magnitude 20.
        let n_out = h * w / 10;
        for _ in 0..n_out {
            let i = (splitmix(&mut state) * (h * w) as f64) as usize % (h * w);
            dx[i] += 20.0 * (if splitmix(&mut state) > 0.5 { 1.0 } else { -1.0 });
            dy[i] += 20.0 * (if splitmix(&mut state) > 0.5 { 1.0 } else { -1.0 });
        }
        let flow = FlowField::from_components(h, w, dx, dy).unwrap();
        let fitted = fit_flow(&flow, None, true).unwrap();
        let err = corner_transfer_error(&fitted, &gt, &Rect::of_size(16.0, 16.0));
        assert!(err < 0.1, "corner transfer error {err}");
    }

    #[test]
    fn fit_flow_needs_eight_valid_cells() {
        let flow = FlowField::from_components(3, 3, vec![0.0; 9], vec![0.0; 9]).unwrap();
        let mut mask = vec![false; 9];
        mask[..7].fill(true);
        assert!(matches!(
            fit_flow(&flow, Some(&mask), false),
            Err(Error::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn warp_global_identity_preserves_image() {
        let img = smooth_image(16, 16);
        let out = warp_global(&img, &Homography::identity(), 16, 16);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn warp_global_translation_shifts_columns() {
        let img = smooth_image(8, 8);
        let t = Homography::from_matrix(Matrix3::new(
            1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0,
        ))
        .unwrap();
        let out = warp_global(&img, &t, 8, 8);
        for y in 0..8 {
            for x in 0..7 {
                assert!((out.get(y, x, 0) - img.get(y, x + 1, 0)).abs() < 1e-6);
            }
            assert_eq!(out.get(y, 7, 0), 0.0);
        }
    }

    #[test]
    fn warp_round_trip_recovers_interior() {
        let img = smooth_image(64, 64);
        let h = from_4pt(
            &FourPtMotion::new([[2.0, 1.0], [-1.5, 2.0], [1.0, -2.0], [-2.0, -1.0]]),
            &Rect::of_size(64.0, 64.0),
        )
        .unwrap();
        let fwd = warp_global(&img, &h, 64, 64);
        let back = warp_global(&fwd, &h.inverse().unwrap(), 64, 64);
        for y in 8..56 {
            for x in 8..56 {
                let d = (back.get(y, x, 0) - img.get(y, x, 0)).abs();
                assert!(d <= 2.0 / 255.0, "({y},{x}): {d}");
            }
        }
    }

    #[test]
    fn scale_adapt_identity_and_translation() {
        let id = scale_adapt(&Homography::identity(), 4.0).unwrap();
        assert!(corner_transfer_error(&id, &Homography::identity(), &Rect::of_size(10.0, 10.0)) < 1e-12);

        let t = from_4pt(&FourPtMotion::new([[2.0, -1.0]; 4]), &Rect::of_size(8.0, 8.0)).unwrap();
        let t4 = scale_adapt(&t, 4.0).unwrap();
        assert!((t4.matrix()[(0, 2)] - 8.0).abs() < 1e-9);
        assert!((t4.matrix()[(1, 2)] + 4.0).abs() < 1e-9);
    }

    #[test]
    fn scale_adapt_consistent_with_resampled_warp() {
        let small = smooth_image(32, 32);
        let big = small.resize_bilinear(64, 64).unwrap();
        let h = from_4pt(
            &FourPtMotion::new([[1.0, 0.5], [-0.8, 1.0], [0.5, -1.0], [-1.0, -0.5]]),
            &Rect::of_size(32.0, 32.0),
        )
        .unwrap();
        let warped_small = warp_global(&small, &h, 32, 32).resize_bilinear(64, 64).unwrap();
        let warped_big = warp_global(&big, &scale_adapt(&h, 2.0).unwrap(), 64, 64);
        for y in 8..56 {
            for x in 8..56 {
                let d = (warped_small.get(y, x, 0) - warped_big.get(y, x, 0)).abs();
                assert!(d <= 3.0 / 255.0, "({y},{x}): {d}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let h = from_4pt(
            &FourPtMotion::new([[2.0, 1.0], [-1.0, 3.0], [0.5, -2.0], [1.5, 0.5]]),
            &Rect::of_size(64.0, 64.0),
        )
        .unwrap();
        let back = Homography::from_text(&h.to_text()).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((h.matrix()[(r, c)] - back.matrix()[(r, c)]).abs() < 1e-15);
            }
        }
        assert!(Homography::from_text("1 2 3").is_err());
    }
}
