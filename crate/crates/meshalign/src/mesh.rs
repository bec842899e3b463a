//! Backward multi-grid deformation.
//!
//! The mesh lives on the warped-target canvas: a regular `U x V` grid of
//! cells whose vertices are moved into target-image coordinates. Because
//! the canvas-side grid stays regular, each output pixel finds its cell by
//! floor division, takes that cell's homography (canvas rectangle to mesh
//! quad), and samples the target image backward.

use crate::error::{Error, Result};
use crate::homography::{dlt_solve, Homography, Rect};
use crate::imaging::Image;
use crate::parallel::for_each_row;

const CONVEXITY_TOL: f64 = 1e-9;

/// A `(U+1) x (V+1)` vertex grid in target-image coordinates attached to a
/// regular canvas grid of extent `canvas_w x canvas_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    cell_rows: usize,
    cell_cols: usize,
    canvas_h: usize,
    canvas_w: usize,
    vertices: Vec<[f64; 2]>,
}

impl Mesh {
    pub fn cell_rows(&self) -> usize {
        self.cell_rows
    }

    pub fn cell_cols(&self) -> usize {
        self.cell_cols
    }

    pub fn vertex_rows(&self) -> usize {
        self.cell_rows + 1
    }

    pub fn vertex_cols(&self) -> usize {
        self.cell_cols + 1
    }

    pub fn canvas_height(&self) -> usize {
        self.canvas_h
    }

    pub fn canvas_width(&self) -> usize {
        self.canvas_w
    }

    #[inline]
    pub fn vertex(&self, i: usize, j: usize) -> [f64; 2] {
        self.vertices[i * (self.cell_cols + 1) + j]
    }

    #[inline]
    pub fn set_vertex(&mut self, i: usize, j: usize, v: [f64; 2]) {
        self.vertices[i * (self.cell_cols + 1) + j] = v;
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn vertices_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.vertices
    }

    /// Cell quad in TL, TR, BL, BR order.
    pub fn cell_quad(&self, row: usize, col: usize) -> [[f64; 2]; 4] {
        [
            self.vertex(row, col),
            self.vertex(row, col + 1),
            self.vertex(row + 1, col),
            self.vertex(row + 1, col + 1),
        ]
    }

    /// The regular canvas rectangle backing cell `(row, col)`.
    pub fn cell_canvas_rect(&self, row: usize, col: usize) -> Rect {
        let cw = self.canvas_w as f64 / self.cell_cols as f64;
        let ch = self.canvas_h as f64 / self.cell_rows as f64;
        Rect::new(col as f64 * cw, row as f64 * ch, cw, ch)
    }

    /// Canvas pixel rows and columns owned by cell `(row, col)` under the
    /// warp's floor partition.
    pub fn cell_pixel_range(
        &self,
        row: usize,
        col: usize,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (u, v) = (self.cell_rows, self.cell_cols);
        let y_lo = (row * self.canvas_h).div_ceil(u);
        let y_hi = ((row + 1) * self.canvas_h).div_ceil(u).min(self.canvas_h);
        let x_lo = (col * self.canvas_w).div_ceil(v);
        let x_hi = ((col + 1) * self.canvas_w).div_ceil(v).min(self.canvas_w);
        (y_lo..y_hi, x_lo..x_hi)
    }

    /// Strict convexity and positive orientation of every cell quad;
    /// violation reports the first offending cell.
    pub fn validate(&self) -> Result<()> {
        for r in 0..self.cell_rows {
            for c in 0..self.cell_cols {
                if !quad_is_convex(&self.cell_quad(r, c)) {
                    return Err(Error::InvalidMesh(format!(
                        "cell ({r}, {c}) is not strictly convex and positively oriented"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Rescales to a new canvas extent while scaling vertex (target-space)
    /// coordinates by the given per-axis ratios. Pass the canvas ratios as
    /// `target_sx`/`target_sy` when both images rescale together.
    pub fn rescaled(
        &self,
        canvas_h: usize,
        canvas_w: usize,
        target_sx: f64,
        target_sy: f64,
    ) -> Mesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| [v[0] * target_sx, v[1] * target_sy])
            .collect();
        Mesh {
            cell_rows: self.cell_rows,
            cell_cols: self.cell_cols,
            canvas_h,
            canvas_w,
            vertices,
        }
    }

    /// Plain-text form: header `U V canvas_h canvas_w`, then one `x y` line
    /// per vertex in row-major order.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.cell_rows, self.cell_cols, self.canvas_h, self.canvas_w
        );
        for v in &self.vertices {
            s.push_str(&format!("{:.17e} {:.17e}\n", v[0], v[1]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let bad = |m: &str| Error::InvalidParameter(format!("mesh text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("malformed header"))?;
        if head.len() != 4 {
            return Err(bad("header needs U V canvas_h canvas_w"));
        }
        let (u, v, canvas_h, canvas_w) = (head[0], head[1], head[2], head[3]);
        if u == 0 || v == 0 {
            return Err(bad("zero grid counts"));
        }
        let mut vertices = Vec::with_capacity((u + 1) * (v + 1));
        for line in lines {
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("malformed vertex"))?;
            if nums.len() != 2 {
                return Err(bad("vertex needs x y"));
            }
            vertices.push([nums[0], nums[1]]);
        }
        if vertices.len() != (u + 1) * (v + 1) {
            return Err(bad("vertex count does not match grid"));
        }
        Ok(Mesh {
            cell_rows: u,
            cell_cols: v,
            canvas_h,
            canvas_w,
            vertices,
        })
    }
}

/// Cross-product convexity test on the cycle TL -> TR -> BR -> BL; with y
/// down, every turn of a positively oriented convex quad has positive z.
fn quad_is_convex(quad: &[[f64; 2]; 4]) -> bool {
    let cycle = [quad[0], quad[1], quad[3], quad[2]];
    for i in 0..4 {
        let a = cycle[i];
        let b = cycle[(i + 1) % 4];
        let c = cycle[(i + 2) % 4];
        let e1 = [b[0] - a[0], b[1] - a[1]];
        let e2 = [c[0] - b[0], c[1] - b[1]];
        let cross = e1[0] * e2[1] - e1[1] * e2[0];
        if cross <= CONVEXITY_TOL {
            return false;
        }
    }
    true
}

/// Regular mesh with vertices at exact uniform spacing covering
/// `[0, canvas_w] x [0, canvas_h]`.
pub fn regular_mesh(u: usize, v: usize, canvas_h: usize, canvas_w: usize) -> Result<Mesh> {
    if u == 0 || v == 0 {
        return Err(Error::InvalidParameter("grid counts must be >= 1".into()));
    }
    if canvas_h == 0 || canvas_w == 0 {
        return Err(Error::InvalidParameter("canvas must be nonempty".into()));
    }
    let mut vertices = Vec::with_capacity((u + 1) * (v + 1));
    for i in 0..=u {
        for j in 0..=v {
            vertices.push([
                j as f64 * canvas_w as f64 / v as f64,
                i as f64 * canvas_h as f64 / u as f64,
            ]);
        }
    }
    Ok(Mesh {
        cell_rows: u,
        cell_cols: v,
        canvas_h,
        canvas_w,
        vertices,
    })
}

/// Maps every regular vertex through `h` (canvas to target direction).
pub fn mesh_from_homography(
    h: &Homography,
    u: usize,
    v: usize,
    canvas_h: usize,
    canvas_w: usize,
) -> Result<Mesh> {
    let mut mesh = regular_mesh(u, v, canvas_h, canvas_w)?;
    for vert in mesh.vertices.iter_mut() {
        *vert = h.apply(*vert)?;
    }
    Ok(mesh)
}

/// Homography of one cell: canvas rectangle corners to mesh quad, so it
/// maps canvas coordinates into the target image.
pub fn cell_homography(mesh: &Mesh, row: usize, col: usize) -> Result<Homography> {
    let rect = mesh.cell_canvas_rect(row, col);
    dlt_solve(&rect.corners(), &mesh.cell_quad(row, col))
}

/// All `U * V` cell homographies, row-major.
fn cell_homographies(mesh: &Mesh) -> Result<Vec<Homography>> {
    let mut hs = Vec::with_capacity(mesh.cell_rows * mesh.cell_cols);
    for r in 0..mesh.cell_rows {
        for c in 0..mesh.cell_cols {
            hs.push(cell_homography(mesh, r, c)?);
        }
    }
    Ok(hs)
}

/// Backward multi-grid warp: each output pixel locates its regular cell by
/// floor division, maps through that cell's homography, and samples `img`
/// bilinearly. The output has the canvas extent.
pub fn warp_mesh(img: &Image, mesh: &Mesh) -> Result<Image> {
    mesh.validate()?;
    let hs = cell_homographies(mesh)?;
    let (out_h, out_w) = (mesh.canvas_h, mesh.canvas_w);
    let (u, v) = (mesh.cell_rows, mesh.cell_cols);

    let mut coords = vec![[0.0f64; 2]; out_h * out_w];
    for_each_row(&mut coords, out_w, |y, row| {
        // Exact floor division keeps the pixel-to-cell partition integral.
        let r = (y * u / out_h).min(u - 1);
        for (x, cd) in row.iter_mut().enumerate() {
            let c = (x * v / out_w).min(v - 1);
            *cd = hs[r * v + c].apply_raw(x as f64, y as f64);
        }
    });

    let ch = img.channels();
    let mut data = vec![0.0f32; out_h * out_w * ch];
    for c in 0..ch {
        let plane = &mut data[c * out_h * out_w..(c + 1) * out_h * out_w];
        for_each_row(plane, out_w, |y, row| {
            for (x, out) in row.iter_mut().enumerate() {
                let p = coords[y * out_w + x];
                *out = img.sample_bilinear_channel(c, p[0], p[1]);
            }
        });
    }
    Image::from_vec(out_h, out_w, ch, data)
}

/// Per-pixel overlap validity weight: [`warp_mesh`] applied to an all-one
/// image of the target's size. Values stay in `[0, 1]`.
pub fn warp_mask(mesh: &Mesh, target_h: usize, target_w: usize) -> Result<Image> {
    warp_mesh(&Image::constant(target_h, target_w, 1, 1.0), mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homography::{from_4pt, FourPtMotion};

    fn mild_homography(seed: u64, size: f64, amp: f64) -> Homography {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let mut motions = [[0.0; 2]; 4];
        for m in &mut motions {
            m[0] = amp * (2.0 * next() - 1.0);
            m[1] = amp * (2.0 * next() - 1.0);
        }
        from_4pt(&FourPtMotion::new(motions), &Rect::of_size(size, size)).unwrap()
    }

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |y, x, _| {
            0.5 + 0.22 * (x as f32 / 5.0).sin() * (y as f32 / 6.0).sin()
                + 0.18 * ((2 * x + 3 * y) as f32 / 13.0).cos()
        })
    }

    #[test]
    fn regular_mesh_corners_and_spacing() {
        let m = regular_mesh(1, 1, 100, 100).unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.vertex(0, 0), [0.0, 0.0]);
        assert_eq!(m.vertex(0, 1), [100.0, 0.0]);
        assert_eq!(m.vertex(1, 0), [0.0, 100.0]);
        assert_eq!(m.vertex(1, 1), [100.0, 100.0]);

        let m8 = regular_mesh(8, 8, 100, 100).unwrap();
        assert_eq!(m8.vertices().len(), 81);
        assert!((m8.vertex(3, 5)[0] - 5.0 * 12.5).abs() < 1e-12);
        assert!((m8.vertex(3, 5)[1] - 3.0 * 12.5).abs() < 1e-12);
        assert!(m8.is_valid());
    }

    #[test]
    fn regular_mesh_rejects_zero_counts() {
        assert!(regular_mesh(0, 4, 10, 10).is_err());
        assert!(regular_mesh(4, 0, 10, 10).is_err());
    }

    #[test]
    fn mesh_from_identity_is_regular() {
        let m = mesh_from_homography(&Homography::identity(), 4, 4, 64, 64).unwrap();
        assert_eq!(m, regular_mesh(4, 4, 64, 64).unwrap());
    }

    #[test]
    fn mesh_from_homography_matches_pointwise_apply() {
        let h = mild_homography(3, 64.0, 5.0);
        let m = mesh_from_homography(&h, 4, 4, 64, 64).unwrap();
        let reg = regular_mesh(4, 4, 64, 64).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = h.apply(reg.vertex(i, j)).unwrap();
                let got = m.vertex(i, j);
                assert!((got[0] - expect[0]).abs() < 1e-12);
                assert!((got[1] - expect[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mesh_from_homography_detects_vertex_at_infinity() {
        // Perspective row makes the denominator vanish at x = 100.
        let m = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.01, 0.0, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        assert!(matches!(
            mesh_from_homography(&h, 2, 2, 200, 200),
            Err(Error::PointAtInfinity)
        ));
    }

    #[test]
    fn cell_homography_of_regular_mesh_is_identity() {
        let m = regular_mesh(3, 5, 60, 100).unwrap();
        for r in 0..3 {
            for c in 0..5 {
                let h = cell_homography(&m, r, c).unwrap();
                let rect = m.cell_canvas_rect(r, c);
                assert!(
                    crate::homography::corner_transfer_error(&h, &Homography::identity(), &rect)
                        < 1e-9
                );
            }
        }
    }

    #[test]
    fn cell_homographies_reproduce_global_homography() {
        let h = mild_homography(17, 64.0, 4.0);
        let m = mesh_from_homography(&h, 8, 8, 64, 64).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let hc = cell_homography(&m, r, c).unwrap();
                let rect = m.cell_canvas_rect(r, c);
                let err = crate::homography::corner_transfer_error(&hc, &h, &rect);
                assert!(err < 1e-8, "cell ({r},{c}): {err}");
            }
        }
    }

    #[test]
    fn cell_homography_agrees_with_closed_form_square_to_quad() {
        // Heckbert's unit-square-to-quad projective mapping as an
        // independent second route.
        let h = mild_homography(29, 32.0, 3.0);
        let m = mesh_from_homography(&h, 2, 2, 32, 32).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let quad = m.cell_quad(r, c);
                let (q00, q10, q01, q11) = (quad[0], quad[1], quad[2], quad[3]);
                let sx = q00[0] - q10[0] + q11[0] - q01[0];
                let sy = q00[1] - q10[1] + q11[1] - q01[1];
                let unit_to_quad = if sx.abs() < 1e-12 && sy.abs() < 1e-12 {
                    nalgebra::Matrix3::new(
                        q10[0] - q00[0],
                        q01[0] - q00[0],
                        q00[0],
                        q10[1] - q00[1],
                        q01[1] - q00[1],
                        q00[1],
                        0.0,
                        0.0,
                        1.0,
                    )
                } else {
                    let dx1 = q10[0] - q11[0];
                    let dx2 = q01[0] - q11[0];
                    let dy1 = q10[1] - q11[1];
                    let dy2 = q01[1] - q11[1];
                    let den = dx1 * dy2 - dx2 * dy1;
                    let g = (sx * dy2 - sy * dx2) / den;
                    let hh = (dx1 * sy - dy1 * sx) / den;
                    nalgebra::Matrix3::new(
                        q10[0] - q00[0] + g * q10[0],
                        q01[0] - q00[0] + hh * q01[0],
                        q00[0],
                        q10[1] - q00[1] + g * q10[1],
                        q01[1] - q00[1] + hh * q01[1],
                        q00[1],
                        g,
                        hh,
                        1.0,
                    )
                };
                // Rect -> unit square affine, then unit square -> quad.
                let rect = m.cell_canvas_rect(r, c);
                let to_unit = nalgebra::Matrix3::new(
                    1.0 / rect.width,
                    0.0,
                    -rect.x / rect.width,
                    0.0,
                    1.0 / rect.height,
                    -rect.y / rect.height,
                    0.0,
                    0.0,
                    1.0,
                );
                let closed = Homography::from_matrix(unit_to_quad * to_unit).unwrap();
                let dlt = cell_homography(&m, r, c).unwrap();
                let err = crate::homography::corner_transfer_error(&dlt, &closed, &rect);
                assert!(err < 1e-8, "cell ({r},{c}): {err}");
            }
        }
    }

    #[test]
    fn cell_homography_rejects_degenerate_quad() {
        let mut m = regular_mesh(2, 2, 32, 32).unwrap();
        // Collapse one cell: move a corner onto the diagonal's far corner.
        let far = m.vertex(1, 1);
        m.set_vertex(0, 0, far);
        assert!(cell_homography(&m, 0, 0).is_err());
    }

    #[test]
    fn warp_mesh_with_regular_mesh_is_identity() {
        let img = textured(32, 32);
        let m = regular_mesh(4, 4, 32, 32).unwrap();
        let out = warp_mesh(&img, &m).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn warp_mesh_matches_warp_global_for_projective_meshes() {
        let img = textured(64, 64);
        for seed in 0..6u64 {
            let h = mild_homography(40 + seed, 64.0, 5.0);
            let mesh = mesh_from_homography(&h, 8, 8, 64, 64).unwrap();
            let via_mesh = warp_mesh(&img, &mesh).unwrap();
            let via_global = crate::homography::warp_global(&img, &h, 64, 64);
            let max_err = via_mesh
                .data()
                .iter()
                .zip(via_global.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err < 1e-5, "seed {seed}: {max_err}");
        }
    }

    #[test]
    fn displacing_one_vertex_only_affects_incident_cells() {
        let img = textured(64, 64);
        let base = regular_mesh(4, 4, 64, 64).unwrap();
        let mut moved = base.clone();
        let mut v = moved.vertex(2, 2);
        v[0] += 3.0;
        v[1] -= 2.0;
        moved.set_vertex(2, 2, v);

        let out_base = warp_mesh(&img, &base).unwrap();
        let out_moved = warp_mesh(&img, &moved).unwrap();
        // Incident cells are rows 1..=2, cols 1..=2: canvas region
        // [16, 48) x [16, 48).
        for y in 0..64 {
            for x in 0..64 {
                let inside = (16..48).contains(&y) && (16..48).contains(&x);
                let d = (out_base.get(y, x, 0) - out_moved.get(y, x, 0)).abs();
                if !inside {
                    assert_eq!(d, 0.0, "({y},{x}) outside incident cells changed");
                }
            }
        }
        let changed = out_base
            .data()
            .iter()
            .zip(out_moved.data())
            .any(|(a, b)| a != b);
        assert!(changed);
    }

    #[test]
    fn warp_mesh_reports_invalid_mesh() {
        let mut m = regular_mesh(2, 2, 32, 32).unwrap();
        // Fold the center vertex far past a neighbor to self-intersect.
        m.set_vertex(1, 1, [-40.0, -40.0]);
        assert!(!m.is_valid());
        let img = textured(32, 32);
        assert!(matches!(warp_mesh(&img, &m), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn warp_mask_identity_and_translation() {
        let m = regular_mesh(4, 4, 32, 32).unwrap();
        let mask = warp_mask(&m, 32, 32).unwrap();
        for &v in mask.data() {
            assert!((v - 1.0).abs() < 1e-6);
        }

        let t = Homography::from_matrix(nalgebra::Matrix3::new(
            1.0, 0.0, 10.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0,
        ))
        .unwrap();
        let mt = mesh_from_homography(&t.inverse().unwrap(), 4, 4, 32, 32).unwrap();
        // Canvas pixel x samples target at x - 10: the first 10 columns
        // fall outside the target.
        let mask_t = warp_mask(&mt, 32, 32).unwrap();
        for y in 0..32 {
            for x in 0..9 {
                assert!(mask_t.get(y, x, 0) < 1e-6, "({y},{x})");
            }
            for x in 11..32 {
                assert!((mask_t.get(y, x, 0) - 1.0).abs() < 1e-6, "({y},{x})");
            }
        }
        for &v in mask_t.data() {
            assert!((-1e-7..=1.0 + 1e-7).contains(&(v as f64)));
        }
    }

    #[test]
    fn warp_mesh_is_deterministic() {
        let img = textured(48, 48);
        let h = mild_homography(77, 48.0, 4.0);
        let mesh = mesh_from_homography(&h, 8, 8, 48, 48).unwrap();
        let a = warp_mesh(&img, &mesh).unwrap();
        let b = warp_mesh(&img, &mesh).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn mesh_text_round_trip() {
        let h = mild_homography(5, 48.0, 3.0);
        let mesh = mesh_from_homography(&h, 3, 4, 48, 48).unwrap();
        let back = Mesh::from_text(&mesh.to_text()).unwrap();
        assert_eq!(mesh.cell_rows(), back.cell_rows());
        assert_eq!(mesh.cell_cols(), back.cell_cols());
        for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
        assert!(Mesh::from_text("2 2 10").is_err());
    }
}
