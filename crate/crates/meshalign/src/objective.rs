//! The unsupervised objective: content alignment loss, depth-level
//! partitioning, depth-aware shape-preserved loss, and the finite-difference
//! gradient that drives mesh refinement.
//!
//! The content term is the mean absolute difference between the
//! mask-weighted reference and the warped target over the whole canvas.
//! The shape term penalizes direction changes of cell-edge continuations
//! across adjacent cells, but only for cells at the same depth level.

use crate::error::{Error, Result};
use crate::homography::{warp_global, Homography};
use crate::imaging::{io, Image};
use crate::mesh::{cell_homography, warp_mask, warp_mesh, Mesh};
use crate::parallel::map_indices;

use std::path::Path;

/// Central-difference step for the mesh gradient, in pixels.
const FD_STEP: f64 = 1e-3;

/// Per-pixel relative depth of the target image, arbitrary positive units.
#[derive(Debug, Clone)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch("depth buffer length".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("depth values must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Reads a grayscale PGM/PNG (8- or 16-bit) and shifts values by one
    /// 8-bit step so they are strictly positive.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = io::load_gray_any(path)?;
        let data = img.data().iter().map(|v| v + 1.0 / 255.0).collect();
        Self::new(img.height(), img.width(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_constant(&self) -> bool {
        self.data.windows(2).all(|w| w[0] == w[1])
    }

    pub fn as_image(&self) -> Image {
        Image::from_vec(self.height, self.width, 1, self.data.clone())
            .expect("depth buffer matches dimensions")
    }

    pub fn resized(&self, height: usize, width: usize) -> Result<DepthMap> {
        let img = self.as_image().resize_bilinear(height, width)?;
        DepthMap::new(height, width, img.data().to_vec())
    }
}

/// Per-cell depth levels plus the horizontal and vertical consistency
/// masks derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDepthLevels {
    cell_rows: usize,
    cell_cols: usize,
    level_count: usize,
    labels: Vec<u32>,
}

impl GridDepthLevels {
    pub fn from_labels(
        cell_rows: usize,
        cell_cols: usize,
        level_count: usize,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if labels.len() != cell_rows * cell_cols {
            return Err(Error::ShapeMismatch("label count".into()));
        }
        if level_count == 0 || labels.iter().any(|&l| l as usize >= level_count) {
            return Err(Error::InvalidParameter("label outside level range".into()));
        }
        Ok(Self {
            cell_rows,
            cell_cols,
            level_count,
            labels,
        })
    }

    /// Single-level labels: every pair consistent.
    pub fn uniform(cell_rows: usize, cell_cols: usize) -> Self {
        Self {
            cell_rows,
            cell_cols,
            level_count: 1,
            labels: vec![0; cell_rows * cell_cols],
        }
    }

    pub fn cell_rows(&self) -> usize {
        self.cell_rows
    }

    pub fn cell_cols(&self) -> usize {
        self.cell_cols
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cell_cols + col]
    }

    /// True when cells `(row, col)` and `(row, col + 1)` share a level.
    pub fn hor_consistent(&self, row: usize, col: usize) -> bool {
        self.label(row, col) == self.label(row, col + 1)
    }

    /// True when cells `(row, col)` and `(row + 1, col)` share a level.
    pub fn ver_consistent(&self, row: usize, col: usize) -> bool {
        self.label(row, col) == self.label(row + 1, col)
    }
}

/// A layer's spatial transform: global homography or multi-grid mesh.
#[derive(Debug, Clone, Copy)]
pub enum Warp<'a> {
    Homography(&'a Homography),
    Mesh(&'a Mesh),
}

impl Warp<'_> {
    /// Warps `img` onto a `canvas_h x canvas_w` canvas. A mesh warp must
    /// already carry that canvas extent.
    pub fn warp(&self, img: &Image, canvas_h: usize, canvas_w: usize) -> Result<Image> {
        match self {
            Warp::Homography(h) => Ok(warp_global(img, h, canvas_h, canvas_w)),
            Warp::Mesh(m) => {
                if m.canvas_height() != canvas_h || m.canvas_width() != canvas_w {
                    return Err(Error::ShapeMismatch(format!(
                        "mesh canvas {}x{} vs requested {}x{}",
                        m.canvas_height(),
                        m.canvas_width(),
                        canvas_h,
                        canvas_w
                    )));
                }
                warp_mesh(img, m)
            }
        }
    }

    /// The warped all-one validity mask for a `target_h x target_w` source.
    pub fn mask(&self, target_h: usize, target_w: usize, canvas_h: usize, canvas_w: usize) -> Result<Image> {
        match self {
            Warp::Homography(h) => Ok(warp_global(
                &Image::constant(target_h, target_w, 1, 1.0),
                h,
                canvas_h,
                canvas_w,
            )),
            Warp::Mesh(m) => {
                if m.canvas_height() != canvas_h || m.canvas_width() != canvas_w {
                    return Err(Error::ShapeMismatch("mesh canvas extent".into()));
                }
                warp_mask(m, target_h, target_w)
            }
        }
    }
}

/// Weights of the full objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub omega: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 10.0,
            omega: [1.0, 4.0, 16.0],
        }
    }
}

/// Every term of one objective evaluation, with the weights echoed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub content_per_layer: [f64; 3],
    pub content_total: f64,
    pub shape: f64,
    pub objective_total: f64,
    pub weights: LossWeights,
}

/// Mean over all canvas pixels and channels of `|W(E) o I_r - W(I_t)|`.
/// The canvas is the reference image's extent.
pub fn content_loss_layer(i_r: &Image, i_t: &Image, warp: Warp<'_>) -> Result<f64> {
    if i_r.channels() != i_t.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} channels",
            i_r.channels(),
            i_t.channels()
        )));
    }
    let (ch, cw) = (i_r.height(), i_r.width());
    let mask = warp.mask(i_t.height(), i_t.width(), ch, cw)?;
    let warped = warp.warp(i_t, ch, cw)?;
    let mask_plane = mask.plane(0);
    let mut sum = 0.0f64;
    for c in 0..i_r.channels() {
        let rp = i_r.plane(c);
        let wp = warped.plane(c);
        for i in 0..ch * cw {
            sum += ((mask_plane[i] * rp[i] - wp[i]) as f64).abs();
        }
    }
    Ok(sum / (ch * cw * i_r.channels()) as f64)
}

/// Weighted sum of the three per-layer content losses.
pub fn content_loss_total(losses: [f64; 3], omega: [f64; 3]) -> f64 {
    omega[0] * losses[0] + omega[1] * losses[1] + omega[2] * losses[2]
}

/// Warps the depth map with the mesh, averages it per cell over pixels
/// whose mask exceeds 0.5, and bins the cell means into `m` equal-width
/// intervals over `[min, max]`. The maximum lands in level `m - 1`;
/// constant means collapse to level 0. Cells with no masked pixels
/// inherit the global masked mean.
pub fn grid_depth_levels(depth: &DepthMap, mesh: &Mesh, m: usize) -> Result<GridDepthLevels> {
    if m == 0 {
        return Err(Error::InvalidParameter("level count must be >= 1".into()));
    }
    let (u, v) = (mesh.cell_rows(), mesh.cell_cols());
    let warped = warp_mesh(&depth.as_image(), mesh)?;
    let mask = warp_mask(mesh, depth.height, depth.width)?;

    let mut sums = vec![0.0f64; u * v];
    let mut counts = vec![0usize; u * v];
    let wplane = warped.plane(0);
    let mplane = mask.plane(0);
    let (canvas_h, canvas_w) = (mesh.canvas_height(), mesh.canvas_width());
    for y in 0..canvas_h {
        let r = (y * u / canvas_h).min(u - 1);
        for x in 0..canvas_w {
            let m = mplane[y * canvas_w + x];
            if m > 0.5 {
                let c = (x * v / canvas_w).min(v - 1);
                // Dividing by the mask undoes the zero-padding attenuation
                // of partially overlapping border pixels.
                sums[r * v + c] += (wplane[y * canvas_w + x] / m) as f64;
                counts[r * v + c] += 1;
            }
        }
    }

    let total: f64 = sums.iter().sum();
    let total_count: usize = counts.iter().sum();
    let global_mean = if total_count > 0 {
        total / total_count as f64
    } else {
        0.0
    };
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { global_mean })
        .collect();

    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    // Relative threshold absorbs the f32 noise of the warp pipeline;
    // means this close are one depth plane.
    let labels = if span <= 1e-5 * max.abs().max(min.abs()).max(1e-12) {
        vec![0u32; u * v]
    } else {
        means
            .iter()
            .map(|&mean| {
                let t = ((mean - min) / span * m as f64) as usize;
                t.min(m - 1) as u32
            })
            .collect()
    };
    GridDepthLevels::from_labels(u, v, m, labels)
}

/// Which boundary two adjacent cells share.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    /// `quad_a` left of `quad_b`.
    Horizontal,
    /// `quad_a` above `quad_b`.
    Vertical,
}

#[inline]
fn abs_cosine(e1: [f64; 2], e2: [f64; 2]) -> Result<f64> {
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1]).sqrt();
    let n2 = (e2[0] * e2[0] + e2[1] * e2[1]).sqrt();
    if n1 < 1e-12 || n2 < 1e-12 {
        return Err(Error::Degenerate("zero-length cell edge".into()));
    }
    Ok(((e1[0] * e2[0] + e1[1] * e2[1]).abs() / (n1 * n2)).min(1.0))
}

/// Shape similarity of two adjacent cell quads (corners TL, TR, BL, BR):
/// `2 - |cos(e1, e2)| - |cos(e3, e4)|` over the two pairs of edges that
/// continue across the shared boundary. Zero iff both pairs are parallel.
pub fn edge_similarity(
    quad_a: &[[f64; 2]; 4],
    quad_b: &[[f64; 2]; 4],
    adjacency: Adjacency,
) -> Result<f64> {
    let sub = |p: [f64; 2], q: [f64; 2]| [p[0] - q[0], p[1] - q[1]];
    let (e1, e2, e3, e4) = match adjacency {
        // Top edges continue through the shared vertical boundary, as do
        // the bottom edges.
        Adjacency::Horizontal => (
            sub(quad_a[1], quad_a[0]),
            sub(quad_b[1], quad_b[0]),
            sub(quad_a[3], quad_a[2]),
            sub(quad_b[3], quad_b[2]),
        ),
        // Left and right edges continue through the shared horizontal one.
        Adjacency::Vertical => (
            sub(quad_a[2], quad_a[0]),
            sub(quad_b[2], quad_b[0]),
            sub(quad_a[3], quad_a[1]),
            sub(quad_b[3], quad_b[1]),
        ),
    };
    Ok(2.0 - abs_cosine(e1, e2)? - abs_cosine(e3, e4)?)
}

/// Depth-aware shape-preserved loss: the masked mean of edge similarities
/// over horizontally and vertically adjacent cell pairs at the same depth
/// level. Pairs at different levels contribute nothing.
pub fn shape_loss(mesh: &Mesh, levels: &GridDepthLevels) -> Result<f64> {
    let (u, v) = (mesh.cell_rows(), mesh.cell_cols());
    if levels.cell_rows() != u || levels.cell_cols() != v {
        return Err(Error::ShapeMismatch(format!(
            "levels {}x{} vs mesh {}x{}",
            levels.cell_rows(),
            levels.cell_cols(),
            u,
            v
        )));
    }
    let mut total = 0.0f64;
    if v > 1 {
        let mut hor = 0.0f64;
        for r in 0..u {
            for c in 0..v - 1 {
                if levels.hor_consistent(r, c) {
                    hor += edge_similarity(
                        &mesh.cell_quad(r, c),
                        &mesh.cell_quad(r, c + 1),
                        Adjacency::Horizontal,
                    )?;
                }
            }
        }
        total += hor / (u * (v - 1)) as f64;
    }
    if u > 1 {
        let mut ver = 0.0f64;
        for r in 0..u - 1 {
            for c in 0..v {
                if levels.ver_consistent(r, c) {
                    ver += edge_similarity(
                        &mesh.cell_quad(r, c),
                        &mesh.cell_quad(r + 1, c),
                        Adjacency::Vertical,
                    )?;
                }
            }
        }
        total += ver / ((u - 1) * v) as f64;
    }
    Ok(total)
}

/// Assembles the full objective `L = lambda * L_content + mu * L_shape`
/// from per-layer warps. The shape term applies when the third layer's
/// warp is a mesh; depth levels come from `depth` (all cells share one
/// level when it is absent).
pub fn objective(
    i_r: &Image,
    i_t: &Image,
    warps: &[Warp<'_>; 3],
    depth: Option<&DepthMap>,
    m_levels: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut content_per_layer = [0.0f64; 3];
    for (slot, warp) in content_per_layer.iter_mut().zip(warps) {
        *slot = content_loss_layer(i_r, i_t, *warp)?;
    }
    let content_total = content_loss_total(content_per_layer, weights.omega);
    let shape = match warps[2] {
        Warp::Mesh(mesh) => {
            let levels = match depth {
                Some(d) => grid_depth_levels(d, mesh, m_levels)?,
                None => GridDepthLevels::uniform(mesh.cell_rows(), mesh.cell_cols()),
            };
            shape_loss(mesh, &levels)?
        }
        // A global homography keeps every line straight, so the shape
        // term vanishes identically.
        Warp::Homography(_) => 0.0,
    };
    let objective_total = weights.lambda * content_total + weights.mu * shape;
    Ok(LossBreakdown {
        content_per_layer,
        content_total,
        shape,
        objective_total,
        weights: *weights,
    })
}

/// Bilinear overlap weight of the all-one target at `(x, y)`: identical to
/// sampling a `target_h x target_w` image of ones with zero padding.
#[inline]
fn ones_weight(target_h: usize, target_w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let inx = |v: i64| v >= 0 && v < target_w as i64;
    let iny = |v: i64| v >= 0 && v < target_h as i64;
    let ax = (1.0 - fx) * (inx(x0) as u8 as f64) + fx * (inx(x0 + 1) as u8 as f64);
    let ay = (1.0 - fy) * (iny(y0) as u8 as f64) + fy * (iny(y0 + 1) as u8 as f64);
    ax * ay
}

/// Layer-3 objective restricted to one mesh: cached per-cell content sums
/// make vertex perturbations cheap because only incident cells change.
pub(crate) struct MeshCost<'a> {
    pub i_r: &'a Image,
    pub i_t: &'a Image,
    /// Coefficient of the content mean, usually `lambda * omega_3`.
    pub content_coeff: f64,
    pub mu: f64,
}

impl MeshCost<'_> {
    fn pixel_norm(&self) -> f64 {
        (self.i_r.height() * self.i_r.width() * self.i_r.channels()) as f64
    }

    /// Sum over the cell's canvas pixels of the per-pixel content residual.
    pub fn cell_sum(&self, mesh: &Mesh, row: usize, col: usize) -> Result<f64> {
        let h = cell_homography(mesh, row, col)?;
        let (ys, xs) = mesh.cell_pixel_range(row, col);
        let (th, tw) = (self.i_t.height(), self.i_t.width());
        let channels = self.i_r.channels();
        let mut sum = 0.0f64;
        for y in ys {
            for x in xs.clone() {
                let p = h.apply_raw(x as f64, y as f64);
                let mask = ones_weight(th, tw, p[0], p[1]) as f32;
                for c in 0..channels {
                    let warped = self.i_t.sample_bilinear_channel(c, p[0], p[1]);
                    sum += ((mask * self.i_r.get(y, x, c) - warped) as f64).abs();
                }
            }
        }
        Ok(sum)
    }

    pub fn all_cell_sums(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let (u, v) = (mesh.cell_rows(), mesh.cell_cols());
        map_indices(u * v, |i| self.cell_sum(mesh, i / v, i % v))
            .into_iter()
            .collect()
    }

    pub fn value_parts(&self, mesh: &Mesh, levels: &GridDepthLevels) -> Result<(f64, f64)> {
        let cells = self.all_cell_sums(mesh)?;
        let content = cells.iter().sum::<f64>() / self.pixel_norm();
        let shape = shape_loss(mesh, levels)?;
        Ok((content, shape))
    }

    pub fn value(&self, mesh: &Mesh, levels: &GridDepthLevels) -> Result<f64> {
        let (content, shape) = self.value_parts(mesh, levels)?;
        Ok(self.content_coeff * content + self.mu * shape)
    }

    /// Central-difference gradient with depth levels frozen. For each
    /// perturbed coordinate only the cells incident to the vertex are
    /// re-evaluated.
    pub fn gradient(&self, mesh: &Mesh, levels: &GridDepthLevels) -> Result<Vec<[f64; 2]>> {
        mesh.validate()?;
        for vtx in mesh.vertices() {
            if vtx[0].abs().max(vtx[1].abs()) + FD_STEP
                == vtx[0].abs().max(vtx[1].abs())
            {
                return Err(Error::InvalidParameter(
                    "finite-difference step underflows vertex coordinates".into(),
                ));
            }
        }
        let (u, v) = (mesh.cell_rows(), mesh.cell_cols());
        let norm = self.pixel_norm();
        let base_cells = self.all_cell_sums(mesh)?;

        let results = map_indices(mesh.vertices().len() * 2, |k| -> Result<f64> {
            let vtx = k / 2;
            let axis = k % 2;
            let (i, j) = (vtx / (v + 1), vtx % (v + 1));
            let incident: Vec<(usize, usize)> = incident_cells(i, j, u, v);

            let eval = |delta: f64| -> Result<f64> {
                let mut m = mesh.clone();
                let mut p = m.vertex(i, j);
                p[axis] += delta;
                m.set_vertex(i, j, p);
                let mut content_delta = 0.0f64;
                for &(r, c) in &incident {
                    content_delta += self.cell_sum(&m, r, c)? - base_cells[r * v + c];
                }
                let shape = shape_loss(&m, levels)?;
                Ok(self.content_coeff * content_delta / norm + self.mu * shape)
            };
            let plus = eval(FD_STEP)?;
            let minus = eval(-FD_STEP)?;
            Ok((plus - minus) / (2.0 * FD_STEP))
        });

        let mut grad = vec![[0.0f64; 2]; mesh.vertices().len()];
        for (k, r) in results.into_iter().enumerate() {
            grad[k / 2][k % 2] = r?;
        }
        Ok(grad)
    }
}

/// Cells incident to vertex `(i, j)` on a `u x v` grid.
fn incident_cells(i: usize, j: usize, u: usize, v: usize) -> Vec<(usize, usize)> {
    let mut cells = Vec::with_capacity(4);
    for r in i.saturating_sub(1)..=i.min(u - 1) {
        for c in j.saturating_sub(1)..=j.min(v - 1) {
            if r < u && c < v {
                cells.push((r, c));
            }
        }
    }
    cells
}

/// Central-difference gradient of the layer-3 objective
/// `lambda * omega_3 * L_content(mesh) + mu * L_shape(mesh)` with respect to
/// every vertex coordinate, step 1e-3 px. Depth levels are computed once
/// from the input mesh and held fixed across the perturbed evaluations.
pub fn gradient(
    i_r: &Image,
    i_t: &Image,
    mesh: &Mesh,
    depth: Option<&DepthMap>,
    m_levels: usize,
    weights: &LossWeights,
) -> Result<Vec<[f64; 2]>> {
    let levels = match depth {
        Some(d) => grid_depth_levels(d, mesh, m_levels)?,
        None => GridDepthLevels::uniform(mesh.cell_rows(), mesh.cell_cols()),
    };
    let cost = MeshCost {
        i_r,
        i_t,
        content_coeff: weights.lambda * weights.omega[2],
        mu: weights.mu,
    };
    cost.gradient(mesh, &levels)
}
