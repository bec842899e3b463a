//! Visualization images: flow color wheel, mesh overlay, red/blue fusion.

use crate::correlation::FlowField;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mesh::Mesh;

/// Color-wheel rendering of a flow field: hue encodes direction,
/// saturation the magnitude relative to the field maximum.
pub fn flow_color_image(flow: &FlowField) -> Image {
    let (h, w) = (flow.height(), flow.width());
    let mut max_mag = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            max_mag = max_mag.max((dx * dx + dy * dy).sqrt());
        }
    }
    Image::from_fn(h, w, 3, |y, x, c| {
        let (dx, dy) = flow.at(y, x);
        let mag = (dx * dx + dy * dy).sqrt();
        let sat = if max_mag > 1e-12 { mag / max_mag } else { 0.0 };
        let hue = dy.atan2(dx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        hsv_to_rgb(hue, sat, 1.0)[c] as f32
    })
}

/// `h`, `s`, `v` in `[0, 1]`.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let i = h6 as usize % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn to_rgb(img: &Image) -> Result<Image> {
    match img.channels() {
        3 => Ok(img.clone()),
        1 => {
            let n = img.height() * img.width();
            let mut data = Vec::with_capacity(3 * n);
            for _ in 0..3 {
                data.extend_from_slice(img.plane(0));
            }
            Image::from_vec(img.height(), img.width(), 3, data)
        }
        c => Err(Error::UnsupportedChannels(c)),
    }
}

/// Draws the deformed mesh — edges green, vertices red — over `img`, which
/// is interpreted in the mesh's target coordinate space (vertex positions
/// index its pixels).
pub fn draw_mesh_overlay(img: &Image, mesh: &Mesh) -> Result<Image> {
    let mut out = to_rgb(img)?;
    out.clamp_unit();

    let edge = [0.0f32, 1.0, 0.0];
    let vert = [1.0f32, 0.0, 0.0];
    let (rows, cols) = (mesh.vertex_rows(), mesh.vertex_cols());
    for i in 0..rows {
        for j in 0..cols {
            if j + 1 < cols {
                draw_line(&mut out, mesh.vertex(i, j), mesh.vertex(i, j + 1), edge);
            }
            if i + 1 < rows {
                draw_line(&mut out, mesh.vertex(i, j), mesh.vertex(i + 1, j), edge);
            }
        }
    }
    for i in 0..rows {
        for j in 0..cols {
            let p = mesh.vertex(i, j);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    put_pixel(
                        &mut out,
                        p[0].round() as i64 + dx,
                        p[1].round() as i64 + dy,
                        vert,
                    );
                }
            }
        }
    }
    Ok(out)
}

fn put_pixel(img: &mut Image, x: i64, y: i64, color: [f32; 3]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for (c, &v) in color.iter().enumerate() {
        img.set(y as usize, x as usize, c, v);
    }
}

fn draw_line(img: &mut Image, a: [f64; 2], b: [f64; 2], color: [f32; 3]) {
    let steps = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        put_pixel(img, x.round() as i64, y.round() as i64, color);
    }
}

/// Fuses reference and warped target by zeroing the reference's blue
/// channel and the warped target's red channel: non-overlapping regions
/// come out orange, misalignments show as color fringes.
pub fn fuse_red_blue(reference: &Image, warped_target: &Image) -> Result<Image> {
    if reference.height() != warped_target.height() || reference.width() != warped_target.width()
    {
        return Err(Error::ShapeMismatch("fusion input sizes".into()));
    }
    let r = to_rgb(reference)?;
    let t = to_rgb(warped_target)?;
    let (h, w) = (r.height(), r.width());
    Ok(Image::from_fn(h, w, 3, |y, x, c| match c {
        0 => r.get(y, x, 0),
        1 => 0.5 * (r.get(y, x, 1) + t.get(y, x, 1)),
        _ => t.get(y, x, 2),
    }))
}
