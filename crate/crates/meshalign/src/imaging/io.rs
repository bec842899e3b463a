//! PNG and binary PPM/PGM input and output.
//!
//! Loading scales 8-bit samples to `[0, 1]`. Saving clamps to `[0, 1]` and
//! quantizes to 8 bits, so a save/load round trip is exact to `1/255` per
//! value. [`load_gray_any`] additionally accepts 16-bit grayscale input for
//! depth maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;

fn read_err(path: &Path, source: std::io::Error) -> Error {
    Error::Read {
        path: path.to_path_buf(),
        source,
    }
}

fn write_err(path: &Path, source: std::io::Error) -> Error {
    Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Loads an 8-bit PNG, PPM (P6), or PGM (P5) as an image with 1 or 3
/// channels and values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "png" => {
            let (h, w, ch, maxval, samples) = read_png(path)?;
            if maxval != 255 {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: 16-bit PNG not supported for images (use load_gray_any for depth)",
                    path.display()
                )));
            }
            samples_to_image(h, w, ch, maxval, &samples)
        }
        "ppm" | "pgm" => {
            let (h, w, ch, maxval, samples) = read_pnm(path)?;
            if maxval > 255 {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: 16-bit PNM not supported for images (use load_gray_any for depth)",
                    path.display()
                )));
            }
            samples_to_image(h, w, ch, maxval, &samples)
        }
        other => Err(Error::UnsupportedFormat(format!(
            "unknown extension {other:?} (expected png, ppm, or pgm)"
        ))),
    }
}

/// Loads a grayscale image accepting 8- or 16-bit depth; RGB input is
/// converted through the grayscale weights. Values land in `[0, 1]`.
pub fn load_gray_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let (h, w, ch, maxval, samples) = match extension(path).as_str() {
        "png" => read_png(path)?,
        "ppm" | "pgm" => read_pnm(path)?,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "unknown extension {other:?} (expected png, ppm, or pgm)"
            )))
        }
    };
    samples_to_image(h, w, ch, maxval, &samples)?.to_grayscale()
}

/// Saves as 8-bit PNG, PPM, or PGM chosen by the file extension. Values are
/// clamped to `[0, 1]` before quantization.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ch = img.channels();
    if ch != 1 && ch != 3 {
        return Err(Error::UnsupportedChannels(ch));
    }
    let bytes = quantize(img);
    match extension(path).as_str() {
        "png" => write_png(img, path, &bytes),
        "pgm" if ch == 1 => write_pnm(img, path, &bytes, b'5'),
        "ppm" if ch == 3 => write_pnm(img, path, &bytes, b'6'),
        "pgm" | "ppm" => Err(Error::UnsupportedFormat(format!(
            "{} channels do not match the {} extension",
            ch,
            extension(path)
        ))),
        other => Err(Error::UnsupportedFormat(format!(
            "unknown extension {other:?} (expected png, ppm, or pgm)"
        ))),
    }
}

/// Interleaved 8-bit quantization of a planar image.
fn quantize(img: &Image) -> Vec<u8> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut bytes = vec![0u8; h * w * ch];
    for c in 0..ch {
        let plane = img.plane(c);
        for i in 0..h * w {
            bytes[i * ch + c] = (plane[i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    bytes
}

fn samples_to_image(
    height: usize,
    width: usize,
    channels: usize,
    maxval: u16,
    samples: &[u16],
) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidImage("zero-dimension image".into()));
    }
    let scale = 1.0 / maxval as f32;
    let mut img = Image::new(height, width, channels);
    for c in 0..channels {
        for i in 0..height * width {
            let v = samples[i * channels + c] as f32 * scale;
            img.data_mut()[c * height * width + i] = v;
        }
    }
    Ok(img)
}

fn read_png(path: &Path) -> Result<(usize, usize, usize, u16, Vec<u16>)> {
    let file = File::open(path).map_err(|e| read_err(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let bytes = &buf[..info.buffer_size()];

    use png::{BitDepth, ColorType};
    let (src_ch, keep_ch) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: indexed PNG not supported",
                path.display()
            )))
        }
    };
    let (maxval, step) = match info.bit_depth {
        BitDepth::Eight => (255u16, 1usize),
        BitDepth::Sixteen => (65535u16, 2usize),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?} bit PNG not supported",
                path.display()
            )))
        }
    };

    let (w, h) = (info.width as usize, info.height as usize);
    let mut samples = vec![0u16; w * h * keep_ch];
    for i in 0..w * h {
        for c in 0..keep_ch {
            let off = (i * src_ch + c) * step;
            samples[i * keep_ch + c] = if step == 1 {
                bytes[off] as u16
            } else {
                u16::from_be_bytes([bytes[off], bytes[off + 1]])
            };
        }
    }
    Ok((h, w, keep_ch, maxval, samples))
}

fn write_png(img: &Image, path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| write_err(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Parses binary PGM (P5) or PPM (P6), including 16-bit samples.
fn read_pnm(path: &Path) -> Result<(usize, usize, usize, u16, Vec<u16>)> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| read_err(path, e))?
        .read_to_end(&mut raw)
        .map_err(|e| read_err(path, e))?;

    let bad = |m: &str| Error::InvalidImage(format!("{}: {m}", path.display()));

    if raw.len() < 2 || raw[0] != b'P' {
        return Err(bad("not a PNM file"));
    }
    let channels = match raw[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(Error::UnsupportedFormat("only binary P5/P6 supported".into())),
    };

    // Header tokens: width, height, maxval; '#' starts a comment.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < raw.len() {
            match raw[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < raw.len() && raw[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < raw.len() && raw[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("malformed header"));
        }
        *field = std::str::from_utf8(&raw[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("malformed header"))?;
    }
    // Single whitespace byte separates the header from binary data.
    if pos >= raw.len() {
        return Err(bad("truncated header"));
    }
    pos += 1;

    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(bad("zero-dimension image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("invalid maxval"));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let count = width * height * channels;
    if raw.len() < pos + count * bytes_per {
        return Err(bad("truncated pixel data"));
    }

    let mut samples = vec![0u16; count];
    if bytes_per == 1 {
        for (s, &b) in samples.iter_mut().zip(&raw[pos..pos + count]) {
            *s = b as u16;
        }
    } else {
        for (i, s) in samples.iter_mut().enumerate() {
            *s = u16::from_be_bytes([raw[pos + 2 * i], raw[pos + 2 * i + 1]]);
        }
    }
    Ok((height, width, channels, maxval as u16, samples))
}

fn write_pnm(img: &Image, path: &Path, bytes: &[u8], magic: u8) -> Result<()> {
    let file = File::create(path).map_err(|e| write_err(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P{}\n{} {}\n255\n", magic as char, img.width(), img.height())
        .map_err(|e| write_err(path, e))?;
    w.write_all(bytes).map_err(|e| write_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "meshalign-io-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn pgm_bytes_scale_to_unit_interval() {
        let dir = tmpdir();
        let path = dir.join("tiny.pgm");
        std::fs::write(&path, [b"P5\n2 2\n255\n".as_ref(), &[0, 255, 128, 64]].concat()).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.height(), 2);
        assert_eq!(img.width(), 2);
        assert_eq!(img.channels(), 1);
        let expect = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        for (v, e) in img.data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-7);
        }
    }

    #[test]
    fn save_load_round_trip_within_quantization() {
        let dir = tmpdir();
        let img = Image::from_fn(7, 5, 3, |y, x, c| {
            ((y * 13 + x * 7 + c * 29) % 97) as f32 / 96.0
        });
        for name in ["rt.png", "rt.ppm"] {
            let path = dir.join(name);
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back.channels(), 3);
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{name}: {a} vs {b}");
            }
        }
        let gray = img.to_grayscale().unwrap();
        for name in ["rt.pgm", "rtg.png"] {
            let path = dir.join(name);
            save_image(&gray, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back.channels(), 1);
            for (a, b) in gray.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn save_clamps_out_of_range_values() {
        let dir = tmpdir();
        let mut img = Image::new(4, 4, 1);
        img.data_mut().fill(2.0);
        img.set(0, 0, 0, -3.0);
        let path = dir.join("clamp.pgm");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.get(0, 0, 0), 0.0);
        assert_eq!(back.get(1, 1, 0), 1.0);
    }

    #[test]
    fn all_zero_image_round_trips_to_zero_bytes() {
        let dir = tmpdir();
        let img = Image::new(4, 4, 1);
        let path = dir.join("zero.pgm");
        save_image(&img, &path).unwrap();
        let raw = std::fs::read(&path).unwrap();
        let pixels = &raw[raw.len() - 16..];
        assert!(pixels.iter().all(|&b| b == 0));
    }

    #[test]
    fn full_resolution_rgb_png_round_trips_dimensions() {
        let dir = tmpdir();
        let img = Image::from_fn(512, 512, 3, |y, x, c| {
            (((y >> 4) + (x >> 4) + c) % 7) as f32 / 7.0
        });
        let path = dir.join("big.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.height(), back.width(), back.channels()), (512, 512, 3));
    }

    #[test]
    fn rejects_zero_dimension_pnm() {
        let dir = tmpdir();
        let path = dir.join("bad.pgm");
        std::fs::write(&path, b"P5\n0 2\n255\n").unwrap();
        assert!(load_image(&path).is_err());
    }

    #[test]
    fn rejects_unknown_extension_and_missing_file() {
        assert!(load_image("nosuch.bmp").is_err());
        assert!(load_image("definitely-missing.png").is_err());
    }

    #[test]
    fn sixteen_bit_pgm_loads_for_depth() {
        let dir = tmpdir();
        let path = dir.join("deep.pgm");
        // maxval 65535, two samples: 0 and 65535.
        std::fs::write(
            &path,
            [b"P5\n2 1\n65535\n".as_ref(), &[0, 0, 255, 255]].concat(),
        )
        .unwrap();
        let img = load_gray_any(&path).unwrap();
        assert!((img.get(0, 0, 0) - 0.0).abs() < 1e-7);
        assert!((img.get(0, 1, 0) - 1.0).abs() < 1e-7);
        // And the plain image loader refuses 16-bit input.
        assert!(load_image(&path).is_err());
    }

    #[test]
    fn pnm_header_comments_are_skipped() {
        let dir = tmpdir();
        let path = dir.join("comment.pgm");
        std::fs::write(
            &path,
            [b"P5\n# a comment\n2 1\n# another\n255\n".as_ref(), &[7, 9]].concat(),
        )
        .unwrap();
        let img = load_image(&path).unwrap();
        assert!((img.get(0, 1, 0) - 9.0 / 255.0).abs() < 1e-7);
    }
}
