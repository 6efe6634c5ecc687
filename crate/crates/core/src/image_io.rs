//! 8-bit RGB image files: PNG and binary PPM (P6).
//!
//! A stored byte `p` maps to `p / 255`; writing rounds half away from zero.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::interleave::PlanarImage;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Pixel byte for a `[0, 1]` value.
pub fn quantize_pixel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Builds an image from interleaved RGB bytes.
pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<PlanarImage> {
    if rgb.len() != height * width * 3 {
        return Err(Error::Image(format!("{height}x{width} RGB needs {} bytes, got {}", height * width * 3, rgb.len())));
    }
    PlanarImage::from_fn(height, width, |c, r, col| rgb[(r * width + col) * 3 + c] as f64 / 255.0)
}

/// Interleaved RGB bytes of an image.
pub fn to_rgb8(x: &PlanarImage) -> Vec<u8> {
    let (h, w) = (x.height(), x.width());
    let mut out = vec![0u8; h * w * 3];
    for c in 0..3 {
        for r in 0..h {
            for col in 0..w {
                out[(r * w + col) * 3 + c] = quantize_pixel(x.get(c, r, col));
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PlanarImage> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::Image("unrecognised image format (expected PNG or P6 PPM)".into()))
    }
}

pub fn read_image(path: &Path) -> Result<PlanarImage> {
    decode(&fs::read(path)?).map_err(|e| match e {
        Error::Image(m) => Error::Image(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes PNG unless the extension is `.ppm`.
pub fn write_image(path: &Path, x: &PlanarImage) -> Result<()> {
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let bytes = if is_ppm { encode_ppm(x) } else { encode_png(x)? };
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Image(format!("png: {e}"))
}

fn decode_png(bytes: &[u8]) -> Result<PlanarImage> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Image("unexpanded palette image".into())),
    };
    let mut rgb = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        let row = &buf[r * info.line_size..];
        for col in 0..w {
            let px = &row[col * channels..col * channels + channels];
            if channels < 3 {
                rgb.extend_from_slice(&[px[0]; 3]);
            } else {
                rgb.extend_from_slice(&px[..3]);
            }
        }
    }
    from_rgb8(h, w, &rgb)
}

pub fn encode_png(x: &PlanarImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, x.width() as u32, x.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&to_rgb8(x)).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn encode_ppm(x: &PlanarImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    out.extend(to_rgb8(x));
    out
}

fn decode_ppm(bytes: &[u8]) -> Result<PlanarImage> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // `#` comments running to end of line, then one whitespace byte.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Image("truncated PPM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PPM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed PPM header".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("only 8-bit PPM supported (maxval {maxval})")));
    }
    let need = w * h * 3;
    let body = bytes.get(pos..pos + need).ok_or_else(|| Error::Image("truncated PPM pixel data".into()))?;
    from_rgb8(h, w, body)
}
