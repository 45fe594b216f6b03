//! Binary PGM (P5) and PPM (P6) images with maxval 255.
//!
//! Pixel values in `[-1, 1]` map linearly onto `[0, 255]` with
//! round-half-up, so 0.0 encodes as 128.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Values outside `[-1, 1]` by less than this are clamped, anything
/// further out is an error.
pub const CLAMP_TOLERANCE: f32 = 1e-3;

pub fn to_byte(v: f32) -> u8 {
    let v = v.clamp(-1.0, 1.0) as f64;
    ((v + 1.0) / 2.0 * 255.0 + 0.5).floor() as u8
}

pub fn from_byte(b: u8) -> f32 {
    (b as f64 / 255.0 * 2.0 - 1.0) as f32
}

/// Clamps to the encodable range; use on raw sampler output before writing.
pub fn clamp_for_display(img: &Tensor<f32>) -> Tensor<f32> {
    img.clamp(-1.0, 1.0)
}

fn magic_for(c: usize) -> Result<&'static str> {
    match c {
        1 => Ok("P5"),
        3 => Ok("P6"),
        _ => Err(Error::Format {
            kind: "image",
            detail: format!("{c} channels; only 1 (PGM) or 3 (PPM) are supported"),
        }),
    }
}

/// File extension matching the channel count.
pub fn extension(img: &Tensor<f32>) -> Result<&'static str> {
    let (c, _, _) = img.dims3()?;
    Ok(if magic_for(c)? == "P5" { "pgm" } else { "ppm" })
}

pub fn encode_image(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    let magic = magic_for(c)?;
    let worst = img.data().iter().fold(0.0f32, |m, v| m.max(v.abs() - 1.0));
    if !(worst <= CLAMP_TOLERANCE) {
        return Err(Error::Format {
            kind: "image",
            detail: format!("pixel values exceed [-1, 1] by {worst}"),
        });
    }
    if worst > 0.0 {
        eprintln!("warning: clamping pixel values that exceed [-1, 1] by up to {worst:.2e}");
    }
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    out.reserve(c * h * w);
    for i in 0..h * w {
        for ch in 0..c {
            out.push(to_byte(d[ch * h * w + i]));
        }
    }
    Ok(out)
}

pub fn write_image(img: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_image(img)?)?;
    Ok(())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                kind: "image",
                detail: format!("expected a number in the header at byte {start}"),
            })
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let c = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::Format {
                kind: "image",
                detail: "not a binary PGM/PPM file".into(),
            })
        }
    };
    let mut hdr = Header { bytes, pos: 2 };
    let w = hdr.number()?;
    let h = hdr.number()?;
    let maxval = hdr.number()?;
    if maxval != 255 {
        return Err(Error::Format {
            kind: "image",
            detail: format!("unsupported maxval {maxval}"),
        });
    }
    if w == 0 || h == 0 {
        return Err(Error::Format {
            kind: "image",
            detail: "zero-sized image".into(),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(hdr.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Truncated("image"));
    }
    let raster = &bytes[hdr.pos + 1..];
    let n = c * h * w;
    if raster.len() < n {
        return Err(Error::Truncated("image"));
    }
    let mut data = vec![0.0f32; n];
    for i in 0..h * w {
        for ch in 0..c {
            data[ch * h * w + i] = from_byte(raster[i * c + ch]);
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_image(&std::fs::read(path)?)
}

/// Replicates a single-channel image into three channels.
pub fn to_rgb(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = img.dims3()?;
    match c {
        3 => Ok(img.clone()),
        1 => Tensor::new(vec![3, h, w], img.data().repeat(3)),
        _ => Err(Error::shape("to_rgb", format!("{c} channels"))),
    }
}

/// Tiles `rows[r][k]` into one image separated by `pad` pixels of `fill`.
/// Every tile must share one shape.
pub fn contact_sheet(rows: &[Vec<Tensor<f32>>], pad: usize, fill: f32) -> Result<Tensor<f32>> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::invalid("contact sheet needs at least one image"))?;
    let (c, h, w) = first.dims3()?;
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (gh, gw) = (rows.len() * (h + pad) + pad, ncols * (w + pad) + pad);
    let mut out = Tensor::full(&[c, gh, gw], fill)?;
    let od = out.data_mut();
    for (r, row) in rows.iter().enumerate() {
        for (k, img) in row.iter().enumerate() {
            if img.shape() != first.shape() {
                return Err(Error::shape("contact_sheet", "tiles differ in shape"));
            }
            let (oy, ox) = (pad + r * (h + pad), pad + k * (w + pad));
            for ch in 0..c {
                for y in 0..h {
                    let src = &img.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
                    let dst = (ch * gh + oy + y) * gw + ox;
                    od[dst..dst + w].copy_from_slice(src);
                }
            }
        }
    }
    Ok(out)
}
