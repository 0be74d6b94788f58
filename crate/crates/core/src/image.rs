//! 8-bit RGB images and binary PNM (P5/P6) I/O.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Draws an axis-aligned rectangle outline `thickness` pixels wide, inside
    /// the rectangle's edges, clipped to the image.
    pub fn draw_rect(&mut self, left: i64, top: i64, right: i64, bottom: i64, thickness: i64, rgb: [u8; 3]) {
        if right < left || bottom < top {
            return;
        }
        let (w, h) = (self.width as i64, self.height as i64);
        for y in top.max(0)..=bottom.min(h - 1) {
            for x in left.max(0)..=right.min(w - 1) {
                let edge =
                    x - left < thickness || right - x < thickness || y - top < thickness || bottom - y < thickness;
                if edge {
                    self.put(x as usize, y as usize, rgb);
                }
            }
        }
    }
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads one ASCII header integer, skipping whitespace and `#` comments.
fn header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if is_space(*b) => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::Image("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("bad header field at byte {start}")))
}

/// True when `bytes` start with a binary PGM or PPM magic number.
pub fn looks_like_pnm(bytes: &[u8]) -> bool {
    matches!(bytes.get(..2), Some(b"P5") | Some(b"P6"))
}

/// Decodes binary PGM (gray replicated to RGB) or PPM with maxval ≤ 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<RgbImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Image("not a binary PGM/PPM (P5/P6)".into())),
    };
    let mut pos = 2;
    let width = header_int(bytes, &mut pos)?;
    let height = header_int(bytes, &mut pos)?;
    let maxval = header_int(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("zero-sized image {width}x{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Image(format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).copied().is_some_and(is_space) {
        return Err(Error::Image("missing whitespace after header".into()));
    }
    pos += 1;
    let needed = width * height * channels;
    let raster = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| Error::Image(format!("raster truncated: need {needed} bytes")))?;
    let rescale = |v: u8| -> u8 {
        if maxval == 255 {
            v
        } else {
            ((v.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8
        }
    };
    let data = if channels == 3 {
        raster.iter().map(|&v| rescale(v)).collect()
    } else {
        raster
            .iter()
            .flat_map(|&v| {
                let g = rescale(v);
                [g, g, g]
            })
            .collect()
    };
    Ok(RgbImage { width, height, data })
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}
