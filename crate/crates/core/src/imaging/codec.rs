use std::io::Cursor;
use std::path::Path;

use super::ImageRGB;
use crate::error::{Error, Result};

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Decodes binary PPM (`P6`, maxval 255) or 8-bit non-interlaced RGB PNG.
pub fn decode_image(bytes: &[u8]) -> Result<ImageRGB> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else {
        Err(Error::MalformedImage("neither P6 PPM nor PNG".into()))
    }
}

/// Encodes as binary PPM.
pub fn encode_image(img: &ImageRGB) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn encode_png(img: &ImageRGB) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::MalformedImage(e.to_string()))?;
        writer
            .write_image_data(img.pixels())
            .map_err(|e| Error::MalformedImage(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<ImageRGB> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::MalformedImage(m) => Error::MalformedImage(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_image(path: &Path, img: &ImageRGB) -> Result<()> {
    std::fs::write(path, encode_image(img)).map_err(|e| Error::io(path, e))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedImage(format!("bad PPM {what}")))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageRGB> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedDepth(format!("PPM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::MalformedImage("PPM header not terminated".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedImage("PPM with zero dimension".into()));
    }
    let need = width * height * 3;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::MalformedImage(format!(
            "PPM payload truncated: {} of {need} bytes",
            payload.len()
        )));
    }
    ImageRGB::new(width, height, payload[..need].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<ImageRGB> {
    let bad = |e: png::DecodingError| Error::MalformedImage(format!("PNG: {e}"));
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(bad)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedDepth(format!("PNG bit depth {:?}", info.bit_depth)));
    }
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::UnsupportedDepth(format!(
            "PNG color type {:?} (RGB required)",
            info.color_type
        )));
    }
    if info.interlaced {
        return Err(Error::MalformedImage("interlaced PNG".into()));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::MalformedImage("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(frame.buffer_size());
    ImageRGB::new(width, height, buf)
}
