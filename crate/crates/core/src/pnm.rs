//! Binary portable graymap / pixmap (P5 / P6, maxval 255) encoding and decoding.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, Mask};

/// Output pixel layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageMode {
    /// P5, one channel.
    Gray,
    /// P6, three channels.
    Rgb,
}

impl ImageMode {
    fn channels(self) -> usize {
        match self {
            ImageMode::Gray => 1,
            ImageMode::Rgb => 3,
        }
    }

    fn magic(self) -> &'static str {
        match self {
            ImageMode::Gray => "P5",
            ImageMode::Rgb => "P6",
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a grid whose channel count matches `mode`, clamping values to `[0, 1]`.
pub fn encode(grid: &LatentGrid, mode: ImageMode) -> Result<Vec<u8>> {
    if grid.channels() != mode.channels() {
        return Err(Error::Shape(format!(
            "{mode:?} output needs {} channel(s), grid has {}",
            mode.channels(),
            grid.channels()
        )));
    }
    let header = format!(
        "{}\n{} {}\n255\n",
        mode.magic(),
        grid.width(),
        grid.height()
    );
    let mut out = Vec::with_capacity(header.len() + grid.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(grid.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Header plus raw samples of a decoded file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad {what} in header")))
    }
}

/// Decodes a binary P5 or P6 file with maxval at most 255.
pub fn decode(bytes: &[u8]) -> Result<RawImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("expected P5 or P6 magic".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("zero image size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "maxval {maxval} unsupported (1..=255 only)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Format("image size overflows".into()))?;
    let samples = bytes
        .get(cur.pos..cur.pos + len)
        .ok_or_else(|| {
            Error::Format(format!(
                "raster truncated: need {len} bytes, have {}",
                bytes.len() - cur.pos
            ))
        })?
        .to_vec();
    if let Some(&bad) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(Error::Format(format!(
            "sample {bad} exceeds maxval {maxval}"
        )));
    }
    Ok(RawImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

/// Writes `bytes` via a temporary file in the target directory and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_image(grid: &LatentGrid, path: impl AsRef<Path>, mode: ImageMode) -> Result<()> {
    let bytes = encode(grid, mode)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Reads a P5/P6 file into a grid scaled to `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<LatentGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode(&bytes)?;
    let scale = 1.0 / raw.maxval as f32;
    LatentGrid::from_vec(
        raw.height,
        raw.width,
        raw.channels,
        raw.samples.iter().map(|&s| s as f32 * scale).collect(),
    )
}

/// Decodes a mask from P5 bytes: `maxval` maps to 1, 0 to 0, anything else is an error.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let raw = decode(bytes)?;
    if raw.channels != 1 {
        return Err(Error::Format("mask files must be P5 graymaps".into()));
    }
    let data = raw
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s == 0 {
                Ok(false)
            } else if s as u16 == raw.maxval {
                Ok(true)
            } else {
                Err(Error::Format(format!(
                    "mask sample {s} at pixel {i} is neither 0 nor {}",
                    raw.maxval
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::new(raw.height, raw.width, data)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_image(&mask.to_grid(), path, ImageMode::Gray)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn body(bytes: &[u8]) -> &[u8] {
        // header is always three lines in our own encoder
        let mut newlines = 0;
        let idx = bytes
            .iter()
            .position(|&b| {
                if b == b'\n' {
                    newlines += 1;
                }
                newlines == 3
            })
            .unwrap();
        &bytes[idx + 1..]
    }

    #[test]
    fn quantization_endpoints() {
        let one = LatentGrid::new(1, 1, 1, 1.0).unwrap();
        let zero = LatentGrid::new(1, 1, 1, 0.0).unwrap();
        assert_eq!(body(&encode(&one, ImageMode::Gray).unwrap()), &[255]);
        assert_eq!(body(&encode(&zero, ImageMode::Gray).unwrap()), &[0]);
        let over = LatentGrid::from_vec(1, 2, 1, vec![7.0, -3.0]).unwrap();
        assert_eq!(body(&encode(&over, ImageMode::Gray).unwrap()), &[255, 0]);
    }

    #[test]
    fn header_layout() {
        let g = LatentGrid::new(2, 3, 3, 0.5).unwrap();
        let bytes = encode(&g, ImageMode::Rgb).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert!(encode(&g, ImageMode::Gray).is_err());
    }

    #[test]
    fn decode_handles_comments() {
        let bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n\x00\xff";
        let raw = decode(bytes).unwrap();
        assert_eq!((raw.width, raw.height, raw.channels), (2, 1, 1));
        assert_eq!(raw.samples, vec![0, 255]);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(b"P3\n1 1\n255\n1"), Err(Error::Format(_))));
        assert!(matches!(decode(b"P5\n1\n"), Err(Error::Format(_))));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x00"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn mask_rejects_gray_levels() {
        assert!(matches!(
            decode_mask(b"P5\n2 1\n255\n\x00\x80"),
            Err(Error::Format(_))
        ));
        let m = decode_mask(b"P5\n2 1\n255\n\xff\x00").unwrap();
        assert_eq!(m.data(), &[true, false]);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = Mask::disk(9, 13, 4.0, 6.0, 3.5).unwrap();
        write_mask(&mask, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
    }

    proptest! {
        #[test]
        fn binary_grids_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..40), rgb in any::<bool>()) {
            let mode = if rgb { ImageMode::Rgb } else { ImageMode::Gray };
            let c = if rgb { 3 } else { 1 };
            let n = bits.len();
            let data: Vec<f32> = bits.iter().flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, c)).collect();
            let grid = LatentGrid::from_vec(1, n, c, data).unwrap();
            let raw = decode(&encode(&grid, mode).unwrap()).unwrap();
            let back = LatentGrid::from_vec(1, n, c, raw.samples.iter().map(|&s| s as f32 / 255.0).collect()).unwrap();
            prop_assert_eq!(back, grid);
        }
    }
}
