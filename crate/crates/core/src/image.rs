//! 8-bit eye images and binary PGM (P5) / PPM (P6) encoding.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EyeImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl EyeImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_raw(width, height, channels, vec![0; width * height * channels])
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "unsupported channel count {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has zero size".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} bytes, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(EyeImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn mean_intensity(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Reverses the column order of every row.
    pub fn flipped_horizontally(&self) -> EyeImage {
        let c = self.channels;
        let row_len = self.width * c;
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(row_len) {
            for px in row.chunks_exact(c).rev() {
                out.extend_from_slice(px);
            }
        }
        EyeImage {
            data: out,
            ..*self
        }
    }

    /// BT.601 luma of every pixel; a copy for 1-channel images.
    pub fn to_gray(&self) -> EyeImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        EyeImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resized(&self, width: usize, height: usize) -> Result<EyeImage> {
        let mut out = EyeImage::new(width, height, self.channels)?;
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for ch in 0..self.channels {
                    let p = |xx: usize, yy: usize| self.pixel(xx, yy)[ch] as f64;
                    let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                    let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                    let v = top * (1.0 - ty) + bot * ty;
                    out.pixel_mut(x, y)[ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(out)
    }

    /// Binary netpbm bytes: P5 for gray, P6 for RGB, maxval 255.
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<EyeImage> {
        let mut cur = HeaderCursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(Error::Format(format!(
                    "unsupported netpbm magic `{other}` (expected P5 or P6)"
                )))
            }
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if maxval != 255 {
            return Err(Error::Format(format!(
                "unsupported maxval {maxval} (expected 255)"
            )));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::Format("missing whitespace after maxval".into())),
        }
        let need = width * height * channels;
        let raster = &bytes[cur.pos..];
        if raster.len() < need {
            return Err(Error::Format(format!(
                "truncated raster: {} of {need} bytes",
                raster.len()
            )));
        }
        if raster.len() > need {
            return Err(Error::Format(format!(
                "{} trailing bytes after raster",
                raster.len() - need
            )));
        }
        EyeImage::from_raw(width, height, channels, raster.to_vec())
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pnm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pnm(path: &Path) -> Result<EyeImage> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        EyeImage::decode_pnm(&bytes)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
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

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad netpbm header field `{t}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_uses_p5() {
        let img = EyeImage::from_raw(2, 2, 1, vec![0, 1, 254, 255]).unwrap();
        let bytes = img.encode_pnm();
        assert_eq!(&bytes[..2], b"P5");
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\x01\xfe\xff");
        assert_eq!(EyeImage::decode_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn rgb_uses_p6() {
        let img = EyeImage::from_raw(1, 2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = img.encode_pnm();
        assert_eq!(&bytes[..2], b"P6");
        assert_eq!(EyeImage::decode_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5 # comment\n# another\n2 1\n255\n\x07\x08";
        let img = EyeImage::decode_pnm(bytes).unwrap();
        assert_eq!(img.data(), &[7, 8]);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let err = EyeImage::decode_pnm(b"P5\n2 2\n255\n\x00\x01").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(EyeImage::decode_pnm(b"P5\n2").is_err());
        assert!(EyeImage::decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(EyeImage::decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = EyeImage::from_raw(3, 2, 1, vec![10, 20, 30, 40, 50, 60]).unwrap();
        assert_eq!(img.resized(3, 2).unwrap(), img);
        let flat = EyeImage::from_raw(4, 4, 3, vec![77; 48]).unwrap();
        let r = flat.resized(7, 3).unwrap();
        assert!(r.data().iter().all(|&v| v == 77));
    }
}
