//! Minimal RGB raster with binary PPM (P6) I/O.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major, 3 bytes per pixel.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        img.data.chunks_exact_mut(3).for_each(|px| px.copy_from_slice(&rgb));
        img
    }

    pub(crate) fn offset_of(&self, u: u32, v: u32) -> usize {
        (v as usize * self.width as usize + u as usize) * 3
    }

    /// Pixel at column `u`, row `v`.
    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        let o = self.offset_of(u, v);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put(&mut self, u: u32, v: u32, rgb: [u8; 3]) {
        let o = self.offset_of(u, v);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count() == 0
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // Skip whitespace and comments.
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Malformed {
                    line: 1,
                    msg: "truncated PPM header".into(),
                });
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(Error::Malformed {
                line: 1,
                msg: format!("expected P6 magic, found {}", fields[0]),
            });
        }
        let num = |s: &str| {
            s.parse::<u32>().map_err(|e| Error::Malformed {
                line: 1,
                msg: format!("bad PPM header value '{s}': {e}"),
            })
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Malformed {
                line: 1,
                msg: "only 8-bit PPM is supported".into(),
            });
        }
        pos += 1; // single whitespace before the raster
        let len = width as usize * height as usize * 3;
        let data = bytes
            .get(pos..pos + len)
            .ok_or_else(|| Error::Malformed {
                line: 1,
                msg: "truncated PPM raster".into(),
            })?
            .to_vec();
        Ok(Self { width, height, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_ppm(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::file(path, e))
    }
}
