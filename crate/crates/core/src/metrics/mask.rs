use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Integer label map of one image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::InvalidArgument(format!(
                "label mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(LabelMask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        LabelMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.data[r * self.w + c] = v;
    }

    /// Binary membership of `class` per pixel.
    pub fn class_mask(&self, class: u8) -> Vec<bool> {
        self.data.iter().map(|&v| v == class).collect()
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v as usize >= classes) {
            Some(&v) => Err(Error::LabelOutOfRange {
                label: v as usize,
                classes,
            }),
            None => Ok(()),
        }
    }

    /// Binary PGM (P5), one label per pixel value.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.w, self.h).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if tokens[0] != "P5" {
            return Err(Error::Format(format!(
                "expected PGM magic P5, got {}",
                tokens[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s}")))
        };
        let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        let end = pos + w * h;
        if bytes.len() < end {
            return Err(Error::Format(format!(
                "PGM raster needs {} bytes, got {}",
                w * h,
                bytes.len().saturating_sub(pos)
            )));
        }
        LabelMask::new(h, w, bytes[pos..end].to_vec())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_pgm())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_pgm(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let m = LabelMask::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = m.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(LabelMask::from_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn pgm_header_comments() {
        let bytes = b"P5 # comment\n2 1\n255\n\x01\x00";
        let m = LabelMask::from_pgm(bytes).unwrap();
        assert_eq!(m.data, vec![1, 0]);
    }

    #[test]
    fn pgm_rejects_other_magic() {
        assert!(LabelMask::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
