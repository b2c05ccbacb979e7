//! 8-bit grayscale rasters, boxes, and PGM / PNG codecs.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image must be at least 1x1"));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn contains(&self, b: &BoundingBox) -> bool {
        b.x + b.w <= self.width && b.y + b.h <= self.height
    }

    /// Mean intensity inside `b`.
    pub fn mean_in(&self, b: &BoundingBox) -> f64 {
        let mut sum = 0u64;
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                sum += self.get(x, y) as u64;
            }
        }
        sum as f64 / b.area() as f64
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut reader = BufReader::new(bytes);
        let mut fields = Vec::with_capacity(4);
        let mut token = Vec::new();
        // header: magic, width, height, maxval separated by whitespace; '#' comments
        while fields.len() < 4 {
            let mut byte = [0u8; 1];
            if reader.read(&mut byte).map_err(|e| e.to_string())? == 0 {
                return Err("truncated PGM header".into());
            }
            match byte[0] {
                b'#' if token.is_empty() => {
                    let mut skip = Vec::new();
                    reader
                        .read_until(b'\n', &mut skip)
                        .map_err(|e| e.to_string())?;
                }
                c if c.is_ascii_whitespace() => {
                    if !token.is_empty() {
                        fields.push(String::from_utf8_lossy(&token).into_owned());
                        token.clear();
                    }
                }
                c => token.push(c),
            }
        }
        if fields[0] != "P5" {
            return Err(format!("unsupported PGM magic {:?}", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM field {s:?}"));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(format!("unsupported PGM maxval {maxval}"));
        }
        let mut pixels = Vec::with_capacity(w * h);
        reader
            .read_to_end(&mut pixels)
            .map_err(|e| e.to_string())?;
        if pixels.len() < w * h {
            return Err(format!("expected {} pixel bytes, found {}", w * h, pixels.len()));
        }
        pixels.truncate(w * h);
        Self::new(w, h, pixels).map_err(|e| e.to_string())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes).map_err(|m| Error::format(path, m))
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("buffer length checked at construction");
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        buf.write_to(&mut w, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, e.to_string()))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::new(w as usize, h as usize, gray.into_raw())
    }

    /// Read by extension: `.png` or anything else as PGM.
    pub fn read(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => Self::read_png(path),
            _ => Self::read_pgm(path),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => self.write_png(path),
            _ => self.write_pgm(path),
        }
    }
}

/// Axis-aligned pixel box. `evaluable` is false for ground truth that should
/// neither count as a hit nor as a miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    #[serde(default = "default_true")]
    pub evaluable: bool,
}

fn default_true() -> bool {
    true
}

impl BoundingBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self {
            x,
            y,
            w,
            h,
            evaluable: true,
        }
    }

    pub fn with_evaluable(mut self, evaluable: bool) -> Self {
        self.evaluable = evaluable;
        self
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 > x0 && y1 > y0 {
            (x1 - x0) * (y1 - y0)
        } else {
            0
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let bytes = img.to_pgm();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);

        let mut commented = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        assert_eq!(GrayImage::from_pgm(&commented).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm(b"P5\n2 2\n255\n\x01").is_err());
        assert!(GrayImage::from_pgm(b"P5\n2 2\n65535\n").is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = GrayImage::new(4, 3, (0..12).map(|v| v * 20).collect()).unwrap();
        img.write(&path).unwrap();
        assert_eq!(GrayImage::read(&path).unwrap(), img);
    }

    #[test]
    fn box_geometry() {
        let a = BoundingBox::new(0, 0, 10, 10);
        let b = BoundingBox::new(5, 0, 10, 10);
        assert_eq!(a.intersection_area(&b), 50);
        assert_eq!(a.intersection_area(&BoundingBox::new(10, 0, 5, 5)), 0);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"x":0,"y":0,"w":10,"h":10,"evaluable":true}"#);
    }
}
