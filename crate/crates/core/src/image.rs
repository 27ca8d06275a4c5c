//! 8-bit RGB raster with binary PPM (P6) input and output.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::BadImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    /// Copies the `w x h` window whose top-left corner is `(x, y)`.
    pub fn sub_image(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if x.checked_add(w).is_none_or(|r| r > self.width) || y.checked_add(h).is_none_or(|b| b > self.height) {
            return Err(Error::BadImage(format!(
                "window {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = row as usize * self.width as usize + x as usize;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize]);
        }
        Self::new(w, h, pixels)
    }

    /// Draws a rectangle outline of the given thickness, clipped to the image.
    /// `(x1, y1)` is inclusive, `(x2, y2)` exclusive.
    pub fn draw_rect(&mut self, x1: i64, y1: i64, x2: i64, y2: i64, thickness: i64, rgb: [u8; 3]) {
        let (w, h) = (i64::from(self.width), i64::from(self.height));
        for y in y1.max(0)..y2.min(h) {
            for x in x1.max(0)..x2.min(w) {
                let border = x < x1 + thickness || x >= x2 - thickness || y < y1 + thickness || y >= y2 - thickness;
                if border {
                    self.put(x as u32, y as u32, rgb);
                }
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P6" {
            return Err(Error::BadImage("not a binary PPM (P6) file".into()));
        }
        let width = parse_number(next_token(bytes, &mut pos)?)?;
        let height = parse_number(next_token(bytes, &mut pos)?)?;
        let maxval = parse_number(next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::BadImage(format!("only 8-bit PPM is supported (maxval {maxval})")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width as usize * height as usize * 3;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::BadImage(format!("raster truncated: need {n} bytes")))?;
        let pixels = raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(width, height, pixels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes).map_err(|e| match e {
            Error::BadImage(m) => Error::BadImage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::BadImage("truncated PPM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(tok: &[u8]) -> Result<u32> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BadImage(format!("bad header field {:?}", String::from_utf8_lossy(tok))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let img = RgbImage::new(2, 1, vec![[1, 2, 3], [250, 128, 0]]).unwrap();
        let bytes = img.to_ppm();
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), img);
        let mut commented = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        commented.extend_from_slice(&[1, 2, 3, 250, 128, 0]);
        assert_eq!(RgbImage::from_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(RgbImage::from_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(RgbImage::from_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(RgbImage::from_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn sub_image_and_rect() {
        let mut img = RgbImage::filled(6, 4, [0, 0, 0]);
        img.put(3, 2, [9, 9, 9]);
        let sub = img.sub_image(2, 1, 3, 2).unwrap();
        assert_eq!((sub.width(), sub.height()), (3, 2));
        assert_eq!(sub.get(1, 1), [9, 9, 9]);
        assert!(img.sub_image(4, 0, 3, 1).is_err());

        img.draw_rect(0, 0, 6, 4, 2, [255, 0, 0]);
        assert_eq!(img.get(0, 0), [255, 0, 0]);
        assert_eq!(img.get(1, 1), [255, 0, 0]);
        assert_eq!(img.get(2, 2), [255, 0, 0]);
        img.draw_rect(-5, -5, 100, 100, 2, [0, 255, 0]);
    }
}
