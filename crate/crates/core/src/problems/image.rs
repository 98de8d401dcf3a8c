//! Grayscale grids from plain or binary PGM and from CSV, and PGM mask output.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("empty image".into()));
        }
        if width.checked_mul(height) != Some(data.len()) {
            return Err(Error::Image(format!(
                "{} values do not fill a {width}x{height} grid",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Image(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Decodes a P2 (ASCII) or P5 (binary) graymap of any bit depth.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if !(bytes.starts_with(b"P2") || bytes.starts_with(b"P5")) {
        return Err(Error::Image("not a P2/P5 graymap".into()));
    }
    let img = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Pnm)
        .decode()
        .map_err(|e| Error::Image(e.to_string()))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect();
    GrayImage::new(w as usize, h as usize, data)
}

/// Parses a headerless CSV grid of intensities in `[0, 1]`, one image row per line.
pub fn parse_csv_grid(bytes: &[u8]) -> Result<GrayImage> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Image(e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Image(format!(
                    "row {height} has {} values, expected {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Image(format!("row {height}: cannot parse {field:?}")))?;
            data.push(v);
        }
        height += 1;
    }
    GrayImage::new(width.unwrap_or(0), height, data)
}

/// Dispatches on the file extension (`.csv`, otherwise PGM).
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_csv_grid(&bytes)
    } else {
        parse_pgm(&bytes)
    }
}

/// White (≥ 0.9) is the positive prior, black (≤ 0.1) the negative one, and
/// anything in between is unlabeled.
pub fn labels_from_mask(mask: &GrayImage) -> Vec<i8> {
    mask.data
        .iter()
        .map(|&v| {
            if v >= 0.9 {
                1
            } else if v <= 0.1 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Binary PGM with 255 for `true`.
pub fn encode_pgm_mask(mask: &[bool], width: usize, height: usize) -> Result<Vec<u8>> {
    if width * height != mask.len() {
        return Err(Error::Image(format!(
            "{} pixels do not fill {width}x{height}",
            mask.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    Ok(out)
}

/// Binary 8-bit PGM of intensities in `[0, 1]`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm() {
        let img = parse_pgm(b"P2\n# comment\n3 2\n255\n0 51 255\n255 102 0\n").unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.data, vec![0.0, 0.2, 1.0, 1.0, 0.4, 0.0]);
        let deep = parse_pgm(b"P2\n2 1\n65535\n0 13107\n").unwrap();
        assert_eq!(deep.data, vec![0.0, 0.2]);
    }

    #[test]
    fn binary_pgm_round_trip() {
        let mask = [true, false, false, true, true, false];
        let bytes = encode_pgm_mask(&mask, 3, 2).unwrap();
        let img = parse_pgm(&bytes).unwrap();
        let back: Vec<bool> = img.data.iter().map(|&v| v > 0.5).collect();
        assert_eq!(back, mask);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2 3\n").is_err());
        assert!(parse_pgm(b"").is_err());
    }

    #[test]
    fn csv_grid() {
        let img = parse_csv_grid(b"0, 0.5\n1,0.25\n\n").unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.get(1, 1), 0.25);
        assert!(parse_csv_grid(b"0,1\n0.5\n").is_err());
        assert!(parse_csv_grid(b"0,1.5\n").is_err());
        assert!(parse_csv_grid(b"0,x\n").is_err());
        assert!(parse_csv_grid(b"").is_err());
        assert!(parse_csv_grid(b"nan\n").is_err());
    }

    #[test]
    fn label_levels() {
        let img = GrayImage::new(4, 1, vec![1.0, 0.0, 0.5, 0.95]).unwrap();
        assert_eq!(labels_from_mask(&img), vec![1, -1, 0, 1]);
    }
}
