//! File formats: binary PGM (P5), CWF1 weight fields, and Matrix Market
//! coordinate matrices.
//!
//! CWF1 layout, all integers little-endian:
//!
//! | offset | size      | content                                    |
//! |--------|-----------|--------------------------------------------|
//! | 0      | 4         | `CWF1`                                     |
//! | 4      | 4         | `u32` height                               |
//! | 8      | 4         | `u32` width                                |
//! | 12     | 4         | `u32` reserved, written as 0               |
//! | 16     | 48·H·W    | `f64` weights, channel-major (`[k][r][c]`) |
//!
//! Channels are east, west, north, south, from-source, to-terminal.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{CutWeightField, CHANNELS};
use crate::sparse::SparseMatrix;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            maxval: 255,
            pixels,
        })
    }

    /// Intensities scaled to `[0, 1]` by `maxval`.
    pub fn intensities(&self) -> Vec<f64> {
        let max = f64::from(self.maxval);
        self.pixels.iter().map(|&p| f64::from(p) / max).collect()
    }

    /// Quantizes values in `[0, 1]` to `round(255·v)`.
    pub fn from_unit(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
            .collect();
        Self::new(height, width, pixels)
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Reads a P5 header field, skipping whitespace and `#` comments.
fn pgm_token(data: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match data.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while data.get(*pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(parse_err("PGM header truncated")),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos || *pos - start > 9 {
        return Err(parse_err("PGM header field is not a valid number"));
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err("PGM header field is not a valid number"))
}

pub fn parse_pgm(data: &[u8]) -> Result<GrayImage> {
    if !data.starts_with(b"P5") {
        return Err(parse_err("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err("PGM magic must be followed by whitespace"));
    }
    let width = pgm_token(data, &mut pos)?;
    let height = pgm_token(data, &mut pos)?;
    let maxval = pgm_token(data, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(parse_err("PGM dimensions must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err("PGM header must end with one whitespace byte"));
    }
    pos += 1;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| parse_err("PGM dimensions overflow"))?;
    let body = &data[pos..];
    if body.len() < count {
        return Err(parse_err(format!("PGM raster has {} bytes, expected {count}", body.len())));
    }
    let pixels = body[..count].to_vec();
    if pixels.iter().any(|&p| usize::from(p) > maxval) {
        return Err(parse_err("PGM sample exceeds maxval"));
    }
    Ok(GrayImage {
        height,
        width,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

const CWF_MAGIC: &[u8; 4] = b"CWF1";
const CWF_HEADER: usize = 16;

pub fn encode_cwf(w: &CutWeightField) -> Vec<u8> {
    let mut out = Vec::with_capacity(CWF_HEADER + 8 * w.data().len());
    out.extend_from_slice(CWF_MAGIC);
    out.extend_from_slice(&(w.height() as u32).to_le_bytes());
    out.extend_from_slice(&(w.width() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in w.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cwf(data: &[u8]) -> Result<CutWeightField> {
    if data.len() < CWF_HEADER {
        return Err(parse_err("CWF1 header truncated"));
    }
    if &data[..4] != CWF_MAGIC {
        return Err(parse_err("missing CWF1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(data[i..i + 4].try_into().unwrap()) as usize;
    let (height, width) = (word(4), word(8));
    if height == 0 || width == 0 {
        return Err(parse_err("CWF1 dimensions must be positive"));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(CHANNELS * 8))
        .ok_or_else(|| parse_err("CWF1 dimensions overflow"))?;
    let body = &data[CWF_HEADER..];
    if body.len() != expected {
        return Err(parse_err(format!(
            "CWF1 body has {} bytes, expected {expected} for {height}x{width}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    CutWeightField::new(height, width, values)
}

pub fn write_matrix_market(a: &SparseMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", a.rows(), a.cols(), a.nnz());
    for r in 0..a.rows() {
        for (c, v) in a.row(r) {
            let _ = writeln!(out, "{} {} {:e}", r + 1, c + 1, v);
        }
    }
    out
}

/// Reads a coordinate real general matrix. Duplicate entries are summed.
pub fn parse_matrix_market(text: &str) -> Result<SparseMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty Matrix Market input"))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields != ["%%matrixmarket", "matrix", "coordinate", "real", "general"] {
        return Err(parse_err(format!("unsupported Matrix Market header: {header}")));
    }
    let mut body = lines.filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
    let size = body.next().ok_or_else(|| parse_err("missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(format!("bad size line: {size}"))))
        .collect::<Result<_>>()?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(parse_err(format!("size line needs three fields: {size}")));
    };
    let mut triplets = Vec::new();
    for line in body {
        let mut it = line.split_whitespace();
        let (Some(r), Some(c), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(parse_err(format!("bad entry line: {line}")));
        };
        let r: usize = r.parse().map_err(|_| parse_err(format!("bad row index: {r}")))?;
        let c: usize = c.parse().map_err(|_| parse_err(format!("bad column index: {c}")))?;
        let v: f64 = v.parse().map_err(|_| parse_err(format!("bad value: {v}")))?;
        if r == 0 || c == 0 || r > rows || c > cols {
            return Err(parse_err(format!("entry ({r}, {c}) outside {rows}x{cols}")));
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("matrix entry"));
        }
        triplets.push((r - 1, c - 1, v));
        if triplets.len() > nnz {
            return Err(parse_err("more entries than declared"));
        }
    }
    if triplets.len() != nnz {
        return Err(parse_err(format!("declared {nnz} entries, found {}", triplets.len())));
    }
    SparseMatrix::from_triplets(rows, cols, &triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cut_constraints, EdgeKind, GridGraph};

    #[test]
    fn pgm_roundtrip_and_comments() {
        let img = GrayImage::new(2, 3, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let bytes = write_pgm(&img);
        assert_eq!(parse_pgm(&bytes).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n3 2 # dims\n255\n".to_vec();
        commented.extend_from_slice(&img.pixels);
        assert_eq!(parse_pgm(&commented).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_malformed() {
        for bad in [
            &b"P2\n1 1\n255\n\x00"[..],
            b"P5\n1 1\n255\n",
            b"P5\n0 1\n255\n",
            b"P5\n1 1\n65535\n\x00\x00",
            b"P5\n2 1\n7\n\x00\x08",
            b"P5",
            b"P51 1 255 \x00",
        ] {
            assert!(matches!(parse_pgm(bad), Err(Error::Parse(_))), "{bad:?}");
        }
    }

    #[test]
    fn pgm_intensities_and_quantize() {
        let img = GrayImage::from_unit(1, 3, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(img.pixels, vec![0, 128, 255]);
        assert_eq!(img.intensities()[2], 1.0);
    }

    #[test]
    fn cwf_roundtrip() {
        let w = CutWeightField::from_fn(3, 2, |k, r, c| k.channel() as f64 + 0.1 * r as f64 - 0.01 * c as f64);
        let bytes = encode_cwf(&w);
        assert_eq!(bytes.len(), 16 + 6 * 6 * 8);
        assert_eq!(&bytes[..4], b"CWF1");
        let back = decode_cwf(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.get(EdgeKind::ToTerminal, 2, 1), 5.0 + 0.2 - 0.01);
    }

    #[test]
    fn cwf_rejects_malformed() {
        let w = CutWeightField::constant(2, 2, 1.0);
        let good = encode_cwf(&w);
        let mut bad_magic = good.clone();
        bad_magic[3] = b'2';
        let mut nan = good.clone();
        nan[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        let mut huge = good.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_cwf(&good[..10]).is_err());
        assert!(decode_cwf(&good[..good.len() - 1]).is_err());
        assert!(decode_cwf(&bad_magic).is_err());
        assert!(matches!(decode_cwf(&nan), Err(Error::NonFinite(_))));
        assert!(decode_cwf(&huge).is_err());
    }

    #[test]
    fn matrix_market_roundtrip() {
        let g = GridGraph::new(2, 2).unwrap();
        let (a, _) = cut_constraints(&g);
        let text = write_matrix_market(&a);
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n17 39 67\n"));
        assert_eq!(parse_matrix_market(&text).unwrap(), a);
    }

    #[test]
    fn matrix_market_rejects_malformed() {
        let head = "%%MatrixMarket matrix coordinate real general\n";
        for body in ["2 2 1\n3 1 1.0\n", "2 2 2\n1 1 1.0\n", "2 2 1\n1 1 x\n", "2 2\n", "2 2 1\n0 1 1\n", "2 2 1\n1 1 inf\n"] {
            assert!(parse_matrix_market(&format!("{head}{body}")).is_err(), "{body}");
        }
        assert!(parse_matrix_market("%%MatrixMarket matrix array real general\n1 1\n1\n").is_err());
        let ok = parse_matrix_market(&format!("{head}% comment\n2 3 2\n1 3 2.5\n2 1 -1\n")).unwrap();
        assert_eq!(ok.get(0, 2), 2.5);
        assert_eq!(ok.get(1, 0), -1.0);
    }
}
