//! Minimal 8-bit binary PGM (P5) reader/writer.
//!
//! Deterministic byte output: header is `P5\n{width} {height}\n255\n`
//! followed by row-major pixel bytes, nothing else.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn write_pgm(path: &Path, pixels: &Array2<u8>) -> Result<()> {
    let (h, w) = pixels.dim();
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", w, h)?;
    for row in pixels.rows() {
        for &v in row {
            out.write_all(&[v])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Array2<u8>, String> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // skip whitespace and '#' comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err("not a P5 PGM".into());
    }
    let w: usize = token(bytes)?.parse().map_err(|_| "bad width")?;
    let h: usize = token(bytes)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if bytes.len() < pos + w * h {
        return Err("truncated raster".into());
    }
    let data = bytes[pos..pos + w * h].to_vec();
    Array2::from_shape_vec((h, w), data).map_err(|e| e.to_string())
}

/// Map `[0,1]` scene values to 8-bit pixels (rounded).
pub fn quantize_unit(values: &Array2<f64>) -> Array2<u8> {
    values.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = arr2(&[[0u8, 127, 255], [3, 9, 200]]);
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn rejects_truncated_and_wrong_magic() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = parse_pgm(b"P5\n# made by hand\n2 1\n255\n\x10\x20").unwrap();
        assert_eq!(img, arr2(&[[0x10u8, 0x20]]));
    }

    #[test]
    fn deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pgm");
        let b = dir.path().join("b.pgm");
        let img = arr2(&[[1u8, 2], [3, 4]]);
        write_pgm(&a, &img).unwrap();
        write_pgm(&b, &img).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
