//! Binary PPM (P6) and PGM (P5) readers/writers.
//!
//! Depth maps use 16-bit P5 with maxval 65535, stored big-endian per the
//! PGM specification, value = millimeters, 0 = invalid.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PnmError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected}, found {found:?}")]
    BadMagic {
        path: String,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: malformed header: {msg}")]
    Malformed { path: String, msg: String },
    #[error("{path}: unsupported maxval {maxval} (expected {expected})")]
    Maxval {
        path: String,
        maxval: u32,
        expected: u32,
    },
    #[error("{path}: pixel data truncated (expected {expected} bytes, got {got})")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> PnmError {
    PnmError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write an 8-bit RGB image as binary PPM (P6, maxval 255), interleaved
/// row-major.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<(), PnmError> {
    assert_eq!(rgb.len(), 3 * w * h);
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n").map_err(|e| io_err(path, e))?;
    out.write_all(rgb).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Write a 16-bit grayscale image as binary PGM (P5, maxval 65535,
/// big-endian samples).
pub fn write_pgm16(path: &Path, w: usize, h: usize, values: &[u16]) -> Result<(), PnmError> {
    assert_eq!(values.len(), w * h);
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{w} {h}\n65535\n").map_err(|e| io_err(path, e))?;
    for v in values {
        out.write_all(&v.to_be_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Write an 8-bit grayscale image as binary PGM (P5, maxval 255).
pub fn write_pgm8(path: &Path, w: usize, h: usize, values: &[u8]) -> Result<(), PnmError> {
    assert_eq!(values.len(), w * h);
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{w} {h}\n255\n").map_err(|e| io_err(path, e))?;
    out.write_all(values).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Parse a PNM header: magic, up to `n_fields` ASCII integers separated by
/// whitespace/comments, then a single whitespace byte before binary data.
fn parse_header(
    path: &Path,
    bytes: &[u8],
    expected_magic: &'static str,
) -> Result<(Vec<u32>, usize), PnmError> {
    if bytes.len() < 2 || &bytes[..2] != expected_magic.as_bytes() {
        let found = bytes
            .get(..2)
            .map(|b| String::from_utf8_lossy(b).into_owned())
            .unwrap_or_default();
        return Err(PnmError::BadMagic {
            path: path.display().to_string(),
            expected: expected_magic,
            found,
        });
    }
    let mut fields = Vec::with_capacity(3);
    let mut i = 2;
    while fields.len() < 3 {
        // Skip whitespace and comments.
        loop {
            match bytes.get(i) {
                Some(b) if b.is_ascii_whitespace() => i += 1,
                Some(b'#') => {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                }
                _ => break,
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(PnmError::Malformed {
                path: path.display().to_string(),
                msg: format!("expected integer at byte {i}"),
            });
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap();
        fields.push(text.parse::<u32>().map_err(|_| PnmError::Malformed {
            path: path.display().to_string(),
            msg: format!("integer out of range: {text}"),
        })?);
    }
    // Exactly one whitespace byte separates the header from binary data.
    match bytes.get(i) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields, i + 1)),
        _ => Err(PnmError::Malformed {
            path: path.display().to_string(),
            msg: "missing whitespace after maxval".into(),
        }),
    }
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>), PnmError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let (fields, data_at) = parse_header(path, &bytes, "P6")?;
    let (w, h, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval != 255 {
        return Err(PnmError::Maxval {
            path: path.display().to_string(),
            maxval,
            expected: 255,
        });
    }
    let expected = 3 * w * h;
    let data = &bytes[data_at..];
    if data.len() < expected {
        return Err(PnmError::Truncated {
            path: path.display().to_string(),
            expected,
            got: data.len(),
        });
    }
    Ok((w, h, data[..expected].to_vec()))
}

pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>), PnmError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let (fields, data_at) = parse_header(path, &bytes, "P5")?;
    let (w, h, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval != 65535 {
        return Err(PnmError::Maxval {
            path: path.display().to_string(),
            maxval,
            expected: 65535,
        });
    }
    let expected = 2 * w * h;
    let data = &bytes[data_at..];
    if data.len() < expected {
        return Err(PnmError::Truncated {
            path: path.display().to_string(),
            expected,
            got: data.len(),
        });
    }
    let values = data[..expected]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((w, h, values))
}
