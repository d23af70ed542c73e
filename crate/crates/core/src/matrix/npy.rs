//! Minimal reader/writer for the numpy `.npy` array container.
//!
//! Only what the activation interchange needs is supported: two-dimensional,
//! C-order, little-endian `f4`/`f8` payloads. Versions 1.0 through 3.0 are
//! accepted on read; files are always written as version 1.0.

use std::io::{self, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            other => Err(Error::Format(format!(
                "unsupported dtype '{other}' (expected '<f4' or '<f8')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Reads a 2-D float array, upcasting `f4` payloads to `f64`.
pub fn read_array<R: Read>(reader: &mut R) -> Result<Array2<f64>> {
    let header = read_header(reader)?;
    if header.fortran_order {
        return Err(Error::Format("Fortran-order arrays are not supported".into()));
    }
    let (rows, cols) = match header.shape.as_slice() {
        &[r, c] => (r, c),
        other => {
            return Err(Error::Format(format!(
                "expected a 2-D array, got shape {other:?}"
            )))
        }
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let mut payload = vec![0u8; count * header.dtype.width()];
    reader.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(format!(
            "payload truncated: expected {count} elements of {}",
            header.dtype.descr()
        )),
        _ => Error::Io(e),
    })?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }

    let values: Vec<f64> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

/// Writes `array` as a version 1.0 `.npy` file in C order.
pub fn write_array<W: Write>(writer: &mut W, array: &Array2<f64>, dtype: Dtype) -> io::Result<()> {
    let (rows, cols) = array.dim();
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({rows}, {cols}), }}",
        dtype.descr()
    );
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    let header_len = dict.len() + padding + 1;

    let mut out = Vec::with_capacity(unpadded + padding + rows * cols * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    for v in array.iter() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    writer.write_all(&out)
}

fn read_header<R: Read>(reader: &mut R) -> Result<Header> {
    let mut magic = [0u8; 6];
    read_exact_or_format(reader, &mut magic, "file too short for magic")?;
    if &magic != MAGIC {
        return Err(Error::Format("missing NUMPY magic prefix".into()));
    }
    let mut version = [0u8; 2];
    read_exact_or_format(reader, &mut version, "file too short for version")?;
    let header_len = match version[0] {
        1 => {
            let mut len = [0u8; 2];
            read_exact_or_format(reader, &mut len, "file too short for header length")?;
            u16::from_le_bytes(len) as usize
        }
        2 | 3 => {
            let mut len = [0u8; 4];
            read_exact_or_format(reader, &mut len, "file too short for header length")?;
            u32::from_le_bytes(len) as usize
        }
        v => return Err(Error::Format(format!("unsupported npy version {v}.{}", version[1]))),
    };
    let mut raw = vec![0u8; header_len];
    read_exact_or_format(reader, &mut raw, "header truncated")?;
    let text = String::from_utf8(raw).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    parse_dict(text.trim_end())
}

fn read_exact_or_format<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(what.to_string()),
        _ => Error::Io(e),
    })
}

/// Parses the python-literal header dict, e.g.
/// `{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }`.
fn parse_dict(text: &str) -> Result<Header> {
    let body = text
        .strip_prefix('{')
        .and_then(|t| t.trim_end().strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("header is not a dict: {text}")))?;

    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;
    let mut rest = body.trim();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest)?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| Error::Format(format!("expected ':' after key '{key}'")))?
            .trim_start();
        let consumed = match key {
            "descr" => {
                let (value, after) = take_quoted(after)?;
                descr = Some(Dtype::parse(value)?);
                after
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran_order = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran_order = Some(true);
                    a
                } else {
                    return Err(Error::Format("fortran_order must be True or False".into()));
                }
            }
            "shape" => {
                let inner = after
                    .strip_prefix('(')
                    .ok_or_else(|| Error::Format("shape must be a tuple".into()))?;
                let close = inner
                    .find(')')
                    .ok_or_else(|| Error::Format("unterminated shape tuple".into()))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad shape entry '{s}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(Error::Format(format!("unexpected header key '{other}'"))),
        };
        rest = consumed.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }

    Ok(Header {
        dtype: descr.ok_or_else(|| Error::Format("header missing 'descr'".into()))?,
        fortran_order: fortran_order
            .ok_or_else(|| Error::Format("header missing 'fortran_order'".into()))?,
        shape: shape.ok_or_else(|| Error::Format("header missing 'shape'".into()))?,
    })
}

fn take_quoted(text: &str) -> Result<(&str, &str)> {
    let quote = text
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| Error::Format(format!("expected quoted string at '{text}'")))?;
    let inner = &text[1..];
    let end = inner
        .find(quote)
        .ok_or_else(|| Error::Format("unterminated string in header".into()))?;
    Ok((&inner[..end], &inner[end + 1..]))
}
