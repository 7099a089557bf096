//! Matrix and image file formats.
//!
//! * Dense CSV, row-major. An empty cell or `NaN` marks an unobserved entry.
//! * Coordinate triplets: a `coo m n` header followed by `i,j,value` lines
//!   (0-based); entries not listed are unobserved.
//! * Netpbm grayscale (P2/P5) and color (P3/P6) images.
//!
//! Reals are written with 17 significant digits so that a write/read cycle is
//! lossless.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::{Mask, MaskedMatrix};

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_real(cell: &str, line: usize) -> Result<f64> {
    cell.parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("`{cell}`: {e}"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Coo,
}

impl MatrixFormat {
    /// Guesses the format from the first non-empty line.
    pub fn sniff(text: &str) -> Self {
        match text.lines().find(|l| !l.trim().is_empty()) {
            Some(l) if l.trim_start().starts_with("coo") => MatrixFormat::Coo,
            _ => MatrixFormat::Csv,
        }
    }
}

pub fn read_csv<R: BufRead>(reader: R) -> Result<MaskedMatrix> {
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    Ok(None)
                } else {
                    parse_real(cell, idx + 1).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} cells, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "empty matrix".into(),
        });
    }
    let (m, n) = (rows.len(), rows[0].len());
    let values = DMatrix::from_fn(m, n, |i, j| rows[i][j].unwrap_or(0.0));
    let mask = Mask::from_fn(m, n, |i, j| rows[i][j].is_some());
    MaskedMatrix::new(values, mask)
}

pub fn read_coo<R: BufRead>(reader: R) -> Result<MaskedMatrix> {
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (m, n) = match lines.next() {
        Some((idx, line)) => {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["coo", m, n] => (
                    m.parse::<usize>().map_err(|e| Error::Parse {
                        line: idx + 1,
                        message: e.to_string(),
                    })?,
                    n.parse::<usize>().map_err(|e| Error::Parse {
                        line: idx + 1,
                        message: e.to_string(),
                    })?,
                ),
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: "expected header `coo m n`".into(),
                    })
                }
            }
        }
        None => {
            return Err(Error::Parse {
                line: 0,
                message: "missing header".into(),
            })
        }
    };
    let mut values = DMatrix::zeros(m, n);
    let mut mask = Mask::from_element(m, n, false);
    for (idx, line) in lines {
        let line = line?;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let [i, j, v] = cells.as_slice() else {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected `i,j,value`".into(),
            });
        };
        let index = |s: &str, bound: usize| -> Result<usize> {
            let k = s.parse::<usize>().map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if k >= bound {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("index {k} out of range {bound}"),
                });
            }
            Ok(k)
        };
        let (i, j) = (index(i, m)?, index(j, n)?);
        let v = parse_real(v, idx + 1)?;
        if !v.is_nan() {
            values[(i, j)] = v;
            mask[(i, j)] = true;
        }
    }
    MaskedMatrix::new(values, mask)
}

pub fn read_matrix_file(
    path: &Path,
    format: Option<MatrixFormat>,
) -> Result<(MaskedMatrix, MatrixFormat)> {
    let text = fs::read_to_string(path)?;
    let format = format.unwrap_or_else(|| MatrixFormat::sniff(&text));
    let m = match format {
        MatrixFormat::Csv => read_csv(text.as_bytes())?,
        MatrixFormat::Coo => read_coo(text.as_bytes())?,
    };
    Ok((m, format))
}

/// Dense CSV of every entry.
pub fn write_csv<W: Write>(mut w: W, x: &DMatrix<f64>) -> Result<()> {
    for i in 0..x.nrows() {
        let line: Vec<String> = x.row(i).iter().map(|&v| fmt_real(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Dense CSV with `NaN` in unobserved cells.
pub fn write_csv_masked<W: Write>(mut w: W, m: &MaskedMatrix) -> Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|j| {
                if m.mask()[(i, j)] {
                    fmt_real(m.values()[(i, j)])
                } else {
                    "NaN".to_string()
                }
            })
            .collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Triplets for every entry, row-major.
pub fn write_coo<W: Write>(mut w: W, x: &DMatrix<f64>) -> Result<()> {
    writeln!(w, "coo {} {}", x.nrows(), x.ncols())?;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            writeln!(w, "{i},{j},{}", fmt_real(x[(i, j)]))?;
        }
    }
    Ok(())
}

/// Triplets for observed entries only.
pub fn write_coo_masked<W: Write>(mut w: W, m: &MaskedMatrix) -> Result<()> {
    writeln!(w, "coo {} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m.mask()[(i, j)] {
                writeln!(w, "{i},{j},{}", fmt_real(m.values()[(i, j)]))?;
            }
        }
    }
    Ok(())
}

pub fn write_matrix<W: Write>(w: W, x: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => write_csv(w, x),
        MatrixFormat::Coo => write_coo(w, x),
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "path has no file name",
        ))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A Netpbm image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub channels: usize,
    pub data: Vec<u16>,
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_uint(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("expected an unsigned integer"))
    }
}

fn malformed(msg: &str) -> Error {
    Error::Parse {
        line: 0,
        message: format!("malformed image: {msg}"),
    }
}

impl Image {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 || bytes[0] != b'P' {
            return Err(malformed("missing magic number"));
        }
        let (channels, binary) = match bytes[1] {
            b'2' => (1, false),
            b'3' => (3, false),
            b'5' => (1, true),
            b'6' => (3, true),
            _ => return Err(malformed("unsupported magic number")),
        };
        let mut t = Tokens { bytes, pos: 2 };
        let width = t.next_uint()?;
        let height = t.next_uint()?;
        let maxval = t.next_uint()?;
        if width == 0 || height == 0 || maxval == 0 || maxval > u16::MAX as usize {
            return Err(malformed("bad header values"));
        }
        let count = width * height * channels;
        let mut data = Vec::with_capacity(count);
        if binary {
            // Exactly one whitespace byte separates the header from the raster.
            let start = t.pos + 1;
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let raster = bytes
                .get(start..start + need)
                .ok_or_else(|| malformed("truncated raster"))?;
            if wide {
                data.extend(
                    raster
                        .chunks_exact(2)
                        .map(|c| u16::from_be_bytes([c[0], c[1]])),
                );
            } else {
                data.extend(raster.iter().map(|&b| b as u16));
            }
        } else {
            for _ in 0..count {
                data.push(t.next_uint()? as u16);
            }
        }
        if data.iter().any(|&v| v as usize > maxval) {
            return Err(malformed("sample exceeds maxval"));
        }
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            channels,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }

    pub fn encode(&self, binary: bool) -> Vec<u8> {
        let magic = match (self.channels, binary) {
            (1, false) => "P2",
            (1, true) => "P5",
            (_, false) => "P3",
            (_, true) => "P6",
        };
        let mut out =
            format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if binary {
            for &v in &self.data {
                if self.maxval > 255 {
                    out.extend_from_slice(&v.to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        } else {
            let per_line = self.width * self.channels;
            for row in self.data.chunks(per_line) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        out
    }

    /// One channel as a `height x width` matrix scaled into `[0, 1]`.
    pub fn channel(&self, c: usize) -> DMatrix<f64> {
        let scale = self.maxval as f64;
        DMatrix::from_fn(self.height, self.width, |i, j| {
            self.data[(i * self.width + j) * self.channels + c] as f64 / scale
        })
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B` in `[0, 1]`; the channel itself for gray images.
    pub fn luma(&self) -> DMatrix<f64> {
        if self.channels == 1 {
            return self.channel(0);
        }
        self.channel(0) * 0.299 + self.channel(1) * 0.587 + self.channel(2) * 0.114
    }

    /// Quantizes `[0, 1]` channel matrices back into an image.
    pub fn from_channels(channels: &[DMatrix<f64>], maxval: u16) -> Result<Self> {
        let first = channels.first().ok_or_else(|| malformed("no channels"))?;
        let (height, width) = first.shape();
        if channels.iter().any(|c| c.shape() != (height, width)) {
            return Err(malformed("channel shapes differ"));
        }
        let scale = maxval as f64;
        let mut data = Vec::with_capacity(height * width * channels.len());
        for i in 0..height {
            for j in 0..width {
                for c in channels {
                    let v = (c[(i, j)].clamp(0.0, 1.0) * scale).round();
                    data.push(v as u16);
                }
            }
        }
        Ok(Self {
            width,
            height,
            maxval,
            channels: channels.len(),
            data,
        })
    }
}
