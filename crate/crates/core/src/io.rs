//! CLMX binary matrix files and plain CSV import/export.
//!
//! CLMX layout (all integers little-endian):
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `b"CLMX"`                    |
//! | 4      | 1    | version, currently `1`             |
//! | 5      | 1    | dtype: `0` = f32, `1` = f64        |
//! | 6      | 2    | reserved, `0`                      |
//! | 8      | 8    | rows (u64)                         |
//! | 16     | 8    | cols (u64)                         |
//! | 24     | ...  | rows x cols scalars, row-major, LE |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matcore::{DenseMatrix, Precision};

pub const MAGIC: [u8; 4] = *b"CLMX";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

/// Matrices above this many entries are refused by the CSV path.
pub const CSV_MAX_ENTRIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClmxHeader {
    pub precision: Precision,
    pub rows: usize,
    pub cols: usize,
}

impl ClmxHeader {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5] = match self.precision {
            Precision::Single => 0,
            Precision::Double => 1,
        };
        out[8..16].copy_from_slice(&(self.rows as u64).to_le_bytes());
        out[16..24].copy_from_slice(&(self.cols as u64).to_le_bytes());
        out
    }

    fn decode(bytes: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes[..4] != MAGIC {
            return Err(bad("missing CLMX magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let precision = match bytes[5] {
            0 => Precision::Single,
            1 => Precision::Double,
            other => return Err(bad(format!("unknown dtype code {other}"))),
        };
        if bytes[6..8] != [0, 0] {
            return Err(bad("reserved bytes are not zero".into()));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let rows = usize::try_from(rows).map_err(|_| bad("row count overflows usize".into()))?;
        let cols = usize::try_from(cols).map_err(|_| bad("column count overflows usize".into()))?;
        if rows == 0 || cols == 0 {
            return Err(bad(format!("empty matrix {rows}x{cols}")));
        }
        Ok(Self {
            precision,
            rows,
            cols,
        })
    }

    pub fn scalar_bytes(&self) -> usize {
        match self.precision {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

pub fn write_clmx_to<W: Write>(mut out: W, m: &DenseMatrix) -> Result<()> {
    let header = ClmxHeader {
        precision: m.precision(),
        rows: m.rows(),
        cols: m.cols(),
    };
    out.write_all(&header.encode())?;
    if let Some(d) = m.as_f64() {
        for v in d {
            out.write_all(&v.to_le_bytes())?;
        }
    } else if let Some(d) = m.as_f32() {
        for v in d {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_clmx(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_clmx_to(BufWriter::new(File::create(path)?), m)
}

fn read_header<R: Read>(input: &mut R, path: &Path) -> Result<ClmxHeader> {
    let mut bytes = [0u8; HEADER_LEN];
    input.read_exact(&mut bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: format!("truncated header: {e}"),
    })?;
    ClmxHeader::decode(&bytes, path)
}

fn read_rows<R: Read>(
    input: &mut R,
    header: &ClmxHeader,
    rows: usize,
    path: &Path,
) -> Result<DenseMatrix> {
    let count = rows * header.cols;
    let mut bytes = vec![0u8; count * header.scalar_bytes()];
    input.read_exact(&mut bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: format!("truncated payload: {e}"),
    })?;
    let result = match header.precision {
        Precision::Double => DenseMatrix::from_vec_f64(
            rows,
            header.cols,
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Precision::Single => DenseMatrix::from_vec_f32(
            rows,
            header.cols,
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    result.map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn read_clmx_from<R: Read>(mut input: R, path: &Path) -> Result<DenseMatrix> {
    let header = read_header(&mut input, path)?;
    let m = read_rows(&mut input, &header, header.rows, path)?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "trailing bytes after payload".into(),
        });
    }
    Ok(m)
}

pub fn read_clmx(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    read_clmx_from(BufReader::new(File::open(path)?), path)
}

pub fn read_clmx_header(path: impl AsRef<Path>) -> Result<ClmxHeader> {
    let path = path.as_ref();
    read_header(&mut BufReader::new(File::open(path)?), path)
}

/// Streams a CLMX file as consecutive row blocks of at most `block_rows` rows.
pub struct ClmxRowBlocks {
    reader: BufReader<File>,
    header: ClmxHeader,
    path: PathBuf,
    block_rows: usize,
    next_row: usize,
}

impl ClmxRowBlocks {
    pub fn open(path: impl AsRef<Path>, block_rows: usize) -> Result<Self> {
        if block_rows == 0 {
            return Err(Error::InvalidArgument("block size must be >= 1".into()));
        }
        let path = path.as_ref().to_path_buf();
        let mut reader = BufReader::new(File::open(&path)?);
        let header = read_header(&mut reader, &path)?;
        Ok(Self {
            reader,
            header,
            path,
            block_rows,
            next_row: 0,
        })
    }

    pub fn header(&self) -> ClmxHeader {
        self.header
    }
}

impl Iterator for ClmxRowBlocks {
    type Item = Result<DenseMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_row >= self.header.rows {
            return None;
        }
        let rows = self.block_rows.min(self.header.rows - self.next_row);
        self.next_row += rows;
        Some(read_rows(&mut self.reader, &self.header, rows, &self.path))
    }
}

/// Reads a headerless numeric CSV as a double-precision matrix.
pub fn read_csv(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("row {rows} has {} fields, expected {c}", record.len()),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                reason: format!("row {rows}: `{field}` is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
        if data.len() > CSV_MAX_ENTRIES {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("more than {CSV_MAX_ENTRIES} entries; use CLMX"),
            });
        }
    }
    DenseMatrix::from_vec_f64(rows, cols.unwrap_or(0), data)
}

/// Writes `m` as headerless CSV using shortest round-trip formatting.
pub fn write_csv(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    if m.rows() * m.cols() > CSV_MAX_ENTRIES {
        return Err(Error::InvalidArgument(format!(
            "{}x{} exceeds the CSV limit of {CSV_MAX_ENTRIES} entries",
            m.rows(),
            m.cols()
        )));
    }
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols())
            .map(|j| match m.as_f32() {
                Some(d) => d[i * m.cols() + j].to_string(),
                None => m.get(i, j).to_string(),
            })
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a matrix by extension: `.csv` as CSV, anything else as CLMX.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_csv(path),
        _ => read_clmx(path),
    }
}
