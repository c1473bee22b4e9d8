//! Binary grid dumps: one JSON header line, a newline, then the values as
//! row-major little-endian f64.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub name: String,
    pub shape: Vec<usize>,
    /// Half-width of the cube the nodes fill, when the grid is spatial.
    pub half_width: Option<f64>,
    pub dtype: String,
    pub order: String,
}

impl GridHeader {
    pub fn new(name: &str, shape: Vec<usize>, half_width: Option<f64>) -> Self {
        GridHeader { name: name.to_string(), shape, half_width, dtype: "f64le".into(), order: "row-major".into() }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidSpec(format!("grid file: {e}"))
}

pub fn write_grid<W: Write>(mut w: W, header: &GridHeader, values: &[f64]) -> Result<()> {
    if header.len() != values.len() {
        return Err(Error::GridMismatch(format!("header holds {} values, got {}", header.len(), values.len())));
    }
    let line = serde_json::to_string(header).map_err(io_err)?;
    w.write_all(line.as_bytes()).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)?;
    let mut bytes = Vec::with_capacity(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(io_err)
}

pub fn read_grid<R: BufRead>(mut r: R) -> Result<(GridHeader, Vec<f64>)> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    let header: GridHeader = serde_json::from_str(line.trim_end()).map_err(io_err)?;
    if header.dtype != "f64le" || header.order != "row-major" {
        return Err(io_err(format!("unsupported layout {} / {}", header.dtype, header.order)));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() != 8 * header.len() {
        return Err(Error::GridMismatch(format!("expected {} bytes of data, found {}", 8 * header.len(), bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}
