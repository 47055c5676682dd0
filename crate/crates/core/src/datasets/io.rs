//! Delimited-text and raw little-endian matrix files.
//!
//! Delimited files may start with a header naming each column's role,
//! either `feature`/`label` or `name:feature`/`name:label`. A first row
//! that parses as numbers is data. Blank lines and lines starting with `#`
//! are skipped. Cells are split on commas when the line has any, otherwise
//! on whitespace.
//!
//! Raw files hold `rows` and `cols` as little-endian `u64`, then the
//! row-major `f64` payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TabularFormat {
    Delimited,
    Raw,
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Feature,
    Label,
}

fn split_cells(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_role(cell: &str) -> Option<Role> {
    let role = cell.rsplit(':').next().unwrap_or(cell).trim().to_ascii_lowercase();
    match role.as_str() {
        "feature" => Some(Role::Feature),
        "label" => Some(Role::Label),
        _ => None,
    }
}

pub fn read_delimited<R: BufRead>(input: R) -> Result<Dataset, DatasetError> {
    let mut roles: Option<Vec<Role>> = None;
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    let mut first = true;
    for (i, line) in input.lines().enumerate() {
        let row = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells = split_cells(trimmed);
        if first {
            first = false;
            if cells.iter().any(|c| c.parse::<f64>().is_err()) {
                let parsed: Option<Vec<Role>> = cells.iter().map(|c| parse_role(c)).collect();
                let parsed = parsed.ok_or_else(|| DatasetError::Parse {
                    row,
                    message: "header cells must be `feature` or `label` roles".into(),
                })?;
                if parsed.iter().filter(|r| **r == Role::Label).count() > 1 {
                    return Err(DatasetError::Parse {
                        row,
                        message: "at most one label column".into(),
                    });
                }
                if !parsed.contains(&Role::Feature) {
                    return Err(DatasetError::Parse {
                        row,
                        message: "no feature columns".into(),
                    });
                }
                width = Some(parsed.len());
                roles = Some(parsed);
                continue;
            }
        }
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(DatasetError::Ragged {
                row,
                expected,
                got: cells.len(),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            let is_label = roles.as_ref().is_some_and(|r| r[c] == Role::Label);
            if is_label {
                let v = cell.parse::<usize>().map_err(|_| DatasetError::Parse {
                    row,
                    message: format!("label `{cell}` is not a nonnegative integer"),
                })?;
                labels.push(v);
            } else {
                let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::Parse {
                    row,
                    message: format!("cell `{cell}` is not a finite number"),
                })?;
                data.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DatasetError::Empty);
    }
    let has_label = roles.as_ref().is_some_and(|r| r.contains(&Role::Label));
    let cols = data.len() / rows;
    let inputs = Matrix::new(rows, cols, data).expect("validated cells");
    Dataset::new(inputs, has_label.then_some(labels))
}

/// Writes a header of roles, then one row per sample with 17 significant
/// digits so values read back bitwise.
pub fn write_delimited<W: Write>(data: &Dataset, mut out: W) -> Result<(), DatasetError> {
    let mut header: Vec<&str> = vec!["feature"; data.dim()];
    if data.labels.is_some() {
        header.push("label");
    }
    writeln!(out, "{}", header.join(","))?;
    for r in 0..data.len() {
        let mut cells: Vec<String> = data.inputs.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(l) = &data.labels {
            cells.push(l[r].to_string());
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_raw<R: Read>(mut input: R) -> Result<Dataset, DatasetError> {
    let mut word = [0u8; 8];
    let mut header = [0u64; 2];
    for h in &mut header {
        input.read_exact(&mut word).map_err(|_| DatasetError::Empty)?;
        *h = u64::from_le_bytes(word);
    }
    let [rows, cols] = header.map(|v| v as usize);
    if rows == 0 || cols == 0 {
        return Err(DatasetError::Empty);
    }
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
    for row in 0..rows {
        for _ in 0..cols {
            input.read_exact(&mut word).map_err(|_| DatasetError::Parse {
                row: row + 1,
                message: "payload truncated".into(),
            })?;
            let v = f64::from_le_bytes(word);
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    row: row + 1,
                    message: "non-finite value".into(),
                });
            }
            data.push(v);
        }
    }
    if input.read(&mut word)? != 0 {
        return Err(DatasetError::Parse {
            row: rows,
            message: "trailing bytes after payload".into(),
        });
    }
    Dataset::new(Matrix::new(rows, cols, data).expect("validated cells"), None)
}

pub fn write_raw<W: Write>(data: &Dataset, mut out: W) -> Result<(), DatasetError> {
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    out.write_all(&(data.dim() as u64).to_le_bytes())?;
    for v in data.inputs.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_tabular(path: &Path, format: TabularFormat) -> Result<Dataset, DatasetError> {
    let file = BufReader::new(File::open(path)?);
    match format {
        TabularFormat::Delimited => read_delimited(file),
        TabularFormat::Raw => read_raw(file),
    }
}

pub fn save_tabular(data: &Dataset, path: &Path, format: TabularFormat) -> Result<(), DatasetError> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        TabularFormat::Delimited => write_delimited(data, file),
        TabularFormat::Raw => write_raw(data, file),
    }
}
