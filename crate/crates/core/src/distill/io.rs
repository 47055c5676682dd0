//! Rosetta set text files: `# key=value` header lines, a column header,
//! then one row per pair holding the source row index, `x̂` and `ẑ`
//! written with 17 significant digits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::DistillError;
use crate::linalg::Matrix;
use crate::vae::RosettaSet;

const FORMAT_TAG: &str = "rosetta-set 1";

pub fn write_rosetta<W: Write>(set: &RosettaSet, mut out: W) -> Result<(), DistillError> {
    writeln!(out, "# format={FORMAT_TAG}")?;
    writeln!(out, "# selector={}", set.selector)?;
    writeln!(out, "# k={}", set.len())?;
    writeln!(out, "# seed={}", set.seed)?;
    writeln!(out, "# source_digest={}", set.source_digest)?;
    writeln!(out, "# input_dim={}", set.input_dim())?;
    writeln!(out, "# latent_dim={}", set.latent_dim())?;
    let mut header = vec!["index".to_string()];
    header.extend((0..set.input_dim()).map(|i| format!("x{i}")));
    header.extend((0..set.latent_dim()).map(|i| format!("z{i}")));
    writeln!(out, "{}", header.join(","))?;
    for r in 0..set.len() {
        let (x, z) = set.pair(r);
        let mut cells = vec![set.source_indices[r].to_string()];
        cells.extend(x.iter().chain(z).map(|v| format!("{v:.16e}")));
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rosetta<R: BufRead>(input: R) -> Result<RosettaSet, DistillError> {
    let mut fields = std::collections::BTreeMap::new();
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut seen_columns = false;
    let mut last_line = 0;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line?;
        let parse_err = |message: String| DistillError::Parse { line: line_no, message };
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv
                .trim()
                .split_once('=')
                .ok_or_else(|| parse_err("header line without `=`".into()))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_columns {
            seen_columns = true;
            continue;
        }
        let mut cells = line.split(',');
        let index = cells
            .next()
            .and_then(|c| c.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err("bad row index".into()))?;
        let values = cells
            .map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err("non-numeric cell".into()))?;
        rows.push((line_no, index, values));
    }
    let get = |key: &str| {
        fields.get(key).cloned().ok_or_else(|| DistillError::Parse {
            line: last_line,
            message: format!("missing header field `{key}`"),
        })
    };
    let num = |key: &str| -> Result<u64, DistillError> {
        get(key)?.parse().map_err(|_| DistillError::Parse {
            line: last_line,
            message: format!("header field `{key}` is not an integer"),
        })
    };
    if get("format")? != FORMAT_TAG {
        return Err(DistillError::Parse {
            line: 1,
            message: "unsupported format".into(),
        });
    }
    let m = num("input_dim")? as usize;
    let d = num("latent_dim")? as usize;
    let k = num("k")? as usize;
    if rows.len() != k {
        return Err(DistillError::Parse {
            line: last_line,
            message: format!("header says k={k}, found {} rows", rows.len()),
        });
    }
    let mut xs = Vec::with_capacity(k * m);
    let mut zs = Vec::with_capacity(k * d);
    let mut indices = Vec::with_capacity(k);
    for (line, idx, values) in rows {
        if values.len() != m + d {
            return Err(DistillError::Parse {
                line,
                message: format!("{} values, expected {}", values.len(), m + d),
            });
        }
        indices.push(idx);
        xs.extend_from_slice(&values[..m]);
        zs.extend_from_slice(&values[m..]);
    }
    let inputs = Matrix::new(k, m, xs).map_err(|e| DistillError::Mismatch(e.to_string()))?;
    let latents = Matrix::new(k, d, zs).map_err(|e| DistillError::Mismatch(e.to_string()))?;
    Ok(RosettaSet::new(
        inputs,
        latents,
        get("selector")?,
        get("source_digest")?,
        num("seed")?,
        indices,
    )?)
}

pub fn save_rosetta(set: &RosettaSet, path: &Path) -> Result<(), DistillError> {
    write_rosetta(set, BufWriter::new(File::create(path)?))
}

pub fn load_rosetta(path: &Path) -> Result<RosettaSet, DistillError> {
    read_rosetta(BufReader::new(File::open(path)?))
}
