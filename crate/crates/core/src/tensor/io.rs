//! Plain-text tensor files.
//!
//! ```text
//! #shape 4 3 2
//! #modes patient medication lab
//! 0 1 1 2
//! 3 0 1 1
//! ```
//!
//! Lines starting with `#` are comments except the `#shape` header (required)
//! and an optional `#modes` line. A `<file>.modes` sidecar with one name per
//! line is consulted when the header carries no mode names.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

pub fn read_tensor<R: Read>(reader: R) -> Result<SparseTensor> {
    let mut shape: Option<Vec<usize>> = None;
    let mut names: Option<Vec<String>> = None;
    let mut coords = Vec::new();
    let mut values = Vec::new();

    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("#shape") {
            let dims = rest
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: line_no,
                    reason: format!("bad shape: {e}"),
                })?;
            shape = Some(dims);
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("#modes") {
            names = Some(rest.split_whitespace().map(str::to_string).collect());
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let order = shape
            .as_ref()
            .ok_or_else(|| Error::Parse {
                line: line_no,
                reason: "entry before #shape header".into(),
            })?
            .len();
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != order + 1 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {} fields, found {}", order + 1, fields.len()),
            });
        }
        for f in &fields[..order] {
            coords.push(f.parse::<usize>().map_err(|e| Error::Parse {
                line: line_no,
                reason: format!("bad index {f:?}: {e}"),
            })?);
        }
        values.push(fields[order].parse::<f64>().map_err(|e| Error::Parse {
            line: line_no,
            reason: format!("bad value {:?}: {e}", fields[order]),
        })?);
    }

    let shape = shape.ok_or_else(|| Error::Parse {
        line: 0,
        reason: "missing #shape header".into(),
    })?;
    let t = SparseTensor::from_parts(shape, coords, values)?;
    match names {
        Some(n) => t.with_mode_names(n),
        None => Ok(t),
    }
}

pub fn write_tensor<W: Write>(t: &SparseTensor, mut w: W) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
    writeln!(w, "#shape {}", dims.join(" "))?;
    writeln!(w, "#modes {}", t.mode_names().join(" "))?;
    for (idx, v) in t.entries() {
        for i in idx {
            write!(w, "{i} ")?;
        }
        writeln!(w, "{v}")?;
    }
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<SparseTensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let has_modes = text.lines().any(|l| l.trim_start().starts_with("#modes"));
    let t = read_tensor(text.as_bytes())?;
    let sidecar = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.modes", ext.to_string_lossy()),
        None => "modes".to_string(),
    });
    if !has_modes && sidecar.exists() {
        let names = fs::read_to_string(sidecar)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        return t.with_mode_names(names);
    }
    Ok(t)
}

pub fn write_tensor_file(t: &SparseTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(t, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
