//! Binary and CSV file formats.
//!
//! Checkpoint vectors: magic `WSM1`, little-endian u32 version (= 1),
//! u64 element count, then that many little-endian IEEE-754 float64 values.
//!
//! Tensors: magic `FP8T`, u32 version (= 1), u32 rows, u32 cols, u8 layout
//! tag (0 = `[1,128]` activation/gradient blocks, 1 = `[128,128]` weight
//! blocks), then row-major float64 values.
//!
//! CSV files are plain UTF-8 with LF line endings and a header row; floats
//! print in Rust's shortest round-trip form, so emitted files parse back
//! losslessly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sparse_forge_core::fp8::{BlockLayout, Matrix};
use sparse_forge_core::rewards::MatchResult;
use sparse_forge_core::scaling::ArchPoint;

use crate::{CliError, Result};

const WSM_MAGIC: &[u8; 4] = b"WSM1";
const FP8T_MAGIC: &[u8; 4] = b"FP8T";

/// Writes a parameter vector in the checkpoint format.
pub fn write_checkpoint(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + values.len() * 8);
    buf.extend_from_slice(WSM_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}

/// Reads a checkpoint vector, validating magic, version, and length.
pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    let mut file = fs::File::open(path)
        .map_err(|e| CliError::io(&format!("opening {}", path.display()), e))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    if &header[0..4] != WSM_MAGIC {
        return Err(CliError::Validation(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != 1 {
        return Err(CliError::Validation(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    if payload.len() != count * 8 {
        return Err(CliError::Validation(format!(
            "{}: expected {count} float64 values, found {} bytes",
            path.display(),
            payload.len()
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes a tensor in the FP8T container (f64 payload plus layout tag).
pub fn write_tensor(path: &Path, tensor: &Matrix, layout: BlockLayout) -> Result<()> {
    let mut buf = Vec::with_capacity(17 + tensor.data.len() * 8);
    buf.extend_from_slice(FP8T_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(tensor.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(tensor.cols as u32).to_le_bytes());
    buf.push(layout.tag());
    for v in &tensor.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}

/// Reads an FP8T tensor file.
pub fn read_tensor(path: &Path) -> Result<(Matrix, BlockLayout)> {
    let data =
        fs::read(path).map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    if data.len() < 17 || &data[0..4] != FP8T_MAGIC {
        return Err(CliError::Validation(format!(
            "{}: not a tensor file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != 1 {
        return Err(CliError::Validation(format!(
            "{}: unsupported tensor version {version}",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(data[12..16].try_into().unwrap()) as usize;
    let layout = BlockLayout::from_tag(data[16]).map_err(CliError::validation)?;
    let payload = &data[17..];
    if payload.len() != rows * cols * 8 {
        return Err(CliError::Validation(format!(
            "{}: {rows}x{cols} tensor needs {} bytes of payload, found {}",
            path.display(),
            rows * cols * 8,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = Matrix::new(rows, cols, values).map_err(CliError::validation)?;
    Ok((matrix, layout))
}

fn parse_float(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| {
        CliError::Validation(format!("line {line}: cannot parse `{}`: {e}", field.trim()))
    })
}

/// Splits one CSV line; the formats here are numeric, so no quoting rules.
fn split_csv(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

/// Reads `compute,value` points for power-law fitting.
pub fn read_power_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            let header = line.trim().to_ascii_lowercase();
            if header != "compute,value" {
                return Err(CliError::Validation(format!(
                    "{}: expected header `compute,value`, found `{line}`",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        if fields.len() != 2 {
            return Err(CliError::Validation(format!(
                "{}: line {}: expected 2 fields, found {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        points.push((
            parse_float(fields[0], i + 1)?,
            parse_float(fields[1], i + 1)?,
        ));
    }
    Ok(points)
}

/// Reads `compute,activation_ratio,granularity,observed` architecture points.
pub fn read_arch_points(path: &Path) -> Result<Vec<ArchPoint>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            let header = line.trim().to_ascii_lowercase();
            if header != "compute,activation_ratio,granularity,observed" {
                return Err(CliError::Validation(format!(
                    "{}: expected header `compute,activation_ratio,granularity,observed`, found `{line}`",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        if fields.len() != 4 {
            return Err(CliError::Validation(format!(
                "{}: line {}: expected 4 fields, found {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        points.push(ArchPoint {
            compute: parse_float(fields[0], i + 1)?,
            activation_ratio: parse_float(fields[1], i + 1)?,
            granularity: parse_float(fields[2], i + 1)?,
            observed: parse_float(fields[3], i + 1)?,
        });
    }
    Ok(points)
}

/// Reads a one-row `w1,w2,...` schedule CSV (header-less).
pub fn read_schedule_row(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| CliError::Validation(format!("{}: empty schedule", path.display())))?;
    split_csv(line).iter().map(|f| parse_float(f, 1)).collect()
}

/// Reads `i,j,result` arena outcomes; `result` is from `i`'s perspective.
pub fn read_arena_csv(path: &Path) -> Result<Vec<(usize, usize, MatchResult)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            let header = line.trim().to_ascii_lowercase();
            if header != "i,j,result" {
                return Err(CliError::Validation(format!(
                    "{}: expected header `i,j,result`, found `{line}`",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        if fields.len() != 3 {
            return Err(CliError::Validation(format!(
                "{}: line {}: expected 3 fields, found {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let parse_idx = |f: &str| -> Result<usize> {
            f.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Validation(format!("line {}: {e}", i + 1)))
        };
        let result = match fields[2].trim().to_ascii_lowercase().as_str() {
            "win" => MatchResult::Win,
            "loss" => MatchResult::Loss,
            "tie" => MatchResult::Tie,
            other => {
                return Err(CliError::Validation(format!(
                    "line {}: result must be win/loss/tie, found `{other}`",
                    i + 1
                )))
            }
        };
        rows.push((parse_idx(fields[0])?, parse_idx(fields[1])?, result));
    }
    Ok(rows)
}

/// Writes text to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::io(&format!("writing {}", path.display()), e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io("writing stdout", e))
        }
    }
}
