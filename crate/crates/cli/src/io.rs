//! Plain numeric files that only the command line reads or writes.

use std::fmt::Write as _;
use std::path::Path;

use energy_ood::scores::LogitVector;
use energy_ood::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One logit vector per line, comma separated. A first line whose leading
/// cell is not a number is taken as a header and skipped.
pub fn parse_logits(text: &str, path: &Path) -> Result<Vec<LogitVector>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && cells[0].parse::<f64>().is_err() {
            continue;
        }
        if line.trim().is_empty() {
            return Err(parse_err(path, lineno, "blank line"));
        }
        let values = cells
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| parse_err(path, lineno, format!("not a number: {c:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {w} logits, found {}", values.len()),
                ))
            }
            _ => {}
        }
        rows.push(LogitVector::new(values).map_err(|e| parse_err(path, lineno, e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "no logit rows"));
    }
    Ok(rows)
}

pub fn read_logits(path: &Path) -> Result<Vec<LogitVector>> {
    parse_logits(&read_text(path)?, path)
}

pub fn logits_to_csv(rows: &[LogitVector]) -> String {
    let mut s = String::new();
    for r in rows {
        let cells: Vec<String> = r.as_slice().iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// One non-negative integer per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let labels = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, i + 1, format!("not a class index: {l:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    if labels.is_empty() {
        return Err(parse_err(path, 0, "no labels"));
    }
    Ok(labels)
}
