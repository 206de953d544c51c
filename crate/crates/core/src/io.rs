//! Graph files, dataset directories and CSV outputs.
//!
//! Dense graphs are comma-separated `n×n` matrices (`.csv`). Sparse graphs
//! use one `i,j,w` triplet per line with 1-based vertices (`.edges`); each
//! pair may be listed once or in both orders. Lines starting with `#` are
//! comments.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::synth::{LabeledDataset, Manifest};

pub const CSV_SCHEMA: u32 = 1;

/// First line of every CSV this crate writes.
pub fn schema_line() -> String {
    format!("# spiked-laplacian schema_version={CSV_SCHEMA}")
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: cannot read '{}' as a number", field.trim())))
}

pub fn parse_dense(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = content_lines(text)
        .map(|(i, l)| l.split(',').map(|f| parse_f64(f, i)).collect())
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse("empty matrix".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::NotSquare(n, r.len()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Reads triplets; `n` defaults to the largest vertex index.
pub fn parse_triplets(text: &str, n: Option<usize>) -> Result<DMatrix<f64>> {
    let mut entries = Vec::new();
    for (line, l) in content_lines(text) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("line {line}: expected i,j,w")));
        }
        let idx = |s: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(Error::Parse(format!("line {line}: bad vertex index '{}'", s.trim()))),
            }
        };
        entries.push((idx(f[0])?, idx(f[1])?, parse_f64(f[2], line)?));
    }
    let size = n.unwrap_or_else(|| entries.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0));
    if size == 0 {
        return Err(Error::Parse("no edges".into()));
    }
    let mut a = DMatrix::zeros(size, size);
    for (i, j, w) in entries {
        if i >= size || j >= size {
            return Err(Error::Parse(format!("vertex {} exceeds n = {size}", i.max(j) + 1)));
        }
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    Ok(a)
}

/// Reads a graph file by extension: `.edges` for triplets, otherwise dense.
pub fn read_adjacency(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("edges") => parse_triplets(&text, None),
        _ => parse_dense(&text),
    }
}

pub fn is_graph_file(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "edges"))
}

/// Graph files in `dir`, sorted by name.
pub fn graph_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_graph_file(p))
        .collect();
    files.sort();
    Ok(files)
}

pub fn format_dense(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes one dense CSV per graph plus `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let width = ds.adjacency.len().to_string().len().max(3);
    for (s, a) in ds.adjacency.iter().enumerate() {
        fs::write(dir.join(format!("graph_{:0width$}.csv", s + 1)), format_dense(a))?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&ds.manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if m.schema_version != crate::synth::MANIFEST_SCHEMA {
        return Err(Error::SchemaVersion {
            expected: crate::synth::MANIFEST_SCHEMA,
            found: m.schema_version,
        });
    }
    Ok(m)
}

/// CSV text with the schema line, a header and the given rows.
pub fn csv_table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = schema_line();
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Strips comment lines so tables can be parsed back.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}
