//! CSV emission and parsing.
//!
//! All numeric output uses exact scientific notation with 18 significant
//! digits, so write-then-read reproduces every f64 bit-exactly. Files carry
//! a header row; time-indexed files lead with a `t` column on the uniform
//! grid i/(T−1).

use crate::error::{Result, StradiffError};
use crate::estimate::{MatchResult, SourceEstimate};
use crate::gp::time_grid;
use crate::tensor::{Shape, Tensor};
use crate::trainer::{PathSnapshot, ReportRow};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        StradiffError::Data(format!("{}:{line}: cannot parse number {s:?}", path.display()))
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| StradiffError::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| StradiffError::io(path.display().to_string(), e))
}

/// T×c matrix with a leading time column; `prefix` names the data columns
/// prefix1..prefixc.
pub fn write_time_matrix(path: &Path, prefix: &str, data: &Tensor) -> Result<()> {
    let (t_len, c) = match data.shape {
        Shape::Matrix(t, c) => (t, c),
        _ => panic!("time matrix must be a matrix"),
    };
    let grid = time_grid(t_len);
    let mut out = String::from("t");
    for j in 1..=c {
        write!(out, ",{prefix}{j}").unwrap();
    }
    out.push('\n');
    for i in 0..t_len {
        out.push_str(&fmt_f64(grid[i]));
        for j in 0..c {
            out.push(',');
            out.push_str(&fmt_f64(data.at(i, j)));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Plain matrix with named columns, no time column.
pub fn write_matrix(path: &Path, prefix: &str, data: &Tensor) -> Result<()> {
    let (rows, cols) = match data.shape {
        Shape::Matrix(r, c) => (r, c),
        _ => panic!("write_matrix expects a matrix"),
    };
    let mut out = String::new();
    for j in 1..=cols {
        if j > 1 {
            out.push(',');
        }
        write!(out, "{prefix}{j}").unwrap();
    }
    out.push('\n');
    for i in 0..rows {
        for j in 0..cols {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(data.at(i, j)));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Reads a CSV with one header row into (header, matrix). Ragged rows or
/// unparsable numbers are data errors.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let Some((_, header_line)) = lines.next() else {
        return Err(StradiffError::Data(format!("{}: empty file", path.display())));
    };
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(StradiffError::Data(format!(
                "{}:{}: expected {cols} fields, found {}",
                path.display(),
                idx + 1,
                fields.len()
            )));
        }
        for f in fields {
            data.push(parse_f64(f, path, idx + 1)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(StradiffError::Data(format!("{}: no data rows", path.display())));
    }
    Ok((header, Tensor::matrix(rows, cols, data)))
}

/// Reads a time-indexed CSV and strips the leading `t` column.
pub fn read_time_matrix(path: &Path) -> Result<Tensor> {
    let (header, full) = read_matrix(path)?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(StradiffError::Data(format!(
            "{}: expected a leading t column, found {:?}",
            path.display(),
            header.first()
        )));
    }
    let (rows, cols) = match full.shape {
        Shape::Matrix(r, c) => (r, c),
        _ => unreachable!(),
    };
    if cols < 2 {
        return Err(StradiffError::Data(format!("{}: no data columns", path.display())));
    }
    let mut data = Vec::with_capacity(rows * (cols - 1));
    for i in 0..rows {
        for j in 1..cols {
            data.push(full.at(i, j));
        }
    }
    Ok(Tensor::matrix(rows, cols - 1, data))
}

/// Per-epoch training report: losses, matched correlations, and both raw and
/// grid-rescaled length-scales.
pub fn write_report(path: &Path, rows: &[ReportRow], n: usize) -> Result<()> {
    let mut out = String::from("epoch,rec,prior,diff,kl,total");
    for j in 1..=n {
        write!(out, ",corr{j}").unwrap();
    }
    for j in 1..=n {
        write!(out, ",ell{j}").unwrap();
    }
    for j in 1..=n {
        write!(out, ",ell_rescaled{j}").unwrap();
    }
    out.push('\n');
    for row in rows {
        let l = &row.losses;
        write!(
            out,
            "{},{},{},{},{},{}",
            l.epoch,
            fmt_f64(l.rec),
            fmt_f64(l.prior),
            fmt_f64(l.diff),
            fmt_f64(l.kl),
            fmt_f64(l.total)
        )
        .unwrap();
        for v in row.corr.iter().chain(row.ell.iter()).chain(row.ell_rescaled.iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// One reverse-chain snapshot: L+1 rows of (τ, x_τ[0..T]).
pub fn write_path(path: &Path, snap: &PathSnapshot) -> Result<()> {
    let t_len = snap.path[0].1.len();
    let mut out = String::from("tau");
    for i in 1..=t_len {
        write!(out, ",x{i}").unwrap();
    }
    out.push('\n');
    for (tau, state) in &snap.path {
        write!(out, "{tau}").unwrap();
        for v in &state.data {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn path_file_name(epoch: usize, branch: usize) -> String {
    format!("paths_epoch{epoch}_branch{branch}.csv")
}

/// Monte Carlo estimate with 95% bands; when the truth is known, the matched
/// (sign-aligned) true source is appended per estimated column.
pub fn write_estimate(
    path: &Path,
    est: &SourceEstimate,
    matched: Option<(&Tensor, &MatchResult)>,
) -> Result<()> {
    let (t_len, n) = match est.mean.shape {
        Shape::Matrix(t, n) => (t, n),
        _ => panic!("estimate must be a matrix"),
    };
    let grid = time_grid(t_len);
    let mut out = String::from("t");
    for j in 1..=n {
        write!(out, ",mean{j},std{j},lo{j},hi{j}").unwrap();
    }
    if matched.is_some() {
        for j in 1..=n {
            write!(out, ",truth{j}").unwrap();
        }
    }
    out.push('\n');
    // Truth column aligned to estimate column k: the truth index j with
    // permutation[j] == k, scaled by the matched sign.
    let truth_for_est: Option<Vec<(usize, f64)>> = matched.map(|(_, m)| {
        (0..n)
            .map(|k| {
                let j = m.permutation.iter().position(|&p| p == k).expect("permutation is a bijection");
                (j, m.signs[j])
            })
            .collect()
    });
    for i in 0..t_len {
        out.push_str(&fmt_f64(grid[i]));
        for j in 0..n {
            write!(
                out,
                ",{},{},{},{}",
                fmt_f64(est.mean.at(i, j)),
                fmt_f64(est.std.at(i, j)),
                fmt_f64(est.band_lo.at(i, j)),
                fmt_f64(est.band_hi.at(i, j))
            )
            .unwrap();
        }
        if let (Some((truth, _)), Some(map)) = (matched, truth_for_est.as_ref()) {
            for (j, sign) in map {
                out.push(',');
                out.push_str(&fmt_f64(sign * truth.at(i, *j)));
            }
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// One row per true source: which estimate column matched it, the applied
/// sign, the absolute correlation, and the run-level mean correlation.
pub fn write_match_summary(path: &Path, m: &MatchResult) -> Result<()> {
    let mut out = String::from("truth,est,sign,corr,zero_variance,mean_corr\n");
    for j in 0..m.permutation.len() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            j + 1,
            m.permutation[j] + 1,
            m.signs[j],
            fmt_f64(m.correlations[j]),
            m.zero_variance[j] as u8,
            fmt_f64(m.mean_corr)
        )
        .unwrap();
    }
    write_file(path, &out)
}
