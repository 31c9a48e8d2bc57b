//! Text formats for datasets, density matrices and constraint matrices.
//!
//! Dataset files look like
//!
//! ```text
//! n_qubits 3
//! mode sampled 42
//! basis XYZ shots 10 000:4 101:6
//! ```
//!
//! with `mode exact` files carrying `probs p_0 ... p_{2^n-1}` in place of
//! the counts. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use faer::Mat;
use num_complex::Complex64 as c64;

use crate::error::{HltError, Result};
use crate::learning::ConstraintMatrix;
use crate::measurement::{BasisLabel, DatasetMode, MeasurementDataset, MeasurementPlan, Tally};
use crate::state::DensityMatrix;

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(HltError::Parse { line, message: message.into() })
}

fn bits(s: usize, n: usize) -> String {
    (0..n).map(|q| if s >> (n - 1 - q) & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn dataset_to_string(data: &MeasurementDataset) -> String {
    let n = data.n_qubits();
    let mut out = String::new();
    writeln!(out, "n_qubits {n}").unwrap();
    match data.mode() {
        DatasetMode::Sampled { seed } => writeln!(out, "mode sampled {seed}").unwrap(),
        DatasetMode::Exact => writeln!(out, "mode exact").unwrap(),
    }
    for (i, basis) in data.plan().bases().iter().enumerate() {
        write!(out, "basis {basis} shots {}", data.plan().shots()[i]).unwrap();
        match &data.tallies()[i] {
            Tally::Counts(c) => {
                for (&s, &k) in c {
                    write!(out, " {}:{k}", bits(s, n)).unwrap();
                }
            }
            Tally::Exact(p) => {
                out.push_str(" probs");
                for x in p {
                    write!(out, " {x:?}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    out
}

fn meaningful_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn dataset_from_str(text: &str) -> Result<MeasurementDataset> {
    let mut lines = meaningful_lines(text);
    let (ln, header) = lines.next().ok_or(HltError::Parse { line: 0, message: "empty dataset".into() })?;
    let n: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["n_qubits", v] => v.parse().or_else(|_| parse_err(ln, "bad qubit count"))?,
        _ => return parse_err(ln, "expected `n_qubits <n>`"),
    };
    let (ln, mode_line) = lines.next().ok_or(HltError::Parse { line: ln, message: "missing mode line".into() })?;
    let mode = match mode_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["mode", "exact"] => DatasetMode::Exact,
        ["mode", "sampled", s] => DatasetMode::Sampled { seed: s.parse().or_else(|_| parse_err(ln, "bad seed"))? },
        _ => return parse_err(ln, "expected `mode exact` or `mode sampled <seed>`"),
    };
    let (mut bases, mut shots, mut tallies) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 4 || tokens[0] != "basis" || tokens[2] != "shots" {
            return parse_err(ln, "expected `basis <letters> shots <count> ...`");
        }
        let label: BasisLabel = tokens[1].parse().or_else(|e: HltError| parse_err(ln, e.to_string()))?;
        if label.n_qubits() != n {
            return parse_err(ln, format!("basis {label} does not have {n} letters"));
        }
        let count: u64 = tokens[3].parse().or_else(|_| parse_err(ln, "bad shot count"))?;
        let rest = &tokens[4..];
        let tally = if rest.first() == Some(&"probs") {
            let p: Vec<f64> = rest[1..]
                .iter()
                .map(|t| t.parse::<f64>().or_else(|_| parse_err(ln, format!("bad probability `{t}`"))))
                .collect::<Result<_>>()?;
            Tally::Exact(p)
        } else {
            let mut c = BTreeMap::new();
            for t in rest {
                let (b, k) = t.split_once(':').ok_or(HltError::Parse { line: ln, message: format!("bad outcome `{t}`") })?;
                if b.len() != n || !b.chars().all(|ch| ch == '0' || ch == '1') {
                    return parse_err(ln, format!("outcome `{b}` is not a {n}-bit string"));
                }
                let s = usize::from_str_radix(b, 2).unwrap();
                let k: u64 = k.parse().or_else(|_| parse_err(ln, format!("bad count in `{t}`")))?;
                if c.insert(s, k).is_some() {
                    return parse_err(ln, format!("outcome `{b}` repeated"));
                }
            }
            Tally::Counts(c)
        };
        bases.push(label);
        shots.push(count);
        tallies.push(tally);
    }
    let plan = MeasurementPlan::new(bases, shots)?;
    MeasurementDataset::new(plan, mode, tallies)
}

pub fn write_dataset(path: &Path, data: &MeasurementDataset) -> Result<()> {
    std::fs::write(path, dataset_to_string(data))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<MeasurementDataset> {
    dataset_from_str(&std::fs::read_to_string(path)?)
}

/// `n_qubits <n>` then one row per line of `re im` pairs.
pub fn matrix_to_string(n_qubits: usize, m: &Mat<c64>) -> String {
    let mut out = format!("n_qubits {n_qubits}\n");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?} {:?}", m[(i, j)].re, m[(i, j)].im)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn matrix_from_str(text: &str) -> Result<(usize, Mat<c64>)> {
    let mut lines = meaningful_lines(text);
    let (ln, header) = lines.next().ok_or(HltError::Parse { line: 0, message: "empty matrix file".into() })?;
    let n: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["n_qubits", v] => v.parse().or_else(|_| parse_err(ln, "bad qubit count"))?,
        _ => return parse_err(ln, "expected `n_qubits <n>`"),
    };
    if n > crate::pauli::DEFAULT_DENSE_LIMIT {
        return parse_err(ln, format!("{n} qubits exceeds the dense limit"));
    }
    let dim = 1usize << n;
    let mut m = Mat::<c64>::zeros(dim, dim);
    let mut rows = 0;
    for (ln, line) in lines {
        if rows == dim {
            return parse_err(ln, "more rows than the dimension");
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().or_else(|_| parse_err(ln, format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * dim {
            return parse_err(ln, format!("expected {} numbers, found {}", 2 * dim, vals.len()));
        }
        for j in 0..dim {
            m[(rows, j)] = c64::new(vals[2 * j], vals[2 * j + 1]);
        }
        rows += 1;
    }
    if rows != dim {
        return parse_err(0, format!("expected {dim} rows, found {rows}"));
    }
    Ok((n, m))
}

pub fn write_density_matrix(path: &Path, rho: &DensityMatrix) -> Result<()> {
    std::fs::write(path, matrix_to_string(rho.n_qubits(), rho.matrix()))?;
    Ok(())
}

/// Reads and validates a density matrix.
pub fn read_density_matrix(path: &Path) -> Result<DensityMatrix> {
    let (n, m) = matrix_from_str(&std::fs::read_to_string(path)?)?;
    DensityMatrix::from_matrix(n, m)
}

/// CSV with Pauli-word row and column labels.
pub fn write_constraint_matrix(mut w: impl Write, km: &ConstraintMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    let mut header = vec!["A\\S".to_string()];
    header.extend(km.cols().iter().map(|p| p.to_string()));
    out.write_record(&header).map_err(csv_err)?;
    for (q, a) in km.rows().iter().enumerate() {
        let mut rec = vec![a.to_string()];
        rec.extend((0..km.ncols()).map(|m| format!("{:?}", km.entries()[(q, m)])));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back the labels and entries of [`write_constraint_matrix`] output.
pub fn read_constraint_matrix(r: impl BufRead) -> Result<(Vec<String>, Vec<String>, Mat<f64>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let cols: Vec<String> = rdr.headers().map_err(csv_err)?.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec[0].to_string());
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|t| t.parse().or_else(|_| parse_err(i + 2, format!("bad entry `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != cols.len() {
            return parse_err(i + 2, "row length differs from header");
        }
        data.push(vals);
    }
    let m = Mat::from_fn(rows.len(), cols.len(), |i, j| data[i][j]);
    Ok((rows, cols, m))
}

fn csv_err(e: csv::Error) -> HltError {
    HltError::Io(std::io::Error::other(e))
}
