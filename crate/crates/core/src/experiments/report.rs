//! Report rows, smoothness tables and their CSV/JSON persistence.
//!
//! `rows.csv` columns: `group,n,dim,rep,seed,converged`, then the study's
//! value columns. Floats are written in the shortest form that parses back
//! to the same bits, so a summary recomputed from the file is identical.

use std::io::{Read, Write};

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::summary::Summary;
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 6] = ["group", "n", "dim", "rep", "seed", "converged"];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub group: usize,
    pub n: usize,
    pub dim: usize,
    pub rep: usize,
    pub seed: u64,
    pub converged: bool,
    pub values: Vec<f64>,
}

impl Row {
    /// Bitwise equality, so NaN placeholders compare equal.
    pub fn same_bits(&self, other: &Row) -> bool {
        self.group == other.group
            && self.n == other.n
            && self.dim == other.dim
            && self.rep == other.rep
            && self.seed == other.seed
            && self.converged == other.converged
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Raw `δ̂(r)`, `ω̂(r)` of one group in the condition scan. Unlike
/// `SmoothnessTable` it may hold `ω̂ > ½`, which is reported, not hidden.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTable {
    pub group: usize,
    pub radii: Vec<f64>,
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub tables: Vec<GroupTable>,
    pub summary: Summary,
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_rows_csv(columns: &[String], rows: &[Row], out: impl Write) -> Result<()> {
    let mut w = writer(out);
    let header: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(columns.iter().map(String::as_str)).collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.group.to_string(),
            r.n.to_string(),
            r.dim.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            u8::from(r.converged).to_string(),
        ];
        rec.extend(r.values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let s = rec.get(i).ok_or_else(|| Error::Parse(format!("line {line}: missing column {i}")))?;
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse {s:?} in column {i}")))
}

/// Inverse of [`write_rows_csv`]: the value column names and the rows.
pub fn read_rows_csv(input: impl Read) -> Result<(Vec<String>, Vec<Row>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!(
            "rows header must start with {}",
            FIXED_COLUMNS.join(",")
        )));
    }
    let columns: Vec<String> = header.iter().skip(FIXED_COLUMNS.len()).map(String::from).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("line {line}: expected {} fields", header.len())));
        }
        let conv: u8 = field(&rec, 5, line)?;
        rows.push(Row {
            group: field(&rec, 0, line)?,
            n: field(&rec, 1, line)?,
            dim: field(&rec, 2, line)?,
            rep: field(&rec, 3, line)?,
            seed: field(&rec, 4, line)?,
            converged: conv != 0,
            values: (FIXED_COLUMNS.len()..header.len())
                .map(|i| field(&rec, i, line))
                .collect::<Result<_>>()?,
        });
    }
    Ok((columns, rows))
}

/// `tables.csv` with columns `group,r,delta_r,omega_r`.
pub fn write_tables_csv(tables: &[GroupTable], out: impl Write) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["group", "r", "delta_r", "omega_r"])?;
    for t in tables {
        for i in 0..t.radii.len() {
            w.write_record([
                t.group.to_string(),
                t.radii[i].to_string(),
                t.delta[i].to_string(),
                t.omega[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tables_csv(input: impl Read) -> Result<Vec<GroupTable>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut tables: Vec<GroupTable> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let g: usize = field(&rec, 0, line)?;
        if tables.last().is_none_or(|t| t.group != g) {
            tables.push(GroupTable {
                group: g,
                radii: Vec::new(),
                delta: Vec::new(),
                omega: Vec::new(),
            });
        }
        let t = tables.last_mut().expect("just pushed");
        t.radii.push(field(&rec, 1, line)?);
        t.delta.push(field(&rec, 2, line)?);
        t.omega.push(field(&rec, 3, line)?);
    }
    Ok(tables)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    kind: ExperimentKind,
    library_version: &'a str,
    master_seed: u64,
    pass: bool,
    config: &'a ExperimentConfig,
    summary: &'a Summary,
}

/// `summary.json`: verdicts, per-group statistics and the config echo.
pub fn summary_json(report: &ExperimentReport) -> Result<String> {
    let f = SummaryFile {
        kind: report.kind,
        library_version: crate::VERSION,
        master_seed: report.config.master_seed,
        pass: report.summary.pass,
        config: &report.config,
        summary: &report.summary,
    };
    let mut s = serde_json::to_string_pretty(&f).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: Vec<f64>, conv: bool) -> Row {
        Row {
            group: 1,
            n: 100,
            dim: 3,
            rep: 7,
            seed: u64::MAX - 3,
            converged: conv,
            values: v,
        }
    }

    #[test]
    fn rows_round_trip_bitwise() {
        let rows = vec![
            row(vec![0.1 + 0.2, 1e-300, -3.5], true),
            row(vec![f64::NAN, f64::INFINITY, 1.0 / 3.0], false),
        ];
        let cols = vec!["a".to_string(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        write_rows_csv(&cols, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("group,n,dim,rep,seed,converged,a,b,c\n"));
        assert!(!text.contains('\r'));
        let (c2, r2) = read_rows_csv(&buf[..]).unwrap();
        assert_eq!(c2, cols);
        assert!(rows.iter().zip(&r2).all(|(a, b)| a.same_bits(b)));
    }

    #[test]
    fn tables_round_trip() {
        let t = vec![
            GroupTable { group: 0, radii: vec![1.0, 2.0], delta: vec![0.0, 0.1], omega: vec![0.0, 0.7] },
            GroupTable { group: 2, radii: vec![1.5], delta: vec![1e-17], omega: vec![0.2] },
        ];
        let mut buf = Vec::new();
        write_tables_csv(&t, &mut buf).unwrap();
        assert_eq!(read_tables_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn bad_header_rejected() {
        assert!(read_rows_csv("x,y\n1,2\n".as_bytes()).is_err());
    }
}
