//! CSV files written by the CLI and read back by `sweep` and `analyze`.
//!
//! Floats use Rust's shortest round-trip formatting, so equal values always
//! produce identical bytes.

use std::fs;
use std::path::Path;

use crate::config::GeneratorKind;
use crate::ensemble::ModelParameter;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::sampler::{HistoryKind, HistoryRecord};

/// Header plus rows, all cells as text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::format(path, "missing header"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                return Err(Error::format(
                    path,
                    format!("row {} has {} cells, header has {}", i + 1, row.len(), header.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_cell<T: std::str::FromStr>(cell: &str, path: &Path, what: &str) -> Result<T> {
    cell.parse::<T>()
        .map_err(|_| Error::format(path, format!("bad {what} `{cell}`")))
}

pub fn history_table(history: &[HistoryRecord], k: usize) -> Table {
    let mut header: Vec<String> = ["iteration", "generator", "kind", "index", "value"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..k).map(|d| format!("p_{d}")));
    let mut t = Table::new(header);
    for r in history {
        let mut row = vec![
            r.iteration.to_string(),
            r.generator.as_str().to_string(),
            r.kind.as_str().to_string(),
            r.index.to_string(),
            fmt_f64(r.value),
        ];
        row.extend(r.param.values().iter().map(|&v| fmt_f64(v)));
        t.push(row);
    }
    t
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let t = Table::read(path)?;
    if t.header.len() < 5 || t.header[..5] != ["iteration", "generator", "kind", "index", "value"] {
        return Err(Error::format(path, "not a history file"));
    }
    t.rows
        .iter()
        .map(|row| {
            let generator = match row[1].as_str() {
                "epopt" => GeneratorKind::Epopt,
                "effacts" => GeneratorKind::Effacts,
                other => return Err(Error::format(path, format!("bad generator `{other}`"))),
            };
            let kind = HistoryKind::parse(&row[2])
                .ok_or_else(|| Error::format(path, format!("bad kind `{}`", row[2])))?;
            Ok(HistoryRecord {
                iteration: parse_cell(&row[0], path, "iteration")?,
                generator,
                kind,
                index: parse_cell(&row[3], path, "index")?,
                value: parse_cell(&row[4], path, "value")?,
                param: ModelParameter(
                    row[5..]
                        .iter()
                        .map(|c| parse_cell(c, path, "parameter"))
                        .collect::<Result<_>>()?,
                ),
            })
        })
        .collect()
}

pub fn policy_table(policy: &PolicyParams) -> Table {
    let mut t = Table::new(["index", "value"]);
    for (i, v) in policy.theta().iter().enumerate() {
        t.push(vec![i.to_string(), fmt_f64(*v)]);
    }
    t
}

/// Parameter vector from a policy file.
pub fn read_policy_theta(path: &Path) -> Result<Vec<f64>> {
    let t = Table::read(path)?;
    let col = t
        .column("value")
        .ok_or_else(|| Error::format(path, "missing `value` column"))?;
    t.rows
        .iter()
        .map(|r| parse_cell(&r[col], path, "value"))
        .collect()
}

pub fn snapshots_table(snapshots: &[(usize, PolicyParams)], num_params: usize) -> Table {
    let mut header = vec!["iteration".to_string()];
    header.extend((0..num_params).map(|i| format!("theta_{i}")));
    let mut t = Table::new(header);
    for (it, p) in snapshots {
        let mut row = vec![it.to_string()];
        row.extend(p.theta().iter().map(|&v| fmt_f64(v)));
        t.push(row);
    }
    t
}

/// Snapshot parameter vectors, applied to `template` for structure.
pub fn read_snapshots(path: &Path, template: &PolicyParams) -> Result<Vec<(usize, PolicyParams)>> {
    let t = Table::read(path)?;
    t.rows
        .iter()
        .map(|row| {
            let it = parse_cell(&row[0], path, "iteration")?;
            let theta: Vec<f64> = row[1..]
                .iter()
                .map(|c| parse_cell(c, path, "parameter"))
                .collect::<Result<_>>()?;
            Ok((it, template.with_theta(&theta)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Architecture;

    #[test]
    fn history_round_trips() {
        let rows = vec![
            HistoryRecord {
                iteration: 1,
                generator: GeneratorKind::Effacts,
                kind: HistoryKind::Candidate,
                index: 3,
                value: -0.1 - 0.2,
                param: ModelParameter(vec![1.0 / 3.0, 2e-300]),
            },
            HistoryRecord {
                iteration: 2,
                generator: GeneratorKind::Epopt,
                kind: HistoryKind::Sampled,
                index: 0,
                value: 1e20,
                param: ModelParameter(vec![-0.0, 7.5]),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        history_table(&rows, 2).write(&path).unwrap();
        assert_eq!(read_history(&path).unwrap(), rows);
    }

    #[test]
    fn snapshots_round_trip() {
        let p = PolicyParams::zeros(Architecture::Tanh { hidden: vec![3] }, 2, 1);
        let q = p.with_theta(&(0..p.num_params()).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        snapshots_table(&[(5, q.clone())], q.num_params()).write(&path).unwrap();
        assert_eq!(read_snapshots(&path, &p).unwrap(), vec![(5, q)]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = Table::parse("a,b\n1\n", Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
