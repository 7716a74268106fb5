//! File formats. Every writer goes through a temporary file in the target
//! directory and a rename, so a failed run never leaves a partial file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attack::{AttackTrace, IterRecord};
use crate::counter::CounterRecord;
use crate::datagen::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::network::MlpModel;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    write_json(path, model)
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    Ok(serde_json::from_str(&read_string(path)?)?)
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| invalid(e.to_string()))
}

/// Dataset CSV `x0,…,x{n-1},label`.
pub fn dataset_csv(data: &LabeledDataset) -> Result<Vec<u8>> {
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    let rows = data.points().iter().zip(data.labels()).map(|(p, l)| {
        let mut r: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        r.push(l.to_string());
        r
    });
    csv_bytes(&header, rows)
}

pub fn save_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    write_atomic(path, &dataset_csv(data)?)
}

/// Reads a dataset CSV. The class count is the largest label (at least 2)
/// unless given.
pub fn load_dataset(path: &Path, classes: Option<usize>) -> Result<LabeledDataset> {
    let text = read_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let dim = header.len().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| invalid("dataset needs x columns and a label"))?;
    if header.get(dim) != Some("label") {
        return Err(invalid("last dataset column must be 'label'"));
    }
    let (mut points, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {s:?}")));
        points.push(rec.iter().take(dim).map(parse).collect::<Result<Vec<f64>>>()?);
        let l = &rec[dim];
        labels.push(l.trim().parse::<usize>().map_err(|_| invalid(format!("bad label {l:?}")))?);
    }
    let classes = classes.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(2).max(2));
    LabeledDataset::new(points, labels, dim, classes)
}

/// Trace CSV `id,success,iters,a,dist,class_before,class_after`.
pub fn trace_csv(traces: &[AttackTrace]) -> Result<Vec<u8>> {
    let header = ["id", "success", "iters", "a", "dist", "class_before", "class_after"].map(String::from);
    let rows = traces.iter().enumerate().map(|(id, t)| {
        vec![
            id.to_string(),
            t.success.to_string(),
            t.iterations.to_string(),
            t.penalty.to_string(),
            t.adversarial_distance().to_string(),
            t.original_class.to_string(),
            t.adversarial_class().to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

#[derive(Serialize)]
struct IterLine<'a> {
    id: usize,
    #[serde(flatten)]
    rec: &'a IterRecord,
}

/// Per-iteration records as JSON lines `{id, iter, F, f, dist, class}`.
pub fn iteration_jsonl(traces: &[AttackTrace]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (id, t) in traces.iter().enumerate() {
        for rec in &t.records {
            serde_json::to_writer(&mut out, &IterLine { id, rec })?;
            out.push(b'\n');
        }
    }
    Ok(out)
}

/// Which set a counter-attack record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cohort {
    Clean,
    Attacked,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Clean => "clean",
            Cohort::Attacked => "attacked",
        }
    }
}

/// Statistics CSV `id,cohort,D,jstar,stopped,returned`. Attacked samples
/// whose primary attack failed have no record and are skipped; empty cells
/// mark values that do not exist.
pub fn stats_csv<'a>(rows: impl IntoIterator<Item = (usize, Cohort, &'a CounterRecord)>) -> Result<Vec<u8>> {
    let header = ["id", "cohort", "D", "jstar", "stopped", "returned"].map(String::from);
    let rows = rows.into_iter().map(|(id, cohort, r)| {
        vec![
            id.to_string(),
            cohort.as_str().to_string(),
            r.statistic.to_string(),
            r.stop_index.map(|j| j.to_string()).unwrap_or_default(),
            r.stopped.to_string(),
            r.returned().map(|b| b.to_string()).unwrap_or_default(),
        ]
    });
    csv_bytes(&header, rows)
}

/// Parsed row of a statistics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub id: usize,
    pub cohort: Cohort,
    pub statistic: f64,
    pub stopped: bool,
}

pub fn load_stats(path: &Path) -> Result<Vec<StatRow>> {
    let text = read_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| invalid(format!("missing column {name}")));
    let (ci, cc, cd, cs) = (col("id")?, col("cohort")?, col("D")?, col("stopped")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| invalid(format!("bad {what} in statistics file"));
        out.push(StatRow {
            id: rec[ci].parse().map_err(|_| bad("id"))?,
            cohort: match &rec[cc] {
                "clean" => Cohort::Clean,
                "attacked" => Cohort::Attacked,
                _ => return Err(bad("cohort")),
            },
            statistic: rec[cd].parse().map_err(|_| bad("D"))?,
            stopped: rec[cs].parse().map_err(|_| bad("stopped"))?,
        });
    }
    Ok(out)
}

/// Plain CSV from a header and stringified rows.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    csv_bytes(&header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::two_moons;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = two_moons(50, 0.1, 2).unwrap();
        save_dataset(&p, &d).unwrap();
        assert_eq!(load_dataset(&p, None).unwrap(), d);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = MlpModel::init(&[2, 8, 2], 4).unwrap();
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("x.csv");
        assert!(write_atomic(&p, b"abc").is_err());
        assert!(!p.exists());
    }

    #[test]
    fn empty_trace_file_has_header() {
        let bytes = trace_csv(&[]).unwrap();
        assert_eq!(bytes, b"id,success,iters,a,dist,class_before,class_after\n");
    }
}
