//! Append-only performance database for one tuning run.
//!
//! Every evaluation lands in two files in the run directory, durably flushed
//! before `append` returns:
//!
//! * `results.csv` — header `index,<param columns>,metric,elapsed,status,timestamp`,
//!   one row per evaluation. An inactive parameter is an empty cell (empty
//!   string is never a legal parameter value, so the encoding is unambiguous).
//! * `results.json` — the same rows as JSON lines, one object per line, with
//!   inactive parameters as `null`.
//!
//! The two files must always describe the same rows; `open` cross-parses
//! both and refuses a directory where they disagree. Serialization is
//! canonical (shortest round-trip float formatting, fixed column order), so
//! re-writing a parsed database reproduces it byte for byte.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Value};
use thiserror::Error;

use crate::evaluator::{TrialRecord, TrialStatus};
use crate::space::{Configuration, ParamSpace, SpaceError};

pub const CSV_FILE: &str = "results.csv";
pub const JSON_FILE: &str = "results.json";

const FIXED_HEAD: &str = "index";
const FIXED_TAIL: [&str; 4] = ["metric", "elapsed", "status", "timestamp"];

#[derive(Debug, Error)]
pub enum PerfDbError {
    #[error("database already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("no database at {0}")]
    NotFound(PathBuf),
    #[error("malformed CSV header: {0}")]
    BadHeader(String),
    #[error("row index {got} where {expected} was required")]
    IndexGap { expected: u64, got: u64 },
    #[error("malformed row: {0}")]
    BadRow(String),
    #[error("results.csv and results.json disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, PerfDbError>;

/// One evaluation's database row. `values` holds one entry per parameter in
/// declaration order; `None` marks an inactive parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// 1-based evaluation index.
    pub index: u64,
    pub values: Vec<Option<String>>,
    pub metric: f64,
    pub elapsed: f64,
    pub status: TrialStatus,
    pub timestamp: String,
}

impl ResultRow {
    /// Build the row for a finished trial.
    pub fn from_trial(
        index: u64,
        space: &ParamSpace,
        record: &TrialRecord,
        timestamp: impl Into<String>,
    ) -> Result<Self> {
        Ok(ResultRow {
            index,
            values: space.values_in_order(&record.configuration)?,
            metric: record.metric,
            elapsed: record.elapsed,
            status: record.status,
            timestamp: timestamp.into(),
        })
    }

    /// Reconstruct the configuration this row recorded.
    pub fn configuration(&self, param_names: &[String]) -> Configuration {
        let mut cfg = Configuration::new();
        for (name, value) in param_names.iter().zip(&self.values) {
            match value {
                Some(v) => cfg.set_active(name, v),
                None => cfg.set_inactive(name),
            }
        }
        cfg
    }
}

/// One point of the convergence plot: the metric observed at an evaluation
/// and the best ok metric seen up to and including it (`None` before the
/// first success).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub index: u64,
    pub metric: f64,
    pub best_so_far: Option<f64>,
}

/// Append-only store over `results.csv` + `results.json`.
pub struct PerfDb {
    dir: PathBuf,
    param_names: Vec<String>,
    rows: Vec<ResultRow>,
    csv_file: File,
    json_file: File,
}

fn csv_line(fields: &[String]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(fields)?;
    writer.flush()?;
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

impl PerfDb {
    /// Start a fresh database; refuses a directory that already has one.
    pub fn create(dir: impl Into<PathBuf>, param_names: Vec<String>) -> Result<Self> {
        let dir = dir.into();
        let csv_path = dir.join(CSV_FILE);
        if csv_path.exists() || dir.join(JSON_FILE).exists() {
            return Err(PerfDbError::AlreadyExists(dir));
        }
        std::fs::create_dir_all(&dir)?;
        let mut csv_file = OpenOptions::new().create_new(true).append(true).open(&csv_path)?;
        let json_file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(dir.join(JSON_FILE))?;

        let mut header: Vec<String> = vec![FIXED_HEAD.to_string()];
        header.extend(param_names.iter().cloned());
        header.extend(FIXED_TAIL.iter().map(|s| s.to_string()));
        csv_file.write_all(csv_line(&header)?.as_bytes())?;
        csv_file.sync_data()?;

        Ok(PerfDb { dir, param_names, rows: Vec::new(), csv_file, json_file })
    }

    /// Open an existing database, cross-checking that the CSV and JSON
    /// files agree row for row. Appending resumes at the next index.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let csv_path = dir.join(CSV_FILE);
        let json_path = dir.join(JSON_FILE);
        if !csv_path.exists() || !json_path.exists() {
            return Err(PerfDbError::NotFound(dir));
        }

        let (param_names, csv_rows) = read_csv(&csv_path)?;
        let json_rows = read_json(&json_path, &param_names)?;
        if csv_rows.len() != json_rows.len() {
            return Err(PerfDbError::Inconsistent(format!(
                "{} CSV rows vs {} JSON records",
                csv_rows.len(),
                json_rows.len()
            )));
        }
        for (c, j) in csv_rows.iter().zip(&json_rows) {
            if c != j {
                return Err(PerfDbError::Inconsistent(format!(
                    "row {} differs between the files",
                    c.index
                )));
            }
        }
        let mut expected = 1u64;
        for row in &csv_rows {
            if row.index != expected {
                return Err(PerfDbError::BadRow(format!(
                    "indices are not 1..N: found {} where {expected} was required",
                    row.index
                )));
            }
            expected += 1;
        }

        let csv_file = OpenOptions::new().append(true).open(&csv_path)?;
        let json_file = OpenOptions::new().append(true).open(&json_path)?;
        Ok(PerfDb { dir, param_names, rows: csv_rows, csv_file, json_file })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    /// Index the next appended row must carry.
    pub fn next_index(&self) -> u64 {
        self.rows.last().map_or(1, |r| r.index + 1)
    }

    /// Durably append one row to both files.
    pub fn append(&mut self, row: ResultRow) -> Result<()> {
        let expected = self.next_index();
        if row.index != expected {
            return Err(PerfDbError::IndexGap { expected, got: row.index });
        }
        if row.values.len() != self.param_names.len() {
            return Err(PerfDbError::BadRow(format!(
                "row has {} parameter values, database has {} columns",
                row.values.len(),
                self.param_names.len()
            )));
        }

        let mut fields: Vec<String> = vec![row.index.to_string()];
        fields.extend(row.values.iter().map(|v| v.clone().unwrap_or_default()));
        fields.push(row.metric.to_string());
        fields.push(row.elapsed.to_string());
        fields.push(row.status.to_string());
        fields.push(row.timestamp.clone());
        let csv_text = csv_line(&fields)?;

        let mut parameters = serde_json::Map::new();
        for (name, value) in self.param_names.iter().zip(&row.values) {
            let v = match value {
                Some(v) => Value::String(v.clone()),
                None => Value::Null,
            };
            parameters.insert(name.clone(), v);
        }
        let record = json!({
            "index": row.index,
            "parameters": Value::Object(parameters),
            "metric": row.metric,
            "elapsed": row.elapsed,
            "status": row.status.to_string(),
            "timestamp": row.timestamp,
        });
        let json_text = format!("{}\n", serde_json::to_string(&record)?);

        self.csv_file.write_all(csv_text.as_bytes())?;
        self.csv_file.sync_data()?;
        self.json_file.write_all(json_text.as_bytes())?;
        self.json_file.sync_data()?;
        self.rows.push(row);
        Ok(())
    }

    /// The earliest row achieving the lowest ok-status metric, with its
    /// configuration. `None` when no evaluation succeeded.
    pub fn find_min(&self) -> Option<(&ResultRow, Configuration)> {
        let mut best: Option<&ResultRow> = None;
        for row in &self.rows {
            if row.status.is_ok() && best.is_none_or(|b| row.metric < b.metric) {
                best = Some(row);
            }
        }
        best.map(|row| (row, row.configuration(&self.param_names)))
    }

    /// Per-evaluation metric paired with the running minimum over ok rows.
    pub fn convergence_series(&self) -> Vec<ConvergencePoint> {
        let mut best: Option<f64> = None;
        self.rows
            .iter()
            .map(|row| {
                if row.status.is_ok() && best.is_none_or(|b| row.metric < b) {
                    best = Some(row.metric);
                }
                ConvergencePoint { index: row.index, metric: row.metric, best_so_far: best }
            })
            .collect()
    }

    /// Write the convergence series as a TSV for external plotting. Rows
    /// before the first success leave the best column empty.
    pub fn export_plot(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("index\tmetric\tbest_so_far\n");
        for point in self.convergence_series() {
            let best = point.best_so_far.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!("{}\t{}\t{}\n", point.index, point.metric, best));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn parse_float(text: &str, what: &str) -> Result<f64> {
    text.parse()
        .map_err(|_| PerfDbError::BadRow(format!("{what} `{text}` is not a number")))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<ResultRow>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if header.len() < 1 + FIXED_TAIL.len()
        || header[0] != FIXED_HEAD
        || header[header.len() - FIXED_TAIL.len()..] != FIXED_TAIL
    {
        return Err(PerfDbError::BadHeader(header.join(",")));
    }
    let param_names: Vec<String> = header[1..header.len() - FIXED_TAIL.len()].to_vec();
    let mut seen = HashSet::new();
    for name in &param_names {
        if name.is_empty() || !seen.insert(name) {
            return Err(PerfDbError::BadHeader(header.join(",")));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(PerfDbError::BadRow(format!(
                "row with {} fields under a {}-column header",
                record.len(),
                header.len()
            )));
        }
        let fields: Vec<&str> = record.iter().collect();
        let tail = fields.len() - FIXED_TAIL.len();
        rows.push(ResultRow {
            index: fields[0]
                .parse()
                .map_err(|_| PerfDbError::BadRow(format!("index `{}`", fields[0])))?,
            values: fields[1..tail]
                .iter()
                .map(|v| if v.is_empty() { None } else { Some(v.to_string()) })
                .collect(),
            metric: parse_float(fields[tail], "metric")?,
            elapsed: parse_float(fields[tail + 1], "elapsed")?,
            status: TrialStatus::from_str(fields[tail + 2]).map_err(PerfDbError::BadRow)?,
            timestamp: fields[tail + 3].to_string(),
        });
    }
    Ok((param_names, rows))
}

fn json_field<'v>(record: &'v Value, key: &str, line: usize) -> Result<&'v Value> {
    record
        .get(key)
        .ok_or_else(|| PerfDbError::BadRow(format!("JSON record {line} lacks `{key}`")))
}

fn read_json(path: &Path, param_names: &[String]) -> Result<Vec<ResultRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(&line)?;
        let line_no = i + 1;
        let parameters = json_field(&record, "parameters", line_no)?;
        let values = param_names
            .iter()
            .map(|name| match parameters.get(name) {
                Some(Value::String(v)) => Ok(Some(v.clone())),
                Some(Value::Null) => Ok(None),
                _ => Err(PerfDbError::BadRow(format!(
                    "JSON record {line_no} lacks parameter `{name}`"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let status_text = json_field(&record, "status", line_no)?
            .as_str()
            .ok_or_else(|| PerfDbError::BadRow(format!("JSON record {line_no} status")))?;
        rows.push(ResultRow {
            index: json_field(&record, "index", line_no)?
                .as_u64()
                .ok_or_else(|| PerfDbError::BadRow(format!("JSON record {line_no} index")))?,
            values,
            metric: json_field(&record, "metric", line_no)?
                .as_f64()
                .ok_or_else(|| PerfDbError::BadRow(format!("JSON record {line_no} metric")))?,
            elapsed: json_field(&record, "elapsed", line_no)?
                .as_f64()
                .ok_or_else(|| PerfDbError::BadRow(format!("JSON record {line_no} elapsed")))?,
            status: TrialStatus::from_str(status_text).map_err(PerfDbError::BadRow)?,
            timestamp: json_field(&record, "timestamp", line_no)?
                .as_str()
                .ok_or_else(|| PerfDbError::BadRow(format!("JSON record {line_no} timestamp")))?
                .to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i}")).collect()
    }

    fn row(index: u64, values: &[Option<&str>], metric: f64, status: TrialStatus) -> ResultRow {
        ResultRow {
            index,
            values: values.iter().map(|v| v.map(str::to_string)).collect(),
            metric,
            elapsed: metric * 2.0,
            status,
            timestamp: format!("2026-08-17T10:00:{index:02}Z"),
        }
    }

    fn ok_row(index: u64, values: &[Option<&str>], metric: f64) -> ResultRow {
        row(index, values, metric, TrialStatus::Ok)
    }

    #[test]
    fn create_append_reopen_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(2)).unwrap();
        db.append(ok_row(1, &[Some("4"), Some("a,b")], 0.31)).unwrap();
        db.append(ok_row(2, &[Some("8"), None], 0.239)).unwrap();

        let csv_text = std::fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
        assert!(csv_text.starts_with("index,P0,P1,metric,elapsed,status,timestamp\n"));
        assert!(csv_text.contains("\"a,b\""), "comma values are quoted:\n{csv_text}");
        assert!(csv_text.contains("2,8,,0.239"), "inactive is an empty cell:\n{csv_text}");
        let json_text = std::fs::read_to_string(dir.path().join(JSON_FILE)).unwrap();
        assert_eq!(json_text.lines().count(), 2);
        assert!(json_text.contains("\"P1\":null"));

        // Reopen resumes appending where the files left off.
        drop(db);
        let mut db = PerfDb::open(dir.path()).unwrap();
        assert_eq!(db.param_names(), &names(2)[..]);
        assert_eq!(db.rows().len(), 2);
        assert_eq!(db.next_index(), 3);
        db.append(ok_row(3, &[Some("16"), Some("x")], 0.4)).unwrap();
        let db = PerfDb::open(dir.path()).unwrap();
        assert_eq!(db.rows().len(), 3);
        assert_eq!(db.rows()[2].values[0].as_deref(), Some("16"));
    }

    #[test]
    fn appends_must_be_gapless() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(ok_row(1, &[Some("1")], 1.0)).unwrap();
        let err = db.append(ok_row(3, &[Some("2")], 2.0)).unwrap_err();
        assert!(matches!(err, PerfDbError::IndexGap { expected: 2, got: 3 }));
        let err = db.append(ok_row(2, &[Some("2"), Some("3")], 2.0)).unwrap_err();
        assert!(matches!(err, PerfDbError::BadRow(_)));
    }

    #[test]
    fn create_refuses_an_existing_database() {
        let dir = tempfile::tempdir().unwrap();
        PerfDb::create(dir.path(), names(1)).unwrap();
        assert!(matches!(
            PerfDb::create(dir.path(), names(1)),
            Err(PerfDbError::AlreadyExists(_))
        ));
        assert!(matches!(
            PerfDb::open(dir.path().join("nowhere")),
            Err(PerfDbError::NotFound(_))
        ));
    }

    #[test]
    fn find_min_takes_the_earliest_ok_minimum() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(ok_row(1, &[Some("a")], 0.31)).unwrap();
        db.append(ok_row(2, &[Some("b")], 0.239)).unwrap();
        db.append(ok_row(3, &[Some("c")], 0.40)).unwrap();
        let (best, cfg) = db.find_min().unwrap();
        assert_eq!(best.index, 2);
        assert_eq!(best.metric, 0.239);
        assert_eq!(cfg.active_value("P0"), Some("b"));

        // A tie keeps the earlier evaluation.
        db.append(ok_row(4, &[Some("d")], 0.239)).unwrap();
        assert_eq!(db.find_min().unwrap().0.index, 2);

        // A failed row with a lower recorded metric cannot win.
        db.append(row(5, &[Some("e")], 0.001, TrialStatus::RunFail)).unwrap();
        assert_eq!(db.find_min().unwrap().0.index, 2);
    }

    #[test]
    fn find_min_on_a_single_row_and_on_no_ok_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        assert!(db.find_min().is_none());
        db.append(row(1, &[Some("a")], 20.0, TrialStatus::Timeout)).unwrap();
        assert!(db.find_min().is_none(), "timeout rows never qualify");
        db.append(ok_row(2, &[Some("b")], 5.0)).unwrap();
        assert_eq!(db.find_min().unwrap().0.index, 2);
    }

    #[test]
    fn convergence_series_tracks_the_running_ok_minimum() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(ok_row(1, &[Some("a")], 5.0)).unwrap();
        db.append(ok_row(2, &[Some("b")], 3.0)).unwrap();
        db.append(ok_row(3, &[Some("c")], 4.0)).unwrap();
        let best: Vec<_> = db.convergence_series().iter().map(|p| p.best_so_far).collect();
        assert_eq!(best, vec![Some(5.0), Some(3.0), Some(3.0)]);
    }

    #[test]
    fn failures_never_lower_best_so_far() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(ok_row(1, &[Some("a")], 2.0)).unwrap();
        db.append(row(2, &[Some("b")], 20.0, TrialStatus::Timeout)).unwrap();
        db.append(ok_row(3, &[Some("c")], 1.0)).unwrap();
        let series = db.convergence_series();
        let best: Vec<_> = series.iter().map(|p| p.best_so_far).collect();
        assert_eq!(best, vec![Some(2.0), Some(2.0), Some(1.0)]);
        assert_eq!(series[1].metric, 20.0, "the penalty metric itself is kept");

        // Before any success the best column is empty.
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(row(1, &[Some("a")], 9.0, TrialStatus::CompileFail)).unwrap();
        db.append(ok_row(2, &[Some("b")], 4.0)).unwrap();
        let best: Vec<_> = db.convergence_series().iter().map(|p| p.best_so_far).collect();
        assert_eq!(best, vec![None, Some(4.0)]);
    }

    #[test]
    fn export_plot_is_tab_separated_with_empty_cells_before_first_success() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(row(1, &[Some("a")], 9.0, TrialStatus::RunFail)).unwrap();
        db.append(ok_row(2, &[Some("b")], 0.5)).unwrap();
        let out = dir.path().join("plot.tsv");
        db.export_plot(&out).unwrap();
        assert_eq!(
            std::fs::read_to_string(out).unwrap(),
            "index\tmetric\tbest_so_far\n1\t9\t\n2\t0.5\t0.5\n"
        );
    }

    #[test]
    fn corrupted_pairs_are_rejected_on_open() {
        // Extra JSON record.
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(ok_row(1, &[Some("a")], 1.0)).unwrap();
        let json_path = dir.path().join(JSON_FILE);
        let mut text = std::fs::read_to_string(&json_path).unwrap();
        text.push_str(&text.clone().replace("\"index\":1", "\"index\":2"));
        std::fs::write(&json_path, text).unwrap();
        assert!(matches!(PerfDb::open(dir.path()), Err(PerfDbError::Inconsistent(_))));

        // Same row count, different content.
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
        db.append(ok_row(1, &[Some("a")], 1.0)).unwrap();
        let json_path = dir.path().join(JSON_FILE);
        let text = std::fs::read_to_string(&json_path)
            .unwrap()
            .replace("\"metric\":1.0", "\"metric\":1.5");
        std::fs::write(&json_path, text).unwrap();
        assert!(matches!(PerfDb::open(dir.path()), Err(PerfDbError::Inconsistent(_))));

        // Broken CSV header.
        let dir = tempfile::tempdir().unwrap();
        PerfDb::create(dir.path(), names(1)).unwrap();
        std::fs::write(dir.path().join(CSV_FILE), "index,P0,metric,elapsed,status\n").unwrap();
        assert!(matches!(PerfDb::open(dir.path()), Err(PerfDbError::BadHeader(_))));
    }

    #[test]
    fn two_hundred_appends_have_indices_one_to_two_hundred() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(2)).unwrap();
        for i in 1..=200u64 {
            db.append(ok_row(i, &[Some("4"), Some("x y")], 1.0 / i as f64)).unwrap();
        }
        let db = PerfDb::open(dir.path()).unwrap();
        assert_eq!(db.rows().len(), 200);
        for (i, row) in db.rows().iter().enumerate() {
            assert_eq!(row.index, i as u64 + 1);
        }
        assert_eq!(db.find_min().unwrap().0.index, 200);
        assert_eq!(db.convergence_series().len(), 200);
    }

    /// Append the same rows to a fresh directory and compare raw bytes.
    fn rewrite_bytes(db: &PerfDb) -> (Vec<u8>, Vec<u8>) {
        let dir = tempfile::tempdir().unwrap();
        let mut copy = PerfDb::create(dir.path(), db.param_names().to_vec()).unwrap();
        for row in db.rows() {
            copy.append(row.clone()).unwrap();
        }
        (
            std::fs::read(dir.path().join(CSV_FILE)).unwrap(),
            std::fs::read(dir.path().join(JSON_FILE)).unwrap(),
        )
    }

    #[test]
    fn parse_then_rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PerfDb::create(dir.path(), names(3)).unwrap();
        let awkward = [
            0.1f64 + 0.2,
            1e-300,
            123456789.123456,
            3.0,
            0.000125,
            2.5e17,
        ];
        for (i, &metric) in awkward.iter().enumerate() {
            let values = [
                Some("#pragma clang loop(i,j) tile sizes(4,8)"),
                if i % 2 == 0 { None } else { Some("quote\"inside") },
                Some("plain"),
            ];
            db.append(row(i as u64 + 1, &values, metric, TrialStatus::Ok)).unwrap();
        }
        let original_csv = std::fs::read(dir.path().join(CSV_FILE)).unwrap();
        let original_json = std::fs::read(dir.path().join(JSON_FILE)).unwrap();

        let reopened = PerfDb::open(dir.path()).unwrap();
        let (csv_again, json_again) = rewrite_bytes(&reopened);
        assert_eq!(original_csv, csv_again);
        assert_eq!(original_json, json_again);
    }

    fn arb_row_data() -> impl Strategy<Value = (Option<String>, f64, TrialStatus)> {
        let value = proptest::option::of(
            proptest::sample::select(vec!["4", "a,b", "x\"y", " ", "#pragma clang loop(i)"])
                .prop_map(str::to_string),
        );
        let status = proptest::sample::select(vec![
            TrialStatus::Ok,
            TrialStatus::CompileFail,
            TrialStatus::RunFail,
            TrialStatus::Timeout,
        ]);
        (value, 1e-6f64..1e6, status)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// The files always round-trip, rewrite byte-identically, and agree
        /// with straightforward recomputations of find_min and the
        /// convergence series.
        #[test]
        fn database_invariants(rows_data in proptest::collection::vec(arb_row_data(), 1..30)) {
            let dir = tempfile::tempdir().unwrap();
            let mut db = PerfDb::create(dir.path(), names(1)).unwrap();
            for (i, (value, metric, status)) in rows_data.iter().enumerate() {
                db.append(row(i as u64 + 1, &[value.as_deref()], *metric, *status)).unwrap();
            }
            let original_csv = std::fs::read(dir.path().join(CSV_FILE)).unwrap();
            let original_json = std::fs::read(dir.path().join(JSON_FILE)).unwrap();

            let reopened = PerfDb::open(dir.path()).unwrap();
            prop_assert_eq!(reopened.rows(), db.rows());
            let (csv_again, json_again) = rewrite_bytes(&reopened);
            prop_assert_eq!(original_csv, csv_again);
            prop_assert_eq!(original_json, json_again);

            // find_min against a direct scan.
            let expected_best = rows_data
                .iter()
                .enumerate()
                .filter(|(_, (_, _, status))| status.is_ok())
                .min_by(|(_, a), (_, b)| a.1.total_cmp(&b.1))
                .map(|(i, _)| i as u64 + 1);
            prop_assert_eq!(db.find_min().map(|(r, _)| r.index), expected_best);

            // Convergence against a direct scan, and monotonicity.
            let series = db.convergence_series();
            let mut best = f64::INFINITY;
            let mut last: Option<f64> = None;
            for (point, (_, metric, status)) in series.iter().zip(&rows_data) {
                if status.is_ok() {
                    best = best.min(*metric);
                }
                let expected = if best.is_finite() { Some(best) } else { None };
                prop_assert_eq!(point.best_so_far, expected);
                if let (Some(prev), Some(now)) = (last, point.best_so_far) {
                    prop_assert!(now <= prev);
                }
                last = point.best_so_far;
            }
            if let (Some((row, _)), Some(last_point)) = (db.find_min(), series.last()) {
                prop_assert_eq!(Some(row.metric), last_point.best_so_far);
            }
        }
    }
}
