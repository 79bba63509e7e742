//! Merges per-run metrics CSVs into one curve table for external plotting.

use std::cmp::Ordering;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no input files")]
    NoInputs,
    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("schema mismatch in {path}: column {column:?} {detail}")]
    SchemaMismatch { path: PathBuf, column: String, detail: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub const RUN_ID_COLUMN: &str = "run_id";

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// `run_id` followed by the shared input schema.
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn report(paths: &[PathBuf]) -> Result<Report, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInputs);
    }
    let mut schema: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut used_ids: Vec<String> = Vec::new();
    for path in paths {
        let csv_err = |source| ReportError::Csv { path: path.clone(), source };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
        match &schema {
            None => schema = Some(header.clone()),
            Some(expected) => check_schema(path, expected, &header)?,
        }
        let run_id = unique_run_id(path, &mut used_ids);
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let mut row = Vec::with_capacity(record.len() + 1);
            row.push(run_id.clone());
            row.extend(record.iter().map(String::from));
            rows.push(row);
        }
    }
    let schema = schema.unwrap_or_default();
    let mut header = vec![RUN_ID_COLUMN.to_string()];
    header.extend(schema);
    sort_rows(&header, &mut rows);
    Ok(Report { header, rows })
}

fn check_schema(path: &Path, expected: &[String], got: &[String]) -> Result<(), ReportError> {
    let mismatch = |column: &str, detail: &str| ReportError::SchemaMismatch {
        path: path.to_path_buf(),
        column: column.to_string(),
        detail: detail.to_string(),
    };
    if let Some(c) = got.iter().find(|c| !expected.contains(c)) {
        return Err(mismatch(c, "is not in the first input's schema"));
    }
    if let Some(c) = expected.iter().find(|c| !got.contains(c)) {
        return Err(mismatch(c, "is missing"));
    }
    if let Some((c, _)) = expected.iter().zip(got).find(|(a, b)| a != b) {
        return Err(mismatch(c, "is out of order"));
    }
    Ok(())
}

fn unique_run_id(path: &Path, used: &mut Vec<String>) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let mut id = stem.clone();
    let mut k = 2;
    while used.contains(&id) {
        id = format!("{stem}#{k}");
        k += 1;
    }
    used.push(id.clone());
    id
}

/// Sorts by (mode, seed, step) when those columns exist; numeric where possible.
fn sort_rows(header: &[String], rows: &mut [Vec<String>]) {
    let keys: Vec<usize> = ["mode", "seed", "step"]
        .iter()
        .filter_map(|k| header.iter().position(|h| h == k))
        .collect();
    if keys.is_empty() {
        return;
    }
    rows.sort_by(|a, b| {
        keys.iter()
            .map(|&k| compare_cells(&a[k], &b[k]))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
}

fn compare_cells(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.cmp(b),
    }
}

impl Report {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |source| ReportError::Csv { path: PathBuf::from("<output>"), source };
        w.write_record(&self.header).map_err(to_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(to_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width table with the last row of every (run, mode, seed) series.
    pub fn render_table(&self) -> String {
        let series_cols: Vec<usize> = [RUN_ID_COLUMN, "mode", "seed"]
            .iter()
            .filter_map(|k| self.header.iter().position(|h| h == k))
            .collect();
        let mut last: Vec<&Vec<String>> = Vec::new();
        for row in &self.rows {
            let key = |r: &Vec<String>| series_cols.iter().map(|&c| r[c].clone()).collect::<Vec<_>>();
            match last.iter_mut().find(|r| key(r) == key(row)) {
                Some(slot) => *slot = row,
                None => last.push(row),
            }
        }
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                last.iter()
                    .map(|r| r[c].len())
                    .chain(std::iter::once(self.header[c].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for row in last {
            out.push('\n');
            out.push_str(&line(row));
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn single_file_identity_modulo_run_id() {
        let dir = tempfile::tempdir().unwrap();
        let body = "step,mode,seed,mean_reward\n0,rapo,1,0.5\n1,rapo,1,0.75\n";
        let p = write(dir.path(), "a.csv", body);
        let r = report(&[p]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let expected = "run_id,step,mode,seed,mean_reward\na,0,rapo,1,0.5\na,1,rapo,1,0.75\n";
        assert_eq!(String::from_utf8(buf).unwrap(), expected);
    }

    #[test]
    fn merged_runs_sorted_by_mode_seed_step() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "rapo.csv", "step,mode,seed\n1,rapo,10\n0,rapo,10\n0,rapo,2\n");
        let b = write(dir.path(), "grpo.csv", "step,mode,seed\n0,grpo,2\n");
        let r = report(&[a, b]).unwrap();
        let order: Vec<(String, String, String)> =
            r.rows.iter().map(|row| (row[2].clone(), row[3].clone(), row[1].clone())).collect();
        assert_eq!(
            order,
            vec![
                ("grpo".into(), "2".into(), "0".into()),
                ("rapo".into(), "2".into(), "0".into()),
                ("rapo".into(), "10".into(), "0".into()),
                ("rapo".into(), "10".into(), "1".into()),
            ]
        );
        assert!(r.render_table().contains("grpo"));
    }

    #[test]
    fn mismatched_columns_name_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "step,mode,seed,mean_reward\n");
        let b = write(dir.path(), "b.csv", "step,mode,seed,objective\n");
        match report(&[a, b]) {
            Err(ReportError::SchemaMismatch { column, .. }) => assert_eq!(column, "objective"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
