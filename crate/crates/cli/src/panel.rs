//! CSV ingestion of return or price panels.

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use crate::config::DataMode;
use crate::error::{CliError, CliResult};

/// Log returns indexed by date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<String>,
    pub names: Vec<String>,
    /// One vector per named column.
    pub columns: Vec<Vec<f64>>,
}

fn parse_date(s: &str) -> Option<NaiveDateTime> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

impl ReturnPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, name: &str) -> CliResult<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| CliError::Config(format!("column '{name}' not found in the panel")))
    }

    /// Parse CSV text. Rows are numbered from 1 for the first data row.
    pub fn from_reader<R: std::io::Read>(reader: R, mode: DataMode) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| CliError::Data(format!("cannot read header: {e}")))?.clone();
        if header.get(0).map(str::trim) != Some("date") {
            return Err(CliError::Data("first column must be named 'date'".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        if names.is_empty() {
            return Err(CliError::Data("no value columns".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(CliError::Data(format!("column {} has an empty name", i + 2)));
            }
            if names[..i].contains(n) {
                return Err(CliError::Data(format!("column name '{n}' is not unique")));
            }
        }

        let mut dates: Vec<String> = Vec::new();
        let mut last: Option<NaiveDateTime> = None;
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
            let date = rec.get(0).unwrap_or("").trim();
            let parsed = parse_date(date)
                .ok_or_else(|| CliError::Data(format!("row {row}: '{date}' is not an ISO-8601 date")))?;
            if let Some(prev) = last {
                if parsed == prev {
                    return Err(CliError::Data(format!("row {row}: duplicate date {date}")));
                }
                if parsed < prev {
                    return Err(CliError::Data(format!("row {row}: date {date} is not after the previous date")));
                }
            }
            last = Some(parsed);
            if rec.len() > names.len() + 1 {
                return Err(CliError::Data(format!("row {row}: {} cells but {} columns", rec.len(), names.len() + 1)));
            }
            for (c, name) in names.iter().enumerate() {
                let cell = rec.get(c + 1).map(str::trim).unwrap_or("");
                if cell.is_empty() {
                    return Err(CliError::Data(format!("row {row}, column '{name}': missing value")));
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| CliError::Data(format!("row {row}, column '{name}': '{cell}' is not a number")))?;
                if !v.is_finite() {
                    return Err(CliError::Data(format!("row {row}, column '{name}': value is not finite")));
                }
                if mode == DataMode::Prices && v <= 0.0 {
                    return Err(CliError::Data(format!("row {row}, column '{name}': price {v} must be positive")));
                }
                columns[c].push(v);
            }
            dates.push(date.to_string());
        }

        if mode == DataMode::Prices {
            if dates.len() < 2 {
                return Err(CliError::Data("prices mode needs at least two rows".into()));
            }
            dates.remove(0);
            for col in &mut columns {
                *col = col.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
            }
        }
        Ok(ReturnPanel { dates, names, columns })
    }

    pub fn load(path: &Path, mode: DataMode) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::from_reader(file, mode).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
