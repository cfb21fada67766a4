//! CSV tables with `#` provenance comments, and dataset files.
//!
//! Dialect: comma separated, header row required, UTF-8, `.` decimal point.
//! Lines starting with `#` are comments.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::TreatmentMatrix;
use crate::simulate::SimData;

/// Named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn new(names: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::Dimension(format!("{} column names for {} columns", names.len(), data.ncols())));
        }
        Ok(Self { names, data })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Malformed(format!("column {name:?} not found; available: {}", self.names.join(", "))))
    }

    pub fn column(&self, name: &str) -> Result<DVector<f64>> {
        Ok(self.data.column(self.index_of(name)?).into_owned())
    }

    /// The listed columns, in order.
    pub fn select(&self, names: &[String]) -> Result<Table> {
        let idx = names.iter().map(|n| self.index_of(n)).collect::<Result<Vec<_>>>()?;
        Ok(Table { names: names.to_vec(), data: self.data.select_columns(&idx) })
    }

    /// Every column except the listed ones.
    pub fn without(&self, names: &[String]) -> Result<Table> {
        for n in names {
            self.index_of(n)?;
        }
        let keep: Vec<String> = self.names.iter().filter(|n| !names.contains(n)).cloned().collect();
        self.select(&keep)
    }

    pub fn into_treatments(self) -> Result<TreatmentMatrix<f64>> {
        TreatmentMatrix::new(self.data, Some(self.names))
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Malformed(format!("cannot open {}: {e}", path.display())))?;
    read_csv_from(file)
}

pub fn read_csv_from(reader: impl Read) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Malformed("missing header row".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Malformed(format!("row {}, column {:?}: {field:?} is not a number", r + 1, names[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Malformed(format!("row {}, column {:?}: non-finite value", r + 1, names[c])));
            }
            values.push(v);
        }
        rows += 1;
    }
    Table::new(names.clone(), DMatrix::from_row_slice(rows, names.len(), &values))
}

/// Writes `#`-prefixed header lines, the column names and the rows.
pub fn write_csv_to(mut writer: impl Write, table: &Table, comments: &[String]) -> Result<()> {
    for line in comments {
        writeln!(writer, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&table.names)?;
    for row in table.data.row_iter() {
        w.write_record(row.iter().map(|v| format_number(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, table: &Table, comments: &[String]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(std::io::BufWriter::new(file), table, comments)
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}

/// Origin of an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub command: String,
    pub seed: Option<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new(command: impl Into<String>, seed: Option<u64>) -> Self {
        Self { command: command.into(), seed, version: env!("CARGO_PKG_VERSION").to_owned() }
    }

    pub fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("command: {}", self.command)];
        if let Some(seed) = self.seed {
            lines.push(format!("seed: {seed}"));
        }
        lines.push(format!("version: multisens {}", self.version));
        lines
    }
}

/// Paths written by [`write_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub csv: PathBuf,
    pub truth: PathBuf,
}

/// Writes `<stem>.csv` (treatments `t1..tk`, then `y`) and `<stem>.truth.json`.
pub fn write_dataset(stem: impl AsRef<Path>, data: &SimData, provenance: &Provenance) -> Result<DatasetFiles> {
    let stem = stem.as_ref();
    let k = data.t.ncols();
    let mut names: Vec<String> = (1..=k).map(|j| format!("t{j}")).collect();
    names.push("y".into());
    let mut all = DMatrix::zeros(data.t.nrows(), k + 1);
    all.columns_mut(0, k).copy_from(data.t.data());
    all.set_column(k, &data.y);
    let csv = stem.with_extension("csv");
    write_csv(&csv, &Table::new(names, all)?, &provenance.header_lines())?;
    let truth = PathBuf::from(format!("{}.truth.json", stem.display()));
    let mut json: serde_json::Value = serde_json::from_str(&data.truth.to_json()?)?;
    json["provenance"] = serde_json::to_value(provenance)?;
    std::fs::write(&truth, serde_json::to_string_pretty(&json)?)?;
    Ok(DatasetFiles { csv, truth })
}
