use std::path::{Path, PathBuf};

use multisens::io::{read_csv, Table};
use multisens::{ConditionalConfounder, Contrast, FittedOutcome, TreatmentMatrix};
use nalgebra::DVector;
use serde_json::Value;

use crate::args::{ContrastArgs, DataArgs};
use crate::{CliError, CliResult};

pub const FACTOR_FILE: &str = "factor_model.json";
pub const CONFOUNDER_FILE: &str = "confounder.json";
pub const OUTCOME_FILE: &str = "outcome.json";

/// A value `v`, a list `a,b,c`, or an inclusive grid `start:stop:count`.
pub fn parse_grid(text: &str, what: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("{what}: cannot parse {text:?}; expected v, a,b,c or start:stop:count"));
    let values: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let [start, stop, count] = parts.as_slice() else { return Err(bad()) };
        let (start, stop): (f64, f64) = (start.parse().map_err(|_| bad())?, stop.parse().map_err(|_| bad())?);
        let count: usize = count.parse().map_err(|_| bad())?;
        match count {
            0 => return Err(bad()),
            1 => vec![start],
            _ => (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect(),
        }
    } else {
        text.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

pub fn parse_r2(text: &str, what: &str) -> CliResult<Vec<f64>> {
    let values = parse_grid(text, what)?;
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CliError::Usage(format!("{what}: R² must lie in [0, 1], got {v}")));
    }
    Ok(values)
}

/// Treatments and (optionally) the outcome from the data flags.
pub fn load_data(args: &DataArgs) -> CliResult<(TreatmentMatrix<f64>, Option<DVector<f64>>)> {
    let table = read_csv(&args.treatments)?;
    let mut drop = args.exclude.clone();
    let mut y = None;
    if let Some(outcome) = &args.outcome {
        if table.names.contains(outcome) {
            y = Some(table.column(outcome)?);
            drop.push(outcome.clone());
        } else if Path::new(outcome).is_file() {
            let file = read_csv(outcome)?;
            if file.names.len() != 1 {
                return Err(multisens::Error::Malformed(format!("outcome file {outcome} must have one column")).into());
            }
            if file.nrows() != table.nrows() {
                return Err(multisens::Error::Dimension(format!(
                    "outcome file has {} rows, treatments have {}",
                    file.nrows(),
                    table.nrows()
                ))
                .into());
            }
            y = Some(file.data.column(0).into_owned());
        } else {
            table.index_of(outcome)?;
        }
    }
    Ok((table.without(&drop)?.into_treatments()?, y))
}

/// The three files written by `fit`.
pub struct Model {
    pub cc: ConditionalConfounder<f64>,
    pub outcome: FittedOutcome,
    pub columns: Vec<String>,
}

impl Model {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let read = |name: &str| -> CliResult<String> {
            let path: PathBuf = dir.join(name);
            std::fs::read_to_string(&path)
                .map_err(|e| multisens::Error::Malformed(format!("cannot read {}: {e}", path.display())).into())
        };
        let cc = ConditionalConfounder::from_json(&read(CONFOUNDER_FILE)?)?;
        let outcome = FittedOutcome::from_json(&read(OUTCOME_FILE)?)?;
        let factor: Value = serde_json::from_str(&read(FACTOR_FILE)?)?;
        let columns: Vec<String> = serde_json::from_value(factor["columns"].clone())
            .map_err(|_| multisens::Error::Malformed(format!("{FACTOR_FILE} lacks a columns list")))?;
        if columns.len() != cc.k() || outcome.as_model().k() != cc.k() {
            return Err(multisens::Error::Dimension(format!(
                "model files disagree on the number of treatments ({} columns, confounder k={}, outcome k={})",
                columns.len(),
                cc.k(),
                outcome.as_model().k()
            ))
            .into());
        }
        Ok(Self { cc, outcome, columns })
    }

    /// The model's treatment columns from a CSV, in fit order.
    pub fn observed(&self, path: &Path) -> CliResult<TreatmentMatrix<f64>> {
        Ok(read_csv(path)?.select(&self.columns)?.into_treatments()?)
    }

    pub fn contrasts(&self, args: &ContrastArgs) -> CliResult<Vec<(String, Contrast<f64>)>> {
        let k = self.columns.len();
        let mut out = Vec::new();
        if args.all_unitwise {
            for j in 0..k {
                out.push((format!("e{}", j + 1), Contrast::unit(k, j)?));
            }
        }
        for spec in &args.contrast {
            out.push((spec.clone(), self.parse_contrast(spec)?));
        }
        if out.is_empty() {
            return Err(CliError::Usage("give at least one --contrast or --all-unitwise".into()));
        }
        Ok(out)
    }

    fn parse_contrast(&self, spec: &str) -> CliResult<Contrast<f64>> {
        let k = self.columns.len();
        if let Some((a, b)) = spec.split_once(',') {
            return Ok(Contrast::new(self.level_file(a.trim())?, self.level_file(b.trim())?)?);
        }
        if let Some(j) = self.columns.iter().position(|c| c == spec) {
            return Ok(Contrast::unit(k, j)?);
        }
        if let Some(j) = spec.strip_prefix('e').and_then(|s| s.parse::<usize>().ok()) {
            if (1..=k).contains(&j) {
                return Ok(Contrast::unit(k, j - 1)?);
            }
            return Err(CliError::Usage(format!("contrast {spec}: index must lie in 1..={k}")));
        }
        Err(CliError::Usage(format!("contrast {spec:?}: expected eJ, a treatment column, or t1.csv,t2.csv")))
    }

    /// A single-row CSV treatment level. Columns are matched by name when
    /// the header names the model's treatments, else taken in order.
    fn level_file(&self, path: &str) -> CliResult<DVector<f64>> {
        let table = read_csv(path)?;
        if table.nrows() != 1 {
            return Err(multisens::Error::Malformed(format!("{path}: expected one row, found {}", table.nrows())).into());
        }
        let table: Table = if self.columns.iter().all(|c| table.names.contains(c)) {
            table.select(&self.columns)?
        } else if table.names.len() == self.columns.len() {
            table
        } else {
            return Err(multisens::Error::Dimension(format!(
                "{path}: {} columns for {} treatments",
                table.names.len(),
                self.columns.len()
            ))
            .into());
        };
        Ok(table.data.row(0).transpose())
    }
}
