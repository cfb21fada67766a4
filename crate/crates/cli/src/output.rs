use std::io::Write;
use std::path::Path;

use multisens::io::{format_number, Provenance};
use serde_json::Value;

use crate::CliResult;

/// Provenance for this process: the command line and the seed.
pub fn provenance(seed: Option<u64>) -> Provenance {
    let args: Vec<String> = std::env::args().skip(1).collect();
    Provenance::new(format!("multisens {}", args.join(" ")).trim_end().to_owned(), seed)
}

pub fn tag(mut value: Value, provenance: &Provenance) -> CliResult<Value> {
    value["provenance"] = serde_json::to_value(provenance)?;
    Ok(value)
}

/// Pretty JSON to `out`, or stdout.
pub fn emit_json(value: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Numeric TSV with `#` provenance and comment lines.
pub fn emit_tsv(
    out: Option<&Path>,
    provenance: &Provenance,
    comments: &[String],
    header: &[&str],
    rows: &[Vec<f64>],
) -> CliResult<()> {
    let mut text = String::new();
    for line in provenance.header_lines().iter().chain(comments) {
        text += &format!("# {line}\n");
    }
    text += &header.join("\t");
    text.push('\n');
    for row in rows {
        text += &row.iter().map(|v| format_number(*v)).collect::<Vec<_>>().join("\t");
        text.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// JSON file with a `provenance` key.
pub fn write_tagged(path: &Path, json: &str, provenance: &Provenance) -> CliResult<()> {
    let value = tag(serde_json::from_str(json)?, provenance)?;
    std::fs::write(path, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}
