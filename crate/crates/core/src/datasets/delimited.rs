use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};

/// How to read a comma-separated dataset: feature columns first, integer
/// label in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct DelimitedSchema {
    pub has_header: bool,
    /// Class count; when `None` it is inferred as max label + 1.
    pub classes: Option<usize>,
}

impl Default for DelimitedSchema {
    fn default() -> Self {
        Self {
            has_header: false,
            classes: None,
        }
    }
}

pub fn load_delimited(path: impl AsRef<Path>, schema: &DelimitedSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(File::open(path)?);

    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() < 2 {
            return Err(parse_err(format!("expected features and a label, got {} field(s)", record.len())));
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(format!("expected {expected} feature columns, got {d}")));
            }
            _ => {}
        }
        for field in record.iter().take(d) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad feature value `{field}`")))?;
            features.push(x);
        }
        let raw = record[d].trim();
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(format!("bad label `{raw}`")))?;
        if let Some(c) = schema.classes {
            if label >= c {
                return Err(Error::Validation(format!(
                    "line {line}: label {label} is not below class count {c}"
                )));
            }
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::Validation(format!("{} contains no rows", path.display())))?;
    let classes = schema
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(dim, classes, features, labels)
}

/// Writes rows as `x0,x1,...,label`, with an optional `x0,...,label` header.
pub fn write_delimited(ds: &LabeledDataset, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    if header {
        let mut names: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
        names.push("label".into());
        writeln!(out, "{}", names.join(","))?;
    }
    for i in 0..ds.len() {
        for x in ds.features(i) {
            write!(out, "{x},")?;
        }
        writeln!(out, "{}", ds.label(i))?;
    }
    out.flush()?;
    Ok(())
}
