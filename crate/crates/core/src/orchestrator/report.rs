//! CSV artifacts: comma-separated, header row, LF line endings.

use std::path::Path;

use super::{Evaluation, RoundMetrics};
use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyMetric;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// One row per round. Columns: round, accuracy, nll, mean_entropy,
/// mean_aleatoric, mean_epistemic, learning_rate, dwc_clamps, then one
/// `w_k` column per client. Wall time is left out so the file is
/// reproducible byte for byte; see [`write_timing_csv`].
pub fn write_metrics_csv(path: impl AsRef<Path>, rounds: &[RoundMetrics]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    let k = rounds.first().map_or(0, |r| r.weights.len());
    let mut header: Vec<String> = [
        "round",
        "accuracy",
        "nll",
        "mean_entropy",
        "mean_aleatoric",
        "mean_epistemic",
        "learning_rate",
        "dwc_clamps",
    ]
    .iter()
    .map(ToString::to_string)
    .collect();
    header.extend((0..k).map(|i| format!("w_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for r in rounds {
        let mut row = vec![
            r.round.to_string(),
            r.accuracy.to_string(),
            r.nll.to_string(),
            r.mean_entropy.to_string(),
            r.mean_aleatoric.to_string(),
            r.mean_epistemic.to_string(),
            r.learning_rate.to_string(),
            r.dwc_clamped.to_string(),
        ];
        row.extend(r.weights.iter().map(ToString::to_string));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `round,wall_time_s` per round.
pub fn write_timing_csv(path: impl AsRef<Path>, rounds: &[RoundMetrics]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["round", "wall_time_s"]).map_err(csv_error)?;
    for r in rounds {
        w.write_record([r.round.to_string(), r.wall_time.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `metric,fraction,accuracy` rows for every uncertainty metric.
pub fn write_retention_csv(path: impl AsRef<Path>, eval: &Evaluation, fractions: &[f64]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["metric", "fraction", "accuracy"]).map_err(csv_error)?;
    for metric in UncertaintyMetric::ALL {
        for (f, acc) in eval.retention(metric, fractions)? {
            w.write_record([metric.as_str().to_string(), f.to_string(), acc.to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}
