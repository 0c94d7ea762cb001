use std::fs;
use std::path::{Path, PathBuf};

use cloze_pet::corpus::Sample;
use cloze_pet::{Error, Result};
use serde::{Deserialize, Serialize};

/// Name of the invocation record every subcommand writes into its output directory.
pub const INVOCATION: &str = "invocation.json";

/// Make `out` ready for an invocation described by `echo`.
///
/// A directory written by the same invocation is reused, so a re-run
/// reproduces the same files. Anything else needs `force`; a directory we wrote
/// ourselves is then cleared, a foreign one is written into as is.
pub fn claim_output(out: &Path, echo: &serde_json::Value, force: bool) -> Result<()> {
    let text = serde_json::to_string_pretty(echo)? + "\n";
    let record = out.join(INVOCATION);
    if out.is_file() {
        if !force {
            return Err(Error::OutputExists(out.display().to_string()));
        }
        fs::remove_file(out)?;
    } else if out.is_dir() && fs::read_dir(out)?.next().is_some() {
        let previous = fs::read_to_string(&record).ok();
        if previous.as_deref() != Some(text.as_str()) {
            if !force {
                return Err(Error::OutputExists(out.display().to_string()));
            }
            if previous.is_some() {
                fs::remove_dir_all(out)?;
            }
        }
    }
    fs::create_dir_all(out)?;
    fs::write(record, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub gold: String,
    pub predicted: String,
}

pub fn write_predictions(path: &Path, samples: &[Sample], classes: &[String], pred: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (s, &p) in samples.iter().zip(pred) {
        w.serialize(PredictionRow {
            id: s.id(),
            gold: s.label().unwrap_or_default().to_string(),
            predicted: classes[p].clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Read `predictions.csv`, given directly or as the run directory containing it.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let file: PathBuf = if path.is_dir() {
        path.join("predictions.csv")
    } else {
        path.to_path_buf()
    };
    let mut r = csv::Reader::from_path(&file)?;
    let rows = r.deserialize().collect::<Result<Vec<PredictionRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Eval(cloze_pet::eval::EvalError::EmptyEvaluation));
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
