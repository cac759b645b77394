use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{Prediction, RelevanceJudgment};
use crate::{Error, Result};

const PREDICTION_HEADER: [&str; 3] = ["recording_id", "class_id", "probability"];
const JUDGMENT_HEADER: [&str; 3] = ["recording_id", "main_species", "background_species"];

fn open(path: &Path, header: [&str; 3]) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(e, 1))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", header.join(",")),
        });
    }
    Ok(reader)
}

fn parse_error(e: csv::Error, line: u64) -> Error {
    Error::Parse {
        line: e.position().map_or(line, |p| p.line()),
        message: e.to_string(),
    }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(i).unwrap_or("");
    raw.parse().map_err(|e| Error::Parse {
        line,
        message: format!("{name} `{raw}`: {e}"),
    })
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `recording_id,class_id,probability` rows, every class of every
/// recording. Probabilities use the shortest exact decimal form.
pub fn write_predictions(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<()> {
    let mut out = PREDICTION_HEADER.join(",") + "\n";
    for p in predictions {
        for (c, v) in p.probabilities.iter().enumerate() {
            out.push_str(&format!("{},{c},{v}\n", p.recording_id));
        }
    }
    write_text(path.as_ref(), out)
}

/// Reads a prediction file; recordings keep their first-appearance order
/// and must list each class id `0..K` exactly once.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let mut reader = open(path.as_ref(), PREDICTION_HEADER)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, f64, u64)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty recording_id".into(),
            });
        }
        let class: usize = field(&record, 1, "class_id", line)?;
        let prob: f64 = field(&record, 2, "probability", line)?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::Parse {
                line,
                message: format!("probability {prob} outside [0, 1]"),
            });
        }
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push((class, prob, line));
    }
    let mut classes = None;
    order
        .into_iter()
        .map(|id| {
            let mut r = rows.remove(&id).unwrap_or_default();
            r.sort_by_key(|&(c, _, _)| c);
            let k = r.len();
            if *classes.get_or_insert(k) != k || r.iter().enumerate().any(|(i, &(c, _, _))| c != i) {
                return Err(Error::Parse {
                    line: r.first().map_or(0, |x| x.2),
                    message: format!("recording `{id}` does not list every class exactly once"),
                });
            }
            Ok(Prediction {
                recording_id: id,
                probabilities: r.into_iter().map(|(_, p, _)| p).collect(),
            })
        })
        .collect()
}

pub fn write_judgments(path: impl AsRef<Path>, judgments: &[RelevanceJudgment]) -> Result<()> {
    let mut out = JUDGMENT_HEADER.join(",") + "\n";
    for j in judgments {
        let bg: Vec<String> = j.background_species.iter().map(usize::to_string).collect();
        out.push_str(&format!("{},{},{}\n", j.recording_id, j.main_species, bg.join(";")));
    }
    write_text(path.as_ref(), out)
}

/// Reads `recording_id,main_species,background_species` rows; background
/// species are `;`-separated and may be empty.
pub fn read_judgments(path: impl AsRef<Path>) -> Result<Vec<RelevanceJudgment>> {
    let mut reader = open(path.as_ref(), JUDGMENT_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let recording_id = record.get(0).unwrap_or("").to_string();
        if recording_id.is_empty() || !seen.insert(recording_id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("missing or duplicate recording_id `{recording_id}`"),
            });
        }
        let main_species: usize = field(&record, 1, "main_species", line)?;
        let background_species = record
            .get(2)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    message: format!("background species `{s}`: {e}"),
                })
            })
            .collect::<Result<BTreeSet<_>>>()?;
        if background_species.contains(&main_species) {
            return Err(Error::Parse {
                line,
                message: format!("main species {main_species} also listed as background"),
            });
        }
        out.push(RelevanceJudgment {
            recording_id,
            main_species,
            background_species,
        });
    }
    Ok(out)
}
