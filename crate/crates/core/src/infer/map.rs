use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;

use super::Prediction;
use crate::{Error, Result};

/// Ground truth for one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgment {
    pub recording_id: String,
    pub main_species: usize,
    pub background_species: BTreeSet<usize>,
}

impl RelevanceJudgment {
    pub fn relevant(&self, mode: MapMode) -> BTreeSet<usize> {
        let mut set = BTreeSet::from([self.main_species]);
        if mode == MapMode::WithBackground {
            set.extend(&self.background_species);
        }
        set
    }
}

/// Which species count as relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMode {
    MainOnly,
    WithBackground,
}

impl FromStr for MapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main_only" => Ok(Self::MainOnly),
            "with_background" => Ok(Self::WithBackground),
            other => Err(Error::Config(format!(
                "unknown MAP mode `{other}` (expected main_only or with_background)"
            ))),
        }
    }
}

/// Class ids by descending probability, ties by ascending id.
pub fn rank_classes(probabilities: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probabilities.len()).collect();
    ids.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    ids
}

/// Mean of the precision at the rank of every relevant class.
pub fn average_precision(ranking: &[usize], relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Evaluation("empty relevant set".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, class) in ranking.iter().enumerate() {
        if relevant.contains(class) {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / relevant.len() as f64)
}

/// Mean average precision over all judged recordings.
pub fn map_score(predictions: &[Prediction], judgments: &[RelevanceJudgment], mode: MapMode) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::Evaluation("no judgments to score".into()));
    }
    let lookup: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.recording_id.as_str(), p)).collect();
    let mut total = 0.0;
    for j in judgments {
        let p = lookup
            .get(j.recording_id.as_str())
            .ok_or_else(|| Error::Evaluation(format!("no prediction for recording `{}`", j.recording_id)))?;
        total += average_precision(&rank_classes(&p.probabilities), &j.relevant(mode))?;
    }
    Ok(total / judgments.len() as f64)
}
