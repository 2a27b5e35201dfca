use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggModel, ExampleSet};
use crate::sum::ExactSum;

/// Evaluation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Mae,
    Mse,
    /// Fraction of `+-1` labels whose sign matches the score; a score of
    /// exactly 0 counts as `+1`.
    Accuracy,
    /// Fraction of groups whose positive row ranks in the top `k`.
    PrecisionAt(usize),
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Accuracy | Metric::PrecisionAt(_))
    }

    /// Whether `a` beats `b` strictly.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mae => write!(f, "mae"),
            Metric::Mse => write!(f, "mse"),
            Metric::Accuracy => write!(f, "accuracy"),
            Metric::PrecisionAt(k) => write!(f, "precision@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "mae" => Ok(Metric::Mae),
            "mse" => Ok(Metric::Mse),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            other => {
                let k = other
                    .strip_prefix("precision@")
                    .or_else(|| other.strip_prefix("prec@"))
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))?;
                Ok(Metric::PrecisionAt(k))
            }
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.to_string()
    }
}

/// Metric name to value, serialised as a JSON object.
pub type MetricReport = BTreeMap<String, f64>;

/// Scores every example in parallel; the output order matches the input.
pub fn predict(model: &AggModel, examples: &[ExampleSet]) -> Result<Vec<f64>> {
    examples.par_iter().map(|ex| model.forward(ex)).collect()
}

/// Computes `metric` from precomputed scores.
pub fn compute_metric(scores: &[f64], examples: &[ExampleSet], metric: Metric) -> Result<f64> {
    if scores.len() != examples.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} examples",
            scores.len(),
            examples.len()
        )));
    }
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let n = examples.len() as f64;
    match metric {
        Metric::Mae => {
            let mut s = ExactSum::new();
            for (p, ex) in scores.iter().zip(examples) {
                s.add((p - ex.label).abs());
            }
            Ok(s.value() / n)
        }
        Metric::Mse => {
            let mut s = ExactSum::new();
            for (p, ex) in scores.iter().zip(examples) {
                s.add((p - ex.label).powi(2));
            }
            Ok(s.value() / n)
        }
        Metric::Accuracy => {
            let mut correct = 0usize;
            for (&p, ex) in scores.iter().zip(examples) {
                if ex.label != 1.0 && ex.label != -1.0 {
                    return Err(Error::Config(format!(
                        "accuracy needs +-1 labels, found {}",
                        ex.label
                    )));
                }
                let predicted = if p >= 0.0 { 1.0 } else { -1.0 };
                if predicted == ex.label {
                    correct += 1;
                }
            }
            Ok(correct as f64 / n)
        }
        Metric::PrecisionAt(k) => precision_at(scores, examples, k),
    }
}

/// Groups rows by `group_id` (in order of first appearance) and counts the
/// groups whose first positive row ranks within the top `k`. Rows with
/// equal scores rank by their order in the dataset. Groups without a
/// positive row are skipped.
fn precision_at(scores: &[f64], examples: &[ExampleSet], k: usize) -> Result<f64> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, ex) in examples.iter().enumerate() {
        let gid = ex.group_id.as_deref().ok_or_else(|| {
            Error::Config(format!("precision@{k} needs group ids; example '{}' has none", ex.id))
        })?;
        let g = *index.entry(gid).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut hits = 0usize;
    let mut counted = 0usize;
    for rows in &groups {
        let Some(pos_at) = rows.iter().position(|&i| examples[i].label > 0.0) else {
            continue;
        };
        let pos_score = scores[rows[pos_at]];
        let rank = rows
            .iter()
            .enumerate()
            .filter(|&(j, &i)| scores[i] > pos_score || (scores[i] == pos_score && j < pos_at))
            .count();
        counted += 1;
        if rank < k {
            hits += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Config(format!(
            "precision@{k}: no group has a positive row"
        )));
    }
    Ok(hits as f64 / counted as f64)
}

/// Scores `examples` and computes one metric.
pub fn evaluate_metric(model: &AggModel, examples: &[ExampleSet], metric: Metric) -> Result<f64> {
    let scores = predict(model, examples)?;
    compute_metric(&scores, examples, metric)
}

/// Scores `examples` once and computes every requested metric.
pub fn evaluate(model: &AggModel, examples: &[ExampleSet], metrics: &[Metric]) -> Result<MetricReport> {
    let scores = predict(model, examples)?;
    metrics
        .iter()
        .map(|&m| Ok((m.to_string(), compute_metric(&scores, examples, m)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(label: f64, group: Option<&str>) -> ExampleSet {
        let mut e = ExampleSet::new(vec![vec![Some(0.0)]], label);
        e.group_id = group.map(str::to_string);
        e
    }

    #[test]
    fn parse_and_display() {
        for s in ["mae", "mse", "accuracy", "precision@1", "precision@3"] {
            assert_eq!(s.parse::<Metric>().unwrap().to_string(), s);
        }
        assert!("precision@0".parse::<Metric>().is_err());
        assert!("auc".parse::<Metric>().is_err());
    }

    #[test]
    fn perfect_predictor() {
        let examples: Vec<_> = [1.0, -1.0, 1.0, -1.0]
            .iter()
            .enumerate()
            .map(|(i, &y)| ex(y, Some(if i < 2 { "a" } else { "b" })))
            .collect();
        let scores: Vec<f64> = examples.iter().map(|e| e.label).collect();
        assert_eq!(compute_metric(&scores, &examples, Metric::Mae).unwrap(), 0.0);
        assert_eq!(compute_metric(&scores, &examples, Metric::Accuracy).unwrap(), 1.0);
        assert_eq!(compute_metric(&scores, &examples, Metric::PrecisionAt(1)).unwrap(), 1.0);
    }

    #[test]
    fn zero_predictor_on_balanced_labels() {
        let examples: Vec<_> = (0..10).map(|i| ex(if i % 2 == 0 { 1.0 } else { -1.0 }, None)).collect();
        let scores = vec![0.0; 10];
        assert_eq!(compute_metric(&scores, &examples, Metric::Accuracy).unwrap(), 0.5);
    }

    #[test]
    fn third_ranked_positive() {
        let examples: Vec<_> = (0..20).map(|i| ex(if i == 7 { 1.0 } else { -1.0 }, Some("g"))).collect();
        let mut scores = vec![0.0; 20];
        scores[3] = 0.9;
        scores[11] = 0.8;
        scores[7] = 0.5;
        assert_eq!(compute_metric(&scores, &examples, Metric::PrecisionAt(1)).unwrap(), 0.0);
        assert_eq!(compute_metric(&scores, &examples, Metric::PrecisionAt(3)).unwrap(), 1.0);
    }

    #[test]
    fn ties_rank_by_candidate_order() {
        let examples: Vec<_> = (0..3).map(|i| ex(if i == 1 { 1.0 } else { -1.0 }, Some("g"))).collect();
        let scores = vec![0.5, 0.5, 0.5];
        assert_eq!(compute_metric(&scores, &examples, Metric::PrecisionAt(1)).unwrap(), 0.0);
        assert_eq!(compute_metric(&scores, &examples, Metric::PrecisionAt(2)).unwrap(), 1.0);
    }

    #[test]
    fn precision_needs_groups() {
        let examples = vec![ex(1.0, None)];
        assert!(matches!(
            compute_metric(&[0.0], &examples, Metric::PrecisionAt(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn regression_errors() {
        let examples = vec![ex(1.0, None), ex(3.0, None)];
        let scores = [2.0, 1.0];
        assert_eq!(compute_metric(&scores, &examples, Metric::Mae).unwrap(), 1.5);
        assert_eq!(compute_metric(&scores, &examples, Metric::Mse).unwrap(), 2.5);
        assert!(compute_metric(&scores, &examples, Metric::Accuracy).is_err());
    }
}
