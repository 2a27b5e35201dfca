use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_monitored, TrainConfig};
use crate::data::metrics::{evaluate_metric, Metric};
use crate::error::{Error, Result};
use crate::model::{AggModel, Architecture, ExampleSet};

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub architecture: Architecture,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub index: usize,
    pub candidate: Candidate,
    /// Validation metric; `None` when the run failed.
    pub metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub metric: Metric,
    pub best: usize,
    pub rows: Vec<TuneRow>,
}

/// Trains every candidate and keeps the one with the best validation
/// metric. Failed or diverged runs score worst; ties go to the earlier
/// candidate.
pub fn tune(
    grid: &[Candidate],
    train: &[ExampleSet],
    validation: &[ExampleSet],
    num_features: usize,
    metric: Metric,
) -> Result<(AggModel, TuneReport)> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    let outcomes: Vec<Result<(AggModel, f64)>> = grid
        .par_iter()
        .map(|c| {
            let init = AggModel::init_from_examples(&c.architecture, train, num_features)?;
            let (model, _) = train_monitored(init, train, &c.config, None)?;
            let value = evaluate_metric(&model, validation, metric)?;
            if value.is_nan() {
                return Err(Error::Divergence {
                    step: 0,
                    loss: value,
                });
            }
            Ok((model, value))
        })
        .collect();

    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut models = Vec::with_capacity(grid.len());
    for (index, (candidate, outcome)) in grid.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((model, value)) => {
                let better = match best {
                    None => true,
                    Some((_, b)) => metric.is_better(value, b),
                };
                if better {
                    best = Some((index, value));
                }
                rows.push(TuneRow {
                    index,
                    candidate: candidate.clone(),
                    metric: Some(value),
                    error: None,
                });
                models.push(Some(model));
            }
            Err(e) => {
                log::warn!("candidate {index} failed: {e}");
                rows.push(TuneRow {
                    index,
                    candidate: candidate.clone(),
                    metric: None,
                    error: Some(e.to_string()),
                });
                models.push(None);
            }
        }
    }
    let (best, _) = best.ok_or_else(|| Error::Config("every candidate failed".into()))?;
    let model = models[best].take().expect("best candidate has a model");
    Ok((
        model,
        TuneReport {
            metric,
            best,
            rows,
        },
    ))
}
