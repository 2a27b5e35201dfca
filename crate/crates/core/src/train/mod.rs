//! Constrained empirical risk minimisation: mini-batch Adagrad with
//! periodic projection onto the feasible set, and an unconditional
//! projection of the final iterate.

mod backprop;
mod loss;
mod tune;

pub use backprop::{backprop, param_arrays, param_arrays_mut, CalibratorGrad, GradientBundle};
pub use loss::LossKind;
pub use tune::{tune, Candidate, TuneReport, TuneRow};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::metrics::Metric;
use crate::error::{Error, Result};
use crate::model::{AggModel, ExampleSet};
use crate::sum::ExactSum;

/// Adagrad's denominator offset.
pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimiser steps between projections.
    pub projection_period: usize,
    pub seed: u64,
    /// Weight of an L2 penalty on every parameter.
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::SquaredError,
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 32,
            projection_period: 1,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.projection_period == 0 {
            return Err(Error::Config("projection_period must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config("l2_penalty must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_metric: Option<f64>,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Seed of the per-epoch batch shuffles.
    pub seed: u64,
}

impl TrainTrace {
    /// CSV with header `epoch,mean_loss,validation_metric`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "mean_loss", "validation_metric"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.mean_loss),
                r.validation_metric.map(|v| format!("{v:?}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Projects every component onto its feasible set.
pub fn project_all(model: &mut AggModel) -> Result<()> {
    for cal in model.phi_calibrators.iter_mut().flatten() {
        cal.project_in_place();
    }
    for lat in &mut model.phi_lattices {
        lat.project_in_place()?;
    }
    for cal in &mut model.rho_calibrators {
        cal.project_in_place();
    }
    model.rho_lattice.project_in_place()?;
    model.output_calibrator.project_in_place();
    Ok(())
}

/// Owned variant of [`project_all`].
pub fn projected(mut model: AggModel) -> Result<AggModel> {
    project_all(&mut model)?;
    Ok(model)
}

/// Validation monitoring for [`train_monitored`].
pub struct Monitor<'a> {
    pub examples: &'a [ExampleSet],
    pub metric: Metric,
}

pub fn train(
    model: AggModel,
    examples: &[ExampleSet],
    config: &TrainConfig,
) -> Result<(AggModel, TrainTrace)> {
    train_monitored(model, examples, config, None)
}

/// Mini-batch projected Adagrad. Batches are drawn from a per-epoch
/// shuffle seeded by `config.seed`; per-example gradients are computed in
/// parallel and reduced in batch order, so runs are bit-reproducible.
pub fn train_monitored(
    model: AggModel,
    examples: &[ExampleSet],
    config: &TrainConfig,
    monitor: Option<Monitor<'_>>,
) -> Result<(AggModel, TrainTrace)> {
    config.validate()?;
    model.validate()?;
    for ex in examples {
        ex.validate(model.num_features)?;
    }
    if config.epochs > 0 && examples.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }

    let mut model = model;
    let mut accum: Vec<Vec<f64>> = param_arrays(&model).iter().map(|a| vec![0.0; a.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = TrainTrace {
        seed: config.seed,
        ..TrainTrace::default()
    };
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = ExactSum::new();
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, GradientBundle)>> = batch
                .par_iter()
                .map(|&i| backprop(&model, &examples[i].tokens, examples[i].label, config.loss))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grad = GradientBundle::zeros_like(&model);
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                epoch_loss.add(loss);
                batch_loss += loss;
                grad.add_scaled(&g, scale);
            }
            if !batch_loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss: batch_loss * scale,
                });
            }
            let l2 = config.l2_penalty;
            for ((params, g), acc) in param_arrays_mut(&mut model)
                .into_iter()
                .zip(grad.arrays())
                .zip(accum.iter_mut())
            {
                for ((p, &gi), a) in params.iter_mut().zip(g).zip(acc.iter_mut()) {
                    let gi = gi + 2.0 * l2 * *p;
                    *a += gi * gi;
                    *p -= config.learning_rate * gi / (a.sqrt() + ADAGRAD_EPSILON);
                }
            }
            step += 1;
            if step % config.projection_period == 0 {
                project_all(&mut model)?;
            }
        }
        let mean_loss = epoch_loss.value() / examples.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: mean_loss,
            });
        }
        let validation_metric = match &monitor {
            Some(m) => Some(crate::data::metrics::evaluate_metric(&model, m.examples, m.metric)?),
            None => None,
        };
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6}");
        trace.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            validation_metric,
        });
    }
    trace.steps = step;

    project_all(&mut model)?;
    model.check_feasible(0.0)?;
    Ok((model, trace))
}
