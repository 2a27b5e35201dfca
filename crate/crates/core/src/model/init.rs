use serde::{Deserialize, Serialize};

use super::{AggModel, ExampleSet};
use crate::error::{Error, Result};
use crate::lattice::{Bounds, Calibrator, Lattice, Monotonicity};

/// Shape and constraint choices for a model. `D` comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Intermediate dimension `K`.
    pub k: usize,
    /// Vertices per dimension of each `phi` lattice.
    pub lattice_size: usize,
    /// Per-feature override of `lattice_size`.
    pub lattice_sizes: Option<Vec<usize>>,
    /// Vertices per dimension of the `rho` lattice.
    pub rho_lattice_size: usize,
    pub phi_keypoints: usize,
    pub rho_keypoints: usize,
    pub output_keypoints: usize,
    /// One flag per feature; empty means unconstrained everywhere.
    pub feature_monotonicity: Vec<Monotonicity>,
    /// Constrain every input calibrator to be increasing, not only those on
    /// constrained features.
    pub monotonic_calibrators: bool,
    /// Give every input calibrator a learned output for missing inputs.
    pub missing_values: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            k: 1,
            lattice_size: 2,
            lattice_sizes: None,
            rho_lattice_size: 2,
            phi_keypoints: 10,
            rho_keypoints: 10,
            output_keypoints: 10,
            feature_monotonicity: Vec::new(),
            monotonic_calibrators: true,
            missing_values: true,
        }
    }
}

/// Type-7 (linear interpolation) empirical quantiles of `values` at
/// `count` evenly spaced probabilities from 0 to 1.
pub fn empirical_quantiles(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || count == 0 {
        return Vec::new();
    }
    let n = sorted.len();
    (0..count)
        .map(|i| {
            let q = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            let h = q * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Keypoints at the empirical quantiles, deduplicated. Falls back to fewer
/// keypoints (with a warning) when the data has too few distinct values.
fn quantile_keypoints(values: &[f64], count: usize, feature: usize) -> Vec<f64> {
    let mut kp = empirical_quantiles(values, count);
    kp.dedup();
    if kp.len() < count {
        log::warn!(
            "feature {feature}: only {} distinct quantiles for {count} keypoints; reducing",
            kp.len()
        );
    }
    match kp.len() {
        0 => vec![0.0, 1.0],
        1 => vec![kp[0], kp[0] + 1.0],
        _ => kp,
    }
}

/// Evenly spaced points from `lo` to `hi`, mirror-symmetric about the
/// midpoint bit-for-bit (so `[-1, 1]` grids are exactly odd).
fn uniform(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let span = (count - 1) as f64;
    (0..count)
        .map(|i| mid + half * ((2 * i) as f64 - span) / span)
        .collect()
}

fn linear_values(count: usize) -> Vec<f64> {
    uniform(0.0, 1.0, count)
}

/// Present values of each feature across every token of `examples`.
pub fn feature_samples(examples: &[ExampleSet], num_features: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); num_features];
    for ex in examples {
        for token in &ex.tokens {
            for (d, x) in token.iter().enumerate().take(num_features) {
                if let Some(v) = x {
                    out[d].push(*v);
                }
            }
        }
    }
    out
}

impl AggModel {
    /// Initial model: input keypoints at the empirical quantiles of
    /// `samples[d]`, linear calibrator values, `phi` lattice params 0, a
    /// linear `rho` lattice that is 0 where a fresh model pools, uniform
    /// `rho` keypoints on `[-1, 1]`, identity output calibrator.
    pub fn init(arch: &Architecture, samples: &[Vec<f64>]) -> Result<AggModel> {
        let d = samples.len();
        let k = arch.k;
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if d == 0 {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        if arch.phi_keypoints < 2 || arch.rho_keypoints < 2 || arch.output_keypoints < 2 {
            return Err(Error::Config("calibrators need at least 2 keypoints".into()));
        }
        let mono = if arch.feature_monotonicity.is_empty() {
            vec![Monotonicity::None; d]
        } else if arch.feature_monotonicity.len() == d {
            arch.feature_monotonicity.clone()
        } else {
            return Err(Error::Config(format!(
                "{} monotonicity flags for {d} features",
                arch.feature_monotonicity.len()
            )));
        };
        let sizes = match &arch.lattice_sizes {
            Some(s) if s.len() == d => s.clone(),
            Some(s) => {
                return Err(Error::Config(format!("{} lattice sizes for {d} features", s.len())))
            }
            None => vec![arch.lattice_size; d],
        };

        let keypoints: Vec<Vec<f64>> = samples
            .iter()
            .enumerate()
            .map(|(f, s)| quantile_keypoints(s, arch.phi_keypoints, f))
            .collect();

        let mut phi_calibrators = Vec::with_capacity(k);
        for _ in 0..k {
            let row = keypoints
                .iter()
                .zip(&mono)
                .map(|(kp, m)| {
                    // Decreasing features keep an increasing calibrator; the
                    // direction lives in the lattice.
                    let monotonic = arch.monotonic_calibrators || m.is_constrained();
                    let cal = Calibrator::new(
                        kp.clone(),
                        linear_values(kp.len()),
                        Some(Bounds::UNIT),
                        monotonic,
                    )?;
                    Ok(if arch.missing_values {
                        cal.with_missing_output(0.5)
                    } else {
                        cal
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            phi_calibrators.push(row);
        }
        let phi_lattices = (0..k)
            .map(|_| Lattice::constant(sizes.clone(), 0.0, Some(Bounds::SYMMETRIC), mono.clone()))
            .collect::<Result<Vec<_>>>()?;

        let rho_kp = uniform(-1.0, 1.0, arch.rho_keypoints);
        let rho_calibrators = (0..k)
            .map(|_| {
                Calibrator::new(
                    rho_kp.clone(),
                    linear_values(rho_kp.len()),
                    Some(Bounds::UNIT),
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        // A flat rho lattice is a fixed point of training: every example
        // pools to the same point, so its vertices get equal updates and no
        // gradient reaches phi. The ramp is 0 at that point, which keeps the
        // fresh model's output at 0.
        let rho_lattice = Lattice::linear_ramp(
            vec![arch.rho_lattice_size; k],
            Some(Bounds::SYMMETRIC),
            vec![Monotonicity::Increasing; k],
        )?;
        let out_kp = uniform(-1.0, 1.0, arch.output_keypoints);
        let output_calibrator = Calibrator::new(out_kp.clone(), out_kp, None, true)?;

        let model = AggModel {
            num_features: d,
            k,
            phi_calibrators,
            phi_lattices,
            rho_calibrators,
            rho_lattice,
            output_calibrator,
            feature_monotonicity: mono,
        };
        model.validate()?;
        Ok(model)
    }

    /// [`AggModel::init`] with quantiles taken from a training set.
    pub fn init_from_examples(
        arch: &Architecture,
        examples: &[ExampleSet],
        num_features: usize,
    ) -> Result<AggModel> {
        Self::init(arch, &feature_samples(examples, num_features))
    }
}
