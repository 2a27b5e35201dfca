//! The six-layer aggregation function `f(x) = rho(mean_m phi(x_m))`.
//!
//! Layer map:
//!
//! 1. `K x D` input calibrators, outputs in `[0, 1]`;
//! 2. `K` lattices over the `D` calibrated features, params in `[-1, 1]`;
//! 3. coordinate-wise mean over the tokens of an example;
//! 4. `K` calibrators on `[-1, 1]`, outputs in `[0, 1]`;
//! 5. one `K`-dimensional lattice, params in `[-1, 1]`;
//! 6. an unbounded output calibrator on `[-1, 1]`.
//!
//! Layers 1-2 form `phi`, layers 4-6 form `rho`. The token mean is
//! computed with an exactly rounded sum, so the output does not depend on
//! token order.

mod curves;
mod explain;
mod init;
mod io;
mod scores;

pub use curves::{write_curves_csv, CalibratorCurve, CurveLayer};
pub use explain::{Explanation, TokenReport};
pub use init::{empirical_quantiles, feature_samples, Architecture};
pub use io::MODEL_FORMAT_VERSION;
pub use scores::{TokenScoreTable, TokenVecKey};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Bounds, Calibrator, CalibratorWeights, Lattice, LatticeEval, Monotonicity};
use crate::sum::exact_mean;

/// One token: `D` features, `None` marks a missing value.
pub type Token = Vec<Option<f64>>;

/// One example: a non-empty set of tokens and a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    #[serde(default)]
    pub id: String,
    pub tokens: Vec<Token>,
    pub label: f64,
    #[serde(default)]
    pub group_id: Option<String>,
}

impl ExampleSet {
    pub fn new(tokens: Vec<Token>, label: f64) -> Self {
        ExampleSet {
            id: String::new(),
            tokens,
            label,
            group_id: None,
        }
    }

    pub fn validate(&self, num_features: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Shape(format!("example '{}' has no tokens", self.id)));
        }
        if let Some(t) = self.tokens.iter().find(|t| t.len() != num_features) {
            return Err(Error::Shape(format!(
                "example '{}' has a token with {} features, expected {num_features}",
                self.id,
                t.len()
            )));
        }
        Ok(())
    }
}

/// Trained (or initialised) aggregation function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggModel {
    pub num_features: usize,
    pub k: usize,
    /// Indexed `[k][d]`.
    pub phi_calibrators: Vec<Vec<Calibrator>>,
    pub phi_lattices: Vec<Lattice>,
    pub rho_calibrators: Vec<Calibrator>,
    pub rho_lattice: Lattice,
    pub output_calibrator: Calibrator,
    pub feature_monotonicity: Vec<Monotonicity>,
}

/// Per-token intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct TokenTrace {
    /// Calibrated features, `[k][d]`.
    pub calibrated: Vec<Vec<f64>>,
    /// Calibrator weights, `[k][d]`; `None` where the input was missing.
    pub weights: Vec<Vec<Option<CalibratorWeights>>>,
    pub lattices: Vec<LatticeEval>,
}

impl TokenTrace {
    pub fn phi(&self) -> Vec<f64> {
        self.lattices.iter().map(|l| l.value).collect()
    }
}

/// Every intermediate of one forward pass, in layer order.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<TokenTrace>,
    pub mean: Vec<f64>,
    pub rho_weights: Vec<CalibratorWeights>,
    pub rho_calibrated: Vec<f64>,
    pub rho_lattice: LatticeEval,
    pub output_weights: CalibratorWeights,
    pub output: f64,
}

impl AggModel {
    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.num_features, self.k);
        if k == 0 || d == 0 {
            return Err(Error::Invalid("model needs K >= 1 and D >= 1".into()));
        }
        if self.phi_calibrators.len() != k
            || self.phi_calibrators.iter().any(|row| row.len() != d)
            || self.phi_lattices.len() != k
            || self.rho_calibrators.len() != k
            || self.feature_monotonicity.len() != d
        {
            return Err(Error::Shape("model component counts disagree with D, K".into()));
        }
        for cal in self
            .phi_calibrators
            .iter()
            .flatten()
            .chain(&self.rho_calibrators)
            .chain(std::iter::once(&self.output_calibrator))
        {
            cal.validate()?;
        }
        for lat in self.phi_lattices.iter() {
            lat.validate()?;
            if lat.num_dims() != d {
                return Err(Error::Shape("phi lattice must have D inputs".into()));
            }
        }
        self.rho_lattice.validate()?;
        if self.rho_lattice.num_dims() != k {
            return Err(Error::Shape("rho lattice must have K inputs".into()));
        }
        Ok(())
    }

    fn check_token(&self, token: &[Option<f64>]) -> Result<()> {
        if token.len() != self.num_features {
            return Err(Error::Shape(format!(
                "token has {} features, model expects {}",
                token.len(),
                self.num_features
            )));
        }
        Ok(())
    }

    /// `phi`: calibrate each feature and interpolate each of the `K`
    /// lattices. Every output lies in `[-1, 1]` for a feasible model.
    pub fn phi_forward(&self, token: &[Option<f64>]) -> Result<Vec<f64>> {
        self.check_token(token)?;
        let mut calibrated = vec![0.0; self.num_features];
        let mut out = Vec::with_capacity(self.k);
        for (cals, lattice) in self.phi_calibrators.iter().zip(&self.phi_lattices) {
            for ((slot, cal), &x) in calibrated.iter_mut().zip(cals).zip(token) {
                *slot = cal.calibrate(x)?;
            }
            out.push(lattice.interpolate(&calibrated)?);
        }
        Ok(out)
    }

    /// Exactly rounded coordinate-wise mean of per-token `phi` outputs.
    pub fn pool(phis: &[Vec<f64>], k: usize) -> Vec<f64> {
        let mut column = Vec::with_capacity(phis.len());
        (0..k)
            .map(|j| {
                column.clear();
                column.extend(phis.iter().map(|p| p[j]));
                exact_mean(&column)
            })
            .collect()
    }

    /// `rho`: layer-4 calibrators, layer-5 lattice, layer-6 output calibrator.
    pub fn rho_forward(&self, mean: &[f64]) -> Result<f64> {
        if mean.len() != self.k {
            return Err(Error::Shape(format!(
                "rho expects {} inputs, got {}",
                self.k,
                mean.len()
            )));
        }
        let u: Vec<f64> = self
            .rho_calibrators
            .iter()
            .zip(mean)
            .map(|(c, &m)| c.eval(m))
            .collect();
        let z = self.rho_lattice.interpolate(&u)?;
        Ok(self.output_calibrator.eval(z))
    }

    /// Full forward pass over a set of tokens.
    pub fn forward(&self, example: &ExampleSet) -> Result<f64> {
        self.forward_tokens(&example.tokens)
    }

    pub fn forward_tokens(&self, tokens: &[Token]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::Shape("example has no tokens".into()));
        }
        let phis = tokens
            .iter()
            .map(|t| self.phi_forward(t))
            .collect::<Result<Vec<_>>>()?;
        self.rho_forward(&Self::pool(&phis, self.k))
    }

    /// Forward pass keeping every intermediate needed by backprop and
    /// the explanation report. Produces the same output bits as
    /// [`AggModel::forward`].
    pub fn forward_trace(&self, tokens: &[Token]) -> Result<ForwardTrace> {
        if tokens.is_empty() {
            return Err(Error::Shape("example has no tokens".into()));
        }
        let mut traces = Vec::with_capacity(tokens.len());
        for token in tokens {
            self.check_token(token)?;
            let mut calibrated = Vec::with_capacity(self.k);
            let mut weights = Vec::with_capacity(self.k);
            let mut lattices = Vec::with_capacity(self.k);
            for (cals, lattice) in self.phi_calibrators.iter().zip(&self.phi_lattices) {
                let mut c_row = Vec::with_capacity(self.num_features);
                let mut w_row = Vec::with_capacity(self.num_features);
                for (cal, &x) in cals.iter().zip(token) {
                    match x {
                        Some(v) => {
                            c_row.push(cal.eval(v));
                            w_row.push(Some(cal.weights(v)));
                        }
                        None => {
                            c_row.push(cal.calibrate(None)?);
                            w_row.push(None);
                        }
                    }
                }
                lattices.push(lattice.evaluate(&c_row)?);
                calibrated.push(c_row);
                weights.push(w_row);
            }
            traces.push(TokenTrace {
                calibrated,
                weights,
                lattices,
            });
        }
        let phis: Vec<Vec<f64>> = traces.iter().map(TokenTrace::phi).collect();
        let mean = Self::pool(&phis, self.k);
        let rho_weights: Vec<CalibratorWeights> = self
            .rho_calibrators
            .iter()
            .zip(&mean)
            .map(|(c, &m)| c.weights(m))
            .collect();
        let rho_calibrated: Vec<f64> = self
            .rho_calibrators
            .iter()
            .zip(&mean)
            .map(|(c, &m)| c.eval(m))
            .collect();
        let rho_lattice = self.rho_lattice.evaluate(&rho_calibrated)?;
        let output_weights = self.output_calibrator.weights(rho_lattice.value);
        let output = self.output_calibrator.eval(rho_lattice.value);
        Ok(ForwardTrace {
            tokens: traces,
            mean,
            rho_weights,
            rho_calibrated,
            rho_lattice,
            output_weights,
            output,
        })
    }

    /// Every calibrator, in curve-export order.
    pub fn calibrators(&self) -> impl Iterator<Item = &Calibrator> {
        self.phi_calibrators
            .iter()
            .flatten()
            .chain(&self.rho_calibrators)
            .chain(std::iter::once(&self.output_calibrator))
    }

    pub fn lattices(&self) -> impl Iterator<Item = &Lattice> {
        self.phi_lattices.iter().chain(std::iter::once(&self.rho_lattice))
    }

    /// Largest constraint violation over every component.
    pub fn max_violation(&self) -> f64 {
        self.calibrators()
            .map(Calibrator::max_violation)
            .chain(self.lattices().map(Lattice::max_violation))
            .fold(0.0, f64::max)
    }

    /// Checks bounds and monotonicity of every component, and that the
    /// constraint flags compose into end-to-end monotonicity for every
    /// constrained feature.
    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        let v = self.max_violation();
        if v > tol || v.is_nan() {
            return Err(Error::Invalid(format!("model violates constraints by {v:e}")));
        }
        let unit = Some(Bounds::UNIT);
        let sym = Some(Bounds::SYMMETRIC);
        let wiring_ok = self.phi_calibrators.iter().flatten().all(|c| c.output_bounds == unit)
            && self.phi_lattices.iter().all(|l| l.param_bounds == sym)
            && self.rho_calibrators.iter().all(|c| c.output_bounds == unit && c.monotonic)
            && self.rho_lattice.param_bounds == sym
            && self
                .rho_lattice
                .monotonicity
                .iter()
                .all(|&m| m == Monotonicity::Increasing)
            && self.output_calibrator.monotonic;
        if !wiring_ok {
            return Err(Error::Invalid("model layer ranges or rho constraints are miswired".into()));
        }
        for (d, &m) in self.feature_monotonicity.iter().enumerate() {
            if !m.is_constrained() {
                continue;
            }
            for k in 0..self.k {
                if !self.phi_calibrators[k][d].monotonic
                    || self.phi_lattices[k].monotonicity[d] != m
                {
                    return Err(Error::Invalid(format!(
                        "feature {d} is constrained but phi path {k} does not enforce it"
                    )));
                }
            }
        }
        Ok(())
    }
}
