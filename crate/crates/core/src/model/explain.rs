use serde::{Deserialize, Serialize};

use super::{AggModel, ExampleSet};
use crate::error::Result;

/// What one token contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    pub index: usize,
    pub features: Vec<Option<f64>>,
    /// Calibrated features, `[k][d]`.
    pub calibrated: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

/// Layer-by-layer breakdown of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub id: String,
    pub tokens: Vec<TokenReport>,
    pub mean: Vec<f64>,
    pub rho_calibrated: Vec<f64>,
    pub rho_lattice: f64,
    pub output: f64,
}

impl Explanation {
    /// One line per token, then the pooled value and the output:
    ///
    /// ```text
    /// token 0: phi = -0.005
    /// mean = -0.0287
    /// output = -0.28
    /// ```
    pub fn to_text(&self) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&format!("token {}: phi = {}\n", t.index, fmt(&t.phi)));
        }
        out.push_str(&format!("mean = {}\n", fmt(&self.mean)));
        out.push_str(&format!("output = {:.3}\n", self.output));
        out
    }
}

impl AggModel {
    /// Per-token breakdown of `forward`. The reported mean is exactly the
    /// pooled value of the reported `phi` outputs.
    pub fn explain(&self, example: &ExampleSet) -> Result<Explanation> {
        let trace = self.forward_trace(&example.tokens)?;
        let tokens = trace
            .tokens
            .iter()
            .zip(&example.tokens)
            .enumerate()
            .map(|(index, (t, raw))| TokenReport {
                index,
                features: raw.clone(),
                calibrated: t.calibrated.clone(),
                phi: t.phi(),
            })
            .collect();
        Ok(Explanation {
            id: example.id.clone(),
            tokens,
            mean: trace.mean,
            rho_calibrated: trace.rho_calibrated,
            rho_lattice: trace.rho_lattice.value,
            output: trace.output,
        })
    }
}
