use crate::error::Result;
use crate::lattice::{Calibrator, CalibratorWeights};
use crate::model::{AggModel, ForwardTrace, Token, TokenTrace};

use super::LossKind;

/// Gradient of one calibrator's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratorGrad {
    pub values: Vec<f64>,
    pub missing: Option<f64>,
}

impl CalibratorGrad {
    fn zeros_like(cal: &Calibrator) -> Self {
        CalibratorGrad {
            values: vec![0.0; cal.values.len()],
            missing: cal.missing_output.map(|_| 0.0),
        }
    }

    fn accumulate(&mut self, w: &CalibratorWeights, upstream: f64) {
        self.values[w.lower.0] += w.lower.1 * upstream;
        if let Some((i, x)) = w.upper {
            self.values[i] += x * upstream;
        }
    }
}

/// One gradient array per parameter array of an [`AggModel`], with the
/// same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `[k][d]`.
    pub phi_calibrators: Vec<Vec<CalibratorGrad>>,
    pub phi_lattices: Vec<Vec<f64>>,
    pub rho_calibrators: Vec<CalibratorGrad>,
    pub rho_lattice: Vec<f64>,
    pub output_calibrator: CalibratorGrad,
}

impl GradientBundle {
    pub fn zeros_like(model: &AggModel) -> Self {
        GradientBundle {
            phi_calibrators: model
                .phi_calibrators
                .iter()
                .map(|row| row.iter().map(CalibratorGrad::zeros_like).collect())
                .collect(),
            phi_lattices: model
                .phi_lattices
                .iter()
                .map(|l| vec![0.0; l.params.len()])
                .collect(),
            rho_calibrators: model
                .rho_calibrators
                .iter()
                .map(CalibratorGrad::zeros_like)
                .collect(),
            rho_lattice: vec![0.0; model.rho_lattice.params.len()],
            output_calibrator: CalibratorGrad::zeros_like(&model.output_calibrator),
        }
    }

    /// Arrays in the canonical order shared with [`param_arrays_mut`].
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in self.phi_calibrators.iter().flatten() {
            out.push(&g.values);
            out.push(g.missing.as_slice());
        }
        for l in &self.phi_lattices {
            out.push(l);
        }
        for g in &self.rho_calibrators {
            out.push(&g.values);
            out.push(g.missing.as_slice());
        }
        out.push(&self.rho_lattice);
        out.push(&self.output_calibrator.values);
        out.push(self.output_calibrator.missing.as_slice());
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for g in self.phi_calibrators.iter_mut().flatten() {
            out.push(&mut g.values);
            out.push(g.missing.as_mut_slice());
        }
        for l in &mut self.phi_lattices {
            out.push(l);
        }
        for g in &mut self.rho_calibrators {
            out.push(&mut g.values);
            out.push(g.missing.as_mut_slice());
        }
        out.push(&mut self.rho_lattice);
        out.push(&mut self.output_calibrator.values);
        out.push(self.output_calibrator.missing.as_mut_slice());
        out
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.arrays()
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Model parameter arrays in the same order as [`GradientBundle::arrays`].
pub fn param_arrays(model: &AggModel) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    for c in model.phi_calibrators.iter().flatten() {
        out.push(&c.values);
        out.push(c.missing_output.as_slice());
    }
    for l in &model.phi_lattices {
        out.push(&l.params);
    }
    for c in &model.rho_calibrators {
        out.push(&c.values);
        out.push(c.missing_output.as_slice());
    }
    out.push(&model.rho_lattice.params);
    out.push(&model.output_calibrator.values);
    out.push(model.output_calibrator.missing_output.as_slice());
    out
}

pub fn param_arrays_mut(model: &mut AggModel) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for c in model.phi_calibrators.iter_mut().flatten() {
        out.push(&mut c.values);
        out.push(c.missing_output.as_mut_slice());
    }
    for l in &mut model.phi_lattices {
        out.push(&mut l.params);
    }
    for c in &mut model.rho_calibrators {
        out.push(&mut c.values);
        out.push(c.missing_output.as_mut_slice());
    }
    out.push(&mut model.rho_lattice.params);
    out.push(&mut model.output_calibrator.values);
    out.push(model.output_calibrator.missing_output.as_mut_slice());
    out
}

/// Loss of one example and its exact gradient with respect to every
/// parameter, by the chain rule through all six layers.
pub fn backprop(
    model: &AggModel,
    tokens: &[Token],
    label: f64,
    kind: LossKind,
) -> Result<(f64, GradientBundle)> {
    let trace = model.forward_trace(tokens)?;
    let (loss, dpred) = kind.loss_and_derivative(trace.output, label)?;
    let mut grad = GradientBundle::zeros_like(model);
    let dphi = rho_backprop(&trace, dpred, tokens.len(), &mut grad);

    // Layers 2 and 1.
    for token in &trace.tokens {
        accumulate_phi(token, &dphi, &mut grad);
    }
    Ok((loss, grad))
}

/// Backpropagates `dpred` through layers 6, 5 and 4 and the mean; returns
/// the gradient with respect to each token's `phi` output.
pub(crate) fn rho_backprop(
    trace: &ForwardTrace,
    dpred: f64,
    num_tokens: usize,
    grad: &mut GradientBundle,
) -> Vec<f64> {
    // Layer 6.
    grad.output_calibrator.accumulate(&trace.output_weights, dpred);
    let dz = trace.output_weights.slope * dpred;

    // Layer 5.
    for &(i, w) in &trace.rho_lattice.corners {
        grad.rho_lattice[i] += w * dz;
    }

    // Layer 4, then the mean: each token receives 1/M of the pooled gradient.
    let inv_m = 1.0 / num_tokens as f64;
    trace
        .rho_weights
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let du = trace.rho_lattice.partials[k] * dz;
            grad.rho_calibrators[k].accumulate(w, du);
            w.slope * du * inv_m
        })
        .collect()
}

/// Adds one token's contribution to the layer-1 and layer-2 gradients,
/// given the gradient `dphi` with respect to that token's `phi` output.
pub(crate) fn accumulate_phi(token: &TokenTrace, dphi: &[f64], grad: &mut GradientBundle) {
    for (k, &upstream) in dphi.iter().enumerate() {
        if upstream == 0.0 {
            continue;
        }
        let lat = &token.lattices[k];
        for &(i, w) in &lat.corners {
            grad.phi_lattices[k][i] += w * upstream;
        }
        for (d, weights) in token.weights[k].iter().enumerate() {
            let dc = lat.partials[d] * upstream;
            let g = &mut grad.phi_calibrators[k][d];
            match weights {
                Some(w) => g.accumulate(w, dc),
                None => {
                    if let Some(m) = g.missing.as_mut() {
                        *m += dc;
                    }
                }
            }
        }
    }
}
