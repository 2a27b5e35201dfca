//! Random models and examples for property tests and benchmarks.

use rand::Rng;

use crate::lattice::{Calibrator, Lattice, Monotonicity};
use crate::model::{AggModel, Architecture, ExampleSet, Token};

/// Random feasible model: an initialised model whose every parameter is
/// replaced by a uniform draw and then projected.
pub fn random_model<R: Rng>(
    rng: &mut R,
    num_features: usize,
    k: usize,
    monotonicity: &[Monotonicity],
) -> AggModel {
    let arch = Architecture {
        k,
        lattice_size: rng.gen_range(2..=3),
        rho_lattice_size: rng.gen_range(2..=3),
        phi_keypoints: rng.gen_range(2..=6),
        rho_keypoints: rng.gen_range(2..=6),
        output_keypoints: rng.gen_range(2..=6),
        feature_monotonicity: monotonicity.to_vec(),
        ..Architecture::default()
    };
    let samples: Vec<Vec<f64>> = (0..num_features)
        .map(|_| (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let mut model = AggModel::init(&arch, &samples).expect("valid architecture");
    perturb(rng, &mut model, 1.5);
    crate::train::project_all(&mut model).expect("projection converges");
    model
}

fn perturb_calibrator<R: Rng>(rng: &mut R, cal: &mut Calibrator, scale: f64) {
    for v in &mut cal.values {
        *v = rng.gen_range(-scale..scale) + 0.5;
    }
    if let Some(m) = cal.missing_output.as_mut() {
        *m = rng.gen_range(-scale..scale) + 0.5;
    }
}

fn perturb_lattice<R: Rng>(rng: &mut R, lat: &mut Lattice, scale: f64) {
    for p in &mut lat.params {
        *p = rng.gen_range(-scale..scale);
    }
}

/// Overwrites every parameter with a uniform draw, ignoring constraints.
pub fn perturb<R: Rng>(rng: &mut R, model: &mut AggModel, scale: f64) {
    for row in &mut model.phi_calibrators {
        for cal in row {
            perturb_calibrator(rng, cal, scale);
        }
    }
    for lat in &mut model.phi_lattices {
        perturb_lattice(rng, lat, scale);
    }
    for cal in &mut model.rho_calibrators {
        perturb_calibrator(rng, cal, scale);
    }
    perturb_lattice(rng, &mut model.rho_lattice, scale);
    perturb_calibrator(rng, &mut model.output_calibrator, scale);
    // Keep the output calibrator roughly increasing so models are not flat.
    model.output_calibrator.values.sort_by(f64::total_cmp);
}

pub fn random_token<R: Rng>(rng: &mut R, num_features: usize, missing_rate: f64) -> Token {
    (0..num_features)
        .map(|_| {
            if rng.gen_bool(missing_rate) {
                None
            } else {
                Some(rng.gen_range(-2.5..2.5))
            }
        })
        .collect()
}

pub fn random_example<R: Rng>(
    rng: &mut R,
    num_features: usize,
    max_tokens: usize,
    missing_rate: f64,
) -> ExampleSet {
    let m = rng.gen_range(1..=max_tokens);
    let tokens = (0..m)
        .map(|_| random_token(rng, num_features, missing_rate))
        .collect();
    ExampleSet::new(tokens, rng.gen_range(-1.0..1.0))
}

/// Outcome of comparing backprop against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because the two one-sided differences disagree,
    /// i.e. the loss has a kink there.
    pub kinks: usize,
}

/// Checks every parameter gradient of one example with step `h`.
pub fn gradient_check(
    model: &AggModel,
    tokens: &[Token],
    label: f64,
    kind: crate::train::LossKind,
    h: f64,
) -> crate::Result<GradCheck> {
    use crate::train::{backprop, param_arrays, param_arrays_mut};
    const FLOOR: f64 = 1e-5;
    let (base, grad) = backprop(model, tokens, label, kind)?;
    let analytic: Vec<Vec<f64>> = grad.arrays().iter().map(|a| a.to_vec()).collect();
    let shapes: Vec<usize> = param_arrays(model).iter().map(|a| a.len()).collect();
    let mut probe = model.clone();
    let mut loss_at = |a: usize, i: usize, delta: f64| -> crate::Result<f64> {
        let saved = param_arrays(&probe)[a][i];
        param_arrays_mut(&mut probe)[a][i] = saved + delta;
        let pred = probe.forward_tokens(tokens);
        param_arrays_mut(&mut probe)[a][i] = saved;
        kind.loss(pred?, label)
    };
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        kinks: 0,
    };
    for (a, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let plus = loss_at(a, i, h)?;
            let minus = loss_at(a, i, -h)?;
            let fwd = (plus - base) / h;
            let bwd = (base - minus) / h;
            let scale = fwd.abs().max(bwd.abs()).max(FLOOR);
            if (fwd - bwd).abs() > 1e-3 * scale + h {
                out.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let g = analytic[a][i];
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(FLOOR);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    Ok(out)
}
