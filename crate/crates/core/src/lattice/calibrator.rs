use serde::{Deserialize, Serialize};

use super::isotonic::isotonic_in_place;
use super::Bounds;
use crate::error::{Error, Result};

/// One-dimensional piecewise-linear lookup table.
///
/// Inputs below the first keypoint or above the last are clamped to the end
/// values. A missing input maps to `missing_output` when the calibrator has
/// one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub keypoints: Vec<f64>,
    pub values: Vec<f64>,
    /// `None` means the output range is unconstrained.
    pub output_bounds: Option<Bounds>,
    pub monotonic: bool,
    #[serde(default)]
    pub missing_output: Option<f64>,
}

/// Interpolation weights of one calibrator evaluation. At most two values
/// take part; `upper` is `None` when the input was clamped to an end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratorWeights {
    pub lower: (usize, f64),
    pub upper: Option<(usize, f64)>,
    /// Derivative of the output with respect to the input (right derivative
    /// at keypoints, 0 when clamped).
    pub slope: f64,
}

impl CalibratorWeights {
    /// Dense weight vector over `n` values.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        w[self.lower.0] += self.lower.1;
        if let Some((i, x)) = self.upper {
            w[i] += x;
        }
        w
    }
}

impl Calibrator {
    /// Builds a calibrator and checks its structural invariants. Values are
    /// not required to be feasible; use [`Calibrator::project`] for that.
    pub fn new(
        keypoints: Vec<f64>,
        values: Vec<f64>,
        output_bounds: Option<Bounds>,
        monotonic: bool,
    ) -> Result<Self> {
        let cal = Calibrator {
            keypoints,
            values,
            output_bounds,
            monotonic,
            missing_output: None,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn with_missing_output(mut self, value: f64) -> Self {
        self.missing_output = Some(value);
        self
    }

    /// Structural checks: sorted keypoints, matching lengths, finite entries.
    pub fn validate(&self) -> Result<()> {
        if self.keypoints.len() < 2 {
            return Err(Error::Invalid(format!(
                "calibrator needs at least 2 keypoints, got {}",
                self.keypoints.len()
            )));
        }
        if self.values.len() != self.keypoints.len() {
            return Err(Error::Shape(format!(
                "calibrator has {} keypoints but {} values",
                self.keypoints.len(),
                self.values.len()
            )));
        }
        if self.keypoints.iter().any(|k| !k.is_finite()) {
            return Err(Error::Invalid("non-finite calibrator keypoint".into()));
        }
        if self.keypoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(
                "calibrator keypoints must be strictly increasing".into(),
            ));
        }
        if let Some(b) = self.output_bounds {
            b.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Evaluates the calibrator. `None` is a missing input.
    pub fn calibrate(&self, x: Option<f64>) -> Result<f64> {
        match x {
            None => self.missing_output.ok_or(Error::MissingValueUnsupported),
            Some(x) => Ok(self.eval(x)),
        }
    }

    /// Evaluates a present input.
    pub fn eval(&self, x: f64) -> f64 {
        let w = self.weights(x);
        let mut out = w.lower.1 * self.values[w.lower.0];
        if let Some((i, wi)) = w.upper {
            out += wi * self.values[i];
        }
        out
    }

    /// Interpolation weights and input slope at `x`.
    pub fn weights(&self, x: f64) -> CalibratorWeights {
        let kp = &self.keypoints;
        let last = kp.len() - 1;
        if x.is_nan() || x < kp[0] {
            return CalibratorWeights {
                lower: (0, 1.0),
                upper: None,
                slope: 0.0,
            };
        }
        if x >= kp[last] {
            return CalibratorWeights {
                lower: (last, 1.0),
                upper: None,
                slope: 0.0,
            };
        }
        // Segment i satisfies kp[i] <= x < kp[i + 1].
        let i = kp.partition_point(|&k| k <= x) - 1;
        let width = kp[i + 1] - kp[i];
        let t = (x - kp[i]) / width;
        CalibratorWeights {
            lower: (i, 1.0 - t),
            upper: Some((i + 1, t)),
            slope: (self.values[i + 1] - self.values[i]) / width,
        }
    }

    /// Gradient of the output with respect to the values and the input.
    pub fn gradient(&self, x: f64) -> (Vec<f64>, f64) {
        let w = self.weights(x);
        (w.to_dense(self.values.len()), w.slope)
    }

    /// L2 projection onto the feasible set: isotonic regression when
    /// monotonic, then clipping to the output bounds.
    pub fn project(&self) -> Calibrator {
        let mut out = self.clone();
        out.project_in_place();
        out
    }

    pub fn project_in_place(&mut self) {
        if self.monotonic {
            isotonic_in_place(&mut self.values);
        }
        if let Some(b) = self.output_bounds {
            for v in &mut self.values {
                *v = b.clip(*v);
            }
            if let Some(m) = self.missing_output.as_mut() {
                *m = b.clip(*m);
            }
        }
    }

    /// Largest constraint violation: decreases between neighbours (when
    /// monotonic) and distances outside the output bounds.
    pub fn max_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        if self.monotonic {
            worst = worst.max(super::isotonic::max_decrease(&self.values));
        }
        if let Some(b) = self.output_bounds {
            for &v in self.values.iter().chain(self.missing_output.iter()) {
                worst = worst.max(b.excess(v));
            }
        }
        if self
            .values
            .iter()
            .chain(self.missing_output.iter())
            .any(|v| !v.is_finite())
        {
            return f64::INFINITY;
        }
        worst
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}
