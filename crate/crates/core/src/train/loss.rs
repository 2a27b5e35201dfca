use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(pred - label)^2`.
    #[default]
    SquaredError,
    /// `log(1 + exp(-label * pred))` with labels in `{-1, +1}`.
    LogisticPm1,
}

impl LossKind {
    fn check_label(self, label: f64) -> Result<()> {
        match self {
            LossKind::SquaredError if label.is_finite() => Ok(()),
            LossKind::SquaredError => Err(Error::Label {
                label,
                kind: "squared_error",
            }),
            LossKind::LogisticPm1 if label == 1.0 || label == -1.0 => Ok(()),
            LossKind::LogisticPm1 => Err(Error::Label {
                label,
                kind: "logistic_pm1",
            }),
        }
    }

    /// Loss value.
    pub fn loss(self, pred: f64, label: f64) -> Result<f64> {
        self.check_label(label)?;
        Ok(match self {
            LossKind::SquaredError => (pred - label).powi(2),
            LossKind::LogisticPm1 => softplus(-label * pred),
        })
    }

    /// Loss value and its derivative with respect to `pred`.
    pub fn loss_and_derivative(self, pred: f64, label: f64) -> Result<(f64, f64)> {
        self.check_label(label)?;
        Ok(match self {
            LossKind::SquaredError => ((pred - label).powi(2), 2.0 * (pred - label)),
            LossKind::LogisticPm1 => {
                let z = label * pred;
                // d/dpred softplus(-z) = -label * sigmoid(-z)
                (softplus(-z), -label * sigmoid(-z))
            }
        })
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
