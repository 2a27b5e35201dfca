use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AggModel;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveLayer {
    /// Layer 1: input calibrators.
    Input,
    /// Layer 4: calibrators on the pooled `phi` outputs.
    Pooled,
    /// Layer 6: the output calibrator.
    Output,
}

impl CurveLayer {
    pub fn number(self) -> u8 {
        match self {
            CurveLayer::Input => 1,
            CurveLayer::Pooled => 4,
            CurveLayer::Output => 6,
        }
    }
}

/// Stored keypoints and values of one calibrator, ready for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorCurve {
    pub layer: CurveLayer,
    pub k: usize,
    pub d: usize,
    pub keypoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl AggModel {
    /// One curve per calibrator: `K * D` input curves, `K` pooled curves,
    /// and the output curve.
    pub fn export_calibrator_curves(&self) -> Vec<CalibratorCurve> {
        let mut curves = Vec::with_capacity(self.k * self.num_features + self.k + 1);
        for (k, row) in self.phi_calibrators.iter().enumerate() {
            for (d, cal) in row.iter().enumerate() {
                curves.push(CalibratorCurve {
                    layer: CurveLayer::Input,
                    k,
                    d,
                    keypoints: cal.keypoints.clone(),
                    values: cal.values.clone(),
                });
            }
        }
        for (k, cal) in self.rho_calibrators.iter().enumerate() {
            curves.push(CalibratorCurve {
                layer: CurveLayer::Pooled,
                k,
                d: 0,
                keypoints: cal.keypoints.clone(),
                values: cal.values.clone(),
            });
        }
        curves.push(CalibratorCurve {
            layer: CurveLayer::Output,
            k: 0,
            d: 0,
            keypoints: self.output_calibrator.keypoints.clone(),
            values: self.output_calibrator.values.clone(),
        });
        curves
    }
}

/// Writes curves as CSV with columns `layer,k,d,keypoint,value`, one row
/// per keypoint.
pub fn write_curves_csv<W: Write>(curves: &[CalibratorCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "k", "d", "keypoint", "value"])?;
    for c in curves {
        for (x, y) in c.keypoints.iter().zip(&c.values) {
            w.write_record([
                c.layer.number().to_string(),
                c.k.to_string(),
                c.d.to_string(),
                format!("{x:?}"),
                format!("{y:?}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
