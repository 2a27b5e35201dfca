use serde::{Deserialize, Serialize};

use super::isotonic::isotonic_in_place;
use super::{Bounds, Monotonicity};
use crate::error::{Error, Result};

/// Sweeps of per-fiber isotonic regression before giving up.
const MAX_SWEEPS: usize = 10_000;
/// Residual violation at which alternating sweeps stop.
const SWEEP_TOLERANCE: f64 = 1e-9;

/// Multidimensional interpolated lookup table over the unit box.
///
/// Parameters are stored row-major: the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim_sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub param_bounds: Option<Bounds>,
    pub monotonicity: Vec<Monotonicity>,
}

/// Result of one interpolation with everything needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeEval {
    pub value: f64,
    /// `(param index, weight)` for the 2^D cell corners.
    pub corners: Vec<(usize, f64)>,
    /// Partial derivative of the output with respect to each coordinate.
    pub partials: Vec<f64>,
}

impl Lattice {
    pub fn new(
        dim_sizes: Vec<usize>,
        params: Vec<f64>,
        param_bounds: Option<Bounds>,
        monotonicity: Vec<Monotonicity>,
    ) -> Result<Self> {
        let lat = Lattice {
            dim_sizes,
            params,
            param_bounds,
            monotonicity,
        };
        lat.validate()?;
        Ok(lat)
    }

    /// A lattice with every parameter set to `value`.
    pub fn constant(
        dim_sizes: Vec<usize>,
        value: f64,
        param_bounds: Option<Bounds>,
        monotonicity: Vec<Monotonicity>,
    ) -> Result<Self> {
        let n = dim_sizes.iter().product();
        Self::new(dim_sizes, vec![value; n], param_bounds, monotonicity)
    }

    /// The increasing linear function that runs from -1 at the first
    /// vertex to 1 at the last, averaged over dimensions. It is 0 at the
    /// centre of the grid.
    pub fn linear_ramp(
        dim_sizes: Vec<usize>,
        param_bounds: Option<Bounds>,
        monotonicity: Vec<Monotonicity>,
    ) -> Result<Self> {
        let n: usize = dim_sizes.iter().product();
        let dims = dim_sizes.len() as f64;
        let mut params = Vec::with_capacity(n);
        for flat in 0..n {
            // Row-major: the last dimension varies fastest.
            let mut rest = flat;
            let mut total = 0.0;
            for &size in dim_sizes.iter().rev() {
                let i = rest % size;
                rest /= size;
                if size > 1 {
                    total += 2.0 * i as f64 / (size - 1) as f64 - 1.0;
                }
            }
            params.push(total / dims);
        }
        Self::new(dim_sizes, params, param_bounds, monotonicity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_sizes.is_empty() {
            return Err(Error::Invalid("lattice needs at least one dimension".into()));
        }
        if let Some(&l) = self.dim_sizes.iter().find(|&&l| l < 2) {
            return Err(Error::Invalid(format!("lattice dimension size {l} < 2")));
        }
        let expected: usize = self.dim_sizes.iter().product();
        if self.params.len() != expected {
            return Err(Error::Shape(format!(
                "lattice expects {expected} params, got {}",
                self.params.len()
            )));
        }
        if self.monotonicity.len() != self.dim_sizes.len() {
            return Err(Error::Shape(format!(
                "lattice has {} dims but {} monotonicity flags",
                self.dim_sizes.len(),
                self.monotonicity.len()
            )));
        }
        if let Some(b) = self.param_bounds {
            b.validate()?;
        }
        Ok(())
    }

    pub fn num_dims(&self) -> usize {
        self.dim_sizes.len()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim_sizes.len()];
        for d in (0..self.dim_sizes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.dim_sizes[d + 1];
        }
        strides
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum()
    }

    /// Locates the cell containing `point`: flat index of its lowest
    /// corner, the strides, and the per-dimension fractional offsets.
    fn locate(&self, point: &[f64]) -> Result<(usize, Vec<usize>, Vec<f64>)> {
        let dims = self.dim_sizes.len();
        if point.len() != dims {
            return Err(Error::Shape(format!(
                "lattice has {dims} dims, point has {}",
                point.len()
            )));
        }
        let strides = self.strides();
        let mut base = 0;
        let mut frac = Vec::with_capacity(dims);
        for d in 0..dims {
            let cells = (self.dim_sizes[d] - 1) as f64;
            let c = if point[d].is_nan() { 0.0 } else { point[d].clamp(0.0, 1.0) };
            let s = c * cells;
            let cell = (s.floor() as usize).min(self.dim_sizes[d] - 2);
            base += cell * strides[d];
            frac.push(s - cell as f64);
        }
        Ok((base, strides, frac))
    }

    /// Multilinear interpolation at `point` (coordinates clamped to [0, 1]).
    pub fn interpolate(&self, point: &[f64]) -> Result<f64> {
        let (base, strides, frac) = self.locate(point)?;
        let dims = frac.len();
        let mut value = 0.0;
        for mask in 0..1usize << dims {
            let mut idx = base;
            let mut w = 1.0;
            for d in 0..dims {
                if mask >> d & 1 == 1 {
                    idx += strides[d];
                    w *= frac[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            value += w * self.params[idx];
        }
        Ok(value)
    }

    /// Interpolated value, corner weights, and coordinate partials.
    pub fn evaluate(&self, point: &[f64]) -> Result<LatticeEval> {
        let (base, strides, frac) = self.locate(point)?;
        let dims = frac.len();

        let n_corners = 1usize << dims;
        let mut corners = Vec::with_capacity(n_corners);
        let mut value = 0.0;
        let mut partials = vec![0.0; dims];
        for mask in 0..n_corners {
            let mut idx = base;
            let mut w = 1.0;
            for d in 0..dims {
                if mask >> d & 1 == 1 {
                    idx += strides[d];
                    w *= frac[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            let p = self.params[idx];
            value += w * p;
            corners.push((idx, w));
            for (d, partial) in partials.iter_mut().enumerate() {
                // Product of the other dimensions' factors.
                let mut others = 1.0;
                for e in 0..dims {
                    if e == d {
                        continue;
                    }
                    others *= if mask >> e & 1 == 1 {
                        frac[e]
                    } else {
                        1.0 - frac[e]
                    };
                }
                let sign = if mask >> d & 1 == 1 { 1.0 } else { -1.0 };
                *partial += sign * others * p;
            }
        }
        for (d, partial) in partials.iter_mut().enumerate() {
            *partial *= (self.dim_sizes[d] - 1) as f64;
        }
        Ok(LatticeEval {
            value,
            corners,
            partials,
        })
    }

    /// Dense corner weights and coordinate partials at `point`.
    pub fn gradient(&self, point: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let eval = self.evaluate(point)?;
        let mut w = vec![0.0; self.params.len()];
        for (i, x) in eval.corners {
            w[i] += x;
        }
        Ok((w, eval.partials))
    }

    /// Calls `f` with the flat indices of every fiber along `dim`.
    fn for_each_fiber(&self, dim: usize, mut f: impl FnMut(&[usize])) {
        let strides = self.strides();
        let len = self.dim_sizes[dim];
        let stride = strides[dim];
        let mut fiber = vec![0; len];
        for start in 0..self.params.len() {
            // Fiber starts are exactly the indices whose `dim` coordinate is 0.
            if (start / stride) % len != 0 {
                continue;
            }
            for (j, slot) in fiber.iter_mut().enumerate() {
                *slot = start + j * stride;
            }
            f(&fiber);
        }
    }

    /// Largest violation of the per-dimension monotonicity constraints.
    pub fn max_monotonicity_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (d, m) in self.monotonicity.iter().enumerate() {
            let sign = match m {
                Monotonicity::Increasing => 1.0,
                Monotonicity::Decreasing => -1.0,
                Monotonicity::None => continue,
            };
            self.for_each_fiber(d, |fiber| {
                for w in fiber.windows(2) {
                    worst = worst.max(sign * (self.params[w[0]] - self.params[w[1]]));
                }
            });
        }
        worst
    }

    /// Largest violation of any constraint (monotonicity or bounds).
    pub fn max_violation(&self) -> f64 {
        if self.params.iter().any(|p| !p.is_finite()) {
            return f64::INFINITY;
        }
        let mut worst = self.max_monotonicity_violation();
        if let Some(b) = self.param_bounds {
            for &p in &self.params {
                worst = worst.max(b.excess(p));
            }
        }
        worst
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }

    fn isotonic_sweep(&mut self, dim: usize, sign: f64) {
        let mut fibers = Vec::new();
        self.for_each_fiber(dim, |f| fibers.push(f.to_vec()));
        let mut buf = Vec::with_capacity(self.dim_sizes[dim]);
        for fiber in fibers {
            buf.clear();
            buf.extend(fiber.iter().map(|&i| sign * self.params[i]));
            isotonic_in_place(&mut buf);
            for (&i, &v) in fiber.iter().zip(&buf) {
                self.params[i] = sign * v;
            }
        }
    }

    /// Running maximum along every fiber of `dim`, from the low end for
    /// increasing dimensions and from the high end for decreasing ones.
    /// Makes `dim` exactly monotone and keeps every other dimension's
    /// monotonicity intact.
    fn running_max(&mut self, dim: usize, decreasing: bool) {
        let mut fibers = Vec::new();
        self.for_each_fiber(dim, |f| fibers.push(f.to_vec()));
        for mut fiber in fibers {
            if decreasing {
                fiber.reverse();
            }
            let mut acc = f64::NEG_INFINITY;
            for &i in &fiber {
                acc = acc.max(self.params[i]);
                self.params[i] = acc;
            }
        }
    }

    /// Projects onto the feasible set: alternating isotonic sweeps over the
    /// fibers of every constrained dimension, an exact running-max repair of
    /// the sub-tolerance residual, then clipping to the parameter bounds.
    pub fn project(&self) -> Result<Lattice> {
        let mut out = self.clone();
        out.project_in_place()?;
        Ok(out)
    }

    pub fn project_in_place(&mut self) -> Result<()> {
        let constrained: Vec<(usize, Monotonicity)> = self
            .monotonicity
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, m)| *m != Monotonicity::None)
            .collect();

        if self.max_monotonicity_violation() > 0.0 {
            let mut converged = false;
            let mut violation = f64::INFINITY;
            for _ in 0..MAX_SWEEPS {
                for &(d, m) in &constrained {
                    let sign = if m == Monotonicity::Decreasing { -1.0 } else { 1.0 };
                    self.isotonic_sweep(d, sign);
                }
                violation = self.max_monotonicity_violation();
                if violation < SWEEP_TOLERANCE {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::ProjectionFailure {
                    sweeps: MAX_SWEEPS,
                    violation,
                });
            }
            for &(d, m) in &constrained {
                self.running_max(d, m == Monotonicity::Decreasing);
            }
        }
        if let Some(b) = self.param_bounds {
            for p in &mut self.params {
                *p = b.clip(*p);
            }
        }
        let violation = self.max_violation();
        if violation > 0.0 {
            return Err(Error::ProjectionFailure {
                sweeps: MAX_SWEEPS,
                violation,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Monotonicity::*;

    fn lat(sizes: &[usize], params: &[f64], mono: &[Monotonicity]) -> Lattice {
        Lattice::new(
            sizes.to_vec(),
            params.to_vec(),
            Some(Bounds::SYMMETRIC),
            mono.to_vec(),
        )
        .unwrap()
    }

    /// Brute-force multilinear blend: sum over all vertices of the product
    /// of 1-D hat functions.
    fn hat_oracle(l: &Lattice, point: &[f64]) -> f64 {
        let n = l.params.len();
        let mut total = 0.0;
        for flat in 0..n {
            let mut rem = flat;
            let mut multi = vec![0; l.num_dims()];
            for d in (0..l.num_dims()).rev() {
                multi[d] = rem % l.dim_sizes[d];
                rem /= l.dim_sizes[d];
            }
            let mut w = 1.0;
            for d in 0..l.num_dims() {
                let s = point[d] * (l.dim_sizes[d] - 1) as f64;
                w *= (1.0 - (s - multi[d] as f64).abs()).max(0.0);
            }
            total += w * l.params[flat];
        }
        total
    }

    #[test]
    fn zero_lattice() {
        let l = Lattice::constant(vec![3, 2], 0.0, Option::None, vec![Monotonicity::None; 2]).unwrap();
        assert_eq!(l.interpolate(&[0.3, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn one_d_midpoint() {
        let l = lat(&[2], &[0.0, 1.0], &[None]);
        assert_eq!(l.interpolate(&[0.5]).unwrap(), 0.5);
    }

    #[test]
    fn two_d_center() {
        // Row-major: (0,0), (0,1), (1,0), (1,1).
        let l = lat(&[2, 2], &[0.0, 1.0, 1.0, 2.0], &[None, None]);
        let v = l.interpolate(&[0.5, 0.5]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(v, hat_oracle(&l, &[0.5, 0.5]));
    }

    #[test]
    fn matches_hat_oracle_on_finer_grid() {
        let params: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
        let l = lat(&[2, 3, 4], &params, &[None, None, None]);
        for point in [[0.1, 0.2, 0.3], [0.9, 0.55, 0.05], [1.0, 1.0, 1.0], [0.0, 0.5, 0.74]] {
            let v = l.interpolate(&point).unwrap();
            assert!((v - hat_oracle(&l, &point)).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let l = lat(&[2], &[0.0, 1.0], &[None]);
        assert!(matches!(l.interpolate(&[0.1, 0.2]), Err(Error::Shape(_))));
    }

    #[test]
    fn vertex_weights() {
        let l = lat(&[3, 2], &[0.0; 6], &[None, None]);
        let (w, _) = l.gradient(&[0.5, 1.0]).unwrap();
        let hit = l.flat_index(&[1, 1]);
        for (i, x) in w.iter().enumerate() {
            assert_eq!(*x, if i == hit { 1.0 } else { 0.0 });
        }
        let l = lat(&[2], &[0.0, 0.0], &[None]);
        assert_eq!(l.gradient(&[0.25]).unwrap().0, vec![0.75, 0.25]);
    }

    #[test]
    fn partials_match_central_difference() {
        let params: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 / 7.0).collect();
        let l = lat(&[3, 2, 2], &params, &[None, None, None]);
        let point = [0.31, 0.42, 0.77];
        let (_, partials) = l.gradient(&point).unwrap();
        let h = 1e-6;
        for d in 0..3 {
            let mut up = point;
            let mut dn = point;
            up[d] += h;
            dn[d] -= h;
            let fd = (l.interpolate(&up).unwrap() - l.interpolate(&dn).unwrap()) / (2.0 * h);
            assert!((fd - partials[d]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn project_feasible_is_identity() {
        let l = lat(&[2, 2], &[0.0, 0.5, 0.2, 0.9], &[Increasing, Increasing]);
        assert_eq!(l.project().unwrap(), l);
    }

    #[test]
    fn project_one_d_pools() {
        let l = lat(&[3], &[0.9, 0.5, 0.1], &[Increasing]);
        let p = l.project().unwrap();
        for v in p.params {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn project_single_constrained_dim() {
        // {(0,0):1, (1,0):0, (0,1):0, (1,1):1}, dim 0 increasing.
        let mut l = lat(&[2, 2], &[0.0; 4], &[Increasing, None]);
        let i = l.flat_index(&[0, 0]);
        l.params[i] = 1.0;
        let i = l.flat_index(&[1, 0]);
        l.params[i] = 0.0;
        let i = l.flat_index(&[0, 1]);
        l.params[i] = 0.0;
        let i = l.flat_index(&[1, 1]);
        l.params[i] = 1.0;
        let p = l.project().unwrap();
        for j in 0..2 {
            assert!(p.params[p.flat_index(&[0, j])] <= p.params[p.flat_index(&[1, j])]);
        }
        // The already-monotone fiber j=1 is untouched; fiber j=0 pools to 0.5.
        assert_eq!(p.params[p.flat_index(&[0, 1])], 0.0);
        assert_eq!(p.params[p.flat_index(&[1, 1])], 1.0);
        assert_eq!(p.params[p.flat_index(&[0, 0])], 0.5);
    }

    #[test]
    fn project_decreasing_dimension() {
        let l = lat(&[3], &[0.1, 0.5, 0.9], &[Decreasing]);
        let p = l.project().unwrap();
        for v in &p.params {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert_eq!(p.max_violation(), 0.0);
    }

    #[test]
    fn project_clips_to_bounds() {
        let l = lat(&[2], &[-3.0, 2.0], &[Increasing]);
        assert_eq!(l.project().unwrap().params, vec![-1.0, 1.0]);
    }

    #[test]
    fn linear_ramp_is_zero_at_centre() {
        let l = Lattice::linear_ramp(vec![2, 3], Some(Bounds::SYMMETRIC), vec![Increasing; 2]).unwrap();
        assert_eq!(l.params, vec![-1.0, -0.5, 0.0, 0.0, 0.5, 1.0]);
        assert_eq!(l.interpolate(&[0.5, 0.5]).unwrap(), 0.0);
        assert!(l.is_feasible(0.0));
    }
}
