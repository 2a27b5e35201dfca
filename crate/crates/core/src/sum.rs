//! Exactly-rounded floating point summation.
//!
//! Set pooling and token statistics both need sums that do not depend on
//! the order of the summands, so that shuffling the tokens of an example or
//! the shards of a corpus reproduces the same bits. Shewchuk's
//! non-overlapping partials give the correctly rounded sum of the inputs,
//! which is order independent by construction.

/// Running exact sum. The partials are non-overlapping and sorted by
/// increasing magnitude; their exact sum equals the exact sum of every
/// value added so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
    // Plain IEEE sum of the non-finite inputs, if any.
    special: Option<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special = Some(self.special.unwrap_or(0.0) + x);
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
        if let Some(s) = other.special {
            self.add(s);
        }
    }

    /// Correctly rounded value of the sum.
    pub fn value(&self) -> f64 {
        if let Some(s) = self.special {
            return s;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: the remaining partials decide the rounding direction.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }

    /// Correctly rounded `sum / d` for finite `d > 0`. Unlike
    /// `value() / d`, this rounds once, so scaling every summand's
    /// multiplicity and `d` by the same factor gives the same bits.
    pub fn quotient(&self, d: f64) -> f64 {
        let mut q = self.value() / d;
        if self.special.is_some() || !(d.is_finite() && d > 0.0) || !q.is_finite() {
            return q;
        }
        // Sign of `2 * sum - (a + b) * d`, i.e. which side of the midpoint of
        // `a` and `b` the exact quotient lies on.
        let side = |a: f64, b: f64| {
            let mut r = ExactSum::new();
            for &p in &self.partials {
                r.add(2.0 * p);
            }
            for x in [a, b] {
                let p = x * d;
                r.add(-p);
                r.add(-x.mul_add(d, -p));
            }
            r.value()
        };
        let odd = |x: f64| x.to_bits() & 1 == 1;
        loop {
            let up = q.next_up();
            let s = side(q, up);
            if s > 0.0 || (s == 0.0 && odd(q)) {
                q = up;
                continue;
            }
            let down = q.next_down();
            let s = side(down, q);
            if s < 0.0 || (s == 0.0 && odd(q)) {
                q = down;
                continue;
            }
            return q;
        }
    }
}

/// Correctly rounded sum of `values`.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Correctly rounded mean; invariant under any permutation of `values` and
/// under repeating every value the same number of times.
pub fn exact_mean(values: &[f64]) -> f64 {
    let mut acc = ExactSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.quotient(values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancellation_is_exact() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn nan_propagates() {
        assert!(exact_sum([1.0, f64::NAN, 2.0]).is_nan());
        assert_eq!(exact_sum([1.0, f64::INFINITY]), f64::INFINITY);
        assert!(exact_sum([f64::INFINITY, f64::NEG_INFINITY]).is_nan());
    }

    #[test]
    fn quotient_rounds_once() {
        let mut a = ExactSum::new();
        for x in [0.1, 0.2, 0.7] {
            a.add(x);
        }
        assert_eq!(a.quotient(3.0), 1.0 / 3.0);
        assert_eq!(exact_mean(&[1.0, 2.0]), 1.5);
        assert!((exact_mean(&[-0.005, -0.156, 0.075]) + 0.028_666_666_666_666_667).abs() < 1e-17);
    }

    proptest! {
        #[test]
        fn quotient_matches_rational_oracle(xs in proptest::collection::vec(-1e3f64..1e3, 1..12)) {
            // Oracle: exact rational arithmetic on the binary expansions.
            use num_rational::BigRational;
            use num_traits::{Signed, ToPrimitive};
            let exact: BigRational = xs.iter().map(|&x| BigRational::from_float(x).unwrap()).sum();
            let want = exact / BigRational::from_integer(xs.len().into());
            let got = exact_mean(&xs);
            let err = (BigRational::from_float(got).unwrap() - &want).abs();
            let ulp_hi = (BigRational::from_float(got.next_up()).unwrap() - BigRational::from_float(got).unwrap()).abs();
            let ulp_lo = (BigRational::from_float(got).unwrap() - BigRational::from_float(got.next_down()).unwrap()).abs();
            let half = ulp_hi.min(ulp_lo) / BigRational::from_integer(2.into());
            prop_assert!(err <= half, "{} vs {}", got, want.to_f64().unwrap());
        }

        #[test]
        fn repetition_invariant(xs in proptest::collection::vec(-1.0f64..1.0, 1..10), c in 2usize..7) {
            let rep: Vec<f64> = xs.iter().flat_map(|&x| std::iter::repeat(x).take(c)).collect();
            prop_assert_eq!(exact_mean(&xs).to_bits(), exact_mean(&rep).to_bits());
        }

        #[test]
        fn order_independent(mut xs in proptest::collection::vec(-1e6f64..1e6, 1..40), seed in any::<u64>()) {
            let a = exact_sum(xs.iter().copied());
            // Deterministic shuffle from the seed.
            let n = xs.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                xs.swap(i, j);
            }
            prop_assert_eq!(a.to_bits(), exact_sum(xs.iter().copied()).to_bits());
        }

        #[test]
        fn doubling_is_exact(xs in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let once = exact_mean(&xs);
            let mut twice = xs.clone();
            twice.extend_from_slice(&xs);
            prop_assert_eq!(once.to_bits(), exact_mean(&twice).to_bits());
        }
    }
}
