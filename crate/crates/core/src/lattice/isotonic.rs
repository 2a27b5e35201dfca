//! Pool-adjacent-violators: the L2 projection onto non-decreasing sequences.

/// Replaces `values` with its least-squares non-decreasing fit (unit weights).
///
/// Blocks are pooled only on strict violations, so an input that is already
/// non-decreasing is returned bit-for-bit unchanged.
pub fn isotonic_in_place(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    // Stack of blocks: (sum, count, start index).
    let mut blocks: Vec<(f64, usize, usize)> = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let mut sum = v;
        let mut count = 1usize;
        let mut start = i;
        while let Some(&(psum, pcount, pstart)) = blocks.last() {
            if psum / pcount as f64 > sum / count as f64 {
                sum += psum;
                count += pcount;
                start = pstart;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, count, start));
    }
    for &(sum, count, start) in &blocks {
        let mean = sum / count as f64;
        for v in &mut values[start..start + count] {
            *v = mean;
        }
    }
}

/// Largest amount by which a consecutive pair decreases (0 when monotone).
pub fn max_decrease(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: the isotonic fit is the unique minimiser of the
    /// squared error, and for unit weights each fitted value equals
    /// max_{i<=k} min_{j>=k} mean(values[i..=j]).
    fn minmax_oracle(values: &[f64]) -> Vec<f64> {
        let n = values.len();
        (0..n)
            .map(|k| {
                (0..=k)
                    .map(|i| {
                        (k..n)
                            .map(|j| values[i..=j].iter().sum::<f64>() / (j - i + 1) as f64)
                            .fold(f64::INFINITY, f64::min)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    #[test]
    fn two_point_violation_pools_to_mean() {
        let mut v = [0.5, 0.2];
        isotonic_in_place(&mut v);
        assert_eq!(v, [0.35, 0.35]);
    }

    #[test]
    fn decreasing_triple_collapses() {
        let mut v = [0.9, 0.5, 0.1];
        isotonic_in_place(&mut v);
        for x in v {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_input_untouched() {
        let orig = [0.1, 0.1, 0.5, 0.9];
        let mut v = orig;
        isotonic_in_place(&mut v);
        assert_eq!(v, orig);
    }

    proptest! {
        #[test]
        fn matches_minmax_oracle(values in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
            let mut fit = values.clone();
            isotonic_in_place(&mut fit);
            let oracle = minmax_oracle(&values);
            for (a, b) in fit.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9, "{fit:?} vs {oracle:?}");
            }
            prop_assert!(max_decrease(&fit) <= 0.0);
        }
    }
}
