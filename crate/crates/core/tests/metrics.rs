use dlnagg::data::metrics::compute_metric;
use dlnagg::data::{evaluate, Metric};
use dlnagg::model::ExampleSet;
use dlnagg::testkit::{random_example, random_model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grouped(labels_scores: &[(bool, f64)], group_size: usize) -> (Vec<ExampleSet>, Vec<f64>) {
    let examples = labels_scores
        .iter()
        .enumerate()
        .map(|(i, &(pos, _))| {
            let mut e = ExampleSet::new(vec![vec![Some(0.0)]], if pos { 1.0 } else { -1.0 });
            e.group_id = Some((i / group_size).to_string());
            e
        })
        .collect();
    (examples, labels_scores.iter().map(|&(_, s)| s).collect())
}

/// Straight-line precision@k: sort each group's rows by score, breaking
/// ties by position, and look for the first positive row.
fn oracle_precision(examples: &[ExampleSet], scores: &[f64], group_size: usize, k: usize) -> Option<f64> {
    let mut hits = 0;
    let mut groups = 0;
    for start in (0..examples.len()).step_by(group_size) {
        let end = (start + group_size).min(examples.len());
        let Some(pos) = (start..end).find(|&i| examples[i].label > 0.0) else {
            continue;
        };
        let mut order: Vec<usize> = (start..end).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        groups += 1;
        if order.iter().position(|&i| i == pos).unwrap() < k {
            hits += 1;
        }
    }
    (groups > 0).then(|| hits as f64 / groups as f64)
}

proptest! {
    #[test]
    fn precision_matches_oracle(
        rows in prop::collection::vec((any::<bool>(), (0u8..6).prop_map(|s| s as f64 / 5.0)), 1..80),
        group_size in 1usize..12,
    ) {
        let (examples, scores) = grouped(&rows, group_size);
        for k in [1, 3] {
            let got = compute_metric(&scores, &examples, Metric::PrecisionAt(k)).ok();
            prop_assert_eq!(got, oracle_precision(&examples, &scores, group_size, k));
        }
        if let (Ok(p1), Ok(p3)) = (
            compute_metric(&scores, &examples, Metric::PrecisionAt(1)),
            compute_metric(&scores, &examples, Metric::PrecisionAt(3)),
        ) {
            prop_assert!(p1 <= p3);
        }
    }

    #[test]
    fn evaluate_matches_single_pass(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 2, 1, &[]);
        let examples: Vec<ExampleSet> = (0..n).map(|_| random_example(&mut rng, 2, 4, 0.1)).collect();
        let report = evaluate(&model, &examples, &[Metric::Mae, Metric::Mse]).unwrap();
        let (mut abs, mut sq) = (0.0, 0.0);
        for e in &examples {
            let r = model.forward(e).unwrap() - e.label;
            abs += r.abs();
            sq += r * r;
        }
        prop_assert!((report["mae"] - abs / n as f64).abs() < 1e-12);
        prop_assert!((report["mse"] - sq / n as f64).abs() < 1e-12);
    }
}
