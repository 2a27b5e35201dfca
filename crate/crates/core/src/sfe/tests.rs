use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::data::{LabelKind, RawExample};
use crate::error::Error;

fn table_of(tokenizer: TokenizerConfig, entries: &[(&[&str], f64, u64)]) -> TokenTable {
    let mut t = TokenTable::new(BuildMeta {
        tokenizer,
        label_kind: LabelKind::Pm1Binary,
        count_threshold: None,
        ci_threshold: None,
        ci_z: CI_Z,
        num_examples: 0,
    });
    for &(items, label_mean, count) in entries {
        t.entries.insert(TokenKey::subset(items, None), TokenEntry { label_mean, count });
    }
    t
}

fn keys(t: &Tokenization) -> Vec<Vec<String>> {
    t.tokens.iter().map(|k| k.items().to_vec()).collect()
}

fn raw(id: usize, cats: &[&str], label: f64) -> RawExample {
    RawExample {
        id: id.to_string(),
        group_id: None,
        categories: cats.iter().map(|s| s.to_string()).collect(),
        context: None,
        label,
    }
}

#[test]
fn ngrams_in_order() {
    let t = tokenize_ngrams(&["a", "b", "c"], 2);
    let got: Vec<String> = t.iter().map(|k| k.items().join(" ")).collect();
    assert_eq!(got, ["a", "b", "c", "a b", "b c"]);
    assert_eq!(tokenize_ngrams(&["a", "b"], 1).len(), 2);
    assert!(tokenize_ngrams::<&str>(&[], 3).is_empty());
    let words: Vec<String> = (0..70).map(|i| format!("w{i}")).collect();
    assert_eq!(tokenize_ngrams(&words, 1).len(), 70);
}

#[test]
fn four_categories_walkthrough() {
    let sub = TokenizerConfig::Subsets { max_size: 4 };
    let table = table_of(
        sub,
        &[
            (&["a", "b", "c"], 0.5, 10),
            (&["b", "d"], 0.5, 10),
            (&["c", "d"], 0.5, 10),
            (&["a", "b"], 0.5, 10),
            (&["a", "c"], 0.5, 10),
            (&["a"], 0.5, 10),
            (&["d"], 0.5, 10),
        ],
    );
    let t = tokenize_subsets_with_fallback(&["d", "c", "b", "a"], None, &table, 4).unwrap();
    assert_eq!(keys(&t), [vec!["a", "b", "c"], vec!["b", "d"], vec!["c", "d"]]);
    assert!(t.uncovered.is_empty());
}

fn recipe_table() -> TokenTable {
    table_of(
        TokenizerConfig::Subsets { max_size: 3 },
        &[
            (&["fennel bulb", "salt", "water"], 1.0 / 17.0, 17),
            (&["salt", "sugar", "water"], 22.0 / 510.0, 510),
            (&["grapefruit juice"], 0.2, 10),
            (&["salt"], 0.05, 9000),
            (&["sugar"], 0.05, 7000),
            (&["water"], 0.05, 8000),
            (&["fennel bulb", "sugar"], 0.04, 30),
            (&["salt", "water"], 0.05, 3000),
        ],
    )
}

const RECIPE: [&str; 6] = [
    "sugar",
    "salt",
    "fennel bulb",
    "water",
    "lemon olive oil",
    "grapefruit juice",
];

#[test]
fn recipe_walkthrough_tokens() {
    let t = tokenize_subsets_with_fallback(&RECIPE, None, &recipe_table(), 3).unwrap();
    assert_eq!(
        keys(&t),
        [
            vec!["fennel bulb", "salt", "water"],
            vec!["salt", "sugar", "water"],
            vec!["grapefruit juice"],
        ]
    );
    assert_eq!(t.uncovered, ["lemon olive oil"]);
}

#[test]
fn recipe_walkthrough_features() {
    let f = assemble_features(&RECIPE, None, &recipe_table(), 3).unwrap();
    let expected = [
        [0.059, 17.0, 3.0, 0.0, 6.0, 3.0],
        [0.043, 510.0, 3.0, 0.0, 6.0, 3.0],
        [0.2, 10.0, 1.0, 0.0, 6.0, 3.0],
    ];
    assert_eq!(f.len(), 3);
    for (got, want) in f.iter().zip(expected) {
        for (g, w) in got.iter().zip(want) {
            assert!((g.unwrap() - w).abs() < 5e-4, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn singleton_and_full_match() {
    let table = table_of(TokenizerConfig::Subsets { max_size: 3 }, &[(&["x"], 1.0, 3)]);
    let t = tokenize_subsets_with_fallback(&["x"], None, &table, 3).unwrap();
    assert_eq!(keys(&t), [vec!["x"]]);
    let f = assemble_features(&["x"], None, &table, 3).unwrap();
    assert_eq!(f, vec![vec![Some(1.0), Some(3.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0)]]);
}

#[test]
fn no_hits_gives_missing_token() {
    let table = table_of(TokenizerConfig::Subsets { max_size: 3 }, &[(&["x"], 1.0, 3)]);
    let f = assemble_features(&["p", "q"], None, &table, 3).unwrap();
    assert_eq!(f, vec![vec![None; NUM_FEATURES]]);
    let t = tokenize_subsets_with_fallback(&["p", "q"], None, &table, 3).unwrap();
    assert_eq!(t.uncovered, ["p", "q"]);
}

#[test]
fn context_is_part_of_the_key() {
    let mut table = table_of(TokenizerConfig::Subsets { max_size: 2 }, &[]);
    table.entries.insert(
        TokenKey::subset(&["a"], Some("french")),
        TokenEntry {
            label_mean: 0.3,
            count: 5,
        },
    );
    let hit = tokenize_subsets_with_fallback(&["a"], Some("french"), &table, 2).unwrap();
    let miss = tokenize_subsets_with_fallback(&["a"], Some("thai"), &table, 2).unwrap();
    assert_eq!(hit.tokens.len(), 1);
    assert!(miss.tokens.is_empty());
}

#[test]
fn budget_is_enforced() {
    let table = table_of(TokenizerConfig::Subsets { max_size: 3 }, &[]);
    let many: Vec<String> = (0..100).map(|i| format!("c{i}")).collect();
    assert!(matches!(
        tokenize_subsets_with_fallback(&many, None, &table, 3),
        Err(Error::Budget { .. })
    ));
    assert!(matches!(enumerate_subsets(&many, None, 3), Err(Error::Budget { .. })));
    assert!(tokenize_subsets_with_fallback(&many[..80], None, &table, 3).is_ok());
}

#[test]
fn single_example_table() {
    let t = build_token_table(
        &[raw(0, &["a"], 1.0)],
        LabelKind::Pm1Binary,
        TokenizerConfig::Subsets { max_size: 3 },
    )
    .unwrap();
    assert_eq!(t.len(), 1);
    let e = t.get(&TokenKey::subset(&["a"], None)).unwrap();
    assert_eq!((e.label_mean, e.count), (1.0, 1));
}

#[test]
fn seventeen_occurrences_one_positive() {
    let examples: Vec<_> = (0..17)
        .map(|i| raw(i, &["salt", "water", "fennel bulb"], if i == 0 { 1.0 } else { -1.0 }))
        .collect();
    let t = build_token_table(&examples, LabelKind::Pm1Binary, TokenizerConfig::Subsets { max_size: 3 })
        .unwrap();
    let e = t.get(&TokenKey::subset(&["salt", "water", "fennel bulb"], None)).unwrap();
    assert_eq!(e.count, 17);
    assert!((e.label_mean - 0.0588).abs() < 1e-4);
    assert_eq!(t.len(), 7);
}

fn synthetic_corpus(n: usize, seed: u64) -> Vec<RawExample> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let size = rng.gen_range(1..=6);
            let cats: Vec<String> = (0..size).map(|_| format!("c{}", rng.gen_range(0..12))).collect();
            RawExample {
                id: i.to_string(),
                group_id: None,
                categories: cats,
                context: None,
                label: if rng.gen_bool(0.3) { 1.0 } else { -1.0 },
            }
        })
        .collect()
}

/// Two-pass recount: collect every label per subset by bitmask
/// enumeration, then average.
fn brute_force(examples: &[RawExample], max_size: usize) -> BTreeMap<Vec<String>, (f64, u64)> {
    let mut labels: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for ex in examples {
        let mut items = ex.categories.clone();
        items.sort();
        items.dedup();
        for mask in 1u32..(1 << items.len()) {
            if mask.count_ones() as usize > max_size {
                continue;
            }
            let subset: Vec<String> = (0..items.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| items[i].clone())
                .collect();
            labels.entry(subset).or_default().push((ex.label + 1.0) / 2.0);
        }
    }
    labels
        .into_iter()
        .map(|(k, ys)| {
            let n = ys.len();
            (k, (ys.iter().sum::<f64>() / n as f64, n as u64))
        })
        .collect()
}

#[test]
fn table_matches_brute_force_recount() {
    let examples = synthetic_corpus(1000, 7);
    let table =
        build_token_table(&examples, LabelKind::Pm1Binary, TokenizerConfig::Subsets { max_size: 3 })
            .unwrap();
    let oracle = brute_force(&examples, 3);
    assert_eq!(table.len(), oracle.len());
    for (items, (mean, count)) in oracle {
        let e = table.get(&TokenKey::subset(&items, None)).unwrap();
        assert_eq!(e.count, count);
        assert!((e.label_mean - mean).abs() < 1e-12);
    }
}

#[test]
fn build_is_independent_of_example_order() {
    let mut examples = synthetic_corpus(300, 3);
    let cfg = TokenizerConfig::Subsets { max_size: 2 };
    let a = build_token_table(&examples, LabelKind::Pm1Binary, cfg).unwrap();
    examples.reverse();
    let b = build_token_table(&examples, LabelKind::Pm1Binary, cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ngram_table() {
    let examples = vec![raw(0, &["a", "b", "a"], 1.0), raw(1, &["a"], -1.0)];
    let t = build_token_table(&examples, LabelKind::Pm1Binary, TokenizerConfig::Ngrams { max_order: 2 })
        .unwrap();
    let a = t.get(&TokenKey::ngram(&["a"])).unwrap();
    assert_eq!(a.count, 3);
    assert!((a.label_mean - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(t.get(&TokenKey::ngram(&["b", "a"])).unwrap().count, 1);
    let f = assemble_ngram_features(&["a", "b"], &t, 2);
    assert_eq!(f.len(), 3);
}

#[test]
fn ci_filter_boundary() {
    // 2 * 1.96 * sqrt(0.25 / n) <= 0.2 first holds at n = 97.
    assert!(ci_width(0.5, 96) > 0.2);
    assert!(ci_width(0.5, 97) <= 0.2);
    let table = table_of(
        TokenizerConfig::Subsets { max_size: 1 },
        &[(&["a"], 0.5, 95), (&["b"], 0.5, 96), (&["c"], 0.5, 97)],
    );
    let f = filter_table(&table, 0, Some(0.2)).unwrap();
    let kept: Vec<_> = f.entries.keys().map(|k| k.items()[0].clone()).collect();
    assert_eq!(kept, ["c"]);
    assert_eq!(f.meta.ci_threshold, Some(0.2));
}

#[test]
fn count_filter() {
    let table = table_of(
        TokenizerConfig::Subsets { max_size: 1 },
        &[(&["a"], 0.5, 4), (&["b"], 0.5, 5), (&["c"], 0.5, 32)],
    );
    assert_eq!(filter_table(&table, 5, None).unwrap().len(), 2);
    assert_eq!(filter_table(&table, 32, None).unwrap().len(), 1);
    assert_eq!(filter_table(&table, 5, None).unwrap().meta.count_threshold, Some(5));
}

#[test]
fn ci_filter_needs_binary_labels() {
    let mut table = table_of(TokenizerConfig::Subsets { max_size: 1 }, &[(&["a"], 3.0, 4)]);
    table.meta.label_kind = LabelKind::Real;
    assert!(matches!(filter_table(&table, 0, Some(0.2)), Err(Error::Config(_))));
    assert!(filter_table(&table, 2, None).is_ok());
}

#[test]
fn table_file_round_trip() {
    let examples = synthetic_corpus(200, 11);
    let table =
        build_token_table(&examples, LabelKind::Pm1Binary, TokenizerConfig::Subsets { max_size: 2 })
            .unwrap();
    let table = filter_table(&table, 2, None).unwrap();
    let mut buf = Vec::new();
    table.write(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let lines: Vec<&str> = text.lines().skip(1).collect();
    let mut sorted = lines.clone();
    sorted.sort_by_key(|l| serde_json::from_str::<TokenKey>(l.split('\t').next().unwrap()).unwrap());
    assert_eq!(lines, sorted);
    assert_eq!(TokenTable::read(buf.as_slice()).unwrap(), table);
}

#[test]
fn table_read_reports_line() {
    let mut buf = Vec::new();
    table_of(TokenizerConfig::Subsets { max_size: 1 }, &[(&["a"], 0.5, 4)])
        .write(&mut buf)
        .unwrap();
    let text = String::from_utf8(buf).unwrap().replace("\t4", "\tfour");
    assert!(matches!(TokenTable::read(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
}

fn category_set() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0..8u8).prop_map(|c| format!("c{c}")), 0..8)
}

fn random_table() -> impl Strategy<Value = TokenTable> {
    prop::collection::btree_set(category_set(), 0..40).prop_map(|sets| {
        let mut t = table_of(TokenizerConfig::Subsets { max_size: 4 }, &[]);
        for s in sets {
            if !s.is_empty() {
                t.entries.insert(
                    TokenKey::subset(&s, None),
                    TokenEntry {
                        label_mean: 0.5,
                        count: 1,
                    },
                );
            }
        }
        t
    })
}

proptest! {
    #[test]
    fn fallback_invariants(input in category_set(), table in random_table(), max_size in 1usize..5) {
        let t = tokenize_subsets_with_fallback(&input, None, &table, max_size).unwrap();
        for (i, a) in t.tokens.iter().enumerate() {
            prop_assert!(table.get(a).is_some());
            prop_assert!(a.size() <= max_size);
            for (j, b) in t.tokens.iter().enumerate() {
                if i != j {
                    prop_assert!(!a.items().iter().all(|x| b.items().contains(x)));
                }
            }
        }
        for c in &t.categories {
            let covered = t.tokens.iter().any(|k| k.items().contains(c));
            prop_assert_eq!(covered, !t.uncovered.contains(c));
            // Uncovered categories really have no table hit as a singleton.
            if !covered {
                prop_assert!(table.get(&TokenKey::subset(&[c], None)).is_none());
            }
        }
        let mut reversed = input.clone();
        reversed.reverse();
        let again = tokenize_subsets_with_fallback(&reversed, None, &table, max_size).unwrap();
        prop_assert_eq!(&again, &t);

        let f = assemble_features(&input, None, &table, max_size).unwrap();
        if t.tokens.is_empty() {
            prop_assert_eq!(f, vec![vec![None; NUM_FEATURES]]);
        } else {
            prop_assert_eq!(f.len(), t.tokens.len());
            for row in &f {
                prop_assert_eq!(row[5], Some(t.tokens.len() as f64));
                prop_assert!(row[2].unwrap() <= row[4].unwrap());
                if row[3] == Some(1.0) {
                    prop_assert_eq!(row[2], row[4]);
                }
            }
        }
    }

    #[test]
    fn filter_is_monotone(t1 in 0u64..40, t2 in 0u64..40, ci in 0.0f64..1.0) {
        let examples = synthetic_corpus(150, 5);
        let table = build_token_table(
            &examples,
            LabelKind::Pm1Binary,
            TokenizerConfig::Subsets { max_size: 2 },
        ).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let a = filter_table(&table, lo, Some(ci)).unwrap();
        let b = filter_table(&table, hi, Some(ci)).unwrap();
        prop_assert!(b.len() <= a.len());
        for (k, e) in &b.entries {
            prop_assert_eq!(a.get(k), Some(e));
            prop_assert_eq!(table.get(k), Some(e));
        }
    }
}
