use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::{TokenKey, TokenTable};
use crate::error::{Error, Result};

/// Hard cap on subsets generated for one input.
pub const SUBSET_BUDGET: usize = 100_000;

/// How raw inputs are broken into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerConfig {
    /// All category subsets of size `1..=max_size`.
    Subsets { max_size: usize },
    /// All contiguous word ngrams of order `1..=max_order`.
    Ngrams { max_order: usize },
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig::Subsets { max_size: 3 }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TokenizerConfig::Subsets { max_size: 0 } => {
                Err(Error::Config("max_size must be at least 1".into()))
            }
            TokenizerConfig::Ngrams { max_order: 0 } => {
                Err(Error::Config("max_order must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Sorted, duplicate-free copy of `items`.
pub fn canonical_items<S: AsRef<str>>(items: &[S]) -> Vec<String> {
    let mut out: Vec<String> = items.iter().map(|s| s.as_ref().to_string()).collect();
    out.sort();
    out.dedup();
    out
}

/// All contiguous ngrams of orders `1..=max_order`, shortest first and in
/// order of occurrence within each order.
pub fn tokenize_ngrams<S: AsRef<str>>(words: &[S], max_order: usize) -> Vec<TokenKey> {
    let mut out = Vec::new();
    for q in 1..=max_order.min(words.len()) {
        for w in words.windows(q) {
            out.push(TokenKey::ngram(w));
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut c: usize = 1;
    for i in 0..k {
        c = c.saturating_mul(n - i) / (i + 1);
    }
    c
}

fn check_budget(n: usize, max_size: usize) -> Result<()> {
    let total = (1..=max_size.min(n)).fold(0usize, |acc, k| acc.saturating_add(binomial(n, k)));
    if total > SUBSET_BUDGET {
        return Err(Error::Budget {
            generated: total,
            cap: SUBSET_BUDGET,
        });
    }
    Ok(())
}

/// Every subset of the canonical categories with size `1..=max_size`, as
/// keys crossed with `context`. Used when building tables.
pub fn enumerate_subsets<S: AsRef<str>>(
    categories: &[S],
    context: Option<&str>,
    max_size: usize,
) -> Result<Vec<TokenKey>> {
    let items = canonical_items(categories);
    check_budget(items.len(), max_size)?;
    let mut out = Vec::new();
    for k in 1..=max_size.min(items.len()) {
        for combo in items.iter().combinations(k) {
            out.push(TokenKey::Subset {
                items: combo.into_iter().cloned().collect(),
                context: context.map(str::to_string),
            });
        }
    }
    Ok(out)
}

/// Result of read-time tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenization {
    /// Canonical categories of the input.
    pub categories: Vec<String>,
    pub tokens: Vec<TokenKey>,
    /// Categories that appear in no emitted token.
    pub uncovered: Vec<String>,
}

/// Tokenizes a category set against `table`, preferring large subsets.
///
/// Sizes are visited from `min(max_size, n)` down to 1. At each size only
/// subsets containing a category still uncovered when that size began are
/// considered; subsets inside an already emitted token are skipped; those
/// present in the table are emitted. The descent stops once every category
/// is covered.
pub fn tokenize_subsets_with_fallback<S: AsRef<str>>(
    categories: &[S],
    context: Option<&str>,
    table: &TokenTable,
    max_size: usize,
) -> Result<Tokenization> {
    if max_size == 0 {
        return Err(Error::Config("max_size must be at least 1".into()));
    }
    let items = canonical_items(categories);
    let n = items.len();
    check_budget(n, max_size)?;

    let mut covered = vec![false; n];
    let mut emitted: Vec<Vec<usize>> = Vec::new();
    for k in (1..=max_size.min(n)).rev() {
        if covered.iter().all(|&c| c) {
            break;
        }
        let open: Vec<bool> = covered.iter().map(|&c| !c).collect();
        for combo in (0..n).combinations(k) {
            if !combo.iter().any(|&i| open[i]) {
                continue;
            }
            if emitted.iter().any(|e| combo.iter().all(|i| e.contains(i))) {
                continue;
            }
            let key = TokenKey::Subset {
                items: combo.iter().map(|&i| items[i].clone()).collect(),
                context: context.map(str::to_string),
            };
            if table.get(&key).is_some() {
                for &i in &combo {
                    covered[i] = true;
                }
                emitted.push(combo);
            }
        }
    }

    let uncovered = items
        .iter()
        .zip(&covered)
        .filter(|(_, &c)| !c)
        .map(|(s, _)| s.clone())
        .collect();
    let tokens = emitted
        .into_iter()
        .map(|combo| TokenKey::Subset {
            items: combo.into_iter().map(|i| items[i].clone()).collect(),
            context: context.map(str::to_string),
        })
        .collect();
    Ok(Tokenization {
        categories: items,
        tokens,
        uncovered,
    })
}
