use rayon::prelude::*;

use super::{tokenize_ngrams, tokenize_subsets_with_fallback, TokenTable, TokenizerConfig};
use crate::data::{Dataset, RawDataset};
use crate::error::Result;
use crate::model::{ExampleSet, Token};

pub const NUM_FEATURES: usize = 6;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "label_mean",
    "count",
    "subset_size",
    "full_match",
    "num_categories",
    "num_tokens",
];

fn missing_token() -> Vec<Token> {
    vec![vec![None; NUM_FEATURES]]
}

/// Tokenizes a category set with fallback and returns one feature vector
/// per emitted token: label mean, count, subset size, whole-set match flag,
/// number of categories, number of tokens. With no emitted token the
/// result is a single all-missing vector.
pub fn assemble_features<S: AsRef<str>>(
    categories: &[S],
    context: Option<&str>,
    table: &TokenTable,
    max_size: usize,
) -> Result<Vec<Token>> {
    let t = tokenize_subsets_with_fallback(categories, context, table, max_size)?;
    if t.tokens.is_empty() {
        return Ok(missing_token());
    }
    let n = t.categories.len() as f64;
    let m = t.tokens.len() as f64;
    Ok(t.tokens
        .iter()
        .map(|key| {
            let e = table.get(key).expect("emitted tokens are in the table");
            let k = key.size();
            vec![
                Some(e.label_mean),
                Some(e.count as f64),
                Some(k as f64),
                Some(if k == t.categories.len() { 1.0 } else { 0.0 }),
                Some(n),
                Some(m),
            ]
        })
        .collect())
}

/// Ngram analogue of [`assemble_features`]: every ngram found in the table
/// becomes a token; the size is the ngram order and the full-match flag
/// marks an ngram spanning the whole sequence.
pub fn assemble_ngram_features<S: AsRef<str>>(
    words: &[S],
    table: &TokenTable,
    max_order: usize,
) -> Vec<Token> {
    let found: Vec<_> = tokenize_ngrams(words, max_order)
        .into_iter()
        .filter_map(|k| table.get(&k).map(|e| (k.size(), *e)))
        .collect();
    if found.is_empty() {
        return missing_token();
    }
    let n = words.len() as f64;
    let m = found.len() as f64;
    found
        .into_iter()
        .map(|(q, e)| {
            vec![
                Some(e.label_mean),
                Some(e.count as f64),
                Some(q as f64),
                Some(if q == words.len() { 1.0 } else { 0.0 }),
                Some(n),
                Some(m),
            ]
        })
        .collect()
}

/// Turns raw examples into a pre-tokenized dataset, using the tokenizer
/// recorded in the table.
pub fn assemble_dataset(raw: &RawDataset, table: &TokenTable) -> Result<Dataset> {
    let examples = raw
        .examples
        .par_iter()
        .map(|ex| {
            let tokens = match table.meta.tokenizer {
                TokenizerConfig::Subsets { max_size } => {
                    assemble_features(&ex.categories, ex.context.as_deref(), table, max_size)?
                }
                TokenizerConfig::Ngrams { max_order } => {
                    assemble_ngram_features(&ex.categories, table, max_order)
                }
            };
            Ok(ExampleSet {
                id: ex.id.clone(),
                tokens,
                label: ex.label,
                group_id: ex.group_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        examples,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        label_kind: raw.label_kind,
        split_tag: None,
    })
}
