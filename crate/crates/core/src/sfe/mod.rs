//! Semantic feature engine: turns sparse categorical inputs into sets of
//! dense token feature vectors.
//!
//! Inputs are tokenized into category subsets (or word ngrams), tokens are
//! looked up in a table of empirical label statistics built from training
//! data, and each emitted token becomes a `D = 6` feature vector.

mod features;
mod table;
mod tokenize;

pub use features::{
    assemble_dataset, assemble_features, assemble_ngram_features, FEATURE_NAMES, NUM_FEATURES,
};
pub use table::{
    build_token_table, ci_width, filter_table, BuildMeta, TokenEntry, TokenTable, CI_Z,
    TABLE_FORMAT_VERSION,
};
pub use tokenize::{
    canonical_items, enumerate_subsets, tokenize_ngrams, tokenize_subsets_with_fallback,
    Tokenization, TokenizerConfig, SUBSET_BUDGET,
};

use serde::{Deserialize, Serialize};

/// Canonical form of a token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenKey {
    /// Sorted, duplicate-free categories, optionally crossed with a context
    /// such as a candidate class.
    Subset {
        items: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context: Option<String>,
    },
    /// Contiguous words in order of occurrence.
    Ngram { words: Vec<String> },
}

impl TokenKey {
    /// Builds a subset key, sorting and deduplicating `items`.
    pub fn subset<S: AsRef<str>>(items: &[S], context: Option<&str>) -> TokenKey {
        TokenKey::Subset {
            items: canonical_items(items),
            context: context.map(str::to_string),
        }
    }

    pub fn ngram<S: AsRef<str>>(words: &[S]) -> TokenKey {
        TokenKey::Ngram {
            words: words.iter().map(|w| w.as_ref().to_string()).collect(),
        }
    }

    /// Number of categories or words.
    pub fn size(&self) -> usize {
        match self {
            TokenKey::Subset { items, .. } => items.len(),
            TokenKey::Ngram { words } => words.len(),
        }
    }

    pub fn items(&self) -> &[String] {
        match self {
            TokenKey::Subset { items, .. } => items,
            TokenKey::Ngram { words } => words,
        }
    }
}

#[cfg(test)]
mod tests;
