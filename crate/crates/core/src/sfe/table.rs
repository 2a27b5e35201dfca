use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{enumerate_subsets, tokenize_ngrams, TokenKey, TokenizerConfig};
use crate::data::{LabelKind, RawExample};
use crate::error::{Error, Result};
use crate::sum::ExactSum;

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Normal quantile of the two-sided 95% interval used by the CI filter.
pub const CI_Z: f64 = 1.96;

/// Full width of the normal-approximation interval of a Bernoulli mean.
pub fn ci_width(p: f64, n: u64) -> f64 {
    2.0 * CI_Z * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    /// Mean label over the token's occurrences.
    pub label_mean: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub tokenizer: TokenizerConfig,
    /// `Pm1Binary` tables store means of `{0, 1}` labels, i.e. rates.
    pub label_kind: LabelKind,
    pub count_threshold: Option<u64>,
    pub ci_threshold: Option<f64>,
    pub ci_z: f64,
    pub num_examples: usize,
}

/// Token statistics keyed by canonical token, iterated in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    pub meta: BuildMeta,
    pub entries: BTreeMap<TokenKey, TokenEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: BuildMeta,
    entries: usize,
}

impl TokenTable {
    pub fn new(meta: BuildMeta) -> TokenTable {
        TokenTable {
            meta,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &TokenKey) -> Option<&TokenEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_size(&self) -> usize {
        match self.meta.tokenizer {
            TokenizerConfig::Subsets { max_size } => max_size,
            TokenizerConfig::Ngrams { max_order } => max_order,
        }
    }

    /// A JSON header line, then one `key<TAB>mean<TAB>count` line per entry
    /// in key order. Means are written with 17 significant digits.
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        serde_json::to_writer(
            &mut w,
            &Header {
                format_version: TABLE_FORMAT_VERSION,
                meta: self.meta.clone(),
                entries: self.entries.len(),
            },
        )?;
        w.write_all(b"\n")?;
        for (key, e) in &self.entries {
            serde_json::to_writer(&mut w, key)?;
            writeln!(w, "\t{:.16e}\t{}", e.label_mean, e.count)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<TokenTable> {
        let mut lines = BufReader::new(input).lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing table header".into(),
        })??;
        let header: Header = serde_json::from_str(&header).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format_version != TABLE_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "token table format {} is not supported (expected {TABLE_FORMAT_VERSION})",
                header.format_version
            )));
        }
        let mut table = TokenTable::new(header.meta);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: line_no, msg };
            let mut parts = line.split('\t');
            let (Some(k), Some(m), Some(c), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected key, mean and count".into()));
            };
            let key: TokenKey = serde_json::from_str(k).map_err(|e| bad(e.to_string()))?;
            let label_mean: f64 = m.parse().map_err(|_| bad(format!("bad mean '{m}'")))?;
            let count: u64 = c.parse().map_err(|_| bad(format!("bad count '{c}'")))?;
            if count == 0 {
                return Err(bad("count must be positive".into()));
            }
            if table.entries.insert(key, TokenEntry { label_mean, count }).is_some() {
                return Err(bad("duplicate key".into()));
            }
        }
        if table.entries.len() != header.entries {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "header promises {} entries, found {}",
                    header.entries,
                    table.entries.len()
                ),
            });
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<TokenTable> {
        Self::read(File::open(path)?)
    }
}

type Accumulator = HashMap<TokenKey, (ExactSum, u64)>;

fn merge(mut a: Accumulator, b: Accumulator) -> Accumulator {
    if a.len() < b.len() {
        return merge(b, a);
    }
    for (k, (s, c)) in b {
        let slot = a.entry(k).or_insert_with(|| (ExactSum::new(), 0));
        slot.0.merge(&s);
        slot.1 += c;
    }
    a
}

fn tokens_of(ex: &RawExample, tokenizer: TokenizerConfig) -> Result<Vec<TokenKey>> {
    match tokenizer {
        TokenizerConfig::Subsets { max_size } => {
            enumerate_subsets(&ex.categories, ex.context.as_deref(), max_size)
        }
        TokenizerConfig::Ngrams { max_order } => Ok(tokenize_ngrams(&ex.categories, max_order)),
    }
}

/// Counts every token of every example (all subsets up to the maximum
/// size, no fallback) and records its mean label. `Pm1Binary` labels are
/// mapped to `{0, 1}` first so means are rates. Examples are processed in
/// parallel shards; label sums are exact, so the result does not depend on
/// how the work was split.
pub fn build_token_table(
    examples: &[RawExample],
    label_kind: LabelKind,
    tokenizer: TokenizerConfig,
) -> Result<TokenTable> {
    tokenizer.validate()?;
    let acc = examples
        .par_iter()
        .try_fold(Accumulator::new, |mut acc, ex| {
            let y = match label_kind {
                LabelKind::Real => ex.label,
                LabelKind::Pm1Binary if ex.label == 1.0 => 1.0,
                LabelKind::Pm1Binary if ex.label == -1.0 || ex.label == 0.0 => 0.0,
                LabelKind::Pm1Binary => {
                    return Err(Error::Label {
                        label: ex.label,
                        kind: "binary",
                    })
                }
            };
            for key in tokens_of(ex, tokenizer)? {
                let slot = acc.entry(key).or_insert_with(|| (ExactSum::new(), 0));
                slot.0.add(y);
                slot.1 += 1;
            }
            Ok(acc)
        })
        .try_reduce(Accumulator::new, |a, b| Ok(merge(a, b)))?;

    let entries = acc
        .into_iter()
        .map(|(k, (s, c))| {
            (
                k,
                TokenEntry {
                    label_mean: s.value() / c as f64,
                    count: c,
                },
            )
        })
        .collect();
    Ok(TokenTable {
        meta: BuildMeta {
            tokenizer,
            label_kind,
            count_threshold: None,
            ci_threshold: None,
            ci_z: CI_Z,
            num_examples: examples.len(),
        },
        entries,
    })
}

/// Drops entries seen fewer than `count_threshold` times and, when
/// `ci_threshold` is set, binary entries whose 95% interval is wider than
/// it. Thresholds accumulate in the metadata.
pub fn filter_table(
    table: &TokenTable,
    count_threshold: u64,
    ci_threshold: Option<f64>,
) -> Result<TokenTable> {
    if let Some(ci) = ci_threshold {
        if !(ci >= 0.0) {
            return Err(Error::Config("ci_threshold must be non-negative".into()));
        }
        if table.meta.label_kind != LabelKind::Pm1Binary {
            return Err(Error::Config(
                "the confidence-interval filter needs binary labels".into(),
            ));
        }
    }
    let entries = table
        .entries
        .iter()
        .filter(|(_, e)| e.count >= count_threshold)
        .filter(|(_, e)| ci_threshold.map_or(true, |ci| ci_width(e.label_mean, e.count) <= ci))
        .map(|(k, e)| (k.clone(), *e))
        .collect();
    let mut meta = table.meta.clone();
    meta.count_threshold = Some(meta.count_threshold.unwrap_or(0).max(count_threshold));
    if let Some(ci) = ci_threshold {
        meta.ci_threshold = Some(meta.ci_threshold.map_or(ci, |old| old.min(ci)));
    }
    Ok(TokenTable { meta, entries })
}
