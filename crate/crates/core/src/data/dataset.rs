use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExampleSet, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    Real,
    /// Labels in `{-1, +1}`. Files may also use `{0, 1}`; 0 reads as -1.
    Pm1Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// Pre-tokenized examples with uniform `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<ExampleSet>,
    pub feature_names: Vec<String>,
    pub label_kind: LabelKind,
    pub split_tag: Option<SplitTag>,
}

impl Dataset {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.num_features();
        for ex in &self.examples {
            ex.validate(d).map_err(|e| Error::Schema(e.to_string()))?;
            if self.label_kind == LabelKind::Pm1Binary && ex.label != 1.0 && ex.label != -1.0 {
                return Err(Error::Schema(format!(
                    "example '{}' has label {} in a +-1 dataset",
                    ex.id, ex.label
                )));
            }
        }
        Ok(())
    }
}

/// One example of sparse categorical input, before tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub group_id: Option<String>,
    pub categories: Vec<String>,
    pub context: Option<String>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub examples: Vec<RawExample>,
    pub label_kind: LabelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Id,
    Group,
    CategoryList,
    Context,
    TokenFeature,
    Label,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

fn default_separator() -> String {
    "|".to_string()
}

/// Sidecar descriptor mapping file columns to roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub format: FileFormat,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub label_kind: LabelKind,
    /// Separator inside a CSV category-list cell.
    #[serde(default = "default_separator")]
    pub category_separator: String,
}

impl Schema {
    /// `<data path>.schema.json`.
    pub fn sidecar_path(data: &Path) -> PathBuf {
        let mut s = data.as_os_str().to_os_string();
        s.push(".schema.json");
        PathBuf::from(s)
    }

    pub fn load(path: &Path) -> Result<Schema> {
        let schema: Schema = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load_sidecar(data: &Path) -> Result<Schema> {
        Self::load(&Self::sidecar_path(data))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn count(&self, role: Role) -> usize {
        self.columns.iter().filter(|c| c.role == role).count()
    }

    pub fn is_raw(&self) -> bool {
        self.count(Role::CategoryList) > 0
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == Role::TokenFeature)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for role in [Role::Id, Role::Label] {
            if self.count(role) != 1 {
                return Err(Error::Schema(format!("schema needs exactly one {role:?} column")));
            }
        }
        for role in [Role::Group, Role::Context, Role::CategoryList] {
            if self.count(role) > 1 {
                return Err(Error::Schema(format!("schema has more than one {role:?} column")));
            }
        }
        match (self.is_raw(), self.count(Role::TokenFeature)) {
            (true, 0) | (false, 1..) => Ok(()),
            (true, _) => Err(Error::Schema(
                "a schema cannot mix category lists and token features".into(),
            )),
            (false, _) => Err(Error::Schema(
                "schema needs token features or a category list".into(),
            )),
        }
    }
}

/// A loaded file: either pre-tokenized or raw categorical.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Tokens(Dataset),
    Raw(RawDataset),
}

/// One parsed row, independent of the file format.
struct Row {
    line: usize,
    id: String,
    group: Option<String>,
    categories: Vec<String>,
    context: Option<String>,
    features: Vec<Option<f64>>,
    label: f64,
}

fn parse_number(cell: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("null") {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        msg: format!("column '{column}': '{cell}' is not a number"),
    })
}

fn normalize_label(label: f64, kind: LabelKind, line: usize) -> Result<f64> {
    match kind {
        LabelKind::Real if label.is_finite() => Ok(label),
        LabelKind::Pm1Binary if label == 1.0 || label == -1.0 => Ok(label),
        LabelKind::Pm1Binary if label == 0.0 => Ok(-1.0),
        _ => Err(Error::Parse {
            line,
            msg: format!("invalid label {label} for {kind:?}"),
        }),
    }
}

fn read_csv_rows(path: &Path, schema: &Schema) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let pos = headers
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| Error::Schema(format!("column '{}' not in file header", col.name)))?;
        positions.push(pos);
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Schema(format!(
                    "line {line}: {len} fields where the header has {expected_len}"
                )),
                _ => Error::Parse {
                    line,
                    msg: e.to_string(),
                },
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut row = Row {
            line,
            id: String::new(),
            group: None,
            categories: Vec::new(),
            context: None,
            features: Vec::new(),
            label: f64::NAN,
        };
        for (col, &pos) in schema.columns.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("");
            match col.role {
                Role::Id => row.id = cell.to_string(),
                Role::Group => row.group = Some(cell.to_string()).filter(|s| !s.is_empty()),
                Role::Context => row.context = Some(cell.to_string()).filter(|s| !s.is_empty()),
                Role::CategoryList => {
                    row.categories = cell
                        .split(schema.category_separator.as_str())
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                }
                Role::TokenFeature => row.features.push(parse_number(cell, line, &col.name)?),
                Role::Label => {
                    row.label = parse_number(cell, line, &col.name)?.ok_or_else(|| {
                        Error::Parse {
                            line,
                            msg: "missing label".into(),
                        }
                    })?
                }
                Role::Ignore => {}
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn json_string(v: &serde_json::Value, line: usize, column: &str) -> Result<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Parse {
            line,
            msg: format!("column '{column}': expected a string, got {other}"),
        }),
    }
}

fn json_number(v: &serde_json::Value, line: usize, column: &str) -> Result<Option<f64>> {
    match v {
        serde_json::Value::Null => Ok(None),
        serde_json::Value::Number(n) => Ok(n.as_f64()),
        serde_json::Value::String(s) => parse_number(s, line, column),
        other => Err(Error::Parse {
            line,
            msg: format!("column '{column}': expected a number, got {other}"),
        }),
    }
}

fn read_jsonl_rows(path: &Path, schema: &Schema) -> Result<Vec<Row>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
        let mut row = Row {
            line,
            id: String::new(),
            group: None,
            categories: Vec::new(),
            context: None,
            features: Vec::new(),
            label: f64::NAN,
        };
        for col in &schema.columns {
            let v = obj.get(&col.name).unwrap_or(&serde_json::Value::Null);
            match col.role {
                Role::Id => row.id = json_string(v, line, &col.name)?,
                Role::Group if !v.is_null() => row.group = Some(json_string(v, line, &col.name)?),
                Role::Context if !v.is_null() => {
                    row.context = Some(json_string(v, line, &col.name)?)
                }
                Role::CategoryList => {
                    row.categories = match v {
                        serde_json::Value::Array(items) => items
                            .iter()
                            .map(|x| json_string(x, line, &col.name))
                            .collect::<Result<_>>()?,
                        serde_json::Value::String(s) => s
                            .split(schema.category_separator.as_str())
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect(),
                        serde_json::Value::Null => Vec::new(),
                        other => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("column '{}': expected a list, got {other}", col.name),
                            })
                        }
                    }
                }
                Role::TokenFeature => row.features.push(json_number(v, line, &col.name)?),
                Role::Label => {
                    row.label = json_number(v, line, &col.name)?.ok_or_else(|| Error::Parse {
                        line,
                        msg: "missing label".into(),
                    })?
                }
                _ => {}
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads a dataset described by `schema`. Pre-tokenized rows sharing an id
/// form one example (in order of first appearance); raw rows are one
/// example each.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Loaded> {
    schema.validate()?;
    let rows = match schema.format {
        FileFormat::Csv => read_csv_rows(path, schema)?,
        FileFormat::Jsonl => read_jsonl_rows(path, schema)?,
    };
    if schema.is_raw() {
        let examples = rows
            .into_iter()
            .map(|r| {
                Ok(RawExample {
                    label: normalize_label(r.label, schema.label_kind, r.line)?,
                    group_id: r.group.or_else(|| Some(r.id.clone())),
                    id: r.id,
                    categories: r.categories,
                    context: r.context,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Loaded::Raw(RawDataset {
            examples,
            label_kind: schema.label_kind,
        }));
    }

    let feature_names = schema.feature_names();
    let mut examples: Vec<ExampleSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in rows {
        let label = normalize_label(r.label, schema.label_kind, r.line)?;
        match index.get(&r.id) {
            Some(&i) => {
                let ex = &mut examples[i];
                if ex.label != label {
                    return Err(Error::Parse {
                        line: r.line,
                        msg: format!("example '{}' has conflicting labels", r.id),
                    });
                }
                ex.tokens.push(r.features);
            }
            None => {
                index.insert(r.id.clone(), examples.len());
                examples.push(ExampleSet {
                    id: r.id,
                    tokens: vec![r.features],
                    label,
                    group_id: r.group,
                });
            }
        }
    }
    let ds = Dataset {
        examples,
        feature_names,
        label_kind: schema.label_kind,
        split_tag: None,
    };
    ds.validate()?;
    Ok(Loaded::Tokens(ds))
}

/// Loads a file that must be pre-tokenized, using its sidecar schema.
pub fn load_tokenized(path: &Path) -> Result<Dataset> {
    match load_dataset(path, &Schema::load_sidecar(path)?)? {
        Loaded::Tokens(d) => Ok(d),
        Loaded::Raw(_) => Err(Error::Schema(format!(
            "{} holds raw categories; assemble features first",
            path.display()
        ))),
    }
}

/// Loads a file that must be raw categorical, using its sidecar schema.
pub fn load_raw(path: &Path) -> Result<RawDataset> {
    match load_dataset(path, &Schema::load_sidecar(path)?)? {
        Loaded::Raw(d) => Ok(d),
        Loaded::Tokens(_) => Err(Error::Schema(format!(
            "{} holds token features, not categories",
            path.display()
        ))),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Writes a pre-tokenized dataset as CSV (one row per token) plus its
/// sidecar schema.
pub fn write_tokenized(dataset: &Dataset, path: &Path) -> Result<()> {
    let has_group = dataset.examples.iter().any(|e| e.group_id.is_some());
    let mut columns = vec![Column {
        name: "id".into(),
        role: Role::Id,
    }];
    if has_group {
        columns.push(Column {
            name: "group".into(),
            role: Role::Group,
        });
    }
    for name in &dataset.feature_names {
        columns.push(Column {
            name: name.clone(),
            role: Role::TokenFeature,
        });
    }
    columns.push(Column {
        name: "label".into(),
        role: Role::Label,
    });
    let schema = Schema {
        format: FileFormat::Csv,
        columns,
        label_kind: dataset.label_kind,
        category_separator: default_separator(),
    };
    schema.validate()?;

    let mut w = csv::Writer::from_path(path)?;
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    for ex in &dataset.examples {
        for token in &ex.tokens {
            let mut rec = vec![ex.id.clone()];
            if has_group {
                rec.push(ex.group_id.clone().unwrap_or_default());
            }
            rec.extend(token.iter().map(|&x| fmt_opt(x)));
            rec.push(format!("{:?}", ex.label));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    schema.save(&Schema::sidecar_path(path))
}

/// Writes raw examples as JSONL plus a sidecar schema.
pub fn write_raw(dataset: &RawDataset, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        group: Option<&'a str>,
        categories: &'a [String],
        context: Option<&'a str>,
        label: f64,
    }
    let mut w = BufWriter::new(File::create(path)?);
    for ex in &dataset.examples {
        serde_json::to_writer(
            &mut w,
            &Line {
                id: &ex.id,
                group: ex.group_id.as_deref(),
                categories: &ex.categories,
                context: ex.context.as_deref(),
                label: ex.label,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let col = |name: &str, role| Column {
        name: name.into(),
        role,
    };
    Schema {
        format: FileFormat::Jsonl,
        columns: vec![
            col("id", Role::Id),
            col("group", Role::Group),
            col("categories", Role::CategoryList),
            col("context", Role::Context),
            col("label", Role::Label),
        ],
        label_kind: dataset.label_kind,
        category_separator: default_separator(),
    }
    .save(&Schema::sidecar_path(path))
}

/// Items that carry a split group; items sharing a group land in the same
/// split.
pub trait SplitUnit {
    fn split_key(&self) -> Option<&str>;
}

impl SplitUnit for ExampleSet {
    fn split_key(&self) -> Option<&str> {
        self.group_id.as_deref()
    }
}

impl SplitUnit for RawExample {
    fn split_key(&self) -> Option<&str> {
        self.group_id.as_deref()
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const SEVENTY_TEN_TWENTY: SplitFractions = SplitFractions {
        train: 0.7,
        validation: 0.1,
        test: 0.2,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Deterministic seeded split. Groups (or ungrouped items) are shuffled
/// and assigned contiguously; each split keeps the original item order.
pub fn split<T: SplitUnit + Clone>(
    items: &[T],
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    fractions.validate()?;
    let mut unit_of = Vec::with_capacity(items.len());
    let mut units: HashMap<&str, usize> = HashMap::new();
    let mut n_units = 0usize;
    for item in items {
        let u = match item.split_key() {
            Some(k) => *units.entry(k).or_insert_with(|| {
                n_units += 1;
                n_units - 1
            }),
            None => {
                n_units += 1;
                n_units - 1
            }
        };
        unit_of.push(u);
    }
    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions.train * n_units as f64).round() as usize).min(n_units);
    let n_val = ((fractions.validation * n_units as f64).round() as usize).min(n_units - n_train);
    let mut assignment = vec![2u8; n_units];
    for (pos, &u) in order.iter().enumerate() {
        assignment[u] = if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        };
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (item, u) in items.iter().zip(unit_of) {
        match assignment[u] {
            0 => train.push(item.clone()),
            1 => val.push(item.clone()),
            _ => test.push(item.clone()),
        }
    }
    Ok((train, val, test))
}

/// Splits a dataset, tagging each part.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = split(&dataset.examples, fractions, seed)?;
    let wrap = |examples, tag| Dataset {
        examples,
        feature_names: dataset.feature_names.clone(),
        label_kind: dataset.label_kind,
        split_tag: Some(tag),
    };
    Ok((
        wrap(a, SplitTag::Train),
        wrap(b, SplitTag::Validation),
        wrap(c, SplitTag::Test),
    ))
}

/// Crosses each raw example with every candidate class: one row per class
/// with the class as context, label +1 for the true class and -1 otherwise.
/// All rows keep the source id as their group.
pub fn expand_multiclass(
    source: &[(String, Vec<String>, String)],
    classes: &[String],
) -> RawDataset {
    let mut examples = Vec::with_capacity(source.len() * classes.len());
    for (id, categories, truth) in source {
        for class in classes {
            examples.push(RawExample {
                id: format!("{id}/{class}"),
                group_id: Some(id.clone()),
                categories: categories.clone(),
                context: Some(class.clone()),
                label: if class == truth { 1.0 } else { -1.0 },
            });
        }
    }
    RawDataset {
        examples,
        label_kind: LabelKind::Pm1Binary,
    }
}

/// Convenience for tests and tools: a dataset from in-memory tokens.
pub fn dataset_from_tokens(
    rows: Vec<(Vec<Token>, f64)>,
    feature_names: Vec<String>,
    label_kind: LabelKind,
) -> Dataset {
    Dataset {
        examples: rows
            .into_iter()
            .enumerate()
            .map(|(i, (tokens, label))| ExampleSet {
                id: i.to_string(),
                tokens,
                label,
                group_id: None,
            })
            .collect(),
        feature_names,
        label_kind,
        split_tag: None,
    }
}
