use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::{Error, Result};

/// Rule mapping a raw attribute value to the binary sensitive bit (1 = rule matches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitiveRule {
    /// Bit is 1 when the trimmed value is one of these strings.
    Equals(Vec<String>),
    /// Bit is 1 when the numeric value lies in `[lo, hi]` (inclusive).
    Between([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    /// One-hot encoded. Without an explicit value list the categories are the
    /// sorted distinct values observed in the file.
    Categorical {
        #[serde(default)]
        values: Option<Vec<String>>,
    },
    Label {
        positive: Vec<String>,
    },
    Sensitive {
        rule: SensitiveRule,
        /// Also feed the raw column to the model (numeric rules only).
        #[serde(default)]
        also_feature: bool,
    },
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Describes how to turn one CSV file into a [`TabularDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub name: String,
    /// When false, columns are taken positionally in schema order.
    #[serde(default = "default_true")]
    pub header: bool,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Raw values treated as missing; rows containing one are dropped.
    #[serde(default)]
    pub missing: Vec<String>,
    #[serde(default)]
    pub skip_rows: usize,
    pub columns: Vec<ColumnSpec>,
}

fn default_true() -> bool {
    true
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let count = |pred: fn(&ColumnKind) -> bool| self.columns.iter().filter(|c| pred(&c.kind)).count();
        if count(|k| matches!(k, ColumnKind::Label { .. })) != 1 {
            return Err(Error::Schema("schema needs exactly one label column".into()));
        }
        if count(|k| matches!(k, ColumnKind::Sensitive { .. })) != 1 {
            return Err(Error::Schema("schema needs exactly one sensitive column".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(&c.name) {
                return Err(Error::Schema(format!("duplicate column '{}'", c.name)));
            }
            if let ColumnKind::Sensitive {
                rule: SensitiveRule::Equals(_),
                also_feature: true,
            } = c.kind
            {
                return Err(Error::Schema(format!(
                    "column '{}': also_feature needs a numeric (between) rule",
                    c.name
                )));
            }
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Schema("delimiter must be ASCII".into()));
        }
        Ok(())
    }
}

/// A parsed file plus how many rows were dropped for missing values.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: TabularDataset,
    pub dropped_rows: usize,
}

fn parse_num(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("'{raw}' is not a finite number"),
        })
}

/// Reads a CSV according to `schema`: numeric columns stay raw (standardize
/// after splitting), categoricals are one-hot encoded, label and attribute are
/// binarized. Rows with a missing value are dropped.
///
/// Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<LoadedCsv> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, schema)
}

pub(crate) fn load_csv_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<LoadedCsv> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let mut records = rdr.records().enumerate().skip(schema.skip_rows);
    let positions: Vec<usize> = if schema.header {
        let (_, header) = records.next().ok_or_else(|| Error::Parse {
            row: schema.skip_rows + 1,
            column: String::new(),
            message: "missing header line".into(),
        })?;
        let header = header?;
        let header: Vec<&str> = header.iter().map(|h| h.trim_matches('"')).collect();
        schema
            .columns
            .iter()
            .map(|c| {
                header.iter().position(|h| *h == c.name).ok_or_else(|| Error::Parse {
                    row: schema.skip_rows + 1,
                    column: c.name.clone(),
                    message: format!("column not found in header {header:?}"),
                })
            })
            .collect::<Result<_>>()?
    } else {
        (0..schema.columns.len()).collect()
    };
    let needed = positions.iter().copied().max().map_or(0, |m| m + 1);

    // First pass: collect the kept rows as strings.
    let mut kept: Vec<(usize, Vec<String>)> = Vec::new();
    let mut dropped = 0;
    for (line, rec) in records {
        let rec = rec?;
        let row = rec.position().map_or(line + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() < needed {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected at least {needed} fields, found {}", rec.len()),
            });
        }
        let values: Vec<String> = positions
            .iter()
            .map(|&p| rec[p].trim_matches('"').to_string())
            .collect();
        let has_missing = schema
            .columns
            .iter()
            .zip(&values)
            .any(|(c, v)| !matches!(c.kind, ColumnKind::Ignore) && schema.missing.iter().any(|m| m == v));
        if has_missing {
            dropped += 1;
            continue;
        }
        kept.push((row, values));
    }

    // Resolve categorical vocabularies.
    let vocab: Vec<Option<Vec<String>>> = schema
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| match &c.kind {
            ColumnKind::Categorical { values: Some(v) } => Some(v.clone()),
            ColumnKind::Categorical { values: None } => {
                let set: BTreeSet<&str> = kept.iter().map(|(_, r)| r[j].as_str()).collect();
                Some(set.into_iter().map(str::to_string).collect())
            }
            _ => None,
        })
        .collect();

    let mut feature_names = Vec::new();
    let mut numeric = Vec::new();
    for (c, v) in schema.columns.iter().zip(&vocab) {
        match &c.kind {
            ColumnKind::Numeric | ColumnKind::Sensitive { also_feature: true, .. } => {
                feature_names.push(c.name.clone());
                numeric.push(true);
            }
            ColumnKind::Categorical { .. } => {
                for val in v.as_ref().expect("categorical vocab") {
                    feature_names.push(format!("{}={val}", c.name));
                    numeric.push(false);
                }
            }
            _ => {}
        }
    }
    let width = feature_names.len();

    let mut features = Vec::with_capacity(kept.len() * width);
    let mut labels = Vec::with_capacity(kept.len());
    let mut groups = Vec::with_capacity(kept.len());
    for (row, values) in &kept {
        for ((c, raw), v) in schema.columns.iter().zip(values).zip(&vocab) {
            match &c.kind {
                ColumnKind::Numeric => features.push(parse_num(raw, *row, &c.name)?),
                ColumnKind::Categorical { .. } => {
                    let vocab = v.as_ref().expect("categorical vocab");
                    let hit = vocab.iter().position(|x| x == raw).ok_or_else(|| Error::Parse {
                        row: *row,
                        column: c.name.clone(),
                        message: format!("unknown category '{raw}'"),
                    })?;
                    features.extend((0..vocab.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                }
                ColumnKind::Label { positive } => labels.push(positive.iter().any(|p| p == raw) as u8),
                ColumnKind::Sensitive { rule, also_feature } => {
                    let bit = match rule {
                        SensitiveRule::Equals(vals) => vals.iter().any(|p| p == raw),
                        SensitiveRule::Between([lo, hi]) => {
                            let x = parse_num(raw, *row, &c.name)?;
                            *lo <= x && x <= *hi
                        }
                    };
                    groups.push(bit as u8);
                    if *also_feature {
                        features.push(parse_num(raw, *row, &c.name)?);
                    }
                }
                ColumnKind::Ignore => {}
            }
        }
    }
    let dataset = TabularDataset::new(features, width, labels, groups, feature_names, numeric)?;
    Ok(LoadedCsv {
        dataset,
        dropped_rows: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Standardizer;

    const SCHEMA: &str = r#"
        name = "toy"
        missing = ["?"]
        [[columns]]
        name = "age"
        kind = "numeric"
        [[columns]]
        name = "job"
        kind = "categorical"
        [[columns]]
        name = "sex"
        kind = "sensitive"
        rule = { equals = ["M"] }
        [[columns]]
        name = "y"
        kind = "label"
        positive = [">50K", ">50K."]
    "#;

    fn load(csv: &str, schema: &str) -> Result<LoadedCsv> {
        load_csv_reader(csv.as_bytes(), &Schema::from_toml_str(schema)?)
    }

    #[test]
    fn three_rows_exact_matrix() {
        let csv = "age,job,sex,y\n30, b ,M,>50K\n50,a,F,<=50K\n40,b,F,>50K.\n";
        let out = load(csv, SCHEMA).unwrap();
        let ds = out.dataset;
        assert_eq!(ds.feature_names, vec!["age", "job=a", "job=b"]);
        assert_eq!(ds.features, vec![30.0, 0.0, 1.0, 50.0, 1.0, 0.0, 40.0, 0.0, 1.0]);
        assert_eq!(ds.labels, vec![1, 0, 1]);
        assert_eq!(ds.groups, vec![1, 0, 0]);

        // Standardized by hand: mean 40, population std sqrt(200/3).
        let mut st = ds.clone();
        Standardizer::fit(&ds).apply(&mut st);
        let s = (200.0f64 / 3.0).sqrt();
        let expected = [-10.0 / s, 0.0, 1.0, 10.0 / s, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in st.features.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_category_is_width_one() {
        let csv = "age,job,sex,y\n1,x,M,>50K\n2,x,F,no\n";
        let ds = load(csv, SCHEMA).unwrap().dataset;
        assert_eq!(ds.n_features, 2);
        assert_eq!(ds.features, vec![1.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn missing_rows_dropped() {
        let csv = "age,job,sex,y\n1,?,M,>50K\n2,x,F,no\n";
        let out = load(csv, SCHEMA).unwrap();
        assert_eq!(out.dropped_rows, 1);
        assert_eq!(out.dataset.len(), 1);
    }

    #[test]
    fn between_rule_matches_row_by_row() {
        let schema = r#"
            delimiter = ";"
            [[columns]]
            name = "age"
            kind = "sensitive"
            rule = { between = [25, 60] }
            also_feature = true
            [[columns]]
            name = "y"
            kind = "label"
            positive = ["yes"]
        "#;
        let ages = [18, 24, 25, 40, 60, 61, 90];
        let mut csv = String::from("\"age\";\"y\"\n");
        for a in ages {
            csv.push_str(&format!("{a};\"no\"\n"));
        }
        let ds = load(&csv, schema).unwrap().dataset;
        let expected: Vec<u8> = ages.iter().map(|&a| (25..=60).contains(&a) as u8).collect();
        assert_eq!(ds.groups, expected);
        assert_eq!(ds.n_features, 1);
    }

    #[test]
    fn schema_mismatch_is_descriptive() {
        let err = load("age,job,y\n1,a,no\n", SCHEMA).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (1, "sex")),
            e => panic!("unexpected {e}"),
        }
        let err = load("age,job,sex,y\n1,a,M,no\nabc,a,F,no\n", SCHEMA).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (3, "age")),
            e => panic!("unexpected {e}"),
        }
        let listed = SCHEMA.replace("kind = \"categorical\"", "kind = \"categorical\"\nvalues = [\"a\"]");
        assert!(matches!(load("age,job,sex,y\n1,b,M,no\n", &listed), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn headerless_positional() {
        let schema = SCHEMA.replace("name = \"toy\"", "name = \"toy\"\nheader = false");
        let ds = load("30,b,M,>50K\n", &schema).unwrap().dataset;
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn schema_validation() {
        assert!(Schema::from_toml_str("[[columns]]\nname='a'\nkind='numeric'\n").is_err());
    }
}
