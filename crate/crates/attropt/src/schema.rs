//! Attribute schema and multi-domain dataset model: declarative description
//! of the attribute vector (continuous unit-norm blocks, choose-k
//! categorical groups, optional costs/budget), CSV/JSON loading with
//! validation, and per-block unit normalization of continuous attributes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;

/// One categorical group: a set of 0-1 attribute indices of which exactly
/// `choose_k` must be set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalGroup {
    /// 0-based attribute indices.
    pub indices: Vec<usize>,
    pub choose_k: usize,
}

/// Declarative description of the attribute vector.
///
/// Indices are 0-based in memory; the JSON schema file uses 1-based indices
/// matching the `a_1..a_m` column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    /// Total attribute dimension.
    pub m: usize,
    /// Each block is normalized to unit Euclidean norm (0-based indices).
    pub continuous_blocks: Vec<Vec<usize>>,
    pub categorical_groups: Vec<CategoricalGroup>,
    /// Non-negative per-attribute costs; present iff `budget` is present.
    pub costs: Option<Vec<f64>>,
    pub budget: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    m: usize,
    #[serde(default)]
    continuous_blocks: Vec<Vec<usize>>,
    #[serde(default)]
    categorical_groups: Vec<CategoricalGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<f64>,
}

impl AttributeSchema {
    pub fn new(
        m: usize,
        continuous_blocks: Vec<Vec<usize>>,
        categorical_groups: Vec<CategoricalGroup>,
        costs: Option<Vec<f64>>,
        budget: Option<f64>,
    ) -> Result<Self> {
        let schema = AttributeSchema {
            m,
            continuous_blocks,
            categorical_groups,
            costs,
            budget,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Schema("m must be positive".into()));
        }
        let mut seen = vec![false; self.m];
        let mut mark = |idx: usize, what: &str| -> Result<()> {
            if idx >= self.m {
                return Err(Error::Schema(format!(
                    "{what} index {} out of range 1..={}",
                    idx + 1,
                    self.m
                )));
            }
            if seen[idx] {
                return Err(Error::Schema(format!(
                    "{what} index {} appears in more than one block/group",
                    idx + 1
                )));
            }
            seen[idx] = true;
            Ok(())
        };
        for block in &self.continuous_blocks {
            if block.is_empty() {
                return Err(Error::Schema("empty continuous block".into()));
            }
            for &i in block {
                mark(i, "continuous block")?;
            }
        }
        for group in &self.categorical_groups {
            if group.indices.is_empty() {
                return Err(Error::Schema("empty categorical group".into()));
            }
            if group.choose_k == 0 || group.choose_k > group.indices.len() {
                return Err(Error::Schema(format!(
                    "choose_k {} invalid for group of size {}",
                    group.choose_k,
                    group.indices.len()
                )));
            }
            for &i in &group.indices {
                mark(i, "categorical group")?;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Schema(format!(
                "attribute index {} belongs to no block or group",
                missing + 1
            )));
        }
        match (&self.costs, &self.budget) {
            (Some(costs), Some(budget)) => {
                if costs.len() != self.m {
                    return Err(Error::Dimension {
                        what: "costs".into(),
                        expected: self.m,
                        got: costs.len(),
                    });
                }
                if costs.iter().any(|&c| !(c >= 0.0)) {
                    return Err(Error::Schema("costs must be non-negative".into()));
                }
                if !(*budget >= 0.0) {
                    return Err(Error::Schema("budget must be non-negative".into()));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Schema(
                    "costs and budget must be given together".into(),
                ))
            }
        }
        Ok(())
    }

    /// Parses the JSON schema file format (1-based indices).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<schema>".into(),
            message: e.to_string(),
        })?;
        let to_zero_based = |v: &[usize], what: &str| -> Result<Vec<usize>> {
            v.iter()
                .map(|&i| {
                    if i == 0 {
                        Err(Error::Schema(format!("{what} indices are 1-based; got 0")))
                    } else {
                        Ok(i - 1)
                    }
                })
                .collect()
        };
        let blocks = file
            .continuous_blocks
            .iter()
            .map(|b| to_zero_based(b, "continuous block"))
            .collect::<Result<Vec<_>>>()?;
        let groups = file
            .categorical_groups
            .iter()
            .map(|g| {
                Ok(CategoricalGroup {
                    indices: to_zero_based(&g.indices, "categorical group")?,
                    choose_k: g.choose_k,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        AttributeSchema::new(file.m, blocks, groups, file.costs, file.budget)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Serializes to the JSON schema file format (1-based indices).
    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            m: self.m,
            continuous_blocks: self
                .continuous_blocks
                .iter()
                .map(|b| b.iter().map(|&i| i + 1).collect())
                .collect(),
            categorical_groups: self
                .categorical_groups
                .iter()
                .map(|g| CategoricalGroup {
                    indices: g.indices.iter().map(|&i| i + 1).collect(),
                    choose_k: g.choose_k,
                })
                .collect(),
            costs: self.costs.clone(),
            budget: self.budget,
        };
        serde_json::to_string_pretty(&file).expect("schema serialization")
    }

    /// Checks length and the choose-k condition on every categorical group.
    /// Continuous blocks are unconstrained here (unit norm is a
    /// post-normalization property).
    pub fn validate_attribute_vector(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.m {
            return Err(Error::Dimension {
                what: "attribute vector".into(),
                expected: self.m,
                got: a.len(),
            });
        }
        for (gi, group) in self.categorical_groups.iter().enumerate() {
            let mut ones = 0usize;
            for &i in &group.indices {
                let v = a[i];
                if (v - 1.0).abs() < 1e-9 {
                    ones += 1;
                } else if v.abs() >= 1e-9 {
                    return Err(Error::Schema(format!(
                        "categorical entry a_{} = {v} is not 0/1 (group {gi})",
                        i + 1
                    )));
                }
            }
            if ones != group.choose_k {
                return Err(Error::Schema(format!(
                    "group {gi} has {ones} ones, expected choose_k = {}",
                    group.choose_k
                )));
            }
        }
        Ok(())
    }
}

/// Scales every continuous block of `a` to unit Euclidean norm; categorical
/// entries are untouched. Errors on an all-zero block.
pub fn normalize_continuous(a: &[f64], schema: &AttributeSchema) -> Result<Vec<f64>> {
    let mut out = a.to_vec();
    normalize_continuous_in_place(&mut out, schema, "")?;
    Ok(out)
}

fn normalize_continuous_in_place(
    a: &mut [f64],
    schema: &AttributeSchema,
    context: &str,
) -> Result<()> {
    if a.len() != schema.m {
        return Err(Error::Dimension {
            what: "attribute vector".into(),
            expected: schema.m,
            got: a.len(),
        });
    }
    for (bi, block) in schema.continuous_blocks.iter().enumerate() {
        let vals: Vec<f64> = block.iter().map(|&i| a[i]).collect();
        let n = norm2(&vals);
        if n == 0.0 {
            return Err(Error::ZeroNormBlock {
                block: bi,
                context: context.to_string(),
            });
        }
        for &i in block {
            a[i] /= n;
        }
    }
    Ok(())
}

/// One observation: feature vector and scalar response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// One domain: its attribute vector and sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub id: String,
    pub attributes: Vec<f64>,
    pub samples: Vec<Sample>,
}

/// Per-domain sample sets plus attribute vectors. Immutable after loading
/// and normalization; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDomainDataset {
    pub domains: Vec<Domain>,
    /// Feature dimension.
    pub d: usize,
}

impl MultiDomainDataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_samples(&self) -> usize {
        self.domains.iter().map(|d| d.samples.len()).sum()
    }

    /// Applies [`normalize_continuous`] to every domain's attribute vector.
    pub fn normalize_attributes(&mut self, schema: &AttributeSchema) -> Result<()> {
        for domain in &mut self.domains {
            normalize_continuous_in_place(
                &mut domain.attributes,
                schema,
                &format!(" (domain `{}`)", domain.id),
            )?;
        }
        Ok(())
    }

    /// The domain's feature vectors as a target feature set.
    pub fn target_features(&self, domain_index: usize) -> TargetFeatureSet {
        TargetFeatureSet {
            features: self.domains[domain_index]
                .samples
                .iter()
                .map(|s| s.x.clone())
                .collect(),
        }
    }
}

/// Non-empty set of feature vectors the gain is aggregated over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFeatureSet {
    pub features: Vec<Vec<f64>>,
}

impl TargetFeatureSet {
    pub fn new(features: Vec<Vec<f64>>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("empty target feature set".into()));
        }
        let d = features[0].len();
        for (i, f) in features.iter().enumerate() {
            if f.len() != d {
                return Err(Error::Dimension {
                    what: format!("target feature vector {i}"),
                    expected: d,
                    got: f.len(),
                });
            }
        }
        Ok(TargetFeatureSet { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }
}

/// Loader behavior switches.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Replace missing (empty) response cells with the domain's mean
    /// response instead of rejecting them.
    pub impute_missing_responses: bool,
}

fn expect_header(actual: &[String], expected: &[String], path: &Path) -> Result<()> {
    for col in expected {
        if !actual.iter().any(|a| a == col) {
            return Err(Error::MissingColumn {
                column: col.clone(),
                path: path.display().to_string(),
            });
        }
    }
    if actual.len() != expected.len() || actual != expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: format!(
                "header mismatch: expected `{}`, got `{}`",
                expected.join(","),
                actual.join(",")
            ),
        });
    }
    Ok(())
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Loads and validates the samples/attributes CSV pair against a schema.
///
/// The feature dimension `d` comes from the samples header (`x_1..x_d`);
/// the attribute dimension from the schema. Preprocessing (unit
/// normalization) is NOT applied here; call
/// [`MultiDomainDataset::normalize_attributes`] afterwards.
pub fn load_dataset(
    samples_path: &Path,
    attributes_path: &Path,
    schema: &AttributeSchema,
    opts: &LoadOptions,
) -> Result<MultiDomainDataset> {
    // attributes.csv: domain_id, a_1..a_m. Flexible mode so ragged rows
    // reach our own length check and report as dimension errors.
    let mut attr_reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(attributes_path)
        .map_err(|e| Error::Parse {
            path: attributes_path.display().to_string(),
            message: e.to_string(),
        })?;
    let attr_header: Vec<String> = attr_reader
        .headers()
        .map_err(|e| Error::Parse {
            path: attributes_path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut expected: Vec<String> = vec!["domain_id".into()];
    expected.extend((1..=schema.m).map(|j| format!("a_{j}")));
    expect_header(&attr_header, &expected, attributes_path)?;

    let mut order: Vec<String> = Vec::new();
    let mut attributes: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (ri, record) in attr_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: attributes_path.display().to_string(),
            message: e.to_string(),
        })?;
        let row = ri + 2; // 1-based, after header
        if record.len() != schema.m + 1 {
            return Err(Error::Dimension {
                what: format!("attributes.csv row {row}"),
                expected: schema.m + 1,
                got: record.len(),
            });
        }
        let id = record.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                path: attributes_path.display().to_string(),
                message: format!("empty domain_id at row {row}"),
            });
        }
        if attributes.contains_key(&id) {
            return Err(Error::Parse {
                path: attributes_path.display().to_string(),
                message: format!("duplicate domain id `{id}` at row {row}"),
            });
        }
        let mut a = Vec::with_capacity(schema.m);
        for j in 0..schema.m {
            a.push(parse_cell(
                record.get(j + 1).unwrap_or(""),
                row,
                &format!("a_{}", j + 1),
            )?);
        }
        order.push(id.clone());
        attributes.insert(id, a);
    }

    // samples.csv: domain_id, x_1..x_d, y
    let mut sample_reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(samples_path)
        .map_err(|e| Error::Parse {
            path: samples_path.display().to_string(),
            message: e.to_string(),
        })?;
    let header: Vec<String> = sample_reader
        .headers()
        .map_err(|e| Error::Parse {
            path: samples_path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header.len() < 3 || header[0] != "domain_id" || header[header.len() - 1] != "y" {
        return Err(Error::Parse {
            path: samples_path.display().to_string(),
            message: "samples header must be `domain_id,x_1..x_d,y`".into(),
        });
    }
    let d = header.len() - 2;
    let mut expected: Vec<String> = vec!["domain_id".into()];
    expected.extend((1..=d).map(|j| format!("x_{j}")));
    expected.push("y".into());
    expect_header(&header, &expected, samples_path)?;

    // missing responses are collected per domain and imputed afterwards
    let mut samples: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    let mut missing: Vec<(String, usize)> = Vec::new();
    for (ri, record) in sample_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: samples_path.display().to_string(),
            message: e.to_string(),
        })?;
        let row = ri + 2;
        if record.len() != d + 2 {
            return Err(Error::Dimension {
                what: format!("samples.csv row {row}"),
                expected: d + 2,
                got: record.len(),
            });
        }
        let id = record.get(0).unwrap_or("").trim().to_string();
        if !attributes.contains_key(&id) {
            return Err(Error::UnknownDomain {
                id,
                context: format!("samples.csv row {row} has no attributes row"),
            });
        }
        let mut x = Vec::with_capacity(d);
        for j in 0..d {
            x.push(parse_cell(
                record.get(j + 1).unwrap_or(""),
                row,
                &format!("x_{}", j + 1),
            )?);
        }
        let y_raw = record.get(d + 1).unwrap_or("");
        let y = if y_raw.trim().is_empty() && opts.impute_missing_responses {
            let entry = samples.entry(id.clone()).or_default();
            missing.push((id, entry.len()));
            entry.push(Sample { x, y: f64::NAN });
            continue;
        } else {
            parse_cell(y_raw, row, "y")?
        };
        samples.entry(id).or_default().push(Sample { x, y });
    }

    for (id, idx) in missing {
        let rows = samples.get_mut(&id).unwrap();
        let (sum, count) = rows
            .iter()
            .filter(|s| s.y.is_finite())
            .fold((0.0, 0usize), |(s, c), r| (s + r.y, c + 1));
        if count == 0 {
            return Err(Error::InvalidInput(format!(
                "domain `{id}` has only missing responses; cannot impute"
            )));
        }
        rows[idx].y = sum / count as f64;
    }

    let mut domains = Vec::with_capacity(order.len());
    for id in order {
        let attr = attributes.remove(&id).unwrap();
        schema.validate_attribute_vector(&attr).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("domain `{id}`: {msg}")),
            other => other,
        })?;
        let domain_samples = samples.remove(&id).ok_or_else(|| Error::UnknownDomain {
            id: id.clone(),
            context: "attributes.csv domain has no samples".into(),
        })?;
        domains.push(Domain {
            id,
            attributes: attr,
            samples: domain_samples,
        });
    }

    Ok(MultiDomainDataset { domains, d })
}

/// Writes the samples/attributes CSV pair. Floats are printed with the
/// shortest representation that parses back to the same value.
pub fn save_dataset(
    dataset: &MultiDomainDataset,
    samples_path: &Path,
    attributes_path: &Path,
) -> Result<()> {
    let m = dataset
        .domains
        .first()
        .map_or(0, |dom| dom.attributes.len());
    let mut attr_out = String::new();
    attr_out.push_str("domain_id");
    for j in 1..=m {
        attr_out.push_str(&format!(",a_{j}"));
    }
    attr_out.push('\n');
    for dom in &dataset.domains {
        attr_out.push_str(&dom.id);
        for v in &dom.attributes {
            attr_out.push_str(&format!(",{v}"));
        }
        attr_out.push('\n');
    }
    write_text(attributes_path, &attr_out)?;

    let mut sample_out = String::new();
    sample_out.push_str("domain_id");
    for j in 1..=dataset.d {
        sample_out.push_str(&format!(",x_{j}"));
    }
    sample_out.push_str(",y\n");
    for dom in &dataset.domains {
        for s in &dom.samples {
            sample_out.push_str(&dom.id);
            for v in &s.x {
                sample_out.push_str(&format!(",{v}"));
            }
            sample_out.push_str(&format!(",{}\n", s.y));
        }
    }
    write_text(samples_path, &sample_out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One-hot encodes a string-valued column. Levels are sorted for a stable
/// encoding; each row becomes a 0-1 indicator vector over the levels.
pub fn one_hot_encode(values: &[&str]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut levels: Vec<String> = values.iter().map(|s| s.to_string()).collect();
    levels.sort();
    levels.dedup();
    let rows = values
        .iter()
        .map(|v| {
            levels
                .iter()
                .map(|l| if l == v { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    (levels, rows)
}
