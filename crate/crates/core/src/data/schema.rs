//! Feature schema: ordered descriptors for continuous, categorical, and
//! checkbox-group columns, plus the label column.
//!
//! Schema files are JSON:
//!
//! ```json
//! {
//!   "label": "diagnosis",
//!   "features": [
//!     {"name": "age", "kind": "continuous"},
//!     {"name": "sex", "kind": "categorical", "categories": ["f", "m"]},
//!     {"name": "stage", "kind": "categorical", "cardinality": 4},
//!     {"name": "ancestry", "kind": "checkbox", "cardinality": 22}
//!   ]
//! }
//! ```
//!
//! Categorical features either name their categories (CSV cells then hold
//! those labels) or give a bare `cardinality` (cells hold indices 1..=K).
//! Checkbox groups occupy one CSV column per member option, named by
//! `members` or defaulting to `<name>.1 … <name>.C`.

use crate::error::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Continuous,
    /// Cell values are indices 1..=cardinality; 0 is reserved for missing.
    /// When `categories` is present, CSV cells hold these labels instead.
    Categorical { cardinality: usize, categories: Option<Vec<String>> },
    /// A group of binary member columns ingested as one feature.
    Checkbox { members: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn continuous(name: impl Into<String>) -> Self {
        Feature { name: name.into(), kind: FeatureKind::Continuous }
    }

    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Feature { name: name.into(), kind: FeatureKind::Categorical { cardinality, categories: None } }
    }

    pub fn checkbox(name: impl Into<String>, options: usize) -> Self {
        let name = name.into();
        let members = (1..=options).map(|k| format!("{name}.{k}")).collect();
        Feature { name, kind: FeatureKind::Checkbox { members } }
    }

    /// Number of distinct values (categorical), member options (checkbox),
    /// or 1 (continuous).
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            FeatureKind::Continuous => 1,
            FeatureKind::Categorical { cardinality, .. } => *cardinality,
            FeatureKind::Checkbox { members } => members.len(),
        }
    }
}

/// Validated, ordered description of a dataset's columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    label_column: String,
    features: Vec<Feature>,
    continuous: Vec<usize>,
    categorical: Vec<usize>,
    checkbox: Vec<usize>,
}

impl FeatureSchema {
    pub fn new(label_column: impl Into<String>, features: Vec<Feature>) -> Result<Self> {
        let label_column = label_column.into();
        if features.is_empty() {
            return Err(Error::Schema("feature list is empty".into()));
        }

        let mut column_names = HashSet::new();
        if !column_names.insert(label_column.clone()) || label_column.is_empty() {
            return Err(Error::Schema("label column name is empty".into()));
        }

        let mut continuous = Vec::new();
        let mut categorical = Vec::new();
        let mut checkbox = Vec::new();
        for (i, f) in features.iter().enumerate() {
            let at = format!("feature {} ('{}')", i + 1, f.name);
            if f.name.is_empty() {
                return Err(Error::Schema(format!("{at}: name is empty")));
            }
            if f.name == label_column {
                return Err(Error::Schema(format!(
                    "{at}: collides with label column '{label_column}'"
                )));
            }
            match &f.kind {
                FeatureKind::Continuous => {
                    if !column_names.insert(f.name.clone()) {
                        return Err(Error::Schema(format!("{at}: duplicate column name")));
                    }
                    continuous.push(i);
                }
                FeatureKind::Categorical { cardinality, categories } => {
                    if !column_names.insert(f.name.clone()) {
                        return Err(Error::Schema(format!("{at}: duplicate column name")));
                    }
                    if *cardinality < 2 {
                        return Err(Error::Schema(format!(
                            "{at}: categorical cardinality must be >= 2, got {cardinality}"
                        )));
                    }
                    if let Some(cats) = categories {
                        if cats.len() != *cardinality {
                            return Err(Error::Schema(format!(
                                "{at}: {} category labels for cardinality {cardinality}",
                                cats.len()
                            )));
                        }
                        let mut seen = HashSet::new();
                        for c in cats {
                            if c.is_empty() || c == "0" {
                                return Err(Error::Schema(format!(
                                    "{at}: category label '{c}' is reserved for missing"
                                )));
                            }
                            if !seen.insert(c) {
                                return Err(Error::Schema(format!(
                                    "{at}: duplicate category label '{c}'"
                                )));
                            }
                        }
                    }
                    categorical.push(i);
                }
                FeatureKind::Checkbox { members } => {
                    // Group name must be unique too: it names the feature in
                    // reports even though the CSV only carries member columns.
                    if !column_names.insert(f.name.clone()) {
                        return Err(Error::Schema(format!("{at}: duplicate column name")));
                    }
                    if members.len() < 2 {
                        return Err(Error::Schema(format!(
                            "{at}: checkbox group needs >= 2 member options, got {}",
                            members.len()
                        )));
                    }
                    for m in members {
                        if m.is_empty() {
                            return Err(Error::Schema(format!("{at}: empty member column name")));
                        }
                        if !column_names.insert(m.clone()) {
                            return Err(Error::Schema(format!(
                                "{at}: duplicate column name '{m}'"
                            )));
                        }
                    }
                    checkbox.push(i);
                }
            }
        }

        Ok(FeatureSchema { label_column, features, continuous, categorical, checkbox })
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &Feature {
        &self.features[i]
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Feature indices (into `features()`) by kind, in declaration order.
    pub fn continuous_features(&self) -> &[usize] {
        &self.continuous
    }

    pub fn categorical_features(&self) -> &[usize] {
        &self.categorical
    }

    pub fn checkbox_features(&self) -> &[usize] {
        &self.checkbox
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    pub fn n_checkbox(&self) -> usize {
        self.checkbox.len()
    }

    /// One token per feature, regardless of kind.
    pub fn n_tokens(&self) -> usize {
        self.features.len()
    }

    /// Member option count of the j-th checkbox feature.
    pub fn checkbox_options(&self, j: usize) -> usize {
        self.features[self.checkbox[j]].cardinality()
    }

    /// Cardinality of the j-th categorical feature.
    pub fn categorical_cardinality(&self, j: usize) -> usize {
        self.features[self.categorical[j]].cardinality()
    }

    /// Token names in model order: continuous, then checkbox, then
    /// categorical (the order embeddings are concatenated in).
    pub fn token_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.features.len());
        for &i in &self.continuous {
            names.push(self.features[i].name.clone());
        }
        for &i in &self.checkbox {
            names.push(self.features[i].name.clone());
        }
        for &i in &self.categorical {
            names.push(self.features[i].name.clone());
        }
        names
    }

    /// CSV column names: features in declaration order (checkbox groups
    /// expand to member columns), label last.
    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for f in &self.features {
            match &f.kind {
                FeatureKind::Checkbox { members } => cols.extend(members.iter().cloned()),
                _ => cols.push(f.name.clone()),
            }
        }
        cols.push(self.label_column.clone());
        cols
    }

    /// Maps a categorical cell string to its 1-based index.
    pub fn category_index(&self, feature: usize, cell: &str) -> Option<usize> {
        match &self.features[feature].kind {
            FeatureKind::Categorical { cardinality, categories } => {
                if let Some(cats) = categories {
                    cats.iter().position(|c| c == cell).map(|p| p + 1)
                } else {
                    match cell.parse::<usize>() {
                        Ok(v) if (1..=*cardinality).contains(&v) => Some(v),
                        _ => None,
                    }
                }
            }
            _ => None,
        }
    }

    /// Renders a 1-based categorical index back to its cell string.
    pub fn category_cell(&self, feature: usize, index: usize) -> String {
        match &self.features[feature].kind {
            FeatureKind::Categorical { categories: Some(cats), .. } => cats[index - 1].clone(),
            _ => index.to_string(),
        }
    }

    /// Hex digest of the canonical serialized form; changes iff the schema
    /// meaningfully changes.
    pub fn fingerprint(&self) -> String {
        let doc = serde_json::to_string(&self.to_doc()).expect("schema serializes");
        let mut hasher = Sha256::new();
        hasher.update(doc.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn to_doc(&self) -> SchemaDoc {
        SchemaDoc {
            label: self.label_column.clone(),
            features: self
                .features
                .iter()
                .map(|f| match &f.kind {
                    FeatureKind::Continuous => FeatureDoc {
                        name: f.name.clone(),
                        kind: KindDoc::Continuous,
                        cardinality: None,
                        categories: None,
                        members: None,
                    },
                    FeatureKind::Categorical { cardinality, categories } => FeatureDoc {
                        name: f.name.clone(),
                        kind: KindDoc::Categorical,
                        cardinality: Some(*cardinality),
                        categories: categories.clone(),
                        members: None,
                    },
                    FeatureKind::Checkbox { members } => FeatureDoc {
                        name: f.name.clone(),
                        kind: KindDoc::Checkbox,
                        cardinality: Some(members.len()),
                        categories: None,
                        members: Some(members.clone()),
                    },
                })
                .collect(),
        }
    }

    fn from_doc(doc: SchemaDoc) -> Result<Self> {
        let mut features = Vec::with_capacity(doc.features.len());
        for (i, fd) in doc.features.into_iter().enumerate() {
            let at = format!("feature {} ('{}')", i + 1, fd.name);
            let kind = match fd.kind {
                KindDoc::Continuous => {
                    if fd.cardinality.map_or(false, |c| c != 1) {
                        return Err(Error::Schema(format!(
                            "{at}: continuous features have cardinality 1"
                        )));
                    }
                    if fd.categories.is_some() || fd.members.is_some() {
                        return Err(Error::Schema(format!(
                            "{at}: continuous features take no categories or members"
                        )));
                    }
                    FeatureKind::Continuous
                }
                KindDoc::Categorical => {
                    if fd.members.is_some() {
                        return Err(Error::Schema(format!(
                            "{at}: categorical features take no members"
                        )));
                    }
                    let cardinality = match (&fd.categories, fd.cardinality) {
                        (Some(c), k) => {
                            if k.map_or(false, |k| k != c.len()) {
                                return Err(Error::Schema(format!(
                                    "{at}: cardinality {} disagrees with {} categories",
                                    k.unwrap(),
                                    c.len()
                                )));
                            }
                            c.len()
                        }
                        (None, Some(k)) => k,
                        (None, None) => {
                            return Err(Error::Schema(format!(
                                "{at}: categorical features need cardinality or categories"
                            )));
                        }
                    };
                    FeatureKind::Categorical { cardinality, categories: fd.categories }
                }
                KindDoc::Checkbox => {
                    if fd.categories.is_some() {
                        return Err(Error::Schema(format!(
                            "{at}: checkbox features take no categories"
                        )));
                    }
                    let members = match (fd.members, fd.cardinality) {
                        (Some(m), k) => {
                            if k.map_or(false, |k| k != m.len()) {
                                return Err(Error::Schema(format!(
                                    "{at}: cardinality {} disagrees with {} members",
                                    k.unwrap(),
                                    m.len()
                                )));
                            }
                            m
                        }
                        (None, Some(k)) => (1..=k).map(|j| format!("{}.{}", fd.name, j)).collect(),
                        (None, None) => {
                            return Err(Error::Schema(format!(
                                "{at}: checkbox features need cardinality or members"
                            )));
                        }
                    };
                    FeatureKind::Checkbox { members }
                }
            };
            features.push(Feature { name: fd.name, kind });
        }
        FeatureSchema::new(doc.label, features)
    }
}

/// Parses and validates a schema document.
///
/// Syntax problems and unknown kinds are reported with the line/column from
/// the JSON parser; structural problems name the offending feature.
pub fn parse_schema(text: &str) -> Result<FeatureSchema> {
    let doc: SchemaDoc =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    FeatureSchema::from_doc(doc)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    label: String,
    features: Vec<FeatureDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureDoc {
    name: String,
    kind: KindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum KindDoc {
    Continuous,
    Categorical,
    Checkbox,
}

impl Serialize for FeatureSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = SchemaDoc::deserialize(deserializer)?;
        FeatureSchema::from_doc(doc).map_err(serde::de::Error::custom)
    }
}
