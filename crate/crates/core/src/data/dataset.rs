//! In-memory tabular dataset with explicit missingness.
//!
//! Missing cells are representable in every modality: continuous cells carry
//! a mask bit (the stored value is 0 and never read while masked),
//! categorical cells use the reserved index 0, and checkbox groups carry a
//! per-feature flag (distinct from an explicit all-zeros "none apply" row).

use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// One sample in schema order, used to build datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    /// Per continuous feature; `None` = missing.
    pub cont: Vec<Option<f64>>,
    /// Per categorical feature, 1-based index; 0 = missing.
    pub cat: Vec<u32>,
    /// Per checkbox feature, member bits; `None` = whole group missing.
    pub checks: Vec<Option<Vec<u8>>>,
    pub label: u8,
}

/// Immutable dataset; transforms return new datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: FeatureSchema,
    n: usize,
    cont_values: Vec<f64>,
    cont_missing: Vec<bool>,
    cat_indices: Vec<u32>,
    check_values: Vec<u8>,
    check_missing: Vec<bool>,
    check_offsets: Vec<usize>,
    check_width: usize,
    labels: Vec<u8>,
}

impl TabularDataset {
    pub fn from_rows(schema: FeatureSchema, rows: Vec<SampleRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("no samples".into()));
        }
        let n = rows.len();
        let (nc, nk, ncb) = (schema.n_continuous(), schema.n_categorical(), schema.n_checkbox());
        let mut check_offsets = Vec::with_capacity(ncb);
        let mut check_width = 0;
        for j in 0..ncb {
            check_offsets.push(check_width);
            check_width += schema.checkbox_options(j);
        }

        let mut d = TabularDataset {
            schema,
            n,
            cont_values: Vec::with_capacity(n * nc),
            cont_missing: Vec::with_capacity(n * nc),
            cat_indices: Vec::with_capacity(n * nk),
            check_values: Vec::with_capacity(n * check_width),
            check_missing: Vec::with_capacity(n * ncb),
            check_offsets,
            check_width,
            labels: Vec::with_capacity(n),
        };

        for (i, row) in rows.into_iter().enumerate() {
            let at = format!("sample {i}");
            if row.cont.len() != nc || row.cat.len() != nk || row.checks.len() != ncb {
                return Err(Error::Dataset(format!(
                    "{at}: expected {nc} continuous / {nk} categorical / {ncb} checkbox values"
                )));
            }
            for v in &row.cont {
                match v {
                    Some(x) if !x.is_finite() => {
                        return Err(Error::Dataset(format!("{at}: non-finite continuous value")));
                    }
                    Some(x) => {
                        d.cont_values.push(*x);
                        d.cont_missing.push(false);
                    }
                    None => {
                        d.cont_values.push(0.0);
                        d.cont_missing.push(true);
                    }
                }
            }
            for (j, &c) in row.cat.iter().enumerate() {
                let card = d.schema.categorical_cardinality(j) as u32;
                if c > card {
                    return Err(Error::Dataset(format!(
                        "{at}: categorical index {c} exceeds cardinality {card}"
                    )));
                }
                d.cat_indices.push(c);
            }
            for (j, bits) in row.checks.iter().enumerate() {
                let width = d.schema.checkbox_options(j);
                match bits {
                    Some(b) => {
                        if b.len() != width {
                            return Err(Error::Dataset(format!(
                                "{at}: checkbox group {j} expected {width} bits, got {}",
                                b.len()
                            )));
                        }
                        if b.iter().any(|&v| v > 1) {
                            return Err(Error::Dataset(format!(
                                "{at}: checkbox bits must be 0 or 1"
                            )));
                        }
                        d.check_values.extend_from_slice(b);
                        d.check_missing.push(false);
                    }
                    None => {
                        d.check_values.extend(std::iter::repeat(0).take(width));
                        d.check_missing.push(true);
                    }
                }
            }
            if row.label > 1 {
                return Err(Error::Dataset(format!("{at}: label must be 0 or 1")));
            }
            d.labels.push(row.label);
        }
        Ok(d)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn positive_ratio(&self) -> f64 {
        self.positive_count() as f64 / self.n as f64
    }

    /// Value and missing flag of the j-th continuous feature.
    pub fn cont(&self, sample: usize, j: usize) -> (f64, bool) {
        let idx = sample * self.schema.n_continuous() + j;
        (self.cont_values[idx], self.cont_missing[idx])
    }

    /// 1-based index of the j-th categorical feature; 0 = missing.
    pub fn cat(&self, sample: usize, j: usize) -> u32 {
        self.cat_indices[sample * self.schema.n_categorical() + j]
    }

    /// Member bits of the j-th checkbox feature.
    pub fn check_bits(&self, sample: usize, j: usize) -> &[u8] {
        let width = self.schema.checkbox_options(j);
        let start = sample * self.check_width + self.check_offsets[j];
        &self.check_values[start..start + width]
    }

    pub fn check_missing(&self, sample: usize, j: usize) -> bool {
        self.check_missing[sample * self.schema.n_checkbox() + j]
    }

    pub fn has_missing(&self, sample: usize) -> bool {
        let nc = self.schema.n_continuous();
        let nk = self.schema.n_categorical();
        let ncb = self.schema.n_checkbox();
        self.cont_missing[sample * nc..(sample + 1) * nc].iter().any(|&m| m)
            || self.cat_indices[sample * nk..(sample + 1) * nk].iter().any(|&c| c == 0)
            || self.check_missing[sample * ncb..(sample + 1) * ncb].iter().any(|&m| m)
    }

    fn row(&self, i: usize) -> SampleRow {
        SampleRow {
            cont: (0..self.schema.n_continuous())
                .map(|j| {
                    let (v, missing) = self.cont(i, j);
                    if missing {
                        None
                    } else {
                        Some(v)
                    }
                })
                .collect(),
            cat: (0..self.schema.n_categorical()).map(|j| self.cat(i, j)).collect(),
            checks: (0..self.schema.n_checkbox())
                .map(|j| {
                    if self.check_missing(i, j) {
                        None
                    } else {
                        Some(self.check_bits(i, j).to_vec())
                    }
                })
                .collect(),
            label: self.labels[i],
        }
    }

    /// New dataset holding the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::Dataset(format!(
                "subset index {bad} out of range for {} samples",
                self.n
            )));
        }
        let rows = indices.iter().map(|&i| self.row(i)).collect();
        TabularDataset::from_rows(self.schema.clone(), rows)
    }

    /// Per-column mean and population standard deviation over non-missing
    /// cells. Columns with no data get mean 0; columns with zero variance
    /// (or no data) get std 1.
    pub fn standardize_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let nc = self.schema.n_continuous();
        let mut means = vec![0.0; nc];
        let mut stds = vec![1.0; nc];
        for j in 0..nc {
            let mut count = 0usize;
            let mut sum = 0.0;
            for i in 0..self.n {
                let (v, missing) = self.cont(i, j);
                if !missing {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let mean = sum / count as f64;
            let mut ss = 0.0;
            for i in 0..self.n {
                let (v, missing) = self.cont(i, j);
                if !missing {
                    ss += (v - mean) * (v - mean);
                }
            }
            let var = ss / count as f64;
            means[j] = mean;
            if var > 0.0 {
                stds[j] = var.sqrt();
            }
        }
        (means, stds)
    }

    /// Replaces non-missing continuous values by (v - mean) / std. Missing
    /// cells stay 0. Statistics usually come from the training split.
    pub fn apply_standardization(&self, means: &[f64], stds: &[f64]) -> Result<Self> {
        let nc = self.schema.n_continuous();
        if means.len() != nc || stds.len() != nc {
            return Err(Error::Dataset(format!(
                "expected {nc} means/stds, got {}/{}",
                means.len(),
                stds.len()
            )));
        }
        if stds.iter().any(|&s| s <= 0.0) {
            return Err(Error::Dataset("standardization stds must be positive".into()));
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..nc {
                let idx = i * nc + j;
                if !out.cont_missing[idx] {
                    out.cont_values[idx] = (out.cont_values[idx] - means[j]) / stds[j];
                }
            }
        }
        Ok(out)
    }

    /// Per-column minimum over non-missing cells; 0 for columns with no data.
    pub fn continuous_mins(&self) -> Vec<f64> {
        let nc = self.schema.n_continuous();
        let mut mins = vec![0.0; nc];
        for j in 0..nc {
            let mut min = f64::INFINITY;
            for i in 0..self.n {
                let (v, missing) = self.cont(i, j);
                if !missing {
                    min = min.min(v);
                }
            }
            if min.is_finite() {
                mins[j] = min;
            }
        }
        mins
    }

    /// Shifts non-missing continuous values to v - min, clamped at 0 so that
    /// data outside the range the minima came from cannot go negative.
    pub fn shift_continuous(&self, mins: &[f64]) -> Result<Self> {
        let nc = self.schema.n_continuous();
        if mins.len() != nc {
            return Err(Error::Dataset(format!("expected {nc} minima, got {}", mins.len())));
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..nc {
                let idx = i * nc + j;
                if !out.cont_missing[idx] {
                    out.cont_values[idx] = (out.cont_values[idx] - mins[j]).max(0.0);
                }
            }
        }
        Ok(out)
    }

    /// Masks exactly round(ratio * samples * features) feature cells, chosen
    /// uniformly without replacement. A checkbox group counts as one cell.
    /// Labels are untouched.
    pub fn simulate_missing(&self, ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Parameter(format!(
                "missing ratio must be in [0, 1], got {ratio}"
            )));
        }
        let n_features = self.schema.n_features();
        let total = self.n * n_features;
        let k = (ratio * total as f64).round() as usize;
        let mut out = self.clone();
        if k == 0 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = rand::seq::index::sample(&mut rng, total, k);
        let nc = self.schema.n_continuous();
        let nk = self.schema.n_categorical();
        // Map flat feature positions back to kind-local column indices.
        let mut kind_slot = Vec::with_capacity(n_features);
        let (mut ci, mut ki, mut bi) = (0usize, 0usize, 0usize);
        for f in self.schema.features() {
            match f.kind {
                FeatureKind::Continuous => {
                    kind_slot.push((0u8, ci));
                    ci += 1;
                }
                FeatureKind::Categorical { .. } => {
                    kind_slot.push((1u8, ki));
                    ki += 1;
                }
                FeatureKind::Checkbox { .. } => {
                    kind_slot.push((2u8, bi));
                    bi += 1;
                }
            }
        }
        for cell in chosen.iter() {
            let sample = cell / n_features;
            let feature = cell % n_features;
            match kind_slot[feature] {
                (0, j) => {
                    out.cont_values[sample * nc + j] = 0.0;
                    out.cont_missing[sample * nc + j] = true;
                }
                (1, j) => {
                    out.cat_indices[sample * nk + j] = 0;
                }
                (_, j) => {
                    out.check_missing[sample * self.schema.n_checkbox() + j] = true;
                    let width = self.schema.checkbox_options(j);
                    let start = sample * self.check_width + self.check_offsets[j];
                    out.check_values[start..start + width].fill(0);
                }
            }
        }
        Ok(out)
    }

    /// Keeps only samples with no missing cell in any feature.
    pub fn drop_incomplete(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n).filter(|&i| !self.has_missing(i)).collect();
        if keep.is_empty() {
            return Err(Error::Dataset("every sample has at least one missing value".into()));
        }
        self.subset(&keep)
    }

    /// Design-matrix encoding for models that take a flat vector: continuous
    /// values as stored (missing = 0), a one-hot block per categorical
    /// feature (missing = all zeros), raw checkbox bits (missing = all
    /// zeros), in that order.
    pub fn one_hot_encode(&self) -> DesignMatrix {
        let nc = self.schema.n_continuous();
        let cat_cols: usize =
            (0..self.schema.n_categorical()).map(|j| self.schema.categorical_cardinality(j)).sum();
        let cols = nc + cat_cols + self.check_width;
        let mut values = vec![0.0; self.n * cols];
        for i in 0..self.n {
            let row = &mut values[i * cols..(i + 1) * cols];
            for j in 0..nc {
                let (v, missing) = self.cont(i, j);
                row[j] = if missing { 0.0 } else { v };
            }
            let mut offset = nc;
            for j in 0..self.schema.n_categorical() {
                let card = self.schema.categorical_cardinality(j);
                let c = self.cat(i, j);
                if c > 0 {
                    row[offset + (c as usize - 1)] = 1.0;
                }
                offset += card;
            }
            for j in 0..self.schema.n_checkbox() {
                for (k, &b) in self.check_bits(i, j).iter().enumerate() {
                    row[offset + k] = b as f64;
                }
                offset += self.schema.checkbox_options(j);
            }
        }
        DesignMatrix { rows: self.n, cols, values }
    }

    /// Column names matching [`one_hot_encode`](Self::one_hot_encode) output.
    pub fn design_column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for &f in self.schema.continuous_features() {
            names.push(self.schema.feature(f).name.clone());
        }
        for &f in self.schema.categorical_features() {
            let feat = self.schema.feature(f);
            for k in 1..=feat.cardinality() {
                names.push(format!("{}={}", feat.name, self.schema.category_cell(f, k)));
            }
        }
        for &f in self.schema.checkbox_features() {
            if let FeatureKind::Checkbox { members } = &self.schema.feature(f).kind {
                names.extend(members.iter().cloned());
            }
        }
        names
    }

    /// Rewrites every checkbox group as per-member binary categorical
    /// features (1 = unchecked, 2 = checked, 0 = group missing), leaving
    /// other features alone. Used to train without dedicated checkbox
    /// embeddings.
    pub fn expand_checkboxes(&self) -> Result<Self> {
        if self.schema.n_checkbox() == 0 {
            return Ok(self.clone());
        }
        let mut features = Vec::new();
        for f in self.schema.features() {
            match &f.kind {
                FeatureKind::Checkbox { members } => {
                    for m in members {
                        features.push(super::schema::Feature::categorical(m.clone(), 2));
                    }
                }
                _ => features.push(f.clone()),
            }
        }
        let schema = FeatureSchema::new(self.schema.label_column(), features)?;
        let rows = (0..self.n)
            .map(|i| {
                let old = self.row(i);
                let mut cat = Vec::new();
                let mut check_cursor = 0;
                // Interleave in declaration order so new categorical columns
                // land where the checkbox group was.
                let mut old_cat = old.cat.iter();
                for f in self.schema.features() {
                    match f.kind {
                        FeatureKind::Categorical { .. } => cat.push(*old_cat.next().unwrap()),
                        FeatureKind::Checkbox { .. } => {
                            match &old.checks[check_cursor] {
                                Some(bits) => cat.extend(bits.iter().map(|&b| b as u32 + 1)),
                                None => cat.extend(std::iter::repeat(0).take(
                                    self.schema.checkbox_options(check_cursor),
                                )),
                            }
                            check_cursor += 1;
                        }
                        FeatureKind::Continuous => {}
                    }
                }
                SampleRow { cont: old.cont, cat, checks: Vec::new(), label: old.label }
            })
            .collect();
        TabularDataset::from_rows(schema, rows)
    }

    // ── CSV ─────────────────────────────────────────────────────────────

    /// Reads a CSV whose header equals `schema.csv_header()`. Empty cells
    /// are missing; a checkbox group is missing iff all its member cells are
    /// empty.
    pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file, schema)
    }

    pub fn from_csv_reader(reader: impl Read, schema: &FeatureSchema) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = csv
            .headers()
            .map_err(|e| Error::Ingestion(format!("bad header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let expected = schema.csv_header();
        if header != expected {
            return Err(Error::Ingestion(format!(
                "header {header:?} does not match schema columns {expected:?}"
            )));
        }

        let mut rows = Vec::new();
        for (ri, record) in csv.records().enumerate() {
            let record = record.map_err(|e| Error::Ingestion(format!("row {}: {e}", ri + 2)))?;
            let line = record.position().map_or(ri as u64 + 2, |p| p.line());
            if record.len() != expected.len() {
                return Err(Error::Ingestion(format!(
                    "line {line}: expected {} cells, got {}",
                    expected.len(),
                    record.len()
                )));
            }
            let mut cells = record.iter();
            let mut cont = Vec::with_capacity(schema.n_continuous());
            let mut cat = Vec::with_capacity(schema.n_categorical());
            let mut checks = Vec::with_capacity(schema.n_checkbox());
            for (fi, f) in schema.features().iter().enumerate() {
                match &f.kind {
                    FeatureKind::Continuous => {
                        let cell = cells.next().unwrap().trim();
                        if cell.is_empty() {
                            cont.push(None);
                        } else {
                            let v = cell.parse::<f64>().map_err(|_| {
                                Error::Ingestion(format!(
                                    "line {line}, column '{}': '{cell}' is not numeric",
                                    f.name
                                ))
                            })?;
                            cont.push(Some(v));
                        }
                    }
                    FeatureKind::Categorical { .. } => {
                        let cell = cells.next().unwrap().trim();
                        if cell.is_empty() || cell == "0" {
                            cat.push(0);
                        } else {
                            match schema.category_index(fi, cell) {
                                Some(idx) => cat.push(idx as u32),
                                None => {
                                    return Err(Error::Ingestion(format!(
                                        "line {line}, column '{}': unknown category '{cell}'",
                                        f.name
                                    )));
                                }
                            }
                        }
                    }
                    FeatureKind::Checkbox { members } => {
                        let mut bits = Vec::with_capacity(members.len());
                        let mut any_present = false;
                        for m in members {
                            let cell = cells.next().unwrap().trim();
                            if cell.is_empty() {
                                bits.push(0);
                            } else {
                                any_present = true;
                                match cell {
                                    "0" => bits.push(0),
                                    "1" => bits.push(1),
                                    other => {
                                        return Err(Error::Ingestion(format!(
                                            "line {line}, column '{m}': checkbox cell '{other}' \
                                             must be 0 or 1"
                                        )));
                                    }
                                }
                            }
                        }
                        checks.push(if any_present { Some(bits) } else { None });
                    }
                }
            }
            let label_cell = cells.next().unwrap().trim();
            let label = match label_cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Ingestion(format!(
                        "line {line}, column '{}': label '{other}' must be 0 or 1",
                        schema.label_column()
                    )));
                }
            };
            rows.push(SampleRow { cont, cat, checks, label });
        }
        TabularDataset::from_rows(schema.clone(), rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(self.schema.csv_header())
            .map_err(|e| Error::Ingestion(format!("write header: {e}")))?;
        for i in 0..self.n {
            let mut record: Vec<String> = Vec::new();
            let (mut ci, mut ki, mut bi) = (0usize, 0usize, 0usize);
            for f in self.schema.features() {
                match &f.kind {
                    FeatureKind::Continuous => {
                        let (v, missing) = self.cont(i, ci);
                        record.push(if missing { String::new() } else { format!("{v}") });
                        ci += 1;
                    }
                    FeatureKind::Categorical { .. } => {
                        let c = self.cat(i, ki);
                        let fi = self.schema.categorical_features()[ki];
                        record.push(if c == 0 {
                            String::new()
                        } else {
                            self.schema.category_cell(fi, c as usize)
                        });
                        ki += 1;
                    }
                    FeatureKind::Checkbox { members } => {
                        if self.check_missing(i, bi) {
                            record.extend(std::iter::repeat(String::new()).take(members.len()));
                        } else {
                            record.extend(self.check_bits(i, bi).iter().map(|b| b.to_string()));
                        }
                        bi += 1;
                    }
                }
            }
            record.push(self.labels[i].to_string());
            csv.write_record(&record)
                .map_err(|e| Error::Ingestion(format!("write row {i}: {e}")))?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf).expect("in-memory CSV write");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

/// Row-major (rows, cols) matrix from [`TabularDataset::one_hot_encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DesignMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}
