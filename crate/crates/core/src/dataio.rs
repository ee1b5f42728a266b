//! Flow-record datasets: CSV ingestion and cleaning, stratified partitioning
//! across nodes, and stratified train/test splits.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_LABEL_COLUMN: &str = "Label";

/// Which CSV columns feed the model and which one holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    feature_names: Vec<String>,
    label_column: String,
}

impl ColumnSchema {
    pub fn new(feature_names: Vec<String>, label_column: impl Into<String>) -> Result<Self> {
        let label_column = label_column.into();
        if feature_names.is_empty() {
            return Err(Error::InvalidArgument("schema needs at least one feature column".into()));
        }
        if feature_names
            .iter()
            .any(|f| f.trim().eq_ignore_ascii_case(label_column.trim()))
        {
            return Err(Error::InvalidArgument(format!(
                "label column `{label_column}` is also listed as a feature"
            )));
        }
        Ok(Self { feature_names, label_column })
    }

    /// A load-time request that selects every numeric non-label column.
    pub fn auto(label_column: impl Into<String>) -> Self {
        Self { feature_names: Vec::new(), label_column: label_column.into() }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_auto(&self) -> bool {
        self.feature_names.is_empty()
    }
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self::auto(DEFAULT_LABEL_COLUMN)
    }
}

/// Ordered mapping between class names and dense ids `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    /// Ids are assigned by position.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("label map is empty".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.trim().to_lowercase()) {
                return Err(Error::InvalidArgument(format!("duplicate class name `{n}`")));
            }
        }
        Ok(Self { names })
    }

    /// Builds a map from explicit `(name, id)` pairs; ids must cover `0..K`.
    pub fn from_entries<S: Into<String>>(entries: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut entries: Vec<(String, usize)> = entries.into_iter().map(|(n, i)| (n.into(), i)).collect();
        entries.sort_by_key(|e| e.1);
        for (expected, (name, id)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::InvalidArgument(format!(
                    "class ids must be exactly 0..K-1; `{name}` has id {id}, expected {expected}"
                )));
            }
        }
        Self::new(entries.into_iter().map(|e| e.0))
    }

    /// The seven CIC-IDS 2017 traffic classes with their confusion-matrix ids.
    pub fn cic_ids2017() -> Self {
        Self::new([
            "Benign",
            "Bot",
            "Brute Force",
            "DoS",
            "Infiltration",
            "Port Scan",
            "Web Attack",
        ])
        .expect("static label map is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// Case-insensitive lookup, ignoring surrounding whitespace.
    pub fn id_of(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.names
            .iter()
            .position(|n| n == name)
            .or_else(|| self.names.iter().position(|n| n.trim().eq_ignore_ascii_case(name)))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A labelled feature matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    schema: ColumnSchema,
    label_map: LabelMap,
}

impl Dataset {
    pub fn from_rows(
        schema: ColumnSchema,
        label_map: LabelMap,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let d = schema.n_features();
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} values, schema has {d} features",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::from_flat(schema, label_map, flat, labels)
    }

    pub fn from_flat(
        schema: ColumnSchema,
        label_map: LabelMap,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let d = schema.n_features();
        if d == 0 {
            return Err(Error::InvalidArgument("dataset schema has no features".into()));
        }
        if features.len() != labels.len() * d {
            return Err(Error::InvalidArgument(format!(
                "{} feature values do not form {} rows of {d}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature value {v}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= label_map.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside 0..{}",
                label_map.len()
            )));
        }
        Ok(Self { features, labels, schema, label_map })
    }

    pub fn empty(schema: ColumnSchema, label_map: LabelMap) -> Result<Self> {
        Self::from_flat(schema, label_map, Vec::new(), Vec::new())
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.n_features())
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    /// Row counts per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices grouped by class id, each group in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// The rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.n_features();
        let mut features = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { features, labels, schema: self.schema.clone(), label_map: self.label_map.clone() }
    }

    /// Appends rows that are known to satisfy the dataset invariants.
    pub(crate) fn push_row(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.n_features());
        debug_assert!(label < self.n_classes());
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    /// Concatenates datasets sharing one schema and label map.
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut out = first.clone();
        for p in &parts[1..] {
            if p.schema != first.schema || p.label_map != first.label_map {
                return Err(Error::InvalidArgument(
                    "cannot concatenate datasets with different schemas".into(),
                ));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

/// Train and test halves of a stratified split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// Row accounting for a CSV load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows with NaN, infinite or unparseable feature values.
    pub rows_nan_dropped: usize,
    pub rows_dup_dropped: usize,
}

impl LoadReport {
    pub fn rows_kept(&self) -> usize {
        self.rows_read - self.rows_nan_dropped - self.rows_dup_dropped
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows_read={}", self.rows_read)?;
        writeln!(f, "rows_nan_dropped={}", self.rows_nan_dropped)?;
        writeln!(f, "rows_dup_dropped={}", self.rows_dup_dropped)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema, label_map: &LabelMap) -> Result<Dataset> {
    load_csv_with_report(path, schema, label_map).map(|(d, _)| d)
}

pub fn load_csv_with_report(
    path: impl AsRef<Path>,
    schema: &ColumnSchema,
    label_map: &LabelMap,
) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(std::io::BufReader::new(file), schema, label_map)
}

fn parse_number(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok()
}

/// Reads and cleans a headed, comma-separated flow table.
///
/// Rows with any non-finite or unparseable feature are dropped, then exact
/// duplicates of an earlier `(features, label)` pair. Order is otherwise kept.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &ColumnSchema,
    label_map: &LabelMap,
) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let label_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(schema.label_column().trim()))
        .ok_or_else(|| Error::MissingColumn(schema.label_column().to_string()))?;

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    let feature_idx: Vec<usize> = if schema.is_auto() {
        (0..headers.len())
            .filter(|&c| c != label_idx)
            .filter(|&c| {
                records.iter().all(|r| {
                    let v = r.get(c).unwrap_or("").trim();
                    v.is_empty() || parse_number(v).is_some()
                })
            })
            .collect()
    } else {
        schema
            .feature_names()
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name.trim())
                    .ok_or_else(|| Error::MissingColumn(name.clone()))
            })
            .collect::<Result<_>>()?
    };
    if feature_idx.is_empty() {
        return Err(Error::MissingColumn("<any numeric feature>".into()));
    }
    let resolved = ColumnSchema::new(
        feature_idx.iter().map(|&c| headers[c].clone()).collect(),
        headers[label_idx].clone(),
    )?;

    let mut report = LoadReport { rows_read: records.len(), ..Default::default() };
    let mut features = Vec::with_capacity(records.len() * feature_idx.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut seen: HashSet<(Vec<u64>, usize)> = HashSet::with_capacity(records.len());
    let mut row = Vec::with_capacity(feature_idx.len());

    for rec in &records {
        let raw_label = rec.get(label_idx).unwrap_or("");
        let label = label_map
            .id_of(raw_label)
            .ok_or_else(|| Error::UnknownLabel(raw_label.trim().to_string()))?;

        row.clear();
        let clean = feature_idx.iter().all(|&c| match rec.get(c).and_then(parse_number) {
            Some(v) if v.is_finite() => {
                row.push(v);
                true
            }
            _ => false,
        });
        if !clean {
            report.rows_nan_dropped += 1;
            continue;
        }
        // -0.0 and 0.0 compare equal, so they must hash equal too.
        let key: Vec<u64> = row.iter().map(|&v| (v + 0.0).to_bits()).collect();
        if !seen.insert((key, label)) {
            report.rows_dup_dropped += 1;
            continue;
        }
        features.extend_from_slice(&row);
        labels.push(label);
    }

    if labels.is_empty() {
        return Err(Error::NoUsableRows);
    }
    let ds = Dataset::from_flat(resolved, label_map.clone(), features, labels)?;
    Ok((ds, report))
}

/// Sorted distinct labels found in the label column of the given CSV files.
pub fn discover_labels<P: AsRef<Path>>(paths: &[P], label_column: &str) -> Result<LabelMap> {
    let mut names = std::collections::BTreeSet::new();
    for path in paths {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
        let idx = rdr
            .headers()?
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(label_column.trim()))
            .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
        for rec in rdr.records() {
            let rec = rec?;
            let name = rec.get(idx).unwrap_or("").trim();
            if !name.is_empty() {
                names.insert(name.to_string());
            }
        }
    }
    if names.is_empty() {
        return Err(Error::NoUsableRows);
    }
    LabelMap::new(names)
}

/// Writes the dataset as CSV with class names in the label column. Values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.schema().feature_names().iter().map(String::as_str).collect();
    header.push(data.schema().label_column());
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (i, row) in data.rows().enumerate() {
        record.clear();
        record.extend(row.iter().map(|v| format!("{v:?}")));
        record.push(data.label_map().name(data.label(i)).unwrap_or_default().to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// Splits `data` into `n_parts` disjoint, class-stratified parts.
///
/// Each class is shuffled and dealt evenly. Leftover rows of a class go to
/// consecutive parts starting where the previous class's leftovers ended, so
/// part sizes also differ by at most one. A class with fewer than `n_parts`
/// rows fills parts `0..count`. Rows keep their original relative order.
pub fn partition(data: &Dataset, n_parts: usize, seed: u64) -> Result<Vec<Dataset>> {
    if n_parts < 2 {
        return Err(Error::InvalidArgument(format!("n_parts must be at least 2, got {n_parts}")));
    }
    if data.n_rows() < n_parts {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} rows into {n_parts} parts",
            data.n_rows()
        )));
    }
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_parts];
    let mut offset = 0;
    for (class, mut rows) in data.class_indices().into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[0x5041_5254, class as u64]);
        rows.shuffle(&mut rng);
        let n = rows.len();
        if n < n_parts {
            for (p, r) in rows.into_iter().enumerate() {
                assigned[p].push(r);
            }
            continue;
        }
        let base = n / n_parts;
        let extra = n % n_parts;
        let mut sizes = vec![base; n_parts];
        for j in 0..extra {
            sizes[(offset + j) % n_parts] += 1;
        }
        offset = (offset + extra) % n_parts;
        let mut it = rows.into_iter();
        for (p, &size) in sizes.iter().enumerate() {
            assigned[p].extend(it.by_ref().take(size));
        }
    }
    Ok(assigned
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            data.select(&idx)
        })
        .collect())
}

const EPS: f64 = 1e-9;

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + EPS).floor().max(0.0) as usize
}

/// Per-class train counts: the total is `round_half_up(fraction * N)`, spread
/// by largest remainder so every class is within one row of its exact share.
/// Single-row classes always go to train.
fn stratified_train_counts(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = round_half_up(fraction * total as f64);
    let mut train: Vec<usize> = counts
        .iter()
        .map(|&c| if c == 1 { 1 } else { ((fraction * c as f64) + EPS).floor() as usize })
        .collect();
    let assigned: usize = train.iter().sum();
    if target > assigned {
        let mut order: Vec<usize> = (0..counts.len())
            .filter(|&c| counts[c] > 1 && train[c] < counts[c])
            .collect();
        let rem = |c: usize| fraction * counts[c] as f64 - train[c] as f64;
        order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
        for &c in order.iter().take(target - assigned) {
            train[c] += 1;
        }
    }
    train
}

/// Stratified split of `data` into train and test sets.
pub fn train_test_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let groups = data.class_indices();
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    for (c, &n) in counts.iter().enumerate() {
        if n == 1 {
            log::info!("class {c} has a single row; it goes to the training split");
        }
    }
    let train_counts = stratified_train_counts(&counts, train_fraction);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut rows) in groups.into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[0x5350_4C54, class as u64]);
        rows.shuffle(&mut rng);
        let (tr, te) = rows.split_at(train_counts[class]);
        train_idx.extend_from_slice(tr);
        test_idx.extend_from_slice(te);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitPair { train: data.select(&train_idx), test: data.select(&test_idx) })
}

/// `(class_name, count)` for every class, ordered by id.
pub fn class_histogram(data: &Dataset) -> Vec<(String, usize)> {
    data.class_counts()
        .into_iter()
        .enumerate()
        .map(|(id, n)| (data.label_map().name(id).unwrap_or_default().to_string(), n))
        .collect()
}
