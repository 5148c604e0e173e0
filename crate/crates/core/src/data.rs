//! Tabular data loading, encoding, discretization and splitting.
//!
//! Datasets are stored column-major. Categorical columns hold dense codes
//! into a per-feature vocabulary built in first-appearance order; columns
//! whose cells all parse as finite reals are kept as raw values until they
//! are discretized (or demoted to categorical when they have too few
//! distinct values to be worth binning).
//!
//! A missing cell is an ordinary value: in a categorical column the missing
//! token gets its own vocabulary code, and a discretized column reserves
//! the code after the last bin for it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::streams::derive_rng;
use crate::Real;

/// Code assigned at prediction time to raw values never seen in training.
/// Any projected tuple containing it is unseen, so every class's exact test
/// on that subspace reports no evidence (p = 1).
pub const UNSEEN_CODE: u32 = u32::MAX;

/// Literal label naming the reject/outlier class in truth files and
/// prediction output.
pub const REJECT_TOKEN: &str = "__REJECT__";

/// Separator joining multiple labels in one truth cell.
pub const LABEL_SEPARATOR: char = '|';

/// A class label or the reserved reject/outlier sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Class(u32),
    Reject,
}

impl Label {
    pub fn class_index(&self) -> Option<u32> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Reject => None,
        }
    }
}

/// Non-empty, sorted, duplicate-free set of labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet(Vec<Label>);

impl LabelSet {
    pub fn new(mut labels: Vec<Label>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("label set must not be empty"));
        }
        labels.sort();
        labels.dedup();
        Ok(LabelSet(labels))
    }

    pub fn singleton(label: Label) -> Self {
        LabelSet(vec![label])
    }

    pub fn reject() -> Self {
        LabelSet(vec![Label::Reject])
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, label: Label) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    /// The single class index, if this is a one-class set.
    pub fn as_single_class(&self) -> Option<u32> {
        match self.0.as_slice() {
            [Label::Class(c)] => Some(*c),
            _ => None,
        }
    }
}

/// How a feature column is interpreted.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// Vocabulary in code order.
    Categorical { values: Vec<String> },
    /// Raw real values; binned by a fitted [`Discretizer`].
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInfo {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureInfo {
    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous)
    }
}

/// Feature and label vocabularies of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    features: Vec<FeatureInfo>,
    labels: Vec<String>,
    label_column: String,
    missing_token: String,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureInfo>,
        labels: Vec<String>,
        label_column: String,
        missing_token: String,
    ) -> Self {
        FeatureSchema {
            features,
            labels,
            label_column,
            missing_token,
        }
    }

    /// Number of features `d`.
    pub fn d(&self) -> usize {
        self.features.len()
    }

    /// Number of classes `k`.
    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    pub fn features(&self) -> &[FeatureInfo] {
        &self.features
    }

    pub fn feature(&self, idx: usize) -> &FeatureInfo {
        &self.features[idx]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn missing_token(&self) -> &str {
        &self.missing_token
    }

    pub fn label_name(&self, label: Label) -> &str {
        match label {
            Label::Class(c) => &self.labels[c as usize],
            Label::Reject => REJECT_TOKEN,
        }
    }

    pub fn class_index(&self, name: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == name).map(|i| i as u32)
    }

    /// Parse a truth cell ("a", "a|b", or the reject token) against this
    /// schema's label vocabulary. Unknown labels are an error.
    pub fn parse_label_set(&self, cell: &str) -> Result<LabelSet> {
        let mut labels = Vec::new();
        for part in cell.split(LABEL_SEPARATOR) {
            if part.is_empty() {
                return Err(Error::data(format!("empty label in cell {cell:?}")));
            }
            if part == REJECT_TOKEN {
                labels.push(Label::Reject);
            } else {
                let idx = self.class_index(part).ok_or_else(|| {
                    Error::data(format!("unknown label {part:?} (not in training vocabulary)"))
                })?;
                labels.push(Label::Class(idx));
            }
        }
        LabelSet::new(labels)
    }

    /// Vocabulary code of a raw categorical value, if seen in training.
    pub fn vocab_code(&self, feature: usize, raw: &str) -> Option<u32> {
        match &self.features[feature].kind {
            FeatureKind::Categorical { values } => {
                values.iter().position(|v| v == raw).map(|i| i as u32)
            }
            FeatureKind::Continuous => None,
        }
    }
}

/// One feature column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Codes(Vec<u32>),
    /// `None` marks a missing cell.
    Values(Vec<Option<Real>>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Codes(v) => v.len(),
            Column::Values(v) => v.len(),
        }
    }
}

/// Encoded samples plus their label sets (singletons for training data).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    labels: Vec<LabelSet>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, labels: Vec<LabelSet>) -> Result<Self> {
        for (i, col) in columns.iter().enumerate() {
            if col.len() != labels.len() {
                return Err(Error::data(format!(
                    "column {i} has {} cells but there are {} labels",
                    col.len(),
                    labels.len()
                )));
            }
        }
        Ok(Dataset { columns, labels })
    }

    /// Build a fully categorical dataset from row-major codes.
    pub fn from_code_rows(rows: &[Vec<u32>], labels: Vec<LabelSet>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::data("rows have inconsistent widths"));
        }
        let columns = (0..d)
            .map(|j| Column::Codes(rows.iter().map(|r| r[j]).collect()))
            .collect();
        Dataset::new(columns, labels)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn label(&self, row: usize) -> &LabelSet {
        &self.labels[row]
    }

    pub fn labels(&self) -> &[LabelSet] {
        &self.labels
    }

    pub fn set_label(&mut self, row: usize, label: LabelSet) {
        self.labels[row] = label;
    }

    /// The single class of a training row; multi-label or reject rows are
    /// rejected.
    pub fn single_class(&self, row: usize) -> Result<u32> {
        self.labels[row].as_single_class().ok_or_else(|| {
            Error::data(format!(
                "row {row} does not carry exactly one class label (training data must)"
            ))
        })
    }

    pub fn is_fully_categorical(&self) -> bool {
        self.columns.iter().all(|c| matches!(c, Column::Codes(_)))
    }

    /// Code at (row, feature); the column must be categorical.
    pub fn code(&self, row: usize, feature: usize) -> u32 {
        match &self.columns[feature] {
            Column::Codes(v) => v[row],
            Column::Values(_) => panic!("feature {feature} is not categorical yet"),
        }
    }

    pub fn code_column(&self, feature: usize) -> &[u32] {
        match &self.columns[feature] {
            Column::Codes(v) => v,
            Column::Values(_) => panic!("feature {feature} is not categorical yet"),
        }
    }

    /// Per-class sample counts; requires single-class labels.
    pub fn class_counts(&self, k: usize) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; k];
        for row in 0..self.n() {
            let c = self.single_class(row)? as usize;
            if c >= k {
                return Err(Error::data(format!("row {row} references class {c} >= k={k}")));
            }
            counts[c] += 1;
        }
        Ok(counts)
    }

    /// New dataset containing the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                Column::Codes(v) => Column::Codes(rows.iter().map(|&i| v[i]).collect()),
                Column::Values(v) => Column::Values(rows.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        let labels = rows.iter().map(|&i| self.labels[i].clone()).collect();
        Dataset { columns, labels }
    }
}

/// Which columns a load-time kind override applies to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum ColumnSpec {
    #[default]
    None,
    All,
    Named(Vec<String>),
}

impl ColumnSpec {
    fn matches(&self, name: &str) -> bool {
        match self {
            ColumnSpec::None => false,
            ColumnSpec::All => true,
            ColumnSpec::Named(names) => names.iter().any(|n| n == name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Label column name; `None` selects the last column.
    pub label_column: Option<String>,
    pub missing_token: String,
    /// Force these columns categorical even if every cell parses as a real.
    pub force_categorical: ColumnSpec,
    /// Force these columns continuous; unparsable cells become an error.
    pub force_continuous: ColumnSpec,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            label_column: None,
            missing_token: "?".to_string(),
            force_categorical: ColumnSpec::None,
            force_continuous: ColumnSpec::None,
        }
    }
}

fn csv_error(path: &Path, err: &csv::Error) -> Error {
    let line = err.position().map_or(0, csv::Position::line);
    Error::Csv {
        path: path.display().to_string(),
        line,
        msg: match err.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                format!("row has {len} fields, header has {expected_len}")
            }
            other => format!("{other:?}"),
        },
    }
}

/// Load an RFC-4180-style CSV with a mandatory header row.
///
/// The label column is selected by name (or defaults to the last column);
/// its cells may hold several labels joined by `|`, and the literal
/// `__REJECT__` names the outlier class. Feature columns whose non-missing
/// cells all parse as finite reals are kept continuous; everything else is
/// vocabulary-encoded in first-appearance order, with the missing token as
/// an ordinary vocabulary entry.
pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<(Dataset, FeatureSchema)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: {e}", path.display()),
            )),
            _ => csv_error(path, &e),
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line: 1,
            msg: "empty file or missing header row".to_string(),
        });
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: 1,
                msg: format!("duplicate column name {h:?}"),
            });
        }
    }

    let label_pos = match &opts.label_column {
        Some(name) => headers.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
            path: path.display().to_string(),
            line: 1,
            msg: format!("label column {name:?} not found in header"),
        })?,
        None => headers.len() - 1,
    };

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_pos)
        .map(|(_, h)| h.clone())
        .collect();
    let d = feature_names.len();

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); d];
    let mut label_cells: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let mut j = 0;
        for (i, field) in record.iter().enumerate() {
            if i == label_pos {
                label_cells.push(field.to_string());
            } else {
                cells[j].push(field.to_string());
                j += 1;
            }
        }
    }
    if label_cells.is_empty() {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line: 1,
            msg: "no data rows".to_string(),
        });
    }

    // Label vocabulary, first-appearance order over non-reject components.
    let mut label_vocab: Vec<String> = Vec::new();
    for cell in &label_cells {
        for part in cell.split(LABEL_SEPARATOR) {
            if part != REJECT_TOKEN && !label_vocab.iter().any(|l| l == part) {
                label_vocab.push(part.to_string());
            }
        }
    }

    let mut labels = Vec::with_capacity(label_cells.len());
    for (row, cell) in label_cells.iter().enumerate() {
        let mut set = Vec::new();
        for part in cell.split(LABEL_SEPARATOR) {
            if part.is_empty() {
                return Err(Error::Csv {
                    path: path.display().to_string(),
                    line: row as u64 + 2,
                    msg: format!("empty label in cell {cell:?}"),
                });
            }
            if part == REJECT_TOKEN {
                set.push(Label::Reject);
            } else {
                let idx = label_vocab.iter().position(|l| l == part).unwrap() as u32;
                set.push(Label::Class(idx));
            }
        }
        labels.push(LabelSet::new(set)?);
    }

    let mut features = Vec::with_capacity(d);
    let mut columns = Vec::with_capacity(d);
    for (j, name) in feature_names.iter().enumerate() {
        let forced_cat = opts.force_categorical.matches(name);
        let forced_cont = opts.force_continuous.matches(name);
        if forced_cat && forced_cont {
            return Err(Error::Config(format!(
                "column {name:?} forced both categorical and continuous"
            )));
        }

        let parsed: Vec<Option<Real>> = cells[j]
            .iter()
            .map(|cell| {
                if cell == &opts.missing_token {
                    None
                } else {
                    cell.parse::<Real>().ok().filter(|v| v.is_finite())
                }
            })
            .collect();
        let all_numeric = cells[j]
            .iter()
            .zip(&parsed)
            .all(|(cell, p)| cell == &opts.missing_token || p.is_some());
        let any_value = parsed.iter().any(Option::is_some);

        if forced_cont && !all_numeric {
            let row = cells[j]
                .iter()
                .zip(&parsed)
                .position(|(cell, p)| cell != &opts.missing_token && p.is_none())
                .unwrap();
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: row as u64 + 2,
                msg: format!(
                    "column {name:?} forced continuous but cell {:?} is not a finite real",
                    cells[j][row]
                ),
            });
        }

        let continuous = !forced_cat && all_numeric && any_value;
        if continuous {
            features.push(FeatureInfo {
                name: name.clone(),
                kind: FeatureKind::Continuous,
            });
            columns.push(Column::Values(parsed));
        } else {
            let mut vocab: Vec<String> = Vec::new();
            let codes = cells[j]
                .iter()
                .map(|cell| match vocab.iter().position(|v| v == cell) {
                    Some(code) => code as u32,
                    None => {
                        vocab.push(cell.clone());
                        (vocab.len() - 1) as u32
                    }
                })
                .collect();
            features.push(FeatureInfo {
                name: name.clone(),
                kind: FeatureKind::Categorical { values: vocab },
            });
            columns.push(Column::Codes(codes));
        }
    }

    let schema = FeatureSchema::new(
        features,
        label_vocab,
        headers[label_pos].clone(),
        opts.missing_token.clone(),
    );
    Ok((Dataset::new(columns, labels)?, schema))
}

/// Convert continuous columns with at most `bins` distinct non-missing
/// values back to categorical (their values are codes, not measurements).
/// Returns the names of the demoted columns.
pub fn demote_small_continuous(
    dataset: &mut Dataset,
    schema: &mut FeatureSchema,
    bins: usize,
) -> Vec<String> {
    let mut demoted = Vec::new();
    for j in 0..schema.d() {
        if !schema.features[j].is_continuous() {
            continue;
        }
        let values = match &dataset.columns[j] {
            Column::Values(v) => v,
            Column::Codes(_) => continue,
        };
        let mut distinct: Vec<Real> = values.iter().filter_map(|v| *v).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        if distinct.len() > bins {
            continue;
        }
        let mut vocab: Vec<String> = Vec::new();
        let codes = values
            .iter()
            .map(|v| {
                let text = match v {
                    Some(x) => format!("{x}"),
                    None => schema.missing_token.clone(),
                };
                match vocab.iter().position(|s| *s == text) {
                    Some(code) => code as u32,
                    None => {
                        vocab.push(text);
                        (vocab.len() - 1) as u32
                    }
                }
            })
            .collect();
        dataset.columns[j] = Column::Codes(codes);
        schema.features[j].kind = FeatureKind::Categorical { values: vocab };
        demoted.push(schema.features[j].name.clone());
    }
    demoted
}

/// Per-feature 1-D k-means bin centers for continuous features.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    /// Aligned with the schema's features; `None` for categorical columns.
    centers: Vec<Option<Vec<Real>>>,
}

impl Discretizer {
    /// No-op discretizer (no continuous features).
    pub fn identity(d: usize) -> Self {
        Discretizer {
            centers: vec![None; d],
        }
    }

    pub fn from_centers(centers: Vec<Option<Vec<Real>>>) -> Self {
        Discretizer { centers }
    }

    pub fn d(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self, feature: usize) -> Option<&[Real]> {
        self.centers[feature].as_deref()
    }

    pub fn is_identity(&self) -> bool {
        self.centers.iter().all(Option::is_none)
    }

    /// Code reserved for a missing cell in this feature's bin space.
    pub fn missing_code(&self, feature: usize) -> u32 {
        self.centers[feature]
            .as_ref()
            .map_or(0, |c| c.len() as u32)
    }

    /// Nearest-center bin; equidistant values go to the lower-index center.
    pub fn bin(centers: &[Real], value: Real) -> u32 {
        let mut lo = 0usize;
        let mut hi = centers.len().saturating_sub(1);
        while lo < hi {
            // value strictly right of midpoint(mid, mid+1) -> upper half.
            let mid = lo + (hi - lo) / 2;
            let midpoint = (centers[mid] + centers[mid + 1]) / 2.0;
            if value > midpoint {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo as u32
    }
}

fn assignment_of(distinct: &[Real], centers: &[Real]) -> Vec<usize> {
    distinct
        .iter()
        .map(|&v| Discretizer::bin(centers, v) as usize)
        .collect()
}

/// Lloyd's algorithm on the weighted distinct values of one column:
/// quantile initialization, at most 100 iterations, empty clusters reseeded
/// at the point farthest from its own center.
fn kmeans_1d(distinct: &[Real], weights: &[u64], bins: usize) -> Vec<Real> {
    let u = distinct.len();
    debug_assert!(u >= 1 && bins >= 1 && bins <= u);
    if bins == 1 {
        let total: Real = weights.iter().map(|&w| w as Real).sum();
        let mean = distinct
            .iter()
            .zip(weights)
            .map(|(&v, &w)| v * w as Real)
            .sum::<Real>()
            / total;
        return vec![mean];
    }
    if bins == u {
        return distinct.to_vec();
    }

    let mut centers: Vec<Real> = (0..bins)
        .map(|i| distinct[((i as Real) * ((u - 1) as Real) / ((bins - 1) as Real)).round() as usize])
        .collect();

    let mut assignment = assignment_of(distinct, &centers);
    for _ in 0..100 {
        loop {
            let mut counts = vec![0u64; bins];
            for (&a, &w) in assignment.iter().zip(weights) {
                counts[a] += w;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let farthest = (0..u)
                .max_by(|&i, &j| {
                    let di = (distinct[i] - centers[assignment[i]]).abs();
                    let dj = (distinct[j] - centers[assignment[j]]).abs();
                    di.partial_cmp(&dj).unwrap()
                })
                .unwrap();
            centers[empty] = distinct[farthest];
            centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assignment = assignment_of(distinct, &centers);
        }

        let mut sums = vec![0.0; bins];
        let mut totals = vec![0.0; bins];
        for ((&v, &w), &a) in distinct.iter().zip(weights).zip(&assignment) {
            sums[a] += v * w as Real;
            totals[a] += w as Real;
        }
        for b in 0..bins {
            if totals[b] > 0.0 {
                centers[b] = sums[b] / totals[b];
            }
        }
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let next = assignment_of(distinct, &centers);
        if next == assignment {
            break;
        }
        assignment = next;
    }

    centers.dedup();
    centers
}

/// Fit per-feature 1-D k-means centers on every continuous column.
///
/// `bins` is clamped per feature to the number of distinct non-missing
/// values; with no continuous features the identity discretizer is
/// returned.
pub fn fit_discretizer(
    dataset: &Dataset,
    schema: &FeatureSchema,
    bins: usize,
) -> Result<Discretizer> {
    if bins < 1 {
        return Err(Error::Config("bins must be >= 1".to_string()));
    }
    let mut centers = Vec::with_capacity(schema.d());
    for j in 0..schema.d() {
        if !schema.feature(j).is_continuous() {
            centers.push(None);
            continue;
        }
        let values = match &dataset.columns[j] {
            Column::Values(v) => v,
            // Already discretized; nothing to fit.
            Column::Codes(_) => {
                centers.push(None);
                continue;
            }
        };
        let mut counted: BTreeMap<u64, u64> = BTreeMap::new();
        for v in values.iter().flatten() {
            *counted.entry(v.to_bits()).or_insert(0) += 1;
        }
        let distinct: Vec<Real> = counted.keys().map(|&b| Real::from_bits(b)).collect();
        let weights: Vec<u64> = counted.values().copied().collect();
        if distinct.is_empty() {
            centers.push(Some(Vec::new()));
            continue;
        }
        let eff_bins = bins.min(distinct.len());
        centers.push(Some(kmeans_1d(&distinct, &weights, eff_bins)));
    }
    Ok(Discretizer { centers })
}

/// Replace every continuous value with its nearest-center bin code; missing
/// cells get the dedicated code after the last bin. Already-categorical
/// columns are untouched, so applying twice equals applying once.
pub fn apply_discretizer(disc: &Discretizer, dataset: &Dataset) -> Dataset {
    let columns = dataset
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| match (col, disc.centers(j)) {
            (Column::Values(values), Some(centers)) => Column::Codes(
                values
                    .iter()
                    .map(|v| match v {
                        Some(x) => Discretizer::bin(centers, *x),
                        None => centers.len() as u32,
                    })
                    .collect(),
            ),
            (other, _) => other.clone(),
        })
        .collect();
    Dataset {
        columns,
        labels: dataset.labels.clone(),
    }
}

fn class_index_map(dataset: &Dataset) -> Result<BTreeMap<u32, Vec<usize>>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for row in 0..dataset.n() {
        by_class.entry(dataset.single_class(row)?).or_default().push(row);
    }
    Ok(by_class)
}

/// Stratified train/validation split. Every class appears on both sides
/// when it has at least two samples; a single-sample class goes entirely to
/// the training side (with a warning).
pub fn split_train_validation(
    dataset: &Dataset,
    val_fraction: Real,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::arg(format!(
            "validation fraction must be in (0,1), got {val_fraction}"
        )));
    }
    let mut rng = derive_rng(seed, "validation-split", 0);
    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    for (class, mut rows) in class_index_map(dataset)? {
        if rows.len() == 1 {
            log::warn!("class {class} has a single sample; keeping it in training");
            train_rows.push(rows[0]);
            continue;
        }
        rows.shuffle(&mut rng);
        let take = ((val_fraction * rows.len() as Real).round() as usize)
            .clamp(1, rows.len() - 1);
        val_rows.extend_from_slice(&rows[..take]);
        train_rows.extend_from_slice(&rows[take..]);
    }
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    Ok((dataset.subset(&train_rows), dataset.subset(&val_rows)))
}

/// One train/test split of a repeated stratified k-fold plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KfoldPair {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Repeated stratified k-fold assignments. Within one repeat the test folds
/// partition the dataset; samples of each class are dealt round-robin, so a
/// class smaller than `folds` simply misses some folds.
pub fn stratified_kfold(
    dataset: &Dataset,
    folds: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<KfoldPair>> {
    if folds < 2 {
        return Err(Error::arg("need at least 2 folds"));
    }
    if repeats < 1 {
        return Err(Error::arg("need at least 1 repeat"));
    }
    if folds > dataset.n() {
        return Err(Error::arg(format!(
            "{folds} folds requested but only {} samples",
            dataset.n()
        )));
    }
    let by_class = class_index_map(dataset)?;
    let mut pairs = Vec::with_capacity(folds * repeats);
    for repeat in 0..repeats {
        let mut rng = derive_rng(seed, "kfold", repeat as u64);
        let mut fold_of = vec![0usize; dataset.n()];
        for rows in by_class.values() {
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);
            for (t, &row) in rows.iter().enumerate() {
                fold_of[row] = t % folds;
            }
        }
        for fold in 0..folds {
            let test: Vec<usize> = (0..dataset.n()).filter(|&i| fold_of[i] == fold).collect();
            if test.is_empty() {
                log::warn!("repeat {repeat}: fold {fold} is empty; skipping");
                continue;
            }
            let train: Vec<usize> = (0..dataset.n()).filter(|&i| fold_of[i] != fold).collect();
            pairs.push(KfoldPair {
                repeat,
                fold,
                train,
                test,
            });
        }
    }
    Ok(pairs)
}

/// Encode one raw row (cells in schema feature order) to feature codes.
/// Raw categories unseen in training map to [`UNSEEN_CODE`].
pub fn encode_row(schema: &FeatureSchema, disc: &Discretizer, cells: &[&str]) -> Vec<u32> {
    debug_assert_eq!(cells.len(), schema.d());
    cells
        .iter()
        .enumerate()
        .map(|(j, cell)| match &schema.feature(j).kind {
            FeatureKind::Categorical { .. } => {
                schema.vocab_code(j, cell).unwrap_or(UNSEEN_CODE)
            }
            FeatureKind::Continuous => {
                if *cell == schema.missing_token() {
                    return disc.missing_code(j);
                }
                match cell.parse::<Real>() {
                    Ok(v) if v.is_finite() => match disc.centers(j) {
                        Some(centers) if !centers.is_empty() => Discretizer::bin(centers, v),
                        _ => UNSEEN_CODE,
                    },
                    _ => UNSEEN_CODE,
                }
            }
        })
        .collect()
}

/// Decode a loaded (not yet discretized) row back to raw cell strings.
pub fn decode_row(schema: &FeatureSchema, dataset: &Dataset, row: usize) -> Vec<String> {
    (0..schema.d())
        .map(|j| match (&schema.feature(j).kind, &dataset.columns[j]) {
            (FeatureKind::Categorical { values }, Column::Codes(codes)) => {
                values[codes[row] as usize].clone()
            }
            (FeatureKind::Continuous, Column::Values(vals)) => match vals[row] {
                Some(v) => format!("{v}"),
                None => schema.missing_token().to_string(),
            },
            _ => panic!("column {j} kind does not match its storage"),
        })
        .collect()
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => write!(f, "class {c}"),
            Label::Reject => f.write_str(REJECT_TOKEN),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn load(content: &str, opts: &LoadOptions) -> Result<(Dataset, FeatureSchema)> {
        let f = write_csv(content);
        load_csv(f.path(), opts)
    }

    fn class_sets(classes: &[u32]) -> Vec<LabelSet> {
        classes
            .iter()
            .map(|&c| LabelSet::singleton(Label::Class(c)))
            .collect()
    }

    #[test]
    fn loads_simple_categorical_file() {
        let (ds, schema) = load(
            "color,size,label\nred,big,yes\nblue,small,no\nred,small,yes\n",
            &LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(schema.d(), 2);
        assert_eq!(schema.class_count(), 2);
        assert_eq!(ds.code(0, 0), 0);
        assert_eq!(ds.code(1, 0), 1);
        assert_eq!(ds.code(2, 0), 0);
        assert_eq!(schema.labels(), &["yes".to_string(), "no".to_string()]);
    }

    #[test]
    fn missing_token_gets_its_own_code() {
        let (ds, schema) = load(
            "color,size,label\nred,big,yes\nblue,?,no\nred,small,yes\n",
            &LoadOptions::default(),
        )
        .unwrap();
        match &schema.feature(1).kind {
            FeatureKind::Categorical { values } => {
                assert_eq!(values, &["big".to_string(), "?".to_string(), "small".to_string()]);
            }
            _ => panic!("expected categorical"),
        }
        assert_eq!(ds.code(1, 1), 1);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let err = load("a,b,label\n1,2,x\n1,2,3,x\n", &LoadOptions::default()).unwrap_err();
        match err {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_and_headerless_files_error() {
        assert!(load("", &LoadOptions::default()).is_err());
        assert!(load("a,b,label\n", &LoadOptions::default()).is_err());
    }

    #[test]
    fn absent_label_column_errors() {
        let opts = LoadOptions {
            label_column: Some("target".to_string()),
            ..Default::default()
        };
        assert!(load("a,b,label\n1,2,x\n", &opts).is_err());
    }

    #[test]
    fn numeric_columns_stay_continuous_and_overrides_work() {
        let content = "height,code,label\n1.5,7,a\n2.5,8,b\n";
        let (ds, schema) = load(content, &LoadOptions::default()).unwrap();
        assert!(schema.feature(0).is_continuous());
        assert!(schema.feature(1).is_continuous());
        assert!(!ds.is_fully_categorical());

        let opts = LoadOptions {
            force_categorical: ColumnSpec::Named(vec!["code".to_string()]),
            ..Default::default()
        };
        let (_, schema) = load(content, &opts).unwrap();
        assert!(schema.feature(0).is_continuous());
        assert!(!schema.feature(1).is_continuous());
    }

    #[test]
    fn multi_label_and_reject_truth_cells() {
        let (ds, schema) = load(
            "a,label\nx,c1\ny,c1|c2\nz,__REJECT__\n",
            &LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(schema.class_count(), 2);
        assert_eq!(ds.label(0).labels(), &[Label::Class(0)]);
        assert_eq!(ds.label(1).labels(), &[Label::Class(0), Label::Class(1)]);
        assert_eq!(ds.label(2).labels(), &[Label::Reject]);
    }

    #[test]
    fn round_trip_reload_reproduces_codes() {
        let content = "color,height,label\nred,1.5,yes\nblue,?,no\nred,2.25,yes\n";
        let (ds, schema) = load(content, &LoadOptions::default()).unwrap();
        let mut out = String::from("color,height,label\n");
        for row in 0..ds.n() {
            let cells = decode_row(&schema, &ds, row);
            let label = match ds.label(row).labels() {
                [Label::Class(c)] => schema.labels()[*c as usize].clone(),
                _ => unreachable!(),
            };
            out.push_str(&format!("{},{},{label}\n", cells[0], cells[1]));
        }
        let (ds2, schema2) = load(&out, &LoadOptions::default()).unwrap();
        assert_eq!(ds, ds2);
        assert_eq!(schema, schema2);
    }

    #[test]
    fn demotes_small_continuous_columns() {
        let content = "grade,height,label\n1,1.5,a\n2,2.5,b\n1,3.5,a\n2,4.5,b\n3,5.5,a\n";
        let (mut ds, mut schema) = load(content, &LoadOptions::default()).unwrap();
        let demoted = demote_small_continuous(&mut ds, &mut schema, 3);
        assert_eq!(demoted, vec!["grade".to_string()]);
        assert!(!schema.feature(0).is_continuous());
        assert!(schema.feature(1).is_continuous());
        assert_eq!(ds.code(0, 0), 0);
        assert_eq!(ds.code(4, 0), 2);
    }

    #[test]
    fn discretizer_separated_clusters() {
        let (ds, schema) = load(
            "x,label\n1,a\n1,a\n1,a\n9,b\n9,b\n9,b\n",
            &LoadOptions::default(),
        )
        .unwrap();
        let disc = fit_discretizer(&ds, &schema, 2).unwrap();
        assert_eq!(disc.centers(0).unwrap(), &[1.0, 9.0]);
    }

    #[test]
    fn discretizer_clamps_degenerate_input() {
        let (ds, schema) = load("x,label\n5,a\n5,b\n5,a\n", &LoadOptions::default()).unwrap();
        let disc = fit_discretizer(&ds, &schema, 3).unwrap();
        assert_eq!(disc.centers(0).unwrap(), &[5.0]);
    }

    #[test]
    fn no_continuous_features_yields_identity() {
        let (ds, schema) = load("a,label\nx,c\ny,c\n", &LoadOptions::default()).unwrap();
        let disc = fit_discretizer(&ds, &schema, 4).unwrap();
        assert!(disc.is_identity());
    }

    /// Exhaustive-search optimal 1-D k-means by dynamic programming on the
    /// sorted values (O(u^2 k) with prefix sums).
    fn dp_optimal_sse(values: &[Real], k: usize) -> Real {
        let u = values.len();
        let mut prefix = vec![0.0; u + 1];
        let mut prefix_sq = vec![0.0; u + 1];
        for (i, &v) in values.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v;
            prefix_sq[i + 1] = prefix_sq[i] + v * v;
        }
        let cost = |i: usize, j: usize| {
            let m = (j - i) as Real;
            let s = prefix[j] - prefix[i];
            (prefix_sq[j] - prefix_sq[i]) - s * s / m
        };
        let inf = Real::INFINITY;
        let mut best = vec![vec![inf; u + 1]; k + 1];
        best[0][0] = 0.0;
        for c in 1..=k {
            for j in c..=u {
                for i in (c - 1)..j {
                    let candidate = best[c - 1][i] + cost(i, j);
                    if candidate < best[c][j] {
                        best[c][j] = candidate;
                    }
                }
            }
        }
        best[k][u]
    }

    fn nearest_center_sse(values: &[Real], centers: &[Real]) -> Real {
        values
            .iter()
            .map(|&v| {
                let b = Discretizer::bin(centers, v) as usize;
                (v - centers[b]) * (v - centers[b])
            })
            .sum()
    }

    #[test]
    fn discretizer_matches_dp_optimum_on_uniform_grid() {
        let values: Vec<Real> = (0..100).map(|v| v as Real).collect();
        let weights = vec![1u64; 100];
        let centers = kmeans_1d(&values, &weights, 3);
        let got = nearest_center_sse(&values, &centers);
        let want = dp_optimal_sse(&values, 3);
        assert!(
            (got - want).abs() <= 1e-6 * want.max(1.0),
            "lloyd sse {got} vs dp optimum {want}"
        );
    }

    #[test]
    fn apply_examples_and_tie_rule() {
        let centers = [1.0, 9.0];
        assert_eq!(Discretizer::bin(&centers, 2.0), 0);
        assert_eq!(Discretizer::bin(&centers, 5.0), 0); // equidistant -> lower
        assert_eq!(Discretizer::bin(&centers, 100.0), 1);
    }

    #[test]
    fn apply_is_idempotent_and_handles_missing() {
        let (ds, schema) = load(
            "x,label\n1,a\n?,a\n9,b\n9,b\n",
            &LoadOptions::default(),
        )
        .unwrap();
        let disc = fit_discretizer(&ds, &schema, 2).unwrap();
        let once = apply_discretizer(&disc, &ds);
        assert!(once.is_fully_categorical());
        assert_eq!(once.code(1, 0), 2); // missing -> code after last bin
        let twice = apply_discretizer(&disc, &once);
        assert_eq!(once, twice);
    }

    #[test]
    fn stratified_split_is_balanced_and_deterministic() {
        let rows: Vec<Vec<u32>> = (0..100).map(|i| vec![i as u32]).collect();
        let classes: Vec<u32> = (0..100).map(|i| (i % 2) as u32).collect();
        let ds = Dataset::from_code_rows(&rows, class_sets(&classes)).unwrap();
        let (train, val) = split_train_validation(&ds, 0.2, 7).unwrap();
        assert_eq!(train.n(), 80);
        assert_eq!(val.n(), 20);
        assert_eq!(val.class_counts(2).unwrap(), vec![10, 10]);
        let (train2, val2) = split_train_validation(&ds, 0.2, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);
    }

    #[test]
    fn single_sample_class_stays_in_training() {
        let rows: Vec<Vec<u32>> = (0..11).map(|i| vec![i as u32]).collect();
        let mut classes = vec![0u32; 10];
        classes.push(1);
        let ds = Dataset::from_code_rows(&rows, class_sets(&classes)).unwrap();
        let (train, val) = split_train_validation(&ds, 0.2, 3).unwrap();
        assert_eq!(train.class_counts(2).unwrap()[1], 1);
        assert_eq!(val.class_counts(2).unwrap()[1], 0);
    }

    #[test]
    fn kfold_shapes_and_determinism() {
        // 150 samples, 3 balanced classes.
        let rows: Vec<Vec<u32>> = (0..150).map(|i| vec![i as u32]).collect();
        let classes: Vec<u32> = (0..150).map(|i| (i / 50) as u32).collect();
        let ds = Dataset::from_code_rows(&rows, class_sets(&classes)).unwrap();
        let pairs = stratified_kfold(&ds, 5, 10, 42).unwrap();
        assert_eq!(pairs.len(), 50);
        for pair in &pairs {
            assert_eq!(pair.test.len(), 30);
            assert_eq!(pair.train.len(), 120);
        }
        let again = stratified_kfold(&ds, 5, 10, 42).unwrap();
        assert_eq!(pairs, again);
    }

    #[test]
    fn kfold_two_folds_four_samples() {
        let rows: Vec<Vec<u32>> = (0..4).map(|i| vec![i as u32]).collect();
        let ds = Dataset::from_code_rows(&rows, class_sets(&[0, 0, 1, 1])).unwrap();
        let pairs = stratified_kfold(&ds, 2, 1, 1).unwrap();
        assert_eq!(pairs.len(), 2);
        for pair in &pairs {
            let test = ds.subset(&pair.test);
            assert_eq!(test.class_counts(2).unwrap(), vec![1, 1]);
        }
    }

    #[test]
    fn kfold_test_folds_partition_each_repeat() {
        let rows: Vec<Vec<u32>> = (0..37).map(|i| vec![i as u32]).collect();
        let classes: Vec<u32> = (0..37).map(|i| (i % 3) as u32).collect();
        let ds = Dataset::from_code_rows(&rows, class_sets(&classes)).unwrap();
        for seed in 0..5u64 {
            let pairs = stratified_kfold(&ds, 5, 2, seed).unwrap();
            for repeat in 0..2 {
                let mut seen = vec![false; 37];
                for pair in pairs.iter().filter(|p| p.repeat == repeat) {
                    for &i in &pair.test {
                        assert!(!seen[i], "row {i} in two test folds");
                        seen[i] = true;
                    }
                    for &i in &pair.train {
                        assert!(!pair.test.contains(&i));
                    }
                }
                assert!(seen.iter().all(|&s| s), "test folds must cover the dataset");
            }
        }
    }

    #[test]
    fn encode_row_maps_unseen_to_reserved_code() {
        let (ds, schema) = load(
            "color,height,label\nred,1.0,a\nblue,9.0,b\n",
            &LoadOptions::default(),
        )
        .unwrap();
        let disc = fit_discretizer(&ds, &schema, 2).unwrap();
        assert_eq!(encode_row(&schema, &disc, &["red", "1.2"]), vec![0, 0]);
        assert_eq!(encode_row(&schema, &disc, &["green", "9.4"]), vec![UNSEEN_CODE, 1]);
        assert_eq!(encode_row(&schema, &disc, &["blue", "?"]), vec![1, 2]);
        assert_eq!(
            encode_row(&schema, &disc, &["blue", "not-a-number"]),
            vec![1, UNSEEN_CODE]
        );
    }
}
