//! Ensemble training and the trained-model artifact.
//!
//! Training runs `b1` selection rounds (each keeps the best of `b2` random
//! candidate subspaces by average relative risk), optionally appends every
//! single feature as its own subspace, and — for the ordered-p-value
//! combiner — picks the rank `r*` that maximizes argmin-classification
//! accuracy on a validation set.

mod io;

pub use io::{load_model, save_model};

use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{
    split_train_validation, Dataset, Discretizer, FeatureSchema, UNSEEN_CODE,
};
use crate::error::{Error, Result};
use crate::stats::{self, Combiner, ContingencyTable2x2, LogFactorials};
use crate::streams::{derive_rng, derive_seed};
use crate::subspace::{
    build_frequency_table, max_subspace_size, sample_candidate, select_best, FrequencyTable,
    Subspace,
};
use crate::Real;

/// Model file format version accepted by this build.
pub const FORMAT_VERSION: u32 = 1;

/// Training-time configuration, persisted with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of subspace selection rounds.
    pub b1: usize,
    /// Candidate subspaces per round.
    pub b2: usize,
    /// Significance level for selective classification.
    pub alpha: Real,
    pub combiner: Combiner,
    /// Fraction of the training data carved off to pick `r*` when no
    /// explicit validation set is supplied.
    pub val_fraction: Real,
    pub seed: u64,
    /// Also include each original feature as a size-1 subspace.
    pub include_single_features: bool,
    /// Discretization bins; `None` means "number of classes".
    pub bins: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            b1: 100,
            b2: 10,
            alpha: 0.05,
            combiner: Combiner::Rop,
            val_fraction: 0.2,
            seed: 0,
            include_single_features: true,
            bins: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b2 < 1 {
            return Err(Error::Config("b2 must be >= 1".to_string()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0,1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Ensemble size for a dataset with `d` features.
    pub fn ensemble_size(&self, d: usize) -> usize {
        self.b1 + if self.include_single_features { d } else { 0 }
    }
}

/// One ensemble member: a subspace with its training frequency table.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceTable {
    pub subspace: Subspace,
    pub table: FrequencyTable,
}

/// Per-sample matrix of subspace-by-class p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    values: Vec<Real>,
    subspaces: usize,
    classes: usize,
}

impl PValueMatrix {
    pub fn filled(subspaces: usize, classes: usize, value: Real) -> Self {
        PValueMatrix {
            values: vec![value; subspaces * classes],
            subspaces,
            classes,
        }
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Self {
        let classes = rows.first().map_or(0, Vec::len);
        debug_assert!(rows.iter().all(|r| r.len() == classes));
        PValueMatrix {
            values: rows.iter().flatten().copied().collect(),
            subspaces: rows.len(),
            classes,
        }
    }

    pub fn subspace_count(&self) -> usize {
        self.subspaces
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, subspace: usize, class: usize) -> Real {
        self.values[subspace * self.classes + class]
    }

    #[inline]
    pub fn set(&mut self, subspace: usize, class: usize, value: Real) {
        self.values[subspace * self.classes + class] = value;
    }

    /// All p-values of one class, in subspace order.
    pub fn column(&self, class: usize) -> Vec<Real> {
        (0..self.subspaces).map(|i| self.get(i, class)).collect()
    }
}

/// Trained classifier: subspaces with frequency tables, class totals, the
/// chosen combiner rank, and everything needed to encode raw samples.
#[derive(Debug, Clone)]
pub struct CostModel {
    schema: FeatureSchema,
    discretizer: Discretizer,
    subspaces: Vec<SubspaceTable>,
    class_totals: Vec<u64>,
    n: u64,
    r_star: Option<usize>,
    config: TrainConfig,
    ln_fact: Arc<LogFactorials<Real>>,
}

impl PartialEq for CostModel {
    fn eq(&self, other: &Self) -> bool {
        // ln_fact is a derived cache.
        self.schema == other.schema
            && self.discretizer == other.discretizer
            && self.subspaces == other.subspaces
            && self.class_totals == other.class_totals
            && self.n == other.n
            && self.r_star == other.r_star
            && self.config == other.config
    }
}

impl CostModel {
    pub fn from_parts(
        schema: FeatureSchema,
        discretizer: Discretizer,
        subspaces: Vec<SubspaceTable>,
        class_totals: Vec<u64>,
        n: u64,
        r_star: Option<usize>,
        config: TrainConfig,
    ) -> Self {
        let ln_fact = Arc::new(LogFactorials::up_to(
            n as usize + subspaces.len() + 16,
        ));
        CostModel {
            schema,
            discretizer,
            subspaces,
            class_totals,
            n,
            r_star,
            config,
            ln_fact,
        }
    }

    /// Ensemble size B.
    pub fn b(&self) -> usize {
        self.subspaces.len()
    }

    /// Class count k of the schema (including classes without samples).
    pub fn k(&self) -> usize {
        self.class_totals.len()
    }

    pub fn d(&self) -> usize {
        self.schema.d()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn discretizer(&self) -> &Discretizer {
        &self.discretizer
    }

    pub fn subspaces(&self) -> &[SubspaceTable] {
        &self.subspaces
    }

    pub fn class_totals(&self) -> &[u64] {
        &self.class_totals
    }

    pub fn r_star(&self) -> Option<usize> {
        self.r_star
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn ln_fact(&self) -> &LogFactorials<Real> {
        &self.ln_fact
    }

    /// Classes the model can predict: those with at least one training
    /// sample.
    pub fn active_classes(&self) -> Vec<u32> {
        (0..self.k() as u32)
            .filter(|&j| self.class_totals[j as usize] > 0)
            .collect()
    }

    /// Encode one raw row (cells in schema feature order).
    pub fn encode_row(&self, cells: &[&str]) -> Vec<u32> {
        crate::data::encode_row(&self.schema, &self.discretizer, cells)
    }

    /// The B-by-k matrix of one-sided exact-test p-values for one encoded
    /// sample. A projected tuple never seen in training (including any
    /// tuple touching an unseen raw category) contributes a row of ones.
    pub fn pvalue_matrix(&self, codes: &[u32]) -> PValueMatrix {
        let k = self.k();
        let mut matrix = PValueMatrix::filled(self.b(), k, 1.0);
        let mut key = Vec::new();
        for (i, member) in self.subspaces.iter().enumerate() {
            member.subspace.project_into(codes, &mut key);
            if key.contains(&UNSEEN_CODE) {
                continue;
            }
            let Some(counts) = member.table.lookup(&key) else {
                continue;
            };
            let o_z: u64 = counts.iter().sum();
            for j in 0..k {
                let table = ContingencyTable2x2::from_margins(
                    counts[j],
                    o_z,
                    self.class_totals[j],
                    self.n,
                )
                .expect("frequency-table counts are margin-consistent");
                let p = stats::fisher_upper_tail(&table, &self.ln_fact)
                    .expect("margins validated");
                matrix.set(i, j, p);
            }
        }
        matrix
    }
}

/// Train the ensemble. `train` must already be fully categorical; when the
/// combiner is rOP and no validation set is given, one is carved from
/// `train` by a stratified split before the tables are built.
pub fn train(
    train_data: &Dataset,
    validation: Option<&Dataset>,
    schema: &FeatureSchema,
    discretizer: &Discretizer,
    cfg: &TrainConfig,
) -> Result<CostModel> {
    cfg.validate()?;
    if train_data.n() == 0 {
        return Err(Error::data("training set is empty"));
    }
    if !train_data.is_fully_categorical() {
        return Err(Error::data(
            "training data still has continuous columns; discretize first",
        ));
    }
    let d = schema.d();
    if train_data.d() != d {
        return Err(Error::data(format!(
            "dataset has {} feature columns, schema has {d}",
            train_data.d()
        )));
    }
    let b_total = cfg.ensemble_size(d);
    if b_total == 0 {
        return Err(Error::Config(
            "empty ensemble: b1 = 0 and single-feature subspaces disabled".to_string(),
        ));
    }

    let needs_carved_validation = cfg.combiner == Combiner::Rop && validation.is_none();
    let carved = if needs_carved_validation {
        Some(split_train_validation(
            train_data,
            cfg.val_fraction,
            derive_seed(cfg.seed, "validation-carve", 0),
        )?)
    } else {
        None
    };
    let (fit, val): (&Dataset, Option<&Dataset>) = match (&carved, validation) {
        (Some((f, v)), _) => (f, Some(v)),
        (None, v) => (train_data, v),
    };

    let k = schema.class_count();
    let class_totals = fit.class_counts(k)?;
    if class_totals.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::data(
            "training requires samples from at least two classes",
        ));
    }

    let l_max = max_subspace_size(d, fit.n());
    let mut members: Vec<SubspaceTable> = (0..cfg.b1)
        .into_par_iter()
        .map(|round| {
            let mut rng = derive_rng(cfg.seed, "round", round as u64);
            let candidates: Vec<Subspace> = (0..cfg.b2)
                .map(|_| sample_candidate(&mut rng, d, l_max))
                .collect();
            let (subspace, table) = select_best(&candidates, fit, k)?;
            Ok(SubspaceTable { subspace, table })
        })
        .collect::<Result<_>>()?;
    if cfg.include_single_features {
        for feature in 0..d as u32 {
            let subspace = Subspace::single(feature);
            let table = build_frequency_table(&subspace, fit, k)?;
            members.push(SubspaceTable { subspace, table });
        }
    }

    let mut model = CostModel::from_parts(
        schema.clone(),
        discretizer.clone(),
        members,
        class_totals,
        fit.n() as u64,
        None,
        cfg.clone(),
    );

    if cfg.combiner == Combiner::Rop {
        let r = match val {
            Some(v) if v.n() >= 5 => select_r(&model, v)?,
            _ => {
                let fallback = ((model.b() as Real * 0.3).ceil() as usize).clamp(1, model.b());
                log::warn!(
                    "validation set has fewer than 5 samples; defaulting r* to {fallback}"
                );
                fallback
            }
        };
        model.r_star = Some(r);
    }
    Ok(model)
}

/// Pick the rank `r` in `1..=B` whose argmin-consensus classification has
/// the highest validation accuracy (ties to the smallest r).
///
/// Each sample's per-class p-value column is sorted once; the sweep over r
/// then reads the r-th entry per class, applies the Beta CDF, and compares
/// classes exactly as prediction does.
pub fn select_r(model: &CostModel, validation: &Dataset) -> Result<usize> {
    if model.config.combiner != Combiner::Rop {
        return Err(Error::arg("r selection only applies to the rop combiner"));
    }
    if validation.n() == 0 {
        return Err(Error::data("validation set is empty"));
    }
    let b = model.b();
    let active = model.active_classes();

    // correct[r-1] = number of validation samples classified correctly at r.
    let per_sample: Result<Vec<Vec<bool>>> = (0..validation.n())
        .into_par_iter()
        .map(|row| {
            let truth = validation.single_class(row)?;
            let codes: Vec<u32> = (0..validation.d()).map(|j| validation.code(row, j)).collect();
            let matrix = model.pvalue_matrix(&codes);
            let sorted: Vec<Vec<Real>> = active
                .iter()
                .map(|&j| {
                    let mut col = matrix.column(j as usize);
                    col.sort_by(|a, b| a.partial_cmp(b).expect("p-values are not NaN"));
                    col
                })
                .collect();
            let mut flags = Vec::with_capacity(b);
            for r in 1..=b {
                let mut best_class = active[0];
                let mut best_p = Real::INFINITY;
                for (ci, &class) in active.iter().enumerate() {
                    let p = stats::beta_cdf_int(sorted[ci][r - 1], r, b, &model.ln_fact);
                    if p < best_p {
                        best_p = p;
                        best_class = class;
                    }
                }
                flags.push(best_class == truth);
            }
            Ok(flags)
        })
        .collect();
    let per_sample = per_sample?;

    let mut correct = vec![0u64; b];
    for flags in &per_sample {
        for (r, &ok) in flags.iter().enumerate() {
            if ok {
                correct[r] += 1;
            }
        }
    }
    let best_r = (1..=b)
        .max_by_key(|&r| (correct[r - 1], std::cmp::Reverse(r)))
        .unwrap();
    Ok(best_r)
}
