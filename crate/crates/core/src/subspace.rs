//! Random feature subspaces and their per-class frequency tables.
//!
//! Each selection round draws a batch of candidate subspaces, counts every
//! distinct projected value tuple per class in one pass over the training
//! data, and keeps the candidate whose tuples have the highest average
//! relative risk (how much more often a tuple occurs in its majority class
//! than outside it).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::Real;

/// Largest admissible subspace size: `min(d, floor(sqrt(n)))`.
pub fn max_subspace_size(d: usize, n: usize) -> usize {
    d.min(isqrt(n)).max(1)
}

fn isqrt(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut x = (n as f64).sqrt() as usize;
    while (x + 1).saturating_mul(x + 1) <= n {
        x += 1;
    }
    while x * x > n {
        x -= 1;
    }
    x
}

/// Sorted set of distinct feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Subspace {
    features: Vec<u32>,
}

impl Subspace {
    pub fn new(mut features: Vec<u32>) -> Result<Self> {
        features.sort_unstable();
        features.dedup();
        if features.is_empty() {
            return Err(Error::arg("a subspace needs at least one feature"));
        }
        Ok(Subspace { features })
    }

    pub fn single(feature: u32) -> Self {
        Subspace {
            features: vec![feature],
        }
    }

    pub fn features(&self) -> &[u32] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Project one encoded row onto this subspace, into `key`.
    pub fn project_into(&self, codes: &[u32], key: &mut Vec<u32>) {
        key.clear();
        key.extend(self.features.iter().map(|&f| codes[f as usize]));
    }
}

/// Draw one candidate: size uniform in `1..=l_max`, then that many distinct
/// features uniformly without replacement.
pub fn sample_candidate(rng: &mut ChaCha8Rng, d: usize, l_max: usize) -> Subspace {
    debug_assert!(d >= 1 && l_max >= 1);
    let size = rng.gen_range(1..=l_max.min(d));
    let mut features: Vec<u32> = rand::seq::index::sample(rng, d, size)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    features.sort_unstable();
    Subspace { features }
}

/// Occurrence counts of every distinct projected tuple, per class.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    counts: HashMap<Box<[u32]>, Box<[u64]>>,
    class_totals: Vec<u64>,
    n: u64,
}

impl FrequencyTable {
    pub fn from_parts(
        counts: HashMap<Box<[u32]>, Box<[u64]>>,
        class_totals: Vec<u64>,
        n: u64,
    ) -> Self {
        FrequencyTable {
            counts,
            class_totals,
            n,
        }
    }

    /// Number of training samples the table was built from.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn class_count(&self) -> usize {
        self.class_totals.len()
    }

    /// Per-class training totals `o_h`.
    pub fn class_totals(&self) -> &[u64] {
        &self.class_totals
    }

    /// Number of distinct tuples `|Z|`.
    pub fn distinct_tuples(&self) -> usize {
        self.counts.len()
    }

    /// Per-class counts of one tuple, if it occurred in training.
    pub fn lookup(&self, key: &[u32]) -> Option<&[u64]> {
        self.counts.get(key).map(|c| c.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], &[u64])> {
        self.counts.iter().map(|(k, v)| (k.as_ref(), v.as_ref()))
    }
}

/// Count every distinct projected tuple with exact per-class counts in one
/// pass over the training samples.
pub fn build_frequency_table(
    subspace: &Subspace,
    train: &Dataset,
    k: usize,
) -> Result<FrequencyTable> {
    if train.n() == 0 {
        return Err(Error::data("cannot build a frequency table from an empty dataset"));
    }
    let columns: Vec<&[u32]> = subspace
        .features()
        .iter()
        .map(|&f| train.code_column(f as usize))
        .collect();
    let mut counts: HashMap<Box<[u32]>, Box<[u64]>> = HashMap::new();
    let mut class_totals = vec![0u64; k];
    let mut key = vec![0u32; subspace.len()];
    for row in 0..train.n() {
        for (slot, col) in key.iter_mut().zip(&columns) {
            *slot = col[row];
        }
        let class = train.single_class(row)? as usize;
        if class >= k {
            return Err(Error::data(format!("row {row} references class {class} >= k={k}")));
        }
        class_totals[class] += 1;
        match counts.get_mut(key.as_slice()) {
            Some(per_class) => per_class[class] += 1,
            None => {
                let mut per_class = vec![0u64; k].into_boxed_slice();
                per_class[class] = 1;
                counts.insert(key.clone().into_boxed_slice(), per_class);
            }
        }
    }
    Ok(FrequencyTable {
        counts,
        class_totals,
        n: train.n() as u64,
    })
}

/// Relative risk of one tuple: its rate inside the majority class `c_t`
/// over its rate outside. When the plain form divides by zero (the tuple
/// covers the whole dataset, or covers every `c_t` sample) a Haldane-style
/// +0.5 correction is applied instead.
pub fn relative_risk(o_t_z: u64, o_z: u64, o_t: u64, n: u64) -> Real {
    debug_assert!(o_z >= 1 && o_z <= n && o_t_z <= o_z.min(o_t));
    if o_t > o_t_z && n > o_z {
        let inside = o_t_z as Real / o_z as Real;
        let outside = (o_t - o_t_z) as Real / (n - o_z) as Real;
        inside / outside
    } else {
        let inside = (o_t_z as Real + 0.5) / (o_z as Real + 1.0);
        let outside = ((o_t - o_t_z) as Real + 0.5) / ((n - o_z) as Real + 1.0);
        inside / outside
    }
}

/// Majority class of a tuple's per-class counts; ties break to the
/// smallest class index.
pub fn majority_class(per_class: &[u64]) -> usize {
    let mut best = 0usize;
    for (c, &count) in per_class.iter().enumerate() {
        if count > per_class[best] {
            best = c;
        }
    }
    best
}

/// Mean relative risk over the table's distinct tuples.
pub fn average_relative_risk(table: &FrequencyTable) -> Real {
    debug_assert!(table.distinct_tuples() > 0);
    let mut sum = 0.0;
    for (_, per_class) in table.iter() {
        let c_t = majority_class(per_class);
        let o_t_z = per_class[c_t];
        let o_z: u64 = per_class.iter().sum();
        sum += relative_risk(o_t_z, o_z, table.class_totals[c_t], table.n);
    }
    sum / table.distinct_tuples() as Real
}

/// Score every candidate and return the first one with the maximal average
/// relative risk, together with its frequency table for reuse.
pub fn select_best(
    candidates: &[Subspace],
    train: &Dataset,
    k: usize,
) -> Result<(Subspace, FrequencyTable)> {
    if candidates.is_empty() {
        return Err(Error::arg("need at least one candidate subspace"));
    }
    let mut best: Option<(Real, usize, FrequencyTable)> = None;
    for (idx, candidate) in candidates.iter().enumerate() {
        let table = build_frequency_table(candidate, train, k)?;
        let score = average_relative_risk(&table);
        let replace = match &best {
            Some((best_score, _, _)) => score > *best_score,
            None => true,
        };
        if replace {
            best = Some((score, idx, table));
        }
    }
    let (_, idx, table) = best.unwrap();
    Ok((candidates[idx].clone(), table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, LabelSet};
    use crate::streams::derive_rng;
    use rand::Rng;

    fn dataset(rows: &[Vec<u32>], classes: &[u32]) -> Dataset {
        let labels = classes
            .iter()
            .map(|&c| LabelSet::singleton(Label::Class(c)))
            .collect();
        Dataset::from_code_rows(rows, labels).unwrap()
    }

    #[test]
    fn isqrt_is_exact() {
        for n in 0..2000usize {
            let r = isqrt(n);
            assert!(r * r <= n && (r + 1) * (r + 1) > n, "isqrt({n}) = {r}");
        }
        assert_eq!(max_subspace_size(4, 150), 4);
        assert_eq!(max_subspace_size(36, 150), 12);
    }

    #[test]
    fn single_feature_domain_always_yields_it() {
        let mut rng = derive_rng(1, "test", 0);
        for _ in 0..20 {
            let ss = sample_candidate(&mut rng, 1, 1);
            assert_eq!(ss.features(), &[0]);
        }
    }

    #[test]
    fn candidate_sizes_are_uniform() {
        let mut rng = derive_rng(9, "sizes", 0);
        let draws = 30_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let ss = sample_candidate(&mut rng, 10, 3);
            assert!((1..=3).contains(&ss.len()));
            counts[ss.len() - 1] += 1;
        }
        // Chi-square goodness of fit against uniform, df=2, alpha=0.05.
        let expected = draws as Real / 3.0;
        let chi2: Real = counts
            .iter()
            .map(|&c| (c as Real - expected) * (c as Real - expected) / expected)
            .sum();
        assert!(chi2 < 5.991, "chi2 = {chi2}, counts = {counts:?}");
        for &c in &counts {
            let freq = c as Real / draws as Real;
            assert!((freq - 1.0 / 3.0).abs() <= 0.02, "size freq {freq}");
        }
    }

    #[test]
    fn candidate_stream_is_deterministic() {
        let mut a = derive_rng(3, "cand", 5);
        let mut b = derive_rng(3, "cand", 5);
        for _ in 0..50 {
            assert_eq!(sample_candidate(&mut a, 12, 3), sample_candidate(&mut b, 12, 3));
        }
    }

    #[test]
    fn frequency_table_all_rows_distinct() {
        let rows: Vec<Vec<u32>> = (0..6).map(|i| vec![i, i + 1]).collect();
        let ds = dataset(&rows, &[0, 1, 0, 1, 0, 1]);
        let ss = Subspace::new(vec![0, 1]).unwrap();
        let table = build_frequency_table(&ss, &ds, 2).unwrap();
        assert_eq!(table.distinct_tuples(), 6);
        for (_, counts) in table.iter() {
            assert_eq!(counts.iter().sum::<u64>(), 1);
        }
    }

    #[test]
    fn frequency_table_constant_feature() {
        let rows: Vec<Vec<u32>> = (0..5).map(|_| vec![7]).collect();
        let ds = dataset(&rows, &[0, 0, 1, 1, 1]);
        let ss = Subspace::single(0);
        let table = build_frequency_table(&ss, &ds, 2).unwrap();
        assert_eq!(table.distinct_tuples(), 1);
        assert_eq!(table.lookup(&[7]).unwrap(), &[2, 3]);
        assert_eq!(table.class_totals(), &[2, 3]);
    }

    #[test]
    fn frequency_table_margin_identities_fuzzed() {
        for seed in 0..20u64 {
            let mut rng = derive_rng(seed, "fuzz", 0);
            let n = rng.gen_range(2..40);
            let d = rng.gen_range(1..6);
            let k = rng.gen_range(2..5);
            let rows: Vec<Vec<u32>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(0..4u32)).collect())
                .collect();
            let classes: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();
            let ds = dataset(&rows, &classes);
            let ss = sample_candidate(&mut rng, d, d.min(3));
            let table = build_frequency_table(&ss, &ds, k).unwrap();
            let mut per_class = vec![0u64; k];
            let mut total = 0u64;
            for (_, counts) in table.iter() {
                for (h, &c) in counts.iter().enumerate() {
                    per_class[h] += c;
                }
                total += counts.iter().sum::<u64>();
            }
            assert_eq!(total, table.n());
            assert_eq!(per_class, table.class_totals());
            assert_eq!(table.class_totals().iter().sum::<u64>(), n as u64);
        }
    }

    #[test]
    fn relative_risk_examples() {
        assert_eq!(relative_risk(4, 4, 5, 10), 6.0);
        // Proportional occurrence carries no association.
        assert_eq!(relative_risk(2, 4, 4, 8), 1.0);
        // Tuple covering the whole dataset: smoothed, finite.
        let rr = relative_risk(3, 6, 3, 6);
        assert!(rr.is_finite() && rr > 0.0);
    }

    #[test]
    fn relative_risk_replication_invariance() {
        for (o_t_z, o_z, o_t, n) in [(3u64, 5u64, 6u64, 12u64), (1, 4, 3, 9), (2, 2, 5, 11)] {
            let once = relative_risk(o_t_z, o_z, o_t, n);
            let twice = relative_risk(2 * o_t_z, 2 * o_z, 2 * o_t, 2 * n);
            assert!((once - twice).abs() < 1e-12);
        }
    }

    #[test]
    fn average_relative_risk_matches_recount_oracle() {
        let rows = vec![
            vec![0, 0],
            vec![0, 1],
            vec![0, 0],
            vec![1, 1],
            vec![1, 0],
            vec![1, 1],
            vec![0, 1],
            vec![1, 1],
        ];
        let classes = [0, 0, 1, 1, 0, 1, 1, 0];
        let ds = dataset(&rows, &classes);
        let ss = Subspace::new(vec![0, 1]).unwrap();
        let table = build_frequency_table(&ss, &ds, 2).unwrap();
        let got = average_relative_risk(&table);

        // Independent recount: group rows by projected tuple by hand.
        let mut groups: std::collections::BTreeMap<(u32, u32), Vec<usize>> = Default::default();
        for (i, row) in rows.iter().enumerate() {
            groups.entry((row[0], row[1])).or_default().push(i);
        }
        let o_t_all = [classes.iter().filter(|&&c| c == 0).count() as u64,
                       classes.iter().filter(|&&c| c == 1).count() as u64];
        let mut sum = 0.0;
        for rows_in_group in groups.values() {
            let c0 = rows_in_group.iter().filter(|&&i| classes[i] == 0).count() as u64;
            let c1 = rows_in_group.iter().filter(|&&i| classes[i] == 1).count() as u64;
            let (c_t, o_t_z) = if c1 > c0 { (1, c1) } else { (0, c0) };
            sum += relative_risk(o_t_z, c0 + c1, o_t_all[c_t], 8);
        }
        let want = sum / groups.len() as Real;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn average_of_two_tuples_is_their_mean() {
        // Tuple A: 4 of 4 in class 0 (RR 6 with o_t=5, n=10 margins as in
        // the direct example); build an 10-sample dataset realizing it.
        let rows = vec![
            vec![0], vec![0], vec![0], vec![0], // tuple 0, class 0
            vec![1], vec![1], vec![1], vec![1], vec![1], vec![1], // tuple 1
        ];
        let classes = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let ds = dataset(&rows, &classes);
        let table = build_frequency_table(&Subspace::single(0), &ds, 2).unwrap();
        let rr_a = relative_risk(4, 4, 5, 10);
        let rr_b = relative_risk(5, 6, 5, 10);
        let want = (rr_a + rr_b) / 2.0;
        assert!((average_relative_risk(&table) - want).abs() < 1e-12);
    }

    #[test]
    fn select_best_prefers_highest_score_and_first_tie() {
        // Feature 0 separates classes perfectly; feature 1 is noise;
        // feature 2 duplicates feature 0.
        let rows = vec![
            vec![0, 0, 0],
            vec![0, 1, 0],
            vec![1, 0, 1],
            vec![1, 1, 1],
        ];
        let ds = dataset(&rows, &[0, 0, 1, 1]);
        let candidates = vec![
            Subspace::single(1),
            Subspace::single(0),
            Subspace::single(2),
        ];
        let (best, table) = select_best(&candidates, &ds, 2).unwrap();
        assert_eq!(best.features(), &[0]); // ties with feature 2, first wins
        assert_eq!(table.distinct_tuples(), 2);

        let single = select_best(&candidates[..1], &ds, 2).unwrap().0;
        assert_eq!(single.features(), &[1]);
    }

    #[test]
    fn select_best_score_dominates_all_candidates() {
        let mut rng = derive_rng(11, "dom", 0);
        let rows: Vec<Vec<u32>> = (0..30)
            .map(|_| (0..4).map(|_| rng.gen_range(0..3u32)).collect())
            .collect();
        let classes: Vec<u32> = (0..30).map(|_| rng.gen_range(0..2u32)).collect();
        let ds = dataset(&rows, &classes);
        let candidates: Vec<Subspace> =
            (0..8).map(|_| sample_candidate(&mut rng, 4, 2)).collect();
        let (_, best_table) = select_best(&candidates, &ds, 2).unwrap();
        let best_score = average_relative_risk(&best_table);
        for c in &candidates {
            let t = build_frequency_table(c, &ds, 2).unwrap();
            assert!(average_relative_risk(&t) <= best_score + 1e-12);
        }
    }
}
