//! Exact small-sample statistics.
//!
//! Everything here is computed from a precomputed log-factorial table:
//! hypergeometric tail probabilities (one-sided Fisher's exact test on a
//! 2x2 contingency table), the regularized incomplete beta function at
//! integer parameters (evaluated exactly as a binomial tail), chi-square
//! survival at even degrees of freedom, and the p-value combination
//! methods used to merge per-subspace test results.
//!
//! Tail sums are exact (every admissible term is added in log space); no
//! upper-bound approximation is applied.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to p-values entering Fisher's combiner before taking logs.
const FISHER_LOG_FLOOR: f64 = 1e-300;

/// Precomputed `ln(i!)` for `i = 0..=n_max`.
///
/// Values are built with compensated summation so entry `i` is a pure
/// function of `i`, independent of how the table was grown.
#[derive(Debug, Clone)]
pub struct LogFactorials<S> {
    values: Vec<S>,
}

impl<S: Scalar> LogFactorials<S> {
    pub fn up_to(n_max: usize) -> Self {
        let mut values = Vec::with_capacity(n_max + 1);
        values.push(S::zero()); // ln(0!) = 0
        let mut sum = S::zero();
        let mut comp = S::zero();
        for i in 1..=n_max {
            let y = S::from_index(i).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            values.push(sum);
        }
        LogFactorials { values }
    }

    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    #[inline]
    pub fn ln_factorial(&self, i: u64) -> S {
        self.values[i as usize]
    }

    /// `ln C(n, k)`; requires `k <= n <= n_max`.
    #[inline]
    pub fn ln_binomial(&self, n: u64, k: u64) -> S {
        debug_assert!(k <= n, "ln_binomial: k > n");
        self.ln_factorial(n) - self.ln_factorial(k) - self.ln_factorial(n - k)
    }
}

/// Lazily grown, shareable log-factorial table.
///
/// Growth is grow-then-publish: a full replacement table is built and then
/// swapped in, so readers holding a snapshot never observe a partial table,
/// and entry values do not depend on the growth history.
#[derive(Debug)]
pub struct SharedLogFactorials<S> {
    slot: Mutex<Arc<LogFactorials<S>>>,
}

impl<S: Scalar> SharedLogFactorials<S> {
    pub fn new() -> Self {
        SharedLogFactorials {
            slot: Mutex::new(Arc::new(LogFactorials::up_to(0))),
        }
    }

    /// Snapshot covering factorials at least up to `n`.
    pub fn at_least(&self, n: usize) -> Arc<LogFactorials<S>> {
        let mut slot = self.slot.lock().expect("log-factorial lock");
        if slot.n_max() < n {
            let new_max = n.max(slot.n_max().saturating_mul(2)).max(16);
            *slot = Arc::new(LogFactorials::up_to(new_max));
        }
        Arc::clone(&slot)
    }
}

impl<S: Scalar> Default for SharedLogFactorials<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// 2x2 contingency table for one (subspace, class) association test.
///
/// `a` counts samples matching both the projected tuple (E=1) and the class
/// (C=1); `b` is E=1,C=0; `c` is E=0,C=1; `d` is E=0,C=0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable2x2 { a, b, c, d }
    }

    /// Build from the cell `a` and the margins (tuple total `o_z`, class
    /// total `o_j`, grand total `n`).
    pub fn from_margins(a: u64, o_z: u64, o_j: u64, n: u64) -> Result<Self> {
        if a > o_z || a > o_j || o_z > n || o_j > n || o_j + o_z - a > n {
            return Err(Error::arg(format!(
                "inconsistent contingency margins: a={a}, o_z={o_z}, o_j={o_j}, n={n}"
            )));
        }
        Ok(ContingencyTable2x2 {
            a,
            b: o_z - a,
            c: o_j - a,
            d: n - o_z - (o_j - a),
        })
    }

    /// Tuple-occurrence margin `o(z) = a + b`.
    pub fn tuple_total(&self) -> u64 {
        self.a + self.b
    }

    /// Class margin `o_j = a + c`.
    pub fn class_total(&self) -> u64 {
        self.a + self.c
    }

    pub fn grand_total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// Hypergeometric mass `P(X = x)` for a draw of `o_z` from a population of
/// `n` containing `o_j` marked items: `C(o_j,x) C(n-o_j, o_z-x) / C(n,o_z)`.
pub fn hypergeom_pmf<S: Scalar>(
    x: u64,
    n: u64,
    o_j: u64,
    o_z: u64,
    lnf: &LogFactorials<S>,
) -> Result<S> {
    if o_j > n || o_z > n {
        return Err(Error::arg(format!(
            "hypergeometric margins exceed total: o_j={o_j}, o_z={o_z}, n={n}"
        )));
    }
    if x > o_j.min(o_z) {
        return Err(Error::arg(format!(
            "hypergeometric value out of range: x={x}, min margin={}",
            o_j.min(o_z)
        )));
    }
    // Below the admissible range the mass is zero.
    if o_z - x > n - o_j {
        return Ok(S::zero());
    }
    let ln_p = lnf.ln_binomial(o_j, x) + lnf.ln_binomial(n - o_j, o_z - x)
        - lnf.ln_binomial(n, o_z);
    Ok(ln_p.exp().min(S::one()))
}

/// One-sided upper-tail p-value of Fisher's exact test: the probability of
/// observing a count at least as large as `a` given the table's margins.
pub fn fisher_upper_tail<S: Scalar>(
    table: &ContingencyTable2x2,
    lnf: &LogFactorials<S>,
) -> Result<S> {
    let n = table.grand_total();
    let o_z = table.tuple_total();
    let o_j = table.class_total();
    let x_max = o_z.min(o_j);
    let mut p = S::zero();
    for x in table.a..=x_max {
        p = p + hypergeom_pmf(x, n, o_j, o_z, lnf)?;
    }
    Ok(p.min(S::one()))
}

/// Regularized incomplete beta function `I_t(r, b - r + 1)` at integer
/// parameters, evaluated exactly as the binomial upper tail
/// `sum_{i=r}^{b} C(b,i) t^i (1-t)^{b-i}`.
///
/// This is the CDF at `t` of the r-th order statistic of `b` independent
/// Uniform(0,1) variables.
pub fn beta_cdf_int<S: Scalar>(t: S, r: usize, b: usize, lnf: &LogFactorials<S>) -> S {
    assert!(r >= 1 && r <= b, "beta_cdf_int: need 1 <= r <= b, got r={r}, b={b}");
    if t <= S::zero() {
        return S::zero();
    }
    if t >= S::one() {
        return S::one();
    }
    let ln_t = t.ln();
    let ln_1mt = (S::one() - t).ln();
    let mut sum = S::zero();
    for i in r..=b {
        let tail = b - i;
        let mut ln_term = lnf.ln_binomial(b as u64, i as u64) + S::from_index(i) * ln_t;
        if tail > 0 {
            ln_term = ln_term + S::from_index(tail) * ln_1mt;
        }
        sum = sum + ln_term.exp();
    }
    sum.min(S::one()).max(S::zero())
}

/// Survival function of the chi-square distribution at even degrees of
/// freedom: `exp(-x/2) * sum_{i=0}^{df/2-1} (x/2)^i / i!`, evaluated with a
/// streaming log-sum-exp so large statistics cannot overflow.
pub fn chi2_survival_even_df<S: Scalar>(x: S, df: usize) -> S {
    assert!(df >= 2 && df % 2 == 0, "chi2_survival_even_df: df must be even and >= 2");
    if x <= S::zero() {
        return S::one();
    }
    let half_x = x / S::from_index(2);
    let ln_half_x = half_x.ln();
    let mut max_ln = S::neg_infinity();
    let mut scaled_sum = S::zero();
    let mut ln_fact_i = S::zero();
    for i in 0..df / 2 {
        if i > 0 {
            ln_fact_i = ln_fact_i + S::from_index(i).ln();
        }
        let ln_term = -half_x + S::from_index(i) * ln_half_x - ln_fact_i;
        if ln_term <= max_ln {
            scaled_sum = scaled_sum + (ln_term - max_ln).exp();
        } else {
            scaled_sum = scaled_sum * (max_ln - ln_term).exp() + S::one();
            max_ln = ln_term;
        }
    }
    if max_ln == S::neg_infinity() {
        return S::zero();
    }
    (max_ln + scaled_sum.ln()).exp().min(S::one()).max(S::zero())
}

/// P-value combination method for merging per-subspace results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    /// r-th ordered p-value against its Beta(r, B-r+1) null.
    Rop,
    /// Fisher's method: -2 sum(ln p) against chi-square with 2B df.
    Fisher,
    /// Smallest p-value against its Beta(1, B) null.
    MinP,
    /// Largest p-value against its Beta(B, 1) null.
    MaxP,
}

impl Combiner {
    pub const ALL: [Combiner; 4] = [Combiner::Rop, Combiner::Fisher, Combiner::MinP, Combiner::MaxP];

    pub fn as_str(&self) -> &'static str {
        match self {
            Combiner::Rop => "rop",
            Combiner::Fisher => "fisher",
            Combiner::MinP => "minp",
            Combiner::MaxP => "maxp",
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rop" => Ok(Combiner::Rop),
            "fisher" => Ok(Combiner::Fisher),
            "minp" => Ok(Combiner::MinP),
            "maxp" => Ok(Combiner::MaxP),
            other => Err(Error::arg(format!(
                "unknown combiner {other:?} (expected rop, fisher, minp or maxp)"
            ))),
        }
    }
}

fn require_nonempty<S>(pvals: &[S]) -> Result<()> {
    if pvals.is_empty() {
        Err(Error::arg("cannot combine an empty p-value list"))
    } else {
        Ok(())
    }
}

/// Consensus p-value of the r-th ordered p-value method: the Beta CDF of
/// the r-th smallest input under the joint null.
pub fn combine_rop<S: Scalar>(pvals: &[S], r: usize, lnf: &LogFactorials<S>) -> Result<S> {
    require_nonempty(pvals)?;
    if r < 1 || r > pvals.len() {
        return Err(Error::arg(format!(
            "rank {r} out of range for {} p-values",
            pvals.len()
        )));
    }
    let mut sorted = pvals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("p-values must not be NaN"));
    Ok(beta_cdf_int(sorted[r - 1], r, pvals.len(), lnf))
}

/// Fisher's method. Zero inputs are floored before the log so the statistic
/// stays finite.
pub fn combine_fisher<S: Scalar>(pvals: &[S]) -> Result<S> {
    require_nonempty(pvals)?;
    let floor = S::from_f64(FISHER_LOG_FLOOR)
        .filter(|v| *v > S::zero())
        .unwrap_or_else(S::min_positive_value);
    let two = S::from_index(2);
    let stat: S = pvals.iter().map(|&p| -two * p.max(floor).ln()).sum();
    Ok(chi2_survival_even_df(stat, 2 * pvals.len()))
}

/// minP: `1 - (1 - p_(1))^B`, the Beta(1, B) CDF of the smallest input.
pub fn combine_minp<S: Scalar>(pvals: &[S]) -> Result<S> {
    require_nonempty(pvals)?;
    let min = pvals.iter().cloned().fold(S::infinity(), S::min);
    let b = S::from_index(pvals.len());
    let out = -(b * (-min).ln_1p()).exp_m1();
    Ok(out.min(S::one()).max(S::zero()))
}

/// maxP: `p_(B)^B`, the Beta(B, 1) CDF of the largest input.
pub fn combine_maxp<S: Scalar>(pvals: &[S]) -> Result<S> {
    require_nonempty(pvals)?;
    let max = pvals.iter().cloned().fold(S::neg_infinity(), S::max);
    Ok(max.powi(pvals.len() as i32).min(S::one()).max(S::zero()))
}

/// Dispatch on the combiner; `rank` is required (and only used) for rOP.
pub fn combine<S: Scalar>(
    method: Combiner,
    pvals: &[S],
    rank: Option<usize>,
    lnf: &LogFactorials<S>,
) -> Result<S> {
    match method {
        Combiner::Rop => {
            let r = rank.ok_or_else(|| Error::arg("rop combiner requires a rank"))?;
            combine_rop(pvals, r, lnf)
        }
        Combiner::Fisher => combine_fisher(pvals),
        Combiner::MinP => combine_minp(pvals),
        Combiner::MaxP => combine_maxp(pvals),
    }
}
