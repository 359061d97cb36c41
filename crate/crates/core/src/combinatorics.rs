//! Log-space combinatorial kernels with shared caches.
//!
//! `ln n!` is tabulated up to [`FACTORIAL_TABLE_LIMIT`] with compensated
//! accumulation and falls back to the Stirling series beyond it. Rows of
//! `ln B(n, k) = ln Σ_{j≤k} S(n, j)` are cached per `n`: exact log-space
//! recurrence up to `exact_stirling_limit`, saddle-point estimate above.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_add_exp, CompensatedSum, Real};

/// Largest `n` whose `ln n!` is tabulated (16 MiB of `f64`).
pub const FACTORIAL_TABLE_LIMIT: u64 = 1 << 21;

/// Vertex count above which cumulative Stirling rows use the saddle-point estimate.
pub const DEFAULT_EXACT_STIRLING_LIMIT: usize = 50_000;

/// Which evaluation produced a cumulative Stirling row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StirlingPath {
    #[default]
    Exact,
    Approximate,
}

impl StirlingPath {
    pub fn combine(self, other: Self) -> Self {
        if self == StirlingPath::Approximate || other == StirlingPath::Approximate {
            StirlingPath::Approximate
        } else {
            StirlingPath::Exact
        }
    }
}

/// `ln B(n, k)` for `k = 0..=n` (index 0 holds `-inf`).
#[derive(Clone, Debug)]
pub struct StirlingRow<T> {
    pub log_b: Vec<T>,
    pub path: StirlingPath,
}

struct FactorialCache<T> {
    values: Arc<Vec<T>>,
    acc: CompensatedSum<T>,
}

/// Read-only snapshot of the log-factorial table for hot loops.
#[derive(Clone, Debug)]
pub struct LogFactorials<T> {
    values: Arc<Vec<T>>,
}

impl<T: Real> LogFactorials<T> {
    #[inline]
    pub fn get(&self, n: u64) -> T {
        match self.values.get(n as usize) {
            Some(&v) => v,
            None => stirling_series(n),
        }
    }

    /// `ln C(n, k)` without range checks; callers guarantee `k <= n`.
    #[inline]
    pub fn binomial(&self, n: u64, k: u64) -> T {
        self.get(n) - self.get(k) - self.get(n - k)
    }

    /// `ln C(d + m - 1, m - 1)`: ways to spread `d` units over `m >= 1` bins.
    #[inline]
    pub fn multiset(&self, d: u64, m: u64) -> T {
        self.binomial(d + m - 1, m - 1)
    }
}

/// `ln n!` by the Stirling series; accurate to double precision for `n >= 20`.
fn stirling_series<T: Real>(n: u64) -> T {
    let x = T::from_count(n);
    let x2 = x * x;
    let x3 = x2 * x;
    let correction = T::one() / (T::lit(12.0) * x) - T::one() / (T::lit(360.0) * x3)
        + T::one() / (T::lit(1260.0) * x3 * x2)
        - T::one() / (T::lit(1680.0) * x3 * x3 * x);
    x * x.ln() - x + T::lit(0.5) * (T::TAU() * x).ln() + correction
}

/// Shared, internally synchronized cache of combinatorial quantities.
pub struct CombinatoricsTable<T> {
    factorials: RwLock<FactorialCache<T>>,
    stirling: RwLock<HashMap<usize, Arc<StirlingRow<T>>>>,
    exact_stirling_limit: usize,
}

impl<T: Real> Default for CombinatoricsTable<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> std::fmt::Debug for CombinatoricsTable<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CombinatoricsTable")
            .field("factorials", &self.factorials.read().unwrap().values.len())
            .field("exact_stirling_limit", &self.exact_stirling_limit)
            .finish()
    }
}

impl<T: Real> CombinatoricsTable<T> {
    pub fn new() -> Self {
        Self::with_exact_stirling_limit(DEFAULT_EXACT_STIRLING_LIMIT)
    }

    pub fn with_exact_stirling_limit(limit: usize) -> Self {
        Self {
            factorials: RwLock::new(FactorialCache { values: Arc::new(vec![T::zero()]), acc: CompensatedSum::new() }),
            stirling: RwLock::new(HashMap::new()),
            exact_stirling_limit: limit,
        }
    }

    /// Grows the factorial table (geometrically) so that it covers `n`.
    fn ensure(&self, n: u64) {
        let want = n.min(FACTORIAL_TABLE_LIMIT) as usize;
        if self.factorials.read().unwrap().values.len() > want {
            return;
        }
        let mut cache = self.factorials.write().unwrap();
        let len = cache.values.len();
        if len > want {
            return;
        }
        let new_len = (want + 1).max(2 * len).min(FACTORIAL_TABLE_LIMIT as usize + 1);
        let mut values = Vec::with_capacity(new_len);
        values.extend_from_slice(&cache.values);
        let mut acc = cache.acc;
        for k in len..new_len {
            acc.add(T::from_count(k as u64).ln());
            values.push(acc.value());
        }
        cache.values = Arc::new(values);
        cache.acc = acc;
    }

    /// A lock-free view that is exact (tabulated) up to at least `n`.
    pub fn snapshot(&self, n: u64) -> LogFactorials<T> {
        self.ensure(n);
        LogFactorials { values: self.factorials.read().unwrap().values.clone() }
    }

    pub fn log_factorial(&self, n: u64) -> T {
        if n > FACTORIAL_TABLE_LIMIT {
            return stirling_series(n);
        }
        self.ensure(n);
        self.factorials.read().unwrap().values[n as usize]
    }

    pub fn log_binomial(&self, n: u64, k: u64) -> Result<T> {
        if k > n {
            return Err(Error::OutOfRange(format!("binomial C({n}, {k}) needs k <= n")));
        }
        Ok(self.log_factorial(n) - self.log_factorial(k) - self.log_factorial(n - k))
    }

    /// Signed variant matching the operation contract (`k < 0` is an error).
    pub fn log_binomial_signed(&self, n: i64, k: i64) -> Result<T> {
        if n < 0 || k < 0 {
            return Err(Error::OutOfRange(format!("binomial C({n}, {k}) needs non-negative arguments")));
        }
        self.log_binomial(n as u64, k as u64)
    }

    /// `ln B(n, k)`, the log of the number of partitions of `n` items into at
    /// most `k` non-empty blocks.
    pub fn log_cumulative_stirling(&self, n: usize, k: usize) -> Result<T> {
        if k == 0 || k > n {
            return Err(Error::OutOfRange(format!("B({n}, {k}) needs 1 <= k <= n")));
        }
        Ok(self.stirling_row(n).log_b[k])
    }

    pub fn stirling_row(&self, n: usize) -> Arc<StirlingRow<T>> {
        if let Some(row) = self.stirling.read().unwrap().get(&n) {
            return row.clone();
        }
        let row = Arc::new(if n <= self.exact_stirling_limit {
            exact_stirling_row(n)
        } else {
            approximate_stirling_row(n, &self.snapshot(n as u64))
        });
        self.stirling.write().unwrap().entry(n).or_insert(row).clone()
    }
}

/// Cumulates `ln S(n, k)` over `k` into `ln B(n, k)`.
fn cumulate<T: Real>(log_s: &[T], path: StirlingPath) -> StirlingRow<T> {
    let mut log_b = Vec::with_capacity(log_s.len());
    let mut acc = T::neg_infinity();
    for &s in log_s {
        acc = log_add_exp(acc, s);
        log_b.push(acc);
    }
    StirlingRow { log_b, path }
}

/// `S(m, k) = k S(m-1, k) + S(m-1, k-1)` in log space; O(n²).
fn exact_stirling_row<T: Real>(n: usize) -> StirlingRow<T> {
    let logs: Vec<T> = (0..=n).map(|k| T::from_count(k as u64).ln()).collect();
    let mut row = vec![T::neg_infinity(); n + 1];
    row[0] = T::zero();
    for m in 1..=n {
        for k in (1..=m).rev() {
            row[k] = log_add_exp(logs[k] + row[k], row[k - 1]);
        }
        row[0] = T::neg_infinity();
    }
    cumulate(&row, StirlingPath::Exact)
}

/// Saddle-point estimate of `ln S(n, k)` from `S(n,k) = n!/k! [z^n] (e^z - 1)^k`.
pub(crate) fn saddle_log_stirling<T: Real>(n: u64, k: u64, lf: &LogFactorials<T>) -> T {
    if k == 0 {
        return if n == 0 { T::zero() } else { T::neg_infinity() };
    }
    if k > n {
        return T::neg_infinity();
    }
    if k == 1 || k == n {
        return T::zero();
    }
    if k == n - 1 {
        return lf.binomial(n, 2);
    }
    let r = T::from_count(n) / T::from_count(k);
    // x - r (1 - e^{-x}) is convex and positive at x = r, so Newton from the
    // right converges monotonically to the positive root.
    let mut x = r;
    for _ in 0..200 {
        let e = (-x).exp();
        let g = x - r * (T::one() - e);
        let dg = T::one() - r * e;
        let step = g / dg;
        x = x - step;
        if step.abs() <= T::epsilon() * x {
            break;
        }
    }
    let kf = T::from_count(k);
    let nf = T::from_count(n);
    let e = (-x).exp();
    let one_minus_e = -(-x).exp_m1();
    let log_e_x_minus_1 = x + (-e).ln_1p();
    let b = kf * x * (one_minus_e - x * e) / (one_minus_e * one_minus_e);
    lf.get(n) - lf.get(k) + kf * log_e_x_minus_1 - nf * x.ln() - T::lit(0.5) * (T::TAU() * b).ln()
}

fn approximate_stirling_row<T: Real>(n: usize, lf: &LogFactorials<T>) -> StirlingRow<T> {
    let log_s: Vec<T> = (0..=n as u64).map(|k| saddle_log_stirling(n as u64, k, lf)).collect();
    cumulate(&log_s, StirlingPath::Approximate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_factorials() {
        let t = CombinatoricsTable::<f64>::new();
        assert_eq!(t.log_factorial(0), 0.0);
        assert_eq!(t.log_factorial(1), 0.0);
        assert!((t.log_factorial(5) - 120f64.ln()).abs() < 1e-14);
        assert!((t.log_factorial(5) - 4.787_491_742_782_046).abs() < 1e-12);
    }

    #[test]
    fn stirling_series_joins_the_table() {
        let t = CombinatoricsTable::<f64>::new();
        for n in [30u64, 1000, 123_456, FACTORIAL_TABLE_LIMIT] {
            let tab = t.log_factorial(n);
            let ser: f64 = stirling_series(n);
            assert!(((tab - ser) / tab).abs() < 1e-13, "n={n}: {tab} vs {ser}");
        }
        // past the table the series is used directly
        let big = t.log_factorial(FACTORIAL_TABLE_LIMIT * 4);
        assert!(big.is_finite() && big > 0.0);
    }

    #[test]
    fn binomial_edges_and_errors() {
        let t = CombinatoricsTable::<f64>::new();
        assert_eq!(t.log_binomial(7, 0).unwrap(), 0.0);
        assert!((t.log_binomial(4, 2).unwrap() - 6f64.ln()).abs() < 1e-14);
        assert!(t.log_binomial(3, 4).is_err());
        assert!(t.log_binomial_signed(3, -1).is_err());
    }

    #[test]
    fn cumulative_stirling_small_values() {
        let t = CombinatoricsTable::<f64>::new();
        for n in 1..20 {
            assert_eq!(t.log_cumulative_stirling(n, 1).unwrap(), 0.0);
        }
        // S(3,1) + S(3,2) = 1 + 3
        assert!((t.log_cumulative_stirling(3, 2).unwrap() - 4f64.ln()).abs() < 1e-14);
        // Bell(3) = 5
        assert!((t.log_cumulative_stirling(3, 3).unwrap() - 5f64.ln()).abs() < 1e-14);
        assert!(t.log_cumulative_stirling(3, 0).is_err());
        assert!(t.log_cumulative_stirling(3, 4).is_err());
        assert_eq!(t.stirling_row(3).path, StirlingPath::Exact);
    }

    #[test]
    fn cumulative_stirling_is_non_decreasing() {
        let t = CombinatoricsTable::<f64>::new();
        let row = t.stirling_row(60);
        for k in 2..=60 {
            assert!(row.log_b[k] >= row.log_b[k - 1]);
        }
    }

    #[test]
    fn saddle_point_tracks_the_exact_row() {
        let exact = CombinatoricsTable::<f64>::new();
        let approx = CombinatoricsTable::<f64>::with_exact_stirling_limit(10);
        let n = 400;
        let e = exact.stirling_row(n);
        let a = approx.stirling_row(n);
        assert_eq!(a.path, StirlingPath::Approximate);
        for k in 1..=n {
            let rel = ((e.log_b[k] - a.log_b[k]) / e.log_b[k].max(1.0)).abs();
            assert!(rel < 1e-3, "k={k}: exact {} approx {}", e.log_b[k], a.log_b[k]);
        }
    }

    #[test]
    fn single_precision_instantiation() {
        let t = CombinatoricsTable::<f32>::new();
        assert!((t.log_factorial(10) - 3_628_800f32.ln()).abs() < 1e-4);
        assert!((t.log_cumulative_stirling(4, 4).unwrap() - 15f32.ln()).abs() < 1e-5);
    }
}
