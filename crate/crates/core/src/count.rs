//! Grid-mapping pseudo-counts.
//!
//! Continuous state-action pairs are discretized per dimension into `G`
//! partitions of the dataset range, wrapped modulo `M·G` so that points far
//! outside the data land in buckets the data never occupies, and then packed
//! into an integer code that keys a visit-count table. The count feeds the
//! penalty `κ·sqrt(ln T / n)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::error::{Error, Result};

/// Padding added to every action range so that constant action dimensions
/// still have a nonzero width.
pub const ACTION_RANGE_PAD: f64 = 1e-6;
/// State dimensions narrower than this are not gridded.
pub const DEGENERATE_WIDTH: f64 = 1e-12;
pub const SNAPSHOT_VERSION: u32 = 1;

/// How bucket digits are packed into a single code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// `Σ s'_i·(G^i + 1) + Σ a'_j·(G^(n_s - 1 + j) + 1)`. Distinct buckets can
    /// share a code.
    #[serde(alias = "paper")]
    WeightedSum,
    /// Mixed-radix with base `M·G` per digit; collision-free.
    #[default]
    Radix,
}

/// How the state part of a cell is identified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateMode {
    /// Grid states exactly like actions.
    #[default]
    Grid,
    /// Key the state part by the index of the (exact) dataset state.
    Id,
}

/// Per-dimension discretization of the state-action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub state_dims: usize,
    pub action_dims: usize,
    /// Dataset minima, states first then actions.
    pub lo: Vec<f64>,
    /// Dataset maxima, states first then actions.
    pub hi: Vec<f64>,
    pub partitions: u32,
    pub margin: u32,
    /// Whether each state dimension is gridded.
    pub mapped: Vec<bool>,
    pub encoding: EncodingMode,
}

/// Digits of a discretized state-action pair, one per gridded dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketVector(pub Vec<u32>);

impl GridSpec {
    /// Builds the grid from the exact per-dimension extremes of the dataset's
    /// states and actions.
    pub fn from_dataset(
        dataset: &TransitionDataset,
        partitions: u32,
        margin: u32,
        encoding: EncodingMode,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Config("cannot build a grid from an empty dataset".into()));
        }
        if partitions == 0 || margin == 0 {
            return Err(Error::Config(format!(
                "partitions and margin must be at least 1 (got G={partitions}, M={margin})"
            )));
        }
        let stats = dataset.stats();
        let lo: Vec<f64> = stats.state_min.iter().chain(&stats.action_min).copied().collect();
        let hi: Vec<f64> = stats.state_max.iter().chain(&stats.action_max).copied().collect();
        let mapped = stats
            .state_min
            .iter()
            .zip(&stats.state_max)
            .map(|(lo, hi)| hi - lo >= DEGENERATE_WIDTH)
            .collect();
        Ok(Self {
            state_dims: dataset.state_dim(),
            action_dims: dataset.action_dim(),
            lo,
            hi,
            partitions,
            margin,
            mapped,
            encoding,
        })
    }

    pub fn mapped_state_dims(&self) -> usize {
        self.mapped.iter().filter(|m| **m).count()
    }

    /// Number of digits in a full bucket vector.
    pub fn digit_count(&self) -> usize {
        self.mapped_state_dims() + self.action_dims
    }

    /// Number of distinct values a digit can take.
    pub fn digit_base(&self) -> u64 {
        self.partitions as u64 * self.margin as u64
    }

    /// Width used to scale dimension `k` (states first, then actions).
    fn width(&self, k: usize) -> f64 {
        let w = self.hi[k] - self.lo[k];
        if k >= self.state_dims {
            w + ACTION_RANGE_PAD
        } else {
            w
        }
    }

    fn digit(&self, k: usize, x: f64) -> Result<u32> {
        if !x.is_finite() {
            return Err(Error::Input(format!("non-finite component {x} in dimension {k}")));
        }
        let g = self.partitions as f64;
        let (lo, hi) = (self.lo[k], self.hi[k]);
        let mut raw = (g * (x - lo) / self.width(k)).floor();
        if (lo..=hi).contains(&x) {
            raw = raw.clamp(0.0, g - 1.0);
        }
        // exact for the integral values produced by floor
        Ok(raw.rem_euclid(self.digit_base() as f64) as u32)
    }

    /// Digits of the gridded state dimensions.
    pub fn state_digits(&self, state: &[f64]) -> Result<Vec<u32>> {
        if state.len() != self.state_dims {
            return Err(Error::Shape {
                expected: format!("state of length {}", self.state_dims),
                got: state.len().to_string(),
            });
        }
        state
            .iter()
            .enumerate()
            .filter(|(i, _)| self.mapped[*i])
            .map(|(i, &x)| self.digit(i, x))
            .collect()
    }

    pub fn action_digits(&self, action: &[f64]) -> Result<Vec<u32>> {
        if action.len() != self.action_dims {
            return Err(Error::Shape {
                expected: format!("action of length {}", self.action_dims),
                got: action.len().to_string(),
            });
        }
        action
            .iter()
            .enumerate()
            .map(|(j, &x)| self.digit(self.state_dims + j, x))
            .collect()
    }

    /// Discretizes a state-action pair.
    pub fn encode(&self, state: &[f64], action: &[f64]) -> Result<BucketVector> {
        let mut digits = self.state_digits(state)?;
        digits.extend(self.action_digits(action)?);
        Ok(BucketVector(digits))
    }

    /// Packs a bucket vector into an integer, or `None` if the code does not
    /// fit in 64 bits.
    pub fn code(&self, bucket: &BucketVector) -> Option<u64> {
        let n_state = bucket.0.len().saturating_sub(self.action_dims);
        match self.encoding {
            EncodingMode::Radix => radix_code(&bucket.0, |_| self.digit_base()),
            EncodingMode::WeightedSum => weighted_sum_code(&bucket.0, n_state, self.partitions as u64),
        }
    }

    /// Code for a bucket whose first digit is a dataset state index drawn from
    /// `n_states` values; the remaining digits are action digits.
    pub fn code_with_state_id(&self, bucket: &BucketVector, n_states: u64) -> Option<u64> {
        match self.encoding {
            EncodingMode::Radix => radix_code(&bucket.0, |k| {
                if k == 0 {
                    n_states.max(1)
                } else {
                    self.digit_base()
                }
            }),
            EncodingMode::WeightedSum => weighted_sum_code(&bucket.0, 1, self.partitions as u64),
        }
    }

    /// Size of the digit space `(M·G)^d` as a float (it can exceed `u64`).
    pub fn cell_space(&self) -> f64 {
        (self.digit_base() as f64).powi(self.digit_count() as i32)
    }
}

fn radix_code(digits: &[u32], base: impl Fn(usize) -> u64) -> Option<u64> {
    let mut code: u64 = 0;
    let mut scale: u64 = 1;
    for (k, &d) in digits.iter().enumerate() {
        code = code.checked_add(scale.checked_mul(d as u64)?)?;
        if k + 1 < digits.len() {
            scale = scale.checked_mul(base(k))?;
        }
    }
    Some(code)
}

/// Weighted digit sum. When no state digit is present the action
/// exponents start at zero.
fn weighted_sum_code(digits: &[u32], n_state: usize, g: u64) -> Option<u64> {
    let mut code: u64 = 0;
    for (k, &d) in digits.iter().enumerate() {
        let exp = if k < n_state { k } else { (n_state + (k - n_state)).saturating_sub(1) };
        let weight = g.checked_pow(exp as u32)?.checked_add(1)?;
        code = code.checked_add(weight.checked_mul(d as u64)?)?;
    }
    Some(code)
}

/// Key of a count-table cell: the packed code when it fits, otherwise the
/// digits themselves.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellKey {
    Code(u64),
    Digits(Vec<u32>),
}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (CellKey::Code(a), CellKey::Code(b)) => a.cmp(b),
            (CellKey::Digits(a), CellKey::Digits(b)) => a.cmp(b),
            (CellKey::Code(_), CellKey::Digits(_)) => Ordering::Less,
            (CellKey::Digits(_), CellKey::Code(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl CellKey {
    pub fn from_bucket(spec: &GridSpec, bucket: BucketVector) -> Self {
        match spec.code(&bucket) {
            Some(c) => CellKey::Code(c),
            None => CellKey::Digits(bucket.0),
        }
    }

    pub fn from_bucket_with_state_id(spec: &GridSpec, bucket: BucketVector, n_states: u64) -> Self {
        match spec.code_with_state_id(&bucket, n_states) {
            Some(c) => CellKey::Code(c),
            None => CellKey::Digits(bucket.0),
        }
    }
}

/// `κ·sqrt(ln T / n)` with `T` floored at 2 and `n` floored at 1.
pub fn uncertainty(kappa: f64, epoch: u64, count: u64) -> f64 {
    let t = epoch.max(2) as f64;
    let n = count.max(1) as f64;
    kappa * (t.ln() / n).sqrt()
}

/// Visit counts keyed by grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    counts: HashMap<CellKey, u64>,
    total: u64,
    epoch: u64,
    kappa: f64,
}

impl CountTable {
    pub fn new(kappa: f64) -> Self {
        Self {
            counts: HashMap::new(),
            total: 0,
            epoch: 1,
            kappa,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch.max(1);
    }

    /// Bumps the count of `key` and returns the new value.
    pub fn increment(&mut self, key: CellKey) -> u64 {
        self.total += 1;
        let c = self.counts.entry(key).or_insert(0);
        *c += 1;
        *c
    }

    pub fn pseudo_count(&self, key: &CellKey) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn uncertainty(&self, key: &CellKey) -> f64 {
        uncertainty(self.kappa, self.epoch, self.pseudo_count(key))
    }

    /// Sum of all counts, i.e. the number of increments performed.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// `(key, count)` pairs in key order.
    pub fn sorted_entries(&self) -> Vec<(CellKey, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, c)| (k.clone(), *c)).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Count value → number of cells holding it.
    pub fn histogram(&self) -> BTreeMap<u64, u64> {
        let mut h = BTreeMap::new();
        for c in self.counts.values() {
            *h.entry(*c).or_insert(0) += 1;
        }
        h
    }

    /// The `k` most visited cells, ties broken by key order.
    pub fn top_k(&self, k: usize) -> Vec<(CellKey, u64)> {
        let mut v = self.sorted_entries();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }
}

/// Serializable count table together with the grid that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSnapshot {
    pub version: u32,
    pub grid: GridSpec,
    pub state_mode: StateMode,
    pub epoch: u64,
    pub kappa: f64,
    pub total: u64,
    pub counts: Vec<(CellKey, u64)>,
}

impl CountSnapshot {
    pub fn new(grid: &GridSpec, state_mode: StateMode, table: &CountTable) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            grid: grid.clone(),
            state_mode,
            epoch: table.epoch,
            kappa: table.kappa,
            total: table.total,
            counts: table.sorted_entries(),
        }
    }

    pub fn into_table(self) -> Result<CountTable> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::Input(format!(
                "unsupported count snapshot version {}",
                self.version
            )));
        }
        let total: u64 = self.counts.iter().map(|(_, c)| c).sum();
        if total != self.total || self.counts.iter().any(|(_, c)| *c == 0) {
            return Err(Error::Input("count snapshot totals are inconsistent".into()));
        }
        Ok(CountTable {
            counts: self.counts.into_iter().collect(),
            total: self.total,
            epoch: self.epoch.max(1),
            kappa: self.kappa,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Counts every `(state, action)` pair of `dataset` once on `grid`.
pub fn ingest_dataset(grid: &GridSpec, dataset: &TransitionDataset, kappa: f64) -> Result<CountTable> {
    let mut table = CountTable::new(kappa);
    for t in dataset.transitions() {
        table.increment(CellKey::from_bucket(grid, grid.encode(&t.state, &t.action)?));
    }
    Ok(table)
}

/// Tabular lower-confidence-bound penalty computed through the feature
/// matrix. Every dataset visit of state-action `i` contributes the indicator
/// `e_i e_iᵀ` to `Λ = Σ e e ᵀ + λI`; the query feature is the indicator scaled
/// by `(ln T)^(1/4)`, and `Γ_i = φ_iᵀ Λ^(-1/2) φ_i`. Used only to cross-check
/// the closed form.
pub fn lcb_tabular_oracle(counts: &[u64], lambda: f64, epoch: u64) -> Result<Vec<f64>> {
    check_lcb_args(counts, lambda, epoch)?;
    let d = counts.len();
    let indicator = |i: usize| {
        let mut e = nalgebra::DVector::<f64>::zeros(d);
        e[i] = 1.0;
        e
    };
    let mut gram = nalgebra::DMatrix::<f64>::identity(d, d) * lambda;
    for (i, &n) in counts.iter().enumerate() {
        let e = indicator(i);
        let outer = &e * e.transpose();
        for _ in 0..n {
            gram += &outer;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let inv_sqrt = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let gram_inv_sqrt = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let scale = (epoch as f64).ln().powf(0.25);
    Ok((0..d)
        .map(|i| {
            let phi = indicator(i) * scale;
            (phi.transpose() * &gram_inv_sqrt * &phi)[(0, 0)]
        })
        .collect())
}

/// Closed form of [`lcb_tabular_oracle`]: `sqrt(ln T / (λ + n_i))`.
pub fn lcb_closed_form(counts: &[u64], lambda: f64, epoch: u64) -> Result<Vec<f64>> {
    check_lcb_args(counts, lambda, epoch)?;
    let ln_t = (epoch as f64).ln();
    Ok(counts.iter().map(|&n| (ln_t / (lambda + n as f64)).sqrt()).collect())
}

fn check_lcb_args(counts: &[u64], lambda: f64, epoch: u64) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::Input("no state-action counts".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Input(format!("lambda must be positive, got {lambda}")));
    }
    if epoch < 2 {
        return Err(Error::Input(format!("T must be at least 2, got {epoch}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;
    use proptest::prelude::*;

    fn dataset(rows: &[(&[f64], &[f64])]) -> TransitionDataset {
        TransitionDataset::new(
            rows.iter()
                .map(|(s, a)| Transition {
                    state: s.to_vec(),
                    action: a.to_vec(),
                    reward: 0.0,
                    next_state: s.to_vec(),
                    done: false,
                })
                .collect(),
        )
        .unwrap()
    }

    fn one_dim(g: u32, m: u32) -> GridSpec {
        GridSpec {
            state_dims: 1,
            action_dims: 0,
            lo: vec![0.0],
            hi: vec![10.0],
            partitions: g,
            margin: m,
            mapped: vec![true],
            encoding: EncodingMode::Radix,
        }
    }

    #[test]
    fn constant_state_dimension_is_unmapped() {
        let ds = dataset(&[(&[3.0, 0.0], &[0.0]), (&[3.0, 1.0], &[0.0])]);
        let spec = GridSpec::from_dataset(&ds, 5, 2, EncodingMode::Radix).unwrap();
        assert_eq!(spec.mapped, vec![false, true]);
        assert_eq!(spec.digit_count(), 2);
    }

    #[test]
    fn constant_action_dimension_stays_mapped() {
        let ds = dataset(&[(&[0.0], &[0.0]), (&[1.0], &[0.0])]);
        let spec = GridSpec::from_dataset(&ds, 5, 2, EncodingMode::Radix).unwrap();
        assert!((spec.width(1) - 1e-6).abs() < 1e-20);
        let b = spec.encode(&[0.5], &[0.0]).unwrap();
        assert_eq!(b.0.len(), 2);
        assert_eq!(b.0[1], 0);
    }

    #[test]
    fn bounds_are_exact_extremes() {
        let ds = dataset(&[(&[0.0, 1.0], &[0.2]), (&[10.0, -1.0], &[0.4]), (&[4.0, 0.0], &[0.3])]);
        let spec = GridSpec::from_dataset(&ds, 5, 2, EncodingMode::Radix).unwrap();
        assert_eq!(&spec.lo[..2], &[0.0, -1.0]);
        assert_eq!(&spec.hi[..2], &[10.0, 1.0]);
    }

    #[test]
    fn empty_dataset_and_zero_partitions_are_config_errors() {
        let empty = TransitionDataset::default();
        assert!(matches!(
            GridSpec::from_dataset(&empty, 5, 2, EncodingMode::Radix),
            Err(Error::Config(_))
        ));
        let ds = dataset(&[(&[0.0], &[0.0])]);
        assert!(GridSpec::from_dataset(&ds, 0, 2, EncodingMode::Radix).is_err());
        assert!(GridSpec::from_dataset(&ds, 2, 0, EncodingMode::Radix).is_err());
    }

    #[test]
    fn digit_examples() {
        let spec = one_dim(5, 2);
        assert_eq!(spec.digit(0, 0.0).unwrap(), 0);
        // floor(5 * 12 / 10) = 6
        assert_eq!(spec.digit(0, 12.0).unwrap(), 6);
        // floor(5 * -4 / 10) = -2, wrapped mod 10
        assert_eq!(spec.digit(0, -4.0).unwrap(), 8);
        // upper bound stays in the last in-range bucket
        assert_eq!(spec.digit(0, 10.0).unwrap(), 4);
        assert_eq!(spec.digit(0, 9.999).unwrap(), 4);
        // just beyond the bound is out of range
        assert_eq!(spec.digit(0, 10.0 + 1e-9).unwrap(), 5);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let spec = one_dim(5, 2);
        assert!(matches!(spec.state_digits(&[f64::NAN]), Err(Error::Input(_))));
        assert!(spec.state_digits(&[f64::INFINITY]).is_err());
        assert!(matches!(spec.state_digits(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn weighted_sum_code_examples() {
        let mut spec = one_dim(2, 1);
        spec.action_dims = 1;
        spec.encoding = EncodingMode::WeightedSum;
        // 0·(2^0 + 1) + 1·(2^0 + 1)
        assert_eq!(spec.code(&BucketVector(vec![0, 1])), Some(2));
        assert_eq!(spec.code(&BucketVector(vec![0, 0])), Some(0));
    }

    #[test]
    fn radix_code_examples() {
        let mut spec = one_dim(2, 2);
        spec.action_dims = 1;
        assert_eq!(spec.code(&BucketVector(vec![1, 3])), Some(13));
        assert_eq!(spec.code(&BucketVector(vec![0, 0])), Some(0));
    }

    #[test]
    fn overflowing_codes_fall_back_to_digits() {
        let mut spec = one_dim(64, 4);
        spec.action_dims = 12;
        let bucket = BucketVector(vec![255; 12]);
        assert_eq!(spec.code(&bucket), None);
        assert_eq!(
            CellKey::from_bucket(&spec, bucket.clone()),
            CellKey::Digits(bucket.0)
        );
    }

    #[test]
    fn counter_semantics() {
        let mut t = CountTable::new(1.0);
        assert_eq!(t.pseudo_count(&CellKey::Code(3)), 0);
        assert_eq!(t.increment(CellKey::Code(3)), 1);
        for _ in 0..6 {
            t.increment(CellKey::Code(3));
        }
        assert_eq!(t.pseudo_count(&CellKey::Code(3)), 7);
        t.increment(CellKey::Digits(vec![1, 2]));
        assert_eq!(t.pseudo_count(&CellKey::Digits(vec![1, 2])), 1);
        assert_eq!(t.total(), 8);
        assert_eq!(t.distinct(), 2);
    }

    #[test]
    fn count_on_query_replay() {
        let mut t = CountTable::new(1.0);
        let key = CellKey::Code(42);
        for _ in 0..3 {
            t.increment(key.clone());
        }
        for _ in 0..2 {
            t.increment(key.clone());
        }
        assert_eq!(t.pseudo_count(&key), 5);
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(uncertainty(0.0, 100, 0), 0.0);
        // 2·sqrt(ln 100 / 4), evaluated with mpmath: 2.1459660262893472
        assert!((uncertainty(2.0, 100, 4) - 2.1459660262893472).abs() < 1e-14);
        assert_eq!(uncertainty(1.0, 100, 0), uncertainty(1.0, 100, 1));
        assert_eq!(uncertainty(1.0, 1, 5), uncertainty(1.0, 2, 5));
        let mut last = f64::INFINITY;
        for n in [1u64, 10, 100, 1_000, 1_000_000, 1 << 40] {
            let u = uncertainty(1.0, 50, n);
            assert!(u < last);
            last = u;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn lcb_examples() {
        // with no visits and λ = 1 every entry reduces to sqrt(ln T)
        for v in lcb_tabular_oracle(&[0, 0, 0], 1.0, 3).unwrap() {
            assert!((v - 3f64.ln().sqrt()).abs() < 1e-12);
        }
        let v = lcb_closed_form(&[3], 1.0, 100).unwrap()[0];
        // sqrt(ln 100 / 4) = 1.0729830131446736
        assert!((v - 1.0729830131446736).abs() < 1e-14);
        let m = lcb_tabular_oracle(&[3], 1.0, 100).unwrap()[0];
        assert!((m - v).abs() < 1e-12);
    }

    #[test]
    fn lcb_rejects_bad_arguments() {
        assert!(lcb_tabular_oracle(&[], 1.0, 10).is_err());
        assert!(lcb_tabular_oracle(&[1], 0.0, 10).is_err());
        assert!(lcb_closed_form(&[1], 1.0, 1).is_err());
    }

    #[test]
    fn snapshot_round_trip_preserves_table() {
        let ds = dataset(&[(&[0.0], &[0.0]), (&[1.0], &[1.0])]);
        let spec = GridSpec::from_dataset(&ds, 4, 2, EncodingMode::Radix).unwrap();
        let mut t = CountTable::new(1.5);
        t.increment(CellKey::Code(5));
        t.increment(CellKey::Code(5));
        t.increment(CellKey::Digits(vec![1, 9]));
        t.set_epoch(7);
        let snap = CountSnapshot::new(&spec, StateMode::Grid, &t);
        let text = serde_json::to_string(&snap).unwrap();
        let back: CountSnapshot = serde_json::from_str(&text).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.into_table().unwrap(), t);
    }

    #[test]
    fn top_k_and_histogram() {
        let mut t = CountTable::new(1.0);
        for (k, n) in [(1u64, 3), (2, 1), (3, 3), (4, 2)] {
            for _ in 0..n {
                t.increment(CellKey::Code(k));
            }
        }
        assert_eq!(
            t.top_k(2),
            vec![(CellKey::Code(1), 3), (CellKey::Code(3), 3)]
        );
        let h = t.histogram();
        assert_eq!(h.get(&3), Some(&2));
        assert_eq!(h.values().sum::<u64>(), 4);
    }

    proptest! {
        #[test]
        fn digits_stay_in_range(x in -1e12f64..1e12, g in 1u32..16, m in 1u32..4) {
            let spec = one_dim(g, m);
            let d = spec.digit(0, x).unwrap();
            prop_assert!((d as u64) < spec.digit_base());
        }

        #[test]
        fn in_range_points_use_in_range_buckets(x in 0.0f64..=10.0, g in 1u32..16, m in 1u32..4) {
            let spec = one_dim(g, m);
            prop_assert!(spec.digit(0, x).unwrap() < g);
        }

        #[test]
        fn encoding_is_deterministic(s in proptest::collection::vec(-20.0f64..20.0, 3),
                                     a in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let spec = GridSpec {
                state_dims: 3,
                action_dims: 2,
                lo: vec![-1.0, 0.0, 2.0, -1.0, -1.0],
                hi: vec![1.0, 5.0, 2.0, 1.0, 1.0],
                partitions: 7,
                margin: 3,
                mapped: vec![true, true, false],
                encoding: EncodingMode::Radix,
            };
            let b1 = spec.encode(&s, &a).unwrap();
            let b2 = spec.encode(&s, &a).unwrap();
            prop_assert_eq!(b1.0.len(), 4);
            prop_assert_eq!(spec.code(&b1), spec.code(&b2));
        }
    }
}
