//! Chance constraint `P_xi(f2(xi; theta) <= beta) >= alpha` and the feasible
//! set `S` it induces on the parameter.
//!
//! Probabilities are plain Monte Carlo estimates over a cheap surrogate of
//! `f2`. Every estimate for a given [`ChanceConstraintSpec`] uses the same
//! seeded germ draws, so the estimated probability is a deterministic and
//! smooth-as-possible function of `theta`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{OnceLock, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpc::{hermite_all, Expansion, TensorBasis};
use crate::heat_interface::CoefficientStack;

/// How a vector-valued `f2` (an interface field) is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// `max_z T(z) <= beta` must hold jointly for one germ draw.
    #[default]
    Joint,
    /// Each output is checked on its own; the reported probability is the
    /// smallest marginal one.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChanceConstraintSpec {
    pub beta: f64,
    pub alpha: f64,
    #[serde(default = "default_n_prob_samples")]
    pub n_prob_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: ConstraintMode,
}

fn default_n_prob_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstraintError {
    #[error("invalid chance constraint: {0}")]
    InvalidSpec(String),
    #[error("feasible set is empty")]
    EmptySet,
    #[error("invalid scan: {0}")]
    InvalidScan(String),
}

impl ChanceConstraintSpec {
    pub fn new(beta: f64, alpha: f64) -> Self {
        Self {
            beta,
            alpha,
            n_prob_samples: default_n_prob_samples(),
            seed: 0,
            mode: ConstraintMode::Joint,
        }
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConstraintError::InvalidSpec(format!(
                "alpha = {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.n_prob_samples == 0 {
            return Err(ConstraintError::InvalidSpec(
                "n_prob_samples must be >= 1".into(),
            ));
        }
        if !self.beta.is_finite() {
            return Err(ConstraintError::InvalidSpec("beta must be finite".into()));
        }
        Ok(())
    }

    /// Strict threshold: feasible iff `probability >= alpha`.
    pub fn is_satisfied(&self, probability: f64) -> bool {
        probability >= self.alpha
    }
}

/// Anything that maps a germ realization to one or more constrained outputs.
pub trait ConstraintSurrogate: Send + Sync {
    fn germ_dim(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn evaluate_into(&self, xi: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]);

    /// The surrogate as a single tensor Hermite expansion, if it is one.
    /// Lets callers reuse basis values over a fixed germ bank.
    fn as_expansion(&self) -> Option<&Expansion> {
        None
    }
}

impl ConstraintSurrogate for Expansion {
    fn germ_dim(&self) -> usize {
        self.basis.dim
    }

    fn n_outputs(&self) -> usize {
        1
    }

    fn evaluate_into(&self, xi: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        let base = self.basis.order + 1;
        let dim = self.basis.dim;
        scratch.resize(dim * base, 0.0);
        for (v, &x) in xi.iter().enumerate() {
            hermite_all(x, &mut scratch[v * base..(v + 1) * base]);
        }
        let mut total = 0.0;
        for (mode, c) in self.coeffs.iter().enumerate() {
            let mut rem = mode;
            let mut value = *c;
            for v in (0..dim).rev() {
                value *= scratch[v * base + rem % base];
                rem /= base;
            }
            total += value;
        }
        out[0] = total;
    }

    fn as_expansion(&self) -> Option<&Expansion> {
        Some(self)
    }
}

impl ConstraintSurrogate for CoefficientStack {
    fn germ_dim(&self) -> usize {
        self.n_germs
    }

    fn n_outputs(&self) -> usize {
        self.n_z()
    }

    fn evaluate_into(&self, xi: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        CoefficientStack::evaluate_into(self, xi, scratch, out)
            .expect("germ dimension checked by caller");
    }
}

/// A scalar `f2` given as a closure, mainly for synthetic constraints.
pub struct FnSurrogate<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> ConstraintSurrogate for FnSurrogate<F> {
    fn germ_dim(&self) -> usize {
        self.dim
    }

    fn n_outputs(&self) -> usize {
        1
    }

    fn evaluate_into(&self, xi: &[f64], _scratch: &mut Vec<f64>, out: &mut [f64]) {
        out[0] = (self.f)(xi);
    }
}

/// Standard normal germ draws, row-major `n x dim`, from a ChaCha8 stream
/// seeded with `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct GermBank {
    pub dim: usize,
    pub draws: Vec<f64>,
}

impl GermBank {
    pub fn new(seed: u64, n: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..n * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { dim, draws }
    }

    pub fn len(&self) -> usize {
        self.draws.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Basis values `Phi_m(xi_i)` of every bank draw, row-major `n x n_modes`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub basis: TensorBasis,
    pub values: Vec<f64>,
}

impl BasisTable {
    pub fn new(bank: &GermBank, basis: TensorBasis) -> Self {
        assert_eq!(
            bank.dim, basis.dim,
            "germ bank dimension does not match basis"
        );
        let m = basis.n_modes();
        let n = bank.len();
        let mut values = vec![0.0; n * m];
        values.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let mut scratch = Vec::new();
            basis.eval_into(
                &bank.draws[i * basis.dim..(i + 1) * basis.dim],
                &mut scratch,
                row,
            );
        });
        Self { basis, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.basis.n_modes()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `P(e(xi) <= beta)` over the first `n` rows of `table`.
pub fn probability_with_table(e: &Expansion, beta: f64, table: &BasisTable, n: usize) -> f64 {
    assert_eq!(e.basis, table.basis, "expansion basis does not match table");
    let m = e.coeffs.len();
    let hits: usize = table.values[..n * m]
        .par_chunks(CHUNK * m)
        .map(|rows| {
            rows.chunks_exact(m)
                .filter(|row| row.iter().zip(&e.coeffs).map(|(p, c)| p * c).sum::<f64>() <= beta)
                .count()
        })
        .sum();
    hits as f64 / n as f64
}

const CHUNK: usize = 1024;

/// Probability estimate over the draws of `bank` (or `n` zero-germ draws for
/// a deterministic surrogate).
pub fn probability_with_bank<S: ConstraintSurrogate + ?Sized>(
    surrogate: &S,
    beta: f64,
    mode: ConstraintMode,
    bank: &GermBank,
    n: usize,
) -> f64 {
    let dim = surrogate.germ_dim();
    assert_eq!(
        bank.dim, dim,
        "germ bank dimension does not match surrogate"
    );
    let n_out = surrogate.n_outputs();
    let xi_at = |i: usize| -> &[f64] {
        if dim == 0 {
            &[]
        } else {
            &bank.draws[i * dim..(i + 1) * dim]
        }
    };
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(n)))
        .collect();
    match mode {
        ConstraintMode::Joint => {
            let hits: usize = chunks
                .par_iter()
                .map(|&(s, e)| {
                    let mut scratch = Vec::new();
                    let mut out = vec![0.0; n_out];
                    (s..e)
                        .filter(|&i| {
                            surrogate.evaluate_into(xi_at(i), &mut scratch, &mut out);
                            out.iter().all(|&v| v <= beta)
                        })
                        .count()
                })
                .sum();
            hits as f64 / n as f64
        }
        ConstraintMode::Pointwise => {
            let hits = chunks
                .par_iter()
                .map(|&(s, e)| {
                    let mut scratch = Vec::new();
                    let mut out = vec![0.0; n_out];
                    let mut counts = vec![0usize; n_out];
                    for i in s..e {
                        surrogate.evaluate_into(xi_at(i), &mut scratch, &mut out);
                        for (c, &v) in counts.iter_mut().zip(&out) {
                            *c += (v <= beta) as usize;
                        }
                    }
                    counts
                })
                .reduce(
                    || vec![0usize; n_out],
                    |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        a
                    },
                );
            hits.into_iter().min().unwrap_or(n) as f64 / n as f64
        }
    }
}

/// `P(f2 <= beta)` estimated with `spec.n_prob_samples` draws from the
/// spec's seeded stream.
pub fn satisfaction_probability<S: ConstraintSurrogate + ?Sized>(
    surrogate: &S,
    spec: &ChanceConstraintSpec,
) -> f64 {
    let bank = GermBank::new(spec.seed, spec.n_prob_samples, surrogate.germ_dim());
    probability_with_bank(surrogate, spec.beta, spec.mode, &bank, spec.n_prob_samples)
}

/// Builds the constraint surrogate at a parameter value.
pub trait SurrogateFactory: Send + Sync {
    type Surrogate: ConstraintSurrogate;
    fn build(&self, theta: f64) -> Result<Self::Surrogate, String>;
}

impl<S, E, F> SurrogateFactory for F
where
    S: ConstraintSurrogate,
    E: std::fmt::Display,
    F: Fn(f64) -> Result<S, E> + Send + Sync,
{
    type Surrogate = S;

    fn build(&self, theta: f64) -> Result<S, String> {
        self(theta).map_err(|e| e.to_string())
    }
}

/// One-shot feasibility decision `chi_S(theta)`. A failed surrogate build
/// counts as infeasible.
pub fn is_feasible<F: SurrogateFactory>(
    theta: f64,
    spec: &ChanceConstraintSpec,
    factory: &F,
) -> bool {
    match factory.build(theta) {
        Ok(s) => spec.is_satisfied(satisfaction_probability(&s, spec)),
        Err(e) => {
            log::warn!("surrogate build failed at theta = {theta}: {e}; treated as infeasible");
            false
        }
    }
}

/// Quantum of the per-parameter cache key.
pub const CACHE_QUANTUM: f64 = 1e-6;

/// Cached feasibility oracle. Probabilities are memoized per `theta`
/// quantized to [`CACHE_QUANTUM`]; the germ draws are generated once.
pub struct FeasibilityOracle<F> {
    spec: ChanceConstraintSpec,
    factory: F,
    bank: OnceLock<GermBank>,
    table: OnceLock<BasisTable>,
    cache: RwLock<HashMap<i64, Option<f64>>>,
    failures: AtomicUsize,
    builds: AtomicUsize,
}

impl<F: SurrogateFactory> FeasibilityOracle<F> {
    pub fn new(spec: ChanceConstraintSpec, factory: F) -> Result<Self, ConstraintError> {
        spec.validate()?;
        Ok(Self {
            spec,
            factory,
            bank: OnceLock::new(),
            table: OnceLock::new(),
            cache: RwLock::new(HashMap::new()),
            failures: AtomicUsize::new(0),
            builds: AtomicUsize::new(0),
        })
    }

    pub fn spec(&self) -> &ChanceConstraintSpec {
        &self.spec
    }

    pub fn factory(&self) -> &F {
        &self.factory
    }

    fn key(theta: f64) -> i64 {
        (theta / CACHE_QUANTUM).round() as i64
    }

    /// Estimated probability, or `None` if the surrogate could not be built.
    pub fn probability(&self, theta: f64) -> Option<f64> {
        let key = Self::key(theta);
        if let Some(p) = self.cache.read().expect("cache lock").get(&key) {
            return *p;
        }
        let theta_q = key as f64 * CACHE_QUANTUM;
        self.builds.fetch_add(1, Ordering::Relaxed);
        let p = match self.factory.build(theta_q) {
            Ok(s) => {
                let n = self.spec.n_prob_samples;
                let dim = s.germ_dim();
                let bank = self
                    .bank
                    .get_or_init(|| GermBank::new(self.spec.seed, n, dim));
                let table = s
                    .as_expansion()
                    .filter(|_| bank.dim == dim)
                    .map(|e| (e, self.table.get_or_init(|| BasisTable::new(bank, e.basis))));
                let p = if let Some((e, table)) = table.filter(|(e, t)| t.basis == e.basis) {
                    probability_with_table(e, self.spec.beta, table, n)
                } else if bank.dim == dim {
                    probability_with_bank(&s, self.spec.beta, self.spec.mode, bank, n)
                } else {
                    satisfaction_probability(&s, &self.spec)
                };
                Some(p)
            }
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                log::warn!(
                    "surrogate build failed at theta = {theta_q}: {e}; treated as infeasible"
                );
                None
            }
        };
        self.cache.write().expect("cache lock").insert(key, p);
        p
    }

    pub fn is_feasible(&self, theta: f64) -> bool {
        self.probability(theta)
            .is_some_and(|p| self.spec.is_satisfied(p))
    }

    /// Number of failed surrogate builds so far.
    pub fn failure_count(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    /// Number of surrogate builds (cache misses) so far.
    pub fn build_count(&self) -> usize {
        self.builds.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Union of disjoint closed intervals, sorted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub intervals: Vec<Interval>,
}

impl FeasibleSet {
    pub fn interval(low: f64, high: f64) -> Self {
        Self {
            intervals: vec![Interval { low, high }],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// True when `S` is a single interval.
    pub fn is_interval(&self) -> bool {
        self.intervals.len() == 1
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.intervals
            .iter()
            .any(|i| i.low <= theta && theta <= i.high)
    }

    /// Closest point of `S` to `theta`; ties go to the lower point.
    pub fn project(&self, theta: f64) -> Result<f64, ConstraintError> {
        self.intervals
            .iter()
            .map(|i| theta.clamp(i.low, i.high))
            .min_by(|a, b| (a - theta).abs().total_cmp(&(b - theta).abs()))
            .ok_or(ConstraintError::EmptySet)
    }

    /// `+1` or `-1` pointing from `theta` toward the nearest point of `S`,
    /// `0` inside `S` or if `S` is empty.
    pub fn direction_toward(&self, theta: f64) -> f64 {
        match self.project(theta) {
            Ok(p) if p > theta => 1.0,
            Ok(p) if p < theta => -1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub theta: f64,
    pub probability: Option<f64>,
    pub feasible: bool,
}

/// A located change of feasibility, bracketed to the scan tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub infeasible_side: f64,
    pub feasible_side: f64,
}

impl Transition {
    pub fn estimate(&self) -> f64 {
        0.5 * (self.infeasible_side + self.feasible_side)
    }

    /// True for a lower boundary of `S` (feasible above).
    pub fn is_lower(&self) -> bool {
        self.feasible_side > self.infeasible_side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScan {
    /// All evaluated points, sorted by `theta`.
    pub points: Vec<ScanPoint>,
    pub transitions: Vec<Transition>,
    /// Estimated `S`; interval ends sit on the feasible side of each bracket.
    pub set: FeasibleSet,
}

impl BoundaryScan {
    pub fn is_multi_interval(&self) -> bool {
        self.set.intervals.len() > 1
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta", "probability", "feasible"])?;
        for p in &self.points {
            w.write_record([
                p.theta.to_string(),
                p.probability
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "NaN".into()),
                (p.feasible as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coarse pre-scan of `range` on `n_prescan` equispaced points followed by
/// bisection of every feasibility change down to width `tol`.
///
/// `probability` returns `None` where the surrogate fails (infeasible).
pub fn scan_feasible_boundary(
    range: (f64, f64),
    n_prescan: usize,
    tol: f64,
    alpha: f64,
    probability: impl Fn(f64) -> Option<f64> + Sync,
) -> Result<BoundaryScan, ConstraintError> {
    let (lo, hi) = range;
    if !(lo < hi) || n_prescan < 2 || !(tol > 0.0) {
        return Err(ConstraintError::InvalidScan(format!(
            "need low < high, n_prescan >= 2, tol > 0; got ({lo}, {hi}), {n_prescan}, {tol}"
        )));
    }
    let eval = |theta: f64| {
        let p = probability(theta);
        ScanPoint {
            theta,
            probability: p,
            feasible: p.is_some_and(|p| p >= alpha),
        }
    };
    let grid: Vec<f64> = (0..n_prescan)
        .map(|i| {
            if i + 1 == n_prescan {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n_prescan - 1) as f64
            }
        })
        .collect();
    let coarse: Vec<ScanPoint> = grid.par_iter().map(|&t| eval(t)).collect();

    let mut points = coarse.clone();
    let mut transitions = Vec::new();
    for pair in coarse.windows(2) {
        if pair[0].feasible == pair[1].feasible {
            continue;
        }
        let (mut bad, mut good) = if pair[0].feasible {
            (pair[1].theta, pair[0].theta)
        } else {
            (pair[0].theta, pair[1].theta)
        };
        while (good - bad).abs() > tol {
            let mid = 0.5 * (good + bad);
            let p = eval(mid);
            points.push(p);
            if p.feasible {
                good = mid;
            } else {
                bad = mid;
            }
        }
        transitions.push(Transition {
            infeasible_side: bad,
            feasible_side: good,
        });
    }
    points.sort_by(|a, b| a.theta.total_cmp(&b.theta));

    let mut intervals = Vec::new();
    let mut start = if coarse[0].feasible { Some(lo) } else { None };
    for t in &transitions {
        if t.is_lower() {
            start = Some(t.feasible_side);
        } else if let Some(s) = start.take() {
            intervals.push(Interval {
                low: s,
                high: t.feasible_side,
            });
        }
    }
    if let Some(s) = start {
        intervals.push(Interval { low: s, high: hi });
    }
    Ok(BoundaryScan {
        points,
        transitions,
        set: FeasibleSet { intervals },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpc::TensorBasis;

    fn spec(beta: f64, alpha: f64, n: usize) -> ChanceConstraintSpec {
        ChanceConstraintSpec {
            beta,
            alpha,
            n_prob_samples: n,
            seed: 7,
            mode: ConstraintMode::Joint,
        }
    }

    #[test]
    fn constant_below_threshold_is_always_satisfied() {
        let s = FnSurrogate {
            dim: 1,
            f: |_: &[f64]| 9.0,
        };
        assert_eq!(satisfaction_probability(&s, &spec(10.0, 0.95, 1000)), 1.0);
        let c = Expansion {
            basis: TensorBasis::new(0, 0),
            coeffs: vec![9.0],
        };
        assert_eq!(satisfaction_probability(&c, &spec(10.0, 0.95, 10)), 1.0);
    }

    #[test]
    fn symmetric_law_gives_one_half() {
        let n = 100_000;
        let s = FnSurrogate {
            dim: 1,
            f: |x: &[f64]| x[0],
        };
        let p = satisfaction_probability(&s, &spec(0.0, 0.5, n));
        assert!((p - 0.5).abs() <= 3.0 / (n as f64).sqrt(), "{p}");
    }

    #[test]
    fn expansion_evaluation_matches_reference() {
        let e = Expansion {
            basis: TensorBasis::new(2, 2),
            coeffs: (0..9).map(|i| 1.0 + i as f64 * 0.3).collect(),
        };
        let mut out = [0.0];
        let xi = [0.4, -1.1];
        ConstraintSurrogate::evaluate_into(&e, &xi, &mut Vec::new(), &mut out);
        assert!((out[0] - e.evaluate(&xi)).abs() < 1e-12);
    }

    #[test]
    fn basis_table_matches_direct_evaluation() {
        let e = Expansion {
            basis: TensorBasis::new(3, 2),
            coeffs: (0..16)
                .map(|i| if i == 0 { 1.0 } else { 0.2 / i as f64 })
                .collect(),
        };
        let bank = GermBank::new(3, 5000, 2);
        let table = BasisTable::new(&bank, e.basis);
        for beta in [0.5, 1.0, 1.3] {
            let direct = probability_with_bank(&e, beta, ConstraintMode::Joint, &bank, 5000);
            let tabled = probability_with_table(&e, beta, &table, 5000);
            assert!((direct - tabled).abs() <= 1.0 / 5000.0, "{direct} {tabled}");
        }
    }

    #[test]
    fn threshold_is_strict() {
        let s = spec(0.0, 0.95, 1);
        assert!(!s.is_satisfied(0.94));
        assert!(s.is_satisfied(0.95));
    }

    #[test]
    fn pointwise_mode_takes_smallest_marginal() {
        // outputs xi and -xi: each marginal is 1/2 but jointly only xi = 0
        struct Two;
        impl ConstraintSurrogate for Two {
            fn germ_dim(&self) -> usize {
                1
            }
            fn n_outputs(&self) -> usize {
                2
            }
            fn evaluate_into(&self, xi: &[f64], _: &mut Vec<f64>, out: &mut [f64]) {
                out[0] = xi[0];
                out[1] = -xi[0] - 1.0;
            }
        }
        let mut sp = spec(0.0, 0.5, 20_000);
        let joint = satisfaction_probability(&Two, &sp);
        sp.mode = ConstraintMode::Pointwise;
        let pointwise = satisfaction_probability(&Two, &sp);
        assert!(joint < pointwise);
        assert!((pointwise - 0.5).abs() < 0.03);
    }

    #[test]
    fn oracle_caches_and_counts_failures() {
        let factory = |theta: f64| -> Result<FnSurrogate<_>, String> {
            if theta < 0.0 {
                Err("negative".into())
            } else {
                Ok(FnSurrogate {
                    dim: 1,
                    f: move |x: &[f64]| x[0] - theta,
                })
            }
        };
        let oracle = FeasibilityOracle::new(spec(0.0, 0.5, 4000), factory).unwrap();
        assert!(oracle.is_feasible(1.0));
        assert!(oracle.is_feasible(1.0 + 1e-9));
        assert_eq!(oracle.build_count(), 1);
        assert!(!oracle.is_feasible(-1.0));
        assert!(!oracle.is_feasible(-1.0));
        assert_eq!(oracle.failure_count(), 1);
        let direct = satisfaction_probability(&factory(1.0).unwrap(), oracle.spec());
        assert_eq!(oracle.probability(1.0), Some(direct));
    }

    #[test]
    fn scan_locates_symmetric_threshold() {
        let sp = spec(0.0, 0.5, 20_000);
        let bank = GermBank::new(sp.seed, sp.n_prob_samples, 1);
        let prob = |theta: f64| {
            let s = FnSurrogate {
                dim: 1,
                f: move |x: &[f64]| theta + x[0],
            };
            Some(probability_with_bank(
                &s,
                sp.beta,
                sp.mode,
                &bank,
                sp.n_prob_samples,
            ))
        };
        let tol = 1e-3;
        let scan = scan_feasible_boundary((-2.0, 2.0), 21, tol, 0.5, prob).unwrap();
        assert_eq!(scan.transitions.len(), 1);
        let t = scan.transitions[0];
        assert!(!t.is_lower());
        // Monte Carlo error of the median dominates the bisection tolerance.
        assert!(t.estimate().abs() < 0.03, "{:?}", t);
        assert_eq!(scan.set.intervals.len(), 1);
        assert_eq!(scan.set.intervals[0].low, -2.0);
    }

    #[test]
    fn scan_of_always_feasible_returns_full_range() {
        let scan = scan_feasible_boundary((300.0, 1000.0), 11, 1.0, 0.9, |_| Some(1.0)).unwrap();
        assert_eq!(scan.set, FeasibleSet::interval(300.0, 1000.0));
        assert!(scan.transitions.is_empty());
    }

    #[test]
    fn scan_reports_multiple_intervals() {
        let scan = scan_feasible_boundary((0.0, 10.0), 41, 1e-3, 0.5, |t| {
            Some(if (2.0..4.0).contains(&t) || t > 7.0 {
                1.0
            } else {
                0.0
            })
        })
        .unwrap();
        assert!(scan.is_multi_interval());
        let s = &scan.set.intervals;
        assert!((s[0].low - 2.0).abs() < 1e-3 && (s[0].high - 4.0).abs() < 1e-3);
        assert!((s[1].low - 7.0).abs() < 1e-3 && s[1].high == 10.0);
    }

    #[test]
    fn projection_and_direction() {
        let s = FeasibleSet {
            intervals: vec![
                Interval {
                    low: 1.0,
                    high: 2.0,
                },
                Interval {
                    low: 5.0,
                    high: 6.0,
                },
            ],
        };
        assert_eq!(s.project(0.0).unwrap(), 1.0);
        assert_eq!(s.project(1.5).unwrap(), 1.5);
        assert_eq!(s.project(3.0).unwrap(), 2.0);
        assert_eq!(s.project(4.0).unwrap(), 5.0);
        assert_eq!(s.direction_toward(0.0), 1.0);
        assert_eq!(s.direction_toward(1.5), 0.0);
        assert_eq!(s.direction_toward(7.0), -1.0);
        assert!(matches!(
            FeasibleSet::default().project(1.0),
            Err(ConstraintError::EmptySet)
        ));
    }

    #[test]
    fn boundary_csv_has_header_and_rows() {
        let scan = scan_feasible_boundary((0.0, 1.0), 3, 0.1, 0.5, Some).unwrap();
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,probability,feasible\n"));
        assert_eq!(text.lines().count(), scan.points.len() + 1);
    }
}
