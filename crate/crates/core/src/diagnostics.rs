//! Reference posterior on a grid, density histograms, relative L2 error and
//! the Brooks-Gelman interval ratio.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("reference density has no feasible mass on the grid")]
    NoFeasibleMass,
    #[error("grid must have at least two strictly increasing nodes")]
    BadGrid,
    #[error("no samples to histogram")]
    EmptySamples,
    #[error("invalid histogram: {0}")]
    BadHistogram(String),
    #[error("need at least two chains")]
    TooFewChains,
    #[error("checkpoint {checkpoint} exceeds chain length {len}")]
    CheckpointTooLarge { checkpoint: usize, len: usize },
    #[error("checkpoints must be positive and increasing")]
    BadCheckpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid integral of the unnormalized density, relative to the
    /// largest feasible posterior value.
    pub normalizer: f64,
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

pub fn linspace(low: f64, high: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                high
            } else {
                low + (high - low) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// `chi_S(theta) exp(log_post(theta))` on `grid`, normalized by the
/// trapezoid rule.
pub fn reference_posterior(
    grid: &[f64],
    log_post: impl Fn(f64) -> f64 + Sync,
    feasible: impl Fn(f64) -> bool + Sync,
) -> Result<ReferenceDensity, DiagnosticsError> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DiagnosticsError::BadGrid);
    }
    let lp: Vec<f64> = grid
        .par_iter()
        .map(|&t| {
            if feasible(t) {
                log_post(t)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = lp
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(DiagnosticsError::NoFeasibleMass);
    }
    let raw: Vec<f64> = lp
        .iter()
        .map(|&v| if v.is_finite() { (v - max).exp() } else { 0.0 })
        .collect();
    let normalizer = trapezoid(grid, &raw);
    if !(normalizer > 0.0) {
        return Err(DiagnosticsError::NoFeasibleMass);
    }
    Ok(ReferenceDensity {
        grid: grid.to_vec(),
        density: raw.iter().map(|v| v / normalizer).collect(),
        normalizer,
    })
}

impl ReferenceDensity {
    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, theta: f64) -> f64 {
        let g = &self.grid;
        if theta < g[0] || theta > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|&x| x <= theta).clamp(1, g.len() - 1);
        let (x0, x1) = (g[i - 1], g[i]);
        let w = (theta - x0) / (x1 - x0);
        (1.0 - w) * self.density[i - 1] + w * self.density[i]
    }

    pub fn mean(&self) -> f64 {
        let y: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(t, d)| t * d)
            .collect();
        trapezoid(&self.grid, &y)
    }

    /// CSV with columns `theta,density`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta", "density"])?;
        for (t, d) in self.grid.iter().zip(&self.density) {
            w.write_record([t.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Density-normalized: `sum heights * width = 1` over the samples inside
    /// the range.
    pub heights: Vec<f64>,
}

impl Histogram {
    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// CSV with columns `left,right,height`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["left", "right", "height"])?;
        for (e, h) in self.edges.windows(2).zip(&self.heights) {
            w.write_record([e[0].to_string(), e[1].to_string(), h.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width histogram of the samples in `range` (right edge included).
pub fn chain_histogram(
    samples: &[f64],
    n_bins: usize,
    range: (f64, f64),
) -> Result<Histogram, DiagnosticsError> {
    let (lo, hi) = range;
    if n_bins == 0 || !(lo < hi) {
        return Err(DiagnosticsError::BadHistogram(format!(
            "{n_bins} bins over ({lo}, {hi})"
        )));
    }
    if samples.is_empty() {
        return Err(DiagnosticsError::EmptySamples);
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    let mut inside = 0usize;
    for &s in samples {
        if s >= lo && s <= hi {
            let b = (((s - lo) / width) as usize).min(n_bins - 1);
            counts[b] += 1;
            inside += 1;
        }
    }
    if inside == 0 {
        return Err(DiagnosticsError::EmptySamples);
    }
    Ok(Histogram {
        edges: linspace(lo, hi, n_bins + 1),
        heights: counts
            .iter()
            .map(|&c| c as f64 / (inside as f64 * width))
            .collect(),
    })
}

/// `sqrt(sum (h_i - p_i)²) / sqrt(sum p_i²)` with `p_i` the reference
/// interpolated at the bin midpoints.
pub fn relative_l2_error(hist: &Histogram, reference: &ReferenceDensity) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (m, h) in hist.midpoints().iter().zip(&hist.heights) {
        let p = reference.interpolate(*m);
        num += (h - p) * (h - p);
        den += p * p;
    }
    (num / den).sqrt()
}

/// Empirical quantile `inf { x : F_n(x) >= q }` (inverse of the empirical
/// CDF). Duplicating every sample leaves it unchanged.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = (q.clamp(0.0, 1.0) * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

/// Width of the central empirical interval holding `confidence` of the
/// samples.
pub fn central_interval_width(samples: &[f64], confidence: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - confidence);
    quantile(&s, 1.0 - tail) - quantile(&s, tail)
}

/// For each checkpoint `n`: mean over chains of the central-interval width
/// of the first `n` samples, divided by the width of the pooled interval of
/// all chains at full length.
pub fn brooks_gelman_ratio(
    chains: &[&[f64]],
    confidence: f64,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>, DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::TooFewChains);
    }
    if checkpoints.is_empty() || checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(DiagnosticsError::BadCheckpoints);
    }
    let min_len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if let Some(&last) = checkpoints.last() {
        if last > min_len {
            return Err(DiagnosticsError::CheckpointTooLarge {
                checkpoint: last,
                len: min_len,
            });
        }
    }
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let pooled_width = central_interval_width(&pooled, confidence);
    Ok(checkpoints
        .iter()
        .map(|&n| {
            let within = chains
                .iter()
                .map(|c| central_interval_width(&c[..n], confidence))
                .sum::<f64>()
                / chains.len() as f64;
            (n, within / pooled_width)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Point {
    pub n_samples: usize,
    pub error: f64,
    pub cpu_seconds: f64,
}

/// Relative L2 error of the first `n` samples at each checkpoint.
pub fn l2_series(
    samples: &[f64],
    cumulative_seconds: &[f64],
    checkpoints: &[usize],
    n_bins: usize,
    range: (f64, f64),
    reference: &ReferenceDensity,
) -> Result<Vec<L2Point>, DiagnosticsError> {
    checkpoints
        .iter()
        .filter(|&&n| n >= 1 && n <= samples.len())
        .map(|&n| {
            let hist = chain_histogram(&samples[..n], n_bins, range)?;
            Ok(L2Point {
                n_samples: n,
                error: relative_l2_error(&hist, reference),
                cpu_seconds: cumulative_seconds.get(n - 1).copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Summary written next to every sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub l2_series: Vec<L2Point>,
    pub bg_series: Vec<(usize, f64)>,
    pub acceptance_rate: Option<f64>,
    pub infeasible_fraction: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_pdf(t: f64) -> f64 {
        (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn reference_matches_standard_normal() {
        let grid = linspace(-8.0, 8.0, 1000);
        let r = reference_posterior(&grid, |t| -0.5 * t * t, |_| true).unwrap();
        for (t, d) in grid.iter().zip(&r.density) {
            assert!((d - std_normal_pdf(*t)).abs() <= 1e-4);
        }
        assert!((trapezoid(&r.grid, &r.density) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_masks_infeasible_half() {
        let grid = linspace(-4.0, 4.0, 801);
        let r = reference_posterior(&grid, |t| -0.5 * t * t, |t| t >= 0.0).unwrap();
        assert!(grid
            .iter()
            .zip(&r.density)
            .filter(|(t, _)| **t < 0.0)
            .all(|(_, d)| *d == 0.0));
        assert!((trapezoid(&r.grid, &r.density) - 1.0).abs() < 1e-12);
        assert_eq!(
            reference_posterior(&grid, |_| 0.0, |_| false),
            Err(DiagnosticsError::NoFeasibleMass)
        );
    }

    #[test]
    fn single_bin_height_is_inverse_width() {
        let h = chain_histogram(&[0.25, 0.26, 0.27], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.heights, vec![0.0, 4.0, 0.0, 0.0]);
        assert!(matches!(
            chain_histogram(&[], 4, (0.0, 1.0)),
            Err(DiagnosticsError::EmptySamples)
        ));
    }

    #[test]
    fn l2_error_identities() {
        let grid = linspace(0.0, 1.0, 101);
        let r = ReferenceDensity {
            density: grid.iter().map(|t| 2.0 * t).collect(),
            grid: grid.clone(),
            normalizer: 1.0,
        };
        let edges = linspace(0.0, 1.0, 11);
        let exact = Histogram {
            heights: edges.windows(2).map(|w| w[0] + w[1]).collect(),
            edges: edges.clone(),
        };
        assert!(relative_l2_error(&exact, &r) < 1e-12);
        let doubled = Histogram {
            heights: exact.heights.iter().map(|h| 2.0 * h).collect(),
            edges,
        };
        assert!((relative_l2_error(&doubled, &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_chains_give_unit_ratio() {
        let c: Vec<f64> = (0..500)
            .map(|i| ((i as f64) * 0.37).sin() * (i as f64).sqrt())
            .collect();
        for k in 2..5 {
            let chains: Vec<&[f64]> = (0..k).map(|_| c.as_slice()).collect();
            let s = brooks_gelman_ratio(&chains, 0.95, &[100, 500]).unwrap();
            assert_eq!(s.last().unwrap().1, 1.0);
        }
        let chains: Vec<&[f64]> = vec![&c, &c];
        assert!(matches!(
            brooks_gelman_ratio(&chains, 0.95, &[600]),
            Err(DiagnosticsError::CheckpointTooLarge { .. })
        ));
        assert!(matches!(
            brooks_gelman_ratio(&chains[..1], 0.95, &[10]),
            Err(DiagnosticsError::TooFewChains)
        ));
    }

    #[test]
    fn quantile_inverts_empirical_cdf() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.0);
        assert_eq!(quantile(&s, 0.4), 1.0);
        assert_eq!(quantile(&s, 0.41), 2.0);
        assert_eq!(quantile(&s, 0.0), 0.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
    }
}
