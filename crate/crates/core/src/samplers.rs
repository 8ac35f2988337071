//! Constrained samplers for a scalar parameter.
//!
//! - [`run_crw`]: random-walk Metropolis with the hard indicator `chi_S` in
//!   the acceptance probability. The only one with `S`-restricted
//!   stationarity.
//! - [`run_chmc`]: Hamiltonian Monte Carlo driven by a penalized gradient;
//!   feasibility is recorded but not enforced.
//! - [`run_csvgd`]: Stein variational gradient descent with a penalized
//!   gradient.
//! - [`run_projected_svgd`]: SVGD whose moves are projected back onto an
//!   interval-form `S`.
//!
//! Every run owns a ChaCha8 stream selected by `(seed, stream)`, so chains
//! are reproducible bit for bit and independent across streams.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chance_constraint::FeasibleSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("initial value theta = {theta} is infeasible; run scan-feasible to locate S and start inside it")]
    InfeasibleInit { theta: f64 },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("feasible set is empty; nothing to project onto")]
    EmptyFeasibleSet,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrwConfig {
    pub proposal_std: f64,
    pub n_samples: usize,
    pub theta_init: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChmcConfig {
    pub mass: f64,
    pub step: f64,
    pub max_leapfrog: usize,
    pub n_samples: usize,
    pub theta_init: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bandwidth {
    /// `h² = median(|x_i - x_j|²) / (2 ln(n + 1))`, recomputed per
    /// generation.
    Median,
    Fixed {
        h: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvgdConfig {
    pub n_generations: usize,
    /// Base step; the effective step is divided by the root of a running
    /// average of squared Stein directions.
    pub step_size: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_fudge")]
    pub fudge: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::Median
}

fn default_decay() -> f64 {
    0.9
}

fn default_fudge() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum ChainConfig {
    Crw(CrwConfig),
    Chmc(ChmcConfig),
}

/// Record of a feasibility post-processing pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessInfo {
    pub original_len: usize,
    pub removed: usize,
    /// The filtered sequence is a sample set, not a Markov chain.
    pub not_a_markov_chain: bool,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub samples: Vec<f64>,
    pub accepted: Vec<bool>,
    pub feasible: Vec<bool>,
    pub log_post: Vec<f64>,
    pub cumulative_seconds: Vec<f64>,
    pub seed: u64,
    pub config: ChainConfig,
    /// Proposals rejected because the Hamiltonian was not finite (cHMC).
    pub divergences: usize,
    pub postprocess: Option<PostprocessInfo>,
}

impl MarkovChain {
    fn with_capacity(n: usize, seed: u64, config: ChainConfig) -> Self {
        Self {
            samples: Vec::with_capacity(n),
            accepted: Vec::with_capacity(n),
            feasible: Vec::with_capacity(n),
            log_post: Vec::with_capacity(n),
            cumulative_seconds: Vec::with_capacity(n),
            seed,
            config,
            divergences: 0,
            postprocess: None,
        }
    }

    fn push(&mut self, theta: f64, accepted: bool, feasible: bool, log_post: f64, seconds: f64) {
        self.samples.push(theta);
        self.accepted.push(accepted);
        self.feasible.push(feasible);
        self.log_post.push(log_post);
        self.cumulative_seconds.push(seconds);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.len() as f64
    }

    pub fn infeasible_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.feasible.iter().filter(|&&f| !f).count() as f64 / self.len() as f64
    }

    /// Samples with the leading `fraction` of the chain removed.
    pub fn after_burn_in(&self, fraction: f64) -> &[f64] {
        &self.samples[burn_in_len(self.len(), fraction)..]
    }

    /// CSV with columns `index,theta,accepted,feasible,log_post,cumulative_seconds`.
    /// Without `with_time` the last column is left empty so that the file is
    /// reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, writer: W, with_time: bool) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "index",
            "theta",
            "accepted",
            "feasible",
            "log_post",
            "cumulative_seconds",
        ])?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                self.samples[i].to_string(),
                (self.accepted[i] as u8).to_string(),
                (self.feasible[i] as u8).to_string(),
                self.log_post[i].to_string(),
                if with_time {
                    self.cumulative_seconds[i].to_string()
                } else {
                    String::new()
                },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn burn_in_len(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction.clamp(0.0, 1.0)).floor() as usize
}

/// Constrained random walk. Each step draws `theta' ~ N(theta, s²)` and
/// `u ~ U(0, 1)` and moves iff `ln u < log_post(theta') - log_post(theta)`
/// and `theta'` is feasible. The feasibility oracle is only consulted for
/// proposals that pass the Metropolis test.
pub fn run_crw(
    log_post: impl Fn(f64) -> f64,
    feasible: impl Fn(f64) -> bool,
    cfg: &CrwConfig,
) -> Result<MarkovChain, SamplerError> {
    if !(cfg.proposal_std > 0.0) {
        return Err(SamplerError::InvalidConfig(format!(
            "proposal_std must be > 0, got {}",
            cfg.proposal_std
        )));
    }
    if !feasible(cfg.theta_init) {
        return Err(SamplerError::InfeasibleInit {
            theta: cfg.theta_init,
        });
    }
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let start = Instant::now();
    let mut chain = MarkovChain::with_capacity(cfg.n_samples, cfg.seed, ChainConfig::Crw(*cfg));
    let mut theta = cfg.theta_init;
    let mut lp = log_post(theta);
    for _ in 0..cfg.n_samples {
        let z: f64 = StandardNormal.sample(&mut rng);
        let u: f64 = rng.random();
        let proposal = theta + cfg.proposal_std * z;
        let lp_prop = log_post(proposal);
        let accept = u.ln() < lp_prop - lp && feasible(proposal);
        if accept {
            theta = proposal;
            lp = lp_prop;
        }
        chain.push(theta, accept, true, lp, start.elapsed().as_secs_f64());
    }
    Ok(chain)
}

/// Penalized HMC with the standard symmetric leapfrog integrator. `grad` is
/// the (penalized) gradient of the log-posterior; `feasible` only labels the
/// stored samples.
pub fn run_chmc(
    log_post: impl Fn(f64) -> f64,
    grad: impl Fn(f64) -> f64,
    feasible: impl Fn(f64) -> bool,
    cfg: &ChmcConfig,
) -> Result<MarkovChain, SamplerError> {
    if !(cfg.mass > 0.0 && cfg.step > 0.0 && cfg.max_leapfrog >= 1) {
        return Err(SamplerError::InvalidConfig(format!(
            "need mass > 0, step > 0, max_leapfrog >= 1; got {}, {}, {}",
            cfg.mass, cfg.step, cfg.max_leapfrog
        )));
    }
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let start = Instant::now();
    let mut chain = MarkovChain::with_capacity(cfg.n_samples, cfg.seed, ChainConfig::Chmc(*cfg));
    let (m, eps) = (cfg.mass, cfg.step);
    let mut theta = cfg.theta_init;
    let mut lp = log_post(theta);
    let mut feasible_now = feasible(theta);
    for _ in 0..cfg.n_samples {
        let z: f64 = StandardNormal.sample(&mut rng);
        let n_leap = rng.random_range(1..=cfg.max_leapfrog);
        let u: f64 = rng.random();

        let p0 = m.sqrt() * z;
        let h0 = -lp + 0.5 * p0 * p0 / m;
        let mut x = theta;
        let mut p = p0 + 0.5 * eps * grad(x);
        for l in 0..n_leap {
            x += eps * p / m;
            if l + 1 < n_leap {
                p += eps * grad(x);
            }
        }
        p += 0.5 * eps * grad(x);
        let lp_new = log_post(x);
        let h1 = -lp_new + 0.5 * p * p / m;

        let accept = if h1.is_finite() && x.is_finite() {
            u.ln() < h0 - h1
        } else {
            chain.divergences += 1;
            false
        };
        if accept {
            theta = x;
            lp = lp_new;
            feasible_now = feasible(theta);
        }
        chain.push(
            theta,
            accept,
            feasible_now,
            lp,
            start.elapsed().as_secs_f64(),
        );
    }
    Ok(chain)
}

/// Drops infeasible samples. The result keeps the per-sample metadata of the
/// kept entries and is flagged as no longer being a Markov chain.
pub fn postprocess_feasible(chain: &MarkovChain, feasible: impl Fn(f64) -> bool) -> MarkovChain {
    let mut out = MarkovChain::with_capacity(chain.len(), chain.seed, chain.config);
    out.divergences = chain.divergences;
    for i in 0..chain.len() {
        if feasible(chain.samples[i]) {
            out.push(
                chain.samples[i],
                chain.accepted[i],
                true,
                chain.log_post[i],
                chain.cumulative_seconds[i],
            );
        }
    }
    out.postprocess = Some(PostprocessInfo {
        original_len: chain.len(),
        removed: chain.len() - out.len(),
        not_a_markov_chain: true,
        empty: out.is_empty(),
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleHistory {
    /// Generation 0 is the initial particle set.
    pub generations: Vec<Vec<f64>>,
    /// Mean effective step size used to produce each generation after the
    /// first.
    pub step_sizes: Vec<f64>,
    pub cumulative_seconds: Vec<f64>,
    pub seed: u64,
    pub config: SvgdConfig,
}

impl ParticleHistory {
    pub fn n_particles(&self) -> usize {
        self.generations.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> &[f64] {
        self.generations.last().map_or(&[], Vec::as_slice)
    }

    /// Particles of the updated generations `1..`, after dropping the leading
    /// `fraction` of them, pooled in generation order.
    pub fn pooled(&self, fraction: f64) -> Vec<f64> {
        let updated = &self.generations[1.min(self.generations.len())..];
        updated[burn_in_len(updated.len(), fraction)..].concat()
    }

    /// CSV with columns `generation,particle_index,theta`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["generation", "particle_index", "theta"])?;
        for (g, gen) in self.generations.iter().enumerate() {
            for (i, t) in gen.iter().enumerate() {
                w.write_record([g.to_string(), i.to_string(), t.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn bandwidth_sq(particles: &[f64], mode: Bandwidth) -> f64 {
    match mode {
        Bandwidth::Fixed { h } => h * h,
        Bandwidth::Median => {
            let n = particles.len();
            let mut d2: Vec<f64> = Vec::with_capacity(n * n);
            for a in particles {
                for b in particles {
                    d2.push((a - b) * (a - b));
                }
            }
            d2.sort_by(f64::total_cmp);
            let med = if d2.len() % 2 == 1 {
                d2[d2.len() / 2]
            } else {
                0.5 * (d2[d2.len() / 2 - 1] + d2[d2.len() / 2])
            };
            let h2 = 0.5 * med / ((n as f64) + 1.0).ln();
            if h2 > 0.0 {
                h2
            } else {
                1.0
            }
        }
    }
}

/// Stein direction `(1/n) sum_j [k(x_j, x_i) d_j + d/dx_j k(x_j, x_i)]` for
/// an RBF kernel `exp(-(x_i - x_j)² / (2 h²))`.
fn stein_direction(particles: &[f64], drift: &[f64], h2: f64) -> Vec<f64> {
    let n = particles.len() as f64;
    particles
        .par_iter()
        .map(|&xi| {
            let mut acc = 0.0;
            for (&xj, &dj) in particles.iter().zip(drift) {
                let diff = xi - xj;
                let k = (-diff * diff / (2.0 * h2)).exp();
                acc += k * dj + diff / h2 * k;
            }
            acc / n
        })
        .collect()
}

fn validate_svgd(initial: &[f64], cfg: &SvgdConfig) -> Result<(), SamplerError> {
    if initial.is_empty() {
        return Err(SamplerError::InvalidConfig(
            "need at least one particle".into(),
        ));
    }
    if !(cfg.step_size > 0.0 && (0.0..1.0).contains(&cfg.decay) && cfg.fudge > 0.0) {
        return Err(SamplerError::InvalidConfig(format!(
            "need step_size > 0, decay in [0, 1), fudge > 0; got {}, {}, {}",
            cfg.step_size, cfg.decay, cfg.fudge
        )));
    }
    if let Bandwidth::Fixed { h } = cfg.bandwidth {
        if !(h > 0.0) {
            return Err(SamplerError::InvalidConfig(format!(
                "fixed bandwidth must be > 0, got {h}"
            )));
        }
    }
    Ok(())
}

fn svgd_loop(
    initial: Vec<f64>,
    cfg: &SvgdConfig,
    drift: impl Fn(&[f64]) -> Vec<f64>,
    finish: impl Fn(f64) -> f64,
) -> ParticleHistory {
    let start = Instant::now();
    let n = initial.len();
    let mut history = ParticleHistory {
        generations: Vec::with_capacity(cfg.n_generations + 1),
        step_sizes: Vec::with_capacity(cfg.n_generations),
        cumulative_seconds: vec![0.0],
        seed: cfg.seed,
        config: *cfg,
    };
    let mut x = initial;
    let mut hist = vec![0.0; n];
    history.generations.push(x.clone());
    for gen in 0..cfg.n_generations {
        let d = drift(&x);
        let h2 = bandwidth_sq(&x, cfg.bandwidth);
        let phi = stein_direction(&x, &d, h2);
        let mut step_sum = 0.0;
        for i in 0..n {
            hist[i] = if gen == 0 {
                phi[i] * phi[i]
            } else {
                cfg.decay * hist[i] + (1.0 - cfg.decay) * phi[i] * phi[i]
            };
            let eff = cfg.step_size / (cfg.fudge + hist[i].sqrt());
            step_sum += eff;
            x[i] = finish(x[i] + eff * phi[i]);
        }
        history.step_sizes.push(step_sum / n as f64);
        history.generations.push(x.clone());
        history
            .cumulative_seconds
            .push(start.elapsed().as_secs_f64());
    }
    history
}

/// SVGD with synchronous generation updates. `grad` should already include
/// any penalty terms.
pub fn run_csvgd(
    grad: impl Fn(f64) -> f64 + Sync,
    initial: Vec<f64>,
    cfg: &SvgdConfig,
) -> Result<ParticleHistory, SamplerError> {
    validate_svgd(&initial, cfg)?;
    Ok(svgd_loop(
        initial,
        cfg,
        |x| x.par_iter().map(|&t| grad(t)).collect(),
        |t| t,
    ))
}

/// SVGD on an interval-form `S`: the drift of each particle is
/// `Pr(theta + grad(theta)) - theta`, and every updated particle is
/// projected onto `S`. Initial particles are projected first.
pub fn run_projected_svgd(
    grad: impl Fn(f64) -> f64 + Sync,
    set: &FeasibleSet,
    initial: Vec<f64>,
    cfg: &SvgdConfig,
) -> Result<ParticleHistory, SamplerError> {
    validate_svgd(&initial, cfg)?;
    if set.is_empty() {
        return Err(SamplerError::EmptyFeasibleSet);
    }
    let project = |t: f64| set.project(t).expect("non-empty set");
    let initial = initial.into_iter().map(project).collect();
    Ok(svgd_loop(
        initial,
        cfg,
        |x| x.par_iter().map(|&t| project(t + grad(t)) - t).collect(),
        project,
    ))
}
