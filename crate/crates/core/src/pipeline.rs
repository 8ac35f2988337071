//! Scenario stages and the on-disk artifact bundle.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chance_constraint::{BoundaryScan, ConstraintSurrogate, FeasibleSet, GermBank};
use crate::diagnostics::{
    brooks_gelman_ratio, chain_histogram, l2_series, relative_l2_error, Histogram, L2Point,
    ReferenceDensity, RunDiagnostics,
};
use crate::heat_interface::CoefficientStack;
use crate::plot::{line_plot, step_points, Series};
use crate::porous_flow::integrate_strip;
use crate::samplers::{
    postprocess_feasible, run_chmc, run_crw, run_csvgd, run_projected_svgd, Bandwidth, ChmcConfig,
    CrwConfig, MarkovChain, ParticleHistory, SamplerError, SvgdConfig,
};
use crate::scenario::{
    BuiltSurrogate, ConstraintModel, Problem, SamplerSpec, ScenarioConfig, ScenarioError,
};

fn runtime(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Runtime(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, ScenarioError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ScenarioError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
    w.write_all(b"\n").map_err(|e| ScenarioError::io(path, e))?;
    w.flush().map_err(|e| ScenarioError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), ScenarioError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .map_err(|e| ScenarioError::io(path, e))?;
    w.flush().map_err(|e| ScenarioError::io(path, e))
}

fn write_xy(path: &Path, header: [&str; 2], x: &[f64], y: &[f64]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(runtime)?;
    for (a, b) in x.iter().zip(y) {
        w.write_record([a.to_string(), b.to_string()])
            .map_err(runtime)?;
    }
    w.flush().map_err(|e| ScenarioError::io(path, e))
}

/// Strip trajectory at the germ means, columns `x,t_fluid,t_solid,density,velocity`.
pub fn write_forward(problem: &Problem, theta: f64, path: &Path) -> Result<(), ScenarioError> {
    let cond = problem.posterior.obs.groups[0].condition;
    let traj = integrate_strip(
        &problem.params,
        cond.heat_flux,
        cond.porosity,
        theta,
        &problem.config.solver,
    )
    .map_err(runtime)?;
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "t_fluid", "t_solid", "density", "velocity"])
        .map_err(runtime)?;
    for i in 0..traj.len() {
        w.write_record([
            traj.x_grid[i].to_string(),
            traj.t_fluid[i].to_string(),
            traj.t_solid[i].to_string(),
            traj.density[i].to_string(),
            traj.velocity[i].to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(|e| ScenarioError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateKey {
    pub model: u8,
    pub re: f64,
    pub order: usize,
    pub n_quad: usize,
    pub germ: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateArtifact {
    pub key: SurrogateKey,
    pub surrogate: BuiltSurrogate,
}

impl SurrogateKey {
    pub fn file_name(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("key serializes"));
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!(
            "surrogate_model{}_re{:.6}_k{}_{hex}.json",
            self.model, self.re, self.order
        )
    }
}

pub fn surrogate_key(problem: &Problem, theta: f64) -> SurrogateKey {
    let cfg = &problem.config;
    let germ = match problem.constraint_model() {
        ConstraintModel::Strip { germ, .. } => serde_json::to_value(germ),
        ConstraintModel::Interface { germs, strips, .. } => {
            serde_json::to_value((germs, strips, &cfg.geometry, cfg.interface))
        }
    }
    .expect("germ serializes");
    SurrogateKey {
        model: cfg.model,
        re: theta,
        order: cfg.surrogate.order,
        n_quad: cfg.surrogate.n_quad,
        germ,
    }
}

/// Builds the surrogate at `theta` and stores it under `cache_dir`, reusing
/// an existing file with the same key.
pub fn build_surrogate_cached(
    problem: &Problem,
    theta: f64,
    cache_dir: &Path,
) -> Result<PathBuf, ScenarioError> {
    use crate::chance_constraint::SurrogateFactory;
    let key = surrogate_key(problem, theta);
    let path = cache_dir.join(key.file_name());
    if path.exists() {
        return Ok(path);
    }
    let surrogate = problem.constraint_model().build(theta).map_err(runtime)?;
    write_json(&path, &SurrogateArtifact { key, surrogate })?;
    Ok(path)
}

pub fn load_surrogate(path: &Path) -> Result<SurrogateArtifact, ScenarioError> {
    let f = File::open(path).map_err(|e| ScenarioError::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(runtime)
}

fn set_hint(set: &FeasibleSet) -> String {
    if set.is_empty() {
        return "empty".into();
    }
    set.intervals
        .iter()
        .map(|iv| format!("[{}, {}]", iv.low, iv.high))
        .collect::<Vec<_>>()
        .join(" u ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRun {
    Chains(Vec<MarkovChain>),
    Particles(ParticleHistory),
}

/// Per-chain sample sequences after burn-in, with feasibility labels and
/// cumulative run time per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub chains: Vec<Vec<f64>>,
    pub feasible: Vec<Vec<bool>>,
    pub seconds: Vec<Vec<f64>>,
    pub acceptance_rate: Option<f64>,
}

impl SampleSet {
    pub fn pooled(&self) -> Vec<f64> {
        self.chains.concat()
    }

    pub fn pooled_feasible(&self) -> Vec<f64> {
        self.chains
            .iter()
            .zip(&self.feasible)
            .flat_map(|(c, f)| c.iter().zip(f).filter(|(_, &ok)| ok).map(|(&t, _)| t))
            .collect()
    }

    pub fn infeasible_fraction(&self) -> f64 {
        let n: usize = self.feasible.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.feasible.iter().flatten().filter(|&&f| !f).count() as f64 / n as f64
    }

    /// Chain 0 with infeasible samples removed, keeping the times of the
    /// retained samples.
    fn first_postprocessed(&self) -> (Vec<f64>, Vec<f64>) {
        self.chains[0]
            .iter()
            .zip(&self.seconds[0])
            .zip(&self.feasible[0])
            .filter(|(_, &ok)| ok)
            .map(|((&t, &s), _)| (t, s))
            .unzip()
    }
}

impl SampleRun {
    pub fn sampler_name(&self) -> &'static str {
        match self {
            Self::Chains(c) => match c.first().map(|c| c.config) {
                Some(crate::samplers::ChainConfig::Chmc(_)) => "chmc",
                _ => "crw",
            },
            Self::Particles(_) => "svgd",
        }
    }

    /// Burn-in is dropped per chain; SVGD pools updated generations in
    /// order, so its sample count is particles times generations.
    pub fn sample_set(&self, burn_in: f64, feasible: impl Fn(f64) -> bool + Sync) -> SampleSet {
        match self {
            Self::Chains(chains) => {
                let (mut c, mut f, mut s) = (Vec::new(), Vec::new(), Vec::new());
                for ch in chains {
                    let skip = crate::samplers::burn_in_len(ch.len(), burn_in);
                    c.push(ch.samples[skip..].to_vec());
                    f.push(ch.feasible[skip..].to_vec());
                    s.push(ch.cumulative_seconds[skip..].to_vec());
                }
                let acc = chains.iter().map(MarkovChain::acceptance_rate).sum::<f64>()
                    / chains.len().max(1) as f64;
                SampleSet {
                    chains: c,
                    feasible: f,
                    seconds: s,
                    acceptance_rate: Some(acc),
                }
            }
            Self::Particles(h) => {
                let n_updated = h.generations.len().saturating_sub(1);
                let skip = crate::samplers::burn_in_len(n_updated, burn_in);
                let samples = h.pooled(burn_in);
                let seconds: Vec<f64> = (1 + skip..h.generations.len())
                    .flat_map(|g| {
                        std::iter::repeat_n(
                            h.cumulative_seconds.get(g).copied().unwrap_or(f64::NAN),
                            h.n_particles(),
                        )
                    })
                    .collect();
                let feas = samples.par_iter().map(|&t| feasible(t)).collect();
                SampleSet {
                    chains: vec![samples],
                    feasible: vec![feas],
                    seconds: vec![seconds],
                    acceptance_rate: None,
                }
            }
        }
    }
}

/// Penalty set for the gradient samplers, or an error if it is empty.
fn nonempty(set: &FeasibleSet) -> Result<&FeasibleSet, ScenarioError> {
    if set.is_empty() {
        Err(ScenarioError::Runtime(
            "the scanned feasible set is empty within the prior support; relax beta or alpha"
                .into(),
        ))
    } else {
        Ok(set)
    }
}

/// Runs `spec` on the problem. `set` is the admissible part of the scanned
/// feasible set; it supplies the penalty direction, the projection and the
/// default chain start.
pub fn sample(
    problem: &Problem,
    spec: &SamplerSpec,
    set: &FeasibleSet,
    n_samples: usize,
    n_chains: usize,
    seed: u64,
) -> Result<SampleRun, ScenarioError> {
    let init = |given: Option<f64>| -> Result<f64, ScenarioError> {
        given
            .or_else(|| problem.default_theta_init(set))
            .ok_or_else(|| ScenarioError::InfeasibleInit {
                theta: f64::NAN,
                hint: set_hint(set),
            })
    };
    let map_err = |e: SamplerError| match e {
        SamplerError::InfeasibleInit { theta } => ScenarioError::InfeasibleInit {
            theta,
            hint: set_hint(set),
        },
        other => runtime(other),
    };
    match *spec {
        SamplerSpec::Crw {
            proposal_std,
            theta_init,
        } => {
            let theta_init = init(theta_init)?;
            let chains: Result<Vec<_>, _> = (0..n_chains as u64)
                .into_par_iter()
                .map(|stream| {
                    run_crw(
                        |t| problem.log_post(t),
                        |t| problem.is_feasible(t),
                        &CrwConfig {
                            proposal_std,
                            n_samples,
                            theta_init,
                            seed,
                            stream,
                        },
                    )
                })
                .collect();
            Ok(SampleRun::Chains(chains.map_err(map_err)?))
        }
        SamplerSpec::Chmc {
            mass,
            step,
            max_leapfrog,
            delta,
            theta_init,
        } => {
            let set = nonempty(set)?;
            let theta_init = init(theta_init)?;
            let chains: Result<Vec<_>, _> = (0..n_chains as u64)
                .into_par_iter()
                .map(|stream| {
                    run_chmc(
                        |t| problem.log_post(t),
                        |t| problem.penalized_grad(t, set, delta),
                        |t| problem.is_feasible(t),
                        &ChmcConfig {
                            mass,
                            step,
                            max_leapfrog,
                            n_samples,
                            theta_init,
                            seed,
                            stream,
                        },
                    )
                })
                .collect();
            Ok(SampleRun::Chains(chains.map_err(map_err)?))
        }
        SamplerSpec::Csvgd {
            n_particles,
            n_generations,
            step_size,
            delta,
            bandwidth,
        } => {
            let set = nonempty(set)?;
            let cfg = svgd_config(n_generations, step_size, bandwidth, seed);
            let initial = problem.prior_particles(n_particles, seed);
            run_csvgd(|t| problem.penalized_grad(t, set, delta), initial, &cfg)
                .map(SampleRun::Particles)
                .map_err(map_err)
        }
        SamplerSpec::ProjectedSvgd {
            n_particles,
            n_generations,
            step_size,
            bandwidth,
        } => {
            let set = nonempty(set)?;
            if !set.is_interval() {
                log::warn!(
                    "projected SVGD on a multi-interval set projects onto the nearest interval"
                );
            }
            let cfg = svgd_config(n_generations, step_size, bandwidth, seed);
            let initial = problem.prior_particles_in(n_particles, seed, Some(set));
            let grad = |t: f64| problem.posterior.grad_log_density(t).unwrap_or(0.0);
            run_projected_svgd(grad, set, initial, &cfg)
                .map(SampleRun::Particles)
                .map_err(map_err)
        }
    }
}

fn svgd_config(
    n_generations: usize,
    step_size: f64,
    bandwidth: Option<Bandwidth>,
    seed: u64,
) -> SvgdConfig {
    SvgdConfig {
        n_generations,
        step_size,
        bandwidth: bandwidth.unwrap_or(Bandwidth::Median),
        decay: 0.9,
        fudge: 1e-6,
        seed,
    }
}

/// Raw and feasibility-filtered diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub sampler: String,
    pub n_samples: usize,
    pub raw: RunDiagnostics,
    pub postprocessed: RunDiagnostics,
    pub l2_error: f64,
    pub l2_error_postprocessed: Option<f64>,
    pub posterior_mean: f64,
    pub reference_mean: f64,
    pub oracle_builds: usize,
    pub oracle_failures: usize,
}

pub struct Diagnosed {
    pub report: DiagnosticsReport,
    pub histogram: Histogram,
    pub histogram_postprocessed: Option<Histogram>,
}

pub fn diagnose(
    problem: &Problem,
    sampler: &str,
    set: &SampleSet,
    reference: &ReferenceDensity,
) -> Result<Diagnosed, ScenarioError> {
    let d = &problem.config.diagnostics;
    let range = problem.config.range();
    let pooled = set.pooled();
    if pooled.is_empty() {
        return Err(ScenarioError::Runtime(
            "no samples left after burn-in".into(),
        ));
    }
    let histogram = chain_histogram(&pooled, d.n_bins, range).map_err(runtime)?;
    let kept = set.pooled_feasible();
    let histogram_postprocessed = if kept.is_empty() {
        None
    } else {
        Some(chain_histogram(&kept, d.n_bins, range).map_err(runtime)?)
    };

    let checkpoints = problem.config.checkpoints(set.chains[0].len());
    let raw_l2 = l2_series(
        &set.chains[0],
        &set.seconds[0],
        &checkpoints,
        d.n_bins,
        range,
        reference,
    )
    .map_err(runtime)?;
    let (pp, pp_secs) = set.first_postprocessed();
    let pp_l2 =
        l2_series(&pp, &pp_secs, &checkpoints, d.n_bins, range, reference).map_err(runtime)?;
    let bg = if set.chains.len() >= 2 {
        let min_len = set.chains.iter().map(Vec::len).min().unwrap_or(0);
        let cps = problem.config.checkpoints(min_len);
        let refs: Vec<&[f64]> = set.chains.iter().map(Vec::as_slice).collect();
        brooks_gelman_ratio(&refs, d.confidence, &cps).map_err(runtime)?
    } else {
        Vec::new()
    };
    let report = DiagnosticsReport {
        sampler: sampler.into(),
        n_samples: pooled.len(),
        raw: RunDiagnostics {
            l2_series: raw_l2,
            bg_series: bg.clone(),
            acceptance_rate: set.acceptance_rate,
            infeasible_fraction: set.infeasible_fraction(),
        },
        postprocessed: RunDiagnostics {
            l2_series: pp_l2,
            bg_series: bg,
            acceptance_rate: set.acceptance_rate,
            infeasible_fraction: 0.0,
        },
        l2_error: relative_l2_error(&histogram, reference),
        l2_error_postprocessed: histogram_postprocessed
            .as_ref()
            .map(|h| relative_l2_error(h, reference)),
        posterior_mean: pooled.iter().sum::<f64>() / pooled.len() as f64,
        reference_mean: reference.mean(),
        oracle_builds: problem.oracle.build_count(),
        oracle_failures: problem.oracle.failure_count(),
    };
    Ok(Diagnosed {
        report,
        histogram,
        histogram_postprocessed,
    })
}

/// Result of resampling the interface surrogate at a fixed `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAudit {
    pub theta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub n_draws: usize,
    pub seed: u64,
    /// Fraction of draws with `T_h(z, t_c) <= beta` at every grid point.
    pub joint_probability: f64,
    /// Smallest per-point probability over the grid.
    pub min_pointwise_probability: f64,
    pub max_mean_temperature: f64,
    pub passed: bool,
}

pub struct FieldSnapshots {
    pub start: CoefficientStack,
    pub end: CoefficientStack,
    pub audit: FieldAudit,
}

pub fn field_audit(problem: &Problem, theta: f64) -> Result<FieldSnapshots, ScenarioError> {
    let cfg = &problem.config;
    let (start, end) = problem
        .constraint_model()
        .interface_stacks(theta)
        .map_err(runtime)?;
    let n = cfg.diagnostics.audit_samples;
    let seed = cfg.constraint.seed.wrapping_add(0x5eed);
    let dim = ConstraintSurrogate::germ_dim(&end);
    let bank = GermBank::new(seed, n, dim);
    let n_z = end.n_z();
    let beta = cfg.constraint.beta;
    let chunks: Vec<(usize, usize)> = (0..n).step_by(512).map(|s| (s, (s + 512).min(n))).collect();
    let (joint, per_z) = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut scratch = Vec::new();
            let mut out = vec![0.0; n_z];
            let mut joint = 0usize;
            let mut per_z = vec![0usize; n_z];
            for i in a..b {
                let xi = if dim == 0 {
                    &[][..]
                } else {
                    &bank.draws[i * dim..(i + 1) * dim]
                };
                ConstraintSurrogate::evaluate_into(&end, xi, &mut scratch, &mut out);
                let mut all = true;
                for (c, &v) in per_z.iter_mut().zip(&out) {
                    if v <= beta {
                        *c += 1;
                    } else {
                        all = false;
                    }
                }
                joint += all as usize;
            }
            (joint, per_z)
        })
        .reduce(
            || (0, vec![0; n_z]),
            |(j1, mut p1), (j2, p2)| {
                p1.iter_mut().zip(p2).for_each(|(a, b)| *a += b);
                (j1 + j2, p1)
            },
        );
    let joint_probability = joint as f64 / n as f64;
    let min_pointwise_probability = per_z
        .iter()
        .map(|&c| c as f64 / n as f64)
        .fold(1.0, f64::min);
    let max_mean_temperature = end.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let audit = FieldAudit {
        theta,
        beta,
        alpha: cfg.constraint.alpha,
        n_draws: n,
        seed,
        joint_probability,
        min_pointwise_probability,
        max_mean_temperature,
        passed: joint_probability >= cfg.constraint.alpha,
    };
    Ok(FieldSnapshots { start, end, audit })
}

/// One row of the sampler comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub sampler: String,
    pub n_samples: usize,
    pub l2_raw: f64,
    pub l2_postprocessed: f64,
    pub cpu_seconds: f64,
}

fn lookup(series: &[L2Point], n: usize) -> (f64, f64) {
    series
        .iter()
        .find(|p| p.n_samples == n)
        .map_or((f64::NAN, f64::NAN), |p| (p.error, p.cpu_seconds))
}

/// Rows are the cross product of `samplers` and `checkpoints`, in that
/// order; checkpoints beyond a run's length give `NaN`.
pub fn compare(
    problem: &Problem,
    samplers: &[SamplerSpec],
    checkpoints: &[usize],
    set: &FeasibleSet,
    reference: &ReferenceDensity,
) -> Result<Vec<CompareRow>, ScenarioError> {
    let cfg = &problem.config;
    let d = &cfg.diagnostics;
    let range = cfg.range();
    let mut rows = Vec::new();
    for spec in samplers {
        let n = cfg.compare.n_samples.or(cfg.n_samples).unwrap_or(0);
        let run = sample(problem, spec, set, n, 1, cfg.seed)?;
        let ss = run.sample_set(cfg.burn_in_fraction, |t| problem.is_feasible(t));
        let raw = l2_series(
            &ss.chains[0],
            &ss.seconds[0],
            checkpoints,
            d.n_bins,
            range,
            reference,
        )
        .map_err(runtime)?;
        // Post-processing filters the first n raw samples, so both columns
        // share a sample budget and a CPU time.
        let pp: Vec<f64> = checkpoints
            .iter()
            .map(|&n| {
                if n > ss.chains[0].len() || n == 0 {
                    return f64::NAN;
                }
                let kept: Vec<f64> = ss.chains[0][..n]
                    .iter()
                    .zip(&ss.feasible[0][..n])
                    .filter(|(_, &ok)| ok)
                    .map(|(&t, _)| t)
                    .collect();
                chain_histogram(&kept, d.n_bins, range)
                    .map_or(f64::NAN, |h| relative_l2_error(&h, reference))
            })
            .collect();
        for (&n, l2_pp) in checkpoints.iter().zip(pp) {
            let (l2_raw, cpu_seconds) = lookup(&raw, n);
            rows.push(CompareRow {
                sampler: spec.name().into(),
                n_samples: n,
                l2_raw,
                l2_postprocessed: l2_pp,
                cpu_seconds,
            });
        }
    }
    Ok(rows)
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(|e| ScenarioError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub data_seed: u64,
    pub constraint_seed: u64,
    /// `(seed, stream)` of every chain; SVGD uses the seed alone.
    pub chain_streams: Vec<(u64, u64)>,
    pub scaled_params: crate::porous_flow::ModelParams,
}

pub fn provenance(problem: &Problem) -> Provenance {
    let cfg = &problem.config;
    let n = if cfg.sampler.is_chain() {
        cfg.n_chains
    } else {
        1
    };
    Provenance {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seed: cfg.seed,
        data_seed: cfg.data_seed(),
        constraint_seed: cfg.constraint.seed,
        chain_streams: (0..n as u64).map(|s| (cfg.seed, s)).collect(),
        scaled_params: problem.params,
    }
}

pub fn write_scan(scan: &BoundaryScan, path: &Path) -> Result<(), ScenarioError> {
    let w = create(path)?;
    scan.write_csv(w).map_err(runtime)
}

pub fn write_run(
    run: &SampleRun,
    dir: &Path,
    with_time: bool,
) -> Result<Vec<PathBuf>, ScenarioError> {
    let mut written = Vec::new();
    match run {
        SampleRun::Chains(chains) => {
            for (i, c) in chains.iter().enumerate() {
                let path = dir.join(format!("chain_{i}.csv"));
                c.write_csv(create(&path)?, with_time).map_err(runtime)?;
                written.push(path);
            }
        }
        SampleRun::Particles(h) => {
            let path = dir.join("particles.csv");
            h.write_csv(create(&path)?).map_err(runtime)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Post-processed chains (`chain_i.postprocessed.csv`).
pub fn write_postprocessed(
    chains: &[MarkovChain],
    dir: &Path,
    feasible: impl Fn(f64) -> bool + Copy,
) -> Result<(), ScenarioError> {
    for (i, c) in chains.iter().enumerate() {
        let pp = postprocess_feasible(c, feasible);
        let path = dir.join(format!("chain_{i}.postprocessed.csv"));
        pp.write_csv(create(&path)?, false).map_err(runtime)?;
    }
    Ok(())
}

/// Reads `chain_*.csv` or `particles.csv` from `dir`.
pub fn read_samples(problem: &Problem, dir: &Path) -> Result<SampleSet, ScenarioError> {
    let burn = problem.config.burn_in_fraction;
    let particles = dir.join("particles.csv");
    if particles.exists() {
        let mut r = csv::Reader::from_path(&particles).map_err(runtime)?;
        let mut gens: Vec<Vec<f64>> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(runtime)?;
            let g: usize = rec[0].parse().map_err(runtime)?;
            let t: f64 = rec[2].parse().map_err(runtime)?;
            if gens.len() <= g {
                gens.resize(g + 1, Vec::new());
            }
            gens[g].push(t);
        }
        let n_updated = gens.len().saturating_sub(1);
        let skip = crate::samplers::burn_in_len(n_updated, burn);
        let samples: Vec<f64> = gens.get(1 + skip..).map(|g| g.concat()).unwrap_or_default();
        let feasible = samples
            .par_iter()
            .map(|&t| problem.is_feasible(t))
            .collect();
        let seconds = vec![f64::NAN; samples.len()];
        return Ok(SampleSet {
            chains: vec![samples],
            feasible: vec![feasible],
            seconds: vec![seconds],
            acceptance_rate: None,
        });
    }
    let mut set = SampleSet {
        chains: Vec::new(),
        feasible: Vec::new(),
        seconds: Vec::new(),
        acceptance_rate: None,
    };
    let (mut accepted, mut total) = (0usize, 0usize);
    for i in 0.. {
        let path = dir.join(format!("chain_{i}.csv"));
        if !path.exists() {
            break;
        }
        let mut r = csv::Reader::from_path(&path).map_err(runtime)?;
        let (mut c, mut f, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(runtime)?;
            c.push(rec[1].parse::<f64>().map_err(runtime)?);
            accepted += (&rec[2] == "1") as usize;
            total += 1;
            f.push(&rec[3] == "1");
            s.push(rec[5].parse::<f64>().unwrap_or(f64::NAN));
        }
        let skip = crate::samplers::burn_in_len(c.len(), burn);
        set.chains.push(c.split_off(skip));
        set.feasible.push(f.split_off(skip));
        set.seconds.push(s.split_off(skip));
    }
    if set.chains.is_empty() {
        return Err(ScenarioError::Runtime(format!(
            "no chain_*.csv or particles.csv in {}",
            dir.display()
        )));
    }
    set.acceptance_rate = Some(accepted as f64 / total.max(1) as f64);
    Ok(set)
}

pub fn write_diagnostics(
    dir: &Path,
    diag: &Diagnosed,
    reference: &ReferenceDensity,
    plots: bool,
) -> Result<(), ScenarioError> {
    write_json(&dir.join("diagnostics.json"), &diag.report)?;
    diag.histogram
        .write_csv(create(&dir.join("histogram.csv"))?)
        .map_err(runtime)?;
    if let Some(h) = &diag.histogram_postprocessed {
        h.write_csv(create(&dir.join("histogram.postprocessed.csv"))?)
            .map_err(runtime)?;
    }
    let mut w = csv::Writer::from_writer(create(&dir.join("l2_series.csv"))?);
    w.write_record(["variant", "n_samples", "error", "cpu_seconds"])
        .map_err(runtime)?;
    for (variant, series) in [
        ("raw", &diag.report.raw.l2_series),
        ("postprocessed", &diag.report.postprocessed.l2_series),
    ] {
        for p in series {
            w.write_record([
                variant.to_string(),
                p.n_samples.to_string(),
                p.error.to_string(),
                p.cpu_seconds.to_string(),
            ])
            .map_err(runtime)?;
        }
    }
    w.flush().map_err(runtime)?;
    if !diag.report.raw.bg_series.is_empty() {
        let (n, r): (Vec<f64>, Vec<f64>) = diag
            .report
            .raw
            .bg_series
            .iter()
            .map(|&(n, r)| (n as f64, r))
            .unzip();
        write_xy(&dir.join("bg_series.csv"), ["n_samples", "ratio"], &n, &r)?;
    }
    if plots {
        let mut series = vec![
            Series {
                label: "samples",
                points: step_points(&diag.histogram.edges, &diag.histogram.heights),
            },
            Series {
                label: "reference",
                points: reference
                    .grid
                    .iter()
                    .copied()
                    .zip(reference.density.iter().copied())
                    .collect(),
            },
        ];
        if let Some(h) = &diag.histogram_postprocessed {
            series.push(Series {
                label: "post-processed",
                points: step_points(&h.edges, &h.heights),
            });
        }
        write_text(
            &dir.join("histogram.svg"),
            &line_plot("Posterior of Re", "Re", "density", &series),
        )?;
    }
    Ok(())
}

pub fn write_fields(dir: &Path, snaps: &FieldSnapshots, plots: bool) -> Result<(), ScenarioError> {
    let std_end: Vec<f64> = snaps
        .end
        .variance()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    write_xy(
        &dir.join("field_t0.csv"),
        ["z", "value"],
        &snaps.start.z_grid,
        &snaps.start.mean,
    )?;
    write_xy(
        &dir.join("field_tc.csv"),
        ["z", "value"],
        &snaps.end.z_grid,
        &snaps.end.mean,
    )?;
    write_xy(
        &dir.join("field_tc_std.csv"),
        ["z", "value"],
        &snaps.end.z_grid,
        &std_end,
    )?;
    write_json(&dir.join("field_audit.json"), &snaps.audit)?;
    if plots {
        let z = &snaps.end.z_grid;
        let band = |sign: f64| -> Vec<(f64, f64)> {
            z.iter()
                .zip(&snaps.end.mean)
                .zip(&std_end)
                .map(|((&z, &m), &s)| (z, m + sign * s))
                .collect()
        };
        let series = [
            Series {
                label: "mean t=0",
                points: z
                    .iter()
                    .copied()
                    .zip(snaps.start.mean.iter().copied())
                    .collect(),
            },
            Series {
                label: "mean t=t_c",
                points: z
                    .iter()
                    .copied()
                    .zip(snaps.end.mean.iter().copied())
                    .collect(),
            },
            Series {
                label: "+std",
                points: band(1.0),
            },
            Series {
                label: "-std",
                points: band(-1.0),
            },
            Series {
                label: "T_max",
                points: vec![(0.0, snaps.audit.beta), (1.0, snaps.audit.beta)],
            },
        ];
        write_text(
            &dir.join("field.svg"),
            &line_plot("Interface temperature", "z", "T_h", &series),
        )?;
    }
    Ok(())
}

/// Summary returned by [`run_scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub feasible_set: FeasibleSet,
    pub report: DiagnosticsReport,
    pub field_audit: Option<FieldAudit>,
    pub seconds: f64,
}

/// Generate data, scan `S`, sample, diagnose and audit, writing every
/// artifact into `out_dir`.
pub fn run_scenario(
    config: ScenarioConfig,
    base_dir: &Path,
    out_dir: &Path,
) -> Result<RunSummary, ScenarioError> {
    let start = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| ScenarioError::io(out_dir, e))?;
    let problem = Problem::build(config, base_dir)?;
    let cfg = &problem.config;
    write_json(&out_dir.join("provenance.json"), &provenance(&problem))?;
    {
        let path = out_dir.join("data.csv");
        problem
            .posterior
            .obs
            .write_csv(create(&path)?)
            .map_err(runtime)?;
        if let Some(p) = &problem.data_provenance {
            write_json(&out_dir.join("data_provenance.json"), p)?;
        }
    }

    let scan = problem.scan()?;
    write_scan(&scan, &out_dir.join("boundary.csv"))?;
    let admissible = problem.admissible_set(&scan);
    write_json(&out_dir.join("feasible_set.json"), &admissible)?;
    log::info!("feasible set: {}", set_hint(&admissible));

    let reference = problem.reference()?;
    reference
        .write_csv(create(&out_dir.join("reference.csv"))?)
        .map_err(runtime)?;

    let run = sample(
        &problem,
        &cfg.sampler,
        &admissible,
        cfg.n_samples.unwrap_or(0),
        cfg.n_chains,
        cfg.seed,
    )?;
    write_run(&run, out_dir, cfg.output.wall_time_in_chain_csv)?;
    if let SampleRun::Chains(chains) = &run {
        write_postprocessed(chains, out_dir, |t| problem.is_feasible(t))?;
    }
    let samples = run.sample_set(cfg.burn_in_fraction, |t| problem.is_feasible(t));
    let diag = diagnose(&problem, cfg.sampler.name(), &samples, &reference)?;
    write_diagnostics(out_dir, &diag, &reference, cfg.output.plots)?;

    let field_audit = if cfg.geometry.is_some() {
        let snaps = field_audit(&problem, diag.report.posterior_mean)?;
        write_fields(out_dir, &snaps, cfg.output.plots)?;
        Some(snaps.audit)
    } else {
        None
    };

    if !cfg.compare.samplers.is_empty() {
        let cps = if cfg.compare.checkpoints.is_empty() {
            problem.config.checkpoints(cfg.n_samples.unwrap_or(0))
        } else {
            cfg.compare.checkpoints.clone()
        };
        let rows = compare(
            &problem,
            &cfg.compare.samplers,
            &cps,
            &admissible,
            &reference,
        )?;
        write_compare_csv(&out_dir.join("compare.csv"), &rows)?;
    }

    let summary = RunSummary {
        output_dir: out_dir.to_path_buf(),
        feasible_set: admissible,
        report: diag.report,
        field_audit,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
