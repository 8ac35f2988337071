//! Priors, synthetic pressure data, likelihood and posterior gradients for
//! the Reynolds number `theta`.
//!
//! The forward map of a data group is the interface pressure
//! `F(theta) = T_f(1) rho_f(1)` of one strip evaluated at the mean of the
//! uncertain inputs for that group.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::porous_flow::{integrate_terminal, ForwardError, GermMean, ModelParams, SolverOptions};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BayesError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error("csv: {0}")]
    Csv(String),
}

fn default_floor() -> f64 {
    1e-300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian {
        mean: f64,
        std_dev: f64,
    },
    Uniform {
        low: f64,
        high: f64,
        /// Density assigned outside `[low, high]`.
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

impl PriorSpec {
    pub fn uniform(low: f64, high: f64) -> Self {
        Self::Uniform {
            low,
            high,
            floor: default_floor(),
        }
    }

    pub fn validate(&self) -> Result<(), BayesError> {
        match *self {
            Self::Gaussian { mean, std_dev } => {
                if !(std_dev > 0.0 && mean.is_finite()) {
                    return Err(BayesError::InvalidPrior(format!(
                        "need finite mean and std_dev > 0, got {std_dev}"
                    )));
                }
            }
            Self::Uniform { low, high, floor } => {
                if !(low < high) {
                    return Err(BayesError::InvalidPrior(format!(
                        "need low < high, got [{low}, {high}]"
                    )));
                }
                if !(floor > 0.0 && floor < 1.0 / (high - low)) {
                    return Err(BayesError::InvalidPrior(format!(
                        "floor {floor} must lie in (0, 1/(high-low))"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Support of the prior; the whole line for a Gaussian.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Uniform { low, high, .. } => (low, high),
        }
    }
}

pub fn log_prior(theta: f64, prior: &PriorSpec) -> f64 {
    match *prior {
        PriorSpec::Gaussian { mean, std_dev } => {
            let z = (theta - mean) / std_dev;
            -LN_SQRT_2PI - std_dev.ln() - 0.5 * z * z
        }
        PriorSpec::Uniform { low, high, floor } => {
            if (low..=high).contains(&theta) {
                -(high - low).ln()
            } else {
                floor.ln()
            }
        }
    }
}

/// Derivative of [`log_prior`]; zero for the (piecewise constant) uniform
/// prior.
pub fn grad_log_prior(theta: f64, prior: &PriorSpec) -> f64 {
    match *prior {
        PriorSpec::Gaussian { mean, std_dev } => -(theta - mean) / (std_dev * std_dev),
        PriorSpec::Uniform { .. } => 0.0,
    }
}

/// Pressure observations from one operating condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationGroup {
    pub label: String,
    pub values: Vec<f64>,
    pub noise_std: f64,
    /// Mean heat flux and porosity at which `F(theta)` is evaluated.
    pub condition: GermMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSet {
    pub groups: Vec<ObservationGroup>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<(), BayesError> {
        if self.groups.is_empty() {
            return Err(BayesError::InvalidObservations("no groups".into()));
        }
        for g in &self.groups {
            if g.values.is_empty() {
                return Err(BayesError::InvalidObservations(format!(
                    "group {} is empty",
                    g.label
                )));
            }
            if !(g.noise_std > 0.0) {
                return Err(BayesError::InvalidObservations(format!(
                    "group {} has noise_std {} <= 0",
                    g.label, g.noise_std
                )));
            }
        }
        Ok(())
    }

    /// CSV with columns `group,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BayesError> {
        let csv_err = |e: csv::Error| BayesError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["group", "value"]).map_err(csv_err)?;
        for g in &self.groups {
            for v in &g.values {
                w.write_record([g.label.as_str(), &v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| BayesError::Csv(e.to_string()))
    }

    /// Reads `group,value` rows into the given groups (matched by label);
    /// existing values are replaced.
    pub fn read_csv<R: Read>(
        reader: R,
        mut groups: Vec<ObservationGroup>,
    ) -> Result<Self, BayesError> {
        for g in &mut groups {
            g.values.clear();
        }
        let mut r = csv::Reader::from_reader(reader);
        for row in r.records() {
            let row = row.map_err(|e| BayesError::Csv(e.to_string()))?;
            let label = row.get(0).unwrap_or_default();
            let value: f64 = row
                .get(1)
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|e| BayesError::Csv(format!("bad value in group {label}: {e}")))?;
            let group = groups
                .iter_mut()
                .find(|g| g.label == label)
                .ok_or_else(|| BayesError::Csv(format!("unknown group label {label}")))?;
            group.values.push(value);
        }
        let set = Self { groups };
        set.validate()?;
        Ok(set)
    }
}

/// Deterministic pressure forward map used by the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureModel {
    pub params: ModelParams,
    pub solver: SolverOptions,
}

impl PressureModel {
    pub fn pressure(&self, theta: f64, condition: GermMean) -> Result<f64, ForwardError> {
        let (tf, _, rho) = integrate_terminal(
            &self.params,
            condition.heat_flux,
            condition.porosity,
            theta,
            &self.solver,
        )?;
        Ok(tf * rho)
    }
}

/// Settings of one synthetic data group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub label: String,
    pub condition: GermMean,
    pub noise_std: f64,
}

/// Record of how a synthetic observation set was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataProvenance {
    pub theta_true: f64,
    pub n_obs: usize,
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
    /// Noise-free `F(theta_true)` per group.
    pub forward_values: Vec<f64>,
    pub solver: SolverOptions,
    pub params: ModelParams,
}

/// `n_obs` noisy copies of `F(theta_true)` per group, noise drawn
/// sequentially group by group from a ChaCha8 stream seeded with `seed`.
pub fn generate_observations(
    model: &PressureModel,
    theta_true: f64,
    groups: &[GroupSpec],
    n_obs: usize,
    seed: u64,
) -> Result<(ObservationSet, DataProvenance), BayesError> {
    if n_obs == 0 {
        return Err(BayesError::InvalidObservations("n_obs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(groups.len());
    let mut forward_values = Vec::with_capacity(groups.len());
    for g in groups {
        let clean = model.pressure(theta_true, g.condition)?;
        let noise = Normal::new(0.0, g.noise_std)
            .map_err(|e| BayesError::InvalidObservations(format!("group {}: {e}", g.label)))?;
        let values = (0..n_obs).map(|_| clean + noise.sample(&mut rng)).collect();
        forward_values.push(clean);
        out.push(ObservationGroup {
            label: g.label.clone(),
            values,
            noise_std: g.noise_std,
            condition: g.condition,
        });
    }
    let set = ObservationSet { groups: out };
    set.validate()?;
    Ok((
        set,
        DataProvenance {
            theta_true,
            n_obs,
            seed,
            groups: groups.to_vec(),
            forward_values,
            solver: model.solver,
            params: model.params,
        },
    ))
}

/// Weighting of the squared residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodForm {
    /// `-(1 / (2 N sigma²)) sum (d_i - F)²` per group: the group acts as one
    /// observation of variance `N sigma²`.
    #[default]
    Tempered,
    /// `-(1 / (2 sigma²)) sum (d_i - F)²`, the usual i.i.d. form.
    ClassicIid,
}

impl LikelihoodForm {
    fn weight(self, group: &ObservationGroup) -> f64 {
        let s2 = group.noise_std * group.noise_std;
        match self {
            Self::Tempered => 1.0 / (group.values.len() as f64 * s2),
            Self::ClassicIid => 1.0 / s2,
        }
    }
}

fn group_log_likelihood(group: &ObservationGroup, f: f64, form: LikelihoodForm) -> f64 {
    let ss: f64 = group.values.iter().map(|d| (d - f) * (d - f)).sum();
    -LN_SQRT_2PI - group.noise_std.ln() - 0.5 * form.weight(group) * ss
}

/// Sum over groups of the group log-likelihood; `-inf` if the forward model
/// fails.
pub fn log_likelihood(
    obs: &ObservationSet,
    theta: f64,
    model: &PressureModel,
    form: LikelihoodForm,
) -> f64 {
    let mut total = 0.0;
    for g in &obs.groups {
        match model.pressure(theta, g.condition) {
            Ok(f) => total += group_log_likelihood(g, f, form),
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    total
}

/// Unnormalized log-posterior without the feasibility indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub obs: ObservationSet,
    pub prior: PriorSpec,
    pub model: PressureModel,
    pub form: LikelihoodForm,
    /// Step of the one-sided difference for `dF/dtheta`.
    pub fd_step: f64,
}

impl Posterior {
    pub fn validate(&self) -> Result<(), BayesError> {
        self.obs.validate()?;
        self.prior.validate()?;
        if !(self.fd_step > 0.0) {
            return Err(BayesError::InvalidObservations(format!(
                "fd_step must be > 0, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }

    pub fn log_likelihood(&self, theta: f64) -> f64 {
        log_likelihood(&self.obs, theta, &self.model, self.form)
    }

    pub fn log_prior(&self, theta: f64) -> f64 {
        log_prior(theta, &self.prior)
    }

    pub fn log_density(&self, theta: f64) -> f64 {
        self.log_prior(theta) + self.log_likelihood(theta)
    }

    /// Chain-rule gradient
    /// `d/dtheta log prior + sum_g w_g sum_i (d_i - F_g) dF_g/dtheta`
    /// with `dF_g/dtheta ~ (F_g(theta + h) - F_g(theta)) / h`.
    pub fn grad_log_density(&self, theta: f64) -> Result<f64, ForwardError> {
        let h = self.fd_step;
        let mut g = grad_log_prior(theta, &self.prior);
        for group in &self.obs.groups {
            let f = self.model.pressure(theta, group.condition)?;
            let f_h = self.model.pressure(theta + h, group.condition)?;
            let df = (f_h - f) / h;
            let residual: f64 = group.values.iter().map(|d| d - f).sum();
            g += self.form.weight(group) * residual * df;
        }
        Ok(g)
    }
}

/// `base_gradient` plus `delta` times the direction toward `S` when
/// `theta` is infeasible. `direction` is `+1` or `-1` (or `0` if unknown).
pub fn penalized_gradient(base_gradient: f64, feasible: bool, delta: f64, direction: f64) -> f64 {
    if feasible {
        base_gradient
    } else {
        base_gradient + delta * direction
    }
}
