//! JSON scenario configuration and the assembled inference problem.
//!
//! Keys starting with `_` anywhere in a scenario document are comments and
//! are dropped before validation; every other unknown key is an error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{
    generate_observations, DataProvenance, GroupSpec, LikelihoodForm, ObservationGroup,
    ObservationSet, Posterior, PressureModel, PriorSpec,
};
use crate::chance_constraint::{
    scan_feasible_boundary, BoundaryScan, ChanceConstraintSpec, ConstraintSurrogate,
    FeasibilityOracle, FeasibleSet, Interval, SurrogateFactory,
};
use crate::diagnostics::{linspace, reference_posterior, ReferenceDensity};
use crate::gpc::{
    build_terminal_expansion, Expansion, GermSpec, GermVariable, SurrogateOptions, UncertainInput,
};
use crate::heat_interface::{
    CoefficientStack, InterfaceDiscretization, InterfaceGeometry, InterfaceModel, StripExpansion,
};
use crate::porous_flow::{GermMean, ModelParams, Scaling, SolverOptions};
use crate::samplers::Bandwidth;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("initial value theta = {theta} is infeasible; scanned feasible set: {hint}")]
    InfeasibleInit { theta: f64, hint: String },
    #[error("{0}")]
    Runtime(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub order: usize,
    pub n_quad: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            order: 3,
            n_quad: 6,
        }
    }
}

/// Per-strip heat-flux distribution for model 3, as factors of the nominal
/// heat flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StripProfile {
    /// `q_i = q0 (base + (peak - base) exp(-((z_i - center) / width)²))`,
    /// standard deviation `rel_std q_i`.
    Bump {
        base: f64,
        peak: f64,
        center: f64,
        width: f64,
        rel_std: f64,
    },
    /// Explicit per-strip means and standard deviations (W/m², after
    /// scaling).
    Explicit { means: Vec<f64>, std_devs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GermConfig {
    /// Mean heat flux; defaults to the (scaled) nominal value.
    #[serde(default)]
    pub heat_flux_mean: Option<f64>,
    #[serde(default)]
    pub heat_flux_std: Option<f64>,
    #[serde(default)]
    pub porosity_mean: Option<f64>,
    #[serde(default)]
    pub porosity_std: Option<f64>,
    /// Model 3 only.
    #[serde(default)]
    pub strip_profile: Option<StripProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub classic_iid: bool,
    pub fd_step: f64,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            classic_iid: false,
            fd_step: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub theta_true: f64,
    pub noise_std: f64,
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Existing observations (`group,value`), relative to the scenario file.
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn default_n_obs() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Defaults to the diagnostics range.
    pub range: Option<(f64, f64)>,
    pub n_prescan: usize,
    pub tol: f64,
    /// Intervals reaching a scan end are taken to continue beyond it.
    pub open_ends: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            range: None,
            n_prescan: 36,
            tol: 0.5,
            open_ends: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Crw {
        proposal_std: f64,
        #[serde(default)]
        theta_init: Option<f64>,
    },
    Chmc {
        mass: f64,
        step: f64,
        max_leapfrog: usize,
        delta: f64,
        #[serde(default)]
        theta_init: Option<f64>,
    },
    Csvgd {
        n_particles: usize,
        n_generations: usize,
        step_size: f64,
        delta: f64,
        #[serde(default)]
        bandwidth: Option<Bandwidth>,
    },
    ProjectedSvgd {
        n_particles: usize,
        n_generations: usize,
        step_size: f64,
        #[serde(default)]
        bandwidth: Option<Bandwidth>,
    },
}

impl SamplerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Crw { .. } => "crw",
            Self::Chmc { .. } => "chmc",
            Self::Csvgd { .. } => "csvgd",
            Self::ProjectedSvgd { .. } => "projected_svgd",
        }
    }

    pub fn is_chain(&self) -> bool {
        matches!(self, Self::Crw { .. } | Self::Chmc { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Histogram and reference range; defaults to the uniform prior support
    /// or `[300, 1000]`.
    pub range: Option<(f64, f64)>,
    pub n_bins: usize,
    pub reference_nodes: usize,
    pub confidence: f64,
    /// Sample counts for the L2 and Brooks-Gelman series; empty picks a
    /// 1-2-5 sequence.
    pub checkpoints: Vec<usize>,
    /// Germ draws for the field audit of models 2 and 3.
    pub audit_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            range: None,
            n_bins: 50,
            reference_nodes: 2000,
            confidence: 0.95,
            checkpoints: Vec::new(),
            audit_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Fill the `cumulative_seconds` column of chain CSVs. Off by default so
    /// chain files are byte-reproducible.
    pub wall_time_in_chain_csv: bool,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub samplers: Vec<SamplerSpec>,
    pub checkpoints: Vec<usize>,
    /// Chain length for cRW and cHMC in the comparison; defaults to
    /// `n_samples`.
    pub n_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: u8,
    #[serde(default)]
    pub model_params: ModelParams,
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub germ: GermConfig,
    #[serde(default)]
    pub geometry: Option<InterfaceGeometry>,
    #[serde(default)]
    pub interface: InterfaceDiscretization,
    pub constraint: ChanceConstraintSpec,
    pub prior: PriorSpec,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    pub sampler: SamplerSpec,
    /// Chain length for cRW and cHMC.
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default = "one")]
    pub n_chains: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn one() -> usize {
    1
}

fn default_burn_in() -> f64 {
    0.1
}

fn strip_comments(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.starts_with('_'));
            map.values_mut().for_each(strip_comments);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_comments),
        _ => {}
    }
}

fn allow_comments(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            if map.get("additionalProperties") == Some(&serde_json::Value::Bool(false)) {
                map.insert("patternProperties".into(), serde_json::json!({"^_": {}}));
            }
            map.values_mut().for_each(allow_comments);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(allow_comments),
        _ => {}
    }
}

impl ScenarioConfig {
    /// JSON schema of a scenario file. Keys starting with `_` are comments
    /// and are accepted in every object.
    pub fn json_schema() -> serde_json::Value {
        let mut v =
            serde_json::to_value(schemars::schema_for!(ScenarioConfig)).expect("schema serializes");
        allow_comments(&mut v);
        v
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        strip_comments(&mut value);
        let cfg: Self = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(1..=3).contains(&self.model) {
            return Err(invalid(format!(
                "model must be 1, 2 or 3, got {}",
                self.model
            )));
        }
        self.params()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.constraint
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.prior.validate().map_err(|e| invalid(e.to_string()))?;
        if self.surrogate.n_quad < self.surrogate.order + 1 {
            return Err(invalid("surrogate.n_quad must be >= order + 1"));
        }
        match (self.model, &self.geometry) {
            (1, Some(_)) => return Err(invalid("model 1 must not carry a geometry")),
            (2 | 3, None) => return Err(invalid(format!("model {} needs a geometry", self.model))),
            (2 | 3, Some(g)) => {
                g.validate().map_err(|e| invalid(e.to_string()))?;
                if self.germ.porosity_std.is_some() {
                    return Err(invalid(
                        "porosity is deterministic per section in models 2 and 3",
                    ));
                }
            }
            _ => {}
        }
        match (self.model, &self.germ.strip_profile) {
            (3, None) => return Err(invalid("model 3 needs germ.strip_profile")),
            (1 | 2, Some(_)) => {
                return Err(invalid("germ.strip_profile is only valid for model 3"))
            }
            (3, Some(StripProfile::Explicit { means, std_devs })) => {
                let n = self.geometry.as_ref().map_or(0, |g| g.n_strips);
                if means.len() != n || std_devs.len() != n {
                    return Err(invalid(format!(
                        "explicit strip profile needs {n} means and std_devs"
                    )));
                }
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(invalid("burn_in_fraction must be in [0, 1)"));
        }
        if self.n_chains == 0 {
            return Err(invalid("n_chains must be >= 1"));
        }
        if !(self.data.noise_std > 0.0) || self.data.n_obs == 0 {
            return Err(invalid("data.noise_std must be > 0 and data.n_obs >= 1"));
        }
        if !(self.likelihood.fd_step > 0.0) {
            return Err(invalid("likelihood.fd_step must be > 0"));
        }
        let (lo, hi) = self.range();
        if !(lo < hi) {
            return Err(invalid("diagnostics range must satisfy low < high"));
        }
        if self.diagnostics.n_bins == 0 || self.diagnostics.reference_nodes < 2 {
            return Err(invalid(
                "diagnostics needs n_bins >= 1 and reference_nodes >= 2",
            ));
        }
        validate_sampler(&self.sampler, self.n_samples)?;
        for s in &self.compare.samplers {
            validate_sampler(s, self.n_samples)?;
        }
        Ok(())
    }

    /// Physical parameters after scaling.
    pub fn params(&self) -> ModelParams {
        self.model_params.scaled(&self.scaling)
    }

    pub fn range(&self) -> (f64, f64) {
        if let Some(r) = self.diagnostics.range {
            return r;
        }
        match self.prior {
            PriorSpec::Uniform { low, high, .. } => (low, high),
            PriorSpec::Gaussian { .. } => (300.0, 1000.0),
        }
    }

    pub fn scan_range(&self) -> (f64, f64) {
        self.scan.range.unwrap_or_else(|| self.range())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn checkpoints(&self, n: usize) -> Vec<usize> {
        if !self.diagnostics.checkpoints.is_empty() {
            return self
                .diagnostics
                .checkpoints
                .iter()
                .copied()
                .filter(|&c| c <= n)
                .collect();
        }
        default_checkpoints(n)
    }
}

/// `100, 200, 500, 1000, ...` up to `n`, with `n` itself appended.
pub fn default_checkpoints(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 100;
    'outer: loop {
        for m in [1, 2, 5] {
            let c = m * decade;
            if c >= n {
                break 'outer;
            }
            out.push(c);
        }
        decade *= 10;
    }
    if n > 0 {
        out.push(n);
    }
    out
}

fn validate_sampler(s: &SamplerSpec, n_samples: Option<usize>) -> Result<(), ScenarioError> {
    if s.is_chain() && n_samples.unwrap_or(0) == 0 {
        return Err(invalid(format!(
            "sampler {} needs n_samples >= 1",
            s.name()
        )));
    }
    match *s {
        SamplerSpec::Crw { proposal_std, .. } if !(proposal_std > 0.0) => {
            Err(invalid("proposal_std must be > 0"))
        }
        SamplerSpec::Chmc {
            mass,
            step,
            max_leapfrog,
            delta,
            ..
        } if !(mass > 0.0 && step > 0.0 && max_leapfrog >= 1 && delta >= 0.0) => Err(invalid(
            "chmc needs mass > 0, step > 0, max_leapfrog >= 1, delta >= 0",
        )),
        SamplerSpec::Csvgd {
            n_particles,
            step_size,
            delta,
            ..
        } if !(n_particles >= 2 && step_size > 0.0 && delta >= 0.0) => Err(invalid(
            "csvgd needs n_particles >= 2, step_size > 0, delta >= 0",
        )),
        SamplerSpec::ProjectedSvgd {
            n_particles,
            step_size,
            ..
        } if !(n_particles >= 2 && step_size > 0.0) => Err(invalid(
            "projected_svgd needs n_particles >= 2, step_size > 0",
        )),
        _ => Ok(()),
    }
}

/// One porous strip of the interface: which global germ drives its heat flux
/// and at what porosity it runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripPlan {
    pub germ_index: usize,
    pub porosity: f64,
}

/// The constrained quantity `f2` as a function of `theta`.
#[derive(Debug, Clone)]
pub enum ConstraintModel {
    /// `T_f(1)` of a single strip.
    Strip {
        params: ModelParams,
        germ: GermSpec,
        opts: SurrogateOptions,
    },
    /// Interface temperature at `t_c` over the whole wall.
    Interface {
        params: ModelParams,
        germs: Vec<GermVariable>,
        strips: Vec<Option<StripPlan>>,
        interface: InterfaceModel,
        opts: SurrogateOptions,
    },
}

/// A built constraint surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltSurrogate {
    Scalar(Expansion),
    Field(CoefficientStack),
}

impl ConstraintSurrogate for BuiltSurrogate {
    fn germ_dim(&self) -> usize {
        match self {
            Self::Scalar(e) => e.germ_dim(),
            Self::Field(s) => s.germ_dim(),
        }
    }

    fn n_outputs(&self) -> usize {
        match self {
            Self::Scalar(e) => e.n_outputs(),
            Self::Field(s) => ConstraintSurrogate::n_outputs(s),
        }
    }

    fn evaluate_into(&self, xi: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        match self {
            Self::Scalar(e) => e.evaluate_into(xi, scratch, out),
            Self::Field(s) => ConstraintSurrogate::evaluate_into(s, xi, scratch, out),
        }
    }

    fn as_expansion(&self) -> Option<&Expansion> {
        match self {
            Self::Scalar(e) => Some(e),
            Self::Field(_) => None,
        }
    }
}

impl ConstraintModel {
    /// Univariate `T_f(1)` expansions of every strip at `theta`; distinct
    /// `(germ, porosity)` pairs are built once. Wall strips are constants at
    /// `T_0`.
    pub fn strip_expansions(&self, theta: f64) -> Result<Vec<StripExpansion>, String> {
        let Self::Interface {
            params,
            germs,
            strips,
            interface,
            opts,
        } = self
        else {
            return Err("strip expansions exist only for interface models".into());
        };
        let mut distinct: Vec<StripPlan> = Vec::new();
        for p in strips.iter().flatten() {
            if !distinct.contains(p) {
                distinct.push(*p);
            }
        }
        let built: Vec<Result<Expansion, String>> = distinct
            .par_iter()
            .map(|plan| {
                let p = ModelParams {
                    porosity: plan.porosity,
                    ..*params
                };
                let germ = GermSpec::new(vec![germs[plan.germ_index].clone()]);
                build_terminal_expansion(&p, &germ, theta, opts).map_err(|e| e.to_string())
            })
            .collect();
        let mut table = HashMap::new();
        for (plan, e) in distinct.iter().zip(built) {
            table.insert((plan.germ_index, plan.porosity.to_bits()), e?);
        }
        let wall = interface.geometry().wall_temp;
        Ok(strips
            .iter()
            .map(|s| match s {
                Some(plan) => StripExpansion {
                    germ_indices: vec![plan.germ_index],
                    expansion: table[&(plan.germ_index, plan.porosity.to_bits())].clone(),
                },
                None => StripExpansion::constant(wall),
            })
            .collect())
    }

    /// Coefficient stacks of the interface field at `t = 0` and `t = t_c`.
    pub fn interface_stacks(
        &self,
        theta: f64,
    ) -> Result<(CoefficientStack, CoefficientStack), String> {
        let Self::Interface { interface, .. } = self else {
            return Err("interface stacks exist only for interface models".into());
        };
        let strips = self.strip_expansions(theta)?;
        let start = interface
            .stack_at_start(&strips)
            .map_err(|e| e.to_string())?;
        let end = interface
            .stack_at_constraint_time(&strips)
            .map_err(|e| e.to_string())?;
        Ok((start, end))
    }
}

impl SurrogateFactory for ConstraintModel {
    type Surrogate = BuiltSurrogate;

    fn build(&self, theta: f64) -> Result<BuiltSurrogate, String> {
        match self {
            Self::Strip { params, germ, opts } => {
                build_terminal_expansion(params, germ, theta, opts)
                    .map(BuiltSurrogate::Scalar)
                    .map_err(|e| e.to_string())
            }
            Self::Interface { interface, .. } => {
                let strips = self.strip_expansions(theta)?;
                interface
                    .stack_at_constraint_time(&strips)
                    .map(BuiltSurrogate::Field)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

/// Germ variables and strip layout of a scenario.
fn germ_layout(
    cfg: &ScenarioConfig,
    params: &ModelParams,
) -> (Vec<GermVariable>, Vec<Option<StripPlan>>) {
    let q_mean = cfg.germ.heat_flux_mean.unwrap_or(params.heat_flux_nominal);
    let q_std = cfg.germ.heat_flux_std.unwrap_or(0.0);
    match (cfg.model, &cfg.geometry) {
        (1, _) | (_, None) => {
            let mut vars = vec![GermVariable::gaussian(
                UncertainInput::HeatFlux,
                q_mean,
                q_std,
            )];
            if let Some(s) = cfg.germ.porosity_std {
                let m = cfg.germ.porosity_mean.unwrap_or(params.porosity);
                vars.push(GermVariable::gaussian(UncertainInput::Porosity, m, s));
            }
            (vars, Vec::new())
        }
        (2, Some(g)) => {
            let vars = vec![GermVariable::gaussian(
                UncertainInput::HeatFlux,
                q_mean,
                q_std,
            )];
            let plans = (0..g.n_strips)
                .map(|s| {
                    g.strip_porosity(s).map(|porosity| StripPlan {
                        germ_index: 0,
                        porosity,
                    })
                })
                .collect();
            (vars, plans)
        }
        (_, Some(g)) => {
            let q0 = params.heat_flux_nominal;
            let (means, stds): (Vec<f64>, Vec<f64>) =
                match cfg.germ.strip_profile.as_ref().expect("validated") {
                    StripProfile::Bump {
                        base,
                        peak,
                        center,
                        width,
                        rel_std,
                    } => (0..g.n_strips)
                        .map(|s| {
                            let z = g.strip_center(s);
                            let m = q0
                                * (base + (peak - base) * (-((z - center) / width).powi(2)).exp());
                            (m, rel_std * m)
                        })
                        .unzip(),
                    StripProfile::Explicit { means, std_devs } => (means.clone(), std_devs.clone()),
                };
            let vars = means
                .iter()
                .zip(&stds)
                .map(|(&m, &s)| GermVariable::gaussian(UncertainInput::HeatFlux, m, s))
                .collect();
            let plans = (0..g.n_strips)
                .map(|s| {
                    g.strip_porosity(s).map(|porosity| StripPlan {
                        germ_index: s,
                        porosity,
                    })
                })
                .collect();
            (vars, plans)
        }
    }
}

/// Likelihood groups: one strip condition for model 1, one per porous
/// section otherwise (section heat flux = mean over its strips).
fn group_specs(
    cfg: &ScenarioConfig,
    germs: &[GermVariable],
    plans: &[Option<StripPlan>],
) -> Vec<GroupSpec> {
    let noise = cfg.data.noise_std;
    match &cfg.geometry {
        None => {
            let q = germs[0].mean;
            let phi = germs.get(1).map_or(cfg.params().porosity, |v| v.mean);
            vec![GroupSpec {
                label: "strip".into(),
                condition: GermMean {
                    heat_flux: q,
                    porosity: phi,
                },
                noise_std: noise,
            }]
        }
        Some(g) => g
            .section_porosities
            .iter()
            .enumerate()
            .filter_map(|(i, sec)| {
                let qs: Vec<f64> = plans
                    .iter()
                    .enumerate()
                    .filter(|(s, p)| {
                        let c = g.strip_center(*s);
                        p.is_some() && sec.start <= c && c < sec.end
                    })
                    .map(|(_, p)| germs[p.expect("filtered").germ_index].mean)
                    .collect();
                (!qs.is_empty()).then(|| GroupSpec {
                    label: format!("section{i}"),
                    condition: GermMean {
                        heat_flux: qs.iter().sum::<f64>() / qs.len() as f64,
                        porosity: sec.porosity,
                    },
                    noise_std: noise,
                })
            })
            .collect(),
    }
}

/// Everything needed to evaluate and sample one scenario.
pub struct Problem {
    pub config: ScenarioConfig,
    pub params: ModelParams,
    pub posterior: Posterior,
    pub data_provenance: Option<DataProvenance>,
    pub oracle: FeasibilityOracle<ConstraintModel>,
}

impl Problem {
    /// `base_dir` resolves a relative `data.csv` path.
    pub fn build(config: ScenarioConfig, base_dir: &Path) -> Result<Self, ScenarioError> {
        config.validate()?;
        let params = config.params();
        let opts = SurrogateOptions {
            order: config.surrogate.order,
            n_quad: config.surrogate.n_quad,
            solver: config.solver,
        };
        let (germs, plans) = germ_layout(&config, &params);
        let model = match &config.geometry {
            None => ConstraintModel::Strip {
                params,
                germ: GermSpec::new(germs.clone()),
                opts,
            },
            Some(g) => {
                let interface = InterfaceModel::new(g.clone(), config.interface)
                    .map_err(|e| invalid(e.to_string()))?;
                ConstraintModel::Interface {
                    params,
                    germs: germs.clone(),
                    strips: plans.clone(),
                    interface,
                    opts,
                }
            }
        };
        // Interface germs are independent per strip, so each is checked on its own.
        match &model {
            ConstraintModel::Strip { germ, .. } => germ.validate(),
            ConstraintModel::Interface { germs, .. } => germs
                .iter()
                .try_for_each(|g| GermSpec::new(vec![g.clone()]).validate()),
        }
        .map_err(|e| invalid(e.to_string()))?;

        let pressure = PressureModel {
            params,
            solver: config.solver,
        };
        let groups = group_specs(&config, &germs, &plans);
        let (obs, provenance) = match &config.data.csv {
            Some(path) => {
                let path = base_dir.join(path);
                let file = std::fs::File::open(&path).map_err(|e| ScenarioError::io(&path, e))?;
                let templates = groups
                    .iter()
                    .map(|g| ObservationGroup {
                        label: g.label.clone(),
                        values: Vec::new(),
                        noise_std: g.noise_std,
                        condition: g.condition,
                    })
                    .collect();
                let obs = ObservationSet::read_csv(file, templates)
                    .map_err(|e| invalid(e.to_string()))?;
                (obs, None)
            }
            None => {
                let (obs, prov) = generate_observations(
                    &pressure,
                    config.data.theta_true,
                    &groups,
                    config.data.n_obs,
                    config.data_seed(),
                )
                .map_err(|e| ScenarioError::Runtime(format!("data generation failed: {e}")))?;
                (obs, Some(prov))
            }
        };
        let posterior = Posterior {
            obs,
            prior: config.prior.clone(),
            model: pressure,
            form: if config.likelihood.classic_iid {
                LikelihoodForm::ClassicIid
            } else {
                LikelihoodForm::Tempered
            },
            fd_step: config.likelihood.fd_step,
        };
        let oracle = FeasibilityOracle::new(config.constraint.clone(), model)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            config,
            params,
            posterior,
            data_provenance: provenance,
            oracle,
        })
    }

    pub fn log_post(&self, theta: f64) -> f64 {
        self.posterior.log_density(theta)
    }

    pub fn is_feasible(&self, theta: f64) -> bool {
        self.oracle.is_feasible(theta)
    }

    pub fn constraint_model(&self) -> &ConstraintModel {
        self.oracle.factory()
    }

    pub fn scan(&self) -> Result<BoundaryScan, ScenarioError> {
        let sc = &self.config.scan;
        let range = self.config.scan_range();
        let mut scan = scan_feasible_boundary(
            range,
            sc.n_prescan,
            sc.tol,
            self.config.constraint.alpha,
            |t| self.oracle.probability(t),
        )
        .map_err(|e| invalid(e.to_string()))?;
        if sc.open_ends {
            for iv in &mut scan.set.intervals {
                if iv.low == range.0 {
                    iv.low = f64::NEG_INFINITY;
                }
                if iv.high == range.1 {
                    iv.high = f64::INFINITY;
                }
            }
        }
        Ok(scan)
    }

    /// Scanned `S` intersected with the prior support.
    pub fn admissible_set(&self, scan: &BoundaryScan) -> FeasibleSet {
        let (lo, hi) = self.posterior.prior.support();
        FeasibleSet {
            intervals: scan
                .set
                .intervals
                .iter()
                .filter_map(|iv| {
                    let (a, b) = (iv.low.max(lo), iv.high.min(hi));
                    (a <= b).then_some(Interval { low: a, high: b })
                })
                .collect(),
        }
    }

    pub fn reference(&self) -> Result<ReferenceDensity, ScenarioError> {
        let (lo, hi) = self.config.range();
        let grid = linspace(lo, hi, self.config.diagnostics.reference_nodes);
        reference_posterior(&grid, |t| self.log_post(t), |t| self.is_feasible(t))
            .map_err(|e| ScenarioError::Runtime(e.to_string()))
    }

    /// Gradient of the unconstrained log-posterior plus `delta` toward
    /// `set` wherever `theta` is infeasible or outside the prior support. A
    /// failed forward solve contributes zero.
    pub fn penalized_grad(&self, theta: f64, set: &FeasibleSet, delta: f64) -> f64 {
        let base = self.posterior.grad_log_density(theta).unwrap_or(0.0);
        let (lo, hi) = self.posterior.prior.support();
        let admissible = theta >= lo && theta <= hi && self.is_feasible(theta);
        crate::bayes::penalized_gradient(base, admissible, delta, set.direction_toward(theta))
    }

    /// Default chain start: the midpoint of the widest admissible interval,
    /// with infinite ends replaced by the diagnostics range.
    pub fn default_theta_init(&self, set: &FeasibleSet) -> Option<f64> {
        let (lo, hi) = self.config.range();
        set.intervals
            .iter()
            .map(|iv| (iv.low.max(lo), iv.high.min(hi)))
            .filter(|(a, b)| a <= b)
            .max_by(|x, y| (x.1 - x.0).total_cmp(&(y.1 - y.0)))
            .map(|(a, b)| 0.5 * (a + b))
    }

    /// Initial SVGD particles drawn from the prior.
    pub fn prior_particles(&self, n: usize, seed: u64) -> Vec<f64> {
        self.prior_particles_in(n, seed, None)
    }

    /// Prior draws restricted to `set` by rejection. Projection alone would
    /// stack every rejected draw on the same boundary point, and coincident
    /// particles never separate under SVGD. After a bounded number of
    /// attempts the remaining draws are projected.
    pub fn prior_particles_in(&self, n: usize, seed: u64, set: Option<&FeasibleSet>) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let mut draw = || match self.posterior.prior {
            PriorSpec::Gaussian { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("validated prior")
                .sample(&mut rng),
            PriorSpec::Uniform { low, high, .. } => Uniform::new_inclusive(low, high)
                .expect("validated prior")
                .sample(&mut rng),
        };
        let Some(set) = set.filter(|s| !s.is_empty()) else {
            return (0..n).map(|_| draw()).collect();
        };
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            let t = draw();
            attempts += 1;
            if set.contains(t) {
                out.push(t);
            } else if attempts > 1000 * n {
                out.push(set.project(t).expect("non-empty set"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "_note": "comment",
        "model": 1,
        "scaling": {"heat_flux": 0.01, "_note": "scaled"},
        "germ": {"heat_flux_std": 30.0},
        "constraint": {"beta": 330.0, "alpha": 0.9, "n_prob_samples": 1000},
        "prior": {"kind": "gaussian", "mean": 650.0, "std_dev": 150.0},
        "data": {"theta_true": 700.0, "noise_std": 100.0, "n_obs": 10},
        "sampler": {"kind": "crw", "proposal_std": 50.0},
        "n_samples": 100,
        "seed": 1
    }"#;

    #[test]
    fn comments_are_stripped_and_unknown_keys_rejected() {
        let cfg = ScenarioConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(cfg.scaling.heat_flux, 0.01);
        let bad = MINIMAL.replace("\"seed\": 1", "\"seed\": 1, \"sead\": 2");
        assert!(matches!(
            ScenarioConfig::from_json_str(&bad),
            Err(ScenarioError::Validation(_))
        ));
    }

    #[test]
    fn model_one_rejects_geometry() {
        let mut cfg = ScenarioConfig::from_json_str(MINIMAL).unwrap();
        cfg.geometry = Some(InterfaceGeometry {
            d1: 0.25,
            d2: 0.75,
            n_strips: 2,
            section_porosities: vec![],
            wall_temp: 400.0,
            delta_z: None,
            diffusivity: 1e-3,
            t_constraint: 1.0,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_sequence() {
        assert_eq!(default_checkpoints(1000), vec![100, 200, 500, 1000]);
        assert_eq!(
            default_checkpoints(2500),
            vec![100, 200, 500, 1000, 2000, 2500]
        );
    }

    #[test]
    fn problem_builds_and_scans() {
        let cfg = ScenarioConfig::from_json_str(MINIMAL).unwrap();
        let p = Problem::build(cfg, Path::new(".")).unwrap();
        assert!(p.log_post(700.0).is_finite());
        let scan = p.scan().unwrap();
        assert!(scan.points.len() >= 36);
    }
}
