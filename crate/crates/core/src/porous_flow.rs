//! Deterministic strip model of a transpiration-cooled porous wall.
//!
//! A single one-dimensional strip `x in [0, 1]` carries three coupled states:
//! the coolant temperature `T_f`, the solid temperature `T_s`, and the coolant
//! density `rho_f`. The temperatures obey
//!
//! ```text
//! T_s' = kappa_f / ((1 - phi) kappa_s) * Re * Pr * (T_f - T_HG) + q / ((1 - phi) kappa_s)
//! T_f' = Nu / (Pr * Re) * (T_s - T_f)
//! ```
//!
//! and the density follows `rho_f' = N(x; Re) * rho_f` with
//!
//! ```text
//! N = [Nu / (Re Pr) * rho_f^2 (T_s - T_f) + L^2 / (Re K_D) + L / K_F] / (phi^-2 - rho_f^2 T_f)
//! ```
//!
//! The coolant velocity is `v = 1 / rho_f` and the observable interface
//! pressure is `p = T_f(1) * rho_f(1)`. All three ODEs are marched with
//! explicit Euler from the reservoir state at `x = 0`.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physical constants of the strip model. Defaults are the reference
/// parameter set (coolant: air, solid: sintered steel) used throughout the
/// shipped scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub reynolds_nominal: f64,
    pub prandtl: f64,
    pub nusselt: f64,
    /// W/m²
    pub heat_flux_nominal: f64,
    /// K
    pub hot_gas_temp: f64,
    pub porosity: f64,
    /// W/(m·K)
    pub kappa_fluid: f64,
    /// W/(m·K)
    pub kappa_solid: f64,
    /// m²
    pub permeability_darcy: f64,
    /// m
    pub forchheimer: f64,
    /// K
    pub coolant_temp: f64,
    /// K
    pub solid_temp: f64,
    /// Pa
    pub reservoir_pressure: f64,
    /// m
    pub length: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            reynolds_nominal: 405.0,
            prandtl: 0.64,
            nusselt: 7500.0,
            heat_flux_nominal: 30845.0,
            hot_gas_temp: 347.0,
            porosity: 0.111,
            kappa_fluid: 0.03,
            kappa_solid: 15.2,
            permeability_darcy: 3.57e-13,
            forchheimer: 5.17e-8,
            coolant_temp: 304.2,
            solid_temp: 321.9,
            reservoir_pressure: 600_000.0,
            length: 0.015,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ForwardError> {
        let positive = [
            ("reynolds_nominal", self.reynolds_nominal),
            ("prandtl", self.prandtl),
            ("nusselt", self.nusselt),
            ("hot_gas_temp", self.hot_gas_temp),
            ("kappa_fluid", self.kappa_fluid),
            ("kappa_solid", self.kappa_solid),
            ("permeability_darcy", self.permeability_darcy),
            ("forchheimer", self.forchheimer),
            ("coolant_temp", self.coolant_temp),
            ("solid_temp", self.solid_temp),
            ("reservoir_pressure", self.reservoir_pressure),
            ("length", self.length),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ForwardError::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        check_porosity(self.porosity)?;
        if !self.heat_flux_nominal.is_finite() {
            return Err(ForwardError::InvalidParameter {
                name: "heat_flux_nominal",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }

    /// Applies multiplicative rescaling factors, for users whose parameter
    /// set is not already consistent with the dimensionless equations.
    pub fn scaled(&self, scaling: &Scaling) -> ModelParams {
        ModelParams {
            heat_flux_nominal: self.heat_flux_nominal * scaling.heat_flux,
            reservoir_pressure: self.reservoir_pressure * scaling.reservoir_pressure,
            length: self.length * scaling.length,
            ..*self
        }
    }
}

/// Multiplicative factors applied to selected [`ModelParams`] before
/// integration. All factors default to 1 (no rescaling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Scaling {
    pub heat_flux: f64,
    pub reservoir_pressure: f64,
    pub length: f64,
    #[serde(rename = "_note", skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            heat_flux: 1.0,
            reservoir_pressure: 1.0,
            length: 1.0,
            note: None,
        }
    }
}

/// Discretization controls for [`integrate_strip`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub n_steps: usize,
    /// Lower bound on `|phi^-2 - rho_f^2 T_f|` before the density equation is
    /// declared singular.
    pub singular_eps: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_steps: 1000,
            singular_eps: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("density equation singular at x = {x}: |phi^-2 - rho_f^2 T_f| = {denominator:e}")]
    SingularDenominator { x: f64, denominator: f64 },
    #[error("non-finite state at x = {x}")]
    NonFiniteState { x: f64 },
    #[error("coolant density became non-positive at x = {x}")]
    NonPositiveDensity { x: f64 },
}

/// Nodal solution of one strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripTrajectory {
    pub x_grid: Vec<f64>,
    pub t_fluid: Vec<f64>,
    pub t_solid: Vec<f64>,
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl StripTrajectory {
    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }

    /// Checks the structural invariants (equal lengths, increasing grid,
    /// positive density, `v * rho = 1`).
    pub fn validate(&self) -> Result<(), String> {
        let n = self.x_grid.len();
        if n == 0 {
            return Err("empty trajectory".into());
        }
        if [&self.t_fluid, &self.t_solid, &self.density, &self.velocity]
            .iter()
            .any(|a| a.len() != n)
        {
            return Err("array lengths differ from x_grid".into());
        }
        if self.x_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err("x_grid not strictly increasing".into());
        }
        if self.density.iter().any(|&r| !(r > 0.0)) {
            return Err("density must be positive".into());
        }
        Ok(())
    }

    pub fn terminal_fluid_temp(&self) -> f64 {
        *self.t_fluid.last().expect("non-empty trajectory")
    }
}

/// Coefficients of the temperature and density right-hand sides that depend
/// only on `(q, phi, Re)` and the fixed physics.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StripCoefficients {
    /// multiplies `(T_f - T_HG)` in `T_s'`
    solid_coupling: f64,
    /// constant source `q / ((1 - phi) kappa_s)` in `T_s'`
    solid_source: f64,
    hot_gas_temp: f64,
    /// `Nu / (Pr Re)`
    exchange: f64,
    /// `L^2 / (Re K_D) + L / K_F`
    drag: f64,
    inv_phi_sq: f64,
}

impl StripCoefficients {
    pub(crate) fn new(params: &ModelParams, q: f64, phi: f64, re: f64) -> Self {
        let solid = (1.0 - phi) * params.kappa_solid;
        Self {
            solid_coupling: params.kappa_fluid / solid * re * params.prandtl,
            solid_source: q / solid,
            hot_gas_temp: params.hot_gas_temp,
            exchange: params.nusselt / (params.prandtl * re),
            drag: params.length * params.length / (re * params.permeability_darcy)
                + params.length / params.forchheimer,
            inv_phi_sq: 1.0 / (phi * phi),
        }
    }

    #[inline]
    pub(crate) fn d_solid(&self, t_fluid: f64) -> f64 {
        self.solid_coupling * (t_fluid - self.hot_gas_temp) + self.solid_source
    }

    #[inline]
    pub(crate) fn d_fluid(&self, t_fluid: f64, t_solid: f64) -> f64 {
        self.exchange * (t_solid - t_fluid)
    }

    /// Returns `rho_f'`, or the offending denominator when it is within `eps`
    /// of zero.
    #[inline]
    pub(crate) fn d_density(
        &self,
        rho: f64,
        t_fluid: f64,
        t_solid: f64,
        eps: f64,
    ) -> Result<f64, f64> {
        let rho_sq = rho * rho;
        let denominator = self.inv_phi_sq - rho_sq * t_fluid;
        if denominator.abs() < eps || !denominator.is_finite() {
            return Err(denominator);
        }
        let numerator = self.exchange * rho_sq * (t_solid - t_fluid) + self.drag;
        Ok(numerator / denominator * rho)
    }
}

pub(crate) fn check_porosity(phi: f64) -> Result<(), ForwardError> {
    if phi > 0.0 && phi < 1.0 {
        Ok(())
    } else {
        Err(ForwardError::InvalidParameter {
            name: "porosity",
            reason: format!("must lie in (0, 1), got {phi}"),
        })
    }
}

pub(crate) fn check_reynolds(re: f64) -> Result<(), ForwardError> {
    if re.is_finite() && re > 0.0 {
        Ok(())
    } else {
        Err(ForwardError::InvalidParameter {
            name: "reynolds",
            reason: format!("must be finite and > 0, got {re}"),
        })
    }
}

fn check_steps(n_steps: usize) -> Result<(), ForwardError> {
    if n_steps == 0 {
        return Err(ForwardError::InvalidParameter {
            name: "n_steps",
            reason: "must be >= 1".into(),
        });
    }
    Ok(())
}

/// Marches the strip DAE from `x = 0` to `x = 1` with `opts.n_steps` explicit
/// Euler steps and returns all `n_steps + 1` nodal states.
pub fn integrate_strip(
    params: &ModelParams,
    q: f64,
    phi: f64,
    re: f64,
    opts: &SolverOptions,
) -> Result<StripTrajectory, ForwardError> {
    check_steps(opts.n_steps)?;
    check_porosity(phi)?;
    check_reynolds(re)?;

    let n = opts.n_steps;
    let h = 1.0 / n as f64;
    let coeffs = StripCoefficients::new(params, q, phi, re);

    let mut x_grid = Vec::with_capacity(n + 1);
    let mut t_fluid = Vec::with_capacity(n + 1);
    let mut t_solid = Vec::with_capacity(n + 1);
    let mut density = Vec::with_capacity(n + 1);

    let (mut tf, mut ts) = (params.coolant_temp, params.solid_temp);
    let mut rho = params.reservoir_pressure / params.coolant_temp;
    x_grid.push(0.0);
    t_fluid.push(tf);
    t_solid.push(ts);
    density.push(rho);

    for step in 0..n {
        let x = step as f64 * h;
        let d_rho = coeffs
            .d_density(rho, tf, ts, opts.singular_eps)
            .map_err(|denominator| ForwardError::SingularDenominator { x, denominator })?;
        let d_tf = coeffs.d_fluid(tf, ts);
        let d_ts = coeffs.d_solid(tf);
        tf += h * d_tf;
        ts += h * d_ts;
        rho += h * d_rho;
        let x_next = (step + 1) as f64 * h;
        if !(tf.is_finite() && ts.is_finite() && rho.is_finite()) {
            return Err(ForwardError::NonFiniteState { x: x_next });
        }
        if rho <= 0.0 {
            return Err(ForwardError::NonPositiveDensity { x: x_next });
        }
        x_grid.push(x_next);
        t_fluid.push(tf);
        t_solid.push(ts);
        density.push(rho);
    }
    // The last node is exactly 1 regardless of rounding in step * h.
    x_grid[n] = 1.0;

    let velocity = density.iter().map(|r| 1.0 / r).collect();
    Ok(StripTrajectory {
        x_grid,
        t_fluid,
        t_solid,
        density,
        velocity,
    })
}

/// Interface pressure `p = T_f(1) * rho_f(1)`.
pub fn interface_pressure(traj: &StripTrajectory) -> f64 {
    traj.t_fluid.last().copied().unwrap_or(f64::NAN)
        * traj.density.last().copied().unwrap_or(f64::NAN)
}

/// Mean values of the uncertain inputs at which the deterministic forward map
/// `F(Re)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GermMean {
    pub heat_flux: f64,
    pub porosity: f64,
}

/// `F(Re)`: interface pressure of the strip at the mean uncertain inputs.
pub fn forward_pressure_at_mean(
    params: &ModelParams,
    xi_mean: GermMean,
    re: f64,
    opts: &SolverOptions,
) -> Result<f64, ForwardError> {
    let traj = integrate_strip(params, xi_mean.heat_flux, xi_mean.porosity, re, opts)?;
    Ok(interface_pressure(&traj))
}

/// Terminal state `(T_f(1), T_s(1), rho_f(1))` without storing the
/// trajectory. Bit-identical to the last node of [`integrate_strip`].
pub fn integrate_terminal(
    params: &ModelParams,
    q: f64,
    phi: f64,
    re: f64,
    opts: &SolverOptions,
) -> Result<(f64, f64, f64), ForwardError> {
    check_steps(opts.n_steps)?;
    check_porosity(phi)?;
    check_reynolds(re)?;
    let n = opts.n_steps;
    let h = 1.0 / n as f64;
    let coeffs = StripCoefficients::new(params, q, phi, re);
    let (mut tf, mut ts) = (params.coolant_temp, params.solid_temp);
    let mut rho = params.reservoir_pressure / params.coolant_temp;
    for step in 0..n {
        let d_rho = coeffs
            .d_density(rho, tf, ts, opts.singular_eps)
            .map_err(|denominator| ForwardError::SingularDenominator {
                x: step as f64 * h,
                denominator,
            })?;
        let d_tf = coeffs.d_fluid(tf, ts);
        let d_ts = coeffs.d_solid(tf);
        tf += h * d_tf;
        ts += h * d_ts;
        rho += h * d_rho;
        if !(tf.is_finite() && ts.is_finite() && rho.is_finite()) {
            return Err(ForwardError::NonFiniteState {
                x: (step + 1) as f64 * h,
            });
        }
        if rho <= 0.0 {
            return Err(ForwardError::NonPositiveDensity {
                x: (step + 1) as f64 * h,
            });
        }
    }
    Ok((tf, ts, rho))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n_steps: usize) -> SolverOptions {
        SolverOptions {
            n_steps,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn initial_state_matches_reservoir() {
        let p = ModelParams::default();
        let traj =
            integrate_strip(&p, p.heat_flux_nominal, p.porosity, 405.0, &opts(1000)).unwrap();
        assert_eq!(traj.t_fluid[0], 304.2);
        assert_eq!(traj.t_solid[0], 321.9);
        assert_eq!(traj.density[0], 600_000.0 / 304.2);
        assert!((traj.density[0] - 1972.39).abs() < 0.01);
        assert_eq!(traj.len(), 1001);
        assert_eq!(traj.x_grid[1000], 1.0);
        assert!(traj
            .t_fluid
            .iter()
            .chain(&traj.t_solid)
            .all(|t| t.is_finite()));
        traj.validate().unwrap();
    }

    #[test]
    fn zero_flux_at_hot_gas_temperature_is_a_fixed_point() {
        let p = ModelParams {
            heat_flux_nominal: 0.0,
            coolant_temp: 347.0,
            solid_temp: 347.0,
            ..ModelParams::default()
        };
        let traj = integrate_strip(&p, 0.0, p.porosity, 405.0, &opts(500)).unwrap();
        for (&tf, &ts) in traj.t_fluid.iter().zip(&traj.t_solid) {
            assert!((tf - 347.0).abs() <= f64::EPSILON * 347.0);
            assert!((ts - 347.0).abs() <= f64::EPSILON * 347.0);
        }
    }

    #[test]
    fn velocity_is_reciprocal_density() {
        let p = ModelParams::default();
        let traj = integrate_strip(&p, p.heat_flux_nominal, p.porosity, 700.0, &opts(200)).unwrap();
        for (&v, &r) in traj.velocity.iter().zip(&traj.density) {
            assert_eq!(v, 1.0 / r);
        }
    }

    #[test]
    fn pressure_is_product_of_terminal_states() {
        let mut traj = StripTrajectory {
            x_grid: vec![0.0, 1.0],
            t_fluid: vec![5.0, 1.0],
            t_solid: vec![5.0, 5.0],
            density: vec![1.0, 1.0],
            velocity: vec![1.0, 1.0],
        };
        assert_eq!(interface_pressure(&traj), 1.0);
        traj.t_fluid[1] = 2.0;
        traj.density[1] = 3.0;
        assert_eq!(interface_pressure(&traj), 6.0);
    }

    #[test]
    fn terminal_integration_matches_full_trajectory() {
        let p = ModelParams::default();
        let traj = integrate_strip(&p, 300.0, 0.12, 512.0, &opts(1000)).unwrap();
        let (tf, ts, rho) = integrate_terminal(&p, 300.0, 0.12, 512.0, &opts(1000)).unwrap();
        assert_eq!(tf, *traj.t_fluid.last().unwrap());
        assert_eq!(ts, *traj.t_solid.last().unwrap());
        assert_eq!(rho, *traj.density.last().unwrap());
    }

    #[test]
    fn unstable_step_reports_non_positive_density() {
        let p = ModelParams::default();
        let err =
            integrate_strip(&p, p.heat_flux_nominal, p.porosity, 405.0, &opts(10)).unwrap_err();
        assert!(
            matches!(err, ForwardError::NonPositiveDensity { .. }),
            "{err}"
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = ModelParams::default();
        assert!(matches!(
            integrate_strip(&p, 1.0, 1.2, 405.0, &opts(10)),
            Err(ForwardError::InvalidParameter {
                name: "porosity",
                ..
            })
        ));
        assert!(matches!(
            integrate_strip(&p, 1.0, 0.1, -1.0, &opts(10)),
            Err(ForwardError::InvalidParameter {
                name: "reynolds",
                ..
            })
        ));
        assert!(integrate_strip(&p, 1.0, 0.1, 405.0, &opts(0)).is_err());
    }

    #[test]
    fn singular_denominator_is_reported() {
        // phi^-2 = rho^2 T_f exactly at the reservoir state.
        let p = ModelParams::default();
        let rho0 = p.reservoir_pressure / p.coolant_temp;
        let phi = 1.0 / (rho0 * p.coolant_temp.sqrt());
        let err = integrate_strip(
            &p,
            0.0,
            phi,
            405.0,
            &SolverOptions {
                n_steps: 10,
                singular_eps: 1e-3,
            },
        )
        .unwrap_err();
        assert!(matches!(err, ForwardError::SingularDenominator { x, .. } if x == 0.0));
    }

    #[test]
    fn default_params_are_valid() {
        ModelParams::default().validate().unwrap();
        let bad = ModelParams {
            kappa_solid: 0.0,
            ..ModelParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
