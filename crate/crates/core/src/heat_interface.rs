//! Interface temperature along the wall (models 2 and 3).
//!
//! The porous window `(d1, d2)` of the interface `z in [0, 1]` is tiled by
//! `n_strips` pore footprints of half-width `delta_z`. At `t = 0` each
//! footprint carries the outflow temperature `T_f(x = 1)` of its strip and
//! the remaining wall sits at `T_0`. The field then evolves under
//! `dT/dt = lambda d²T/dz²` with zero-flux ends.
//!
//! Space is discretized cell-centred (`z_j = (j + 1/2) / n_z`) with mirrored
//! ghost cells, so the discrete mean is conserved exactly up to rounding and
//! `cos(k pi z)` is a discrete eigenmode.
//!
//! Because the heat equation is linear, every gPC coefficient of the initial
//! field can be diffused on its own. [`InterfaceModel`] exploits this further
//! by diffusing each footprint indicator once and recombining per parameter
//! value.

use std::collections::BTreeMap;
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpc::{hermite_all, Expansion};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeatError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("pore footprint of strip {strip} contains no grid node at n_z = {n_z}")]
    Resolution { strip: usize, n_z: usize },
    #[error("cfl = {0} is outside (0, 0.5]; explicit scheme would be unstable")]
    Unstable(f64),
    #[error("cannot diffuse backwards from t = {from} to t = {to}")]
    TimeReversal { from: f64, to: f64 },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A porous section `[start, end)` of the window with its own porosity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub start: f64,
    pub end: f64,
    pub porosity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InterfaceGeometry {
    pub d1: f64,
    pub d2: f64,
    pub n_strips: usize,
    /// Strips whose centre lies in no section are solid wall at `T_0`.
    pub section_porosities: Vec<Section>,
    pub wall_temp: f64,
    /// Pore half-width; `None` tiles the window exactly,
    /// `(d2 - d1) / (2 n_strips)`.
    #[serde(default)]
    pub delta_z: Option<f64>,
    pub diffusivity: f64,
    pub t_constraint: f64,
}

impl InterfaceGeometry {
    pub fn validate(&self) -> Result<(), HeatError> {
        let bad = |m: String| Err(HeatError::InvalidGeometry(m));
        if !(0.0 <= self.d1 && self.d1 < self.d2 && self.d2 <= 1.0) {
            return bad(format!(
                "need 0 <= d1 < d2 <= 1, got d1 = {}, d2 = {}",
                self.d1, self.d2
            ));
        }
        if self.n_strips == 0 {
            return bad("n_strips must be >= 1".into());
        }
        if !(self.wall_temp > 0.0) {
            return bad("wall_temp must be > 0".into());
        }
        if !(self.diffusivity > 0.0) {
            return bad("diffusivity must be > 0".into());
        }
        if !(self.t_constraint > 0.0) {
            return bad("t_constraint must be > 0".into());
        }
        let spacing = self.strip_spacing();
        let dz = self.half_width();
        if !(dz > 0.0 && 2.0 * dz <= spacing * (1.0 + 1e-12)) {
            return bad(format!(
                "delta_z = {dz} must be > 0 and at most half the strip spacing {spacing}"
            ));
        }
        for s in &self.section_porosities {
            if !(s.start < s.end) {
                return bad(format!("section [{}, {}) is empty", s.start, s.end));
            }
            if !(s.porosity > 0.0 && s.porosity < 1.0) {
                return bad(format!("section porosity {} outside (0, 1)", s.porosity));
            }
        }
        Ok(())
    }

    pub fn strip_spacing(&self) -> f64 {
        (self.d2 - self.d1) / self.n_strips as f64
    }

    pub fn half_width(&self) -> f64 {
        self.delta_z.unwrap_or(0.5 * self.strip_spacing())
    }

    pub fn strip_center(&self, strip: usize) -> f64 {
        self.d1 + (strip as f64 + 0.5) * self.strip_spacing()
    }

    /// Porosity of the section containing the strip centre, or `None` for a
    /// wall strip.
    pub fn strip_porosity(&self, strip: usize) -> Option<f64> {
        let c = self.strip_center(strip);
        self.section_porosities
            .iter()
            .find(|s| s.start <= c && c < s.end)
            .map(|s| s.porosity)
    }
}

/// Cell-centred grid `z_j = (j + 1/2) / n_z`.
pub fn interface_grid(n_z: usize) -> Vec<f64> {
    (0..n_z).map(|j| (j as f64 + 0.5) / n_z as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceField {
    pub z_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl InterfaceField {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Grid nodes covered by each footprint, `[c - delta_z, c + delta_z)`.
fn footprint_nodes(
    geometry: &InterfaceGeometry,
    z_grid: &[f64],
) -> Result<Vec<Vec<usize>>, HeatError> {
    let hw = geometry.half_width();
    (0..geometry.n_strips)
        .map(|s| {
            let c = geometry.strip_center(s);
            let nodes: Vec<usize> = z_grid
                .iter()
                .enumerate()
                .filter(|(_, &z)| c - hw <= z && z < c + hw)
                .map(|(j, _)| j)
                .collect();
            if nodes.is_empty() {
                Err(HeatError::Resolution {
                    strip: s,
                    n_z: z_grid.len(),
                })
            } else {
                Ok(nodes)
            }
        })
        .collect()
}

/// Initial interface field: `strip_values[i]` on footprint `i`, `T_0`
/// elsewhere.
pub fn assemble_initial_field(
    geometry: &InterfaceGeometry,
    strip_values: &[f64],
    n_z: usize,
) -> Result<InterfaceField, HeatError> {
    geometry.validate()?;
    if strip_values.len() != geometry.n_strips {
        return Err(HeatError::DimensionMismatch {
            expected: geometry.n_strips,
            got: strip_values.len(),
        });
    }
    let z_grid = interface_grid(n_z);
    let mut values = vec![geometry.wall_temp; n_z];
    for (nodes, &v) in footprint_nodes(geometry, &z_grid)?.iter().zip(strip_values) {
        for &j in nodes {
            values[j] = v;
        }
    }
    Ok(InterfaceField {
        z_grid,
        values,
        time: 0.0,
    })
}

/// Explicit time-stepping plan: full steps of `dt` followed by one truncated
/// step landing on the end time.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StepPlan {
    ratio: f64,
    full_steps: usize,
    last_ratio: f64,
}

fn step_plan(n_z: usize, lambda: f64, duration: f64, cfl: f64) -> Result<StepPlan, HeatError> {
    if !(cfl > 0.0 && cfl <= 0.5) {
        return Err(HeatError::Unstable(cfl));
    }
    if !(lambda > 0.0) {
        return Err(HeatError::InvalidGeometry(format!(
            "diffusivity must be > 0, got {lambda}"
        )));
    }
    let dz = 1.0 / n_z as f64;
    let dt = cfl * dz * dz / lambda;
    let full_steps = (duration / dt).floor() as usize;
    let rest = duration - full_steps as f64 * dt;
    Ok(StepPlan {
        ratio: cfl,
        full_steps,
        last_ratio: (rest / dt * cfl).max(0.0),
    })
}

fn heat_step(u: &mut [f64], next: &mut [f64], r: f64) {
    let n = u.len();
    if n == 1 {
        return;
    }
    next[0] = u[0] + r * (u[1] - u[0]);
    for j in 1..n - 1 {
        next[j] = u[j] + r * (u[j + 1] - 2.0 * u[j] + u[j - 1]);
    }
    next[n - 1] = u[n - 1] + r * (u[n - 2] - u[n - 1]);
    u.copy_from_slice(next);
}

fn run_plan(u: &mut [f64], plan: &StepPlan) {
    let mut next = vec![0.0; u.len()];
    for _ in 0..plan.full_steps {
        heat_step(u, &mut next, plan.ratio);
    }
    if plan.last_ratio > 0.0 {
        heat_step(u, &mut next, plan.last_ratio);
    }
}

/// Diffuses `field` from `field.time` to `t_end` with step
/// `dt = cfl dz² / lambda`.
pub fn diffuse_field(
    field: &InterfaceField,
    lambda: f64,
    t_end: f64,
    cfl: f64,
) -> Result<InterfaceField, HeatError> {
    if t_end < field.time {
        return Err(HeatError::TimeReversal {
            from: field.time,
            to: t_end,
        });
    }
    let plan = step_plan(field.values.len(), lambda, t_end - field.time, cfl)?;
    let mut values = field.values.clone();
    run_plan(&mut values, &plan);
    Ok(InterfaceField {
        z_grid: field.z_grid.clone(),
        values,
        time: t_end,
    })
}

/// Terminal `T_f(x = 1)` expansion of one strip, with the global germ index
/// of each of its local germ variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripExpansion {
    pub germ_indices: Vec<usize>,
    pub expansion: Expansion,
}

impl StripExpansion {
    /// A deterministic strip (constant expansion).
    pub fn constant(value: f64) -> Self {
        Self {
            germ_indices: Vec::new(),
            expansion: Expansion {
                basis: crate::gpc::TensorBasis::new(0, 0),
                coeffs: vec![value],
            },
        }
    }

    /// `(global germ, degree)` factors of every mode, zero degrees dropped.
    fn terms(&self) -> impl Iterator<Item = (Vec<(usize, usize)>, f64)> + '_ {
        let basis = self.expansion.basis;
        self.expansion
            .coeffs
            .iter()
            .enumerate()
            .map(move |(m, &c)| {
                let key = basis
                    .multi_index(m)
                    .into_iter()
                    .zip(&self.germ_indices)
                    .filter(|(deg, _)| *deg > 0)
                    .map(|(deg, &g)| (g, deg))
                    .collect();
                (key, c)
            })
    }

    fn validate(&self) -> Result<(), HeatError> {
        if self.germ_indices.len() != self.expansion.basis.dim {
            return Err(HeatError::DimensionMismatch {
                expected: self.expansion.basis.dim,
                got: self.germ_indices.len(),
            });
        }
        Ok(())
    }
}

/// One field of the coefficient stack, multiplying
/// `prod He_degree(xi_germ)` over its factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackTerm {
    pub factors: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// gPC expansion of the interface field: the realized field is
/// `mean + sum_t values_t * prod He(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStack {
    pub z_grid: Vec<f64>,
    pub time: f64,
    pub n_germs: usize,
    pub max_degree: usize,
    pub mean: Vec<f64>,
    pub terms: Vec<StackTerm>,
}

impl CoefficientStack {
    pub fn n_z(&self) -> usize {
        self.z_grid.len()
    }

    /// Realized field values for germ `xi`, written into `out`. `hermite`
    /// is scratch space.
    pub fn evaluate_into(
        &self,
        xi: &[f64],
        hermite: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), HeatError> {
        if xi.len() != self.n_germs {
            return Err(HeatError::DimensionMismatch {
                expected: self.n_germs,
                got: xi.len(),
            });
        }
        let base = self.max_degree + 1;
        hermite.resize(self.n_germs * base, 0.0);
        for (g, &x) in xi.iter().enumerate() {
            hermite_all(x, &mut hermite[g * base..(g + 1) * base]);
        }
        out.copy_from_slice(&self.mean);
        for term in &self.terms {
            let w: f64 = term
                .factors
                .iter()
                .map(|&(g, d)| hermite[g * base + d])
                .product();
            for (o, v) in out.iter_mut().zip(&term.values) {
                *o += w * v;
            }
        }
        Ok(())
    }

    /// Pointwise variance of the field, `sum_t values_t² prod degree!`.
    pub fn variance(&self) -> Vec<f64> {
        let mut var = vec![0.0; self.n_z()];
        for term in &self.terms {
            let norm: f64 = term
                .factors
                .iter()
                .map(|&(_, d)| crate::gpc::hermite_norm_sq(d))
                .product();
            for (v, x) in var.iter_mut().zip(&term.values) {
                *v += norm * x * x;
            }
        }
        var
    }
}

/// Realized interface temperature for one germ draw.
pub fn evaluate_interface_temperature(
    stack: &CoefficientStack,
    xi: &[f64],
) -> Result<InterfaceField, HeatError> {
    let mut values = vec![0.0; stack.n_z()];
    stack.evaluate_into(xi, &mut Vec::new(), &mut values)?;
    Ok(InterfaceField {
        z_grid: stack.z_grid.clone(),
        values,
        time: stack.time,
    })
}

fn check_strips(
    geometry: &InterfaceGeometry,
    per_strip: &[StripExpansion],
) -> Result<(usize, usize), HeatError> {
    if per_strip.len() != geometry.n_strips {
        return Err(HeatError::DimensionMismatch {
            expected: geometry.n_strips,
            got: per_strip.len(),
        });
    }
    let mut n_germs = 0;
    let mut max_degree = 0;
    for s in per_strip {
        s.validate()?;
        n_germs = n_germs.max(s.germ_indices.iter().map(|g| g + 1).max().unwrap_or(0));
        max_degree = max_degree.max(s.expansion.basis.order);
    }
    Ok((n_germs, max_degree))
}

/// Accumulates `coeff * indicator_s` into the term map, with the wall
/// background folded into the mean.
fn accumulate<'a>(
    geometry: &InterfaceGeometry,
    per_strip: &[StripExpansion],
    n_z: usize,
    mut indicator: impl FnMut(usize) -> &'a [f64],
    wall: &[f64],
) -> BTreeMap<Vec<(usize, usize)>, Vec<f64>> {
    let mut fields: BTreeMap<Vec<(usize, usize)>, Vec<f64>> = BTreeMap::new();
    let mean = fields.entry(Vec::new()).or_insert_with(|| vec![0.0; n_z]);
    for (m, w) in mean.iter_mut().zip(wall) {
        *m += geometry.wall_temp * w;
    }
    for (s, strip) in per_strip.iter().enumerate() {
        let ind = indicator(s);
        for (key, c) in strip.terms() {
            if c == 0.0 && !key.is_empty() {
                continue;
            }
            let field = fields.entry(key).or_insert_with(|| vec![0.0; n_z]);
            for (f, i) in field.iter_mut().zip(ind) {
                *f += c * i;
            }
        }
    }
    fields
}

fn into_stack(
    fields: BTreeMap<Vec<(usize, usize)>, Vec<f64>>,
    z_grid: Vec<f64>,
    time: f64,
    n_germs: usize,
    max_degree: usize,
) -> CoefficientStack {
    let mut mean = Vec::new();
    let mut terms = Vec::new();
    for (factors, values) in fields {
        if factors.is_empty() {
            mean = values;
        } else {
            terms.push(StackTerm { factors, values });
        }
    }
    CoefficientStack {
        z_grid,
        time,
        n_germs,
        max_degree,
        mean,
        terms,
    }
}

/// Footprint indicator per strip plus the wall indicator (1 where no porous
/// strip is present).
fn indicators(
    geometry: &InterfaceGeometry,
    n_z: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), HeatError> {
    let z_grid = interface_grid(n_z);
    let nodes = footprint_nodes(geometry, &z_grid)?;
    let mut wall = vec![1.0; n_z];
    let strips = nodes
        .iter()
        .enumerate()
        .map(|(s, nodes)| {
            let mut ind = vec![0.0; n_z];
            if geometry.strip_porosity(s).is_some() {
                for &j in nodes {
                    ind[j] = 1.0;
                    wall[j] = 0.0;
                }
            }
            ind
        })
        .collect();
    Ok((strips, wall))
}

/// Builds the interface coefficient stack at `t_end` by assembling every
/// coefficient field and diffusing each one independently. Wall strips
/// (centre outside every section) are ignored and stay at `T_0`.
pub fn build_interface_surrogate(
    geometry: &InterfaceGeometry,
    per_strip: &[StripExpansion],
    lambda: f64,
    t_end: f64,
    n_z: usize,
    cfl: f64,
) -> Result<CoefficientStack, HeatError> {
    geometry.validate()?;
    let (n_germs, max_degree) = check_strips(geometry, per_strip)?;
    let (strips, wall) = indicators(geometry, n_z)?;
    let plan = step_plan(n_z, lambda, t_end, cfl)?;
    let mut fields = accumulate(geometry, per_strip, n_z, |s| &strips[s], &wall);
    for values in fields.values_mut() {
        run_plan(values, &plan);
    }
    Ok(into_stack(
        fields,
        interface_grid(n_z),
        t_end,
        n_germs,
        max_degree,
    ))
}

/// Discretization of the interface model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InterfaceDiscretization {
    pub n_z: usize,
    pub cfl: f64,
}

impl Default for InterfaceDiscretization {
    fn default() -> Self {
        Self { n_z: 600, cfl: 0.5 }
    }
}

/// Interface geometry with footprint indicators diffused to `t_c` once, so
/// that coefficient stacks for new strip expansions are linear
/// recombinations.
#[derive(Debug, Clone)]
pub struct InterfaceModel {
    geometry: InterfaceGeometry,
    disc: InterfaceDiscretization,
    initial: Arc<(Vec<Vec<f64>>, Vec<f64>)>,
    diffused: Arc<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl InterfaceModel {
    pub fn new(
        geometry: InterfaceGeometry,
        disc: InterfaceDiscretization,
    ) -> Result<Self, HeatError> {
        geometry.validate()?;
        let (strips, wall) = indicators(&geometry, disc.n_z)?;
        let plan = step_plan(
            disc.n_z,
            geometry.diffusivity,
            geometry.t_constraint,
            disc.cfl,
        )?;
        let mut d_strips = strips.clone();
        let mut d_wall = wall.clone();
        use rayon::prelude::*;
        d_strips.par_iter_mut().for_each(|f| run_plan(f, &plan));
        run_plan(&mut d_wall, &plan);
        Ok(Self {
            geometry,
            disc,
            initial: Arc::new((strips, wall)),
            diffused: Arc::new((d_strips, d_wall)),
        })
    }

    pub fn geometry(&self) -> &InterfaceGeometry {
        &self.geometry
    }

    pub fn discretization(&self) -> InterfaceDiscretization {
        self.disc
    }

    /// Coefficient stack at `t = t_c`.
    pub fn stack_at_constraint_time(
        &self,
        per_strip: &[StripExpansion],
    ) -> Result<CoefficientStack, HeatError> {
        let (n_germs, max_degree) = check_strips(&self.geometry, per_strip)?;
        let (strips, wall) = &*self.diffused;
        let fields = accumulate(
            &self.geometry,
            per_strip,
            self.disc.n_z,
            |s| &strips[s],
            wall,
        );
        Ok(into_stack(
            fields,
            interface_grid(self.disc.n_z),
            self.geometry.t_constraint,
            n_germs,
            max_degree,
        ))
    }

    /// Coefficient stack of the undiffused initial field.
    pub fn stack_at_start(
        &self,
        per_strip: &[StripExpansion],
    ) -> Result<CoefficientStack, HeatError> {
        let (n_germs, max_degree) = check_strips(&self.geometry, per_strip)?;
        let (strips, wall) = &*self.initial;
        let fields = accumulate(
            &self.geometry,
            per_strip,
            self.disc.n_z,
            |s| &strips[s],
            wall,
        );
        Ok(into_stack(
            fields,
            interface_grid(self.disc.n_z),
            0.0,
            n_germs,
            max_degree,
        ))
    }
}
