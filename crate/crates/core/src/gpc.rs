//! Generalized polynomial chaos for the strip temperatures.
//!
//! Uncertain inputs are independent Gaussians, expanded in standardized germ
//! coordinates `xi = (input - mean) / std` with the probabilists' Hermite
//! polynomials `He_n`. A surrogate of truncation order `K` over `d` germ
//! variables uses the full tensor basis `He_i(xi_1) He_j(xi_2) ...` with every
//! index in `0..=K`.
//!
//! The coefficient system is marched in `x` with explicit Euler. At each step
//! the physical right-hand sides are evaluated at the tensor Gauss-Hermite
//! nodes from the reconstructed temperatures and projected back onto every
//! basis function. The coolant density does not feed back into the
//! temperatures; it is carried per collocation node only to detect a singular
//! density equation.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::porous_flow::{
    check_porosity, check_reynolds, ForwardError, ModelParams, SolverOptions, StripCoefficients,
};

/// Probabilists' Hermite polynomial `He_n(x)`.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[k] = He_k(x)` for `k < out.len()`.
pub fn hermite_all(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        out[k + 1] = x * out[k] - k as f64 * out[k - 1];
    }
}

/// `<He_n, He_n> = n!` under the standard normal measure.
pub fn hermite_norm_sq(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gauss quadrature for the standard normal density: nodes and weights with
/// weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Orthonormal Hermite values `h_k = He_k / sqrt(k!)` for `k = 0..=n`.
fn orthonormal_hermite(n: usize, x: f64) -> Vec<f64> {
    let mut h = vec![0.0; n + 1];
    h[0] = 1.0;
    if n >= 1 {
        h[1] = x;
    }
    for k in 1..n {
        h[k + 1] = (x * h[k] - (k as f64).sqrt() * h[k - 1]) / ((k + 1) as f64).sqrt();
    }
    h
}

/// `n_nodes`-point Gauss-Hermite rule, exact for polynomials of degree up to
/// `2 n_nodes - 1` against the standard normal density.
///
/// Nodes start from the Golub-Welsch eigenvalues and are polished with
/// Newton steps on the orthonormal recurrence; weights come from the
/// Christoffel function.
pub fn gauss_hermite_rule(n_nodes: usize) -> GaussHermiteRule {
    assert!(n_nodes >= 1, "a quadrature rule needs at least one node");
    let n = n_nodes;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(f64::total_cmp);

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let h = orthonormal_hermite(n, *x);
            let deriv = (n as f64).sqrt() * h[n - 1];
            if deriv == 0.0 {
                break;
            }
            *x -= h[n] / deriv;
        }
    }
    // Exact symmetry about zero.
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let h = orthonormal_hermite(n - 1, x);
            1.0 / h.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GaussHermiteRule { nodes, weights }
}

/// Tensor product of `dim` copies of a one-dimensional rule, as flat
/// `(points, weights)` with points stored row-major (`dim` values per point,
/// last variable fastest).
pub fn tensor_rule(rule: &GaussHermiteRule, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let m = rule.len();
    let count = m.pow(dim as u32);
    let mut points = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for flat in 0..count {
        let mut rem = flat;
        let mut w = 1.0;
        let start = points.len();
        points.resize(start + dim, 0.0);
        for v in (0..dim).rev() {
            let k = rem % m;
            rem /= m;
            points[start + v] = rule.nodes[k];
            w *= rule.weights[k];
        }
        weights.push(w);
    }
    (points, weights)
}

/// `<f, g>` under the `dim`-variate standard normal product measure,
/// approximated with the tensorized rule. The caller is responsible for
/// choosing a rule exact for the integrand degree.
pub fn inner_product(
    f: impl Fn(&[f64]) -> f64,
    g: impl Fn(&[f64]) -> f64,
    rule: &GaussHermiteRule,
    dim: usize,
) -> f64 {
    let (points, weights) = tensor_rule(rule, dim);
    weights
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let xi = &points[k * dim..(k + 1) * dim];
            w * f(xi) * g(xi)
        })
        .sum()
}

/// Which physical input a germ variable perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainInput {
    HeatFlux,
    Porosity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GermVariable {
    pub name: UncertainInput,
    pub distribution: Distribution,
    pub mean: f64,
    pub std_dev: f64,
}

impl GermVariable {
    pub fn gaussian(name: UncertainInput, mean: f64, std_dev: f64) -> Self {
        Self {
            name,
            distribution: Distribution::Gaussian,
            mean,
            std_dev,
        }
    }

    /// Germ coordinate of a physical value; zero for a degenerate variable.
    pub fn standardize(&self, value: f64) -> f64 {
        if self.std_dev > 0.0 {
            (value - self.mean) / self.std_dev
        } else {
            0.0
        }
    }

    pub fn physical(&self, xi: f64) -> f64 {
        self.mean + self.std_dev * xi
    }
}

/// Independent Gaussian inputs of one strip surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GermSpec {
    pub variables: Vec<GermVariable>,
}

impl GermSpec {
    pub fn new(variables: Vec<GermVariable>) -> Self {
        Self { variables }
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn validate(&self) -> Result<(), GpcError> {
        if self.variables.is_empty() {
            return Err(GpcError::InvalidGerm(
                "germ needs at least one variable".into(),
            ));
        }
        for v in &self.variables {
            if !(v.std_dev >= 0.0 && v.std_dev.is_finite() && v.mean.is_finite()) {
                return Err(GpcError::InvalidGerm(format!(
                    "{:?}: mean and std-dev must be finite with std-dev >= 0",
                    v.name
                )));
            }
        }
        for (i, a) in self.variables.iter().enumerate() {
            if self.variables[i + 1..].iter().any(|b| b.name == a.name) {
                return Err(GpcError::InvalidGerm(format!("{:?} appears twice", a.name)));
            }
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.variables.iter().all(|v| v.std_dev == 0.0)
    }

    fn stable_key(&self) -> String {
        let mut s = String::new();
        for v in &self.variables {
            let _ = write!(
                s,
                "{:?}:{:?}:{:e}:{:e};",
                v.name, v.distribution, v.mean, v.std_dev
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpcError {
    #[error("quadrature with {n_quad} nodes cannot resolve truncation order {order}; need n_quad >= order + 1")]
    TruncationOrder { order: usize, n_quad: usize },
    #[error("invalid germ: {0}")]
    InvalidGerm(String),
    #[error("collocation node {node}: {source}")]
    Forward {
        node: usize,
        #[source]
        source: ForwardError,
    },
}

/// Index arithmetic for the tensor basis of order `K` in `dim` variables.
/// Mode `m` has per-variable degrees given by the base-`(K+1)` digits of `m`,
/// first variable most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorBasis {
    pub order: usize,
    pub dim: usize,
}

impl TensorBasis {
    pub fn new(order: usize, dim: usize) -> Self {
        Self { order, dim }
    }

    pub fn n_modes(&self) -> usize {
        (self.order + 1).pow(self.dim as u32)
    }

    pub fn multi_index(&self, mode: usize) -> Vec<usize> {
        let base = self.order + 1;
        let mut idx = vec![0; self.dim];
        let mut rem = mode;
        for v in (0..self.dim).rev() {
            idx[v] = rem % base;
            rem /= base;
        }
        idx
    }

    pub fn mode(&self, multi_index: &[usize]) -> usize {
        assert_eq!(multi_index.len(), self.dim);
        multi_index.iter().fold(0, |acc, &i| {
            assert!(i <= self.order, "degree {i} exceeds order {}", self.order);
            acc * (self.order + 1) + i
        })
    }

    pub fn norm_sq(&self, mode: usize) -> f64 {
        self.multi_index(mode)
            .into_iter()
            .map(hermite_norm_sq)
            .product()
    }

    /// Basis values `Phi_m(xi)` for every mode, written into `out`.
    pub fn eval_into(&self, xi: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        assert_eq!(xi.len(), self.dim);
        let base = self.order + 1;
        scratch.resize(self.dim * base, 0.0);
        for (v, &x) in xi.iter().enumerate() {
            hermite_all(x, &mut scratch[v * base..(v + 1) * base]);
        }
        for (mode, slot) in out.iter_mut().enumerate() {
            let mut rem = mode;
            let mut value = 1.0;
            for v in (0..self.dim).rev() {
                value *= scratch[v * base + rem % base];
                rem /= base;
            }
            *slot = value;
        }
    }
}

/// A truncated Hermite expansion `sum_m c_m Phi_m(xi)` of one scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub basis: TensorBasis,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Expansion {
    pub fn evaluate(&self, xi: &[f64]) -> f64 {
        let mut scratch = Vec::new();
        let mut phi = vec![0.0; self.coeffs.len()];
        self.basis.eval_into(xi, &mut scratch, &mut phi);
        self.coeffs.iter().zip(&phi).map(|(c, p)| c * p).sum()
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn variance(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(m, c)| c * c * self.basis.norm_sq(m))
            .sum()
    }

    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.mean(),
            variance: self.variance(),
        }
    }
}

/// gPC coefficient trajectories of the strip temperatures for a fixed `Re`.
///
/// Coefficients are stored node-major: `coeff_t_fluid[node * n_modes + mode]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSurrogate {
    pub order: usize,
    pub germ: GermSpec,
    pub re: f64,
    pub x_grid: Vec<f64>,
    pub coeff_t_fluid: Vec<f64>,
    pub coeff_t_solid: Vec<f64>,
}

impl StripSurrogate {
    pub fn basis(&self) -> TensorBasis {
        TensorBasis::new(self.order, self.germ.dim())
    }

    pub fn n_modes(&self) -> usize {
        self.basis().n_modes()
    }

    pub fn n_nodes(&self) -> usize {
        self.x_grid.len()
    }

    pub fn last_node(&self) -> usize {
        self.n_nodes() - 1
    }

    pub fn fluid_coeff(&self, multi_index: &[usize], node: usize) -> f64 {
        self.coeff_t_fluid[node * self.n_modes() + self.basis().mode(multi_index)]
    }

    pub fn solid_coeff(&self, multi_index: &[usize], node: usize) -> f64 {
        self.coeff_t_solid[node * self.n_modes() + self.basis().mode(multi_index)]
    }

    pub fn fluid_expansion(&self, node: usize) -> Expansion {
        let m = self.n_modes();
        Expansion {
            basis: self.basis(),
            coeffs: self.coeff_t_fluid[node * m..(node + 1) * m].to_vec(),
        }
    }

    pub fn solid_expansion(&self, node: usize) -> Expansion {
        let m = self.n_modes();
        Expansion {
            basis: self.basis(),
            coeffs: self.coeff_t_solid[node * m..(node + 1) * m].to_vec(),
        }
    }

    /// File name under which this surrogate is cached: keyed by `Re`, order
    /// and a stable hash of the germ.
    pub fn cache_key(re: f64, order: usize, germ: &GermSpec) -> String {
        format!(
            "strip_re{re:.6}_k{order}_{:016x}.json",
            fnv1a(germ.stable_key().as_bytes())
        )
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Evaluates the fluid and solid temperature expansions at node `x_index`
/// for physical inputs `(q, phi)`. Inputs that are not germ variables are
/// ignored.
pub fn evaluate_surrogate(s: &StripSurrogate, x_index: usize, q: f64, phi: f64) -> (f64, f64) {
    let xi: Vec<f64> = s
        .germ
        .variables
        .iter()
        .map(|v| match v.name {
            UncertainInput::HeatFlux => v.standardize(q),
            UncertainInput::Porosity => v.standardize(phi),
        })
        .collect();
    (
        s.fluid_expansion(x_index).evaluate(&xi),
        s.solid_expansion(x_index).evaluate(&xi),
    )
}

/// Mean and variance of `T_f` at node `x_index`.
pub fn surrogate_moments(s: &StripSurrogate, x_index: usize) -> Moments {
    s.fluid_expansion(x_index).moments()
}

/// Truncation and quadrature settings of a strip surrogate build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOptions {
    pub order: usize,
    pub n_quad: usize,
    pub solver: SolverOptions,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            order: 3,
            n_quad: 6,
            solver: SolverOptions::default(),
        }
    }
}

/// Precomputed collocation data shared by every Euler step.
struct Collocation {
    n_modes: usize,
    n_points: usize,
    /// `basis[p * n_modes + m] = Phi_m(xi_p)`
    basis: Vec<f64>,
    /// `projection[m * n_points + p] = w_p Phi_m(xi_p) / ||Phi_m||^2`
    projection: Vec<f64>,
    coeffs: Vec<StripCoefficients>,
}

impl Collocation {
    fn new(
        params: &ModelParams,
        germ: &GermSpec,
        re: f64,
        opts: &SurrogateOptions,
    ) -> Result<Self, GpcError> {
        let dim = germ.dim();
        let basis_def = TensorBasis::new(opts.order, dim);
        let n_modes = basis_def.n_modes();
        let rule = gauss_hermite_rule(opts.n_quad);
        let (points, weights) = tensor_rule(&rule, dim);
        let n_points = weights.len();

        let mut basis = vec![0.0; n_points * n_modes];
        let mut scratch = Vec::new();
        for p in 0..n_points {
            basis_def.eval_into(
                &points[p * dim..(p + 1) * dim],
                &mut scratch,
                &mut basis[p * n_modes..(p + 1) * n_modes],
            );
        }
        let norms: Vec<f64> = (0..n_modes).map(|m| basis_def.norm_sq(m)).collect();
        let mut projection = vec![0.0; n_modes * n_points];
        for m in 0..n_modes {
            for p in 0..n_points {
                projection[m * n_points + p] = weights[p] * basis[p * n_modes + m] / norms[m];
            }
        }

        let mut coeffs = Vec::with_capacity(n_points);
        for p in 0..n_points {
            let (mut q, mut phi) = (params.heat_flux_nominal, params.porosity);
            for (v, var) in germ.variables.iter().enumerate() {
                let value = var.physical(points[p * dim + v]);
                match var.name {
                    UncertainInput::HeatFlux => q = value,
                    UncertainInput::Porosity => phi = value,
                }
            }
            check_porosity(phi).map_err(|source| GpcError::Forward { node: p, source })?;
            coeffs.push(StripCoefficients::new(params, q, phi, re));
        }
        Ok(Self {
            n_modes,
            n_points,
            basis,
            projection,
            coeffs,
        })
    }
}

fn check_build_inputs(germ: &GermSpec, re: f64, opts: &SurrogateOptions) -> Result<(), GpcError> {
    germ.validate()?;
    if opts.n_quad < opts.order + 1 {
        return Err(GpcError::TruncationOrder {
            order: opts.order,
            n_quad: opts.n_quad,
        });
    }
    if opts.solver.n_steps == 0 {
        return Err(GpcError::Forward {
            node: 0,
            source: ForwardError::InvalidParameter {
                name: "n_steps",
                reason: "must be >= 1".into(),
            },
        });
    }
    check_reynolds(re).map_err(|source| GpcError::Forward { node: 0, source })
}

/// Marches the Galerkin coefficient system, calling `record` with the
/// fluid/solid coefficient vectors after every step (including the initial
/// state at `x = 0`).
fn march(
    params: &ModelParams,
    germ: &GermSpec,
    re: f64,
    opts: &SurrogateOptions,
    mut record: impl FnMut(&[f64], &[f64]),
) -> Result<(), GpcError> {
    check_build_inputs(germ, re, opts)?;
    let col = Collocation::new(params, germ, re, opts)?;
    let n = opts.solver.n_steps;
    let h = 1.0 / n as f64;
    let eps = opts.solver.singular_eps;
    let (nm, np) = (col.n_modes, col.n_points);

    let mut cf = vec![0.0; nm];
    let mut cs = vec![0.0; nm];
    cf[0] = params.coolant_temp;
    cs[0] = params.solid_temp;
    let mut rho = vec![params.reservoir_pressure / params.coolant_temp; np];
    let mut rhs_f = vec![0.0; np];
    let mut rhs_s = vec![0.0; np];
    record(&cf, &cs);

    for step in 0..n {
        let x = step as f64 * h;
        for p in 0..np {
            let row = &col.basis[p * nm..(p + 1) * nm];
            let tf: f64 = cf.iter().zip(row).map(|(c, b)| c * b).sum();
            let ts: f64 = cs.iter().zip(row).map(|(c, b)| c * b).sum();
            let k = &col.coeffs[p];
            rhs_f[p] = k.d_fluid(tf, ts);
            rhs_s[p] = k.d_solid(tf);
            let d_rho =
                k.d_density(rho[p], tf, ts, eps)
                    .map_err(|denominator| GpcError::Forward {
                        node: p,
                        source: ForwardError::SingularDenominator { x, denominator },
                    })?;
            rho[p] += h * d_rho;
            if !rho[p].is_finite() {
                return Err(GpcError::Forward {
                    node: p,
                    source: ForwardError::NonFiniteState { x: x + h },
                });
            }
            if rho[p] <= 0.0 {
                return Err(GpcError::Forward {
                    node: p,
                    source: ForwardError::NonPositiveDensity { x: x + h },
                });
            }
        }
        for m in 0..nm {
            let proj = &col.projection[m * np..(m + 1) * np];
            let df: f64 = proj.iter().zip(&rhs_f).map(|(w, r)| w * r).sum();
            let ds: f64 = proj.iter().zip(&rhs_s).map(|(w, r)| w * r).sum();
            cf[m] += h * df;
            cs[m] += h * ds;
        }
        if cf.iter().chain(&cs).any(|c| !c.is_finite()) {
            return Err(GpcError::Forward {
                node: 0,
                source: ForwardError::NonFiniteState { x: x + h },
            });
        }
        record(&cf, &cs);
    }
    Ok(())
}

/// Builds the full coefficient trajectory of the strip temperatures at `re`.
pub fn build_strip_surrogate(
    params: &ModelParams,
    germ: &GermSpec,
    re: f64,
    opts: &SurrogateOptions,
) -> Result<StripSurrogate, GpcError> {
    let n = opts.solver.n_steps;
    let n_modes = TensorBasis::new(opts.order, germ.dim()).n_modes();
    let mut coeff_t_fluid = Vec::with_capacity((n + 1) * n_modes);
    let mut coeff_t_solid = Vec::with_capacity((n + 1) * n_modes);
    march(params, germ, re, opts, |cf, cs| {
        coeff_t_fluid.extend_from_slice(cf);
        coeff_t_solid.extend_from_slice(cs);
    })?;
    let x_grid = (0..=n)
        .map(|i| if i == n { 1.0 } else { i as f64 / n as f64 })
        .collect();
    Ok(StripSurrogate {
        order: opts.order,
        germ: germ.clone(),
        re,
        x_grid,
        coeff_t_fluid,
        coeff_t_solid,
    })
}

/// Expansion of `T_f(x = 1)` only; the same march as
/// [`build_strip_surrogate`] without storing the trajectory.
pub fn build_terminal_expansion(
    params: &ModelParams,
    germ: &GermSpec,
    re: f64,
    opts: &SurrogateOptions,
) -> Result<Expansion, GpcError> {
    let mut last = Vec::new();
    march(params, germ, re, opts, |cf, _| {
        last.clear();
        last.extend_from_slice(cf);
    })?;
    Ok(Expansion {
        basis: TensorBasis::new(opts.order, germ.dim()),
        coeffs: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::porous_flow::integrate_strip;

    #[test]
    fn hermite_low_degrees() {
        assert_eq!(hermite(0, 3.3), 1.0);
        assert_eq!(hermite(1, 0.7), 0.7);
        assert_eq!(hermite(2, 0.0), -1.0);
        let mut all = [0.0; 6];
        hermite_all(1.3, &mut all);
        for (n, v) in all.iter().enumerate() {
            assert_eq!(*v, hermite(n, 1.3));
        }
    }

    #[test]
    fn hermite_degree_five_matches_monomial_form() {
        // He_5(x) = x^5 - 10 x^3 + 15 x
        let x: f64 = 1.3;
        let monomial = x.powi(5) - 10.0 * x.powi(3) + 15.0 * x;
        assert!((hermite(5, x) - monomial).abs() < 1e-12);
    }

    #[test]
    fn small_rules() {
        let one = gauss_hermite_rule(1);
        assert_eq!(one.nodes, vec![0.0]);
        assert_eq!(one.weights, vec![1.0]);
        let two = gauss_hermite_rule(2);
        assert!((two.nodes[0] + 1.0).abs() < 1e-15 && (two.nodes[1] - 1.0).abs() < 1e-15);
        assert!((two.weights[0] - 0.5).abs() < 1e-15 && (two.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rules_integrate_moments() {
        for n in 1..=12 {
            let rule = gauss_hermite_rule(n);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            if n >= 2 {
                assert!((rule.integrate(|x| x * x) - 1.0).abs() < 1e-12, "n = {n}");
            }
            // E[x^(2k)] = (2k-1)!! for 2k <= 2n - 1
            for k in 0..n {
                let exact: f64 = (1..2 * k).step_by(2).map(|v| v as f64).product();
                let got = rule.integrate(|x| x.powi(2 * k as i32));
                assert!(
                    (got - exact).abs() <= 1e-10 * exact.max(1.0),
                    "n = {n}, k = {k}"
                );
            }
        }
    }

    #[test]
    fn orthogonality_and_norms_up_to_degree_six() {
        let rule = gauss_hermite_rule(7);
        for i in 0..=6 {
            for j in 0..=6 {
                let ip = inner_product(|x| hermite(i, x[0]), |x| hermite(j, x[0]), &rule, 1);
                if i == j {
                    let nf = hermite_norm_sq(i);
                    assert!((ip - nf).abs() <= 1e-8 * nf);
                } else {
                    assert!(ip.abs() <= 1e-10, "<He{i}, He{j}> = {ip}");
                }
            }
        }
        let ip = inner_product(|x| hermite(2, x[0]), |x| hermite(2, x[0]), &rule, 1);
        assert!((ip - 2.0).abs() < 1e-10);
        let ip = inner_product(|x| x[0] * x[1], |x| x[0] * x[1], &rule, 2);
        assert!((ip - 1.0).abs() < 1e-12);
        let ip = inner_product(|_| 1.0, |x| hermite(2, x[0]), &rule, 1);
        assert!(ip.abs() < 1e-12);
    }

    #[test]
    fn tensor_basis_indexing_round_trips() {
        let b = TensorBasis::new(3, 2);
        assert_eq!(b.n_modes(), 16);
        for m in 0..16 {
            assert_eq!(b.mode(&b.multi_index(m)), m);
        }
        assert_eq!(b.multi_index(7), vec![1, 3]);
        assert_eq!(b.norm_sq(b.mode(&[3, 2])), 12.0);
    }

    #[test]
    fn truncation_order_error() {
        let p = ModelParams::default();
        let germ = GermSpec::new(vec![GermVariable::gaussian(
            UncertainInput::HeatFlux,
            300.0,
            10.0,
        )]);
        let opts = SurrogateOptions {
            order: 4,
            n_quad: 4,
            ..SurrogateOptions::default()
        };
        assert!(matches!(
            build_strip_surrogate(&p, &germ, 500.0, &opts),
            Err(GpcError::TruncationOrder {
                order: 4,
                n_quad: 4
            })
        ));
    }

    #[test]
    fn initial_coefficients_are_constant_mode_only() {
        let p = ModelParams::default();
        let germ = GermSpec::new(vec![
            GermVariable::gaussian(UncertainInput::HeatFlux, 300.0, 30.0),
            GermVariable::gaussian(UncertainInput::Porosity, 0.111, 0.01),
        ]);
        let opts = SurrogateOptions {
            solver: SolverOptions {
                n_steps: 50,
                ..SolverOptions::default()
            },
            ..SurrogateOptions::default()
        };
        let s = build_strip_surrogate(&p, &germ, 500.0, &opts).unwrap();
        assert_eq!(s.fluid_coeff(&[0, 0], 0), p.coolant_temp);
        assert_eq!(s.solid_coeff(&[0, 0], 0), p.solid_temp);
        for m in 1..s.n_modes() {
            assert_eq!(s.coeff_t_fluid[m], 0.0);
            assert_eq!(s.coeff_t_solid[m], 0.0);
        }
        assert_eq!(s.n_nodes(), 51);
    }

    #[test]
    fn degenerate_germ_collapses_to_deterministic_strip() {
        let p = ModelParams {
            heat_flux_nominal: 308.45,
            ..ModelParams::default()
        };
        let germ = GermSpec::new(vec![
            GermVariable::gaussian(UncertainInput::HeatFlux, 308.45, 0.0),
            GermVariable::gaussian(UncertainInput::Porosity, 0.111, 0.0),
        ]);
        let opts = SurrogateOptions::default();
        let s = build_strip_surrogate(&p, &germ, 600.0, &opts).unwrap();
        let traj = integrate_strip(&p, 308.45, 0.111, 600.0, &opts.solver).unwrap();
        for node in 0..s.n_nodes() {
            let fe = s.fluid_expansion(node);
            let se = s.solid_expansion(node);
            assert!((fe.mean() - traj.t_fluid[node]).abs() <= 1e-8 * traj.t_fluid[node].abs());
            assert!((se.mean() - traj.t_solid[node]).abs() <= 1e-8 * traj.t_solid[node].abs());
            assert!(fe.coeffs[1..].iter().all(|c| c.abs() <= 1e-10));
            assert!(se.coeffs[1..].iter().all(|c| c.abs() <= 1e-10));
            assert_eq!(
                fe.variance(),
                fe.coeffs[1..]
                    .iter()
                    .enumerate()
                    .map(|(m, c)| c * c * fe.basis.norm_sq(m + 1))
                    .sum::<f64>()
            );
        }
        let last = s.last_node();
        let (tf, _) = evaluate_surrogate(&s, last, 350.0, 0.2);
        assert!((tf - traj.t_fluid[last]).abs() <= 1e-8 * tf);
        assert!(surrogate_moments(&s, last).variance <= 1e-16);
    }

    #[test]
    fn order_zero_evaluates_to_constant_term() {
        let p = ModelParams {
            heat_flux_nominal: 308.45,
            ..ModelParams::default()
        };
        let germ = GermSpec::new(vec![GermVariable::gaussian(
            UncertainInput::HeatFlux,
            308.45,
            30.0,
        )]);
        let opts = SurrogateOptions {
            order: 0,
            n_quad: 3,
            ..SurrogateOptions::default()
        };
        let s = build_strip_surrogate(&p, &germ, 600.0, &opts).unwrap();
        let last = s.last_node();
        let (tf, ts) = evaluate_surrogate(&s, last, 308.45, 0.111);
        assert_eq!(tf, s.fluid_coeff(&[0], last));
        assert_eq!(ts, s.solid_coeff(&[0], last));
        assert_eq!(surrogate_moments(&s, last).variance, 0.0);
    }

    #[test]
    fn terminal_expansion_matches_full_build() {
        let p = ModelParams {
            heat_flux_nominal: 308.45,
            ..ModelParams::default()
        };
        let germ = GermSpec::new(vec![
            GermVariable::gaussian(UncertainInput::HeatFlux, 308.45, 30.0),
            GermVariable::gaussian(UncertainInput::Porosity, 0.111, 0.01),
        ]);
        let opts = SurrogateOptions::default();
        let s = build_strip_surrogate(&p, &germ, 640.0, &opts).unwrap();
        let t = build_terminal_expansion(&p, &germ, 640.0, &opts).unwrap();
        assert_eq!(s.fluid_expansion(s.last_node()), t);
    }

    #[test]
    fn cache_key_depends_on_germ() {
        let a = GermSpec::new(vec![GermVariable::gaussian(
            UncertainInput::HeatFlux,
            1.0,
            0.1,
        )]);
        let b = GermSpec::new(vec![GermVariable::gaussian(
            UncertainInput::HeatFlux,
            1.0,
            0.2,
        )]);
        assert_ne!(
            StripSurrogate::cache_key(500.0, 3, &a),
            StripSurrogate::cache_key(500.0, 3, &b)
        );
        assert_eq!(
            StripSurrogate::cache_key(500.0, 3, &a),
            StripSurrogate::cache_key(500.0, 3, &a.clone())
        );
    }
}
