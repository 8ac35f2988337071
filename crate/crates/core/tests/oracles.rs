use ccbi_core::bayes::{
    generate_observations, log_likelihood, penalized_gradient, GroupSpec, LikelihoodForm,
    PressureModel,
};
use ccbi_core::chance_constraint::FeasibleSet;
use ccbi_core::gpc::{
    build_terminal_expansion, gauss_hermite_rule, GermSpec, GermVariable, SurrogateOptions,
    UncertainInput,
};
use ccbi_core::heat_interface::{
    assemble_initial_field, build_interface_surrogate, diffuse_field,
    evaluate_interface_temperature, interface_grid, InterfaceField, InterfaceGeometry, Section,
    StripExpansion,
};
use ccbi_core::porous_flow::{integrate_terminal, GermMean, ModelParams, Scaling, SolverOptions};
use ccbi_core::samplers::{run_chmc, run_csvgd, Bandwidth, ChmcConfig, SvgdConfig};
use std::f64::consts::PI;

fn params() -> ModelParams {
    ModelParams::default().scaled(&Scaling {
        heat_flux: 0.01,
        ..Scaling::default()
    })
}

fn terminal(n_steps: usize, re: f64) -> f64 {
    let opts = SolverOptions {
        n_steps,
        ..SolverOptions::default()
    };
    integrate_terminal(&params(), 308.45, 0.111, re, &opts)
        .unwrap()
        .0
}

#[test]
fn euler_converges_at_first_order() {
    for re in [400.0, 700.0, 1000.0] {
        let fine = terminal(100_000, re);
        let ratio = (terminal(1_000, re) - fine) / (terminal(10_000, re) - fine);
        // C/n error: (1/1e3 - 1/1e5) / (1/1e4 - 1/1e5) = 11
        assert!((ratio - 11.0).abs() < 1.0, "Re {re}: ratio {ratio}");
    }
}

#[test]
fn gauss_hermite_matches_normal_moments() {
    let rule = gauss_hermite_rule(6);
    let moments = [
        1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0, 0.0, 945.0, 0.0,
    ];
    for (k, m) in moments.iter().enumerate() {
        let got = rule.integrate(|x| x.powi(k as i32));
        assert!((got - m).abs() <= 1e-9 * m.max(1.0), "E[x^{k}] = {got}");
    }
}

#[test]
fn degenerate_germ_reproduces_deterministic_solve() {
    let germ = GermSpec::new(vec![
        GermVariable::gaussian(UncertainInput::HeatFlux, 308.45, 0.0),
        GermVariable::gaussian(UncertainInput::Porosity, 0.111, 0.0),
    ]);
    for re in [350.0, 650.0, 950.0] {
        let e =
            build_terminal_expansion(&params(), &germ, re, &SurrogateOptions::default()).unwrap();
        let exact = terminal(1000, re);
        assert!((e.mean() - exact).abs() <= 1e-9 * exact, "Re {re}");
        assert!(e.variance() <= 1e-18);
    }
}

#[test]
fn low_and_high_order_surrogates_agree() {
    let germ = GermSpec::new(vec![GermVariable::gaussian(
        UncertainInput::HeatFlux,
        308.45,
        30.0,
    )]);
    let e2 = build_terminal_expansion(
        &params(),
        &germ,
        600.0,
        &SurrogateOptions {
            order: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let e4 = build_terminal_expansion(
        &params(),
        &germ,
        600.0,
        &SurrogateOptions {
            order: 4,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((e2.mean() - e4.mean()).abs() < 1e-3);
    assert!((e2.variance() - e4.variance()).abs() / e4.variance() < 1e-2);
}

fn field(values: Vec<f64>) -> InterfaceField {
    InterfaceField {
        z_grid: interface_grid(values.len()),
        values,
        time: 0.0,
    }
}

#[test]
fn cosine_modes_decay_at_their_eigenvalue() {
    let n_z = 400;
    let (lambda, t) = (0.01, 0.7);
    for k in 1..=2 {
        let mode: Vec<f64> = interface_grid(n_z)
            .iter()
            .map(|&z| (k as f64 * PI * z).cos())
            .collect();
        let out = diffuse_field(&field(mode.clone()), lambda, t, 0.5).unwrap();
        let expected = (-lambda * (k as f64 * PI).powi(2) * t).exp();
        for (a, b) in out.values.iter().zip(&mode) {
            assert!((a - expected * b).abs() <= 1e-4, "mode {k}");
        }
    }
}

fn geometry() -> InterfaceGeometry {
    InterfaceGeometry {
        d1: 0.1,
        d2: 0.9,
        n_strips: 8,
        section_porosities: vec![
            Section {
                start: 0.1,
                end: 0.5,
                porosity: 0.111,
            },
            Section {
                start: 0.6,
                end: 0.9,
                porosity: 0.3,
            },
        ],
        wall_temp: 400.0,
        delta_z: None,
        diffusivity: 0.02,
        t_constraint: 0.5,
    }
}

#[test]
fn coefficient_stack_matches_diffused_realization() {
    let g = geometry();
    let germ = |i: usize| {
        GermSpec::new(vec![GermVariable::gaussian(
            UncertainInput::HeatFlux,
            300.0 + 5.0 * i as f64,
            20.0,
        )])
    };
    let per_strip: Vec<StripExpansion> = (0..g.n_strips)
        .map(|i| match g.strip_porosity(i) {
            Some(phi) => {
                let mut p = params();
                p.porosity = phi;
                StripExpansion {
                    germ_indices: vec![i],
                    expansion: build_terminal_expansion(
                        &p,
                        &germ(i),
                        600.0,
                        &SurrogateOptions::default(),
                    )
                    .unwrap(),
                }
            }
            None => StripExpansion::constant(g.wall_temp),
        })
        .collect();
    let n_z = 160;
    let stack =
        build_interface_surrogate(&g, &per_strip, g.diffusivity, g.t_constraint, n_z, 0.5).unwrap();
    for draw in 0..3 {
        let xi: Vec<f64> = (0..g.n_strips)
            .map(|i| ((i + 3 * draw) as f64 * 0.7).sin())
            .collect();
        let strip_values: Vec<f64> = per_strip
            .iter()
            .map(|s| {
                let local: Vec<f64> = s.germ_indices.iter().map(|&j| xi[j]).collect();
                s.expansion.evaluate(&local)
            })
            .collect();
        let direct = diffuse_field(
            &assemble_initial_field(&g, &strip_values, n_z).unwrap(),
            g.diffusivity,
            g.t_constraint,
            0.5,
        )
        .unwrap();
        let via_stack = evaluate_interface_temperature(&stack, &xi).unwrap();
        for (a, b) in via_stack.values.iter().zip(&direct.values) {
            assert!((a - b).abs() <= 1e-9 * b.abs(), "{a} vs {b}");
        }
    }
}

#[test]
fn noiseless_likelihood_peaks_at_true_reynolds() {
    let model = PressureModel {
        params: params(),
        solver: SolverOptions::default(),
    };
    let group = GroupSpec {
        label: "strip".into(),
        condition: GermMean {
            heat_flux: 308.45,
            porosity: 0.111,
        },
        noise_std: 1e-6,
    };
    let (obs, _) = generate_observations(&model, 700.0, &[group], 20, 3).unwrap();
    let best =
        (0..=700)
            .map(|i| 300.0 + i as f64)
            .max_by(|a, b| {
                log_likelihood(&obs, *a, &model, LikelihoodForm::ClassicIid).total_cmp(
                    &log_likelihood(&obs, *b, &model, LikelihoodForm::ClassicIid),
                )
            })
            .unwrap();
    assert_eq!(best, 700.0);
}

fn infeasible_fraction(x: &[f64], cut: f64) -> f64 {
    x.iter().filter(|&&t| t < cut).count() as f64 / x.len() as f64
}

#[test]
fn stronger_penalty_leaves_fewer_infeasible_samples() {
    let set = FeasibleSet::interval(1.0, f64::INFINITY);
    let grad = |delta: f64| {
        let set = set.clone();
        move |t: f64| penalized_gradient(-t, set.contains(t), delta, set.direction_toward(t))
    };
    let chmc = |delta: f64| {
        let cfg = ChmcConfig {
            mass: 1.0,
            step: 0.1,
            max_leapfrog: 10,
            n_samples: 20_000,
            theta_init: 1.5,
            seed: 77,
            stream: 0,
        };
        run_chmc(|t| -0.5 * t * t, grad(delta), |t| set.contains(t), &cfg)
            .unwrap()
            .infeasible_fraction()
    };
    let (weak, strong) = (chmc(0.0), chmc(10.0));
    assert!(strong < weak, "cHMC: {strong} vs {weak}");

    let svgd = |delta: f64| {
        let cfg = SvgdConfig {
            n_generations: 300,
            step_size: 0.05,
            bandwidth: Bandwidth::Median,
            decay: 0.9,
            fudge: 1e-6,
            seed: 5,
        };
        let init: Vec<f64> = (0..60).map(|i| -1.0 + 0.05 * i as f64).collect();
        infeasible_fraction(run_csvgd(grad(delta), init, &cfg).unwrap().last(), 1.0)
    };
    let (weak, strong) = (svgd(0.0), svgd(10.0));
    assert!(strong < weak, "cSVGD: {strong} vs {weak}");
}
