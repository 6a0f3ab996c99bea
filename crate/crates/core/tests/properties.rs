use std::sync::OnceLock;

use nls_core::dynamics::{
    diagnostics, modulate, DiagnosticConstants, Direction, ModulationState, Perturbation, SimConfig,
};
use nls_core::fgr::{mode_with_xi, moment_table, radiation_mode, MomentQuadrature, MOMENT_N};
use nls_core::internal_mode::normalize;
use nls_core::linearization::conjugation_check;
use nls_core::profile::{df, f_value, mass_energy, soliton};
use nls_core::{
    make_grid, Field2, GridKind, InternalMode, MomentFamily, MomentMethod, Normalization, Params,
    RadiationMode, C64,
};
use proptest::prelude::*;

struct Fixture {
    mode: InternalMode,
    rad: RadiationMode,
    config: SimConfig,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mode = normalize(mode_with_xi(2.9).unwrap(), Normalization::Symplectic).unwrap();
        let rad = radiation_mode(2.9, &mode).unwrap();
        let config = SimConfig {
            params: Params::unit(2.9).unwrap(),
            grid: make_grid(30.0, 1024, GridKind::Periodic).unwrap(),
            dt: 1e-3,
            t_final: 1.0,
            stride: 100,
            constants: DiagnosticConstants::default(),
            perturbation: Perturbation {
                delta: 0.0,
                direction: Direction::Custom,
            },
        };
        Fixture { mode, rad, config }
    })
}

fn quadrature() -> &'static MomentQuadrature {
    static Q: OnceLock<MomentQuadrature> = OnceLock::new();
    Q.get_or_init(|| MomentQuadrature::new(MOMENT_N).unwrap())
}

/// Sum of a few Gaussian packets with the given complex amplitudes.
fn packets(grid: nls_core::Grid, amps: &[(f64, f64, f64, f64)]) -> Vec<C64> {
    grid.points()
        .iter()
        .map(|&x| {
            amps.iter()
                .map(|&(re, im, c, k)| {
                    C64::new(re, im) * (-(x - c) * (x - c)).exp() * C64::from_polar(1.0, k * x)
                })
                .sum()
        })
        .collect()
}

fn complex() -> impl Strategy<Value = C64> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| C64::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn soliton_scaling(p in 1.5..4.5f64, omega in 0.2..5.0f64, x in -10.0..10.0f64) {
        let a = Params::new(p, omega).unwrap().phi(x);
        let b = omega.powf(1.0 / (p - 1.0)) * Params::unit(p).unwrap().phi(omega.sqrt() * x);
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
    }

    #[test]
    fn stationary_equation(p in 1.5..4.5f64, omega in 0.2..5.0f64, x in -8.0..8.0f64) {
        let s = Params::new(p, omega).unwrap();
        let phi = s.phi(x);
        let r = -s.phi_xx(x) + omega * phi - phi.powf(p);
        prop_assert!(r.abs() <= 1e-10 * omega * phi.max(1e-300));
    }

    #[test]
    fn nonlinearity_is_homogeneous_and_gauge_covariant(p in 1.5..4.5f64, u in complex(), v in complex(), theta in 0.0..6.3f64) {
        prop_assume!(u.norm() > 1e-3);
        let fu = f_value(p, u);
        prop_assert!((df(p, u, u) - fu * p).norm() <= 1e-12 * fu.norm());
        let g = C64::from_polar(1.0, theta);
        prop_assert!((f_value(p, g * u) - g * fu).norm() <= 1e-12 * fu.norm());
        prop_assert!((df(p, g * u, g * v) - g * df(p, u, v)).norm() <= 1e-12 * (1.0 + df(p, u, v).norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mass_scales_as_a_power_of_omega(p in 1.8..4.5f64, omega in 0.5..2.0f64) {
        let g = make_grid(60.0, 8192, GridKind::Collocation).unwrap();
        let q = |w: f64| {
            let s = Params::new(p, w).unwrap();
            mass_energy(&s, &soliton(&s, g)).unwrap().0
        };
        let e = Params::unit(p).unwrap().mass_scaling_exponent();
        let (a, b) = (q(omega), omega.powf(e) * q(1.0));
        prop_assert!((a / b - 1.0).abs() <= 1e-8, "{a} {b}");
    }

    #[test]
    fn conjugation_holds_on_random_fields(
        p in 2.0..4.0f64,
        amps in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -5.0..5.0f64, -2.0..2.0f64), 1..4),
        amps2 in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -5.0..5.0f64, -2.0..2.0f64), 1..4),
    ) {
        let g = make_grid(20.0, 1024, GridKind::Collocation).unwrap();
        let v = Field2 { grid: g, v1: packets(g, &amps), v2: packets(g, &amps2) };
        prop_assume!(v.norm_l2() > 1e-3);
        let r = conjugation_check(&Params::unit(p).unwrap(), g, &v).unwrap();
        prop_assert!(r <= 1e-10, "{r}");
    }

    #[test]
    fn moment_recursion_matches_quadrature(f in 0..10usize, j in 0..5usize) {
        let family = MomentFamily::ALL[f];
        let k = 2 * j + 1;
        let a = moment_table(quadrature(), family, MomentMethod::Quadrature).unwrap();
        let b = moment_table(quadrature(), family, MomentMethod::Recursion).unwrap();
        prop_assert!((a.values[&k] - b.values[&k]).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn modulation_is_gauge_equivariant(theta in -3.0..3.0f64, shift in -1.0..1.0f64, omega in 0.95..1.05f64, eps in -0.01..0.01f64) {
        let fx = fixture();
        let g = fx.config.grid;
        let s = Params::new(2.9, omega).unwrap();
        let xi = fx.mode.xi().unwrap();
        let u: Vec<C64> = g
            .points()
            .iter()
            .map(|&x| {
                let j = xi.eval(omega.sqrt() * x);
                C64::from_polar(1.0, theta) * (C64::new(s.phi(x), 0.0) + eps * C64::new(j.xi1, j.xi2))
            })
            .collect();
        let u = Field2::scalar(g, u);
        let guess = ModulationState::guess(g, theta, 1.0, C64::new(0.5 * eps, -0.5 * eps));
        let a = modulate(&fx.config.params, &u, &fx.mode, &guess).unwrap();
        let rot = Field2::scalar(g, u.v1.iter().map(|v| v * C64::from_polar(1.0, shift)).collect());
        let b = modulate(&fx.config.params, &rot, &fx.mode, &ModulationState { theta: a.theta + shift, ..a.clone() }).unwrap();
        prop_assert!((b.theta - a.theta - shift).abs() <= 1e-8);
        prop_assert!((b.omega - a.omega).abs() <= 1e-8);
        prop_assert!((b.z - a.z).norm() <= 1e-8);
        let rec = a.reconstruct(2.9, &fx.mode).unwrap();
        prop_assert!(rec.sub(&u).sup() <= 1e-8);
    }

    #[test]
    fn weighted_eta_norms(amps in proptest::collection::vec((-0.1..0.1f64, -0.1..0.1f64, -10.0..10.0f64, -2.0..2.0f64), 1..4), real in any::<bool>()) {
        let fx = fixture();
        let g = fx.config.grid;
        let mut eta = packets(g, &amps);
        if real {
            eta.iter_mut().for_each(|v| v.im = 0.0);
        }
        let state = ModulationState { eta: Field2::scalar(g, eta), ..ModulationState::guess(g, 0.0, 1.0, C64::new(0.01, 0.0)) };
        let d = diagnostics(&state, &fx.config, &fx.mode, &fx.rad).unwrap();
        let l2 = state.eta.norm_l2();
        prop_assert!(d.eta_tilde <= l2 * (1.0 + 1e-12));
        prop_assert!(d.eta_h1 >= l2 * (1.0 - 1e-12));
        if real {
            prop_assert!(d.virial.abs() <= 1e-14 * d.eta_h1 * d.eta_h1, "{}", d.virial);
        }
    }
}
