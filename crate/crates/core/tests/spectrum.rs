use nls_core::internal_mode::{
    alpha_fixed_point, alpha_fixed_point_with, convolution_t, eigen_residual, find_lambda,
    first_order_correction, normalize, phi3_sq_t_pairing, xi_build, BirmanSchwinger,
};
use nls_core::jost::evans_gap;
use nls_core::profile::sech;
use nls_core::{make_grid, GridKind, Method, Normalization, Params};

/// ⟨phi_3^2, T⟩ = ∫ phi_3^2(x) ∫_{y < x} e^{-sqrt2 (x - y)} phi_3^2(y) dy dx by a running
/// trapezoid recurrence on a fine uniform grid.
fn pairing_oracle() -> f64 {
    let (l, h) = (30.0, 0.0025);
    let n = (2.0 * l / h) as usize + 1;
    let g = |i: usize| 2.0 * sech(-l + i as f64 * h).powi(2);
    let e = (-(2f64.sqrt()) * h).exp();
    let (mut run, mut acc) = (0.0, 0.0);
    let mut prev = g(0);
    for i in 1..n {
        let cur = g(i);
        run = e * run + 0.5 * h * (e * prev + cur);
        acc += h * cur * run;
        prev = cur;
    }
    acc
}

#[test]
fn evans_and_fixed_point_agree() {
    for p in [2.7, 2.8, 3.2, 3.3] {
        let a = find_lambda(p, Method::Evans).unwrap().lambda;
        let b = find_lambda(p, Method::BirmanSchwinger).unwrap().lambda;
        assert!((a - b).abs() <= 1e-4, "p = {p}: {a} vs {b}");
    }
}

#[test]
fn eigenvalue_above_half_and_decreasing_far_out() {
    for p in [2.2, 2.5, 2.8] {
        let l = find_lambda(p, Method::Evans).unwrap().lambda;
        assert!(2.0 * l > 1.0, "p = {p}: lambda = {l}");
    }
    let a = find_lambda(4.0, Method::Evans).unwrap().lambda;
    let b = find_lambda(4.5, Method::Evans).unwrap().lambda;
    assert!(b < a, "{a} {b}");
}

#[test]
fn cubic_alpha_vanishes() {
    assert_eq!(alpha_fixed_point(3.0).unwrap().alpha, 0.0);
}

#[test]
fn pairing_matches_independent_quadrature() {
    let oracle = pairing_oracle();
    for n in [2048, 4096] {
        let g = make_grid(40.0, n, GridKind::Collocation).unwrap();
        let v = phi3_sq_t_pairing(g);
        assert!(
            (v - oracle).abs() <= 1e-5 * oracle,
            "n = {n}: {v} vs {oracle}"
        );
    }
    let g = make_grid(40.0, 2048, GridKind::Collocation).unwrap();
    let t = convolution_t(g);
    let asym = (0..g.n)
        .map(|i| (t[i] - t[g.n - 1 - i]).abs())
        .fold(0.0, f64::max);
    assert!(asym <= 1e-12);
}

#[test]
fn alpha_quadratic_coefficient() {
    let coeff = 0.25 + 2f64.powi(-5) * 2f64.sqrt().recip() * pairing_oracle();
    let p: f64 = 2.9;
    let a = alpha_fixed_point(p).unwrap().alpha / (p - 3.0).powi(2);
    assert!((a / coeff - 1.0).abs() <= 0.1, "{a} vs {coeff}");
    // h = 80 / (n - 1): 0.05 and 0.025
    let coarse = alpha_fixed_point_with(&BirmanSchwinger::new(p, 40.0, 1602).unwrap())
        .unwrap()
        .alpha;
    let fine = alpha_fixed_point_with(&BirmanSchwinger::new(p, 40.0, 3202).unwrap())
        .unwrap()
        .alpha;
    assert!((coarse / fine - 1.0).abs() <= 0.1, "{coarse} {fine}");
}

fn expansion_error(p: f64) -> f64 {
    let mode = xi_build(find_lambda(p, Method::BirmanSchwinger).unwrap()).unwrap();
    let xi = mode.xi().unwrap();
    let g = make_grid(10.0, 1024, GridKind::Collocation).unwrap();
    let r1 = first_order_correction(g).unwrap();
    (0..g.n)
        .map(|i| {
            let x = g.x(i);
            let lead = 1.0 - 2.0 * sech(x).powi(2);
            (xi.eval(x).xi1 - lead - (p - 3.0) * r1[i]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn first_order_correction_is_the_linear_term() {
    let ratio = expansion_error(2.95) / expansion_error(2.975);
    assert!((2.0..=8.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn eigenfunction_residual() {
    let mode = xi_build(find_lambda(2.9, Method::BirmanSchwinger).unwrap()).unwrap();
    let g = make_grid(40.0, 4096, GridKind::Collocation).unwrap();
    let (a, b) = eigen_residual(&mode, g).unwrap();
    assert!(a <= 1e-4 && b <= 1e-4, "{a} {b}");
}

#[test]
fn evans_gap_brackets_the_root() {
    let params = Params::unit(2.6).unwrap();
    let l = find_lambda(2.6, Method::Evans).unwrap().lambda;
    let lo = evans_gap(&params, l - 1e-3, 1e-7).unwrap();
    let hi = evans_gap(&params, (l + 1e-3).min(1.0 - 1e-6), 1e-7).unwrap();
    assert!(lo * hi < 0.0, "{lo} {hi}");
    assert!(evans_gap(&params, 1e-3, 1e-7).unwrap() != 0.0);
}

#[test]
fn symplectic_pairing_over_a_long_line() {
    let mode = normalize(
        xi_build(find_lambda(2.9, Method::BirmanSchwinger).unwrap()).unwrap(),
        Normalization::Symplectic,
    )
    .unwrap();
    let xi = mode.xi().unwrap();
    // xi decays like e^{-alpha x}, alpha ~ 3e-3: integrate to 2 alpha x ~ 30
    let h = 0.01;
    let n = (15.0 / mode.alpha / h) as usize;
    let s: f64 = (0..n)
        .map(|i| {
            let j = xi.eval((i as f64 + 0.5) * h);
            j.xi1 * j.xi2
        })
        .sum::<f64>();
    let total = 2.0 * h * s;
    assert!((total - 0.5).abs() <= 1e-3, "{total}");
}
