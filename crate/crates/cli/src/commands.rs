//! Subcommand arguments and their computations.

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use nls_core::dynamics::{self, DiagnosticConstants, Direction, Perturbation, SimConfig};
use nls_core::fgr::{self, MomentQuadrature, MomentRecursion, QReduction};
use nls_core::internal_mode::{self, find_lambda, normalize};
use nls_core::jost::resolvent_scan;
use nls_core::linearization;
use nls_core::numerics::{make_grid, Field2, GridKind, C64};
use nls_core::profile::{mass_energy, refined_profile, soliton, Params};
use nls_core::{Method, MomentFamily, MomentMethod, Normalization};

use crate::output::Output;

type CmdResult = Result<Output, String>;

fn err<E: ToString>(e: E) -> String {
    e.to_string()
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    Darboux,
    Symplectic,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Darboux => Normalization::Darboux,
            NormArg::Symplectic => Normalization::Symplectic,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 20.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 801)]
    pub n: usize,
    /// Real part of the internal-mode coordinate z.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub z_re: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub z_im: f64,
    #[arg(long, value_enum, default_value_t = NormArg::Symplectic)]
    pub normalization: NormArg,
}

#[derive(Serialize)]
struct ProfileRow {
    x: f64,
    phi_re: f64,
    phi_im: f64,
    phi_omega: f64,
    residual_re: f64,
    residual_im: f64,
}

pub fn profile(a: &ProfileArgs) -> CmdResult {
    let params = Params::new(a.p, a.omega).map_err(err)?;
    let grid = make_grid(a.half_width, a.n, GridKind::Collocation).map_err(err)?;
    let (mass, energy) = mass_energy(&params, &soliton(&params, grid)).map_err(err)?;
    let z = C64::new(a.z_re, a.z_im);
    let mut out = Output::new(
        "profile",
        a,
        json!({ "grid": grid, "mass": mass, "energy": energy }),
    );
    let rows: Vec<ProfileRow> = if z.norm() == 0.0 {
        grid.points()
            .iter()
            .map(|&x| ProfileRow {
                x,
                phi_re: params.phi(x),
                phi_im: 0.0,
                phi_omega: params.phi_omega(x),
                residual_re: 0.0,
                residual_im: 0.0,
            })
            .collect()
    } else {
        let mode =
            normalize(fgr::mode_with_xi(a.p).map_err(err)?, a.normalization.into()).map_err(err)?;
        let rp = refined_profile(&params, z, &mode, grid, None).map_err(err)?;
        out.set(
            "refined",
            json!({
                "theta_r": rp.theta_r,
                "omega_r": rp.omega_r,
                "z_r": [rp.z_r.re, rp.z_r.im],
                "kappa": rp.kappa,
                "residual_weighted_norm": rp.residual_weighted_norm,
                "condition_number": rp.condition_number,
                "orthogonality": rp.orthogonality,
            }),
        );
        grid.points()
            .iter()
            .enumerate()
            .map(|(i, &x)| ProfileRow {
                x,
                phi_re: rp.phi.v1[i].re,
                phi_im: rp.phi.v1[i].im,
                phi_omega: params.phi_omega(x),
                residual_re: rp.residual.v1[i].re,
                residual_im: rp.residual.v1[i].im,
            })
            .collect()
    };
    out.rows(&rows)?;
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
}

#[derive(Serialize)]
struct SpectrumRow {
    method: &'static str,
    lambda: f64,
    alpha: f64,
    iterations: usize,
    error: String,
}

pub fn spectrum(a: &SpectrumArgs) -> CmdResult {
    Params::new(a.p, a.omega).map_err(err)?;
    let methods = [
        (Method::BirmanSchwinger, "birman_schwinger"),
        (Method::Evans, "evans"),
    ];
    let rows: Vec<SpectrumRow> = methods
        .par_iter()
        .map(|&(m, name)| match find_lambda(a.p, m) {
            Ok(mode) => SpectrumRow {
                method: name,
                lambda: a.omega * mode.lambda,
                alpha: mode.alpha,
                iterations: mode.iterations,
                error: String::new(),
            },
            Err(e) => SpectrumRow {
                method: name,
                lambda: f64::NAN,
                alpha: f64::NAN,
                iterations: 0,
                error: e.to_string(),
            },
        })
        .collect();
    let ok: Vec<f64> = rows
        .iter()
        .filter(|r| r.error.is_empty())
        .map(|r| r.lambda)
        .collect();
    let difference = if ok.len() == 2 {
        Some((ok[0] - ok[1]).abs())
    } else {
        None
    };
    let mut out = Output::new(
        "spectrum",
        a,
        json!({ "difference": difference, "eps_gap": internal_mode::EPS_GAP }),
    );
    out.ok = !ok.is_empty();
    out.rows(&rows)?;
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct FgrArgs {
    #[arg(long, num_args = 1.., default_values_t = vec![2.95, 2.98, 3.02, 3.05])]
    pub p: Vec<f64>,
}

#[derive(Serialize)]
struct FgrRow {
    p: f64,
    lambda: f64,
    k_rad: f64,
    gamma: f64,
    gamma_g_route: f64,
    gamma_over_pm3: Option<f64>,
    linear_prediction: f64,
    symplectic_factor: Option<f64>,
    radiation_residual: f64,
    error: String,
}

pub fn fgr(a: &FgrArgs) -> CmdResult {
    let g1 = fgr::p1_closed_form() / std::f64::consts::SQRT_2;
    let rows: Vec<FgrRow> =
        a.p.par_iter()
            .map(|&p| match fgr::gamma_report(p) {
                Ok(r) => FgrRow {
                    p,
                    lambda: r.lambda,
                    k_rad: r.k_rad,
                    gamma: r.gamma,
                    gamma_g_route: r.gamma_g_route,
                    gamma_over_pm3: r.gamma_over_pm3,
                    linear_prediction: g1,
                    symplectic_factor: r.symplectic_factor,
                    radiation_residual: r.radiation_residual,
                    error: String::new(),
                },
                Err(e) => FgrRow {
                    p,
                    lambda: f64::NAN,
                    k_rad: f64::NAN,
                    gamma: f64::NAN,
                    gamma_g_route: f64::NAN,
                    gamma_over_pm3: None,
                    linear_prediction: g1,
                    symplectic_factor: None,
                    radiation_residual: f64::NAN,
                    error: e.to_string(),
                },
            })
            .collect();
    let mut out = Output::new(
        "fgr",
        a,
        json!({ "grid": fgr::gamma_grid(), "gamma_linear_coefficient": g1 }),
    );
    out.ok = rows.iter().all(|r| r.error.is_empty());
    out.rows(&rows)?;
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct ResolventArgs {
    #[arg(long, default_value_t = 2.9)]
    pub p: f64,
    #[arg(long, num_args = 1.., default_values_t = vec![1.01, 1.1, 1.5, 2.0, 5.0])]
    pub e: Vec<f64>,
    #[arg(long, default_value_t = 20.0)]
    pub half_width: f64,
    /// Points per axis of the (x, y) grid.
    #[arg(long, default_value_t = 81)]
    pub n: usize,
}

#[derive(Serialize)]
struct ResolventRow {
    p: f64,
    e: f64,
    max_weight_ratio: f64,
    error: String,
}

pub fn resolvent(a: &ResolventArgs) -> CmdResult {
    if a.n < 2 || a.half_width.is_nan() || a.half_width <= 0.0 {
        return Err("resolvent needs n >= 2 and a positive half-width".into());
    }
    let xs: Vec<f64> = (0..a.n)
        .map(|i| -a.half_width + 2.0 * a.half_width * i as f64 / (a.n - 1) as f64)
        .collect();
    let rows: Vec<ResolventRow> =
        a.e.par_iter()
            .map(|&e| match resolvent_scan(a.p, e, &xs) {
                Ok(r) => ResolventRow {
                    p: a.p,
                    e,
                    max_weight_ratio: r,
                    error: String::new(),
                },
                Err(x) => ResolventRow {
                    p: a.p,
                    e,
                    max_weight_ratio: f64::NAN,
                    error: x.to_string(),
                },
            })
            .collect();
    let good: Vec<f64> = rows
        .iter()
        .filter(|r| r.error.is_empty())
        .map(|r| r.max_weight_ratio)
        .collect();
    let spread = good.iter().cloned().fold(0.0, f64::max)
        / good.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = Output::new("resolvent", a, json!({ "spread": spread }));
    out.ok = good.len() == rows.len();
    out.rows(&rows)?;
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 2.9)]
    pub p_min: f64,
    #[arg(long, default_value_t = 3.1)]
    pub p_max: f64,
    /// Number of intervals; the scan visits steps + 1 points.
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Drop p = 3 from the scan.
    #[arg(long)]
    pub exclude_cubic: bool,
}

/// Condition rows at evenly spaced p, computed in parallel and ordered by p.
pub fn scan_conditions(
    p_min: f64,
    p_max: f64,
    steps: usize,
    exclude_cubic: bool,
) -> Result<Vec<fgr::ConditionRow>, String> {
    if !(p_min > 2.0 && p_max < 4.5 && p_min <= p_max) || steps == 0 {
        return Err(format!(
            "need 2 < p_min <= p_max < 4.5 and steps >= 1, got [{p_min}, {p_max}], {steps}"
        ));
    }
    let ps: Vec<f64> = (0..=steps)
        .map(|i| p_min + (p_max - p_min) * i as f64 / steps as f64)
        .map(|p| (p * 1e10).round() / 1e10)
        .filter(|&p| !(exclude_cubic && (p - 3.0).abs() < 1e-9))
        .collect();
    Ok(ps.par_iter().map(|&p| fgr::condition_row(p)).collect())
}

pub fn scan(a: &ScanArgs) -> CmdResult {
    let rows = scan_conditions(a.p_min, a.p_max, a.steps, a.exclude_cubic)?;
    let all = rows
        .iter()
        .all(|r| r.error.is_empty() && r.two_lambda_gt_1 && r.gamma_nonzero);
    let mut out = Output::new(
        "scan",
        a,
        json!({ "gamma_floor": fgr::GAMMA_FLOOR, "all_conditions_hold": all }),
    );
    out.ok = rows.iter().all(|r| r.error.is_empty());
    out.rows(&rows)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    InternalMode,
    RandomEven,
}

#[derive(Args, Debug, Serialize)]
pub struct EvolveArgs {
    #[arg(long, default_value_t = 2.9)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::InternalMode)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 8192)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 200.0)]
    pub t_final: f64,
    #[arg(long, default_value_t = 500)]
    pub stride: usize,
    #[arg(long, default_value_t = 8.0)]
    pub a_scale: f64,
    #[arg(long, default_value_t = 2.0)]
    pub b_scale: f64,
    #[arg(long, default_value_t = 0.2)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.2)]
    pub weight_rate: f64,
}

pub fn evolve(a: &EvolveArgs) -> CmdResult {
    let direction = match a.direction {
        DirectionArg::InternalMode => Direction::InternalMode,
        DirectionArg::RandomEven => Direction::RandomEven { seed: a.seed },
    };
    let config = SimConfig {
        params: Params::new(a.p, a.omega).map_err(err)?,
        grid: make_grid(a.half_width, a.n, GridKind::Periodic).map_err(err)?,
        dt: a.dt,
        t_final: a.t_final,
        stride: a.stride,
        constants: DiagnosticConstants {
            a_scale: a.a_scale,
            b_scale: a.b_scale,
            kappa: a.kappa,
            weight_rate: a.weight_rate,
        },
        perturbation: Perturbation {
            delta: a.delta,
            direction,
        },
    };
    let tr = dynamics::run_stability_experiment(&config).map_err(err)?;
    let mut out = Output::new(
        "evolve",
        a,
        json!({
            "grid": config.grid,
            "tolerances": { "modulation": dynamics::MODULATION_TOL, "max_newton_iterations": dynamics::MODULATION_MAX_ITER },
            "normalization": "symplectic",
            "summary": tr.summary,
        }),
    );
    out.rows(&tr.rows)?;
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct MomentsArgs {
    /// Families to tabulate, as letters (p q r s a b c d e f).
    #[arg(long, default_value = "pqrsabcdef")]
    pub families: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Quadrature)]
    pub method: MethodArg,
    /// Quadrature points on [-40, 40].
    #[arg(long, default_value_t = fgr::MOMENT_N)]
    pub n: usize,
    /// Check the integration-by-parts identities instead of tabulating.
    #[arg(long)]
    pub check: bool,
    /// With --check, use the q reduction exactly as printed in the literature.
    #[arg(long, requires = "check")]
    pub as_printed: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Quadrature,
    Recursion,
}

#[derive(Serialize)]
struct MomentRow {
    family: char,
    k: usize,
    value: f64,
    method: MomentMethod,
}

#[derive(Serialize)]
struct IdentityRow {
    name: &'static str,
    k: usize,
    lhs: f64,
    rhs: f64,
    residual: f64,
    tol: f64,
    pass: bool,
}

pub fn moments(a: &MomentsArgs) -> CmdResult {
    let quad = MomentQuadrature::new(a.n).map_err(err)?;
    if a.check {
        let form = if a.as_printed {
            QReduction::Printed
        } else {
            QReduction::Corrected
        };
        let rows: Vec<IdentityRow> = fgr::identity_residuals(&quad, form)
            .map_err(err)?
            .into_iter()
            .map(|r| IdentityRow {
                name: r.name,
                k: r.k,
                lhs: r.lhs,
                rhs: r.rhs,
                residual: r.residual,
                tol: a.tol,
                pass: r.residual <= a.tol,
            })
            .collect();
        let p1 = quad.value(MomentFamily::P, 1).map_err(err)?;
        let mut out = Output::new(
            "moments",
            a,
            json!({ "q_reduction": if a.as_printed { "printed" } else { "corrected" }, "p1": p1, "p1_closed_form": fgr::p1_closed_form() }),
        );
        out.ok = rows.iter().all(|r| r.pass);
        out.rows(&rows)?;
        return Ok(out);
    }
    let families = a
        .families
        .chars()
        .map(MomentFamily::from_char)
        .collect::<nls_core::Result<Vec<_>>>()
        .map_err(err)?;
    let method = match a.method {
        MethodArg::Quadrature => MomentMethod::Quadrature,
        MethodArg::Recursion => MomentMethod::Recursion,
    };
    let rec = MomentRecursion::from_quadrature(&quad).map_err(err)?;
    let mut rows = Vec::new();
    for f in families {
        for k in (1..=fgr::MOMENT_K_MAX).step_by(2) {
            let value = match method {
                MomentMethod::Quadrature => quad.value(f, k),
                MomentMethod::Recursion => rec.value(f, k),
            };
            match value {
                Ok(value) => rows.push(MomentRow {
                    family: f.letter(),
                    k,
                    value,
                    method,
                }),
                Err(nls_core::NlsError::UnknownMoment { .. }) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    let mut out = Output::new("moments", a, json!({ "grid": quad.grid }));
    out.rows(&rows)?;
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct SelftestArgs {}

#[derive(Serialize)]
struct CheckRow {
    name: &'static str,
    value: f64,
    tol: f64,
    pass: bool,
}

pub fn selftest(a: &SelftestArgs) -> CmdResult {
    let mut rows = Vec::new();
    let mut push = |name, value: f64, tol| {
        rows.push(CheckRow {
            name,
            value,
            tol,
            pass: value <= tol,
        })
    };

    let cubic = fgr::mode_with_xi(3.0).map_err(err)?;
    let rad = fgr::radiation_mode(3.0, &cubic).map_err(err)?;
    push(
        "gamma_cubic",
        fgr::gamma(3.0, &cubic, &rad).map_err(err)?.abs(),
        1e-4,
    );

    let quad = MomentQuadrature::new(fgr::MOMENT_N).map_err(err)?;
    push(
        "p1_closed_form",
        (quad.value(MomentFamily::P, 1).map_err(err)? - fgr::p1_closed_form()).abs(),
        1e-8,
    );
    let worst = fgr::identity_residuals(&quad, QReduction::Corrected)
        .map_err(err)?
        .iter()
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    push("moment_identities", worst, 1e-6);

    let params = Params::unit(2.9).map_err(err)?;
    let grid = linearization::default_grid();
    let v = Field2::from_fn(grid, |x| {
        let g = (-x * x / 8.0).exp();
        (
            C64::new(g * x.cos(), 0.3 * g),
            C64::new(0.5 * g, g * (2.0 * x).sin()),
        )
    });
    push(
        "conjugation",
        linearization::conjugation_check(&params, grid, &v).map_err(err)?,
        1e-5,
    );
    let (s1, s3) = linearization::symmetry_residuals(&params, grid, &v).map_err(err)?;
    push("symmetries", s1.max(s3), 1e-5);
    let (l1, l2) = linearization::ladder_identity_residual(&params, grid, &v.v1).map_err(err)?;
    push("ladder_identities", l1.max(l2), 1e-5);
    let gk = linearization::generalized_kernel_residuals(&params, grid).map_err(err)?;
    push(
        "generalized_kernel",
        gk[..3].iter().cloned().fold(0.0, f64::max),
        1e-5,
    );
    // the squared operator stacks two fourth-order stencils
    push("generalized_kernel_squared", gk[3], 1e-4);

    let mode = normalize(
        fgr::mode_with_xi(2.9).map_err(err)?,
        Normalization::Symplectic,
    )
    .map_err(err)?;
    let pgrid = make_grid(30.0, 512, GridKind::Periodic).map_err(err)?;
    let shifted = Params::new(2.9, 1.1).map_err(err)?;
    let u = Field2::scalar(
        pgrid,
        soliton(&shifted, pgrid)
            .v1
            .iter()
            .map(|v| v * C64::from_polar(1.0, 0.7))
            .collect(),
    );
    let s = dynamics::modulate(
        &params,
        &u,
        &mode,
        &dynamics::ModulationState::guess(pgrid, 0.6, 1.0, C64::new(0.0, 0.0)),
    )
    .map_err(err)?;
    push(
        "modulation_round_trip",
        (s.theta - 0.7)
            .abs()
            .max((s.omega - 1.1).abs())
            .max(s.z.norm())
            .max(s.eta.sup()),
        1e-8,
    );

    let mut out = Output::new("selftest", a, json!({}));
    out.ok = rows.iter().all(|r| r.pass);
    out.rows(&rows)?;
    Ok(out)
}
