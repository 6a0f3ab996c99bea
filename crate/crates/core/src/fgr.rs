//! The radiation mode g at frequency 2 lambda, the coupling constant gamma
//! between z^2 and g, the sech-moment integrals with their integration-by-parts
//! identities, and the linear coefficient of gamma in p - 3.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, Matrix2, Vector2, Vector3};
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::internal_mode::{InternalMode, Normalization};
use crate::numerics::{
    breakpoints, continue_frame, integrate_real, make_grid, EvenTable, Field2, Grid, GridKind,
    OdeTol, C64,
};
use crate::profile::{ln_sech, sech, Params};

/// Right end of the radiation-mode integration; the potential is below e^{-70} beyond it.
pub const RADIATION_X: f64 = 40.0;
/// Table spacing of the radiation mode.
pub const RADIATION_H: f64 = 0.02;
/// Window on which the oscillatory tail is fitted.
pub const TAIL_WINDOW: (f64, f64) = (25.0, 40.0);
/// Fitted amplitudes below this are rejected.
pub const TAIL_FLOOR: f64 = 1e-6;

/// Bounded even solution of L_+ g1 = 2 lambda Im g2, L_- Im g2 = 2 lambda g1 at omega = 1,
/// normalized so that g1 ~ -sin(k x + delta) as x -> +inf.
#[derive(Clone, Debug)]
pub struct RadiationMode {
    pub p: f64,
    pub lambda: f64,
    pub k_rad: f64,
    pub nu: f64,
    /// Columns g1, Im g2, g1', Im g2' on nodes i h, 0 <= i h <= RADIATION_X.
    pub table: EvenTable,
    /// Coefficients (cos(k x), sin(k x), e^{-nu (x - RADIATION_X)}) of the free solution beyond RADIATION_X.
    pub tail: [f64; 3],
    pub phase: f64,
    /// Amplitude of the tail before normalization, for a solution with unit data at x = 0.
    pub raw_amplitude: f64,
}

/// Values (g1, Im g2, g1', Im g2') at one abscissa.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GJet {
    pub g1: f64,
    pub g2: f64,
    pub g1p: f64,
    pub g2p: f64,
}

impl RadiationMode {
    pub fn eval(&self, x: f64) -> GJet {
        let ax = x.abs();
        let sd = if x < 0.0 { -1.0 } else { 1.0 };
        if ax <= self.table.x_max() {
            let t = &self.table;
            return GJet {
                g1: t.eval(0, x),
                g2: t.eval(1, x),
                g1p: t.eval(2, x),
                g2p: t.eval(3, x),
            };
        }
        let k = self.k_rad;
        let [a, b, c] = self.tail;
        let (cs, sn) = ((k * ax).cos(), (k * ax).sin());
        let e = (-self.nu * (ax - RADIATION_X)).exp();
        let osc = a * cs + b * sn;
        let oscp = k * (-a * sn + b * cs);
        GJet {
            g1: osc + c * e,
            g2: osc - c * e,
            g1p: sd * (oscp - self.nu * c * e),
            g2p: sd * (oscp + self.nu * c * e),
        }
    }

    /// (g1, i Im g2) at frequency omega: x -> g(sqrt(omega) x).
    pub fn field(&self, grid: Grid, omega: f64) -> Field2 {
        let s = omega.sqrt();
        Field2::from_fn(grid, |x| {
            let j = self.eval(s * x);
            (C64::new(j.g1, 0.0), C64::new(0.0, j.g2))
        })
    }

    /// sup |sech(x/4) (L g - 2 i lambda g)| / sup |g| on the grid interior,
    /// with second derivatives by finite differences.
    pub fn residual(&self, grid: Grid) -> Result<f64> {
        let params = Params::unit(self.p)?;
        let g = self.field(grid, 1.0);
        let d2 = crate::numerics::derivative(&g, 2)?;
        let e = 2.0 * self.lambda;
        let margin = 8;
        let mut r = 0.0f64;
        for i in margin..grid.n - margin {
            let x = grid.x(i);
            let v = params.potential(x);
            let (u, w) = (g.v1[i].re, g.v2[i].im);
            let rp = -d2.v1[i].re + (1.0 - self.p * v) * u - e * w;
            let rm = -d2.v2[i].im + (1.0 - v) * w - e * u;
            r = r.max(sech(0.25 * x) * rp.abs().max(rm.abs()));
        }
        Ok(r / g.sup())
    }
}

/// The cubic radiation mode at wavenumber k:
/// (phi_3^2 cos(k x) / 2 + (phi_3'/phi_3) sin(k x), (phi_3'/phi_3) sin(k x)).
pub fn cubic_radiation(k: f64, x: f64) -> (f64, f64) {
    let ph2 = 2.0 * sech(x).powi(2);
    let r = -x.tanh();
    (
        0.5 * ph2 * (k * x).cos() + r * (k * x).sin(),
        r * (k * x).sin(),
    )
}

/// Solve for the even bounded solution at energy 2 lambda.
///
/// Solutions bounded at +inf form a three-dimensional family (two oscillatory,
/// one decaying). That frame is carried from RADIATION_X to 0 with QR
/// renormalization and the even member is the combination with g' (0) = 0.
pub fn radiation_mode(p: f64, mode: &InternalMode) -> Result<RadiationMode> {
    let params = Params::unit(p)?;
    if (mode.p - p).abs() > 1e-12 {
        return Err(NlsError::InvalidArgument(format!(
            "mode computed at p = {}, requested p = {p}",
            mode.p
        )));
    }
    let lambda = mode.lambda;
    if !(2.0 * lambda > 1.0) {
        return Err(NlsError::InvalidArgument(format!(
            "2 lambda = {} does not exceed the threshold",
            2.0 * lambda
        )));
    }
    let e = 2.0 * lambda;
    let k = (e - 1.0).sqrt();
    let nu = (1.0 + e).sqrt();
    let xm = RADIATION_X;
    let nn = (xm / RADIATION_H).round() as usize;
    let h = xm / nn as f64;
    let rhs = |x: f64, y: &[f64], dy: &mut [f64]| {
        let v = params.potential(x);
        dy[0] = y[2];
        dy[1] = y[3];
        dy[2] = (1.0 - p * v) * y[0] - e * y[1];
        dy[3] = (1.0 - v) * y[1] - e * y[0];
    };
    let (c, s) = ((k * xm).cos(), (k * xm).sin());
    let frame0 = DMatrix::from_column_slice(
        4,
        3,
        &[c, c, -k * s, -k * s, s, s, k * c, k * c, 1.0, -1.0, -nu, nu],
    );
    let samples: Vec<f64> = (0..=nn).rev().map(|i| i as f64 * h).collect();
    let breaks = breakpoints(xm, 0.0, 1.0);
    let run = continue_frame(rhs, &frame0, &breaks, &samples, OdeTol::new(1e-12))?;
    let q = &run.q_final;
    let r1 = Vector3::new(q[(2, 0)], q[(2, 1)], q[(2, 2)]);
    let r2 = Vector3::new(q[(3, 0)], q[(3, 1)], q[(3, 2)]);
    let cvec = r1.cross(&r2);
    let cn = cvec.norm();
    if !(cn > 1e-12) {
        return Err(NlsError::Singular(
            "derivative rows of the bounded frame are dependent at x = 0".into(),
        ));
    }
    let cvec = cvec / cn;
    let vals = run.reconstruct(cvec.as_slice());
    let mut cols = vec![vec![0.0; nn + 1]; 4];
    for (x, y) in &vals {
        let i = (x / h).round() as usize;
        for (col, yv) in cols.iter_mut().zip(y) {
            col[i] = *yv;
        }
    }
    // tail coefficients from the state at x_m, exact for the free equation there
    let last = nalgebra::DVector::from_iterator(4, (0..4).map(|j| cols[j][nn]));
    let tail_raw = frame0
        .clone()
        .svd(true, true)
        .solve(&last, 1e-14)
        .map_err(|e| NlsError::Singular(e.to_string()))?;

    // least-squares fit of g1 ~ a cos + b sin on the tail window
    let mut m = Matrix2::zeros();
    let mut rhs_v = Vector2::zeros();
    for i in 0..=nn {
        let x = i as f64 * h;
        if x < TAIL_WINDOW.0 || x > TAIL_WINDOW.1 {
            continue;
        }
        let b = Vector2::new((k * x).cos(), (k * x).sin());
        m += b * b.transpose();
        rhs_v += b * cols[0][i];
    }
    let ab = m
        .lu()
        .solve(&rhs_v)
        .ok_or_else(|| NlsError::Singular("tail fit".into()))?;
    let amp = ab.norm();
    if amp < TAIL_FLOOR {
        return Err(NlsError::TailFitDegenerate(amp));
    }
    let scale = if ab[1] > 0.0 { -1.0 / amp } else { 1.0 / amp };
    for col in cols.iter_mut() {
        for v in col.iter_mut() {
            *v *= scale;
        }
    }
    let (a, b) = (ab[0] * scale, ab[1] * scale);
    let phase = (-a).atan2(-b);
    let tail = [
        tail_raw[0] * scale,
        tail_raw[1] * scale,
        tail_raw[2] * scale,
    ];
    let table = EvenTable::new(h, false, cols, vec![1.0, 1.0, -1.0, -1.0]);
    Ok(RadiationMode {
        p,
        lambda,
        k_rad: k,
        nu,
        table,
        tail,
        phase,
        raw_amplitude: amp,
    })
}

/// phi^{p-2} and its first two derivatives at omega = 1.
fn weight_jet(params: &Params, x: f64) -> (f64, f64, f64) {
    let p = params.p;
    let b = params.b();
    let w = params.phi_pow(x, p - 2.0);
    let t = (b * x).tanh();
    let sc2 = sech(b * x).powi(2);
    (
        w,
        -(p - 2.0) * t * w,
        w * ((p - 2.0).powi(2) * t * t - (p - 2.0) * b * sc2),
    )
}

fn require_darboux(mode: &InternalMode) -> Result<()> {
    if mode.normalization != Normalization::Darboux {
        return Err(NlsError::NormalizationMismatch(format!(
            "gamma is defined with the Darboux normalization of xi, got {:?}",
            mode.normalization
        )));
    }
    Ok(())
}

fn check_pair(p: f64, mode: &InternalMode, rad: &RadiationMode) -> Result<()> {
    if (mode.p - p).abs() > 1e-12 || (rad.p - p).abs() > 1e-12 {
        return Err(NlsError::InvalidArgument(format!(
            "p = {p} but mode has p = {} and radiation mode p = {}",
            mode.p, rad.p
        )));
    }
    if (mode.lambda - rad.lambda).abs() > 1e-12 {
        return Err(NlsError::InvalidArgument(
            "radiation mode built for a different lambda".into(),
        ));
    }
    require_darboux(mode)
}

/// Default quadrature grid for gamma.
pub fn gamma_grid() -> Grid {
    make_grid(40.0, 8001, GridKind::Collocation).expect("static grid")
}

/// gamma = ∫ phi^{p-2} (p xi1^2 - (Im xi2)^2) g1 + 2 ∫ phi^{p-2} xi1 Im xi2 Im g2.
pub fn gamma(p: f64, mode: &InternalMode, rad: &RadiationMode) -> Result<f64> {
    gamma_on(p, mode, rad, gamma_grid())
}

pub fn gamma_on(p: f64, mode: &InternalMode, rad: &RadiationMode, grid: Grid) -> Result<f64> {
    check_pair(p, mode, rad)?;
    let params = Params::unit(p)?;
    let xi = mode.xi()?;
    let f: Vec<f64> = (0..grid.n)
        .map(|i| {
            let x = grid.x(i);
            let w = params.phi_pow(x, p - 2.0);
            let j = xi.eval(x);
            let g = rad.eval(x);
            w * (p * j.xi1 * j.xi1 - j.xi2 * j.xi2) * g.g1 + 2.0 * w * j.xi1 * j.xi2 * g.g2
        })
        .collect();
    Ok(grid.integrate(&f))
}

/// G1 + L_+ G2 / (2 lambda) with G1 = phi^{p-2}(p xi1^2 - (Im xi2)^2) and
/// G2 = 2 phi^{p-2} xi1 Im xi2, derivatives taken analytically from the xi jet.
pub fn g_route_density(mode: &InternalMode, x: f64) -> Result<f64> {
    let p = mode.p;
    let params = Params::unit(p)?;
    let j = mode.xi()?.eval(x);
    let (w, wp, wpp) = weight_jet(&params, x);
    let g1 = w * (p * j.xi1 * j.xi1 - j.xi2 * j.xi2);
    let prod = j.xi1 * j.xi2;
    let prodp = j.xi1p * j.xi2 + j.xi1 * j.xi2p;
    let prodpp = j.xi1pp * j.xi2 + 2.0 * j.xi1p * j.xi2p + j.xi1 * j.xi2pp;
    let g2 = 2.0 * w * prod;
    let g2pp = 2.0 * (wpp * prod + 2.0 * wp * prodp + w * prodpp);
    let lp = -g2pp + (1.0 - p * params.potential(x)) * g2;
    Ok(g1 + lp / (2.0 * mode.lambda))
}

/// gamma = ⟨G1 + L_+ G2 / (2 lambda), g1⟩, using L_+ g1 = 2 lambda Im g2.
pub fn gamma_g_route(p: f64, mode: &InternalMode, rad: &RadiationMode, grid: Grid) -> Result<f64> {
    check_pair(p, mode, rad)?;
    let f = (0..grid.n)
        .map(|i| {
            let x = grid.x(i);
            Ok(g_route_density(mode, x)? * rad.eval(x).g1)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(grid.integrate(&f))
}

/// gamma at one p with both quadrature routes.
#[derive(Clone, Debug, Serialize)]
pub struct GammaReport {
    pub p: f64,
    pub lambda: f64,
    pub k_rad: f64,
    pub gamma: f64,
    pub gamma_g_route: f64,
    /// gamma / (p - 3), absent at p = 3.
    pub gamma_over_pm3: Option<f64>,
    /// Factor multiplying gamma when xi is rescaled to ∫ xi1 Im xi2 = 1/2 (absent at p = 3).
    pub symplectic_factor: Option<f64>,
    pub radiation_residual: f64,
}

/// The internal mode with its eigenfunction at p, using the cubic closed form at p = 3.
pub fn mode_with_xi(p: f64) -> Result<InternalMode> {
    if p == 3.0 {
        InternalMode::cubic()
    } else {
        crate::internal_mode::xi_build(crate::internal_mode::find_lambda_auto(p)?)
    }
}

pub fn gamma_report(p: f64) -> Result<GammaReport> {
    let mode = mode_with_xi(p)?;
    let rad = radiation_mode(p, &mode)?;
    let grid = gamma_grid();
    let g = gamma_on(p, &mode, &rad, grid)?;
    let gg = gamma_g_route(p, &mode, &rad, grid)?;
    let symplectic_factor = if p == 3.0 {
        None
    } else {
        let s = crate::internal_mode::normalize(mode.clone(), Normalization::Symplectic)?
            .xi()?
            .scale;
        Some(s * s)
    };
    let res_grid = make_grid(30.0, 3001, GridKind::Collocation)?;
    Ok(GammaReport {
        p,
        lambda: mode.lambda,
        k_rad: rad.k_rad,
        gamma: g,
        gamma_g_route: gg,
        gamma_over_pm3: if p == 3.0 { None } else { Some(g / (p - 3.0)) },
        symplectic_factor,
        radiation_residual: rad.residual(res_grid)?,
    })
}

/// pi / cosh(pi / 2), the closed form of p_1.
pub fn p1_closed_form() -> f64 {
    PI / (0.5 * PI).cosh()
}

/// T = (e^{-sqrt2 |.|} / 2) * phi_3^2 and T' at ascending points.
///
/// T = I(x) + I(-x) with I(x) = ∫_{-inf}^x e^{-sqrt2 (x - y)} sech^2 y dy,
/// I' = sech^2 - sqrt2 I, so T' = sqrt2 (I(-x) - I(x)).
pub fn bold_t(xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pts: Vec<f64> = xs.iter().flat_map(|&x| [x, -x]).collect();
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    let x0 = pts[0].min(-40.0);
    let rhs = |x: f64, y: &[f64], dy: &mut [f64]| dy[0] = sech(x).powi(2) - SQRT_2 * y[0];
    let tol = OdeTol {
        rtol: 1e-13,
        atol: 1e-16,
        ..OdeTol::default()
    };
    let vals = integrate_real(rhs, &[0.0], x0, &pts, tol)?;
    let lookup = |x: f64| {
        let i = pts.partition_point(|&q| q < x);
        vals[i][0]
    };
    let mut t = Vec::with_capacity(xs.len());
    let mut tp = Vec::with_capacity(xs.len());
    for &x in xs {
        let (a, b) = (lookup(x), lookup(-x));
        t.push(a + b);
        tp.push(SQRT_2 * (b - a));
    }
    Ok((t, tp))
}

/// Families of sech-moment integrals over [-40, 40]:
/// p: sech^k cos, q: sech^k log sech cos, r: sech^k T cos, s: sech^k T tanh sin,
/// a: x sech^k tanh cos, b: sech^k tanh sin, c: sech^k log sech tanh sin,
/// d: x sech^k sin, e: sech^k tanh T' cos, f: sech^k T' sin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentFamily {
    P,
    Q,
    R,
    S,
    A,
    B,
    C,
    D,
    E,
    F,
}

impl MomentFamily {
    pub const ALL: [MomentFamily; 10] = [
        MomentFamily::P,
        MomentFamily::Q,
        MomentFamily::R,
        MomentFamily::S,
        MomentFamily::A,
        MomentFamily::B,
        MomentFamily::C,
        MomentFamily::D,
        MomentFamily::E,
        MomentFamily::F,
    ];

    pub fn letter(self) -> char {
        match self {
            MomentFamily::P => 'p',
            MomentFamily::Q => 'q',
            MomentFamily::R => 'r',
            MomentFamily::S => 's',
            MomentFamily::A => 'a',
            MomentFamily::B => 'b',
            MomentFamily::C => 'c',
            MomentFamily::D => 'd',
            MomentFamily::E => 'e',
            MomentFamily::F => 'f',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.letter() == c.to_ascii_lowercase())
            .ok_or(NlsError::UnknownMoment { family: c, k: 0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMethod {
    Quadrature,
    Recursion,
}

/// Largest index served by `moment`.
pub const MOMENT_K_MAX: usize = 9;
/// Default point count of the moment quadrature grid on [-40, 40].
pub const MOMENT_N: usize = 8001;

fn check_k(family: MomentFamily, k: usize) -> Result<()> {
    if k % 2 == 1 && k <= MOMENT_K_MAX {
        Ok(())
    } else {
        Err(NlsError::UnknownMoment {
            family: family.letter(),
            k,
        })
    }
}

/// Trapezoid quadrature of the moment integrands on a collocation grid.
#[derive(Clone, Debug)]
pub struct MomentQuadrature {
    pub grid: Grid,
    x: Vec<f64>,
    sech: Vec<f64>,
    lsech: Vec<f64>,
    tanh: Vec<f64>,
    t: Vec<f64>,
    tp: Vec<f64>,
}

impl MomentQuadrature {
    pub fn new(n: usize) -> Result<Self> {
        let grid = make_grid(40.0, n, GridKind::Collocation)?;
        let x = grid.points();
        let (t, tp) = bold_t(&x)?;
        Ok(MomentQuadrature {
            grid,
            sech: x.iter().map(|&v| sech(v)).collect(),
            lsech: x.iter().map(|&v| ln_sech(v)).collect(),
            tanh: x.iter().map(|&v| v.tanh()).collect(),
            x,
            t,
            tp,
        })
    }

    /// Integral for any odd k >= 1 (indices above MOMENT_K_MAX are allowed here
    /// because the reductions reach p_{k+4}).
    pub fn value(&self, family: MomentFamily, k: usize) -> Result<f64> {
        if k.is_multiple_of(2) || k == 0 {
            return Err(NlsError::UnknownMoment {
                family: family.letter(),
                k,
            });
        }
        let f: Vec<f64> = (0..self.grid.n)
            .map(|i| {
                let x = self.x[i];
                let sk = self.sech[i].powi(k as i32);
                let (c, s) = (x.cos(), x.sin());
                let (th, ls, t, tp) = (self.tanh[i], self.lsech[i], self.t[i], self.tp[i]);
                sk * match family {
                    MomentFamily::P => c,
                    MomentFamily::Q => ls * c,
                    MomentFamily::R => t * c,
                    MomentFamily::S => t * th * s,
                    MomentFamily::A => x * th * c,
                    MomentFamily::B => th * s,
                    MomentFamily::C => ls * th * s,
                    MomentFamily::D => x * s,
                    MomentFamily::E => th * tp * c,
                    MomentFamily::F => tp * s,
                }
            })
            .collect();
        Ok(self.grid.integrate(&f))
    }
}

/// Moments from the base values p1, q1, r1, s1, a1 by the reduction and elimination identities.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MomentRecursion {
    pub p1: f64,
    pub q1: f64,
    pub r1: f64,
    pub s1: f64,
    pub a1: f64,
}

/// Odd-indexed sequences p, q, r, s, a stored at index (k - 1) / 2.
struct Reduced {
    p: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    s: Vec<f64>,
    a: Vec<f64>,
}

impl MomentRecursion {
    pub fn from_quadrature(quad: &MomentQuadrature) -> Result<Self> {
        Ok(MomentRecursion {
            p1: quad.value(MomentFamily::P, 1)?,
            q1: quad.value(MomentFamily::Q, 1)?,
            r1: quad.value(MomentFamily::R, 1)?,
            s1: quad.value(MomentFamily::S, 1)?,
            a1: quad.value(MomentFamily::A, 1)?,
        })
    }

    fn reduce(&self, kmax: usize) -> Reduced {
        let m = (kmax - 1) / 2 + 1;
        let mut p = vec![self.p1];
        for j in 0..m + 2 {
            let k = (2 * j + 1) as f64;
            p.push((1.0 + k * k) / (k * (k + 1.0)) * p[j]);
        }
        let (mut q, mut r, mut s, mut a) =
            (vec![self.q1], vec![self.r1], vec![self.s1], vec![self.a1]);
        for j in 0..m {
            let k = (2 * j + 1) as f64;
            let kk = k * (k + 1.0);
            q.push(((1.0 + k * k) * q[j] + 2.0 * k * p[j] - (2.0 * k + 1.0) * p[j + 1]) / kk);
            let rn = ((k * k - 3.0) * r[j] + 2.0 * k * s[j] + 2.0 * SQRT_2 * p[j + 1]) / kk;
            r.push(rn);
            s.push(
                ((k * k - 3.0) * s[j] + 2.0 * (k + 1.0) * rn - 2.0 * k * r[j]
                    + 2.0 * SQRT_2 * (k + 3.0) * p[j + 2]
                    - 2.0 * SQRT_2 * (k + 2.0) * p[j + 1])
                    / ((k + 1.0) * (k + 2.0)),
            );
            a.push(
                ((k * k + 1.0) * a[j] - 2.0 * k * p[j] + 2.0 * (k + 1.0) * p[j + 1])
                    / ((k + 1.0) * (k + 2.0)),
            );
        }
        Reduced { p, q, r, s, a }
    }

    pub fn value(&self, family: MomentFamily, k: usize) -> Result<f64> {
        check_k(family, k)?;
        let d = self.reduce(k + 2);
        let j = (k - 1) / 2;
        let kf = k as f64;
        Ok(match family {
            MomentFamily::P => d.p[j],
            MomentFamily::Q => d.q[j],
            MomentFamily::R => d.r[j],
            MomentFamily::S => d.s[j],
            MomentFamily::A => d.a[j],
            MomentFamily::B => (kf + 1.0) * d.p[j + 1] - kf * d.p[j],
            MomentFamily::C => (kf + 1.0) * d.q[j + 1] - kf * d.q[j] + d.p[j + 1] - d.p[j],
            MomentFamily::D => -kf * d.a[j] + d.p[j],
            MomentFamily::E => d.s[j] + kf * d.r[j] - (kf + 1.0) * d.r[j + 1],
            MomentFamily::F => -d.r[j] + kf * d.s[j],
        })
    }
}

/// One moment by the requested method on the default quadrature grid.
pub fn moment(family: MomentFamily, k: usize, method: MomentMethod) -> Result<f64> {
    check_k(family, k)?;
    let quad = MomentQuadrature::new(MOMENT_N)?;
    match method {
        MomentMethod::Quadrature => quad.value(family, k),
        MomentMethod::Recursion => MomentRecursion::from_quadrature(&quad)?.value(family, k),
    }
}

/// Values of one family for k = 1, 3, ..., MOMENT_K_MAX.
#[derive(Clone, Debug, Serialize)]
pub struct MomentTable {
    pub family: MomentFamily,
    pub values: BTreeMap<usize, f64>,
    pub provenance: MomentMethod,
}

pub fn moment_table(
    quad: &MomentQuadrature,
    family: MomentFamily,
    method: MomentMethod,
) -> Result<MomentTable> {
    let rec = MomentRecursion::from_quadrature(quad)?;
    let mut values = BTreeMap::new();
    for k in (1..=MOMENT_K_MAX).step_by(2) {
        let v = match method {
            MomentMethod::Quadrature => quad.value(family, k)?,
            MomentMethod::Recursion => rec.value(family, k)?,
        };
        values.insert(k, v);
    }
    Ok(MomentTable {
        family,
        values,
        provenance: method,
    })
}

/// Which form of the q reduction to check. The commonly printed form carries
/// (k + 1) p_k where integration by parts gives 2k p_k; the two agree at k = 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QReduction {
    Printed,
    Corrected,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityResidual {
    pub name: &'static str,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Residuals of the ten integration-by-parts identities with quadrature values, k in {1, 3, 5, 7}.
pub fn identity_residuals(
    quad: &MomentQuadrature,
    q_form: QReduction,
) -> Result<Vec<IdentityResidual>> {
    use MomentFamily::*;
    let v = |f: MomentFamily, k: usize| quad.value(f, k);
    let mut out = Vec::new();
    for k in [1usize, 3, 5, 7] {
        let kf = k as f64;
        let kk = kf * (kf + 1.0);
        let (p0, p2, p4) = (v(P, k)?, v(P, k + 2)?, v(P, k + 4)?);
        let (q0, q2) = (v(Q, k)?, v(Q, k + 2)?);
        let (r0, r2) = (v(R, k)?, v(R, k + 2)?);
        let (s0, s2) = (v(S, k)?, v(S, k + 2)?);
        let (a0, a2) = (v(A, k)?, v(A, k + 2)?);
        let q_pk = match q_form {
            QReduction::Printed => kf + 1.0,
            QReduction::Corrected => 2.0 * kf,
        };
        let rows = [
            ("b_elimination", v(B, k)?, (kf + 1.0) * p2 - kf * p0),
            (
                "c_elimination",
                v(C, k)?,
                (kf + 1.0) * q2 - kf * q0 + p2 - p0,
            ),
            ("d_elimination", v(D, k)?, -kf * a0 + p0),
            ("e_elimination", v(E, k)?, s0 + kf * r0 - (kf + 1.0) * r2),
            ("f_elimination", v(F, k)?, -r0 + kf * s0),
            ("p_reduction", p2, (1.0 + kf * kf) / kk * p0),
            (
                "q_reduction",
                q2,
                ((1.0 + kf * kf) * q0 - (2.0 * kf + 1.0) * p2 + q_pk * p0) / kk,
            ),
            (
                "r_reduction",
                r2,
                ((kf * kf - 3.0) * r0 + 2.0 * kf * s0 + 2.0 * SQRT_2 * p2) / kk,
            ),
            (
                "s_reduction",
                s2,
                ((kf * kf - 3.0) * s0 + 2.0 * (kf + 1.0) * r2 - 2.0 * kf * r0
                    + 2.0 * SQRT_2 * (kf + 3.0) * p4
                    - 2.0 * SQRT_2 * (kf + 2.0) * p2)
                    / ((kf + 1.0) * (kf + 2.0)),
            ),
            (
                "a_reduction",
                a2,
                ((kf * kf + 1.0) * a0 - 2.0 * kf * p0 + 2.0 * (kf + 1.0) * p2)
                    / ((kf + 1.0) * (kf + 2.0)),
            ),
        ];
        for (name, lhs, rhs) in rows {
            out.push(IdentityResidual {
                name,
                k,
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
            });
        }
    }
    Ok(out)
}

/// gamma_1 = p_1 / sqrt2, the slope of gamma(p) at p = 3.
pub fn gamma_linear_coefficient() -> Result<f64> {
    gamma_linear_coefficient_with(MOMENT_N)
}

pub fn gamma_linear_coefficient_with(n: usize) -> Result<f64> {
    let grid = make_grid(40.0, n, GridKind::Collocation)?;
    let f: Vec<f64> = grid.points().iter().map(|&x| sech(x) * x.cos()).collect();
    Ok(grid.integrate(&f) / SQRT_2)
}

/// Smallest |gamma| counted as nonzero, above the quadrature noise at p = 3.
pub const GAMMA_FLOOR: f64 = 1e-6;

/// The three stability conditions at one p: 2 lambda > 1, gamma != 0, and the
/// threshold Wronskian W[f3(., 0), g3(., 0)] != 0, with det D(0) alongside.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionRow {
    pub p: f64,
    pub lambda: f64,
    pub two_lambda_gt_1: bool,
    pub gamma: f64,
    pub gamma_nonzero: bool,
    pub wronskian_iii: f64,
    #[serde(rename = "detD0")]
    pub det_d0: f64,
    /// 2 lambda - 1.
    pub two_lambda_margin: f64,
    /// |gamma| over half the linear prediction |gamma_1 (p - 3)|.
    pub gamma_margin: f64,
    /// |gamma - gamma through G|, the quadrature consistency of the row.
    pub gamma_route_diff: f64,
    pub error: String,
}

impl ConditionRow {
    fn failed(p: f64, e: NlsError) -> Self {
        ConditionRow {
            p,
            lambda: f64::NAN,
            two_lambda_gt_1: false,
            gamma: f64::NAN,
            gamma_nonzero: false,
            wronskian_iii: f64::NAN,
            det_d0: f64::NAN,
            two_lambda_margin: f64::NAN,
            gamma_margin: f64::NAN,
            gamma_route_diff: f64::NAN,
            error: e.to_string(),
        }
    }
}

/// Condition row at p; failures are recorded in the row rather than returned.
pub fn condition_row(p: f64) -> ConditionRow {
    let go = || -> Result<ConditionRow> {
        let r = gamma_report(p)?;
        let w = crate::jost::resonance_wronskian(p)?;
        let d = crate::jost::wronskian_d(p, 0.0, crate::jost::JostNormalization::Asymptotic)?;
        let half_linear = 0.5 * (p1_closed_form() / SQRT_2) * (p - 3.0).abs();
        Ok(ConditionRow {
            p,
            lambda: r.lambda,
            two_lambda_gt_1: 2.0 * r.lambda > 1.0,
            gamma: r.gamma,
            gamma_nonzero: r.gamma.abs() >= half_linear.max(GAMMA_FLOOR),
            wronskian_iii: w.norm(),
            det_d0: d.det().norm(),
            two_lambda_margin: 2.0 * r.lambda - 1.0,
            gamma_margin: r.gamma.abs() / half_linear,
            gamma_route_diff: (r.gamma - r.gamma_g_route).abs(),
            error: String::new(),
        })
    };
    go().unwrap_or_else(|e| ConditionRow::failed(p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::internal_mode::{convolution_t, normalize};

    fn sup_vs_cubic(rad: &RadiationMode, k: f64) -> f64 {
        (0..=3000)
            .map(|i| {
                let x = -15.0 + 0.01 * i as f64;
                let g = rad.eval(x);
                let (a, b) = cubic_radiation(k, x);
                (g.g1 - a).abs().max((g.g2 - b).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn cubic_radiation_mode_matches_closed_form() {
        let mode = mode_with_xi(3.0).unwrap();
        let rad = radiation_mode(3.0, &mode).unwrap();
        assert!((rad.k_rad - 1.0).abs() < 1e-12);
        assert!(sup_vs_cubic(&rad, 1.0) < 1e-4);
    }

    #[test]
    fn radiation_mode_residual_bound_and_parity() {
        let mode = mode_with_xi(2.9).unwrap();
        let rad = radiation_mode(2.9, &mode).unwrap();
        let grid = make_grid(30.0, 3001, GridKind::Collocation).unwrap();
        assert!(rad.residual(grid).unwrap() <= 1e-4);
        let f = rad.field(make_grid(60.0, 4001, GridKind::Collocation).unwrap(), 1.0);
        assert!(f.sup() <= 10.0);
        assert!(f.even_defect() <= 1e-8 * f.sup());
        // tail normalization: unit amplitude with a negative sin coefficient
        let amp = rad.tail[0].hypot(rad.tail[1]);
        assert!((amp - 1.0).abs() < 1e-6);
        assert!(rad.tail[1] < 0.0);
    }

    #[test]
    fn radiation_mode_approaches_cubic_linearly() {
        let d = |p: f64| {
            let mode = mode_with_xi(p).unwrap();
            let rad = radiation_mode(p, &mode).unwrap();
            sup_vs_cubic(&rad, rad.k_rad)
        };
        let (d1, d2) = (d(2.95), d(2.975));
        assert!(d1 <= 5.0 * d2, "{d1} vs {d2}");
        assert!(d1 > d2);
    }

    #[test]
    fn radiation_mode_rejects_subthreshold_lambda() {
        let mut mode = mode_with_xi(3.0).unwrap();
        mode.lambda = 0.4;
        assert!(matches!(
            radiation_mode(3.0, &mode),
            Err(NlsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn gamma_vanishes_at_cubic() {
        let mode = mode_with_xi(3.0).unwrap();
        let rad = radiation_mode(3.0, &mode).unwrap();
        assert!(gamma(3.0, &mode, &rad).unwrap().abs() <= 1e-4);
    }

    #[test]
    fn cubic_g_identity_pointwise() {
        let mode = mode_with_xi(3.0).unwrap();
        for i in 0..=400 {
            let x = -20.0 + 0.1 * i as f64;
            let v = g_route_density(&mode, x).unwrap();
            assert!((v - 2.0 * SQRT_2 * sech(x)).abs() <= 1e-5, "x={x}");
        }
    }

    #[test]
    fn gamma_routes_agree() {
        for p in [2.95, 3.05] {
            let mode = mode_with_xi(p).unwrap();
            let rad = radiation_mode(p, &mode).unwrap();
            let a = gamma(p, &mode, &rad).unwrap();
            let b = gamma_g_route(p, &mode, &rad, gamma_grid()).unwrap();
            assert!((a - b).abs() <= 1e-6, "p={p}: {a} vs {b}");
            assert_eq!(a.signum(), (p - 3.0).signum());
        }
    }

    #[test]
    fn gamma_requires_darboux_normalization() {
        let mode = mode_with_xi(2.95).unwrap();
        let rad = radiation_mode(2.95, &mode).unwrap();
        let sym = normalize(mode, Normalization::Symplectic).unwrap();
        assert!(matches!(
            gamma(2.95, &sym, &rad),
            Err(NlsError::NormalizationMismatch(_))
        ));
    }

    #[test]
    fn bold_t_matches_direct_convolution() {
        let grid = make_grid(40.0, 4001, GridKind::Collocation).unwrap();
        let (t, tp) = bold_t(&grid.points()).unwrap();
        let c = convolution_t(grid);
        let err = t
            .iter()
            .zip(&c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        // T is even, T' odd, and -T'' + 2T = 2 sqrt2 sech^2
        assert!((t[100] - t[grid.n - 101]).abs() < 1e-12);
        assert!((tp[100] + tp[grid.n - 101]).abs() < 1e-12);
        let h = grid.dx;
        for i in [1000, 1900, 2000, 2600] {
            let tpp = (-tp[i + 2] + 8.0 * tp[i + 1] - 8.0 * tp[i - 1] + tp[i - 2]) / (12.0 * h);
            let lhs = -tpp + 2.0 * t[i];
            assert!((lhs - 2.0 * SQRT_2 * sech(grid.x(i)).powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn p1_closed_form_value() {
        let v = moment(MomentFamily::P, 1, MomentMethod::Quadrature).unwrap();
        assert!((v - p1_closed_form()).abs() <= 1e-8);
        assert!((p1_closed_form() - 1.2520403).abs() < 1e-6);
    }

    #[test]
    fn p3_equals_p1() {
        let q = MomentQuadrature::new(MOMENT_N).unwrap();
        let rec = MomentRecursion::from_quadrature(&q).unwrap();
        let p1 = q.value(MomentFamily::P, 1).unwrap();
        assert_eq!(rec.value(MomentFamily::P, 3).unwrap(), p1);
        assert!((q.value(MomentFamily::P, 3).unwrap() - p1).abs() <= 1e-8);
        let b1 = q.value(MomentFamily::B, 1).unwrap();
        assert!((b1 - (2.0 * q.value(MomentFamily::P, 3).unwrap() - p1)).abs() <= 1e-6);
    }

    #[test]
    fn corrected_identities_hold() {
        let q = MomentQuadrature::new(MOMENT_N).unwrap();
        for r in identity_residuals(&q, QReduction::Corrected).unwrap() {
            assert!(r.residual <= 1e-6, "{} k={}: {:e}", r.name, r.k, r.residual);
        }
    }

    #[test]
    fn printed_q_reduction_fails_beyond_k1() {
        let q = MomentQuadrature::new(MOMENT_N).unwrap();
        for r in identity_residuals(&q, QReduction::Printed).unwrap() {
            let bad = r.name == "q_reduction" && r.k > 1;
            assert_eq!(r.residual > 1e-3, bad, "{} k={}", r.name, r.k);
        }
    }

    #[test]
    fn recursion_agrees_with_quadrature() {
        let q = MomentQuadrature::new(MOMENT_N).unwrap();
        for f in MomentFamily::ALL {
            let a = moment_table(&q, f, MomentMethod::Quadrature).unwrap();
            let b = moment_table(&q, f, MomentMethod::Recursion).unwrap();
            for (k, v) in &a.values {
                assert!((v - b.values[k]).abs() <= 1e-6, "{}_{k}", f.letter());
            }
        }
    }

    #[test]
    fn unknown_moments_rejected() {
        assert!(matches!(
            moment(MomentFamily::P, 2, MomentMethod::Quadrature),
            Err(NlsError::UnknownMoment { family: 'p', k: 2 })
        ));
        assert!(moment(MomentFamily::S, 11, MomentMethod::Recursion).is_err());
        assert!(MomentFamily::from_char('z').is_err());
        assert_eq!(MomentFamily::from_char('E').unwrap(), MomentFamily::E);
    }

    #[test]
    fn linear_coefficient_closed_form_and_resolution() {
        let oracle = PI / (SQRT_2 * (0.5 * PI).cosh());
        let g = gamma_linear_coefficient().unwrap();
        assert!((g - oracle).abs() <= 1e-6);
        assert!((g - 0.88532).abs() < 1e-5);
        let a = gamma_linear_coefficient_with(2048).unwrap();
        let b = gamma_linear_coefficient_with(4096).unwrap();
        assert!((a - b).abs() <= 1e-8);
    }
}
