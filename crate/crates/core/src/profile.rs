//! Soliton profiles, conserved quantities, the power nonlinearity and the
//! refined profile phi[omega, z].

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::internal_mode::InternalMode;
use crate::numerics::{derivative, inner, Field2, Grid, C64};

/// Exponent p of f(u) = |u|^{p-1} u and soliton frequency omega.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Params {
    pub p: f64,
    pub omega: f64,
}

/// log(sech y), stable for large |y|.
pub fn ln_sech(y: f64) -> f64 {
    let a = y.abs();
    -a - (-2.0 * a).exp().ln_1p() + std::f64::consts::LN_2
}

pub fn sech(y: f64) -> f64 {
    ln_sech(y).exp()
}

impl Params {
    pub fn new(p: f64, omega: f64) -> Result<Self> {
        if !(p > 1.0 && p < 5.0) {
            return Err(NlsError::InvalidArgument(format!(
                "p must lie in (1, 5), got {p}"
            )));
        }
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(NlsError::InvalidArgument(format!(
                "omega must be positive, got {omega}"
            )));
        }
        Ok(Params { p, omega })
    }

    /// Unit-frequency parameters.
    pub fn unit(p: f64) -> Result<Self> {
        Self::new(p, 1.0)
    }

    /// Decay rate b = (p-1)/2 of sech(b x) in the unit-frequency profile.
    pub fn b(&self) -> f64 {
        0.5 * (self.p - 1.0)
    }

    fn amp(&self) -> f64 {
        (0.5 * (self.p + 1.0)).powf(1.0 / (self.p - 1.0))
    }

    /// Unit-frequency profile and its first two derivatives at s.
    fn base(&self, s: f64) -> (f64, f64, f64) {
        let b = self.b();
        let phi = self.amp() * ((2.0 / (self.p - 1.0)) * ln_sech(b * s)).exp();
        let t = (b * s).tanh();
        let sc2 = sech(b * s).powi(2);
        (phi, -t * phi, phi * (t * t - b * sc2))
    }

    /// phi_omega(x).
    pub fn phi(&self, x: f64) -> f64 {
        let a = 1.0 / (self.p - 1.0);
        self.omega.powf(a) * self.base(self.omega.sqrt() * x).0
    }

    pub fn phi_x(&self, x: f64) -> f64 {
        let a = 1.0 / (self.p - 1.0);
        self.omega.powf(a + 0.5) * self.base(self.omega.sqrt() * x).1
    }

    pub fn phi_xx(&self, x: f64) -> f64 {
        let a = 1.0 / (self.p - 1.0);
        self.omega.powf(a + 1.0) * self.base(self.omega.sqrt() * x).2
    }

    /// d/d omega of phi_omega(x).
    pub fn phi_omega(&self, x: f64) -> f64 {
        let a = 1.0 / (self.p - 1.0);
        let w = self.omega;
        let (f, fp, _) = self.base(w.sqrt() * x);
        a * w.powf(a - 1.0) * f + w.powf(a) * fp * x / (2.0 * w.sqrt())
    }

    /// Second omega-derivative of phi_omega(x).
    pub fn phi_omega2(&self, x: f64) -> f64 {
        let a = 1.0 / (self.p - 1.0);
        let w = self.omega;
        let (f, fp, fpp) = self.base(w.sqrt() * x);
        a * (a - 1.0) * w.powf(a - 2.0) * f
            + a * w.powf(a - 1.0) * fp * x / w.sqrt()
            + w.powf(a) * (fpp * x * x / (4.0 * w) - fp * x / (4.0 * w.powf(1.5)))
    }

    /// phi_omega(x)^(p-1) = omega (p+1)/2 sech^2(b sqrt(omega) x).
    pub fn potential(&self, x: f64) -> f64 {
        self.omega * 0.5 * (self.p + 1.0) * sech(self.b() * self.omega.sqrt() * x).powi(2)
    }

    /// phi_omega(x)^e computed in log form.
    pub fn phi_pow(&self, x: f64, e: f64) -> f64 {
        let a = 1.0 / (self.p - 1.0);
        let lnphi = a * self.omega.ln()
            + self.amp().ln()
            + 2.0 * a * ln_sech(self.b() * self.omega.sqrt() * x);
        (e * lnphi).exp()
    }

    /// Mass q(omega) = (1/2) ∫ phi_omega^2 from the closed form of the unit profile integral.
    pub fn mass_scaling_exponent(&self) -> f64 {
        2.0 / (self.p - 1.0) - 0.5
    }
}

/// phi_omega sampled on a grid (real, second component zero).
pub fn soliton(params: &Params, grid: Grid) -> Field2 {
    Field2::from_real(grid, |x| (params.phi(x), 0.0))
}

/// Q = (1/2)∫|u|^2 and E = (1/2)∫|u'|^2 - ∫|u|^{p+1}/(p+1).
pub fn mass_energy(params: &Params, u: &Field2) -> Result<(f64, f64)> {
    let g = u.grid;
    let q: Vec<f64> = (0..g.n)
        .map(|i| u.v1[i].norm_sqr() + u.v2[i].norm_sqr())
        .collect();
    let du = derivative(u, 1)?;
    let e: Vec<f64> = (0..g.n)
        .map(|i| {
            let kin = du.v1[i].norm_sqr() + du.v2[i].norm_sqr();
            let m = q[i].sqrt();
            0.5 * kin - m.powf(params.p + 1.0) / (params.p + 1.0)
        })
        .collect();
    Ok((0.5 * g.integrate(&q), g.integrate(&e)))
}

/// f(u) = |u|^{p-1} u.
pub fn f_value(p: f64, u: C64) -> C64 {
    let m = u.norm();
    if m == 0.0 {
        return C64::new(0.0, 0.0);
    }
    u * m.powf(p - 1.0)
}

/// Df(u)X = |u|^{p-1} X + (p-1)|u|^{p-3} u Re(conj(u) X); zero at u = 0.
pub fn df(p: f64, u: C64, x: C64) -> C64 {
    let m = u.norm();
    if m == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let r = (u.conj() * x).re;
    x * m.powf(p - 1.0) + u * ((p - 1.0) * m.powf(p - 3.0) * r)
}

/// D^2 f(u)[X, X]; zero at u = 0.
pub fn d2f(p: f64, u: C64, x: C64) -> C64 {
    let m = u.norm();
    if m == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let r = (u.conj() * x).re;
    (x * (2.0 * r) + u * x.norm_sqr()) * ((p - 1.0) * m.powf(p - 3.0))
        + u * ((p - 1.0) * (p - 3.0) * m.powf(p - 5.0) * r * r)
}

/// D^2 f(u)[X, Y] by polarization of the diagonal form.
pub fn d2f_bilinear(p: f64, u: C64, x: C64, y: C64) -> C64 {
    (d2f(p, u, x + y) - d2f(p, u, x - y)) * 0.25
}

/// Order of the nonlinearity evaluation with its direction fields.
#[derive(Clone, Copy, Debug)]
pub enum Nonlinearity<'a> {
    Value,
    First(&'a Field2),
    Second(&'a Field2),
    SecondMixed(&'a Field2, &'a Field2),
}

/// The nonlinearity or its derivatives, applied to each component as a complex scalar.
pub fn nonlinearity(params: &Params, u: &Field2, order: Nonlinearity) -> Result<Field2> {
    let p = params.p;
    let check = |v: &Field2| {
        if v.grid != u.grid {
            Err(NlsError::GridMismatch("direction field".into()))
        } else {
            Ok(())
        }
    };
    match order {
        Nonlinearity::Value => Ok(u.map(|a| f_value(p, a))),
        Nonlinearity::First(x) => {
            check(x)?;
            Ok(u.zip_with(x, |a, b| df(p, a, b)))
        }
        Nonlinearity::Second(x) => {
            check(x)?;
            Ok(u.zip_with(x, |a, b| d2f(p, a, b)))
        }
        Nonlinearity::SecondMixed(x, y) => {
            check(x)?;
            check(y)?;
            let n = u.grid.n;
            let mut out = Field2::zeros(u.grid);
            for i in 0..n {
                out.v1[i] = d2f_bilinear(p, u.v1[i], x.v1[i], y.v1[i]);
                out.v2[i] = d2f_bilinear(p, u.v2[i], x.v2[i], y.v2[i]);
            }
            Ok(out)
        }
    }
}

/// Weight parameter kappa of the cosh-weighted residual norm. The internal
/// mode decays like e^{-alpha|x|}, so the weight may not grow faster than that.
pub fn default_kappa(p: f64, alpha: f64) -> f64 {
    0.2f64.min(0.25 * (p - 1.0)).min(alpha)
}

/// phi[omega, z] and its derivatives in omega and z = z1 + i z2, as complex
/// scalars on a grid. The internal mode enters through xi_omega(x) = xi(sqrt(omega) x).
#[derive(Clone, Debug)]
pub struct ProfileJet {
    pub phi: Vec<C64>,
    pub d_omega: Vec<C64>,
    pub d_z1: Vec<C64>,
    pub d_z2: Vec<C64>,
    pub d_omega2: Vec<C64>,
    pub d_omega_z1: Vec<C64>,
    pub d_omega_z2: Vec<C64>,
    /// phi_omega alone.
    pub base: Vec<C64>,
}

pub fn profile_jet(params: &Params, z: C64, mode: &InternalMode, grid: Grid) -> Result<ProfileJet> {
    let xi = mode.xi()?;
    let w = params.omega;
    let sw = w.sqrt();
    let n = grid.n;
    let i = C64::new(0.0, 1.0);
    let mut jet = ProfileJet {
        phi: Vec::with_capacity(n),
        d_omega: Vec::with_capacity(n),
        d_z1: Vec::with_capacity(n),
        d_z2: Vec::with_capacity(n),
        d_omega2: Vec::with_capacity(n),
        d_omega_z1: Vec::with_capacity(n),
        d_omega_z2: Vec::with_capacity(n),
        base: Vec::with_capacity(n),
    };
    for k in 0..n {
        let x = grid.x(k);
        let s = xi.eval(sw * x);
        let ds = x / (2.0 * sw);
        let dds = -x / (4.0 * w * sw);
        let a1 = C64::new(2.0 * s.xi1, 0.0);
        let a2 = -i * 2.0 * s.xi2;
        let a1w = C64::new(2.0 * s.xi1p * ds, 0.0);
        let a2w = -i * 2.0 * s.xi2p * ds;
        let a1ww = C64::new(2.0 * (s.xi1pp * ds * ds + s.xi1p * dds), 0.0);
        let a2ww = -i * 2.0 * (s.xi2pp * ds * ds + s.xi2p * dds);
        let phi = params.phi(x);
        jet.base.push(C64::new(phi, 0.0));
        jet.phi.push(C64::new(phi, 0.0) + a1 * z.re + a2 * z.im);
        jet.d_omega
            .push(C64::new(params.phi_omega(x), 0.0) + a1w * z.re + a2w * z.im);
        jet.d_z1.push(a1);
        jet.d_z2.push(a2);
        jet.d_omega2
            .push(C64::new(params.phi_omega2(x), 0.0) + a1ww * z.re + a2ww * z.im);
        jet.d_omega_z1.push(a1w);
        jet.d_omega_z2.push(a2w);
    }
    Ok(jet)
}

/// Refined profile with its correction coefficients and residual.
#[derive(Clone, Debug)]
pub struct RefinedProfile {
    pub params: Params,
    pub z: C64,
    pub phi: Field2,
    /// (theta_R, omega_R, z_R) with z_R complex.
    pub theta_r: f64,
    pub omega_r: f64,
    pub z_r: C64,
    pub residual: Field2,
    pub kappa: f64,
    pub residual_weighted_norm: f64,
    /// The 4x4 matrix A of the correction system.
    pub matrix: Matrix4<f64>,
    pub condition_number: f64,
    /// Orthogonality residuals <R, i phi>, <R, d_omega phi>, <R, d_z1 phi>, <R, d_z2 phi>,
    /// each relative to ||R|| ||test||.
    pub orthogonality: [f64; 4],
}

fn pair(grid: Grid, a: &[C64], b: &[C64]) -> f64 {
    let f: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).collect();
    grid.integrate(&f)
}

fn norm(grid: Grid, a: &[C64]) -> f64 {
    pair(grid, a, a).max(0.0).sqrt()
}

/// Solve for the corrections making R[omega, z] orthogonal to
/// i phi, d_omega phi, d_z1 phi, d_z2 phi, where
/// R = Rhat + theta_R phi - i omega_R d_omega phi - i D_z phi z_R and
/// Rhat = f(phi_omega + phi~) - f(phi_omega) - Df(phi_omega) phi~.
pub fn refined_profile(
    params: &Params,
    z: C64,
    mode: &InternalMode,
    grid: Grid,
    kappa: Option<f64>,
) -> Result<RefinedProfile> {
    let jet = profile_jet(params, z, mode, grid)?;
    let p = params.p;
    let n = grid.n;
    let i = C64::new(0.0, 1.0);
    let rhat: Vec<C64> = (0..n)
        .map(|k| {
            let b = jet.base[k];
            let t = jet.phi[k] - b;
            f_value(p, jet.phi[k]) - f_value(p, b) - df(p, b, t)
        })
        .collect();
    let tests: [Vec<C64>; 4] = [
        jet.phi.iter().map(|&v| i * v).collect(),
        jet.d_omega.clone(),
        jet.d_z1.clone(),
        jet.d_z2.clone(),
    ];
    let basis: [Vec<C64>; 4] = [
        jet.phi.clone(),
        jet.d_omega.iter().map(|&v| -i * v).collect(),
        jet.d_z1.iter().map(|&v| -i * v).collect(),
        jet.d_z2.iter().map(|&v| -i * v).collect(),
    ];
    let mut a = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            a[(r, c)] = pair(grid, &basis[c], &tests[r]);
        }
        rhs[r] = -pair(grid, &rhat, &tests[r]);
    }
    let sv = a.singular_values();
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    if cond > 1e8 {
        return Err(NlsError::IllConditioned(cond));
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| NlsError::Singular("refined profile system".into()))?;
    let mut res = rhat.clone();
    for k in 0..n {
        for c in 0..4 {
            res[k] += basis[c][k] * sol[c];
        }
    }
    let rn = norm(grid, &res);
    let mut orth = [0.0; 4];
    for r in 0..4 {
        let scale = (rn * norm(grid, &tests[r])).max(f64::MIN_POSITIVE);
        orth[r] = pair(grid, &res, &tests[r]).abs() / scale;
    }
    let kappa = kappa.unwrap_or_else(|| default_kappa(p, mode.alpha));
    let weighted: Vec<C64> = (0..n)
        .map(|k| res[k] * (kappa * params.omega * grid.x(k)).cosh())
        .collect();
    let a_final = a;
    Ok(RefinedProfile {
        params: *params,
        z,
        phi: Field2::scalar(grid, jet.phi.clone()),
        theta_r: sol[0],
        omega_r: sol[1],
        z_r: C64::new(sol[2], sol[3]),
        residual: Field2::scalar(grid, res),
        kappa,
        residual_weighted_norm: norm(grid, &weighted),
        matrix: a_final,
        condition_number: cond,
        orthogonality: orth,
    })
}

/// The refined-profile residual computed straight from its defining formula
/// R = phi'' + f(phi) - (omega - theta_R) phi - i omega_R d_omega phi + i D_z phi (i lambda z - z_R).
/// The corrections enter with the signs of the assembled form Rhat + theta_R phi - ..., so they
/// are negated here. Agreement with `RefinedProfile::residual` checks the construction to
/// discretization error.
pub fn residual_from_definition(rp: &RefinedProfile, mode: &InternalMode) -> Result<Field2> {
    let grid = rp.phi.grid;
    let jet = profile_jet(&rp.params, rp.z, mode, grid)?;
    let lam = mode.lambda * rp.params.omega;
    let i = C64::new(0.0, 1.0);
    let ztil = i * lam * rp.z - rp.z_r;
    let d2 = derivative(&rp.phi, 2)?;
    let p = rp.params.p;
    let v: Vec<C64> = (0..grid.n)
        .map(|k| {
            d2.v1[k] + f_value(p, jet.phi[k])
                - jet.phi[k] * (rp.params.omega - rp.theta_r)
                - i * rp.omega_r * jet.d_omega[k]
                + i * (jet.d_z1[k] * ztil.re + jet.d_z2[k] * ztil.im)
        })
        .collect();
    Ok(Field2::scalar(grid, v))
}

/// <a, b> of two complex scalar fields stored in the first component.
pub fn scalar_inner(a: &Field2, b: &Field2) -> Result<f64> {
    inner(a, b)
}
