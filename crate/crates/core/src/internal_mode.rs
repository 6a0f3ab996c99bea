//! The internal mode (i lambda, xi) of the linearization at omega = 1, by a
//! Birman-Schwinger fixed point for alpha = sqrt(1 - lambda) and by an Evans
//! root search, and the eigenfunction built from the fixed-point solution
//! through the second-order Darboux map.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::jost;
use crate::numerics::{brent, EvenTable, Field2, Grid, C64};
use crate::profile::{sech, Params};

/// Eigenvalue method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Evans,
    BirmanSchwinger,
}

/// Normalization of xi. `Darboux` is the raw output of the Darboux map, which
/// tends to (1 - phi_3^2, i) as p -> 3; `Symplectic` scales to ∫ xi1 Im xi2 = 1/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Normalization {
    Darboux,
    Symplectic,
}

/// Threshold gap below which the Evans search does not go.
pub const EPS_GAP: f64 = 1e-7;

/// Largest |p - 3| for which the fixed-point iteration is offered.
pub const BS_RADIUS: f64 = 0.3;

/// Smallest |p - 3| for which the Evans search is offered.
pub const EVANS_MIN_DISTANCE: f64 = 0.05;

/// Dense Birman-Schwinger discretization on the half-line nodes (j + 1/2) h.
#[derive(Clone, Debug)]
pub struct BirmanSchwinger {
    pub p: f64,
    pub h: f64,
    /// Support nodes, x_j < S.
    pub nodes: Vec<f64>,
    /// sech^2(b x_j) / 4 at the support nodes.
    pub weight: Vec<f64>,
    /// The constant matrix of P(x) = pm sech^2(b x) / 4.
    pub pm: Matrix2<f64>,
}

/// Solution Z of Z = e2 - (p - 3) N_alpha P Z at the support nodes, and s = ∫ (P Z)_2.
#[derive(Clone, Debug)]
pub struct BsSolution {
    pub alpha: f64,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub s: f64,
}

/// Kernel entries (N_1, N_2) of N_alpha at distance r >= 0.
pub fn bs_kernel(alpha: f64, r: f64) -> (f64, f64) {
    let kappa = (2.0 - alpha * alpha).sqrt();
    let n1 = (-kappa * r).exp() / (2.0 * kappa);
    let n2 = if alpha == 0.0 {
        -0.5 * r
    } else {
        (-alpha * r).exp_m1() / (2.0 * alpha)
    };
    (n1, n2)
}

impl BirmanSchwinger {
    /// Discretization matching the collocation grid [-half_width, half_width] with n (even) points.
    pub fn new(p: f64, half_width: f64, n: usize) -> Result<Self> {
        if n < 16 || !n.is_multiple_of(2) || !(half_width > 0.0) {
            return Err(NlsError::InvalidArgument(format!(
                "Birman-Schwinger grid ({half_width}, {n})"
            )));
        }
        if !(p > 1.0 && p < 5.0) {
            return Err(NlsError::InvalidArgument(format!(
                "p must lie in (1, 5), got {p}"
            )));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let support = half_width.min(40.0 / (p - 1.0));
        let b = 0.5 * (p - 1.0);
        let nodes: Vec<f64> = (0..n / 2)
            .map(|j| (j as f64 + 0.5) * h)
            .filter(|&x| x < support)
            .collect();
        let weight = nodes.iter().map(|&x| 0.25 * sech(b * x).powi(2)).collect();
        let pm = Matrix2::new(3.0 - p, p - 1.0, p - 1.0, 3.0 - p);
        Ok(BirmanSchwinger {
            p,
            h,
            nodes,
            weight,
            pm,
        })
    }

    pub fn default_for(p: f64) -> Result<Self> {
        Self::new(p, 40.0, 2048)
    }

    /// P(x) = pm sech^2(b x) / 4.
    pub fn p_matrix(&self, x: f64) -> Matrix2<f64> {
        self.pm * (0.25 * sech(0.5 * (self.p - 1.0) * x).powi(2))
    }

    /// |P|^{1/2} and P^{1/2} = sign(P) |P|^{1/2} from the eigen-decomposition of pm.
    pub fn p_roots(&self, x: f64) -> (Matrix2<f64>, Matrix2<f64>) {
        let w = 0.25 * sech(0.5 * (self.p - 1.0) * x).powi(2);
        let e_plus = 2.0 * w;
        let e_minus = (4.0 - 2.0 * self.p) * w;
        let proj_plus = Matrix2::new(0.5, 0.5, 0.5, 0.5);
        let proj_minus = Matrix2::new(0.5, -0.5, -0.5, 0.5);
        let abs_root = proj_plus * e_plus.sqrt() + proj_minus * e_minus.abs().sqrt();
        let root =
            proj_plus * e_plus.sqrt() + proj_minus * (e_minus.signum() * e_minus.abs().sqrt());
        (abs_root, root)
    }

    /// Folded kernel sum h [N(|x - y|) + N(x + y)] for the two channels.
    fn folded(&self, alpha: f64, x: f64, y: f64) -> (f64, f64) {
        let (a1, a2) = bs_kernel(alpha, (x - y).abs());
        let (b1, b2) = bs_kernel(alpha, x + y);
        (self.h * (a1 + b1), self.h * (a2 + b2))
    }

    pub fn solve(&self, alpha: f64) -> Result<BsSolution> {
        let m = self.nodes.len();
        let c = self.p - 3.0;
        let mut a = DMatrix::<f64>::identity(2 * m, 2 * m);
        let kink = self.h * self.h / 12.0;
        for i in 0..m {
            for j in 0..m {
                let (mut k1, mut k2) = self.folded(alpha, self.nodes[i], self.nodes[j]);
                if i == j {
                    k1 -= kink;
                    k2 -= kink;
                }
                let w = self.weight[j];
                a[(i, j)] += c * k1 * w * self.pm[(0, 0)];
                a[(i, m + j)] += c * k1 * w * self.pm[(0, 1)];
                a[(m + i, j)] += c * k2 * w * self.pm[(1, 0)];
                a[(m + i, m + j)] += c * k2 * w * self.pm[(1, 1)];
            }
        }
        let mut rhs = DVector::<f64>::zeros(2 * m);
        for i in 0..m {
            rhs[m + i] = 1.0;
        }
        let z = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| NlsError::Singular("Birman-Schwinger system".into()))?;
        let z1: Vec<f64> = z.rows(0, m).iter().copied().collect();
        let z2: Vec<f64> = z.rows(m, m).iter().copied().collect();
        let s = 2.0
            * self.h
            * (0..m)
                .map(|j| self.weight[j] * (self.pm[(1, 0)] * z1[j] + self.pm[(1, 1)] * z2[j]))
                .sum::<f64>();
        Ok(BsSolution { alpha, z1, z2, s })
    }

    /// s(p, alpha) = ∫ (P Z)_2.
    pub fn s(&self, alpha: f64) -> Result<f64> {
        Ok(self.solve(alpha)?.s)
    }

    /// Z at an arbitrary x >= 0 by the Nystrom formula. Exact at the support nodes.
    pub fn extend(&self, sol: &BsSolution, x: f64) -> (f64, f64) {
        let c = self.p - 3.0;
        let (mut s1, mut s2) = (0.0, 0.0);
        for j in 0..self.nodes.len() {
            let (k1, k2) = self.folded(sol.alpha, x, self.nodes[j]);
            let w = self.weight[j];
            s1 += k1 * w * (self.pm[(0, 0)] * sol.z1[j] + self.pm[(0, 1)] * sol.z2[j]);
            s2 += k2 * w * (self.pm[(1, 0)] * sol.z1[j] + self.pm[(1, 1)] * sol.z2[j]);
        }
        (-c * s1, 1.0 - c * s2)
    }
}

/// Result of the alpha iteration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AlphaFixedPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub iterations: usize,
}

/// Iterate alpha <- -(p - 3) s(p, alpha) / 2 from alpha = 0.
pub fn alpha_fixed_point(p: f64) -> Result<AlphaFixedPoint> {
    alpha_fixed_point_with(&BirmanSchwinger::default_for(p)?)
}

pub fn alpha_fixed_point_with(bs: &BirmanSchwinger) -> Result<AlphaFixedPoint> {
    let p = bs.p;
    if (p - 3.0).abs() > BS_RADIUS + 1e-12 {
        return Err(NlsError::OutOfMethodRange {
            p,
            method: "birman_schwinger",
        });
    }
    if p == 3.0 {
        return Ok(AlphaFixedPoint {
            alpha: 0.0,
            lambda: 1.0,
            iterations: 0,
        });
    }
    let mut alpha = 0.0;
    let mut change = f64::INFINITY;
    for it in 1..=200 {
        let next = -(p - 3.0) * bs.s(alpha)? / 2.0;
        if !(next >= 0.0) {
            return Err(NlsError::NoConvergence {
                iterations: it,
                last_change: change,
            });
        }
        change = (next - alpha).abs();
        alpha = next;
        if change <= 1e-12 {
            return Ok(AlphaFixedPoint {
                alpha,
                lambda: 1.0 - alpha * alpha,
                iterations: it,
            });
        }
    }
    Err(NlsError::NoConvergence {
        iterations: 200,
        last_change: change,
    })
}

/// Largest root of the even-sector Evans determinant in (0, omega (1 - eps_gap)).
pub fn evans_root(params: &Params, eps_gap: f64) -> Result<f64> {
    let w = params.omega;
    let n = 80;
    let lo = eps_gap.ln();
    let hi = 0.99f64.ln();
    let lams: Vec<f64> = (0..n)
        .map(|i| w * (1.0 - (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()))
        .collect();
    let vals: Vec<f64> = lams
        .iter()
        .map(|&l| jost::evans_gap(params, l, eps_gap))
        .collect::<Result<_>>()?;
    for i in 0..n - 1 {
        if vals[i] == 0.0 {
            return Ok(lams[i]);
        }
        if vals[i].signum() != vals[i + 1].signum() {
            let mut err = None;
            let r = brent(
                |l| match jost::evans_gap(params, l, eps_gap) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                },
                lams[i + 1],
                lams[i],
                1e-14,
                200,
            )?;
            if let Some(e) = err {
                return Err(e);
            }
            return Ok(r);
        }
    }
    Err(NlsError::NoRootInBracket(format!(
        "no sign change of the Evans determinant for p = {}",
        params.p
    )))
}

/// xi and its first two derivatives at one abscissa; xi2 is Im of the second component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct XiJet {
    pub xi1: f64,
    pub xi1p: f64,
    pub xi1pp: f64,
    pub xi2: f64,
    pub xi2p: f64,
    pub xi2pp: f64,
}

/// Tabulated eigenfunction at omega = 1 with exponential extrapolation e^{-alpha x}.
#[derive(Clone, Debug)]
pub struct XiProfile {
    pub table: EvenTable,
    pub alpha: f64,
    /// Factor applied to the raw Darboux output.
    pub scale: f64,
}

impl XiProfile {
    pub fn eval(&self, x: f64) -> XiJet {
        let ax = x.abs();
        let xm = self.table.x_max();
        let (xe, decay) = if ax > xm {
            (xm, (-self.alpha * (ax - xm)).exp())
        } else {
            (ax, 1.0)
        };
        let t = &self.table;
        let sd = if x < 0.0 { -1.0 } else { 1.0 };
        let v = |c: usize| self.scale * decay * t.eval(c, xe);
        XiJet {
            xi1: v(0),
            xi1p: sd * v(1),
            xi1pp: v(2),
            xi2: v(3),
            xi2p: sd * v(4),
            xi2pp: v(5),
        }
    }

    /// (xi1, i Im xi2) at frequency omega: x -> xi(sqrt(omega) x).
    pub fn field(&self, grid: Grid, omega: f64) -> Field2 {
        let s = omega.sqrt();
        Field2::from_fn(grid, |x| {
            let j = self.eval(s * x);
            (C64::new(j.xi1, 0.0), C64::new(0.0, j.xi2))
        })
    }

    /// ∫ xi1 Im xi2 over the line, including the exponential tail.
    pub fn symplectic_pairing(&self) -> Result<f64> {
        if self.alpha <= 0.0 {
            return Err(NlsError::NormalizationMismatch(
                "xi does not decay at p = 3".into(),
            ));
        }
        let t = &self.table;
        let n = t.len();
        let core: f64 = (0..n).map(|i| t.cols[0][i] * t.cols[3][i]).sum::<f64>() * t.h;
        let end = t.cols[0][n - 1] * t.cols[3][n - 1];
        // midpoint sum on [0, x_max + h/2], then the tail of a product decaying at 2 alpha
        let tail = end * (-self.alpha * t.h).exp() / (2.0 * self.alpha);
        Ok(2.0 * self.scale * self.scale * (core + tail))
    }
}

/// The internal eigenvalue at omega = 1 and, once built, its eigenfunction.
#[derive(Clone, Debug)]
pub struct InternalMode {
    pub p: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub method: Method,
    pub normalization: Normalization,
    pub xi: Option<XiProfile>,
    pub iterations: usize,
}

impl InternalMode {
    pub fn xi(&self) -> Result<&XiProfile> {
        self.xi
            .as_ref()
            .ok_or_else(|| NlsError::InvalidArgument("internal mode without eigenfunction".into()))
    }

    /// lambda(p, omega) = omega lambda(p, 1).
    pub fn lambda_at(&self, omega: f64) -> f64 {
        omega * self.lambda
    }

    /// The p = 3 resonance: lambda = 1, xi = (1 - phi_3^2, i).
    pub fn cubic() -> Result<Self> {
        let mode = InternalMode {
            p: 3.0,
            lambda: 1.0,
            alpha: 0.0,
            method: Method::BirmanSchwinger,
            normalization: Normalization::Darboux,
            xi: None,
            iterations: 0,
        };
        xi_build(mode)
    }
}

/// lambda(p, 1) by the requested method. The fixed point is offered for
/// |p - 3| <= 0.3, the Evans search for |p - 3| >= 0.05.
pub fn find_lambda(p: f64, method: Method) -> Result<InternalMode> {
    Params::unit(p)?;
    let d = (p - 3.0).abs();
    match method {
        Method::BirmanSchwinger => {
            let fp = alpha_fixed_point(p)?;
            Ok(InternalMode {
                p,
                lambda: fp.lambda,
                alpha: fp.alpha,
                method,
                normalization: Normalization::Darboux,
                xi: None,
                iterations: fp.iterations,
            })
        }
        Method::Evans => {
            if d < EVANS_MIN_DISTANCE - 1e-12 {
                return Err(NlsError::OutOfMethodRange { p, method: "evans" });
            }
            let lambda = evans_root(&Params::unit(p)?, EPS_GAP)?;
            Ok(InternalMode {
                p,
                lambda,
                alpha: (1.0 - lambda).sqrt(),
                method,
                normalization: Normalization::Darboux,
                xi: None,
                iterations: 0,
            })
        }
    }
}

/// lambda(p, 1) by whichever method covers p, preferring the fixed point.
pub fn find_lambda_auto(p: f64) -> Result<InternalMode> {
    if (p - 3.0).abs() <= BS_RADIUS {
        find_lambda(p, Method::BirmanSchwinger)
    } else {
        find_lambda(p, Method::Evans)
    }
}

/// Populate xi via Z = (1 + (p - 3) N_alpha P)^{-1} e2, w = Z1 + Z2 and
/// xi1 = (S1*)^2 w, Im xi2 = L_+ xi1 / lambda, with the Darboux normalization.
pub fn xi_build(mode: InternalMode) -> Result<InternalMode> {
    let p = mode.p;
    let bs = BirmanSchwinger::default_for(p)?;
    let alpha = mode.alpha;
    let lambda = mode.lambda;
    let sol = bs.solve(alpha)?;
    let h = bs.h;
    let x_tab = 60.0f64.max(90.0 / (p - 1.0));
    let n = (x_tab / h).ceil() as usize;
    let m = bs.nodes.len();
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    for i in 0..n {
        if i < m {
            z1.push(sol.z1[i]);
            z2.push(sol.z2[i]);
        } else {
            let (a, b) = bs.extend(&sol, (i as f64 + 0.5) * h);
            z1.push(a);
            z2.push(b);
        }
    }
    let zt = EvenTable::new(h, true, vec![z1.clone(), z2.clone()], vec![1.0, 1.0]);
    let dz1 = zt.d1_nodes(0);
    let dz2 = zt.d1_nodes(1);
    let b = 0.5 * (p - 1.0);
    let kappa2 = 2.0 - alpha * alpha;
    let c = p - 3.0;
    let pm = bs.pm;
    let params = Params::unit(p)?;
    let mut cols: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(n)).collect();
    for i in 0..n {
        let x = zt.node(i);
        let sc2 = sech(b * x).powi(2);
        let th = (b * x).tanh();
        // A = diag(kappa^2, alpha^2) + (p - 3) pm sech^2 / 4 and its derivatives
        let q0 = 0.25 * sc2;
        let q1 = 0.25 * (-2.0 * b * sc2 * th);
        let q2 = 0.25 * b * b * (4.0 * sc2 - 6.0 * sc2 * sc2);
        let a0 = Matrix2::new(kappa2, 0.0, 0.0, alpha * alpha) + pm * (c * q0);
        let a1 = pm * (c * q1);
        let a2 = pm * (c * q2);
        let z = nalgebra::Vector2::new(z1[i], z2[i]);
        let zp = nalgebra::Vector2::new(dz1[i], dz2[i]);
        let zpp = a0 * z;
        let zppp = a1 * z + a0 * zp;
        let zpppp = a2 * z + a1 * zp * 2.0 + a0 * zpp;
        let w = z.sum();
        let (w1, w2, w3, w4) = (zp.sum(), zpp.sum(), zppp.sum(), zpppp.sum());
        let t = th;
        let t1 = b * sc2;
        let t2 = -2.0 * b * b * sc2 * th;
        let t3 = -2.0 * b * b * b * sc2 * (sc2 - 2.0 * th * th);
        let xi1 = w2 - 2.0 * t * w1 + (t * t - t1) * w;
        let xi1p = w3 - 2.0 * t * w2 + (t * t - 3.0 * t1) * w1 + (2.0 * t * t1 - t2) * w;
        let xi1pp = w4 - 2.0 * t * w3
            + (t * t - 5.0 * t1) * w2
            + (4.0 * t * t1 - 4.0 * t2) * w1
            + (2.0 * t1 * t1 + 2.0 * t * t2 - t3) * w;
        let v = params.potential(x);
        let xi2 = (-xi1pp + xi1 - p * v * xi1) / lambda;
        cols[0].push(xi1);
        cols[1].push(xi1p);
        cols[2].push(xi1pp);
        cols[3].push(xi2);
        cols[5].push((1.0 - v) * xi2 - lambda * xi1);
    }
    let partial = EvenTable::new(h, true, vec![cols[3].clone()], vec![1.0]);
    cols[4] = partial.d1_nodes(0);
    let table = EvenTable::new(h, true, cols, vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0]);
    let xi = XiProfile {
        table,
        alpha,
        scale: 1.0,
    };
    Ok(InternalMode {
        xi: Some(xi),
        normalization: Normalization::Darboux,
        ..mode
    })
}

/// Rescale xi to the requested normalization.
pub fn normalize(mode: InternalMode, target: Normalization) -> Result<InternalMode> {
    let mut xi = mode.xi()?.clone();
    match target {
        Normalization::Darboux => xi.scale = 1.0,
        Normalization::Symplectic => {
            xi.scale = 1.0;
            let pairing = xi.symplectic_pairing()?;
            if !(pairing > 0.0) {
                return Err(NlsError::NormalizationMismatch(format!(
                    "∫ xi1 Im xi2 = {pairing:e}"
                )));
            }
            xi.scale = (0.5 / pairing).sqrt();
        }
    }
    Ok(InternalMode {
        xi: Some(xi),
        normalization: target,
        ..mode
    })
}

/// Eigen-residuals ||L_- Im xi2 - lambda xi1|| and ||L_+ xi1 - lambda Im xi2||
/// relative to ||xi||, on the grid interior.
pub fn eigen_residual(mode: &InternalMode, grid: Grid) -> Result<(f64, f64)> {
    let xi = mode.xi()?;
    let params = Params::unit(mode.p)?;
    let f = xi.field(grid, 1.0);
    let d2 = crate::numerics::derivative(&f, 2)?;
    let margin = 8;
    let (mut r1, mut r2, mut nn) = (0.0, 0.0, 0.0);
    for i in margin..grid.n - margin {
        let x = grid.x(i);
        let v = params.potential(x);
        let a = f.v1[i].re;
        let b = f.v2[i].im;
        let lm = -d2.v2[i].im + (1.0 - v) * b - mode.lambda * a;
        let lp = -d2.v1[i].re + (1.0 - mode.p * v) * a - mode.lambda * b;
        r1 += lm * lm;
        r2 += lp * lp;
        nn += a * a + b * b;
    }
    Ok(((r1 / nn).sqrt(), (r2 / nn).sqrt()))
}

/// T = (e^{-sqrt2 |.|} / 2) * phi_3^2 by quadrature on the grid, with the
/// kink of the kernel corrected at the diagonal.
pub fn convolution_t(grid: Grid) -> Vec<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let g: Vec<f64> = (0..grid.n).map(|i| 2.0 * sech(grid.x(i)).powi(2)).collect();
    let w = grid.weights();
    let h = grid.dx;
    (0..grid.n)
        .map(|i| {
            let xi = grid.x(i);
            let mut s = 0.0;
            for j in 0..grid.n {
                s += w[j] * 0.5 * (-s2 * (xi - grid.x(j)).abs()).exp() * g[j];
            }
            s - h * h * s2 * g[i] / 12.0
        })
        .collect()
}

/// R_1 = -x phi_3 phi_3' - (3 - phi_3^2) T / (4 sqrt2) - phi_3' T' / (2 sqrt2 phi_3),
/// the first-order coefficient of xi1 in p - 3.
pub fn first_order_correction(grid: Grid) -> Result<Vec<f64>> {
    let t = convolution_t(grid);
    let tf = Field2::from_fn(grid, |_| (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    let tf = Field2 {
        v1: t.iter().map(|&v| C64::new(v, 0.0)).collect(),
        ..tf
    };
    let dt = crate::numerics::derivative(&tf, 1)?;
    let s2 = std::f64::consts::SQRT_2;
    Ok((0..grid.n)
        .map(|i| {
            let x = grid.x(i);
            let ph = s2 * sech(x);
            let ratio = -x.tanh();
            let php = ratio * ph;
            -x * ph * php - (3.0 - ph * ph) * t[i] / (4.0 * s2) - ratio * dt.v1[i].re / (2.0 * s2)
        })
        .collect())
}

/// ⟨phi_3^2, T⟩.
pub fn phi3_sq_t_pairing(grid: Grid) -> f64 {
    let t = convolution_t(grid);
    let f: Vec<f64> = (0..grid.n)
        .map(|i| 2.0 * sech(grid.x(i)).powi(2) * t[i])
        .collect();
    grid.integrate(&f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{make_grid, GridKind};

    #[test]
    fn kernel_small_alpha_limit() {
        // the deviation from -r/2 is alpha r^2 / 4 to leading order
        for &r in &[0.0, 0.05, 0.1, 0.2] {
            let (_, n2) = bs_kernel(1e-4, r);
            assert!((n2 + 0.5 * r).abs() <= 1e-6, "r={r}");
        }
        for &r in &[1.0, 5.0, 20.0] {
            let (_, n2) = bs_kernel(1e-4, r);
            let lead = 1e-4 * r * r / 4.0;
            assert!(((n2 + 0.5 * r) - lead).abs() < 0.01 * lead, "r={r}");
        }
    }

    #[test]
    fn p_square_roots_factor_p() {
        for &p in &[2.7, 3.0, 3.3] {
            let bs = BirmanSchwinger::new(p, 20.0, 64).unwrap();
            for &x in &[0.0, 0.8, 3.0] {
                let (ar, r) = bs.p_roots(x);
                let pmat = bs.p_matrix(x);
                assert!((r * ar - pmat).abs().max() < 1e-12);
                assert!((r * ar - ar * r).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn cubic_fixed_point_is_trivial() {
        let fp = alpha_fixed_point(3.0).unwrap();
        assert_eq!((fp.alpha, fp.lambda), (0.0, 1.0));
    }

    #[test]
    fn cubic_xi_is_resonance() {
        let mode = InternalMode::cubic().unwrap();
        let xi = mode.xi().unwrap();
        let mut err: f64 = 0.0;
        for i in 0..=400 {
            let x = -10.0 + 0.05 * i as f64;
            let j = xi.eval(x);
            err = err
                .max((j.xi1 - (1.0 - 2.0 * sech(x).powi(2))).abs())
                .max((j.xi2 - 1.0).abs());
        }
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn t_solves_its_equation() {
        let g = make_grid(40.0, 4096, GridKind::Collocation).unwrap();
        let t = convolution_t(g);
        let f = Field2 {
            v1: t.iter().map(|&v| C64::new(v, 0.0)).collect(),
            ..Field2::zeros(g)
        };
        let d2 = crate::numerics::derivative(&f, 2).unwrap();
        let mut r: f64 = 0.0;
        for i in 8..g.n - 8 {
            let x = g.x(i);
            r = r.max((-d2.v1[i].re + 2.0 * t[i] - 2f64.sqrt() * 2.0 * sech(x).powi(2)).abs());
        }
        assert!(r < 1e-5, "residual {r}");
        let asym = (0..g.n)
            .map(|i| (t[i] - t[g.n - 1 - i]).abs())
            .fold(0.0, f64::max);
        assert!(asym <= 1e-10);
    }
}
