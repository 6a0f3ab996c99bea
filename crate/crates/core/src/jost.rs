//! Jost solutions of H u = (1 + k^2) u at omega = 1, the Wronskian matrix
//! D(k), the resolvent kernel on the continuous spectrum and the even-sector
//! Evans determinant in the gap.
//!
//! In the variables of H the equation reads u'' = (diag(-k^2, 2 + k^2) + phi^{p-1} M) u
//! with M = -(1/2) [[p+1, p-1], [p-1, p+1]], a symmetric system, so the
//! bilinear Wronskian W[f, g] = f'.g - f.g' is conserved.

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::numerics::{breakpoints, continue_frame, integrate_ode_dense, OdeProblem, OdeTol, C64};
use crate::profile::Params;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Index of a Jost solution: f1 ~ e^{ikx} e1, f2 ~ e^{-ikx} e1,
/// f3 ~ e^{-mu x} e2, f4~ ~ e^{mu x} e2 as x -> +inf, mu = sqrt(2 + k^2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum JostIndex {
    F1,
    F2,
    F3,
    F4Tilde,
}

impl JostIndex {
    pub const ALL: [JostIndex; 4] = [
        JostIndex::F1,
        JostIndex::F2,
        JostIndex::F3,
        JostIndex::F4Tilde,
    ];

    fn idx(self) -> usize {
        self as usize
    }
}

/// How f1 is fixed. The bound |m1 - e1| <= C e^{-(p-1)x} leaves f1 free up to
/// multiples of f3 once sqrt(2 + k^2) >= p - 1, and the low-energy integral
/// equation selects the member for which D(k) is diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum JostNormalization {
    /// Pure exponential series at +inf.
    Asymptotic,
    /// f1 <- f1 - (D12 / D22) f3.
    LowEnergy,
}

/// Value and derivative of a C^2-valued solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JostValue {
    pub u: [C64; 2],
    pub up: [C64; 2],
}

impl JostValue {
    fn zero() -> Self {
        JostValue {
            u: [c(0.0); 2],
            up: [c(0.0); 2],
        }
    }

    fn axpy(&mut self, a: C64, o: &JostValue) {
        for i in 0..2 {
            self.u[i] += a * o.u[i];
            self.up[i] += a * o.up[i];
        }
    }

    /// The reflected solution x -> u(-x) evaluated at -x.
    fn reflect(&self) -> Self {
        JostValue {
            u: self.u,
            up: [-self.up[0], -self.up[1]],
        }
    }
}

/// W[f, g] = f'.g - f.g' (no conjugation).
pub fn wronskian(f: &JostValue, g: &JostValue) -> C64 {
    f.up[0] * g.u[0] + f.up[1] * g.u[1] - f.u[0] * g.up[0] - f.u[1] * g.up[1]
}

fn m_matrix(p: f64) -> Matrix2<f64> {
    Matrix2::new(
        -0.5 * (p + 1.0),
        -0.5 * (p - 1.0),
        -0.5 * (p - 1.0),
        -0.5 * (p + 1.0),
    )
}

/// Expansion f = e^{lam0 x} sum a_n q^n (+ x-linear part at k = 0), q = e^{-(p-1) x}.
#[derive(Clone, Debug)]
struct Series {
    lam0: C64,
    beta: f64,
    a: Vec<[C64; 2]>,
    /// Coefficients b_n of the second k = 0 solution f2 = x m + sum b_n q^n.
    b: Option<Vec<[C64; 2]>>,
}

const SERIES_TERMS: usize = 90;

impl Series {
    fn new(p: f64, k: f64, j: JostIndex) -> Result<Self> {
        let beta = p - 1.0;
        let mu = (2.0 + k * k).sqrt();
        let mm = m_matrix(p);
        let v = |m: usize| 2.0 * (p + 1.0) * if m % 2 == 1 { 1.0 } else { -1.0 } * m as f64;
        let lam0 = match j {
            JostIndex::F1 => I * k,
            JostIndex::F2 => -I * k,
            JostIndex::F3 => c(-mu),
            JostIndex::F4Tilde => c(mu),
        };
        let e0 = match j {
            JostIndex::F1 | JostIndex::F2 => [c(1.0), c(0.0)],
            _ => [c(0.0), c(1.0)],
        };
        let apply = |x: &[C64; 2]| {
            [
                x[0] * mm[(0, 0)] + x[1] * mm[(0, 1)],
                x[0] * mm[(1, 0)] + x[1] * mm[(1, 1)],
            ]
        };
        let mut a = vec![e0];
        for n in 1..SERIES_TERMS {
            let e = lam0 - beta * n as f64;
            let mut rhs = [c(0.0); 2];
            for m in 1..=n {
                let t = apply(&a[n - m]);
                rhs[0] += t[0] * v(m);
                rhs[1] += t[1] * v(m);
            }
            let d = [e * e + k * k, e * e - mu * mu];
            let mut an = [c(0.0); 2];
            for ch in 0..2 {
                if d[ch].norm() < 1e-10 {
                    if j == JostIndex::F4Tilde {
                        // the resonant term is a multiple of f3 and is dropped
                        continue;
                    }
                    return Err(NlsError::InvalidArgument(format!(
                        "resonant series for p = {p}, k = {k}; exponent {n}(p - 1) hits a decay rate"
                    )));
                }
                an[ch] = rhs[ch] / d[ch];
            }
            a.push(an);
        }
        let b = if j == JostIndex::F2 && k == 0.0 {
            let mut b = vec![[c(0.0); 2]];
            for n in 1..SERIES_TERMS {
                let nb = beta * n as f64;
                let mut rhs = [a[n][0] * (2.0 * nb), a[n][1] * (2.0 * nb)];
                for m in 1..=n {
                    let t = apply(&b[n - m]);
                    rhs[0] += t[0] * v(m);
                    rhs[1] += t[1] * v(m);
                }
                let d = [nb * nb, nb * nb - mu * mu];
                if d[1].abs() < 1e-10 {
                    return Err(NlsError::InvalidArgument(format!(
                        "resonant k = 0 series for p = {p}"
                    )));
                }
                b.push([rhs[0] / d[0], rhs[1] / d[1]]);
            }
            Some(b)
        } else {
            None
        };
        Ok(Series { lam0, beta, a, b })
    }

    fn eval(&self, x: f64) -> JostValue {
        let q = (-self.beta * x).exp();
        let mut m = [c(0.0); 2];
        let mut mp = [c(0.0); 2];
        let mut qn = 1.0;
        for (n, an) in self.a.iter().enumerate() {
            let e = self.lam0 - self.beta * n as f64;
            for ch in 0..2 {
                m[ch] += an[ch] * qn;
                mp[ch] += an[ch] * e * qn;
            }
            qn *= q;
        }
        let ex = (self.lam0 * x).exp();
        let mut out = JostValue {
            u: [m[0] * ex, m[1] * ex],
            up: [mp[0] * ex, mp[1] * ex],
        };
        if let Some(b) = &self.b {
            // f2 = x m + sum b_n q^n with lam0 = 0
            let mut bs = [c(0.0); 2];
            let mut bp = [c(0.0); 2];
            let mut qn = 1.0;
            for (n, bn) in b.iter().enumerate() {
                for ch in 0..2 {
                    bs[ch] += bn[ch] * qn;
                    bp[ch] -= bn[ch] * (self.beta * n as f64 * qn);
                }
                qn *= q;
            }
            for ch in 0..2 {
                out.up[ch] = m[ch] + mp[ch] * x + bp[ch];
                out.u[ch] = m[ch] * x + bs[ch];
            }
        }
        out
    }
}

/// The four Jost solutions at one (p, k), evaluable on the whole line.
#[derive(Clone, Debug)]
pub struct JostSet {
    pub p: f64,
    pub k: f64,
    /// Matching abscissa: series for x >= x0, integration below.
    pub x0: f64,
    pub normalization: JostNormalization,
    series: Vec<Series>,
    tol: f64,
    /// Row j: coefficients of f_j on the reflected basis g_i(x) = f_i(-x), used for x < 0.
    connection: Matrix4<C64>,
    /// Multiple of f3 added to f1.
    f1_shift: C64,
}

impl JostSet {
    pub fn new(p: f64, k: f64, normalization: JostNormalization) -> Result<Self> {
        Params::unit(p)?;
        if !(k >= 0.0) || !k.is_finite() {
            return Err(NlsError::InvalidArgument(format!(
                "k must be real and >= 0, got {k}"
            )));
        }
        let series = JostIndex::ALL
            .iter()
            .map(|&j| Series::new(p, k, j))
            .collect::<Result<Vec<_>>>()?;
        let mut set = JostSet {
            p,
            k,
            x0: 3.0 / (p - 1.0),
            normalization: JostNormalization::Asymptotic,
            series,
            tol: 1e-13,
            connection: Matrix4::identity(),
            f1_shift: c(0.0),
        };
        set.connection = set.build_connection()?;
        if normalization == JostNormalization::LowEnergy {
            let d = set.d_matrix();
            if d[(1, 1)].norm() == 0.0 {
                return Err(NlsError::Singular("D22 = 0".into()));
            }
            set.f1_shift = -d[(0, 1)] / d[(1, 1)];
            set.normalization = normalization;
        }
        Ok(set)
    }

    fn rhs(&self) -> impl Fn(f64, &[C64], &mut [C64]) + Sync + '_ {
        let p = self.p;
        let k2 = self.k * self.k;
        let mm = m_matrix(p);
        let params = Params::unit(p).unwrap();
        move |x: f64, y: &[C64], dy: &mut [C64]| {
            let v = params.potential(x);
            dy[0] = y[2];
            dy[1] = y[3];
            dy[2] = (-k2 + v * mm[(0, 0)]) * y[0] + v * mm[(0, 1)] * y[1];
            dy[3] = v * mm[(1, 0)] * y[0] + (2.0 + k2 + v * mm[(1, 1)]) * y[1];
        }
    }

    /// Raw solution j (asymptotic normalization) at points x >= 0.
    fn raw_right(&self, j: usize, xs: &[f64]) -> Result<Vec<JostValue>> {
        let mut out = vec![JostValue::zero(); xs.len()];
        let mut inside: Vec<(usize, f64)> = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            if x >= self.x0 {
                out[i] = self.series[j].eval(x);
            } else {
                inside.push((i, x));
            }
        }
        if !inside.is_empty() {
            inside.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let start = self.series[j].eval(self.x0);
            let y0 = [start.u[0], start.u[1], start.up[0], start.up[1]];
            let problem = OdeProblem::new(4, self.rhs(), self.tol)?;
            let pts: Vec<f64> = inside.iter().map(|a| a.1).collect();
            let sol = integrate_ode_dense(&problem, &y0, self.x0, &pts)?;
            for ((i, _), y) in inside.iter().zip(sol) {
                out[*i] = JostValue {
                    u: [y[0], y[1]],
                    up: [y[2], y[3]],
                };
            }
        }
        Ok(out)
    }

    fn build_connection(&self) -> Result<Matrix4<C64>> {
        let at0: Vec<JostValue> = (0..4)
            .map(|j| self.raw_right(j, &[0.0]).map(|v| v[0]))
            .collect::<Result<_>>()?;
        // column i: g_i at 0 = (f_i(0), -f_i'(0))
        let mut g = Matrix4::<C64>::zeros();
        for i in 0..4 {
            let r = at0[i].reflect();
            g[(0, i)] = r.u[0];
            g[(1, i)] = r.u[1];
            g[(2, i)] = r.up[0];
            g[(3, i)] = r.up[1];
        }
        let lu = g.lu();
        let mut conn = Matrix4::<C64>::zeros();
        for j in 0..4 {
            let rhs = Vector4::new(at0[j].u[0], at0[j].u[1], at0[j].up[0], at0[j].up[1]);
            let cj = lu
                .solve(&rhs)
                .ok_or_else(|| NlsError::Singular("reflected Jost basis".into()))?;
            for i in 0..4 {
                conn[(j, i)] = cj[i];
            }
        }
        Ok(conn)
    }

    fn raw(&self, j: usize, xs: &[f64]) -> Result<Vec<JostValue>> {
        let mut out = vec![JostValue::zero(); xs.len()];
        let pos: Vec<(usize, f64)> = xs
            .iter()
            .copied()
            .enumerate()
            .filter(|a| a.1 >= 0.0)
            .collect();
        let neg: Vec<(usize, f64)> = xs
            .iter()
            .copied()
            .enumerate()
            .filter(|a| a.1 < 0.0)
            .collect();
        if !pos.is_empty() {
            let v = self.raw_right(j, &pos.iter().map(|a| a.1).collect::<Vec<_>>())?;
            for ((i, _), val) in pos.iter().zip(v) {
                out[*i] = val;
            }
        }
        if !neg.is_empty() {
            let mx: Vec<f64> = neg.iter().map(|a| -a.1).collect();
            for b in 0..4 {
                let cb = self.connection[(j, b)];
                if cb == c(0.0) {
                    continue;
                }
                let v = self.raw_right(b, &mx)?;
                for ((i, _), val) in neg.iter().zip(v) {
                    out[*i].axpy(cb, &val.reflect());
                }
            }
        }
        Ok(out)
    }

    /// f_j at the given points, in the set's normalization.
    pub fn eval(&self, j: JostIndex, xs: &[f64]) -> Result<Vec<JostValue>> {
        if j == JostIndex::F1 && self.normalization == JostNormalization::LowEnergy {
            return self.eval_low_energy_f1(xs);
        }
        self.raw(j.idx(), xs)
    }

    /// f1 + s f3 with W[f1 + s f3, g3] = 0, so its g4~ component on x < 0 vanishes
    /// identically and is dropped rather than left to amplify roundoff.
    fn eval_low_energy_f1(&self, xs: &[f64]) -> Result<Vec<JostValue>> {
        let mut out = vec![JostValue::zero(); xs.len()];
        let pos: Vec<(usize, f64)> = xs
            .iter()
            .copied()
            .enumerate()
            .filter(|a| a.1 >= 0.0)
            .collect();
        let neg: Vec<(usize, f64)> = xs
            .iter()
            .copied()
            .enumerate()
            .filter(|a| a.1 < 0.0)
            .collect();
        if !pos.is_empty() {
            let px: Vec<f64> = pos.iter().map(|a| a.1).collect();
            let f1 = self.raw_right(0, &px)?;
            let f3 = self.raw_right(2, &px)?;
            for (((i, _), a), b) in pos.iter().zip(f1).zip(f3) {
                out[*i] = a;
                out[*i].axpy(self.f1_shift, &b);
            }
        }
        if !neg.is_empty() {
            let mx: Vec<f64> = neg.iter().map(|a| -a.1).collect();
            for b in 0..3 {
                let cb = self.connection[(0, b)] + self.f1_shift * self.connection[(2, b)];
                let v = self.raw_right(b, &mx)?;
                for ((i, _), val) in neg.iter().zip(v) {
                    out[*i].axpy(cb, &val.reflect());
                }
            }
        }
        Ok(out)
    }

    /// g_j(x) = f_j(-x).
    pub fn eval_reflected(&self, j: JostIndex, xs: &[f64]) -> Result<Vec<JostValue>> {
        let mx: Vec<f64> = xs.iter().map(|x| -x).collect();
        Ok(self
            .eval(j, &mx)?
            .into_iter()
            .map(|v| v.reflect())
            .collect())
    }

    pub fn at(&self, j: JostIndex, x: f64) -> Result<JostValue> {
        Ok(self.eval(j, &[x])?[0])
    }

    /// D = W[F1, G2] with F1 = (f1, f3), G2 = (g1, g3), evaluated at x = 0.
    pub fn d_matrix(&self) -> Matrix2<C64> {
        self.d_matrix_at(0.0)
            .expect("Jost values at 0 were computed at construction")
    }

    pub fn d_matrix_at(&self, x: f64) -> Result<Matrix2<C64>> {
        let f = [self.at(JostIndex::F1, x)?, self.at(JostIndex::F3, x)?];
        let g = [
            self.eval_reflected(JostIndex::F1, &[x])?[0],
            self.eval_reflected(JostIndex::F3, &[x])?[0],
        ];
        Ok(Matrix2::new(
            wronskian(&f[0], &g[0]),
            wronskian(&f[0], &g[1]),
            wronskian(&f[1], &g[0]),
            wronskian(&f[1], &g[1]),
        ))
    }

    /// Coefficients (c1, c2) with f4 = -c1 f1 - c2 f2 + f4~ and W[f1, f4] = W[f2, f4] = 0.
    pub fn f4_coefficients(&self) -> Result<(C64, C64)> {
        if self.k == 0.0 {
            return Err(NlsError::InvalidArgument("f4 needs k > 0".into()));
        }
        let v: Vec<JostValue> = (0..4)
            .map(|j| self.raw_right(j, &[0.0]).map(|v| v[0]))
            .collect::<Result<_>>()?;
        let w12 = wronskian(&v[0], &v[1]);
        let c2 = wronskian(&v[0], &v[3]) / w12;
        let c1 = wronskian(&v[1], &v[3]) / -w12;
        Ok((c1, c2))
    }
}

/// A single Jost solution bundled with its set.
#[derive(Clone, Debug)]
pub struct JostSolution {
    pub set: JostSet,
    pub j: JostIndex,
}

impl JostSolution {
    pub fn eval(&self, xs: &[f64]) -> Result<Vec<JostValue>> {
        self.set.eval(self.j, xs)
    }
}

pub fn jost_solve(
    p: f64,
    k: f64,
    j: JostIndex,
    normalization: JostNormalization,
) -> Result<JostSolution> {
    Ok(JostSolution {
        set: JostSet::new(p, k, normalization)?,
        j,
    })
}

/// D(k) with its determinant and Wronskian constancy over [-5, 5].
#[derive(Clone, Debug, Serialize)]
pub struct WronskianData {
    pub p: f64,
    pub k: f64,
    #[serde(skip)]
    pub d: Matrix2<C64>,
    pub det_re: f64,
    pub det_im: f64,
    /// max over x in [-5, 5] of |D(x) - D(0)| / |D(0)|.
    pub constancy: f64,
}

impl WronskianData {
    pub fn det(&self) -> C64 {
        C64::new(self.det_re, self.det_im)
    }
}

fn mat_norm(d: &Matrix2<C64>) -> f64 {
    d.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn wronskian_d(p: f64, k: f64, normalization: JostNormalization) -> Result<WronskianData> {
    let set = JostSet::new(p, k, normalization)?;
    let d = set.d_matrix();
    let nd = mat_norm(&d);
    let mut constancy: f64 = 0.0;
    for i in 0..=10 {
        let x = -5.0 + i as f64;
        let dx = set.d_matrix_at(x)?;
        constancy = constancy.max(mat_norm(&(dx - d)) / nd);
    }
    let det = d.determinant();
    Ok(WronskianData {
        p,
        k,
        d,
        det_re: det.re,
        det_im: det.im,
        constancy,
    })
}

/// W[f3(., 0), g3(., 0)] at x = 0.
pub fn resonance_wronskian(p: f64) -> Result<C64> {
    let set = JostSet::new(p, 0.0, JostNormalization::Asymptotic)?;
    let f = set.at(JostIndex::F3, 0.0)?;
    Ok(wronskian(&f, &f.reflect()))
}

/// One evaluation of the resolvent kernel of H.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResolventSample {
    pub p: f64,
    pub e: f64,
    pub x: f64,
    pub y: f64,
    #[serde(skip)]
    pub kernel: Matrix2<C64>,
    /// Frobenius norm of the kernel over (1 + x^- + y^+) for x >= y, (1 + x^+ + y^-) otherwise.
    pub weight_ratio: f64,
}

/// Resolvent kernel R^+(x, y, E) for |E| >= 1 on a set of points, sharing one Jost set.
pub struct Resolvent {
    pub p: f64,
    pub e: f64,
    set: JostSet,
    dinv: Matrix2<C64>,
}

fn columns(a: &JostValue, b: &JostValue) -> Matrix2<C64> {
    Matrix2::new(a.u[0], b.u[0], a.u[1], b.u[1])
}

impl Resolvent {
    pub fn new(p: f64, e: f64) -> Result<Self> {
        if !(e.abs() >= 1.0) {
            return Err(NlsError::InvalidArgument(format!(
                "|E| must be >= 1, got {e}"
            )));
        }
        let k = (e.abs() - 1.0).sqrt();
        let set = JostSet::new(p, k, JostNormalization::LowEnergy)?;
        let mut d = set.d_matrix();
        // D is diagonal in this normalization; the roundoff left off the diagonal
        // would multiply f3(x) g1(y), which grows like e^{mu |x|} for x < 0
        d[(0, 1)] = c(0.0);
        d[(1, 0)] = c(0.0);
        let det = d.determinant();
        let floor = 1e-8 * mat_norm(&d).powi(2);
        if det.norm() < floor {
            return Err(NlsError::NearSingularD {
                det: det.norm(),
                floor,
            });
        }
        let dinv = d
            .try_inverse()
            .ok_or_else(|| NlsError::Singular("D(k)".into()))?;
        Ok(Resolvent { p, e, set, dinv })
    }

    fn plus(&self, x: f64, y: f64) -> Result<Matrix2<C64>> {
        let s3 = Matrix2::new(c(1.0), c(0.0), c(0.0), c(-1.0));
        let f = |z: f64| -> Result<Matrix2<C64>> {
            Ok(columns(
                &self.set.at(JostIndex::F1, z)?,
                &self.set.at(JostIndex::F3, z)?,
            ))
        };
        let g = |z: f64| -> Result<Matrix2<C64>> {
            let a = self.set.eval_reflected(JostIndex::F1, &[z])?[0];
            let b = self.set.eval_reflected(JostIndex::F3, &[z])?[0];
            Ok(columns(&a, &b))
        };
        Ok(if x >= y {
            -(f(x)? * self.dinv * g(y)?.transpose() * s3)
        } else {
            -(g(x)? * self.dinv * f(y)?.transpose() * s3)
        })
    }

    pub fn kernel(&self, x: f64, y: f64) -> Result<ResolventSample> {
        let k = if self.e >= 1.0 {
            self.plus(x, y)?
        } else {
            let s1 = Matrix2::new(c(0.0), c(1.0), c(1.0), c(0.0));
            -(s1 * self.plus(x, y)? * s1)
        };
        let neg = |t: f64| (-t).max(0.0);
        let pos = |t: f64| t.max(0.0);
        let w = if x >= y {
            1.0 + neg(x) + pos(y)
        } else {
            1.0 + pos(x) + neg(y)
        };
        Ok(ResolventSample {
            p: self.p,
            e: self.e,
            x,
            y,
            kernel: k,
            weight_ratio: mat_norm(&k) / w,
        })
    }
}

pub fn resolvent_kernel(p: f64, e: f64, x: f64, y: f64) -> Result<ResolventSample> {
    Resolvent::new(p, e)?.kernel(x, y)
}

/// Max weight ratio over the square grid of points `xs` x `xs`.
pub fn resolvent_scan(p: f64, e: f64, xs: &[f64]) -> Result<f64> {
    let r = Resolvent::new(p, e)?;
    let s3 = Matrix2::new(c(1.0), c(0.0), c(0.0), c(-1.0));
    let f1 = r.set.eval(JostIndex::F1, xs)?;
    let f3 = r.set.eval(JostIndex::F3, xs)?;
    let g1 = r.set.eval_reflected(JostIndex::F1, xs)?;
    let g3 = r.set.eval_reflected(JostIndex::F3, xs)?;
    let mut best: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in xs.iter().enumerate() {
            let k = if x >= y {
                -(columns(&f1[i], &f3[i]) * r.dinv * columns(&g1[j], &g3[j]).transpose() * s3)
            } else {
                -(columns(&g1[i], &g3[i]) * r.dinv * columns(&f1[j], &f3[j]).transpose() * s3)
            };
            let w = if x >= y {
                1.0 + (-x).max(0.0) + y.max(0.0)
            } else {
                1.0 + x.max(0.0) + (-y).max(0.0)
            };
            best = best.max(mat_norm(&k) / w);
        }
    }
    Ok(best)
}

/// Even-sector Evans determinant of the gap problem L_+ u = lambda v, L_- v = lambda u
/// at frequency omega: integrate the two solutions decaying at +inf down to 0
/// and return the determinant of their derivative values there.
pub fn evans_gap(params: &Params, lambda: f64, eps_gap: f64) -> Result<f64> {
    let w = params.omega;
    if !(lambda > 0.0) || lambda > w * (1.0 - eps_gap) {
        return Err(NlsError::GapTooCloseToThreshold(1.0 - lambda / w));
    }
    let a = (w - lambda).sqrt();
    let b = (w + lambda).sqrt();
    let x_far = 30.0f64.max(10.0 / a);
    // beyond x_cut the potential is below 1e-17 and the exponential data are exact
    let x_cut = 20.0 / (params.b() * w.sqrt());
    let xs = x_far.min(x_cut);
    let p = params.p;
    let pr = *params;
    let rhs = move |x: f64, y: &[f64], dy: &mut [f64]| {
        let v = pr.potential(x);
        dy[0] = y[2];
        dy[1] = y[3];
        dy[2] = (w - p * v) * y[0] - lambda * y[1];
        dy[3] = (w - v) * y[1] - lambda * y[0];
    };
    let frame = DMatrix::from_column_slice(4, 2, &[1.0, 1.0, -a, -a, 1.0, -1.0, -b, b]);
    let run = continue_frame(
        rhs,
        &frame,
        &breakpoints(xs, 0.0, 1.0),
        &[],
        OdeTol::new(1e-11),
    )?;
    let q = &run.q_final;
    let det = q[(2, 0)] * q[(3, 1)] - q[(2, 1)] * q[(3, 0)];
    Ok(det * run.log_growth.exp())
}

/// Solve the low-energy integral equation for m = e^{-ikx} f1 on [-20, 30]:
/// m1 = 1 - ∫_x^inf D_k(x - y) (U m)_1, D_k(s) = (1 - e^{-2iks}) / (2ik),
/// m2 = -∫ e^{-mu|x-y| - ik(x-y)} / (2 mu) (U m)_2, U = phi^{p-1} M.
/// Returns (x_i, f1(x_i)) on the grid of spacing h.
pub fn low_energy_f1(p: f64, k: f64, h: f64) -> Result<Vec<(f64, [C64; 2])>> {
    let params = Params::unit(p)?;
    let mu = (2.0 + k * k).sqrt();
    let mm = m_matrix(p);
    let (lo, hi) = (-20.0, 30.0);
    let n = ((hi - lo) / h).round() as usize + 1;
    let h = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let support = 23.0 / (p - 1.0);
    let sup: Vec<usize> = (0..n).filter(|&i| xs[i].abs() <= support).collect();
    let m = sup.len();
    let pot: Vec<f64> = sup.iter().map(|&i| params.potential(xs[i])).collect();
    let dk = |s: f64| -> C64 {
        if k == 0.0 {
            c(s)
        } else {
            (c(1.0) - (-2.0 * I * k * s).exp()) / (2.0 * I * k)
        }
    };
    let g2 = |s: f64| -> C64 { (-mu * s.abs() - I * k * s).exp() / (2.0 * mu) };
    // trapezoid weights over the support, the endpoint halves are negligible
    let kink = h * h / 12.0;
    let row = |x: f64, xi: Option<usize>| -> (Vec<C64>, Vec<C64>) {
        // coefficients of (U m)_1 and (U m)_2 at support nodes in the two integrals
        let mut r1 = vec![c(0.0); m];
        let mut r2 = vec![c(0.0); m];
        for (a, &j) in sup.iter().enumerate() {
            let y = xs[j];
            if y >= x {
                let w = if Some(j) == xi { 0.5 * h } else { h };
                r1[a] = dk(x - y) * w;
            }
            r2[a] = g2(x - y) * h;
            if Some(j) == xi {
                r1[a] -= c(kink);
                r2[a] -= c(kink);
            }
        }
        (r1, r2)
    };
    // unknowns: m1, m2 at support nodes
    let mut a = DMatrix::<C64>::identity(2 * m, 2 * m);
    let mut rhs = nalgebra::DVector::<C64>::zeros(2 * m);
    for (r, &i) in sup.iter().enumerate() {
        let (r1, r2) = row(xs[i], Some(i));
        for cidx in 0..m {
            let v = pot[cidx];
            // m1 + ∫ D (U m)_1 = 1
            a[(r, cidx)] += r1[cidx] * (v * mm[(0, 0)]);
            a[(r, m + cidx)] += r1[cidx] * (v * mm[(0, 1)]);
            // m2 + ∫ G (U m)_2 = 0
            a[(m + r, cidx)] += r2[cidx] * (v * mm[(1, 0)]);
            a[(m + r, m + cidx)] += r2[cidx] * (v * mm[(1, 1)]);
        }
        rhs[r] = c(1.0);
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| NlsError::Singular("low-energy integral equation".into()))?;
    let um: Vec<[C64; 2]> = (0..m)
        .map(|cidx| {
            let v = pot[cidx];
            [
                (sol[cidx] * mm[(0, 0)] + sol[m + cidx] * mm[(0, 1)]) * v,
                (sol[cidx] * mm[(1, 0)] + sol[m + cidx] * mm[(1, 1)]) * v,
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for (i, &x) in xs.iter().enumerate() {
        let xi = sup.iter().position(|&j| j == i).map(|_| i);
        let (r1, r2) = row(x, xi);
        let mut m1 = c(1.0);
        let mut m2 = c(0.0);
        for cidx in 0..m {
            m1 -= r1[cidx] * um[cidx][0];
            m2 -= r2[cidx] * um[cidx][1];
        }
        let ph = (I * k * x).exp();
        out.push((x, [m1 * ph, m2 * ph]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::sech;

    fn closed_f1(k: f64, x: f64) -> [C64; 2] {
        let s2 = sech(x).powi(2);
        let e = (I * k * x).exp() / (c(1.0) - I * k).powi(2);
        [
            e * (c(1.0 - k * k - s2) - I * 2.0 * k * x.tanh()),
            e * (-s2),
        ]
    }

    fn closed_f3(k: f64, x: f64) -> [C64; 2] {
        let mu = (2.0 + k * k).sqrt();
        let s2 = sech(x).powi(2);
        let e = (-mu * x).exp() / (mu + 1.0).powi(2);
        [
            c(-s2 * e),
            c((mu * mu + 1.0 + 2.0 * mu * x.tanh() - s2) * e),
        ]
    }

    #[test]
    fn cubic_closed_forms() {
        for &k in &[0.25, 0.5, 1.0, 2.0] {
            let set = JostSet::new(3.0, k, JostNormalization::LowEnergy).unwrap();
            let xs: Vec<f64> = (0..=40).map(|i| -10.0 + 0.5 * i as f64).collect();
            let f1 = set.eval(JostIndex::F1, &xs).unwrap();
            let f3 = set.eval(JostIndex::F3, &xs).unwrap();
            for (i, &x) in xs.iter().enumerate() {
                let a = closed_f1(k, x);
                let b = closed_f3(k, x);
                let sc = (-(2.0 + k * k).sqrt() * x).exp().max(1.0);
                for ch in 0..2 {
                    assert!((f1[i].u[ch] - a[ch]).norm() < 1e-6, "f1 k={k} x={x}");
                    assert!((f3[i].u[ch] - b[ch]).norm() < 1e-6 * sc, "f3 k={k} x={x}");
                }
            }
        }
    }

    #[test]
    fn wronskian_identities() {
        for &p in &[2.9, 3.0, 3.2] {
            for &k in &[0.5, 1.0, 2.0] {
                let set = JostSet::new(p, k, JostNormalization::Asymptotic).unwrap();
                let v: Vec<JostValue> = JostIndex::ALL
                    .iter()
                    .map(|&j| set.at(j, 0.7).unwrap())
                    .collect();
                let w12 = wronskian(&v[0], &v[1]);
                assert!((w12 - I * 2.0 * k).norm() < 1e-6 * 2.0 * k);
                let mu = (2.0 + k * k).sqrt();
                // the conserved form fixed by W[f1, f2] = 2ik gives -2 mu here
                assert!((wronskian(&v[2], &v[3]) + c(2.0 * mu)).norm() < 1e-6 * mu);
                assert!(wronskian(&v[0], &v[2]).norm() < 1e-8);
                assert!(wronskian(&v[1], &v[2]).norm() < 1e-8);
                let (c1, c2) = set.f4_coefficients().unwrap();
                let mut f4 = v[3];
                f4.axpy(-c1, &v[0]);
                f4.axpy(-c2, &v[1]);
                assert!(wronskian(&v[0], &f4).norm() < 1e-8 && wronskian(&v[1], &f4).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn d_matrix_symmetry_and_constancy() {
        for &k in &[0.0, 0.3, 1.0] {
            let w = wronskian_d(2.9, k, JostNormalization::Asymptotic).unwrap();
            assert!(w.constancy < 1e-6, "k={k} constancy {}", w.constancy);
            let n = mat_norm(&w.d);
            assert!((w.d[(0, 1)] - w.d[(1, 0)]).norm() < 1e-6 * n);
        }
    }

    #[test]
    fn evans_scaling_in_omega() {
        let p1 = Params::new(2.6, 1.0).unwrap();
        let p2 = Params::new(2.6, 2.0).unwrap();
        let l1 = crate::internal_mode::evans_root(&p1, 1e-7).unwrap();
        let l2 = crate::internal_mode::evans_root(&p2, 1e-7).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-5, "{l1} {l2}");
    }
}
