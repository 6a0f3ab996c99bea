//! Grids, two-component fields, quadrature, differentiation and ODE integration.

use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{NlsError, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Collocation,
    Periodic,
}

/// Uniform grid on [-half_width, half_width] (collocation) or
/// [-half_width, half_width - dx] (periodic).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub half_width: f64,
    pub n: usize,
    pub dx: f64,
    pub kind: GridKind,
}

pub fn make_grid(half_width: f64, n: usize, kind: GridKind) -> Result<Grid> {
    if n < 16 {
        return Err(NlsError::InvalidArgument(format!(
            "grid needs n >= 16, got {n}"
        )));
    }
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(NlsError::InvalidArgument(format!(
            "half_width must be positive, got {half_width}"
        )));
    }
    if kind == GridKind::Periodic && !n.is_multiple_of(2) {
        return Err(NlsError::InvalidArgument(format!(
            "periodic grid needs even n, got {n}"
        )));
    }
    let dx = match kind {
        GridKind::Collocation => 2.0 * half_width / (n as f64 - 1.0),
        GridKind::Periodic => 2.0 * half_width / n as f64,
    };
    Ok(Grid {
        half_width,
        n,
        dx,
        kind,
    })
}

impl Grid {
    pub fn x(&self, i: usize) -> f64 {
        match self.kind {
            // Symmetric formula so that x_i = -x_{n-1-i} holds exactly.
            GridKind::Collocation => {
                let c = 0.5 * (self.n as f64 - 1.0);
                (i as f64 - c) * self.dx
            }
            GridKind::Periodic => -self.half_width + i as f64 * self.dx,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Trapezoid weights (all equal to dx on a periodic grid).
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.dx; self.n];
        if self.kind == GridKind::Collocation {
            w[0] *= 0.5;
            w[self.n - 1] *= 0.5;
        }
        w
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let s: f64 = f.iter().sum();
        match self.kind {
            GridKind::Collocation => self.dx * (s - 0.5 * (f[0] + f[self.n - 1])),
            GridKind::Periodic => self.dx * s,
        }
    }

    /// Index of the point mirrored through the origin, when the grid has one.
    pub fn mirror(&self, i: usize) -> Option<usize> {
        match self.kind {
            GridKind::Collocation => Some(self.n - 1 - i),
            GridKind::Periodic => {
                if i == 0 {
                    None
                } else {
                    Some(self.n - i)
                }
            }
        }
    }
}

/// A C^2-valued function sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    pub grid: Grid,
    pub v1: Vec<C64>,
    pub v2: Vec<C64>,
}

impl Field2 {
    pub fn zeros(grid: Grid) -> Self {
        Field2 {
            grid,
            v1: vec![C64::new(0.0, 0.0); grid.n],
            v2: vec![C64::new(0.0, 0.0); grid.n],
        }
    }

    pub fn from_fn<F: FnMut(f64) -> (C64, C64)>(grid: Grid, mut f: F) -> Self {
        let (v1, v2) = (0..grid.n).map(|i| f(grid.x(i))).unzip();
        Field2 { grid, v1, v2 }
    }

    pub fn from_real<F: FnMut(f64) -> (f64, f64)>(grid: Grid, mut f: F) -> Self {
        Self::from_fn(grid, |x| {
            let (a, b) = f(x);
            (C64::new(a, 0.0), C64::new(b, 0.0))
        })
    }

    /// Complex scalar stored in the first component.
    pub fn scalar(grid: Grid, u: Vec<C64>) -> Self {
        assert_eq!(u.len(), grid.n);
        Field2 {
            grid,
            v1: u,
            v2: vec![C64::new(0.0, 0.0); grid.n],
        }
    }

    pub fn map<F: Fn(C64) -> C64>(&self, f: F) -> Self {
        Field2 {
            grid: self.grid,
            v1: self.v1.iter().map(|&a| f(a)).collect(),
            v2: self.v2.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|a| a * c)
    }

    pub fn zip_with<F: Fn(C64, C64) -> C64>(&self, other: &Field2, f: F) -> Self {
        assert_eq!(self.grid, other.grid, "field grids differ");
        Field2 {
            grid: self.grid,
            v1: self
                .v1
                .iter()
                .zip(&other.v1)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            v2: self
                .v2
                .iter()
                .zip(&other.v2)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Field2) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field2) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise multiplication of both components by a real profile.
    pub fn mul_real(&self, w: &[f64]) -> Self {
        Field2 {
            grid: self.grid,
            v1: self.v1.iter().zip(w).map(|(&a, &b)| a * b).collect(),
            v2: self.v2.iter().zip(w).map(|(&a, &b)| a * b).collect(),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        let f: Vec<f64> = self
            .v1
            .iter()
            .zip(&self.v2)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .collect();
        self.grid.integrate(&f).max(0.0).sqrt()
    }

    pub fn sup(&self) -> f64 {
        self.v1
            .iter()
            .chain(&self.v2)
            .map(|a| a.norm())
            .fold(0.0, f64::max)
    }

    /// Sup norm restricted to points at least `margin` samples from either end.
    pub fn sup_interior(&self, margin: usize) -> f64 {
        let n = self.grid.n;
        (margin..n.saturating_sub(margin))
            .map(|i| self.v1[i].norm().max(self.v2[i].norm()))
            .fold(0.0, f64::max)
    }

    /// max_i |v(x_i) - v(-x_i)|.
    pub fn even_defect(&self) -> f64 {
        (0..self.grid.n)
            .filter_map(|i| self.grid.mirror(i).map(|j| (i, j)))
            .map(|(i, j)| {
                (self.v1[i] - self.v1[j])
                    .norm()
                    .max((self.v2[i] - self.v2[j]).norm())
            })
            .fold(0.0, f64::max)
    }

    pub fn is_even(&self, rel_tol: f64) -> bool {
        self.even_defect() <= rel_tol * self.sup().max(f64::MIN_POSITIVE)
    }
}

/// Trapezoid approximation of the real pairing ∫ Re(u1 conj v1 + u2 conj v2) dx.
pub fn inner(u: &Field2, v: &Field2) -> Result<f64> {
    if u.grid != v.grid {
        return Err(NlsError::GridMismatch(format!(
            "{:?} vs {:?}",
            u.grid, v.grid
        )));
    }
    let f: Vec<f64> = (0..u.grid.n)
        .map(|i| (u.v1[i] * v.v1[i].conj() + u.v2[i] * v.v2[i].conj()).re)
        .collect();
    Ok(u.grid.integrate(&f))
}

pub fn derivative(u: &Field2, order: usize) -> Result<Field2> {
    if order != 1 && order != 2 {
        return Err(NlsError::InvalidArgument(format!(
            "derivative order must be 1 or 2, got {order}"
        )));
    }
    let g = u.grid;
    let d = |v: &[C64]| match g.kind {
        GridKind::Collocation => {
            if order == 1 {
                fd4_d1(v, g.dx)
            } else {
                fd4_d2(v, g.dx)
            }
        }
        GridKind::Periodic => spectral_derivative(v, g, order),
    };
    Ok(Field2 {
        grid: g,
        v1: d(&u.v1),
        v2: d(&u.v2),
    })
}

/// Fourth-order first derivative with one-sided stencils at both ends.
pub fn fd4_d1<T>(u: &[T], h: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = u.len();
    assert!(n >= 5);
    let s = 1.0 / (12.0 * h);
    let mut d = Vec::with_capacity(n);
    d.push((u[1] * 48.0 - u[0] * 25.0 - u[2] * 36.0 + u[3] * 16.0 - u[4] * 3.0) * s);
    d.push((u[2] * 18.0 - u[0] * 3.0 - u[1] * 10.0 - u[3] * 6.0 + u[4]) * s);
    for i in 2..n - 2 {
        d.push((u[i - 2] - u[i - 1] * 8.0 + u[i + 1] * 8.0 - u[i + 2]) * s);
    }
    d.push((u[n - 1] * 3.0 + u[n - 2] * 10.0 - u[n - 3] * 18.0 + u[n - 4] * 6.0 - u[n - 5]) * s);
    d.push(
        (u[n - 1] * 25.0 - u[n - 2] * 48.0 + u[n - 3] * 36.0 - u[n - 4] * 16.0 + u[n - 5] * 3.0)
            * s,
    );
    d
}

/// Fourth-order second derivative with one-sided stencils at both ends.
pub fn fd4_d2<T>(u: &[T], h: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = u.len();
    assert!(n >= 6);
    let s = 1.0 / (12.0 * h * h);
    let edge0 = |a: &dyn Fn(usize) -> T| {
        (a(0) * 45.0 - a(1) * 154.0 + a(2) * 214.0 - a(3) * 156.0 + a(4) * 61.0 - a(5) * 10.0) * s
    };
    let edge1 = |a: &dyn Fn(usize) -> T| {
        (a(0) * 10.0 - a(1) * 15.0 - a(2) * 4.0 + a(3) * 14.0 - a(4) * 6.0 + a(5)) * s
    };
    let fwd = |k: usize| u[k];
    let bwd = |k: usize| u[n - 1 - k];
    let mut d = Vec::with_capacity(n);
    d.push(edge0(&fwd));
    d.push(edge1(&fwd));
    for i in 2..n - 2 {
        d.push((u[i - 1] * 16.0 + u[i + 1] * 16.0 - u[i] * 30.0 - u[i - 2] - u[i + 2]) * s);
    }
    d.push(edge1(&bwd));
    d.push(edge0(&bwd));
    d
}

/// Spectral derivative on a periodic grid; the Nyquist mode is dropped for odd orders.
pub fn spectral_derivative(u: &[C64], g: Grid, order: usize) -> Vec<C64> {
    let n = u.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf = u.to_vec();
    fwd.process(&mut buf);
    let ks = wavenumbers(g);
    for (j, b) in buf.iter_mut().enumerate() {
        let k = ks[j];
        let m = match order {
            1 => {
                if j == n / 2 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(0.0, k)
                }
            }
            _ => C64::new(-k * k, 0.0),
        };
        *b *= m / n as f64;
    }
    inv.process(&mut buf);
    buf
}

/// FFT wavenumbers in the standard ordering.
pub fn wavenumbers(g: Grid) -> Vec<f64> {
    let n = g.n;
    let l = g.dx * n as f64;
    (0..n)
        .map(|j| {
            let m = if j < n / 2 {
                j as f64
            } else {
                j as f64 - n as f64
            };
            2.0 * std::f64::consts::PI * m / l
        })
        .collect()
}

/// Error control for the Dormand-Prince integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OdeTol {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeTol {
    fn default() -> Self {
        OdeTol {
            rtol: 1e-11,
            atol: 1e-13,
            max_steps: 2_000_000,
        }
    }
}

impl OdeTol {
    pub fn new(tol: f64) -> Self {
        OdeTol {
            rtol: tol,
            atol: tol * 1e-2,
            ..Default::default()
        }
    }
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) stepper over real state vectors.
pub struct Dopri<F: FnMut(f64, &[f64], &mut [f64])> {
    rhs: F,
    tol: OdeTol,
    h: f64,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    ynew: Vec<f64>,
    steps: usize,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Dopri<F> {
    pub fn new(rhs: F, dim: usize, tol: OdeTol) -> Self {
        Dopri {
            rhs,
            tol,
            h: 0.0,
            k: vec![vec![0.0; dim]; 7],
            tmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            steps: 0,
        }
    }

    /// Advance `y` in place from `x0` to `x1` (either direction).
    pub fn advance(&mut self, y: &mut [f64], x0: f64, x1: f64) -> Result<()> {
        let span = x1 - x0;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        if self.h == 0.0 || self.h.signum() != dir {
            self.h = dir * (span.abs() * 1e-2).clamp(1e-6, 0.05);
        }
        let dim = y.len();
        let mut x = x0;
        let hmin = 1e-13 * (1.0 + x0.abs().max(x1.abs()));
        (self.rhs)(x, y, &mut self.k[0]);
        loop {
            let remaining = x1 - x;
            if remaining * dir <= 0.0 {
                return Ok(());
            }
            let mut h = self.h;
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for (j, a) in DP_A[s].iter().enumerate().take(s) {
                        acc += h * a * self.k[j][i];
                    }
                    self.tmp[i] = acc;
                }
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                (self.rhs)(x + DP_C[s] * h, &self.tmp, &mut tail[0]);
            }
            // stage 7 was evaluated at the 5th-order solution (FSAL)
            let mut err = 0.0f64;
            for i in 0..dim {
                let mut yn = y[i];
                let mut e = 0.0;
                for s in 0..7 {
                    yn += h * DP_B[s] * self.k[s][i];
                    e += h * DP_E[s] * self.k[s][i];
                }
                self.ynew[i] = yn;
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(yn.abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                err = 1e10;
            }
            self.steps += 1;
            if self.steps > self.tol.max_steps {
                return Err(NlsError::StepUnderflow { x });
            }
            if err <= 1.0 {
                x = if last { x1 } else { x + h };
                y.copy_from_slice(&self.ynew);
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !last {
                    self.h = h * fac;
                } else {
                    self.h = self.h.abs().max(h.abs() * fac.min(1.0)) * dir;
                }
                if last {
                    return Ok(());
                }
            } else {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                self.h = h * fac;
                if self.h.abs() < hmin {
                    return Err(NlsError::StepUnderflow { x });
                }
            }
        }
    }
}

/// Integrate a real system, returning the state at each output abscissa.
/// Outputs must be ordered in the direction of integration starting from `x0`.
pub fn integrate_real<F>(
    rhs: F,
    y0: &[f64],
    x0: f64,
    outputs: &[f64],
    tol: OdeTol,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut st = Dopri::new(rhs, y0.len(), tol);
    let mut y = y0.to_vec();
    let mut x = x0;
    let mut out = Vec::with_capacity(outputs.len());
    for &xo in outputs {
        st.advance(&mut y, x, xo)?;
        x = xo;
        out.push(y.clone());
    }
    Ok(out)
}

/// Right-hand side y' = F(x, y) over complex state vectors.
pub type ComplexRhs<'a> = dyn Fn(f64, &[C64], &mut [C64]) + Sync + 'a;

pub struct OdeProblem<'a> {
    pub dim: usize,
    pub rhs: Box<ComplexRhs<'a>>,
    pub tol: OdeTol,
}

impl<'a> OdeProblem<'a> {
    pub fn new<F: Fn(f64, &[C64], &mut [C64]) + Sync + 'a>(
        dim: usize,
        rhs: F,
        tol: f64,
    ) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(NlsError::InvalidArgument(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        Ok(OdeProblem {
            dim,
            rhs: Box::new(rhs),
            tol: OdeTol::new(tol),
        })
    }
}

/// Complex states are integrated as interleaved real pairs.
pub fn integrate_ode(problem: &OdeProblem, y0: &[C64], x0: f64, x1: f64) -> Result<Vec<C64>> {
    Ok(integrate_ode_dense(problem, y0, x0, &[x1])?
        .pop()
        .unwrap_or_else(|| y0.to_vec()))
}

pub fn integrate_ode_dense(
    problem: &OdeProblem,
    y0: &[C64],
    x0: f64,
    outputs: &[f64],
) -> Result<Vec<Vec<C64>>> {
    let d = problem.dim;
    assert_eq!(y0.len(), d);
    let mut zin = vec![C64::new(0.0, 0.0); d];
    let mut zout = vec![C64::new(0.0, 0.0); d];
    let rhs = |x: f64, y: &[f64], dy: &mut [f64]| {
        for i in 0..d {
            zin[i] = C64::new(y[2 * i], y[2 * i + 1]);
        }
        (problem.rhs)(x, &zin, &mut zout);
        for i in 0..d {
            dy[2 * i] = zout[i].re;
            dy[2 * i + 1] = zout[i].im;
        }
    };
    let flat: Vec<f64> = y0.iter().flat_map(|c| [c.re, c.im]).collect();
    let res = integrate_real(rhs, &flat, x0, outputs, problem.tol)?;
    Ok(res
        .into_iter()
        .map(|v| v.chunks(2).map(|c| C64::new(c[0], c[1])).collect())
        .collect())
}

/// One leg of a QR-renormalized frame continuation.
#[derive(Clone, Debug)]
pub struct FrameLeg {
    pub x_start: f64,
    pub x_end: f64,
    /// Upper-triangular factor with positive diagonal taken at `x_end`.
    pub r: DMatrix<f64>,
    /// Un-normalized frame samples inside the leg, relative to the orthonormal frame at `x_start`.
    pub samples: Vec<(f64, DMatrix<f64>)>,
}

/// Result of integrating an m-column frame through a sequence of breakpoints.
#[derive(Clone, Debug)]
pub struct FrameRun {
    pub legs: Vec<FrameLeg>,
    pub q_final: DMatrix<f64>,
    /// Sum of log|R_ii| over all legs (log-volume growth of the frame).
    pub log_growth: f64,
}

impl FrameRun {
    /// Given coefficients in the final orthonormal frame, recover the solution
    /// values at every recorded sample, ordered as integrated.
    pub fn reconstruct(&self, c_final: &[f64]) -> Vec<(f64, Vec<f64>)> {
        let m = c_final.len();
        let mut coeffs = vec![nalgebra::DVector::from_column_slice(c_final); self.legs.len() + 1];
        for (s, leg) in self.legs.iter().enumerate().rev() {
            let c = &coeffs[s + 1];
            let sol = leg
                .r
                .clone()
                .solve_upper_triangular(c)
                .unwrap_or_else(|| nalgebra::DVector::zeros(m));
            coeffs[s] = sol;
        }
        let mut out = Vec::new();
        for (s, leg) in self.legs.iter().enumerate() {
            for (x, y) in &leg.samples {
                out.push((*x, (y * &coeffs[s]).iter().copied().collect()));
            }
        }
        out
    }
}

/// Integrate the columns of `frame0` (dimension d x m) across `breaks`
/// (breaks[0] is the start), re-orthonormalizing at each breakpoint.
/// `samples` lists abscissas (in integration order) at which frames are recorded.
pub fn continue_frame<F>(
    mut rhs: F,
    frame0: &DMatrix<f64>,
    breaks: &[f64],
    samples: &[f64],
    tol: OdeTol,
) -> Result<FrameRun>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (d, m) = frame0.shape();
    let qr0 = frame0.clone().qr();
    let mut q = fix_signs(qr0.q(), qr0.r()).0;
    let mut legs = Vec::with_capacity(breaks.len());
    let mut log_growth = 0.0;
    let mut si = 0;
    let mut col_in = vec![0.0; d];
    let mut col_out = vec![0.0; d];
    let mut frame_rhs = |x: f64, y: &[f64], dy: &mut [f64]| {
        for c in 0..m {
            col_in.copy_from_slice(&y[c * d..(c + 1) * d]);
            rhs(x, &col_in, &mut col_out);
            dy[c * d..(c + 1) * d].copy_from_slice(&col_out);
        }
    };
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dir = (b - a).signum();
        let mut outs = Vec::new();
        while si < samples.len() && (samples[si] - b) * dir <= 1e-12 {
            if (samples[si] - a) * dir >= -1e-12 {
                outs.push(samples[si]);
            }
            si += 1;
        }
        let mut pts = outs.clone();
        pts.push(b);
        let flat: Vec<f64> = q.as_slice().to_vec();
        let res = integrate_real(&mut frame_rhs, &flat, a, &pts, tol)?;
        let leg_samples = outs
            .iter()
            .zip(&res)
            .map(|(&x, v)| (x, DMatrix::from_column_slice(d, m, v)))
            .collect();
        let y_end = DMatrix::from_column_slice(d, m, res.last().unwrap());
        let qr = y_end.qr();
        let (qn, rn) = fix_signs(qr.q(), qr.r());
        for i in 0..m {
            log_growth += rn[(i, i)].abs().ln();
        }
        legs.push(FrameLeg {
            x_start: a,
            x_end: b,
            r: rn,
            samples: leg_samples,
        });
        q = qn;
    }
    Ok(FrameRun {
        legs,
        q_final: q,
        log_growth,
    })
}

fn fix_signs(q: DMatrix<f64>, r: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = r.nrows();
    let mut q = q;
    let mut r = r;
    for i in 0..m {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Breakpoints from `x0` to `x1` spaced at most `step` apart, both ends included.
pub fn breakpoints(x0: f64, x1: f64, step: f64) -> Vec<f64> {
    let n = ((x1 - x0).abs() / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| x0 + (x1 - x0) * i as f64 / n as f64)
        .collect()
}

/// Columns sampled on a uniform half-line grid x_i = x0 + i h (x0 = 0 or h/2),
/// with a parity per column, evaluated anywhere by 6-point Lagrange interpolation.
#[derive(Clone, Debug)]
pub struct EvenTable {
    pub h: f64,
    pub half_offset: bool,
    pub cols: Vec<Vec<f64>>,
    pub parity: Vec<f64>,
}

impl EvenTable {
    pub fn new(h: f64, half_offset: bool, cols: Vec<Vec<f64>>, parity: Vec<f64>) -> Self {
        assert_eq!(cols.len(), parity.len());
        assert!(cols.iter().all(|c| c.len() >= 8));
        EvenTable {
            h,
            half_offset,
            cols,
            parity,
        }
    }

    pub fn len(&self) -> usize {
        self.cols[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty() || self.cols[0].is_empty()
    }

    pub fn x0(&self) -> f64 {
        if self.half_offset {
            0.5 * self.h
        } else {
            0.0
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x0() + self.h * i as f64
    }

    pub fn x_max(&self) -> f64 {
        self.node(self.len() - 1)
    }

    fn at(&self, c: usize, i: isize) -> f64 {
        if i < 0 {
            let j = if self.half_offset { -i - 1 } else { -i };
            self.parity[c] * self.cols[c][j as usize]
        } else {
            self.cols[c][i as usize]
        }
    }

    /// Interpolated value of column `c` at `x`; beyond the last sample the
    /// end stencil extrapolates.
    pub fn eval(&self, c: usize, x: f64) -> f64 {
        let (sgn, ax) = if x < 0.0 {
            (self.parity[c], -x)
        } else {
            (1.0, x)
        };
        let t = (ax - self.x0()) / self.h;
        let n = self.len() as isize;
        let mut i0 = t.floor() as isize - 2;
        if i0 + 5 > n - 1 {
            i0 = n - 6;
        }
        let mut v = 0.0;
        for a in 0..6 {
            let xa = (i0 + a) as f64;
            let mut l = 1.0;
            for b in 0..6 {
                if a != b {
                    let xb = (i0 + b) as f64;
                    l *= (t - xb) / (xa - xb);
                }
            }
            v += l * self.at(c, i0 + a);
        }
        sgn * v
    }

    /// Sixth-order derivative of column `c` at the nodes, using the parity
    /// to mirror through the origin and one-sided stencils at the far end.
    pub fn d1_nodes(&self, c: usize) -> Vec<f64> {
        let n = self.len();
        let h = self.h;
        let f = |i: isize| self.at(c, i);
        let mut d = Vec::with_capacity(n);
        for i in 0..n as isize {
            if i + 3 < n as isize {
                d.push(
                    (-f(i - 3) + 9.0 * f(i - 2) - 45.0 * f(i - 1) + 45.0 * f(i + 1)
                        - 9.0 * f(i + 2)
                        + f(i + 3))
                        / (60.0 * h),
                );
            } else {
                // backward 7-point stencil
                let w = [-147.0, 360.0, -450.0, 400.0, -225.0, 72.0, -10.0];
                let mut s = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    s += wk * f(i - k as isize);
                }
                d.push(-s / (60.0 * h));
            }
        }
        d
    }
}

/// Brent root finder on a sign-changing bracket.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NlsError::NoRootInBracket(format!(
            "f({a}) = {fa:e}, f({b}) = {fb:e}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b);
    }
    Err(NlsError::NoConvergence {
        iterations: max_iter,
        last_change: d.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    #[test]
    fn grid_rejects_small_n() {
        assert!(matches!(
            make_grid(40.0, 5, GridKind::Collocation),
            Err(NlsError::InvalidArgument(_))
        ));
        assert!(make_grid(0.0, 64, GridKind::Collocation).is_err());
    }

    #[test]
    fn grid_spacing() {
        let g = make_grid(40.0, 4096, GridKind::Collocation).unwrap();
        assert_eq!(g.dx, 80.0 / 4095.0);
        assert_eq!(g.x(0), -g.x(4095));
        assert!((g.x(4095) - 40.0).abs() < 1e-12);
        let p = make_grid(60.0, 8192, GridKind::Periodic).unwrap();
        assert_eq!(p.dx, 120.0 / 8192.0);
        assert_eq!(p.x(0), -60.0);
    }

    #[test]
    fn inner_examples() {
        let g = make_grid(40.0, 4096, GridKind::Collocation).unwrap();
        let z = Field2::zeros(g);
        assert_eq!(inner(&z, &z).unwrap(), 0.0);
        let a = Field2::from_real(g, |x| (2f64.sqrt() * sech(x), 0.0));
        let b = Field2::from_real(g, |x| (0.0, 2f64.sqrt() * sech(x)));
        assert_eq!(inner(&a, &b).unwrap(), 0.0);
        let s = Field2::from_real(g, |x| (sech(x), 0.0));
        assert!((inner(&s, &s).unwrap() - 2.0).abs() < 1e-8);
        let h = make_grid(20.0, 64, GridKind::Collocation).unwrap();
        assert!(matches!(
            inner(&s, &Field2::zeros(h)),
            Err(NlsError::GridMismatch(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let g = make_grid(8.0, 801, GridKind::Collocation).unwrap();
        assert!((g.dx - 0.02).abs() < 1e-15);
        let c = Field2::from_real(g, |_| (3.0, -1.0));
        assert!(derivative(&c, 1).unwrap().sup() < 1e-10);
        assert!(derivative(&c, 2).unwrap().sup() < 1e-10);
        let s = Field2::from_real(g, |x| (x.sin(), 0.0));
        let ds = derivative(&s, 1).unwrap();
        let exact = Field2::from_real(g, |x| (x.cos(), 0.0));
        assert!(ds.sub(&exact).sup() < 1e-6, "{}", ds.sub(&exact).sup());
        let q = Field2::from_real(g, |x| (sech(x), 0.0));
        let d2 = derivative(&q, 2).unwrap();
        let exact2 = Field2::from_real(g, |x| (sech(x) - 2.0 * sech(x).powi(3), 0.0));
        assert!(d2.sub(&exact2).sup() < 1e-5, "{}", d2.sub(&exact2).sup());
        assert!(derivative(&q, 3).is_err());
    }

    #[test]
    fn spectral_derivative_periodic() {
        let g = make_grid(30.0, 512, GridKind::Periodic).unwrap();
        let q = Field2::from_real(g, |x| (sech(x), 0.0));
        let d1 = derivative(&q, 1).unwrap();
        let e1 = Field2::from_real(g, |x| (-sech(x) * x.tanh(), 0.0));
        assert!(d1.sub(&e1).sup() < 1e-10);
        let d2 = derivative(&q, 2).unwrap();
        let e2 = Field2::from_real(g, |x| (sech(x) - 2.0 * sech(x).powi(3), 0.0));
        assert!(d2.sub(&e2).sup() < 1e-10);
    }

    #[test]
    fn ode_examples() {
        let p = OdeProblem::new(1, |_x, y: &[C64], dy: &mut [C64]| dy[0] = y[0], 1e-11).unwrap();
        let y = integrate_ode(&p, &[C64::new(1.0, 0.0)], 0.0, 1.0).unwrap();
        assert!((y[0].re - std::f64::consts::E).abs() < 1e-8);
        let z = OdeProblem::new(
            2,
            |_x, _y: &[C64], dy: &mut [C64]| dy.fill(C64::new(0.0, 0.0)),
            1e-10,
        )
        .unwrap();
        let y0 = [C64::new(0.3, -0.2), C64::new(1.5, 0.0)];
        assert_eq!(integrate_ode(&z, &y0, 0.0, 3.0).unwrap(), y0.to_vec());
        let osc = OdeProblem::new(
            2,
            |_x, y: &[C64], dy: &mut [C64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            1e-11,
        )
        .unwrap();
        let y = integrate_ode(
            &osc,
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            0.0,
            2.0 * std::f64::consts::PI,
        )
        .unwrap();
        assert!((y[0].re - 1.0).abs() < 1e-7 && y[1].norm() < 1e-7);
        assert!(OdeProblem::new(1, |_x, _y: &[C64], _d: &mut [C64]| {}, 0.0).is_err());
    }

    #[test]
    fn ode_backward_and_dense() {
        let out = integrate_real(
            |_x, y: &[f64], dy: &mut [f64]| dy[0] = -2.0 * y[0],
            &[1.0],
            1.0,
            &[0.5, 0.0, -1.0],
            OdeTol::default(),
        )
        .unwrap();
        for (o, x) in out.iter().zip([0.5f64, 0.0, -1.0]) {
            assert!((o[0] - (-2.0 * (x - 1.0)).exp()).abs() < 1e-9 * o[0]);
        }
    }

    #[test]
    fn frame_continuation_recovers_solution() {
        // u'' = u, columns e^{x} and e^{-x}; integrate leftward from 10 to 0
        let f0 = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let br = breakpoints(10.0, 0.0, 1.0);
        let run = continue_frame(
            |_x, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = y[0];
            },
            &f0,
            &br,
            &[5.0, 2.5],
            OdeTol::default(),
        )
        .unwrap();
        // The frame spans the full 2D space, so both columns are retained; check
        // that reconstruction of an arbitrary final combination is a solution.
        let c = [0.3, -0.7];
        let vals = run.reconstruct(&c);
        let fin = &run.q_final * nalgebra::DVector::from_column_slice(&c);
        let a = 0.5 * (fin[0] + fin[1]);
        let b = 0.5 * (fin[0] - fin[1]);
        for (x, v) in vals {
            let exact = a * x.exp() + b * (-x).exp();
            assert!(
                (v[0] - exact).abs() < 1e-8 * (1.0 + exact.abs()),
                "{x} {} {exact}",
                v[0]
            );
        }
    }

    #[test]
    fn even_table_interpolation() {
        let h = 0.05;
        let c0: Vec<f64> = (0..400).map(|i| (i as f64 * h).cos()).collect();
        let c1: Vec<f64> = (0..400).map(|i| (i as f64 * h).sin()).collect();
        let t = EvenTable::new(h, false, vec![c0, c1], vec![1.0, -1.0]);
        for &x in &[-3.21, -0.01, 0.0, 0.037, 7.77, 19.9] {
            assert!((t.eval(0, x) - f64::cos(x)).abs() < 1e-9);
            assert!((t.eval(1, x) - f64::sin(x)).abs() < 1e-9);
        }
        let c2: Vec<f64> = (0..400).map(|i| ((i as f64 + 0.5) * h).cos()).collect();
        let t2 = EvenTable::new(h, true, vec![c2], vec![1.0]);
        for &x in &[-3.21, -0.01, 0.0, 0.037, 7.77] {
            assert!((t2.eval(0, x) - f64::cos(x)).abs() < 1e-9);
        }
        let d = t2.d1_nodes(0);
        for (i, di) in d.iter().enumerate() {
            assert!((di + t2.node(i).sin()).abs() < 1e-7, "{i}");
        }
    }

    #[test]
    fn brent_finds_root() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(brent(|x| x * x + 1.0, 0.0, 1.0, 1e-12, 50).is_err());
    }
}
