//! Split-step evolution of i u_t + u_xx = -|u|^{p-1} u on a periodic grid, the
//! modulation decomposition u = e^{i theta}(phi[omega, z] + eta), and trajectory diagnostics.

use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{NlsError, Result};
use crate::fgr::RadiationMode;
use crate::internal_mode::InternalMode;
use crate::numerics::{spectral_derivative, wavenumbers, Field2, Grid, GridKind, C64};
use crate::profile::{mass_energy, profile_jet, sech, Params, ProfileJet};

/// Newton tolerance on the four orthogonality inner products.
pub const MODULATION_TOL: f64 = 1e-10;
pub const MODULATION_MAX_ITER: usize = 50;

/// Half-width of the core window kept free of wrapped radiation.
pub const CORE_WINDOW: f64 = 20.0;

/// Constants of the weighted norms and functionals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiagnosticConstants {
    /// Scale A of sech(2x/A), zeta_A and chi_A.
    pub a_scale: f64,
    /// Scale B, only constrained by A >= B^2 >= B >= 1.
    pub b_scale: f64,
    pub kappa: f64,
    /// Rate a of the weight e^{-a <x>}.
    pub weight_rate: f64,
}

impl Default for DiagnosticConstants {
    fn default() -> Self {
        DiagnosticConstants {
            a_scale: 8.0,
            b_scale: 2.0,
            kappa: 0.2,
            weight_rate: 0.2,
        }
    }
}

impl DiagnosticConstants {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.a_scale, self.b_scale);
        if !(a >= b * b && b * b >= b && b >= 1.0) {
            return Err(NlsError::InvalidArgument(format!(
                "need A >= B^2 >= B >= 1, got A = {a}, B = {b}"
            )));
        }
        if !(self.kappa > 0.0) || !(self.weight_rate > 0.0) {
            return Err(NlsError::InvalidArgument(
                "kappa and the weight rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// xi1 + i Im xi2 of the internal mode.
    InternalMode,
    /// Even random superposition of localized wave packets with unit L^2 norm.
    RandomEven { seed: u64 },
    /// Initial datum supplied by the caller.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Perturbation {
    pub delta: f64,
    pub direction: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub params: Params,
    pub grid: Grid,
    pub dt: f64,
    pub t_final: f64,
    /// Time steps between outputs.
    pub stride: usize,
    pub constants: DiagnosticConstants,
    pub perturbation: Perturbation,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.kind != GridKind::Periodic {
            return Err(NlsError::InvalidArgument(
                "evolution needs a periodic grid".into(),
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(NlsError::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(NlsError::InvalidArgument(format!(
                "T must be positive, got {}",
                self.t_final
            )));
        }
        if self.stride == 0 {
            return Err(NlsError::InvalidArgument(
                "stride must be at least 1".into(),
            ));
        }
        if !(self.perturbation.delta >= 0.0) {
            return Err(NlsError::InvalidArgument(
                "delta must be non-negative".into(),
            ));
        }
        self.constants.validate()
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    /// Configuration of the long stability run at p with the default constants.
    pub fn stability(p: f64, delta: f64, half_width: f64, n: usize, t_final: f64) -> Result<Self> {
        let grid = crate::numerics::make_grid(half_width, n, GridKind::Periodic)?;
        let dt = 1e-3;
        Ok(SimConfig {
            params: Params::unit(p)?,
            grid,
            dt,
            t_final,
            stride: 500,
            constants: DiagnosticConstants::default(),
            perturbation: Perturbation {
                delta,
                direction: Direction::InternalMode,
            },
        })
    }
}

/// Strang splitting with merged nonlinear half steps between outputs.
pub struct SplitStep {
    p: f64,
    dt: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    propagator: Vec<C64>,
}

impl SplitStep {
    pub fn new(p: f64, grid: Grid, dt: f64) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let n = grid.n;
        let scale = 1.0 / n as f64;
        let propagator = wavenumbers(grid)
            .iter()
            .map(|k| C64::from_polar(scale, -dt * k * k))
            .collect();
        SplitStep {
            p,
            dt,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            propagator,
        }
    }

    fn nonlinear(&self, u: &mut [C64], tau: f64) {
        let e = 0.5 * (self.p - 1.0);
        for v in u.iter_mut() {
            let m = v.norm_sqr().powf(e);
            *v *= C64::from_polar(1.0, tau * m);
        }
    }

    fn linear(&self, u: &mut [C64]) {
        self.fwd.process(u);
        for (v, m) in u.iter_mut().zip(&self.propagator) {
            *v *= m;
        }
        self.inv.process(u);
    }

    /// Advance by `steps` full Strang steps.
    pub fn advance(&self, u: &mut [C64], steps: usize) {
        if steps == 0 {
            return;
        }
        self.nonlinear(u, 0.5 * self.dt);
        for s in 0..steps {
            self.linear(u);
            let tau = if s + 1 == steps {
                0.5 * self.dt
            } else {
                self.dt
            };
            self.nonlinear(u, tau);
        }
    }
}

fn sup(u: &[C64]) -> f64 {
    u.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Totals of one evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvolutionStats {
    pub steps: usize,
    pub mass0: f64,
    pub energy0: f64,
    /// Largest relative drift of Q and E over the outputs.
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
}

/// Evolve u0 and call `observer(t, u)` at t = 0 and after every `stride` steps (and at the end).
pub fn evolve_with<F>(config: &SimConfig, u0: &Field2, mut observer: F) -> Result<EvolutionStats>
where
    F: FnMut(f64, &Field2) -> Result<()>,
{
    config.validate()?;
    if u0.grid != config.grid {
        return Err(NlsError::GridMismatch(format!(
            "{:?} vs {:?}",
            u0.grid, config.grid
        )));
    }
    let p = config.params.p;
    let stepper = SplitStep::new(p, config.grid, config.dt);
    let total = config.steps();
    let mut u = Field2::scalar(config.grid, u0.v1.clone());
    let sup0 = sup(&u.v1);
    let (mass0, energy0) = mass_energy(&config.params, &u)?;
    let mut stats = EvolutionStats {
        steps: total,
        mass0,
        energy0,
        max_mass_drift: 0.0,
        max_energy_drift: 0.0,
    };
    observer(0.0, &u)?;
    let mut done = 0;
    while done < total {
        let chunk = config.stride.min(total - done);
        stepper.advance(&mut u.v1, chunk);
        done += chunk;
        let t = done as f64 * config.dt;
        let s = sup(&u.v1);
        if !(s <= 2.0 * sup0) {
            return Err(NlsError::BlowUp { t, sup: s });
        }
        let (q, e) = mass_energy(&config.params, &u)?;
        stats.max_mass_drift = stats.max_mass_drift.max(((q - mass0) / mass0).abs());
        stats.max_energy_drift = stats
            .max_energy_drift
            .max(((e - energy0) / energy0.abs().max(f64::MIN_POSITIVE)).abs());
        observer(t, &u)?;
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub u: Field2,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub snapshots: Vec<Snapshot>,
    pub stats: EvolutionStats,
}

/// Evolve and keep every output.
pub fn evolve(config: &SimConfig, u0: &Field2) -> Result<Evolution> {
    let mut snapshots = Vec::new();
    let stats = evolve_with(config, u0, |t, u| {
        snapshots.push(Snapshot { t, u: u.clone() });
        Ok(())
    })?;
    Ok(Evolution { snapshots, stats })
}

/// Real pairing Re ∫ a conj(b) on a uniform grid.
fn pair(grid: Grid, a: &[C64], b: &[C64]) -> f64 {
    let w = grid.weights();
    a.iter()
        .zip(b)
        .zip(&w)
        .map(|((x, y), w)| w * (x * y.conj()).re)
        .sum()
}

fn l2(grid: Grid, a: &[C64]) -> f64 {
    pair(grid, a, a).max(0.0).sqrt()
}

#[derive(Clone, Debug)]
pub struct ModulationState {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub z: C64,
    pub eta: Field2,
    /// Largest |orthogonality inner product| at the accepted iterate.
    pub newton_residual: f64,
    pub iterations: usize,
}

impl ModulationState {
    /// Starting guess with eta = 0.
    pub fn guess(grid: Grid, theta: f64, omega: f64, z: C64) -> Self {
        ModulationState {
            t: 0.0,
            theta,
            omega,
            z,
            eta: Field2::zeros(grid),
            newton_residual: f64::INFINITY,
            iterations: 0,
        }
    }

    /// e^{i theta}(phi[omega, z] + eta).
    pub fn reconstruct(&self, p: f64, mode: &InternalMode) -> Result<Field2> {
        let params = Params::new(p, self.omega)?;
        let jet = profile_jet(&params, self.z, mode, self.eta.grid)?;
        let ph = C64::from_polar(1.0, self.theta);
        let u = jet
            .phi
            .iter()
            .zip(&self.eta.v1)
            .map(|(f, e)| ph * (f + e))
            .collect();
        Ok(Field2::scalar(self.eta.grid, u))
    }
}

/// The four orthogonality directions i phi, d_omega phi, d_z1 phi, d_z2 phi.
fn directions(jet: &ProfileJet) -> [Vec<C64>; 4] {
    let i = C64::new(0.0, 1.0);
    [
        jet.phi.iter().map(|v| i * v).collect(),
        jet.d_omega.clone(),
        jet.d_z1.clone(),
        jet.d_z2.clone(),
    ]
}

struct Residual {
    eta: Vec<C64>,
    f: Vector4<f64>,
    jet: ProfileJet,
}

fn residual(
    p: f64,
    u: &[C64],
    grid: Grid,
    mode: &InternalMode,
    x: &Vector4<f64>,
) -> Result<Residual> {
    let params = Params::new(p, x[1]).map_err(|e| NlsError::OutsideTube(e.to_string()))?;
    let z = C64::new(x[2], x[3]);
    let jet = profile_jet(&params, z, mode, grid)?;
    let rot = C64::from_polar(1.0, -x[0]);
    let eta: Vec<C64> = u.iter().zip(&jet.phi).map(|(u, f)| rot * u - f).collect();
    let dirs = directions(&jet);
    let f = Vector4::from_fn(|k, _| pair(grid, &eta, &dirs[k]));
    Ok(Residual { eta, f, jet })
}

fn analytic_jacobian(grid: Grid, u: &[C64], theta: f64, r: &Residual) -> Matrix4<f64> {
    let i = C64::new(0.0, 1.0);
    let jet = &r.jet;
    let dirs = directions(jet);
    let rot = C64::from_polar(1.0, -theta);
    let d_theta: Vec<C64> = u.iter().map(|u| -i * rot * u).collect();
    let neg = |v: &[C64]| v.iter().map(|c| -c).collect::<Vec<_>>();
    let d_eta = [d_theta, neg(&jet.d_omega), neg(&jet.d_z1), neg(&jet.d_z2)];
    let times_i = |v: &[C64]| v.iter().map(|c| i * c).collect::<Vec<_>>();
    // derivatives of the directions in omega and z_j (phi is affine in z)
    let zero = vec![C64::new(0.0, 0.0); grid.n];
    let d_dir_omega = [
        times_i(&jet.d_omega),
        jet.d_omega2.clone(),
        jet.d_omega_z1.clone(),
        jet.d_omega_z2.clone(),
    ];
    let d_dir_z1 = [
        times_i(&jet.d_z1),
        jet.d_omega_z1.clone(),
        zero.clone(),
        zero.clone(),
    ];
    let d_dir_z2 = [
        times_i(&jet.d_z2),
        jet.d_omega_z2.clone(),
        zero.clone(),
        zero,
    ];
    Matrix4::from_fn(|k, c| {
        let mut v = pair(grid, &d_eta[c], &dirs[k]);
        match c {
            1 => v += pair(grid, &r.eta, &d_dir_omega[k]),
            2 => v += pair(grid, &r.eta, &d_dir_z1[k]),
            3 => v += pair(grid, &r.eta, &d_dir_z2[k]),
            _ => {}
        }
        v
    })
}

fn fd_jacobian(
    p: f64,
    u: &[C64],
    grid: Grid,
    mode: &InternalMode,
    x: &Vector4<f64>,
) -> Result<Matrix4<f64>> {
    let mut j = Matrix4::zeros();
    for c in 0..4 {
        let h = 1e-6 * x[c].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[c] += h;
        xm[c] -= h;
        let fp = residual(p, u, grid, mode, &xp)?.f;
        let fm = residual(p, u, grid, mode, &xm)?.f;
        j.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    Ok(j)
}

/// Newton iteration for (theta, omega, z1, z2) making eta orthogonal to
/// i phi, d_omega phi and d_zj phi, where eta = e^{-i theta} u - phi[omega, z].
pub fn modulate(
    params: &Params,
    u: &Field2,
    mode: &InternalMode,
    guess: &ModulationState,
) -> Result<ModulationState> {
    let grid = u.grid;
    let p = params.p;
    if (mode.p - p).abs() > 1e-12 {
        return Err(NlsError::InvalidArgument(format!(
            "mode built at p = {}, not {p}",
            mode.p
        )));
    }
    let mut x = Vector4::new(guess.theta, guess.omega, guess.z.re, guess.z.im);
    for it in 0..=MODULATION_MAX_ITER {
        let r = residual(p, &u.v1, grid, mode, &x)?;
        let res = r.f.amax();
        if !res.is_finite() {
            return Err(NlsError::OutsideTube(format!(
                "non-finite residual at iteration {it}"
            )));
        }
        if res <= MODULATION_TOL {
            return Ok(ModulationState {
                t: guess.t,
                theta: x[0],
                omega: x[1],
                z: C64::new(x[2], x[3]),
                eta: Field2::scalar(grid, r.eta),
                newton_residual: res,
                iterations: it,
            });
        }
        if it == MODULATION_MAX_ITER {
            break;
        }
        let jac = analytic_jacobian(grid, &u.v1, x[0], &r);
        let step = match jac.lu().solve(&r.f) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => fd_jacobian(p, &u.v1, grid, mode, &x)?
                .lu()
                .solve(&r.f)
                .ok_or_else(|| NlsError::OutsideTube("singular modulation Jacobian".into()))?,
        };
        x -= step;
        if !(x[1] > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return Err(NlsError::OutsideTube(format!(
                "omega = {} at iteration {it}",
                x[1]
            )));
        }
    }
    Err(NlsError::OutsideTube(format!(
        "no convergence in {MODULATION_MAX_ITER} Newton steps"
    )))
}

/// Even bump with 1 on [-1, 1], 0 outside [-2, 2] and a quintic smoothstep between.
pub fn chi(x: f64) -> f64 {
    let s = x.abs();
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// zeta_A(x) = exp(-(|x|/A)(1 - chi(x))).
pub fn zeta(a: f64, x: f64) -> f64 {
    (-(x.abs() / a) * (1.0 - chi(x))).exp()
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn zeta_sq_integral(a: f64, lo: f64, hi: f64) -> f64 {
    let m = 16;
    let h = (hi - lo) / m as f64;
    (0..m)
        .map(|j| {
            let c = lo + (j as f64 + 0.5) * h;
            GL5.iter()
                .map(|(t, w)| w * zeta(a, c + 0.5 * h * t).powi(2))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

/// phi_A(x) = ∫_0^x zeta_A^2.
pub fn phi_a(a: f64, x: f64) -> f64 {
    let s = x.abs();
    let v = if s <= 1.0 {
        s
    } else if s <= 2.0 {
        1.0 + zeta_sq_integral(a, 1.0, s)
    } else {
        1.0 + zeta_sq_integral(a, 1.0, 2.0) + 0.5 * a * ((-4.0 / a).exp() - (-2.0 * s / a).exp())
    };
    v.copysign(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mass: f64,
    pub energy: f64,
    pub abs_z: f64,
    pub omega: f64,
    pub eta_sigma_a: f64,
    pub eta_tilde: f64,
    pub virial: f64,
    pub j_fgr: f64,
    pub eta_h1_weighted: f64,
    pub eta_h1: f64,
}

/// Scalar diagnostics of a modulation state. Q and E are those of phi[omega, z] + eta.
pub fn diagnostics(
    state: &ModulationState,
    config: &SimConfig,
    mode: &InternalMode,
    rad: &RadiationMode,
) -> Result<Diagnostics> {
    let grid = state.eta.grid;
    let c = config.constants;
    let params = Params::new(config.params.p, state.omega)?;
    let jet = profile_jet(&params, state.z, mode, grid)?;
    let u: Vec<C64> = jet
        .phi
        .iter()
        .zip(&state.eta.v1)
        .map(|(f, e)| f + e)
        .collect();
    let (mass, energy) = mass_energy(&params, &Field2::scalar(grid, u))?;

    let eta = &state.eta.v1;
    let deta = match grid.kind {
        GridKind::Periodic => spectral_derivative(eta, grid, 1),
        GridKind::Collocation => crate::numerics::fd4_d1(eta, grid.dx),
    };
    let xs = grid.points();
    let a = c.a_scale;
    let w = grid.weights();
    let wsum = |f: &dyn Fn(usize) -> f64| (0..grid.n).map(|i| w[i] * f(i)).sum::<f64>();

    let s2 = |x: f64| sech(2.0 * x / a).powi(2);
    let eta_sigma_a = wsum(&|i| s2(xs[i]) * deta[i].norm_sqr()).sqrt()
        + wsum(&|i| s2(xs[i]) * eta[i].norm_sqr()).sqrt() / a;
    let k0 = c.kappa * config.params.omega;
    let eta_tilde = wsum(&|i| sech(k0 * xs[i]).powi(2) * eta[i].norm_sqr()).sqrt();
    // (1/2)<i eta, zeta^2 eta + 2 phi_A eta'> = -∫ phi_A Im(eta conj eta')
    let virial = -wsum(&|i| phi_a(a, xs[i]) * (eta[i] * deta[i].conj()).im);

    let z2 = state.z * state.z;
    let sw = state.omega.sqrt();
    let j_fgr = wsum(&|i| {
        let g = rad.eval(sw * xs[i]);
        let v = C64::new(2.0 * z2.re * g.g1, -2.0 * z2.im * g.g2) * chi(xs[i] / a);
        (C64::new(0.0, -1.0) * eta[i] * v.conj()).re
    });

    let ar = c.weight_rate;
    let eta_h1_weighted = wsum(&|i| {
        let x = xs[i];
        let br = (1.0 + x * x).sqrt();
        let wt = (-ar * br).exp();
        let d = deta[i] * wt - eta[i] * (ar * x / br * wt);
        (eta[i] * wt).norm_sqr() + d.norm_sqr()
    })
    .sqrt();
    let eta_h1 = (l2(grid, eta).powi(2) + l2(grid, &deta).powi(2)).sqrt();

    Ok(Diagnostics {
        mass,
        energy,
        abs_z: state.z.norm(),
        omega: state.omega,
        eta_sigma_a,
        eta_tilde,
        virial,
        j_fgr,
        eta_h1_weighted,
        eta_h1,
    })
}

/// Perturbation direction sampled on the grid.
pub fn perturbation_direction(config: &SimConfig, mode: &InternalMode) -> Result<Vec<C64>> {
    let grid = config.grid;
    let sw = config.params.omega.sqrt();
    match config.perturbation.direction {
        Direction::InternalMode => {
            let xi = mode.xi()?;
            Ok(grid
                .points()
                .iter()
                .map(|&x| {
                    let j = xi.eval(sw * x);
                    C64::new(j.xi1, j.xi2)
                })
                .collect())
        }
        Direction::RandomEven { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let packets: Vec<(f64, f64, C64)> = (0..6)
                .map(|_| {
                    let width = rng.random_range(1.0..4.0);
                    let k = rng.random_range(0.0..3.0);
                    let c = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    (width, k, c)
                })
                .collect();
            let v: Vec<C64> = grid
                .points()
                .iter()
                .map(|&x| {
                    packets
                        .iter()
                        .map(|&(w, k, c)| c * ((-(x / w).powi(2)).exp() * (k * x).cos()))
                        .sum()
                })
                .collect();
            let n = l2(grid, &v);
            Ok(v.into_iter().map(|c| c / n).collect())
        }
        Direction::Custom => Err(NlsError::InvalidArgument(
            "custom perturbations come with their own initial datum".into(),
        )),
    }
}

/// phi_omega0 + delta * direction.
pub fn initial_datum(config: &SimConfig, mode: &InternalMode) -> Result<Field2> {
    let d = perturbation_direction(config, mode)?;
    let delta = config.perturbation.delta;
    let u = config
        .grid
        .points()
        .iter()
        .zip(d)
        .map(|(&x, v)| C64::new(config.params.phi(x), 0.0) + v * delta)
        .collect();
    Ok(Field2::scalar(config.grid, u))
}

/// One output row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub z_re: f64,
    pub z_im: f64,
    pub abs_z2: f64,
    #[serde(rename = "Q")]
    pub mass: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "eta_sigmaA")]
    pub eta_sigma_a: f64,
    pub eta_tilde: f64,
    #[serde(rename = "virial_I")]
    pub virial: f64,
    #[serde(rename = "J_FGR")]
    pub j_fgr: f64,
    pub eta_h1_weighted: f64,
    #[serde(skip)]
    pub eta_h1: f64,
    #[serde(skip)]
    pub newton_residual: f64,
    #[serde(skip)]
    pub reconstruction_error: f64,
}

impl TrajectoryRow {
    pub fn new(s: &ModulationState, d: &Diagnostics, reconstruction_error: f64) -> Self {
        TrajectoryRow {
            t: s.t,
            theta: s.theta,
            omega: s.omega,
            z_re: s.z.re,
            z_im: s.z.im,
            abs_z2: s.z.norm_sqr(),
            mass: d.mass,
            energy: d.energy,
            eta_sigma_a: d.eta_sigma_a,
            eta_tilde: d.eta_tilde,
            virial: d.virial,
            j_fgr: d.j_fgr,
            eta_h1_weighted: d.eta_h1_weighted,
            eta_h1: d.eta_h1,
            newton_residual: s.newton_residual,
            reconstruction_error,
        }
    }
}

/// Run-level summary of a stability experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub p: f64,
    pub omega0: f64,
    pub delta: f64,
    pub t_final: f64,
    pub max_eta_h1: f64,
    /// max_t ||eta||_{H^1} / sqrt(delta).
    pub c_sqrt_delta: f64,
    pub z2_initial_window: f64,
    pub z2_final_window: f64,
    pub z2_envelope_ratio: f64,
    pub omega_variation_first_half: f64,
    pub omega_variation_second_half: f64,
    pub omega_settling_ratio: f64,
    /// Pearson correlation of d/dt J_FGR with |z|^4; reported only.
    pub fgr_correlation: f64,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
    pub max_newton_residual: f64,
    pub max_reconstruction_error: f64,
    /// Time for radiation at the largest observed wavenumber to wrap into |x| <= CORE_WINDOW.
    pub wrap_horizon: f64,
    pub k_max_observed: f64,
    pub wrap_contaminated: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub summary: StabilitySummary,
}

fn window_mean(rows: &[TrajectoryRow], f: impl Fn(&TrajectoryRow) -> f64, lo: f64, hi: f64) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.t >= lo && r.t <= hi)
        .map(f)
        .collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn total_variation(rows: &[TrajectoryRow], lo: f64, hi: f64) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.t >= lo && r.t <= hi)
        .map(|r| r.omega)
        .collect();
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / (saa * sbb).sqrt()
}

/// Wavenumber below which 99% of the spectral energy of v lies.
fn k99(grid: Grid, v: &[C64]) -> f64 {
    let mut buf = v.to_vec();
    FftPlanner::<f64>::new()
        .plan_fft_forward(grid.n)
        .process(&mut buf);
    let mut power: Vec<(f64, f64)> = wavenumbers(grid)
        .iter()
        .zip(&buf)
        .map(|(k, c)| (k.abs(), c.norm_sqr()))
        .collect();
    power.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = power.iter().map(|s| s.1).sum();
    let mut acc = 0.0;
    for (k, e) in power {
        acc += e;
        if acc >= 0.99 * total {
            return k;
        }
    }
    0.0
}

/// Summary statistics from the rows; window fractions are 10% of the run at each end.
pub fn summarize(
    config: &SimConfig,
    rows: &[TrajectoryRow],
    stats: &EvolutionStats,
    k_max_observed: f64,
) -> StabilitySummary {
    let t_end = rows.last().map_or(0.0, |r| r.t);
    let w = 0.1 * t_end;
    let z2i = window_mean(rows, |r| r.abs_z2, 0.0, w);
    let z2f = window_mean(rows, |r| r.abs_z2, t_end - w, t_end);
    let tv1 = total_variation(rows, 0.0, 0.5 * t_end);
    let tv2 = total_variation(rows, 0.5 * t_end, t_end);
    let djdt: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[1].j_fgr - w[0].j_fgr) / (w[1].t - w[0].t))
        .collect();
    let z4: Vec<f64> = rows
        .windows(2)
        .map(|w| 0.5 * (w[0].abs_z2.powi(2) + w[1].abs_z2.powi(2)))
        .collect();
    let max_eta_h1 = rows.iter().map(|r| r.eta_h1).fold(0.0, f64::max);
    let delta = config.perturbation.delta;
    let horizon = 2.0 * (config.grid.half_width - CORE_WINDOW).max(0.0) / (2.0 * k_max_observed);
    StabilitySummary {
        p: config.params.p,
        omega0: config.params.omega,
        delta,
        t_final: t_end,
        max_eta_h1,
        c_sqrt_delta: max_eta_h1 / delta.sqrt(),
        z2_initial_window: z2i,
        z2_final_window: z2f,
        z2_envelope_ratio: z2f / z2i,
        omega_variation_first_half: tv1,
        omega_variation_second_half: tv2,
        omega_settling_ratio: tv2 / tv1,
        fgr_correlation: pearson(&djdt, &z4),
        max_mass_drift: stats.max_mass_drift,
        max_energy_drift: stats.max_energy_drift,
        max_newton_residual: rows.iter().map(|r| r.newton_residual).fold(0.0, f64::max),
        max_reconstruction_error: rows
            .iter()
            .map(|r| r.reconstruction_error)
            .fold(0.0, f64::max),
        wrap_horizon: horizon,
        k_max_observed,
        wrap_contaminated: t_end > horizon,
    }
}

/// Evolve phi_omega0 + delta * direction, modulating every output warm-started
/// from the previous one. The internal mode is taken in the symplectic normalization.
pub fn run_stability_experiment(config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let p = config.params.p;
    if config.perturbation.direction == Direction::Custom {
        return Err(NlsError::InvalidArgument(
            "the stability experiment builds its own initial datum".into(),
        ));
    }
    let mode = crate::internal_mode::normalize(
        crate::fgr::mode_with_xi(p)?,
        crate::internal_mode::Normalization::Symplectic,
    )?;
    let rad = crate::fgr::radiation_mode(p, &mode)?;
    let u0 = initial_datum(config, &mode)?;
    let delta = config.perturbation.delta;
    // u0 - phi = delta (xi1 + i Im xi2) = z xi + conj(z xi) with z = delta (1 - i)/2
    let z0 = match config.perturbation.direction {
        Direction::InternalMode => C64::new(0.5 * delta, -0.5 * delta),
        _ => C64::new(0.0, 0.0),
    };
    let mut state = ModulationState::guess(config.grid, 0.0, config.params.omega, z0);
    let mut rows = Vec::new();
    let mut k_obs = rad.k_rad * config.params.omega.sqrt();
    let total = config.steps();
    let stats = evolve_with(config, &u0, |t, u| {
        state.t = t;
        let next = modulate(&config.params, u, &mode, &state)?;
        let rec = next.reconstruct(p, &mode)?;
        let err = rec
            .v1
            .iter()
            .zip(&u.v1)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let d = diagnostics(&next, config, &mode, &rad)?;
        rows.push(TrajectoryRow::new(&next, &d, err));
        if (t / config.dt).round() as usize == total {
            k_obs = k_obs.max(k99(config.grid, &next.eta.v1));
        }
        state = next;
        Ok(())
    })?;
    let summary = summarize(config, &rows, &stats, k_obs);
    Ok(Trajectory { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::internal_mode::{normalize, Normalization};
    use crate::numerics::make_grid;

    fn small_config(p: f64, dt: f64, t_final: f64) -> SimConfig {
        SimConfig {
            params: Params::unit(p).unwrap(),
            grid: make_grid(30.0, 1024, GridKind::Periodic).unwrap(),
            dt,
            t_final,
            stride: 100,
            constants: DiagnosticConstants::default(),
            perturbation: Perturbation {
                delta: 0.0,
                direction: Direction::Custom,
            },
        }
    }

    fn mode29() -> InternalMode {
        normalize(
            crate::fgr::mode_with_xi(2.9).unwrap(),
            Normalization::Symplectic,
        )
        .unwrap()
    }

    #[test]
    fn chi_is_a_monotone_bump() {
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            let c = chi(x);
            assert!((0.0..=1.0).contains(&c));
            if x.abs() <= 1.0 {
                assert_eq!(c, 1.0);
            }
            if x.abs() >= 2.0 {
                assert_eq!(c, 0.0);
            }
            let h = 1e-6;
            assert!(x * (chi(x + h) - chi(x - h)) <= 1e-12);
        }
    }

    #[test]
    fn phi_a_is_the_primitive_of_zeta_squared() {
        let a = 8.0;
        for &x in &[0.5, 1.3, 1.9, 2.5, 10.0] {
            let h = 1e-5;
            let d = (phi_a(a, x + h) - phi_a(a, x - h)) / (2.0 * h);
            assert!((d - zeta(a, x).powi(2)).abs() < 1e-8, "x = {x}");
            assert_eq!(phi_a(a, -x), -phi_a(a, x));
        }
    }

    #[test]
    fn split_step_preserves_the_standing_wave() {
        let cfg = small_config(2.9, 1e-3, 50.0);
        let u0 = crate::profile::soliton(&cfg.params, cfg.grid);
        let u0 = Field2::scalar(cfg.grid, u0.v1);
        let ev = evolve(&cfg, &u0).unwrap();
        let last = &ev.snapshots.last().unwrap().u;
        let ov: C64 = last.v1.iter().zip(&u0.v1).map(|(a, b)| a * b.conj()).sum();
        let ph = C64::from_polar(1.0, ov.arg());
        let err: Vec<C64> = last
            .v1
            .iter()
            .zip(&u0.v1)
            .map(|(a, b)| a - ph * b)
            .collect();
        assert!(l2(cfg.grid, &err) <= 1e-5, "{}", l2(cfg.grid, &err));
        assert!(ev.stats.max_mass_drift <= 1e-8);
    }

    fn perturbed(cfg: &SimConfig) -> Field2 {
        let u = cfg
            .grid
            .points()
            .iter()
            .map(|&x| C64::new(cfg.params.phi(x) * (1.0 + 0.2 * (-x * x).exp()), 0.0))
            .collect();
        Field2::scalar(cfg.grid, u)
    }

    #[test]
    fn energy_drift_is_second_order() {
        let drift = |dt: f64| {
            let cfg = small_config(2.9, dt, 5.0);
            let ev = evolve(&cfg, &perturbed(&cfg)).unwrap();
            assert!(ev.stats.max_mass_drift <= 1e-8);
            ev.stats.max_energy_drift
        };
        let (d1, d2) = (drift(1e-3), drift(5e-4));
        assert!(d1 <= 1e-6, "{d1:e}");
        let r = d1 / d2;
        assert!((3.0..5.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn solution_converges_at_second_order() {
        let run = |dt: f64| {
            let mut cfg = small_config(2.9, dt, 2.0);
            cfg.stride = 100_000;
            evolve(&cfg, &perturbed(&cfg))
                .unwrap()
                .snapshots
                .pop()
                .unwrap()
                .u
                .v1
        };
        let (a, b, c) = (run(4e-3), run(2e-3), run(1e-3));
        let g = small_config(2.9, 1e-3, 1.0).grid;
        let e1: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let e2: Vec<C64> = b.iter().zip(&c).map(|(x, y)| x - y).collect();
        let r = l2(g, &e1) / l2(g, &e2);
        assert!((3.5..4.5).contains(&r), "ratio {r}");
    }

    #[test]
    fn blow_up_guard_trips() {
        // p = 4.5 is L^2-supercritical; a large Gaussian collapses
        let mut cfg = small_config(4.5, 1e-4, 2.0);
        cfg.stride = 10;
        let u = cfg
            .grid
            .points()
            .iter()
            .map(|&x| C64::new(3.0 * (-x * x).exp(), 0.0))
            .collect();
        let r = evolve(&cfg, &Field2::scalar(cfg.grid, u));
        assert!(matches!(r, Err(NlsError::BlowUp { .. })), "{r:?}");
    }

    #[test]
    fn modulation_recovers_a_rotated_soliton() {
        let mode = mode29();
        let cfg = small_config(2.9, 1e-3, 1.0);
        let params = Params::new(2.9, 1.1).unwrap();
        let u = Field2::scalar(
            cfg.grid,
            cfg.grid
                .points()
                .iter()
                .map(|&x| C64::from_polar(params.phi(x), 0.7))
                .collect(),
        );
        let guess = ModulationState::guess(cfg.grid, 0.6, 1.0, C64::new(0.01, -0.01));
        let s = modulate(&cfg.params, &u, &mode, &guess).unwrap();
        assert!((s.theta - 0.7).abs() <= 1e-8);
        assert!((s.omega - 1.1).abs() <= 1e-8);
        assert!(s.z.norm() <= 1e-8);
        assert!(s.eta.sup() <= 1e-8);
        assert!(s.newton_residual <= MODULATION_TOL);

        let rot = Field2::scalar(
            cfg.grid,
            u.v1.iter().map(|v| v * C64::from_polar(1.0, 0.3)).collect(),
        );
        let s2 = modulate(&cfg.params, &rot, &mode, &s).unwrap();
        assert!((s2.theta - s.theta - 0.3).abs() <= 1e-8);
        assert!((s2.omega - s.omega).abs() <= 1e-8);
        assert!((s2.z - s.z).norm() <= 1e-8);
    }

    #[test]
    fn modulation_reads_off_the_internal_mode_coordinate() {
        let mode = mode29();
        let cfg = small_config(2.9, 1e-3, 1.0);
        let eps = 1e-3;
        let xi = mode.xi().unwrap();
        let u = cfg
            .grid
            .points()
            .iter()
            .map(|&x| {
                let j = xi.eval(x);
                C64::new(cfg.params.phi(x), 0.0) + eps * C64::new(j.xi1, j.xi2)
            })
            .collect();
        let u = Field2::scalar(cfg.grid, u);
        let s = modulate(
            &cfg.params,
            &u,
            &mode,
            &ModulationState::guess(cfg.grid, 0.0, 1.0, C64::new(0.0, 0.0)),
        )
        .unwrap();
        let expect = C64::new(0.5 * eps, -0.5 * eps);
        assert!((s.z - expect).norm() <= 0.05 * eps, "z = {}", s.z);
        assert!(s.eta.sup() <= 1e-5, "{}", s.eta.sup());
        let rec = s.reconstruct(2.9, &mode).unwrap();
        let err = rec
            .v1
            .iter()
            .zip(&u.v1)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-12);
    }

    #[test]
    fn diagnostic_identities() {
        let mode = mode29();
        let rad = crate::fgr::radiation_mode(2.9, &mode).unwrap();
        let cfg = small_config(2.9, 1e-3, 1.0);
        let g = cfg.grid;
        let zero = ModulationState {
            z: C64::new(0.01, 0.02),
            ..ModulationState::guess(g, 0.0, 1.0, C64::new(0.0, 0.0))
        };
        let d = diagnostics(&zero, &cfg, &mode, &rad).unwrap();
        assert_eq!(
            (
                d.eta_sigma_a,
                d.eta_tilde,
                d.virial,
                d.j_fgr,
                d.eta_h1_weighted
            ),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        let real = Field2::scalar(
            g,
            g.points()
                .iter()
                .map(|&x| C64::new((-x * x / 4.0).exp() * x.cos(), 0.0))
                .collect(),
        );
        let s = ModulationState { eta: real, ..zero };
        let d = diagnostics(&s, &cfg, &mode, &rad).unwrap();
        assert!(d.virial.abs() <= 1e-10);
        assert!(d.eta_tilde <= l2(g, &s.eta.v1));
    }
}
