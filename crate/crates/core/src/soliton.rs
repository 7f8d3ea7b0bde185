//! Deterministic nonlinear evolution of a single wave function,
//!
//! ```text
//! d/dt psi = (i hbar / 2m) psi'' - i a x psi / hbar - psi Λ[|psi|^2],
//! Λ[g](x) = (g * F)(x) - ∫ dy g(y) (g * F)(y),
//! ```
//!
//! and everything built on it: soliton search, tail fits, Galilei boosts and
//! width sweeps.
//!
//! Time stepping is Strang splitting. The kinetic half steps are exact in
//! Fourier space. The nonlinear step multiplies by `exp(-Λ dt)` with `Λ`
//! evaluated at the midpoint density of the sub-flow (one predictor pass),
//! which keeps the scheme second order.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, Spectral, WaveFunction, C64};
use crate::kernels::{LocalizationRate, ModelParams, RateConvolver};

/// Round-off floor for the norm-drift instability check.
const DRIFT_FLOOR: f64 = 1e-12;
/// Checks without a new lowest residual before the search gives up.
const STALL_CHECKS: usize = 10;

/// `Λ[|psi|^2]` on the wave function's grid.
pub fn lambda_functional(psi: &WaveFunction, conv: &mut RateConvolver) -> Result<Vec<f64>> {
    let g = psi.density();
    let mut out = vec![0.0; g.len()];
    lambda_into(&g, psi.grid().dx(), conv, &mut out)?;
    Ok(out)
}

fn lambda_into(g: &[f64], dx: f64, conv: &mut RateConvolver, out: &mut [f64]) -> Result<()> {
    conv.convolve_into(g, out)?;
    let mean: f64 = g.iter().zip(out.iter()).map(|(a, b)| a * b).sum::<f64>() * dx;
    out.iter_mut().for_each(|v| *v -= mean);
    Ok(())
}

/// Time stepping parameters for [`evolve_nonlinear`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Slope `a` of the external potential `V(x) = a x`.
    pub potential_slope: f64,
    /// Keep the density peak near the middle of the window.
    pub recenter: bool,
    pub convergence_tol: f64,
    /// Time between diagnostic samples; zero disables sampling.
    pub record_interval: f64,
}

/// `dx^2 m / (pi hbar)`: the largest step that still resolves the phase of
/// the fastest kinetic mode.
pub fn dt_bound(grid: &Grid, params: &ModelParams) -> f64 {
    grid.dx() * grid.dx() * params.mass() / (PI * params.hbar())
}

/// `0.1 dx^2 m / hbar`.
pub fn default_dt(grid: &Grid, params: &ModelParams) -> f64 {
    0.1 * grid.dx() * grid.dx() * params.mass() / params.hbar()
}

/// 4096 points over `80 hbar / sigma_G`.
pub fn default_grid(params: &ModelParams) -> Grid {
    Grid::centered(4096, 80.0 * params.localization_scale()).expect("valid default grid")
}

impl EvolveConfig {
    pub fn for_grid(grid: &Grid, params: &ModelParams) -> Self {
        let t_disp = params.dispersion_time();
        Self {
            dt: default_dt(grid, params),
            t_max: 5.0 * t_disp,
            potential_slope: 0.0,
            recenter: true,
            convergence_tol: 1e-6,
            record_interval: 0.1 * t_disp,
        }
    }

    pub fn validate(&self, grid: &Grid, params: &ModelParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        let bound = dt_bound(grid, params);
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds the kinetic resolution bound dx^2 m/(pi hbar) = {bound}",
                self.dt
            )));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_max must be >= 0, got {}", self.t_max)));
        }
        if !self.potential_slope.is_finite() {
            return Err(Error::InvalidParameter("potential slope must be finite".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidParameter("convergence tolerance must be positive".into()));
        }
        if !(self.record_interval >= 0.0) {
            return Err(Error::InvalidParameter("record interval must be >= 0".into()));
        }
        Ok(())
    }
}

/// Strang-split propagator for the nonlinear equation on a fixed grid shape.
#[derive(Clone, Debug)]
pub struct Evolver {
    n: usize,
    dx: f64,
    hbar: f64,
    mass: f64,
    slope: f64,
    conv: RateConvolver,
    spectral: Spectral,
    k: Vec<f64>,
    kin_half: Vec<C64>,
    kin_dt: f64,
    /// `(|drift|, dt)` of the first step of the current segment.
    drift_reference: Option<(f64, f64)>,
    g: Vec<f64>,
    lam: Vec<f64>,
}

impl Evolver {
    pub fn new(grid: Grid, params: &ModelParams, rate: &LocalizationRate, potential_slope: f64) -> Result<Self> {
        let n = grid.n();
        Ok(Self {
            n,
            dx: grid.dx(),
            hbar: params.hbar(),
            mass: params.mass(),
            slope: potential_slope,
            conv: RateConvolver::new(grid, rate)?,
            spectral: Spectral::new(n),
            k: grid.wavenumbers(),
            kin_half: vec![C64::new(1.0, 0.0); n],
            kin_dt: 0.0,
            drift_reference: None,
            g: vec![0.0; n],
            lam: vec![0.0; n],
        })
    }

    pub fn convolver(&mut self) -> &mut RateConvolver {
        &mut self.conv
    }

    pub fn gamma(&self) -> f64 {
        self.conv.gamma()
    }

    /// Forgets the drift measured on the first step, so the next step sets a
    /// new reference. Used after jumps, which start a new deterministic segment.
    pub fn reset_drift_reference(&mut self) {
        self.drift_reference = None;
    }

    fn check_grid(&self, psi: &WaveFunction) -> Result<()> {
        let g = psi.grid();
        if g.n() != self.n || (g.dx() - self.dx).abs() > 1e-12 * self.dx {
            return Err(Error::Dimension { expected: self.n, got: g.n() });
        }
        Ok(())
    }

    fn half_kinetic(&mut self, amps: &mut [C64], dt: f64) {
        if dt != self.kin_dt {
            let c = self.hbar * dt / (4.0 * self.mass);
            for (m, &k) in self.kin_half.iter_mut().zip(&self.k) {
                *m = C64::from_polar(1.0, -c * k * k);
            }
            self.kin_dt = dt;
        }
        self.spectral.apply_multiplier(amps, &self.kin_half);
    }

    /// Advances `psi` by `dt`, renormalizes and returns the signed norm drift
    /// accumulated before renormalization.
    pub fn step(&mut self, psi: &mut WaveFunction, dt: f64) -> Result<f64> {
        self.check_grid(psi)?;
        let grid = *psi.grid();
        let amps = psi.amps_mut();
        self.half_kinetic(amps, dt);

        if self.conv.gamma() > 0.0 || self.slope != 0.0 {
            for (g, a) in self.g.iter_mut().zip(amps.iter()) {
                *g = a.norm_sqr();
            }
            let total: f64 = self.g.iter().sum::<f64>() * self.dx;
            self.g.iter_mut().for_each(|v| *v /= total);
            if self.conv.gamma() > 0.0 {
                // predictor: density at the middle of the nonlinear sub-flow
                lambda_into(&self.g, self.dx, &mut self.conv, &mut self.lam)?;
                for (g, l) in self.g.iter_mut().zip(&self.lam) {
                    *g *= (-l * dt).exp();
                }
                let total: f64 = self.g.iter().sum::<f64>() * self.dx;
                self.g.iter_mut().for_each(|v| *v /= total);
                lambda_into(&self.g, self.dx, &mut self.conv, &mut self.lam)?;
            }
            let phase_rate = -self.slope * dt / self.hbar;
            let decay = self.conv.gamma() > 0.0;
            for (i, a) in amps.iter_mut().enumerate() {
                let r = if decay { (-self.lam[i] * dt).exp() } else { 1.0 };
                *a *= if self.slope != 0.0 { C64::from_polar(r, phase_rate * grid.x(i)) } else { C64::new(r, 0.0) };
            }
        }

        self.half_kinetic(amps, dt);
        let drift = psi.normalize() - 1.0;

        // the one-step defect scales as dt^3
        let (d0, dt0) = *self.drift_reference.get_or_insert((drift.abs(), dt));
        let limit = 100.0 * (d0 * (dt / dt0).powi(3)).max(DRIFT_FLOOR);
        if drift.abs() > limit {
            return Err(Error::Instability(format!(
                "norm drift {drift:e} per step exceeds {limit:e}; reduce dt"
            )));
        }
        Ok(drift)
    }

    /// Time derivative of `psi` under the free (`a = 0`) nonlinear equation.
    pub fn rhs(&mut self, psi: &WaveFunction) -> Result<Vec<C64>> {
        self.check_grid(psi)?;
        let mut kin = psi.amps().to_vec();
        self.spectral.forward(&mut kin);
        let c = C64::new(0.0, -self.hbar / (2.0 * self.mass));
        for (v, &k) in kin.iter_mut().zip(&self.k) {
            *v *= c * k * k;
        }
        self.spectral.inverse(&mut kin);
        let lam = lambda_functional(psi, &mut self.conv)?;
        Ok(kin
            .iter()
            .zip(psi.amps())
            .zip(&lam)
            .map(|((k, a), l)| k - a * *l)
            .collect())
    }

    /// `∫ g (g * F) dx` for `g = |psi|^2`; the total jump rate of the
    /// orthogonal unraveling.
    pub fn mean_rate(&mut self, psi: &WaveFunction) -> Result<f64> {
        self.check_grid(psi)?;
        let g = psi.density();
        let c = self.conv.convolve(&g)?;
        Ok(g.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() * self.dx)
    }
}

/// One row of the evolution time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolutionSample {
    pub t: f64,
    pub norm_drift: f64,
    pub centroid: f64,
    pub sigma: f64,
    /// Co-moving L2 change of `|psi|` since the previous sample.
    pub shape_residual: f64,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub samples: Vec<EvolutionSample>,
    pub final_state: WaveFunction,
    pub steps: usize,
}

/// L2 distance between the envelopes of two states after aligning their
/// centroids (the grids may sit at different origins).
pub fn comoving_residual(a: &WaveFunction, b: &WaveFunction) -> Result<f64> {
    if !a.grid().same_shape(b.grid()) {
        return Err(Error::Dimension { expected: a.grid().n(), got: b.grid().n() });
    }
    // centroid positions measured from each window's origin
    let ra = a.centroid() - a.grid().x0();
    let rb = b.centroid() - b.grid().x0();
    let grid = *a.grid();
    let mut shifted = b.amps().to_vec();
    let mut sp = Spectral::new(grid.n());
    sp.translate(&mut shifted, &grid.wavenumbers(), ra - rb);
    let s: f64 = a
        .amps()
        .iter()
        .zip(&shifted)
        .map(|(x, y)| (x.norm() - y.norm()).powi(2))
        .sum();
    Ok((s * grid.dx()).sqrt())
}

fn maybe_recenter(psi: &mut WaveFunction) {
    let grid = *psi.grid();
    let off = (psi.centroid() - grid.center()) / grid.dx();
    if off.abs() > (grid.n() / 32) as f64 {
        psi.recenter_window(off.round() as i64);
    }
}

/// Propagates `psi0` up to `cfg.t_max`, sampling diagnostics every
/// `cfg.record_interval`.
pub fn evolve_nonlinear(
    psi0: &WaveFunction,
    cfg: &EvolveConfig,
    params: &ModelParams,
    rate: &LocalizationRate,
) -> Result<Evolution> {
    cfg.validate(psi0.grid(), params)?;
    let mut evolver = Evolver::new(*psi0.grid(), params, rate, cfg.potential_slope)?;
    let mut psi = psi0.clone();
    psi.normalize();
    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let record_every = if cfg.record_interval > 0.0 {
        ((cfg.record_interval / cfg.dt).round() as usize).max(1)
    } else {
        usize::MAX
    };
    let mut samples = Vec::new();
    let mut last = psi.clone();
    let sample = |t: f64, drift: f64, psi: &WaveFunction, prev: Option<&WaveFunction>| -> Result<EvolutionSample> {
        Ok(EvolutionSample {
            t,
            norm_drift: drift,
            centroid: psi.centroid(),
            sigma: psi.spread(),
            shape_residual: match prev {
                Some(p) => comoving_residual(psi, p)?,
                None => f64::NAN,
            },
        })
    };
    if record_every != usize::MAX {
        samples.push(sample(0.0, 0.0, &psi, None)?);
    }
    for i in 1..=steps {
        let drift = evolver.step(&mut psi, cfg.dt)?;
        if cfg.recenter && i % 16 == 0 {
            maybe_recenter(&mut psi);
        }
        if i % record_every == 0 {
            samples.push(sample(i as f64 * cfg.dt, drift, &psi, Some(&last))?);
            last = psi.clone();
        }
    }
    Ok(Evolution { samples, final_state: psi, steps })
}

/// Exponential tail fit `log|pi| ≈ b - k |x - x_peak|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailFit {
    pub k: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits the tails inside the window `lo <= |pi|/peak <= hi`.
pub fn fit_tail(psi: &WaveFunction, lo: f64, hi: f64) -> TailFit {
    let env = psi.envelope();
    let ip = psi.peak_index();
    let peak = env[ip];
    let xp = psi.grid().x(ip);
    let pts: Vec<(f64, f64)> = env
        .iter()
        .enumerate()
        .filter(|(_, &a)| a >= lo * peak && a <= hi * peak)
        .map(|(i, &a)| ((psi.grid().x(i) - xp).abs(), (a / peak).ln()))
        .collect();
    if pts.len() < 4 {
        return TailFit { k: f64::NAN, intercept: f64::NAN, r_squared: 0.0, points: pts.len() };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    TailFit { k: -slope, intercept, r_squared: 1.0 - ss_res / syy, points: pts.len() }
}

/// Settings for [`find_soliton`].
#[derive(Clone, Debug)]
pub struct SolitonSearch {
    pub grid: Grid,
    pub evolve: EvolveConfig,
    /// Spacing of the shape-residual checks; the dispersion time by default.
    pub check_interval: f64,
    /// Starting state; a Gaussian of width `hbar/sigma_G` at rest if `None`.
    pub initial: Option<WaveFunction>,
    /// Store the state at every check.
    pub keep_snapshots: bool,
}

impl SolitonSearch {
    pub fn new(params: &ModelParams) -> Self {
        let grid = default_grid(params);
        Self::on_grid(grid, params)
    }

    pub fn on_grid(grid: Grid, params: &ModelParams) -> Self {
        let mut evolve = EvolveConfig::for_grid(&grid, params);
        evolve.record_interval = 0.0;
        Self { grid, evolve, check_interval: params.dispersion_time(), initial: None, keep_snapshots: false }
    }
}

#[derive(Clone, Debug)]
pub struct SolitonProfile {
    /// Final state with the window centered on its peak.
    pub state: WaveFunction,
    /// `|pi|` on the state's grid.
    pub envelope: Vec<f64>,
    pub velocity: f64,
    pub sigma_pi: f64,
    pub tail: TailFit,
    pub converged: bool,
    pub residual: f64,
    pub history: Vec<f64>,
    /// Diagnostics at `t = 0` and at every check.
    pub samples: Vec<EvolutionSample>,
    /// States at the same times when `keep_snapshots` is set.
    pub snapshots: Vec<(f64, WaveFunction)>,
    pub elapsed: f64,
}

impl SolitonProfile {
    pub fn tail_k(&self) -> f64 {
        self.tail.k
    }
}

/// Evolves until the co-moving envelope changes by less than
/// `evolve.convergence_tol` (L2) over one check interval.
pub fn find_soliton(params: &ModelParams, rate: &LocalizationRate, search: &SolitonSearch) -> Result<SolitonProfile> {
    let cfg = &search.evolve;
    cfg.validate(&search.grid, params)?;
    if !(search.check_interval > 0.0) {
        return Err(Error::InvalidParameter("check interval must be positive".into()));
    }
    let mut psi = match &search.initial {
        Some(p) => p.clone(),
        None => WaveFunction::gaussian(search.grid, search.grid.center(), params.localization_scale(), 0.0, params.hbar())?,
    };
    let mut evolver = Evolver::new(*psi.grid(), params, rate, cfg.potential_slope)?;
    let steps_per_check = ((search.check_interval / cfg.dt).ceil() as usize).max(1);
    let interval = steps_per_check as f64 * cfg.dt;
    let mut history = Vec::new();
    let mut t = 0.0;
    let mut prev = psi.clone();
    let mut since_best = 0;
    let mut samples = vec![EvolutionSample {
        t: 0.0,
        norm_drift: 0.0,
        centroid: psi.centroid(),
        sigma: psi.spread(),
        shape_residual: f64::NAN,
    }];
    let mut snapshots = Vec::new();
    if search.keep_snapshots {
        snapshots.push((0.0, psi.clone()));
    }
    loop {
        let mut drift = 0.0;
        for i in 1..=steps_per_check {
            drift = evolver.step(&mut psi, cfg.dt)?;
            if cfg.recenter && i % 16 == 0 {
                maybe_recenter(&mut psi);
            }
        }
        t += interval;
        let residual = comoving_residual(&psi, &prev)?;
        let velocity = (psi.centroid() - prev.centroid()) / interval;
        samples.push(EvolutionSample { t, norm_drift: drift, centroid: psi.centroid(), sigma: psi.spread(), shape_residual: residual });
        if search.keep_snapshots {
            snapshots.push((t, psi.clone()));
        }
        since_best = if history.iter().all(|&h| residual < h) { 0 } else { since_best + 1 };
        history.push(residual);
        if residual < cfg.convergence_tol {
            psi.center_window_on_peak();
            let tail = fit_tail(&psi, 1e-8, 1e-3);
            return Ok(SolitonProfile {
                envelope: psi.envelope(),
                sigma_pi: psi.spread(),
                state: psi,
                velocity,
                tail,
                converged: true,
                residual,
                history,
                samples,
                snapshots,
                elapsed: t,
            });
        }
        // the residual may oscillate while it decays; give up once it stalls
        if history.len() > 3 && since_best >= STALL_CHECKS {
            return Err(Error::NonConvergence {
                reason: format!("shape residual has not improved for {STALL_CHECKS} checks at t = {t}"),
                history,
            });
        }
        if t >= cfg.t_max {
            return Err(Error::NonConvergence { reason: format!("t_max = {} reached", cfg.t_max), history });
        }
        prev = psi.clone();
    }
}

/// Phase-space translation `psi(x) -> exp(i u x / hbar) psi(x - s)`.
pub fn galilei_boost(psi: &WaveFunction, s: f64, u: f64, hbar: f64) -> Result<WaveFunction> {
    let grid = *psi.grid();
    if !(s.abs() < 0.25 * grid.length()) {
        return Err(Error::Boost(format!("shift {s} must stay below a quarter of the domain")));
    }
    let mut amps = psi.amps().to_vec();
    if s != 0.0 {
        Spectral::new(grid.n()).translate(&mut amps, &grid.wavenumbers(), s);
    }
    if u != 0.0 {
        for (i, a) in amps.iter_mut().enumerate() {
            *a *= C64::from_polar(1.0, u * grid.x(i) / hbar);
        }
    }
    let mut out = WaveFunction::from_raw(grid, amps)?;
    out.normalize();
    let tail = out.edge_mass(1.0 / 32.0);
    if tail > 1e-10 {
        return Err(Error::Boost(format!("boosted state has tail mass {tail:e} at the boundary (aliasing)")));
    }
    Ok(out)
}

/// Grid and step choices for one kappa of a width sweep (natural units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub n: usize,
    /// Domain length in units of `hbar/sigma_G` for `kappa <= 1`; grows
    /// linearly with kappa above.
    pub domain: f64,
    pub dt_factor: f64,
    pub convergence_tol: f64,
    /// Lower bound on the simulated time, in units of `1/gamma`.
    pub min_time: f64,
    /// Simulated time limit in dispersion times.
    pub max_dispersion_times: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { n: 4096, domain: 80.0, dt_factor: 0.1, convergence_tol: 1e-6, min_time: 400.0, max_dispersion_times: 4.0 }
    }
}

impl SweepOptions {
    pub fn search_for(&self, kappa: f64) -> Result<(ModelParams, SolitonSearch)> {
        let params = ModelParams::natural(kappa)?;
        let length = self.domain * kappa.max(1.0) * params.localization_scale();
        let grid = Grid::centered(self.n, length)?;
        let mut search = SolitonSearch::on_grid(grid, &params);
        search.evolve.dt = self.dt_factor * grid.dx() * grid.dx();
        search.evolve.convergence_tol = self.convergence_tol;
        search.evolve.t_max = (self.max_dispersion_times * params.dispersion_time()).max(self.min_time);
        // at large kappa the dispersion time is shorter than the relaxation
        search.check_interval = params.dispersion_time().max(1.0);
        Ok((params, search))
    }
}

/// One row of a width sweep: `sigma_pi sigma_G / hbar` or the failure.
#[derive(Debug)]
pub struct WidthRow {
    pub kappa: f64,
    pub result: Result<WidthMeasurement>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthMeasurement {
    pub width: f64,
    pub residual: f64,
    pub tail_k: f64,
    pub elapsed: f64,
}

pub fn measure_width(kappa: f64, opts: &SweepOptions) -> Result<WidthMeasurement> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let (params, search) = opts.search_for(kappa)?;
    let profile = find_soliton(&params, &LocalizationRate::gaussian(&params), &search)?;
    Ok(WidthMeasurement {
        width: profile.sigma_pi / params.localization_scale(),
        residual: profile.residual,
        tail_k: profile.tail.k,
        elapsed: profile.elapsed,
    })
}

/// Dimensionless soliton width for every kappa; rows fail independently.
pub fn width_curve(kappas: &[f64], opts: &SweepOptions) -> Vec<WidthRow> {
    kappas
        .par_iter()
        .map(|&kappa| WidthRow { kappa, result: measure_width(kappa, opts) })
        .collect()
}
