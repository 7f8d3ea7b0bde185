//! Momentum-transfer distributions, the localization rate `F(s)` and the
//! natural units shared by every solver.
//!
//! The collisional-decoherence dissipator is fully characterized by the
//! collision rate `gamma` and the normalized momentum-transfer density
//! `G(q)`. Its position-space action is multiplication of `rho(x, x')` by
//! `-F(x - x')` with
//!
//! ```text
//! F(s) = gamma - gamma * Re ∫ dq G(q) exp(i q s / hbar)
//! ```
//!
//! which vanishes at `s = 0` and saturates at `gamma` for a smooth `G`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Grid, Spectral, C64};

/// Physical parameters of the collisional-decoherence model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    gamma: f64,
    sigma_g: f64,
    mass: f64,
    hbar: f64,
}

impl ModelParams {
    pub fn new(gamma: f64, sigma_g: f64, mass: f64, hbar: f64) -> Result<Self> {
        for (name, v) in [("gamma", gamma), ("sigma_G", sigma_g), ("mass", mass), ("hbar", hbar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { gamma, sigma_g, mass, hbar })
    }

    /// Parameters in natural units (`hbar = m = gamma = 1`) for a given kappa.
    pub fn natural(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        Self::new(1.0, kappa.sqrt(), 1.0, 1.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma_g(&self) -> f64 {
        self.sigma_g
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// `sigma_G^2 / (m hbar gamma)`, the single dimensionless knob.
    pub fn kappa(&self) -> f64 {
        self.sigma_g * self.sigma_g / (self.mass * self.hbar * self.gamma)
    }

    /// Localization length scale `hbar / sigma_G`.
    pub fn localization_scale(&self) -> f64 {
        self.hbar / self.sigma_g
    }

    /// Free-dispersion time `m (hbar/sigma_G)^2 / hbar` of a packet at the
    /// localization scale; equals `1 / (kappa gamma)`.
    pub fn dispersion_time(&self) -> f64 {
        self.mass * self.hbar / (self.sigma_g * self.sigma_g)
    }

    /// Gaussian momentum-transfer distribution with this model's `sigma_G`.
    pub fn gaussian_distribution(&self) -> MomentumDistribution {
        MomentumDistribution::Gaussian { sigma: self.sigma_g }
    }
}

/// Conversion factors between physical and natural units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Units {
    pub length: f64,
    pub time: f64,
    pub momentum: f64,
    pub mass: f64,
    pub action: f64,
}

impl Units {
    /// Maps natural-unit parameters back to physical ones.
    pub fn restore(&self, natural: &ModelParams) -> ModelParams {
        ModelParams {
            gamma: natural.gamma / self.time,
            sigma_g: natural.sigma_g * self.momentum,
            mass: natural.mass * self.mass,
            hbar: natural.hbar * self.action,
        }
    }
}

/// Parameters expressed with `hbar = m = gamma = 1`, so `sigma_G = sqrt(kappa)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nondimensional {
    pub params: ModelParams,
    pub units: Units,
}

pub fn nondimensionalize(params: &ModelParams) -> Nondimensional {
    let time = 1.0 / params.gamma;
    let length = (params.hbar / (params.mass * params.gamma)).sqrt();
    let momentum = (params.mass * params.hbar * params.gamma).sqrt();
    let units = Units { length, time, momentum, mass: params.mass, action: params.hbar };
    let natural = ModelParams {
        gamma: params.gamma * time,
        sigma_g: params.sigma_g / momentum,
        mass: 1.0,
        hbar: 1.0,
    };
    Nondimensional { params: natural, units }
}

/// Tabulated momentum-transfer density on an increasing `q` grid,
/// linearly interpolated and zero outside the table.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedDistribution {
    q: Vec<f64>,
    w: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedDistribution {
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    fn density(&self, q: f64) -> f64 {
        let n = self.q.len();
        if q < self.q[0] || q > self.q[n - 1] {
            return 0.0;
        }
        let i = match self.q.partition_point(|&v| v <= q) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let t = (q - self.q[i]) / (self.q[i + 1] - self.q[i]);
        self.w[i] * (1.0 - t) + self.w[i + 1] * t
    }

    fn fourier(&self, k: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.q.len() - 1 {
            let h = self.q[i + 1] - self.q[i];
            let a = self.w[i] * C64::from_polar(1.0, k * self.q[i]);
            let b = self.w[i + 1] * C64::from_polar(1.0, k * self.q[i + 1]);
            acc += 0.5 * h * (a + b);
        }
        acc
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.q[i - 1] + t * (self.q[i] - self.q[i - 1])
    }
}

/// Normalized momentum-transfer density `G(q)`.
#[derive(Clone, Debug, PartialEq)]
pub enum MomentumDistribution {
    Gaussian { sigma: f64 },
    Tabulated(TabulatedDistribution),
}

impl MomentumDistribution {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self::Gaussian { sigma })
    }

    /// Tabulated density; rejected unless it integrates to one within 1e-10
    /// under the trapezoid rule.
    pub fn tabulated(q: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if q.len() != w.len() || q.len() < 2 {
            return Err(Error::Config("tabulated G needs matching q and weight arrays of length >= 2".into()));
        }
        if q.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::Config("tabulated q grid must be strictly increasing".into()));
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("tabulated G must be non-negative".into()));
        }
        let mut cdf = Vec::with_capacity(q.len());
        cdf.push(0.0);
        for i in 1..q.len() {
            let prev = cdf[i - 1];
            cdf.push(prev + 0.5 * (q[i] - q[i - 1]) * (w[i] + w[i - 1]));
        }
        let total = *cdf.last().unwrap();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("tabulated G is not normalized: integral = {total}")));
        }
        Ok(Self::Tabulated(TabulatedDistribution { q, w, cdf }))
    }

    pub fn density(&self, q: f64) -> f64 {
        match self {
            Self::Gaussian { sigma } => {
                let z = q / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            Self::Tabulated(t) => t.density(q),
        }
    }

    /// `∫ dq G(q) exp(i q k)`.
    pub fn fourier(&self, k: f64) -> C64 {
        match self {
            Self::Gaussian { sigma } => C64::new((-0.5 * sigma * sigma * k * k).exp(), 0.0),
            Self::Tabulated(t) => t.fourier(k),
        }
    }

    /// Symmetric densities give a real, even `F`. Asymmetric tables are
    /// accepted but only the real part of the transform enters `F`.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Self::Gaussian { .. } => true,
            Self::Tabulated(t) => {
                let n = t.q.len();
                (0..n).all(|i| {
                    (t.q[i] + t.q[n - 1 - i]).abs() <= 1e-12 * t.q[n - 1].abs().max(1.0)
                        && (t.w[i] - t.w[n - 1 - i]).abs() <= 1e-12
                })
            }
        }
    }

    /// Standard deviation of the transfer.
    pub fn std_dev(&self) -> f64 {
        match self {
            Self::Gaussian { sigma } => *sigma,
            Self::Tabulated(t) => {
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for i in 0..t.q.len() - 1 {
                    let h = t.q[i + 1] - t.q[i];
                    m1 += 0.5 * h * (t.q[i] * t.w[i] + t.q[i + 1] * t.w[i + 1]);
                    m2 += 0.5 * h * (t.q[i].powi(2) * t.w[i] + t.q[i + 1].powi(2) * t.w[i + 1]);
                }
                (m2 - m1 * m1).max(0.0).sqrt()
            }
        }
    }

    /// Interval outside of which the density is numerically zero.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Gaussian { sigma } => (-12.0 * sigma, 12.0 * sigma),
            Self::Tabulated(t) => (t.q[0], t.q[t.q.len() - 1]),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian { sigma } => Normal::new(0.0, *sigma).expect("positive sigma").sample(rng),
            Self::Tabulated(t) => t.sample(rng),
        }
    }
}

/// The localization rate `F(s)` of a collision model. `gamma` may be zero,
/// which switches the decoherence off entirely.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationRate {
    gamma: f64,
    hbar: f64,
    dist: MomentumDistribution,
}

impl LocalizationRate {
    pub fn new(params: &ModelParams, dist: MomentumDistribution) -> Self {
        Self { gamma: params.gamma(), hbar: params.hbar(), dist }
    }

    /// Gaussian `G` with the model's `sigma_G`.
    pub fn gaussian(params: &ModelParams) -> Self {
        Self::new(params, params.gaussian_distribution())
    }

    /// `F == 0`: no collisions at all.
    pub fn disabled(params: &ModelParams) -> Self {
        Self { gamma: 0.0, hbar: params.hbar(), dist: params.gaussian_distribution() }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn distribution(&self) -> &MomentumDistribution {
        &self.dist
    }

    pub fn is_disabled(&self) -> bool {
        self.gamma == 0.0
    }

    /// `Re ∫ dq G(q) exp(i q s / hbar)`.
    pub fn correlation(&self, s: f64) -> f64 {
        self.dist.fourier(s / self.hbar).re
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.dist {
            // 1 - exp(-a) computed without cancellation for small s
            MomentumDistribution::Gaussian { sigma } => {
                let z = sigma * s / self.hbar;
                -self.gamma * (-0.5 * z * z).exp_m1()
            }
            _ => self.gamma * (1.0 - self.correlation(s)),
        }
    }
}

/// `F(s)` for the given model and momentum-transfer distribution.
pub fn localization_rate(params: &ModelParams, dist: &MomentumDistribution, s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::InvalidParameter(format!("separation must be finite, got {s}")));
    }
    Ok(LocalizationRate::new(params, dist.clone()).eval(s))
}

/// Fast periodic convolution `(g * F)(x) = ∫ dy g(y) F(x - y)` on a fixed grid.
///
/// `F` is sampled at minimal-image offsets, so the result equals the direct
/// sum `sum_j g_j F(x_i - x_j) dx` with periodic differences.
#[derive(Clone, Debug)]
pub struct RateConvolver {
    grid: Grid,
    gamma: f64,
    kernel: Vec<f64>,
    kernel_hat: Vec<C64>,
    spectral: Spectral,
    buf: Vec<C64>,
}

impl RateConvolver {
    /// Fails when the non-constant part of `F` has not decayed below
    /// `1e-12 gamma` at half the domain, since the periodic images would then
    /// leak into the convolution.
    pub fn new(grid: Grid, rate: &LocalizationRate) -> Result<Self> {
        let n = grid.n();
        let kernel: Vec<f64> = (0..n).map(|j| rate.eval(grid.offset(j))).collect();
        if !rate.is_disabled() {
            let gap = (rate.gamma() - rate.eval(0.5 * grid.length())).abs() / rate.gamma();
            if gap > 1e-12 {
                return Err(Error::Config(format!(
                    "domain too small: F(L/2) differs from gamma by {gap:e} (relative); enlarge the grid"
                )));
            }
        }
        let mut kernel_hat: Vec<C64> = kernel.iter().map(|&v| C64::new(v, 0.0)).collect();
        let mut spectral = Spectral::new(n);
        spectral.forward(&mut kernel_hat);
        let dx = grid.dx();
        for v in &mut kernel_hat {
            *v *= dx;
        }
        Ok(Self { grid, gamma: rate.gamma(), kernel, kernel_hat, spectral, buf: vec![C64::new(0.0, 0.0); n] })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `F` at the periodic offset of index difference `j`.
    #[inline]
    pub fn kernel(&self, j: usize) -> f64 {
        self.kernel[j % self.grid.n()]
    }

    pub fn kernel_samples(&self) -> &[f64] {
        &self.kernel
    }

    pub fn convolve_into(&mut self, g: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.n();
        if g.len() != n {
            return Err(Error::Dimension { expected: n, got: g.len() });
        }
        if out.len() != n {
            return Err(Error::Dimension { expected: n, got: out.len() });
        }
        if self.gamma == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        for (b, &v) in self.buf.iter_mut().zip(g) {
            *b = C64::new(v, 0.0);
        }
        self.spectral.forward(&mut self.buf);
        for (b, k) in self.buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.spectral.inverse(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
        Ok(())
    }

    pub fn convolve(&mut self, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; g.len()];
        self.convolve_into(g, &mut out)?;
        Ok(out)
    }
}

/// One-shot spectral convolution `g * F` on `grid`.
pub fn convolve_with_f(g: &[f64], grid: &Grid, rate: &LocalizationRate) -> Result<Vec<f64>> {
    RateConvolver::new(*grid, rate)?.convolve(g)
}
