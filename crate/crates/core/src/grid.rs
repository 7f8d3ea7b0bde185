//! Uniform periodic grids, FFT plumbing and the [`WaveFunction`] type.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// A uniform periodic 1D grid with `n` points starting at `x0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    x0: f64,
    dx: f64,
}

impl Grid {
    pub fn new(n: usize, x0: f64, dx: f64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size must be a power of two >= 2, got {n}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite()) || !x0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive and finite (dx = {dx}, x0 = {x0})"
            )));
        }
        Ok(Self { n, x0, dx })
    }

    /// Grid of `n` points covering `[-length/2, length/2)`.
    pub fn centered(n: usize, length: f64) -> Result<Self> {
        Self::new(n, -0.5 * length, length / n as f64)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn length(&self) -> f64 {
        self.n as f64 * self.dx
    }

    /// Midpoint of the covered interval.
    pub fn center(&self) -> f64 {
        self.x0 + 0.5 * self.length()
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let dk = 2.0 * PI / self.length();
        (0..self.n)
            .map(|j| {
                let m = if j < self.n / 2 { j as isize } else { j as isize - self.n as isize };
                m as f64 * dk
            })
            .collect()
    }

    /// Signed periodic offset (minimal image) of index difference `j`.
    #[inline]
    pub fn offset(&self, j: usize) -> f64 {
        let m = if j <= self.n / 2 { j as isize } else { j as isize - self.n as isize };
        m as f64 * self.dx
    }

    /// Same point count and spacing; the origin may differ.
    pub fn same_shape(&self, other: &Grid) -> bool {
        self.n == other.n && (self.dx - other.dx).abs() <= 1e-12 * self.dx
    }

    pub fn shifted_cells(&self, cells: i64) -> Grid {
        Grid { x0: self.x0 + cells as f64 * self.dx, ..*self }
    }
}

/// Forward/inverse FFT pair with private scratch. The inverse is normalized.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self { n, fwd, inv, scratch: vec![C64::new(0.0, 0.0); len] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&mut self, data: &mut [C64]) {
        debug_assert_eq!(data.len(), self.n);
        self.fwd.process_with_scratch(data, &mut self.scratch);
    }

    pub fn inverse(&mut self, data: &mut [C64]) {
        debug_assert_eq!(data.len(), self.n);
        self.inv.process_with_scratch(data, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Multiplies the spectrum of `data` by `mult` in place.
    pub fn apply_multiplier(&mut self, data: &mut [C64], mult: &[C64]) {
        self.forward(data);
        for (v, m) in data.iter_mut().zip(mult) {
            *v *= m;
        }
        self.inverse(data);
    }

    /// Band-limited translation `f(x) -> f(x - s)`.
    pub fn translate(&mut self, data: &mut [C64], wavenumbers: &[f64], s: f64) {
        self.forward(data);
        for (v, &k) in data.iter_mut().zip(wavenumbers) {
            *v *= C64::from_polar(1.0, -k * s);
        }
        self.inverse(data);
    }
}

/// Complex amplitudes on a uniform periodic grid, normalized so that
/// `sum |psi_i|^2 dx == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    amps: Vec<C64>,
}

impl WaveFunction {
    /// Wraps amplitudes without normalizing.
    pub fn from_raw(grid: Grid, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != grid.n() {
            return Err(Error::Dimension { expected: grid.n(), got: amps.len() });
        }
        Ok(Self { grid, amps })
    }

    pub fn normalized(grid: Grid, amps: Vec<C64>) -> Result<Self> {
        let mut wf = Self::from_raw(grid, amps)?;
        let norm = wf.norm_sq();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter("wave function has zero or non-finite norm".into()));
        }
        wf.normalize();
        Ok(wf)
    }

    /// Gaussian packet whose density has standard deviation `width`.
    pub fn gaussian(grid: Grid, center: f64, width: f64, momentum: f64, hbar: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParameter(format!("packet width must be positive, got {width}")));
        }
        let amps = grid
            .points()
            .map(|x| {
                let d = x - center;
                C64::from_polar((-d * d / (4.0 * width * width)).exp(), momentum * x / hbar)
            })
            .collect();
        Self::normalized(grid, amps)
    }

    /// Normalized superposition `sum_i c_i phi_i`.
    pub fn superpose(terms: &[(C64, &WaveFunction)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty superposition".into()))?
            .1;
        let grid = first.grid;
        let mut amps = vec![C64::new(0.0, 0.0); grid.n()];
        for (c, wf) in terms {
            if wf.grid != grid {
                return Err(Error::Dimension { expected: grid.n(), got: wf.grid.n() });
            }
            for (a, b) in amps.iter_mut().zip(&wf.amps) {
                *a += c * b;
            }
        }
        Self::normalized(grid, amps)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub(crate) fn amps_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amps(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// Rescales to unit norm and returns the norm before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let norm = self.norm_sq();
        let s = 1.0 / norm.sqrt();
        for a in &mut self.amps {
            *a *= s;
        }
        norm
    }

    pub fn density(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm()).collect()
    }

    pub fn centroid(&self) -> f64 {
        let dx = self.grid.dx();
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| self.grid.x(i) * a.norm_sqr())
            .sum::<f64>()
            * dx
            / self.norm_sq()
    }

    pub fn variance(&self) -> f64 {
        let c = self.centroid();
        let dx = self.grid.dx();
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let d = self.grid.x(i) - c;
                d * d * a.norm_sqr()
            })
            .sum::<f64>()
            * dx
            / self.norm_sq()
    }

    pub fn spread(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, a) in self.amps.iter().enumerate() {
            let v = a.norm_sqr();
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }

    /// `<self|other> = sum conj(self) other dx`.
    pub fn inner(&self, other: &WaveFunction) -> Result<C64> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::Dimension { expected: self.grid.n(), got: other.grid.n() });
        }
        let s: C64 = self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.grid.dx())
    }

    /// L2 distance `||self - other||`.
    pub fn distance(&self, other: &WaveFunction) -> Result<f64> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::Dimension { expected: self.grid.n(), got: other.grid.n() });
        }
        let s: f64 = self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm_sqr()).sum();
        Ok((s * self.grid.dx()).sqrt())
    }

    /// Moves the grid window by `cells` while keeping the physical state fixed:
    /// the amplitudes are rotated and `x0` advances by `cells * dx`.
    pub fn recenter_window(&mut self, cells: i64) {
        if cells == 0 {
            return;
        }
        let n = self.grid.n() as i64;
        let m = cells.rem_euclid(n) as usize;
        self.amps.rotate_left(m);
        self.grid = self.grid.shifted_cells(cells);
    }

    /// Rolls the window so that the density peak sits at the middle cell.
    pub fn center_window_on_peak(&mut self) -> i64 {
        let cells = self.peak_index() as i64 - (self.grid.n() / 2) as i64;
        self.recenter_window(cells);
        cells
    }

    /// Mass in the outer `fraction` of the window (both edges together).
    pub fn edge_mass(&self, fraction: f64) -> f64 {
        let n = self.grid.n();
        let w = ((n as f64 * fraction).ceil() as usize).clamp(1, n / 2);
        let dx = self.grid.dx();
        let left: f64 = self.amps[..w].iter().map(|a| a.norm_sqr()).sum();
        let right: f64 = self.amps[n - w..].iter().map(|a| a.norm_sqr()).sum();
        (left + right) * dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_power_of_two() {
        assert!(Grid::new(100, 0.0, 1.0).is_err());
        assert!(Grid::new(64, 0.0, 0.0).is_err());
        assert!(Grid::new(64, 0.0, 0.5).is_ok());
    }

    #[test]
    fn wavenumbers_follow_fft_order() {
        let g = Grid::centered(8, 8.0).unwrap();
        let k = g.wavenumbers();
        let dk = 2.0 * PI / 8.0;
        assert_eq!(k[1], dk);
        assert_eq!(k[4], -4.0 * dk);
        assert_eq!(k[7], -dk);
    }

    #[test]
    fn gaussian_moments() {
        let g = Grid::centered(1024, 40.0).unwrap();
        let wf = WaveFunction::gaussian(g, 1.5, 0.8, 0.0, 1.0).unwrap();
        assert!((wf.norm_sq() - 1.0).abs() < 1e-12);
        assert!((wf.centroid() - 1.5).abs() < 1e-10);
        assert!((wf.spread() - 0.8).abs() < 1e-10);
    }

    #[test]
    fn recenter_keeps_physical_state() {
        let g = Grid::centered(256, 32.0).unwrap();
        let mut wf = WaveFunction::gaussian(g, 6.0, 1.0, 0.3, 1.0).unwrap();
        let c0 = wf.centroid();
        let moved = wf.center_window_on_peak();
        assert_ne!(moved, 0);
        assert!((wf.centroid() - c0).abs() < 1e-9);
        assert!((wf.grid().center() - 6.0).abs() <= wf.grid().dx());
    }

    #[test]
    fn spectral_translation_of_band_limited_packet() {
        let g = Grid::centered(512, 40.0).unwrap();
        let wf = WaveFunction::gaussian(g, 0.0, 1.0, 0.0, 1.0).unwrap();
        let expected = WaveFunction::gaussian(g, 2.37, 1.0, 0.0, 1.0).unwrap();
        let mut amps = wf.amps().to_vec();
        let mut sp = Spectral::new(512);
        sp.translate(&mut amps, &g.wavenumbers(), 2.37);
        let moved = WaveFunction::from_raw(g, amps).unwrap();
        assert!(moved.distance(&expected).unwrap() < 1e-12);
    }
}
