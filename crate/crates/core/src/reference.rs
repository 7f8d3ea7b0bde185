//! Exact propagation of the position-space density matrix under
//!
//! ```text
//! d/dt rho(x, x') = (i hbar / 2m)(d_x^2 - d_x'^2) rho - F(x - x') rho,
//! ```
//!
//! the oracle for trajectory ensembles and decoherence checks.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{Grid, Spectral, WaveFunction, C64};
use crate::kernels::{LocalizationRate, ModelParams, RateConvolver};

/// Largest grid accepted by the dense oracle routines.
pub const MAX_ORACLE_POINTS: usize = 256;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;

/// `rho(x_i, x_j)` as a dense matrix, normalized so that
/// `sum_i rho_ii dx = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    grid: Grid,
    data: DMatrix<C64>,
}

impl DensityMatrix {
    /// Checks Hermiticity and unit trace.
    pub fn new(grid: Grid, data: DMatrix<C64>) -> Result<Self> {
        let n = grid.n();
        if data.nrows() != n || data.ncols() != n {
            return Err(Error::Dimension { expected: n, got: data.nrows().max(data.ncols()) });
        }
        let rho = Self { grid, data };
        let herm = rho.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!("density matrix trace is {tr}, expected 1")));
        }
        Ok(rho)
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, data: DMatrix<C64>) -> Self {
        Self { grid, data }
    }

    pub fn pure(psi: &WaveFunction) -> Self {
        Self::mixture(&[(1.0, psi)]).expect("single normalized state")
    }

    /// `sum_k w_k |psi_k><psi_k|` with `w_k >= 0` summing to one.
    pub fn mixture(terms: &[(f64, &WaveFunction)]) -> Result<Self> {
        let first = terms.first().ok_or(Error::EmptyEnsemble)?;
        let grid = *first.1.grid();
        let n = grid.n();
        let total: f64 = terms.iter().map(|t| t.0).sum();
        if terms.iter().any(|t| !(t.0 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("mixture weights must be >= 0 and sum to 1".into()));
        }
        let mut data = DMatrix::<C64>::zeros(n, n);
        for (w, psi) in terms {
            if !psi.grid().same_shape(&grid) {
                return Err(Error::Dimension { expected: n, got: psi.grid().n() });
            }
            let a = psi.amps();
            let norm = psi.norm_sq();
            for j in 0..n {
                let cj = a[j].conj() * (*w / norm);
                for i in 0..n {
                    data[(i, j)] += a[i] * cj;
                }
            }
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn element(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.data.diagonal().iter().map(|v| v.re).sum::<f64>() * self.grid.dx()
    }

    /// `Tr rho^2 = sum |rho_ij|^2 dx^2`.
    pub fn purity(&self) -> f64 {
        let dx = self.grid.dx();
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * dx * dx
    }

    /// Largest `|rho_ij - conj(rho_ji)|` relative to the largest element.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.grid.n();
        let scale = self.data.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..j {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst / scale
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.data.diagonal().iter().map(|v| v.re).collect()
    }

    /// Probability mass within `fraction` of the domain at either edge.
    pub fn edge_mass(&self, fraction: f64) -> f64 {
        let n = self.grid.n();
        let m = ((n as f64 * fraction).ceil() as usize).max(1).min(n / 2);
        let d = self.diagonal();
        (d[..m].iter().sum::<f64>() + d[n - m..].iter().sum::<f64>()) * self.grid.dx()
    }

    /// `|rho(x_p + m dx, x_p - m dx)|` for `m = 0..`, i.e. the antidiagonal
    /// through the density peak, as `(s, value)` with `s = 2 m dx`.
    pub fn antidiagonal(&self) -> Vec<(f64, f64)> {
        let n = self.grid.n();
        let d = self.diagonal();
        let p = d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
        let reach = p.min(n - 1 - p);
        (0..=reach)
            .map(|m| (2.0 * m as f64 * self.grid.dx(), self.data[(p + m, p - m)].norm()))
            .collect()
    }
}

/// Settings for [`evolve_master`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MasterConfig {
    pub dt: f64,
    /// Disabling the kinetic term leaves pure decoherence, which is applied
    /// in a single exact multiplication.
    pub kinetic: bool,
    /// Maximal probability allowed near the edges before the run is aborted.
    pub tail_limit: f64,
    pub edge_fraction: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self { dt: 1e-2, kinetic: true, tail_limit: 1e-4, edge_fraction: 1.0 / 32.0 }
    }
}

/// Reusable propagator for one grid and model.
#[derive(Clone, Debug)]
pub struct MasterSolver {
    grid: Grid,
    cfg: MasterConfig,
    /// `F(x_i - x_j)` indexed by `i - j + n - 1`.
    kernel: Vec<f64>,
    hbar_over_m: f64,
    k: Vec<f64>,
    spectral: Spectral,
}

impl MasterSolver {
    pub fn new(grid: Grid, cfg: MasterConfig, params: &ModelParams, rate: &LocalizationRate) -> Result<Self> {
        if grid.n() > MAX_ORACLE_POINTS {
            return Err(Error::InvalidParameter(format!(
                "reference solver is limited to {MAX_ORACLE_POINTS} points, got {}",
                grid.n()
            )));
        }
        if !(cfg.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", cfg.dt)));
        }
        // same domain-size requirement as the pure-state solver
        RateConvolver::new(grid, rate)?;
        let n = grid.n() as i64;
        let kernel = (-(n - 1)..n).map(|d| rate.eval(d as f64 * grid.dx())).collect();
        Ok(Self {
            grid,
            cfg,
            kernel,
            hbar_over_m: params.hbar() / params.mass(),
            k: grid.wavenumbers(),
            spectral: Spectral::new(grid.n()),
        })
    }

    fn f_at(&self, i: usize, j: usize) -> f64 {
        self.kernel[i + self.grid.n() - 1 - j]
    }

    fn decohere(&self, data: &mut DMatrix<C64>, t: f64) {
        let n = self.grid.n();
        for j in 0..n {
            for i in 0..n {
                data[(i, j)] *= (-self.f_at(i, j) * t).exp();
            }
        }
    }

    fn columns_multiplier(&mut self, data: &mut DMatrix<C64>, mult: &[C64]) {
        for mut col in data.column_iter_mut() {
            let s = col.as_mut_slice();
            self.spectral.apply_multiplier(s, mult);
        }
    }

    /// `rho -> U rho U^dagger` with `U = exp(-i hbar k^2 t / 2m)`.
    fn kinetic(&mut self, data: &mut DMatrix<C64>, t: f64) {
        let c = 0.5 * self.hbar_over_m * t;
        let mult: Vec<C64> = self.k.iter().map(|&k| C64::from_polar(1.0, -c * k * k)).collect();
        self.columns_multiplier(data, &mult);
        data.adjoint_mut();
        self.columns_multiplier(data, &mult);
        data.adjoint_mut();
    }

    fn check_edges(&self, rho: &DensityMatrix) -> Result<()> {
        let tail = rho.edge_mass(self.cfg.edge_fraction);
        if tail > self.cfg.tail_limit {
            return Err(Error::BoundaryContamination { tail_mass: tail, limit: self.cfg.tail_limit });
        }
        Ok(())
    }

    /// Advances `rho` by `t`, in steps no longer than `cfg.dt`.
    pub fn evolve(&mut self, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
        if !rho.grid().same_shape(&self.grid) {
            return Err(Error::Dimension { expected: self.grid.n(), got: rho.grid().n() });
        }
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("evolution time must be >= 0, got {t}")));
        }
        let mut data = rho.data.clone();
        if !self.cfg.kinetic {
            self.decohere(&mut data, t);
            return Ok(DensityMatrix::from_parts_unchecked(*rho.grid(), data));
        }
        let steps = (t / self.cfg.dt).ceil() as usize;
        let h = if steps > 0 { t / steps as f64 } else { 0.0 };
        let mut out = DensityMatrix::from_parts_unchecked(*rho.grid(), data);
        for _ in 0..steps {
            self.decohere(&mut out.data, 0.5 * h);
            self.kinetic(&mut out.data, h);
            self.decohere(&mut out.data, 0.5 * h);
            self.check_edges(&out)?;
        }
        Ok(out)
    }

    /// States at each of the increasing `times`, starting from `rho0` at 0.
    pub fn evolve_to_times(&mut self, rho0: &DensityMatrix, times: &[f64]) -> Result<Vec<DensityMatrix>> {
        let mut out = Vec::with_capacity(times.len());
        let mut current = rho0.clone();
        let mut t = 0.0;
        for &target in times {
            if target < t {
                return Err(Error::InvalidParameter("snapshot times must be increasing".into()));
            }
            current = self.evolve(&current, target - t)?;
            t = target;
            out.push(current.clone());
        }
        Ok(out)
    }

    /// The generator `L(rho)` evaluated spectrally.
    pub fn generator(&mut self, rho: &DensityMatrix) -> DMatrix<C64> {
        let n = self.grid.n();
        let lap: Vec<C64> = self.k.iter().map(|&k| C64::new(-k * k, 0.0)).collect();
        // d_x^2 rho acts on columns; rho d_x'^2 on rows (the operator is real symmetric)
        let mut dx2 = rho.data.clone();
        self.columns_multiplier(&mut dx2, &lap);
        let mut dxp2 = rho.data.transpose();
        self.columns_multiplier(&mut dxp2, &lap);
        let dxp2 = dxp2.transpose();
        let c = C64::new(0.0, 0.5 * self.hbar_over_m);
        let mut out = (dx2 - dxp2) * c;
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] -= rho.data[(i, j)] * self.f_at(i, j);
            }
        }
        out
    }
}

pub fn evolve_master(
    rho0: &DensityMatrix,
    t: f64,
    cfg: MasterConfig,
    params: &ModelParams,
    rate: &LocalizationRate,
) -> Result<DensityMatrix> {
    MasterSolver::new(*rho0.grid(), cfg, params, rate)?.evolve(rho0, t)
}

/// `(1/2) sum |lambda|` over the eigenvalues of `(rho_a - rho_b) dx`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if !a.grid().same_shape(b.grid()) {
        return Err(Error::Dimension { expected: a.grid().n(), got: b.grid().n() });
    }
    let n = a.grid().n();
    if n > MAX_ORACLE_POINTS {
        return Err(Error::InvalidParameter(format!("trace distance limited to {MAX_ORACLE_POINTS} points")));
    }
    let dx = a.grid().dx();
    let diff = (&a.data - &b.data) * C64::new(dx, 0.0);
    let scale = diff.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut herm: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            herm = herm.max((diff[(i, j)] - diff[(j, i)].conj()).norm());
        }
    }
    if herm > 1e-10 * scale.max(1e-300) && herm > 1e-13 {
        return Err(Error::NotHermitian(herm / scale));
    }
    let sym = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    Ok(0.5 * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>())
}

/// Gaussian fit `|rho(x + s/2, x - s/2)| ∝ exp(-pi s^2 / Lambda^2)` at the
/// density peak.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceFit {
    pub lambda: f64,
    pub r_squared: f64,
    /// False when `r_squared < 0.95`; `lambda` is then only indicative.
    pub gaussian: bool,
    /// `(s, |rho| / rho_peak)` along the antidiagonal.
    pub profile: Vec<(f64, f64)>,
}

pub fn coherence_profile(rho: &DensityMatrix) -> Result<CoherenceFit> {
    let anti = rho.antidiagonal();
    let peak = anti.first().map(|p| p.1).unwrap_or(0.0);
    if !(peak > 0.0) {
        return Err(Error::Fit("density vanishes at its peak".into()));
    }
    let profile: Vec<(f64, f64)> = anti.iter().map(|&(s, v)| (s, v / peak)).collect();
    let pts: Vec<(f64, f64)> = profile.iter().filter(|p| p.1 > 1e-6).map(|&(s, v)| (s * s, v.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!("only {} usable antidiagonal points", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Fit("antidiagonal does not decay".into()));
    }
    let icpt = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(CoherenceFit { lambda: (-std::f64::consts::PI / slope).sqrt(), r_squared, gaussian: r_squared >= 0.95, profile })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn setup(n: usize, length: f64, kappa: f64) -> (Grid, ModelParams, LocalizationRate) {
        let p = ModelParams::natural(kappa).unwrap();
        (Grid::centered(n, length).unwrap(), p, LocalizationRate::gaussian(&p))
    }

    fn cat(grid: Grid, d: f64, w: f64) -> WaveFunction {
        let a = WaveFunction::gaussian(grid, -d, w, 0.0, 1.0).unwrap();
        let b = WaveFunction::gaussian(grid, d, w, 0.0, 1.0).unwrap();
        let h = C64::new(0.5f64.sqrt(), 0.0);
        WaveFunction::superpose(&[(h, &a), (h, &b)]).unwrap()
    }

    #[test]
    fn pure_state_invariants() {
        let (grid, _, _) = setup(64, 32.0, 1.0);
        let rho = DensityMatrix::pure(&cat(grid, 6.0, 1.0));
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!(rho.hermiticity_error() < 1e-15);
        let checked = DensityMatrix::new(grid, rho.matrix().clone()).unwrap();
        assert_eq!(checked, rho);
    }

    #[test]
    fn non_hermitian_rejected() {
        let (grid, _, _) = setup(16, 32.0, 1.0);
        let mut m = DMatrix::<C64>::identity(16, 16) * C64::new(1.0 / (16.0 * grid.dx()), 0.0);
        m[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(DensityMatrix::new(grid, m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn decoherence_only_is_exact_exponential() {
        let (grid, p, rate) = setup(64, 32.0, 1.0);
        let rho0 = DensityMatrix::pure(&cat(grid, 6.0, 1.0));
        let cfg = MasterConfig { kinetic: false, ..Default::default() };
        let t = 1.7;
        let rho = evolve_master(&rho0, t, cfg, &p, &rate).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..64 {
            for i in 0..64 {
                let s = grid.x(i) - grid.x(j);
                let want = rho0.element(i, j) * (-rate.eval(s) * t).exp();
                let got = rho.element(i, j);
                if want.norm() > 1e-300 {
                    worst = worst.max((got - want).norm() / want.norm());
                }
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn free_gaussian_spreads_analytically() {
        let p = ModelParams::natural(1.0).unwrap();
        let rate = LocalizationRate::disabled(&p);
        let grid = Grid::centered(128, 64.0).unwrap();
        let s0 = 1.2;
        let rho0 = DensityMatrix::pure(&WaveFunction::gaussian(grid, 0.0, s0, 0.0, 1.0).unwrap());
        let rho = evolve_master(&rho0, 4.0, MasterConfig::default(), &p, &rate).unwrap();
        let d = rho.diagonal();
        let var: f64 = d.iter().enumerate().map(|(i, v)| grid.x(i).powi(2) * v).sum::<f64>() * grid.dx();
        let expected = s0 * s0 + (4.0 / (2.0 * s0)).powi(2);
        assert!((var / expected - 1.0).abs() < 1e-3);
        assert!((rho.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn invariants_and_monotone_purity() {
        let (grid, p, rate) = setup(128, 64.0, 1.0);
        let rho0 = DensityMatrix::pure(&cat(grid, 5.0, 1.0));
        let mut solver = MasterSolver::new(grid, MasterConfig { dt: 0.02, ..Default::default() }, &p, &rate).unwrap();
        let times: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
        let snaps = solver.evolve_to_times(&rho0, &times).unwrap();
        let mut prev = 1.0;
        for rho in &snaps {
            assert!(rho.hermiticity_error() < 1e-12);
            assert!((rho.trace() - 1.0).abs() < 1e-10);
            let pur = rho.purity();
            assert!(pur <= prev + 1e-12);
            prev = pur;
        }
        // below the two-packet mixture value: each packet also loses
        // internal coherence since its width is comparable to hbar/sigma_G
        assert!(prev < 0.5, "{prev}");
    }

    #[test]
    fn cat_coherence_decays_at_saturated_rate() {
        let (grid, p, rate) = setup(64, 32.0, 1.0);
        let rho0 = DensityMatrix::pure(&cat(grid, 6.0, 1.0));
        let t = 1.0;
        let rho = evolve_master(&rho0, t, MasterConfig { dt: 0.01, ..Default::default() }, &p, &rate).unwrap();
        let block = |r: &DensityMatrix| -> f64 {
            let mut s = 0.0;
            for j in 0..32 {
                for i in 32..64 {
                    s += r.element(i, j).norm_sqr();
                }
            }
            s.sqrt()
        };
        let ratio = block(&rho) / block(&rho0);
        assert!((ratio / (-t).exp() - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn splitting_is_second_order() {
        let (grid, p, rate) = setup(64, 32.0, 1.0);
        let rho0 = DensityMatrix::pure(&cat(grid, 4.0, 0.8));
        let run = |dt: f64| evolve_master(&rho0, 0.8, MasterConfig { dt, ..Default::default() }, &p, &rate).unwrap();
        let fine = run(0.0025);
        let e1 = trace_distance(&run(0.04), &fine).unwrap();
        let e2 = trace_distance(&run(0.02), &fine).unwrap();
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn boundary_contamination_detected() {
        let p = ModelParams::natural(1.0).unwrap();
        let rate = LocalizationRate::gaussian(&p);
        let grid = Grid::centered(64, 24.0).unwrap();
        let rho0 = DensityMatrix::pure(&WaveFunction::gaussian(grid, 0.0, 0.5, 0.0, 1.0).unwrap());
        let r = evolve_master(&rho0, 20.0, MasterConfig::default(), &p, &rate);
        assert!(matches!(r, Err(Error::BoundaryContamination { .. })));
    }

    #[test]
    fn trace_distance_cases() {
        let (grid, _, _) = setup(64, 32.0, 1.0);
        let a = WaveFunction::gaussian(grid, -6.0, 1.0, 0.0, 1.0).unwrap();
        let b = WaveFunction::gaussian(grid, 6.0, 1.0, 0.0, 1.0).unwrap();
        let ra = DensityMatrix::pure(&a);
        let rb = DensityMatrix::pure(&b);
        assert_eq!(trace_distance(&ra, &ra).unwrap(), 0.0);
        // overlap exp(-18) is far below the tolerance
        assert!((trace_distance(&ra, &rb).unwrap() - 1.0).abs() < 1e-10);
        let eps = 0.13;
        let mix = DensityMatrix::mixture(&[(1.0 - eps, &a), (eps, &b)]).unwrap();
        assert!((trace_distance(&ra, &mix).unwrap() - eps).abs() < 1e-8);
    }

    #[test]
    fn trace_distance_against_pure_state_formula() {
        // for pure states D = sqrt(1 - |<a|b>|^2)
        let (grid, _, _) = setup(64, 32.0, 1.0);
        let a = WaveFunction::gaussian(grid, -1.0, 1.0, 0.3, 1.0).unwrap();
        let b = WaveFunction::gaussian(grid, 0.5, 1.4, -0.2, 1.0).unwrap();
        let ov = a.inner(&b).unwrap().norm_sqr();
        let d = trace_distance(&DensityMatrix::pure(&a), &DensityMatrix::pure(&b)).unwrap();
        assert!((d - (1.0 - ov).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn coherence_of_pure_gaussian() {
        let grid = Grid::centered(128, 40.0).unwrap();
        let sigma = 1.5;
        let rho = DensityMatrix::pure(&WaveFunction::gaussian(grid, 0.0, sigma, 0.4, 1.0).unwrap());
        let fit = coherence_profile(&rho).unwrap();
        assert!(fit.gaussian);
        assert!((fit.lambda / ((8.0 * PI).sqrt() * sigma) - 1.0).abs() < 1e-6, "{}", fit.lambda);
    }

    #[test]
    fn coherence_of_decohered_cat_is_single_packet_value() {
        let grid = Grid::centered(128, 64.0).unwrap();
        let sigma = 1.0;
        let a = WaveFunction::gaussian(grid, -12.0, sigma, 0.0, 1.0).unwrap();
        let b = WaveFunction::gaussian(grid, 12.0, sigma, 0.0, 1.0).unwrap();
        let mix = DensityMatrix::mixture(&[(0.6, &a), (0.4, &b)]).unwrap();
        let fit = coherence_profile(&mix).unwrap();
        assert!((fit.lambda / ((8.0 * PI).sqrt() * sigma) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherence_of_thermal_mixture_is_shorter() {
        // Gaussian packets of width s at Gaussian-distributed momenta with
        // spread dp: |rho(s)| ∝ exp(-s^2/8 s0^2 - s^2 dp^2 / 2 hbar^2)
        let grid = Grid::centered(128, 40.0).unwrap();
        let s0 = 1.5;
        let dp = 0.3;
        let m = 81;
        let ps: Vec<f64> = (0..m).map(|i| -5.0 * dp + 10.0 * dp * i as f64 / (m - 1) as f64).collect();
        let ws: Vec<f64> = ps.iter().map(|p| (-0.5 * (p / dp).powi(2)).exp()).collect();
        let tot: f64 = ws.iter().sum();
        let states: Vec<WaveFunction> = ps.iter().map(|&p| WaveFunction::gaussian(grid, 0.0, s0, p, 1.0).unwrap()).collect();
        let terms: Vec<(f64, &WaveFunction)> = ws.iter().zip(&states).map(|(w, s)| (w / tot, s)).collect();
        let rho = DensityMatrix::mixture(&terms).unwrap();
        let fit = coherence_profile(&rho).unwrap();
        let pure = (8.0 * PI).sqrt() * s0;
        let expected = (PI / (1.0 / (8.0 * s0 * s0) + 0.5 * dp * dp)).sqrt();
        assert!(fit.lambda < pure);
        assert!((fit.lambda / expected - 1.0).abs() < 0.01, "{} vs {expected}", fit.lambda);
    }

    #[test]
    fn generator_matches_small_step() {
        let (grid, p, rate) = setup(64, 32.0, 1.0);
        let rho0 = DensityMatrix::pure(&cat(grid, 5.0, 1.0));
        let mut solver = MasterSolver::new(grid, MasterConfig { dt: 1e-4, ..Default::default() }, &p, &rate).unwrap();
        let l = solver.generator(&rho0);
        let h = 1e-4;
        let fwd = solver.evolve(&rho0, h).unwrap();
        let fd = (fwd.matrix() - rho0.matrix()) / C64::new(h, 0.0);
        let err = (&fd - &l).norm() / l.norm();
        assert!(err < 1e-3, "{err}");
    }
}
