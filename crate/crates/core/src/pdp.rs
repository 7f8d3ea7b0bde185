//! Piecewise-deterministic trajectories of the orthogonal unraveling: the
//! nonlinear flow of [`crate::soliton`] interrupted by jumps
//!
//! ```text
//! psi -> (exp(i q x / hbar) - chi(q)) psi / sqrt(1 - |chi(q)|^2),
//! chi(q) = ∫ dx |psi(x)|^2 exp(i q x / hbar),
//! ```
//!
//! which occur with rate density `r_q = gamma G(q) (1 - |chi(q)|^2)`.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, WaveFunction, C64};
use crate::kernels::{LocalizationRate, ModelParams, RateConvolver};
use crate::reference::DensityMatrix;
use crate::sampling::{rng_from_seed, split_seed, IndependenceMh, DEFAULT_BURN_IN};
use crate::soliton::Evolver;

/// Below this value of `1 - |chi|^2` a jump is treated as impossible.
const DEGENERATE_WEIGHT: f64 = 1e-14;

/// `∫ dx |psi|^2 exp(i q x / hbar)` as the exact trigonometric sum over the
/// grid samples.
pub fn characteristic_fn(psi: &WaveFunction, q: f64, hbar: f64) -> C64 {
    let grid = psi.grid();
    let dx = grid.dx();
    let k = q / hbar;
    let s: C64 = psi
        .amps()
        .iter()
        .enumerate()
        .map(|(i, a)| C64::from_polar(a.norm_sqr(), k * grid.x(i)))
        .sum();
    s * dx / psi.norm_sq()
}

/// `gamma G(q) (1 - |chi(q)|^2)`.
pub fn jump_rate_density(psi: &WaveFunction, q: f64, rate: &LocalizationRate) -> f64 {
    let chi = characteristic_fn(psi, q, rate.hbar());
    rate.gamma() * rate.distribution().density(q) * (1.0 - chi.norm_sqr()).max(0.0)
}

/// `r_tot = ∫ dx g (g * F)` with `g = |psi|^2`.
pub fn total_jump_rate(psi: &WaveFunction, conv: &mut RateConvolver) -> Result<f64> {
    let g = psi.density();
    let c = conv.convolve(&g)?;
    Ok(g.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() * psi.grid().dx())
}

/// `∫ r_q dq` by the trapezoid rule over the support of `G`.
pub fn total_jump_rate_quadrature(psi: &WaveFunction, rate: &LocalizationRate, points: usize) -> f64 {
    let (lo, hi) = rate.distribution().support();
    let h = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
            w * jump_rate_density(psi, lo + h * i as f64, rate)
        })
        .sum::<f64>()
        * h
}

/// Applies `J_q`; fails when the jump has zero rate from `psi`.
pub fn apply_jump(psi: &WaveFunction, q: f64, hbar: f64) -> Result<WaveFunction> {
    let chi = characteristic_fn(psi, q, hbar);
    if 1.0 - chi.norm_sqr() < DEGENERATE_WEIGHT {
        return Err(Error::DegenerateJump);
    }
    let grid = *psi.grid();
    let k = q / hbar;
    let scale = psi.norm_sq().sqrt();
    let amps = psi
        .amps()
        .iter()
        .enumerate()
        .map(|(i, a)| (C64::from_polar(1.0, k * grid.x(i)) - chi) * a / scale)
        .collect();
    WaveFunction::normalized(grid, amps)
}

/// One candidate event of the thinned Poisson process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    /// Momentum transfer; `None` for rejected candidates.
    pub q: Option<f64>,
    pub r_tot: f64,
    pub accepted: bool,
    /// `|<psi|psi'>|` of an accepted jump.
    pub overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub psi: WaveFunction,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub events: Vec<JumpEvent>,
    pub final_psi: WaveFunction,
    pub snapshots: Vec<Snapshot>,
    pub wall_time: Duration,
}

impl TrajectoryRecord {
    pub fn n_jumps(&self) -> usize {
        self.events.iter().filter(|e| e.accepted).count()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &JumpEvent> {
        self.events.iter().filter(|e| e.accepted)
    }

    /// Equality of everything except the wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.events == other.events
            && self.final_psi == other.final_psi
            && self.snapshots == other.snapshots
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub t_max: f64,
    /// Largest deterministic step.
    pub dt: f64,
    /// Increasing times at which the state is stored.
    pub snapshot_times: Vec<f64>,
    pub burn_in: usize,
    pub recenter: bool,
}

impl TrajectoryConfig {
    pub fn new(t_max: f64, dt: f64) -> Self {
        Self { t_max, dt, snapshot_times: Vec::new(), burn_in: DEFAULT_BURN_IN, recenter: false }
    }

    /// `count` snapshot times spaced geometrically between `t_first` and `t_max`.
    pub fn with_geometric_snapshots(mut self, t_first: f64, count: usize) -> Self {
        self.snapshot_times = geometric_times(t_first, self.t_max, count);
        self
    }

    pub fn validate(&self, grid: &Grid, params: &ModelParams) -> Result<()> {
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_max must be >= 0, got {}", self.t_max)));
        }
        let bound = crate::soliton::dt_bound(grid, params);
        if !(self.dt > 0.0) || self.dt > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!("dt = {} must lie in (0, {bound}]", self.dt)));
        }
        if self.snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("snapshot times must be strictly increasing".into()));
        }
        if self.snapshot_times.iter().any(|&t| !(t >= 0.0 && t <= self.t_max)) {
            return Err(Error::InvalidParameter("snapshot times must lie in [0, t_max]".into()));
        }
        Ok(())
    }
}

/// `count` points from `first` to `last` with constant ratio.
pub fn geometric_times(first: f64, last: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![last],
        _ => {
            let r = (last / first).powf(1.0 / (count - 1) as f64);
            (0..count).map(|i| if i + 1 == count { last } else { first * r.powi(i as i32) }).collect()
        }
    }
}

/// Advances `psi` from `t` to `target` in steps of at most `dt`.
fn advance(evolver: &mut Evolver, psi: &mut WaveFunction, t: f64, target: f64, dt: f64, recenter: bool) -> Result<()> {
    let span = target - t;
    if span <= 0.0 {
        return Ok(());
    }
    let full = (span / dt).floor() as usize;
    for _ in 0..full {
        evolver.step(psi, dt)?;
    }
    let rest = span - full as f64 * dt;
    if rest > 1e-14 * dt {
        evolver.step(psi, rest)?;
    }
    if recenter {
        let grid = *psi.grid();
        let off = ((psi.centroid() - grid.center()) / grid.dx()).round() as i64;
        if off.unsigned_abs() as usize > grid.n() / 32 {
            psi.recenter_window(off);
        }
    }
    Ok(())
}

/// Runs one trajectory of the unraveling. Candidate events arrive at the
/// constant rate `gamma`; a candidate at time `t` is accepted with
/// probability `r_tot(t) / gamma`, and the momentum transfer is drawn from
/// `r_q / r_tot` by the persistent Metropolis-Hastings chain.
pub fn simulate_trajectory(
    psi0: &WaveFunction,
    cfg: &TrajectoryConfig,
    params: &ModelParams,
    rate: &LocalizationRate,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let start = Instant::now();
    cfg.validate(psi0.grid(), params)?;
    let mut rng = rng_from_seed(seed);
    let mut mh = IndependenceMh::new(cfg.burn_in);
    let mut evolver = Evolver::new(*psi0.grid(), params, rate, 0.0)?;
    let mut psi = psi0.clone();
    psi.normalize();
    let gamma = rate.gamma();
    let hbar = rate.hbar();
    let waiting = if gamma > 0.0 { Some(Exp::new(gamma).expect("positive rate")) } else { None };
    let mut next_candidate = match &waiting {
        Some(e) => e.sample(&mut rng),
        None => f64::INFINITY,
    };
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(cfg.snapshot_times.len());
    let mut snaps = cfg.snapshot_times.iter().copied().peekable();
    let mut t = 0.0;

    while let Some(&ts) = snaps.peek() {
        if ts > 0.0 {
            break;
        }
        snapshots.push(Snapshot { t: ts, psi: psi.clone() });
        snaps.next();
    }
    loop {
        let next_snap = snaps.peek().copied().unwrap_or(f64::INFINITY);
        let target = next_candidate.min(next_snap).min(cfg.t_max);
        advance(&mut evolver, &mut psi, t, target, cfg.dt, cfg.recenter)?;
        t = target;
        if next_snap == t {
            snapshots.push(Snapshot { t, psi: psi.clone() });
            snaps.next();
        }
        if next_candidate == t && t < cfg.t_max {
            let r_tot = evolver.mean_rate(&psi)?;
            if r_tot > gamma * (1.0 + 1e-9) {
                return Err(Error::Instability(format!("total jump rate {r_tot} exceeds the bound {gamma}")));
            }
            let u: f64 = rand::Rng::random(&mut rng);
            let mut event = JumpEvent { t, q: None, r_tot, accepted: false, overlap: None };
            if u * gamma < r_tot {
                let q = mh.draw(rate.distribution(), |q| (1.0 - characteristic_fn(&psi, q, hbar).norm_sqr()).max(0.0), &mut rng)?;
                let next = apply_jump(&psi, q, hbar)?;
                event.overlap = Some(psi.inner(&next)?.norm());
                event.q = Some(q);
                event.accepted = true;
                psi = next;
                evolver.reset_drift_reference();
            }
            events.push(event);
            next_candidate = t + waiting.as_ref().expect("candidates need gamma > 0").sample(&mut rng);
        }
        if t >= cfg.t_max {
            break;
        }
    }
    Ok(TrajectoryRecord { seed, events, final_psi: psi, snapshots, wall_time: start.elapsed() })
}

/// Runs `count` trajectories with seeds `split_seed(master_seed, i)`;
/// results are returned in index order.
pub fn run_ensemble(
    psi0: &WaveFunction,
    cfg: &TrajectoryConfig,
    params: &ModelParams,
    rate: &LocalizationRate,
    master_seed: u64,
    count: usize,
) -> Vec<Result<TrajectoryRecord>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| simulate_trajectory(psi0, cfg, params, rate, split_seed(master_seed, i)))
        .collect()
}

/// How a trajectory's outcome is attributed to one of the initial packets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WinnerRule {
    /// Packet domain containing the final centroid.
    Centroid,
    /// Packet domain holding more than the given fraction of the probability;
    /// no winner otherwise.
    Mass(f64),
}

/// Domains of the initial packets: the cells between midpoints of
/// neighbouring centers.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketDomains {
    centers: Vec<f64>,
    order: Vec<usize>,
}

impl PacketDomains {
    pub fn new(centers: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("packet centers must be finite and non-empty".into()));
        }
        let mut order: Vec<usize> = (0..centers.len()).collect();
        order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
        if order.windows(2).any(|w| centers[w[0]] == centers[w[1]]) {
            return Err(Error::InvalidParameter("packet centers must be distinct".into()));
        }
        Ok(Self { centers, order })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn domain_of(&self, x: f64) -> usize {
        for w in self.order.windows(2) {
            if x < 0.5 * (self.centers[w[0]] + self.centers[w[1]]) {
                return w[0];
            }
        }
        *self.order.last().expect("non-empty")
    }

    /// Probability in each domain, indexed like the centers.
    pub fn masses(&self, psi: &WaveFunction) -> Vec<f64> {
        let mut m = vec![0.0; self.centers.len()];
        let dx = psi.grid().dx();
        for (i, a) in psi.amps().iter().enumerate() {
            m[self.domain_of(psi.grid().x(i))] += a.norm_sqr() * dx;
        }
        let total: f64 = m.iter().sum();
        m.iter_mut().for_each(|v| *v /= total);
        m
    }

    pub fn winner(&self, psi: &WaveFunction, rule: WinnerRule) -> Option<usize> {
        match rule {
            WinnerRule::Centroid => Some(self.domain_of(psi.centroid())),
            WinnerRule::Mass(f) => self.masses(psi).iter().position(|&m| m > f),
        }
    }
}

/// Row of the trajectory summary table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySummary {
    pub seed: u64,
    pub n_jumps: usize,
    pub winner: Option<usize>,
    pub centroid: f64,
    pub width: f64,
}

pub fn summarize(record: &TrajectoryRecord, domains: &PacketDomains, rule: WinnerRule) -> TrajectorySummary {
    TrajectorySummary {
        seed: record.seed,
        n_jumps: record.n_jumps(),
        winner: domains.winner(&record.final_psi, rule),
        centroid: record.final_psi.centroid(),
        width: record.final_psi.spread(),
    }
}

/// Ensemble average with the standard error of each matrix element.
#[derive(Clone, Debug)]
pub struct EnsembleDensity {
    pub rho: DensityMatrix,
    /// `sqrt(Var(psi_i conj(psi_j)) / M)`; zero for a single member.
    pub std_error: DMatrix<f64>,
    pub members: usize,
}

/// `(1/M) sum |psi_k><psi_k|`, accumulated in the given order.
pub fn ensemble_density(states: &[&WaveFunction]) -> Result<EnsembleDensity> {
    let first = states.first().ok_or(Error::EmptyEnsemble)?;
    let grid = *first.grid();
    let n = grid.n();
    let mut sum = DMatrix::<C64>::zeros(n, n);
    let mut sum_sq = DMatrix::<f64>::zeros(n, n);
    for psi in states {
        if !psi.grid().same_shape(&grid) {
            return Err(Error::Dimension { expected: n, got: psi.grid().n() });
        }
        let a = psi.amps();
        let inv = 1.0 / psi.norm_sq();
        for j in 0..n {
            let cj = a[j].conj() * inv;
            for i in 0..n {
                let v = a[i] * cj;
                sum[(i, j)] += v;
                sum_sq[(i, j)] += v.norm_sqr();
            }
        }
    }
    let m = states.len() as f64;
    let mean = sum / C64::new(m, 0.0);
    let std_error = if states.len() > 1 {
        DMatrix::from_fn(n, n, |i, j| ((sum_sq[(i, j)] / m - mean[(i, j)].norm_sqr()).max(0.0) * m / (m - 1.0) / m).sqrt())
    } else {
        DMatrix::zeros(n, n)
    };
    Ok(EnsembleDensity { rho: DensityMatrix::from_parts_unchecked(grid, mean), std_error, members: states.len() })
}

/// Keeps every `factor`-th sample (a coarser grid over the same window) and
/// renormalizes.
pub fn downsample(psi: &WaveFunction, factor: usize) -> Result<WaveFunction> {
    let grid = psi.grid();
    if factor == 0 || grid.n() % factor != 0 || grid.n() / factor < 2 {
        return Err(Error::InvalidParameter(format!("cannot downsample {} points by {factor}", grid.n())));
    }
    let coarse = Grid::new(grid.n() / factor, grid.x0(), grid.dx() * factor as f64)?;
    WaveFunction::normalized(coarse, psi.amps().iter().step_by(factor).copied().collect())
}
