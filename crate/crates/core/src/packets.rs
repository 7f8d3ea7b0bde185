//! Reduced dynamics of a superposition of `N` far-separated narrow packets,
//! `psi = sum_i c_i phi_i`. Between jumps the weights `p_i = |c_i|^2` follow
//!
//! ```text
//! dp_i/dt = -2 gamma (S - p_i) p_i,    S = sum_j p_j^2,
//! ```
//!
//! and a jump with momentum transfer `q` maps
//! `c_k -> (exp(i q x_k / hbar) - chi) c_k` with `chi = sum_j p_j exp(i q x_j / hbar)`.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::grid::{WaveFunction, C64};
use crate::kernels::{LocalizationRate, ModelParams, RateConvolver};
use crate::sampling::{rng_from_seed, simplex_point, split_seed, IndependenceMh, DEFAULT_BURN_IN};
use crate::soliton::{Evolver, lambda_functional};

/// Separation requirement `F(x_i - x_j) >= SATURATION gamma`.
const SATURATION: f64 = 0.99;
const DEGENERATE_WEIGHT: f64 = 1e-14;

/// Coefficients and centroids of the packets.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketEnsembleState {
    c: Vec<C64>,
    x: Vec<f64>,
    rate: LocalizationRate,
    /// All off-diagonal correlations vanish to double precision, so
    /// `r_tot = gamma (1 - S)` exactly.
    saturated: bool,
}

impl PacketEnsembleState {
    /// Normalizes `c` and checks the separation requirement.
    pub fn new(c: Vec<C64>, x: Vec<f64>, rate: LocalizationRate) -> Result<Self> {
        if c.is_empty() || c.len() != x.len() {
            return Err(Error::InvalidParameter(format!(
                "need matching non-empty coefficient and position lists ({} vs {})",
                c.len(),
                x.len()
            )));
        }
        let norm: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter("coefficients must have a positive finite norm".into()));
        }
        if rate.is_disabled() {
            return Err(Error::InvalidParameter("packet process needs gamma > 0".into()));
        }
        let gamma = rate.gamma();
        let mut saturated = true;
        for i in 0..x.len() {
            for j in 0..i {
                let f = rate.eval(x[i] - x[j]);
                if f < SATURATION * gamma {
                    return Err(Error::Precondition(format!(
                        "packets {j} and {i} are too close: F = {f} < {SATURATION} gamma"
                    )));
                }
                saturated &= rate.correlation(x[i] - x[j]).abs() < 1e-17;
            }
        }
        let s = norm.sqrt();
        Ok(Self { c: c.into_iter().map(|v| v / s).collect(), x, rate, saturated })
    }

    /// Packets at `spacing` intervals centered on the origin.
    pub fn equally_spaced(c: Vec<C64>, spacing: f64, rate: LocalizationRate) -> Result<Self> {
        let n = c.len();
        let x = (0..n).map(|i| (i as f64 - 0.5 * (n as f64 - 1.0)) * spacing).collect();
        Self::new(c, x, rate)
    }

    /// Real coefficients `sqrt(p_i)`.
    pub fn from_weights(p: &[f64], spacing: f64, rate: LocalizationRate) -> Result<Self> {
        if p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be non-negative".into()));
        }
        Self::equally_spaced(p.iter().map(|&v| C64::new(v.sqrt(), 0.0)).collect(), spacing, rate)
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.c
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn rate(&self) -> &LocalizationRate {
        &self.rate
    }

    pub fn weights(&self) -> Vec<f64> {
        self.c.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.c.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `S = sum_i p_i^2`.
    pub fn participation(&self) -> f64 {
        self.c.iter().map(|v| v.norm_sqr().powi(2)).sum()
    }

    pub fn argmax(&self) -> usize {
        let w = self.weights();
        (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0)
    }

    /// `sum_k conj(c_k) c'_k`.
    pub fn overlap(&self, other: &Self) -> C64 {
        self.c.iter().zip(&other.c).map(|(a, b)| a.conj() * b).sum()
    }

    /// `chi(q) = sum_j p_j exp(i q x_j / hbar)`.
    pub fn chi(&self, q: f64) -> C64 {
        let k = q / self.rate.hbar();
        self.c.iter().zip(&self.x).map(|(c, &x)| C64::from_polar(c.norm_sqr(), k * x)).sum()
    }

    fn renormalize(&mut self) {
        let s = self.norm_sq().sqrt();
        self.c.iter_mut().for_each(|v| *v /= s);
    }
}

fn flow_derivative(p: &[f64], gamma: f64, out: &mut [f64]) {
    let s: f64 = p.iter().map(|v| v * v).sum();
    for (o, &pi) in out.iter_mut().zip(p) {
        *o = -2.0 * gamma * (s - pi) * pi;
    }
}

/// One classical RK4 step of the weight flow, in place; phases are kept.
fn rk4_weights(p: &mut [f64], gamma: f64, dt: f64, k: &mut [Vec<f64>; 4], tmp: &mut Vec<f64>) {
    let n = p.len();
    tmp.resize(n, 0.0);
    flow_derivative(p, gamma, &mut k[0]);
    for i in 0..n {
        tmp[i] = p[i] + 0.5 * dt * k[0][i];
    }
    flow_derivative(tmp, gamma, &mut k[1]);
    for i in 0..n {
        tmp[i] = p[i] + 0.5 * dt * k[1][i];
    }
    flow_derivative(tmp, gamma, &mut k[2]);
    for i in 0..n {
        tmp[i] = p[i] + dt * k[2][i];
    }
    flow_derivative(tmp, gamma, &mut k[3]);
    for i in 0..n {
        p[i] = (p[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])).max(0.0);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
}

/// Result of [`coefficient_flow`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStep {
    pub state: PacketEnsembleState,
    /// Set when `gamma dt > 0.1`, where RK4 starts to lose accuracy.
    pub accuracy_warning: bool,
}

/// Advances the weights by one RK4 step of length `dt`.
pub fn coefficient_flow(state: &PacketEnsembleState, dt: f64) -> Result<FlowStep> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
    }
    let gamma = state.rate.gamma();
    let mut p = state.weights();
    let n = p.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    rk4_weights(&mut p, gamma, dt, &mut k, &mut Vec::new());
    let mut next = state.clone();
    set_weights(&mut next, &p);
    Ok(FlowStep { state: next, accuracy_warning: gamma * dt > 0.1 })
}

fn set_weights(state: &mut PacketEnsembleState, p: &[f64]) {
    for (c, &pi) in state.c.iter_mut().zip(p) {
        let norm = c.norm();
        *c = if norm > 0.0 { *c * (pi.sqrt() / norm) } else { C64::new(pi.sqrt(), 0.0) };
    }
    state.renormalize();
}

/// Applies the jump with momentum transfer `q`.
pub fn jump_map(state: &PacketEnsembleState, q: f64) -> Result<PacketEnsembleState> {
    let chi = state.chi(q);
    if 1.0 - chi.norm_sqr() < DEGENERATE_WEIGHT {
        return Err(Error::DegenerateJump);
    }
    let k = q / state.rate.hbar();
    let mut next = state.clone();
    for (c, &x) in next.c.iter_mut().zip(&state.x) {
        *c *= C64::from_polar(1.0, k * x) - chi;
    }
    next.renormalize();
    Ok(next)
}

/// `gamma G(q) (1 - sum_jk p_j p_k exp(i q (x_j - x_k) / hbar))`.
pub fn jump_rate_density_packets(state: &PacketEnsembleState, q: f64) -> f64 {
    let chi = state.chi(q);
    state.rate.gamma() * state.rate.distribution().density(q) * (1.0 - chi.norm_sqr()).max(0.0)
}

/// `r_tot = gamma (1 - sum_jk p_j p_k G~(x_j - x_k))`, where `G~` is the
/// characteristic function of `G`.
pub fn total_rate_packets(state: &PacketEnsembleState) -> f64 {
    let gamma = state.rate.gamma();
    let p = state.weights();
    if state.saturated {
        let s: f64 = p.iter().map(|v| v * v).sum();
        return (gamma * (1.0 - s)).max(0.0);
    }
    let mut acc = 0.0;
    for j in 0..p.len() {
        for k in 0..p.len() {
            acc += p[j] * p[k] * state.rate.correlation(state.x[j] - state.x[k]);
        }
    }
    (gamma * (1.0 - acc)).max(0.0)
}

/// Settings of [`simulate_packet_trajectory`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketRunConfig {
    /// The run ends once some `p_i > 1 - eps_win`.
    pub eps_win: f64,
    /// RK4 step of the weight flow.
    pub dt: f64,
    /// Give up at this time (reported as a timeout).
    pub t_timeout: f64,
    pub burn_in: usize,
    /// With jumps off only the deterministic flow acts.
    pub jumps: bool,
    pub record_events: bool,
}

impl PacketRunConfig {
    pub fn for_rate(gamma: f64) -> Self {
        Self {
            eps_win: 1e-6,
            dt: 0.02 / gamma,
            t_timeout: 100.0 / gamma,
            burn_in: DEFAULT_BURN_IN,
            jumps: true,
            record_events: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_win > 0.0 && self.eps_win < 0.5) {
            return Err(Error::InvalidParameter(format!("eps_win must lie in (0, 0.5), got {}", self.eps_win)));
        }
        if !(self.dt > 0.0) || !(self.t_timeout > 0.0) {
            return Err(Error::InvalidParameter("dt and t_timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Candidate event of the reduced process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketEvent {
    pub t: f64,
    pub q: Option<f64>,
    pub r_tot: f64,
    pub accepted: bool,
    /// `|sum_k conj(c_k) c'_k|` of an accepted jump.
    pub overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketTrajectory {
    pub seed: u64,
    /// Index with the largest weight at termination.
    pub winner: usize,
    pub n_jumps: usize,
    pub termination_time: f64,
    pub timed_out: bool,
    pub events: Vec<PacketEvent>,
    pub final_state: PacketEnsembleState,
}

fn won(p: &[f64], eps: f64) -> bool {
    p.iter().any(|&v| v > 1.0 - eps)
}

/// Runs the reduced process until one weight exceeds `1 - eps_win`.
pub fn simulate_packet_trajectory(
    state0: &PacketEnsembleState,
    cfg: &PacketRunConfig,
    seed: u64,
) -> Result<PacketTrajectory> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut mh = IndependenceMh::new(cfg.burn_in);
    let gamma = state0.rate.gamma();
    let mut state = state0.clone();
    let mut p = state.weights();
    let n = p.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = Vec::with_capacity(n);
    let mut events = Vec::new();
    let mut n_jumps = 0;
    let mut t = 0.0;
    let waiting = rand_distr::Exp::new(gamma).expect("positive rate");
    let mut next_candidate = if cfg.jumps { rand_distr::Distribution::sample(&waiting, &mut rng) } else { f64::INFINITY };

    while !won(&p, cfg.eps_win) && t < cfg.t_timeout {
        let target = next_candidate.min(cfg.t_timeout);
        // flow up to the candidate, stopping early once a winner emerges
        while t < target && !won(&p, cfg.eps_win) {
            let h = cfg.dt.min(target - t);
            rk4_weights(&mut p, gamma, h, &mut k, &mut tmp);
            t = if h == target - t { target } else { t + h };
        }
        if won(&p, cfg.eps_win) || t >= cfg.t_timeout {
            break;
        }
        set_weights(&mut state, &p);
        let r_tot = total_rate_packets(&state);
        let u: f64 = rand::Rng::random(&mut rng);
        let mut event = PacketEvent { t, q: None, r_tot, accepted: false, overlap: None };
        if u * gamma < r_tot {
            let q = mh.draw(state.rate.distribution(), |q| (1.0 - state.chi(q).norm_sqr()).max(0.0), &mut rng)?;
            let next = jump_map(&state, q)?;
            event.overlap = Some(state.overlap(&next).norm());
            event.q = Some(q);
            event.accepted = true;
            state = next;
            p = state.weights();
            n_jumps += 1;
        }
        if cfg.record_events {
            events.push(event);
        }
        next_candidate = t + rand_distr::Distribution::sample(&waiting, &mut rng);
    }
    set_weights(&mut state, &p);
    let timed_out = !won(&p, cfg.eps_win);
    Ok(PacketTrajectory {
        seed,
        winner: state.argmax(),
        n_jumps,
        termination_time: t,
        timed_out,
        events,
        final_state: state,
    })
}

/// Closed-form quantities of the two-packet process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct N2Analytics {
    /// Expected total number of jumps, `-ln(1 - 2 p0) / 2`.
    pub mu_infinity: f64,
    /// Probability that packet 1 (initial weight `p0`) wins, `(1 - exp(-2 mu)) / 2`.
    pub p_win1: f64,
}

/// For `p0 >= 1/2` use the symmetry `p0 -> 1 - p0`.
pub fn n2_analytics(p0: f64) -> Result<N2Analytics> {
    if !(p0 >= 0.0 && p0 < 0.5) {
        return Err(Error::Domain(format!("p0 must lie in [0, 1/2), got {p0}")));
    }
    let mu = -0.5 * (-2.0 * p0).ln_1p();
    Ok(N2Analytics { mu_infinity: mu, p_win1: -0.5 * (-2.0 * mu).exp_m1() })
}

/// Pearson test of counts against expected probabilities, pooling the
/// smallest cells until every pooled cell expects at least five counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquare {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Number of original cells merged into pooled cells.
    pub pooled_cells: usize,
    pub pooling_log: Vec<String>,
}

pub fn chi_square(counts: &[u64], probs: &[f64]) -> Result<ChiSquare> {
    if counts.len() != probs.len() || counts.len() < 2 {
        return Err(Error::InvalidParameter("need at least two cells with matching probabilities".into()));
    }
    let total: u64 = counts.iter().sum();
    let psum: f64 = probs.iter().sum();
    if total == 0 || !(psum > 0.0) {
        return Err(Error::InvalidParameter("empty counts or probabilities".into()));
    }
    let n = total as f64;
    let mut cells: Vec<(f64, f64, usize)> =
        counts.iter().zip(probs).map(|(&c, &p)| (c as f64, n * p / psum, 1)).collect();
    cells.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut log = Vec::new();
    let mut pooled: Vec<(f64, f64, usize)> = Vec::new();
    let mut acc = (0.0, 0.0, 0);
    for cell in cells {
        if acc.2 > 0 || cell.1 < 5.0 {
            acc = (acc.0 + cell.0, acc.1 + cell.1, acc.2 + cell.2);
            if acc.1 >= 5.0 {
                if acc.2 > 1 {
                    log.push(format!("pooled {} cells (expected {:.3})", acc.2, acc.1));
                }
                pooled.push(acc);
                acc = (0.0, 0.0, 0);
            }
        } else {
            pooled.push(cell);
        }
    }
    if acc.2 > 0 {
        // leftover small cells join the smallest pooled cell
        log.push(format!("merged {} leftover cells (expected {:.3})", acc.2, acc.1));
        match pooled.first_mut() {
            Some(first) => *first = (first.0 + acc.0, first.1 + acc.1, first.2 + acc.2),
            None => pooled.push(acc),
        }
    }
    let pooled_cells = pooled.iter().filter(|c| c.2 > 1).map(|c| c.2).sum();
    if pooled.len() < 2 {
        return Err(Error::Fit("fewer than two cells remain after pooling".into()));
    }
    let chi2: f64 = pooled.iter().map(|(o, e, _)| (o - e).powi(2) / e).sum();
    let dof = pooled.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Fit(e.to_string()))?;
    Ok(ChiSquare { chi2, dof, p_value: dist.sf(chi2).clamp(0.0, 1.0), pooled_cells, pooling_log: log })
}

/// Outcome of a Born-weight experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct WinnerStatistics {
    pub n: usize,
    pub counts: Vec<u64>,
    pub n_trials: usize,
    pub expected: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub pooled_cells: usize,
    pub pooling_log: Vec<String>,
    /// Trajectories still undecided at `t_timeout`; they are left out of
    /// `counts` and the test.
    pub timeouts: usize,
    pub trials: Vec<PacketTrajectory>,
}

/// Initial state of a Born-weight experiment: weights uniform on the
/// simplex, uniform random phases, packets `spacing` apart.
pub fn random_initial_state(n: usize, spacing: f64, rate: LocalizationRate, seed: u64) -> Result<PacketEnsembleState> {
    let mut rng = rng_from_seed(seed);
    let p = simplex_point(n, &mut rng);
    let c = p
        .iter()
        .map(|&w| C64::from_polar(w.sqrt(), 2.0 * std::f64::consts::PI * rand::Rng::random::<f64>(&mut rng)))
        .collect();
    PacketEnsembleState::equally_spaced(c, spacing, rate)
}

/// Runs `n_trials` trajectories from `state0` and tests the winner counts of
/// the decided ones against the initial weights.
pub fn winner_statistics(
    state0: &PacketEnsembleState,
    n_trials: usize,
    cfg: &PacketRunConfig,
    seed: u64,
) -> Result<WinnerStatistics> {
    let n = state0.len();
    if n_trials < 20 * n {
        return Err(Error::Precondition(format!("need at least {} trials for N = {n}, got {n_trials}", 20 * n)));
    }
    let trials: Vec<PacketTrajectory> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| simulate_packet_trajectory(state0, cfg, split_seed(seed, i)))
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; n];
    for t in trials.iter().filter(|t| !t.timed_out) {
        counts[t.winner] += 1;
    }
    let expected = state0.weights();
    let test = chi_square(&counts, &expected)?;
    Ok(WinnerStatistics {
        n,
        counts,
        n_trials,
        expected,
        chi2: test.chi2,
        dof: test.dof,
        p_value: test.p_value,
        pooled_cells: test.pooled_cells,
        pooling_log: test.pooling_log,
        timeouts: trials.iter().filter(|t| t.timed_out).count(),
        trials,
    })
}

/// Default packet spacing in units of `hbar / sigma_G`.
pub const DEFAULT_SPACING: f64 = 20.0;

/// Born-weight experiment for `N` packets at the default spacing with
/// natural units (`gamma = 1`, `sigma_G = 1`). The initial state uses
/// `seed`, trial `i` uses `split_seed(seed, i + 1)`.
pub fn born_weight_test(n: usize, n_trials: usize, seed: u64) -> Result<WinnerStatistics> {
    if !(2..=100).contains(&n) {
        return Err(Error::InvalidParameter(format!("N must lie in [2, 100], got {n}")));
    }
    let params = ModelParams::natural(1.0)?;
    let rate = LocalizationRate::gaussian(&params);
    let spacing = DEFAULT_SPACING * params.localization_scale();
    let state0 = random_initial_state(n, spacing, rate, seed)?;
    winner_statistics(&state0, n_trials, &PacketRunConfig::for_rate(params.gamma()), split_seed(seed, 0))
}

/// Diagnostics of the packet decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeConsistency {
    /// `∫ |phi_i|^2 (|phi_i|^2 * F)` for each packet.
    pub self_integrals: Vec<f64>,
    /// Largest `|∫ |phi_i|^2 (|phi_j|^2 * F) / gamma - 1|` over `i != j`.
    pub max_cross_deviation: f64,
    /// Normalized L2 distance after one interval `dt` between the full
    /// nonlinear evolution and the Euler step of the decomposition.
    pub residual: f64,
}

/// Checks that `psi = sum c_i phi_i` evolves consistently with separate
/// weight and packet equations over one step `dt`. The packet equation is
///
/// ```text
/// d/dt phi_i = (i hbar/2m) phi_i'' - phi_i Λ[|phi_i|^2]
///              + phi_i sum_{j != i} p_j (|phi_i|^2 * F - |phi_j|^2 * F + gamma).
/// ```
///
/// Packets of identical shape make the self-interaction mismatch a global
/// factor, which the final normalization removes.
pub fn packet_shape_consistency(
    phi_set: &[WaveFunction],
    c: &[C64],
    params: &ModelParams,
    rate: &LocalizationRate,
    dt: f64,
) -> Result<ShapeConsistency> {
    let n = phi_set.len();
    if n == 0 || c.len() != n {
        return Err(Error::InvalidParameter("need one coefficient per packet".into()));
    }
    let grid = *phi_set[0].grid();
    if phi_set.iter().any(|p| !p.grid().same_shape(&grid) || p.grid().x0() != grid.x0()) {
        return Err(Error::Dimension { expected: grid.n(), got: 0 });
    }
    let dx = grid.dx();
    let phis: Vec<WaveFunction> = phi_set
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.normalize();
            p
        })
        .collect();
    for i in 0..n {
        for j in 0..i {
            let ov: f64 = phis[i].amps().iter().zip(phis[j].amps()).map(|(a, b)| a.norm() * b.norm()).sum::<f64>() * dx;
            if ov > 1e-10 {
                return Err(Error::Precondition(format!("packets {j} and {i} overlap ({ov:e})")));
            }
        }
    }
    let mut conv = RateConvolver::new(grid, rate)?;
    let dens: Vec<Vec<f64>> = phis.iter().map(|p| p.density()).collect();
    let convs: Vec<Vec<f64>> = dens.iter().map(|g| conv.convolve(g)).collect::<Result<_>>()?;
    let integral = |i: usize, j: usize| -> f64 { dens[i].iter().zip(&convs[j]).map(|(a, b)| a * b).sum::<f64>() * dx };
    let self_integrals: Vec<f64> = (0..n).map(|i| integral(i, i)).collect();
    let gamma = rate.gamma();
    let mut max_cross_deviation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max_cross_deviation = max_cross_deviation.max((integral(i, j) / gamma - 1.0).abs());
            }
        }
    }

    let cnorm: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let c: Vec<C64> = c.iter().map(|v| v / cnorm).collect();
    let p: Vec<f64> = c.iter().map(|v| v.norm_sqr()).collect();
    let assemble = |coef: &[C64], packets: &[WaveFunction]| -> Result<WaveFunction> {
        let terms: Vec<(C64, &WaveFunction)> = coef.iter().copied().zip(packets.iter()).collect();
        let mut psi = WaveFunction::superpose(&terms)?;
        psi.normalize();
        Ok(psi)
    };
    let psi0 = assemble(&c, &phis)?;

    // accurate solution of the full equation
    let mut evolver = Evolver::new(grid, params, rate, 0.0)?;
    let sub = 64;
    let mut full = psi0.clone();
    for _ in 0..sub {
        evolver.step(&mut full, dt / sub as f64)?;
    }

    // forward Euler of the decomposition
    let s: f64 = p.iter().map(|v| v * v).sum();
    let c1: Vec<C64> = c
        .iter()
        .zip(&p)
        .map(|(ci, &pi)| {
            let p1 = (pi - 2.0 * gamma * (s - pi) * pi * dt).max(0.0);
            if pi > 0.0 { ci * (p1 / pi).sqrt() } else { *ci }
        })
        .collect();
    let mut stepped = Vec::with_capacity(n);
    for i in 0..n {
        let free = evolver.rhs(&phis[i])?;
        let lam_check = lambda_functional(&phis[i], evolver.convolver())?;
        debug_assert_eq!(lam_check.len(), grid.n());
        let amps: Vec<C64> = phis[i]
            .amps()
            .iter()
            .zip(&free)
            .enumerate()
            .map(|(m, (a, f))| {
                let coupling: f64 = (0..n).filter(|&j| j != i).map(|j| p[j] * (convs[i][m] - convs[j][m] + gamma)).sum();
                a + (f + a * coupling) * dt
            })
            .collect();
        stepped.push(WaveFunction::from_raw(grid, amps)?);
    }
    let decomposed = assemble(&c1, &stepped)?;
    let residual = full.distance(&decomposed)?;
    Ok(ShapeConsistency { self_integrals, max_cross_deviation, residual })
}
