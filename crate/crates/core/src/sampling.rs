//! Random-number plumbing shared by the stochastic modules: seed splitting,
//! simplex picking and the momentum-transfer samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::kernels::MomentumDistribution;

/// Generator used for every trajectory.
pub type TrajectoryRng = ChaCha8Rng;

/// Default number of Metropolis-Hastings updates per draw.
pub const DEFAULT_BURN_IN: usize = 50;

/// Seed of stream `index` under `master`: SplitMix64 applied to
/// `master + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> TrajectoryRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point on the probability simplex (flat Dirichlet) from normalized
/// exponential spacings.
pub fn simplex_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Independence Metropolis-Hastings sampler for densities `G(q) w(q)` with
/// proposal `G`. The chain position survives between draws, so successive
/// targets (which change after every jump) start from the previous state.
#[derive(Clone, Debug, Default)]
pub struct IndependenceMh {
    state: Option<f64>,
    burn_in: usize,
    accepted: u64,
    proposed: u64,
}

impl IndependenceMh {
    pub fn new(burn_in: usize) -> Self {
        Self { state: None, burn_in, accepted: 0, proposed: 0 }
    }

    pub fn state(&self) -> Option<f64> {
        self.state
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }

    /// Runs `burn_in` updates against the weight `w >= 0` and returns the
    /// chain position.
    pub fn draw<R, W>(&mut self, proposal: &MomentumDistribution, weight: W, rng: &mut R) -> Result<f64>
    where
        R: Rng + ?Sized,
        W: Fn(f64) -> f64,
    {
        let (mut q, mut wq) = match self.state {
            Some(q) => (q, weight(q)),
            None => {
                let q = proposal.sample(rng);
                (q, weight(q))
            }
        };
        let mut any_positive = wq > 0.0;
        for _ in 0..self.burn_in.max(1) {
            let cand = proposal.sample(rng);
            let wc = weight(cand);
            if !(wc >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative weight {wc} at q = {cand}")));
            }
            any_positive |= wc > 0.0;
            self.proposed += 1;
            // a zero-weight current state is left at the first opportunity
            let u: f64 = rng.random();
            if wq <= 0.0 || u * wq < wc {
                q = cand;
                wq = wc;
                self.accepted += 1;
            }
        }
        if !any_positive || wq <= 0.0 {
            return Err(Error::DegenerateJump);
        }
        self.state = Some(q);
        Ok(q)
    }
}

/// Inverse-CDF sampler for a density tabulated on a uniform grid, with
/// linear interpolation inside each cell.
#[derive(Clone, Debug)]
pub struct GridSampler {
    q: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    /// Tabulates `density` on `points` nodes spanning `[lo, hi]`.
    pub fn new<D: Fn(f64) -> f64>(lo: f64, hi: f64, points: usize, density: D) -> Result<Self> {
        if points < 2 || !(hi > lo) {
            return Err(Error::InvalidParameter("grid sampler needs hi > lo and at least two points".into()));
        }
        let h = (hi - lo) / (points - 1) as f64;
        let q: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let d: Vec<f64> = q.iter().map(|&v| density(v).max(0.0)).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * h * (d[i] + d[i - 1]);
        }
        let total = cdf[points - 1];
        if !(total > 0.0) {
            return Err(Error::DegenerateJump);
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { q, cdf })
    }

    /// Normalized CDF at `q`.
    pub fn cdf(&self, q: f64) -> f64 {
        if q <= self.q[0] {
            return 0.0;
        }
        let last = self.q.len() - 1;
        if q >= self.q[last] {
            return 1.0;
        }
        let h = self.q[1] - self.q[0];
        let i = (((q - self.q[0]) / h) as usize).min(last - 1);
        let t = (q - self.q[i]) / h;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.q[i - 1] + t * (self.q[i] - self.q[i - 1])
    }
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<C: Fn(f64) -> f64>(samples: &mut [f64], cdf: C) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| split_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(split_seed(42, 7), seeds[7]);
        assert_ne!(split_seed(43, 7), seeds[7]);
    }

    #[test]
    fn simplex_marginals_are_beta() {
        // flat Dirichlet on n cells: each coordinate ~ Beta(1, n - 1), mean 1/n
        let mut rng = rng_from_seed(3);
        let n = 5;
        let m = 40_000;
        let mut mean = 0.0;
        let mut sq = 0.0;
        for _ in 0..m {
            let p = simplex_point(n, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            mean += p[0];
            sq += p[0] * p[0];
        }
        mean /= m as f64;
        sq /= m as f64;
        let var = sq - mean * mean;
        let expected_var = (n - 1) as f64 / ((n * n) as f64 * (n + 1) as f64);
        assert!((mean - 0.2).abs() < 4.0 * (expected_var / m as f64).sqrt());
        assert!((var / expected_var - 1.0).abs() < 0.05);
    }

    // KS critical value at alpha = 0.001 is about 1.95 / sqrt(n)
    fn ks_ok(d: f64, n: usize) -> bool {
        d < 1.95 / (n as f64).sqrt()
    }

    #[test]
    fn grid_sampler_reproduces_gaussian() {
        let g = MomentumDistribution::gaussian(1.3).unwrap();
        let s = GridSampler::new(-16.0, 16.0, 4001, |q| g.density(q)).unwrap();
        let mut rng = rng_from_seed(9);
        let mut xs: Vec<f64> = (0..20_000).map(|_| s.sample(&mut rng)).collect();
        let d = ks_distance(&mut xs, |q| s.cdf(q));
        assert!(ks_ok(d, 20_000), "{d}");
        assert!((s.cdf(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mh_matches_inverse_cdf_oracle() {
        let g = MomentumDistribution::gaussian(1.0).unwrap();
        // target G(q) (1 - cos^2(3 q)) as for an equal two-packet state
        let w = |q: f64| 1.0 - (3.0 * q).cos().powi(2);
        let oracle = GridSampler::new(-12.0, 12.0, 200_001, |q| g.density(q) * w(q)).unwrap();
        let mut rng = rng_from_seed(17);
        let mut mh = IndependenceMh::new(DEFAULT_BURN_IN);
        let n = 20_000;
        let mut xs: Vec<f64> = (0..n).map(|_| mh.draw(&g, w, &mut rng).unwrap()).collect();
        let d = ks_distance(&mut xs, |q| oracle.cdf(q));
        assert!(ks_ok(d, n), "KS distance {d}");
        assert!(mh.acceptance_rate() > 0.3);
    }

    #[test]
    fn mh_leaves_zero_weight_state() {
        let g = MomentumDistribution::gaussian(1.0).unwrap();
        let mut rng = rng_from_seed(1);
        let mut mh = IndependenceMh::new(5);
        mh.draw(&g, |_| 1.0, &mut rng).unwrap();
        let q = mh.draw(&g, |q: f64| if q > 0.0 { 1.0 } else { 0.0 }, &mut rng).unwrap();
        assert!(q > 0.0);
    }

    #[test]
    fn mh_reports_degenerate_target() {
        let g = MomentumDistribution::gaussian(1.0).unwrap();
        let mut rng = rng_from_seed(1);
        let mut mh = IndependenceMh::new(DEFAULT_BURN_IN);
        assert!(matches!(mh.draw(&g, |_| 0.0, &mut rng), Err(Error::DegenerateJump)));
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let g = MomentumDistribution::gaussian(1.0).unwrap();
        let run = |seed| {
            let mut rng = rng_from_seed(seed);
            let mut mh = IndependenceMh::new(DEFAULT_BURN_IN);
            (0..10).map(|_| mh.draw(&g, |q: f64| q * q, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
