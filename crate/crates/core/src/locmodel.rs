//! Analytic localization model: the 1D width law, fitting of `a_loc`, the 3D
//! localization scale `xi_loc`, the 3D pointer width and the resulting
//! coherence length of an interacting gas.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::special::dawson;

/// Dimensionless pointer width `sigma_pi sigma_G / hbar = kappa/(4 a_loc) + a_loc`.
pub fn width_model_1d(kappa: f64, a_loc: f64) -> Result<f64> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {kappa}")));
    }
    if !(a_loc > 0.0 && a_loc.is_finite()) {
        return Err(Error::InvalidParameter(format!("a_loc must be > 0, got {a_loc}")));
    }
    Ok(kappa / (4.0 * a_loc) + a_loc)
}

/// Result of fitting `a_loc` to a (kappa, width) table.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthFit {
    pub a_loc: f64,
    /// Worst-case `|model / measured - 1|` over the table.
    pub max_rel_deviation: f64,
    /// Gauss-Newton standard error of `a_loc`.
    pub std_error: f64,
    pub rows: usize,
    /// `log10(kappa_max / kappa_min)`.
    pub decades: f64,
    /// Set when the table spans fewer than two decades of kappa.
    pub narrow_span: bool,
}

fn relative_residual_sq(rows: &[(f64, f64)], a: f64) -> f64 {
    rows.iter()
        .map(|&(k, w)| {
            let r = (k / (4.0 * a) + a) / w - 1.0;
            r * r
        })
        .sum()
}

/// Least-squares fit of `a_loc` minimizing relative residuals of
/// [`width_model_1d`] against `rows = [(kappa, measured width)]`.
pub fn fit_a_loc(rows: &[(f64, f64)]) -> Result<WidthFit> {
    if rows.len() < 5 {
        return Err(Error::Fit(format!("need at least 5 rows, got {}", rows.len())));
    }
    if rows.iter().any(|&(k, w)| !(k > 0.0 && w > 0.0 && k.is_finite() && w.is_finite())) {
        return Err(Error::Fit("kappa and width must be positive".into()));
    }
    let objective = |a: f64| relative_residual_sq(rows, a);

    // coarse log scan, then golden-section refinement around the best cell
    let scan: Vec<f64> = (0..=400).map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / 400.0)).collect();
    let best = (0..scan.len())
        .min_by(|&i, &j| objective(scan[i]).total_cmp(&objective(scan[j])))
        .unwrap();
    let mut lo = scan[best.saturating_sub(1)];
    let mut hi = scan[(best + 1).min(scan.len() - 1)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while hi - lo > 1e-14 * hi {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = objective(d);
        }
    }
    let a = 0.5 * (lo + hi);

    let max_rel_deviation = rows
        .iter()
        .map(|&(k, w)| ((k / (4.0 * a) + a) / w - 1.0).abs())
        .fold(0.0, f64::max);
    let jtj: f64 = rows
        .iter()
        .map(|&(k, w)| {
            let j = (1.0 - k / (4.0 * a * a)) / w;
            j * j
        })
        .sum();
    let dof = (rows.len() - 1) as f64;
    let std_error = (objective(a) / dof / jtj).sqrt();
    let kmin = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let kmax = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let decades = (kmax / kmin).log10();
    Ok(WidthFit { a_loc: a, max_rel_deviation, std_error, rows: rows.len(), decades, narrow_span: decades < 2.0 })
}

/// Right-hand side of the `xi_loc` fixed-point equation,
/// `exp(a^2/2 - 4 pi xi^2) erfi(2 sqrt(pi) xi) / 4`, evaluated through
/// Dawson's integral so the exponentials cancel analytically.
pub fn xi_loc_rhs(xi: f64, a_loc: f64) -> f64 {
    let z = 2.0 * PI.sqrt() * xi;
    (0.5 * a_loc * a_loc).exp() * dawson(z) / (2.0 * PI.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiLocSolution {
    pub xi_loc: f64,
    /// `|xi - rhs(xi)|` at the returned root.
    pub residual: f64,
    pub iterations: usize,
}

/// Positive root of `xi = xi_loc_rhs(xi, a_loc)` by bisection on `(1e-6, 1)`.
pub fn solve_xi_loc(a_loc: f64) -> Result<XiLocSolution> {
    if !(a_loc > 0.0 && a_loc < 2.0) {
        return Err(Error::Domain(format!("a_loc must lie in (0, 2), got {a_loc}")));
    }
    let h = |xi: f64| xi - xi_loc_rhs(xi, a_loc);
    let (mut lo, mut hi) = (1e-6, 1.0);
    let (mut hlo, hhi) = (h(lo), h(hi));
    if hlo.signum() == hhi.signum() {
        let sweep = (0..=20)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / 20.0;
                (x, h(x))
            })
            .collect();
        return Err(Error::RootNotBracketed { sweep });
    }
    let mut iterations = 0;
    while iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid);
        if hm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if hm.signum() == hlo.signum() {
            lo = mid;
            hlo = hm;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let xi = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    Ok(XiLocSolution { xi_loc: xi, residual: h(xi).abs(), iterations })
}

/// Gas environment of the 3D estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GasParams {
    pub ell_free: f64,
    pub lambda_th: f64,
    pub a_loc: f64,
}

impl GasParams {
    pub fn new(ell_free: f64, lambda_th: f64, a_loc: f64) -> Result<Self> {
        for (name, v) in [("ell_free", ell_free), ("lambda_th", lambda_th)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(a_loc > 0.0 && a_loc < 2.0) {
            return Err(Error::InvalidParameter(format!("a_loc must lie in (0, 2), got {a_loc}")));
        }
        Ok(Self { ell_free, lambda_th, a_loc })
    }
}

/// `sigma_pi = ell_free / (16 xi_loc) + xi_loc lambda_th`.
pub fn pointer_width_3d_with(xi_loc: f64, ell_free: f64, lambda_th: f64) -> f64 {
    ell_free / (16.0 * xi_loc) + xi_loc * lambda_th
}

pub fn pointer_width_3d(gas: &GasParams) -> Result<f64> {
    let xi = solve_xi_loc(gas.a_loc)?.xi_loc;
    Ok(pointer_width_3d_with(xi, gas.ell_free, gas.lambda_th))
}

/// `(1/lambda_th^2 + 1/(8 pi sigma_pi^2))^(-1/2)`; `sigma_pi = inf` gives `lambda_th`.
pub fn coherence_length(sigma_pi: f64, lambda_th: f64) -> Result<f64> {
    if !(sigma_pi > 0.0) || !(lambda_th > 0.0 && lambda_th.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "coherence length needs positive inputs (sigma_pi = {sigma_pi}, lambda_th = {lambda_th})"
        )));
    }
    let inv = 1.0 / (lambda_th * lambda_th) + 1.0 / (8.0 * PI * sigma_pi * sigma_pi);
    Ok(inv.sqrt().recip())
}

/// Full 3D estimate for one gas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GasModel {
    pub xi_loc: f64,
    pub xi_residual: f64,
    pub sigma_pi: f64,
    pub lambda_coh: f64,
}

pub fn gas_model(gas: &GasParams) -> Result<GasModel> {
    let sol = solve_xi_loc(gas.a_loc)?;
    let sigma_pi = pointer_width_3d_with(sol.xi_loc, gas.ell_free, gas.lambda_th);
    Ok(GasModel {
        xi_loc: sol.xi_loc,
        xi_residual: sol.residual,
        sigma_pi,
        lambda_coh: coherence_length(sigma_pi, gas.lambda_th)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn width_model_values() {
        assert_eq!(width_model_1d(0.0, 0.4).unwrap(), 0.4);
        let a: f64 = 0.37;
        assert!((width_model_1d(4.0 * a * a, a).unwrap() - 2.0 * a).abs() < 1e-15);
        assert!(width_model_1d(1.0, 0.0).is_err());
    }

    #[test]
    fn fit_recovers_generating_constant() {
        let rows: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let k = 10f64.powf(-4.0 + 5.0 * i as f64 / 8.0);
                (k, width_model_1d(k, 0.4).unwrap())
            })
            .collect();
        let fit = fit_a_loc(&rows).unwrap();
        assert!((fit.a_loc - 0.4).abs() < 1e-6, "{}", fit.a_loc);
        assert!(fit.max_rel_deviation < 1e-9);
        assert!(!fit.narrow_span);
    }

    #[test]
    fn fit_needs_five_rows() {
        let rows = [(1e-3, 0.4), (1e-2, 0.41), (1e-1, 0.46), (1.0, 1.0)];
        assert!(matches!(fit_a_loc(&rows), Err(Error::Fit(_))));
    }

    #[test]
    fn narrow_tables_flagged_and_fit_within_error() {
        // synthetic widths with 3% multiplicative noise
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut noisy = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
            (0..10)
                .map(|i| {
                    let k = 10f64.powf(lo + (hi - lo) * i as f64 / 9.0);
                    let noise = 1.0 + 0.03 * (2.0 * rng.random::<f64>() - 1.0);
                    (k, width_model_1d(k, 0.4).unwrap() * noise)
                })
                .collect()
        };
        let wide = fit_a_loc(&noisy(-3.0, 1.0)).unwrap();
        let narrow = fit_a_loc(&noisy(-3.0, -2.0)).unwrap();
        assert!(narrow.narrow_span && !wide.narrow_span);
        for fit in [wide, narrow] {
            assert!(fit.std_error > 0.0);
            assert!((fit.a_loc - 0.4).abs() < 4.0 * fit.std_error, "{fit:?}");
        }
    }

    // printed form of the equation, using the positive erfi series directly
    fn rhs_printed(xi: f64, a: f64) -> f64 {
        let z = 2.0 * PI.sqrt() * xi;
        let mut power = z;
        let mut sum = z;
        for n in 1..200 {
            power *= z * z / n as f64;
            sum += power / (2 * n + 1) as f64;
        }
        let erfi = 2.0 / PI.sqrt() * sum;
        (0.5 * a * a - 4.0 * PI * xi * xi).exp() * erfi / 4.0
    }

    fn sign_scan_root(a: f64, points: usize) -> Vec<f64> {
        let (lo, hi) = (1e-6, 1.0);
        let h = |xi: f64| xi - rhs_printed(xi, a);
        let mut roots = Vec::new();
        let mut prev_x = lo;
        let mut prev = h(lo);
        for i in 1..=points {
            let x = lo + (hi - lo) * i as f64 / points as f64;
            let v = h(x);
            if v.signum() != prev.signum() {
                // linear interpolation inside the bracketing cell
                roots.push(prev_x - prev * (x - prev_x) / (v - prev));
            }
            prev_x = x;
            prev = v;
        }
        roots
    }

    #[test]
    fn xi_loc_for_reference_constant() {
        let sol = solve_xi_loc(0.4).unwrap();
        assert!((sol.xi_loc - 0.1).abs() <= 0.02, "{}", sol.xi_loc);
        assert!(sol.residual < 1e-12);
        assert!((sol.xi_loc - rhs_printed(sol.xi_loc, 0.4)).abs() < 1e-12);
    }

    #[test]
    fn bisection_agrees_with_sign_scan() {
        let roots = sign_scan_root(0.8, 1_000_000);
        assert_eq!(roots.len(), 1);
        let sol = solve_xi_loc(0.8).unwrap();
        assert!((sol.xi_loc - roots[0]).abs() < 1e-10, "{} vs {}", sol.xi_loc, roots[0]);
    }

    #[test]
    fn root_unique_across_range() {
        for a in [0.05, 0.4, 1.0, 1.5, 1.95] {
            assert_eq!(sign_scan_root(a, 100_000).len(), 1, "a_loc = {a}");
        }
    }

    #[test]
    fn xi_loc_domain() {
        assert!(matches!(solve_xi_loc(2.5), Err(Error::Domain(_))));
        assert!(matches!(solve_xi_loc(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn pointer_width_limits() {
        assert!((pointer_width_3d_with(0.1, 1.6, 1.0) - 1.1).abs() < 1e-15);
        let xi = solve_xi_loc(0.4).unwrap().xi_loc;
        let dense = pointer_width_3d(&GasParams::new(1e-12, 2.0, 0.4).unwrap()).unwrap();
        assert!((dense - xi * 2.0).abs() < 1e-9);
        let thin = pointer_width_3d(&GasParams::new(1e6, 1.0, 0.4).unwrap()).unwrap();
        assert!((thin / (1e6 / (16.0 * xi)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherence_length_limits() {
        assert!((coherence_length(f64::INFINITY, 1.3).unwrap() - 1.3).abs() < 1e-15);
        let s = 1.0 / (8.0 * PI).sqrt();
        assert!((coherence_length(s, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let sweep: Vec<f64> = (1..200).map(|i| coherence_length(0.01 * i as f64, 1.0).unwrap()).collect();
        assert!(sweep.windows(2).all(|w| w[1] > w[0]));
        assert!(sweep.iter().all(|&l| l <= 1.0));
    }

    #[test]
    fn denser_gas_shortens_coherence() {
        let mut prev = 0.0;
        for i in 0..50 {
            let ell = 10f64.powf(-3.0 + 0.1 * i as f64);
            let m = gas_model(&GasParams::new(ell, 1.0, 0.4).unwrap()).unwrap();
            assert!(m.lambda_coh <= 1.0);
            assert!(m.sigma_pi > prev);
            prev = m.sigma_pi;
        }
    }
}
