//! The five subcommands. Each returns the manifest status and the exit code.

use std::fs;
use std::path::PathBuf;

use pointer_core::io::write_snapshot;
use pointer_core::locmodel::{coherence_length, fit_a_loc, pointer_width_3d_with, solve_xi_loc};
use pointer_core::packets::{born_weight_test, chi_square};
use pointer_core::pdp::{ensemble_density, run_ensemble, summarize, PacketDomains, TrajectoryConfig, WinnerRule};
use pointer_core::reference::{trace_distance, DensityMatrix, MasterConfig, MasterSolver};
use pointer_core::soliton::{find_soliton, width_curve, SolitonSearch, SweepOptions, WidthMeasurement};
use pointer_core::{Error, Grid, LocalizationRate, ModelParams, WaveFunction, C64};
use serde::Serialize;

use crate::config::{PacketSpec, RunConfig};
use crate::output::{f, Outputs};
use crate::CliError;

/// What a finished command reports.
#[derive(Debug)]
pub struct Finished {
    pub status: String,
    pub exit_code: i32,
    pub summary: String,
}

impl Finished {
    fn ok(summary: String) -> Self {
        Self { status: "ok".into(), exit_code: 0, summary }
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    fn require_seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config("this run is stochastic: pass --seed or set `seed` in the config".into()))
    }
}

fn superposition(grid: Grid, params: &ModelParams, packets: &[PacketSpec], momentum: f64) -> Result<WaveFunction, CliError> {
    let ell = params.localization_scale();
    let states: Vec<WaveFunction> = packets
        .iter()
        .map(|p| WaveFunction::gaussian(grid, p.x * ell, p.width * ell, momentum, params.hbar()))
        .collect::<Result<_, _>>()?;
    let terms: Vec<(C64, &WaveFunction)> =
        packets.iter().zip(&states).map(|(p, s)| (C64::from_polar(p.weight.sqrt(), p.phase), s)).collect();
    let mut psi = WaveFunction::superpose(&terms)?;
    psi.normalize();
    Ok(psi)
}

fn profile_rows(psi: &WaveFunction, t: Option<f64>) -> Vec<Vec<String>> {
    let g = psi.grid();
    psi.amps()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut row = Vec::with_capacity(4);
            if let Some(t) = t {
                row.push(f(t));
            }
            row.extend([f(g.x(i)), f(a.norm()), f(a.arg())]);
            row
        })
        .collect()
}

#[derive(Serialize)]
struct SolitonSummary {
    kappa: f64,
    converged: bool,
    sigma_pi: f64,
    /// `sigma_pi sigma_G / hbar`.
    width: f64,
    velocity: f64,
    tail_k: f64,
    tail_r_squared: f64,
    residual: f64,
    simulated_time: f64,
}

pub fn soliton(ctx: &Context, out: &mut Outputs) -> Result<Finished, CliError> {
    ctx.cfg.validate_soliton()?;
    let s = &ctx.cfg.soliton;
    let params = ModelParams::natural(s.kappa)?;
    let rate = LocalizationRate::gaussian(&params);
    let grid = Grid::centered(s.n, s.domain * params.localization_scale())?;
    let mut search = SolitonSearch::on_grid(grid, &params);
    if let Some(dt) = s.dt {
        search.evolve.dt = dt;
    }
    search.evolve.t_max = s.t_max * params.dispersion_time();
    search.evolve.convergence_tol = s.convergence_tol;
    search.evolve.potential_slope = s.potential_slope;
    search.check_interval = params.dispersion_time().max(1.0);
    search.keep_snapshots = s.profiles;
    let momentum = s.momentum * params.sigma_g();
    if !s.packets.is_empty() {
        search.initial = Some(superposition(grid, &params, &s.packets, momentum)?);
    } else if momentum != 0.0 {
        let single = [PacketSpec { x: 0.0, width: 1.0, weight: 1.0, phase: 0.0 }];
        search.initial = Some(superposition(grid, &params, &single, momentum)?);
    }
    search.evolve.validate(&grid, &params)?;

    let profile = match find_soliton(&params, &rate, &search) {
        Ok(p) => p,
        Err(Error::NonConvergence { reason, history }) => {
            out.write_csv(
                "residuals.csv",
                &["check", "shape_residual"],
                history.iter().enumerate().map(|(i, r)| vec![(i + 1).to_string(), f(*r)]),
            )?;
            return Ok(Finished {
                status: format!("not converged: {reason}"),
                exit_code: 1,
                summary: format!("soliton search did not converge: {reason}"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    out.write_csv(
        "timeseries.csv",
        &["t", "norm_drift", "centroid", "sigma", "shape_residual"],
        profile.samples.iter().map(|x| vec![f(x.t), f(x.norm_drift), f(x.centroid), f(x.sigma), f(x.shape_residual)]),
    )?;
    out.write_csv("profile.csv", &["x", "abs_psi", "phase"], profile_rows(&profile.state, None))?;
    if s.profiles {
        let rows = profile.snapshots.iter().flat_map(|(t, psi)| profile_rows(psi, Some(*t)));
        out.write_csv("profiles.csv", &["t", "x", "abs_psi", "phase"], rows)?;
    }
    let summary = SolitonSummary {
        kappa: s.kappa,
        converged: profile.converged,
        sigma_pi: profile.sigma_pi,
        width: profile.sigma_pi / params.localization_scale(),
        velocity: profile.velocity,
        tail_k: profile.tail.k,
        tail_r_squared: profile.tail.r_squared,
        residual: profile.residual,
        simulated_time: profile.elapsed,
    };
    out.write_json("summary.json", &summary)?;
    Ok(Finished::ok(format!(
        "converged at t = {:.4e}: width sigma_pi sigma_G/hbar = {:.6}, tail k = {:.4} (R^2 {:.4})",
        profile.elapsed, summary.width, profile.tail.k, profile.tail.r_squared
    )))
}

pub fn weights(ctx: &Context, out: &mut Outputs) -> Result<Finished, CliError> {
    ctx.cfg.validate_weights()?;
    let w = &ctx.cfg.weights;
    let seed = ctx.require_seed()?;
    let stats = born_weight_test(w.n, w.n_trials, seed)?;
    out.write_csv(
        "trials.csv",
        &["seed", "winner", "n_jumps", "termination_time"],
        stats.trials.iter().map(|t| vec![t.seed.to_string(), t.winner.to_string(), t.n_jumps.to_string(), f(t.termination_time)]),
    )?;
    out.write_csv(
        "counts.csv",
        &["index", "expected_weight", "count"],
        stats.expected.iter().zip(&stats.counts).enumerate().map(|(i, (e, c))| vec![i.to_string(), f(*e), c.to_string()]),
    )?;
    let (chi2, dof, p_value, pooled) = if w.negative_control {
        let c = chi_square(&stats.counts, &vec![1.0 / w.n as f64; w.n])?;
        (c.chi2, c.dof, c.p_value, c.pooled_cells)
    } else {
        (stats.chi2, stats.dof, stats.p_value, stats.pooled_cells)
    };
    out.write_csv(
        "experiment.csv",
        &["N", "n_trials", "chi2", "dof", "p_value", "pooled_cells", "timeouts", "negative_control"],
        [vec![
            w.n.to_string(),
            w.n_trials.to_string(),
            f(chi2),
            dof.to_string(),
            f(p_value),
            pooled.to_string(),
            stats.timeouts.to_string(),
            w.negative_control.to_string(),
        ]],
    )?;
    for line in &stats.pooling_log {
        eprintln!("chi-square: {line}");
    }
    let summary = format!("N = {}: chi2 = {chi2:.3} on {dof} dof, p = {p_value:.4}", w.n);
    if p_value < w.alpha {
        let what = if w.negative_control { "negative control rejected as expected" } else { "Born-rule test rejected" };
        return Ok(Finished { status: format!("rejected: {what}"), exit_code: 3, summary: format!("{summary} ({what})") });
    }
    Ok(Finished::ok(summary))
}

pub fn ensemble(ctx: &Context, out: &mut Outputs) -> Result<Finished, CliError> {
    ctx.cfg.validate_ensemble()?;
    let e = &ctx.cfg.ensemble;
    let seed = ctx.require_seed()?;
    if e.times.is_empty() {
        return Err(CliError::Config("ensemble.times must not be empty".into()));
    }
    let params = ModelParams::natural(e.kappa)?;
    let rate = LocalizationRate::gaussian(&params);
    let ell = params.localization_scale();
    let grid = Grid::centered(e.n, e.domain * ell)?;
    let psi0 = superposition(grid, &params, &e.packets, 0.0)?;
    let t_max = *e.times.last().expect("non-empty");
    let mut tcfg = TrajectoryConfig::new(t_max, e.dt);
    tcfg.snapshot_times = e.times.clone();
    tcfg.validate(&grid, &params)?;
    let records = run_ensemble(&psi0, &tcfg, &params, &rate, seed, e.trajectories)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut solver = MasterSolver::new(grid, MasterConfig { dt: e.reference_dt, ..MasterConfig::default() }, &params, &rate)?;
    let reference = solver.evolve_to_times(&DensityMatrix::pure(&psi0), &e.times)?;

    let domains = PacketDomains::new(e.packets.iter().map(|p| p.x * ell).collect())?;
    out.write_csv(
        "trajectories.csv",
        &["seed", "n_jumps", "winner_index", "final_centroid", "final_width"],
        records.iter().map(|r| {
            let s = summarize(r, &domains, WinnerRule::Centroid);
            vec![
                s.seed.to_string(),
                s.n_jumps.to_string(),
                s.winner.map_or(String::new(), |w| w.to_string()),
                f(s.centroid),
                f(s.width),
            ]
        }),
    )?;
    let mut distance_rows = Vec::new();
    let mut diag_rows = Vec::new();
    let mut anti_rows = Vec::new();
    let mut last = 0.0;
    for (k, &t) in e.times.iter().enumerate() {
        let states: Vec<&WaveFunction> = records.iter().map(|r| &r.snapshots[k].psi).collect();
        let ens = ensemble_density(&states)?;
        let d = trace_distance(&ens.rho, &reference[k])?;
        last = d;
        distance_rows.push(vec![f(t), f(d), e.trajectories.to_string(), f(ens.rho.purity()), f(reference[k].purity())]);
        for (i, (a, b)) in ens.rho.diagonal().iter().zip(reference[k].diagonal()).enumerate() {
            diag_rows.push(vec![f(t), f(grid.x(i)), f(*a), f(b)]);
        }
        for ((s, a), (_, b)) in ens.rho.antidiagonal().iter().zip(reference[k].antidiagonal()) {
            anti_rows.push(vec![f(t), f(*s), f(*a), f(b)]);
        }
    }
    out.write_csv(
        "trace_distance.csv",
        &["t", "trace_distance", "trajectories", "ensemble_purity", "reference_purity"],
        distance_rows,
    )?;
    out.write_csv("density_diagonal.csv", &["t", "x", "ensemble", "reference"], diag_rows)?;
    out.write_csv("density_antidiagonal.csv", &["t", "separation", "ensemble", "reference"], anti_rows)?;
    for r in records.iter().take(e.binary_snapshots) {
        for (k, snap) in r.snapshots.iter().enumerate() {
            let mut bytes = Vec::new();
            write_snapshot(&mut bytes, snap.t, &snap.psi)?;
            out.write(&format!("snapshots/traj_{:016x}_{k}.bin", r.seed), &bytes)?;
        }
    }
    Ok(Finished::ok(format!("{} trajectories, final trace distance {last:.4} at t = {t_max}", e.trajectories)))
}

/// Cached row of a width sweep, keyed by the bit pattern of kappa and the
/// sweep settings.
fn cache_name(kappa: f64, opts: &SweepOptions) -> String {
    let key = format!("{kappa:?}|{opts:?}");
    format!("cache/kappa_{:016x}_{}.csv", kappa.to_bits(), &crate::output::sha256_hex(key.as_bytes())[..12])
}

fn parse_cached(text: &str) -> Option<Result<WidthMeasurement, String>> {
    let line = text.lines().nth(1)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
    let rec = rdr.records().next()?.ok()?;
    let num = |i: usize| rec.get(i)?.parse::<f64>().ok();
    match rec.get(5)? {
        "ok" => Some(Ok(WidthMeasurement { width: num(1)?, residual: num(2)?, tail_k: num(3)?, elapsed: num(4)? })),
        _ => Some(Err(rec.get(6)?.to_string())),
    }
}

const WIDTH_HEADER: [&str; 7] = ["kappa", "width", "residual", "tail_k", "simulated_time", "status", "message"];

fn width_row(kappa: f64, r: &Result<WidthMeasurement, String>) -> Vec<String> {
    match r {
        Ok(m) => vec![f(kappa), f(m.width), f(m.residual), f(m.tail_k), f(m.elapsed), "ok".into(), String::new()],
        Err(msg) => vec![f(kappa), String::new(), String::new(), String::new(), String::new(), "failed".into(), msg.clone()],
    }
}

#[derive(Serialize)]
struct FitReport {
    a_loc: f64,
    std_error: f64,
    max_rel_deviation: f64,
    rows: usize,
    decades: f64,
    narrow_span: bool,
}

pub fn widthsweep(ctx: &Context, out: &mut Outputs) -> Result<Finished, CliError> {
    ctx.cfg.validate_widthsweep()?;
    let w = &ctx.cfg.widthsweep;
    let opts = SweepOptions {
        n: w.n,
        domain: w.domain,
        dt_factor: w.dt_factor,
        convergence_tol: w.convergence_tol,
        min_time: w.min_time,
        max_dispersion_times: w.max_dispersion_times,
    };
    let kappas = ctx.cfg.sweep_kappas();
    let mut results: Vec<Option<Result<WidthMeasurement, String>>> = kappas
        .iter()
        .map(|&k| {
            if !w.resume {
                return None;
            }
            fs::read_to_string(out.root().join(cache_name(k, &opts))).ok().and_then(|t| parse_cached(&t))
        })
        .collect();
    let missing: Vec<f64> = kappas.iter().zip(&results).filter(|(_, r)| r.is_none()).map(|(&k, _)| k).collect();
    let reused = kappas.len() - missing.len();
    let mut fresh = width_curve(&missing, &opts).into_iter();
    for r in results.iter_mut().filter(|r| r.is_none()) {
        let row = fresh.next().expect("one row per missing kappa");
        *r = Some(row.result.map_err(|e| e.to_string()));
    }
    let results: Vec<Result<WidthMeasurement, String>> = results.into_iter().map(|r| r.expect("filled")).collect();
    for (&k, r) in kappas.iter().zip(&results) {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(WIDTH_HEADER).and_then(|_| wtr.write_record(width_row(k, r))).map_err(|e| CliError::Internal(e.to_string()))?;
        let bytes = wtr.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
        out.write(&cache_name(k, &opts), &bytes)?;
    }
    out.write_csv("widths.csv", &WIDTH_HEADER, kappas.iter().zip(&results).map(|(&k, r)| width_row(k, r)))?;

    let table: Vec<(f64, f64)> = kappas.iter().zip(&results).filter_map(|(&k, r)| r.as_ref().ok().map(|m| (k, m.width))).collect();
    let failed = kappas.len() - table.len();
    if failed > 0 {
        eprintln!("warning: {failed} of {} rows did not converge", kappas.len());
    }
    if table.len() < 5 {
        eprintln!("warning: {} converged rows; at least 5 are needed to fit a_loc, no fit written", table.len());
        return Ok(Finished::ok(format!("{} rows ({reused} cached), no fit", kappas.len())));
    }
    let fit = fit_a_loc(&table)?;
    if fit.narrow_span {
        eprintln!("warning: the sweep spans only {:.2} decades of kappa", fit.decades);
    }
    out.write_json(
        "fit.json",
        &FitReport {
            a_loc: fit.a_loc,
            std_error: fit.std_error,
            max_rel_deviation: fit.max_rel_deviation,
            rows: fit.rows,
            decades: fit.decades,
            narrow_span: fit.narrow_span,
        },
    )?;
    Ok(Finished::ok(format!(
        "{} rows ({reused} cached, {failed} failed): a_loc = {:.4} ± {:.4}, max deviation {:.1}%",
        kappas.len(),
        fit.a_loc,
        fit.std_error,
        100.0 * fit.max_rel_deviation
    )))
}

#[derive(Serialize)]
struct GasRow {
    ell_free: f64,
    sigma_pi: f64,
    lambda_coh: f64,
}

#[derive(Serialize)]
struct GasReport {
    a_loc: f64,
    xi_loc: f64,
    xi_residual: f64,
    lambda_th: f64,
    rows: Vec<GasRow>,
}

pub fn gasmodel(ctx: &Context, out: &mut Outputs) -> Result<Finished, CliError> {
    ctx.cfg.validate_gasmodel()?;
    let g = &ctx.cfg.gasmodel;
    let sol = solve_xi_loc(g.a_loc)?;
    let rows = g
        .ell_free
        .iter()
        .map(|&ell| {
            let sigma_pi = pointer_width_3d_with(sol.xi_loc, ell, g.lambda_th);
            Ok(GasRow { ell_free: ell, sigma_pi, lambda_coh: coherence_length(sigma_pi, g.lambda_th)? })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = GasReport { a_loc: g.a_loc, xi_loc: sol.xi_loc, xi_residual: sol.residual, lambda_th: g.lambda_th, rows };
    out.write_json("gasmodel.json", &report)?;
    out.write_csv(
        "gasmodel.csv",
        &["ell_free", "lambda_th", "xi_loc", "sigma_pi", "lambda_coh"],
        report.rows.iter().map(|r| vec![f(r.ell_free), f(g.lambda_th), f(sol.xi_loc), f(r.sigma_pi), f(r.lambda_coh)]),
    )?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(Finished::ok(json))
}
