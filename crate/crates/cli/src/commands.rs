use std::path::PathBuf;

use ladderskin::fit::{scaling_fit, two_segment_breakpoint, FitModel, FitPoint};
use ladderskin::linalg::{c64, conjugation_defect, hausdorff, match_spectra, MemoryCap};
use ladderskin::liouville::{
    build_leg_liouvillian, build_liouvillian, gap_scan, sorted_eigenvalues, spectral_gap, steady_state,
    trace_preservation_residual, LiouvillianMatrix, SpectralTolerances,
};
use ladderskin::model::flat;
use ladderskin::observables::{correlation_decay_fit, ensemble_statistics, MiSegments, TrajectoryEnsemble};
use ladderskin::oracle::{build_fock_operators, cross_validate, exact_evolve, slater_density_matrix, EvolveMethod, Sector};
use ladderskin::perturb::{first_order_from, heff_eigensystem, max_im_eigenstate_fit, zeroth_order_spectrum, FitWindow};
use ladderskin::trajectory::{run_ensemble, InitialState, COARSE_STEP_WARNING};
use ladderskin::{Error, LadderConfig, Leg};
use serde_json::json;

use crate::output::{num, RunOutput, Table};
use crate::params::Params;
use crate::CliError;

fn spectrum_table(name: &str, ev: &[c64]) -> Table {
    let mut t = Table::new(name, &["index", "re", "im"]);
    for (k, z) in ev.iter().enumerate() {
        t.push(vec![k.to_string(), num(z.re), num(z.im)]);
    }
    t
}

fn density_table(a: &[f64], b: &[f64]) -> Table {
    let mut t = Table::new("steady_density.csv", &["rung", "density_a", "density_b"]);
    for j in 0..a.len() {
        t.push(vec![(j + 1).to_string(), num(a[j]), num(b[j])]);
    }
    t
}

fn zero_modes(ev: &[c64], tol: SpectralTolerances) -> usize {
    ev.iter().filter(|z| z.norm() < tol.tol_zero).count()
}

fn steady_sector_error(count: usize, tol: SpectralTolerances) -> Option<Error> {
    match count {
        0 => Some(Error::NoSteadyState { tol_zero: tol.tol_zero }),
        1 => None,
        count => Some(Error::DegenerateSteadySector { count, tol_zero: tol.tol_zero }),
    }
}

/// Steady-state densities per leg, rung-ordered.
fn leg_profiles(l: &LiouvillianMatrix, rho: &ladderskin::linalg::CMat) -> (Vec<f64>, Vec<f64>) {
    let n = l.cfg.n;
    match l.leg {
        None => (
            (1..=n).map(|j| rho[(flat(j, Leg::A), flat(j, Leg::A))].re).collect(),
            (1..=n).map(|j| rho[(flat(j, Leg::B), flat(j, Leg::B))].re).collect(),
        ),
        Some(leg) => {
            let on: Vec<f64> = (0..n).map(|k| rho[(k, k)].re).collect();
            match leg {
                Leg::A => (on, vec![0.0; n]),
                Leg::B => (vec![0.0; n], on),
            }
        }
    }
}

pub fn spectrum(p: &Params) -> Result<PathBuf, CliError> {
    let cfg = p.single(None, None)?;
    let tol = SpectralTolerances::default();
    let l = build_liouvillian(&cfg, MemoryCap::default())?;
    let ev = sorted_eigenvalues(l.matrix.as_ref())?;
    let mut out = RunOutput::create(&p.out_dir, "spectrum")?;
    out.result("ladder", cfg);
    out.write_table(&spectrum_table("spectrum.csv", &ev))?;
    let zeros = zero_modes(&ev, tol);
    out.result("eigenvalue_count", ev.len());
    out.result("zero_modes", zeros);
    out.result("gap", spectral_gap(&ev, tol.tol_zero).unwrap_or(0.0).max(0.0));
    out.result("max_real_part", ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max));
    out.result("max_abs_real_part", ev.iter().map(|z| z.re.abs()).fold(0.0, f64::max));
    out.result("conjugation_defect", conjugation_defect(&ev));
    out.result("trace_preservation_residual", trace_preservation_residual(&l));
    let failure = steady_sector_error(zeros, tol);
    if failure.is_none() {
        let (rho, res) = steady_state(&l)?;
        let (a, b) = leg_profiles(&l, &rho);
        out.write_table(&density_table(&a, &b))?;
        out.result("steady_residual", res);
    } else {
        out.warn("steady state not unique; steady_density.csv not written (use steady-state --leg at delta = 0)");
    }
    out.finish(p)?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(p.out_dir.clone()),
    }
}

pub fn gap_scan_cmd(p: &Params) -> Result<PathBuf, CliError> {
    let ns = if p.n.is_empty() { vec![10, 20, 30, 40] } else { p.n.clone() };
    let deltas = if p.delta.is_empty() { vec![0.01, 1.0] } else { p.delta.clone() };
    let base = p.ladder(ns[0], deltas[0])?;
    for &n in &ns {
        p.ladder(n, deltas[0])?;
    }
    for &d in &deltas {
        p.ladder(ns[0], d)?;
    }
    let scan = gap_scan(&base, &ns, &deltas, SpectralTolerances::default(), MemoryCap::default());

    let mut out = RunOutput::create(&p.out_dir, "gap-scan")?;
    out.result("grid", json!({"N": ns, "delta": deltas, "t": p.t, "gamma": p.gamma}));
    let mut pts = Table::new("gap_scan.csv", &["N", "delta", "gap", "error"]);
    let mut failed = 0;
    for g in &scan.points {
        let (gap, err) = match &g.gap {
            Ok(v) => (num(*v), String::new()),
            Err(e) => {
                failed += 1;
                ("NaN".to_string(), e.clone())
            }
        };
        pts.push(vec![g.n.to_string(), num(g.delta), gap, err]);
    }
    out.write_table(&pts)?;
    let mut fits = Table::new(
        "gap_fits.csv",
        &["delta", "loglog_slope", "intercept", "r_squared", "relative_spread", "error"],
    );
    let mut fit_json = Vec::new();
    for (delta, f) in &scan.slopes {
        match f {
            Ok(r) => {
                fits.push(vec![
                    num(*delta),
                    num(r.slope),
                    num(r.intercept),
                    r.r_squared.map_or("NaN".into(), num),
                    num(r.relative_spread),
                    String::new(),
                ]);
                fit_json.push(json!({"delta": delta, "loglog_slope": r.slope, "r_squared": r.r_squared, "relative_spread": r.relative_spread}));
            }
            Err(e) => {
                fits.push(vec![num(*delta), "NaN".into(), "NaN".into(), "NaN".into(), "NaN".into(), e.clone()]);
                fit_json.push(json!({"delta": delta, "error": e}));
            }
        }
    }
    out.write_table(&fits)?;
    out.result("fits", fit_json);
    out.result("failed_points", failed);
    if failed > 0 {
        out.warn(format!("{failed} grid point(s) failed; see the error column of gap_scan.csv"));
    }
    out.finish(p)
}

pub fn steady_state_cmd(p: &Params) -> Result<PathBuf, CliError> {
    let cfg = p.single(None, None)?;
    let cap = MemoryCap::default();
    let l = match p.leg {
        Some(leg) => build_leg_liouvillian(&cfg, leg, cap)?,
        None if cfg.delta == 0.0 => {
            // decoupled legs: one steady state per leg
            return Err(Error::DegenerateSteadySector { count: 2, tol_zero: SpectralTolerances::default().tol_zero }.into());
        }
        None => build_liouvillian(&cfg, cap)?,
    };
    let (rho, res) = steady_state(&l)?;
    let (a, b) = leg_profiles(&l, &rho);
    let mut out = RunOutput::create(&p.out_dir, "steady-state")?;
    out.result("ladder", cfg);
    out.write_table(&density_table(&a, &b))?;
    out.result("steady_residual", res);
    out.result("trace_preservation_residual", trace_preservation_residual(&l));
    out.result("leg_sector", p.leg.map(|l| l.to_string()));
    let n = cfg.n;
    if p.leg.is_none() {
        let rot = (0..n).map(|j| (a[j] - b[n - 1 - j]).abs()).fold(0.0, f64::max);
        out.result("rotation_symmetry_defect", rot);
        let ln_b: Vec<f64> = b.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
        // skin region of leg B sits at the right edge
        out.result("skin_width_rungs", two_segment_breakpoint(&ln_b, 3).map(|k| n - k));
        let bulk: Vec<f64> = (n / 4..3 * n / 4).flat_map(|j| [a[j], b[j]]).collect();
        if !bulk.is_empty() {
            let mean = bulk.iter().sum::<f64>() / bulk.len() as f64;
            out.result("bulk_density_over_uniform", mean * 2.0 * n as f64);
        }
    } else {
        let prof = if p.leg == Some(Leg::A) { &a } else { &b };
        let pts: Vec<FitPoint> = prof.iter().enumerate().map(|(j, &v)| FitPoint::new((j + 1) as f64, v)).collect();
        if let Ok(f) = scaling_fit(&pts, FitModel::Exponential) {
            out.result("exponential_rate", f.slope);
            out.result("exponential_r_squared", f.r_squared);
        }
    }
    out.finish(p)
}

pub fn perturb(p: &Params) -> Result<PathBuf, CliError> {
    let order = p.order.unwrap_or(1);
    if order > 1 {
        return Err(CliError::Usage(format!("--order {order} is not supported (0 or 1)")));
    }
    let cfg = p.single(None, None)?;
    let es = heff_eigensystem(&cfg)?;
    let d = es.dim();
    let mut out = RunOutput::create(&p.out_dir, "perturb")?;
    out.result("ladder", cfg);

    let mut heff = Table::new("heff_spectrum.csv", &["index", "re", "im", "biorthogonal_overlap"]);
    for (m, e) in es.energies.iter().enumerate() {
        heff.push(vec![m.to_string(), num(e.re), num(e.im), num(es.overlap(m))]);
    }
    out.write_table(&heff)?;

    let zeroth = zeroth_order_spectrum(&es);
    let values = if order == 0 {
        zeroth.clone()
    } else {
        let f = first_order_from(&cfg, &es, cfg.gamma);
        out.result("flagged_pairs", f.flagged_pairs.len());
        out.result("degenerate_clusters", f.degenerate_clusters);
        out.result("largest_cluster", f.largest_cluster);
        if !f.flagged_pairs.is_empty() {
            out.warn(format!("{} pair(s) with small biorthogonal overlap", f.flagged_pairs.len()));
        }
        f.eigenvalues
    };
    let mut t = Table::new("perturb_spectrum.csv", &["m", "n", "re", "im", "re_zeroth", "im_zeroth"]);
    for k in 0..d * d {
        t.push(vec![
            (k / d).to_string(),
            (k % d).to_string(),
            num(values[k].re),
            num(values[k].im),
            num(zeroth[k].re),
            num(zeroth[k].im),
        ]);
    }
    out.write_table(&t)?;
    out.result("order", order);
    out.result("heff_condition", es.condition);
    out.result("heff_near_defective", es.near_defective);

    let exact = sorted_eigenvalues(build_liouvillian(&cfg, MemoryCap::default())?.matrix.as_ref())?;
    out.result("hausdorff_to_exact", hausdorff(&values, &exact));
    out.result("hausdorff_zeroth_to_exact", hausdorff(&zeroth, &exact));

    match max_im_eigenstate_fit(&cfg, FitWindow::default()) {
        Ok(rep) => {
            let f = rep.primary();
            let mut loc = Table::new("localization.csv", &["rung", "psi_a", "psi_b"]);
            for j in 0..cfg.n {
                loc.push(vec![(j + 1).to_string(), num(f.profile_a[j]), num(f.profile_b[j])]);
            }
            out.write_table(&loc)?;
            out.result(
                "localization",
                json!({"kappa": f.kappa, "kappa_n": f.kappa_n(), "prefactor": f.prefactor, "r_squared": f.r_squared,
                       "degenerate": rep.degenerate, "rejected": rep.rejected}),
            );
        }
        Err(e) => out.warn(format!("localization fit skipped: {e}")),
    }
    out.finish(p)
}

fn stat_cols(s: ladderskin::observables::Stat) -> [String; 2] {
    [num(s.mean), num(s.stderr)]
}

fn ensemble_tables(out: &mut RunOutput, ens: &TrajectoryEnsemble, n: usize, suffix: &str) -> Result<(), CliError> {
    let mut e = Table::new(format!("entropy_t{suffix}.csv"), &["time", "mean", "stderr"]);
    for (t, s) in ens.times.iter().zip(&ens.entropy) {
        let [m, se] = stat_cols(*s);
        e.push(vec![num(*t), m, se]);
    }
    out.write_table(&e)?;
    if let Some(mi) = &ens.mutual_info {
        let mut t = Table::new(format!("mi_t{suffix}.csv"), &["time", "mean", "stderr"]);
        for (time, s) in ens.times.iter().zip(mi) {
            let [m, se] = stat_cols(*s);
            t.push(vec![num(*time), m, se]);
        }
        out.write_table(&t)?;
    }
    let mut dens = Table::new(
        format!("density_t{suffix}.csv"),
        &["time", "rung", "a_mean", "a_stderr", "b_mean", "b_stderr"],
    );
    for (s, time) in ens.times.iter().enumerate() {
        for j in 0..n {
            let [am, ase] = stat_cols(ens.density_a[s][j]);
            let [bm, bse] = stat_cols(ens.density_b[s][j]);
            dens.push(vec![num(*time), (j + 1).to_string(), am, ase, bm, bse]);
        }
    }
    out.write_table(&dens)?;
    let mut prof = Table::new(
        format!("steady_profile{suffix}.csv"),
        &["rung", "a_mean", "a_stderr", "b_mean", "b_stderr"],
    );
    for j in 0..n {
        let [am, ase] = stat_cols(ens.steady_density_a[j]);
        let [bm, bse] = stat_cols(ens.steady_density_b[j]);
        prof.push(vec![(j + 1).to_string(), am, ase, bm, bse]);
    }
    out.write_table(&prof)?;
    let mut corr = Table::new(
        format!("corr_decay{suffix}.csv"),
        &["x", "chord", "aa_mean", "aa_stderr", "bb_mean", "bb_stderr"],
    );
    for (k, (aa, bb)) in ens.corr_aa.iter().zip(&ens.corr_bb).enumerate() {
        let x = (k + 1) as f64;
        let [am, ase] = stat_cols(*aa);
        let [bm, bse] = stat_cols(*bb);
        corr.push(vec![(k + 1).to_string(), num((std::f64::consts::PI * x / n as f64).sin()), am, ase, bm, bse]);
    }
    out.write_table(&corr)
}

fn correlation_fits(ens: &TrajectoryEnsemble, n: usize) -> serde_json::Value {
    let mut v = serde_json::Map::new();
    for (leg, prof) in [("aa", &ens.corr_aa), ("bb", &ens.corr_bb)] {
        let means: Vec<f64> = prof.iter().map(|s| s.mean).collect();
        for model in [FitModel::PowerLaw, FitModel::Exponential] {
            let key = format!("{leg}_{}", if model == FitModel::PowerLaw { "chord_power_law" } else { "exponential" });
            let val = match correlation_decay_fit(&means, n, model) {
                Ok(f) => json!({"slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared}),
                Err(e) => json!({"error": e.to_string()}),
            };
            v.insert(key, val);
        }
    }
    serde_json::Value::Object(v)
}

pub fn trajectories(p: &Params) -> Result<PathBuf, CliError> {
    if p.n.is_empty() {
        return Err(CliError::Usage("--N is required".into()));
    }
    let delta = match p.delta.as_slice() {
        [d] => *d,
        [] => return Err(CliError::Usage("--delta is required".into())),
        _ => return Err(CliError::Usage("trajectories takes a single --delta value".into())),
    };
    let initial = p.initial.clone().unwrap_or(InitialState::Neel);
    let mut plan = Vec::new();
    for &n in &p.n {
        let cfg = p.ladder(n, delta)?;
        if n % 2 != 0 {
            return Err(CliError::Usage(format!("trajectories need even N, got {n}")));
        }
        let tcfg = p.trajectory_config(&cfg)?;
        initial.build(&cfg)?;
        plan.push((cfg, tcfg));
    }

    let mut out = RunOutput::create(&p.out_dir, "trajectories")?;
    let multi = plan.len() > 1;
    let mut per_n = Vec::new();
    let mut ent_pts = Vec::new();
    let mut mi_pts = Vec::new();
    for (cfg, tcfg) in &plan {
        let n = cfg.n;
        let series = run_ensemble(cfg, tcfg, &initial, p.n_traj, p.workers)?;
        let ens = if series.len() == 1 {
            out.warn("single trajectory: standard errors are reported as zero");
            let mut e = ensemble_statistics(&[series[0].clone(), series[0].clone()])?;
            e.n_traj = 1;
            e
        } else {
            ensemble_statistics(&series)?
        };
        let suffix = if multi { format!("_N{n}") } else { String::new() };
        ensemble_tables(&mut out, &ens, n, &suffix)?;

        let pmax = series.iter().map(|s| s.max_jump_probability).fold(0.0, f64::max);
        if pmax > COARSE_STEP_WARNING {
            out.warn(format!("N={n}: jump probability {pmax:.3} exceeds {COARSE_STEP_WARNING}; dt may be too coarse"));
        }
        let mi_seg = MiSegments::new(n).ok();
        ent_pts.push(FitPoint::with_stderr(n as f64, ens.steady_entropy.mean, ens.steady_entropy.stderr));
        if let Some(mi) = ens.steady_mutual_info {
            mi_pts.push(FitPoint::with_stderr(n as f64, mi.mean, mi.stderr));
        }
        per_n.push(json!({
            "N": n,
            "ladder": cfg,
            "dt": tcfg.dt,
            "sample_interval": tcfg.sample_interval,
            "t_total": tcfg.t_total,
            "n_traj": ens.n_traj,
            "steady_window_start_time": ens.times[ens.window_start_index],
            "steady_entropy": ens.steady_entropy,
            "peak_entropy": ens.peak_entropy(),
            "steady_mutual_info": ens.steady_mutual_info,
            "mi_segments": mi_seg.map(|s| json!({
                "left_rungs": s.left, "right_rungs": s.right,
                "center_distance": s.center_distance(), "convention": "center-to-center distance N/2"
            })),
            "total_jumps": series.iter().map(|s| s.jumps).sum::<u64>(),
            "max_jump_probability": pmax,
            "max_orthonormality_defect": series.iter().map(|s| s.max_orthonormality_defect).fold(0.0, f64::max),
            "correlation_fits": correlation_fits(&ens, n),
        }));
    }
    out.result("initial_state", initial.to_string());
    out.result("ensembles", &per_n);

    if multi {
        let mut fits = serde_json::Map::new();
        for (name, pts) in [("entropy_scaling.csv", &ent_pts), ("mi_scaling.csv", &mi_pts)] {
            if pts.is_empty() {
                continue;
            }
            let mut t = Table::new(name, &["N", "mean", "stderr"]);
            for q in pts.iter() {
                t.push(vec![(q.x as usize).to_string(), num(q.y), num(q.stderr.unwrap_or(0.0))]);
            }
            out.write_table(&t)?;
            for model in [FitModel::Log, FitModel::Plateau] {
                let v = match ladderskin::fit::fit_points(pts, model) {
                    Ok(f) => json!({"slope": f.slope, "slope_stderr": f.slope_stderr, "intercept": f.intercept,
                                    "r_squared": f.r_squared, "relative_spread": f.relative_spread}),
                    Err(e) => json!({"error": e.to_string()}),
                };
                fits.insert(format!("{}_{:?}", name.trim_end_matches(".csv"), model).to_lowercase(), v);
            }
        }
        out.write_json("fits.json", &fits)?;
    } else {
        out.write_json("fits.json", &per_n[0]["correlation_fits"])?;
    }
    out.finish(p)
}

/// Truncated Neel pattern for odd N (sites with k mod 4 in {0, 3}).
fn default_oracle_initial(cfg: &LadderConfig) -> InitialState {
    if cfg.n % 2 == 0 {
        InitialState::Neel
    } else {
        InitialState::Sites((0..cfg.n_sites()).filter(|k| k % 4 == 0 || k % 4 == 3).collect())
    }
}

pub fn oracle_compare(p: &Params) -> Result<PathBuf, CliError> {
    let cfg = p.single(Some(3), Some(0.1))?;
    let cap = MemoryCap::default();
    let initial = p.initial.clone().unwrap_or_else(|| default_oracle_initial(&cfg));
    let mut report = cross_validate(&cfg, &initial, cap)?;
    let mut out = RunOutput::create(&p.out_dir, "oracle-compare")?;
    out.result("ladder", cfg);

    let one = build_fock_operators(&cfg, Sector::Fixed(1), cap)?;
    let mb = sorted_eigenvalues(one.liouvillian().as_ref())?;
    let sp = sorted_eigenvalues(build_liouvillian(&cfg, cap)?.matrix.as_ref())?;
    let mut t = Table::new("oracle_spectrum.csv", &["index", "oracle_re", "oracle_im", "sp_re", "sp_im"]);
    for (k, (a, b)) in mb.iter().zip(&sp).enumerate() {
        t.push(vec![k.to_string(), num(a.re), num(a.im), num(b.re), num(b.im)]);
    }
    out.write_table(&t)?;
    out.result("spectrum_match", match_spectra(&mb, &sp));

    let state = initial.build(&cfg)?;
    let tcfg = p.trajectory_config(&cfg)?;
    out.result("time_grid", json!({"t_total": tcfg.t_total, "sample_interval": tcfg.sample_interval}));
    let n_samples = tcfg.n_samples()?;
    let grid: Vec<f64> = (0..=n_samples).map(|s| s as f64 * tcfg.sample_interval).collect();
    let ops = build_fock_operators(&cfg, Sector::Fixed(state.n_particles()), cap)?;
    let (_, rho0) = slater_density_matrix(state.u.as_ref())?;
    let ex = exact_evolve(&ops, rho0.as_ref(), &grid, EvolveMethod::Expm)?;
    let rk = exact_evolve(&ops, rho0.as_ref(), &grid, EvolveMethod::Rk45)?;
    let mut dens = Table::new("oracle_densities.csv", &["time", "site", "rung", "leg", "density_expm", "density_rk45"]);
    let mut method_gap: f64 = 0.0;
    for (s, time) in grid.iter().enumerate() {
        for k in 0..cfg.n_sites() {
            method_gap = method_gap.max((ex.densities[s][k] - rk.densities[s][k]).abs());
            let leg = if k % 2 == 0 { "A" } else { "B" };
            dens.push(vec![
                num(*time),
                (k + 1).to_string(),
                (k / 2 + 1).to_string(),
                leg.to_string(),
                num(ex.densities[s][k]),
                num(rk.densities[s][k]),
            ]);
        }
    }
    out.write_table(&dens)?;
    report.checks.push(ladderskin::oracle::CrossCheck {
        name: "exact evolution: expm vs adaptive RK".into(),
        residual: method_gap,
        tolerance: 1e-8,
        passed: method_gap <= 1e-8,
    });
    let trace_err = ex.trace_error.max(rk.trace_error);
    report.checks.push(ladderskin::oracle::CrossCheck {
        name: "exact evolution trace".into(),
        residual: trace_err,
        tolerance: 1e-10,
        passed: trace_err <= 1e-10,
    });

    let mut rep = Table::new("oracle_report.csv", &["check", "residual", "tolerance", "passed"]);
    for c in &report.checks {
        rep.push(vec![c.name.clone(), num(c.residual), num(c.tolerance), c.passed.to_string()]);
        println!("{} {:<36} residual {:.3e} (tolerance {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.residual, c.tolerance);
    }
    out.write_table(&rep)?;
    out.result("initial_state", initial.to_string());
    out.result("passed", report.passed());
    let worst = report.worst().cloned();
    out.result("worst_check", &worst);
    out.finish(p)?;
    if report.passed() {
        Ok(p.out_dir.clone())
    } else {
        let w = worst.expect("non-empty report");
        Err(CliError::Failed(format!(
            "oracle comparison failed; worst check {:?}: residual {:e} exceeds {:e}",
            w.name, w.residual, w.tolerance
        )))
    }
}
