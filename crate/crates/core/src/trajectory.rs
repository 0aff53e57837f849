//! Quantum-jump trajectories of Slater determinants.
//!
//! Each step propagates `U <- exp(-i h_eff dt) U`, restores orthonormality by
//! a thin QR, then triggers every channel independently with probability
//! `p_i = γ dt Σ_k |⟨a_i|U_k⟩|²`. Triggered jumps are applied in channel
//! order without refreshing the probabilities.

use std::panic::{catch_unwind, AssertUnwindSafe};

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, expm, identity, max_abs, orthonormality_defect, CMat, I, ONE, ZERO};
use crate::model::{build_heff, build_jump_channels, flat, JumpChannel, LadderConfig, Leg};
use crate::observables::{
    correlation_matrix, correlation_profile, entanglement_entropy, half_cut_sites, leg_densities,
    mutual_information_with, window_start, MiSegments, ObservableSeries, STEADY_FRACTION,
};

/// Overlaps at or below this cannot carry a jump.
pub const PIVOT_TOL: f64 = 1e-12;
/// Smallest admissible `|R_kk|` after propagation.
pub const RANK_TOL: f64 = 1e-13;
/// Jump probabilities above this make the first-order unraveling unreliable.
pub const COARSE_STEP_WARNING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SlaterState {
    /// `2N x N_p` with orthonormal columns.
    pub u: CMat,
    pub time: f64,
}

impl SlaterState {
    pub fn n_particles(&self) -> usize {
        self.u.ncols()
    }

    pub fn from_sites(n_sites: usize, occupied: &[usize]) -> Result<Self> {
        let mut sorted = occupied.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != occupied.len() || sorted.last().is_some_and(|&k| k >= n_sites) {
            return Err(Error::invalid(format!(
                "occupied sites must be distinct and below {n_sites}: {occupied:?}"
            )));
        }
        let u = Mat::from_fn(n_sites, sorted.len(), |i, k| if i == sorted[k] { ONE } else { ZERO });
        Ok(SlaterState { u, time: 0.0 })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// Flattened pattern `1001 1001 ...`: leg A `1010...`, leg B `0101...`.
    Neel,
    /// Left half of each leg filled.
    DomainWall,
    /// Explicit 0-based flattened sites.
    Sites(Vec<usize>),
}

impl std::str::FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neel" => Ok(InitialState::Neel),
            "domain-wall" => Ok(InitialState::DomainWall),
            other => {
                let rest = other.strip_prefix("sites:").ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown initial state {other:?} (expected neel, domain-wall or sites:k1,k2,... with 1-based sites)"
                    ))
                })?;
                let sites = rest
                    .split(',')
                    .map(|t| match t.trim().parse::<usize>() {
                        Ok(k) if k >= 1 => Ok(k - 1),
                        _ => Err(Error::invalid(format!("bad site {t:?} in {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(InitialState::Sites(sites))
            }
        }
    }
}

impl std::fmt::Display for InitialState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialState::Neel => f.write_str("neel"),
            InitialState::DomainWall => f.write_str("domain-wall"),
            InitialState::Sites(s) => {
                let list: Vec<String> = s.iter().map(|k| (k + 1).to_string()).collect();
                write!(f, "sites:{}", list.join(","))
            }
        }
    }
}

impl InitialState {
    pub fn build(&self, cfg: &LadderConfig) -> Result<SlaterState> {
        match self {
            InitialState::Neel => neel_initial_state(cfg),
            InitialState::DomainWall => domain_wall_initial_state(cfg),
            InitialState::Sites(s) => SlaterState::from_sites(cfg.n_sites(), s),
        }
    }
}

pub fn neel_initial_state(cfg: &LadderConfig) -> Result<SlaterState> {
    if cfg.n % 2 != 0 {
        return Err(Error::invalid(format!("Neel initial state needs even N, got {}", cfg.n)));
    }
    let occ: Vec<usize> = (0..cfg.n_sites()).filter(|k| k % 4 == 0 || k % 4 == 3).collect();
    SlaterState::from_sites(cfg.n_sites(), &occ)
}

pub fn domain_wall_initial_state(cfg: &LadderConfig) -> Result<SlaterState> {
    if cfg.n % 2 != 0 {
        return Err(Error::invalid(format!("domain-wall initial state needs even N, got {}", cfg.n)));
    }
    let occ: Vec<usize> = (1..=cfg.n / 2)
        .flat_map(|j| [flat(j, Leg::A), flat(j, Leg::B)])
        .collect();
    SlaterState::from_sites(cfg.n_sites(), &occ)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_total: f64,
    pub sample_interval: f64,
    pub seed: u64,
    pub trajectory_id: u64,
}

impl TrajectoryConfig {
    pub const DEFAULT_DT: f64 = 0.05;
    pub const DEFAULT_SAMPLE_INTERVAL: f64 = 1.0;

    /// Defaults with `t_total = 2N`.
    pub fn for_ladder(cfg: &LadderConfig, seed: u64) -> Self {
        TrajectoryConfig {
            dt: Self::DEFAULT_DT,
            t_total: 2.0 * cfg.n as f64,
            sample_interval: Self::DEFAULT_SAMPLE_INTERVAL,
            seed,
            trajectory_id: 0,
        }
    }

    pub fn validated(self) -> Result<Self> {
        let finite = self.dt.is_finite() && self.t_total.is_finite() && self.sample_interval.is_finite();
        if !finite || self.dt <= 0.0 {
            return Err(Error::invalid(format!("dt must be positive and finite, got {}", self.dt)));
        }
        if self.sample_interval < self.dt {
            return Err(Error::invalid("sample_interval must be >= dt"));
        }
        if self.t_total < self.sample_interval {
            return Err(Error::invalid("t_total must be >= sample_interval"));
        }
        self.steps_per_sample()?;
        Ok(self)
    }

    fn whole(ratio: f64, what: &str) -> Result<usize> {
        let r = ratio.round();
        if (ratio - r).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(format!("{what} must be an integer multiple, ratio is {ratio}")));
        }
        Ok(r as usize)
    }

    pub fn steps_per_sample(&self) -> Result<usize> {
        Self::whole(self.sample_interval / self.dt, "sample_interval / dt")
    }

    pub fn n_samples(&self) -> Result<usize> {
        Self::whole(self.t_total / self.sample_interval, "t_total / sample_interval")
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.trajectory_id = id;
        self
    }
}

/// Independent stream per trajectory: ChaCha20 keyed by the master seed,
/// stream number set to the trajectory id.
pub fn rng_stream(seed: u64, trajectory_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trajectory_id);
    rng
}

/// `exp(-i h_eff dt)`.
pub fn propagator(cfg: &LadderConfig, dt: f64) -> CMat {
    let h = build_heff(cfg);
    let a = Mat::from_fn(h.nrows(), h.ncols(), |i, j| -I * dt * h[(i, j)]);
    expm(a.as_ref())
}

/// Above this estimated condition number Cholesky QR hands over to
/// Householder QR.
const CHOLQR_MAX_COND: f64 = 1e4;

/// Thin QR, returning `Q`. Uses Cholesky QR (`U†U = R†R`, `Q = U R⁻¹`), which
/// is accurate to round-off for the well-conditioned matrices produced by a
/// short propagation step, and falls back to Householder QR otherwise.
fn restabilize(u: &CMat) -> Result<CMat> {
    let gram = u.adjoint() * u;
    if let Ok(llt) = gram.llt(Side::Lower) {
        let l = llt.L();
        let diag: Vec<f64> = (0..l.nrows()).map(|k| l[(k, k)].re).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let (col, min) = diag
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if !(min >= RANK_TOL) {
            return Err(Error::RankDeficient { column: col, value: min });
        }
        if max / min < CHOLQR_MAX_COND {
            let mut linv = identity(l.nrows());
            solve_lower_triangular_in_place(l, linv.as_mut(), Par::Seq);
            return Ok(u * linv.adjoint());
        }
    }
    let qr = u.qr();
    let r = qr.thin_R();
    for k in 0..r.ncols() {
        let v = r[(k, k)].norm();
        if !(v >= RANK_TOL) {
            return Err(Error::RankDeficient { column: k, value: v });
        }
    }
    Ok(qr.compute_thin_Q())
}

/// `exp(-i h_eff dt)` together with its numerical bandwidth. Entries
/// farther than `bandwidth` from the diagonal are below `1e-17 max|G|`
/// and are skipped when applying `G`.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub g: CMat,
    pub bandwidth: usize,
}

const BAND_CUTOFF: f64 = 1e-17;
const BAND_BLOCK: usize = 32;

impl Propagator {
    pub fn new(cfg: &LadderConfig, dt: f64) -> Self {
        Self::from_matrix(propagator(cfg, dt))
    }

    pub fn from_matrix(g: CMat) -> Self {
        let n = g.nrows();
        let cut = BAND_CUTOFF * max_abs(g.as_ref());
        let mut bandwidth = 0;
        for j in 0..n {
            for i in 0..n {
                if g[(i, j)].norm() > cut {
                    bandwidth = bandwidth.max(i.abs_diff(j));
                }
            }
        }
        Propagator { g, bandwidth }
    }

    /// `G U`, by row blocks restricted to the band.
    pub fn apply(&self, u: &CMat) -> CMat {
        let n = self.g.nrows();
        if 4 * self.bandwidth + BAND_BLOCK >= n {
            return &self.g * u;
        }
        let mut out = Mat::<c64>::zeros(n, u.ncols());
        let mut r0 = 0;
        while r0 < n {
            let r1 = (r0 + BAND_BLOCK).min(n);
            let c0 = r0.saturating_sub(self.bandwidth);
            let c1 = (r1 + self.bandwidth).min(n);
            matmul(
                out.as_mut().subrows_mut(r0, r1 - r0),
                Accum::Replace,
                self.g.as_ref().submatrix(r0, c0, r1 - r0, c1 - c0),
                u.as_ref().subrows(c0, c1 - c0),
                ONE,
                Par::Seq,
            );
            r0 = r1;
        }
        out
    }
}

pub fn drift_step(state: &mut SlaterState, g: &Propagator, dt: f64) -> Result<()> {
    let gu = g.apply(&state.u);
    state.u = restabilize(&gu)?;
    state.time += dt;
    Ok(())
}

/// `Σ_k |⟨a|U_k⟩|²` for one channel.
pub fn channel_weight(state: &SlaterState, ch: &JumpChannel) -> f64 {
    (0..state.u.ncols())
        .map(|k| ch.overlap(|i| state.u[(i, k)]).norm_sqr())
        .sum()
}

/// `p_i = γ dt Σ_k |⟨a_i|U_k⟩|²` and whether any exceeds the coarse-step
/// threshold.
pub fn jump_probabilities(state: &SlaterState, channels: &[JumpChannel], gamma: f64, dt: f64) -> (Vec<f64>, bool) {
    let p: Vec<f64> = channels
        .iter()
        .map(|ch| gamma * dt * channel_weight(state, ch))
        .collect();
    let coarse = p.iter().any(|x| *x > COARSE_STEP_WARNING);
    (p, coarse)
}

/// Applies `L = e^{iπ n_p} ξ†ξ` and renormalizes.
///
/// The post-jump orbitals span `Φ_p (W ⊕ a)`, where `W` is the part of the
/// occupied subspace orthogonal to `a`. A Householder reflection `H` in
/// column space maps the pivot column onto the direction `y ∝ conj(⟨a|U⟩)`,
/// so the remaining columns of `U H` are an orthonormal basis of `W`; the
/// pivot column is then replaced by `a`. The pivot is the column with the
/// largest overlap. The result is orthonormal without a further QR.
pub fn apply_jump(state: &mut SlaterState, ch: &JumpChannel, channel_index: usize) -> Result<()> {
    let np = state.u.ncols();
    let rows = state.u.nrows();
    let ov: Vec<c64> = (0..np).map(|k| ch.overlap(|i| state.u[(i, k)])).collect();
    let weight: f64 = ov.iter().map(|z| z.norm_sqr()).sum();
    if weight <= PIVOT_TOL {
        return Err(Error::ImpossibleJump { channel: channel_index, weight });
    }
    let norm = weight.sqrt();
    let y: Vec<c64> = ov.iter().map(|z| z.conj() / norm).collect();
    let pivot = (0..np)
        .max_by(|&i, &j| y[i].norm().total_cmp(&y[j].norm()))
        .unwrap_or(0);
    if ov[pivot].norm() <= PIVOT_TOL {
        return Err(Error::ImpossibleJump { channel: channel_index, weight });
    }

    // w = e_pivot - β y with β y_pivot = -|y_pivot|, so H = I - 2ww†/(w†w)
    // sends e_pivot to β y.
    let beta = -y[pivot].conj() / y[pivot].norm();
    let mut w: Vec<c64> = y.iter().map(|z| -beta * z).collect();
    w[pivot] += ONE;
    let ww: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    let u = &mut state.u;
    let wcol = Mat::from_fn(np, 1, |k, _| w[k]);
    let uw = &*u * &wcol;
    let wrow = Mat::from_fn(1, np, |_, k| if k == pivot { ZERO } else { w[k].conj() });
    matmul(u.as_mut(), Accum::Add, &uw, &wrow, c64::new(-2.0 / ww, 0.0), Par::Seq);
    for i in 0..rows {
        u[(i, pivot)] = ZERO;
    }
    for (&k, &c) in ch.sites.iter().zip(&ch.coeffs) {
        u[(k, pivot)] = c;
    }
    for k in 0..np {
        u[(ch.p, k)] = -u[(ch.p, k)];
    }
    Ok(())
}

/// Reusable per-run data.
#[derive(Clone, Debug)]
pub struct Engine {
    pub cfg: LadderConfig,
    pub channels: Vec<JumpChannel>,
    pub g: Propagator,
    pub dt: f64,
}

impl Engine {
    pub fn new(cfg: &LadderConfig, dt: f64) -> Self {
        Engine {
            cfg: *cfg,
            channels: build_jump_channels(cfg),
            g: Propagator::new(cfg, dt),
            dt,
        }
    }

    /// One drift step followed by the sampled jumps. Returns the number of
    /// jumps applied and the largest jump probability.
    pub fn step(&self, state: &mut SlaterState, rng: &mut impl Rng) -> Result<(u64, f64)> {
        drift_step(state, &self.g, self.dt)?;
        let (p, _) = jump_probabilities(state, &self.channels, self.cfg.gamma, self.dt);
        let draws: Vec<f64> = (0..p.len()).map(|_| rng.random::<f64>()).collect();
        let mut jumps = 0;
        for (i, ch) in self.channels.iter().enumerate() {
            if draws[i] < p[i] {
                apply_jump(state, ch, i)?;
                jumps += 1;
            }
        }
        Ok((jumps, p.iter().cloned().fold(0.0, f64::max)))
    }
}

struct Recorder {
    series: ObservableSeries,
    cut: Vec<usize>,
    mi: Option<MiSegments>,
    n: usize,
    corr_samples: usize,
}

impl Recorder {
    fn new(cfg: &LadderConfig, id: u64, np: usize) -> Self {
        Recorder {
            series: ObservableSeries {
                trajectory_id: id,
                times: vec![],
                entropy_half: vec![],
                mutual_info: MiSegments::new(cfg.n).ok().map(|_| vec![]),
                density_a: vec![],
                density_b: vec![],
                corr_aa: vec![0.0; cfg.n / 2],
                corr_bb: vec![0.0; cfg.n / 2],
                max_orthonormality_defect: 0.0,
                n_particles: np,
                jumps: 0,
                max_jump_probability: 0.0,
            },
            cut: half_cut_sites(cfg.n),
            mi: MiSegments::new(cfg.n).ok(),
            n: cfg.n,
            corr_samples: 0,
        }
    }

    fn record(&mut self, state: &SlaterState, time: f64, in_window: bool) {
        let s = &mut self.series;
        let d = correlation_matrix(state.u.as_ref());
        s.times.push(time);
        s.entropy_half.push(entanglement_entropy(d.as_ref(), &self.cut));
        if let (Some(seg), Some(mi)) = (&self.mi, s.mutual_info.as_mut()) {
            mi.push(mutual_information_with(d.as_ref(), seg));
        }
        let (a, b) = leg_densities(d.as_ref(), self.n);
        s.density_a.push(a);
        s.density_b.push(b);
        s.max_orthonormality_defect = s.max_orthonormality_defect.max(orthonormality_defect(state.u.as_ref()));
        if in_window {
            for (acc, v) in s.corr_aa.iter_mut().zip(correlation_profile(d.as_ref(), self.n, Leg::A)) {
                *acc += v;
            }
            for (acc, v) in s.corr_bb.iter_mut().zip(correlation_profile(d.as_ref(), self.n, Leg::B)) {
                *acc += v;
            }
            self.corr_samples += 1;
        }
    }

    fn finish(mut self) -> ObservableSeries {
        let k = self.corr_samples.max(1) as f64;
        for v in self.series.corr_aa.iter_mut().chain(self.series.corr_bb.iter_mut()) {
            *v /= k;
        }
        self.series
    }
}

/// Runs one trajectory and records observables every `sample_interval`.
pub fn run_trajectory(cfg: &LadderConfig, tcfg: &TrajectoryConfig, initial: &InitialState) -> Result<ObservableSeries> {
    let engine = Engine::new(cfg, tcfg.dt);
    run_with_engine(&engine, tcfg, initial)
}

pub fn run_with_engine(engine: &Engine, tcfg: &TrajectoryConfig, initial: &InitialState) -> Result<ObservableSeries> {
    let tcfg = tcfg.validated()?;
    let cfg = &engine.cfg;
    let mut state = initial.build(cfg)?;
    let per = tcfg.steps_per_sample()?;
    let n_samples = tcfg.n_samples()?;
    let times: Vec<f64> = (0..=n_samples).map(|s| (s * per) as f64 * tcfg.dt).collect();
    let w0 = window_start(&times, STEADY_FRACTION);
    let mut rng = rng_stream(tcfg.seed, tcfg.trajectory_id);
    let mut rec = Recorder::new(cfg, tcfg.trajectory_id, state.n_particles());
    rec.record(&state, times[0], w0 == 0);
    let mut step = 0usize;
    for (s, &t) in times.iter().enumerate().skip(1) {
        for _ in 0..per {
            step += 1;
            let (j, pmax) = engine.step(&mut state, &mut rng).map_err(|e| Error::Trajectory {
                trajectory_id: tcfg.trajectory_id,
                step,
                source: Box::new(e),
            })?;
            rec.series.jumps += j;
            rec.series.max_jump_probability = rec.series.max_jump_probability.max(pmax);
        }
        rec.record(&state, t, s >= w0);
    }
    Ok(rec.finish())
}

/// Runs trajectories `0..n_traj` on `workers` threads. Results are in id
/// order and independent of the worker count. A failed trajectory is retried
/// once on the same stream; a second failure aborts the ensemble.
pub fn run_ensemble(
    cfg: &LadderConfig,
    tcfg: &TrajectoryConfig,
    initial: &InitialState,
    n_traj: usize,
    workers: usize,
) -> Result<Vec<ObservableSeries>> {
    if n_traj == 0 {
        return Err(Error::invalid("n_traj must be >= 1"));
    }
    if workers == 0 {
        return Err(Error::invalid("workers must be >= 1"));
    }
    tcfg.validated()?;
    initial.build(cfg)?;
    let engine = Engine::new(cfg, tcfg.dt);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let attempt = |id: u64| -> Result<ObservableSeries> {
        let t = tcfg.with_id(id);
        match catch_unwind(AssertUnwindSafe(|| run_with_engine(&engine, &t, initial))) {
            Ok(r) => r,
            Err(p) => Err(Error::Integration(format!(
                "trajectory {id} panicked: {}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| p.downcast_ref::<&str>().copied())
                    .unwrap_or("unknown panic")
            ))),
        }
    };
    pool.install(|| {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|id| attempt(id).or_else(|_| attempt(id)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs_diff, norm2};
    use crate::perturb::heff_eigensystem;

    fn cfg(n: usize, delta: f64, gamma: f64) -> LadderConfig {
        LadderConfig::new(n, delta).unwrap().with_gamma(gamma).unwrap()
    }

    #[test]
    fn neel_pattern() {
        let s = neel_initial_state(&cfg(2, 0.1, 0.5)).unwrap();
        assert_eq!(s.n_particles(), 2);
        assert_eq!((s.u[(0, 0)], s.u[(3, 1)]), (ONE, ONE));
        assert_eq!(orthonormality_defect(s.u.as_ref()), 0.0);
        let big = neel_initial_state(&cfg(6, 0.1, 0.5)).unwrap();
        assert_eq!(big.n_particles(), 6);
        assert!(neel_initial_state(&cfg(3, 0.1, 0.5)).is_err());
    }

    #[test]
    fn initial_state_parsing_round_trips() {
        for s in ["neel", "domain-wall", "sites:1,4,5"] {
            let parsed: InitialState = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert_eq!("sites:1,4,5".parse::<InitialState>().unwrap(), InitialState::Sites(vec![0, 3, 4]));
        assert!("sites:0".parse::<InitialState>().is_err());
        assert!("wall".parse::<InitialState>().is_err());
    }

    #[test]
    fn trajectory_config_validation() {
        let c = cfg(4, 0.1, 0.5);
        let t = TrajectoryConfig::for_ladder(&c, 1);
        assert_eq!(t.t_total, 8.0);
        assert_eq!(t.steps_per_sample().unwrap(), 20);
        assert!(TrajectoryConfig { dt: 0.0, ..t }.validated().is_err());
        assert!(TrajectoryConfig { sample_interval: 0.01, ..t }.validated().is_err());
        assert!(TrajectoryConfig { sample_interval: 0.07, ..t }.validated().is_err());
    }

    #[test]
    fn propagator_limits() {
        let c = cfg(5, 0.3, 0.5);
        let g = propagator(&c, 1e-6);
        let h = build_heff(&c);
        let dev = max_abs_diff(g.as_ref(), identity(10).as_ref());
        assert!(dev <= crate::linalg::norm_one(h.as_ref()) * 1e-6 * 1.01);
        let u = propagator(&cfg(5, 0.3, 0.0), 0.05);
        assert!(orthonormality_defect(u.as_ref()) < 1e-12);
    }

    #[test]
    fn propagator_acts_diagonally_on_eigenvectors() {
        let c = cfg(6, 0.2, 0.5);
        let dt = 0.05;
        let g = propagator(&c, dt);
        let es = heff_eigensystem(&c).unwrap();
        for m in 0..12 {
            let r = es.right.col(m);
            let gr = &g * r;
            let phase = (-I * es.energies[m] * dt).exp();
            let err: f64 = (0..12).map(|i| (gr[i] - phase * r[i]).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8);
        }
    }

    #[test]
    fn banded_application_matches_dense() {
        let c = cfg(40, 0.3, 0.5);
        let p = Propagator::new(&c, 0.05);
        assert!(p.bandwidth < 40, "bandwidth {}", p.bandwidth);
        let u = neel_initial_state(&c).unwrap().u;
        let u = &p.g * &u;
        let dense = &p.g * &u;
        assert!(crate::linalg::max_abs_diff(p.apply(&u).as_ref(), dense.as_ref()) < 1e-15);
    }

    #[test]
    fn unitary_decoupled_drift_keeps_legs() {
        let c = cfg(4, 0.0, 0.0);
        let g = Propagator::new(&c, 0.05);
        let mut s = neel_initial_state(&c).unwrap();
        for _ in 0..40 {
            drift_step(&mut s, &g, 0.05).unwrap();
        }
        assert!(orthonormality_defect(s.u.as_ref()) < 1e-10);
        // column 0 started on leg A, column 1 on leg B
        let leaked: f64 = (0..4).map(|j| s.u[(flat(j + 1, Leg::B), 0)].norm() + s.u[(flat(j + 1, Leg::A), 1)].norm()).sum();
        assert!(leaked < 1e-14);
    }

    #[test]
    fn single_particle_drift_matches_direct_evolution() {
        let c = cfg(3, 0.4, 0.5);
        let g = Propagator::new(&c, 0.05);
        let mut s = SlaterState::from_sites(6, &[2]).unwrap();
        for _ in 0..20 {
            drift_step(&mut s, &g, 0.05).unwrap();
        }
        let h = build_heff(&c);
        let big = expm(Mat::from_fn(6, 6, |i, j| -I * h[(i, j)]).as_ref());
        let v: Vec<c64> = (0..6).map(|i| big[(i, 2)]).collect();
        let nv = norm2(&v);
        for i in 0..6 {
            assert!((s.u[(i, 0)].norm_sqr() - (v[i] / nv).norm_sqr()).abs() < 1e-6);
        }
    }

    #[test]
    fn probabilities_hand_values() {
        let c = cfg(2, 0.1, 0.5);
        let s = neel_initial_state(&c).unwrap();
        let ch = build_jump_channels(&c);
        let (p, coarse) = jump_probabilities(&s, &ch, 0.5, 0.05);
        assert!((p[0] - 0.0125).abs() < 1e-15);
        assert!(!coarse);
        // fully occupied mode
        let full = SlaterState { u: Mat::from_fn(4, 1, |i, _| ch[1].mode_vector()[i]), time: 0.0 };
        let (p, _) = jump_probabilities(&full, &ch, 0.5, 0.05);
        assert!((p[1] - 0.025).abs() < 1e-15);
        // empty mode
        let empty = SlaterState::from_sites(4, &[1]).unwrap();
        assert_eq!(jump_probabilities(&empty, &ch[..1], 0.5, 0.05).0[0], 0.0);
    }

    #[test]
    fn jump_on_occupied_mode_applies_phase_only() {
        let c = cfg(3, 0.1, 0.5);
        let ch = &build_jump_channels(&c)[2];
        let a = ch.mode_vector();
        let mut s = SlaterState { u: Mat::from_fn(6, 1, |i, _| a[i]), time: 0.0 };
        apply_jump(&mut s, ch, 2).unwrap();
        let mut want = a.clone();
        want[ch.p] = -want[ch.p];
        let phase = s.u[(ch.sites[0], 0)] / want[ch.sites[0]];
        assert!((phase.norm() - 1.0).abs() < 1e-14);
        for i in 0..6 {
            assert!((s.u[(i, 0)] - phase * want[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn impossible_jump_is_reported() {
        let c = cfg(2, 0.1, 0.5);
        let ch = build_jump_channels(&c);
        let mut s = SlaterState::from_sites(4, &[1]).unwrap();
        assert!(matches!(apply_jump(&mut s, &ch[0], 0), Err(Error::ImpossibleJump { channel: 0, .. })));
    }

    #[test]
    fn jump_preserves_particle_number_and_orthonormality() {
        let c = cfg(4, 0.3, 0.5);
        let ch = build_jump_channels(&c);
        let mut s = neel_initial_state(&c).unwrap();
        let g = Propagator::new(&c, 0.3);
        drift_step(&mut s, &g, 0.3).unwrap();
        for (i, chan) in ch.iter().enumerate() {
            apply_jump(&mut s, chan, i).unwrap();
            assert_eq!(s.n_particles(), 4);
            assert!(orthonormality_defect(s.u.as_ref()) < 1e-12);
            // the phase-rotated mode Φa is now occupied
            let mut phi_a = chan.mode_vector();
            phi_a[chan.p] = -phi_a[chan.p];
            let w: f64 = (0..4)
                .map(|k| (0..8).map(|i| phi_a[i].conj() * s.u[(i, k)]).sum::<c64>().norm_sqr())
                .sum();
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = rng_stream(7, 3);
        let mut b = rng_stream(7, 3);
        let mut c = rng_stream(7, 4);
        let xa: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.random()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.random()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn closed_system_never_jumps() {
        let c = cfg(4, 0.5, 0.0);
        let t = TrajectoryConfig { t_total: 4.0, ..TrajectoryConfig::for_ladder(&c, 1) };
        let s = run_trajectory(&c, &t, &InitialState::Neel).unwrap();
        assert_eq!(s.jumps, 0);
        assert_eq!(s.times.len(), 5);
    }

    #[test]
    fn ensemble_is_independent_of_worker_count() {
        let c = cfg(4, 0.5, 0.5);
        let t = TrajectoryConfig { t_total: 4.0, ..TrajectoryConfig::for_ladder(&c, 11) };
        let one = run_ensemble(&c, &t, &InitialState::Neel, 6, 1).unwrap();
        let three = run_ensemble(&c, &t, &InitialState::Neel, 6, 3).unwrap();
        assert_eq!(one, three);
        assert!(one.iter().map(|s| s.jumps).sum::<u64>() > 0);
        assert_ne!(one[0].entropy_half, one[1].entropy_half);
    }
}
