//! Exact many-body Lindbladian for small ladders.
//!
//! Occupation bitstrings use bit `k` for flattened site `k`. A basis state
//! is `c†_{k_1} c†_{k_2} ... c†_{k_n}|0⟩` with `k_1 < k_2 < ... < k_n`, so
//! `c†_k` acquires `(-1)^{#occupied sites below k}`.
//!
//! Operators are assembled directly from the second-quantized definitions
//! (`ξ_{j,A} = (c_{j,A} + i c_{j+1,A})/√2`, `ξ_{j,B} = (c_{j,B} - i c_{j+1,B})/√2`,
//! `L = e^{iπ n_p} ξ†ξ`), independently of the single-particle builders.

use std::f64::consts::FRAC_1_SQRT_2;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, conj, expm, identity, kron, scale, CMat, MemoryCap, I, ONE, ZERO};
use crate::model::{flat, LadderConfig, Leg};

/// Largest ladder (in sites) the oracle accepts.
pub const MAX_SITES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sector {
    All,
    Fixed(usize),
}

#[derive(Clone, Debug)]
pub struct FockBasis {
    pub n_sites: usize,
    pub sector: Sector,
    /// Ascending bitstrings.
    pub states: Vec<u32>,
}

impl FockBasis {
    pub fn new(n_sites: usize, sector: Sector) -> Result<Self> {
        if n_sites > MAX_SITES {
            return Err(Error::Capacity {
                what: format!("Fock basis on {n_sites} sites (oracle limit {MAX_SITES})"),
                required_bytes: 16u64 << n_sites,
                cap_bytes: 16u64 << MAX_SITES,
            });
        }
        if let Sector::Fixed(np) = sector {
            if np > n_sites {
                return Err(Error::invalid(format!("{np} particles on {n_sites} sites")));
            }
        }
        let states = (0u32..(1u32 << n_sites))
            .filter(|s| match sector {
                Sector::All => true,
                Sector::Fixed(np) => s.count_ones() as usize == np,
            })
            .collect();
        Ok(FockBasis { n_sites, sector, states })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, state: u32) -> Option<usize> {
        self.states.binary_search(&state).ok()
    }

    /// Matrix of `Σ_ij A_ij c†_i c_j` restricted to the basis.
    pub fn one_body(&self, a: MatRef<'_, c64>) -> CMat {
        let d = self.dim();
        let mut m = Mat::<c64>::zeros(d, d);
        for (col, &s) in self.states.iter().enumerate() {
            for j in 0..self.n_sites {
                let Some((sj, sign_j)) = annihilate(s, j) else { continue };
                for i in 0..self.n_sites {
                    let amp = a[(i, j)];
                    if amp == ZERO {
                        continue;
                    }
                    let Some((si, sign_i)) = create(sj, i) else { continue };
                    let row = self.index_of(si).expect("number-conserving operator stays in sector");
                    m[(row, col)] += amp * (sign_i * sign_j);
                }
            }
        }
        m
    }

    /// Diagonal matrix of `n_k`.
    pub fn number(&self, k: usize) -> CMat {
        let d = self.dim();
        Mat::from_fn(d, d, |i, j| {
            if i == j && self.states[i] >> k & 1 == 1 {
                ONE
            } else {
                ZERO
            }
        })
    }

    pub fn total_number(&self) -> CMat {
        let d = self.dim();
        Mat::from_fn(d, d, |i, j| {
            if i == j {
                c64::new(self.states[i].count_ones() as f64, 0.0)
            } else {
                ZERO
            }
        })
    }
}

/// `c_k|s⟩` as `(state, sign)`.
fn annihilate(s: u32, k: usize) -> Option<(u32, f64)> {
    if s >> k & 1 == 0 {
        return None;
    }
    let below = (s & ((1u32 << k) - 1)).count_ones();
    Some((s & !(1u32 << k), if below % 2 == 0 { 1.0 } else { -1.0 }))
}

/// `c†_k|s⟩` as `(state, sign)`.
fn create(s: u32, k: usize) -> Option<(u32, f64)> {
    if s >> k & 1 == 1 {
        return None;
    }
    let below = (s & ((1u32 << k) - 1)).count_ones();
    Some((s | (1u32 << k), if below % 2 == 0 { 1.0 } else { -1.0 }))
}

#[derive(Clone, Debug)]
pub struct FockOperators {
    pub basis: FockBasis,
    pub cfg: LadderConfig,
    pub h0: CMat,
    pub heff: CMat,
    /// `L_{j,ν}` in the global channel order `(1,A), (1,B), (2,A), ...`.
    pub jumps: Vec<CMat>,
    /// `ξ†_{j,ν} ξ_{j,ν}` in the same order.
    pub projectors: Vec<CMat>,
}

/// Annihilation coefficients `b` with `ξ = Σ_k b_k c_k`.
fn xi_coefficients(n_sites: usize, rung: usize, leg: Leg) -> Vec<c64> {
    let mut b = vec![ZERO; n_sites];
    let s = FRAC_1_SQRT_2;
    b[flat(rung, leg)] = c64::new(s, 0.0);
    b[flat(rung + 1, leg)] = match leg {
        Leg::A => c64::new(0.0, s),
        Leg::B => c64::new(0.0, -s),
    };
    b
}

pub fn build_fock_operators(cfg: &LadderConfig, sector: Sector, cap: MemoryCap) -> Result<FockOperators> {
    let ns = cfg.n_sites();
    let basis = FockBasis::new(ns, sector)?;
    cap.check_square("many-body Liouvillian", basis.dim() * basis.dim())?;

    let mut hop = Mat::<c64>::zeros(ns, ns);
    for leg in Leg::BOTH {
        for j in 1..cfg.n {
            let (x, y) = (flat(j, leg), flat(j + 1, leg));
            hop[(x, y)] += c64::new(cfg.t, 0.0);
            hop[(y, x)] += c64::new(cfg.t, 0.0);
        }
    }
    for j in 1..=cfg.n {
        let (x, y) = (flat(j, Leg::A), flat(j, Leg::B));
        hop[(x, y)] += c64::new(cfg.delta, 0.0);
        hop[(y, x)] += c64::new(cfg.delta, 0.0);
    }
    let h0 = basis.one_body(hop.as_ref());

    let mut jumps = Vec::new();
    let mut projectors = Vec::new();
    for j in 1..cfg.n {
        for leg in Leg::BOTH {
            let b = xi_coefficients(ns, j, leg);
            // ξ†ξ = Σ_ij conj(b_i) b_j c†_i c_j
            let a = Mat::from_fn(ns, ns, |x, y| b[x].conj() * b[y]);
            let proj = basis.one_body(a.as_ref());
            let p = flat(j + 1, leg);
            let d = basis.dim();
            let phase = Mat::from_fn(d, d, |x, y| {
                if x != y {
                    ZERO
                } else if basis.states[x] >> p & 1 == 1 {
                    -ONE
                } else {
                    ONE
                }
            });
            jumps.push(&phase * &proj);
            projectors.push(proj);
        }
    }

    let mut heff = h0.clone();
    for l in &jumps {
        let ll = l.adjoint() * l;
        heff -= Mat::from_fn(ll.nrows(), ll.ncols(), |x, y| I * (cfg.gamma / 2.0) * ll[(x, y)]);
    }
    Ok(FockOperators { basis, cfg: *cfg, h0, heff, jumps, projectors })
}

impl FockOperators {
    /// `-i(H_eff ⊗ I - I ⊗ H_eff*) + γ Σ L ⊗ L*`, row-major vectorization.
    pub fn liouvillian(&self) -> CMat {
        let d = self.basis.dim();
        let id = identity(d);
        let hc = conj(self.heff.as_ref());
        let mut m = scale(kron(self.heff.as_ref(), id.as_ref()).as_ref(), -I) + scale(kron(id.as_ref(), hc.as_ref()).as_ref(), I);
        for l in &self.jumps {
            let lc = conj(l.as_ref());
            m += scale(kron(l.as_ref(), lc.as_ref()).as_ref(), c64::new(self.cfg.gamma, 0.0));
        }
        m
    }

    /// `Σ_ij A_ij c†_i c_j` in this basis.
    pub fn one_body(&self, a: MatRef<'_, c64>) -> CMat {
        self.basis.one_body(a)
    }

    /// Matrix of `c†_i c_j`.
    pub fn hopping(&self, i: usize, j: usize) -> CMat {
        let ns = self.basis.n_sites;
        let a = Mat::from_fn(ns, ns, |x, y| if (x, y) == (i, j) { ONE } else { ZERO });
        self.basis.one_body(a.as_ref())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolveMethod {
    Expm,
    Rk45,
}

#[derive(Clone, Debug)]
pub struct ExactEvolution {
    pub times: Vec<f64>,
    /// `densities[t][k] = ⟨n_k⟩(t)`.
    pub densities: Vec<Vec<f64>>,
    /// `two_point[t][(i, j)] = ⟨c†_i c_j⟩(t)`.
    pub two_point: Vec<CMat>,
    pub traces: Vec<c64>,
    pub purities: Vec<f64>,
    /// Largest `|Tr ρ - 1|`.
    pub trace_error: f64,
}

/// Local error tolerance of the adaptive integrator and the accepted trace
/// drift of either method.
pub const EVOLVE_TOL: f64 = 1e-10;

/// Evolves `rho0` under the exact Lindbladian and records one-body
/// expectation values on `t_grid` (ascending, starting at or after 0).
pub fn exact_evolve(ops: &FockOperators, rho0: MatRef<'_, c64>, t_grid: &[f64], method: EvolveMethod) -> Result<ExactEvolution> {
    let d = ops.basis.dim();
    if rho0.nrows() != d || rho0.ncols() != d {
        return Err(Error::invalid(format!("rho0 must be {d}x{d}")));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::invalid("time grid must be ascending and non-negative"));
    }
    let l = ops.liouvillian();
    let mut v: Vec<c64> = (0..d * d).map(|k| rho0[(k / d, k % d)]).collect();
    let mut t_now = 0.0;
    let mut states = Vec::with_capacity(t_grid.len());
    let mut cached: Option<(f64, CMat)> = None;
    for &t in t_grid {
        let dt = t - t_now;
        if dt > 0.0 {
            v = match method {
                EvolveMethod::Expm => {
                    let reuse = cached.as_ref().is_some_and(|(h, _)| (h - dt).abs() <= 1e-14 * dt.max(1.0));
                    if !reuse {
                        cached = Some((dt, expm(scale(l.as_ref(), c64::new(dt, 0.0)).as_ref())));
                    }
                    let e = &cached.as_ref().unwrap().1;
                    let x = Mat::from_fn(d * d, 1, |k, _| v[k]);
                    let y = e * &x;
                    (0..d * d).map(|k| y[(k, 0)]).collect()
                }
                EvolveMethod::Rk45 => rk45(&l, &v, dt, EVOLVE_TOL)?,
            };
            t_now = t;
        }
        states.push(Mat::from_fn(d, d, |i, j| v[i * d + j]));
    }

    let ns = ops.basis.n_sites;
    let hops: Vec<Vec<CMat>> = (0..ns).map(|i| (0..ns).map(|j| ops.hopping(i, j)).collect()).collect();
    let mut out = ExactEvolution {
        times: t_grid.to_vec(),
        densities: vec![],
        two_point: vec![],
        traces: vec![],
        purities: vec![],
        trace_error: 0.0,
    };
    for rho in &states {
        let tr: c64 = (0..d).map(|i| rho[(i, i)]).sum();
        let two = Mat::from_fn(ns, ns, |i, j| expectation(rho.as_ref(), hops[i][j].as_ref()));
        out.densities.push((0..ns).map(|k| two[(k, k)].re).collect());
        out.two_point.push(two);
        let purity = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (rho[(i, j)] * rho[(j, i)]).re)
            .sum();
        out.purities.push(purity);
        out.trace_error = out.trace_error.max((tr - ONE).norm());
        out.traces.push(tr);
    }
    if out.trace_error > 1e-8 {
        return Err(Error::Integration(format!(
            "trace drifted by {:e} (tolerance 1e-8)",
            out.trace_error
        )));
    }
    Ok(out)
}

/// `Tr(ρ O)`.
pub fn expectation(rho: MatRef<'_, c64>, op: MatRef<'_, c64>) -> c64 {
    let d = rho.nrows();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            let o = op[(j, i)];
            if o != ZERO {
                acc += rho[(i, j)] * o;
            }
        }
    }
    acc
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `dv/dt = L v` over `span` with the adaptive Dormand-Prince
/// pair, mixed absolute/relative local tolerance `tol`.
fn rk45(l: &CMat, v0: &[c64], span: f64, tol: f64) -> Result<Vec<c64>> {
    let n = v0.len();
    let apply = |x: &[c64]| -> Vec<c64> {
        let xm = Mat::from_fn(n, 1, |k, _| x[k]);
        let y = l * &xm;
        (0..n).map(|k| y[(k, 0)]).collect()
    };
    let mut v = v0.to_vec();
    let mut t = 0.0;
    let mut h = (span / 100.0).min(0.01).max(1e-6);
    let mut steps = 0usize;
    let _ = DP_C;
    while t < span {
        if steps > 10_000_000 {
            return Err(Error::Integration("adaptive integrator exceeded step budget".into()));
        }
        steps += 1;
        h = h.min(span - t);
        let mut k: Vec<Vec<c64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let xs: Vec<c64> = (0..n)
                .map(|i| {
                    let mut x = v[i];
                    for (s, ks) in k.iter().enumerate() {
                        let a = DP_A[stage][s];
                        if a != 0.0 {
                            x += ks[i] * (h * a);
                        }
                    }
                    x
                })
                .collect();
            k.push(apply(&xs));
        }
        let mut v5 = v.clone();
        let mut err = 0.0f64;
        for i in 0..n {
            let mut d5 = ZERO;
            let mut d4 = ZERO;
            for s in 0..7 {
                d5 += k[s][i] * DP_B5[s];
                d4 += k[s][i] * DP_B4[s];
            }
            v5[i] += d5 * h;
            let scale = tol + tol * v[i].norm().max(v5[i].norm());
            err = err.max(((d5 - d4) * h).norm() / scale);
        }
        if err <= 1.0 {
            t += h;
            v = v5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * span.max(1.0) {
            return Err(Error::Integration(format!(
                "step size collapsed at t = {t:e}; achieved local error {err:e} against tolerance {tol:e}"
            )));
        }
    }
    Ok(v)
}

/// Expands a Slater determinant into the fixed-number Fock basis:
/// the amplitude of `k_1 < ... < k_n` is `det U[{k}, :]`.
pub fn embed_slater(u: MatRef<'_, c64>) -> Result<(FockBasis, Vec<c64>)> {
    let basis = FockBasis::new(u.nrows(), Sector::Fixed(u.ncols()))?;
    let np = u.ncols();
    let amps = basis
        .states
        .iter()
        .map(|&s| {
            if np == 0 {
                return ONE;
            }
            let rows: Vec<usize> = (0..basis.n_sites).filter(|k| s >> k & 1 == 1).collect();
            let mut sub: Vec<Vec<c64>> = rows.iter().map(|&r| (0..np).map(|j| u[(r, j)]).collect()).collect();
            determinant(&mut sub)
        })
        .collect();
    Ok((basis, amps))
}

/// Gaussian elimination with partial pivoting; exact zero for a zero pivot.
fn determinant(m: &mut [Vec<c64>]) -> c64 {
    let n = m.len();
    let mut det = ONE;
    for k in 0..n {
        let piv = (k..n).max_by(|&a, &b| m[a][k].norm().total_cmp(&m[b][k].norm())).unwrap();
        if m[piv][k] == ZERO {
            return ZERO;
        }
        if piv != k {
            m.swap(piv, k);
            det = -det;
        }
        det *= m[k][k];
        for r in k + 1..n {
            let f = m[r][k] / m[k][k];
            if f != ZERO {
                for c in k..n {
                    let v = m[k][c];
                    m[r][c] -= f * v;
                }
            }
        }
    }
    det
}

/// `|ψ⟩⟨ψ|` for a Slater determinant.
pub fn slater_density_matrix(u: MatRef<'_, c64>) -> Result<(FockBasis, CMat)> {
    let (basis, psi) = embed_slater(u)?;
    let d = psi.len();
    Ok((basis, Mat::from_fn(d, d, |i, j| psi[i] * psi[j].conj())))
}

/// `|⟨a|b⟩| / (‖a‖ ‖b‖)`: equals 1 when the states agree up to phase.
pub fn state_fidelity(a: &[c64], b: &[c64]) -> f64 {
    let ov: c64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    ov.norm() / (na * nb)
}

/// `min_φ ‖â - e^{iφ} b̂‖` for the normalized vectors: zero when the states
/// agree up to a global phase, linear in the deviation.
pub fn phase_aligned_distance(a: &[c64], b: &[c64]) -> f64 {
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let ov: c64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let phase = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { c64::new(1.0, 0.0) };
    a.iter()
        .zip(b)
        .map(|(x, y)| (x / na - phase * y / nb).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn apply_op(op: &CMat, v: &[c64]) -> Vec<c64> {
    let n = v.len();
    let x = Mat::from_fn(n, 1, |k, _| v[k]);
    let y = op * &x;
    (0..op.nrows()).map(|k| y[(k, 0)]).collect()
}

/// One named comparison between the Gaussian engine and the exact solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub checks: Vec<CrossCheck>,
}

impl CrossValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Check with the largest residual-to-tolerance ratio.
    pub fn worst(&self) -> Option<&CrossCheck> {
        self.checks
            .iter()
            .max_by(|a, b| (a.residual / a.tolerance).total_cmp(&(b.residual / b.tolerance)))
    }

    fn push(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) {
        self.checks.push(CrossCheck {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        });
    }
}

/// Drift steps applied to the initial pattern to obtain a generic probe state.
const PROBE_STEPS: usize = 4;
const PROBE_DT: f64 = 0.3;

/// Compares the single-particle and Gaussian-state machinery against the
/// exact many-body operators on a small ladder.
pub fn cross_validate(cfg: &LadderConfig, initial: &crate::trajectory::InitialState, cap: MemoryCap) -> Result<CrossValidationReport> {
    use crate::liouville::{build_liouvillian, sorted_eigenvalues};
    use crate::linalg::{conjugation_defect, match_spectra, max_abs_diff};
    use crate::model::{build_heff, build_jump_channels};
    use crate::observables::correlation_matrix;
    use crate::trajectory::{apply_jump, drift_step, Propagator};

    let cfg = cfg.validated()?;
    let ns = cfg.n_sites();
    if ns > MAX_SITES {
        return Err(Error::Capacity {
            what: format!("cross-validation on {ns} sites"),
            required_bytes: 16u64 << ns,
            cap_bytes: 16u64 << MAX_SITES,
        });
    }
    let mut rep = CrossValidationReport { checks: vec![] };

    let one = build_fock_operators(&cfg, Sector::Fixed(1), cap)?;
    let sp = build_liouvillian(&cfg, cap)?;
    let mb = sorted_eigenvalues(one.liouvillian().as_ref())?;
    let spv = sorted_eigenvalues(sp.matrix.as_ref())?;
    rep.push("one-particle spectrum", match_spectra(&mb, &spv), 1e-9);
    rep.push("one-particle H_eff", max_abs_diff(one.heff.as_ref(), build_heff(&cfg).as_ref()), 1e-13);

    let mut state = initial.build(&cfg)?;
    let g = Propagator::new(&cfg, PROBE_DT);
    for _ in 0..PROBE_STEPS {
        drift_step(&mut state, &g, PROBE_DT)?;
    }
    let np = state.n_particles();
    let ops = build_fock_operators(&cfg, Sector::Fixed(np), cap)?;
    let (_, psi) = embed_slater(state.u.as_ref())?;

    let l = ops.liouvillian();
    let d = ops.basis.dim();
    let ev = sorted_eigenvalues(l.as_ref())?;
    let max_re = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    rep.push("many-body max Re λ", max_re.max(0.0), 1e-9);
    rep.push("many-body conjugation symmetry", conjugation_defect(&ev), 1e-9);
    let trace_row = (0..d * d)
        .map(|c| (0..d).map(|i| l[(i * d + i, c)]).sum::<c64>().norm())
        .fold(0.0, f64::max);
    rep.push("many-body trace preservation", trace_row, 1e-10);

    let mut drifted = state.clone();
    drift_step(&mut drifted, &Propagator::new(&cfg, PROBE_DT), PROBE_DT)?;
    let exact = apply_op(&expm(scale(ops.heff.as_ref(), c64::new(0.0, -PROBE_DT)).as_ref()), &psi);
    let (_, psi_drift) = embed_slater(drifted.u.as_ref())?;
    rep.push("drift step", phase_aligned_distance(&exact, &psi_drift), 1e-10);

    let mut jump_err = 0.0f64;
    let mut weight_err = 0.0f64;
    for (i, ch) in build_jump_channels(&cfg).iter().enumerate() {
        let lpsi = apply_op(&ops.jumps[i], &psi);
        let w: f64 = lpsi.iter().map(|z| z.norm_sqr()).sum();
        weight_err = weight_err.max((w - crate::trajectory::channel_weight(&state, ch)).abs());
        if w <= crate::trajectory::PIVOT_TOL {
            continue;
        }
        let mut jumped = state.clone();
        apply_jump(&mut jumped, ch, i)?;
        let (_, pj) = embed_slater(jumped.u.as_ref())?;
        jump_err = jump_err.max(phase_aligned_distance(&lpsi, &pj));
    }
    rep.push("jump action", jump_err, 1e-10);
    rep.push("jump weight", weight_err, 1e-12);

    let dmat = correlation_matrix(state.u.as_ref());
    let prob: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    let occ = |k: usize, s: u32| (s >> k & 1) as f64;
    let mut two_err = 0.0f64;
    let mut wick_err = 0.0f64;
    for i in 0..ns {
        for j in 0..ns {
            let cij = apply_op(&ops.hopping(i, j), &psi);
            let exp: c64 = psi.iter().zip(&cij).map(|(a, b)| a.conj() * b).sum();
            two_err = two_err.max((exp - dmat[(i, j)]).norm());
            if i != j {
                let (mut ni, mut nj, mut nn) = (0.0, 0.0, 0.0);
                for (p, &st) in prob.iter().zip(&ops.basis.states) {
                    ni += p * occ(i, st);
                    nj += p * occ(j, st);
                    nn += p * occ(i, st) * occ(j, st);
                }
                wick_err = wick_err.max((dmat[(i, j)].norm_sqr() - (ni * nj - nn)).abs());
            }
        }
    }
    rep.push("two-point function", two_err, 1e-12);
    rep.push("Wick factorization", wick_err, 1e-12);
    Ok(rep)
}
