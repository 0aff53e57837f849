//! Single-particle sector of the Lindbladian as a dense `(2N)^2` matrix.
//!
//! Density matrices are vectorized row-major, `|ρ⟩⟩ = Σ ρ_ij |i⟩⊗|j⟩`, so
//! `(A ⊗ B)|ρ⟩⟩ = |A ρ Bᵀ⟩⟩` and
//! `L̃ = -i (h_eff ⊗ I - I ⊗ h_eff*) + γ Σ L ⊗ L*`.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_points, FitModel, FitPoint, FitReport};
use crate::linalg::{c64, CMat, MemoryCap, I, ONE, ZERO};
use crate::model::{build_heff, build_jump_channels, flat, JumpChannel, LadderConfig, Leg};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTolerances {
    /// Eigenvalues with `|λ|` below this count as steady modes.
    pub tol_zero: f64,
    /// Allowed positive real part from round-off.
    pub tol_pos: f64,
}

impl Default for SpectralTolerances {
    fn default() -> Self {
        SpectralTolerances { tol_zero: 1e-8, tol_pos: 1e-9 }
    }
}

/// `L = (I - 2 e_p e_p†) a a†`.
pub fn jump_sp_matrix(ch: &JumpChannel) -> CMat {
    let a = ch.mode_vector();
    let n = a.len();
    Mat::from_fn(n, n, |i, j| {
        let phase = if i == ch.p { -1.0 } else { 1.0 };
        a[i] * a[j].conj() * phase
    })
}

#[derive(Clone, Debug)]
pub struct LiouvillianMatrix {
    pub matrix: CMat,
    pub cfg: LadderConfig,
    /// Single-particle dimension `d`; the matrix is `d² x d²`.
    pub sp_dim: usize,
    /// Leg the sector is restricted to, if any.
    pub leg: Option<Leg>,
}

impl LiouvillianMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Assembles `-i (h ⊗ I - I ⊗ h*) + γ Σ L ⊗ L*` for arbitrary inputs.
pub fn assemble_liouvillian(heff: MatRef<'_, c64>, jumps: &[CMat], gamma: f64) -> CMat {
    let d = heff.nrows();
    let dd = d * d;
    let mut m = Mat::<c64>::zeros(dd, dd);
    // -i h ⊗ I: row (i,j), col (k,j) gets -i h_ik
    // +i I ⊗ h*: row (i,j), col (i,l) gets +i conj(h_jl)
    for i in 0..d {
        for j in 0..d {
            let row = i * d + j;
            for k in 0..d {
                let h = heff[(i, k)];
                if h != ZERO {
                    m[(row, k * d + j)] += -I * h;
                }
                let hc = heff[(j, k)];
                if hc != ZERO {
                    m[(row, i * d + k)] += I * hc.conj();
                }
            }
        }
    }
    let g = c64::new(gamma, 0.0);
    for l in jumps {
        let nz: Vec<(usize, usize, c64)> = (0..d)
            .flat_map(|i| (0..d).map(move |k| (i, k)))
            .filter_map(|(i, k)| (l[(i, k)] != ZERO).then(|| (i, k, l[(i, k)])))
            .collect();
        for &(i, k, x) in &nz {
            for &(j, q, y) in &nz {
                m[(i * d + j, k * d + q)] += g * x * y.conj();
            }
        }
    }
    m
}

pub fn build_liouvillian(cfg: &LadderConfig, cap: MemoryCap) -> Result<LiouvillianMatrix> {
    let d = cfg.n_sites();
    cap.check_square("single-particle Liouvillian", d * d)?;
    let heff = build_heff(cfg);
    let jumps: Vec<CMat> = build_jump_channels(cfg).iter().map(jump_sp_matrix).collect();
    Ok(LiouvillianMatrix {
        matrix: assemble_liouvillian(heff.as_ref(), &jumps, cfg.gamma),
        cfg: *cfg,
        sp_dim: d,
        leg: None,
    })
}

/// Liouvillian restricted to operators supported on one leg. That subspace
/// is invariant only when the legs decouple, so `δ` must be zero.
pub fn build_leg_liouvillian(cfg: &LadderConfig, leg: Leg, cap: MemoryCap) -> Result<LiouvillianMatrix> {
    if cfg.delta != 0.0 {
        return Err(Error::invalid(format!(
            "leg-restricted sector requires delta = 0, got {}",
            cfg.delta
        )));
    }
    let n = cfg.n;
    cap.check_square("leg-restricted Liouvillian", n * n)?;
    let sites: Vec<usize> = (1..=n).map(|j| flat(j, leg)).collect();
    let full = build_heff(cfg);
    let heff = Mat::from_fn(n, n, |i, j| full[(sites[i], sites[j])]);
    let jumps: Vec<CMat> = build_jump_channels(cfg)
        .iter()
        .filter(|ch| ch.leg == leg)
        .map(|ch| {
            let l = jump_sp_matrix(ch);
            Mat::from_fn(n, n, |i, j| l[(sites[i], sites[j])])
        })
        .collect();
    Ok(LiouvillianMatrix {
        matrix: assemble_liouvillian(heff.as_ref(), &jumps, cfg.gamma),
        cfg: *cfg,
        sp_dim: n,
        leg: Some(leg),
    })
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<c64>,
    pub gap: f64,
    pub steady_state: CMat,
    pub density_a: Vec<f64>,
    pub density_b: Vec<f64>,
    /// Relative residual `‖L̃ρ‖ / (‖L̃‖_F ‖ρ‖)` of the steady state.
    pub steady_residual: f64,
}

impl SpectrumResult {
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |Re λ|`, the extent of the spectrum along the real axis.
    pub fn real_range(&self) -> f64 {
        real_range(&self.eigenvalues)
    }
}

pub fn real_range(eigenvalues: &[c64]) -> f64 {
    eigenvalues.iter().map(|z| z.re.abs()).fold(0.0, f64::max)
}

/// All eigenvalues of `m`, sorted by real then imaginary part.
pub fn sorted_eigenvalues(m: MatRef<'_, c64>) -> Result<Vec<c64>> {
    let mut ev = m
        .eigenvalues()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    sort_spectrum(&mut ev);
    Ok(ev)
}

pub fn sort_spectrum(ev: &mut [c64]) {
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Spectral gap `-max{Re λ : |λ| > tol_zero}`; `None` if every eigenvalue is
/// a steady mode.
pub fn spectral_gap(eigenvalues: &[c64], tol_zero: f64) -> Option<f64> {
    eigenvalues
        .iter()
        .filter(|z| z.norm() > tol_zero)
        .map(|z| -z.re)
        .min_by(f64::total_cmp)
}

/// Full spectrum, gap, and steady state of `l`.
pub fn diagonalize(l: &LiouvillianMatrix, tol: SpectralTolerances) -> Result<SpectrumResult> {
    let eigenvalues = sorted_eigenvalues(l.matrix.as_ref())?;
    let zero_count = eigenvalues.iter().filter(|z| z.norm() < tol.tol_zero).count();
    match zero_count {
        0 => return Err(Error::NoSteadyState { tol_zero: tol.tol_zero }),
        1 => {}
        count => return Err(Error::DegenerateSteadySector { count, tol_zero: tol.tol_zero }),
    }
    let gap = spectral_gap(&eigenvalues, tol.tol_zero).unwrap_or(0.0).max(0.0);
    let (rho, steady_residual) = steady_state(l)?;
    let d = l.sp_dim;
    let n = l.cfg.n;
    let (density_a, density_b) = match l.leg {
        None => (
            (1..=n).map(|j| rho[(flat(j, Leg::A), flat(j, Leg::A))].re).collect(),
            (1..=n).map(|j| rho[(flat(j, Leg::B), flat(j, Leg::B))].re).collect(),
        ),
        Some(leg) => {
            let on: Vec<f64> = (0..d).map(|k| rho[(k, k)].re).collect();
            let off = vec![0.0; n];
            match leg {
                Leg::A => (on, off),
                Leg::B => (off, on),
            }
        }
    };
    Ok(SpectrumResult {
        eigenvalues,
        gap,
        steady_state: rho,
        density_a,
        density_b,
        steady_residual,
    })
}

/// Null vector of `L̃` with unit trace. One diagonal-index row is swapped for
/// the trace functional, which is a left null vector, so the modified system
/// is regular exactly when the kernel is one-dimensional.
pub fn steady_state(l: &LiouvillianMatrix) -> Result<(CMat, f64)> {
    let d = l.sp_dim;
    let dd = d * d;
    let mut a = l.matrix.clone();
    for c in 0..dd {
        a[(0, c)] = ZERO;
    }
    for i in 0..d {
        a[(0, i * d + i)] = ONE;
    }
    let mut rhs = Mat::<c64>::zeros(dd, 1);
    rhs[(0, 0)] = ONE;
    let x = a.partial_piv_lu().solve(&rhs);
    drop(a);

    let mut rho = Mat::from_fn(d, d, |i, j| x[(i * d + j, 0)]);
    rho = Mat::from_fn(d, d, |i, j| (rho[(i, j)] + rho[(j, i)].conj()) * 0.5);
    let tr: f64 = (0..d).map(|i| rho[(i, i)].re).sum();
    if !(tr.is_finite() && tr.abs() > 0.0) {
        return Err(Error::NoSteadyState { tol_zero: 0.0 });
    }
    rho = Mat::from_fn(d, d, |i, j| rho[(i, j)] / tr);

    let v = Mat::from_fn(dd, 1, |k, _| rho[(k / d, k % d)]);
    let r = &l.matrix * &v;
    let norm_l = l.matrix.norm_l2();
    let rel = r.norm_l2() / (norm_l.max(f64::MIN_POSITIVE) * v.norm_l2());
    if rel > 1e-7 {
        return Err(Error::Residual {
            what: "steady state".into(),
            residual: rel,
            tolerance: 1e-7,
        });
    }
    Ok((rho, rel))
}

/// `max_c |Σ_i L̃[(i,i), c]|`: deviation of `⟨⟨I|L̃` from zero.
pub fn trace_preservation_residual(l: &LiouvillianMatrix) -> f64 {
    let d = l.sp_dim;
    let dd = d * d;
    (0..dd)
        .map(|c| (0..d).map(|i| l.matrix[(i * d + i, c)]).sum::<c64>().norm())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapPoint {
    pub n: usize,
    pub delta: f64,
    /// `Err` holds the rendered error for points that failed.
    pub gap: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapScan {
    pub points: Vec<GapPoint>,
    /// Log-log fit of Δ against N, per δ in input order.
    pub slopes: Vec<(f64, std::result::Result<FitReport, String>)>,
}

/// Gap for every `(N, δ)` on the grid. Failed points are recorded and the
/// scan continues.
pub fn gap_scan(
    base: &LadderConfig,
    ns: &[usize],
    deltas: &[f64],
    tol: SpectralTolerances,
    cap: MemoryCap,
) -> GapScan {
    let mut points = Vec::new();
    for &delta in deltas {
        for &n in ns {
            let gap = (|| {
                let cfg = base.with_n(n)?.with_delta(delta)?;
                let l = build_liouvillian(&cfg, cap)?;
                let ev = sorted_eigenvalues(l.matrix.as_ref())?;
                drop(l);
                let zeros = ev.iter().filter(|z| z.norm() < tol.tol_zero).count();
                match zeros {
                    0 => Err(Error::NoSteadyState { tol_zero: tol.tol_zero }),
                    1 => Ok(spectral_gap(&ev, tol.tol_zero).unwrap_or(0.0).max(0.0)),
                    count => Err(Error::DegenerateSteadySector { count, tol_zero: tol.tol_zero }),
                }
            })()
            .map_err(|e| e.to_string());
            points.push(GapPoint { n, delta, gap });
        }
    }
    let slopes = deltas
        .iter()
        .map(|&delta| {
            let fp: Vec<FitPoint> = points
                .iter()
                .filter(|p| p.delta == delta)
                .filter_map(|p| p.gap.as_ref().ok().map(|g| FitPoint::new(p.n as f64, *g)))
                .collect();
            (delta, fit_points(&fp, FitModel::PowerLaw).map_err(|e| e.to_string()))
        })
        .collect();
    GapScan { points, slopes }
}

/// `max |Re λ|` of the full single-particle Liouvillian for each N.
pub fn spectral_range(base: &LadderConfig, ns: &[usize], cap: MemoryCap) -> Vec<(usize, Result<f64>)> {
    ns.iter()
        .map(|&n| {
            let r = (|| {
                let cfg = base.with_n(n)?;
                let l = build_liouvillian(&cfg, cap)?;
                Ok(real_range(&sorted_eigenvalues(l.matrix.as_ref())?))
            })();
            (n, r)
        })
        .collect()
}
