//! Gaussian-state observables and cross-trajectory statistics.

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_points, FitModel, FitPoint, FitReport};
use crate::linalg::{c64, CMat};
use crate::model::{flat, LadderConfig, Leg};

const ETA_CLIP: f64 = 1e-12;

/// `D_ij = ⟨c†_i c_j⟩ = [U U†]_ji`.
pub fn correlation_matrix(u: MatRef<'_, c64>) -> CMat {
    let p = u * u.adjoint();
    Mat::from_fn(p.nrows(), p.ncols(), |i, j| p[(j, i)])
}

/// `⟨n_k⟩` for every flattened site.
pub fn site_densities(d: MatRef<'_, c64>) -> Vec<f64> {
    (0..d.nrows()).map(|k| d[(k, k)].re).collect()
}

/// Rung profiles `(⟨n_{j,A}⟩, ⟨n_{j,B}⟩)` for `j = 1..=N`.
pub fn leg_densities(d: MatRef<'_, c64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let a = (1..=n).map(|j| d[(flat(j, Leg::A), flat(j, Leg::A))].re).collect();
    let b = (1..=n).map(|j| d[(flat(j, Leg::B), flat(j, Leg::B))].re).collect();
    (a, b)
}

/// Binary entropy sum over the eigenvalues of the subsystem block of `d`.
/// Eigenvalues within `1e-12` of 0 or 1 contribute their limit, zero.
pub fn entanglement_entropy(d: MatRef<'_, c64>, sites: &[usize]) -> f64 {
    if sites.is_empty() {
        return 0.0;
    }
    let m = sites.len();
    let block = Mat::from_fn(m, m, |i, j| d[(sites[i], sites[j])]);
    let eta = block
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("Hermitian eigensolver does not fail on finite input");
    eta.iter()
        .filter(|&&x| x > ETA_CLIP && x < 1.0 - ETA_CLIP)
        .map(|&x| -(x * x.ln() + (1.0 - x) * (1.0 - x).ln()))
        .sum()
}

/// Flattened indices of rungs `1..=N/2` on both legs.
pub fn half_cut_sites(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Both legs of the given 1-based rungs.
pub fn rung_sites(rungs: impl IntoIterator<Item = usize>) -> Vec<usize> {
    rungs
        .into_iter()
        .flat_map(|j| [flat(j, Leg::A), flat(j, Leg::B)])
        .collect()
}

/// Segment placement for the mutual information.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiSegments {
    /// 1-based rungs of the left segment.
    pub left: Vec<usize>,
    /// Mirror image `j -> N + 1 - j` of `left`.
    pub right: Vec<usize>,
}

impl MiSegments {
    /// Segments of width `N/8` rungs, mirror-symmetric about the ladder
    /// centre with centres at `N/4 + 1/2` and `3N/4 + 1/2` when the width is
    /// even, so the centre-to-centre distance is `N/2`.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n % 8 != 0 {
            return Err(Error::invalid(format!(
                "mutual information needs N divisible by 8, got {n}"
            )));
        }
        let w = n / 8;
        let start = n / 4 + 1 - w.div_ceil(2);
        let left: Vec<usize> = (start..start + w).collect();
        let right: Vec<usize> = left.iter().rev().map(|j| n + 1 - j).collect();
        Ok(MiSegments { left, right })
    }

    pub fn center_distance(&self) -> f64 {
        let c = |s: &[usize]| s.iter().sum::<usize>() as f64 / s.len() as f64;
        c(&self.right) - c(&self.left)
    }
}

/// `S(V) + S(VI) - S(V ∪ VI)`.
pub fn mutual_information(d: MatRef<'_, c64>, cfg: &LadderConfig) -> Result<f64> {
    let seg = MiSegments::new(cfg.n)?;
    Ok(mutual_information_with(d, &seg))
}

pub fn mutual_information_with(d: MatRef<'_, c64>, seg: &MiSegments) -> f64 {
    let v = rung_sites(seg.left.iter().copied());
    let vi = rung_sites(seg.right.iter().copied());
    let both: Vec<usize> = v.iter().chain(&vi).copied().collect();
    entanglement_entropy(d, &v) + entanglement_entropy(d, &vi) - entanglement_entropy(d, &both)
}

/// `C_νν(x) = |⟨c†_{N/2,ν} c_{N/2+x,ν}⟩|²` for `1 <= x <= N/2`.
pub fn connected_correlation(d: MatRef<'_, c64>, n: usize, leg: Leg, x: usize) -> f64 {
    assert!(x >= 1 && x <= n / 2, "distance {x} outside 1..={}", n / 2);
    let i = flat(n / 2, leg);
    let j = flat(n / 2 + x, leg);
    d[(i, j)].norm_sqr()
}

/// `C_νν(x)` for `x = 1..=N/2`.
pub fn correlation_profile(d: MatRef<'_, c64>, n: usize, leg: Leg) -> Vec<f64> {
    (1..=n / 2).map(|x| connected_correlation(d, n, leg, x)).collect()
}

/// Fits a correlation profile `C(x)`, `x = 1..=len`, on `n` rungs. The
/// power law uses the chord coordinate `sin(πx/N)`, the exponential uses `x`.
pub fn correlation_decay_fit(profile: &[f64], n: usize, model: FitModel) -> Result<FitReport> {
    let abscissa = |x: f64| match model {
        FitModel::PowerLaw => Ok((std::f64::consts::PI * x / n as f64).sin()),
        FitModel::Exponential => Ok(x),
        other => Err(Error::invalid(format!("correlation decay fit supports powerlaw and exponential, not {other:?}"))),
    };
    let pts = profile
        .iter()
        .enumerate()
        .map(|(k, &c)| Ok(FitPoint::new(abscissa((k + 1) as f64)?, c)))
        .collect::<Result<Vec<_>>>()?;
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 distances, got {}", pts.len())));
    }
    fit_points(&pts, model)
}

/// Observables recorded along one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub trajectory_id: u64,
    pub times: Vec<f64>,
    pub entropy_half: Vec<f64>,
    /// Present when `N` is divisible by 8.
    pub mutual_info: Option<Vec<f64>>,
    /// `density_a[s][j-1] = ⟨n_{j,A}⟩` at sample `s`.
    pub density_a: Vec<Vec<f64>>,
    pub density_b: Vec<Vec<f64>>,
    /// `C_AA(x)` averaged over the samples of the steady window.
    pub corr_aa: Vec<f64>,
    pub corr_bb: Vec<f64>,
    /// Largest `max |U†U - I|` seen at any sample.
    pub max_orthonormality_defect: f64,
    pub n_particles: usize,
    pub jumps: u64,
    /// Largest single-step jump probability observed.
    pub max_jump_probability: f64,
}

/// First sample index of the steady window `t >= (1 - fraction) t_total`.
pub fn window_start(times: &[f64], fraction: f64) -> usize {
    let t_total = times.last().copied().unwrap_or(0.0);
    let cut = (1.0 - fraction) * t_total - 1e-9 * t_total.max(1.0);
    times.partition_point(|t| *t < cut)
}

pub const STEADY_FRACTION: f64 = 0.2;

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Stat { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Stat { mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub entropy: Vec<Stat>,
    pub mutual_info: Option<Vec<Stat>>,
    pub density_a: Vec<Vec<Stat>>,
    pub density_b: Vec<Vec<Stat>>,
    /// Window averages per trajectory, then statistics across trajectories.
    pub steady_entropy: Stat,
    pub steady_mutual_info: Option<Stat>,
    pub steady_density_a: Vec<Stat>,
    pub steady_density_b: Vec<Stat>,
    pub corr_aa: Vec<Stat>,
    pub corr_bb: Vec<Stat>,
    pub window_start_index: usize,
}

impl TrajectoryEnsemble {
    /// Per-site mean density `[flat index]` at sample `s`.
    pub fn site_density(&self, s: usize, site: usize) -> Stat {
        let rung = site / 2;
        if site % 2 == 0 {
            self.density_a[s][rung]
        } else {
            self.density_b[s][rung]
        }
    }

    /// `max_t S̄(t)`.
    pub fn peak_entropy(&self) -> f64 {
        self.entropy.iter().map(|s| s.mean).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Pointwise and steady-window statistics over trajectories.
pub fn ensemble_statistics(series: &[ObservableSeries]) -> Result<TrajectoryEnsemble> {
    if series.len() < 2 {
        return Err(Error::invalid(format!(
            "ensemble statistics need at least 2 trajectories, got {}",
            series.len()
        )));
    }
    let first = &series[0];
    for s in &series[1..] {
        if s.times != first.times {
            return Err(Error::GridMismatch(format!(
                "trajectory {} has a different time grid from trajectory {}",
                s.trajectory_id, first.trajectory_id
            )));
        }
        if s.density_a.first().map(Vec::len) != first.density_a.first().map(Vec::len)
            || s.mutual_info.is_some() != first.mutual_info.is_some()
            || s.corr_aa.len() != first.corr_aa.len()
        {
            return Err(Error::GridMismatch(format!(
                "trajectory {} has different observable shapes",
                s.trajectory_id
            )));
        }
    }
    let ns = first.times.len();
    let nr = first.density_a.first().map_or(0, Vec::len);
    let w0 = window_start(&first.times, STEADY_FRACTION);
    let col = |f: &dyn Fn(&ObservableSeries) -> f64| -> Stat {
        Stat::of(&series.iter().map(f).collect::<Vec<_>>())
    };
    let window_mean = |v: &[f64]| v[w0..].iter().sum::<f64>() / (ns - w0) as f64;

    let entropy = (0..ns).map(|s| col(&|x| x.entropy_half[s])).collect();
    let mutual_info = first
        .mutual_info
        .as_ref()
        .map(|_| (0..ns).map(|s| col(&|x| x.mutual_info.as_ref().unwrap()[s])).collect());
    let density_a = (0..ns)
        .map(|s| (0..nr).map(|j| col(&|x| x.density_a[s][j])).collect())
        .collect();
    let density_b = (0..ns)
        .map(|s| (0..nr).map(|j| col(&|x| x.density_b[s][j])).collect())
        .collect();
    let steady_entropy = col(&|x| window_mean(&x.entropy_half));
    let steady_mutual_info = first
        .mutual_info
        .as_ref()
        .map(|_| col(&|x| window_mean(x.mutual_info.as_ref().unwrap())));
    let steady_leg = |pick: &dyn Fn(&ObservableSeries, usize) -> f64| -> Vec<Stat> {
        (0..nr)
            .map(|j| col(&|x| (w0..ns).map(|s| pick(x, s * nr + j)).sum::<f64>() / (ns - w0) as f64))
            .collect()
    };
    let steady_density_a = steady_leg(&|x, k| x.density_a[k / nr][k % nr]);
    let steady_density_b = steady_leg(&|x, k| x.density_b[k / nr][k % nr]);
    let nc = first.corr_aa.len();
    let corr_aa = (0..nc).map(|k| col(&|x| x.corr_aa[k])).collect();
    let corr_bb = (0..nc).map(|k| col(&|x| x.corr_bb[k])).collect();

    Ok(TrajectoryEnsemble {
        n_traj: series.len(),
        times: first.times.clone(),
        entropy,
        mutual_info,
        density_a,
        density_b,
        steady_entropy,
        steady_mutual_info,
        steady_density_a,
        steady_density_b,
        corr_aa,
        corr_bb,
        window_start_index: w0,
    })
}
