//! Liouvillian spectra from the eigensystem of `h_eff`.
//!
//! Splitting `L̃ = L̃_0 + L̃_1` with `L̃_0 = -i(h_eff ⊗ I - I ⊗ h_eff*)` and
//! `L̃_1 = γ Σ L ⊗ L*`, the unperturbed eigenvalues are `-i(E_m - E_n*)` with
//! right vectors `r_m ⊗ r_n*` and left vectors `l_m ⊗ l_n*`. For a rank-one
//! jump `L = Φ a a†` the first-order matrix elements factorize:
//! `⟨⟨l_m l_n*| L⊗L* |r_m' r_n'*⟩⟩ = c_{mm'} conj(c_{nn'})` with
//! `c_{mm'} = (l_m† Φ a)(a† r_m')`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::linalg::{c64, inverse, CMat, I, ZERO};
use crate::model::{build_heff, build_jump_channels, flat, LadderConfig, Leg};

/// Condition number of the eigenvector matrix above which the eigensystem
/// is flagged as near-defective.
pub const DEFECTIVE_CONDITION: f64 = 1e12;
/// Zeroth-order eigenvalues closer than this form a degenerate cluster.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Threshold on `|l̂† r|` for unit-normalized vectors.
pub const BIORTHO_FLAG: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct BiorthogonalEigensystem {
    /// Sorted by real part, then imaginary part.
    pub energies: Vec<c64>,
    /// Unit-norm right eigenvectors as columns.
    pub right: CMat,
    /// Left eigenvectors as columns, scaled so that `l_m† r_n = δ_mn`.
    pub left: CMat,
    /// 2-norm condition number of `right`.
    pub condition: f64,
    pub near_defective: bool,
}

impl BiorthogonalEigensystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// `max |L† R - I|`.
    pub fn biorthogonality_defect(&self) -> f64 {
        let g = self.left.adjoint() * &self.right;
        let mut worst = 0.0f64;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - c64::new(want, 0.0)).norm());
            }
        }
        worst
    }

    /// `|l̂_m† r_m|` with both vectors at unit norm (inverse eigenvalue
    /// condition number).
    pub fn overlap(&self, m: usize) -> f64 {
        let l = self.left.col(m);
        1.0 / l.norm_l2()
    }
}

pub fn heff_eigensystem(cfg: &LadderConfig) -> Result<BiorthogonalEigensystem> {
    eigensystem_of(&build_heff(cfg))
}

pub fn eigensystem_of(h: &CMat) -> Result<BiorthogonalEigensystem> {
    let d = h.nrows();
    let evd = h.eigen().map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re).then(s[a].im.total_cmp(&s[b].im)));
    let energies: Vec<c64> = order.iter().map(|&k| s[k]).collect();
    let u = evd.U();
    let mut right = Mat::from_fn(d, d, |i, j| u[(i, order[j])]);
    for j in 0..d {
        let nrm = right.col(j).norm_l2();
        for i in 0..d {
            right[(i, j)] /= nrm;
        }
    }
    let rinv = inverse(right.as_ref());
    let left = rinv.adjoint().to_owned();
    let sv = right.singular_values().map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    Ok(BiorthogonalEigensystem {
        energies,
        right,
        left,
        condition,
        near_defective: condition > DEFECTIVE_CONDITION,
    })
}

/// Max residual `‖h r_m - E_m r_m‖` relative to `‖h‖_F`.
pub fn eigen_residual(h: &CMat, es: &BiorthogonalEigensystem) -> f64 {
    let hr = h * &es.right;
    let mut worst = 0.0f64;
    for m in 0..es.dim() {
        let r: f64 = (0..es.dim())
            .map(|i| (hr[(i, m)] - es.energies[m] * es.right[(i, m)]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    worst / h.norm_l2()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    /// Rungs excluded at each end.
    pub skip_edges: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { skip_edges: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFit {
    /// Decay rate per rung of `|ψ_A(x)|`.
    pub kappa: f64,
    /// `|ψ_A(x)| ≈ prefactor · exp(-κ x)`.
    pub prefactor: f64,
    pub r_squared: f64,
    pub n: usize,
    pub energy_re: f64,
    pub energy_im: f64,
    /// `|ψ_A(x)|` for rungs `1..=N`, unit-norm state.
    pub profile_a: Vec<f64>,
    pub profile_b: Vec<f64>,
}

impl LocalizationFit {
    pub fn kappa_n(&self) -> f64 {
        self.kappa * self.n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// One fit, or one per member of a degenerate max-Im group.
    pub fits: Vec<LocalizationFit>,
    /// Another eigenvalue lies within `1e-10` in imaginary part.
    pub degenerate: bool,
    /// Reason the fit is not meaningful, if any.
    pub rejected: Option<String>,
}

impl LocalizationReport {
    pub fn primary(&self) -> &LocalizationFit {
        &self.fits[0]
    }
}

/// Log-linear fit of the leg-A rung profile of the `h_eff` eigenstate with
/// the largest `Im E`.
pub fn max_im_eigenstate_fit(cfg: &LadderConfig, window: FitWindow) -> Result<LocalizationReport> {
    let es = heff_eigensystem(cfg)?;
    let n = cfg.n;
    if n < 2 * window.skip_edges + 2 {
        return Err(Error::invalid(format!(
            "N = {n} too small for a fit window skipping {} rungs per edge",
            window.skip_edges
        )));
    }
    let top = es
        .energies
        .iter()
        .map(|e| e.im)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut members: Vec<usize> = (0..es.dim()).filter(|&m| (es.energies[m].im - top).abs() < 1e-10).collect();
    members.sort_by(|&a, &b| es.energies[a].re.total_cmp(&es.energies[b].re));
    let degenerate = members.len() > 1;

    let mut fits = Vec::with_capacity(members.len());
    for &m in &members {
        let r = es.right.col(m);
        let profile_a: Vec<f64> = (1..=n).map(|j| r[flat(j, Leg::A)].norm()).collect();
        let profile_b: Vec<f64> = (1..=n).map(|j| r[flat(j, Leg::B)].norm()).collect();
        let lo = window.skip_edges;
        let hi = n - window.skip_edges;
        let xs: Vec<f64> = (lo..hi).map(|k| (k + 1) as f64).collect();
        let ys: Vec<f64> = (lo..hi).map(|k| profile_a[k].max(f64::MIN_POSITIVE).ln()).collect();
        let LinearFit { slope, intercept, r_squared } = linear_fit(&xs, &ys)?;
        fits.push(LocalizationFit {
            kappa: -slope,
            prefactor: intercept.exp(),
            r_squared: r_squared.unwrap_or(0.0),
            n,
            energy_re: es.energies[m].re,
            energy_im: es.energies[m].im,
            profile_a,
            profile_b,
        });
    }

    let rejected = if es.energies.iter().all(|e| e.im.abs() < 1e-12) {
        Some("Hermitian effective Hamiltonian: no localized max-Im mode".to_string())
    } else if fits.iter().any(|f| !(f.kappa > 0.0)) {
        Some("max-Im eigenstate does not decay along leg A".to_string())
    } else {
        None
    };
    Ok(LocalizationReport { fits, degenerate, rejected })
}

/// `-i(E_m - E_n*)` for all ordered pairs, index `m * d + n`.
pub fn zeroth_order_spectrum(es: &BiorthogonalEigensystem) -> Vec<c64> {
    let e = &es.energies;
    e.iter()
        .flat_map(|em| e.iter().map(move |en| -I * (em - en.conj())))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FirstOrderResult {
    /// Corrected eigenvalues; non-degenerate pairs at index `m * d + n`,
    /// cluster members in the slots of the cluster's pairs.
    pub eigenvalues: Vec<c64>,
    pub zeroth: Vec<c64>,
    /// Pairs `(m, n)` with `|l̂_m† r_m|` or `|l̂_n† r_n|` below threshold.
    pub flagged_pairs: Vec<(usize, usize)>,
    /// Number of zeroth-order clusters with more than one member.
    pub degenerate_clusters: usize,
    pub largest_cluster: usize,
}

/// First-order spectrum with the full dissipator prefactor `γ`.
pub fn first_order_spectrum(cfg: &LadderConfig) -> Result<FirstOrderResult> {
    first_order_spectrum_scaled(cfg, 1.0)
}

/// First-order spectrum with `L̃_1` multiplied by `scale` while `h_eff` is
/// kept fixed.
pub fn first_order_spectrum_scaled(cfg: &LadderConfig, scale: f64) -> Result<FirstOrderResult> {
    let es = heff_eigensystem(cfg)?;
    Ok(first_order_from(cfg, &es, cfg.gamma * scale))
}

pub fn first_order_from(cfg: &LadderConfig, es: &BiorthogonalEigensystem, strength: f64) -> FirstOrderResult {
    let d = es.dim();
    let channels = build_jump_channels(cfg);
    // u[ch][m] = l_m† Φ a, w[ch][m] = a† r_m
    let mut u = Vec::with_capacity(channels.len());
    let mut w = Vec::with_capacity(channels.len());
    for ch in &channels {
        let mut phi_a = ch.mode_vector();
        phi_a[ch.p] = -phi_a[ch.p];
        let um: Vec<c64> = (0..d)
            .map(|m| ch.sites.iter().map(|&k| es.left[(k, m)].conj() * phi_a[k]).sum())
            .collect();
        let wm: Vec<c64> = (0..d).map(|m| ch.overlap(|k| es.right[(k, m)])).collect();
        u.push(um);
        w.push(wm);
    }
    let c = |ch: usize, m: usize, mp: usize| u[ch][m] * w[ch][mp];
    let g = c64::new(strength, 0.0);

    let zeroth = zeroth_order_spectrum(es);
    let clusters = cluster(&zeroth, CLUSTER_TOL);

    let mut eigenvalues = vec![ZERO; d * d];
    let mut degenerate_clusters = 0;
    let mut largest_cluster = 1;
    for members in clusters {
        if members.len() == 1 {
            let k = members[0];
            let (m, n) = (k / d, k % d);
            let corr: c64 = (0..channels.len()).map(|ch| c(ch, m, m) * c(ch, n, n).conj()).sum();
            eigenvalues[k] = zeroth[k] + g * corr;
            continue;
        }
        degenerate_clusters += 1;
        largest_cluster = largest_cluster.max(members.len());
        let sz = members.len();
        let block = Mat::from_fn(sz, sz, |a, b| {
            let (m, n) = (members[a] / d, members[a] % d);
            let (mp, np) = (members[b] / d, members[b] % d);
            let s: c64 = (0..channels.len()).map(|ch| c(ch, m, mp) * c(ch, n, np).conj()).sum();
            g * s
        });
        let center: c64 = members.iter().map(|&k| zeroth[k]).sum::<c64>() / sz as f64;
        let mut shifts = block.eigenvalues().unwrap_or_else(|_| {
            (0..sz).map(|a| block[(a, a)]).collect()
        });
        shifts.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        for (slot, shift) in members.iter().zip(shifts) {
            eigenvalues[*slot] = center + shift;
        }
    }

    let weak: Vec<bool> = (0..d).map(|m| es.overlap(m) < BIORTHO_FLAG).collect();
    let flagged_pairs = if weak.iter().any(|x| *x) {
        (0..d)
            .flat_map(|m| (0..d).map(move |n| (m, n)))
            .filter(|&(m, n)| weak[m] || weak[n])
            .collect()
    } else {
        Vec::new()
    };

    FirstOrderResult {
        eigenvalues,
        zeroth,
        flagged_pairs,
        degenerate_clusters,
        largest_cluster,
    }
}

/// Single-linkage clusters of points closer than `tol`, each sorted, in
/// order of their smallest index.
fn cluster(points: &[c64], tol: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].re.total_cmp(&points[b].re));
    for (pos, &a) in order.iter().enumerate() {
        for &b in &order[pos + 1..] {
            if points[b].re - points[a].re >= tol {
                break;
            }
            if (points[a] - points[b]).norm() < tol {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for k in 0..n {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(k);
    }
    groups.into_values().collect()
}
