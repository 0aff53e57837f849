//! Dense complex linear-algebra helpers shared by the exact, perturbative
//! and trajectory sectors.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef};

use crate::error::{Error, Result};

pub use faer::c64;

/// Dense complex matrix.
pub type CMat = Mat<c64>;

pub const I: c64 = c64 { re: 0.0, im: 1.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };
pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Upper bound on the memory a dense superoperator computation may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MemoryCap {
    pub bytes: u64,
}

impl MemoryCap {
    pub const DEFAULT_BYTES: u64 = 8 << 30;

    pub fn new(bytes: u64) -> Self {
        MemoryCap { bytes }
    }

    /// Checks that a dense `dim x dim` complex matrix, together with the
    /// working copies a dense eigensolver needs, fits under the cap.
    pub fn check_square(&self, what: &str, dim: usize) -> Result<()> {
        let required = dense_eig_bytes(dim);
        if required > self.bytes {
            return Err(Error::Capacity {
                what: format!("{what} ({dim}x{dim} dense complex)"),
                required_bytes: required,
                cap_bytes: self.bytes,
            });
        }
        Ok(())
    }
}

impl Default for MemoryCap {
    fn default() -> Self {
        MemoryCap::new(Self::DEFAULT_BYTES)
    }
}

/// Bytes needed to hold a dense complex `dim x dim` matrix plus the two
/// working copies used during Hessenberg/Schur reduction.
pub fn dense_eig_bytes(dim: usize) -> u64 {
    let entries = (dim as u64).saturating_mul(dim as u64);
    entries.saturating_mul(16).saturating_mul(3)
}

pub fn dagger(m: MatRef<'_, c64>) -> CMat {
    m.adjoint().to_owned()
}

pub fn conj(m: MatRef<'_, c64>) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].conj())
}

/// Kronecker product `a ⊗ b`, with row index `i_a * rows(b) + i_b`.
pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = Mat::zeros(ar * br, ac * bc);
    for ja in 0..ac {
        for ia in 0..ar {
            let s = a[(ia, ja)];
            if s == ZERO {
                continue;
            }
            for jb in 0..bc {
                for ib in 0..br {
                    out[(ia * br + ib, ja * bc + jb)] = s * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Largest entry modulus.
pub fn max_abs(m: MatRef<'_, c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

/// `max |a_ij - b_ij|`.
pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            best = best.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    best
}

/// `max |m - m†|`.
pub fn hermiticity_defect(m: MatRef<'_, c64>) -> f64 {
    assert_eq!(m.nrows(), m.ncols());
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..=j {
            best = best.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    best
}

/// `max |m† m - I|`.
pub fn orthonormality_defect(m: MatRef<'_, c64>) -> f64 {
    let gram = m.adjoint() * m;
    let mut best = 0.0f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { ONE } else { ZERO };
            best = best.max((gram[(i, j)] - target).norm());
        }
    }
    best
}

/// Induced 1-norm (max column sum).
pub fn norm_one(m: MatRef<'_, c64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn trace(m: MatRef<'_, c64>) -> c64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}

pub fn scale(m: MatRef<'_, c64>, s: c64) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| s * m[(i, j)])
}

// Padé(13) coefficients for the scaling-and-squaring matrix exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by degree-13 Padé approximation with scaling and
/// squaring. Backward error is at the level of unit roundoff.
pub fn expm(a: MatRef<'_, c64>) -> CMat {
    assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    let norm = norm_one(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let s = c64::new(0.5f64.powi(squarings as i32), 0.0);
    let a = scale(a, s);
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| c64::new(PADE13[k], 0.0);

    let comb = |c6: c64, c4: c64, c2: c64| -> CMat {
        Mat::from_fn(n, n, |i, j| c6 * a6[(i, j)] + c4 * a4[(i, j)] + c2 * a2[(i, j)])
    };
    let inner_u = comb(b(13), b(11), b(9));
    let tail_u = Mat::from_fn(n, n, |i, j| {
        b(7) * a6[(i, j)] + b(5) * a4[(i, j)] + b(3) * a2[(i, j)] + b(1) * id[(i, j)]
    });
    let u_poly = &a6 * &inner_u + tail_u;
    let u = &a * &u_poly;

    let inner_v = comb(b(12), b(10), b(8));
    let tail_v = Mat::from_fn(n, n, |i, j| {
        b(6) * a6[(i, j)] + b(4) * a4[(i, j)] + b(2) * a2[(i, j)] + b(0) * id[(i, j)]
    });
    let v = &a6 * &inner_v + tail_v;

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom.partial_piv_lu().solve(&numer);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

pub fn inverse(m: MatRef<'_, c64>) -> CMat {
    m.partial_piv_lu().inverse()
}

/// Symmetric Hausdorff distance between two finite point sets in ℂ.
pub fn hausdorff(a: &[c64], b: &[c64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    let directed = |x: &[c64], y: &[c64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// One-to-one matching of two equally sized spectra. Pairs are assigned
/// greedily in order of increasing distance; the largest matched distance is
/// returned. Intended for small spectra (cost is quadratic in memory).
pub fn match_spectra(a: &[c64], b: &[c64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spectra must have equal length");
    let n = a.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            pairs.push(((p - q).norm(), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut used_a = vec![false; n];
    let mut used_b = vec![false; n];
    let mut worst = 0.0f64;
    let mut matched = 0;
    for (d, i, j) in pairs {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        worst = worst.max(d);
        matched += 1;
        if matched == n {
            break;
        }
    }
    worst
}

/// Largest distance from any eigenvalue to its nearest complex-conjugate
/// partner in the same spectrum.
pub fn conjugation_defect(spectrum: &[c64]) -> f64 {
    let mut sorted: Vec<c64> = spectrum.to_vec();
    sorted.sort_by(|x, y| x.re.total_cmp(&y.re));
    spectrum
        .iter()
        .map(|l| {
            let target = l.conj();
            nearest_in_sorted(&sorted, target)
        })
        .fold(0.0, f64::max)
}

fn nearest_in_sorted(sorted_by_re: &[c64], target: c64) -> f64 {
    let start = sorted_by_re.partition_point(|z| z.re < target.re);
    let mut best = f64::INFINITY;
    for z in sorted_by_re[start..].iter() {
        if z.re - target.re > best {
            break;
        }
        best = best.min((z - target).norm());
    }
    for z in sorted_by_re[..start].iter().rev() {
        if target.re - z.re > best {
            break;
        }
        best = best.min((z - target).norm());
    }
    best
}

/// Column `j` of `m` as an owned vector.
pub fn column(m: MatRef<'_, c64>, j: usize) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn vdot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> c64 {
        c64::new(re, im)
    }

    #[test]
    fn expm_of_diagonal_matches_scalar_exponentials() {
        let d = [c(0.3, -1.0), c(-2.0, 0.5), c(7.0, 3.0)];
        let a = Mat::from_fn(3, 3, |i, j| if i == j { d[i] } else { ZERO });
        let e = expm(a.as_ref());
        for (i, z) in d.iter().enumerate() {
            let want = z.exp();
            assert!((e[(i, i)] - want).norm() < 1e-12 * want.norm());
        }
        assert!(e[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn expm_of_nilpotent_is_truncated_series() {
        // [[0, x], [0, 0]] exponentiates to [[1, x], [0, 1]]
        let x = c(12.0, -5.0);
        let a = Mat::from_fn(2, 2, |i, j| if (i, j) == (0, 1) { x } else { ZERO });
        let e = expm(a.as_ref());
        assert!((e[(0, 1)] - x).norm() < 1e-12);
        assert!((e[(0, 0)] - ONE).norm() < 1e-14);
    }

    #[test]
    fn expm_rotation_generator() {
        // exp(θ [[0,-1],[1,0]]) is a rotation by θ; θ large enough to force squaring
        let theta = 20.0;
        let a = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => c(-theta, 0.0),
            (1, 0) => c(theta, 0.0),
            _ => ZERO,
        });
        let e = expm(a.as_ref());
        assert!((e[(0, 0)].re - theta.cos()).abs() < 1e-12);
        assert!((e[(1, 0)].re - theta.sin()).abs() < 1e-12);
    }

    #[test]
    fn kron_index_layout() {
        let a = Mat::from_fn(2, 2, |i, j| c((2 * i + j) as f64, 0.0));
        let b = Mat::from_fn(2, 2, |i, j| c(0.0, (2 * i + j + 1) as f64));
        let k = kron(a.as_ref(), b.as_ref());
        for ia in 0..2 {
            for ja in 0..2 {
                for ib in 0..2 {
                    for jb in 0..2 {
                        assert_eq!(k[(ia * 2 + ib, ja * 2 + jb)], a[(ia, ja)] * b[(ib, jb)]);
                    }
                }
            }
        }
    }

    #[test]
    fn hausdorff_and_matching() {
        let a = [c(0.0, 0.0), c(1.0, 0.0)];
        let b = [c(1.0, 0.1), c(0.0, -0.2)];
        assert!((hausdorff(&a, &b) - 0.2).abs() < 1e-15);
        assert!((match_spectra(&a, &b) - 0.2).abs() < 1e-15);
        // Hausdorff ignores multiplicity, matching does not
        let c2 = [c(0.0, 0.0), c(0.0, 0.0)];
        assert_eq!(hausdorff(&a[..1], &c2), 0.0);
        assert!((match_spectra(&a, &c2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conjugation_defect_detects_missing_partner() {
        let closed = [c(-1.0, 2.0), c(-1.0, -2.0), c(-0.5, 0.0)];
        assert!(conjugation_defect(&closed) < 1e-15);
        let open = [c(-1.0, 2.0), c(-0.5, 0.0)];
        assert!((conjugation_defect(&open) - (0.25f64 + 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn memory_cap_reports_required_bytes() {
        let cap = MemoryCap::new(1 << 20);
        let err = cap.check_square("test", 1000).unwrap_err();
        match err {
            Error::Capacity { required_bytes, .. } => assert_eq!(required_bytes, 48_000_000),
            other => panic!("unexpected {other}"),
        }
        assert!(cap.check_square("small", 10).is_ok());
    }
}
