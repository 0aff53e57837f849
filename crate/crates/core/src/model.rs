//! First-quantized operators of the measured-feedback two-leg ladder.
//!
//! Sites are flattened as `(j, A) -> 2j - 1` and `(j, B) -> 2j` in 1-based
//! rung numbering. Internally every index is 0-based, so `(j, A)` lives at
//! `2(j - 1)` and `(j, B)` at `2(j - 1) + 1`.
//!
//! Each leg carries `N - 1` jump channels `L = exp(iπ n_p) ξ†ξ` with
//! `ξ_{j,A} = (c_{j,A} + i c_{j+1,A}) / √2`, `ξ_{j,B} = (c_{j,B} - i c_{j+1,B}) / √2`
//! and feedback site `p = (j + 1, leg)`.

use std::f64::consts::FRAC_1_SQRT_2;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, I, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    A,
    B,
}

impl Leg {
    pub const BOTH: [Leg; 2] = [Leg::A, Leg::B];

    pub fn other(self) -> Leg {
        match self {
            Leg::A => Leg::B,
            Leg::B => Leg::A,
        }
    }

    fn offset(self) -> usize {
        match self {
            Leg::A => 0,
            Leg::B => 1,
        }
    }
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Leg::A => "A",
            Leg::B => "B",
        })
    }
}

impl std::str::FromStr for Leg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Leg::A),
            "B" | "b" => Ok(Leg::B),
            other => Err(Error::invalid(format!("unknown leg {other:?}"))),
        }
    }
}

/// Physical parameters of the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    /// Rung count.
    pub n: usize,
    /// Intrachain hopping.
    pub t: f64,
    /// Interchain (rung) hopping.
    pub delta: f64,
    /// Dissipation strength.
    pub gamma: f64,
}

impl LadderConfig {
    pub const DEFAULT_T: f64 = 1.0;
    pub const DEFAULT_GAMMA: f64 = 0.5;

    /// Ladder with `t = 1` and `γ = 0.5`.
    pub fn new(n: usize, delta: f64) -> Result<Self> {
        LadderConfig {
            n,
            t: Self::DEFAULT_T,
            delta,
            gamma: Self::DEFAULT_GAMMA,
        }
        .validated()
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validated()
    }

    pub fn with_t(mut self, t: f64) -> Result<Self> {
        self.t = t;
        self.validated()
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validated()
    }

    pub fn with_n(mut self, n: usize) -> Result<Self> {
        self.n = n;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::invalid(format!("rung count must be >= 2, got {}", self.n)));
        }
        if !(self.t.is_finite() && self.delta.is_finite() && self.gamma.is_finite()) {
            return Err(Error::invalid("t, delta and gamma must be finite"));
        }
        if self.gamma < 0.0 {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.delta < 0.0 {
            return Err(Error::invalid(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(self)
    }

    pub fn n_sites(&self) -> usize {
        2 * self.n
    }

    pub fn n_channels(&self) -> usize {
        2 * (self.n - 1)
    }
}

/// A lattice site addressed by 1-based rung and leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SiteIndex {
    pub rung: usize,
    pub leg: Leg,
}

impl SiteIndex {
    pub fn new(rung: usize, leg: Leg) -> Self {
        debug_assert!(rung >= 1);
        SiteIndex { rung, leg }
    }

    /// 0-based flattened index.
    pub fn flat(self) -> usize {
        flat(self.rung, self.leg)
    }

    pub fn from_flat(k: usize) -> Self {
        let leg = if k % 2 == 0 { Leg::A } else { Leg::B };
        SiteIndex { rung: k / 2 + 1, leg }
    }
}

/// 0-based flattened index of 1-based rung `j` on `leg`.
#[inline]
pub fn flat(rung: usize, leg: Leg) -> usize {
    2 * (rung - 1) + leg.offset()
}

/// One Lindblad channel: mode `ξ† = Σ_k a_k c†_k` plus feedback site `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpChannel {
    pub leg: Leg,
    /// 1-based rung `j`; the mode straddles rungs `j` and `j + 1`.
    pub rung: usize,
    /// The two flattened sites carrying weight in `a`.
    pub sites: [usize; 2],
    /// Creation coefficients on `sites`.
    pub coeffs: [c64; 2],
    /// Flattened feedback site.
    pub p: usize,
    n_sites: usize,
}

impl JumpChannel {
    pub fn new(cfg: &LadderConfig, rung: usize, leg: Leg) -> Self {
        assert!(rung >= 1 && rung < cfg.n, "channel rung out of range");
        let s = FRAC_1_SQRT_2;
        let second = match leg {
            Leg::A => c64::new(0.0, -s),
            Leg::B => c64::new(0.0, s),
        };
        JumpChannel {
            leg,
            rung,
            sites: [flat(rung, leg), flat(rung + 1, leg)],
            coeffs: [c64::new(s, 0.0), second],
            p: flat(rung + 1, leg),
            n_sites: cfg.n_sites(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Dense mode vector `a`.
    pub fn mode_vector(&self) -> Vec<c64> {
        let mut a = vec![ZERO; self.n_sites];
        for (k, c) in self.sites.iter().zip(self.coeffs) {
            a[*k] = c;
        }
        a
    }

    /// `⟨a|v⟩ = Σ_k conj(a_k) v_k`, exploiting the two-site support.
    #[inline]
    pub fn overlap(&self, v: impl Fn(usize) -> c64) -> c64 {
        self.coeffs[0].conj() * v(self.sites[0]) + self.coeffs[1].conj() * v(self.sites[1])
    }
}

/// Channels in the global order `(1,A), (1,B), (2,A), (2,B), ...`.
pub fn build_jump_channels(cfg: &LadderConfig) -> Vec<JumpChannel> {
    (1..cfg.n)
        .flat_map(|j| Leg::BOTH.map(|leg| JumpChannel::new(cfg, j, leg)))
        .collect()
}

/// Hermitian ladder Hamiltonian with open boundaries.
pub fn build_h0(cfg: &LadderConfig) -> CMat {
    let n = cfg.n_sites();
    let mut h = Mat::zeros(n, n);
    let t = c64::new(cfg.t, 0.0);
    for j in 1..cfg.n {
        for leg in Leg::BOTH {
            let (a, b) = (flat(j, leg), flat(j + 1, leg));
            h[(a, b)] = t;
            h[(b, a)] = t;
        }
    }
    let d = c64::new(cfg.delta, 0.0);
    for j in 1..=cfg.n {
        let (a, b) = (flat(j, Leg::A), flat(j, Leg::B));
        h[(a, b)] = d;
        h[(b, a)] = d;
    }
    h
}

/// Non-Hermitian effective Hamiltonian: a pair of opposite Hatano-Nelson
/// chains with rung coupling and an imaginary potential of `-iγ/4` per
/// adjacent channel (so `-iγ/4` on edge rungs and `-iγ/2` in the bulk).
pub fn build_heff(cfg: &LadderConfig) -> CMat {
    let n = cfg.n_sites();
    let mut h = Mat::zeros(n, n);
    let strong = c64::new(cfg.t + cfg.gamma / 4.0, 0.0);
    let weak = c64::new(cfg.t - cfg.gamma / 4.0, 0.0);
    for j in 1..cfg.n {
        let (a0, a1) = (flat(j, Leg::A), flat(j + 1, Leg::A));
        // coefficient of c†_j c_{j+1} sits at (j, j+1)
        h[(a0, a1)] = strong;
        h[(a1, a0)] = weak;
        let (b0, b1) = (flat(j, Leg::B), flat(j + 1, Leg::B));
        h[(b0, b1)] = weak;
        h[(b1, b0)] = strong;
    }
    let d = c64::new(cfg.delta, 0.0);
    for j in 1..=cfg.n {
        let (a, b) = (flat(j, Leg::A), flat(j, Leg::B));
        h[(a, b)] = d;
        h[(b, a)] = d;
    }
    let quarter = -I * (cfg.gamma / 4.0);
    for j in 1..cfg.n {
        for leg in Leg::BOTH {
            h[(flat(j, leg), flat(j, leg))] += quarter;
            h[(flat(j + 1, leg), flat(j + 1, leg))] += quarter;
        }
    }
    h
}

/// Rotation about the ladder centre: `(j, A) <-> (N + 1 - j, B)`.
/// Entry `k` is the image of flattened site `k`.
pub fn rotation_permutation(n: usize) -> Vec<usize> {
    (0..2 * n)
        .map(|k| {
            let s = SiteIndex::from_flat(k);
            flat(n + 1 - s.rung, s.leg.other())
        })
        .collect()
}
