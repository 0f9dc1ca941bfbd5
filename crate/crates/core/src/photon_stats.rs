//! Photon-number statistics of WCP and heralded SPDC sources before and
//! after a lossy channel.
//!
//! Per-mode distributions are Poissonian (coherent) or thermal (two-mode
//! squeezed); totals follow by numerical convolution, which is the
//! generating-function product in disguise. The heralded SPDC joint
//! distribution folds the local trigger in, so it is sub-normalized: its
//! mass equals the trigger probability.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

use crate::spectra::OverlapVector;

/// Default truncation for photon-number vectors. Thermal and Poissonian
/// tails at the sub-photon intensities used here are below 1e-12 by n = 20.
pub const DEFAULT_N_MAX: usize = 20;

/// Default certified-tail tolerance for proper distributions.
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum PhotonStatsError {
    /// Truncated mass above the configured tolerance.
    TailAboveTolerance { tail: f64, tol: f64 },
    /// A probability fell below -1e-14; the closed forms are inconsistent.
    NegativeProbability(f64),
    EmptyModes,
    /// PNDs entering a convolution must share n_max.
    InconsistentLengths,
    InvalidParameter(&'static str),
}

impl core::fmt::Display for PhotonStatsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PhotonStatsError::TailAboveTolerance { tail, tol } => {
                write!(f, "truncated tail mass {tail:e} exceeds tolerance {tol:e}")
            }
            PhotonStatsError::NegativeProbability(p) => {
                write!(f, "internal inconsistency: probability {p:e} below -1e-14")
            }
            PhotonStatsError::EmptyModes => write!(f, "at least one mode is required"),
            PhotonStatsError::InconsistentLengths => {
                write!(f, "distributions must share the same photon-number cutoff")
            }
            PhotonStatsError::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for PhotonStatsError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Wcp,
    Spdc,
}

/// Per-temporal-mode mean photon numbers of a source at a given total
/// intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalIntensities {
    pub mu: Vec<f64>,
    pub total: f64,
    pub kind: SourceKind,
}

/// Probability vector over total photon number `0..=n_max` with the
/// truncated (or otherwise unaccounted) mass tracked in `tail`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberDistribution {
    pub probs: Vec<f64>,
    pub tail: f64,
}

impl PhotonNumberDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        Self {
            probs,
            tail: 1.0 - sum,
        }
    }

    pub fn delta_zero(n_max: usize) -> Self {
        let mut probs = vec![0.0; n_max + 1];
        probs[0] = 1.0;
        Self { probs, tail: 0.0 }
    }

    pub fn poisson(mu: f64, n_max: usize) -> Self {
        let mut probs = vec![0.0; n_max + 1];
        let mut p = (-mu).exp();
        for (n, slot) in probs.iter_mut().enumerate() {
            *slot = p;
            p *= mu / (n + 1) as f64;
        }
        Self::from_probs(probs)
    }

    pub fn thermal(mu: f64, n_max: usize) -> Self {
        let mut probs = vec![0.0; n_max + 1];
        let ratio = mu / (1.0 + mu);
        let mut p = 1.0 / (1.0 + mu);
        for slot in probs.iter_mut() {
            *slot = p;
            p *= ratio;
        }
        Self::from_probs(probs)
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    pub fn check_tail(&self, tol: f64) -> Result<(), PhotonStatsError> {
        if self.tail.abs() > tol {
            return Err(PhotonStatsError::TailAboveTolerance {
                tail: self.tail,
                tol,
            });
        }
        Ok(())
    }
}

/// Heralding detector on the idler arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDetector {
    pub eta: f64,
    pub dark: f64,
}

impl LocalDetector {
    pub fn new(eta: f64, dark: f64) -> Result<Self, PhotonStatsError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(PhotonStatsError::InvalidParameter("local efficiency"));
        }
        if !(0.0..1.0).contains(&dark) {
            return Err(PhotonStatsError::InvalidParameter("local dark count"));
        }
        Ok(Self { eta, dark })
    }
}

/// Threshold detector at the measurement relay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayDetector {
    pub eta: f64,
    pub dark: f64,
}

impl RelayDetector {
    pub fn new(eta: f64, dark: f64) -> Result<Self, PhotonStatsError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(PhotonStatsError::InvalidParameter("relay efficiency"));
        }
        if !(0.0..1.0).contains(&dark) {
            return Err(PhotonStatsError::InvalidParameter("relay dark count"));
        }
        Ok(Self { eta, dark })
    }
}

/// Splits a total SPDC pair intensity over the Schmidt modes:
/// solves `sum_k sinh^2(C sqrt(lambda_k)) = total` for the single pump
/// scalar `C`, then `mu_k = sinh^2(C sqrt(lambda_k))`.
pub fn spdc_mode_intensities(lambdas: &[f64], total: f64) -> ModalIntensities {
    assert!(total > 0.0, "total intensity must be positive");
    assert!(
        lambdas.iter().any(|l| *l > 0.0),
        "need at least one positive Schmidt weight"
    );
    let sqrt_l: Vec<f64> = lambdas.iter().map(|l| l.max(0.0).sqrt()).collect();
    let sum_at = |c: f64| -> f64 { sqrt_l.iter().map(|s| (c * s).sinh().powi(2)).sum() };

    // sinh^2 is convex increasing, so C for the leading mode alone is an
    // upper bracket.
    let lead = sqrt_l.iter().cloned().fold(0.0, f64::max);
    let mut hi = total.sqrt().asinh() / lead;
    while sum_at(hi) < total {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = sum_at(mid);
        if s < total {
            lo = mid;
        } else {
            hi = mid;
        }
        if (s - total).abs() <= 1e-12 * total {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    let mu: Vec<f64> = sqrt_l.iter().map(|s| (c * s).sinh().powi(2)).collect();
    let total = mu.iter().sum();
    ModalIntensities {
        mu,
        total,
        kind: SourceKind::Spdc,
    }
}

/// Modal intensities of a coherent pulse decomposed on a foreign mode set:
/// `mu_i = |alpha c_i|^2`, with the mass outside the spanned subspace
/// assigned to one extra orthogonal-complement mode so the total is exactly
/// `|alpha|^2`.
pub fn wcp_modal_intensities(alpha: Complex64, overlaps: &OverlapVector) -> ModalIntensities {
    let a2 = alpha.norm_sqr();
    let mut mu: Vec<f64> = overlaps
        .coefficients
        .iter()
        .map(|c| a2 * c.norm_sqr())
        .collect();
    mu.push(a2 * overlaps.residual_norm.max(0.0));
    ModalIntensities {
        mu,
        total: a2,
        kind: SourceKind::Wcp,
    }
}

fn convolve_truncated(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(n - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Distribution of the total photon number across independent modes: the
/// discrete convolution of the per-mode distributions (equivalently, the
/// product of their generating functions).
pub fn pnd_convolve(
    per_mode: &[PhotonNumberDistribution],
    tail_tol: f64,
) -> Result<PhotonNumberDistribution, PhotonStatsError> {
    let first = per_mode.first().ok_or(PhotonStatsError::EmptyModes)?;
    let n = first.probs.len();
    if per_mode.iter().any(|p| p.probs.len() != n) {
        return Err(PhotonStatsError::InconsistentLengths);
    }
    let mut acc = first.probs.clone();
    for p in &per_mode[1..] {
        acc = convolve_truncated(&acc, &p.probs);
    }
    let out = PhotonNumberDistribution::from_probs(acc);
    out.check_tail(tail_tol)?;
    Ok(out)
}

/// Total photon-pair number distribution of an SPDC source: per-mode
/// thermal distributions `P_k(n) = mu_k^n / (1+mu_k)^(n+1)` convolved.
pub fn spdc_total_pnd(
    modal: &ModalIntensities,
    n_max: usize,
) -> Result<PhotonNumberDistribution, PhotonStatsError> {
    if modal.kind != SourceKind::Spdc {
        return Err(PhotonStatsError::InvalidParameter(
            "spdc_total_pnd needs an SPDC source",
        ));
    }
    let parts: Vec<PhotonNumberDistribution> = modal
        .mu
        .iter()
        .map(|&m| PhotonNumberDistribution::thermal(m, n_max))
        .collect();
    pnd_convolve(&parts, DEFAULT_TAIL_TOL)
}

/// Joint trigger-and-transmission probability evaluator
/// `f(k) = prod_i (eta mu_i)^(k_i) / (1 + eta mu_i)^(1+k_i)
///        - (1-d_I) prod_i [(1-eta_I) eta mu_i]^(k_i) / [1 + (eta + eta_I - eta eta_I) mu_i]^(1+k_i)`.
#[derive(Debug, Clone)]
pub struct HeraldedJoint {
    eta_mu: Vec<f64>,
    lost_eta_mu: Vec<f64>,
    cross_mu: Vec<f64>,
    one_minus_dark: f64,
}

impl HeraldedJoint {
    pub fn modes(&self) -> usize {
        self.eta_mu.len()
    }

    /// Probability that the local detector triggers and exactly `k[i]`
    /// photons of mode `i` survive the channel.
    pub fn eval(&self, k: &[usize]) -> f64 {
        assert_eq!(k.len(), self.eta_mu.len());
        let mut transmitted = 1.0;
        let mut untriggered = self.one_minus_dark;
        for (i, &ki) in k.iter().enumerate() {
            transmitted *= self.eta_mu[i].powi(ki as i32) / (1.0 + self.eta_mu[i]).powi(ki as i32 + 1);
            untriggered *=
                self.lost_eta_mu[i].powi(ki as i32) / (1.0 + self.cross_mu[i]).powi(ki as i32 + 1);
        }
        transmitted - untriggered
    }
}

/// Heralded post-channel statistics of an SPDC source behind a combined
/// transmittance `eta` (channel loss and relay efficiency multiplied
/// beforehand), heralded by `local` on the idler arm.
///
/// Returns the joint evaluator, the total distribution over
/// `k = |k_vec|` (sub-normalized: its mass plus `tail` is 1, and the mass
/// equals the trigger probability up to truncation), and the trigger
/// probability `1 - (1-d_I) prod_i 1/(1 + eta_I mu_i)`.
pub fn heralded_pnd_after_channel(
    modal: &ModalIntensities,
    local: &LocalDetector,
    eta: f64,
    k_max: usize,
) -> Result<(HeraldedJoint, PhotonNumberDistribution, f64), PhotonStatsError> {
    if modal.kind != SourceKind::Spdc {
        return Err(PhotonStatsError::InvalidParameter(
            "heralded_pnd_after_channel needs an SPDC source",
        ));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(PhotonStatsError::InvalidParameter("transmittance"));
    }
    if modal.mu.is_empty() {
        return Err(PhotonStatsError::EmptyModes);
    }
    let joint = HeraldedJoint {
        eta_mu: modal.mu.iter().map(|m| eta * m).collect(),
        lost_eta_mu: modal.mu.iter().map(|m| (1.0 - local.eta) * eta * m).collect(),
        cross_mu: modal
            .mu
            .iter()
            .map(|m| (eta + local.eta - eta * local.eta) * m)
            .collect(),
        one_minus_dark: 1.0 - local.dark,
    };

    // Convolve the two product terms separately; both are geometric in n.
    let geometric = |num: f64, denom_mu: f64| -> Vec<f64> {
        let ratio = num / (1.0 + denom_mu);
        let mut v = vec![0.0; k_max + 1];
        let mut p = 1.0 / (1.0 + denom_mu);
        for slot in v.iter_mut() {
            *slot = p;
            p *= ratio;
        }
        v
    };
    let mut first: Option<Vec<f64>> = None;
    let mut second: Option<Vec<f64>> = None;
    for (i, &m) in modal.mu.iter().enumerate() {
        let f_i = geometric(joint.eta_mu[i], joint.eta_mu[i]);
        let s_i = geometric(joint.lost_eta_mu[i], joint.cross_mu[i]);
        let _ = m;
        first = Some(match first {
            None => f_i,
            Some(prev) => convolve_truncated(&prev, &f_i),
        });
        second = Some(match second {
            None => s_i,
            Some(prev) => convolve_truncated(&prev, &s_i),
        });
    }
    let first = first.unwrap();
    let second = second.unwrap();
    let mut probs = vec![0.0; k_max + 1];
    for k in 0..=k_max {
        let p = first[k] - joint.one_minus_dark * second[k];
        if p < -1e-14 {
            return Err(PhotonStatsError::NegativeProbability(p));
        }
        probs[k] = p.max(0.0);
    }
    let trigger: f64 = 1.0
        - (1.0 - local.dark)
            * modal
                .mu
                .iter()
                .map(|m| 1.0 / (1.0 + local.eta * m))
                .product::<f64>();
    Ok((joint, PhotonNumberDistribution::from_probs(probs), trigger))
}

/// Post-channel distribution of a WCP source: Poissonian thinning keeps the
/// total Poissonian, `P(n) = e^(-eta mu) (eta mu)^n / n!`, independent of
/// how the pulse splits over modes.
pub fn wcp_pnd_after_channel(
    modal: &ModalIntensities,
    eta: f64,
    k_max: usize,
) -> PhotonNumberDistribution {
    PhotonNumberDistribution::poisson(eta * modal.total, k_max)
}

/// Effective per-mode squeezing intensities seen by one beam-splitter
/// output arm behind combined transmittance `eta`: the squeeze parameter
/// scales by `sqrt(eta/2)`, so `mu -> sinh^2(asinh(sqrt(mu)) sqrt(eta/2))`.
pub fn effective_bs_intensities(modal: &ModalIntensities, eta: f64) -> ModalIntensities {
    let scale = (eta / 2.0).sqrt();
    let mu: Vec<f64> = modal
        .mu
        .iter()
        .map(|m| (m.sqrt().asinh() * scale).sinh().powi(2))
        .collect();
    let total = mu.iter().sum();
    ModalIntensities {
        mu,
        total,
        kind: modal.kind,
    }
}

/// Click probability of one relay detector fed by the interfered WCP and
/// heralded-SPDC fields:
/// `P(click) = 1 - (1-d_S) prod_i (1/(1+m_i))
///             [e^(-x_i/(1+m_i)) - (1-d_I) e^(-(1+eta_I m_i) x_i/(1+m_i))]`
/// with `x_i = eta |alpha c_i|^2 / 2` and `m_i` the effective per-arm
/// squeezing intensities of [`effective_bs_intensities`].
pub fn click_probability_path(
    alpha: Complex64,
    overlaps: &OverlapVector,
    modal_spdc: &ModalIntensities,
    local: &LocalDetector,
    relay: &RelayDetector,
    eta: f64,
) -> f64 {
    let eff = effective_bs_intensities(modal_spdc, eta);
    let a2 = alpha.norm_sqr();
    let mut prod = 1.0;
    for (c, &m) in overlaps.coefficients.iter().zip(&eff.mu) {
        let x = eta * a2 * c.norm_sqr() / 2.0;
        let vac = ((-x / (1.0 + m)).exp()
            - (1.0 - local.dark) * (-(1.0 + local.eta * m) * x / (1.0 + m)).exp())
            / (1.0 + m);
        prod *= vac;
    }
    1.0 - (1.0 - relay.dark) * prod
}

/// Lower bound on [`click_probability_path`] that holds for any coherent
/// amplitude and overlap vector: each per-mode vacuum-projection factor is
/// bounded by its maximum over the displacement, attained at
/// `x0 = ln[(1-d_I)(1+eta_I m)] / (eta_I m)`.
///
/// Pass the effective per-arm intensities (see
/// [`effective_bs_intensities`]) used by the exact expression.
pub fn visibility_lower_bound(
    modal: &ModalIntensities,
    local: &LocalDetector,
    relay: &RelayDetector,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &m in &modal.mu {
        let em = local.eta * m;
        let factor = if em > 0.0 && (1.0 - local.dark) * (1.0 + em) > 1.0 {
            em / ((1.0 + m) * (1.0 + em))
                * (1.0 / ((1.0 - local.dark) * (1.0 + em))).powf(1.0 / em)
        } else {
            // Maximizer hits the x >= 0 boundary; the factor degrades to
            // the dark-count floor.
            local.dark / (1.0 + m)
        };
        worst = worst.max(factor);
    }
    1.0 - (1.0 - relay.dark) * worst
}
