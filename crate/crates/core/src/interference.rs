//! Hong-Ou-Mandel coincidence calculators for a 50:50 beam splitter with
//! the convention `a -> (a+b)/sqrt(2)`, `b -> (a-b)/sqrt(2)`.
//!
//! Three input classes are covered: one photon per arm in distinct temporal
//! modes, two coherent pulses, and an SPDC photon pair described by its
//! joint spectral amplitude. Detectors are threshold detectors with zero
//! dark counts; efficiencies enter the closed forms directly.

use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

use crate::spectra::{
    JointSpectralAmplitude, SchmidtDecomposition, SpectraError, SpectralAmplitude,
};

#[derive(Debug, Clone, PartialEq)]
pub enum InterferenceError {
    /// Detector efficiencies must lie in [0, 1].
    InvalidEfficiency(f64),
    /// Mode overlaps are bounded by 1; anything above is a caller bug.
    OverlapAboveUnity(f64),
    /// The swapped-argument integral needs identical signal/idler grids.
    NonSquareGrids,
    Spectra(SpectraError),
}

impl core::fmt::Display for InterferenceError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            InterferenceError::InvalidEfficiency(e) => {
                write!(f, "detector efficiency {e} outside [0, 1]")
            }
            InterferenceError::OverlapAboveUnity(c) => {
                write!(f, "|c| = {c} exceeds 1 beyond tolerance")
            }
            InterferenceError::NonSquareGrids => write!(
                f,
                "SPDC coincidence requires identical signal and idler grids"
            ),
            InterferenceError::Spectra(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for InterferenceError {}

impl From<SpectraError> for InterferenceError {
    fn from(e: SpectraError) -> Self {
        InterferenceError::Spectra(e)
    }
}

/// The two threshold detectors behind the beam splitter outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorPair {
    pub eta1: f64,
    pub eta2: f64,
}

impl DetectorPair {
    pub fn new(eta1: f64, eta2: f64) -> Result<Self, InterferenceError> {
        for eta in [eta1, eta2] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(InterferenceError::InvalidEfficiency(eta));
            }
        }
        Ok(Self { eta1, eta2 })
    }

    pub const IDEAL: DetectorPair = DetectorPair {
        eta1: 1.0,
        eta2: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceResult {
    pub probability: f64,
    /// Optional per-mode contributions, when the input has modal structure.
    pub breakdown: Option<Vec<f64>>,
}

/// One photon per arm with mode overlap `c`:
/// `P(coin) = eta1 eta2 (1 - |c|^2) / 2`.
pub fn coincidence_single_photon(
    c: Complex64,
    det: &DetectorPair,
) -> Result<CoincidenceResult, InterferenceError> {
    let c2 = c.norm_sqr();
    if c2 > 1.0 + 1e-12 {
        return Err(InterferenceError::OverlapAboveUnity(c.norm()));
    }
    Ok(CoincidenceResult {
        probability: det.eta1 * det.eta2 * (1.0 - c2.min(1.0)) / 2.0,
        breakdown: None,
    })
}

/// Coherent pulses `alpha`, `beta` with mode overlap `c`. The output arms
/// carry mean photon numbers
/// `mu_a = |alpha + beta c|^2/2 + |beta|^2 (1-|c|^2)/2` (and `-` for `mu_b`),
/// giving `P(coin) = (1 - e^(-eta1 mu_a)) (1 - e^(-eta2 mu_b))`.
pub fn coincidence_coherent(
    alpha: Complex64,
    beta: Complex64,
    c: Complex64,
    det: &DetectorPair,
) -> Result<CoincidenceResult, InterferenceError> {
    let c2 = c.norm_sqr();
    if c2 > 1.0 + 1e-12 {
        return Err(InterferenceError::OverlapAboveUnity(c.norm()));
    }
    let orthogonal = beta.norm_sqr() * (1.0 - c2.min(1.0)) / 2.0;
    let mu_a = (alpha + beta * c).norm_sqr() / 2.0 + orthogonal;
    let mu_b = (alpha - beta * c).norm_sqr() / 2.0 + orthogonal;
    Ok(CoincidenceResult {
        probability: (-(-det.eta1 * mu_a).exp_m1()) * (-(-det.eta2 * mu_b).exp_m1()),
        breakdown: None,
    })
}

/// SPDC photon pair on the two arms, ideal detectors:
/// `P(coin) = 1/2 - 1/2 int int f*(w2, w1) f(w1, w2) dw1 dw2`
/// evaluated by grid quadrature.
pub fn coincidence_spdc_pair(
    jsa: &JointSpectralAmplitude,
) -> Result<CoincidenceResult, InterferenceError> {
    if jsa.signal_grid() != jsa.idler_grid() {
        return Err(InterferenceError::NonSquareGrids);
    }
    let n = jsa.signal_grid().points();
    let w = jsa.signal_grid().step() * jsa.idler_grid().step();
    let mut swap = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            swap += jsa.value(j, i).conj() * jsa.value(i, j);
        }
    }
    let probability = 0.5 - 0.5 * (swap * w).re;
    Ok(CoincidenceResult {
        probability: probability.clamp(0.0, 1.0),
        breakdown: None,
    })
}

/// Same quantity through the Schmidt basis:
/// `1/2 - 1/2 sum_{m,n} sqrt(lambda_m lambda_n) (int psi_n phi_m^*) (int psi_m^* phi_n)`.
///
/// Kept as an algebraically independent route; implementations must agree
/// with [`coincidence_spdc_pair`] to 1e-8 on any normalized JSA.
pub fn schmidt_route_coincidence(
    sd: &SchmidtDecomposition,
) -> Result<f64, InterferenceError> {
    let n = sd.lambdas.len();
    let mut overlap_pm: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    // overlap_pm[m][n] = int phi_m^*(w) psi_n(w) dw
    for m in 0..n {
        let mut row = Vec::with_capacity(n);
        for k in 0..n {
            row.push(sd.idler_modes[m].inner(&sd.signal_modes[k])?);
        }
        overlap_pm.push(row);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..n {
        for k in 0..n {
            acc += (sd.lambdas[m] * sd.lambdas[k]).sqrt()
                * overlap_pm[m][k]
                * overlap_pm[k][m].conj();
        }
    }
    Ok(0.5 - 0.5 * acc.re)
}

/// Overlap with a relative delay, `c(tau) = int psi^*(w) phi(w) e^(i w tau) dw`.
pub fn delayed_overlap(
    a: &SpectralAmplitude,
    b: &SpectralAmplitude,
    tau: f64,
) -> Result<Complex64, InterferenceError> {
    if a.grid() != b.grid() {
        return Err(SpectraError::GridMismatch.into());
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for ((w, x), y) in a.grid().samples().zip(a.values()).zip(b.values()) {
        acc += x.conj() * y * Complex64::new(0.0, w * tau).exp();
    }
    Ok(acc * a.grid().step())
}

/// Single-photon HOM dip: coincidence probability versus delay.
pub fn hom_dip_scan(
    amp_a: &SpectralAmplitude,
    amp_b: &SpectralAmplitude,
    delays: &[f64],
    det: &DetectorPair,
) -> Result<Vec<(f64, f64)>, InterferenceError> {
    let mut out = Vec::with_capacity(delays.len());
    for &tau in delays {
        let c = delayed_overlap(amp_a, amp_b, tau)?;
        // Quadrature can push |c| a hair over 1 for identical pulses.
        let c = if c.norm_sqr() > 1.0 { c / c.norm() } else { c };
        out.push((tau, coincidence_single_photon(c, det)?.probability));
    }
    Ok(out)
}
