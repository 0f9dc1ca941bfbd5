//! Forward simulation of MDI-QKD observables and the finite-size GLLP key
//! rate.
//!
//! The untrusted relay is modeled as a polarization Bell-state measurement
//! with four threshold detectors (H/V behind each beam-splitter output).
//! Z-basis events follow which-path photon statistics: every arriving
//! photon routes independently through the splitter and the polarizing
//! stage, with misalignment flipping its polarization and dark counts
//! firing detectors on their own. Accepted patterns are the four
//! two-detector Bell signatures. X-basis single-photon-pair errors carry
//! the interference visibility of the two sources:
//! `e11_X = e_d + (1 - 2 e_d)(1 - V)/2` with
//! `V = |sum_i sqrt(w_A,i w_B,i) c_i|^2` over the shared temporal modes;
//! other X-basis photon-number cells are taken uncorrelated (error 1/2).
//! The whole model sits behind [`RelayModel`] so an alternative relay can
//! be substituted without touching the decoy or key-rate layers.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

use crate::decoy_finite::{
    lp_yield_bounds, Basis, DecoyError, DecoyObservations, IntensityClass, PairObservation,
    PhotonMixture, StatisticalModel, TailBound, YieldBounds,
};
use crate::photon_stats::{
    heralded_pnd_after_channel, spdc_mode_intensities, LocalDetector, ModalIntensities,
    PhotonNumberDistribution, PhotonStatsError, RelayDetector, SourceKind,
};
use crate::spectra::{overlap_coefficients, SchmidtDecomposition, SpectraError, SpectralAmplitude};
use crate::units::db_to_transmittance;

/// Error-correction inefficiency factor applied to the leaked information.
pub const F_EC: f64 = 1.16;

/// Photon-number cap used when assembling gains; tails beyond it are below
/// 1e-12 at the sub-photon intensities of the protocol.
pub const SIMULATION_N_CAP: usize = crate::photon_stats::DEFAULT_N_MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum KeyRateError {
    InvalidParams(&'static str),
    Decoy(DecoyError),
    Stats(PhotonStatsError),
    Spectra(SpectraError),
    EntropyDomain(f64),
}

impl core::fmt::Display for KeyRateError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            KeyRateError::InvalidParams(why) => write!(f, "invalid protocol parameters: {why}"),
            KeyRateError::Decoy(e) => write!(f, "{e}"),
            KeyRateError::Stats(e) => write!(f, "{e}"),
            KeyRateError::Spectra(e) => write!(f, "{e}"),
            KeyRateError::EntropyDomain(x) => {
                write!(f, "binary entropy argument {x} outside [0, 1]")
            }
        }
    }
}

impl core::error::Error for KeyRateError {}

impl From<DecoyError> for KeyRateError {
    fn from(e: DecoyError) -> Self {
        KeyRateError::Decoy(e)
    }
}

impl From<PhotonStatsError> for KeyRateError {
    fn from(e: PhotonStatsError) -> Self {
        KeyRateError::Stats(e)
    }
}

impl From<SpectraError> for KeyRateError {
    fn from(e: SpectraError) -> Self {
        KeyRateError::Spectra(e)
    }
}

// ---------------------------------------------------------------------------
// Protocol configuration types

/// Fiber channel and relay hardware. Distances are per arm; the relay
/// detector efficiency is folded into each arm's transmittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub distance_a_km: f64,
    pub distance_b_km: f64,
    pub attenuation_db_per_km: f64,
    pub relay: RelayDetector,
    /// Misalignment error probability, in [0, 0.5].
    pub misalignment: f64,
}

impl ChannelParams {
    pub fn transmittance_a(&self) -> f64 {
        db_to_transmittance(self.attenuation_db_per_km * self.distance_a_km) * self.relay.eta
    }

    pub fn transmittance_b(&self) -> f64 {
        db_to_transmittance(self.attenuation_db_per_km * self.distance_b_km) * self.relay.eta
    }
}

/// One party's intensities and basis-selection probabilities. The
/// remainder `1 - sum of the four probabilities` is the vacuum-decoy
/// probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyParams {
    pub decoy: f64,
    pub signal: f64,
    pub p_z_signal: f64,
    pub p_z_decoy: f64,
    pub p_x_signal: f64,
    pub p_x_decoy: f64,
}

impl PartyParams {
    pub fn vacuum_prob(&self) -> f64 {
        1.0 - self.p_z_signal - self.p_z_decoy - self.p_x_signal - self.p_x_decoy
    }

    pub fn validate(&self) -> Result<(), KeyRateError> {
        let probs = [
            self.p_z_signal,
            self.p_z_decoy,
            self.p_x_signal,
            self.p_x_decoy,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(KeyRateError::InvalidParams("probability outside [0, 1]"));
        }
        if self.vacuum_prob() < -1e-12 {
            return Err(KeyRateError::InvalidParams(
                "basis/intensity probabilities exceed 1",
            ));
        }
        if !(self.signal > 0.0) {
            return Err(KeyRateError::InvalidParams("signal intensity must be positive"));
        }
        if !(0.0..1.0).contains(&(self.decoy / self.signal)) {
            return Err(KeyRateError::InvalidParams("decoy must satisfy 0 <= nu < mu"));
        }
        Ok(())
    }

    fn selection_prob(&self, basis: Basis, class: IntensityClass) -> f64 {
        match (basis, class) {
            (Basis::Z, IntensityClass::Signal) => self.p_z_signal,
            (Basis::Z, IntensityClass::Decoy) => self.p_z_decoy,
            (Basis::X, IntensityClass::Signal) => self.p_x_signal,
            (Basis::X, IntensityClass::Decoy) => self.p_x_decoy,
            // Vacuum pulses carry no basis; the same pool serves both LPs.
            (_, IntensityClass::Vacuum) => self.vacuum_prob().max(0.0),
        }
    }

    pub fn intensity(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.signal,
            IntensityClass::Decoy => self.decoy,
            IntensityClass::Vacuum => 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.decoy,
            self.signal,
            self.p_z_decoy,
            self.p_z_signal,
            self.p_x_decoy,
            self.p_x_signal,
        ]
    }

    pub fn from_array(x: &[f64]) -> Self {
        Self {
            decoy: x[0],
            signal: x[1],
            p_z_decoy: x[2],
            p_z_signal: x[3],
            p_x_decoy: x[4],
            p_x_signal: x[5],
        }
    }
}

/// The 12 optimizable protocol parameters (6 per party).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub a: PartyParams,
    pub b: PartyParams,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), KeyRateError> {
        self.a.validate()?;
        self.b.validate()
    }

    /// Packs to the optimizer layout: `[a; 6]` then `[b; 6]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(12);
        v.extend_from_slice(&self.a.as_array());
        v.extend_from_slice(&self.b.as_array());
        v
    }

    /// Reads either a 12-vector or, for symmetric scenarios, a 6-vector
    /// applied to both parties.
    pub fn from_vector(x: &[f64]) -> Self {
        match x.len() {
            6 => Self {
                a: PartyParams::from_array(x),
                b: PartyParams::from_array(x),
            },
            12 => Self {
                a: PartyParams::from_array(&x[..6]),
                b: PartyParams::from_array(&x[6..]),
            },
            n => panic!("parameter vector must have 6 or 12 entries, got {n}"),
        }
    }
}

/// Total number of pulse pairs sent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentScale {
    pub n_tot: f64,
}

impl ExperimentScale {
    pub fn new(n_tot: f64) -> Result<Self, KeyRateError> {
        if !(n_tot >= 1.0) {
            return Err(KeyRateError::InvalidParams("data size below one pulse pair"));
        }
        Ok(Self { n_tot })
    }
}

// ---------------------------------------------------------------------------
// Sources

/// Photon-number statistics of one party's source.
#[derive(Debug, Clone)]
pub enum SourceStats {
    /// Weak coherent pulses: Poissonian at every intensity.
    Wcp,
    /// Heralded SPDC with the given Schmidt weights; the local detector
    /// heralds on the idler arm. Intensities are pre-heralding pair means.
    HeraldedSpdc {
        lambdas: Vec<f64>,
        local: LocalDetector,
    },
}

impl SourceStats {
    /// Post-channel photon-number probabilities at the relay. For the
    /// heralded source the vector is joint with the trigger, hence
    /// sub-normalized; the missing mass is untriggered rounds plus tails.
    pub fn post_channel_probs(
        &self,
        intensity: f64,
        eta: f64,
        n_cap: usize,
    ) -> Result<Vec<f64>, KeyRateError> {
        match self {
            SourceStats::Wcp => {
                Ok(PhotonNumberDistribution::poisson(eta * intensity, n_cap).probs)
            }
            SourceStats::HeraldedSpdc { lambdas, local } => {
                let modal = if intensity > 0.0 {
                    spdc_mode_intensities(lambdas, intensity)
                } else {
                    ModalIntensities {
                        mu: vec![0.0; lambdas.len()],
                        total: 0.0,
                        kind: SourceKind::Spdc,
                    }
                };
                let (_, pnd, _) = heralded_pnd_after_channel(&modal, local, eta, n_cap)?;
                Ok(pnd.probs)
            }
        }
    }

    fn mixture(&self, party: &PartyParams, eta: f64, n_cap: usize) -> Result<PhotonMixture, KeyRateError> {
        Ok(PhotonMixture {
            probs: [
                self.post_channel_probs(party.intensity(IntensityClass::Signal), eta, n_cap)?,
                self.post_channel_probs(party.intensity(IntensityClass::Decoy), eta, n_cap)?,
                self.post_channel_probs(0.0, eta, n_cap)?,
            ],
        })
    }
}

/// Interference visibility of two sources' shared temporal-mode structure,
/// `V = |sum_i sqrt(w_A,i w_B,i) c_i|^2` with unit-modulus per-mode
/// overlaps `c_i`.
pub fn interference_visibility(
    weights_a: &[f64],
    weights_b: &[f64],
    mode_overlap: &[Complex64],
) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for ((wa, wb), c) in weights_a.iter().zip(weights_b).zip(mode_overlap) {
        acc += (wa * wb).max(0.0).sqrt() * c;
    }
    acc.norm_sqr().min(1.0)
}

/// A pair of sources plus their mutual interference visibility.
#[derive(Debug, Clone)]
pub struct SourcePair {
    pub a: SourceStats,
    pub b: SourceStats,
    pub visibility: f64,
}

impl SourcePair {
    /// Two identical WCP sources: perfect mode matching.
    pub fn symmetric_wcp() -> Self {
        Self {
            a: SourceStats::Wcp,
            b: SourceStats::Wcp,
            visibility: 1.0,
        }
    }

    /// Two identical heralded SPDC sources: perfect mode matching.
    pub fn symmetric_spdc(lambdas: Vec<f64>, local: LocalDetector) -> Self {
        Self {
            a: SourceStats::HeraldedSpdc {
                lambdas: lambdas.clone(),
                local,
            },
            b: SourceStats::HeraldedSpdc { lambdas, local },
            visibility: 1.0,
        }
    }

    /// Heralded SPDC (party A) against a WCP (party B) whose spectrum is
    /// decomposed on the SPDC signal modes. The per-mode weights are the
    /// normalized Schmidt spectrum on one side and `|c_i|^2` (with the
    /// orthogonal complement absorbing the rest) on the other, giving
    /// `V = |sum_i sqrt(w_A,i) c_i|^2`.
    pub fn wcp_onto_spdc(
        sd: &SchmidtDecomposition,
        wcp: &SpectralAmplitude,
        local: LocalDetector,
    ) -> Result<Self, KeyRateError> {
        let ov = overlap_coefficients(wcp, &sd.signal_modes)?;
        let weights_a = sd.normalized_weights();
        let weights_b: Vec<f64> = ov.coefficients.iter().map(|c| c.norm_sqr()).collect();
        let phases: Vec<Complex64> = ov
            .coefficients
            .iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    c / n
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let visibility = interference_visibility(&weights_a, &weights_b, &phases);
        Ok(Self {
            a: SourceStats::HeraldedSpdc {
                lambdas: sd.lambdas.clone(),
                local,
            },
            b: SourceStats::Wcp,
            visibility,
        })
    }
}

// ---------------------------------------------------------------------------
// Relay model

/// Conditional Bell-state-measurement behavior given the photon numbers
/// arriving from the two parties.
pub trait RelayModel {
    /// Returns `(yield, error fraction)` for `m` photons from A and `n`
    /// from B in the given basis.
    fn yield_and_error(&self, basis: Basis, m: usize, n: usize) -> (f64, f64);
}

/// Which-path threshold-detector relay described in the module docs.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdRelay {
    pub dark: f64,
    pub misalignment: f64,
    pub visibility: f64,
}

// Detector order: D1H, D1V, D2H, D2V. Accepted two-detector patterns:
// {D1H,D1V}, {D2H,D2V} (psi+), {D1H,D2V}, {D1V,D2H} (psi-).
const ACCEPTED_SETS: [[usize; 2]; 4] = [[0, 1], [2, 3], [0, 3], [1, 2]];

impl ThresholdRelay {
    /// Landing probabilities of one photon over the four detectors for a
    /// Z-encoded bit (H for 0, V for 1) with polarization flip probability
    /// `e_d`; each photon picks a splitter port uniformly.
    fn z_landing(&self, bit: u8) -> [f64; 4] {
        let p_h = if bit == 0 {
            1.0 - self.misalignment
        } else {
            self.misalignment
        };
        let p_v = 1.0 - p_h;
        [p_h / 2.0, p_v / 2.0, p_h / 2.0, p_v / 2.0]
    }

    /// Probability that exactly the accepted pattern `set` clicks, given
    /// landing distributions `qa`, `qb` for the `m` and `n` photons and
    /// independent dark counts.
    ///
    /// Decomposed by the exact subset `C` of `set` that receives photons:
    /// detectors in `set \ C` click through darks and everything outside
    /// stays silent. Factoring the dark powers out keeps the tiny
    /// dark-count terms exact instead of burying them in near-1
    /// cancellations.
    fn exact_pattern_prob(&self, set: [usize; 2], qa: &[f64; 4], qb: &[f64; 4], m: usize, n: usize) -> f64 {
        // w(T): all A photons land within T and all B photons land within T
        // (subsets encoded over the two slots of `set`).
        let w = |mask: u8| -> f64 {
            let mut sa = 0.0;
            let mut sb = 0.0;
            for (slot, &d) in set.iter().enumerate() {
                if mask & (1 << slot) != 0 {
                    sa += qa[d];
                    sb += qb[d];
                }
            }
            sa.powi(m as i32) * sb.powi(n as i32)
        };
        let mut prob = 0.0;
        for c_mask in 0..4u8 {
            // P(photon-hit set is exactly C) over subsets T of C.
            let mut exactly_c = 0.0;
            let mut t = c_mask;
            loop {
                let parity = (c_mask.count_ones() - t.count_ones()) % 2;
                let sign = if parity == 0 { 1.0 } else { -1.0 };
                exactly_c += sign * w(t);
                if t == 0 {
                    break;
                }
                t = (t - 1) & c_mask;
            }
            let dark_fills = 2 - c_mask.count_ones() as i32;
            prob += exactly_c.max(0.0) * self.dark.powi(dark_fills);
        }
        prob * (1.0 - self.dark) * (1.0 - self.dark)
    }

    fn accepted_prob(&self, qa: &[f64; 4], qb: &[f64; 4], m: usize, n: usize) -> f64 {
        ACCEPTED_SETS
            .iter()
            .map(|&s| self.exact_pattern_prob(s, qa, qb, m, n))
            .sum()
    }
}

impl RelayModel for ThresholdRelay {
    fn yield_and_error(&self, basis: Basis, m: usize, n: usize) -> (f64, f64) {
        match basis {
            Basis::Z => {
                // Average over the four equally likely bit pairs; accepted
                // patterns announce anti-correlated bits, so equal-bit
                // acceptances are errors.
                let mut y = 0.0;
                let mut ye = 0.0;
                for bit_a in 0..2u8 {
                    for bit_b in 0..2u8 {
                        let p = self.accepted_prob(
                            &self.z_landing(bit_a),
                            &self.z_landing(bit_b),
                            m,
                            n,
                        ) / 4.0;
                        y += p;
                        if bit_a == bit_b {
                            ye += p;
                        }
                    }
                }
                (y, if y > 0.0 { ye / y } else { 0.0 })
            }
            Basis::X => {
                // X-encoded photons split evenly over H/V, so which-path
                // statistics are bit-independent; correlations live in the
                // interference term, applied to the single-photon-pair cell.
                let q = [0.25; 4];
                let y = self.accepted_prob(&q, &q, m, n);
                let e = if (m, n) == (1, 1) {
                    self.misalignment
                        + (1.0 - 2.0 * self.misalignment) * (1.0 - self.visibility) / 2.0
                } else {
                    0.5
                };
                (y, e)
            }
        }
    }
}

/// Explicit yield/error tables; doubles as the planted-yield test hook and
/// as a cache for any other [`RelayModel`].
#[derive(Debug, Clone)]
pub struct YieldTable {
    pub y: [Vec<Vec<f64>>; 2],
    pub e: [Vec<Vec<f64>>; 2],
}

impl YieldTable {
    pub fn tabulate(model: &impl RelayModel, n_cap: usize) -> Self {
        let mut y = [
            vec![vec![0.0; n_cap + 1]; n_cap + 1],
            vec![vec![0.0; n_cap + 1]; n_cap + 1],
        ];
        let mut e = y.clone();
        for (bi, basis) in [Basis::Z, Basis::X].into_iter().enumerate() {
            for m in 0..=n_cap {
                for n in 0..=n_cap {
                    let (yy, ee) = model.yield_and_error(basis, m, n);
                    y[bi][m][n] = yy;
                    e[bi][m][n] = ee;
                }
            }
        }
        Self { y, e }
    }

    fn basis_index(basis: Basis) -> usize {
        match basis {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

impl RelayModel for YieldTable {
    fn yield_and_error(&self, basis: Basis, m: usize, n: usize) -> (f64, f64) {
        let b = Self::basis_index(basis);
        (self.y[b][m][n], self.e[b][m][n])
    }
}

// ---------------------------------------------------------------------------
// Simulation and key rate

/// Assembles gains `Q_ab = sum_{m,n} P_a(m) P_b(n) Y_mn`, error products
/// and pulse counts for every basis and intensity pair.
pub fn simulate_observables(
    pair: &SourcePair,
    channel: &ChannelParams,
    params: &ProtocolParams,
    scale: &ExperimentScale,
    relay: &impl RelayModel,
    n_cap: usize,
) -> Result<DecoyObservations, KeyRateError> {
    params.validate()?;
    let eta_a = channel.transmittance_a();
    let eta_b = channel.transmittance_b();
    let mix_a = pair.a.mixture(&params.a, eta_a, n_cap)?;
    let mix_b = pair.b.mixture(&params.b, eta_b, n_cap)?;

    let mut obs = DecoyObservations::default();
    for basis in [Basis::Z, Basis::X] {
        for a in IntensityClass::ALL {
            for b in IntensityClass::ALL {
                let mut gain = 0.0;
                let mut err_gain = 0.0;
                for m in 0..=n_cap {
                    let pa = mix_a.prob(a, m);
                    if pa == 0.0 {
                        continue;
                    }
                    for n in 0..=n_cap {
                        let pb = mix_b.prob(b, n);
                        if pb == 0.0 {
                            continue;
                        }
                        let (y, e) = relay.yield_and_error(basis, m, n);
                        gain += pa * pb * y;
                        err_gain += pa * pb * y * e;
                    }
                }
                let pulses = scale.n_tot
                    * params.a.selection_prob(basis, a)
                    * params.b.selection_prob(basis, b);
                let slot = match basis {
                    Basis::Z => obs.z.get_mut(a, b),
                    Basis::X => obs.x.get_mut(a, b),
                };
                *slot = PairObservation {
                    pulses,
                    gain,
                    error_rate: if gain > 0.0 { err_gain / gain } else { 0.0 },
                };
            }
        }
    }
    Ok(obs)
}

/// Binary Shannon entropy, `H2(x) = -x log2 x - (1-x) log2 (1-x)`.
pub fn binary_entropy(x: f64) -> Result<f64, KeyRateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(KeyRateError::EntropyDomain(x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Why a key rate was clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroReason {
    /// The phase-error bound reached 1/2; privacy amplification consumes
    /// everything.
    PhaseErrorAboveHalf,
    /// Yield bounds degenerated (no single-photon statistics survive).
    DegenerateBounds,
    /// Error-correction leakage exceeds the privacy-amplified yield.
    NegativeRaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateResult {
    /// Secret bits per pulse pair, clamped at zero.
    pub rate: f64,
    /// Unclamped value, for diagnostics.
    pub raw_rate: f64,
    pub q_z_signal: f64,
    pub e_z_signal: f64,
    pub bounds: YieldBounds,
    pub p1_a: f64,
    pub p1_b: f64,
    pub privacy_term: f64,
    pub leak_term: f64,
    pub zero_reason: Option<ZeroReason>,
}

/// GLLP rate
/// `R = pZ_A pZ_B { P_A(1) P_B(1) Y11 [1 - H2(e11)] - Q f H2(E) }`,
/// with `Y11` the Z-basis observed lower bound and `e11` the X-basis
/// phase-error upper bound.
pub fn key_rate(
    obs: &DecoyObservations,
    bounds: &YieldBounds,
    params: &ProtocolParams,
    p1_a: f64,
    p1_b: f64,
) -> Result<KeyRateResult, KeyRateError> {
    let signal = obs.z.get(IntensityClass::Signal, IntensityClass::Signal);
    let q = signal.gain;
    let e = signal.error_rate;

    let e11 = bounds.e11_upper;
    let privacy = p1_a * p1_b * bounds.y11_lower * (1.0 - binary_entropy(e11.min(1.0))?);
    let leak = q * F_EC * binary_entropy(e)?;
    let prefactor = params.a.p_z_signal * params.b.p_z_signal;
    let raw = prefactor * (privacy - leak);

    let zero_reason = if bounds.degenerate {
        Some(ZeroReason::DegenerateBounds)
    } else if e11 >= 0.5 {
        Some(ZeroReason::PhaseErrorAboveHalf)
    } else if raw <= 0.0 {
        Some(ZeroReason::NegativeRaw)
    } else {
        None
    };
    let rate = if zero_reason.is_some() { 0.0 } else { raw };
    Ok(KeyRateResult {
        rate,
        raw_rate: raw,
        q_z_signal: q,
        e_z_signal: e,
        bounds: *bounds,
        p1_a,
        p1_b,
        privacy_term: privacy,
        leak_term: leak,
        zero_reason,
    })
}

/// End-to-end pipeline: simulate observables, run the decoy bounds, apply
/// GLLP. Deterministic for identical inputs.
pub fn rate_at(
    pair: &SourcePair,
    channel: &ChannelParams,
    params: &ProtocolParams,
    scale: &ExperimentScale,
    relay: &impl RelayModel,
    stat: StatisticalModel,
    n_max: usize,
) -> Result<KeyRateResult, KeyRateError> {
    let obs = simulate_observables(pair, channel, params, scale, relay, SIMULATION_N_CAP)?;
    let eta_a = channel.transmittance_a();
    let eta_b = channel.transmittance_b();
    let mix_a = pair.a.mixture(&params.a, eta_a, SIMULATION_N_CAP)?;
    let mix_b = pair.b.mixture(&params.b, eta_b, SIMULATION_N_CAP)?;
    let truncate = |m: &PhotonMixture| PhotonMixture {
        probs: [
            m.probs[0][..=n_max].into(),
            m.probs[1][..=n_max].into(),
            m.probs[2][..=n_max].into(),
        ],
    };
    let bounds = lp_yield_bounds(&obs, &truncate(&mix_a), &truncate(&mix_b), stat, n_max)?;
    let p1_a = mix_a.prob(IntensityClass::Signal, 1);
    let p1_b = mix_b.prob(IntensityClass::Signal, 1);
    key_rate(&obs, &bounds, params, p1_a, p1_b)
}

// ---------------------------------------------------------------------------
// Scenario bundle

/// Finite-size configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSize {
    pub n_tot: f64,
    pub xi: f64,
    pub n_max: usize,
    /// Replace all statistical fluctuation handling with expected values.
    pub asymptotic: bool,
}

impl FiniteSize {
    pub fn statistical_model(&self) -> Result<StatisticalModel, KeyRateError> {
        if self.asymptotic {
            Ok(StatisticalModel::Asymptotic)
        } else {
            Ok(StatisticalModel::Finite(TailBound::new(self.xi)?))
        }
    }
}

/// Everything fixed for one communication scenario: sources, channel
/// hardware, finite-size settings and the distance split between arms.
/// Only the total distance and the protocol parameters vary per call.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub pair: SourcePair,
    pub attenuation_db_per_km: f64,
    pub relay: RelayDetector,
    pub misalignment: f64,
    pub finite: FiniteSize,
    /// Fraction of the total distance on party A's arm.
    pub split: f64,
    tables: YieldTable,
}

impl Scenario {
    pub fn new(
        pair: SourcePair,
        attenuation_db_per_km: f64,
        relay: RelayDetector,
        misalignment: f64,
        finite: FiniteSize,
        split: f64,
    ) -> Self {
        let relay_model = ThresholdRelay {
            dark: relay.dark,
            misalignment,
            visibility: pair.visibility,
        };
        let tables = YieldTable::tabulate(&relay_model, SIMULATION_N_CAP);
        Self {
            pair,
            attenuation_db_per_km,
            relay,
            misalignment,
            finite,
            split,
            tables,
        }
    }

    pub fn channel_at(&self, distance_km: f64) -> ChannelParams {
        ChannelParams {
            distance_a_km: distance_km * self.split,
            distance_b_km: distance_km * (1.0 - self.split),
            attenuation_db_per_km: self.attenuation_db_per_km,
            relay: self.relay,
            misalignment: self.misalignment,
        }
    }

    pub fn rate_at(
        &self,
        distance_km: f64,
        params: &ProtocolParams,
    ) -> Result<KeyRateResult, KeyRateError> {
        self.rate_at_scale(distance_km, params, self.finite.n_tot, self.finite.asymptotic)
    }

    pub fn rate_at_scale(
        &self,
        distance_km: f64,
        params: &ProtocolParams,
        n_tot: f64,
        asymptotic: bool,
    ) -> Result<KeyRateResult, KeyRateError> {
        let finite = FiniteSize {
            n_tot,
            asymptotic,
            ..self.finite
        };
        rate_at(
            &self.pair,
            &self.channel_at(distance_km),
            params,
            &ExperimentScale::new(n_tot)?,
            &self.tables,
            finite.statistical_model()?,
            self.finite.n_max,
        )
    }

    /// Objective for the optimizer: zero for infeasible or failed points.
    pub fn objective_rate(&self, distance_km: f64, x: &[f64]) -> f64 {
        let params = ProtocolParams::from_vector(x);
        match self.rate_at(distance_km, &params) {
            Ok(r) => r.rate,
            Err(_) => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::SmallRng;

    fn paper_channel(distance: f64) -> ChannelParams {
        ChannelParams {
            distance_a_km: distance / 2.0,
            distance_b_km: distance / 2.0,
            attenuation_db_per_km: 0.2,
            relay: RelayDetector { eta: 0.6, dark: 1e-6 },
            misalignment: 0.015,
        }
    }

    fn plausible_params() -> ProtocolParams {
        ProtocolParams {
            a: PartyParams {
                decoy: 0.05,
                signal: 0.45,
                p_z_signal: 0.6,
                p_z_decoy: 0.1,
                p_x_signal: 0.05,
                p_x_decoy: 0.15,
            },
            b: PartyParams {
                decoy: 0.06,
                signal: 0.5,
                p_z_signal: 0.6,
                p_z_decoy: 0.1,
                p_x_signal: 0.05,
                p_x_decoy: 0.15,
            },
        }
    }

    #[test]
    fn ideal_single_photon_pair_yield_is_half() {
        let relay = ThresholdRelay {
            dark: 0.0,
            misalignment: 0.0,
            visibility: 1.0,
        };
        let (y, e) = relay.yield_and_error(Basis::Z, 1, 1);
        assert!((y - 0.5).abs() < 1e-15, "Z yield {y}");
        assert_eq!(e, 0.0);
        let (y, e) = relay.yield_and_error(Basis::X, 1, 1);
        assert!((y - 0.5).abs() < 1e-15, "X yield {y}");
        assert_eq!(e, 0.0);
    }

    #[test]
    fn vacuum_pair_yield_is_dark_coincidence_with_half_error() {
        let d = 1e-6;
        let relay = ThresholdRelay {
            dark: d,
            misalignment: 0.015,
            visibility: 1.0,
        };
        let (y, e) = relay.yield_and_error(Basis::Z, 0, 0);
        let expect = 4.0 * d * d * (1.0 - d) * (1.0 - d);
        assert!((y - expect).abs() < 1e-18, "{y} vs {expect}");
        assert!((e - 0.5).abs() < 1e-9);
        let (_, e) = relay.yield_and_error(Basis::X, 0, 0);
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn z_errors_are_driven_by_misalignment() {
        let relay = ThresholdRelay {
            dark: 0.0,
            misalignment: 0.015,
            visibility: 1.0,
        };
        let (y, e) = relay.yield_and_error(Basis::Z, 1, 1);
        // Misalignment moves acceptances between the equal-bit and
        // opposite-bit sectors; the total stays exactly 1/2.
        assert!((y - 0.5).abs() < 1e-15, "Z yield {y}");
        // Error fraction 2 e_d (1 - e_d).
        assert!((e - 2.0 * 0.015 * (1.0 - 0.015)).abs() < 1e-12, "Z error {e}");
    }

    #[test]
    fn x_error_carries_visibility() {
        let relay = ThresholdRelay {
            dark: 1e-6,
            misalignment: 0.015,
            visibility: 0.8,
        };
        let (_, e) = relay.yield_and_error(Basis::X, 1, 1);
        let expect = 0.015 + (1.0 - 0.03) * 0.2 / 2.0;
        assert!((e - expect).abs() < 1e-12);
        let (_, e) = relay.yield_and_error(Basis::X, 2, 1);
        assert_eq!(e, 0.5);
    }

    #[test]
    fn planted_table_reproduces_double_sums() {
        let mut rng = SmallRng::new(0xFACE);
        let n_cap = 8;
        let mut y = [
            alloc::vec![alloc::vec![0.0; n_cap + 1]; n_cap + 1],
            alloc::vec![alloc::vec![0.0; n_cap + 1]; n_cap + 1],
        ];
        let mut e = y.clone();
        for b in 0..2 {
            for m in 0..=n_cap {
                for n in 0..=n_cap {
                    y[b][m][n] = rng.next_f64();
                    e[b][m][n] = 0.5 * rng.next_f64();
                }
            }
        }
        let table = YieldTable { y: y.clone(), e: e.clone() };
        let pair = SourcePair::symmetric_wcp();
        let params = plausible_params();
        let channel = paper_channel(10.0);
        let scale = ExperimentScale::new(1e12).unwrap();
        let obs =
            simulate_observables(&pair, &channel, &params, &scale, &table, n_cap).unwrap();

        let eta_a = channel.transmittance_a();
        let eta_b = channel.transmittance_b();
        for (a, mu_a) in [(IntensityClass::Signal, 0.45), (IntensityClass::Decoy, 0.05)] {
            for (b, mu_b) in [(IntensityClass::Signal, 0.5), (IntensityClass::Decoy, 0.06)] {
                let pa = PhotonNumberDistribution::poisson(eta_a * mu_a, n_cap).probs;
                let pb = PhotonNumberDistribution::poisson(eta_b * mu_b, n_cap).probs;
                let mut q = 0.0;
                let mut eq = 0.0;
                for m in 0..=n_cap {
                    for n in 0..=n_cap {
                        q += pa[m] * pb[n] * y[0][m][n];
                        eq += pa[m] * pb[n] * y[0][m][n] * e[0][m][n];
                    }
                }
                let got = obs.z.get(a, b);
                assert!((got.gain - q).abs() < 1e-15);
                assert!((got.error_rate - eq / q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selection_probabilities_scale_counts() {
        let pair = SourcePair::symmetric_wcp();
        let params = plausible_params();
        let channel = paper_channel(0.0);
        let scale = ExperimentScale::new(1e10).unwrap();
        let relay = ThresholdRelay {
            dark: 1e-6,
            misalignment: 0.015,
            visibility: 1.0,
        };
        let table = YieldTable::tabulate(&relay, SIMULATION_N_CAP);
        let obs = simulate_observables(&pair, &channel, &params, &scale, &table, SIMULATION_N_CAP)
            .unwrap();
        let zss = obs.z.get(IntensityClass::Signal, IntensityClass::Signal);
        assert!((zss.pulses - 1e10 * 0.6 * 0.6).abs() < 1.0);
        let vac = obs.x.get(IntensityClass::Vacuum, IntensityClass::Vacuum);
        let pv = params.a.vacuum_prob() * params.b.vacuum_prob();
        assert!((vac.pulses - 1e10 * pv).abs() < 1.0);
        // Vacuum-vacuum gains are dark-count coincidences at error 1/2.
        assert!(vac.gain < 1e-10);
        assert!((vac.error_rate - 0.5).abs() < 1e-6);
    }

    #[test]
    fn entropy_reference_points() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.11).unwrap() - 0.4999).abs() < 1e-3);
        assert!(matches!(
            binary_entropy(1.2),
            Err(KeyRateError::EntropyDomain(_))
        ));
    }

    #[test]
    fn key_rate_limit_cases() {
        let mut obs = DecoyObservations::default();
        for a in IntensityClass::ALL {
            for b in IntensityClass::ALL {
                *obs.z.get_mut(a, b) = PairObservation {
                    pulses: 1e12,
                    gain: 0.02,
                    error_rate: 0.0,
                };
                *obs.x.get_mut(a, b) = PairObservation {
                    pulses: 1e12,
                    gain: 0.02,
                    error_rate: 0.0,
                };
            }
        }
        let params = plausible_params();
        let (p1a, p1b) = (0.3, 0.28);

        // Phase error at 1/2 destroys the key.
        let bounds = YieldBounds {
            y11_lower: 0.4,
            e11y11_upper: 0.2,
            y11_x_lower: 0.4,
            e11_upper: 0.5,
            degenerate: false,
        };
        let r = key_rate(&obs, &bounds, &params, p1a, p1b).unwrap();
        assert_eq!(r.rate, 0.0);
        assert_eq!(r.zero_reason, Some(ZeroReason::PhaseErrorAboveHalf));

        // Noiseless: R = pZ pZ * (P1 P1 Y11) with Y11 = Q/(P1 P1): R = p p Q.
        let q = 0.02;
        let bounds = YieldBounds {
            y11_lower: q / (p1a * p1b),
            e11y11_upper: 0.0,
            y11_x_lower: q / (p1a * p1b),
            e11_upper: 0.0,
            degenerate: false,
        };
        let r = key_rate(&obs, &bounds, &params, p1a, p1b).unwrap();
        let expect = params.a.p_z_signal * params.b.p_z_signal * q;
        assert!((r.rate - expect).abs() < 1e-15);
    }

    fn ww_scenario(n_tot: f64, asymptotic: bool) -> Scenario {
        Scenario::new(
            SourcePair::symmetric_wcp(),
            0.2,
            RelayDetector { eta: 0.6, dark: 1e-6 },
            0.015,
            FiniteSize {
                n_tot,
                xi: 1e-7,
                n_max: 6,
                asymptotic,
            },
            0.5,
        )
    }

    #[test]
    fn pipeline_produces_positive_rate_at_short_distance() {
        let sc = ww_scenario(1e12, false);
        let r = sc.rate_at(10.0, &plausible_params()).unwrap();
        assert!(r.rate > 0.0, "rate {:?}", r.rate);
        assert!(r.e_z_signal < 0.1, "Z QBER {}", r.e_z_signal);
        assert!(r.bounds.y11_lower > 0.1);
        assert!(r.bounds.e11_upper < 0.2);
    }

    #[test]
    fn rate_degrades_monotonically_with_loss() {
        let sc = ww_scenario(1e12, false);
        let params = plausible_params();
        let mut prev = f64::INFINITY;
        for d in [0.0, 20.0, 40.0, 60.0, 80.0] {
            let r = sc.rate_at(d, &params).unwrap().rate;
            assert!(r <= prev + 1e-12, "rate rose from {prev} to {r} at {d} km");
            prev = r;
        }
    }

    #[test]
    fn finite_size_penalty_ordering() {
        let params = plausible_params();
        let r9 = ww_scenario(1e9, false).rate_at(10.0, &params).unwrap().rate;
        let r12 = ww_scenario(1e12, false).rate_at(10.0, &params).unwrap().rate;
        let ra = ww_scenario(1e12, true).rate_at(10.0, &params).unwrap().rate;
        assert!(r9 <= r12 + 1e-15, "{r9} > {r12}");
        assert!(r12 <= ra + 1e-15, "{r12} > {ra}");
        assert!(ra > 0.0);
    }

    #[test]
    fn heralded_source_pipeline_runs() {
        let lambdas = alloc::vec![0.78, 0.17, 0.037, 0.008, 0.003, 0.002];
        let local = LocalDetector { eta: 0.9, dark: 1e-6 };
        let sc = Scenario::new(
            SourcePair::symmetric_spdc(lambdas, local),
            0.2,
            RelayDetector { eta: 0.6, dark: 1e-6 },
            0.015,
            FiniteSize {
                n_tot: 1e12,
                xi: 1e-7,
                n_max: 6,
                asymptotic: false,
            },
            0.5,
        );
        let r = sc.rate_at(5.0, &plausible_params()).unwrap();
        // Heralding suppresses the gain relative to W-W at short distance.
        let ww = ww_scenario(1e12, false).rate_at(5.0, &plausible_params()).unwrap();
        assert!(r.rate > 0.0);
        assert!(r.rate < ww.rate);
        assert!(r.q_z_signal < ww.q_z_signal);
    }

    #[test]
    fn visibility_formula_matches_definition() {
        let wa = [0.8, 0.15, 0.05];
        let wb = [0.9, 0.1, 0.0];
        let ph = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(1.0, 0.0),
        ];
        let v = interference_visibility(&wa, &wb, &ph);
        let expect = Complex64::new((0.8f64 * 0.9).sqrt(), (0.15f64 * 0.1).sqrt()).norm_sqr();
        assert!((v - expect).abs() < 1e-15);
        // identical weight vectors with aligned phases: V = 1
        let ones = [Complex64::new(1.0, 0.0); 3];
        assert!((interference_visibility(&wa, &wa, &ones) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut p = plausible_params();
        p.a.decoy = 0.6; // above signal
        assert!(p.validate().is_err());
        let mut p = plausible_params();
        p.b.p_z_signal = 0.95; // probabilities exceed 1
        assert!(p.validate().is_err());
        assert!(ExperimentScale::new(0.0).is_err());
    }

    #[test]
    fn vector_roundtrip_and_symmetric_tie() {
        let p = plausible_params();
        let v = p.to_vector();
        assert_eq!(v.len(), 12);
        let q = ProtocolParams::from_vector(&v);
        assert_eq!(p, q);
        let sym = ProtocolParams::from_vector(&v[..6]);
        assert_eq!(sym.a, sym.b);
        assert_eq!(sym.a, p.a);
    }
}
