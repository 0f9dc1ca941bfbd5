//! Spectral wave functions on discrete frequency grids: pump envelopes,
//! filters, joint spectral amplitudes and their Schmidt decomposition into
//! temporal modes, plus overlap coefficients between modes.
//!
//! All amplitudes are probability normalized under the grid quadrature,
//! `sum |psi(w_k)|^2 * step = 1`. Grids are uniform and symmetric about
//! their center, so quadrature reduces to a plain Riemann sum (the
//! endpoint corrections of the trapezoid rule vanish for the Gaussian-tailed
//! amplitudes this module handles).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Float;

/// Tolerance below which a post-operation amplitude is considered destroyed
/// (filter and pulse spectrally disjoint, empty JSA, ...).
pub const DEGENERATE_MASS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectraError {
    InvalidGrid(String),
    /// The grid does not cover a spectral range an operation needs.
    GridTooNarrow {
        required_lo: f64,
        required_hi: f64,
    },
    /// Two amplitudes that must share a grid do not.
    GridMismatch,
    /// Pump must be sampled on the exact sum grid of signal and idler.
    PumpGridNotSumGrid,
    /// Total spectral mass below `DEGENERATE_MASS`.
    DegenerateAmplitude,
    InvalidCutoff {
        requested: usize,
        max: usize,
    },
    SvdFailed,
}

impl core::fmt::Display for SpectraError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SpectraError::InvalidGrid(why) => write!(f, "invalid frequency grid: {why}"),
            SpectraError::GridTooNarrow {
                required_lo,
                required_hi,
            } => write!(
                f,
                "grid too narrow: operation requires coverage of [{required_lo:e}, {required_hi:e}] rad/s"
            ),
            SpectraError::GridMismatch => write!(f, "amplitudes are sampled on different grids"),
            SpectraError::PumpGridNotSumGrid => write!(
                f,
                "pump amplitude must be sampled on the sum grid of the signal and idler grids"
            ),
            SpectraError::DegenerateAmplitude => {
                write!(f, "spectral mass below {DEGENERATE_MASS:e}; amplitude is degenerate")
            }
            SpectraError::InvalidCutoff { requested, max } => {
                write!(f, "Schmidt cutoff {requested} outside 1..={max}")
            }
            SpectraError::SvdFailed => write!(f, "singular value decomposition did not converge"),
        }
    }
}

impl core::error::Error for SpectraError {}

/// Uniform grid of angular frequencies, symmetric about `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    center: f64,
    span: f64,
    points: usize,
}

impl FrequencyGrid {
    pub fn new(center: f64, span: f64, points: usize) -> Result<Self, SpectraError> {
        if points < 2 {
            return Err(SpectraError::InvalidGrid(format!(
                "points = {points}, need at least 2"
            )));
        }
        if !(span > 0.0) || !span.is_finite() || !center.is_finite() {
            return Err(SpectraError::InvalidGrid(format!(
                "span = {span:e} must be finite and positive"
            )));
        }
        Ok(Self {
            center,
            span,
            points,
        })
    }

    /// Grid holding every pairwise sum of one sample from `a` and one from
    /// `b`. Sampling a pump on this grid lets a JSA read `alpha(w_s + w_i)`
    /// by index arithmetic, without interpolation.
    pub fn sum_grid(a: &FrequencyGrid, b: &FrequencyGrid) -> Result<Self, SpectraError> {
        if (a.step() - b.step()).abs() > 1e-9 * a.step() {
            return Err(SpectraError::InvalidGrid(format!(
                "sum grid requires equal steps, got {:e} and {:e}",
                a.step(),
                b.step()
            )));
        }
        FrequencyGrid::new(a.center + b.center, a.span + b.span, a.points + b.points - 1)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn step(&self) -> f64 {
        2.0 * self.span / (self.points - 1) as f64
    }

    pub fn sample(&self, i: usize) -> f64 {
        self.center - self.span + i as f64 * self.step()
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |i| self.sample(i))
    }

    pub fn min(&self) -> f64 {
        self.center - self.span
    }

    pub fn max(&self) -> f64 {
        self.center + self.span
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.min() <= lo && hi <= self.max()
    }
}

/// Complex spectral amplitude sampled on a [`FrequencyGrid`], normalized so
/// that `sum |psi|^2 * step = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAmplitude {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl SpectralAmplitude {
    /// Normalizes the given samples. Fails if the total mass is below
    /// [`DEGENERATE_MASS`].
    pub fn from_samples(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self, SpectraError> {
        assert_eq!(values.len(), grid.points(), "sample count must match grid");
        let mass: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.step();
        if !(mass > DEGENERATE_MASS) {
            return Err(SpectraError::DegenerateAmplitude);
        }
        let scale = 1.0 / mass.sqrt();
        let values = values.into_iter().map(|v| v * scale).collect();
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn quadrature_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.step()
    }

    /// Inner product `<self|other> = int self* other dw` by grid quadrature.
    pub fn inner(&self, other: &SpectralAmplitude) -> Result<Complex64, SpectraError> {
        if self.grid != other.grid {
            return Err(SpectraError::GridMismatch);
        }
        let sum: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(sum * self.grid.step())
    }
}

/// Gaussian filter of order `n`: `F_n(w) = exp[-2^(2n-1) ln2 ((w-w0)/fwhm)^(2n)]`,
/// with `fwhm` the full width at half power, `|F_n(w0 +- fwhm/2)|^2 = 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: u32,
    pub center: f64,
    pub fwhm: f64,
}

impl FilterSpec {
    pub fn new(order: u32, center: f64, fwhm: f64) -> Self {
        assert!(order >= 1, "filter order must be >= 1");
        assert!(fwhm > 0.0, "filter FWHM must be positive");
        Self {
            order,
            center,
            fwhm,
        }
    }

    pub fn amplitude(&self, omega: f64) -> f64 {
        let n = self.order;
        let x = (omega - self.center) / self.fwhm;
        let ln2 = core::f64::consts::LN_2;
        (-(2f64.powi(2 * n as i32 - 1)) * ln2 * x.powi(2 * n as i32)).exp()
    }
}

/// Linear group-velocity-mismatch model,
/// `dk = d_s (w_s - w_s0) + d_i (w_i - w_i0) - d_p (w_s + w_i - w_s0 - w_i0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMismatch {
    pub signal_slope: f64,
    pub idler_slope: f64,
    pub pump_slope: f64,
    pub signal_center: f64,
    pub idler_center: f64,
}

impl LinearMismatch {
    pub fn delta_k(&self, omega_s: f64, omega_i: f64) -> f64 {
        let ds = omega_s - self.signal_center;
        let di = omega_i - self.idler_center;
        self.signal_slope * ds + self.idler_slope * di - self.pump_slope * (ds + di)
    }
}

/// Phase-matching function of the nonlinear crystal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseMatching {
    /// Perfect phase matching, `Phi = 1`.
    Matched,
    /// `Phi = sinc(dk L / 2) exp(i dk L / 2)` for a crystal of length
    /// `crystal_length` meters.
    Sinc {
        crystal_length: f64,
        mismatch: LinearMismatch,
    },
}

impl PhaseMatching {
    fn value(&self, omega_s: f64, omega_i: f64) -> Complex64 {
        match self {
            PhaseMatching::Matched => Complex64::new(1.0, 0.0),
            PhaseMatching::Sinc {
                crystal_length,
                mismatch,
            } => {
                let x = mismatch.delta_k(omega_s, omega_i) * crystal_length / 2.0;
                Complex64::new(0.0, x).exp() * sinc(x)
            }
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Two-photon joint spectral amplitude `f(w_s, w_i)` on a signal x idler
/// grid pair, probability normalized.
#[derive(Debug, Clone)]
pub struct JointSpectralAmplitude {
    signal_grid: FrequencyGrid,
    idler_grid: FrequencyGrid,
    /// Row-major `[signal][idler]`.
    values: Vec<Complex64>,
    pub phase_matching: PhaseMatching,
}

impl JointSpectralAmplitude {
    pub fn from_values(
        signal_grid: FrequencyGrid,
        idler_grid: FrequencyGrid,
        values: Vec<Complex64>,
        phase_matching: PhaseMatching,
    ) -> Result<Self, SpectraError> {
        assert_eq!(values.len(), signal_grid.points() * idler_grid.points());
        let mass: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>()
            * signal_grid.step()
            * idler_grid.step();
        if !(mass > DEGENERATE_MASS) {
            return Err(SpectraError::DegenerateAmplitude);
        }
        let scale = 1.0 / mass.sqrt();
        let values = values.into_iter().map(|v| v * scale).collect();
        Ok(Self {
            signal_grid,
            idler_grid,
            values,
            phase_matching,
        })
    }

    pub fn signal_grid(&self) -> &FrequencyGrid {
        &self.signal_grid
    }

    pub fn idler_grid(&self) -> &FrequencyGrid {
        &self.idler_grid
    }

    pub fn value(&self, s: usize, i: usize) -> Complex64 {
        self.values[s * self.idler_grid.points() + i]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn quadrature_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
            * self.signal_grid.step()
            * self.idler_grid.step()
    }
}

/// Schmidt decomposition `f = sum_n sqrt(lambda_n) psi_n(w_s) phi_n(w_i)`.
///
/// `lambdas` are descending; `residual` is the eigenvalue mass beyond the
/// cutoff, so `sum lambdas + residual = 1`. Signal modes are phase-fixed so
/// their largest-magnitude sample is real positive; each idler mode carries
/// the compensating phase so the reconstruction is exact.
#[derive(Debug, Clone)]
pub struct SchmidtDecomposition {
    pub lambdas: Vec<f64>,
    pub signal_modes: Vec<SpectralAmplitude>,
    pub idler_modes: Vec<SpectralAmplitude>,
    pub cutoff: usize,
    pub residual: f64,
}

impl SchmidtDecomposition {
    /// Number of leading modes that either reach cumulative weight
    /// `1 - 1e-6` or exhaust `max_modes`, whichever comes first.
    pub fn default_cutoff(lambdas: &[f64], max_modes: usize) -> usize {
        let mut cum = 0.0;
        for (i, l) in lambdas.iter().enumerate() {
            cum += l;
            if cum >= 1.0 - 1e-6 || i + 1 >= max_modes {
                return i + 1;
            }
        }
        lambdas.len().max(1)
    }

    /// Normalized modal weights `lambda_n / sum lambda`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.lambdas.iter().sum();
        self.lambdas.iter().map(|l| l / total).collect()
    }
}

/// Decomposition coefficients of one amplitude onto an orthonormal mode set,
/// `c_i = int psi_i^* alpha dw`, plus the mass `1 - sum |c_i|^2` outside the
/// spanned subspace.
#[derive(Debug, Clone)]
pub struct OverlapVector {
    pub coefficients: Vec<Complex64>,
    pub residual_norm: f64,
}

/// Normalized Gaussian amplitude `pi^(-1/4) sigma^(-1/2) exp(-(w-mean)^2 / 2 sigma^2)`.
///
/// The grid must cover `mean +- 5 sigma`; outside that the truncated tail
/// would silently distort downstream overlaps.
pub fn gaussian_pump(
    mean: f64,
    sigma: f64,
    grid: &FrequencyGrid,
) -> Result<SpectralAmplitude, SpectraError> {
    assert!(sigma > 0.0, "sigma must be positive");
    if !grid.covers(mean - 5.0 * sigma, mean + 5.0 * sigma) {
        return Err(SpectraError::GridTooNarrow {
            required_lo: mean - 5.0 * sigma,
            required_hi: mean + 5.0 * sigma,
        });
    }
    let values = grid
        .samples()
        .map(|w| {
            let x = (w - mean) / sigma;
            Complex64::new((-0.5 * x * x).exp(), 0.0)
        })
        .collect();
    SpectralAmplitude::from_samples(*grid, values)
}

/// Pointwise `alpha(w) F(w)`, renormalized.
pub fn apply_filter(
    amp: &SpectralAmplitude,
    filter: &FilterSpec,
) -> Result<SpectralAmplitude, SpectraError> {
    let values = amp
        .grid()
        .samples()
        .zip(amp.values())
        .map(|(w, v)| v * filter.amplitude(w))
        .collect();
    SpectralAmplitude::from_samples(*amp.grid(), values)
}

/// Assembles `f(w_s, w_i) = alpha(w_s + w_i) Phi(w_s, w_i) F_s(w_s) F_i(w_i)`,
/// normalized. The pump must be sampled on the exact sum grid of the two
/// marginal grids (see [`FrequencyGrid::sum_grid`]).
pub fn build_jsa(
    pump: &SpectralAmplitude,
    filter_s: &FilterSpec,
    filter_i: &FilterSpec,
    phase_matching: PhaseMatching,
    signal_grid: &FrequencyGrid,
    idler_grid: &FrequencyGrid,
) -> Result<JointSpectralAmplitude, SpectraError> {
    let sum = FrequencyGrid::sum_grid(signal_grid, idler_grid)?;
    if *pump.grid() != sum {
        if !pump
            .grid()
            .covers(signal_grid.min() + idler_grid.min(), signal_grid.max() + idler_grid.max())
        {
            return Err(SpectraError::GridTooNarrow {
                required_lo: signal_grid.min() + idler_grid.min(),
                required_hi: signal_grid.max() + idler_grid.max(),
            });
        }
        return Err(SpectraError::PumpGridNotSumGrid);
    }
    let ns = signal_grid.points();
    let ni = idler_grid.points();
    let fs: Vec<f64> = signal_grid.samples().map(|w| filter_s.amplitude(w)).collect();
    let fi: Vec<f64> = idler_grid.samples().map(|w| filter_i.amplitude(w)).collect();
    let mut values = vec![Complex64::new(0.0, 0.0); ns * ni];
    for s in 0..ns {
        let ws = signal_grid.sample(s);
        for i in 0..ni {
            let wi = idler_grid.sample(i);
            let pm = phase_matching.value(ws, wi);
            values[s * ni + i] = pump.values()[s + i] * pm * fs[s] * fi[i];
        }
    }
    JointSpectralAmplitude::from_values(*signal_grid, *idler_grid, values, phase_matching)
}

/// Schmidt decomposition via SVD of the quadrature-weighted sample matrix
/// `f * sqrt(step_s * step_i)`; `lambda_n` are the squared singular values.
pub fn schmidt_decompose(
    jsa: &JointSpectralAmplitude,
    cutoff: usize,
) -> Result<SchmidtDecomposition, SpectraError> {
    let ns = jsa.signal_grid().points();
    let ni = jsa.idler_grid().points();
    let max = ns.min(ni);
    if cutoff == 0 || cutoff > max {
        return Err(SpectraError::InvalidCutoff {
            requested: cutoff,
            max,
        });
    }
    let weight = (jsa.signal_grid().step() * jsa.idler_grid().step()).sqrt();
    let a = DMatrix::<Complex64>::from_fn(ns, ni, |s, i| jsa.value(s, i) * weight);
    let svd = a
        .try_svd(true, true, f64::EPSILON, 100_000)
        .ok_or(SpectraError::SvdFailed)?;
    let u = svd.u.ok_or(SpectraError::SvdFailed)?;
    let v_t = svd.v_t.ok_or(SpectraError::SvdFailed)?;

    // nalgebra returns singular values sorted descending; keep a defensive
    // permutation so the lambdas invariant never depends on that.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
            .then(i.cmp(&j))
    });

    let ss = jsa.signal_grid().step().sqrt();
    let si = jsa.idler_grid().step().sqrt();
    let mut lambdas = Vec::with_capacity(cutoff);
    let mut signal_modes = Vec::with_capacity(cutoff);
    let mut idler_modes = Vec::with_capacity(cutoff);
    for &k in order.iter().take(cutoff) {
        let sv = svd.singular_values[k];
        lambdas.push(sv * sv);
        let mut psi: Vec<Complex64> = (0..ns).map(|j| u[(j, k)] / ss).collect();
        let mut phi: Vec<Complex64> = (0..ni).map(|j| v_t[(k, j)] / si).collect();
        // Phase-fix: largest-magnitude signal sample real positive, idler
        // compensates so psi_n phi_n is unchanged.
        let peak = psi
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().partial_cmp(&b.1.norm_sqr()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let mag = psi[peak].norm();
        if mag > 0.0 {
            let rot = psi[peak].conj() / mag;
            for v in psi.iter_mut() {
                *v *= rot;
            }
            let unrot = rot.conj();
            for v in phi.iter_mut() {
                *v *= unrot;
            }
        }
        signal_modes.push(SpectralAmplitude::from_samples(*jsa.signal_grid(), psi)?);
        idler_modes.push(SpectralAmplitude::from_samples(*jsa.idler_grid(), phi)?);
    }
    let kept: f64 = lambdas.iter().sum();
    Ok(SchmidtDecomposition {
        lambdas,
        signal_modes,
        idler_modes,
        cutoff,
        residual: 1.0 - kept,
    })
}

/// Overlap coefficients `c_i = int psi_i^* alpha dw` of `wcp` on a mode set
/// sharing its grid.
pub fn overlap_coefficients(
    wcp: &SpectralAmplitude,
    modes: &[SpectralAmplitude],
) -> Result<OverlapVector, SpectraError> {
    let mut coefficients = Vec::with_capacity(modes.len());
    for m in modes {
        coefficients.push(m.inner(wcp)?);
    }
    let captured: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    Ok(OverlapVector {
        coefficients,
        residual_norm: 1.0 - captured,
    })
}

/// Closed-form overlap `int psi^* phi e^(i w tau) dw` of two normalized
/// Gaussians with width parameters `sigma1`, `sigma2`, center offset
/// `delta_omega` and relative delay `tau`. Frequencies are measured from the
/// first pulse's center.
///
/// For fixed `delta_omega * tau > 0` the magnitude is bounded by
/// `exp(-delta_omega tau / 2)`, attained exactly at
/// `sigma1 = sigma2 = sqrt(delta_omega / tau)`.
pub fn gaussian_overlap(sigma1: f64, sigma2: f64, delta_omega: f64, tau: f64) -> Complex64 {
    assert!(sigma1 > 0.0 && sigma2 > 0.0, "widths must be positive");
    let s2 = sigma1 * sigma1 + sigma2 * sigma2;
    let prefactor = (2.0 * sigma1 * sigma2 / s2).sqrt();
    let magnitude =
        (-(delta_omega * delta_omega + sigma1 * sigma1 * sigma2 * sigma2 * tau * tau) / (2.0 * s2))
            .exp();
    let phase = sigma1 * sigma1 * delta_omega * tau / s2;
    Complex64::new(0.0, phase).exp() * prefactor * magnitude
}

/// Spectral purity `sum lambda_n^2` of a normalized Schmidt spectrum.
pub fn purity(lambdas: &[f64]) -> f64 {
    lambdas.iter().map(|l| l * l).sum()
}
