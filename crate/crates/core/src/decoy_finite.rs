//! Three-intensity decoy-state analysis with finite-size statistics.
//!
//! Observed counts are first mapped to expected-value intervals with
//! Chernoff-type bounds, a pair of linear programs then bounds the
//! single-photon-pair yield from below and the yield-error product from
//! above, and the results are mapped back to observed-value bounds.

pub mod lp;

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use lp::{lp_solve, Constraint, LpOutcome, Sense};

#[derive(Debug, Clone, PartialEq)]
pub enum DecoyError {
    /// Chernoff bounds need a positive count.
    NonPositiveCount(f64),
    /// A delta equation did not reach the 1e-12 residual.
    NoConvergence(&'static str),
    /// The LP constraints admit no yield table: observations inconsistent.
    InfeasibleLp,
    /// The LP is unbounded; constraints were assembled wrongly.
    UnboundedLp,
    /// An intensity pair was observed with zero pulses.
    MissingObservation,
    InvalidFailureProbability(f64),
}

impl core::fmt::Display for DecoyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DecoyError::NonPositiveCount(x) => {
                write!(f, "Chernoff bound requires a positive count, got {x}")
            }
            DecoyError::NoConvergence(which) => {
                write!(f, "delta equation `{which}` did not converge to 1e-12")
            }
            DecoyError::InfeasibleLp => write!(f, "decoy linear program infeasible"),
            DecoyError::UnboundedLp => write!(f, "decoy linear program unbounded"),
            DecoyError::MissingObservation => {
                write!(f, "an intensity pair has zero pulses; all pairs must be observed")
            }
            DecoyError::InvalidFailureProbability(xi) => {
                write!(f, "failure probability {xi} outside (0, 1)")
            }
        }
    }
}

impl core::error::Error for DecoyError {}

/// Failure probability of each tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    xi: f64,
}

impl TailBound {
    pub fn new(xi: f64) -> Result<Self, DecoyError> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(DecoyError::InvalidFailureProbability(xi));
        }
        Ok(Self { xi })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }
}

/// Whether statistical fluctuations are applied or expected values are used
/// directly (the infinite-data reference mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatisticalModel {
    Finite(TailBound),
    Asymptotic,
}

pub const INTENSITY_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityClass {
    Signal = 0,
    Decoy = 1,
    Vacuum = 2,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [
        IntensityClass::Signal,
        IntensityClass::Decoy,
        IntensityClass::Vacuum,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
}

/// One intensity pair's observation: how many pulse pairs were sent and the
/// per-pair gain and error rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairObservation {
    pub pulses: f64,
    pub gain: f64,
    pub error_rate: f64,
}

/// Gains and error rates for every intensity pair in one basis,
/// indexed `[a][b]` by [`IntensityClass`].
#[derive(Debug, Clone, Default)]
pub struct BasisObservations(pub [[PairObservation; INTENSITY_CLASSES]; INTENSITY_CLASSES]);

impl BasisObservations {
    pub fn get(&self, a: IntensityClass, b: IntensityClass) -> &PairObservation {
        &self.0[a.index()][b.index()]
    }

    pub fn get_mut(&mut self, a: IntensityClass, b: IntensityClass) -> &mut PairObservation {
        &mut self.0[a.index()][b.index()]
    }
}

/// Both bases' observations.
#[derive(Debug, Clone, Default)]
pub struct DecoyObservations {
    pub z: BasisObservations,
    pub x: BasisObservations,
}

impl DecoyObservations {
    pub fn basis(&self, basis: Basis) -> &BasisObservations {
        match basis {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }
}

/// Photon-number probabilities `P_a(n)`, `n = 0..=n_max`, per intensity
/// class, for one party. Vectors may be sub-normalized (heralded sources);
/// the remainder enters the LP slack.
#[derive(Debug, Clone)]
pub struct PhotonMixture {
    pub probs: [Vec<f64>; INTENSITY_CLASSES],
}

impl PhotonMixture {
    pub fn n_max(&self) -> usize {
        self.probs[0].len() - 1
    }

    pub fn prob(&self, class: IntensityClass, n: usize) -> f64 {
        self.probs[class.index()][n]
    }

    pub fn captured(&self, class: IntensityClass) -> f64 {
        self.probs[class.index()].iter().sum()
    }

    pub fn remainder(&self, class: IntensityClass) -> f64 {
        1.0 - self.captured(class)
    }
}

/// Output of the decoy analysis: an observed-value lower bound on the
/// single-photon-pair yield (Z basis), an observed-value upper bound on the
/// yield-error product (X basis), and the phase-error bound
/// `e11_upper = e11y11_upper / y11_x_lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YieldBounds {
    pub y11_lower: f64,
    pub e11y11_upper: f64,
    /// Lower bound on the X-basis single-photon-pair yield, the denominator
    /// of `e11_upper`.
    pub y11_x_lower: f64,
    pub e11_upper: f64,
    /// Set when the error bound degenerated (zero yield denominator); the
    /// phase error is clamped to 1 and any key rate must be zero.
    pub degenerate: bool,
}

// ---------------------------------------------------------------------------
// Chernoff-type bounds

const RESIDUAL_TOL: f64 = 1e-12;

fn bisect_to_residual(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    name: &'static str,
) -> Result<f64, DecoyError> {
    // f(lo) > 0 > f(hi) is established by the callers.
    for _ in 0..500 {
        let root = 0.5 * (lo + hi);
        let v = f(root);
        if v > 0.0 {
            lo = root;
        } else {
            hi = root;
        }
        if hi - lo <= f64::EPSILON * hi.abs() {
            break;
        }
    }
    // Pick the bracket endpoint with the smallest residual. The equation
    // terms grow with the root, so the guard is scaled by it; at the
    // operating count scales (>= 1e2) this is the plain 1e-12 criterion.
    let (a, b) = (f(lo).abs(), f(hi).abs());
    let best = if a < b { lo } else { hi };
    if f(best).abs() > RESIDUAL_TOL * (1.0 + best.abs()) {
        return Err(DecoyError::NoConvergence(name));
    }
    Ok(best)
}

fn check_count(x: f64) -> Result<(), DecoyError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(DecoyError::NonPositiveCount(x));
    }
    Ok(())
}

/// Lower bound on the expected value behind an observed count `x`:
/// `E^L = x / (1 + delta1)` with
/// `delta1 - (1 + delta1) [ln(1 + delta1) + ln(xi)/x] = 0`.
pub fn chernoff_expected_lower(x: f64, tail: TailBound) -> Result<f64, DecoyError> {
    check_count(x)?;
    let ratio = -tail.xi.ln() / x; // > 0
    // delta1 grows like e^ratio; past ~600 the bound x/(1+delta1)
    // underflows to an honest zero.
    if ratio > 600.0 {
        return Ok(0.0);
    }
    // Substituting L = ln(1+delta1) turns the equation into
    // L - ratio - 1 + e^(-L) = 0 with the fixed bracket (0, ratio+1],
    // well conditioned for any count.
    let g = |l: f64| -(l - ratio - 1.0 + (-l).exp());
    let l = bisect_to_residual(g, 0.0, ratio + 1.0, "delta1")?;
    let d1 = l.exp_m1();
    let residual = d1 - (1.0 + d1) * (d1.ln_1p() - ratio);
    if residual.abs() > RESIDUAL_TOL * (1.0 + d1) {
        return Err(DecoyError::NoConvergence("delta1"));
    }
    Ok(x / (1.0 + d1))
}

/// Upper bound on the expected value behind an observed count `x`:
/// `E^U = x / (1 - delta2)` with
/// `delta2 + (1 - delta2) [ln(1 - delta2) + ln(xi)/x] = 0`.
pub fn chernoff_expected_upper(x: f64, tail: TailBound) -> Result<f64, DecoyError> {
    check_count(x)?;
    let ratio = -tail.xi.ln() / x;
    // Substituting u = 1 - delta2 gives h(u) = 1 - u + u (ln u - ratio)
    // with h(0+) = 1 and h(1) = -ratio: solving for u directly keeps full
    // precision when delta2 approaches 1 (tiny counts), and the bound is
    // x / u.
    let h = |u: f64| 1.0 - u + u * (u.ln() - ratio);
    let u = bisect_to_residual(h, f64::MIN_POSITIVE, 1.0, "delta2")?;
    let residual = h(u);
    if residual.abs() > RESIDUAL_TOL * (1.0 + u * ratio) {
        return Err(DecoyError::NoConvergence("delta2"));
    }
    Ok(x / u)
}

/// Expected-value interval for an observed count, with the zero-count
/// convention `[0, -ln(xi)]` (an expected value above `-ln(xi)` would give
/// zero observations with probability below `xi`).
pub fn expected_interval(x: f64, tail: TailBound) -> Result<(f64, f64), DecoyError> {
    if x <= 0.0 {
        return Ok((0.0, -tail.xi.ln()));
    }
    Ok((
        chernoff_expected_lower(x, tail)?,
        chernoff_expected_upper(x, tail)?,
    ))
}

/// Observed-value bounds around an expected count `y`:
/// `O^L = (1 - delta2') y`, `O^U = (1 + delta1') y` with
/// `delta1' - (1 + delta1') ln(1 + delta1') - ln(xi)/y = 0` and
/// `delta2' + (1 - delta2') ln(1 - delta2') + ln(xi)/y = 0`.
///
/// For `y <= -ln(xi)` the second equation has no root in (0, 1): zero
/// observations are plausible and the lower bound is 0.
pub fn chernoff_observed_bounds(y: f64, tail: TailBound) -> Result<(f64, f64), DecoyError> {
    check_count(y)?;
    let ratio = -tail.xi.ln() / y; // > 0
    let f_up = |d: f64| d - (1.0 + d) * d.ln_1p() + ratio;
    // f_up(0) = ratio > 0, decreasing in d.
    let mut hi = 10.0 * ratio.max(1.0);
    let mut guard = 0;
    while f_up(hi) > 0.0 {
        hi *= 4.0;
        guard += 1;
        if guard > 200 {
            return Err(DecoyError::NoConvergence("delta1'"));
        }
    }
    let d1 = bisect_to_residual(f_up, 0.0, hi, "delta1'")?;

    let lower = if ratio >= 1.0 {
        0.0
    } else {
        // In u = 1 - delta2' the equation reads 1 - u + u ln u = ratio,
        // decreasing from 1 at u = 0+ to 0 at u = 1; O^L = u y.
        let k = |u: f64| 1.0 - u + u * u.ln() - ratio;
        let u = bisect_to_residual(k, f64::MIN_POSITIVE, 1.0, "delta2'")?;
        if k(u).abs() > RESIDUAL_TOL * (1.0 + ratio) {
            return Err(DecoyError::NoConvergence("delta2'"));
        }
        u * y
    };
    Ok((lower, (1.0 + d1) * y))
}

// ---------------------------------------------------------------------------
// Yield-bound linear programs

struct PairBounds {
    gain: (f64, f64),
    err: (f64, f64),
}

fn pair_bounds(
    obs: &BasisObservations,
    stat: StatisticalModel,
) -> Result<Vec<((IntensityClass, IntensityClass), PairBounds)>, DecoyError> {
    let mut out = Vec::with_capacity(9);
    for a in IntensityClass::ALL {
        for b in IntensityClass::ALL {
            let o = obs.get(a, b);
            if !(o.pulses > 0.0) {
                return Err(DecoyError::MissingObservation);
            }
            let bounds = match stat {
                StatisticalModel::Asymptotic => PairBounds {
                    gain: (o.gain, o.gain),
                    err: (o.gain * o.error_rate, o.gain * o.error_rate),
                },
                StatisticalModel::Finite(tail) => {
                    let (gl, gu) = expected_interval(o.pulses * o.gain, tail)?;
                    let (el, eu) =
                        expected_interval(o.pulses * o.gain * o.error_rate, tail)?;
                    PairBounds {
                        gain: (gl / o.pulses, gu / o.pulses),
                        err: (el / o.pulses, eu / o.pulses),
                    }
                }
            };
            out.push(((a, b), bounds));
        }
    }
    Ok(out)
}

fn yield_constraints(
    mix_a: &PhotonMixture,
    mix_b: &PhotonMixture,
    bounds: &[((IntensityClass, IntensityClass), PairBounds)],
    n_max: usize,
    use_error_product: bool,
) -> Vec<Constraint> {
    let nv = (n_max + 1) * (n_max + 1);
    let mut constraints = Vec::with_capacity(2 * bounds.len());
    for ((a, b), pb) in bounds {
        let mut coeffs = vec![0.0f64; nv];
        let mut captured = 0.0;
        for m in 0..=n_max {
            for n in 0..=n_max {
                let p = mix_a.prob(*a, m) * mix_b.prob(*b, n);
                coeffs[m * (n_max + 1) + n] = p;
                captured += p;
            }
        }
        let (lo, up) = if use_error_product { pb.err } else { pb.gain };
        constraints.push(Constraint::le(coeffs.clone(), up));
        let slack = 1.0 - captured;
        constraints.push(Constraint::ge(coeffs, lo - slack));
    }
    constraints
}

fn solve_for_y11(
    sense: Sense,
    mix_a: &PhotonMixture,
    mix_b: &PhotonMixture,
    bounds: &[((IntensityClass, IntensityClass), PairBounds)],
    n_max: usize,
    use_error_product: bool,
) -> Result<f64, DecoyError> {
    let nv = (n_max + 1) * (n_max + 1);
    let mut objective = vec![0.0f64; nv];
    objective[n_max + 2] = 1.0; // index of Y_{11}
    let constraints = yield_constraints(mix_a, mix_b, bounds, n_max, use_error_product);
    let box_bounds = vec![(0.0, 1.0); nv];
    match lp_solve(sense, &objective, &constraints, &box_bounds) {
        LpOutcome::Optimal { value, .. } => Ok(value.clamp(0.0, 1.0)),
        LpOutcome::Infeasible => Err(DecoyError::InfeasibleLp),
        LpOutcome::Unbounded => Err(DecoyError::UnboundedLp),
    }
}

/// Expected pulse-pair population that carries exactly one photon from each
/// party, used as the count scale when converting expected yields back to
/// observed ones.
fn single_pair_population(
    obs: &BasisObservations,
    mix_a: &PhotonMixture,
    mix_b: &PhotonMixture,
) -> f64 {
    let mut total = 0.0;
    for a in IntensityClass::ALL {
        for b in IntensityClass::ALL {
            total += obs.get(a, b).pulses * mix_a.prob(a, 1) * mix_b.prob(b, 1);
        }
    }
    total
}

fn expected_to_observed_lower(
    y_expected: f64,
    population: f64,
    tail: TailBound,
) -> Result<f64, DecoyError> {
    let count = y_expected * population;
    if count <= 0.0 {
        return Ok(0.0);
    }
    let (lo, _) = chernoff_observed_bounds(count, tail)?;
    Ok(lo / population)
}

fn expected_to_observed_upper(
    y_expected: f64,
    population: f64,
    tail: TailBound,
) -> Result<f64, DecoyError> {
    let count = y_expected * population;
    if count <= 0.0 {
        // Even a zero expected value can fluctuate up to -ln(xi) counts.
        return Ok(-tail.xi.ln() / population);
    }
    let (_, up) = chernoff_observed_bounds(count, tail)?;
    Ok(up / population)
}

/// Bounds the single-photon-pair yield and error from three-intensity
/// observations in both bases.
///
/// The Z-basis gains bound `Y11` from below; the X-basis error products
/// bound `Y11 e11` from above; a third program bounds the X-basis `Y11`
/// from below to form `e11_upper`. In finite mode every observed count is
/// first widened to its expected-value interval and the LP optima are
/// mapped back to observed values over the single-pair population.
pub fn lp_yield_bounds(
    obs: &DecoyObservations,
    mix_a: &PhotonMixture,
    mix_b: &PhotonMixture,
    stat: StatisticalModel,
    n_max: usize,
) -> Result<YieldBounds, DecoyError> {
    assert!(mix_a.n_max() >= n_max && mix_b.n_max() >= n_max);

    let z_bounds = pair_bounds(&obs.z, stat)?;
    let x_bounds = pair_bounds(&obs.x, stat)?;

    let y11_z = solve_for_y11(Sense::Minimize, mix_a, mix_b, &z_bounds, n_max, false)?;
    let y11_x = solve_for_y11(Sense::Minimize, mix_a, mix_b, &x_bounds, n_max, false)?;
    let e11y11_x = solve_for_y11(Sense::Maximize, mix_a, mix_b, &x_bounds, n_max, true)?;

    let (y11_lower, y11_x_lower, e11y11_upper) = match stat {
        StatisticalModel::Asymptotic => (y11_z, y11_x, e11y11_x),
        StatisticalModel::Finite(tail) => {
            let pop_z = single_pair_population(&obs.z, mix_a, mix_b);
            let pop_x = single_pair_population(&obs.x, mix_a, mix_b);
            if pop_z <= 0.0 || pop_x <= 0.0 {
                (0.0, 0.0, 1.0)
            } else {
                (
                    expected_to_observed_lower(y11_z, pop_z, tail)?,
                    expected_to_observed_lower(y11_x, pop_x, tail)?,
                    expected_to_observed_upper(e11y11_x, pop_x, tail)?.min(1.0),
                )
            }
        }
    };

    let degenerate = y11_x_lower <= 0.0;
    let e11_upper = if degenerate {
        1.0
    } else {
        (e11y11_upper / y11_x_lower).clamp(0.0, 1.0)
    };
    Ok(YieldBounds {
        y11_lower,
        e11y11_upper,
        y11_x_lower,
        e11_upper,
        degenerate,
    })
}
