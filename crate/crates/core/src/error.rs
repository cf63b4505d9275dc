//! Error type shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong when evaluating mechanisms, integrating
/// flows, or running Monte Carlo schemes.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("lambda must be componentwise nonnegative, got ({0}, {1})")]
    NegativeLambda(f64, f64),

    #[error("integrator step must be strictly positive, got {0}")]
    NonPositiveStep(f64),

    #[error("horizon must be nonnegative, got {0}")]
    NegativeHorizon(f64),

    #[error("mechanism evaluation became nonfinite at t = {t}: ({v1}, {v2})")]
    NonFiniteFlow { t: f64, v1: f64, v2: f64 },

    #[error("flow undershot below -1e-12 at t = {t}: ({v1}, {v2})")]
    FlowUndershoot { t: f64, v1: f64, v2: f64 },

    #[error("RK4 moment flow and matrix exponential disagree by {0:.3e} (limit 1e-6)")]
    MomentFlowMismatch(f64),

    #[error("probabilities must be nonnegative and sum to 1, got sum {0}")]
    InvalidProbabilityVector(f64),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("time step must be strictly positive, got {0}")]
    NonPositiveDt(f64),

    #[error("jump rate {rate:.6} times dt {dt:.3e} exceeds 0.5; shrink dt")]
    LeapRateTooHigh { rate: f64, dt: f64 },

    #[error("supercritical drift a11 = {0} < 0 is not supported by the GW construction")]
    NegativeA11(f64),

    #[error("mass scale k must be at least 1")]
    ZeroMassScale,

    #[error("H has an eigenvalue with nonnegative real part; no exponential decay")]
    NoDecay,

    #[error("ergodic-rate hypotheses fail: need det H > 0 and tr H < 0, got det {det}, tr {tr}")]
    ErgodicHypotheses { det: f64, tr: f64 },

    #[error("H12 = 0 with H21 > 0 is unsupported for the ergodic-rate constants")]
    UnsupportedSpectralShape,

    #[error("analytic identity check failed: {0}")]
    IdentityCheckFailed(String),

    #[error("no stationary distribution: eigenvalues of H must have negative real parts")]
    NoStationaryLaw,

    #[error("sample sizes differ: {0} vs {1}")]
    SampleSizeMismatch(usize, usize),

    #[error("sample size {0} exceeds the exact-assignment budget {1}")]
    SampleTooLarge(usize, usize),

    #[error("empty sample")]
    EmptySample,

    #[error("Riccati denominator vanishes near t = {0} (finite-time blow-up)")]
    RiccatiBlowUp(f64),

    #[error("replicas must be at least 1")]
    ZeroReplicas,

    #[error("mechanism file problem: {0}")]
    MechanismFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
