//! Model parameters of the mixed-state branching process and the functions
//! built from them.
//!
//! The state space is `M = R+ x N`: one continuous coordinate, one integer
//! coordinate. A branching mechanism is the parameter bundle
//! `(a11, a21, alpha, n1, n2)` generating the pair
//!
//! ```text
//! Phi1(l1, l2) = -a11 l1 - alpha l1^2 - int (e^{-<l,z>} - 1 + l1 z1) n1(dz)
//! Phi2(l1, l2) =  a21 l1 + int (1 - e^{-<l,z>}) n2(dz)
//! ```
//!
//! with `n1` supported on `M \ {0}` and `n2` on `(R+ x {-1, 0, 1, ...}) \ {0}`.
//! All jump measures here are finite lists of weighted atoms, so every
//! integral is an exact finite sum and compound-Poisson simulation is exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat2;

/// A weighted jump atom `(z1, z2, weight)`; `z2` is the integer displacement
/// of the discrete coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpAtom {
    pub z1: f64,
    pub z2: i64,
    pub weight: f64,
}

impl JumpAtom {
    pub fn new(z1: f64, z2: i64, weight: f64) -> Self {
        JumpAtom { z1, z2, weight }
    }

    fn is_origin(&self) -> bool {
        self.z1 == 0.0 && self.z2 == 0
    }

    /// Membership in the rectangle `A_r = (r1, inf) x (r2, inf)`.
    pub fn in_rect(&self, r: [f64; 2]) -> bool {
        self.z1 > r[0] && (self.z2 as f64) > r[1]
    }
}

/// Finite atomic Levy measure: a list of jump atoms with positive weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LevyAtomMeasure {
    atoms: Vec<JumpAtom>,
}

impl LevyAtomMeasure {
    pub fn new(atoms: Vec<JumpAtom>) -> Self {
        LevyAtomMeasure { atoms }
    }

    pub fn empty() -> Self {
        LevyAtomMeasure { atoms: Vec::new() }
    }

    pub fn from_triples(triples: &[(f64, i64, f64)]) -> Self {
        LevyAtomMeasure {
            atoms: triples
                .iter()
                .map(|&(z1, z2, w)| JumpAtom::new(z1, z2, w))
                .collect(),
        }
    }

    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total mass `sum of weights`.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `int z1 dn`.
    pub fn z1_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.z1).sum()
    }

    /// `int z2 dn`.
    pub fn z2_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.z2 as f64).sum()
    }

    /// `int z1 /\ z1^2 dn` (the kappa constant of the decay envelopes).
    pub fn z1_min_sq_moment(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * a.z1.min(a.z1 * a.z1))
            .sum()
    }

    /// Mass carried by atoms with `z2 == -1`.
    pub fn mass_at_z2_minus_one(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.z2 == -1)
            .map(|a| a.weight)
            .sum()
    }

    /// Mass inside the rectangle `A_r`.
    pub fn mass_in_rect(&self, r: [f64; 2]) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.in_rect(r))
            .map(|a| a.weight)
            .sum()
    }

    /// Atoms outside `A_r`, as a new measure.
    pub fn restricted_outside(&self, r: [f64; 2]) -> LevyAtomMeasure {
        LevyAtomMeasure {
            atoms: self
                .atoms
                .iter()
                .copied()
                .filter(|a| !a.in_rect(r))
                .collect(),
        }
    }

    /// `sum_{|z| >= 1} w log |z|` with the Euclidean norm.
    pub fn log_moment(&self) -> f64 {
        self.atoms
            .iter()
            .filter_map(|a| {
                let norm = (a.z1 * a.z1 + (a.z2 as f64) * (a.z2 as f64)).sqrt();
                (norm >= 1.0).then(|| a.weight * norm.ln())
            })
            .sum()
    }

    fn sum_compensated(&self, lambda: [f64; 2]) -> f64 {
        // sum w (e^{-<l,z>} - 1 + l1 z1)
        self.atoms
            .iter()
            .map(|a| {
                let dot = lambda[0] * a.z1 + lambda[1] * a.z2 as f64;
                a.weight * ((-dot).exp() - 1.0 + lambda[0] * a.z1)
            })
            .sum()
    }

    fn sum_one_minus_exp(&self, lambda: [f64; 2]) -> f64 {
        // sum w (1 - e^{-<l,z>})
        self.atoms
            .iter()
            .map(|a| {
                let dot = lambda[0] * a.z1 + lambda[1] * a.z2 as f64;
                a.weight * (1.0 - (-dot).exp())
            })
            .sum()
    }

    /// `sum w (e^{-<l,z>} - 1 + <l,z>)`, the doubly compensated integrand of
    /// the truncated mechanisms.
    fn sum_fully_compensated(&self, lambda: [f64; 2]) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let dot = lambda[0] * a.z1 + lambda[1] * a.z2 as f64;
                a.weight * ((-dot).exp() - 1.0 + dot)
            })
            .sum()
    }
}

/// A single invariant violation found by [`BranchingMechanism::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending field, e.g. `"n1[0]"` or `"alpha"`.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Branching mechanism `(a11, a21, alpha, n1, n2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingMechanism {
    /// Linear drift coefficient of `Phi1` (any sign).
    pub a11: f64,
    /// Cross drift coefficient, nonnegative.
    pub a21: f64,
    /// Diffusion coefficient, nonnegative.
    pub alpha: f64,
    /// Jump measure driven by the continuous coordinate; atoms in `M \ {0}`.
    pub n1: LevyAtomMeasure,
    /// Jump measure driven by the integer coordinate; atoms have `z2 >= -1`.
    pub n2: LevyAtomMeasure,
}

impl BranchingMechanism {
    pub fn new(
        a11: f64,
        a21: f64,
        alpha: f64,
        n1: LevyAtomMeasure,
        n2: LevyAtomMeasure,
    ) -> Self {
        BranchingMechanism {
            a11,
            a21,
            alpha,
            n1,
            n2,
        }
    }

    /// Checks every admissibility invariant and reports all violations.
    /// Never fails: an empty report means the mechanism is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let bad = |field: &str, message: String| Violation {
            field: field.to_string(),
            message,
        };
        if !self.a11.is_finite() {
            out.push(bad("a11", format!("must be finite, got {}", self.a11)));
        }
        if !(self.a21 >= 0.0 && self.a21.is_finite()) {
            out.push(bad("a21", format!("must be >= 0, got {}", self.a21)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            out.push(bad("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        for (i, a) in self.n1.atoms().iter().enumerate() {
            let field = format!("n1[{i}]");
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                out.push(bad(&field, format!("weight must be > 0, got {}", a.weight)));
            }
            if !(a.z1 >= 0.0 && a.z1.is_finite()) {
                out.push(bad(&field, format!("z1 must be >= 0, got {}", a.z1)));
            }
            if a.z2 < 0 {
                out.push(bad(&field, format!("z2 < 0 in n1, got {}", a.z2)));
            }
            if a.is_origin() {
                out.push(bad(&field, "origin atom in n1".to_string()));
            }
        }
        for (i, a) in self.n2.atoms().iter().enumerate() {
            let field = format!("n2[{i}]");
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                out.push(bad(&field, format!("weight must be > 0, got {}", a.weight)));
            }
            if !(a.z1 >= 0.0 && a.z1.is_finite()) {
                out.push(bad(&field, format!("z1 must be >= 0, got {}", a.z1)));
            }
            if a.z2 < -1 {
                out.push(bad(&field, format!("z2 < -1 in n2, got {}", a.z2)));
            }
            if a.is_origin() {
                out.push(bad(&field, "origin atom in n2".to_string()));
            }
        }
        out
    }

    /// `Phi1(lambda)`, exact finite sum. Domain error on negative lambda.
    pub fn phi1(&self, lambda: [f64; 2]) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(self.phi1_raw(lambda))
    }

    /// `Phi2(lambda)`, exact finite sum. Domain error on negative lambda.
    pub fn phi2(&self, lambda: [f64; 2]) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(self.phi2_raw(lambda))
    }

    pub(crate) fn phi1_raw(&self, lambda: [f64; 2]) -> f64 {
        -self.a11 * lambda[0] - self.alpha * lambda[0] * lambda[0]
            - self.n1.sum_compensated(lambda)
    }

    pub(crate) fn phi2_raw(&self, lambda: [f64; 2]) -> f64 {
        self.a21 * lambda[0] + self.n2.sum_one_minus_exp(lambda)
    }

    /// First-moment matrix `H` of the mechanism:
    /// `H = [[-a11, int z2 n1], [a21 + int z1 n2, int z2 n2]]`.
    pub fn moment_matrix(&self) -> MomentMatrix {
        MomentMatrix(Mat2([
            [-self.a11, self.n1.z2_moment()],
            [self.a21 + self.n2.z1_moment(), self.n2.z2_moment()],
        ]))
    }

    /// Splits jumps at the rectangle `A_r = (r1, inf) x (r2, inf)`: returns
    /// the generalized mechanism governing the process with the `A_r` jumps
    /// removed, together with the excess masses `(n1(A_r), n2(A_r))`.
    pub fn truncate(&self, r: [f64; 2]) -> (TruncatedMechanism, [f64; 2]) {
        let n1_rest = self.n1.restricted_outside(r);
        let n2_rest = self.n2.restricted_outside(r);
        let excess = [self.n1.mass_in_rect(r), self.n2.mass_in_rect(r)];
        let trunc = TruncatedMechanism {
            a11r: self.a11 + (self.n1.z1_moment() - n1_rest.z1_moment()),
            a21r: self.a21 + n2_rest.z1_moment(),
            b11r: n1_rest.z2_moment(),
            b21r: n2_rest.z2_moment(),
            alpha: self.alpha,
            n1_rest,
            n2_rest,
        };
        (trunc, excess)
    }

    /// Spectral summary of `H` plus the hypotheses of the ergodicity and
    /// stationarity theorems.
    pub fn stability_report(&self) -> StabilityReport {
        let h = self.moment_matrix();
        let (l1, l2) = h.0.eigenvalues();
        StabilityReport {
            eigenvalues: (l1, l2),
            det: h.0.det(),
            trace: h.0.trace(),
            thm62_hypothesis: h.0.det() > 0.0 && h.0.trace() < 0.0,
            negative_real_parts: l1.re < 0.0 && l2.re < 0.0,
        }
    }

    /// `kappa = int z1 /\ z1^2 n1(dz)`.
    pub fn kappa(&self) -> f64 {
        self.n1.z1_min_sq_moment()
    }

    /// `theta = n2(R+ x {-1})`.
    pub fn theta(&self) -> f64 {
        self.n2.mass_at_z2_minus_one()
    }
}

fn check_lambda(lambda: [f64; 2]) -> Result<()> {
    if lambda[0] < 0.0 || lambda[1] < 0.0 {
        return Err(Error::NegativeLambda(lambda[0], lambda[1]));
    }
    Ok(())
}

/// Generalized mechanism record produced by [`BranchingMechanism::truncate`]:
/// both coordinates of the remaining jumps are compensated, so the linear
/// part needs all four coefficients.
///
/// ```text
/// Phi1^r(l) = -a11r l1 + b11r l2 - alpha l1^2 - int_{M \ A_r} (e^{-<l,z>} - 1 + <l,z>) n1(dz)
/// Phi2^r(l) =  a21r l1 + b21r l2 - int_{M_{-1} \ A_r} (e^{-<l,z>} - 1 + <l,z>) n2(dz)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMechanism {
    pub a11r: f64,
    pub a21r: f64,
    pub b11r: f64,
    pub b21r: f64,
    pub alpha: f64,
    pub n1_rest: LevyAtomMeasure,
    pub n2_rest: LevyAtomMeasure,
}

impl TruncatedMechanism {
    pub fn phi1r(&self, lambda: [f64; 2]) -> f64 {
        -self.a11r * lambda[0] + self.b11r * lambda[1]
            - self.alpha * lambda[0] * lambda[0]
            - self.n1_rest.sum_fully_compensated(lambda)
    }

    pub fn phi2r(&self, lambda: [f64; 2]) -> f64 {
        self.a21r * lambda[0] + self.b21r * lambda[1]
            - self.n2_rest.sum_fully_compensated(lambda)
    }
}

/// Immigration mechanism `Psi(l) = b l1 + int (1 - e^{-<l,z>}) m(dz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmigrationMechanism {
    /// Constant drift into the continuous coordinate, nonnegative.
    pub b: f64,
    /// Compound-Poisson immigration measure; atoms in `M \ {0}`.
    pub m: LevyAtomMeasure,
}

impl ImmigrationMechanism {
    pub fn new(b: f64, m: LevyAtomMeasure) -> Self {
        ImmigrationMechanism { b, m }
    }

    pub fn zero() -> Self {
        ImmigrationMechanism {
            b: 0.0,
            m: LevyAtomMeasure::empty(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.b == 0.0 && self.m.is_empty()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.b >= 0.0 && self.b.is_finite()) {
            out.push(Violation {
                field: "b".to_string(),
                message: format!("must be >= 0, got {}", self.b),
            });
        }
        for (i, a) in self.m.atoms().iter().enumerate() {
            let field = format!("m[{i}]");
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                out.push(Violation {
                    field: field.clone(),
                    message: format!("weight must be > 0, got {}", a.weight),
                });
            }
            if !(a.z1 >= 0.0 && a.z1.is_finite()) {
                out.push(Violation {
                    field: field.clone(),
                    message: format!("z1 must be >= 0, got {}", a.z1),
                });
            }
            if a.z2 < 0 {
                out.push(Violation {
                    field: field.clone(),
                    message: format!("z2 < 0 in m, got {}", a.z2),
                });
            }
            if a.z1 == 0.0 && a.z2 == 0 {
                out.push(Violation {
                    field,
                    message: "origin atom in m".to_string(),
                });
            }
        }
        out
    }

    /// `Psi(lambda)`. Domain error on negative lambda.
    pub fn psi(&self, lambda: [f64; 2]) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(self.psi_raw(lambda))
    }

    pub(crate) fn psi_raw(&self, lambda: [f64; 2]) -> f64 {
        self.b * lambda[0] + self.m.sum_one_minus_exp(lambda)
    }
}

/// A point of the state space `M = R+ x N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedState {
    pub y1: f64,
    pub y2: u64,
}

impl MixedState {
    pub fn new(y1: f64, y2: u64) -> Self {
        MixedState { y1, y2 }
    }

    pub const ORIGIN: MixedState = MixedState { y1: 0.0, y2: 0 };

    pub fn as_vec(&self) -> [f64; 2] {
        [self.y1, self.y2 as f64]
    }

    pub fn add(&self, other: &MixedState) -> MixedState {
        MixedState {
            y1: self.y1 + other.y1,
            y2: self.y2 + other.y2,
        }
    }

    /// Coordinatewise `(self - other)_+`; the integer coordinate stays in N.
    pub fn pos_part(&self, other: &MixedState) -> MixedState {
        MixedState {
            y1: (self.y1 - other.y1).max(0.0),
            y2: self.y2.saturating_sub(other.y2),
        }
    }

    /// Coordinatewise minimum, `x /\ y = x - (x - y)_+`.
    pub fn min(&self, other: &MixedState) -> MixedState {
        MixedState {
            y1: self.y1.min(other.y1),
            y2: self.y2.min(other.y2),
        }
    }
}

/// First-moment matrix of a mechanism; see
/// [`BranchingMechanism::moment_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatrix(pub Mat2);

impl MomentMatrix {
    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn det(&self) -> f64 {
        self.0.det()
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.0 .0
    }
}

/// Output of [`BranchingMechanism::stability_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// Eigenvalues of `H` ordered by descending real part.
    pub eigenvalues: (Complex64, Complex64),
    pub det: f64,
    pub trace: f64,
    /// `det H > 0` and `tr H < 0`.
    pub thm62_hypothesis: bool,
    /// All eigenvalues have strictly negative real parts.
    pub negative_real_parts: bool,
}

// ---------------------------------------------------------------------------
// Mechanism specification files (JSON).
//
// {
//   "branching": { "a11": ..., "a21": ..., "alpha": ...,
//                  "n1": [[z1, z2, w], ...], "n2": [[z1, z2, w], ...] },
//   "immigration": { "b": ..., "m": [[z1, z2, w], ...] }    (optional)
// }
//
// Unknown keys are rejected.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismFile {
    pub branching: BranchingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immigration: Option<ImmigrationSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingSection {
    pub a11: f64,
    pub a21: f64,
    pub alpha: f64,
    pub n1: Vec<(f64, i64, f64)>,
    pub n2: Vec<(f64, i64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmigrationSection {
    pub b: f64,
    pub m: Vec<(f64, i64, f64)>,
}

impl MechanismFile {
    pub fn parse(json: &str) -> Result<MechanismFile> {
        serde_json::from_str(json).map_err(|e| Error::MechanismFile(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<MechanismFile> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::MechanismFile(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn branching_mechanism(&self) -> BranchingMechanism {
        BranchingMechanism::new(
            self.branching.a11,
            self.branching.a21,
            self.branching.alpha,
            LevyAtomMeasure::from_triples(&self.branching.n1),
            LevyAtomMeasure::from_triples(&self.branching.n2),
        )
    }

    pub fn immigration_mechanism(&self) -> Option<ImmigrationMechanism> {
        self.immigration.as_ref().map(|imm| {
            ImmigrationMechanism::new(imm.b, LevyAtomMeasure::from_triples(&imm.m))
        })
    }
}
