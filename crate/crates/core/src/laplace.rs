//! Deterministic analytics: Laplace-exponent flows, moment flows, jump-law
//! survival probabilities, decay envelopes, and the stationary Laplace
//! functional.
//!
//! The central object is the flow `V(t, lambda)` solving
//!
//! ```text
//! dV/dt = (Phi1(V), Phi2(V)),   V(0) = lambda,
//! ```
//!
//! which determines the transition semigroup through
//! `E_x exp(-<lambda, Y(t)>) = exp(-<x, V(t, lambda)>)`. All integrations use
//! fixed-step classical RK4; the flows are smooth and dissipative in the
//! regimes studied here, and fixed steps make the grids reusable for the
//! quadratures layered on top.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2};
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, MixedState};

/// Nominal integrator step used by the transition/functional wrappers.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Undershoot past this magnitude is a hard integration error; anything
/// smaller is round-off and gets clamped to zero.
const UNDERSHOOT_TOL: f64 = 1e-12;

/// Values of a flow on a uniform time grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrid<V> {
    times: Vec<f64>,
    values: Vec<V>,
    step: f64,
}

impl<V: Copy> FlowGrid<V> {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    /// Nominal integrator step the grid was built with.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at the final grid time.
    pub fn terminal(&self) -> V {
        *self.values.last().expect("grid is never empty")
    }

    /// Value at the grid point closest to `t`.
    pub fn value_near(&self, t: f64) -> V {
        let horizon = *self.times.last().expect("grid is never empty");
        let idx = if horizon == 0.0 {
            0
        } else {
            ((t / horizon * (self.len() - 1) as f64).round() as usize).min(self.len() - 1)
        };
        self.values[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, V)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

impl FlowGrid<[f64; 2]> {
    /// CSV with header `t,v1,v2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v1,v2\n");
        for (t, v) in self.iter() {
            out.push_str(&format!("{},{},{}\n", t, v[0], v[1]));
        }
        out
    }
}

fn grid_layout(horizon: f64, step: f64) -> Result<(usize, f64)> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::NonPositiveStep(step));
    }
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(Error::NegativeHorizon(horizon));
    }
    if horizon == 0.0 {
        return Ok((0, step));
    }
    let n = (horizon / step).ceil() as usize;
    Ok((n.max(1), horizon / n.max(1) as f64))
}

/// RK4 for an autonomous pair system whose exact solution is componentwise
/// nonnegative. Stage inputs are clamped at zero before evaluating the
/// vector field; committed states below `-1e-12` abort the integration.
fn integrate_pair<F>(rhs: F, v0: [f64; 2], horizon: f64, step: f64) -> Result<FlowGrid<[f64; 2]>>
where
    F: Fn([f64; 2]) -> [f64; 2],
{
    let (n, h) = grid_layout(horizon, step)?;
    let eval = |v: [f64; 2]| rhs([v[0].max(0.0), v[1].max(0.0)]);
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    times.push(0.0);
    values.push(v0);
    let mut v = v0;
    for i in 0..n {
        let k1 = eval(v);
        let k2 = eval([v[0] + 0.5 * h * k1[0], v[1] + 0.5 * h * k1[1]]);
        let k3 = eval([v[0] + 0.5 * h * k2[0], v[1] + 0.5 * h * k2[1]]);
        let k4 = eval([v[0] + h * k3[0], v[1] + h * k3[1]]);
        let mut next = [
            v[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            v[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        let t = (i + 1) as f64 * h;
        if !next[0].is_finite() || !next[1].is_finite() {
            return Err(Error::NonFiniteFlow {
                t,
                v1: next[0],
                v2: next[1],
            });
        }
        if next[0] < -UNDERSHOOT_TOL || next[1] < -UNDERSHOOT_TOL {
            return Err(Error::FlowUndershoot {
                t,
                v1: next[0],
                v2: next[1],
            });
        }
        next = [next[0].max(0.0), next[1].max(0.0)];
        times.push(t);
        values.push(next);
        v = next;
    }
    Ok(FlowGrid {
        times,
        values,
        step,
    })
}

/// Composite Simpson on uniformly spaced samples; the last three panels use
/// the 3/8 rule when the panel count is odd.
fn simpson_uniform(vals: &[f64], h: f64) -> f64 {
    let n = vals.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (vals[0] + vals[1]),
        _ => {
            let even_panels = if n % 2 == 0 { n } else { n - 3 };
            let mut acc = 0.0;
            if even_panels > 0 {
                acc += vals[0] + vals[even_panels];
                for (i, &v) in vals.iter().enumerate().take(even_panels).skip(1) {
                    acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
                }
                acc *= h / 3.0;
            }
            if n % 2 == 1 {
                // 3/8 rule over the trailing three panels.
                let a = even_panels;
                acc += 3.0 * h / 8.0
                    * (vals[a] + 3.0 * vals[a + 1] + 3.0 * vals[a + 2] + vals[a + 3]);
            }
            acc
        }
    }
}

/// Solves `dV/dt = (Phi1(V), Phi2(V))`, `V(0) = lambda` on `[0, horizon]`.
pub fn solve_v(
    mech: &BranchingMechanism,
    lambda: [f64; 2],
    horizon: f64,
    step: f64,
) -> Result<FlowGrid<[f64; 2]>> {
    if lambda[0] < 0.0 || lambda[1] < 0.0 {
        return Err(Error::NegativeLambda(lambda[0], lambda[1]));
    }
    integrate_pair(
        |v| [mech.phi1_raw(v), mech.phi2_raw(v)],
        lambda,
        horizon,
        step,
    )
}

/// Transition Laplace transform `exp(-<x, V(t, lambda)>)`.
pub fn transition_laplace(
    mech: &BranchingMechanism,
    x: &MixedState,
    lambda: [f64; 2],
    t: f64,
) -> Result<f64> {
    let v = solve_v(mech, lambda, t, DEFAULT_STEP)?.terminal();
    let xv = x.as_vec();
    Ok((-(xv[0] * v[0] + xv[1] * v[1])).exp())
}

/// Transition Laplace transform of the process with immigration,
/// `exp(-<x, V(t,lambda)> - int_0^t Psi(V(s,lambda)) ds)`, the time integral
/// by composite Simpson on the RK4 grid.
pub fn transition_laplace_imm(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    x: &MixedState,
    lambda: [f64; 2],
    t: f64,
) -> Result<f64> {
    let grid = solve_v(mech, lambda, t, DEFAULT_STEP)?;
    let psi_vals: Vec<f64> = grid.values().iter().map(|&v| imm.psi_raw(v)).collect();
    let h = if grid.len() > 1 {
        grid.times()[1] - grid.times()[0]
    } else {
        0.0
    };
    let integral = simpson_uniform(&psi_vals, h);
    let v = grid.terminal();
    let xv = x.as_vec();
    Ok((-(xv[0] * v[0] + xv[1] * v[1]) - integral).exp())
}

/// Both routes to the first-moment flow `pi(t, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentFlow {
    /// RK4 solution of `dpi/dt = H pi`.
    pub rk4: [f64; 2],
    /// Closed form `exp(tH) lambda`.
    pub closed: [f64; 2],
}

impl MomentFlow {
    pub fn value(&self) -> [f64; 2] {
        self.closed
    }
}

/// Moment flow `pi(t, lambda)` computed independently by RK4 and by the
/// matrix exponential; the two must agree to 1e-6 (relative, so the check
/// stays meaningful for supercritical flows) or the call fails.
pub fn moment_flow(mech: &BranchingMechanism, lambda: [f64; 2], t: f64) -> Result<MomentFlow> {
    if lambda[0] < 0.0 || lambda[1] < 0.0 {
        return Err(Error::NegativeLambda(lambda[0], lambda[1]));
    }
    let h = mech.moment_matrix().0;
    let rk4 = integrate_pair(|v| h.mul_vec(v), lambda, t, DEFAULT_STEP)?.terminal();
    let closed = matrix_exponential(&h, t).mul_vec(lambda);
    let diff = (rk4[0] - closed[0]).abs().max((rk4[1] - closed[1]).abs());
    let scale = 1.0 + closed[0].abs().max(closed[1].abs());
    if diff > 1e-6 * scale {
        return Err(Error::MomentFlowMismatch(diff));
    }
    Ok(MomentFlow { rk4, closed })
}

/// Mean state `(E Y1(t), E Y2(t)) = exp(tH)^T x`.
pub fn mean_state(mech: &BranchingMechanism, x: &MixedState, t: f64) -> [f64; 2] {
    matrix_exponential(&mech.moment_matrix().0, t)
        .transpose()
        .mul_vec(x.as_vec())
}

/// `exp(tH)` for a 2x2 matrix; spectral formula away from the defective
/// case, scaling-and-squaring of the order-13 series near it.
pub fn matrix_exponential(h: &Mat2, t: f64) -> Mat2 {
    linalg::expm(h, t)
}

/// Survival function of the first jump exceeding `r` in both coordinates:
/// `t -> P_y(tau_r > t) = exp(-<y, Vbar^r(t)>)` where `Vbar^r` solves the
/// truncated flow with constant source `n(A_r)`.
pub fn survival_tau(
    mech: &BranchingMechanism,
    y: &MixedState,
    r: [f64; 2],
    horizon: f64,
    step: f64,
) -> Result<FlowGrid<f64>> {
    let (trunc, excess) = mech.truncate(r);
    let grid = integrate_pair(
        |v| [trunc.phi1r(v) + excess[0], trunc.phi2r(v) + excess[1]],
        [0.0, 0.0],
        horizon,
        step,
    )?;
    let yv = y.as_vec();
    Ok(FlowGrid {
        times: grid.times.clone(),
        values: grid
            .values
            .iter()
            .map(|v| (-(yv[0] * v[0] + yv[1] * v[1])).exp())
            .collect(),
        step,
    })
}

/// Small-mass asymptotic of `P_y(tau_r <= t)`:
/// `(y1, y2) . int_0^t exp(sH) ds . (n1(A_r), n2(A_r))^T`.
pub fn tau_asymptotic(mech: &BranchingMechanism, y: &MixedState, r: [f64; 2], t: f64) -> f64 {
    let masses = [mech.n1.mass_in_rect(r), mech.n2.mass_in_rect(r)];
    tau_asymptotic_with_masses(mech, y, masses, t)
}

/// Same bilinear form with the excess masses supplied directly (used to
/// verify the asymptotic regime with artificially scaled masses).
pub fn tau_asymptotic_with_masses(
    mech: &BranchingMechanism,
    y: &MixedState,
    masses: [f64; 2],
    t: f64,
) -> f64 {
    if masses == [0.0, 0.0] || t == 0.0 {
        return 0.0;
    }
    let integral = linalg::integral_expm(&mech.moment_matrix().0, t);
    let iv = integral.mul_vec(masses);
    let yv = y.as_vec();
    yv[0] * iv[0] + yv[1] * iv[1]
}

/// Integrated exponential functional
/// `E_y exp(-int_0^t <lambda, Y(s)> ds) = exp(-<y, Vbar(t)>)` where `Vbar`
/// solves the flow with constant source `lambda` started at zero.
pub fn integrated_functional(
    mech: &BranchingMechanism,
    y: &MixedState,
    lambda: [f64; 2],
    t: f64,
) -> Result<f64> {
    if lambda[0] < 0.0 || lambda[1] < 0.0 {
        return Err(Error::NegativeLambda(lambda[0], lambda[1]));
    }
    let grid = integrate_pair(
        |v| {
            [
                mech.phi1_raw(v) + lambda[0],
                mech.phi2_raw(v) + lambda[1],
            ]
        },
        [0.0, 0.0],
        t,
        DEFAULT_STEP,
    )?;
    let v = grid.terminal();
    let yv = y.as_vec();
    Ok((-(yv[0] * v[0] + yv[1] * v[1])).exp())
}

/// Laplace functional of the stationary law of the process with
/// immigration, `exp(-int_0^infty Psi(V(s, lambda)) ds)`.
///
/// The improper integral is cut at a horizon `T` certified by the decay
/// envelope: the tail is bounded by `L sqrt(2) c1 exp(-c2 T) / c2 <= 1e-10`
/// with `L` the Lipschitz constant of `Psi` near zero.
pub fn stationary_laplace(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    lambda: [f64; 2],
) -> Result<f64> {
    if lambda[0] < 0.0 || lambda[1] < 0.0 {
        return Err(Error::NegativeLambda(lambda[0], lambda[1]));
    }
    if !mech.stability_report().negative_real_parts {
        return Err(Error::NoStationaryLaw);
    }
    if imm.is_zero() || lambda == [0.0, 0.0] {
        return Ok(1.0);
    }
    let envelope = decay_envelope(mech, lambda)?;
    let lipschitz = (imm.b + imm.m.z1_moment()).max(imm.m.z2_moment());
    let horizon = if lipschitz == 0.0 || envelope.c1 == 0.0 {
        1.0
    } else {
        let t = (lipschitz * std::f64::consts::SQRT_2 * envelope.c1
            / (envelope.c2 * 1e-10))
            .ln()
            / envelope.c2;
        t.max(1.0)
    };
    let grid = solve_v(mech, lambda, horizon, DEFAULT_STEP)?;
    let psi_vals: Vec<f64> = grid.values().iter().map(|&v| imm.psi_raw(v)).collect();
    let h = grid.times()[1] - grid.times()[0];
    Ok((-simpson_uniform(&psi_vals, h)).exp())
}

/// Constants of the two-sided decay envelopes
/// `|V(t,lambda)| <= c1 exp(-c2 t)`, `V1 >= lambda1 exp(-A t)`,
/// `V2 >= lambda2 exp(-B t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayEnvelope {
    pub c1: f64,
    pub c2: f64,
    /// Lower-envelope exponent of the continuous coordinate,
    /// `|H11 - kappa - (alpha + kappa/2) c1|`.
    pub a: f64,
    /// Lower-envelope exponent of the integer coordinate, `2 theta e^{c1}`.
    pub b: f64,
    /// `int z1 /\ z1^2 n1(dz)`.
    pub kappa: f64,
    /// `n2(R+ x {-1})`.
    pub theta: f64,
}

/// Builds the decay envelope for a mechanism whose `H` has only eigenvalues
/// with negative real parts.
///
/// The constant `c` in `|exp(tH)| <= c exp(-c2 t)` comes from the
/// eigenvector condition number when the spectrum is real and well
/// separated, and from a dense-grid supremum of `|exp(tH)| exp(c2 t)`
/// (times a 1.01 margin) in the near-defective and complex cases.
///
/// A mechanism with a structurally inert integer coordinate (`Phi2 == 0` and
/// `H12 = 0`) is accepted even though `H` then has a zero eigenvalue: the
/// flow keeps `V2` constant and the envelope applies to flows started with
/// `lambda2 = 0`.
pub fn decay_envelope(mech: &BranchingMechanism, lambda: [f64; 2]) -> Result<DecayEnvelope> {
    if lambda[0] < 0.0 || lambda[1] < 0.0 {
        return Err(Error::NegativeLambda(lambda[0], lambda[1]));
    }
    let h = mech.moment_matrix().0;
    let report = mech.stability_report();
    let inert_second = mech.a21 == 0.0 && mech.n2.is_empty() && h.0[0][1] == 0.0;

    let (max_re, c) = if report.negative_real_parts {
        let max_re = report.eigenvalues.0.re.max(report.eigenvalues.1.re);
        let c2 = -max_re * (1.0 - 1e-6);
        let delta = h.discriminant();
        let c = if delta > 1e-10 {
            eigenvector_condition(&h, delta)
        } else {
            grid_sup_constant(&h, c2, max_re, delta)
        };
        (max_re, c)
    } else if inert_second && mech.a11 > 0.0 {
        // H = diag(-a11, 0): V2 is constant, the active block is scalar and
        // perfectly conditioned.
        (-mech.a11, 1.0)
    } else {
        return Err(Error::NoDecay);
    };

    let c2 = -max_re * (1.0 - 1e-6);
    let c1 = (lambda[0] * lambda[0] + lambda[1] * lambda[1]).sqrt() * c;
    let kappa = mech.kappa();
    let theta = mech.theta();
    Ok(DecayEnvelope {
        c1,
        c2,
        a: (h.0[0][0] - kappa - (mech.alpha + 0.5 * kappa) * c1).abs(),
        b: 2.0 * theta * c1.exp(),
        kappa,
        theta,
    })
}

/// `|P| |P^{-1}|` in the operator norm, with unit-length eigenvector columns.
fn eigenvector_condition(h: &Mat2, delta: f64) -> f64 {
    let tr = h.trace();
    let s = delta.sqrt();
    let eigs = [0.5 * (tr + s), 0.5 * (tr - s)];
    let mut cols = [[0.0f64; 2]; 2];
    for (k, &mu) in eigs.iter().enumerate() {
        // Null vector of H - mu I, choosing the numerically larger row.
        let a = [h.0[0][0] - mu, h.0[0][1]];
        let b = [h.0[1][0], h.0[1][1] - mu];
        let v = if a[0].abs().max(a[1].abs()) >= b[0].abs().max(b[1].abs()) {
            [-a[1], a[0]]
        } else {
            [-b[1], b[0]]
        };
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        cols[k] = [v[0] / norm, v[1] / norm];
    }
    let p = Mat2([[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]]);
    match p.inverse() {
        Some(pinv) => p.norm2() * pinv.norm2(),
        // Numerically parallel eigenvectors: fall back to the grid bound.
        None => grid_sup_constant(h, -h.trace() / 2.0 * (1.0 - 1e-6), h.trace() / 2.0, 0.0),
    }
}

/// `1.01 * sup_t |exp(tH)| exp(c2 t)` over a dense grid sized to cover the
/// supremum analytically.
fn grid_sup_constant(h: &Mat2, c2: f64, max_re: f64, delta: f64) -> f64 {
    let t_max = if delta < -1e-10 {
        // Complex pair: the modulating factor is periodic with period 2 pi / b.
        let b = 0.5 * (-delta).sqrt();
        (3.0 * std::f64::consts::TAU / b).max(10.0 / -max_re)
    } else {
        // (Near-)defective: |exp(tH)| <= (1 + M t) e^{max_re t}; the product
        // with e^{c2 t} peaks at t* = 1/delta' - 1/M.
        let m = h.add(&Mat2::diag(-max_re, -max_re)).norm2().max(1e-30);
        let delta_prime = -max_re * 1e-6;
        (2.0 * (1.0 / delta_prime - 1.0 / m).max(0.0)).max(10.0 / -max_re)
    };
    let n = 4000;
    let mut sup = 0.0f64;
    for i in 0..=n {
        let t = t_max * i as f64 / n as f64;
        let val = linalg::expm(h, t).norm2() * (c2 * t).exp();
        sup = sup.max(val);
    }
    1.01 * sup
}

/// Compound semigroup `F(z, t)` of the discrete-state branching process:
/// solves `dF/dt = a (g(F) - F)`, `F(0) = z`, clamped to `[0, 1]`.
pub fn db_flow(
    rate: f64,
    offspring: &[f64],
    z: f64,
    horizon: f64,
    step: f64,
) -> Result<FlowGrid<f64>> {
    check_probability_vector(offspring)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::OutOfRange(format!("z must lie in [0,1], got {z}")));
    }
    if rate <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "branching rate must be > 0, got {rate}"
        )));
    }
    let (n, h) = grid_layout(horizon, step)?;
    let u = |f: f64| {
        let f = f.clamp(0.0, 1.0);
        rate * (eval_generating(offspring, f) - f)
    };
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    times.push(0.0);
    values.push(z);
    let mut f = z;
    for i in 0..n {
        let k1 = u(f);
        let k2 = u(f + 0.5 * h * k1);
        let k3 = u(f + 0.5 * h * k2);
        let k4 = u(f + h * k3);
        f = (f + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).clamp(0.0, 1.0);
        times.push((i + 1) as f64 * h);
        values.push(f);
    }
    Ok(FlowGrid {
        times,
        values,
        step,
    })
}

pub(crate) fn check_probability_vector(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilityVector(sum));
    }
    Ok(())
}

pub(crate) fn eval_generating(p: &[f64], z: f64) -> f64 {
    // Horner evaluation of sum p_j z^j.
    p.iter().rev().fold(0.0, |acc, &pj| acc * z + pj)
}
