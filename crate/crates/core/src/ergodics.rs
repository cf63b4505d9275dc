//! Wasserstein-1 machinery and ergodicity certification.
//!
//! Exact W1 between equal-size empirical measures via optimal assignment,
//! the three-component coupling of the transition probabilities, analytic
//! upper/lower bounds from the moment flow, the explicit exponential rate
//! constants, and the stationarity criterion for the process with
//! immigration.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::laplace::{matrix_exponential, moment_flow};
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, MixedState};
use crate::simulate::{ensemble, replica_rng, simulate_terminal_state, EnsembleSample};

/// Largest sample size the exact (cubic) assignment solver accepts.
pub const ASSIGNMENT_BUDGET: usize = 2048;

/// Exact W1 between the uniform empirical measures carried by two
/// equal-size samples: optimal-assignment cost under Euclidean distances,
/// divided by the sample size.
pub fn wasserstein1_exact(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SampleSizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.len() > ASSIGNMENT_BUDGET {
        return Err(Error::SampleTooLarge(a.len(), ASSIGNMENT_BUDGET));
    }
    let n = a.len();
    let mut cost = vec![0.0f64; n * n];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let dx = pa[0] - pb[0];
            let dy = pa[1] - pb[1];
            cost[i * n + j] = (dx * dx + dy * dy).sqrt();
        }
    }
    Ok(assignment_cost(&cost, n) / n as f64)
}

/// Minimum-cost perfect matching on a square cost matrix by the Hungarian
/// algorithm with row/column potentials, O(n^3).
fn assignment_cost(cost: &[f64], n: usize) -> f64 {
    // 1-based arrays with column 0 as the virtual root of the alternating tree.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Unwind the alternating path.
        while j0 != 0 {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }
    (1..=n)
        .map(|j| cost[(matched_row[j] - 1) * n + (j - 1)])
        .sum()
}

/// Bootstrap standard error of the empirical W1 between two samples:
/// both samples are resampled with replacement and the assignment value is
/// recomputed, `resamples` times.
pub fn bootstrap_w1_se(
    a: &[[f64; 2]],
    b: &[[f64; 2]],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SampleSizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() || resamples < 2 {
        return Err(Error::EmptySample);
    }
    let n = a.len();
    let values: Result<Vec<f64>> = (0..resamples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replica_rng(seed, k);
            let ra: Vec<[f64; 2]> = (0..n).map(|_| a[rng.random_range(0..n)]).collect();
            let rb: Vec<[f64; 2]> = (0..n).map(|_| b[rng.random_range(0..n)]).collect();
            wasserstein1_exact(&ra, &rb)
        })
        .collect();
    let values = values?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Paired terminal samples from the coupling of `P_t(x, .)` and
/// `P_t(y, .)`: three independent copies started from `x /\ y`, `(x - y)_+`
/// and `(x - y)_-`, combined as `(g0 + g1, g0 + g2)`. Row `i` of both
/// outputs shares the `g0` component; the marginals are exactly the two
/// transition laws.
pub fn coupled_sample(
    mech: &BranchingMechanism,
    x: &MixedState,
    y: &MixedState,
    t: f64,
    replicas: u64,
    dt: f64,
    seed: u64,
) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    if replicas == 0 {
        return Err(Error::ZeroReplicas);
    }
    let base = x.min(y);
    let plus = x.pos_part(y);
    let minus = y.pos_part(x);
    let rows: Result<Vec<([f64; 2], [f64; 2])>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let g0 = simulate_terminal_state(mech, None, &base, t, dt, &mut replica_rng(seed, 3 * i))?;
            let g1 =
                simulate_terminal_state(mech, None, &plus, t, dt, &mut replica_rng(seed, 3 * i + 1))?;
            let g2 =
                simulate_terminal_state(mech, None, &minus, t, dt, &mut replica_rng(seed, 3 * i + 2))?;
            let a = g0.add(&g1).as_vec();
            let b = g0.add(&g2).as_vec();
            Ok((a, b))
        })
        .collect();
    let rows = rows?;
    Ok(rows.into_iter().unzip())
}

/// Analytic W1 bounds between `P_t(x, .)` and `P_t(y, .)`:
/// `|<x - y, pi(t, 1)>| <= W1 <= sum_i |x_i - y_i| pi_i(t, 1)`.
pub fn w1_bounds(
    mech: &BranchingMechanism,
    x: &MixedState,
    y: &MixedState,
    t: f64,
) -> Result<(f64, f64)> {
    let pi = moment_flow(mech, [1.0, 1.0], t)?.value();
    let d = [x.y1 - y.y1, x.y2 as f64 - y.y2 as f64];
    let lower = (d[0] * pi[0] + d[1] * pi[1]).abs();
    let upper = d[0].abs() * pi[0] + d[1].abs() * pi[1];
    Ok((lower, upper))
}

/// Explicit exponential-ergodicity constants: the spectral pair of `H`, the
/// four coefficients expressing `pi(t, 1)` as a combination of the two
/// exponentials, their absolute sum `vartheta`, and the rate `-lambda1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicRate {
    pub lambda1: f64,
    pub lambda2: f64,
    pub theta11: f64,
    pub theta12: f64,
    pub theta21: f64,
    pub theta22: f64,
    pub vartheta: f64,
    pub rate: f64,
}

/// Computes the ergodic-rate constants under the hypotheses
/// `det H > 0`, `tr H < 0`. The coefficient formulas require `H12 > 0`; the
/// decoupled case `H12 = H21 = 0` is handled directly, and the untreated
/// case `H12 = 0 < H21` is reported as unsupported.
pub fn ergodic_rate(mech: &BranchingMechanism) -> Result<ErgodicRate> {
    let h = mech.moment_matrix().0;
    let (det, tr) = (h.det(), h.trace());
    if !(det > 0.0 && tr < 0.0) {
        return Err(Error::ErgodicHypotheses { det, tr });
    }
    let h11 = h.0[0][0];
    let h12 = h.0[0][1];
    let h21 = h.0[1][0];
    let h22 = h.0[1][1];

    let rate = if h12 == 0.0 && h21 == 0.0 {
        let lambda1 = h11.max(h22);
        let lambda2 = h11.min(h22);
        let (theta11, theta12) = if h11 >= h22 { (1.0, 0.0) } else { (0.0, 1.0) };
        let (theta21, theta22) = if h22 >= h11 { (1.0, 0.0) } else { (0.0, 1.0) };
        ErgodicRate {
            lambda1,
            lambda2,
            theta11,
            theta12,
            theta21,
            theta22,
            vartheta: theta11 + theta21 + theta12.abs() + theta22.abs(),
            rate: -lambda1,
        }
    } else if h12 > 0.0 {
        let delta = (h11 - h22) * (h11 - h22) + 4.0 * h12 * h21;
        if delta <= 0.0 {
            return Err(Error::UnsupportedSpectralShape);
        }
        let sqrt_delta = delta.sqrt();
        let lambda1 = 0.5 * (tr + sqrt_delta);
        let lambda2 = lambda1 - sqrt_delta;
        let theta11 = (h11 + h12 - lambda2) / sqrt_delta;
        let theta12 = (lambda1 - h11 - h12) / sqrt_delta;
        let theta21 = (h11 + h12 - lambda2) * (lambda1 - h11) / (sqrt_delta * h12);
        let theta22 = (lambda1 - h11 - h12) * (lambda2 - h11) / (sqrt_delta * h12);
        ErgodicRate {
            lambda1,
            lambda2,
            theta11,
            theta12,
            theta21,
            theta22,
            vartheta: theta11 + theta21 + theta12.abs() + theta22.abs(),
            rate: -lambda1,
        }
    } else {
        return Err(Error::UnsupportedSpectralShape);
    };

    // The coefficients must reproduce pi(t, 1) exactly.
    for t in [0.1, 1.0, 5.0] {
        let pi = matrix_exponential(&h, t).mul_vec([1.0, 1.0]);
        let p1 = rate.theta11 * (rate.lambda1 * t).exp() + rate.theta12 * (rate.lambda2 * t).exp();
        let p2 = rate.theta21 * (rate.lambda1 * t).exp() + rate.theta22 * (rate.lambda2 * t).exp();
        if (p1 - pi[0]).abs() > 1e-10 || (p2 - pi[1]).abs() > 1e-10 {
            return Err(Error::IdentityCheckFailed(format!(
                "theta representation of pi(t,1) off at t = {t}: ({p1}, {p2}) vs ({}, {})",
                pi[0], pi[1]
            )));
        }
    }
    Ok(rate)
}

/// Stationarity verdict for the process with immigration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityReport {
    /// All eigenvalues of `H` have strictly negative real parts.
    pub eigen_ok: bool,
    /// `sum_{|z| >= 1} w log |z|` over the immigration atoms; always finite
    /// for an atomic measure, reported for completeness.
    pub log_moment: f64,
    pub stationary_exists: bool,
}

/// Checks the stationarity criterion: negative spectrum plus a finite
/// log-moment of the immigration measure (automatic here).
pub fn stationarity_check(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
) -> StationarityReport {
    let eigen_ok = mech.stability_report().negative_real_parts;
    StationarityReport {
        eigen_ok,
        log_moment: imm.m.log_moment(),
        stationary_exists: eigen_ok,
    }
}

/// Default burn-in: the smallest `t` with `vartheta e^{-rate t} <= 1e-3`.
pub fn default_burn_in(mech: &BranchingMechanism) -> Result<f64> {
    let er = ergodic_rate(mech)?;
    Ok((er.vartheta * 1e3).ln() / er.rate)
}

/// Near-stationary sample of the process with immigration: terminal states
/// at `t = burn_in` started from the origin. With `burn_in = None` the
/// default envelope-based burn-in is used.
pub fn stationary_sample(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    burn_in: Option<f64>,
    replicas: u64,
    dt: f64,
    seed: u64,
) -> Result<EnsembleSample> {
    if !stationarity_check(mech, imm).stationary_exists {
        return Err(Error::NoStationaryLaw);
    }
    let t = match burn_in {
        Some(t) => t,
        None => default_burn_in(mech)?,
    };
    ensemble(mech, Some(imm), &MixedState::ORIGIN, t, dt, replicas, seed)
}

/// JSON-serializable report of a W1 sandwich experiment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct W1Report {
    pub lower: f64,
    pub upper: f64,
    pub empirical_w1: f64,
    pub bootstrap_se: f64,
    pub rate: f64,
    pub vartheta: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::LevyAtomMeasure;
    use crate::oracle::w1_bruteforce;
    use rand::Rng;

    fn mech0() -> BranchingMechanism {
        BranchingMechanism::new(
            0.5,
            0.2,
            0.3,
            LevyAtomMeasure::from_triples(&[(1.0, 1, 0.4)]),
            LevyAtomMeasure::from_triples(&[(0.5, -1, 1.0), (0.0, 1, 0.2)]),
        )
    }

    #[test]
    fn w1_identical_samples_is_zero() {
        let a = vec![[0.3, 1.0], [2.0, 0.0], [0.7, 3.0]];
        assert_eq!(wasserstein1_exact(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn w1_single_point_is_euclidean_distance() {
        let d = wasserstein1_exact(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn w1_size_checks() {
        assert!(matches!(
            wasserstein1_exact(&[[0.0; 2]], &[[0.0; 2], [1.0, 0.0]]),
            Err(Error::SampleSizeMismatch(1, 2))
        ));
        let big = vec![[0.0; 2]; ASSIGNMENT_BUDGET + 1];
        assert!(matches!(
            wasserstein1_exact(&big, &big),
            Err(Error::SampleTooLarge(_, _))
        ));
    }

    #[test]
    fn w1_matches_sorted_oracle_in_one_dimension() {
        let mut rng = replica_rng(100, 0);
        let n = 64;
        let a: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>() * 3.0, 0.0]).collect();
        let b: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>() * 3.0, 0.0]).collect();
        let mut sa: Vec<f64> = a.iter().map(|p| p[0]).collect();
        let mut sb: Vec<f64> = b.iter().map(|p| p[0]).collect();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let oracle: f64 = sa
            .iter()
            .zip(sb.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n as f64;
        let got = wasserstein1_exact(&a, &b).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn w1_matches_bruteforce_on_tiny_samples() {
        let mut rng = replica_rng(7, 1);
        for n in 2..=7usize {
            let a: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random::<f64>() * 2.0, (rng.random::<f64>() * 3.0).floor()])
                .collect();
            let b: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random::<f64>() * 2.0, (rng.random::<f64>() * 3.0).floor()])
                .collect();
            let exact = wasserstein1_exact(&a, &b).unwrap();
            let brute = w1_bruteforce(&a, &b).unwrap();
            assert!((exact - brute).abs() < 1e-12, "n = {n}: {exact} vs {brute}");
        }
    }

    #[test]
    fn w1_is_symmetric_and_satisfies_triangle_inequality() {
        let mut rng = replica_rng(13, 2);
        let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<[f64; 2]> {
            (0..16)
                .map(|_| [rng.random::<f64>(), (rng.random::<f64>() * 2.0).floor()])
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let c = draw(&mut rng);
        let ab = wasserstein1_exact(&a, &b).unwrap();
        let ba = wasserstein1_exact(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let bc = wasserstein1_exact(&b, &c).unwrap();
        let ac = wasserstein1_exact(&a, &c).unwrap();
        assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn coupled_sample_with_equal_states_has_zero_cost() {
        let m = mech0();
        let x = MixedState::new(1.0, 2);
        let (a, b) = coupled_sample(&m, &x, &x, 0.5, 32, 1e-3, 5).unwrap();
        for (ra, rb) in a.iter().zip(b.iter()) {
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn coupled_sample_from_origin_second_marginal_is_zero() {
        let m = mech0();
        let x = MixedState::new(2.0, 3);
        let (_, b) = coupled_sample(&m, &x, &MixedState::ORIGIN, 0.5, 32, 1e-3, 5).unwrap();
        for rb in &b {
            assert_eq!(*rb, [0.0, 0.0]);
        }
    }

    #[test]
    fn coupled_cost_dominates_exact_w1() {
        let m = mech0();
        let x = MixedState::new(2.0, 3);
        let y = MixedState::new(1.0, 1);
        let (a, b) = coupled_sample(&m, &x, &y, 1.0, 128, 1e-3, 21).unwrap();
        let mean_cost: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .sum::<f64>()
            / a.len() as f64;
        let w1 = wasserstein1_exact(&a, &b).unwrap();
        assert!(
            mean_cost >= w1 - 1e-12,
            "coupling cost {mean_cost} below assignment optimum {w1}"
        );
    }

    #[test]
    fn w1_bounds_examples() {
        let m = mech0();
        let x = MixedState::new(2.0, 3);
        let y = MixedState::new(1.0, 1);
        assert_eq!(w1_bounds(&m, &x, &x, 1.0).unwrap(), (0.0, 0.0));
        let (lo, up) = w1_bounds(&m, &x, &y, 0.0).unwrap();
        assert!((lo - 3.0).abs() < 1e-12 && (up - 3.0).abs() < 1e-12);
        let (lo, up) = w1_bounds(&m, &x, &y, 1.0).unwrap();
        let expected = 3.0 * (-0.1f64).exp();
        assert!((lo - expected).abs() < 1e-10, "{lo} vs {expected}");
        assert!((up - expected).abs() < 1e-10);
    }

    #[test]
    fn ergodic_rate_diagonal_case() {
        // H = diag(-1, -2).
        let m = BranchingMechanism::new(
            1.0,
            0.0,
            0.0,
            LevyAtomMeasure::empty(),
            LevyAtomMeasure::from_triples(&[(0.0, -1, 2.0)]),
        );
        let er = ergodic_rate(&m).unwrap();
        assert_eq!((er.lambda1, er.lambda2), (-1.0, -2.0));
        assert_eq!(er.rate, 1.0);
        assert_eq!(er.vartheta, 2.0);
    }

    #[test]
    fn ergodic_rate_reference_constants() {
        let er = ergodic_rate(&mech0()).unwrap();
        assert!((er.lambda1 + 0.1).abs() < 1e-12);
        assert!((er.lambda2 + 1.2).abs() < 1e-12);
        assert!((er.theta11 - 1.0).abs() < 1e-12);
        assert!(er.theta12.abs() < 1e-12);
        assert!((er.theta21 - 1.0).abs() < 1e-12);
        assert!(er.theta22.abs() < 1e-12);
        assert!((er.vartheta - 2.0).abs() < 1e-12);
        assert!((er.rate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ergodic_rate_rejects_bad_hypotheses_and_unsupported_shape() {
        let unstable = BranchingMechanism::new(
            -1.0,
            0.0,
            0.0,
            LevyAtomMeasure::empty(),
            LevyAtomMeasure::empty(),
        );
        assert!(matches!(
            ergodic_rate(&unstable),
            Err(Error::ErgodicHypotheses { .. })
        ));
        // H12 = 0 with H21 > 0 is not treated.
        let lower = BranchingMechanism::new(
            0.5,
            0.2,
            0.0,
            LevyAtomMeasure::empty(),
            LevyAtomMeasure::from_triples(&[(0.5, -1, 1.0)]),
        );
        assert!(matches!(
            ergodic_rate(&lower),
            Err(Error::UnsupportedSpectralShape)
        ));
    }

    #[test]
    fn stationarity_check_examples() {
        let m = mech0();
        let empty = ImmigrationMechanism::zero();
        let rep = stationarity_check(&m, &empty);
        assert_eq!(rep.log_moment, 0.0);
        assert!(rep.eigen_ok && rep.stationary_exists);

        let imm = ImmigrationMechanism::new(
            0.0,
            LevyAtomMeasure::from_triples(&[(std::f64::consts::E, 0, 2.0)]),
        );
        let rep = stationarity_check(&m, &imm);
        assert!((rep.log_moment - 2.0).abs() < 1e-12);

        let unstable = BranchingMechanism::new(
            -1.0,
            0.0,
            0.0,
            LevyAtomMeasure::empty(),
            LevyAtomMeasure::empty(),
        );
        assert!(!stationarity_check(&unstable, &imm).stationary_exists);
    }

    #[test]
    fn stationary_sample_without_immigration_stays_at_origin() {
        let m = mech0();
        let sample =
            stationary_sample(&m, &ImmigrationMechanism::zero(), Some(5.0), 16, 1e-2, 3).unwrap();
        for s in &sample.states {
            assert_eq!((s.y1, s.y2), (0.0, 0));
        }
    }

    #[test]
    fn default_burn_in_reaches_the_envelope_target() {
        let m = mech0();
        let t = default_burn_in(&m).unwrap();
        let er = ergodic_rate(&m).unwrap();
        assert!(er.vartheta * (-er.rate * t).exp() <= 1e-3 + 1e-12);
    }
}
