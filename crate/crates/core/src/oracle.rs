//! Independent brute-force verifiers used by the test suites of the other
//! modules: a truncated-state-space CTMC for discrete-state branching,
//! the closed-form Riccati solution of the diffusion special case, and a
//! permutation-exhaustive optimal-assignment cost.
//!
//! Everything here deliberately avoids the solvers it is meant to check.

use crate::error::{Error, Result};
use crate::laplace::check_probability_vector;

/// Rate matrix of a discrete-state branching process truncated to the states
/// `{0, ..., n-1}`, with the escaping rate mass recorded per state so that
/// truncation error can be bounded instead of ignored.
#[derive(Debug, Clone)]
pub struct TruncatedGenerator {
    /// Row-major `n x n` rate matrix; rows sum to `-leak[i]`.
    q: Vec<f64>,
    n: usize,
    /// Rate mass leaving the truncation window from each state.
    leak: Vec<f64>,
}

impl TruncatedGenerator {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn leak(&self) -> &[f64] {
        &self.leak
    }
}

/// Generator of the DB-process with branching rate `a` and offspring law
/// `p`: state `i` jumps to `i - 1 + j` at rate `i a p_j` for `j != 1`.
pub fn db_generator(rate: f64, offspring: &[f64], n: usize) -> Result<TruncatedGenerator> {
    check_probability_vector(offspring)?;
    if n < 2 {
        return Err(Error::OutOfRange(format!(
            "truncation size must be >= 2, got {n}"
        )));
    }
    if rate <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "branching rate must be > 0, got {rate}"
        )));
    }
    let mut q = vec![0.0; n * n];
    let mut leak = vec![0.0; n];
    for i in 1..n {
        let mut outflow = 0.0;
        for (j, &pj) in offspring.iter().enumerate() {
            if j == 1 || pj == 0.0 {
                continue;
            }
            let r = i as f64 * rate * pj;
            outflow += r;
            let target = i - 1 + j;
            if target < n {
                q[i * n + target] += r;
            } else {
                leak[i] += r;
            }
        }
        q[i * n + i] = -outflow;
    }
    Ok(TruncatedGenerator { q, n, leak })
}

/// Row `i` of the transition matrix at time `t` by uniformization: a
/// dominating Poisson clock at the largest exit rate drives a discrete
/// sub-stochastic kernel, and the series is cut when the Poisson tail drops
/// below 1e-12. The result is sub-stochastic; the deficit bounds the
/// truncation error.
pub fn ctmc_transition_row(gen: &TruncatedGenerator, i: usize, t: f64) -> Result<Vec<f64>> {
    let n = gen.n;
    if i >= n {
        return Err(Error::OutOfRange(format!("state {i} outside 0..{n}")));
    }
    if t < 0.0 {
        return Err(Error::NegativeHorizon(t));
    }
    let mut row = vec![0.0; n];
    let uniform_rate = (0..n)
        .map(|k| -gen.q[k * n + k])
        .fold(0.0f64, f64::max);
    if t == 0.0 || uniform_rate == 0.0 {
        row[i] = 1.0;
        return Ok(row);
    }

    // Discrete kernel K = I + Q / uniform_rate.
    let kernel_dot = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (k, &vk) in v.iter().enumerate() {
            if vk == 0.0 {
                continue;
            }
            let base = k * n;
            out[k] += vk;
            for j in 0..n {
                let q = gen.q[base + j];
                if q != 0.0 {
                    out[j] += vk * q / uniform_rate;
                }
            }
        }
    };

    let mean = uniform_rate * t;
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    let mut scratch = vec![0.0; n];
    // Poisson weights in log space: w_0 = e^{-mean} underflows for large
    // mean, but those early terms are genuinely negligible.
    let mut log_w = -mean;
    let log_mean = mean.ln();
    let mut cumulative = 0.0;
    let mut term = 0usize;
    loop {
        let w = log_w.exp();
        if w > 0.0 {
            for (out, &vk) in row.iter_mut().zip(v.iter()) {
                *out += w * vk;
            }
        }
        cumulative += w;
        if cumulative >= 1.0 - 1e-12 {
            break;
        }
        term += 1;
        if term > (10.0 * mean) as usize + 5000 {
            break;
        }
        kernel_dot(&v, &mut scratch);
        std::mem::swap(&mut v, &mut scratch);
        log_w += log_mean - (term as f64).ln();
    }
    Ok(row)
}

/// Closed-form Laplace-exponent flow of the pure-diffusion special case
/// (`n1 = n2 = 0`, `a21 = 0`), solving `dV/dt = -a11 V - alpha V^2`:
///
/// ```text
/// V(t) = a11 lambda1 e^{-a11 t} / (a11 + alpha lambda1 (1 - e^{-a11 t}))
/// ```
///
/// with the `a11 = 0` limit `lambda1 / (1 + alpha lambda1 t)`. For
/// supercritical drift the denominator can vanish at finite time, which is
/// reported as a blow-up.
pub fn riccati_closed_form(a11: f64, alpha: f64, lambda1: f64, t: f64) -> Result<f64> {
    if lambda1 < 0.0 {
        return Err(Error::NegativeLambda(lambda1, 0.0));
    }
    if alpha < 0.0 {
        return Err(Error::OutOfRange(format!("alpha must be >= 0, got {alpha}")));
    }
    if a11 == 0.0 {
        return Ok(lambda1 / (1.0 + alpha * lambda1 * t));
    }
    let decay = (-a11 * t).exp();
    let denom = a11 + alpha * lambda1 * (1.0 - decay);
    if denom <= 0.0 {
        let arg = 1.0 + a11 / (alpha * lambda1);
        let blow_up = if arg > 0.0 { -arg.ln() / a11 } else { t };
        return Err(Error::RiccatiBlowUp(blow_up));
    }
    Ok(a11 * lambda1 * decay / denom)
}

/// Exact minimum mean Euclidean pairing cost over all `n!` pairings,
/// for `n <= 7`.
pub fn w1_bruteforce(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SampleSizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.len() > 7 {
        return Err(Error::SampleTooLarge(a.len(), 7));
    }
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| {
                let dx = a[i][0] - b[j][0];
                let dy = a[i][1] - b[j][1];
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    };
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    best = best.min(cost(&perm));
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            best = best.min(cost(&perm));
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    Ok(best / n as f64)
}

/// Debug dump of a transition row as CSV with header `state,prob`.
pub fn ctmc_row_to_csv(row: &[f64]) -> String {
    let mut out = String::from("state,prob\n");
    for (state, p) in row.iter().enumerate() {
        out.push_str(&format!("{},{}\n", state, p));
    }
    out
}
