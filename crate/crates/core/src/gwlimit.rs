//! Rescaled Galton-Watson approximations of the continuum processes.
//!
//! Two explicit constructions are built here. For the discrete-state flow,
//! a single-type chain with time scale `gamma_k = a k` and offspring law
//! `p_i / k` (diagonal entry `(p_1 - 1)/k + 1`), whose `floor(gamma_k t)`-fold
//! composition converges to the compound semigroup. For the mixed-state
//! process, the two-type chain with mass scale `k` whose offspring laws are
//! finite mixtures assembled from the mechanism: drift, diffusion and jump
//! parts each contribute a component, with jump atoms truncated below
//! `1 / sqrt(k)` and continuous jump sizes rounded to `k z1` individuals.
//!
//! The rescaled chain `(Y1 / k, Y2)` run for `floor(gamma_k t)` generations
//! then approximates the continuum law at time `t`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laplace::{check_probability_vector, eval_generating, transition_laplace};
use crate::mechanism::{BranchingMechanism, MixedState};
use crate::simulate::replica_rng;

/// Population bound: a generation growing past this size stops the chain.
pub const POPULATION_CAP: u64 = 1_000_000_000;

/// Single-type rescaled GW specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Gw1Spec {
    /// Time scale `gamma_k = a k`.
    pub gamma_k: f64,
    /// Offspring probabilities.
    pub offspring: Vec<f64>,
}

impl Gw1Spec {
    /// `U_k(z) = gamma_k (g_k(z) - z)`.
    pub fn u(&self, z: f64) -> f64 {
        self.gamma_k * (eval_generating(&self.offspring, z) - z)
    }

    /// `floor(gamma_k t)`-fold composition of the offspring generating
    /// function, the discrete analogue of the compound semigroup.
    pub fn composition_flow(&self, z: f64, t: f64) -> f64 {
        let n = (self.gamma_k * t).floor() as u64;
        let mut f = z;
        for _ in 0..n {
            f = eval_generating(&self.offspring, f);
        }
        f
    }
}

/// Builds the rescaled single-type chain for branching rate `a` and
/// offspring law `p`.
pub fn build_gw1(rate: f64, offspring: &[f64], k: u64) -> Result<Gw1Spec> {
    check_probability_vector(offspring)?;
    if k == 0 {
        return Err(Error::ZeroMassScale);
    }
    if rate <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "branching rate must be > 0, got {rate}"
        )));
    }
    let kf = k as f64;
    let len = offspring.len().max(2);
    let mut scaled = vec![0.0; len];
    for (i, slot) in scaled.iter_mut().enumerate() {
        let p_i = offspring.get(i).copied().unwrap_or(0.0);
        *slot = if i == 1 {
            (p_i - 1.0) / kf + 1.0
        } else {
            p_i / kf
        };
    }
    Ok(Gw1Spec {
        gamma_k: rate * kf,
        offspring: scaled,
    })
}

/// A finite-support offspring law on pairs `(type-1 count, type-2 count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    pub support: Vec<((u64, u64), f64)>,
}

impl OffspringLaw {
    fn point(o: (u64, u64)) -> Self {
        OffspringLaw {
            support: vec![(o, 1.0)],
        }
    }

    pub fn total_probability(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }
}

/// Two-type rescaled GW specification: mixtures of offspring laws for each
/// parent type, with mixture weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Gw2Spec {
    pub gamma_k: f64,
    pub k: u64,
    pub g1: Vec<(f64, OffspringLaw)>,
    pub g2: Vec<(f64, OffspringLaw)>,
}

impl Gw2Spec {
    pub fn mixture_weight_sum(&self) -> (f64, f64) {
        (
            self.g1.iter().map(|(w, _)| w).sum(),
            self.g2.iter().map(|(w, _)| w).sum(),
        )
    }
}

/// Builds the two-type chain approximating a mechanism at mass scale `k`.
///
/// The construction puts weight `a11` on a pure-death component, so
/// supercritical drift (`a11 < 0`) is rejected; the continuum side has no
/// such restriction.
pub fn build_gw2(mech: &BranchingMechanism, k: u64) -> Result<Gw2Spec> {
    if k == 0 {
        return Err(Error::ZeroMassScale);
    }
    if mech.a11 < 0.0 {
        return Err(Error::NegativeA11(mech.a11));
    }
    let kf = k as f64;
    let threshold = 1.0 / kf.sqrt();

    // Type-2 side: drift and jump components of Phi2.
    let gamma_bar1 = mech.a21 * kf;
    let d_bar: Vec<_> = mech
        .n2
        .atoms()
        .iter()
        .filter(|a| a.z1 > threshold)
        .collect();
    let gamma_bar2: f64 = d_bar.iter().map(|a| a.weight).sum();
    let g_bar2 = OffspringLaw {
        support: d_bar
            .iter()
            .map(|a| {
                (
                    ((kf * a.z1).round() as u64, (a.z2 + 1) as u64),
                    a.weight / gamma_bar2,
                )
            })
            .collect(),
    };
    let gamma_bar = gamma_bar1 + gamma_bar2;

    // Type-1 side: death, diffusion and jump components of Phi1.
    let gamma_t1 = mech.a11;
    let gamma_t2 = (2.0 * mech.alpha + 1.0) * kf;
    let diffusion_law = {
        let denom = 2.0 * mech.alpha + 1.0;
        let mut support = Vec::new();
        if mech.alpha > 0.0 {
            support.push(((0, 0), mech.alpha / denom));
        }
        support.push(((1, 0), 1.0 / denom));
        if mech.alpha > 0.0 {
            support.push(((2, 0), mech.alpha / denom));
        }
        OffspringLaw { support }
    };
    let d_til: Vec<_> = mech
        .n1
        .atoms()
        .iter()
        .filter(|a| a.z1 > threshold && (a.z2 as f64) > threshold)
        .collect();
    let sigma: f64 = d_til.iter().map(|a| a.weight * (a.z1 - 1.0 / kf)).sum();
    let n1_mass_til: f64 = d_til.iter().map(|a| a.weight).sum();
    let gamma_t3 = sigma + n1_mass_til / kf + 1.0;
    let jump_law = {
        let mut support: Vec<((u64, u64), f64)> = d_til
            .iter()
            .map(|a| {
                (
                    ((kf * a.z1).round() as u64, a.z2 as u64),
                    a.weight / (kf * gamma_t3),
                )
            })
            .collect();
        support.push(((1, 0), 1.0 / gamma_t3));
        if sigma > 0.0 {
            support.push(((0, 0), sigma / gamma_t3));
        }
        OffspringLaw { support }
    };
    let gamma_til = gamma_t1 + gamma_t2 + gamma_t3;
    let gamma_k = gamma_til + gamma_bar;

    let mut g1 = Vec::new();
    if gamma_t1 > 0.0 {
        g1.push((gamma_t1 / gamma_k, OffspringLaw::point((0, 0))));
    }
    g1.push((gamma_t2 / gamma_k, diffusion_law));
    g1.push((gamma_t3 / gamma_k, jump_law));
    if gamma_bar > 0.0 {
        g1.push((gamma_bar / gamma_k, OffspringLaw::point((1, 0))));
    }

    let mut g2 = Vec::new();
    if gamma_bar1 > 0.0 {
        g2.push((gamma_bar1 / gamma_k, OffspringLaw::point((1, 1))));
    }
    if gamma_bar2 > 0.0 {
        g2.push((gamma_bar2 / gamma_k, g_bar2));
    }
    g2.push((gamma_til / gamma_k, OffspringLaw::point((0, 1))));

    Ok(Gw2Spec { gamma_k, k, g1, g2 })
}

/// Walker alias table for O(1) categorical draws.
struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    fn new(weights: &[f64]) -> AliasTable {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![0.0; n];
        let mut alias = vec![0usize; n];
        let mut small: Vec<usize> = (0..n).filter(|&i| scaled[i] < 1.0).collect();
        let mut large: Vec<usize> = (0..n).filter(|&i| scaled[i] >= 1.0).collect();
        while let Some(&l) = large.last() {
            let Some(s) = small.pop() else { break };
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }
        AliasTable { prob, alias }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// Flattened per-type sampler over mixture component times support point.
struct GwSampler {
    table: AliasTable,
    offspring: Vec<(u64, u64)>,
}

impl GwSampler {
    fn new(mixture: &[(f64, OffspringLaw)]) -> GwSampler {
        let mut weights = Vec::new();
        let mut offspring = Vec::new();
        for (w, law) in mixture {
            for &(o, p) in &law.support {
                if w * p > 0.0 {
                    weights.push(w * p);
                    offspring.push(o);
                }
            }
        }
        GwSampler {
            table: AliasTable::new(&weights),
            offspring,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        self.offspring[self.table.sample(rng)]
    }
}

/// A chain trajectory of generation totals.
#[derive(Debug, Clone, PartialEq)]
pub struct GwPath {
    pub states: Vec<(u64, u64)>,
    /// Set when the population cap stopped the chain early.
    pub truncated: bool,
}

impl GwPath {
    pub fn terminal(&self) -> (u64, u64) {
        *self.states.last().expect("path is never empty")
    }
}

/// Runs the two-type chain for `steps` generations: every individual spawns
/// an independent offspring pair from its type's law, and the sums form the
/// next generation.
pub fn simulate_gw2(spec: &Gw2Spec, x0: (u64, u64), steps: u64, rng: &mut impl Rng) -> GwPath {
    let sampler1 = GwSampler::new(&spec.g1);
    let sampler2 = GwSampler::new(&spec.g2);
    let mut states = Vec::with_capacity(steps as usize + 1);
    states.push(x0);
    let mut current = x0;
    let mut truncated = false;
    for _ in 0..steps {
        if current == (0, 0) {
            states.push(current);
            continue;
        }
        let mut next = (0u64, 0u64);
        for _ in 0..current.0 {
            let (o1, o2) = sampler1.draw(rng);
            next.0 += o1;
            next.1 += o2;
        }
        for _ in 0..current.1 {
            let (o1, o2) = sampler2.draw(rng);
            next.0 += o1;
            next.1 += o2;
        }
        if next.0 + next.1 > POPULATION_CAP {
            truncated = true;
            states.push(next);
            break;
        }
        states.push(next);
        current = next;
    }
    GwPath { states, truncated }
}

/// Monte Carlo estimate (mean, standard error) of the rescaled Laplace
/// functional `E exp(-l1 Y1(n)/k - l2 Y2(n))` at `n = floor(gamma_k t)`
/// generations from `x0 = (floor(k x1), x2)`.
pub fn rescaled_laplace_gw(
    spec: &Gw2Spec,
    x: &MixedState,
    lambda: [f64; 2],
    t: f64,
    replicas: u64,
    base_seed: u64,
) -> Result<(f64, f64)> {
    if replicas == 0 {
        return Err(Error::ZeroReplicas);
    }
    let steps = (spec.gamma_k * t).floor() as u64;
    let x0 = ((spec.k as f64 * x.y1).floor() as u64, x.y2);
    let kf = spec.k as f64;
    let values: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(base_seed, i);
            let path = simulate_gw2(spec, x0, steps, &mut rng);
            let (y1, y2) = path.terminal();
            (-(lambda[0] * y1 as f64 / kf + lambda[1] * y2 as f64)).exp()
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if replicas > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Monte Carlo mean and standard error of the rescaled terminal state
/// `(Y1(n)/k, Y2(n))` at `n = floor(gamma_k t)` generations.
pub fn rescaled_mean_gw(
    spec: &Gw2Spec,
    x: &MixedState,
    t: f64,
    replicas: u64,
    base_seed: u64,
) -> Result<([f64; 2], [f64; 2])> {
    if replicas == 0 {
        return Err(Error::ZeroReplicas);
    }
    let steps = (spec.gamma_k * t).floor() as u64;
    let x0 = ((spec.k as f64 * x.y1).floor() as u64, x.y2);
    let kf = spec.k as f64;
    let values: Vec<[f64; 2]> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(base_seed, i);
            let (y1, y2) = simulate_gw2(spec, x0, steps, &mut rng).terminal();
            [y1 as f64 / kf, y2 as f64]
        })
        .collect();
    let n = values.len() as f64;
    let mean = [
        values.iter().map(|v| v[0]).sum::<f64>() / n,
        values.iter().map(|v| v[1]).sum::<f64>() / n,
    ];
    let se = [0, 1].map(|c| {
        (values
            .iter()
            .map(|v| (v[c] - mean[c]) * (v[c] - mean[c]))
            .sum::<f64>()
            / (n - 1.0).max(1.0)
            / n)
            .sqrt()
    });
    Ok((mean, se))
}

/// One row of a convergence experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub k: u64,
    pub estimate: f64,
    pub continuum: f64,
    pub abs_error: f64,
    pub stderr: f64,
}

/// Compares the rescaled-chain Laplace functional against the continuum
/// transition Laplace transform across the mass scales in `k_list`.
pub fn convergence_report(
    mech: &BranchingMechanism,
    x: &MixedState,
    lambda: [f64; 2],
    t: f64,
    k_list: &[u64],
    replicas: u64,
    base_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let continuum = transition_laplace(mech, x, lambda, t)?;
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let spec = build_gw2(mech, k)?;
        let (estimate, stderr) = rescaled_laplace_gw(&spec, x, lambda, t, replicas, base_seed)?;
        rows.push(ConvergenceRow {
            k,
            estimate,
            continuum,
            abs_error: (estimate - continuum).abs(),
            stderr,
        });
    }
    Ok(rows)
}

/// CSV with header `k,estimate,continuum,abs_error,stderr`.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("k,estimate,continuum,abs_error,stderr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k, r.estimate, r.continuum, r.abs_error, r.stderr
        ));
    }
    out
}
