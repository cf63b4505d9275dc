//! Monte Carlo simulation of the branching SDE system, with and without
//! immigration.
//!
//! Fixed-step scheme per window `[t, t + dt]`:
//!
//! 1. drift on the continuous coordinate, including the compensator
//!    `-y1 int z1 n1` because jumps are applied uncompensated;
//! 2. Euler-Maruyama diffusion `sqrt(2 alpha max(y1, 0)) sqrt(dt) xi`;
//! 3. tau-leap: a Poisson number of jumps at the rates frozen at the window
//!    start, each attributed to an atom proportionally to its state-weighted
//!    rate, with a uniform time stamp inside the window;
//! 4. clamp the continuous coordinate at zero; a jump that would push the
//!    integer coordinate below zero is rejected and counted.
//!
//! The guard `total rate * dt <= 0.5` keeps the leap bias bounded; violating
//! it is an error asking for a smaller `dt` rather than a silent degradation.
//!
//! Replicas of an ensemble draw from ChaCha streams derived from
//! `(base_seed, replica index)`, and aggregation is a fixed-order reduction,
//! so results are bit-identical for a given seed regardless of worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, MixedState};

/// Which Poisson random measure produced a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpSource {
    /// Driven by the continuous coordinate (`n1`).
    N1,
    /// Driven by the integer coordinate (`n2`).
    N2,
    /// State-independent immigration (`m`).
    Immigration,
}

impl JumpSource {
    fn csv_tag(&self) -> &'static str {
        match self {
            JumpSource::N1 => "jump:n1",
            JumpSource::N2 => "jump:n2",
            JumpSource::Immigration => "jump:imm",
        }
    }
}

/// A single applied jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub source: JumpSource,
    pub dz1: f64,
    pub dz2: i64,
}

/// Tag of one record in a path: a step boundary or an applied jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEvent {
    Step,
    Jump(JumpSource),
}

/// A simulated trajectory: states at every step boundary and at every jump
/// instant, plus the jump list itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<MixedState>,
    pub events: Vec<PathEvent>,
    pub jumps: Vec<JumpEvent>,
    /// Leap-window jumps rejected because they would have pushed the integer
    /// coordinate below zero.
    pub rejected_jumps: u64,
}

impl PathRecord {
    pub fn terminal(&self) -> MixedState {
        *self.states.last().expect("path is never empty")
    }

    /// CSV with header `t,y1,y2,event`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y1,y2,event\n");
        for ((t, s), e) in self
            .times
            .iter()
            .zip(self.states.iter())
            .zip(self.events.iter())
        {
            let tag = match e {
                PathEvent::Step => "step",
                PathEvent::Jump(src) => src.csv_tag(),
            };
            out.push_str(&format!("{},{},{},{}\n", t, s.y1, s.y2, tag));
        }
        out
    }
}

/// Terminal states of independent replicas.
#[derive(Debug, Clone)]
pub struct EnsembleSample {
    pub states: Vec<MixedState>,
    pub seed: u64,
    pub t: f64,
    pub dt: f64,
    /// Hash of the mechanism and scheme parameters that produced the sample.
    pub config_digest: String,
    /// Smallest continuous coordinate seen along any replica path.
    pub min_path_y1: f64,
}

impl EnsembleSample {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn as_matrix(&self) -> Vec<[f64; 2]> {
        self.states.iter().map(|s| s.as_vec()).collect()
    }

    /// CSV with header `replica,y1,y2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replica,y1,y2\n");
        for (i, s) in self.states.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i, s.y1, s.y2));
        }
        out
    }

    /// JSON sidecar with the seed, step and configuration digest.
    pub fn sidecar_json(&self) -> String {
        format!(
            "{{\"seed\":{},\"t\":{},\"dt\":{},\"config_digest\":\"{}\"}}",
            self.seed, self.t, self.dt, self.config_digest
        )
    }
}

/// ChaCha stream for one replica: every replica gets the same seed but its
/// own counter stream, which is the reproducible-parallelism contract.
pub fn replica_rng(base_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    rng
}

/// Poisson sample by Knuth inversion; the leap guard keeps the mean small.
fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut count = 0u64;
    let mut product: f64 = rng.random();
    while product > limit {
        count += 1;
        product *= rng.random::<f64>();
    }
    count
}

struct Scheme<'a> {
    mech: &'a BranchingMechanism,
    imm: Option<&'a ImmigrationMechanism>,
    n1_mass: f64,
    n2_mass: f64,
    m_mass: f64,
    n1_z1_moment: f64,
    drift_b: f64,
}

impl<'a> Scheme<'a> {
    fn new(mech: &'a BranchingMechanism, imm: Option<&'a ImmigrationMechanism>) -> Self {
        Scheme {
            mech,
            imm,
            n1_mass: mech.n1.total_mass(),
            n2_mass: mech.n2.total_mass(),
            m_mass: imm.map_or(0.0, |i| i.m.total_mass()),
            n1_z1_moment: mech.n1.z1_moment(),
            drift_b: imm.map_or(0.0, |i| i.b),
        }
    }

    /// One leap window. `record` receives each applied jump; returns the
    /// number of rejected jumps.
    fn step<R: Rng + ?Sized>(
        &self,
        state: &mut (f64, u64),
        t: f64,
        dt: f64,
        rng: &mut R,
        mut record: impl FnMut(f64, JumpSource, f64, i64, (f64, u64)),
    ) -> Result<u64> {
        let (y1_left, y2_left) = *state;
        let rate1 = y1_left * self.n1_mass;
        let rate2 = y2_left as f64 * self.n2_mass;
        let total = rate1 + rate2 + self.m_mass;
        if total * dt > 0.5 {
            return Err(Error::LeapRateTooHigh { rate: total, dt });
        }

        let mut y1 = y1_left
            + (-self.mech.a11 * y1_left + self.mech.a21 * y2_left as f64
                - y1_left * self.n1_z1_moment
                + self.drift_b)
                * dt;
        if self.mech.alpha > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            y1 += (2.0 * self.mech.alpha * y1.max(0.0)).sqrt() * dt.sqrt() * xi;
        }
        y1 = y1.max(0.0);
        let mut y2 = y2_left;
        let mut rejected = 0u64;

        let jump_count = if total > 0.0 {
            sample_poisson(rng, total * dt)
        } else {
            0
        };
        if jump_count > 0 {
            let mut events: Vec<(f64, JumpSource, f64, i64)> =
                Vec::with_capacity(jump_count as usize);
            for _ in 0..jump_count {
                let mut u: f64 = rng.random::<f64>() * total;
                let time = t + rng.random::<f64>() * dt;
                let mut picked = None;
                for atom in self.mech.n1.atoms() {
                    let r = y1_left * atom.weight;
                    if u < r {
                        picked = Some((JumpSource::N1, atom.z1, atom.z2));
                        break;
                    }
                    u -= r;
                }
                if picked.is_none() {
                    for atom in self.mech.n2.atoms() {
                        let r = y2_left as f64 * atom.weight;
                        if u < r {
                            picked = Some((JumpSource::N2, atom.z1, atom.z2));
                            break;
                        }
                        u -= r;
                    }
                }
                if picked.is_none() {
                    if let Some(imm) = self.imm {
                        for atom in imm.m.atoms() {
                            if u < atom.weight {
                                picked = Some((JumpSource::Immigration, atom.z1, atom.z2));
                                break;
                            }
                            u -= atom.weight;
                        }
                    }
                }
                // Round-off in the cumulative walk: attribute to the last atom.
                let(source, z1, z2) = picked.unwrap_or_else(|| {
                    let atom = self
                        .imm
                        .filter(|i| !i.m.is_empty())
                        .map(|i| (JumpSource::Immigration, *i.m.atoms().last().unwrap()))
                        .or_else(|| {
                            (!self.mech.n2.is_empty())
                                .then(|| (JumpSource::N2, *self.mech.n2.atoms().last().unwrap()))
                        })
                        .or_else(|| {
                            (!self.mech.n1.is_empty())
                                .then(|| (JumpSource::N1, *self.mech.n1.atoms().last().unwrap()))
                        })
                        .expect("positive rate implies at least one atom");
                    (atom.0, atom.1.z1, atom.1.z2)
                });
                events.push((time, source, z1, z2));
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (time, source, z1, z2) in events {
                if z2 < 0 && y2 == 0 {
                    rejected += 1;
                    continue;
                }
                y1 += z1;
                y2 = (y2 as i64 + z2) as u64;
                record(time, source, z1, z2, (y1, y2));
            }
        }
        *state = (y1.max(0.0), y2);
        Ok(rejected)
    }
}

fn validate_sim_args(x0: &MixedState, horizon: f64, dt: f64) -> Result<usize> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::NonPositiveDt(dt));
    }
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(Error::NegativeHorizon(horizon));
    }
    if x0.y1 < 0.0 || !x0.y1.is_finite() {
        return Err(Error::OutOfRange(format!(
            "initial state must be in M, got y1 = {}",
            x0.y1
        )));
    }
    Ok((horizon / dt).ceil() as usize)
}

fn simulate_record(
    mech: &BranchingMechanism,
    imm: Option<&ImmigrationMechanism>,
    x0: &MixedState,
    horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<PathRecord> {
    let steps = validate_sim_args(x0, horizon, dt)?;
    let scheme = Scheme::new(mech, imm);
    let mut path = PathRecord {
        times: vec![0.0],
        states: vec![*x0],
        events: vec![PathEvent::Step],
        jumps: Vec::new(),
        rejected_jumps: 0,
    };
    let mut state = (x0.y1, x0.y2);
    for i in 0..steps {
        let t = i as f64 * dt;
        let t_next = horizon.min((i + 1) as f64 * dt);
        let h = t_next - t;
        let (times, states, events, jumps) = (
            &mut path.times,
            &mut path.states,
            &mut path.events,
            &mut path.jumps,
        );
        path.rejected_jumps += scheme.step(
            &mut state,
            t,
            h,
            rng,
            |time, source, dz1, dz2, (y1, y2)| {
                times.push(time);
                states.push(MixedState::new(y1, y2));
                events.push(PathEvent::Jump(source));
                jumps.push(JumpEvent {
                    time,
                    source,
                    dz1,
                    dz2,
                });
            },
        )?;
        path.times.push(t_next);
        path.states.push(MixedState::new(state.0, state.1));
        path.events.push(PathEvent::Step);
    }
    Ok(path)
}

/// Simulates the branching system on `[0, horizon]`.
pub fn simulate_msb(
    mech: &BranchingMechanism,
    x0: &MixedState,
    horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<PathRecord> {
    simulate_record(mech, None, x0, horizon, dt, rng)
}

/// Simulates the branching system with immigration on `[0, horizon]`.
pub fn simulate_msbi(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    x0: &MixedState,
    horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<PathRecord> {
    simulate_record(mech, Some(imm), x0, horizon, dt, rng)
}

/// Terminal state only, without building a path record; tracks the smallest
/// continuous coordinate seen so positivity can be audited cheaply.
fn simulate_terminal(
    mech: &BranchingMechanism,
    imm: Option<&ImmigrationMechanism>,
    x0: &MixedState,
    horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<(MixedState, f64)> {
    let steps = validate_sim_args(x0, horizon, dt)?;
    let scheme = Scheme::new(mech, imm);
    let mut state = (x0.y1, x0.y2);
    let mut min_y1 = x0.y1;
    for i in 0..steps {
        let t = i as f64 * dt;
        let h = horizon.min((i + 1) as f64 * dt) - t;
        scheme.step(&mut state, t, h, rng, |_, _, _, _, _| {})?;
        min_y1 = min_y1.min(state.0);
    }
    Ok((MixedState::new(state.0, state.1), min_y1))
}

/// Terminal state of a single path, for couplings that manage their own
/// RNG streams.
pub(crate) fn simulate_terminal_state(
    mech: &BranchingMechanism,
    imm: Option<&ImmigrationMechanism>,
    x0: &MixedState,
    horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<MixedState> {
    simulate_terminal(mech, imm, x0, horizon, dt, rng).map(|r| r.0)
}

#[derive(Serialize)]
struct EnsembleConfig<'a> {
    mech: &'a BranchingMechanism,
    imm: Option<&'a ImmigrationMechanism>,
    x0: &'a MixedState,
    t: f64,
    dt: f64,
    replicas: u64,
    seed: u64,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Terminal states of `replicas` independent paths; replica `i` draws from
/// the ChaCha stream `(base_seed, i)`. Deterministic for fixed inputs.
pub fn ensemble(
    mech: &BranchingMechanism,
    imm: Option<&ImmigrationMechanism>,
    x0: &MixedState,
    t: f64,
    dt: f64,
    replicas: u64,
    base_seed: u64,
) -> Result<EnsembleSample> {
    if replicas == 0 {
        return Err(Error::ZeroReplicas);
    }
    let results: Result<Vec<(MixedState, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(base_seed, i);
            simulate_terminal(mech, imm, x0, t, dt, &mut rng)
        })
        .collect();
    let rows = results?;
    let min_path_y1 = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let config = EnsembleConfig {
        mech,
        imm,
        x0,
        t,
        dt,
        replicas,
        seed: base_seed,
    };
    let digest = hex_digest(
        serde_json::to_string(&config)
            .expect("ensemble configs serialize")
            .as_bytes(),
    );
    Ok(EnsembleSample {
        states: rows.into_iter().map(|r| r.0).collect(),
        seed: base_seed,
        t,
        dt,
        config_digest: digest,
        min_path_y1,
    })
}

/// Sample mean and standard error of `exp(-<lambda, row>)`.
pub fn empirical_laplace(sample: &EnsembleSample, lambda: [f64; 2]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = sample.len() as f64;
    let values: Vec<f64> = sample
        .states
        .iter()
        .map(|s| (-(lambda[0] * s.y1 + lambda[1] * s.y2 as f64)).exp())
        .collect();
    let mean = values.iter().sum::<f64>() / n;
    let se = if sample.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Earliest recorded jump exceeding `r` in both coordinates, i.e. with
/// `(dz1, dz2)` in the rectangle `A_r = (r1, inf) x (r2, inf)`. This is the
/// exceedance region of the analytic jump law, so the empirical survival
/// curve is directly comparable with `survival_tau`.
pub fn first_large_jump(path: &PathRecord, r: [f64; 2]) -> Option<f64> {
    path.jumps
        .iter()
        .find(|j| j.dz1 > r[0] && (j.dz2 as f64) > r[1])
        .map(|j| j.time)
}
