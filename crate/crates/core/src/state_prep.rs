//! Initial-state preparation: the ensemble (purified maximally mixed) state,
//! the seed-deterministic Gaussian amplitude state, and the amplitude
//! encoding of classical initial conditions.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::ops::Range;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::circuit::{apply, Circuit, DyadicState, Gate, StateVector};
use crate::error::{Error, Result};
use crate::network_model::NetworkModel;

/// Largest CBRNG output.
pub const MAX_R: u64 = (1 << 53) - 1;

/// Counters reserved per sampled quantity.
pub const COUNTER_BLOCK: u64 = 1 << 10;

/// Each rejection attempt reads a proposal counter and an acceptance counter.
pub const MAX_ATTEMPTS: usize = (COUNTER_BLOCK / 2) as usize;

fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed counter-based generator `r(s, i)`, uniform on `[0, MAX_R]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CbrngSpec {
    pub seed: u64,
}

impl CbrngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn draw(&self, counter: u64) -> u64 {
        let s = self.seed;
        mix(mix(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ s).wrapping_add(s)) >> 11
    }

    /// `r / MAX_R`, on the closed unit interval.
    pub fn unit(&self, counter: u64) -> f64 {
        self.draw(counter) as f64 / MAX_R as f64
    }

    /// `(r + ½) / 2^53`, strictly inside `(0, 1)`.
    pub fn open_unit(&self, counter: u64) -> f64 {
        (self.draw(counter) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Standard normal pair from counters `2c`, `2c + 1` by Box–Muller.
    pub fn normal_pair(&self, pair: u64) -> (f64, f64) {
        let u1 = self.open_unit(2 * pair);
        let u2 = self.unit(2 * pair + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// `±1` from counter `i`.
    pub fn rademacher(&self, counter: u64) -> f64 {
        if self.draw(counter) >> 52 == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

pub fn cbrng(spec: &CbrngSpec, counter: u64) -> u64 {
    spec.draw(counter)
}

/// Angle density `p_l(θ) ∝ sin^a(2θ)` on `(0, π/2)` with `a = 2^(n−l) − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AngleDensity {
    pub level: u32,
    pub n: u32,
}

impl AngleDensity {
    pub fn new(level: u32, n: u32) -> Result<Self> {
        if level == 0 || level > n || n >= 63 {
            return Err(Error::InvalidArgument(format!("level {level} outside 1..={n}")));
        }
        Ok(Self { level, n })
    }

    pub fn exponent(&self) -> f64 {
        ((1u64 << (self.n - self.level)) - 1) as f64
    }

    /// `ln ∫_0^{π/2} sin^a(2θ) dθ = ln(½ √π Γ((a+1)/2) / Γ(a/2 + 1))`.
    pub fn ln_normalizer(&self) -> f64 {
        let a = self.exponent();
        (0.5f64).ln() + 0.5 * std::f64::consts::PI.ln() + ln_gamma((a + 1.0) / 2.0) - ln_gamma(a / 2.0 + 1.0)
    }

    pub fn pdf(&self, theta: f64) -> f64 {
        if !(0.0..=FRAC_PI_2).contains(&theta) {
            return 0.0;
        }
        let a = self.exponent();
        let s = (2.0 * theta).sin();
        if a == 0.0 {
            return 1.0 / FRAC_PI_2;
        }
        if s <= 0.0 {
            return 0.0;
        }
        (a * s.ln() - self.ln_normalizer()).exp()
    }

    /// Proposal width `1 / (2 √a)`, matching the curvature of `a ln sin 2θ` at `π/4`.
    pub fn proposal_sigma(&self) -> f64 {
        0.5 / self.exponent().max(1.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    pub theta: f64,
    pub attempts: usize,
    /// Counters read, always a prefix of the block.
    pub counters: Range<u64>,
}

/// Draws one angle from `AngleDensity(l, n)` using counters from `counter_base` up.
///
/// `a = 0` uses the inverse CDF. Otherwise a Gaussian centred at `π/4`,
/// truncated to `(0, π/2)`, is accepted with probability
/// `cos^a(2x) e^{2 a x²}` for `x = θ − π/4`; this ratio is at most 1
/// because `ln cos y ≤ −y²/2`.
pub fn sample_angle(level: u32, n: u32, spec: &CbrngSpec, counter_base: u64) -> Result<AngleSample> {
    let density = AngleDensity::new(level, n)?;
    let a = density.exponent();
    if a == 0.0 {
        for k in 0..COUNTER_BLOCK {
            let r = spec.draw(counter_base + k);
            if r != 0 && r != MAX_R {
                let theta = FRAC_PI_2 * r as f64 / MAX_R as f64;
                return Ok(AngleSample { theta, attempts: k as usize + 1, counters: counter_base..counter_base + k + 1 });
            }
        }
        return Err(Error::RejectionLimit { attempts: COUNTER_BLOCK as usize });
    }

    let sigma = density.proposal_sigma();
    let normal = Normal::new(FRAC_PI_4, sigma).map_err(|e| Error::Numerical(e.to_string()))?;
    let (lo, hi) = (normal.cdf(0.0), normal.cdf(FRAC_PI_2));
    for attempt in 0..MAX_ATTEMPTS {
        let c = counter_base + 2 * attempt as u64;
        let theta = normal.inverse_cdf(lo + spec.open_unit(c) * (hi - lo));
        let used = counter_base..c + 2;
        if !(theta > 0.0 && theta < FRAC_PI_2) {
            continue;
        }
        let x = theta - FRAC_PI_4;
        let ln_ratio = a * (2.0 * x).cos().ln() + 2.0 * a * x * x;
        if spec.open_unit(c + 1).ln() <= ln_ratio {
            return Ok(AngleSample { theta, attempts: attempt + 1, counters: used });
        }
    }
    Err(Error::RejectionLimit { attempts: MAX_ATTEMPTS })
}

/// First counter of the block for branch `i` at level `l`.
pub fn angle_counter_base(level: u32, n: u32, branch: u64) -> u64 {
    ((level as u64) << n | branch) * COUNTER_BLOCK
}

/// Counter for the sign of amplitude `j`.
pub fn sign_counter(n: u32, index: u64) -> u64 {
    (((n as u64 + 1) << n) | index) * COUNTER_BLOCK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub samples: usize,
    pub attempts: usize,
}

impl LevelStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples as f64 / self.attempts as f64
    }
}

/// What one counter range was used for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterUse {
    Angle { level: u32, branch: u64 },
    Sign { index: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLoaderSchedule {
    pub n: u32,
    pub seed: u64,
    /// `angles[l − 1][i]` for branch `i` of level `l`; length `2^(l−1)`.
    pub angles: Vec<Vec<f64>>,
    pub stats: Vec<LevelStats>,
    /// `negate[j]` flips the sign of amplitude `j`.
    pub negate: Vec<bool>,
    pub counter_log: Vec<(CounterUse, Range<u64>)>,
}

pub fn gaussian_schedule(n: u32, spec: &CbrngSpec) -> Result<BinaryLoaderSchedule> {
    if n == 0 || n > 24 {
        return Err(Error::InvalidArgument(format!("Gaussian state needs 1..=24 qubits, got {n}")));
    }
    let mut angles = Vec::with_capacity(n as usize);
    let mut stats = Vec::with_capacity(n as usize);
    let mut counter_log = Vec::new();
    for level in 1..=n {
        let samples: Vec<AngleSample> = (0..1u64 << (level - 1))
            .into_par_iter()
            .map(|branch| sample_angle(level, n, spec, angle_counter_base(level, n, branch)))
            .collect::<Result<_>>()?;
        stats.push(LevelStats { level, samples: samples.len(), attempts: samples.iter().map(|s| s.attempts).sum() });
        for (branch, s) in samples.iter().enumerate() {
            counter_log.push((CounterUse::Angle { level, branch: branch as u64 }, s.counters.clone()));
        }
        angles.push(samples.into_iter().map(|s| s.theta).collect());
    }
    let negate = (0..1u64 << n)
        .map(|j| {
            let c = sign_counter(n, j);
            counter_log.push((CounterUse::Sign { index: j }, c..c + 1));
            2.0 * spec.draw(c) as f64 - (MAX_R as f64) < 0.0
        })
        .collect();
    Ok(BinaryLoaderSchedule { n, seed: spec.seed, angles, stats, negate, counter_log })
}

/// Level `l` rotates qubit `l − 1` by `RY(2θ_i)` conditioned on qubits
/// `0..l−1` holding `i`; zero control bits are X-conjugated.
pub fn gaussian_state_circuit(schedule: &BinaryLoaderSchedule) -> Result<Circuit> {
    let n = schedule.n as usize;
    let mut c = Circuit::new(n);
    for (l0, level) in schedule.angles.iter().enumerate() {
        let controls: Vec<usize> = (0..l0).collect();
        for (i, &theta) in level.iter().enumerate() {
            let flips: Vec<Gate> = controls.iter().filter(|&&q| (i >> q) & 1 == 0).map(|&q| Gate::X(q)).collect();
            c.extend(flips.iter().cloned())?;
            c.push(Gate::Cry { controls: controls.clone(), target: l0, angle: 2.0 * theta })?;
            c.extend(flips)?;
        }
    }
    c.push(Gate::DiagSign { wires: (0..n).collect(), negate: schedule.negate.clone() })?;
    Ok(c)
}

/// Seed-deterministic state whose scaled amplitudes `√(2^n) ψ_j` behave as i.i.d. N(0, 1).
pub fn prepare_gaussian_state(n: u32, spec: &CbrngSpec) -> Result<StateVector> {
    let schedule = gaussian_schedule(n, spec)?;
    let circuit = gaussian_state_circuit(&schedule)?;
    let out = apply(&circuit, &StateVector::zero(n as usize))?;
    let norm = out.norm();
    StateVector::from_amplitudes(out.into_amplitudes().into_iter().map(|z| z / norm).collect())
}

#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub circuit: Circuit,
    /// Reduced state of register 1 (qubits `0..n`), computed exactly.
    pub reduced_density: Vec<Vec<f64>>,
}

/// `H^{⊗n}` on register 1 followed by `CNOT(q → q + n)`.
pub fn ensemble_circuit(n: usize) -> Result<Circuit> {
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble state needs n ≥ 1".into()));
    }
    let mut c = Circuit::new(2 * n);
    c.extend((0..n).map(Gate::H))?;
    c.extend((0..n).map(|q| Gate::Cnot { control: q, target: q + n }))?;
    Ok(c)
}

pub fn prepare_ensemble_state(n: usize) -> Result<EnsembleState> {
    if n > 10 {
        return Err(Error::InvalidArgument(format!("exact partial trace limited to n ≤ 10, got {n}")));
    }
    let circuit = ensemble_circuit(n)?;
    let mut state = DyadicState::zero(2 * n);
    state.apply(&circuit)?;
    Ok(EnsembleState { reduced_density: state.reduced_density(n), circuit })
}

/// Amplitude encoding `ψ = [ẏ; i Bᵀ y] / √(2E)` with `y = √M u`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub psi: DVector<Complex64>,
    /// `½(‖ẏ‖² + ‖Bᵀy‖²)`, equal to `½(ẏᵀẏ + yᵀAy)` up to the factorisation error.
    pub energy: f64,
    /// Length of the velocity block.
    pub block_split: usize,
}

impl EncodedState {
    pub fn velocity_block(&self) -> nalgebra::DVectorView<'_, Complex64> {
        self.psi.rows(0, self.block_split)
    }

    pub fn strain_block(&self) -> nalgebra::DVectorView<'_, Complex64> {
        self.psi.rows(self.block_split, self.psi.len() - self.block_split)
    }
}

pub fn encode_initial_conditions(u0: &DVector<f64>, v0: &DVector<f64>, model: &NetworkModel) -> Result<EncodedState> {
    let n = model.dof();
    for v in [u0, v0] {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: v.len() });
        }
    }
    let sqrt_m = model.masses.map(f64::sqrt);
    let y = u0.component_mul(&sqrt_m);
    let ydot = v0.component_mul(&sqrt_m);
    let strain = model.incidence.tr_mul(&y);
    let energy = 0.5 * (ydot.norm_squared() + strain.norm_squared());
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::ZeroEnergy);
    }
    let scale = 1.0 / (2.0 * energy).sqrt();
    let psi = DVector::from_iterator(
        n + strain.len(),
        ydot.iter().map(|&v| Complex64::new(v * scale, 0.0)).chain(strain.iter().map(|&s| Complex64::new(0.0, s * scale))),
    );
    Ok(EncodedState { psi, energy, block_split: n })
}
