use num_complex::Complex64;
use rayon::prelude::*;

use super::{Circuit, Gate};
use crate::error::{Error, Result};

/// Dense amplitude vector; qubit `q` is bit `q` of the basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

const PARALLEL_THRESHOLD: usize = 1 << 14;

impl StateVector {
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { n_qubits, amplitudes }
    }

    /// Wraps amplitudes whose length is a power of two and whose norm is 1 within 1e-12.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("state length {len} is not a power of two")));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("state norm {norm} is not 1")));
        }
        Ok(Self { n_qubits: len.trailing_zeros() as usize, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn apply_gate(&mut self, gate: &Gate) {
        let amps = &mut self.amplitudes;
        match gate {
            Gate::X(q) => permute(amps, 0, *q),
            Gate::Cnot { control, target } => permute(amps, 1 << control, *target),
            Gate::Mcx { controls, target } => permute(amps, mask(controls), *target),
            Gate::Swap(a, b) => {
                let (a, b) = (1usize << a, 1usize << b);
                for i in 0..amps.len() {
                    if i & a != 0 && i & b == 0 {
                        amps.swap(i, i ^ a ^ b);
                    }
                }
            }
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                pairwise(amps, 0, *q, |a, b| ((a + b) * s, (a - b) * s));
            }
            Gate::Cry { controls, target, angle } => {
                let (sin, cos) = (angle / 2.0).sin_cos();
                pairwise(amps, mask(controls), *target, |a, b| (a * cos - b * sin, a * sin + b * cos));
            }
            Gate::DiagSign { wires, negate } => {
                let flip = |i: usize| {
                    let k = wires.iter().enumerate().fold(0usize, |k, (bit, &w)| k | (((i >> w) & 1) << bit));
                    negate[k]
                };
                if amps.len() >= PARALLEL_THRESHOLD {
                    amps.par_iter_mut().enumerate().for_each(|(i, z)| {
                        if flip(i) {
                            *z = -*z;
                        }
                    });
                } else {
                    for (i, z) in amps.iter_mut().enumerate() {
                        if flip(i) {
                            *z = -*z;
                        }
                    }
                }
            }
        }
    }
}

fn mask(wires: &[usize]) -> usize {
    wires.iter().fold(0, |m, &w| m | (1 << w))
}

fn permute(amps: &mut [Complex64], control_mask: usize, target: usize) {
    let t = 1usize << target;
    for i in 0..amps.len() {
        if i & t == 0 && i & control_mask == control_mask {
            amps.swap(i, i | t);
        }
    }
}

fn pairwise<F>(amps: &mut [Complex64], control_mask: usize, target: usize, f: F)
where
    F: Fn(Complex64, Complex64) -> (Complex64, Complex64) + Sync,
{
    let t = 1usize << target;
    // Blocks of 2t contiguous amplitudes hold every (i, i | t) pair exactly once.
    let kernel = |base: usize, block: &mut [Complex64]| {
        let (lo, hi) = block.split_at_mut(t);
        for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
            if (base + k) & control_mask == control_mask {
                let (na, nb) = f(*a, *b);
                *a = na;
                *b = nb;
            }
        }
    };
    if amps.len() >= PARALLEL_THRESHOLD {
        amps.par_chunks_mut(2 * t).enumerate().for_each(|(c, block)| kernel(c * 2 * t, block));
    } else {
        for (c, block) in amps.chunks_mut(2 * t).enumerate() {
            kernel(c * 2 * t, block);
        }
    }
}

/// Applies every layer in order and returns the new state.
pub fn apply(circuit: &Circuit, state: &StateVector) -> Result<StateVector> {
    if circuit.n_qubits() != state.n_qubits {
        return Err(Error::DimensionMismatch { expected: circuit.n_qubits(), found: state.n_qubits });
    }
    let mut out = state.clone();
    for gate in circuit.gates() {
        out.apply_gate(gate);
    }
    Ok(out)
}
