use super::{Circuit, Gate};
use crate::error::{Error, Result};

/// A computational basis state of arbitrarily many qubits, packed into words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisState {
    n_qubits: usize,
    words: Vec<u64>,
}

impl BasisState {
    pub fn zero(n_qubits: usize) -> Self {
        Self { n_qubits, words: vec![0; n_qubits.div_ceil(64)] }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn get(&self, q: usize) -> bool {
        (self.words[q / 64] >> (q % 64)) & 1 == 1
    }

    pub fn set(&mut self, q: usize, value: bool) {
        let bit = 1u64 << (q % 64);
        if value {
            self.words[q / 64] |= bit;
        } else {
            self.words[q / 64] &= !bit;
        }
    }

    pub fn flip(&mut self, q: usize) {
        self.words[q / 64] ^= 1u64 << (q % 64);
    }

    /// Writes the little-endian bits of `value` onto `wires`.
    pub fn write_register(&mut self, wires: &[usize], value: u64) {
        for (k, &w) in wires.iter().enumerate() {
            self.set(w, (value >> k) & 1 == 1);
        }
    }

    pub fn read_register(&self, wires: &[usize]) -> u64 {
        wires.iter().enumerate().fold(0u64, |v, (k, &w)| v | ((self.get(w) as u64) << k))
    }

    pub fn read_bits(&self, wires: &[usize]) -> Vec<bool> {
        wires.iter().map(|&w| self.get(w)).collect()
    }

    pub fn count_ones(&self, wires: impl IntoIterator<Item = usize>) -> usize {
        wires.into_iter().filter(|&w| self.get(w)).count()
    }

    pub fn all_zero(&self, wires: impl IntoIterator<Item = usize>) -> bool {
        wires.into_iter().all(|w| !self.get(w))
    }
}

/// Runs a permutation circuit on one basis state. Returns the output state
/// and the accumulated `±1` phase from `DIAG_SIGN` gates.
pub fn simulate_basis(circuit: &Circuit, input: &BasisState) -> Result<(BasisState, i8)> {
    if input.n_qubits != circuit.n_qubits() {
        return Err(Error::DimensionMismatch { expected: circuit.n_qubits(), found: input.n_qubits });
    }
    let mut s = input.clone();
    let mut sign = 1i8;
    for gate in circuit.gates() {
        match gate {
            Gate::X(q) => s.flip(*q),
            Gate::Cnot { control, target } => {
                if s.get(*control) {
                    s.flip(*target);
                }
            }
            Gate::Mcx { controls, target } => {
                if controls.iter().all(|&c| s.get(c)) {
                    s.flip(*target);
                }
            }
            Gate::Swap(a, b) => {
                let (va, vb) = (s.get(*a), s.get(*b));
                s.set(*a, vb);
                s.set(*b, va);
            }
            Gate::DiagSign { wires, negate } => {
                if negate[s.read_register(wires) as usize] {
                    sign = -sign;
                }
            }
            g => return Err(Error::NonClassicalGate(g.to_string())),
        }
    }
    Ok((s, sign))
}

/// Exact state `m · 2^{-k/2}` with integer numerators and one shared
/// exponent, closed under `H`, `X`, `CNOT`, `CCX`, `SWAP` and `DIAG_SIGN`.
/// Basis probabilities `m² 2^{-k}` are exact in floating point for small `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicState {
    n_qubits: usize,
    numerators: Vec<i64>,
    half_powers: u32,
}

impl DyadicState {
    pub fn zero(n_qubits: usize) -> Self {
        let mut numerators = vec![0; 1 << n_qubits];
        numerators[0] = 1;
        Self { n_qubits, numerators, half_powers: 0 }
    }

    pub fn numerators(&self) -> &[i64] {
        &self.numerators
    }

    pub fn half_powers(&self) -> u32 {
        self.half_powers
    }

    pub fn apply(&mut self, circuit: &Circuit) -> Result<()> {
        if circuit.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: circuit.n_qubits(), found: self.n_qubits });
        }
        for gate in circuit.gates() {
            self.apply_gate(gate)?;
        }
        Ok(())
    }

    fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        let m = &mut self.numerators;
        let cond_swap = |m: &mut Vec<i64>, mask: usize, target: usize| {
            let t = 1usize << target;
            for i in 0..m.len() {
                if i & t == 0 && i & mask == mask {
                    m.swap(i, i | t);
                }
            }
        };
        match gate {
            Gate::X(q) => cond_swap(m, 0, *q),
            Gate::Cnot { control, target } => cond_swap(m, 1 << control, *target),
            Gate::Mcx { controls, target } => cond_swap(m, controls.iter().fold(0, |a, &c| a | (1 << c)), *target),
            Gate::Swap(a, b) => {
                let (a, b) = (1usize << a, 1usize << b);
                for i in 0..m.len() {
                    if i & a != 0 && i & b == 0 {
                        m.swap(i, i ^ a ^ b);
                    }
                }
            }
            Gate::H(q) => {
                let t = 1usize << q;
                for i in 0..m.len() {
                    if i & t == 0 {
                        let (a, b) = (m[i], m[i | t]);
                        m[i] = a + b;
                        m[i | t] = a - b;
                    }
                }
                self.half_powers += 1;
            }
            Gate::DiagSign { wires, negate } => {
                for (i, v) in m.iter_mut().enumerate() {
                    let k = wires.iter().enumerate().fold(0usize, |k, (bit, &w)| k | (((i >> w) & 1) << bit));
                    if negate[k] {
                        *v = -*v;
                    }
                }
            }
            g => return Err(Error::NonClassicalGate(g.to_string())),
        }
        Ok(())
    }

    /// Reduced density matrix of the low `keep` qubits, tracing out the rest.
    /// Entries are `Σ m_a m_b · 2^{-k}`, exact whenever the integer sums fit in 53 bits.
    pub fn reduced_density(&self, keep: usize) -> Vec<Vec<f64>> {
        let dim = 1usize << keep;
        let rest = 1usize << (self.n_qubits - keep);
        let scale = 0.5f64.powi(self.half_powers as i32);
        (0..dim)
            .map(|a| {
                (0..dim)
                    .map(|b| {
                        let s: i64 = (0..rest).map(|c| self.numerators[a + c * dim] * self.numerators[b + c * dim]).sum();
                        s as f64 * scale
                    })
                    .collect()
            })
            .collect()
    }
}
