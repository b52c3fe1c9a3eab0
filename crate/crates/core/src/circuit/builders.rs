use std::collections::HashSet;

use super::{simulate_basis, BasisState, Circuit, Gate};
use crate::error::{Error, Result};
use crate::network_model::NetworkModel;
use crate::structure_io::ProteinStructure;

/// `n`-to-`2^n` one-hot decoder with the address register preserved.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub circuit: Circuit,
    /// Address wires, little-endian.
    pub address: Vec<usize>,
    pub one_hot: Vec<usize>,
    /// Copies of address bits used to run a level's Toffolis in parallel.
    pub fanout: Vec<usize>,
    /// Address `i` lights `one_hot[permutation[i]]`.
    pub permutation: Vec<usize>,
}

fn fanout_len(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (1 << (n - 1)) - 1
    }
}

/// Appends the decoder gates and returns the address-to-wire permutation.
///
/// Bit 0 is split by `CNOT, X, CNOT, X` onto the first two one-hot wires.
/// Each further bit `k` copies itself into `2^k` fanout wires, moves every
/// occupied wire `j` to `j + 2^k` with a Toffoli plus a CNOT, then uncomputes
/// the copies.
fn append_decoder(c: &mut Circuit, address: &[usize], one_hot: &[usize], fanout: &[usize]) -> Result<Vec<usize>> {
    let n = address.len();
    let a0 = address[0];
    c.extend([
        Gate::Cnot { control: a0, target: one_hot[0] },
        Gate::X(a0),
        Gate::Cnot { control: a0, target: one_hot[1] },
        Gate::X(a0),
    ])?;
    for k in 1..n {
        let width = 1usize << k;
        let mut copies = Vec::with_capacity(width);
        copies.push(address[k]);
        copies.extend_from_slice(&fanout[..width - 1]);

        let mut spread = Vec::new();
        let mut have = 1;
        while have < width {
            for t in 0..have.min(width - have) {
                spread.push(Gate::Cnot { control: copies[t], target: copies[have + t] });
            }
            have *= 2;
        }
        c.extend(spread.iter().cloned())?;
        for j in 0..width {
            c.push(Gate::Mcx { controls: vec![copies[j], one_hot[j]], target: one_hot[j + width] })?;
        }
        for j in 0..width {
            c.push(Gate::Cnot { control: one_hot[j + width], target: one_hot[j] })?;
        }
        c.extend(spread.into_iter().rev())?;
    }
    Ok((0..1usize << n).map(|i| i ^ 1).collect())
}

pub fn build_decoder(n: usize) -> Result<Decoder> {
    if n == 0 {
        return Err(Error::InvalidArgument("decoder needs at least one address bit".into()));
    }
    let mut circuit = Circuit::new(0);
    let address: Vec<usize> = circuit.add_qubits(n).collect();
    let one_hot: Vec<usize> = circuit.add_qubits(1 << n).collect();
    let fanout: Vec<usize> = circuit.add_ancillas(fanout_len(n)).collect();
    let permutation = append_decoder(&mut circuit, &address, &one_hot, &fanout)?;
    Ok(Decoder { circuit, address, one_hot, fanout, permutation })
}

/// Standalone OR-tree data loader `|e_i⟩|0^m⟩ → |e_i⟩|w_i⟩`.
#[derive(Debug, Clone)]
pub struct DataLoader {
    pub circuit: Circuit,
    pub one_hot: Vec<usize>,
    pub output: Vec<usize>,
    pub or_ancillas: Vec<usize>,
}

/// `a ∨ b` into a clean ancilla: X-conjugated Toffoli followed by a flip.
fn or_gadget(a: usize, b: usize, out: usize) -> [Gate; 6] {
    [Gate::X(a), Gate::X(b), Gate::Mcx { controls: vec![a, b], target: out }, Gate::X(a), Gate::X(b), Gate::X(out)]
}

/// Flips `target` iff any of `leaves` is set, using a balanced OR tree whose
/// ancillas are uncomputed afterwards.
fn append_any_controlled_not(c: &mut Circuit, leaves: &[usize], target: usize) -> Result<Vec<usize>> {
    match leaves {
        [] => Ok(Vec::new()),
        [only] => {
            c.push(Gate::Cnot { control: *only, target })?;
            Ok(Vec::new())
        }
        _ => {
            let mut compute = Vec::new();
            let mut ancillas = Vec::new();
            let mut level = leaves.to_vec();
            while level.len() > 1 {
                let mut next = Vec::with_capacity(level.len().div_ceil(2));
                for pair in level.chunks(2) {
                    if let [a, b] = pair {
                        let anc = c.add_ancillas(1).start;
                        compute.extend(or_gadget(*a, *b, anc));
                        ancillas.push(anc);
                        next.push(anc);
                    } else {
                        next.push(pair[0]);
                    }
                }
                level = next;
            }
            c.extend(compute.iter().cloned())?;
            c.push(Gate::Cnot { control: level[0], target })?;
            c.extend(compute.into_iter().rev())?;
            Ok(ancillas)
        }
    }
}

fn append_data_loader(c: &mut Circuit, one_hot: &[usize], output: &[usize], words: &[(usize, &[bool])]) -> Result<Vec<usize>> {
    let mut ancillas = Vec::new();
    for (t, &out) in output.iter().enumerate() {
        let leaves: Vec<usize> = words.iter().filter(|(_, w)| w[t]).map(|&(slot, _)| one_hot[slot]).collect();
        ancillas.extend(append_any_controlled_not(c, &leaves, out)?);
    }
    Ok(ancillas)
}

/// `dictionary` maps one-hot wire index (0-based) to a `width`-bit word.
pub fn build_data_loader(dictionary: &[(usize, Vec<bool>)], n_one_hot: usize, width: usize) -> Result<DataLoader> {
    let mut seen = HashSet::new();
    for (idx, word) in dictionary {
        if *idx >= n_one_hot {
            return Err(Error::InvalidArgument(format!("index {idx} outside {n_one_hot} one-hot wires")));
        }
        if word.len() != width {
            return Err(Error::DimensionMismatch { expected: width, found: word.len() });
        }
        if !seen.insert(*idx) {
            return Err(Error::IndexCollision(*idx));
        }
    }
    let mut circuit = Circuit::new(0);
    let one_hot: Vec<usize> = circuit.add_qubits(n_one_hot).collect();
    let output: Vec<usize> = circuit.add_qubits(width).collect();
    let words: Vec<(usize, &[bool])> = dictionary.iter().map(|(i, w)| (*i, w.as_slice())).collect();
    let or_ancillas = append_data_loader(&mut circuit, &one_hot, &output, &words)?;
    Ok(DataLoader { circuit, one_hot, output, or_ancillas })
}

/// Coherent table lookup `|i⟩|0^m⟩ → |i⟩|table[i]⟩` built as
/// decoder, data loader, inverse decoder.
#[derive(Debug, Clone)]
pub struct Qrom {
    pub circuit: Circuit,
    pub address: Vec<usize>,
    pub output: Vec<usize>,
    /// Table padded with zero words to a power of two.
    pub table: Vec<Vec<bool>>,
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QromOutcome {
    pub word: Vec<bool>,
    pub address_preserved: bool,
    pub ancillas_clean: bool,
    pub phase: i8,
}

impl QromOutcome {
    pub fn value(&self) -> u64 {
        bits_to_u64(&self.word)
    }
}

impl Qrom {
    pub fn width(&self) -> usize {
        self.output.len()
    }

    pub fn entries(&self) -> usize {
        self.table.len()
    }

    /// Simulates the circuit on address `index` with all other wires clear.
    pub fn lookup(&self, index: usize) -> Result<QromOutcome> {
        if index >= self.table.len() {
            return Err(Error::InvalidArgument(format!("address {index} outside {} entries", self.table.len())));
        }
        let mut input = BasisState::zero(self.circuit.n_qubits());
        input.write_register(&self.address, index as u64);
        let (out, phase) = simulate_basis(&self.circuit, &input)?;
        let ancillas_clean = (0..self.circuit.n_qubits())
            .filter(|q| !self.address.contains(q) && !self.output.contains(q))
            .all(|q| !out.get(q));
        Ok(QromOutcome {
            word: out.read_bits(&self.output),
            address_preserved: out.read_register(&self.address) == index as u64,
            ancillas_clean,
            phase,
        })
    }
}

pub fn u64_to_bits(value: u64, width: usize) -> Vec<bool> {
    (0..width).map(|k| k < 64 && (value >> k) & 1 == 1).collect()
}

pub fn bits_to_u64(bits: &[bool]) -> u64 {
    bits.iter().take(64).enumerate().fold(0, |v, (k, &b)| v | ((b as u64) << k))
}

fn address_bits(entries: usize) -> usize {
    entries.max(2).next_power_of_two().trailing_zeros() as usize
}

/// QROM over little-endian bit words; all words must share one width.
pub fn build_qrom_bits(table: &[Vec<bool>]) -> Result<Qrom> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("QROM table is empty".into()));
    }
    let width = table[0].len();
    if let Some(w) = table.iter().find(|w| w.len() != width) {
        return Err(Error::DimensionMismatch { expected: width, found: w.len() });
    }
    let n = address_bits(table.len());
    let mut padded = table.to_vec();
    padded.resize(1 << n, vec![false; width]);

    let mut circuit = Circuit::new(0);
    let address: Vec<usize> = circuit.add_qubits(n).collect();
    let one_hot: Vec<usize> = circuit.add_ancillas(1 << n).collect();
    let fanout: Vec<usize> = circuit.add_ancillas(fanout_len(n)).collect();
    let output: Vec<usize> = circuit.add_qubits(width).collect();

    let permutation = append_decoder(&mut circuit, &address, &one_hot, &fanout)?;
    let words: Vec<(usize, &[bool])> = padded.iter().enumerate().map(|(i, w)| (permutation[i], w.as_slice())).collect();
    append_data_loader(&mut circuit, &one_hot, &output, &words)?;
    let undo = {
        let mut d = Circuit::new(circuit.n_qubits());
        append_decoder(&mut d, &address, &one_hot, &fanout)?;
        d.inverse()
    };
    circuit.extend(undo.gates().cloned())?;
    Ok(Qrom { circuit, address, output, table: padded, permutation })
}

/// QROM over `width`-bit integer words (`width ≤ 64`).
pub fn build_qrom(table: &[u64], width: usize) -> Result<Qrom> {
    if width > 64 {
        return Err(Error::InvalidArgument("integer QROM words are at most 64 bits".into()));
    }
    if let Some(v) = table.iter().find(|&&v| width < 64 && v >> width != 0) {
        return Err(Error::InvalidArgument(format!("word {v} does not fit in {width} bits")));
    }
    let bits: Vec<Vec<bool>> = table.iter().map(|&v| u64_to_bits(v, width)).collect();
    build_qrom_bits(&bits)
}

/// Two's-complement fixed point with `units_per_angstrom` steps per Å.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FixedPoint {
    pub bits: u32,
    pub units_per_angstrom: f64,
}

impl Default for FixedPoint {
    fn default() -> Self {
        Self { bits: 24, units_per_angstrom: 256.0 }
    }
}

impl FixedPoint {
    pub fn quantize(&self, value: f64) -> Option<i64> {
        let q = (value * self.units_per_angstrom).round();
        let half = (1i64 << (self.bits - 1)) as f64;
        (q.is_finite() && q >= -half && q < half).then_some(q as i64)
    }

    pub fn encode(&self, value: f64) -> Option<u64> {
        let q = self.quantize(value)?;
        Some((q as u64) & ((1u64 << self.bits) - 1))
    }

    pub fn decode(&self, word: u64) -> f64 {
        let shift = 64 - self.bits;
        (((word << shift) as i64) >> shift) as f64 / self.units_per_angstrom
    }
}

/// `U_x`: QROM over fixed-point `(x, y, z)` words.
#[derive(Debug, Clone)]
pub struct PositionOracle {
    pub qrom: Qrom,
    pub fixed_point: FixedPoint,
    pub n_atoms: usize,
}

impl PositionOracle {
    /// Register contents `(x, y, z)` for atom `i`, as raw `bits`-wide words.
    pub fn load(&self, i: usize) -> Result<[u64; 3]> {
        let out = self.qrom.lookup(i)?;
        let b = self.fixed_point.bits as usize;
        Ok([bits_to_u64(&out.word[..b]), bits_to_u64(&out.word[b..2 * b]), bits_to_u64(&out.word[2 * b..])])
    }
}

pub fn build_position_oracle(structure: &ProteinStructure, fixed_point: FixedPoint) -> Result<PositionOracle> {
    if !(1..=63).contains(&fixed_point.bits) || !(fixed_point.units_per_angstrom > 0.0) {
        return Err(Error::InvalidArgument("fixed point needs 1..=63 bits and a positive scale".into()));
    }
    let b = fixed_point.bits as usize;
    let mut table = Vec::with_capacity(structure.len());
    for atom in structure.atoms() {
        let mut word = Vec::with_capacity(3 * b);
        for value in atom.position.to_array() {
            let code = fixed_point.encode(value).ok_or(Error::FixedPointOverflow {
                atom: atom.id,
                value,
                bits: fixed_point.bits,
            })?;
            word.extend(u64_to_bits(code, b));
        }
        table.push(word);
    }
    Ok(PositionOracle { qrom: build_qrom_bits(&table)?, fixed_point, n_atoms: structure.len() })
}

/// Classical `(i, k) ↦ j_{i,k}` table, flattened as `(i << slot_bits) | k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIndexTable {
    pub rows: Vec<Vec<usize>>,
    pub slot_bits: usize,
    pub word_bits: usize,
}

impl SparseIndexTable {
    /// `rows[i]` must be sorted column indices below `n_cols`.
    pub fn from_rows(rows: Vec<Vec<usize>>, n_cols: usize) -> Self {
        let max_degree = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let slot_bits = max_degree.next_power_of_two().trailing_zeros() as usize;
        let word_bits = (usize::BITS - n_cols.leading_zeros()).max(1) as usize;
        Self { rows, slot_bits, word_bits }
    }

    /// All-ones word; never a valid column because `2^word_bits > n_cols`.
    pub fn sentinel(&self) -> u64 {
        (1u64 << self.word_bits) - 1
    }

    pub fn slots(&self) -> usize {
        1 << self.slot_bits
    }

    pub fn entry(&self, i: usize, k: usize) -> u64 {
        self.rows.get(i).and_then(|r| r.get(k)).map_or(self.sentinel(), |&j| j as u64)
    }

    pub fn flat_index(&self, i: usize, k: usize) -> usize {
        (i << self.slot_bits) | k
    }

    pub fn words(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.rows.len() * self.slots());
        for i in 0..self.rows.len() {
            for k in 0..self.slots() {
                out.push(self.entry(i, k));
            }
        }
        out
    }
}

/// Sparsity pattern of `K`, diagonal included where nonzero.
pub fn sparse_index_table(model: &NetworkModel) -> SparseIndexTable {
    let rows = (0..model.dof()).map(|i| model.row_pattern(i)).collect();
    SparseIndexTable::from_rows(rows, model.dof())
}

/// `U_s`: QROM over the flattened sparse-index table.
#[derive(Debug, Clone)]
pub struct SparseIndexOracle {
    pub qrom: Qrom,
    pub table: SparseIndexTable,
}

impl SparseIndexOracle {
    pub fn query(&self, i: usize, k: usize) -> Result<u64> {
        if k >= self.table.slots() {
            return Ok(self.table.sentinel());
        }
        Ok(self.qrom.lookup(self.table.flat_index(i, k))?.value())
    }
}

pub fn build_sparse_index_oracle(model: &NetworkModel) -> Result<SparseIndexOracle> {
    oracle_from_table(sparse_index_table(model))
}

pub(crate) fn oracle_from_table(table: SparseIndexTable) -> Result<SparseIndexOracle> {
    let qrom = build_qrom(&table.words(), table.word_bits)?;
    Ok(SparseIndexOracle { qrom, table })
}
