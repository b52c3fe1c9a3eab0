//! Gate-level circuits with greedy layering, a state-vector simulator, a
//! classical basis-state simulator for permutation circuits, and the read-in
//! circuit constructors (one-hot decoder, OR-tree data loader, QROM).

mod basis;
mod builders;
mod statevector;

pub use basis::{simulate_basis, BasisState, DyadicState};
pub use builders::{
    bits_to_u64, build_data_loader, build_decoder, build_position_oracle, build_qrom, build_qrom_bits,
    build_sparse_index_oracle, sparse_index_table, u64_to_bits, DataLoader, Decoder, FixedPoint, PositionOracle,
    Qrom, QromOutcome, SparseIndexOracle, SparseIndexTable,
};
pub use statevector::{apply, StateVector};

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gate set. Multi-qubit gates list controls first and the target last.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    X(usize),
    H(usize),
    Cnot { control: usize, target: usize },
    /// Multi-controlled X (Toffoli for two controls).
    Mcx { controls: Vec<usize>, target: usize },
    /// `RY(angle)` on `target` when every control is `|1⟩`. No controls means a plain `RY`.
    Cry { controls: Vec<usize>, target: usize, angle: f64 },
    Swap(usize, usize),
    /// `±1` diagonal over `wires`; `negate[k]` flips the sign of the
    /// sub-basis state whose little-endian index over `wires` is `k`.
    DiagSign { wires: Vec<usize>, negate: Vec<bool> },
}

impl Gate {
    pub fn kind(&self) -> &'static str {
        match self {
            Gate::X(_) => "X",
            Gate::H(_) => "H",
            Gate::Cnot { .. } => "CNOT",
            Gate::Mcx { .. } => "CCX",
            Gate::Cry { .. } => "CRY",
            Gate::Swap(..) => "SWAP",
            Gate::DiagSign { .. } => "DIAG_SIGN",
        }
    }

    pub fn wires(&self) -> Vec<usize> {
        match self {
            Gate::X(q) | Gate::H(q) => vec![*q],
            Gate::Cnot { control, target } => vec![*control, *target],
            Gate::Mcx { controls, target } | Gate::Cry { controls, target, .. } => {
                controls.iter().copied().chain(std::iter::once(*target)).collect()
            }
            Gate::Swap(a, b) => vec![*a, *b],
            Gate::DiagSign { wires, .. } => wires.clone(),
        }
    }

    /// Whether the gate maps computational basis states to basis states.
    pub fn is_classical(&self) -> bool {
        !matches!(self, Gate::H(_) | Gate::Cry { .. })
    }

    pub fn inverse(&self) -> Gate {
        match self {
            Gate::Cry { controls, target, angle } => Gate::Cry { controls: controls.clone(), target: *target, angle: -angle },
            g => g.clone(),
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let wires = self.wires();
        for (k, &w) in wires.iter().enumerate() {
            if w >= n_qubits {
                return Err(Error::InvalidArgument(format!("{} wire {w} outside {n_qubits} qubits", self.kind())));
            }
            if wires[..k].contains(&w) {
                return Err(Error::InvalidArgument(format!("{} repeats wire {w}", self.kind())));
            }
        }
        match self {
            Gate::Cry { angle, .. } if !angle.is_finite() => {
                Err(Error::InvalidArgument("rotation angle must be finite".into()))
            }
            Gate::DiagSign { wires, negate } if negate.len() != 1usize << wires.len() => Err(Error::InvalidArgument(
                format!("DIAG_SIGN over {} wires needs {} signs", wires.len(), 1usize << wires.len()),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Gate {
    /// `KIND wire[,wire...] [parameter]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wires: Vec<String> = self.wires().iter().map(|w| w.to_string()).collect();
        write!(f, "{} {}", self.kind(), wires.join(","))?;
        match self {
            Gate::Cry { angle, .. } => write!(f, " {angle:e}"),
            Gate::DiagSign { negate, .. } => {
                let signs: String = negate.iter().map(|&n| if n { '-' } else { '+' }).collect();
                write!(f, " {signs}")
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Gate {
    type Err = Error;

    fn from_str(line: &str) -> Result<Gate> {
        let bad = |m: &str| Error::Parse { line: 0, message: format!("{m}: {line:?}") };
        let mut parts = line.split_whitespace();
        let kind = parts.next().ok_or_else(|| bad("empty gate line"))?;
        let wires: Vec<usize> = parts
            .next()
            .ok_or_else(|| bad("missing wires"))?
            .split(',')
            .map(|w| w.parse().map_err(|_| bad("bad wire index")))
            .collect::<Result<_>>()?;
        let param = parts.next();
        let one = |w: &[usize]| if w.len() == 1 { Ok(w[0]) } else { Err(bad("expected one wire")) };
        let split = |w: &[usize]| -> Result<(Vec<usize>, usize)> {
            let (t, c) = w.split_last().ok_or_else(|| bad("missing target"))?;
            Ok((c.to_vec(), *t))
        };
        Ok(match kind {
            "X" => Gate::X(one(&wires)?),
            "H" => Gate::H(one(&wires)?),
            "CNOT" if wires.len() == 2 => Gate::Cnot { control: wires[0], target: wires[1] },
            "CCX" => {
                let (controls, target) = split(&wires)?;
                Gate::Mcx { controls, target }
            }
            "CRY" => {
                let (controls, target) = split(&wires)?;
                let angle = param.ok_or_else(|| bad("missing angle"))?.parse().map_err(|_| bad("bad angle"))?;
                Gate::Cry { controls, target, angle }
            }
            "SWAP" if wires.len() == 2 => Gate::Swap(wires[0], wires[1]),
            "DIAG_SIGN" => {
                let negate = param
                    .ok_or_else(|| bad("missing signs"))?
                    .chars()
                    .map(|c| match c {
                        '+' => Ok(false),
                        '-' => Ok(true),
                        _ => Err(bad("signs must be + or -")),
                    })
                    .collect::<Result<_>>()?;
                Gate::DiagSign { wires, negate }
            }
            _ => return Err(bad("unknown gate")),
        })
    }
}

/// Gates grouped into layers; gates in a layer act on disjoint wires.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    layers: Vec<Vec<Gate>>,
    /// First layer index at which each wire is free.
    front: Vec<usize>,
    ancillas: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub qubits: usize,
    pub depth: usize,
    pub gates: usize,
    pub ancillas: usize,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, layers: Vec::new(), front: vec![0; n_qubits], ancillas: 0 }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Appends `count` fresh wires and returns their indices.
    pub fn add_qubits(&mut self, count: usize) -> Range<usize> {
        let start = self.n_qubits;
        self.n_qubits += count;
        self.front.resize(self.n_qubits, 0);
        start..self.n_qubits
    }

    /// Appends wires that are tracked as ancillas in [`Resources`].
    pub fn add_ancillas(&mut self, count: usize) -> Range<usize> {
        self.ancillas += count;
        self.add_qubits(count)
    }

    pub fn ancillas(&self) -> usize {
        self.ancillas
    }

    /// Places the gate in the earliest layer after every earlier gate on its wires.
    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        let wires = gate.wires();
        let layer = wires.iter().map(|&w| self.front[w]).max().unwrap_or(0);
        if layer == self.layers.len() {
            self.layers.push(Vec::new());
        }
        self.layers[layer].push(gate);
        for w in wires {
            self.front[w] = layer + 1;
        }
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Gate>>(&mut self, gates: I) -> Result<()> {
        for g in gates {
            self.push(g)?;
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Vec<Gate>] {
        &self.layers
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flatten()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn inverse(&self) -> Circuit {
        let mut inv = Circuit::new(self.n_qubits);
        inv.ancillas = self.ancillas;
        let gates: Vec<Gate> = self.gates().map(Gate::inverse).collect();
        for g in gates.into_iter().rev() {
            inv.push(g).expect("inverse of a valid circuit is valid");
        }
        inv
    }

    pub fn resources(&self) -> Resources {
        resources(self)
    }

    /// One gate per line in layer order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for g in self.gates() {
            out.push_str(&g.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(n_qubits: usize, text: &str) -> Result<Circuit> {
        let mut c = Circuit::new(n_qubits);
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let gate: Gate = line.parse().map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse { line: idx + 1, message },
                other => other,
            })?;
            c.push(gate)?;
        }
        Ok(c)
    }
}

pub fn resources(circuit: &Circuit) -> Resources {
    Resources {
        qubits: circuit.n_qubits(),
        depth: circuit.depth(),
        gates: circuit.gate_count(),
        ancillas: circuit.ancillas(),
    }
}
