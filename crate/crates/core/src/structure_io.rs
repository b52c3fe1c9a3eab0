//! Coarse-grained protein structures: one C-alpha bead per residue.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub id: usize,
    #[serde(flatten)]
    pub position: Position,
    pub mass: f64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let d = [self.x - other.x, self.y - other.y, self.z - other.z];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

impl From<[f64; 3]> for Position {
    fn from(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }
}

/// Ordered C-alpha atoms. Ids are always `0..len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinStructure {
    pub source_id: String,
    atoms: Vec<Atom>,
}

/// Per-residue masses (amu) keyed by three-letter residue name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseOptions {
    pub residue_masses: HashMap<String, f64>,
}

impl ProteinStructure {
    /// Builds a structure from `(position, mass, label)` triples, assigning ids in order.
    pub fn from_atoms<I>(source_id: impl Into<String>, atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Position, f64, String)>,
    {
        let atoms: Vec<Atom> = atoms
            .into_iter()
            .enumerate()
            .map(|(id, (position, mass, label))| Atom { id, position, mass, label })
            .collect();
        let s = Self { source_id: source_id.into(), atoms };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::EmptyStructure);
        }
        for (k, a) in self.atoms.iter().enumerate() {
            if a.id != k {
                return Err(Error::InvalidArgument(format!("atom id {} at position {k}", a.id)));
            }
            let p = a.position;
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvalidArgument(format!("atom {k} has a non-finite coordinate")));
            }
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::InvalidArgument(format!("atom {k} has non-positive mass {}", a.mass)));
            }
        }
        Ok(())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Writes the atoms back out as PDB `ATOM` records (C-alpha only).
    pub fn to_pdb(&self) -> String {
        let mut out = String::new();
        let id = if self.source_id.len() <= 4 { self.source_id.as_str() } else { "" };
        let _ = writeln!(out, "HEADER    {:<40}{:>9}   {:<4}", "COARSE-GRAINED C-ALPHA MODEL", "", id);
        for a in &self.atoms {
            let (res_name, res_seq) = split_label(&a.label);
            let _ = writeln!(
                out,
                "ATOM  {:>5}  CA  {:>3} A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C",
                a.id + 1,
                res_name,
                res_seq,
                a.position.x,
                a.position.y,
                a.position.z,
            );
        }
        out.push_str("END\n");
        out
    }
}

fn split_label(label: &str) -> (&str, i64) {
    let cut = label.find(|c: char| c.is_ascii_digit() || c == '-').unwrap_or(label.len());
    let (name, seq) = label.split_at(cut);
    (if name.is_empty() { "UNK" } else { name }, seq.parse().unwrap_or(0))
}

/// Parses PDB text with unit masses.
pub fn parse_pdb(text: &str) -> Result<ProteinStructure> {
    parse_pdb_with(text, &ParseOptions::default())
}

/// Parses C-alpha `ATOM` records from the first model. For each residue the
/// first alternate location seen wins.
pub fn parse_pdb_with(text: &str, options: &ParseOptions) -> Result<ProteinStructure> {
    let mut source_id = String::from("unknown");
    let mut seen_residues = HashSet::new();
    let mut atoms = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with("HEADER") {
            if let Some(code) = line.get(62..66).map(str::trim).filter(|c| !c.is_empty()) {
                source_id = code.to_string();
            }
            continue;
        }
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        let name = field(line, 12, 16).trim();
        if name != "CA" {
            continue;
        }
        let res_name = field(line, 17, 20).trim().to_string();
        let chain = field(line, 21, 22).to_string();
        let res_seq = field(line, 22, 26).trim().to_string();
        let icode = field(line, 26, 27).to_string();
        if !seen_residues.insert((chain, res_seq.clone(), icode)) {
            continue;
        }
        let coord = |lo: usize, hi: usize, axis: &str| -> Result<f64> {
            let raw = field(line, lo, hi).trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line: lineno, message: format!("malformed {axis} coordinate {raw:?}") })
        };
        let position = Position::new(coord(30, 38, "x")?, coord(38, 46, "y")?, coord(46, 54, "z")?);
        let mass = options.residue_masses.get(&res_name).copied().unwrap_or(1.0);
        atoms.push((position, mass, format!("{res_name}{res_seq}")));
    }

    if atoms.is_empty() {
        return Err(Error::EmptyStructure);
    }
    ProteinStructure::from_atoms(source_id, atoms)
}

fn field(line: &str, lo: usize, hi: usize) -> &str {
    let hi = hi.min(line.len());
    if lo >= hi {
        ""
    } else {
        line.get(lo..hi).unwrap_or("")
    }
}

/// `n` unit-mass beads on the x axis, `spacing` apart.
pub fn synthetic_chain(n: usize, spacing: f64) -> Result<ProteinStructure> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic chain needs at least one atom".into()));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing}")));
    }
    ProteinStructure::from_atoms(
        format!("chain{n}"),
        (0..n).map(|k| (Position::new(k as f64 * spacing, 0.0, 0.0), 1.0, format!("GLY{}", k + 1))),
    )
}
