//! Modifiable connectivity store backing the sparse-access tables.
//!
//! Each row keeps the set of its neighbour slots in a binary tree over the
//! column range `0..capacity`. Leaves are 64-bit occupancy words; internal
//! node `v` stores the number of set bits in its left subtree, so the `k`-th
//! neighbour is found by one root-to-leaf descent. Only nonzero entries are
//! materialised. Every stored value that changes during a modification is
//! counted in the update report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::circuit::SparseIndexTable;
use crate::error::{Error, Result};
use crate::structure_io::{Position, ProteinStructure};

const LEAF_BITS: usize = 64;
const MAGIC: &[u8; 4] = b"GKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct RowTree {
    degree: u32,
    /// Heap-indexed internal nodes `1..leaves`, left-subtree counts.
    left: BTreeMap<u32, u32>,
    /// Occupancy words by leaf index.
    words: BTreeMap<u32, u64>,
}

impl RowTree {
    /// Sets or clears column `j`; returns the number of stored values changed.
    fn update(&mut self, j: usize, present: bool, leaves: usize) -> usize {
        let leaf = (j / LEAF_BITS) as u32;
        let bit = 1u64 << (j % LEAF_BITS);
        let word = self.words.get(&leaf).copied().unwrap_or(0);
        if (word & bit != 0) == present {
            return 0;
        }
        let new_word = word ^ bit;
        if new_word == 0 {
            self.words.remove(&leaf);
        } else {
            self.words.insert(leaf, new_word);
        }
        let mut writes = 1;

        let (mut node, mut lo, mut size) = (1u32, 0u32, leaves as u32);
        while size > 1 {
            let half = size / 2;
            if leaf < lo + half {
                let c = self.left.entry(node).or_insert(0);
                if present {
                    *c += 1;
                } else {
                    *c -= 1;
                }
                if *c == 0 {
                    self.left.remove(&node);
                }
                writes += 1;
                node *= 2;
            } else {
                node = 2 * node + 1;
                lo += half;
            }
            size = half;
        }
        if present {
            self.degree += 1;
        } else {
            self.degree -= 1;
        }
        writes + 1
    }

    fn kth(&self, mut k: u32, leaves: usize) -> Option<usize> {
        if k >= self.degree {
            return None;
        }
        let (mut node, mut lo, mut size) = (1u32, 0u32, leaves as u32);
        while size > 1 {
            let half = size / 2;
            let l = self.left.get(&node).copied().unwrap_or(0);
            if k < l {
                node *= 2;
            } else {
                k -= l;
                node = 2 * node + 1;
                lo += half;
            }
            size = half;
        }
        let mut word = self.words.get(&lo).copied().unwrap_or(0);
        for _ in 0..k {
            word &= word - 1;
        }
        Some(lo as usize * LEAF_BITS + word.trailing_zeros() as usize)
    }

    fn contains(&self, j: usize) -> bool {
        self.words.get(&((j / LEAF_BITS) as u32)).is_some_and(|w| w >> (j % LEAF_BITS) & 1 == 1)
    }

    fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().flat_map(|(&leaf, &w)| {
            (0..LEAF_BITS).filter(move |b| w >> b & 1 == 1).map(move |b| leaf as usize * LEAF_BITS + b)
        })
    }

    fn stored_values(&self) -> usize {
        self.words.len() + self.left.len() + (self.degree != 0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AtomRecord {
    position: Position,
    mass: f64,
}

/// Stores that changed during one modification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub changed_values: usize,
    /// Live rows whose tree or degree changed, ascending.
    pub affected_rows: Vec<usize>,
    /// Degree of the modified atom before and after.
    pub degree_old: usize,
    pub degree_new: usize,
    /// Slot of the atom the operation acted on.
    pub slot: usize,
    /// Whether the column capacity had to grow.
    pub grew: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityStore {
    cutoff: f64,
    spring: f64,
    capacity: usize,
    atoms: Vec<Option<AtomRecord>>,
    labels: Vec<String>,
    free: BTreeSet<usize>,
    grid: BTreeMap<[i64; 3], BTreeSet<usize>>,
    rows: Vec<RowTree>,
}

/// Tables ready for QROM synthesis, indexed by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedTables {
    pub sparse: SparseIndexTable,
    /// `K_{i, j_{i,k}}` aligned with `sparse.words()`; zero on sentinel slots.
    pub values: Vec<f64>,
    pub diagonal: Vec<f64>,
}

fn capacity_for(slots: usize) -> usize {
    (slots + 1).next_power_of_two()
}

impl ConnectivityStore {
    pub fn build(structure: &ProteinStructure, cutoff: f64) -> Result<Self> {
        Self::build_with_spring(structure, cutoff, 1.0)
    }

    pub fn build_with_spring(structure: &ProteinStructure, cutoff: f64, spring: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) || !(spring > 0.0 && spring.is_finite()) {
            return Err(Error::InvalidArgument("cutoff and spring must be positive".into()));
        }
        let mut store = Self {
            cutoff,
            spring,
            capacity: capacity_for(structure.len()),
            atoms: Vec::with_capacity(structure.len()),
            labels: Vec::with_capacity(structure.len()),
            free: BTreeSet::new(),
            grid: BTreeMap::new(),
            rows: vec![RowTree::default(); structure.len()],
        };
        for atom in structure.atoms() {
            store.atoms.push(Some(AtomRecord { position: atom.position, mass: atom.mass }));
            store.labels.push(atom.label.clone());
            store.grid.entry(store.cell(&atom.position)).or_default().insert(atom.id);
        }
        let leaves = store.leaves();
        for i in 0..store.atoms.len() {
            for j in store.neighbours_of(i, &store.atoms[i].unwrap().position) {
                store.rows[i].update(j, true, leaves);
            }
        }
        Ok(store)
    }

    fn leaves(&self) -> usize {
        self.capacity.div_ceil(LEAF_BITS)
    }

    fn cell(&self, p: &Position) -> [i64; 3] {
        p.to_array().map(|c| (c / self.cutoff).floor() as i64)
    }

    /// Live slots within the cutoff of `p`, excluding `skip`, ascending.
    fn neighbours_of(&self, skip: usize, p: &Position) -> Vec<usize> {
        let c = self.cell(p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(members) = self.grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in members {
                            if j != skip && p.distance(&self.atoms[j].unwrap().position) <= self.cutoff {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn check_live(&self, i: usize) -> Result<AtomRecord> {
        self.atoms.get(i).copied().flatten().ok_or_else(|| Error::InvalidArgument(format!("slot {i} holds no atom")))
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn spring(&self) -> f64 {
        self.spring
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Slots including retired ones.
    pub fn n_slots(&self) -> usize {
        self.atoms.len()
    }

    pub fn len(&self) -> usize {
        self.atoms.len() - self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn live_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.atoms.len()).filter(|&i| self.atoms[i].is_some())
    }

    pub fn is_live(&self, i: usize) -> bool {
        self.atoms.get(i).is_some_and(Option::is_some)
    }

    pub fn position(&self, i: usize) -> Option<Position> {
        self.atoms.get(i).copied().flatten().map(|a| a.position)
    }

    pub fn mass(&self, i: usize) -> Option<f64> {
        self.atoms.get(i).copied().flatten().map(|a| a.mass)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows.get(i).map_or(0, |r| r.degree as usize)
    }

    /// `k`-th smallest neighbour slot of row `i`, or `None` past the degree.
    pub fn query_sparse(&self, i: usize, k: usize) -> Option<usize> {
        let row = self.rows.get(i)?;
        row.kth(u32::try_from(k).ok()?, self.leaves())
    }

    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        self.rows.get(i).map(|r| r.columns().collect()).unwrap_or_default()
    }

    /// `K_ij` of the GNM Kirchhoff matrix over live slots.
    pub fn query_entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.degree(i) as f64 * self.spring;
        }
        match self.rows.get(i) {
            Some(r) if r.contains(j) => -self.spring,
            _ => 0.0,
        }
    }

    /// Total number of materialised tree values, for memory reporting.
    pub fn stored_values(&self) -> usize {
        self.rows.iter().map(RowTree::stored_values).sum()
    }

    fn link(&mut self, i: usize, j: usize, present: bool) -> usize {
        let leaves = self.leaves();
        self.rows[i].update(j, present, leaves) + self.rows[j].update(i, present, leaves)
    }

    fn grid_move(&mut self, i: usize, from: Option<[i64; 3]>, to: Option<[i64; 3]>) -> usize {
        if from == to {
            return 0;
        }
        let mut writes = 0;
        if let Some(c) = from {
            let members = self.grid.get_mut(&c).expect("grid cell of a live atom");
            members.remove(&i);
            if members.is_empty() {
                self.grid.remove(&c);
            }
            writes += 1;
        }
        if let Some(c) = to {
            self.grid.entry(c).or_default().insert(i);
            writes += 1;
        }
        writes
    }

    fn finish(&self, slot: usize, changed_values: usize, mut rows: Vec<usize>, degree_old: usize, grew: bool) -> UpdateReport {
        rows.sort_unstable();
        rows.dedup();
        UpdateReport { changed_values, affected_rows: rows, degree_old, degree_new: self.degree(slot), slot, grew }
    }

    pub fn move_atom(&mut self, i: usize, new_position: Position) -> Result<UpdateReport> {
        let old = self.check_live(i)?;
        if !new_position.to_array().iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("position must be finite".into()));
        }
        let degree_old = self.degree(i);
        let before: BTreeSet<usize> = self.rows[i].columns().collect();

        let mut writes = old.position.to_array().iter().zip(new_position.to_array()).filter(|(a, b)| **a != *b).count();
        writes += self.grid_move(i, Some(self.cell(&old.position)), Some(self.cell(&new_position)));
        self.atoms[i] = Some(AtomRecord { position: new_position, mass: old.mass });

        let after: BTreeSet<usize> = self.neighbours_of(i, &new_position).into_iter().collect();
        let mut rows = Vec::new();
        for &j in before.difference(&after) {
            writes += self.link(i, j, false);
            rows.extend([i, j]);
        }
        for &j in after.difference(&before) {
            writes += self.link(i, j, true);
            rows.extend([i, j]);
        }
        Ok(self.finish(i, writes, rows, degree_old, false))
    }

    /// Places a new atom in the lowest free slot.
    pub fn add_atom(&mut self, position: Position, mass: f64) -> Result<UpdateReport> {
        self.add_atom_labelled(position, mass, "UNK".into())
    }

    pub fn add_atom_labelled(&mut self, position: Position, mass: f64, label: String) -> Result<UpdateReport> {
        if !position.to_array().iter().all(|c| c.is_finite()) || !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument("atom needs a finite position and positive mass".into()));
        }
        let mut writes = 0;
        let mut grew = false;
        let slot = match self.free.pop_first() {
            Some(s) => s,
            None => {
                self.atoms.push(None);
                self.labels.push(String::new());
                self.rows.push(RowTree::default());
                self.atoms.len() - 1
            }
        };
        if slot >= self.capacity {
            writes += self.grow(capacity_for(self.atoms.len()));
            grew = true;
        }
        self.atoms[slot] = Some(AtomRecord { position, mass });
        self.labels[slot] = label;
        writes += 4 + self.grid_move(slot, None, Some(self.cell(&position)));
        let mut rows = Vec::new();
        for j in self.neighbours_of(slot, &position) {
            writes += self.link(slot, j, true);
            rows.extend([slot, j]);
        }
        Ok(self.finish(slot, writes, rows, 0, grew))
    }

    /// Retires slot `i`; its index is reused by the next addition.
    pub fn remove_atom(&mut self, i: usize) -> Result<UpdateReport> {
        let old = self.check_live(i)?;
        let degree_old = self.degree(i);
        let mut writes = 4 + self.grid_move(i, Some(self.cell(&old.position)), None);
        let mut rows = Vec::new();
        for j in self.rows[i].columns().collect::<Vec<_>>() {
            writes += self.link(i, j, false);
            rows.push(j);
        }
        self.atoms[i] = None;
        self.labels[i].clear();
        self.free.insert(i);
        Ok(self.finish(i, writes, rows, degree_old, false))
    }

    pub fn set_mass(&mut self, i: usize, mass: f64) -> Result<UpdateReport> {
        let old = self.check_live(i)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument("mass must be positive".into()));
        }
        self.atoms[i] = Some(AtomRecord { position: old.position, mass });
        let degree = self.degree(i);
        Ok(self.finish(i, (old.mass != mass) as usize, Vec::new(), degree, false))
    }

    /// Widens the column range. A deeper tree rewrites every stored value.
    fn grow(&mut self, capacity: usize) -> usize {
        let old_leaves = self.leaves();
        let old_values = self.stored_values();
        self.capacity = capacity;
        let leaves = self.leaves();
        if leaves == old_leaves {
            return 0;
        }
        for row in &mut self.rows {
            let cols: Vec<usize> = row.columns().collect();
            *row = RowTree::default();
            for j in cols {
                row.update(j, true, leaves);
            }
        }
        old_values + self.stored_values()
    }

    /// Live atoms renumbered `0..len()` in slot order, with the slot map.
    pub fn compacted(&self) -> Result<(ProteinStructure, Vec<usize>)> {
        let slots: Vec<usize> = self.live_slots().collect();
        let atoms = slots.iter().map(|&s| {
            let a = self.atoms[s].unwrap();
            (a.position, a.mass, self.labels[s].clone())
        });
        Ok((ProteinStructure::from_atoms("kp-store", atoms)?, slots))
    }

    /// Whether this store describes the same graph as `build()` on its compacted structure.
    pub fn matches_rebuild(&self) -> Result<bool> {
        let (structure, slots) = self.compacted()?;
        let fresh = Self::build_with_spring(&structure, self.cutoff, self.spring)?;
        let mut rank = vec![usize::MAX; self.atoms.len()];
        for (r, &s) in slots.iter().enumerate() {
            rank[s] = r;
        }
        for (r, &s) in slots.iter().enumerate() {
            let mine: Vec<usize> = self.rows[s].columns().map(|j| rank[j]).collect();
            if mine.contains(&usize::MAX) || mine != fresh.neighbours(r) || self.degree(s) != fresh.degree(r) {
                return Ok(false);
            }
        }
        let retired_clean = self.free.iter().all(|&s| self.rows[s] == RowTree::default());
        let grid_ok = self.grid.iter().all(|(c, m)| m.iter().all(|&s| self.atoms[s].is_some_and(|a| self.cell(&a.position) == *c)))
            && self.grid.values().map(BTreeSet::len).sum::<usize>() == self.len();
        Ok(retired_clean && grid_ok)
    }

    pub fn export_tables(&self) -> ExportedTables {
        let rows: Vec<Vec<usize>> = (0..self.atoms.len()).map(|i| self.neighbours(i)).collect();
        let sparse = SparseIndexTable::from_rows(rows, self.atoms.len());
        let mut values = Vec::with_capacity(self.atoms.len() * sparse.slots());
        for i in 0..self.atoms.len() {
            for k in 0..sparse.slots() {
                values.push(self.query_sparse(i, k).map_or(0.0, |j| self.query_entry(i, j)));
            }
        }
        let diagonal = (0..self.atoms.len()).map(|i| self.query_entry(i, i)).collect();
        ExportedTables { sparse, values, diagonal }
    }

    /// Little-endian binary snapshot: header, atom table, then every row's stored values.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.cutoff.to_le_bytes())?;
        w.write_all(&self.spring.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.atoms.len() as u64).to_le_bytes())?;
        for (atom, label) in self.atoms.iter().zip(&self.labels) {
            match atom {
                None => w.write_all(&[0])?,
                Some(a) => {
                    w.write_all(&[1])?;
                    for c in a.position.to_array() {
                        w.write_all(&c.to_le_bytes())?;
                    }
                    w.write_all(&a.mass.to_le_bytes())?;
                    w.write_all(&(label.len() as u32).to_le_bytes())?;
                    w.write_all(label.as_bytes())?;
                }
            }
        }
        for row in &self.rows {
            w.write_all(&row.degree.to_le_bytes())?;
            w.write_all(&(row.left.len() as u32).to_le_bytes())?;
            for (&k, &v) in &row.left {
                w.write_all(&k.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(row.words.len() as u32).to_le_bytes())?;
            for (&k, &v) in &row.words {
                w.write_all(&k.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a snapshot and checks the stored trees against a rebuild.
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let corrupt = |m: &str| Error::Parse { line: 0, message: format!("snapshot: {m}") };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let cutoff = read_f64(&mut r)?;
        let spring = read_f64(&mut r)?;
        let capacity = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        if capacity <= n || !capacity.is_power_of_two() || !(cutoff > 0.0) || !(spring > 0.0) {
            return Err(corrupt("inconsistent header"));
        }
        let mut atoms = Vec::with_capacity(n.min(1 << 20));
        let mut labels = Vec::with_capacity(n.min(1 << 20));
        let mut free = BTreeSet::new();
        for i in 0..n {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            match tag[0] {
                0 => {
                    atoms.push(None);
                    labels.push(String::new());
                    free.insert(i);
                }
                1 => {
                    let position = Position::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
                    let mass = read_f64(&mut r)?;
                    let len = read_u32(&mut r)? as usize;
                    let mut buf = vec![0u8; len];
                    r.read_exact(&mut buf)?;
                    atoms.push(Some(AtomRecord { position, mass }));
                    labels.push(String::from_utf8(buf).map_err(|_| corrupt("label is not UTF-8"))?);
                }
                _ => return Err(corrupt("bad atom tag")),
            }
        }
        let mut rows = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let degree = read_u32(&mut r)?;
            let mut left = BTreeMap::new();
            for _ in 0..read_u32(&mut r)? {
                left.insert(read_u32(&mut r)?, read_u32(&mut r)?);
            }
            let mut words = BTreeMap::new();
            for _ in 0..read_u32(&mut r)? {
                words.insert(read_u32(&mut r)?, read_u64(&mut r)?);
            }
            rows.push(RowTree { degree, left, words });
        }
        let mut store = Self { cutoff, spring, capacity, atoms, labels, free, grid: BTreeMap::new(), rows };
        for i in 0..n {
            if let Some(a) = store.atoms[i] {
                store.grid.entry(store.cell(&a.position)).or_default().insert(i);
            }
        }
        let mut reference = store.clone();
        let leaves = reference.leaves();
        for i in 0..n {
            reference.rows[i] = RowTree::default();
            if let Some(a) = reference.atoms[i] {
                for j in reference.neighbours_of(i, &a.position) {
                    reference.rows[i].update(j, true, leaves);
                }
            }
        }
        if reference != store {
            return Err(corrupt("stored trees disagree with the atom table"));
        }
        Ok(store)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
