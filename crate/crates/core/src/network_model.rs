//! Elastic network models (GNM / ANM) and their incidence factorisation.
//!
//! The stiffness matrix `K` is assembled from a step-function cutoff graph.
//! The mass-weighted matrix `A = M^{-1/2} K M^{-1/2}` is factored as
//! `A = B B^T` with one column of `B` per spring, so that the block matrix
//! `[[0, B], [B^T, 0]]` is a valid Hermitian embedding of the dynamics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure_io::{Position, ProteinStructure};

pub const DEFAULT_GNM_CUTOFF: f64 = 7.0;
pub const DEFAULT_ANM_CUTOFF: f64 = 13.0;
pub const DEFAULT_SPRING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gnm,
    Anm,
    Imported,
}

/// How the columns of `B` were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factorization {
    /// One column per spring (plus grounding springs for imported matrices).
    Incidence,
    /// `B = V sqrt(Λ)` from a dense eigendecomposition; used only for
    /// imported matrices that are not weighted Laplacians.
    Spectral,
}

/// A spring between atoms `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub kind: ModelKind,
    pub cutoff: f64,
    pub spring: f64,
    pub edges: Vec<Edge>,
    /// Springs to a fixed frame, `(dof, weight)`. Only imported matrices have these.
    pub grounding: Vec<(usize, f64)>,
    pub factorization: Factorization,
    pub stiffness: DMatrix<f64>,
    /// Diagonal of `M`, one entry per degree of freedom.
    pub masses: DVector<f64>,
    pub mass_weighted: DMatrix<f64>,
    pub incidence: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl NetworkModel {
    /// Number of degrees of freedom (`N` for GNM, `3N` for ANM).
    pub fn dof(&self) -> usize {
        self.stiffness.nrows()
    }

    /// Number of columns of `B`.
    pub fn n_springs(&self) -> usize {
        self.incidence.ncols()
    }

    /// Nonzero entries of `B` as `(row, col, value)`.
    pub fn incidence_entries(&self) -> Vec<(usize, usize, f64)> {
        let b = &self.incidence;
        let mut out = Vec::new();
        for c in 0..b.ncols() {
            for r in 0..b.nrows() {
                let v = b[(r, c)];
                if v != 0.0 {
                    out.push((r, c, v));
                }
            }
        }
        out
    }

    /// Sorted column indices of the nonzeros of row `i` of `K`, diagonal included.
    pub fn row_pattern(&self, i: usize) -> Vec<usize> {
        (0..self.dof()).filter(|&j| self.stiffness[(i, j)] != 0.0).collect()
    }

    /// `‖B B^T − A‖_F / ‖A‖_F` (absolute when `A = 0`).
    pub fn factorization_error(&self) -> f64 {
        let diff = (&self.incidence * self.incidence.transpose() - &self.mass_weighted).norm();
        let scale = self.mass_weighted.norm();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    /// Builds a model from a precomputed stiffness matrix (e.g. read from Matrix Market).
    pub fn from_stiffness(stiffness: DMatrix<f64>, masses: DVector<f64>) -> Result<Self> {
        let n = stiffness.nrows();
        if stiffness.ncols() != n {
            return Err(Error::InvalidArgument("stiffness matrix must be square".into()));
        }
        if masses.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: masses.len() });
        }
        check_masses(&masses)?;
        let asym = (&stiffness - stiffness.transpose()).amax();
        if asym > 1e-12 * stiffness.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("stiffness matrix is not symmetric ({asym:.3e})")));
        }
        let mass_weighted = mass_weight(&stiffness, masses.as_slice())?;

        let tol = 1e-12 * stiffness.amax().max(f64::MIN_POSITIVE);
        let mut edges = Vec::new();
        let mut laplacian_like = true;
        for i in 0..n {
            for j in i + 1..n {
                let k = stiffness[(i, j)];
                if k < 0.0 {
                    edges.push(Edge { i, j, weight: -k });
                } else if k > tol {
                    laplacian_like = false;
                }
            }
        }
        let mut grounding = Vec::new();
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i && stiffness[(i, j)] < 0.0).map(|j| -stiffness[(i, j)]).sum();
            let excess = stiffness[(i, i)] - off;
            if excess > tol {
                grounding.push((i, excess));
            } else if excess < -tol {
                laplacian_like = false;
            }
        }

        let (factorization, incidence, edges, grounding) = if laplacian_like {
            let b = incidence_from_springs(n, masses.as_slice(), &edges, &grounding, None);
            (Factorization::Incidence, b, edges, grounding)
        } else {
            (Factorization::Spectral, spectral_factor(&mass_weighted)?, Vec::new(), Vec::new())
        };

        Ok(Self {
            kind: ModelKind::Imported,
            cutoff: f64::NAN,
            spring: f64::NAN,
            edges,
            grounding,
            factorization,
            stiffness,
            masses,
            mass_weighted,
            incidence,
            warnings: Vec::new(),
        })
    }
}

fn check_masses(masses: &DVector<f64>) -> Result<()> {
    if let Some(k) = masses.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidArgument(format!("mass of dof {k} must be positive")));
    }
    Ok(())
}

fn check_params(structure: &ProteinStructure, cutoff: f64, spring: f64) -> Result<()> {
    if structure.is_empty() {
        return Err(Error::EmptyStructure);
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {cutoff}")));
    }
    if !(spring > 0.0 && spring.is_finite()) {
        return Err(Error::InvalidArgument(format!("spring constant must be positive, got {spring}")));
    }
    Ok(())
}

/// All pairs `i < j` within `cutoff`, with their separation.
fn contact_pairs(positions: &[Position], cutoff: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = positions[i].distance(&positions[j]);
            if d <= cutoff {
                pairs.push((i, j, d));
            }
        }
    }
    pairs
}

/// Gaussian network model: Kirchhoff matrix of the cutoff graph.
pub fn build_gnm(structure: &ProteinStructure, cutoff: f64, spring: f64) -> Result<NetworkModel> {
    check_params(structure, cutoff, spring)?;
    let n = structure.len();
    let pairs = contact_pairs(&structure.positions(), cutoff);
    let mut warnings = Vec::new();
    let mut k = DMatrix::zeros(n, n);
    let mut edges = Vec::with_capacity(pairs.len());
    for &(i, j, d) in &pairs {
        if d == 0.0 {
            warnings.push(format!("atoms {i} and {j} share a position; treated as connected"));
        }
        k[(i, j)] = -spring;
        k[(j, i)] = -spring;
        edges.push(Edge { i, j, weight: spring });
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
        k[(i, i)] = -off;
    }
    let masses = DVector::from_vec(structure.masses());
    let mass_weighted = mass_weight(&k, masses.as_slice())?;
    let incidence = incidence_from_springs(n, masses.as_slice(), &edges, &[], None);
    Ok(NetworkModel {
        kind: ModelKind::Gnm,
        cutoff,
        spring,
        edges,
        grounding: Vec::new(),
        factorization: Factorization::Incidence,
        stiffness: k,
        masses,
        mass_weighted,
        incidence,
        warnings,
    })
}

/// Anisotropic network model: `3N × 3N` Hessian with `−γ d dᵀ / |d|²` super-elements.
pub fn build_anm(structure: &ProteinStructure, cutoff: f64, spring: f64) -> Result<NetworkModel> {
    check_params(structure, cutoff, spring)?;
    let n = structure.len();
    let positions = structure.positions();
    let pairs = contact_pairs(&positions, cutoff);
    let mut k = DMatrix::zeros(3 * n, 3 * n);
    let mut edges = Vec::with_capacity(pairs.len());
    let mut directions = Vec::with_capacity(pairs.len());
    for &(i, j, dist) in &pairs {
        if dist == 0.0 {
            return Err(Error::CoincidentAtoms(i, j));
        }
        let (pi, pj) = (positions[i].to_array(), positions[j].to_array());
        let d = [(pj[0] - pi[0]) / dist, (pj[1] - pi[1]) / dist, (pj[2] - pi[2]) / dist];
        for a in 0..3 {
            for b in 0..3 {
                let v = -spring * d[a] * d[b];
                k[(3 * i + a, 3 * j + b)] = v;
                k[(3 * j + a, 3 * i + b)] = v;
            }
        }
        edges.push(Edge { i, j, weight: spring });
        directions.push(d);
    }
    for i in 0..n {
        for a in 0..3 {
            for b in 0..3 {
                let s: f64 = (0..n).filter(|&j| j != i).map(|j| k[(3 * i + a, 3 * j + b)]).sum();
                k[(3 * i + a, 3 * i + b)] = -s;
            }
        }
    }
    let masses = DVector::from_iterator(3 * n, structure.masses().into_iter().flat_map(|m| [m, m, m]));
    let mass_weighted = mass_weight(&k, masses.as_slice())?;
    let incidence = incidence_from_springs(3 * n, masses.as_slice(), &edges, &[], Some(&directions));
    Ok(NetworkModel {
        kind: ModelKind::Anm,
        cutoff,
        spring,
        edges,
        grounding: Vec::new(),
        factorization: Factorization::Incidence,
        stiffness: k,
        masses,
        mass_weighted,
        incidence,
        warnings: Vec::new(),
    })
}

/// `A_ij = K_ij / sqrt(m_i m_j)`.
pub fn mass_weight(stiffness: &DMatrix<f64>, masses: &[f64]) -> Result<DMatrix<f64>> {
    let n = stiffness.nrows();
    if masses.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: masses.len() });
    }
    check_masses(&DVector::from_column_slice(masses))?;
    let inv_sqrt: Vec<f64> = masses.iter().map(|m| 1.0 / m.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| stiffness[(i, j)] * inv_sqrt[i] * inv_sqrt[j]))
}

/// Columns `+sqrt(w/m_i)` / `−sqrt(w/m_j)` per edge, directional for ANM,
/// followed by one single-entry column per grounding spring.
fn incidence_from_springs(
    dof: usize,
    masses: &[f64],
    edges: &[Edge],
    grounding: &[(usize, f64)],
    directions: Option<&[[f64; 3]]>,
) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(dof, edges.len() + grounding.len());
    for (c, e) in edges.iter().enumerate() {
        match directions {
            None => {
                b[(e.i, c)] = (e.weight / masses[e.i]).sqrt();
                b[(e.j, c)] = -(e.weight / masses[e.j]).sqrt();
            }
            Some(dirs) => {
                let d = dirs[c];
                for a in 0..3 {
                    let (ri, rj) = (3 * e.i + a, 3 * e.j + a);
                    b[(ri, c)] = (e.weight / masses[ri]).sqrt() * d[a];
                    b[(rj, c)] = -(e.weight / masses[rj]).sqrt() * d[a];
                }
            }
        }
    }
    for (g, &(i, w)) in grounding.iter().enumerate() {
        b[(i, edges.len() + g)] = (w / masses[i]).sqrt();
    }
    b
}

/// Builds `B` for an arbitrary edge list and masses (testing and model surgery).
pub fn incidence_factor(dof: usize, masses: &[f64], edges: &[Edge]) -> DMatrix<f64> {
    incidence_from_springs(dof, masses, edges, &[], None)
}

fn spectral_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.amax();
    let floor = -1e-10 * scale.max(1.0);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::InvalidArgument(format!("stiffness matrix is not positive semidefinite (eigenvalue {bad:.3e})")));
    }
    let keep: Vec<usize> = (0..a.nrows()).filter(|&k| eig.eigenvalues[k] > 1e-14 * scale).collect();
    let mut b = DMatrix::zeros(a.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        b.set_column(c, &(eig.eigenvectors.column(k) * s));
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionDiagnostics {
    /// Largest over smallest nonzero eigenvalue of `A`; `None` when `A = 0`.
    pub kappa: Option<f64>,
    pub spectral_radius: f64,
    pub zero_modes: usize,
}

pub fn condition_diagnostics(model: &NetworkModel) -> ConditionDiagnostics {
    condition_of(&model.mass_weighted)
}

pub fn condition_of(a: &DMatrix<f64>) -> ConditionDiagnostics {
    let eig = SymmetricEigen::new(a.clone());
    let radius = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let threshold = 1e-8 * radius;
    let nonzero: Vec<f64> = eig.eigenvalues.iter().copied().filter(|l| l.abs() > threshold).collect();
    let kappa = if nonzero.is_empty() {
        None
    } else {
        let lo = nonzero.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
        Some(radius / lo)
    };
    ConditionDiagnostics { kappa, spectral_radius: radius, zero_modes: a.nrows() - nonzero.len() }
}
