//! Read-out quantities: energies, low modes, Chebyshev moments and the
//! kernel-polynomial density of states, equilibrium fluctuations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::embed;
use crate::error::{Error, Result};
use crate::linalg::{power_norm, Csr, C64};
use crate::network_model::{ModelKind, NetworkModel};
use crate::state_prep::{CbrngSpec, EncodedState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySplit {
    pub kinetic: f64,
    pub potential: f64,
}

impl EnergySplit {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

/// Energies from an encoded state (`E` times the squared block norms).
pub fn kinetic_potential(psi: &DVector<C64>, energy: f64, block_split: usize) -> Result<EnergySplit> {
    if block_split > psi.len() {
        return Err(Error::DimensionMismatch { expected: psi.len(), found: block_split });
    }
    let velocity = psi.rows(0, block_split).norm_squared();
    let strain = psi.rows(block_split, psi.len() - block_split).norm_squared();
    Ok(EnergySplit { kinetic: energy * velocity, potential: energy * strain })
}

pub fn kinetic_potential_encoded(state: &EncodedState) -> EnergySplit {
    kinetic_potential(&state.psi, state.energy, state.block_split).expect("block split within the state")
}

/// Energies from physical displacements and velocities.
pub fn kinetic_potential_uv(u: &DVector<f64>, v: &DVector<f64>, model: &NetworkModel) -> Result<EnergySplit> {
    let n = model.dof();
    for x in [u, v] {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
    }
    Ok(EnergySplit { kinetic: 0.5 * v.component_mul(&model.masses).dot(v), potential: 0.5 * u.dot(&(&model.stiffness * u)) })
}

#[derive(Debug, Clone)]
pub struct LowModes {
    /// Ascending nonzero eigenvalues of `A`.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors in mass-weighted coordinates, one per column.
    pub vectors: DMatrix<f64>,
    pub zero_modes: usize,
    /// `|⟨w_1, √M u⟩| / ‖√M u‖` for the supplied displacement.
    pub overlap: Option<f64>,
    pub max_residual: f64,
}

/// The `k` softest nonzero modes of `A`; eigenvalues below `1e−8‖A‖` are
/// treated as rigid-body modes.
pub fn low_modes(model: &NetworkModel, k: usize, state: Option<&DVector<f64>>) -> Result<LowModes> {
    let n = model.dof();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("need 0 < k < N = {n}, got {k}")));
    }
    let a = &model.mass_weighted;
    let eig = SymmetricEigen::new(a.clone());
    let norm = eig.eigenvalues.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let threshold = 1e-8 * norm;
    let zero_modes = order.iter().filter(|&&i| eig.eigenvalues[i] <= threshold).count();
    let picked: Vec<usize> = order.iter().copied().filter(|&i| eig.eigenvalues[i] > threshold).take(k).collect();
    if picked.len() < k {
        return Err(Error::InvalidArgument(format!("only {} nonzero modes available", picked.len())));
    }
    let values: Vec<f64> = picked.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, picked[c])]);
    let max_residual = (0..k)
        .map(|c| (a * vectors.column(c) - vectors.column(c) * values[c]).norm())
        .fold(0.0, f64::max);
    let overlap = match state {
        None => None,
        Some(u) => {
            if u.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: u.len() });
            }
            let y = u.component_mul(&model.masses.map(f64::sqrt));
            let norm = y.norm();
            if norm == 0.0 {
                return Err(Error::InvalidArgument("overlap of a zero state is undefined".into()));
            }
            Some(vectors.column(0).dot(&y).abs() / norm)
        }
    };
    Ok(LowModes { values, vectors, zero_modes, overlap, max_residual })
}

/// Which operator's spectrum the density of states describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DosOperator {
    /// `A = M^{-1/2} K M^{-1/2}`, whose eigenvalues are squared frequencies.
    #[default]
    Stiffness,
    /// The embedded `H`, with spectrum `±√λ(A)` plus zeros.
    Hamiltonian,
}

pub fn dos_operator(model: &NetworkModel, which: DosOperator) -> DMatrix<f64> {
    match which {
        DosOperator::Stiffness => model.mass_weighted.clone(),
        DosOperator::Hamiltonian => embed(model).h,
    }
}

/// `1.01 ×` the power-iteration estimate of `‖M‖`; 1 for the zero matrix.
pub fn spectral_scale(m: &DMatrix<f64>) -> f64 {
    let norm = power_norm(m);
    if norm > 0.0 {
        1.01 * norm
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MomentMethod {
    Exact,
    Stochastic { probes: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub alpha: f64,
    pub dim: usize,
    /// `μ_k = Tr T_k(M/α) / N` for `k = 0..=K`.
    pub moments: Vec<f64>,
    pub standard_errors: Option<Vec<f64>>,
    pub method: MomentMethod,
}

impl MomentSet {
    pub fn order(&self) -> usize {
        self.moments.len() - 1
    }

    /// The first `k + 1` moments.
    pub fn truncated(&self, k: usize) -> MomentSet {
        let keep = (k + 1).min(self.moments.len());
        MomentSet {
            moments: self.moments[..keep].to_vec(),
            standard_errors: self.standard_errors.as_ref().map(|s| s[..keep].to_vec()),
            ..self.clone()
        }
    }
}

fn check_scale(m: &DMatrix<f64>, alpha: f64) -> Result<Csr> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidArgument("moment operator must be a nonempty square matrix".into()));
    }
    let norm = power_norm(m);
    if !(alpha > 0.0) || alpha < norm * (1.0 - 1e-9) {
        return Err(Error::InvalidArgument(format!("scale α = {alpha} is below ‖M‖ ≈ {norm}")));
    }
    Ok(Csr::from_dense(m))
}

/// `T_k(M/α) x` for `k = 0..=K`, reduced by `f` at every order.
fn chebyshev_sweep(csr: &Csr, alpha: f64, order: usize, start: Vec<f64>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let n = csr.n;
    let mut out = Vec::with_capacity(order + 1);
    let mut prev = start;
    out.push(f(&prev));
    if order == 0 {
        return out;
    }
    let mut cur = vec![0.0; n];
    csr.cheb_step(1.0 / alpha, &prev, &mut cur);
    out.push(f(&cur));
    for _ in 2..=order {
        csr.cheb_step(2.0 / alpha, &cur, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
        out.push(f(&cur));
    }
    out
}

/// Exact moments from the three-term recurrence on every column.
pub fn chebyshev_moments_exact(m: &DMatrix<f64>, alpha: f64, order: usize) -> Result<MomentSet> {
    let csr = check_scale(m, alpha)?;
    let n = csr.n;
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            chebyshev_sweep(&csr, alpha, order, e, |v| v[j])
        })
        .collect();
    let mut moments = vec![0.0; order + 1];
    for col in &columns {
        moments.iter_mut().zip(col).for_each(|(m, v)| *m += v);
    }
    moments.iter_mut().for_each(|m| *m /= n as f64);
    Ok(MomentSet { alpha, dim: n, moments, standard_errors: None, method: MomentMethod::Exact })
}

/// Hutchinson estimate with Rademacher probes; probe `p` uses counters
/// `p·N .. (p+1)·N`.
pub fn chebyshev_moments_stochastic(m: &DMatrix<f64>, alpha: f64, order: usize, probes: usize, seed: u64) -> Result<MomentSet> {
    if probes == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let csr = check_scale(m, alpha)?;
    let n = csr.n;
    let rng = CbrngSpec::new(seed);
    let samples: Vec<Vec<f64>> = (0..probes)
        .into_par_iter()
        .map(|p| {
            let z: Vec<f64> = (0..n).map(|j| rng.rademacher((p * n + j) as u64)).collect();
            let zc = z.clone();
            chebyshev_sweep(&csr, alpha, order, z, move |v| v.iter().zip(&zc).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        })
        .collect();
    let pf = probes as f64;
    let mut moments = vec![0.0; order + 1];
    let mut sq = vec![0.0; order + 1];
    for s in &samples {
        for k in 0..=order {
            moments[k] += s[k];
            sq[k] += s[k] * s[k];
        }
    }
    let standard_errors = (0..=order)
        .map(|k| {
            let mean = moments[k] / pf;
            if probes < 2 {
                0.0
            } else {
                ((sq[k] / pf - mean * mean).max(0.0) / (pf - 1.0)).sqrt()
            }
        })
        .collect();
    moments.iter_mut().for_each(|m| *m /= pf);
    Ok(MomentSet { alpha, dim: n, moments, standard_errors: Some(standard_errors), method: MomentMethod::Stochastic { probes, seed } })
}

/// `(1/N) Σ_j T_k(λ_j / α)` straight from the eigenvalues.
pub fn moments_from_eigenvalues(eigenvalues: &[f64], alpha: f64, order: usize) -> Vec<f64> {
    let n = eigenvalues.len() as f64;
    (0..=order)
        .map(|k| eigenvalues.iter().map(|&l| (k as f64 * (l / alpha).clamp(-1.0, 1.0).acos()).cos()).sum::<f64>() / n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Jackson,
    /// No damping.
    Dirichlet,
}

impl Kernel {
    /// Damping factors `g_0..g_{M−1}` for `M` moments.
    pub fn coefficients(&self, count: usize) -> Vec<f64> {
        match self {
            Kernel::Dirichlet => vec![1.0; count],
            Kernel::Jackson => {
                let m = count as f64 + 1.0;
                let cot = 1.0 / (PI / m).tan();
                (0..count)
                    .map(|k| {
                        let a = PI * k as f64 / m;
                        ((m - k as f64) * a.cos() + a.sin() * cot) / m
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kernel: Kernel,
    pub alpha: f64,
}

impl DosCurve {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid.windows(2).zip(self.values.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
    }
}

/// Evenly spaced interior grid on `(−α, α)` avoiding the endpoint singularities.
pub fn dos_grid(alpha: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| alpha * (-1.0 + (2.0 * i as f64 + 1.0) / points as f64)).collect()
}

fn damped(moments: &MomentSet, kernel: Kernel) -> Vec<f64> {
    kernel.coefficients(moments.moments.len()).iter().zip(&moments.moments).map(|(g, m)| g * m).collect()
}

/// `ϱ(λ) = (1/α) (g_0 μ_0 + 2 Σ g_k μ_k T_k(λ/α)) / (π √(1 − (λ/α)²))`.
///
/// Grid points must lie strictly inside `(−α, α)`.
pub fn reconstruct_dos(moments: &MomentSet, grid: &[f64], kernel: Kernel) -> Result<DosCurve> {
    let alpha = moments.alpha;
    if let Some(&bad) = grid.iter().find(|&&l| !(l.abs() < alpha)) {
        return Err(Error::InvalidArgument(format!("grid point {bad} outside (−{alpha}, {alpha})")));
    }
    let c = damped(moments, kernel);
    let values = grid
        .par_iter()
        .map(|&l| {
            let x = l / alpha;
            let theta = x.acos();
            let series = c[0] + 2.0 * c.iter().enumerate().skip(1).map(|(k, ck)| ck * (k as f64 * theta).cos()).sum::<f64>();
            series / (PI * (1.0 - x * x).sqrt() * alpha)
        })
        .collect();
    Ok(DosCurve { grid: grid.to_vec(), values, kernel, alpha })
}

/// Exact integrals of the reconstructed density over `[edges[b], edges[b+1]]`,
/// via `x = cos θ`: `∫ ϱ̃ dx = (1/π) [c_0 θ + 2 Σ c_k sin(kθ)/k]`.
pub fn dos_bin_masses(moments: &MomentSet, kernel: Kernel, edges: &[f64]) -> Result<Vec<f64>> {
    let alpha = moments.alpha;
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("bin edges must increase".into()));
    }
    let c = damped(moments, kernel);
    let antiderivative = |l: f64| {
        let theta = (l / alpha).clamp(-1.0, 1.0).acos();
        let tail: f64 = c.iter().enumerate().skip(1).map(|(k, ck)| ck * (k as f64 * theta).sin() / k as f64).sum();
        -(c[0] * theta + 2.0 * tail) / PI
    };
    let at: Vec<f64> = edges.par_iter().map(|&e| antiderivative(e)).collect();
    Ok(at.windows(2).map(|w| w[1] - w[0]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Fraction of eigenvalues per bin.
    pub masses: Vec<f64>,
}

/// Equal-width histogram whose outermost bins are centred on the extreme
/// eigenvalues.
pub fn eigenvalue_histogram(eigenvalues: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 || eigenvalues.is_empty() {
        return Err(Error::InvalidArgument("need at least two bins and one eigenvalue".into()));
    }
    let lo = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / (bins - 1) as f64 } else { 1.0 };
    let start = lo - 0.5 * width;
    let edges: Vec<f64> = (0..=bins).map(|b| start + b as f64 * width).collect();
    let mut masses = vec![0.0; bins];
    for &l in eigenvalues {
        let b = (((l - start) / width).floor() as usize).min(bins - 1);
        masses[b] += 1.0 / eigenvalues.len() as f64;
    }
    Ok(Histogram { edges, masses })
}

/// `Σ_b |p_b − h_b|` after normalising the reconstructed bin masses to
/// unit total.
pub fn histogram_l1(moments: &MomentSet, kernel: Kernel, histogram: &Histogram) -> Result<f64> {
    let p = dos_bin_masses(moments, kernel, &histogram.edges)?;
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("reconstructed density has no mass in the histogram range".into()));
    }
    Ok(p.iter().zip(&histogram.masses).map(|(a, b)| (a / total - b).abs()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentComparison {
    pub k: usize,
    pub exact: f64,
    pub approx: f64,
    pub deviation: f64,
    pub standard_error: Option<f64>,
}

pub fn compare_moments(exact: &MomentSet, approx: &MomentSet) -> Vec<MomentComparison> {
    exact
        .moments
        .iter()
        .zip(&approx.moments)
        .enumerate()
        .map(|(k, (&e, &a))| MomentComparison {
            k,
            exact: e,
            approx: a,
            deviation: a - e,
            standard_error: approx.standard_errors.as_ref().map(|s| s[k]),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DisplacementStats {
    /// `⟨u_i u_j⟩ = k_BT [K⁺]_ij`.
    pub correlation: DMatrix<f64>,
    pub rmsd_dof: DVector<f64>,
    /// Summed over the three Cartesian components for ANM.
    pub rmsd_atom: DVector<f64>,
    pub zero_modes: usize,
}

/// Equilibrium fluctuations from the pseudo-inverse of `K` (eigenvalues
/// below `1e−8‖K‖` dropped).
pub fn displacement_stats(model: &NetworkModel, kbt: f64) -> Result<DisplacementStats> {
    if !(kbt >= 0.0) {
        return Err(Error::InvalidArgument(format!("k_BT must be nonnegative, got {kbt}")));
    }
    let n = model.dof();
    let eig = SymmetricEigen::new(model.stiffness.clone());
    let norm = eig.eigenvalues.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let mut correlation = DMatrix::zeros(n, n);
    let mut zero_modes = 0;
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l <= 1e-8 * norm {
            zero_modes += 1;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        correlation += (v * v.transpose()) * (kbt / l);
    }
    correlation = (&correlation + correlation.transpose()) * 0.5;
    let rmsd_dof = DVector::from_fn(n, |i, _| correlation[(i, i)].max(0.0).sqrt());
    let rmsd_atom = match model.kind {
        ModelKind::Anm => DVector::from_fn(n / 3, |a, _| (0..3).map(|c| correlation[(3 * a + c, 3 * a + c)]).sum::<f64>().max(0.0).sqrt()),
        _ => rmsd_dof.clone(),
    };
    Ok(DisplacementStats { correlation, rmsd_dof, rmsd_atom, zero_modes })
}
