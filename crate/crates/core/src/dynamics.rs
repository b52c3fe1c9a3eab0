//! Classical propagation of the encoded state: harmonic, driven and Langevin.
//!
//! States live in the embedded space `[ẏ; i Bᵀ y]` of dimension `N + E`,
//! with `y = √M u`. Under `H = −[[0, B], [Bᵀ, 0]]` the Schrödinger form
//! `ψ' = −i H ψ` reproduces `ÿ = −A y`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, to_complex, C64};
use crate::network_model::NetworkModel;
use crate::state_prep::CbrngSpec;

pub use crate::state_prep::{encode_initial_conditions, EncodedState};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub struct EmbeddedHamiltonian {
    /// Real symmetric, so `H = H†` holds exactly.
    pub h: DMatrix<f64>,
    pub n_dof: usize,
    pub n_edges: usize,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

pub fn embed(model: &NetworkModel) -> EmbeddedHamiltonian {
    let (n, e) = (model.dof(), model.n_springs());
    let mut h = DMatrix::zeros(n + e, n + e);
    for (r, c, v) in model.incidence_entries() {
        h[(r, n + c)] = -v;
        h[(n + c, r)] = -v;
    }
    let eig = SymmetricEigen::new(h.clone());
    EmbeddedHamiltonian { h, n_dof: n, n_edges: e, eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors }
}

impl EmbeddedHamiltonian {
    pub fn dim(&self) -> usize {
        self.n_dof + self.n_edges
    }

    /// `max |λ(H)|`.
    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `e^{−iHt}` as a dense matrix.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        let v = to_complex(&self.eigenvectors);
        let phases = DMatrix::from_diagonal(&self.eigenvalues.map(|l| C64::from_polar(1.0, -l * t)));
        &v * phases * v.adjoint()
    }

    /// `V e^{−iΛt} Vᵀ ψ0` without forming the propagator.
    pub fn evolve(&self, psi0: &DVector<C64>, t: f64) -> DVector<C64> {
        let v = &self.eigenvectors;
        let re = v.tr_mul(&psi0.map(|z| z.re));
        let im = v.tr_mul(&psi0.map(|z| z.im));
        let rotated = DVector::from_fn(self.dim(), |k, _| C64::new(re[k], im[k]) * C64::from_polar(1.0, -self.eigenvalues[k] * t));
        let (rr, ri) = (v * rotated.map(|z| z.re), v * rotated.map(|z| z.im));
        DVector::from_fn(self.dim(), |k, _| C64::new(rr[k], ri[k]))
    }
}

pub fn evolve_harmonic(h: &EmbeddedHamiltonian, psi0: &DVector<C64>, t: f64) -> Result<DVector<C64>> {
    if psi0.len() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: psi0.len() });
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("evolution time must be nonnegative, got {t}")));
    }
    Ok(h.evolve(psi0, t))
}

/// Unnormalised embedded vector `φ = [ẏ; i Bᵀ y]`.
pub fn phase_vector(model: &NetworkModel, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<C64>> {
    let n = model.dof();
    for x in [u, v] {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
    }
    let sqrt_m = model.masses.map(f64::sqrt);
    let strain = model.incidence.tr_mul(&u.component_mul(&sqrt_m));
    Ok(DVector::from_iterator(
        n + strain.len(),
        v.component_mul(&sqrt_m).iter().map(|&x| C64::new(x, 0.0)).chain(strain.iter().map(|&s| C64::new(0.0, s))),
    ))
}

/// Cached least-squares inverse of the encoding.
#[derive(Debug, Clone)]
pub struct EncodingInverse {
    incidence_t: DMatrix<f64>,
    pinv: DMatrix<f64>,
    sqrt_m: DVector<f64>,
}

impl EncodingInverse {
    pub fn new(model: &NetworkModel) -> Result<Self> {
        let bt = model.incidence.transpose();
        let svd = bt.clone().svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0, |m: f64, &s| m.max(s));
        let pinv = svd.pseudo_inverse(1e-10 * smax.max(f64::MIN_POSITIVE)).map_err(|e| Error::Numerical(e.into()))?;
        Ok(Self { incidence_t: bt, pinv, sqrt_m: model.masses.map(f64::sqrt) })
    }

    /// Minimum-norm inverse: components of `y` in the null space of `Bᵀ`
    /// (rigid translations) are not recoverable and come back as zero.
    pub fn decode(&self, psi: &DVector<C64>, energy: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let (n, e) = (self.incidence_t.ncols(), self.incidence_t.nrows());
        if psi.len() != n + e {
            return Err(Error::DimensionMismatch { expected: n + e, found: psi.len() });
        }
        let scale = (2.0 * energy).sqrt();
        let ydot = psi.rows(0, n).map(|z| z.re * scale);
        // Bᵀ y = −i √(2E) · block2
        let s = psi.rows(n, e).map(|z| z * C64::new(0.0, -scale));
        let (s_re, s_im) = (s.map(|z| z.re), s.map(|z| z.im));
        let (y_re, y_im) = (&self.pinv * &s_re, &self.pinv * &s_im);
        let residual = ((&self.incidence_t * &y_re - &s_re).norm_squared() + (&self.incidence_t * &y_im - &s_im).norm_squared()).sqrt();
        let s_norm = s.norm();
        if residual > 1e-8 * s_norm {
            return Err(Error::CorruptedEncoding { residual: residual / s_norm.max(f64::MIN_POSITIVE) });
        }
        Ok((y_re.component_div(&self.sqrt_m), ydot.component_div(&self.sqrt_m)))
    }
}

pub fn decode(psi: &DVector<C64>, energy: f64, model: &NetworkModel) -> Result<(DVector<f64>, DVector<f64>)> {
    EncodingInverse::new(model)?.decode(psi, energy)
}

/// External force in physical coordinates, constant over each step.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    Zero,
    Constant(DVector<f64>),
    /// One force per step.
    Piecewise(Vec<DVector<f64>>),
}

impl Forcing {
    fn at(&self, step: usize, n: usize) -> Result<Option<&DVector<f64>>> {
        let f = match self {
            Forcing::Zero => return Ok(None),
            Forcing::Constant(f) => f,
            Forcing::Piecewise(fs) => &fs[step],
        };
        if f.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: f.len() });
        }
        Ok(Some(f))
    }
}

#[derive(Debug, Clone)]
pub struct HistoryState {
    pub times: Vec<f64>,
    /// Normalised snapshots; a snapshot with zero energy is the zero vector.
    pub states: Vec<DVector<C64>>,
    pub energies: Vec<f64>,
    pub displacements: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    /// `Σ_k |k⟩|ψ(t_k)⟩ / √(N_t + 1)`, snapshot-major.
    pub composite: DVector<C64>,
}

/// Exact step-by-step variation of constants in the eigenbasis of `A`.
pub fn evolve_inhomogeneous(
    model: &NetworkModel,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    forcing: &Forcing,
    t_final: f64,
    n_steps: usize,
) -> Result<HistoryState> {
    let n = model.dof();
    for x in [u0, v0] {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
    }
    if n_steps == 0 || !(t_final > 0.0) {
        return Err(Error::InvalidArgument("need n_steps ≥ 1 and T > 0".into()));
    }
    if let Forcing::Piecewise(fs) = forcing {
        if fs.len() != n_steps {
            return Err(Error::DimensionMismatch { expected: n_steps, found: fs.len() });
        }
    }
    let h = t_final / n_steps as f64;
    let eig = SymmetricEigen::new(model.mass_weighted.clone());
    let w = &eig.eigenvectors;
    let scale = eig.eigenvalues.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let zero_tol = 1e-8 * scale;
    let sqrt_m = model.masses.map(f64::sqrt);

    let mut q = w.tr_mul(&u0.component_mul(&sqrt_m));
    let mut p = w.tr_mul(&v0.component_mul(&sqrt_m));
    let mut history = HistoryState {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        energies: Vec::with_capacity(n_steps + 1),
        displacements: Vec::with_capacity(n_steps + 1),
        velocities: Vec::with_capacity(n_steps + 1),
        composite: DVector::zeros(0),
    };
    let mut record = |k: usize, q: &DVector<f64>, p: &DVector<f64>| {
        let (y, ydot) = (w * q, w * p);
        let strain = model.incidence.tr_mul(&y);
        let energy = 0.5 * (ydot.norm_squared() + strain.norm_squared());
        let norm = if energy > 0.0 { 1.0 / (2.0 * energy).sqrt() } else { 0.0 };
        let psi = DVector::from_iterator(
            n + strain.len(),
            ydot.iter().map(|&x| C64::new(x * norm, 0.0)).chain(strain.iter().map(|&s| C64::new(0.0, s * norm))),
        );
        history.times.push(k as f64 * h);
        history.states.push(psi);
        history.energies.push(energy);
        history.displacements.push(y.component_div(&sqrt_m));
        history.velocities.push(ydot.component_div(&sqrt_m));
    };
    record(0, &q, &p);
    for step in 0..n_steps {
        let c = match forcing.at(step, n)? {
            Some(f) => w.tr_mul(&f.component_div(&sqrt_m)),
            None => DVector::zeros(n),
        };
        for k in 0..n {
            let lambda = eig.eigenvalues[k];
            let (q0, p0, ck) = (q[k], p[k], c[k]);
            if lambda.abs() <= zero_tol {
                q[k] = q0 + p0 * h + 0.5 * ck * h * h;
                p[k] = p0 + ck * h;
            } else {
                let omega = lambda.sqrt();
                let shift = ck / lambda;
                let (s, co) = (omega * h).sin_cos();
                q[k] = shift + (q0 - shift) * co + p0 / omega * s;
                p[k] = -(q0 - shift) * omega * s + p0 * co;
            }
        }
        record(step + 1, &q, &p);
    }
    let weight = 1.0 / ((n_steps + 1) as f64).sqrt();
    history.composite = DVector::from_iterator(
        history.states.iter().map(|s| s.len()).sum(),
        history.states.iter().flat_map(|s| s.iter().map(|&z| z * weight)),
    );
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    /// `J = −iH − γI` on the whole embedded state.
    #[default]
    Isotropic,
    /// Friction `γ M⁻¹` on the velocity block only, as in the physical
    /// Langevin equation.
    VelocityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInjection {
    /// `Σ = σ M^{-1/2}` into the velocity block.
    #[default]
    VelocityBlock,
    /// `Σ = σ I` on every component.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub gamma: f64,
    pub kbt: f64,
    #[serde(default)]
    pub damping: Damping,
    #[serde(default)]
    pub noise: NoiseInjection,
}

impl LangevinParams {
    pub fn new(gamma: f64, kbt: f64) -> Result<Self> {
        if !(gamma >= 0.0 && kbt >= 0.0 && gamma.is_finite() && kbt.is_finite()) {
            return Err(Error::InvalidArgument(format!("need γ ≥ 0 and k_BT ≥ 0, got {gamma}, {kbt}")));
        }
        Ok(Self { gamma, kbt, damping: Damping::default(), noise: NoiseInjection::default() })
    }

    pub fn with_damping(mut self, damping: Damping) -> Self {
        self.damping = damping;
        self
    }

    pub fn with_noise(mut self, noise: NoiseInjection) -> Self {
        self.noise = noise;
        self
    }

    /// Fluctuation–dissipation amplitude `√(2 k_BT γ)`.
    pub fn sigma(&self) -> f64 {
        (2.0 * self.kbt * self.gamma).sqrt()
    }
}

/// Linear SDE `dφ = J φ dt + Σ dW` on the embedded space.
#[derive(Debug, Clone)]
pub struct LangevinSystem {
    pub params: LangevinParams,
    pub hamiltonian: EmbeddedHamiltonian,
    pub generator: DMatrix<C64>,
    /// `Σ`, one column per independent Wiener process.
    pub injection: DMatrix<f64>,
    /// `ΣΣ†`.
    pub diffusion: DMatrix<C64>,
    /// Upper bound on `‖A‖`, for the step-size rule.
    pub stiffness_norm: f64,
    sqrt_m: DVector<f64>,
    incidence: DMatrix<f64>,
}

impl LangevinSystem {
    pub fn new(model: &NetworkModel, params: LangevinParams) -> Result<Self> {
        LangevinParams::new(params.gamma, params.kbt)?;
        let hamiltonian = embed(model);
        let (n, d) = (model.dof(), hamiltonian.dim());
        let mut generator = to_complex(&hamiltonian.h) * C64::new(0.0, -1.0);
        for k in 0..d {
            let friction = match params.damping {
                Damping::Isotropic => params.gamma,
                Damping::VelocityOnly if k < n => params.gamma / model.masses[k],
                Damping::VelocityOnly => 0.0,
            };
            generator[(k, k)] -= friction;
        }
        let sigma = params.sigma();
        let injection = match params.noise {
            NoiseInjection::VelocityBlock => DMatrix::from_fn(d, n, |r, c| if r == c { sigma / model.masses[r].sqrt() } else { 0.0 }),
            NoiseInjection::Isotropic => DMatrix::identity(d, d) * sigma,
        };
        let diffusion = to_complex(&(&injection * injection.transpose()));
        let stiffness_norm = linalg::power_norm(&model.mass_weighted);
        Ok(Self {
            params,
            hamiltonian,
            generator,
            injection,
            diffusion,
            stiffness_norm,
            sqrt_m: model.masses.map(f64::sqrt),
            incidence: model.incidence.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// `e^{tJ}`; for isotropic damping this is `e^{−γt} e^{−iHt}`.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        match self.params.damping {
            Damping::Isotropic => self.hamiltonian.propagator(t) * C64::new((-self.params.gamma * t).exp(), 0.0),
            Damping::VelocityOnly => (&self.generator * C64::new(t, 0.0)).exp(),
        }
    }

    /// Largest admissible Euler–Maruyama step, `0.01 / √‖A‖`.
    pub fn max_step(&self) -> f64 {
        if self.stiffness_norm > 0.0 {
            0.01 / self.stiffness_norm.sqrt()
        } else {
            0.01
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceRoute {
    Lyapunov,
    /// Used when the Lyapunov operator is singular (e.g. `γ = 0`).
    VanLoan,
}

#[derive(Debug, Clone)]
pub struct LangevinCovariance {
    pub rho: DMatrix<C64>,
    /// `e^{tJ} ρ0 e^{tJ†}`.
    pub homogeneous: DMatrix<C64>,
    /// Noise integral by composite Gauss–Legendre quadrature.
    pub quadrature: DMatrix<C64>,
    /// Noise integral by the independent route.
    pub cross_check: DMatrix<C64>,
    pub route: CovarianceRoute,
    /// Relative Frobenius difference between the two integrals.
    pub disagreement: f64,
    pub quadrature_nodes: usize,
}

const GL_NODES: usize = 64;

fn quadrature_integral(system: &LangevinSystem, t: f64) -> (DMatrix<C64>, usize) {
    let bound = system.hamiltonian.norm() + system.params.gamma;
    let panels = ((t * bound / 4.0).ceil() as usize).max(1);
    let len = t / panels as f64;
    let (nodes, weights) = linalg::gauss_legendre(GL_NODES);
    let q = &system.diffusion;
    // Every panel is the first one conjugated by e^{aJ}.
    let mut panel = DMatrix::<C64>::zeros(system.dim(), system.dim());
    for (x, w) in nodes.iter().zip(&weights) {
        let e = system.propagator(0.5 * len * (x + 1.0));
        panel += (&e * q * e.adjoint()) * C64::new(0.5 * len * w, 0.0);
    }
    let step = system.propagator(len);
    let mut total = panel.clone();
    for _ in 1..panels {
        total = &panel + &step * total * step.adjoint();
    }
    (linalg::hermitian_part(&total), panels * GL_NODES)
}

/// `ρ(t) = e^{tJ} ρ0 e^{tJ†} + ∫_0^t e^{τJ} ΣΣ† e^{τJ†} dτ`.
pub fn evolve_langevin_covariance(system: &LangevinSystem, rho0: &DMatrix<C64>, t: f64) -> Result<LangevinCovariance> {
    let d = system.dim();
    if rho0.nrows() != d || rho0.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: rho0.nrows() });
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("evolution time must be nonnegative, got {t}")));
    }
    let scale = linalg::cmax(rho0).max(f64::MIN_POSITIVE);
    let asym = linalg::cmax(&(rho0 - rho0.adjoint()));
    if asym > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("initial covariance is not Hermitian ({asym:.3e})")));
    }
    let min_eig = SymmetricEigen::new(linalg::hermitian_part(rho0)).eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if min_eig < -1e-10 * scale {
        return Err(Error::InvalidArgument(format!("initial covariance is not positive semidefinite ({min_eig:.3e})")));
    }

    let phi = system.propagator(t);
    let homogeneous = linalg::hermitian_part(&(&phi * rho0 * phi.adjoint()));
    let (quadrature, quadrature_nodes) = if t > 0.0 { quadrature_integral(system, t) } else { (DMatrix::zeros(d, d), 0) };

    let q = &system.diffusion;
    let rhs = &phi * q * phi.adjoint() - q;
    let (cross_check, route) = match linalg::solve_lyapunov(&system.generator, &rhs)? {
        linalg::LyapunovOutcome::Solved(x) => (x, CovarianceRoute::Lyapunov),
        linalg::LyapunovOutcome::Singular => (linalg::van_loan_integral(&system.generator, q, t), CovarianceRoute::VanLoan),
    };
    let cross_check = linalg::hermitian_part(&cross_check);
    let denom = quadrature.norm().max(cross_check.norm());
    let disagreement = if denom > 0.0 { (&quadrature - &cross_check).norm() / denom } else { 0.0 };
    if disagreement > 1e-8 {
        return Err(Error::RouteDisagreement(disagreement));
    }
    Ok(LangevinCovariance { rho: &homogeneous + &quadrature, homogeneous, quadrature, cross_check, route, disagreement, quadrature_nodes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Defaults to the largest grid-aligned step not above `0.01/√‖A‖`.
    pub step: Option<f64>,
    /// Displacement moments are time averages over `[average_after, t]`
    /// when set, final-time values otherwise.
    pub average_after: Option<f64>,
}

impl MonteCarloOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, step: None, average_after: None }
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloEnsemble {
    pub n_paths: usize,
    pub step: f64,
    pub n_steps: usize,
    pub mean: DVector<C64>,
    /// `E[φ φ†]`, comparable with the master-equation `ρ` for `ρ0 = φ0 φ0†`.
    pub second_moment: DMatrix<C64>,
    /// Standard errors of the real and imaginary parts of `second_moment`.
    pub second_moment_se: DMatrix<C64>,
    pub covariance: DMatrix<C64>,
    pub displacement_mean: DVector<f64>,
    pub displacement_second_moment: DMatrix<f64>,
    pub displacement_se: DMatrix<f64>,
}

#[derive(Clone)]
struct Accumulator {
    sum: Vec<C64>,
    outer: Vec<C64>,
    outer_sq: Vec<C64>,
    u_sum: Vec<f64>,
    u_outer: Vec<f64>,
    u_outer_sq: Vec<f64>,
}

impl Accumulator {
    fn new(d: usize, n: usize) -> Self {
        Self {
            sum: vec![ZERO; d],
            outer: vec![ZERO; d * d],
            outer_sq: vec![ZERO; d * d],
            u_sum: vec![0.0; n],
            u_outer: vec![0.0; n * n],
            u_outer_sq: vec![0.0; n * n],
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        let add_c = |a: &mut [C64], b: &[C64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        let add_r = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add_c(&mut self.sum, &other.sum);
        add_c(&mut self.outer, &other.outer);
        add_c(&mut self.outer_sq, &other.outer_sq);
        add_r(&mut self.u_sum, &other.u_sum);
        add_r(&mut self.u_outer, &other.u_outer);
        add_r(&mut self.u_outer_sq, &other.u_outer_sq);
        self
    }
}

fn standard_error(sum: f64, sum_sq: f64, count: usize) -> f64 {
    if count < 2 {
        return 0.0;
    }
    let c = count as f64;
    let mean = sum / c;
    ((sum_sq / c - mean * mean).max(0.0) / (c - 1.0)).sqrt()
}

/// Euler–Maruyama ensemble for `dφ = Jφ dt + Σ dW` started at the
/// unnormalised `φ0 = [√M v0; i Bᵀ √M u0]`, with `y` integrated alongside.
///
/// Path `p` at step `s` draws its normals from counter pairs
/// `(p · n_steps + s) · ⌈n_noise/2⌉ + j/2`.
pub fn monte_carlo_langevin(
    system: &LangevinSystem,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    t: f64,
    options: &MonteCarloOptions,
) -> Result<MonteCarloEnsemble> {
    let n = system.sqrt_m.len();
    let d = system.dim();
    for x in [u0, v0] {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
    }
    if options.n_paths == 0 || !(t > 0.0) {
        return Err(Error::InvalidArgument("need at least one path and t > 0".into()));
    }
    let bound = system.max_step();
    let n_steps = match options.step {
        Some(h) if !(h > 0.0) || h > bound * (1.0 + 1e-12) => {
            return Err(Error::InvalidArgument(format!("step {h} exceeds 0.01/√‖A‖ = {bound}")));
        }
        Some(h) => (t / h).round().max(1.0) as usize,
        None => (t / bound).ceil() as usize,
    };
    let h = t / n_steps as f64;
    let average_from = options.average_after.map(|ta| ((ta / h).ceil() as usize).min(n_steps));

    let jmat: Vec<C64> = (0..d * d).map(|k| system.generator[(k / d, k % d)]).collect();
    let n_noise = system.injection.ncols();
    let sigma: Vec<f64> = (0..d * n_noise).map(|k| system.injection[(k / n_noise, k % n_noise)]).collect();
    let pairs_per_step = n_noise.div_ceil(2) as u64;
    let rng = CbrngSpec::new(options.seed);
    let y0 = u0.component_mul(&system.sqrt_m);
    let phi0 = {
        let strain = system.incidence.tr_mul(&y0);
        let ydot = v0.component_mul(&system.sqrt_m);
        (0..d).map(|k| if k < n { C64::new(ydot[k], 0.0) } else { C64::new(0.0, strain[k - n]) }).collect::<Vec<_>>()
    };
    let sqrt_h = h.sqrt();

    let run_path = |path: usize, acc: &mut Accumulator| {
        let mut phi = phi0.clone();
        let mut next = vec![ZERO; d];
        let mut y = y0.as_slice().to_vec();
        let mut xi = vec![0.0; n_noise + 1];
        let mut u_avg = vec![0.0; n];
        let mut uu_avg = vec![0.0; n * n];
        let mut samples = 0usize;
        let accumulate = |y: &[f64], u_avg: &mut [f64], uu_avg: &mut [f64]| {
            for a in 0..n {
                let ua = y[a] / system.sqrt_m[a];
                u_avg[a] += ua;
                for b in 0..n {
                    uu_avg[a * n + b] += ua * y[b] / system.sqrt_m[b];
                }
            }
        };
        for s in 0..n_steps {
            let base = (path as u64 * n_steps as u64 + s as u64) * pairs_per_step;
            for j in 0..pairs_per_step as usize {
                let (a, b) = rng.normal_pair(base + j as u64);
                xi[2 * j] = a;
                xi[2 * j + 1] = b;
            }
            for r in 0..d {
                let mut drift = ZERO;
                for c in 0..d {
                    drift += jmat[r * d + c] * phi[c];
                }
                let mut kick = 0.0;
                for c in 0..n_noise {
                    kick += sigma[r * n_noise + c] * xi[c];
                }
                next[r] = phi[r] + drift * h + C64::new(kick * sqrt_h, 0.0);
            }
            for a in 0..n {
                y[a] += h * phi[a].re;
            }
            std::mem::swap(&mut phi, &mut next);
            if average_from.is_some_and(|from| s + 1 >= from) {
                accumulate(&y, &mut u_avg, &mut uu_avg);
                samples += 1;
            }
        }
        if average_from.is_none() || samples == 0 {
            u_avg.iter_mut().for_each(|v| *v = 0.0);
            uu_avg.iter_mut().for_each(|v| *v = 0.0);
            accumulate(&y, &mut u_avg, &mut uu_avg);
            samples = 1;
        }
        let inv = 1.0 / samples as f64;
        for a in 0..d {
            acc.sum[a] += phi[a];
            for b in 0..d {
                let z = phi[a] * phi[b].conj();
                acc.outer[a * d + b] += z;
                acc.outer_sq[a * d + b] += C64::new(z.re * z.re, z.im * z.im);
            }
        }
        for a in 0..n {
            acc.u_sum[a] += u_avg[a] * inv;
            for b in 0..n {
                let v = uu_avg[a * n + b] * inv;
                acc.u_outer[a * n + b] += v;
                acc.u_outer_sq[a * n + b] += v * v;
            }
        }
    };

    const CHUNK: usize = 64;
    let zero = Accumulator::new(d, n);
    let parts: Vec<Accumulator> = (0..options.n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = zero.clone();
            for path in c * CHUNK..((c + 1) * CHUNK).min(options.n_paths) {
                run_path(path, &mut acc);
            }
            acc
        })
        .collect();
    let total = parts.iter().fold(zero, |a, b| a.merge(b));

    let p = options.n_paths;
    let pf = p as f64;
    let mean = DVector::from_fn(d, |a, _| total.sum[a] / pf);
    let second_moment = DMatrix::from_fn(d, d, |a, b| total.outer[a * d + b] / pf);
    let second_moment_se = DMatrix::from_fn(d, d, |a, b| {
        let (s, sq) = (total.outer[a * d + b], total.outer_sq[a * d + b]);
        C64::new(standard_error(s.re, sq.re, p), standard_error(s.im, sq.im, p))
    });
    let covariance = &second_moment - &mean * mean.adjoint();
    let displacement_mean = DVector::from_fn(n, |a, _| total.u_sum[a] / pf);
    let displacement_second_moment = DMatrix::from_fn(n, n, |a, b| total.u_outer[a * n + b] / pf);
    let displacement_se = DMatrix::from_fn(n, n, |a, b| standard_error(total.u_outer[a * n + b], total.u_outer_sq[a * n + b], p));
    Ok(MonteCarloEnsemble {
        n_paths: p,
        step: h,
        n_steps,
        mean,
        second_moment,
        second_moment_se,
        covariance,
        displacement_mean,
        displacement_second_moment,
        displacement_se,
    })
}

/// `|z|` scores of every real scalar of `estimate − reference`, skipping
/// components whose standard error and difference both vanish.
pub fn z_scores(estimate: &DMatrix<C64>, se: &DMatrix<C64>, reference: &DMatrix<C64>) -> Vec<f64> {
    let scale = linalg::cmax(reference).max(1.0);
    let mut out = Vec::new();
    for ((e, s), r) in estimate.iter().zip(se.iter()).zip(reference.iter()) {
        for (diff, err) in [(e.re - r.re, s.re), (e.im - r.im, s.im)] {
            if err > 1e-14 * scale {
                out.push(diff.abs() / err);
            } else if diff.abs() > 1e-10 * scale {
                out.push(f64::INFINITY);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network_model::build_gnm;
    use crate::structure_io::synthetic_chain;

    fn two_atom() -> NetworkModel {
        build_gnm(&synthetic_chain(2, 3.8).unwrap(), 7.0, 1.0).unwrap()
    }

    #[test]
    fn single_edge_embedding_pattern() {
        let h = embed(&two_atom());
        assert_eq!((h.n_dof, h.n_edges), (2, 1));
        assert_eq!(h.h, h.h.transpose());
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(h.h[(r, c)], 0.0);
            }
            assert_ne!(h.h[(r, 2)], 0.0);
        }
        assert_eq!(h.h[(2, 2)], 0.0);
    }

    #[test]
    fn zero_time_is_identity() {
        let m = two_atom();
        let e = encode_initial_conditions(&DVector::from_vec(vec![0.3, -0.1]), &DVector::from_vec(vec![0.2, 0.5]), &m).unwrap();
        let h = embed(&m);
        assert!((evolve_harmonic(&h, &e.psi, 0.0).unwrap() - &e.psi).norm() < 1e-14);
        assert!(evolve_harmonic(&h, &e.psi, -1.0).is_err());
    }

    #[test]
    fn decode_rejects_out_of_range_strain() {
        // Triangle: three edges but a two-dimensional range of Bᵀ.
        let m = build_gnm(&synthetic_chain(3, 3.8).unwrap(), 8.0, 1.0).unwrap();
        assert_eq!(m.n_springs(), 3);
        let bt = m.incidence.transpose();
        let complement = DMatrix::identity(3, 3) - &bt * bt.clone().pseudo_inverse(1e-12).unwrap();
        let cycle = complement.column(0).into_owned();
        assert!(cycle.norm() > 1e-6);
        let mut psi = DVector::from_element(6, ZERO);
        for k in 0..3 {
            psi[3 + k] = C64::new(0.0, cycle[k]);
        }
        let inv = EncodingInverse::new(&m).unwrap();
        assert!(matches!(inv.decode(&psi, 1.0), Err(Error::CorruptedEncoding { .. })));
    }

    #[test]
    fn sigma_follows_fluctuation_dissipation() {
        let p = LangevinParams::new(0.3, 2.0).unwrap();
        assert!((p.sigma().powi(2) - 2.0 * 2.0 * 0.3).abs() < 1e-15);
        assert!(LangevinParams::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn isotropic_propagator_matches_matrix_exponential() {
        let s = LangevinSystem::new(&two_atom(), LangevinParams::new(0.4, 1.0).unwrap()).unwrap();
        let direct = (&s.generator * C64::new(1.7, 0.0)).exp();
        assert!((s.propagator(1.7) - direct).norm() < 1e-12);
    }
}
