//! Python bindings. Matrices cross the boundary as lists of rows; complex
//! entries become Python `complex`.

use gnmqsim::circuit::{build_qrom, Qrom};
use gnmqsim::control::{simulate_controlled, solve_lqr, ControlProblem, FeedbackLaw};
use gnmqsim::dynamics::{
    decode, encode_initial_conditions, evolve_inhomogeneous, evolve_langevin_covariance, monte_carlo_langevin, phase_vector,
    CovarianceRoute, Damping, Forcing, LangevinParams, LangevinSystem, MonteCarloOptions, NoiseInjection,
};
use gnmqsim::kp_tree::{ConnectivityStore, UpdateReport};
use gnmqsim::network_model::{build_anm, build_gnm, condition_diagnostics, NetworkModel};
use gnmqsim::observables::*;
use gnmqsim::state_prep::{gaussian_schedule, prepare_ensemble_state, prepare_gaussian_state, CbrngSpec};
use gnmqsim::structure_io::{parse_pdb, synthetic_chain, Position, ProteinStructure};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(gnmqsim_py, NumericalError, PyRuntimeError);

fn to_py(e: gnmqsim::Error) -> PyErr {
    use gnmqsim::Error as E;
    match e {
        E::ZeroEnergy
        | E::CorruptedEncoding { .. }
        | E::RejectionLimit { .. }
        | E::RouteDisagreement(_)
        | E::Unstabilizable { .. }
        | E::Numerical(_) => NumericalError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for gnmqsim::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn complex_rows_of(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

#[pyclass(name = "Structure", module = "gnmqsim_py", skip_from_py_object)]
#[derive(Clone)]
struct PyStructure {
    inner: ProteinStructure,
}

#[pymethods]
impl PyStructure {
    /// C-alpha atoms from PDB text.
    #[staticmethod]
    fn from_pdb(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_pdb(text).py_err()? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ProteinStructure::from_json(text).py_err()? })
    }

    /// Straight chain along x with the given spacing in Å.
    #[staticmethod]
    #[pyo3(signature = (n, spacing = 3.8))]
    fn chain(n: usize, spacing: f64) -> PyResult<Self> {
        Ok(Self { inner: synthetic_chain(n, spacing).py_err()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Structure({:?}, atoms={})", self.inner.source_id, self.inner.len())
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.positions().iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    fn masses(&self) -> Vec<f64> {
        self.inner.masses()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.atoms().iter().map(|a| a.label.clone()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    fn to_pdb(&self) -> String {
        self.inner.to_pdb()
    }
}

fn parse_operator(name: &str) -> PyResult<DosOperator> {
    match name {
        "stiffness" => Ok(DosOperator::Stiffness),
        "hamiltonian" => Ok(DosOperator::Hamiltonian),
        _ => Err(PyValueError::new_err(format!("operator must be 'stiffness' or 'hamiltonian', got {name:?}"))),
    }
}

fn parse_kernel(name: &str) -> PyResult<Kernel> {
    match name {
        "jackson" => Ok(Kernel::Jackson),
        "dirichlet" => Ok(Kernel::Dirichlet),
        _ => Err(PyValueError::new_err(format!("kernel must be 'jackson' or 'dirichlet', got {name:?}"))),
    }
}

#[pyclass(name = "NetworkModel", module = "gnmqsim_py")]
struct PyModel {
    inner: NetworkModel,
}

impl PyModel {
    fn moment_set(&self, order: usize, probes: usize, seed: u64, operator: &str) -> PyResult<(MomentSet, DMatrix<f64>)> {
        let op = dos_operator(&self.inner, parse_operator(operator)?);
        let alpha = spectral_scale(&op);
        let set = if probes == 0 {
            chebyshev_moments_exact(&op, alpha, order)
        } else {
            chebyshev_moments_stochastic(&op, alpha, order, probes, seed)
        }
        .py_err()?;
        Ok((set, op))
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (structure, cutoff = 7.0, spring = 1.0))]
    fn gnm(structure: &PyStructure, cutoff: f64, spring: f64) -> PyResult<Self> {
        Ok(Self { inner: build_gnm(&structure.inner, cutoff, spring).py_err()? })
    }

    #[staticmethod]
    #[pyo3(signature = (structure, cutoff = 13.0, spring = 1.0))]
    fn anm(structure: &PyStructure, cutoff: f64, spring: f64) -> PyResult<Self> {
        Ok(Self { inner: build_anm(&structure.inner, cutoff, spring).py_err()? })
    }

    /// Imported symmetric PSD stiffness with per-DOF masses.
    #[staticmethod]
    fn from_stiffness(stiffness: Vec<Vec<f64>>, masses: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: NetworkModel::from_stiffness(matrix(&stiffness)?, vector(masses)).py_err()? })
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    #[getter]
    fn n_springs(&self) -> usize {
        self.inner.n_springs()
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind).to_lowercase()
    }

    #[getter]
    fn stiffness(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.stiffness)
    }

    #[getter]
    fn mass_weighted(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.mass_weighted)
    }

    #[getter]
    fn incidence(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.incidence)
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.inner.masses.iter().copied().collect()
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.edges.iter().map(|e| (e.i, e.j, e.weight)).collect()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.inner.mass_weighted.clone()).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn condition<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = condition_diagnostics(&self.inner);
        let out = PyDict::new(py);
        out.set_item("kappa", d.kappa)?;
        out.set_item("spectral_radius", d.spectral_radius)?;
        out.set_item("zero_modes", d.zero_modes)?;
        Ok(out)
    }

    /// Lowest `k` nonzero modes of the mass-weighted matrix.
    fn low_modes<'py>(&self, py: Python<'py>, k: usize) -> PyResult<Bound<'py, PyDict>> {
        let m = low_modes(&self.inner, k, None).py_err()?;
        let out = PyDict::new(py);
        out.set_item("values", m.values)?;
        out.set_item("vectors", rows_of(&m.vectors.transpose()))?;
        out.set_item("zero_modes", m.zero_modes)?;
        out.set_item("max_residual", m.max_residual)?;
        Ok(out)
    }

    /// `kT·K⁺` correlations and RMS fluctuation per atom.
    #[pyo3(signature = (kbt = 1.0))]
    fn fluctuations<'py>(&self, py: Python<'py>, kbt: f64) -> PyResult<Bound<'py, PyDict>> {
        let s = displacement_stats(&self.inner, kbt).py_err()?;
        let out = PyDict::new(py);
        out.set_item("correlation", rows_of(&s.correlation))?;
        out.set_item("rmsd_atom", s.rmsd_atom.iter().copied().collect::<Vec<_>>())?;
        out.set_item("zero_modes", s.zero_modes)?;
        Ok(out)
    }

    /// Chebyshev moments `μ_0..μ_order`; `probes = 0` is exact.
    #[pyo3(signature = (order, probes = 0, seed = 0, operator = "stiffness"))]
    fn moments<'py>(&self, py: Python<'py>, order: usize, probes: usize, seed: u64, operator: &str) -> PyResult<Bound<'py, PyDict>> {
        let (set, _) = self.moment_set(order, probes, seed, operator)?;
        let out = PyDict::new(py);
        out.set_item("alpha", set.alpha)?;
        out.set_item("moments", set.moments)?;
        out.set_item("standard_errors", set.standard_errors)?;
        Ok(out)
    }

    /// KPM density on an interior grid: `(energies, density)`.
    #[pyo3(signature = (order, points = 400, kernel = "jackson", operator = "stiffness"))]
    fn dos(&self, order: usize, points: usize, kernel: &str, operator: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (set, _) = self.moment_set(order, 0, 0, operator)?;
        let curve = reconstruct_dos(&set, &dos_grid(set.alpha, points), parse_kernel(kernel)?).py_err()?;
        Ok((curve.grid, curve.values))
    }

    /// L1 distance between normalised KPM bin masses and the eigenvalue histogram.
    #[pyo3(signature = (order, bins = 40, kernel = "jackson", operator = "stiffness"))]
    fn histogram_l1(&self, order: usize, bins: usize, kernel: &str, operator: &str) -> PyResult<f64> {
        let (set, op) = self.moment_set(order, 0, 0, operator)?;
        let eigs: Vec<f64> = SymmetricEigen::new(op).eigenvalues.iter().copied().collect();
        let hist = eigenvalue_histogram(&eigs, bins).py_err()?;
        gnmqsim::observables::histogram_l1(&set, parse_kernel(kernel)?, &hist).py_err()
    }

    /// Unit-norm amplitude encoding and its energy.
    fn encode(&self, u0: Vec<f64>, v0: Vec<f64>) -> PyResult<(Vec<Complex64>, f64)> {
        let e = encode_initial_conditions(&vector(u0), &vector(v0), &self.inner).py_err()?;
        Ok((e.psi.iter().copied().collect(), e.energy))
    }

    /// Minimum-norm `(u, v)` from an encoded state.
    fn decode(&self, psi: Vec<Complex64>, energy: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (u, v) = decode(&DVector::from_vec(psi), energy, &self.inner).py_err()?;
        Ok((u.iter().copied().collect(), v.iter().copied().collect()))
    }

    /// Exact harmonic trajectory on `steps + 1` equally spaced times.
    fn evolve<'py>(&self, py: Python<'py>, u0: Vec<f64>, v0: Vec<f64>, t_final: f64, steps: usize) -> PyResult<Bound<'py, PyDict>> {
        let h = evolve_inhomogeneous(&self.inner, &vector(u0), &vector(v0), &Forcing::Zero, t_final, steps).py_err()?;
        let flat = |xs: &[DVector<f64>]| xs.iter().map(|x| x.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
        let out = PyDict::new(py);
        out.set_item("times", h.times.clone())?;
        out.set_item("energies", h.energies.clone())?;
        out.set_item("displacements", flat(&h.displacements))?;
        out.set_item("velocities", flat(&h.velocities))?;
        Ok(out)
    }
}

fn langevin_system(model: &NetworkModel, gamma: f64, kbt: f64, damping: &str, noise: &str) -> PyResult<LangevinSystem> {
    let damping = match damping {
        "isotropic" => Damping::Isotropic,
        "velocity_only" => Damping::VelocityOnly,
        other => return Err(PyValueError::new_err(format!("damping must be 'isotropic' or 'velocity_only', got {other:?}"))),
    };
    let noise = match noise {
        "velocity_block" => NoiseInjection::VelocityBlock,
        "isotropic" => NoiseInjection::Isotropic,
        other => return Err(PyValueError::new_err(format!("noise must be 'velocity_block' or 'isotropic', got {other:?}"))),
    };
    let params = LangevinParams::new(gamma, kbt).py_err()?.with_damping(damping).with_noise(noise);
    LangevinSystem::new(model, params).py_err()
}

/// Master-equation second moment `ρ(t)` of the unnormalised state, started at `φ0 φ0†`.
#[pyfunction]
#[pyo3(signature = (model, u0, v0, t, gamma, kbt, damping = "isotropic", noise = "velocity_block"))]
#[allow(clippy::too_many_arguments)]
fn langevin_covariance<'py>(
    py: Python<'py>,
    model: &PyModel,
    u0: Vec<f64>,
    v0: Vec<f64>,
    t: f64,
    gamma: f64,
    kbt: f64,
    damping: &str,
    noise: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let system = langevin_system(&model.inner, gamma, kbt, damping, noise)?;
    let phi0 = phase_vector(&model.inner, &vector(u0), &vector(v0)).py_err()?;
    let c = evolve_langevin_covariance(&system, &(&phi0 * phi0.adjoint()), t).py_err()?;
    let out = PyDict::new(py);
    out.set_item("rho", complex_rows_of(&c.rho))?;
    out.set_item("route", if c.route == CovarianceRoute::Lyapunov { "lyapunov" } else { "van_loan" })?;
    out.set_item("disagreement", c.disagreement)?;
    Ok(out)
}

/// Euler–Maruyama ensemble of the same system.
#[pyfunction]
#[pyo3(signature = (model, u0, v0, t, gamma, kbt, paths, seed = 0, damping = "isotropic", noise = "velocity_block"))]
#[allow(clippy::too_many_arguments)]
fn langevin_monte_carlo<'py>(
    py: Python<'py>,
    model: &PyModel,
    u0: Vec<f64>,
    v0: Vec<f64>,
    t: f64,
    gamma: f64,
    kbt: f64,
    paths: usize,
    seed: u64,
    damping: &str,
    noise: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let system = langevin_system(&model.inner, gamma, kbt, damping, noise)?;
    let mc = py.detach(|| monte_carlo_langevin(&system, &vector(u0), &vector(v0), t, &MonteCarloOptions::new(paths, seed))).py_err()?;
    let out = PyDict::new(py);
    out.set_item("second_moment", complex_rows_of(&mc.second_moment))?;
    out.set_item("standard_error", complex_rows_of(&mc.second_moment_se))?;
    out.set_item("step", mc.step)?;
    Ok(out)
}

#[pyclass(name = "FeedbackLaw", module = "gnmqsim_py")]
struct PyFeedback {
    problem: ControlProblem,
    law: FeedbackLaw,
}

#[pymethods]
impl PyFeedback {
    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        rows_of(&self.law.p)
    }

    #[getter]
    fn gain(&self) -> Vec<Vec<f64>> {
        rows_of(&self.law.gain)
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.law.residual
    }

    #[getter]
    fn closed_loop_eigenvalues(&self) -> Vec<Complex64> {
        self.law.closed_loop_eigenvalues.clone()
    }

    fn spectral_abscissa(&self) -> f64 {
        self.law.spectral_abscissa()
    }

    /// `½ z0ᵀ P z0` with `z0 = (u0, v0)`.
    fn value(&self, u0: Vec<f64>, v0: Vec<f64>) -> f64 {
        self.law.value(&DVector::from_iterator(u0.len() + v0.len(), u0.into_iter().chain(v0)))
    }

    fn simulate<'py>(&self, py: Python<'py>, u0: Vec<f64>, v0: Vec<f64>, t_final: f64, steps: usize) -> PyResult<Bound<'py, PyDict>> {
        let t = simulate_controlled(&self.problem, &self.law, &vector(u0), &vector(v0), t_final, steps).py_err()?;
        let out = PyDict::new(py);
        out.set_item("times", t.times)?;
        out.set_item("energy", t.energy)?;
        out.set_item("potential", t.potential)?;
        out.set_item("lyapunov", t.lyapunov)?;
        out.set_item("cost", t.cost)?;
        Ok(out)
    }
}

/// Infinite-horizon LQR with the default state weight `diag(K + ridge·λmax·I, 0)`.
#[pyfunction]
#[pyo3(name = "solve_lqr", signature = (model, gamma = 0.1, control_weight = 1e-2))]
fn py_solve_lqr(model: &PyModel, gamma: f64, control_weight: f64) -> PyResult<PyFeedback> {
    let n = model.inner.dof();
    let problem = ControlProblem::new(&model.inner).with_gamma(gamma).with_control_cost(DMatrix::identity(n, n) * control_weight);
    let law = solve_lqr(&problem).py_err()?;
    Ok(PyFeedback { problem, law })
}

#[pyclass(name = "Qrom", module = "gnmqsim_py")]
struct PyQrom {
    inner: Qrom,
}

#[pymethods]
impl PyQrom {
    #[new]
    fn new(table: Vec<u64>, width: usize) -> PyResult<Self> {
        Ok(Self { inner: build_qrom(&table, width).py_err()? })
    }

    fn __len__(&self) -> usize {
        self.inner.entries()
    }

    /// Word read at `index` by basis-state simulation; raises if the
    /// address or ancillas are disturbed.
    fn lookup(&self, index: usize) -> PyResult<u64> {
        if index >= self.inner.entries() {
            return Err(PyIndexError::new_err(format!("address {index} out of range")));
        }
        let o = self.inner.lookup(index).py_err()?;
        if !(o.address_preserved && o.ancillas_clean && o.phase == 1) {
            return Err(NumericalError::new_err(format!("lookup {index} left the register dirty")));
        }
        Ok(o.value())
    }

    fn resources<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.circuit.resources();
        let out = PyDict::new(py);
        out.set_item("qubits", r.qubits)?;
        out.set_item("depth", r.depth)?;
        out.set_item("gates", r.gates)?;
        out.set_item("ancillas", r.ancillas)?;
        Ok(out)
    }
}

/// Keyed counter-based random word.
#[pyfunction]
fn cbrng(seed: u64, counter: u64) -> u64 {
    CbrngSpec::new(seed).draw(counter)
}

/// Amplitudes of the seeded random Gaussian state on `n` qubits.
#[pyfunction]
fn gaussian_state(py: Python<'_>, n: u32, seed: u64) -> PyResult<Vec<Complex64>> {
    Ok(py.detach(|| prepare_gaussian_state(n, &CbrngSpec::new(seed))).py_err()?.into_amplitudes())
}

/// `(level, samples, attempts)` of the angle rejection sampler.
#[pyfunction]
fn gaussian_level_stats(n: u32, seed: u64) -> PyResult<Vec<(u32, usize, usize)>> {
    let s = gaussian_schedule(n, &CbrngSpec::new(seed)).py_err()?;
    Ok(s.stats.iter().map(|l| (l.level, l.samples, l.attempts)).collect())
}

/// Exact reduced density of the depth-2 ensemble circuit.
#[pyfunction]
fn ensemble_density(n: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(prepare_ensemble_state(n).py_err()?.reduced_density)
}

fn report<'py>(py: Python<'py>, r: UpdateReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("changed_values", r.changed_values)?;
    out.set_item("affected_rows", r.affected_rows)?;
    out.set_item("degree_old", r.degree_old)?;
    out.set_item("degree_new", r.degree_new)?;
    out.set_item("slot", r.slot)?;
    out.set_item("grew", r.grew)?;
    Ok(out)
}

#[pyclass(name = "ConnectivityStore", module = "gnmqsim_py")]
struct PyStore {
    inner: ConnectivityStore,
}

#[pymethods]
impl PyStore {
    #[new]
    #[pyo3(signature = (structure, cutoff = 7.0, spring = 1.0))]
    fn new(structure: &PyStructure, cutoff: f64, spring: f64) -> PyResult<Self> {
        Ok(Self { inner: ConnectivityStore::build_with_spring(&structure.inner, cutoff, spring).py_err()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn live_slots(&self) -> Vec<usize> {
        self.inner.live_slots().collect()
    }

    fn neighbours(&self, i: usize) -> Vec<usize> {
        self.inner.neighbours(i)
    }

    /// Stiffness entry `K[i, j]` read from the store.
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.inner.query_entry(i, j)
    }

    fn move_atom<'py>(&mut self, py: Python<'py>, i: usize, position: (f64, f64, f64)) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.move_atom(i, Position::new(position.0, position.1, position.2)).py_err()?;
        report(py, r)
    }

    fn add_atom<'py>(&mut self, py: Python<'py>, position: (f64, f64, f64), mass: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.add_atom(Position::new(position.0, position.1, position.2), mass).py_err()?;
        report(py, r)
    }

    fn remove_atom<'py>(&mut self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.remove_atom(i).py_err()?;
        report(py, r)
    }

    fn set_mass<'py>(&mut self, py: Python<'py>, i: usize, mass: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.set_mass(i, mass).py_err()?;
        report(py, r)
    }

    /// Whether the stored tables equal a from-scratch rebuild.
    fn matches_rebuild(&self) -> PyResult<bool> {
        self.inner.matches_rebuild().py_err()
    }
}

#[pymodule]
fn gnmqsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyStructure>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyFeedback>()?;
    m.add_class::<PyQrom>()?;
    m.add_class::<PyStore>()?;
    m.add_function(wrap_pyfunction!(cbrng, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_state, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_level_stats, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_density, m)?)?;
    m.add_function(wrap_pyfunction!(langevin_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(langevin_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(py_solve_lqr, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
