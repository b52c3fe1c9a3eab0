//! Linear–quadratic regulation of the damped network.
//!
//! State `z = (u, u̇)`, dynamics `ż = A_c z + B_c f` with
//! `A_c = [[0, I], [−M⁻¹K, −γM⁻¹]]`, `B_c = [[0], [M⁻¹]]`, and cost
//! `½ z(T)ᵀ S z(T) + ½ ∫ (zᵀQz + fᵀRf) dt`. The feedback gain is called `G`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, to_complex, C64};
use crate::network_model::NetworkModel;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_CONTROL_WEIGHT: f64 = 1e-2;
/// Per-step cap on cost-quadrature substeps in [`simulate_controlled`].
pub const MAX_SUBSTEPS: usize = 100_000;
/// Ridge added to `Q_u = K`, relative to `λ_max(K)`, so that rigid
/// translations are detectable.
pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Horizon {
    Infinite,
    Finite { t: f64 },
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub stiffness: DMatrix<f64>,
    pub masses: DVector<f64>,
    pub gamma: f64,
    /// `2n × 2n` state weight.
    pub q: DMatrix<f64>,
    /// `n × n` control weight.
    pub r: DMatrix<f64>,
    /// `2n × 2n` terminal weight, used only for finite horizons.
    pub s: DMatrix<f64>,
    pub horizon: Horizon,
}

impl ControlProblem {
    /// Defaults: `γ = 0.1`, `Q = diag(K + 1e−4 λ_max(K) I, 0)`, `R = 1e−2 I`,
    /// `S = 0`, infinite horizon.
    pub fn new(model: &NetworkModel) -> Self {
        let n = model.dof();
        let lmax = linalg::power_norm(&model.stiffness);
        let q_u = &model.stiffness + DMatrix::identity(n, n) * (DEFAULT_RIDGE * lmax);
        Self {
            stiffness: model.stiffness.clone(),
            masses: model.masses.clone(),
            gamma: DEFAULT_GAMMA,
            q: Self::displacement_weight(&q_u),
            r: DMatrix::identity(n, n) * DEFAULT_CONTROL_WEIGHT,
            s: DMatrix::zeros(2 * n, 2 * n),
            horizon: Horizon::Infinite,
        }
    }

    /// Embeds a displacement-only weight into the `2n × 2n` state space.
    pub fn displacement_weight(w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = w.nrows();
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        q.view_mut((0, 0), (n, n)).copy_from(w);
        q
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_state_cost(mut self, q: DMatrix<f64>) -> Self {
        self.q = q;
        self
    }

    pub fn with_control_cost(mut self, r: DMatrix<f64>) -> Self {
        self.r = r;
        self
    }

    pub fn with_horizon(mut self, horizon: Horizon, s: DMatrix<f64>) -> Self {
        self.horizon = horizon;
        self.s = s;
        self
    }

    pub fn dof(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn displacement_cost(&self) -> DMatrix<f64> {
        let n = self.dof();
        self.q.view((0, 0), (n, n)).into_owned()
    }

    pub fn state_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dof();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        let mut b = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
            let inv_m = 1.0 / self.masses[i];
            for j in 0..n {
                a[(n + i, j)] = -inv_m * self.stiffness[(i, j)];
            }
            a[(n + i, n + i)] -= self.gamma * inv_m;
            b[(n + i, i)] = inv_m;
        }
        (a, b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        let shape = |m: &DMatrix<f64>, d: usize, name: &str| {
            if m.nrows() != d || m.ncols() != d {
                Err(Error::InvalidArgument(format!("{name} must be {d} × {d}")))
            } else if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                Err(Error::InvalidArgument(format!("{name} must be symmetric")))
            } else {
                Ok(())
            }
        };
        shape(&self.q, 2 * n, "Q")?;
        shape(&self.r, n, "R")?;
        shape(&self.s, 2 * n, "S")?;
        if !(self.gamma >= 0.0) || self.masses.len() != n {
            return Err(Error::InvalidArgument("need γ ≥ 0 and one mass per degree of freedom".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        for (m, name) in [(&self.q, "Q"), (&self.s, "S")] {
            let min = SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if min < -1e-10 * m.amax().max(1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive semidefinite")));
            }
        }
        if let Horizon::Finite { t } = self.horizon {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("finite horizon must be positive, got {t}")));
            }
        }
        Ok(())
    }

    fn control_inverse(&self) -> Result<DMatrix<f64>> {
        self.r.clone().try_inverse().ok_or_else(|| Error::Numerical("R is singular".into()))
    }
}

#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub p: DMatrix<f64>,
    /// `G = R⁻¹ B_cᵀ P`, so `f = −G z`.
    pub gain: DMatrix<f64>,
    pub closed_loop: DMatrix<f64>,
    pub closed_loop_eigenvalues: Vec<C64>,
    /// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_F / ‖Q‖_F`.
    pub residual: f64,
}

impl FeedbackLaw {
    pub fn spectral_abscissa(&self) -> f64 {
        self.closed_loop_eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `½ z0ᵀ P z0`.
    pub fn value(&self, z0: &DVector<f64>) -> f64 {
        0.5 * z0.dot(&(&self.p * z0))
    }
}

fn riccati_residual(a: &DMatrix<f64>, brb: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let res = a.transpose() * p + p * a - p * brb * p + q;
    let scale = q.norm();
    if scale > 0.0 {
        res.norm() / scale
    } else {
        res.norm() / p.norm().max(1.0)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Newton (Kleinman) correction: `(A − BG)ᵀ X + X (A − BG) = −(Q + GᵀRG)`.
fn newton_step(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, r_inv: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let g = r_inv * b.transpose() * p;
    let acl = a - b * &g;
    let rhs = -(q + g.transpose() * r * &g);
    match linalg::solve_lyapunov(&to_complex(&acl.transpose()), &to_complex(&rhs))? {
        linalg::LyapunovOutcome::Solved(x) => Ok(Some(symmetrize(&x.map(|z| z.re)))),
        linalg::LyapunovOutcome::Singular => Ok(None),
    }
}

/// Stabilising CARE solution from the ordered Schur form of the Hamiltonian
/// matrix `[[A, −BR⁻¹Bᵀ], [−Q, −Aᵀ]]`, polished by Newton steps.
pub fn solve_lqr(problem: &ControlProblem) -> Result<FeedbackLaw> {
    problem.validate()?;
    let (a, b) = problem.state_matrices();
    let r_inv = problem.control_inverse()?;
    let brb = &b * &r_inv * b.transpose();
    let d = a.nrows();
    check_detectable(&a, &problem.q)?;
    let mut z = DMatrix::zeros(2 * d, 2 * d);
    z.view_mut((0, 0), (d, d)).copy_from(&a);
    z.view_mut((0, d), (d, d)).copy_from(&(-&brb));
    z.view_mut((d, 0), (d, d)).copy_from(&(-&problem.q));
    z.view_mut((d, d), (d, d)).copy_from(&(-a.transpose()));

    let (mut u, mut t) = linalg::complex_schur(&to_complex(&z))?;
    // Rounding splits an imaginary-axis pair by about √ε; such modes are not stabilised.
    let tol = 1e-8 * z.amax().max(1.0);
    let found = reorder_count(&mut t, &mut u, tol);
    if found != d {
        return Err(Error::Unstabilizable { found, needed: d });
    }
    let u11 = u.view((0, 0), (d, d)).into_owned();
    let u21 = u.view((d, 0), (d, d)).into_owned();
    let u11_inv = u11.try_inverse().ok_or_else(|| Error::Numerical("stable invariant subspace is not a graph".into()))?;
    let mut p = symmetrize(&(u21 * u11_inv).map(|z| z.re));
    let mut residual = riccati_residual(&a, &brb, &problem.q, &p);
    for _ in 0..3 {
        if residual <= 1e-13 {
            break;
        }
        match newton_step(&a, &b, &problem.r, &r_inv, &problem.q, &p)? {
            Some(next) => {
                let r_next = riccati_residual(&a, &brb, &problem.q, &next);
                if r_next >= residual {
                    break;
                }
                p = next;
                residual = r_next;
            }
            None => break,
        }
    }
    let gain = &r_inv * b.transpose() * &p;
    let closed_loop = &a - &b * &gain;
    let closed_loop_eigenvalues = linalg::eigenvalues(&closed_loop)?;
    Ok(FeedbackLaw { p, gain, closed_loop, closed_loop_eigenvalues, residual })
}

/// PBH test on the marginal plant modes: every `λ` with `Re λ ≥ −tol` must
/// satisfy `rank [A − λI; Q^{1/2}] = 2n`. `B_c` actuates every velocity, so
/// stabilisability never fails and detectability is the only obstruction.
fn check_detectable(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<()> {
    let eq = SymmetricEigen::new(q.clone());
    let q_half = &eq.eigenvectors * DMatrix::from_diagonal(&eq.eigenvalues.map(|l| l.max(0.0).sqrt())) * eq.eigenvectors.transpose();
    let d = a.nrows();
    let scale = a.amax().max(q_half.amax()).max(1.0);
    let ac = to_complex(a);
    let qc = to_complex(&q_half);
    let mut undetectable = 0;
    for lambda in linalg::eigenvalues(a)?.iter().filter(|l| l.re >= -1e-6 * scale) {
        let mut stacked = DMatrix::<C64>::zeros(2 * d, d);
        stacked.view_mut((0, 0), (d, d)).copy_from(&(&ac - DMatrix::<C64>::identity(d, d) * *lambda));
        stacked.view_mut((d, 0), (d, d)).copy_from(&qc);
        let smin = stacked.singular_values().iter().fold(f64::INFINITY, |m, &s| m.min(s));
        if smin <= 1e-6 * scale {
            undetectable += 1;
        }
    }
    if undetectable > 0 {
        return Err(Error::Unstabilizable { found: d - undetectable, needed: d });
    }
    Ok(())
}

fn reorder_count(t: &mut DMatrix<C64>, u: &mut DMatrix<C64>, tol: f64) -> usize {
    linalg::reorder_schur(t, u, |l| l.re < -tol)
}

#[derive(Debug, Clone)]
pub struct ControlledTrajectory {
    pub times: Vec<f64>,
    pub displacements: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    pub forces: Vec<DVector<f64>>,
    /// `uᵀ Q_u u`.
    pub energy: Vec<f64>,
    /// `uᵀ K u`.
    pub potential: Vec<f64>,
    /// `zᵀ P z`; nonincreasing for the infinite-horizon law.
    pub lyapunov: Vec<f64>,
    /// `½ ∫_0^T (zᵀQz + fᵀRf) dt`, plus the terminal term for finite horizons.
    pub cost: f64,
}

fn stack(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(u.len() + v.len(), u.iter().chain(v.iter()).copied())
}

fn check_initial(problem: &ControlProblem, u0: &DVector<f64>, v0: &DVector<f64>) -> Result<()> {
    let n = problem.dof();
    for x in [u0, v0] {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
    }
    Ok(())
}

/// Exact closed-loop propagation `z_{k+1} = e^{A_cl h} z_k`; the running
/// cost uses four-point Gauss–Legendre on substeps with `h_sub ρ(A_cl) ≤ ½`.
pub fn simulate_controlled(
    problem: &ControlProblem,
    law: &FeedbackLaw,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    t_final: f64,
    n_steps: usize,
) -> Result<ControlledTrajectory> {
    check_initial(problem, u0, v0)?;
    if n_steps == 0 || !(t_final > 0.0) {
        return Err(Error::InvalidArgument("need n_steps ≥ 1 and T > 0".into()));
    }
    let n = problem.dof();
    let h = t_final / n_steps as f64;
    let radius = law.closed_loop_eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let subs = ((h * radius / 0.5).ceil() as usize).max(1);
    if subs > MAX_SUBSTEPS {
        return Err(Error::InvalidArgument(format!("step h = {h:.3e} needs {subs} quadrature substeps; increase n_steps")));
    }
    let hs = h / subs as f64;
    let step = (&law.closed_loop * h).exp();
    let sub = (&law.closed_loop * hs).exp();
    let (nodes, weights) = linalg::gauss_legendre(4);
    let at_nodes: Vec<DMatrix<f64>> = nodes.iter().map(|x| (&law.closed_loop * (0.5 * hs * (x + 1.0))).exp()).collect();
    let running = &problem.q + law.gain.transpose() * &problem.r * &law.gain;
    // ∫_0^{hs} e^{A s ᵀ} W e^{A s} ds, shared by every substep.
    let kernel = at_nodes.iter().zip(&weights).fold(DMatrix::zeros(2 * n, 2 * n), |acc, (e, w)| acc + e.transpose() * &running * e * (0.5 * hs * w));
    let q_u = problem.displacement_cost();

    let mut traj = ControlledTrajectory {
        times: Vec::with_capacity(n_steps + 1),
        displacements: Vec::with_capacity(n_steps + 1),
        velocities: Vec::with_capacity(n_steps + 1),
        forces: Vec::with_capacity(n_steps + 1),
        energy: Vec::with_capacity(n_steps + 1),
        potential: Vec::with_capacity(n_steps + 1),
        lyapunov: Vec::with_capacity(n_steps + 1),
        cost: 0.0,
    };
    let mut z = stack(u0, v0);
    let mut record = |k: usize, z: &DVector<f64>| {
        let u = z.rows(0, n).into_owned();
        traj.times.push(k as f64 * h);
        traj.energy.push(u.dot(&(&q_u * &u)));
        traj.potential.push(u.dot(&(&problem.stiffness * &u)));
        traj.lyapunov.push(z.dot(&(&law.p * z)));
        traj.forces.push(-(&law.gain * z));
        traj.velocities.push(z.rows(n, n).into_owned());
        traj.displacements.push(u);
    };
    record(0, &z);
    let mut cost = 0.0;
    for k in 0..n_steps {
        let mut zs = z.clone();
        for _ in 0..subs {
            cost += 0.5 * zs.dot(&(&kernel * &zs));
            zs = &sub * zs;
        }
        z = &step * z;
        record(k + 1, &z);
    }
    traj.cost = cost;
    if let Horizon::Finite { .. } = problem.horizon {
        traj.cost += 0.5 * z.dot(&(&problem.s * &z));
    }
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct FiniteHorizonLaw {
    pub times: Vec<f64>,
    /// `P(t)` on a grid of `2·n_steps + 1` points.
    pub p: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
}

/// Backward RK4 on `−Ṗ = AᵀP + PA − PBR⁻¹BᵀP + Q`, `P(T) = S`.
pub fn solve_finite_horizon(problem: &ControlProblem, n_steps: usize) -> Result<FiniteHorizonLaw> {
    problem.validate()?;
    let Horizon::Finite { t: t_final } = problem.horizon else {
        return Err(Error::InvalidArgument("problem has an infinite horizon".into()));
    };
    if n_steps == 0 {
        return Err(Error::InvalidArgument("need n_steps ≥ 1".into()));
    }
    let (a, b) = problem.state_matrices();
    let r_inv = problem.control_inverse()?;
    let brb = &b * &r_inv * b.transpose();
    let intervals = 2 * n_steps;
    let delta = t_final / intervals as f64;
    let rhs = |p: &DMatrix<f64>| a.transpose() * p + p * &a - p * &brb * p + &problem.q;
    let mut p = problem.s.clone();
    let mut ps = vec![p.clone()];
    for _ in 0..intervals {
        // dP/ds with s = T − t.
        let k1 = rhs(&p);
        let k2 = rhs(&(&p + &k1 * (0.5 * delta)));
        let k3 = rhs(&(&p + &k2 * (0.5 * delta)));
        let k4 = rhs(&(&p + &k3 * delta));
        p = symmetrize(&(&p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (delta / 6.0)));
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("Riccati integration diverged".into()));
        }
        ps.push(p.clone());
    }
    ps.reverse();
    let gains = ps.iter().map(|p| &r_inv * b.transpose() * p).collect();
    let times = (0..=intervals).map(|k| k as f64 * delta).collect();
    Ok(FiniteHorizonLaw { times, p: ps, gains })
}

/// RK4 on the state augmented with the running cost, with gains taken from
/// the law's grid (start, midpoint, end of each step).
pub fn simulate_finite_horizon(problem: &ControlProblem, law: &FiniteHorizonLaw, u0: &DVector<f64>, v0: &DVector<f64>) -> Result<ControlledTrajectory> {
    check_initial(problem, u0, v0)?;
    let n = problem.dof();
    let (a, b) = problem.state_matrices();
    let q_u = problem.displacement_cost();
    let steps = (law.times.len() - 1) / 2;
    let h = 2.0 * (law.times[1] - law.times[0]);
    let deriv = |z: &DVector<f64>, g: &DMatrix<f64>| {
        let f = -(g * z);
        let dz = &a * z + &b * &f;
        let dc = 0.5 * (z.dot(&(&problem.q * z)) + f.dot(&(&problem.r * &f)));
        (dz, dc)
    };
    let mut z = stack(u0, v0);
    let mut cost = 0.0;
    let mut traj = ControlledTrajectory {
        times: Vec::new(),
        displacements: Vec::new(),
        velocities: Vec::new(),
        forces: Vec::new(),
        energy: Vec::new(),
        potential: Vec::new(),
        lyapunov: Vec::new(),
        cost: 0.0,
    };
    for k in 0..=steps {
        let idx = 2 * k;
        let u = z.rows(0, n).into_owned();
        traj.times.push(law.times[idx]);
        traj.energy.push(u.dot(&(&q_u * &u)));
        traj.potential.push(u.dot(&(&problem.stiffness * &u)));
        traj.lyapunov.push(z.dot(&(&law.p[idx] * &z)));
        traj.forces.push(-(&law.gains[idx] * &z));
        traj.velocities.push(z.rows(n, n).into_owned());
        traj.displacements.push(u);
        if k == steps {
            break;
        }
        let (g0, gm, g1) = (&law.gains[idx], &law.gains[idx + 1], &law.gains[idx + 2]);
        let (k1, c1) = deriv(&z, g0);
        let (k2, c2) = deriv(&(&z + &k1 * (0.5 * h)), gm);
        let (k3, c3) = deriv(&(&z + &k2 * (0.5 * h)), gm);
        let (k4, c4) = deriv(&(&z + &k3 * h), g1);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        cost += (c1 + 2.0 * c2 + 2.0 * c3 + c4) * (h / 6.0);
    }
    traj.cost = cost + 0.5 * z.dot(&(&problem.s * &z));
    Ok(traj)
}
