use gnmqsim::dynamics::*;
use gnmqsim::linalg::C64;
use gnmqsim::network_model::{build_gnm, NetworkModel};
use gnmqsim::state_prep::CbrngSpec;
use gnmqsim::structure_io::{synthetic_chain, Position, ProteinStructure};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn chain(n: usize) -> NetworkModel {
    build_gnm(&synthetic_chain(n, 3.8).unwrap(), 7.0, 1.0).unwrap()
}

fn one_dof(k: f64, m: f64) -> NetworkModel {
    NetworkModel::from_stiffness(DMatrix::from_element(1, 1, k), DVector::from_element(1, m)).unwrap()
}

/// Removes the rigid-translation component so that decoding is exact.
fn centred(v: DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}

fn random_vector(n: usize, seed: u64, offset: u64) -> DVector<f64> {
    let rng = CbrngSpec::new(seed);
    DVector::from_fn(n, |i, _| 2.0 * rng.unit(offset + i as u64) - 1.0)
}

/// Normal-mode solution `u(t) = M^{-1/2} W (cos(ωt) q0 + sin(ωt)/ω p0)`.
fn normal_mode_solution(model: &NetworkModel, u0: &DVector<f64>, v0: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(model.mass_weighted.clone());
    let sqrt_m = model.masses.map(f64::sqrt);
    let q0 = eig.eigenvectors.tr_mul(&u0.component_mul(&sqrt_m));
    let p0 = eig.eigenvectors.tr_mul(&v0.component_mul(&sqrt_m));
    let mut q = q0.clone();
    let mut p = p0.clone();
    for k in 0..q.len() {
        let l = eig.eigenvalues[k];
        if l.abs() < 1e-12 {
            q[k] = q0[k] + p0[k] * t;
        } else {
            let w = l.sqrt();
            q[k] = q0[k] * (w * t).cos() + p0[k] / w * (w * t).sin();
            p[k] = -q0[k] * w * (w * t).sin() + p0[k] * (w * t).cos();
        }
    }
    ((&eig.eigenvectors * q).component_div(&sqrt_m), (&eig.eigenvectors * p).component_div(&sqrt_m))
}

fn physical_energy(model: &NetworkModel, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    0.5 * v.component_mul(&model.masses).dot(v) + 0.5 * u.dot(&(&model.stiffness * u))
}

#[test]
fn embedded_spectrum_is_plus_minus_root_of_a() {
    for model in [chain(5), chain(12), build_gnm(&synthetic_chain(9, 3.8).unwrap(), 9.0, 2.5).unwrap()] {
        let h = embed(&model);
        assert_eq!(h.h, h.h.transpose());
        let b = &model.incidence;
        let h2 = &h.h * &h.h;
        let (n, e) = (h.n_dof, h.n_edges);
        assert!((h2.view((0, 0), (n, n)) - b * b.transpose()).amax() < 1e-12);
        assert!((h2.view((n, n), (e, e)) - b.transpose() * b).amax() < 1e-12);
        assert!(h2.view((0, n), (n, e)).amax() < 1e-12);

        let scale = model.mass_weighted.amax();
        let mut roots: Vec<f64> = SymmetricEigen::new(model.mass_weighted.clone())
            .eigenvalues
            .iter()
            .filter(|&&l| l > 1e-8 * scale)
            .flat_map(|&l| [l.sqrt(), l.sqrt()])
            .collect();
        roots.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = h.eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(got.iter().rev()) {
            assert!((a + b).abs() < 1e-10);
        }
        let mut nonzero: Vec<f64> = got.iter().filter(|l| l.abs() > 1e-6).map(|l| l.abs()).collect();
        nonzero.sort_by(f64::total_cmp);
        assert_eq!(nonzero.len(), roots.len());
        for (a, b) in nonzero.iter().zip(&roots) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn empty_network_embeds_to_zero() {
    let far = ProteinStructure::from_atoms(
        "far",
        [(Position::new(0.0, 0.0, 0.0), 1.0, "GLY".to_string()), (Position::new(100.0, 0.0, 0.0), 1.0, "GLY".to_string())],
    )
    .unwrap();
    let h = embed(&build_gnm(&far, 7.0, 1.0).unwrap());
    assert_eq!(h.h, DMatrix::zeros(2, 2));
}

#[test]
fn two_atom_spring_normal_mode() {
    let model = chain(2);
    let u0 = DVector::from_vec(vec![1.0, -1.0]) / 2f64.sqrt();
    let v0 = DVector::zeros(2);
    let e = encode_initial_conditions(&u0, &v0, &model).unwrap();
    let h = embed(&model);
    let inv = EncodingInverse::new(&model).unwrap();
    for &t in &[0.0, 0.3, 1.0, 7.5, 42.0] {
        let psi = evolve_harmonic(&h, &e.psi, t).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        let (u, _) = inv.decode(&psi, e.energy).unwrap();
        let analytic = &u0 * (2f64.sqrt() * t).cos();
        assert!((u - analytic).amax() < 1e-10);
    }
}

#[test]
fn harmonic_energy_and_trajectory_on_five_chain() {
    let model = chain(5);
    let u0 = centred(random_vector(5, 7, 0));
    let v0 = centred(random_vector(5, 7, 100));
    let e = encode_initial_conditions(&u0, &v0, &model).unwrap();
    let e0 = physical_energy(&model, &u0, &v0);
    assert!((e.energy - e0).abs() < 1e-12 * e0);
    let h = embed(&model);
    let inv = EncodingInverse::new(&model).unwrap();
    for k in 0..=200 {
        let t = 0.5 * k as f64;
        let psi = evolve_harmonic(&h, &e.psi, t).unwrap();
        let (u, v) = inv.decode(&psi, e.energy).unwrap();
        let (ua, va) = normal_mode_solution(&model, &u0, &v0, t);
        assert!((&u - ua).amax() < 1e-8 && (&v - va).amax() < 1e-8, "t = {t}");
        assert!((physical_energy(&model, &u, &v) - e0).abs() <= 1e-10 * e0, "t = {t}");
    }
}

#[test]
fn round_trip_on_random_states() {
    let model = build_gnm(&synthetic_chain(10, 3.8).unwrap(), 8.0, 1.3).unwrap();
    let inv = EncodingInverse::new(&model).unwrap();
    for seed in 0..10 {
        let u0 = centred(random_vector(10, seed, 0));
        let v0 = random_vector(10, seed, 50);
        let e = encode_initial_conditions(&u0, &v0, &model).unwrap();
        let (u, v) = inv.decode(&e.psi, e.energy).unwrap();
        assert!((u - &u0).amax() <= 1e-10 && (v - &v0).amax() <= 1e-10);
    }
    let v0 = random_vector(10, 3, 0);
    let e = encode_initial_conditions(&DVector::zeros(10), &v0, &model).unwrap();
    let (u, v) = decode(&e.psi, e.energy, &model).unwrap();
    assert!(u.amax() < 1e-14 && (v - v0).amax() < 1e-12);
}

#[test]
fn unforced_history_matches_harmonic() {
    let model = chain(6);
    let u0 = centred(random_vector(6, 1, 0));
    let v0 = centred(random_vector(6, 1, 10));
    let e = encode_initial_conditions(&u0, &v0, &model).unwrap();
    let h = embed(&model);
    let history = evolve_inhomogeneous(&model, &u0, &v0, &Forcing::Zero, 100.0, 400).unwrap();
    assert_eq!(history.times.len(), 401);
    for (k, state) in history.states.iter().enumerate() {
        let direct = evolve_harmonic(&h, &e.psi, history.times[k]).unwrap();
        assert!((state - direct).norm() <= 1e-10, "k = {k}");
    }
    assert!((history.composite.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn constant_force_drives_one_dof_oscillator() {
    let (k, f) = (2.5, 0.8);
    let model = one_dof(k, 1.0);
    let history = evolve_inhomogeneous(&model, &DVector::zeros(1), &DVector::zeros(1), &Forcing::Constant(DVector::from_element(1, f)), 10.0, 250).unwrap();
    let omega = k.sqrt();
    for (t, u) in history.times.iter().zip(&history.displacements) {
        let analytic = f / (omega * omega) * (1.0 - (omega * t).cos());
        assert!((u[0] - analytic).abs() < 1e-12, "t = {t}");
    }
    // Zero energy only at t = 0.
    assert_eq!(history.energies[0], 0.0);
    assert!(history.energies[1..].iter().all(|&e| e > 0.0));
}

#[test]
fn piecewise_force_matches_concatenated_constant_runs() {
    let model = chain(4);
    let u0 = centred(random_vector(4, 2, 0));
    let v0 = DVector::zeros(4);
    let f1 = random_vector(4, 2, 20);
    let f2 = random_vector(4, 2, 40);
    let forces: Vec<_> = (0..20).map(|s| if s < 10 { f1.clone() } else { f2.clone() }).collect();
    let whole = evolve_inhomogeneous(&model, &u0, &v0, &Forcing::Piecewise(forces), 4.0, 20).unwrap();
    let first = evolve_inhomogeneous(&model, &u0, &v0, &Forcing::Constant(f1), 2.0, 10).unwrap();
    let second = evolve_inhomogeneous(&model, &first.displacements[10], &first.velocities[10], &Forcing::Constant(f2), 2.0, 10).unwrap();
    assert!((&whole.displacements[20] - &second.displacements[10]).amax() < 1e-12);
    assert!(evolve_inhomogeneous(&model, &u0, &v0, &Forcing::Piecewise(vec![]), 4.0, 20).is_err());
}

#[test]
fn noiseless_undamped_covariance_is_unitary_conjugation() {
    let model = chain(4);
    let system = LangevinSystem::new(&model, LangevinParams::new(0.0, 0.0).unwrap()).unwrap();
    let phi = phase_vector(&model, &centred(random_vector(4, 9, 0)), &random_vector(4, 9, 10)).unwrap();
    let rho0 = &phi * phi.adjoint();
    let out = evolve_langevin_covariance(&system, &rho0, 3.3).unwrap();
    let u = embed(&model).propagator(3.3);
    assert!((&out.rho - &u * &rho0 * u.adjoint()).norm() < 1e-12 * rho0.norm());
    assert!((out.rho.trace() - rho0.trace()).norm() < 1e-12 * rho0.trace().norm());
    assert_eq!(out.route, CovarianceRoute::VanLoan);
}

#[test]
fn pure_noise_integral_without_coupling() {
    let far = ProteinStructure::from_atoms(
        "far",
        (0..3).map(|i| (Position::new(50.0 * i as f64, 0.0, 0.0), 1.0 + i as f64, "GLY".to_string())),
    )
    .unwrap();
    let model = build_gnm(&far, 7.0, 1.0).unwrap();
    let (gamma, t) = (0.7, 1.9);
    let params = LangevinParams::new(gamma, 1.2).unwrap();
    let system = LangevinSystem::new(&model, params).unwrap();
    let out = evolve_langevin_covariance(&system, &DMatrix::zeros(3, 3), t).unwrap();
    let factor = (1.0 - (-2.0 * gamma * t).exp()) / (2.0 * gamma);
    let q = &system.diffusion;
    assert!((&out.rho - q * C64::new(factor, 0.0)).norm() < 1e-13 * q.norm());
    assert_eq!(out.route, CovarianceRoute::Lyapunov);
}

#[test]
fn quadrature_and_lyapunov_agree_for_both_damping_models() {
    let model = build_gnm(&synthetic_chain(6, 3.8).unwrap(), 8.0, 1.0).unwrap();
    let phi = phase_vector(&model, &random_vector(6, 4, 0), &random_vector(6, 4, 10)).unwrap();
    let rho0 = &phi * phi.adjoint();
    for damping in [Damping::Isotropic, Damping::VelocityOnly] {
        for noise in [NoiseInjection::VelocityBlock, NoiseInjection::Isotropic] {
            let params = LangevinParams::new(0.4, 1.0).unwrap().with_damping(damping).with_noise(noise);
            let system = LangevinSystem::new(&model, params).unwrap();
            let out = evolve_langevin_covariance(&system, &rho0, 25.0).unwrap();
            assert!(out.disagreement <= 1e-8, "{damping:?} {noise:?}: {}", out.disagreement);
            assert!(out.quadrature_nodes >= 64);
        }
    }
}

#[test]
fn master_equation_matches_two_atom_ensemble() {
    let model = chain(2);
    let params = LangevinParams::new(0.5, 1.0).unwrap();
    let system = LangevinSystem::new(&model, params).unwrap();
    let (u0, v0) = (DVector::from_vec(vec![0.4, -0.4]), DVector::from_vec(vec![0.1, 0.3]));
    let phi0 = phase_vector(&model, &u0, &v0).unwrap();
    let t = 2.0;
    let exact = evolve_langevin_covariance(&system, &(&phi0 * phi0.adjoint()), t).unwrap();
    let mc = monte_carlo_langevin(&system, &u0, &v0, t, &MonteCarloOptions::new(10_000, 0xfeed)).unwrap();
    assert!(mc.step <= system.max_step());
    let z = z_scores(&mc.second_moment, &mc.second_moment_se, &exact.rho);
    let within = z.iter().filter(|&&s| s <= 3.0).count();
    assert!(within as f64 >= 0.95 * z.len() as f64, "{z:?}");
}

#[test]
fn noiseless_paths_follow_damped_oscillation() {
    let model = chain(3);
    let params = LangevinParams::new(0.3, 0.0).unwrap();
    let system = LangevinSystem::new(&model, params).unwrap();
    let (u0, v0) = (DVector::from_vec(vec![0.5, 0.0, -0.5]), DVector::from_vec(vec![0.0, 0.2, 0.0]));
    let t = 4.0;
    let exact = system.propagator(t) * phase_vector(&model, &u0, &v0).unwrap();
    let coarse = monte_carlo_langevin(&system, &u0, &v0, t, &MonteCarloOptions::new(3, 1)).unwrap();
    let mut fine_opts = MonteCarloOptions::new(3, 1);
    fine_opts.step = Some(coarse.step / 4.0);
    let fine = monte_carlo_langevin(&system, &u0, &v0, t, &fine_opts).unwrap();
    let (e_coarse, e_fine) = ((&coarse.mean - &exact).norm(), (&fine.mean - &exact).norm());
    assert!(e_coarse < 10.0 * coarse.step * exact.norm());
    // First order in h.
    assert!(e_fine < 0.4 * e_coarse, "{e_fine} vs {e_coarse}");
    assert!(coarse.covariance.norm() < 1e-12 * exact.norm_squared());
}

#[test]
fn same_seed_same_ensemble() {
    let model = chain(3);
    let system = LangevinSystem::new(&model, LangevinParams::new(0.5, 1.0).unwrap()).unwrap();
    let (u0, v0) = (DVector::from_vec(vec![0.1, 0.0, -0.1]), DVector::zeros(3));
    let run = |seed| monte_carlo_langevin(&system, &u0, &v0, 0.5, &MonteCarloOptions::new(300, seed)).unwrap();
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a.second_moment, b.second_moment);
    assert_eq!(a.displacement_second_moment, b.displacement_second_moment);
    assert_ne!(a.second_moment, c.second_moment);
}

#[test]
fn one_dof_equipartition() {
    let (m, k, kbt) = (2.0, 3.0, 0.7);
    let model = one_dof(k, m);
    let params = LangevinParams::new(1.0, kbt).unwrap().with_damping(Damping::VelocityOnly);
    let system = LangevinSystem::new(&model, params).unwrap();
    let mc = monte_carlo_langevin(&system, &DVector::from_element(1, 1.0), &DVector::zeros(1), 30.0, &MonteCarloOptions::new(10_000, 77)).unwrap();
    let var = mc.second_moment[(0, 0)].re;
    let se = mc.second_moment_se[(0, 0)].re;
    assert!((var - kbt).abs() <= 3.0 * se, "Var(√m u̇) = {var} ± {se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evolution_preserves_norm(seed in any::<u64>(), t in 0.0..200.0f64) {
        let model = chain(5);
        let e = encode_initial_conditions(&random_vector(5, seed, 0), &random_vector(5, seed, 5), &model).unwrap();
        let psi = evolve_harmonic(&embed(&model), &e.psi, t).unwrap();
        prop_assert!((psi.norm() - 1.0).abs() <= 1e-12);
    }
}
