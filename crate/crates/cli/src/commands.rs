//! Subcommand bodies. Each reads the validated config, writes CSV/JSON files
//! through [`Artifacts`] and finishes with the manifest.
//!
//! Column orders:
//! - structure: `atoms.csv` id,label,x,y,z,mass
//! - model: `edges.csv` i,j,weight; `modes.csv` index,eigenvalue,frequency;
//!   `fluctuations.csv` atom,rmsd
//! - stateprep: `state.csv` index,re,im; `levels.csv` level,samples,attempts,acceptance;
//!   `density.csv` row,col,value
//! - evolve: `energy.csv` step,t,kinetic,potential,total (harmonic) or step,t,mean_energy
//!   (Langevin); `trajectory.csv` step,t,dof,u,v; `covariance.csv` row,col,re,im;
//!   `mc_comparison.csv` row,col,exact_re,exact_im,mc_re,mc_im,se_re,se_im
//! - dos: `moments.csv` k,moment,standard_error,eigenvalue_sum; `dos.csv` energy,density;
//!   `comparison.csv` bin,lower,upper,histogram,kpm
//! - control: `trajectory.csv` step,t,energy,potential,lyapunov,force_norm;
//!   `gain.csv` row,col,value; `closed_loop.csv` index,re,im
//! - resources: `table.csv` entries,address_bits,qubits,depth,gates,ancillas; `fit.json`

use std::path::Path;

use gnmqsim::circuit::build_qrom;
use gnmqsim::control::*;
use gnmqsim::dynamics::*;
use gnmqsim::io::{complex_matrix_csv, complex_vector_csv, read_matrix_market, write_matrix_market};
use gnmqsim::network_model::{build_anm, build_gnm, condition_diagnostics, ModelKind, NetworkModel};
use gnmqsim::observables::*;
use gnmqsim::state_prep::*;
use gnmqsim::structure_io::{parse_pdb, ProteinStructure};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde_json::json;

use crate::artifacts::{csv, num, Artifacts};
use crate::config::*;
use crate::CliError;

pub fn run(name: &str, config: &RunConfig) -> Result<(), CliError> {
    let mut out = Artifacts::create(&config.out)?;
    match name {
        "structure" => structure(config, &mut out)?,
        "model" => model(config, &mut out)?,
        "stateprep" => stateprep(config, &mut out)?,
        "evolve" => evolve(config, &mut out)?,
        "dos" => dos(config, &mut out)?,
        "control" => control(config, &mut out)?,
        "resources" => resources(config, &mut out)?,
        other => return Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
    out.finish(name, config)
}

fn input_path(config: &RunConfig) -> Result<&Path, CliError> {
    config.input.as_deref().ok_or_else(|| CliError::Usage("--input is required".into()))
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_structure(config: &RunConfig) -> Result<ProteinStructure, CliError> {
    let path = input_path(config)?;
    let text = read_input(path)?;
    match extension(path).as_str() {
        "json" => Ok(ProteinStructure::from_json(&text)?),
        "pdb" | "ent" => Ok(parse_pdb(&text)?),
        other => Err(CliError::Usage(format!("unsupported structure format {other:?}; expected .pdb, .ent or .json"))),
    }
}

fn load_model(config: &RunConfig) -> Result<NetworkModel, CliError> {
    let path = input_path(config)?;
    if extension(path) == "mtx" {
        let k = read_matrix_market(&read_input(path)?)?;
        let n = k.nrows();
        return Ok(NetworkModel::from_stiffness(k, DVector::from_element(n, 1.0))?);
    }
    let structure = load_structure(config)?;
    let (cutoff, spring) = (config.resolved_cutoff(), config.spring);
    Ok(match config.model {
        ModelChoice::Gnm => build_gnm(&structure, cutoff, spring)?,
        ModelChoice::Anm => build_anm(&structure, cutoff, spring)?,
    })
}

fn initial_state(model: &NetworkModel, initial: InitialChoice, mode: usize, amplitude: f64) -> Result<(DVector<f64>, DVector<f64>), CliError> {
    let n = model.dof();
    let u = match initial {
        InitialChoice::Mode => {
            let modes = low_modes(model, mode, None)?;
            let w = modes.vectors.column(mode - 1);
            DVector::from_fn(n, |i, _| amplitude * w[i] / model.masses[i].sqrt())
        }
        InitialChoice::Stretch => {
            // ANM stretches the x component; GNM has one coordinate per atom.
            let stride = if model.kind == ModelKind::Anm { 3 } else { 1 };
            let atoms = n / stride;
            let mid = (atoms as f64 - 1.0) / 2.0;
            DVector::from_fn(n, |i, _| if i % stride == 0 { amplitude * ((i / stride) as f64 - mid) } else { 0.0 })
        }
    };
    Ok((u, DVector::zeros(n)))
}

fn structure(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let s = load_structure(config)?;
    let rows = s.atoms().iter().map(|a| {
        [a.id.to_string(), a.label.clone(), num(a.position.x), num(a.position.y), num(a.position.z), num(a.mass)]
    });
    out.write("atoms.csv", &csv(&["id", "label", "x", "y", "z", "mass"], rows))?;
    out.write("structure.json", &(s.to_json()? + "\n"))?;
    out.note("atoms", s.len());
    out.note("source_id", &s.source_id);
    Ok(())
}

fn model(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let m = load_model(config)?;
    out.write("stiffness.mtx", &write_matrix_market(&m.stiffness))?;
    let edges = m.edges.iter().map(|e| [e.i.to_string(), e.j.to_string(), num(e.weight)]);
    out.write("edges.csv", &csv(&["i", "j", "weight"], edges))?;

    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(m.mass_weighted.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let modes = eigenvalues.iter().enumerate().map(|(i, &l)| [i.to_string(), num(l), num(l.max(0.0).sqrt())]);
    out.write("modes.csv", &csv(&["index", "eigenvalue", "frequency"], modes))?;

    let stats = displacement_stats(&m, config.kbt)?;
    let rmsd = stats.rmsd_atom.iter().enumerate().map(|(i, &r)| [i.to_string(), num(r)]);
    out.write("fluctuations.csv", &csv(&["atom", "rmsd"], rmsd))?;

    let d = condition_diagnostics(&m);
    let diagnostics = json!({
        "kind": m.kind,
        "dof": m.dof(),
        "springs": m.n_springs(),
        "factorization": m.factorization,
        "factorization_error": m.factorization_error(),
        "kappa": d.kappa,
        "spectral_radius": d.spectral_radius,
        "zero_modes": d.zero_modes,
        "warnings": m.warnings,
    });
    out.write_json("diagnostics.json", &diagnostics)?;
    out.note("dof", m.dof());
    out.note("springs", m.n_springs());
    out.note("zero_modes", d.zero_modes);
    Ok(())
}

fn stateprep(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let n = config.stateprep.qubits;
    match config.stateprep.state {
        StateChoice::Gaussian => {
            let spec = CbrngSpec::new(config.seed);
            let schedule = gaussian_schedule(n, &spec)?;
            let circuit = gaussian_state_circuit(&schedule)?;
            let state = prepare_gaussian_state(n, &spec)?;
            out.write("state.csv", &complex_vector_csv(state.amplitudes()))?;
            let levels = schedule.stats.iter().map(|s| {
                [s.level.to_string(), s.samples.to_string(), s.attempts.to_string(), num(s.acceptance_rate())]
            });
            out.write("levels.csv", &csv(&["level", "samples", "attempts", "acceptance"], levels))?;
            out.note("resources", circuit.resources());
            out.note("norm", state.norm());
        }
        StateChoice::Ensemble => {
            let e = prepare_ensemble_state(n as usize)?;
            let rows = e.reduced_density.iter().enumerate().flat_map(|(r, row)| {
                row.iter().enumerate().map(move |(c, &v)| [r.to_string(), c.to_string(), num(v)])
            });
            out.write("density.csv", &csv(&["row", "col", "value"], rows))?;
            out.write("circuit.txt", &e.circuit.to_text())?;
            out.note("resources", e.circuit.resources());
        }
    }
    Ok(())
}

fn evolve(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let m = load_model(config)?;
    let e = &config.evolve;
    let (u0, v0) = initial_state(&m, e.initial, e.mode, e.amplitude)?;
    match e.dynamics {
        DynamicsChoice::Harmonic => evolve_harmonic_run(&m, &u0, &v0, e, out),
        DynamicsChoice::Langevin => evolve_langevin_run(&m, &u0, &v0, e, config.seed, out),
    }
}

fn evolve_harmonic_run(m: &NetworkModel, u0: &DVector<f64>, v0: &DVector<f64>, e: &EvolveConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let history = evolve_inhomogeneous(m, u0, v0, &Forcing::Zero, e.time, e.steps)?;
    let mut energy_rows = Vec::with_capacity(history.times.len());
    let mut trajectory = Vec::new();
    let mut drift = 0.0f64;
    let e0 = kinetic_potential_uv(u0, v0, m)?.total();
    for (k, &t) in history.times.iter().enumerate() {
        let (u, v) = (&history.displacements[k], &history.velocities[k]);
        let split = kinetic_potential_uv(u, v, m)?;
        if e0 > 0.0 {
            drift = drift.max((split.total() - e0).abs() / e0);
        }
        energy_rows.push([k.to_string(), num(t), num(split.kinetic), num(split.potential), num(split.total())]);
        for i in 0..m.dof() {
            trajectory.push([k.to_string(), num(t), i.to_string(), num(u[i]), num(v[i])]);
        }
    }
    out.write("energy.csv", &csv(&["step", "t", "kinetic", "potential", "total"], energy_rows))?;
    out.write("trajectory.csv", &csv(&["step", "t", "dof", "u", "v"], trajectory))?;
    let last = history.states.last().expect("history includes t = 0");
    out.write("state.csv", &complex_vector_csv(last.as_slice()))?;
    out.note("energy", e0);
    out.note("max_relative_energy_drift", drift);
    Ok(())
}

fn evolve_langevin_run(
    m: &NetworkModel,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    e: &EvolveConfig,
    seed: u64,
    out: &mut Artifacts,
) -> Result<(), CliError> {
    let damping = match e.damping {
        DampingChoice::Isotropic => Damping::Isotropic,
        DampingChoice::VelocityOnly => Damping::VelocityOnly,
    };
    let noise = match e.noise {
        NoiseChoice::VelocityBlock => NoiseInjection::VelocityBlock,
        NoiseChoice::Isotropic => NoiseInjection::Isotropic,
    };
    let params = LangevinParams::new(e.gamma, e.kbt)?.with_damping(damping).with_noise(noise);
    let system = LangevinSystem::new(m, params)?;
    let phi0 = phase_vector(m, u0, v0)?;
    let rho0 = &phi0 * phi0.adjoint();
    let d = system.dim();

    // ρ(t + h) = Φ ρ(t) Φ† + S(h) is exact, so one quadrature serves the whole grid.
    let h = e.time / e.steps as f64;
    let step_noise = evolve_langevin_covariance(&system, &DMatrix::zeros(d, d), h)?.rho;
    let phi = system.propagator(h);
    let mut rho = rho0.clone();
    let mut rows = vec![[0.to_string(), num(0.0), num(0.5 * rho.trace().re)]];
    for k in 1..=e.steps {
        rho = &phi * &rho * phi.adjoint() + &step_noise;
        rows.push([k.to_string(), num(k as f64 * h), num(0.5 * rho.trace().re)]);
    }
    out.write("energy.csv", &csv(&["step", "t", "mean_energy"], rows))?;

    let direct = evolve_langevin_covariance(&system, &rho0, e.time)?;
    out.write("covariance.csv", &complex_matrix_csv(&direct.rho))?;
    out.note("route", format!("{:?}", direct.route).to_lowercase());
    out.note("route_disagreement", direct.disagreement);
    out.note("stepped_vs_direct", (&rho - &direct.rho).norm() / direct.rho.norm().max(f64::MIN_POSITIVE));

    if e.paths > 0 {
        let mc = monte_carlo_langevin(&system, u0, v0, e.time, &MonteCarloOptions::new(e.paths, seed))?;
        let mut rows = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                let (x, y, s) = (direct.rho[(r, c)], mc.second_moment[(r, c)], mc.second_moment_se[(r, c)]);
                rows.push([r.to_string(), c.to_string(), num(x.re), num(x.im), num(y.re), num(y.im), num(s.re), num(s.im)]);
            }
        }
        out.write("mc_comparison.csv", &csv(&["row", "col", "exact_re", "exact_im", "mc_re", "mc_im", "se_re", "se_im"], rows))?;
        let z = z_scores(&mc.second_moment, &mc.second_moment_se, &direct.rho);
        let within = z.iter().filter(|&&s| s <= 4.0).count() as f64 / z.len().max(1) as f64;
        out.note("mc_paths", e.paths);
        out.note("mc_step", mc.step);
        out.note("mc_fraction_within_4se", within);
    }
    Ok(())
}

fn dos(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let m = load_model(config)?;
    let which = match config.dos.operator {
        OperatorChoice::Stiffness => DosOperator::Stiffness,
        OperatorChoice::Hamiltonian => DosOperator::Hamiltonian,
    };
    let kernel = match config.dos.kernel {
        KernelChoice::Jackson => Kernel::Jackson,
        KernelChoice::Dirichlet => Kernel::Dirichlet,
    };
    let op = dos_operator(&m, which);
    let alpha = spectral_scale(&op);
    let k = config.moments;
    let set = if config.probes == 0 {
        chebyshev_moments_exact(&op, alpha, k)?
    } else {
        chebyshev_moments_stochastic(&op, alpha, k, config.probes, config.seed)?
    };
    let eigenvalues: Vec<f64> = SymmetricEigen::new(op).eigenvalues.iter().copied().collect();
    let oracle = moments_from_eigenvalues(&eigenvalues, alpha, k);
    let rows = set.moments.iter().enumerate().map(|(i, &mu)| {
        let se = set.standard_errors.as_ref().map(|s| num(s[i])).unwrap_or_default();
        [i.to_string(), num(mu), se, num(oracle[i])]
    });
    out.write("moments.csv", &csv(&["k", "moment", "standard_error", "eigenvalue_sum"], rows))?;

    let curve = reconstruct_dos(&set, &dos_grid(alpha, config.dos.grid_points), kernel)?;
    let rows = curve.grid.iter().zip(&curve.values).map(|(&x, &y)| [num(x), num(y)]);
    out.write("dos.csv", &csv(&["energy", "density"], rows))?;

    let histogram = eigenvalue_histogram(&eigenvalues, config.dos.bins)?;
    let masses = dos_bin_masses(&set, kernel, &histogram.edges)?;
    let total: f64 = masses.iter().sum();
    let rows = (0..histogram.masses.len()).map(|b| {
        let kpm = if total > 0.0 { masses[b] / total } else { 0.0 };
        [b.to_string(), num(histogram.edges[b]), num(histogram.edges[b + 1]), num(histogram.masses[b]), num(kpm)]
    });
    out.write("comparison.csv", &csv(&["bin", "lower", "upper", "histogram", "kpm"], rows))?;
    out.note("alpha", alpha);
    out.note("histogram_l1", histogram_l1(&set, kernel, &histogram)?);
    out.note("dos_integral", curve.integral());
    out.note("max_moment_deviation", set.moments.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    Ok(())
}

fn control(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let m = load_model(config)?;
    let c = &config.control;
    let n = m.dof();
    let lmax = SymmetricEigen::new(m.stiffness.clone()).eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
    let mut q = ControlProblem::displacement_weight(&(&m.stiffness + DMatrix::identity(n, n) * (c.ridge * lmax)));
    for i in n..2 * n {
        q[(i, i)] += c.velocity_weight;
    }
    let problem = ControlProblem::new(&m)
        .with_gamma(c.gamma)
        .with_state_cost(q)
        .with_control_cost(DMatrix::identity(n, n) * c.control_weight);
    let (u0, v0) = initial_state(&m, c.initial, c.mode, c.amplitude)?;
    let z0 = DVector::from_iterator(2 * n, u0.iter().chain(v0.iter()).copied());

    let (traj, gain, value) = match c.horizon {
        None => {
            let law = solve_lqr(&problem)?;
            let slowest = law.closed_loop_eigenvalues.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
            let t_final = c.time_constants / slowest;
            let traj = simulate_controlled(&problem, &law, &u0, &v0, t_final, c.steps)?;
            let eig = law.closed_loop_eigenvalues.iter().enumerate().map(|(i, z)| [i.to_string(), num(z.re), num(z.im)]);
            out.write("closed_loop.csv", &csv(&["index", "re", "im"], eig))?;
            out.note("riccati_residual", law.residual);
            out.note("spectral_abscissa", law.spectral_abscissa());
            let value = law.value(&z0);
            (traj, law.gain, value)
        }
        Some(t) => {
            let problem = problem.with_horizon(Horizon::Finite { t }, DMatrix::zeros(2 * n, 2 * n));
            let law = solve_finite_horizon(&problem, c.steps)?;
            let traj = simulate_finite_horizon(&problem, &law, &u0, &v0)?;
            let value = 0.5 * z0.dot(&(&law.p[0] * &z0));
            (traj, law.gains[0].clone(), value)
        }
    };
    let rows = (0..traj.times.len()).map(|k| {
        [k.to_string(), num(traj.times[k]), num(traj.energy[k]), num(traj.potential[k]), num(traj.lyapunov[k]), num(traj.forces[k].norm())]
    });
    out.write("trajectory.csv", &csv(&["step", "t", "energy", "potential", "lyapunov", "force_norm"], rows))?;
    let g = (0..gain.nrows()).flat_map(|r| (0..gain.ncols()).map(move |col| (r, col)));
    out.write("gain.csv", &csv(&["row", "col", "value"], g.map(|(r, col)| [r.to_string(), col.to_string(), num(gain[(r, col)])])))?;
    let e0 = traj.energy[0];
    out.note("cost", traj.cost);
    out.note("value", value);
    out.note("final_energy_ratio", if e0 > 0.0 { traj.energy.last().copied().unwrap_or(0.0) / e0 } else { 0.0 });
    out.note("t_final", traj.times.last().copied().unwrap_or(0.0));
    Ok(())
}

/// Least-squares slope and intercept.
fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if var.is_nan() || var <= 0.0 {
        return None;
    }
    let slope = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / var;
    Some((slope, my - slope * mx))
}

fn resources(config: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let r = &config.resources;
    let rng = CbrngSpec::new(config.seed);
    let mask = if r.width == 64 { u64::MAX } else { (1u64 << r.width) - 1 };
    let mut rows = Vec::new();
    for n in r.min_entries..=r.max_entries {
        let table: Vec<u64> = (0..n).map(|i| rng.draw(((n as u64) << 32) + i as u64) & mask).collect();
        let res = build_qrom(&table, r.width)?.circuit.resources();
        let bits = n.next_power_of_two().trailing_zeros() as usize;
        rows.push((n, bits, res));
    }
    let table = rows.iter().map(|(n, bits, res)| {
        [n.to_string(), bits.to_string(), res.qubits.to_string(), res.depth.to_string(), res.gates.to_string(), res.ancillas.to_string()]
    });
    out.write("table.csv", &csv(&["entries", "address_bits", "qubits", "depth", "gates", "ancillas"], table))?;

    let fit: Vec<_> = rows.iter().filter(|r| r.1 > 0).collect();
    let l = |r: &&(usize, usize, gnmqsim::circuit::Resources)| r.1 as f64;
    let l2: Vec<f64> = fit.iter().map(|r| l(r).powi(2)).collect();
    let depth: Vec<f64> = fit.iter().map(|r| r.2.depth as f64).collect();
    let nlogn: Vec<f64> = fit.iter().map(|r| r.0 as f64 * l(r)).collect();
    let gates: Vec<f64> = fit.iter().map(|r| r.2.gates as f64).collect();
    let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let quad = linear_fit(&l2, &depth);
    // The envelope keeps c1 from the fit and raises c0 until every point lies below.
    let envelope = quad.map(|(c1, _)| {
        let c1 = c1.max(0.0);
        (c1, l2.iter().zip(&depth).map(|(x, y)| y - c1 * x).fold(f64::NEG_INFINITY, f64::max))
    });
    let depth_exponent = linear_fit(&ln(&fit.iter().map(l).collect::<Vec<_>>()), &ln(&depth)).map(|f| f.0);
    let gate_exponent = linear_fit(&ln(&nlogn), &ln(&gates)).map(|f| f.0);
    let c2 = nlogn.iter().zip(&gates).map(|(x, g)| g / x).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let summary = json!({
        "depth_model": "depth <= c1 * log2(N)^2 + c0",
        "c1": envelope.map(|e| e.0),
        "c0": envelope.map(|e| e.1),
        "least_squares_intercept": quad.map(|q| q.1),
        "depth_exponent_in_log2n": depth_exponent,
        "gate_model": "gates <= c2 * N * log2(N)",
        "c2": c2,
        "gate_exponent_in_nlog2n": gate_exponent,
        "points": fit.len(),
    });
    out.write_json("fit.json", &summary)?;
    out.note("fit", summary);
    Ok(())
}
