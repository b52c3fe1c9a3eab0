use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use gnmqsim::network_model::build_gnm;
use gnmqsim::state_prep::*;
use gnmqsim::structure_io::synthetic_chain;
use nalgebra::DVector;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Tabulated CDF of `sin^a(2θ)` on a uniform grid, normalised by the
/// trapezoid rule.
struct NumericCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
    std: f64,
}

fn numeric_cdf(a: f64) -> NumericCdf {
    let n = 200_000;
    let h = FRAC_PI_2 / n as f64;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    let pdf: Vec<f64> = grid.iter().map(|&t| (2.0 * t).sin().max(0.0).powf(a)).collect();
    let mut cdf = vec![0.0; n + 1];
    for k in 1..=n {
        cdf[k] = cdf[k - 1] + 0.5 * h * (pdf[k] + pdf[k - 1]);
    }
    let z = cdf[n];
    cdf.iter_mut().for_each(|c| *c /= z);
    let moment = |p: i32| (1..=n).map(|k| 0.5 * h * (pdf[k] * grid[k].powi(p) + pdf[k - 1] * grid[k - 1].powi(p))).sum::<f64>() / z;
    let mean = moment(1);
    let std = (moment(2) - mean * mean).sqrt();
    NumericCdf { grid, cdf, mean, std }
}

impl NumericCdf {
    fn at(&self, t: f64) -> f64 {
        let h = self.grid[1];
        let k = ((t / h) as usize).min(self.grid.len() - 2);
        let w = (t - self.grid[k]) / h;
        self.cdf[k] * (1.0 - w) + self.cdf[k + 1] * w
    }
}

fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn cbrng_mean_over_million_counters() {
    let spec = CbrngSpec::new(0x1234_5678_9abc_def0);
    let n = 1u64 << 20;
    let mean = (0..n).map(|i| spec.unit(i)).sum::<f64>() / n as f64;
    assert!((0.499..=0.501).contains(&mean), "mean {mean}");
}

#[test]
fn seed_streams_differ() {
    let (a, b) = (CbrngSpec::new(1), CbrngSpec::new(2));
    assert!((0..10).all(|i| a.draw(i) != b.draw(i)));
}

#[test]
fn level_one_of_eleven_matches_numeric_cdf() {
    let spec = CbrngSpec::new(99);
    let oracle = numeric_cdf(1023.0);
    let n = 100_000u64;
    let samples: Vec<f64> = (0..n).map(|k| sample_angle(1, 11, &spec, k * COUNTER_BLOCK).unwrap().theta).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((oracle.mean - FRAC_PI_4).abs() < 1e-12);
    assert!((mean - FRAC_PI_4).abs() <= 3.0 * oracle.std / (n as f64).sqrt(), "mean {mean}");
    assert!((var.sqrt() / oracle.std - 1.0).abs() <= 0.05);
}

#[test]
fn acceptance_rate_is_order_one() {
    let spec = CbrngSpec::new(5);
    let n = 12;
    for level in 1..=n {
        let draws = 100_000u64;
        let attempts: usize = (0..draws).map(|k| sample_angle(level, n, &spec, k * COUNTER_BLOCK).unwrap().attempts).sum();
        let rate = draws as f64 / attempts as f64;
        assert!(rate >= 0.3, "level {level}: acceptance {rate}");
    }
}

#[test]
fn per_level_angles_match_density() {
    // Schedule counters drawn directly per level; low levels have few branches,
    // so they pool over more seeds to resolve a KS distance of 0.02.
    let n = 10;
    let schedule = gaussian_schedule(n, &CbrngSpec::new(3)).unwrap();
    for level in 1..=n {
        let branches = 1u64 << (level - 1);
        let seeds = 64.max(16_384 / branches);
        let mut samples = Vec::new();
        for seed in 0..seeds {
            let spec = CbrngSpec::new(seed);
            for branch in 0..branches {
                samples.push(sample_angle(level, n, &spec, angle_counter_base(level, n, branch)).unwrap().theta);
            }
        }
        assert_eq!(schedule.angles[level as usize - 1][0], sample_angle(level, n, &CbrngSpec::new(3), angle_counter_base(level, n, 0)).unwrap().theta);
        let oracle = numeric_cdf(((1u64 << (n - level)) - 1) as f64);
        let d = ks_distance(&mut samples, |t| oracle.at(t));
        assert!(d <= 0.02, "level {level}: KS {d}");
    }
}

#[test]
fn gaussian_state_is_deterministic_and_normal() {
    let n = 10;
    let a = prepare_gaussian_state(n, &CbrngSpec::new(0x2a)).unwrap();
    let b = prepare_gaussian_state(n, &CbrngSpec::new(0x2a)).unwrap();
    assert_eq!(a.amplitudes(), b.amplitudes());
    assert!((a.norm() - 1.0).abs() < 1e-12);

    let scale = ((1u64 << n) as f64).sqrt();
    let mut pooled: Vec<f64> = (0..64)
        .flat_map(|seed| prepare_gaussian_state(n, &CbrngSpec::new(seed)).unwrap().into_amplitudes())
        .map(|z| {
            assert_eq!(z.im, 0.0);
            z.re * scale
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = ks_distance(&mut pooled, |x| normal.cdf(x));
    // Asymptotic KS critical value at significance 0.01.
    let critical = 1.6276 / (pooled.len() as f64).sqrt();
    assert!(d < critical, "KS {d} vs {critical}");
}

#[test]
fn ensemble_reduced_state_is_exactly_maximally_mixed() {
    for n in 1..=6 {
        let e = prepare_ensemble_state(n).unwrap();
        let dim = 1 << n;
        for (a, row) in e.reduced_density.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                assert_eq!(v, if a == b { 1.0 / dim as f64 } else { 0.0 });
            }
        }
        let r = e.circuit.resources();
        assert_eq!((r.depth, r.gates, r.qubits), (2, 2 * n, 2 * n));
    }
}

proptest! {
    #[test]
    fn schedule_is_pure_in_seed(seed in any::<u64>(), n in 1u32..8) {
        let spec = CbrngSpec::new(seed);
        prop_assert_eq!(gaussian_schedule(n, &spec).unwrap(), gaussian_schedule(n, &spec).unwrap());
    }

    #[test]
    fn encoded_state_is_unit_norm(u in proptest::collection::vec(-2.0..2.0f64, 5), v in proptest::collection::vec(-2.0..2.0f64, 5)) {
        let m = build_gnm(&synthetic_chain(5, 3.8).unwrap(), 7.0, 1.0).unwrap();
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        let e = encode_initial_conditions(&u, &v, &m).unwrap();
        prop_assert!((e.psi.norm() - 1.0).abs() < 1e-12);
        let kinetic = 0.5 * v.norm_squared();
        let potential = 0.5 * (u.transpose() * &m.stiffness * &u)[(0, 0)];
        prop_assert!((e.energy * e.velocity_block().norm_squared() - kinetic).abs() < 1e-12 * e.energy.max(1.0));
        prop_assert!((e.energy * e.strain_block().norm_squared() - potential).abs() < 1e-12 * e.energy.max(1.0));
    }
}
