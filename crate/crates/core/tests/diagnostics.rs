mod common;

use common::*;
use mfhb::data::sample_dataset;
use mfhb::diagnostics::{
    consistency_sweep, knn_entropy, particle_free_energy, theta_r_independence, velocity_mc_errors,
    velocity_stationarity,
};
use mfhb::dynamics::Simulation;
use mfhb::model::{HarmonicPotential, Potential};
use mfhb::{Ensemble, Integrator, ParticleState, RunConfig};

fn gaussian_samples(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| normal(&mut r)).collect())
        .collect()
}

/// Particles with `θ ~ N(0, I_d)` and independent `r ~ N(0, β⁻¹I_d)`.
fn gaussian_ensemble(n: usize, d: usize, beta: f64, seed: u64) -> Ensemble {
    let mut r = rng(seed);
    let sd = beta.recip().sqrt();
    let particles = (0..n)
        .map(|_| {
            let theta = random_point(&mut r, d, 1.0);
            let v = (0..d).map(|_| sd * normal(&mut r)).collect();
            ParticleState { theta, r: v }
        })
        .collect();
    Ensemble::new(particles, 0.0).unwrap()
}

fn gaussian_entropy(dim: usize) -> f64 {
    0.5 * dim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

#[test]
fn entropy_of_a_standard_gaussian() {
    let s = gaussian_samples(10_000, 2, 1);
    let h = knn_entropy(&s, 3).unwrap();
    assert!((h - gaussian_entropy(2)).abs() < 0.05, "{h}");
}

#[test]
fn entropy_scales_with_the_log_jacobian() {
    let s = gaussian_samples(10_000, 2, 2);
    let doubled: Vec<Vec<f64>> = s
        .iter()
        .map(|x| x.iter().map(|v| 2.0 * v).collect())
        .collect();
    let shift = knn_entropy(&doubled, 3).unwrap() - knn_entropy(&s, 3).unwrap();
    assert!((shift - 2.0 * 2f64.ln()).abs() < 0.05, "{shift}");
}

#[test]
fn entropy_ignores_sample_order() {
    let s = gaussian_samples(2000, 3, 3);
    let mut reversed = s.clone();
    reversed.reverse();
    let mut rotated = s.clone();
    rotated.rotate_left(777);
    let h = knn_entropy(&s, 3).unwrap();
    assert_eq!(h, knn_entropy(&reversed, 3).unwrap());
    assert_eq!(h, knn_entropy(&rotated, 3).unwrap());
}

#[test]
fn entropy_error_shrinks_with_the_sample_size() {
    let exact = gaussian_entropy(2);
    let errors: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            (0..10)
                .map(|seed| {
                    (knn_entropy(&gaussian_samples(n, 2, 50 + seed), 3).unwrap() - exact).abs()
                })
                .sum::<f64>()
                / 10.0
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn free_energy_estimate_of_a_gaussian_product() {
    // θ ~ N(0, I₂) in the well |θ|²/2 with r ~ N(0, I₂): ℰ = 1 + 1 − 2·log(2πe).
    let ens = gaussian_ensemble(10_000, 2, 1.0, 4);
    let mut pot = HarmonicPotential {
        dim: 2,
        curvature: 1.0,
    };
    let est = particle_free_energy(&ens, &mut pot, 1.0).unwrap();
    let want = 2.0 - gaussian_entropy(4);
    assert!((est - want).abs() < 0.1, "{est} vs {want}");

    let cold = particle_free_energy(&ens, &mut pot, f64::INFINITY).unwrap();
    assert_eq!(
        cold,
        pot.objective(&ens.flat_thetas()).loss() + ens.kinetic()
    );

    let mut shuffled = ens.clone();
    shuffled.particles.reverse();
    let again = particle_free_energy(&shuffled, &mut pot, 1.0).unwrap();
    assert!((again - est).abs() < 1e-12);
}

#[test]
fn exact_velocity_draws_pass_the_stationarity_test() {
    for beta in [1.0, 16.0] {
        let ens = gaussian_ensemble(100_000, 2, beta, 5);
        let (mean_gap, cov_gap) = velocity_stationarity(&ens, beta);
        let (mean_err, cov_err) = velocity_mc_errors(ens.len(), 2, beta);
        assert!(mean_gap < 3.0 * mean_err, "{mean_gap} vs {mean_err}");
        assert!(cov_gap < 3.0 * cov_err, "{cov_gap} vs {cov_err}");
    }
}

#[test]
fn stationary_runs_pass_at_both_temperatures() {
    for beta in [1.0, 100.0] {
        let cfg = RunConfig {
            d: 2,
            n: 2000,
            beta,
            dt: 0.01,
            seed: 6,
            integrator: Integrator::Shb,
            ..RunConfig::default()
        };
        let ens = mfhb::data::init_ensemble(&cfg).unwrap();
        let mut sim = Simulation::with_potential(
            &cfg,
            HarmonicPotential {
                dim: 2,
                curvature: 1.0,
            },
            &ens,
        )
        .unwrap();
        for _ in 0..2000 {
            sim.advance().unwrap();
        }
        let ens = sim.ensemble();
        let (mean_gap, cov_gap) = velocity_stationarity(&ens, beta);
        let (mean_err, cov_err) = velocity_mc_errors(ens.len(), 2, beta);
        assert!(
            mean_gap < 4.0 * mean_err && cov_gap < 4.0 * cov_err,
            "beta {beta}: {mean_gap} {cov_gap}"
        );
    }
}

#[test]
fn correlation_detector() {
    let n = 20_000;
    let ens = gaussian_ensemble(n, 3, 1.0, 7);
    let indep = theta_r_independence(&ens).max_abs_corr;
    assert!(indep < 3.0 / (n as f64).sqrt(), "{indep}");

    let mut copied = ens.clone();
    for p in &mut copied.particles {
        p.r = p.theta.to_vec();
    }
    assert!((theta_r_independence(&copied).max_abs_corr - 1.0).abs() < 1e-12);

    let mut flipped = ens.clone();
    for p in &mut flipped.particles {
        p.r.iter_mut().for_each(|v| *v = -*v);
    }
    let a = theta_r_independence(&ens).max_abs_corr;
    let b = theta_r_independence(&flipped).max_abs_corr;
    assert!((a - b).abs() < 1e-15);
    assert!(!theta_r_independence(&ens).degenerate);
}

#[test]
fn consistency_sweep_structure() {
    let data = sample_dataset(3, 4, 30, 0).unwrap();
    let base = RunConfig {
        d: 3,
        n0: 4,
        m: 30,
        dt: 0.05,
        steps: 60,
        record_every: 10,
        integrator: Integrator::Hb,
        beta: 1e4,
        ..RunConfig::default()
    };
    let twice = consistency_sweep(&base, &data, &[20, 20], &[1, 2]).unwrap();
    assert_eq!(twice.pair_diffs, vec![(20, 20, 0.0)]);

    let table = consistency_sweep(&base, &data, &[5, 10, 20, 40], &[1, 2, 3]).unwrap();
    assert_eq!(table.pair_diffs.len(), 3);
    assert_eq!(table.mean_curves.len(), 4);
    assert!(table
        .mean_curves
        .iter()
        .all(|c| c.len() == table.times.len()));
    assert!(table
        .pair_diffs
        .iter()
        .all(|(_, _, d)| d.is_finite() && *d >= 0.0));
    assert!(consistency_sweep(&base, &data, &[], &[1]).is_err());
}

#[test]
fn estimators_are_pure() {
    let ens = gaussian_ensemble(500, 2, 3.0, 8);
    assert_eq!(
        velocity_stationarity(&ens, 3.0),
        velocity_stationarity(&ens, 3.0)
    );
    assert_eq!(theta_r_independence(&ens), theta_r_independence(&ens));
}
