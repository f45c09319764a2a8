mod common;

use common::*;
use mfhb::boltzmann::{
    apply_t, compare_empirical, f_lambda, network_objective, solve_fixed_point, FixedPointOptions,
    ThetaDensity,
};
use mfhb::grid::{embed_first_layer, embed_plane, Axis, GridObjective, ThetaGrid};
use mfhb::{Activation, Ensemble, ParamPoint, ParticleState, Regularizer};
use rand::Rng;

const SIG: Activation = Activation::Sigmoid;

fn line(half: f64, n: usize) -> ThetaGrid {
    ThetaGrid::line(Axis::symmetric(half, n).unwrap())
}

fn plane(half: f64, n: usize) -> ThetaGrid {
    ThetaGrid::plane(
        Axis::symmetric(half, n).unwrap(),
        Axis::symmetric(half, n).unwrap(),
    )
}

fn harmonic(grid: &ThetaGrid) -> Vec<f64> {
    (0..grid.cells())
        .map(|c| 0.5 * grid.coords(c)[0].powi(2))
        .collect()
}

fn network_line(n: usize) -> (ThetaGrid, GridObjective) {
    let grid = line(6.0, n);
    let data = mfhb::data::sample_dataset(2, 3, 64, 1).unwrap();
    let points = grid.param_points(embed_first_layer(1.0));
    let obj = network_objective(&data, SIG, &Regularizer::Quadratic { c: 1.0 }, &points).unwrap();
    (grid, obj)
}

fn random_density(grid: &ThetaGrid, seed: u64) -> ThetaDensity {
    let mut r = rng(seed);
    let values = (0..grid.cells()).map(|_| r.random::<f64>()).collect();
    ThetaDensity::new(grid.clone(), values).unwrap()
}

#[test]
fn linear_operator_ignores_its_input() {
    let grid = line(5.0, 64);
    let obj = GridObjective::external(harmonic(&grid));
    let a = apply_t(&ThetaDensity::uniform(grid.clone()), &obj, 1.5).unwrap();
    let b = apply_t(
        &ThetaDensity::gaussian(grid, &[2.0], 0.3).unwrap(),
        &obj,
        1.5,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn harmonic_gibbs_state_is_the_standard_normal() {
    let grid = line(10.0, 4000);
    let obj = GridObjective::external(harmonic(&grid));
    let out = apply_t(&ThetaDensity::uniform(grid.clone()), &obj, 1.0).unwrap();
    let h = grid.cell_volume();
    let l1: f64 = (0..grid.cells())
        .map(|c| {
            let x = grid.coords(c)[0];
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            (out.values[c] - pdf).abs() * h
        })
        .sum();
    assert!(l1 < 1e-6, "{l1}");
}

#[test]
fn constant_shifts_of_the_potential_do_not_matter() {
    let (grid, obj) = network_line(80);
    let shifted = GridObjective::new(
        obj.kernels.clone(),
        obj.g.iter().map(|g| g + 3.25).collect(),
    )
    .unwrap();
    let rho = random_density(&grid, 1);
    let a = apply_t(&rho, &obj, 2.0).unwrap();
    let b = apply_t(&rho, &shifted, 2.0).unwrap();
    assert!(a.l1_distance(&b) < 1e-13);
}

#[test]
fn linear_case_converges_in_one_update() {
    let grid = line(5.0, 64);
    let obj = GridObjective::external(harmonic(&grid));
    let opts = FixedPointOptions {
        damping: 1.0,
        tol: 1e-12,
        max_iter: 10,
    };
    let fp = solve_fixed_point(&ThetaDensity::uniform(grid), &obj, 1.0, &opts).unwrap();
    assert!(fp.converged);
    assert_eq!(fp.iterations, 1);
}

#[test]
fn fixed_points_are_unique_and_stable() {
    let (grid, obj) = network_line(128);
    let opts = FixedPointOptions {
        tol: 1e-10,
        ..FixedPointOptions::default()
    };
    let beta = 2.0;
    let a = solve_fixed_point(&ThetaDensity::uniform(grid.clone()), &obj, beta, &opts).unwrap();
    let b = solve_fixed_point(
        &ThetaDensity::gaussian(grid, &[3.0], 0.5).unwrap(),
        &obj,
        beta,
        &opts,
    )
    .unwrap();
    assert!(a.converged && b.converged);
    assert!(a.density.l1_distance(&b.density) < 1e-6);
    let again = apply_t(&a.density, &obj, beta).unwrap();
    assert!(again.l1_distance(&a.density) < opts.tol);
    assert!((a.density.mass() - 1.0).abs() < 1e-10);
}

#[test]
fn f_lambda_interpolates_between_risk_and_objective() {
    let (grid, obj) = network_line(40);
    let u = obj.kernels.dense_u();
    let v = obj.kernels.v_vector();
    let half_y2 = obj.kernels.half_label_energy();
    for seed in 0..5 {
        let rho = random_density(&grid, 10 + seed);
        let p = rho.masses();
        let n = p.len();
        let mut quad = 0.0;
        for c in 0..n {
            for k in 0..n {
                quad += 0.5 * u[c * n + k] * p[c] * p[k];
            }
        }
        let f0 = quad + v.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() + half_y2;
        let reg: f64 = obj.g.iter().zip(&p).map(|(a, b)| a * b).sum();
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            let got = f_lambda(&rho, &obj, lambda).unwrap();
            assert!((got - (f0 + lambda * reg)).abs() < 1e-10);
            assert!(got >= prev);
            prev = got;
        }
        assert!((f_lambda(&rho, &obj, 0.0).unwrap() - obj.unregularized(&p)).abs() < 1e-15);
        assert_eq!(f_lambda(&rho, &obj, 1.0).unwrap(), obj.value(&p, 1.0));
    }
}

fn particle(a: f64, b: f64) -> ParticleState {
    ParticleState {
        theta: ParamPoint::new(vec![a], b),
        r: vec![0.0, 0.0],
    }
}

#[test]
fn single_particle_histogram_is_one_hot() {
    let data = mfhb::data::sample_dataset(2, 3, 20, 0).unwrap();
    let grid = plane(3.0, 6);
    let ens = Ensemble::new(vec![particle(0.2, -1.3)], 0.0).unwrap();
    let cmp = compare_empirical(&ens, &data, SIG, &Regularizer::None, 1.0, &grid).unwrap();
    let hot = grid.locate(&[0.2, -1.3]).unwrap();
    for (c, h) in cmp.hist.iter().enumerate() {
        assert_eq!(*h, if c == hot { 1.0 } else { 0.0 });
    }
    assert_eq!(cmp.overflow, 0.0);
    let outside = Ensemble::new(vec![particle(0.2, -1.3), particle(9.0, 0.0)], 0.0).unwrap();
    let cmp = compare_empirical(&outside, &data, SIG, &Regularizer::None, 1.0, &grid).unwrap();
    assert_eq!(cmp.overflow, 0.5);
}

#[test]
fn larger_beta_sharpens_the_field_around_the_same_mode() {
    let data = mfhb::data::sample_dataset(2, 3, 40, 2).unwrap();
    let mut r = rng(3);
    let ens = random_ensemble(&mut r, 30, 2, 1.0);
    let grid = plane(3.0, 20);
    let reg = Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 };
    let soft = compare_empirical(&ens, &data, SIG, &reg, 2.0, &grid).unwrap();
    let sharp = compare_empirical(&ens, &data, SIG, &reg, 20.0, &grid).unwrap();
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    assert_eq!(argmax(&soft.boltzmann), argmax(&sharp.boltzmann));
    assert_eq!(argmax(&soft.field), argmax(&soft.boltzmann));
    let peak = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    assert!(peak(&sharp.boltzmann) > peak(&soft.boltzmann));

    let potential: Vec<f64> = soft.field.iter().map(|f| -f / 2.0).collect();
    let shifted: Vec<f64> = potential.iter().map(|v| v + 7.0).collect();
    let a = ThetaDensity::gibbs(grid.clone(), &potential, 2.0).unwrap();
    let b = ThetaDensity::gibbs(grid, &shifted, 2.0).unwrap();
    assert!(a.l1_distance(&b) < 1e-14);
}

#[test]
fn samples_of_the_stationary_field_match_its_histogram() {
    let data = mfhb::data::sample_dataset(2, 3, 40, 5).unwrap();
    let grid = plane(3.0, 16);
    let reg = Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 };
    let beta = 4.0;
    let obj = network_objective(&data, SIG, &reg, &grid.param_points(embed_plane)).unwrap();
    let fp = solve_fixed_point(
        &ThetaDensity::uniform(grid.clone()),
        &obj,
        beta,
        &FixedPointOptions::default(),
    )
    .unwrap();
    assert!(fp.converged);
    // The empirical measure of i.i.d. draws from ρ* generates (nearly) the
    // field whose Boltzmann state is ρ* again.
    let particles = fp
        .density
        .sample(100_000, 9)
        .into_iter()
        .map(|x| particle(x[0], x[1]))
        .collect();
    let ens = Ensemble::new(particles, 0.0).unwrap();
    let cmp = compare_empirical(&ens, &data, SIG, &reg, beta, &grid).unwrap();
    assert_eq!(cmp.overflow, 0.0);
    assert!(cmp.l1_gap < 0.05, "{}", cmp.l1_gap);
}
