mod common;

use common::*;
use mfhb::model::{
    basis_eval, interaction_gradient, network_output, potential_field, regularizer_value_grad,
    risk, uv_kernels, NetworkPotential, Potential,
};
use mfhb::{data, Activation, Dataset, Ensemble, ParamPoint, ParticleState, Regularizer};
use rand::Rng;

const SIG: Activation = Activation::Sigmoid;

fn at_rest(thetas: Vec<ParamPoint>) -> Ensemble {
    let d = thetas[0].dim();
    let particles = thetas
        .into_iter()
        .map(|theta| ParticleState {
            theta,
            r: vec![0.0; d],
        })
        .collect();
    Ensemble::new(particles, 0.0).unwrap()
}

/// A student that copies the teacher neuron for neuron.
fn teacher_copy(data: &Dataset) -> Ensemble {
    at_rest(data.teacher.as_ref().unwrap().neurons.clone())
}

#[test]
fn basis_matches_scalar_arithmetic() {
    let t = ParamPoint::new(vec![1.0, 1.0], -3.0);
    let want = -3.0 * sigmoid(4.0);
    assert!((basis_eval(&t, &[2.0, 2.0], SIG).unwrap() - want).abs() < 1e-15);
    assert!(basis_eval(&t, &[2.0], SIG).is_err());
}

#[test]
fn network_output_matches_naive_sum() {
    let mut r = rng(11);
    let thetas: Vec<ParamPoint> = (0..5).map(|_| random_point(&mut r, 4, 1.0)).collect();
    for _ in 0..3 {
        let x: Vec<f64> = (0..3).map(|_| normal(&mut r)).collect();
        let got = network_output(&thetas, &x, SIG).unwrap();
        assert!((got - naive_output(&thetas, &x)).abs() < 1e-12);
    }
    assert_eq!(
        network_output(&thetas[..1], &[0.1, 0.2, 0.3], SIG).unwrap(),
        basis_eval(&thetas[0], &[0.1, 0.2, 0.3], SIG).unwrap()
    );
    assert!(network_output(&[], &[0.0], SIG).is_err());
}

#[test]
fn risk_examples() {
    let data = data::sample_dataset(3, 4, 30, 5).unwrap();
    assert_eq!(risk(&teacher_copy(&data), &data, SIG).unwrap(), 0.0);

    let mut r = rng(12);
    let mut silent = random_ensemble(&mut r, 6, 3, 1.0);
    for p in &mut silent.particles {
        p.theta.b = 0.0;
    }
    let half_sq = data.labels.iter().map(|y| y * y).sum::<f64>() / (2.0 * data.len() as f64);
    assert!((risk(&silent, &data, SIG).unwrap() - half_sq).abs() < 1e-15);

    for trial in 0..5 {
        let ens = random_ensemble(&mut r, 3 + trial, 3, 1.0);
        let got = risk(&ens, &data, SIG).unwrap();
        assert!((got - naive_risk(&ens.thetas(), &data)).abs() < 1e-12);
    }
}

#[test]
fn smoothed_norm_gradient_matches_finite_differences() {
    let reg = Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 };
    let mut r = rng(13);
    for _ in 0..10 {
        let t = random_point(&mut r, 3, 1.0);
        let (_, grad) = regularizer_value_grad(&t, &reg);
        let v = t.to_vec();
        let h = 1e-6;
        let fd: Vec<f64> = (0..3)
            .map(|k| {
                let mut p = v.clone();
                let mut q = v.clone();
                p[k] += h;
                q[k] -= h;
                (reg.value(&p) - reg.value(&q)) / (2.0 * h)
            })
            .collect();
        assert!(max_rel_err(&grad, &fd, 1e-12) < 1e-6, "{grad:?} vs {fd:?}");
    }
}

#[test]
fn student_equal_to_teacher_feels_no_force() {
    let data = data::sample_dataset(4, 3, 40, 2).unwrap();
    let grads = interaction_gradient(&teacher_copy(&data), &data, SIG, &Regularizer::None).unwrap();
    assert!(grads.iter().flatten().all(|g| g.abs() < 1e-15));
}

#[test]
fn single_particle_gradient_is_the_loss_gradient() {
    let mut r = rng(14);
    let data = random_dataset(&mut r, 3, 20);
    let ens = random_ensemble(&mut r, 1, 3, 1.0);
    let reg = Regularizer::Quadratic { c: 0.3 };
    let got = interaction_gradient(&ens, &data, SIG, &reg).unwrap();
    let fd = fd_gradient(&ens.thetas(), &data, &reg, 0, 1e-5);
    assert!(max_rel_err(&got[0], &fd, 1e-6) < 1e-6);
}

#[test]
fn gradient_is_n_times_the_loss_gradient() {
    let mut r = rng(15);
    let data = random_dataset(&mut r, 4, 20);
    let ens = random_ensemble(&mut r, 5, 4, 1.0);
    let reg = Regularizer::SmoothedNorm { c: 0.05, eps: 1e-3 };
    let got = interaction_gradient(&ens, &data, SIG, &reg).unwrap();
    let thetas = ens.thetas();
    for (j, g) in got.iter().enumerate() {
        let fd: Vec<f64> = fd_gradient(&thetas, &data, &reg, j, 1e-5)
            .iter()
            .map(|x| 5.0 * x)
            .collect();
        assert!(
            max_rel_err(g, &fd, 1e-6) < 1e-5,
            "particle {j}: {g:?} vs {fd:?}"
        );
    }
}

#[test]
fn field_reduces_to_the_regularizer_without_residuals() {
    let reg = Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 };
    let mut r = rng(16);
    let points: Vec<ParamPoint> = (0..25).map(|_| random_point(&mut r, 2, 2.0)).collect();

    let data = data::sample_dataset(2, 3, 50, 4).unwrap();
    let field = potential_field(&teacher_copy(&data), &data, &points, SIG, &reg).unwrap();
    for (f, p) in field.iter().zip(&points) {
        assert!((f - reg.value(&p.to_vec())).abs() < 1e-15);
    }

    let zero_labels = Dataset::new(data.features.clone(), vec![0.0; 50]).unwrap();
    let silent = at_rest(vec![
        ParamPoint::new(vec![0.7], 0.0),
        ParamPoint::new(vec![-1.2], 0.0),
    ]);
    let field = potential_field(&silent, &zero_labels, &points, SIG, &reg).unwrap();
    for (f, p) in field.iter().zip(&points) {
        assert_eq!(*f, reg.value(&p.to_vec()));
    }
}

#[test]
fn field_gradient_at_a_particle_is_its_interaction_gradient() {
    let mut r = rng(17);
    let data = random_dataset(&mut r, 2, 30);
    let ens = random_ensemble(&mut r, 8, 2, 1.0);
    let reg = Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 };
    let grads = interaction_gradient(&ens, &data, SIG, &reg).unwrap();
    let h = 1e-3;
    for (p, g) in ens.particles.iter().zip(&grads) {
        let (a, b) = (p.theta.a[0], p.theta.b);
        let stencil = [
            ParamPoint::new(vec![a + h], b),
            ParamPoint::new(vec![a - h], b),
            ParamPoint::new(vec![a], b + h),
            ParamPoint::new(vec![a], b - h),
        ];
        let f = potential_field(&ens, &data, &stencil, SIG, &reg).unwrap();
        let fd = [(f[0] - f[1]) / (2.0 * h), (f[2] - f[3]) / (2.0 * h)];
        assert!(max_rel_err(g, &fd, 1e-3) < 1e-5, "{g:?} vs {fd:?}");
    }
}

#[test]
fn kernels_are_symmetric_and_positive_on_the_diagonal() {
    let mut r = rng(18);
    let data = random_dataset(&mut r, 3, 40);
    let uv = uv_kernels(&data, SIG).unwrap();
    for _ in 0..20 {
        let p = random_point(&mut r, 3, 2.0);
        let q = random_point(&mut r, 3, 2.0);
        assert!((uv.u(&p, &q).unwrap() - uv.u(&q, &p).unwrap()).abs() < 1e-12);
        assert!(uv.u(&p, &p).unwrap() >= 0.0);
    }
}

#[test]
fn kernel_decomposition_reproduces_the_risk() {
    let mut r = rng(19);
    for _ in 0..10 {
        let n = 1 + (r.random::<u32>() % 10) as usize;
        let d = 2 + (r.random::<u32>() % 5) as usize;
        let m = 1 + (r.random::<u32>() % 50) as usize;
        let data = random_dataset(&mut r, d, m);
        let ens = random_ensemble(&mut r, n, d, 1.5);
        let direct = risk(&ens, &data, SIG).unwrap();
        assert!((kernel_risk(&ens, &data) - direct).abs() < 1e-10);
    }
}

#[test]
fn first_variation_is_bounded_by_labels_and_outputs() {
    let data = data::sample_dataset(3, 5, 40, 8).unwrap();
    let mut r = rng(20);
    let ens = random_ensemble(&mut r, 10, 3, 1.0);
    let thetas = ens.thetas();
    let mean_abs_y = data.labels.iter().map(|y| y.abs()).sum::<f64>() / data.len() as f64;
    let max_psi = data
        .features
        .iter()
        .map(|x| naive_output(&thetas, x).abs())
        .fold(0.0, f64::max);
    // |Ψ(θ)(x)| ≤ |b|, so the bound is checked per unit second-layer weight.
    let points: Vec<ParamPoint> = (0..1000)
        .map(|_| {
            let mut p = random_point(&mut r, 3, 3.0);
            p.b = if p.b >= 0.0 { 1.0 } else { -1.0 };
            p
        })
        .collect();
    let field = potential_field(&ens, &data, &points, SIG, &Regularizer::None).unwrap();
    let sup = field.iter().map(|f| f.abs()).fold(0.0, f64::max);
    assert!(sup.is_finite() && sup <= mean_abs_y + max_psi, "{sup}");
}

#[test]
fn network_potential_objective_agrees_with_oracles() {
    let mut r = rng(21);
    let data = random_dataset(&mut r, 5, 33);
    let ens = random_ensemble(&mut r, 7, 5, 1.0);
    let reg = Regularizer::Quadratic { c: 0.2 };
    let mut pot = NetworkPotential::new(&data, SIG, reg).unwrap();
    let obj = pot.objective(&ens.flat_thetas());
    let thetas = ens.thetas();
    assert!((obj.risk - naive_risk(&thetas, &data)).abs() < 1e-12);
    assert!((obj.loss() - naive_loss(&thetas, &data, &reg)).abs() < 1e-12);
}
