//! Independent oracles shared by the integration tests: naive loops over
//! neurons and samples, written without the library's blocked kernels.

#![allow(dead_code)]

use mfhb::model::uv_kernels;
use mfhb::{Activation, Dataset, Ensemble, ParamPoint, ParticleState, Regularizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamPoint {
    let a = (0..d - 1).map(|_| scale * normal(rng)).collect();
    ParamPoint::new(a, scale * normal(rng))
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Ensemble {
    let particles = (0..n)
        .map(|_| ParticleState {
            theta: random_point(rng, d, scale),
            r: (0..d).map(|_| normal(rng)).collect(),
        })
        .collect();
    Ensemble::new(particles, 0.0).unwrap()
}

/// Gaussian features and labels unrelated to any network.
pub fn random_dataset(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Dataset {
    let features = (0..m)
        .map(|_| (0..d - 1).map(|_| normal(rng)).collect())
        .collect();
    let labels = (0..m).map(|_| normal(rng)).collect();
    Dataset::new(features, labels).unwrap()
}

pub fn naive_output(thetas: &[ParamPoint], x: &[f64]) -> f64 {
    let mut sum = 0.0;
    for t in thetas {
        let mut z = 0.0;
        for (a, xi) in t.a.iter().zip(x) {
            z += a * xi;
        }
        sum += t.b * sigmoid(z);
    }
    sum / thetas.len() as f64
}

pub fn naive_risk(thetas: &[ParamPoint], data: &Dataset) -> f64 {
    let mut s = 0.0;
    for (x, y) in data.features.iter().zip(&data.labels) {
        let e = naive_output(thetas, x) - y;
        s += e * e;
    }
    s / (2.0 * data.len() as f64)
}

/// The scalar training loss `f(θ_1..θ_n) = R(ψ) + (1/n)Σ g(θ_i)`.
pub fn naive_loss(thetas: &[ParamPoint], data: &Dataset, reg: &Regularizer) -> f64 {
    let g: f64 = thetas.iter().map(|t| reg.value(&t.to_vec())).sum();
    naive_risk(thetas, data) + g / thetas.len() as f64
}

/// Central difference of [`naive_loss`] in every coordinate of particle `j`.
pub fn fd_gradient(
    thetas: &[ParamPoint],
    data: &Dataset,
    reg: &Regularizer,
    j: usize,
    h: f64,
) -> Vec<f64> {
    let d = thetas[j].dim();
    (0..d)
        .map(|k| {
            let shifted = |delta: f64| {
                let mut ts = thetas.to_vec();
                let mut v = ts[j].to_vec();
                v[k] += delta;
                ts[j] = ParamPoint::from_slice(&v).unwrap();
                naive_loss(&ts, data, reg)
            };
            (shifted(h) - shifted(-h)) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a − b| / max(|b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// `½U[μ,μ] + ⟨V,μ⟩ + ½‖y‖²` assembled by double sums over particles.
pub fn kernel_risk(ens: &Ensemble, data: &Dataset) -> f64 {
    let uv = uv_kernels(data, Activation::Sigmoid).unwrap();
    let thetas = ens.thetas();
    let n = thetas.len() as f64;
    let mut uu = 0.0;
    let mut v = 0.0;
    for p in &thetas {
        for q in &thetas {
            uu += uv.u(p, q).unwrap();
        }
        v += uv.v(p).unwrap();
    }
    0.5 * uu / (n * n) + v / n + uv.half_label_energy()
}

/// `∇F'(μⁿ)(θ_i)` from the explicit formula, one particle at a time.
pub fn naive_field_gradients(
    thetas: &[ParamPoint],
    data: &Dataset,
    reg: &Regularizer,
) -> Vec<Vec<f64>> {
    let m = data.len() as f64;
    let residuals: Vec<f64> = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, y)| naive_output(thetas, x) - y)
        .collect();
    thetas
        .iter()
        .map(|t| {
            let mut g = vec![0.0; t.dim()];
            for (x, e) in data.features.iter().zip(&residuals) {
                let z: f64 = t.a.iter().zip(x).map(|(a, xi)| a * xi).sum();
                let s = sigmoid(z);
                for (gk, xk) in g.iter_mut().zip(x) {
                    *gk += e * t.b * s * (1.0 - s) * xk / m;
                }
                g[t.dim() - 1] += e * s / m;
            }
            let (_, rg) = mfhb::model::regularizer_value_grad(t, reg);
            g.iter().zip(&rg).map(|(a, b)| a + b).collect()
        })
        .collect()
}
