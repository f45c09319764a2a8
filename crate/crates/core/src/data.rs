//! Initial ensembles and synthetic teacher/student datasets.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{network_output, Activation};
use crate::rng::{Domain, StreamFactory};
use crate::types::{Dataset, Ensemble, ParamPoint, ParticleState, TeacherSpec};
use crate::{Error, Result, RunConfig};

/// Draws `n` particles with `θ ~ N(0, init_scale²·I_d)` and `r ~ N(0, β⁻¹·I_d)`.
///
/// Particle `i` reads from its own stream, so the first `k` particles of a
/// larger ensemble coincide with an ensemble of size `k` under the same seed.
pub fn init_ensemble(cfg: &RunConfig) -> Result<Ensemble> {
    if cfg.n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if cfg.d < 2 {
        return Err(Error::Config(format!(
            "d must be at least 2 (got {})",
            cfg.d
        )));
    }
    let streams = StreamFactory::new(cfg.seed, Domain::ParticleInit);
    let v_scale = if cfg.beta.is_finite() {
        cfg.beta.recip().sqrt()
    } else {
        0.0
    };
    let particles = (0..cfg.n)
        .map(|i| {
            let mut rng = streams.at(i as u64, 0);
            let theta = gaussian_point(&mut rng, cfg.d, cfg.init_scale);
            let r = (0..cfg.d)
                .map(|_| v_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            ParticleState { theta, r }
        })
        .collect();
    Ensemble::new(particles, 0.0)
}

fn gaussian_point<R: Rng>(rng: &mut R, d: usize, scale: f64) -> ParamPoint {
    let a = (0..d - 1)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b = scale * rng.sample::<f64, _>(StandardNormal);
    ParamPoint { a, b }
}

/// `m` standard-Gaussian features labelled by a random sigmoid teacher of width `n0`.
pub fn sample_dataset(d: usize, n0: usize, m: usize, seed: u64) -> Result<Dataset> {
    sample_dataset_with(d, n0, m, seed, Activation::Sigmoid)
}

pub fn sample_dataset_with(
    d: usize,
    n0: usize,
    m: usize,
    seed: u64,
    act: Activation,
) -> Result<Dataset> {
    if d < 2 || n0 == 0 || m == 0 {
        return Err(Error::Config(format!(
            "dataset needs d >= 2, n0 >= 1, m >= 1 (got d = {d}, n0 = {n0}, m = {m})"
        )));
    }
    let teacher_streams = StreamFactory::new(seed, Domain::Teacher);
    let neurons: Vec<ParamPoint> = (0..n0)
        .map(|k| gaussian_point(&mut teacher_streams.at(k as u64, 0), d, 1.0))
        .collect();
    let features = sample_features(d - 1, m, seed);
    label_with_teacher(
        features,
        TeacherSpec {
            neurons,
            activation: act,
        },
    )
}

/// `m` i.i.d. standard-Gaussian vectors in `R^k`.
pub fn sample_features(k: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let streams = StreamFactory::new(seed, Domain::Features);
    (0..m)
        .map(|j| {
            let mut rng = streams.at(j as u64, 0);
            (0..k)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Builds a dataset whose labels are the teacher's outputs at `features`.
pub fn label_with_teacher(features: Vec<Vec<f64>>, teacher: TeacherSpec) -> Result<Dataset> {
    let labels = features
        .iter()
        .map(|x| network_output(&teacher.neurons, x, teacher.activation))
        .collect::<Result<Vec<f64>>>()?;
    let data = Dataset {
        features,
        labels,
        teacher: Some(teacher),
    };
    data.validate()?;
    Ok(data)
}
