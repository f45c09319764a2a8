//! Value types shared by every module.

use serde::{Deserialize, Serialize};

use crate::model::Activation;
use crate::{Error, Result};

/// Parameters `θ = (a, b)` of one hidden neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub a: Vec<f64>,
    pub b: f64,
}

impl ParamPoint {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        ParamPoint { a, b }
    }

    pub fn zeros(d: usize) -> Self {
        ParamPoint {
            a: vec![0.0; d.saturating_sub(1)],
            b: 0.0,
        }
    }

    /// Total dimension `d` (first-layer weights plus the output weight).
    pub fn dim(&self) -> usize {
        self.a.len() + 1
    }

    /// Flattened as `[a_1, …, a_{d−1}, b]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.a);
        v.push(self.b);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let (b, a) = v.split_last().ok_or(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        })?;
        Ok(ParamPoint {
            a: a.to_vec(),
            b: *b,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.a.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.b * self.b + self.a.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Position and velocity of one particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub theta: ParamPoint,
    pub r: Vec<f64>,
}

/// `n` particles carrying the empirical measure `μⁿ = (1/n) Σ δ_{(θ_i, r_i)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub particles: Vec<ParticleState>,
    pub dim: usize,
    pub time: f64,
}

impl Ensemble {
    pub fn new(particles: Vec<ParticleState>, time: f64) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one particle".into()))?;
        let dim = first.theta.dim();
        for p in &particles {
            check_dim(dim, p.theta.dim())?;
            check_dim(dim, p.r.len())?;
        }
        Ok(Ensemble {
            particles,
            dim,
            time,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Mass each particle carries in the empirical measure.
    pub fn weight(&self) -> f64 {
        1.0 / self.particles.len() as f64
    }

    pub fn thetas(&self) -> Vec<ParamPoint> {
        self.particles.iter().map(|p| p.theta.clone()).collect()
    }

    /// Positions flattened particle-major, `d` entries per particle.
    pub fn flat_thetas(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for p in &self.particles {
            out.extend_from_slice(&p.theta.a);
            out.push(p.theta.b);
        }
        out
    }

    pub fn flat_velocities(&self) -> Vec<f64> {
        self.particles
            .iter()
            .flat_map(|p| p.r.iter().copied())
            .collect()
    }

    /// Rebuilds an ensemble from particle-major flat arrays.
    pub fn from_flat(dim: usize, thetas: &[f64], velocities: &[f64], time: f64) -> Result<Self> {
        check_dim(thetas.len(), velocities.len())?;
        if dim == 0 || !thetas.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: thetas.len(),
            });
        }
        let particles = thetas
            .chunks_exact(dim)
            .zip(velocities.chunks_exact(dim))
            .map(|(t, r)| ParticleState {
                theta: ParamPoint {
                    a: t[..dim - 1].to_vec(),
                    b: t[dim - 1],
                },
                r: r.to_vec(),
            })
            .collect();
        Ensemble::new(particles, time)
    }

    /// Mean kinetic energy `⟨|r|²/2⟩`.
    pub fn kinetic(&self) -> f64 {
        let total: f64 = self
            .particles
            .iter()
            .map(|p| 0.5 * p.r.iter().map(|v| v * v).sum::<f64>())
            .sum();
        total * self.weight()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub neurons: Vec<ParamPoint>,
    #[serde(default)]
    pub activation: Activation,
}

/// Feature/label pairs defining the empirical data measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    #[serde(default)]
    pub teacher: Option<TeacherSpec>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let data = Dataset {
            features,
            labels,
            teacher: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension `d − 1`.
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        check_dim(self.features.len(), self.labels.len())?;
        let k = self.feature_dim();
        for x in &self.features {
            check_dim(k, x.len())?;
        }
        Ok(())
    }

    /// Mean squared label, `‖y‖²` under the empirical measure.
    pub fn label_energy(&self) -> f64 {
        self.labels.iter().map(|y| y * y).sum::<f64>() / self.len() as f64
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let p = ParamPoint::new(vec![1.5, -2.0, 0.25], 3.0);
        assert_eq!(p.to_vec(), vec![1.5, -2.0, 0.25, 3.0]);
        assert_eq!(ParamPoint::from_slice(&p.to_vec()).unwrap(), p);
        assert!(ParamPoint::from_slice(&[]).is_err());
    }

    #[test]
    fn ensemble_rejects_mixed_dimensions() {
        let p2 = ParticleState {
            theta: ParamPoint::zeros(2),
            r: vec![0.0; 2],
        };
        let p3 = ParticleState {
            theta: ParamPoint::zeros(3),
            r: vec![0.0; 3],
        };
        assert!(Ensemble::new(vec![p2.clone(), p3], 0.0).is_err());
        assert!(Ensemble::new(vec![], 0.0).is_err());
        let bad_r = ParticleState {
            theta: ParamPoint::zeros(2),
            r: vec![0.0; 3],
        };
        assert!(Ensemble::new(vec![bad_r], 0.0).is_err());
        assert_eq!(Ensemble::new(vec![p2], 0.0).unwrap().weight(), 1.0);
    }

    #[test]
    fn flat_layout_round_trip() {
        let ens = Ensemble::new(
            vec![
                ParticleState {
                    theta: ParamPoint::new(vec![1.0], 2.0),
                    r: vec![3.0, 4.0],
                },
                ParticleState {
                    theta: ParamPoint::new(vec![5.0], 6.0),
                    r: vec![7.0, 8.0],
                },
            ],
            1.5,
        )
        .unwrap();
        assert_eq!(ens.flat_thetas(), vec![1.0, 2.0, 5.0, 6.0]);
        let back = Ensemble::from_flat(2, &ens.flat_thetas(), &ens.flat_velocities(), 1.5).unwrap();
        assert_eq!(back, ens);
        assert_eq!(ens.kinetic(), 0.5 * (0.5 * 25.0 + 0.5 * 113.0));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, 2.0]).is_err());
        let d = Dataset::new(vec![vec![1.0], vec![2.0]], vec![1.0, 3.0]).unwrap();
        assert_eq!(d.label_energy(), 5.0);
    }
}
