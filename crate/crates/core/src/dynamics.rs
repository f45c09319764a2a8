//! Euler–Maruyama integrators for the particle system.
//!
//! All four methods share one explicit update. With `G_i = ∇F'(μⁿ)(θ_i)`
//! evaluated on the pre-step ensemble,
//!
//! ```text
//! θ' = θ + r·Δt
//! r' = r + (−G − γ_t·r)·Δt + sqrt(2γΔt/β)·ξ      (noise for SHB only)
//! ```
//!
//! with `γ_t = γ` for SHB/HB and `γ_t = γ / max(t, t_floor)` for AGD. Gradient
//! flow uses `θ' = θ − G·Δt` and keeps `r = 0`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Integrator, RunConfig};
use crate::data::init_ensemble;
use crate::diagnostics::knn_entropy_flat;
use crate::model::{NetworkPotential, Potential};
use crate::rng::{Domain, StreamFactory};
use crate::types::{check_dim, Dataset, Ensemble};
use crate::{Error, Result};

/// One row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub time: f64,
    /// Unregularized risk `F_0(μⁿ)`.
    pub risk: f64,
    /// Regularized objective `F(μⁿ)`.
    pub loss: f64,
    /// Mean kinetic energy `⟨|r|²/2⟩`.
    pub kinetic: f64,
    /// kNN estimate of the joint (θ, r) differential entropy.
    pub entropy_est: Option<f64>,
    /// `F + kinetic − entropy/β`, an estimate of the free energy.
    pub free_energy_est: Option<f64>,
}

/// Effective damping at time `t`.
pub fn damping(integrator: Integrator, gamma: f64, t: f64, t_floor: f64) -> f64 {
    match integrator {
        Integrator::Shb | Integrator::Hb => gamma,
        Integrator::Agd => gamma / t.max(t_floor),
        Integrator::Gf => 0.0,
    }
}

/// Particle positions and velocities in flat particle-major arrays, plus the
/// random-stream key of every particle.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    dim: usize,
    thetas: Vec<f64>,
    velocities: Vec<f64>,
    keys: Vec<u64>,
    time: f64,
    grads: Vec<f64>,
}

impl ParticleSystem {
    pub fn from_ensemble(ens: &Ensemble) -> Self {
        let n = ens.len();
        ParticleSystem {
            dim: ens.dim,
            thetas: ens.flat_thetas(),
            velocities: ens.flat_velocities(),
            keys: (0..n as u64).collect(),
            time: ens.time,
            grads: vec![0.0; n * ens.dim],
        }
    }

    /// Replaces the noise-stream keys (default: particle index).
    pub fn with_keys(mut self, keys: Vec<u64>) -> Result<Self> {
        check_dim(self.len(), keys.len())?;
        self.keys = keys;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn to_ensemble(&self) -> Ensemble {
        Ensemble::from_flat(self.dim, &self.thetas, &self.velocities, self.time)
            .expect("particle system keeps consistent shapes")
    }

    pub fn kinetic(&self) -> f64 {
        0.5 * self.velocities.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    /// Applies one step of `rule`; `step_index` selects the noise draws.
    pub fn step<P: Potential + ?Sized>(
        &mut self,
        pot: &mut P,
        rule: Integrator,
        cfg: &RunConfig,
        noise: &StreamFactory,
        step_index: u64,
    ) -> Result<()> {
        check_dim(self.dim, pot.dim())?;
        pot.gradients(&self.thetas, &mut self.grads);
        let d = self.dim;
        let dt = cfg.dt;
        let gamma_t = damping(rule, cfg.gamma, self.time, cfg.t_floor);
        let sigma = match rule {
            Integrator::Shb => (2.0 * cfg.gamma * dt / cfg.beta).sqrt(),
            _ => 0.0,
        };
        let update =
            |(((theta, r), g), &key): (((&mut [f64], &mut [f64]), &[f64]), &u64)| match rule {
                Integrator::Gf => {
                    for l in 0..d {
                        theta[l] -= g[l] * dt;
                        r[l] = 0.0;
                    }
                }
                _ => {
                    let mut rng = (sigma > 0.0).then(|| noise.at(key, step_index));
                    for l in 0..d {
                        let r0 = r[l];
                        theta[l] += r0 * dt;
                        let mut r1 = r0 + (-g[l] - gamma_t * r0) * dt;
                        if let Some(rng) = rng.as_mut() {
                            r1 += sigma * rng.sample::<f64, _>(StandardNormal);
                        }
                        r[l] = r1;
                    }
                }
            };
        if crate::use_parallel(self.thetas.len() * 16) {
            self.thetas
                .par_chunks_mut(d)
                .zip(self.velocities.par_chunks_mut(d))
                .zip(self.grads.par_chunks(d))
                .zip(self.keys.par_iter())
                .for_each(update);
        } else {
            self.thetas
                .chunks_mut(d)
                .zip(self.velocities.chunks_mut(d))
                .zip(self.grads.chunks(d))
                .zip(self.keys.iter())
                .for_each(update);
        }
        self.time += dt;
        let bad = self
            .thetas
            .chunks_exact(d)
            .zip(self.velocities.chunks_exact(d))
            .position(|(t, r)| !t.iter().chain(r).all(|x| x.is_finite()));
        if let Some(particle) = bad {
            return Err(Error::NonFinite {
                step: step_index + 1,
                particle,
                dt,
            });
        }
        Ok(())
    }
}

/// One step of `rule` applied to an ensemble under an arbitrary potential.
pub fn step_with<P: Potential + ?Sized>(
    ens: &Ensemble,
    pot: &mut P,
    rule: Integrator,
    cfg: &RunConfig,
    step_index: u64,
) -> Result<Ensemble> {
    let mut sys = ParticleSystem::from_ensemble(ens);
    let noise = StreamFactory::new(cfg.seed, Domain::Noise);
    sys.step(pot, rule, cfg, &noise, step_index)?;
    Ok(sys.to_ensemble())
}

fn network_step(
    ens: &Ensemble,
    data: &Dataset,
    cfg: &RunConfig,
    rule: Integrator,
    step_index: u64,
) -> Result<Ensemble> {
    let mut pot = NetworkPotential::new(data, cfg.activation, cfg.regularizer)?;
    step_with(ens, &mut pot, rule, cfg, step_index)
}

/// Stochastic heavy ball step.
pub fn shb_step(
    ens: &Ensemble,
    data: &Dataset,
    cfg: &RunConfig,
    step_index: u64,
) -> Result<Ensemble> {
    network_step(ens, data, cfg, Integrator::Shb, step_index)
}

/// Heavy ball step (no noise).
pub fn hb_step(
    ens: &Ensemble,
    data: &Dataset,
    cfg: &RunConfig,
    step_index: u64,
) -> Result<Ensemble> {
    network_step(ens, data, cfg, Integrator::Hb, step_index)
}

/// Heavy ball step with damping `γ / max(t, t_floor)`.
pub fn agd_step(
    ens: &Ensemble,
    data: &Dataset,
    cfg: &RunConfig,
    step_index: u64,
) -> Result<Ensemble> {
    network_step(ens, data, cfg, Integrator::Agd, step_index)
}

/// Explicit Euler step of gradient flow.
pub fn gf_step(
    ens: &Ensemble,
    data: &Dataset,
    cfg: &RunConfig,
    step_index: u64,
) -> Result<Ensemble> {
    network_step(ens, data, cfg, Integrator::Gf, step_index)
}

/// A running simulation: configuration, potential, particle state and step counter.
pub struct Simulation<P: Potential> {
    cfg: RunConfig,
    pot: P,
    system: ParticleSystem,
    noise: StreamFactory,
    steps_done: u64,
}

impl Simulation<NetworkPotential> {
    /// Draws the initial ensemble from `cfg` and builds the network potential.
    pub fn new(cfg: &RunConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        check_dim(cfg.d - 1, data.feature_dim())?;
        let pot = NetworkPotential::new(data, cfg.activation, cfg.regularizer)?;
        let ens = init_ensemble(cfg)?;
        Simulation::with_potential(cfg, pot, &ens)
    }
}

impl<P: Potential> Simulation<P> {
    pub fn with_potential(cfg: &RunConfig, pot: P, ens: &Ensemble) -> Result<Self> {
        check_dim(pot.dim(), ens.dim)?;
        Ok(Simulation {
            cfg: cfg.clone(),
            pot,
            system: ParticleSystem::from_ensemble(ens),
            noise: StreamFactory::new(cfg.seed, Domain::Noise),
            steps_done: 0,
        })
    }

    pub fn advance(&mut self) -> Result<()> {
        let rule = self.cfg.integrator;
        self.system
            .step(&mut self.pot, rule, &self.cfg, &self.noise, self.steps_done)?;
        self.steps_done += 1;
        Ok(())
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn system(&self) -> &ParticleSystem {
        &self.system
    }

    pub fn potential_mut(&mut self) -> &mut P {
        &mut self.pot
    }

    pub fn ensemble(&self) -> Ensemble {
        self.system.to_ensemble()
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Evaluates the record for the current state without changing it.
    pub fn record(&mut self) -> TrajectoryRecord {
        let obj = self.pot.objective(&self.system.thetas);
        let kinetic = self.system.kinetic();
        let loss = obj.loss();
        let (entropy_est, free_energy_est) = if self.cfg.diagnostics {
            match joint_entropy(&self.system) {
                Some(h) => (Some(h), Some(loss + kinetic - h / self.cfg.beta)),
                None => (None, None),
            }
        } else {
            (None, None)
        };
        TrajectoryRecord {
            step: self.steps_done,
            time: self.system.time,
            risk: obj.risk,
            loss,
            kinetic,
            entropy_est,
            free_energy_est,
        }
    }

    /// Runs until `cfg.steps` steps are done, recording at step 0, every
    /// `record_every` steps and at the final step.
    pub fn run(&mut self) -> Result<Vec<TrajectoryRecord>> {
        let total = self.cfg.steps;
        let every = self.cfg.record_every;
        let mut records = vec![self.record()];
        while self.steps_done < total {
            self.advance()?;
            if self.steps_done.is_multiple_of(every) || self.steps_done == total {
                records.push(self.record());
            }
        }
        Ok(records)
    }
}

fn joint_entropy(sys: &ParticleSystem) -> Option<f64> {
    let d = sys.dim;
    let n = sys.len();
    if n < 5 {
        return None;
    }
    let mut joint = Vec::with_capacity(2 * d * n);
    for (t, r) in sys
        .thetas
        .chunks_exact(d)
        .zip(sys.velocities.chunks_exact(d))
    {
        joint.extend_from_slice(t);
        joint.extend_from_slice(r);
    }
    knn_entropy_flat(&joint, 2 * d, 3).ok()
}

/// Initializes from `cfg`, integrates `cfg.steps` steps and returns the final
/// ensemble with the recorded trajectory.
pub fn run_trajectory(
    cfg: &RunConfig,
    data: &Dataset,
) -> Result<(Ensemble, Vec<TrajectoryRecord>)> {
    let mut sim = Simulation::new(cfg, data)?;
    let records = sim.run()?;
    Ok((sim.ensemble(), records))
}
