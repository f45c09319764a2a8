//! The self-consistent Boltzmann operator `T(ρ) = exp(−βF'(ρ)) / Z(ρ)` on
//! θ-grids, its damped fixed-point iteration, and comparisons with particle
//! ensembles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridObjective, ThetaGrid};
use crate::model::{potential_field, uv_kernels, Activation, Regularizer};
use crate::rng::{Domain, StreamFactory};
use crate::types::{check_dim, Dataset, Ensemble, ParamPoint};
use crate::{Error, Result};

/// A density on a θ-grid, normalized so that `Σ_c ρ_c·vol = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDensity {
    pub grid: ThetaGrid,
    pub values: Vec<f64>,
}

impl ThetaDensity {
    /// Normalizes nonnegative `values` to unit mass.
    pub fn new(grid: ThetaGrid, values: Vec<f64>) -> Result<Self> {
        check_dim(grid.cells(), values.len())?;
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NegativeDensity { min: *v });
        }
        let z = values.iter().sum::<f64>() * grid.cell_volume();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::PartitionUnderflow(z));
        }
        let values = values.into_iter().map(|v| v / z).collect();
        Ok(ThetaDensity { grid, values })
    }

    pub fn uniform(grid: ThetaGrid) -> Self {
        let v = 1.0 / (grid.cells() as f64 * grid.cell_volume());
        ThetaDensity {
            values: vec![v; grid.cells()],
            grid,
        }
    }

    /// Isotropic Gaussian bump restricted to the grid.
    pub fn gaussian(grid: ThetaGrid, center: &[f64], sd: f64) -> Result<Self> {
        check_dim(grid.ndim(), center.len())?;
        let values = (0..grid.cells())
            .map(|c| {
                let d2: f64 = grid
                    .coords(c)
                    .iter()
                    .zip(center)
                    .map(|(x, m)| (x - m).powi(2))
                    .sum();
                (-0.5 * d2 / (sd * sd)).exp()
            })
            .collect();
        ThetaDensity::new(grid, values)
    }

    /// `Z⁻¹ exp(−β V)` with the maximum exponent subtracted before exponentiating.
    pub fn gibbs(grid: ThetaGrid, potential: &[f64], beta: f64) -> Result<Self> {
        check_dim(grid.cells(), potential.len())?;
        let vmin = potential.iter().copied().fold(f64::INFINITY, f64::min);
        let values = potential
            .iter()
            .map(|v| (-beta * (v - vmin)).exp())
            .collect();
        ThetaDensity::new(grid, values)
    }

    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l1_distance(&self, other: &ThetaDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    /// `⟨log ρ, ρ⟩` with `0·log 0 = 0`.
    pub fn neg_entropy(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| v * v.ln())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    /// Draws `n` points: a cell by inverse CDF, then uniformly inside it.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let masses = self.masses();
        let mut cdf = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        let streams = StreamFactory::new(seed, Domain::Auxiliary);
        (0..n)
            .map(|k| {
                let mut rng = streams.at(k as u64, 0);
                let u: f64 = rng.random::<f64>() * acc;
                let c = cdf.partition_point(|&x| x <= u).min(masses.len() - 1);
                self.grid
                    .coords(c)
                    .iter()
                    .zip(&self.grid.axes)
                    .map(|(x, a)| x + (rng.random::<f64>() - 0.5) * a.h())
                    .collect()
            })
            .collect()
    }
}

fn check_grid(rho: &ThetaDensity, objective: &GridObjective) -> Result<()> {
    check_dim(rho.grid.cells(), objective.cells())
}

/// `T(ρ) = exp(−βF'(ρ)) / Z(ρ)`.
pub fn apply_t(rho: &ThetaDensity, objective: &GridObjective, beta: f64) -> Result<ThetaDensity> {
    check_grid(rho, objective)?;
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive (got {beta})")));
    }
    let fv = objective.first_variation(&rho.masses());
    ThetaDensity::gibbs(rho.grid.clone(), &fv, beta)
}

/// Discrete free energy `F(ρ) + β⁻¹⟨log ρ, ρ⟩`, minimized by the fixed point.
pub fn grid_free_energy(rho: &ThetaDensity, objective: &GridObjective, beta: f64) -> f64 {
    objective.value(&rho.masses(), 1.0) + rho.neg_entropy() / beta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Initial mixing weight `η` of `ρ ← (1−η)ρ + ηT(ρ)`.
    pub damping: f64,
    /// Stop once `‖T(ρ) − ρ‖_1 < tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub density: ThetaDensity,
    /// Number of mixing updates applied.
    pub iterations: usize,
    /// `‖T(ρ) − ρ‖_1` at the returned density.
    pub residual: f64,
    pub converged: bool,
}

/// Damped iteration `ρ ← (1−η)ρ + ηT(ρ)`.
///
/// `T(ρ) − ρ` is a descent direction of the discrete free energy, so whenever
/// the full step `η` would increase it, `η` is halved for that update. With
/// convex `F` this makes the iteration monotone; for a linear `F` the first
/// update lands on the fixed point.
pub fn solve_fixed_point(
    init: &ThetaDensity,
    objective: &GridObjective,
    beta: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPoint> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Config(format!(
            "damping must lie in (0, 1] (got {})",
            opts.damping
        )));
    }
    let mut rho = ThetaDensity::new(init.grid.clone(), init.values.clone())?;
    let mut energy = grid_free_energy(&rho, objective, beta);
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iter {
        let t = apply_t(&rho, objective, beta)?;
        residual = rho.l1_distance(&t);
        if residual < opts.tol {
            return Ok(FixedPoint {
                density: rho,
                iterations: it,
                residual,
                converged: true,
            });
        }
        let mut eta = opts.damping;
        loop {
            let values = rho
                .values
                .iter()
                .zip(&t.values)
                .map(|(a, b)| (1.0 - eta) * a + eta * b)
                .collect();
            let candidate = ThetaDensity::new(rho.grid.clone(), values)?;
            let e = grid_free_energy(&candidate, objective, beta);
            if e <= energy || eta < 1e-6 {
                rho = candidate;
                energy = e;
                break;
            }
            eta *= 0.5;
        }
    }
    Ok(FixedPoint {
        density: rho,
        iterations: opts.max_iter,
        residual,
        converged: false,
    })
}

/// `F_λ(ρ) = ½U[ρ,ρ] + ⟨V,ρ⟩ + ½‖y‖² + λ⟨g,ρ⟩`.
pub fn f_lambda(rho: &ThetaDensity, objective: &GridObjective, lambda: f64) -> Result<f64> {
    check_grid(rho, objective)?;
    Ok(objective.value(&rho.masses(), lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMinimum {
    /// Minimizing cell masses.
    pub masses: Vec<f64>,
    pub value: f64,
    /// Frank–Wolfe gap `⟨∇F, p⟩ − min_c ∇F_c`, an upper bound on `value − inf F`.
    pub certificate: f64,
    pub iterations: usize,
}

/// Minimizes the convex `F` over probability vectors on the grid cells with
/// accelerated projected gradient (restarted when the objective rises).
pub fn grid_infimum(objective: &GridObjective, tol: f64, max_iter: usize) -> GridMinimum {
    let n = objective.cells();
    let lipschitz = curvature_bound(objective);
    let step = 1.0 / lipschitz.max(1e-12);
    let grad = |p: &[f64]| objective.first_variation(p);
    let mut x = vec![1.0 / n as f64; n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = objective.value(&x, 1.0);
    let mut iterations = 0;
    let mut certificate = f64::INFINITY;
    for it in 0..max_iter {
        iterations = it + 1;
        let gy = grad(&y);
        let mut z: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - step * g).collect();
        project_simplex(&mut z);
        let fz = objective.value(&z, 1.0);
        if fz > fx {
            // Momentum overshot: restart from the last iterate.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let k = (t - 1.0) / t_next;
        y = z.iter().zip(&x).map(|(a, b)| a + k * (a - b)).collect();
        x = z;
        fx = fz;
        t = t_next;
        if it % 50 == 0 {
            certificate = frank_wolfe_gap(&x, &grad(&x));
            if certificate < tol {
                break;
            }
        }
    }
    certificate = certificate.min(frank_wolfe_gap(&x, &grad(&x)));
    GridMinimum {
        masses: x,
        value: fx,
        certificate,
        iterations,
    }
}

fn frank_wolfe_gap(p: &[f64], grad: &[f64]) -> f64 {
    let inner: f64 = p.iter().zip(grad).map(|(a, b)| a * b).sum();
    let min = grad.iter().copied().fold(f64::INFINITY, f64::min);
    inner - min
}

/// Largest eigenvalue of the mass-space Hessian `U_ck` by power iteration.
fn curvature_bound(objective: &GridObjective) -> f64 {
    let n = objective.cells();
    if objective.is_linear() {
        return 1.0;
    }
    let base = objective.kernels.first_variation(&vec![0.0; n]);
    let hess = |v: &[f64]| -> Vec<f64> {
        let w = objective.kernels.first_variation(v);
        w.iter().zip(&base).map(|(a, b)| a - b).collect()
    };
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = hess(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    1.05 * lambda
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalComparison {
    /// `−βF'(μⁿ)(θ_c)` per cell.
    pub field: Vec<f64>,
    /// Cell masses of the normalized `exp(−βF'(μⁿ))`.
    pub boltzmann: Vec<f64>,
    /// Fraction of particles in each cell.
    pub hist: Vec<f64>,
    /// Fraction of particles outside the grid.
    pub overflow: f64,
    /// `Σ_c |boltzmann_c − hist_c|`.
    pub l1_gap: f64,
}

/// Compares the particle θ-histogram with the Boltzmann density of the
/// ensemble's own potential on a grid over `(a, b)` (`d = 2`).
pub fn compare_empirical(
    ens: &Ensemble,
    data: &Dataset,
    act: Activation,
    reg: &Regularizer,
    beta: f64,
    grid: &ThetaGrid,
) -> Result<EmpiricalComparison> {
    if ens.dim != 2 || grid.ndim() != 2 {
        return Err(Error::Config(
            "empirical comparison needs d = 2 and a 2-d grid".into(),
        ));
    }
    let points: Vec<ParamPoint> = grid.param_points(crate::grid::embed_plane);
    let potential = potential_field(ens, data, &points, act, reg)?;
    let field: Vec<f64> = potential.iter().map(|v| -beta * v).collect();
    let boltzmann = ThetaDensity::gibbs(grid.clone(), &potential, beta)?.masses();
    let mut hist = vec![0.0; grid.cells()];
    let w = ens.weight();
    let mut overflow = 0.0;
    for p in &ens.particles {
        match grid.locate(&[p.theta.a[0], p.theta.b]) {
            Some(c) => hist[c] += w,
            None => overflow += w,
        }
    }
    let l1_gap = boltzmann
        .iter()
        .zip(&hist)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(EmpiricalComparison {
        field,
        boltzmann,
        hist,
        overflow,
        l1_gap,
    })
}

/// The grid objective of a dataset with the network evaluated at the cell points.
pub fn network_objective(
    data: &Dataset,
    act: Activation,
    reg: &Regularizer,
    points: &[ParamPoint],
) -> Result<GridObjective> {
    GridObjective::network(&uv_kernels(data, act)?, points, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.2, 0.9];
        project_simplex(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((v[0] - 0.3).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - 0.7).abs() < 1e-12);
        let mut u = vec![0.25; 4];
        project_simplex(&mut u);
        assert_eq!(u, vec![0.25; 4]);
    }

    #[test]
    fn density_constructors() {
        let g = ThetaGrid::line(Axis::symmetric(2.0, 8).unwrap());
        assert!((ThetaDensity::uniform(g.clone()).mass() - 1.0).abs() < 1e-15);
        assert!(ThetaDensity::new(g.clone(), vec![0.0; 8]).is_err());
        assert!(ThetaDensity::new(g.clone(), vec![-1.0; 8]).is_err());
        let s = ThetaDensity::gaussian(g, &[0.5], 0.3)
            .unwrap()
            .sample(100, 1);
        assert!(s.iter().all(|x| x[0] >= -2.0 && x[0] < 2.0));
    }

    #[test]
    fn infimum_of_linear_objective_is_the_smallest_cell() {
        let obj = GridObjective::external(vec![3.0, 1.0, 2.0, 5.0]);
        let min = grid_infimum(&obj, 1e-12, 10_000);
        assert!((min.value - 1.0).abs() < 1e-9);
        assert!(min.certificate < 1e-9);
    }
}
