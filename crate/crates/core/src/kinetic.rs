//! Finite-volume solver for the kinetic Fokker–Planck equation in one
//! position and one velocity dimension,
//!
//! ```text
//! ∂_t ρ = −∂_θ(r ρ) − ∂_r((F − γ r) ρ) + (γ/β) ∂_rr ρ,     F = −∂_θ F'(ρ^θ),
//! ```
//!
//! with zero-flux walls, together with the free energy
//! `ℰ(ρ) = F(ρ^θ) + ⟨r²/2, ρ⟩ + β⁻¹⟨log ρ, ρ⟩` and its dissipation
//! `γ⟨|r + β⁻¹∂_r log ρ|², ρ⟩`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{derivative, Axis, GridObjective};
use crate::types::check_dim;
use crate::{Error, Result};

/// Values below this are treated as empty in entropy and log-derivative sums.
const LOG_FLOOR: f64 = 1e-300;
/// Allowed undershoot below zero after a step.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub n_theta: usize,
    pub n_r: usize,
}

impl PhaseGrid {
    pub fn new(theta: Axis, r: Axis) -> Self {
        PhaseGrid {
            theta_min: theta.min,
            theta_max: theta.max,
            r_min: r.min,
            r_max: r.max,
            n_theta: theta.count,
            n_r: r.count,
        }
    }

    /// `[−θ_max, θ_max] × [−r_max, r_max]`.
    pub fn symmetric(theta_max: f64, r_max: f64, n_theta: usize, n_r: usize) -> Result<Self> {
        Ok(PhaseGrid::new(
            Axis::symmetric(theta_max, n_theta)?,
            Axis::symmetric(r_max, n_r)?,
        ))
    }

    pub fn theta_axis(&self) -> Axis {
        Axis {
            min: self.theta_min,
            max: self.theta_max,
            count: self.n_theta,
        }
    }

    pub fn r_axis(&self) -> Axis {
        Axis {
            min: self.r_min,
            max: self.r_max,
            count: self.n_r,
        }
    }

    pub fn h_theta(&self) -> f64 {
        self.theta_axis().h()
    }

    pub fn h_r(&self) -> f64 {
        self.r_axis().h()
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.theta_axis().center(i)
    }

    pub fn r(&self, j: usize) -> f64 {
        self.r_axis().center(j)
    }

    pub fn cell_area(&self) -> f64 {
        self.h_theta() * self.h_r()
    }

    pub fn cells(&self) -> usize {
        self.n_theta * self.n_r
    }

    pub fn validate(&self) -> Result<()> {
        Axis::new(self.theta_min, self.theta_max, self.n_theta)?;
        Axis::new(self.r_min, self.r_max, self.n_r)?;
        Ok(())
    }
}

/// Cell values of a phase-space density, θ-major (`values[i·n_r + j]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: PhaseGrid,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: PhaseGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        check_dim(grid.cells(), values.len())?;
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NegativeDensity { min: *v });
        }
        Ok(GridDensity { grid, values })
    }

    /// Samples `f` at cell centers and normalizes to unit mass.
    pub fn from_fn(grid: PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.cells());
        for i in 0..grid.n_theta {
            for j in 0..grid.n_r {
                values.push(f(grid.theta(i), grid.r(j)));
            }
        }
        let mut rho = GridDensity::new(grid, values)?;
        rho.normalize()?;
        Ok(rho)
    }

    /// `∝ exp(−β(V(θ_i) + r_j²/2))`, normalized on the grid.
    pub fn gibbs(grid: PhaseGrid, potential: &[f64], beta: f64) -> Result<Self> {
        check_dim(grid.n_theta, potential.len())?;
        let vmin = potential.iter().copied().fold(f64::INFINITY, f64::min);
        let rs: Vec<f64> = (0..grid.n_r).map(|j| grid.r(j)).collect();
        let rmin = rs.iter().map(|r| r * r).fold(f64::INFINITY, f64::min);
        let mut values = Vec::with_capacity(grid.cells());
        for v in potential {
            for r in &rs {
                values.push((-beta * ((v - vmin) + 0.5 * (r * r - rmin))).exp());
            }
        }
        let mut rho = GridDensity::new(grid, values)?;
        rho.normalize()?;
        Ok(rho)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::PartitionUnderflow(mass));
        }
        for v in &mut self.values {
            *v /= mass;
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mass of each θ-cell, `Σ_j ρ_ij·hθ·hr`.
    pub fn theta_masses(&self) -> Vec<f64> {
        let area = self.grid.cell_area();
        self.values
            .chunks_exact(self.grid.n_r)
            .map(|row| row.iter().sum::<f64>() * area)
            .collect()
    }

    /// θ-marginal density per cell.
    pub fn theta_marginal(&self) -> Vec<f64> {
        let h = self.grid.h_theta();
        self.theta_masses().into_iter().map(|p| p / h).collect()
    }

    /// r-marginal density per cell.
    pub fn r_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_r];
        for row in self.values.chunks_exact(self.grid.n_r) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let h = self.grid.h_theta();
        out.iter_mut().for_each(|o| *o *= h);
        out
    }

    /// `∫|ρ − σ|` by midpoint quadrature.
    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_area()
    }

    /// `⟨log ρ, ρ⟩` with `0·log 0 = 0`.
    pub fn neg_entropy(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| **v > LOG_FLOOR)
            .map(|v| v * v.ln())
            .sum::<f64>()
            * self.grid.cell_area()
    }

    /// `⟨r²/2, ρ⟩`.
    pub fn kinetic(&self) -> f64 {
        let r2: Vec<f64> = (0..self.grid.n_r)
            .map(|j| 0.5 * self.grid.r(j).powi(2))
            .collect();
        self.values
            .chunks_exact(self.grid.n_r)
            .map(|row| row.iter().zip(&r2).map(|(v, k)| v * k).sum::<f64>())
            .sum::<f64>()
            * self.grid.cell_area()
    }
}

/// Reconstruction of cell-interface values for the transport terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Transport {
    /// First-order donor cell.
    Upwind,
    /// Piecewise-linear reconstruction with van Leer limited slopes.
    #[default]
    Limited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpParams {
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    #[serde(default)]
    pub transport: Transport,
}

/// `0.4·min(hθ/max|r|, hr/max|F − γr|, hr²/(2γ/β))`.
pub fn cfl_limit(grid: &PhaseGrid, force: &[f64], gamma: f64, beta: f64) -> f64 {
    let (max_r, max_a, diff) = speeds(grid, force, gamma, beta);
    let mut limit = f64::INFINITY;
    if max_r > 0.0 {
        limit = limit.min(grid.h_theta() / max_r);
    }
    if max_a > 0.0 {
        limit = limit.min(grid.h_r() / max_a);
    }
    if diff > 0.0 {
        limit = limit.min(grid.h_r().powi(2) / (2.0 * diff));
    }
    0.4 * limit
}

/// Largest step for which the update is a convex combination of old values,
/// which guarantees positivity; the limited scheme needs twice the margin on
/// the transport terms.
pub fn positivity_limit(
    grid: &PhaseGrid,
    force: &[f64],
    gamma: f64,
    beta: f64,
    transport: Transport,
) -> f64 {
    let (max_r, max_a, diff) = speeds(grid, force, gamma, beta);
    let k = match transport {
        Transport::Upwind => 1.0,
        Transport::Limited => 2.0,
    };
    let rate = k * (max_r / grid.h_theta() + max_a / grid.h_r()) + 2.0 * diff / grid.h_r().powi(2);
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// A step size satisfying both [`cfl_limit`] and [`positivity_limit`] with margin.
pub fn stable_dt(
    grid: &PhaseGrid,
    force: &[f64],
    gamma: f64,
    beta: f64,
    transport: Transport,
) -> f64 {
    cfl_limit(grid, force, gamma, beta)
        .min(0.9 * positivity_limit(grid, force, gamma, beta, transport))
}

fn speeds(grid: &PhaseGrid, force: &[f64], gamma: f64, beta: f64) -> (f64, f64, f64) {
    let max_r = grid.r_min.abs().max(grid.r_max.abs());
    let max_f = force.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    (max_r, max_f + gamma * max_r, gamma / beta)
}

/// One explicit step with the default transport.
pub fn fp_step(
    rho: &GridDensity,
    force: &[f64],
    gamma: f64,
    beta: f64,
    dt: f64,
) -> Result<GridDensity> {
    fp_step_with(
        rho,
        force,
        &FpParams {
            gamma,
            beta,
            dt,
            transport: Transport::default(),
        },
    )
}

/// One explicit step: transport in θ with speed `r`, transport in `r` with
/// acceleration `F − γr` taken at the cell faces, centered diffusion in `r`.
/// Walls carry no flux, so mass changes only by rounding.
pub fn fp_step_with(rho: &GridDensity, force: &[f64], p: &FpParams) -> Result<GridDensity> {
    let g = &rho.grid;
    check_dim(g.n_theta, force.len())?;
    let limit = cfl_limit(g, force, p.gamma, p.beta);
    if !(p.dt > 0.0) || p.dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: p.dt, limit });
    }
    let (nt, nr) = (g.n_theta, g.n_r);
    let (ht, hr) = (g.h_theta(), g.h_r());
    let diff = p.gamma / p.beta;
    let rs: Vec<f64> = (0..nr).map(|j| g.r(j)).collect();
    let r_faces: Vec<f64> = (1..nr).map(|j| g.r_min + j as f64 * hr).collect();
    let v = &rho.values;
    let at = |i: usize, j: usize| v[i * nr + j];

    let theta_slopes = match p.transport {
        Transport::Upwind => None,
        Transport::Limited => Some(slopes_theta(v, nt, nr)),
    };
    let mut out = vec![0.0; nt * nr];
    let update_row = |(i, row): (usize, &mut [f64])| {
        let mut r_slopes = vec![0.0; nr];
        if p.transport == Transport::Limited {
            for j in 1..nr.saturating_sub(1) {
                r_slopes[j] = van_leer(at(i, j) - at(i, j - 1), at(i, j + 1) - at(i, j));
            }
        }
        let face_theta = |left: usize, j: usize| -> f64 {
            // Flux through the face between θ-cells `left` and `left + 1`.
            let r = rs[j];
            let (up, s) = if r > 0.0 {
                (left, 0.5)
            } else {
                (left + 1, -0.5)
            };
            let slope = theta_slopes.as_ref().map_or(0.0, |sl| sl[up * nr + j]);
            r * (at(up, j) + s * slope)
        };
        let face_r = |j: usize| -> f64 {
            // Flux through the face between r-cells `j` and `j + 1`.
            let a = force[i] - p.gamma * r_faces[j];
            let (up, s) = if a > 0.0 { (j, 0.5) } else { (j + 1, -0.5) };
            a * (at(i, up) + s * r_slopes[up]) - diff * (at(i, j + 1) - at(i, j)) / hr
        };
        for j in 0..nr {
            let west = if i > 0 { face_theta(i - 1, j) } else { 0.0 };
            let east = if i + 1 < nt { face_theta(i, j) } else { 0.0 };
            let south = if j > 0 { face_r(j - 1) } else { 0.0 };
            let north = if j + 1 < nr { face_r(j) } else { 0.0 };
            row[j] = at(i, j) - p.dt * ((east - west) / ht + (north - south) / hr);
        }
    };
    if crate::use_parallel(nt * nr * 8) {
        out.par_chunks_mut(nr).enumerate().for_each(update_row);
    } else {
        out.chunks_mut(nr).enumerate().for_each(update_row);
    }
    let min = out.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVITY_TOLERANCE || !min.is_finite() {
        return Err(Error::NegativeDensity { min });
    }
    for x in &mut out {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok(GridDensity {
        grid: *g,
        values: out,
    })
}

fn slopes_theta(v: &[f64], nt: usize, nr: usize) -> Vec<f64> {
    let mut s = vec![0.0; nt * nr];
    for i in 1..nt.saturating_sub(1) {
        for j in 0..nr {
            let c = v[i * nr + j];
            s[i * nr + j] = van_leer(c - v[(i - 1) * nr + j], v[(i + 1) * nr + j] - c);
        }
    }
    s
}

/// Harmonic-mean slope; zero at extrema.
#[inline]
fn van_leer(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// `−∂_θ F'(ρ^θ)` per θ-cell.
pub fn nonlinear_force(rho: &GridDensity, objective: &GridObjective) -> Result<Vec<f64>> {
    check_dim(rho.grid.n_theta, objective.cells())?;
    let fv = objective.first_variation(&rho.theta_masses());
    Ok(derivative(&fv, rho.grid.h_theta())
        .into_iter()
        .map(|x| -x)
        .collect())
}

/// `ℰ(ρ) = F(ρ^θ) + ⟨r²/2, ρ⟩ + β⁻¹⟨log ρ, ρ⟩`.
pub fn grid_free_energy(rho: &GridDensity, objective: &GridObjective, beta: f64) -> f64 {
    objective.value(&rho.theta_masses(), 1.0) + rho.kinetic() + rho.neg_entropy() / beta
}

/// `γ⟨|r + β⁻¹∂_r log ρ|², ρ⟩` with centered differences on interior r-cells.
pub fn grid_dissipation(rho: &GridDensity, beta: f64, gamma: f64) -> f64 {
    let g = &rho.grid;
    let (nr, hr) = (g.n_r, g.h_r());
    let row_sum = |row: &[f64]| {
        let mut s = 0.0;
        for j in 1..nr.saturating_sub(1) {
            let (lo, c, hi) = (row[j - 1], row[j], row[j + 1]);
            if lo > LOG_FLOOR && c > LOG_FLOOR && hi > LOG_FLOOR {
                let w = g.r(j) + (hi.ln() - lo.ln()) / (2.0 * hr * beta);
                s += c * w * w;
            }
        }
        s
    };
    // Row sums are combined in row order on both paths.
    let rows: Vec<f64> = if crate::use_parallel(rho.values.len() * 32) {
        rho.values.par_chunks_exact(nr).map(row_sum).collect()
    } else {
        rho.values.chunks_exact(nr).map(row_sum).collect()
    };
    let total: f64 = rows.iter().sum();
    gamma * total * g.cell_area()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductGap {
    /// `∫|ρ^r − N_β|` against the Gaussian renormalized on the r-axis.
    pub r_marginal_l1: f64,
    /// Largest `∫|ρ(r|θ) − ρ^r|` over θ-cells with mass above the floor.
    pub independence: f64,
}

/// Distance of `ρ` from the product of its θ-marginal and `exp(−βr²/2)`.
///
/// θ-cells carrying less than `mass_floor` are skipped, since their
/// conditional velocity law is determined by rounding.
pub fn check_product_form(rho: &GridDensity, beta: f64, mass_floor: f64) -> ProductGap {
    let g = &rho.grid;
    let (nr, hr) = (g.n_r, g.h_r());
    let mut gauss: Vec<f64> = (0..nr)
        .map(|j| (-0.5 * beta * g.r(j).powi(2)).exp())
        .collect();
    let z = gauss.iter().sum::<f64>() * hr;
    gauss.iter_mut().for_each(|x| *x /= z);
    let marginal = rho.r_marginal();
    let r_marginal_l1 = marginal
        .iter()
        .zip(&gauss)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * hr;
    let masses = rho.theta_masses();
    let independence = rho
        .values
        .chunks_exact(nr)
        .zip(&masses)
        .filter(|(_, m)| **m > mass_floor && **m > 0.0)
        .map(|(row, _)| {
            let row_mass = row.iter().sum::<f64>() * hr;
            row.iter()
                .zip(&marginal)
                .map(|(v, m)| (v / row_mass - m).abs())
                .sum::<f64>()
                * hr
        })
        .fold(0.0, f64::max);
    ProductGap {
        r_marginal_l1,
        independence,
    }
}

/// `C(α) = ∫∫ (1 + αg + αr²/2)·exp(−1 − αg − αr²/2)` by the grid quadrature.
pub fn lower_bound_constant(grid: &PhaseGrid, g: &[f64], alpha: f64) -> f64 {
    let mut total = 0.0;
    for gi in g {
        for j in 0..grid.n_r {
            let phi = alpha * (gi + 0.5 * grid.r(j).powi(2));
            total += (1.0 + phi) * (-1.0 - phi).exp();
        }
    }
    total * grid.cell_area()
}

/// `F_0(ρ) + (1 − α/β)⟨g, ρ⟩ − C(α)/β`, a lower bound on `ℰ(ρ)` when `g ≥ 0`.
pub fn free_energy_lower_bound(
    rho: &GridDensity,
    objective: &GridObjective,
    beta: f64,
    alpha: f64,
) -> f64 {
    let masses = rho.theta_masses();
    objective.unregularized(&masses) + (1.0 - alpha / beta) * objective.regularization(&masses)
        - lower_bound_constant(&rho.grid, &objective.g, alpha) / beta
}

/// Where the force comes from during [`evolve`].
#[derive(Debug, Clone, Copy)]
pub enum ForceModel<'a> {
    /// A fixed force per θ-cell.
    Fixed(&'a [f64]),
    /// Recomputed from the current θ-marginal every step.
    SelfConsistent(&'a GridObjective),
}

/// Runs `steps` steps, calling `observe(k, ρ_k)` before the first and after each step.
pub fn evolve(
    mut rho: GridDensity,
    model: ForceModel<'_>,
    params: &FpParams,
    steps: u64,
    mut observe: impl FnMut(u64, &GridDensity),
) -> Result<GridDensity> {
    observe(0, &rho);
    for k in 1..=steps {
        rho = match model {
            ForceModel::Fixed(f) => fp_step_with(&rho, f, params)?,
            ForceModel::SelfConsistent(obj) => {
                let f = nonlinear_force(&rho, obj)?;
                fp_step_with(&rho, &f, params)?
            }
        };
        observe(k, &rho);
    }
    Ok(rho)
}
