//! Uniform θ-grids and the quadratic objective restricted to grid densities.
//!
//! A grid density is represented by its cell masses `p_c = ρ(θ_c)·vol`. With
//! the feature matrix `Φ_cj = Ψ(θ_c)(x_j)` the network output of a grid density
//! is `ψ_j = Σ_c p_c Φ_cj`, so `U[ρ] + V` and `F_0` are evaluated through the
//! `m` residuals instead of a dense cells×cells kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{dot, Regularizer, UvKernels};
use crate::types::{check_dim, ParamPoint};
use crate::{Error, Result};

/// `count` cells of equal width covering `[min, max]`; cell `i` is centered at
/// `min + (i + ½)·h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) || count == 0 {
            return Err(Error::Config(format!(
                "grid axis needs finite min < max and count >= 1 (got [{min}, {max}] x {count})"
            )));
        }
        Ok(Axis { min, max, count })
    }

    pub fn symmetric(half_width: f64, count: usize) -> Result<Self> {
        Axis::new(-half_width, half_width, count)
    }

    pub fn h(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.h()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, or `None` outside `[min, max)`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.min && x < self.max) {
            return None;
        }
        let i = ((x - self.min) / self.h()) as usize;
        Some(i.min(self.count - 1))
    }
}

/// A rectangular grid in one or two θ-coordinates, cells in row-major order
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub axes: Vec<Axis>,
}

impl ThetaGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!(
                "theta grids have one or two axes (got {})",
                axes.len()
            )));
        }
        Ok(ThetaGrid { axes })
    }

    pub fn line(axis: Axis) -> Self {
        ThetaGrid { axes: vec![axis] }
    }

    pub fn plane(first: Axis, second: Axis) -> Self {
        ThetaGrid {
            axes: vec![first, second],
        }
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::h).product()
    }

    /// Center coordinates of cell `c`.
    pub fn coords(&self, c: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a.center(c)],
            [a, b] => vec![a.center(c / b.count), b.center(c % b.count)],
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        match (self.axes.as_slice(), x) {
            ([a], [x0]) => a.locate(*x0),
            ([a, b], [x0, x1]) => Some(a.locate(*x0)? * b.count + b.locate(*x1)?),
            _ => None,
        }
    }

    /// Embeds every cell center as network parameters.
    pub fn param_points(&self, embed: impl Fn(&[f64]) -> ParamPoint) -> Vec<ParamPoint> {
        (0..self.cells()).map(|c| embed(&self.coords(c))).collect()
    }
}

/// The first layer weight `a` varies along the grid, `b` is held at `b`.
pub fn embed_first_layer(b: f64) -> impl Fn(&[f64]) -> ParamPoint {
    move |c: &[f64]| ParamPoint::new(c.to_vec(), b)
}

/// Grid coordinates `(a, b)` for `d = 2`.
pub fn embed_plane(c: &[f64]) -> ParamPoint {
    ParamPoint::new(vec![c[0]], c[1])
}

/// The quadratic risk functional restricted to measures supported on grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridKernels {
    cells: usize,
    m: usize,
    /// `Φ_cj`, cell-major.
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl GridKernels {
    pub fn from_uv(uv: &UvKernels, points: &[ParamPoint]) -> Result<Self> {
        let m = uv.len();
        let rows: Vec<Vec<f64>> = points
            .par_iter()
            .map(|p| uv.features(p))
            .collect::<Result<_>>()?;
        Ok(GridKernels {
            cells: points.len(),
            m,
            features: rows.concat(),
            labels: uv.labels().to_vec(),
        })
    }

    /// `U ≡ 0`, `V ≡ 0`, `‖y‖ = 0`.
    pub fn zero(cells: usize) -> Self {
        GridKernels {
            cells,
            m: 0,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    /// Network output `ψ_j = Σ_c p_c Φ_cj`.
    pub fn outputs(&self, masses: &[f64]) -> Vec<f64> {
        let mut psi = vec![0.0; self.m];
        for (p, row) in masses.iter().zip(self.features.chunks_exact(self.m.max(1))) {
            if *p != 0.0 {
                for (o, f) in psi.iter_mut().zip(row) {
                    *o += p * f;
                }
            }
        }
        psi
    }

    /// `U[ρ](θ_c) + V(θ_c) = (1/m) Σ_j Φ_cj (ψ_j − y_j)`.
    pub fn first_variation(&self, masses: &[f64]) -> Vec<f64> {
        if self.m == 0 {
            return vec![0.0; self.cells];
        }
        let mut e = self.outputs(masses);
        for (o, y) in e.iter_mut().zip(&self.labels) {
            *o -= y;
        }
        let inv_m = 1.0 / self.m as f64;
        let row = |row: &[f64]| dot(row, &e) * inv_m;
        if crate::use_parallel(self.features.len()) {
            self.features.par_chunks_exact(self.m).map(row).collect()
        } else {
            self.features.chunks_exact(self.m).map(row).collect()
        }
    }

    /// `F_0 = ½U[ρ,ρ] + ⟨V,ρ⟩ + ½‖y‖² = (1/2m) Σ_j (ψ_j − y_j)²`.
    pub fn energy(&self, masses: &[f64]) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        let psi = self.outputs(masses);
        let s: f64 = psi
            .iter()
            .zip(&self.labels)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        0.5 * s / self.m as f64
    }

    /// Dense `U(θ_c, θ_k)`, for checks on small grids.
    pub fn dense_u(&self) -> Vec<f64> {
        let n = self.cells;
        let mut u = vec![0.0; n * n];
        if self.m == 0 {
            return u;
        }
        for c in 0..n {
            for k in 0..n {
                let a = &self.features[c * self.m..(c + 1) * self.m];
                let b = &self.features[k * self.m..(k + 1) * self.m];
                u[c * n + k] = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / self.m as f64;
            }
        }
        u
    }

    /// `V(θ_c)` for every cell.
    pub fn v_vector(&self) -> Vec<f64> {
        if self.m == 0 {
            return vec![0.0; self.cells];
        }
        self.features
            .chunks_exact(self.m)
            .map(|row| {
                -row.iter()
                    .zip(&self.labels)
                    .map(|(f, y)| f * y)
                    .sum::<f64>()
                    / self.m as f64
            })
            .collect()
    }

    pub fn half_label_energy(&self) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        0.5 * self.labels.iter().map(|y| y * y).sum::<f64>() / self.m as f64
    }
}

/// `F_λ(ρ) = F_0(ρ) + λ⟨g, ρ⟩` on a grid; `λ = 1` is the full objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GridObjective {
    pub kernels: GridKernels,
    /// `g(θ_c)` per cell.
    pub g: Vec<f64>,
}

impl GridObjective {
    pub fn new(kernels: GridKernels, g: Vec<f64>) -> Result<Self> {
        check_dim(kernels.cells(), g.len())?;
        Ok(GridObjective { kernels, g })
    }

    /// The network risk of a grid density plus the regularizer at the cell points.
    pub fn network(uv: &UvKernels, points: &[ParamPoint], reg: &Regularizer) -> Result<Self> {
        let kernels = GridKernels::from_uv(uv, points)?;
        let g = points.iter().map(|p| reg.value(&p.to_vec())).collect();
        GridObjective::new(kernels, g)
    }

    /// A linear functional `⟨f, ρ⟩`: no interaction, `g = f`.
    pub fn external(f: Vec<f64>) -> Self {
        GridObjective {
            kernels: GridKernels::zero(f.len()),
            g: f,
        }
    }

    pub fn cells(&self) -> usize {
        self.g.len()
    }

    /// `F'(ρ)(θ_c)` for every cell.
    pub fn first_variation(&self, masses: &[f64]) -> Vec<f64> {
        let mut out = self.kernels.first_variation(masses);
        for (o, g) in out.iter_mut().zip(&self.g) {
            *o += g;
        }
        out
    }

    pub fn value(&self, masses: &[f64], lambda: f64) -> f64 {
        self.kernels.energy(masses) + lambda * dot(&self.g, masses)
    }

    pub fn unregularized(&self, masses: &[f64]) -> f64 {
        self.kernels.energy(masses)
    }

    pub fn regularization(&self, masses: &[f64]) -> f64 {
        dot(&self.g, masses)
    }

    pub fn is_linear(&self) -> bool {
        self.kernels.samples() == 0
    }
}

/// Centered differences in the interior and second-order one-sided differences
/// at the ends; exact for quadratics.
pub fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => vec![(values[1] - values[0]) / h; 2],
        _ => {
            let mut out = vec![0.0; n];
            out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
            out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
            for i in 1..n - 1 {
                out[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_geometry() {
        let a = Axis::new(-1.0, 1.0, 4).unwrap();
        assert_eq!(a.h(), 0.5);
        assert_eq!(a.centers(), vec![-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(a.locate(-1.0), Some(0));
        assert_eq!(a.locate(0.99), Some(3));
        assert_eq!(a.locate(1.0), None);
        assert_eq!(a.locate(f64::NAN), None);
        assert!(Axis::new(1.0, 1.0, 3).is_err());
        assert!(Axis::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn plane_indexing() {
        let g = ThetaGrid::plane(
            Axis::new(0.0, 2.0, 2).unwrap(),
            Axis::new(0.0, 3.0, 3).unwrap(),
        );
        assert_eq!(g.cells(), 6);
        assert_eq!(g.coords(4), vec![1.5, 1.5]);
        assert_eq!(g.locate(&[1.2, 1.7]), Some(4));
        assert_eq!(g.locate(&[1.2]), None);
        assert!(ThetaGrid::new(vec![]).is_err());
    }

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let a = Axis::symmetric(3.0, 7).unwrap();
        let v: Vec<f64> = a.centers().iter().map(|t| 0.5 * t * t - t).collect();
        let d = derivative(&v, a.h());
        for (t, dv) in a.centers().iter().zip(&d) {
            assert!((dv - (t - 1.0)).abs() < 1e-12);
        }
    }
}
