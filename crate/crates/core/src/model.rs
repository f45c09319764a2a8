//! Two-layer network `ψ(x) = (1/n) Σ_i b_i s(⟨a_i, x⟩)`, its quadratic risk
//! and the mean-field potential `F'(μ)(θ) = (1/m) Σ_j e_j Ψ(θ)(x_j) + g(θ)`,
//! where `e = ψ − y` is the residual over the training sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::types::{check_dim, Dataset, Ensemble, ParamPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        self.eval_with_derivative(z).1
    }

    #[inline]
    pub fn eval_with_derivative(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The confining term `g` added to the risk.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Regularizer {
    #[default]
    None,
    /// `c·sqrt(|θ|² + eps²)`, a differentiable stand-in for `c|θ|`.
    SmoothedNorm {
        c: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// `c|θ|²/2`.
    Quadratic { c: f64 },
}

fn default_eps() -> f64 {
    1e-3
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::SmoothedNorm { c, eps } => {
                if !(c >= 0.0 && c.is_finite() && eps > 0.0 && eps.is_finite()) {
                    return Err(Error::Config(format!(
                        "SmoothedNorm needs c >= 0 and eps > 0 (got c = {c}, eps = {eps})"
                    )));
                }
                Ok(())
            }
            Regularizer::Quadratic { c } => {
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(Error::Config(format!("Quadratic needs c >= 0 (got {c})")));
                }
                Ok(())
            }
        }
    }

    /// Value of `g` at a flattened θ.
    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::SmoothedNorm { c, eps } => c * (sq_norm(theta) + eps * eps).sqrt(),
            Regularizer::Quadratic { c } => 0.5 * c * sq_norm(theta),
        }
    }

    /// Adds `∇g(θ)` into `grad` and returns `g(θ)`.
    pub fn accumulate_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::SmoothedNorm { c, eps } => {
                let norm = (sq_norm(theta) + eps * eps).sqrt();
                let k = c / norm;
                for (g, t) in grad.iter_mut().zip(theta) {
                    *g += k * t;
                }
                c * norm
            }
            Regularizer::Quadratic { c } => {
                for (g, t) in grad.iter_mut().zip(theta) {
                    *g += c * t;
                }
                0.5 * c * sq_norm(theta)
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Regularizer::None)
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `Ψ(θ)(x) = b·s(⟨a, x⟩)`.
pub fn basis_eval(theta: &ParamPoint, x: &[f64], act: Activation) -> Result<f64> {
    check_dim(theta.a.len(), x.len())?;
    Ok(theta.b * act.eval(dot(&theta.a, x)))
}

/// Mean of [`basis_eval`] over the given neurons.
pub fn network_output(thetas: &[ParamPoint], x: &[f64], act: Activation) -> Result<f64> {
    if thetas.is_empty() {
        return Err(Error::Config("network needs at least one neuron".into()));
    }
    let mut sum = 0.0;
    for t in thetas {
        sum += basis_eval(t, x, act)?;
    }
    Ok(sum / thetas.len() as f64)
}

/// `R = (1/2m) Σ_j (ψ(x_j) − y_j)²`.
pub fn risk(ens: &Ensemble, data: &Dataset, act: Activation) -> Result<f64> {
    let mut pot = NetworkPotential::new(data, act, Regularizer::None)?;
    check_dim(pot.dim(), ens.dim)?;
    Ok(pot.objective(&ens.flat_thetas()).risk)
}

pub fn regularizer_value_grad(theta: &ParamPoint, reg: &Regularizer) -> (f64, Vec<f64>) {
    let flat = theta.to_vec();
    let mut grad = vec![0.0; flat.len()];
    let value = reg.accumulate_grad(&flat, &mut grad);
    (value, grad)
}

/// `∇F'(μⁿ)(θ_i)` for every particle, i.e. `n` times the gradient of the
/// scalar training loss in that particle's parameters.
pub fn interaction_gradient(
    ens: &Ensemble,
    data: &Dataset,
    act: Activation,
    reg: &Regularizer,
) -> Result<Vec<Vec<f64>>> {
    let mut pot = NetworkPotential::new(data, act, *reg)?;
    check_dim(pot.dim(), ens.dim)?;
    let thetas = ens.flat_thetas();
    let mut grads = vec![0.0; thetas.len()];
    pot.gradients(&thetas, &mut grads);
    Ok(grads.chunks_exact(ens.dim).map(<[f64]>::to_vec).collect())
}

/// `F'(μⁿ)(θ)` at each of `points`.
pub fn potential_field(
    ens: &Ensemble,
    data: &Dataset,
    points: &[ParamPoint],
    act: Activation,
    reg: &Regularizer,
) -> Result<Vec<f64>> {
    let mut pot = NetworkPotential::new(data, act, *reg)?;
    check_dim(pot.dim(), ens.dim)?;
    for p in points {
        check_dim(ens.dim, p.dim())?;
    }
    let residuals = pot.residuals(&ens.flat_thetas());
    let flat: Vec<f64> = points.iter().flat_map(|p| p.to_vec()).collect();
    Ok(pot.field_at(&residuals, &flat))
}

/// Quadratic decomposition `F_0(μ) = ½U[μ,μ] + ⟨V,μ⟩ + ½‖y‖²` over the
/// empirical data measure.
#[derive(Debug, Clone)]
pub struct UvKernels {
    data: Dataset,
    act: Activation,
}

pub fn uv_kernels(data: &Dataset, act: Activation) -> Result<UvKernels> {
    data.validate()?;
    Ok(UvKernels {
        data: data.clone(),
        act,
    })
}

impl UvKernels {
    /// Features `Ψ(θ)(x_j)` for every sample.
    pub fn features(&self, theta: &ParamPoint) -> Result<Vec<f64>> {
        self.data
            .features
            .iter()
            .map(|x| basis_eval(theta, x, self.act))
            .collect()
    }

    /// `U(θ, θ̃) = E_x[Ψ(θ)(x) Ψ(θ̃)(x)]`.
    pub fn u(&self, theta: &ParamPoint, other: &ParamPoint) -> Result<f64> {
        let f = self.features(theta)?;
        let g = self.features(other)?;
        Ok(dot(&f, &g) / self.data.len() as f64)
    }

    /// `V(θ) = −E[y Ψ(θ)(x)]`.
    pub fn v(&self, theta: &ParamPoint) -> Result<f64> {
        let f = self.features(theta)?;
        Ok(-dot(&f, &self.data.labels) / self.data.len() as f64)
    }

    /// `½‖y‖²`.
    pub fn half_label_energy(&self) -> f64 {
        0.5 * self.data.label_energy()
    }

    pub fn labels(&self) -> &[f64] {
        &self.data.labels
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Risk and regularization of a particle configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Unregularized risk `F_0`.
    pub risk: f64,
    /// `⟨g, μⁿ⟩`.
    pub regularization: f64,
}

impl Objective {
    pub fn loss(&self) -> f64 {
        self.risk + self.regularization
    }
}

/// A potential `F` on measures over `R^d`, evaluated on particle configurations
/// stored particle-major in flat arrays (`d` entries per particle).
pub trait Potential: Send {
    fn dim(&self) -> usize;

    /// Writes `∇F'(μⁿ)(θ_i)` for every particle into `grads`.
    fn gradients(&mut self, thetas: &[f64], grads: &mut [f64]);

    fn objective(&mut self, thetas: &[f64]) -> Objective;
}

/// `F(μ) = ⟨c|θ|²/2, μ⟩`: independent particles in a harmonic well.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicPotential {
    pub dim: usize,
    pub curvature: f64,
}

impl Potential for HarmonicPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradients(&mut self, thetas: &[f64], grads: &mut [f64]) {
        for (g, t) in grads.iter_mut().zip(thetas) {
            *g = self.curvature * t;
        }
    }

    fn objective(&mut self, thetas: &[f64]) -> Objective {
        let n = (thetas.len() / self.dim).max(1) as f64;
        Objective {
            risk: 0.0,
            regularization: 0.5 * self.curvature * sq_norm(thetas) / n,
        }
    }
}

/// Particles per work unit in the residual pass. Partial sums are formed per
/// chunk and combined in chunk order, so the result does not depend on how
/// rayon schedules the chunks.
const CHUNK: usize = 16;
/// Particles processed together inside a chunk.
const BLOCK: usize = 4;

/// The mean-field potential of a two-layer network on a fixed data sample.
///
/// Features are stored transposed (`(d−1) × m`) so that the pre-activations of
/// one neuron over all samples are built by contiguous axpy updates.
#[derive(Debug, Clone)]
pub struct NetworkPotential {
    dim: usize,
    m: usize,
    xt: Vec<f64>,
    labels: Vec<f64>,
    act: Activation,
    reg: Regularizer,
    /// `s(z_ij)` and `s'(z_ij)` from the last residual pass, particle-major.
    act_cache: Vec<f64>,
    deriv_cache: Vec<f64>,
}

impl NetworkPotential {
    pub fn new(data: &Dataset, act: Activation, reg: Regularizer) -> Result<Self> {
        data.validate()?;
        let m = data.len();
        let k = data.feature_dim();
        let mut xt = vec![0.0; k * m];
        for (j, x) in data.features.iter().enumerate() {
            for (c, v) in x.iter().enumerate() {
                xt[c * m + j] = *v;
            }
        }
        Ok(NetworkPotential {
            dim: k + 1,
            m,
            xt,
            labels: data.labels.clone(),
            act,
            reg,
            act_cache: Vec::new(),
            deriv_cache: Vec::new(),
        })
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    /// Pre-activations `⟨a, x_j⟩` for all samples.
    fn preactivations(&self, a: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        for (c, &w) in a.iter().enumerate() {
            let row = &self.xt[c * self.m..(c + 1) * self.m];
            for (zj, xj) in z.iter_mut().zip(row) {
                *zj += w * xj;
            }
        }
    }

    /// Network outputs at the samples, filling the activation caches.
    fn forward(&mut self, thetas: &[f64], keep_cache: bool) -> Vec<f64> {
        let (d, m) = (self.dim, self.m);
        let n = thetas.len() / d;
        let mut acts = std::mem::take(&mut self.act_cache);
        let mut derivs = std::mem::take(&mut self.deriv_cache);
        let this = &*self;
        let par = crate::use_parallel(n * m * d);
        let partials: Vec<Vec<f64>> = if keep_cache {
            acts.resize(n * m, 0.0);
            derivs.resize(n * m, 0.0);
            let work = |((ts, sa), sd): ((&[f64], &mut [f64]), &mut [f64])| {
                this.forward_chunk(ts, Some((sa, sd)))
            };
            if par {
                thetas
                    .par_chunks(CHUNK * d)
                    .zip(acts.par_chunks_mut(CHUNK * m))
                    .zip(derivs.par_chunks_mut(CHUNK * m))
                    .map(work)
                    .collect()
            } else {
                thetas
                    .chunks(CHUNK * d)
                    .zip(acts.chunks_mut(CHUNK * m))
                    .zip(derivs.chunks_mut(CHUNK * m))
                    .map(work)
                    .collect()
            }
        } else if par {
            thetas
                .par_chunks(CHUNK * d)
                .map(|ts| this.forward_chunk(ts, None))
                .collect()
        } else {
            thetas
                .chunks(CHUNK * d)
                .map(|ts| this.forward_chunk(ts, None))
                .collect()
        };
        self.act_cache = acts;
        self.deriv_cache = derivs;
        let mut out = vec![0.0; m];
        for p in &partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        let inv_n = 1.0 / n as f64;
        for o in &mut out {
            *o *= inv_n;
        }
        out
    }

    fn forward_chunk(
        &self,
        thetas: &[f64],
        mut cache: Option<(&mut [f64], &mut [f64])>,
    ) -> Vec<f64> {
        let (d, m) = (self.dim, self.m);
        let mut acc = vec![0.0; m];
        let mut z = vec![0.0; BLOCK * m];
        for (bi, block) in thetas.chunks(BLOCK * d).enumerate() {
            let np = block.len() / d;
            self.preactivations_block(block, &mut z[..np * m]);
            for p in 0..np {
                let b = block[p * d + d - 1];
                let zp = &z[p * m..(p + 1) * m];
                let i = bi * BLOCK + p;
                match cache.as_mut() {
                    Some((sa, sd)) => {
                        let sa = &mut sa[i * m..(i + 1) * m];
                        let sd = &mut sd[i * m..(i + 1) * m];
                        for j in 0..m {
                            let (s, ds) = self.act.eval_with_derivative(zp[j]);
                            sa[j] = s;
                            sd[j] = ds;
                            acc[j] += b * s;
                        }
                    }
                    None => {
                        for j in 0..m {
                            acc[j] += b * self.act.eval(zp[j]);
                        }
                    }
                }
            }
        }
        acc
    }

    /// Pre-activations of up to [`BLOCK`] consecutive particles. Full blocks
    /// share each feature row across four accumulating streams; the per-entry
    /// summation order matches [`Self::preactivations`].
    fn preactivations_block(&self, block: &[f64], z: &mut [f64]) {
        let (d, m) = (self.dim, self.m);
        let np = block.len() / d;
        if np != BLOCK {
            for p in 0..np {
                self.preactivations(&block[p * d..p * d + d - 1], &mut z[p * m..(p + 1) * m]);
            }
            return;
        }
        z.fill(0.0);
        let (z0, rest) = z.split_at_mut(m);
        let (z1, rest) = rest.split_at_mut(m);
        let (z2, z3) = rest.split_at_mut(m);
        for c in 0..d - 1 {
            let row = &self.xt[c * m..(c + 1) * m];
            let (w0, w1, w2, w3) = (block[c], block[d + c], block[2 * d + c], block[3 * d + c]);
            for j in 0..m {
                let x = row[j];
                z0[j] += w0 * x;
                z1[j] += w1 * x;
                z2[j] += w2 * x;
                z3[j] += w3 * x;
            }
        }
    }

    /// Residuals `ψ(x_j) − y_j`.
    pub fn residuals(&mut self, thetas: &[f64]) -> Vec<f64> {
        let mut out = self.forward(thetas, false);
        for (o, y) in out.iter_mut().zip(&self.labels) {
            *o -= y;
        }
        out
    }

    /// `F'(μ)(θ)` at flattened points given the residuals of `μ`.
    pub fn field_at(&self, residuals: &[f64], points: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let inv_m = 1.0 / self.m as f64;
        points
            .par_chunks(d)
            .map_init(
                || vec![0.0; self.m],
                |z, t| {
                    self.preactivations(&t[..d - 1], z);
                    let mut s = 0.0;
                    for (zj, e) in z.iter().zip(residuals) {
                        s += e * self.act.eval(*zj);
                    }
                    t[d - 1] * s * inv_m + self.reg.value(t)
                },
            )
            .collect()
    }
}

impl Potential for NetworkPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradients(&mut self, thetas: &[f64], grads: &mut [f64]) {
        let (d, m) = (self.dim, self.m);
        let mut e = self.forward(thetas, true);
        for (o, y) in e.iter_mut().zip(&self.labels) {
            *o -= y;
        }
        let inv_m = 1.0 / m as f64;
        let this = &*self;
        let block = |w: &mut Vec<f64>, (bi, (g, t)): (usize, (&mut [f64], &[f64]))| {
            let np = t.len() / d;
            let first = bi * BLOCK;
            let sa = &this.act_cache[first * m..(first + np) * m];
            let sd = &this.deriv_cache[first * m..(first + np) * m];
            for (wj, (dsj, ej)) in w.iter_mut().zip(sd.iter().zip(e.iter().cycle())) {
                *wj = ej * dsj;
            }
            for c in 0..d - 1 {
                let row = &this.xt[c * m..(c + 1) * m];
                if np == BLOCK {
                    let s = dot4(&w[..BLOCK * m], m, row);
                    for p in 0..BLOCK {
                        g[p * d + c] = t[p * d + d - 1] * s[p] * inv_m;
                    }
                } else {
                    for p in 0..np {
                        g[p * d + c] = t[p * d + d - 1] * dot(&w[p * m..(p + 1) * m], row) * inv_m;
                    }
                }
            }
            for p in 0..np {
                g[p * d + d - 1] = dot(&e, &sa[p * m..(p + 1) * m]) * inv_m;
                this.reg
                    .accumulate_grad(&t[p * d..(p + 1) * d], &mut g[p * d..(p + 1) * d]);
            }
        };
        if crate::use_parallel(thetas.len() * m) {
            grads
                .par_chunks_mut(BLOCK * d)
                .zip(thetas.par_chunks(BLOCK * d))
                .enumerate()
                .for_each_init(|| vec![0.0; BLOCK * m], block);
        } else {
            let mut w = vec![0.0; BLOCK * m];
            grads
                .chunks_mut(BLOCK * d)
                .zip(thetas.chunks(BLOCK * d))
                .enumerate()
                .for_each(|item| block(&mut w, item));
        }
    }

    fn objective(&mut self, thetas: &[f64]) -> Objective {
        let e = self.residuals(thetas);
        let risk = 0.5 * sq_norm(&e) / self.m as f64;
        let n = thetas.len() / self.dim;
        let regularization = if self.reg.is_none() {
            0.0
        } else {
            thetas
                .chunks_exact(self.dim)
                .map(|t| self.reg.value(t))
                .sum::<f64>()
                / n as f64
        };
        Objective {
            risk,
            regularization,
        }
    }
}

/// Dot product with four independent accumulators; the summation order is
/// fixed, so results are reproducible across runs and thread counts.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four dot products of consecutive length-`m` rows of `w` with `x`, each
/// bitwise equal to [`dot`].
#[inline]
fn dot4(w: &[f64], m: usize, x: &[f64]) -> [f64; 4] {
    let (w0, rest) = w.split_at(m);
    let (w1, rest) = rest.split_at(m);
    let (w2, w3) = rest.split_at(m);
    let x = &x[..m];
    let mut acc = [[0.0f64; 4]; 4];
    let full = m / 4 * 4;
    let mut j = 0;
    while j < full {
        for l in 0..4 {
            let xv = x[j + l];
            acc[0][l] += w0[j + l] * xv;
            acc[1][l] += w1[j + l] * xv;
            acc[2][l] += w2[j + l] * xv;
            acc[3][l] += w3[j + l] * xv;
        }
        j += 4;
    }
    let mut out = [0.0; 4];
    for (p, wp) in [w0, w1, w2, w3].iter().enumerate() {
        let mut tail = 0.0;
        for k in full..m {
            tail += wp[k] * x[k];
        }
        out[p] = (acc[p][0] + acc[p][1]) + (acc[p][2] + acc[p][3]) + tail;
    }
    out
}
