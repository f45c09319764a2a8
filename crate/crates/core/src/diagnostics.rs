//! Estimators evaluated on particle ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::run_trajectory;
use crate::model::Potential;
use crate::types::{check_dim, Dataset, Ensemble};
use crate::{Error, Result, RunConfig};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const DISTANCE_FLOOR: f64 = 1e-12;

/// `ψ(n)` for a positive integer `n`.
pub fn digamma_int(n: usize) -> f64 {
    assert!(n > 0, "digamma is undefined at 0");
    -EULER_GAMMA + (1..n).map(|j| 1.0 / j as f64).sum::<f64>()
}

/// Log-volume of the Euclidean unit ball in `R^dim`.
pub fn log_unit_ball_volume(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    // ln Γ(dim/2 + 1) from Γ(x+1) = xΓ(x), Γ(1) = 1, Γ(1/2) = √π.
    let ln_gamma = if dim.is_multiple_of(2) {
        (1..=dim / 2).map(|j| (j as f64).ln()).sum::<f64>()
    } else {
        0.5 * std::f64::consts::PI.ln()
            + (1..=dim.div_ceil(2))
                .map(|j| (j as f64 - 0.5).ln())
                .sum::<f64>()
    };
    half * std::f64::consts::PI.ln() - ln_gamma
}

/// Kozachenko–Leonenko estimate of the differential entropy `−∫ρ log ρ`.
///
/// Note the sign: this is the entropy, the negative of `⟨log ρ, ρ⟩`.
pub fn knn_entropy(samples: &[Vec<f64>], k: usize) -> Result<f64> {
    let dim = samples.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        check_dim(dim, s.len())?;
        flat.extend_from_slice(s);
    }
    knn_entropy_flat(&flat, dim, k)
}

/// [`knn_entropy`] on points stored row-major in a flat array.
pub fn knn_entropy_flat(points: &[f64], dim: usize, k: usize) -> Result<f64> {
    if dim == 0 || k == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Config(
            "knn_entropy needs dim >= 1 and k >= 1".into(),
        ));
    }
    let n = points.len() / dim;
    if n <= k {
        return Err(Error::Config(format!(
            "knn_entropy needs more than {k} samples (got {n})"
        )));
    }
    let mut logs: Vec<f64> = kth_neighbor_distances(points, dim, k)
        .into_iter()
        .map(|e| e.max(DISTANCE_FLOOR).ln())
        .collect();
    // Summing in sorted order makes the estimate exactly invariant under
    // permutations of the input.
    logs.sort_by(f64::total_cmp);
    let mean_log = logs.iter().sum::<f64>() / n as f64;
    Ok(digamma_int(n) - digamma_int(k) + log_unit_ball_volume(dim) + dim as f64 * mean_log)
}

/// Euclidean distance from every point to its `k`-th nearest other point.
///
/// Points are swept in order of their first coordinate; the scan in each
/// direction stops once the coordinate gap alone exceeds the current `k`-th
/// best distance.
pub fn kth_neighbor_distances(points: &[f64], dim: usize, k: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| points[i * dim].total_cmp(&points[j * dim]).then(i.cmp(&j)));
    let keys: Vec<f64> = order.iter().map(|&i| points[i * dim]).collect();
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut out = vec![0.0; n];
    let results: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|pos| {
            let i = order[pos];
            let xi = point(i);
            // `best` holds the k smallest squared distances, sorted ascending.
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let consider = |j: usize, best: &mut Vec<f64>| {
                let xj = point(j);
                let mut d2 = 0.0;
                for (a, b) in xi.iter().zip(xj) {
                    d2 += (a - b) * (a - b);
                }
                if best.len() < k || d2 < best[k - 1] {
                    let at = best.partition_point(|&v| v <= d2);
                    best.insert(at, d2);
                    best.truncate(k);
                }
            };
            let (mut lo, mut hi) = (pos, pos + 1);
            let (mut lo_open, mut hi_open) = (pos > 0, hi < n);
            while lo_open || hi_open {
                let bound = if best.len() == k {
                    best[k - 1]
                } else {
                    f64::INFINITY
                };
                if lo_open {
                    let gap = keys[pos] - keys[lo - 1];
                    if gap * gap > bound {
                        lo_open = false;
                    } else {
                        lo -= 1;
                        consider(order[lo], &mut best);
                        lo_open = lo > 0;
                    }
                }
                let bound = if best.len() == k {
                    best[k - 1]
                } else {
                    f64::INFINITY
                };
                if hi_open {
                    let gap = keys[hi] - keys[pos];
                    if gap * gap > bound {
                        hi_open = false;
                    } else {
                        consider(order[hi], &mut best);
                        hi += 1;
                        hi_open = hi < n;
                    }
                }
            }
            (i, best[k - 1].sqrt())
        })
        .collect();
    for (i, e) in results {
        out[i] = e;
    }
    out
}

/// Estimate of the free energy `F(μⁿ) + ⟨|r|²/2⟩ − β⁻¹·H(θ, r)` with `H`
/// the kNN entropy of the joint positions and velocities.
pub fn particle_free_energy<P: Potential + ?Sized>(
    ens: &Ensemble,
    pot: &mut P,
    beta: f64,
) -> Result<f64> {
    check_dim(pot.dim(), ens.dim)?;
    let loss = pot.objective(&ens.flat_thetas()).loss();
    let kinetic = ens.kinetic();
    if beta.is_infinite() {
        return Ok(loss + kinetic);
    }
    let d = ens.dim;
    let mut joint = Vec::with_capacity(2 * d * ens.len());
    for p in &ens.particles {
        joint.extend_from_slice(&p.theta.a);
        joint.push(p.theta.b);
        joint.extend_from_slice(&p.r);
    }
    let h = knn_entropy_flat(&joint, 2 * d, 3)?;
    Ok(loss + kinetic - h / beta)
}

/// Gaps between the velocity sample and `N(0, β⁻¹I)`: the Euclidean norm of
/// the sample mean and the largest entry of `|Cov − β⁻¹I|`.
pub fn velocity_stationarity(ens: &Ensemble, beta: f64) -> (f64, f64) {
    let d = ens.dim;
    let n = ens.len() as f64;
    let mut mean = vec![0.0; d];
    for p in &ens.particles {
        for (m, v) in mean.iter_mut().zip(&p.r) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for p in &ens.particles {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (p.r[a] - mean[a]) * (p.r[b] - mean[b]) / n;
            }
        }
    }
    let target = beta.recip();
    let mut cov_gap: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            let t = if a == b { target } else { 0.0 };
            cov_gap = cov_gap.max((cov[a * d + b] - t).abs());
        }
    }
    let mean_gap = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    (mean_gap, cov_gap)
}

/// Standard errors of the two [`velocity_stationarity`] gaps when the `n`
/// velocities are exact draws from `N(0, β⁻¹I_d)`: `sqrt(d/(βn))` for the
/// mean norm and `sqrt(2/n)/β` for a diagonal covariance entry.
pub fn velocity_mc_errors(n: usize, d: usize, beta: f64) -> (f64, f64) {
    let n = n as f64;
    ((d as f64 / (beta * n)).sqrt(), (2.0 / n).sqrt() / beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    /// Largest |Pearson correlation| over all (θ coordinate, r coordinate) pairs.
    pub max_abs_corr: f64,
    /// Set when some coordinate had zero variance; such pairs are skipped.
    pub degenerate: bool,
}

pub fn theta_r_independence(ens: &Ensemble) -> IndependenceReport {
    let d = ens.dim;
    let n = ens.len() as f64;
    let thetas = ens.flat_thetas();
    let rs = ens.flat_velocities();
    let moments = |v: &[f64], c: usize| {
        let mean = v.iter().skip(c).step_by(d).sum::<f64>() / n;
        let var = v
            .iter()
            .skip(c)
            .step_by(d)
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n;
        (mean, var)
    };
    let mut report = IndependenceReport {
        max_abs_corr: 0.0,
        degenerate: false,
    };
    for a in 0..d {
        let (mt, vt) = moments(&thetas, a);
        for b in 0..d {
            let (mr, vr) = moments(&rs, b);
            if vt <= 0.0 || vr <= 0.0 {
                report.degenerate = true;
                continue;
            }
            let cov = thetas
                .iter()
                .skip(a)
                .step_by(d)
                .zip(rs.iter().skip(b).step_by(d))
                .map(|(t, r)| (t - mt) * (r - mr))
                .sum::<f64>()
                / n;
            let corr = (cov / (vt * vr).sqrt()).abs().min(1.0);
            report.max_abs_corr = report.max_abs_corr.max(corr);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTable {
    pub n_values: Vec<usize>,
    /// Times of the recorded points shared by all curves.
    pub times: Vec<f64>,
    /// Seed-averaged loss at each recorded time, one curve per width.
    pub mean_curves: Vec<Vec<f64>>,
    /// `(n_k, n_{k+1}, sup_t |curve_k(t) − curve_{k+1}(t)|)` for successive widths.
    pub pair_diffs: Vec<(usize, usize, f64)>,
}

/// Runs every `(n, seed)` cell and compares seed-averaged loss curves
/// between successive widths.
pub fn consistency_sweep(
    base: &RunConfig,
    data: &Dataset,
    n_values: &[usize],
    seeds: &[u64],
) -> Result<ConsistencyTable> {
    if n_values.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "consistency sweep needs widths and seeds".into(),
        ));
    }
    let cells: Vec<(usize, u64)> = n_values
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let curves: Vec<Vec<(f64, f64)>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let cfg = RunConfig {
                n,
                seed,
                ..base.clone()
            };
            let (_, records) = run_trajectory(&cfg, data)?;
            Ok(records.iter().map(|r| (r.time, r.loss)).collect())
        })
        .collect::<Result<_>>()?;
    let times: Vec<f64> = curves[0].iter().map(|p| p.0).collect();
    let mut mean_curves = Vec::with_capacity(n_values.len());
    for block in curves.chunks(seeds.len()) {
        let mut mean = vec![0.0; times.len()];
        for curve in block {
            for (m, (_, l)) in mean.iter_mut().zip(curve) {
                *m += l / seeds.len() as f64;
            }
        }
        mean_curves.push(mean);
    }
    let pair_diffs = n_values
        .windows(2)
        .zip(mean_curves.windows(2))
        .map(|(ns, cs)| {
            let sup = cs[0]
                .iter()
                .zip(&cs[1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (ns[0], ns[1], sup)
        })
        .collect();
    Ok(ConsistencyTable {
        n_values: n_values.to_vec(),
        times,
        mean_curves,
        pair_diffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_function_values() {
        assert!((digamma_int(1) + EULER_GAMMA).abs() < 1e-15);
        assert!((digamma_int(2) - (1.0 - EULER_GAMMA)).abs() < 1e-15);
        assert!((digamma_int(10) - 2.251_752_589_066_721).abs() < 1e-13);
        // Unit ball volumes: 2, π, 4π/3, π²/2, 8π²/15.
        let pi = std::f64::consts::PI;
        for (dim, v) in [
            (1, 2.0),
            (2, pi),
            (3, 4.0 * pi / 3.0),
            (4, pi * pi / 2.0),
            (5, 8.0 * pi * pi / 15.0),
        ] {
            assert!(
                (log_unit_ball_volume(dim) - f64::ln(v)).abs() < 1e-13,
                "dim {dim}"
            );
        }
    }

    #[test]
    fn neighbor_search_matches_brute_force() {
        let pts: Vec<f64> = (0..300)
            .map(|i| ((i * 7919) % 101) as f64 * 0.37 + (i % 3) as f64)
            .collect();
        for dim in [1, 2, 3] {
            let n = pts.len() / dim;
            let fast = kth_neighbor_distances(&pts[..n * dim], dim, 3);
            for i in 0..n {
                let mut ds: Vec<f64> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        (0..dim)
                            .map(|c| (pts[i * dim + c] - pts[j * dim + c]).powi(2))
                            .sum::<f64>()
                    })
                    .collect();
                ds.sort_by(f64::total_cmp);
                assert_eq!(fast[i], ds[2].sqrt());
            }
        }
    }

    #[test]
    fn entropy_rejects_tiny_samples() {
        assert!(knn_entropy(&[vec![0.0], vec![1.0], vec![2.0]], 3).is_err());
        assert!(knn_entropy(&[vec![0.0], vec![1.0, 2.0]], 1).is_err());
    }

    #[test]
    fn duplicates_use_the_distance_floor() {
        let pts = vec![vec![1.0, 1.0]; 10];
        let h = knn_entropy(&pts, 3).unwrap();
        assert!(h.is_finite());
    }

    #[test]
    fn zero_velocities() {
        use crate::types::{ParamPoint, ParticleState};
        let ens = Ensemble::new(
            (0..4)
                .map(|i| ParticleState {
                    theta: ParamPoint::new(vec![i as f64], 1.0),
                    r: vec![0.0, 0.0],
                })
                .collect(),
            0.0,
        )
        .unwrap();
        let (m, c) = velocity_stationarity(&ens, 4.0);
        assert_eq!(m, 0.0);
        assert_eq!(c, 0.25);
        let rep = theta_r_independence(&ens);
        assert!(rep.degenerate);
        assert_eq!(rep.max_abs_corr, 0.0);
    }
}
