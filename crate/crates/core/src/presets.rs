//! Desk-scale experiment presets.
//!
//! Every preset has a parameter struct whose `Default` is the shipped
//! configuration. Parameters are read from a tree (TOML/JSON file plus
//! `key=value` overrides); missing keys take their defaults, unknown keys are
//! rejected. A preset returns an in-memory report and, given an output
//! directory, writes its tables together with `meta.json` holding the fully
//! resolved parameters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::boltzmann::{
    compare_empirical, f_lambda, grid_infimum, network_objective, solve_fixed_point,
    FixedPointOptions, ThetaDensity,
};
use crate::config::{apply_override, from_tree, read_tree, Integrator, RunConfig};
use crate::data::sample_dataset;
use crate::diagnostics::{
    consistency_sweep, theta_r_independence, velocity_mc_errors, velocity_stationarity,
    ConsistencyTable, IndependenceReport,
};
use crate::dynamics::{run_trajectory, Simulation, TrajectoryRecord};
use crate::grid::{embed_first_layer, embed_plane, Axis, GridObjective, ThetaGrid};
use crate::io::{self, num, Meta};
use crate::kinetic::{
    check_product_form, evolve, grid_dissipation, grid_free_energy, stable_dt, ForceModel,
    FpParams, GridDensity, PhaseGrid, ProductGap, Transport,
};
use crate::model::{potential_field, Activation, Regularizer};
use crate::types::{Dataset, Ensemble};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    WidthSweep,
    StationaryMarginals,
    PotentialEvolution,
    LinearFp,
    BoltzmannFixedPoint,
    Consistency,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::WidthSweep,
        Preset::StationaryMarginals,
        Preset::PotentialEvolution,
        Preset::LinearFp,
        Preset::BoltzmannFixedPoint,
        Preset::Consistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::WidthSweep => "width_sweep",
            Preset::StationaryMarginals => "stationary_marginals",
            Preset::PotentialEvolution => "potential_evolution",
            Preset::LinearFp => "linear_fp",
            Preset::BoltzmannFixedPoint => "boltzmann_fixed_point",
            Preset::Consistency => "consistency",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::WidthSweep => {
                "final loss against width n for SHB, HB and AGD (teacher/student, d=20)"
            }
            Preset::StationaryMarginals => {
                "SHB particle marginals against the Boltzmann field of their own potential (d=2)"
            }
            Preset::PotentialEvolution => {
                "snapshots of the interaction potential F'(μⁿ) during SHB training (d=2)"
            }
            Preset::LinearFp => {
                "kinetic Fokker-Planck relaxation to the Gibbs product for f = θ²/2"
            }
            Preset::BoltzmannFixedPoint => {
                "self-consistent Boltzmann fixed point, its PDE counterpart and the β-sweep"
            }
            Preset::Consistency => "seed-averaged loss curves for growing n",
        }
    }

    /// The default parameters as a tree.
    pub fn default_params(self) -> Value {
        let v = match self {
            Preset::WidthSweep => serde_json::to_value(WidthSweepParams::default()),
            Preset::StationaryMarginals => serde_json::to_value(StationaryParams::default()),
            Preset::PotentialEvolution => serde_json::to_value(EvolutionParams::default()),
            Preset::LinearFp => serde_json::to_value(LinearFpParams::default()),
            Preset::BoltzmannFixedPoint => serde_json::to_value(BoltzmannParams::default()),
            Preset::Consistency => serde_json::to_value(ConsistencyParams::default()),
        };
        v.expect("parameter structs serialize")
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Builds the parameter tree of `preset`: its defaults, then the file (a
/// `meta.json` contributes its `config` member), then the overrides. Nested
/// tables are merged key by key, so `grid.count=[64,64]` keeps the grid bounds.
pub fn load_params(preset: Preset, path: Option<&Path>, overrides: &[String]) -> Result<Value> {
    let mut tree = preset.default_params();
    if let Some(p) = path {
        let mut file = read_tree(p)?;
        let file = match file.get_mut("config") {
            Some(inner) => inner.take(),
            None => file,
        };
        merge(&mut tree, file);
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    Ok(tree)
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Output of a preset run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Report {
    WidthSweep(WidthSweepReport),
    StationaryMarginals(StationaryReport),
    PotentialEvolution(EvolutionReport),
    LinearFp(LinearFpReport),
    BoltzmannFixedPoint(BoltzmannReport),
    Consistency(ConsistencyReport),
}

impl Report {
    /// A few human-readable lines.
    pub fn summary(&self) -> Vec<String> {
        match self {
            Report::WidthSweep(r) => r
                .summary
                .iter()
                .map(|s| format!("{:<12} n={:<4} initial {:.4e} final {:.4e}", s.method, s.n, s.mean_initial, s.mean_final))
                .collect(),
            Report::StationaryMarginals(r) => vec![
                format!("time-averaged θ-histogram vs Boltzmann L1 gap {:.4}", r.l1_gap),
                format!(
                    "velocity mean gap {:.3e} (MC error {:.3e}), covariance gap {:.3e} (MC error {:.3e})",
                    r.mean_gap, r.mean_error, r.cov_gap, r.cov_error
                ),
                format!("max |corr(θ, r)| {:.4}", r.independence.max_abs_corr),
            ],
            Report::PotentialEvolution(r) => r
                .snapshots
                .iter()
                .map(|s| format!("step {:<6} loss {:.4e} field range [{:.4e}, {:.4e}]", s.step, s.loss, s.min, s.max))
                .collect(),
            Report::LinearFp(r) => vec![
                format!("{} steps of dt {:.4e}", r.steps, r.dt),
                format!("final L1 distance to the Gibbs product {:.4e}", r.final_l1),
                format!("largest free-energy increase {:.3e}", r.max_free_energy_increase),
            ],
            Report::BoltzmannFixedPoint(r) => {
                let mut lines = vec![format!(
                    "fixed point: {} initializations, max pairwise L1 {:.3e}",
                    r.line.runs.len(),
                    r.line.spread
                )];
                if let Some(pde) = &r.pde {
                    lines.push(format!("PDE θ-marginal vs fixed point L1 {:.4e} at t = {}", pde.l1_to_fixed_point, pde.time));
                }
                lines.extend(
                    r.sweep
                        .rows
                        .iter()
                        .map(|s| format!("β={:<6} gap {:.4e} bound {:.4e}", s.beta, s.gap, s.bound)),
                );
                lines
            }
            Report::Consistency(r) => r
                .table
                .pair_diffs
                .iter()
                .map(|(a, b, d)| format!("n={a} vs n={b}: sup difference {d:.4e}"))
                .collect(),
        }
    }
}

/// Runs `preset` with parameters from `tree`, writing files when `out` is given.
pub fn run_preset(preset: Preset, tree: Value, out: Option<&Path>) -> Result<Report> {
    fn go<P: DeserializeOwned + Serialize>(
        preset: Preset,
        tree: Value,
        out: Option<&Path>,
        f: impl FnOnce(&P, Option<&Path>) -> Result<Report>,
    ) -> Result<Report> {
        let params: P = from_tree(tree)?;
        if let Some(dir) = out {
            io::create_dir(dir)?;
            io::write_json(&dir.join("meta.json"), &Meta::new(preset.name(), &params)?)?;
        }
        f(&params, out)
    }
    match preset {
        Preset::WidthSweep => go(preset, tree, out, |p, o| {
            width_sweep(p, o).map(Report::WidthSweep)
        }),
        Preset::StationaryMarginals => go(preset, tree, out, |p, o| {
            stationary_marginals(p, o).map(Report::StationaryMarginals)
        }),
        Preset::PotentialEvolution => go(preset, tree, out, |p, o| {
            potential_evolution(p, o).map(Report::PotentialEvolution)
        }),
        Preset::LinearFp => go(preset, tree, out, |p, o| {
            linear_fp(p, o).map(Report::LinearFp)
        }),
        Preset::BoltzmannFixedPoint => go(preset, tree, out, |p, o| {
            boltzmann_fixed_point(p, o).map(Report::BoltzmannFixedPoint)
        }),
        Preset::Consistency => go(preset, tree, out, |p, o| {
            consistency(p, o).map(Report::Consistency)
        }),
    }
}

/// Rectangular θ-grid: `min`, `max` and `count` per axis (one or two axes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub count: Vec<usize>,
}

impl GridSpec {
    pub fn square(half_width: f64, count: usize) -> Self {
        GridSpec {
            min: vec![-half_width; 2],
            max: vec![half_width; 2],
            count: vec![count; 2],
        }
    }

    pub fn line(min: f64, max: f64, count: usize) -> Self {
        GridSpec {
            min: vec![min],
            max: vec![max],
            count: vec![count],
        }
    }

    pub fn build(&self) -> Result<ThetaGrid> {
        if self.min.len() != self.max.len() || self.min.len() != self.count.len() {
            return Err(Error::Config(
                "grid min, max and count need one entry per axis".into(),
            ));
        }
        let axes = (0..self.min.len())
            .map(|k| Axis::new(self.min[k], self.max[k], self.count[k]))
            .collect::<Result<Vec<_>>>()?;
        ThetaGrid::new(axes)
    }
}

fn write_if(out: Option<&Path>, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    match out {
        Some(dir) => f(dir),
        None => Ok(()),
    }
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------- width sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub integrator: Integrator,
    /// Inverse temperature. For the noiseless methods it only sets the
    /// spread of the initial velocities.
    pub beta: f64,
}

impl MethodSpec {
    fn new(label: &str, integrator: Integrator, beta: f64) -> Self {
        MethodSpec {
            label: label.into(),
            integrator,
            beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WidthSweepParams {
    pub d: usize,
    pub n0: usize,
    pub m: usize,
    pub n_values: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    /// Number of initializations per (method, n); cell `k` uses seed `seed + 1 + k`.
    pub seeds: u64,
    /// Seeds the dataset.
    pub seed: u64,
    pub steps: u64,
    pub dt: f64,
    pub gamma: f64,
    pub t_floor: f64,
    pub init_scale: f64,
    pub activation: Activation,
    pub regularizer: Regularizer,
}

impl Default for WidthSweepParams {
    fn default() -> Self {
        WidthSweepParams {
            d: 20,
            n0: 10,
            m: 20,
            n_values: vec![10, 25, 50, 100, 200],
            methods: vec![
                MethodSpec::new("SHB_beta1e2", Integrator::Shb, 1e2),
                MethodSpec::new("SHB_beta1e4", Integrator::Shb, 1e4),
                MethodSpec::new("HB", Integrator::Hb, 1e4),
                MethodSpec::new("AGD", Integrator::Agd, 1e4),
            ],
            seeds: 20,
            seed: 0,
            steps: 20_000,
            dt: 0.05,
            gamma: 1.0,
            t_floor: 1.0,
            init_scale: 1.0,
            activation: Activation::Sigmoid,
            regularizer: Regularizer::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepRow {
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub method: String,
    pub n: usize,
    pub mean_initial: f64,
    pub mean_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepReport {
    pub rows: Vec<WidthSweepRow>,
    pub summary: Vec<WidthSummary>,
}

impl WidthSweepReport {
    pub fn mean_final(&self, method: &str, n: usize) -> Option<f64> {
        self.entry(method, n).map(|s| s.mean_final)
    }

    pub fn entry(&self, method: &str, n: usize) -> Option<&WidthSummary> {
        self.summary.iter().find(|s| s.method == method && s.n == n)
    }
}

pub fn width_sweep(p: &WidthSweepParams, out: Option<&Path>) -> Result<WidthSweepReport> {
    if p.methods.is_empty() || p.n_values.is_empty() || p.seeds == 0 {
        return Err(Error::Config(
            "width_sweep needs methods, widths and seeds".into(),
        ));
    }
    let data = sample_dataset(p.d, p.n0, p.m, p.seed)?;
    let mut cells = Vec::new();
    for method in &p.methods {
        for &n in &p.n_values {
            for k in 0..p.seeds {
                let cfg = RunConfig {
                    d: p.d,
                    n,
                    n0: p.n0,
                    m: p.m,
                    gamma: p.gamma,
                    beta: method.beta,
                    dt: p.dt,
                    steps: p.steps,
                    seed: p.seed + 1 + k,
                    integrator: method.integrator,
                    regularizer: p.regularizer,
                    record_every: p.steps.max(1),
                    init_scale: p.init_scale,
                    t_floor: p.t_floor,
                    activation: p.activation,
                    diagnostics: false,
                };
                cfg.validate()?;
                cells.push((method.label.clone(), cfg));
            }
        }
    }
    let rows: Vec<WidthSweepRow> = cells
        .par_iter()
        .map(|(label, cfg)| {
            let (_, rec) = run_trajectory(cfg, &data)?;
            Ok(WidthSweepRow {
                method: label.clone(),
                n: cfg.n,
                seed: cfg.seed,
                initial_loss: rec[0].loss,
                final_loss: rec[rec.len() - 1].loss,
            })
        })
        .collect::<Result<_>>()?;
    let summary = rows
        .chunks(p.seeds as usize)
        .map(|block| {
            let k = block.len() as f64;
            WidthSummary {
                method: block[0].method.clone(),
                n: block[0].n,
                mean_initial: block.iter().map(|r| r.initial_loss).sum::<f64>() / k,
                mean_final: block.iter().map(|r| r.final_loss).sum::<f64>() / k,
            }
        })
        .collect();
    let report = WidthSweepReport { rows, summary };
    write_if(out, |dir| {
        io::write_table(
            &dir.join("final_loss.csv"),
            &strings(&["method", "n", "seed", "initial_loss", "final_loss"]),
            report.rows.iter().map(|r| {
                vec![
                    r.method.clone(),
                    r.n.to_string(),
                    r.seed.to_string(),
                    num(r.initial_loss),
                    num(r.final_loss),
                ]
            }),
        )?;
        io::write_table(
            &dir.join("summary.csv"),
            &strings(&["method", "n", "mean_initial_loss", "mean_final_loss"]),
            report.summary.iter().map(|s| {
                vec![
                    s.method.clone(),
                    s.n.to_string(),
                    num(s.mean_initial),
                    num(s.mean_final),
                ]
            }),
        )
    })?;
    Ok(report)
}

// ------------------------------------------------------- stationary marginals

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryParams {
    pub n: usize,
    pub n0: usize,
    pub m: usize,
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: u64,
    /// Histograms and Boltzmann masses are averaged over snapshots taken
    /// every `sample_every` steps after `burn_in`.
    pub burn_in: u64,
    pub sample_every: u64,
    pub record_every: u64,
    pub seed: u64,
    pub init_scale: f64,
    pub regularizer: Regularizer,
    pub grid: GridSpec,
}

impl Default for StationaryParams {
    fn default() -> Self {
        StationaryParams {
            n: 200,
            n0: 20,
            m: 64,
            gamma: 1.0,
            beta: 400.0,
            dt: 0.01,
            steps: 200_000,
            burn_in: 20_000,
            sample_every: 100,
            record_every: 100,
            seed: 0,
            init_scale: 1.0,
            regularizer: Regularizer::SmoothedNorm { c: 0.01, eps: 1e-3 },
            grid: GridSpec::square(3.0, 24),
        }
    }
}

fn desk_config(p: &StationaryParams, steps: u64, record_every: u64) -> Result<RunConfig> {
    let cfg = RunConfig {
        d: 2,
        n: p.n,
        n0: p.n0,
        m: p.m,
        gamma: p.gamma,
        beta: p.beta,
        dt: p.dt,
        steps,
        seed: p.seed,
        integrator: Integrator::Shb,
        regularizer: p.regularizer,
        record_every,
        init_scale: p.init_scale,
        t_floor: 1.0,
        activation: Activation::Sigmoid,
        diagnostics: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub trajectory: Vec<TrajectoryRecord>,
    pub final_ensemble: Ensemble,
    pub snapshots: usize,
    /// Time-averaged Boltzmann cell masses.
    pub boltzmann: Vec<f64>,
    /// Time-averaged particle cell masses.
    pub hist: Vec<f64>,
    pub overflow: f64,
    pub l1_gap: f64,
    pub boltzmann_argmax: usize,
    pub hist_argmax: usize,
    /// `−βF'(μⁿ)` at the final step.
    pub final_field: Vec<f64>,
    pub final_l1_gap: f64,
    pub mean_gap: f64,
    pub cov_gap: f64,
    pub mean_error: f64,
    pub cov_error: f64,
    pub independence: IndependenceReport,
}

impl StationaryReport {
    /// Both velocity gaps within `k` standard errors of exact Gaussian draws.
    pub fn velocity_within(&self, k: f64) -> bool {
        self.mean_gap <= k * self.mean_error && self.cov_gap <= k * self.cov_error
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

pub fn stationary_marginals(p: &StationaryParams, out: Option<&Path>) -> Result<StationaryReport> {
    let cfg = desk_config(p, p.steps, p.record_every)?;
    if p.sample_every == 0 {
        return Err(Error::Config("sample_every must be at least 1".into()));
    }
    let grid = p.grid.build()?;
    let data = sample_dataset(2, p.n0, p.m, p.seed)?;
    let mut sim = Simulation::new(&cfg, &data)?;
    let mut trajectory = vec![sim.record()];
    let cells = grid.cells();
    let (mut boltzmann, mut hist, mut overflow) = (vec![0.0; cells], vec![0.0; cells], 0.0);
    let mut snapshots = 0usize;
    while sim.steps_done() < p.steps {
        sim.advance()?;
        let k = sim.steps_done();
        if k % p.record_every == 0 || k == p.steps {
            trajectory.push(sim.record());
        }
        if k > p.burn_in && k % p.sample_every == 0 {
            let cmp = compare_empirical(
                &sim.ensemble(),
                &data,
                cfg.activation,
                &cfg.regularizer,
                p.beta,
                &grid,
            )?;
            for (acc, v) in boltzmann.iter_mut().zip(&cmp.boltzmann) {
                *acc += v;
            }
            for (acc, v) in hist.iter_mut().zip(&cmp.hist) {
                *acc += v;
            }
            overflow += cmp.overflow;
            snapshots += 1;
        }
    }
    if snapshots > 0 {
        let w = 1.0 / snapshots as f64;
        boltzmann
            .iter_mut()
            .chain(hist.iter_mut())
            .for_each(|x| *x *= w);
        overflow *= w;
    }
    let ens = sim.ensemble();
    let last = compare_empirical(&ens, &data, cfg.activation, &cfg.regularizer, p.beta, &grid)?;
    let (mean_gap, cov_gap) = velocity_stationarity(&ens, p.beta);
    let (mean_error, cov_error) = velocity_mc_errors(p.n, 2, p.beta);
    let report = StationaryReport {
        l1_gap: boltzmann
            .iter()
            .zip(&hist)
            .map(|(a, b)| (a - b).abs())
            .sum(),
        boltzmann_argmax: argmax(&boltzmann),
        hist_argmax: argmax(&hist),
        independence: theta_r_independence(&ens),
        final_ensemble: ens,
        trajectory,
        snapshots,
        boltzmann,
        hist,
        overflow,
        final_field: last.field,
        final_l1_gap: last.l1_gap,
        mean_gap,
        cov_gap,
        mean_error,
        cov_error,
    };
    write_if(out, |dir| {
        io::write_trajectory(&dir.join("trajectory.csv"), &report.trajectory)?;
        io::write_marginals(&dir.join("marginals.csv"), &report.final_ensemble)?;
        io::write_grid_columns(
            &dir.join("field.csv"),
            &grid,
            &[
                ("field", &report.final_field),
                ("boltzmann_mass", &report.boltzmann),
                ("particle_mass", &report.hist),
            ],
        )?;
        io::write_json(&dir.join("summary.json"), &stationary_summary(&report))
    })?;
    Ok(report)
}

fn stationary_summary(r: &StationaryReport) -> Value {
    serde_json::json!({
        "snapshots": r.snapshots,
        "l1_gap": r.l1_gap,
        "overflow": r.overflow,
        "boltzmann_argmax": r.boltzmann_argmax,
        "hist_argmax": r.hist_argmax,
        "final_l1_gap": r.final_l1_gap,
        "velocity": {
            "mean_gap": r.mean_gap,
            "cov_gap": r.cov_gap,
            "mean_error": r.mean_error,
            "cov_error": r.cov_error,
        },
        "independence": r.independence,
    })
}

// -------------------------------------------------------- potential evolution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionParams {
    pub n: usize,
    pub n0: usize,
    pub m: usize,
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub snapshots: Vec<u64>,
    pub record_every: u64,
    pub seed: u64,
    pub init_scale: f64,
    pub regularizer: Regularizer,
    pub grid: GridSpec,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        let s = StationaryParams::default();
        EvolutionParams {
            n: s.n,
            n0: s.n0,
            m: s.m,
            gamma: s.gamma,
            beta: s.beta,
            dt: s.dt,
            snapshots: vec![10, 100, 1_000, 10_000],
            record_every: 10,
            seed: s.seed,
            init_scale: s.init_scale,
            regularizer: s.regularizer,
            grid: GridSpec::square(3.0, 60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub step: u64,
    pub loss: f64,
    /// `F'(μⁿ)` at the grid cells.
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub ensemble: Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub trajectory: Vec<TrajectoryRecord>,
    pub snapshots: Vec<FieldSnapshot>,
    /// `max_c |F'_k+1 − F'_k|` between successive snapshots.
    pub successive_changes: Vec<f64>,
}

pub fn potential_evolution(p: &EvolutionParams, out: Option<&Path>) -> Result<EvolutionReport> {
    let mut steps = p.snapshots.clone();
    steps.sort_unstable();
    steps.dedup();
    let last = steps.last().copied().unwrap_or(0);
    let model = StationaryParams {
        n: p.n,
        n0: p.n0,
        m: p.m,
        gamma: p.gamma,
        beta: p.beta,
        dt: p.dt,
        seed: p.seed,
        init_scale: p.init_scale,
        regularizer: p.regularizer,
        ..StationaryParams::default()
    };
    let cfg = desk_config(&model, last, p.record_every)?;
    let grid = p.grid.build()?;
    if grid.ndim() != 2 {
        return Err(Error::Config("potential_evolution needs a 2-d grid".into()));
    }
    let points = grid.param_points(embed_plane);
    let data = sample_dataset(2, p.n0, p.m, p.seed)?;
    let mut sim = Simulation::new(&cfg, &data)?;
    let mut trajectory = vec![sim.record()];
    let mut snapshots = Vec::new();
    let snap = |sim: &mut Simulation<_>, snapshots: &mut Vec<FieldSnapshot>| -> Result<()> {
        let ens = sim.ensemble();
        let values = potential_field(&ens, &data, &points, cfg.activation, &cfg.regularizer)?;
        snapshots.push(FieldSnapshot {
            step: sim.steps_done(),
            loss: sim.record().loss,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            values,
            ensemble: ens,
        });
        Ok(())
    };
    let mut next = steps.iter().peekable();
    if next.peek() == Some(&&0) {
        snap(&mut sim, &mut snapshots)?;
        next.next();
    }
    for &target in next {
        while sim.steps_done() < target {
            sim.advance()?;
            if sim.steps_done() % p.record_every == 0 {
                trajectory.push(sim.record());
            }
        }
        snap(&mut sim, &mut snapshots)?;
    }
    let successive_changes = snapshots
        .windows(2)
        .map(|w| {
            w[0].values
                .iter()
                .zip(&w[1].values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let report = EvolutionReport {
        trajectory,
        snapshots,
        successive_changes,
    };
    write_if(out, |dir| {
        io::write_trajectory(&dir.join("trajectory.csv"), &report.trajectory)?;
        for s in &report.snapshots {
            io::write_grid_values(
                &dir.join(format!("field_step{}.csv", s.step)),
                &grid,
                &s.values,
            )?;
            io::write_marginals(
                &dir.join(format!("particles_step{}.csv", s.step)),
                &s.ensemble,
            )?;
        }
        Ok(())
    })?;
    Ok(report)
}

// ------------------------------------------------------------------ linear FP

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearFpParams {
    pub n_theta: usize,
    pub n_r: usize,
    pub theta_max: f64,
    pub r_max: f64,
    pub gamma: f64,
    pub beta: f64,
    /// `f(θ) = curvature·θ²/2`.
    pub curvature: f64,
    pub t_end: f64,
    /// Center `(θ, r)` and variance of the Gaussian initial density.
    pub init_center: [f64; 2],
    pub init_var: f64,
    pub transport: Transport,
    pub record_every: u64,
    /// θ-cells below this mass are skipped by the product-form check.
    pub mass_floor: f64,
}

impl Default for LinearFpParams {
    fn default() -> Self {
        LinearFpParams {
            n_theta: 128,
            n_r: 128,
            theta_max: 6.0,
            r_max: 6.0,
            gamma: 1.0,
            beta: 1.0,
            curvature: 1.0,
            t_end: 30.0,
            init_center: [2.0, 0.0],
            init_var: 0.5,
            transport: Transport::Limited,
            record_every: 10,
            mass_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpRecord {
    pub step: u64,
    pub time: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub l1_to_gibbs: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFpReport {
    pub dt: f64,
    pub steps: u64,
    pub history: Vec<FpRecord>,
    pub final_l1: f64,
    /// Largest `ℰ_{k+1} − ℰ_k` between recorded points (≤ 0 when monotone).
    pub max_free_energy_increase: f64,
    pub product: ProductGap,
    pub final_density: GridDensity,
    pub gibbs: GridDensity,
}

pub fn linear_fp(p: &LinearFpParams, out: Option<&Path>) -> Result<LinearFpReport> {
    if !(p.t_end >= 0.0 && p.init_var > 0.0 && p.record_every > 0) {
        return Err(Error::Config(
            "linear_fp needs t_end ≥ 0, init_var > 0, record_every ≥ 1".into(),
        ));
    }
    let grid = PhaseGrid::new(
        Axis::symmetric(p.theta_max, p.n_theta)?,
        Axis::symmetric(p.r_max, p.n_r)?,
    );
    let f: Vec<f64> = (0..p.n_theta)
        .map(|i| 0.5 * p.curvature * grid.theta(i).powi(2))
        .collect();
    let force: Vec<f64> = (0..p.n_theta)
        .map(|i| -p.curvature * grid.theta(i))
        .collect();
    let objective = GridObjective::external(f.clone());
    let gibbs = GridDensity::gibbs(grid, &f, p.beta)?;
    let [c_theta, c_r] = p.init_center;
    let rho0 = GridDensity::from_fn(grid, |t, r| {
        (-((t - c_theta).powi(2) + (r - c_r).powi(2)) / (2.0 * p.init_var)).exp()
    })?;
    let dt0 = stable_dt(&grid, &force, p.gamma, p.beta, p.transport);
    let steps = (p.t_end / dt0).ceil() as u64;
    let dt = if steps == 0 {
        dt0
    } else {
        p.t_end / steps as f64
    };
    let params = FpParams {
        gamma: p.gamma,
        beta: p.beta,
        dt,
        transport: p.transport,
    };
    let mut history = Vec::new();
    let final_density = evolve(rho0, ForceModel::Fixed(&force), &params, steps, |k, rho| {
        if k % p.record_every == 0 || k == steps {
            history.push(FpRecord {
                step: k,
                time: k as f64 * dt,
                free_energy: grid_free_energy(rho, &objective, p.beta),
                dissipation: grid_dissipation(rho, p.beta, p.gamma),
                l1_to_gibbs: rho.l1_distance(&gibbs),
                mass: rho.mass(),
            });
        }
    })?;
    let max_free_energy_increase = history
        .windows(2)
        .map(|w| w[1].free_energy - w[0].free_energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let report = LinearFpReport {
        dt,
        steps,
        final_l1: final_density.l1_distance(&gibbs),
        max_free_energy_increase,
        product: check_product_form(&final_density, p.beta, p.mass_floor),
        history,
        final_density,
        gibbs,
    };
    write_if(out, |dir| {
        io::write_numeric(
            &dir.join("history.csv"),
            &strings(&[
                "step",
                "time",
                "free_energy",
                "dissipation",
                "l1_to_gibbs",
                "mass",
            ]),
            report.history.iter().map(|h| {
                vec![
                    h.step as f64,
                    h.time,
                    h.free_energy,
                    h.dissipation,
                    h.l1_to_gibbs,
                    h.mass,
                ]
            }),
        )?;
        io::write_phase_density(
            dir,
            "density_final",
            &report.final_density,
            steps as f64 * dt,
        )?;
        io::write_json(
            &dir.join("summary.json"),
            &serde_json::json!({
                "dt": report.dt,
                "steps": report.steps,
                "final_l1": report.final_l1,
                "max_free_energy_increase": report.max_free_energy_increase,
                "product": report.product,
            }),
        )
    })?;
    Ok(report)
}

/// Compares the identity `dℰ/dt = −D` over consecutive windows of recorded
/// points: returns `(t_start, t_end, (ℰ(t_start) − ℰ(t_end))/Δt, mean D)` per
/// window, with the mean dissipation by the trapezoid rule.
pub fn dissipation_windows(
    history: &[FpRecord],
    window: f64,
    t_min: f64,
    t_max: f64,
) -> Vec<(f64, f64, f64, f64)> {
    let pts: Vec<&FpRecord> = history
        .iter()
        .filter(|h| h.time >= t_min && h.time <= t_max)
        .collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < pts.len() {
        let mut end = start;
        while end + 1 < pts.len() && pts[end].time - pts[start].time < window {
            end += 1;
        }
        if end == start || pts[end].time - pts[start].time < 0.5 * window {
            break;
        }
        let span = pts[end].time - pts[start].time;
        let integral: f64 = pts[start..=end]
            .windows(2)
            .map(|w| 0.5 * (w[0].dissipation + w[1].dissipation) * (w[1].time - w[0].time))
            .sum();
        out.push((
            pts[start].time,
            pts[end].time,
            (pts[start].free_energy - pts[end].free_energy) / span,
            integral / span,
        ));
        start = end;
    }
    out
}

// ------------------------------------------------------ Boltzmann fixed point

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Uniform,
    Gaussian { center: Vec<f64>, sd: f64 },
}

impl InitSpec {
    pub fn build(&self, grid: &ThetaGrid) -> Result<ThetaDensity> {
        match self {
            InitSpec::Uniform => Ok(ThetaDensity::uniform(grid.clone())),
            InitSpec::Gaussian { center, sd } => ThetaDensity::gaussian(grid.clone(), center, *sd),
        }
    }
}

/// A self-consistent problem on a θ-grid. One-axis grids vary the first-layer
/// weight with the second-layer weight held at `b`; two-axis grids cover `(a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointProblem {
    pub grid: GridSpec,
    pub b: f64,
    pub beta: f64,
    pub regularizer: Regularizer,
    pub inits: Vec<InitSpec>,
    pub options: FixedPointOptions,
}

impl Default for FixedPointProblem {
    fn default() -> Self {
        FixedPointProblem {
            grid: GridSpec::line(-6.0, 6.0, 128),
            b: 1.0,
            beta: 2.0,
            regularizer: Regularizer::Quadratic { c: 1.0 },
            inits: vec![
                InitSpec::Uniform,
                InitSpec::Gaussian {
                    center: vec![3.0],
                    sd: 0.5,
                },
                InitSpec::Gaussian {
                    center: vec![-4.0],
                    sd: 1.0,
                },
            ],
            options: FixedPointOptions::default(),
        }
    }
}

impl FixedPointProblem {
    pub fn objective(&self, data: &Dataset) -> Result<(ThetaGrid, GridObjective)> {
        let grid = self.grid.build()?;
        let points = match grid.ndim() {
            1 => grid.param_points(embed_first_layer(self.b)),
            _ => grid.param_points(embed_plane),
        };
        if data.feature_dim() != 1 {
            return Err(Error::Config("grid problems need d = 2".into()));
        }
        let obj = network_objective(data, Activation::Sigmoid, &self.regularizer, &points)?;
        Ok((grid, obj))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRun {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub free_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub runs: Vec<FixedPointRun>,
    /// Largest pairwise L1 distance between the solutions.
    pub spread: f64,
    pub density: ThetaDensity,
    /// `F'(ρ*)` at the cells.
    pub potential: Vec<f64>,
}

/// Solves `problem` from each of its initializations.
pub fn solve_problem(problem: &FixedPointProblem, data: &Dataset) -> Result<FixedPointSolution> {
    if problem.inits.is_empty() {
        return Err(Error::Config(
            "fixed-point problem needs at least one initialization".into(),
        ));
    }
    let (grid, obj) = problem.objective(data)?;
    let mut solutions = Vec::new();
    let mut runs = Vec::new();
    for init in &problem.inits {
        let fp = solve_fixed_point(&init.build(&grid)?, &obj, problem.beta, &problem.options)?;
        runs.push(FixedPointRun {
            iterations: fp.iterations,
            residual: fp.residual,
            converged: fp.converged,
            free_energy: crate::boltzmann::grid_free_energy(&fp.density, &obj, problem.beta),
        });
        solutions.push(fp.density);
    }
    let mut spread: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            spread = spread.max(solutions[i].l1_distance(&solutions[j]));
        }
    }
    let density = solutions.swap_remove(0);
    let potential = obj.first_variation(&density.masses());
    Ok(FixedPointSolution {
        runs,
        spread,
        density,
        potential,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeCheck {
    /// Final time; `0` skips the check.
    pub t_end: f64,
    pub r_max: f64,
    pub n_r: usize,
    /// Initial θ-marginal; velocities start at `N(0, β⁻¹)`.
    pub init: InitSpec,
    pub gamma: f64,
    /// The step is `stable_dt` for a force bound `force_margin·max|F'| + force_slack`,
    /// since the force changes as the density evolves.
    pub force_margin: f64,
    pub force_slack: f64,
    pub record_every: u64,
}

impl Default for PdeCheck {
    fn default() -> Self {
        PdeCheck {
            t_end: 40.0,
            r_max: 6.0,
            n_r: 128,
            init: InitSpec::Gaussian {
                center: vec![2.0],
                sd: 1.0,
            },
            gamma: 1.0,
            force_margin: 1.5,
            force_slack: 6.0,
            record_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeRecord {
    pub step: u64,
    pub time: f64,
    pub free_energy: f64,
    pub l1_to_fixed_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeComparison {
    pub dt: f64,
    pub steps: u64,
    pub time: f64,
    pub history: Vec<PdeRecord>,
    /// L1 distance between the final θ-marginal and the fixed point.
    pub l1_to_fixed_point: f64,
    pub max_free_energy_increase: f64,
    pub theta_marginal: Vec<f64>,
}

/// Evolves the kinetic equation with the self-consistent force of a one-axis
/// problem and compares its θ-marginal with `target`.
pub fn pde_against_fixed_point(
    problem: &FixedPointProblem,
    data: &Dataset,
    check: &PdeCheck,
    target: &ThetaDensity,
) -> Result<PdeComparison> {
    let (grid, obj) = problem.objective(data)?;
    if grid.ndim() != 1 {
        return Err(Error::Config("the PDE check needs a one-axis grid".into()));
    }
    let theta_axis = grid.axes[0];
    let phase = PhaseGrid::new(theta_axis, Axis::symmetric(check.r_max, check.n_r)?);
    let theta0 = check.init.build(&grid)?;
    let beta = problem.beta;
    let rho0 = GridDensity::from_fn(phase, |t, r| {
        let i = theta_axis.locate(t).unwrap_or(0);
        theta0.values[i] * (-0.5 * beta * r * r).exp()
    })?;
    let f0 = crate::kinetic::nonlinear_force(&rho0, &obj)?;
    let fmax =
        f0.iter().fold(0.0f64, |m, f| m.max(f.abs())) * check.force_margin + check.force_slack;
    let dt0 = stable_dt(&phase, &[fmax], check.gamma, beta, Transport::Limited);
    let steps = (check.t_end / dt0).ceil() as u64;
    let dt = if steps == 0 {
        dt0
    } else {
        check.t_end / steps as f64
    };
    let params = FpParams {
        gamma: check.gamma,
        beta,
        dt,
        transport: Transport::Limited,
    };
    let h = theta_axis.h();
    let l1 = |rho: &GridDensity| {
        rho.theta_marginal()
            .iter()
            .zip(&target.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * h
    };
    let mut history = Vec::new();
    let every = check.record_every.max(1);
    let rho = evolve(
        rho0,
        ForceModel::SelfConsistent(&obj),
        &params,
        steps,
        |k, rho| {
            if k % every == 0 || k == steps {
                history.push(PdeRecord {
                    step: k,
                    time: k as f64 * dt,
                    free_energy: grid_free_energy(rho, &obj, beta),
                    l1_to_fixed_point: l1(rho),
                });
            }
        },
    )?;
    let max_free_energy_increase = history
        .windows(2)
        .map(|w| w[1].free_energy - w[0].free_energy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PdeComparison {
        dt,
        steps,
        time: steps as f64 * dt,
        l1_to_fixed_point: l1(&rho),
        max_free_energy_increase,
        theta_marginal: rho.theta_marginal(),
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSweep {
    pub betas: Vec<f64>,
    pub grid: GridSpec,
    pub b: f64,
    pub regularizer: Regularizer,
    /// Frank–Wolfe certificate at which the grid minimization stops.
    pub infimum_tol: f64,
    pub infimum_max_iter: usize,
    pub options: FixedPointOptions,
}

impl Default for BetaSweep {
    fn default() -> Self {
        BetaSweep {
            betas: vec![4.0, 16.0, 64.0, 256.0],
            grid: GridSpec::line(-4.0, 4.0, 2048),
            b: 1.0,
            regularizer: Regularizer::Quadratic { c: 0.1 },
            infimum_tol: 1e-9,
            infimum_max_iter: 200_000,
            options: FixedPointOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `F_{1−1/β}(ρ*_β)`.
    pub f_lambda: f64,
    /// `F_{1−1/β}(ρ*_β) − inf_grid F`.
    pub gap: f64,
    /// `c·(1 + log β)/β` with the fitted `c`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub infimum: f64,
    pub infimum_certificate: f64,
    pub infimum_iterations: usize,
    /// Fitted on the two smallest β: `max gap·β/(1 + log β)`.
    pub c: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].gap < w[0].gap)
    }

    pub fn within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.gap <= r.bound)
    }
}

pub fn beta_sweep(sweep: &BetaSweep, data: &Dataset) -> Result<SweepReport> {
    let problem = FixedPointProblem {
        grid: sweep.grid.clone(),
        b: sweep.b,
        regularizer: sweep.regularizer,
        ..FixedPointProblem::default()
    };
    let (grid, obj) = problem.objective(data)?;
    let inf = grid_infimum(&obj, sweep.infimum_tol, sweep.infimum_max_iter);
    let mut betas = sweep.betas.clone();
    betas.sort_by(f64::total_cmp);
    let solved: Vec<(f64, usize, bool, f64)> = betas
        .par_iter()
        .map(|&beta| {
            let fp = solve_fixed_point(
                &ThetaDensity::uniform(grid.clone()),
                &obj,
                beta,
                &sweep.options,
            )?;
            let fl = f_lambda(&fp.density, &obj, 1.0 - 1.0 / beta)?;
            Ok((beta, fp.iterations, fp.converged, fl))
        })
        .collect::<Result<_>>()?;
    let scale = |beta: f64| (1.0 + beta.ln()) / beta;
    let c = solved
        .iter()
        .take(2)
        .map(|&(beta, _, _, fl)| (fl - inf.value) / scale(beta))
        .fold(0.0f64, f64::max);
    let rows = solved
        .into_iter()
        .map(|(beta, iterations, converged, fl)| SweepRow {
            beta,
            iterations,
            converged,
            f_lambda: fl,
            gap: fl - inf.value,
            bound: c * scale(beta),
        })
        .collect();
    Ok(SweepReport {
        infimum: inf.value,
        infimum_certificate: inf.certificate,
        infimum_iterations: inf.iterations,
        c,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoltzmannParams {
    pub n0: usize,
    pub m: usize,
    pub seed: u64,
    pub line: FixedPointProblem,
    pub pde: PdeCheck,
    pub sweep: BetaSweep,
}

impl Default for BoltzmannParams {
    fn default() -> Self {
        BoltzmannParams {
            n0: 3,
            m: 64,
            seed: 1,
            line: FixedPointProblem::default(),
            pde: PdeCheck::default(),
            sweep: BetaSweep::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannReport {
    pub line: FixedPointSolution,
    pub pde: Option<PdeComparison>,
    pub sweep: SweepReport,
}

pub fn boltzmann_fixed_point(p: &BoltzmannParams, out: Option<&Path>) -> Result<BoltzmannReport> {
    let data = sample_dataset(2, p.n0, p.m, p.seed)?;
    let line = solve_problem(&p.line, &data)?;
    let pde = if p.pde.t_end > 0.0 {
        Some(pde_against_fixed_point(
            &p.line,
            &data,
            &p.pde,
            &line.density,
        )?)
    } else {
        None
    };
    let sweep = beta_sweep(&p.sweep, &data)?;
    let report = BoltzmannReport { line, pde, sweep };
    write_if(out, |dir| {
        let grid = &report.line.density.grid;
        let mut columns: Vec<(&str, &[f64])> = vec![
            ("density", &report.line.density.values),
            ("potential", &report.line.potential),
        ];
        if let Some(pde) = &report.pde {
            columns.push(("pde_marginal", &pde.theta_marginal));
        }
        io::write_grid_columns(&dir.join("fixed_point.csv"), grid, &columns)?;
        io::write_numeric(
            &dir.join("beta_sweep.csv"),
            &strings(&["beta", "iterations", "f_lambda", "gap", "bound"]),
            report
                .sweep
                .rows
                .iter()
                .map(|r| vec![r.beta, r.iterations as f64, r.f_lambda, r.gap, r.bound]),
        )?;
        if let Some(pde) = &report.pde {
            io::write_numeric(
                &dir.join("pde_history.csv"),
                &strings(&["step", "time", "free_energy", "l1_to_fixed_point"]),
                pde.history
                    .iter()
                    .map(|h| vec![h.step as f64, h.time, h.free_energy, h.l1_to_fixed_point]),
            )?;
        }
        io::write_json(
            &dir.join("summary.json"),
            &serde_json::json!({
                "fixed_point": { "runs": report.line.runs, "spread": report.line.spread },
                "pde": report.pde.as_ref().map(|p| serde_json::json!({
                    "dt": p.dt,
                    "steps": p.steps,
                    "l1_to_fixed_point": p.l1_to_fixed_point,
                    "max_free_energy_increase": p.max_free_energy_increase,
                })),
                "sweep": {
                    "infimum": report.sweep.infimum,
                    "infimum_certificate": report.sweep.infimum_certificate,
                    "c": report.sweep.c,
                },
            }),
        )
    })?;
    Ok(report)
}

// ---------------------------------------------------------------- consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyParams {
    pub d: usize,
    pub n0: usize,
    pub m: usize,
    pub n_values: Vec<usize>,
    /// Cell `k` uses seed `seed + 1 + k`; the dataset uses `seed`.
    pub seeds: u64,
    pub seed: u64,
    pub integrator: Integrator,
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: u64,
    pub record_every: u64,
    pub regularizer: Regularizer,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            d: 5,
            n0: 20,
            m: 50,
            n_values: vec![25, 50, 100, 200, 400],
            seeds: 40,
            seed: 0,
            integrator: Integrator::Hb,
            gamma: 1.0,
            beta: 1e4,
            dt: 0.05,
            steps: 2_000,
            record_every: 20,
            regularizer: Regularizer::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub table: ConsistencyTable,
}

impl ConsistencyReport {
    /// Sup difference of the last pair is below that of the first pair.
    pub fn trend_holds(&self) -> bool {
        let d = &self.table.pair_diffs;
        d.len() >= 2 && d[d.len() - 1].2 < d[0].2
    }
}

pub fn consistency(p: &ConsistencyParams, out: Option<&Path>) -> Result<ConsistencyReport> {
    if p.n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("n_values must be increasing".into()));
    }
    let base = RunConfig {
        d: p.d,
        n: p.n_values.first().copied().unwrap_or(1),
        n0: p.n0,
        m: p.m,
        gamma: p.gamma,
        beta: p.beta,
        dt: p.dt,
        steps: p.steps,
        seed: 0,
        integrator: p.integrator,
        regularizer: p.regularizer,
        record_every: p.record_every,
        init_scale: 1.0,
        t_floor: 1.0,
        activation: Activation::Sigmoid,
        diagnostics: false,
    };
    base.validate()?;
    let data = sample_dataset(p.d, p.n0, p.m, p.seed)?;
    let seeds: Vec<u64> = (0..p.seeds).map(|k| p.seed + 1 + k).collect();
    let table = consistency_sweep(&base, &data, &p.n_values, &seeds)?;
    let report = ConsistencyReport { table };
    write_if(out, |dir| {
        let t = &report.table;
        let mut header = strings(&["time"]);
        header.extend(t.n_values.iter().map(|n| format!("mean_loss_n{n}")));
        io::write_numeric(
            &dir.join("mean_curves.csv"),
            &header,
            t.times.iter().enumerate().map(|(k, &time)| {
                let mut row = vec![time];
                row.extend(t.mean_curves.iter().map(|c| c[k]));
                row
            }),
        )?;
        io::write_table(
            &dir.join("pair_diffs.csv"),
            &strings(&["n_small", "n_large", "sup_difference"]),
            t.pair_diffs
                .iter()
                .map(|(a, b, d)| vec![a.to_string(), b.to_string(), num(*d)]),
        )
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            let v = serde_json::to_value(p).unwrap();
            assert_eq!(v, Value::String(p.name().into()));
        }
        assert!(matches!(
            "fig9".parse::<Preset>(),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn defaults_survive_an_empty_tree() {
        for p in Preset::ALL {
            let from_empty = match p {
                Preset::WidthSweep => serde_json::to_value(
                    from_tree::<WidthSweepParams>(Value::Object(Default::default())).unwrap(),
                ),
                Preset::StationaryMarginals => serde_json::to_value(
                    from_tree::<StationaryParams>(Value::Object(Default::default())).unwrap(),
                ),
                Preset::PotentialEvolution => serde_json::to_value(
                    from_tree::<EvolutionParams>(Value::Object(Default::default())).unwrap(),
                ),
                Preset::LinearFp => serde_json::to_value(
                    from_tree::<LinearFpParams>(Value::Object(Default::default())).unwrap(),
                ),
                Preset::BoltzmannFixedPoint => serde_json::to_value(
                    from_tree::<BoltzmannParams>(Value::Object(Default::default())).unwrap(),
                ),
                Preset::Consistency => serde_json::to_value(
                    from_tree::<ConsistencyParams>(Value::Object(Default::default())).unwrap(),
                ),
            }
            .unwrap();
            assert_eq!(from_empty, p.default_params(), "{p}");
        }
    }

    #[test]
    fn overrides_reach_nested_fields_and_typos_are_rejected() {
        let tree = load_params(
            Preset::BoltzmannFixedPoint,
            None,
            &["sweep.betas=[1.0, 2.0]".into(), "line.beta=3".into()],
        )
        .unwrap();
        let p: BoltzmannParams = from_tree(tree).unwrap();
        assert_eq!(p.sweep.betas, vec![1.0, 2.0]);
        assert_eq!(p.line.beta, 3.0);
        let bad = load_params(Preset::LinearFp, None, &["stepz=3".into()]).unwrap();
        assert!(matches!(
            from_tree::<LinearFpParams>(bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn width_sweep_row_count() {
        let p = WidthSweepParams {
            d: 3,
            n0: 2,
            m: 8,
            n_values: vec![2, 4, 6],
            seeds: 3,
            steps: 5,
            ..Default::default()
        };
        let r = width_sweep(&p, None).unwrap();
        assert_eq!(r.rows.len(), 3 * 4 * 3);
        assert_eq!(r.summary.len(), 3 * 4);
        assert!(r.mean_final("HB", 4).is_some());
    }

    #[test]
    fn dissipation_windows_cover_the_range() {
        let history: Vec<FpRecord> = (0..=100)
            .map(|k| {
                let t = k as f64 * 0.1;
                FpRecord {
                    step: k,
                    time: t,
                    free_energy: (-t).exp(),
                    dissipation: (-t).exp(),
                    l1_to_gibbs: 0.0,
                    mass: 1.0,
                }
            })
            .collect();
        let w = dissipation_windows(&history, 1.0, 1.0, 9.0);
        assert_eq!(w.len(), 8);
        for (_, _, rate, mean) in w {
            assert!((rate / mean - 1.0).abs() < 1e-2);
        }
    }
}
