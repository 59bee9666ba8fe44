//! Experiment harness: preset catalog, JSON configuration, report emission,
//! and brute-force oracles that never touch the backward or adjoint solvers.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adjoint::{
    duality_residual, estimate_sc_bounds, maximum_condition_test, solve_adjoints,
    sufficient_condition_check, transversality_check, OptimalTrajectory,
};
use crate::backward::{
    backward_stability, compare_schemes, solve_bsdep_zero_terminal, truncation_gap,
    RegressionBasis,
};
use crate::control::{
    discounted_cost, perturbation_convergence, simulate_variational, variational_inequality_lhs,
    ControlProcess, CostForm,
};
use crate::error::{Error, Result};
use crate::forward::{
    check_decay, forward_apriori_est1, highorder_bound_check, simulate_forward, weighted_moment,
    Measure, MomentKind,
};
use crate::measure::{density_summary, observation_and_density, weak_novikov_estimate};
use crate::model::{
    validate_assumptions, AnalyticUPartials, DecayRates, DiscountProfile, GrowthMode, Lipschitz,
    MarkSpace, ModelSpec, TimeGrid,
};
use crate::noise::sample_noise;
use crate::stats::mean;

/// A shipped problem instance: model, mark space, candidate control, and
/// default experiment sizes.
#[derive(Clone)]
pub struct Preset {
    pub name: &'static str,
    pub spec: ModelSpec,
    pub marks: MarkSpace,
    pub u_bar: ControlProcess,
    pub grid: TimeGrid,
    pub n_paths: usize,
    /// Search grid for the constant-control oracle; a subset of the control
    /// set.
    pub u_grid: Vec<f64>,
}

pub mod presets {
    use super::*;

    pub const NAMES: [&str; 7] = [
        "zero",
        "ou-forward",
        "linear-bsde",
        "jump-linear",
        "lq-scalar",
        "lq-scalar-boundary",
        "bounded-h-girsanov",
    ];

    fn u_range(lo: f64, step: f64, count: usize) -> Vec<f64> {
        (0..=count).map(|i| lo + step * i as f64).collect()
    }

    fn base_decay() -> DecayRates {
        DecayRates {
            k0: 0.0,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            mu0: 0.0,
        }
    }

    fn zero() -> Preset {
        Preset {
            name: "zero",
            spec: ModelSpec {
                drift_b: Arc::new(|_, _, _| 0.0),
                diff_sigma: Arc::new(|_, _, _| 0.0),
                diff_sigma_tilde: Arc::new(|_, _, _| 0.0),
                jump_l: Arc::new(|_, _, _, _| 0.0),
                generator_g: Arc::new(|_, _, _, _, _, _, _| 0.0),
                running_cost_f: Arc::new(|_, _, _, _, _, _| 0.0),
                initial_cost_phi: Arc::new(|_| 0.0),
                observation_h: Arc::new(|_, _| 0.0),
                mu1: 0.0,
                mu2: -1.0,
                lipschitz: Lipschitz {
                    l_b: 0.0,
                    l_sigma: 0.0,
                    l_sigma_tilde: 0.0,
                    l_l: 0.0,
                },
                decay_rates: base_decay(),
                beta: 1.0,
                x0: 0.0,
                growth_mode: GrowthMode::H1,
                analytic_u: AnalyticUPartials::default(),
            },
            marks: MarkSpace::empty(),
            u_bar: ControlProcess::constant(0.0),
            grid: TimeGrid {
                horizon_t: 4.0,
                n_steps: 100,
            },
            n_paths: 256,
            u_grid: u_range(-1.0, 0.1, 20),
        }
    }

    /// Ornstein-Uhlenbeck forward state with an autonomous linear backward
    /// equation; the workhorse for closed-form checks.
    fn ou_forward() -> Preset {
        Preset {
            name: "ou-forward",
            spec: ModelSpec {
                drift_b: Arc::new(|x, _, _| -x),
                diff_sigma: Arc::new(|_, _, _| 0.5),
                diff_sigma_tilde: Arc::new(|_, _, _| 0.0),
                jump_l: Arc::new(|_, _, _, _| 0.0),
                generator_g: Arc::new(|_, y, _, _, _, _, _| -2.0 * y),
                running_cost_f: Arc::new(|x, _, _, _, _, u| x * x + u * u),
                initial_cost_phi: Arc::new(|y| y * y),
                observation_h: Arc::new(|_, _| 0.0),
                mu1: -1.0,
                mu2: -2.0,
                lipschitz: Lipschitz {
                    l_b: 1.0,
                    l_sigma: 0.0,
                    l_sigma_tilde: 0.0,
                    l_l: 0.0,
                },
                decay_rates: base_decay(),
                beta: 1.0,
                x0: 1.0,
                growth_mode: GrowthMode::H1,
                analytic_u: AnalyticUPartials::default(),
            },
            marks: MarkSpace::empty(),
            u_bar: ControlProcess::constant(0.0),
            grid: TimeGrid {
                horizon_t: 8.0,
                n_steps: 400,
            },
            n_paths: 2000,
            u_grid: u_range(-1.0, 0.1, 20),
        }
    }

    /// Same state as "ou-forward" with an affine generator; the truncated
    /// value solves a scalar ODE with fixed point 1/2.
    fn linear_bsde() -> Preset {
        let mut p = ou_forward();
        p.name = "linear-bsde";
        p.spec.generator_g = Arc::new(|_, y, _, _, _, _, _| 1.0 - 2.0 * y);
        p
    }

    /// One-mark jump model with control in the drift and mild couplings in
    /// every coefficient.
    fn jump_linear() -> Preset {
        Preset {
            name: "jump-linear",
            spec: ModelSpec {
                drift_b: Arc::new(|x, u, _| -x + u),
                diff_sigma: Arc::new(|_, _, _| 0.3),
                diff_sigma_tilde: Arc::new(|_, _, t| 0.2 * (-0.25 * t).exp()),
                jump_l: Arc::new(|x, _, e, _| 0.1 * e + 0.05 * x.tanh()),
                generator_g: Arc::new(|x, y, z, _, _, _, _| -2.0 * y + 0.5 * x + 0.1 * z),
                running_cost_f: Arc::new(|x, _, _, _, _, u| x * x + u * u),
                initial_cost_phi: Arc::new(|y| y * y),
                observation_h: Arc::new(|x, _| 0.4 * x.tanh()),
                mu1: -1.0,
                mu2: -2.0,
                lipschitz: Lipschitz {
                    l_b: 1.0,
                    l_sigma: 0.0,
                    l_sigma_tilde: 0.0,
                    l_l: 0.05,
                },
                decay_rates: DecayRates {
                    mu0: 0.5,
                    ..base_decay()
                },
                beta: 1.0,
                x0: 0.5,
                growth_mode: GrowthMode::H1,
                analytic_u: AnalyticUPartials::default(),
            },
            marks: MarkSpace::new(vec![1.0], vec![0.5]).expect("valid marks"),
            u_bar: ControlProcess::constant(0.2),
            grid: TimeGrid {
                horizon_t: 8.0,
                n_steps: 400,
            },
            n_paths: 2000,
            u_grid: u_range(-1.0, 0.1, 20),
        }
    }

    /// Scalar control instance for the maximum principle. The tanh bump in
    /// the drift is centred far from the operating region, so the local
    /// slope stays -2 while the global monotonicity constant is -1; this
    /// makes the prescribed discount of the joint solvability condition
    /// equal beta = 1/2.
    fn lq_scalar() -> Preset {
        Preset {
            name: "lq-scalar",
            spec: ModelSpec {
                drift_b: Arc::new(|x, u, _| -2.0 * x + u + 0.5 * ((2.0 * (x - 4.0)).tanh() + 1.0)),
                diff_sigma: Arc::new(|_, _, _| 0.3),
                diff_sigma_tilde: Arc::new(|_, _, t| 0.2 * (-0.25 * t).exp()),
                jump_l: Arc::new(|_, _, _, _| 0.0),
                generator_g: Arc::new(|_, y, _, _, _, _, _| -2.0 * y),
                running_cost_f: Arc::new(|x, _, _, _, _, u| 0.5 * u * u + x),
                initial_cost_phi: Arc::new(|y| y),
                observation_h: Arc::new(|_, _| 0.5),
                mu1: -1.0,
                mu2: -2.0,
                lipschitz: Lipschitz {
                    l_b: 2.0,
                    l_sigma: 0.0,
                    l_sigma_tilde: 0.0,
                    l_l: 0.0,
                },
                decay_rates: DecayRates {
                    mu0: 0.5,
                    ..base_decay()
                },
                beta: 0.5,
                x0: 0.0,
                growth_mode: GrowthMode::H1,
                analytic_u: AnalyticUPartials::default(),
            },
            marks: MarkSpace::empty(),
            u_bar: ControlProcess::constant(-0.4).with_bounds(-2.0, 2.0),
            grid: TimeGrid {
                horizon_t: 8.0,
                n_steps: 400,
            },
            n_paths: 2000,
            u_grid: u_range(-1.0, 0.05, 30),
        }
    }

    /// Boundary-optimum variant of "lq-scalar": the control set [0, 1]
    /// excludes the interior stationary point, pushing the optimum to 0.
    fn lq_scalar_boundary() -> Preset {
        let mut p = lq_scalar();
        p.name = "lq-scalar-boundary";
        p.u_bar = ControlProcess::constant(0.0).with_bounds(0.0, 1.0);
        p.u_grid = u_range(0.0, 0.05, 20);
        p
    }

    /// Bounded observation drift so the density is a true martingale; used
    /// for the change-of-measure diagnostics.
    fn bounded_h_girsanov() -> Preset {
        Preset {
            name: "bounded-h-girsanov",
            spec: ModelSpec {
                drift_b: Arc::new(|x, _, _| -x),
                diff_sigma: Arc::new(|_, _, _| 0.4),
                diff_sigma_tilde: Arc::new(|_, _, t| 0.3 * (-0.25 * t).exp()),
                jump_l: Arc::new(|_, _, _, _| 0.0),
                generator_g: Arc::new(|_, y, _, _, _, _, _| -2.0 * y),
                running_cost_f: Arc::new(|x, _, _, _, _, _| x * x),
                initial_cost_phi: Arc::new(|y| y),
                observation_h: Arc::new(|x, _| x.tanh()),
                mu1: -1.0,
                mu2: -2.0,
                lipschitz: Lipschitz {
                    l_b: 1.0,
                    l_sigma: 0.0,
                    l_sigma_tilde: 0.0,
                    l_l: 0.0,
                },
                decay_rates: DecayRates {
                    mu0: 0.5,
                    ..base_decay()
                },
                beta: 1.0,
                x0: 1.0,
                growth_mode: GrowthMode::H1,
                analytic_u: AnalyticUPartials::default(),
            },
            marks: MarkSpace::empty(),
            u_bar: ControlProcess::constant(0.0),
            grid: TimeGrid {
                horizon_t: 6.0,
                n_steps: 300,
            },
            n_paths: 4000,
            u_grid: u_range(-1.0, 0.1, 20),
        }
    }

    pub fn preset(name: &str) -> Result<Preset> {
        match name {
            "zero" => Ok(zero()),
            "ou-forward" => Ok(ou_forward()),
            "linear-bsde" => Ok(linear_bsde()),
            "jump-linear" => Ok(jump_linear()),
            "lq-scalar" => Ok(lq_scalar()),
            "lq-scalar-boundary" => Ok(lq_scalar_boundary()),
            "bounded-h-girsanov" => Ok(bounded_h_girsanov()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset '{other}'; shipped: {NAMES:?}"),
            )),
        }
    }
}

/// JSON experiment description. Every field except the preset name is
/// optional and falls back to the preset default.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default)]
    pub grid: Option<TimeGrid>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub profile: Option<DiscountProfile>,
    #[serde(default)]
    pub basis: Option<RegressionBasis>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// One experiment per CLI subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    Validate,
    Simulate,
    SolveBsde,
    Estimates,
    Variational,
    Adjoint,
    MaxPrinciple,
    Oracle,
}

impl ExperimentKind {
    pub fn slug(&self) -> &'static str {
        match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SolveBsde => "solve-bsde",
            ExperimentKind::Estimates => "estimates",
            ExperimentKind::Variational => "variational",
            ExperimentKind::Adjoint => "adjoint",
            ExperimentKind::MaxPrinciple => "max-principle",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

/// Where the artifacts landed plus the in-memory report.
#[derive(Clone, Debug)]
pub struct ReportSet {
    pub out_dir: PathBuf,
    pub report: serde_json::Value,
    pub csv_files: Vec<PathBuf>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Writes one CSV with a header row, scientific full-precision values, and LF
/// newlines; byte-identical across runs with identical inputs.
fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Resolved {
    preset: Preset,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    profile: DiscountProfile,
    basis: RegressionBasis,
    epsilons: Vec<f64>,
    horizons: Vec<f64>,
    out_dir: PathBuf,
}

fn resolve(config: &ExperimentConfig, kind: ExperimentKind) -> Result<Resolved> {
    let preset = presets::preset(&config.preset)?;
    let grid = config.grid.unwrap_or(preset.grid);
    TimeGrid::new(grid.horizon_t, grid.n_steps)?;
    let n_paths = config.n_paths.unwrap_or(preset.n_paths);
    if n_paths == 0 {
        return Err(Error::config("n_paths", "must be positive"));
    }
    let horizons = config
        .horizons
        .clone()
        .unwrap_or_else(|| vec![grid.horizon_t / 4.0, grid.horizon_t / 2.0, grid.horizon_t]);
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("horizons", "must be strictly increasing"));
    }
    if horizons.last().copied().unwrap_or(0.0) > grid.horizon_t + 1e-12 {
        return Err(Error::config("horizons", "exceed the simulated horizon"));
    }
    let epsilons = config
        .epsilons
        .clone()
        .unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]);
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::config("epsilons", "must be positive"));
    }
    let out_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"))
        .join(kind.slug());
    Ok(Resolved {
        grid,
        n_paths,
        seed: config.seed.unwrap_or(0),
        profile: config
            .profile
            .unwrap_or_else(|| DiscountProfile::uniform(preset.spec.beta)),
        basis: config.basis.unwrap_or_default(),
        epsilons,
        horizons,
        out_dir,
        preset,
    })
}

fn probe_points(spec: &ModelSpec, u_bar: &ControlProcess, horizon: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let (lo, hi) = u_bar.bounds().unwrap_or((-1.0, 1.0));
    for &dx in &[-1.5, -0.5, 0.0, 0.5, 1.5] {
        for &u in &[lo, 0.5 * (lo + hi), hi] {
            for &t in &[0.0, 0.25 * horizon, 0.5 * horizon, horizon] {
                out.push((spec.x0 + dx, u, t));
            }
        }
    }
    out
}

/// Runs one experiment deterministically and writes manifest + artifacts.
pub fn run_experiment(config: &ExperimentConfig, kind: ExperimentKind) -> Result<ReportSet> {
    let r = resolve(config, kind)?;
    std::fs::create_dir_all(&r.out_dir)?;
    let config_json = serde_json::to_string(config)?;
    let manifest = json!({
        "kind": kind.slug(),
        "preset": r.preset.name,
        "seed": r.seed,
        "config_hash": format!("{:016x}", fnv1a(config_json.as_bytes())),
        "grid": r.grid,
        "n_paths": r.n_paths,
    });
    std::fs::write(
        r.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let mut csv_files = Vec::new();
    let report = match kind {
        ExperimentKind::Validate => {
            let probes = probe_points(&r.preset.spec, &r.preset.u_bar, r.grid.horizon_t);
            let report = validate_assumptions(&r.preset.spec, &r.profile, &probes)?;
            let value = report.to_json();
            std::fs::write(
                r.out_dir.join("validation.json"),
                serde_json::to_string_pretty(&value)?,
            )?;
            if !report.all_pass() {
                let names: Vec<String> = report
                    .failures()
                    .iter()
                    .map(|f| f.assumption.clone())
                    .collect();
                return Err(Error::AssumptionsViolated(names.join("; ")));
            }
            value
        }
        ExperimentKind::Simulate => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let fwd_pbar = simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PBar)?;
            let fwd_p =
                simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PTransformed)?;
            let mut rows = Vec::with_capacity(r.grid.n_steps + 1);
            for j in 0..=r.grid.n_steps {
                let col_pbar: Vec<f64> = fwd_pbar.x.iter().map(|row| row[j]).collect();
                let col_p: Vec<f64> = fwd_p.x.iter().map(|row| row[j]).collect();
                let m1 = mean(&col_pbar);
                let m2 = mean(&col_p);
                let v1 = mean(&col_pbar.iter().map(|&v| (v - m1) * (v - m1)).collect::<Vec<_>>());
                let v2 = mean(&col_p.iter().map(|&v| (v - m2) * (v - m2)).collect::<Vec<_>>());
                rows.push(vec![r.grid.t(j), m1, v1, m2, v2]);
            }
            let csv = r.out_dir.join("forward_summary.csv");
            write_csv(
                &csv,
                &["t", "mean_pbar", "var_pbar", "mean_p", "var_p"],
                &rows,
            )?;
            csv_files.push(csv);
            let decay = check_decay(&fwd_pbar, r.preset.spec.beta);
            json!({
                "sup_of_mean": weighted_moment(&fwd_pbar, r.preset.spec.beta, 1, MomentKind::SupOfMean),
                "integral": weighted_moment(&fwd_pbar, r.preset.spec.beta, 1, MomentKind::Integral),
                "decay_rate": decay.fitted_rate,
            })
        }
        ExperimentKind::SolveBsde => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let fwd =
                simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PTransformed)?;
            let mut solutions = Vec::new();
            let mut rows = Vec::new();
            for &n in &r.horizons {
                let sol = solve_bsdep_zero_terminal(
                    &r.preset.spec,
                    &r.preset.u_bar,
                    &fwd,
                    &bundle,
                    n,
                    &r.basis,
                )?;
                let y0 = mean(&sol.y.iter().map(|row| row[0]).collect::<Vec<_>>());
                rows.push(vec![n, y0]);
                solutions.push((n, sol));
            }
            let mut gaps = Vec::new();
            for w in solutions.windows(2) {
                let g = truncation_gap(&w[0].1, &w[1].1, &bundle, r.preset.spec.beta);
                gaps.push(json!({"n_low": w[0].0, "n_high": w[1].0, "gap": g.total()}));
            }
            let zeta: crate::backward::TerminalFn = Arc::new(|_, _| 0.0);
            let scheme_gap = compare_schemes(
                &r.preset.spec,
                &r.preset.u_bar,
                &fwd,
                &bundle,
                *r.horizons.last().expect("non-empty"),
                &zeta,
                &r.basis,
            )?;
            let csv = r.out_dir.join("y0_by_horizon.csv");
            write_csv(&csv, &["n", "y0"], &rows)?;
            csv_files.push(csv);
            json!({
                "truncation_gaps": gaps,
                "scheme_gap_zero_zeta": scheme_gap.total(),
            })
        }
        ExperimentKind::Estimates => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let fwd = simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PBar)?;
            let est1 = forward_apriori_est1(&r.preset.spec, &r.preset.u_bar, &bundle, 0.1)?;
            let k1 = highorder_bound_check(&fwd, &r.preset.u_bar, &r.preset.spec, &bundle, &r.profile, 1)?;
            let k2 = highorder_bound_check(&fwd, &r.preset.u_bar, &r.preset.spec, &bundle, &r.profile, 2)?;
            // Stability against a constant generator shift.
            let mut spec2 = r.preset.spec.clone();
            let g1 = r.preset.spec.generator_g.clone();
            spec2.generator_g = Arc::new(move |x, y, z, zt, gi, u, t| g1(x, y, z, zt, gi, u, t) + 0.3);
            let fwd_p =
                simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PTransformed)?;
            let stab = backward_stability(
                &r.preset.spec,
                &spec2,
                &r.preset.u_bar,
                &fwd_p,
                &bundle,
                r.grid.horizon_t,
                &r.basis,
                0.5,
            )?;
            let novikov = weak_novikov_estimate(&fwd, &r.preset.u_bar, &r.preset.spec);
            json!({
                "est1": est1,
                "highorder_k1": k1,
                "highorder_k2": k2,
                "stability": stab,
                "novikov": novikov,
            })
        }
        ExperimentKind::Variational => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let v = ControlProcess::constant(1.0);
            let table = perturbation_convergence(
                &r.preset.spec,
                &r.preset.u_bar,
                &v,
                &bundle,
                &r.epsilons,
                r.grid.horizon_t,
                &r.basis,
            )?;
            let rows: Vec<Vec<f64>> = table
                .rows
                .iter()
                .enumerate()
                .map(|(i, row)| vec![i as f64, row.epsilon, row.value])
                .collect();
            let csv = r.out_dir.join("rates.csv");
            write_csv(&csv, &["row", "epsilon", "value"], &rows)?;
            csv_files.push(csv);

            let fwd =
                simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PTransformed)?;
            let bwd = solve_bsdep_zero_terminal(
                &r.preset.spec,
                &r.preset.u_bar,
                &fwd,
                &bundle,
                r.grid.horizon_t,
                &r.basis,
            )?;
            let (_, density) =
                observation_and_density(&fwd, &r.preset.u_bar, &r.preset.spec, &bundle)?;
            let var = simulate_variational(
                &r.preset.spec,
                &r.preset.u_bar,
                &v,
                &fwd,
                &bwd,
                &density,
                &bundle,
            )?;
            let (lhs, lhs_stderr) = variational_inequality_lhs(
                &r.preset.spec,
                &bundle,
                &r.preset.u_bar,
                &v,
                &fwd,
                &bwd,
                &density,
                &var,
            );
            json!({
                "slopes": table.slopes,
                "inequality_lhs": lhs,
                "inequality_stderr": lhs_stderr,
            })
        }
        ExperimentKind::Adjoint => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let fwd =
                simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PTransformed)?;
            let bwd = solve_bsdep_zero_terminal(
                &r.preset.spec,
                &r.preset.u_bar,
                &fwd,
                &bundle,
                r.grid.horizon_t,
                &r.basis,
            )?;
            let (xi, density) =
                observation_and_density(&fwd, &r.preset.u_bar, &r.preset.spec, &bundle)?;
            let traj = OptimalTrajectory {
                fwd: &fwd,
                bwd: &bwd,
                control: &r.preset.u_bar,
                density: &density,
                xi: &xi,
                bundle: &bundle,
            };
            let adj = solve_adjoints(&r.preset.spec, &traj, r.grid.horizon_t, &r.basis)?;
            let bounds = estimate_sc_bounds(&r.preset.spec, &traj);
            let sc = sufficient_condition_check(&r.preset.spec, &bounds);
            let v = ControlProcess::constant(1.0);
            let var = simulate_variational(
                &r.preset.spec,
                &r.preset.u_bar,
                &v,
                &fwd,
                &bwd,
                &density,
                &bundle,
            )?;
            let tails = transversality_check(&adj, &var, r.preset.spec.beta, r.grid);
            let mut rows = Vec::new();
            for (j, &t) in tails[0].times.iter().enumerate() {
                rows.push(vec![
                    t,
                    tails[0].values[j],
                    tails[1].values[j],
                    tails[2].values[j],
                ]);
            }
            let csv = r.out_dir.join("transversality.csv");
            write_csv(&csv, &["t", "p_y1", "Q_Z1", "q_x1"], &rows)?;
            csv_files.push(csv);
            let residual = duality_residual(&r.preset.spec, &traj, &var, &adj, &v, r.grid.horizon_t)?;
            json!({
                "sufficient_condition": sc,
                "transversality": tails.iter().map(|t| json!({
                    "name": t.name, "peak": t.peak, "fitted_rate": t.fitted_rate,
                })).collect::<Vec<_>>(),
                "duality_residual": residual,
                "density_summary": density_summary(&density, r.grid, r.grid.n_steps / 2),
            })
        }
        ExperimentKind::MaxPrinciple => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let fwd =
                simulate_forward(&r.preset.spec, &r.preset.u_bar, &bundle, Measure::PTransformed)?;
            let bwd = solve_bsdep_zero_terminal(
                &r.preset.spec,
                &r.preset.u_bar,
                &fwd,
                &bundle,
                r.grid.horizon_t,
                &r.basis,
            )?;
            let (xi, density) =
                observation_and_density(&fwd, &r.preset.u_bar, &r.preset.spec, &bundle)?;
            let traj = OptimalTrajectory {
                fwd: &fwd,
                bwd: &bwd,
                control: &r.preset.u_bar,
                density: &density,
                xi: &xi,
                bundle: &bundle,
            };
            let adj = solve_adjoints(&r.preset.spec, &traj, r.grid.horizon_t, &r.basis)?;
            let stride = (r.grid.n_steps / 32).max(1);
            let report = maximum_condition_test(&r.preset.spec, &traj, &adj, stride)?;
            let rows: Vec<Vec<f64>> = report
                .profile
                .iter()
                .map(|s| vec![s.t, s.estimate, s.stderr, s.min_fitted, s.max_fitted])
                .collect();
            let csv = r.out_dir.join("hu_profile.csv");
            write_csv(
                &csv,
                &["t", "estimate", "stderr", "min_fitted", "max_fitted"],
                &rows,
            )?;
            csv_files.push(csv);
            json!({ "violation_score": report.violation_score })
        }
        ExperimentKind::Oracle => {
            let bundle = sample_noise(r.seed, r.n_paths, r.grid, &r.preset.marks)?;
            let grid_result = oracle_constant_control(&r.preset.spec, &bundle, &r.preset.u_grid)?;
            let mut report = json!({ "constant_grid": grid_result });
            if r.preset.name.starts_with("lq-scalar") {
                let riccati = oracle_riccati_lq(-2.0, 0.3, r.preset.spec.beta, 1.0, 1.0)?;
                report["riccati"] = serde_json::to_value(&riccati)?;
            }
            report
        }
    };

    std::fs::write(
        r.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(ReportSet {
        out_dir: r.out_dir,
        report,
        csv_files,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OracleMethod {
    ConstantGrid,
    RiccatiOde,
    DenseOde,
}

/// Independent reference answer. For the grid oracle `u_star` is the refined
/// constant control; for the Riccati oracle it is the feedback gain.
#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub u_star: f64,
    pub j_star: f64,
    pub search_grid: String,
    pub method: OracleMethod,
    /// Set when the cost landscape is constant over the grid (ties broken
    /// toward the smallest |u|).
    pub flat: bool,
}

/// Brute-force constant-control search on common random numbers with a local
/// quadratic refinement around the grid argmin. Uses only the forward
/// simulator and the plain cost form.
pub fn oracle_constant_control(
    spec: &ModelSpec,
    bundle: &crate::noise::NoiseBundle,
    u_grid: &[f64],
) -> Result<OracleResult> {
    if u_grid.is_empty() {
        return Err(Error::config("u_grid", "must be non-empty"));
    }
    let eval = |u: f64| -> Result<f64> {
        let control = ControlProcess::constant(u);
        let fwd = simulate_forward(spec, &control, bundle, Measure::PBar)?;
        Ok(discounted_cost(spec, &control, &fwd, None, None, bundle, CostForm::OriginalPbar)?.j)
    };
    let mut costs = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        costs.push(eval(u)?);
    }
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat = (max - min).abs() <= 1e-12 * (1.0 + min.abs());
    let best = if flat {
        // Flat landscape: tie toward the smallest |u|.
        (0..u_grid.len())
            .min_by(|&a, &b| u_grid[a].abs().partial_cmp(&u_grid[b].abs()).expect("finite"))
            .expect("non-empty")
    } else {
        (0..u_grid.len())
            .min_by(|&a, &b| costs[a].partial_cmp(&costs[b]).expect("finite"))
            .expect("non-empty")
    };
    let mut u_star = u_grid[best];
    let mut j_star = costs[best];
    if !flat && best > 0 && best + 1 < u_grid.len() {
        // Quadratic refinement through the argmin and its neighbours.
        let (u0, u1, u2) = (u_grid[best - 1], u_grid[best], u_grid[best + 1]);
        let (c0, c1, c2) = (costs[best - 1], costs[best], costs[best + 1]);
        let denom = (u0 - u1) * (u0 - u2) * (u1 - u2);
        if denom.abs() > 1e-15 {
            let a = (u2 * (c1 - c0) + u1 * (c0 - c2) + u0 * (c2 - c1)) / denom;
            let b = (u2 * u2 * (c0 - c1) + u1 * u1 * (c2 - c0) + u0 * u0 * (c1 - c2)) / denom;
            if a > 0.0 {
                let vertex = (-b / (2.0 * a)).clamp(u0, u2);
                let jv = eval(vertex)?;
                if jv < j_star {
                    u_star = vertex;
                    j_star = jv;
                }
            }
        }
    }
    Ok(OracleResult {
        u_star,
        j_star,
        search_grid: format!(
            "{} constant controls in [{:?}, {:?}]",
            u_grid.len(),
            u_grid.first().expect("non-empty"),
            u_grid.last().expect("non-empty"),
        ),
        method: OracleMethod::ConstantGrid,
        flat,
    })
}

/// Classical discounted scalar LQ reference: dx = (a x + u) dt + sigma dW,
/// cost E Int e^{-beta t} (q x^2 + r u^2) dt. Integrates the Riccati ODE to
/// stationarity and verifies the algebraic equation by plug-back.
pub fn oracle_riccati_lq(
    a: f64,
    sigma: f64,
    beta: f64,
    state_weight: f64,
    control_weight: f64,
) -> Result<OracleResult> {
    if !(control_weight > 0.0) {
        return Err(Error::config("control_weight", "must be positive"));
    }
    let rhs = |p: f64| (2.0 * a - beta) * p - p * p / control_weight + state_weight;
    let mut p = 0.0f64;
    let dt = 1e-3;
    for _ in 0..20_000_000 {
        let dp = rhs(p);
        if dp.abs() < 1e-13 {
            break;
        }
        p += dp * dt;
        if !p.is_finite() || p.abs() > 1e12 {
            return Err(Error::NoStabilizingSolution);
        }
    }
    if rhs(p).abs() >= 1e-10 || p < -1e-12 {
        return Err(Error::NoStabilizingSolution);
    }
    let gain = p / control_weight;
    // Value at x0 = 1: P + sigma^2 P / beta (the constant solves beta c =
    // sigma^2 P).
    let j_star = if beta > 0.0 {
        p + sigma * sigma * p / beta
    } else {
        f64::INFINITY
    };
    Ok(OracleResult {
        u_star: gain,
        j_star,
        search_grid: format!("riccati ODE to stationarity (a={a}, beta={beta})"),
        method: OracleMethod::RiccatiOde,
        flat: state_weight == 0.0,
    })
}

/// Smallest truncation horizon n with e^{-beta n} * scale < tol, clamped to
/// [0, cap].
pub fn suggest_truncation_horizon(beta: f64, scale: f64, tol: f64, cap: f64) -> f64 {
    assert!(beta > 0.0 && scale > 0.0 && tol > 0.0 && cap >= 0.0);
    if tol >= scale {
        return 0.0;
    }
    ((scale / tol).ln() / beta).min(cap)
}
