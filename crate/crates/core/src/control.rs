//! Admissible controls, the discounted cost functional, and the convex
//! perturbation / variational machinery.

use serde::Serialize;
use std::sync::Arc;

use crate::backward::{
    solve_bsdep_zero_terminal, sweep, BackwardSolution, RegressionBasis, SweepParts, SweepProblem,
};
use crate::error::{Error, Result};
use crate::forward::{simulate_forward, ForwardPath, Measure};
use crate::measure::{observation_and_density, DensityPath};
use crate::model::{GenArgs, ModelSpec};
use crate::noise::NoiseBundle;
use crate::regress::poly_features;
use crate::stats::{log_log_slope, mean, mean_stderr};

#[derive(Clone)]
enum ControlKind {
    Constant(f64),
    OpenLoop(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Feedback(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// base + scale * direction, for convex perturbations u + eps v.
    Perturbed {
        base: Box<ControlProcess>,
        direction: Box<ControlProcess>,
        scale: f64,
    },
}

/// A control evaluated along simulated paths. Values are clamped to the
/// convex set [u_lo, u_hi] when bounds are attached.
#[derive(Clone)]
pub struct ControlProcess {
    kind: ControlKind,
    bounds: Option<(f64, f64)>,
}

impl ControlProcess {
    pub fn constant(u: f64) -> Self {
        ControlProcess {
            kind: ControlKind::Constant(u),
            bounds: None,
        }
    }

    pub fn open_loop(f: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Self {
        ControlProcess {
            kind: ControlKind::OpenLoop(f),
            bounds: None,
        }
    }

    /// Full-observation feedback; admissible only in oracle runs.
    pub fn feedback(f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>) -> Self {
        ControlProcess {
            kind: ControlKind::Feedback(f),
            bounds: None,
        }
    }

    pub fn perturbed(base: &ControlProcess, direction: &ControlProcess, scale: f64) -> Self {
        ControlProcess {
            kind: ControlKind::Perturbed {
                base: Box::new(base.clone()),
                direction: Box::new(direction.clone()),
                scale,
            },
            bounds: base.bounds,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        assert!(lo <= hi);
        self.bounds = Some((lo, hi));
        self
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let raw = match &self.kind {
            ControlKind::Constant(u) => *u,
            ControlKind::OpenLoop(f) => f(t),
            ControlKind::Feedback(f) => f(t, x),
            ControlKind::Perturbed {
                base,
                direction,
                scale,
            } => base.eval(t, x) + scale * direction.eval(t, x),
        };
        match self.bounds {
            Some((lo, hi)) => raw.clamp(lo, hi),
            None => raw,
        }
    }
}

/// Which form of the cost functional is evaluated; the two agree by the
/// change of measure when the artifacts are consistent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CostForm {
    /// Plain discounted expectation; forward paths simulated under the
    /// original measure.
    OriginalPbar,
    /// Density-reweighted expectation from transformed-measure paths.
    TransformedP,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CostReport {
    pub j: f64,
    pub stderr: f64,
    pub form: CostForm,
    pub n_paths: usize,
}

/// Cost integrand arguments along one path/step, from the solved artifacts
/// (zeros when no backward solution is supplied).
fn backward_args(
    bwd: Option<&BackwardSolution>,
    bundle: &NoiseBundle,
    p: usize,
    j: usize,
) -> (f64, f64, f64, f64) {
    match bwd {
        Some(sol) => (
            sol.y[p][j],
            sol.z[p][j],
            sol.z_tilde[p][j],
            sol.gamma_nu(bundle, p, j),
        ),
        None => (0.0, 0.0, 0.0, 0.0),
    }
}

/// Discounted cost J = E[Int e^{-beta t} f dt + phi(y_0)] in either form.
pub fn discounted_cost(
    spec: &ModelSpec,
    control: &ControlProcess,
    fwd: &ForwardPath,
    bwd: Option<&BackwardSolution>,
    density: Option<&DensityPath>,
    bundle: &NoiseBundle,
    form: CostForm,
) -> Result<CostReport> {
    let grid = fwd.grid;
    let dt = grid.dt();
    let mut per_path = Vec::with_capacity(fwd.n_paths());
    for p in 0..fwd.n_paths() {
        let mut acc = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let x = fwd.x[p][j];
            let u = control.eval(t, x);
            let (y, z, zt, gi) = backward_args(bwd, bundle, p, j);
            let f = spec.f(x, y, z, zt, gi, u);
            let weight = match form {
                CostForm::OriginalPbar => 1.0,
                CostForm::TransformedP => {
                    density
                        .ok_or_else(|| {
                            Error::config("density", "transformed cost form needs a density")
                        })?
                        .z[p][j]
                }
            };
            acc += (-spec.beta * t).exp() * weight * f * dt;
        }
        let y0 = backward_args(bwd, bundle, p, 0).0;
        acc += spec.phi(y0);
        if !acc.is_finite() {
            return Err(Error::NonFiniteCost);
        }
        per_path.push(acc);
    }
    let (j, stderr) = mean_stderr(&per_path);
    Ok(CostReport {
        j,
        stderr,
        form,
        n_paths: per_path.len(),
    })
}

/// Admissibility: the discounted control moment is finite and stable when the
/// horizon doubles (from T/2 to T on the simulated grid).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub moment: f64,
    pub half_horizon_moment: f64,
}

pub fn admissibility_check(
    control: &ControlProcess,
    fwd: &ForwardPath,
    beta1: f64,
    k: u32,
) -> AdmissibilityReport {
    assert!(k >= 1);
    let grid = fwd.grid;
    let dt = grid.dt();
    let half = grid.n_steps / 2;
    let p2k = (2 * k) as i32;
    let mut full = Vec::with_capacity(fwd.n_paths());
    let mut halfm = Vec::with_capacity(fwd.n_paths());
    for row in &fwd.x {
        let mut acc = 0.0;
        let mut acc_half = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let u = control.eval(t, row[j]);
            acc += (-beta1 * k as f64 * t).exp() * u.powi(p2k) * dt;
            if j + 1 == half {
                acc_half = acc;
            }
        }
        full.push(acc);
        halfm.push(acc_half);
    }
    let moment = mean(&full);
    let half_horizon_moment = mean(&halfm);
    let tail = moment - half_horizon_moment;
    let admissible = moment.is_finite() && tail <= 0.5 * half_horizon_moment + 1e-12;
    AdmissibilityReport {
        admissible,
        moment,
        half_horizon_moment,
    }
}

/// Linearized state, backward, and density responses to a perturbation
/// direction v around the candidate control.
#[derive(Clone, Debug)]
pub struct VariationalBundle {
    pub x1: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    pub z1: Vec<Vec<f64>>,
    pub z_tilde1: Vec<Vec<f64>>,
    pub gamma1: Vec<Vec<Vec<f64>>>,
    pub density1: Vec<Vec<f64>>,
}

impl VariationalBundle {
    pub fn gamma1_nu(&self, bundle: &NoiseBundle, p: usize, j: usize) -> f64 {
        self.gamma1[p][j]
            .iter()
            .zip(&bundle.marks.intensities)
            .map(|(&g, &nu)| g * nu)
            .sum()
    }
}

/// Simulates the variational system along the candidate trajectory: forward
/// Euler for the state and density responses, regression sweep for the
/// backward response with the linearized generator.
pub fn simulate_variational(
    spec: &ModelSpec,
    u_bar: &ControlProcess,
    v: &ControlProcess,
    fwd_bar: &ForwardPath,
    bwd_bar: &BackwardSolution,
    density_bar: &DensityPath,
    bundle: &NoiseBundle,
) -> Result<VariationalBundle> {
    let grid = fwd_bar.grid;
    let dt = grid.dt();
    let n_paths = fwd_bar.n_paths();
    let mut x1 = vec![vec![0.0; grid.n_steps + 1]; n_paths];
    let mut density1 = vec![vec![0.0; grid.n_steps + 1]; n_paths];

    for p in 0..n_paths {
        let mut xv = 0.0;
        let mut zv = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let x = fwd_bar.x[p][j];
            let u = u_bar.eval(t, x);
            let vt = v.eval(t, x);
            let jump = bundle.compensated_jump_increment(p, j, |e| {
                spec.l_x(x, u, e, t) * xv + spec.l_u(x, u, e, t) * vt
            });
            let x_next = xv
                + (spec.b_tilde_x(x, u, t) * xv + spec.b_tilde_u(x, u, t) * vt) * dt
                + (spec.sigma_x(x, u, t) * xv + spec.sigma_u(x, u, t) * vt) * bundle.dw[p][j]
                + (spec.sigma_tilde_x(x, u, t) * xv + spec.sigma_tilde_u(x, u, t) * vt)
                    * bundle.dxi[p][j]
                + jump;
            let w = (-0.5 * spec.beta * t).exp();
            let z_next = zv
                + w * (density_bar.z[p][j] * (spec.h_x(x, u) * xv + spec.h_u(x, u) * vt)
                    + spec.h(x, u) * zv)
                    * bundle.dxi[p][j];
            xv = x_next;
            zv = z_next;
            x1[p][j + 1] = xv;
            density1[p][j + 1] = zv;
        }
    }

    // Backward response with the linearized generator, zero terminal at the
    // simulated horizon.
    let features = |p: usize, j: usize| poly_features(&[fwd_bar.x[p][j], x1[p][j]]);
    let driver = |p: usize, j: usize, y1v: f64, z1v: f64, zt1v: f64, g1: &[f64]| {
        let t = grid.t(j);
        let x = fwd_bar.x[p][j];
        let u = u_bar.eval(t, x);
        let a = GenArgs {
            x,
            y: bwd_bar.y[p][j],
            z: bwd_bar.z[p][j],
            zt: bwd_bar.z_tilde[p][j],
            gi: bwd_bar.gamma_nu(bundle, p, j),
            u,
            t,
        };
        let gi1: f64 = g1
            .iter()
            .zip(&bundle.marks.intensities)
            .map(|(&g, &nu)| g * nu)
            .sum();
        spec.g_x(a) * x1[p][j]
            + spec.g_y(a) * y1v
            + spec.g_z(a) * z1v
            + spec.g_zt(a) * zt1v
            + spec.g_gamma(a) * gi1
            + spec.g_u(a) * v.eval(t, x)
    };
    let sol = sweep(&SweepProblem {
        bundle,
        n_sweep: grid.n_steps,
        features: &features,
        driver: &driver,
        terminal: vec![0.0; n_paths],
        parts: SweepParts::all(),
    })?;

    Ok(VariationalBundle {
        x1,
        y1: sol.y,
        z1: sol.z,
        z_tilde1: sol.z_tilde,
        gamma1: sol.gamma,
        density1,
    })
}

/// One weighted norm of a perturbation study.
#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub epsilon: f64,
    pub norm: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// log-log slopes of the first-order differences per norm name.
    pub slopes: Vec<(String, f64)>,
}

impl RateTable {
    pub fn slope(&self, norm: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|(n, _)| n == norm)
            .map(|&(_, s)| s)
    }

    pub fn value(&self, norm: &str, epsilon: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.norm == norm && (r.epsilon - epsilon).abs() < 1e-12)
            .map(|r| r.value)
    }
}

fn weighted_l2_gap(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    grid: crate::model::TimeGrid,
    beta: f64,
) -> f64 {
    let dt = grid.dt();
    let per_path: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| {
            (0..grid.n_steps)
                .map(|j| (-beta * grid.t(j)).exp() * (ra[j] - rb[j]).powi(2) * dt)
                .sum()
        })
        .collect();
    mean(&per_path).sqrt()
}

fn weighted_l2_of(a: &[Vec<f64>], grid: crate::model::TimeGrid, beta: f64) -> f64 {
    let dt = grid.dt();
    let per_path: Vec<f64> = a
        .iter()
        .map(|ra| {
            (0..grid.n_steps)
                .map(|j| (-beta * grid.t(j)).exp() * ra[j].powi(2) * dt)
                .sum()
        })
        .collect();
    mean(&per_path).sqrt()
}

/// Common-random-number perturbation study: first-order gaps Phi^eps - Phi
/// (expected O(eps)) and the remainder (Phi^eps - Phi)/eps - Phi_1 (expected
/// o(1)) across the supplied epsilon ladder.
pub fn perturbation_convergence(
    spec: &ModelSpec,
    u_bar: &ControlProcess,
    v: &ControlProcess,
    bundle: &NoiseBundle,
    epsilons: &[f64],
    truncation_n: f64,
    basis: &RegressionBasis,
) -> Result<RateTable> {
    let grid = bundle.grid;
    let fwd_bar = simulate_forward(spec, u_bar, bundle, Measure::PTransformed)?;
    let bwd_bar = solve_bsdep_zero_terminal(spec, u_bar, &fwd_bar, bundle, truncation_n, basis)?;
    let (_, density_bar) = observation_and_density(&fwd_bar, u_bar, spec, bundle)?;
    let var = simulate_variational(spec, u_bar, v, &fwd_bar, &bwd_bar, &density_bar, bundle)?;

    let mut rows = Vec::new();
    for &eps in epsilons {
        let u_eps = ControlProcess::perturbed(u_bar, v, eps);
        let fwd = simulate_forward(spec, &u_eps, bundle, Measure::PTransformed)?;
        let bwd = solve_bsdep_zero_terminal(spec, &u_eps, &fwd, bundle, truncation_n, basis)?;
        let (_, density) = observation_and_density(&fwd, &u_eps, spec, bundle)?;

        rows.push(RateRow {
            epsilon: eps,
            norm: "x_gap".into(),
            value: weighted_l2_gap(&fwd.x, &fwd_bar.x, grid, spec.beta),
        });
        rows.push(RateRow {
            epsilon: eps,
            norm: "y_gap".into(),
            value: weighted_l2_gap(&bwd.y, &bwd_bar.y, grid, spec.beta),
        });
        rows.push(RateRow {
            epsilon: eps,
            norm: "z_gap".into(),
            value: weighted_l2_gap(&bwd.z, &bwd_bar.z, grid, spec.beta),
        });
        rows.push(RateRow {
            epsilon: eps,
            norm: "z_tilde_gap".into(),
            value: weighted_l2_gap(&bwd.z_tilde, &bwd_bar.z_tilde, grid, spec.beta),
        });
        rows.push(RateRow {
            epsilon: eps,
            norm: "density_gap".into(),
            value: weighted_l2_gap(&density.z, &density_bar.z, grid, spec.beta),
        });

        // Remainders (Phi^eps - Phi)/eps - Phi_1.
        let remainder = |a: &[Vec<f64>], b: &[Vec<f64>], first: &[Vec<f64>]| -> f64 {
            let scaled: Vec<Vec<f64>> = a
                .iter()
                .zip(b)
                .zip(first)
                .map(|((ra, rb), rf)| {
                    ra.iter()
                        .zip(rb)
                        .zip(rf)
                        .map(|((&va, &vb), &vf)| (va - vb) / eps - vf)
                        .collect()
                })
                .collect();
            weighted_l2_of(&scaled, grid, spec.beta)
        };
        rows.push(RateRow {
            epsilon: eps,
            norm: "x_remainder".into(),
            value: remainder(&fwd.x, &fwd_bar.x, &var.x1),
        });
        rows.push(RateRow {
            epsilon: eps,
            norm: "y_remainder".into(),
            value: remainder(&bwd.y, &bwd_bar.y, &var.y1),
        });
        rows.push(RateRow {
            epsilon: eps,
            norm: "density_remainder".into(),
            value: remainder(&density.z, &density_bar.z, &var.density1),
        });
    }

    let names: Vec<String> = {
        let mut seen = Vec::new();
        for r in &rows {
            if !seen.contains(&r.norm) {
                seen.push(r.norm.clone());
            }
        }
        seen
    };
    let slopes = names
        .into_iter()
        .map(|name| {
            let (es, vs): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.norm == name)
                .map(|r| (r.epsilon, r.value))
                .unzip();
            let s = log_log_slope(&es, &vs);
            (name, s)
        })
        .collect();
    Ok(RateTable { rows, slopes })
}

/// Left-hand side of the variational inequality: the derivative of the cost
/// along the direction v assembled from the variational processes.
pub fn variational_inequality_lhs(
    spec: &ModelSpec,
    bundle: &NoiseBundle,
    u_bar: &ControlProcess,
    v: &ControlProcess,
    fwd_bar: &ForwardPath,
    bwd_bar: &BackwardSolution,
    density_bar: &DensityPath,
    var: &VariationalBundle,
) -> (f64, f64) {
    let grid = fwd_bar.grid;
    let dt = grid.dt();
    let mut per_path = Vec::with_capacity(fwd_bar.n_paths());
    for p in 0..fwd_bar.n_paths() {
        let mut acc = spec.phi_y(bwd_bar.y[p][0]) * var.y1[p][0];
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let x = fwd_bar.x[p][j];
            let u = u_bar.eval(t, x);
            let a = GenArgs {
                x,
                y: bwd_bar.y[p][j],
                z: bwd_bar.z[p][j],
                zt: bwd_bar.z_tilde[p][j],
                gi: bwd_bar.gamma_nu(bundle, p, j),
                u,
                t,
            };
            let zb = density_bar.z[p][j];
            let f_bar = spec.f(a.x, a.y, a.z, a.zt, a.gi, a.u);
            let gi1 = var.gamma1_nu(bundle, p, j);
            acc += (-spec.beta * t).exp()
                * (zb * spec.f_x(a) * var.x1[p][j]
                    + zb * spec.f_y(a) * var.y1[p][j]
                    + zb * spec.f_z(a) * var.z1[p][j]
                    + zb * spec.f_zt(a) * var.z_tilde1[p][j]
                    + zb * spec.f_gamma(a) * gi1
                    + f_bar * var.density1[p][j]
                    + zb * spec.f_u(a) * v.eval(t, x))
                * dt;
        }
        per_path.push(acc);
    }
    mean_stderr(&per_path)
}
