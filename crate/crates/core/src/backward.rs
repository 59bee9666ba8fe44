//! Backward equation solvers: truncated regression sweeps with zero or
//! conditional terminal data, plus the gap/stability diagnostics.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::control::ControlProcess;
use crate::error::{Error, Result};
use crate::forward::ForwardPath;
use crate::model::{probed_generator_slopes, ModelSpec};
use crate::noise::NoiseBundle;
use crate::regress::{fit, poly_features};
use crate::stats::mean;

/// Relative Picard-correction change above which the sweep aborts.
pub const PICARD_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Scheme {
    ZeroTerminal,
    ConditionalTerminal,
}

/// Regression basis configuration. Only polynomial bases are shipped; the
/// degree caps the total monomial degree per slice.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: u32,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis { degree: 3 }
    }
}

/// Terminal datum for the conditional scheme: a function of the truncation
/// horizon and the terminal state. F_n-measurability is enforced by the type.
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Solution of a truncated backward equation on the full simulation grid
/// (extended past the truncation horizon per the scheme's convention).
#[derive(Clone, Debug)]
pub struct BackwardSolution {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub z_tilde: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<Vec<f64>>>,
    pub horizon_n: f64,
    pub scheme: Scheme,
}

impl BackwardSolution {
    pub fn n_paths(&self) -> usize {
        self.y.len()
    }

    /// gamma integrated against nu at one (path, step).
    pub fn gamma_nu(&self, bundle: &NoiseBundle, path: usize, step: usize) -> f64 {
        self.gamma[path][step]
            .iter()
            .zip(&bundle.marks.intensities)
            .map(|(&g, &nu)| g * nu)
            .sum()
    }
}

/// Which martingale components a sweep extracts.
#[derive(Clone, Copy, Debug)]
pub struct SweepParts {
    pub use_w: bool,
    pub use_xi: bool,
    pub use_jumps: bool,
}

impl SweepParts {
    pub fn all() -> Self {
        SweepParts {
            use_w: true,
            use_xi: true,
            use_jumps: true,
        }
    }
}

/// Generic least-squares Monte Carlo backward sweep. The caller supplies the
/// conditioning features per (path, step), the driver evaluated at the
/// current unknowns, and the terminal layer at `n_sweep` steps. Components
/// not extracted stay zero. Used by the plain backward solvers, the
/// variational system, and the adjoint equations.
pub struct SweepProblem<'a> {
    pub bundle: &'a NoiseBundle,
    /// Steps actually swept (truncation); must be <= bundle grid steps.
    pub n_sweep: usize,
    pub features: &'a (dyn Fn(usize, usize) -> Vec<f64> + Sync),
    /// driver(path, step, y, z, z_tilde, gamma-slice) -> drift of -dy.
    pub driver: &'a (dyn Fn(usize, usize, f64, f64, f64, &[f64]) -> f64 + Sync),
    pub terminal: Vec<f64>,
    pub parts: SweepParts,
}

pub fn sweep(problem: &SweepProblem) -> Result<BackwardSolution> {
    let bundle = problem.bundle;
    let grid = bundle.grid;
    let dt = grid.dt();
    let n_paths = bundle.n_paths();
    let n_sweep = problem.n_sweep;
    let n_marks = bundle.marks.len();
    assert!(n_sweep <= grid.n_steps);
    assert_eq!(problem.terminal.len(), n_paths);

    let mut y = vec![vec![0.0; grid.n_steps + 1]; n_paths];
    let mut z = vec![vec![0.0; grid.n_steps + 1]; n_paths];
    let mut zt = vec![vec![0.0; grid.n_steps + 1]; n_paths];
    let mut gamma = vec![vec![vec![0.0; n_marks]; grid.n_steps + 1]; n_paths];

    for (p, row) in y.iter_mut().enumerate() {
        row[n_sweep] = problem.terminal[p];
    }

    let mut y_next: Vec<f64> = problem.terminal.clone();
    for j in (0..n_sweep).rev() {
        let rows: Vec<Vec<f64>> = (0..n_paths).map(|p| (problem.features)(p, j)).collect();

        // Martingale components by covariation regression.
        let z_j: Vec<f64> = if problem.parts.use_w {
            let targets: Vec<f64> = (0..n_paths).map(|p| y_next[p] * bundle.dw[p][j]).collect();
            let f = fit(&rows, &targets, j)?;
            rows.iter().map(|r| f.predict(r) / dt).collect()
        } else {
            vec![0.0; n_paths]
        };
        let zt_j: Vec<f64> = if problem.parts.use_xi {
            let targets: Vec<f64> = (0..n_paths).map(|p| y_next[p] * bundle.dxi[p][j]).collect();
            let f = fit(&rows, &targets, j)?;
            rows.iter().map(|r| f.predict(r) / dt).collect()
        } else {
            vec![0.0; n_paths]
        };
        let mut gamma_j = vec![vec![0.0; n_marks]; n_paths];
        if problem.parts.use_jumps {
            for i in 0..n_marks {
                let nu = bundle.marks.intensities[i];
                let targets: Vec<f64> = (0..n_paths)
                    .map(|p| y_next[p] * (bundle.jump_counts[p][j][i] as f64 - nu * dt))
                    .collect();
                let f = fit(&rows, &targets, j)?;
                for (p, r) in rows.iter().enumerate() {
                    gamma_j[p][i] = f.predict(r) / (nu * dt);
                }
            }
        }

        // Continuation value, then one Picard correction on the implicit y.
        let cont_fit = fit(&rows, &y_next, j)?;
        let cont: Vec<f64> = rows.iter().map(|r| cont_fit.predict(r)).collect();
        let mut y_first = vec![0.0; n_paths];
        let mut y_second = vec![0.0; n_paths];
        let mut worst_rel = 0.0f64;
        for p in 0..n_paths {
            let d0 = (problem.driver)(p, j, cont[p], z_j[p], zt_j[p], &gamma_j[p]);
            y_first[p] = cont[p] + d0 * dt;
            let d1 = (problem.driver)(p, j, y_first[p], z_j[p], zt_j[p], &gamma_j[p]);
            y_second[p] = cont[p] + d1 * dt;
            worst_rel = worst_rel.max((y_second[p] - y_first[p]).abs() / (1.0 + y_first[p].abs()));
        }
        if worst_rel > PICARD_LIMIT {
            return Err(Error::NonConvergent {
                step: j,
                rel: worst_rel,
            });
        }

        for p in 0..n_paths {
            y[p][j] = y_second[p];
            z[p][j] = z_j[p];
            zt[p][j] = zt_j[p];
            gamma[p][j].copy_from_slice(&gamma_j[p]);
        }
        y_next = y_second;
    }

    Ok(BackwardSolution {
        y,
        z,
        z_tilde: zt,
        gamma,
        horizon_n: n_sweep as f64 * dt,
        scheme: Scheme::ZeroTerminal,
    })
}

fn state_features(fwd: &ForwardPath, basis: &RegressionBasis, p: usize, j: usize) -> Vec<f64> {
    let _ = basis; // degree 3 is the only shipped polynomial basis
    poly_features(&[fwd.x[p][j]])
}

/// Truncation scheme with zero terminal value: sweeps [0, n] and extends by
/// zero on (n, horizon].
pub fn solve_bsdep_zero_terminal(
    spec: &ModelSpec,
    control: &ControlProcess,
    fwd: &ForwardPath,
    bundle: &NoiseBundle,
    n: f64,
    basis: &RegressionBasis,
) -> Result<BackwardSolution> {
    if n > fwd.grid.horizon_t + 1e-12 {
        return Err(Error::config("n", "truncation exceeds simulated horizon"));
    }
    let n_sweep = fwd.grid.step_at(n);
    let grid = fwd.grid;
    let features = |p: usize, j: usize| state_features(fwd, basis, p, j);
    let driver = |p: usize, j: usize, y: f64, z: f64, zt: f64, g: &[f64]| {
        let t = grid.t(j);
        let x = fwd.x[p][j];
        let u = control.eval(t, x);
        let gi: f64 = g
            .iter()
            .zip(&bundle.marks.intensities)
            .map(|(&gv, &nu)| gv * nu)
            .sum();
        spec.g(x, y, z, zt, gi, u, t)
    };
    let mut sol = sweep(&SweepProblem {
        bundle,
        n_sweep,
        features: &features,
        driver: &driver,
        terminal: vec![0.0; bundle.n_paths()],
        parts: SweepParts::all(),
    })?;
    sol.horizon_n = n;
    sol.scheme = Scheme::ZeroTerminal;
    Ok(sol)
}

/// Truncation scheme with terminal layer E[zeta | x_n], extended past n by
/// the (F_n-measurable) zeta itself with vanishing martingale components.
pub fn solve_bsdep_conditional_terminal(
    spec: &ModelSpec,
    control: &ControlProcess,
    fwd: &ForwardPath,
    bundle: &NoiseBundle,
    n: f64,
    zeta: &TerminalFn,
    basis: &RegressionBasis,
) -> Result<BackwardSolution> {
    if n > fwd.grid.horizon_t + 1e-12 {
        return Err(Error::config("n", "truncation exceeds simulated horizon"));
    }
    let n_sweep = fwd.grid.step_at(n);
    let grid = fwd.grid;
    let n_paths = bundle.n_paths();

    let zeta_samples: Vec<f64> = (0..n_paths).map(|p| zeta(n, fwd.x[p][n_sweep])).collect();
    let second_moment = mean(&zeta_samples.iter().map(|v| v * v).collect::<Vec<_>>());
    if !second_moment.is_finite() {
        return Err(Error::config("zeta", "terminal variable has no finite second moment"));
    }
    // Terminal layer: regression of zeta onto terminal-state features.
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .map(|p| state_features(fwd, basis, p, n_sweep))
        .collect();
    let terminal_fit = fit(&rows, &zeta_samples, n_sweep)?;
    let terminal: Vec<f64> = rows.iter().map(|r| terminal_fit.predict(r)).collect();

    let features = |p: usize, j: usize| state_features(fwd, basis, p, j);
    let driver = |p: usize, j: usize, y: f64, z: f64, zt: f64, g: &[f64]| {
        let t = grid.t(j);
        let x = fwd.x[p][j];
        let u = control.eval(t, x);
        let gi: f64 = g
            .iter()
            .zip(&bundle.marks.intensities)
            .map(|(&gv, &nu)| gv * nu)
            .sum();
        spec.g(x, y, z, zt, gi, u, t)
    };
    let mut sol = sweep(&SweepProblem {
        bundle,
        n_sweep,
        features: &features,
        driver: &driver,
        terminal,
        parts: SweepParts::all(),
    })?;
    // Past the truncation the solution is the conditional expectation of
    // zeta, which is already F_n-measurable: extend pathwise.
    for p in 0..n_paths {
        for j in (n_sweep + 1)..=grid.n_steps {
            sol.y[p][j] = zeta_samples[p];
        }
        if n_sweep < grid.n_steps {
            sol.y[p][n_sweep] = zeta_samples[p];
        }
    }
    sol.horizon_n = n;
    sol.scheme = Scheme::ConditionalTerminal;
    Ok(sol)
}

/// Weighted gaps between two backward solutions over the full grid.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GapReport {
    pub sup_weighted_y_gap: f64,
    pub int_y: f64,
    pub int_z: f64,
    pub int_z_tilde: f64,
    pub int_gamma: f64,
}

impl GapReport {
    pub fn total(&self) -> f64 {
        self.sup_weighted_y_gap + self.int_y + self.int_z + self.int_z_tilde + self.int_gamma
    }
}

fn gap_on_steps(
    a: &BackwardSolution,
    b: &BackwardSolution,
    bundle: &NoiseBundle,
    beta: f64,
    last_step: usize,
) -> GapReport {
    let grid = bundle.grid;
    let dt = grid.dt();
    let n_paths = a.n_paths();
    let mut sup_y = 0.0f64;
    let (mut iy, mut iz, mut izt, mut ig) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..=last_step {
        let w = (-beta * grid.t(j)).exp();
        let my = mean(
            &(0..n_paths)
                .map(|p| (a.y[p][j] - b.y[p][j]).powi(2))
                .collect::<Vec<_>>(),
        );
        sup_y = sup_y.max(w * my);
        if j < last_step {
            iy += w * my * dt;
            iz += w
                * mean(
                    &(0..n_paths)
                        .map(|p| (a.z[p][j] - b.z[p][j]).powi(2))
                        .collect::<Vec<_>>(),
                )
                * dt;
            izt += w
                * mean(
                    &(0..n_paths)
                        .map(|p| (a.z_tilde[p][j] - b.z_tilde[p][j]).powi(2))
                        .collect::<Vec<_>>(),
                )
                * dt;
            ig += w
                * mean(
                    &(0..n_paths)
                        .map(|p| {
                            a.gamma[p][j]
                                .iter()
                                .zip(&b.gamma[p][j])
                                .zip(&bundle.marks.intensities)
                                .map(|((&ga, &gb), &nu)| (ga - gb).powi(2) * nu)
                                .sum::<f64>()
                        })
                        .collect::<Vec<_>>(),
                )
                * dt;
        }
    }
    GapReport {
        sup_weighted_y_gap: sup_y,
        int_y: iy,
        int_z: iz,
        int_z_tilde: izt,
        int_gamma: ig,
    }
}

/// Weighted gap between two truncation levels of the same scheme, evaluated
/// over the full simulated grid.
pub fn truncation_gap(
    sol_a: &BackwardSolution,
    sol_b: &BackwardSolution,
    bundle: &NoiseBundle,
    beta: f64,
) -> GapReport {
    gap_on_steps(sol_a, sol_b, bundle, beta, bundle.grid.n_steps)
}

/// Gap between the zero-terminal and conditional-terminal schemes at a common
/// truncation level, restricted to [0, n].
pub fn compare_schemes(
    spec: &ModelSpec,
    control: &ControlProcess,
    fwd: &ForwardPath,
    bundle: &NoiseBundle,
    n: f64,
    zeta: &TerminalFn,
    basis: &RegressionBasis,
) -> Result<GapReport> {
    let a = solve_bsdep_zero_terminal(spec, control, fwd, bundle, n, basis)?;
    let b = solve_bsdep_conditional_terminal(spec, control, fwd, bundle, n, zeta, basis)?;
    Ok(gap_on_steps(&a, &b, bundle, spec.beta, fwd.grid.step_at(n)))
}

/// Both sides of the generator-stability estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub prefactor: f64,
}

/// Stability of the backward solution under a generator perturbation: the
/// weighted solution gaps against the scaled generator difference evaluated
/// along the second solution.
pub fn backward_stability(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    control: &ControlProcess,
    fwd: &ForwardPath,
    bundle: &NoiseBundle,
    n: f64,
    basis: &RegressionBasis,
    delta: f64,
) -> Result<StabilityReport> {
    let probes: Vec<(f64, f64, f64)> = fwd
        .x
        .iter()
        .take(8)
        .map(|row| (row[0], control.eval(0.0, row[0]), 0.0))
        .chain([(0.5, 0.0, 0.0), (-0.5, 0.0, 0.0)])
        .collect();
    let slopes = probed_generator_slopes(spec1, &probes);
    let prefactor = -spec1.beta
        - 2.0 * spec1.mu2
        - 2.0 * (slopes[1] * slopes[1] + slopes[2] * slopes[2] + slopes[3] * slopes[3])
        - delta;
    if prefactor <= 0.0 {
        return Err(Error::InvalidDelta { delta, prefactor });
    }

    let sol1 = solve_bsdep_zero_terminal(spec1, control, fwd, bundle, n, basis)?;
    let sol2 = solve_bsdep_zero_terminal(spec2, control, fwd, bundle, n, basis)?;

    let grid = fwd.grid;
    let dt = grid.dt();
    let beta = spec1.beta;
    let n_paths = sol1.n_paths();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for j in 0..grid.n_steps {
        let t = grid.t(j);
        let w = (-beta * t).exp();
        for p in 0..n_paths {
            let dy = sol1.y[p][j] - sol2.y[p][j];
            let dz = sol1.z[p][j] - sol2.z[p][j];
            let dzt = sol1.z_tilde[p][j] - sol2.z_tilde[p][j];
            let dg: f64 = sol1.gamma[p][j]
                .iter()
                .zip(&sol2.gamma[p][j])
                .zip(&bundle.marks.intensities)
                .map(|((&a, &b), &nu)| (a - b).powi(2) * nu)
                .sum();
            lhs += w * (0.5 * (dz * dz + dzt * dzt + dg) + prefactor * dy * dy) * dt;

            // Generator difference along solution 2.
            let x = fwd.x[p][j];
            let u = control.eval(t, x);
            let gi2 = sol2.gamma_nu(bundle, p, j);
            let g1 = spec1.g(x, sol2.y[p][j], sol2.z[p][j], sol2.z_tilde[p][j], gi2, u, t);
            let g2 = spec2.g(x, sol2.y[p][j], sol2.z[p][j], sol2.z_tilde[p][j], gi2, u, t);
            rhs += w * (g1 - g2).powi(2) * dt;
        }
    }
    Ok(StabilityReport {
        lhs: lhs / n_paths as f64,
        rhs: rhs / (delta * n_paths as f64),
        prefactor,
    })
}

/// Mean absolute residual of the integrated backward dynamics over
/// [0, window_T]: how well (y, z, z-tilde, gamma) satisfy the equation
/// pathwise under the discrete scheme.
pub fn residual_on_window(
    sol: &BackwardSolution,
    spec: &ModelSpec,
    control: &ControlProcess,
    fwd: &ForwardPath,
    bundle: &NoiseBundle,
    window_t: f64,
) -> Result<f64> {
    if window_t > fwd.grid.horizon_t + 1e-12 {
        return Err(Error::config("window_T", "window exceeds horizon"));
    }
    let grid = fwd.grid;
    let dt = grid.dt();
    let last = grid.step_at(window_t);
    let n_paths = sol.n_paths();
    let mut residuals = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut acc = sol.y[p][0] - sol.y[p][last];
        for j in 0..last {
            let t = grid.t(j);
            let x = fwd.x[p][j];
            let u = control.eval(t, x);
            let gi = sol.gamma_nu(bundle, p, j);
            acc -= spec.g(x, sol.y[p][j], sol.z[p][j], sol.z_tilde[p][j], gi, u, t) * dt;
            acc += sol.z[p][j] * bundle.dw[p][j];
            acc += sol.z_tilde[p][j] * bundle.dxi[p][j];
            let g_row = &sol.gamma[p][j];
            acc += bundle.compensated_jump_increment(p, j, |e| {
                // constant-per-mark integrand stored in gamma
                let idx = bundle
                    .marks
                    .marks
                    .iter()
                    .position(|&m| m == e)
                    .expect("mark present");
                g_row[idx]
            });
        }
        residuals.push(acc.abs());
    }
    Ok(mean(&residuals))
}
