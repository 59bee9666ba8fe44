//! Observation process, Girsanov density, and the discounted Novikov
//! diagnostics.

use serde::Serialize;

use crate::control::ControlProcess;
use crate::error::Result;
use crate::forward::{ForwardPath, Measure};
use crate::model::{ModelSpec, TimeGrid};
use crate::noise::NoiseBundle;
use crate::stats::{mean, mean_stderr};

/// Observation paths xi, one row per path, n_steps + 1 columns.
#[derive(Clone, Debug)]
pub struct XiPath {
    pub xi: Vec<Vec<f64>>,
    pub grid: TimeGrid,
}

/// Exponential-martingale density, computed in log space.
#[derive(Clone, Debug)]
pub struct DensityPath {
    pub z: Vec<Vec<f64>>,
    pub log_z: Vec<Vec<f64>>,
    pub beta: f64,
    /// Largest relative gap between the exponent formula and an Euler step of
    /// the density SDE, as a consistency statistic.
    pub sde_discrepancy: f64,
}

/// Builds the observation process. Under the reference measure the second
/// bundle driver is W-tilde and xi accumulates the discounted drift
/// e^{-beta t/2} h; under the transformed measure xi is itself a Brownian
/// motion, so the increments are used as-is.
pub fn observation_process(
    fwd: &ForwardPath,
    control: &ControlProcess,
    spec: &ModelSpec,
    bundle: &NoiseBundle,
) -> XiPath {
    let grid = fwd.grid;
    let dt = grid.dt();
    let mut xi = vec![vec![0.0; grid.n_steps + 1]; fwd.n_paths()];
    for (p, row) in xi.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let drift = match fwd.measure {
                Measure::PBar => {
                    let x = fwd.x[p][j];
                    let u = control.eval(t, x);
                    (-0.5 * spec.beta * t).exp() * spec.h(x, u)
                }
                Measure::PTransformed => 0.0,
            };
            acc += drift * dt + bundle.dxi[p][j];
            row[j + 1] = acc;
        }
    }
    XiPath { xi, grid }
}

/// Girsanov density from the exponent formula
/// log Z_t = Int e^{-beta s/2} h dxi - (1/2) Int e^{-beta s} h^2 ds,
/// with an Euler step of the density SDE kept as a cross-check.
pub fn girsanov_density(
    fwd: &ForwardPath,
    control: &ControlProcess,
    spec: &ModelSpec,
    xi: &XiPath,
) -> DensityPath {
    let grid = fwd.grid;
    let dt = grid.dt();
    let n_paths = fwd.n_paths();
    let mut z = vec![vec![1.0; grid.n_steps + 1]; n_paths];
    let mut log_z = vec![vec![0.0; grid.n_steps + 1]; n_paths];
    let mut worst = 0.0f64;
    for p in 0..n_paths {
        let mut lz = 0.0;
        let mut z_sde = 1.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let x = fwd.x[p][j];
            let u = control.eval(t, x);
            let h = spec.h(x, u);
            let w = (-0.5 * spec.beta * t).exp();
            let dxi = xi.xi[p][j + 1] - xi.xi[p][j];
            lz += w * h * dxi - 0.5 * w * w * h * h * dt;
            log_z[p][j + 1] = lz;
            z[p][j + 1] = lz.exp();
            z_sde += w * z_sde * h * dxi;
            let denom = z[p][j + 1].abs().max(1e-12);
            worst = worst.max((z_sde - z[p][j + 1]).abs() / denom);
        }
    }
    DensityPath {
        z,
        log_z,
        beta: spec.beta,
        sde_discrepancy: worst,
    }
}

/// Monte Carlo estimate of the weak Novikov statistic
/// E[exp((1/2) Int e^{-beta t} h^2 dt)] with a divergence flag based on the
/// growth of the exponent across horizon halves.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NovikovReport {
    pub estimate: f64,
    pub stderr: f64,
    pub finite: bool,
    /// Deterministic bound sup h^2 / (2 beta) on the exponent (infinite when
    /// beta <= 0 and h does not vanish).
    pub exponent_bound: f64,
}

pub fn weak_novikov_estimate(
    fwd: &ForwardPath,
    control: &ControlProcess,
    spec: &ModelSpec,
) -> NovikovReport {
    let grid = fwd.grid;
    let dt = grid.dt();
    let mut first_half = Vec::with_capacity(fwd.n_paths());
    let mut full = Vec::with_capacity(fwd.n_paths());
    let mut h_sup: f64 = 0.0;
    let half = grid.n_steps / 2;
    for row in &fwd.x {
        let mut acc = 0.0;
        let mut acc_half = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let u = control.eval(t, row[j]);
            let h = spec.h(row[j], u);
            h_sup = h_sup.max(h.abs());
            acc += 0.5 * (-spec.beta * t).exp() * h * h * dt;
            if j == half {
                acc_half = acc;
            }
        }
        first_half.push(acc_half);
        full.push(acc);
    }
    let samples: Vec<f64> = full.iter().map(|&e| e.exp()).collect();
    let (estimate, stderr) = mean_stderr(&samples);
    // The truncated exponent always converges; divergence shows up as the
    // second half contributing as much as the first.
    let tail = mean(&full) - mean(&first_half);
    let head = mean(&first_half);
    let finite = tail <= 0.5 * head + 1e-12;
    let exponent_bound = if spec.beta > 0.0 {
        h_sup * h_sup / (2.0 * spec.beta)
    } else if h_sup == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    NovikovReport {
        estimate,
        stderr,
        finite,
        exponent_bound,
    }
}

/// Expectation under the original measure computed from transformed-measure
/// samples: mean of Z_t * value.
pub fn reweighted_expectation(values: &[f64], density: &DensityPath, step: usize) -> f64 {
    assert_eq!(values.len(), density.z.len());
    mean(
        &values
            .iter()
            .zip(&density.z)
            .map(|(&v, zr)| v * zr[step])
            .collect::<Vec<_>>(),
    )
}

/// Per-time summary used by the CLI density report.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DensitySummary {
    pub t: f64,
    pub mean_z: f64,
    pub stderr: f64,
    pub min_z: f64,
    pub max_log_z: f64,
}

pub fn density_summary(density: &DensityPath, grid: TimeGrid, step: usize) -> DensitySummary {
    let zs: Vec<f64> = density.z.iter().map(|r| r[step]).collect();
    let (mean_z, stderr) = mean_stderr(&zs);
    DensitySummary {
        t: grid.t(step),
        mean_z,
        stderr,
        min_z: zs.iter().copied().fold(f64::INFINITY, f64::min),
        max_log_z: density
            .log_z
            .iter()
            .map(|r| r[step])
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Convenience: simulate the observation and density in one call.
pub fn observation_and_density(
    fwd: &ForwardPath,
    control: &ControlProcess,
    spec: &ModelSpec,
    bundle: &NoiseBundle,
) -> Result<(XiPath, DensityPath)> {
    let xi = observation_process(fwd, control, spec, bundle);
    let density = girsanov_density(fwd, control, spec, &xi);
    Ok((xi, density))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::simulate_forward;
    use crate::harness::presets;
    use crate::model::MarkSpace;
    use crate::noise::sample_noise;
    use std::sync::Arc;

    fn setup(name: &str, seed: u64, n_paths: usize) -> (crate::harness::Preset, ForwardPath, NoiseBundle)
    {
        let p = presets::preset(name).unwrap();
        let b = sample_noise(
            seed,
            n_paths,
            TimeGrid::new(4.0, 200).unwrap(),
            &p.marks,
        )
        .unwrap();
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
        (p, fwd, b)
    }

    #[test]
    fn zero_h_gives_pure_brownian_xi_and_unit_density() {
        let (mut p, _, b) = setup("ou-forward", 41, 32);
        p.spec.observation_h = Arc::new(|_, _| 0.0);
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
        let xi = observation_process(&fwd, &p.u_bar, &p.spec, &b);
        for (pi, row) in xi.xi.iter().enumerate() {
            let cum: f64 = b.dxi[pi].iter().sum();
            assert!((row[200] - cum).abs() < 1e-12);
        }
        let d = girsanov_density(&fwd, &p.u_bar, &p.spec, &xi);
        assert!(d.z.iter().all(|r| r.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn deterministic_drift_quadrature() {
        // h = 1, W-tilde frozen: xi_T = 2 (1 - e^{-beta T / 2}) / beta.
        let (mut p, _, mut b) = setup("ou-forward", 42, 2);
        p.spec.observation_h = Arc::new(|_, _| 1.0);
        for row in b.dxi.iter_mut() {
            for v in row.iter_mut() {
                *v = 0.0;
            }
        }
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
        let xi = observation_process(&fwd, &p.u_bar, &p.spec, &b);
        let oracle = 2.0 * (1.0 - (-0.5 * 4.0f64).exp()) / 1.0;
        assert!((xi.xi[0][200] - oracle).abs() < 0.02, "{}", xi.xi[0][200]);
    }

    #[test]
    fn density_is_mean_one_martingale() {
        // Z = dPbar/dP is a mean-one martingale under the transformed measure,
        // where xi is driftless Brownian motion.
        let (p, _, b) = setup("bounded-h-girsanov", 43, 4000);
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PTransformed).unwrap();
        let (_, d) = observation_and_density(&fwd, &p.u_bar, &p.spec, &b).unwrap();
        for step in [50, 100, 150] {
            let s = density_summary(&d, fwd.grid, step);
            assert!(
                (s.mean_z - 1.0).abs() < 3.0 * s.stderr + 0.01,
                "t={} mean {} +- {}",
                s.t,
                s.mean_z,
                s.stderr
            );
            assert!(s.min_z > 0.0);
        }
    }

    #[test]
    fn closed_form_log_density_constant_h() {
        // beta = 0, h = c: log Z_T = c xi_T - c^2 T / 2.
        let (mut p, _, b) = setup("ou-forward", 44, 8);
        p.spec.beta = 0.0;
        let c = 0.7;
        p.spec.observation_h = Arc::new(move |_, _| c);
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
        let xi = observation_process(&fwd, &p.u_bar, &p.spec, &b);
        let d = girsanov_density(&fwd, &p.u_bar, &p.spec, &xi);
        for pi in 0..8 {
            let oracle = c * xi.xi[pi][200] - c * c * 4.0 / 2.0;
            assert!((d.log_z[pi][200] - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn sde_crosscheck_shrinks_with_dt() {
        let p = presets::preset("bounded-h-girsanov").unwrap();
        let mut gaps = Vec::new();
        for steps in [100usize, 200, 400] {
            let b = sample_noise(45, 200, TimeGrid::new(2.0, steps).unwrap(), &MarkSpace::empty())
                .unwrap();
            let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
            let (_, d) = observation_and_density(&fwd, &p.u_bar, &p.spec, &b).unwrap();
            gaps.push(d.sde_discrepancy);
        }
        assert!(gaps[2] < gaps[0], "gaps {:?}", gaps);
    }

    #[test]
    fn novikov_constant_h() {
        // h = c, beta = 1: exponent -> c^2 (1 - e^{-T}) / 2; estimate exact
        // (deterministic integrand).
        let (mut p, _, b) = setup("ou-forward", 46, 16);
        let c = 0.8;
        p.spec.observation_h = Arc::new(move |_, _| c);
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
        let r = weak_novikov_estimate(&fwd, &p.u_bar, &p.spec);
        let oracle = (0.5 * c * c * (1.0 - (-4.0f64).exp())).exp();
        assert!((r.estimate - oracle).abs() < 0.01, "{} vs {oracle}", r.estimate);
        assert!(r.finite);
        assert!((r.exponent_bound - c * c / 2.0).abs() < 1e-12);
    }

    #[test]
    fn novikov_divergent_without_discount() {
        let (mut p, _, b) = setup("ou-forward", 47, 16);
        p.spec.beta = 0.0;
        p.spec.observation_h = Arc::new(|_, _| 0.5);
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PBar).unwrap();
        let r = weak_novikov_estimate(&fwd, &p.u_bar, &p.spec);
        assert!(!r.finite);
        assert!(r.exponent_bound.is_infinite());
    }

    #[test]
    fn reweighting_unit_values() {
        // Same convention as above: the weights are normalized under the
        // transformed measure.
        let (p, _, b) = setup("bounded-h-girsanov", 48, 3000);
        let fwd = simulate_forward(&p.spec, &p.u_bar, &b, Measure::PTransformed).unwrap();
        let (_, d) = observation_and_density(&fwd, &p.u_bar, &p.spec, &b).unwrap();
        let ones = vec![1.0; fwd.n_paths()];
        let v = reweighted_expectation(&ones, &d, 150);
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }
}
