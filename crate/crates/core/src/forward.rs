//! Forward state simulation and the discounted a priori / high-order moment
//! checks.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlProcess;
use crate::error::{Error, Result};
use crate::model::{DiscountProfile, ModelSpec, TimeGrid};
use crate::noise::NoiseBundle;
use crate::stats::{exp_decay_rate, mean, mean_stderr};

/// Blow-up threshold separating numerical instability from model error.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Probability measure the dynamics are written under. The second driver of
/// the bundle is W-tilde under the reference measure and the observation
/// Brownian motion under the transformed one; the drift switches between
/// b and b - e^{-beta t/2} sigma_tilde h accordingly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Measure {
    PBar,
    PTransformed,
}

/// Simulated forward state, one row per path, n_steps + 1 columns.
#[derive(Clone, Debug)]
pub struct ForwardPath {
    pub x: Vec<Vec<f64>>,
    pub grid: TimeGrid,
    pub seed: u64,
    pub measure: Measure,
}

impl ForwardPath {
    pub fn n_paths(&self) -> usize {
        self.x.len()
    }
}

/// Weighted-space moment kinds mirroring the norms the estimates are stated
/// in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MomentKind {
    /// sup_t E[e^{-beta k t} |x_t|^{2k}]
    SupOfMean,
    /// E[sup_t e^{-beta k t} |x_t|^{2k}]
    MeanOfSup,
    /// E Int e^{-beta t} |x_t|^{2k} dt (note: weight not raised to k)
    Integral,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeightedMoment {
    pub kind: MomentKind,
    pub beta: f64,
    pub k: u32,
    pub value: f64,
    pub stderr: f64,
}

/// Euler-Maruyama step of the forward equation with left-limit jump
/// evaluation. Shared by the plain and the pairwise (a priori) simulations.
fn euler_path(
    spec: &ModelSpec,
    control: &ControlProcess,
    bundle: &NoiseBundle,
    measure: Measure,
    p: usize,
) -> std::result::Result<Vec<f64>, (usize, usize)> {
    let grid = bundle.grid;
    let dt = grid.dt();
    let mut xs = Vec::with_capacity(grid.n_steps + 1);
    let mut x = spec.x0;
    xs.push(x);
    for j in 0..grid.n_steps {
        let t = grid.t(j);
        let u = control.eval(t, x);
        let drift = match measure {
            Measure::PBar => spec.b(x, u, t),
            Measure::PTransformed => spec.b_tilde(x, u, t),
        };
        let jump = bundle.compensated_jump_increment(p, j, |e| spec.l(x, u, e, t));
        x += drift * dt
            + spec.sigma(x, u, t) * bundle.dw[p][j]
            + spec.sigma_tilde(x, u, t) * bundle.dxi[p][j]
            + jump;
        if !x.is_finite() || x.abs() > BLOWUP_THRESHOLD {
            return Err((p, j));
        }
        xs.push(x);
    }
    Ok(xs)
}

/// Simulates the controlled forward state on every path of the bundle.
pub fn simulate_forward(
    spec: &ModelSpec,
    control: &ControlProcess,
    bundle: &NoiseBundle,
    measure: Measure,
) -> Result<ForwardPath> {
    let results: Vec<std::result::Result<Vec<f64>, (usize, usize)>> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| euler_path(spec, control, bundle, measure, p))
        .collect();
    let mut x = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(path) => x.push(path),
            Err((path, step)) => {
                return Err(Error::BlowUp {
                    path,
                    step,
                    threshold: BLOWUP_THRESHOLD,
                })
            }
        }
    }
    Ok(ForwardPath {
        x,
        grid: bundle.grid,
        seed: bundle.seed,
        measure,
    })
}

/// Weighted moment of the simulated state with an MC standard error.
pub fn weighted_moment(path: &ForwardPath, beta: f64, k: u32, kind: MomentKind) -> WeightedMoment {
    assert!(k >= 1);
    let grid = path.grid;
    let dt = grid.dt();
    let p2k = (2 * k) as i32;
    let (value, stderr) = match kind {
        MomentKind::SupOfMean => {
            let mut best = (0.0, 0.0);
            for j in 0..=grid.n_steps {
                let w = (-beta * k as f64 * grid.t(j)).exp();
                let samples: Vec<f64> = path.x.iter().map(|row| w * row[j].powi(p2k)).collect();
                let (m, s) = mean_stderr(&samples);
                if m >= best.0 {
                    best = (m, s);
                }
            }
            best
        }
        MomentKind::MeanOfSup => {
            let sups: Vec<f64> = path
                .x
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(j, &v)| (-beta * k as f64 * grid.t(j)).exp() * v.powi(p2k))
                        .fold(0.0f64, f64::max)
                })
                .collect();
            mean_stderr(&sups)
        }
        MomentKind::Integral => {
            let ints: Vec<f64> = path
                .x
                .iter()
                .map(|row| {
                    (0..grid.n_steps)
                        .map(|j| (-beta * grid.t(j)).exp() * row[j].powi(p2k) * dt)
                        .sum()
                })
                .collect();
            mean_stderr(&ints)
        }
    };
    WeightedMoment {
        kind,
        beta,
        k,
        value,
        stderr,
    }
}

/// Tail behaviour of E[e^{-beta t} x_t^2] and its fitted exponential rate.
#[derive(Clone, Debug, Serialize)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fitted_rate: f64,
}

/// Samples E[e^{-beta t} x_t^2] on the grid and fits an exponential rate to
/// the tail half. A non-decaying series is reported, never an error.
pub fn check_decay(path: &ForwardPath, beta: f64) -> DecaySeries {
    let grid = path.grid;
    let mut times = Vec::with_capacity(grid.n_steps + 1);
    let mut values = Vec::with_capacity(grid.n_steps + 1);
    for j in 0..=grid.n_steps {
        let t = grid.t(j);
        let m = mean(&path.x.iter().map(|row| row[j] * row[j]).collect::<Vec<_>>());
        times.push(t);
        values.push((-beta * t).exp() * m);
    }
    let half = times.len() / 2;
    let fitted_rate = exp_decay_rate(&times[half..], &values[half..]);
    DecaySeries {
        times,
        values,
        fitted_rate,
    }
}

/// Both sides of a discounted a priori estimate; the inequality under test is
/// lhs <= rhs (up to MC tolerance).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AprioriGap {
    pub lhs: f64,
    pub rhs: f64,
    pub prefactor: f64,
}

fn est_prefactor(spec: &ModelSpec, epsilon: f64) -> Result<f64> {
    let l = &spec.lipschitz;
    let prefactor = spec.beta
        - 2.0 * spec.mu1
        - 3.0 * epsilon
        - l.l_sigma * l.l_sigma
        - l.l_sigma_tilde * l.l_sigma_tilde
        - l.l_l * l.l_l
        - epsilon * l.l_l * l.l_l;
    if prefactor <= 0.0 {
        return Err(Error::InvalidEpsilon { epsilon, prefactor });
    }
    Ok(prefactor)
}

/// Squared L^2(nu) norm of the jump coefficient at a fixed (x, u, t).
fn l_nu_norm_sq(spec: &ModelSpec, bundle: &NoiseBundle, x: f64, u: f64, t: f64) -> f64 {
    bundle
        .marks
        .marks
        .iter()
        .zip(&bundle.marks.intensities)
        .map(|(&e, &nu)| spec.l(x, u, e, t).powi(2) * nu)
        .sum()
}

/// Single-solution a priori estimate: the weighted second-moment integral of
/// x against the discounted size of the coefficients at the origin.
pub fn forward_apriori_est1(
    spec: &ModelSpec,
    control: &ControlProcess,
    bundle: &NoiseBundle,
    epsilon: f64,
) -> Result<AprioriGap> {
    let prefactor = est_prefactor(spec, epsilon)?;
    let path = simulate_forward(spec, control, bundle, Measure::PTransformed)?;
    let beta = spec.beta;
    let lhs = prefactor * weighted_moment(&path, beta, 1, MomentKind::Integral).value;

    let grid = bundle.grid;
    let dt = grid.dt();
    let l = &spec.lipschitz;
    // Coefficients at the origin are deterministic, so the rhs expectation is
    // a plain quadrature; the control enters through b-tilde(0, u_t).
    let mut rhs_paths = Vec::with_capacity(path.n_paths());
    for row in &path.x {
        let mut acc = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let u = control.eval(t, row[j]);
            let w = (-beta * t).exp();
            acc += w
                * ((1.0 / epsilon) * spec.b_tilde(0.0, u, t).powi(2)
                    + (l.l_sigma * l.l_sigma / epsilon + 1.0) * spec.sigma(0.0, u, t).powi(2)
                    + (l.l_sigma_tilde * l.l_sigma_tilde / epsilon + 1.0)
                        * spec.sigma_tilde(0.0, u, t).powi(2)
                    + (1.0 + 1.0 / epsilon) * l_nu_norm_sq(spec, bundle, 0.0, u, t))
                * dt;
        }
        rhs_paths.push(acc);
    }
    let rhs = spec.x0 * spec.x0 + mean(&rhs_paths);
    Ok(AprioriGap {
        lhs,
        rhs,
        prefactor,
    })
}

/// Two-solution stability estimate: the weighted gap between solutions driven
/// by the same noise against the coefficient differences along the second
/// solution.
pub fn forward_apriori_gap(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    control: &ControlProcess,
    bundle: &NoiseBundle,
    epsilon: f64,
) -> Result<AprioriGap> {
    if (spec1.beta - spec2.beta).abs() > 1e-15 {
        return Err(Error::config("beta", "both specifications must share beta"));
    }
    let prefactor = est_prefactor(spec1, epsilon)?;
    let p1 = simulate_forward(spec1, control, bundle, Measure::PTransformed)?;
    let p2 = simulate_forward(spec2, control, bundle, Measure::PTransformed)?;

    let grid = bundle.grid;
    let dt = grid.dt();
    let beta = spec1.beta;
    let l = &spec1.lipschitz;

    let mut lhs_paths = Vec::with_capacity(p1.n_paths());
    let mut rhs_paths = Vec::with_capacity(p1.n_paths());
    for (row1, row2) in p1.x.iter().zip(&p2.x) {
        let mut gap = 0.0;
        let mut coeff = 0.0;
        for j in 0..grid.n_steps {
            let t = grid.t(j);
            let w = (-beta * t).exp();
            let d = row1[j] - row2[j];
            gap += w * d * d * dt;
            let x2 = row2[j];
            let u = control.eval(t, x2);
            let db = spec1.b_tilde(x2, u, t) - spec2.b_tilde(x2, u, t);
            let ds = spec1.sigma(x2, u, t) - spec2.sigma(x2, u, t);
            let dst = spec1.sigma_tilde(x2, u, t) - spec2.sigma_tilde(x2, u, t);
            let dl: f64 = bundle
                .marks
                .marks
                .iter()
                .zip(&bundle.marks.intensities)
                .map(|(&e, &nu)| (spec1.l(x2, u, e, t) - spec2.l(x2, u, e, t)).powi(2) * nu)
                .sum();
            coeff += w
                * ((1.0 / epsilon) * db * db
                    + (l.l_sigma * l.l_sigma / epsilon + 1.0) * ds * ds
                    + (l.l_sigma_tilde * l.l_sigma_tilde / epsilon + 1.0) * dst * dst
                    + (1.0 + 1.0 / epsilon) * dl)
                * dt;
        }
        lhs_paths.push(gap);
        rhs_paths.push(coeff);
    }
    let d0 = spec1.x0 - spec2.x0;
    Ok(AprioriGap {
        lhs: prefactor * mean(&lhs_paths),
        rhs: d0 * d0 + mean(&rhs_paths),
        prefactor,
    })
}

/// High-order moment bound report: lhs moment, the bracketed rhs statistic
/// (without the existential constant), and their ratio.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs_bracket: f64,
    pub ratio: f64,
    pub k: u32,
}

/// Computes sup_t E[e^{-beta2 k t}|x_t|^{2k}] against the bracketed data
/// statistic of the high-order forward bound. The multiplicative constant is
/// existential, so only the ratio's stability is meaningful.
pub fn highorder_bound_check(
    path: &ForwardPath,
    control: &ControlProcess,
    spec: &ModelSpec,
    bundle: &NoiseBundle,
    profile: &DiscountProfile,
    k: u32,
) -> Result<BoundReport> {
    if !(1..=2).contains(&k) {
        return Err(Error::config("k", "supported orders are 1 and 2"));
    }
    if let Some(v) = profile.check(spec.beta) {
        return Err(Error::config("profile", v));
    }
    let lhs = weighted_moment(path, profile.beta2, k, MomentKind::SupOfMean).value;

    let grid = path.grid;
    let dt = grid.dt();
    let kf = k as f64;
    let p2k = (2 * k) as i32;

    // E Int e^{-beta1 k t} |u|^{2k} dt along the simulated state.
    let u_term = mean(
        &path
            .x
            .iter()
            .map(|row| {
                (0..grid.n_steps)
                    .map(|j| {
                        let t = grid.t(j);
                        (-profile.beta1 * kf * t).exp() * control.eval(t, row[j]).powi(p2k) * dt
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>(),
    );

    // Deterministic origin-coefficient integrals.
    let mut ib = 0.0;
    let mut is = 0.0;
    let mut ist = 0.0;
    let mut il = 0.0;
    let mut il_k = 0.0;
    for j in 0..grid.n_steps {
        let t = grid.t(j);
        let w5 = (-profile.beta5 * t).exp();
        ib += w5 * spec.b_tilde(0.0, 0.0, t).powi(p2k).powf(1.0 / (2.0 * kf)) * dt;
        is += w5 * spec.sigma(0.0, 0.0, t).powi(p2k).powf(1.0 / kf) * dt;
        ist += w5 * spec.sigma_tilde(0.0, 0.0, t).powi(p2k).powf(1.0 / kf) * dt;
        let l2k: f64 = bundle
            .marks
            .marks
            .iter()
            .zip(&bundle.marks.intensities)
            .map(|(&e, &nu)| spec.l(0.0, 0.0, e, t).powi(p2k) * nu)
            .sum();
        il += w5 * l2k.powf(1.0 / (2.0 * kf)) * dt;
        il_k += (-profile.beta5 * kf * t).exp() * l2k * dt;
    }

    let rhs_bracket = spec.x0.abs().powi(p2k)
        + u_term
        + ib.powi(p2k)
        + is.powi(k as i32)
        + ist.powi(k as i32)
        + il.powi(p2k)
        + il_k;
    let ratio = if rhs_bracket > 0.0 {
        lhs / rhs_bracket
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(BoundReport {
        lhs,
        rhs_bracket,
        ratio,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets;
    use crate::model::MarkSpace;
    use crate::noise::sample_noise;
    use crate::stats::stderr;
    use std::sync::Arc;

    fn bundle(seed: u64, n_paths: usize, t: f64, steps: usize, marks: MarkSpace) -> NoiseBundle {
        sample_noise(seed, n_paths, TimeGrid::new(t, steps).unwrap(), &marks).unwrap()
    }

    #[test]
    fn frozen_coefficients_frozen_state() {
        let mut p = presets::preset("ou-forward").unwrap();
        p.spec.drift_b = Arc::new(|_, _, _| 0.0);
        p.spec.diff_sigma = Arc::new(|_, _, _| 0.0);
        p.spec.x0 = 3.0;
        let b = bundle(1, 8, 1.0, 50, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        for row in &fp.x {
            assert!(row.iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn deterministic_exponential_decay() {
        // b = -x, no diffusion: x(t) = e^{-t} with O(dt) Euler error.
        let mut p = presets::preset("ou-forward").unwrap();
        p.spec.diff_sigma = Arc::new(|_, _, _| 0.0);
        let b = bundle(2, 2, 2.0, 2000, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let end = fp.x[0][2000];
        assert!((end - (-2.0f64).exp()).abs() < 2e-3, "x(2) = {end}");
    }

    #[test]
    fn brownian_terminal_variance() {
        let mut p = presets::preset("ou-forward").unwrap();
        p.spec.drift_b = Arc::new(|_, _, _| 0.0);
        p.spec.diff_sigma = Arc::new(|_, _, _| 1.0);
        let b = bundle(3, 2000, 1.0, 100, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let incs: Vec<f64> = fp
            .x
            .iter()
            .map(|row| (row[100] - 1.0) * (row[100] - 1.0))
            .collect();
        let (m, s) = mean_stderr(&incs);
        assert!((m - 1.0).abs() < 3.0 * s + 0.01, "var {m} +- {s}");
    }

    #[test]
    fn blow_up_detected() {
        let mut p = presets::preset("ou-forward").unwrap();
        p.spec.drift_b = Arc::new(|x, _, _| 40.0 * x * x * x + 1.0);
        let b = bundle(4, 2, 8.0, 200, MarkSpace::empty());
        let err = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn weighted_moment_of_constant_state() {
        let mut p = presets::preset("ou-forward").unwrap();
        p.spec.drift_b = Arc::new(|_, _, _| 0.0);
        p.spec.diff_sigma = Arc::new(|_, _, _| 0.0);
        p.spec.x0 = 2.0;
        let b = bundle(5, 4, 1.0, 20, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let m = weighted_moment(&fp, 1.0, 2, MomentKind::SupOfMean);
        assert!((m.value - 16.0).abs() < 1e-12); // sup at t = 0, 2^4
    }

    #[test]
    fn ou_integral_moment_matches_ode_oracle() {
        // dx = -x dt + 0.5 dW, x0 = 1: E x_t^2 = e^{-2t} + 0.125 (1 - e^{-2t});
        // Int_0^inf e^{-t} E x_t^2 dt = 0.125 + 0.875 / 3 = 0.41666...
        let p = presets::preset("ou-forward").unwrap();
        let b = bundle(6, 4000, 12.0, 1200, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let m = weighted_moment(&fp, 1.0, 1, MomentKind::Integral);
        let oracle = 0.125 + 0.875 / 3.0;
        assert!(
            (m.value - oracle).abs() < 3.0 * m.stderr + 0.01,
            "{} vs {} (+- {})",
            m.value,
            oracle,
            m.stderr
        );
    }

    #[test]
    fn decay_rate_of_constant_state() {
        let mut p = presets::preset("ou-forward").unwrap();
        p.spec.drift_b = Arc::new(|_, _, _| 0.0);
        p.spec.diff_sigma = Arc::new(|_, _, _| 0.0);
        let b = bundle(7, 2, 4.0, 200, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let d = check_decay(&fp, 1.0);
        assert!((d.fitted_rate - 1.0).abs() < 1e-9);
    }

    #[test]
    fn est1_holds_on_ou_preset() {
        let p = presets::preset("ou-forward").unwrap();
        let b = bundle(8, 2000, 12.0, 600, MarkSpace::empty());
        let g = forward_apriori_est1(&p.spec, &ControlProcess::constant(0.0), &b, 0.1).unwrap();
        assert!(g.lhs <= g.rhs * 1.001 + 1e-9, "lhs {} rhs {}", g.lhs, g.rhs);
    }

    #[test]
    fn est2_zero_gap_for_identical_specs() {
        let p = presets::preset("ou-forward").unwrap();
        let b = bundle(9, 64, 6.0, 300, MarkSpace::empty());
        let g = forward_apriori_gap(&p.spec, &p.spec, &ControlProcess::constant(0.0), &b, 0.1)
            .unwrap();
        assert_eq!(g.lhs, 0.0);
        assert_eq!(g.rhs, 0.0);
    }

    #[test]
    fn est2_initial_value_gap() {
        let p = presets::preset("ou-forward").unwrap();
        let mut p2 = p.clone();
        p2.spec.x0 = 1.5;
        let b = bundle(10, 512, 10.0, 500, MarkSpace::empty());
        let g = forward_apriori_gap(&p.spec, &p2.spec, &ControlProcess::constant(0.0), &b, 0.1)
            .unwrap();
        assert!((g.rhs - 0.25).abs() < 1e-12);
        assert!(g.lhs <= g.rhs * 1.001, "lhs {} rhs {}", g.lhs, g.rhs);
    }

    #[test]
    fn est2_shifted_drift_inequality() {
        let p = presets::preset("ou-forward").unwrap();
        let mut p2 = p.clone();
        p2.spec.drift_b = Arc::new(|x, _, _| -x + 0.3);
        let b = bundle(11, 1000, 10.0, 500, MarkSpace::empty());
        let g = forward_apriori_gap(&p.spec, &p2.spec, &ControlProcess::constant(0.0), &b, 0.1)
            .unwrap();
        assert!(g.lhs <= g.rhs, "lhs {} rhs {}", g.lhs, g.rhs);
        assert!(g.rhs > 0.0);
    }

    #[test]
    fn invalid_epsilon_rejected() {
        let p = presets::preset("ou-forward").unwrap();
        let b = bundle(12, 4, 1.0, 10, MarkSpace::empty());
        let err = forward_apriori_est1(&p.spec, &ControlProcess::constant(0.0), &b, 10.0)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidEpsilon { .. }));
    }

    #[test]
    fn highorder_zero_model_zero_lhs() {
        let p = presets::preset("zero").unwrap();
        let b = bundle(13, 16, 4.0, 100, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let r = highorder_bound_check(
            &fp,
            &ControlProcess::constant(0.0),
            &p.spec,
            &b,
            &DiscountProfile::uniform(p.spec.beta),
            2,
        )
        .unwrap();
        assert_eq!(r.lhs, 0.0);
    }

    #[test]
    fn highorder_ratio_nonincreasing_in_beta2() {
        let p = presets::preset("ou-forward").unwrap();
        let b = bundle(14, 400, 8.0, 400, MarkSpace::empty());
        let fp = simulate_forward(&p.spec, &ControlProcess::constant(0.0), &b, Measure::PBar)
            .unwrap();
        let prof1 = DiscountProfile::uniform(p.spec.beta);
        let mut prof2 = prof1;
        prof2.beta2 = prof2.beta2 + 1.0;
        let mut spec2 = p.spec.clone();
        spec2.beta = spec2.beta + 1.0; // keep beta >= max beta_i
        let r1 = highorder_bound_check(&fp, &ControlProcess::constant(0.0), &p.spec, &b, &prof1, 1)
            .unwrap();
        let r2 = highorder_bound_check(&fp, &ControlProcess::constant(0.0), &spec2, &b, &prof2, 1)
            .unwrap();
        assert!(r2.ratio <= r1.ratio + 1e-12);
    }

    #[test]
    fn determinism_same_inputs_same_path() {
        let p = presets::preset("ou-forward").unwrap();
        let b = bundle(15, 32, 4.0, 200, MarkSpace::empty());
        let a = simulate_forward(&p.spec, &ControlProcess::constant(0.1), &b, Measure::PBar)
            .unwrap();
        let c = simulate_forward(&p.spec, &ControlProcess::constant(0.1), &b, Measure::PBar)
            .unwrap();
        assert_eq!(a.x, c.x);
        let _ = stderr(&a.x[0]);
    }
}
