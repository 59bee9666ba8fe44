//! The three adjoint equations, the Hamiltonian, and the maximum-condition,
//! transversality, and duality diagnostics.

use serde::Serialize;

use crate::backward::{sweep, BackwardSolution, RegressionBasis, SweepParts, SweepProblem};
use crate::control::{ControlProcess, VariationalBundle};
use crate::error::{Error, Result};
use crate::forward::{ForwardPath, BLOWUP_THRESHOLD};
use crate::measure::{DensityPath, XiPath};
use crate::model::{GenArgs, ModelSpec};
use crate::noise::NoiseBundle;
use crate::regress::{fit, poly_features};
use crate::stats::{exp_decay_rate, mean, mean_stderr};

/// Candidate-trajectory artifacts every adjoint solver consumes.
pub struct OptimalTrajectory<'a> {
    pub fwd: &'a ForwardPath,
    pub bwd: &'a BackwardSolution,
    pub control: &'a ControlProcess,
    pub density: &'a DensityPath,
    pub xi: &'a XiPath,
    pub bundle: &'a NoiseBundle,
}

impl OptimalTrajectory<'_> {
    fn gen_args(&self, p: usize, j: usize) -> GenArgs {
        let t = self.fwd.grid.t(j);
        let x = self.fwd.x[p][j];
        GenArgs {
            x,
            y: self.bwd.y[p][j],
            z: self.bwd.z[p][j],
            zt: self.bwd.z_tilde[p][j],
            gi: self.bwd.gamma_nu(self.bundle, p, j),
            u: self.control.eval(t, x),
            t,
        }
    }
}

/// First adjoint: forward linear SDE started from phi_y(y_0).
pub fn solve_adjoint_p(spec: &ModelSpec, traj: &OptimalTrajectory) -> Result<Vec<Vec<f64>>> {
    let grid = traj.fwd.grid;
    let dt = grid.dt();
    let n_paths = traj.fwd.n_paths();
    let mut p_mat = vec![vec![0.0; grid.n_steps + 1]; n_paths];
    for p in 0..n_paths {
        let mut pv = spec.phi_y(traj.bwd.y[p][0]);
        p_mat[p][0] = pv;
        for j in 0..grid.n_steps {
            let a = traj.gen_args(p, j);
            let zb = traj.density.z[p][j];
            let drift = zb * spec.f_y(a) + spec.g_y(a) * pv + spec.beta * pv;
            let dw_coef = zb * spec.f_z(a) + spec.g_z(a) * pv;
            let dxi_coef = zb * spec.f_zt(a) + spec.g_zt(a) * pv;
            let jump_coef = zb * spec.f_gamma(a) + spec.g_gamma(a) * pv;
            pv += drift * dt
                + dw_coef * traj.bundle.dw[p][j]
                + dxi_coef * traj.bundle.dxi[p][j]
                + traj.bundle.compensated_jump_increment(p, j, |_| jump_coef);
            if !pv.is_finite() || pv.abs() > BLOWUP_THRESHOLD {
                return Err(Error::BlowUp {
                    path: p,
                    step: j,
                    threshold: BLOWUP_THRESHOLD,
                });
            }
            p_mat[p][j + 1] = pv;
        }
    }
    Ok(p_mat)
}

/// Observation-filtration features per (path, step): polynomial in (xi_t,
/// exponentially weighted running integral of d xi). Both coordinates are
/// F^xi-measurable by construction; built once because of the running state.
pub fn xi_feature_table(xi: &XiPath) -> Vec<Vec<Vec<f64>>> {
    let grid = xi.grid;
    let dt = grid.dt();
    let decay = (-dt).exp();
    xi.xi
        .iter()
        .map(|row| {
            let mut running = 0.0;
            let mut out = Vec::with_capacity(grid.n_steps + 1);
            out.push(poly_features(&[row[0], 0.0]));
            for j in 0..grid.n_steps {
                running = running * decay + (row[j + 1] - row[j]);
                out.push(poly_features(&[row[j + 1], running]));
            }
            out
        })
        .collect()
}

/// Second adjoint (Q, M-tilde): xi-driven backward equation with zero
/// terminal at the truncation horizon, conditioned on observation features.
pub fn solve_adjoint_qm(
    spec: &ModelSpec,
    traj: &OptimalTrajectory,
    n: f64,
    basis: &RegressionBasis,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let _ = basis;
    let grid = traj.fwd.grid;
    let n_sweep = grid.step_at(n);
    let table = xi_feature_table(traj.xi);
    let features = |p: usize, j: usize| table[p][j].clone();
    let driver = |p: usize, j: usize, q: f64, _z: f64, mt: f64, _g: &[f64]| {
        let a = traj.gen_args(p, j);
        let f_bar = spec.f(a.x, a.y, a.z, a.zt, a.gi, a.u);
        let h_bar = spec.h(a.x, a.u);
        f_bar + (-0.5 * spec.beta * a.t).exp() * h_bar * mt - spec.beta * q
    };
    let sol = sweep(&SweepProblem {
        bundle: traj.bundle,
        n_sweep,
        features: &features,
        driver: &driver,
        terminal: vec![0.0; traj.fwd.n_paths()],
        parts: SweepParts {
            use_w: false,
            use_xi: true,
            use_jumps: false,
        },
    })?;
    Ok((sol.y, sol.z_tilde))
}

/// Third adjoint (q, m, m-tilde, n): full backward SDEP with the linear
/// driver sourced by p and M-tilde.
pub fn solve_adjoint_q(
    spec: &ModelSpec,
    traj: &OptimalTrajectory,
    p_mat: &[Vec<f64>],
    m_tilde_big: &[Vec<f64>],
    n: f64,
    basis: &RegressionBasis,
) -> Result<BackwardSolution> {
    let _ = basis;
    let grid = traj.fwd.grid;
    let n_sweep = grid.step_at(n);
    let features = |p: usize, j: usize| poly_features(&[traj.fwd.x[p][j], traj.density.z[p][j]]);
    let driver = |p: usize, j: usize, q: f64, m: f64, mt: f64, nr: &[f64]| {
        let a = traj.gen_args(p, j);
        let zb = traj.density.z[p][j];
        let kappa = zb * spec.f_x(a)
            + spec.g_x(a) * p_mat[p][j]
            + (-0.5 * spec.beta * a.t).exp() * zb * spec.h_x(a.x, a.u) * m_tilde_big[p][j];
        let jump_term: f64 = nr
            .iter()
            .zip(traj.bundle.marks.marks.iter())
            .zip(&traj.bundle.marks.intensities)
            .map(|((&nv, &e), &nu)| spec.l_x(a.x, a.u, e, a.t) * nv * nu)
            .sum();
        kappa
            + spec.b_tilde_x(a.x, a.u, a.t) * q
            + spec.sigma_x(a.x, a.u, a.t) * m
            + spec.sigma_tilde_x(a.x, a.u, a.t) * mt
            + jump_term
            - spec.beta * q
    };
    sweep(&SweepProblem {
        bundle: traj.bundle,
        n_sweep,
        features: &features,
        driver: &driver,
        terminal: vec![0.0; traj.fwd.n_paths()],
        parts: SweepParts::all(),
    })
}

/// All three solved adjoints.
pub struct AdjointBundle {
    pub p: Vec<Vec<f64>>,
    pub q_big: Vec<Vec<f64>>,
    pub m_tilde_big: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub m_tilde: Vec<Vec<f64>>,
    pub n_marks: Vec<Vec<Vec<f64>>>,
}

pub fn solve_adjoints(
    spec: &ModelSpec,
    traj: &OptimalTrajectory,
    n: f64,
    basis: &RegressionBasis,
) -> Result<AdjointBundle> {
    let p = solve_adjoint_p(spec, traj)?;
    let (q_big, m_tilde_big) = solve_adjoint_qm(spec, traj, n, basis)?;
    let third = solve_adjoint_q(spec, traj, &p, &m_tilde_big, n, basis)?;
    Ok(AdjointBundle {
        p,
        q_big,
        m_tilde_big,
        q: third.y,
        m: third.z,
        m_tilde: third.z_tilde,
        n_marks: third.gamma,
    })
}

/// Bounds entering the joint-solvability sufficient condition; estimated on
/// probe points by the caller.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScBounds {
    pub b_gy: f64,
    pub b_gz: f64,
    pub b_gzt: f64,
    pub b_ggamma: f64,
    pub b_h: f64,
    pub b_btx: f64,
    pub b_sx: f64,
    pub b_stx: f64,
    pub b_lx: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScReport {
    pub lambda_min: f64,
    /// mu1 + mu2 - lambda_min / 2; passes when negative.
    pub margin: f64,
    pub beta_prescribed: f64,
    pub pass: bool,
}

/// Joint sufficient condition: mu1 + mu2 < lambda_min / 2 together with the
/// prescribed discount beta = (mu1 - mu2)/2 + (B_btx - B_gy)/2, evaluated at
/// t = 0.
pub fn sufficient_condition_check(spec: &ModelSpec, bounds: &ScBounds) -> ScReport {
    let k2 = bounds.b_gz * bounds.b_gz
        + bounds.b_gzt * bounds.b_gzt
        + bounds.b_ggamma * bounds.b_ggamma;
    let first = -2.0 * bounds.b_h * bounds.b_h - k2;
    let second = -2.0 * bounds.b_sx * bounds.b_sx
        - 2.0 * bounds.b_stx * bounds.b_stx
        - 2.0 * bounds.b_lx * bounds.b_lx
        - k2;
    let lambda_min = first.min(second);
    let margin = spec.mu1 + spec.mu2 - 0.5 * lambda_min;
    let beta_prescribed = 0.5 * (spec.mu1 - spec.mu2) + 0.5 * (bounds.b_btx - bounds.b_gy);
    ScReport {
        lambda_min,
        margin,
        beta_prescribed,
        pass: margin < 0.0,
    }
}

/// Estimates the sufficient-condition bounds on the candidate trajectory.
pub fn estimate_sc_bounds(spec: &ModelSpec, traj: &OptimalTrajectory) -> ScBounds {
    let grid = traj.fwd.grid;
    let mut b = ScBounds {
        b_gy: 0.0,
        b_gz: 0.0,
        b_gzt: 0.0,
        b_ggamma: 0.0,
        b_h: 0.0,
        b_btx: 0.0,
        b_sx: 0.0,
        b_stx: 0.0,
        b_lx: 0.0,
    };
    let stride = (grid.n_steps / 16).max(1);
    for p in 0..traj.fwd.n_paths().min(16) {
        for j in (0..grid.n_steps).step_by(stride) {
            let a = traj.gen_args(p, j);
            b.b_gy = b.b_gy.max(spec.g_y(a).abs());
            b.b_gz = b.b_gz.max(spec.g_z(a).abs());
            b.b_gzt = b.b_gzt.max(spec.g_zt(a).abs());
            b.b_ggamma = b.b_ggamma.max(spec.g_gamma(a).abs());
            b.b_h = b.b_h.max(spec.h(a.x, a.u).abs());
            b.b_btx = b.b_btx.max(spec.b_tilde_x(a.x, a.u, a.t).abs());
            b.b_sx = b.b_sx.max(spec.sigma_x(a.x, a.u, a.t).abs());
            b.b_stx = b.b_stx.max(spec.sigma_tilde_x(a.x, a.u, a.t).abs());
            for &e in &traj.bundle.marks.marks {
                b.b_lx = b.b_lx.max(spec.l_x(a.x, a.u, e, a.t).abs());
            }
        }
    }
    b
}

/// Point at which the Hamiltonian is evaluated.
#[derive(Clone, Copy, Debug, Default)]
pub struct HamiltonianInputs {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub zt: f64,
    pub gi: f64,
    pub density: f64,
    pub u: f64,
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub m_tilde: f64,
    /// One n-value per mark.
    pub n_big: f64,
    pub big_m_tilde: f64,
}

/// H = g p + b-tilde q + sigma m + sigma-tilde m-tilde + Int l n nu
///   + e^{-beta t/2} h M-tilde Z + f Z.
/// The jump pairing uses a single representative n value per call; callers
/// with several marks sum mark-wise.
pub fn hamiltonian(inp: &HamiltonianInputs, spec: &ModelSpec, bundle: &NoiseBundle) -> f64 {
    let jump: f64 = bundle
        .marks
        .marks
        .iter()
        .zip(&bundle.marks.intensities)
        .map(|(&e, &nu)| spec.l(inp.x, inp.u, e, inp.t) * inp.n_big * nu)
        .sum();
    spec.g(inp.x, inp.y, inp.z, inp.zt, inp.gi, inp.u, inp.t) * inp.p
        + spec.b_tilde(inp.x, inp.u, inp.t) * inp.q
        + spec.sigma(inp.x, inp.u, inp.t) * inp.m
        + spec.sigma_tilde(inp.x, inp.u, inp.t) * inp.m_tilde
        + jump
        + (-0.5 * spec.beta * inp.t).exp() * spec.h(inp.x, inp.u) * inp.big_m_tilde * inp.density
        + spec.f(inp.x, inp.y, inp.z, inp.zt, inp.gi, inp.u) * inp.density
}

/// Control-partial of the Hamiltonian assembled from coefficient partials.
pub fn hamiltonian_u(inp: &HamiltonianInputs, spec: &ModelSpec, bundle: &NoiseBundle) -> f64 {
    let a = GenArgs {
        x: inp.x,
        y: inp.y,
        z: inp.z,
        zt: inp.zt,
        gi: inp.gi,
        u: inp.u,
        t: inp.t,
    };
    let jump_u: f64 = bundle
        .marks
        .marks
        .iter()
        .zip(&bundle.marks.intensities)
        .map(|(&e, &nu)| spec.l_u(inp.x, inp.u, e, inp.t) * inp.n_big * nu)
        .sum();
    spec.g_u(a) * inp.p
        + spec.b_tilde_u(inp.x, inp.u, inp.t) * inp.q
        + spec.sigma_u(inp.x, inp.u, inp.t) * inp.m
        + spec.sigma_tilde_u(inp.x, inp.u, inp.t) * inp.m_tilde
        + jump_u
        + (-0.5 * spec.beta * inp.t).exp()
            * spec.h_u(inp.x, inp.u)
            * inp.big_m_tilde
            * inp.density
        + spec.f_u(a) * inp.density
}

/// Finite-difference control-partial of the full Hamiltonian, used as a
/// cross-check on the assembled form.
pub fn hamiltonian_u_fd(inp: &HamiltonianInputs, spec: &ModelSpec, bundle: &NoiseBundle) -> f64 {
    let h = 1e-5 * (1.0 + inp.u.abs());
    let mut up = *inp;
    up.u = inp.u + h;
    let mut dn = *inp;
    dn.u = inp.u - h;
    (hamiltonian(&up, spec, bundle) - hamiltonian(&dn, spec, bundle)) / (2.0 * h)
}

fn inputs_at(
    traj: &OptimalTrajectory,
    adj: &AdjointBundle,
    p: usize,
    j: usize,
) -> HamiltonianInputs {
    let a = traj.gen_args(p, j);
    HamiltonianInputs {
        t: a.t,
        x: a.x,
        y: a.y,
        z: a.z,
        zt: a.zt,
        gi: a.gi,
        density: traj.density.z[p][j],
        u: a.u,
        p: adj.p[p][j],
        q: adj.q[p][j],
        m: adj.m[p][j],
        m_tilde: adj.m_tilde[p][j],
        n_big: adj.n_marks[p][j].first().copied().unwrap_or(0.0),
        big_m_tilde: adj.m_tilde_big[p][j],
    }
}

/// One time slice of the conditional maximum-condition profile.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MaxConditionSlice {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub min_fitted: f64,
    pub max_fitted: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxConditionReport {
    pub profile: Vec<MaxConditionSlice>,
    /// Integral of the negative part of estimate + 3 stderr over time.
    pub violation_score: f64,
}

/// Regresses the pathwise Hamiltonian control-partial onto observation
/// features per time slice and scores negativity of the conditional profile.
pub fn maximum_condition_test(
    spec: &ModelSpec,
    traj: &OptimalTrajectory,
    adj: &AdjointBundle,
    stride: usize,
) -> Result<MaxConditionReport> {
    let grid = traj.fwd.grid;
    let dt = grid.dt();
    let n_paths = traj.fwd.n_paths();
    let table = xi_feature_table(traj.xi);
    let mut profile = Vec::new();
    let mut violation = 0.0;
    let stride = stride.max(1);
    for j in (0..grid.n_steps).step_by(stride) {
        let hu: Vec<f64> = (0..n_paths)
            .map(|p| hamiltonian_u(&inputs_at(traj, adj, p, j), spec, traj.bundle))
            .collect();
        let rows: Vec<Vec<f64>> = (0..n_paths).map(|p| table[p][j].clone()).collect();
        let f = fit(&rows, &hu, j)?;
        let fitted: Vec<f64> = rows.iter().map(|r| f.predict(r)).collect();
        let (estimate, stderr) = mean_stderr(&hu);
        let slice = MaxConditionSlice {
            t: grid.t(j),
            estimate,
            stderr,
            min_fitted: fitted.iter().copied().fold(f64::INFINITY, f64::min),
            max_fitted: fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        violation += (-(slice.estimate + 3.0 * slice.stderr)).max(0.0) * dt * stride as f64;
        profile.push(slice);
    }
    Ok(MaxConditionReport {
        profile,
        violation_score: violation,
    })
}

/// One discounted adjoint-variational pairing sampled along the grid.
#[derive(Clone, Debug, Serialize)]
pub struct TailSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub fitted_rate: f64,
    pub peak: f64,
}

/// Transversality diagnostics: E[e^{-beta t} p y1], E[e^{-beta t} Q Z1],
/// E[e^{-beta t} q x1] over the grid, with tail decay fits.
pub fn transversality_check(
    adj: &AdjointBundle,
    var: &VariationalBundle,
    beta: f64,
    grid: crate::model::TimeGrid,
) -> Vec<TailSeries> {
    let pairings: [(&str, &Vec<Vec<f64>>, &Vec<Vec<f64>>); 3] = [
        ("p_y1", &adj.p, &var.y1),
        ("Q_Z1", &adj.q_big, &var.density1),
        ("q_x1", &adj.q, &var.x1),
    ];
    pairings
        .iter()
        .map(|(name, a, b)| {
            let mut times = Vec::new();
            let mut values = Vec::new();
            let mut stderrs = Vec::new();
            for j in 0..=grid.n_steps {
                let t = grid.t(j);
                let w = (-beta * t).exp();
                let samples: Vec<f64> = a.iter().zip(b.iter()).map(|(ra, rb)| w * ra[j] * rb[j]).collect();
                let (m, s) = mean_stderr(&samples);
                times.push(t);
                values.push(m);
                stderrs.push(s);
            }
            let half = times.len() / 2;
            let abs_tail: Vec<f64> = values[half..].iter().map(|v| v.abs()).collect();
            let fitted_rate = exp_decay_rate(&times[half..], &abs_tail);
            let peak = values.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            TailSeries {
                name: name.to_string(),
                times,
                values,
                stderrs,
                fitted_rate,
                peak,
            }
        })
        .collect()
}

/// Drivers of the rewritten adjoint system assembled from Hamiltonian
/// partials; must equal the raw drivers algebraically.
pub fn rewritten_p_drift(inp: &HamiltonianInputs, spec: &ModelSpec, bundle: &NoiseBundle) -> f64 {
    // H_y + beta p, with H_y = g_y p + f_y Z.
    let _ = bundle;
    let a = GenArgs {
        x: inp.x,
        y: inp.y,
        z: inp.z,
        zt: inp.zt,
        gi: inp.gi,
        u: inp.u,
        t: inp.t,
    };
    spec.g_y(a) * inp.p + spec.f_y(a) * inp.density + spec.beta * inp.p
}

pub fn raw_p_drift(inp: &HamiltonianInputs, spec: &ModelSpec) -> f64 {
    let a = GenArgs {
        x: inp.x,
        y: inp.y,
        z: inp.z,
        zt: inp.zt,
        gi: inp.gi,
        u: inp.u,
        t: inp.t,
    };
    inp.density * spec.f_y(a) + spec.g_y(a) * inp.p + spec.beta * inp.p
}

/// H_Z - beta Q vs the raw Q-driver.
pub fn rewritten_q_big_drift(inp: &HamiltonianInputs, spec: &ModelSpec, q_big: f64) -> f64 {
    let hz = (-0.5 * spec.beta * inp.t).exp() * spec.h(inp.x, inp.u) * inp.big_m_tilde
        + spec.f(inp.x, inp.y, inp.z, inp.zt, inp.gi, inp.u);
    hz - spec.beta * q_big
}

pub fn raw_q_big_drift(inp: &HamiltonianInputs, spec: &ModelSpec, q_big: f64) -> f64 {
    spec.f(inp.x, inp.y, inp.z, inp.zt, inp.gi, inp.u)
        + (-0.5 * spec.beta * inp.t).exp() * spec.h(inp.x, inp.u) * inp.big_m_tilde
        - spec.beta * q_big
}

/// H_x - beta q vs the raw q-driver.
pub fn rewritten_q_drift(inp: &HamiltonianInputs, spec: &ModelSpec, bundle: &NoiseBundle) -> f64 {
    let a = GenArgs {
        x: inp.x,
        y: inp.y,
        z: inp.z,
        zt: inp.zt,
        gi: inp.gi,
        u: inp.u,
        t: inp.t,
    };
    let jump_x: f64 = bundle
        .marks
        .marks
        .iter()
        .zip(&bundle.marks.intensities)
        .map(|(&e, &nu)| spec.l_x(inp.x, inp.u, e, inp.t) * inp.n_big * nu)
        .sum();
    let hx = spec.g_x(a) * inp.p
        + spec.b_tilde_x(inp.x, inp.u, inp.t) * inp.q
        + spec.sigma_x(inp.x, inp.u, inp.t) * inp.m
        + spec.sigma_tilde_x(inp.x, inp.u, inp.t) * inp.m_tilde
        + jump_x
        + (-0.5 * spec.beta * inp.t).exp()
            * spec.h_x(inp.x, inp.u)
            * inp.big_m_tilde
            * inp.density
        + spec.f_x(a) * inp.density;
    hx - spec.beta * inp.q
}

pub fn raw_q_drift(inp: &HamiltonianInputs, spec: &ModelSpec, bundle: &NoiseBundle) -> f64 {
    let a = GenArgs {
        x: inp.x,
        y: inp.y,
        z: inp.z,
        zt: inp.zt,
        gi: inp.gi,
        u: inp.u,
        t: inp.t,
    };
    let jump_x: f64 = bundle
        .marks
        .marks
        .iter()
        .zip(&bundle.marks.intensities)
        .map(|(&e, &nu)| spec.l_x(inp.x, inp.u, e, inp.t) * inp.n_big * nu)
        .sum();
    inp.density * spec.f_x(a)
        + spec.g_x(a) * inp.p
        + spec.b_tilde_x(inp.x, inp.u, inp.t) * inp.q
        + spec.sigma_x(inp.x, inp.u, inp.t) * inp.m
        + spec.sigma_tilde_x(inp.x, inp.u, inp.t) * inp.m_tilde
        + jump_x
        - spec.beta * inp.q
        + (-0.5 * spec.beta * inp.t).exp()
            * spec.h_x(inp.x, inp.u)
            * inp.big_m_tilde
            * inp.density
}

/// Euler coefficient set (drift, dW, dxi, per-mark jump) of one scalar Ito
/// process along one path/step.
#[derive(Clone, Debug, Default)]
struct ItoCoeffs {
    a: f64,
    b: f64,
    c: f64,
    jumps: Vec<f64>,
}

fn pairing_increment(
    f_val: f64,
    g_val: f64,
    cf: &ItoCoeffs,
    cg: &ItoCoeffs,
    bundle: &NoiseBundle,
    p: usize,
    j: usize,
    dt: f64,
) -> f64 {
    let dw = bundle.dw[p][j];
    let dxi = bundle.dxi[p][j];
    let mut inc = f_val * (cg.a * dt + cg.b * dw + cg.c * dxi)
        + g_val * (cf.a * dt + cf.b * dw + cf.c * dxi)
        + (cf.b * cg.b + cf.c * cg.c) * dt;
    for (i, &nu) in bundle.marks.intensities.iter().enumerate() {
        let dn = bundle.jump_counts[p][j][i] as f64;
        let comp = dn - nu * dt;
        let jf = cf.jumps.get(i).copied().unwrap_or(0.0);
        let jg = cg.jumps.get(i).copied().unwrap_or(0.0);
        inc += f_val * jg * comp + g_val * jf * comp + jf * jg * dn;
    }
    inc
}

/// Duality check of the maximum-principle proof: the Ito product-rule
/// expansion of -e^{-beta t} p y1 + e^{-beta t} Q Z1 + e^{-beta t} q x1,
/// assembled from the analytic drivers, against the direct pathwise change of
/// the same composite. Returns the mean absolute residual over [0, window_T].
#[allow(clippy::too_many_arguments)]
pub fn duality_residual(
    spec: &ModelSpec,
    traj: &OptimalTrajectory,
    var: &VariationalBundle,
    adj: &AdjointBundle,
    v: &ControlProcess,
    window_t: f64,
) -> Result<f64> {
    let grid = traj.fwd.grid;
    let dt = grid.dt();
    let last = grid.step_at(window_t);
    let bundle = traj.bundle;
    let n_marks = bundle.marks.len();
    let mut residuals = Vec::with_capacity(traj.fwd.n_paths());
    for p in 0..traj.fwd.n_paths() {
        let composite = |j: usize| -> f64 {
            let w = (-spec.beta * grid.t(j)).exp();
            w * (-adj.p[p][j] * var.y1[p][j]
                + adj.q_big[p][j] * var.density1[p][j]
                + adj.q[p][j] * var.x1[p][j])
        };
        let direct = composite(last) - composite(0);
        let mut expansion = 0.0;
        for j in 0..last {
            let a = traj.gen_args(p, j);
            let zb = traj.density.z[p][j];
            let w_half = (-0.5 * spec.beta * a.t).exp();
            let vt = v.eval(a.t, a.x);

            // p coefficients.
            let pv = adj.p[p][j];
            let c_p = ItoCoeffs {
                a: zb * spec.f_y(a) + spec.g_y(a) * pv + spec.beta * pv,
                b: zb * spec.f_z(a) + spec.g_z(a) * pv,
                c: zb * spec.f_zt(a) + spec.g_zt(a) * pv,
                jumps: vec![zb * spec.f_gamma(a) + spec.g_gamma(a) * pv; n_marks],
            };
            // y1 coefficients (note -dy1 = [...]dt - z1 dW - ...).
            let gi1 = var.gamma1_nu(bundle, p, j);
            let c_y1 = ItoCoeffs {
                a: -(spec.g_x(a) * var.x1[p][j]
                    + spec.g_y(a) * var.y1[p][j]
                    + spec.g_z(a) * var.z1[p][j]
                    + spec.g_zt(a) * var.z_tilde1[p][j]
                    + spec.g_gamma(a) * gi1
                    + spec.g_u(a) * vt),
                b: var.z1[p][j],
                c: var.z_tilde1[p][j],
                jumps: var.gamma1[p][j].clone(),
            };
            // Q coefficients.
            let f_bar = spec.f(a.x, a.y, a.z, a.zt, a.gi, a.u);
            let h_bar = spec.h(a.x, a.u);
            let c_q_big = ItoCoeffs {
                a: -(f_bar + w_half * h_bar * adj.m_tilde_big[p][j]
                    - spec.beta * adj.q_big[p][j]),
                b: 0.0,
                c: adj.m_tilde_big[p][j],
                jumps: vec![0.0; n_marks],
            };
            // Z1 coefficients.
            let c_z1 = ItoCoeffs {
                a: 0.0,
                b: 0.0,
                c: w_half
                    * (zb * (spec.h_x(a.x, a.u) * var.x1[p][j] + spec.h_u(a.x, a.u) * vt)
                        + h_bar * var.density1[p][j]),
                jumps: vec![0.0; n_marks],
            };
            // q coefficients.
            let kappa = zb * spec.f_x(a)
                + spec.g_x(a) * pv
                + w_half * zb * spec.h_x(a.x, a.u) * adj.m_tilde_big[p][j];
            let jump_term: f64 = adj.n_marks[p][j]
                .iter()
                .zip(&bundle.marks.marks)
                .zip(&bundle.marks.intensities)
                .map(|((&nv, &e), &nu)| spec.l_x(a.x, a.u, e, a.t) * nv * nu)
                .sum();
            let c_q = ItoCoeffs {
                a: -(kappa
                    + spec.b_tilde_x(a.x, a.u, a.t) * adj.q[p][j]
                    + spec.sigma_x(a.x, a.u, a.t) * adj.m[p][j]
                    + spec.sigma_tilde_x(a.x, a.u, a.t) * adj.m_tilde[p][j]
                    + jump_term
                    - spec.beta * adj.q[p][j]),
                b: adj.m[p][j],
                c: adj.m_tilde[p][j],
                jumps: adj.n_marks[p][j].clone(),
            };
            // x1 coefficients.
            let c_x1 = ItoCoeffs {
                a: spec.b_tilde_x(a.x, a.u, a.t) * var.x1[p][j]
                    + spec.b_tilde_u(a.x, a.u, a.t) * vt,
                b: spec.sigma_x(a.x, a.u, a.t) * var.x1[p][j] + spec.sigma_u(a.x, a.u, a.t) * vt,
                c: spec.sigma_tilde_x(a.x, a.u, a.t) * var.x1[p][j]
                    + spec.sigma_tilde_u(a.x, a.u, a.t) * vt,
                jumps: bundle
                    .marks
                    .marks
                    .iter()
                    .map(|&e| {
                        spec.l_x(a.x, a.u, e, a.t) * var.x1[p][j]
                            + spec.l_u(a.x, a.u, e, a.t) * vt
                    })
                    .collect(),
            };

            let w = (-spec.beta * a.t).exp();
            let term = -pairing_increment(
                pv,
                var.y1[p][j],
                &c_p,
                &c_y1,
                bundle,
                p,
                j,
                dt,
            ) + pairing_increment(
                adj.q_big[p][j],
                var.density1[p][j],
                &c_q_big,
                &c_z1,
                bundle,
                p,
                j,
                dt,
            ) + pairing_increment(adj.q[p][j], var.x1[p][j], &c_q, &c_x1, bundle, p, j, dt);
            let level = -pv * var.y1[p][j]
                + adj.q_big[p][j] * var.density1[p][j]
                + adj.q[p][j] * var.x1[p][j];
            expansion += w * (term - spec.beta * level * dt);
        }
        residuals.push((expansion - direct).abs());
    }
    Ok(mean(&residuals))
}
