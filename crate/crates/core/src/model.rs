//! Problem specification: coefficient functions, structural constants, and
//! assumption validation shared by every other module.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of the forward state: (x, u, t) -> value.
pub type StateCoeff = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Jump coefficient: (x, u, mark, t) -> value.
pub type JumpCoeff = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Backward generator: (x, y, z, z_tilde, gamma_integral, u, t) -> value.
pub type GeneratorFn = Arc<dyn Fn(f64, f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Running cost: (x, y, z, z_tilde, gamma_integral, u) -> value.
pub type CostFn = Arc<dyn Fn(f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Initial cost on the backward state: y -> value.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Observation drift: (x, u) -> value.
pub type ObsFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Relative step for central finite differences on coefficient partials.
const FD_REL_STEP: f64 = 1e-5;

fn cdiff(f: impl Fn(f64) -> f64, v: f64) -> f64 {
    let h = FD_REL_STEP * (1.0 + v.abs());
    (f(v + h) - f(v - h)) / (2.0 * h)
}

/// Lipschitz constants of the forward coefficients, assumption (A3).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Lipschitz {
    pub l_b: f64,
    pub l_sigma: f64,
    pub l_sigma_tilde: f64,
    pub l_l: f64,
}

/// Decay rates: generator Lipschitz envelopes K_i(t) = e^{-K_i t / 2} per
/// (A7) and the correlated-diffusion envelope mu0(t) = e^{-mu0 t / 2} of (A1).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecayRates {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub mu0: f64,
}

/// Growth regime for the running and initial costs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum GrowthMode {
    /// Constant quadratic-growth envelope.
    H1,
    /// Envelope rescaled by e^{-k_growth t}.
    H1Prime { k_growth: f64 },
}

/// Optional analytic control-partials. When present they override the
/// finite-difference fallback; the maximum-condition diagnostics compare the
/// two on purpose.
#[derive(Clone, Default)]
pub struct AnalyticUPartials {
    pub b_u: Option<StateCoeff>,
    pub sigma_u: Option<StateCoeff>,
    pub sigma_tilde_u: Option<StateCoeff>,
    pub l_u: Option<JumpCoeff>,
    pub g_u: Option<GeneratorFn>,
    pub f_u: Option<CostFn>,
    pub h_u: Option<ObsFn>,
}

/// Full model specification. Immutable after construction; coefficient
/// closures must be pure so the spec can be shared across simulation workers.
#[derive(Clone)]
pub struct ModelSpec {
    pub drift_b: StateCoeff,
    pub diff_sigma: StateCoeff,
    pub diff_sigma_tilde: StateCoeff,
    pub jump_l: JumpCoeff,
    pub generator_g: GeneratorFn,
    pub running_cost_f: CostFn,
    pub initial_cost_phi: ScalarFn,
    pub observation_h: ObsFn,
    /// Monotonicity constant of b in x, (A2).
    pub mu1: f64,
    /// Monotonicity constant of g in y, (A6).
    pub mu2: f64,
    pub lipschitz: Lipschitz,
    pub decay_rates: DecayRates,
    /// Discount factor of the cost functional and the weighted spaces.
    pub beta: f64,
    pub x0: f64,
    pub growth_mode: GrowthMode,
    pub analytic_u: AnalyticUPartials,
}

impl ModelSpec {
    pub fn b(&self, x: f64, u: f64, t: f64) -> f64 {
        (self.drift_b)(x, u, t)
    }
    pub fn sigma(&self, x: f64, u: f64, t: f64) -> f64 {
        (self.diff_sigma)(x, u, t)
    }
    pub fn sigma_tilde(&self, x: f64, u: f64, t: f64) -> f64 {
        (self.diff_sigma_tilde)(x, u, t)
    }
    pub fn l(&self, x: f64, u: f64, e: f64, t: f64) -> f64 {
        (self.jump_l)(x, u, e, t)
    }
    pub fn g(&self, x: f64, y: f64, z: f64, zt: f64, gi: f64, u: f64, t: f64) -> f64 {
        (self.generator_g)(x, y, z, zt, gi, u, t)
    }
    pub fn f(&self, x: f64, y: f64, z: f64, zt: f64, gi: f64, u: f64) -> f64 {
        (self.running_cost_f)(x, y, z, zt, gi, u)
    }
    pub fn phi(&self, y: f64) -> f64 {
        (self.initial_cost_phi)(y)
    }
    pub fn h(&self, x: f64, u: f64) -> f64 {
        (self.observation_h)(x, u)
    }

    /// Drift under the transformed measure: b - e^{-beta t/2} sigma_tilde h.
    pub fn b_tilde(&self, x: f64, u: f64, t: f64) -> f64 {
        self.b(x, u, t) - (-0.5 * self.beta * t).exp() * self.sigma_tilde(x, u, t) * self.h(x, u)
    }

    pub fn b_x(&self, x: f64, u: f64, t: f64) -> f64 {
        cdiff(|v| self.b(v, u, t), x)
    }
    pub fn b_u(&self, x: f64, u: f64, t: f64) -> f64 {
        match &self.analytic_u.b_u {
            Some(f) => f(x, u, t),
            None => cdiff(|v| self.b(x, v, t), u),
        }
    }
    pub fn sigma_x(&self, x: f64, u: f64, t: f64) -> f64 {
        cdiff(|v| self.sigma(v, u, t), x)
    }
    pub fn sigma_u(&self, x: f64, u: f64, t: f64) -> f64 {
        match &self.analytic_u.sigma_u {
            Some(f) => f(x, u, t),
            None => cdiff(|v| self.sigma(x, v, t), u),
        }
    }
    pub fn sigma_tilde_x(&self, x: f64, u: f64, t: f64) -> f64 {
        cdiff(|v| self.sigma_tilde(v, u, t), x)
    }
    pub fn sigma_tilde_u(&self, x: f64, u: f64, t: f64) -> f64 {
        match &self.analytic_u.sigma_tilde_u {
            Some(f) => f(x, u, t),
            None => cdiff(|v| self.sigma_tilde(x, v, t), u),
        }
    }
    pub fn l_x(&self, x: f64, u: f64, e: f64, t: f64) -> f64 {
        cdiff(|v| self.l(v, u, e, t), x)
    }
    pub fn l_u(&self, x: f64, u: f64, e: f64, t: f64) -> f64 {
        match &self.analytic_u.l_u {
            Some(f) => f(x, u, e, t),
            None => cdiff(|v| self.l(x, v, e, t), u),
        }
    }
    pub fn h_x(&self, x: f64, u: f64) -> f64 {
        cdiff(|v| self.h(v, u), x)
    }
    pub fn h_u(&self, x: f64, u: f64) -> f64 {
        match &self.analytic_u.h_u {
            Some(f) => f(x, u),
            None => cdiff(|v| self.h(x, v), u),
        }
    }
    pub fn phi_y(&self, y: f64) -> f64 {
        cdiff(|v| self.phi(v), y)
    }

    pub fn b_tilde_x(&self, x: f64, u: f64, t: f64) -> f64 {
        let w = (-0.5 * self.beta * t).exp();
        self.b_x(x, u, t)
            - w * (self.sigma_tilde_x(x, u, t) * self.h(x, u)
                + self.sigma_tilde(x, u, t) * self.h_x(x, u))
    }
    pub fn b_tilde_u(&self, x: f64, u: f64, t: f64) -> f64 {
        let w = (-0.5 * self.beta * t).exp();
        self.b_u(x, u, t)
            - w * (self.sigma_tilde_u(x, u, t) * self.h(x, u)
                + self.sigma_tilde(x, u, t) * self.h_u(x, u))
    }

    pub fn g_x(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.g(v, a.y, a.z, a.zt, a.gi, a.u, a.t), a.x)
    }
    pub fn g_y(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.g(a.x, v, a.z, a.zt, a.gi, a.u, a.t), a.y)
    }
    pub fn g_z(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.g(a.x, a.y, v, a.zt, a.gi, a.u, a.t), a.z)
    }
    pub fn g_zt(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.g(a.x, a.y, a.z, v, a.gi, a.u, a.t), a.zt)
    }
    pub fn g_gamma(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.g(a.x, a.y, a.z, a.zt, v, a.u, a.t), a.gi)
    }
    pub fn g_u(&self, a: GenArgs) -> f64 {
        match &self.analytic_u.g_u {
            Some(f) => f(a.x, a.y, a.z, a.zt, a.gi, a.u, a.t),
            None => cdiff(|v| self.g(a.x, a.y, a.z, a.zt, a.gi, v, a.t), a.u),
        }
    }

    pub fn f_x(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.f(v, a.y, a.z, a.zt, a.gi, a.u), a.x)
    }
    pub fn f_y(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.f(a.x, v, a.z, a.zt, a.gi, a.u), a.y)
    }
    pub fn f_z(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.f(a.x, a.y, v, a.zt, a.gi, a.u), a.z)
    }
    pub fn f_zt(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.f(a.x, a.y, a.z, v, a.gi, a.u), a.zt)
    }
    pub fn f_gamma(&self, a: GenArgs) -> f64 {
        cdiff(|v| self.f(a.x, a.y, a.z, a.zt, v, a.u), a.gi)
    }
    pub fn f_u(&self, a: GenArgs) -> f64 {
        match &self.analytic_u.f_u {
            Some(f) => f(a.x, a.y, a.z, a.zt, a.gi, a.u),
            None => cdiff(|v| self.f(a.x, a.y, a.z, a.zt, a.gi, v), a.u),
        }
    }
}

/// Argument tuple along which generator / running-cost partials are taken.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenArgs {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub zt: f64,
    pub gi: f64,
    pub u: f64,
    pub t: f64,
}

/// Finite jump-mark set with per-mark Poisson intensities.
#[derive(Clone, Debug, Serialize)]
pub struct MarkSpace {
    pub marks: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl MarkSpace {
    pub fn new(marks: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if marks.len() != intensities.len() {
            return Err(Error::config(
                "mark_space",
                "marks and intensities must have equal length",
            ));
        }
        if intensities.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::config(
                "mark_space.intensities",
                "intensities must be positive and finite",
            ));
        }
        Ok(MarkSpace { marks, intensities })
    }

    pub fn empty() -> Self {
        MarkSpace {
            marks: Vec::new(),
            intensities: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Total intensity nu(E).
    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }
}

/// Uniform mesh on [0, T] where T is the truncation horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon_t: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon_t: f64, n_steps: usize) -> Result<Self> {
        if !(horizon_t > 0.0) || n_steps == 0 {
            return Err(Error::config("grid", "horizon and step count must be positive"));
        }
        Ok(TimeGrid { horizon_t, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon_t / self.n_steps as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    /// Index of the last grid point at or before time `s`.
    pub fn step_at(&self, s: f64) -> usize {
        ((s / self.dt()).round() as usize).min(self.n_steps)
    }
}

/// Flexible per-estimate discount factors used by the high-order moment
/// bounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiscountProfile {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
}

impl DiscountProfile {
    /// All six factors equal to the model discount; satisfies every ordering.
    pub fn uniform(beta: f64) -> Self {
        DiscountProfile {
            beta0: beta,
            beta1: beta,
            beta2: beta,
            beta3: beta,
            beta4: beta,
            beta5: beta,
        }
    }

    /// Ordering constraints plus beta >= max_i beta_i. Returns the violated
    /// constraint name, if any.
    pub fn check(&self, beta: f64) -> Option<&'static str> {
        if self.beta0 > self.beta3.min(self.beta4) {
            return Some("beta0 <= min(beta3, beta4)");
        }
        if self.beta1 > self.beta2.min(self.beta3).min(self.beta4) {
            return Some("beta1 <= min(beta2, beta3, beta4)");
        }
        if self.beta5 > self.beta2 {
            return Some("beta5 <= beta2");
        }
        let max = self
            .beta0
            .max(self.beta1)
            .max(self.beta2)
            .max(self.beta3)
            .max(self.beta4)
            .max(self.beta5);
        if beta < max {
            return Some("beta >= max_i beta_i");
        }
        None
    }
}

/// Outcome of one assumption inequality. `margin` is the signed left-hand
/// side of the inequality written as `margin < 0` (or the slack written as
/// `margin > 0` for lower-bound checks); `pass` resolves the sign convention.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub assumption: String,
    pub pass: bool,
    pub margin: f64,
    pub probe: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&AssumptionCheck> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Generator Lipschitz envelopes K_i(t) = e^{-K_i t/2} evaluated at `t`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EffectiveLipschitz {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

/// Evaluates the decaying Lipschitz envelopes of the generator at time `t`.
pub fn effective_lipschitz(spec: &ModelSpec, t: f64) -> EffectiveLipschitz {
    assert!(t >= 0.0, "time must be nonnegative");
    let d = &spec.decay_rates;
    EffectiveLipschitz {
        k0: (-0.5 * d.k0 * t).exp(),
        k1: (-0.5 * d.k1 * t).exp(),
        k2: (-0.5 * d.k2 * t).exp(),
        k3: (-0.5 * d.k3 * t).exp(),
        k4: (-0.5 * d.k4 * t).exp(),
    }
}

/// Largest absolute generator slopes |g_y|, |g_z|, |g_zt|, |g_gamma|, |g_u|
/// probed over the given state points at t = 0, each capped by the declared
/// envelope value 1 = e^0. These are the coefficients the weighted-space
/// inequalities actually involve; the declared K_i are only upper envelopes.
pub fn probed_generator_slopes(spec: &ModelSpec, probes: &[(f64, f64, f64)]) -> [f64; 5] {
    let back_states = [
        (0.0, 0.0, 0.0, 0.0),
        (0.3, 0.2, 0.1, 0.1),
        (-0.7, -0.4, 0.5, -0.2),
    ];
    let mut out = [0.0f64; 5];
    for &(x, u, _) in probes {
        for &(y, z, zt, gi) in &back_states {
            let a = GenArgs {
                x,
                y,
                z,
                zt,
                gi,
                u,
                t: 0.0,
            };
            out[0] = out[0].max(spec.g_y(a).abs());
            out[1] = out[1].max(spec.g_z(a).abs());
            out[2] = out[2].max(spec.g_zt(a).abs());
            out[3] = out[3].max(spec.g_gamma(a).abs());
            out[4] = out[4].max(spec.g_u(a).abs());
        }
    }
    for v in &mut out {
        *v = v.min(1.0);
    }
    out
}

/// Checks every numerically checkable assumption inequality on the probe
/// points. Monotonicity constants are declared and verified pairwise, never
/// inferred; derivative boundedness uses central differences.
pub fn validate_assumptions(
    spec: &ModelSpec,
    profile: &DiscountProfile,
    probe_points: &[(f64, f64, f64)],
) -> Result<ValidationReport> {
    if probe_points.is_empty() {
        return Err(Error::config("probe_points", "must be non-empty"));
    }
    let mut entries = Vec::new();

    // Totality of every coefficient on the probes.
    for &(x, u, t) in probe_points {
        let checks: [(&str, f64); 6] = [
            ("b", spec.b(x, u, t)),
            ("sigma", spec.sigma(x, u, t)),
            ("sigma_tilde", spec.sigma_tilde(x, u, t)),
            ("h", spec.h(x, u)),
            ("g", spec.g(x, 0.1, 0.1, 0.1, 0.1, u, t)),
            ("f", spec.f(x, 0.1, 0.1, 0.1, 0.1, u)),
        ];
        for (name, v) in checks {
            if !v.is_finite() {
                return Err(Error::NonFiniteCoefficient {
                    name: name.to_string(),
                    x,
                    u,
                    t,
                });
            }
        }
    }

    // (A8): beta + 2 mu2 + 2 (K1^2 + K2^2 + K3^2 + K4^2) < 0 at t = 0,
    // with the probed slopes of the supplied generator.
    let slopes = probed_generator_slopes(spec, probe_points);
    let k_sq = slopes[1] * slopes[1]
        + slopes[2] * slopes[2]
        + slopes[3] * slopes[3]
        + slopes[4] * slopes[4];
    let a8 = spec.beta + 2.0 * spec.mu2 + 2.0 * k_sq;
    entries.push(AssumptionCheck {
        assumption: "(A8) beta + 2 mu2 + 2 sum K_i(0)^2 < 0".into(),
        pass: a8 < 0.0,
        margin: a8,
        probe: None,
    });

    // Forward solvability: beta > 2 mu1 + L_sigma^2 + L_sigma_tilde^2 + L_l^2.
    let lip = &spec.lipschitz;
    let fw = spec.beta
        - (2.0 * spec.mu1
            + lip.l_sigma * lip.l_sigma
            + lip.l_sigma_tilde * lip.l_sigma_tilde
            + lip.l_l * lip.l_l);
    entries.push(AssumptionCheck {
        assumption: "forward: beta > 2 mu1 + L_sigma^2 + L_sigma_tilde^2 + L_l^2".into(),
        pass: fw > 0.0,
        margin: fw,
        probe: None,
    });

    // (H0): h and its derivatives bounded on the probes.
    let mut h_max: f64 = 0.0;
    let mut hd_max: f64 = 0.0;
    for &(x, u, _) in probe_points {
        h_max = h_max.max(spec.h(x, u).abs());
        hd_max = hd_max.max(spec.h_x(x, u).abs()).max(spec.h_u(x, u).abs());
    }
    entries.push(AssumptionCheck {
        assumption: "(H0) |h|, |h_x|, |h_u| finite on probes".into(),
        pass: h_max.is_finite() && hd_max.is_finite(),
        margin: h_max.max(hd_max),
        probe: None,
    });

    // (A1): |sigma_tilde(x,u,t)| <= e^{-mu0 t/2} * C with C taken as the
    // largest probe magnitude at t = 0.
    let c_a1 = probe_points
        .iter()
        .map(|&(x, u, _)| spec.sigma_tilde(x, u, 0.0).abs())
        .fold(0.0f64, f64::max);
    let mut a1_worst = f64::NEG_INFINITY;
    let mut a1_probe = None;
    for &(x, u, t) in probe_points {
        let envelope = (-0.5 * spec.decay_rates.mu0 * t).exp() * c_a1;
        let excess = spec.sigma_tilde(x, u, t).abs() - envelope;
        if excess > a1_worst {
            a1_worst = excess;
            a1_probe = Some(format!("(x={x}, u={u}, t={t})"));
        }
    }
    entries.push(AssumptionCheck {
        assumption: "(A1) |sigma_tilde| <= e^{-mu0 t/2} C".into(),
        pass: a1_worst <= 1e-9 * (1.0 + c_a1),
        margin: a1_worst,
        probe: a1_probe,
    });

    // (A2): pairwise monotonicity of b in x with constant mu1.
    let mut a2_worst = f64::NEG_INFINITY;
    let mut a2_probe = None;
    for (i, &(x1, u, t)) in probe_points.iter().enumerate() {
        for &(x2, _, _) in probe_points.iter().skip(i + 1) {
            let dx = x1 - x2;
            if dx.abs() < 1e-12 {
                continue;
            }
            let excess = dx * (spec.b(x1, u, t) - spec.b(x2, u, t)) / (dx * dx) - spec.mu1;
            if excess > a2_worst {
                a2_worst = excess;
                a2_probe = Some(format!("(x1={x1}, x2={x2}, u={u}, t={t})"));
            }
        }
    }
    entries.push(AssumptionCheck {
        assumption: "(A2) <x1-x2, b(x1)-b(x2)> <= mu1 |x1-x2|^2".into(),
        pass: a2_worst <= 1e-7,
        margin: a2_worst,
        probe: a2_probe,
    });

    // (A6): pairwise monotonicity of g in y with constant mu2.
    let y_probe = [-1.0, -0.3, 0.0, 0.4, 1.0];
    let mut a6_worst = f64::NEG_INFINITY;
    for &(x, u, t) in probe_points {
        for (i, &y1) in y_probe.iter().enumerate() {
            for &y2 in y_probe.iter().skip(i + 1) {
                let dy = y1 - y2;
                let dg = spec.g(x, y1, 0.0, 0.0, 0.0, u, t) - spec.g(x, y2, 0.0, 0.0, 0.0, u, t);
                a6_worst = a6_worst.max(dy * dg / (dy * dy) - spec.mu2);
            }
        }
    }
    entries.push(AssumptionCheck {
        assumption: "(A6) <y1-y2, g(y1)-g(y2)> <= mu2 |y1-y2|^2".into(),
        pass: a6_worst <= 1e-7,
        margin: a6_worst,
        probe: None,
    });

    // (A3): declared Lipschitz constants hold pairwise in x on the probes.
    let mut a3_worst = f64::NEG_INFINITY;
    for (i, &(x1, u, t)) in probe_points.iter().enumerate() {
        for &(x2, _, _) in probe_points.iter().skip(i + 1) {
            let dx = (x1 - x2).abs();
            if dx < 1e-12 {
                continue;
            }
            let ratios = [
                ((spec.b(x1, u, t) - spec.b(x2, u, t)).abs() / dx, lip.l_b),
                (
                    (spec.sigma(x1, u, t) - spec.sigma(x2, u, t)).abs() / dx,
                    lip.l_sigma,
                ),
                (
                    (spec.sigma_tilde(x1, u, t) - spec.sigma_tilde(x2, u, t)).abs() / dx,
                    lip.l_sigma_tilde,
                ),
                (
                    (spec.l(x1, u, 1.0, t) - spec.l(x2, u, 1.0, t)).abs() / dx,
                    lip.l_l,
                ),
            ];
            for (r, bound) in ratios {
                a3_worst = a3_worst.max(r - bound);
            }
        }
    }
    entries.push(AssumptionCheck {
        assumption: "(A3) declared Lipschitz constants in x".into(),
        pass: a3_worst <= 1e-7,
        margin: a3_worst,
        probe: None,
    });

    // (H1): quadratic growth envelope of f and phi (possibly rescaled under
    // the alternative regime). Reports the largest envelope ratio.
    let mut growth: f64 = 0.0;
    for &(x, u, t) in probe_points {
        let fv = spec.f(x, 0.2, 0.1, 0.1, 0.1, u).abs();
        let env = 1.0 + x * x + 0.04 + 0.01 + 0.01 + 0.01 + u * u;
        let scale = match spec.growth_mode {
            GrowthMode::H1 => 1.0,
            GrowthMode::H1Prime { k_growth } => (-k_growth * t).exp(),
        };
        growth = growth.max(fv / (env * scale));
        let pv = spec.phi(x).abs();
        growth = growth.max(pv / ((1.0 + x * x) * scale));
    }
    entries.push(AssumptionCheck {
        assumption: "(H1) quadratic growth of f and phi".into(),
        pass: growth.is_finite(),
        margin: growth,
        probe: None,
    });

    // Discount-profile ordering.
    let violated = profile.check(spec.beta);
    entries.push(AssumptionCheck {
        assumption: "discount profile ordering".into(),
        pass: violated.is_none(),
        margin: if violated.is_some() { 1.0 } else { 0.0 },
        probe: violated.map(|s| s.to_string()),
    });

    Ok(ValidationReport { entries })
}

/// Constant c_eps of the power-mean inequality
/// |a+b|^{2k} <= (1+eps)|a|^{2k} + c_eps |b|^{2k}.
pub fn confortola_c_eps(eps: f64, k: u32) -> f64 {
    assert!(eps > 0.0 && k >= 2);
    let p = 2.0 * k as f64 - 1.0;
    (1.0 - (1.0 / (1.0 + eps)).powf(1.0 / p)).powf(-p)
}

/// Tested utility predicate for the inequality above.
pub fn confortola_holds(a: f64, b: f64, eps: f64, k: u32) -> bool {
    let p = 2 * k as i32;
    let lhs = (a + b).abs().powi(p);
    let rhs = (1.0 + eps) * a.abs().powi(p) + confortola_c_eps(eps, k) * b.abs().powi(p);
    lhs <= rhs * (1.0 + 1e-12) + f64::MIN_POSITIVE
}
