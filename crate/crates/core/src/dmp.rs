//! Discrete dynamic movement primitives.
//!
//! The transformation system is
//!
//! ```text
//! τ ÿ = K (g − y) − D ẏ + (g − y₀) ∘ f(s) + c
//! τ ṡ = −α_s s,   s(0) = 1
//! ```
//!
//! with a normalised Gaussian-basis forcing term `f(s) = Σψᵢwᵢ / Σψᵢ · s`
//! and an optional coupling acceleration `c`. The forcing weights are fitted
//! with locally weighted regression so that free-space rollouts follow a
//! minimum-jerk profile from `y₀` to `g`.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::pose::Pose6;

/// Phase decay constant; `s` falls to about 1% at `t = τ`.
pub const DEFAULT_ALPHA_S: f64 = 4.6;
pub const DEFAULT_BASIS_COUNT: usize = 20;
/// Integration step (500 Hz).
pub const DEFAULT_DT: f64 = 0.002;
/// Activation at which neighbouring basis functions cross.
pub const BASIS_INTERSECTION: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub s: f64,
    pub alpha_s: f64,
    pub tau: f64,
}

impl PhaseState {
    pub fn new(alpha_s: f64, tau: f64) -> Result<Self> {
        if !(alpha_s.is_finite() && alpha_s > 0.0) {
            return Err(invalid("alpha_s", format!("must be positive, got {alpha_s}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid("tau", format!("must be positive, got {tau}")));
        }
        Ok(Self { s: 1.0, alpha_s, tau })
    }

    /// Phase value reached after `t` seconds from `s = 1`.
    pub fn phase_at(&self, t: f64) -> f64 {
        (-self.alpha_s * t / self.tau).exp()
    }
}

/// Advances the canonical system by `dt` using the exact exponential
/// solution. A zero step is the identity; negative or non-finite steps are
/// rejected.
pub fn step_phase(p: &PhaseState, dt: f64) -> Result<PhaseState> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(invalid("dt", format!("must be finite and non-negative, got {dt}")));
    }
    Ok(PhaseState {
        s: p.s * (-p.alpha_s * dt / p.tau).exp(),
        ..*p
    })
}

/// Gaussian basis functions over the phase and their per-dimension weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// One 6-vector of weights per basis function.
    pub weights: Vec<Vector6<f64>>,
}

impl BasisSet {
    /// `n` bases with centres `exp(−α_s·i/(n−1))` and widths chosen so that
    /// each basis crosses its neighbour at [`BASIS_INTERSECTION`]. Weights are
    /// zero.
    pub fn equally_spaced(n: usize, alpha_s: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid("n", "at least two basis functions are required"));
        }
        let centers: Vec<f64> = (0..n)
            .map(|i| (-alpha_s * i as f64 / (n - 1) as f64).exp())
            .collect();
        let k = (-2.0 * BASIS_INTERSECTION.ln()).sqrt();
        let widths = (0..n)
            .map(|i| {
                let gap = if i + 1 < n {
                    centers[i] - centers[i + 1]
                } else {
                    centers[i - 1] - centers[i]
                };
                0.5 * gap / k
            })
            .collect();
        Ok(Self {
            centers,
            widths,
            weights: vec![Vector6::zeros(); n],
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn with_zero_weights(&self) -> Self {
        Self {
            weights: vec![Vector6::zeros(); self.len()],
            ..self.clone()
        }
    }

    pub fn activation(&self, i: usize, s: f64) -> f64 {
        let d = s - self.centers[i];
        (-d * d / (2.0 * self.widths[i] * self.widths[i])).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.widths.len() != n || self.weights.len() != n {
            return Err(invalid("basis", "centers, widths and weights differ in length"));
        }
        if self.widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("basis.widths", "all widths must be positive"));
        }
        ensure_finite("basis.centers", self.centers.iter().copied())?;
        ensure_finite("basis.weights", self.weights.iter().flat_map(|w| w.iter().copied()))?;
        Ok(())
    }
}

/// Result of a forcing-term evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forcing {
    pub value: Vector6<f64>,
    /// Set when every activation underflowed; `value` is then zero.
    pub degenerate: bool,
}

pub fn eval_forcing(basis: &BasisSet, s: f64) -> Result<Forcing> {
    if !(s.is_finite() && s > 0.0 && s <= 1.0) {
        return Err(invalid("s", format!("phase must lie in (0, 1], got {s}")));
    }
    let mut num = Vector6::zeros();
    let mut den = 0.0;
    for (i, w) in basis.weights.iter().enumerate() {
        let psi = basis.activation(i, s);
        num += w * psi;
        den += psi;
    }
    if !(den > f64::MIN_POSITIVE) {
        return Ok(Forcing {
            value: Vector6::zeros(),
            degenerate: true,
        });
    }
    Ok(Forcing {
        value: num * (s / den),
        degenerate: false,
    })
}

/// Minimum-jerk position, velocity and acceleration at time `t`.
pub fn min_jerk(y0: f64, g: f64, duration: f64, t: f64) -> (f64, f64, f64) {
    if t >= duration {
        return (g, 0.0, 0.0);
    }
    if t <= 0.0 {
        return (y0, 0.0, 0.0);
    }
    let u = t / duration;
    let (u2, u3) = (u * u, u * u * u);
    let d = g - y0;
    let y = y0 + d * (10.0 * u3 - 15.0 * u3 * u + 6.0 * u3 * u2);
    let yd = d * (30.0 * u2 - 60.0 * u3 + 30.0 * u2 * u2) / duration;
    let ydd = d * (60.0 * u - 180.0 * u2 + 120.0 * u3) / (duration * duration);
    (y, yd, ydd)
}

/// Per-axis critical damping `dᵢ = 2·sqrt(kᵢ·τ)` for `τ ÿ = −k y − d ẏ`.
pub fn derive_critical_damping(stiffness: &Vector6<f64>, tau: f64) -> Result<Vector6<f64>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(invalid("tau", format!("must be positive, got {tau}")));
    }
    if stiffness.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(invalid("stiffness", "every stiffness entry must be positive"));
    }
    Ok(stiffness.map(|k| 2.0 * (k * tau).sqrt()))
}

/// Stiffness diagonal `[k_t, k_t, k_t, k_θ, k_θ, k_θ]`.
pub fn stiffness_diag(k_t: f64, k_theta: f64) -> Vector6<f64> {
    Vector6::new(k_t, k_t, k_t, k_theta, k_theta, k_theta)
}

/// A fully specified primitive. Units are carried in the serialized field
/// names: stiffness in 1/s (it multiplies a distance to give `τ·ÿ`), damping
/// dimensionless, `τ` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpConfig {
    #[serde(rename = "stiffness_diag_per_s")]
    pub stiffness: Vector6<f64>,
    #[serde(rename = "damping_diag")]
    pub damping: Vector6<f64>,
    #[serde(rename = "tau_s")]
    pub tau: f64,
    #[serde(rename = "alpha_s")]
    pub alpha_s: f64,
    pub basis: BasisSet,
    #[serde(rename = "goal_m_rad")]
    pub goal: Pose6,
    #[serde(rename = "start_m_rad")]
    pub start: Pose6,
}

impl DmpConfig {
    /// Critically damped primitive with zero forcing weights.
    pub fn critically_damped(
        k_t: f64,
        k_theta: f64,
        tau: f64,
        start: Pose6,
        goal: Pose6,
    ) -> Result<Self> {
        let stiffness = stiffness_diag(k_t, k_theta);
        let damping = derive_critical_damping(&stiffness, tau)?;
        Ok(Self {
            stiffness,
            damping,
            tau,
            alpha_s: DEFAULT_ALPHA_S,
            basis: BasisSet::equally_spaced(DEFAULT_BASIS_COUNT, DEFAULT_ALPHA_S)?,
            goal,
            start,
        })
    }

    /// Same primitive with forcing weights fitted to a minimum-jerk profile
    /// lasting `τ`.
    pub fn min_jerk(k_t: f64, k_theta: f64, tau: f64, start: Pose6, goal: Pose6) -> Result<Self> {
        let mut cfg = Self::critically_damped(k_t, k_theta, tau, start, goal)?;
        cfg.basis = fit_min_jerk(&start, &goal, tau, &cfg.basis, &cfg.gains(), DEFAULT_DT)?;
        Ok(cfg)
    }

    pub fn gains(&self) -> DmpGains {
        DmpGains {
            stiffness: self.stiffness,
            damping: self.damping,
            tau: self.tau,
            alpha_s: self.alpha_s,
        }
    }

    pub fn phase(&self) -> Result<PhaseState> {
        PhaseState::new(self.alpha_s, self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        if self.stiffness.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(invalid("stiffness", "must be positive definite"));
        }
        if self.damping.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(invalid("damping", "must be non-negative"));
        }
        if !self.goal.is_finite() || !self.start.is_finite() {
            return Err(Error::NonFinite("start/goal"));
        }
        self.basis.validate()
    }

    /// The same path traversed `factor` times slower. Because the
    /// transformation system carries a single `τ` on the acceleration, the
    /// stiffness and forcing weights are divided by `factor` while the
    /// damping is unchanged; the result stays critically damped.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(invalid("factor", "must be positive"));
        }
        let mut out = self.clone();
        out.tau *= factor;
        out.stiffness /= factor;
        for w in &mut out.basis.weights {
            *w /= factor;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Gains needed to turn a desired trajectory into forcing targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmpGains {
    pub stiffness: Vector6<f64>,
    pub damping: Vector6<f64>,
    pub tau: f64,
    pub alpha_s: f64,
}

/// Fits forcing weights by locally weighted regression so that the
/// primitive reproduces `y(t) = y₀ + (g−y₀)(10u³ − 15u⁴ + 6u⁵)`, `u = t/T`.
/// Dimensions with `g = y₀` get zero weights.
pub fn fit_min_jerk(
    start: &Pose6,
    goal: &Pose6,
    duration: f64,
    shape: &BasisSet,
    gains: &DmpGains,
    dt: f64,
) -> Result<BasisSet> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(invalid("duration", "must be positive"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    shape.validate()?;
    let steps = (duration / dt).round().max(1.0) as usize;
    let n = shape.len();
    let mut out = shape.with_zero_weights();

    // Per-basis sums Σ sψf and Σ s²ψ, accumulated per dimension.
    let mut num = vec![Vector6::<f64>::zeros(); n];
    let mut den = vec![0.0; n];
    let mut any_dim = false;
    let mut active = [false; 6];
    for (d, flag) in active.iter_mut().enumerate() {
        let span = goal.0[d] - start.0[d];
        *flag = span.abs() > 1e-12;
        any_dim |= *flag;
    }
    if !any_dim {
        return Ok(out);
    }

    for k in 0..=steps {
        let t = k as f64 * duration / steps as f64;
        let s = (-gains.alpha_s * t / gains.tau).exp();
        let mut target = Vector6::zeros();
        for d in 0..6 {
            if !active[d] {
                continue;
            }
            let (y0, g) = (start.0[d], goal.0[d]);
            let (y, yd, ydd) = min_jerk(y0, g, duration, t);
            let k_d = gains.stiffness[d];
            let d_d = gains.damping[d];
            target[d] = (gains.tau * ydd - k_d * (g - y) + d_d * yd) / (g - y0);
        }
        for i in 0..n {
            let psi = shape.activation(i, s);
            num[i] += target * (s * psi);
            den[i] += s * s * psi;
        }
    }
    for i in 0..n {
        if den[i] > f64::MIN_POSITIVE {
            out.weights[i] = num[i] / den[i];
        }
    }
    Ok(out)
}

/// One point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub y: Pose6,
    pub ydot: Vector6<f64>,
    pub yddot: Vector6<f64>,
}

impl TrajectorySample {
    pub fn at_rest(y: Pose6) -> Self {
        Self {
            t: 0.0,
            y,
            ydot: Vector6::zeros(),
            yddot: Vector6::zeros(),
        }
    }
}

fn integrate(state: &TrajectorySample, acc: Vector6<f64>, dt: f64) -> Result<TrajectorySample> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let ydot = state.ydot + acc * dt;
    let y = Pose6(state.y.0 + ydot * dt);
    Ok(TrajectorySample {
        t: state.t + dt,
        y,
        ydot,
        yddot: acc,
    })
}

/// Acceleration of the transformation system with an explicit coupling term.
pub fn dmp_acceleration(
    cfg: &DmpConfig,
    y: &Pose6,
    ydot: &Vector6<f64>,
    forcing: &Vector6<f64>,
    coupling: &Vector6<f64>,
) -> Vector6<f64> {
    let g = &cfg.goal.0;
    let span = g - cfg.start.0;
    (cfg.stiffness.component_mul(&(g - y.0)) - cfg.damping.component_mul(ydot)
        + span.component_mul(forcing)
        + coupling)
        / cfg.tau
}

/// Semi-implicit Euler step of `τ ÿ = K(g−y) − Dẏ + (g−y₀)f(s) + c`.
pub fn step_dmp(
    cfg: &DmpConfig,
    state: &TrajectorySample,
    s: f64,
    coupling: &Vector6<f64>,
    dt: f64,
) -> Result<TrajectorySample> {
    if coupling.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("coupling term"));
    }
    let f = eval_forcing(&cfg.basis, s)?.value;
    integrate(state, dmp_acceleration(cfg, &state.y, &state.ydot, &f, coupling), dt)
}

/// Semi-implicit Euler step of the PD form `τ ÿ = K(g_m − y) − Dẏ`.
pub fn step_dmp_modified_goal(
    cfg: &DmpConfig,
    state: &TrajectorySample,
    modified_goal: &Pose6,
    dt: f64,
) -> Result<TrajectorySample> {
    if !modified_goal.is_finite() {
        return Err(Error::NonFinite("modified goal"));
    }
    let acc = (cfg.stiffness.component_mul(&(modified_goal.0 - state.y.0))
        - cfg.damping.component_mul(&state.ydot))
        / cfg.tau;
    integrate(state, acc, dt)
}

/// Rolls the primitive out from rest at `start` for `steps` steps, calling
/// `coupling` before each step.
pub fn rollout(
    cfg: &DmpConfig,
    dt: f64,
    steps: usize,
    mut coupling: impl FnMut(&TrajectorySample) -> Vector6<f64>,
) -> Result<Vec<TrajectorySample>> {
    cfg.validate()?;
    let mut phase = cfg.phase()?;
    let mut state = TrajectorySample::at_rest(cfg.start);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state);
    for _ in 0..steps {
        let c = coupling(&state);
        state = step_dmp(cfg, &state, phase.s, &c, dt)?;
        phase = step_phase(&phase, dt)?;
        out.push(state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn one_d(y0: f64, g: f64) -> (Pose6, Pose6) {
        let mut a = Pose6::zeros();
        let mut b = Pose6::zeros();
        a.0[0] = y0;
        b.0[0] = g;
        (a, b)
    }

    #[test]
    fn phase_zero_step_is_identity() {
        let p = PhaseState::new(1.0, 1.0).unwrap();
        assert_eq!(step_phase(&p, 0.0).unwrap().s, 1.0);
    }

    #[test]
    fn phase_halves_after_ln2() {
        let p = PhaseState::new(1.0, 1.0).unwrap();
        assert!((step_phase(&p, LN_2).unwrap().s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phase_matches_fine_euler_oracle() {
        let p = PhaseState { s: 0.5, alpha_s: 2.0, tau: 1.0 };
        let exact = step_phase(&p, 0.1).unwrap().s;
        // explicit Euler with 10^6 sub-steps
        let n = 1_000_000;
        let h = 0.1 / n as f64;
        let mut s = 0.5;
        for _ in 0..n {
            s -= h * 2.0 * s / 1.0;
        }
        assert!(((exact - s) / s).abs() < 1e-6);
        assert!((exact - 0.5 * (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn phase_rejects_bad_steps() {
        let p = PhaseState::new(1.0, 1.0).unwrap();
        assert!(step_phase(&p, -0.1).is_err());
        assert!(step_phase(&p, f64::NAN).is_err());
        assert!(step_phase(&p, f64::INFINITY).is_err());
    }

    #[test]
    fn basis_layout() {
        let b = BasisSet::equally_spaced(20, DEFAULT_ALPHA_S).unwrap();
        assert_eq!(b.len(), 20);
        assert!((b.centers[0] - 1.0).abs() < 1e-15);
        assert!(b.centers.windows(2).all(|w| w[0] > w[1]));
        assert!(b.widths.iter().all(|w| *w > 0.0));
        // neighbours cross at the declared activation at the midpoint
        let mid = 0.5 * (b.centers[3] + b.centers[4]);
        assert!((b.activation(3, mid) - BASIS_INTERSECTION).abs() < 1e-12);
        assert!(BasisSet::equally_spaced(1, DEFAULT_ALPHA_S).is_err());
    }

    #[test]
    fn forcing_zero_weights() {
        let b = BasisSet::equally_spaced(10, DEFAULT_ALPHA_S).unwrap();
        for s in [1.0, 0.5, 0.01] {
            assert_eq!(eval_forcing(&b, s).unwrap().value, Vector6::zeros());
        }
    }

    #[test]
    fn forcing_single_basis_cancels_normalisation() {
        let b = BasisSet {
            centers: vec![0.5],
            widths: vec![0.1],
            weights: vec![Vector6::repeat(3.0)],
        };
        for s in [1.0, 0.7, 0.2] {
            let f = eval_forcing(&b, s).unwrap();
            assert!(!f.degenerate);
            assert!((f.value[0] - 3.0 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn forcing_flags_underflow() {
        let b = BasisSet {
            centers: vec![1.0, 0.9],
            widths: vec![1e-4, 1e-4],
            weights: vec![Vector6::repeat(1.0); 2],
        };
        let f = eval_forcing(&b, 0.01).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.value, Vector6::zeros());
    }

    #[test]
    fn critical_damping_examples() {
        let d = derive_critical_damping(&Vector6::repeat(1.0), 1.0).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-15);
        let d = derive_critical_damping(&Vector6::repeat(4.0), 1.0).unwrap();
        assert!((d[0] - 4.0).abs() < 1e-15);
        let d = derive_critical_damping(&Vector6::repeat(3.0), 2.0).unwrap();
        assert!((d[0] - 2.0 * 6f64.sqrt()).abs() < 1e-14);
        // discriminant of τλ² + dλ + k
        assert!((d[0] * d[0] - 4.0 * 3.0 * 2.0).abs() < 1e-12);
        let mut bad = Vector6::repeat(1.0);
        bad[4] = 0.0;
        assert!(derive_critical_damping(&bad, 1.0).is_err());
    }

    #[test]
    fn min_jerk_midpoint() {
        let (y, _, _) = min_jerk(0.2, 1.4, 2.0, 1.0);
        assert!((y - 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_fit_stays_at_start() {
        let (a, _) = one_d(0.3, 0.3);
        let cfg = DmpConfig::min_jerk(100.0, 100.0, 1.0, a, a).unwrap();
        assert!(cfg.basis.weights.iter().all(|w| w.norm() == 0.0));
        cfg.validate().unwrap();
        let traj = rollout(&cfg, DEFAULT_DT, 500, |_| Vector6::zeros()).unwrap();
        assert!(traj.iter().all(|p| (p.y.0 - a.0).norm() == 0.0));
    }

    #[test]
    fn equilibrium_at_goal() {
        let (a, b) = one_d(0.0, 1.0);
        let cfg = DmpConfig::critically_damped(50.0, 50.0, 1.0, a, b).unwrap();
        let st = TrajectorySample::at_rest(b);
        let next = step_dmp(&cfg, &st, 1.0, &Vector6::zeros(), DEFAULT_DT).unwrap();
        assert_eq!(next.yddot, Vector6::zeros());
        assert_eq!(next.y, b);
    }

    #[test]
    fn rejects_non_finite_coupling() {
        let (a, b) = one_d(0.0, 1.0);
        let cfg = DmpConfig::critically_damped(50.0, 50.0, 1.0, a, b).unwrap();
        let mut c = Vector6::zeros();
        c[2] = f64::NAN;
        let st = TrajectorySample::at_rest(a);
        assert!(matches!(step_dmp(&cfg, &st, 1.0, &c, 0.002), Err(Error::NonFinite(_))));
    }

    #[test]
    fn json_round_trip_keeps_units_in_names() {
        let (a, b) = one_d(0.0, 0.1);
        let cfg = DmpConfig::min_jerk(80.0, 40.0, 1.5, a, b).unwrap();
        let text = cfg.to_json().unwrap();
        assert!(text.contains("\"tau_s\""));
        assert!(text.contains("\"stiffness_diag_per_s\""));
        let back = DmpConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
