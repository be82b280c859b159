//! Active compliance as a DMP coupling term.
//!
//! A measured wrench `F` is mapped to a pose deviation `Δy = C·F`, where
//! `C = K_c⁻¹` is the learned 6×6 compliance. The deviation enters the
//! transformation system either as a coupling acceleration `c_c = K_y·Δy`
//! or, equivalently, by shifting the attractor to the modified goal
//! `g_m = g + K_y⁻¹(g − y₀)f(s) + Δy`.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::pose::{Pose6, Wrench};

/// `k_t`, `k_θ` and the 36 entries of `C`.
pub const PARAM_COUNT: usize = 38;

/// Default time constant of the wrench low-pass filter.
pub const WRENCH_FILTER_TAU: f64 = 0.02;

/// The learned stiffness and compliance parameters.
///
/// Serialized as a flat 38-element array `[k_t, k_θ, C row-major]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct ComplianceParams {
    /// Translational stiffness of the transformation system.
    pub k_t: f64,
    /// Rotational stiffness of the transformation system.
    pub k_theta: f64,
    /// Compliance `C = K_c⁻¹`; rows are pose deviations, columns wrench
    /// components. Units mix m/N, m/(N·m), rad/N and rad/(N·m).
    pub compliance: Matrix6<f64>,
    /// Compliance damping `D_c`. Held at zero: deviations respond to wrench
    /// only, never to its rate.
    pub damping: Matrix6<f64>,
}

impl ComplianceParams {
    pub fn new(k_t: f64, k_theta: f64, compliance: Matrix6<f64>) -> Result<Self> {
        let p = Self {
            k_t,
            k_theta,
            compliance,
            damping: Matrix6::zeros(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Stiffness only, no compliance.
    pub fn rigid(k_t: f64, k_theta: f64) -> Result<Self> {
        Self::new(k_t, k_theta, Matrix6::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_t.is_finite() && self.k_t > 0.0) {
            return Err(invalid("k_t", format!("must be positive, got {}", self.k_t)));
        }
        if !(self.k_theta.is_finite() && self.k_theta > 0.0) {
            return Err(invalid("k_theta", format!("must be positive, got {}", self.k_theta)));
        }
        ensure_finite("compliance", self.compliance.iter().copied())?;
        if self.damping.iter().any(|d| *d != 0.0) {
            return Err(invalid("damping", "compliance damping is fixed at zero"));
        }
        Ok(())
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(invalid(
                "params",
                format!("expected {PARAM_COUNT} values, got {}", values.len()),
            ));
        }
        Self::new(
            values[0],
            values[1],
            Matrix6::from_row_slice(&values[2..]),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(PARAM_COUNT);
        out.push(self.k_t);
        out.push(self.k_theta);
        for r in 0..6 {
            for c in 0..6 {
                out.push(self.compliance[(r, c)]);
            }
        }
        out
    }

    /// `diag[k_t, k_t, k_t, k_θ, k_θ, k_θ]`.
    pub fn stiffness(&self) -> Vector6<f64> {
        crate::dmp::stiffness_diag(self.k_t, self.k_theta)
    }
}

impl From<ComplianceParams> for Vec<f64> {
    fn from(p: ComplianceParams) -> Self {
        p.to_flat()
    }
}

impl TryFrom<Vec<f64>> for ComplianceParams {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_flat(&v)
    }
}

/// `Δy = C·F`.
pub fn deviation(params: &ComplianceParams, wrench: &Wrench) -> Result<Vector6<f64>> {
    if !wrench.is_finite() {
        return Err(Error::NonFinite("wrench"));
    }
    ensure_finite("compliance", params.compliance.iter().copied())?;
    Ok(params.compliance * wrench.to_vector())
}

/// `c_c = K_y·C·F`.
pub fn coupling_term(
    params: &ComplianceParams,
    stiffness: &Vector6<f64>,
    wrench: &Wrench,
) -> Result<Vector6<f64>> {
    if stiffness.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(invalid("stiffness", "must be positive definite"));
    }
    Ok(stiffness.component_mul(&deviation(params, wrench)?))
}

/// Attractor of the PD form of the compliant primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedGoal(pub Pose6);

/// `g_m = g + K_y⁻¹(g − y₀)∘f + Δy`.
pub fn modified_goal(
    goal: &Pose6,
    start: &Pose6,
    stiffness: &Vector6<f64>,
    forcing: &Vector6<f64>,
    dy: &Vector6<f64>,
) -> Result<ModifiedGoal> {
    if stiffness.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(invalid("stiffness", "must be positive definite"));
    }
    let span = goal.0 - start.0;
    let shift = span.component_mul(forcing).component_div(stiffness);
    let g_m = Pose6(goal.0 + shift + dy);
    if !g_m.is_finite() {
        return Err(Error::NonFinite("modified goal"));
    }
    Ok(ModifiedGoal(g_m))
}

/// Box bounds on the policy output.
///
/// Stiffnesses are bounded on a log scale; compliance entries lie in a
/// symmetric box per 3×3 block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub k_t_per_s: (f64, f64),
    pub k_theta_per_s: (f64, f64),
    /// |C| bound for translation per force, m/N.
    pub trans_per_force_m_per_n: f64,
    /// |C| bound for translation per moment, m/(N·m).
    pub trans_per_moment_m_per_nm: f64,
    /// |C| bound for rotation per force, rad/N.
    pub rot_per_force_rad_per_n: f64,
    /// |C| bound for rotation per moment, rad/(N·m).
    pub rot_per_moment_rad_per_nm: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            k_t_per_s: (20.0, 400.0),
            k_theta_per_s: (5.0, 200.0),
            trans_per_force_m_per_n: 0.003,
            trans_per_moment_m_per_nm: 0.1,
            rot_per_force_rad_per_n: 0.005,
            rot_per_moment_rad_per_nm: 1.0,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.k_t_per_s;
        let (c, d) = self.k_theta_per_s;
        if !(a > 0.0 && b > a && c > 0.0 && d > c) {
            return Err(invalid("bounds", "stiffness ranges must be positive and ordered"));
        }
        for v in [
            self.trans_per_force_m_per_n,
            self.trans_per_moment_m_per_nm,
            self.rot_per_force_rad_per_n,
            self.rot_per_moment_rad_per_nm,
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid("bounds", "compliance bounds must be non-negative"));
            }
        }
        Ok(())
    }

    /// Half-width of the box for compliance entry `(row, col)`.
    pub fn compliance_bound(&self, row: usize, col: usize) -> f64 {
        match (row < 3, col < 3) {
            (true, true) => self.trans_per_force_m_per_n,
            (true, false) => self.trans_per_moment_m_per_nm,
            (false, true) => self.rot_per_force_rad_per_n,
            (false, false) => self.rot_per_moment_rad_per_nm,
        }
    }

    /// Maps an unbounded 38-vector onto the box: log-scale `tanh` squashing
    /// for the stiffnesses and `bound·tanh` for the compliance entries.
    pub fn squash(&self, action: &[f64]) -> Result<ComplianceParams> {
        if action.len() != PARAM_COUNT {
            return Err(invalid("action", format!("expected {PARAM_COUNT} values")));
        }
        ensure_finite("action", action.iter().copied())?;
        let log_map = |(lo, hi): (f64, f64), a: f64| {
            let u = 0.5 * (a.tanh() + 1.0);
            (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
        };
        let mut c = Matrix6::zeros();
        for r in 0..6 {
            for col in 0..6 {
                c[(r, col)] = self.compliance_bound(r, col) * action[2 + 6 * r + col].tanh();
            }
        }
        ComplianceParams::new(
            log_map(self.k_t_per_s, action[0]),
            log_map(self.k_theta_per_s, action[1]),
            c,
        )
    }

    /// Inverse of [`squash`](Self::squash) for parameters strictly inside
    /// the box.
    pub fn unsquash(&self, params: &ComplianceParams) -> Result<Vec<f64>> {
        let inv_log = |(lo, hi): (f64, f64), v: f64| {
            let u = (v.ln() - lo.ln()) / (hi.ln() - lo.ln());
            (2.0 * u - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
        };
        let mut out = vec![
            inv_log(self.k_t_per_s, params.k_t),
            inv_log(self.k_theta_per_s, params.k_theta),
        ];
        for r in 0..6 {
            for c in 0..6 {
                let b = self.compliance_bound(r, c);
                let v = params.compliance[(r, c)];
                out.push(if b > 0.0 {
                    (v / b).clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
                } else {
                    0.0
                });
            }
        }
        ensure_finite("unsquashed action", out.iter().copied())?;
        Ok(out)
    }

    pub fn contains(&self, params: &ComplianceParams) -> bool {
        let (a, b) = self.k_t_per_s;
        let (c, d) = self.k_theta_per_s;
        let eps = 1e-9;
        if !(params.k_t >= a * (1.0 - eps) && params.k_t <= b * (1.0 + eps)) {
            return false;
        }
        if !(params.k_theta >= c * (1.0 - eps) && params.k_theta <= d * (1.0 + eps)) {
            return false;
        }
        (0..6).all(|r| {
            (0..6).all(|col| params.compliance[(r, col)].abs() <= self.compliance_bound(r, col) * (1.0 + eps))
        })
    }
}

/// First-order low-pass filter on the measured wrench, one per episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchFilter {
    time_constant: f64,
    state: Vector6<f64>,
}

impl WrenchFilter {
    pub fn new(time_constant: f64) -> Result<Self> {
        if !(time_constant.is_finite() && time_constant >= 0.0) {
            return Err(invalid("time_constant", "must be non-negative"));
        }
        Ok(Self {
            time_constant,
            state: Vector6::zeros(),
        })
    }

    pub fn update(&mut self, raw: &Wrench, dt: f64) -> Wrench {
        let alpha = if self.time_constant == 0.0 {
            1.0
        } else {
            1.0 - (-dt / self.time_constant).exp()
        };
        self.state += (raw.to_vector() - self.state) * alpha;
        Wrench::from_vector(&self.state)
    }

    pub fn value(&self) -> Wrench {
        Wrench::from_vector(&self.state)
    }
}
