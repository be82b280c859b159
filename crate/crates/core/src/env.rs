//! Peg-in-hole episodes: task randomisation, the two-phase controller, the
//! simulation loop and the reward.
//!
//! An episode first moves the peg above the believed hole with a fixed
//! minimum-jerk primitive, then descends with a primitive whose stiffness
//! and compliance come from the policy. The controller only ever sees an
//! [`Observation`]; the true board pose and the grasp errors live in the
//! [`EpisodeSpec`] and reach the controller only through contact forces.

use std::io::Write;

use nalgebra::{DVector, Isometry3, Point3, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compliance::{deviation, modified_goal, ComplianceParams, WrenchFilter, WRENCH_FILTER_TAU};
use crate::contact::{BoardSpec, ContactModel, ContactParams, ContactReport, CrossSection, PegSpec};
use crate::dmp::{eval_forcing, step_phase, DmpConfig, PhaseState};
use crate::error::{invalid, Error, Result};
use crate::manipulator::{cartesian_torque, ArmModel, ArmState, DynamicTerms, LinkInertia, TorqueCommand};
use crate::pose::{Pose6, TaskFrame, Wrench};
use crate::sim::Simulator;

/// Outcome reward for a successful insertion.
pub const SUCCESS_REWARD: f64 = 38000.0;

/// Half-widths of the uniform error distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRanges {
    /// Applies to x, y (localisation) and z (grasp height).
    pub linear_mm: f64,
    /// Applies to yaw (localisation) and the two grasp tilts.
    pub angular_deg: f64,
}

impl ErrorRanges {
    pub const MAX_ANGULAR_DEG: f64 = 12.0;

    pub fn zero() -> Self {
        Self {
            linear_mm: 0.0,
            angular_deg: 0.0,
        }
    }

    pub fn new(linear_mm: f64, angular_deg: f64) -> Result<Self> {
        let r = Self {
            linear_mm,
            angular_deg,
        };
        r.validate()?;
        Ok(r)
    }

    /// Linear range given as a percentage of half the peg size.
    pub fn from_percent_of_half_size(percent: f64, size_m: f64, angular_deg: f64) -> Result<Self> {
        Self::new(percent / 100.0 * 0.5 * size_m * 1000.0, angular_deg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.linear_mm.is_finite() && self.linear_mm >= 0.0) {
            return Err(invalid("linear_mm", "must be a non-negative number"));
        }
        if !(self.angular_deg.is_finite() && (0.0..=Self::MAX_ANGULAR_DEG).contains(&self.angular_deg)) {
            return Err(invalid("angular_deg", "must lie in [0, 12]"));
        }
        Ok(())
    }
}

/// Sampled perturbations. Localisation errors move the believed hole;
/// grasp errors move the peg in the hand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampledErrors {
    pub dx_m: f64,
    pub dy_m: f64,
    pub dyaw_rad: f64,
    pub dz_m: f64,
    pub tilt_x_rad: f64,
    pub tilt_y_rad: f64,
}

impl SampledErrors {
    pub fn sample<R: Rng + ?Sized>(ranges: &ErrorRanges, rng: &mut R) -> Self {
        let lin = ranges.linear_mm * 1e-3;
        let ang = ranges.angular_deg.to_radians();
        let mut u = |h: f64| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
        Self {
            dx_m: u(lin),
            dy_m: u(lin),
            dyaw_rad: u(ang),
            dz_m: u(lin),
            tilt_x_rad: u(ang),
            tilt_y_rad: u(ang),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachConfig {
    /// Clearance between the believed peg tip and the board top.
    pub height_m: f64,
    pub duration_s: f64,
    pub k_t_per_s: f64,
    pub k_theta_per_s: f64,
    /// Extra time allowed to settle before insertion starts anyway.
    pub settle_timeout_s: f64,
}

/// Early termination of stuck episodes: once the insertion primitive has
/// run for `after_tau` time constants, the episode ends as a failure if the
/// tip depth grew by less than `min_progress_m` over `window_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallRule {
    pub after_tau: f64,
    pub window_s: f64,
    pub min_progress_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub success: f64,
    /// Shaped failure reward cap as a fraction of `success`.
    pub failure_cap_fraction: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            success: SUCCESS_REWARD,
            failure_cap_fraction: 0.5,
        }
    }
}

/// Geometry, randomisation and timing of the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub shapes: Vec<CrossSection>,
    pub sizes_m: Vec<f64>,
    pub peg_length_m: f64,
    pub peg_mass_kg: f64,
    /// Distance from the end-effector origin down to the peg tip.
    pub grasp_offset_m: f64,
    pub hole_depth_m: f64,
    pub friction_range: (f64, f64),
    pub workspace_radius_m: (f64, f64),
    pub workspace_azimuth_deg: (f64, f64),
    pub board_yaw_deg: (f64, f64),
    pub ranges: ErrorRanges,
    pub dt_s: f64,
    pub success_tolerance_m: f64,
    pub approach: ApproachConfig,
    pub insertion_tau_s: f64,
    /// Start height of the peg tip above the board.
    pub start_height_m: (f64, f64),
    pub start_offset_m: f64,
    pub start_tilt_deg: f64,
    pub start_yaw_deg: f64,
    pub contact: ContactParams,
    pub reward: RewardConfig,
    pub wrench_filter_tau_s: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            shapes: vec![CrossSection::Circle, CrossSection::Square],
            sizes_m: vec![0.05],
            peg_length_m: 0.12,
            peg_mass_kg: 0.25,
            grasp_offset_m: 0.08,
            hole_depth_m: BoardSpec::DEFAULT_DEPTH,
            friction_range: (0.2, 0.9),
            workspace_radius_m: (0.38, 0.55),
            workspace_azimuth_deg: (-30.0, 30.0),
            board_yaw_deg: (0.0, 90.0),
            ranges: ErrorRanges::zero(),
            dt_s: 0.002,
            success_tolerance_m: 0.02,
            approach: ApproachConfig {
                height_m: 0.015,
                duration_s: 1.0,
                k_t_per_s: 100.0,
                k_theta_per_s: 100.0,
                settle_timeout_s: 0.5,
            },
            insertion_tau_s: 1.0,
            start_height_m: (0.08, 0.15),
            start_offset_m: 0.05,
            start_tilt_deg: 10.0,
            start_yaw_deg: 30.0,
            contact: ContactParams::default(),
            reward: RewardConfig::default(),
            wrench_filter_tau_s: WRENCH_FILTER_TAU,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, reason: &str| Error::Config {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.shapes.is_empty() {
            return Err(cfg_err("shapes", "at least one cross-section is required"));
        }
        if self.sizes_m.is_empty() || self.sizes_m.iter().any(|s| !(*s > 0.0)) {
            return Err(cfg_err("sizes_m", "sizes must be positive and non-empty"));
        }
        let (f0, f1) = self.friction_range;
        if !(0.2 <= f0 && f0 <= f1 && f1 <= 0.9) {
            return Err(cfg_err("friction_range", "must lie within [0.2, 0.9]"));
        }
        let (y0, y1) = self.board_yaw_deg;
        if !(0.0 <= y0 && y0 <= y1 && y1 <= 90.0) {
            return Err(cfg_err("board_yaw_deg", "must lie within [0, 90]"));
        }
        self.ranges
            .validate()
            .map_err(|e| cfg_err("ranges", &e.to_string()))?;
        if !(self.dt_s > 0.0 && self.dt_s <= 0.01) {
            return Err(cfg_err("dt_s", "must lie in (0, 0.01]"));
        }
        if !(self.grasp_offset_m > 0.0 && self.grasp_offset_m < self.peg_length_m) {
            return Err(cfg_err("grasp_offset_m", "must be positive and shorter than the peg"));
        }
        if !(self.insertion_tau_s > 0.0 && self.approach.duration_s > 0.0) {
            return Err(cfg_err("insertion_tau_s", "time constants must be positive"));
        }
        if !(self.success_tolerance_m >= 0.0 && self.success_tolerance_m < self.hole_depth_m) {
            return Err(cfg_err("success_tolerance_m", "must be smaller than the hole depth"));
        }
        Ok(())
    }

    pub fn with_ranges(&self, ranges: ErrorRanges) -> Self {
        Self {
            ranges,
            ..self.clone()
        }
    }

    pub fn with_shapes(&self, shapes: Vec<CrossSection>) -> Self {
        Self {
            shapes,
            ..self.clone()
        }
    }
}

/// What the controller is told: the believed hole pose and the peg type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub hole_position_m: Vector3<f64>,
    pub hole_yaw_rad: f64,
    pub shape: CrossSection,
    pub size_m: f64,
}

impl Observation {
    pub const DIM: usize = 9;

    /// Normalised feature vector fed to the policy.
    pub fn features(&self) -> Vec<f64> {
        let p = &self.hole_position_m;
        let mut f = vec![
            (p.x - 0.45) / 0.1,
            p.y / 0.2,
            (p.z - BoardSpec::DEFAULT_DEPTH) / 0.1,
            self.hole_yaw_rad.sin(),
            self.hole_yaw_rad.cos(),
            0.0,
            0.0,
            0.0,
            self.size_m / 0.05,
        ];
        f[5 + self.shape.index()] = 1.0;
        f
    }

    /// Believed hole frame.
    pub fn hole_frame(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.hole_position_m),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.hole_yaw_rad),
        )
    }
}

/// One fully sampled episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub board: BoardSpec,
    pub peg: PegSpec,
    pub ranges: ErrorRanges,
    pub errors: SampledErrors,
    pub initial_q: Vec<f64>,
}

impl EpisodeSpec {
    pub fn observation(&self) -> Observation {
        Observation {
            hole_position_m: self.board.position_m + Vector3::new(self.errors.dx_m, self.errors.dy_m, 0.0),
            hole_yaw_rad: self.board.yaw_rad + self.errors.dyaw_rad,
            shape: self.peg.cross_section,
            size_m: self.peg.size_m,
        }
    }

    /// End effector to peg, including grasp errors.
    pub fn actual_grasp(&self, cfg: &EnvConfig) -> Isometry3<f64> {
        let tilt = UnitQuaternion::from_euler_angles(self.errors.tilt_x_rad, self.errors.tilt_y_rad, 0.0);
        Isometry3::from_parts(Translation3::identity(), tilt)
            * nominal_grasp(cfg.grasp_offset_m + self.errors.dz_m)
    }
}

/// End effector to peg for a peg gripped `offset` above its tip, aligned
/// with the tool.
pub fn nominal_grasp(offset: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(0.0, 0.0, offset),
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
    )
}

/// Tool orientation that aligns a nominally gripped peg with a hole of the
/// given yaw.
pub fn insertion_orientation(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
}

/// Orientation of the nominal peg tip frame over a hole of the given yaw.
pub fn tip_orientation(yaw: f64) -> UnitQuaternion<f64> {
    insertion_orientation(yaw) * nominal_grasp(0.0).rotation
}

/// The arm used in episodes: its tool frame sits at the nominal peg tip.
pub fn episode_arm(cfg: &EnvConfig) -> ArmModel {
    ArmModel::ur5e_like().with_tool(&nominal_grasp(cfg.grasp_offset_m))
}

fn ik_seed(azimuth: f64) -> DVector<f64> {
    DVector::from_vec(vec![azimuth + std::f64::consts::PI, -1.2, 1.6, -1.97, -1.57, 0.0])
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws an episode: board pose, peg, friction, errors and a start
/// configuration reached by inverse kinematics.
pub fn sample_episode<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<EpisodeSpec> {
    cfg.validate()?;
    let arm = ArmModel::ur5e_like();
    let shape = cfg.shapes[rng.gen_range(0..cfg.shapes.len())];
    let size = cfg.sizes_m[rng.gen_range(0..cfg.sizes_m.len())];
    let mut peg = PegSpec::new(shape, size)?;
    peg.length_m = cfg.peg_length_m;
    peg.mass_kg = cfg.peg_mass_kg;
    let radius = uniform(rng, cfg.workspace_radius_m);
    let azimuth = uniform(rng, (cfg.workspace_azimuth_deg.0.to_radians(), cfg.workspace_azimuth_deg.1.to_radians()));
    let yaw = uniform(rng, (cfg.board_yaw_deg.0.to_radians(), cfg.board_yaw_deg.1.to_radians()));
    let friction = uniform(rng, cfg.friction_range);
    let mut board = BoardSpec::new(
        Vector3::new(radius * azimuth.cos(), radius * azimuth.sin(), cfg.hole_depth_m),
        yaw,
        &peg,
        friction,
    )?;
    board.depth_m = cfg.hole_depth_m;
    let errors = SampledErrors::sample(&cfg.ranges, rng);

    for _ in 0..50 {
        let off = cfg.start_offset_m;
        let dx = if off > 0.0 { rng.gen_range(-off..=off) } else { 0.0 };
        let dy = if off > 0.0 { rng.gen_range(-off..=off) } else { 0.0 };
        let height = uniform(rng, cfg.start_height_m);
        let t = cfg.start_tilt_deg.to_radians();
        let (tx, ty) = if t > 0.0 {
            (rng.gen_range(-t..=t), rng.gen_range(-t..=t))
        } else {
            (0.0, 0.0)
        };
        let y = cfg.start_yaw_deg.to_radians();
        let dyaw = if y > 0.0 { rng.gen_range(-y..=y) } else { 0.0 };
        let rot = UnitQuaternion::from_euler_angles(tx, ty, 0.0) * insertion_orientation(yaw + dyaw);
        let pos = board.position_m + Vector3::new(dx, dy, height + cfg.grasp_offset_m);
        let target = Isometry3::from_parts(Translation3::from(pos), rot);
        if let Ok(q) = arm.inverse_kinematics(&target, &ik_seed(azimuth)) {
            if arm.within_limits(&q) {
                return Ok(EpisodeSpec {
                    board,
                    peg,
                    ranges: cfg.ranges,
                    errors,
                    initial_q: q.iter().copied().collect(),
                });
            }
        }
    }
    Err(invalid("initial_q", "no reachable start configuration found"))
}

/// Terminal classification used by [`reward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Success,
    /// Failure with the final tip-to-destination distance.
    Failure { distance_m: f64 },
    /// Physically invalid state; no reward.
    Invalid,
}

/// Outcome reward on success, otherwise `cap·exp(−distance/size)`.
pub fn reward(cfg: &RewardConfig, outcome: Outcome, size_m: f64) -> f64 {
    match outcome {
        Outcome::Success => cfg.success,
        Outcome::Failure { distance_m } => {
            cfg.failure_cap_fraction * cfg.success * (-distance_m.max(0.0) / size_m).exp()
        }
        Outcome::Invalid => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeLimits {
    pub time_limit_s: f64,
    pub stall: Option<StallRule>,
    pub record_trace: bool,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            time_limit_s: 60.0,
            stall: Some(StallRule {
                after_tau: 2.0,
                window_s: 2.0,
                min_progress_m: 5e-4,
            }),
            record_trace: false,
        }
    }
}

impl EpisodeLimits {
    /// The full 60 s budget with no early termination.
    pub fn full() -> Self {
        Self {
            stall: None,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Approach,
    Insertion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_s: f64,
    pub phase: PhaseKind,
    pub eef_m: Vector3<f64>,
    pub wrench: Wrench,
    pub penetration_m: f64,
    pub depth_m: f64,
    pub contacts: usize,
}

/// Writes a trace as CSV.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "t_s,phase,x_m,y_m,z_m,fx_n,fy_n,fz_n,mx_nm,my_nm,mz_nm,penetration_m,depth_m,contacts")?;
    for r in rows {
        let phase = match r.phase {
            PhaseKind::Approach => "approach",
            PhaseKind::Insertion => "insertion",
        };
        writeln!(
            out,
            "{:.4},{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.5},{:.5},{:.5},{:.3e},{:.6},{}",
            r.t_s,
            phase,
            r.eef_m.x,
            r.eef_m.y,
            r.eef_m.z,
            r.wrench.force.x,
            r.wrench.force.y,
            r.wrench.force.z,
            r.wrench.moment.x,
            r.wrench.moment.y,
            r.wrench.moment.z,
            r.penetration_m,
            r.depth_m,
            r.contacts
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub time_to_complete_s: Option<f64>,
    pub reward: f64,
    pub final_depth_m: f64,
    pub final_distance_m: f64,
    pub max_depth_m: f64,
    pub elapsed_s: f64,
    pub steps: usize,
    pub saturated_steps: usize,
    pub max_penetration_m: f64,
    pub invalid: bool,
    pub stalled: bool,
    pub diagnostic: Option<String>,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRow>>,
}

struct ActivePrimitive {
    kind: PhaseKind,
    dmp: DmpConfig,
    phase: PhaseState,
    started_at: f64,
}

/// The controller: everything it knows comes from the observation, the
/// nominal grasp and the compliance parameters.
pub struct Controller {
    frame: TaskFrame,
    params: ComplianceParams,
    approach_goal: Pose6,
    insertion_goal: Pose6,
    approach: ApproachConfig,
    insertion_tau: f64,
    filter: WrenchFilter,
    active: Option<ActivePrimitive>,
    compliance_on: bool,
}

impl Controller {
    pub fn new(obs: &Observation, cfg: &EnvConfig, params: ComplianceParams) -> Result<Self> {
        params.validate()?;
        let frame = TaskFrame::new(tip_orientation(obs.hole_yaw_rad));
        let hole = obs.hole_position_m;
        let above = hole + Vector3::new(0.0, 0.0, cfg.approach.height_m);
        let bottom = hole + Vector3::new(0.0, 0.0, -cfg.hole_depth_m);
        Ok(Self {
            frame,
            params,
            approach_goal: Pose6::new(above, Vector3::zeros()),
            insertion_goal: Pose6::new(bottom, Vector3::zeros()),
            approach: cfg.approach,
            insertion_tau: cfg.insertion_tau_s,
            filter: WrenchFilter::new(cfg.wrench_filter_tau_s)?,
            active: None,
            compliance_on: true,
        })
    }

    /// Drops the coupling term while keeping the learned stiffness.
    pub fn without_compliance(mut self) -> Self {
        self.compliance_on = false;
        self
    }

    pub fn frame(&self) -> &TaskFrame {
        &self.frame
    }

    pub fn insertion_goal(&self) -> &Pose6 {
        &self.insertion_goal
    }

    pub fn approach_goal(&self) -> &Pose6 {
        &self.approach_goal
    }

    pub fn phase(&self) -> Option<PhaseKind> {
        self.active.as_ref().map(|a| a.kind)
    }

    fn start(&mut self, kind: PhaseKind, y: Pose6, t: f64) -> Result<()> {
        let dmp = match kind {
            PhaseKind::Approach => DmpConfig::min_jerk(
                self.approach.k_t_per_s,
                self.approach.k_theta_per_s,
                self.approach.duration_s,
                y,
                self.approach_goal,
            )?,
            PhaseKind::Insertion => DmpConfig::min_jerk(
                self.params.k_t,
                self.params.k_theta,
                self.insertion_tau,
                y,
                self.insertion_goal,
            )?,
        };
        let phase = dmp.phase()?;
        self.active = Some(ActivePrimitive {
            kind,
            dmp,
            phase,
            started_at: t,
        });
        Ok(())
    }

    /// Time since the insertion primitive started.
    pub fn insertion_time(&self, t: f64) -> Option<f64> {
        match &self.active {
            Some(a) if a.kind == PhaseKind::Insertion => Some(t - a.started_at),
            _ => None,
        }
    }

    /// Torque for the current state given the sensed contact wrench.
    pub fn command(
        &mut self,
        arm: &ArmModel,
        terms: &DynamicTerms,
        state: &ArmState,
        sensed: &Wrench,
        t: f64,
        dt: f64,
    ) -> Result<TorqueCommand> {
        let y = self.frame.to_pose(&terms.kin.eef);
        if self.active.is_none() {
            self.start(PhaseKind::Approach, y, t)?;
        }
        let filtered = self.filter.update(sensed, dt);
        let switch = {
            let a = self.active.as_ref().expect("primitive started");
            if a.kind == PhaseKind::Approach {
                let elapsed = t - a.started_at;
                let err = self.frame.pose_error(&self.approach_goal, &terms.kin.eef);
                let twist = terms.eef_twist(&state.qdot);
                let settled = err.fixed_rows::<3>(0).norm() < 1e-3
                    && err.fixed_rows::<3>(3).norm() < 1e-2
                    && twist.norm() < 1e-2;
                elapsed >= self.approach.duration_s && settled
                    || elapsed >= self.approach.duration_s + self.approach.settle_timeout_s
            } else {
                false
            }
        };
        if switch {
            self.start(PhaseKind::Insertion, y, t)?;
        }
        let a = self.active.as_mut().expect("primitive started");
        let f = eval_forcing(&a.dmp.basis, a.phase.s)?.value;
        let dy = if a.kind == PhaseKind::Insertion && self.compliance_on {
            deviation(&self.params, &filtered)?
        } else {
            Vector6::zeros()
        };
        let g_m = modified_goal(&a.dmp.goal, &a.dmp.start, &a.dmp.stiffness, &f, &dy)?;
        let cmd = cartesian_torque(arm, terms, state, &self.frame, &g_m.0, &a.dmp.stiffness, &a.dmp.damping, a.dmp.tau)?;
        a.phase = step_phase(&a.phase, dt)?;
        Ok(cmd)
    }
}

/// A running episode. Step it directly for fine-grained inspection or use
/// [`run_episode`].
pub struct Episode {
    cfg: EnvConfig,
    spec: EpisodeSpec,
    sim: Simulator,
    controller: Controller,
    destination: Vector3<f64>,
    max_depth: f64,
    depth_log: Vec<(f64, f64)>,
    steps: usize,
    saturated: usize,
    max_pen: f64,
}

/// Everything observable about one simulation step.
pub struct StepInfo {
    pub t: f64,
    pub report: ContactReport,
    pub command: TorqueCommand,
    pub depth: f64,
    pub phase: PhaseKind,
}

impl Episode {
    pub fn new(cfg: &EnvConfig, spec: &EpisodeSpec, params: &ComplianceParams) -> Result<Self> {
        let controller = Controller::new(&spec.observation(), cfg, params.clone())?;
        Self::with_controller(cfg, spec, controller)
    }

    pub fn with_controller(cfg: &EnvConfig, spec: &EpisodeSpec, controller: Controller) -> Result<Self> {
        cfg.validate()?;
        spec.board.validate()?;
        spec.peg.validate()?;
        let grasp = nominal_grasp(cfg.grasp_offset_m).inverse() * spec.actual_grasp(cfg);
        // peg centroid sits half a length above the tip
        let centroid = grasp * Point3::new(0.0, 0.0, 0.5 * spec.peg.length_m);
        let rot = grasp.rotation.to_rotation_matrix();
        let inertia = rot.matrix() * spec.peg.inertia() * rot.matrix().transpose();
        let payload = LinkInertia {
            mass_kg: spec.peg.mass_kg,
            com_m: centroid.coords,
            inertia_kg_m2: inertia,
        };
        let arm = episode_arm(cfg).with_payload(&payload)?;
        let contact = ContactModel::new(spec.board, spec.peg, cfg.contact)?;
        let q = DVector::from_vec(spec.initial_q.clone());
        let sim = Simulator::new(arm, contact, grasp, ArmState::at_rest(q))?;
        let destination = spec.board.frame() * Point3::new(0.0, 0.0, -spec.board.depth_m);
        Ok(Self {
            cfg: cfg.clone(),
            spec: spec.clone(),
            sim,
            controller,
            destination: destination.coords,
            max_depth: f64::NEG_INFINITY,
            depth_log: Vec::new(),
            steps: 0,
            saturated: 0,
            max_pen: 0.0,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn time(&self) -> f64 {
        self.sim.time
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    /// Tip position in the world frame.
    pub fn tip(&self) -> Vector3<f64> {
        let eef = self.sim.arm.kinematics(&self.sim.state.q).eef;
        (eef * self.sim.grasp).translation.vector
    }

    pub fn depth(&self) -> f64 {
        let eef = self.sim.arm.kinematics(&self.sim.state.q).eef;
        self.sim.contact.insertion_progress(&(eef * self.sim.grasp))
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        let dt = self.cfg.dt_s;
        let t = self.sim.time;
        let terms = self.sim.terms();
        let report = self.sim.sense(&terms);
        if report.invalid {
            return Err(Error::PhysicsInvalid(format!(
                "penetration {:.2} mm exceeds the limit at t = {:.3} s",
                report.max_penetration * 1e3,
                t
            )));
        }
        let command = self
            .controller
            .command(&self.sim.arm, &terms, &self.sim.state, &report.wrench, t, dt)?;
        self.sim.advance(&terms, &report, &command.torque, dt)?;
        self.steps += 1;
        if command.saturated {
            self.saturated += 1;
        }
        self.max_pen = self.max_pen.max(report.max_penetration);
        let depth = -report.tip_in_board.z;
        self.max_depth = self.max_depth.max(depth);
        Ok(StepInfo {
            t,
            report,
            command,
            depth,
            phase: self.controller.phase().unwrap_or(PhaseKind::Approach),
        })
    }

    fn stalled(&mut self, rule: &StallRule, depth: f64) -> bool {
        let t = self.sim.time;
        let Some(elapsed) = self.controller.insertion_time(t) else {
            return false;
        };
        if self.depth_log.last().map_or(true, |(t0, _)| t - t0 >= 0.05 - 1e-9) {
            self.depth_log.push((t, depth));
        }
        if elapsed < rule.after_tau * self.cfg.insertion_tau_s + rule.window_s {
            return false;
        }
        let cutoff = t - rule.window_s;
        let past = self
            .depth_log
            .iter()
            .rev()
            .find(|(ts, _)| *ts <= cutoff)
            .map(|(_, d)| *d);
        matches!(past, Some(d0) if depth - d0 < rule.min_progress_m)
    }

    /// Runs until success, the time limit, a stall, or a physics failure.
    pub fn run(mut self, limits: &EpisodeLimits) -> Result<EpisodeResult> {
        let target_depth = self.spec.board.depth_m - self.cfg.success_tolerance_m;
        let mut trace = limits.record_trace.then(Vec::new);
        let mut stalled = false;
        let mut invalid = false;
        let mut diagnostic = None;
        let mut success_at = None;
        let mut depth;
        while self.sim.time < limits.time_limit_s - 1e-12 {
            let info = match self.step() {
                Ok(info) => info,
                Err(Error::PhysicsInvalid(msg)) => {
                    invalid = true;
                    diagnostic = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            };
            depth = -info.report.tip_in_board.z;
            if let Some(rows) = trace.as_mut() {
                rows.push(TraceRow {
                    t_s: info.t,
                    phase: info.phase,
                    eef_m: self.sim.arm.kinematics(&self.sim.state.q).eef.translation.vector,
                    wrench: info.report.wrench,
                    penetration_m: info.report.max_penetration,
                    depth_m: depth,
                    contacts: info.report.contacts.len(),
                });
            }
            if depth >= target_depth && info.report.in_hole {
                success_at = Some(self.sim.time);
                break;
            }
            if let Some(rule) = limits.stall {
                if self.stalled(&rule, depth) {
                    stalled = true;
                    break;
                }
            }
        }
        let final_depth = self.depth();
        let distance = (self.tip() - self.destination).norm();
        let outcome = if invalid {
            Outcome::Invalid
        } else if success_at.is_some() {
            Outcome::Success
        } else {
            Outcome::Failure { distance_m: distance }
        };
        Ok(EpisodeResult {
            success: success_at.is_some(),
            time_to_complete_s: success_at,
            reward: reward(&self.cfg.reward, outcome, self.spec.peg.size_m),
            final_depth_m: final_depth,
            final_distance_m: distance,
            max_depth_m: self.max_depth,
            elapsed_s: self.sim.time,
            steps: self.steps,
            saturated_steps: self.saturated,
            max_penetration_m: self.max_pen,
            invalid,
            stalled,
            diagnostic,
            trace,
        })
    }
}

/// Runs one episode with the given compliance parameters.
pub fn run_episode(
    cfg: &EnvConfig,
    spec: &EpisodeSpec,
    params: &ComplianceParams,
    limits: &EpisodeLimits,
) -> Result<EpisodeResult> {
    Episode::new(cfg, spec, params)?.run(limits)
}

/// Hand-tuned compliance about the peg tip.
///
/// Lateral forces push the tip sideways, a moment about a horizontal axis
/// slides the tip towards the side it tilts away from, and the negative
/// rotational compliance turns the peg against contact moments so that a
/// tilted peg straightens as it enters the chamfer.
pub fn hand_tuned_params() -> ComplianceParams {
    use nalgebra::Matrix6;
    let lateral = -6e-4;
    let axial = 1.8e-3;
    let moment_to_slide = 0.08;
    let tilt = -0.55;
    let yaw = 0.7;
    let mut c = Matrix6::zeros();
    c[(0, 0)] = lateral;
    c[(1, 1)] = lateral;
    c[(2, 2)] = axial;
    c[(0, 4)] = moment_to_slide;
    c[(1, 3)] = -moment_to_slide;
    c[(3, 3)] = tilt;
    c[(4, 4)] = tilt;
    c[(5, 5)] = yaw;
    ComplianceParams::new(350.0, 170.0, c).expect("hand-tuned parameters are valid")
}
