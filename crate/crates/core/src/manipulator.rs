//! Serial-arm kinematics, rigid-body dynamics and the Cartesian
//! feedback-linearising torque law.
//!
//! The arm obeys `H(q)q̈ + h(q, q̇) = u + Jᵀw`, with `w` the external wrench
//! at the end effector. The controller commands the end-effector
//! acceleration `ÿ* = τ⁻¹(K(g_m − y) − Dẏ)` through
//! `u = H J⁺ (ÿ* − J̇q̇) + h`.

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Matrix6xX, Translation3, Unit, UnitQuaternion, Vector3,
    Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::pose::{Pose6, TaskFrame};

/// Singular value below which the damped pseudo-inverse is engaged.
pub const PINV_SIGMA_MIN: f64 = 1e-4;
const PINV_DAMPING: f64 = 1e-3;

/// A rigid transform written as translation plus roll-pitch-yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedTransform {
    pub xyz_m: Vector3<f64>,
    pub rpy_rad: Vector3<f64>,
}

impl FixedTransform {
    pub fn identity() -> Self {
        Self {
            xyz_m: Vector3::zeros(),
            rpy_rad: Vector3::zeros(),
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.xyz_m),
            UnitQuaternion::from_euler_angles(self.rpy_rad.x, self.rpy_rad.y, self.rpy_rad.z),
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (r, p, y) = iso.rotation.euler_angles();
        Self {
            xyz_m: iso.translation.vector,
            rpy_rad: Vector3::new(r, p, y),
        }
    }

    /// Standard Denavit–Hartenberg post-rotation block `Tz(d)·Tx(a)·Rx(α)`.
    pub fn dh(d: f64, a: f64, alpha: f64) -> Self {
        Self {
            xyz_m: Vector3::new(a, 0.0, d),
            rpy_rad: Vector3::new(alpha, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkInertia {
    pub mass_kg: f64,
    /// Centre of mass in the link frame.
    pub com_m: Vector3<f64>,
    /// Inertia about the centre of mass, link frame axes.
    pub inertia_kg_m2: Matrix3<f64>,
}

impl LinkInertia {
    /// Solid cylinder of radius `r` and length `l` along `axis` (0, 1, 2).
    pub fn cylinder(mass: f64, r: f64, l: f64, axis: usize, com: Vector3<f64>) -> Self {
        let transverse = mass * (3.0 * r * r + l * l) / 12.0;
        let mut d = Vector3::repeat(transverse);
        d[axis] = 0.5 * mass * r * r;
        Self {
            mass_kg: mass,
            com_m: com,
            inertia_kg_m2: Matrix3::from_diagonal(&d),
        }
    }

    /// Combines two bodies expressed in the same frame.
    pub fn combined(&self, other: &LinkInertia) -> LinkInertia {
        let m = self.mass_kg + other.mass_kg;
        let com = (self.com_m * self.mass_kg + other.com_m * other.mass_kg) / m;
        let shift = |li: &LinkInertia| {
            let r = li.com_m - com;
            li.inertia_kg_m2 + li.mass_kg * (Matrix3::identity() * r.dot(&r) - r * r.transpose())
        };
        LinkInertia {
            mass_kg: m,
            com_m: com,
            inertia_kg_m2: shift(self) + shift(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDescription {
    pub name: String,
    /// Parent link frame to joint frame.
    pub origin: FixedTransform,
    /// Rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    pub limits_rad: (f64, f64),
    pub torque_limit_nm: f64,
    /// Reflected rotor inertia about the joint axis.
    #[serde(default)]
    pub armature_kg_m2: f64,
    /// Inertia of the child link, expressed in the rotated joint frame.
    pub link: LinkInertia,
}

/// Serializable arm description; the on-disk JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDescription {
    pub name: String,
    pub base: FixedTransform,
    pub joints: Vec<JointDescription>,
    /// Last link frame to end-effector frame.
    pub tool: FixedTransform,
    pub gravity_m_s2: Vector3<f64>,
}

#[derive(Debug, Clone)]
struct JointData {
    origin: Isometry3<f64>,
    axis: Unit<Vector3<f64>>,
    limits: (f64, f64),
    torque_limit: f64,
    armature: f64,
    link: LinkInertia,
}

/// Immutable arm model. Construct from an [`ArmDescription`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "ArmDescription", try_from = "ArmDescription")]
pub struct ArmModel {
    description: ArmDescription,
    base: Isometry3<f64>,
    joints: Vec<JointData>,
    tool: Isometry3<f64>,
}

impl From<ArmModel> for ArmDescription {
    fn from(m: ArmModel) -> Self {
        m.description
    }
}

impl TryFrom<ArmDescription> for ArmModel {
    type Error = Error;
    fn try_from(d: ArmDescription) -> Result<Self> {
        ArmModel::new(d)
    }
}

/// Joint positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl ArmState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    /// Semi-implicit Euler: velocity first, then position with the new
    /// velocity.
    pub fn advanced(&self, qddot: &DVector<f64>, dt: f64) -> Self {
        let qdot = &self.qdot + qddot * dt;
        let q = &self.q + &qdot * dt;
        Self { q, qdot }
    }
}

/// Frames and axes of one configuration, shared by the Jacobian, the
/// dynamics and the controller.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// World joint axes.
    pub axes: Vec<Vector3<f64>>,
    /// World joint origins.
    pub origins: Vec<Vector3<f64>>,
    /// World link frames (after the joint rotation).
    pub links: Vec<Isometry3<f64>>,
    /// World centres of mass.
    pub coms: Vec<Vector3<f64>>,
    pub eef: Isometry3<f64>,
}

impl ArmModel {
    pub fn new(description: ArmDescription) -> Result<Self> {
        if description.joints.len() < 6 {
            return Err(invalid("joints", "at least six joints are needed for 6-DOF control"));
        }
        let mut joints = Vec::with_capacity(description.joints.len());
        for j in &description.joints {
            if j.axis.norm() < 1e-12 {
                return Err(invalid("axis", format!("joint {} has a zero axis", j.name)));
            }
            if !(j.link.mass_kg > 0.0) {
                return Err(invalid("mass_kg", format!("joint {} link mass must be positive", j.name)));
            }
            let sym = (j.link.inertia_kg_m2 - j.link.inertia_kg_m2.transpose()).norm();
            let pd = j.link.inertia_kg_m2.cholesky().is_some();
            if sym > 1e-12 || !pd {
                return Err(invalid(
                    "inertia_kg_m2",
                    format!("joint {} inertia must be symmetric positive-definite", j.name),
                ));
            }
            if !(j.armature_kg_m2.is_finite() && j.armature_kg_m2 >= 0.0) {
                return Err(invalid("armature_kg_m2", format!("joint {} armature must be non-negative", j.name)));
            }
            if !(j.limits_rad.0 < j.limits_rad.1) {
                return Err(invalid("limits_rad", format!("joint {} limits are not ordered", j.name)));
            }
            joints.push(JointData {
                origin: j.origin.to_isometry(),
                axis: Unit::new_normalize(j.axis),
                limits: j.limits_rad,
                torque_limit: j.torque_limit_nm,
                armature: j.armature_kg_m2,
                link: j.link,
            });
        }
        Ok(Self {
            base: description.base.to_isometry(),
            tool: description.tool.to_isometry(),
            joints,
            description,
        })
    }

    /// A six-joint arm with UR5e link lengths and cylinder inertias, with a
    /// 10 cm gripper; the end-effector frame sits between the fingertips.
    pub fn ur5e_like() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let d = [0.1625, 0.0, 0.0, 0.1333, 0.0997, 0.0996];
        let a = [0.0, -0.425, -0.3922, 0.0, 0.0, 0.0];
        let alpha = [FRAC_PI_2, 0.0, 0.0, FRAC_PI_2, -FRAC_PI_2, 0.0];
        let mass = [3.761, 8.058, 2.846, 1.37, 1.3, 0.365];
        // centres of mass in the DH frames
        let com_dh = [
            Vector3::new(0.0, -0.02561, 0.00193),
            Vector3::new(0.2125, 0.0, 0.11336),
            Vector3::new(0.15, 0.0, 0.0265),
            Vector3::new(0.0, -0.0018, 0.01634),
            Vector3::new(0.0, 0.0018, 0.01634),
            Vector3::new(0.0, 0.0, -0.001159),
        ];
        // (radius, length, axis in DH frame)
        let shape = [
            (0.06, 0.15, 1usize),
            (0.06, 0.425, 0),
            (0.05, 0.392, 0),
            (0.045, 0.12, 1),
            (0.045, 0.12, 1),
            (0.04, 0.04, 2),
        ];
        let names = ["shoulder_pan", "shoulder_lift", "elbow", "wrist_1", "wrist_2", "wrist_3"];
        let torque = [150.0, 150.0, 150.0, 28.0, 28.0, 28.0];
        // rotor inertia times the square of a 101:1 gear ratio
        let armature = [0.4, 0.4, 0.4, 0.13, 0.13, 0.13];
        let mut joints = Vec::new();
        for i in 0..6 {
            let post = FixedTransform::dh(d[i], a[i], alpha[i]).to_isometry();
            // link frame = joint frame rotated by q; the DH frame is link·post
            let com = post * nalgebra::Point3::from(com_dh[i]);
            let (r, l, ax) = shape[i];
            let cyl = LinkInertia::cylinder(mass[i], r, l, ax, Vector3::zeros());
            let rot = post.rotation.to_rotation_matrix();
            let inertia = rot.matrix() * cyl.inertia_kg_m2 * rot.matrix().transpose();
            let origin = if i == 0 {
                FixedTransform::identity()
            } else {
                FixedTransform::dh(d[i - 1], a[i - 1], alpha[i - 1])
            };
            joints.push(JointDescription {
                name: names[i].to_string(),
                origin,
                axis: Vector3::z(),
                limits_rad: (-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI),
                torque_limit_nm: torque[i],
                armature_kg_m2: armature[i],
                link: LinkInertia {
                    mass_kg: mass[i],
                    com_m: com.coords,
                    inertia_kg_m2: 0.5 * (inertia + inertia.transpose()),
                },
            });
        }
        let gripper = 0.10;
        let desc = ArmDescription {
            name: "ur5e-like".into(),
            base: FixedTransform::identity(),
            joints,
            tool: FixedTransform {
                xyz_m: Vector3::new(0.0, 0.0, d[5] + gripper),
                rpy_rad: Vector3::zeros(),
            },
            gravity_m_s2: Vector3::new(0.0, 0.0, -9.81),
        };
        Self::new(desc).expect("built-in arm description is valid")
    }

    pub fn description(&self) -> &ArmDescription {
        &self.description
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.description.gravity_m_s2
    }

    /// Same arm with gravity replaced.
    pub fn with_gravity(&self, g: Vector3<f64>) -> Self {
        let mut d = self.description.clone();
        d.gravity_m_s2 = g;
        Self::new(d).expect("gravity change keeps the model valid")
    }

    /// Same arm with the tool frame moved by `extra`, expressed in the
    /// current tool frame.
    pub fn with_tool(&self, extra: &Isometry3<f64>) -> Self {
        let mut d = self.description.clone();
        d.tool = FixedTransform::from_isometry(&(self.tool * extra));
        Self::new(d).expect("tool change keeps the model valid")
    }

    /// Rigidly attaches a payload, given in the end-effector frame, to the
    /// last link.
    pub fn with_payload(&self, payload: &LinkInertia) -> Result<Self> {
        let mut d = self.description.clone();
        let tool = self.tool;
        let com = tool * nalgebra::Point3::from(payload.com_m);
        let rot = tool.rotation.to_rotation_matrix();
        let inertia = rot.matrix() * payload.inertia_kg_m2 * rot.matrix().transpose();
        let moved = LinkInertia {
            mass_kg: payload.mass_kg,
            com_m: com.coords,
            inertia_kg_m2: 0.5 * (inertia + inertia.transpose()),
        };
        let last = d.joints.last_mut().expect("arm has joints");
        last.link = last.link.combined(&moved);
        Self::new(d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: ArmDescription = serde_json::from_str(text)?;
        Self::new(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.description)?)
    }

    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.torque_limit))
    }

    pub fn within_limits(&self, q: &DVector<f64>) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q.iter())
                .all(|(j, v)| v.is_finite() && *v >= j.limits.0 && *v <= j.limits.1)
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(invalid("q", format!("expected {} joints, got {}", self.dof(), q.len())));
        }
        ensure_finite("q", q.iter().copied())
    }

    pub fn kinematics(&self, q: &DVector<f64>) -> Kinematics {
        let n = self.dof();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut links = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut t = self.base;
        for (j, qi) in self.joints.iter().zip(q.iter()) {
            t *= j.origin;
            axes.push(t.rotation * j.axis.into_inner());
            origins.push(t.translation.vector);
            t *= UnitQuaternion::from_axis_angle(&j.axis, *qi);
            coms.push(t.transform_point(&j.link.com_m.into()).coords);
            links.push(t);
        }
        Kinematics {
            axes,
            origins,
            links,
            coms,
            eef: t * self.tool,
        }
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Isometry3<f64>> {
        self.check_q(q)?;
        Ok(self.kinematics(q).eef)
    }

    /// End-effector pose in task coordinates.
    pub fn forward_kinematics_pose(&self, q: &DVector<f64>, frame: &TaskFrame) -> Result<Pose6> {
        Ok(frame.to_pose(&self.forward_kinematics(q)?))
    }

    /// Geometric Jacobian mapping `q̇` to `(v, ω)` of the end effector.
    pub fn jacobian(&self, q: &DVector<f64>) -> Result<Matrix6xX<f64>> {
        self.check_q(q)?;
        Ok(Self::jacobian_from(&self.kinematics(q)))
    }

    pub fn jacobian_from(kin: &Kinematics) -> Matrix6xX<f64> {
        let n = kin.axes.len();
        let pe = kin.eef.translation.vector;
        let mut j = Matrix6xX::zeros(n);
        for i in 0..n {
            let z = kin.axes[i];
            let v = z.cross(&(pe - kin.origins[i]));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        j
    }

    /// Time derivative of the geometric Jacobian along `q̇`.
    pub fn jacobian_dot_from(kin: &Kinematics, qdot: &DVector<f64>) -> Matrix6xX<f64> {
        let n = kin.axes.len();
        let pe = kin.eef.translation.vector;
        let mut pe_dot = Vector3::zeros();
        for j in 0..n {
            pe_dot += kin.axes[j].cross(&(pe - kin.origins[j])) * qdot[j];
        }
        let mut out = Matrix6xX::zeros(n);
        let mut omega = Vector3::zeros();
        for i in 0..n {
            let z = kin.axes[i];
            let p = kin.origins[i];
            let z_dot = omega.cross(&z);
            let mut p_dot = Vector3::zeros();
            for j in 0..i {
                p_dot += kin.axes[j].cross(&(p - kin.origins[j])) * qdot[j];
            }
            let v = z_dot.cross(&(pe - p)) + z.cross(&(pe_dot - p_dot));
            out.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
            out.fixed_view_mut::<3, 1>(3, i).copy_from(&z_dot);
            omega += z * qdot[i];
        }
        out
    }

    pub fn jacobian_dot(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<Matrix6xX<f64>> {
        self.check_q(q)?;
        Ok(Self::jacobian_dot_from(&self.kinematics(q), qdot))
    }

    fn world_inertia(&self, kin: &Kinematics, i: usize) -> Matrix3<f64> {
        let r = kin.links[i].rotation.to_rotation_matrix();
        r.matrix() * self.joints[i].link.inertia_kg_m2 * r.matrix().transpose()
    }

    /// Joint-space inertia `H(q) = Σ mᵢJᵥᵢᵀJᵥᵢ + J_ωᵢᵀIᵢJ_ωᵢ`.
    pub fn mass_matrix_from(&self, kin: &Kinematics) -> DMatrix<f64> {
        let n = self.dof();
        let mut h = DMatrix::zeros(n, n);
        let mut jv = vec![Vector3::zeros(); n];
        for i in 0..n {
            let m = self.joints[i].link.mass_kg;
            let inertia = self.world_inertia(kin, i);
            let c = kin.coms[i];
            for (j, col) in jv.iter_mut().enumerate().take(i + 1) {
                *col = kin.axes[j].cross(&(c - kin.origins[j]));
            }
            for a in 0..=i {
                let iza = inertia * kin.axes[a];
                for b in 0..=a {
                    let v = m * jv[a].dot(&jv[b]) + kin.axes[b].dot(&iza);
                    h[(a, b)] += v;
                    if a != b {
                        h[(b, a)] += v;
                    }
                }
            }
        }
        for (i, j) in self.joints.iter().enumerate() {
            h[(i, i)] += j.armature;
        }
        h
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        Ok(self.mass_matrix_from(&self.kinematics(q)))
    }

    /// Recursive Newton–Euler inverse dynamics: joint torques producing
    /// `q̈` at `(q, q̇)` under gravity `gravity`.
    pub fn inverse_dynamics_from(
        &self,
        kin: &Kinematics,
        qdot: &DVector<f64>,
        qddot: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> DVector<f64> {
        let n = self.dof();
        let mut omega = Vector3::zeros();
        let mut alpha = Vector3::zeros();
        // linear acceleration of the previous joint origin
        let mut acc_prev = -gravity;
        let mut p_prev = kin.origins[0];
        let mut omega_link = Vec::with_capacity(n);
        let mut alpha_link = Vec::with_capacity(n);
        let mut acc_com = Vec::with_capacity(n);
        for i in 0..n {
            let z = kin.axes[i];
            let p = kin.origins[i];
            let r = p - p_prev;
            let acc_p = acc_prev + alpha.cross(&r) + omega.cross(&omega.cross(&r));
            let omega_i = omega + z * qdot[i];
            let alpha_i = alpha + z * qddot[i] + omega.cross(&z) * qdot[i];
            let rc = kin.coms[i] - p;
            acc_com.push(acc_p + alpha_i.cross(&rc) + omega_i.cross(&omega_i.cross(&rc)));
            omega_link.push(omega_i);
            alpha_link.push(alpha_i);
            omega = omega_i;
            alpha = alpha_i;
            acc_prev = acc_p;
            p_prev = p;
        }
        let mut tau = DVector::zeros(n);
        let mut f_next = Vector3::zeros();
        let mut n_next = Vector3::zeros();
        for i in (0..n).rev() {
            let m = self.joints[i].link.mass_kg;
            let inertia = self.world_inertia(kin, i);
            let p = kin.origins[i];
            let f_i = m * acc_com[i] + f_next;
            let p_next = if i + 1 < n { kin.origins[i + 1] } else { p };
            let n_i = inertia * alpha_link[i]
                + omega_link[i].cross(&(inertia * omega_link[i]))
                + n_next
                + (kin.coms[i] - p).cross(&(m * acc_com[i]))
                + (p_next - p).cross(&f_next);
            tau[i] = kin.axes[i].dot(&n_i) + self.joints[i].armature * qddot[i];
            f_next = f_i;
            n_next = n_i;
        }
        tau
    }

    /// Coriolis, centrifugal and gravity torques `h(q, q̇)`.
    pub fn bias_forces_from(&self, kin: &Kinematics, qdot: &DVector<f64>) -> DVector<f64> {
        let zero = DVector::zeros(self.dof());
        self.inverse_dynamics_from(kin, qdot, &zero, &self.gravity())
    }

    pub fn bias_forces(&self, state: &ArmState) -> Result<DVector<f64>> {
        self.check_q(&state.q)?;
        Ok(self.bias_forces_from(&self.kinematics(&state.q), &state.qdot))
    }

    /// Forward dynamics `q̈ = H⁻¹(u − h)`.
    pub fn dynamics(&self, state: &ArmState, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.dynamics_with_wrench(state, u, &Vector6::zeros())
    }

    /// Forward dynamics with an external end-effector wrench `[f; m]`.
    pub fn dynamics_with_wrench(
        &self,
        state: &ArmState,
        u: &DVector<f64>,
        wrench: &Vector6<f64>,
    ) -> Result<DVector<f64>> {
        self.check_q(&state.q)?;
        ensure_finite("u", u.iter().copied())?;
        let kin = self.kinematics(&state.q);
        let h = self.mass_matrix_from(&kin);
        let bias = self.bias_forces_from(&kin, &state.qdot);
        let j = Self::jacobian_from(&kin);
        let rhs = u - bias + j.transpose() * wrench;
        let chol = h.cholesky().ok_or(Error::Singular("joint-space inertia"))?;
        Ok(chol.solve(&rhs))
    }

    pub fn kinetic_energy(&self, state: &ArmState) -> Result<f64> {
        let h = self.mass_matrix(&state.q)?;
        Ok(0.5 * state.qdot.dot(&(h * &state.qdot)))
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64> {
        self.check_q(q)?;
        let kin = self.kinematics(q);
        let g = self.gravity();
        Ok(self
            .joints
            .iter()
            .zip(&kin.coms)
            .map(|(j, c)| -j.link.mass_kg * g.dot(c))
            .sum())
    }

    /// Classic fourth-order Runge–Kutta step under constant torque.
    pub fn rk4_step(&self, state: &ArmState, u: &DVector<f64>, dt: f64) -> Result<ArmState> {
        let f = |s: &ArmState| -> Result<(DVector<f64>, DVector<f64>)> {
            Ok((s.qdot.clone(), self.dynamics(s, u)?))
        };
        let advance = |k: &(DVector<f64>, DVector<f64>), h: f64| ArmState {
            q: &state.q + &k.0 * h,
            qdot: &state.qdot + &k.1 * h,
        };
        let k1 = f(state)?;
        let k2 = f(&advance(&k1, 0.5 * dt))?;
        let k3 = f(&advance(&k2, 0.5 * dt))?;
        let k4 = f(&advance(&k3, dt))?;
        Ok(ArmState {
            q: &state.q + (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) * (dt / 6.0),
            qdot: &state.qdot + (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) * (dt / 6.0),
        })
    }

    /// Damped least-squares inverse kinematics.
    pub fn inverse_kinematics(
        &self,
        target: &Isometry3<f64>,
        seed: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_q(seed)?;
        let frame = TaskFrame::default();
        let goal = frame.to_pose(target);
        let mut q = seed.clone();
        for _ in 0..300 {
            let kin = self.kinematics(&q);
            let err = frame.pose_error(&goal, &kin.eef);
            if err.norm() < 1e-10 {
                return Ok(q);
            }
            let j = Self::jacobian_from(&kin);
            let jt = j.transpose();
            let lambda2 = 1e-6;
            let a = &j * &jt + nalgebra::Matrix6::identity() * lambda2;
            let step = jt * a.lu().solve(&err).ok_or(Error::Singular("IK normal equations"))?;
            let scale = (0.3 / step.amax()).min(1.0);
            q += step * scale;
        }
        let err = frame.pose_error(&goal, &self.kinematics(&q).eef);
        if err.norm() < 1e-6 {
            Ok(q)
        } else {
            Err(invalid("target", format!("inverse kinematics did not converge (residual {:.3e})", err.norm())))
        }
    }

    /// Cartesian torque law; see [`cartesian_torque`].
    #[allow(clippy::too_many_arguments)]
    pub fn cartesian_torque(
        &self,
        state: &ArmState,
        frame: &TaskFrame,
        g_m: &Pose6,
        stiffness: &Vector6<f64>,
        damping: &Vector6<f64>,
        tau: f64,
    ) -> Result<TorqueCommand> {
        self.check_q(&state.q)?;
        let terms = self.dynamic_terms(state);
        cartesian_torque(self, &terms, state, frame, g_m, stiffness, damping, tau)
    }

    pub fn dynamic_terms(&self, state: &ArmState) -> DynamicTerms {
        let kin = self.kinematics(&state.q);
        let jacobian = Self::jacobian_from(&kin);
        let jdot_qdot = Self::jacobian_dot_from(&kin, &state.qdot) * &state.qdot;
        let mass = self.mass_matrix_from(&kin);
        let bias = self.bias_forces_from(&kin, &state.qdot);
        DynamicTerms {
            kin,
            jacobian,
            jdot_qdot: Vector6::from_iterator(jdot_qdot.iter().copied()),
            mass,
            bias,
        }
    }
}

/// Everything the controller and integrator need at one configuration.
#[derive(Debug, Clone)]
pub struct DynamicTerms {
    pub kin: Kinematics,
    pub jacobian: Matrix6xX<f64>,
    pub jdot_qdot: Vector6<f64>,
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DynamicTerms {
    pub fn eef_twist(&self, qdot: &DVector<f64>) -> Vector6<f64> {
        &self.jacobian * qdot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorqueCommand {
    pub torque: DVector<f64>,
    /// Commanded end-effector acceleration `τ⁻¹(K(g_m − y) − Dẏ)`.
    pub accel: Vector6<f64>,
    pub min_singular_value: f64,
    /// The damped pseudo-inverse was used.
    pub damped: bool,
    /// At least one joint torque was clamped to its limit.
    pub saturated: bool,
}

/// Pseudo-inverse of a 6×n Jacobian, damped when its smallest singular
/// value drops below [`PINV_SIGMA_MIN`].
pub fn pseudo_inverse(j: &Matrix6xX<f64>) -> Result<(DMatrix<f64>, f64, bool)> {
    let dj = DMatrix::from_iterator(6, j.ncols(), j.iter().copied());
    let svd = dj.svd(true, true);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let damped = !(sigma_min >= PINV_SIGMA_MIN);
    let u = svd.u.ok_or(Error::Singular("jacobian svd"))?;
    let vt = svd.v_t.ok_or(Error::Singular("jacobian svd"))?;
    let inv = svd.singular_values.map(|s| {
        if damped {
            s / (s * s + PINV_DAMPING * PINV_DAMPING)
        } else {
            1.0 / s
        }
    });
    let pinv = vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose();
    Ok((pinv, sigma_min, damped))
}

/// `u = H J⁺ τ⁻¹(K(g_m − y) − Dẏ) + h − H J⁺ J̇q̇`, clamped to the joint
/// torque limits.
#[allow(clippy::too_many_arguments)]
pub fn cartesian_torque(
    model: &ArmModel,
    terms: &DynamicTerms,
    state: &ArmState,
    frame: &TaskFrame,
    g_m: &Pose6,
    stiffness: &Vector6<f64>,
    damping: &Vector6<f64>,
    tau: f64,
) -> Result<TorqueCommand> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    if !g_m.is_finite() {
        return Err(Error::NonFinite("modified goal"));
    }
    let err = frame.pose_error(g_m, &terms.kin.eef);
    let ydot = terms.eef_twist(&state.qdot);
    let accel = (stiffness.component_mul(&err) - damping.component_mul(&ydot)) / tau;
    let (pinv, sigma_min, damped) = pseudo_inverse(&terms.jacobian)?;
    let a = DVector::from_iterator(6, (accel - terms.jdot_qdot).iter().copied());
    let mut torque = &terms.mass * (pinv * a) + &terms.bias;
    let mut saturated = false;
    for (t, lim) in torque.iter_mut().zip(model.joints.iter().map(|j| j.torque_limit)) {
        if t.abs() > lim {
            *t = t.clamp(-lim, lim);
            saturated = true;
        }
    }
    ensure_finite("torque", torque.iter().copied())?;
    Ok(TorqueCommand {
        torque,
        accel,
        min_singular_value: sigma_min,
        damped,
        saturated,
    })
}
