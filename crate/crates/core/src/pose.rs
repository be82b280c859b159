//! Six-dimensional pose, twist and wrench types shared by every module.
//!
//! A [`Pose6`] stacks a translation (m) and an orientation expressed as a
//! rotation vector (rad) relative to a reference rotation held by a
//! [`TaskFrame`]. Keeping the reference explicit keeps the rotation vector
//! small for the motions in the insertion task.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// End-effector pose: `[x, y, z, θx, θy, θz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose6(pub Vector6<f64>);

impl Pose6 {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self(Vector6::new(
            translation.x,
            translation.y,
            translation.z,
            rotation.x,
            rotation.y,
            rotation.z,
        ))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vector6<f64>> for Pose6 {
    fn from(v: Vector6<f64>) -> Self {
        Self(v)
    }
}

/// Forces (N) and moments (N·m) acting on the end effector, both expressed
/// in the world frame with the moment taken about the end-effector origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(force: Vector3<f64>, moment: Vector3<f64>) -> Self {
        Self { force, moment }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: v.fixed_rows::<3>(0).into_owned(),
            moment: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.moment.x,
            self.moment.y,
            self.moment.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.moment.iter()).all(|v| v.is_finite())
    }

    /// Re-expresses the moment about another reference point.
    pub fn shifted_to(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> Self {
        Self {
            force: self.force,
            moment: self.moment + (from - to).cross(&self.force),
        }
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.moment + rhs.moment)
    }
}

impl std::ops::Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.force, -self.moment)
    }
}

/// Reference rotation against which orientation coordinates are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskFrame {
    pub reference: UnitQuaternion<f64>,
}

impl Default for TaskFrame {
    fn default() -> Self {
        Self {
            reference: UnitQuaternion::identity(),
        }
    }
}

impl TaskFrame {
    pub fn new(reference: UnitQuaternion<f64>) -> Self {
        Self { reference }
    }

    /// World rotation encoded by an orientation coordinate.
    pub fn rotation_of(&self, theta: &Vector3<f64>) -> UnitQuaternion<f64> {
        UnitQuaternion::from_scaled_axis(*theta) * self.reference
    }

    /// Orientation coordinate of a world rotation.
    pub fn coordinate_of(&self, rotation: &UnitQuaternion<f64>) -> Vector3<f64> {
        (rotation * self.reference.inverse()).scaled_axis()
    }

    pub fn to_pose(&self, iso: &Isometry3<f64>) -> Pose6 {
        Pose6::new(iso.translation.vector, self.coordinate_of(&iso.rotation))
    }

    pub fn to_isometry(&self, pose: &Pose6) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(pose.translation()),
            self.rotation_of(&pose.rotation()),
        )
    }

    /// Pose error `target ⊖ current`: translation difference and the
    /// rotation vector taking `current` onto `target` in the world frame.
    pub fn pose_error(&self, target: &Pose6, current: &Isometry3<f64>) -> Vector6<f64> {
        let dp = target.translation() - current.translation.vector;
        let r_target = self.rotation_of(&target.rotation());
        let dr = (r_target * current.rotation.inverse()).scaled_axis();
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }
}

/// Stacks two 3-vectors into a 6-vector.
pub fn stack(top: &Vector3<f64>, bottom: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}
