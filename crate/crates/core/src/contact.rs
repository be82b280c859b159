//! Penalty contact between a grasped peg and a board with a clearance hole.
//!
//! The board is a slab lying on the table. Its frame has the origin at the
//! hole centre on the top face, `z` pointing up, and the hole running from
//! `z = 0` down to the table at `z = −depth`. The peg frame has its origin
//! at the tip (centre of the bottom face) with `z` pointing along the peg
//! towards the gripper.
//!
//! Contacts are found two ways: peg surface samples tested against the
//! board's signed distance, and samples on the hole's top edge tested
//! against the peg's signed distance. The second set catches the hole
//! edge pressing into a flat peg face, which peg samples alone would miss.

use nalgebra::{Isometry3, Matrix3, Matrix3x6, Matrix6, Point3, Translation3, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pose::Wrench;

/// Default per-point penalty stiffness, N/m.
pub const DEFAULT_STIFFNESS: f64 = 5e4;
/// Slip speed below which friction is viscous, m/s.
pub const FRICTION_REGULARISATION: f64 = 1e-3;
/// Penetration, as a fraction of the peg size, beyond which a state is
/// rejected as non-physical.
pub const INVALID_PENETRATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSection {
    Circle,
    Square,
    Triangle,
}

impl CrossSection {
    pub const ALL: [CrossSection; 3] = [CrossSection::Circle, CrossSection::Square, CrossSection::Triangle];

    /// Hole-to-peg size ratio.
    pub fn clearance(self) -> f64 {
        match self {
            CrossSection::Circle => 1.03,
            CrossSection::Square | CrossSection::Triangle => 1.08,
        }
    }

    pub fn index(self) -> usize {
        match self {
            CrossSection::Circle => 0,
            CrossSection::Square => 1,
            CrossSection::Triangle => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CrossSection::Circle => "circle",
            CrossSection::Square => "square",
            CrossSection::Triangle => "triangle",
        }
    }
}

impl std::str::FromStr for CrossSection {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "circle" | "cylinder" => Ok(CrossSection::Circle),
            "square" | "cube" | "cuboid" => Ok(CrossSection::Square),
            "triangle" => Ok(CrossSection::Triangle),
            other => Err(invalid("shape", format!("unknown cross-section `{other}`"))),
        }
    }
}

/// A planar convex shape: a circle of given diameter, a square of given
/// side, or an equilateral triangle of given side centred on its centroid
/// with one vertex on `+x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    shape: CrossSection,
    size: f64,
    /// Counter-clockwise vertices (empty for circles).
    vertices: Vec<Vector2<f64>>,
    /// Outward unit edge normals and offsets, `n·p ≤ o` inside.
    edges: Vec<(Vector2<f64>, f64)>,
}

impl Profile {
    pub fn new(shape: CrossSection, size: f64) -> Self {
        let vertices = match shape {
            CrossSection::Circle => Vec::new(),
            CrossSection::Square => {
                let h = 0.5 * size;
                vec![
                    Vector2::new(h, -h),
                    Vector2::new(h, h),
                    Vector2::new(-h, h),
                    Vector2::new(-h, -h),
                ]
            }
            CrossSection::Triangle => {
                let r = size / 3f64.sqrt();
                (0..3)
                    .map(|k| {
                        let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                        Vector2::new(r * a.cos(), r * a.sin())
                    })
                    .collect()
            }
        };
        let edges = (0..vertices.len())
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % vertices.len()];
                let d = b - a;
                let n = Vector2::new(d.y, -d.x).normalize();
                (n, n.dot(&a))
            })
            .collect();
        Self {
            shape,
            size,
            vertices,
            edges,
        }
    }

    pub fn shape(&self) -> CrossSection {
        self.shape
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    /// Signed distance to the boundary (negative inside) and its gradient.
    pub fn signed_distance(&self, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
        if self.shape == CrossSection::Circle {
            let r = p.norm();
            let n = if r > 1e-15 { p / r } else { Vector2::x() };
            return (r - 0.5 * self.size, n);
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_n = Vector2::x();
        for (n, o) in &self.edges {
            let d = n.dot(p) - o;
            if d > best {
                best = d;
                best_n = *n;
            }
        }
        if best <= 0.0 {
            return (best, best_n);
        }
        // outside: distance to the closest boundary point
        let mut dist2 = f64::INFINITY;
        let mut closest = Vector2::zeros();
        for i in 0..self.vertices.len() {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % self.vertices.len()];
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let c = a + ab * t;
            let d2 = (p - c).norm_squared();
            if d2 < dist2 {
                dist2 = d2;
                closest = c;
            }
        }
        let dist = dist2.sqrt();
        let n = if dist > 1e-15 { (p - closest) / dist } else { best_n };
        (dist, n)
    }

    /// `count` points spread along the boundary; polygons always include
    /// their vertices.
    pub fn perimeter_samples(&self, count: usize) -> Vec<Vector2<f64>> {
        if self.shape == CrossSection::Circle {
            let r = 0.5 * self.size;
            return (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    Vector2::new(r * a.cos(), r * a.sin())
                })
                .collect();
        }
        let nv = self.vertices.len();
        let per_edge = (count / nv).max(1);
        let mut out = Vec::with_capacity(per_edge * nv);
        for i in 0..nv {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % nv];
            for k in 0..per_edge {
                out.push(a + (b - a) * (k as f64 / per_edge as f64));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PegSpec {
    pub cross_section: CrossSection,
    /// Diameter or edge length.
    pub size_m: f64,
    pub length_m: f64,
    pub mass_kg: f64,
}

impl PegSpec {
    pub fn new(cross_section: CrossSection, size_m: f64) -> Result<Self> {
        let peg = Self {
            cross_section,
            size_m,
            length_m: 0.12,
            mass_kg: 0.25,
        };
        peg.validate()?;
        Ok(peg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size_m.is_finite() && self.size_m > 0.0) {
            return Err(invalid("size_m", "peg size must be positive"));
        }
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(invalid("length_m", "peg length must be positive"));
        }
        if !(self.mass_kg.is_finite() && self.mass_kg > 0.0) {
            return Err(invalid("mass_kg", "peg mass must be positive"));
        }
        Ok(())
    }

    pub fn profile(&self) -> Profile {
        Profile::new(self.cross_section, self.size_m)
    }

    /// Solid-body inertia about the peg's centroid, in the peg frame.
    pub fn inertia(&self) -> Matrix3<f64> {
        let m = self.mass_kg;
        let s = self.size_m;
        let l = self.length_m;
        let lateral = match self.cross_section {
            CrossSection::Circle => m * s * s / 16.0,
            CrossSection::Square => m * s * s / 12.0,
            CrossSection::Triangle => m * s * s / 24.0,
        };
        let transverse = lateral + m * l * l / 12.0;
        Matrix3::from_diagonal(&Vector3::new(transverse, transverse, 2.0 * lateral))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    /// Hole centre on the top face, world frame.
    pub position_m: Vector3<f64>,
    pub yaw_rad: f64,
    pub cross_section: CrossSection,
    /// Peg size the hole is cut for; the hole is `clearance · size`.
    pub peg_size_m: f64,
    pub depth_m: f64,
    pub friction: f64,
}

impl BoardSpec {
    pub const DEFAULT_DEPTH: f64 = 0.08;

    pub fn new(position_m: Vector3<f64>, yaw_rad: f64, peg: &PegSpec, friction: f64) -> Result<Self> {
        let b = Self {
            position_m,
            yaw_rad,
            cross_section: peg.cross_section,
            peg_size_m: peg.size_m,
            depth_m: Self::DEFAULT_DEPTH,
            friction,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position_m.iter().all(|v| v.is_finite()) || !self.yaw_rad.is_finite() {
            return Err(invalid("position_m", "board pose must be finite"));
        }
        if !(self.peg_size_m > 0.0) {
            return Err(invalid("peg_size_m", "must be positive"));
        }
        if !(self.depth_m > 0.0) {
            return Err(invalid("depth_m", "hole depth must be positive"));
        }
        if !(0.2..=0.9).contains(&self.friction) {
            return Err(invalid("friction", format!("{} outside [0.2, 0.9]", self.friction)));
        }
        Ok(())
    }

    pub fn hole_size(&self) -> f64 {
        self.cross_section.clearance() * self.peg_size_m
    }

    pub fn hole_profile(&self) -> Profile {
        Profile::new(self.cross_section, self.hole_size())
    }

    pub fn frame(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.position_m),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw_rad),
        )
    }
}

/// Board geometry with its frame and hole profile precomputed.
#[derive(Debug, Clone)]
pub struct BoardGeometry {
    pub spec: BoardSpec,
    frame: Isometry3<f64>,
    hole: Profile,
    rim: Vec<Vector3<f64>>,
}

impl BoardGeometry {
    pub fn new(spec: BoardSpec) -> Self {
        let hole = spec.hole_profile();
        let frame = spec.frame();
        let rim = hole
            .perimeter_samples(64)
            .into_iter()
            .map(|p| frame * Point3::new(p.x, p.y, 0.0))
            .map(|p| p.coords)
            .collect();
        Self { spec, frame, hole, rim }
    }

    pub fn frame(&self) -> &Isometry3<f64> {
        &self.frame
    }

    /// Signed distance in the board frame; see [`signed_distance`].
    pub fn signed_distance_local(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let d = self.spec.depth_m;
        let (sd2, g2) = self.hole.signed_distance(&Vector2::new(p.x, p.y));
        let lateral = Vector3::new(g2.x, g2.y, 0.0);
        let z = p.z;
        let in_hole_column = sd2 < 0.0;
        if z > 0.0 {
            if !in_hole_column {
                return (z, Vector3::z());
            }
            let rim = (z * z + sd2 * sd2).sqrt();
            let bottom = z + d;
            if rim <= bottom {
                return (rim, (Vector3::z() * z + lateral * sd2) / rim.max(1e-300));
            }
            return (bottom, Vector3::z());
        }
        if in_hole_column && z > -d {
            // free space inside the hole
            let wall = -sd2;
            let bottom = z + d;
            if wall <= bottom {
                return (wall, -lateral);
            }
            return (bottom, Vector3::z());
        }
        // inside the solid
        let to_top = -z;
        let below = (-d - z).max(0.0);
        let side = sd2.max(0.0);
        let to_hole = (side * side + below * below).sqrt();
        if to_top <= to_hole {
            return (-to_top, Vector3::z());
        }
        let n = if to_hole > 1e-300 {
            (-lateral * side + Vector3::z() * below) / to_hole
        } else {
            -lateral
        };
        (-to_hole, n)
    }

    /// World-frame signed distance and outward normal.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let local = self.frame.inverse_transform_point(&Point3::from(*p));
        let (d, n) = self.signed_distance_local(&local.coords);
        (d, self.frame.rotation * n)
    }
}

/// Free-function form of [`BoardGeometry::signed_distance`]: negative
/// inside the board material, with the outward normal.
pub fn signed_distance(board: &BoardSpec, point: &Vector3<f64>) -> (f64, Vector3<f64>) {
    BoardGeometry::new(*board).signed_distance(point)
}

/// Peg geometry with surface samples in the peg frame.
#[derive(Debug, Clone)]
pub struct PegGeometry {
    pub spec: PegSpec,
    profile: Profile,
    /// Bottom rim samples.
    rim: Vec<Vector3<f64>>,
    /// Lateral ring samples.
    lateral: Vec<Vector3<f64>>,
    /// Largest distance of any sample from the peg axis.
    radius: f64,
}

impl PegGeometry {
    pub const RIM_SAMPLES: usize = 32;
    pub const LATERAL_RINGS: usize = 4;

    pub fn new(spec: PegSpec) -> Self {
        let profile = spec.profile();
        let ring = profile.perimeter_samples(Self::RIM_SAMPLES);
        let rim: Vec<_> = ring.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect();
        let span = spec.length_m.min(BoardSpec::DEFAULT_DEPTH);
        let lateral = (1..=Self::LATERAL_RINGS)
            .flat_map(|k| {
                let z = span * k as f64 / Self::LATERAL_RINGS as f64;
                ring.iter().map(move |p| Vector3::new(p.x, p.y, z))
            })
            .collect();
        let radius = ring.iter().map(|p| p.norm()).fold(0.0, f64::max);
        Self {
            spec,
            profile,
            rim,
            lateral,
            radius,
        }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn samples(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.rim.iter().chain(&self.lateral)
    }

    /// Signed distance to the peg solid in the peg frame, with the outward
    /// normal.
    pub fn signed_distance_local(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let (sd2, g2) = self.profile.signed_distance(&Vector2::new(p.x, p.y));
        let lateral = Vector3::new(g2.x, g2.y, 0.0);
        let below = -p.z;
        let above = p.z - self.spec.length_m;
        if sd2 <= 0.0 && below <= 0.0 && above <= 0.0 {
            if sd2 >= below && sd2 >= above {
                return (sd2, lateral);
            }
            if below >= above {
                return (below, -Vector3::z());
            }
            return (above, Vector3::z());
        }
        let a = sd2.max(0.0);
        let b = below.max(0.0);
        let c = above.max(0.0);
        let d = (a * a + b * b + c * c).sqrt();
        (d, (lateral * a - Vector3::z() * b + Vector3::z() * c) / d.max(1e-300))
    }
}

/// Contact material parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub stiffness_n_per_m: f64,
    /// Effective mass per contact point used to set critical damping.
    pub effective_mass_kg: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness_n_per_m: DEFAULT_STIFFNESS,
            effective_mass_kg: 0.5,
        }
    }
}

impl ContactParams {
    pub fn damping(&self) -> f64 {
        2.0 * (self.stiffness_n_per_m * self.effective_mass_kg).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub position: Vector3<f64>,
    /// Unit normal pointing from the board into the peg.
    pub normal: Vector3<f64>,
    pub penetration: f64,
    /// Force on the peg: `normal_force·normal + tangential`.
    pub normal_force: f64,
    pub tangential: Vector3<f64>,
}

impl ContactPoint {
    pub fn force(&self) -> Vector3<f64> {
        self.normal * self.normal_force + self.tangential
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactReport {
    /// Wrench on the peg about the end-effector origin, world frame.
    pub wrench: Wrench,
    /// Wrench on the board about the board origin, world frame.
    pub board_wrench: Wrench,
    pub max_penetration: f64,
    /// Peg tip in the board frame.
    pub tip_in_board: Vector3<f64>,
    pub in_hole: bool,
    pub contacts: Vec<ContactPoint>,
    /// `−∂w/∂x` of the wrench with respect to an end-effector displacement
    /// `(δp, δθ)`, from the normal springs.
    pub stiffness: Matrix6<f64>,
    /// `−∂w/∂ẋ` from normal damping and viscous friction.
    pub damping: Matrix6<f64>,
    /// Penetration beyond the physical-validity limit.
    pub invalid: bool,
}

impl ContactReport {
    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }
}

/// Rigid peg held at a fixed transform from the end effector.
#[derive(Debug, Clone)]
pub struct ContactModel {
    pub board: BoardGeometry,
    pub peg: PegGeometry,
    pub params: ContactParams,
}

fn lever(r: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut g = Matrix3x6::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r.cross_matrix()));
    g
}

impl ContactModel {
    pub fn new(board: BoardSpec, peg: PegSpec, params: ContactParams) -> Result<Self> {
        board.validate()?;
        peg.validate()?;
        if !(params.stiffness_n_per_m > 0.0 && params.effective_mass_kg > 0.0) {
            return Err(invalid("stiffness_n_per_m", "contact parameters must be positive"));
        }
        Ok(Self {
            board: BoardGeometry::new(board),
            peg: PegGeometry::new(peg),
            params,
        })
    }

    /// Peg-tip depth below the board's top face.
    pub fn insertion_progress(&self, peg_pose: &Isometry3<f64>) -> f64 {
        let tip = self.board.frame().inverse_transform_point(&Point3::from(peg_pose.translation.vector));
        -tip.z
    }

    /// Contact forces for a peg at `peg_pose` on an end effector at
    /// `eef_origin` moving with twist `(v, ω)`.
    pub fn evaluate(
        &self,
        peg_pose: &Isometry3<f64>,
        eef_origin: &Vector3<f64>,
        eef_twist: &Vector6<f64>,
    ) -> ContactReport {
        let v = eef_twist.fixed_rows::<3>(0).into_owned();
        let w = eef_twist.fixed_rows::<3>(3).into_owned();
        let mu = self.board.spec.friction;
        let kp = self.params.stiffness_n_per_m;
        let kd = self.params.damping();
        let mut contacts = Vec::new();
        let mut wrench = Wrench::zero();
        let mut board_wrench = Wrench::zero();
        let mut stiffness = Matrix6::zeros();
        let mut damping = Matrix6::zeros();
        let mut max_pen: f64 = 0.0;
        let board_origin = self.board.spec.position_m;

        let tip_in_board = self
            .board
            .frame()
            .inverse_transform_point(&Point3::from(peg_pose.translation.vector))
            .coords;

        let mut add = |pos: Vector3<f64>, normal: Vector3<f64>, pen: f64| {
            let r = pos - eef_origin;
            let vel = v + w.cross(&r);
            let rate = -normal.dot(&vel);
            let fn_ = (kp * pen + kd * rate).max(0.0);
            let vt = vel - normal * normal.dot(&vel);
            let slip = vt.norm();
            let visc = mu * fn_ / slip.max(FRICTION_REGULARISATION);
            let ft = -vt * visc;
            let point = ContactPoint {
                position: pos,
                normal,
                penetration: pen,
                normal_force: fn_,
                tangential: ft,
            };
            let f = point.force();
            wrench.force += f;
            wrench.moment += r.cross(&f);
            board_wrench.force -= f;
            board_wrench.moment -= (pos - board_origin).cross(&f);
            let g = lever(&r);
            let nn = normal * normal.transpose();
            stiffness += g.transpose() * (nn * kp) * g;
            if fn_ > 0.0 {
                let tangent = Matrix3::identity() - nn;
                let c = nn * kd + tangent * visc;
                damping += g.transpose() * c * g;
            }
            max_pen = max_pen.max(pen);
            contacts.push(point);
        };

        let bound = (self.peg.radius.powi(2) + self.peg.spec.length_m.powi(2)).sqrt();
        let near = tip_in_board.z - bound < 1e-3;

        if near {
            for s in self.peg.samples() {
                let p = (peg_pose * Point3::from(*s)).coords;
                let (d, n) = self.board.signed_distance(&p);
                if d < 0.0 {
                    add(p, n, -d);
                }
            }
            let inv = peg_pose.inverse();
            for rim in &self.board.rim {
                let local = inv * Point3::from(*rim);
                if local.z < -1e-3 || local.z > self.peg.spec.length_m + 1e-3 {
                    continue;
                }
                let (d, n) = self.peg.signed_distance_local(&local.coords);
                if d < 0.0 {
                    // force on the peg pushes it away from the rim point
                    add(*rim, -(peg_pose.rotation * n), -d);
                }
            }
        }

        let in_hole = tip_in_board.z < 0.0
            && self.board.hole.signed_distance(&Vector2::new(tip_in_board.x, tip_in_board.y)).0 < 0.0;
        let invalid = max_pen > INVALID_PENETRATION_FRACTION * self.peg.spec.size_m;
        ContactReport {
            wrench,
            board_wrench,
            max_penetration: max_pen,
            tip_in_board,
            in_hole,
            contacts,
            stiffness,
            damping,
            invalid,
        }
    }
}

/// One-shot form of [`ContactModel::evaluate`] for a peg whose tip is at
/// the end-effector origin.
pub fn contact_wrench(
    board: &BoardSpec,
    peg: &PegSpec,
    peg_pose: &Isometry3<f64>,
    peg_twist: &Vector6<f64>,
    params: ContactParams,
) -> Result<ContactReport> {
    let model = ContactModel::new(*board, *peg, params)?;
    Ok(model.evaluate(peg_pose, &peg_pose.translation.vector, peg_twist))
}

/// Depth of the peg tip below the board's top face.
pub fn insertion_progress(board: &BoardSpec, peg_pose: &Isometry3<f64>) -> f64 {
    let tip = board.frame().inverse_transform_point(&Point3::from(peg_pose.translation.vector));
    -tip.z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(shape: CrossSection) -> BoardSpec {
        let peg = PegSpec::new(shape, 0.05).unwrap();
        BoardSpec::new(Vector3::new(0.4, 0.0, 0.08), 0.3, &peg, 0.5).unwrap()
    }

    #[test]
    fn far_above_is_free_space() {
        let b = board(CrossSection::Circle);
        let (d, n) = signed_distance(&b, &Vector3::new(0.9, 0.3, 1.08));
        assert!((d - 1.0).abs() < 1e-12);
        assert!((n - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn inside_material_is_negative() {
        let b = board(CrossSection::Square);
        let far = b.frame() * Point3::new(0.3, 0.0, -0.03);
        let (d, n) = signed_distance(&b, &far.coords);
        assert!((d + 0.03).abs() < 1e-12);
        assert!((n - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn polygon_distance_inside_and_out() {
        let sq = Profile::new(CrossSection::Square, 2.0);
        let (d, n) = sq.signed_distance(&Vector2::new(0.5, 0.2));
        assert!((d + 0.5).abs() < 1e-12 && (n - Vector2::x()).norm() < 1e-12);
        let (d, _) = sq.signed_distance(&Vector2::new(2.0, 2.0));
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
        let tri = Profile::new(CrossSection::Triangle, 3f64.sqrt());
        // inradius of an equilateral triangle of side a is a/(2√3)
        let (d, _) = tri.signed_distance(&Vector2::zeros());
        assert!((d + 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_friction() {
        let peg = PegSpec::new(CrossSection::Circle, 0.05).unwrap();
        assert!(BoardSpec::new(Vector3::zeros(), 0.0, &peg, 0.95).is_err());
        assert!(PegSpec::new(CrossSection::Circle, -1.0).is_err());
    }

    #[test]
    fn cross_section_parses() {
        assert_eq!("Cylinder".parse::<CrossSection>().unwrap(), CrossSection::Circle);
        assert!("hexagon".parse::<CrossSection>().is_err());
    }
}
