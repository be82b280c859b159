use cdmp::contact::{
    contact_wrench, insertion_progress, signed_distance, BoardSpec, ContactModel, ContactParams, CrossSection, PegGeometry,
    PegSpec,
};
use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

const S: f64 = 0.05;

fn board(shape: CrossSection, yaw: f64) -> (BoardSpec, PegSpec) {
    let peg = PegSpec::new(shape, S).unwrap();
    let b = BoardSpec::new(Vector3::new(0.45, -0.05, 0.08), yaw, &peg, 0.6).unwrap();
    (b, peg)
}

/// Upright peg (body along world +z) with its tip at `tip`.
fn upright_peg(tip: Vector3<f64>, yaw: f64) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(tip), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
}

/// Inradius of the peg cross-section.
fn inradius(shape: CrossSection, size: f64) -> f64 {
    match shape {
        CrossSection::Circle | CrossSection::Square => 0.5 * size,
        CrossSection::Triangle => size / (2.0 * 3f64.sqrt()),
    }
}

#[test]
fn hole_axis_distance_is_the_hole_inradius() {
    for shape in CrossSection::ALL {
        let (b, _) = board(shape, 0.4);
        let p = b.frame() * Point3::new(0.0, 0.0, -0.03);
        let (d, _) = signed_distance(&b, &p.coords);
        let expected = inradius(shape, shape.clearance() * S);
        assert!((d - expected).abs() < 1e-12, "{shape:?}: {d} vs {expected}");
    }
}

#[test]
fn gap_at_the_nominal_peg_wall_matches_clearance() {
    for shape in CrossSection::ALL {
        let (b, _) = board(shape, 0.0);
        // towards the middle of the first edge (or +x for the circle)
        let dir = match shape {
            CrossSection::Triangle => Vector3::new(0.5, 0.5 * 3f64.sqrt(), 0.0),
            _ => Vector3::x(),
        };
        let wall = dir * inradius(shape, S) + Vector3::new(0.0, 0.0, -0.04);
        let p = b.frame() * Point3::from(wall);
        let (d, n) = signed_distance(&b, &p.coords);
        let gap = inradius(shape, shape.clearance() * S - S);
        assert!((d - gap).abs() < 1e-12, "{shape:?}: {d} vs {gap}");
        assert!((n + dir).norm() < 1e-12);
    }
}

#[test]
fn material_below_the_top_face_reports_depth() {
    let (b, _) = board(CrossSection::Circle, 0.0);
    let p = b.frame() * Point3::new(0.2, 0.0, -0.01);
    let (d, n) = signed_distance(&b, &p.coords);
    assert!((d + 0.01).abs() < 1e-12);
    assert!((n - Vector3::z()).norm() < 1e-12);
    let below_hole = b.frame() * Point3::new(0.0, 0.0, -0.09);
    assert!((signed_distance(&b, &below_hole.coords).0 + 0.01).abs() < 1e-12);
}

#[test]
fn peg_above_board_feels_nothing() {
    let (b, peg) = board(CrossSection::Square, 0.2);
    let pose = upright_peg(b.position_m + Vector3::new(0.0, 0.0, 0.05), 0.2);
    let r = contact_wrench(&b, &peg, &pose, &Vector6::zeros(), ContactParams::default()).unwrap();
    assert!(r.is_empty());
    assert_eq!(r.wrench.to_vector(), Vector6::zeros());
    assert_eq!(r.max_penetration, 0.0);
    assert!(!r.invalid);
}

#[test]
fn axial_press_sums_the_rim_springs_with_no_moment() {
    let params = ContactParams::default();
    for shape in [CrossSection::Circle, CrossSection::Square] {
        let (b, peg) = board(shape, 0.0);
        let pen = 1e-4;
        let tip = b.position_m + Vector3::new(0.2, 0.0, -pen);
        let pose = upright_peg(tip, 0.0);
        let r = contact_wrench(&b, &peg, &pose, &Vector6::zeros(), params).unwrap();
        let n = r.contacts.len();
        assert_eq!(n, PegGeometry::RIM_SAMPLES);
        let expected = n as f64 * params.stiffness_n_per_m * pen;
        assert!((r.wrench.force.z - expected).abs() < 1e-9, "{shape:?}");
        assert!(r.wrench.force.xy().norm() < 1e-9);
        assert!(r.wrench.moment.norm() < 1e-9, "{shape:?}: {}", r.wrench.moment);
    }
}

#[test]
fn penetration_beyond_a_fifth_of_the_size_is_invalid() {
    let (b, peg) = board(CrossSection::Circle, 0.0);
    let pose = upright_peg(b.position_m + Vector3::new(0.2, 0.0, -0.011), 0.0);
    let r = contact_wrench(&b, &peg, &pose, &Vector6::zeros(), ContactParams::default()).unwrap();
    assert!(r.invalid);
}

#[test]
fn insertion_progress_reference_points() {
    let (b, _) = board(CrossSection::Circle, 0.7);
    assert!(insertion_progress(&b, &upright_peg(b.position_m, 0.0)).abs() < 1e-15);
    let bottom = upright_peg(b.position_m - Vector3::new(0.0, 0.0, 0.08), 0.0);
    assert!((insertion_progress(&b, &bottom) - 0.08).abs() < 1e-15);
}

/// Rotates `v` about the world z axis.
fn yawed(v: Vector3<f64>, yaw: f64) -> Vector3<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * v
}

/// Samples a contact-rich pose of a peg near the hole.
fn pose_near_hole(b: &BoardSpec, dx: f64, dy: f64, dz: f64, tx: f64, ty: f64) -> Isometry3<f64> {
    let tilt = UnitQuaternion::from_euler_angles(tx, ty, 0.0);
    let base = upright_peg(b.position_m + yawed(Vector3::new(dx, dy, 0.0), b.yaw_rad) + Vector3::new(0.0, 0.0, dz), b.yaw_rad);
    Isometry3::from_parts(base.translation, tilt * base.rotation)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tilted_tip_depth_is_the_vertical_projection(
        tx in -0.3f64..0.3, ty in -0.3f64..0.3, dz in -0.05f64..0.05, yaw in 0.0f64..1.5,
    ) {
        let (b, _) = board(CrossSection::Square, yaw);
        let pose = pose_near_hole(&b, 0.003, -0.002, dz, tx, ty);
        let tip = pose.translation.vector;
        prop_assert!((insertion_progress(&b, &pose) - (b.position_m.z - tip.z)).abs() < 1e-12);
    }

    #[test]
    fn friction_cone_and_third_law_hold(
        shape_idx in 0usize..3,
        dx in -0.01f64..0.01, dy in -0.01f64..0.01, dz in -0.004f64..0.001,
        tx in -0.15f64..0.15, ty in -0.15f64..0.15,
        v in prop::array::uniform6(-0.2f64..0.2),
    ) {
        let shape = CrossSection::ALL[shape_idx];
        let (b, peg) = board(shape, 0.3);
        let model = ContactModel::new(b, peg, ContactParams::default()).unwrap();
        let pose = pose_near_hole(&b, dx, dy, dz, tx, ty);
        let eef = pose * Point3::new(0.0, 0.0, 0.08);
        let twist = Vector6::from_row_slice(&v);
        let r = model.evaluate(&pose, &eef.coords, &twist);
        for c in &r.contacts {
            prop_assert!(c.normal_force >= 0.0);
            prop_assert!(c.penetration >= 0.0);
            prop_assert!(c.tangential.norm() <= b.friction * c.normal_force + 1e-9);
            prop_assert!(c.tangential.dot(&c.normal).abs() < 1e-9 * (1.0 + c.tangential.norm()));
        }
        // board wrench moved from the board origin to the end effector
        let shifted = r.board_wrench.moment + (b.position_m - eef.coords).cross(&r.board_wrench.force);
        prop_assert!((r.board_wrench.force + r.wrench.force).norm() < 1e-9);
        prop_assert!((shifted + r.wrench.moment).norm() < 1e-9);
        prop_assert!(r.wrench.is_finite());
    }
}

/// A flat-bottomed peg, translating only, dropped onto the board surface.
fn drop_energy(shape: CrossSection, v0: f64) -> (f64, f64, f64) {
    let (b, peg) = board(shape, 0.0);
    let model = ContactModel::new(b, peg, ContactParams::default()).unwrap();
    let m = 0.5;
    let g = 9.81;
    let k = model.params.stiffness_n_per_m;
    let dt = 1e-5;
    let x = b.position_m.x + 0.2;
    let mut z = b.position_m.z + 0.001;
    let mut vz = -v0;
    let energy = |z: f64, vz: f64, pens: f64| 0.5 * m * vz * vz + m * g * (z - b.position_m.z) + 0.5 * k * pens;
    let e0 = energy(z, vz, 0.0);
    let mut max_e = e0;
    let mut touched = false;
    for _ in 0..20_000 {
        let pose = upright_peg(Vector3::new(x, b.position_m.y, z), 0.0);
        let twist = Vector6::new(0.0, 0.0, vz, 0.0, 0.0, 0.0);
        let r = model.evaluate(&pose, &pose.translation.vector, &twist);
        touched |= !r.is_empty();
        let pens: f64 = r.contacts.iter().map(|c| c.penetration * c.penetration).sum();
        max_e = max_e.max(energy(z, vz, pens));
        let fz = r.wrench.force.z - m * g;
        vz += dt * fz / m;
        z += dt * vz;
        if touched && r.is_empty() && vz > 0.0 {
            break;
        }
    }
    assert!(touched);
    (e0, max_e, energy(z, vz, 0.0))
}

#[test]
fn drop_test_dissipates_energy() {
    for shape in [CrossSection::Circle, CrossSection::Square, CrossSection::Triangle] {
        for v0 in [0.05, 0.2, 0.5] {
            let (before, peak, after) = drop_energy(shape, v0);
            assert!(after <= before, "{shape:?} v0={v0}: {after} > {before}");
            assert!(peak <= before * (1.0 + 1e-2) + 1e-9, "{shape:?} v0={v0}: peak {peak} > {before}");
        }
    }
}
