//! Arm-plus-peg physics: joint-space dynamics driven by commanded torques
//! and penalty contact forces.
//!
//! Contact springs are stiff relative to the arm's apparent inertia, so the
//! contact wrench is linearised about the current state and integrated
//! implicitly:
//!
//! `(H + h Jᵀ(hK + D)J) q̇' = H q̇ + h(u − b + Jᵀw₀) + h JᵀDJ q̇`,
//! `q' = q + h q̇'`.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix6};

use crate::contact::{ContactModel, ContactReport};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::manipulator::{ArmModel, ArmState, DynamicTerms};

#[derive(Debug, Clone)]
pub struct Simulator {
    pub arm: ArmModel,
    pub contact: ContactModel,
    /// End effector to peg frame.
    pub grasp: Isometry3<f64>,
    pub state: ArmState,
    pub time: f64,
}

impl Simulator {
    pub fn new(arm: ArmModel, contact: ContactModel, grasp: Isometry3<f64>, state: ArmState) -> Result<Self> {
        if state.q.len() != arm.dof() || state.qdot.len() != arm.dof() {
            return Err(invalid("state", "joint count does not match the arm"));
        }
        Ok(Self {
            arm,
            contact,
            grasp,
            state,
            time: 0.0,
        })
    }

    pub fn terms(&self) -> DynamicTerms {
        self.arm.dynamic_terms(&self.state)
    }

    pub fn peg_pose(&self, terms: &DynamicTerms) -> Isometry3<f64> {
        terms.kin.eef * self.grasp
    }

    /// Contact forces at the current state.
    pub fn sense(&self, terms: &DynamicTerms) -> ContactReport {
        let eef = &terms.kin.eef;
        let twist = terms.eef_twist(&self.state.qdot);
        self.contact
            .evaluate(&self.peg_pose(terms), &eef.translation.vector, &twist)
    }

    /// Advances by `dt` under torque `u`, using terms and contacts already
    /// evaluated at the current state.
    pub fn advance(
        &mut self,
        terms: &DynamicTerms,
        report: &ContactReport,
        u: &DVector<f64>,
        dt: f64,
    ) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        ensure_finite("torque", u.iter().copied())?;
        let n = self.arm.dof();
        let j = DMatrix::from_iterator(6, n, terms.jacobian.iter().copied());
        let jt = j.transpose();
        let k: Matrix6<f64> = report.stiffness;
        let d: Matrix6<f64> = report.damping;
        let kd = DMatrix::from_iterator(6, 6, (k * dt + d).iter().copied());
        let dd = DMatrix::from_iterator(6, 6, d.iter().copied());
        let w0 = DVector::from_iterator(6, report.wrench.to_vector().iter().copied());

        let a = &terms.mass + (&jt * kd * &j) * dt;
        let jdj_qdot = &jt * (dd * (&j * &self.state.qdot));
        let rhs = &terms.mass * &self.state.qdot
            + (u - &terms.bias + &jt * w0) * dt
            + jdj_qdot * dt;
        let chol = a.cholesky().ok_or(Error::Singular("implicit step matrix"))?;
        let qdot = chol.solve(&rhs);
        let q = &self.state.q + &qdot * dt;
        if !qdot.iter().chain(q.iter()).all(|v| v.is_finite()) {
            return Err(Error::PhysicsInvalid("joint state became non-finite".into()));
        }
        self.state = ArmState { q, qdot };
        self.time += dt;
        Ok(())
    }

    /// Evaluates everything at the current state and advances.
    pub fn step(&mut self, u: &DVector<f64>, dt: f64) -> Result<ContactReport> {
        let terms = self.terms();
        let report = self.sense(&terms);
        self.advance(&terms, &report, u, dt)?;
        Ok(report)
    }
}
