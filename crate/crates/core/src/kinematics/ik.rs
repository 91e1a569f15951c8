use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Vector3, Vector6};

use super::{JointVector, KinematicChain, KinematicsError};
use crate::retarget::TargetPose;
use crate::rotation::rotation_vector;

/// Lower bound applied to per-joint damping.
pub const MIN_DAMPING: f64 = 0.001;
/// Smoothing factor applied to successive IK solutions.
pub const DEFAULT_JOINT_ALPHA: f64 = 0.5;
/// Targets below this height are rejected.
pub const Z_FLOOR_M: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams {
    pub max_iterations: usize,
    /// Stop once the weighted pose error norm drops below this.
    pub residual_threshold: f64,
    pub position_weight: f64,
    pub orientation_weight: f64,
    /// Per-iteration bound on each joint update, radians.
    pub step_clamp: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            residual_threshold: 1e-4,
            position_weight: 1.0,
            orientation_weight: 0.5,
            step_clamp: 0.2,
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.max_iterations == 0 {
            return Err(KinematicsError::InvalidChain("max_iterations must be >= 1".into()));
        }
        if !(self.residual_threshold > 0.0) {
            return Err(KinematicsError::InvalidChain("residual_threshold must be > 0".into()));
        }
        if !(self.position_weight >= 0.0 && self.orientation_weight >= 0.0 && self.step_clamp > 0.0) {
            return Err(KinematicsError::InvalidChain("weights and step clamp must be positive".into()));
        }
        Ok(())
    }

    fn row_weights(&self) -> [f64; 6] {
        let (p, o) = (self.position_weight, self.orientation_weight);
        [p, p, p, o, o, o]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkReport {
    /// Number of update steps taken.
    pub iterations: usize,
    /// Weighted error norm at the returned configuration.
    pub final_residual: f64,
    pub converged: bool,
    pub position_error: f64,
    pub orientation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub joints: JointVector,
    pub report: IkReport,
}

/// 6-vector pose error `[p_target − p; rotvec(R_target · Rᵀ)]`.
pub fn pose_error(target_pos: &Vector3<f64>, target_rot: &Matrix3<f64>, current: &Isometry3<f64>) -> Vector6<f64> {
    let dp = target_pos - current.translation.vector;
    let r = current.rotation.to_rotation_matrix();
    let dr = rotation_vector(&(target_rot * r.matrix().transpose()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

fn weighted_norm(e: &Vector6<f64>, w: &[f64; 6]) -> f64 {
    e.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

/// Damped least-squares IK biased towards `rest`.
///
/// Each step solves `(JᵀWJ + Λ²) Δq = JᵀW e − Λ² (q − rest)` with
/// `Λ = diag(max(λ_i, 0.001))`, clamps `Δq` element-wise to the step bound
/// and projects `q` back into the joint limits. Iteration starts at `rest`.
/// Non-convergence is reported, never raised.
pub fn solve_ik(
    chain: &KinematicChain,
    target: &TargetPose,
    rest: &[f64],
    params: &IkParams,
) -> Result<IkSolution, KinematicsError> {
    let n = chain.dof();
    if rest.len() != n {
        return Err(KinematicsError::LengthMismatch {
            expected: n,
            found: rest.len(),
        });
    }
    let target_pos = target.position.coords;
    let target_rot = target.rotation();
    let w = params.row_weights();
    let damping2: Vec<f64> = chain
        .joints()
        .iter()
        .map(|j| j.effective_damping().powi(2))
        .collect();

    let mut rest_clamped = rest.to_vec();
    chain.clamp(&mut rest_clamped);
    let mut q = rest_clamped.clone();

    let mut iterations = 0;
    let mut pose = chain.forward_kinematics(&q)?;
    let mut e = pose_error(&target_pos, &target_rot, &pose);
    let mut residual = weighted_norm(&e, &w);
    while residual >= params.residual_threshold && iterations < params.max_iterations {
        let dq = damped_step(chain, &q, &rest_clamped, &e, &w, &damping2, params.step_clamp)?;
        for (qi, d) in q.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        chain.clamp(&mut q);
        iterations += 1;
        pose = chain.forward_kinematics(&q)?;
        e = pose_error(&target_pos, &target_rot, &pose);
        residual = weighted_norm(&e, &w);
    }

    Ok(IkSolution {
        joints: JointVector(q),
        report: IkReport {
            iterations,
            final_residual: residual,
            converged: residual < params.residual_threshold,
            position_error: e.fixed_rows::<3>(0).norm(),
            orientation_error: e.fixed_rows::<3>(3).norm(),
        },
    })
}

fn damped_step(
    chain: &KinematicChain,
    q: &[f64],
    rest: &[f64],
    e: &Vector6<f64>,
    w: &[f64; 6],
    damping2: &[f64],
    step_clamp: f64,
) -> Result<DVector<f64>, KinematicsError> {
    let n = q.len();
    let jac = chain.jacobian(q)?;
    let mut wj = jac.clone();
    for (r, wr) in w.iter().enumerate() {
        wj.row_mut(r).scale_mut(*wr);
    }
    let jt = jac.transpose();
    let mut a: DMatrix<f64> = &jt * &wj;
    let mut b: DVector<f64> = jt * DVector::from_iterator(6, e.iter().zip(w).map(|(v, w)| v * w));
    for i in 0..n {
        a[(i, i)] += damping2[i];
        b[i] -= damping2[i] * (q[i] - rest[i]);
    }
    // A is symmetric positive definite thanks to the damping floor.
    let mut dq = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b).unwrap_or_else(|| DVector::zeros(n)),
    };
    dq.apply(|d| *d = d.clamp(-step_clamp, step_clamp));
    Ok(dq)
}

/// Unclamped first update step at `q`.
#[cfg(test)]
fn first_step(
    chain: &KinematicChain,
    target: &TargetPose,
    q: &[f64],
    params: &IkParams,
    damping: &[f64],
) -> Result<DVector<f64>, KinematicsError> {
    let pose = chain.forward_kinematics(q)?;
    let e = pose_error(&target.position.coords, &target.rotation(), &pose);
    let d2: Vec<f64> = damping.iter().map(|d| d.max(MIN_DAMPING).powi(2)).collect();
    damped_step(chain, q, q, &e, &params.row_weights(), &d2, f64::INFINITY)
}

/// `alpha · raw + (1 − alpha) · prev`; passes `raw` through without history.
pub fn ema_smooth_joints(
    prev: Option<&[f64]>,
    raw: &[f64],
    alpha: f64,
) -> Result<JointVector, KinematicsError> {
    let Some(prev) = prev else {
        return Ok(JointVector(raw.to_vec()));
    };
    if prev.len() != raw.len() {
        return Err(KinematicsError::LengthMismatch {
            expected: prev.len(),
            found: raw.len(),
        });
    }
    Ok(JointVector(
        raw.iter()
            .zip(prev)
            .map(|(r, p)| alpha * r + (1.0 - alpha) * p)
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Safety {
    Ok,
    Rejected,
}

/// Rejects targets strictly below `z_floor`.
pub fn safety_check(target: &TargetPose, z_floor: f64) -> Safety {
    if target.position.z() < z_floor {
        Safety::Rejected
    } else {
        Safety::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::retarget::OrientationSource;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn target_from(pose: &Isometry3<f64>) -> TargetPose {
        let p = pose.translation.vector;
        TargetPose {
            position: Point3::robot(p.x, p.y, p.z),
            orientation: pose.rotation,
            orientation_source: OrientationSource::Primary,
        }
    }

    fn at_height(z: f64) -> TargetPose {
        TargetPose {
            position: Point3::robot(0.2, 0.0, z),
            orientation: nalgebra::UnitQuaternion::identity(),
            orientation_source: OrientationSource::Primary,
        }
    }

    #[test]
    fn already_at_target() {
        let c = KinematicChain::so_arm101();
        let rest = [0.2, -0.3, 0.5, 0.1, 0.4];
        let t = target_from(&c.forward_kinematics(&rest).unwrap());
        let s = solve_ik(&c, &t, &rest, &IkParams::default()).unwrap();
        assert!(s.report.converged);
        assert!(s.report.iterations <= 2);
        assert!(s.report.final_residual < 1e-4);
        for (a, b) in s.joints.iter().zip(rest) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn reaches_nearby_targets() {
        let c = KinematicChain::so_arm101();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ok = 0;
        for _ in 0..50 {
            let q: Vec<f64> = c
                .joints()
                .iter()
                .map(|j| rng.gen_range(j.limits.min..=j.limits.max))
                .collect();
            let rest: Vec<f64> = q.iter().map(|a| a + rng.gen_range(-0.1..=0.1)).collect();
            let t = target_from(&c.forward_kinematics(&q).unwrap());
            let s = solve_ik(&c, &t, &rest, &IkParams::default()).unwrap();
            assert!(c.within_limits(&s.joints));
            if s.report.position_error < 1e-3 && s.report.orientation_error < 1e-2 {
                ok += 1;
            }
        }
        assert!(ok >= 47, "{ok}/50");
    }

    #[test]
    fn unreachable_target_is_reported() {
        let c = KinematicChain::so_arm101();
        let mut t = at_height(0.0);
        t.position = Point3::robot(6.0, 8.0, 0.0);
        let s = solve_ik(&c, &t, &c.mid_range(), &IkParams::default()).unwrap();
        assert!(!s.report.converged);
        assert_eq!(s.report.iterations, 100);
        assert!(s.report.final_residual > 1.0);
        assert!(c.within_limits(&s.joints));
    }

    #[test]
    fn rest_length_checked() {
        let c = KinematicChain::so_arm101();
        assert!(matches!(
            solve_ik(&c, &at_height(0.2), &[0.0; 3], &IkParams::default()),
            Err(KinematicsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn larger_damping_never_lengthens_first_step() {
        let c = KinematicChain::so_arm101();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q: Vec<f64> = c.joints().iter().map(|j| rng.gen_range(j.limits.min..=j.limits.max)).collect();
            let goal: Vec<f64> = q.iter().map(|a| a + rng.gen_range(-0.5..=0.5)).collect();
            let t = target_from(&c.forward_kinematics(&goal).unwrap());
            let mut last = f64::INFINITY;
            for lambda in [0.001, 0.01, 0.05, 0.1, 0.5, 1.0] {
                let step = first_step(&c, &t, &q, &IkParams::default(), &[lambda; 5]).unwrap();
                assert!(step.norm() <= last * (1.0 + 1e-9));
                last = step.norm();
            }
        }
    }

    #[test]
    fn joint_ema() {
        let out = ema_smooth_joints(Some(&[0.0; 5]), &[1.0; 5], 0.5).unwrap();
        assert_eq!(&*out, &[0.5; 5]);
        let raw = [0.3, -0.2];
        assert_eq!(&*ema_smooth_joints(Some(&raw), &raw, 0.5).unwrap(), &raw);
        assert_eq!(&*ema_smooth_joints(None, &raw, 0.5).unwrap(), &raw);
        assert!(ema_smooth_joints(Some(&[0.0]), &raw, 0.5).is_err());
    }

    #[test]
    fn z_floor() {
        assert_eq!(safety_check(&at_height(0.04), Z_FLOOR_M), Safety::Rejected);
        assert_eq!(safety_check(&at_height(0.05), Z_FLOOR_M), Safety::Ok);
        assert_eq!(safety_check(&at_height(0.30), Z_FLOOR_M), Safety::Ok);
    }
}
