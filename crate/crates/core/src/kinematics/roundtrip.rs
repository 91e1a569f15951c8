//! Seeded IK round trips on FK-generated targets.
//!
//! Each trial draws a configuration uniformly inside the joint limits,
//! perturbs it by at most `rest_noise` per joint to obtain the rest pose,
//! and asks the solver to recover the pose of the original configuration.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{solve_ik, IkParams, KinematicChain, KinematicsError};
use crate::geometry::Point3;
use crate::retarget::{OrientationSource, TargetPose};

/// Position tolerance for a successful round trip, metres.
pub const POSITION_TOL_M: f64 = 1e-3;
/// Orientation tolerance for a successful round trip, radians.
pub const ORIENTATION_TOL_RAD: f64 = 1e-2;
pub const DEFAULT_REST_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub position_error: f64,
    pub orientation_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub within_limits: bool,
    pub elapsed_us: f64,
}

impl Trial {
    pub fn accurate(&self) -> bool {
        self.position_error < POSITION_TOL_M
            && self.orientation_error < ORIENTATION_TOL_RAD
    }
}

pub fn run_trials(
    chain: &KinematicChain,
    params: &IkParams,
    n: usize,
    seed: u64,
    rest_noise: f64,
) -> Result<Vec<Trial>, KinematicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n);
    for _ in 0..n {
        let q: Vec<f64> = chain
            .joints()
            .iter()
            .map(|j| rng.gen_range(j.limits.min..=j.limits.max))
            .collect();
        let mut rest: Vec<f64> = q
            .iter()
            .map(|a| a + rng.gen_range(-rest_noise..=rest_noise))
            .collect();
        chain.clamp(&mut rest);
        let pose = chain.forward_kinematics(&q)?;
        let p = pose.translation.vector;
        let target = TargetPose {
            position: Point3::robot(p.x, p.y, p.z),
            orientation: pose.rotation,
            orientation_source: OrientationSource::Primary,
        };
        let start = Instant::now();
        let sol = solve_ik(chain, &target, &rest, params)?;
        let elapsed_us = start.elapsed().as_secs_f64() * 1e6;
        trials.push(Trial {
            position_error: sol.report.position_error,
            orientation_error: sol.report.orientation_error,
            iterations: sol.report.iterations,
            converged: sol.report.converged,
            within_limits: chain.within_limits(&sol.joints),
            elapsed_us,
        });
    }
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub converged: usize,
    pub accurate: usize,
    /// Fraction of trials within both tolerances; 0 for an empty run.
    pub success_rate: f64,
    pub all_within_limits: bool,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
}

pub fn summarize(trials: &[Trial]) -> Summary {
    let n = trials.len();
    let accurate = trials.iter().filter(|t| t.accurate()).count();
    let mut times: Vec<f64> = trials.iter().map(|t| t.elapsed_us).collect();
    times.sort_by(f64::total_cmp);
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        if n == 0 {
            0.0
        } else {
            xs.sum::<f64>() / n as f64
        }
    };
    Summary {
        trials: n,
        converged: trials.iter().filter(|t| t.converged).count(),
        accurate,
        success_rate: if n == 0 { 0.0 } else { accurate as f64 / n as f64 },
        all_within_limits: trials.iter().all(|t| t.within_limits),
        mean_iterations: mean(&mut trials.iter().map(|t| t.iterations as f64)),
        max_iterations: trials.iter().map(|t| t.iterations).max().unwrap_or(0),
        mean_us: mean(&mut times.iter().copied()),
        p50_us: percentile(&times, 0.50),
        p95_us: percentile(&times, 0.95),
    }
}

/// Nearest-rank percentile of sorted samples; 0 when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
