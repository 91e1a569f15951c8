//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use handshadow::geometry::{
    build_camera_rotation, deproject_at_depth, project, CalibrationTransform, CameraIntrinsics, Point3,
};
use handshadow::gripper::{apply_gripper_mode, gripper_with_fallback, FallbackLevel, GripperMode, GripperParams, GripperState};
use handshadow::handmodel::{LandmarkId, LANDMARK_COUNT};
use handshadow::io::replay::{fk_replay_validate_default, FlagKind};
use handshadow::io::synth::{synth_recording, Scenario, SynthParams, SynthRecording};
use handshadow::io::TrajectoryRecord;
use handshadow::kinematics::roundtrip::{run_trials, summarize, DEFAULT_REST_NOISE};
use handshadow::kinematics::{IkParams, KinematicChain};
use handshadow::pipeline::{normalize_and_map, process_stream, CommandStatus, PipelineConfig, Stage, StreamOutput};
use handshadow::retarget::{hand_frame, target_position, HandPoints3D};
use handshadow::Handedness;

const SEED: u64 = 0x5EED;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

// 1 ---------------------------------------------------------------------------
fn geometry_round_trip() -> Outcome {
    const N: usize = 10_000;
    const TOL_M: f64 = 1e-9;
    let k = intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..N {
        let z = rng.gen_range(0.1..=5.0);
        let u = rng.gen_range(0.0..k.width as f64);
        let v = rng.gen_range(0.0..k.height as f64);
        // point drawn inside the frustum at depth z
        let p = Point3::camera((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
        let (pu, pv) = project(&p, &k).unwrap();
        let back = deproject_at_depth(pu, pv, z, &k);
        worst = worst.max((back.coords - p.coords).norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst < TOL_M && within(elapsed, 1.0),
        format!("max error {worst:.2e} m (tol {TOL_M:e}), {:.3} s (budget 1 s)", elapsed.as_secs_f64()),
    )
}

// 2 ---------------------------------------------------------------------------
fn camera_rotation_matrix() -> Outcome {
    const ENTRY_TOL: f64 = 1e-5;
    const ORTHO_TOL: f64 = 1e-9;
    // sin 50° = 0.766044, cos 50° = 0.642788
    let expected = Matrix3::new(
        -1.0, 0.0, 0.0, //
        0.0, 0.766044, -0.642788, //
        0.0, -0.642788, -0.766044,
    );
    let r = build_camera_rotation(50f64.to_radians());
    let entry_err = (r - expected).abs().max();
    let c = CalibrationTransform::preset();
    let t_ok = *c.t_final() == Vector3::new(0.04, -0.049, 0.48);
    let ortho = (c.r_final().transpose() * c.r_final() - Matrix3::identity()).abs().max();
    outcome(
        entry_err < ENTRY_TOL && ortho < ORTHO_TOL && t_ok,
        format!("entry error {entry_err:.1e} (tol {ENTRY_TOL:e}), |RtR-I| {ortho:.1e} (tol {ORTHO_TOL:e}), preset translation {}", if t_ok { "ok" } else { "wrong" }),
    )
}

// 3 ---------------------------------------------------------------------------
fn jacobian_vs_finite_differences() -> Outcome {
    const H: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    let chain = KinematicChain::so_arm101();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q: Vec<f64> = chain.joints().iter().map(|j| rng.gen_range(j.limits.min..=j.limits.max)).collect();
        let jac = chain.jacobian(&q).unwrap();
        for i in 0..chain.dof() {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[i] += H;
            qm[i] -= H;
            let (fp, fm) = (chain.forward_kinematics(&qp).unwrap(), chain.forward_kinematics(&qm).unwrap());
            let dp = (fp.translation.vector - fm.translation.vector) / (2.0 * H);
            // angular velocity from the relative rotation across the stencil
            let dr = (fp.rotation * fm.rotation.inverse()).scaled_axis() / (2.0 * H);
            for r in 0..3 {
                worst = worst.max((jac[(r, i)] - dp[r]).abs());
                worst = worst.max((jac[(r + 3, i)] - dr[r]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < TOL && within(elapsed, 5.0),
        format!("max entry error {worst:.2e} (tol {TOL:e}) over 100 configs, {:.3} s (budget 5 s)", elapsed.as_secs_f64()),
    )
}

// 4 ---------------------------------------------------------------------------
fn ik_round_trip() -> Outcome {
    const REQUIRED: f64 = 0.95;
    let chain = KinematicChain::so_arm101();
    let params = IkParams::default();
    let start = Instant::now();
    let trials = run_trials(&chain, &params, 1000, SEED + 4, DEFAULT_REST_NOISE).unwrap();
    let elapsed = start.elapsed();
    let s = summarize(&trials);
    outcome(
        s.success_rate >= REQUIRED && s.all_within_limits && s.max_iterations <= params.max_iterations && within(elapsed, 30.0),
        format!(
            "{}/{} within 1e-3 m and 1e-2 rad ({:.1}%, need {:.0}%), all within limits: {}, max iterations {}, {:.2} s (budget 30 s)",
            s.accurate,
            s.trials,
            100.0 * s.success_rate,
            100.0 * REQUIRED,
            s.all_within_limits,
            s.max_iterations,
            elapsed.as_secs_f64()
        ),
    )
}

// 5 ---------------------------------------------------------------------------
fn random_hand(rng: &mut ChaCha8Rng) -> [Vector3<f64>; LANDMARK_COUNT] {
    let mut h = [Vector3::zeros(); LANDMARK_COUNT];
    for p in h.iter_mut() {
        *p = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..0.5));
    }
    h
}

fn points(h: &[Vector3<f64>; LANDMARK_COUNT]) -> HandPoints3D {
    HandPoints3D::new(h.map(|x| Some(Point3::robot(x.x, x.y, x.z)))).unwrap()
}

fn target_frame_properties() -> Outcome {
    const N: usize = 10_000;
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let (mut tested, mut worst_ortho, mut worst_det, mut worst_inv, mut worst_eqv) = (0, 0f64, 0f64, 0f64, 0f64);
    while tested < N {
        let h = random_hand(&mut rng);
        // keep clearly non-degenerate hands only
        let span = h[LandmarkId::INDEX_FINGER_MCP.index()] - h[LandmarkId::THUMB_MCP.index()];
        let d = (h[LandmarkId::THUMB_TIP.index()] - h[LandmarkId::THUMB_MCP.index()])
            + (h[LandmarkId::INDEX_FINGER_TIP.index()] - h[LandmarkId::INDEX_FINGER_MCP.index()]);
        if span.norm() < 0.02 || d.norm() < 0.02 || span.normalize().cross(&d.normalize()).norm() < 0.1 {
            continue;
        }
        tested += 1;
        let (r, _) = hand_frame(&points(&h)).unwrap();
        worst_ortho = worst_ortho.max((r.transpose() * r - Matrix3::identity()).abs().max());
        worst_det = worst_det.max((r.determinant() - 1.0).abs());

        let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let shifted = h.map(|x| x + t);
        let (rt, _) = hand_frame(&points(&shifted)).unwrap();
        let pt = target_position(&points(&shifted)).unwrap().coords;
        let p0 = target_position(&points(&h)).unwrap().coords;
        worst_inv = worst_inv.max((rt - r).abs().max()).max((pt - p0 - t).abs().max());

        let q = Rotation3::from_scaled_axis(Vector3::new(
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
        ) / 2.0)
        .into_inner();
        let rotated = h.map(|x| q * x);
        let (rq, _) = hand_frame(&points(&rotated)).unwrap();
        let pq = target_position(&points(&rotated)).unwrap().coords;
        worst_eqv = worst_eqv.max((rq - q * r).abs().max()).max((pq - q * p0).abs().max());
    }
    outcome(
        worst_ortho < TOL && worst_det < TOL && worst_inv < TOL && worst_eqv < TOL,
        format!(
            "{N} hands: |RtR-I| {worst_ortho:.1e}, |det-1| {worst_det:.1e}, translation {worst_inv:.1e}, rotation {worst_eqv:.1e} (tol {TOL:e})"
        ),
    )
}

// 6 ---------------------------------------------------------------------------
fn gripper_contract() -> Outcome {
    let params = GripperParams::default();
    let pattern_ids = [
        LandmarkId::THUMB_TIP,
        LandmarkId::INDEX_FINGER_TIP,
        LandmarkId::THUMB_IP,
        LandmarkId::INDEX_FINGER_DIP,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut failures = Vec::new();
    let mut cases = 0;
    for mask in 0u32..16 {
        for history in [None, Some(0.5)] {
            cases += 1;
            let h = random_hand(&mut rng);
            let mut pts = points(&h);
            for (bit, id) in pattern_ids.iter().enumerate() {
                if mask & (1 << bit) == 0 {
                    pts.remove(*id);
                }
            }
            let present = |b: u32| mask & (1 << b) != 0;
            let expected = if present(0) && present(1) {
                FallbackLevel::Tips
            } else if present(2) && present(3) {
                FallbackLevel::Knuckles
            } else if history.is_some() {
                FallbackLevel::LastValid
            } else {
                FallbackLevel::MidOpen
            };
            let target = target_position(&pts).unwrap();
            let mut state = GripperState {
                last_valid_angle: history,
                level_used: None,
            };
            let (phi, level) = gripper_with_fallback(&pts, &target, &mut state, &params);
            let expected_phi = match expected {
                FallbackLevel::Tips | FallbackLevel::Knuckles => {
                    let (a, b) = if expected == FallbackLevel::Tips { (0, 1) } else { (2, 3) };
                    let va = h[pattern_ids[a].index()] - target.coords;
                    let vb = h[pattern_ids[b].index()] - target.coords;
                    // angle via atan2 of cross and dot, independent of the arccos form
                    let raw = va.cross(&vb).norm().atan2(va.dot(&vb)).min(FRAC_PI_2);
                    (raw - 0.175).clamp(0.087, 1.658)
                }
                FallbackLevel::LastValid => 0.5,
                FallbackLevel::MidOpen => (0.087 + 1.658) / 2.0,
            };
            let history_after_ok = match expected {
                FallbackLevel::Tips | FallbackLevel::Knuckles => state.last_valid_angle == Some(phi),
                _ => state.last_valid_angle == history,
            };
            if level != expected || (phi - expected_phi).abs() > 1e-12 || !history_after_ok {
                failures.push(format!("mask {mask:04b} history {history:?}: got {level:?} {phi}"));
            }
        }
    }
    let mut range_ok = true;
    for _ in 0..10_000 {
        let h = random_hand(&mut rng);
        let pts = points(&h);
        let target = target_position(&pts).unwrap();
        let (phi, _) = gripper_with_fallback(&pts, &target, &mut GripperState::default(), &params);
        range_ok &= (0.087..=1.658).contains(&phi);
    }
    let binary = GripperParams {
        mode: GripperMode::Binary,
        ..params
    };
    let threshold = 60f64.to_radians();
    let mut binary_ok = apply_gripper_mode(threshold, &binary) == 1.658
        && apply_gripper_mode(threshold - 1e-9, &binary) == 0.087;
    for _ in 0..10_000 {
        let phi = rng.gen_range(0.087..=1.658);
        let out = apply_gripper_mode(phi, &binary);
        binary_ok &= out == if phi >= threshold { 1.658 } else { 0.087 };
    }
    outcome(
        failures.is_empty() && range_ok && binary_ok,
        format!(
            "{} of {cases} truth-table cases wrong{}, range held: {range_ok}, binary endpoints/threshold: {binary_ok}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// 7 ---------------------------------------------------------------------------
fn synth(s: Scenario, n: usize) -> SynthRecording {
    synth_recording(
        s,
        &KinematicChain::so_arm101(),
        &CalibrationTransform::preset(),
        &intrinsics(),
        n,
        &SynthParams::default(),
    )
    .unwrap()
}

fn pipeline_config() -> PipelineConfig {
    PipelineConfig::new(intrinsics(), KinematicChain::so_arm101())
}

fn end_to_end() -> Outcome {
    const FRAMES: usize = 300;
    const SETTLING: usize = 10;
    const EE_TOL_M: f64 = 5e-3;
    const GEOM_TOL_M: f64 = 1e-3;
    let start = Instant::now();
    let rec = synth(Scenario::StaticGrasp, FRAMES);
    let a = process_stream(rec.frames(), pipeline_config()).unwrap();
    let b = process_stream(rec.frames(), pipeline_config()).unwrap();
    let elapsed = start.elapsed();
    let chain = KinematicChain::so_arm101();
    let all_solved = a.commands[SETTLING..].iter().all(|c| c.status == CommandStatus::Solved);
    let mut ee_err: f64 = 0.0;
    let mut geom_err: f64 = 0.0;
    for i in SETTLING..FRAMES {
        let fk = chain.forward_kinematics(&a.commands[i].arm_angles).unwrap();
        ee_err = ee_err.max((fk.translation.vector - rec.ground_truth[i].position.coords).norm());
    }
    for (t, gt) in a.traces.iter().zip(&rec.ground_truth) {
        geom_err = match t.target {
            Some(p) => geom_err.max((p.position.coords - gt.position.coords).norm()),
            None => f64::INFINITY,
        };
    }
    let deterministic = a.commands == b.commands;
    outcome(
        all_solved && ee_err < EE_TOL_M && geom_err < GEOM_TOL_M && deterministic && within(elapsed, 60.0),
        format!(
            "{FRAMES} frames, post-settling solved: {all_solved}, FK error {:.3} mm (tol 5 mm), pre-IK error {:.3} mm (tol 1 mm), deterministic: {deterministic}, {:.2} s (budget 60 s)",
            ee_err * 1e3,
            geom_err * 1e3,
            elapsed.as_secs_f64()
        ),
    )
}

// 8 ---------------------------------------------------------------------------
fn motor_mapping() -> Outcome {
    let chain = KinematicChain::so_arm101();
    let arm = chain.limits();
    let grip = chain.gripper().unwrap().limits;
    let at = |f: &dyn Fn(usize) -> f64, g: f64| {
        let q: Vec<f64> = (0..arm.len()).map(f).collect();
        normalize_and_map(&q, g, &arm, grip).unwrap()
    };
    let (n_mid, m_mid) = at(&|i| arm[i].mid(), grip.mid());
    let (n_lo, m_lo) = at(&|i| arm[i].min, grip.min);
    let (n_hi, m_hi) = at(&|i| arm[i].max, grip.max);
    let mid_ok = m_mid[..5].iter().all(|m| m.abs() < 1e-9) && n_mid.iter().all(|n| (n - 0.5).abs() < 1e-12);
    let lo_ok = m_lo[..5].iter().all(|m| *m == -100.0) && m_lo[5] == 0.0 && n_lo.iter().all(|n| *n == 0.0);
    let hi_ok = m_hi[..5].iter().all(|m| *m == 100.0) && m_hi[5] == 100.0 && n_hi.iter().all(|n| *n == 1.0);
    let pan_ok = arm[0].min == -1.920 && arm[0].max == 1.920 && n_lo[0] == 0.0 && n_hi[0] == 1.0;
    outcome(
        mid_ok && lo_ok && hi_ok && pan_ok,
        format!("centre→0: {mid_ok}, lower→-100/0: {lo_ok}, upper→100/100: {hi_ok}, shoulder pan ±1.920→0/1: {pan_ok}"),
    )
}

// 9 ---------------------------------------------------------------------------
fn low_pose(chain: &KinematicChain) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    loop {
        let q: Vec<f64> = chain.joints().iter().map(|j| rng.gen_range(j.limits.min..=j.limits.max)).collect();
        if chain.forward_kinematics(&q).unwrap().translation.vector.z < 0.0 {
            return q;
        }
    }
}

fn replay_validation() -> Outcome {
    const OUT_OF_LIMIT: usize = 20;
    const BELOW_FLOOR: usize = 35;
    const SPIKE: usize = 50;
    let chain = KinematicChain::so_arm101();
    let rec = synth(Scenario::StaticGrasp, 60);
    let out = process_stream(rec.frames(), pipeline_config()).unwrap();
    let clean: Vec<TrajectoryRecord> = out.commands.iter().map(TrajectoryRecord::from).collect();
    let clean_report = fk_replay_validate_default(&clean, &chain, rec.fps).unwrap();

    let mut seeded = clean.clone();
    seeded[OUT_OF_LIMIT].angles_rad[5] = 2.5;
    let low = low_pose(&chain);
    seeded[BELOW_FLOOR].angles_rad[..5].copy_from_slice(&low);
    seeded[SPIKE].angles_rad[0] += 0.5;
    let report = fk_replay_validate_default(&seeded, &chain, rec.fps).unwrap();
    let has = |frame: usize, pred: &dyn Fn(&FlagKind) -> bool| report.flags.iter().any(|f| f.frame == frame && pred(&f.kind));
    let limit_ok = has(OUT_OF_LIMIT, &|k| matches!(k, FlagKind::JointLimit { .. }));
    let floor_ok = has(BELOW_FLOOR, &|k| matches!(k, FlagKind::BelowZFloor { .. }));
    let spike_ok = has(SPIKE, &|k| matches!(k, FlagKind::Velocity { .. }));
    let no_strays = report.flags.iter().all(|f| match f.kind {
        FlagKind::JointLimit { .. } => f.frame == OUT_OF_LIMIT,
        FlagKind::BelowZFloor { .. } => f.frame == BELOW_FLOOR,
        _ => [OUT_OF_LIMIT, BELOW_FLOOR, SPIKE].iter().any(|s| f.frame >= *s && f.frame <= s + 2),
    });
    outcome(
        clean_report.passed() && limit_ok && floor_ok && spike_ok && no_strays,
        format!(
            "clean flags: {}, out-of-limit @{OUT_OF_LIMIT}: {limit_ok}, z-floor @{BELOW_FLOOR}: {floor_ok}, velocity spike @{SPIKE}: {spike_ok}, no stray flags: {no_strays}",
            clean_report.flags.len()
        ),
    )
}

// 10 --------------------------------------------------------------------------
fn latency_consistent(out: &StreamOutput) -> bool {
    let l = &out.latency;
    let n = out.commands.len();
    let counts: Vec<usize> = Stage::ALL.iter().map(|s| l.samples(*s).len()).collect();
    let counts_ok = l.frames() == n
        && counts[0] == n
        && counts[1] == n
        && counts.windows(2).all(|w| w[1] <= w[0]);
    let stage_sum: f64 = Stage::ALL.iter().flat_map(|s| l.samples(*s)).sum();
    let total: f64 = l.frame_totals().iter().sum();
    let additive = (stage_sum - total).abs() <= 1e-9 * total.max(1.0);
    let non_negative = Stage::ALL.iter().flat_map(|s| l.samples(*s)).all(|v| *v >= 0.0);
    counts_ok && additive && non_negative
}

fn latency_instrumentation() -> Outcome {
    let mut streams = Vec::new();
    for s in Scenario::ALL {
        streams.push((s.name().to_string(), synth(s, 60).frames().map(Result::unwrap).collect::<Vec<_>>()));
    }
    let mut mixed: Vec<_> = synth(Scenario::StaticGrasp, 30).frames().map(Result::unwrap).collect();
    for (i, f) in mixed.iter_mut().enumerate() {
        if i % 4 == 0 {
            f.landmarks.handedness = Handedness::Left;
        } else if i % 4 == 1 {
            f.landmarks.pixel_valid = [false; LANDMARK_COUNT];
        }
    }
    streams.push(("mixed_rejections".into(), mixed));
    streams.push(("empty".into(), Vec::new()));
    let mut details = Vec::new();
    let mut pass = true;
    for (name, frames) in streams {
        let out = process_stream(frames.into_iter().map(Ok), pipeline_config()).unwrap();
        let ok = latency_consistent(&out);
        pass &= ok;
        details.push(format!("{name}: {} ({:.0} us/frame)", if ok { "ok" } else { "inconsistent" }, out.latency.total_mean_us()));
    }
    outcome(pass, details.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("geometry round-trip", geometry_round_trip),
        ("camera rotation matrix", camera_rotation_matrix),
        ("jacobian vs finite differences", jacobian_vs_finite_differences),
        ("IK round-trip", ik_round_trip),
        ("target-frame construction", target_frame_properties),
        ("gripper contract", gripper_contract),
        ("end-to-end synthetic pipeline", end_to_end),
        ("motor mapping", motor_mapping),
        ("replay validation", replay_validation),
        ("latency instrumentation", latency_instrumentation),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
