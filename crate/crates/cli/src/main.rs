//! `handshadow` command-line tool.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage, configuration or
//! format error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use handshadow::geometry::CameraIntrinsics;
use handshadow::handmodel::Handedness;
use handshadow::io::replay::{fk_replay_validate, ReplayLimits};
use handshadow::io::synth::{synth_recording, Scenario, SynthParams};
use handshadow::io::{
    chain_from_toml, intrinsics_from_toml, load_pipeline_config, load_recording, read_trajectory,
    write_latency_sidecar, write_trajectory, CalibrationSpec, IoError, PipelineConfigFile,
};
use handshadow::kinematics::roundtrip::{run_trials, summarize, DEFAULT_REST_NOISE};
use handshadow::kinematics::{IkParams, KinematicChain, Z_FLOOR_M};
use handshadow::pipeline::{latency_report, process_stream, CommandStatus, PipelineConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "handshadow", version, about = "Offline hand-to-robot retargeting")]
struct Cli {
    /// Print extra diagnostics (latency table, resolved settings) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a recording through the pipeline and write a trajectory.
    Process(ProcessArgs),
    /// Replay a trajectory through forward kinematics and check it.
    FkReplay(ReplayArgs),
    /// Generate a synthetic recording with ground truth.
    Synth(SynthArgs),
    /// Time random reachable IK solves.
    Bench(BenchArgs),
    /// Load and validate a pipeline configuration.
    ValidateConfig(ValidateArgs),
}

/// Pipeline settings. Precedence: built-in defaults < config file < flags.
#[derive(Args, Default)]
struct PipelineFlags {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Kinematic chain file (TOML); default is the bundled SO-ARM101 preset.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Camera intrinsics file (TOML).
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long, value_parser = parse_handedness)]
    handedness: Option<Handedness>,
    #[arg(long)]
    landmark_alpha: Option<f64>,
    #[arg(long)]
    joint_alpha: Option<f64>,
    #[arg(long)]
    z_floor_m: Option<f64>,
    #[command(flatten)]
    calibration: CalibrationFlags,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    residual_threshold: Option<f64>,
    #[arg(long)]
    position_weight: Option<f64>,
    #[arg(long)]
    orientation_weight: Option<f64>,
    #[arg(long)]
    step_clamp_rad: Option<f64>,
    /// normal, binary or offset:<rad>.
    #[arg(long)]
    gripper_mode: Option<String>,
    #[arg(long)]
    phi_min_rad: Option<f64>,
    #[arg(long)]
    phi_max_rad: Option<f64>,
    #[arg(long)]
    calibration_offset_rad: Option<f64>,
    #[arg(long)]
    binary_threshold_deg: Option<f64>,
}

#[derive(Args, Default)]
struct CalibrationFlags {
    /// Named calibration preset (`glasses`).
    #[arg(long, conflicts_with_all = ["theta_mount_deg", "t_cam_m"])]
    calibration_preset: Option<String>,
    /// Camera mount tilt, degrees; requires --t-cam-m.
    #[arg(long, requires = "t_cam_m")]
    theta_mount_deg: Option<f64>,
    /// Camera translation in the robot frame, metres: x,y,z.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "theta_mount_deg")]
    t_cam_m: Option<Vec<f64>>,
}

#[derive(Args)]
struct ProcessArgs {
    /// Recording manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for trajectory.jsonl and latency.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trajectory file (JSON lines).
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = Z_FLOOR_M)]
    z_floor_m: f64,
    /// Arm joint velocity limit, rad/s.
    #[arg(long)]
    arm_max_velocity: Option<f64>,
    /// Arm joint acceleration limit, rad/s².
    #[arg(long)]
    arm_max_acceleration: Option<f64>,
    #[arg(long)]
    gripper_max_velocity: Option<f64>,
    #[arg(long)]
    gripper_max_acceleration: Option<f64>,
    /// Write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// static_grasp, line_sweep or grasp_cycle.
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(short = 'n', long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_REST_NOISE)]
    rest_noise: f64,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    pipeline: PipelineFlags,
}

fn parse_handedness(s: &str) -> Result<Handedness, String> {
    match s {
        "left" => Ok(Handedness::Left),
        "right" => Ok(Handedness::Right),
        _ => Err(format!("expected left or right, found {s:?}")),
    }
}

enum Failure {
    Validation(String),
    Config(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl PipelineFlags {
    /// Merges flags over the config file; returns the file model and the
    /// directory its relative paths resolve against.
    fn merged(&self) -> Result<(PipelineConfigFile, PathBuf), Failure> {
        let (mut file, base) = match &self.config {
            Some(p) => (
                load_pipeline_config(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (PipelineConfigFile::default(), PathBuf::new()),
        };
        if let Some(p) = &self.chain {
            file.chain = Some(absolute(p));
        }
        if let Some(p) = &self.intrinsics {
            file.intrinsics = Some(absolute(p));
        }
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            };
        }
        set!(file.handedness, self.handedness);
        set!(file.landmark_alpha, self.landmark_alpha);
        set!(file.joint_alpha, self.joint_alpha);
        set!(file.z_floor_m, self.z_floor_m);
        set!(file.ik.max_iterations, self.max_iterations);
        set!(file.ik.residual_threshold, self.residual_threshold);
        set!(file.ik.position_weight, self.position_weight);
        set!(file.ik.orientation_weight, self.orientation_weight);
        set!(file.ik.step_clamp_rad, self.step_clamp_rad);
        set!(file.gripper.mode, self.gripper_mode);
        set!(file.gripper.phi_min_rad, self.phi_min_rad);
        set!(file.gripper.phi_max_rad, self.phi_max_rad);
        set!(file.gripper.calibration_offset_rad, self.calibration_offset_rad);
        set!(file.gripper.binary_threshold_deg, self.binary_threshold_deg);
        let c = &self.calibration;
        if let Some(name) = &c.calibration_preset {
            file.calibration = Some(CalibrationSpec {
                preset: Some(name.clone()),
                ..CalibrationSpec::default()
            });
        } else if let (Some(theta), Some(t)) = (c.theta_mount_deg, &c.t_cam_m) {
            if t.len() != 3 {
                return Err(Failure::Config(format!("--t-cam-m needs 3 values, found {}", t.len())));
            }
            file.calibration = Some(CalibrationSpec {
                theta_mount_deg: Some(theta),
                t_cam_m: Some([t[0], t[1], t[2]]),
                ..CalibrationSpec::default()
            });
        }
        Ok((file, base))
    }

    fn build(&self, fallback: Option<CameraIntrinsics>) -> Result<PipelineConfig, Failure> {
        let (file, base) = self.merged()?;
        Ok(file.build(&base, fallback)?)
    }
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid defaults")
}

fn load_chain(path: &Option<PathBuf>) -> Result<KinematicChain, Failure> {
    Ok(match path {
        Some(p) => chain_from_toml(p)?,
        None => KinematicChain::so_arm101(),
    })
}

fn cmd_process(args: &ProcessArgs, verbose: bool) -> Result<(), Failure> {
    let bundle = load_recording(&args.manifest)?;
    let config = args.pipeline.build(Some(bundle.intrinsics()))?;
    if config.intrinsics != bundle.intrinsics() {
        return Err(Failure::Config(
            "configured intrinsics differ from the recording's intrinsics".into(),
        ));
    }
    let out = process_stream(bundle.frames(), config).map_err(|e| Failure::Config(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Config(format!("{}: {e}", args.out.display())))?;
    write_trajectory(&args.out.join("trajectory.jsonl"), &out.commands)?;
    write_latency_sidecar(&args.out.join("latency.json"), &out.latency)?;

    let solved = out.count(|s| *s == CommandStatus::Solved);
    let held = out.count(|s| matches!(s, CommandStatus::HeldLastValid(_)));
    let rejected = out.count(|s| matches!(s, CommandStatus::Rejected(_)));
    let solved_iters: Vec<usize> = out
        .commands
        .iter()
        .filter(|c| c.status == CommandStatus::Solved)
        .map(|c| c.ik_iterations)
        .collect();
    let mean_iters = if solved_iters.is_empty() {
        0.0
    } else {
        solved_iters.iter().sum::<usize>() as f64 / solved_iters.len() as f64
    };
    println!(
        "frames {} solved {solved} held {held} rejected {rejected} mean_ik_iterations {mean_iters:.2}",
        out.commands.len()
    );
    if verbose {
        eprint!("{}", latency_report(&out.latency));
    }
    Ok(())
}

fn cmd_fk_replay(args: &ReplayArgs, verbose: bool) -> Result<(), Failure> {
    let chain = load_chain(&args.chain)?;
    let trajectory = read_trajectory(&args.trajectory)?;
    let mut limits = ReplayLimits::for_chain(&chain);
    let dof = chain.dof();
    for (j, (v, a)) in limits
        .max_velocity
        .iter_mut()
        .zip(limits.max_acceleration.iter_mut())
        .enumerate()
    {
        let (vel, acc) = if j < dof {
            (args.arm_max_velocity, args.arm_max_acceleration)
        } else {
            (args.gripper_max_velocity, args.gripper_max_acceleration)
        };
        *v = vel.unwrap_or(*v);
        *a = acc.unwrap_or(*a);
    }
    let report = fk_replay_validate(&trajectory, &chain, &limits, args.fps, args.z_floor_m).map_err(|e| match e {
        IoError::Format { path: None, line, message } => Failure::Config(
            IoError::Format {
                path: Some(args.trajectory.clone()),
                line,
                message,
            }
            .to_string(),
        ),
        other => other.into(),
    })?;
    if let Some(p) = &args.report {
        let text = serde_json::to_string_pretty(&report).expect("report serialises");
        fs::write(p, text + "\n").map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
    }
    if verbose {
        for (name, v) in chain
            .joints()
            .iter()
            .map(|j| j.name.as_str())
            .chain(chain.gripper().map(|g| g.name.as_str()))
            .zip(&report.peak_velocity)
        {
            eprintln!("peak velocity {name}: {v:.4} rad/s");
        }
    }
    for f in &report.flags {
        println!("{f}");
    }
    println!(
        "frames {} skipped {} flags {}",
        report.frames,
        report.skipped_leading,
        report.flags.len()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} flag(s) raised", report.flags.len())))
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let fallback = match &args.pipeline.intrinsics {
        Some(p) => intrinsics_from_toml(p)?.intrinsics()?,
        None => default_intrinsics(),
    };
    let config = args.pipeline.build(Some(fallback))?;
    let params = SynthParams {
        fps: args.fps,
        ..SynthParams::default()
    };
    let rec = synth_recording(
        args.scenario,
        &config.chain,
        &config.calibration,
        &config.intrinsics,
        args.frames,
        &params,
    )?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Config(format!("{}: {e}", args.out.display())))?;
    let manifest = rec.write(&args.out)?;
    println!("wrote {} frames of {} to {}", rec.len(), args.scenario, manifest.display());
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let chain = load_chain(&args.chain)?;
    if !(args.rest_noise >= 0.0) {
        return Err(Failure::Config("rest noise must be non-negative".into()));
    }
    let trials = run_trials(&chain, &IkParams::default(), args.trials, args.seed, args.rest_noise)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let s = summarize(&trials);
    if args.json {
        println!("{}", serde_json::to_string(&s).expect("summary serialises"));
    } else {
        println!(
            "trials {} converged {} accurate {} success_rate {:.4} within_limits {}",
            s.trials, s.converged, s.accurate, s.success_rate, s.all_within_limits
        );
        println!(
            "iterations mean {:.2} max {}  time_us mean {:.1} p50 {:.1} p95 {:.1}",
            s.mean_iterations, s.max_iterations, s.mean_us, s.p50_us, s.p95_us
        );
    }
    Ok(())
}

fn cmd_validate_config(args: &ValidateArgs, verbose: bool) -> Result<(), Failure> {
    let (file, base) = args.pipeline.merged()?;
    let placeholder = file.intrinsics.is_none();
    let config = file.build(&base, Some(default_intrinsics()))?;
    if verbose {
        eprintln!("{config:#?}");
    }
    println!(
        "config ok: {} arm joints, gripper mode {}, handedness {:?}{}",
        config.chain.dof(),
        config.gripper.mode,
        config.handedness,
        if placeholder {
            " (no intrinsics given; checked against 640x480 defaults)"
        } else {
            ""
        }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Process(a) => cmd_process(a, cli.verbose),
        Command::FkReplay(a) => cmd_fk_replay(a, cli.verbose),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ValidateConfig(a) => cmd_validate_config(a, cli.verbose),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
