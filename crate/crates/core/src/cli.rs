//! Command-line front end.
//!
//! Every command resolves and validates its configuration, computes all of
//! its outputs in memory, and only then touches the file system, so a
//! rejected configuration never leaves partial files behind.
//!
//! Exit codes: 0 success or MATCH, 1 usage error, 2 MISMATCH, 3 channel
//! ABORT, 4 internal failure.

use std::f64::consts::FRAC_PI_2;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::attacks::{
    cloned_bob_matrix, split_marginal_bob, split_marginal_eve, CloneSource, CloneStrategy, SplitRatio, SplitSource,
};
use crate::density_ops::{hs_distance_sq, weak_distance, DiagonalDensityMatrix};
use crate::detection::{calibrate_thresholds, detect, CalibrationConfig, DetectionReport, DEFAULT_CALIBRATION_RUNS};
use crate::numfmt::fmt_sig;
use crate::photon_stats::{poisson_distribution, tmcc_distribution, tmcc_moments, IntensityParam, TAIL_EPS};
use crate::public_channel::{
    accept_and_reconcile, connect_and_reconcile, ChannelVerdict, ExchangeOptions, Transcript, DEFAULT_TIMEOUT,
};
use crate::qkd_protocol::{bit_threshold, extract_keys, Disagreement, KeyMaterial};
use crate::tmcc_source::{read_pulse_csv, write_pulse_csv, PulseRecord, PulseSource, SourceConfig, TmccSource};

pub const CONFIG_ENV: &str = "TMCC_QKD_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub const DEFAULT_PULSES: usize = 10_000;
pub const DEFAULT_FIGURE_LAMBDA: f64 = 2.0;
pub const FIGURES: [u8; 5] = [1, 2, 3, 5, 6];

pub const PULSES_FILE: &str = "pulses.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ALICE_KEY_FILE: &str = "alice.key";
pub const BOB_KEY_FILE: &str = "bob.key";

#[derive(Parser, Debug)]
#[command(name = "tmcc-qkd", version, about = "TMCC quantum key distribution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// One figure's data set as CSV.
    Stats,
    /// Noiseless or noisy TMCC run: pulse log, detection report, key files.
    Simulate,
    /// Run with a beam-splitting eavesdropper, or sweep the split with --sweep.
    AttackSplit,
    /// Run with a measure-and-re-emit eavesdropper.
    AttackClone,
    /// Score a pulse log against the expected TMCC law.
    Detect,
    /// Wait for a peer and compare XOR codes.
    ReconcileServe,
    /// Connect to a peer and compare XOR codes.
    ReconcileConnect,
    /// Write every figure's data set into a directory.
    Figures,
}

/// Options shared by the command line and the JSON config file. Flags win.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Flags {
    /// Source amplitude |λ|.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Per-mode noise photon probability ε.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Number of pulses to simulate.
    #[arg(long, global = true)]
    pulses: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bob's intensity share p² for attack-split.
    #[arg(long, global = true)]
    split_p2: Option<f64>,
    /// single-photon-bank, coherent or tmcc-clone.
    #[arg(long, global = true)]
    clone_strategy: Option<String>,
    /// One of 1, 2, 3, 5, 6.
    #[arg(long, global = true)]
    figure: Option<u8>,
    /// Emit the split sweep instead of a single run.
    #[arg(long, global = true)]
    #[serde(default)]
    sweep: bool,
    /// Output file or directory.
    #[arg(long, global = true)]
    #[serde(alias = "output_path")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(alias = "peer_address")]
    peer: Option<String>,
    #[arg(long, global = true)]
    listen: Option<String>,
    #[arg(long, global = true)]
    timeout_secs: Option<f64>,
    /// Key file for the reconcile commands.
    #[arg(long, global = true)]
    key: Option<PathBuf>,
    /// Pulse log for detect.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Write a hex log of the exchanged frames here.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    calibration_runs: Option<usize>,
    #[arg(long, global = true)]
    calibration_seed: Option<u64>,
}

impl Flags {
    fn or(self, file: Flags) -> Flags {
        Flags {
            lambda: self.lambda.or(file.lambda),
            epsilon: self.epsilon.or(file.epsilon),
            pulses: self.pulses.or(file.pulses),
            seed: self.seed.or(file.seed),
            split_p2: self.split_p2.or(file.split_p2),
            clone_strategy: self.clone_strategy.or(file.clone_strategy),
            figure: self.figure.or(file.figure),
            sweep: self.sweep || file.sweep,
            out: self.out.or(file.out),
            peer: self.peer.or(file.peer),
            listen: self.listen.or(file.listen),
            timeout_secs: self.timeout_secs.or(file.timeout_secs),
            key: self.key.or(file.key),
            input: self.input.or(file.input),
            transcript: self.transcript.or(file.transcript),
            calibration_runs: self.calibration_runs.or(file.calibration_runs),
            calibration_seed: self.calibration_seed.or(file.calibration_seed),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// Fully resolved and validated configuration of one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub lambda: Option<IntensityParam>,
    pub epsilon: f64,
    pub pulses: usize,
    pub seed: u64,
    pub split: Option<SplitRatio>,
    pub clone_strategy: CloneStrategy,
    pub figure: Option<u8>,
    pub sweep: bool,
    pub out: Option<PathBuf>,
    pub peer: Option<String>,
    pub listen: Option<String>,
    pub timeout: Duration,
    pub key: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub calibration_runs: usize,
    pub calibration_seed: u64,
}

fn required<T>(value: Option<T>, flag: &str, command: Command) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{} requires --{flag}", command_name(command))))
}

fn command_name(command: Command) -> &'static str {
    match command {
        Command::Stats => "stats",
        Command::Simulate => "simulate",
        Command::AttackSplit => "attack-split",
        Command::AttackClone => "attack-clone",
        Command::Detect => "detect",
        Command::ReconcileServe => "reconcile-serve",
        Command::ReconcileConnect => "reconcile-connect",
        Command::Figures => "figures",
    }
}

impl RunConfig {
    fn resolve(command: Command, f: Flags) -> Result<RunConfig, CliError> {
        let lambda = f.lambda.map(IntensityParam::new).transpose().map_err(usage)?;
        let epsilon = f.epsilon.unwrap_or(0.0);
        // Range check only; the source owns the rule.
        SourceConfig::new(IntensityParam::ZERO, epsilon, 0).map_err(usage)?;
        let split = f.split_p2.map(SplitRatio::from_p_squared).transpose().map_err(usage)?;
        let clone_strategy = match f.clone_strategy {
            Some(s) => s.parse().map_err(usage)?,
            None => CloneStrategy::TmccClone,
        };
        if let Some(fig) = f.figure {
            if !FIGURES.contains(&fig) {
                return Err(usage(format!("--figure must be one of 1, 2, 3, 5, 6, got {fig}")));
            }
        }
        let timeout = match f.timeout_secs {
            None => DEFAULT_TIMEOUT,
            Some(t) if t.is_finite() && t > 0.0 => Duration::from_secs_f64(t),
            Some(t) => return Err(usage(format!("--timeout-secs must be positive, got {t}"))),
        };
        let calibration_runs = f.calibration_runs.unwrap_or(DEFAULT_CALIBRATION_RUNS);
        if calibration_runs == 0 {
            return Err(usage("--calibration-runs must be positive"));
        }
        let cfg = RunConfig {
            command,
            lambda,
            epsilon,
            pulses: f.pulses.unwrap_or(DEFAULT_PULSES),
            seed: f.seed.unwrap_or(0),
            split,
            clone_strategy,
            figure: f.figure,
            sweep: f.sweep,
            out: f.out,
            peer: f.peer,
            listen: f.listen,
            timeout,
            key: f.key,
            input: f.input,
            transcript: f.transcript,
            calibration_runs,
            calibration_seed: f.calibration_seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that the fields the command needs are present.
    pub fn validate(&self) -> Result<(), CliError> {
        let cmd = self.command;
        match cmd {
            Command::Stats => {
                required(self.out.as_ref(), "out", cmd)?;
                match self.figure.unwrap_or(1) {
                    1 => {
                        required(self.lambda, "lambda", cmd)?;
                    }
                    2 | 3 => {}
                    other => return Err(usage(format!("stats covers figures 1-3, got {other}; use `figures`"))),
                }
            }
            Command::Figures => {
                required(self.out.as_ref(), "out", cmd)?;
            }
            Command::Simulate | Command::AttackSplit | Command::AttackClone => {
                required(self.lambda, "lambda", cmd)?;
                required(self.out.as_ref(), "out", cmd)?;
                if cmd == Command::AttackSplit && !self.sweep {
                    required(self.split, "split-p2", cmd)?;
                }
                let sweep_only = cmd == Command::AttackSplit && self.sweep;
                if !sweep_only && self.pulses < 2 {
                    return Err(usage(format!("--pulses must be at least 2, got {}", self.pulses)));
                }
            }
            Command::Detect => {
                required(self.lambda, "lambda", cmd)?;
                required(self.input.as_ref(), "input", cmd)?;
            }
            Command::ReconcileServe => {
                required(self.key.as_ref(), "key", cmd)?;
                required(self.listen.as_ref(), "listen", cmd)?;
            }
            Command::ReconcileConnect => {
                required(self.key.as_ref(), "key", cmd)?;
                required(self.peer.as_ref(), "peer", cmd)?;
            }
        }
        Ok(())
    }
}

/// Parses `args` (program name first), merges the config file named by
/// `config_path`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, config_path: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{}", e.render());
                EXIT_OK
            };
            return code;
        }
    };
    match execute(cli, config_path, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config_file(path: &Path) -> Result<Flags, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

fn execute(
    cli: Cli,
    config_path: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    let file = match config_path {
        Some(path) => load_config_file(path)?,
        None => Flags::default(),
    };
    let cfg = RunConfig::resolve(cli.command, cli.flags.or(file))?;
    match cfg.command {
        Command::Stats => cmd_stats(&cfg, stdout),
        Command::Figures => cmd_figures(&cfg, stdout),
        Command::AttackSplit if cfg.sweep => cmd_split_sweep(&cfg, stdout),
        Command::Simulate | Command::AttackSplit | Command::AttackClone => cmd_scenario(&cfg, stdout),
        Command::Detect => cmd_detect(&cfg, stdout),
        Command::ReconcileServe | Command::ReconcileConnect => cmd_reconcile(&cfg, stdout, stderr),
    }
}

/// Files to create, written only after every one of them has been computed.
#[derive(Debug, Default)]
struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, path: PathBuf, contents: impl Into<Vec<u8>>) {
        self.0.push((path, contents.into()));
    }

    /// Writes each file next to its destination and renames them all once
    /// every write succeeded.
    fn commit(self) -> Result<(), CliError> {
        let mut staged = Vec::with_capacity(self.0.len());
        let result = (|| {
            for (path, contents) in &self.0 {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
                }
                let mut tmp = path.clone().into_os_string();
                tmp.push(".partial");
                let tmp = PathBuf::from(tmp);
                fs::write(&tmp, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
                staged.push((tmp, path.clone()));
            }
            for (tmp, path) in &staged {
                fs::rename(tmp, path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
            }
            Ok(())
        })();
        if result.is_err() {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
        }
        result
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn nums(values: &[f64]) -> Vec<String> {
    values.iter().map(|&v| fmt_sig(v)).collect()
}

/// Grid `step·1, step·2, …, step·count`.
fn grid(step: f64, count: usize) -> impl Iterator<Item = f64> {
    (1..=count).map(move |i| step * i as f64)
}

fn lam(x: f64) -> Result<IntensityParam, CliError> {
    IntensityParam::new(x).map_err(internal)
}

/// `n,p_tmcc,p_poisson`: TMCC law and the Poisson law with the same mean.
pub fn figure1_csv(lambda: IntensityParam) -> Result<String, CliError> {
    let tmcc = tmcc_distribution(lambda, TAIL_EPS).map_err(internal)?;
    let poisson = poisson_distribution(tmcc_moments(lambda).mean, TAIL_EPS).map_err(internal)?;
    let len = tmcc.probs().len().max(poisson.probs().len());
    Ok(csv(
        "n,p_tmcc,p_poisson",
        (0..len).map(|n| {
            let mut row = vec![n.to_string()];
            row.extend(nums(&[tmcc.get(n), poisson.get(n)]));
            row
        }),
    ))
}

/// `mean_n,mandel_q` for `|λ| = 0.1, 0.2, …, 10`.
pub fn figure2_csv() -> Result<String, CliError> {
    let rows = grid(0.1, 100)
        .map(|l| {
            let m = tmcc_moments(lam(l)?);
            Ok(nums(&[m.mean, m.mandel_q]))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(csv("mean_n,mandel_q", rows))
}

/// `mean_n,sigma2_tmcc,sigma2_poisson` for `|λ| = 0.16, 0.32, …, 8`.
pub fn figure3_csv() -> Result<String, CliError> {
    let rows = grid(0.16, 50)
        .map(|l| {
            let m = tmcc_moments(lam(l)?);
            Ok(nums(&[m.mean, m.variance, m.mean]))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(csv("mean_n,sigma2_tmcc,sigma2_poisson", rows))
}

pub const SPLIT_SWEEP_STEPS: usize = 20;

/// `p,hs_dist_bob,hs_dist_eve,weak_dist` over `p = cos ψ`,
/// `ψ = (π/2)·i/20`. Distances are taken against the unsplit law; the
/// Hilbert-Schmidt columns hold the squared distance.
pub fn split_sweep_csv(lambda: IntensityParam) -> Result<String, CliError> {
    let original: DiagonalDensityMatrix = tmcc_distribution(lambda, TAIL_EPS).map_err(internal)?.into();
    let rows = (0..=SPLIT_SWEEP_STEPS)
        .map(|i| {
            let ratio = SplitRatio::from_angle(FRAC_PI_2 * i as f64 / SPLIT_SWEEP_STEPS as f64).map_err(internal)?;
            let bob: DiagonalDensityMatrix = split_marginal_bob(lambda, ratio, TAIL_EPS).map_err(internal)?.into();
            let eve: DiagonalDensityMatrix = split_marginal_eve(lambda, ratio, TAIL_EPS).map_err(internal)?.into();
            Ok(nums(&[
                ratio.p(),
                hs_distance_sq(&bob, &original),
                hs_distance_sq(&eve, &original),
                weak_distance(&bob, &original),
            ]))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(csv("p,hs_dist_bob,hs_dist_eve,weak_dist", rows))
}

/// `lambda,mean_n,mandel_q_original,mandel_q_cloned,hs_dist,weak_dist` for
/// `|λ| = 0.1, 0.2, …, 4`. `hs_dist` is the squared Hilbert-Schmidt distance.
pub fn clone_sweep_csv(strategy: CloneStrategy) -> Result<String, CliError> {
    let rows = grid(0.1, 40)
        .map(|l| {
            let lambda = lam(l)?;
            let original: DiagonalDensityMatrix = tmcc_distribution(lambda, TAIL_EPS).map_err(internal)?.into();
            let cloned = cloned_bob_matrix(lambda, strategy, TAIL_EPS).map_err(internal)?;
            let m = tmcc_moments(lambda);
            Ok(nums(&[
                l,
                m.mean,
                m.mandel_q,
                cloned.diag().moments().mandel_q,
                hs_distance_sq(&cloned, &original),
                weak_distance(&cloned, &original),
            ]))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(csv("lambda,mean_n,mandel_q_original,mandel_q_cloned,hs_dist,weak_dist", rows))
}

fn figure_csv(figure: u8, lambda: IntensityParam, strategy: CloneStrategy) -> Result<String, CliError> {
    match figure {
        1 => figure1_csv(lambda),
        2 => figure2_csv(),
        3 => figure3_csv(),
        5 => split_sweep_csv(lambda),
        6 => clone_sweep_csv(strategy),
        other => Err(internal(format!("no figure {other}"))),
    }
}

fn cmd_stats(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let figure = cfg.figure.unwrap_or(1);
    let lambda = cfg.lambda.unwrap_or(IntensityParam::ZERO);
    let out = cfg.out.clone().expect("validated");
    let mut outputs = Outputs::default();
    outputs.add(out.clone(), figure_csv(figure, lambda, cfg.clone_strategy)?);
    outputs.commit()?;
    let _ = writeln!(stdout, "wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_figures(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => lam(DEFAULT_FIGURE_LAMBDA)?,
    };
    let selected: Vec<u8> = match cfg.figure {
        Some(f) => vec![f],
        None => FIGURES.to_vec(),
    };
    // Independent sweeps run in parallel; results keep the figure order.
    let results: Vec<Result<String, CliError>> = thread::scope(|scope| {
        let handles: Vec<_> =
            selected.iter().map(|&f| scope.spawn(move || figure_csv(f, lambda, cfg.clone_strategy))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(internal("figure worker panicked")))).collect()
    });
    let dir = cfg.out.clone().expect("validated");
    let mut outputs = Outputs::default();
    for (f, csv) in selected.iter().zip(results) {
        outputs.add(dir.join(format!("fig{f}.csv")), csv?);
    }
    outputs.commit()?;
    for f in &selected {
        let _ = writeln!(stdout, "wrote {}", dir.join(format!("fig{f}.csv")).display());
    }
    Ok(EXIT_OK)
}

fn cmd_split_sweep(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let out = cfg.out.clone().expect("validated");
    let mut outputs = Outputs::default();
    outputs.add(out.clone(), split_sweep_csv(cfg.lambda.expect("validated"))?);
    outputs.commit()?;
    let _ = writeln!(stdout, "wrote {}", out.display());
    Ok(EXIT_OK)
}

/// Pulses of the scenario selected by `cfg.command`.
pub fn scenario_pulses(cfg: &RunConfig) -> Result<Vec<PulseRecord>, CliError> {
    let lambda = cfg.lambda.ok_or_else(|| usage("--lambda is required"))?;
    let source = SourceConfig::new(lambda, cfg.epsilon, cfg.seed).map_err(usage)?;
    Ok(match cfg.command {
        Command::AttackSplit => {
            let ratio = cfg.split.ok_or_else(|| usage("--split-p2 is required"))?;
            SplitSource::new(source, ratio).map_err(internal)?.pulses(cfg.pulses)
        }
        Command::AttackClone => CloneSource::new(source, cfg.clone_strategy).map_err(usage)?.pulses(cfg.pulses),
        _ => TmccSource::new(source).map_err(internal)?.pulses(cfg.pulses),
    })
}

fn detection_report(cfg: &RunConfig, counts: &[u32]) -> Result<DetectionReport, CliError> {
    let lambda = cfg.lambda.expect("validated");
    let calibration = CalibrationConfig {
        runs: cfg.calibration_runs,
        pulses_per_run: counts.len().max(1),
        seed: cfg.calibration_seed,
        ..Default::default()
    };
    let thresholds = calibrate_thresholds(lambda, calibration).map_err(internal)?;
    detect(counts, lambda, &thresholds).map_err(usage)
}

fn cmd_scenario(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let pulses = scenario_pulses(cfg)?;
    let (alice, bob) = extract_keys(&pulses, bit_threshold(cfg.lambda.expect("validated"))).map_err(usage)?;
    let counts: Vec<u32> = pulses.iter().map(|p| p.n_b).collect();
    let report = detection_report(cfg, &counts)?;

    let mut log = Vec::new();
    write_pulse_csv(&pulses, &mut log).map_err(internal)?;
    let dir = cfg.out.clone().expect("validated");
    let mut outputs = Outputs::default();
    outputs.add(dir.join(PULSES_FILE), log);
    outputs.add(dir.join(REPORT_FILE), report.to_kv_text());
    outputs.add(dir.join(ALICE_KEY_FILE), alice.to_key_file());
    outputs.add(dir.join(BOB_KEY_FILE), bob.to_key_file());
    outputs.commit()?;

    let d = Disagreement::between(alice.bits(), bob.bits());
    let _ = writeln!(stdout, "verdict: {}", report.verdict.as_str());
    let _ = writeln!(stdout, "key_bits: {}", alice.len());
    let _ = writeln!(stdout, "key_disagreements: {}", d.alice0_bob1 + d.alice1_bob0);
    let _ = writeln!(stdout, "keys_identical: {}", alice == bob);
    Ok(EXIT_OK)
}

fn cmd_detect(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let input = cfg.input.as_ref().expect("validated");
    let file = fs::File::open(input).map_err(|e| usage(format!("cannot open {}: {e}", input.display())))?;
    let pulses = read_pulse_csv(std::io::BufReader::new(file)).map_err(usage)?;
    let counts: Vec<u32> = pulses.iter().map(|p| p.n_b).collect();
    let text = detection_report(cfg, &counts)?.to_kv_text();
    match &cfg.out {
        Some(out) => {
            let mut outputs = Outputs::default();
            outputs.add(out.clone(), text);
            outputs.commit()?;
        }
        None => {
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(EXIT_OK)
}

fn cmd_reconcile(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let key_path = cfg.key.as_ref().expect("validated");
    let text = fs::read_to_string(key_path).map_err(|e| usage(format!("cannot read {}: {e}", key_path.display())))?;
    let key = KeyMaterial::parse_key_file(&text).map_err(usage)?;
    let opts = ExchangeOptions { timeout: cfg.timeout };
    let mut transcript = Transcript::default();
    let verdict = if cfg.command == Command::ReconcileServe {
        let addr = cfg.listen.as_deref().expect("validated");
        let listener = match TcpListener::bind(addr) {
            Ok(l) => l,
            Err(e) => {
                let _ = writeln!(stderr, "cannot listen on {addr}: {e}");
                let _ = writeln!(stdout, "ABORT");
                return Ok(EXIT_ABORT);
            }
        };
        if let Ok(local) = listener.local_addr() {
            let _ = writeln!(stderr, "listening on {local}");
            let _ = stderr.flush();
        }
        accept_and_reconcile(&listener, &key, opts, &mut transcript)
    } else {
        connect_and_reconcile(cfg.peer.as_deref().expect("validated"), &key, opts, &mut transcript)
    };
    if let Some(path) = &cfg.transcript {
        let mut outputs = Outputs::default();
        outputs.add(path.clone(), transcript.to_hex_log());
        outputs.commit()?;
    }
    let code = match &verdict {
        ChannelVerdict::Match => {
            let _ = writeln!(stdout, "MATCH");
            EXIT_OK
        }
        ChannelVerdict::Mismatch { length_mismatch } => {
            let _ = writeln!(stdout, "MISMATCH");
            if *length_mismatch {
                let _ = writeln!(stderr, "key lengths differ");
            }
            EXIT_MISMATCH
        }
        ChannelVerdict::Abort(reason) => {
            let _ = writeln!(stdout, "ABORT");
            let _ = writeln!(stderr, "exchange aborted: {reason:?}");
            EXIT_ABORT
        }
    };
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("tmcc-qkd").chain(args.iter().copied()), None, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
        assert_eq!(run_args(&["--version"]).0, EXIT_OK);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["stats", "--lambda", "abc"]).0, EXIT_USAGE);
        let (code, _, err) = run_args(&["simulate", "--out", "/nonexistent/x"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--lambda"), "{err}");
        assert_eq!(run_args(&["figures", "--figure", "4", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["stats", "--figure", "5", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["simulate", "--lambda", "2", "--epsilon", "0.7", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["attack-split", "--lambda", "2", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(
            run_args(&["attack-clone", "--lambda", "2", "--clone-strategy", "magic", "--out", "x"]).0,
            EXIT_USAGE
        );
        assert_eq!(run_args(&["reconcile-connect", "--key", "k"]).0, EXIT_USAGE);
    }

    #[test]
    fn flags_override_file() {
        let file = Flags { lambda: Some(1.0), seed: Some(9), ..Default::default() };
        let flags = Flags { lambda: Some(2.0), ..Default::default() };
        let merged = flags.or(file);
        assert_eq!(merged.lambda, Some(2.0));
        assert_eq!(merged.seed, Some(9));
    }

    #[test]
    fn config_keys_parse() {
        let f: Flags = serde_json::from_str(
            r#"{"lambda": 2, "split_p2": 0.5, "clone_strategy": "coherent", "output_path": "o", "peer_address": "h:1"}"#,
        )
        .unwrap();
        assert_eq!(f.split_p2, Some(0.5));
        assert_eq!(f.out, Some(PathBuf::from("o")));
        assert_eq!(f.peer.as_deref(), Some("h:1"));
        assert!(serde_json::from_str::<Flags>(r#"{"lamda": 2}"#).is_err());
    }

    #[test]
    fn vacuum_figure1_is_one_row() {
        assert_eq!(figure1_csv(IntensityParam::ZERO).unwrap(), "n,p_tmcc,p_poisson\n0,1.00000000000,1.00000000000\n");
    }

    #[test]
    fn split_sweep_endpoints() {
        let text = split_sweep_csv(IntensityParam::new(2.0).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), SPLIT_SWEEP_STEPS + 2);
        assert_eq!(lines[1], "1.00000000000,0,1.10771885925,0");
        assert!(lines.last().unwrap().starts_with("0,"));
    }
}
