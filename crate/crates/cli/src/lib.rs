//! Experiment orchestration: config parsing, the simulate / estimate /
//! filter / diagnose stages, and plot-data emission.
//!
//! Every stage recomputes its prerequisites in memory from the config and
//! the seed, then writes only its own files. Nothing is read back from
//! disk between stages, so identical configs give byte-identical outputs.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use plume_core::config::{HFunction, InitialMeasure, ModelConfig, Phi0Spec};
use plume_core::ergodic;
use plume_core::estimate::{estimate_parameters, rolling_estimates, EstimationResult};
use plume_core::filter::{run_filter, FilterOutput, ResamplePolicy};
use plume_core::observe::{gen_observations, ObservationSeries};
use plume_core::quad::{GridFunction, DEFAULT_GRID_POINTS};
use plume_core::rng;
use plume_core::signal::SignalPath;
use plume_core::spectral::SpectralBasis;

/// Stage-tagged error carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2: configuration problems.
    Config(String),
    /// Exit code 3: the estimator failed to converge.
    Numeric(String),
    /// Exit code 4: filesystem problems.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<plume_core::Error> for CliError {
    fn from(e: plume_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Full experiment description: the model plus run sizes and toggles.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub n_obs: usize,
    pub m_particles: usize,
    pub init_beta: f64,
    pub init_lambda: f64,
    pub rolling_estimate_start: usize,
    pub rolling_estimate_stride: usize,
    pub resample_policy: ResamplePolicy,
    pub diag_slln: bool,
    pub diag_char_function: bool,
    pub diag_time_reversal: bool,
    pub diag_coupling: bool,
    pub diag_samples: usize,
}

/// Keys every config must or may define; anything else is rejected.
const KNOWN_KEYS: &[&str] = &[
    "a",
    "b",
    "alpha",
    "beta",
    "lambda",
    "m_bound",
    "delta",
    "h",
    "x0",
    "u0",
    "truncation_j",
    "seed",
    "keep_truth",
    "n_obs",
    "m_particles",
    "init_beta",
    "init_lambda",
    "rolling_estimate_start",
    "rolling_estimate_stride",
    "resample_policy",
    "diag_slln",
    "diag_char_function",
    "diag_time_reversal",
    "diag_coupling",
    "diag_samples",
];

fn parse_kv_text(text: &str) -> Result<HashMap<String, String>, CliError> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!(
                "line {}: duplicate key {key:?}",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

fn parse_json_text(text: &str) -> Result<HashMap<String, String>, CliError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("invalid JSON config: {e}")))?;
    let serde_json::Value::Object(obj) = value else {
        return Err(CliError::Config("JSON config must be an object".into()));
    };
    let mut map = HashMap::new();
    for (k, v) in obj {
        let s = match v {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            other => {
                return Err(CliError::Config(format!(
                    "key {k:?}: unsupported JSON value {other}"
                )))
            }
        };
        map.insert(k, s);
    }
    Ok(map)
}

struct KeyReader {
    map: HashMap<String, String>,
}

impl KeyReader {
    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Config(format!("missing required key {key:?}")))
    }

    fn optional(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn f64(&self, key: &str) -> Result<f64, CliError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::Config(format!("key {key:?}: expected a number, got {raw:?}")))
    }

    fn usize(&self, key: &str) -> Result<usize, CliError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::Config(format!("key {key:?}: expected an integer, got {raw:?}")))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.optional(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CliError::Config(format!("key {key:?}: expected an integer, got {raw:?}"))
            }),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.optional(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CliError::Config(format!("key {key:?}: expected a number, got {raw:?}"))
            }),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.optional(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(raw) => Err(CliError::Config(format!(
                "key {key:?}: expected true or false, got {raw:?}"
            ))),
        }
    }
}

fn parse_h(raw: &str) -> Result<HFunction, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    match parts.as_slice() {
        ["linear", kappa] => kappa
            .parse()
            .map(|kappa| HFunction::Linear { kappa })
            .map_err(|_| CliError::Config(format!("h: bad linear gain {kappa:?}"))),
        ["tanh", kappa, scale] => {
            let kappa: f64 = kappa
                .parse()
                .map_err(|_| CliError::Config(format!("h: bad tanh gain {kappa:?}")))?;
            let scale: f64 = scale
                .parse()
                .map_err(|_| CliError::Config(format!("h: bad tanh scale {scale:?}")))?;
            if scale <= 0.0 {
                return Err(CliError::Config("h: tanh scale must be > 0".into()));
            }
            Ok(HFunction::ScaledTanh { kappa, scale })
        }
        _ => Err(CliError::Config(format!(
            "h: expected linear:<gain> or tanh:<gain>:<scale>, got {raw:?}"
        ))),
    }
}

fn parse_u0(raw: &str) -> Result<InitialMeasure, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    match parts.as_slice() {
        ["zero"] => Ok(InitialMeasure::zero()),
        ["uniform", level] => {
            let level: f64 = level
                .parse()
                .map_err(|_| CliError::Config(format!("u0: bad uniform level {level:?}")))?;
            if level < 0.0 {
                return Err(CliError::Config("u0: uniform level must be >= 0".into()));
            }
            let g = GridFunction::constant(DEFAULT_GRID_POINTS, level)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(InitialMeasure::DensityOnGrid(g))
        }
        ["point", loc, mass] => {
            let loc: f64 = loc
                .parse()
                .map_err(|_| CliError::Config(format!("u0: bad point location {loc:?}")))?;
            let mass: f64 = mass
                .parse()
                .map_err(|_| CliError::Config(format!("u0: bad point mass {mass:?}")))?;
            Ok(InitialMeasure::PointMasses(vec![(loc, mass)]))
        }
        _ => Err(CliError::Config(format!(
            "u0: expected zero, uniform:<level> or point:<loc>:<mass>, got {raw:?}"
        ))),
    }
}

fn parse_resample(raw: &str) -> Result<ResamplePolicy, CliError> {
    if raw == "off" {
        return Ok(ResamplePolicy::Off);
    }
    if let Some(frac) = raw.strip_prefix("ess:") {
        let frac: f64 = frac
            .parse()
            .map_err(|_| CliError::Config(format!("resample_policy: bad fraction {frac:?}")))?;
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(CliError::Config(
                "resample_policy: fraction must lie in (0,1]".into(),
            ));
        }
        return Ok(ResamplePolicy::EssThreshold(frac));
    }
    Err(CliError::Config(format!(
        "resample_policy: expected off or ess:<frac>, got {raw:?}"
    )))
}

/// Parse and validate a config file (key=value text, or JSON when the
/// first non-blank byte is '{').
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<ExperimentConfig, CliError> {
    let map = if text.trim_start().starts_with('{') {
        parse_json_text(text)?
    } else {
        parse_kv_text(text)?
    };
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown key {key:?}")));
        }
    }
    let r = KeyReader { map };

    let beta = r.f64("beta")?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(CliError::Config(format!(
            "beta must lie in (0,1), got {beta}"
        )));
    }
    let seed_raw = r.require("seed")?;
    let seed: u64 = seed_raw
        .parse()
        .map_err(|_| CliError::Config(format!("key \"seed\": expected an integer, got {seed_raw:?}")))?;

    let model = ModelConfig {
        a: r.f64("a")?,
        b: r.f64("b")?,
        alpha: r.f64("alpha")?,
        beta,
        lambda: r.f64("lambda")?,
        m_bound: r.f64("m_bound")?,
        delta: r.f64("delta")?,
        h: parse_h(r.require("h")?)?,
        phi0: Phi0Spec::DiracAt(r.f64("x0")?),
        u0: parse_u0(r.optional("u0").unwrap_or("zero"))?,
        truncation_j: r.usize("truncation_j")?,
        seed,
        keep_truth: r.bool_or("keep_truth", true)?,
    };
    model.validate()?;

    let n_obs = r.usize("n_obs")?;
    if n_obs < 1 {
        return Err(CliError::Config("n_obs must be >= 1".into()));
    }
    let m_particles = r.usize("m_particles")?;
    if m_particles < 1 {
        return Err(CliError::Config("m_particles must be >= 1".into()));
    }
    let rolling_estimate_start = r.usize_or("rolling_estimate_start", (n_obs / 10).max(10))?;
    if rolling_estimate_start < 1 || rolling_estimate_start > n_obs {
        return Err(CliError::Config(format!(
            "rolling_estimate_start must lie in 1..={n_obs}"
        )));
    }
    let config = ExperimentConfig {
        model,
        n_obs,
        m_particles,
        init_beta: r.f64_or("init_beta", 1.0 / 3.0)?,
        init_lambda: r.f64_or("init_lambda", 5.0)?,
        rolling_estimate_start,
        rolling_estimate_stride: r.usize_or("rolling_estimate_stride", (n_obs / 100).max(1))?,
        resample_policy: parse_resample(r.optional("resample_policy").unwrap_or("off"))?,
        diag_slln: r.bool_or("diag_slln", true)?,
        diag_char_function: r.bool_or("diag_char_function", true)?,
        diag_time_reversal: r.bool_or("diag_time_reversal", true)?,
        diag_coupling: r.bool_or("diag_coupling", true)?,
        diag_samples: r.usize_or("diag_samples", 10_000)?,
    };
    if !(config.init_beta > 0.0 && config.init_beta < 1.0) {
        return Err(CliError::Config("init_beta must lie in (0,1)".into()));
    }
    if !(config.init_lambda > 0.0 && config.init_lambda <= config.model.m_bound) {
        return Err(CliError::Config(format!(
            "init_lambda must lie in (0, {}]",
            config.model.m_bound
        )));
    }
    Ok(config)
}

/// Simulated data shared by all stages: the signal path and its noisy
/// discrete observations.
pub struct SimulatedRun {
    pub signal: SignalPath,
    pub observations: ObservationSeries,
}

/// Rebuild the run deterministically from the config alone.
pub fn simulate_in_memory(config: &ExperimentConfig) -> Result<SimulatedRun, CliError> {
    let horizon = config.n_obs as f64 * config.model.delta;
    let mut rs = rng::stream(config.model.seed, rng::STREAM_SIGNAL);
    let signal = SignalPath::sample(&config.model, horizon, &mut rs)?;
    let mut rn = rng::stream(config.model.seed, rng::STREAM_NOISE);
    let observations = gen_observations(&signal, &config.model, config.n_obs, &mut rn)?;
    Ok(SimulatedRun {
        signal,
        observations,
    })
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// `simulate`: write jumps.csv and observations.csv.
pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let run = simulate_in_memory(config)?;
    let mut buf = Vec::new();
    run.signal
        .path
        .write_csv(&mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("jumps.csv"), &buf)?;
    let mut buf = Vec::new();
    run.observations
        .write_csv(&mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("observations.csv"), &buf)?;
    Ok(())
}

/// The estimation stage's in-memory result, reused by filter and e2e.
pub struct EstimateStage {
    pub result: EstimationResult,
    pub rolling: Vec<plume_core::estimate::RollingPoint>,
}

pub fn estimate_in_memory(
    config: &ExperimentConfig,
    run: &SimulatedRun,
) -> Result<EstimateStage, CliError> {
    let init = (config.init_beta, config.init_lambda);
    let result = estimate_parameters(&run.observations, &config.model, init)?;
    let rolling = rolling_estimates(
        &run.observations,
        &config.model,
        init,
        config.rolling_estimate_start,
        config.rolling_estimate_stride,
    )?;
    Ok(EstimateStage { result, rolling })
}

fn rolling_csv(points: &[plume_core::estimate::RollingPoint]) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "k,beta_hat,lambda_hat,residual_norm,converged").unwrap();
    for p in points {
        writeln!(
            buf,
            "{},{:.16e},{:.16e},{:.16e},{}",
            p.k, p.beta_hat, p.lambda_hat, p.residual_norm, p.converged
        )
        .unwrap();
    }
    buf
}

/// `estimate`: write estimate_trace.csv and estimate.json, print the
/// headline numbers as JSON on stdout.
pub fn cmd_estimate(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let run = simulate_in_memory(config)?;
    let stage = estimate_in_memory(config, &run)?;
    write_file(&out.join("estimate_trace.csv"), &rolling_csv(&stage.rolling))?;
    let json = serde_json::to_vec_pretty(&stage.result)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("estimate.json"), &json)?;
    println!(
        "{}",
        serde_json::json!({
            "beta_hat": stage.result.beta_hat,
            "lambda_hat": stage.result.lambda_hat,
            "n": run.observations.len(),
            "converged": stage.result.converged,
        })
    );
    if !stage.result.converged {
        return Err(CliError::Numeric(format!(
            "estimate stage: solver did not converge (residual {:.3e})",
            stage.result.residual_norm
        )));
    }
    Ok(())
}

pub fn filter_in_memory(
    config: &ExperimentConfig,
    run: &SimulatedRun,
    theta_hat: (f64, f64),
) -> Result<FilterOutput, CliError> {
    Ok(run_filter(
        &run.observations,
        &config.model,
        theta_hat,
        config.m_particles,
        config.resample_policy,
        config.model.seed,
    )?)
}

/// `filter`: estimate θ̂ from the full series, run the particle filter,
/// write filter_track.csv.
pub fn cmd_filter(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let run = simulate_in_memory(config)?;
    let stage = estimate_in_memory(config, &run)?;
    if !stage.result.converged {
        return Err(CliError::Numeric(
            "filter stage: estimator did not converge".into(),
        ));
    }
    let theta_hat = (stage.result.beta_hat, stage.result.lambda_hat);
    let output = filter_in_memory(config, &run, theta_hat)?;
    let mut buf = Vec::new();
    output
        .write_csv(&mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("filter_track.csv"), &buf)?;
    Ok(())
}

/// `diagnose`: run the toggled checks, write diagnostics.jsonl.
pub fn cmd_diagnose(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let model = &config.model;
    let mut reports: Vec<ergodic::DiagnosticsReport> = Vec::new();

    if config.diag_slln {
        let slln_n = config.diag_samples.max(2_000);
        let mut cfg = model.clone();
        cfg.u0 = InitialMeasure::zero();
        let horizon = slln_n as f64 * cfg.delta;
        let mut rs = rng::stream(cfg.seed, rng::STREAM_SIGNAL);
        let sp = SignalPath::sample(&cfg, horizon, &mut rs)?;
        let obs = gen_observations(&sp, &cfg, slln_n, &mut rng::stream(cfg.seed, rng::STREAM_NOISE))?;
        reports.extend(ergodic::slln_check(&obs, &cfg)?);
    }

    let basis = SpectralBasis::build(model.a, model.b, model.truncation_j)?;
    let f_coeffs = match &model.phi0 {
        Phi0Spec::DiracAt(x0) => basis.psi_values(*x0),
        Phi0Spec::Grid(g) => basis.grid_coeffs(g),
    };

    if config.diag_char_function {
        let t = 1.0;
        let samples =
            ergodic::sample_functionals(model, &f_coeffs, t, config.diag_samples, model.seed)?;
        for &u in &[0.5, 1.0, 2.0] {
            let emp = ergodic::char_function_empirical(&samples, u);
            let theo = ergodic::char_function_theoretical(model, &f_coeffs, u, t)?;
            let tol = 4.0 / (config.diag_samples as f64).sqrt() + 1e-6;
            reports.push(ergodic::DiagnosticsReport {
                name: format!("char_function_u{u}"),
                value: (emp - theo).norm(),
                reference: 0.0,
                tolerance: tol,
                pass: (emp - theo).norm() <= tol,
                samples: config.diag_samples,
                seed: model.seed,
            });
        }
    }

    if config.diag_time_reversal {
        reports.push(ergodic::time_reversal_check(
            model,
            &f_coeffs,
            1.0,
            config.diag_samples,
            model.seed,
            None,
        )?);
    }

    if config.diag_coupling {
        let near = ergodic::signal_coupling_l2(model, model.theta(), 1.0, 200, model.seed)?;
        reports.push(ergodic::DiagnosticsReport {
            name: "coupling_gap_at_truth".into(),
            value: near,
            reference: 0.0,
            tolerance: 0.0,
            pass: near == 0.0,
            samples: 200,
            seed: model.seed,
        });
    }

    let mut buf = Vec::new();
    for rep in &reports {
        let line = serde_json::to_string(rep).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(buf, "{line}").unwrap();
    }
    write_file(&out.join("diagnostics.jsonl"), &buf)?;
    Ok(())
}

fn fig2_csv(config: &ExperimentConfig, run: &SimulatedRun, track: &FilterOutput) -> Vec<u8> {
    let kappa = match config.model.h {
        HFunction::Linear { kappa } => kappa,
        HFunction::ScaledTanh { .. } => 1.0,
    };
    let truth = run.observations.truth_s.as_deref();
    let mut buf = Vec::new();
    writeln!(buf, "t,y_scaled,s_true,posterior_mean").unwrap();
    for (i, rec) in track.records.iter().enumerate() {
        let y_scaled = run.observations.y[i] / kappa;
        let s_true = truth.map_or(f64::NAN, |s| s[i]);
        writeln!(
            buf,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            rec.t, y_scaled, s_true, rec.posterior_mean
        )
        .unwrap();
    }
    buf
}

/// `e2e`: the full §4-style pipeline plus the figure data files.
pub fn cmd_e2e(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    cmd_simulate(config, out)?;
    let run = simulate_in_memory(config)?;
    let stage = estimate_in_memory(config, &run)?;
    write_file(&out.join("estimate_trace.csv"), &rolling_csv(&stage.rolling))?;
    let json = serde_json::to_vec_pretty(&stage.result)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("estimate.json"), &json)?;
    if !stage.result.converged {
        return Err(CliError::Numeric(
            "e2e stage: estimator did not converge".into(),
        ));
    }
    let theta_hat = (stage.result.beta_hat, stage.result.lambda_hat);
    let track = filter_in_memory(config, &run, theta_hat)?;
    let mut buf = Vec::new();
    track
        .write_csv(&mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("filter_track.csv"), &buf)?;

    // fig1: the rolling estimate trace; fig2: truth vs inverted observation
    // vs posterior mean over the filtering horizon
    let mut buf = Vec::new();
    writeln!(buf, "k,beta_hat,lambda_hat").unwrap();
    for p in &stage.rolling {
        writeln!(buf, "{},{:.16e},{:.16e}", p.k, p.beta_hat, p.lambda_hat).unwrap();
    }
    write_file(&out.join("fig1_data.csv"), &buf)?;
    write_file(&out.join("fig2_data.csv"), &fig2_csv(config, &run, &track))?;

    cmd_diagnose(config, out)?;
    Ok(())
}

/// Directory of the bundled configs, resolved relative to this crate.
pub fn bundled_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}
