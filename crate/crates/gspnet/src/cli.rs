//! Experiment configuration and the subcommand implementations.
//!
//! One TOML file describes an experiment:
//!
//! ```toml
//! [network]
//! arrival_rate = 0.2
//! service_rates = [0.15, 0.1, 0.25, 0.15, 0.2]
//!
//! [policy]
//! name = "gsp"          # gsp | ssp | ob
//! beta = 1.2
//! gamma = 1.1
//! # eta = [0.28, 0.20, 0.52]   # ob only
//!
//! [sim]
//! mode = "bernoulli_dt" # bernoulli_dt | event_driven
//! dt = 0.1
//! horizon_secs = 1e5
//! seed = 1
//!
//! [train]
//! episode_secs = 1e5
//! max_iters = 50
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every subcommand returns a serializable report; result files (CSV/JSON)
//! land in the output directory when one is configured. All JSON documents
//! carry a `schema_version` field.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    certify_drift, nast, Baseline, CertifyConfig, ComparisonTable, DriftCertificate,
};
use crate::error::{Error, Result};
use crate::learn::{optimize_bernoulli, policy_iteration, EpisodeSource, PiConfig, PiState};
use crate::network::{NetworkSpec, StabilityConstants};
use crate::plq::GspParams;
use crate::policy::{BernoulliWeights, Policy};
use crate::sim::{average_system_time, run_episode, EpisodeData, Horizon, SimConfig, SimMode};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub arrival_rate: f64,
    /// One rate per server, servers 1 through 5.
    pub service_rates: [f64; 5],
}

fn default_policy_name() -> String {
    "gsp".into()
}
fn default_ob_grid_step() -> f64 {
    0.02
}
fn default_ob_eval_secs() -> f64 {
    2e4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_policy_name")]
    pub name: String,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// Bernoulli routing probabilities, path order 12, 135, 45.
    pub eta: Option<[f64; 3]>,
    /// Simplex grid resolution used when `eta` must be searched.
    #[serde(default = "default_ob_grid_step")]
    pub ob_grid_step: f64,
    /// Simulated seconds per grid candidate.
    #[serde(default = "default_ob_eval_secs")]
    pub ob_eval_secs: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            name: default_policy_name(),
            beta: None,
            gamma: None,
            eta: None,
            ob_grid_step: default_ob_grid_step(),
            ob_eval_secs: default_ob_eval_secs(),
        }
    }
}

fn default_dt() -> f64 {
    0.1
}
fn default_horizon() -> f64 {
    1e5
}
fn default_mode() -> SimMode {
    SimMode::BernoulliDt
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_mode")]
    pub mode: SimMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon_secs: f64,
    #[serde(default)]
    pub warmup_secs: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            mode: default_mode(),
            dt: default_dt(),
            horizon_secs: default_horizon(),
            warmup_secs: 0.0,
            seed: 0,
        }
    }
}

fn default_episode_secs() -> f64 {
    1e5
}
fn default_theta() -> f64 {
    1e-3
}
fn default_max_iters() -> u32 {
    50
}
fn default_lambda0() -> f64 {
    0.1
}
fn default_mu0() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_episode_secs")]
    pub episode_secs: f64,
    #[serde(default = "default_theta")]
    pub theta_beta: f64,
    #[serde(default = "default_theta")]
    pub theta_gamma: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: u32,
    #[serde(default = "default_lambda0")]
    pub initial_lambda_hat: f64,
    /// Initial estimate applied to every server.
    #[serde(default = "default_mu0")]
    pub initial_mu_hat: f64,
    /// Use the true rates instead of estimating them.
    #[serde(default)]
    pub known_rates: bool,
    pub init_beta: Option<f64>,
    pub init_gamma: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            episode_secs: default_episode_secs(),
            theta_beta: default_theta(),
            theta_gamma: default_theta(),
            max_iters: default_max_iters(),
            initial_lambda_hat: default_lambda0(),
            initial_mu_hat: default_mu0(),
            known_rates: false,
            init_beta: None,
            init_gamma: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A parsed configuration plus the command-line overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub seed_override: Option<u64>,
    pub out_override: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        let file: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let cfg = RunConfig {
            file,
            seed_override: seed,
            out_override: out,
        };
        cfg.network()?; // fail fast on bad rates
        Ok(cfg)
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        NetworkSpec::bridge(self.file.network.service_rates, self.file.network.arrival_rate)
    }

    pub fn seed(&self) -> u64 {
        self.seed_override.unwrap_or(self.file.sim.seed)
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.out_override.clone().or_else(|| self.file.output.dir.clone())
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.file.sim;
        SimConfig {
            mode: s.mode,
            dt: s.dt,
            horizon: Horizon::Time(s.horizon_secs),
            seed: self.seed(),
            warmup: s.warmup_secs,
            initial_state: Default::default(),
        }
    }

    /// Episode settings for training: the [sim] section with the [train]
    /// episode length.
    pub fn train_sim_config(&self) -> SimConfig {
        let mut cfg = self.sim_config();
        cfg.horizon = Horizon::Time(self.file.train.episode_secs);
        cfg
    }

    pub fn pi_config(&self) -> PiConfig {
        let t = &self.file.train;
        PiConfig {
            initial_lambda_hat: t.initial_lambda_hat,
            initial_mu_hat: [t.initial_mu_hat; 5],
            theta_beta: t.theta_beta,
            theta_gamma: t.theta_gamma,
            max_iters: t.max_iters,
            init_beta: t.init_beta,
            init_gamma: t.init_gamma,
            known_rates: t.known_rates,
            source: EpisodeSource::Simulate,
        }
    }

    pub fn gsp_params(&self) -> Result<GspParams> {
        match (self.file.policy.beta, self.file.policy.gamma) {
            (Some(beta), Some(gamma)) => GspParams::new(beta, gamma),
            _ => Err(Error::ConfigInvalid(
                "[policy] beta and gamma are required for this command".into(),
            )),
        }
    }

    /// The policy named in the [policy] section.
    pub fn policy(&self, spec: &NetworkSpec) -> Result<Policy> {
        match self.file.policy.name.as_str() {
            "gsp" => Ok(Policy::gsp(self.gsp_params()?, spec.service_rates)),
            "ssp" => Ok(Policy::Ssp),
            "ob" => {
                let eta = self.file.policy.eta.ok_or_else(|| {
                    Error::ConfigInvalid("[policy] eta is required when name = \"ob\"".into())
                })?;
                Ok(Policy::Bernoulli(BernoulliWeights::new(eta)?))
            }
            other => Err(Error::ConfigInvalid(format!("unknown policy '{other}'"))),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::ConfigInvalid(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Streams the per-job records of one episode.
pub fn write_jobs_csv(path: &Path, data: &EpisodeData) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "id,path,t_arrival,t_depart,W,Q_weighted_at_arrival")?;
    for j in &data.completed_jobs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            j.id,
            j.path.label(),
            j.t_arrival,
            j.t_depart,
            j.system_time,
            j.score
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_history_csv(path: &Path, state: &PiState) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(
        out,
        "i,beta,gamma,lambda_hat,mu_hat_1,mu_hat_2,mu_hat_3,mu_hat_4,mu_hat_5,m_hat,delta_g,sse,episode_mean_w"
    )?;
    for row in &state.history {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.i,
            row.beta,
            row.gamma,
            row.lambda_hat,
            row.mu_hat[0],
            row.mu_hat[1],
            row.mu_hat[2],
            row.mu_hat[3],
            row.mu_hat[4],
            row.m_hat,
            row.delta_g,
            opt(row.sse),
            opt(row.episode_mean_w)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_drift_samples_csv(path: &Path, cert: &DriftCertificate) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "norm1,drift,bottleneck_combo")?;
    for s in &cert.samples {
        writeln!(out, "{},{},\"{}\"", s.norm1, s.drift, s.combo)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub schema_version: String,
    pub arrival_rate: f64,
    pub service_rates: [f64; 5],
    #[serde(flatten)]
    pub constants: StabilityConstants,
    /// Open interval for beta; gamma then ranges over (1, beta).
    pub beta_interval: (f64, f64),
    pub gamma_rule: String,
}

impl StabilityReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for cut in &self.constants.cuts {
            out.push_str(&format!(
                "cut {{{}}}: capacity {:.6}\n",
                cut.label(),
                cut.capacity
            ));
        }
        out.push_str(&format!(
            "min-cut capacity: {:.6}\nm: {:.6}\ndelta_G: {}\n",
            self.constants.min_cut_capacity, self.constants.m, self.constants.delta_g
        ));
        out.push_str(&format!(
            "beta in (1, {:.6}), gamma in (1, beta)\n",
            self.constants.beta_max
        ));
        out
    }
}

/// Cuts, min-cut capacity, `m`, `delta_G` and the feasible region.
pub fn cmd_stability(config: &RunConfig) -> Result<StabilityReport> {
    let spec = config.network()?;
    let constants = spec.stability_constants()?;
    let report = StabilityReport {
        schema_version: SCHEMA_VERSION.into(),
        arrival_rate: spec.arrival_rate,
        service_rates: spec.service_rates.0,
        beta_interval: (1.0, constants.beta_max),
        gamma_rule: "1 < gamma < beta".into(),
        constants,
    };
    if let Some(dir) = config.out_dir() {
        ensure_dir(&dir)?;
        write_json(&dir.join("stability.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub schema_version: String,
    pub policy: String,
    pub mode: SimMode,
    pub seed: u64,
    pub horizon_secs: f64,
    pub warmup_secs: f64,
    pub duration_secs: f64,
    pub arrivals: u64,
    pub completed: u64,
    pub censored: u64,
    pub mean_system_time: Option<f64>,
    pub time_average_queue: f64,
    pub utilizations: [f64; 5],
}

impl SimulationSummary {
    fn new(config: &RunConfig, policy: &Policy, data: &EpisodeData) -> Self {
        SimulationSummary {
            schema_version: SCHEMA_VERSION.into(),
            policy: policy.name().into(),
            mode: config.file.sim.mode,
            seed: config.seed(),
            horizon_secs: config.file.sim.horizon_secs,
            warmup_secs: config.file.sim.warmup_secs,
            duration_secs: data.duration,
            arrivals: data.arrivals,
            completed: data.completed_jobs.len() as u64,
            censored: data.censored,
            mean_system_time: average_system_time(data).ok(),
            time_average_queue: data.time_average_queue(),
            utilizations: data.utilizations(),
        }
    }

    pub fn render_text(&self) -> String {
        let mean = self
            .mean_system_time
            .map(|w| format!("{w:.4}"))
            .unwrap_or_else(|| "n/a".into());
        format!(
            "policy {} seed {}: {} arrivals, {} completed, {} censored\n\
             mean system time: {} s\ntime-average queue: {:.4} jobs\nutilizations: {:?}\n",
            self.policy,
            self.seed,
            self.arrivals,
            self.completed,
            self.censored,
            mean,
            self.time_average_queue,
            self.utilizations.map(|u| (u * 1e4).round() / 1e4),
        )
    }
}

/// Runs the configured policy once; writes `jobs.csv` and `summary.json`.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulationSummary> {
    let spec = config.network()?;
    let policy = config.policy(&spec)?;
    let data = run_episode(&spec, &policy, &config.sim_config())?;
    let summary = SimulationSummary::new(config, &policy, &data);
    if let Some(dir) = config.out_dir() {
        ensure_dir(&dir)?;
        write_jobs_csv(&dir.join("jobs.csv"), &data)?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub schema_version: String,
    pub beta: f64,
    pub gamma: f64,
    pub converged: bool,
    pub iterations: u32,
    pub lambda_hat: f64,
    pub mu_hat: [f64; 5],
    pub m_hat: f64,
    pub delta_g: u8,
    pub seed: u64,
}

impl TrainReport {
    pub fn render_text(&self) -> String {
        format!(
            "converged: {} after {} iterations\nbeta = {:.6}, gamma = {:.6}\n\
             lambda_hat = {:.6}, m_hat = {:.6}, delta_G = {}\nmu_hat = {:?}\n",
            self.converged,
            self.iterations,
            self.beta,
            self.gamma,
            self.lambda_hat,
            self.m_hat,
            self.delta_g,
            self.mu_hat.map(|u| (u * 1e6).round() / 1e6),
        )
    }
}

/// Runs policy iteration; writes `history.csv` and `params.json`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    let spec = config.network()?;
    let state = policy_iteration(&spec, &config.train_sim_config(), &config.pi_config())?;
    let report = TrainReport {
        schema_version: SCHEMA_VERSION.into(),
        beta: state.beta,
        gamma: state.gamma,
        converged: state.converged,
        iterations: state.iterations,
        lambda_hat: state.lambda_hat,
        mu_hat: state.mu_hat,
        m_hat: state.m_hat,
        delta_g: state.delta_g,
        seed: config.seed(),
    };
    if let Some(dir) = config.out_dir() {
        ensure_dir(&dir)?;
        write_history_csv(&dir.join("history.csv"), &state)?;
        write_json(&dir.join("params.json"), &report)?;
    }
    Ok(report)
}

/// Runs GSP (trained when no parameters are supplied), SSP and OB
/// (grid-optimized when no `eta` is supplied) and normalizes their mean
/// system times. Writes `comparison.csv`.
pub fn cmd_compare(config: &RunConfig, baseline_mean: Option<f64>) -> Result<ComparisonTable> {
    let spec = config.network()?;
    let sim = config.sim_config();

    let gsp_params = match config.gsp_params() {
        Ok(p) => p,
        Err(_) => {
            let state =
                policy_iteration(&spec, &config.train_sim_config(), &config.pi_config())?;
            state.params()
        }
    };
    let eta = match config.file.policy.eta {
        Some(eta) => BernoulliWeights::new(eta)?,
        None => {
            let mut search_sim = sim.clone();
            search_sim.horizon = Horizon::Time(config.file.policy.ob_eval_secs);
            optimize_bernoulli(&spec, &search_sim, config.file.policy.ob_grid_step)?.0
        }
    };

    let mut results = Vec::new();
    for policy in [
        Policy::gsp(gsp_params, spec.service_rates),
        Policy::Ssp,
        Policy::Bernoulli(eta),
    ] {
        let data = run_episode(&spec, &policy, &sim)?;
        results.push((policy.name().to_string(), average_system_time(&data)?));
    }
    let baseline = match baseline_mean {
        Some(m) => Baseline::External(m),
        None => Baseline::Best,
    };
    let table = nast(&results, &baseline)?;
    if let Some(dir) = config.out_dir() {
        ensure_dir(&dir)?;
        fs::write(dir.join("comparison.csv"), table.render_csv())?;
        write_json(&dir.join("comparison.json"), &table)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftCheckReport {
    pub schema_version: String,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon_hat: f64,
    pub c_hat: f64,
    pub shells: Vec<u32>,
    pub states_per_shell: usize,
    pub violation_count: usize,
}

impl DriftCheckReport {
    pub fn render_text(&self) -> String {
        format!(
            "drift certificate at (beta, gamma) = ({:.4}, {:.4})\n\
             epsilon_hat = {:.6}, C_hat = {:.4}\nshells {:?} x {} states\nviolations: {}\n",
            self.beta,
            self.gamma,
            self.epsilon_hat,
            self.c_hat,
            self.shells,
            self.states_per_shell,
            self.violation_count
        )
    }
}

/// Samples the drift and fits the negativity certificate; writes
/// `certificate.json` and `drift_samples.csv`.
pub fn cmd_drift_check(config: &RunConfig) -> Result<DriftCheckReport> {
    let spec = config.network()?;
    let params = config.gsp_params()?;
    let certify = CertifyConfig {
        seed: config.seed(),
        ..CertifyConfig::default()
    };
    let cert = certify_drift(&spec, &params, &certify)?;
    let report = DriftCheckReport {
        schema_version: SCHEMA_VERSION.into(),
        beta: params.beta,
        gamma: params.gamma,
        epsilon_hat: cert.epsilon_hat,
        c_hat: cert.c_hat,
        shells: cert.shells.clone(),
        states_per_shell: cert.states_per_shell,
        violation_count: cert.violations.len(),
    };
    if let Some(dir) = config.out_dir() {
        ensure_dir(&dir)?;
        write_json(&dir.join("certificate.json"), &cert)?;
        write_drift_samples_csv(&dir.join("drift_samples.csv"), &cert)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config_from(text: &str) -> RunConfig {
        let mut f = tempfile_path();
        write!(f.1, "{text}").unwrap();
        f.1.flush().unwrap();
        RunConfig::load(&f.0, None, None).unwrap()
    }

    fn tempfile_path() -> (PathBuf, fs::File) {
        let dir = std::env::temp_dir();
        let path = dir.join(format!(
            "gspnet-config-{}-{}.toml",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        let file = fs::File::create(&path).unwrap();
        (path, file)
    }

    const PAPER: &str = r#"
[network]
arrival_rate = 0.2
service_rates = [0.15, 0.1, 0.25, 0.15, 0.2]
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = config_from(PAPER);
        assert_eq!(cfg.file.sim.dt, 0.1);
        assert_eq!(cfg.file.train.max_iters, 50);
        assert_eq!(cfg.file.policy.name, "gsp");
        assert!(cfg.out_dir().is_none());
    }

    #[test]
    fn stability_report_matches_the_reference_instance() {
        let report = cmd_stability(&config_from(PAPER)).unwrap();
        assert!((report.constants.m - 1.5).abs() < 1e-12);
        assert_eq!(report.constants.delta_g, 0);
        assert_eq!(report.constants.cuts.len(), 4);
        let text = report.render_text();
        assert!(text.contains("min-cut capacity"));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("schema_version"));
    }

    #[test]
    fn gsp_simulation_requires_params() {
        let cfg = config_from(PAPER);
        match cmd_simulate(&cfg) {
            Err(Error::ConfigInvalid(_)) => {}
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let (path, mut file) = tempfile_path();
        write!(file, "{PAPER}\n[sim]\nhorizonsecs = 10\n").unwrap();
        file.flush().unwrap();
        match RunConfig::load(&path, None, None) {
            Err(Error::ConfigInvalid(_)) => {}
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn seed_override_wins() {
        let mut cfg = config_from(PAPER);
        assert_eq!(cfg.seed(), 0);
        cfg.seed_override = Some(9);
        assert_eq!(cfg.seed(), 9);
    }
}
