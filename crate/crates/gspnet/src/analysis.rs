//! Lyapunov drift evaluation and cross-policy comparison.
//!
//! The Lyapunov function is the sum of squared path costs,
//! `V(x) = sum_p Q_p(x)^2`. Under the GSP policy the continuous-time
//! generator applied to `V` is a finite sum over the possible transitions:
//!
//! ```text
//! LV(x) = lambda * E[V(x + arrival) - V(x)]
//!       + sum_{served (n, p)} mu_n * (V(x after one class-p hop at n) - V(x))
//! ```
//!
//! Routing averages uniformly over the argmin set `P*`, and scheduling
//! averages uniformly over each server's tie set, so the reported drift is
//! the exact expectation over the policy's randomization. For feasible
//! parameters the drift is negative once the population is large; the
//! [`certify_drift`] sampler fits empirical constants `(epsilon, C)` with
//! `LV(x) <= -epsilon * ||x||_1 + C` over all sampled states.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, Server};
use crate::plq::{bottlenecks, q_values, ClassId, GspParams, PathId, TrafficState};
use crate::policy::{gsp_route_set, gsp_schedule_candidates};

/// `V(x) = sum_p Q_p(x)^2`, in squared jobs.
pub fn lyapunov_v(x: &TrafficState, beta: f64) -> f64 {
    q_values(x, beta).iter().map(|q| q * q).sum()
}

/// One transition's contribution to the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Transition {
    /// An arrival routed to `path`.
    Arrival { path: PathId },
    /// A service completion of `class` at `server` (hop or departure).
    Service { server: Server, class: ClassId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftTerm {
    pub transition: Transition,
    /// Transition rate already weighted by the tie-break probability.
    pub rate: f64,
    pub delta_v: f64,
}

/// The exact drift at one state, with its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub state: TrafficState,
    /// `P*` with the uniform routing probabilities.
    pub routing: Vec<(PathId, f64)>,
    /// Expected service rate granted to each class, `[mu_n^p]` averaged over
    /// scheduling ties.
    pub service_allocation: [f64; 7],
    pub contributions: Vec<DriftTerm>,
    /// `LV(x)`, job^2 per second.
    pub drift: f64,
}

/// Evaluates the generator of the GSP policy applied to `V` at state `x`.
/// Weight tiers use the true service rates of `spec`.
pub fn generator_drift(x: &TrafficState, params: &GspParams, spec: &NetworkSpec) -> DriftReport {
    let beta = params.beta;
    let v0 = lyapunov_v(x, beta);
    let mut contributions = Vec::new();
    let mut service_allocation = [0.0; 7];

    let route_set = gsp_route_set(x, params, &spec.service_rates);
    let route_p = 1.0 / route_set.len() as f64;
    for &path in &route_set {
        let after = x.after_arrival(path.first_class());
        contributions.push(DriftTerm {
            transition: Transition::Arrival { path },
            rate: spec.arrival_rate * route_p,
            delta_v: lyapunov_v(&after, beta) - v0,
        });
    }

    for (i, tie) in gsp_schedule_candidates(x, beta).iter().enumerate() {
        let server = i as Server + 1;
        let classes = tie.as_slice();
        if classes.is_empty() {
            continue;
        }
        let share = spec.service_rates.get(server) / classes.len() as f64;
        for &class in classes {
            service_allocation[class] += share;
            let after = x.after_service(class);
            contributions.push(DriftTerm {
                transition: Transition::Service { server, class },
                rate: share,
                delta_v: lyapunov_v(&after, beta) - v0,
            });
        }
    }

    let drift = contributions.iter().map(|t| t.rate * t.delta_v).sum();
    DriftReport {
        state: *x,
        routing: route_set.into_iter().map(|p| (p, route_p)).collect(),
        service_allocation,
        contributions,
        drift,
    }
}

#[derive(Debug, Clone)]
pub struct CertifyConfig {
    /// Population shells `||x||_1` to sample.
    pub shells: Vec<u32>,
    pub states_per_shell: usize,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            shells: vec![10, 50, 200, 1000],
            states_per_shell: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftSample {
    pub norm1: u32,
    pub drift: f64,
    /// Bottleneck combination label, identifying the linear regime.
    pub combo: String,
}

/// A sampled drift certificate.
#[derive(Debug, Clone, Serialize)]
pub struct DriftCertificate {
    /// Steepest slope supported by the worst sample on the largest shell
    /// (zero if that sample is non-negative).
    pub epsilon_hat: f64,
    /// Smallest offset making `drift <= -epsilon_hat * ||x||_1 + C` hold on
    /// every sample.
    pub c_hat: f64,
    pub shells: Vec<u32>,
    pub states_per_shell: usize,
    /// Non-negative drifts observed on the largest shell.
    pub violations: Vec<DriftSample>,
    pub samples: Vec<DriftSample>,
}

/// Draws a uniformly random composition of `total` into 7 non-negative
/// parts (stars and bars).
pub fn random_composition<R: rand::Rng + ?Sized>(total: u32, rng: &mut R) -> TrafficState {
    let n = total as usize;
    let mut bars = rand::seq::index::sample(rng, n + 6, 6).into_vec();
    bars.sort_unstable();
    let mut parts = [0u32; 7];
    let mut prev = 0usize;
    for (i, &b) in bars.iter().enumerate() {
        parts[i] = (b - prev) as u32;
        prev = b + 1;
    }
    parts[6] = (n + 6 - prev) as u32;
    debug_assert_eq!(parts.iter().sum::<u32>(), total);
    TrafficState(parts)
}

/// Samples drift across population shells and fits `(epsilon_hat, c_hat)`.
///
/// Fails with `InfeasibleParams` when `(beta, gamma)` is outside the
/// stability region: the certificate is only claimed there.
pub fn certify_drift(
    spec: &NetworkSpec,
    params: &GspParams,
    config: &CertifyConfig,
) -> Result<DriftCertificate> {
    let region = spec.feasible_region()?;
    region.check(params.beta, params.gamma)?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut states = Vec::new();
    for &shell in &config.shells {
        for _ in 0..config.states_per_shell {
            states.push(random_composition(shell, &mut rng));
        }
    }
    let samples: Vec<DriftSample> = states
        .par_iter()
        .map(|x| DriftSample {
            norm1: x.norm1() as u32,
            drift: generator_drift(x, params, spec).drift,
            combo: bottlenecks(x, params.beta).label(),
        })
        .collect();

    let largest = config.shells.iter().copied().max().unwrap_or(0);
    let epsilon_hat = samples
        .iter()
        .filter(|s| s.norm1 == largest)
        .map(|s| -s.drift / f64::from(s.norm1.max(1)))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let epsilon_hat = if epsilon_hat.is_finite() { epsilon_hat } else { 0.0 };
    let c_hat = samples
        .iter()
        .map(|s| s.drift + epsilon_hat * f64::from(s.norm1))
        .fold(f64::NEG_INFINITY, f64::max);
    let violations = samples
        .iter()
        .filter(|s| s.norm1 == largest && s.drift >= 0.0)
        .cloned()
        .collect();

    Ok(DriftCertificate {
        epsilon_hat,
        c_hat,
        shells: config.shells.clone(),
        states_per_shell: config.states_per_shell,
        violations,
        samples,
    })
}

/// One row of a policy comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub mean_system_time: f64,
    /// Mean system time normalized by the baseline's.
    pub nast: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub baseline_mean: f64,
    pub rows: Vec<ComparisonRow>,
}

/// How to normalize a comparison.
#[derive(Debug, Clone)]
pub enum Baseline {
    /// Normalize by the named policy's own mean.
    Policy(String),
    /// Normalize by an externally supplied mean (seconds).
    External(f64),
    /// Normalize by the best (smallest) observed mean.
    Best,
}

/// Builds the normalized-average-system-time table.
pub fn nast(results: &[(String, f64)], baseline: &Baseline) -> Result<ComparisonTable> {
    if results.is_empty() {
        return Err(Error::MissingBaseline("no results to normalize".into()));
    }
    for (name, mean) in results {
        if !(*mean > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "mean system time of {name} must be positive, got {mean}"
            )));
        }
    }
    let (name, mean) = match baseline {
        Baseline::External(m) => {
            if !(*m > 0.0) {
                return Err(Error::MissingBaseline(format!(
                    "external baseline must be positive, got {m}"
                )));
            }
            ("external".to_string(), *m)
        }
        Baseline::Policy(p) => results
            .iter()
            .find(|(n, _)| n == p)
            .map(|(n, m)| (n.clone(), *m))
            .ok_or_else(|| Error::MissingBaseline(format!("policy '{p}' not among results")))?,
        Baseline::Best => {
            let (n, m) = results
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty results");
            (n.clone(), *m)
        }
    };
    Ok(ComparisonTable {
        baseline: name,
        baseline_mean: mean,
        rows: results
            .iter()
            .map(|(n, m)| ComparisonRow {
                policy: n.clone(),
                mean_system_time: *m,
                nast: m / mean,
            })
            .collect(),
    })
}

impl ComparisonTable {
    /// Aligned fixed-width rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "baseline: {} (mean system time {:.4} s)\n",
            self.baseline, self.baseline_mean
        ));
        out.push_str(&format!("{:<10} {:>18} {:>8}\n", "policy", "mean system (s)", "NAST"));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>18.4} {:>8.4}\n",
                row.policy, row.mean_system_time, row.nast
            ));
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("policy,mean_system_time,nast\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                row.policy, row.mean_system_time, row.nast
            ));
        }
        out
    }
}

/// Per-server utilizations implied by flow balance under Bernoulli routing.
pub fn flow_utilizations(spec: &NetworkSpec, eta: &crate::policy::BernoulliWeights) -> [f64; 5] {
    let lambda = spec.arrival_rate;
    let e12 = eta.get(PathId::P12);
    let e135 = eta.get(PathId::P135);
    let e45 = eta.get(PathId::P45);
    let flows = [
        lambda * (e12 + e135),
        lambda * e12,
        lambda * e135,
        lambda * e45,
        lambda * (e135 + e45),
    ];
    core::array::from_fn(|i| flows[i] / spec.service_rates.0[i])
}

/// Product-form prediction of the mean system time under Bernoulli routing
/// with FIFO servers: `E[T] = (1/lambda) * sum_n rho_n / (1 - rho_n)`.
pub fn jackson_mean_system_time(
    spec: &NetworkSpec,
    eta: &crate::policy::BernoulliWeights,
) -> Result<f64> {
    if !(spec.arrival_rate > 0.0) {
        return Err(Error::ConfigInvalid(
            "product-form mean needs a positive arrival rate".into(),
        ));
    }
    let rho = flow_utilizations(spec, eta);
    if let Some((i, r)) = rho.iter().enumerate().find(|(_, r)| **r >= 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "server {} overloaded under eta (rho = {r})",
            i + 1
        )));
    }
    Ok(rho.iter().map(|r| r / (1.0 - r)).sum::<f64>() / spec.arrival_rate)
}

/// Expands a drift transition into the post-transition state (used by tests
/// and the CSV writer).
pub fn transition_target(x: &TrafficState, t: &Transition) -> TrafficState {
    match t {
        Transition::Arrival { path } => x.after_arrival(path.first_class()),
        Transition::Service { class, .. } => x.after_service(*class),
    }
}
