//! Fits the policy parameters to realized system times.
//!
//! Each completed job contributes a row `(x, p, W)`: the pre-arrival state,
//! the chosen path, and the realized system time. The weighted path cost
//! `gamma_p(B(x; beta)) * Q_p(x; beta)` is fitted to `W` in least squares,
//! one parameter at a time:
//!
//! - `beta`: the active segment and weight tier of every row are frozen at
//!   the current `beta`, the resulting smooth objective is minimized over
//!   the feasible interval, and the partition is recomputed at the new
//!   value; the alternation stops when the partition stabilizes, the
//!   objective stops improving, or a round cap is hit. The true objective
//!   never increases across rounds.
//! - `gamma`: the weight exponent of every row is frozen at the fitted
//!   `beta`, leaving `sum (gamma^e Q - W)^2` to minimize over `(1, beta)`.
//!
//! The policy-iteration loop alternates simulation episodes with these fits
//! while calibrating the arrival and service rates from the same episodes;
//! the feasible region is recomputed from the refreshed estimates every
//! iteration, so the learned pair always satisfies the stability constraint
//! under the current belief.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::flow_utilizations;
use crate::error::{Error, Result};
use crate::network::{FeasibleRegion, NetworkSpec, ServiceRates};
use crate::plq::{
    active_segment, bottlenecks, q_value, weight_exponents, GspParams, PathId, TrafficState,
};
use crate::policy::{BernoulliWeights, Policy};
use crate::sim::{average_system_time, run_episode, EpisodeData, RateEstimator, SimConfig};

/// Argument tolerance of the scalar minimizer.
const MINIMIZER_TOL: f64 = 1e-6;
/// Cap on the partition/minimize alternation.
const MAX_PARTITION_ROUNDS: usize = 20;
/// Coarse bracketing grid preceding golden-section refinement.
const SCAN_POINTS: usize = 64;

/// One observation: pre-arrival state, chosen path, realized system time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRow {
    pub x: TrafficState,
    pub path: PathId,
    pub w: f64,
}

/// Observations of one episode, restricted to positive system times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDataset {
    rows: Vec<FitRow>,
}

impl FitDataset {
    pub fn new(rows: impl IntoIterator<Item = FitRow>) -> Self {
        FitDataset {
            rows: rows.into_iter().filter(|r| r.w > 0.0).collect(),
        }
    }

    pub fn from_episode(data: &EpisodeData) -> Self {
        Self::new(data.completed_jobs.iter().map(|j| FitRow {
            x: j.pre_state,
            path: j.path,
            w: j.system_time,
        }))
    }

    pub fn rows(&self) -> &[FitRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Sum of squared residuals `(gamma^e(x;beta) * Q_p(x;beta) - W)^2`, with the
/// bottleneck combination and weight tier recomputed per row.
pub fn sse(dataset: &FitDataset, beta: f64, gamma: f64, rates: &ServiceRates) -> f64 {
    dataset
        .rows
        .iter()
        .map(|r| {
            let e = weight_exponents(bottlenecks(&r.x, beta), rates)[r.path.index()];
            let resid = gamma.powi(i32::from(e)) * q_value(r.path, &r.x, beta) - r.w;
            resid * resid
        })
        .sum()
}

/// Coarse grid scan plus golden-section refinement on the winning bracket.
fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    debug_assert!(hi > lo);
    let step = (hi - lo) / SCAN_POINTS as f64;
    let mut best_i = 0usize;
    let mut best_v = f64::INFINITY;
    for i in 0..=SCAN_POINTS {
        let v = f(lo + step * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    // Return the best probe seen, including the grid winner.
    let candidates = [mid, x1, x2, lo + step * best_i as f64];
    candidates
        .into_iter()
        .min_by(|p, q| f(*p).total_cmp(&f(*q)))
        .unwrap()
}

/// Per-row frozen structure: active segment index and weight exponent.
type Partition = Vec<(u8, u8)>;

fn partition_at(dataset: &FitDataset, beta: f64, rates: &ServiceRates) -> Partition {
    dataset
        .rows
        .iter()
        .map(|r| {
            let seg = active_segment(r.path, &r.x, beta);
            let e = weight_exponents(bottlenecks(&r.x, beta), rates)[r.path.index()];
            (seg.index as u8, e)
        })
        .collect()
}

/// Least-squares update of `beta` at fixed `gamma` by the partition method.
/// Returns `beta_prev` when the dataset is empty or carries no information.
pub fn fit_beta(
    dataset: &FitDataset,
    beta_prev: f64,
    gamma_fixed: f64,
    region: &FeasibleRegion,
    rates: &ServiceRates,
) -> f64 {
    if dataset.is_empty() {
        return beta_prev;
    }
    let (lo, hi) = region.beta_bounds();
    let mut beta = beta_prev.clamp(lo, hi);
    let mut best = sse(dataset, beta, gamma_fixed, rates);
    let mut part = partition_at(dataset, beta, rates);

    for _round in 0..MAX_PARTITION_ROUNDS {
        // Freeze each row to (coefficient, beta exponent, target).
        let frozen: Vec<(f64, i32, f64)> = dataset
            .rows
            .iter()
            .zip(&part)
            .map(|(r, &(seg, e))| {
                let classes = r.path.classes();
                let prefix: u32 = classes[..=seg as usize].iter().map(|&c| r.x.get(c)).sum();
                let coeff = gamma_fixed.powi(i32::from(e)) * f64::from(prefix);
                (coeff, 2 - i32::from(seg), r.w)
            })
            .collect();
        let surrogate = |b: f64| {
            frozen
                .iter()
                .map(|&(a, s, w)| {
                    let r = a * b.powi(s) - w;
                    r * r
                })
                .sum::<f64>()
        };
        let cand = minimize_scalar(&surrogate, lo, hi, MINIMIZER_TOL);
        let cand_sse = sse(dataset, cand, gamma_fixed, rates);
        if cand_sse < best - 1e-12 * (1.0 + best) {
            debug_assert!(cand_sse <= best, "objective increased across a fit round");
            beta = cand;
            best = cand_sse;
        } else {
            break;
        }
        let next = partition_at(dataset, beta, rates);
        if next == part {
            break;
        }
        part = next;
    }

    // Direct pass over the true objective in case the partition alternation
    // stalled short of the region minimum.
    let direct = minimize_scalar(|b| sse(dataset, b, gamma_fixed, rates), lo, hi, MINIMIZER_TOL);
    if sse(dataset, direct, gamma_fixed, rates) < best - 1e-12 * (1.0 + best) {
        beta = direct;
    }
    beta.clamp(lo, hi)
}

/// Least-squares update of `gamma` at fixed `beta`: every row's weight
/// exponent is frozen from the bottleneck combination at `beta`, then
/// `sum (gamma^e Q - W)^2` is minimized over `(1, beta)`. A flat objective
/// (all exponents zero) returns `gamma_prev` unchanged.
pub fn fit_gamma(
    dataset: &FitDataset,
    beta_fixed: f64,
    gamma_prev: f64,
    region: &FeasibleRegion,
    rates: &ServiceRates,
) -> f64 {
    let (lo, hi) = region.gamma_bounds(beta_fixed);
    if dataset.is_empty() || hi <= lo {
        return gamma_prev.clamp(lo, hi.max(lo));
    }
    let frozen: Vec<(u8, f64, f64)> = dataset
        .rows
        .iter()
        .map(|r| {
            let e = weight_exponents(bottlenecks(&r.x, beta_fixed), rates)[r.path.index()];
            (e, q_value(r.path, &r.x, beta_fixed), r.w)
        })
        .collect();
    if frozen.iter().all(|&(e, _, _)| e == 0) {
        return gamma_prev.clamp(lo, hi);
    }
    let obj = |g: f64| {
        frozen
            .iter()
            .map(|&(e, q, w)| {
                let r = g.powi(i32::from(e)) * q - w;
                r * r
            })
            .sum::<f64>()
    };
    minimize_scalar(obj, lo, hi, MINIMIZER_TOL).clamp(lo, hi)
}

/// Where policy iteration gets its per-iteration datasets.
#[derive(Debug, Clone)]
pub enum EpisodeSource {
    /// Simulate the network each iteration (rate estimation active unless
    /// `known_rates` is set).
    Simulate,
    /// Refit against the same fixed dataset every iteration; rates are taken
    /// as known. Used for replay validation.
    Replay(FitDataset),
}

#[derive(Debug, Clone)]
pub struct PiConfig {
    pub initial_lambda_hat: f64,
    pub initial_mu_hat: [f64; 5],
    pub theta_beta: f64,
    pub theta_gamma: f64,
    pub max_iters: u32,
    /// Starting pair; interval midpoints of the initial believed region when
    /// unset.
    pub init_beta: Option<f64>,
    pub init_gamma: Option<f64>,
    /// Skip estimation and drive tiers/regions with the true rates.
    pub known_rates: bool,
    pub source: EpisodeSource,
}

impl Default for PiConfig {
    fn default() -> Self {
        PiConfig {
            initial_lambda_hat: 0.1,
            initial_mu_hat: [0.5; 5],
            theta_beta: 1e-3,
            theta_gamma: 1e-3,
            max_iters: 50,
            init_beta: None,
            init_gamma: None,
            known_rates: false,
            source: EpisodeSource::Simulate,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Serialize)]
pub struct PiIteration {
    pub i: u32,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_hat: f64,
    pub mu_hat: [f64; 5],
    pub m_hat: f64,
    pub delta_g: u8,
    pub sse: Option<f64>,
    pub episode_mean_w: Option<f64>,
}

/// Final state of the policy-iteration loop.
#[derive(Debug, Clone, Serialize)]
pub struct PiState {
    pub beta: f64,
    pub gamma: f64,
    pub converged: bool,
    pub iterations: u32,
    pub lambda_hat: f64,
    pub mu_hat: [f64; 5],
    pub m_hat: f64,
    pub delta_g: u8,
    pub history: Vec<PiIteration>,
}

impl PiState {
    pub fn params(&self) -> GspParams {
        GspParams {
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

/// Runs GSP policy iteration: simulate under the current pair, refresh the
/// cumulative rate estimates, recompute the believed feasible region, refit
/// `beta` then `gamma`, and stop once both move less than their thresholds.
///
/// `spec` drives the simulated dynamics only; the controller sees it through
/// the estimates unless `known_rates` is set.
pub fn policy_iteration(
    spec: &NetworkSpec,
    sim: &SimConfig,
    config: &PiConfig,
) -> Result<PiState> {
    let mut estimator = RateEstimator::new(config.initial_lambda_hat, config.initial_mu_hat);
    let replay_mode = matches!(config.source, EpisodeSource::Replay(_));
    let believed = |est: &RateEstimator| -> Result<(NetworkSpec, FeasibleRegion)> {
        let net = if config.known_rates || replay_mode {
            spec.clone()
        } else {
            est.believed_network()?
        };
        let region = net.feasible_region()?;
        Ok((net, region))
    };

    let (net, region) = believed(&estimator)?;
    let (mid_beta, mid_gamma) = region.midpoint();
    let (mut beta, mut gamma) = region.clamp(
        config.init_beta.unwrap_or(mid_beta),
        config.init_gamma.unwrap_or(mid_gamma),
    );
    let mut history = vec![PiIteration {
        i: 0,
        beta,
        gamma,
        lambda_hat: net.arrival_rate,
        mu_hat: net.service_rates.0,
        m_hat: region.m,
        delta_g: region.delta_g,
        sse: None,
        episode_mean_w: None,
    }];

    let mut converged = false;
    let mut iterations = 0;
    let mut final_net = net;
    let mut final_region = region;
    for i in 1..=config.max_iters {
        iterations = i;
        let (dataset, mean_w) = match &config.source {
            EpisodeSource::Replay(d) => (d.clone(), None),
            EpisodeSource::Simulate => {
                let mut episode_cfg = sim.clone();
                episode_cfg.seed = sim.seed.wrapping_add(u64::from(i));
                let tier_rates = if config.known_rates {
                    spec.service_rates
                } else {
                    estimator.mu_hat()
                };
                let params = GspParams { beta, gamma };
                let policy = Policy::Gsp { params, tier_rates };
                let data = run_episode(spec, &policy, &episode_cfg)?;
                if !config.known_rates {
                    estimator.update(&data);
                }
                let mean_w = average_system_time(&data).ok();
                (FitDataset::from_episode(&data), mean_w)
            }
        };

        let (net, region) = believed(&estimator)?;
        // The region moved with the estimates; project the starting point
        // into it before fitting.
        let (start_beta, start_gamma) = region.clamp(beta, gamma);
        let rates = net.service_rates;
        let beta_new = fit_beta(&dataset, start_beta, start_gamma, &region, &rates);
        let gamma_new = fit_gamma(&dataset, beta_new, start_gamma, &region, &rates);
        debug_assert!(region.contains(beta_new, gamma_new));
        history.push(PiIteration {
            i,
            beta: beta_new,
            gamma: gamma_new,
            lambda_hat: net.arrival_rate,
            mu_hat: net.service_rates.0,
            m_hat: region.m,
            delta_g: region.delta_g,
            sse: Some(sse(&dataset, beta_new, gamma_new, &rates)),
            episode_mean_w: mean_w,
        });
        // Compare against the parameters the episode actually ran with.
        let done = (beta_new - beta).abs() < config.theta_beta
            && (gamma_new - gamma).abs() < config.theta_gamma;
        beta = beta_new;
        gamma = gamma_new;
        final_net = net;
        final_region = region;
        if done {
            converged = true;
            break;
        }
    }

    Ok(PiState {
        beta,
        gamma,
        converged,
        iterations,
        lambda_hat: final_net.arrival_rate,
        mu_hat: final_net.service_rates.0,
        m_hat: final_region.m,
        delta_g: final_region.delta_g,
        history,
    })
}

/// Exhaustive simplex grid search for the best Bernoulli split.
///
/// Every grid point with all flow-balance utilizations below 1 is simulated
/// under `sim` (one common seed, so candidates share random numbers) and the
/// smallest mean system time wins. Candidates without a single completed job
/// are treated as infinitely bad.
pub fn optimize_bernoulli(
    spec: &NetworkSpec,
    sim: &SimConfig,
    grid_step: f64,
) -> Result<(BernoulliWeights, f64)> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "grid step must lie in (0, 1], got {grid_step}"
        )));
    }
    let n = (1.0 / grid_step).round();
    if (n * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::ConfigInvalid(format!(
            "grid step {grid_step} must divide 1"
        )));
    }
    let n = n as u32;
    let mut candidates = Vec::new();
    for i in 0..=n {
        for j in 0..=(n - i) {
            let k = n - i - j;
            let eta = BernoulliWeights([
                f64::from(i) / f64::from(n),
                f64::from(j) / f64::from(n),
                f64::from(k) / f64::from(n),
            ]);
            if flow_utilizations(spec, &eta).iter().all(|&r| r < 1.0) {
                candidates.push(eta);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoFeasibleCandidate);
    }

    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|eta| {
            let data = run_episode(spec, &Policy::Bernoulli(*eta), sim)?;
            Ok(average_system_time(&data).unwrap_or(f64::INFINITY))
        })
        .collect::<Result<Vec<f64>>>()?;

    let (best, score) = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .expect("nonempty candidate set");
    if !score.is_finite() {
        return Err(Error::NoFeasibleCandidate);
    }
    Ok((candidates[best], *score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plq::path_weights;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn paper() -> NetworkSpec {
        NetworkSpec::reference()
    }

    fn region() -> FeasibleRegion {
        paper().feasible_region().unwrap()
    }

    /// Noiseless dataset: `W` is exactly the weighted cost at the generator
    /// parameters.
    fn synthetic(beta0: f64, gamma0: f64, rows: usize, seed: u64) -> FitDataset {
        let rates = paper().service_rates;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < rows {
            let x = TrafficState(core::array::from_fn(|_| rng.random_range(0..8)));
            let path = PathId::ALL[out.len() % 3];
            let w = path_weights(bottlenecks(&x, beta0), &rates, gamma0).value(path)
                * q_value(path, &x, beta0);
            if w > 0.0 {
                out.push(FitRow { x, path, w });
            }
        }
        FitDataset::new(out)
    }

    #[test]
    fn sse_is_zero_on_noiseless_data() {
        let d = synthetic(1.15, 1.05, 200, 1);
        assert!(sse(&d, 1.15, 1.05, &paper().service_rates) < 1e-18);
    }

    #[test]
    fn sse_single_row() {
        // Equal rates put every path in the unit tier; beta = 1.25 with
        // x2^12 = 8 gives Q12 = 1.25 * 8 = 10, so the residual against
        // W = 8 is 2.
        let rates = ServiceRates::uniform(0.3);
        let d = FitDataset::new([FitRow {
            x: TrafficState([0, 0, 8, 0, 0, 0, 0]),
            path: PathId::P12,
            w: 8.0,
        }]);
        assert_relative_eq!(sse(&d, 1.25, 1.1, &rates), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn sse_grid_minimum_sits_at_the_generator() {
        let d = synthetic(1.15, 1.05, 300, 2);
        let rates = paper().service_rates;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut b = 1.005;
        while b < 1.2247 {
            let mut g = 1.005;
            while g < b {
                let v = sse(&d, b, g, &rates);
                if v < best.0 {
                    best = (v, b, g);
                }
                g += 0.005;
            }
            b += 0.005;
        }
        assert_relative_eq!(best.1, 1.15, epsilon = 2.6e-3);
        assert_relative_eq!(best.2, 1.05, epsilon = 2.6e-3);
    }

    #[test]
    fn fit_beta_recovers_the_generator() {
        let d = synthetic(1.15, 1.05, 400, 3);
        let got = fit_beta(&d, 1.05, 1.05, &region(), &paper().service_rates);
        assert!((got - 1.15).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn fit_beta_monotone_objective_hits_the_upper_bound() {
        // Targets far above any attainable cost push beta to the boundary.
        let rows: Vec<FitRow> = (1..20)
            .map(|i| FitRow {
                x: TrafficState([i, 0, 3, 0, 0, 0, 0]),
                path: PathId::P12,
                w: 1e4,
            })
            .collect();
        let d = FitDataset::new(rows);
        let r = region();
        let got = fit_beta(&d, 1.1, 1.05, &r, &paper().service_rates);
        let (_, hi) = r.beta_bounds();
        assert_relative_eq!(got, hi, epsilon = 1e-5);
    }

    #[test]
    fn fit_beta_single_row_root() {
        // One row with the head segment active: Q = beta^2, W = 1.1^2.
        let rates = ServiceRates::uniform(0.3);
        let d = FitDataset::new([FitRow {
            x: TrafficState([1, 0, 0, 0, 0, 0, 0]),
            path: PathId::P12,
            w: 1.21,
        }]);
        let got = fit_beta(&d, 1.2, 1.05, &region(), &rates);
        assert!((got - 1.1).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn fit_beta_keeps_previous_on_empty_data() {
        let got = fit_beta(&FitDataset::default(), 1.17, 1.05, &region(), &paper().service_rates);
        assert_eq!(got, 1.17);
    }

    #[test]
    fn fit_gamma_flat_objective_returns_previous() {
        // Equal rates: every exponent is 0, so gamma carries no information.
        let rates = ServiceRates::uniform(0.3);
        let d = FitDataset::new([FitRow {
            x: TrafficState([1, 2, 3, 0, 0, 1, 0]),
            path: PathId::P135,
            w: 4.0,
        }]);
        let got = fit_gamma(&d, 1.2, 1.07, &region(), &rates);
        assert_relative_eq!(got, 1.07, max_relative = 1e-12);
    }

    #[test]
    fn fit_gamma_recovers_the_generator() {
        let d = synthetic(1.15, 1.05, 400, 4);
        let got = fit_gamma(&d, 1.15, 1.1, &region(), &paper().service_rates);
        assert!((got - 1.05).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn fit_gamma_matches_the_closed_form() {
        // Rows with exponent 1 only: W = 1.08 Q exactly, so the weighted
        // least-squares solution is gamma = sum(QW)/sum(Q^2) = 1.08.
        let rates = paper().service_rates;
        let beta = 1.2;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        while rows.len() < 50 {
            let x = TrafficState(core::array::from_fn(|_| rng.random_range(0..6)));
            let exps = weight_exponents(bottlenecks(&x, beta), &rates);
            for path in PathId::ALL {
                let q = q_value(path, &x, beta);
                if exps[path.index()] == 1 && q > 0.0 {
                    rows.push(FitRow { x, path, w: 1.08 * q });
                }
            }
        }
        let d = FitDataset::new(rows);
        let got = fit_gamma(&d, beta, 1.02, &region(), &rates);
        assert!((got - 1.08).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn replay_is_a_fixed_point_at_the_generator() {
        let d = synthetic(1.12, 1.06, 300, 6);
        let config = PiConfig {
            init_beta: Some(1.12),
            init_gamma: Some(1.06),
            known_rates: true,
            source: EpisodeSource::Replay(d),
            max_iters: 5,
            ..PiConfig::default()
        };
        let state = policy_iteration(&paper(), &SimConfig::default(), &config).unwrap();
        assert!(state.converged);
        assert!((state.beta - 1.12).abs() < 1e-9, "beta {}", state.beta);
        assert!((state.gamma - 1.06).abs() < 1e-9, "gamma {}", state.gamma);
    }

    #[test]
    fn replay_recovers_the_generator_from_the_midpoint() {
        let d = synthetic(1.18, 1.04, 500, 7);
        let config = PiConfig {
            known_rates: true,
            source: EpisodeSource::Replay(d),
            ..PiConfig::default()
        };
        let state = policy_iteration(&paper(), &SimConfig::default(), &config).unwrap();
        assert!(state.converged, "no convergence in {} iters", state.iterations);
        assert!((state.beta - 1.18).abs() < 1e-3, "beta {}", state.beta);
        assert!((state.gamma - 1.04).abs() < 1e-3, "gamma {}", state.gamma);
    }

    #[test]
    fn zero_iterations_emit_the_initial_pair_only() {
        let config = PiConfig {
            max_iters: 0,
            known_rates: true,
            ..PiConfig::default()
        };
        let state = policy_iteration(&paper(), &SimConfig::default(), &config).unwrap();
        assert_eq!(state.history.len(), 1);
        assert!(!state.converged);
        let r = region();
        assert!(r.contains(state.beta, state.gamma));
    }

    #[test]
    fn policy_iteration_rejects_unstabilizable_beliefs() {
        let spec = NetworkSpec::bridge([0.15, 0.1, 0.25, 0.15, 0.2], 0.31).unwrap();
        let config = PiConfig {
            known_rates: true,
            ..PiConfig::default()
        };
        match policy_iteration(&spec, &SimConfig::default(), &config) {
            Err(Error::NotStabilizable { .. }) => {}
            other => panic!("expected NotStabilizable, got {other:?}"),
        }
    }

    #[test]
    fn bernoulli_grid_validates_the_step() {
        let sim = SimConfig::default();
        assert!(matches!(
            optimize_bernoulli(&paper(), &sim, 0.3),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(matches!(
            optimize_bernoulli(&paper(), &sim, 0.0),
            Err(Error::ConfigInvalid(_))
        ));
    }

    #[test]
    fn bernoulli_grid_skips_overloaded_candidates() {
        // lambda above every single-server rate: the degenerate corners
        // (1,0,0), (0,1,0), (0,0,1) all overload some server, so they must
        // not be evaluated; a balanced split is still feasible.
        let spec = NetworkSpec::bridge([0.5, 0.3, 0.5, 0.3, 0.5], 0.4).unwrap();
        let sim = SimConfig {
            horizon: crate::sim::Horizon::Time(2000.0),
            seed: 13,
            ..SimConfig::default()
        };
        let (eta, mean) = optimize_bernoulli(&spec, &sim, 0.25).unwrap();
        assert!(flow_utilizations(&spec, &eta).iter().all(|&r| r < 1.0));
        assert!(mean.is_finite() && mean > 0.0);
    }
}
