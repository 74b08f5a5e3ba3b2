//! Network simulation in two modes.
//!
//! - `BernoulliDt`: a fixed grid of `dt`-second steps. Per step, every busy
//!   server completes its in-service job with probability `mu_n * dt` and an
//!   arrival occurs with probability `lambda * dt`. Servers are processed
//!   downstream first, in the order `[2, 5, 3, 4, 1]`, so a job never hops
//!   through two servers in one step; the arrival comes last and is routed on
//!   the pre-arrival state. Scheduling is re-evaluated at every server's turn
//!   so each decision sees the freshest state.
//! - `EventDriven`: the exact continuous-time chain. The next event is the
//!   winner of the exponential race between the arrival clock and the busy
//!   servers' completion clocks; memorylessness lets every decision change
//!   restart the clocks.
//!
//! Preemption is free of charge: the scheduling rule may switch a server
//! between classes at any decision point, and a preempted job keeps the
//! service time it has already accumulated (its clock pauses). Service-time
//! samples therefore measure pure in-service time and estimate `1/mu_n`
//! without queueing bias.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, ServiceRates, Server};
use crate::plq::{ClassId, PathId, TrafficState, CLASS_NEXT, SERVER_CLASSES};
use crate::policy::Policy;

/// Downstream-first processing order for the Bernoulli grid.
const DT_SERVER_ORDER: [Server; 5] = [2, 5, 3, 4, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    BernoulliDt,
    EventDriven,
}

/// Episode length: wall-clock seconds of simulated time, or a number of
/// transition epochs (grid steps in `BernoulliDt` mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Time(f64),
    Epochs(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: SimMode,
    /// Step length for `BernoulliDt`, seconds.
    pub dt: f64,
    pub horizon: Horizon,
    pub seed: u64,
    /// Seconds excluded from all metrics at the start of the episode.
    pub warmup: f64,
    /// Starting queue contents; synthesized jobs carry arrival time 0.
    pub initial_state: TrafficState,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: SimMode::BernoulliDt,
            dt: 0.1,
            horizon: Horizon::Time(1e5),
            seed: 0,
            warmup: 0.0,
            initial_state: TrafficState::EMPTY,
        }
    }
}

impl SimConfig {
    fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::ConfigInvalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.warmup < 0.0 {
            return Err(Error::ConfigInvalid("warmup must be non-negative".into()));
        }
        if let Horizon::Time(t) = self.horizon {
            if !(t > 0.0) {
                return Err(Error::ConfigInvalid(format!("horizon must be positive, got {t}")));
            }
            if self.warmup >= t {
                return Err(Error::ConfigInvalid(format!(
                    "warmup {} must be shorter than the horizon {t}",
                    self.warmup
                )));
            }
        }
        if self.mode == SimMode::BernoulliDt {
            if spec.arrival_rate * self.dt >= 1.0 {
                return Err(Error::ConfigInvalid(format!(
                    "lambda * dt = {} must be below 1",
                    spec.arrival_rate * self.dt
                )));
            }
            for s in 1..=5u8 {
                let p = spec.service_rates.get(s) * self.dt;
                if p >= 1.0 {
                    return Err(Error::ConfigInvalid(format!(
                        "mu_{s} * dt = {p} must be below 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One completed job.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub id: u64,
    pub path: PathId,
    pub t_arrival: f64,
    pub t_depart: f64,
    /// System time `t_depart - t_arrival`; positive for every record.
    pub system_time: f64,
    /// The state the router observed (the arriving job excluded).
    pub pre_state: TrafficState,
    /// The policy's score of the chosen path at `pre_state`.
    pub score: f64,
}

/// Everything measured over one episode, metrics restricted to the
/// post-warmup window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeData {
    pub completed_jobs: Vec<JobRecord>,
    pub interarrival_samples: Vec<f64>,
    /// Pure in-service durations per server, indexed by `server - 1`.
    pub service_samples: [Vec<f64>; 5],
    /// Integral of the total population over the metrics window, job*sec.
    pub time_integral_queue: f64,
    /// Length of the metrics window, sec.
    pub duration: f64,
    /// Jobs that entered the system inside the metrics window.
    pub arrivals: u64,
    /// Jobs from the metrics window still in the network at the horizon.
    pub censored: u64,
    /// Time each server spent serving, indexed by `server - 1`, sec.
    pub busy_time: [f64; 5],
    pub final_state: TrafficState,
}

impl EpisodeData {
    /// Time-average total population over the metrics window.
    pub fn time_average_queue(&self) -> f64 {
        if self.duration > 0.0 {
            self.time_integral_queue / self.duration
        } else {
            0.0
        }
    }

    /// Fraction of the metrics window each server was busy.
    pub fn utilizations(&self) -> [f64; 5] {
        if self.duration > 0.0 {
            self.busy_time.map(|b| b / self.duration)
        } else {
            [0.0; 5]
        }
    }
}

/// Mean system time over the completed jobs.
pub fn average_system_time(data: &EpisodeData) -> Result<f64> {
    if data.completed_jobs.is_empty() {
        return Err(Error::NoCompletedJobs);
    }
    let total: f64 = data.completed_jobs.iter().map(|j| j.system_time).sum();
    Ok(total / data.completed_jobs.len() as f64)
}

struct Job {
    path: PathId,
    t_arrival: f64,
    pre_state: TrafficState,
    score: f64,
    /// When the job joined its current server's queue (FIFO arbitration).
    joined: f64,
    /// In-service time accumulated at the current server.
    served: f64,
}

struct Engine<'a> {
    spec: &'a NetworkSpec,
    policy: &'a Policy,
    rng: ChaCha12Rng,
    warmup: f64,
    now: f64,
    x: TrafficState,
    queues: [VecDeque<u64>; 7],
    jobs: Vec<Job>,
    completed: Vec<JobRecord>,
    interarrival: Vec<f64>,
    service_samples: [Vec<f64>; 5],
    time_integral: f64,
    busy_time: [f64; 5],
    arrivals: u64,
    last_arrival: f64,
}

impl<'a> Engine<'a> {
    fn new(spec: &'a NetworkSpec, policy: &'a Policy, config: &SimConfig) -> Self {
        let mut engine = Engine {
            spec,
            policy,
            rng: ChaCha12Rng::seed_from_u64(config.seed),
            warmup: config.warmup,
            now: 0.0,
            x: TrafficState::EMPTY,
            queues: Default::default(),
            jobs: Vec::new(),
            completed: Vec::new(),
            interarrival: Vec::new(),
            service_samples: Default::default(),
            time_integral: 0.0,
            busy_time: [0.0; 5],
            arrivals: 0,
            last_arrival: 0.0,
        };
        // Synthesize the initial population, class by class.
        for class in 0..7 {
            for _ in 0..config.initial_state.get(class) {
                let id = engine.jobs.len() as u64;
                engine.jobs.push(Job {
                    path: crate::plq::CLASS_PATH[class],
                    t_arrival: 0.0,
                    pre_state: TrafficState::EMPTY,
                    score: 0.0,
                    joined: 0.0,
                    served: 0.0,
                });
                engine.queues[class].push_back(id);
                engine.x.0[class] += 1;
                if engine.warmup == 0.0 {
                    engine.arrivals += 1;
                }
            }
        }
        engine
    }

    /// Span of `[from, to)` that counts toward metrics.
    fn metric_span(&self, from: f64, to: f64) -> f64 {
        (to - from.max(self.warmup)).max(0.0)
    }

    /// FIFO across classes: the class whose head job joined the server first.
    fn fifo_pick(&self, server: Server) -> Option<ClassId> {
        let mut best: Option<(f64, u64, ClassId)> = None;
        for &c in SERVER_CLASSES[server as usize - 1] {
            if let Some(&id) = self.queues[c].front() {
                let key = (self.jobs[id as usize].joined, id, c);
                if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                    best = Some(key);
                }
            }
        }
        best.map(|(_, _, c)| c)
    }

    fn decide_server(&mut self, server: Server) -> Option<ClassId> {
        match self.policy.server_candidates(server, &self.x) {
            Some(tie) => tie.pick(&mut self.rng),
            None => self.fifo_pick(server),
        }
    }

    /// Moves the head job of `class` one hop at time `t`. The caller has
    /// already settled the job's in-service time.
    fn complete(&mut self, server: Server, class: ClassId, t: f64) {
        let id = self.queues[class].pop_front().expect("served class is nonempty");
        debug_assert!(self.x.get(class) > 0, "negative queue at class {class}");
        self.x.0[class] -= 1;
        if t >= self.warmup {
            self.service_samples[server as usize - 1].push(self.jobs[id as usize].served);
        }
        match CLASS_NEXT[class] {
            Some(next) => {
                let job = &mut self.jobs[id as usize];
                job.served = 0.0;
                job.joined = t;
                self.queues[next].push_back(id);
                self.x.0[next] += 1;
            }
            None => {
                let job = &self.jobs[id as usize];
                if job.t_arrival >= self.warmup {
                    self.completed.push(JobRecord {
                        id,
                        path: job.path,
                        t_arrival: job.t_arrival,
                        t_depart: t,
                        system_time: t - job.t_arrival,
                        pre_state: job.pre_state,
                        score: job.score,
                    });
                }
            }
        }
    }

    /// Routes and admits one arrival at time `t` using the pre-arrival state.
    fn arrive(&mut self, t: f64) {
        let pre = self.x;
        let decision = self.policy.route(&pre, &mut self.rng);
        let class = decision.path.first_class();
        let id = self.jobs.len() as u64;
        self.jobs.push(Job {
            path: decision.path,
            t_arrival: t,
            pre_state: pre,
            score: self.policy.route_score(&pre, decision.path),
            joined: t,
            served: 0.0,
        });
        self.queues[class].push_back(id);
        self.x.0[class] += 1;
        if t >= self.warmup {
            self.arrivals += 1;
            self.interarrival.push(t - self.last_arrival);
        }
        self.last_arrival = t;
    }

    fn run_dt(mut self, config: &SimConfig) -> EpisodeData {
        let dt = config.dt;
        let steps = match config.horizon {
            Horizon::Time(t) => (t / dt).ceil() as u64,
            Horizon::Epochs(k) => k,
        };
        let lambda_p = self.spec.arrival_rate * dt;
        for _ in 0..steps {
            let t_next = self.now + dt;
            let span = self.metric_span(self.now, t_next);
            self.time_integral += self.x.norm1() as f64 * span;
            for &server in &DT_SERVER_ORDER {
                let Some(class) = self.decide_server(server) else { continue };
                self.busy_time[server as usize - 1] += span;
                let id = *self.queues[class].front().expect("candidate class is nonempty");
                self.jobs[id as usize].served += dt;
                if self.rng.random::<f64>() < self.spec.service_rates.get(server) * dt {
                    self.complete(server, class, t_next);
                }
            }
            if lambda_p > 0.0 && self.rng.random::<f64>() < lambda_p {
                self.arrive(t_next);
            }
            self.now = t_next;
        }
        self.finish()
    }

    fn run_event(mut self, config: &SimConfig) -> EpisodeData {
        let t_end = match config.horizon {
            Horizon::Time(t) => t,
            Horizon::Epochs(_) => f64::INFINITY,
        };
        let max_epochs = match config.horizon {
            Horizon::Epochs(k) => k,
            Horizon::Time(_) => u64::MAX,
        };
        let mut serving: [Option<u64>; 5] = [None; 5];
        let mut seg_start = [0.0f64; 5];
        let mut epochs = 0u64;

        // Settles the serving segment of one server at time `t`.
        macro_rules! close_segment {
            ($s:expr, $t:expr) => {
                if let Some(id) = serving[$s] {
                    self.jobs[id as usize].served += $t - seg_start[$s];
                    self.busy_time[$s] += self.metric_span(seg_start[$s], $t);
                    serving[$s] = None;
                }
            };
        }

        loop {
            // Re-evaluate scheduling; decision changes pause the old job.
            for s in 0..5usize {
                let class = self.decide_server(s as Server + 1);
                let new_job = class.map(|c| *self.queues[c].front().expect("nonempty"));
                if serving[s] != new_job {
                    close_segment!(s, self.now);
                    serving[s] = new_job;
                    seg_start[s] = self.now;
                }
            }

            let mut total = self.spec.arrival_rate;
            for s in 0..5usize {
                if serving[s].is_some() {
                    total += self.spec.service_rates.0[s];
                }
            }
            if total <= 0.0 || epochs >= max_epochs {
                // Nothing can happen (or the epoch budget is spent): coast to
                // the horizon.
                if t_end.is_finite() {
                    let span = self.metric_span(self.now, t_end);
                    self.time_integral += self.x.norm1() as f64 * span;
                    for s in 0..5usize {
                        close_segment!(s, t_end);
                    }
                    self.now = t_end;
                } else {
                    for s in 0..5usize {
                        close_segment!(s, self.now);
                    }
                }
                break;
            }

            let u: f64 = self.rng.random();
            let t_next = self.now + (-(1.0 - u).ln() / total);
            if t_next >= t_end {
                let span = self.metric_span(self.now, t_end);
                self.time_integral += self.x.norm1() as f64 * span;
                for s in 0..5usize {
                    close_segment!(s, t_end);
                }
                self.now = t_end;
                break;
            }
            let span = self.metric_span(self.now, t_next);
            self.time_integral += self.x.norm1() as f64 * span;

            let mut pick = self.rng.random::<f64>() * total - self.spec.arrival_rate;
            if pick < 0.0 {
                self.arrive(t_next);
            } else {
                let mut chosen = None;
                for s in 0..5usize {
                    if serving[s].is_some() {
                        pick -= self.spec.service_rates.0[s];
                        if pick < 0.0 {
                            chosen = Some(s);
                            break;
                        }
                    }
                }
                // Float slop in the cascade falls through to the last busy
                // server.
                let s = chosen.unwrap_or_else(|| {
                    (0..5).rev().find(|&s| serving[s].is_some()).expect("some server busy")
                });
                let id = serving[s].expect("completion at a busy server");
                let class = SERVER_CLASSES[s]
                    .iter()
                    .copied()
                    .find(|&c| self.queues[c].front() == Some(&id))
                    .expect("serving job heads its queue");
                close_segment!(s, t_next);
                self.complete(s as Server + 1, class, t_next);
            }
            self.now = t_next;
            epochs += 1;
        }
        self.finish()
    }

    fn finish(self) -> EpisodeData {
        let censored = self
            .queues
            .iter()
            .flatten()
            .filter(|&&id| self.jobs[id as usize].t_arrival >= self.warmup)
            .count() as u64;
        EpisodeData {
            completed_jobs: self.completed,
            interarrival_samples: self.interarrival,
            service_samples: self.service_samples,
            time_integral_queue: self.time_integral,
            duration: (self.now - self.warmup).max(0.0),
            arrivals: self.arrivals,
            censored,
            busy_time: self.busy_time,
            final_state: self.x,
        }
    }
}

/// Simulates one episode and returns its measurements.
pub fn run_episode(spec: &NetworkSpec, policy: &Policy, config: &SimConfig) -> Result<EpisodeData> {
    config.validate(spec)?;
    let engine = Engine::new(spec, policy, config);
    Ok(match config.mode {
        SimMode::BernoulliDt => engine.run_dt(config),
        SimMode::EventDriven => engine.run_event(config),
    })
}

/// Cumulative arrival- and service-rate estimation across episodes.
///
/// Estimates are reciprocals of running sample means; a quantity that has
/// never been sampled keeps its initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimator {
    initial_lambda: f64,
    initial_mu: [f64; 5],
    interarrival_sum: f64,
    interarrival_count: u64,
    service_sum: [f64; 5],
    service_count: [u64; 5],
}

impl RateEstimator {
    pub fn new(initial_lambda: f64, initial_mu: [f64; 5]) -> Self {
        RateEstimator {
            initial_lambda,
            initial_mu,
            interarrival_sum: 0.0,
            interarrival_count: 0,
            service_sum: [0.0; 5],
            service_count: [0; 5],
        }
    }

    /// Folds one episode's samples into the running totals.
    pub fn update(&mut self, data: &EpisodeData) {
        self.interarrival_sum += data.interarrival_samples.iter().sum::<f64>();
        self.interarrival_count += data.interarrival_samples.len() as u64;
        for s in 0..5 {
            self.service_sum[s] += data.service_samples[s].iter().sum::<f64>();
            self.service_count[s] += data.service_samples[s].len() as u64;
        }
    }

    pub fn lambda_hat(&self) -> f64 {
        if self.interarrival_count == 0 || self.interarrival_sum <= 0.0 {
            self.initial_lambda
        } else {
            self.interarrival_count as f64 / self.interarrival_sum
        }
    }

    pub fn mu_hat(&self) -> ServiceRates {
        ServiceRates(core::array::from_fn(|s| {
            if self.service_count[s] == 0 || self.service_sum[s] <= 0.0 {
                self.initial_mu[s]
            } else {
                self.service_count[s] as f64 / self.service_sum[s]
            }
        }))
    }

    /// The network the estimates currently describe, used to recompute the
    /// feasible region during learning.
    pub fn believed_network(&self) -> Result<NetworkSpec> {
        NetworkSpec::bridge(self.mu_hat().0, self.lambda_hat())
    }
}

/// Folds new observations into the estimator and returns the refreshed
/// `(lambda_hat, mu_hat)` pair.
pub fn estimate_rates(estimator: &mut RateEstimator, data: &EpisodeData) -> (f64, ServiceRates) {
    estimator.update(data);
    (estimator.lambda_hat(), estimator.mu_hat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plq::GspParams;
    use approx::assert_relative_eq;

    fn paper() -> NetworkSpec {
        NetworkSpec::reference()
    }

    fn gsp_policy() -> Policy {
        Policy::gsp(GspParams::new(1.2, 1.1).unwrap(), paper().service_rates)
    }

    #[test]
    fn zero_arrivals_mean_zero_metrics() {
        let spec = NetworkSpec::bridge([0.15, 0.1, 0.25, 0.15, 0.2], 0.0).unwrap();
        for mode in [SimMode::BernoulliDt, SimMode::EventDriven] {
            let config = SimConfig {
                mode,
                horizon: Horizon::Time(500.0),
                ..SimConfig::default()
            };
            let data = run_episode(&spec, &gsp_policy(), &config).unwrap();
            assert_eq!(data.arrivals, 0);
            assert_eq!(data.completed_jobs.len(), 0);
            assert_eq!(data.censored, 0);
            assert_eq!(data.time_integral_queue, 0.0);
            assert_eq!(data.final_state, TrafficState::EMPTY);
            assert!(matches!(average_system_time(&data), Err(Error::NoCompletedJobs)));
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_trajectory() {
        let spec = paper();
        for mode in [SimMode::BernoulliDt, SimMode::EventDriven] {
            let config = SimConfig {
                mode,
                horizon: Horizon::Time(2000.0),
                seed: 42,
                ..SimConfig::default()
            };
            let a = run_episode(&spec, &gsp_policy(), &config).unwrap();
            let b = run_episode(&spec, &gsp_policy(), &config).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn jobs_are_conserved() {
        let spec = paper();
        for (mode, seed) in [(SimMode::BernoulliDt, 3u64), (SimMode::EventDriven, 4)] {
            let config = SimConfig {
                mode,
                horizon: Horizon::Time(5000.0),
                seed,
                ..SimConfig::default()
            };
            for policy in [
                gsp_policy(),
                Policy::Ssp,
                Policy::Bernoulli(crate::policy::BernoulliWeights::new([0.28, 0.20, 0.52]).unwrap()),
            ] {
                let data = run_episode(&spec, &policy, &config).unwrap();
                assert!(data.arrivals > 0);
                assert_eq!(
                    data.arrivals,
                    data.completed_jobs.len() as u64 + data.censored,
                    "conservation under {}",
                    policy.name()
                );
                assert_eq!(u64::from(data.final_state.norm1() as u32), data.censored);
                for j in &data.completed_jobs {
                    assert!(j.system_time > 0.0);
                }
            }
        }
    }

    #[test]
    fn dt_mode_rejects_saturated_probabilities() {
        let spec = NetworkSpec::bridge([0.15, 0.1, 0.25, 0.15, 12.0], 0.2).unwrap();
        let config = SimConfig::default();
        match run_episode(&spec, &gsp_policy(), &config) {
            Err(Error::ConfigInvalid(_)) => {}
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn epochs_horizon_counts_events() {
        let spec = paper();
        let config = SimConfig {
            mode: SimMode::EventDriven,
            horizon: Horizon::Epochs(100),
            seed: 9,
            ..SimConfig::default()
        };
        let data = run_episode(&spec, &gsp_policy(), &config).unwrap();
        let departures: usize = data.service_samples.iter().map(Vec::len).sum();
        assert_eq!(data.arrivals as usize + departures, 100);
    }

    #[test]
    fn estimator_reciprocal_and_prior_persistence() {
        let mut est = RateEstimator::new(0.1, [0.5; 5]);
        let mut data = EpisodeData::default();
        data.interarrival_samples = vec![2.0, 2.0, 2.0];
        data.service_samples[2] = vec![4.0, 4.0];
        let (lambda, mu) = estimate_rates(&mut est, &data);
        assert_relative_eq!(lambda, 0.5, max_relative = 1e-12);
        assert_relative_eq!(mu.get(3), 0.25, max_relative = 1e-12);
        // Server 4 never sampled: prior persists.
        assert_relative_eq!(mu.get(4), 0.5, max_relative = 1e-12);

        // Cumulative: a second episode with the same mean leaves it alone.
        let mut more = EpisodeData::default();
        more.interarrival_samples = vec![2.0];
        est.update(&more);
        assert_relative_eq!(est.lambda_hat(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn single_job_average() {
        let mut data = EpisodeData::default();
        data.completed_jobs.push(JobRecord {
            id: 0,
            path: PathId::P12,
            t_arrival: 1.0,
            t_depart: 6.0,
            system_time: 5.0,
            pre_state: TrafficState::EMPTY,
            score: 0.0,
        });
        assert_relative_eq!(average_system_time(&data).unwrap(), 5.0);
    }

    #[test]
    fn initial_state_is_drained_into_the_metrics() {
        let spec = NetworkSpec::bridge([0.15, 0.1, 0.25, 0.15, 0.2], 0.0).unwrap();
        let config = SimConfig {
            mode: SimMode::EventDriven,
            horizon: Horizon::Time(2e4),
            seed: 5,
            initial_state: TrafficState([1, 0, 2, 0, 0, 0, 1]),
            ..SimConfig::default()
        };
        let data = run_episode(&spec, &gsp_policy(), &config).unwrap();
        // With no arrivals everything drains eventually.
        assert_eq!(data.final_state, TrafficState::EMPTY);
        assert_eq!(data.completed_jobs.len() + data.censored as usize, 4);
        assert!(data.time_integral_queue > 0.0);
    }
}
