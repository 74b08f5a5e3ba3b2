//! Dynamic routing and scheduling for a single-origin single-destination
//! bridge network of five exponential servers.
//!
//! The crate implements the generalized shortest-path (GSP) policy family:
//! each path through the network carries a piecewise-linear cost `Q_p(x)`
//! parameterized by `beta`, arriving jobs are routed to the path minimizing
//! the tier-weighted cost `gamma_p(B) * Q_p(x)`, and the shared servers give
//! preemptive priority to the path they currently bottleneck. The same
//! piecewise-linear functions double as building blocks of a quadratic
//! Lyapunov function, which yields a closed-form feasible region for
//! `(beta, gamma)` in terms of the min-cut constants `m` and `delta_G`.
//!
//! Modules:
//! - [`network`]: topology, cut enumeration, stability constants, feasible region
//! - [`plq`]: traffic state, piecewise-linear path costs, bottlenecks, weight tiers
//! - [`policy`]: GSP routing/scheduling plus shortest-path and Bernoulli benchmarks
//! - [`sim`]: discrete-time Bernoulli and event-driven simulators, rate estimation
//! - [`analysis`]: Lyapunov drift evaluation, drift certificates, comparison tables
//! - [`learn`]: least-squares fitting of `(beta, gamma)` and the policy-iteration loop
//! - [`cli`]: configuration files and the subcommand implementations behind the binary

pub mod analysis;
pub mod cli;
pub mod error;
pub mod learn;
pub mod network;
pub mod plq;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use network::{FeasibleRegion, NetworkSpec, ServiceRates, StabilityConstants};
pub use plq::{GspParams, PathId, TrafficState};
pub use policy::Policy;
pub use sim::{EpisodeData, SimConfig, SimMode};
