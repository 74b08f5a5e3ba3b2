//! Bridge-network topology and its stability constants.
//!
//! The network has five servers between one origin and one destination:
//!
//! ```text
//!           +--> 1 --> 2 ----------+
//!   origin -|        \             +--> sink
//!           |         +--> 3 --+   |
//!           +--> 4 ------------+-> 5
//! ```
//!
//! Jobs travel along one of three fixed paths, `(1,2)`, `(1,3,5)` or `(4,5)`.
//! The module enumerates the minimal vertex cuts of this graph and derives
//! the constants that bound the policy parameters:
//!
//! - `m`: the minimum over cuts `M` and proper subsets `M~` (including the
//!   empty set) of `sum_{n in M \ M~} mu_n / (lambda - sum_{n in M~} mu_n)`,
//!   restricted to positive denominators. `m > 1` exactly when the network
//!   is stabilizable.
//! - `d_n`: the number of links on the longest origin-to-`n` walk (the edge
//!   out of the origin counts as one link).
//! - `delta_G`: 1 when some cut's fastest servers sit strictly deeper than
//!   its slowest one, 0 otherwise. It tightens the feasible exponent from
//!   2 to 3.
//!
//! The feasible region for the GSP parameters is the open set
//! `1 < gamma^(2+delta_G) < beta^(2+delta_G) < m`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plq::PathId;

/// Server identifier, `1..=5`.
pub type Server = u8;

pub const SERVERS: [Server; 5] = [1, 2, 3, 4, 5];

/// Directed server-to-server links (origin and sink edges are implicit).
const LINKS: [(Server, Server); 4] = [(1, 2), (1, 3), (3, 5), (4, 5)];
/// Servers fed directly by the origin.
const FROM_ORIGIN: [Server; 2] = [1, 4];
/// Servers feeding the sink directly.
const TO_SINK: [Server; 2] = [2, 5];

/// Per-server service rates in jobs/sec, indexed by `server - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRates(pub [f64; 5]);

impl ServiceRates {
    #[inline]
    pub fn get(&self, server: Server) -> f64 {
        self.0[server as usize - 1]
    }

    pub fn uniform(rate: f64) -> Self {
        ServiceRates([rate; 5])
    }
}

/// The bridge network: fixed topology plus the two rate inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub service_rates: ServiceRates,
    pub arrival_rate: f64,
}

impl NetworkSpec {
    /// Builds the bridge network, validating that all rates are positive.
    pub fn bridge(service_rates: [f64; 5], arrival_rate: f64) -> Result<Self> {
        for (i, &mu) in service_rates.iter().enumerate() {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::ConfigInvalid(format!(
                    "service rate of server {} must be positive, got {mu}",
                    i + 1
                )));
            }
        }
        // Zero is allowed so closed-network runs can drain an initial state;
        // the stability constants themselves need a positive rate.
        if !(arrival_rate >= 0.0) || !arrival_rate.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "arrival rate must be non-negative, got {arrival_rate}"
            )));
        }
        Ok(NetworkSpec {
            service_rates: ServiceRates(service_rates),
            arrival_rate,
        })
    }

    /// The instance used throughout the experiments:
    /// `mu = (0.15, 0.1, 0.25, 0.15, 0.2)`, `lambda = 0.2`.
    pub fn reference() -> Self {
        NetworkSpec::bridge([0.15, 0.1, 0.25, 0.15, 0.2], 0.2).expect("valid reference instance")
    }

    /// The three origin-to-sink paths, in the fixed order 12, 135, 45.
    pub fn paths(&self) -> [&'static [Server]; 3] {
        [PathId::P12.servers(), PathId::P135.servers(), PathId::P45.servers()]
    }

    pub fn min_cut_capacity(&self) -> f64 {
        enumerate_cuts(self)
            .iter()
            .map(|c| c.capacity)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_stabilizable(&self) -> bool {
        self.arrival_rate < self.min_cut_capacity()
    }

    pub fn stability_constants(&self) -> Result<StabilityConstants> {
        StabilityConstants::compute(self)
    }

    pub fn feasible_region(&self) -> Result<FeasibleRegion> {
        let m = compute_m(self)?;
        let (delta_g, _) = compute_delta_g(self);
        Ok(FeasibleRegion::new(m, delta_g))
    }
}

/// A minimal vertex cut: removing `servers` disconnects origin from sink and
/// no proper subset does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub servers: Vec<Server>,
    pub capacity: f64,
}

impl Cut {
    pub fn label(&self) -> String {
        let ids: Vec<String> = self.servers.iter().map(|s| s.to_string()).collect();
        ids.join(",")
    }
}

fn sink_reachable(removed: u8) -> bool {
    // Bitmask BFS over at most 5 servers; bit n-1 marks server n.
    let alive = |s: Server| removed & (1 << (s - 1)) == 0;
    let mut seen: u8 = 0;
    let mut frontier: Vec<Server> = FROM_ORIGIN.iter().copied().filter(|&s| alive(s)).collect();
    while let Some(s) = frontier.pop() {
        if seen & (1 << (s - 1)) != 0 {
            continue;
        }
        seen |= 1 << (s - 1);
        if TO_SINK.contains(&s) {
            return true;
        }
        for &(u, v) in &LINKS {
            if u == s && alive(v) {
                frontier.push(v);
            }
        }
    }
    false
}

/// Enumerates the minimal vertex cuts of the bridge network by exhausting all
/// `2^5` server subsets. For the fixed topology these are
/// `{1,4}`, `{1,5}`, `{2,5}`, `{2,3,4}`.
pub fn enumerate_cuts(spec: &NetworkSpec) -> Vec<Cut> {
    let disconnecting: Vec<u8> = (0u8..32).filter(|&mask| !sink_reachable(mask)).collect();
    let mut cuts: Vec<Cut> = disconnecting
        .iter()
        .filter(|&&mask| {
            !disconnecting
                .iter()
                .any(|&other| other != mask && other & mask == other)
        })
        .map(|&mask| {
            let servers: Vec<Server> = SERVERS
                .iter()
                .copied()
                .filter(|&s| mask & (1 << (s - 1)) != 0)
                .collect();
            let capacity = servers.iter().map(|&s| spec.service_rates.get(s)).sum();
            Cut { servers, capacity }
        })
        .collect();
    cuts.sort_by(|a, b| (a.servers.len(), &a.servers).cmp(&(b.servers.len(), &b.servers)));
    cuts
}

/// The worst-case ratio of residual cut capacity to residual demand:
/// minimum of `sum_{n in M \ M~} mu_n / (lambda - sum_{n in M~} mu_n)` over
/// cuts `M` and proper subsets `M~` (the empty set included) with a positive
/// denominator. Requires a stabilizable instance and then always exceeds 1.
pub fn compute_m(spec: &NetworkSpec) -> Result<f64> {
    if spec.arrival_rate <= 0.0 {
        return Err(Error::ConfigInvalid(
            "stability constants need a positive arrival rate".into(),
        ));
    }
    let cuts = enumerate_cuts(spec);
    let min_cut = cuts.iter().map(|c| c.capacity).fold(f64::INFINITY, f64::min);
    if spec.arrival_rate >= min_cut {
        return Err(Error::NotStabilizable {
            arrival_rate: spec.arrival_rate,
            min_cut_capacity: min_cut,
        });
    }
    let mut m = f64::INFINITY;
    for cut in &cuts {
        let k = cut.servers.len();
        // Proper subsets of the cut, empty set included.
        for sub in 0..(1u32 << k) - 1 {
            let mut kept = 0.0; // capacity of M \ M~
            let mut shed = 0.0; // capacity of M~
            for (i, &s) in cut.servers.iter().enumerate() {
                if sub & (1 << i) != 0 {
                    shed += spec.service_rates.get(s);
                } else {
                    kept += spec.service_rates.get(s);
                }
            }
            let residual_demand = spec.arrival_rate - shed;
            if residual_demand > 0.0 {
                m = m.min(kept / residual_demand);
            }
        }
    }
    debug_assert!(m > 1.0);
    Ok(m)
}

/// Longest-path link counts from the origin: the origin edge counts as one
/// link, so `d_1 = d_4 = 1` and `d_5 = 3` (via 1 -> 3 -> 5).
pub fn compute_depths(_spec: &NetworkSpec) -> BTreeMap<Server, u32> {
    let mut depth: BTreeMap<Server, u32> = FROM_ORIGIN.iter().map(|&s| (s, 1)).collect();
    // Relax the four internal links until stable; the graph is a DAG so five
    // passes are more than enough.
    for _ in 0..SERVERS.len() {
        for &(u, v) in &LINKS {
            let du = depth.get(&u).copied().unwrap_or(0);
            if du > 0 {
                let dv = depth.entry(v).or_insert(0);
                *dv = (*dv).max(du + 1);
            }
        }
    }
    depth
}

/// Per-cut depth-imbalance indicator and its network-wide sign.
///
/// For each cut `M`: `G1` sums `d_n` over all servers attaining the cut's
/// maximum rate, `G2` takes the minimum `d_n` over the servers attaining the
/// minimum rate, and `G^M = sgn(mu_max - mu_min) * max(G2 - G1, 0)`.
/// `delta_G = sgn(max_M G^M)`, which is 0 or 1.
pub fn compute_delta_g(spec: &NetworkSpec) -> (u8, Vec<(Cut, i64)>) {
    let depths = compute_depths(spec);
    let mut per_cut = Vec::new();
    let mut max_g: i64 = 0;
    for cut in enumerate_cuts(spec) {
        let rates: Vec<f64> = cut.servers.iter().map(|&s| spec.service_rates.get(s)).collect();
        let mu_max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mu_min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let g = if mu_max > mu_min {
            let g1: i64 = cut
                .servers
                .iter()
                .filter(|&&s| spec.service_rates.get(s) == mu_max)
                .map(|s| depths[s] as i64)
                .sum();
            let g2: i64 = cut
                .servers
                .iter()
                .filter(|&&s| spec.service_rates.get(s) == mu_min)
                .map(|s| depths[s] as i64)
                .min()
                .expect("cut is nonempty");
            (g2 - g1).max(0)
        } else {
            0
        };
        max_g = max_g.max(g);
        per_cut.push((cut, g));
    }
    (u8::from(max_g > 0), per_cut)
}

/// Relative margin used to enforce the open-interval constraints numerically.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

/// The open parameter region `1 < gamma^(2+delta_G) < beta^(2+delta_G) < m`,
/// with strict inequalities enforced through a relative margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub m: f64,
    pub delta_g: u8,
    /// `m^(1/(2+delta_G))`, the open upper bound for `beta`.
    pub beta_max: f64,
    pub margin: f64,
}

impl FeasibleRegion {
    pub fn new(m: f64, delta_g: u8) -> Self {
        let beta_max = m.powf(1.0 / f64::from(2 + delta_g));
        FeasibleRegion {
            m,
            delta_g,
            beta_max,
            margin: FEASIBILITY_MARGIN,
        }
    }

    /// Exponent `2 + delta_G` applied to both parameters.
    pub fn exponent(&self) -> i32 {
        2 + i32::from(self.delta_g)
    }

    /// Open interval for `beta`; `gamma` then ranges over `(1, beta)`.
    pub fn beta_interval(&self) -> (f64, f64) {
        (1.0, self.beta_max)
    }

    /// Strict membership with the relative margin.
    pub fn contains(&self, beta: f64, gamma: f64) -> bool {
        let e = self.margin;
        gamma - 1.0 > e
            && beta - gamma > e * beta
            && self.m - beta.powi(self.exponent()) > e * self.m
    }

    /// Closed interior interval for `beta`, used by projection and fitting.
    /// The lower end leaves room for a `gamma` strictly between 1 and `beta`.
    pub fn beta_bounds(&self) -> (f64, f64) {
        let e = self.margin;
        let lo = 1.0 + 8.0 * e;
        let hi = (self.beta_max * (1.0 - 2.0 * e)).max(lo);
        (lo, hi)
    }

    /// Closed interior interval for `gamma` at a given `beta`.
    pub fn gamma_bounds(&self, beta: f64) -> (f64, f64) {
        let e = self.margin;
        let lo = 1.0 + 2.0 * e;
        let hi = (beta * (1.0 - 2.0 * e)).max(lo);
        (lo, hi)
    }

    /// Nearest interior point; the result passes
    /// [`FeasibleRegion::contains`] whenever the region is non-degenerate.
    pub fn clamp(&self, beta: f64, gamma: f64) -> (f64, f64) {
        let (blo, bhi) = self.beta_bounds();
        let beta = beta.clamp(blo, bhi);
        let (glo, ghi) = self.gamma_bounds(beta);
        let gamma = gamma.clamp(glo, ghi);
        (beta, gamma)
    }

    /// Interval midpoints, the default starting point for learning.
    pub fn midpoint(&self) -> (f64, f64) {
        let beta = 0.5 * (1.0 + self.beta_max);
        let gamma = 0.5 * (1.0 + beta);
        (beta, gamma)
    }

    pub fn check(&self, beta: f64, gamma: f64) -> Result<()> {
        if self.contains(beta, gamma) {
            Ok(())
        } else {
            Err(Error::InfeasibleParams {
                beta,
                gamma,
                beta_max: self.beta_max,
            })
        }
    }
}

/// Everything the stability analysis derives from one instance.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityConstants {
    pub min_cut_capacity: f64,
    pub m: f64,
    pub delta_g: u8,
    pub depths: BTreeMap<Server, u32>,
    /// `G^M` per minimal cut, keyed by the cut's comma-separated label.
    pub per_cut_g: BTreeMap<String, i64>,
    pub cuts: Vec<Cut>,
    pub beta_max: f64,
}

impl StabilityConstants {
    pub fn compute(spec: &NetworkSpec) -> Result<Self> {
        let cuts = enumerate_cuts(spec);
        let min_cut_capacity = cuts.iter().map(|c| c.capacity).fold(f64::INFINITY, f64::min);
        let m = compute_m(spec)?;
        let (delta_g, per_cut) = compute_delta_g(spec);
        let region = FeasibleRegion::new(m, delta_g);
        Ok(StabilityConstants {
            min_cut_capacity,
            m,
            delta_g,
            depths: compute_depths(spec),
            per_cut_g: per_cut.into_iter().map(|(c, g)| (c.label(), g)).collect(),
            cuts,
            beta_max: region.beta_max,
        })
    }

    pub fn region(&self) -> FeasibleRegion {
        FeasibleRegion::new(self.m, self.delta_g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper() -> NetworkSpec {
        NetworkSpec::reference()
    }

    /// Independent cut oracle: a server set cuts the bridge network exactly
    /// when it intersects all three paths (hitting-set view), and it is
    /// minimal when no proper subset does.
    fn oracle_cuts(spec: &NetworkSpec) -> Vec<Vec<Server>> {
        let paths = spec.paths();
        let hits_all = |mask: u8| {
            paths
                .iter()
                .all(|p| p.iter().any(|&s| mask & (1 << (s - 1)) != 0))
        };
        let cutting: Vec<u8> = (0u8..32).filter(|&m| hits_all(m)).collect();
        let mut out: Vec<Vec<Server>> = cutting
            .iter()
            .filter(|&&m| !cutting.iter().any(|&o| o != m && o & m == o))
            .map(|&m| SERVERS.iter().copied().filter(|&s| m & (1 << (s - 1)) != 0).collect())
            .collect();
        out.sort_by(|a, b| (a.len(), a.clone()).cmp(&(b.len(), b.clone())));
        out
    }

    #[test]
    fn bridge_cuts_match_oracle() {
        let spec = paper();
        let got: Vec<Vec<Server>> = enumerate_cuts(&spec).into_iter().map(|c| c.servers).collect();
        assert_eq!(got, oracle_cuts(&spec));
        assert_eq!(
            got,
            vec![vec![1, 4], vec![1, 5], vec![2, 5], vec![2, 3, 4]]
        );
    }

    #[test]
    fn paper_cut_capacities() {
        let spec = paper();
        let cuts = enumerate_cuts(&spec);
        let by_label: BTreeMap<String, f64> =
            cuts.iter().map(|c| (c.label(), c.capacity)).collect();
        assert_relative_eq!(by_label["1,4"], 0.30, max_relative = 1e-12);
        assert_relative_eq!(by_label["2,5"], 0.30, max_relative = 1e-12);
        assert_relative_eq!(by_label["1,5"], 0.35, max_relative = 1e-12);
        assert_relative_eq!(by_label["2,3,4"], 0.50, max_relative = 1e-12);
        assert_relative_eq!(spec.min_cut_capacity(), 0.30, max_relative = 1e-12);
        assert!(spec.is_stabilizable());
    }

    #[test]
    fn m_on_paper_instance_is_one_point_five() {
        let m = compute_m(&paper()).unwrap();
        assert!((m - 1.5).abs() < 1e-12, "m = {m}");
    }

    #[test]
    fn m_uniform_rates() {
        let spec = NetworkSpec::bridge([0.5; 5], 0.1).unwrap();
        let m = compute_m(&spec).unwrap();
        assert_relative_eq!(m, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn m_rejects_critical_load() {
        let spec = NetworkSpec::bridge([0.15, 0.1, 0.25, 0.15, 0.2], 0.30).unwrap();
        match compute_m(&spec) {
            Err(Error::NotStabilizable { .. }) => {}
            other => panic!("expected NotStabilizable, got {other:?}"),
        }
    }

    /// Re-derives m by brute force over the known cuts with independent code.
    fn oracle_m(spec: &NetworkSpec) -> f64 {
        let mut best = f64::INFINITY;
        for cut in oracle_cuts(spec) {
            let k = cut.len();
            for sub in 0..(1u32 << k) {
                if sub == (1 << k) - 1 {
                    continue; // proper subsets only
                }
                let shed: f64 = cut
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| sub & (1 << i) != 0)
                    .map(|(_, &s)| spec.service_rates.get(s))
                    .sum();
                let kept: f64 = cut
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| sub & (1 << i) == 0)
                    .map(|(_, &s)| spec.service_rates.get(s))
                    .sum();
                if spec.arrival_rate - shed > 0.0 {
                    best = best.min(kept / (spec.arrival_rate - shed));
                }
            }
        }
        best
    }

    #[test]
    fn depths_are_the_longest_walk_counts() {
        let d = compute_depths(&paper());
        let want: BTreeMap<Server, u32> = [(1, 1), (2, 2), (3, 2), (4, 1), (5, 3)].into();
        assert_eq!(d, want);
    }

    #[test]
    fn delta_g_paper_and_equal_rates() {
        assert_eq!(compute_delta_g(&paper()).0, 0);
        let equal = NetworkSpec::bridge([0.3; 5], 0.1).unwrap();
        let (dg, per_cut) = compute_delta_g(&equal);
        assert_eq!(dg, 0);
        assert!(per_cut.iter().all(|(_, g)| *g == 0));
    }

    #[test]
    fn delta_g_one_when_fast_server_sits_deeper() {
        // Cut {2,5}: server 2 is the fastest (depth 2), server 5 the slowest
        // (depth 3), so G = (3 - 2)+ = 1.
        let spec = NetworkSpec::bridge([0.15, 0.30, 0.25, 0.15, 0.10], 0.05).unwrap();
        let (dg, per_cut) = compute_delta_g(&spec);
        assert_eq!(dg, 1);
        let g25 = per_cut
            .iter()
            .find(|(c, _)| c.servers == vec![2, 5])
            .map(|(_, g)| *g)
            .unwrap();
        assert_eq!(g25, 1);
    }

    #[test]
    fn feasible_region_paper() {
        let region = paper().feasible_region().unwrap();
        assert_eq!(region.delta_g, 0);
        let (lo, hi) = region.beta_interval();
        assert_eq!(lo, 1.0);
        assert_relative_eq!(hi, 1.5f64.sqrt(), max_relative = 1e-12);
        assert!(region.contains(1.2, 1.1));
        assert!(!region.contains(1.3, 1.1)); // 1.69 >= 1.5
        assert!(!region.contains(1.2, 1.2)); // gamma must stay below beta
        assert!(!region.contains(region.beta_max, 1.1)); // open at the top
    }

    #[test]
    fn clamp_lands_inside() {
        let region = paper().feasible_region().unwrap();
        for &(b, g) in &[(2.0, 1.9), (0.5, 0.2), (1.3, 1.25), (1.2, 1.3)] {
            let (b2, g2) = region.clamp(b, g);
            assert!(region.contains(b2, g2), "clamp({b},{g}) -> ({b2},{g2})");
        }
        // Already-interior points are untouched.
        let (b2, g2) = region.clamp(1.2, 1.1);
        assert_eq!((b2, g2), (1.2, 1.1));
    }

    #[test]
    fn stability_constants_serialize() {
        let sc = paper().stability_constants().unwrap();
        let json = serde_json::to_string(&sc).unwrap();
        assert!(json.contains("\"m\":"));
        assert!(json.contains("\"delta_g\":0"));
        assert_eq!(sc.per_cut_g.len(), 4);
    }

    proptest! {
        #[test]
        fn cuts_are_topological(rates in proptest::array::uniform5(0.01f64..2.0), lambda in 0.01f64..2.0) {
            let spec = NetworkSpec::bridge(rates, lambda).unwrap();
            let got: Vec<Vec<Server>> = enumerate_cuts(&spec).into_iter().map(|c| c.servers).collect();
            prop_assert_eq!(got, oracle_cuts(&spec));
        }

        #[test]
        fn m_exceeds_one_iff_stabilizable(rates in proptest::array::uniform5(0.01f64..2.0), lambda in 0.01f64..2.0) {
            let spec = NetworkSpec::bridge(rates, lambda).unwrap();
            match compute_m(&spec) {
                Ok(m) => {
                    prop_assert!(spec.is_stabilizable());
                    prop_assert!(m > 1.0);
                    prop_assert!((m - oracle_m(&spec)).abs() <= 1e-12 * m.abs());
                }
                Err(Error::NotStabilizable { .. }) => prop_assert!(!spec.is_stabilizable()),
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }

        #[test]
        fn delta_g_scale_invariant(rates in proptest::array::uniform5(0.01f64..2.0), lambda in 0.01f64..2.0, k in 0.1f64..8.0) {
            let spec = NetworkSpec::bridge(rates, lambda).unwrap();
            let scaled = NetworkSpec::bridge(rates.map(|r| r * k), lambda * k).unwrap();
            prop_assert_eq!(compute_delta_g(&spec).0, compute_delta_g(&scaled).0);
        }

        #[test]
        fn feasibility_is_monotone(b in 1.01f64..1.22, g in 1.005f64..1.21, bs in 0.0f64..1.0, gs in 0.0f64..1.0) {
            let region = paper().feasible_region().unwrap();
            prop_assume!(g < b);
            prop_assume!(region.contains(b, g));
            // Shrink both toward 1 while keeping the ordering.
            let b2 = 1.0 + (b - 1.0) * (0.2 + 0.8 * bs);
            let g2 = (1.0 + (g - 1.0) * (0.2 + 0.8 * gs)).min(1.0 + (b2 - 1.0) * 0.9);
            prop_assume!(g2 > 1.0 + 1e-6 && b2 - g2 > 1e-6);
            prop_assert!(region.contains(b2, g2));
        }
    }
}
