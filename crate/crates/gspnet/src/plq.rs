//! Traffic state and the piecewise-linear path costs.
//!
//! The state splits every queue by destination path. With paths 12, 135 and
//! 45 the seven job classes are, in vector order,
//!
//! ```text
//! x = [x1^12, x1^135, x2^12, x3^135, x4^45, x5^135, x5^45]
//! ```
//!
//! Each path carries a piecewise-linear cost, the maximum over one segment
//! per server on the path. Segment `i` (0-based from the origin) sums the
//! class populations of the first `i + 1` servers and scales them by
//! `beta^(2 - i)`:
//!
//! ```text
//! Q_12  = max(b^2 x1^12,  b (x1^12 + x2^12))
//! Q_135 = max(b^2 x1^135, b (x1^135 + x3^135), x1^135 + x3^135 + x5^135)
//! Q_45  = max(b^2 x4^45,  b (x4^45 + x5^45))
//! ```
//!
//! The *bottleneck* of a path is the server whose segment attains the
//! maximum; equivalently, the unique server that contributes to the cost
//! with positive right derivative while its immediate downstream server
//! contributes nothing. When several segments tie, the right-derivative
//! characterization selects the most-downstream one, which is the convention
//! used everywhere here (an empty path therefore reports its terminal
//! server). Paths are then tiered by their bottleneck's service rate: the
//! fastest tier gets weight 1, the next tier `gamma`, the rest `gamma^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Server, ServiceRates};

/// Relative tolerance for detecting ties between segment or cost values.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// One of the three origin-to-sink paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathId {
    P12,
    P135,
    P45,
}

impl PathId {
    pub const ALL: [PathId; 3] = [PathId::P12, PathId::P135, PathId::P45];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            PathId::P12 => 0,
            PathId::P135 => 1,
            PathId::P45 => 2,
        }
    }

    pub fn from_index(i: usize) -> PathId {
        PathId::ALL[i]
    }

    pub fn label(self) -> &'static str {
        match self {
            PathId::P12 => "12",
            PathId::P135 => "135",
            PathId::P45 => "45",
        }
    }

    pub fn parse(s: &str) -> Result<PathId> {
        match s {
            "12" => Ok(PathId::P12),
            "135" => Ok(PathId::P135),
            "45" => Ok(PathId::P45),
            other => Err(Error::ConfigInvalid(format!("unknown path '{other}'"))),
        }
    }

    /// Servers along the path, origin side first.
    pub fn servers(self) -> &'static [Server] {
        match self {
            PathId::P12 => &[1, 2],
            PathId::P135 => &[1, 3, 5],
            PathId::P45 => &[4, 5],
        }
    }

    /// Class indices along the path, origin side first.
    pub fn classes(self) -> &'static [usize] {
        match self {
            PathId::P12 => &[0, 2],
            PathId::P135 => &[1, 3, 5],
            PathId::P45 => &[4, 6],
        }
    }

    pub fn first_class(self) -> usize {
        self.classes()[0]
    }
}

/// Class index, `0..7`, one per (server, path) pair.
pub type ClassId = usize;

/// Server holding each class.
pub const CLASS_SERVER: [Server; 7] = [1, 1, 2, 3, 4, 5, 5];
/// Path each class belongs to.
pub const CLASS_PATH: [PathId; 7] = [
    PathId::P12,
    PathId::P135,
    PathId::P12,
    PathId::P135,
    PathId::P45,
    PathId::P135,
    PathId::P45,
];
/// Next class along the path, `None` at the sink.
pub const CLASS_NEXT: [Option<ClassId>; 7] =
    [Some(2), Some(3), None, Some(5), Some(6), None, None];
/// Classes queued at each server, indexed by `server - 1`.
pub const SERVER_CLASSES: [&[ClassId]; 5] = [&[0, 1], &[2], &[3], &[4], &[5, 6]];

/// Per-class queue lengths in the fixed order documented at module level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TrafficState(pub [u32; 7]);

impl TrafficState {
    pub const EMPTY: TrafficState = TrafficState([0; 7]);

    #[inline]
    pub fn get(&self, class: ClassId) -> u32 {
        self.0[class]
    }

    /// Total population, `||x||_1`.
    pub fn norm1(&self) -> u64 {
        self.0.iter().map(|&v| u64::from(v)).sum()
    }

    /// Jobs at one server, summed over its classes.
    pub fn server_total(&self, server: Server) -> u32 {
        SERVER_CLASSES[server as usize - 1]
            .iter()
            .map(|&c| self.0[c])
            .sum()
    }

    pub fn with(mut self, class: ClassId, value: u32) -> Self {
        self.0[class] = value;
        self
    }

    /// State after one arrival of class `class`.
    pub fn after_arrival(mut self, class: ClassId) -> Self {
        self.0[class] += 1;
        self
    }

    /// State after serving one job of class `class` (the job hops to the
    /// next server on its path or leaves the network).
    pub fn after_service(mut self, class: ClassId) -> Self {
        debug_assert!(self.0[class] > 0, "serving an empty class");
        self.0[class] -= 1;
        if let Some(next) = CLASS_NEXT[class] {
            self.0[next] += 1;
        }
        self
    }
}

/// The two policy parameters; the type enforces only `1 < gamma < beta`,
/// membership in the stability region is checked against a
/// [`crate::network::FeasibleRegion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GspParams {
    pub beta: f64,
    pub gamma: f64,
}

impl GspParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 1.0 && gamma > 1.0 && gamma < beta) {
            return Err(Error::ConfigInvalid(format!(
                "require 1 < gamma < beta, got beta = {beta}, gamma = {gamma}"
            )));
        }
        Ok(GspParams { beta, gamma })
    }
}

/// One bottleneck per path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BottleneckCombo {
    pub b12: Server,
    pub b135: Server,
    pub b45: Server,
}

impl BottleneckCombo {
    pub fn get(&self, path: PathId) -> Server {
        match path {
            PathId::P12 => self.b12,
            PathId::P135 => self.b135,
            PathId::P45 => self.b45,
        }
    }

    pub fn label(&self) -> String {
        format!("({},{},{})", self.b12, self.b135, self.b45)
    }
}

/// Per-path weight multipliers drawn from `{1, gamma, gamma^2}`, stored as
/// exponents so fitting code can freeze them independently of `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeights {
    /// Exponent of `gamma` per path, in path order.
    pub exponents: [u8; 3],
    pub gamma: f64,
}

impl PathWeights {
    pub fn value(&self, path: PathId) -> f64 {
        self.gamma.powi(i32::from(self.exponents[path.index()]))
    }

    pub fn values(&self) -> [f64; 3] {
        [
            self.value(PathId::P12),
            self.value(PathId::P135),
            self.value(PathId::P45),
        ]
    }
}

/// The active (max-attaining) segment of one path cost, downstream-most at
/// ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveSegment {
    /// 0-based position along the path.
    pub index: usize,
    pub server: Server,
    /// Power of `beta` multiplying the prefix sum, `2 - index`.
    pub beta_exponent: u8,
    /// Sum of the class populations of the first `index + 1` servers.
    pub prefix: u32,
}

impl ActiveSegment {
    pub fn value(&self, beta: f64) -> f64 {
        beta.powi(i32::from(self.beta_exponent)) * f64::from(self.prefix)
    }
}

fn segment_values(path: PathId, x: &TrafficState, beta: f64) -> ([f64; 3], [u32; 3], usize) {
    let classes = path.classes();
    let mut values = [0.0; 3];
    let mut prefixes = [0u32; 3];
    let mut sum = 0u32;
    for (i, &c) in classes.iter().enumerate() {
        sum += x.get(c);
        prefixes[i] = sum;
        values[i] = beta.powi(2 - i as i32) * f64::from(sum);
    }
    (values, prefixes, classes.len())
}

/// Downstream-most segment attaining the path cost, ties resolved with
/// [`TIE_TOLERANCE`] relative slack.
pub fn active_segment(path: PathId, x: &TrafficState, beta: f64) -> ActiveSegment {
    let (values, prefixes, len) = segment_values(path, x, beta);
    let vmax = values[..len].iter().copied().fold(0.0, f64::max);
    let mut index = 0;
    for (i, &v) in values[..len].iter().enumerate() {
        if vmax - v <= TIE_TOLERANCE * vmax {
            index = i;
        }
    }
    ActiveSegment {
        index,
        server: path.servers()[index],
        beta_exponent: (2 - index) as u8,
        prefix: prefixes[index],
    }
}

/// The three path costs, in path order. Zero exactly when the path is empty.
pub fn q_values(x: &TrafficState, beta: f64) -> [f64; 3] {
    let mut q = [0.0; 3];
    for path in PathId::ALL {
        let (values, _, len) = segment_values(path, x, beta);
        q[path.index()] = values[..len].iter().copied().fold(0.0, f64::max);
    }
    q
}

pub fn q_value(path: PathId, x: &TrafficState, beta: f64) -> f64 {
    q_values(x, beta)[path.index()]
}

/// Bottleneck of every path at state `x`.
pub fn bottlenecks(x: &TrafficState, beta: f64) -> BottleneckCombo {
    BottleneckCombo {
        b12: active_segment(PathId::P12, x, beta).server,
        b135: active_segment(PathId::P135, x, beta).server,
        b45: active_segment(PathId::P45, x, beta).server,
    }
}

/// Weight exponents for a bottleneck combination: paths whose bottleneck
/// attains the highest service rate get exponent 0, the best of the rest
/// get 1, everyone else 2. Rate ties share a tier.
pub fn weight_exponents(b: BottleneckCombo, rates: &ServiceRates) -> [u8; 3] {
    let r = [rates.get(b.b12), rates.get(b.b135), rates.get(b.b45)];
    let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exponents = [2u8; 3];
    let mut rest_top = f64::NEG_INFINITY;
    for i in 0..3 {
        if r[i] == top {
            exponents[i] = 0;
        } else {
            rest_top = rest_top.max(r[i]);
        }
    }
    if rest_top.is_finite() {
        for i in 0..3 {
            if exponents[i] != 0 && r[i] == rest_top {
                exponents[i] = 1;
            }
        }
    }
    exponents
}

/// Path weights at a bottleneck combination.
pub fn path_weights(b: BottleneckCombo, rates: &ServiceRates, gamma: f64) -> PathWeights {
    PathWeights {
        exponents: weight_exponents(b, rates),
        gamma,
    }
}

/// `gamma_p(B) * Q_p(x)` for all paths.
pub fn weighted_q_values(x: &TrafficState, beta: f64, gamma: f64, rates: &ServiceRates) -> [f64; 3] {
    let q = q_values(x, beta);
    let w = path_weights(bottlenecks(x, beta), rates, gamma).values();
    [q[0] * w[0], q[1] * w[1], q[2] * w[2]]
}
