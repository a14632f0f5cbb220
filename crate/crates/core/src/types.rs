//! Domain types shared by every stage: symbols, sequences, micro-clusters,
//! hyperparameters and the exponential decay primitive.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logical clock value. One tick per stream observation.
pub type Timestamp = u64;

/// A discrete alphabet symbol.
///
/// Layer-1 symbols are quadrant masks in `0..=15`. Higher layers carry the
/// re-encoded `(node, model)` codes, which can be arbitrarily large. The value
/// `0` is reserved as the empty-cell / sequence delimiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Symbol(pub u32);

impl Symbol {
    pub const DELIMITER: Symbol = Symbol(0);

    pub fn is_delimiter(self) -> bool {
        self.0 == 0
    }
}

impl From<u32> for Symbol {
    fn from(v: u32) -> Self {
        Symbol(v)
    }
}

impl fmt::Display for Symbol {
    /// Values below 16 render as a single hex digit, larger ones as `[n]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 < 16 {
            write!(f, "{:X}", self.0)
        } else {
            write!(f, "[{}]", self.0)
        }
    }
}

/// An ordered run of non-delimiter symbols with no two equal neighbours.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Sequence(Vec<Symbol>);

impl Sequence {
    pub fn empty() -> Self {
        Sequence(Vec::new())
    }

    /// Builds a sequence, rejecting delimiters and consecutive duplicates.
    pub fn new(symbols: Vec<Symbol>) -> Result<Self> {
        for (i, s) in symbols.iter().enumerate() {
            if s.is_delimiter() {
                return Err(Error::InvalidSequence(format!("delimiter at position {i}")));
            }
            if i > 0 && symbols[i - 1] == *s {
                return Err(Error::InvalidSequence(format!("consecutive duplicate {s} at position {i}")));
            }
        }
        Ok(Sequence(symbols))
    }

    /// Builds a sequence by dropping delimiters and collapsing repeats, the
    /// same filtering the clusterer applies at ingestion.
    pub fn from_stream<I: IntoIterator<Item = Symbol>>(symbols: I) -> Self {
        let mut out: Vec<Symbol> = Vec::new();
        for s in symbols {
            if !s.is_delimiter() && out.last() != Some(&s) {
                out.push(s);
            }
        }
        Sequence(out)
    }

    /// Parses hex digits, e.g. `"4CEA2"`. Used heavily by fixtures.
    pub fn from_hex(text: &str) -> Result<Self> {
        let symbols = text
            .chars()
            .map(|c| {
                c.to_digit(16).map(Symbol).ok_or_else(|| Error::InvalidSequence(format!("'{c}' is not a hex digit")))
            })
            .collect::<Result<Vec<_>>>()?;
        Sequence::new(symbols)
    }

    pub fn from_u32s(values: &[u32]) -> Result<Self> {
        Sequence::new(values.iter().copied().map(Symbol).collect())
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<Symbol> {
        self.0
    }

    pub fn to_u32s(&self) -> Vec<u32> {
        self.0.iter().map(|s| s.0).collect()
    }
}

impl<'de> Deserialize<'de> for Sequence {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<Symbol>::deserialize(de)?;
        Sequence::new(raw).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// A micro-cluster `(t, w, SE, SW)`: last update tick, cluster weight, model
/// sequence and one weight per model character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMicroCluster")]
pub struct MicroCluster {
    pub(crate) t: Timestamp,
    pub(crate) w: f64,
    #[serde(rename = "SE")]
    pub(crate) se: Sequence,
    #[serde(rename = "SW")]
    pub(crate) sw: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMicroCluster {
    t: Timestamp,
    w: f64,
    #[serde(rename = "SE")]
    se: Sequence,
    #[serde(rename = "SW")]
    sw: Vec<f64>,
}

impl TryFrom<RawMicroCluster> for MicroCluster {
    type Error = Error;

    fn try_from(raw: RawMicroCluster) -> Result<Self> {
        MicroCluster::new(raw.t, raw.w, raw.se, raw.sw)
    }
}

impl MicroCluster {
    pub fn new(t: Timestamp, w: f64, se: Sequence, sw: Vec<f64>) -> Result<Self> {
        if se.len() != sw.len() {
            return Err(Error::InvalidCluster(format!("{} symbols but {} weights", se.len(), sw.len())));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidCluster(format!("cluster weight {w}")));
        }
        if let Some(bad) = sw.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidCluster(format!("character weight {bad}")));
        }
        Ok(MicroCluster { t, w, se, sw })
    }

    /// A freshly observed sequence: weight 1 and every character weight 1.
    pub fn from_sequence(se: Sequence, t: Timestamp) -> Self {
        let sw = vec![1.0; se.len()];
        MicroCluster { t, w: 1.0, se, sw }
    }

    pub fn t(&self) -> Timestamp {
        self.t
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn se(&self) -> &Sequence {
        &self.se
    }

    pub fn sw(&self) -> &[f64] {
        &self.sw
    }

    pub fn len(&self) -> usize {
        self.se.len()
    }

    pub fn is_empty(&self) -> bool {
        self.se.is_empty()
    }

    pub fn max_sw(&self) -> f64 {
        self.sw.iter().copied().fold(0.0, f64::max)
    }

    /// Cluster weight as seen at `t_now`, without mutating.
    pub fn decayed_w(&self, t_now: Timestamp, lambda: f64) -> f64 {
        decay_weight(self.w, t_now, self.t, lambda)
    }

    /// Brings the cluster forward to `t_now`, scaling `w` and every
    /// character weight by the same factor.
    pub fn decay_to(&mut self, t_now: Timestamp, lambda: f64) {
        let factor = decay_weight(1.0, t_now, self.t, lambda);
        self.w *= factor;
        for x in &mut self.sw {
            *x *= factor;
        }
        self.t = self.t.max(t_now);
    }
}

/// Clustering hyperparameters of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Merge / match distance threshold.
    pub epsilon: f64,
    /// Decay factor; weights halve every `1 / lambda` ticks.
    pub lambda: f64,
    /// Maximum tolerated gap between the heaviest character and any other.
    pub mu: f64,
    /// Cleanup interval in ticks.
    pub t_gap: u64,
    /// Model-count cap per node.
    pub m_u: usize,
    /// Matching and merging start once the store holds more than this many models.
    #[serde(default = "default_min_models")]
    pub min_models_for_matching: usize,
}

fn default_min_models() -> usize {
    2
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { epsilon: 0.3, lambda: 1e-2, mu: 10.0, t_gap: 20, m_u: 64, min_models_for_matching: 2 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if self.t_gap == 0 {
            return bad("t_gap must be positive");
        }
        if self.m_u == 0 {
            return bad("m_u must be positive");
        }
        Ok(())
    }

    /// Cluster weights at or below this value are dropped at cleanup.
    pub fn removal_threshold(&self) -> f64 {
        (-self.lambda * self.t_gap as f64).exp2()
    }
}

/// `w * 2^(-lambda * (t_now - t_last))`.
pub fn decay_weight(w: f64, t_now: Timestamp, t_last: Timestamp, lambda: f64) -> f64 {
    debug_assert!(t_now >= t_last, "decay backwards in time");
    let elapsed = t_now.saturating_sub(t_last);
    if elapsed == 0 {
        return w;
    }
    w * (-lambda * elapsed as f64).exp2()
}
