//! A single clustering node.
//!
//! The node reads one symbol per tick. Non-delimiter symbols extend the
//! in-progress sequence and, once enough models exist, are matched against
//! the store to produce [`MatchEvent`]s. A delimiter closes the sequence,
//! which then either merges into the closest model (distance within
//! `epsilon`) or becomes a model of its own. Every `t_gap` ticks the store is
//! cleaned: weights decay, stale models go, low-weight characters are pruned
//! and near-duplicate models are fused.
//!
//! Weights are stored as of each model's last update tick and brought
//! forward lazily, which gives the same values as decaying every model on
//! every tick.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{merge, merge_models};
use crate::similarity::{
    distance_from_score, lcs_table, lighter_first, next_row, normalized_weights, weighted_score, DpTable,
};
use crate::types::{Hyperparams, MicroCluster, Sequence, Symbol, Timestamp};

/// Stable identity of a stored model. Unlike the 1-based store index it
/// survives removals elsewhere in the store.
pub type ModelId = u64;

/// Demultiplexing key for interleaved sequences sharing one node's store.
pub type StreamKey = u64;

/// Stream used by the single-stream API.
pub const DEFAULT_STREAM: StreamKey = 0;

/// Result of matching the in-progress sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEvent {
    /// 1-based position of the matched model in the store.
    pub model_index: usize,
    pub model_id: ModelId,
    pub distance: f64,
    pub predicted_suffix: Sequence,
    /// True iff the matched model index changed since the previous event of
    /// this sequence.
    pub emitted: bool,
}

/// What happened to a finished sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub sequence: Sequence,
    pub model_id: ModelId,
    /// 1-based store index right after the assignment.
    pub model_index: usize,
    /// Distance to the closest model, when matching was active.
    pub distance: Option<f64>,
    pub merged: bool,
    pub t: Timestamp,
}

/// Outcome of one ingested symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub event: Option<MatchEvent>,
    pub assignment: Option<Assignment>,
}

/// Running counters, reported by the CLI.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub symbols: u64,
    pub sequences: u64,
    pub created: u64,
    pub merged: u64,
    pub evicted: u64,
    pub expired: u64,
    pub fused: u64,
    pub pruned_chars: u64,
    pub cleanups: u64,
}

/// Serializable store snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node_id: u32,
    pub params: Hyperparams,
    pub clock: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_cleanup: Option<Timestamp>,
    pub models: Vec<MicroCluster>,
}

#[derive(Debug, Clone)]
struct Slot {
    id: ModelId,
    revision: u64,
    mc: MicroCluster,
    norm: Vec<f64>,
}

impl Slot {
    fn new(id: ModelId, revision: u64, mc: MicroCluster) -> Self {
        let norm = normalized_weights(mc.sw());
        Slot { id, revision, mc, norm }
    }

    fn replace(&mut self, revision: u64, mc: MicroCluster) {
        self.norm = normalized_weights(mc.sw());
        self.revision = revision;
        self.mc = mc;
    }
}

/// Last DP row of the buffer against one model, valid while the model's
/// revision and the buffer length match.
#[derive(Debug, Clone, Default)]
struct RowCache {
    revision: u64,
    len: usize,
    row: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Cursor {
    buffer: Vec<Symbol>,
    current_match: Option<usize>,
    rows: Vec<Option<RowCache>>,
    scratch: Vec<f64>,
}

impl Cursor {
    /// Updates every row to the full buffer and returns the closest model as
    /// `(store position, distance)`; ties go to the lowest position.
    fn closest(&mut self, store: &[Slot]) -> Option<(usize, f64)> {
        if self.buffer.is_empty() {
            return None;
        }
        self.rows.resize(store.len(), None);
        let n = self.buffer.len();
        let mut best: Option<(usize, f64)> = None;
        for (k, slot) in store.iter().enumerate() {
            let model = slot.mc.se().symbols();
            let cache = &mut self.rows[k];
            let reusable = matches!(cache, Some(c) if c.revision == slot.revision && c.len + 1 >= n && c.len <= n);
            if !reusable {
                let mut row = vec![0.0; model.len() + 1];
                let mut next = vec![0.0; model.len() + 1];
                for &q in &self.buffer {
                    next_row(&row, &mut next, q, model, &slot.norm);
                    std::mem::swap(&mut row, &mut next);
                }
                *cache = Some(RowCache { revision: slot.revision, len: n, row });
            }
            let c = cache.as_mut().expect("filled above");
            if c.len + 1 == n {
                self.scratch.resize(model.len() + 1, 0.0);
                next_row(&c.row, &mut self.scratch, self.buffer[n - 1], model, &slot.norm);
                std::mem::swap(&mut c.row, &mut self.scratch);
                c.len = n;
            }
            let d = distance_from_score(c.row[model.len()], n, model.len());
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((k, d));
            }
        }
        best
    }

    fn forget_slot(&mut self, k: usize) {
        if k < self.rows.len() {
            self.rows.remove(k);
        }
        self.current_match = match self.current_match {
            Some(m) if m == k + 1 => None,
            Some(m) if m > k + 1 => Some(m - 1),
            other => other,
        };
    }

    fn reset(&mut self) {
        self.buffer.clear();
        self.current_match = None;
        for r in &mut self.rows {
            *r = None;
        }
    }
}

/// One clustering node: its model store, open sequences and clock.
#[derive(Debug, Clone)]
pub struct NodeState {
    node_id: u32,
    params: Hyperparams,
    store: Vec<Slot>,
    clock: Timestamp,
    last_cleanup: Option<Timestamp>,
    streams: BTreeMap<StreamKey, Cursor>,
    next_id: ModelId,
    next_revision: u64,
    aliases: HashMap<ModelId, ModelId>,
    pair_cache: HashMap<(u64, u64), (f64, f64)>,
    stats: NodeStats,
}

impl NodeState {
    pub fn new(node_id: u32, params: Hyperparams) -> Result<Self> {
        if node_id == 0 {
            return Err(Error::InvalidNodeId);
        }
        params.validate()?;
        Ok(NodeState {
            node_id,
            params,
            store: Vec::new(),
            clock: 0,
            last_cleanup: None,
            streams: BTreeMap::new(),
            next_id: 1,
            next_revision: 1,
            aliases: HashMap::new(),
            pair_cache: HashMap::new(),
            stats: NodeStats::default(),
        })
    }

    pub fn node_id(&self) -> u32 {
        self.node_id
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = &MicroCluster> + '_ {
        self.store.iter().map(|s| &s.mc)
    }

    /// Model at a 1-based store index.
    pub fn model(&self, index: usize) -> Option<&MicroCluster> {
        index.checked_sub(1).and_then(|k| self.store.get(k)).map(|s| &s.mc)
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        self.store.iter().map(|s| s.id).collect()
    }

    /// Follows fusion history: a model absorbed at cleanup resolves to the
    /// model that absorbed it.
    pub fn resolve(&self, mut id: ModelId) -> ModelId {
        while let Some(&next) = self.aliases.get(&id) {
            id = next;
        }
        id
    }

    /// The in-progress sequence of the default stream.
    pub fn buffer(&self) -> &[Symbol] {
        self.streams.get(&DEFAULT_STREAM).map_or(&[], |c| c.buffer.as_slice())
    }

    fn matching_active(&self) -> bool {
        self.store.len() > self.params.min_models_for_matching
    }

    fn bump_revision(&mut self) -> u64 {
        let r = self.next_revision;
        self.next_revision += 1;
        r
    }

    pub fn ingest_symbol(&mut self, s: Symbol, t_now: Timestamp) -> Result<Ingested> {
        self.ingest_on(DEFAULT_STREAM, s, t_now)
    }

    /// Feeds one symbol of the sequence identified by `stream`.
    pub fn ingest_on(&mut self, stream: StreamKey, s: Symbol, t_now: Timestamp) -> Result<Ingested> {
        self.set_clock(t_now)?;
        self.stats.symbols += 1;
        let mut out = Ingested::default();
        let mut cursor = self.streams.remove(&stream).unwrap_or_default();

        let repeat = cursor.buffer.last() == Some(&s);
        if !repeat {
            if !s.is_delimiter() {
                cursor.buffer.push(s);
                if self.matching_active() {
                    out.event = self.match_event(&mut cursor);
                }
            } else if !cursor.buffer.is_empty() {
                out.assignment = Some(self.finalize(&mut cursor, t_now));
            }
        }

        if !cursor.buffer.is_empty() {
            self.streams.insert(stream, cursor);
        } else if stream == DEFAULT_STREAM {
            // Keep the default cursor's allocations around.
            self.streams.insert(stream, cursor);
        }
        self.maybe_cleanup();
        Ok(out)
    }

    /// Moves the clock without a symbol, running cleanup if a boundary is
    /// reached.
    pub fn advance_to(&mut self, t_now: Timestamp) -> Result<()> {
        self.set_clock(t_now)?;
        self.maybe_cleanup();
        Ok(())
    }

    /// Idles the clock up to the next cleanup boundary and cleans there.
    pub fn flush(&mut self) {
        let gap = self.params.t_gap;
        if self.last_cleanup == Some(self.clock) {
            return;
        }
        let next = self.clock.div_ceil(gap) * gap;
        self.clock = next;
        self.maybe_cleanup();
    }

    fn set_clock(&mut self, t_now: Timestamp) -> Result<()> {
        if t_now < self.clock {
            return Err(Error::ClockRegression { now: t_now, clock: self.clock });
        }
        let gap = self.params.t_gap;
        // A jump across a boundary without landing on it still owes a cleanup.
        let crossed = t_now / gap > self.clock / gap && !t_now.is_multiple_of(gap);
        self.clock = t_now;
        if crossed {
            self.cleanup(t_now);
            self.last_cleanup = Some(t_now);
        }
        Ok(())
    }

    fn maybe_cleanup(&mut self) {
        if self.clock.is_multiple_of(self.params.t_gap) && self.last_cleanup != Some(self.clock) {
            self.cleanup(self.clock);
            self.last_cleanup = Some(self.clock);
        }
    }

    fn match_event(&mut self, cursor: &mut Cursor) -> Option<MatchEvent> {
        let (k, d) = cursor.closest(&self.store)?;
        let index = k + 1;
        let emitted = cursor.current_match != Some(index);
        cursor.current_match = Some(index);
        let query = Sequence::new(cursor.buffer.clone()).expect("buffer keeps the sequence invariant");
        Some(MatchEvent {
            model_index: index,
            model_id: self.store[k].id,
            distance: d,
            predicted_suffix: predict_suffix(&query, &self.store[k].mc),
            emitted,
        })
    }

    fn finalize(&mut self, cursor: &mut Cursor, t_now: Timestamp) -> Assignment {
        self.stats.sequences += 1;
        let sequence = Sequence::new(cursor.buffer.clone()).expect("buffer keeps the sequence invariant");
        let closest = if self.matching_active() { cursor.closest(&self.store) } else { None };
        cursor.reset();
        let incoming = MicroCluster::from_sequence(sequence.clone(), t_now);

        if let Some((k, d)) = closest {
            if d <= self.params.epsilon {
                let lambda = self.params.lambda;
                let mut established = self.store[k].mc.clone();
                established.decay_to(t_now, lambda);
                let merged = merge(&established, &incoming, t_now);
                let rev = self.bump_revision();
                self.store[k].replace(rev, merged);
                self.stats.merged += 1;
                return Assignment {
                    sequence,
                    model_id: self.store[k].id,
                    model_index: k + 1,
                    distance: Some(d),
                    merged: true,
                    t: t_now,
                };
            }
        }

        if self.store.len() >= self.params.m_u {
            self.evict_lightest(t_now);
        }
        let id = self.next_id;
        self.next_id += 1;
        let rev = self.bump_revision();
        self.store.push(Slot::new(id, rev, incoming));
        self.stats.created += 1;
        Assignment {
            sequence,
            model_id: id,
            model_index: self.store.len(),
            distance: closest.map(|(_, d)| d),
            merged: false,
            t: t_now,
        }
    }

    fn evict_lightest(&mut self, t_now: Timestamp) {
        let lambda = self.params.lambda;
        let mut victim: Option<(usize, f64)> = None;
        for (k, slot) in self.store.iter().enumerate() {
            let w = slot.mc.decayed_w(t_now, lambda);
            if victim.is_none_or(|(_, best)| w < best) {
                victim = Some((k, w));
            }
        }
        if let Some((k, _)) = victim {
            self.remove_slot(k);
            self.stats.evicted += 1;
        }
    }

    fn remove_slot(&mut self, k: usize) -> Slot {
        for cursor in self.streams.values_mut() {
            cursor.forget_slot(k);
        }
        self.store.remove(k)
    }

    /// Closest stored model to `query` as `(1-based index, distance)`.
    pub fn match_closest(&self, query: &Sequence) -> Option<(usize, f64)> {
        if query.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, slot) in self.store.iter().enumerate() {
            let score = weighted_score(query.symbols(), slot.mc.se().symbols(), &slot.norm);
            let d = distance_from_score(score, query.len(), slot.mc.len());
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((k + 1, d));
            }
        }
        best
    }

    /// Remainder of model `model_index` (1-based) after the part `query`
    /// already covers.
    pub fn predict(&self, query: &Sequence, model_index: usize) -> Option<Sequence> {
        self.model(model_index).map(|mc| predict_suffix(query, mc))
    }

    /// Decays and expires models, prunes noise characters and fuses models
    /// within `epsilon` of each other.
    pub fn cleanup(&mut self, t_now: Timestamp) {
        self.stats.cleanups += 1;
        let p = self.params;
        let threshold = p.removal_threshold();

        let mut k = 0;
        while k < self.store.len() {
            if self.store[k].mc.decayed_w(t_now, p.lambda) <= threshold {
                self.remove_slot(k);
                self.stats.expired += 1;
                continue;
            }
            let mut mc = self.store[k].mc.clone();
            mc.decay_to(t_now, p.lambda);
            let dropped = prune(&mut mc, p.mu);
            if dropped > 0 {
                self.stats.pruned_chars += dropped as u64;
                let rev = self.bump_revision();
                self.store[k].replace(rev, mc);
            } else {
                // Uniform scaling leaves normalized weights, and so every
                // distance, unchanged: keep the revision.
                self.store[k].mc = mc;
            }
            k += 1;
        }

        self.fuse_close_models(t_now);
        while self.store.len() > p.m_u {
            self.evict_lightest(t_now);
        }
        let live: HashSet<u64> = self.store.iter().map(|s| s.revision).collect();
        self.pair_cache.retain(|(a, b), _| live.contains(a) && live.contains(b));
    }

    /// Distances of a pair in both query orientations, cached by revision.
    fn pair_distances(&mut self, a: usize, b: usize) -> (f64, f64) {
        let (ra, rb) = (self.store[a].revision, self.store[b].revision);
        let key = if ra < rb { (ra, rb) } else { (rb, ra) };
        let (lo, hi) = if ra < rb { (a, b) } else { (b, a) };
        let store = &self.store;
        let (d_lo, d_hi) = *self.pair_cache.entry(key).or_insert_with(|| {
            let as_query = |q: &Slot, m: &Slot| {
                let score = weighted_score(q.mc.se().symbols(), m.mc.se().symbols(), &m.norm);
                distance_from_score(score, q.mc.len(), m.mc.len())
            };
            (as_query(&store[lo], &store[hi]), as_query(&store[hi], &store[lo]))
        });
        if ra < rb {
            (d_lo, d_hi)
        } else {
            (d_hi, d_lo)
        }
    }

    fn fuse_close_models(&mut self, t_now: Timestamp) {
        let eps = self.params.epsilon;
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for a in 0..self.store.len() {
                for b in a + 1..self.store.len() {
                    let (a_query, b_query) = self.pair_distances(a, b);
                    let d = if lighter_first(&self.store[a].mc, &self.store[b].mc) { a_query } else { b_query };
                    if d <= eps && best.is_none_or(|(_, _, bd)| d < bd) {
                        best = Some((a, b, d));
                    }
                }
            }
            let Some((a, b, _)) = best else { break };
            let (heavy, light) = if lighter_first(&self.store[a].mc, &self.store[b].mc) { (b, a) } else { (a, b) };
            let mut fused = merge_models(&self.store[heavy].mc, &self.store[light].mc, t_now);
            self.stats.pruned_chars += prune(&mut fused, self.params.mu) as u64;
            let rev = self.bump_revision();
            self.store[heavy].replace(rev, fused);
            let survivor = self.store[heavy].id;
            let absorbed = self.remove_slot(light);
            self.aliases.insert(absorbed.id, survivor);
            self.stats.fused += 1;
        }
    }

    pub fn snapshot(&self) -> NodeSnapshot {
        NodeSnapshot {
            node_id: self.node_id,
            params: self.params,
            clock: self.clock,
            last_cleanup: self.last_cleanup,
            models: self.store.iter().map(|s| s.mc.clone()).collect(),
        }
    }

    /// Rebuilds a node from a snapshot. Open sequences are not part of a
    /// snapshot; model ids are reassigned in store order starting at 1.
    pub fn from_snapshot(snapshot: NodeSnapshot) -> Result<Self> {
        let mut node = NodeState::new(snapshot.node_id, snapshot.params)?;
        if snapshot.models.len() > snapshot.params.m_u {
            return Err(Error::InvalidParams(format!(
                "snapshot holds {} models but m_u is {}",
                snapshot.models.len(),
                snapshot.params.m_u
            )));
        }
        for mc in snapshot.models {
            let id = node.next_id;
            node.next_id += 1;
            let rev = node.bump_revision();
            node.store.push(Slot::new(id, rev, mc));
        }
        node.clock = snapshot.clock;
        node.last_cleanup = snapshot.last_cleanup;
        Ok(node)
    }

    /// Replaces the store wholesale. Intended for tests and tooling.
    pub fn set_models(&mut self, models: Vec<MicroCluster>) {
        self.store.clear();
        self.pair_cache.clear();
        for cursor in self.streams.values_mut() {
            cursor.rows.clear();
            cursor.current_match = None;
        }
        for mc in models {
            let id = self.next_id;
            self.next_id += 1;
            let rev = self.bump_revision();
            self.store.push(Slot::new(id, rev, mc));
        }
    }

    /// Feeds a whole sequence as a single observation: its symbols at the
    /// current clock, then the delimiter at `t_now`.
    pub fn ingest_sequence(&mut self, sequence: &[Symbol], t_now: Timestamp) -> Result<Option<Assignment>> {
        if t_now < self.clock {
            return Err(Error::ClockRegression { now: t_now, clock: self.clock });
        }
        let t = self.clock;
        for &s in sequence {
            self.ingest_symbol(s, t)?;
        }
        Ok(self.ingest_symbol(Symbol::DELIMITER, t_now)?.assignment)
    }
}

/// Largest model position (1-based) consumed by the weighted alignment, if any.
/// Drops characters more than `mu` below the heaviest one and collapses the
/// repeats this exposes. Returns the number dropped.
fn prune(mc: &mut MicroCluster, mu: f64) -> usize {
    let max = mc.max_sw();
    let keep: Vec<bool> = mc.sw().iter().map(|w| max - w <= mu).collect();
    let dropped = keep.iter().filter(|x| !**x).count();
    if dropped > 0 {
        let (symbols, weights): (Vec<Symbol>, Vec<f64>) = mc
            .se()
            .symbols()
            .iter()
            .zip(mc.sw())
            .zip(&keep)
            .filter(|(_, keep)| **keep)
            .map(|((s, w), _)| (*s, *w))
            .unzip();
        let (se, sw) = crate::merge::collapse_repeats(symbols, weights);
        mc.se = se;
        mc.sw = sw;
    }
    dropped
}

fn aligned_model_end(table: &DpTable, query: &[Symbol], model: &[Symbol]) -> Option<usize> {
    let (mut i, mut j) = (model.len(), query.len());
    while i > 0 && j > 0 {
        let here = table.get(j, i);
        if here == table.get(j - 1, i) {
            j -= 1;
        } else if here == table.get(j, i - 1) {
            i -= 1;
        } else {
            return Some(i);
        }
    }
    None
}

/// Model sequence remaining after the last model character aligned with
/// `query`; the whole model when nothing aligns.
pub fn predict_suffix(query: &Sequence, model: &MicroCluster) -> Sequence {
    let table = lcs_table(query, model);
    let symbols = model.se().symbols();
    let start = aligned_model_end(&table, query.symbols(), symbols).unwrap_or(0);
    Sequence::new(symbols[start..].to_vec()).expect("suffix of a valid sequence")
}
