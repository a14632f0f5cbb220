//! Correct-clustering rate and the experiment drivers built on it.
//!
//! Models and ground-truth labels are put in correspondence by vote:
//!
//! * each model takes the label most of its sequences carry (ties go to the
//!   label seen first in that model);
//! * each label takes the model holding most of its sequences (ties go to
//!   the model seen first for that label).
//!
//! A sequence is correctly clustered when its model is its label's model
//! and that model's majority label is its own. Splitting a behaviour over
//! several models therefore costs as much as mixing behaviours in one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::clusterer::{ModelId, NodeState};
use crate::error::{Error, Result};
use crate::synthgen::{shuffled, LabeledSequence};
use crate::types::{Hyperparams, Timestamp};

/// One finalized sequence and the model it ended up in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub sequence_id: u64,
    pub label: u32,
    pub matched_model: ModelId,
    pub t: Timestamp,
}

/// First-seen-stable argmax over counts.
fn vote<K: Copy + Eq + std::hash::Hash>(order: &[K], counts: &HashMap<K, usize>) -> K {
    let mut best = order[0];
    for k in order {
        if counts[k] > counts[&best] {
            best = *k;
        }
    }
    best
}

/// Correct-clustering rate of a log.
pub fn ccr(entries: &[AssignmentEntry]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::EmptyLog);
    }
    // label counts per model, and model counts per label, in first-seen order
    let mut by_model: HashMap<ModelId, (Vec<u32>, HashMap<u32, usize>)> = HashMap::new();
    let mut by_label: HashMap<u32, (Vec<ModelId>, HashMap<ModelId, usize>)> = HashMap::new();
    for e in entries {
        let (order, counts) = by_model.entry(e.matched_model).or_default();
        let c = counts.entry(e.label).or_insert(0);
        if *c == 0 {
            order.push(e.label);
        }
        *c += 1;
        let (order, counts) = by_label.entry(e.label).or_default();
        let c = counts.entry(e.matched_model).or_insert(0);
        if *c == 0 {
            order.push(e.matched_model);
        }
        *c += 1;
    }
    let majority: HashMap<ModelId, u32> =
        by_model.iter().map(|(m, (order, counts))| (*m, vote(order, counts))).collect();
    let correct: usize = by_label
        .iter()
        .map(|(label, (order, counts))| {
            let model = vote(order, counts);
            if majority[&model] == *label {
                counts[&model]
            } else {
                0
            }
        })
        .sum();
    Ok(correct as f64 / entries.len() as f64)
}

/// CCR over the last `window` entries.
pub fn windowed_ccr(entries: &[AssignmentEntry], window: usize) -> Result<f64> {
    let start = entries.len().saturating_sub(window.max(1));
    ccr(&entries[start..])
}

/// A log whose model ids are mapped through the node's fusion history.
pub fn resolved(entries: &[AssignmentEntry], node: &NodeState) -> Vec<AssignmentEntry> {
    entries.iter().map(|e| AssignmentEntry { matched_model: node.resolve(e.matched_model), ..*e }).collect()
}

/// Outcome of streaming a fixture through one node.
#[derive(Debug, Clone)]
pub struct Run {
    pub node: NodeState,
    pub log: Vec<AssignmentEntry>,
    /// `(sequences so far, windowed CCR)` after each finalization, when
    /// requested.
    pub curve: Vec<(usize, f64)>,
}

/// Streams a fixture through a fresh node, one tick per sequence: sequence
/// `k` (0-based) is finalized at tick `k + 1`.
pub fn run_fixture(fixture: &[LabeledSequence], params: Hyperparams, window: Option<usize>) -> Result<Run> {
    let mut node = NodeState::new(1, params)?;
    let mut log = Vec::with_capacity(fixture.len());
    let mut curve = Vec::new();
    for (k, item) in fixture.iter().enumerate() {
        let t = k as Timestamp + 1;
        if let Some(a) = node.ingest_sequence(item.symbols.symbols(), t)? {
            log.push(AssignmentEntry { sequence_id: k as u64, label: item.label, matched_model: a.model_id, t: a.t });
            if let Some(w) = window {
                let start = log.len().saturating_sub(w);
                let recent = resolved(&log[start..], &node);
                curve.push((log.len(), ccr(&recent)?));
            }
        }
    }
    Ok(Run { node, log, curve })
}

/// Parameters used by the experiment drivers unless overridden.
pub fn experiment_params(epsilon: f64) -> Hyperparams {
    Hyperparams { epsilon, lambda: 1e-2, mu: 10.0, t_gap: 20, ..Hyperparams::default() }
}

/// Deterministic per-repeat seed.
pub fn sub_seed(seed: u64, repeat: usize) -> u64 {
    let mut z = seed.wrapping_add((repeat as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_ccr: f64,
    /// Population variance over repeats.
    pub variance: f64,
    pub mean_models: f64,
}

/// CCR per epsilon, averaged over `repeats` shuffles of the fixture.
pub fn sweep_epsilon(
    fixture: &[LabeledSequence],
    eps_values: &[f64],
    repeats: usize,
    seed: u64,
    base: Hyperparams,
) -> Result<Vec<SweepRow>> {
    if eps_values.is_empty() {
        return Err(Error::InvalidParams("no epsilon values".into()));
    }
    let repeats = repeats.max(1);
    let orders: Vec<Vec<LabeledSequence>> = (0..repeats).map(|r| shuffled(fixture, sub_seed(seed, r))).collect();
    eps_values
        .iter()
        .map(|&epsilon| {
            let params = Hyperparams { epsilon, ..base };
            let mut scores = Vec::with_capacity(repeats);
            let mut models = 0usize;
            for order in &orders {
                let run = run_fixture(order, params, None)?;
                scores.push(ccr(&resolved(&run.log, &run.node))?);
                models += run.node.len();
            }
            let mean = scores.iter().sum::<f64>() / repeats as f64;
            let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / repeats as f64;
            Ok(SweepRow { epsilon, mean_ccr: mean, variance, mean_models: models as f64 / repeats as f64 })
        })
        .collect()
}

/// Windowed CCR after every finalized sequence, in stream order.
pub fn convergence_curve(fixture: &[LabeledSequence], params: Hyperparams, window: usize) -> Result<Vec<(usize, f64)>> {
    if window == 0 {
        return Err(Error::InvalidParams("window must be at least 1".into()));
    }
    Ok(run_fixture(fixture, params, Some(window))?.curve)
}
