//! Two-layer node pipeline.
//!
//! Every grid cell has a layer-1 node clustering that cell's quadrant-mask
//! stream. When a layer-1 node's best match changes, the pair (node, model)
//! is re-encoded into one symbol and handed to the layer-2 node of the
//! cell's group. Per tick, layer-2 input is delivered sorted by source node
//! id. A layer-2 sequence is kept per object and ends once the object has
//! spent a full tick outside every cell of the group.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clusterer::{ModelId, NodeSnapshot, NodeState, StreamKey};
use crate::encoder::{encode_output, Contention, GridEncoder, GridSpec, ObjectObservation};
use crate::error::{Error, Result};
use crate::types::{Hyperparams, Symbol, Timestamp};

/// How layer-1 cells map onto layer-2 nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grouping {
    /// Rectangular blocks of `rows` x `cols` cells; edge blocks may be
    /// smaller.
    Blocks { rows: usize, cols: usize },
    /// Group index (0-based) for each cell in row-major order.
    Explicit { groups: Vec<usize> },
}

impl Grouping {
    /// One layer-2 node over the whole grid.
    pub fn single() -> Self {
        Grouping::Blocks { rows: usize::MAX, cols: usize::MAX }
    }

    /// Group of each cell, renumbered densely in order of first appearance.
    pub fn assign(&self, grid: &GridSpec) -> Result<Vec<usize>> {
        let raw: Vec<usize> = match self {
            Grouping::Blocks { rows, cols } => {
                if *rows == 0 || *cols == 0 {
                    return Err(Error::InvalidPipeline("block size must be positive".into()));
                }
                let per_row = grid.cols.div_ceil(*cols.min(&grid.cols));
                (0..grid.cell_count()).map(|c| (c / grid.cols) / rows * per_row + (c % grid.cols) / cols).collect()
            }
            Grouping::Explicit { groups } => {
                if groups.len() != grid.cell_count() {
                    return Err(Error::InvalidPipeline(format!(
                        "grouping lists {} cells but the grid has {}",
                        groups.len(),
                        grid.cell_count()
                    )));
                }
                groups.clone()
            }
        };
        let mut dense = BTreeMap::new();
        Ok(raw
            .into_iter()
            .map(|g| {
                let next = dense.len();
                *dense.entry(g).or_insert(next)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub grid: GridSpec,
    pub layer1: Hyperparams,
    pub layer2: Hyperparams,
    pub grouping: Grouping,
}

/// Tagged pipeline log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineEvent {
    /// A node's best match changed.
    Match {
        t: Timestamp,
        layer: u8,
        node_id: u32,
        object_id: u64,
        model_index: usize,
        model_id: ModelId,
        distance: f64,
        predicted: Vec<u32>,
    },
    /// A node closed a sequence.
    Finalize {
        t: Timestamp,
        layer: u8,
        node_id: u32,
        object_id: u64,
        model_id: ModelId,
        model_index: usize,
        merged: bool,
        sequence: Vec<u32>,
    },
    /// A symbol delivered to a layer-2 node.
    Transfer {
        t: Timestamp,
        from_node: u32,
        to_node: u32,
        object_id: u64,
        symbol: u32,
    },
    Contention {
        t: Timestamp,
        cell: usize,
        object_ids: Vec<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSnapshot {
    pub layer1: Vec<NodeSnapshot>,
    pub layer2: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    spec: PipelineSpec,
    encoder: GridEncoder,
    layer1: Vec<NodeState>,
    layer2: Vec<NodeState>,
    group_of: Vec<usize>,
    /// Objects with an open layer-2 sequence, per group.
    open: BTreeSet<(usize, u64)>,
    last_t: Option<Timestamp>,
}

impl Pipeline {
    /// Layer-1 node ids are `1..=cells`; layer-2 ids follow on.
    pub fn new(spec: PipelineSpec) -> Result<Self> {
        let encoder = GridEncoder::new(spec.grid)?;
        let group_of = spec.grouping.assign(&spec.grid)?;
        let groups = group_of.iter().max().map_or(0, |g| g + 1);
        let cells = spec.grid.cell_count();
        let id = |k: usize| u32::try_from(k).map_err(|_| Error::InvalidPipeline("too many nodes".into()));
        let layer1 = (0..cells).map(|c| NodeState::new(id(c + 1)?, spec.layer1)).collect::<Result<Vec<_>>>()?;
        let layer2 =
            (0..groups).map(|g| NodeState::new(id(cells + g + 1)?, spec.layer2)).collect::<Result<Vec<_>>>()?;
        Ok(Pipeline { spec, encoder, layer1, layer2, group_of, open: BTreeSet::new(), last_t: None })
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn layer1(&self) -> &[NodeState] {
        &self.layer1
    }

    pub fn layer2(&self) -> &[NodeState] {
        &self.layer2
    }

    /// Layer-2 node index (0-based) fed by `cell`.
    pub fn group_of(&self, cell: usize) -> usize {
        self.group_of[cell]
    }

    pub fn snapshot(&self) -> PipelineSnapshot {
        PipelineSnapshot {
            layer1: self.layer1.iter().map(NodeState::snapshot).collect(),
            layer2: self.layer2.iter().map(NodeState::snapshot).collect(),
        }
    }

    /// Advances the pipeline by one tick. Observations must all carry `t`,
    /// and `t` must exceed the previous tick.
    pub fn tick(&mut self, observations: &[ObjectObservation], t: Timestamp) -> Result<Vec<PipelineEvent>> {
        if self.last_t.is_some_and(|last| t <= last) {
            return Err(Error::ClockRegression { now: t, clock: self.last_t.unwrap_or(0) });
        }
        if let Some(o) = observations.iter().find(|o| o.t != t) {
            return Err(Error::InvalidPipeline(format!("observation at t={} passed to tick {t}", o.t)));
        }
        self.last_t = Some(t);
        let mut log = Vec::new();

        let step = self.encoder.encode_step(observations, t);
        for Contention { t, cell, object_ids } in step.contentions {
            log.push(PipelineEvent::Contention { t, cell, object_ids });
        }

        // Layer 1. Events arrive ordered by cell, hence by node id.
        let m_u1 = self.spec.layer1.m_u;
        let mut transfers: Vec<(u32, u64, Symbol)> = Vec::new();
        for ev in &step.events {
            let node = &mut self.layer1[ev.cell];
            let out = node.ingest_on(ev.object_id, ev.symbol, t)?;
            let node_id = node.node_id();
            if let Some(m) = out.event.filter(|m| m.emitted) {
                transfers.push((node_id, ev.object_id, encode_output(node_id, m.model_index, m_u1)?));
                log.push(PipelineEvent::Match {
                    t,
                    layer: 1,
                    node_id,
                    object_id: ev.object_id,
                    model_index: m.model_index,
                    model_id: m.model_id,
                    distance: m.distance,
                    predicted: m.predicted_suffix.to_u32s(),
                });
            }
            if let Some(a) = out.assignment {
                log.push(finalize_event(t, 1, node_id, ev.object_id, &a));
            }
        }
        for node in &mut self.layer1 {
            node.advance_to(t)?;
        }

        // Transfer, stable by source node id.
        transfers.sort_by_key(|(source, _, _)| *source);
        for (source, object, symbol) in transfers {
            let g = self.group_of[source as usize - 1];
            self.open.insert((g, object));
            self.deliver(g, source, object, symbol, t, &mut log)?;
        }

        // Close layer-2 sequences of objects now absent from their group.
        let present: BTreeSet<(usize, u64)> =
            self.encoder.occupied().map(|(cell, object)| (self.group_of[cell], object)).collect();
        let closing: Vec<(usize, u64)> = self.open.difference(&present).copied().collect();
        for (g, object) in closing {
            self.open.remove(&(g, object));
            self.deliver(g, 0, object, Symbol::DELIMITER, t, &mut log)?;
        }
        for node in &mut self.layer2 {
            node.advance_to(t)?;
        }
        Ok(log)
    }

    /// Runs one empty tick after the last one so every open sequence closes.
    pub fn finish(&mut self) -> Result<Vec<PipelineEvent>> {
        match self.last_t {
            Some(t) => self.tick(&[], t + 1),
            None => Ok(Vec::new()),
        }
    }

    fn deliver(
        &mut self,
        group: usize,
        source: u32,
        object: u64,
        symbol: Symbol,
        t: Timestamp,
        log: &mut Vec<PipelineEvent>,
    ) -> Result<()> {
        let node = &mut self.layer2[group];
        let node_id = node.node_id();
        if !symbol.is_delimiter() {
            log.push(PipelineEvent::Transfer {
                t,
                from_node: source,
                to_node: node_id,
                object_id: object,
                symbol: symbol.0,
            });
        }
        let out = node.ingest_on(object as StreamKey, symbol, t)?;
        if let Some(m) = out.event.filter(|m| m.emitted) {
            log.push(PipelineEvent::Match {
                t,
                layer: 2,
                node_id,
                object_id: object,
                model_index: m.model_index,
                model_id: m.model_id,
                distance: m.distance,
                predicted: m.predicted_suffix.to_u32s(),
            });
        }
        if let Some(a) = out.assignment {
            log.push(finalize_event(t, 2, node_id, object, &a));
        }
        Ok(())
    }
}

fn finalize_event(
    t: Timestamp,
    layer: u8,
    node_id: u32,
    object_id: u64,
    a: &crate::clusterer::Assignment,
) -> PipelineEvent {
    PipelineEvent::Finalize {
        t,
        layer,
        node_id,
        object_id,
        model_id: a.model_id,
        model_index: a.model_index,
        merged: a.merged,
        sequence: a.sequence.to_u32s(),
    }
}
