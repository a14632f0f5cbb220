use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seqstream::encoder::{decode_output, ObjectObservation, ObservationRecord};
use seqstream::eval::{convergence_curve, sweep_epsilon};
use seqstream::synthgen::{
    gen_point_stream, gen_sequence_stream_with, standard_fixture, standard_patterns, LabeledSequence, NoiseKind,
    PatternSpec, SequenceNoise,
};
use seqstream::topology::{Pipeline, PipelineEvent, PipelineSnapshot};
use seqstream::{ModelId, NodeSnapshot, NodeState, Sequence, Symbol, Timestamp};

use crate::config::{Settings, UsageError};
use crate::io::{self, SequenceRecord};
use crate::{Command, ConfigArgs, FixtureArgs, NoiseArg, SynthKind};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Cluster { input, config, snapshot, log, init, node_id } => {
            cluster(&input, &config, &snapshot, log.as_deref(), init.as_deref(), node_id)
        }
        Command::Pipeline { input, config, events, snapshot } => {
            pipeline(&input, &config, &events, snapshot.as_deref())
        }
        Command::Synth { kind } => synth(kind),
        Command::EvalSweep { fixture, config, eps, repeats, out } => {
            let settings = settings(&config)?;
            let (fx, seed) = load_fixture(&fixture)?;
            let rows = sweep_epsilon(&fx, &eps, repeats, seed, settings.layer1)?;
            let mut w = csv::Writer::from_path(&out).with_context(|| format!("cannot create {}", out.display()))?;
            w.write_record(["epsilon", "mean_ccr", "variance", "mean_models"])?;
            for r in rows {
                w.serialize((r.epsilon, r.mean_ccr, r.variance, r.mean_models))?;
            }
            w.flush()?;
            Ok(())
        }
        Command::EvalConverge { fixture, config, window, out } => {
            let settings = settings(&config)?;
            let (fx, _) = load_fixture(&fixture)?;
            if window == 0 {
                return Err(UsageError("--window must be at least 1".into()).into());
            }
            let curve = convergence_curve(&fx, settings.layer1, window)?;
            let mut w = csv::Writer::from_path(&out).with_context(|| format!("cannot create {}", out.display()))?;
            w.write_record(["sequences", "ccr"])?;
            for point in curve {
                w.serialize(point)?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Models { snapshot } => models(&snapshot),
    }
}

fn settings(args: &ConfigArgs) -> Result<Settings> {
    let mut s = Settings::load(args.config.as_deref())?;
    s.apply_overrides(&args.overrides)?;
    s.validate()?;
    Ok(s)
}

/// One line of the assignment log.
#[derive(Debug, Serialize)]
struct LogEntry {
    sequence_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
    t: Timestamp,
    model_id: ModelId,
    /// Id the model is known by at the end of the run, after fusions.
    final_model_id: ModelId,
    model_index: usize,
    merged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    distance: Option<f64>,
}

fn cluster(
    input: &Path,
    config: &ConfigArgs,
    snapshot: &Path,
    log: Option<&Path>,
    init: Option<&Path>,
    node_id: u32,
) -> Result<()> {
    let settings = settings(config)?;
    let records: Vec<(usize, SequenceRecord)> = io::read_jsonl(input)?;
    for (line, r) in &records {
        if r.symbols.contains(&0) {
            bail!("{}:{line}: symbol 0 is the delimiter and cannot appear inside a sequence", input.display());
        }
    }
    let mut node = match init {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let snap: NodeSnapshot =
                serde_json::from_str(&text).with_context(|| format!("{}: bad snapshot", path.display()))?;
            NodeState::from_snapshot(snap)?
        }
        None => NodeState::new(node_id, settings.layer1)?,
    };

    let started = Instant::now();
    let base = node.clock();
    let mut entries = Vec::with_capacity(records.len());
    for (k, (_, r)) in records.iter().enumerate() {
        let symbols: Vec<Symbol> = r.symbols.iter().copied().map(Symbol).collect();
        let t = base + k as Timestamp + 1;
        if let Some(a) = node.ingest_sequence(&symbols, t)? {
            entries.push(LogEntry {
                sequence_id: k as u64,
                label: r.label,
                t,
                model_id: a.model_id,
                final_model_id: a.model_id,
                model_index: a.model_index,
                merged: a.merged,
                distance: a.distance,
            });
        }
    }
    node.flush();
    let elapsed = started.elapsed().as_secs_f64();
    for e in &mut entries {
        e.final_model_id = node.resolve(e.model_id);
    }

    io::write_json(snapshot, &node.snapshot())?;
    if let Some(path) = log {
        io::write_jsonl(path, &entries)?;
    }
    let stats = node.stats();
    let rate = if elapsed > 0.0 { stats.symbols as f64 / elapsed } else { f64::INFINITY };
    eprintln!(
        "sequences {}  symbols {}  models {}  created {}  merged {}  fused {}  expired {}  evicted {}  cleanups {}  throughput {:.0} symbols/s",
        stats.sequences,
        stats.symbols,
        node.len(),
        stats.created,
        stats.merged,
        stats.fused,
        stats.expired,
        stats.evicted,
        stats.cleanups,
        rate
    );
    Ok(())
}

fn pipeline(input: &Path, config: &ConfigArgs, events: &Path, snapshot: Option<&Path>) -> Result<()> {
    let settings = settings(config)?;
    let spec = settings.pipeline_spec()?;
    let records: Vec<(usize, ObservationRecord)> = io::read_jsonl(input)?;
    let mut batches: Vec<(Timestamp, Vec<ObjectObservation>)> = Vec::new();
    for (line, r) in &records {
        if batches.last().is_some_and(|(t, _)| r.t < *t) {
            bail!("{}:{line}: observations must be in non-decreasing time order", input.display());
        }
        if !(r.w > 0.0 && r.h > 0.0) {
            bail!("{}:{line}: box width and height must be positive", input.display());
        }
        match batches.last_mut() {
            Some((t, batch)) if *t == r.t => batch.push(r.into()),
            _ => batches.push((r.t, vec![r.into()])),
        }
    }

    let mut pipe = Pipeline::new(spec)?;
    let mut log: Vec<PipelineEvent> = Vec::new();
    let mut last: Option<Timestamp> = None;
    for (t, batch) in &batches {
        // One empty tick is enough to close everything before a time gap.
        if let Some(prev) = last.filter(|prev| *t > prev + 1) {
            log.extend(pipe.tick(&[], prev + 1)?);
        }
        log.extend(pipe.tick(batch, *t)?);
        last = Some(*t);
    }
    log.extend(pipe.finish()?);

    let mut contentions = 0;
    for e in &log {
        if let PipelineEvent::Contention { t, cell, object_ids } = e {
            contentions += 1;
            eprintln!("warning: t={t} cell {cell} held objects {object_ids:?}; cell skipped");
        }
    }
    io::write_jsonl(events, &log)?;
    if let Some(path) = snapshot {
        io::write_json(path, &pipe.snapshot())?;
    }
    let l1: usize = pipe.layer1().iter().map(NodeState::len).sum();
    let l2: usize = pipe.layer2().iter().map(NodeState::len).sum();
    eprintln!(
        "ticks {}  events {}  contentions {}  layer-1 models {l1}  layer-2 models {l2}",
        batches.len(),
        log.len(),
        contentions
    );
    Ok(())
}

fn load_fixture(args: &FixtureArgs) -> Result<(Vec<LabeledSequence>, u64)> {
    let fx = match &args.input {
        None => standard_fixture(args.seed),
        Some(path) => {
            let records: Vec<(usize, SequenceRecord)> = io::read_jsonl(path)?;
            let mut out = Vec::with_capacity(records.len());
            for (line, r) in records {
                let label = r.label.with_context(|| format!("{}:{line}: missing label", path.display()))?;
                let symbols = Sequence::new(r.symbols.into_iter().map(Symbol).collect())
                    .map_err(|e| anyhow::anyhow!("{}:{line}: {e}", path.display()))?;
                out.push(LabeledSequence { label, symbols });
            }
            out
        }
    };
    if fx.is_empty() {
        bail!("fixture is empty");
    }
    Ok((fx, args.seed))
}

/// Built-in point patterns for a frame: two straight crossings, a diagonal
/// and a turn, all at two scene units per tick.
fn default_point_patterns(width: f64, height: f64) -> Vec<PatternSpec> {
    let p = |id: u32, waypoints: Vec<(f64, f64)>| PatternSpec {
        pattern_id: id,
        waypoints,
        speed: 2.0,
        jitter_sigma: 0.2,
        symbol_noise_rate: 0.02,
        object_size: (width / 10.0, height / 10.0),
    };
    vec![
        p(0, vec![(0.0, height * 0.35), (width, height * 0.35)]),
        p(1, vec![(width * 0.65, 0.0), (width * 0.65, height)]),
        p(2, vec![(0.0, 0.0), (width, height)]),
        p(3, vec![(width * 0.15, height), (width * 0.15, height * 0.6), (width, height * 0.6)]),
    ]
}

fn synth(kind: SynthKind) -> Result<()> {
    match kind {
        SynthKind::Sequences { out, n, noise, kind, patterns, seed } => {
            let patterns = if patterns.is_empty() {
                standard_patterns()
            } else {
                patterns
                    .iter()
                    .map(|p| Sequence::from_hex(p).map_err(|e| UsageError(format!("pattern {p:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let kind = match kind {
                NoiseArg::Insert => NoiseKind::Insert,
                NoiseArg::Substitute => NoiseKind::Substitute,
                NoiseArg::Mixed => NoiseKind::Mixed,
            };
            let fx = gen_sequence_stream_with(&patterns, n, SequenceNoise::new(noise, kind), seed)?;
            io::write_jsonl(
                &out,
                fx.iter().map(|s| SequenceRecord { label: Some(s.label), symbols: s.symbols.to_u32s() }),
            )
        }
        SynthKind::Points { out, objects, spacing, patterns, frame, seed } => {
            let (w, h) = frame
                .split_once('x')
                .and_then(|(w, h)| Some((w.parse::<f64>().ok()?, h.parse::<f64>().ok()?)))
                .ok_or_else(|| UsageError(format!("--frame expects WIDTHxHEIGHT, got {frame:?}")))?;
            let specs = match patterns {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("{}: bad pattern list", path.display()))?
                }
                None => default_point_patterns(w, h),
            };
            let stream = gen_point_stream(&specs, (w, h), objects, spacing, seed)?;
            for warning in &stream.warnings {
                eprintln!("warning: {warning}");
            }
            io::write_jsonl(&out, &stream.records)
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnySnapshot {
    Pipeline(PipelineSnapshot),
    Node(NodeSnapshot),
}

fn models(path: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let snap: AnySnapshot =
        serde_json::from_str(&text).with_context(|| format!("{}: not a node or pipeline snapshot", path.display()))?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match snap {
        AnySnapshot::Node(n) => print_node(&mut out, &n, None)?,
        AnySnapshot::Pipeline(p) => {
            let m_u1 = p.layer1.first().map(|n| n.params.m_u);
            writeln!(out, "== layer 1 ==")?;
            for n in p.layer1.iter().filter(|n| !n.models.is_empty()) {
                print_node(&mut out, n, None)?;
            }
            writeln!(out, "== layer 2 ==")?;
            for n in p.layer2.iter().filter(|n| !n.models.is_empty()) {
                print_node(&mut out, n, m_u1)?;
            }
        }
    }
    Ok(())
}

/// Layer-2 symbols are shown as `node:model` when `m_u` of the layer below
/// is known.
fn print_node(out: &mut impl Write, n: &NodeSnapshot, decode_with: Option<usize>) -> Result<()> {
    writeln!(
        out,
        "node {}  clock {}  models {}  (epsilon {} lambda {} mu {} t_gap {} m_u {})",
        n.node_id,
        n.clock,
        n.models.len(),
        n.params.epsilon,
        n.params.lambda,
        n.params.mu,
        n.params.t_gap,
        n.params.m_u
    )?;
    for (k, mc) in n.models.iter().enumerate() {
        writeln!(out, "  #{:<3} w {:.3}  t {}", k + 1, mc.w(), mc.t())?;
        let cells: Vec<(String, String)> = mc
            .se()
            .symbols()
            .iter()
            .zip(mc.sw())
            .map(|(s, w)| {
                let sym = match decode_with.map(|u| decode_output(*s, u)) {
                    Some(Ok((node, model))) => format!("{node}:{model}"),
                    _ => s.to_string(),
                };
                (sym, format!("{w:.1}"))
            })
            .collect();
        let width = cells.iter().map(|(s, w)| s.len().max(w.len())).max().unwrap_or(1);
        let row = |f: &dyn Fn(&(String, String)) -> &String| {
            cells.iter().map(|c| format!("{:>width$}", f(c))).collect::<Vec<_>>().join(" ")
        };
        writeln!(out, "       SE {}", row(&|c| &c.0))?;
        writeln!(out, "       SW {}", row(&|c| &c.1))?;
    }
    Ok(())
}
