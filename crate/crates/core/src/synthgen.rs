//! Seeded synthetic fixtures with ground-truth labels: symbol sequences for
//! driving a single node, and object point streams for the full pipeline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{ObservationRecord, Rect};
use crate::error::{Error, Result};
use crate::types::{Sequence, Symbol, Timestamp};

/// A sequence with the id of the pattern it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub label: u32,
    pub symbols: Sequence,
}

/// How a corrupted symbol is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// A spurious symbol joins next to the true one.
    Insert,
    /// The true symbol is replaced.
    Substitute,
    /// Either, with equal probability.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceNoise {
    /// Per-symbol corruption probability.
    pub rate: f64,
    pub kind: NoiseKind,
    /// Noise symbols are drawn from `1..=max_symbol`.
    pub max_symbol: u32,
}

impl SequenceNoise {
    pub fn new(rate: f64, kind: NoiseKind) -> Self {
        SequenceNoise { rate, kind, max_symbol: 15 }
    }
}

/// The eight well-separated layer-1 patterns of the standard fixture. Every
/// pair is at least 0.7 apart.
pub const STANDARD_PATTERNS: [&str; 8] =
    ["4CEA2", "868273C", "7169F5E", "249F96F", "DADA7B", "3FE3717", "81431D1", "9BEB7E4"];

pub fn standard_patterns() -> Vec<Sequence> {
    STANDARD_PATTERNS.iter().map(|p| Sequence::from_hex(p).expect("valid pattern")).collect()
}

/// Standard fixture: 8 patterns, 230 sequences, 10% mixed noise.
pub fn standard_fixture(seed: u64) -> Vec<LabeledSequence> {
    gen_sequence_stream_with(&standard_patterns(), 230, SequenceNoise::new(0.1, NoiseKind::Mixed), seed)
        .expect("standard fixture parameters are valid")
}

/// `n` labeled sequences, each a uniformly chosen pattern corrupted per
/// symbol at `noise_rate` (insertions and substitutions).
pub fn gen_sequence_stream(
    patterns: &[Sequence],
    n: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<LabeledSequence>> {
    gen_sequence_stream_with(patterns, n, SequenceNoise::new(noise_rate, NoiseKind::Mixed), seed)
}

pub fn gen_sequence_stream_with(
    patterns: &[Sequence],
    n: usize,
    noise: SequenceNoise,
    seed: u64,
) -> Result<Vec<LabeledSequence>> {
    if patterns.is_empty() {
        return Err(Error::InvalidGenerator("no patterns".into()));
    }
    if !(0.0..=0.5).contains(&noise.rate) {
        return Err(Error::InvalidGenerator(format!("noise rate {} outside [0, 0.5]", noise.rate)));
    }
    if noise.max_symbol < 3 {
        return Err(Error::InvalidGenerator("noise alphabet needs at least 3 symbols".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..patterns.len());
        let symbols = corrupt(patterns[label].symbols(), noise, &mut rng);
        out.push(LabeledSequence { label: label as u32, symbols });
    }
    Ok(out)
}

fn noise_symbol<R: Rng>(rng: &mut R, max: u32, avoid: &[Symbol]) -> Symbol {
    loop {
        let s = Symbol(rng.gen_range(1..=max));
        if !avoid.contains(&s) {
            return s;
        }
    }
}

fn corrupt<R: Rng>(pattern: &[Symbol], noise: SequenceNoise, rng: &mut R) -> Sequence {
    let mut out: Vec<Symbol> = Vec::with_capacity(pattern.len() + 4);
    for (k, &s) in pattern.iter().enumerate() {
        if noise.rate == 0.0 || !rng.gen_bool(noise.rate) {
            out.push(s);
            continue;
        }
        let insert = match noise.kind {
            NoiseKind::Insert => true,
            NoiseKind::Substitute => false,
            NoiseKind::Mixed => rng.gen_bool(0.5),
        };
        let next = pattern.get(k + 1).copied();
        if insert {
            out.push(s);
            let avoid = [s, next.unwrap_or(s)];
            out.push(noise_symbol(rng, noise.max_symbol, &avoid));
        } else {
            let prev = out.last().copied().unwrap_or(s);
            let avoid = [s, prev, next.unwrap_or(s)];
            out.push(noise_symbol(rng, noise.max_symbol, &avoid));
        }
    }
    Sequence::from_stream(out)
}

/// Deterministically shuffles a fixture, as used for repeated runs.
pub fn shuffled(fixture: &[LabeledSequence], seed: u64) -> Vec<LabeledSequence> {
    let mut v = fixture.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// One ground-truth motion pattern through the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern_id: u32,
    /// Polyline followed by the object's centre, in scene units.
    pub waypoints: Vec<(f64, f64)>,
    /// Scene units travelled per tick.
    pub speed: f64,
    /// Standard deviation of the per-tick positional jitter.
    pub jitter_sigma: f64,
    /// Probability that a tick's position is displaced far enough to corrupt
    /// its symbols.
    pub symbol_noise_rate: f64,
    /// Object width and height.
    pub object_size: (f64, f64),
}

impl PatternSpec {
    fn validate(&self, frame: (f64, f64)) -> Result<bool> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidGenerator(format!("pattern {} needs two waypoints", self.pattern_id)));
        }
        if self.speed.is_nan() || self.speed <= 0.0 {
            return Err(Error::InvalidGenerator(format!("pattern {} speed must be positive", self.pattern_id)));
        }
        if !(0.0..=0.5).contains(&self.symbol_noise_rate) {
            return Err(Error::InvalidGenerator(format!("pattern {} noise rate outside [0, 0.5]", self.pattern_id)));
        }
        if self.jitter_sigma < 0.0 || !(self.object_size.0 > 0.0 && self.object_size.1 > 0.0) {
            return Err(Error::InvalidGenerator(format!("pattern {} has a bad size or jitter", self.pattern_id)));
        }
        let inside = self.waypoints.iter().all(|&(x, y)| (0.0..=frame.0).contains(&x) && (0.0..=frame.1).contains(&y));
        Ok(inside)
    }

    /// Centre positions at successive ticks along the polyline.
    fn track(&self) -> Vec<(f64, f64)> {
        let mut points = vec![self.waypoints[0]];
        let mut carry = 0.0;
        for pair in self.waypoints.windows(2) {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            let mut along = self.speed - carry;
            while along <= len {
                let f = along / len;
                points.push((x0 + f * (x1 - x0), y0 + f * (y1 - y0)));
                along += self.speed;
            }
            carry = len - (along - self.speed);
        }
        points
    }
}

/// Generated observations plus any clamping warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStream {
    pub records: Vec<ObservationRecord>,
    pub warnings: Vec<String>,
}

/// Object `k` follows pattern `k mod patterns.len()` and enters at tick
/// `1 + k * spacing`. With a spacing at least as long as a traversal the
/// objects never overlap in time. Records come out sorted by tick, then
/// object id, and carry their pattern id as the label.
pub fn gen_point_stream(
    patterns: &[PatternSpec],
    frame: (f64, f64),
    n_objects: usize,
    spacing: u64,
    seed: u64,
) -> Result<PointStream> {
    if n_objects == 0 {
        return Err(Error::InvalidGenerator("n_objects must be at least 1".into()));
    }
    if patterns.is_empty() {
        return Err(Error::InvalidGenerator("no patterns".into()));
    }
    let mut warnings = Vec::new();
    for p in patterns {
        if !p.validate(frame)? {
            warnings.push(format!("pattern {} leaves the frame; positions clamped", p.pattern_id));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for object in 0..n_objects {
        let mut t: Timestamp = 1 + object as u64 * spacing;
        let pattern = &patterns[object % patterns.len()];
        let jitter = Normal::new(0.0, pattern.jitter_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidGenerator(e.to_string()))?;
        let (w, h) = pattern.object_size;
        for (cx, cy) in pattern.track() {
            let (mut x, mut y) = (cx, cy);
            if pattern.jitter_sigma > 0.0 {
                x += jitter.sample(&mut rng);
                y += jitter.sample(&mut rng);
            }
            if pattern.symbol_noise_rate > 0.0 && rng.gen_bool(pattern.symbol_noise_rate) {
                x += rng.gen_range(-w..=w);
                y += rng.gen_range(-h..=h);
            }
            let raw = Rect::new(x - w / 2.0, y - h / 2.0, w, h);
            let r = raw.clamp_to(frame.0, frame.1);
            if r.w <= 0.0 || r.h <= 0.0 {
                t += 1;
                continue;
            }
            records.push(ObservationRecord {
                t,
                object_id: object as u64 + 1,
                x: r.x,
                y: r.y,
                w: r.w,
                h: r.h,
                parts: Vec::new(),
                label: Some(pattern.pattern_id),
            });
            t += 1;
        }
    }
    records.sort_by_key(|r| (r.t, r.object_id));
    Ok(PointStream { records, warnings })
}
