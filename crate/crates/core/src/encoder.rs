//! Symbol encoding.
//!
//! Layer 1: each grid cell is split into 2x2 quadrants and an object's
//! occupancy is written as a 4-bit mask,
//!
//! ```text
//!   +----+----+
//!   | b0 | b1 |     b0 = top-left      b1 = top-right
//!   +----+----+     b2 = bottom-left   b3 = bottom-right
//!   | b2 | b3 |
//!   +----+----+
//! ```
//!
//! where a bit is set iff the object overlaps that quadrant with positive
//! area. `y` grows downwards, as in image coordinates. A cell without the
//! object encodes as 0, the delimiter.
//!
//! Layer 2: a node's match result is re-encoded as
//! `node_id * m_u + model_index`, which is never 0 because both ids start
//! at 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Symbol, Timestamp};

/// Axis-aligned rectangle; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Rect {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.right().clamp(0.0, width);
        let y1 = self.bottom().clamp(0.0, height);
        Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    fn quadrants(&self) -> [Rect; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [
            Rect::new(self.x, self.y, hw, hh),
            Rect::new(self.x + hw, self.y, hw, hh),
            Rect::new(self.x, self.y + hh, hw, hh),
            Rect::new(self.x + hw, self.y + hh, hw, hh),
        ]
    }
}

/// Quadrant mask of `bbox` within `cell`.
pub fn encode_cell(cell: &Rect, bbox: &Rect) -> Symbol {
    encode_cell_shape(cell, std::slice::from_ref(bbox))
}

/// Quadrant mask of a silhouette given as a union of rectangles.
pub fn encode_cell_shape(cell: &Rect, parts: &[Rect]) -> Symbol {
    let mut mask = 0;
    for (bit, quadrant) in cell.quadrants().iter().enumerate() {
        if parts.iter().any(|p| quadrant.intersection_area(p) > 0.0) {
            mask |= 1 << bit;
        }
    }
    Symbol(mask)
}

/// Regular partition of the frame into `rows x cols` cells, indexed
/// row-major from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub frame_width: f64,
    pub frame_height: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(frame_width: f64, frame_height: f64, rows: usize, cols: usize) -> Result<Self> {
        let g = GridSpec { frame_width, frame_height, rows, cols };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidGrid("rows and cols must be positive".into()));
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0)
            || !self.frame_width.is_finite()
            || !self.frame_height.is_finite()
        {
            return Err(Error::InvalidGrid("frame dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_width(&self) -> f64 {
        self.frame_width / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.frame_height / self.rows as f64
    }

    pub fn cell_rect(&self, index: usize) -> Rect {
        let (row, col) = (index / self.cols, index % self.cols);
        let (cw, ch) = (self.cell_width(), self.cell_height());
        Rect::new(col as f64 * cw, row as f64 * ch, cw, ch)
    }

    /// Cells a rectangle overlaps with positive area.
    fn cells_touching(&self, r: &Rect) -> impl Iterator<Item = usize> + '_ {
        let (cw, ch) = (self.cell_width(), self.cell_height());
        let c0 = ((r.x / cw).floor().max(0.0) as usize).min(self.cols - 1);
        let c1 = ((r.right() / cw).ceil().max(0.0) as usize).min(self.cols);
        let r0 = ((r.y / ch).floor().max(0.0) as usize).min(self.rows - 1);
        let r1 = ((r.bottom() / ch).ceil().max(0.0) as usize).min(self.rows);
        let cols = self.cols;
        let rect = *r;
        (r0..r1)
            .flat_map(move |row| (c0..c1).map(move |col| row * cols + col))
            .filter(move |&idx| self.cell_rect(idx).intersection_area(&rect) > 0.0)
    }
}

/// One tracked object at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectObservation {
    pub t: Timestamp,
    pub object_id: u64,
    pub bbox: Rect,
    /// Optional silhouette refining the bounding box. Empty means the box
    /// itself is the silhouette.
    pub parts: Vec<Rect>,
}

impl ObjectObservation {
    pub fn new(t: Timestamp, object_id: u64, bbox: Rect) -> Self {
        ObjectObservation { t, object_id, bbox, parts: Vec::new() }
    }

    fn silhouette(&self) -> &[Rect] {
        if self.parts.is_empty() {
            std::slice::from_ref(&self.bbox)
        } else {
            &self.parts
        }
    }
}

/// Line-delimited observation record: `{t, object_id, x, y, w, h}` with an
/// optional `parts` silhouette and an optional ground-truth `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub t: Timestamp,
    pub object_id: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

impl From<&ObservationRecord> for ObjectObservation {
    fn from(r: &ObservationRecord) -> Self {
        ObjectObservation {
            t: r.t,
            object_id: r.object_id,
            bbox: Rect::new(r.x, r.y, r.w, r.h),
            parts: r.parts.iter().map(|p| Rect::new(p[0], p[1], p[2], p[3])).collect(),
        }
    }
}

/// Line-delimited symbol event: `{t, cell, object_id, symbol}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolEvent {
    pub t: Timestamp,
    pub cell: usize,
    pub object_id: u64,
    pub symbol: Symbol,
}

/// Two or more objects in one cell at one tick; the cell is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contention {
    pub t: Timestamp,
    pub cell: usize,
    pub object_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub events: Vec<SymbolEvent>,
    pub contentions: Vec<Contention>,
}

/// Per-grid encoder. Remembers which object occupies each cell so that an
/// entry is preceded by a delimiter and an exit emits one.
#[derive(Debug, Clone)]
pub struct GridEncoder {
    grid: GridSpec,
    occupant: Vec<Option<u64>>,
}

impl GridEncoder {
    pub fn new(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(GridEncoder { grid, occupant: vec![None; grid.cell_count()] })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Cells currently holding an object, with that object.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.occupant.iter().enumerate().filter_map(|(c, o)| o.map(|o| (c, o)))
    }

    /// Encodes one tick. Events come out ordered by cell; within a cell an
    /// exit delimiter precedes an entry delimiter and symbol.
    pub fn encode_step(&mut self, observations: &[ObjectObservation], t: Timestamp) -> StepOutput {
        let (fw, fh) = (self.grid.frame_width, self.grid.frame_height);
        let mut present: BTreeMap<usize, Vec<(u64, Symbol)>> = BTreeMap::new();
        let mut sorted: Vec<&ObjectObservation> = observations.iter().collect();
        sorted.sort_by_key(|o| o.object_id);
        for obs in sorted {
            let parts: Vec<Rect> = obs.silhouette().iter().map(|p| p.clamp_to(fw, fh)).collect();
            let mut cells: Vec<usize> = parts.iter().flat_map(|p| self.grid.cells_touching(p)).collect();
            cells.sort_unstable();
            cells.dedup();
            for cell in cells {
                let symbol = encode_cell_shape(&self.grid.cell_rect(cell), &parts);
                if !symbol.is_delimiter() {
                    present.entry(cell).or_default().push((obs.object_id, symbol));
                }
            }
        }
        for (cell, occ) in self.occupant.iter().enumerate() {
            if occ.is_some() {
                present.entry(cell).or_default();
            }
        }

        let mut out = StepOutput::default();
        for (cell, here) in present {
            if here.len() > 1 {
                out.contentions.push(Contention { t, cell, object_ids: here.iter().map(|(o, _)| *o).collect() });
                continue;
            }
            let now = here.first().copied();
            let prev = self.occupant[cell];
            if let Some(p) = prev {
                if now.map(|(o, _)| o) != Some(p) {
                    out.events.push(SymbolEvent { t, cell, object_id: p, symbol: Symbol::DELIMITER });
                    self.occupant[cell] = None;
                }
            }
            if let Some((o, symbol)) = now {
                if self.occupant[cell].is_none() {
                    out.events.push(SymbolEvent { t, cell, object_id: o, symbol: Symbol::DELIMITER });
                    self.occupant[cell] = Some(o);
                }
                out.events.push(SymbolEvent { t, cell, object_id: o, symbol });
            }
        }
        out
    }
}

/// `node_id * m_u + model_index`.
pub fn encode_output(node_id: u32, model_index: usize, m_u: usize) -> Result<Symbol> {
    if node_id == 0 {
        return Err(Error::InvalidNodeId);
    }
    if model_index == 0 || model_index > m_u {
        return Err(Error::ModelIndexOutOfRange { index: model_index, m_u });
    }
    let code = node_id as u64 * m_u as u64 + model_index as u64;
    u32::try_from(code).map(Symbol).map_err(|_| Error::NotDecodable { symbol: u32::MAX, m_u })
}

/// Inverse of [`encode_output`].
pub fn decode_output(s: Symbol, m_u: usize) -> Result<(u32, usize)> {
    let not = || Error::NotDecodable { symbol: s.0, m_u };
    if s.is_delimiter() || m_u == 0 {
        return Err(not());
    }
    let code = s.0 as usize;
    let node_id = (code - 1) / m_u;
    if node_id == 0 {
        return Err(not());
    }
    Ok((node_id as u32, code - node_id * m_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell() -> Rect {
        Rect::new(0.0, 0.0, 4.0, 4.0)
    }

    #[test]
    fn cell_examples() {
        assert_eq!(encode_cell(&cell(), &Rect::new(2.5, 0.5, 1.0, 1.0)), Symbol(2));
        assert_eq!(encode_cell(&cell(), &Rect::new(-1.0, -1.0, 6.0, 6.0)), Symbol(15));
        assert_eq!(encode_cell(&cell(), &Rect::new(5.0, 5.0, 1.0, 1.0)), Symbol(0));
        // Touching an edge is not overlap.
        assert_eq!(encode_cell(&cell(), &Rect::new(4.0, 0.0, 1.0, 1.0)), Symbol(0));
        assert_eq!(encode_cell(&cell(), &Rect::new(0.5, 2.5, 1.0, 1.0)), Symbol(4));
        assert_eq!(encode_cell(&cell(), &Rect::new(2.5, 2.5, 1.0, 1.0)), Symbol(8));
    }

    /// Silhouettes that trace the crossing of one cell, top-right to
    /// bottom-left.
    pub(crate) fn crossing_shapes() -> Vec<Vec<Rect>> {
        vec![
            vec![Rect::new(2.5, 0.5, 1.0, 1.0)],
            vec![Rect::new(1.5, 0.5, 1.0, 1.0)],
            vec![Rect::new(1.5, 0.5, 1.0, 1.0), Rect::new(0.5, 1.5, 1.0, 1.0)],
            vec![Rect::new(0.5, 1.5, 1.0, 1.0)],
            vec![Rect::new(0.5, 2.5, 1.0, 1.0)],
        ]
    }

    #[test]
    fn crossing_one_cell_gives_delimited_run() {
        let grid = GridSpec::new(4.0, 4.0, 1, 1).unwrap();
        let mut enc = GridEncoder::new(grid).unwrap();
        let mut symbols = Vec::new();
        for (k, parts) in crossing_shapes().into_iter().enumerate() {
            let obs = ObjectObservation { t: k as u64, object_id: 7, bbox: parts[0], parts };
            let out = enc.encode_step(&[obs], k as u64);
            symbols.extend(out.events.iter().map(|e| e.symbol.0));
        }
        let out = enc.encode_step(&[], 5);
        symbols.extend(out.events.iter().map(|e| e.symbol.0));
        assert_eq!(symbols, vec![0, 2, 3, 7, 5, 4, 0]);
    }

    #[test]
    fn no_objects_no_events() {
        let mut enc = GridEncoder::new(GridSpec::new(4.0, 4.0, 2, 2).unwrap()).unwrap();
        assert_eq!(enc.encode_step(&[], 0), StepOutput::default());
    }

    #[test]
    fn stationary_object_repeats_symbol() {
        let mut enc = GridEncoder::new(GridSpec::new(4.0, 4.0, 1, 1).unwrap()).unwrap();
        let obs = ObjectObservation::new(0, 1, Rect::new(0.5, 0.5, 1.0, 1.0));
        let a = enc.encode_step(std::slice::from_ref(&obs), 0);
        let b = enc.encode_step(&[obs], 1);
        assert_eq!(a.events.iter().map(|e| e.symbol.0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(b.events.iter().map(|e| e.symbol.0).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn two_objects_in_one_cell_contend() {
        let mut enc = GridEncoder::new(GridSpec::new(4.0, 4.0, 1, 1).unwrap()).unwrap();
        let a = ObjectObservation::new(0, 1, Rect::new(0.5, 0.5, 1.0, 1.0));
        let b = ObjectObservation::new(0, 2, Rect::new(2.5, 2.5, 1.0, 1.0));
        let out = enc.encode_step(&[a, b], 0);
        assert!(out.events.is_empty());
        assert_eq!(out.contentions, vec![Contention { t: 0, cell: 0, object_ids: vec![1, 2] }]);
    }

    #[test]
    fn object_spanning_cells_reports_each() {
        let grid = GridSpec::new(8.0, 4.0, 1, 2).unwrap();
        let mut enc = GridEncoder::new(grid).unwrap();
        let out = enc.encode_step(&[ObjectObservation::new(0, 3, Rect::new(3.0, 0.5, 2.0, 1.0))], 0);
        let got: Vec<(usize, u32)> = out.events.iter().map(|e| (e.cell, e.symbol.0)).collect();
        assert_eq!(got, vec![(0, 0), (0, 2), (1, 0), (1, 1)]);
    }

    #[test]
    fn output_code_examples() {
        assert_eq!(encode_output(3, 5, 64).unwrap(), Symbol(197));
        assert_eq!(encode_output(1, 1, 64).unwrap(), Symbol(65));
        assert_eq!(decode_output(Symbol(197), 64).unwrap(), (3, 5));
        assert_eq!(decode_output(Symbol(65), 64).unwrap(), (1, 1));
        assert!(decode_output(Symbol(64), 64).is_err());
        assert!(decode_output(Symbol(0), 64).is_err());
        assert!(encode_output(1, 65, 64).is_err());
        assert!(encode_output(1, 0, 64).is_err());
        assert!(encode_output(0, 1, 64).is_err());
    }

    proptest! {
        #[test]
        fn output_code_round_trips(node in 1u32..1000, m_u in 1usize..200, idx in 1usize..200) {
            let idx = (idx - 1) % m_u + 1;
            let s = encode_output(node, idx, m_u).unwrap();
            prop_assert!(!s.is_delimiter());
            prop_assert_eq!(decode_output(s, m_u).unwrap(), (node, idx));
        }

        #[test]
        fn mask_zero_iff_no_overlap(x in -2.0f64..6.0, y in -2.0f64..6.0, w in 0.1f64..3.0, h in 0.1f64..3.0) {
            let b = Rect::new(x, y, w, h);
            let s = encode_cell(&cell(), &b);
            prop_assert!(s.0 <= 15);
            prop_assert_eq!(s.0 == 0, cell().intersection_area(&b) == 0.0);
        }
    }
}
