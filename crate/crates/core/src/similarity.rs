//! Weighted longest-common-subsequence scoring and the distances built on it.
//!
//! A match between query character `j` and model character `i` scores the
//! model-side weight normalized by the heaviest model character, so under
//! uniform weights every score reduces to the classic LCS length.

use crate::error::{Error, Result};
use crate::types::{MicroCluster, Sequence, Symbol};

/// Longest inputs `lcs_brute` accepts.
pub const BRUTE_FORCE_LIMIT: usize = 12;

/// Full `(|query| + 1) x (|model| + 1)` score table; cell `(j, i)` holds the
/// weighted LCS score of `query[..j]` against `model[..i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl DpTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Cell for query prefix length `j` and model prefix length `i`.
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.cells[j * self.cols + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.cells[j * self.cols..(j + 1) * self.cols]
    }

    pub fn score(&self) -> f64 {
        self.cells[self.cells.len() - 1]
    }
}

/// Model weights scaled so the heaviest character contributes exactly 1.
pub fn normalized_weights(sw: &[f64]) -> Vec<f64> {
    let max = sw.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; sw.len()];
    }
    sw.iter().map(|w| w / max).collect()
}

/// Computes the row for one more query symbol from the previous row.
///
/// Every table, score and cached-row path goes through here so their values
/// agree bit for bit.
#[inline]
pub(crate) fn next_row(prev: &[f64], row: &mut [f64], q: Symbol, model: &[Symbol], norm: &[f64]) {
    row[0] = 0.0;
    for i in 1..row.len() {
        let up = prev[i];
        let left = row[i - 1];
        let mut best = if up >= left { up } else { left };
        if model[i - 1] == q {
            let diag = prev[i - 1] + norm[i - 1];
            if diag > best {
                best = diag;
            }
        }
        row[i] = best;
    }
}

fn fill_table(query: &[Symbol], model: &[Symbol], norm: &[f64]) -> DpTable {
    let rows = query.len() + 1;
    let cols = model.len() + 1;
    let mut cells = vec![0.0; rows * cols];
    for j in 1..rows {
        let (done, rest) = cells.split_at_mut(j * cols);
        next_row(&done[(j - 1) * cols..], &mut rest[..cols], query[j - 1], model, norm);
    }
    DpTable { rows, cols, cells }
}

/// Weighted LCS table of `query` against the model sequence of `model`.
pub fn lcs_table(query: &Sequence, model: &MicroCluster) -> DpTable {
    let norm = normalized_weights(model.sw());
    fill_table(query.symbols(), model.se().symbols(), &norm)
}

/// Bottom-right score using two rows of memory.
pub fn weighted_score(query: &[Symbol], model: &[Symbol], norm: &[f64]) -> f64 {
    let mut prev = vec![0.0; model.len() + 1];
    let mut row = vec![0.0; model.len() + 1];
    for &q in query {
        next_row(&prev, &mut row, q, model, norm);
        std::mem::swap(&mut prev, &mut row);
    }
    prev[model.len()]
}

/// `1 - score / min(|query|, |model|)`, or 1 when either side is empty.
pub fn distance_from_score(score: f64, query_len: usize, model_len: usize) -> f64 {
    let shorter = query_len.min(model_len);
    if shorter == 0 {
        return 1.0;
    }
    (1.0 - score / shorter as f64).clamp(0.0, 1.0)
}

/// Normalized dissimilarity of a plain query against a weighted model.
pub fn distance(query: &Sequence, model: &MicroCluster) -> f64 {
    if query.is_empty() || model.is_empty() {
        return 1.0;
    }
    let norm = normalized_weights(model.sw());
    let score = weighted_score(query.symbols(), model.se().symbols(), &norm);
    distance_from_score(score, query.len(), model.len())
}

/// Whether `a` is treated as the lighter cluster when comparing two models.
/// `a` is assumed to sit earlier in the store than `b`.
pub fn lighter_first(a: &MicroCluster, b: &MicroCluster) -> bool {
    if a.w() != b.w() {
        return a.w() < b.w();
    }
    a.len() <= b.len()
}

/// Distance between two stored models: the lighter one's sequence is the
/// query, the heavier one the weighted model. `a` must precede `b` in store
/// order for the final tie-break.
pub fn model_distance(a: &MicroCluster, b: &MicroCluster) -> f64 {
    if lighter_first(a, b) {
        distance(a.se(), b)
    } else {
        distance(b.se(), a)
    }
}

/// Exact unweighted LCS length by enumerating every subsequence of the
/// shorter input. Exponential; test oracle only.
pub fn lcs_brute(a: &[Symbol], b: &[Symbol]) -> Result<usize> {
    let longest = a.len().max(b.len());
    if longest > BRUTE_FORCE_LIMIT {
        return Err(Error::BruteForceTooLong { len: longest, limit: BRUTE_FORCE_LIMIT });
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let picked = mask.count_ones() as usize;
        if picked <= best {
            continue;
        }
        let candidate: Vec<Symbol> = (0..short.len()).filter(|k| mask & (1 << k) != 0).map(|k| short[k]).collect();
        if is_subsequence(&candidate, long) {
            best = picked;
        }
    }
    Ok(best)
}

/// Whether `needle` appears in order (not necessarily contiguously) in `hay`.
pub fn is_subsequence(needle: &[Symbol], hay: &[Symbol]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> Sequence {
        Sequence::from_hex(s).unwrap()
    }

    fn uniform(s: &str) -> MicroCluster {
        MicroCluster::from_sequence(seq(s), 0)
    }

    fn weighted(s: &str, sw: &[f64]) -> MicroCluster {
        MicroCluster::new(0, 1.0, seq(s), sw.to_vec()).unwrap()
    }

    #[test]
    fn table_examples() {
        assert_eq!(lcs_table(&seq("23754"), &uniform("23754")).score(), 5.0);
        assert_eq!(lcs_table(&seq("2354"), &uniform("23754")).score(), 4.0);
        assert_eq!(lcs_table(&seq("AC"), &weighted("ABC", &[4.0, 4.0, 2.0])).score(), 1.5);
    }

    #[test]
    fn empty_inputs_give_zero_table() {
        let t = lcs_table(&Sequence::empty(), &uniform("ABC"));
        assert_eq!((t.rows(), t.cols(), t.score()), (1, 4, 0.0));
        let t = lcs_table(&seq("ABC"), &MicroCluster::from_sequence(Sequence::empty(), 0));
        assert_eq!(t.score(), 0.0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&seq("23754"), &uniform("23754")), 0.0);
        assert_eq!(distance(&seq("2354"), &uniform("23754")), 0.0);
        assert!((distance(&seq("987"), &uniform("23754")) - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(distance(&Sequence::empty(), &uniform("23754")), 1.0);
    }

    #[test]
    fn model_distance_examples() {
        assert_eq!(model_distance(&uniform("ABC"), &uniform("ABC")), 0.0);
        let light = uniform("ABC");
        let heavy = MicroCluster::new(0, 5.0, seq("ABC"), vec![4.0, 4.0, 2.0]).unwrap();
        let expect = 1.0 - 2.5 / 3.0;
        assert!((model_distance(&light, &heavy) - expect).abs() < 1e-12);
        assert!((model_distance(&heavy, &light) - expect).abs() < 1e-12);
        assert_eq!(model_distance(&uniform("123"), &uniform("ABC")), 1.0);
    }

    #[test]
    fn matching_light_character_does_not_lower_score() {
        // "A" matches both the heavy first and the light last character.
        let m = weighted("ABA", &[1.0, 1.0, 0.1]);
        assert_eq!(lcs_table(&seq("A"), &m).score(), 1.0);
    }

    #[test]
    fn brute_force_examples() {
        let s = |x: &str| seq(x).into_vec();
        assert_eq!(lcs_brute(&[], &s("ABC")).unwrap(), 0);
        assert_eq!(lcs_brute(&s("ABC"), &s("AC")).unwrap(), 2);
        assert_eq!(lcs_brute(&s("ABCBDAB"), &s("BDCABA")).unwrap(), 4);
        let long = Sequence::from_hex("1212121212121").unwrap().into_vec();
        assert!(matches!(lcs_brute(&long, &s("12")), Err(Error::BruteForceTooLong { .. })));
    }

    fn arb_seq(max_len: usize) -> impl Strategy<Value = Sequence> {
        proptest::collection::vec(1u32..16, 0..=max_len).prop_map(|v| Sequence::from_stream(v.into_iter().map(Symbol)))
    }

    fn arb_model(max_len: usize) -> impl Strategy<Value = MicroCluster> {
        arb_seq(max_len).prop_flat_map(|se| {
            let n = se.len();
            proptest::collection::vec(0.01f64..50.0, n)
                .prop_map(move |sw| MicroCluster::new(0, 1.0, se.clone(), sw).unwrap())
        })
    }

    proptest! {
        #[test]
        fn uniform_table_matches_brute_force(a in arb_seq(10), b in arb_seq(10)) {
            let brute = lcs_brute(a.symbols(), b.symbols()).unwrap();
            let table = lcs_table(&a, &MicroCluster::from_sequence(b.clone(), 0));
            prop_assert_eq!(table.score(), brute as f64);
        }

        #[test]
        fn table_is_monotone(q in arb_seq(10), m in arb_model(10)) {
            let t = lcs_table(&q, &m);
            for j in 0..t.rows() {
                for i in 0..t.cols() {
                    if j == 0 || i == 0 {
                        prop_assert_eq!(t.get(j, i), 0.0);
                        continue;
                    }
                    prop_assert!(t.get(j, i) >= t.get(j - 1, i));
                    prop_assert!(t.get(j, i) >= t.get(j, i - 1));
                }
            }
        }

        #[test]
        fn distance_bounded_and_scale_invariant(q in arb_seq(10), m in arb_model(10), c in 0.001f64..1000.0) {
            let d = distance(&q, &m);
            prop_assert!((0.0..=1.0).contains(&d));
            let scaled_sw: Vec<f64> = m.sw().iter().map(|w| w * c).collect();
            let scaled = MicroCluster::new(0, 1.0, m.se().clone(), scaled_sw).unwrap();
            prop_assert!((distance(&q, &scaled) - d).abs() <= 1e-12);
        }

        #[test]
        fn two_row_score_equals_table(q in arb_seq(10), m in arb_model(10)) {
            let norm = normalized_weights(m.sw());
            let fast = weighted_score(q.symbols(), m.se().symbols(), &norm);
            prop_assert_eq!(fast.to_bits(), lcs_table(&q, &m).score().to_bits());
        }
    }
}
