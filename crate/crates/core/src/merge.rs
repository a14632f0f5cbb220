//! Merging two micro-clusters along their weighted LCS alignment.
//!
//! Aligned characters are emitted once with their weights summed; unaligned
//! characters from either side are interleaved in order. The backtrack walks
//! the table bottom-right to top-left and prefers, in this order: skipping the
//! incoming cluster's character, skipping the established cluster's character,
//! then aligning. That order decides how unaligned characters interleave.

use crate::similarity::{lcs_table, DpTable};
use crate::types::{MicroCluster, Sequence, Symbol, Timestamp};

/// How the merged cluster weight is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRule {
    /// A new observation joins a model: `w = established.w + 1`.
    Increment,
    /// Two models are fused at cleanup: `w = established.w + incoming.w`.
    Sum,
}

/// Interleaved symbols and weights before duplicate collapse.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub symbols: Vec<Symbol>,
    pub weights: Vec<f64>,
    /// Number of aligned (shared) characters.
    pub aligned: usize,
}

/// Walks `table` (query = `incoming`, model = `established`) back from the
/// bottom-right cell and produces the merged character order.
pub fn backtrack(table: &DpTable, established: &MicroCluster, incoming: &MicroCluster) -> Alignment {
    let e_se = established.se().symbols();
    let e_sw = established.sw();
    let n_se = incoming.se().symbols();
    let n_sw = incoming.sw();

    let mut rev_symbols = Vec::with_capacity(e_se.len() + n_se.len());
    let mut rev_weights = Vec::with_capacity(e_se.len() + n_se.len());
    let mut aligned = 0;
    let (mut i, mut j) = (e_se.len(), n_se.len());
    while i > 0 && j > 0 {
        let here = table.get(j, i);
        if here == table.get(j - 1, i) {
            rev_symbols.push(n_se[j - 1]);
            rev_weights.push(n_sw[j - 1]);
            j -= 1;
        } else if here == table.get(j, i - 1) {
            rev_symbols.push(e_se[i - 1]);
            rev_weights.push(e_sw[i - 1]);
            i -= 1;
        } else {
            debug_assert_eq!(e_se[i - 1], n_se[j - 1]);
            rev_symbols.push(e_se[i - 1]);
            rev_weights.push(e_sw[i - 1] + n_sw[j - 1]);
            aligned += 1;
            i -= 1;
            j -= 1;
        }
    }
    // Whatever prefix remains on one side comes first, in order.
    let (rest_se, rest_sw) = if i > 0 { (&e_se[..i], &e_sw[..i]) } else { (&n_se[..j], &n_sw[..j]) };
    let mut symbols = rest_se.to_vec();
    let mut weights = rest_sw.to_vec();
    symbols.extend(rev_symbols.into_iter().rev());
    weights.extend(rev_weights.into_iter().rev());
    Alignment { symbols, weights, aligned }
}

/// Collapses runs of equal neighbours into one character carrying the summed
/// weight.
pub fn collapse_repeats(symbols: Vec<Symbol>, weights: Vec<f64>) -> (Sequence, Vec<f64>) {
    let mut out_s: Vec<Symbol> = Vec::with_capacity(symbols.len());
    let mut out_w: Vec<f64> = Vec::with_capacity(weights.len());
    for (s, w) in symbols.into_iter().zip(weights) {
        if out_s.last() == Some(&s) {
            *out_w.last_mut().expect("parallel vectors") += w;
        } else {
            out_s.push(s);
            out_w.push(w);
        }
    }
    let seq = Sequence::new(out_s).expect("collapsed run has no repeats or delimiters");
    (seq, out_w)
}

fn merge_with(established: &MicroCluster, incoming: &MicroCluster, t_now: Timestamp, rule: WeightRule) -> MicroCluster {
    let table = lcs_table(incoming.se(), established);
    let alignment = backtrack(&table, established, incoming);
    let (se, sw) = collapse_repeats(alignment.symbols, alignment.weights);
    let w = match rule {
        WeightRule::Increment => established.w() + 1.0,
        WeightRule::Sum => established.w() + incoming.w(),
    };
    MicroCluster { t: t_now, w, se, sw }
}

/// Merges an incoming sequence cluster into an established model.
pub fn merge(established: &MicroCluster, incoming: &MicroCluster, t_now: Timestamp) -> MicroCluster {
    merge_with(established, incoming, t_now, WeightRule::Increment)
}

/// Fuses two stored models; the cluster weights add up.
pub fn merge_models(heavier: &MicroCluster, lighter: &MicroCluster, t_now: Timestamp) -> MicroCluster {
    merge_with(heavier, lighter, t_now, WeightRule::Sum)
}
