//! Order-fixed reductions. Results depend only on the input order, never on
//! how work is split across threads.

const LEAF: usize = 32;

/// Pairwise (tree) summation over a fixed split schedule.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
