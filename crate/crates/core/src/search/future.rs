use crate::features::SpanRange;

use super::coverage::Coverage;
use super::options::OptionTable;

/// Rest-cost estimates for every source span: the best segmentation of the
/// span into options, each scored by its context-free estimate.
#[derive(Debug, Clone)]
pub struct FutureCosts {
    n: usize,
    cost: Vec<f64>,
}

impl FutureCosts {
    pub fn new(options: &OptionTable<'_>) -> FutureCosts {
        let n = options.sentence_len();
        let mut cost = vec![f64::NEG_INFINITY; (n + 1) * (n + 1)];
        for (span, opts) in options.spans() {
            cost[span.start as usize * (n + 1) + span.end as usize] = opts[0].estimate;
        }
        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len;
                let mut best = cost[i * (n + 1) + j];
                for k in i + 1..j {
                    best = best.max(cost[i * (n + 1) + k] + cost[k * (n + 1) + j]);
                }
                cost[i * (n + 1) + j] = best;
            }
        }
        FutureCosts { n, cost }
    }

    pub fn span(&self, span: SpanRange) -> f64 {
        if span.is_empty() {
            return 0.0;
        }
        self.cost[span.start as usize * (self.n + 1) + span.end as usize]
    }

    /// Sum of the estimates of the maximal uncovered runs.
    pub fn estimate(&self, coverage: &Coverage) -> f64 {
        coverage.gaps(self.n).map(|g| self.span(g)).sum()
    }
}
