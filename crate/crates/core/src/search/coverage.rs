use std::fmt;

use crate::features::SpanRange;

/// Largest sentence a coverage vector can describe.
pub const MAX_COVERAGE: usize = 256;

const WORDS: usize = MAX_COVERAGE / 64;

/// Bitset over source positions with a cached popcount.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coverage {
    bits: [u64; WORDS],
    count: u16,
}

impl Coverage {
    pub fn empty() -> Coverage {
        Coverage::default()
    }

    pub fn full(n: usize) -> Coverage {
        let mut c = Coverage::empty();
        c.set_range(SpanRange::new(0, n));
        c
    }

    pub fn cardinality(&self) -> usize {
        self.count as usize
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.bits[pos / 64] >> (pos % 64) & 1 == 1
    }

    fn range_mask(range: SpanRange) -> [u64; WORDS] {
        let mut mask = [0u64; WORDS];
        for pos in range.start as usize..range.end as usize {
            mask[pos / 64] |= 1 << (pos % 64);
        }
        mask
    }

    pub fn overlaps(&self, range: SpanRange) -> bool {
        (range.start as usize..range.end as usize).any(|p| self.contains(p))
    }

    pub fn set_range(&mut self, range: SpanRange) {
        debug_assert!(!self.overlaps(range));
        let mask = Coverage::range_mask(range);
        for (b, m) in self.bits.iter_mut().zip(mask) {
            *b |= m;
        }
        self.count = self.bits.iter().map(|b| b.count_ones() as u16).sum();
    }

    pub fn with_range(&self, range: SpanRange) -> Coverage {
        let mut c = *self;
        c.set_range(range);
        c
    }

    pub fn is_full(&self, n: usize) -> bool {
        self.cardinality() == n
    }

    /// Leftmost uncovered position below `n`.
    pub fn first_gap(&self, n: usize) -> Option<usize> {
        for (w, &bits) in self.bits.iter().enumerate() {
            if bits != u64::MAX {
                let pos = w * 64 + (!bits).trailing_zeros() as usize;
                return (pos < n).then_some(pos);
            }
        }
        None
    }

    /// Maximal uncovered runs below `n`, left to right.
    pub fn gaps(&self, n: usize) -> impl Iterator<Item = SpanRange> + '_ {
        let mut pos = 0;
        std::iter::from_fn(move || {
            while pos < n && self.contains(pos) {
                pos += 1;
            }
            if pos >= n {
                return None;
            }
            let start = pos;
            while pos < n && !self.contains(pos) {
                pos += 1;
            }
            Some(SpanRange::new(start, pos))
        })
    }
}

impl fmt::Debug for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = (0..MAX_COVERAGE).rev().find(|&p| self.contains(p)).map_or(0, |p| p + 1);
        let s: String = (0..last).map(|p| if self.contains(p) { '1' } else { '0' }).collect();
        write!(f, "Coverage({s})")
    }
}
