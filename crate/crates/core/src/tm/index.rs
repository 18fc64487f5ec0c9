//! Open-addressing hash index from source-phrase fingerprints to payload
//! records, laid out as fixed 24-byte slots so it can be read in place from
//! a mapped file.

use twox_hash::XxHash64;

use super::WordId;

pub const SLOT_BYTES: usize = 24;
const EMPTY: u64 = u64::MAX;

/// 64-bit fingerprint of a source phrase (little-endian word ids).
pub fn fingerprint(ids: &[WordId], seed: u64) -> u64 {
    let mut bytes = [0u8; 4 * 16];
    if ids.len() <= 16 {
        for (chunk, id) in bytes.chunks_exact_mut(4).zip(ids) {
            chunk.copy_from_slice(&id.to_le_bytes());
        }
        return XxHash64::oneshot(seed, &bytes[..4 * ids.len()]);
    }
    let bytes: Vec<u8> = ids.iter().flat_map(|id| id.to_le_bytes()).collect();
    XxHash64::oneshot(seed, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub fingerprint: u64,
    pub offset: u64,
    pub len: u32,
}

impl Slot {
    fn write(&self, out: &mut [u8]) {
        out[..8].copy_from_slice(&self.fingerprint.to_le_bytes());
        out[8..16].copy_from_slice(&self.offset.to_le_bytes());
        out[16..20].copy_from_slice(&self.len.to_le_bytes());
        out[20..24].fill(0);
    }

    fn read(bytes: &[u8]) -> Slot {
        Slot {
            fingerprint: u64::from_le_bytes(bytes[..8].try_into().unwrap()),
            offset: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            len: u32::from_le_bytes(bytes[16..20].try_into().unwrap()),
        }
    }

    fn is_empty(&self) -> bool {
        self.offset == EMPTY
    }
}

/// Linear-probing index over a byte slice of `SLOT_BYTES` slots. The slot
/// count is a power of two and at least one slot is always empty.
#[derive(Debug, Clone, Copy)]
pub struct ProbingIndex<'a> {
    bytes: &'a [u8],
    mask: usize,
}

impl<'a> ProbingIndex<'a> {
    pub fn slot_count_for(entries: usize, load_factor: f64) -> usize {
        let wanted = ((entries as f64) / load_factor).ceil() as usize;
        wanted.max(entries + 1).next_power_of_two()
    }

    /// Serializes `slots` into a fresh index of `slot_count` slots.
    /// Entries sharing a fingerprint are all kept; lookups tell them apart
    /// through the verification callback.
    pub fn build(entries: &[Slot], slot_count: usize) -> Vec<u8> {
        assert!(slot_count.is_power_of_two() && slot_count > entries.len());
        let mut bytes = vec![0u8; slot_count * SLOT_BYTES];
        let empty = Slot { fingerprint: 0, offset: EMPTY, len: 0 };
        for chunk in bytes.chunks_exact_mut(SLOT_BYTES) {
            empty.write(chunk);
        }
        let mask = slot_count - 1;
        for entry in entries {
            let mut i = entry.fingerprint as usize & mask;
            while !Slot::read(&bytes[i * SLOT_BYTES..]).is_empty() {
                i = (i + 1) & mask;
            }
            entry.write(&mut bytes[i * SLOT_BYTES..(i + 1) * SLOT_BYTES]);
        }
        bytes
    }

    pub fn new(bytes: &'a [u8]) -> Option<ProbingIndex<'a>> {
        let slots = bytes.len() / SLOT_BYTES;
        (bytes.len().is_multiple_of(SLOT_BYTES) && slots.is_power_of_two()).then_some(ProbingIndex { bytes, mask: slots - 1 })
    }

    pub fn slot_count(&self) -> usize {
        self.mask + 1
    }

    /// Probes for `fp`, returning the first slot with that fingerprint for
    /// which `verify` accepts, plus the number of slots inspected.
    pub fn find<E>(
        &self,
        fp: u64,
        mut verify: impl FnMut(&Slot) -> Result<bool, E>,
    ) -> Result<(Option<Slot>, usize), E> {
        let mut i = fp as usize & self.mask;
        for probes in 1..=self.slot_count() {
            let slot = Slot::read(&self.bytes[i * SLOT_BYTES..]);
            if slot.is_empty() {
                return Ok((None, probes));
            }
            if slot.fingerprint == fp && verify(&slot)? {
                return Ok((Some(slot), probes));
            }
            i = (i + 1) & self.mask;
        }
        Ok((None, self.slot_count()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(fp: u64, offset: u64) -> Slot {
        Slot { fingerprint: fp, offset, len: 1 }
    }

    #[test]
    fn finds_every_entry() {
        let entries: Vec<Slot> = (0..100).map(|i| slot(fingerprint(&[i, i + 1], 0), i as u64)).collect();
        let n = ProbingIndex::slot_count_for(entries.len(), 0.5);
        assert_eq!(n, 256);
        let bytes = ProbingIndex::build(&entries, n);
        let index = ProbingIndex::new(&bytes).unwrap();
        for e in &entries {
            let (found, _) = index.find(e.fingerprint, |_| Ok::<_, ()>(true)).unwrap();
            assert_eq!(found, Some(*e));
        }
        let (missing, _) = index.find(fingerprint(&[5000], 0), |_| Ok::<_, ()>(true)).unwrap();
        assert_eq!(missing, None);
    }

    #[test]
    fn colliding_fingerprints_resolved_by_verification() {
        // Every entry has the same fingerprint; only the exact key check
        // tells them apart.
        let entries: Vec<Slot> = (0..10).map(|i| slot(42, i)).collect();
        let bytes = ProbingIndex::build(&entries, 16);
        let index = ProbingIndex::new(&bytes).unwrap();
        for want in 0..10u64 {
            let (found, probes) = index.find(42, |s| Ok::<_, ()>(s.offset == want)).unwrap();
            assert_eq!(found.unwrap().offset, want);
            assert!(probes >= 1);
        }
        let (none, _) = index.find(42, |s| Ok::<_, ()>(s.offset == 99)).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn fingerprint_depends_on_order_and_seed() {
        assert_ne!(fingerprint(&[1, 2], 0), fingerprint(&[2, 1], 0));
        assert_ne!(fingerprint(&[1, 2], 0), fingerprint(&[1, 2], 1));
        let long: Vec<u32> = (0..40).collect();
        assert_eq!(fingerprint(&long, 3), fingerprint(&long, 3));
    }
}
