//! Per-worker memory pools.
//!
//! A [`Pool`] hands out memory by bumping an offset through a chain of
//! blocks. Nothing is freed individually; the whole pool is rewound by
//! [`Pool::reset`] and the blocks are reused by the next cycle. Capacity only
//! ever grows. A [`RecyclingQueue`] sits on top of a pool and gives high-churn
//! objects a LIFO free list so they can be reused before the next reset.
//!
//! Only `Copy` payloads may be placed in a pool: values are never dropped.

use std::alloc::{self, Layout};
use std::cell::{Cell, RefCell};
use std::marker::PhantomData;
use std::ptr::NonNull;

/// Size of the first block of a pool unless configured otherwise.
pub const DEFAULT_BLOCK_SIZE: usize = 64 * 1024;
/// Appended blocks double in size until they reach this cap.
pub const MAX_BLOCK_SIZE: usize = 16 * 1024 * 1024;

const BLOCK_ALIGN: usize = 64;
#[cfg(debug_assertions)]
const POISON: u8 = 0xA5;

struct Block {
    ptr: NonNull<u8>,
    size: usize,
}

impl Block {
    fn new(size: usize) -> Block {
        let layout = Layout::from_size_align(size.max(1), BLOCK_ALIGN).expect("block layout");
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc::alloc(layout) };
        let ptr = NonNull::new(raw).unwrap_or_else(|| alloc::handle_alloc_error(layout));
        Block { ptr, size }
    }

    fn base(&self) -> usize {
        self.ptr.as_ptr() as usize
    }

    /// Offset at which `size` bytes aligned to `align` can start if placed at
    /// or after `offset`, or `None` when the block is too small.
    fn fit(&self, offset: usize, size: usize, align: usize) -> Option<usize> {
        let addr = self.base().checked_add(offset)?;
        let aligned = addr.checked_add(align - 1)? & !(align - 1);
        let start = aligned - self.base();
        let end = start.checked_add(size)?;
        (end <= self.size).then_some(start)
    }

    #[cfg(debug_assertions)]
    fn poison(&self, len: usize) {
        // SAFETY: len <= size and the caller holds the pool mutably.
        unsafe { std::ptr::write_bytes(self.ptr.as_ptr(), POISON, len.min(self.size)) };
    }
}

impl Drop for Block {
    fn drop(&mut self) {
        let layout = Layout::from_size_align(self.size.max(1), BLOCK_ALIGN).expect("block layout");
        // SAFETY: allocated in Block::new with the same layout.
        unsafe { alloc::dealloc(self.ptr.as_ptr(), layout) };
    }
}

/// Which block an allocation was carved from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    /// A block of the regular bump chain.
    Chain(usize),
    /// A dedicated block for a request larger than the default block size.
    Dedicated(usize),
}

/// Result of a raw [`Pool::alloc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub ptr: NonNull<u8>,
    pub block: BlockId,
    pub offset: usize,
    pub size: usize,
}

/// Snapshot of a pool's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub total_capacity: usize,
    pub high_water_mark: usize,
    pub block_count: usize,
    pub in_use: usize,
    pub largest_block: usize,
    pub alloc_count: u64,
    pub reset_count: u64,
}

impl PoolStats {
    /// Combines the counters of several pools (capacity and counts add up,
    /// the high-water mark is the maximum).
    pub fn merge(&mut self, other: &PoolStats) {
        self.total_capacity += other.total_capacity;
        self.high_water_mark = self.high_water_mark.max(other.high_water_mark);
        self.block_count += other.block_count;
        self.in_use += other.in_use;
        self.largest_block = self.largest_block.max(other.largest_block);
        self.alloc_count += other.alloc_count;
        self.reset_count += other.reset_count;
    }
}

/// Growable bump-pointer arena.
///
/// Allocation takes `&self` so that references handed out stay valid while
/// more are made; [`Pool::reset`] takes `&mut self`, so the borrow checker
/// rules out references that outlive the reset.
pub struct Pool {
    chain: RefCell<Vec<Block>>,
    dedicated: RefCell<Vec<Block>>,
    current: Cell<usize>,
    offset: Cell<usize>,
    dedicated_used: Cell<usize>,
    // Capacity of chain blocks already passed in this cycle.
    passed: Cell<usize>,
    dedicated_bytes: Cell<usize>,
    default_block_size: usize,
    next_block_size: Cell<usize>,
    total_capacity: Cell<usize>,
    high_water_mark: Cell<usize>,
    alloc_count: Cell<u64>,
    reset_count: Cell<u64>,
}

// SAFETY: a pool exclusively owns its blocks; moving it to another thread
// moves that ownership. It is not Sync (Cell/RefCell), so it is never shared.
unsafe impl Send for Pool {}

impl Default for Pool {
    fn default() -> Self {
        Pool::new()
    }
}

impl std::fmt::Debug for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pool").field("stats", &self.stats()).finish()
    }
}

impl Pool {
    pub fn new() -> Pool {
        Pool::with_block_size(DEFAULT_BLOCK_SIZE)
    }

    pub fn with_block_size(block_size: usize) -> Pool {
        let block_size = block_size.max(BLOCK_ALIGN);
        Pool {
            chain: RefCell::new(vec![Block::new(block_size)]),
            dedicated: RefCell::new(Vec::new()),
            current: Cell::new(0),
            offset: Cell::new(0),
            dedicated_used: Cell::new(0),
            passed: Cell::new(0),
            dedicated_bytes: Cell::new(0),
            default_block_size: block_size,
            next_block_size: Cell::new((block_size * 2).min(MAX_BLOCK_SIZE).max(block_size)),
            total_capacity: Cell::new(block_size),
            high_water_mark: Cell::new(0),
            alloc_count: Cell::new(0),
            reset_count: Cell::new(0),
        }
    }

    pub fn default_block_size(&self) -> usize {
        self.default_block_size
    }

    /// Reserves `size` bytes aligned to `align`.
    ///
    /// Panics if `align` is not a power of two. Memory exhaustion aborts via
    /// [`alloc::handle_alloc_error`].
    pub fn alloc(&self, size: usize, align: usize) -> Allocation {
        assert!(align.is_power_of_two(), "alignment {align} is not a power of two");
        self.alloc_count.set(self.alloc_count.get() + 1);

        let mut chain = self.chain.borrow_mut();
        let mut current = self.current.get();
        if let Some(start) = chain[current].fit(self.offset.get(), size, align) {
            return self.bump(&chain[current], current, start, size);
        }

        // Compared with the fixed default size, not the growth step, so the
        // same request sequence takes the same path after every reset.
        let padded = size.saturating_add(align);
        if padded > self.default_block_size {
            drop(chain);
            return self.alloc_dedicated(size, align, padded);
        }

        // Move along the chain, reusing blocks from earlier cycles first.
        while current + 1 < chain.len() {
            self.passed.set(self.passed.get() + chain[current].size);
            current += 1;
            self.current.set(current);
            self.offset.set(0);
            if let Some(start) = chain[current].fit(0, size, align) {
                return self.bump(&chain[current], current, start, size);
            }
        }

        let block_size = padded.max(self.next_block_size.get());
        self.next_block_size
            .set((self.next_block_size.get() * 2).min(MAX_BLOCK_SIZE));
        self.total_capacity.set(self.total_capacity.get() + block_size);
        self.passed.set(self.passed.get() + chain[current].size);
        chain.push(Block::new(block_size));
        current += 1;
        self.current.set(current);
        self.offset.set(0);
        let start = chain[current].fit(0, size, align).expect("fresh block fits request");
        self.bump(&chain[current], current, start, size)
    }

    fn bump(&self, block: &Block, index: usize, start: usize, size: usize) -> Allocation {
        self.offset.set(start + size);
        self.note_usage();
        Allocation {
            // SAFETY: start + size <= block.size.
            ptr: unsafe { NonNull::new_unchecked(block.ptr.as_ptr().add(start)) },
            block: BlockId::Chain(index),
            offset: start,
            size,
        }
    }

    fn alloc_dedicated(&self, size: usize, align: usize, padded: usize) -> Allocation {
        let mut dedicated = self.dedicated.borrow_mut();
        let slot = self.dedicated_used.get();
        match (slot..dedicated.len()).find(|&k| dedicated[k].size >= padded) {
            Some(k) => dedicated.swap(slot, k),
            None => {
                dedicated.insert(slot, Block::new(padded));
                self.total_capacity.set(self.total_capacity.get() + padded);
            }
        }
        self.dedicated_used.set(slot + 1);
        let block = &dedicated[slot];
        let start = block.fit(0, size, align).expect("dedicated block fits request");
        self.dedicated_bytes.set(self.dedicated_bytes.get() + block.size);
        self.note_usage();
        Allocation {
            // SAFETY: start + size <= block.size.
            ptr: unsafe { NonNull::new_unchecked(block.ptr.as_ptr().add(start)) },
            block: BlockId::Dedicated(slot),
            offset: start,
            size,
        }
    }

    fn note_usage(&self) {
        let used = self.in_use();
        if used > self.high_water_mark.get() {
            self.high_water_mark.set(used);
        }
    }

    /// Bytes consumed since the last reset, counting skipped block tails and
    /// alignment padding.
    pub fn in_use(&self) -> usize {
        self.passed.get() + self.offset.get() + self.dedicated_bytes.get()
    }

    /// Moves `value` into the pool.
    #[allow(clippy::mut_from_ref)] // each call hands out distinct storage
    pub fn alloc_value<T: Copy>(&self, value: T) -> &mut T {
        let a = self.alloc(size_of::<T>(), align_of::<T>());
        let ptr = a.ptr.as_ptr().cast::<T>();
        // SAFETY: fresh, aligned, exclusively owned storage for one T, valid
        // until `reset(&mut self)` or drop.
        unsafe {
            ptr.write(value);
            &mut *ptr
        }
    }

    /// Copies `src` into the pool.
    #[allow(clippy::mut_from_ref)] // each call hands out distinct storage
    pub fn alloc_slice_copy<T: Copy>(&self, src: &[T]) -> &mut [T] {
        let a = self.alloc(size_of_val(src), align_of::<T>());
        let ptr = a.ptr.as_ptr().cast::<T>();
        // SAFETY: as in alloc_value, for src.len() elements.
        unsafe {
            std::ptr::copy_nonoverlapping(src.as_ptr(), ptr, src.len());
            std::slice::from_raw_parts_mut(ptr, src.len())
        }
    }

    /// Rewinds the pool to its first block. No memory is released.
    pub fn reset(&mut self) {
        #[cfg(debug_assertions)]
        {
            let chain = self.chain.borrow();
            for block in &chain[..self.current.get()] {
                block.poison(block.size);
            }
            chain[self.current.get()].poison(self.offset.get());
            for block in &self.dedicated.borrow()[..self.dedicated_used.get()] {
                block.poison(block.size);
            }
        }
        self.current.set(0);
        self.offset.set(0);
        self.passed.set(0);
        self.dedicated_used.set(0);
        self.dedicated_bytes.set(0);
        self.reset_count.set(self.reset_count.get() + 1);
    }

    pub fn stats(&self) -> PoolStats {
        let chain = self.chain.borrow();
        let dedicated = self.dedicated.borrow();
        PoolStats {
            total_capacity: self.total_capacity.get(),
            high_water_mark: self.high_water_mark.get(),
            block_count: chain.len() + dedicated.len(),
            in_use: self.in_use(),
            largest_block: chain.iter().chain(dedicated.iter()).map(|b| b.size).max().unwrap_or(0),
            alloc_count: self.alloc_count.get(),
            reset_count: self.reset_count.get(),
        }
    }

    /// True if `ptr` points into memory owned by this pool.
    pub fn owns(&self, ptr: *const u8) -> bool {
        let addr = ptr as usize;
        let inside = |b: &Block| addr >= b.base() && addr < b.base() + b.size;
        self.chain.borrow().iter().any(inside) || self.dedicated.borrow().iter().any(inside)
    }
}

/// The two pools owned by one decoding worker.
#[derive(Debug, Default)]
pub struct PoolPair {
    /// Lives as long as the worker.
    pub persistent: Pool,
    /// Reset after every sentence.
    pub ephemeral: Pool,
}

impl PoolPair {
    pub fn new() -> PoolPair {
        PoolPair::default()
    }
}

/// Counters of a [`RecyclingQueue`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub acquired: u64,
    pub recycled: u64,
    pub fresh: u64,
}

impl QueueStats {
    pub fn merge(&mut self, other: &QueueStats) {
        self.acquired += other.acquired;
        self.recycled += other.recycled;
        self.fresh += other.fresh;
    }
}

/// LIFO free list of fixed-size `T` slots carved from a pool.
///
/// The queue borrows the pool's lifetime, so it has to be dropped before the
/// pool can be reset.
pub struct RecyclingQueue<'p, T: Copy> {
    class: &'static str,
    free: Vec<NonNull<T>>,
    stats: QueueStats,
    #[cfg(debug_assertions)]
    free_set: rustc_hash::FxHashSet<usize>,
    _pool: PhantomData<&'p Pool>,
}

impl<'p, T: Copy> RecyclingQueue<'p, T> {
    pub fn new(class: &'static str) -> Self {
        RecyclingQueue {
            class,
            free: Vec::new(),
            stats: QueueStats::default(),
            #[cfg(debug_assertions)]
            free_set: Default::default(),
            _pool: PhantomData,
        }
    }

    pub fn class(&self) -> &'static str {
        self.class
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    pub fn free_len(&self) -> usize {
        self.free.len()
    }

    /// Returns the most recently recycled slot initialised with `value`, or a
    /// fresh slot from `pool` when the free list is empty.
    #[allow(clippy::mut_from_ref)] // free slots are owned by this queue
    pub fn acquire(&mut self, pool: &'p Pool, value: T) -> &'p mut T {
        self.stats.acquired += 1;
        match self.free.pop() {
            Some(ptr) => {
                #[cfg(debug_assertions)]
                self.free_set.remove(&(ptr.as_ptr() as usize));
                // SAFETY: the slot came from a pool living for 'p and the
                // recycle contract guarantees nothing else refers to it.
                unsafe {
                    ptr.as_ptr().write(value);
                    &mut *ptr.as_ptr()
                }
            }
            None => {
                self.stats.fresh += 1;
                pool.alloc_value(value)
            }
        }
    }

    /// Puts a slot back on the free list.
    ///
    /// Recycling the same slot twice without an `acquire` in between panics
    /// in debug builds.
    ///
    /// # Safety
    ///
    /// `slot` must have been obtained from this queue's `acquire` (or from the
    /// same pool), and no reference to it may be used after this call.
    pub unsafe fn recycle(&mut self, slot: &'p T) {
        let ptr = NonNull::from(slot);
        #[cfg(debug_assertions)]
        assert!(
            self.free_set.insert(ptr.as_ptr() as usize),
            "{} slot {:p} recycled twice",
            self.class,
            ptr
        );
        self.stats.recycled += 1;
        self.free.push(ptr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_pool_stats() {
        let pool = Pool::with_block_size(4096);
        let s = pool.stats();
        assert_eq!(s.block_count, 1);
        assert_eq!(s.high_water_mark, 0);
        assert_eq!(s.total_capacity, 4096);
    }

    #[test]
    fn block_count_follows_block_size() {
        let pool = Pool::with_block_size(4096);
        pool.alloc(3 * 1024, 8);
        assert_eq!(pool.stats().block_count, 1);

        let pool = Pool::with_block_size(4096);
        pool.alloc(5 * 1024, 8);
        assert_eq!(pool.stats().block_count, 2);
    }

    #[test]
    fn zero_size_alloc_only_pads() {
        let pool = Pool::new();
        pool.alloc(3, 1);
        let before = pool.in_use();
        let a = pool.alloc(0, 8);
        assert_eq!(a.ptr.as_ptr() as usize % 8, 0);
        assert!(pool.in_use() - before < 8);
    }

    #[test]
    fn oversized_request_grows_capacity() {
        let pool = Pool::new();
        let cap = pool.stats().total_capacity;
        let size = pool.default_block_size() * 2;
        pool.alloc(size, 8);
        assert!(pool.stats().total_capacity >= cap + size);
    }

    #[test]
    fn oversized_request_keeps_bump_pointer() {
        let pool = Pool::with_block_size(4096);
        let a = pool.alloc(100, 8);
        pool.alloc(1 << 20, 8);
        let b = pool.alloc(100, 8);
        assert_eq!(a.block, BlockId::Chain(0));
        assert_eq!(b.block, BlockId::Chain(0));
        assert_eq!(b.offset, 104);
    }

    #[test]
    fn reset_on_fresh_pool_is_noop() {
        let mut pool = Pool::new();
        let before = pool.stats();
        pool.reset();
        let after = pool.stats();
        assert_eq!(before.total_capacity, after.total_capacity);
        assert_eq!(before.block_count, after.block_count);
    }

    #[test]
    fn reset_reuses_megabyte() {
        let mut pool = Pool::new();
        pool.alloc(1 << 20, 8);
        let s1 = pool.stats();
        pool.reset();
        pool.alloc(1 << 20, 8);
        let s2 = pool.stats();
        assert_eq!(s1.block_count, s2.block_count);
        assert_eq!(s1.total_capacity, s2.total_capacity);
    }

    #[test]
    fn replay_after_reset_gives_same_offsets() {
        let mut pool = Pool::with_block_size(4096);
        let first: Vec<_> = (0..1000).map(|_| pool.alloc(24, 8)).map(|a| (a.block, a.offset)).collect();
        pool.reset();
        let second: Vec<_> = (0..1000).map(|_| pool.alloc(24, 8)).map(|a| (a.block, a.offset)).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn allocations_stay_inside_one_block() {
        let pool = Pool::with_block_size(256);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let size = rng.random_range(0..600);
            let align = 1 << rng.random_range(0..7);
            let a = pool.alloc(size, align);
            assert!(pool.owns(a.ptr.as_ptr()) || size == 0);
            if size > 0 {
                // The last byte belongs to the same block as the first.
                assert!(pool.owns(unsafe { a.ptr.as_ptr().add(size - 1) }));
            }
        }
    }

    #[test]
    fn large_alignment_is_honoured() {
        let pool = Pool::with_block_size(4096);
        pool.alloc(1, 1);
        let a = pool.alloc(16, 256);
        assert_eq!(a.ptr.as_ptr() as usize % 256, 0);
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn bad_alignment_panics() {
        Pool::new().alloc(8, 3);
    }

    #[test]
    fn typed_allocations() {
        let pool = Pool::new();
        let a = pool.alloc_value(41u64);
        *a += 1;
        let s = pool.alloc_slice_copy(&[1u32, 2, 3]);
        s[0] = 9;
        assert_eq!(*a, 42);
        assert_eq!(s, &[9, 2, 3]);
        let empty: &mut [u32] = pool.alloc_slice_copy(&[]);
        assert!(empty.is_empty());
    }

    #[cfg(debug_assertions)]
    #[test]
    fn reset_poisons_in_debug() {
        let mut pool = Pool::new();
        let ptr = pool.alloc_value(0u8) as *mut u8;
        pool.reset();
        // SAFETY: the block is still owned by the pool.
        assert_eq!(unsafe { *ptr }, POISON);
    }

    #[test]
    fn pool_pair_pools_are_disjoint() {
        let pair = PoolPair::new();
        let a = pair.persistent.alloc(64, 8);
        let b = pair.ephemeral.alloc(64, 8);
        assert!(!pair.ephemeral.owns(a.ptr.as_ptr()));
        assert!(!pair.persistent.owns(b.ptr.as_ptr()));
    }

    #[test]
    fn acquire_on_empty_queue_takes_fresh_slot() {
        let pool = Pool::new();
        let mut q = RecyclingQueue::<u64>::new("test");
        let a = q.acquire(&pool, 5);
        assert_eq!(*a, 5);
        assert_eq!(q.stats().fresh, 1);
    }

    #[test]
    fn recycle_is_lifo() {
        let pool = Pool::new();
        let mut q = RecyclingQueue::<u64>::new("test");
        let a = q.acquire(&pool, 1) as *const u64;
        let b = q.acquire(&pool, 2) as *const u64;
        unsafe {
            q.recycle(&*a);
            q.recycle(&*b);
        }
        assert_eq!(q.acquire(&pool, 3) as *const u64, b);
        assert_eq!(q.acquire(&pool, 4) as *const u64, a);
    }

    #[test]
    fn recycled_slots_avoid_fresh_allocations() {
        let pool = Pool::new();
        let mut q = RecyclingQueue::<[u64; 4]>::new("test");
        let slots: Vec<*const [u64; 4]> = (0..50).map(|i| q.acquire(&pool, [i; 4]) as *const _).collect();
        for &s in &slots {
            unsafe { q.recycle(&*s) };
        }
        let allocs = pool.stats().alloc_count;
        for i in 0..50 {
            q.acquire(&pool, [i; 4]);
        }
        assert_eq!(pool.stats().alloc_count, allocs);
        assert_eq!(q.stats().fresh, 50);
    }

    #[cfg(debug_assertions)]
    #[test]
    #[should_panic(expected = "recycled twice")]
    fn double_recycle_is_detected() {
        let pool = Pool::new();
        let mut q = RecyclingQueue::<u32>::new("test");
        let a = q.acquire(&pool, 1) as *const u32;
        unsafe {
            q.recycle(&*a);
            q.recycle(&*a);
        }
    }
}
