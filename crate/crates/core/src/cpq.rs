//! Count Priority Queue (c-PQ): exact top-k by match count.
//!
//! Three levels per query:
//!
//! * a [`BitmapCounter`] with one packed counter per object,
//! * a [`Gate`] (ZipperArray `ZA` plus AuditThreshold `AT`) deciding which
//!   counter updates are promoted,
//! * a [`CountHashTable`] holding promoted `(id, count)` pairs.
//!
//! After all updates, the k-th largest count equals `AT - 1`, so the top-k is
//! read from the hash table alone. All update paths are lock-free and may be
//! driven from many threads at once; extraction needs exclusive access.

use std::sync::atomic::{AtomicU16, AtomicU32, AtomicU64, AtomicU8, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest count value the hash table entry layout can hold.
pub const MAX_COUNT_LIMIT: u32 = (1 << VALUE_BITS) - 1;

const VALUE_BITS: u32 = 20;
const AGE_BITS: u32 = 12;
const MAX_AGE: u32 = (1 << AGE_BITS) - 1;

/// One ranked result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hit {
    pub id: u32,
    pub count: u32,
}

impl Hit {
    pub const fn new(id: u32, count: u32) -> Self {
        Self { id, count }
    }
}

/// Count descending, then id ascending.
pub fn rank_order(a: &Hit, b: &Hit) -> std::cmp::Ordering {
    b.count.cmp(&a.count).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKResult {
    pub query_id: u32,
    pub entries: Vec<Hit>,
    /// Count of the k-th result (`AT - 1`); 0 when fewer than k objects matched.
    pub threshold: u32,
}

impl TopKResult {
    pub fn empty(query_id: u32) -> Self {
        Self {
            query_id,
            entries: Vec::new(),
            threshold: 0,
        }
    }

    pub fn counts(&self) -> Vec<u32> {
        self.entries.iter().map(|h| h.count).collect()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|h| h.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterWidth {
    W4,
    W8,
    W16,
    W32,
}

impl CounterWidth {
    /// Narrowest width whose maximum value is at least `max_count`.
    pub fn for_max_count(max_count: u32) -> Self {
        match max_count {
            0..=15 => CounterWidth::W4,
            16..=255 => CounterWidth::W8,
            256..=65_535 => CounterWidth::W16,
            _ => CounterWidth::W32,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            CounterWidth::W4 => 4,
            CounterWidth::W8 => 8,
            CounterWidth::W16 => 16,
            CounterWidth::W32 => 32,
        }
    }

    /// Bytes needed for `n` counters of this width.
    pub fn bytes_for(self, n: usize) -> usize {
        (n * self.bits() as usize).div_ceil(8)
    }
}

enum Cells {
    Nibbles(Box<[AtomicU8]>),
    Bytes(Box<[AtomicU8]>),
    Halves(Box<[AtomicU16]>),
    Words(Box<[AtomicU32]>),
}

/// Bit-packed per-object counters. Increments are atomic and never exceed
/// `max_count`.
pub struct BitmapCounter {
    cells: Cells,
    len: u32,
    max_count: u32,
    width: CounterWidth,
}

fn zeroed<T: Default>(n: usize) -> Box<[T]> {
    (0..n).map(|_| T::default()).collect()
}

macro_rules! bump {
    ($cell:expr, $id:expr, $max:expr) => {{
        let mut new = 0u32;
        $cell
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |v| {
                if v as u32 >= $max {
                    None
                } else {
                    new = v as u32 + 1;
                    Some(v + 1)
                }
            })
            .map(|_| new)
            .map_err(|_| Error::CounterOverflow {
                object: $id,
                max_count: $max,
            })
    }};
}

impl BitmapCounter {
    pub fn new(len: u32, max_count: u32) -> Self {
        let width = CounterWidth::for_max_count(max_count);
        let n = len as usize;
        let cells = match width {
            CounterWidth::W4 => Cells::Nibbles(zeroed(n.div_ceil(2))),
            CounterWidth::W8 => Cells::Bytes(zeroed(n)),
            CounterWidth::W16 => Cells::Halves(zeroed(n)),
            CounterWidth::W32 => Cells::Words(zeroed(n)),
        };
        Self {
            cells,
            len,
            max_count,
            width,
        }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> CounterWidth {
        self.width
    }

    /// Bytes actually allocated for counter storage.
    pub fn memory_bytes(&self) -> usize {
        match &self.cells {
            Cells::Nibbles(c) | Cells::Bytes(c) => c.len(),
            Cells::Halves(c) => c.len() * 2,
            Cells::Words(c) => c.len() * 4,
        }
    }

    /// Atomically adds one and returns the new value.
    pub fn increment(&self, id: u32) -> Result<u32> {
        if id >= self.len {
            return Err(Error::ObjectOutOfRange {
                object: id,
                num_objects: self.len,
            });
        }
        let i = id as usize;
        let max = self.max_count;
        match &self.cells {
            Cells::Nibbles(c) => {
                let shift = (i & 1) * 4;
                let mut new = 0u32;
                c[i >> 1]
                    .fetch_update(Ordering::AcqRel, Ordering::Acquire, |b| {
                        let v = ((b >> shift) & 0xF) as u32;
                        if v >= max {
                            None
                        } else {
                            new = v + 1;
                            Some(b + (1 << shift))
                        }
                    })
                    .map(|_| new)
                    .map_err(|_| Error::CounterOverflow {
                        object: id,
                        max_count: max,
                    })
            }
            Cells::Bytes(c) => bump!(c[i], id, max),
            Cells::Halves(c) => bump!(c[i], id, max),
            Cells::Words(c) => bump!(c[i], id, max),
        }
    }

    pub fn get(&self, id: u32) -> u32 {
        let i = id as usize;
        match &self.cells {
            Cells::Nibbles(c) => ((c[i >> 1].load(Ordering::Acquire) >> ((i & 1) * 4)) & 0xF) as u32,
            Cells::Bytes(c) => c[i].load(Ordering::Acquire) as u32,
            Cells::Halves(c) => c[i].load(Ordering::Acquire) as u32,
            Cells::Words(c) => c[i].load(Ordering::Acquire),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len).map(move |id| self.get(id))
    }
}

/// ZipperArray plus AuditThreshold.
///
/// `ZA[v]` (1-based) counts promotions at value `v`, saturating at `k`.
/// `AT` only grows and stops at `max_count + 1`.
pub struct Gate {
    zipper: Box<[AtomicU32]>,
    audit_threshold: AtomicU32,
    k: u32,
    max_count: u32,
}

impl Gate {
    fn new(max_count: u32, k: u32) -> Self {
        Self {
            // index 0 unused, index max_count + 1 stays zero
            zipper: zeroed(max_count as usize + 2),
            audit_threshold: AtomicU32::new(1),
            k,
            max_count,
        }
    }

    #[inline]
    pub fn audit_threshold(&self) -> u32 {
        self.audit_threshold.load(Ordering::SeqCst)
    }

    /// `ZA[value]`, zero outside `1..=max_count`.
    pub fn zipper(&self, value: u32) -> u32 {
        self.zipper
            .get(value as usize)
            .map_or(0, |z| z.load(Ordering::SeqCst))
    }

    pub fn zipper_array(&self) -> Vec<u32> {
        (1..=self.max_count).map(|v| self.zipper(v)).collect()
    }

    fn record(&self, value: u32) {
        let k = self.k;
        let _ = self.zipper[value as usize].fetch_update(Ordering::SeqCst, Ordering::SeqCst, |z| {
            (z < k).then_some(z + 1)
        });
        loop {
            let at = self.audit_threshold.load(Ordering::SeqCst);
            if at > self.max_count || self.zipper[at as usize].load(Ordering::SeqCst) < k {
                break;
            }
            let _ = self
                .audit_threshold
                .compare_exchange(at, at + 1, Ordering::SeqCst, Ordering::SeqCst);
        }
    }

    /// `ZA[AT] < k` and, when `AT > 1`, `ZA[AT-1] >= k`.
    pub fn is_settled(&self) -> bool {
        let at = self.audit_threshold();
        self.zipper(at) < self.k && (at == 1 || self.zipper(at - 1) >= self.k)
    }
}

/// A decoded hash table slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub id: u32,
    pub value: u32,
    /// Probe distance from the id's home slot.
    pub age: u32,
}

impl Slot {
    #[inline]
    fn pack(self) -> u64 {
        ((self.id as u64) << 32) | ((self.value as u64) << AGE_BITS) | self.age as u64
    }

    #[inline]
    fn unpack(word: u64) -> Self {
        Self {
            id: (word >> 32) as u32,
            value: ((word >> AGE_BITS) as u32) & MAX_COUNT_LIMIT,
            age: (word as u32) & MAX_AGE,
        }
    }
}

#[inline]
fn mix_id(id: u32) -> u64 {
    let mut x = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Open-addressing Robin Hood table of `(id, value)` pairs stored as packed
/// 64-bit words.
///
/// Entries whose value is below `AT - 1` can never be top-k candidates; an
/// insertion overwrites such a slot in place whatever its age.
pub struct CountHashTable {
    slots: Box<[AtomicU64]>,
    mask: usize,
    hash: fn(u32) -> u64,
}

impl CountHashTable {
    pub fn with_capacity(capacity: usize) -> Self {
        Self::with_hasher(capacity, mix_id)
    }

    pub(crate) fn with_hasher(capacity: usize, hash: fn(u32) -> u64) -> Self {
        let capacity = capacity.max(1).next_power_of_two();
        Self {
            slots: zeroed(capacity),
            mask: capacity - 1,
            hash,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    fn home(&self, id: u32) -> usize {
        (self.hash)(id) as usize & self.mask
    }

    /// Inserts `(id, value)`, or raises the stored value of `id` to `value`.
    pub fn insert(&self, id: u32, value: u32, current_at: u32) -> Result<()> {
        debug_assert!((1..=MAX_COUNT_LIMIT).contains(&value));
        let dead_below = current_at.saturating_sub(1);
        let mut carry = Slot { id, value, age: 0 };
        let mut pos = self.home(id);
        let mut probes = 0usize;
        while probes < self.slots.len() {
            let cell = &self.slots[pos];
            let word = cell.load(Ordering::Acquire);
            let cas = |new: Slot| {
                cell.compare_exchange(word, new.pack(), Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
            };
            if word == 0 {
                if cas(carry) {
                    return Ok(());
                }
                continue;
            }
            let resident = Slot::unpack(word);
            if resident.id == carry.id {
                if resident.value >= carry.value
                    || cas(Slot {
                        value: carry.value,
                        ..resident
                    })
                {
                    return Ok(());
                }
                continue;
            }
            if resident.value < dead_below {
                if cas(carry) {
                    return Ok(());
                }
                continue;
            }
            if resident.age < carry.age {
                if !cas(carry) {
                    continue;
                }
                carry = resident;
            }
            pos = (pos + 1) & self.mask;
            carry.age += 1;
            probes += 1;
            if carry.age > MAX_AGE {
                break;
            }
        }
        Err(Error::TableFull {
            object: carry.id,
            capacity: self.slots.len(),
        })
    }

    /// Slot contents in table order (`None` for empty slots).
    pub fn slots(&self) -> Vec<Option<Slot>> {
        self.slots
            .iter()
            .map(|s| match s.load(Ordering::Acquire) {
                0 => None,
                w => Some(Slot::unpack(w)),
            })
            .collect()
    }

    /// Number of distinct ids currently held.
    pub fn population(&self) -> usize {
        let mut ids: Vec<u32> = self.slots().into_iter().flatten().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Distinct ids with their largest stored value, keeping only values `>= floor`.
    fn collect_at_least(&self, floor: u32) -> Vec<Hit> {
        let mut hits: Vec<Hit> = self
            .slots
            .iter()
            .filter_map(|s| match s.load(Ordering::Acquire) {
                0 => None,
                w => Some(Slot::unpack(w)),
            })
            .filter(|s| s.value >= floor)
            .map(|s| Hit::new(s.id, s.value))
            .collect();
        // A racing displacement can leave a superseded copy of an id behind.
        hits.sort_unstable_by(|a, b| a.id.cmp(&b.id).then(b.count.cmp(&a.count)));
        hits.dedup_by_key(|h| h.id);
        hits
    }
}

/// One query's c-PQ.
pub struct CountPriorityQueue {
    counter: BitmapCounter,
    gate: Gate,
    table: CountHashTable,
    k: u32,
    max_count: u32,
    /// Largest counter value that failed the gate.
    max_rejected: AtomicU32,
}

impl CountPriorityQueue {
    pub fn new(num_objects: u32, max_count: u32, k: usize) -> Result<Self> {
        if max_count == 0 {
            return Err(Error::invalid("max_count must be at least 1"));
        }
        if max_count > MAX_COUNT_LIMIT {
            return Err(Error::invalid(format!(
                "max_count {max_count} exceeds the supported limit {MAX_COUNT_LIMIT}"
            )));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let k = u32::try_from(k).unwrap_or(u32::MAX);
        let capacity = (2 * k as usize).saturating_mul(max_count as usize);
        Ok(Self {
            counter: BitmapCounter::new(num_objects, max_count),
            gate: Gate::new(max_count, k),
            table: CountHashTable::with_capacity(capacity),
            k,
            max_count,
            max_rejected: AtomicU32::new(0),
        })
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn max_count(&self) -> u32 {
        self.max_count
    }

    pub fn num_objects(&self) -> u32 {
        self.counter.len()
    }

    pub fn counter(&self) -> &BitmapCounter {
        &self.counter
    }

    pub fn gate(&self) -> &Gate {
        &self.gate
    }

    pub fn table(&self) -> &CountHashTable {
        &self.table
    }

    pub fn audit_threshold(&self) -> u32 {
        self.gate.audit_threshold()
    }

    /// Counts one occurrence of `id`; safe to call concurrently.
    pub fn update(&self, id: u32) -> Result<()> {
        let value = self.counter.increment(id)?;
        let at = self.gate.audit_threshold();
        if value >= at {
            self.table.insert(id, value, at)?;
            self.gate.record(value);
        } else {
            self.max_rejected.fetch_max(value, Ordering::AcqRel);
        }
        Ok(())
    }

    /// Top-k with ties at the threshold broken by ascending id.
    ///
    /// Objects whose final count equals `AT - 1` may have missed the gate. If
    /// any counter value that high was ever rejected, ties are completed from
    /// the counters.
    pub fn extract_topk(&mut self, query_id: u32) -> TopKResult {
        let threshold = self.gate.audit_threshold() - 1;
        let mut hits = self.table.collect_at_least(threshold);
        if threshold >= 1 && *self.max_rejected.get_mut() >= threshold {
            hits.retain(|h| h.count > threshold);
            hits.extend(
                self.counter
                    .iter()
                    .enumerate()
                    .filter(|&(_, c)| c == threshold)
                    .map(|(id, c)| Hit::new(id as u32, c)),
            );
        }
        self.finish(query_id, hits, threshold)
    }

    /// Top-k read from the hash table only: counts are exact but which of
    /// several objects tied at the threshold is returned depends on update order.
    pub fn extract_topk_unresolved(&mut self, query_id: u32) -> TopKResult {
        let threshold = self.gate.audit_threshold() - 1;
        let hits = self.table.collect_at_least(threshold);
        self.finish(query_id, hits, threshold)
    }

    fn finish(&self, query_id: u32, mut hits: Vec<Hit>, threshold: u32) -> TopKResult {
        hits.sort_unstable_by(rank_order);
        hits.truncate(self.k as usize);
        TopKResult {
            query_id,
            entries: hits,
            threshold,
        }
    }
}
