#![allow(dead_code)]

use mcx_core::cpq::{Hit, TopKResult};
use mcx_core::index::build_index;
use mcx_core::select::{full_scan_counts, sort_topk};
use mcx_core::{InvertedIndex, Keyword, ObjectRecord, Query, QueryItem};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KS: [usize; 3] = [1, 10, 100];

pub struct Instance {
    pub objects: Vec<ObjectRecord>,
    pub index: InvertedIndex,
    pub queries: Vec<Query>,
}

impl Instance {
    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random multi-dimensional keyword data: every object holds one or two
/// tokens per dimension, small domains make ties common.
pub fn random_objects(rng: &mut impl Rng, n: usize, domains: &[u32]) -> Vec<ObjectRecord> {
    (0..n)
        .map(|id| {
            let mut kws = Vec::new();
            for (d, &dom) in domains.iter().enumerate() {
                let per = rng.random_range(1..=2usize).min(dom as usize);
                for t in sample(rng, dom as usize, per) {
                    kws.push(Keyword::new(d as u16, t as u32));
                }
            }
            ObjectRecord::new(id as u32, kws).unwrap()
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng, id: u32, domains: &[u32], k: usize) -> Query {
    let mut items = Vec::new();
    while items.is_empty() {
        for (d, &dom) in domains.iter().enumerate() {
            if rng.random_bool(0.25) {
                continue;
            }
            for _ in 0..rng.random_range(1..=4) {
                let lo = rng.random_range(0..dom);
                let width = if rng.random_bool(0.4) { 0 } else { rng.random_range(0..=dom / 3) };
                items.push(QueryItem::new(d as u16, lo, (lo + width).min(dom - 1)).unwrap());
            }
        }
    }
    Query::new(id, items, k).unwrap()
}

/// `datasets` random datasets with `queries` queries each; a couple reach 10^5 objects.
pub fn corpus(seed: u64, datasets: usize, queries: usize) -> Vec<Instance> {
    let mut rng = rng(seed);
    (0..datasets)
        .map(|i| {
            let n = if i < 2 {
                100_000
            } else {
                let e = rng.random_range(1.0f64..4.0);
                10f64.powf(e) as usize
            };
            let dims = rng.random_range(1..=6);
            let domains: Vec<u32> = (0..dims)
                .map(|_| [3, 8, 32, 500][rng.random_range(0..4)])
                .collect();
            let objects = random_objects(&mut rng, n, &domains);
            let index = build_index(&objects, None).unwrap();
            let queries = (0..queries)
                .map(|q| {
                    let k = KS[rng.random_range(0..3)];
                    random_query(&mut rng, q as u32, &domains, k)
                })
                .collect();
            Instance {
                objects,
                index,
                queries,
            }
        })
        .collect()
}

/// Full scan plus sort, zero counts excluded.
pub fn oracle_topk(objects: &[ObjectRecord], query: &Query) -> TopKResult {
    let counts = full_scan_counts(query, objects);
    let k = query.k();
    let mut hits = sort_topk(&counts, k.min(counts.len())).unwrap();
    hits.retain(|h| h.count > 0);
    let threshold = if hits.len() >= k { hits[k - 1].count } else { 0 };
    TopKResult {
        query_id: query.id(),
        entries: hits,
        threshold,
    }
}

/// k-th largest count over all objects, 0 if fewer than k are non-zero.
pub fn kth_count(objects: &[ObjectRecord], query: &Query) -> u32 {
    oracle_topk(objects, query).threshold
}

pub fn sorted_counts(hits: &[Hit]) -> Vec<u32> {
    let mut c: Vec<u32> = hits.iter().map(|h| h.count).collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    c
}

/// Bit-parallel edit distance for patterns of up to 64 symbols.
pub fn myers_distance(pattern: &[u8], text: &[u8]) -> usize {
    let m = pattern.len();
    if m == 0 {
        return text.len();
    }
    assert!(m <= 64, "pattern longer than one machine word");
    let mut peq = [0u64; 256];
    for (i, &c) in pattern.iter().enumerate() {
        peq[c as usize] |= 1 << i;
    }
    let mask = 1u64 << (m - 1);
    let mut pv = u64::MAX;
    let mut mv = 0u64;
    let mut score = m;
    for &c in text {
        let eq = peq[c as usize];
        let xv = eq | mv;
        let xh = (((eq & pv).wrapping_add(pv)) ^ pv) | eq;
        let mut ph = mv | !(xh | pv);
        let mut mh = pv & xh;
        if ph & mask != 0 {
            score += 1;
        } else if mh & mask != 0 {
            score -= 1;
        }
        ph = (ph << 1) | 1;
        mh <<= 1;
        pv = mh | !(xv | ph);
        mv = ph & xv;
    }
    score
}

/// Lowest-id nearest sequence by edit distance.
pub fn nearest_by_scan(query: &[u8], sequences: &[Vec<u8>]) -> (u32, usize) {
    let mut best = (0u32, usize::MAX);
    for (i, s) in sequences.iter().enumerate() {
        let d = myers_distance(query, s);
        if d < best.1 {
            best = (i as u32, d);
        }
    }
    best
}

pub const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

pub fn random_seq(rng: &mut impl Rng, len: usize, alphabet: &[u8]) -> Vec<u8> {
    (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

/// Replaces `count` distinct positions with a different letter.
pub fn mutate(rng: &mut impl Rng, seq: &[u8], count: usize, alphabet: &[u8]) -> Vec<u8> {
    let mut out = seq.to_vec();
    for p in sample(rng, seq.len(), count.min(seq.len())) {
        let old = out[p];
        let mut c = old;
        while c == old {
            c = alphabet[rng.random_range(0..alphabet.len())];
        }
        out[p] = c;
    }
    out
}
