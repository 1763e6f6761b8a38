//! Baseline top-k selectors over a dense count array: a full scan to build
//! the array, an iterative bucket k-selection, and a plain sort.

use crate::cpq::{rank_order, Hit};
use crate::error::{Error, Result};
use crate::model::{match_count_reference, ObjectRecord, Query};

pub const DEFAULT_BUCKET_NUM: usize = 1024;

/// `counts[i] == MC(query, objects[i])`.
pub fn full_scan_counts(query: &Query, objects: &[ObjectRecord]) -> Vec<u32> {
    objects
        .iter()
        .map(|o| match_count_reference(query, o))
        .collect()
}

/// Exact top-k by (count desc, id asc).
pub fn sort_topk(counts: &[u32], k: usize) -> Result<Vec<Hit>> {
    if k > counts.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds array length {}",
            counts.len()
        )));
    }
    let mut hits: Vec<Hit> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| Hit::new(i as u32, c))
        .collect();
    if k < hits.len() {
        hits.select_nth_unstable_by(k, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KSelection {
    pub hits: Vec<Hit>,
    pub iterations: usize,
}

/// Iterative bucket k-selection.
///
/// Each round spreads the survivors over `bucket_num` buckets by
/// `floor((count - min) / (max - min) * bucket_num)`, keeps every survivor in
/// a bucket above the one holding the k-th largest, and recurses into that
/// bucket. A single-valued survivor set is finished by taking the lowest ids.
pub fn bucket_kselect(counts: &[u32], k: usize, bucket_num: usize) -> Result<KSelection> {
    if k > counts.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds array length {}",
            counts.len()
        )));
    }
    if bucket_num < 2 {
        return Err(Error::invalid("bucket_num must be at least 2"));
    }
    let mut selected: Vec<Hit> = Vec::with_capacity(k);
    let mut survivors: Vec<u32> = (0..counts.len() as u32).collect();
    let mut iterations = 0;
    let mut bucket_sizes = vec![0usize; bucket_num];

    while selected.len() < k {
        iterations += 1;
        let need = k - selected.len();
        let (min, max) = survivors
            .iter()
            .map(|&i| counts[i as usize])
            .fold((u32::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
        if min == max {
            // survivors are in ascending id order
            selected.extend(survivors.iter().take(need).map(|&i| Hit::new(i, min)));
            break;
        }
        let span = (max - min) as u64;
        let bucket_of = |c: u32| -> usize {
            (((c - min) as u64 * bucket_num as u64 / span) as usize).min(bucket_num - 1)
        };

        bucket_sizes.iter_mut().for_each(|b| *b = 0);
        for &i in &survivors {
            bucket_sizes[bucket_of(counts[i as usize])] += 1;
        }
        let mut above = 0;
        let mut boundary = bucket_num - 1;
        for b in (0..bucket_num).rev() {
            if above + bucket_sizes[b] >= need {
                boundary = b;
                break;
            }
            above += bucket_sizes[b];
        }

        let mut next = Vec::with_capacity(bucket_sizes[boundary]);
        for &i in &survivors {
            let c = counts[i as usize];
            match bucket_of(c).cmp(&boundary) {
                std::cmp::Ordering::Greater => selected.push(Hit::new(i, c)),
                std::cmp::Ordering::Equal => next.push(i),
                std::cmp::Ordering::Less => {}
            }
        }
        if next.len() == k - selected.len() {
            selected.extend(next.iter().map(|&i| Hit::new(i, counts[i as usize])));
            break;
        }
        survivors = next;
    }
    selected.sort_unstable_by(rank_order);
    Ok(KSelection {
        hits: selected,
        iterations,
    })
}
