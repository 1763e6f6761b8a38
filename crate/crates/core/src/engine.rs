//! Batch query execution over an inverted index.
//!
//! A batch is cut into tasks, each a handful of postings chunks for one
//! query. Workers scan their chunks and push every object id into the
//! query's c-PQ; extraction happens once all tasks are done.

use std::collections::HashSet;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpq::{rank_order, CountPriorityQueue, Hit, TopKResult};
use crate::error::{Error, Result};
use crate::index::{IndexPartition, InvertedIndex};
use crate::model::Query;
use crate::select::{bucket_kselect, sort_topk, DEFAULT_BUCKET_NUM};

pub const DEFAULT_CHUNK_SIZE: usize = 4096;
pub const DEFAULT_SPANS_PER_TASK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    #[default]
    Cpq,
    Bucket,
    Sort,
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpq" => Ok(Self::Cpq),
            "bucket" => Ok(Self::Bucket),
            "sort" => Ok(Self::Sort),
            other => Err(Error::Config(format!("unknown selector {other:?}"))),
        }
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cpq => "cpq",
            Self::Bucket => "bucket",
            Self::Sort => "sort",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    #[default]
    Parallel,
    /// Single thread, tasks in sorted order.
    Sequential,
}

#[derive(Debug, Clone)]
pub struct BatchRequest {
    pub queries: Vec<Query>,
    pub selector: Selector,
    pub mode: ExecutionMode,
    pub workers: usize,
    /// Longest run of postings one task scans at a time.
    pub chunk_size: usize,
    /// Chunks grouped into one task.
    pub spans_per_task: usize,
    pub bucket_num: usize,
}

impl BatchRequest {
    pub fn new(queries: Vec<Query>) -> Self {
        Self {
            queries,
            selector: Selector::Cpq,
            mode: ExecutionMode::Parallel,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            chunk_size: DEFAULT_CHUNK_SIZE,
            spans_per_task: DEFAULT_SPANS_PER_TASK,
            bucket_num: DEFAULT_BUCKET_NUM,
        }
    }

    pub fn selector(mut self, selector: Selector) -> Self {
        self.selector = selector;
        self
    }

    pub fn mode(mut self, mode: ExecutionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    pub fn spans_per_task(mut self, spans_per_task: usize) -> Self {
        self.spans_per_task = spans_per_task;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.chunk_size == 0 || self.spans_per_task == 0 {
            return Err(Error::Config("chunk size and spans per task must be positive".into()));
        }
        if self.bucket_num < 2 {
            return Err(Error::Config("bucket_num must be at least 2".into()));
        }
        Ok(())
    }
}

/// Wall time per stage, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageTimings {
    pub lookup_ns: u64,
    pub match_ns: u64,
    pub select_ns: u64,
    pub merge_ns: u64,
    pub total_ns: u64,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.lookup_ns += other.lookup_ns;
        self.match_ns += other.match_ns;
        self.select_ns += other.select_ns;
        self.merge_ns += other.merge_ns;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchResult {
    /// One entry per query, in request order.
    pub results: Vec<TopKResult>,
    pub timings: StageTimings,
    /// Counter memory allocated across all queries of the batch.
    pub counter_bytes: usize,
}

struct Task {
    query: usize,
    ranges: Vec<Range<usize>>,
}

fn plan_tasks(index: &InvertedIndex, queries: &[Query], chunk_size: usize, per_task: usize) -> Vec<Task> {
    let mut tasks = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let mut pending = Vec::with_capacity(per_task);
        for item in q.items() {
            for span in index.lookup(item) {
                let r = span.range();
                let mut s = r.start;
                while s < r.end {
                    let e = (s + chunk_size).min(r.end);
                    pending.push(s..e);
                    if pending.len() == per_task {
                        tasks.push(Task {
                            query: qi,
                            ranges: std::mem::replace(&mut pending, Vec::with_capacity(per_task)),
                        });
                    }
                    s = e;
                }
            }
        }
        if !pending.is_empty() {
            tasks.push(Task {
                query: qi,
                ranges: pending,
            });
        }
    }
    tasks
}

fn tag(query: &Query) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Query {
        query: query.id(),
        source: Box::new(e),
    }
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos() as u64
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// c-PQ sized for `query` on `index`.
pub fn new_cpq(index: &InvertedIndex, query: &Query) -> Result<CountPriorityQueue> {
    CountPriorityQueue::new(index.num_objects(), index.max_count(query).max(1), query.k())
        .map_err(tag(query))
}

/// Runs `query` through a fresh c-PQ on the calling thread and returns the
/// populated queue, ready for inspection or extraction.
pub fn populate_cpq(index: &InvertedIndex, query: &Query) -> Result<CountPriorityQueue> {
    let cpq = new_cpq(index, query)?;
    for item in query.items() {
        for span in index.lookup(item) {
            for &id in index.postings(span) {
                cpq.update(id).map_err(tag(query))?;
            }
        }
    }
    Ok(cpq)
}

/// Dense count array for `query`: one counter per object.
pub fn count_matches(index: &InvertedIndex, query: &Query) -> Vec<u32> {
    let mut counts = vec![0u32; index.num_objects() as usize];
    for item in query.items() {
        for span in index.lookup(item) {
            for &id in index.postings(span) {
                counts[id as usize] += 1;
            }
        }
    }
    counts
}

/// Top-k from a dense count array; objects with count 0 are never reported.
fn select_dense(counts: &[u32], query: &Query, selector: Selector, bucket_num: usize) -> Result<TopKResult> {
    let k = query.k().min(counts.len());
    let mut hits = match selector {
        Selector::Bucket => bucket_kselect(counts, k, bucket_num)?.hits,
        _ => sort_topk(counts, k)?,
    };
    hits.retain(|h| h.count > 0);
    Ok(finish(query.id(), hits, query.k()))
}

fn finish(query_id: u32, entries: Vec<Hit>, k: usize) -> TopKResult {
    let threshold = if entries.len() >= k {
        entries.last().map_or(0, |h| h.count)
    } else {
        0
    };
    TopKResult {
        query_id,
        entries,
        threshold,
    }
}

/// Runs one query on the calling thread.
pub fn run_query(index: &InvertedIndex, query: &Query, selector: Selector) -> Result<TopKResult> {
    match selector {
        Selector::Cpq => Ok(populate_cpq(index, query)?.extract_topk(query.id())),
        _ => select_dense(&count_matches(index, query), query, selector, DEFAULT_BUCKET_NUM)
            .map_err(tag(query)),
    }
}

pub fn execute_batch(index: &InvertedIndex, request: &BatchRequest) -> Result<BatchResult> {
    request.validate()?;
    let start = Instant::now();
    let mut timings = StageTimings::default();
    if request.queries.is_empty() {
        return Ok(BatchResult {
            results: Vec::new(),
            timings,
            counter_bytes: 0,
        });
    }
    let (results, counter_bytes) = match request.selector {
        Selector::Cpq => execute_cpq(index, request, &mut timings)?,
        other => execute_dense(index, request, other, &mut timings)?,
    };
    timings.total_ns = elapsed_ns(start);
    Ok(BatchResult {
        results,
        timings,
        counter_bytes,
    })
}

fn execute_cpq(
    index: &InvertedIndex,
    request: &BatchRequest,
    timings: &mut StageTimings,
) -> Result<(Vec<TopKResult>, usize)> {
    let queries = &request.queries;
    let t = Instant::now();
    let tasks = plan_tasks(index, queries, request.chunk_size, request.spans_per_task);
    let mut queues = queries
        .iter()
        .map(|q| new_cpq(index, q))
        .collect::<Result<Vec<_>>>()?;
    let counter_bytes = queues.iter().map(|c| c.counter().memory_bytes()).sum();
    timings.lookup_ns = elapsed_ns(t);

    let t = Instant::now();
    let run = |task: &Task| -> Result<()> {
        let cpq = &queues[task.query];
        for r in &task.ranges {
            for &id in &index.list_array()[r.clone()] {
                cpq.update(id).map_err(tag(&queries[task.query]))?;
            }
        }
        Ok(())
    };
    match request.mode {
        ExecutionMode::Sequential => tasks.iter().try_for_each(run)?,
        ExecutionMode::Parallel => pool(request.workers)?.install(|| tasks.par_iter().try_for_each(run))?,
    }
    timings.match_ns = elapsed_ns(t);

    let t = Instant::now();
    let results = queues
        .iter_mut()
        .zip(queries)
        .map(|(cpq, q)| cpq.extract_topk(q.id()))
        .collect();
    timings.select_ns = elapsed_ns(t);
    Ok((results, counter_bytes))
}

fn execute_dense(
    index: &InvertedIndex,
    request: &BatchRequest,
    selector: Selector,
    timings: &mut StageTimings,
) -> Result<(Vec<TopKResult>, usize)> {
    let queries = &request.queries;
    let t = Instant::now();
    let counts: Vec<Vec<u32>> = match request.mode {
        ExecutionMode::Sequential => queries.iter().map(|q| count_matches(index, q)).collect(),
        ExecutionMode::Parallel => pool(request.workers)?
            .install(|| queries.par_iter().map(|q| count_matches(index, q)).collect()),
    };
    timings.match_ns = elapsed_ns(t);

    let t = Instant::now();
    let results = counts
        .iter()
        .zip(queries)
        .map(|(c, q)| select_dense(c, q, selector, request.bucket_num).map_err(tag(q)))
        .collect::<Result<Vec<_>>>()?;
    timings.select_ns = elapsed_ns(t);
    let counter_bytes = queries.len() * index.num_objects() as usize * 4;
    Ok((results, counter_bytes))
}

/// Merges per-partition top-k lists (already in global ids) by count desc, id asc.
pub fn merge_topk(query_id: u32, lists: &[Vec<Hit>], k: usize) -> Result<TopKResult> {
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(lists.iter().map(Vec::len).sum());
    for hit in lists.iter().flatten() {
        if !seen.insert(hit.id) {
            return Err(Error::Config(format!(
                "object {} reported by more than one partition",
                hit.id
            )));
        }
        all.push(*hit);
    }
    all.sort_unstable_by(rank_order);
    all.truncate(k);
    Ok(finish(query_id, all, k))
}

/// Runs the batch on every partition and merges the per-partition top-k.
pub fn execute_partitioned(partitions: &[IndexPartition], request: &BatchRequest) -> Result<BatchResult> {
    let start = Instant::now();
    let mut ranges: Vec<&Range<u32>> = partitions.iter().map(|p| &p.object_id_range).collect();
    ranges.sort_by_key(|r| (r.start, r.end));
    if let Some(w) = ranges.windows(2).find(|w| w[1].start < w[0].end) {
        return Err(Error::Config(format!(
            "partitions overlap: {:?} and {:?}",
            w[0], w[1]
        )));
    }
    if let Some(p) = partitions
        .iter()
        .find(|p| p.object_id_range.len() != p.index.num_objects() as usize)
    {
        return Err(Error::Config(format!(
            "partition {} covers {:?} but indexes {} objects",
            p.part_id,
            p.object_id_range,
            p.index.num_objects()
        )));
    }

    let mut timings = StageTimings::default();
    let mut counter_bytes = 0;
    let mut per_query: Vec<Vec<Vec<Hit>>> = vec![Vec::with_capacity(partitions.len()); request.queries.len()];
    for part in partitions {
        let r = execute_batch(&part.index, request)?;
        timings.add(&r.timings);
        counter_bytes = counter_bytes.max(r.counter_bytes);
        for (slot, res) in per_query.iter_mut().zip(r.results) {
            slot.push(
                res.entries
                    .into_iter()
                    .map(|h| Hit::new(part.to_global(h.id), h.count))
                    .collect(),
            );
        }
    }

    let t = Instant::now();
    let results = request
        .queries
        .iter()
        .zip(&per_query)
        .map(|(q, lists)| merge_topk(q.id(), lists, q.k()))
        .collect::<Result<Vec<_>>>()?;
    timings.merge_ns = elapsed_ns(t);
    timings.total_ns = elapsed_ns(start);
    Ok(BatchResult {
        results,
        timings,
        counter_bytes,
    })
}
