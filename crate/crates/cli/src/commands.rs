use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use log::info;
use mcx_core::engine::{execute_partitioned, Selector};
use mcx_core::index::partition_dataset;
use mcx_core::lsh::{required_m_binomial, required_m_hoeffding, DEFAULT_DELTA, DEFAULT_EPSILON};
use mcx_core::sa::{SequenceIndex, DEFAULT_CANDIDATES};
use mcx_core::{build_index, execute_batch, BatchRequest, BatchResult, InvertedIndex, Query, TopKResult};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::adapters::{self, DatasetArgs, EncoderState, QueryEncoder, QueryLine};
use crate::{Invariant, Usage};

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Where to write the index; the encoder goes to `<index>.encoder.json`.
    #[arg(long)]
    pub index: PathBuf,
    /// Also write build statistics as JSON here.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// JSON lines, one query per line.
    #[arg(long)]
    pub queries: PathBuf,
    /// Default k for queries that do not set their own.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = Selector::Cpq)]
    pub selector: Selector,
    #[arg(long, env = "MCX_WORKERS")]
    pub workers: Option<usize>,
    /// Re-split the index into parts of at most this many objects and merge.
    #[arg(long)]
    pub partition_capacity: Option<usize>,
    /// Recompute every answer with a full sort and fail on any difference.
    #[arg(long)]
    pub oracle: bool,
    /// Original sequences; enables edit-distance verification of the candidates.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// First candidate round size for sequence verification.
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimateMode {
    Both,
    Binomial,
    Hoeffding,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = EstimateMode::Both)]
    pub mode: EstimateMode,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "cpq,bucket,sort")]
    pub selectors: Vec<Selector>,
    /// Worker counts to try, comma separated.
    #[arg(long, value_delimiter = ',', env = "MCX_WORKERS", default_value = "1")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    index_sha256: String,
    encoder: EncoderState,
}

fn sidecar_path(index: &Path) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".encoder.json");
    PathBuf::from(s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn build(args: &BuildArgs) -> Result<()> {
    let encoded = adapters::encode_dataset(&args.data)?;
    let index = build_index(&encoded.objects, args.data.split_threshold)?;
    let bytes = index.to_bytes();
    fs::write(&args.index, &bytes).with_context(|| format!("cannot write {}", args.index.display()))?;
    let sidecar = Sidecar {
        index_sha256: sha256_hex(&bytes),
        encoder: encoded.state,
    };
    let side = sidecar_path(&args.index);
    fs::write(&side, serde_json::to_string_pretty(&sidecar)?)
        .with_context(|| format!("cannot write {}", side.display()))?;

    let stats = index.stats();
    let report = json!({
        "objects": stats.num_objects,
        "keywords": stats.num_keywords,
        "postings": stats.num_postings,
        "longest_list": stats.longest_list,
        "index_bytes": bytes.len(),
    });
    println!(
        "objects {} keywords {} postings {} longest list {}",
        stats.num_objects, stats.num_keywords, stats.num_postings, stats.longest_list
    );
    if let Some(p) = &args.stats_out {
        fs::write(p, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn load_index(path: &Path) -> Result<(InvertedIndex, EncoderState)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).with_context(|| format!("cannot read encoder {}", side.display()))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).with_context(|| format!("{}: invalid encoder file", side.display()))?;
    if sidecar.index_sha256 != sha256_hex(&bytes) {
        bail!(
            "encoder {} was not written for index {}; refusing to run",
            side.display(),
            path.display()
        );
    }
    let index = InvertedIndex::from_bytes(&bytes).with_context(|| format!("cannot load {}", path.display()))?;
    Ok((index, sidecar.encoder))
}

/// Encoded queries, with `None` for those that cannot match anything.
fn encode_queries(encoder: &QueryEncoder, lines: &[QueryLine], k: usize) -> Result<Vec<(u32, Option<Query>)>> {
    if k == 0 {
        return Err(Usage("k must be at least 1".into()).into());
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let id = l.query_id.unwrap_or(i as u32);
            Ok((id, encoder.encode(l, id, l.k.unwrap_or(k))?))
        })
        .collect()
}

fn run_batch(
    index: &InvertedIndex,
    partitions: Option<&[mcx_core::index::IndexPartition]>,
    request: &BatchRequest,
) -> Result<BatchResult> {
    Ok(match partitions {
        Some(parts) => execute_partitioned(parts, request)?,
        None => execute_batch(index, request)?,
    })
}

/// Places batch results back among queries that had nothing to search.
fn assemble(encoded: &[(u32, Option<Query>)], results: Vec<TopKResult>) -> Vec<TopKResult> {
    let mut it = results.into_iter();
    encoded
        .iter()
        .map(|(id, q)| match q {
            Some(_) => it.next().expect("one result per query"),
            None => TopKResult::empty(*id),
        })
        .collect()
}

#[derive(Serialize)]
struct HitLine {
    id: u32,
    count: u32,
}

#[derive(Serialize)]
struct NearestLine {
    id: u32,
    distance: usize,
    certified: bool,
    full_scan: bool,
}

#[derive(Serialize)]
struct ResultLine {
    query_id: u32,
    topk: Vec<HitLine>,
    threshold: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    nearest: Option<NearestLine>,
}

impl ResultLine {
    fn new(r: &TopKResult) -> Self {
        Self {
            query_id: r.query_id,
            topk: r.entries.iter().map(|h| HitLine { id: h.id, count: h.count }).collect(),
            threshold: r.threshold,
            nearest: None,
        }
    }
}

fn schedule_from(first: usize) -> Vec<usize> {
    let mut s = vec![first.max(1)];
    while *s.last().unwrap() < 256 {
        let next = s.last().unwrap() * 2;
        s.push(next);
    }
    s
}

pub fn query(args: &QueryArgs) -> Result<()> {
    let (index, state) = load_index(&args.index)?;
    let lines = adapters::read_queries(&args.queries)?;
    let encoder = QueryEncoder::new(&state)?;
    let encoded = encode_queries(&encoder, &lines, args.k)?;
    let queries: Vec<Query> = encoded.iter().filter_map(|(_, q)| q.clone()).collect();

    let mut request = BatchRequest::new(queries).selector(args.selector);
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Usage("workers must be at least 1".into()).into());
        }
        request = request.workers(w);
    }
    let partitions = match args.partition_capacity {
        Some(0) => return Err(Usage("partition capacity must be at least 1".into()).into()),
        Some(cap) => Some(partition_dataset(&index.objects(), cap, index.split_threshold())?),
        None => None,
    };
    let batch = run_batch(&index, partitions.as_deref(), &request)?;
    info!(
        "{} queries in {} ms",
        request.queries.len(),
        batch.timings.total_ns / 1_000_000
    );

    if args.oracle {
        let check = request.clone().selector(Selector::Sort);
        let expected = execute_batch(&index, &check)?;
        for (got, want) in batch.results.iter().zip(&expected.results) {
            if got != want {
                return Err(Invariant(format!(
                    "query {}: {} gave {:?}, sort gave {:?}",
                    got.query_id, args.selector, got.entries, want.entries
                ))
                .into());
            }
        }
    }

    let sequences = match (&args.dataset, &state) {
        (Some(path), EncoderState::Sequences { vocabulary }) => Some(SequenceIndex::from_parts(
            vocabulary.clone(),
            index.clone(),
            adapters::read_lines(path)?,
        )?),
        (Some(_), _) => return Err(Usage("--dataset is only used with the sequences adapter".into()).into()),
        (None, _) => None,
    };
    let schedule = schedule_from(args.candidates);

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (r, line) in assemble(&encoded, batch.results).iter().zip(&lines) {
        let mut v = ResultLine::new(r);
        if let Some(seqs) = &sequences {
            let q = line.sequence.as_deref().unwrap_or_default();
            let ans = seqs.search(q, &schedule).with_context(|| format!("query {}", r.query_id))?;
            v.nearest = Some(NearestLine {
                id: ans.best_id,
                distance: ans.best_distance,
                certified: ans.certified,
                full_scan: ans.full_scan,
            });
        }
        serde_json::to_writer(&mut out, &v)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn estimate_m(args: &EstimateArgs) -> Result<()> {
    let usage = |e: mcx_core::Error| Usage(e.to_string());
    let closed = required_m_hoeffding(args.eps, args.delta).map_err(usage)?;
    if args.mode == EstimateMode::Hoeffding {
        println!("{closed}");
        return Ok(());
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "s,m_binomial")?;
    for i in 1..=19 {
        let s = i as f64 * 0.05;
        let m = required_m_binomial(s, args.eps, args.delta).map_err(usage)?;
        writeln!(out, "{s:.2},{m}")?;
    }
    if args.mode == EstimateMode::Both {
        eprintln!("hoeffding m = {closed} (eps {}, delta {})", args.eps, args.delta);
    }
    Ok(())
}

fn result_hash(results: &[TopKResult]) -> String {
    let mut h = Sha256::new();
    for r in results {
        h.update(serde_json::to_vec(&ResultLine::new(r)).expect("plain data serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if args.repeats == 0 {
        return Err(Usage("repeats must be at least 1".into()).into());
    }
    if args.workers.contains(&0) {
        return Err(Usage("workers must be at least 1".into()).into());
    }
    let encoded = adapters::encode_dataset(&args.data)?;
    let lines = adapters::read_queries(&args.queries)?;
    let encoder = QueryEncoder::new(&encoded.state)?;
    let queries = encode_queries(&encoder, &lines, args.k)?;
    let batch_queries: Vec<Query> = queries.iter().filter_map(|(_, q)| q.clone()).collect();

    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "selector,workers,repeats,queries,build_ns,load_ns,lookup_ns,match_ns,select_ns,merge_ns,total_ns,counter_bytes_per_query,result_hash"
    )?;
    for &selector in &args.selectors {
        for &workers in &args.workers {
            let request = BatchRequest::new(batch_queries.clone()).selector(selector).workers(workers);
            let mut sums = [0u128; 7];
            let mut hash: Option<String> = None;
            let mut counter_bytes = 0;
            for _ in 0..args.repeats {
                let t = Instant::now();
                let index = build_index(&encoded.objects, args.data.split_threshold)?;
                let bytes = index.to_bytes();
                let build_ns = t.elapsed().as_nanos();
                let t = Instant::now();
                let index = InvertedIndex::from_bytes(&bytes)?;
                let load_ns = t.elapsed().as_nanos();
                let batch = execute_batch(&index, &request)?;
                let tm = batch.timings;
                let stages = [
                    build_ns,
                    load_ns,
                    tm.lookup_ns as u128,
                    tm.match_ns as u128,
                    tm.select_ns as u128,
                    tm.merge_ns as u128,
                    build_ns + load_ns + tm.total_ns as u128,
                ];
                for (s, v) in sums.iter_mut().zip(stages) {
                    *s += v;
                }
                counter_bytes = batch.counter_bytes;
                let h = result_hash(&assemble(&queries, batch.results));
                match &hash {
                    Some(prev) if *prev != h => {
                        return Err(Invariant(format!("{selector} gave different results across repeats")).into())
                    }
                    _ => hash = Some(h),
                }
            }
            let mean = sums.map(|s| s / args.repeats as u128);
            writeln!(
                out,
                "{selector},{workers},{},{},{},{},{},{},{},{},{},{},{}",
                args.repeats,
                queries.len(),
                mean[0],
                mean[1],
                mean[2],
                mean[3],
                mean[4],
                mean[5],
                mean[6],
                counter_bytes / batch_queries.len().max(1),
                hash.unwrap_or_default()
            )?;
        }
    }
    Ok(())
}
