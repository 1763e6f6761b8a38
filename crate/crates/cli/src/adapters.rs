//! Dataset ingestion, encoder state and query encoding for each adapter.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use mcx_core::lsh::{
    kernel_width_heuristic, BucketClamp, EncoderSpec, LshEncoder, LshFamily, DEFAULT_NUM_FUNCTIONS,
    DEFAULT_PSTABLE_BUCKETS, DEFAULT_REHASH_DOMAIN,
};
use mcx_core::model::{encode_relational_query, encode_relational_tuple};
use mcx_core::sa::{DocumentVocabulary, GramVocabulary, DEFAULT_GRAM_LEN};
use mcx_core::{ObjectRecord, Query, Schema};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Usage;

pub const DEFAULT_BINS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdapterKind {
    Relational,
    VectorsPstable,
    VectorsRbh,
    Sequences,
    Documents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Comma-separated values with a header row.
    Csv,
    /// Little-endian records: u32 dimension then that many f32.
    Vec,
    /// One record per line.
    Lines,
}

impl AdapterKind {
    fn format(self) -> Format {
        match self {
            Self::Relational => Format::Csv,
            Self::VectorsPstable | Self::VectorsRbh => Format::Vec,
            Self::Sequences | Self::Documents => Format::Lines,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_enum)]
    pub adapter: AdapterKind,
    /// Seed for every random choice made while encoding.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Split postings lists longer than this.
    #[arg(long)]
    pub split_threshold: Option<u32>,
    #[command(flatten)]
    pub params: AdapterParams,
}

#[derive(Debug, Clone, Args)]
pub struct AdapterParams {
    /// Relational schema sidecar; defaults to `<dataset>.schema.json` when present.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Discretization bins for numeric attributes.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: u32,
    /// Number of LSH functions.
    #[arg(long, default_value_t = DEFAULT_NUM_FUNCTIONS)]
    pub m: u32,
    /// Re-hash domain D.
    #[arg(long = "rehash-domain", default_value_t = DEFAULT_REHASH_DOMAIN)]
    pub rehash_domain: u32,
    /// p-stable bucket width.
    #[arg(long, default_value_t = 4.0)]
    pub width: f64,
    /// p-stable bucket count after clamping.
    #[arg(long, default_value_t = DEFAULT_PSTABLE_BUCKETS)]
    pub buckets: u32,
    /// Lowest p-stable bucket kept; defaults to centering the buckets on 0.
    #[arg(long, allow_hyphen_values = true)]
    pub min_bucket: Option<i64>,
    /// Laplacian kernel width; defaults to the mean pairwise l1 distance.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// n-gram length for sequences.
    #[arg(long, default_value_t = DEFAULT_GRAM_LEN)]
    pub n: usize,
    /// Stop-word list for documents, one word per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

/// How to turn raw values into keywords; stored next to the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderState {
    Relational { attributes: Vec<Attribute> },
    Vectors { spec: EncoderSpec },
    Sequences { vocabulary: GramVocabulary },
    Documents { vocabulary: DocumentVocabulary },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Integer,
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttrKind,
    pub domain: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct SchemaFile {
    attributes: Vec<AttributeDecl>,
}

#[derive(Debug, Deserialize)]
struct AttributeDecl {
    name: String,
    kind: AttrKind,
    domain: Option<u32>,
    bins: Option<u32>,
    min: Option<f64>,
    max: Option<f64>,
}

pub struct Encoded {
    pub objects: Vec<ObjectRecord>,
    pub state: EncoderState,
}

pub fn encode_dataset(args: &DatasetArgs) -> Result<Encoded> {
    let expected = args.adapter.format();
    if let Some(f) = args.format {
        if f != expected {
            return Err(Usage(format!("adapter {:?} reads {expected:?} data, not {f:?}", args.adapter)).into());
        }
    }
    let path = &args.dataset;
    let encoded = match args.adapter {
        AdapterKind::Relational => encode_relational(path, &args.params)?,
        AdapterKind::VectorsPstable | AdapterKind::VectorsRbh => encode_vectors(path, args)?,
        AdapterKind::Sequences => {
            let mut vocabulary = GramVocabulary::new(args.params.n).map_err(|e| Usage(e.to_string()))?;
            let objects = read_lines(path)?
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    vocabulary
                        .encode_object(i as u32, s)
                        .with_context(|| format!("{}: line {}", path.display(), i + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            Encoded {
                objects,
                state: EncoderState::Sequences { vocabulary },
            }
        }
        AdapterKind::Documents => {
            let stop = match &args.params.stopwords {
                Some(p) => read_lines(p).or_else(|e| {
                    if fs::metadata(p).is_ok_and(|m| m.len() == 0) {
                        Ok(Vec::new())
                    } else {
                        Err(e)
                    }
                })?,
                None => Vec::new(),
            };
            let mut vocabulary = DocumentVocabulary::new(stop);
            let objects = read_lines(path)?
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    vocabulary
                        .decompose_document(i as u32, s)
                        .with_context(|| format!("{}: line {}", path.display(), i + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            Encoded {
                objects,
                state: EncoderState::Documents { vocabulary },
            }
        }
    };
    if encoded.objects.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(encoded)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<String>>>()
        .with_context(|| format!("cannot read {}", path.display()))?;
    if lines.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(lines
        .into_iter()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

fn numeric_bin(v: f64, min: f64, max: f64, bins: u32) -> i64 {
    if max <= min {
        return 0;
    }
    ((v - min) / (max - min) * bins as f64).floor() as i64
}

fn infer_kind(values: &[&str]) -> AttrKind {
    if values.iter().all(|v| v.parse::<u32>().is_ok()) {
        AttrKind::Integer
    } else if values.iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)) {
        AttrKind::Numeric
    } else {
        AttrKind::Categorical
    }
}

fn encode_relational(path: &Path, params: &AdapterParams) -> Result<Encoded> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let names: Vec<String> = reader
        .headers()
        .with_context(|| format!("{}: bad header", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.with_context(|| format!("{}: malformed record", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        bail!("{}: no records", path.display());
    }

    let schema_path = params.schema.clone().or_else(|| {
        let p = PathBuf::from(format!("{}.schema.json", path.display()));
        p.exists().then_some(p)
    });
    let decls: Vec<Option<AttributeDecl>> = match schema_path {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
            let file: SchemaFile =
                serde_json::from_str(&text).with_context(|| format!("{}: invalid schema", p.display()))?;
            let mut by_name: HashMap<String, AttributeDecl> =
                file.attributes.into_iter().map(|a| (a.name.clone(), a)).collect();
            let decls = names.iter().map(|n| by_name.remove(n)).collect();
            if let Some(extra) = by_name.keys().next() {
                bail!("{}: attribute {extra:?} is not a column of {}", p.display(), path.display());
            }
            decls
        }
        None => names.iter().map(|_| None).collect(),
    };

    let mut attributes = Vec::with_capacity(names.len());
    for (col, (name, decl)) in names.iter().zip(decls).enumerate() {
        let values: Vec<&str> = rows.iter().map(|(_, r)| r[col].as_str()).collect();
        let kind = decl.as_ref().map_or_else(|| infer_kind(&values), |d| d.kind);
        let parse_f64 = |(line, v): (u64, &str)| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| anyhow!("{}: line {line}: attribute {name:?}: {v:?} is not a number", path.display()))
        };
        let lines = rows.iter().map(|(l, _)| *l);
        let attr = match kind {
            AttrKind::Integer => {
                let mut top = 0u32;
                for (line, v) in lines.zip(&values) {
                    let x: u32 = v.parse().map_err(|_| {
                        anyhow!("{}: line {line}: attribute {name:?}: {v:?} is not a non-negative integer", path.display())
                    })?;
                    top = top.max(x);
                }
                let domain = decl.as_ref().and_then(|d| d.domain).unwrap_or(top.saturating_add(1));
                Attribute {
                    name: name.clone(),
                    kind,
                    domain,
                    categories: Vec::new(),
                    min: None,
                    max: None,
                }
            }
            AttrKind::Categorical => {
                let mut categories: Vec<String> = Vec::new();
                let mut seen = HashMap::new();
                for v in &values {
                    if !seen.contains_key(*v) {
                        seen.insert(v.to_string(), categories.len());
                        categories.push(v.to_string());
                    }
                }
                Attribute {
                    name: name.clone(),
                    kind,
                    domain: categories.len() as u32,
                    categories,
                    min: None,
                    max: None,
                }
            }
            AttrKind::Numeric => {
                let parsed = lines.zip(values.iter().copied()).map(parse_f64).collect::<Result<Vec<f64>>>()?;
                let lo = parsed.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = parsed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let bins = decl.as_ref().and_then(|d| d.bins).unwrap_or(params.bins);
                if bins == 0 {
                    return Err(Usage(format!("attribute {name:?}: bins must be positive")).into());
                }
                Attribute {
                    name: name.clone(),
                    kind,
                    domain: bins,
                    categories: Vec::new(),
                    min: Some(decl.as_ref().and_then(|d| d.min).unwrap_or(lo)),
                    max: Some(decl.as_ref().and_then(|d| d.max).unwrap_or(hi)),
                }
            }
        };
        attributes.push(attr);
    }

    let schema = relational_schema(&attributes)?;
    let lookup: Vec<HashMap<&str, u32>> = attributes
        .iter()
        .map(|a| a.categories.iter().enumerate().map(|(i, c)| (c.as_str(), i as u32)).collect())
        .collect();
    let objects = rows
        .iter()
        .enumerate()
        .map(|(id, (line, row))| {
            let tokens = attributes
                .iter()
                .zip(row)
                .zip(&lookup)
                .map(|((a, v), cats)| match a.kind {
                    AttrKind::Integer => Ok(v.parse::<u32>()?),
                    AttrKind::Categorical => Ok(cats[v.as_str()]),
                    AttrKind::Numeric => {
                        let x: f64 = v.parse()?;
                        let bin = numeric_bin(x, a.min.unwrap_or(0.0), a.max.unwrap_or(0.0), a.domain);
                        Ok(bin.clamp(0, a.domain as i64 - 1) as u32)
                    }
                })
                .collect::<Result<Vec<u32>>>()?;
            encode_relational_tuple(&schema, id as u32, &tokens)
                .with_context(|| format!("{}: line {line}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Encoded {
        objects,
        state: EncoderState::Relational { attributes },
    })
}

fn relational_schema(attributes: &[Attribute]) -> Result<Schema> {
    Ok(Schema::new(attributes.iter().map(|a| a.domain).collect())?)
}

pub fn read_vectors(path: &Path) -> Result<Vec<Vec<f32>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut points = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let record = points.len() + 1;
        let head = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| anyhow!("{}: record {record}: truncated dimension", path.display()))?;
        let dim = u32::from_le_bytes(head.try_into().unwrap()) as usize;
        pos += 4;
        let body = bytes
            .get(pos..pos + 4 * dim)
            .ok_or_else(|| anyhow!("{}: record {record}: truncated, expected {dim} values", path.display()))?;
        pos += 4 * dim;
        let p: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(first) = points.first().map(Vec::len) {
            if first != dim {
                bail!("{}: record {record}: dimension {dim}, expected {first}", path.display());
            }
        }
        if dim == 0 || p.iter().any(|x| !x.is_finite()) {
            bail!("{}: record {record}: empty or non-finite vector", path.display());
        }
        points.push(p);
    }
    if points.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(points)
}

fn encode_vectors(path: &Path, args: &DatasetArgs) -> Result<Encoded> {
    let points = read_vectors(path)?;
    let p = &args.params;
    let family = match args.adapter {
        AdapterKind::VectorsPstable => LshFamily::PStable {
            width: p.width,
            clamp: BucketClamp {
                min_bucket: p.min_bucket.unwrap_or(-(p.buckets as i64 / 2)),
                buckets: p.buckets,
            },
            rehash_domain: None,
        },
        _ => {
            let sigma = match p.sigma {
                Some(s) => s,
                None if points.len() > 1 => kernel_width_heuristic::<f32, _>(&points)? as f64,
                None => 1.0,
            };
            LshFamily::RandomBinning {
                sigma,
                rehash_domain: p.rehash_domain,
            }
        }
    };
    let spec = EncoderSpec {
        family,
        num_functions: p.m,
        dim: points[0].len(),
        seed: args.seed,
    };
    let encoder = LshEncoder::<f32>::from_spec(spec).map_err(|e| Usage(e.to_string()))?;
    let objects = points
        .iter()
        .enumerate()
        .map(|(i, pt)| encoder.encode_point(pt, i as u32))
        .collect::<mcx_core::Result<Vec<_>>>()?;
    Ok(Encoded {
        objects,
        state: EncoderState::Vectors { spec },
    })
}

/// One line of a query file. Which fields apply depends on the adapter.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryLine {
    pub query_id: Option<u32>,
    pub k: Option<usize>,
    #[serde(default)]
    pub items: Vec<ItemSpec>,
    pub point: Option<Vec<f64>>,
    pub sequence: Option<String>,
    pub text: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub attr: Value,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub value: Option<Value>,
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}: line {}: invalid query", path.display(), i + 1))
        })
        .collect()
}

/// Prepared encoder for turning query lines into match-count queries.
pub enum QueryEncoder {
    Relational { attributes: Vec<Attribute>, schema: Schema },
    Vectors(Box<LshEncoder<f32>>),
    Sequences(GramVocabulary),
    Documents(DocumentVocabulary),
}

impl QueryEncoder {
    pub fn new(state: &EncoderState) -> Result<Self> {
        Ok(match state {
            EncoderState::Relational { attributes } => Self::Relational {
                schema: relational_schema(attributes)?,
                attributes: attributes.clone(),
            },
            EncoderState::Vectors { spec } => Self::Vectors(Box::new(LshEncoder::from_spec(*spec)?)),
            EncoderState::Sequences { vocabulary } => Self::Sequences(vocabulary.clone()),
            EncoderState::Documents { vocabulary } => Self::Documents(vocabulary.clone()),
        })
    }

    /// `None` when nothing in the query can match any indexed keyword.
    pub fn encode(&self, line: &QueryLine, id: u32, k: usize) -> Result<Option<Query>> {
        match self {
            Self::Relational { attributes, schema } => encode_relational_line(attributes, schema, line, id, k),
            Self::Vectors(enc) => {
                let point = line.point.as_ref().ok_or_else(|| anyhow!("query {id}: missing \"point\""))?;
                let p: Vec<f32> = point.iter().map(|&x| x as f32).collect();
                Ok(Some(enc.encode_query_point(&p, id, k).with_context(|| format!("query {id}"))?))
            }
            Self::Sequences(vocab) => {
                let s = line.sequence.as_ref().ok_or_else(|| anyhow!("query {id}: missing \"sequence\""))?;
                Ok(vocab.encode_query(id, s, k)?)
            }
            Self::Documents(vocab) => {
                let t = line.text.as_ref().ok_or_else(|| anyhow!("query {id}: missing \"text\""))?;
                Ok(vocab.encode_query(id, t, k)?)
            }
        }
    }
}

fn attribute_index(attributes: &[Attribute], attr: &Value) -> Result<usize> {
    match attr {
        Value::Number(n) => n
            .as_u64()
            .map(|i| i as usize)
            .filter(|&i| i < attributes.len())
            .ok_or_else(|| anyhow!("attribute {n} out of range")),
        Value::String(s) => attributes
            .iter()
            .position(|a| &a.name == s)
            .ok_or_else(|| anyhow!("unknown attribute {s:?}")),
        other => bail!("attribute must be a name or an index, got {other}"),
    }
}

fn value_as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn encode_relational_line(
    attributes: &[Attribute],
    schema: &Schema,
    line: &QueryLine,
    id: u32,
    k: usize,
) -> Result<Option<Query>> {
    let mut ranges = Vec::new();
    for item in &line.items {
        let a = attribute_index(attributes, &item.attr).with_context(|| format!("query {id}"))?;
        let attr = &attributes[a];
        let (lo, hi) = match (&item.value, item.lo, item.hi) {
            (Some(v), None, None) => {
                if attr.kind == AttrKind::Categorical {
                    let key = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    match attr.categories.iter().position(|c| *c == key) {
                        Some(t) => (t as f64, t as f64),
                        None => continue,
                    }
                } else {
                    let x = value_as_f64(v).ok_or_else(|| anyhow!("query {id}: non-numeric value {v}"))?;
                    (x, x)
                }
            }
            (None, Some(lo), Some(hi)) if attr.kind != AttrKind::Categorical => (lo, hi),
            _ => bail!("query {id}: item on {:?} needs either \"value\" or \"lo\" and \"hi\"", attr.name),
        };
        if lo > hi {
            bail!("query {id}: empty range [{lo}, {hi}] on {:?}", attr.name);
        }
        let (tlo, thi) = match attr.kind {
            AttrKind::Numeric => {
                let (min, max) = (attr.min.unwrap_or(0.0), attr.max.unwrap_or(0.0));
                (numeric_bin(lo, min, max, attr.domain), numeric_bin(hi, min, max, attr.domain))
            }
            _ => (lo.ceil() as i64, hi.floor() as i64),
        };
        let top = attr.domain as i64 - 1;
        if thi < 0 || tlo > top || tlo > thi {
            // nothing indexed can fall in this range
            continue;
        }
        ranges.push((a as u16, tlo, thi));
    }
    if ranges.is_empty() {
        return Ok(None);
    }
    Ok(Some(encode_relational_query(schema, id, &ranges, k)?))
}
