//! Vocabulary of the match-count model: keywords, objects and range queries,
//! plus the sequential reference evaluator every other component is checked
//! against.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A universe element: an attribute (or hash function) index paired with a
/// discretized value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Keyword {
    pub dim: u16,
    pub token: u32,
}

impl Keyword {
    pub const fn new(dim: u16, token: u32) -> Self {
        Self { dim, token }
    }

    /// Packs the keyword into a single integer that preserves `(dim, token)` ordering.
    pub const fn pack(self) -> u64 {
        ((self.dim as u64) << 32) | self.token as u64
    }

    pub const fn unpack(packed: u64) -> Self {
        Self {
            dim: (packed >> 32) as u16,
            token: packed as u32,
        }
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.dim, self.token)
    }
}

/// An object: a set of distinct keywords, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    id: u32,
    keywords: Vec<Keyword>,
}

impl ObjectRecord {
    /// Sorts the keywords; a repeated keyword is a caller bug and is rejected.
    pub fn new(id: u32, mut keywords: Vec<Keyword>) -> Result<Self> {
        keywords.sort_unstable();
        if let Some(w) = keywords.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateKeyword {
                object: id,
                dim: w[0].dim,
                token: w[0].token,
            });
        }
        Ok(Self { id, keywords })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    /// Same keywords under a different id (used when re-basing partitions).
    pub fn with_id(&self, id: u32) -> Self {
        Self {
            id,
            keywords: self.keywords.clone(),
        }
    }
}

/// One query item: an inclusive token range on one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryItem {
    pub dim: u16,
    pub lo: u32,
    pub hi: u32,
}

impl QueryItem {
    pub fn new(dim: u16, lo: u32, hi: u32) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidRange {
                dim,
                lo: lo as i64,
                hi: hi as i64,
            });
        }
        Ok(Self { dim, lo, hi })
    }

    pub const fn point(keyword: Keyword) -> Self {
        Self {
            dim: keyword.dim,
            lo: keyword.token,
            hi: keyword.token,
        }
    }

    #[inline]
    pub fn contains(&self, keyword: Keyword) -> bool {
        keyword.dim == self.dim && self.lo <= keyword.token && keyword.token <= self.hi
    }

    /// Number of distinct tokens the range spans.
    pub fn width(&self) -> u64 {
        (self.hi - self.lo) as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    id: u32,
    items: Vec<QueryItem>,
    k: usize,
}

impl Query {
    pub fn new(id: u32, items: Vec<QueryItem>, k: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid(format!("query {id} has no items")));
        }
        if k == 0 {
            return Err(Error::invalid(format!("query {id}: k must be at least 1")));
        }
        Ok(Self { id, items, k })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn items(&self) -> &[QueryItem] {
        &self.items
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn with_id(mut self, id: u32) -> Self {
        self.id = id;
        self
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.k = k;
        Ok(self)
    }

    /// Upper bound on the match count of any object, given the largest number
    /// of keywords any object holds per dimension.
    pub fn max_count_with(&self, keywords_per_dim: impl Fn(u16) -> u32) -> u32 {
        self.items
            .iter()
            .map(|item| item.width().min(keywords_per_dim(item.dim) as u64) as u32)
            .fold(0u32, |acc, c| acc.saturating_add(c))
    }
}

/// `MC(Q, O)`: for every item, the number of object keywords it contains, summed.
pub fn match_count_reference(query: &Query, object: &ObjectRecord) -> u32 {
    query
        .items()
        .iter()
        .map(|item| {
            object
                .keywords()
                .iter()
                .filter(|&&w| item.contains(w))
                .count() as u32
        })
        .sum()
}

/// Relational schema: one finite token domain per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    domains: Vec<u32>,
}

impl Schema {
    pub fn new(domains: Vec<u32>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::invalid("schema must declare at least one attribute"));
        }
        if domains.len() > u16::MAX as usize + 1 {
            return Err(Error::invalid("too many attributes"));
        }
        if let Some(a) = domains.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("attribute {a} has an empty domain")));
        }
        Ok(Self { domains })
    }

    pub fn num_attributes(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, attribute: u16) -> Option<u32> {
        self.domains.get(attribute as usize).copied()
    }

    pub fn domains(&self) -> &[u32] {
        &self.domains
    }

    fn checked_domain(&self, attribute: u16) -> Result<u32> {
        self.domain(attribute).ok_or_else(|| {
            Error::invalid(format!(
                "attribute {attribute} not in schema of {} attributes",
                self.domains.len()
            ))
        })
    }
}

/// Encodes one tuple as `{(0, v0), (1, v1), ...}`.
pub fn encode_relational_tuple(schema: &Schema, id: u32, values: &[u32]) -> Result<ObjectRecord> {
    if values.len() != schema.num_attributes() {
        return Err(Error::Dimension {
            expected: schema.num_attributes(),
            got: values.len(),
        });
    }
    let keywords = values
        .iter()
        .zip(schema.domains())
        .enumerate()
        .map(|(dim, (&token, &domain))| {
            let dim = dim as u16;
            if token >= domain {
                return Err(Error::Domain {
                    dim,
                    token: token as u64,
                    domain,
                });
            }
            Ok(Keyword::new(dim, token))
        })
        .collect::<Result<Vec<_>>>()?;
    ObjectRecord::new(id, keywords)
}

/// Builds a query from `(attribute, lo, hi)` ranges. Bounds are clamped into
/// the attribute's domain first; a range that is empty after clamping is an error.
pub fn encode_relational_query(
    schema: &Schema,
    id: u32,
    ranges: &[(u16, i64, i64)],
    k: usize,
) -> Result<Query> {
    let items = ranges
        .iter()
        .map(|&(dim, lo, hi)| {
            let top = schema.checked_domain(dim)? as i64 - 1;
            let (clo, chi) = (lo.clamp(0, top), hi.clamp(0, top));
            if lo > hi || lo > top || hi < 0 {
                return Err(Error::InvalidRange { dim, lo, hi });
            }
            QueryItem::new(dim, clo as u32, chi as u32)
        })
        .collect::<Result<Vec<_>>>()?;
    Query::new(id, items, k)
}

/// Range `[value - radius, value + radius]` on `attribute`, used for numeric
/// attributes queried around a discretized value.
pub fn window_range(attribute: u16, value: u32, radius: u32) -> (u16, i64, i64) {
    (
        attribute,
        value as i64 - radius as i64,
        value as i64 + radius as i64,
    )
}
