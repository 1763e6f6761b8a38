//! Inverted index: a position map from keyword to spans of one contiguous
//! postings array, with optional splitting of long postings lists and
//! dataset partitioning for multi-load execution.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{Keyword, ObjectRecord, Query, QueryItem};

/// Sub-list length limit used when load balancing is switched on.
pub const DEFAULT_SPLIT_THRESHOLD: u32 = 4096;

const MAGIC: &[u8; 4] = b"MCIX";
const VERSION: u32 = 1;

/// Half-open range `[start, end)` into the postings array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PostingsSpan {
    pub start: u64,
    pub end: u64,
}

impl PostingsSpan {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start as usize..self.end as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    list_array: Vec<u32>,
    position_map: BTreeMap<Keyword, Vec<PostingsSpan>>,
    num_objects: u32,
    /// Largest number of keywords any single object holds in each dimension.
    keywords_per_dim: Vec<u32>,
    max_token_per_dim: Vec<u32>,
    split_threshold: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexStats {
    pub num_objects: u32,
    pub num_keywords: usize,
    pub num_postings: usize,
    pub longest_list: usize,
}

impl InvertedIndex {
    pub fn build(objects: &[ObjectRecord], split_threshold: Option<u32>) -> Result<Self> {
        build_index(objects, split_threshold)
    }

    pub fn num_objects(&self) -> u32 {
        self.num_objects
    }

    pub fn num_keywords(&self) -> usize {
        self.position_map.len()
    }

    pub fn list_array(&self) -> &[u32] {
        &self.list_array
    }

    pub fn split_threshold(&self) -> Option<u32> {
        self.split_threshold
    }

    pub fn keywords(&self) -> impl Iterator<Item = (&Keyword, &[PostingsSpan])> {
        self.position_map.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn spans(&self, keyword: Keyword) -> &[PostingsSpan] {
        self.position_map
            .get(&keyword)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    #[inline]
    pub fn postings(&self, span: PostingsSpan) -> &[u32] {
        &self.list_array[span.range()]
    }

    /// All spans of keywords `(item.dim, t)` with `lo <= t <= hi`; absent keywords contribute nothing.
    pub fn lookup(&self, item: &QueryItem) -> Vec<PostingsSpan> {
        self.position_map
            .range(Keyword::new(item.dim, item.lo)..=Keyword::new(item.dim, item.hi))
            .flat_map(|(_, spans)| spans.iter().copied())
            .collect()
    }

    pub fn keywords_per_dim(&self, dim: u16) -> u32 {
        self.keywords_per_dim.get(dim as usize).copied().unwrap_or(0)
    }

    pub fn max_token(&self, dim: u16) -> Option<u32> {
        self.max_token_per_dim
            .get(dim as usize)
            .copied()
            .filter(|_| self.keywords_per_dim(dim) > 0)
    }

    /// Rebuilds the object records the index was built from.
    pub fn objects(&self) -> Vec<ObjectRecord> {
        let mut keywords: Vec<Vec<Keyword>> = vec![Vec::new(); self.num_objects as usize];
        for (&kw, spans) in &self.position_map {
            for &span in spans {
                for &id in self.postings(span) {
                    keywords[id as usize].push(kw);
                }
            }
        }
        keywords
            .into_iter()
            .enumerate()
            .map(|(id, kws)| ObjectRecord::new(id as u32, kws).expect("postings hold distinct keywords per object"))
            .collect()
    }

    /// Upper bound on the match count any indexed object can reach for `query`.
    pub fn max_count(&self, query: &Query) -> u32 {
        query.max_count_with(|d| self.keywords_per_dim(d))
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            num_objects: self.num_objects,
            num_keywords: self.position_map.len(),
            num_postings: self.list_array.len(),
            longest_list: self
                .position_map
                .values()
                .map(|spans| spans.iter().map(PostingsSpan::len).sum::<usize>())
                .max()
                .unwrap_or(0),
        }
    }

    /// Serializes in the little-endian `MCIX` v1 layout.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let invalid = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
        let num_keywords =
            u32::try_from(self.position_map.len()).map_err(|_| invalid("too many keywords"))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.num_objects.to_le_bytes())?;
        w.write_all(&num_keywords.to_le_bytes())?;
        for (kw, spans) in &self.position_map {
            let count = u16::try_from(spans.len())
                .map_err(|_| invalid("keyword has more than 65535 spans"))?;
            w.write_all(&kw.dim.to_le_bytes())?;
            w.write_all(&kw.token.to_le_bytes())?;
            w.write_all(&count.to_le_bytes())?;
            for span in spans {
                w.write_all(&span.start.to_le_bytes())?;
                w.write_all(&span.end.to_le_bytes())?;
            }
        }
        for id in &self.list_array {
            w.write_all(&id.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.list_array.len() * 4 + self.position_map.len() * 24);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses an `MCIX` file and checks every structural invariant.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::CorruptIndex(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::CorruptIndex("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::CorruptIndex(format!("unsupported version {version}")));
        }
        let num_objects = cur.u32()?;
        let num_keywords = cur.u32()?;
        let mut position_map = BTreeMap::new();
        let mut prev: Option<Keyword> = None;
        for _ in 0..num_keywords {
            let dim = cur.u16()?;
            let token = cur.u32()?;
            let kw = Keyword::new(dim, token);
            if prev.is_some_and(|p| p >= kw) {
                return Err(Error::CorruptIndex(format!("keyword {kw} out of order")));
            }
            prev = Some(kw);
            let count = cur.u16()?;
            let spans = (0..count)
                .map(|_| {
                    Ok(PostingsSpan {
                        start: cur.u64()?,
                        end: cur.u64()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            position_map.insert(kw, spans);
        }
        let rest = &bytes[cur.pos..];
        if !rest.len().is_multiple_of(4) {
            return Err(Error::CorruptIndex("truncated postings array".into()));
        }
        let list_array: Vec<u32> = rest
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let index = Self::assemble(list_array, position_map, num_objects, None)?;
        index.validate()?;
        Ok(index)
    }

    fn assemble(
        list_array: Vec<u32>,
        position_map: BTreeMap<Keyword, Vec<PostingsSpan>>,
        num_objects: u32,
        split_threshold: Option<u32>,
    ) -> Result<Self> {
        let len = list_array.len() as u64;
        for (kw, spans) in &position_map {
            for s in spans {
                if s.start > s.end || s.end > len {
                    return Err(Error::CorruptIndex(format!(
                        "span {}..{} of {kw} outside postings array of length {len}",
                        s.start, s.end
                    )));
                }
            }
        }
        let (keywords_per_dim, max_token_per_dim) =
            dimension_stats(&list_array, &position_map, num_objects)?;
        Ok(Self {
            list_array,
            position_map,
            num_objects,
            keywords_per_dim,
            max_token_per_dim,
            split_threshold,
        })
    }

    fn validate(&self) -> Result<()> {
        let corrupt = |msg: String| Err(Error::CorruptIndex(msg));
        let mut all: Vec<PostingsSpan> = self.position_map.values().flatten().copied().collect();
        all.sort_unstable();
        let mut covered = 0u64;
        for pair in all.windows(2) {
            if pair[0].end > pair[1].start {
                return corrupt(format!("overlapping spans at offset {}", pair[1].start));
            }
        }
        for s in &all {
            covered += s.end - s.start;
        }
        if covered != self.list_array.len() as u64 {
            return corrupt(format!(
                "spans cover {covered} postings but the array holds {}",
                self.list_array.len()
            ));
        }
        for (kw, spans) in &self.position_map {
            let mut last: Option<u32> = None;
            for s in spans {
                if let Some(limit) = self.split_threshold {
                    if s.len() > limit as usize {
                        return corrupt(format!("span of {kw} longer than split threshold {limit}"));
                    }
                }
                for &id in self.postings(*s) {
                    if id >= self.num_objects {
                        return corrupt(format!("object id {id} in {kw} out of range"));
                    }
                    if last.is_some_and(|l| l >= id) {
                        return corrupt(format!("postings of {kw} not strictly ascending"));
                    }
                    last = Some(id);
                }
            }
        }
        Ok(())
    }
}

fn dimension_stats(
    list_array: &[u32],
    position_map: &BTreeMap<Keyword, Vec<PostingsSpan>>,
    num_objects: u32,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let dims = position_map
        .keys()
        .next_back()
        .map_or(0, |k| k.dim as usize + 1);
    let mut keywords_per_dim = vec![0u32; dims];
    let mut max_token = vec![0u32; dims];
    let mut per_object = vec![0u32; num_objects as usize];
    let mut touched = Vec::new();
    let mut current_dim: Option<u16> = None;

    let mut flush = |dim: u16, per_object: &mut Vec<u32>, touched: &mut Vec<u32>| {
        for &id in touched.iter() {
            let c = &mut per_object[id as usize];
            keywords_per_dim[dim as usize] = keywords_per_dim[dim as usize].max(*c);
            *c = 0;
        }
        touched.clear();
    };

    for (kw, spans) in position_map {
        if current_dim != Some(kw.dim) {
            if let Some(d) = current_dim {
                flush(d, &mut per_object, &mut touched);
            }
            current_dim = Some(kw.dim);
        }
        max_token[kw.dim as usize] = max_token[kw.dim as usize].max(kw.token);
        for s in spans {
            for &id in &list_array[s.range()] {
                let slot = per_object.get_mut(id as usize).ok_or_else(|| {
                    Error::CorruptIndex(format!("object id {id} out of range"))
                })?;
                if *slot == 0 {
                    touched.push(id);
                }
                *slot += 1;
            }
        }
    }
    if let Some(d) = current_dim {
        flush(d, &mut per_object, &mut touched);
    }
    Ok((keywords_per_dim, max_token))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptIndex("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Builds the index over objects whose ids are exactly `0..objects.len()`.
pub fn build_index(objects: &[ObjectRecord], split_threshold: Option<u32>) -> Result<InvertedIndex> {
    if split_threshold == Some(0) {
        return Err(Error::invalid("split threshold must be positive"));
    }
    let n = u32::try_from(objects.len()).map_err(|_| Error::invalid("too many objects"))?;
    let mut seen = vec![false; objects.len()];
    for o in objects {
        let slot = seen.get_mut(o.id() as usize).ok_or(Error::SparseObjectIds {
            expected: n,
            found: o.id(),
        })?;
        if std::mem::replace(slot, true) {
            return Err(Error::DuplicateObject(o.id()));
        }
    }

    let mut pairs: Vec<(u64, u32)> = objects
        .iter()
        .flat_map(|o| o.keywords().iter().map(move |k| (k.pack(), o.id())))
        .collect();
    pairs.sort_unstable();

    let mut list_array = Vec::with_capacity(pairs.len());
    let mut position_map = BTreeMap::new();
    for group in pairs.chunk_by(|a, b| a.0 == b.0) {
        let kw = Keyword::unpack(group[0].0);
        let start = list_array.len();
        list_array.extend(group.iter().map(|&(_, id)| id));
        let end = list_array.len();
        let limit = split_threshold.map_or(usize::MAX, |l| l as usize);
        let spans = (start..end)
            .step_by(limit.min(end - start).max(1))
            .map(|s| PostingsSpan {
                start: s as u64,
                end: (s.saturating_add(limit)).min(end) as u64,
            })
            .collect();
        position_map.insert(kw, spans);
    }
    InvertedIndex::assemble(list_array, position_map, n, split_threshold)
}

/// One load unit of a partitioned dataset; the index uses local ids.
#[derive(Debug, Clone)]
pub struct IndexPartition {
    pub part_id: usize,
    pub object_id_range: Range<u32>,
    pub index: InvertedIndex,
    pub id_offset: u32,
}

impl IndexPartition {
    pub fn to_global(&self, local: u32) -> u32 {
        local + self.id_offset
    }
}

/// Splits objects (dense ids, in order) into consecutive parts of at most
/// `part_capacity` objects, each with its own index.
pub fn partition_dataset(
    objects: &[ObjectRecord],
    part_capacity: usize,
    split_threshold: Option<u32>,
) -> Result<Vec<IndexPartition>> {
    if part_capacity == 0 {
        return Err(Error::invalid("partition capacity must be at least 1"));
    }
    if let Some((i, o)) = objects.iter().enumerate().find(|(i, o)| o.id() as usize != *i) {
        return Err(Error::SparseObjectIds {
            expected: i as u32,
            found: o.id(),
        });
    }
    objects
        .chunks(part_capacity)
        .enumerate()
        .map(|(part_id, chunk)| {
            let offset = (part_id * part_capacity) as u32;
            let local: Vec<ObjectRecord> = chunk
                .iter()
                .enumerate()
                .map(|(i, o)| o.with_id(i as u32))
                .collect();
            Ok(IndexPartition {
                part_id,
                object_id_range: offset..offset + chunk.len() as u32,
                index: build_index(&local, split_threshold)?,
                id_offset: offset,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw(dim: u16, token: u32) -> Keyword {
        Keyword::new(dim, token)
    }

    #[test]
    fn objects_round_trip() {
        let objs = example_objects();
        assert_eq!(build_index(&objs, Some(1)).unwrap().objects(), objs);
        assert!(build_index(&[], None).unwrap().objects().is_empty());
    }

    pub(crate) fn example_objects() -> Vec<ObjectRecord> {
        [[1, 2, 1], [2, 1, 2], [1, 2, 2]]
            .iter()
            .enumerate()
            .map(|(i, v)| {
                ObjectRecord::new(
                    i as u32,
                    v.iter().enumerate().map(|(d, &t)| kw(d as u16, t)).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn ids(index: &InvertedIndex, spans: &[PostingsSpan]) -> Vec<u32> {
        spans.iter().flat_map(|s| index.postings(*s).to_vec()).collect()
    }

    #[test]
    fn running_example_postings() {
        let index = build_index(&example_objects(), None).unwrap();
        assert_eq!(ids(&index, index.spans(kw(0, 1))), vec![0, 2]);
        assert_eq!(ids(&index, index.spans(kw(1, 2))), vec![0, 2]);
        assert_eq!(ids(&index, index.spans(kw(2, 2))), vec![1, 2]);
        assert_eq!(index.num_keywords(), 6);
        assert_eq!(index.keywords_per_dim(0), 1);
        assert_eq!(index.max_token(2), Some(2));
    }

    #[test]
    fn empty_dataset() {
        let index = build_index(&[], None).unwrap();
        assert_eq!(index.num_keywords(), 0);
        assert!(index.list_array().is_empty());
        assert_eq!(index.stats().longest_list, 0);
    }

    #[test]
    fn splitting_long_lists() {
        let objects: Vec<_> = (0..10_000)
            .map(|i| ObjectRecord::new(i, vec![kw(0, 0)]).unwrap())
            .collect();
        let index = build_index(&objects, Some(DEFAULT_SPLIT_THRESHOLD)).unwrap();
        let lens: Vec<usize> = index.spans(kw(0, 0)).iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![4096, 4096, 1808]);
        assert_eq!(ids(&index, index.spans(kw(0, 0))), (0..10_000).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_and_sparse_ids() {
        let a = ObjectRecord::new(0, vec![kw(0, 0)]).unwrap();
        let b = ObjectRecord::new(0, vec![kw(0, 1)]).unwrap();
        assert_eq!(build_index(&[a.clone(), b], None).unwrap_err(), Error::DuplicateObject(0));
        let c = ObjectRecord::new(5, vec![kw(0, 1)]).unwrap();
        assert!(matches!(
            build_index(&[a, c], None),
            Err(Error::SparseObjectIds { .. })
        ));
    }

    #[test]
    fn lookup_ranges() {
        let index = build_index(&example_objects(), None).unwrap();
        let spans = index.lookup(&QueryItem::new(0, 1, 2).unwrap());
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0], index.spans(kw(0, 1))[0]);
        assert_eq!(spans[1], index.spans(kw(0, 2))[0]);
        assert!(index.lookup(&QueryItem::new(9, 0, 100).unwrap()).is_empty());
        let full = index.lookup(&QueryItem::new(2, 0, u32::MAX).unwrap());
        assert_eq!(full.iter().map(PostingsSpan::len).sum::<usize>(), 3);
    }

    #[test]
    fn partition_arithmetic() {
        let objects: Vec<_> = (0..10)
            .map(|i| ObjectRecord::new(i, vec![kw(0, i % 3)]).unwrap())
            .collect();
        let parts = partition_dataset(&objects, 4, None).unwrap();
        let sizes: Vec<u32> = parts.iter().map(|p| p.index.num_objects()).collect();
        let offsets: Vec<u32> = parts.iter().map(|p| p.id_offset).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(offsets, vec![0, 4, 8]);
        assert_eq!(parts[2].object_id_range, 8..10);

        let whole = partition_dataset(&objects, 10, None).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].index, build_index(&objects, None).unwrap());

        let objects: Vec<_> = (0..36)
            .map(|i| ObjectRecord::new(i, vec![kw(0, 0)]).unwrap())
            .collect();
        let parts = partition_dataset(&objects, 6, None).unwrap();
        assert_eq!(parts.len(), 6);
        assert!(parts.iter().all(|p| p.index.num_objects() == 6));
        assert!(partition_dataset(&objects, 0, None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let index = build_index(&example_objects(), None).unwrap();
        let bytes = index.to_bytes();
        assert_eq!(&bytes[..4], b"MCIX");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 6);
        // 16 header + 6 records of 2+4+2+16 + 9 postings of 4
        assert_eq!(bytes.len(), 16 + 6 * 24 + 9 * 4);
        let loaded = InvertedIndex::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(loaded.list_array(), index.list_array());
        assert_eq!(loaded.keywords_per_dim(1), 1);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = build_index(&example_objects(), None).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(InvertedIndex::from_bytes(&bad).is_err());
        assert!(InvertedIndex::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        assert!(InvertedIndex::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        // Postings of (0,1) are [0, 2]; make them descending.
        let mut unsorted = bytes.clone();
        let base = 16 + 6 * 24;
        unsorted[base..base + 4].copy_from_slice(&2u32.to_le_bytes());
        unsorted[base + 4..base + 8].copy_from_slice(&0u32.to_le_bytes());
        assert!(InvertedIndex::from_bytes(&unsorted).is_err());
        let mut out_of_range = bytes;
        out_of_range[base..base + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(InvertedIndex::from_bytes(&out_of_range).is_err());
    }
}
