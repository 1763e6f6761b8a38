//! LSH adapters: map real vectors to match-count objects so that the match
//! count estimates similarity.
//!
//! Function `i` becomes keyword dimension `i`; its token is either a clamped
//! p-stable bucket or the re-hash of a signature into `[0, D)`.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::model::{Keyword, ObjectRecord, Query, QueryItem};
use crate::Scalar;

/// Error bound and failure probability used when none are configured.
pub const DEFAULT_EPSILON: f64 = 0.06;
pub const DEFAULT_DELTA: f64 = 0.06;
/// Hash functions used by default for `DEFAULT_EPSILON`/`DEFAULT_DELTA`.
pub const DEFAULT_NUM_FUNCTIONS: u32 = 237;
pub const DEFAULT_REHASH_DOMAIN: u32 = 8192;
pub const DEFAULT_PSTABLE_BUCKETS: u32 = 67;

/// Binomial tails are summed exactly up to this many trials.
pub const EXACT_BINOMIAL_LIMIT: u32 = 10_000;

const MAX_KERNEL_PAIRS: usize = 1_000_000;

fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("finite f64 converts to any float scalar")
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

fn floor_to_i64<F: Scalar>(x: F) -> i64 {
    let f = x.floor();
    f.to_i64().unwrap_or(if f > F::zero() { i64::MAX } else { i64::MIN })
}

/// `h(p) = floor((a·p + b) / w)` with Gaussian `a` (2-stable, for l2).
#[derive(Debug, Clone, PartialEq)]
pub struct PStableHash<F> {
    a: Vec<F>,
    b: F,
    w: F,
}

impl<F: Scalar> PStableHash<F> {
    pub fn new(a: Vec<F>, b: F, w: F) -> Result<Self> {
        if !(w > F::zero()) {
            return Err(Error::invalid("bucket width must be positive"));
        }
        if b < F::zero() || b >= w {
            return Err(Error::invalid("offset b must lie in [0, w)"));
        }
        Ok(Self { a, b, w })
    }

    pub fn sample<R: Rng + ?Sized>(dim: usize, w: f64, rng: &mut R) -> Result<Self> {
        if !(w > 0.0) {
            return Err(Error::invalid("bucket width must be positive"));
        }
        let a = (0..dim)
            .map(|_| cast(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let b = rng.random_range(0.0..w);
        Self::new(a, cast(b), cast(w))
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn hash(&self, point: &[F]) -> Result<i64> {
        check_dim(self.a.len(), point.len())?;
        let dot = self
            .a
            .iter()
            .zip(point)
            .fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        Ok(floor_to_i64((dot + self.b) / self.w))
    }
}

/// Maps signed p-stable buckets into `[0, buckets)` by offsetting and clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketClamp {
    pub min_bucket: i64,
    pub buckets: u32,
}

impl Default for BucketClamp {
    fn default() -> Self {
        let buckets = DEFAULT_PSTABLE_BUCKETS;
        Self {
            min_bucket: -(buckets as i64 / 2),
            buckets,
        }
    }
}

impl BucketClamp {
    pub fn token(&self, raw: i64) -> u32 {
        raw.saturating_sub(self.min_bucket)
            .clamp(0, self.buckets as i64 - 1) as u32
    }
}

/// Random Binning hash: a randomly shifted grid, one cell size per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RbhHash<F> {
    cells: Vec<F>,
    shifts: Vec<F>,
}

impl<F: Scalar> RbhHash<F> {
    pub fn new(cells: Vec<F>, shifts: Vec<F>) -> Result<Self> {
        check_dim(cells.len(), shifts.len())?;
        for (&g, &u) in cells.iter().zip(&shifts) {
            if !(g > F::zero()) {
                return Err(Error::invalid("grid cell size must be positive"));
            }
            if u < F::zero() || u > g {
                return Err(Error::invalid("grid shift must lie in [0, g]"));
            }
        }
        Ok(Self { cells, shifts })
    }

    /// Same cell size `g` on every axis.
    pub fn uniform(g: F, shifts: Vec<F>) -> Result<Self> {
        Self::new(vec![g; shifts.len()], shifts)
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[F] {
        &self.cells
    }

    pub fn shifts(&self) -> &[F] {
        &self.shifts
    }

    /// Grid cell `[floor((p_j - u_j) / g_j)]_j`.
    pub fn hash(&self, point: &[F]) -> Result<Vec<i64>> {
        check_dim(self.cells.len(), point.len())?;
        Ok(point
            .iter()
            .zip(self.cells.iter().zip(&self.shifts))
            .map(|(&p, (&g, &u))| floor_to_i64((p - u) / g))
            .collect())
    }
}

/// Samples an RBH function for the Laplacian kernel `exp(-|p-q|_1 / sigma)`.
///
/// The cell-size density is `g * k''(g) = g e^{-g/sigma} / sigma^2`, i.e.
/// Gamma(2, sigma), drawn as a sum of two exponentials.
pub fn sample_rbh<F: Scalar, R: Rng + ?Sized>(sigma: f64, dim: usize, rng: &mut R) -> Result<RbhHash<F>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("kernel width sigma must be positive"));
    }
    let mut cells = Vec::with_capacity(dim);
    let mut shifts = Vec::with_capacity(dim);
    for _ in 0..dim {
        let e1: f64 = rng.sample(Exp1);
        let e2: f64 = rng.sample(Exp1);
        let g = (sigma * (e1 + e2)).max(f64::MIN_POSITIVE);
        let u = rng.random_range(0.0..=g);
        cells.push(cast::<F>(g));
        shifts.push(cast::<F>(u).min(cast(g)));
    }
    RbhHash::new(cells, shifts)
}

#[inline]
fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^= x >> 33;
    x = x.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    x ^ (x >> 33)
}

/// Seeded projection of a signature into `[0, domain)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rehasher {
    seed: u64,
    domain: u32,
}

impl Rehasher {
    pub fn new(seed: u64, domain: u32) -> Result<Self> {
        if domain == 0 {
            return Err(Error::invalid("re-hash domain must be positive"));
        }
        Ok(Self { seed, domain })
    }

    pub fn domain(&self) -> u32 {
        self.domain
    }

    pub fn rehash(&self, signature: &[i64]) -> u32 {
        let mut h = fmix64(self.seed ^ 0x243F_6A88_85A3_08D3);
        for &v in signature {
            h = fmix64(h ^ v as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
        }
        h = fmix64(h ^ signature.len() as u64);
        (h % self.domain as u64) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LshFamily {
    /// Gaussian projections bucketed by `width`, for Euclidean distance.
    PStable {
        width: f64,
        clamp: BucketClamp,
        /// Re-hash raw buckets into this domain instead of clamping.
        rehash_domain: Option<u32>,
    },
    /// Random binning for the Laplacian kernel of width `sigma`.
    RandomBinning { sigma: f64, rehash_domain: u32 },
}

/// Everything needed to regenerate an encoder bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: LshFamily,
    pub num_functions: u32,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Functions<F> {
    PStable {
        hashes: Vec<PStableHash<F>>,
        clamp: BucketClamp,
        rehashers: Option<Vec<Rehasher>>,
    },
    RandomBinning {
        hashes: Vec<RbhHash<F>>,
        rehashers: Vec<Rehasher>,
    },
}

/// A bank of `m` hash functions `f_i = r_i ∘ h_i`.
#[derive(Debug, Clone)]
pub struct LshEncoder<F> {
    spec: EncoderSpec,
    functions: Functions<F>,
}

impl<F: Scalar> LshEncoder<F> {
    pub fn from_spec(spec: EncoderSpec) -> Result<Self> {
        let m = spec.num_functions;
        if m == 0 || m > u16::MAX as u32 + 1 {
            return Err(Error::invalid(format!("number of hash functions {m} out of range")));
        }
        if spec.dim == 0 {
            return Err(Error::invalid("point dimensionality must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let functions = match spec.family {
            LshFamily::PStable {
                width,
                clamp,
                rehash_domain,
            } => {
                if clamp.buckets == 0 {
                    return Err(Error::invalid("bucket count must be positive"));
                }
                let mut hashes = Vec::with_capacity(m as usize);
                let mut rehashers = rehash_domain.map(|_| Vec::with_capacity(m as usize));
                for _ in 0..m {
                    hashes.push(PStableHash::sample(spec.dim, width, &mut rng)?);
                    if let (Some(rs), Some(d)) = (rehashers.as_mut(), rehash_domain) {
                        rs.push(Rehasher::new(rng.next_u64(), d)?);
                    }
                }
                Functions::PStable {
                    hashes,
                    clamp,
                    rehashers,
                }
            }
            LshFamily::RandomBinning {
                sigma,
                rehash_domain,
            } => {
                let mut hashes = Vec::with_capacity(m as usize);
                let mut rehashers = Vec::with_capacity(m as usize);
                for _ in 0..m {
                    hashes.push(sample_rbh(sigma, spec.dim, &mut rng)?);
                    rehashers.push(Rehasher::new(rng.next_u64(), rehash_domain)?);
                }
                Functions::RandomBinning { hashes, rehashers }
            }
        };
        Ok(Self { spec, functions })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn num_functions(&self) -> u32 {
        self.spec.num_functions
    }

    /// `[f_1(p), ..., f_m(p)]`.
    pub fn tokens(&self, point: &[F]) -> Result<Vec<u32>> {
        check_dim(self.spec.dim, point.len())?;
        match &self.functions {
            Functions::PStable {
                hashes,
                clamp,
                rehashers,
            } => hashes
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let raw = h.hash(point)?;
                    Ok(match rehashers {
                        Some(rs) => rs[i].rehash(&[raw]),
                        None => clamp.token(raw),
                    })
                })
                .collect(),
            Functions::RandomBinning { hashes, rehashers } => hashes
                .iter()
                .zip(rehashers)
                .map(|(h, r)| Ok(r.rehash(&h.hash(point)?)))
                .collect(),
        }
    }

    pub fn encode_point(&self, point: &[F], id: u32) -> Result<ObjectRecord> {
        let keywords = self
            .tokens(point)?
            .into_iter()
            .enumerate()
            .map(|(i, t)| Keyword::new(i as u16, t))
            .collect();
        ObjectRecord::new(id, keywords)
    }

    pub fn encode_query_point(&self, point: &[F], query_id: u32, k: usize) -> Result<Query> {
        let items = self
            .tokens(point)?
            .into_iter()
            .enumerate()
            .map(|(i, t)| QueryItem::point(Keyword::new(i as u16, t)))
            .collect();
        Query::new(query_id, items, k)
    }
}

/// `c / m`.
pub fn estimate_similarity(count: u32, m: u32) -> Result<f64> {
    if m == 0 || count > m {
        return Err(Error::invalid(format!("count {count} not in [0, m = {m}]")));
    }
    Ok(count as f64 / m as f64)
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {x} must lie in (0, 1)")))
    }
}

/// Hoeffding sizing `ceil(2 ln(3/delta) / eps^2)`.
pub fn required_m_hoeffding(eps: f64, delta: f64) -> Result<u32> {
    check_unit("epsilon", eps)?;
    check_unit("delta", delta)?;
    let m = (2.0 * (3.0 / delta).ln() / (eps * eps)).ceil();
    Ok((m as u32).max(1))
}

/// `Pr[floor((s-eps)m) <= c <= ceil((s+eps)m)]` for `c ~ Binomial(m, s)`.
///
/// Summed exactly in log space up to [`EXACT_BINOMIAL_LIMIT`] trials, normal
/// approximation with continuity correction beyond.
pub fn binomial_coverage(m: u32, s: f64, eps: f64) -> f64 {
    if m > EXACT_BINOMIAL_LIMIT {
        normal_coverage(m, s, eps)
    } else {
        exact_coverage(m, s, eps)
    }
}

fn tail_bounds(m: u32, s: f64, eps: f64) -> (u64, u64) {
    let mf = m as f64;
    let lo = ((s - eps) * mf).floor().max(0.0) as u64;
    let hi = ((s + eps) * mf).ceil().min(mf) as u64;
    (lo, hi)
}

pub(crate) fn exact_coverage(m: u32, s: f64, eps: f64) -> f64 {
    let (lo, hi) = tail_bounds(m, s, eps);
    if lo > hi {
        return 0.0;
    }
    let (ls, l1s) = (s.ln(), (1.0 - s).ln());
    let m = m as u64;
    let terms: Vec<f64> = (lo..=hi)
        .map(|c| ln_binomial(m, c) + c as f64 * ls + (m - c) as f64 * l1s)
        .collect();
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    (peak + sum.ln()).exp().min(1.0)
}

pub(crate) fn normal_coverage(m: u32, s: f64, eps: f64) -> f64 {
    let (lo, hi) = tail_bounds(m, s, eps);
    let mean = m as f64 * s;
    let sd = (m as f64 * s * (1.0 - s)).sqrt();
    let normal = Normal::new(mean, sd).expect("positive standard deviation");
    (normal.cdf(hi as f64 + 0.5) - normal.cdf(lo as f64 - 0.5)).clamp(0.0, 1.0)
}

/// Number of hash functions for which `|c/m - s| <= eps` holds with
/// probability at least `1 - delta`, for this `m` and every larger one.
///
/// Coverage is not monotone in `m` because the tail bounds are rounded, so
/// the result is one past the largest failing `m`. Beyond
/// `ln(2/delta) / (2 eps^2)` Hoeffding guarantees the condition, which bounds
/// the search.
pub fn required_m_binomial(s: f64, eps: f64, delta: f64) -> Result<u32> {
    check_unit("similarity", s)?;
    check_unit("epsilon", eps)?;
    check_unit("delta", delta)?;
    let ceiling = ((2.0 / delta).ln() / (2.0 * eps * eps)).ceil().max(1.0) as u32;
    let target = 1.0 - delta;
    Ok((1..=ceiling)
        .rev()
        .find(|&m| binomial_coverage(m, s, eps) < target)
        .map_or(1, |m| m + 1))
}

pub fn l1_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs())
}

pub fn lp_distance<F: Scalar>(a: &[F], b: &[F], p: F) -> F {
    if p == F::one() {
        return l1_distance(a, b);
    }
    let two = F::one() + F::one();
    if p == two {
        return a
            .iter()
            .zip(b)
            .fold(F::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
            .sqrt();
    }
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y).abs().powf(p))
        .powf(p.recip())
}

/// `exp(-|p - q|_1 / sigma)`.
pub fn laplacian_kernel<F: Scalar>(a: &[F], b: &[F], sigma: F) -> F {
    (-l1_distance(a, b) / sigma).exp()
}

/// Mean over the k ranks of `|reported_i - q| / |truth_i - q|` (0/0 counts as 1).
pub fn approximation_ratio<F: Scalar, P: AsRef<[F]>>(
    reported: &[P],
    truth: &[P],
    query: &[F],
    p_norm: F,
) -> Result<F> {
    if reported.len() != truth.len() || reported.is_empty() {
        return Err(Error::invalid(format!(
            "reported ({}) and true ({}) neighbor lists must have the same non-zero length",
            reported.len(),
            truth.len()
        )));
    }
    let mut total = F::zero();
    for (r, t) in reported.iter().zip(truth) {
        let dr = lp_distance(r.as_ref(), query, p_norm);
        let dt = lp_distance(t.as_ref(), query, p_norm);
        total = total
            + if dt == F::zero() {
                if dr == F::zero() {
                    F::one()
                } else {
                    F::infinity()
                }
            } else {
                dr / dt
            };
    }
    Ok(total / cast(reported.len() as f64))
}

/// Mean pairwise l1 distance, used as the Laplacian kernel width.
///
/// Samples with more than a million pairs are estimated from a fixed-seed
/// sample of a million pairs.
pub fn kernel_width_heuristic<F: Scalar, P: AsRef<[F]>>(points: &[P]) -> Result<F> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("kernel width needs at least two points"));
    }
    let pairs = n * (n - 1) / 2;
    let mut sum = 0.0f64;
    let count = if pairs <= MAX_KERNEL_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                sum += l1_distance(points[i].as_ref(), points[j].as_ref())
                    .to_f64()
                    .unwrap_or(f64::NAN);
            }
        }
        pairs
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b65726e656c);
        for _ in 0..MAX_KERNEL_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            sum += l1_distance(points[i].as_ref(), points[j].as_ref())
                .to_f64()
                .unwrap_or(f64::NAN);
        }
        MAX_KERNEL_PAIRS
    };
    let mean = sum / count as f64;
    if mean == 0.0 {
        log::warn!("all sampled points coincide; kernel width is 0");
    }
    Ok(cast(mean))
}
