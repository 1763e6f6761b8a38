//! Top-k match-count search over keyword sets, with a GPU-style concurrent
//! counting priority queue, LSH adapters for vector similarity and a
//! sequence-similarity pipeline built on ordered n-grams.

pub mod cpq;
pub mod engine;
pub mod error;
pub mod index;
pub mod lsh;
pub mod model;
pub mod sa;
pub mod select;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

pub use cpq::{CountPriorityQueue, Hit, TopKResult};
pub use error::{Error, Result};
pub use engine::{execute_batch, execute_partitioned, BatchRequest, BatchResult, Selector};
pub use index::{build_index, InvertedIndex};
pub use model::{Keyword, ObjectRecord, Query, QueryItem, Schema};

/// Floating-point type used for vector coordinates and hash parameters.
pub trait Scalar: Float + FromPrimitive + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type PStableHashF32 = lsh::PStableHash<f32>;
pub type PStableHashF64 = lsh::PStableHash<f64>;
pub type RbhHashF32 = lsh::RbhHash<f32>;
pub type RbhHashF64 = lsh::RbhHash<f64>;
pub type LshEncoderF32 = lsh::LshEncoder<f32>;
pub type LshEncoderF64 = lsh::LshEncoder<f64>;
