//! Approximate nearest-neighbor search over a proximity graph whose edges
//! carry compact random-projection codes.
//!
//! Each directed edge `u -> w` stores which of a fixed family of random
//! reference directions best matches `w - u`. At query time one table of
//! query projections turns those codes into a cheap estimate of the angle
//! between the edge and the direction to the query, so most neighbors can be
//! skipped without computing their exact distance.

pub mod bench;
pub mod builder;
pub mod error;
pub mod graph;
pub mod persist;
pub mod projection;
pub mod routing;
pub mod vecstore;

pub use builder::{robust_prune, BuildParams, FlushStats, PagIndex, PesSet};
pub use error::{Error, Result};
pub use graph::{Graph, LinkView, Links};
pub use projection::{EdgeGeometry, EdgeMeta, ProjectionTable, ReferenceSet};
pub use routing::{Candidate, Neighbor, SearchParams, SearchScratch, SearchStats};
pub use vecstore::{Metric, VecFormat, VectorSet};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/vectors.md")]
    mod vectors {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/routing.md")]
    mod routing {}
    #[doc = include_str!("../../../book/src/construction.md")]
    mod construction {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
    #[doc = include_str!("../../../book/src/measuring.md")]
    mod measuring {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
