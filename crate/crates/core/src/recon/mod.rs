//! Reassembly of the client graph from filtered building blocks.

mod distance;
mod order;
mod search;

pub use distance::{gradient_distance, is_exact, DistanceResult, EXACT_TOL, MAX_LABEL_PERMUTATIONS};
pub use order::{order_blocks, order_by_scores, rooted_key, RankedBlock};
pub use search::{branch, do_dfs, select_dangling, SearchOptions, SearchResult, SearchStats};
