//! The eight-flow running example used throughout the unit tests.

use crate::bitset::BitSet;
use crate::context::FormalContext;
use crate::measurement::Query;

pub const EXAMPLE_CSV: &str = include_str!("../data/example.csv");
pub const EXAMPLE_QUERIES: &str = include_str!("../data/example_queries.json");

pub fn example() -> FormalContext {
    FormalContext::from_csv_str(EXAMPLE_CSV).unwrap()
}

pub fn example_queries(ctx: &FormalContext) -> Vec<Query> {
    Query::load_json_str(EXAMPLE_QUERIES, ctx).unwrap()
}

/// Matchfield set from 1-based `h` numbers (`h1` is id 0).
pub fn hs(numbers: &[usize]) -> BitSet {
    numbers.iter().map(|n| n - 1).collect()
}

pub fn fs(ids: &[usize]) -> BitSet {
    ids.iter().copied().collect()
}
