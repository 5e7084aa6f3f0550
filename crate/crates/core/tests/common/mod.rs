#![allow(dead_code)]

use flowlattice::benchgen::{gen_flows, gen_queries, BenchSpec};
use flowlattice::oracle::Set;
use flowlattice::{BitSet, FormalContext, Query};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EXAMPLE_CSV: &str = include_str!("../../data/example.csv");
pub const EXAMPLE_QUERIES: &str = include_str!("../../data/example_queries.json");

pub fn example() -> FormalContext {
    FormalContext::from_csv_str(EXAMPLE_CSV).unwrap()
}

pub fn example_queries(ctx: &FormalContext) -> Vec<Query> {
    Query::load_json_str(EXAMPLE_QUERIES, ctx).unwrap()
}

/// 1-based `h` numbers to ids.
pub fn hs(numbers: &[usize]) -> BitSet {
    numbers.iter().map(|n| n - 1).collect()
}

pub fn fs(ids: &[usize]) -> BitSet {
    ids.iter().copied().collect()
}

pub fn to_bits(s: &Set) -> BitSet {
    s.iter().copied().collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random incidence with the given density; empty and repeated rows are
/// skipped, so fewer than `flows` rows may come out. Nested rows are kept.
pub fn random_context(rng: &mut ChaCha8Rng, flows: usize, fields: usize, density: f64) -> FormalContext {
    let mut ctx = FormalContext::new();
    for h in 0..fields {
        ctx.add_matchfield(&format!("m{h}"), "").unwrap();
    }
    for i in 0..flows {
        let row: BitSet = (0..fields).filter(|_| rng.gen_bool(density)).collect();
        let _ = ctx.add_flow(&format!("f{i}"), row);
    }
    ctx
}

/// Queries of one to `max_len` random matchfields; some may match nothing.
pub fn random_queries(rng: &mut ChaCha8Rng, ctx: &FormalContext, n: usize, max_len: usize) -> Vec<Query> {
    let h = ctx.num_matchfields();
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=max_len.min(h));
            let mut ids: Vec<usize> = (0..h).collect();
            ids.shuffle(rng);
            let set: BitSet = ids.into_iter().take(len).collect();
            Query::new(i, &format!("q{}", i + 1), set, ctx).unwrap()
        })
        .collect()
}

/// A generated table with queries drawn from it.
pub fn bench_instance(seed: u64, flows: usize, queries: usize, pct: f64) -> (FormalContext, Vec<Query>) {
    let spec = BenchSpec {
        num_flows: flows,
        num_queries: queries,
        wildcard_pct: pct,
        seed,
        ..BenchSpec::trace_default()
    };
    let ctx = gen_flows(&spec).unwrap();
    let qs = gen_queries(&spec, &ctx).unwrap();
    (ctx, qs)
}

/// Copy of `ctx` holding only its matchfields.
pub fn no_flows(ctx: &FormalContext) -> FormalContext {
    let mut out = FormalContext::new();
    out.set_reject_nested(ctx.rejects_nested());
    for m in ctx.matchfields() {
        out.add_matchfield(&m.label, &m.field_kind).unwrap();
    }
    out
}
