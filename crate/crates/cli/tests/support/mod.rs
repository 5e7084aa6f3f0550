#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use flowlattice::benchgen::{gen_flows, gen_queries, BenchSpec};
use flowlattice::{BitSet, FormalContext, Query};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EXAMPLE_CSV: &str = include_str!("../../../core/data/example.csv");
pub const EXAMPLE_QUERIES: &str = include_str!("../../../core/data/example_queries.json");

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

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random incidence; empty and repeated rows are skipped, nested rows kept.
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

pub fn no_flows(ctx: &FormalContext) -> FormalContext {
    let mut out = FormalContext::new();
    out.set_reject_nested(ctx.rejects_nested());
    for m in ctx.matchfields() {
        out.add_matchfield(&m.label, &m.field_kind).unwrap();
    }
    out
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlattice"))
        .args(args)
        .env_remove("FLOWLAT_STATE")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the running example's context and queries into `dir`.
pub fn write_example(dir: &Path) -> (String, String) {
    let c = dir.join("example.csv");
    let q = dir.join("queries.json");
    std::fs::write(&c, EXAMPLE_CSV).unwrap();
    std::fs::write(&q, EXAMPLE_QUERIES).unwrap();
    (c.display().to_string(), q.display().to_string())
}

/// Every file under `dir`, with contents, for before/after comparisons.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
