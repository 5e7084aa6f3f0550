//! Brute-force reference computations written directly from the definitions.
//!
//! Nothing here touches the lattice or measurement code; rows are copied out
//! of the context into plain ordered sets and everything is recomputed by
//! scanning.

use std::collections::{BTreeMap, BTreeSet};

use crate::context::FormalContext;
use crate::error::{Error, Result};
use crate::measurement::Query;

pub type Set = BTreeSet<usize>;

/// Flow count up to which concepts are enumerated over all flow subsets.
pub const POWERSET_LIMIT: usize = 16;
/// Largest concept family the intersection-closure path will build.
pub const FAMILY_LIMIT: usize = 2_000_000;

fn rows(ctx: &FormalContext) -> Vec<Set> {
    ctx.flows().iter().map(|f| f.matchfields.iter().collect()).collect()
}

fn universe(ctx: &FormalContext) -> Set {
    (0..ctx.num_matchfields()).collect()
}

fn extent(rows: &[Set], intent: &Set) -> Set {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| intent.is_subset(r))
        .map(|(f, _)| f)
        .collect()
}

fn intent(rows: &[Set], all: &Set, flows: &Set) -> Set {
    let mut acc = all.clone();
    for &f in flows {
        acc = acc.intersection(&rows[f]).copied().collect();
    }
    acc
}

/// All `(extent, intent)` pairs of `ctx`.
pub fn enumerate_concepts(ctx: &FormalContext) -> Result<BTreeSet<(Set, Set)>> {
    let rows = rows(ctx);
    let all = universe(ctx);
    let intents: BTreeSet<Set> = if rows.len() <= POWERSET_LIMIT {
        (0u64..(1u64 << rows.len()))
            .map(|mask| {
                let flows: Set = (0..rows.len()).filter(|f| mask & (1 << f) != 0).collect();
                intent(&rows, &all, &flows)
            })
            .collect()
    } else {
        // H plus every intersection of flow rows
        let mut family: BTreeSet<Set> = BTreeSet::from([all.clone()]);
        for r in &rows {
            let fresh: Vec<Set> = family
                .iter()
                .map(|i| i.intersection(r).copied().collect())
                .collect();
            family.extend(fresh);
            if family.len() > FAMILY_LIMIT {
                return Err(Error::SizeGuard(format!(
                    "more than {FAMILY_LIMIT} concepts"
                )));
            }
        }
        family
    };
    Ok(intents
        .into_iter()
        .map(|i| (extent(&rows, &i), i))
        .collect())
}

/// Covering pairs `(upper intent, lower intent)` of the concept order,
/// computed by comparing every pair of concepts.
pub fn hasse_edges(concepts: &BTreeSet<(Set, Set)>) -> BTreeSet<(Set, Set)> {
    let list: Vec<&(Set, Set)> = concepts.iter().collect();
    let strictly_below = |a: &(Set, Set), b: &(Set, Set)| a.0.len() < b.0.len() && a.0.is_subset(&b.0);
    let mut edges = BTreeSet::new();
    for lo in &list {
        for hi in &list {
            if strictly_below(lo, hi)
                && !list.iter().any(|mid| strictly_below(lo, mid) && strictly_below(mid, hi))
            {
                edges.insert((hi.1.clone(), lo.1.clone()));
            }
        }
    }
    edges
}

/// `sig(f)[i]` is true iff query `i` is contained in `f`'s matchfields.
pub fn signatures(ctx: &FormalContext, queries: &[Query]) -> Vec<Vec<bool>> {
    let rows = rows(ctx);
    let qs: Vec<Set> = queries.iter().map(|q| q.matchfields.iter().collect()).collect();
    rows.iter()
        .map(|r| qs.iter().map(|q| q.is_subset(r)).collect())
        .collect()
}

pub fn signature_string(sig: &[bool]) -> String {
    sig.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Flows grouped by identical non-empty signature, each cell sorted and the
/// cells ordered by their smallest flow.
pub fn minimal_partition(ctx: &FormalContext, queries: &[Query]) -> Vec<Set> {
    let mut cells: BTreeMap<Vec<bool>, Set> = BTreeMap::new();
    for (f, sig) in signatures(ctx, queries).into_iter().enumerate() {
        if sig.iter().any(|&b| b) {
            cells.entry(sig).or_default().insert(f);
        }
    }
    let mut out: Vec<Set> = cells.into_values().collect();
    out.sort_by_key(|c| *c.iter().next().expect("non-empty cell"));
    out
}

/// `{ f | q ⊆ f′ }` by scanning the rows.
pub fn answer_direct(ctx: &FormalContext, query: &Query) -> Set {
    let q: Set = query.matchfields.iter().collect();
    extent(&rows(ctx), &q)
}
