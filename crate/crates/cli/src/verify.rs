//! Cross-checks a stored epoch against the definitions and the brute-force
//! oracle. Each check has a stable name that is reported on failure.

use std::collections::BTreeSet;

use flowlattice::engine::{CounterSnapshot, CounterStore};
use flowlattice::lattice::LatticeDump;
use flowlattice::measurement::{QueryDoc, SupportDump};
use flowlattice::{oracle, BitSet, ConceptLattice, Error, FormalContext, MeasurementSupport};

use crate::state::{partition_csv, RawEpoch};

/// Above this many concepts the cubic Hasse oracle is skipped.
pub const HASSE_ORACLE_LIMIT: usize = 1500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Report {
    pub passed: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

fn fail(check: &str, detail: impl ToString) -> Failure {
    Failure {
        check: check.to_string(),
        detail: detail.to_string(),
    }
}

/// Library invariant errors keep their own name.
fn from_lib(check: &str, e: Error) -> Failure {
    match e {
        Error::Invariant { name, detail } => fail(name, detail),
        other => fail(check, other),
    }
}

fn bits(s: &oracle::Set) -> BitSet {
    s.iter().copied().collect()
}

pub fn verify_raw(raw: &RawEpoch) -> Result<Report, Failure> {
    let mut r = Report::default();
    let pass = |r: &mut Report, name: &str| r.passed.push(name.to_string());

    let ctx = FormalContext::from_json_str(&raw.context).map_err(|e| fail("context-load", e))?;
    ctx.check_consistency().map_err(|e| from_lib("context-consistency", e))?;
    pass(&mut r, "context-consistency");

    let ldump: LatticeDump = serde_json::from_str(&raw.lattice).map_err(|e| fail("lattice-load", e))?;
    let lat = ConceptLattice::from_dump(ctx, &ldump).map_err(|e| from_lib("lattice-load", e))?;
    lat.check_integrity().map_err(|e| from_lib("lattice-integrity", e))?;
    pass(&mut r, "lattice-integrity");
    let ctx = lat.context();

    let concepts = oracle::enumerate_concepts(ctx).map_err(|e| fail("concept-set", e))?;
    let ours: BTreeSet<(BitSet, BitSet)> = lat.concepts().iter().map(|c| (c.extent.clone(), c.intent.clone())).collect();
    let want: BTreeSet<(BitSet, BitSet)> = concepts.iter().map(|(e, i)| (bits(e), bits(i))).collect();
    if ours != want {
        return Err(fail(
            "concept-set",
            format!("{} concepts stored, oracle finds {}", ours.len(), want.len()),
        ));
    }
    pass(&mut r, "concept-set");

    if concepts.len() <= HASSE_ORACLE_LIMIT {
        let edges: BTreeSet<(BitSet, BitSet)> = oracle::hasse_edges(&concepts).iter().map(|(a, b)| (bits(a), bits(b))).collect();
        if lat.hasse_by_intent() != edges {
            return Err(fail("hasse-oracle", "stored precedence links differ from the covering pairs"));
        }
        pass(&mut r, "hasse-oracle");
    } else {
        r.skipped.push(("hasse-oracle".into(), format!("{} concepts > {HASSE_ORACLE_LIMIT}", concepts.len())));
    }

    let sdump: SupportDump = serde_json::from_str(&raw.support).map_err(|e| fail("support-load", e))?;
    let support = MeasurementSupport::from_dump(&lat, &sdump).map_err(|e| from_lib("support-load", e))?;
    support.check_invariants(&lat).map_err(|e| from_lib("support-invariants", e))?;
    pass(&mut r, "support-invariants");

    let qdocs: Vec<QueryDoc> = serde_json::from_str(&raw.queries).map_err(|e| fail("queries-file", e))?;
    if qdocs != sdump.queries {
        return Err(fail("queries-file", "queries.json differs from the queries in support.json"));
    }
    pass(&mut r, "queries-file");

    let fresh = MeasurementSupport::compute(&lat, support.queries().to_vec()).map_err(|e| from_lib("support-recompute", e))?;
    if fresh.normalized(&lat) != support.normalized(&lat) {
        return Err(fail("support-recompute", "stored support differs from a fresh computation"));
    }
    pass(&mut r, "support-recompute");

    for q in support.queries() {
        let direct = bits(&oracle::answer_direct(ctx, q));
        let ours = support.answer_flowset(q.id).map_err(|e| from_lib("answer-exact", e))?;
        if ours != direct {
            return Err(fail(
                "answer-exact",
                format!("{}: grounds give {:?}, direct scan {:?}", q.label, ctx.names_of(&ours), ctx.names_of(&direct)),
            ));
        }
    }
    pass(&mut r, "answer-exact");

    let cells: BTreeSet<BitSet> = oracle::minimal_partition(ctx, support.queries()).iter().map(bits).collect();
    let parts: BTreeSet<BitSet> = support.partition().into_iter().collect();
    if parts != cells || support.grounds().len() != cells.len() {
        return Err(fail(
            "partition-minimal",
            format!("{} grounds, oracle partition has {} cells", support.grounds().len(), cells.len()),
        ));
    }
    pass(&mut r, "partition-minimal");

    if raw.partition != partition_csv(&lat, &support) {
        return Err(fail("partition-file", "partition.csv does not match support.json"));
    }
    pass(&mut r, "partition-file");

    let snap: CounterSnapshot = serde_json::from_str(&raw.counters).map_err(|e| fail("counters", e))?;
    let store = CounterStore::restore(&support, ctx.num_flows(), &snap).map_err(|e| fail("counters", e))?;
    if store.snapshot() != snap {
        return Err(fail("counters", "counter snapshot does not round-trip"));
    }
    let want = match store.mode() {
        flowlattice::CounterMode::Minimal => support.grounds().len(),
        flowlattice::CounterMode::Baseline => ctx.num_flows(),
    };
    if store.counters_in_use() != want || snap.values.len() != want {
        return Err(fail("counters", format!("{} registers for {want} owners", snap.values.len())));
    }
    pass(&mut r, "counters");
    Ok(r)
}
