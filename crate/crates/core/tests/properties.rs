mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::*;
use flowlattice::engine::CounterMode;
use flowlattice::lattice::{rebuild_after_removal, Removal};
use flowlattice::oracle;
use flowlattice::{BitSet, ConceptLattice, CounterStore, MeasurementSupport, PacketEvent};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn subset_of(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> BitSet {
    (0..n).filter(|_| rng.gen_bool(0.4)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn galois_connection(seed in any::<u64>(), flows in 1usize..20, fields in 1usize..12) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, flows, fields, 0.5);
        for _ in 0..20 {
            let a = subset_of(&mut r, ctx.num_flows());
            let b = subset_of(&mut r, ctx.num_matchfields());
            let a_img = ctx.image_of_flows(&a).unwrap();
            let b_img = ctx.image_of_matchfields(&b).unwrap();
            prop_assert_eq!(b.is_subset(&a_img), a.is_subset(&b_img));
        }
    }

    #[test]
    fn closure_laws(seed in any::<u64>(), flows in 1usize..20, fields in 1usize..12) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, flows, fields, 0.5);
        for _ in 0..20 {
            let b = subset_of(&mut r, ctx.num_matchfields());
            let mut bigger = b.clone();
            bigger.union_with(&subset_of(&mut r, ctx.num_matchfields()));
            let c = ctx.close_matchfields(&b).unwrap();
            prop_assert!(b.is_subset(&c));
            prop_assert_eq!(&ctx.close_matchfields(&c).unwrap(), &c);
            prop_assert!(c.is_subset(&ctx.close_matchfields(&bigger).unwrap()));

            let a = subset_of(&mut r, ctx.num_flows());
            let ca = ctx.close_flows(&a).unwrap();
            prop_assert!(a.is_subset(&ca));
            prop_assert_eq!(&ctx.close_flows(&ca).unwrap(), &ca);
        }
    }

    #[test]
    fn build_matches_oracle(seed in any::<u64>(), flows in 1usize..13, fields in 1usize..10, density in 0.2f64..0.8) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, flows, fields, density);
        let want = oracle::enumerate_concepts(&ctx).unwrap();
        let lat = ConceptLattice::build(ctx);
        lat.check_integrity().unwrap();
        let got: BTreeSet<(BitSet, BitSet)> = lat.concepts().iter().map(|c| (c.extent.clone(), c.intent.clone())).collect();
        let want_bits: BTreeSet<(BitSet, BitSet)> = want.iter().map(|(e, i)| (to_bits(e), to_bits(i))).collect();
        prop_assert_eq!(got, want_bits);
        let edges: BTreeSet<(BitSet, BitSet)> = oracle::hasse_edges(&want).iter().map(|(a, b)| (to_bits(a), to_bits(b))).collect();
        prop_assert_eq!(lat.hasse_by_intent(), edges);
    }

    #[test]
    fn meet_and_join_are_order_bounds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, 10, 8, 0.5);
        let lat = ConceptLattice::build(ctx);
        let n = lat.len();
        for _ in 0..20 {
            let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
            let m = lat.meet(a, b).unwrap();
            let j = lat.join(a, b).unwrap();
            let (ca, cb) = (&lat.concepts()[a], &lat.concepts()[b]);
            prop_assert_eq!(&lat.concepts()[m].extent, &ca.extent.intersection(&cb.extent));
            prop_assert_eq!(&lat.concepts()[j].intent, &ca.intent.intersection(&cb.intent));
            prop_assert!(lat.leq(m, a).unwrap() && lat.leq(m, b).unwrap());
            prop_assert!(lat.leq(a, j).unwrap() && lat.leq(b, j).unwrap());
        }
    }

    #[test]
    fn incremental_matches_batch(seed in any::<u64>(), flows in 1usize..25, fields in 2usize..12, density in 0.2f64..0.8) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, flows, fields, density);
        let batch = ConceptLattice::build(ctx.clone());
        for _ in 0..3 {
            let mut order: Vec<_> = ctx.flows().to_vec();
            order.shuffle(&mut r);
            let mut inc = ConceptLattice::build(no_flows(&ctx));
            for f in &order {
                inc.insert_flow(&f.name, f.matchfields.clone()).unwrap();
            }
            inc.check_integrity().unwrap();
            prop_assert_eq!(inc.intent_family(), batch.intent_family());
            prop_assert_eq!(inc.hasse_by_intent(), batch.hasse_by_intent());
        }
    }

    #[test]
    fn support_update_matches_recompute(seed in any::<u64>(), flows in 2usize..25, fields in 2usize..10, nq in 0usize..10) {
        let mut r = rng(seed);
        let full = random_context(&mut r, flows, fields, 0.5);
        let queries = random_queries(&mut r, &full, nq, 3);
        let split = r.gen_range(0..=full.num_flows());
        let mut start = no_flows(&full);
        for f in &full.flows()[..split] {
            start.add_flow(&f.name, f.matchfields.clone()).unwrap();
        }
        let mut lat = ConceptLattice::build(start);
        let mut support = MeasurementSupport::compute(&lat, queries.clone()).unwrap();
        for f in &full.flows()[split..] {
            let report = lat.add_flow(&f.name, f.matchfields.clone(), &mut support).unwrap();
            support.check_invariants(&lat).unwrap();
            let sig_zero = queries.iter().all(|q| !q.matchfields.is_subset(&f.matchfields));
            prop_assert_eq!(report.ground.is_none(), sig_zero);
        }
        lat.check_integrity().unwrap();
        let fresh = MeasurementSupport::compute(&lat, queries).unwrap();
        prop_assert_eq!(support.normalized(&lat), fresh.normalized(&lat));
    }

    #[test]
    fn answers_and_minimality_on_random_contexts(seed in any::<u64>(), flows in 1usize..40, fields in 2usize..14, nq in 0usize..15) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, flows, fields, 0.45);
        let queries = random_queries(&mut r, &ctx, nq, 3);
        let lat = ConceptLattice::build(ctx);
        let s = MeasurementSupport::compute(&lat, queries.clone()).unwrap();
        s.check_invariants(&lat).unwrap();
        let ctx = lat.context();
        for q in &queries {
            let direct = to_bits(&oracle::answer_direct(ctx, q));
            prop_assert_eq!(s.answer_flowset(q.id).unwrap(), direct.clone());
            for f in 0..ctx.num_flows() {
                if let Some(g) = s.ground_of(f).unwrap() {
                    let below = lat.leq(g, s.target(q.id).unwrap()).unwrap();
                    prop_assert_eq!(below, direct.contains(f));
                }
            }
        }
        let cells: BTreeSet<BitSet> = oracle::minimal_partition(ctx, &queries).iter().map(to_bits).collect();
        let ours: BTreeSet<BitSet> = s.partition().into_iter().collect();
        prop_assert_eq!(s.grounds().len(), cells.len());
        prop_assert_eq!(ours, cells);
    }

    #[test]
    fn removal_equals_fresh_build(seed in any::<u64>(), flows in 2usize..15) {
        let mut r = rng(seed);
        let ctx = random_context(&mut r, flows, 8, 0.5);
        prop_assume!(ctx.num_flows() > 0);
        let queries = random_queries(&mut r, &ctx, 5, 2);
        let lat = ConceptLattice::build(ctx.clone());
        let s = MeasurementSupport::compute(&lat, queries.clone()).unwrap();
        let victim = ctx.flows()[r.gen_range(0..ctx.num_flows())].name.clone();
        let (lat2, s2) = rebuild_after_removal(&lat, &s, &Removal::Flow(victim.clone())).unwrap();
        let mut reduced = ctx.clone();
        reduced.remove_flow(ctx.flow_id(&victim).unwrap()).unwrap();
        let direct = ConceptLattice::build(reduced);
        prop_assert_eq!(lat2.intent_family(), direct.intent_family());
        s2.check_invariants(&lat2).unwrap();
    }
}

#[test]
fn concurrent_processing_equals_sequential() {
    let (ctx, queries) = bench_instance(7, 150, 30, 0.7);
    let lat = ConceptLattice::build(ctx);
    let s = MeasurementSupport::compute(&lat, queries).unwrap();
    let n = lat.context().num_flows();
    let mut r = rng(99);
    let events: Vec<PacketEvent> = (0..40_000)
        .map(|t| PacketEvent { flow: r.gen_range(0..n + 3), size: r.gen_range(40..1500), tick: t })
        .collect();

    let seq = CounterStore::install(&s, n, CounterMode::Minimal);
    events.iter().for_each(|e| seq.process(e));

    let par = Arc::new(CounterStore::install(&s, n, CounterMode::Minimal));
    let chunks: Vec<Vec<PacketEvent>> = events.chunks(5000).map(|c| c.to_vec()).collect();
    let handles: Vec<_> = chunks
        .into_iter()
        .map(|chunk| {
            let store = Arc::clone(&par);
            std::thread::spawn(move || chunk.iter().for_each(|e| store.process(e)))
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(seq.values(), par.values());
    assert_eq!(seq.summary(), par.summary());
}

#[test]
fn insertion_work_tracks_lattice_size() {
    // op count per insertion stays within |C| * (|H| + 2) of the lattice it
    // walks; a gross regression (e.g. rescanning per concept) would blow it
    let (ctx, _) = bench_instance(3, 200, 0, 0.5);
    let mut lat = ConceptLattice::build(no_flows(&ctx));
    let h = ctx.num_matchfields() as u64;
    for f in ctx.flows() {
        let before_ops = lat.op_count();
        let before_len = lat.len() as u64;
        lat.insert_flow(&f.name, f.matchfields.clone()).unwrap();
        let spent = lat.op_count() - before_ops;
        let size = lat.len() as u64;
        assert!(spent <= size.max(before_len) * (h + 2), "{} spent {spent} on {size} concepts", f.name);
    }
}
