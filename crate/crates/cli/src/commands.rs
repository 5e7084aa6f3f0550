use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowlattice::benchgen::{self, BenchSpec};
use flowlattice::context::{field_kind_of, FlowDoc};
use flowlattice::engine::{parse_events, MigrationReport};
use flowlattice::lattice::{rebuild_after_removal, Removal};
use flowlattice::{
    BitSet, ConceptId, ConceptLattice, CounterMode, CounterStore, FlowAddReport, FormalContext, MeasurementSupport,
    Query,
};

use crate::state::{self, Lock, Snapshot};
use crate::verify;

/// How a command that ran to completion went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    VerifyFailed,
}

fn read_input(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_context(path: &Path, reject_nested: bool) -> Result<FormalContext> {
    let text = read_input(path)?;
    let ctx = FormalContext::from_str_auto(&text).with_context(|| format!("loading context {}", path.display()))?;
    if !reject_nested || ctx.rejects_nested() {
        return Ok(ctx);
    }
    let mut doc = ctx.to_doc();
    doc.reject_nested = true;
    let strict = serde_json::to_string(&doc)?;
    FormalContext::from_json_str(&strict).with_context(|| format!("loading context {}", path.display()))
}

pub fn load_queries(path: Option<&Path>, ctx: &FormalContext) -> Result<Vec<Query>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = read_input(path)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Query::load_json_str(&text, ctx).with_context(|| format!("loading queries {}", path.display()))
}

fn intent_str(lat: &ConceptLattice, c: ConceptId) -> String {
    format!("{{{}}}", lat.context().labels_of(&lat.concepts()[c].intent).join(", "))
}

fn status_line(lat: &ConceptLattice, s: &MeasurementSupport, store: &CounterStore) -> String {
    format!(
        "targets={} projections={} grounds={} flows={} matchfields={} queries={} mode={} installed={}",
        s.target_set().len(),
        s.projections().len(),
        s.grounds().len(),
        lat.context().num_flows(),
        lat.context().num_matchfields(),
        s.queries().len(),
        store.mode(),
        store.counters_in_use()
    )
}

pub struct BuildArgs<'a> {
    pub context: &'a Path,
    pub queries: Option<&'a Path>,
    pub state: &'a Path,
    pub mode: CounterMode,
    pub reject_nested: bool,
    pub force: bool,
}

pub fn build(a: BuildArgs) -> Result<Outcome> {
    let ctx = load_context(a.context, a.reject_nested)?;
    let queries = load_queries(a.queries, &ctx)?;
    let _lock = Lock::acquire(a.state)?;
    let epoch = match state::current_epoch(a.state)? {
        Some(_) if !a.force => bail!("{} already holds a state; pass --force to start a new epoch", a.state.display()),
        Some(e) => e + 1,
        None => 0,
    };
    let lattice = ConceptLattice::build(ctx);
    let support = MeasurementSupport::compute(&lattice, queries)?;
    let counters = CounterStore::install(&support, lattice.context().num_flows(), a.mode);
    let snap = Snapshot {
        epoch,
        lattice,
        support,
        counters,
    };
    let dir = state::write(a.state, &snap, "build")?;
    println!("concepts={} counters={}", snap.lattice.len(), snap.support.grounds().len());
    println!("{}", status_line(&snap.lattice, &snap.support, &snap.counters));
    println!("wrote {}", dir.display());
    Ok(Outcome::Ok)
}

fn print_add_report(lat: &ConceptLattice, s: &MeasurementSupport, r: &FlowAddReport) {
    let ctx = lat.context();
    let name = &ctx.flows()[r.flow].name;
    let ground = r.ground.map_or("none".to_string(), |g| format!("c{g}"));
    println!(
        "flow {name}: modified={} new={} retargeted={} eclipsed={} ground={ground}",
        r.modified.len(),
        r.created.len(),
        r.retargeted.len(),
        r.eclipsed.len()
    );
    for &c in &r.modified {
        println!("  modified c{c} {}", intent_str(lat, c));
    }
    for &(c, g) in &r.created {
        println!("  new c{c} {} genitor c{g} {}", intent_str(lat, c), intent_str(lat, g));
    }
    for &(q, from, to) in &r.retargeted {
        println!("  retarget {} c{from} -> c{to}", s.queries()[q].label);
    }
    for &(g, c) in &r.eclipsed {
        println!("  eclipse c{g} -> c{c}");
    }
    match r.ground {
        Some(g) => println!("  ground {name} -> c{g} {}", intent_str(lat, g)),
        None => println!("  ground {name} -> none (matches no query)"),
    }
}

fn print_migration(m: &MigrationReport, store: &CounterStore) {
    println!(
        "counters: preserved={} archived={} fresh={} installed={} epoch={}",
        m.preserved.len(),
        m.archived.len(),
        m.fresh.len(),
        store.counters_in_use(),
        store.epoch()
    );
}

/// Rebuilds lattice and support from scratch and lists every difference.
pub fn diff_against_rebuild(lat: &ConceptLattice, s: &MeasurementSupport) -> Result<Vec<String>> {
    let mut diffs = Vec::new();
    if let Err(e) = lat.check_integrity() {
        diffs.push(format!("lattice integrity: {e}"));
    }
    if let Err(e) = s.check_invariants(lat) {
        diffs.push(format!("support invariants: {e}"));
    }
    let fresh = ConceptLattice::build(lat.context().clone());
    let fresh_support = MeasurementSupport::compute(&fresh, s.queries().to_vec())?;
    let (a, b) = (lat.intent_family(), fresh.intent_family());
    if a != b {
        diffs.push(format!(
            "concepts: {} only incremental, {} only rebuilt",
            a.difference(&b).count(),
            b.difference(&a).count()
        ));
    }
    if lat.hasse_by_intent() != fresh.hasse_by_intent() {
        diffs.push("precedence links differ".to_string());
    }
    let (x, y) = (s.normalized(lat), fresh_support.normalized(&fresh));
    if x.targets != y.targets {
        diffs.push("targets differ".to_string());
    }
    if x.projections != y.projections {
        diffs.push("projections differ".to_string());
    }
    if x.grounds != y.grounds {
        diffs.push("grounds differ".to_string());
    }
    if x.vectors != y.vectors {
        diffs.push("query vectors differ".to_string());
    }
    if x.mu != y.mu {
        diffs.push("flow-to-ground mapping differs".to_string());
    }
    Ok(diffs)
}

pub struct AddFlowArgs<'a> {
    pub state: &'a Path,
    pub name: Option<&'a str>,
    pub matches: &'a [String],
    pub batch: Option<&'a Path>,
    pub verify: bool,
}

pub fn add_flow(a: AddFlowArgs) -> Result<Outcome> {
    let mut flows: Vec<FlowDoc> = Vec::new();
    if let Some(name) = a.name {
        flows.push(FlowDoc {
            name: name.to_string(),
            matchfields: a.matches.to_vec(),
        });
    } else if !a.matches.is_empty() {
        bail!("--match needs --name");
    }
    if let Some(path) = a.batch {
        let text = read_input(path)?;
        let more: Vec<FlowDoc> = serde_json::from_str(&text).with_context(|| format!("reading flows from {}", path.display()))?;
        flows.extend(more);
    }
    if flows.is_empty() {
        bail!("nothing to add: give --name/--match or --batch");
    }

    let _lock = Lock::acquire(a.state)?;
    let Snapshot {
        epoch,
        mut lattice,
        mut support,
        mut counters,
    } = state::load(a.state)?;
    let old_ctx = lattice.context().clone();
    let old_support = support.clone();

    for flow in &flows {
        for label in &flow.matchfields {
            if lattice.context().matchfield_id(label).is_err() {
                let h = lattice.add_matchfield(label, &field_kind_of(label), Some(&mut support))?;
                println!("new matchfield h{} `{label}`", h + 1);
            }
        }
        let m: BitSet = lattice.context().matchfield_set(&flow.matchfields)?;
        let report = lattice
            .add_flow(&flow.name, m, &mut support)
            .with_context(|| format!("adding flow `{}`; state left unchanged", flow.name))?;
        print_add_report(&lattice, &support, &report);
    }

    if a.verify {
        let diffs = diff_against_rebuild(&lattice, &support)?;
        if !diffs.is_empty() {
            for d in &diffs {
                println!("verify: {d}");
            }
            println!("verify: FAILED ({} differences); state left unchanged", diffs.len());
            return Ok(Outcome::VerifyFailed);
        }
        println!("verify: ok (incremental result equals a rebuild from scratch)");
    }

    let migration = counters.reinstall_on_change(&old_ctx, &old_support, lattice.context(), &support);
    print_migration(&migration, &counters);
    let snap = Snapshot {
        epoch: epoch + 1,
        lattice,
        support,
        counters,
    };
    let dir = state::write(a.state, &snap, "add-flow")?;
    println!("concepts={} counters={}", snap.lattice.len(), snap.support.grounds().len());
    println!("wrote {}", dir.display());
    Ok(Outcome::Ok)
}

pub fn remove(state_dir: &Path, removal: Removal) -> Result<Outcome> {
    let _lock = Lock::acquire(state_dir)?;
    let Snapshot {
        epoch,
        lattice,
        support,
        mut counters,
    } = state::load(state_dir)?;
    let (new_lat, new_support) = rebuild_after_removal(&lattice, &support, &removal)?;
    let migration = counters.reinstall_on_change(lattice.context(), &support, new_lat.context(), &new_support);
    match &removal {
        Removal::Flow(n) => println!("removed flow {n}; lattice rebuilt"),
        Removal::Query(q) => println!("removed query {q}; support rebuilt"),
    }
    print_migration(&migration, &counters);
    let snap = Snapshot {
        epoch: epoch + 1,
        lattice: new_lat,
        support: new_support,
        counters,
    };
    let dir = state::write(state_dir, &snap, "remove")?;
    println!("concepts={} counters={}", snap.lattice.len(), snap.support.grounds().len());
    println!("wrote {}", dir.display());
    Ok(Outcome::Ok)
}

pub struct SimulateArgs<'a> {
    pub state: &'a Path,
    pub events: &'a Path,
    pub mode: Option<CounterMode>,
    pub out: Option<&'a Path>,
    pub summary: Option<&'a Path>,
    pub resume: bool,
    pub record: bool,
}

pub fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let lock = if a.record { Some(Lock::acquire(a.state)?) } else { None };
    let snap = state::load(a.state)?;
    let ctx = snap.lattice.context();
    let stored = snap.counters.mode();
    let mode = a.mode.unwrap_or(stored);
    if (a.resume || a.record) && mode != stored {
        bail!("the stored counters are in {stored} mode; --resume/--record need --mode {stored}");
    }
    let text = read_input(a.events)?;
    let events = parse_events(&text, ctx)?;
    let store = if a.resume || a.record {
        snap.counters
    } else {
        CounterStore::install(&snap.support, ctx.num_flows(), mode)
    };
    for ev in &events {
        match ev {
            Ok(e) => store.process(e),
            Err(_) => store.record_drop(),
        }
    }
    let mut csv = String::from("query,packets,bytes,num_counters_touched\n");
    for q in snap.support.queries() {
        let stats = store.query_stats(ctx, &snap.support, q.id)?;
        let totals = store.query_totals(ctx, &snap.support, q.id)?;
        csv.push_str(&format!("{},{},{},{}\n", q.label, totals.packets, totals.bytes, stats.counters_touched));
    }
    let summary = serde_json::to_string_pretty(&store.summary())?;
    match a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    match a.summary {
        Some(p) => fs::write(p, format!("{summary}\n")).with_context(|| format!("writing {}", p.display()))?,
        None if a.out.is_some() => println!("{summary}"),
        None => eprintln!("{summary}"),
    }
    if a.record {
        let next = Snapshot {
            epoch: snap.epoch + 1,
            lattice: snap.lattice,
            support: snap.support,
            counters: store,
        };
        let dir = state::write(a.state, &next, "simulate")?;
        eprintln!("recorded counters in {}", dir.display());
    }
    drop(lock);
    Ok(Outcome::Ok)
}

pub fn verify(state_dir: &Path, epoch: Option<u64>) -> Result<Outcome> {
    let raw = state::read_raw(state_dir, epoch)?;
    match verify::verify_raw(&raw) {
        Ok(report) => {
            for name in &report.passed {
                println!("ok {name}");
            }
            for (name, why) in &report.skipped {
                println!("skipped {name} ({why})");
            }
            println!("verify: ok ({} checks) {}", report.passed.len(), raw.dir.display());
            Ok(Outcome::Ok)
        }
        Err(f) => {
            println!("verify: FAILED invariant={} {}", f.check, f.detail);
            Ok(Outcome::VerifyFailed)
        }
    }
}

pub fn show(state_dir: &Path) -> Result<Outcome> {
    let snap = state::load(state_dir)?;
    println!("epoch={} concepts={} counters={}", snap.epoch, snap.lattice.len(), snap.support.grounds().len());
    println!("{}", status_line(&snap.lattice, &snap.support, &snap.counters));
    print!("{}", state::partition_csv(&snap.lattice, &snap.support));
    Ok(Outcome::Ok)
}

pub struct SpecOverrides {
    pub spec: Option<PathBuf>,
    pub flows: Option<usize>,
    pub queries: Option<usize>,
    pub pct: Option<f64>,
    pub seed: Option<u64>,
}

impl SpecOverrides {
    pub fn resolve(&self) -> Result<BenchSpec> {
        let mut spec = match &self.spec {
            Some(p) => BenchSpec::load(p).with_context(|| format!("loading spec {}", p.display()))?,
            None => BenchSpec::trace_default(),
        };
        if let Some(n) = self.flows {
            spec.num_flows = n;
        }
        if let Some(n) = self.queries {
            spec.num_queries = n;
        }
        if let Some(p) = self.pct {
            spec.wildcard_pct = p;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn gen(o: &SpecOverrides, out: &Path) -> Result<Outcome> {
    let spec = o.resolve()?;
    let ctx = benchgen::gen_flows(&spec)?;
    let queries = benchgen::gen_queries(&spec, &ctx)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("context.json"), ctx.to_json_string())?;
    fs::write(out.join("queries.json"), state::queries_json(&queries, &ctx))?;
    fs::write(out.join("spec.json"), spec.to_json_string())?;
    println!(
        "flows={} matchfields={} queries={} seed={}",
        ctx.num_flows(),
        ctx.num_matchfields(),
        queries.len(),
        spec.seed
    );
    println!("wrote {}", out.display());
    Ok(Outcome::Ok)
}

/// `wildcard_pct=0.1,0.5` or `0.1,0.5`.
pub fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let list = s.strip_prefix("wildcard_pct=").unwrap_or(s);
    list.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad wildcard percentage `{p}`")))
        .collect()
}

/// `1,2,5` or an inclusive range `1..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range `{s}`");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed `{x}`")))
        .collect()
}

pub fn parse_counts(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().with_context(|| format!("bad query count `{x}`")))
        .collect()
}

pub struct BenchArgs<'a> {
    pub spec: SpecOverrides,
    pub query_counts: Option<Vec<usize>>,
    pub sweep: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<&'a Path>,
    pub sweep_out: Option<&'a Path>,
}

pub fn bench(a: BenchArgs) -> Result<Outcome> {
    let spec = a.spec.resolve()?;
    let counts = a.query_counts.unwrap_or_else(|| vec![spec.num_queries]);
    let pcts = a.sweep.unwrap_or_else(|| vec![spec.wildcard_pct]);
    let seeds = a.seeds.unwrap_or_else(|| vec![spec.seed]);
    let rows = benchgen::sweep(&spec, &seeds, &counts, &pcts)?;

    let mut csv = String::from("N_Q,wildcard_pct,N_c,|F|,seed\n");
    let mut violations = Vec::new();
    let mut means: BTreeMap<(usize, u32), (usize, usize)> = BTreeMap::new();
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.num_queries, r.wildcard_pct(), r.num_counters, r.num_flows, r.seed));
        if r.num_counters > r.num_flows || r.num_counters != r.distinct_signatures {
            violations.push(format!(
                "seed {} N_Q={} pct={}: N_c={} |F|={} signatures={}",
                r.seed,
                r.num_queries,
                r.wildcard_pct(),
                r.num_counters,
                r.num_flows,
                r.distinct_signatures
            ));
        }
        let e = means.entry((r.num_queries, r.wildcard_pct_milli)).or_default();
        e.0 += r.num_counters;
        e.1 += 1;
    }
    match a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    if let Some(p) = a.sweep_out {
        fs::write(p, benchgen::sweep_csv(&rows)).with_context(|| format!("writing {}", p.display()))?;
    }
    for ((nq, milli), (sum, n)) in &means {
        eprintln!("mean N_Q={nq} wildcard_pct={} N_c={:.1} over {n} seeds", *milli as f64 / 1000.0, *sum as f64 / *n as f64);
    }
    if violations.is_empty() {
        return Ok(Outcome::Ok);
    }
    for v in &violations {
        eprintln!("bound violated: {v}");
    }
    Ok(Outcome::VerifyFailed)
}
