//! Software switch counters.
//!
//! In minimal mode one register is allocated per ground and every flow holds
//! a reference to its ground's register (or none when no query covers it). In
//! baseline mode every flow gets its own register. Registers are atomic, so
//! packet feeders can share a `&CounterStore`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::context::FormalContext;
use crate::error::{Error, Result};
use crate::lattice::ConceptId;
use crate::measurement::MeasurementSupport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterMode {
    Minimal,
    Baseline,
}

impl fmt::Display for CounterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CounterMode::Minimal => "minimal",
            CounterMode::Baseline => "baseline",
        })
    }
}

impl FromStr for CounterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimal" => Ok(CounterMode::Minimal),
            "baseline" => Ok(CounterMode::Baseline),
            other => Err(Error::Format(format!("unknown counter mode `{other}`"))),
        }
    }
}

#[derive(Debug, Default)]
pub struct Counter {
    packets: AtomicU64,
    bytes: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterValue {
    pub packets: u64,
    pub bytes: u64,
}

impl Counter {
    fn with(v: CounterValue) -> Self {
        Counter {
            packets: AtomicU64::new(v.packets),
            bytes: AtomicU64::new(v.bytes),
        }
    }

    pub fn value(&self) -> CounterValue {
        CounterValue {
            packets: self.packets.load(Ordering::Relaxed),
            bytes: self.bytes.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketEvent {
    pub flow: usize,
    pub size: u64,
    pub tick: u64,
}

/// Counter values retired when their flow set stopped existing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivedCounter {
    pub epoch: u64,
    pub flows: Vec<String>,
    pub value: CounterValue,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MigrationReport {
    /// Counters carried over, keyed by their new owner (ground id, or flow id in
    /// baseline mode).
    pub preserved: Vec<(usize, CounterValue)>,
    pub archived: Vec<ArchivedCounter>,
    /// Owners that start from zero.
    pub fresh: Vec<usize>,
}

impl MigrationReport {
    pub fn is_identity(&self) -> bool {
        self.archived.is_empty() && self.fresh.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub mode: CounterMode,
    pub epoch: u64,
    pub counters_in_use: usize,
    pub events: u64,
    pub drops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryStats {
    pub packets: u64,
    pub bytes: u64,
    pub flows: BitSet,
    pub counters_touched: usize,
}

#[derive(Debug)]
pub struct CounterStore {
    mode: CounterMode,
    counters: Vec<Counter>,
    ground_to_counter: BTreeMap<ConceptId, usize>,
    flow_to_counter: Vec<Option<usize>>,
    events: AtomicU64,
    drops: AtomicU64,
    epoch: u64,
    archive: Vec<ArchivedCounter>,
}

impl CounterStore {
    /// Allocates zeroed registers for `support` in the given mode.
    pub fn install(support: &MeasurementSupport, num_flows: usize, mode: CounterMode) -> Self {
        let mut store = CounterStore {
            mode,
            counters: Vec::new(),
            ground_to_counter: BTreeMap::new(),
            flow_to_counter: vec![None; num_flows],
            events: AtomicU64::new(0),
            drops: AtomicU64::new(0),
            epoch: 0,
            archive: Vec::new(),
        };
        store.wire(support, num_flows, &BTreeMap::new(), &BTreeMap::new());
        store
    }

    fn wire(
        &mut self,
        support: &MeasurementSupport,
        num_flows: usize,
        ground_values: &BTreeMap<ConceptId, CounterValue>,
        flow_values: &BTreeMap<usize, CounterValue>,
    ) {
        self.counters.clear();
        self.ground_to_counter.clear();
        self.flow_to_counter = vec![None; num_flows];
        match self.mode {
            CounterMode::Minimal => {
                for &g in support.grounds() {
                    let id = self.counters.len();
                    let v = ground_values.get(&g).copied().unwrap_or_default();
                    self.counters.push(Counter::with(v));
                    self.ground_to_counter.insert(g, id);
                    for f in support.grounded(g).into_iter().flat_map(|s| s.iter()) {
                        self.flow_to_counter[f] = Some(id);
                    }
                }
            }
            CounterMode::Baseline => {
                for f in 0..num_flows {
                    let v = flow_values.get(&f).copied().unwrap_or_default();
                    self.counters.push(Counter::with(v));
                    self.flow_to_counter[f] = Some(f);
                }
            }
        }
    }

    pub fn mode(&self) -> CounterMode {
        self.mode
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn counters_in_use(&self) -> usize {
        self.counters.len()
    }

    pub fn counter_of_flow(&self, flow: usize) -> Option<usize> {
        self.flow_to_counter.get(flow).copied().flatten()
    }

    pub fn counter_of_ground(&self, ground: ConceptId) -> Option<usize> {
        self.ground_to_counter.get(&ground).copied()
    }

    pub fn value(&self, counter: usize) -> Option<CounterValue> {
        self.counters.get(counter).map(Counter::value)
    }

    pub fn values(&self) -> Vec<CounterValue> {
        self.counters.iter().map(Counter::value).collect()
    }

    pub fn archive(&self) -> &[ArchivedCounter] {
        &self.archive
    }

    /// Counts a packet against its flow's register. Unknown flows are dropped;
    /// flows without a register pass through uncounted.
    pub fn process(&self, ev: &PacketEvent) {
        if ev.flow >= self.flow_to_counter.len() {
            self.drops.fetch_add(1, Ordering::Relaxed);
            return;
        }
        self.events.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = self.flow_to_counter[ev.flow] {
            let reg = &self.counters[c];
            reg.packets.fetch_add(1, Ordering::Relaxed);
            reg.bytes.fetch_add(ev.size, Ordering::Relaxed);
        }
    }

    /// Records a packet whose flow could not be resolved at all.
    pub fn record_drop(&self) {
        self.drops.fetch_add(1, Ordering::Relaxed);
    }

    /// Current-epoch statistics for query `q`.
    pub fn query_stats(&self, ctx: &FormalContext, support: &MeasurementSupport, q: usize) -> Result<QueryStats> {
        let query = support.query(q)?;
        let mut stats = QueryStats {
            packets: 0,
            bytes: 0,
            flows: BitSet::new(),
            counters_touched: 0,
        };
        match self.mode {
            CounterMode::Minimal => {
                stats.flows = support.answer_flowset(q)?;
                for g in support.grounds_for(q)? {
                    let v = self.counters[self.ground_to_counter[&g]].value();
                    stats.packets += v.packets;
                    stats.bytes += v.bytes;
                    stats.counters_touched += 1;
                }
            }
            CounterMode::Baseline => {
                stats.flows = ctx.extent_of(&query.matchfields);
                for f in stats.flows.iter() {
                    let v = self.counters[f].value();
                    stats.packets += v.packets;
                    stats.bytes += v.bytes;
                    stats.counters_touched += 1;
                }
            }
        }
        Ok(stats)
    }

    /// Like [`Self::query_stats`] but also adds archived values whose flows all
    /// answer `q`, giving totals since installation.
    pub fn query_totals(&self, ctx: &FormalContext, support: &MeasurementSupport, q: usize) -> Result<CounterValue> {
        let stats = self.query_stats(ctx, support, q)?;
        let query = &support.query(q)?.matchfields;
        let mut total = CounterValue {
            packets: stats.packets,
            bytes: stats.bytes,
        };
        for a in &self.archive {
            let all_match = a.flows.iter().all(|name| {
                ctx.flow_id(name)
                    .map(|f| query.is_subset(&ctx.flows()[f].matchfields))
                    .unwrap_or(false)
            });
            if all_match && !a.flows.is_empty() {
                total.packets += a.value.packets;
                total.bytes += a.value.bytes;
            }
        }
        Ok(total)
    }

    pub fn summary(&self) -> EpochSummary {
        EpochSummary {
            mode: self.mode,
            epoch: self.epoch,
            counters_in_use: self.counters.len(),
            events: self.events.load(Ordering::Relaxed),
            drops: self.drops.load(Ordering::Relaxed),
        }
    }

    /// Rewires the registers after a structure change and closes the epoch.
    ///
    /// A register keeps its value when the new structure has an owner with the
    /// identical flow set (matched by flow name); other values go to the
    /// archive and their successors start at zero.
    pub fn reinstall_on_change(
        &mut self,
        old_ctx: &FormalContext,
        old_support: &MeasurementSupport,
        new_ctx: &FormalContext,
        new_support: &MeasurementSupport,
    ) -> MigrationReport {
        let mut report = MigrationReport::default();
        let mut ground_values = BTreeMap::new();
        let mut flow_values = BTreeMap::new();
        let closing = self.epoch;
        match self.mode {
            CounterMode::Minimal => {
                let names = |ctx: &FormalContext, set: &BitSet| -> BTreeSet<String> {
                    ctx.names_of(set).into_iter().collect()
                };
                let mut old_sets: BTreeMap<BTreeSet<String>, CounterValue> = BTreeMap::new();
                for (&g, &c) in &self.ground_to_counter {
                    if let Some(flows) = old_support.grounded(g) {
                        old_sets.insert(names(old_ctx, flows), self.counters[c].value());
                    }
                }
                for &g in new_support.grounds() {
                    let set = names(new_ctx, new_support.grounded(g).expect("ground has flows"));
                    match old_sets.remove(&set) {
                        Some(v) => {
                            ground_values.insert(g, v);
                            report.preserved.push((g, v));
                        }
                        None => report.fresh.push(g),
                    }
                }
                for (flows, value) in old_sets {
                    report.archived.push(ArchivedCounter {
                        epoch: closing,
                        flows: flows.into_iter().collect(),
                        value,
                    });
                }
            }
            CounterMode::Baseline => {
                let mut old: BTreeMap<&str, CounterValue> = old_ctx
                    .flows()
                    .iter()
                    .filter_map(|f| self.value(f.id).map(|v| (f.name.as_str(), v)))
                    .collect();
                for f in new_ctx.flows() {
                    match old.remove(f.name.as_str()) {
                        Some(v) => {
                            flow_values.insert(f.id, v);
                            report.preserved.push((f.id, v));
                        }
                        None => report.fresh.push(f.id),
                    }
                }
                for (name, value) in old {
                    report.archived.push(ArchivedCounter {
                        epoch: closing,
                        flows: vec![name.to_string()],
                        value,
                    });
                }
            }
        }
        self.archive.extend(report.archived.iter().cloned());
        self.wire(new_support, new_ctx.num_flows(), &ground_values, &flow_values);
        self.epoch += 1;
        report
    }

    /// Register values keyed by owner (ground id or flow id) for persistence.
    pub fn snapshot(&self) -> CounterSnapshot {
        let owners: Vec<(usize, usize)> = match self.mode {
            CounterMode::Minimal => self.ground_to_counter.iter().map(|(&g, &c)| (g, c)).collect(),
            CounterMode::Baseline => (0..self.counters.len()).map(|f| (f, f)).collect(),
        };
        CounterSnapshot {
            summary: self.summary(),
            values: owners
                .into_iter()
                .map(|(owner, c)| (owner, self.counters[c].value()))
                .collect(),
            archive: self.archive.clone(),
        }
    }

    /// Restores registers from a snapshot taken on the same structure.
    pub fn restore(support: &MeasurementSupport, num_flows: usize, snap: &CounterSnapshot) -> Result<Self> {
        let mut store = CounterStore::install(support, num_flows, snap.summary.mode);
        for (&owner, &v) in &snap.values {
            let c = match store.mode {
                CounterMode::Minimal => store.counter_of_ground(owner),
                CounterMode::Baseline => store.counter_of_flow(owner),
            }
            .ok_or_else(|| Error::Format(format!("snapshot owner {owner} has no register")))?;
            store.counters[c] = Counter::with(v);
        }
        store.events = AtomicU64::new(snap.summary.events);
        store.drops = AtomicU64::new(snap.summary.drops);
        store.epoch = snap.summary.epoch;
        store.archive = snap.archive.clone();
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub summary: EpochSummary,
    pub values: BTreeMap<usize, CounterValue>,
    #[serde(default)]
    pub archive: Vec<ArchivedCounter>,
}

/// Parses `tick,flow_name,bytes` lines. Blank lines and `#` comments are
/// skipped. Unknown flow names are returned as `Err(name)` entries so the
/// caller can count them as drops.
pub fn parse_events(text: &str, ctx: &FormalContext) -> Result<Vec<std::result::Result<PacketEvent, String>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        if parts.len() != 3 {
            return Err(bad("expected `tick,flow_name,bytes`"));
        }
        let tick = parts[0].parse::<u64>().map_err(|_| bad("tick is not an integer"))?;
        let size = parts[2].parse::<u64>().map_err(|_| bad("bytes is not an integer"))?;
        out.push(match ctx.flow_id(parts[1]) {
            Ok(flow) => Ok(PacketEvent { flow, size, tick }),
            Err(_) => Err(parts[1].to_string()),
        });
    }
    Ok(out)
}
