//! Synthetic flow tables and query sets drawn from per-field value
//! distributions.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; flows use stream 0 and
//! queries stream 1, so the same spec always yields the same files.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::context::FormalContext;
use crate::error::{Error, Result};
use crate::lattice::ConceptLattice;
use crate::measurement::{MeasurementSupport, Query};

/// Redraws allowed per requested item before giving up.
pub const RETRY_FACTOR: usize = 100;

const PROB_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSpec {
    pub value: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub field_kind: String,
    #[serde(default)]
    pub values: Vec<ValueSpec>,
    /// Number of uniform tail values sharing the probability left over.
    #[serde(default)]
    pub tail: usize,
    /// Overrides the global wildcard probability for this field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wildcard_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub fields: Vec<FieldSpec>,
    pub num_flows: usize,
    pub num_queries: usize,
    pub wildcard_pct: f64,
    pub seed: u64,
}

pub const TRACE_SPEC: &str = include_str!("../data/trace_spec.json");

impl FieldSpec {
    fn draw(&self, rng: &mut ChaCha8Rng) -> String {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for v in &self.values {
            acc += v.p;
            if u < acc {
                return format!("{} = {}", self.field_kind, v.value);
            }
        }
        if self.tail == 0 {
            // only reachable through rounding when the listed values sum to 1
            let last = self.values.last().expect("validated non-empty");
            return format!("{} = {}", self.field_kind, last.value);
        }
        format!("{} = ~{}", self.field_kind, rng.gen_range(0..self.tail))
    }

    fn distinct_values(&self) -> usize {
        self.values.len() + self.tail
    }
}

impl BenchSpec {
    /// Twelve header fields; the distributions listed for MAC, ethertype,
    /// VLAN id, IP protocol, TOS and L4 ports follow measured trace
    /// statistics, the rest are made up.
    pub fn trace_default() -> Self {
        Self::from_json_str(TRACE_SPEC).expect("bundled spec is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: BenchSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BenchSpec(m));
        if !(0.0..=1.0).contains(&self.wildcard_pct) {
            return bad(format!("wildcard_pct {} outside [0, 1]", self.wildcard_pct));
        }
        if self.fields.is_empty() {
            return bad("no fields".into());
        }
        let mut kinds = HashSet::new();
        for f in &self.fields {
            if f.field_kind.is_empty() || f.field_kind.contains('=') {
                return bad(format!("bad field kind `{}`", f.field_kind));
            }
            if !kinds.insert(&f.field_kind) {
                return bad(format!("field `{}` listed twice", f.field_kind));
            }
            if let Some(w) = f.wildcard_pct {
                if !(0.0..=1.0).contains(&w) {
                    return bad(format!("{}: wildcard_pct {w} outside [0, 1]", f.field_kind));
                }
            }
            let mut seen = HashSet::new();
            let mut sum = 0.0;
            for v in &f.values {
                if !(0.0..=1.0).contains(&v.p) {
                    return bad(format!("{}: probability {} for `{}`", f.field_kind, v.p, v.value));
                }
                if v.value.starts_with('~') || !seen.insert(&v.value) {
                    return bad(format!("{}: bad or repeated value `{}`", f.field_kind, v.value));
                }
                sum += v.p;
            }
            if sum > 1.0 + PROB_SLACK {
                return bad(format!("{}: probabilities sum to {sum}", f.field_kind));
            }
            if f.tail == 0 && (f.values.is_empty() || sum < 1.0 - PROB_SLACK) {
                return bad(format!("{}: probabilities sum to {sum} with no tail values", f.field_kind));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        BenchSpec { seed, ..self.clone() }
    }

    fn wildcard_for(&self, kind: &str) -> f64 {
        self.fields
            .iter()
            .find(|f| f.field_kind == kind)
            .and_then(|f| f.wildcard_pct)
            .unwrap_or(self.wildcard_pct)
    }

    /// Upper bound on the number of distinct flows the spec can produce.
    fn capacity(&self) -> f64 {
        self.fields.iter().map(|f| f.distinct_values() as f64).product()
    }
}

/// `num_flows` distinct entries `f0, f1, ...`, one value per field. Matchfield
/// ids are assigned in order of first appearance. Every entry carries exactly
/// one value per field, so two distinct entries never nest; the context is
/// marked to reject nested flows added later.
pub fn gen_flows(spec: &BenchSpec) -> Result<FormalContext> {
    spec.validate()?;
    let budget = RETRY_FACTOR * spec.num_flows;
    if (spec.num_flows as f64) > spec.capacity() {
        return Err(Error::RetryBudget { wanted: spec.num_flows, budget });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ctx = FormalContext::new();
    ctx.set_reject_nested(true);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut retries = 0;
    while ctx.num_flows() < spec.num_flows {
        let labels: Vec<String> = spec.fields.iter().map(|f| f.draw(&mut rng)).collect();
        if seen.contains(&labels) {
            retries += 1;
            if retries > budget {
                return Err(Error::RetryBudget { wanted: spec.num_flows, budget });
            }
            continue;
        }
        let mut row = BitSet::new();
        for (field, label) in spec.fields.iter().zip(&labels) {
            let h = match ctx.matchfield_id(label) {
                Ok(h) => h,
                Err(_) => ctx.add_matchfield(label, &field.field_kind)?,
            };
            row.insert(h);
        }
        let name = format!("f{}", ctx.num_flows());
        ctx.add_flow(&name, row)?;
        seen.insert(labels);
    }
    Ok(ctx)
}

/// `num_queries` queries `q1, q2, ...`: each starts from a uniformly chosen
/// flow and drops each of its matchfields with the field's wildcard
/// probability. Draws that drop everything are redrawn.
pub fn gen_queries(spec: &BenchSpec, ctx: &FormalContext) -> Result<Vec<Query>> {
    spec.validate()?;
    if spec.num_queries == 0 {
        return Ok(Vec::new());
    }
    if ctx.num_flows() == 0 {
        return Err(Error::BenchSpec("cannot draw queries from an empty context".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let pct: Vec<f64> = ctx
        .matchfields()
        .iter()
        .map(|m| spec.wildcard_for(&m.field_kind))
        .collect();
    let budget = RETRY_FACTOR * spec.num_queries;
    let mut retries = 0;
    let mut out = Vec::with_capacity(spec.num_queries);
    while out.len() < spec.num_queries {
        let source = rng.gen_range(0..ctx.num_flows());
        let row = &ctx.flows()[source].matchfields;
        let kept: BitSet = row.iter().filter(|&h| rng.gen::<f64>() >= pct[h]).collect();
        if kept.is_empty() {
            retries += 1;
            if retries > budget {
                return Err(Error::RetryBudget { wanted: spec.num_queries, budget });
            }
            continue;
        }
        if !ctx.extent_of(&kept).contains(source) {
            return Err(Error::invariant("query-coverage", format!("q{} misses its source", out.len() + 1)));
        }
        let id = out.len();
        out.push(Query::new(id, &format!("q{}", id + 1), kept, ctx)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub wildcard_pct_milli: u32,
    pub num_queries: usize,
    pub num_flows: usize,
    pub num_counters: usize,
    /// Distinct non-zero flow signatures, counted directly from the rows.
    pub distinct_signatures: usize,
    /// Whether two flows share a non-zero signature.
    pub shared_signature: bool,
}

impl SweepRow {
    pub fn wildcard_pct(&self) -> f64 {
        self.wildcard_pct_milli as f64 / 1000.0
    }
}

fn signature_stats(ctx: &FormalContext, queries: &[Query]) -> (usize, bool) {
    let mut counts: BTreeMap<BitSet, usize> = BTreeMap::new();
    for f in ctx.flows() {
        let sig: BitSet = queries
            .iter()
            .filter(|q| q.matchfields.is_subset(&f.matchfields))
            .map(|q| q.id)
            .collect();
        if !sig.is_empty() {
            *counts.entry(sig).or_default() += 1;
        }
    }
    (counts.len(), counts.values().any(|&n| n > 1))
}

/// Counter counts over every (seed, query count, wildcard probability). The
/// lattice is built once per seed and reused for all query sets.
pub fn sweep(spec: &BenchSpec, seeds: &[u64], query_counts: &[usize], pcts: &[f64]) -> Result<Vec<SweepRow>> {
    for &p in pcts {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::BenchSpec(format!("wildcard_pct {p} outside [0, 1]")));
        }
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let base = spec.with_seed(seed);
        let lat = ConceptLattice::build(gen_flows(&base)?);
        let ctx = lat.context();
        for &nq in query_counts {
            for &p in pcts {
                let qspec = BenchSpec {
                    num_queries: nq,
                    wildcard_pct: p,
                    ..base.clone()
                };
                let queries = gen_queries(&qspec, ctx)?;
                let (distinct_signatures, shared_signature) = signature_stats(ctx, &queries);
                let support = MeasurementSupport::compute(&lat, queries)?;
                rows.push(SweepRow {
                    seed,
                    wildcard_pct_milli: (p * 1000.0).round() as u32,
                    num_queries: nq,
                    num_flows: ctx.num_flows(),
                    num_counters: support.grounds().len(),
                    distinct_signatures,
                    shared_signature,
                });
            }
        }
    }
    Ok(rows)
}

/// `wildcard_pct,num_queries,num_flows,num_counters`, one line per row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("wildcard_pct,num_queries,num_flows,num_counters\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.wildcard_pct(), r.num_queries, r.num_flows, r.num_counters));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(num_flows: usize, seed: u64) -> BenchSpec {
        BenchSpec {
            num_flows,
            seed,
            ..BenchSpec::trace_default()
        }
    }

    #[test]
    fn bundled_spec_has_twelve_fields() {
        let s = BenchSpec::trace_default();
        assert_eq!(s.fields.len(), 12);
        assert_eq!(BenchSpec::from_json_str(&s.to_json_string()).unwrap(), s);
    }

    #[test]
    fn flows_are_distinct_and_deterministic() {
        let a = gen_flows(&small(100, 1)).unwrap();
        assert_eq!(a.num_flows(), 100);
        assert!(a.flows().iter().all(|f| f.matchfields.len() == 12));
        a.check_consistency().unwrap();
        let b = gen_flows(&small(100, 1)).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
        let c = gen_flows(&small(100, 2)).unwrap();
        assert_ne!(a.to_json_string(), c.to_json_string());
        assert_eq!(gen_flows(&small(0, 1)).unwrap().num_flows(), 0);
    }

    #[test]
    fn mac_src_frequencies_follow_the_spec() {
        let ctx = gen_flows(&small(1000, 1)).unwrap();
        for (value, p) in [("00:40:05", 0.39), ("08:00:07", 0.13), ("00:60:08", 0.19)] {
            let h = ctx.matchfield_id(&format!("mac_src = {value}")).unwrap();
            let freq = ctx.column(h).unwrap().len() as f64 / 1000.0;
            assert!((freq - p).abs() <= 0.10 * p, "{value}: {freq} vs {p}");
        }
    }

    #[test]
    fn exhausted_distribution_errors() {
        let spec = BenchSpec {
            fields: vec![FieldSpec {
                field_kind: "port".into(),
                values: vec![],
                tail: 3,
                wildcard_pct: None,
            }],
            num_flows: 4,
            num_queries: 0,
            wildcard_pct: 0.5,
            seed: 0,
        };
        assert!(matches!(gen_flows(&spec), Err(Error::RetryBudget { .. })));
        assert_eq!(gen_flows(&BenchSpec { num_flows: 3, ..spec }).unwrap().num_flows(), 3);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = BenchSpec::trace_default();
        s.wildcard_pct = 1.5;
        assert!(s.validate().is_err());
        let mut s = BenchSpec::trace_default();
        s.fields[1].values[0].p = 0.9;
        assert!(s.validate().is_err());
        let mut s = BenchSpec::trace_default();
        s.fields[0].tail = 0;
        assert!(s.validate().is_err());
        let mut s = BenchSpec::trace_default();
        s.fields[2].field_kind = s.fields[1].field_kind.clone();
        assert!(s.validate().is_err());
    }

    #[test]
    fn exact_queries_equal_their_source() {
        let spec = BenchSpec {
            num_queries: 30,
            wildcard_pct: 0.0,
            ..small(50, 3)
        };
        let ctx = gen_flows(&spec).unwrap();
        let qs = gen_queries(&spec, &ctx).unwrap();
        assert_eq!(qs.len(), 30);
        for q in &qs {
            let answer = ctx.extent_of(&q.matchfields);
            assert_eq!(answer.len(), 1);
            let f = answer.iter().next().unwrap();
            assert_eq!(ctx.flows()[f].matchfields, q.matchfields);
        }
    }

    #[test]
    fn wildcarded_queries_cover_their_source() {
        let spec = BenchSpec {
            num_queries: 40,
            wildcard_pct: 0.9,
            ..small(80, 4)
        };
        let ctx = gen_flows(&spec).unwrap();
        let qs = gen_queries(&spec, &ctx).unwrap();
        assert!(qs.iter().all(|q| !q.matchfields.is_empty() && !ctx.extent_of(&q.matchfields).is_empty()));
        assert_eq!(qs, gen_queries(&spec, &ctx).unwrap());
        assert_eq!(qs[0].label, "q1");
    }

    #[test]
    fn per_field_override() {
        let mut spec = BenchSpec {
            num_queries: 20,
            wildcard_pct: 1.0,
            ..small(20, 5)
        };
        spec.fields[0].wildcard_pct = Some(0.0);
        let ctx = gen_flows(&spec).unwrap();
        for q in gen_queries(&spec, &ctx).unwrap() {
            let kinds: Vec<_> = q.matchfields.iter().map(|h| ctx.matchfields()[h].field_kind.clone()).collect();
            assert_eq!(kinds, vec!["in_port".to_string()]);
        }
    }

    #[test]
    fn sweep_rows_respect_bounds() {
        let spec = small(120, 0);
        let rows = sweep(&spec, &[1, 2], &[0, 10, 30], &[0.1, 0.9]).unwrap();
        assert_eq!(rows.len(), 12);
        for r in &rows {
            assert!(r.num_counters <= r.num_flows);
            assert_eq!(r.num_counters, r.distinct_signatures);
            if r.num_queries == 0 {
                assert_eq!(r.num_counters, 0);
            }
        }
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("wildcard_pct,num_queries,num_flows,num_counters\n0.1,0,120,0\n"));
    }
}
