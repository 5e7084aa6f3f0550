//! Queries on top of the lattice: targets, projections, grounds and the
//! resulting counter partition.
//!
//! A query's target is the highest concept whose intent contains it. The query
//! vector of a concept marks the queries contained in its intent. Projections
//! are the concepts whose vector strictly grows over all of their parents'
//! vectors, i.e. meets of targets. A flow's ground is the projection sharing
//! the flow concept's vector; flows with the same ground share one counter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::context::FormalContext;
use crate::error::{Error, Result};
use crate::lattice::{ConceptId, ConceptLattice};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    /// Position in the query list (0-based; `q1` is 0).
    pub id: usize,
    pub label: String,
    pub matchfields: BitSet,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct QueryDoc {
    pub label: String,
    pub matchfields: Vec<String>,
}

impl Query {
    pub fn new(id: usize, label: &str, matchfields: BitSet, ctx: &FormalContext) -> Result<Self> {
        if matchfields.is_empty() {
            return Err(Error::EmptyQuery(label.to_string()));
        }
        if let Some(h) = matchfields.iter().find(|&h| h >= ctx.num_matchfields()) {
            return Err(Error::UnknownMatchfield(h));
        }
        Ok(Query {
            id,
            label: label.to_string(),
            matchfields,
        })
    }

    pub fn from_docs(docs: &[QueryDoc], ctx: &FormalContext) -> Result<Vec<Query>> {
        docs.iter()
            .enumerate()
            .map(|(i, d)| Query::new(i, &d.label, ctx.matchfield_set(&d.matchfields)?, ctx))
            .collect()
    }

    pub fn load_json_str(text: &str, ctx: &FormalContext) -> Result<Vec<Query>> {
        let docs: Vec<QueryDoc> = serde_json::from_str(text)?;
        Self::from_docs(&docs, ctx)
    }

    pub fn to_docs(queries: &[Query], ctx: &FormalContext) -> Vec<QueryDoc> {
        queries
            .iter()
            .map(|q| QueryDoc {
                label: q.label.clone(),
                matchfields: ctx.labels_of(&q.matchfields),
            })
            .collect()
    }
}

/// Which of the `len` queries a concept's intent contains.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct QueryVector {
    bits: BitSet,
    len: usize,
}

impl QueryVector {
    pub fn zeros(len: usize) -> Self {
        QueryVector {
            bits: BitSet::new(),
            len,
        }
    }

    pub fn from_bits(bits: BitSet, len: usize) -> Self {
        debug_assert!(bits.iter().all(|i| i < len));
        QueryVector { bits, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> &BitSet {
        &self.bits
    }

    pub fn get(&self, q: usize) -> bool {
        self.bits.contains(q)
    }

    pub fn popcount(&self) -> usize {
        self.bits.len()
    }

    pub fn is_zero(&self) -> bool {
        self.bits.is_empty()
    }

    /// `q1` first, e.g. `10101`.
    pub fn to_bitstring(&self) -> String {
        (0..self.len)
            .map(|i| if self.bits.contains(i) { '1' } else { '0' })
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let mut bits = BitSet::new();
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => {
                    bits.insert(i);
                }
                '0' => {}
                _ => return Err(Error::Format(format!("bad query vector `{s}`"))),
            }
        }
        Ok(QueryVector {
            bits,
            len: s.chars().count(),
        })
    }

    /// The bitstring read as a big-endian binary number (`q1` most
    /// significant), left-padded to whole hex digits.
    pub fn to_hex(&self) -> String {
        let pad = (4 - self.len % 4) % 4;
        let padded: Vec<bool> = std::iter::repeat_n(false, pad)
            .chain((0..self.len).map(|i| self.bits.contains(i)))
            .collect();
        padded
            .chunks(4)
            .map(|nib| {
                let v = nib.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).expect("nibble")
            })
            .collect()
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bad = || Error::Format(format!("bad hex query vector `{s}` for {len} queries"));
        if s.len() != len.div_ceil(4) {
            return Err(bad());
        }
        let pad = (4 - len % 4) % 4;
        let mut bits = BitSet::new();
        for (d, ch) in s.chars().enumerate() {
            let v = ch.to_digit(16).ok_or_else(bad)?;
            for k in 0..4 {
                if v & (8 >> k) != 0 {
                    let pos = d * 4 + k;
                    if pos < pad {
                        return Err(bad());
                    }
                    bits.insert(pos - pad);
                }
            }
        }
        Ok(QueryVector { bits, len })
    }
}

impl fmt::Debug for QueryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v({})", self.to_bitstring())
    }
}

/// Status changes caused by one new concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatusDelta {
    pub retargeted: Vec<(usize, ConceptId, ConceptId)>,
    pub became_target: bool,
    pub became_projection: bool,
    pub eclipsed: Option<(ConceptId, ConceptId)>,
}

#[derive(Debug, Clone)]
pub struct MeasurementSupport {
    queries: Vec<Query>,
    /// γ per query. Unsatisfiable queries target the empty-extent bottom.
    targets: Vec<ConceptId>,
    /// t(c): queries targeted at each target concept.
    targeted: BTreeMap<ConceptId, BTreeSet<usize>>,
    projections: BTreeSet<ConceptId>,
    projection_by_vector: HashMap<BitSet, ConceptId>,
    grounds: BTreeSet<ConceptId>,
    /// g(c), only for grounds.
    grounded: BTreeMap<ConceptId, BitSet>,
    vectors: Vec<QueryVector>,
    /// µ per flow; `None` for flows matching no query.
    mu: Vec<Option<ConceptId>>,
}

impl MeasurementSupport {
    /// Scans concepts by decreasing extent size: the first concept containing
    /// a query is its target, vectors accumulate from parents, and each flow
    /// concept `(f″, f′)` picks its flow's ground among projections seen so far.
    pub fn compute(lat: &ConceptLattice, queries: Vec<Query>) -> Result<Self> {
        let ctx = lat.context();
        for (i, q) in queries.iter().enumerate() {
            if q.id != i {
                return Err(Error::Format(format!("query `{}` has id {} at position {i}", q.label, q.id)));
            }
            if q.matchfields.is_empty() {
                return Err(Error::EmptyQuery(q.label.clone()));
            }
            if let Some(h) = q.matchfields.iter().find(|&h| h >= ctx.num_matchfields()) {
                return Err(Error::UnknownMatchfield(h));
            }
        }
        let n = queries.len();
        let mut order: Vec<ConceptId> = (0..lat.len()).collect();
        order.sort_by_key(|&c| (std::cmp::Reverse(lat.concepts()[c].extent.len()), c));

        let mut s = MeasurementSupport {
            targets: vec![usize::MAX; n],
            targeted: BTreeMap::new(),
            projections: BTreeSet::new(),
            projection_by_vector: HashMap::new(),
            grounds: BTreeSet::new(),
            grounded: BTreeMap::new(),
            vectors: vec![QueryVector::zeros(n); lat.len()],
            mu: vec![None; ctx.num_flows()],
            queries,
        };
        let flow_by_row: HashMap<&BitSet, usize> =
            ctx.flows().iter().map(|f| (&f.matchfields, f.id)).collect();
        let mut pending: Vec<usize> = (0..n).collect();
        for c in order {
            let concept = &lat.concepts()[c];
            let mut bits = BitSet::new();
            pending.retain(|&q| {
                if s.queries[q].matchfields.is_subset(&concept.intent) {
                    bits.insert(q);
                    s.targets[q] = c;
                    s.targeted.entry(c).or_default().insert(q);
                    false
                } else {
                    true
                }
            });
            let mut max_parent = 0;
            for &p in &concept.parents {
                bits.union_with(s.vectors[p].bits());
                max_parent = max_parent.max(s.vectors[p].popcount());
            }
            let v = QueryVector::from_bits(bits, n);
            if v.popcount() > max_parent {
                s.projections.insert(c);
                s.projection_by_vector.insert(v.bits().clone(), c);
            }
            if let Some(&flow) = flow_by_row.get(&concept.intent).filter(|_| !v.is_zero()) {
                let p = *s.projection_by_vector.get(v.bits()).ok_or_else(|| {
                    Error::invariant("ground-exists", format!("no projection for flow concept {c}"))
                })?;
                s.grounds.insert(p);
                s.grounded.entry(p).or_default().insert(flow);
                s.mu[flow] = Some(p);
            }
            s.vectors[c] = v;
        }
        if let Some(&q) = pending.first() {
            return Err(Error::invariant("target-exists", format!("query {} has no target", s.queries[q].label)));
        }
        Ok(s)
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn query(&self, q: usize) -> Result<&Query> {
        self.queries.get(q).ok_or(Error::UnknownQuery(q))
    }

    pub fn query_id(&self, label: &str) -> Result<usize> {
        self.queries
            .iter()
            .position(|q| q.label == label)
            .ok_or_else(|| Error::UnknownQueryLabel(label.to_string()))
    }

    pub fn target(&self, q: usize) -> Result<ConceptId> {
        self.targets.get(q).copied().ok_or(Error::UnknownQuery(q))
    }

    pub fn targets(&self) -> &[ConceptId] {
        &self.targets
    }

    /// T as a set.
    pub fn target_set(&self) -> BTreeSet<ConceptId> {
        self.targeted.keys().copied().collect()
    }

    pub fn targeted_queries(&self, c: ConceptId) -> Option<&BTreeSet<usize>> {
        self.targeted.get(&c)
    }

    pub fn is_satisfiable(&self, lat: &ConceptLattice, q: usize) -> Result<bool> {
        Ok(!lat.concept(self.target(q)?)?.extent.is_empty())
    }

    pub fn projections(&self) -> &BTreeSet<ConceptId> {
        &self.projections
    }

    pub fn grounds(&self) -> &BTreeSet<ConceptId> {
        &self.grounds
    }

    pub fn grounded(&self, c: ConceptId) -> Option<&BitSet> {
        self.grounded.get(&c)
    }

    pub fn vector(&self, c: ConceptId) -> Result<&QueryVector> {
        self.vectors.get(c).ok_or(Error::UnknownConcept(c))
    }

    pub fn ground_of(&self, flow: usize) -> Result<Option<ConceptId>> {
        self.mu.get(flow).copied().ok_or(Error::UnknownFlow(flow))
    }

    pub fn flow_grounds(&self) -> &[Option<ConceptId>] {
        &self.mu
    }

    pub(crate) fn check_matches(&self, lat: &ConceptLattice) -> Result<()> {
        if self.vectors.len() != lat.len() || self.mu.len() != lat.context().num_flows() {
            return Err(Error::invariant(
                "support-matches-lattice",
                format!(
                    "support covers {} concepts / {} flows, lattice has {} / {}",
                    self.vectors.len(),
                    self.mu.len(),
                    lat.len(),
                    lat.context().num_flows()
                ),
            ));
        }
        Ok(())
    }

    /// Settles the status of a freshly inserted concept and of its genitor.
    /// `new` must already be linked to its parents.
    pub fn update_status(&mut self, lat: &ConceptLattice, new: ConceptId, genitor: ConceptId) -> StatusDelta {
        let n = self.queries.len();
        if self.vectors.len() <= new {
            self.vectors.resize(new + 1, QueryVector::zeros(n));
        }
        let concept = &lat.concepts()[new];
        let mut delta = StatusDelta::default();

        let mut bits = BitSet::new();
        if let Some(held) = self.targeted.get(&genitor) {
            let moved: Vec<usize> = held
                .iter()
                .copied()
                .filter(|&q| self.queries[q].matchfields.is_subset(&concept.intent))
                .collect();
            for q in moved {
                if let Some(h) = self.targeted.get_mut(&genitor) {
                    h.remove(&q);
                }
                self.targets[q] = new;
                self.targeted.entry(new).or_default().insert(q);
                bits.insert(q);
                delta.retargeted.push((q, genitor, new));
            }
            if self.targeted.get(&genitor).is_some_and(|t| t.is_empty()) {
                self.targeted.remove(&genitor);
            }
            delta.became_target = !bits.is_empty();
        }

        let mut max_parent = 0;
        for &p in &concept.parents {
            bits.union_with(self.vectors[p].bits());
            max_parent = max_parent.max(self.vectors[p].popcount());
        }
        let v = QueryVector::from_bits(bits, n);
        debug_assert!(v.bits().iter().all(|q| self.queries[q].matchfields.is_subset(&concept.intent)));
        if v.popcount() > max_parent {
            delta.became_projection = true;
            self.projections.insert(new);
            let previous = self.projection_by_vector.insert(v.bits().clone(), new);
            debug_assert!(previous.is_none() || previous == Some(genitor));
            if self.projections.contains(&genitor) && self.vectors[genitor].popcount() == v.popcount() {
                self.projections.remove(&genitor);
                delta.eclipsed = Some((genitor, new));
                if let Some(flows) = self.grounded.remove(&genitor) {
                    for f in flows.iter() {
                        self.mu[f] = Some(new);
                    }
                    self.grounds.remove(&genitor);
                    self.grounds.insert(new);
                    self.grounded.insert(new, flows);
                }
            }
        }
        self.vectors[new] = v;
        delta
    }

    /// Grounds a just-inserted flow at the projection sharing its flow
    /// concept's vector; `None` when the flow matches no query.
    pub fn ground_new_flow(&mut self, lat: &ConceptLattice, flow: usize) -> Result<Option<ConceptId>> {
        if self.mu.len() <= flow {
            self.mu.resize(flow + 1, None);
        }
        let fc = lat.flow_concept(flow)?;
        let v = &self.vectors[fc];
        if v.is_zero() {
            self.mu[flow] = None;
            return Ok(None);
        }
        let p = *self.projection_by_vector.get(v.bits()).ok_or_else(|| {
            Error::invariant("ground-exists", format!("no projection with vector {}", v.to_bitstring()))
        })?;
        self.grounds.insert(p);
        self.grounded.entry(p).or_default().insert(flow);
        self.mu[flow] = Some(p);
        Ok(Some(p))
    }

    /// Bookkeeping for a new empty-extent bottom concept below `lat`'s old bottom.
    pub(crate) fn extend_for_bottom(&mut self, lat: &ConceptLattice, bottom: ConceptId) {
        let n = self.queries.len();
        if self.vectors.len() <= bottom {
            self.vectors.resize(bottom + 1, QueryVector::zeros(n));
        }
        let mut bits = BitSet::new();
        for &p in &lat.concepts()[bottom].parents {
            bits.union_with(self.vectors[p].bits());
        }
        self.vectors[bottom] = QueryVector::from_bits(bits, n);
    }

    /// Flow sets sharing a counter, one per ground.
    pub fn partition(&self) -> Vec<BitSet> {
        self.grounds
            .iter()
            .map(|g| self.grounded.get(g).cloned().unwrap_or_default())
            .collect()
    }

    /// Flows answering `q`, assembled from the grounds whose vector has bit `q`.
    pub fn answer_flowset(&self, q: usize) -> Result<BitSet> {
        self.query(q)?;
        let mut out = BitSet::new();
        for g in &self.grounds {
            if self.vectors[*g].get(q) {
                out.union_with(&self.grounded[g]);
            }
        }
        Ok(out)
    }

    /// Grounds contributing to `q`'s answer.
    pub fn grounds_for(&self, q: usize) -> Result<Vec<ConceptId>> {
        self.query(q)?;
        Ok(self.grounds.iter().copied().filter(|&g| self.vectors[g].get(q)).collect())
    }

    /// Checks the support against its definitions on `lat`.
    pub fn check_invariants(&self, lat: &ConceptLattice) -> Result<()> {
        self.check_matches(lat)?;
        let ctx = lat.context();
        let n = self.queries.len();
        for c in lat.concepts() {
            let want: BitSet = (0..n)
                .filter(|&q| self.queries[q].matchfields.is_subset(&c.intent))
                .collect();
            if self.vectors[c.id].bits() != &want || self.vectors[c.id].len() != n {
                return Err(Error::invariant("vector-definition", format!("concept {}", c.id)));
            }
            for &p in &c.parents {
                if !self.vectors[p].bits().is_subset(self.vectors[c.id].bits()) {
                    return Err(Error::invariant("vector-monotone", format!("{p} above {}", c.id)));
                }
            }
        }
        for (q, &t) in self.targets.iter().enumerate() {
            let closure = ctx.intent_of(&ctx.extent_of(&self.queries[q].matchfields));
            if lat.concept(t)?.intent != closure {
                return Err(Error::invariant("target", format!("query {}", self.queries[q].label)));
            }
            if !self.projections.contains(&t) {
                return Err(Error::invariant("targets-are-projections", format!("concept {t}")));
            }
            if !self.targeted.get(&t).is_some_and(|s| s.contains(&q)) {
                return Err(Error::invariant("targeted-index", format!("query {}", self.queries[q].label)));
            }
        }
        for c in lat.concepts() {
            let v = &self.vectors[c.id];
            let targets: Vec<ConceptId> = v.bits().iter().map(|q| self.targets[q]).collect();
            let is_meet = lat.meet_all(targets.iter().copied())? == Some(c.id);
            if is_meet != self.projections.contains(&c.id) {
                return Err(Error::invariant("projection-is-meet-of-targets", format!("concept {}", c.id)));
            }
            if is_meet {
                let mut ext = ctx.all_flows();
                for t in &targets {
                    ext.intersect_with(&lat.concept(*t)?.extent);
                }
                if ext != c.extent {
                    return Err(Error::invariant("projection-extent", format!("concept {}", c.id)));
                }
            }
        }
        if !self.grounds.is_subset(&self.projections) {
            return Err(Error::invariant("grounds-are-projections", format!("{:?}", self.grounds)));
        }
        let mut covered = BitSet::new();
        for g in &self.grounds {
            let flows = self.grounded.get(g).filter(|s| !s.is_empty()).ok_or_else(|| {
                Error::invariant("ground-nonempty", format!("ground {g}"))
            })?;
            if !covered.is_disjoint(flows) {
                return Err(Error::invariant("grounds-disjoint", format!("ground {g}")));
            }
            covered.union_with(flows);
        }
        for f in ctx.flows() {
            let sig: BitSet = (0..n)
                .filter(|&q| self.queries[q].matchfields.is_subset(&f.matchfields))
                .collect();
            match self.mu[f.id] {
                None if sig.is_empty() && !covered.contains(f.id) => {}
                Some(g) if !sig.is_empty() && self.vectors[g].bits() == &sig => {
                    if !self.grounded[&g].contains(f.id) {
                        return Err(Error::invariant("mu-consistent", format!("flow {}", f.name)));
                    }
                }
                _ => return Err(Error::invariant("ground-signature", format!("flow {}", f.name))),
            }
        }
        Ok(())
    }

    /// Id-free view for comparing supports on different lattices of the same context.
    pub fn normalized(&self, lat: &ConceptLattice) -> NormalizedSupport {
        let intent = |c: ConceptId| lat.concepts()[c].intent.clone();
        NormalizedSupport {
            targets: self.targets.iter().map(|&c| intent(c)).collect(),
            projections: self.projections.iter().map(|&c| intent(c)).collect(),
            grounds: self.grounds.iter().map(|&c| intent(c)).collect(),
            vectors: lat
                .concepts()
                .iter()
                .map(|c| (c.intent.clone(), self.vectors[c.id].to_bitstring()))
                .collect(),
            mu: self.mu.iter().map(|g| g.map(intent)).collect(),
        }
    }

    pub fn to_dump(&self, lat: &ConceptLattice) -> SupportDump {
        let ctx = lat.context();
        SupportDump {
            queries: Query::to_docs(&self.queries, ctx),
            targets: self
                .queries
                .iter()
                .map(|q| (q.label.clone(), self.targets[q.id]))
                .collect(),
            projections: self.projections.iter().copied().collect(),
            grounds: self.grounds.iter().copied().collect(),
            vectors: self
                .vectors
                .iter()
                .enumerate()
                .map(|(c, v)| (c, v.to_hex()))
                .collect(),
            flow_to_ground: ctx
                .flows()
                .iter()
                .filter_map(|f| self.mu[f.id].map(|g| (f.name.clone(), g)))
                .collect(),
        }
    }

    /// Rebuilds a support from a dump without recomputing it, so that a
    /// tampered dump can be checked with [`Self::check_invariants`].
    pub fn from_dump(lat: &ConceptLattice, dump: &SupportDump) -> Result<Self> {
        let ctx = lat.context();
        let queries = Query::from_docs(&dump.queries, ctx)?;
        let n = queries.len();
        let mut targets = vec![usize::MAX; n];
        let mut targeted: BTreeMap<ConceptId, BTreeSet<usize>> = BTreeMap::new();
        for q in &queries {
            let t = *dump
                .targets
                .get(&q.label)
                .ok_or_else(|| Error::Format(format!("no target for query `{}`", q.label)))?;
            lat.concept(t)?;
            targets[q.id] = t;
            targeted.entry(t).or_default().insert(q.id);
        }
        let mut vectors = vec![QueryVector::zeros(n); lat.len()];
        for (&c, hex) in &dump.vectors {
            lat.concept(c)?;
            vectors[c] = QueryVector::from_hex(hex, n)?;
        }
        if dump.vectors.len() != lat.len() {
            return Err(Error::Format(format!(
                "{} vectors for {} concepts",
                dump.vectors.len(),
                lat.len()
            )));
        }
        let projections: BTreeSet<ConceptId> = dump.projections.iter().copied().collect();
        let projection_by_vector = projections
            .iter()
            .map(|&p| (vectors[p].bits().clone(), p))
            .collect();
        let mut mu = vec![None; ctx.num_flows()];
        let mut grounded: BTreeMap<ConceptId, BitSet> = BTreeMap::new();
        for (name, &g) in &dump.flow_to_ground {
            let f = ctx.flow_id(name)?;
            lat.concept(g)?;
            mu[f] = Some(g);
            grounded.entry(g).or_default().insert(f);
        }
        Ok(MeasurementSupport {
            queries,
            targets,
            targeted,
            projections,
            projection_by_vector,
            grounds: dump.grounds.iter().copied().collect(),
            grounded,
            vectors,
            mu,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedSupport {
    pub targets: Vec<BitSet>,
    pub projections: BTreeSet<BitSet>,
    pub grounds: BTreeSet<BitSet>,
    pub vectors: BTreeMap<BitSet, String>,
    pub mu: Vec<Option<BitSet>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SupportDump {
    pub queries: Vec<QueryDoc>,
    pub targets: BTreeMap<String, ConceptId>,
    pub projections: Vec<ConceptId>,
    pub grounds: Vec<ConceptId>,
    /// Concept id to hex query vector.
    pub vectors: BTreeMap<ConceptId, String>,
    pub flow_to_ground: BTreeMap<String, ConceptId>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::{fs, hs, example, example_queries};

    fn running() -> (ConceptLattice, MeasurementSupport) {
        let ctx = example();
        let queries = example_queries(&ctx);
        let lat = ConceptLattice::build(ctx);
        let s = MeasurementSupport::compute(&lat, queries).unwrap();
        (lat, s)
    }

    fn id(lat: &ConceptLattice, h: &[usize]) -> ConceptId {
        lat.find_by_intent(&hs(h)).unwrap()
    }

    #[test]
    fn targets_of_running_example() {
        let (lat, s) = running();
        let want = [
            id(&lat, &[10]),
            id(&lat, &[2, 6, 8]),
            id(&lat, &[1, 7]),
            id(&lat, &[1, 4, 7]),
            id(&lat, &[1, 7]),
        ];
        assert_eq!(s.targets(), &want);
        s.check_invariants(&lat).unwrap();
    }

    #[test]
    fn vectors_of_running_example() {
        let (lat, s) = running();
        let v = |h: &[usize]| s.vector(id(&lat, h)).unwrap().to_bitstring();
        assert_eq!(v(&[1, 5, 7, 10]), "10101");
        assert_eq!(v(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]), "11111");
        assert_eq!(v(&[]), "00000");
        assert!(!s.projections().contains(&lat.top()));
    }

    #[test]
    fn grounds_of_running_example() {
        let (lat, s) = running();
        let want = [
            (0, id(&lat, &[1, 4, 7])),
            (1, id(&lat, &[1, 4, 5, 7, 10])),
            (2, id(&lat, &[2, 6, 8])),
            (3, id(&lat, &[2, 6, 8, 10])),
            (4, id(&lat, &[1, 7])),
            (5, id(&lat, &[1, 5, 7, 10])),
            (6, id(&lat, &[10])),
            (7, id(&lat, &[10])),
        ];
        for (f, g) in want {
            assert_eq!(s.ground_of(f).unwrap(), Some(g), "flow f{f}");
        }
        let cells: BTreeSet<BitSet> = s.partition().into_iter().collect();
        let want: BTreeSet<BitSet> = [
            fs(&[0]), fs(&[1]), fs(&[2]), fs(&[3]), fs(&[4]), fs(&[5]), fs(&[6, 7]),
        ]
        .into_iter()
        .collect();
        assert_eq!(cells, want);
    }

    #[test]
    fn answers() {
        let (_, s) = running();
        assert_eq!(s.answer_flowset(0).unwrap(), fs(&[1, 3, 5, 6, 7]));
        assert_eq!(s.answer_flowset(3).unwrap(), fs(&[0, 1]));
        assert!(matches!(s.answer_flowset(5), Err(Error::UnknownQuery(5))));
    }

    #[test]
    fn unsatisfiable_query_answers_empty() {
        let ctx = example();
        let lat = ConceptLattice::build(ctx.clone());
        let q = Query::new(0, "none", hs(&[2, 3]), &ctx).unwrap();
        let s = MeasurementSupport::compute(&lat, vec![q]).unwrap();
        assert!(!s.is_satisfiable(&lat, 0).unwrap());
        assert!(s.answer_flowset(0).unwrap().is_empty());
        assert!(s.grounds().is_empty());
        s.check_invariants(&lat).unwrap();
    }

    #[test]
    fn empty_query_set() {
        let lat = ConceptLattice::build(example());
        let s = MeasurementSupport::compute(&lat, vec![]).unwrap();
        assert!(s.target_set().is_empty());
        assert!(s.projections().is_empty());
        assert!(s.grounds().is_empty());
        assert!(s.partition().is_empty());
        assert!(s.flow_grounds().iter().all(Option::is_none));
    }

    #[test]
    fn query_validation() {
        let ctx = example();
        assert!(matches!(Query::new(0, "e", BitSet::new(), &ctx), Err(Error::EmptyQuery(_))));
        assert!(matches!(Query::new(0, "u", BitSet::singleton(40), &ctx), Err(Error::UnknownMatchfield(40))));
        assert!(Query::load_json_str(r#"[{"label":"x","matchfields":["nope"]}]"#, &ctx).is_err());
    }

    #[test]
    fn f8_update() {
        let (mut lat, mut s) = running();
        let c8 = id(&lat, &[1, 7]);
        let t_before = s.target_set();
        let p_before = s.projections().clone();
        let g_before = s.grounds().clone();
        let report = lat.add_flow("f8", hs(&[2, 7, 9]), &mut s).unwrap();
        let c19 = id(&lat, &[7]);
        assert_eq!(report.retargeted, vec![(4, c8, c19)]);
        assert_eq!(report.ground, Some(c19));
        let grow = |before: &BTreeSet<ConceptId>, after: &BTreeSet<ConceptId>| {
            after.difference(before).copied().collect::<Vec<_>>() == vec![c19] && before.is_subset(after)
        };
        assert!(grow(&t_before, &s.target_set()));
        assert!(grow(&p_before, s.projections()));
        assert!(grow(&g_before, s.grounds()));
        assert_eq!(s.vector(lat.flow_concept(8).unwrap()).unwrap().to_bitstring(), "00001");
        s.check_invariants(&lat).unwrap();
        let scratch = MeasurementSupport::compute(&lat, s.queries().to_vec()).unwrap();
        assert_eq!(scratch.normalized(&lat), s.normalized(&lat));
    }

    #[test]
    fn flow_sharing_f6_signature() {
        let (mut lat, mut s) = running();
        // matches q1 only, like f6 and f7
        let report = lat.add_flow("f9", hs(&[4, 10]), &mut s).unwrap();
        assert_eq!(report.ground, Some(id(&lat, &[10])));
        assert_eq!(s.grounded(id(&lat, &[10])).unwrap(), &fs(&[6, 7, 8]));
        s.check_invariants(&lat).unwrap();
    }

    #[test]
    fn unmatched_flow_gets_no_ground() {
        let (mut lat, mut s) = running();
        let report = lat.add_flow("f9", hs(&[3, 8, 9]), &mut s).unwrap();
        assert_eq!(report.ground, None);
        assert_eq!(s.ground_of(8).unwrap(), None);
        s.check_invariants(&lat).unwrap();
    }

    #[test]
    fn genitor_eclipse_moves_grounded_flows() {
        // a,b on f0; a,c on f1; query {a} targets ({f0,f1},{a}) which also
        // grounds both flows. Adding f2 = {a,d} widens {a} to three flows but
        // keeps the same intent, so add a query over a concept that splits.
        let mut ctx = FormalContext::new();
        for l in ["a", "b", "c", "d"] {
            ctx.add_matchfield(l, "").unwrap();
        }
        ctx.add_flow("f0", fs(&[0, 1, 3])).unwrap();
        ctx.add_flow("f1", fs(&[0, 2, 3])).unwrap();
        let q = vec![Query::new(0, "qa", fs(&[0]), &ctx).unwrap()];
        let mut lat = ConceptLattice::build(ctx);
        let mut s = MeasurementSupport::compute(&lat, q).unwrap();
        let g_old = id(&lat, &[1, 4]);
        assert_eq!(s.grounded(g_old).unwrap(), &fs(&[0, 1]));
        // f2 carries a but not d: the new concept {a} takes over the projection
        let report = lat.add_flow("f2", fs(&[0, 1, 2]), &mut s).unwrap();
        let g_new = id(&lat, &[1]);
        assert_eq!(report.eclipsed, vec![(g_old, g_new)]);
        assert_eq!(s.grounded(g_new).unwrap(), &fs(&[0, 1, 2]));
        assert!(s.grounded(g_old).is_none());
        s.check_invariants(&lat).unwrap();
        let scratch = MeasurementSupport::compute(&lat, s.queries().to_vec()).unwrap();
        assert_eq!(scratch.normalized(&lat), s.normalized(&lat));
    }

    #[test]
    fn hex_vectors() {
        let v = QueryVector::from_bitstring("10101").unwrap();
        assert_eq!(v.to_hex(), "15");
        assert_eq!(QueryVector::from_hex("15", 5).unwrap(), v);
        assert!(QueryVector::from_hex("35", 5).is_err());
        assert_eq!(QueryVector::zeros(0).to_hex(), "");
        assert_eq!(QueryVector::from_bitstring("1000").unwrap().to_hex(), "8");
    }

    #[test]
    fn dump_round_trip_and_tamper() {
        let (lat, s) = running();
        let dump = s.to_dump(&lat);
        let back = MeasurementSupport::from_dump(&lat, &dump).unwrap();
        back.check_invariants(&lat).unwrap();
        assert_eq!(back.normalized(&lat), s.normalized(&lat));
        let mut bad = dump.clone();
        let c10 = id(&lat, &[1, 5, 7, 10]);
        bad.vectors.insert(c10, "14".into());
        let back = MeasurementSupport::from_dump(&lat, &bad).unwrap();
        let err = back.check_invariants(&lat).unwrap_err();
        assert!(matches!(err, Error::Invariant { name: "vector-definition", .. }));
    }
}
