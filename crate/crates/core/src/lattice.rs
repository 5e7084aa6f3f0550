//! Concept lattice of a flow context.
//!
//! [`ConceptLattice::build`] descends from the top concept generating the
//! lower covers of each concept from the faces `h′ ∩ E`. [`ConceptLattice::add_flow`]
//! inserts one flow incrementally: every old intent either absorbs the flow
//! (modified concept) or meets the flow's matchfields in a new intent, whose
//! first producer in top-down order is its genitor.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::context::FormalContext;
use crate::error::{Error, Result};
use crate::measurement::{MeasurementSupport, Query, StatusDelta};

pub type ConceptId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub id: ConceptId,
    pub extent: BitSet,
    pub intent: BitSet,
    pub parents: BTreeSet<ConceptId>,
    pub children: BTreeSet<ConceptId>,
}

#[derive(Debug, Clone)]
pub struct ConceptLattice {
    ctx: FormalContext,
    concepts: Vec<Concept>,
    top: ConceptId,
    bottom: ConceptId,
    intent_index: HashMap<BitSet, ConceptId>,
    ops: u64,
}

/// Outcome of a single flow insertion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowAddReport {
    pub flow: usize,
    /// Old concepts whose extent absorbed the flow.
    pub modified: Vec<ConceptId>,
    /// `(new concept, genitor)` in creation order.
    pub created: Vec<(ConceptId, ConceptId)>,
    /// `(query index, old target, new target)`.
    pub retargeted: Vec<(usize, ConceptId, ConceptId)>,
    /// `(genitor, new concept)` pairs where the new concept took over the projection.
    pub eclipsed: Vec<(ConceptId, ConceptId)>,
    pub ground: Option<ConceptId>,
}

impl StatusDelta {
    fn merge_into(self, report: &mut FlowAddReport) {
        report.retargeted.extend(self.retargeted);
        if let Some(pair) = self.eclipsed {
            report.eclipsed.push(pair);
        }
    }
}

impl ConceptLattice {
    pub fn build(ctx: FormalContext) -> Self {
        let top_extent = ctx.all_flows();
        let top_intent = ctx.intent_of(&top_extent);
        let mut lat = ConceptLattice {
            ctx,
            concepts: Vec::new(),
            top: 0,
            bottom: 0,
            intent_index: HashMap::new(),
            ops: 0,
        };
        let top = lat.push_concept(top_extent, top_intent);
        lat.top = top;

        let num_h = lat.ctx.num_matchfields();
        let mut queue = VecDeque::from([top]);
        let mut candidates: Vec<(BitSet, BitSet)> = Vec::new();
        let mut by_extent: HashMap<BitSet, usize> = HashMap::new();
        while let Some(cid) = queue.pop_front() {
            candidates.clear();
            by_extent.clear();
            let (extent, intent) = {
                let c = &lat.concepts[cid];
                (c.extent.clone(), c.intent.clone())
            };
            for h in (0..num_h).filter(|&h| !intent.contains(h)) {
                let fh = extent.intersection(lat.ctx.columns_unchecked(h));
                lat.ops += 1;
                match by_extent.get(&fh) {
                    // same intersection: h belongs to the same face
                    Some(&i) => {
                        candidates[i].1.insert(h);
                    }
                    None => {
                        let mut child_intent = intent.clone();
                        child_intent.insert(h);
                        by_extent.insert(fh.clone(), candidates.len());
                        candidates.push((fh, child_intent));
                    }
                }
            }
            // maxima by extent inclusion; larger extents first
            candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
            let mut maxima: Vec<usize> = Vec::new();
            for i in 0..candidates.len() {
                let dominated = maxima.iter().any(|&m| {
                    lat.ops += 1;
                    candidates[i].0.is_subset(&candidates[m].0)
                });
                if !dominated {
                    maxima.push(i);
                }
            }
            for &m in &maxima {
                let (ext, int) = &candidates[m];
                let child = match lat.intent_index.get(int) {
                    Some(&id) => id,
                    None => {
                        let id = lat.push_concept(ext.clone(), int.clone());
                        queue.push_back(id);
                        id
                    }
                };
                lat.link(cid, child);
            }
        }
        lat.bottom = lat.intent_index[&lat.ctx.all_matchfields()];
        lat
    }

    fn push_concept(&mut self, extent: BitSet, intent: BitSet) -> ConceptId {
        let id = self.concepts.len();
        self.intent_index.insert(intent.clone(), id);
        self.concepts.push(Concept {
            id,
            extent,
            intent,
            parents: BTreeSet::new(),
            children: BTreeSet::new(),
        });
        id
    }

    fn link(&mut self, parent: ConceptId, child: ConceptId) {
        self.concepts[parent].children.insert(child);
        self.concepts[child].parents.insert(parent);
    }

    fn unlink(&mut self, parent: ConceptId, child: ConceptId) {
        self.concepts[parent].children.remove(&child);
        self.concepts[child].parents.remove(&parent);
    }

    pub fn context(&self) -> &FormalContext {
        &self.ctx
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, id: ConceptId) -> Result<&Concept> {
        self.concepts.get(id).ok_or(Error::UnknownConcept(id))
    }

    pub fn top(&self) -> ConceptId {
        self.top
    }

    pub fn bottom(&self) -> ConceptId {
        self.bottom
    }

    pub fn find_by_intent(&self, intent: &BitSet) -> Option<ConceptId> {
        self.intent_index.get(intent).copied()
    }

    /// Concept whose extent is exactly `{flow}`.
    pub fn flow_concept(&self, flow: usize) -> Result<ConceptId> {
        let f = self.ctx.flow(flow)?;
        self.find_by_intent(&f.matchfields)
            .ok_or_else(|| Error::invariant("flow-concept", format!("no concept for {}", f.name)))
    }

    /// Bitset operations performed so far by construction and updates.
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    pub fn leq(&self, a: ConceptId, b: ConceptId) -> Result<bool> {
        Ok(self.concept(a)?.extent.is_subset(&self.concept(b)?.extent))
    }

    pub fn meet(&self, a: ConceptId, b: ConceptId) -> Result<ConceptId> {
        let extent = self.concept(a)?.extent.intersection(&self.concept(b)?.extent);
        let intent = self.ctx.intent_of(&extent);
        self.find_by_intent(&intent)
            .ok_or_else(|| Error::invariant("complete-lattice", format!("meet of {a} and {b} missing")))
    }

    pub fn join(&self, a: ConceptId, b: ConceptId) -> Result<ConceptId> {
        let intent = self.concept(a)?.intent.intersection(&self.concept(b)?.intent);
        self.find_by_intent(&intent)
            .ok_or_else(|| Error::invariant("complete-lattice", format!("join of {a} and {b} missing")))
    }

    /// Meet of a non-empty family; `None` for an empty one.
    pub fn meet_all<I: IntoIterator<Item = ConceptId>>(&self, ids: I) -> Result<Option<ConceptId>> {
        let mut acc: Option<ConceptId> = None;
        for id in ids {
            acc = Some(match acc {
                None => self.concept(id)?.id,
                Some(a) => self.meet(a, id)?,
            });
        }
        Ok(acc)
    }

    /// Inserts a flow and keeps `support` in step with the new lattice.
    ///
    /// The flow is validated against the context before anything changes, so a
    /// rejected flow leaves both the lattice and the support untouched.
    pub fn add_flow(
        &mut self,
        name: &str,
        matchfields: BitSet,
        support: &mut MeasurementSupport,
    ) -> Result<FlowAddReport> {
        self.ctx.check_flow(name, &matchfields)?;
        support.check_matches(self)?;
        let mut report = self.insert_structural(name, matchfields, Some(support));
        report.ground = support.ground_new_flow(self, report.flow)?;
        Ok(report)
    }

    /// Inserts a flow without any measurement support attached.
    pub fn insert_flow(&mut self, name: &str, matchfields: BitSet) -> Result<FlowAddReport> {
        self.ctx.check_flow(name, &matchfields)?;
        Ok(self.insert_structural(name, matchfields, None))
    }

    fn insert_structural(
        &mut self,
        name: &str,
        matchfields: BitSet,
        mut support: Option<&mut MeasurementSupport>,
    ) -> FlowAddReport {
        let flow = self.ctx.push_flow_unchecked(name, matchfields.clone());
        let mut report = FlowAddReport {
            flow,
            ..Default::default()
        };

        let mut order: Vec<ConceptId> = (0..self.concepts.len()).collect();
        order.sort_by_key(|&c| (self.concepts[c].intent.len(), c));

        // modified and new concepts, in the order they were reached
        let mut touched: Vec<ConceptId> = Vec::new();
        for c in order {
            let meet = self.concepts[c].intent.intersection(&matchfields);
            self.ops += 1;
            if meet == self.concepts[c].intent {
                self.concepts[c].extent.insert(flow);
                report.modified.push(c);
                touched.push(c);
            } else if !self.intent_index.contains_key(&meet) {
                let mut extent = self.concepts[c].extent.clone();
                extent.insert(flow);
                let new = self.push_concept(extent, meet);
                self.link(new, c);
                self.update_order(new, c, &touched);
                touched.push(new);
                report.created.push((new, c));
                if let Some(s) = support.as_deref_mut() {
                    s.update_status(self, new, c).merge_into(&mut report);
                }
            }
        }

        self.top = self.intent_index[&self.ctx.intent_of(&self.ctx.all_flows())];
        self.bottom = self.intent_index[&self.ctx.all_matchfields()];
        report
    }

    /// Links a fresh concept below its upper covers, which are the most
    /// specific modified/new concepts with a strictly smaller intent, and drops
    /// genitor links that now pass through it.
    fn update_order(&mut self, new: ConceptId, genitor: ConceptId, touched: &[ConceptId]) {
        let intent = self.concepts[new].intent.clone();
        let mut candidates: Vec<ConceptId> = touched
            .iter()
            .copied()
            .filter(|&d| {
                self.ops += 1;
                let di = &self.concepts[d].intent;
                di.len() < intent.len() && di.is_subset(&intent)
            })
            .collect();
        candidates.sort_by_key(|&d| std::cmp::Reverse((self.concepts[d].intent.len(), d)));
        let mut parents: Vec<ConceptId> = Vec::new();
        for d in candidates {
            let covered = parents.iter().any(|&p| {
                self.ops += 1;
                self.concepts[d].intent.is_subset(&self.concepts[p].intent)
            });
            if !covered {
                parents.push(d);
            }
        }
        for p in parents {
            self.link(p, new);
            if self.concepts[genitor].parents.contains(&p) {
                self.unlink(p, genitor);
            }
        }
    }

    /// Adds a matchfield value no flow carries yet. Only the bottom concept is
    /// affected: its intent grows, or a new empty-extent bottom appears below it.
    pub fn add_matchfield(
        &mut self,
        label: &str,
        field_kind: &str,
        support: Option<&mut MeasurementSupport>,
    ) -> Result<usize> {
        let h = self.ctx.add_matchfield(label, field_kind)?;
        let old = self.bottom;
        if self.concepts[old].extent.is_empty() {
            let old_intent = self.concepts[old].intent.clone();
            self.intent_index.remove(&old_intent);
            self.concepts[old].intent.insert(h);
            self.intent_index.insert(self.concepts[old].intent.clone(), old);
        } else {
            let new = self.push_concept(BitSet::new(), self.ctx.all_matchfields());
            self.link(old, new);
            self.bottom = new;
            if let Some(s) = support {
                s.extend_for_bottom(self, new);
            }
        }
        Ok(h)
    }

    /// Structural integrity: mutual closure, intent index, link symmetry and
    /// that links are exactly the covering pairs. Quadratic in the lattice size.
    pub fn check_integrity(&self) -> Result<()> {
        if self.intent_index.len() != self.concepts.len() {
            return Err(Error::invariant(
                "intent-index",
                format!("{} intents for {} concepts", self.intent_index.len(), self.concepts.len()),
            ));
        }
        for c in &self.concepts {
            if self.intent_index.get(&c.intent) != Some(&c.id) {
                return Err(Error::invariant("intent-index", format!("concept {}", c.id)));
            }
            if self.ctx.extent_of(&c.intent) != c.extent || self.ctx.intent_of(&c.extent) != c.intent {
                return Err(Error::invariant("mutual-closure", format!("concept {}", c.id)));
            }
            for &p in &c.parents {
                if !self.concepts[p].children.contains(&c.id) {
                    return Err(Error::invariant("link-symmetry", format!("{p} -> {}", c.id)));
                }
            }
            for &k in &c.children {
                if !self.concepts[k].parents.contains(&c.id) {
                    return Err(Error::invariant("link-symmetry", format!("{} -> {k}", c.id)));
                }
            }
            // upper covers: minimal concepts with strictly larger extent
            let above: Vec<&Concept> = self
                .concepts
                .iter()
                .filter(|d| d.extent.len() > c.extent.len() && c.extent.is_subset(&d.extent))
                .collect();
            let covers: BTreeSet<ConceptId> = above
                .iter()
                .filter(|d| {
                    !above
                        .iter()
                        .any(|e| e.extent.len() < d.extent.len() && e.extent.is_subset(&d.extent))
                })
                .map(|d| d.id)
                .collect();
            if covers != c.parents {
                return Err(Error::invariant(
                    "transitive-reduction",
                    format!("concept {} has parents {:?}, covers are {:?}", c.id, c.parents, covers),
                ));
            }
        }
        let top_intent = self.ctx.intent_of(&self.ctx.all_flows());
        if self.concepts[self.top].intent != top_intent {
            return Err(Error::invariant("top", format!("top is {}", self.top)));
        }
        if self.concepts[self.bottom].intent != self.ctx.all_matchfields() {
            return Err(Error::invariant("bottom", format!("bottom is {}", self.bottom)));
        }
        Ok(())
    }

    /// Set of `(parent intent, child intent)` pairs; id-independent view of the
    /// Hasse diagram.
    pub fn hasse_by_intent(&self) -> BTreeSet<(BitSet, BitSet)> {
        self.concepts
            .iter()
            .flat_map(|c| {
                c.children
                    .iter()
                    .map(move |&k| (c.intent.clone(), self.concepts[k].intent.clone()))
            })
            .collect()
    }

    pub fn intent_family(&self) -> BTreeSet<BitSet> {
        self.concepts.iter().map(|c| c.intent.clone()).collect()
    }

    pub fn to_dump(&self) -> LatticeDump {
        LatticeDump {
            concepts: self
                .concepts
                .iter()
                .map(|c| ConceptDump {
                    id: c.id,
                    intent: self.ctx.labels_of(&c.intent),
                    extent: self.ctx.names_of(&c.extent),
                    parents: c.parents.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Restores a dumped lattice over `ctx`, keeping concept ids.
    pub fn from_dump(ctx: FormalContext, dump: &LatticeDump) -> Result<Self> {
        let mut lat = ConceptLattice {
            ctx,
            concepts: Vec::new(),
            top: 0,
            bottom: 0,
            intent_index: HashMap::new(),
            ops: 0,
        };
        let mut entries: Vec<&ConceptDump> = dump.concepts.iter().collect();
        entries.sort_by_key(|c| c.id);
        for (i, c) in entries.iter().enumerate() {
            if c.id != i {
                return Err(Error::Format(format!("concept ids must be dense, found {}", c.id)));
            }
            let intent = lat.ctx.matchfield_set(&c.intent)?;
            let extent = lat.ctx.flow_set(&c.extent)?;
            if lat.intent_index.contains_key(&intent) {
                return Err(Error::Format(format!("concept {} repeats an intent", c.id)));
            }
            lat.push_concept(extent, intent);
        }
        for c in &entries {
            for &p in &c.parents {
                if p >= lat.concepts.len() {
                    return Err(Error::UnknownConcept(p));
                }
                lat.link(p, c.id);
            }
        }
        let top_intent = lat.ctx.intent_of(&lat.ctx.all_flows());
        lat.top = lat
            .find_by_intent(&top_intent)
            .ok_or_else(|| Error::Format("dump has no top concept".into()))?;
        lat.bottom = lat
            .find_by_intent(&lat.ctx.all_matchfields())
            .ok_or_else(|| Error::Format("dump has no bottom concept".into()))?;
        Ok(lat)
    }

    /// Graphviz rendering of the Hasse diagram with reduced labels: each
    /// matchfield is shown where it first appears going down, each flow where
    /// it first appears going up.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph lattice {\n  rankdir=TB;\n  node [shape=box, fontsize=10];\n");
        for c in &self.concepts {
            let mut inherited = BitSet::new();
            for &p in &c.parents {
                inherited.union_with(&self.concepts[p].intent);
            }
            let mut below = BitSet::new();
            for &k in &c.children {
                below.union_with(&self.concepts[k].extent);
            }
            let own_h = self.ctx.labels_of(&c.intent.difference(&inherited)).join("\\n");
            let own_f = self.ctx.names_of(&c.extent.difference(&below)).join(", ");
            let _ = writeln!(
                out,
                "  c{} [label=\"c{}\\n{}\\n{}\"];",
                c.id,
                c.id,
                own_h.replace('"', "\\\""),
                own_f
            );
        }
        for c in &self.concepts {
            for &k in &c.children {
                let _ = writeln!(out, "  c{} -> c{};", c.id, k);
            }
        }
        out.push_str("}\n");
        out
    }
}

impl FormalContext {
    #[inline]
    fn columns_unchecked(&self, h: usize) -> &BitSet {
        self.column(h).expect("matchfield id in range")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LatticeDump {
    pub concepts: Vec<ConceptDump>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ConceptDump {
    pub id: ConceptId,
    pub intent: Vec<String>,
    pub extent: Vec<String>,
    pub parents: Vec<ConceptId>,
}

/// Element to drop in [`rebuild_after_removal`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Removal {
    Flow(String),
    Query(String),
}

/// Removes a flow or a query and recomputes lattice and support from scratch.
/// Concept ids of the result are fresh.
pub fn rebuild_after_removal(
    lat: &ConceptLattice,
    support: &MeasurementSupport,
    removed: &Removal,
) -> Result<(ConceptLattice, MeasurementSupport)> {
    let mut ctx = lat.context().clone();
    let mut queries: Vec<Query> = support.queries().to_vec();
    match removed {
        Removal::Flow(name) => {
            let id = ctx.flow_id(name)?;
            ctx.remove_flow(id)?;
        }
        Removal::Query(label) => {
            let pos = queries
                .iter()
                .position(|q| &q.label == label)
                .ok_or_else(|| Error::UnknownQueryLabel(label.clone()))?;
            queries.remove(pos);
            for (i, q) in queries.iter_mut().enumerate() {
                q.id = i;
            }
        }
    }
    let lat = ConceptLattice::build(ctx);
    let support = MeasurementSupport::compute(&lat, queries)?;
    Ok((lat, support))
}
