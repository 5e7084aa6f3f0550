//! Flow entries, matchfield values and the incidence relation between them.
//!
//! The relation is stored twice: each flow keeps its matchfield set (row) and
//! each matchfield keeps the set of flows carrying it (column). The two image
//! operators and their closures are built on these.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::error::{Error, Result};

/// An opaque matchfield value such as `IPv4 src = 10/8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchfieldValue {
    pub id: usize,
    pub label: String,
    /// Header field the value belongs to, e.g. `ipv4_src`.
    pub field_kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub id: usize,
    pub name: String,
    pub matchfields: BitSet,
}

#[derive(Debug, Clone, Default)]
pub struct FormalContext {
    matchfields: Vec<MatchfieldValue>,
    labels: HashMap<String, usize>,
    flows: Vec<FlowEntry>,
    names: HashMap<String, usize>,
    columns: Vec<BitSet>,
    reject_nested: bool,
}

/// Field kind implied by a `kind = value` label; empty when there is no `=`.
pub fn field_kind_of(label: &str) -> String {
    label
        .split_once('=')
        .map(|(k, _)| k.trim().to_string())
        .unwrap_or_default()
}

impl FormalContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// When set, flows whose matchfields are a strict subset or superset of an
    /// installed flow are rejected too. Exact duplicates are always rejected.
    pub fn set_reject_nested(&mut self, on: bool) {
        self.reject_nested = on;
    }

    pub fn rejects_nested(&self) -> bool {
        self.reject_nested
    }

    pub fn num_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn num_matchfields(&self) -> usize {
        self.matchfields.len()
    }

    pub fn flows(&self) -> &[FlowEntry] {
        &self.flows
    }

    pub fn flow(&self, id: usize) -> Result<&FlowEntry> {
        self.flows.get(id).ok_or(Error::UnknownFlow(id))
    }

    pub fn matchfields(&self) -> &[MatchfieldValue] {
        &self.matchfields
    }

    pub fn matchfield(&self, id: usize) -> Result<&MatchfieldValue> {
        self.matchfields.get(id).ok_or(Error::UnknownMatchfield(id))
    }

    pub fn matchfield_id(&self, label: &str) -> Result<usize> {
        self.labels
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn flow_id(&self, name: &str) -> Result<usize> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownFlowName(name.to_string()))
    }

    /// Flows carrying matchfield `h` (the column `h′`).
    pub fn column(&self, h: usize) -> Result<&BitSet> {
        self.columns.get(h).ok_or(Error::UnknownMatchfield(h))
    }

    pub fn all_flows(&self) -> BitSet {
        BitSet::full(self.flows.len())
    }

    pub fn all_matchfields(&self) -> BitSet {
        BitSet::full(self.matchfields.len())
    }

    pub fn labels_of(&self, set: &BitSet) -> Vec<String> {
        set.iter()
            .map(|h| self.matchfields[h].label.clone())
            .collect()
    }

    pub fn names_of(&self, set: &BitSet) -> Vec<String> {
        set.iter().map(|f| self.flows[f].name.clone()).collect()
    }

    /// Resolves labels to a matchfield set.
    pub fn matchfield_set<S: AsRef<str>>(&self, labels: &[S]) -> Result<BitSet> {
        labels
            .iter()
            .map(|l| self.matchfield_id(l.as_ref()))
            .collect()
    }

    pub fn flow_set<S: AsRef<str>>(&self, names: &[S]) -> Result<BitSet> {
        names.iter().map(|n| self.flow_id(n.as_ref())).collect()
    }

    pub fn add_matchfield(&mut self, label: &str, field_kind: &str) -> Result<usize> {
        if self.labels.contains_key(label) {
            return Err(Error::DuplicateLabel(label.to_string()));
        }
        let id = self.matchfields.len();
        self.matchfields.push(MatchfieldValue {
            id,
            label: label.to_string(),
            field_kind: field_kind.to_string(),
        });
        self.labels.insert(label.to_string(), id);
        self.columns.push(BitSet::new());
        Ok(id)
    }

    /// Checks that a prospective flow is non-empty, references known
    /// matchfields and does not repeat an installed flow's matchfield set
    /// (nor nest with one, under the strict policy).
    pub fn check_flow(&self, name: &str, matchfields: &BitSet) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::DuplicateFlowName(name.to_string()));
        }
        if matchfields.is_empty() {
            return Err(Error::EmptyFlow(name.to_string()));
        }
        if let Some(h) = matchfields.iter().find(|&h| h >= self.matchfields.len()) {
            return Err(Error::UnknownMatchfield(h));
        }
        for other in &self.flows {
            let sub = matchfields.is_subset(&other.matchfields);
            let sup = other.matchfields.is_subset(matchfields);
            let (flow, other) = (name.to_string(), other.name.clone());
            match (sub, sup) {
                (true, true) => return Err(Error::DuplicateFlow { flow, other }),
                (true, false) if self.reject_nested => return Err(Error::SubsetFlow { flow, other }),
                (false, true) if self.reject_nested => return Err(Error::SupersetFlow { flow, other }),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn add_flow(&mut self, name: &str, matchfields: BitSet) -> Result<usize> {
        self.check_flow(name, &matchfields)?;
        Ok(self.push_flow_unchecked(name, matchfields))
    }

    pub(crate) fn push_flow_unchecked(&mut self, name: &str, matchfields: BitSet) -> usize {
        let id = self.flows.len();
        for h in matchfields.iter() {
            self.columns[h].insert(id);
        }
        self.names.insert(name.to_string(), id);
        self.flows.push(FlowEntry {
            id,
            name: name.to_string(),
            matchfields,
        });
        id
    }

    /// Removes a flow; later flows shift down by one id.
    pub fn remove_flow(&mut self, id: usize) -> Result<FlowEntry> {
        if id >= self.flows.len() {
            return Err(Error::UnknownFlow(id));
        }
        let removed = self.flows.remove(id);
        self.names.clear();
        for (i, f) in self.flows.iter_mut().enumerate() {
            f.id = i;
            self.names.insert(f.name.clone(), i);
        }
        self.rebuild_columns();
        Ok(removed)
    }

    fn rebuild_columns(&mut self) {
        self.columns = vec![BitSet::new(); self.matchfields.len()];
        for f in &self.flows {
            for h in f.matchfields.iter() {
                self.columns[h].insert(f.id);
            }
        }
    }

    fn check_flow_ids(&self, flows: &BitSet) -> Result<()> {
        match flows.iter().find(|&f| f >= self.flows.len()) {
            Some(f) => Err(Error::UnknownFlow(f)),
            None => Ok(()),
        }
    }

    fn check_matchfield_ids(&self, hs: &BitSet) -> Result<()> {
        match hs.iter().find(|&h| h >= self.matchfields.len()) {
            Some(h) => Err(Error::UnknownMatchfield(h)),
            None => Ok(()),
        }
    }

    /// Matchfields shared by every flow in `flows`; all of H for the empty set.
    pub fn image_of_flows(&self, flows: &BitSet) -> Result<BitSet> {
        self.check_flow_ids(flows)?;
        Ok(self.intent_of(flows))
    }

    /// Flows carrying every matchfield in `hs`; all flows for the empty set.
    pub fn image_of_matchfields(&self, hs: &BitSet) -> Result<BitSet> {
        self.check_matchfield_ids(hs)?;
        Ok(self.extent_of(hs))
    }

    pub fn close_matchfields(&self, hs: &BitSet) -> Result<BitSet> {
        self.check_matchfield_ids(hs)?;
        Ok(self.intent_of(&self.extent_of(hs)))
    }

    pub fn close_flows(&self, flows: &BitSet) -> Result<BitSet> {
        self.check_flow_ids(flows)?;
        Ok(self.extent_of(&self.intent_of(flows)))
    }

    pub(crate) fn intent_of(&self, flows: &BitSet) -> BitSet {
        let mut it = flows.iter();
        match it.next() {
            None => self.all_matchfields(),
            Some(first) => {
                let mut acc = self.flows[first].matchfields.clone();
                for f in it {
                    if acc.is_empty() {
                        break;
                    }
                    acc.intersect_with(&self.flows[f].matchfields);
                }
                acc
            }
        }
    }

    pub(crate) fn extent_of(&self, hs: &BitSet) -> BitSet {
        let mut it = hs.iter();
        match it.next() {
            None => self.all_flows(),
            Some(first) => {
                let mut acc = self.columns[first].clone();
                for h in it {
                    if acc.is_empty() {
                        break;
                    }
                    acc.intersect_with(&self.columns[h]);
                }
                acc
            }
        }
    }

    /// Checks that rows and columns describe the same relation.
    pub fn check_consistency(&self) -> Result<()> {
        for (h, col) in self.columns.iter().enumerate() {
            for f in &self.flows {
                if col.contains(f.id) != f.matchfields.contains(h) {
                    return Err(Error::invariant(
                        "incidence-consistency",
                        format!("flow {} / matchfield {}", f.name, self.matchfields[h].label),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parses the CSV cross-table: header `flow,<label>...`, rows `name,0/1,...`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_csv_str_with(text, false)
    }

    pub fn from_csv_str_with(text: &str, reject_nested: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut ctx = FormalContext::new();
        ctx.reject_nested = reject_nested;
        let mut width = 0;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
            if i == 0 {
                for label in rec.iter().skip(1) {
                    ctx.add_matchfield(label, &field_kind_of(label))
                        .map_err(|e| Error::Parse {
                            line,
                            msg: e.to_string(),
                        })?;
                }
                width = rec.len();
                continue;
            }
            let name = rec.get(0).unwrap_or_default();
            let mut row = BitSet::new();
            for (h, cell) in rec.iter().skip(1).enumerate() {
                match cell {
                    "1" | "x" | "X" => {
                        row.insert(h);
                    }
                    "0" | "" => {}
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("expected 0 or 1, found `{other}`"),
                        })
                    }
                }
            }
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} columns, found {}", width, rec.len()),
                });
            }
            ctx.add_flow(name, row)?;
        }
        Ok(ctx)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["flow".to_string()];
        header.extend(self.matchfields.iter().map(|m| m.label.clone()));
        w.write_record(&header).expect("in-memory write");
        for f in &self.flows {
            let mut row = vec![f.name.clone()];
            row.extend(
                (0..self.matchfields.len())
                    .map(|h| if f.matchfields.contains(h) { "1" } else { "0" }.to_string()),
            );
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 labels")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ContextDoc = serde_json::from_str(text)?;
        let mut ctx = FormalContext::new();
        ctx.reject_nested = doc.reject_nested;
        for m in &doc.matchfields {
            let kind = m
                .field_kind
                .clone()
                .unwrap_or_else(|| field_kind_of(&m.label));
            ctx.add_matchfield(&m.label, &kind)?;
        }
        for f in &doc.flows {
            let set = ctx.matchfield_set(&f.matchfields)?;
            ctx.add_flow(&f.name, set)?;
        }
        Ok(ctx)
    }

    pub fn to_doc(&self) -> ContextDoc {
        ContextDoc {
            reject_nested: self.reject_nested,
            matchfields: self
                .matchfields
                .iter()
                .map(|m| MatchfieldDoc {
                    label: m.label.clone(),
                    field_kind: Some(m.field_kind.clone()),
                })
                .collect(),
            flows: self
                .flows
                .iter()
                .map(|f| FlowDoc {
                    name: f.name.clone(),
                    matchfields: self.labels_of(&f.matchfields),
                })
                .collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("serializable")
    }

    /// Loads either format; JSON is recognised by a leading `{`.
    pub fn from_str_auto(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json_str(text)
        } else {
            Self::from_csv_str(text)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_str_auto(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextDoc {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reject_nested: bool,
    pub matchfields: Vec<MatchfieldDoc>,
    pub flows: Vec<FlowDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchfieldDoc {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_kind: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDoc {
    pub name: String,
    pub matchfields: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::{hs, example};

    #[test]
    fn image_of_flows_examples() {
        let ctx = example();
        let f04: BitSet = [0, 4].into_iter().collect();
        assert_eq!(ctx.image_of_flows(&f04).unwrap(), hs(&[1, 7, 9]));
        assert_eq!(ctx.image_of_flows(&BitSet::new()).unwrap(), hs(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]));
        assert!(ctx.image_of_flows(&ctx.all_flows()).unwrap().is_empty());
        assert!(matches!(
            ctx.image_of_flows(&BitSet::singleton(8)),
            Err(Error::UnknownFlow(8))
        ));
    }

    #[test]
    fn image_of_matchfields_examples() {
        let ctx = example();
        let fl = |v: &[usize]| v.iter().copied().collect::<BitSet>();
        assert_eq!(ctx.image_of_matchfields(&hs(&[1, 7])).unwrap(), fl(&[0, 1, 4, 5]));
        assert_eq!(ctx.image_of_matchfields(&BitSet::new()).unwrap(), ctx.all_flows());
        assert_eq!(ctx.image_of_matchfields(&hs(&[2, 6, 8])).unwrap(), fl(&[2, 3]));
        assert!(ctx.image_of_matchfields(&BitSet::singleton(10)).is_err());
    }

    #[test]
    fn closure_examples() {
        let ctx = example();
        assert_eq!(ctx.close_matchfields(&hs(&[1])).unwrap(), hs(&[1, 7]));
        assert_eq!(ctx.close_matchfields(&hs(&[1, 7])).unwrap(), hs(&[1, 7]));
        assert_eq!(ctx.close_matchfields(&hs(&[10])).unwrap(), hs(&[10]));
    }

    #[test]
    fn example_csv_loads() {
        let ctx = example();
        assert_eq!(ctx.num_flows(), 8);
        assert_eq!(ctx.num_matchfields(), 10);
        assert_eq!(ctx.matchfields()[6].field_kind, "IPv4 src");
        ctx.check_consistency().unwrap();
    }

    #[test]
    fn rejects_empty_row() {
        let text = "flow,a,b\nf0,1,0\nf1,0,0\n";
        assert!(matches!(FormalContext::from_csv_str(text), Err(Error::EmptyFlow(n)) if n == "f1"));
    }

    #[test]
    fn rejects_duplicate_of_f2() {
        let mut text = crate::testdata::EXAMPLE_CSV.to_string();
        text.push_str("f8,0,1,0,0,0,1,0,1,0,0\n");
        match FormalContext::from_csv_str(&text) {
            Err(Error::DuplicateFlow { flow, other }) => {
                assert_eq!(flow, "f8");
                assert_eq!(other, "f2");
            }
            other => panic!("expected duplicate rejection, got {other:?}"),
        }
    }

    #[test]
    fn nested_flows_only_rejected_when_strict() {
        let text = "flow,a,b\nf0,1,1\nf1,1,0\n";
        assert_eq!(FormalContext::from_csv_str(text).unwrap().num_flows(), 2);
        match FormalContext::from_csv_str_with(text, true) {
            Err(Error::SubsetFlow { flow, other }) => assert_eq!((flow.as_str(), other.as_str()), ("f1", "f0")),
            other => panic!("{other:?}"),
        }
        let mut ctx = FormalContext::from_csv_str_with("flow,a,b\nf0,1,0\n", true).unwrap();
        assert!(matches!(ctx.add_flow("f1", [0, 1].into_iter().collect()), Err(Error::SupersetFlow { .. })));
        let back = FormalContext::from_json_str(&ctx.to_json_string()).unwrap();
        assert!(back.rejects_nested());
    }

    #[test]
    fn rejects_bad_cells() {
        let text = "flow,a,b\nf0,1,2\n";
        assert!(matches!(FormalContext::from_csv_str(text), Err(Error::Parse { line: 2, .. })));
        let text = "flow,a,b\nf0,1\n";
        assert!(matches!(FormalContext::from_csv_str(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let ctx = example();
        let again = FormalContext::from_csv_str(&ctx.to_csv_string()).unwrap();
        let json = FormalContext::from_json_str(&ctx.to_json_string()).unwrap();
        for other in [&again, &json] {
            assert_eq!(other.flows(), ctx.flows());
            assert_eq!(other.matchfields(), ctx.matchfields());
        }
    }

    #[test]
    fn remove_flow_renumbers() {
        let mut ctx = example();
        let gone = ctx.remove_flow(3).unwrap();
        assert_eq!(gone.name, "f3");
        assert_eq!(ctx.flow_id("f4").unwrap(), 3);
        ctx.check_consistency().unwrap();
        assert_eq!(ctx.image_of_matchfields(&hs(&[2, 6, 8])).unwrap(), BitSet::singleton(2));
    }
}
