//! Liveness graphs: finite automata over fields whose accepted language is a
//! set of live access paths.
//!
//! Field nodes are identified by their field and site labels, so two nodes
//! with the same identity are the same node. In `NonDet` mode every node
//! carries one site; in `Det` mode a node carries a set of sites and every
//! state has at most one successor per field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;

use crate::ir::{Field, StmtId, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Mode {
    NonDet,
    Det,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SiteLabel {
    Use(StmtId),
    Alloc(StmtId),
}

impl fmt::Display for SiteLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteLabel::Use(s) => write!(f, "{s}"),
            SiteLabel::Alloc(s) => write!(f, "a{s}"),
        }
    }
}

pub type Labels = BTreeSet<SiteLabel>;

pub fn labels_of(sites: impl IntoIterator<Item = SiteLabel>) -> Labels {
    sites.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccessPath {
    pub root: Var,
    pub fields: Vec<Field>,
}

impl AccessPath {
    pub fn var(root: Var) -> AccessPath {
        AccessPath { root, fields: vec![] }
    }

    pub fn new(root: Var, fields: impl IntoIterator<Item = Field>) -> AccessPath {
        AccessPath { root, fields: fields.into_iter().collect() }
    }

    pub fn field(&self, f: Field) -> AccessPath {
        let mut p = self.clone();
        p.fields.push(f);
        p
    }

    /// Number of links named: the root plus one per field.
    pub fn len(&self) -> usize {
        1 + self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn has_prefix(&self, prefix: &AccessPath) -> bool {
        self.root == prefix.root && self.fields.starts_with(&prefix.fields)
    }

    pub fn prefixes(&self) -> impl Iterator<Item = AccessPath> + '_ {
        (0..=self.fields.len()).map(|i| AccessPath { root: self.root.clone(), fields: self.fields[..i].to_vec() })
    }
}

impl fmt::Display for AccessPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)?;
        for fl in &self.fields {
            write!(f, ".{fl}")?;
        }
        Ok(())
    }
}

impl Serialize for AccessPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Identity of a field node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub field: Field,
    pub labels: Labels,
}

impl NodeKey {
    pub fn new(field: Field, labels: Labels) -> NodeKey {
        NodeKey { field, labels }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ls: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        if ls.len() == 1 {
            write!(f, "{}_{}", self.field, ls[0])
        } else {
            write!(f, "{}_{{{}}}", self.field, ls.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Root {
    /// Whether the bare variable itself is live.
    pub accepting: bool,
    pub succ: BTreeSet<NodeKey>,
}

/// A state of the automaton: a root variable or a field node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Root(Var),
    Node(NodeKey),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LivenessGraph {
    mode: Mode,
    roots: BTreeMap<Var, Root>,
    nodes: BTreeMap<NodeKey, BTreeSet<NodeKey>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("path has {fields} fields but {labels} label sets were given")]
    Arity { fields: usize, labels: usize },
    #[error("non-deterministic graphs need exactly one site per node")]
    NotSingleton,
    #[error("graphs of different modes cannot be combined")]
    ModeMismatch,
}

static SCANS: AtomicUsize = AtomicUsize::new(0);
static VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// (scans, violations) of the invariant sweep run after every graph
/// operation in debug builds.
pub fn invariant_counters() -> (usize, usize) {
    (SCANS.load(Ordering::Relaxed), VIOLATIONS.load(Ordering::Relaxed))
}

impl LivenessGraph {
    pub fn empty(mode: Mode) -> LivenessGraph {
        LivenessGraph { mode, roots: BTreeMap::new(), nodes: BTreeMap::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn roots(&self) -> impl Iterator<Item = (&Var, &Root)> {
        self.roots.iter()
    }

    pub fn root(&self, v: &Var) -> Option<&Root> {
        self.roots.get(v)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeKey, &BTreeSet<NodeKey>)> {
        self.nodes.iter()
    }

    pub fn succ(&self, s: &State) -> &BTreeSet<NodeKey> {
        static NONE: BTreeSet<NodeKey> = BTreeSet::new();
        match s {
            State::Root(v) => self.roots.get(v).map(|r| &r.succ).unwrap_or(&NONE),
            State::Node(k) => self.nodes.get(k).unwrap_or(&NONE),
        }
    }

    pub fn is_accepting(&self, s: &State) -> bool {
        match s {
            State::Root(v) => self.roots.get(v).is_some_and(|r| r.accepting),
            State::Node(k) => self.nodes.contains_key(k),
        }
    }

    /// Whether any label in the graph is an allocation site.
    pub fn has_alloc_labels(&self) -> bool {
        self.nodes.keys().any(|k| k.labels.iter().any(|l| matches!(l, SiteLabel::Alloc(_))))
    }

    fn touch_root(&mut self, v: &Var) -> &mut Root {
        self.roots.entry(v.clone()).or_default()
    }

    /// Adds `v` as a live bare variable.
    pub fn insert_var(&mut self, v: &Var) {
        self.touch_root(v).accepting = true;
        self.checked();
    }

    /// Adds `path` and all its prefixes, `labels[i]` labelling the i-th field.
    pub fn insert_path(&mut self, path: &AccessPath, labels: &[Labels]) -> Result<(), GraphError> {
        if labels.len() != path.fields.len() {
            return Err(GraphError::Arity { fields: path.fields.len(), labels: labels.len() });
        }
        if labels.iter().any(|l| l.is_empty() || (self.mode == Mode::NonDet && l.len() != 1)) {
            return Err(GraphError::NotSingleton);
        }
        self.touch_root(&path.root).accepting = true;
        let mut cur = State::Root(path.root.clone());
        for (f, ls) in path.fields.iter().zip(labels) {
            let existing = match self.mode {
                Mode::Det => self.succ(&cur).iter().find(|k| &k.field == f).cloned(),
                Mode::NonDet => None,
            };
            let key = match existing {
                Some(old) => {
                    let mut merged = old.labels.clone();
                    merged.extend(ls.iter().copied());
                    let new = NodeKey::new(f.clone(), merged);
                    if new != old {
                        self.merge_keys(&[old], new.clone());
                    }
                    new
                }
                None => NodeKey::new(f.clone(), ls.clone()),
            };
            self.nodes.entry(key.clone()).or_default();
            self.add_edge(&cur, key.clone());
            cur = State::Node(key);
        }
        self.canonicalize();
        self.checked();
        Ok(())
    }

    fn add_edge(&mut self, from: &State, to: NodeKey) {
        match from {
            State::Root(v) => {
                self.touch_root(v).succ.insert(to);
            }
            State::Node(k) => {
                self.nodes.entry(k.clone()).or_default().insert(to);
            }
        }
    }

    /// Replaces every node in `old` by `new`, whose successors become the
    /// union of theirs.
    fn merge_keys(&mut self, old: &[NodeKey], new: NodeKey) {
        let mut succ = self.nodes.get(&new).cloned().unwrap_or_default();
        for o in old {
            if let Some(s) = self.nodes.remove(o) {
                succ.extend(s);
            }
        }
        let fix = |set: &mut BTreeSet<NodeKey>| {
            if old.iter().any(|o| set.contains(o)) {
                for o in old {
                    set.remove(o);
                }
                set.insert(new.clone());
            }
        };
        fix(&mut succ);
        self.nodes.insert(new.clone(), succ);
        for s in self.nodes.values_mut() {
            fix(s);
        }
        for r in self.roots.values_mut() {
            fix(&mut r.succ);
        }
    }

    /// Restores edge determinism in `Det` mode and drops unreachable nodes.
    fn canonicalize(&mut self) {
        if self.mode == Mode::Det {
            loop {
                let clash = self
                    .roots
                    .values()
                    .map(|r| &r.succ)
                    .chain(self.nodes.values())
                    .find_map(|succ| {
                        let mut by_field: BTreeMap<&Field, Vec<&NodeKey>> = BTreeMap::new();
                        for k in succ {
                            by_field.entry(&k.field).or_default().push(k);
                        }
                        by_field.into_values().find(|ks| ks.len() > 1).map(|ks| ks.into_iter().cloned().collect::<Vec<_>>())
                    });
                let Some(ks) = clash else { break };
                let labels: Labels = ks.iter().flat_map(|k| k.labels.iter().copied()).collect();
                let new = NodeKey::new(ks[0].field.clone(), labels);
                self.merge_keys(&ks, new);
            }
        }
        self.prune();
    }

    fn prune(&mut self) {
        self.roots.retain(|_, r| r.accepting || !r.succ.is_empty());
        let mut seen: BTreeSet<NodeKey> = BTreeSet::new();
        let mut stack: Vec<NodeKey> = self.roots.values().flat_map(|r| r.succ.iter().cloned()).collect();
        while let Some(k) = stack.pop() {
            if seen.insert(k.clone()) {
                if let Some(s) = self.nodes.get(&k) {
                    stack.extend(s.iter().cloned());
                }
            }
        }
        self.nodes.retain(|k, _| seen.contains(k));
    }

    pub fn union(&self, other: &LivenessGraph) -> Result<LivenessGraph, GraphError> {
        if self.mode != other.mode {
            return Err(GraphError::ModeMismatch);
        }
        let mut g = self.clone();
        g.union_in(other);
        Ok(g)
    }

    /// In-place union; panics on a mode mismatch.
    pub fn union_in(&mut self, other: &LivenessGraph) {
        assert_eq!(self.mode, other.mode, "mode mismatch");
        for (v, r) in &other.roots {
            let mine = self.touch_root(v);
            mine.accepting |= r.accepting;
            mine.succ.extend(r.succ.iter().cloned());
        }
        for (k, s) in &other.nodes {
            self.nodes.entry(k.clone()).or_default().extend(s.iter().cloned());
        }
        self.canonicalize();
        self.checked();
    }

    /// States reached by spelling `path` from its root.
    pub fn walk(&self, path: &AccessPath) -> BTreeSet<State> {
        let mut cur: BTreeSet<State> = BTreeSet::new();
        if self.roots.contains_key(&path.root) {
            cur.insert(State::Root(path.root.clone()));
        }
        for f in &path.fields {
            cur = cur.iter().flat_map(|s| self.succ(s).iter().filter(|k| &k.field == f).cloned().map(State::Node)).collect();
            if cur.is_empty() {
                break;
            }
        }
        cur
    }

    pub fn accepts(&self, path: &AccessPath) -> bool {
        self.walk(path).iter().any(|s| self.is_accepting(s))
    }

    /// Number of distinct paths from the roots to each node, saturating at 2.
    fn path_counts(&self) -> BTreeMap<&NodeKey, u8> {
        let mut count: BTreeMap<&NodeKey, u8> = self.nodes.keys().map(|k| (k, 0)).collect();
        loop {
            let mut next: BTreeMap<&NodeKey, u8> = self.nodes.keys().map(|k| (k, 0)).collect();
            for r in self.roots.values() {
                for k in &r.succ {
                    let c = next.get_mut(k).unwrap();
                    *c = (*c + 1).min(2);
                }
            }
            for (k, succ) in &self.nodes {
                let ck = count[k];
                for s in succ {
                    let c = next.get_mut(s).unwrap();
                    *c = (*c + ck).min(2);
                }
            }
            if next == count {
                return count;
            }
            count = next;
        }
    }

    /// Removes `pattern` and every path it prefixes. When the pattern's parent
    /// state is also reached by other paths, its edges stay and the result
    /// over-approximates.
    pub fn kill_prefix(&self, pattern: &AccessPath) -> LivenessGraph {
        let mut g = self.clone();
        let Some((last, parent)) = pattern.fields.split_last() else {
            g.roots.remove(&pattern.root);
            g.prune();
            g.checked();
            return g;
        };
        let parent = AccessPath { root: pattern.root.clone(), fields: parent.to_vec() };
        let states = self.walk(&parent);
        let counts = self.path_counts();
        for s in states {
            let exclusive = match &s {
                State::Root(_) => true,
                State::Node(k) => counts[k] == 1,
            };
            if !exclusive {
                continue;
            }
            match &s {
                State::Root(v) => {
                    if let Some(r) = g.roots.get_mut(v) {
                        r.succ.retain(|k| &k.field != last);
                    }
                }
                State::Node(k) => {
                    if let Some(succ) = g.nodes.get_mut(k) {
                        succ.retain(|k| &k.field != last);
                    }
                }
            }
        }
        g.prune();
        g.checked();
        g
    }

    /// The fragment `{to.σ | from.σ accepted}`. New field nodes of `to` carry
    /// `label`; σ keeps the labels it has here.
    pub fn gen_transfer(&self, from: &AccessPath, to: &AccessPath, label: SiteLabel) -> LivenessGraph {
        self.transfer_states(&self.walk(from), to, label)
    }

    /// Like `gen_transfer`, for an explicit set of source states: the
    /// suffixes readable from any of them are re-rooted at `to`.
    pub fn transfer_states(&self, states: &BTreeSet<State>, to: &AccessPath, label: SiteLabel) -> LivenessGraph {
        let mut out = LivenessGraph::empty(self.mode);
        if states.is_empty() {
            return out;
        }
        let accept_bare = states.iter().any(|s| self.is_accepting(s));
        let tails: BTreeSet<NodeKey> = states.iter().flat_map(|s| self.succ(s).iter().cloned()).collect();
        self.copy_reachable(&tails, &mut out);
        self.graft(&mut out, to, label, accept_bare, tails);
        out.canonicalize();
        out.checked();
        out
    }

    /// Copies the subgraph reachable from `from` into `out`.
    pub(crate) fn copy_reachable(&self, from: &BTreeSet<NodeKey>, out: &mut LivenessGraph) {
        let mut stack: Vec<NodeKey> = from.iter().cloned().collect();
        while let Some(k) = stack.pop() {
            if out.nodes.contains_key(&k) {
                continue;
            }
            let succ = self.nodes.get(&k).cloned().unwrap_or_default();
            stack.extend(succ.iter().cloned());
            out.nodes.insert(k, succ);
        }
    }

    /// Spells `to` into `out` with fresh `label` nodes, ending at `tails`.
    /// A bare `to` takes `accept_bare` as its acceptance.
    fn graft(&self, out: &mut LivenessGraph, to: &AccessPath, label: SiteLabel, accept_bare: bool, tails: BTreeSet<NodeKey>) {
        let root = out.touch_root(&to.root);
        if to.fields.is_empty() {
            root.accepting |= accept_bare;
            root.succ.extend(tails);
            return;
        }
        let keys: Vec<NodeKey> = to.fields.iter().map(|f| NodeKey::new(f.clone(), labels_of([label]))).collect();
        let mut cur = State::Root(to.root.clone());
        for k in &keys {
            out.nodes.entry(k.clone()).or_default();
            out.add_edge(&cur, k.clone());
            cur = State::Node(k.clone());
        }
        if let State::Node(k) = cur {
            out.nodes.get_mut(&k).unwrap().extend(tails);
        }
    }

    /// Every accepted path of length at most `k` (the bare root has length 1).
    pub fn extract_paths(&self, k: usize) -> BTreeSet<AccessPath> {
        let mut out = BTreeSet::new();
        if k == 0 {
            return out;
        }
        for (v, r) in &self.roots {
            if r.accepting {
                out.insert(AccessPath::var(v.clone()));
            }
            let mut stack: Vec<(Vec<Field>, BTreeSet<NodeKey>)> = vec![(vec![], r.succ.clone())];
            while let Some((fields, succ)) = stack.pop() {
                if fields.len() + 1 >= k {
                    continue;
                }
                let mut by_field: BTreeMap<&Field, BTreeSet<NodeKey>> = BTreeMap::new();
                for key in &succ {
                    by_field.entry(&key.field).or_default().insert(key.clone());
                }
                for (f, ks) in by_field {
                    let mut fs = fields.clone();
                    fs.push(f.clone());
                    out.insert(AccessPath::new(v.clone(), fs.clone()));
                    let next: BTreeSet<NodeKey> = ks.iter().flat_map(|k| self.nodes[k].iter().cloned()).collect();
                    stack.push((fs, next));
                }
            }
        }
        out
    }

    pub fn subset_upto(&self, other: &LivenessGraph, k: usize) -> bool {
        self.extract_paths(k).is_subset(&other.extract_paths(k))
    }

    /// Keeps only the roots satisfying `keep`.
    pub fn retain_roots(&self, mut keep: impl FnMut(&Var) -> bool) -> LivenessGraph {
        let mut g = self.clone();
        g.roots.retain(|v, _| keep(v));
        g.prune();
        g.checked();
        g
    }

    /// Renames roots; a root mapped to several names is duplicated.
    pub fn map_roots(&self, mut f: impl FnMut(&Var) -> Vec<Var>) -> LivenessGraph {
        let mut g = LivenessGraph::empty(self.mode);
        g.nodes = self.nodes.clone();
        for (v, r) in &self.roots {
            for w in f(v) {
                let mine = g.touch_root(&w);
                mine.accepting |= r.accepting;
                mine.succ.extend(r.succ.iter().cloned());
            }
        }
        g.canonicalize();
        g.checked();
        g
    }

    /// Builds a graph from raw parts; used by the alias and call-partition
    /// constructions, which produce node-level automata.
    pub fn from_parts(
        mode: Mode,
        roots: impl IntoIterator<Item = (Var, bool, BTreeSet<NodeKey>)>,
        nodes: impl IntoIterator<Item = (NodeKey, BTreeSet<NodeKey>)>,
    ) -> LivenessGraph {
        let mut g = LivenessGraph::empty(mode);
        for (v, acc, succ) in roots {
            let r = g.touch_root(&v);
            r.accepting |= acc;
            r.succ.extend(succ);
        }
        let node_list: Vec<(NodeKey, BTreeSet<NodeKey>)> = nodes.into_iter().collect();
        for (k, succ) in &node_list {
            g.nodes.entry(k.clone()).or_default().extend(succ.iter().cloned());
        }
        if mode == Mode::NonDet {
            g.split_multi_labels();
        }
        for s in g.nodes.values().cloned().collect::<Vec<_>>() {
            for k in s {
                g.nodes.entry(k).or_default();
            }
        }
        for r in g.roots.values().cloned().collect::<Vec<_>>() {
            for k in r.succ {
                g.nodes.entry(k).or_default();
            }
        }
        g.canonicalize();
        g.checked();
        g
    }

    /// NonDet nodes hold one site: a multi-site node becomes one node per
    /// site, each with the same edges.
    fn split_multi_labels(&mut self) {
        let split = |k: &NodeKey| -> Vec<NodeKey> {
            k.labels.iter().map(|l| NodeKey::new(k.field.clone(), labels_of([*l]))).collect()
        };
        let fix = |set: &BTreeSet<NodeKey>| -> BTreeSet<NodeKey> { set.iter().flat_map(&split).collect() };
        let mut nodes: BTreeMap<NodeKey, BTreeSet<NodeKey>> = BTreeMap::new();
        for (k, s) in &self.nodes {
            let s = fix(s);
            for nk in split(k) {
                nodes.entry(nk).or_default().extend(s.iter().cloned());
            }
        }
        self.nodes = nodes;
        for r in self.roots.values_mut() {
            r.succ = fix(&r.succ);
        }
    }

    /// Full invariant scan; `Err` names the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (k, succ) in &self.nodes {
            if k.labels.is_empty() {
                return Err(format!("node {k} has no labels"));
            }
            if self.mode == Mode::NonDet && k.labels.len() != 1 {
                return Err(format!("non-deterministic node {k} carries several sites"));
            }
            for s in succ {
                if !self.nodes.contains_key(s) {
                    return Err(format!("edge {k} -> {s} leaves the graph"));
                }
            }
        }
        if self.mode == Mode::Det {
            let sources = self.roots.values().map(|r| &r.succ).chain(self.nodes.values());
            for succ in sources {
                let fields: Vec<&Field> = succ.iter().map(|k| &k.field).collect();
                let distinct: BTreeSet<&Field> = fields.iter().copied().collect();
                if distinct.len() != fields.len() {
                    return Err("a state has two successors on one field".into());
                }
            }
        }
        let mut reach = self.clone();
        reach.prune();
        if reach.nodes.len() != self.nodes.len() {
            return Err("unreachable field node".into());
        }
        Ok(())
    }

    fn checked(&self) {
        if cfg!(debug_assertions) {
            SCANS.fetch_add(1, Ordering::Relaxed);
            if let Err(e) = self.check_invariants() {
                VIOLATIONS.fetch_add(1, Ordering::Relaxed);
                eprintln!("liveness graph invariant violated: {e}");
            }
        }
    }

    /// Graphviz rendering with a stable node order.
    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n  rankdir=LR;\n");
        let ids: BTreeMap<&NodeKey, usize> = self.nodes.keys().enumerate().map(|(i, k)| (k, i)).collect();
        for (v, r) in &self.roots {
            let shape = if r.accepting { "doublecircle" } else { "plaintext" };
            s += &format!("  \"v:{}\" [label=\"{}\", shape={shape}];\n", v.qualified(), v);
        }
        for (k, i) in &ids {
            s += &format!("  n{i} [label=\"{k}\", shape=ellipse];\n");
        }
        for (v, r) in &self.roots {
            for k in &r.succ {
                s += &format!("  \"v:{}\" -> n{} [label=\"{}\"];\n", v.qualified(), ids[k], k.field);
            }
        }
        for (k, succ) in &self.nodes {
            for t in succ {
                s += &format!("  n{} -> n{} [label=\"{}\"];\n", ids[k], ids[t], t.field);
            }
        }
        s += "}\n";
        s
    }
}

impl fmt::Display for LivenessGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (v, r) in &self.roots {
            let succ: Vec<String> = r.succ.iter().map(|k| k.to_string()).collect();
            parts.push(format!("{v}{}->[{}]", if r.accepting { "*" } else { "" }, succ.join(" ")));
        }
        for (k, succ) in &self.nodes {
            let succ: Vec<String> = succ.iter().map(|k| k.to_string()).collect();
            parts.push(format!("{k}->[{}]", succ.join(" ")));
        }
        write!(f, "{}", parts.join("; "))
    }
}

/// Extracted paths rendered as strings, handy for comparisons.
pub fn path_strings(paths: &BTreeSet<AccessPath>) -> BTreeSet<String> {
    paths.iter().map(|p| p.to_string()).collect()
}
