//! Whole-program liveness with value contexts. At each call the live paths
//! after it are split three ways: those the callee itself may define are
//! passed through its body, those only deeper callees may define are
//! memoized in it flow-insensitively, and the rest bypass the call.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::alias::{AliasOracle, Link, PtsState};
use crate::apgraph::{AccessPath, LivenessGraph, NodeKey, SiteLabel, State};
use crate::ir::{Point, Procedure, Program, Scope, Side, StmtId, StmtKind, Var};
use crate::liveness::{self, CallHandler, Options, ProcResult, Variant};

/// Links a procedure may overwrite, directly and through its callees.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DefSummary {
    #[serde(serialize_with = "links_json")]
    pub direct: BTreeSet<Link>,
    #[serde(serialize_with = "links_json")]
    pub transitive: BTreeSet<Link>,
}

fn links_json<S: serde::Serializer>(ls: &BTreeSet<Link>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(ls.iter().map(|l| l.to_string()))
}

/// Per-procedure def summaries over the call graph.
pub fn compute_def_summaries(oracle: &AliasOracle) -> Vec<DefSummary> {
    let prog = oracle.program();
    let direct: Vec<BTreeSet<Link>> = prog
        .procs
        .iter()
        .map(|p| {
            let mut d = BTreeSet::new();
            for s in &p.stmts {
                if let Some(v) = s.defined_var() {
                    if v.is_global() {
                        d.insert(Link::Var(v.clone()));
                    }
                }
                if let StmtKind::Store(x, f, _) | StmtKind::StoreAddrOf(x, f, _) = &s.kind {
                    let st = oracle.state(Point::at_in(s.id));
                    for o in st.var(x) {
                        d.insert(Link::field(&o, f));
                    }
                }
            }
            d
        })
        .collect();
    let cg = oracle.call_graph();
    (0..prog.procs.len())
        .map(|pi| DefSummary {
            direct: direct[pi].clone(),
            transitive: cg.cone[pi].iter().flat_map(|&c| direct[c].iter().cloned()).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Bypass,
    Memo,
    Pass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallPartition {
    pub pass: LivenessGraph,
    pub memoize: LivenessGraph,
    pub bypass: LivenessGraph,
}

/// Splits `after` by what the callee cone may define. A path takes the
/// strongest class among the links its prefixes may name.
pub fn partition_at_call(oracle: &AliasOracle, call: StmtId, callee: &DefSummary, after: &LivenessGraph) -> CallPartition {
    let mut st: PtsState = oracle.state(Point::at_in(call)).clone();
    st.join(oracle.state(Point::at_out(call)));
    let class_of = |ls: &BTreeSet<Link>| -> Class {
        ls.iter()
            .map(|l| {
                if callee.direct.contains(l) {
                    Class::Pass
                } else if callee.transitive.contains(l) {
                    Class::Memo
                } else {
                    Class::Bypass
                }
            })
            .max()
            .unwrap_or(Class::Bypass)
    };

    // product of the graph with the link automaton, tracking the class so far
    type PState = (State, BTreeSet<Link>, Class);
    let mut seen: BTreeSet<PState> = BTreeSet::new();
    let mut edges: BTreeMap<PState, BTreeSet<PState>> = BTreeMap::new();
    let mut stack: Vec<PState> = Vec::new();
    for (v, _) in after.roots() {
        let ls = BTreeSet::from([Link::Var(v.clone())]);
        let c = class_of(&ls);
        stack.push((State::Root(v.clone()), ls, c));
    }
    while let Some(ps) = stack.pop() {
        if !seen.insert(ps.clone()) {
            continue;
        }
        let (s, ls, c) = &ps;
        let mut out = BTreeSet::new();
        for k in after.succ(s) {
            let next: BTreeSet<Link> = ls.iter().flat_map(|l| st.step(l, &k.field)).collect();
            let c2 = (*c).max(class_of(&next));
            let n = (State::Node(k.clone()), next, c2);
            out.insert(n.clone());
            stack.push(n);
        }
        edges.insert(ps, out);
    }

    let project = |class: Class| -> LivenessGraph {
        // product states from which an accepted path of this class ends
        let mut useful: BTreeSet<&PState> = BTreeSet::new();
        loop {
            let before = useful.len();
            for (ps, out) in &edges {
                let ends_here = ps.2 == class && after.is_accepting(&ps.0);
                if ends_here || out.iter().any(|n| useful.contains(n)) {
                    useful.insert(ps);
                }
            }
            if useful.len() == before {
                break;
            }
        }
        let mut roots: BTreeMap<Var, (bool, BTreeSet<NodeKey>)> = BTreeMap::new();
        let mut nodes: BTreeMap<NodeKey, BTreeSet<NodeKey>> = BTreeMap::new();
        for ps in &useful {
            let succ: BTreeSet<NodeKey> = edges[*ps]
                .iter()
                .filter(|n| useful.contains(n))
                .map(|n| match &n.0 {
                    State::Node(k) => k.clone(),
                    State::Root(_) => unreachable!(),
                })
                .collect();
            match &ps.0 {
                State::Root(v) => {
                    let e = roots.entry(v.clone()).or_default();
                    e.0 |= ps.2 == class && after.is_accepting(&ps.0);
                    e.1.extend(succ);
                }
                State::Node(k) => nodes.entry(k.clone()).or_default().extend(succ),
            }
        }
        LivenessGraph::from_parts(after.mode(), roots.into_iter().map(|(v, (a, s))| (v, a, s)), nodes)
    };
    CallPartition { pass: project(Class::Pass), memoize: project(Class::Memo), bypass: project(Class::Bypass) }
}

/// Caller names as seen inside a fresh frame of `callee`: its current
/// locals become older frames.
pub fn enter_names(g: &LivenessGraph, callee: &str) -> LivenessGraph {
    g.map_roots(|v| match &v.scope {
        Scope::Local(p) if &**p == callee => vec![v.shadowed()],
        _ => vec![v.clone()],
    })
}

/// Maps a callee's entry liveness back to the point before the call:
/// formals read their actuals, callee frame locals vanish and older
/// frames may be the caller's own. Names outside `scope` are dropped.
pub fn map_back(entry: &LivenessGraph, callee: &Procedure, args: &[Var], call: StmtId, scope: &BTreeSet<Var>) -> LivenessGraph {
    let mut g = entry
        .retain_roots(|v| !matches!(&v.scope, Scope::Local(p) if *p == callee.name))
        .map_roots(|v| match &v.scope {
            Scope::Shadow(p) if *p == callee.name => vec![v.unshadowed(), v.clone()],
            _ => vec![v.clone()],
        });
    for (f, a) in callee.formals.iter().zip(args) {
        g.union_in(&entry.gen_transfer(&AccessPath::var(f.clone()), &AccessPath::var(a.clone()), SiteLabel::Use(call)));
    }
    g.retain_roots(|v| scope.contains(v))
}

#[derive(Debug, Clone)]
pub struct CallRecord {
    pub callee_ctx: usize,
    pub partition: CallPartition,
}

#[derive(Debug, Clone)]
pub struct Context {
    pub proc_index: usize,
    /// Liveness after the exit, flow-sensitively threaded through the body.
    pub boundary: LivenessGraph,
    /// Live everywhere in the body; only deeper callees may define it.
    pub memo: LivenessGraph,
    pub result: Option<ProcResult>,
    /// Value before the entry, memoized paths included.
    pub entry: LivenessGraph,
    /// Paths bypassed around calls into this context, live throughout it.
    pub attached: LivenessGraph,
    pub calls: BTreeMap<StmtId, CallRecord>,
    callers: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterprocError {
    #[error("program has no `main`")]
    NoMain,
    #[error("value contexts did not stabilize after {0} analyses")]
    NoFixpoint(usize),
    #[error("more than {0} value contexts")]
    TooManyContexts(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct InterprocOptions {
    pub liveness: Options,
    /// Split live paths at calls; when off every path is passed.
    pub partition: bool,
    pub max_contexts: usize,
    pub max_analyses: usize,
}

impl Default for InterprocOptions {
    fn default() -> InterprocOptions {
        InterprocOptions { liveness: Options::default(), partition: true, max_contexts: 5_000, max_analyses: 200_000 }
    }
}

pub struct Analysis<'a, 'p> {
    pub oracle: &'a AliasOracle<'p>,
    pub variant: Variant,
    pub opts: InterprocOptions,
    pub summaries: Vec<DefSummary>,
    pub contexts: Vec<Context>,
    /// Per procedure and statement index: a call-free path to the exit
    /// starts right after the statement.
    free_after: Vec<Vec<bool>>,
    /// Same, starting right before the statement.
    free_before: Vec<Vec<bool>>,
    reachable: BTreeSet<usize>,
}

fn call_free(p: &Procedure) -> (Vec<bool>, Vec<bool>) {
    let n = p.stmts.len();
    let mut before = vec![false; n];
    before[p.exit()] = true;
    loop {
        let mut changed = false;
        for i in 0..n {
            if before[i] || p.stmts[i].is_call() {
                continue;
            }
            if p.succ[i].iter().any(|&j| before[j]) {
                before[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let after = (0..n).map(|i| i == p.exit() || p.succ[i].iter().any(|&j| before[j])).collect();
    (before, after)
}

struct Calls<'c, 'a, 'p> {
    oracle: &'a AliasOracle<'p>,
    summaries: &'c [DefSummary],
    contexts: &'c mut Vec<Context>,
    worklist: &'c mut VecDeque<usize>,
    current: usize,
    proc_: &'c Procedure,
    memo: LivenessGraph,
    free_after: &'c [bool],
    partition: bool,
    max_contexts: usize,
    overflow: bool,
    records: BTreeMap<StmtId, CallRecord>,
}

impl CallHandler for Calls<'_, '_, '_> {
    fn call(&mut self, stmt: StmtId, callee: &str, args: &[Var], after: &LivenessGraph) -> LivenessGraph {
        let prog = self.oracle.program();
        let ci = prog.proc_index(callee).expect("call targets resolve at parse time");
        let c = &prog.procs[ci];
        let mut input = after.clone();
        if self.free_after[self.proc_.index_of(stmt).unwrap()] && !self.memo.is_empty() {
            input.union_in(&self.memo);
        }
        let partition = if self.partition {
            partition_at_call(self.oracle, stmt, &self.summaries[ci], &input)
        } else {
            // older frames of the callee keep their split: their names collide
            // with the caller's own frame once inside
            let older = |v: &Var| matches!(&v.scope, Scope::Shadow(p) if **p == *callee);
            let mut part = partition_at_call(self.oracle, stmt, &self.summaries[ci], &input.retain_roots(older));
            part.pass.union_in(&input.retain_roots(|v| !older(v)));
            part
        };
        let boundary = enter_names(&partition.pass, callee);
        let memo = enter_names(&partition.memoize, callee);
        let found = self.contexts.iter().position(|k| k.proc_index == ci && k.boundary == boundary && k.memo == memo);
        let k = match found {
            Some(k) => k,
            None => {
                if self.contexts.len() >= self.max_contexts {
                    self.overflow = true;
                    return after.clone();
                }
                let mode = input.mode();
                self.contexts.push(Context {
                    proc_index: ci,
                    boundary,
                    memo: memo.clone(),
                    result: None,
                    entry: memo,
                    attached: LivenessGraph::empty(mode),
                    calls: BTreeMap::new(),
                    callers: BTreeSet::new(),
                });
                self.worklist.push_back(self.contexts.len() - 1);
                self.contexts.len() - 1
            }
        };
        self.contexts[k].callers.insert(self.current);
        let caller = prog.proc_index(&self.proc_.name).unwrap();
        let mut before = map_back(&self.contexts[k].entry, c, args, stmt, self.oracle.scope_roots(caller));
        before.union_in(&partition.bypass);
        self.records.insert(stmt, CallRecord { callee_ctx: k, partition });
        before
    }
}

impl<'a, 'p> Analysis<'a, 'p> {
    pub fn run(oracle: &'a AliasOracle<'p>, variant: Variant, opts: InterprocOptions) -> Result<Analysis<'a, 'p>, InterprocError> {
        let prog = oracle.program();
        let main = prog.proc_index("main").ok_or(InterprocError::NoMain)?;
        let (free_before, free_after): (Vec<_>, Vec<_>) = prog.procs.iter().map(call_free).unzip();
        let mode = variant.mode();
        let mut a = Analysis {
            oracle,
            variant,
            opts,
            summaries: compute_def_summaries(oracle),
            contexts: vec![Context {
                proc_index: main,
                boundary: LivenessGraph::empty(mode),
                memo: LivenessGraph::empty(mode),
                result: None,
                entry: LivenessGraph::empty(mode),
                attached: LivenessGraph::empty(mode),
                calls: BTreeMap::new(),
                callers: BTreeSet::new(),
            }],
            free_after,
            free_before,
            reachable: BTreeSet::new(),
        };
        let mut worklist: VecDeque<usize> = VecDeque::from([0]);
        let mut analyses = 0;
        while let Some(k) = worklist.pop_front() {
            if worklist.contains(&k) {
                continue;
            }
            analyses += 1;
            if analyses > opts.max_analyses {
                return Err(InterprocError::NoFixpoint(opts.max_analyses));
            }
            a.analyze(k, &mut worklist)?;
        }
        a.mark_reachable();
        a.attach_bypass();
        Ok(a)
    }

    fn analyze(&mut self, k: usize, worklist: &mut VecDeque<usize>) -> Result<(), InterprocError> {
        let prog = self.oracle.program();
        let pi = self.contexts[k].proc_index;
        let p = &prog.procs[pi];
        let boundary = self.contexts[k].boundary.clone();
        let memo = self.contexts[k].memo.clone();
        let mut calls = Calls {
            oracle: self.oracle,
            summaries: &self.summaries,
            contexts: &mut self.contexts,
            worklist,
            current: k,
            proc_: p,
            memo: memo.clone(),
            free_after: &self.free_after[pi],
            partition: self.opts.partition,
            max_contexts: self.opts.max_contexts,
            overflow: false,
            records: BTreeMap::new(),
        };
        let r = liveness::run_variant(self.oracle, p, self.variant, &boundary, &self.opts.liveness, &mut calls);
        if calls.overflow {
            return Err(InterprocError::TooManyContexts(self.opts.max_contexts));
        }
        let records = std::mem::take(&mut calls.records);
        let mut entry = r.value_in[p.entry()].clone();
        entry.union_in(&memo);
        let ctx = &mut self.contexts[k];
        ctx.calls = records;
        ctx.result = Some(r);
        if ctx.entry != entry {
            ctx.entry = entry;
            for &c in &ctx.callers.clone() {
                if !worklist.contains(&c) {
                    worklist.push_back(c);
                }
            }
        }
        Ok(())
    }

    fn mark_reachable(&mut self) {
        let mut stack = vec![0];
        while let Some(k) = stack.pop() {
            if self.reachable.insert(k) {
                stack.extend(self.contexts[k].calls.values().map(|r| r.callee_ctx));
            }
        }
    }

    fn attach_bypass(&mut self) {
        let prog = self.oracle.program();
        loop {
            let mut changed = false;
            for &k in &self.reachable.clone() {
                let records: Vec<(usize, LivenessGraph)> = self.contexts[k]
                    .calls
                    .values()
                    .map(|r| {
                        let mut g = r.partition.bypass.clone();
                        g.union_in(&self.contexts[k].attached);
                        (r.callee_ctx, g)
                    })
                    .collect();
                for (c, g) in records {
                    let name = &prog.procs[self.contexts[c].proc_index].name;
                    let g = enter_names(&g, name);
                    let mut merged = self.contexts[c].attached.clone();
                    merged.union_in(&g);
                    if merged != self.contexts[c].attached {
                        self.contexts[c].attached = merged;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Contexts reachable from `main` through the final call records.
    pub fn live_contexts(&self) -> impl Iterator<Item = usize> + '_ {
        self.reachable.iter().copied()
    }

    pub fn contexts_of(&self, pi: usize) -> Vec<usize> {
        self.live_contexts().filter(|&k| self.contexts[k].proc_index == pi).collect()
    }

    pub fn proc_of(&self, k: usize) -> &Procedure {
        &self.oracle.program().procs[self.contexts[k].proc_index]
    }

    /// The propagated value at `q` in context `k`.
    pub fn value(&self, k: usize, q: Point) -> &LivenessGraph {
        let ctx = &self.contexts[k];
        ctx.result.as_ref().expect("context analysed").value(self.proc_of(k), q)
    }

    /// Everything reported live at `q` in context `k`: the propagated
    /// value plus memoized and bypassed paths, closed under may-aliases.
    pub fn final_at(&self, k: usize, q: Point) -> LivenessGraph {
        let ctx = &self.contexts[k];
        let p = self.proc_of(k);
        let i = p.index_of(q.stmt).unwrap();
        let mut extra = ctx.attached.clone();
        let free = match q.side {
            Side::In => self.free_before[ctx.proc_index][i],
            Side::Out => self.free_after[ctx.proc_index][i],
        };
        if free {
            extra.union_in(&ctx.memo);
        }
        let close = self.opts.liveness.close_aliases;
        let value = self.value(k, q);
        if self.variant.greedy() {
            let mut g = value.clone();
            g.union_in(&if close { self.oracle.close(q, &extra) } else { extra });
            g
        } else {
            let mut g = value.clone();
            g.union_in(&extra);
            if close {
                self.oracle.close(q, &g)
            } else {
                g
            }
        }
    }

    /// Union of the reported values over every context of the point's procedure.
    pub fn final_union(&self, q: Point) -> LivenessGraph {
        let prog = self.oracle.program();
        let pi = prog.owner_of(q.stmt).and_then(|p| prog.proc_index(&p.name)).unwrap();
        let mut g = LivenessGraph::empty(self.variant.mode());
        for k in self.contexts_of(pi) {
            g.union_in(&self.final_at(k, q));
        }
        g
    }

    /// Extracted paths per point, merged over contexts.
    pub fn paths_at(&self, q: Point, k: usize) -> BTreeSet<AccessPath> {
        self.final_union(q).extract_paths(k)
    }

    pub fn iterations(&self, k: usize) -> usize {
        self.contexts[k].result.as_ref().map(|r| r.iterations).unwrap_or(0)
    }
}

/// Paths of a program rendered per point for a whole run, merged over contexts.
pub fn all_points(prog: &Program) -> Vec<Point> {
    prog.procs.iter().flat_map(|p| p.points()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apgraph::{path_strings, Mode};
    use crate::corpus::{self, Table};
    use crate::ir::{load, Field};

    fn strs(g: &LivenessGraph) -> BTreeSet<String> {
        path_strings(&g.extract_paths(5))
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bar_defines_x_f_and_its_alias() {
        let p = load(corpus::FIG7).unwrap();
        let t = Table::of(corpus::FIG7);
        let o = AliasOracle::new(&p);
        let sums = compute_def_summaries(&o);
        let bar = &sums[p.proc_index("bar").unwrap()];
        let yf = o.resolve(t.out(&p, 13), &AccessPath::new(Var::local("main", "y"), [Field::named("f")]));
        assert!(!yf.is_empty() && yf.is_subset(&bar.direct));
        let foo = &sums[p.proc_index("foo").unwrap()];
        assert!(foo.transitive.is_superset(&foo.direct));
        assert!(yf.is_disjoint(&foo.direct) && yf.is_subset(&foo.transitive));
    }

    #[test]
    fn leaf_without_defs() {
        let p = load("global x\nproc f { use x }\nproc main { x = new; call f }").unwrap();
        let o = AliasOracle::new(&p);
        let sums = compute_def_summaries(&o);
        assert!(sums[p.proc_index("f").unwrap()].direct.is_empty());
    }

    #[test]
    fn mutual_recursion_shares_transitive_defs() {
        let p = load("global a, b\nproc f { br L E; L: a = new; call g; E: }\nproc g { br L E; L: b = new; call f; E: }\nproc main { call f }").unwrap();
        let o = AliasOracle::new(&p);
        let sums = compute_def_summaries(&o);
        let (f, g) = (p.proc_index("f").unwrap(), p.proc_index("g").unwrap());
        assert_eq!(sums[f].transitive, sums[g].transitive);
        assert_eq!(sums[f].transitive.len(), 2);
    }

    #[test]
    fn figure_seven_partitions() {
        let p = load(corpus::FIG7).unwrap();
        let t = Table::of(corpus::FIG7);
        let o = AliasOracle::new(&p);
        let a = Analysis::run(&o, Variant::D, InterprocOptions::default()).unwrap();
        let call_foo = t.first(&p, 14);
        let rec = &a.contexts[0].calls[&call_foo];
        assert!(strs(&rec.partition.bypass).contains("z"));
        assert!(strs(&rec.partition.pass).contains("w.g"));
        assert!(strs(&rec.partition.memoize).contains("y.f"));
        let foo_ctx = rec.callee_ctx;
        let rec = &a.contexts[foo_ctx].calls[&t.first(&p, 7)];
        assert!(strs(&rec.partition.bypass).contains("t.g"));
        assert!(strs(&rec.partition.pass).contains("y.f"));
    }

    #[test]
    fn identical_calls_share_context() {
        let p = load("global x\nproc f { use x }\nproc main { x = new; call f; call f }").unwrap();
        let o = AliasOracle::new(&p);
        let a = Analysis::run(&o, Variant::D, InterprocOptions::default()).unwrap();
        assert_eq!(a.contexts_of(p.proc_index("f").unwrap()).len(), 1);
        let first = p.main().unwrap().stmts[0].id;
        assert_eq!(strs(&a.final_union(Point::at_out(first))), set(&["x"]));
    }

    #[test]
    fn recursive_walk_terminates() {
        let p = load(corpus::LIST_WALK).unwrap();
        let o = AliasOracle::new(&p);
        for v in Variant::ALL {
            let a = Analysis::run(&o, v, InterprocOptions::default()).unwrap();
            let w = a.contexts_of(p.proc_index("walk").unwrap()).len();
            assert!((1..=4).contains(&w), "{v}: {w} contexts");
        }
    }

    #[test]
    fn partition_reconstructs_input() {
        let p = load(corpus::FIG7).unwrap();
        let o = AliasOracle::new(&p);
        let a = Analysis::run(&o, Variant::A, InterprocOptions::default()).unwrap();
        for k in a.live_contexts() {
            for rec in a.contexts[k].calls.values() {
                let mut u = rec.partition.pass.clone();
                u.union_in(&rec.partition.memoize);
                u.union_in(&rec.partition.bypass);
                assert!(u.check_invariants().is_ok());
            }
        }
        let _ = Mode::Det;
    }
}
