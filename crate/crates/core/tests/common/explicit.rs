//! Liveness over explicit, length-bounded sets of access paths. Mirrors the
//! transfer functions of the automaton engine one set operation at a time.

use std::collections::BTreeSet;

use heaplive::alias::{AliasOracle, Link, PtsState};
use heaplive::apgraph::AccessPath;
use heaplive::ir::{Field, Point, Procedure, StmtId, StmtKind, Var};
use heaplive::liveness::{backward_order, Variant};

pub type Paths = BTreeSet<AccessPath>;

/// Paths of at most `k` links.
pub fn truncate(s: &Paths, k: usize) -> Paths {
    s.iter().filter(|p| p.len() <= k).cloned().collect()
}

pub fn kill(s: &Paths, pattern: &AccessPath) -> Paths {
    s.iter().filter(|p| !p.has_prefix(pattern)).cloned().collect()
}

/// `{to.σ | from.σ ∈ s}`, cut at `bound` links.
pub fn substitute(s: &Paths, from: &AccessPath, to: &AccessPath, bound: usize) -> Paths {
    s.iter()
        .filter(|p| p.has_prefix(from))
        .map(|p| AccessPath::new(to.root.clone(), to.fields.iter().chain(&p.fields[from.fields.len()..]).cloned()))
        .filter(|p| p.len() <= bound)
        .collect()
}

fn var_live(s: &Paths, x: &Var) -> bool {
    s.iter().any(|p| &p.root == x)
}

pub struct ExplicitLiveness<'a, 'p> {
    pub oracle: &'a AliasOracle<'p>,
    pub proc_index: usize,
    /// Longest path kept, in links.
    pub bound: usize,
}

impl ExplicitLiveness<'_, '_> {
    fn proc(&self) -> &Procedure {
        &self.oracle.program().procs[self.proc_index]
    }

    fn live_links(&self, st: &PtsState, s: &Paths) -> BTreeSet<Link> {
        let mut out = BTreeSet::new();
        for p in s {
            if p.fields.is_empty() {
                out.insert(Link::Var(p.root.clone()));
            } else {
                out.extend(st.resolve(p));
            }
        }
        out
    }

    /// `s` plus every path from the scope roots that may name a live link,
    /// and the prefixes of those.
    pub fn close(&self, q: Point, s: &Paths) -> Paths {
        let st = self.oracle.state(q);
        let live = self.live_links(st, s);
        let mut out = s.clone();
        if live.is_empty() {
            return out;
        }
        // links from which a live one is reachable
        let mut reach_live: BTreeSet<Link> = BTreeSet::new();
        let mut all: Vec<Link> = Vec::new();
        let mut seen: BTreeSet<Link> = BTreeSet::new();
        let mut stack: Vec<Link> = self.oracle.scope_roots(self.proc_index).iter().map(|v| Link::Var(v.clone())).collect();
        while let Some(l) = stack.pop() {
            if seen.insert(l.clone()) {
                stack.extend(self.oracle.link_succ(st, &l));
                all.push(l);
            }
        }
        loop {
            let before = reach_live.len();
            for l in &all {
                if live.contains(l) || self.oracle.link_succ(st, l).iter().any(|m| reach_live.contains(m)) {
                    reach_live.insert(l.clone());
                }
            }
            if reach_live.len() == before {
                break;
            }
        }
        for v in self.oracle.scope_roots(self.proc_index) {
            let root = Link::Var(v.clone());
            if live.contains(&root) {
                out.insert(AccessPath::var(v.clone()));
            }
            if !reach_live.contains(&root) {
                continue;
            }
            let mut frontier: Vec<(AccessPath, BTreeSet<Link>)> = vec![(AccessPath::var(v.clone()), BTreeSet::from([root]))];
            while let Some((p, links)) = frontier.pop() {
                if p.len() >= self.bound {
                    continue;
                }
                let mut by_field: std::collections::BTreeMap<Field, BTreeSet<Link>> = Default::default();
                for l in &links {
                    for m in self.oracle.link_succ(st, l) {
                        if reach_live.contains(&m) {
                            by_field.entry(m.via()).or_default().insert(m);
                        }
                    }
                }
                for (f, ms) in by_field {
                    let next = p.field(f);
                    out.insert(next.clone());
                    frontier.push((next, ms));
                }
            }
        }
        out
    }

    pub fn transfer(&self, id: StmtId, kind: &StmtKind, out: &Paths) -> Paths {
        let k = self.bound;
        let var = |v: &Var| AccessPath::var(v.clone());
        let through = |x: &Var, to: AccessPath, bare: Option<&Var>| -> Paths {
            if !var_live(out, x) {
                return kill(out, &var(x));
            }
            let mut s = kill(out, &var(x));
            s.extend(substitute(out, &var(x), &to, k));
            if let Some(y) = bare {
                s.insert(var(y));
            }
            s
        };
        match kind {
            StmtKind::Use(x) => {
                let mut s = out.clone();
                s.insert(var(x));
                s
            }
            StmtKind::Alloc(x) | StmtKind::Null(x) => kill(out, &var(x)),
            StmtKind::Copy(x, y) => {
                let mut s = kill(out, &var(x));
                s.extend(substitute(out, &var(x), &var(y), k));
                s
            }
            StmtKind::Load(x, y, f) => through(x, AccessPath::new(y.clone(), [f.clone()]), Some(y)),
            StmtKind::AddrOf(x, y) => through(x, AccessPath::new(y.clone(), [Field::Address]), None),
            StmtKind::AddrOfField(x, y, f) => through(x, AccessPath::new(y.clone(), [f.clone(), Field::Address]), Some(y)),
            StmtKind::Store(x, f, y) => self.store(id, x, f, var(y), out),
            StmtKind::StoreAddrOf(x, f, y) => self.store(id, x, f, AccessPath::new(y.clone(), [Field::Address]), out),
            StmtKind::Call { .. } => panic!("explicit liveness is intraprocedural"),
            _ => out.clone(),
        }
    }

    fn store(&self, id: StmtId, x: &Var, f: &Field, value: AccessPath, out: &Paths) -> Paths {
        let st = self.oracle.state(Point::at_in(id));
        let target = AccessPath::new(x.clone(), [f.clone()]);
        let links: BTreeSet<Link> = st.var(x).iter().map(|o| Link::field(o, f)).collect();
        let mut gen = Paths::new();
        for p in out {
            for n in 0..=p.fields.len() {
                let head = AccessPath::new(p.root.clone(), p.fields[..n].iter().cloned());
                if head == target || st.resolve(&head).iter().any(|l| links.contains(l)) {
                    let q = AccessPath::new(value.root.clone(), value.fields.iter().chain(&p.fields[n..]).cloned());
                    if q.len() <= self.bound {
                        gen.insert(q);
                    }
                }
            }
        }
        let mut s = out.clone();
        for m in self.oracle.must_link_aliases(id, x, f) {
            s = kill(&s, &m);
        }
        s.extend(gen);
        s.insert(AccessPath::var(x.clone()));
        s
    }

    /// Propagated values at the in and out side of every statement.
    pub fn run(&self, variant: Variant) -> (Vec<Paths>, Vec<Paths>) {
        let p = self.proc();
        let n = p.stmts.len();
        let mut value_in = vec![Paths::new(); n];
        let mut value_out = vec![Paths::new(); n];
        let order = backward_order(p);
        loop {
            let mut changed = false;
            for &i in &order {
                let s = &p.stmts[i];
                let mut out = Paths::new();
                for &j in &p.succ[i] {
                    out.extend(value_in[j].iter().cloned());
                }
                if variant.greedy() {
                    out = self.close(Point::at_out(s.id), &out);
                }
                let mut inn = self.transfer(s.id, &s.kind, &out);
                if variant.greedy() {
                    inn = self.close(Point::at_in(s.id), &inn);
                }
                changed |= out != value_out[i] || inn != value_in[i];
                value_out[i] = out;
                value_in[i] = inn;
            }
            if !changed {
                return (value_in, value_out);
            }
        }
    }

    /// Reported values per point, in `Procedure::points` order.
    pub fn final_values(&self, variant: Variant) -> Vec<(Point, Paths)> {
        let (vi, vo) = self.run(variant);
        let p = self.proc();
        let mut res = Vec::new();
        for (i, s) in p.stmts.iter().enumerate() {
            for (q, v) in [(Point::at_in(s.id), &vi[i]), (Point::at_out(s.id), &vo[i])] {
                let v = if variant.greedy() { v.clone() } else { self.close(q, v) };
                res.push((q, v));
            }
        }
        res
    }
}
