//! Flow-sensitive, allocation-site points-to analysis and the may/must
//! link-alias queries the liveness transfer functions need.
//!
//! Abstract objects are heap allocation sites plus pseudo-objects for the
//! storage of address-taken variables and field slots. A link is a variable
//! binding or one field of one object; `deref` of a pseudo-object is the
//! link it stands for.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::apgraph::{AccessPath, LivenessGraph, NodeKey, SiteLabel, State};
use crate::ir::{CallGraph, Field, Point, Program, Side, StmtId, StmtKind, Var};

/// Nesting limit for slot pseudo-objects; deeper slots fold into their base.
const SLOT_DEPTH: usize = 3;
/// Longest base path considered by the singleton must-alias rule.
const MUST_BASE_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Loc {
    Heap(StmtId),
    /// Storage of a variable whose address is taken.
    Storage(Var),
    /// Storage embedded at field `field` of `base`.
    Slot(Box<Loc>, Field),
}

impl Loc {
    fn depth(&self) -> usize {
        match self {
            Loc::Slot(b, _) => 1 + b.depth(),
            _ => 0,
        }
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loc::Heap(s) => write!(f, "l{s}"),
            Loc::Storage(v) => write!(f, "&{}", v.qualified()),
            Loc::Slot(b, fl) => write!(f, "&({b}.{fl})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Link {
    Var(Var),
    Field(Loc, Field),
    /// The `&` pseudo-link of a link: it holds the address of the link's storage.
    Addr(Box<Link>),
}

impl Link {
    /// Field `f` of `o`, with `deref` of a pseudo-object folded to the link
    /// it denotes.
    pub fn field(o: &Loc, f: &Field) -> Link {
        match (o, f) {
            (Loc::Storage(v), Field::Deref) => Link::Var(v.clone()),
            (Loc::Slot(b, g), Field::Deref) => Link::field(b, g),
            _ => Link::Field(o.clone(), f.clone()),
        }
    }

    pub fn addr(l: &Link) -> Link {
        match l {
            Link::Addr(_) => l.clone(),
            _ => Link::Addr(Box::new(l.clone())),
        }
    }

    /// The object whose address `&` of this link yields.
    pub fn storage(&self) -> Loc {
        match self {
            Link::Var(v) => Loc::Storage(v.clone()),
            Link::Field(o, f) if o.depth() < SLOT_DEPTH => Loc::Slot(Box::new(o.clone()), f.clone()),
            Link::Field(o, _) => o.clone(),
            Link::Addr(l) => l.storage(),
        }
    }

    /// The field spelled when reaching this link from its holder.
    pub fn via(&self) -> Field {
        match self {
            Link::Var(_) => Field::Deref,
            Link::Field(_, f) => f.clone(),
            Link::Addr(_) => Field::Address,
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Var(v) => write!(f, "{}", v.qualified()),
            Link::Field(o, fl) => write!(f, "{o}.{fl}"),
            Link::Addr(l) => write!(f, "{l}.&"),
        }
    }
}

pub type Locs = BTreeSet<Loc>;

/// Points-to facts at one program point.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PtsState {
    pub vars: BTreeMap<Var, Locs>,
    pub heap: BTreeMap<(Loc, Field), Locs>,
}

impl PtsState {
    pub fn var(&self, v: &Var) -> Locs {
        self.vars.get(v).cloned().unwrap_or_default()
    }

    fn set_var(&mut self, v: &Var, ls: Locs) {
        if ls.is_empty() {
            self.vars.remove(v);
        } else {
            self.vars.insert(v.clone(), ls);
        }
    }

    fn add_var(&mut self, v: &Var, ls: &Locs) {
        if !ls.is_empty() {
            self.vars.entry(v.clone()).or_default().extend(ls.iter().cloned());
        }
    }

    /// Objects a link may hold.
    pub fn targets(&self, l: &Link) -> Locs {
        match l {
            Link::Var(v) => self.var(v),
            Link::Field(o, f) => self.heap.get(&(o.clone(), f.clone())).cloned().unwrap_or_default(),
            Link::Addr(l) => BTreeSet::from([l.storage()]),
        }
    }

    /// Weak update of a link.
    fn add_link(&mut self, l: &Link, ls: &Locs) {
        match l {
            Link::Var(v) => self.add_var(v, ls),
            Link::Field(o, f) => {
                if !ls.is_empty() {
                    self.heap.entry((o.clone(), f.clone())).or_default().extend(ls.iter().cloned());
                }
            }
            Link::Addr(_) => {}
        }
    }

    /// Links `l.f` may denote.
    pub fn step(&self, l: &Link, f: &Field) -> BTreeSet<Link> {
        if *f == Field::Address {
            return BTreeSet::from([Link::addr(l)]);
        }
        self.targets(l).iter().map(|o| Link::field(o, f)).collect()
    }

    /// Links an access path may denote.
    pub fn resolve(&self, p: &AccessPath) -> BTreeSet<Link> {
        let mut cur = BTreeSet::from([Link::Var(p.root.clone())]);
        for f in &p.fields {
            cur = cur.iter().flat_map(|l| self.step(l, f)).collect();
        }
        cur
    }

    pub fn join(&mut self, other: &PtsState) {
        for (v, ls) in &other.vars {
            self.add_var(v, ls);
        }
        for (k, ls) in &other.heap {
            self.heap.entry(k.clone()).or_default().extend(ls.iter().cloned());
        }
    }

    /// Fields readable from `o`: stored ones, plus `deref` of pseudo-objects.
    fn fields_of(&self, o: &Loc) -> Vec<Field> {
        let mut fs: Vec<Field> = self.heap.range((o.clone(), Field::Named("".into()))..).take_while(|((b, _), _)| b == o).map(|((_, f), _)| f.clone()).collect();
        if !matches!(o, Loc::Heap(_)) && !fs.contains(&Field::Deref) {
            fs.push(Field::Deref);
        }
        fs
    }
}

fn locs_json(ls: &Locs) -> Vec<String> {
    ls.iter().map(|l| l.to_string()).collect()
}

impl Serialize for PtsState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.vars.len() + self.heap.len()))?;
        for (v, ls) in &self.vars {
            m.serialize_entry(&v.qualified(), &locs_json(ls))?;
        }
        for ((o, f), ls) in &self.heap {
            m.serialize_entry(&format!("{o}.{f}"), &locs_json(ls))?;
        }
        m.end()
    }
}

/// A must-equality fact between a variable's value and another value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Fact {
    /// Both variables hold the same value (ordered pair).
    Same(Var, Var),
    /// `.0` holds the value of link `.1->.2`.
    Loaded(Var, Var, Field),
    /// `.0` holds `&.1`.
    AddrOf(Var, Var),
    /// `.0` holds `&(.1->.2)`.
    AddrOfField(Var, Var, Field),
}

impl Fact {
    fn same(a: &Var, b: &Var) -> Option<Fact> {
        match a.cmp(b) {
            std::cmp::Ordering::Less => Some(Fact::Same(a.clone(), b.clone())),
            std::cmp::Ordering::Greater => Some(Fact::Same(b.clone(), a.clone())),
            std::cmp::Ordering::Equal => None,
        }
    }

    fn mentions(&self, v: &Var) -> bool {
        match self {
            Fact::Same(a, b) | Fact::Loaded(a, b, _) | Fact::AddrOf(a, b) | Fact::AddrOfField(a, b, _) => a == v || b == v,
        }
    }

    fn reads_field(&self, f: &Field) -> bool {
        match self {
            Fact::Loaded(_, _, g) => g == f,
            _ => false,
        }
    }

    fn vars(&self) -> [&Var; 2] {
        match self {
            Fact::Same(a, b) | Fact::Loaded(a, b, _) | Fact::AddrOf(a, b) | Fact::AddrOfField(a, b, _) => [a, b],
        }
    }
}

type Facts = BTreeSet<Fact>;

/// What a procedure and everything it calls may overwrite.
#[derive(Debug, Clone, Default)]
struct ConeWrites {
    globals: BTreeSet<Var>,
    fields: BTreeSet<Field>,
    through_deref: bool,
}

/// Points-to facts at every point of the program plus the alias queries.
pub struct AliasOracle<'p> {
    prog: &'p Program,
    cg: CallGraph,
    pts_in: HashMap<StmtId, PtsState>,
    pts_out: HashMap<StmtId, PtsState>,
    facts_in: HashMap<StmtId, Facts>,
    pseudo_sites: BTreeMap<Loc, StmtId>,
    scope: Vec<BTreeSet<Var>>,
    writes: Vec<ConeWrites>,
}

impl<'p> AliasOracle<'p> {
    pub fn new(prog: &'p Program) -> AliasOracle<'p> {
        let cg = CallGraph::new(prog);
        let mut o = AliasOracle {
            prog,
            cg,
            pts_in: HashMap::new(),
            pts_out: HashMap::new(),
            facts_in: HashMap::new(),
            pseudo_sites: BTreeMap::new(),
            scope: Vec::new(),
            writes: Vec::new(),
        };
        o.solve_points_to();
        o.collect_pseudo_sites();
        o.compute_scopes();
        o.compute_writes();
        for pi in 0..prog.procs.len() {
            o.solve_facts(pi);
        }
        o
    }

    pub fn program(&self) -> &'p Program {
        self.prog
    }

    pub fn call_graph(&self) -> &CallGraph {
        &self.cg
    }

    pub fn state(&self, q: Point) -> &PtsState {
        static EMPTY: std::sync::OnceLock<PtsState> = std::sync::OnceLock::new();
        let m = match q.side {
            Side::In => &self.pts_in,
            Side::Out => &self.pts_out,
        };
        m.get(&q.stmt).unwrap_or_else(|| EMPTY.get_or_init(PtsState::default))
    }

    /// Variables whose links may be named at points of procedure `pi`.
    pub fn scope_roots(&self, pi: usize) -> &BTreeSet<Var> {
        &self.scope[pi]
    }

    pub fn resolve(&self, q: Point, p: &AccessPath) -> BTreeSet<Link> {
        self.state(q).resolve(p)
    }

    /// Allocation-site label naming an object.
    pub fn site_of(&self, o: &Loc) -> SiteLabel {
        match o {
            Loc::Heap(s) => SiteLabel::Alloc(*s),
            _ => SiteLabel::Alloc(self.pseudo_sites.get(o).copied().unwrap_or(StmtId(0))),
        }
    }

    /// True when an allocation site may stand for several live objects.
    pub fn is_summarized(&self, site: StmtId) -> bool {
        let Some(p) = self.prog.owner_of(site) else { return true };
        let pi = self.prog.proc_index(&p.name).unwrap();
        self.cg.in_loop(site) || !self.cg.single_instance(pi)
    }

    // ---- points-to fixpoint ----

    fn solve_points_to(&mut self) {
        let prog = self.prog;
        let main = prog.proc_index("main");
        loop {
            let mut changed = false;
            for (pi, p) in prog.procs.iter().enumerate() {
                let entry = if Some(pi) == main { PtsState::default() } else { self.entry_state(pi) };
                for (i, s) in p.stmts.iter().enumerate() {
                    let inp = if i == p.entry() {
                        let mut e = entry.clone();
                        for &j in &p.pred[i] {
                            e.join(self.state(Point::at_out(p.stmts[j].id)));
                        }
                        e
                    } else {
                        let mut e = PtsState::default();
                        for &j in &p.pred[i] {
                            e.join(self.state(Point::at_out(p.stmts[j].id)));
                        }
                        e
                    };
                    let out = self.transfer(pi, s.id, &s.kind, &inp);
                    if self.pts_in.get(&s.id) != Some(&inp) {
                        self.pts_in.insert(s.id, inp);
                        changed = true;
                    }
                    if self.pts_out.get(&s.id) != Some(&out) {
                        self.pts_out.insert(s.id, out);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn entry_state(&self, callee: usize) -> PtsState {
        let mut e = PtsState::default();
        for &site in &self.cg.sites[callee] {
            let s = self.prog.stmt(site).unwrap();
            if let StmtKind::Call { args, .. } = &s.kind {
                e.join(&self.call_entry(self.state(Point::at_in(site)), callee, args));
            }
        }
        e
    }

    /// The callee's view on entry: its current frame moves to the shadows
    /// and the formals take the actuals.
    fn call_entry(&self, at_call: &PtsState, callee: usize, args: &[Var]) -> PtsState {
        let c = &self.prog.procs[callee];
        let actuals: Vec<Locs> = args.iter().map(|a| at_call.var(a)).collect();
        let mut t = at_call.clone();
        for v in c.all_vars() {
            let cur = at_call.var(v);
            t.add_var(&v.shadowed(), &cur);
            t.set_var(v, BTreeSet::new());
        }
        for (f, a) in c.formals.iter().zip(actuals) {
            t.set_var(f, a);
        }
        t
    }

    /// Facts after a call returns to procedure `caller`.
    fn call_return(&self, at_call: &PtsState, at_exit: &PtsState, caller: usize, callee: usize) -> PtsState {
        let mut t = at_exit.clone();
        let c = &self.prog.procs[callee];
        for v in c.all_vars() {
            let sh = v.shadowed();
            let mut cur = at_call.var(v);
            cur.extend(at_exit.var(&sh));
            t.set_var(v, cur);
            let mut old = at_call.var(&sh);
            old.extend(at_exit.var(&sh));
            t.set_var(&sh, old);
        }
        if caller != callee {
            for v in self.prog.procs[caller].all_vars() {
                let mut cur = at_call.var(v);
                cur.extend(at_exit.var(v));
                t.set_var(v, cur);
            }
        }
        t
    }

    fn transfer(&self, pi: usize, id: StmtId, k: &StmtKind, inp: &PtsState) -> PtsState {
        let mut t = inp.clone();
        match k {
            StmtKind::Alloc(x) => t.set_var(x, BTreeSet::from([Loc::Heap(id)])),
            StmtKind::Null(x) => t.set_var(x, BTreeSet::new()),
            StmtKind::Copy(x, y) => t.set_var(x, inp.var(y)),
            StmtKind::Load(x, y, f) => {
                let ls = inp.var(y).iter().flat_map(|o| inp.targets(&Link::field(o, f))).collect();
                t.set_var(x, ls);
            }
            StmtKind::Store(x, f, y) => {
                let val = inp.var(y);
                for o in inp.var(x) {
                    t.add_link(&Link::field(&o, f), &val);
                }
            }
            StmtKind::AddrOf(x, y) => t.set_var(x, BTreeSet::from([Loc::Storage(y.clone())])),
            StmtKind::AddrOfField(x, y, f) => {
                let ls = inp.var(y).iter().map(|o| Link::field(o, f).storage()).collect();
                t.set_var(x, ls);
            }
            StmtKind::StoreAddrOf(x, f, y) => {
                let val = BTreeSet::from([Loc::Storage(y.clone())]);
                for o in inp.var(x) {
                    t.add_link(&Link::field(&o, f), &val);
                }
            }
            StmtKind::Call { callee, .. } => {
                let ci = self.prog.proc_index(callee).unwrap();
                let c = &self.prog.procs[ci];
                let exit = self.state(Point::at_out(c.stmts[c.exit()].id));
                t = self.call_return(inp, exit, pi, ci);
            }
            _ => {}
        }
        t
    }

    fn collect_pseudo_sites(&mut self) {
        let mut sites: BTreeMap<Loc, StmtId> = BTreeMap::new();
        let mut note = |o: Loc, id: StmtId| {
            let e = sites.entry(o).or_insert(id);
            *e = (*e).min(id);
        };
        for s in self.prog.stmts() {
            match &s.kind {
                StmtKind::AddrOf(_, y) | StmtKind::StoreAddrOf(_, _, y) => note(Loc::Storage(y.clone()), s.id),
                StmtKind::AddrOfField(_, y, f) => {
                    for o in self.state(Point::at_in(s.id)).var(y) {
                        note(Link::field(&o, f).storage(), s.id);
                    }
                }
                _ => {}
            }
        }
        self.pseudo_sites = sites;
    }

    fn compute_scopes(&mut self) {
        let prog = self.prog;
        self.scope = (0..prog.procs.len())
            .map(|pi| {
                let mut roots: BTreeSet<Var> = prog.globals.iter().cloned().collect();
                roots.extend(prog.procs.iter().map(|p| Program::ret_var(&p.name)));
                let mut frames = self.cg.outer_frames(pi);
                frames.insert(pi);
                for &r in &frames {
                    for v in prog.procs[r].all_vars() {
                        roots.insert(v.clone());
                        if self.cg.is_recursive(r) {
                            roots.insert(v.shadowed());
                        }
                    }
                }
                roots
            })
            .collect();
    }

    fn compute_writes(&mut self) {
        let prog = self.prog;
        let direct: Vec<ConeWrites> = prog
            .procs
            .iter()
            .map(|p| {
                let mut w = ConeWrites::default();
                for s in &p.stmts {
                    if let Some(v) = s.defined_var() {
                        if v.is_global() {
                            w.globals.insert(v.clone());
                        }
                    }
                    if let StmtKind::Store(_, f, _) | StmtKind::StoreAddrOf(_, f, _) = &s.kind {
                        w.fields.insert(f.clone());
                        w.through_deref |= *f == Field::Deref;
                    }
                }
                w
            })
            .collect();
        self.writes = (0..prog.procs.len())
            .map(|pi| {
                let mut w = ConeWrites::default();
                for &c in &self.cg.cone[pi] {
                    w.globals.extend(direct[c].globals.iter().cloned());
                    w.fields.extend(direct[c].fields.iter().cloned());
                    w.through_deref |= direct[c].through_deref;
                }
                w
            })
            .collect();
    }

    // ---- must-equality facts ----

    fn solve_facts(&mut self, pi: usize) {
        let p = &self.prog.procs[pi];
        let n = p.stmts.len();
        let mut inn: Vec<Option<Facts>> = vec![None; n];
        let mut out: Vec<Option<Facts>> = vec![None; n];
        inn[p.entry()] = Some(Facts::new());
        loop {
            let mut changed = false;
            for i in 0..n {
                let mut acc: Option<Facts> = if i == p.entry() { Some(Facts::new()) } else { None };
                for &j in &p.pred[i] {
                    if let Some(o) = &out[j] {
                        acc = Some(match acc {
                            None => o.clone(),
                            Some(a) => a.intersection(o).cloned().collect(),
                        });
                    }
                }
                let Some(a) = acc else { continue };
                let o = self.fact_transfer(&p.stmts[i].kind, &a);
                if inn[i].as_ref() != Some(&a) {
                    inn[i] = Some(a);
                    changed = true;
                }
                if out[i].as_ref() != Some(&o) {
                    out[i] = Some(o);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for (i, s) in p.stmts.iter().enumerate() {
            self.facts_in.insert(s.id, inn[i].clone().unwrap_or_default());
        }
    }

    fn fact_transfer(&self, k: &StmtKind, inp: &Facts) -> Facts {
        let kill_var = |fs: &Facts, x: &Var| -> Facts { fs.iter().filter(|f| !f.mentions(x)).cloned().collect() };
        match k {
            StmtKind::Alloc(x) | StmtKind::Null(x) => kill_var(inp, x),
            StmtKind::Copy(x, y) => {
                let mut o = kill_var(inp, x);
                if x != y {
                    o.extend(Fact::same(x, y));
                }
                o
            }
            StmtKind::Load(x, y, f) => {
                let mut o = kill_var(inp, x);
                if x != y {
                    o.insert(Fact::Loaded(x.clone(), y.clone(), f.clone()));
                }
                o
            }
            StmtKind::AddrOf(x, y) => {
                let mut o = kill_var(inp, x);
                if x != y {
                    o.insert(Fact::AddrOf(x.clone(), y.clone()));
                }
                o
            }
            StmtKind::AddrOfField(x, y, f) => {
                let mut o = kill_var(inp, x);
                if x != y {
                    o.insert(Fact::AddrOfField(x.clone(), y.clone(), f.clone()));
                }
                o
            }
            StmtKind::Store(_, f, _) | StmtKind::StoreAddrOf(_, f, _) => {
                if *f == Field::Deref {
                    Facts::new()
                } else {
                    inp.iter().filter(|fa| !fa.reads_field(f)).cloned().collect()
                }
            }
            StmtKind::Call { callee, .. } => {
                let w = &self.writes[self.prog.proc_index(callee).unwrap()];
                if w.through_deref {
                    return Facts::new();
                }
                inp.iter()
                    .filter(|fa| !fa.vars().iter().any(|v| w.globals.contains(*v)) && !w.fields.iter().any(|f| fa.reads_field(f)))
                    .cloned()
                    .collect()
            }
            _ => inp.clone(),
        }
    }

    /// Variables that must hold the same value as `x` before `stmt`.
    fn same_class(&self, facts: &Facts, x: &Var) -> BTreeSet<Var> {
        let mut class = BTreeSet::from([x.clone()]);
        loop {
            let before = class.len();
            for f in facts {
                if let Fact::Same(a, b) = f {
                    if class.contains(a) || class.contains(b) {
                        class.insert(a.clone());
                        class.insert(b.clone());
                    }
                }
            }
            if class.len() == before {
                return class;
            }
        }
    }

    /// Paths guaranteed to name the link `x->f` just before `stmt`.
    pub fn must_link_aliases(&self, stmt: StmtId, x: &Var, f: &Field) -> BTreeSet<AccessPath> {
        let mut out = BTreeSet::from([AccessPath::new(x.clone(), [f.clone()])]);
        let empty = Facts::new();
        let facts = self.facts_in.get(&stmt).unwrap_or(&empty);
        let class = self.same_class(facts, x);
        for v in &class {
            out.insert(AccessPath::new(v.clone(), [f.clone()]));
            for fa in facts {
                match fa {
                    Fact::Loaded(a, w, g) if a == v => {
                        for w2 in self.same_class(facts, w) {
                            out.insert(AccessPath::new(w2, [g.clone(), f.clone()]));
                        }
                    }
                    Fact::AddrOf(a, y) if a == v && *f == Field::Deref => {
                        out.insert(AccessPath::var(y.clone()));
                    }
                    Fact::AddrOfField(a, y, g) if a == v && *f == Field::Deref => {
                        out.insert(AccessPath::new(y.clone(), [g.clone()]));
                    }
                    _ => {}
                }
            }
        }
        // a single non-summarized object named by two bases gives one link
        let st = self.state(Point::at_in(stmt));
        let px = st.var(x);
        if let Some(Loc::Heap(site)) = px.iter().next().filter(|_| px.len() == 1) {
            if !self.is_summarized(*site) {
                let pi = self.prog.owner_of(stmt).and_then(|p| self.prog.proc_index(&p.name)).unwrap();
                for base in self.bases_holding(st, pi, &Loc::Heap(*site)) {
                    out.insert(base.field(f.clone()));
                }
            }
        }
        out
    }

    /// Paths of bounded length whose only possible target is `o`.
    fn bases_holding(&self, st: &PtsState, pi: usize, o: &Loc) -> Vec<AccessPath> {
        let mut found = Vec::new();
        let mut frontier: Vec<(AccessPath, Link)> = self.scope[pi].iter().map(|v| (AccessPath::var(v.clone()), Link::Var(v.clone()))).collect();
        for _ in 0..MUST_BASE_LEN {
            let mut next = Vec::new();
            for (p, l) in frontier {
                let t = st.targets(&l);
                if t.len() == 1 && t.contains(o) {
                    found.push(p.clone());
                }
                for tgt in &t {
                    for f in st.fields_of(tgt) {
                        next.push((p.field(f.clone()), Link::field(tgt, &f)));
                    }
                }
            }
            frontier = next;
        }
        found
    }

    // ---- may link-aliases ----

    /// Links reached by the accepted paths of `g` at `q`, with the labels of
    /// the graph nodes that reach them.
    pub fn live_links(&self, q: Point, g: &LivenessGraph) -> BTreeMap<Link, BTreeSet<SiteLabel>> {
        let st = self.state(q);
        let mut live: BTreeMap<Link, BTreeSet<SiteLabel>> = BTreeMap::new();
        let mut seen: BTreeSet<(State, Link)> = BTreeSet::new();
        let mut stack: Vec<(State, Link)> = Vec::new();
        for (v, r) in g.roots() {
            let l = Link::Var(v.clone());
            if r.accepting {
                live.entry(l.clone()).or_default();
            }
            stack.push((State::Root(v.clone()), l));
        }
        while let Some((s, l)) = stack.pop() {
            if !seen.insert((s.clone(), l.clone())) {
                continue;
            }
            for k in g.succ(&s) {
                for l2 in st.step(&l, &k.field) {
                    live.entry(l2.clone()).or_default().extend(k.labels.iter().copied());
                    stack.push((State::Node(k.clone()), l2));
                }
            }
        }
        live
    }

    /// Links one field away from `l` that hold or may hold something, with
    /// the address of `l` when its storage can have its address taken.
    pub fn link_succ(&self, st: &PtsState, l: &Link) -> BTreeSet<Link> {
        let mut succ = BTreeSet::new();
        for o in st.targets(l) {
            for f in st.fields_of(&o) {
                succ.insert(Link::field(&o, &f));
            }
        }
        if !matches!(l, Link::Addr(_)) && self.pseudo_sites.contains_key(&l.storage()) {
            succ.insert(Link::addr(l));
        }
        succ
    }

    /// Paths of at most `k` links from the scope roots of `q` that name a
    /// link of the abstract heap: roots holding an object and everything
    /// reachable from them.
    pub fn allocated_paths(&self, q: Point, k: usize) -> BTreeSet<AccessPath> {
        let st = self.state(q);
        let pi = self.prog.owner_of(q.stmt).and_then(|p| self.prog.proc_index(&p.name)).unwrap();
        let mut out = BTreeSet::new();
        for v in &self.scope[pi] {
            let root = Link::Var(v.clone());
            if k == 0 || st.targets(&root).is_empty() {
                continue;
            }
            let mut frontier = vec![(AccessPath::var(v.clone()), BTreeSet::from([root]))];
            while let Some((p, links)) = frontier.pop() {
                out.insert(p.clone());
                if p.len() >= k {
                    continue;
                }
                let mut by_field: BTreeMap<Field, BTreeSet<Link>> = BTreeMap::new();
                for l in &links {
                    for m in self.link_succ(st, l) {
                        by_field.entry(m.via()).or_default().insert(m);
                    }
                }
                for (f, ms) in by_field {
                    frontier.push((p.field(f), ms));
                }
            }
        }
        out
    }

    /// Every path from the scope roots of `q` that reaches a link named by
    /// some accepted path of `g`, as a graph fragment. Links off the live
    /// set carry the allocation sites of their targets.
    pub fn may_link_aliases(&self, q: Point, g: &LivenessGraph) -> LivenessGraph {
        let live = self.live_links(q, g);
        let st = self.state(q);
        let pi = self.prog.owner_of(q.stmt).and_then(|p| self.prog.proc_index(&p.name)).unwrap();
        let roots = &self.scope[pi];
        if live.is_empty() {
            return LivenessGraph::empty(g.mode());
        }

        // forward link graph from the scope roots
        let mut edges: BTreeMap<Link, BTreeSet<Link>> = BTreeMap::new();
        let mut stack: Vec<Link> = roots.iter().map(|v| Link::Var(v.clone())).collect();
        while let Some(l) = stack.pop() {
            if edges.contains_key(&l) {
                continue;
            }
            let succ = self.link_succ(st, &l);
            stack.extend(succ.iter().cloned());
            edges.insert(l, succ);
        }

        // keep links from which a live link is reachable
        let mut rev: BTreeMap<&Link, Vec<&Link>> = BTreeMap::new();
        for (a, bs) in &edges {
            for b in bs {
                rev.entry(b).or_default().push(a);
            }
        }
        let mut keep: BTreeSet<&Link> = BTreeSet::new();
        let mut stack: Vec<&Link> = edges.keys().filter(|l| live.contains_key(*l)).collect();
        while let Some(l) = stack.pop() {
            if keep.insert(l) {
                if let Some(ps) = rev.get(l) {
                    stack.extend(ps.iter().copied());
                }
            }
        }

        let key = |l: &Link| -> NodeKey {
            let mut labels: BTreeSet<SiteLabel> = live.get(l).cloned().unwrap_or_default();
            if labels.is_empty() {
                labels = st.targets(l).iter().map(|o| self.site_of(o)).collect();
            }
            if labels.is_empty() {
                labels.insert(SiteLabel::Alloc(StmtId(0)));
            }
            NodeKey::new(l.via(), labels)
        };
        let succ_keys = |l: &Link| -> BTreeSet<NodeKey> { edges[l].iter().filter(|b| keep.contains(b)).map(key).collect() };
        let graph_roots: Vec<(Var, bool, BTreeSet<NodeKey>)> = roots
            .iter()
            .filter_map(|v| {
                let l = Link::Var(v.clone());
                keep.contains(&l).then(|| (v.clone(), live.contains_key(&l), succ_keys(&l)))
            })
            .collect();
        let mut nodes: Vec<(NodeKey, BTreeSet<NodeKey>)> = Vec::new();
        for l in &keep {
            nodes.push((key(l), succ_keys(l)));
        }
        LivenessGraph::from_parts(g.mode(), graph_roots, nodes)
    }

    /// `g` together with the may link-aliases of its paths at `q`.
    pub fn close(&self, q: Point, g: &LivenessGraph) -> LivenessGraph {
        let mut out = g.clone();
        out.union_in(&self.may_link_aliases(q, g));
        out
    }

    /// Graph states of `liv` whose path may name the link `x->f` before
    /// `stmt`; the path `x.f` itself is always included.
    pub fn states_aliasing(&self, stmt: StmtId, x: &Var, f: &Field, liv: &LivenessGraph) -> BTreeSet<State> {
        let st = self.state(Point::at_in(stmt));
        let targets: BTreeSet<Link> = st.var(x).iter().map(|o| Link::field(o, f)).collect();
        let mut hits: BTreeSet<State> = liv.walk(&AccessPath::new(x.clone(), [f.clone()]));
        let mut seen: BTreeSet<(State, Link)> = BTreeSet::new();
        let mut stack: Vec<(State, Link)> = liv.roots().map(|(v, _)| (State::Root(v.clone()), Link::Var(v.clone()))).collect();
        while let Some((s, l)) = stack.pop() {
            if !seen.insert((s.clone(), l.clone())) {
                continue;
            }
            if targets.contains(&l) {
                hits.insert(s.clone());
            }
            for k in liv.succ(&s) {
                for l2 in st.step(&l, &k.field) {
                    stack.push((State::Node(k.clone()), l2));
                }
            }
        }
        hits
    }

    /// Per-point points-to facts of one procedure, for `--dump-pts`.
    pub fn dump(&self, pi: usize) -> BTreeMap<String, &PtsState> {
        let p = &self.prog.procs[pi];
        p.points().into_iter().map(|q| (q.to_string(), self.state(q))).collect()
    }
}
