//! Ground truth by execution. The interpreter runs a program along one
//! sequence of branch decisions and records a snapshot at every step;
//! liveness is then read backwards off the trace and compared with what
//! the static analysis reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::alias::AliasOracle;
use crate::apgraph::{AccessPath, LivenessGraph};
use crate::interproc::{Analysis, InterprocError, InterprocOptions};
use crate::ir::{Field, Point, Program, Scope, StmtId, StmtKind, Var};
use crate::liveness::Variant;

pub type FrameId = usize;

/// A concrete object: a heap cell block or the storage of a single link.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Obj {
    Heap(usize),
    Slot(Arc<Cell>),
}

/// A concrete link.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cell {
    /// A variable of one frame; globals have no frame.
    Var(Option<FrameId>, Var),
    Field(Obj, Field),
}

/// Step targets while walking a path: real links and the constant `&` links.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Link {
    Cell(Cell),
    Addr(Cell),
}

fn field_cell(o: &Obj, f: &Field) -> Cell {
    match (o, f) {
        (Obj::Slot(c), Field::Deref) => (**c).clone(),
        _ => Cell::Field(o.clone(), f.clone()),
    }
}

/// A path whose root is a frame-specific variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CPath {
    pub root: Cell,
    pub fields: Vec<Field>,
}

impl CPath {
    fn bare(root: Cell) -> CPath {
        CPath { root, fields: Vec::new() }
    }

    fn with(&self, f: Field) -> CPath {
        let mut p = self.clone();
        p.fields.push(f);
        p
    }

    /// Prefixes whose links are read to reach the end of the path; the one
    /// before a `&` only has its address taken.
    fn read_prefixes(&self) -> impl Iterator<Item = CPath> + '_ {
        (0..=self.fields.len())
            .filter(|&i| self.fields.get(i) != Some(&Field::Address))
            .map(|i| CPath { root: self.root.clone(), fields: self.fields[..i].to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub id: FrameId,
    pub proc_index: usize,
    pub proc_name: Arc<str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Memory {
    /// Non-null links; everything else is null.
    pub values: BTreeMap<Cell, Obj>,
    pub stack: Vec<Frame>,
}

impl Memory {
    pub fn get(&self, c: &Cell) -> Option<&Obj> {
        self.values.get(c)
    }

    fn set(&mut self, c: Cell, v: Option<Obj>) {
        match v {
            Some(o) => {
                self.values.insert(c, o);
            }
            None => {
                self.values.remove(&c);
            }
        }
    }

    fn link_value(&self, l: &Link) -> Option<Obj> {
        match l {
            Link::Cell(c) => self.get(c).cloned(),
            Link::Addr(c) => Some(Obj::Slot(Arc::new(c.clone()))),
        }
    }

    /// Links read along `p`, stopping early at a null.
    pub fn walk(&self, p: &CPath) -> Vec<Link> {
        let mut links = vec![Link::Cell(p.root.clone())];
        for f in &p.fields {
            let cur = links.last().unwrap();
            let next = if *f == Field::Address {
                match cur {
                    Link::Cell(c) | Link::Addr(c) => Link::Addr(c.clone()),
                }
            } else {
                match self.link_value(cur) {
                    Some(o) => Link::Cell(field_cell(&o, f)),
                    None => return links,
                }
            };
            links.push(next);
        }
        links
    }

    /// Source name of a frame variable at this point, if it has one.
    pub fn name_of(&self, c: &Cell) -> Option<Var> {
        let Cell::Var(frame, v) = c else { return None };
        let Some(fid) = frame else { return Some(v.clone()) };
        let pos = self.stack.iter().position(|f| f.id == *fid)?;
        let pi = self.stack[pos].proc_index;
        let newer = self.stack[pos + 1..].iter().any(|f| f.proc_index == pi);
        Some(if newer { v.shadowed() } else { v.clone() })
    }

    /// The link a source name denotes at this point; an older-frame name
    /// denotes the newest older frame.
    pub fn cell_of(&self, v: &Var) -> Option<Cell> {
        let owner = match &v.scope {
            Scope::Global => return Some(Cell::Var(None, v.clone())),
            Scope::Local(p) | Scope::Shadow(p) => p,
        };
        let mut frames = self.stack.iter().rev().filter(|f| f.proc_name == *owner);
        let f = if v.is_shadow() { frames.nth(1) } else { frames.next() }?;
        Some(Cell::Var(Some(f.id), v.unshadowed()))
    }

    pub fn named(&self, p: &CPath) -> Option<AccessPath> {
        Some(AccessPath::new(self.name_of(&p.root)?, p.fields.iter().cloned()))
    }
}

/// What a transition between consecutive snapshots did to memory.
#[derive(Debug, Clone)]
enum Effect {
    Nothing,
    /// `cell` now holds what `source` held before; `None` for new and null.
    Write(Cell, Option<CPath>),
    /// A frame was pushed with its formals bound to the actuals.
    Bind(FrameId, Vec<(Var, CPath)>),
    Use(CPath),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bounds {
    /// Executions of any one statement per trace.
    pub loop_bound: usize,
    pub max_traces: usize,
    pub max_steps: usize,
}

impl Default for Bounds {
    fn default() -> Bounds {
        Bounds { loop_bound: 3, max_traces: 10_000, max_steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ending {
    Completed,
    NullDeref { stmt: StmtId },
    LoopBound { stmt: StmtId },
    StepLimit,
}

/// One executed statement and the snapshots at its two points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occurrence {
    pub stmt: StmtId,
    pub before: usize,
    /// Missing when the trace stopped inside or at the statement.
    pub after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub choices: Vec<usize>,
    /// Number of options at every branch met, in order.
    pub arity: Vec<usize>,
    /// Allocation statement of every heap object.
    pub sites: Vec<StmtId>,
    pub snapshots: Vec<Memory>,
    effects: Vec<Effect>,
    pub steps: Vec<Occurrence>,
    pub ending: Ending,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("bounds must be positive")]
    ZeroBound,
    #[error("program has no `main`")]
    NoMain,
    #[error(transparent)]
    Analysis(#[from] InterprocError),
}

struct Activation {
    frame: FrameId,
    proc_index: usize,
    pc: usize,
    /// Occurrence index of the call that created this frame.
    call: Option<usize>,
}

/// Runs `prog` from `main`, resolving the n-th branch met with `choices[n]`
/// (first option when missing).
pub fn interpret(prog: &Program, choices: &[usize], bounds: Bounds) -> Result<Trace, OracleError> {
    if bounds.loop_bound == 0 || bounds.max_steps == 0 {
        return Err(OracleError::ZeroBound);
    }
    let main = prog.proc_index("main").ok_or(OracleError::NoMain)?;
    let mut t = Trace {
        choices: Vec::new(),
        arity: Vec::new(),
        sites: Vec::new(),
        snapshots: Vec::new(),
        effects: Vec::new(),
        steps: Vec::new(),
        ending: Ending::Completed,
    };
    let mut mem = Memory { values: BTreeMap::new(), stack: vec![Frame { id: 1, proc_index: main, proc_name: prog.procs[main].name.clone() }] };
    let mut next_frame = 2;
    let mut acts = vec![Activation { frame: 1, proc_index: main, pc: 0, call: None }];
    let mut visits: HashMap<StmtId, usize> = HashMap::new();
    t.snapshots.push(mem.clone());

    let var_cell = |frame: FrameId, v: &Var| -> Cell {
        if v.is_global() {
            Cell::Var(None, v.clone())
        } else {
            Cell::Var(Some(frame), v.clone())
        }
    };

    loop {
        let act = acts.last().unwrap();
        let (frame, pi, pc) = (act.frame, act.proc_index, act.pc);
        let p = &prog.procs[pi];
        let s = &p.stmts[pc];
        let n = visits.entry(s.id).or_default();
        *n += 1;
        if *n > bounds.loop_bound {
            t.ending = Ending::LoopBound { stmt: s.id };
            break;
        }
        if t.steps.len() >= bounds.max_steps {
            t.ending = Ending::StepLimit;
            break;
        }
        let before = t.snapshots.len() - 1;
        let cell = |v: &Var| var_cell(frame, v);
        let path = |v: &Var| CPath::bare(var_cell(frame, v));
        let val = |m: &Memory, v: &Var| m.get(&var_cell(frame, v)).cloned();
        let mut next = p.succ[pc].first().copied();
        let effect = match &s.kind {
            StmtKind::Use(x) => {
                if val(&mem, x).is_none() {
                    t.ending = Ending::NullDeref { stmt: s.id };
                    break;
                }
                Effect::Use(path(x))
            }
            StmtKind::Alloc(x) => {
                t.sites.push(s.id);
                mem.set(cell(x), Some(Obj::Heap(t.sites.len() - 1)));
                Effect::Write(cell(x), None)
            }
            StmtKind::Null(x) => {
                mem.set(cell(x), None);
                Effect::Write(cell(x), None)
            }
            StmtKind::Copy(x, y) => {
                let v = val(&mem, y);
                mem.set(cell(x), v);
                Effect::Write(cell(x), Some(path(y)))
            }
            StmtKind::Load(x, y, f) => {
                let Some(o) = val(&mem, y) else {
                    t.ending = Ending::NullDeref { stmt: s.id };
                    break;
                };
                let v = mem.get(&field_cell(&o, f)).cloned();
                mem.set(cell(x), v);
                Effect::Write(cell(x), Some(path(y).with(f.clone())))
            }
            StmtKind::Store(x, f, y) => {
                let Some(o) = val(&mem, x) else {
                    t.ending = Ending::NullDeref { stmt: s.id };
                    break;
                };
                let c = field_cell(&o, f);
                let v = val(&mem, y);
                mem.set(c.clone(), v);
                Effect::Write(c, Some(path(y)))
            }
            StmtKind::AddrOf(x, y) => {
                mem.set(cell(x), Some(Obj::Slot(Arc::new(cell(y)))));
                Effect::Write(cell(x), Some(path(y).with(Field::Address)))
            }
            StmtKind::AddrOfField(x, y, f) => {
                let Some(o) = val(&mem, y) else {
                    t.ending = Ending::NullDeref { stmt: s.id };
                    break;
                };
                mem.set(cell(x), Some(Obj::Slot(Arc::new(field_cell(&o, f)))));
                Effect::Write(cell(x), Some(path(y).with(f.clone()).with(Field::Address)))
            }
            StmtKind::StoreAddrOf(x, f, y) => {
                let Some(o) = val(&mem, x) else {
                    t.ending = Ending::NullDeref { stmt: s.id };
                    break;
                };
                let c = field_cell(&o, f);
                mem.set(c.clone(), Some(Obj::Slot(Arc::new(cell(y)))));
                Effect::Write(c, Some(path(y).with(Field::Address)))
            }
            StmtKind::Branch(_) if p.succ[pc].len() > 1 => {
                let k = t.arity.len();
                let c = choices.get(k).copied().unwrap_or(0).min(p.succ[pc].len() - 1);
                t.arity.push(p.succ[pc].len());
                t.choices.push(c);
                next = Some(p.succ[pc][c]);
                Effect::Nothing
            }
            StmtKind::Call { callee, args } => {
                let ci = prog.proc_index(callee).expect("call targets resolve at parse time");
                let c = &prog.procs[ci];
                let fid = next_frame;
                next_frame += 1;
                let mut binds = Vec::new();
                for (f, a) in c.formals.iter().zip(args) {
                    let v = val(&mem, a);
                    mem.set(Cell::Var(Some(fid), f.clone()), v);
                    binds.push((f.clone(), path(a)));
                }
                mem.stack.push(Frame { id: fid, proc_index: ci, proc_name: c.name.clone() });
                t.steps.push(Occurrence { stmt: s.id, before, after: None });
                let call = t.steps.len() - 1;
                t.effects.push(Effect::Bind(fid, binds));
                t.snapshots.push(mem.clone());
                acts.push(Activation { frame: fid, proc_index: ci, pc: 0, call: Some(call) });
                continue;
            }
            StmtKind::Exit => {
                t.effects.push(Effect::Nothing);
                t.snapshots.push(mem.clone());
                t.steps.push(Occurrence { stmt: s.id, before, after: Some(before + 1) });
                let done = acts.pop().unwrap();
                let Some(call) = done.call else { break };
                mem.stack.pop();
                t.effects.push(Effect::Nothing);
                t.snapshots.push(mem.clone());
                t.steps[call].after = Some(t.snapshots.len() - 1);
                let caller = acts.last_mut().unwrap();
                let cp = &prog.procs[caller.proc_index];
                caller.pc = cp.succ[caller.pc][0];
                continue;
            }
            _ => Effect::Nothing,
        };
        t.effects.push(effect);
        t.snapshots.push(mem.clone());
        t.steps.push(Occurrence { stmt: s.id, before, after: Some(before + 1) });
        match next {
            Some(j) => acts.last_mut().unwrap().pc = j,
            None => unreachable!("only the exit has no successor"),
        }
    }
    Ok(t)
}

/// Every branch-decision sequence in lexicographic order, at most
/// `bounds.max_traces` of them. The flag tells whether the cap cut it short.
pub fn enumerate_traces(prog: &Program, bounds: Bounds) -> Result<(Vec<Trace>, bool), OracleError> {
    let mut out = Vec::new();
    let mut choices: Vec<usize> = Vec::new();
    loop {
        if out.len() >= bounds.max_traces {
            return Ok((out, true));
        }
        let t = interpret(prog, &choices, bounds)?;
        let mut c = t.choices.clone();
        let arity = t.arity.clone();
        out.push(t);
        loop {
            match c.pop() {
                None => return Ok((out, false)),
                Some(x) if x + 1 < arity[c.len()] => {
                    c.push(x + 1);
                    break;
                }
                Some(_) => {}
            }
        }
        choices = c;
    }
}

/// Paths before one transition that read what `p` reads after it. `after`
/// is the snapshot following the transition.
fn transfer_one(effect: &Effect, after: &Memory, p: &CPath) -> Option<CPath> {
    match effect {
        Effect::Nothing | Effect::Use(_) => Some(p.clone()),
        Effect::Write(w, source) => {
            let links = after.walk(p);
            match links.iter().position(|l| *l == Link::Cell(w.clone())) {
                None => Some(p.clone()),
                Some(i) => source.as_ref().map(|s| CPath { root: s.root.clone(), fields: s.fields.iter().chain(&p.fields[i..]).cloned().collect() }),
            }
        }
        Effect::Bind(frame, binds) => match &p.root {
            Cell::Var(Some(f), v) if f == frame => binds.iter().find(|(formal, _)| formal == v).map(|(_, a)| CPath {
                root: a.root.clone(),
                fields: a.fields.iter().chain(&p.fields).cloned().collect(),
            }),
            _ => Some(p.clone()),
        },
    }
}

impl Trace {
    /// Paths at snapshot `from` that read the links `paths` read at `to`,
    /// following the statements in between (`from <= to`).
    pub fn transfer_r(&self, from: usize, to: usize, paths: &BTreeSet<CPath>) -> BTreeSet<CPath> {
        let mut cur = paths.clone();
        for i in (from..to).rev() {
            cur = cur.iter().filter_map(|p| transfer_one(&self.effects[i], &self.snapshots[i + 1], p)).collect();
        }
        cur
    }

    /// Prefix-closed live paths at every snapshot, in frame-rooted form.
    pub fn live_sets(&self) -> Vec<BTreeSet<CPath>> {
        let n = self.snapshots.len();
        let mut out = vec![BTreeSet::new(); n];
        for i in (0..n - 1).rev() {
            let mut s: BTreeSet<CPath> = BTreeSet::new();
            for p in &out[i + 1] {
                if let Some(q) = transfer_one(&self.effects[i], &self.snapshots[i + 1], p) {
                    s.extend(q.read_prefixes());
                }
            }
            if let Effect::Use(u) = &self.effects[i] {
                s.insert(u.clone());
            }
            out[i] = s;
        }
        out
    }

    pub fn stmt_ids(&self) -> Vec<u32> {
        self.steps.iter().map(|o| o.stmt.0).collect()
    }
}

/// Every nameable path of length at most `k` without `&`, keyed by the
/// link it ends at.
pub fn link_names(prog: &Program, m: &Memory, k: usize) -> HashMap<Link, BTreeSet<AccessPath>> {
    let mut fields = prog.fields();
    if !fields.contains(&Field::Deref) {
        fields.push(Field::Deref);
    }
    let mut roots: Vec<Cell> = prog.globals.iter().map(|g| Cell::Var(None, g.clone())).collect();
    for p in &prog.procs {
        roots.push(Cell::Var(None, Program::ret_var(&p.name)));
    }
    for f in &m.stack {
        for v in prog.procs[f.proc_index].all_vars() {
            roots.push(Cell::Var(Some(f.id), v.clone()));
        }
    }
    roots.sort();
    roots.dedup();
    let mut out: HashMap<Link, BTreeSet<AccessPath>> = HashMap::new();
    let mut frontier: Vec<(AccessPath, Link)> = Vec::new();
    for r in roots {
        if let Some(v) = m.name_of(&r) {
            frontier.push((AccessPath::var(v), Link::Cell(r)));
        }
    }
    for len in 1..=k {
        let mut next = Vec::new();
        for (p, l) in frontier {
            if len < k {
                if let Some(o) = m.link_value(&l) {
                    for f in &fields {
                        next.push((p.field(f.clone()), Link::Cell(field_cell(&o, f))));
                    }
                }
            }
            out.entry(l).or_default().insert(p);
        }
        frontier = next;
    }
    out
}

/// Paths of length at most `k` that name the same link as `p` in `m`:
/// `p` itself plus every `&`-free path ending at its last link.
pub fn concrete_lna(m: &Memory, names: &HashMap<Link, BTreeSet<AccessPath>>, p: &CPath, k: usize) -> BTreeSet<AccessPath> {
    let mut out = BTreeSet::new();
    if let Some(n) = m.named(p) {
        if n.len() <= k {
            out.insert(n);
        }
    }
    let links = m.walk(p);
    if links.len() == p.fields.len() + 1 {
        if let Some(ns) = names.get(links.last().unwrap()) {
            out.extend(ns.iter().cloned());
        }
    }
    out
}

/// Dynamic live paths (length ≤ k) at every snapshot of the trace.
pub fn dynamic_live_paths(prog: &Program, t: &Trace, k: usize) -> Vec<BTreeSet<AccessPath>> {
    let live = t.live_sets();
    live.iter()
        .zip(&t.snapshots)
        .map(|(s, m)| {
            if s.is_empty() {
                return BTreeSet::new();
            }
            let names = link_names(prog, m, k);
            s.iter().flat_map(|p| concrete_lna(m, &names, p, k)).collect()
        })
        .collect()
}

/// A dynamic live path the static result rejects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub variant: Variant,
    pub point: String,
    pub path: String,
    /// Executed statement ids up to the point.
    pub trace: Vec<u32>,
    pub choices: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SoundnessReport {
    pub traces: usize,
    /// The trace cap cut enumeration short.
    pub capped: bool,
    pub null_derefs: usize,
    pub bounded: usize,
    pub points_checked: usize,
    pub paths_checked: usize,
    pub violations: Vec<Violation>,
}

impl SoundnessReport {
    pub fn is_sound(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every dynamic live path of every trace against `variant`'s
/// result at the matching point. Results at the in-points of `drop` are
/// emptied first, which must be caught.
pub fn check_soundness(prog: &Program, variant: Variant, bounds: Bounds, k: usize, drop: &[StmtId]) -> Result<SoundnessReport, OracleError> {
    let oracle = AliasOracle::new(prog);
    let analysis = Analysis::run(&oracle, variant, InterprocOptions::default())?;
    let (traces, capped) = enumerate_traces(prog, bounds)?;
    Ok(check_traces(prog, &analysis, &traces, capped, k, drop))
}

pub fn check_traces(prog: &Program, analysis: &Analysis, traces: &[Trace], capped: bool, k: usize, drop: &[StmtId]) -> SoundnessReport {
    let mut report = SoundnessReport { traces: traces.len(), capped, ..Default::default() };
    let mut cache: HashMap<Point, LivenessGraph> = HashMap::new();
    let mut seen: BTreeSet<(Point, String)> = BTreeSet::new();
    for t in traces {
        match t.ending {
            Ending::NullDeref { .. } => report.null_derefs += 1,
            Ending::LoopBound { .. } | Ending::StepLimit => report.bounded += 1,
            Ending::Completed => {}
        }
        let dynamic = dynamic_live_paths(prog, t, k);
        for (i, occ) in t.steps.iter().enumerate() {
            let points = [(Point::at_in(occ.stmt), Some(occ.before)), (Point::at_out(occ.stmt), occ.after)];
            for (q, snap) in points {
                let Some(snap) = snap else { continue };
                report.points_checked += 1;
                let stat = cache.entry(q).or_insert_with(|| {
                    if q.side == crate::ir::Side::In && drop.contains(&q.stmt) {
                        LivenessGraph::empty(analysis.variant.mode())
                    } else {
                        analysis.final_union(q)
                    }
                });
                for p in &dynamic[snap] {
                    report.paths_checked += 1;
                    if !stat.accepts(p) && seen.insert((q, p.to_string())) {
                        report.violations.push(Violation {
                            variant: analysis.variant,
                            point: q.to_string(),
                            path: p.to_string(),
                            trace: t.steps[..=i].iter().map(|o| o.stmt.0).collect(),
                            choices: t.choices.clone(),
                        });
                    }
                }
            }
        }
    }
    report
}
