//! Backward heap liveness over one procedure: transfer functions and the
//! greedy and two-phase fixpoint engines.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::alias::AliasOracle;
use crate::apgraph::{AccessPath, LivenessGraph, Mode, SiteLabel};
use crate::ir::{Field, Point, Procedure, StmtId, StmtKind, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Variant {
    /// Greedy closure, one site per node.
    A,
    /// Greedy closure, site sets per node.
    B,
    /// Two phases, one site per node.
    C,
    /// Two phases, site sets per node.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn mode(self) -> Mode {
        match self {
            Variant::A | Variant::C => Mode::NonDet,
            Variant::B | Variant::D => Mode::Det,
        }
    }

    pub fn greedy(self) -> bool {
        matches!(self, Variant::A | Variant::B)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown variant `{0}` (expected A, B, C or D)")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;
    fn from_str(s: &str) -> Result<Variant, UnknownVariant> {
        match s.trim() {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            "D" | "d" => Ok(Variant::D),
            other => Err(UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Options {
    /// Insert may link-aliases into the reported values (and, for the greedy
    /// variants, into the propagated ones). Gen and kill use aliases regardless.
    pub close_aliases: bool,
    /// Upper bound on round-robin passes; reaching it is a bug.
    pub max_passes: usize,
}

impl Default for Options {
    fn default() -> Options {
        Options { close_aliases: true, max_passes: 10_000 }
    }
}

/// Supplies the liveness before a call from the liveness after it.
pub trait CallHandler {
    fn call(&mut self, stmt: StmtId, callee: &str, args: &[Var], after: &LivenessGraph) -> LivenessGraph;
}

/// Treats every call as a no-op; for call-free procedures.
pub struct NoCalls;

impl CallHandler for NoCalls {
    fn call(&mut self, _: StmtId, _: &str, _: &[Var], after: &LivenessGraph) -> LivenessGraph {
        after.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ProcResult {
    pub variant: Variant,
    /// Passes that changed some value.
    pub iterations: usize,
    /// Propagated values per statement index: alias-closed for the greedy
    /// variants, phase-one values for the others.
    pub value_in: Vec<LivenessGraph>,
    pub value_out: Vec<LivenessGraph>,
}

impl ProcResult {
    pub fn value(&self, p: &Procedure, q: Point) -> &LivenessGraph {
        let i = p.index_of(q.stmt).expect("point outside procedure");
        match q.side {
            crate::ir::Side::In => &self.value_in[i],
            crate::ir::Side::Out => &self.value_out[i],
        }
    }
}

fn kill_var(g: &LivenessGraph, x: &Var) -> LivenessGraph {
    g.kill_prefix(&AccessPath::var(x.clone()))
}

fn with_var(mut g: LivenessGraph, v: &Var) -> LivenessGraph {
    g.insert_var(v);
    g
}

/// Liveness before statement `id` given the liveness after it, without
/// any alias closure of the result.
pub fn transfer(
    oracle: &AliasOracle,
    id: StmtId,
    kind: &StmtKind,
    out: &LivenessGraph,
    calls: &mut dyn CallHandler,
) -> LivenessGraph {
    let here = SiteLabel::Use(id);
    let reads = |x: &Var| out.root(x).is_some();
    match kind {
        StmtKind::Use(x) => with_var(out.clone(), x),
        StmtKind::Alloc(x) | StmtKind::Null(x) => kill_var(out, x),
        StmtKind::Copy(x, y) => {
            let gen = out.gen_transfer(&AccessPath::var(x.clone()), &AccessPath::var(y.clone()), here);
            let mut g = kill_var(out, x);
            g.union_in(&gen);
            g
        }
        StmtKind::Load(x, y, f) => gen_through(out, x, y, std::slice::from_ref(f), here, true, reads(x)),
        StmtKind::AddrOf(x, y) => gen_through(out, x, y, &[Field::Address], here, false, reads(x)),
        StmtKind::AddrOfField(x, y, f) => gen_through(out, x, y, &[f.clone(), Field::Address], here, true, reads(x)),
        StmtKind::Store(x, f, y) => store(oracle, id, x, f, AccessPath::var(y.clone()), out, here),
        StmtKind::StoreAddrOf(x, f, y) => store(oracle, id, x, f, AccessPath::new(y.clone(), [Field::Address]), out, here),
        StmtKind::Call { callee, args } => calls.call(id, callee, args, out),
        _ => out.clone(),
    }
}

/// `x = y.fields`: suffixes live after `x` become live after `y.fields`.
fn gen_through(out: &LivenessGraph, x: &Var, y: &Var, fields: &[Field], here: SiteLabel, bare_y: bool, x_live: bool) -> LivenessGraph {
    if !x_live {
        return kill_var(out, x);
    }
    let gen = out.gen_transfer(&AccessPath::var(x.clone()), &AccessPath::new(y.clone(), fields.iter().cloned()), here);
    let mut g = kill_var(out, x);
    g.union_in(&gen);
    if bare_y {
        g.insert_var(y);
    }
    g
}

fn store(oracle: &AliasOracle, id: StmtId, x: &Var, f: &Field, value: AccessPath, out: &LivenessGraph, here: SiteLabel) -> LivenessGraph {
    let must = oracle.must_link_aliases(id, x, f);
    assert!(!must.is_empty(), "must-alias set lost reflexivity");
    let states = oracle.states_aliasing(id, x, f, out);
    let gen = out.transfer_states(&states, &value, here);
    let mut g = out.clone();
    for m in &must {
        g = g.kill_prefix(m);
    }
    g.union_in(&gen);
    g.insert_var(x);
    g
}

/// Statement indices in reverse post-order of the reversed CFG.
pub fn backward_order(p: &Procedure) -> Vec<usize> {
    let n = p.stmts.len();
    let mut seen = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut starts = vec![p.exit()];
    starts.extend((0..n).rev());
    for s in starts {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack: Vec<(usize, usize)> = vec![(s, 0)];
        while let Some((v, i)) = stack.pop() {
            let mut preds = p.pred[v].clone();
            preds.sort_unstable();
            if i < preds.len() {
                stack.push((v, i + 1));
                let w = preds[i];
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                post.push(v);
            }
        }
    }
    post.reverse();
    post
}

/// Runs one variant over `p`, starting from `boundary` after the exit.
pub fn run_variant(
    oracle: &AliasOracle,
    p: &Procedure,
    variant: Variant,
    boundary: &LivenessGraph,
    opts: &Options,
    calls: &mut dyn CallHandler,
) -> ProcResult {
    let mode = variant.mode();
    let close = opts.close_aliases && variant.greedy();
    let n = p.stmts.len();
    let empty = LivenessGraph::empty(mode);
    let mut value_in = vec![empty.clone(); n];
    let mut value_out = vec![empty.clone(); n];
    let order = backward_order(p);
    let mut iterations = 0;
    for pass in 0.. {
        assert!(pass < opts.max_passes, "liveness did not converge in {} passes", opts.max_passes);
        let mut changed = false;
        for &i in &order {
            let s = &p.stmts[i];
            let mut out = if i == p.exit() { boundary.clone() } else { empty.clone() };
            for &k in &p.succ[i] {
                out.union_in(&value_in[k]);
            }
            if close {
                out = oracle.close(Point::at_out(s.id), &out);
            }
            let mut inn = transfer(oracle, s.id, &s.kind, &out, calls);
            if s.is_call() {
                // callee contexts are picked by value, so a call is not
                // monotone on its own
                inn.union_in(&value_in[i]);
            }
            if close {
                inn = oracle.close(Point::at_in(s.id), &inn);
            }
            if out != value_out[i] {
                value_out[i] = out;
                changed = true;
            }
            if inn != value_in[i] {
                value_in[i] = inn;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;
    }
    ProcResult { variant, iterations, value_in, value_out }
}

pub fn run_greedy(oracle: &AliasOracle, p: &Procedure, mode: Mode, opts: &Options, calls: &mut dyn CallHandler) -> ProcResult {
    let v = if mode == Mode::NonDet { Variant::A } else { Variant::B };
    run_variant(oracle, p, v, &LivenessGraph::empty(mode), opts, calls)
}

pub fn run_minimal(oracle: &AliasOracle, p: &Procedure, mode: Mode, opts: &Options, calls: &mut dyn CallHandler) -> ProcResult {
    let v = if mode == Mode::NonDet { Variant::C } else { Variant::D };
    run_variant(oracle, p, v, &LivenessGraph::empty(mode), opts, calls)
}

/// The reported value at a point: greedy values are already closed, the
/// two-phase variants close their phase-one value here without propagating.
pub fn final_at(oracle: &AliasOracle, r: &ProcResult, p: &Procedure, q: Point, opts: &Options) -> LivenessGraph {
    let v = r.value(p, q);
    if r.variant.greedy() || !opts.close_aliases {
        v.clone()
    } else {
        oracle.close(q, v)
    }
}
