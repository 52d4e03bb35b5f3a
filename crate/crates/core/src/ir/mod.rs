//! Pointer-program IR: parsing, lowering to one-field statements, CFGs and the call graph.

mod cfg;
mod lower;
mod parse;
mod print;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

pub use cfg::{build_cfg, CallGraph};
pub use lower::normalize;
pub use parse::parse_program;
pub use print::stmt_text;

/// Parses and normalizes in one step; the form every analysis expects.
pub fn load(text: &str) -> Result<Program, IrError> {
    normalize(&parse_program(text)?)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IrError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared variable `{name}`")]
    Undeclared { line: usize, col: usize, name: String },
    #[error("duplicate procedure `{0}`")]
    DuplicateProc(String),
    #[error("{line}:{col}: call to `{callee}` passes {got} arguments, expected {want}")]
    Arity { line: usize, col: usize, callee: String, got: usize, want: usize },
    #[error("{line}:{col}: call to unknown procedure `{0}`", .callee)]
    UnknownProc { line: usize, col: usize, callee: String },
    #[error("procedure `{proc_name}`: undefined label `{label}`")]
    UndefinedLabel { proc_name: String, label: String },
    #[error("procedure `{proc_name}`: label `{label}` defined twice")]
    DuplicateLabel { proc_name: String, label: String },
    #[error("procedure `{proc_name}`: statement at {line}:{col} is unreachable")]
    Unreachable { proc_name: String, line: usize, col: usize },
    #[error("no `main` procedure")]
    NoMain,
    #[error("{line}:{col}: `{name}` is reserved")]
    Reserved { line: usize, col: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Global,
    Local(Arc<str>),
    /// Older frames of a procedure that has a newer frame on the stack.
    Shadow(Arc<str>),
}

/// A program variable. Locals are qualified by their procedure, so equal names
/// in different procedures are different variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub name: Arc<str>,
    pub scope: Scope,
}

impl Var {
    pub fn global(name: &str) -> Var {
        Var { name: name.into(), scope: Scope::Global }
    }

    pub fn local(proc_name: &str, name: &str) -> Var {
        Var { name: name.into(), scope: Scope::Local(proc_name.into()) }
    }

    pub fn is_global(&self) -> bool {
        matches!(self.scope, Scope::Global)
    }

    pub fn owner(&self) -> Option<&str> {
        match &self.scope {
            Scope::Global => None,
            Scope::Local(p) | Scope::Shadow(p) => Some(p),
        }
    }

    pub fn is_shadow(&self) -> bool {
        matches!(self.scope, Scope::Shadow(_))
    }

    pub fn shadowed(&self) -> Var {
        match &self.scope {
            Scope::Local(p) => Var { name: self.name.clone(), scope: Scope::Shadow(p.clone()) },
            _ => self.clone(),
        }
    }

    pub fn unshadowed(&self) -> Var {
        match &self.scope {
            Scope::Shadow(p) => Var { name: self.name.clone(), scope: Scope::Local(p.clone()) },
            _ => self.clone(),
        }
    }

    pub fn is_temp(&self) -> bool {
        self.name.starts_with('%')
    }

    /// `proc::name`, `proc::name'` or `name` for globals.
    pub fn qualified(&self) -> String {
        match &self.scope {
            Scope::Global => self.name.to_string(),
            Scope::Local(p) => format!("{p}::{}", self.name),
            Scope::Shadow(p) => format!("{p}::{}'", self.name),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if self.is_shadow() {
            f.write_str("'")?;
        }
        Ok(())
    }
}

impl Serialize for Var {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.qualified())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    Named(Arc<str>),
    /// `*p` is modelled as `p->deref`.
    Deref,
    /// The `&` pseudo-field: the storage embedded at a link.
    Address,
}

impl Field {
    pub fn named(name: &str) -> Field {
        match name {
            "deref" => Field::Deref,
            "&" | "address" => Field::Address,
            _ => Field::Named(name.into()),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Named(n) => f.write_str(n),
            Field::Deref => f.write_str("deref"),
            Field::Address => f.write_str("&"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StmtId(pub u32);

impl fmt::Display for StmtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Point {
    pub side: Side,
    pub stmt: StmtId,
}

impl Point {
    pub fn at_in(stmt: StmtId) -> Point {
        Point { side: Side::In, stmt }
    }
    pub fn at_out(stmt: StmtId) -> Point {
        Point { side: Side::Out, stmt }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.side {
            Side::In => write!(f, "in_{}", self.stmt),
            Side::Out => write!(f, "out_{}", self.stmt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Use(Var),
    Alloc(Var),
    Null(Var),
    Copy(Var, Var),
    Load(Var, Var, Field),
    Store(Var, Field, Var),
    AddrOf(Var, Var),
    AddrOfField(Var, Var, Field),
    StoreAddrOf(Var, Field, Var),
    Call { callee: Arc<str>, args: Vec<Var> },
    Return,
    Goto(Arc<str>),
    Branch(Vec<Arc<str>>),
    Skip,
    /// Synthetic procedure exit.
    Exit,
    /// Not yet lowered; only present before `normalize`.
    Sugar(Sugar),
}

/// Surface forms that need lowering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sugar {
    Use(Expr),
    Assign(Expr, Rhs),
    CallAssign { dst: Var, callee: Arc<str>, args: Vec<Var> },
    Ret(Var),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rhs {
    New,
    Null,
    Value(Expr),
    AddrOf(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Arrow(Field),
    Dot(Field),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub root: Var,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub id: StmtId,
    pub kind: StmtKind,
    pub span: Span,
    pub labels: Vec<Arc<str>>,
}

impl Stmt {
    /// The variable whose link this statement overwrites, if any.
    pub fn defined_var(&self) -> Option<&Var> {
        match &self.kind {
            StmtKind::Alloc(x)
            | StmtKind::Null(x)
            | StmtKind::Copy(x, _)
            | StmtKind::Load(x, _, _)
            | StmtKind::AddrOf(x, _)
            | StmtKind::AddrOfField(x, _, _) => Some(x),
            _ => None,
        }
    }

    /// Number of field occurrences in the statement.
    pub fn field_count(&self) -> usize {
        match &self.kind {
            StmtKind::Load(..) | StmtKind::Store(..) | StmtKind::AddrOfField(..) | StmtKind::StoreAddrOf(..) => 1,
            StmtKind::Sugar(s) => match s {
                Sugar::Use(e) => e.steps.len(),
                Sugar::Assign(l, r) => {
                    l.steps.len()
                        + match r {
                            Rhs::Value(e) | Rhs::AddrOf(e) => e.steps.len(),
                            _ => 0,
                        }
                }
                _ => 0,
            },
            _ => 0,
        }
    }

    pub fn is_call(&self) -> bool {
        matches!(self.kind, StmtKind::Call { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Procedure {
    pub name: Arc<str>,
    pub formals: Vec<Var>,
    pub locals: Vec<Var>,
    /// Body in textual order; after `normalize` the last one is the exit.
    pub stmts: Vec<Stmt>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    pub span: Span,
}

impl Procedure {
    pub fn entry(&self) -> usize {
        0
    }

    pub fn exit(&self) -> usize {
        self.stmts.len() - 1
    }

    pub fn index_of(&self, id: StmtId) -> Option<usize> {
        let first = self.stmts.first()?.id.0;
        let i = id.0.checked_sub(first)? as usize;
        (i < self.stmts.len() && self.stmts[i].id == id).then_some(i)
    }

    pub fn stmt(&self, id: StmtId) -> &Stmt {
        &self.stmts[self.index_of(id).expect("statement not in procedure")]
    }

    pub fn ids(&self) -> impl Iterator<Item = StmtId> + '_ {
        self.stmts.iter().map(|s| s.id)
    }

    /// Every in/out point, in statement order.
    pub fn points(&self) -> Vec<Point> {
        self.ids().flat_map(|s| [Point::at_in(s), Point::at_out(s)]).collect()
    }

    pub fn all_vars(&self) -> impl Iterator<Item = &Var> {
        self.formals.iter().chain(self.locals.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub globals: Vec<Var>,
    pub procs: Vec<Procedure>,
    by_name: BTreeMap<Arc<str>, usize>,
}

impl Program {
    pub(crate) fn new(globals: Vec<Var>, procs: Vec<Procedure>) -> Program {
        let by_name = procs.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Program { globals, procs, by_name }
    }

    pub fn proc_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn proc(&self, name: &str) -> Option<&Procedure> {
        self.proc_index(name).map(|i| &self.procs[i])
    }

    pub fn main(&self) -> Option<&Procedure> {
        self.proc("main")
    }

    /// The procedure containing a statement.
    pub fn owner_of(&self, id: StmtId) -> Option<&Procedure> {
        self.procs.iter().find(|p| p.index_of(id).is_some())
    }

    pub fn stmt(&self, id: StmtId) -> Option<&Stmt> {
        let p = self.owner_of(id)?;
        Some(p.stmt(id))
    }

    pub fn stmts(&self) -> impl Iterator<Item = &Stmt> {
        self.procs.iter().flat_map(|p| p.stmts.iter())
    }

    /// Variable holding the return value of `proc_name`.
    pub fn ret_var(proc_name: &str) -> Var {
        Var::global(&format!("%ret_{proc_name}"))
    }

    pub fn is_normalized(&self) -> bool {
        self.stmts().all(|s| !matches!(s.kind, StmtKind::Sugar(_)))
    }

    /// All field names occurring in the program.
    pub fn fields(&self) -> Vec<Field> {
        let mut out: Vec<Field> = Vec::new();
        for s in self.stmts() {
            match &s.kind {
                StmtKind::Load(_, _, f) | StmtKind::Store(_, f, _) | StmtKind::AddrOfField(_, _, f) | StmtKind::StoreAddrOf(_, f, _) => {
                    out.push(f.clone())
                }
                _ => {}
            }
        }
        out.sort();
        out.dedup();
        out
    }
}
