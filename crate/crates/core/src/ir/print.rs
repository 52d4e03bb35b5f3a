use std::fmt;

use super::*;

fn expr_text(e: &Expr) -> String {
    let mut s = e.root.name.to_string();
    for st in &e.steps {
        match st {
            Step::Arrow(Field::Deref) => s = format!("(*{s})"),
            Step::Arrow(f) => s = format!("{s}->{f}"),
            Step::Dot(f) => s = format!("{s}.{f}"),
        }
    }
    s
}

fn link_text(v: &Var, f: &Field) -> String {
    match f {
        Field::Deref => format!("*{}", v.name),
        _ => format!("{}->{f}", v.name),
    }
}

fn args_text(args: &[Var]) -> String {
    args.iter().map(|a| a.name.to_string()).collect::<Vec<_>>().join(", ")
}

/// Source form of one statement; parseable again by `parse_program`.
pub fn stmt_text(k: &StmtKind) -> String {
    match k {
        StmtKind::Use(v) => format!("use {}", v.name),
        StmtKind::Alloc(v) => format!("{} = new", v.name),
        StmtKind::Null(v) => format!("{} = null", v.name),
        StmtKind::Copy(x, y) => format!("{} = {}", x.name, y.name),
        StmtKind::Load(x, y, f) => format!("{} = {}", x.name, link_text(y, f)),
        StmtKind::Store(x, f, y) => format!("{} = {}", link_text(x, f), y.name),
        StmtKind::AddrOf(x, y) => format!("{} = &{}", x.name, y.name),
        StmtKind::AddrOfField(x, y, f) => format!("{} = &({})", x.name, link_text(y, f)),
        StmtKind::StoreAddrOf(x, f, y) => format!("{} = &{}", link_text(x, f), y.name),
        StmtKind::Call { callee, args } => format!("call {callee}({})", args_text(args)),
        StmtKind::Return => "ret".into(),
        StmtKind::Goto(l) => format!("goto {l}"),
        StmtKind::Branch(ls) => format!("br {}", ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")),
        StmtKind::Skip => "skip".into(),
        StmtKind::Exit => "exit".into(),
        StmtKind::Sugar(s) => match s {
            Sugar::Use(e) => format!("use {}", expr_text(e)),
            Sugar::Assign(l, r) => {
                let r = match r {
                    Rhs::New => "new".to_string(),
                    Rhs::Null => "null".to_string(),
                    Rhs::Value(e) => expr_text(e),
                    Rhs::AddrOf(e) => format!("&({})", expr_text(e)),
                };
                format!("{} = {r}", expr_text(l))
            }
            Sugar::CallAssign { dst, callee, args } => format!("{} = call {callee}({})", dst.name, args_text(args)),
            Sugar::Ret(v) => format!("ret {}", v.name),
        },
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", stmt_text(&self.kind))
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let user_globals: Vec<&str> = self.globals.iter().map(|g| &*g.name).collect();
        if !user_globals.is_empty() {
            writeln!(f, "global {}", user_globals.join(", "))?;
        }
        for p in &self.procs {
            writeln!(f, "proc {}({}) {{", p.name, args_text(&p.formals))?;
            if !p.locals.is_empty() {
                writeln!(f, "  local {}", args_text(&p.locals))?;
            }
            for s in &p.stmts {
                for l in &s.labels {
                    writeln!(f, "{l}:")?;
                }
                if !matches!(s.kind, StmtKind::Exit) {
                    writeln!(f, "  {}    # {}", stmt_text(&s.kind), s.id)?;
                }
            }
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}
