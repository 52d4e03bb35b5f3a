use super::*;

/// Lowers every sugared statement so each statement mentions at most one
/// field, then renumbers statements densely in textual order.
pub fn normalize(p: &Program) -> Result<Program, IrError> {
    let mut next_id = 1u32;
    let mut procs = Vec::with_capacity(p.procs.len());
    for proc_ in &p.procs {
        let mut l = Lowerer::new(proc_);
        for s in &proc_.stmts {
            l.lower(s);
        }
        let mut out = Procedure {
            name: proc_.name.clone(),
            formals: proc_.formals.clone(),
            locals: l.locals,
            stmts: l.out,
            succ: vec![],
            pred: vec![],
            span: proc_.span,
        };
        for s in &mut out.stmts {
            s.id = StmtId(next_id);
            next_id += 1;
        }
        build_cfg(&mut out)?;
        procs.push(out);
    }
    let mut globals = p.globals.clone();
    for s in procs.iter().flat_map(|p| p.stmts.iter()) {
        if let StmtKind::Copy(a, b) = &s.kind {
            for v in [a, b] {
                if v.is_global() && v.name.starts_with("%ret_") && !globals.contains(v) {
                    globals.push(v.clone());
                }
            }
        }
    }
    let prog = Program::new(globals, procs);
    if prog.main().is_none() && !prog.procs.is_empty() {
        return Err(IrError::NoMain);
    }
    Ok(prog)
}

enum Place {
    Var(Var),
    Field(Var, Field),
}

struct Lowerer {
    pname: Arc<str>,
    locals: Vec<Var>,
    next_temp: usize,
    out: Vec<Stmt>,
    span: Span,
    labels: Vec<Arc<str>>,
}

impl Lowerer {
    fn new(p: &Procedure) -> Lowerer {
        let next_temp = p
            .locals
            .iter()
            .filter_map(|v| v.name.strip_prefix("%t").and_then(|n| n.parse::<usize>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        Lowerer { pname: p.name.clone(), locals: p.locals.clone(), next_temp, out: vec![], span: Span::default(), labels: vec![] }
    }

    fn temp(&mut self) -> Var {
        let v = Var::local(&self.pname, &format!("%t{}", self.next_temp));
        self.next_temp += 1;
        self.locals.push(v.clone());
        v
    }

    fn emit(&mut self, kind: StmtKind) {
        let labels = std::mem::take(&mut self.labels);
        self.out.push(Stmt { id: StmtId(0), kind, span: self.span, labels });
    }

    fn lower(&mut self, s: &Stmt) {
        self.span = s.span;
        self.labels = s.labels.clone();
        match &s.kind {
            StmtKind::Sugar(sugar) => self.lower_sugar(sugar),
            k => self.emit(k.clone()),
        }
        // a statement that lowered to nothing would drop its labels
        debug_assert!(self.labels.is_empty());
    }

    fn lower_sugar(&mut self, s: &Sugar) {
        match s {
            Sugar::Use(e) => match self.place(e) {
                Place::Var(v) => self.emit(StmtKind::Use(v)),
                Place::Field(b, f) => {
                    let t = self.temp();
                    self.emit(StmtKind::Load(t.clone(), b, f));
                    self.emit(StmtKind::Use(t));
                }
            },
            Sugar::CallAssign { dst, callee, args } => {
                self.emit(StmtKind::Call { callee: callee.clone(), args: args.clone() });
                self.emit(StmtKind::Copy(dst.clone(), Program::ret_var(callee)));
            }
            Sugar::Ret(v) => {
                self.emit(StmtKind::Copy(Program::ret_var(&self.pname), v.clone()));
                self.emit(StmtKind::Return);
            }
            Sugar::Assign(lhs, rhs) => self.assign(lhs, rhs),
        }
    }

    fn assign(&mut self, lhs: &Expr, rhs: &Rhs) {
        let dst = self.place(lhs);
        match dst {
            Place::Var(x) => match rhs {
                Rhs::New => self.emit(StmtKind::Alloc(x)),
                Rhs::Null => self.emit(StmtKind::Null(x)),
                Rhs::Value(e) => match self.place(e) {
                    Place::Var(y) => self.emit(StmtKind::Copy(x, y)),
                    Place::Field(b, f) => self.emit(StmtKind::Load(x, b, f)),
                },
                Rhs::AddrOf(e) => match self.place(e) {
                    Place::Var(y) => self.emit(StmtKind::AddrOf(x, y)),
                    Place::Field(b, f) => self.emit(StmtKind::AddrOfField(x, b, f)),
                },
            },
            Place::Field(b, f) => match rhs {
                Rhs::New | Rhs::Null => {
                    let t = self.temp();
                    let k = if matches!(rhs, Rhs::New) { StmtKind::Alloc(t.clone()) } else { StmtKind::Null(t.clone()) };
                    self.emit(k);
                    self.emit(StmtKind::Store(b, f, t));
                }
                Rhs::Value(e) => {
                    let y = self.value(e);
                    self.emit(StmtKind::Store(b, f, y));
                }
                Rhs::AddrOf(e) => match self.place(e) {
                    Place::Var(y) => self.emit(StmtKind::StoreAddrOf(b, f, y)),
                    Place::Field(yb, yf) => {
                        let t = self.temp();
                        self.emit(StmtKind::AddrOfField(t.clone(), yb, yf));
                        self.emit(StmtKind::Store(b, f, t));
                    }
                },
            },
        }
    }

    /// A variable holding the value of `e`.
    fn value(&mut self, e: &Expr) -> Var {
        match self.place(e) {
            Place::Var(v) => v,
            Place::Field(b, f) => {
                let t = self.temp();
                self.emit(StmtKind::Load(t.clone(), b, f));
                t
            }
        }
    }

    /// Reduces `e` to a variable or a single `base->f` link.
    fn place(&mut self, e: &Expr) -> Place {
        let mut cur = Place::Var(e.root.clone());
        for step in &e.steps {
            cur = match step {
                Step::Arrow(f) => {
                    let base = match cur {
                        Place::Var(v) => v,
                        Place::Field(b, g) => {
                            let t = self.temp();
                            self.emit(StmtKind::Load(t.clone(), b, g));
                            t
                        }
                    };
                    Place::Field(base, f.clone())
                }
                Step::Dot(f) => {
                    let t = self.temp();
                    match cur {
                        Place::Var(v) => self.emit(StmtKind::AddrOf(t.clone(), v)),
                        Place::Field(b, g) => self.emit(StmtKind::AddrOfField(t.clone(), b, g)),
                    }
                    Place::Field(t, f.clone())
                }
            };
        }
        cur
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(src: &str) -> Vec<String> {
        let p = load(src).unwrap();
        let main = p.main().unwrap();
        main.stmts.iter().map(|s| print::stmt_text(&s.kind)).collect()
    }

    #[test]
    fn chained_use() {
        assert_eq!(body("global y\nproc main { use y->f->f }"), ["%t1 = y->f", "%t2 = %t1->f", "use %t2", "exit"]);
    }

    #[test]
    fn struct_field_store() {
        assert_eq!(body("global x, y\nproc main { x.f = y }"), ["%t1 = &x", "%t1->f = y", "exit"]);
    }

    #[test]
    fn star_and_store_new() {
        assert_eq!(body("global x, y\nproc main { x = *y; x->n = new }"), ["x = *y", "%t1 = new", "x->n = %t1", "exit"]);
    }

    #[test]
    fn already_normal() {
        assert_eq!(body("global x, y\nproc main { x = y }"), ["x = y", "exit"]);
    }

    #[test]
    fn ret_and_call_value() {
        let p = load("global g\nproc f(a) { ret a }\nproc main { g = new; g = call f(g) }").unwrap();
        let f: Vec<_> = p.proc("f").unwrap().stmts.iter().map(|s| print::stmt_text(&s.kind)).collect();
        assert_eq!(f, ["%ret_f = a", "ret", "exit"]);
        let m: Vec<_> = p.main().unwrap().stmts.iter().map(|s| print::stmt_text(&s.kind)).collect();
        assert_eq!(m, ["g = new", "call f(g)", "g = %ret_f", "exit"]);
    }

    #[test]
    fn ids_dense_and_textual() {
        let p = load("global x\nproc f { use x->a }\nproc main { use x; call f }").unwrap();
        let ids: Vec<u32> = p.stmts().map(|s| s.id.0).collect();
        assert_eq!(ids, (1..=ids.len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn idempotent_on_figure_programs() {
        for (_, src) in crate::corpus::ALL {
            let once = load(src).unwrap();
            assert_eq!(normalize(&once).unwrap(), once);
        }
    }
}
