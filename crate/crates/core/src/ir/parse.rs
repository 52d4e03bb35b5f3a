use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Arrow,
    Eq,
    Amp,
    Star,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Dot,
    /// Newline or `;`.
    Sep,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(text: &str) -> Result<Vec<Token>, IrError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let span = Span { line: line_no, col: i + 1 };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_alphanumeric() || c == '_' || c == '%' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '%') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), span });
                continue;
            }
            let tok = match c {
                '-' if chars.get(i + 1) == Some(&'>') => {
                    i += 1;
                    Tok::Arrow
                }
                '=' => Tok::Eq,
                '&' => Tok::Amp,
                '*' => Tok::Star,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                ',' => Tok::Comma,
                ':' => Tok::Colon,
                '.' => Tok::Dot,
                ';' => Tok::Sep,
                '[' | ']' | '+' | '-' => {
                    return Err(IrError::Syntax {
                        line: span.line,
                        col: span.col,
                        msg: "arrays and pointer arithmetic are not supported".into(),
                    })
                }
                other => {
                    return Err(IrError::Syntax { line: span.line, col: span.col, msg: format!("unexpected character `{other}`") })
                }
            };
            out.push(Token { tok, span });
            i += 1;
        }
        out.push(Token { tok: Tok::Sep, span: Span { line: line_no, col: chars.len() + 1 } });
    }
    let end = out.last().map(|t| t.span).unwrap_or(Span { line: 1, col: 1 });
    out.push(Token { tok: Tok::Eof, span: end });
    Ok(out)
}

const KEYWORDS: &[&str] = &["global", "local", "proc", "use", "new", "null", "goto", "br", "call", "ret", "skip"];
const RESERVED_FIELDS: &[&str] = &["deref", "address"];

struct RawProc {
    name: String,
    formals: Vec<String>,
    locals: Vec<(String, Span)>,
    body: Vec<Token>,
    span: Span,
}

/// Parses program text. Sugared statements are kept as `StmtKind::Sugar`
/// until `normalize` lowers them.
pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let mut globals: Vec<String> = Vec::new();
    let mut raw: Vec<RawProc> = Vec::new();
    loop {
        p.skip_seps();
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(k) if k == "global" => {
                p.bump();
                for g in p.ident_list()? {
                    if !globals.contains(&g) {
                        globals.push(g);
                    }
                }
            }
            Tok::Ident(k) if k == "proc" => raw.push(p.proc_header_and_body()?),
            _ => return Err(p.error("expected `global` or `proc`")),
        }
    }

    let mut names = BTreeSet::new();
    for r in &raw {
        if !names.insert(r.name.clone()) {
            return Err(IrError::DuplicateProc(r.name.clone()));
        }
    }
    let arity: BTreeMap<String, usize> = raw.iter().map(|r| (r.name.clone(), r.formals.len())).collect();
    let global_vars: Vec<Var> = globals.iter().map(|g| Var::global(g)).collect();

    let mut next_id = 1u32;
    let mut procs = Vec::new();
    for r in raw {
        let proc_ = build_proc(r, &globals, &arity, &mut next_id)?;
        procs.push(proc_);
    }
    let mut prog = Program::new(global_vars, procs);
    for i in 0..prog.procs.len() {
        build_cfg(&mut prog.procs[i])?;
    }
    if prog.main().is_none() && !prog.procs.is_empty() {
        return Err(IrError::NoMain);
    }
    Ok(prog)
}

fn build_proc(r: RawProc, globals: &[String], arity: &BTreeMap<String, usize>, next_id: &mut u32) -> Result<Procedure, IrError> {
    let pname: Arc<str> = r.name.as_str().into();
    let mut scope: BTreeMap<String, Var> = globals.iter().map(|g| (g.clone(), Var::global(g))).collect();
    let mut formals = Vec::new();
    for f in &r.formals {
        let v = Var::local(&pname, f);
        scope.insert(f.clone(), v.clone());
        formals.push(v);
    }
    let mut locals = Vec::new();
    for (l, _) in &r.locals {
        let v = Var::local(&pname, l);
        if scope.get(l).is_some_and(|old| !old.is_global()) {
            continue;
        }
        scope.insert(l.clone(), v.clone());
        locals.push(v);
    }
    let mut bp = BodyParser { p: Parser { toks: r.body, pos: 0 }, scope, arity };
    let mut stmts = Vec::new();
    let mut pending: Vec<Arc<str>> = Vec::new();
    loop {
        bp.p.skip_seps();
        if bp.p.peek() == &Tok::Eof {
            break;
        }
        if let (Tok::Ident(l), Tok::Colon) = (bp.p.peek().clone(), bp.p.peek_at(1).clone()) {
            if !KEYWORDS.contains(&l.as_str()) {
                bp.p.bump();
                bp.p.bump();
                pending.push(l.as_str().into());
                continue;
            }
        }
        let span = bp.p.span();
        let kind = bp.stmt()?;
        stmts.push(Stmt { id: StmtId(0), kind, span, labels: std::mem::take(&mut pending) });
    }
    stmts.push(Stmt { id: StmtId(0), kind: StmtKind::Exit, span: r.span, labels: pending });
    for s in &mut stmts {
        s.id = StmtId(*next_id);
        *next_id += 1;
    }
    Ok(Procedure { name: pname, formals, locals, stmts, succ: vec![], pred: vec![], span: r.span })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &str) -> IrError {
        let s = self.span();
        IrError::Syntax { line: s.line, col: s.col, msg: msg.to_string() }
    }

    fn skip_seps(&mut self) {
        while self.peek() == &Tok::Sep {
            self.bump();
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), IrError> {
        if self.peek() == &t {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, IrError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&format!("expected {what}"))),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>, IrError> {
        let mut out = vec![self.ident("a variable name")?];
        while self.peek() == &Tok::Comma {
            self.bump();
            out.push(self.ident("a variable name")?);
        }
        Ok(out)
    }

    fn proc_header_and_body(&mut self) -> Result<RawProc, IrError> {
        let span = self.span();
        self.bump();
        let name = self.ident("a procedure name")?;
        let mut formals = Vec::new();
        if self.peek() == &Tok::LParen {
            self.bump();
            if self.peek() != &Tok::RParen {
                formals = self.ident_list()?;
            }
            self.expect(Tok::RParen, "`)`")?;
        }
        self.skip_seps();
        self.expect(Tok::LBrace, "`{`")?;
        let mut body = Vec::new();
        let mut locals = Vec::new();
        let mut depth = 1;
        let mut at_line_start = true;
        loop {
            let t = self.toks[self.pos].clone();
            match t.tok {
                Tok::Eof => return Err(self.error("unterminated procedure body")),
                Tok::LBrace => depth += 1,
                Tok::RBrace => {
                    depth -= 1;
                    if depth == 0 {
                        self.bump();
                        break;
                    }
                }
                Tok::Ident(ref k) if k == "local" && at_line_start => {
                    self.bump();
                    let sp = self.span();
                    for l in self.ident_list()? {
                        locals.push((l, sp));
                    }
                    continue;
                }
                _ => {}
            }
            at_line_start = t.tok == Tok::Sep;
            body.push(t);
            self.bump();
        }
        let end = body.last().map(|t: &Token| t.span).unwrap_or(span);
        body.push(Token { tok: Tok::Eof, span: end });
        Ok(RawProc { name, formals, locals, body, span })
    }
}

struct BodyParser<'a> {
    p: Parser,
    scope: BTreeMap<String, Var>,
    arity: &'a BTreeMap<String, usize>,
}

impl BodyParser<'_> {
    fn var(&mut self) -> Result<Var, IrError> {
        let span = self.p.span();
        let name = self.p.ident("a variable")?;
        if KEYWORDS.contains(&name.as_str()) {
            return Err(IrError::Syntax { line: span.line, col: span.col, msg: format!("unexpected keyword `{name}`") });
        }
        self.scope.get(&name).cloned().ok_or(IrError::Undeclared { line: span.line, col: span.col, name })
    }

    fn field(&mut self) -> Result<Field, IrError> {
        let span = self.p.span();
        let name = self.p.ident("a field name")?;
        if RESERVED_FIELDS.contains(&name.as_str()) || KEYWORDS.contains(&name.as_str()) {
            return Err(IrError::Reserved { line: span.line, col: span.col, name });
        }
        Ok(Field::Named(name.as_str().into()))
    }

    /// `*`* postfix, where postfix is a variable or parenthesised expression
    /// followed by `->f` / `.f` steps.
    fn expr(&mut self) -> Result<Expr, IrError> {
        let mut stars = 0;
        while self.p.peek() == &Tok::Star {
            self.p.bump();
            stars += 1;
        }
        let mut e = if self.p.peek() == &Tok::LParen {
            self.p.bump();
            let e = self.expr()?;
            self.p.expect(Tok::RParen, "`)`")?;
            e
        } else {
            Expr { root: self.var()?, steps: vec![] }
        };
        loop {
            match self.p.peek() {
                Tok::Arrow => {
                    self.p.bump();
                    let f = self.field()?;
                    e.steps.push(Step::Arrow(f));
                }
                Tok::Dot => {
                    self.p.bump();
                    let f = self.field()?;
                    e.steps.push(Step::Dot(f));
                }
                _ => break,
            }
        }
        for _ in 0..stars {
            e.steps.push(Step::Arrow(Field::Deref));
        }
        Ok(e)
    }

    fn args(&mut self, callee: &str, span: Span) -> Result<Vec<Var>, IrError> {
        let want = *self.arity.get(callee).ok_or(IrError::UnknownProc { line: span.line, col: span.col, callee: callee.to_string() })?;
        let mut args = Vec::new();
        if self.p.peek() == &Tok::LParen {
            self.p.bump();
            if self.p.peek() != &Tok::RParen {
                args.push(self.var()?);
                while self.p.peek() == &Tok::Comma {
                    self.p.bump();
                    args.push(self.var()?);
                }
            }
            self.p.expect(Tok::RParen, "`)`")?;
        }
        if args.len() != want {
            return Err(IrError::Arity { line: span.line, col: span.col, callee: callee.to_string(), got: args.len(), want });
        }
        Ok(args)
    }

    fn end_of_stmt(&mut self) -> Result<(), IrError> {
        match self.p.peek() {
            Tok::Sep | Tok::Eof => Ok(()),
            _ => Err(self.p.error("expected end of statement")),
        }
    }

    fn stmt(&mut self) -> Result<StmtKind, IrError> {
        let span = self.p.span();
        let kind = match self.p.peek().clone() {
            Tok::Ident(k) if k == "use" => {
                self.p.bump();
                let e = self.expr()?;
                if e.steps.is_empty() {
                    StmtKind::Use(e.root)
                } else {
                    StmtKind::Sugar(Sugar::Use(e))
                }
            }
            Tok::Ident(k) if k == "skip" => {
                self.p.bump();
                StmtKind::Skip
            }
            Tok::Ident(k) if k == "goto" => {
                self.p.bump();
                StmtKind::Goto(self.p.ident("a label")?.as_str().into())
            }
            Tok::Ident(k) if k == "br" => {
                self.p.bump();
                let mut targets = vec![];
                while let Tok::Ident(l) = self.p.peek().clone() {
                    self.p.bump();
                    targets.push(Arc::<str>::from(l.as_str()));
                    if self.p.peek() == &Tok::Comma {
                        self.p.bump();
                    }
                }
                if targets.is_empty() {
                    return Err(self.p.error("expected branch targets"));
                }
                StmtKind::Branch(targets)
            }
            Tok::Ident(k) if k == "call" => {
                self.p.bump();
                let callee = self.p.ident("a procedure name")?;
                let args = self.args(&callee, span)?;
                StmtKind::Call { callee: callee.as_str().into(), args }
            }
            Tok::Ident(k) if k == "ret" => {
                self.p.bump();
                if matches!(self.p.peek(), Tok::Ident(_)) {
                    StmtKind::Sugar(Sugar::Ret(self.var()?))
                } else {
                    StmtKind::Return
                }
            }
            _ => {
                let lhs = self.expr()?;
                self.p.expect(Tok::Eq, "`=`")?;
                self.assignment(lhs, span)?
            }
        };
        self.end_of_stmt()?;
        Ok(kind)
    }

    fn assignment(&mut self, lhs: Expr, span: Span) -> Result<StmtKind, IrError> {
        let rhs = match self.p.peek().clone() {
            Tok::Ident(k) if k == "new" => {
                self.p.bump();
                Rhs::New
            }
            Tok::Ident(k) if k == "null" => {
                self.p.bump();
                Rhs::Null
            }
            Tok::Ident(k) if k == "call" => {
                self.p.bump();
                let callee = self.p.ident("a procedure name")?;
                let args = self.args(&callee, span)?;
                if !lhs.steps.is_empty() {
                    return Err(IrError::Syntax { line: span.line, col: span.col, msg: "call result must go to a variable".into() });
                }
                return Ok(StmtKind::Sugar(Sugar::CallAssign { dst: lhs.root, callee: callee.as_str().into(), args }));
            }
            Tok::Amp => {
                self.p.bump();
                Rhs::AddrOf(self.expr()?)
            }
            _ => Rhs::Value(self.expr()?),
        };
        Ok(classify(lhs, rhs))
    }
}

/// Picks the primitive statement form when the assignment already has one.
fn classify(lhs: Expr, rhs: Rhs) -> StmtKind {
    let simple = |e: &Expr| e.steps.is_empty();
    let one_arrow = |e: &Expr| matches!(e.steps.as_slice(), [Step::Arrow(_)]);
    let arrow_field = |e: &Expr| match e.steps.as_slice() {
        [Step::Arrow(f)] => f.clone(),
        _ => unreachable!(),
    };
    if simple(&lhs) {
        let x = lhs.root.clone();
        match &rhs {
            Rhs::New => return StmtKind::Alloc(x),
            Rhs::Null => return StmtKind::Null(x),
            Rhs::Value(e) if simple(e) => return StmtKind::Copy(x, e.root.clone()),
            Rhs::Value(e) if one_arrow(e) => return StmtKind::Load(x, e.root.clone(), arrow_field(e)),
            Rhs::AddrOf(e) if simple(e) => return StmtKind::AddrOf(x, e.root.clone()),
            Rhs::AddrOf(e) if one_arrow(e) => return StmtKind::AddrOfField(x, e.root.clone(), arrow_field(e)),
            _ => {}
        }
    } else if one_arrow(&lhs) {
        let f = arrow_field(&lhs);
        match &rhs {
            Rhs::Value(e) if simple(e) => return StmtKind::Store(lhs.root.clone(), f, e.root.clone()),
            Rhs::AddrOf(e) if simple(e) => return StmtKind::StoreAddrOf(lhs.root.clone(), f, e.root.clone()),
            _ => {}
        }
    }
    StmtKind::Sugar(Sugar::Assign(lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("global x\nproc main { use x }").unwrap();
        assert_eq!(p.procs.len(), 1);
        // one statement plus the synthetic exit
        assert_eq!(p.procs[0].stmts.len(), 2);
        assert_eq!(p.procs[0].stmts[0].kind, StmtKind::Use(Var::global("x")));
    }

    #[test]
    fn missing_field_is_a_syntax_error() {
        let e = parse_program("global x, y\nproc main {\n x = y ->\n}").unwrap_err();
        assert!(matches!(e, IrError::Syntax { line: 3, .. }), "{e}");
    }

    #[test]
    fn undeclared_and_arity() {
        assert!(matches!(parse_program("proc main { use q }"), Err(IrError::Undeclared { .. })));
        let src = "global a\nproc f(p) { use p }\nproc main { call f() }";
        assert!(matches!(parse_program(src), Err(IrError::Arity { got: 0, want: 1, .. })));
        assert!(matches!(parse_program("proc main { call g() }"), Err(IrError::UnknownProc { .. })));
    }

    #[test]
    fn duplicate_proc() {
        let e = parse_program("proc main { skip }\nproc main { skip }").unwrap_err();
        assert_eq!(e, IrError::DuplicateProc("main".into()));
    }

    #[test]
    fn reserved_fields_and_arrays() {
        assert!(matches!(parse_program("global x\nproc main { use x->deref }"), Err(IrError::Reserved { .. })));
        assert!(parse_program("global x\nproc main { use x[1] }").is_err());
    }

    #[test]
    fn sugar_is_kept() {
        let p = parse_program("global x, y\nproc main { use y->f->f; x.f = y; x = *y }").unwrap();
        let kinds: Vec<_> = p.procs[0].stmts.iter().map(|s| matches!(s.kind, StmtKind::Sugar(_))).collect();
        assert_eq!(kinds, vec![true, true, false, false]);
    }

    #[test]
    fn locals_are_qualified() {
        let p = parse_program("global g\nproc main { local g2; g2 = new; g = g2 }").unwrap();
        assert_eq!(p.procs[0].stmts[1].kind, StmtKind::Copy(Var::global("g"), Var::local("main", "g2")));
    }
}
