use std::collections::{BTreeMap, BTreeSet};

use super::*;

/// Fills `succ`/`pred` of a procedure. Branches and gotos are no-ops with
/// explicit targets; `ret` jumps to the synthetic exit.
pub fn build_cfg(p: &mut Procedure) -> Result<(), IrError> {
    let n = p.stmts.len();
    assert!(n > 0 && matches!(p.stmts[n - 1].kind, StmtKind::Exit), "procedure must end in its exit");
    let mut labels: BTreeMap<Arc<str>, usize> = BTreeMap::new();
    for (i, s) in p.stmts.iter().enumerate() {
        for l in &s.labels {
            if labels.insert(l.clone(), i).is_some() {
                return Err(IrError::DuplicateLabel { proc_name: p.name.to_string(), label: l.to_string() });
            }
        }
    }
    let target = |l: &Arc<str>| {
        labels.get(l).copied().ok_or_else(|| IrError::UndefinedLabel { proc_name: p.name.to_string(), label: l.to_string() })
    };
    let mut succ = vec![Vec::new(); n];
    for (i, s) in p.stmts.iter().enumerate() {
        succ[i] = match &s.kind {
            StmtKind::Goto(l) => vec![target(l)?],
            StmtKind::Branch(ls) => {
                let mut t = ls.iter().map(target).collect::<Result<Vec<_>, _>>()?;
                t.sort_unstable();
                t.dedup();
                t
            }
            StmtKind::Return => vec![n - 1],
            StmtKind::Exit => vec![],
            _ => vec![i + 1],
        };
    }
    let mut pred = vec![Vec::new(); n];
    for (i, ss) in succ.iter().enumerate() {
        for &j in ss {
            pred[j].push(i);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &succ[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(i) = (0..n - 1).find(|&i| !seen[i]) {
        let sp = p.stmts[i].span;
        return Err(IrError::Unreachable { proc_name: p.name.to_string(), line: sp.line, col: sp.col });
    }
    p.succ = succ;
    p.pred = pred;
    Ok(())
}

/// Call graph over procedure indices.
#[derive(Debug, Clone)]
pub struct CallGraph {
    pub callees: Vec<BTreeSet<usize>>,
    pub callers: Vec<BTreeSet<usize>>,
    /// Call statements per callee.
    pub sites: Vec<Vec<StmtId>>,
    /// Procedures reachable from each one, itself included.
    pub cone: Vec<BTreeSet<usize>>,
    recursive: Vec<bool>,
    single_instance: Vec<bool>,
    in_loop: BTreeSet<StmtId>,
}

impl CallGraph {
    pub fn new(p: &Program) -> CallGraph {
        let n = p.procs.len();
        let mut callees = vec![BTreeSet::new(); n];
        let mut callers = vec![BTreeSet::new(); n];
        let mut sites = vec![Vec::new(); n];
        let mut in_loop = BTreeSet::new();
        for (i, proc_) in p.procs.iter().enumerate() {
            for (si, s) in proc_.stmts.iter().enumerate() {
                if on_cycle(proc_, si) {
                    in_loop.insert(s.id);
                }
                if let StmtKind::Call { callee, .. } = &s.kind {
                    let j = p.proc_index(callee).expect("resolved at parse time");
                    callees[i].insert(j);
                    callers[j].insert(i);
                    sites[j].push(s.id);
                }
            }
        }
        let cone: Vec<BTreeSet<usize>> = (0..n)
            .map(|i| {
                let mut seen = BTreeSet::from([i]);
                let mut stack = vec![i];
                while let Some(a) = stack.pop() {
                    for &b in &callees[a] {
                        if seen.insert(b) {
                            stack.push(b);
                        }
                    }
                }
                seen
            })
            .collect();
        let recursive: Vec<bool> = (0..n).map(|i| callees[i].iter().any(|&c| cone[c].contains(&i))).collect();

        // A procedure has at most one live frame per run when it is main, or
        // it has one call site, outside any loop, in such a procedure.
        let main = p.proc_index("main");
        let mut single_instance = vec![false; n];
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                if single_instance[i] {
                    continue;
                }
                let ok = if Some(i) == main {
                    !recursive[i]
                } else if recursive[i] || sites[i].len() != 1 {
                    false
                } else {
                    let site = sites[i][0];
                    let caller = p.owner_of(site).and_then(|c| p.proc_index(&c.name)).unwrap();
                    single_instance[caller] && !in_loop.contains(&site)
                };
                if ok {
                    single_instance[i] = true;
                    changed = true;
                }
            }
        }
        CallGraph { callees, callers, sites, cone, recursive, single_instance, in_loop }
    }

    pub fn is_recursive(&self, proc_: usize) -> bool {
        self.recursive[proc_]
    }

    /// True when at most one frame of the procedure can ever exist in a run.
    pub fn single_instance(&self, proc_: usize) -> bool {
        self.single_instance[proc_]
    }

    pub fn in_loop(&self, s: StmtId) -> bool {
        self.in_loop.contains(&s)
    }

    /// Procedures that may have a frame below the current one, including the
    /// procedure itself when it is recursive.
    pub fn outer_frames(&self, proc_: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.callers[proc_].iter().copied().collect();
        while let Some(a) = stack.pop() {
            if seen.insert(a) {
                stack.extend(self.callers[a].iter().copied());
            }
        }
        seen
    }

    /// Strongly connected components in reverse topological order (callees first).
    pub fn sccs(&self) -> Vec<Vec<usize>> {
        let n = self.callees.len();
        let mut done = vec![false; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        // cone-based grouping is enough at this scale
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| self.cone[i].len());
        for &i in &order {
            if done[i] {
                continue;
            }
            let comp: Vec<usize> = (0..n).filter(|&j| self.cone[i].contains(&j) && self.cone[j].contains(&i)).collect();
            for &j in &comp {
                done[j] = true;
            }
            out.push(comp);
        }
        out
    }
}

fn on_cycle(p: &Procedure, start: usize) -> bool {
    let mut seen = vec![false; p.stmts.len()];
    let mut stack = p.succ[start].clone();
    while let Some(i) = stack.pop() {
        if i == start {
            return true;
        }
        if !seen[i] {
            seen[i] = true;
            stack.extend(p.succ[i].iter().copied());
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_of_three() {
        let p = load("global x\nproc main { x = new; use x; x = null }").unwrap();
        let m = p.main().unwrap();
        assert_eq!(m.succ, vec![vec![1], vec![2], vec![3], vec![]]);
    }

    #[test]
    fn label_errors() {
        assert!(matches!(load("proc main { goto L }"), Err(IrError::UndefinedLabel { .. })));
        assert!(matches!(load("proc main { L: skip; L: skip }"), Err(IrError::DuplicateLabel { .. })));
        assert!(matches!(load("proc main { goto E; skip; E: skip }"), Err(IrError::Unreachable { .. })));
    }

    #[test]
    fn figure_two_back_edge() {
        let p = load(crate::corpus::FIG2).unwrap();
        let t = crate::corpus::Table::of(crate::corpus::FIG2);
        let m = p.main().unwrap();
        let four = m.index_of(t.last(&p, 4)).unwrap();
        let two = m.index_of(t.first(&p, 2)).unwrap();
        let five = m.index_of(t.first(&p, 5)).unwrap();
        // the loop test sits right after statement 4
        assert_eq!(m.succ[four], vec![four + 1]);
        assert_eq!(m.succ[four + 1], vec![two, five]);
    }

    #[test]
    fn figure_seven_call_graph() {
        let p = load(crate::corpus::FIG7).unwrap();
        let cg = CallGraph::new(&p);
        let (main, foo, bar) = (p.proc_index("main").unwrap(), p.proc_index("foo").unwrap(), p.proc_index("bar").unwrap());
        assert_eq!(cg.callees[main], BTreeSet::from([foo]));
        assert_eq!(cg.callees[foo], BTreeSet::from([bar]));
        assert!(cg.callees[bar].is_empty());
        assert!(cg.single_instance(bar));
        assert_eq!(cg.outer_frames(bar), BTreeSet::from([main, foo]));
    }

    #[test]
    fn recursion_is_detected() {
        let p = load("global l\nproc walk(n) { local m; br A B; A: m = n->next; call walk(m); B: ret }\nproc main { l = new; call walk(l) }").unwrap();
        let cg = CallGraph::new(&p);
        let w = p.proc_index("walk").unwrap();
        assert!(cg.is_recursive(w));
        assert!(!cg.single_instance(w));
        assert!(cg.outer_frames(w).contains(&w));
    }
}
