//! Random pointer programs for the soundness and equivalence campaigns.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    /// Statements in the whole program, branches and calls included.
    pub max_stmts: usize,
    pub max_branches: usize,
    pub loops: bool,
    pub calls: bool,
    pub address_of: bool,
}

impl GenConfig {
    /// Loops, calls and address-of, at most 10 statements and 2 branches.
    pub fn soundness() -> GenConfig {
        GenConfig { max_stmts: 10, max_branches: 2, loops: true, calls: true, address_of: true }
    }

    /// Single-procedure forward-only programs of at most 8 statements.
    pub fn loop_free() -> GenConfig {
        GenConfig { max_stmts: 8, max_branches: 2, loops: false, calls: false, address_of: false }
    }
}

const FIELDS: [&str; 2] = ["f", "g"];

enum Line {
    Stmt(String),
    Label(String),
}

/// Picks variables for one statement; dereferenced ones come mostly from
/// `alive`, the variables allocated so far on the straight-line reading.
struct Picker<'v> {
    vars: &'v [&'v str],
    alive: Vec<&'v str>,
}

impl<'v> Picker<'v> {
    fn any(&self, rng: &mut ChaCha8Rng) -> &'v str {
        self.vars.choose(rng).unwrap()
    }

    fn deref(&self, rng: &mut ChaCha8Rng) -> &'v str {
        if !self.alive.is_empty() && rng.gen_bool(0.85) {
            self.alive.choose(rng).unwrap()
        } else {
            self.any(rng)
        }
    }

    fn stmt(&mut self, rng: &mut ChaCha8Rng, address_of: bool) -> String {
        let f = *FIELDS.choose(rng).unwrap();
        let roll = rng.gen_range(0..if address_of { 23 } else { 20 });
        let (x, y) = (self.any(rng), self.any(rng));
        let (dx, dy) = (self.deref(rng), self.deref(rng));
        let s = match roll {
            0..=2 => {
                self.alive.push(x);
                format!("{x} = new")
            }
            3 => format!("{x} = null"),
            4..=5 => format!("{x} = {y}"),
            6..=8 => format!("{x} = {dy}->{f}"),
            9..=11 => format!("{dx}->{f} = {y}"),
            12..=13 => format!("use {dx}"),
            14..=16 => format!("use {dx}->{f}"),
            17 => format!("{dx}->{f} = new"),
            18 => format!("{dx}->{f} = null"),
            19 => format!("use {dx}->{f}->{}", FIELDS.choose(rng).unwrap()),
            20 => format!("{x} = &{y}"),
            21 => format!("{x} = *{dy}"),
            _ => format!("{x} = &{dy}->{f}"),
        };
        if roll == 3 || (20..=22).contains(&roll) || (6..=8).contains(&roll) {
            self.alive.retain(|v| *v != x);
        }
        s
    }

    /// Allocation-heavy opening statements.
    fn opening(&mut self, rng: &mut ChaCha8Rng) -> String {
        if self.alive.is_empty() || rng.gen_bool(0.6) {
            let x = self.any(rng);
            self.alive.push(x);
            format!("{x} = new")
        } else {
            format!("{}->{} = new", self.deref(rng), FIELDS.choose(rng).unwrap())
        }
    }

    fn body(&mut self, rng: &mut ChaCha8Rng, n: usize, address_of: bool) -> Vec<Line> {
        let open = rng.gen_range(0..=n.min(3));
        (0..n).map(|i| Line::Stmt(if i < open { self.opening(rng) } else { self.stmt(rng, address_of) })).collect()
    }
}

/// Splices `branches` conditional jumps into a body.
fn add_branches(rng: &mut ChaCha8Rng, body: &mut Vec<Line>, branches: usize, loops: bool, prefix: &str) {
    for b in 0..branches {
        // never right behind another jump, which would leave it unreachable
        let stmts: Vec<usize> = (0..=body.len()).filter(|&i| i == 0 || !matches!(&body[i - 1], Line::Stmt(s) if s.starts_with("br "))).collect();
        let at = *stmts.choose(rng).unwrap();
        let (skip, target) = (format!("{prefix}S{b}"), format!("{prefix}T{b}"));
        if loops && rng.gen_bool(0.5) {
            let head = rng.gen_range(0..=at);
            body.insert(at, Line::Stmt(format!("br {target} {skip}")));
            body.insert(at + 1, Line::Label(skip));
            body.insert(head, Line::Label(target));
        } else {
            let land = rng.gen_range(at..=body.len());
            body.insert(land, Line::Label(target.clone()));
            body.insert(at, Line::Stmt(format!("br {skip} {target}")));
            body.insert(at + 1, Line::Label(skip));
        }
    }
}

fn render(out: &mut String, body: &[Line]) {
    for l in body {
        match l {
            Line::Stmt(s) => out.push_str(&format!("  {s}\n")),
            Line::Label(s) => out.push_str(&format!("{s}:\n")),
        }
    }
}

/// Source text of one random program.
pub fn generate(rng: &mut ChaCha8Rng, cfg: GenConfig) -> String {
    let total = rng.gen_range(2..=cfg.max_stmts.max(2));
    let branches = rng.gen_range(0..=cfg.max_branches.min(total / 3));
    let mut budget = total - branches;
    let mut out = String::from("global g1, g2\n\n");

    let helper = cfg.calls && budget >= 4 && rng.gen_bool(0.4);
    let mut calls = 0;
    if helper {
        let own = rng.gen_range(1..=3.min(budget - 2));
        budget -= own;
        calls = rng.gen_range(1..=2.min(budget - 1));
        budget -= calls;
        let vars = ["p", "q", "g1", "g2"];
        let mut body = Picker { vars: &vars, alive: vec!["p"] }.body(rng, own, cfg.address_of);
        if rng.gen_bool(0.5) {
            // make the formal flow somewhere
            let at = rng.gen_range(0..body.len());
            body[at] = Line::Stmt(format!("{} = p", vars[rng.gen_range(1..4)]));
        }
        out.push_str("proc h(p) {\n  local q\n");
        render(&mut out, &body);
        out.push_str("}\n\n");
    }

    let vars = ["a", "b", "c", "g1", "g2"];
    let mut body = Picker { vars: &vars, alive: Vec::new() }.body(rng, budget, cfg.address_of);
    for _ in 0..calls {
        let at = rng.gen_range(0..=body.len());
        body.insert(at, Line::Stmt(format!("call h({})", vars.choose(rng).unwrap())));
    }
    add_branches(rng, &mut body, branches, cfg.loops, "L");
    out.push_str("proc main {\n  local a, b, c\n");
    render(&mut out, &body);
    out.push_str("}\n");
    out
}

/// `n` programs from a fixed seed.
pub fn corpus(seed: u64, n: usize, cfg: GenConfig) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| generate(&mut rng, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{load, StmtKind};

    #[test]
    fn generated_programs_parse_within_limits() {
        for cfg in [GenConfig::soundness(), GenConfig::loop_free()] {
            for src in corpus(7, 300, cfg) {
                let p = load(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
                let surface = src.lines().filter(|l| l.starts_with("  ") && !l.trim_start().starts_with("local")).count();
                assert!(surface <= cfg.max_stmts, "{src}");
                let brs = p.stmts().filter(|s| matches!(s.kind, StmtKind::Branch(_))).count();
                assert!(brs <= cfg.max_branches);
            }
        }
    }

    #[test]
    fn loop_free_has_no_back_edges() {
        for src in corpus(11, 200, GenConfig::loop_free()) {
            let p = load(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
            for q in &p.procs {
                for (i, ss) in q.succ.iter().enumerate() {
                    assert!(ss.iter().all(|&j| j > i), "{src}");
                }
            }
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        assert_eq!(corpus(3, 20, GenConfig::soundness()), corpus(3, 20, GenConfig::soundness()));
    }
}
