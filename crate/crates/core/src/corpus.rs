//! Figure programs shipped with the crate, plus the `# @tag` tables that map
//! figure statement numbers onto IR statement ids.

use std::collections::BTreeMap;

use crate::ir::{Point, Program, StmtId};

pub const FIG2: &str = include_str!("../corpus/fig2.hl");
pub const FIG3: &str = include_str!("../corpus/fig3.hl");
pub const FIG4: &str = include_str!("../corpus/fig4.hl");
pub const FIG7: &str = include_str!("../corpus/fig7.hl");
pub const LIST_COPY: &str = include_str!("../corpus/list_copy.hl");
pub const DIRECTORY: &str = include_str!("../corpus/directory.hl");
pub const LIST_WALK: &str = include_str!("../corpus/list_walk.hl");
pub const EMPTY: &str = include_str!("../corpus/empty.hl");
pub const SEEDED_FAULT: &str = include_str!("../fixtures/seeded_fault.hl");

/// Every sound corpus program by file stem.
pub const ALL: &[(&str, &str)] = &[
    ("fig2", FIG2),
    ("fig3", FIG3),
    ("fig4", FIG4),
    ("fig7", FIG7),
    ("list_copy", LIST_COPY),
    ("directory", DIRECTORY),
    ("list_walk", LIST_WALK),
    ("empty", EMPTY),
];

/// Tag → source lines, read from `# @tag` comments.
#[derive(Debug, Clone, Default)]
pub struct Table {
    lines: BTreeMap<String, Vec<usize>>,
}

impl Table {
    pub fn of(src: &str) -> Table {
        let mut lines: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            let Some(c) = line.find('#') else { continue };
            for word in line[c + 1..].split_whitespace() {
                if let Some(tag) = word.strip_prefix('@') {
                    lines.entry(tag.to_string()).or_default().push(i + 1);
                }
            }
        }
        Table { lines }
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.lines.keys().map(|s| s.as_str())
    }

    /// Statement ids lowered from the tagged lines, in order.
    pub fn ids(&self, p: &Program, tag: impl ToString) -> Vec<StmtId> {
        let tag = tag.to_string();
        let lines = self.lines.get(&tag).unwrap_or_else(|| panic!("no statement tagged @{tag}"));
        let mut ids: Vec<StmtId> = p.stmts().filter(|s| lines.contains(&s.span.line)).map(|s| s.id).collect();
        ids.sort();
        assert!(!ids.is_empty(), "tag @{tag} matches no statement");
        ids
    }

    pub fn first(&self, p: &Program, tag: impl ToString) -> StmtId {
        self.ids(p, tag)[0]
    }

    pub fn last(&self, p: &Program, tag: impl ToString) -> StmtId {
        *self.ids(p, tag).last().unwrap()
    }

    /// The point before the first statement carrying the tag.
    pub fn in_(&self, p: &Program, tag: impl ToString) -> Point {
        Point::at_in(self.first(p, tag))
    }

    /// The point after the last statement carrying the tag.
    pub fn out(&self, p: &Program, tag: impl ToString) -> Point {
        Point::at_out(self.last(p, tag))
    }
}

/// `#! seed-fault N` pragmas: statement ids whose in-point result the checker
/// must drop before comparing.
pub fn seeded_faults(src: &str) -> Vec<StmtId> {
    src.lines()
        .filter_map(|l| l.trim().strip_prefix("#!"))
        .filter_map(|l| l.trim().strip_prefix("seed-fault"))
        .filter_map(|n| n.trim().parse().ok())
        .map(StmtId)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_loads() {
        for (name, src) in ALL.iter().chain([("seeded_fault", SEEDED_FAULT)].iter()) {
            crate::ir::load(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn tags_resolve() {
        let p = crate::ir::load(FIG3).unwrap();
        let t = Table::of(FIG3);
        assert!(t.first(&p, 1) < t.first(&p, 2));
        assert_eq!(t.ids(&p, 3).len(), 1);
        // `use t->g` lowers to a load and a use
        assert_eq!(t.ids(&p, 7).len(), 2);
        assert_eq!(seeded_faults(SEEDED_FAULT), vec![StmtId(2)]);
    }
}
