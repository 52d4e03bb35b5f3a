mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::explicit::{kill, substitute, truncate, ExplicitLiveness, Paths};
use heaplive::alias::AliasOracle;
use heaplive::apgraph::{labels_of, path_strings, AccessPath, LivenessGraph, Mode, NodeKey, SiteLabel, State};
use heaplive::fuzz::{self, GenConfig};
use heaplive::interproc::{all_points, Analysis, InterprocOptions};
use heaplive::ir::{load, Field, StmtId, Var};
use heaplive::liveness::{final_at, run_variant, NoCalls, Options, Variant};
use heaplive::oracle::{enumerate_traces, Bounds};
use heaplive::report::{analyze, ReportOptions};

const FIELDS: [&str; 2] = ["f", "g"];
const VARS: [&str; 3] = ["x", "y", "z"];

fn field(i: usize) -> Field {
    Field::named(FIELDS[i % 2])
}

fn var(i: usize) -> Var {
    Var::global(VARS[i % 3])
}

/// Raw material for a graph: node keys by (field, site bits), root edges and
/// node edges as indices into the key list.
#[derive(Debug, Clone)]
struct Shape {
    mode: Mode,
    keys: Vec<(usize, u8)>,
    roots: Vec<(usize, bool, Vec<usize>)>,
    edges: Vec<(usize, usize)>,
}

fn shape() -> impl Strategy<Value = Shape> {
    let mode = prop_oneof![Just(Mode::NonDet), Just(Mode::Det)];
    (mode, proptest::collection::btree_set((0usize..2, 1u8..8), 1..=6)).prop_flat_map(|(mode, keys)| {
        let keys: Vec<(usize, u8)> = keys.into_iter().collect();
        let n = keys.len();
        let roots = proptest::collection::vec((0usize..3, any::<bool>(), proptest::collection::vec(0..n, 0..3)), 1..3);
        let edges = proptest::collection::vec((0..n, 0..n), 0..8);
        (Just(mode), Just(keys), roots, edges).prop_map(|(mode, keys, roots, edges)| Shape { mode, keys, roots, edges })
    })
}

fn key_of(&(f, bits): &(usize, u8), offset: u32) -> NodeKey {
    let sites = (0..3).filter(|b| bits & (1 << b) != 0).map(|b| SiteLabel::Use(StmtId(b + 1 + offset)));
    NodeKey::new(field(f), labels_of(sites))
}

fn build(s: &Shape, offset: u32) -> LivenessGraph {
    let keys: Vec<NodeKey> = s.keys.iter().map(|k| key_of(k, offset)).collect();
    let roots = s.roots.iter().map(|(v, acc, succ)| (var(*v), *acc, succ.iter().map(|&i| keys[i].clone()).collect::<BTreeSet<_>>()));
    let mut nodes: BTreeMap<NodeKey, BTreeSet<NodeKey>> = keys.iter().map(|k| (k.clone(), BTreeSet::new())).collect();
    for &(a, b) in &s.edges {
        nodes.get_mut(&keys[a]).unwrap().insert(keys[b].clone());
    }
    LivenessGraph::from_parts(s.mode, roots, nodes)
}

/// Accepted paths by brute force over every word, independently of
/// `extract_paths`.
fn words(g: &LivenessGraph, k: usize) -> Paths {
    let mut out = Paths::new();
    for v in VARS {
        let mut frontier = vec![AccessPath::var(Var::global(v))];
        while let Some(p) = frontier.pop() {
            if g.accepts(&p) {
                out.insert(p.clone());
            }
            if p.len() < k {
                for f in 0..2 {
                    frontier.push(p.field(field(f)));
                }
            }
        }
    }
    out
}

fn bound(g: &LivenessGraph, k: usize) -> usize {
    k + g.node_count() + 1
}

/// No node is entered from two places, so no path shares a state.
fn tree_shaped(g: &LivenessGraph) -> bool {
    let mut indeg: BTreeMap<&NodeKey, usize> = BTreeMap::new();
    for (_, r) in g.roots() {
        for k in &r.succ {
            *indeg.entry(k).or_default() += 1;
        }
    }
    for (_, succ) in g.nodes() {
        for k in succ {
            *indeg.entry(k).or_default() += 1;
        }
    }
    indeg.values().all(|&d| d <= 1)
}

fn keys_of(g: &LivenessGraph) -> BTreeSet<NodeKey> {
    g.nodes().map(|(k, _)| k.clone()).collect()
}

fn any_path() -> impl Strategy<Value = AccessPath> {
    (0usize..3, proptest::collection::vec(0usize..2, 0..3)).prop_map(|(v, fs)| AccessPath::new(var(v), fs.into_iter().map(field)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn extraction_matches_word_enumeration(s in shape(), k in 1usize..5) {
        let g = build(&s, 0);
        prop_assert!(g.check_invariants().is_ok());
        let got = g.extract_paths(k);
        prop_assert_eq!(&got, &words(&g, k));
        for p in &got {
            if p.fields.len() >= 2 {
                prop_assert!(got.contains(&AccessPath::new(p.root.clone(), p.fields[..p.fields.len() - 1].iter().cloned())));
            }
        }
    }

    #[test]
    fn kill_removes_the_prefix_and_nothing_else(s in shape(), pat in any_path(), k in 1usize..5) {
        let g = build(&s, 0);
        let before = g.extract_paths(bound(&g, k));
        let after = g.kill_prefix(&pat);
        prop_assert!(after.check_invariants().is_ok());
        let got = after.extract_paths(k);
        let want = truncate(&kill(&before, &pat), k);
        prop_assert!(got.is_subset(&truncate(&before, k)));
        prop_assert!(want.is_subset(&got));
        if tree_shaped(&g) {
            prop_assert!(got.iter().all(|p| !p.has_prefix(&pat)));
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn gen_transfer_reroots_suffixes(s in shape(), from in any_path(), to in any_path(), k in 1usize..5) {
        let g = build(&s, 0);
        let fresh = SiteLabel::Use(StmtId(99));
        let gen = g.gen_transfer(&from, &to, fresh);
        prop_assert!(gen.check_invariants().is_ok());
        let before = g.extract_paths(k + from.len() + 1);
        let mut want = substitute(&before, &from, &to, usize::MAX);
        if !g.walk(&from).is_empty() {
            // field nodes of `to` accept on their own
            want.extend(to.prefixes().filter(|p| !p.fields.is_empty()));
        }
        let got = gen.extract_paths(k);
        let want = truncate(&want, k);
        prop_assert!(want.is_subset(&got));
        // one node per (field, site): a repeated field in `to` folds into a loop
        let distinct: BTreeSet<&Field> = to.fields.iter().collect();
        if distinct.len() == to.fields.len() {
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn union_of_disjoint_graphs_is_set_union(a in shape(), b in shape(), k in 1usize..5) {
        let (mut ga, gb) = (build(&a, 0), build(&Shape { mode: a.mode, ..b }, 10));
        let mut want = ga.extract_paths(k);
        want.extend(gb.extract_paths(k));
        let disjoint = keys_of(&ga).is_disjoint(&keys_of(&gb));
        ga.union_in(&gb);
        prop_assert!(ga.check_invariants().is_ok());
        let got = ga.extract_paths(k);
        prop_assert!(want.is_subset(&got));
        if disjoint && a.mode == Mode::NonDet {
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn union_never_shrinks_labels(a in shape(), b in shape()) {
        let ga = build(&Shape { mode: Mode::Det, ..a }, 0);
        let gb = build(&Shape { mode: Mode::Det, ..b }, 0);
        let mut u = ga.clone();
        u.union_in(&gb);
        for p in ga.extract_paths(4) {
            for s in ga.walk(&p) {
                let State::Node(k) = s else { continue };
                let grown = u.walk(&p).into_iter().any(|t| matches!(t, State::Node(t) if k.labels.is_subset(&t.labels)));
                prop_assert!(grown, "{} lost labels of {}", p, k);
            }
        }
    }

    #[test]
    fn root_filters_are_exact(s in shape(), keep in 0usize..3, k in 1usize..5) {
        let g = build(&s, 0);
        let kept = var(keep);
        let got = g.retain_roots(|v| *v == kept).extract_paths(k);
        let want: Paths = g.extract_paths(k).into_iter().filter(|p| p.root == kept).collect();
        prop_assert_eq!(got, want);
        let renamed = g.map_roots(|v| vec![Var::global(&format!("{}2", v.name))]).extract_paths(k);
        prop_assert_eq!(renamed.len(), g.extract_paths(k).len());
    }
}

fn fuzz_programs(seed: u64, n: usize, cfg: GenConfig) -> Vec<heaplive::ir::Program> {
    fuzz::corpus(seed, n, cfg).iter().map(|s| load(s).unwrap()).collect()
}

#[test]
fn liveness_is_field_prefix_closed_except_through_addresses() {
    for p in fuzz_programs(41, 60, GenConfig::soundness()) {
        let o = AliasOracle::new(&p);
        for v in Variant::ALL {
            let a = Analysis::run(&o, v, InterprocOptions::default()).unwrap();
            for q in all_points(&p) {
                let paths = a.paths_at(q, 5);
                for path in &paths {
                    let Some((last, parent)) = path.fields.split_last() else { continue };
                    if parent.is_empty() {
                        continue;
                    }
                    let parent = AccessPath::new(path.root.clone(), parent.iter().cloned());
                    if *last != Field::Address {
                        assert!(paths.contains(&parent), "{v} {q}: {path} without {parent}");
                    }
                }
            }
        }
    }
}

#[test]
fn minimal_phase_one_has_no_allocation_sites() {
    for p in fuzz_programs(43, 80, GenConfig::loop_free()) {
        let o = AliasOracle::new(&p);
        let m = p.main().unwrap();
        for v in [Variant::C, Variant::D] {
            let r = run_variant(&o, m, v, &LivenessGraph::empty(v.mode()), &Options::default(), &mut NoCalls);
            assert!(r.value_in.iter().chain(&r.value_out).all(|g| !g.has_alloc_labels()));
        }
    }
}

#[test]
fn partition_reconstructs_the_call_site_value() {
    let cfg = GenConfig { calls: true, ..GenConfig::soundness() };
    for p in fuzz_programs(47, 150, cfg) {
        let o = AliasOracle::new(&p);
        for v in Variant::ALL {
            let a = Analysis::run(&o, v, InterprocOptions::default()).unwrap();
            for ctx in a.live_contexts() {
                for (stmt, rec) in &a.contexts[ctx].calls {
                    let after = a.value(ctx, heaplive::ir::Point::at_out(*stmt)).extract_paths(5);
                    let part = &rec.partition;
                    let mut u = part.pass.extract_paths(5);
                    u.extend(part.memoize.extract_paths(5));
                    u.extend(part.bypass.extract_paths(5));
                    assert_eq!(u, after, "{v} at {stmt}");
                }
            }
        }
    }
}

#[test]
fn r_composes_over_any_split() {
    use heaplive::oracle::CPath;
    let mut checked = 0;
    for p in fuzz_programs(53, 60, GenConfig::soundness()) {
        let (traces, _) = enumerate_traces(&p, Bounds::default()).unwrap();
        for t in traces.iter().take(4) {
            let live = t.live_sets();
            let n = t.snapshots.len();
            for to in (0..n).step_by(3) {
                let paths: BTreeSet<CPath> = live[to].clone();
                for from in 0..=to {
                    let mid = (from + to) / 2;
                    let direct = t.transfer_r(from, to, &paths);
                    let split = t.transfer_r(from, mid, &t.transfer_r(mid, to, &paths));
                    assert_eq!(direct, split);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn reports_are_deterministic_and_consistent() {
    for (i, p) in fuzz_programs(59, 40, GenConfig::soundness()).iter().enumerate() {
        let opts = ReportOptions { bypass: true, pts: true, ..ReportOptions::default() };
        let one = serde_json::to_string(&analyze(p, "p", &Variant::ALL, 5, opts).unwrap()).unwrap();
        let two = serde_json::to_string(&analyze(p, "p", &Variant::ALL, 5, opts).unwrap()).unwrap();
        assert_eq!(one, two, "program {i}");

        let r = analyze(p, "p", &[Variant::D], 5, ReportOptions::default()).unwrap();
        let o = AliasOracle::new(p);
        let a = Analysis::run(&o, Variant::D, InterprocOptions::default()).unwrap();
        for pr in &r.variants[0].procs {
            for c in &pr.contexts {
                let proc_ = a.proc_of(c.context);
                for (pt, q) in c.points.iter().zip(proc_.points()) {
                    assert_eq!(pt.count, a.final_at(c.context, q).extract_paths(5).len());
                    assert_eq!(pt.count, pt.paths.len());
                }
            }
        }
    }
}

#[test]
fn statement_ids_are_unique_and_stable() {
    for src in fuzz::corpus(61, 100, GenConfig::soundness()) {
        let ids = |p: &heaplive::ir::Program| p.stmts().map(|s| s.id).collect::<Vec<_>>();
        let (a, b) = (load(&src).unwrap(), load(&src).unwrap());
        let set: BTreeSet<_> = ids(&a).into_iter().collect();
        assert_eq!(set.len(), ids(&a).len());
        assert_eq!(ids(&a), ids(&b));
        assert!(a.stmts().all(|s| s.field_count() <= 1));
    }
}

#[test]
fn automaton_covers_explicit_sets_with_address_taking() {
    let k = 5;
    let cfg = GenConfig { address_of: true, ..GenConfig::loop_free() };
    for src in fuzz::corpus(67, 150, cfg) {
        let p = load(&src).unwrap();
        let o = AliasOracle::new(&p);
        let m = p.main().unwrap();
        let ex = ExplicitLiveness { oracle: &o, proc_index: p.proc_index("main").unwrap(), bound: k + m.stmts.len() };
        let opts = Options::default();
        for v in Variant::ALL {
            let r = run_variant(&o, m, v, &LivenessGraph::empty(v.mode()), &opts, &mut NoCalls);
            for (q, want) in ex.final_values(v) {
                let got = final_at(&o, &r, m, q, &opts).extract_paths(k);
                let missing: Paths = truncate(&want, k).difference(&got).cloned().collect();
                assert!(missing.is_empty(), "{v} at {q} misses {:?}\n{src}", path_strings(&missing));
            }
        }
    }
}

#[test]
fn alias_closure_only_adds_and_is_idempotent() {
    let k = 5;
    for src in fuzz::corpus(71, 80, GenConfig::soundness()) {
        let p = load(&src).unwrap();
        let o = AliasOracle::new(&p);
        let m = p.main().unwrap();
        for v in [Variant::C, Variant::D] {
            let opts = Options::default();
            let r = run_variant(&o, m, v, &LivenessGraph::empty(v.mode()), &opts, &mut NoCalls);
            for q in m.points() {
                let phase_one = r.value(m, q);
                let once = final_at(&o, &r, m, q, &opts);
                let twice = o.close(q, &once);
                assert!(phase_one.extract_paths(k).is_subset(&once.extract_paths(k)), "{v} at {q}");
                assert_eq!(once.extract_paths(k), twice.extract_paths(k), "{v} at {q}");
            }
        }
    }
}
