//! One line per acceptance criterion; exits non-zero when any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::explicit::{truncate, ExplicitLiveness};
use heaplive::alias::AliasOracle;
use heaplive::apgraph::{invariant_counters, labels_of, path_strings, AccessPath, LivenessGraph, SiteLabel, State};
use heaplive::corpus::{self, seeded_faults, Table};
use heaplive::fuzz::{self, GenConfig};
use heaplive::interproc::{all_points, Analysis, InterprocOptions};
use heaplive::ir::{load, Field, Point, Program, Var};
use heaplive::liveness::{final_at, run_variant, NoCalls, Options, ProcResult, Variant};
use heaplive::oracle::{check_soundness, interpret, Bounds, CPath, Cell, Link, Obj};

type Outcome = Result<String, String>;

fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn path(s: &str) -> AccessPath {
    let mut parts = s.split('.');
    let root = Var::global(parts.next().unwrap());
    AccessPath::new(root, parts.map(Field::named))
}

fn intraproc(prog: &Program, v: Variant, opts: Options) -> (AliasOracle<'_>, ProcResult) {
    let o = AliasOracle::new(prog);
    let r = run_variant(&o, prog.main().unwrap(), v, &LivenessGraph::empty(v.mode()), &opts, &mut NoCalls);
    (o, r)
}

fn figure_three() -> Outcome {
    let start = Instant::now();
    let p = load(corpus::FIG3).unwrap();
    let t = Table::of(corpus::FIG3);
    let m = p.main().unwrap();
    let opts = Options::default();
    let (out4, in3) = (t.out(&p, 4), t.in_(&p, 3));
    let greedy_out4 = set(&["y.f.g", "y.f", "y", "x.f.g", "x.f", "w.f.g", "w.f", "z.g"]);
    let minimal_out4 = set(&["y.f.g", "y.f", "y"]);
    let minimal_in3 = set(&["y", "x", "z.g", "z"]);
    let greedy_in3 = set(&["y", "x", "z.g", "z", "w.f.g", "w.f"]);
    for v in Variant::ALL {
        let (o, r) = intraproc(&p, v, opts);
        let fin = |q| path_strings(&final_at(&o, &r, m, q, &opts).extract_paths(5));
        if v == Variant::A {
            ensure(fin(out4) == greedy_out4, || format!("A out_4 = {:?}", fin(out4)))?;
        }
        if v == Variant::D {
            let phase_one = path_strings(&r.value(m, out4).extract_paths(5));
            ensure(phase_one == minimal_out4, || format!("D phase one out_4 = {phase_one:?}"))?;
            ensure(fin(out4) == minimal_out4, || format!("D phase two out_4 = {:?}", fin(out4)))?;
        }
        let want = if v.greedy() { &greedy_in3 } else { &minimal_in3 };
        ensure(&fin(in3) == want, || format!("{v} in_3 = {:?}", fin(in3)))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("out_4 and in_3 rows exact for A-D in {took:.2?}"))
}

fn figure_two() -> Outcome {
    let p = load(corpus::FIG2).unwrap();
    let t = Table::of(corpus::FIG2);
    let m = p.main().unwrap();
    let opts = Options { close_aliases: false, ..Options::default() };
    let (_, d) = intraproc(&p, Variant::D, opts);
    let (_, a) = intraproc(&p, Variant::A, opts);
    let at4 = t.first(&p, 4);
    let at2 = t.first(&p, 2);

    // x -> f_{4} -> f_{2,4}
    let g = d.value(m, t.in_(&p, 4));
    let x = Var::global("x");
    let root = g.succ(&State::Root(x.clone())).clone();
    let first: Vec<_> = root.iter().collect();
    ensure(first.len() == 1 && first[0].labels.len() == 1 && first[0].labels.contains(&SiteLabel::Use(at4)), || format!("D in_4 root edges {g}"))?;
    let second: Vec<_> = g.succ(&State::Node(first[0].clone())).iter().cloned().collect();
    let both = labels_of([SiteLabel::Use(at2), SiteLabel::Use(at4)]);
    ensure(second.len() == 1 && second[0].labels == both, || format!("D in_4 second node {g}"))?;
    let last = g.succ(&State::Node(second[0].clone()));
    ensure(last.is_empty() && g.node_count() == 2 && g.roots().count() == 1, || format!("D in_4 shape {g}"))?;
    ensure(g.is_accepting(&State::Root(x)), || "x not accepted at in_4".into())?;

    let in2d = path_strings(&d.value(m, t.in_(&p, 2)).extract_paths(8));
    ensure(in2d == set(&["x", "x.f"]), || format!("D in_2 = {in2d:?}"))?;
    let a_in2 = a.value(m, t.in_(&p, 2));
    ensure(a_in2.accepts(&path("x.f.f")), || "A in_2 rejects x.f.f".into())?;
    ensure((d.iterations, a.iterations) == (2, 3), || format!("iterations D {} A {}", d.iterations, a.iterations))?;
    Ok("D: 2 iterations, x->f_4->f_{2,4}, {x, x.f} at in_2; A: 3 iterations, x.f.f at in_2".into())
}

fn figure_four() -> Outcome {
    let p = load(corpus::FIG4).unwrap();
    let t = Table::of(corpus::FIG4);
    let m = p.main().unwrap();
    let opts = Options::default();
    let out1 = t.out(&p, 1);
    let (o, a) = intraproc(&p, Variant::A, opts);
    let (_, d) = intraproc(&p, Variant::D, opts);
    let ga = final_at(&o, &a, m, out1, &opts);
    let gd = final_at(&o, &d, m, out1, &opts);
    ensure(ga.accepts(&path("x.h.f.g")), || "A rejects x.h.f.g".into())?;
    ensure(!gd.accepts(&path("x.h.f.g")), || "D accepts x.h.f.g".into())?;
    for want in ["x", "x.h", "x.h.f", "x.f", "x.f.g"] {
        ensure(gd.accepts(&path(want)), || format!("D rejects {want}"))?;
    }
    Ok("A accepts x.h.f.g, D rejects it and keeps x, x.h, x.h.f, x.f, x.f.g".into())
}

/// Live paths evaluated on a concrete memory: variables by name, fields of
/// heap objects as `<field> of l_<allocation order>`; null links drop out.
fn concrete_links(prog: &Program, q: Point, paths: &BTreeSet<AccessPath>) -> BTreeSet<String> {
    let trace = interpret(prog, &[], Bounds::default()).unwrap();
    let occ = trace.steps.iter().find(|o| o.stmt == q.stmt).unwrap();
    let mem = &trace.snapshots[occ.before];
    let mut out = BTreeSet::new();
    for p in paths {
        let Some(root) = mem.cell_of(&p.root) else { continue };
        let walked = mem.walk(&CPath { root, fields: p.fields.clone() });
        if walked.len() != p.fields.len() + 1 {
            continue;
        }
        let Some(Link::Cell(c)) = walked.last() else { continue };
        if mem.get(c).is_none() {
            continue;
        }
        out.insert(match c {
            Cell::Var(_, v) => v.to_string(),
            Cell::Field(Obj::Heap(i), f) => format!("{f} of l_{}", i + 1),
            Cell::Field(o, f) => format!("{f} of {o:?}"),
        });
    }
    out
}

fn figure_seven() -> Outcome {
    let p = load(corpus::FIG7).unwrap();
    let t = Table::of(corpus::FIG7);
    let o = AliasOracle::new(&p);
    let a = Analysis::run(&o, Variant::D, InterprocOptions::default()).map_err(|e| e.to_string())?;
    let call_foo = t.first(&p, 14);
    let call_bar = t.first(&p, 7);
    let main_ctx = a.contexts_of(p.proc_index("main").unwrap())[0];
    let at_foo = &a.contexts[main_ctx].calls[&call_foo];
    let strs = |g: &LivenessGraph| path_strings(&g.extract_paths(5));
    let part = &at_foo.partition;
    ensure(strs(&part.bypass).contains("z"), || format!("z not bypassed at foo: {:?}", strs(&part.bypass)))?;
    ensure(strs(&part.pass).contains("w.g"), || format!("w.g not passed to foo: {:?}", strs(&part.pass)))?;
    ensure(strs(&part.memoize).contains("y.f"), || format!("y.f not memoized in foo: {:?}", strs(&part.memoize)))?;
    let foo_ctx = at_foo.callee_ctx;
    let at_bar = &a.contexts[foo_ctx].calls[&call_bar].partition;
    ensure(strs(&at_bar.bypass).iter().any(|s| s.ends_with("t.g")), || format!("t.g not bypassed at bar: {:?}", strs(&at_bar.bypass)))?;
    ensure(strs(&at_bar.pass).contains("y.f"), || format!("y.f not passed to bar: {:?}", strs(&at_bar.pass)))?;

    let q = Point::at_in(call_foo);
    let paths = a.paths_at(q, 5);
    let links = concrete_links(&p, q, &paths);
    let want = set(&["x", "y", "v", "z", "g of l_3"]);
    ensure(links == want, || format!("links live at the call {links:?} from paths {:?}", path_strings(&paths)))?;
    Ok(format!("partitions match; links live at call foo = {links:?}"))
}

fn soundness_fuzz() -> Outcome {
    let start = Instant::now();
    let mut paths = 0;
    let mut programs = 0;
    for src in fuzz::corpus(2024, 500, GenConfig::soundness()) {
        let p = load(&src).map_err(|e| format!("{e}\n{src}"))?;
        programs += 1;
        for v in Variant::ALL {
            let r = check_soundness(&p, v, Bounds::default(), 5, &[]).map_err(|e| format!("{e}\n{src}"))?;
            paths += r.paths_checked;
            if let Some(w) = r.violations.first() {
                return Err(format!("{v} misses {} at {}\n{src}", w.path, w.point));
            }
        }
    }
    let seeded = load(corpus::SEEDED_FAULT).unwrap();
    let r = check_soundness(&seeded, Variant::D, Bounds::default(), 5, &seeded_faults(corpus::SEEDED_FAULT)).map_err(|e| e.to_string())?;
    ensure(!r.is_sound(), || "seeded fault went unnoticed".into())?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {took:?}"))?;
    Ok(format!("{programs} programs x 4 variants, {paths} live paths checked, 0 violations; seeded fault caught; {took:.1?}"))
}

fn explicit_equivalence() -> Outcome {
    let k = 5;
    let mut points = 0;
    for src in fuzz::corpus(6, 200, GenConfig::loop_free()) {
        let p = load(&src).map_err(|e| format!("{e}\n{src}"))?;
        let o = AliasOracle::new(&p);
        let m = p.main().unwrap();
        let ex = ExplicitLiveness { oracle: &o, proc_index: p.proc_index("main").unwrap(), bound: k + m.stmts.len() };
        let opts = Options::default();
        for v in Variant::ALL {
            let r = run_variant(&o, m, v, &LivenessGraph::empty(v.mode()), &opts, &mut NoCalls);
            for (q, want) in ex.final_values(v) {
                points += 1;
                let got = final_at(&o, &r, m, q, &opts).extract_paths(k);
                let want = truncate(&want, k);
                ensure(got == want, || format!("{v} at {q}: graph {:?} sets {:?}\n{src}", path_strings(&got), path_strings(&want)))?;
            }
        }
    }
    Ok(format!("200 programs, {points} (variant, point) pairs equal"))
}

fn precision_ordering() -> Outcome {
    let k = 5;
    let strict_required = ["fig2", "fig3", "fig4", "list_copy", "directory"];
    let mut strict = Vec::new();
    for (name, src) in corpus::ALL {
        let p = load(src).unwrap();
        let o = AliasOracle::new(&p);
        let a = Analysis::run(&o, Variant::A, InterprocOptions::default()).map_err(|e| e.to_string())?;
        let d = Analysis::run(&o, Variant::D, InterprocOptions::default()).map_err(|e| e.to_string())?;
        let mut smaller = false;
        for q in all_points(&p) {
            let (pa, pd) = (a.paths_at(q, k), d.paths_at(q, k));
            ensure(pd.is_subset(&pa), || format!("{name} {q}: D has {:?} beyond A", path_strings(&pd.difference(&pa).cloned().collect())))?;
            smaller |= pd.len() < pa.len();
        }
        if smaller {
            strict.push(*name);
        }
        ensure(smaller || !strict_required.contains(name), || format!("{name}: D never strictly smaller"))?;
    }
    let p = load(corpus::LIST_COPY).unwrap();
    let t = Table::of(corpus::LIST_COPY);
    let o = AliasOracle::new(&p);
    let q = t.in_(&p, "copyend");
    let tmp_paths = |v| -> Result<Vec<String>, String> {
        let an = Analysis::run(&o, v, InterprocOptions::default()).map_err(|e| e.to_string())?;
        Ok(path_strings(&an.paths_at(q, k)).into_iter().filter(|s| s == "tmp" || s.starts_with("tmp.next")).collect())
    };
    let (in_d, in_a) = (tmp_paths(Variant::D)?, tmp_paths(Variant::A)?);
    ensure(in_d.is_empty(), || format!("D keeps {in_d:?} live at copy end"))?;
    ensure(!in_a.is_empty(), || "A already finds tmp.next* dead at copy end".into())?;
    Ok(format!("D within A everywhere; strictly smaller in {strict:?}; tmp.next* dead at copy end under D only (A: {in_a:?})"))
}

fn partition_preserves() -> Outcome {
    let mut points = 0;
    for (name, src) in corpus::ALL {
        let p = load(src).unwrap();
        let o = AliasOracle::new(&p);
        for v in Variant::ALL {
            let on = Analysis::run(&o, v, InterprocOptions::default()).map_err(|e| e.to_string())?;
            let off = Analysis::run(&o, v, InterprocOptions { partition: false, ..InterprocOptions::default() }).map_err(|e| e.to_string())?;
            for q in all_points(&p) {
                points += 1;
                let (a, b) = (on.paths_at(q, 5), off.paths_at(q, 5));
                ensure(a == b, || format!("{name} {v} {q}: on {:?} off {:?}", path_strings(&a), path_strings(&b)))?;
            }
        }
    }
    Ok(format!("{points} (program, variant, point) triples agree"))
}

fn determinism_sweep() -> Outcome {
    let (scans, violations) = invariant_counters();
    ensure(scans > 0, || "no invariant scans ran; build with debug assertions".into())?;
    ensure(violations == 0, || format!("{violations} of {scans} scans found a violation"))?;
    Ok(format!("{scans} graph scans, 0 violations"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("1 fig3 rows", figure_three),
        ("2 fig2 fixpoints", figure_two),
        ("3 fig4 spurious path", figure_four),
        ("4 fig7 partitions and call liveness", figure_seven),
        ("5 soundness fuzzing", soundness_fuzz),
        ("6 explicit-set equivalence", explicit_equivalence),
        ("7 corpus precision ordering", precision_ordering),
        ("9 partitioning on/off agree", partition_preserves),
        // last, so it sees every graph built above
        ("8 determinism sweep", determinism_sweep),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
