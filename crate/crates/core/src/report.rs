//! Reports behind the command line: per-point live paths, the live share
//! of the allocated heap, and variant-against-variant comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::alias::{AliasOracle, PtsState};
use crate::apgraph::{path_strings, AccessPath};
use crate::interproc::{Analysis, InterprocError, InterprocOptions};
use crate::ir::{stmt_text, Point, Program};
use crate::liveness::Variant;

pub const SCHEMA: u32 = 1;
pub const DEFAULT_MAX_LEN: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub dot: bool,
    pub pts: bool,
    pub bypass: bool,
    /// Report values closed under may link-aliases.
    pub alias_closure: bool,
}

impl Default for ReportOptions {
    fn default() -> ReportOptions {
        ReportOptions { dot: false, pts: false, bypass: false, alias_closure: true }
    }
}

impl ReportOptions {
    fn interproc(&self) -> InterprocOptions {
        let mut o = InterprocOptions::default();
        o.liveness.close_aliases = self.alias_closure;
        o
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub point: String,
    pub stmt: String,
    pub count: usize,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContextReport {
    pub context: usize,
    pub iterations: usize,
    pub points: Vec<PointReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiveShare {
    pub median: f64,
    pub min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcReport {
    pub name: String,
    /// Distinct paths naming abstract heap links anywhere in the procedure.
    pub allocated_paths: usize,
    /// Percentage of the allocated paths at a point that are live there,
    /// over the points with anything allocated.
    pub live_percent: Option<LiveShare>,
    pub contexts: Vec<ContextReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CallSiteReport {
    pub proc_name: String,
    pub context: usize,
    pub call: String,
    pub callee_context: usize,
    pub pass: Vec<String>,
    pub memoize: Vec<String>,
    pub bypass: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub procs: Vec<ProcReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub call_sites: Option<Vec<CallSiteReport>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub program: String,
    pub max_len: usize,
    pub variants: Vec<VariantReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_to: Option<BTreeMap<String, BTreeMap<String, PtsState>>>,
    #[serde(skip)]
    pub dot: Vec<DotFile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DotFile {
    pub variant: Variant,
    /// `<proc>.<ctx>.<point>.dot`
    pub name: String,
    pub text: String,
}

fn strings(paths: &BTreeSet<AccessPath>) -> Vec<String> {
    path_strings(paths).into_iter().collect()
}

/// Median of a non-empty list.
fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn proc_report(oracle: &AliasOracle, a: &Analysis, pi: usize, k: usize) -> ProcReport {
    let p = &oracle.program().procs[pi];
    let mut allocated = BTreeSet::new();
    let mut shares = Vec::new();
    for q in p.points() {
        let alloc = oracle.allocated_paths(q, k);
        if !alloc.is_empty() {
            let live = a.paths_at(q, k);
            shares.push(100.0 * alloc.intersection(&live).count() as f64 / alloc.len() as f64);
        }
        allocated.extend(alloc);
    }
    let live_percent = (!shares.is_empty()).then(|| LiveShare {
        min: shares.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(&mut shares),
    });
    let contexts = a
        .contexts_of(pi)
        .into_iter()
        .map(|ctx| ContextReport {
            context: ctx,
            iterations: a.iterations(ctx),
            points: p
                .points()
                .into_iter()
                .map(|q| {
                    let paths = a.final_at(ctx, q).extract_paths(k);
                    PointReport { point: q.to_string(), stmt: stmt_text(&p.stmt(q.stmt).kind), count: paths.len(), paths: strings(&paths) }
                })
                .collect(),
        })
        .collect();
    ProcReport { name: p.name.to_string(), allocated_paths: allocated.len(), live_percent, contexts }
}

fn call_sites(a: &Analysis, k: usize) -> Vec<CallSiteReport> {
    let mut out = Vec::new();
    for ctx in a.live_contexts() {
        let p = a.proc_of(ctx);
        for (stmt, rec) in &a.contexts[ctx].calls {
            let part = &rec.partition;
            out.push(CallSiteReport {
                proc_name: p.name.to_string(),
                context: ctx,
                call: format!("{stmt}: {}", stmt_text(&p.stmt(*stmt).kind)),
                callee_context: rec.callee_ctx,
                pass: strings(&part.pass.extract_paths(k)),
                memoize: strings(&part.memoize.extract_paths(k)),
                bypass: strings(&part.bypass.extract_paths(k)),
            });
        }
    }
    out
}

/// Runs every variant in `variants` over `prog`.
pub fn analyze(prog: &Program, program: &str, variants: &[Variant], k: usize, opts: ReportOptions) -> Result<Report, InterprocError> {
    let oracle = AliasOracle::new(prog);
    let mut report = Report {
        schema: SCHEMA,
        program: program.to_string(),
        max_len: k,
        variants: Vec::new(),
        points_to: None,
        dot: Vec::new(),
    };
    if prog.main().is_none() {
        // nothing to analyse
        return Ok(report);
    }
    for &v in variants {
        let a = Analysis::run(&oracle, v, opts.interproc())?;
        let procs = (0..prog.procs.len()).filter(|&pi| !a.contexts_of(pi).is_empty()).map(|pi| proc_report(&oracle, &a, pi, k)).collect();
        if opts.dot {
            for ctx in a.live_contexts() {
                let p = a.proc_of(ctx);
                for q in p.points() {
                    let name = format!("{}.{ctx}.{q}", p.name);
                    report.dot.push(DotFile { variant: v, text: a.final_at(ctx, q).to_dot(&name), name: format!("{name}.dot") });
                }
            }
        }
        report.variants.push(VariantReport { variant: v, procs, call_sites: opts.bypass.then(|| call_sites(&a, k)) });
    }
    if opts.pts {
        report.points_to = Some(
            prog.procs
                .iter()
                .enumerate()
                .map(|(pi, p)| (p.name.to_string(), oracle.dump(pi).into_iter().map(|(q, st)| (q, st.clone())).collect()))
                .collect(),
        );
    }
    Ok(report)
}

impl Report {
    /// Plain-text rendering, one line per point.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} (paths up to length {})\n", self.program, self.max_len);
        for vr in &self.variants {
            for pr in &vr.procs {
                let share = match pr.live_percent {
                    Some(l) => format!("live {:.1}% median, {:.1}% min", l.median, l.min),
                    None => "nothing allocated".to_string(),
                };
                s += &format!("[{}] {}: {} allocated paths, {share}\n", vr.variant, pr.name, pr.allocated_paths);
                for c in &pr.contexts {
                    s += &format!("  context {} ({} iterations)\n", c.context, c.iterations);
                    for pt in &c.points {
                        s += &format!("    {:<8} {:<20} {:>3}  {{{}}}\n", pt.point, pt.stmt, pt.count, pt.paths.join(", "));
                    }
                }
            }
            for cs in vr.call_sites.iter().flatten() {
                s += &format!(
                    "  [{}] {} ctx {} {} -> ctx {}: pass {{{}}} memoize {{{}}} bypass {{{}}}\n",
                    vr.variant,
                    cs.proc_name,
                    cs.context,
                    cs.call,
                    cs.callee_context,
                    cs.pass.join(", "),
                    cs.memoize.join(", "),
                    cs.bypass.join(", ")
                );
            }
        }
        s
    }
}

// ---- comparison ----

#[derive(Debug, Clone, Serialize)]
pub struct PointDiff {
    pub point: String,
    pub left: usize,
    pub right: usize,
    pub verdict: Verdict,
    pub only_left: Vec<String>,
    pub only_right: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Equal,
    LeftSubset,
    RightSubset,
    Incomparable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::Equal => "equal",
            Verdict::LeftSubset => "left-subset",
            Verdict::RightSubset => "right-subset",
            Verdict::Incomparable => "incomparable",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionRatio {
    pub name: String,
    /// Live paths at the procedure entry.
    pub entry: (usize, usize),
    pub entry_ratio: Option<f64>,
    /// Live paths summed over every point of the procedure.
    pub lifetime: (usize, usize),
    pub lifetime_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub range: String,
    pub functions: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub left: Variant,
    pub right: Variant,
    pub functions: Vec<FunctionRatio>,
    pub entry_buckets: Vec<Bucket>,
    pub lifetime_buckets: Vec<Bucket>,
    pub points: Vec<PointDiff>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub schema: u32,
    pub program: String,
    pub max_len: usize,
    pub pairs: Vec<PairReport>,
}

/// `left / right`, with `0 / 0 = 1` and `n / 0` unbounded.
pub fn ratio(left: usize, right: usize) -> Option<f64> {
    match (left, right) {
        (0, 0) => Some(1.0),
        (_, 0) => None,
        _ => Some(left as f64 / right as f64),
    }
}

/// Bucket of a ratio and its sort key: below 1, then 1-5x, 5-10x and on in
/// steps of five, then unbounded.
pub fn bucket_of(r: Option<f64>) -> (u64, String) {
    match r {
        None => (u64::MAX, "inf".to_string()),
        Some(r) if r < 1.0 => (0, "<1x".to_string()),
        Some(r) if r < 5.0 => (1, "1-5x".to_string()),
        Some(r) => {
            let lo = (r / 5.0).floor() as u64 * 5;
            (lo, format!("{lo}-{}x", lo + 5))
        }
    }
}

fn buckets<'a>(items: impl Iterator<Item = (&'a str, Option<f64>)>) -> Vec<Bucket> {
    let mut m: BTreeMap<(u64, String), Vec<String>> = BTreeMap::new();
    for (name, r) in items {
        m.entry(bucket_of(r)).or_default().push(name.to_string());
    }
    m.into_iter().map(|((_, range), functions)| Bucket { range, functions }).collect()
}

fn verdict(l: &BTreeSet<AccessPath>, r: &BTreeSet<AccessPath>) -> Verdict {
    match (l.is_subset(r), r.is_subset(l)) {
        (true, true) => Verdict::Equal,
        (true, false) => Verdict::LeftSubset,
        (false, true) => Verdict::RightSubset,
        _ => Verdict::Incomparable,
    }
}

/// Compares each variant with every later one.
pub fn compare(prog: &Program, program: &str, variants: &[Variant], k: usize, opts: ReportOptions) -> Result<Comparison, InterprocError> {
    let oracle = AliasOracle::new(prog);
    let mut cmp = Comparison { schema: SCHEMA, program: program.to_string(), max_len: k, pairs: Vec::new() };
    if prog.main().is_none() {
        return Ok(cmp);
    }
    type Run = (Variant, BTreeMap<Point, BTreeSet<AccessPath>>, BTreeSet<usize>);
    let mut per_variant: Vec<Run> = Vec::new();
    for &v in variants {
        let a = Analysis::run(&oracle, v, opts.interproc())?;
        let reached: BTreeSet<usize> = (0..prog.procs.len()).filter(|&pi| !a.contexts_of(pi).is_empty()).collect();
        let paths = reached.iter().flat_map(|&pi| prog.procs[pi].points()).map(|q| (q, a.paths_at(q, k))).collect();
        per_variant.push((v, paths, reached));
    }
    let empty = BTreeSet::new();
    for (i, (lv, lp, lr)) in per_variant.iter().enumerate() {
        for (rv, rp, rr) in &per_variant[i + 1..] {
            let get = |m: &BTreeMap<Point, BTreeSet<AccessPath>>, q: &Point| -> usize { m.get(q).unwrap_or(&empty).len() };
            let mut functions = Vec::new();
            let mut points = Vec::new();
            for pi in lr.union(rr) {
                let p = &prog.procs[*pi];
                let qs = p.points();
                let entry_q = Point::at_in(p.stmts[p.entry()].id);
                let entry = (get(lp, &entry_q), get(rp, &entry_q));
                let lifetime = (qs.iter().map(|q| get(lp, q)).sum(), qs.iter().map(|q| get(rp, q)).sum());
                functions.push(FunctionRatio {
                    name: p.name.to_string(),
                    entry,
                    entry_ratio: ratio(entry.0, entry.1),
                    lifetime,
                    lifetime_ratio: ratio(lifetime.0, lifetime.1),
                });
                for q in qs {
                    let l = lp.get(&q).unwrap_or(&empty);
                    let r = rp.get(&q).unwrap_or(&empty);
                    points.push(PointDiff {
                        point: format!("{}:{q}", p.name),
                        left: l.len(),
                        right: r.len(),
                        verdict: verdict(l, r),
                        only_left: strings(&l.difference(r).cloned().collect()),
                        only_right: strings(&r.difference(l).cloned().collect()),
                    });
                }
            }
            cmp.pairs.push(PairReport {
                left: *lv,
                right: *rv,
                entry_buckets: buckets(functions.iter().map(|f| (f.name.as_str(), f.entry_ratio))),
                lifetime_buckets: buckets(functions.iter().map(|f| (f.name.as_str(), f.lifetime_ratio))),
                functions,
                points,
            });
        }
    }
    Ok(cmp)
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = format!("{} (paths up to length {})\n", self.program, self.max_len);
        let show = |r: Option<f64>| r.map(|r| format!("{r:.2}")).unwrap_or_else(|| "inf".into());
        for pr in &self.pairs {
            s += &format!("{} vs {}\n", pr.left, pr.right);
            for f in &pr.functions {
                s += &format!(
                    "  {}: entry {}/{} = {}, lifetime {}/{} = {}\n",
                    f.name,
                    f.entry.0,
                    f.entry.1,
                    show(f.entry_ratio),
                    f.lifetime.0,
                    f.lifetime.1,
                    show(f.lifetime_ratio)
                );
            }
            for b in &pr.lifetime_buckets {
                s += &format!("  lifetime {:>6}: {}\n", b.range, b.functions.join(", "));
            }
            for d in pr.points.iter().filter(|d| d.verdict != Verdict::Equal) {
                s += &format!("  {:<14} {:>3} {:>3} {:<12}", d.point, d.left, d.right, d.verdict);
                if !d.only_left.is_empty() {
                    s += &format!("  only {}: {{{}}}", pr.left, d.only_left.join(", "));
                }
                if !d.only_right.is_empty() {
                    s += &format!("  only {}: {{{}}}", pr.right, d.only_right.join(", "));
                }
                s += "\n";
            }
        }
        s
    }
}
