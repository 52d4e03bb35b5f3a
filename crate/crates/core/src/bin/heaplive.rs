use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};

use heaplive::corpus::seeded_faults;
use heaplive::ir::{load, Program};
use heaplive::liveness::Variant;
use heaplive::oracle::{check_soundness, Bounds};
use heaplive::report::{self, ReportOptions, DEFAULT_MAX_LEN};

/// Heap liveness over access-path automata.
#[derive(Parser)]
#[command(name = "heaplive", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Live access paths at every point.
    Analyze(AnalyzeArgs),
    /// Per-function ratios and per-point differences between variants.
    Compare(AnalyzeArgs),
    /// Compare the analysis against bounded executions.
    Check(CheckArgs),
}

#[derive(Args)]
struct Common {
    /// Program files or directories of `.hl` files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// A, B, C, D or all; repeat or separate with commas.
    #[arg(long = "variant", value_delimiter = ',', default_value = "all")]
    variants: Vec<String>,
    /// Longest access path reported, in links.
    #[arg(long = "max-len", default_value_t = DEFAULT_MAX_LEN, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    max_len: usize,
    #[arg(long)]
    json: bool,
    /// Directory for JSON reports and graphs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Write one graph per context and point.
    #[arg(long)]
    dump_dot: bool,
    /// Include the points-to facts at every point.
    #[arg(long)]
    dump_pts: bool,
    /// Include the pass, memoize and bypass sets of every call site.
    #[arg(long)]
    dump_bypass: bool,
    /// Report propagated values without their may-alias closure.
    #[arg(long)]
    no_alias_closure: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Visits allowed per statement on one execution.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    loop_bound: usize,
    /// Executions explored per program.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    max_traces: usize,
}

fn variants(names: &[String]) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            out.extend(Variant::ALL);
        } else {
            out.push(n.parse()?);
        }
    }
    Ok(out)
}

/// Input files in command-line order; directories contribute their `.hl`
/// files sorted by name.
fn input_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for i in inputs {
        if i.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(i)
                .with_context(|| format!("reading {}", i.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "hl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(i.clone());
        }
    }
    Ok(files)
}

fn read(path: &Path) -> Result<(String, String, Program)> {
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let prog = load(&src).with_context(|| format!("{}", path.display()))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((stem, src, prog))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit<T: serde::Serialize>(json: bool, items: &[T], text: impl Fn(&T) -> String) -> Result<()> {
    let mut out = io::stdout().lock();
    if json {
        let s = match items {
            [one] => serde_json::to_string_pretty(one)?,
            _ => serde_json::to_string_pretty(items)?,
        };
        writeln!(out, "{s}")?;
    } else {
        for i in items {
            write!(out, "{}", text(i))?;
        }
    }
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<ExitCode> {
    let vs = variants(&a.common.variants)?;
    let opts = ReportOptions { dot: a.dump_dot, pts: a.dump_pts, bypass: a.dump_bypass, alias_closure: !a.no_alias_closure };
    let mut reports = Vec::new();
    for f in input_files(&a.common.inputs)? {
        let (stem, _, prog) = read(&f)?;
        let r = report::analyze(&prog, &stem, &vs, a.common.max_len, opts).with_context(|| format!("{}", f.display()))?;
        let out = a.common.out.clone().or_else(|| a.dump_dot.then(|| PathBuf::from("heaplive-out")));
        if let Some(dir) = out {
            write(&dir.join(format!("{stem}.json")), &serde_json::to_string_pretty(&r)?)?;
            for d in &r.dot {
                write(&dir.join(&stem).join(d.variant.to_string()).join(&d.name), &d.text)?;
            }
        }
        reports.push(r);
    }
    emit(a.common.json, &reports, |r| r.to_text())?;
    Ok(ExitCode::SUCCESS)
}

fn compare(a: &AnalyzeArgs) -> Result<ExitCode> {
    let vs = variants(&a.common.variants)?;
    if vs.len() < 2 {
        bail!("compare needs at least two variants");
    }
    let opts = ReportOptions { alias_closure: !a.no_alias_closure, ..ReportOptions::default() };
    let mut out = Vec::new();
    for f in input_files(&a.common.inputs)? {
        let (stem, _, prog) = read(&f)?;
        let c = report::compare(&prog, &stem, &vs, a.common.max_len, opts).with_context(|| format!("{}", f.display()))?;
        if let Some(dir) = &a.common.out {
            write(&dir.join(format!("{stem}.compare.json")), &serde_json::to_string_pretty(&c)?)?;
        }
        out.push(c);
    }
    emit(a.common.json, &out, |c| c.to_text())?;
    Ok(ExitCode::SUCCESS)
}

fn check(a: &CheckArgs) -> Result<ExitCode> {
    let vs = variants(&a.common.variants)?;
    let bounds = Bounds { loop_bound: a.loop_bound, max_traces: a.max_traces, ..Bounds::default() };
    let mut witnesses = Vec::new();
    let mut summaries = Vec::new();
    for f in input_files(&a.common.inputs)? {
        let (stem, src, prog) = read(&f)?;
        let drop = seeded_faults(&src);
        for &v in &vs {
            let r = check_soundness(&prog, v, bounds, a.common.max_len, &drop).with_context(|| format!("{}", f.display()))?;
            eprintln!(
                "{stem} [{v}]: {} traces{}, {} points, {} paths, {} violations",
                r.traces,
                if r.capped { " (capped)" } else { "" },
                r.points_checked,
                r.paths_checked,
                r.violations.len()
            );
            witnesses.extend(r.violations.iter().map(|w| serde_json::json!({ "program": stem, "witness": w })));
            summaries.push(serde_json::json!({ "program": stem, "report": r }));
        }
    }
    if let Some(dir) = &a.common.out {
        write(&dir.join("check.json"), &serde_json::to_string_pretty(&serde_json::json!({ "schema": report::SCHEMA, "results": summaries }))?)?;
    }
    let mut out = io::stdout().lock();
    for w in &witnesses {
        writeln!(out, "{}", serde_json::to_string(w)?)?;
    }
    Ok(if witnesses.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Analyze(a) => analyze(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Check(a) => check(a),
    };
    match res {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
