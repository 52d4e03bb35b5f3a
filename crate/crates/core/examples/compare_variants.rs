//! Reports as the command line prints them: live shares per procedure and
//! the pairwise comparison of variants.

use heaplive::corpus;
use heaplive::ir::load;
use heaplive::liveness::Variant;
use heaplive::report::{analyze, compare, ReportOptions, Verdict};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prog = load(corpus::LIST_COPY)?;
    let report = analyze(&prog, "list_copy", &[Variant::D], 4, ReportOptions::default())?;
    for p in &report.variants[0].procs {
        println!("{}: {} allocated paths, live share {:?}", p.name, p.allocated_paths, p.live_percent);
    }
    let cmp = compare(&prog, "list_copy", &[Variant::A, Variant::B, Variant::D], 4, ReportOptions::default())?;
    for pair in &cmp.pairs {
        for f in &pair.functions {
            println!("{} vs {} in {}: lifetime {}/{} ratio {:?}", pair.left, pair.right, f.name, f.lifetime.0, f.lifetime.1, f.lifetime_ratio);
        }
        let differing = pair.points.iter().filter(|d| d.verdict != Verdict::Equal).count();
        println!("  {differing} of {} points differ", pair.points.len());
        if let Some(d) = pair.points.iter().find(|d| !d.only_left.is_empty()) {
            println!("  first: {} only {}: {:?}", d.point, pair.left, d.only_left);
        }
    }
    Ok(())
}
