//! Interprocedural analysis: value contexts per procedure and the split of
//! the live set at every call site.

use heaplive::alias::AliasOracle;
use heaplive::apgraph::path_strings;
use heaplive::corpus;
use heaplive::interproc::{Analysis, InterprocOptions};
use heaplive::ir::{load, Point};
use heaplive::liveness::Variant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prog = load(corpus::FIG7)?;
    let oracle = AliasOracle::new(&prog);
    for v in [Variant::A, Variant::D] {
        let a = Analysis::run(&oracle, v, InterprocOptions::default())?;
        println!("[{v}]");
        for k in a.live_contexts() {
            let p = a.proc_of(k);
            let entry = Point::at_in(p.stmts[p.entry()].id);
            println!("  context {k} of {} after {} passes, entry {:?}", p.name, a.iterations(k), path_strings(&a.final_at(k, entry).extract_paths(4)));
            for (call, rec) in &a.contexts[k].calls {
                let part = &rec.partition;
                println!(
                    "    call {call} -> context {}: pass {:?} memoize {:?} bypass {:?}",
                    rec.callee_ctx,
                    path_strings(&part.pass.extract_paths(4)),
                    path_strings(&part.memoize.extract_paths(4)),
                    path_strings(&part.bypass.extract_paths(4)),
                );
            }
        }
    }
    Ok(())
}
