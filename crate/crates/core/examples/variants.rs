//! The four intraprocedural variants side by side on one program.

use heaplive::alias::AliasOracle;
use heaplive::apgraph::{path_strings, LivenessGraph};
use heaplive::corpus;
use heaplive::ir::load;
use heaplive::liveness::{final_at, run_variant, NoCalls, Options, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prog = load(corpus::FIG3)?;
    let oracle = AliasOracle::new(&prog);
    let main = prog.main().expect("main");
    let opts = Options::default();

    let results: Vec<_> = Variant::ALL
        .iter()
        .map(|&v| (v, run_variant(&oracle, main, v, &LivenessGraph::empty(v.mode()), &opts, &mut NoCalls)))
        .collect();
    for q in main.points() {
        print!("{q:<7}");
        for (v, r) in &results {
            let paths = final_at(&oracle, r, main, q, &opts).extract_paths(5);
            print!("  {v}:{:>2}", paths.len());
        }
        println!();
    }

    let (_, d) = &results[3];
    let last = *main.points().last().expect("points");
    println!("D phase one at {last}: {:?}", path_strings(&d.value(main, last).extract_paths(5)));
    println!("D reported at {last}:  {:?}", path_strings(&final_at(&oracle, d, main, last, &opts).extract_paths(5)));
    Ok(())
}
