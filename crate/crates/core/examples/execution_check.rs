//! Runs programs concretely and checks the static result against the
//! paths each execution really reads later.

use heaplive::corpus::{self, seeded_faults};
use heaplive::ir::load;
use heaplive::liveness::Variant;
use heaplive::oracle::{check_soundness, dynamic_live_paths, enumerate_traces, Bounds};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prog = load(corpus::LIST_WALK)?;
    let (traces, capped) = enumerate_traces(&prog, Bounds::default())?;
    println!("list_walk: {} executions{}", traces.len(), if capped { " (capped)" } else { "" });
    let t = traces.iter().max_by_key(|t| t.steps.len()).expect("one trace");
    for (i, live) in dynamic_live_paths(&prog, t, 4).iter().enumerate().filter(|(_, l)| !l.is_empty()).take(6) {
        println!("  snapshot {i}: {:?}", live.iter().map(|p| p.to_string()).collect::<Vec<_>>());
    }
    for v in Variant::ALL {
        let r = check_soundness(&prog, v, Bounds::default(), 5, &[])?;
        println!("  {v}: {} paths checked, sound {}", r.paths_checked, r.is_sound());
    }

    // a result emptied on purpose must be caught
    let faulty = load(corpus::SEEDED_FAULT)?;
    let r = check_soundness(&faulty, Variant::D, Bounds::default(), 5, &seeded_faults(corpus::SEEDED_FAULT))?;
    for w in &r.violations {
        println!("caught: {}", serde_json::to_string(w)?);
    }
    Ok(())
}
