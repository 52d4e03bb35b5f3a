//! Flow-sensitive points-to facts and the link aliases derived from them.

use heaplive::alias::AliasOracle;
use heaplive::apgraph::{path_strings, AccessPath};
use heaplive::corpus::{self, Table};
use heaplive::ir::{load, Field, Point, StmtKind, Var};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prog = load(corpus::FIG4)?;
    let oracle = AliasOracle::new(&prog);
    let main = prog.main().expect("main");
    let pi = prog.proc_index("main").expect("main");

    for (point, state) in oracle.dump(pi) {
        println!("{point:<8} {}", serde_json::to_string(state)?);
    }

    // must aliases of every store target: the kill set of that store
    for s in &main.stmts {
        if let StmtKind::Store(x, f, _) = &s.kind {
            let must = oracle.must_link_aliases(s.id, x, f);
            println!("store {} at {}: must-alias {:?}", AccessPath::new(x.clone(), [f.clone()]), s.id, must.iter().map(|p| p.to_string()).collect::<Vec<_>>());
        }
    }

    // every path of up to four links that names an object at the tagged point
    let t = Table::of(corpus::FIG4);
    let q: Point = t.in_(&prog, 5);
    println!("allocated at {q}: {:?}", path_strings(&oracle.allocated_paths(q, 4)));
    let probe = AccessPath::new(Var::local("main", "x"), [Field::named("h")]);
    println!("{probe} at {q} names {} link(s)", oracle.resolve(q, &probe).len());
    Ok(())
}
