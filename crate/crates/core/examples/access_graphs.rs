//! Building liveness graphs by hand: insertion, kill, re-rooting and
//! bounded extraction, in both node modes.

use heaplive::apgraph::{labels_of, path_strings, AccessPath, LivenessGraph, Mode, SiteLabel};
use heaplive::ir::{Field, StmtId, Var};

fn at(n: u32) -> SiteLabel {
    SiteLabel::Use(StmtId(n))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (x, y) = (Var::global("x"), Var::global("y"));
    let f = Field::named("f");
    let g = Field::named("g");

    for mode in [Mode::NonDet, Mode::Det] {
        let mut live = LivenessGraph::empty(mode);
        live.insert_path(&AccessPath::new(x.clone(), [f.clone(), g.clone()]), &[labels_of([at(3)]), labels_of([at(5)])])?;
        live.insert_path(&AccessPath::new(x.clone(), [f.clone()]), &[labels_of([at(4)])])?;
        println!("{mode:?}: {} nodes, {:?}", live.node_count(), path_strings(&live.extract_paths(4)));

        // y = x->f moves every x.f.σ to y.σ
        let moved = live.gen_transfer(&AccessPath::new(x.clone(), [f.clone()]), &AccessPath::var(y.clone()), at(7));
        println!("  re-rooted at y: {:?}", path_strings(&moved.extract_paths(4)));

        let killed = live.kill_prefix(&AccessPath::new(x.clone(), [f.clone()]));
        println!("  x.f killed:     {:?}", path_strings(&killed.extract_paths(4)));
    }

    // a loop through f accepts unboundedly many paths; extraction cuts them
    let mut chain = LivenessGraph::empty(Mode::NonDet);
    let xf = AccessPath::new(x.clone(), [f.clone()]);
    chain.insert_path(&xf, &[labels_of([at(2)])])?;
    let grown = chain.gen_transfer(&AccessPath::var(x.clone()), &xf, at(2));
    chain.union_in(&grown);
    println!("x.(f)*: {:?}", path_strings(&chain.extract_paths(4)));
    print!("{}", chain.to_dot("chain"));
    Ok(())
}
