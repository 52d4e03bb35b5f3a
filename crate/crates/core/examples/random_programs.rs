//! Generates random programs and checks every variant on them.

use heaplive::fuzz::{corpus, GenConfig};
use heaplive::ir::load;
use heaplive::liveness::Variant;
use heaplive::oracle::{check_soundness, Bounds};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let programs = corpus(seed, 50, GenConfig::soundness());
    println!("{}", programs.iter().max_by_key(|p| p.len()).expect("programs"));
    let (mut paths, mut bad) = (0, 0);
    for src in &programs {
        let prog = load(src)?;
        for v in Variant::ALL {
            let r = check_soundness(&prog, v, Bounds::default(), 5, &[])?;
            paths += r.paths_checked;
            bad += r.violations.len();
        }
    }
    println!("seed {seed}: {} programs, {paths} live paths checked, {bad} violations", programs.len());
    Ok(())
}
