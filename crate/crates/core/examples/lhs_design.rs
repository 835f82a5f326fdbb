//! Maximin Latin hypercube versus a plain one over a mixed log/linear box.
//!
//! `cargo run --example lhs_design -p bfsurf`

use bfsurf::design::{is_stratified, lhs_maximin, min_distance, plain_lhs, Dim, HyperBox};

fn main() -> bfsurf::Result<()> {
    let bbox = HyperBox::new(vec![
        Dim::log10("phi", -3.0, 3.0),
        Dim::linear("mu", -3.0, 3.0),
        Dim::log10("a", -1.0, 2.0),
        Dim::log10("b", -1.0, 2.0),
    ])?;
    for seed in 0..3 {
        let maximin = lhs_maximin(&bbox, 40, seed)?;
        let plain = plain_lhs(&bbox, 40, seed)?;
        println!(
            "seed {seed}: min distance maximin {:.4} vs plain {:.4}, stratified {}",
            min_distance(&maximin.unit_points()),
            min_distance(&plain.unit_points()),
            is_stratified(&maximin.unit_points()),
        );
    }
    let design = lhs_maximin(&bbox, 8, 1)?;
    design.write_csv(std::io::stdout())?;
    Ok(())
}
