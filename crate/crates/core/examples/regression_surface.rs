//! Closed-form regression log Bayes factor over a (phi, mu) grid, printed as
//! a coarse text map of evidence classes.
//!
//! `cargo run --example regression_surface -p bfsurf`

use bfsurf::design::{grid_design, Dim, HyperBox};
use bfsurf::reg_bf::{default_study_data, ols_summary, DEFAULT_STUDY_SEED};
use bfsurf::surface::{evaluate_surface, EvaluatorKind, EvaluatorSpec};

fn main() -> bfsurf::Result<()> {
    let data = default_study_data(DEFAULT_STUDY_SEED);
    let ols = ols_summary(&data)?;
    println!("n = {}, slope = {:.3}, p = {:.2e}", data.n(), ols.slope, ols.p_value);

    let bbox = HyperBox::new(vec![Dim::log10("phi", -3.0, 3.0), Dim::linear("mu", -3.0, 3.0)])?;
    let design = grid_design(&bbox, &[13, 13])?;
    let spec = EvaluatorSpec::regression(EvaluatorKind::RegClosed, data)?;
    let samples = evaluate_surface(&spec, &design, 0)?;

    // Rows: phi from 1e-3 (top) to 1e3; columns: mu from -3 to 3.
    // Sign gives the favored model, case the strength: a/b weak, A/B strong.
    for row in samples.chunks(13) {
        let line: String = row
            .iter()
            .map(|s| match s.log_bf {
                v if v >= 3.0 => 'A',
                v if v >= 0.0 => 'a',
                v if v > -3.0 => 'b',
                _ => 'B',
            })
            .collect();
        println!("phi = {:>8.3e}  {line}", row[0].location[0]);
    }
    let best = samples
        .iter()
        .max_by(|a, b| a.log_bf.total_cmp(&b.log_bf))
        .expect("non-empty grid");
    println!(
        "largest log BF12 = {:.3} at phi = {:.3e}, mu = {:.2}",
        best.log_bf, best.location[0], best.location[1]
    );
    Ok(())
}
