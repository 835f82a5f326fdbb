//! Holdout coverage of a GP surrogate of the closed-form surface: fit on a
//! maximin design, check 90% intervals at unseen locations.
//!
//! `cargo run --release --example surrogate_coverage -p bfsurf`

use bfsurf::design::{lhs_maximin, Dim, HyperBox};
use bfsurf::reg_bf::{default_study_data, DEFAULT_STUDY_SEED};
use bfsurf::surface::{evaluate_surface, training_set, EvaluatorKind, EvaluatorSpec};
use bfsurf::surrogate::{coverage, fit_gp, Nugget};

fn main() -> bfsurf::Result<()> {
    let bbox = HyperBox::new(vec![Dim::log10("phi", -3.0, 3.0), Dim::linear("mu", -3.0, 3.0)])?;
    let design = lhs_maximin(&bbox, 120, 4)?;
    let spec = EvaluatorSpec::regression(EvaluatorKind::RegClosed, default_study_data(DEFAULT_STUDY_SEED))?;
    let samples = evaluate_surface(&spec, &design, 0)?;
    let all = training_set(&bbox, &samples)?;
    let (train, holdout) = all.split_locations(0.25, 1)?;

    let fit = fit_gp(&train, Nugget::Estimated)?;
    for level in [0.5, 0.9, 0.99] {
        println!(
            "{:>4.0}% intervals cover {:.3} of {} holdout points",
            100.0 * level,
            coverage(&fit, &holdout, level)?,
            holdout.n_locations()
        );
    }
    Ok(())
}
