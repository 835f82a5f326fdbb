//! Heteroskedastic GP fitted to replicated Monte Carlo log Bayes factors:
//! the noise field should grow where the estimator is unstable.
//!
//! `cargo run --release --example hetgp_surrogate -p bfsurf`

use bfsurf::design::{grid_design, with_replicates, Dim, HyperBox};
use bfsurf::reg_bf::{default_study_data, DEFAULT_STUDY_SEED};
use bfsurf::surface::{evaluate_surface, training_set, EvaluatorKind, EvaluatorSpec};
use bfsurf::surrogate::fit_hetgp;

fn main() -> bfsurf::Result<()> {
    let bbox = HyperBox::new(vec![Dim::log10("phi", -3.0, 2.0)])?;
    let design = with_replicates(&grid_design(&bbox, &[12])?, 4)?;
    let spec = EvaluatorSpec::regression(
        EvaluatorKind::RegNoisy { n_draws: 1_000 },
        default_study_data(DEFAULT_STUDY_SEED),
    )?;
    let samples = evaluate_surface(&spec, &design, 3)?;
    let train = training_set(&bbox, &samples)?;
    let fit = fit_hetgp(&train)?.with_box(bbox);
    println!(
        "heteroskedastic: {}, converged: {}",
        fit.is_heteroskedastic(),
        fit.diagnostics().converged
    );

    let grid: Vec<Vec<f64>> = (0..=10).map(|k| vec![10f64.powf(-3.0 + 0.5 * k as f64)]).collect();
    let pred = fit.predict_native(&grid)?;
    println!("{:>10} {:>10} {:>10} {:>10}", "phi", "mean", "sd_mean", "sd_obs");
    for (i, p) in grid.iter().enumerate() {
        println!(
            "{:>10.3e} {:>10.4} {:>10.4} {:>10.4}",
            p[0],
            pred.mean[i],
            pred.var_mean[i].sqrt(),
            pred.var_obs[i].sqrt()
        );
    }
    Ok(())
}
