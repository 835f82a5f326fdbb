//! The hyperparameter-free baselines (Zellner–Siow, BIC, fractional) next to
//! the subjective closed-form value, across sample sizes.
//!
//! `cargo run --example automatic_baselines -p bfsurf`

use bfsurf::reg_bf::{bf_report, simulate_regression, RegressionHypers};
use bfsurf::surface::classify;

fn main() -> bfsurf::Result<()> {
    let hypers = RegressionHypers::default();
    println!("{:>5} {:>12} {:>12} {:>12} {:>12}", "n", "closed", "zs", "bic", "fractional");
    for n in [10, 30, 100, 300] {
        let data = simulate_regression(n, 0.0, 0.5, 1.0, 42)?;
        let r = bf_report(&data, &hypers, 3)?;
        println!(
            "{n:>5} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            r.closed_quadrature.value, r.zellner_siow.value, r.bic.value, r.fractional.value
        );
    }
    let data = simulate_regression(30, 0.0, 0.5, 1.0, 42)?;
    let zs = bf_report(&data, &hypers, 3)?.zellner_siow;
    println!("n = 30 Zellner–Siow evidence: {}", classify(zs.value)?.label());
    Ok(())
}
