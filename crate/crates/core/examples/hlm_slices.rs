//! One-at-a-time hyperparameter slices of the hierarchical model Bayes factor
//! on the bundled synthetic school data.
//!
//! `cargo run --example hlm_slices -p bfsurf`

use bfsurf::hlm_bf::{default_hlm_hypers, hlm_slices, log_bf_hlm, synthetic_hlm, BUNDLED_HLM_SEED};

fn main() -> bfsurf::Result<()> {
    let data = synthetic_hlm(BUNDLED_HLM_SEED);
    let center = default_hlm_hypers(&data)?;
    let at_center = log_bf_hlm(&data, &center)?;
    println!("log BF (slopes vs means) at the calibrated center: {:.3}", at_center.value);

    let slices = hlm_slices(&data, &center, 9)?;
    println!("{:<14} {:>10} {:>10} {:>10}", "hyper", "min", "max", "range");
    for s in &slices {
        let values: Vec<f64> = s.evaluated().map(|(_, v)| v).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{:<14} {lo:>10.3} {hi:>10.3} {:>10.3}", s.hyper.name(), s.range());
    }
    let widest = slices
        .iter()
        .max_by(|a, b| a.range().total_cmp(&b.range()))
        .expect("eight slices");
    println!("most influential: {}", widest.hyper.name());
    Ok(())
}
