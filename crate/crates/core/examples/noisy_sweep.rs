//! Replicated Monte Carlo sweep with progress reporting and a provenance
//! manifest; reruns with the same seed are bit-identical.
//!
//! `cargo run --release --example noisy_sweep -p bfsurf`

use std::sync::atomic::{AtomicUsize, Ordering};

use bfsurf::design::{grid_design, with_replicates, Dim, HyperBox};
use bfsurf::reg_bf::{default_study_data, DEFAULT_STUDY_SEED};
use bfsurf::surface::{
    evaluate_surface_with, export_surface, manifest, EvaluatorKind, EvaluatorSpec, ExportFormat, SweepOptions,
};

fn main() -> bfsurf::Result<()> {
    let bbox = HyperBox::new(vec![Dim::log10("phi", -2.0, 2.0), Dim::linear("mu", -2.0, 2.0)])?;
    let design = with_replicates(&grid_design(&bbox, &[4, 4])?, 3)?;
    let spec = EvaluatorSpec::regression(
        EvaluatorKind::RegNoisy { n_draws: 2_000 },
        default_study_data(DEFAULT_STUDY_SEED),
    )?;

    let done = AtomicUsize::new(0);
    let opts = SweepOptions {
        serial: false,
        progress: Some(&done),
    };
    let samples = evaluate_surface_with(&spec, &design, 17, opts)?;
    println!("{} of {} evaluations finished", done.load(Ordering::Relaxed), design.evaluations());

    let again = evaluate_surface_with(&spec, &design, 17, SweepOptions::default())?;
    let dims = ["phi".to_string(), "mu".to_string()];
    let a = export_surface(&dims, &samples, ExportFormat::Csv)?;
    let b = export_surface(&dims, &again, ExportFormat::Csv)?;
    println!("rerun identical: {}", a == b);

    let m = manifest(&spec, &design, 17, &samples)?;
    println!("manifest: {} samples, {} failed", m.samples, m.failed);
    print!("{}", String::from_utf8_lossy(&a).lines().take(7).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
