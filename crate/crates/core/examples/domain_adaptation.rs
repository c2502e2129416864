//! Aligning a shifted target domain onto a labeled source by descending a
//! sliced loss, in particle mode and in transform mode.
//!
//! Run with `cargo run --release --example domain_adaptation`.

use spd_sliced::adaptation::{AdaptationConfig, AdaptationMode, LossKind};
use spd_sliced::experiments::{adapt_experiment, AdaptationTask};

fn main() -> spd_sliced::Result<()> {
    let (source, target) = AdaptationTask::new(0).generate()?;
    for mode in [AdaptationMode::Particles, AdaptationMode::Transform] {
        let mut cfg = AdaptationConfig::new(mode, LossKind::Spdsw);
        cfg.epochs = if mode == AdaptationMode::Particles { 100 } else { 200 };
        let (_, trace, scores) = adapt_experiment(&source, target.measure(), Some(target.labels()), true, 1e-2, &cfg)?;
        let scores = scores.expect("labels given");
        println!(
            "{mode:?}: loss {:.4} -> {:.4} in {} epochs, target accuracy {:.1}% -> {:.1}%",
            trace.initial_loss(),
            trace.final_loss(),
            trace.epochs_run,
            100.0 * scores.before,
            100.0 * scores.after
        );
    }
    Ok(())
}
