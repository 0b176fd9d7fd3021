//! Trains the six component combinations on a small corpus and compares
//! their retrieval scores.
//!
//! Run with `cargo run --example ablation` (takes a minute or two).

use fdmnet::ablate;
use fdmnet::config::RunConfig;

fn main() -> fdmnet::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("data.train_identities", "4"),
        ("data.test_identities", "3"),
        ("data.images_per_modality", "4"),
        ("model.stage_channels", "4,8,12"),
        ("train.epochs", "6"),
        ("train.batch_identities", "2"),
        ("eval.splits", "5"),
    ] {
        cfg.apply(k, v)?;
    }
    let cfg = cfg.finalize()?;

    let rows = ablate::run(&cfg, &[cfg.seed], |line| eprintln!("{line}"))?;
    print!("{}", ablate::to_table(&rows));
    Ok(())
}
