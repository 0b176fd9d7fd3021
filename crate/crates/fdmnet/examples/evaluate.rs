//! Trains a small model, then scores cross-modality retrieval on the test
//! identities over repeated gallery draws.
//!
//! Run with `cargo run --example evaluate`.

use fdmnet::config::RunConfig;
use fdmnet::data::Dataset;
use fdmnet::eval::evaluate;
use fdmnet::model::Model;
use fdmnet::trainer::Trainer;

fn main() -> fdmnet::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("data.train_identities", "4"),
        ("data.test_identities", "3"),
        ("data.images_per_modality", "4"),
        ("model.stage_channels", "4,8,12"),
        ("train.epochs", "8"),
        ("train.batch_identities", "2"),
        ("eval.splits", "5"),
    ] {
        cfg.apply(k, v)?;
    }
    let cfg = cfg.finalize()?;

    let dataset = Dataset::generate(&cfg.data)?;
    let model = Model::new(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(model, &dataset, cfg.schedule.clone(), cfg.weights, cfg.seed)?;
    trainer.fit(None)?;

    let report = evaluate(&trainer.model, &dataset, cfg.eval_splits, cfg.seed)?;
    print!("{}", report.to_table());
    Ok(())
}
