//! Trains a small model for a few epochs and prints the loss log.
//!
//! Run with `cargo run --example train_toy`.

use fdmnet::config::RunConfig;
use fdmnet::data::Dataset;
use fdmnet::model::Model;
use fdmnet::trainer::Trainer;

fn main() -> fdmnet::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("data.train_identities", "4"),
        ("data.test_identities", "2"),
        ("data.images_per_modality", "4"),
        ("model.stage_channels", "4,8,12"),
        ("train.epochs", "6"),
        ("train.batch_identities", "2"),
    ] {
        cfg.apply(k, v)?;
    }
    let cfg = cfg.finalize()?;

    let dataset = Dataset::generate(&cfg.data)?;
    let model = Model::new(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(model, &dataset, cfg.schedule.clone(), cfg.weights, cfg.seed)?;
    let report = trainer.fit(None)?;

    print!("{}", report.log_csv);
    Ok(())
}
