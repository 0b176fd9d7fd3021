//! Renders a small two-modality identity corpus to disk.
//!
//! Run with `cargo run --example generate_data`; writes PNGs plus
//! manifest.csv under out/examples/dataset.

use fdmnet::data::{Dataset, Split, SyntheticDatasetSpec};

fn main() -> fdmnet::Result<()> {
    let spec = SyntheticDatasetSpec {
        train_identities: 4,
        test_identities: 2,
        images_per_modality: 3,
        ..SyntheticDatasetSpec::default()
    };
    let dataset = Dataset::generate(&spec)?;
    let out = std::path::Path::new("out/examples/dataset");
    dataset.write_to(out)?;

    let train = dataset.samples_in(Split::Train).count();
    let test = dataset.samples_in(Split::Test).count();
    println!("{train} train + {test} test images in {}", out.display());
    Ok(())
}
