//! Amplitude-only and phase-only reconstructions of one synthetic image.
//!
//! Run with `cargo run --example fig1`; writes PNGs under out/examples/fig1.

use fdmnet::data::{identity_render, SyntheticDatasetSpec};
use fdmnet::io::img;
use fdmnet::spectral::{amplitude_only, display_rescale, phase_only};

fn main() -> fdmnet::Result<()> {
    let spec = SyntheticDatasetSpec::default();
    let image = identity_render(&spec, 0);
    let out = std::path::Path::new("out/examples/fig1");
    std::fs::create_dir_all(out).expect("create output directory");

    img::write_image(&out.join("input.png"), &image)?;
    img::write_image(&out.join("amp_only.png"), &display_rescale(&amplitude_only(&image)?))?;
    img::write_image(&out.join("phase_only.png"), &display_rescale(&phase_only(&image)?))?;

    println!("amplitude keeps the palette, phase keeps the layout: see {}", out.display());
    Ok(())
}
