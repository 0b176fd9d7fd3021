//! Low, mid, and high radial-band reconstructions of one synthetic image.
//!
//! Run with `cargo run --example fig2`; writes PNGs under out/examples/fig2.

use fdmnet::data::{identity_render, SyntheticDatasetSpec};
use fdmnet::io::img;
use fdmnet::spectral::{band_filter, display_rescale, RadialBand};

fn main() -> fdmnet::Result<()> {
    let spec = SyntheticDatasetSpec::default();
    let image = identity_render(&spec, 0);
    let out = std::path::Path::new("out/examples/fig2");
    std::fs::create_dir_all(out).expect("create output directory");

    img::write_image(&out.join("input.png"), &image)?;
    let (lo, hi) = (0.1, 0.4);
    for (name, band) in [
        ("low.png", RadialBand::new(0.0, lo)?),
        ("mid.png", RadialBand::new(lo, hi)?),
        ("high.png", RadialBand::new(hi, 1.0)?),
    ] {
        img::write_image(&out.join(name), &display_rescale(&band_filter(&image, &band)?))?;
    }

    println!("band energy splits by radius: see {}", out.display());
    Ok(())
}
