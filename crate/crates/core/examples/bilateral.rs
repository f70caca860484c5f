//! The edge-preserving filter applied to rendered views: smooths noise in
//! flat regions and leaves a step edge in place.
//!
//! `cargo run --example bilateral`

use expanded_mpi::image::RgbImage;
use expanded_mpi::mpi::{bilateral_filter, BilateralKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row_profile(img: &RgbImage, y: usize) -> String {
    (10..22).map(|x| format!("{:.2}", img.get(x, y)[0])).collect::<Vec<_>>().join(" ")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let step = RgbImage::from_fn(32, 16, |x, _| {
        let base = if x < 16 { 0.2 } else { 0.8 };
        [base + rng.gen_range(-0.05..0.05); 3]
    });
    for (name, kernel) in [
        ("default", BilateralKernel::default()),
        ("wide range", BilateralKernel::gaussian(5, 1.5, 1.0)?),
        ("impulse", BilateralKernel::impulse(5, 0.1)?),
    ] {
        let out = bilateral_filter(&step, &kernel)?;
        println!("{name:>10}: {}", row_profile(&out, 8));
    }
    println!("{:>10}: {}", "input", row_profile(&step, 8));
    Ok(())
}
