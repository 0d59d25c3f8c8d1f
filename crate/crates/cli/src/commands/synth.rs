//! Synthetic dataset generation.

use std::path::Path;

use anyhow::Result;

use chronolens_core::synthetic::{generate, SyntheticConfig};

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    out: &Path,
    photos: usize,
    seed: u64,
    image_size: u32,
    max_regions: u32,
    fixed_regions: Option<u32>,
) -> Result<()> {
    let config = SyntheticConfig {
        photos,
        seed,
        image_size,
        max_regions,
        fixed_regions,
        ..SyntheticConfig::default()
    };
    let summary = generate(out, &config)?;
    println!(
        "generated {} synthetic photos over {} years in {}",
        summary.photos,
        summary.years.len(),
        out.display()
    );
    println!("manifest: {}", summary.manifest.display());
    Ok(())
}
