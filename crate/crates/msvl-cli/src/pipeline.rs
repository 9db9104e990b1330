//! Shared dataset plumbing: turning a manifest of PNG images into model
//! inputs for a given architecture.

use std::path::Path;

use rayon::prelude::*;

use msvl::calib::TransformationMatrix;
use msvl::model::{Arch, LabeledSample, SampleInput};
use msvl::phantom::{read_manifest, ManifestEntry};
use msvl::recon::{extract_view, reconstruct_cube, srgb_decode, Rgb8Image};
use msvl::{Error, Result};

/// Loads every manifest entry of `split` and prepares the input each
/// architecture consumes: decoded RGB for the baseline, a reconstructed cube
/// for the spectral models (with the single-band model keeping only its
/// view).
pub fn load_split(
    data_dir: &Path,
    split: &str,
    arch: Arch,
    band: Option<usize>,
    matrix: Option<&TransformationMatrix>,
) -> Result<Vec<LabeledSample>> {
    let manifest = read_manifest(data_dir.join("manifest.jsonl"))?;
    let entries: Vec<&ManifestEntry> =
        manifest.iter().filter(|e| e.split == split).collect();
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "dataset at {} has no {split:?} split",
            data_dir.display()
        )));
    }
    if matches!(arch, Arch::SingleBand | Arch::GnnMsvl) && matrix.is_none() {
        return Err(Error::InvalidInput(
            "spectral architectures need --matrix to reconstruct cubes".into(),
        ));
    }

    entries
        .par_iter()
        .map(|entry| {
            let image8 = Rgb8Image::load_auto(data_dir.join(&entry.path))?;
            let linear = srgb_decode(&image8);
            let input = match arch {
                Arch::RgbBaseline => SampleInput::Rgb(linear),
                Arch::SingleBand => {
                    let (cube, _) = reconstruct_cube(matrix.unwrap(), &linear)?;
                    let band = band.ok_or_else(|| {
                        Error::InvalidInput("single_band needs --band".into())
                    })?;
                    SampleInput::Band(extract_view(&cube, band)?)
                }
                Arch::GnnMsvl => {
                    let (cube, _) = reconstruct_cube(matrix.unwrap(), &linear)?;
                    SampleInput::Cube(cube)
                }
            };
            Ok(LabeledSample {
                id: entry.path.clone(),
                input,
                label: entry.label == 1,
                group: Some(entry.group.clone()),
            })
        })
        .collect()
}
