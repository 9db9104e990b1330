//! Synthetic ground truth: color-checker-style patch sets seen through a
//! synthetic camera, and two-class fundus-like phantom images whose class
//! signal is a band-localized reflectance rise inside a central disk.
//!
//! The class effect sits in the 520-600 nm window, where hemoglobin normally
//! absorbs: ischemic tissue holds less blood, so its reflectance rises there
//! and essentially nowhere else. The background reflectance grows from
//! shorter to longer wavelengths, matching real fundus behavior, and random
//! vessel strokes absorb most strongly inside the same window.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::ColorPatch;
use crate::error::{Error, Result};
use crate::recon::{srgb_oetf, Rgb8Image};
use crate::spectral::{write_cube_file, ReflectanceSpectrum, SpectralCube, SpectrumGrid, BAND_COUNT, WAVELENGTH_MIN_NM, WAVELENGTH_STEP_NM};
use crate::util::{derive_seed, normal_f64, rng_from_seed, uniform_f64, uniform_in, uniform_index};

/// Three Gaussian spectral sensitivity curves over the 24-point grid, each
/// normalized to unit sum, plus additive sensor noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCamera {
    sensitivities: [[f64; BAND_COUNT]; 3],
    pub noise_sigma: f64,
}

impl SyntheticCamera {
    pub fn new(centers_nm: [f64; 3], widths_nm: [f64; 3], noise_sigma: f64) -> Result<Self> {
        if noise_sigma < 0.0 || !noise_sigma.is_finite() {
            return Err(Error::InvalidInput(format!("camera noise sigma {noise_sigma} invalid")));
        }
        let mut sensitivities = [[0.0; BAND_COUNT]; 3];
        for c in 0..3 {
            if widths_nm[c] <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "camera channel {c} width {} must be positive",
                    widths_nm[c]
                )));
            }
            let mut total = 0.0;
            for (k, s) in sensitivities[c].iter_mut().enumerate() {
                let nm = WAVELENGTH_MIN_NM + WAVELENGTH_STEP_NM * k as f64;
                let z = (nm - centers_nm[c]) / widths_nm[c];
                *s = (-0.5 * z * z).exp();
                total += *s;
            }
            for s in &mut sensitivities[c] {
                *s /= total;
            }
        }
        Ok(SyntheticCamera { sensitivities, noise_sigma })
    }

    /// Blue/green/red-ish channels at 460/540/610 nm.
    pub fn default_camera(noise_sigma: f64) -> Self {
        Self::new([610.0, 540.0, 460.0], [45.0, 40.0, 35.0], noise_sigma)
            .expect("default camera parameters are valid")
    }

    pub fn sensitivities(&self) -> &[[f64; BAND_COUNT]; 3] {
        &self.sensitivities
    }

    /// Noise-free response: each channel integrates the spectrum against its
    /// unit-sum sensitivity, so reflectance in [0,1] maps into [0,1].
    pub fn respond_clean(&self, spectrum: &[f64; BAND_COUNT]) -> [f64; 3] {
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..BAND_COUNT {
                acc += self.sensitivities[c][k] * spectrum[k];
            }
            rgb[c] = acc;
        }
        rgb
    }

    /// Response with additive Gaussian sensor noise, clamped to [0, 1].
    pub fn respond(&self, spectrum: &[f64; BAND_COUNT], rng: &mut ChaCha12Rng) -> [f64; 3] {
        let mut rgb = self.respond_clean(spectrum);
        if self.noise_sigma > 0.0 {
            for v in &mut rgb {
                *v = (*v + self.noise_sigma * normal_f64(rng)).clamp(0.0, 1.0);
            }
        }
        rgb
    }
}

/// Raised-cosine partition of unity over the wavelength range: `basis_dim`
/// bumps whose values sum to exactly 1 at every grid point, so convex
/// coefficient combinations stay in [0, 1] without clipping.
fn spectral_basis(basis_dim: usize) -> Vec<[f64; BAND_COUNT]> {
    assert!(basis_dim >= 2);
    let span = WAVELENGTH_STEP_NM * (BAND_COUNT - 1) as f64;
    let spacing = span / (basis_dim - 1) as f64;
    let mut basis = vec![[0.0; BAND_COUNT]; basis_dim];
    for (j, b) in basis.iter_mut().enumerate() {
        let center = WAVELENGTH_MIN_NM + spacing * j as f64;
        for (k, v) in b.iter_mut().enumerate() {
            let nm = WAVELENGTH_MIN_NM + WAVELENGTH_STEP_NM * k as f64;
            let t = (nm - center).abs() / spacing;
            if t < 1.0 {
                let c = (std::f64::consts::FRAC_PI_2 * t).cos();
                *v = c * c;
            }
        }
    }
    basis
}

/// Draws one smooth reflectance spectrum: coefficients follow a bounded
/// random walk across the basis bumps, so neighboring bands stay correlated.
fn random_smooth_spectrum(
    basis: &[[f64; BAND_COUNT]],
    rng: &mut ChaCha12Rng,
) -> [f64; BAND_COUNT] {
    let mut coeff = uniform_in(rng, 0.15, 0.85);
    let mut spectrum = [0.0; BAND_COUNT];
    for b in basis {
        for k in 0..BAND_COUNT {
            spectrum[k] += coeff * b[k];
        }
        coeff = (coeff + uniform_in(rng, -0.18, 0.18)).clamp(0.05, 0.95);
    }
    spectrum
}

/// Generates a training set and a holdout set of synthetic color patches.
///
/// Reflectances come from a `basis_dim`-bump smooth spectral basis; the RGB
/// responses are the camera's (noisy) view of them. Deterministic per seed.
pub fn synth_patch_set(
    basis_dim: usize,
    n_train: usize,
    n_holdout: usize,
    camera: &SyntheticCamera,
    seed: u64,
) -> Result<(Vec<ColorPatch>, Vec<ColorPatch>)> {
    if basis_dim < 2 || basis_dim > BAND_COUNT {
        return Err(Error::InvalidInput(format!(
            "basis_dim must be in 2..={BAND_COUNT}, got {basis_dim}"
        )));
    }
    if n_train == 0 || n_holdout == 0 {
        return Err(Error::InvalidInput("patch counts must be positive".into()));
    }
    let basis = spectral_basis(basis_dim);
    let make = |prefix: &str, count: usize, stream: u64| -> Result<Vec<ColorPatch>> {
        let mut rng = rng_from_seed(derive_seed(seed, stream));
        (0..count)
            .map(|i| {
                let spectrum = random_smooth_spectrum(&basis, &mut rng);
                let rgb = camera.respond(&spectrum, &mut rng);
                ColorPatch::new(
                    format!("{prefix}{i:03}"),
                    rgb,
                    ReflectanceSpectrum::new(spectrum, SpectrumGrid::standard())?,
                )
            })
            .collect()
    };
    Ok((make("train", n_train, 0)?, make("holdout", n_holdout, 1)?))
}

/// Configuration of the fundus-like phantom generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Square image side in pixels.
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Class-effect window bounds, inclusive, nanometers.
    pub effect_low_nm: f64,
    pub effect_high_nm: f64,
    /// Reflectance rise applied inside the central disk for class 1.
    pub effect_magnitude: f64,
    /// Expected vessel strokes per 32 pixels of image side.
    pub vessel_density: f64,
    /// Camera sensor noise sigma.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            image_size: 64,
            n_train: 400,
            n_val: 50,
            n_test: 150,
            effect_low_nm: 520.0,
            effect_high_nm: 600.0,
            effect_magnitude: 0.12,
            vessel_density: 2.0,
            noise_sigma: 0.02,
            seed: 42,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::InvalidInput("phantom images need at least 8 pixels".into()));
        }
        if self.effect_low_nm >= self.effect_high_nm
            || self.effect_low_nm < WAVELENGTH_MIN_NM
            || self.effect_high_nm > WAVELENGTH_MIN_NM + WAVELENGTH_STEP_NM * (BAND_COUNT - 1) as f64
        {
            return Err(Error::InvalidInput(format!(
                "effect window {}-{} nm must sit inside the grid",
                self.effect_low_nm, self.effect_high_nm
            )));
        }
        if !(0.0..=0.5).contains(&self.effect_magnitude) {
            return Err(Error::InvalidInput(format!(
                "effect magnitude {} outside [0, 0.5]",
                self.effect_magnitude
            )));
        }
        if self.noise_sigma < 0.0 || self.vessel_density < 0.0 {
            return Err(Error::InvalidInput("noise and vessel density must be non-negative".into()));
        }
        Ok(())
    }

    fn split_sizes(&self) -> [(&'static str, usize); 3] {
        [("train", self.n_train), ("val", self.n_val), ("test", self.n_test)]
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u8,
    pub split: String,
    pub group: String,
}

/// A rendered phantom before camera projection.
pub struct PhantomImage {
    /// Ground-truth reflectance, band-major, clipped to [0, 1].
    pub cube: SpectralCube,
    /// The camera's 8-bit sRGB rendering.
    pub rgb: Rgb8Image,
    pub label: u8,
    pub grade: u8,
}

/// Smooth raised-cosine profile of the class-effect window: 1 on the inner
/// plateau, cosine shoulders over one band at each edge, 0 outside.
fn effect_profile(low_nm: f64, high_nm: f64) -> [f64; BAND_COUNT] {
    let mut profile = [0.0; BAND_COUNT];
    let ramp = WAVELENGTH_STEP_NM;
    for (k, p) in profile.iter_mut().enumerate() {
        let nm = WAVELENGTH_MIN_NM + WAVELENGTH_STEP_NM * k as f64;
        if nm < low_nm || nm > high_nm {
            continue;
        }
        let rise = ((nm - low_nm) / ramp).min(1.0);
        let fall = ((high_nm - nm) / ramp).min(1.0);
        let edge = rise.min(fall);
        *p = 0.5 - 0.5 * (std::f64::consts::PI * edge).cos();
    }
    profile
}

/// Hemoglobin-like vessel absorption: a floor everywhere plus a strong bump
/// inside the 520-600 nm window.
fn vessel_absorption() -> [f64; BAND_COUNT] {
    let bump = effect_profile(510.0, 610.0);
    let mut a = [0.0; BAND_COUNT];
    for k in 0..BAND_COUNT {
        a[k] = 0.25 + 0.5 * bump[k];
    }
    a
}

/// Renders one phantom image deterministically from its own seed.
pub fn render_phantom(
    cfg: &PhantomConfig,
    camera: &SyntheticCamera,
    label: u8,
    grade: u8,
    image_seed: u64,
) -> Result<PhantomImage> {
    cfg.validate()?;
    let size = cfg.image_size;
    let mut rng = rng_from_seed(image_seed);

    // Background: reflectance rising with wavelength, modulated by a smooth
    // spatial field and a global brightness jitter.
    let base_low = uniform_in(&mut rng, 0.15, 0.20);
    let slope = uniform_in(&mut rng, 0.30, 0.40);
    let gain = uniform_in(&mut rng, 0.96, 1.04);
    let mut background = [0.0; BAND_COUNT];
    for (k, b) in background.iter_mut().enumerate() {
        *b = gain * (base_low + slope * k as f64 / (BAND_COUNT - 1) as f64);
    }

    // Smooth spatial modulation: three low-frequency cosine waves.
    let mut waves = [[0.0f64; 4]; 3];
    for w in &mut waves {
        w[0] = uniform_in(&mut rng, 0.4, 1.4) / size as f64; // fx
        w[1] = uniform_in(&mut rng, 0.4, 1.4) / size as f64; // fy
        w[2] = uniform_in(&mut rng, 0.0, std::f64::consts::TAU); // phase
        w[3] = uniform_in(&mut rng, 0.02, 0.06); // amplitude
    }
    let field = |x: f64, y: f64| -> f64 {
        let mut m = 1.0;
        for w in &waves {
            m += w[3] * (std::f64::consts::TAU * (w[0] * x + w[1] * y) + w[2]).cos();
        }
        m
    };

    // Vessel strokes: random walks stamped into a coverage mask.
    let mut vessel = vec![0.0f64; size * size];
    let stroke_count =
        (cfg.vessel_density * size as f64 / 32.0).round() as usize;
    for _ in 0..stroke_count {
        let mut x = uniform_in(&mut rng, 0.0, size as f64);
        let mut y = uniform_in(&mut rng, 0.0, size as f64);
        let mut angle = uniform_in(&mut rng, 0.0, std::f64::consts::TAU);
        let steps = (size as f64 * uniform_in(&mut rng, 0.6, 1.4)) as usize;
        let thickness: f64 = if uniform_f64(&mut rng) < 0.6 { 1.0 } else { 1.6 };
        let depth = uniform_in(&mut rng, 0.55, 0.85);
        for _ in 0..steps {
            angle += uniform_in(&mut rng, -0.35, 0.35);
            x += angle.cos();
            y += angle.sin();
            if x < -2.0 || y < -2.0 || x > size as f64 + 2.0 || y > size as f64 + 2.0 {
                break;
            }
            let r = thickness.ceil() as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let px = x as isize + dx;
                    let py = y as isize + dy;
                    if px < 0 || py < 0 || px >= size as isize || py >= size as isize {
                        continue;
                    }
                    let d2 = ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt();
                    if d2 <= thickness {
                        let idx = py as usize * size + px as usize;
                        vessel[idx] = vessel[idx].max(depth * (1.0 - 0.4 * d2 / thickness));
                    }
                }
            }
        }
    }

    // Broadband absorber blotch (melanin-like): a smooth class-independent
    // density field that dims every band equally. Absolute brightness is
    // therefore an unreliable cue; the class signal below is band-localized.
    let pig_cx = size as f64 / 2.0 + uniform_in(&mut rng, -(size as f64) / 8.0, size as f64 / 8.0);
    let pig_cy = size as f64 / 2.0 + uniform_in(&mut rng, -(size as f64) / 8.0, size as f64 / 8.0);
    let pig_radius = size as f64 * uniform_in(&mut rng, 0.20, 0.45);
    let pig_peak = uniform_in(&mut rng, 0.0, 0.30);

    // Class effect: soft central disk, magnitude scaled by severity grade.
    let profile = effect_profile(cfg.effect_low_nm, cfg.effect_high_nm);
    let absorption = vessel_absorption();
    let cx = size as f64 / 2.0 + uniform_in(&mut rng, -(size as f64) / 12.0, size as f64 / 12.0);
    let cy = size as f64 / 2.0 + uniform_in(&mut rng, -(size as f64) / 12.0, size as f64 / 12.0);
    let radius = size as f64 * uniform_in(&mut rng, 0.28, 0.36);
    let grade_multiplier = if label == 1 { 0.7 + 0.1 * (grade.max(1) - 1) as f64 } else { 0.0 };
    let magnitude = cfg.effect_magnitude * grade_multiplier;

    let plane = size * size;
    let mut cube_data = vec![0f32; plane * BAND_COUNT];
    let mut rgb_data = vec![0u8; plane * 3];
    let mut spectrum = [0.0; BAND_COUNT];
    for y in 0..size {
        for x in 0..size {
            let m = field(x as f64, y as f64);
            let v = vessel[y * size + x];
            let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let disk = if dist < radius {
                // Soft edge over the outer 20% of the radius.
                ((radius - dist) / (0.2 * radius)).min(1.0)
            } else {
                0.0
            };
            let pig_dist =
                ((x as f64 - pig_cx).powi(2) + (y as f64 - pig_cy).powi(2)).sqrt();
            let pigment = if pig_dist < pig_radius {
                pig_peak * (1.0 - (pig_dist / pig_radius).powi(2))
            } else {
                0.0
            };
            for k in 0..BAND_COUNT {
                let mut r = background[k] * m;
                r += magnitude * profile[k] * disk;
                r *= 1.0 - pigment;
                r *= 1.0 - v * absorption[k];
                let r = r.clamp(0.0, 1.0);
                spectrum[k] = r;
                cube_data[k * plane + y * size + x] = r as f32;
            }
            let rgb = camera.respond(&spectrum, &mut rng);
            for c in 0..3 {
                let encoded = srgb_oetf(rgb[c]);
                rgb_data[(y * size + x) * 3 + c] = (encoded * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    Ok(PhantomImage {
        cube: SpectralCube::new(size, size, cube_data)?,
        rgb: Rgb8Image::new(size, size, rgb_data)?,
        label,
        grade,
    })
}

/// Per-image labels and severity grades, derived deterministically from the
/// dataset seed. Labels alternate within each split so classes stay
/// balanced; grades correlate with the class (and, for class 1, scale the
/// effect magnitude).
fn assign_label_and_grade(rng: &mut ChaCha12Rng, index_in_split: usize) -> (u8, u8) {
    let label = (index_in_split % 2) as u8;
    let grade = if label == 1 {
        // Grades 1..=4, weighted toward the middle.
        match uniform_index(rng, 10) {
            0 | 1 => 1,
            2..=4 => 2,
            5..=7 => 3,
            _ => 4,
        }
    } else {
        // Grades 0..=3, weighted toward 0.
        match uniform_index(rng, 10) {
            0..=4 => 0,
            5 | 6 => 1,
            7 | 8 => 2,
            _ => 3,
        }
    };
    (label, grade as u8)
}

/// Generates the full dataset: PNG images, a JSON-lines manifest, and
/// (optionally) paired ground-truth cubes. Returns the manifest entries.
///
/// Images render in parallel from per-image derived seeds, so the output is
/// independent of scheduling.
pub fn synth_fundus_dataset(
    cfg: &PhantomConfig,
    out_dir: impl AsRef<Path>,
    emit_cubes: bool,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let camera = SyntheticCamera::default_camera(cfg.noise_sigma);

    // Assignment pass is sequential (cheap); rendering is parallel.
    let mut jobs = Vec::new();
    let mut assign_rng = rng_from_seed(derive_seed(cfg.seed, 0xA551));
    let mut global_index = 0u64;
    for (split, count) in cfg.split_sizes() {
        for i in 0..count {
            let (label, grade) = assign_label_and_grade(&mut assign_rng, i);
            let image_seed = derive_seed(cfg.seed, 0x1000 + global_index);
            jobs.push((split, i, label, grade, image_seed));
            global_index += 1;
        }
    }

    let rendered: Vec<Result<(PhantomImage, ManifestEntry)>> = jobs
        .par_iter()
        .map(|&(split, i, label, grade, image_seed)| {
            let image = render_phantom(cfg, &camera, label, grade, image_seed)?;
            let name = format!("img_{split}_{i:05}.png");
            Ok((
                image,
                ManifestEntry {
                    path: name,
                    label,
                    split: split.to_string(),
                    group: grade.to_string(),
                },
            ))
        })
        .collect();

    let mut entries = Vec::with_capacity(rendered.len());
    for item in rendered {
        let (image, entry) = item?;
        let png_path = out_dir.join(&entry.path);
        image.rgb.save_png(&png_path)?;
        if emit_cubes {
            let cube_path = png_path.with_extension("msc");
            write_cube_file(&image.cube, cube_path)?;
        }
        entries.push(entry);
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    let mut manifest = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for entry in &entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
        writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(entries)
}

/// Reads a JSON-lines manifest back.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("manifest line {i} parse failed: {e}")))?;
        entries.push(entry);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{validate_calibration, wiener_fit};
    use crate::spectral::read_cube_file;
    use crate::util::sha256_hex;

    #[test]
    fn camera_sensitivities_are_normalized() {
        let camera = SyntheticCamera::default_camera(0.0);
        for channel in camera.sensitivities() {
            let total: f64 = channel.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(channel.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn basis_is_a_partition_of_unity() {
        for dim in [3, 6, 12] {
            let basis = spectral_basis(dim);
            for k in 0..BAND_COUNT {
                let total: f64 = basis.iter().map(|b| b[k]).sum();
                assert!((total - 1.0).abs() <= 1e-12, "dim {dim} band {k}: {total}");
            }
        }
    }

    #[test]
    fn noise_free_three_dim_patches_fit_exactly() {
        let camera = SyntheticCamera::default_camera(0.0);
        let (train, holdout) = synth_patch_set(3, 24, 24, &camera, 7).unwrap();
        let matrix = wiener_fit(&train, 0.0, false).unwrap();
        let report = validate_calibration(&matrix, &holdout).unwrap();
        assert!(report.mean_rmse <= 1e-8, "holdout rmse {}", report.mean_rmse);
    }

    #[test]
    fn default_fixture_meets_paper_grade_error() {
        // 24 train / 96 holdout, 6-dim basis, sensor noise 0.01, seed 42.
        let camera = SyntheticCamera::default_camera(0.01);
        let (train, holdout) = synth_patch_set(6, 24, 96, &camera, 42).unwrap();
        let matrix = wiener_fit(&train, crate::calib::default_lambda(&train, false), false).unwrap();
        let report = validate_calibration(&matrix, &holdout).unwrap();
        assert!(
            report.mean_rmse <= 0.05,
            "holdout rmse {} exceeds the 0.05 target",
            report.mean_rmse
        );
    }

    #[test]
    fn patch_sets_are_seed_deterministic() {
        let camera = SyntheticCamera::default_camera(0.01);
        let (a_train, a_holdout) = synth_patch_set(6, 10, 10, &camera, 9).unwrap();
        let (b_train, b_holdout) = synth_patch_set(6, 10, 10, &camera, 9).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_holdout, b_holdout);
        let (c_train, _) = synth_patch_set(6, 10, 10, &camera, 10).unwrap();
        assert_ne!(a_train, c_train);
    }

    #[test]
    fn zero_count_dataset_is_empty() {
        let cfg = PhantomConfig {
            n_train: 0,
            n_val: 0,
            n_test: 0,
            image_size: 16,
            ..PhantomConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let entries = synth_fundus_dataset(&cfg, dir.path(), false).unwrap();
        assert!(entries.is_empty());
        let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert!(manifest.is_empty());
    }

    #[test]
    fn dataset_is_byte_deterministic() {
        let cfg = PhantomConfig {
            n_train: 4,
            n_val: 2,
            n_test: 2,
            image_size: 24,
            seed: 5,
            ..PhantomConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        synth_fundus_dataset(&cfg, dir_a.path(), true).unwrap();
        synth_fundus_dataset(&cfg, dir_b.path(), true).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(dir_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 1);
        for name in names {
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(sha256_hex(&a), sha256_hex(&b), "{name:?} differs between runs");
        }
    }

    /// Class-conditional mean spectra over the central disk, from emitted
    /// ground-truth cubes.
    fn class_disk_means(cfg: &PhantomConfig, dir: &Path) -> ([f64; BAND_COUNT], [f64; BAND_COUNT]) {
        let entries = read_manifest(dir.join("manifest.jsonl")).unwrap();
        let mut means = [[0.0f64; BAND_COUNT]; 2];
        let mut counts = [0usize; 2];
        let size = cfg.image_size;
        let inner = size as f64 * 0.22; // inside every random disk radius
        for entry in &entries {
            let cube = read_cube_file(dir.join(&entry.path).with_extension("msc")).unwrap();
            let label = entry.label as usize;
            for k in 0..BAND_COUNT {
                let band = cube.band(k).unwrap();
                let mut acc = 0.0;
                let mut n = 0usize;
                for y in 0..size {
                    for x in 0..size {
                        let dist = ((x as f64 - size as f64 / 2.0).powi(2)
                            + (y as f64 - size as f64 / 2.0).powi(2))
                        .sqrt();
                        if dist < inner {
                            acc += band[y * size + x] as f64;
                            n += 1;
                        }
                    }
                }
                means[label][k] += acc / n as f64;
            }
            counts[label] += 1;
        }
        for label in 0..2 {
            for k in 0..BAND_COUNT {
                means[label][k] /= counts[label] as f64;
            }
        }
        (means[0], means[1])
    }

    #[test]
    fn class_signal_lives_inside_the_effect_window() {
        let cfg = PhantomConfig {
            n_train: 60,
            n_val: 0,
            n_test: 0,
            image_size: 32,
            seed: 11,
            ..PhantomConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        synth_fundus_dataset(&cfg, dir.path(), true).unwrap();
        let (neg, pos) = class_disk_means(&cfg, dir.path());
        let grid = SpectrumGrid::standard();
        for k in 0..BAND_COUNT {
            let nm = grid.wavelengths_nm()[k];
            let diff = pos[k] - neg[k];
            if nm >= 530.0 && nm <= 590.0 {
                assert!(
                    diff >= cfg.effect_magnitude / 2.0,
                    "band {nm} nm: in-window difference {diff} below half magnitude"
                );
            }
            if !(cfg.effect_low_nm..=cfg.effect_high_nm).contains(&nm) {
                assert!(
                    diff.abs() < 0.025,
                    "band {nm} nm: out-of-window difference {diff} too large"
                );
            }
        }
    }

    #[test]
    fn background_reflectance_rises_with_wavelength() {
        // Render one vessel-free, class-0 image and check band means.
        let cfg = PhantomConfig {
            image_size: 24,
            vessel_density: 0.0,
            noise_sigma: 0.0,
            ..PhantomConfig::default()
        };
        let camera = SyntheticCamera::default_camera(0.0);
        let image = render_phantom(&cfg, &camera, 0, 0, 77).unwrap();
        let mut prev = -1.0;
        for k in 0..BAND_COUNT {
            let band = image.cube.band(k).unwrap();
            let mean: f64 = band.iter().map(|&v| v as f64).sum::<f64>() / band.len() as f64;
            assert!(mean >= prev, "band {k} mean {mean} dropped below {prev}");
            prev = mean;
        }
    }

    #[test]
    fn manifest_covers_five_severity_groups_and_balanced_labels() {
        let cfg = PhantomConfig {
            n_train: 40,
            n_val: 10,
            n_test: 10,
            image_size: 16,
            seed: 3,
            ..PhantomConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let entries = synth_fundus_dataset(&cfg, dir.path(), false).unwrap();
        assert_eq!(entries.len(), 60);
        let positives = entries.iter().filter(|e| e.label == 1).count();
        assert_eq!(positives, 30);
        let groups: std::collections::BTreeSet<&str> =
            entries.iter().map(|e| e.group.as_str()).collect();
        assert_eq!(groups, ["0", "1", "2", "3", "4"].into_iter().collect());
        for split in ["train", "val", "test"] {
            assert!(entries.iter().any(|e| e.split == split));
        }
        let back = read_manifest(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(back, entries);
    }
}
