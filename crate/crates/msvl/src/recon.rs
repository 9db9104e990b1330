//! Image-side reconstruction: sRGB decoding, pixel-by-pixel application of
//! the transformation matrix to build a 24-band cube, and single-band view
//! extraction.
//!
//! Reconstruction is defined per pixel, so it runs over row ranges in
//! parallel without changing results: every output value depends only on its
//! own pixel, and the clamp counter is reduced in row order.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::TransformationMatrix;
use crate::error::{Error, Result};
use crate::spectral::{SpectralCube, BAND_COUNT};

/// An 8-bit RGB image as decoded from PNG or PPM input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image dimensions must be non-zero".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "rgb8 data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Rgb8Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::Format(format!("{}: PNG decode failed: {e}", path.display())))?
            .to_rgb8();
        Rgb8Image::new(img.width() as usize, img.height() as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("dimensions validated at construction");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("{}: PNG encode failed: {e}", path.display())))
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_ppm(&bytes)
            .map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.data);
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Dispatches on extension: `.png` or `.ppm`.
    pub fn load_auto(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("png") => Self::load_png(path),
            Some(ext) if ext.eq_ignore_ascii_case("ppm") => Self::load_ppm(path),
            _ => Err(Error::Format(format!(
                "{}: unsupported image extension (expected .png or .ppm)",
                path.display()
            ))),
        }
    }
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<Rgb8Image, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // Skip whitespace and `#` comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P6" {
        return Err("not a binary PPM (missing P6 magic)".into());
    }
    let width: usize = token(bytes)?.parse().map_err(|e| format!("bad PPM width: {e}"))?;
    let height: usize = token(bytes)?.parse().map_err(|e| format!("bad PPM height: {e}"))?;
    let maxval: usize = token(bytes)?.parse().map_err(|e| format!("bad PPM maxval: {e}"))?;
    if maxval != 255 {
        return Err(format!("unsupported PPM maxval {maxval} (only 255)"));
    }
    pos += 1; // single whitespace byte after maxval
    let expected = width * height * 3;
    if bytes.len() < pos + expected {
        return Err(format!(
            "PPM payload holds {} bytes, header implies {expected}",
            bytes.len().saturating_sub(pos)
        ));
    }
    Rgb8Image::new(width, height, bytes[pos..pos + expected].to_vec()).map_err(|e| e.to_string())
}

/// A linear-light RGB image with values in `[0, 1]`, row-major interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    srgb_decoded: bool,
}

impl LinearRgbImage {
    /// Wraps raw linear data, validating length, finiteness, and range. The
    /// offending pixel is named on failure.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image dimensions must be non-zero".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "linear rgb data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            let pixel = i / 3;
            return Err(Error::InvalidInput(format!(
                "pixel ({}, {}) channel {} is {}, expected a finite value in [0, 1]",
                pixel % width,
                pixel / width,
                i % 3,
                data[i]
            )));
        }
        Ok(LinearRgbImage { width, height, data, srgb_decoded: false })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn srgb_decoded(&self) -> bool {
        self.srgb_decoded
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Crops a sub-rectangle; used by the tiling tests.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidInput("crop rectangle exceeds image bounds".into()));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let row = &self.data[(y * self.width + x0) * 3..(y * self.width + x0 + width) * 3];
            data.extend_from_slice(row);
        }
        Ok(LinearRgbImage { width, height, data, srgb_decoded: self.srgb_decoded })
    }
}

/// The standard sRGB electro-optical transfer function on `[0, 1]`.
pub fn srgb_eotf(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_eotf`], used when rendering synthetic images to 8-bit.
pub fn srgb_oetf(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Decodes an 8-bit image to linear light through the sRGB EOTF.
pub fn srgb_decode(image8: &Rgb8Image) -> LinearRgbImage {
    let data = image8.data.iter().map(|&c| srgb_eotf(c as f64 / 255.0)).collect();
    LinearRgbImage {
        width: image8.width,
        height: image8.height,
        data,
        srgb_decoded: true,
    }
}

/// Decodes an 8-bit image by plain scaling (`c / 255`), for inputs already in
/// linear light.
pub fn linear_decode(image8: &Rgb8Image) -> LinearRgbImage {
    let data = image8.data.iter().map(|&c| c as f64 / 255.0).collect();
    LinearRgbImage {
        width: image8.width,
        height: image8.height,
        data,
        srgb_decoded: false,
    }
}

/// Provenance of a reconstructed cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMeta {
    /// Fraction of the `W*H*24` values that fell outside `[0, 1]` before
    /// clamping.
    pub clamped_fraction: f64,
    /// Content hash of the transformation matrix that was applied.
    pub matrix_id: String,
    /// Whether the source image went through sRGB decoding.
    pub srgb_decoded: bool,
}

/// Applies the transformation matrix to every pixel, producing a clamped
/// 24-band cube and reconstruction metadata.
pub fn reconstruct_cube(
    m: &TransformationMatrix,
    img: &LinearRgbImage,
) -> Result<(SpectralCube, ReconstructionMeta)> {
    let (width, height) = (img.width, img.height);
    let plane = width * height;

    // Pixel-major pass (parallel over rows), then a transpose into BSQ.
    let mut pixel_major = vec![0f32; plane * BAND_COUNT];
    let row_results: Vec<Result<usize>> = pixel_major
        .par_chunks_mut(width * BAND_COUNT)
        .enumerate()
        .map(|(y, out_row)| {
            let mut clamped = 0usize;
            for x in 0..width {
                let rgb = img.pixel(x, y);
                if rgb.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "pixel ({x}, {y}) holds a non-finite channel"
                    )));
                }
                let raw = m.apply(rgb);
                let out = &mut out_row[x * BAND_COUNT..(x + 1) * BAND_COUNT];
                for (k, v) in raw.iter().enumerate() {
                    if *v < 0.0 || *v > 1.0 {
                        clamped += 1;
                    }
                    out[k] = v.clamp(0.0, 1.0) as f32;
                }
            }
            Ok(clamped)
        })
        .collect();

    let mut clamped_total = 0usize;
    for r in row_results {
        clamped_total += r?;
    }

    let mut data = vec![0f32; plane * BAND_COUNT];
    for p in 0..plane {
        let src = &pixel_major[p * BAND_COUNT..(p + 1) * BAND_COUNT];
        for (k, v) in src.iter().enumerate() {
            data[k * plane + p] = *v;
        }
    }

    let cube = SpectralCube::new(width, height, data)?;
    let meta = ReconstructionMeta {
        clamped_fraction: clamped_total as f64 / (plane * BAND_COUNT) as f64,
        matrix_id: m.checksum(),
        srgb_decoded: img.srgb_decoded,
    };
    Ok((cube, meta))
}

/// A single-channel spectral view: one band plane of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct BandImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl BandImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "band data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(BandImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Copies band `band_index` of the cube out as a contiguous image.
pub fn extract_view(cube: &SpectralCube, band_index: usize) -> Result<BandImage> {
    let plane = cube.band(band_index)?;
    BandImage::new(cube.width(), cube.height(), plane.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::reconstruct_spectrum;
    use crate::util::{rng_from_seed, uniform_f64};

    fn fixture_matrix() -> TransformationMatrix {
        let rows = (0..BAND_COUNT)
            .map(|k| {
                let t = k as f64 / 23.0;
                vec![0.3 * (1.0 - t), 0.3, 0.35 * t + 0.01]
            })
            .collect();
        TransformationMatrix::from_rows(rows, false, 0.0).unwrap()
    }

    fn random_linear_image(seed: u64, width: usize, height: usize) -> LinearRgbImage {
        let mut rng = rng_from_seed(seed);
        let data: Vec<f64> = (0..width * height * 3).map(|_| uniform_f64(&mut rng)).collect();
        LinearRgbImage::from_data(width, height, data).unwrap()
    }

    #[test]
    fn srgb_endpoints_preserved() {
        assert_eq!(srgb_eotf(0.0), 0.0);
        assert_eq!(srgb_eotf(1.0), 1.0);
        let img = Rgb8Image::new(1, 2, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let lin = srgb_decode(&img);
        assert_eq!(lin.pixel(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(lin.pixel(0, 1), [1.0, 1.0, 1.0]);
        assert!(lin.srgb_decoded());
    }

    #[test]
    fn srgb_midpoint_matches_formula() {
        // Direct EOTF evaluation: ((128/255 + 0.055)/1.055)^2.4.
        let got = srgb_eotf(128.0 / 255.0);
        assert!((got - 0.21586).abs() < 1e-5, "got {got}");
    }

    #[test]
    fn srgb_decode_is_monotone() {
        let mut prev = -1.0;
        for c in 0u16..=255 {
            let v = srgb_eotf(c as f64 / 255.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn srgb_oetf_inverts_eotf() {
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            assert!((srgb_oetf(srgb_eotf(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pixel_matches_spectrum_reconstruction() {
        let m = fixture_matrix();
        let img = LinearRgbImage::from_data(1, 1, vec![0.2, 0.5, 0.3]).unwrap();
        let (cube, meta) = reconstruct_cube(&m, &img).unwrap();
        let spectrum = reconstruct_spectrum(&m, [0.2, 0.5, 0.3]).unwrap();
        for k in 0..BAND_COUNT {
            assert_eq!(cube.band(k).unwrap()[0], spectrum.values()[k] as f32);
        }
        assert_eq!(meta.matrix_id, m.checksum());
        assert!(!meta.srgb_decoded);
    }

    #[test]
    fn cube_matches_per_pixel_oracle() {
        let m = fixture_matrix();
        let img = random_linear_image(7, 8, 8);
        let (cube, meta) = reconstruct_cube(&m, &img).unwrap();
        // Naive double-loop oracle with explicit dot products.
        let mut expected_clamped = 0usize;
        for y in 0..8 {
            for x in 0..8 {
                let rgb = img.pixel(x, y);
                for k in 0..BAND_COUNT {
                    let row = m.row(k);
                    let raw = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
                    if !(0.0..=1.0).contains(&raw) {
                        expected_clamped += 1;
                    }
                    let expected = raw.clamp(0.0, 1.0) as f32;
                    let got = cube.band(k).unwrap()[y * 8 + x];
                    assert_eq!(got.to_bits(), expected.to_bits(), "pixel ({x},{y}) band {k}");
                }
            }
        }
        assert_eq!(meta.clamped_fraction, expected_clamped as f64 / (64 * BAND_COUNT) as f64);
    }

    #[test]
    fn cube_declares_24_bands_on_standard_grid() {
        let m = fixture_matrix();
        let img = random_linear_image(8, 4, 4);
        let (cube, _) = reconstruct_cube(&m, &img).unwrap();
        assert_eq!(cube.bands(), 24);
        assert_eq!(cube.grid().wavelengths_nm()[0], 450.0);
        assert_eq!(cube.grid().wavelengths_nm()[23], 680.0);
    }

    #[test]
    fn exact_model_clamps_nothing() {
        let m = fixture_matrix();
        let img = random_linear_image(9, 6, 5);
        let (_, meta) = reconstruct_cube(&m, &img).unwrap();
        assert_eq!(meta.clamped_fraction, 0.0);
    }

    #[test]
    fn sub_rectangle_equals_full_reconstruction() {
        let m = fixture_matrix();
        let img = random_linear_image(10, 9, 7);
        let (full, _) = reconstruct_cube(&m, &img).unwrap();
        let crop = img.crop(2, 1, 4, 5).unwrap();
        let (tile, _) = reconstruct_cube(&m, &crop).unwrap();
        for k in 0..BAND_COUNT {
            let full_band = full.band(k).unwrap();
            let tile_band = tile.band(k).unwrap();
            for ty in 0..5 {
                for tx in 0..4 {
                    assert_eq!(
                        tile_band[ty * 4 + tx].to_bits(),
                        full_band[(ty + 1) * 9 + (tx + 2)].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn reconstruction_is_deterministic_across_thread_counts() {
        let m = fixture_matrix();
        let img = random_linear_image(11, 16, 16);
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let (c1, _) = pool1.install(|| reconstruct_cube(&m, &img)).unwrap();
        let (c4, _) = pool4.install(|| reconstruct_cube(&m, &img)).unwrap();
        assert_eq!(c1.data(), c4.data());
    }

    #[test]
    fn views_partition_the_cube() {
        let m = fixture_matrix();
        let img = random_linear_image(12, 5, 4);
        let (cube, _) = reconstruct_cube(&m, &img).unwrap();
        let mut reassembled = Vec::new();
        for k in 0..BAND_COUNT {
            reassembled.extend_from_slice(extract_view(&cube, k).unwrap().data());
        }
        assert_eq!(reassembled, cube.data());
        assert!(extract_view(&cube, 24).is_err());
    }

    #[test]
    fn view_mean_matches_independent_reduction() {
        let m = fixture_matrix();
        let img = random_linear_image(13, 6, 6);
        let (cube, _) = reconstruct_cube(&m, &img).unwrap();
        let view = extract_view(&cube, 11).unwrap();
        let view_mean: f64 =
            view.data().iter().map(|&v| v as f64).sum::<f64>() / view.data().len() as f64;
        // Independent reduction straight off the cube storage.
        let plane = 36;
        let band_mean: f64 = cube.data()[11 * plane..12 * plane]
            .iter()
            .map(|&v| v as f64)
            .sum::<f64>()
            / plane as f64;
        assert_eq!(view_mean, band_mean);
    }

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut rng = rng_from_seed(20);
        let data: Vec<u8> = (0..5 * 3 * 3).map(|_| (uniform_f64(&mut rng) * 255.0) as u8).collect();
        let img = Rgb8Image::new(5, 3, data).unwrap();
        img.save_ppm(&path).unwrap();
        let back = Rgb8Image::load_ppm(&path).unwrap();
        assert_eq!(back, img);
        let auto = Rgb8Image::load_auto(&path).unwrap();
        assert_eq!(auto, img);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = rng_from_seed(21);
        let data: Vec<u8> = (0..4 * 4 * 3).map(|_| (uniform_f64(&mut rng) * 255.0) as u8).collect();
        let img = Rgb8Image::new(4, 4, data).unwrap();
        img.save_png(&path).unwrap();
        let back = Rgb8Image::load_png(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn linear_image_rejects_bad_pixels_with_coordinates() {
        let mut data = vec![0.5; 2 * 2 * 3];
        data[7] = f64::NAN; // flat index 7 = pixel (0, 1), channel 1
        let err = LinearRgbImage::from_data(2, 2, data).unwrap_err();
        match err {
            Error::InvalidInput(msg) => assert!(msg.contains("(0, 1)"), "message: {msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
