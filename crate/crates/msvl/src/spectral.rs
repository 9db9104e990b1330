//! Spectral domain types: the fixed 24-point wavelength grid, reflectance
//! spectra, spectral cubes, RMSE, and the `.msc` cube file format.
//!
//! The grid is a fixed constant of the system — 24 bands from 450 nm to
//! 680 nm in 10 nm steps — and every spectrum and cube carries it so that
//! operations mixing grids fail loudly rather than silently misalign bands.
//!
//! `.msc` layout: 8-byte ASCII magic `MSCUBE01`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then `bands * height * width` little-endian
//! `f32` values in band-sequential (BSQ) order, so a single band is a
//! contiguous plane.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of spectral bands in the system.
pub const BAND_COUNT: usize = 24;
/// First band center, nanometers.
pub const WAVELENGTH_MIN_NM: f64 = 450.0;
/// Band spacing, nanometers.
pub const WAVELENGTH_STEP_NM: f64 = 10.0;

const MSC_MAGIC: &[u8; 8] = b"MSCUBE01";

/// The fixed 24-point wavelength grid, 450..=680 nm in 10 nm steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    wavelengths_nm: [f64; BAND_COUNT],
}

impl SpectrumGrid {
    /// The one grid every spectrum and cube in the system lives on.
    pub fn standard() -> Self {
        let mut wavelengths_nm = [0.0; BAND_COUNT];
        for (k, w) in wavelengths_nm.iter_mut().enumerate() {
            *w = WAVELENGTH_MIN_NM + WAVELENGTH_STEP_NM * k as f64;
        }
        SpectrumGrid { wavelengths_nm }
    }

    pub fn wavelengths_nm(&self) -> &[f64; BAND_COUNT] {
        &self.wavelengths_nm
    }

    pub fn len(&self) -> usize {
        BAND_COUNT
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Band index of the grid point at `nm`, if `nm` is exactly on the grid.
    pub fn band_at(&self, nm: f64) -> Option<usize> {
        let k = (nm - WAVELENGTH_MIN_NM) / WAVELENGTH_STEP_NM;
        if k >= 0.0 && k.fract() == 0.0 && (k as usize) < BAND_COUNT {
            Some(k as usize)
        } else {
            None
        }
    }
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        SpectrumGrid::standard()
    }
}

/// A single reflectance spectrum on the standard grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceSpectrum {
    values: [f64; BAND_COUNT],
    grid: SpectrumGrid,
}

impl ReflectanceSpectrum {
    /// Wraps 24 finite reflectance values.
    pub fn new(values: [f64; BAND_COUNT], grid: SpectrumGrid) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spectrum value at band {k} is not finite"
            )));
        }
        Ok(ReflectanceSpectrum { values, grid })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; BAND_COUNT] = values.try_into().map_err(|_| {
            Error::InvalidInput(format!(
                "spectrum needs {BAND_COUNT} values, got {}",
                values.len()
            ))
        })?;
        Self::new(arr, SpectrumGrid::standard())
    }

    pub fn values(&self) -> &[f64; BAND_COUNT] {
        &self.values
    }

    pub fn grid(&self) -> &SpectrumGrid {
        &self.grid
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped01(&self) -> Self {
        let mut values = self.values;
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        ReflectanceSpectrum { values, grid: self.grid.clone() }
    }
}

/// Root mean square error between two spectra on the same grid.
pub fn rmse(a: &ReflectanceSpectrum, b: &ReflectanceSpectrum) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::InvalidInput(
            "rmse: spectra are on different wavelength grids".into(),
        ));
    }
    let mut acc = 0.0;
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        let d = x - y;
        acc += d * d;
    }
    Ok((acc / BAND_COUNT as f64).sqrt())
}

/// A width x height x 24 reflectance cube, stored band-major (BSQ) as `f32`
/// values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    width: usize,
    height: usize,
    grid: SpectrumGrid,
    data: Vec<f32>,
}

impl SpectralCube {
    /// Wraps BSQ data; `data.len()` must equal `width * height * 24` and all
    /// values must be finite and in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("cube dimensions must be non-zero".into()));
        }
        let expected = width * height * BAND_COUNT;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "cube data length {} does not match {width}x{height}x{BAND_COUNT} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "cube value at flat index {i} is outside [0, 1] or not finite ({})",
                data[i]
            )));
        }
        Ok(SpectralCube { width, height, grid: SpectrumGrid::standard(), data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        BAND_COUNT
    }

    pub fn grid(&self) -> &SpectrumGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Contiguous plane of band `k`, row-major.
    pub fn band(&self, k: usize) -> Result<&[f32]> {
        if k >= BAND_COUNT {
            return Err(Error::InvalidInput(format!(
                "band index {k} out of range 0..{BAND_COUNT}"
            )));
        }
        let plane = self.width * self.height;
        Ok(&self.data[k * plane..(k + 1) * plane])
    }

    /// The 24-band spectrum at pixel `(x, y)`.
    pub fn pixel_spectrum(&self, x: usize, y: usize) -> Result<ReflectanceSpectrum> {
        if x >= self.width || y >= self.height {
            return Err(Error::InvalidInput(format!(
                "pixel ({x}, {y}) out of {}x{} image",
                self.width, self.height
            )));
        }
        let plane = self.width * self.height;
        let mut values = [0.0; BAND_COUNT];
        for (k, v) in values.iter_mut().enumerate() {
            *v = self.data[k * plane + y * self.width + x] as f64;
        }
        ReflectanceSpectrum::new(values, self.grid.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    width: usize,
    height: usize,
    bands: usize,
    wavelengths_nm: Vec<f64>,
    dtype: String,
    layout: String,
}

/// Writes a cube in `.msc` format and returns the number of bytes written.
pub fn write_cube<W: Write>(cube: &SpectralCube, mut dest: W) -> Result<u64> {
    let header = CubeHeader {
        width: cube.width,
        height: cube.height,
        bands: BAND_COUNT,
        wavelengths_nm: cube.grid.wavelengths_nm().to_vec(),
        dtype: "f32le".into(),
        layout: "bsq".into(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("cube header serialization failed: {e}")))?;
    let io_err = |e| Error::Format(format!("cube write failed: {e}"));
    dest.write_all(MSC_MAGIC).map_err(io_err)?;
    dest.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
    dest.write_all(&header_bytes).map_err(io_err)?;
    let mut payload = Vec::with_capacity(cube.data.len() * 4);
    for v in &cube.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    dest.write_all(&payload).map_err(io_err)?;
    Ok(8 + 4 + header_bytes.len() as u64 + payload.len() as u64)
}

pub fn write_cube_file(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let n = write_cube(cube, &mut writer)?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

/// Reads a `.msc` cube, validating magic, header, payload size, and values.
pub fn read_cube<R: Read>(mut source: R) -> Result<SpectralCube> {
    let mut magic = [0u8; 8];
    source
        .read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("cube too short for magic: {e}")))?;
    if &magic != MSC_MAGIC {
        return Err(Error::Format(format!(
            "bad cube magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MSC_MAGIC)
        )));
    }
    let mut len_bytes = [0u8; 4];
    source
        .read_exact(&mut len_bytes)
        .map_err(|e| Error::Format(format!("cube too short for header length: {e}")))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 20 {
        return Err(Error::Format(format!("implausible cube header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len];
    source
        .read_exact(&mut header_bytes)
        .map_err(|e| Error::Format(format!("cube header truncated: {e}")))?;
    let header: CubeHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("cube header is not valid JSON: {e}")))?;

    if header.bands != BAND_COUNT {
        return Err(Error::Format(format!(
            "cube declares {} bands, this system uses {BAND_COUNT}",
            header.bands
        )));
    }
    let grid = SpectrumGrid::standard();
    if header.wavelengths_nm != grid.wavelengths_nm() {
        return Err(Error::Format("cube wavelength grid differs from the standard 450-680/10 nm grid".into()));
    }
    if header.dtype != "f32le" || header.layout != "bsq" {
        return Err(Error::Format(format!(
            "unsupported cube encoding dtype={} layout={}",
            header.dtype, header.layout
        )));
    }
    if header.width == 0 || header.height == 0 {
        return Err(Error::Format("cube header declares a zero dimension".into()));
    }

    let expected_values = header.width * header.height * BAND_COUNT;
    let mut payload = Vec::new();
    source
        .read_to_end(&mut payload)
        .map_err(|e| Error::Format(format!("cube payload read failed: {e}")))?;
    if payload.len() != expected_values * 4 {
        return Err(Error::Corruption(format!(
            "cube payload holds {} bytes but header implies {} ({}x{}x{} f32 values)",
            payload.len(),
            expected_values * 4,
            header.width,
            header.height,
            BAND_COUNT
        )));
    }
    let mut data = Vec::with_capacity(expected_values);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Corruption(format!(
            "cube payload value at flat index {i} is not finite"
        )));
    }
    if let Some(i) = data.iter().position(|v| *v < 0.0 || *v > 1.0) {
        return Err(Error::Corruption(format!(
            "cube payload value at flat index {i} is outside [0, 1] ({})",
            data[i]
        )));
    }
    SpectralCube::new(header.width, header.height, data)
}

pub fn read_cube_file(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_cube(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{rng_from_seed, uniform_f64};

    fn random_spectrum(seed: u64) -> ReflectanceSpectrum {
        let mut rng = rng_from_seed(seed);
        let mut values = [0.0; BAND_COUNT];
        for v in &mut values {
            *v = uniform_f64(&mut rng);
        }
        ReflectanceSpectrum::new(values, SpectrumGrid::standard()).unwrap()
    }

    fn random_cube(seed: u64, width: usize, height: usize) -> SpectralCube {
        let mut rng = rng_from_seed(seed);
        let data: Vec<f32> = (0..width * height * BAND_COUNT)
            .map(|_| uniform_f64(&mut rng) as f32)
            .collect();
        SpectralCube::new(width, height, data).unwrap()
    }

    #[test]
    fn grid_is_450_to_680_by_10() {
        let grid = SpectrumGrid::standard();
        assert_eq!(grid.len(), 24);
        for (k, w) in grid.wavelengths_nm().iter().enumerate() {
            assert_eq!(*w, 450.0 + 10.0 * k as f64);
        }
        assert_eq!(grid.wavelengths_nm()[23], 680.0);
        assert_eq!(grid.band_at(560.0), Some(11));
        assert_eq!(grid.band_at(555.0), None);
        assert_eq!(grid.band_at(690.0), None);
    }

    #[test]
    fn rmse_identity_is_zero() {
        let s = random_spectrum(1);
        assert_eq!(rmse(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn rmse_constant_offset() {
        let a = random_spectrum(2);
        let mut values = *a.values();
        for v in &mut values {
            *v += 0.1;
        }
        let b = ReflectanceSpectrum::new(values, SpectrumGrid::standard()).unwrap();
        assert!((rmse(&a, &b).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_elementwise_oracle() {
        let a = random_spectrum(3);
        let b = random_spectrum(4);
        // Independent oracle: accumulate the definition term by term.
        let mut sum_sq = 0.0;
        for k in 0..BAND_COUNT {
            sum_sq += (a.values()[k] - b.values()[k]).powi(2);
        }
        let expected = (sum_sq / 24.0).sqrt();
        assert!((rmse(&a, &b).unwrap() - expected).abs() <= 1e-12);
        assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
    }

    #[test]
    fn rmse_triangle_inequality_spot_check() {
        for seed in 0..20u64 {
            let a = random_spectrum(seed * 3);
            let b = random_spectrum(seed * 3 + 1);
            let c = random_spectrum(seed * 3 + 2);
            let ab = rmse(&a, &b).unwrap();
            let bc = rmse(&b, &c).unwrap();
            let ac = rmse(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn spectrum_rejects_non_finite() {
        let mut values = [0.5; BAND_COUNT];
        values[7] = f64::NAN;
        let err = ReflectanceSpectrum::new(values, SpectrumGrid::standard()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn cube_roundtrip_is_bit_exact() {
        let cube = random_cube(5, 2, 2);
        let mut buf = Vec::new();
        let n = write_cube(&cube, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        let back = read_cube(buf.as_slice()).unwrap();
        assert_eq!(back, cube);
        // Bitwise, not just approximately.
        for (a, b) in cube.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn cube_header_lists_standard_wavelengths() {
        let cube = random_cube(6, 3, 2);
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf).unwrap();
        let header_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[12..12 + header_len]).unwrap();
        let wl = header["wavelengths_nm"].as_array().unwrap();
        assert_eq!(wl.len(), 24);
        assert_eq!(wl[0].as_f64().unwrap(), 450.0);
        assert_eq!(wl[23].as_f64().unwrap(), 680.0);
        assert_eq!(header["bands"].as_u64().unwrap(), 24);
        assert_eq!(header["dtype"].as_str().unwrap(), "f32le");
        assert_eq!(header["layout"].as_str().unwrap(), "bsq");
    }

    #[test]
    fn cube_byte_count_formula() {
        let cube = random_cube(7, 5, 3);
        let mut buf = Vec::new();
        let n = write_cube(&cube, &mut buf).unwrap();
        let header_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as u64;
        assert_eq!(n, 8 + 4 + header_len + 4 * 5 * 3 * 24);
    }

    #[test]
    fn read_rejects_bad_magic() {
        let cube = random_cube(8, 2, 2);
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf).unwrap();
        buf[..8].copy_from_slice(b"XXXX0000");
        let err = read_cube(buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "got {err:?}");
    }

    #[test]
    fn read_rejects_truncated_payload() {
        let cube = random_cube(9, 2, 2);
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf).unwrap();
        buf.truncate(buf.len() - 4); // drop exactly one f32 value
        let err = read_cube(buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "got {err:?}");
    }

    #[test]
    fn read_rejects_non_finite_payload() {
        let cube = random_cube(10, 2, 2);
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf).unwrap();
        let tail = buf.len() - 4;
        buf[tail..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = read_cube(buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "got {err:?}");
    }

    #[test]
    fn read_rejects_wrong_band_count() {
        let cube = random_cube(11, 2, 2);
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf).unwrap();
        let header_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&buf[12..12 + header_len]).unwrap();
        header["bands"] = serde_json::json!(23);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut patched = Vec::new();
        patched.extend_from_slice(&buf[..8]);
        patched.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        patched.extend_from_slice(&new_header);
        patched.extend_from_slice(&buf[12 + header_len..]);
        let err = read_cube(patched.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "got {err:?}");
    }

    #[test]
    fn band_planes_partition_the_data() {
        let cube = random_cube(12, 4, 3);
        let mut reassembled = Vec::new();
        for k in 0..BAND_COUNT {
            reassembled.extend_from_slice(cube.band(k).unwrap());
        }
        assert_eq!(reassembled, cube.data());
        assert!(cube.band(24).is_err());
    }

    #[test]
    fn pixel_spectrum_reads_across_bands() {
        let cube = random_cube(13, 3, 2);
        let s = cube.pixel_spectrum(1, 1).unwrap();
        for k in 0..BAND_COUNT {
            assert_eq!(s.values()[k], cube.band(k).unwrap()[1 * 3 + 1] as f64);
        }
    }
}
