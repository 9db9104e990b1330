//! Camera calibration: fitting the 3(+bias)->24 transformation matrix from
//! color-checker patches by regularized Wiener estimation, applying it to
//! single RGB triples, and validating it against a holdout patch set.
//!
//! The fit uses the correlation form: with `c_k` the (optionally 1-augmented)
//! RGB response of patch `k` and `r_k` its reference spectrum, the matrix is
//!
//! ```text
//! M = R_rc (R_cc + lambda I)^-1,   R_rc = sum r_k c_k^T,   R_cc = sum c_k c_k^T
//! ```
//!
//! which minimizes `sum_k ||r_k - M c_k||^2 + lambda ||M||_F^2`. Correlation
//! matrices are accumulated in f64 over patches sorted into a canonical order
//! (by id, then raw value bits), so the fitted matrix is bitwise independent
//! of the order patches arrive in.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{rmse, ReflectanceSpectrum, SpectrumGrid, BAND_COUNT};
use crate::util::sha256_hex;

/// One calibration patch: a linear-light RGB response and its reference
/// reflectance spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPatch {
    pub id: String,
    pub rgb_linear: [f64; 3],
    pub reference: ReflectanceSpectrum,
}

impl ColorPatch {
    pub fn new(id: impl Into<String>, rgb_linear: [f64; 3], reference: ReflectanceSpectrum) -> Result<Self> {
        let id = id.into();
        for (c, v) in rgb_linear.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "patch {id:?}: rgb channel {c} is {v}, expected a finite value in [0, 1]"
                )));
            }
        }
        Ok(ColorPatch { id, rgb_linear, reference })
    }
}

/// The Wiener-estimated linear map from camera RGB to a 24-band spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationMatrix {
    /// 24 rows of `cols()` entries, row-major.
    rows: Vec<f64>,
    bias: bool,
    lambda: f64,
    grid: SpectrumGrid,
    training_rmse: f64,
}

impl TransformationMatrix {
    pub fn cols(&self) -> usize {
        3 + usize::from(self.bias)
    }

    pub fn bias(&self) -> bool {
        self.bias
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &SpectrumGrid {
        &self.grid
    }

    pub fn training_rmse(&self) -> f64 {
        self.training_rmse
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let c = self.cols();
        &self.rows[k * c..(k + 1) * c]
    }

    /// Applies the linear map without clamping: `M . augment(rgb)`.
    pub fn apply(&self, rgb: [f64; 3]) -> [f64; BAND_COUNT] {
        let mut out = [0.0; BAND_COUNT];
        let c = self.cols();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.rows[k * c..(k + 1) * c];
            let mut acc = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
            if self.bias {
                acc += row[3];
            }
            *o = acc;
        }
        out
    }

    /// Short content hash used to stamp reconstructions with the matrix that
    /// produced them.
    pub fn checksum(&self) -> String {
        let json = self.to_json_string().expect("matrix serialization is infallible");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = MatrixFile {
            version: 1,
            bias: self.bias,
            lambda: self.lambda,
            wavelengths_nm: self.grid.wavelengths_nm().to_vec(),
            rows: (0..BAND_COUNT).map(|k| self.row(k).to_vec()).collect(),
            training_rmse: self.training_rmse,
        };
        serde_json::to_string(&file)
            .map_err(|e| Error::Format(format!("matrix serialization failed: {e}")))
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: MatrixFile = serde_json::from_str(json)
            .map_err(|e| Error::Format(format!("matrix JSON parse failed: {e}")))?;
        if file.version != 1 {
            return Err(Error::Format(format!(
                "unsupported matrix file version {}",
                file.version
            )));
        }
        let grid = SpectrumGrid::standard();
        if file.wavelengths_nm != grid.wavelengths_nm() {
            return Err(Error::Format(
                "matrix wavelength grid differs from the standard grid".into(),
            ));
        }
        let cols = 3 + usize::from(file.bias);
        if file.rows.len() != BAND_COUNT {
            return Err(Error::Format(format!(
                "matrix has {} rows, expected {BAND_COUNT}",
                file.rows.len()
            )));
        }
        let mut rows = Vec::with_capacity(BAND_COUNT * cols);
        for (k, row) in file.rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Format(format!(
                    "matrix row {k} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corruption(format!("matrix row {k} holds a non-finite entry")));
            }
            rows.extend_from_slice(row);
        }
        if !file.lambda.is_finite() || file.lambda < 0.0 {
            return Err(Error::Format(format!("matrix lambda {} is invalid", file.lambda)));
        }
        Ok(TransformationMatrix {
            rows,
            bias: file.bias,
            lambda: file.lambda,
            grid,
            training_rmse: file.training_rmse,
        })
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = self.to_json_string()?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json)
    }

    /// Builds a matrix directly from rows. Mostly useful for fixtures.
    pub fn from_rows(rows: Vec<Vec<f64>>, bias: bool, lambda: f64) -> Result<Self> {
        let cols = 3 + usize::from(bias);
        if rows.len() != BAND_COUNT {
            return Err(Error::InvalidInput(format!(
                "matrix needs {BAND_COUNT} rows, got {}",
                rows.len()
            )));
        }
        let mut flat = Vec::with_capacity(BAND_COUNT * cols);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "matrix row {k} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("matrix row {k} holds a non-finite entry")));
            }
            flat.extend_from_slice(row);
        }
        Ok(TransformationMatrix {
            rows: flat,
            bias,
            lambda,
            grid: SpectrumGrid::standard(),
            training_rmse: f64::NAN,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixFile {
    version: u32,
    bias: bool,
    lambda: f64,
    wavelengths_nm: Vec<f64>,
    rows: Vec<Vec<f64>>,
    training_rmse: f64,
}

/// Per-patch and aggregate reconstruction error of a matrix on a patch set.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub per_patch_rmse: Vec<(String, f64)>,
    pub mean_rmse: f64,
    pub max_rmse: f64,
}

/// The default ridge weight: `1e-6 * trace(R_cc) / cols`.
pub fn default_lambda(train: &[ColorPatch], bias: bool) -> f64 {
    let cols = 3 + usize::from(bias);
    let mut trace = 0.0;
    for p in train {
        for c in 0..3 {
            trace += p.rgb_linear[c] * p.rgb_linear[c];
        }
        if bias {
            trace += 1.0;
        }
    }
    1e-6 * trace / cols as f64
}

/// Fits the transformation matrix by regularized Wiener estimation.
pub fn wiener_fit(train: &[ColorPatch], lambda: f64, bias: bool) -> Result<TransformationMatrix> {
    let cols = 3 + usize::from(bias);
    if train.len() < cols {
        return Err(Error::InvalidInput(format!(
            "wiener fit needs at least {cols} patches (bias={bias}), got {}",
            train.len()
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }

    // Canonical accumulation order: permuting the input never changes the sum.
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = &train[a];
        let pb = &train[b];
        pa.id
            .cmp(&pb.id)
            .then_with(|| {
                pa.rgb_linear
                    .iter()
                    .map(|v| v.to_bits())
                    .cmp(pb.rgb_linear.iter().map(|v| v.to_bits()))
            })
            .then_with(|| {
                pa.reference
                    .values()
                    .iter()
                    .map(|v| v.to_bits())
                    .cmp(pb.reference.values().iter().map(|v| v.to_bits()))
            })
    });

    let mut r_cc = vec![0.0; cols * cols];
    let mut r_rc = vec![0.0; BAND_COUNT * cols];
    let mut c = [0.0; 4];
    for &idx in &order {
        let p = &train[idx];
        c[..3].copy_from_slice(&p.rgb_linear);
        if bias {
            c[3] = 1.0;
        }
        for i in 0..cols {
            for j in 0..cols {
                r_cc[i * cols + j] += c[i] * c[j];
            }
        }
        for (k, r) in p.reference.values().iter().enumerate() {
            for j in 0..cols {
                r_rc[k * cols + j] += r * c[j];
            }
        }
    }

    let mut a = r_cc.clone();
    for i in 0..cols {
        a[i * cols + i] += lambda;
    }

    // M row k solves (R_cc + lambda I) m_k = R_rc row k (the system is
    // symmetric, so no transpose is needed).
    let lu = LuFactors::factor(&a, cols).ok_or_else(|| {
        Error::Degenerate(
            "normal equations are singular to machine precision; refit with a larger lambda"
                .into(),
        )
    })?;
    let mut rows = vec![0.0; BAND_COUNT * cols];
    for k in 0..BAND_COUNT {
        let solved = lu.solve(&r_rc[k * cols..(k + 1) * cols]);
        rows[k * cols..(k + 1) * cols].copy_from_slice(&solved);
    }

    let mut matrix = TransformationMatrix {
        rows,
        bias,
        lambda,
        grid: SpectrumGrid::standard(),
        training_rmse: 0.0,
    };
    let mut total = 0.0;
    for &idx in &order {
        let p = &train[idx];
        let rec = reconstruct_spectrum(&matrix, p.rgb_linear)?;
        total += rmse(&rec, &p.reference)?;
    }
    matrix.training_rmse = total / train.len() as f64;
    Ok(matrix)
}

/// Reconstructs a 24-band spectrum from one RGB triple, clamping to `[0, 1]`.
pub fn reconstruct_spectrum(
    m: &TransformationMatrix,
    rgb: [f64; 3],
) -> Result<ReflectanceSpectrum> {
    if rgb.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("rgb {rgb:?} holds a non-finite channel")));
    }
    let raw = m.apply(rgb);
    ReflectanceSpectrum::new(raw, m.grid.clone()).map(|s| s.clamped01())
}

/// Scores a matrix against a holdout patch set by per-patch RMSE.
pub fn validate_calibration(
    m: &TransformationMatrix,
    holdout: &[ColorPatch],
) -> Result<CalibrationReport> {
    if holdout.is_empty() {
        return Err(Error::InvalidInput("validation needs at least one patch".into()));
    }
    let mut per_patch_rmse = Vec::with_capacity(holdout.len());
    let mut total = 0.0;
    let mut max = 0.0f64;
    for p in holdout {
        let rec = reconstruct_spectrum(m, p.rgb_linear)?;
        let e = rmse(&rec, &p.reference)?;
        total += e;
        max = max.max(e);
        per_patch_rmse.push((p.id.clone(), e));
    }
    Ok(CalibrationReport {
        mean_rmse: total / holdout.len() as f64,
        max_rmse: max,
        per_patch_rmse,
    })
}

/// LU factorization with partial pivoting for the small (<= 4x4) normal
/// equations.
struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    fn factor(a: &[f64], n: usize) -> Option<Self> {
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = lu[col * n + col].abs();
            for row in col + 1..n {
                let v = lu[row * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val <= 1e-13 * scale {
                return None;
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for j in col + 1..n {
                    lu[row * n + j] -= factor * lu[col * n + j];
                }
            }
        }
        Some(LuFactors { n, lu, perm })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Patch CSV: header `id,r,g,b,R450,R460,...,R680`.
// ---------------------------------------------------------------------------

fn expected_csv_header() -> Vec<String> {
    let mut header = vec!["id".to_string(), "r".into(), "g".into(), "b".into()];
    let grid = SpectrumGrid::standard();
    for w in grid.wavelengths_nm() {
        header.push(format!("R{}", *w as u32));
    }
    header
}

pub fn read_patch_csv<R: Read>(reader: R) -> Result<Vec<ColorPatch>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = csv_reader
        .headers()
        .map_err(|e| Error::Format(format!("patch CSV header unreadable: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = expected_csv_header();
    if header != expected {
        return Err(Error::Format(format!(
            "patch CSV header mismatch: expected {:?}..., got {:?}...",
            &expected[..5.min(expected.len())],
            &header[..5.min(header.len())]
        )));
    }
    let mut patches = Vec::new();
    for (line, record) in csv_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("patch CSV record {line}: {e}")))?;
        if record.len() != 4 + BAND_COUNT {
            return Err(Error::Format(format!(
                "patch CSV record {line} has {} fields, expected {}",
                record.len(),
                4 + BAND_COUNT
            )));
        }
        let id = record[0].to_string();
        let parse = |field: &str, what: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|e| {
                Error::Format(format!("patch {id:?}: {what} value {field:?} unparsable: {e}"))
            })
        };
        let rgb = [
            parse(&record[1], "r")?,
            parse(&record[2], "g")?,
            parse(&record[3], "b")?,
        ];
        let mut values = [0.0; BAND_COUNT];
        for (k, v) in values.iter_mut().enumerate() {
            *v = parse(&record[4 + k], "reflectance")?;
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::Format(format!(
                    "patch {id:?}: reflectance band {k} is {v}, expected [0, 1]"
                )));
            }
        }
        let spectrum = ReflectanceSpectrum::new(values, SpectrumGrid::standard())?;
        patches.push(ColorPatch::new(id, rgb, spectrum)?);
    }
    Ok(patches)
}

pub fn read_patch_csv_file(path: impl AsRef<Path>) -> Result<Vec<ColorPatch>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_patch_csv(BufReader::new(file))
}

pub fn write_patch_csv<W: Write>(patches: &[ColorPatch], writer: W) -> Result<()> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    csv_writer
        .write_record(expected_csv_header())
        .map_err(|e| Error::Format(format!("patch CSV write failed: {e}")))?;
    for p in patches {
        let mut record = vec![p.id.clone()];
        for c in p.rgb_linear {
            record.push(format!("{c}"));
        }
        for v in p.reference.values() {
            record.push(format!("{v}"));
        }
        csv_writer
            .write_record(&record)
            .map_err(|e| Error::Format(format!("patch CSV write failed: {e}")))?;
    }
    csv_writer
        .flush()
        .map_err(|e| Error::Format(format!("patch CSV flush failed: {e}")))?;
    Ok(())
}

pub fn write_patch_csv_file(patches: &[ColorPatch], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_patch_csv(patches, BufWriter::new(file))
}
