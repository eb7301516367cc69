//! Embedding matrices, proxy sets and label vectors, plus their on-disk
//! encoding.
//!
//! Matrix files start with the 8-byte magic `INMAPEM1`, followed by `rows`
//! and `cols` as little-endian `u32`, a dtype byte (`1` = binary32 LE), three
//! zero pad bytes and then `rows * cols` row-major values. Label files use the
//! magic `INMAPLB1`, a little-endian `u32` count and that many `u32` class
//! indices.
//!
//! Values are held as `f64` in memory and narrowed to binary32 on save, so a
//! matrix whose entries are all representable as `f32` survives a round trip
//! bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"INMAPEM1";
pub const LABEL_MAGIC: &[u8; 8] = b"INMAPLB1";
pub const DTYPE_F32: u8 = 1;
pub const MATRIX_HEADER_LEN: usize = 20;
pub const LABEL_HEADER_LEN: usize = 12;

/// Files below this size that lack the binary magic are parsed as CSV.
pub const CSV_FALLBACK_LIMIT: u64 = 10 * 1024 * 1024;

/// Rows with a smaller L2 norm cannot be rescaled onto the unit sphere.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance on row norms for values that are meant to be unit length.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Dense row-major feature matrix, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Empty(format!(
                "matrix must have at least one row and column, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, col {}",
                pos / data.ncols(),
                pos % data.ncols()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Divides every row by its L2 norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut data = self.data.clone();
        normalize_rows_in_place(&mut data)?;
        Ok(Self { data })
    }

    /// Largest deviation of a row norm from one.
    pub fn max_unit_deviation(&self) -> f64 {
        max_unit_deviation(self.data.view())
    }
}

pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    m.normalize_rows()
}

pub(crate) fn normalize_rows_in_place(data: &mut Array2<f64>) -> Result<()> {
    for (i, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateRow { row: i, norm });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}

pub(crate) fn max_unit_deviation(data: ArrayView2<'_, f64>) -> f64 {
    data.axis_iter(Axis(0))
        .map(|row| (row.dot(&row).sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Unit-norm class proxies, row `j` belonging to class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySet {
    data: Array2<f64>,
}

impl ProxySet {
    /// Wraps rows that are already unit length.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let m = EmbeddingMatrix::new(data)?;
        Self::from_matrix(m)
    }

    pub fn from_matrix(m: EmbeddingMatrix) -> Result<Self> {
        if m.rows() < 2 {
            return Err(Error::Data(format!(
                "a proxy set needs at least 2 classes, got {}",
                m.rows()
            )));
        }
        for (j, row) in m.data.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Data(format!(
                    "proxy {j} has norm {norm}, expected unit length"
                )));
            }
        }
        Ok(Self { data: m.data })
    }

    /// Rescales every row to unit length, then wraps it.
    pub fn normalized(data: Array2<f64>) -> Result<Self> {
        let m = EmbeddingMatrix::new(data)?.normalize_rows()?;
        Self::from_matrix(m)
    }

    pub(crate) fn from_unit_rows_unchecked(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn classes(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.data.row(j)
    }

    pub fn to_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            data: self.data.clone(),
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// One class index per example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("label vector has no entries".into()));
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Checks every index against a class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.0.iter().enumerate().find(|(_, &y)| y >= classes) {
            Some((index, &value)) => Err(Error::LabelRange {
                index,
                value,
                classes,
            }),
            None => Ok(()),
        }
    }
}

pub fn save_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    save_array(m.view(), path)
}

pub fn save_proxies(w: &ProxySet, path: impl AsRef<Path>) -> Result<()> {
    save_array(w.view(), path)
}

/// Writes any 2-D array in the matrix format; used for label distributions too.
pub fn save_array(data: ArrayView2<'_, f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = data.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Data(format!("{rows} rows exceed u32")))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Data(format!("{cols} cols exceed u32")))?;

    let mut buf = Vec::with_capacity(MATRIX_HEADER_LEN + rows * cols * 4);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&rows32.to_le_bytes());
    buf.extend_from_slice(&cols32.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&[0, 0, 0]);
    for &v in data.iter() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::Data(format!("value {v} is not representable as binary32")));
        }
        buf.extend_from_slice(&narrowed.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a matrix file exactly as stored; no normalization is applied.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        return decode_matrix(path, &bytes);
    }
    if (bytes.len() as u64) < CSV_FALLBACK_LIMIT && looks_like_text(&bytes) {
        return parse_csv_matrix(path, &bytes);
    }
    Err(Error::Format {
        path: path.to_owned(),
        reason: "missing INMAPEM1 magic".into(),
    })
}

fn looks_like_text(bytes: &[u8]) -> bool {
    !bytes.is_empty()
        && bytes
            .iter()
            .all(|b| b.is_ascii_graphic() || b.is_ascii_whitespace())
}

fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let format_err = |reason: String| Error::Format {
        path: path.to_owned(),
        reason,
    };
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(Error::Truncation {
            path: path.to_owned(),
            expected: MATRIX_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let dtype = bytes[16];
    if dtype != DTYPE_F32 {
        return Err(format_err(format!("unsupported dtype code {dtype}")));
    }
    if bytes[17..20] != [0, 0, 0] {
        return Err(format_err("nonzero header padding".into()));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(format!("declared shape {rows}x{cols} overflows")))?;
    let payload = &bytes[MATRIX_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncation {
            path: path.to_owned(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(format_err(format!(
            "{} trailing bytes after {rows}x{cols} payload",
            payload.len() - expected
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    EmbeddingMatrix::from_rows(rows, cols, values)
}

fn parse_csv_matrix(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let format_err = |reason: String| Error::Format {
        path: path.to_owned(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut records = reader.records();

    let header = records
        .next()
        .ok_or_else(|| format_err("empty CSV".into()))?
        .map_err(|e| format_err(e.to_string()))?;
    if header.len() != 2 {
        return Err(format_err("CSV header must be \"n,d\"".into()));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(format!("bad CSV dimension {s:?}")))
    };
    let rows = parse_dim(&header[0])?;
    let cols = parse_dim(&header[1])?;

    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for record in records {
        let record = record.map_err(|e| format_err(e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != cols {
            return Err(format_err(format!(
                "CSV row {seen} has {} fields, expected {cols}",
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| format_err(format!("bad CSV value {field:?}")))?;
            values.push(v);
        }
        seen += 1;
    }
    if seen < rows {
        return Err(Error::Truncation {
            path: path.to_owned(),
            expected: rows,
            found: seen,
        });
    }
    if seen > rows {
        return Err(format_err(format!("{seen} CSV rows, header declares {rows}")));
    }
    EmbeddingMatrix::from_rows(rows, cols, values)
}

pub fn save_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(labels.len())
        .map_err(|_| Error::Data(format!("{} labels exceed u32", labels.len())))?;
    let mut buf = Vec::with_capacity(LABEL_HEADER_LEN + labels.len() * 4);
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    for &y in labels.as_slice() {
        let y = u32::try_from(y).map_err(|_| Error::Data(format!("label {y} exceeds u32")))?;
        buf.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(LABEL_MAGIC) {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: "missing INMAPLB1 magic".into(),
        });
    }
    if bytes.len() < LABEL_HEADER_LEN {
        return Err(Error::Truncation {
            path: path.to_owned(),
            expected: LABEL_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n = read_u32(&bytes, 8) as usize;
    let payload = &bytes[LABEL_HEADER_LEN..];
    if payload.len() < n * 4 {
        return Err(Error::Truncation {
            path: path.to_owned(),
            expected: n * 4,
            found: payload.len(),
        });
    }
    if payload.len() > n * 4 {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("{} trailing bytes after {n} labels", payload.len() - n * 4),
        });
    }
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    LabelVector::new(labels)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn loads_identity_payload() {
        let dir = tmp();
        let path = dir.path().join("m.bin");
        let mut bytes = MATRIX_MAGIC.to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 0, 0, 0]);
        for v in [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let m = load_matrix(&path).unwrap();
        assert_eq!(m.view(), array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn single_value_file_size() {
        let dir = tmp();
        let path = dir.path().join("one.bin");
        let m = EmbeddingMatrix::new(array![[0.5]]).unwrap();
        save_matrix(&m, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), (MATRIX_HEADER_LEN + 4) as u64);
        assert_eq!(load_matrix(&path).unwrap(), m);
    }

    #[test]
    fn short_payload_is_truncation() {
        let dir = tmp();
        let path = dir.path().join("short.bin");
        let m = EmbeddingMatrix::new(Array2::from_elem((4, 2), 0.25)).unwrap();
        save_matrix(&m, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Truncation { .. })));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let dir = tmp();
        let path = dir.path().join("bad.bin");
        fs::write(&path, [0xffu8; 40]).unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Format { .. })));

        let m = EmbeddingMatrix::new(array![[1.0, 2.0]]).unwrap();
        save_matrix(&m, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[16] = 2;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let dir = tmp();
        let path = dir.path().join("nan.bin");
        let m = EmbeddingMatrix::new(array![[1.0, 2.0]]).unwrap();
        save_matrix(&m, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Data(_))));
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let m = EmbeddingMatrix::new(array![[1.0]]).unwrap();
        let err = save_matrix(&m, "/nonexistent-dir/sub/m.bin").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_fallback() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        fs::write(&path, "2,3\n1,0,0\n0,0.5,0\n").unwrap();
        let m = load_matrix(&path).unwrap();
        assert_eq!(m.view(), array![[1.0, 0.0, 0.0], [0.0, 0.5, 0.0]]);

        fs::write(&path, "3,3\n1,0,0\n0,0.5,0\n").unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Truncation { .. })));
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::new(array![[3.0, 4.0]]).unwrap();
        let n = m.normalize_rows().unwrap();
        assert!((n.view()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((n.view()[[0, 1]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_reports_zero_row() {
        let m = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        match m.normalize_rows() {
            Err(Error::DegenerateRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_round_trip_and_validate() {
        let dir = tmp();
        let path = dir.path().join("y.bin");
        let y = LabelVector::new(vec![0, 2, 1]).unwrap();
        save_labels(&y, &path).unwrap();
        let back = load_labels(&path).unwrap();
        assert_eq!(back.as_slice(), &[0, 2, 1]);
        back.validate(3).unwrap();

        let bad = LabelVector::new(vec![0, 7, 1]).unwrap();
        assert!(matches!(
            bad.validate(3),
            Err(Error::LabelRange { index: 1, value: 7, classes: 3 })
        ));
    }

    #[test]
    fn empty_label_file() {
        let dir = tmp();
        let path = dir.path().join("empty.bin");
        let mut bytes = LABEL_MAGIC.to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_labels(&path), Err(Error::Empty(_))));
    }

    #[test]
    fn proxy_set_rejects_single_class_and_non_unit() {
        assert!(ProxySet::new(array![[1.0, 0.0]]).is_err());
        assert!(ProxySet::new(array![[1.0, 0.0], [0.5, 0.0]]).is_err());
        assert!(ProxySet::new(array![[1.0, 0.0], [0.0, 1.0]]).is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in proptest::collection::vec(any::<f32>(), 36),
        ) {
            let values: Vec<f64> = seed
                .iter()
                .take(rows * cols)
                .map(|&v| if v.is_finite() { v as f64 } else { 0.0 })
                .collect();
            let m = EmbeddingMatrix::from_rows(rows, cols, values).unwrap();
            let dir = tmp();
            let path = dir.path().join("r.bin");
            save_matrix(&m, &path).unwrap();
            let back = load_matrix(&path).unwrap();
            for (a, b) in m.view().iter().zip(back.view().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn normalize_is_idempotent(values in proptest::collection::vec(-10.0f64..10.0, 12)) {
            prop_assume!(values.chunks(3).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
            let m = EmbeddingMatrix::from_rows(4, 3, values).unwrap();
            let once = m.normalize_rows().unwrap();
            let twice = once.normalize_rows().unwrap();
            prop_assert!(once.max_unit_deviation() < 1e-12);
            for (a, b) in once.view().iter().zip(twice.view().iter()) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
