//! Datasets, CSV ingestion and fold partitions for cross-fitting.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One dataset: response, treatment, instrument block, covariate block and
/// the covariate column that carries the effect modifier `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    d: Vec<f64>,
    z: DMatrix<f64>,
    x: DMatrix<f64>,
    v_col: usize,
}

impl Sample {
    pub fn new(y: Vec<f64>, d: Vec<f64>, z: DMatrix<f64>, x: DMatrix<f64>, v_col: usize) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::TooFewObservations { needed: 2, got: n });
        }
        for got in [d.len(), z.nrows(), x.nrows()] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidParameter("at least one instrument column required".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidParameter("at least one covariate column required".into()));
        }
        if v_col >= x.ncols() {
            return Err(Error::InvalidParameter(format!(
                "V column {v_col} out of range for {} covariates",
                x.ncols()
            )));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("y"));
        }
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("d"));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("z"));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("x"));
        }
        Ok(Self { y, d, z, x, v_col })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn v_col(&self) -> usize {
        self.v_col
    }

    /// The effect modifier `V_i`, a column of `X`.
    pub fn v(&self) -> Vec<f64> {
        self.x.column(self.v_col).iter().copied().collect()
    }

    /// Instruments and covariates side by side, `(Z, X)`.
    pub fn zx(&self) -> DMatrix<f64> {
        let n = self.len();
        let (dz, p) = (self.z.ncols(), self.x.ncols());
        DMatrix::from_fn(n, dz + p, |i, j| if j < dz { self.z[(i, j)] } else { self.x[(i, j - dz)] })
    }

    /// Writes the sample as CSV with columns `y, d, z0.., x0..`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
        let mut header = vec!["y".to_string(), "d".to_string()];
        header.extend((0..self.z.ncols()).map(|j| format!("z{j}")));
        header.extend((0..self.x.ncols()).map(|j| format!("x{j}")));
        w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
        for i in 0..self.len() {
            let mut row = vec![self.y[i].to_string(), self.d[i].to_string()];
            row.extend(self.z.row(i).iter().map(|v| v.to_string()));
            row.extend(self.x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| io_error(path, e))
    }
}

fn io_error(path: &Path, e: impl fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// A column addressed by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    /// Parses `"3"` as an index and anything else as a header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }

    fn resolve(&self, header: &[String]) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < header.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::MissingColumn(format!("#{i}"))),
            ColumnRef::Name(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone())),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

/// Assignment of CSV columns to model roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub y: ColumnRef,
    pub d: ColumnRef,
    pub z: Vec<ColumnRef>,
    pub x: Vec<ColumnRef>,
    pub v: ColumnRef,
}

/// Reads a headered numeric CSV into a [`Sample`].
///
/// When the `V` column is not among the covariates it is appended to `X`,
/// so `V` is always a function of the covariates.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Sample> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let y_col = schema.y.resolve(&header)?;
    let d_col = schema.d.resolve(&header)?;
    if schema.z.is_empty() {
        return Err(Error::InvalidParameter("at least one Z column required".into()));
    }
    if schema.x.is_empty() {
        return Err(Error::InvalidParameter("at least one X column required".into()));
    }
    let z_cols = schema.z.iter().map(|c| c.resolve(&header)).collect::<Result<Vec<_>>>()?;
    let mut x_cols = schema.x.iter().map(|c| c.resolve(&header)).collect::<Result<Vec<_>>>()?;
    let v_src = schema.v.resolve(&header)?;

    // Every column may carry at most one role; V is allowed to coincide with X.
    let mut roles: Vec<(usize, &'static str)> = vec![(y_col, "Y"), (d_col, "D")];
    roles.extend(z_cols.iter().map(|&c| (c, "Z")));
    roles.extend(x_cols.iter().map(|&c| (c, "X")));
    if !x_cols.contains(&v_src) {
        roles.push((v_src, "V"));
    }
    for (a, &(ca, ra)) in roles.iter().enumerate() {
        for &(cb, rb) in &roles[a + 1..] {
            if ca == cb {
                return Err(Error::RoleConflict { column: header[ca].clone(), first: ra, second: rb });
            }
        }
    }
    let v_col = match x_cols.iter().position(|&c| c == v_src) {
        Some(pos) => pos,
        None => {
            x_cols.push(v_src);
            x_cols.len() - 1
        }
    };

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z_rows: Vec<f64> = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row = r + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::UnparsableNumeric { row, column: header[c].clone(), value: raw.to_string() }),
            }
        };
        y.push(cell(y_col)?);
        d.push(cell(d_col)?);
        for &c in &z_cols {
            z_rows.push(cell(c)?);
        }
        for &c in &x_cols {
            x_rows.push(cell(c)?);
        }
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let z = DMatrix::from_row_slice(n, z_cols.len(), &z_rows);
    let x = DMatrix::from_row_slice(n, x_cols.len(), &x_rows);
    Sample::new(y, d, z, x, v_col)
}

/// A random partition of `0..n` into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    folds: Vec<Vec<usize>>,
    n: usize,
    seed: u64,
}

impl FoldPartition {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }

    /// Indices outside fold `k`, in increasing order.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Fold label of every observation.
    pub fn fold_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (k, fold) in self.folds.iter().enumerate() {
            for &i in fold {
                out[i] = k;
            }
        }
        out
    }
}

/// Fisher-Yates shuffle of `0..n`, then consecutive chunks. The first
/// `n % k` folds get one extra element.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPartition> {
    if k < 2 || k > n {
        return Err(Error::InvalidFolds { k, n });
    }
    let mut rng = rng::seeded(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPartition { folds, n, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema(y: usize, d: usize, z: &[usize], x: &[usize], v: usize) -> ColumnSchema {
        ColumnSchema {
            y: ColumnRef::Index(y),
            d: ColumnRef::Index(d),
            z: z.iter().map(|&c| ColumnRef::Index(c)).collect(),
            x: x.iter().map(|&c| ColumnRef::Index(c)).collect(),
            v: ColumnRef::Index(v),
        }
    }

    #[test]
    fn loads_three_rows() {
        let f = write_file("y,d,z,x\n1,2,3,4\n5,6,7,8\n9,10,11,12\n");
        let s = load_csv(f.path(), &schema(0, 1, &[2], &[3], 3)).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.v_col(), 0);
        assert_eq!(s.y(), &[1.0, 5.0, 9.0]);
        assert_eq!(s.v(), vec![4.0, 8.0, 12.0]);
    }

    #[test]
    fn na_cell_is_rejected_with_position() {
        let f = write_file("y,d,z,x\n1,2,3,4\n5,NA,7,8\n");
        let err = load_csv(f.path(), &schema(0, 1, &[2], &[3], 3)).unwrap_err();
        assert_eq!(err, Error::UnparsableNumeric { row: 2, column: "d".into(), value: "NA".into() });
        assert!(err.to_string().starts_with("unparsable numeric at row 2, column d"));
    }

    #[test]
    fn v_outside_x_is_appended() {
        let f = write_file("y,d,z,x,v\n1,2,3,4,0.5\n5,6,7,8,0.25\n");
        let s = load_csv(f.path(), &schema(0, 1, &[2], &[3], 4)).unwrap();
        assert_eq!(s.x().ncols(), 2);
        assert_eq!(s.v_col(), 1);
        assert_eq!(s.v(), vec![0.5, 0.25]);
    }

    #[test]
    fn named_columns_resolve() {
        let f = write_file("wage,educ,near,exper\n1,2,3,4\n5,6,7,8\n");
        let schema = ColumnSchema {
            y: ColumnRef::parse("wage"),
            d: ColumnRef::parse("educ"),
            z: vec![ColumnRef::parse("near")],
            x: vec![ColumnRef::parse("exper")],
            v: ColumnRef::parse("exper"),
        };
        let s = load_csv(f.path(), &schema).unwrap();
        assert_eq!(s.d(), &[2.0, 6.0]);
    }

    #[test]
    fn distinct_errors() {
        let f = write_file("y,d,z,x\n1,2,3,4\n5,6,7,8\n");
        assert!(matches!(
            load_csv(f.path(), &schema(0, 1, &[9], &[3], 3)),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            load_csv(f.path(), &schema(0, 0, &[2], &[3], 3)),
            Err(Error::RoleConflict { .. })
        ));
        assert!(matches!(
            load_csv(f.path(), &schema(0, 1, &[2], &[2], 2)),
            Err(Error::RoleConflict { .. })
        ));
        let one = write_file("y,d,z,x\n1,2,3,4\n");
        assert!(matches!(
            load_csv(one.path(), &schema(0, 1, &[2], &[3], 3)),
            Err(Error::TooFewObservations { got: 1, .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let y = vec![0.1, -1e-300, std::f64::consts::PI];
        let d = vec![1.0 / 3.0, 2.5e17, -0.0];
        let z = DMatrix::from_row_slice(3, 1, &[f64::MIN_POSITIVE, 7.0, -2.0 / 7.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1e-7, 2.0, 3.0, 4.0, 5.0, f64::MAX]);
        let s = Sample::new(y, d, z, x, 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        s.write_csv(f.path()).unwrap();
        let back = load_csv(f.path(), &schema(0, 1, &[2], &[3, 4], 4)).unwrap();
        for (a, b) in s.y().iter().zip(back.y()).chain(s.d().iter().zip(back.d())) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(s.x(), back.x());
        assert_eq!(s.z(), back.z());
    }

    #[test]
    fn equal_folds_when_divisible() {
        let p = make_folds(10, 5, 42).unwrap();
        assert!(p.folds().iter().all(|f| f.len() == 2));
    }

    #[test]
    fn near_equal_folds() {
        let p = make_folds(10, 3, 42).unwrap();
        let mut sizes: Vec<usize> = p.folds().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn folds_are_deterministic() {
        assert_eq!(make_folds(10, 5, 9).unwrap(), make_folds(10, 5, 9).unwrap());
        assert_ne!(make_folds(100, 5, 9).unwrap(), make_folds(100, 5, 10).unwrap());
    }

    #[test]
    fn invalid_fold_counts() {
        assert_eq!(make_folds(10, 1, 0), Err(Error::InvalidFolds { k: 1, n: 10 }));
        assert_eq!(make_folds(3, 4, 0), Err(Error::InvalidFolds { k: 4, n: 3 }));
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_and_disjoint(n in 2usize..300, k_raw in 2usize..20, seed: u64) {
            let k = k_raw.min(n);
            let p = make_folds(n, k, seed).unwrap();
            let mut seen = vec![0u32; n];
            for fold in p.folds() {
                for &i in fold {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = p.folds().iter().map(Vec::len).collect();
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            let fold_of = p.fold_of();
            for (k, fold) in p.folds().iter().enumerate() {
                prop_assert!(fold.iter().all(|&i| fold_of[i] == k));
            }
        }
    }
}
