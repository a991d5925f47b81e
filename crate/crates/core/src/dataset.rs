//! Supervised data, acquisition costs, splits and the CUBE generator.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TafaError};

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TafaError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TafaError::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, j))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-column affine scaling `(raw - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Scaling {
    pub fn identity(dim: usize) -> Self {
        Scaling {
            means: vec![0.0; dim],
            scales: vec![1.0; dim],
        }
    }

    /// Column means and population standard deviations. A constant column
    /// gets scale 1 so it maps to zeros instead of NaN.
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows() as f64;
        let mut means = Vec::with_capacity(features.cols());
        let mut scales = Vec::with_capacity(features.cols());
        for j in 0..features.cols() {
            let mean = features.column(j).sum::<f64>() / n;
            let var = features.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Scaling { means, scales }
    }

    #[inline]
    pub fn apply_value(&self, feature: usize, raw: f64) -> f64 {
        (raw - self.means[feature]) / self.scales[feature]
    }

    pub fn apply_row(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, &v)| self.apply_value(j, v))
            .collect()
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.scales[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label values in dense-index order.
    pub class_names: Vec<String>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n_classes = class_names.len();
        if features.rows() == 0 {
            return Err(TafaError::invalid("dataset has no rows"));
        }
        if features.cols() < 2 {
            return Err(TafaError::invalid("dataset needs at least 2 features"));
        }
        if labels.len() != features.rows() {
            return Err(TafaError::DimensionMismatch {
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if feature_names.len() != features.cols() {
            return Err(TafaError::DimensionMismatch {
                expected: features.cols(),
                actual: feature_names.len(),
            });
        }
        if n_classes == 0 || labels.iter().any(|&y| y >= n_classes) {
            return Err(TafaError::invalid("labels must lie in [0, n_classes)"));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(TafaError::invalid("features must be finite"));
        }
        Ok(Dataset {
            features,
            labels,
            feature_names,
            class_names,
            n_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            n_classes: self.n_classes,
        }
    }

    /// Standardized copy plus the statistics used to produce it.
    pub fn standardized(&self) -> (Dataset, Scaling) {
        let scaling = Scaling::fit(&self.features);
        let mut out = self.clone();
        out.features = scaling.apply(&self.features);
        (out, scaling)
    }

    /// Writes the dataset as CSV with the label in a trailing `label_column`.
    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(label_column.to_string());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.class_names[self.labels[i]].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub costs: Vec<f64>,
}

impl CostModel {
    pub fn uniform(dim: usize, cost: f64) -> Self {
        CostModel {
            costs: vec![cost; dim],
        }
    }

    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(TafaError::invalid("costs must be finite and nonnegative"));
        }
        Ok(CostModel { costs })
    }

    #[inline]
    pub fn cost(&self, feature: usize) -> f64 {
        self.costs[feature]
    }

    /// The cost of the termination action.
    pub fn terminate_cost(&self) -> f64 {
        0.0
    }

    pub fn total<'a>(&self, features: impl IntoIterator<Item = &'a usize>) -> f64 {
        features.into_iter().map(|&d| self.costs[d]).sum()
    }

    pub fn dim(&self) -> usize {
        self.costs.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, feature_names: &[String]) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "feature,cost")?;
        for (name, c) in feature_names.iter().zip(&self.costs) {
            writeln!(f, "{name},{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Number of classes and features in the CUBE benchmark.
pub const CUBE_CLASSES: usize = 8;
pub const CUBE_FEATURES: usize = 20;

/// Feature `j` of the informative block of `class`, with wraparound.
pub fn cube_block(class: usize) -> [usize; 3] {
    [
        class % CUBE_FEATURES,
        (class + 1) % CUBE_FEATURES,
        (class + 2) % CUBE_FEATURES,
    ]
}

/// Generates the CUBE dataset: 20 features, 8 classes. For a row of class
/// `c`, features `c, c+1, c+2` are normal with means given by the bits of
/// `c` (most significant first) and std `sigma`; all other features are
/// uniform on [0, 1].
pub fn generate_cube(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n < CUBE_CLASSES {
        return Err(TafaError::invalid(format!("cube needs n >= 8, got {n}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(TafaError::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * CUBE_FEATURES);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..CUBE_CLASSES);
        let mut row: Vec<f64> = (0..CUBE_FEATURES).map(|_| rng.random::<f64>()).collect();
        for (j, &d) in cube_block(c).iter().enumerate() {
            let bit = ((c >> (2 - j)) & 1) as f64;
            let noise = Normal::new(bit, sigma).expect("sigma validated above");
            row[d] = noise.sample(&mut rng);
        }
        data.extend(row);
        labels.push(c);
    }
    Dataset::new(
        Matrix::new(n, CUBE_FEATURES, data)?,
        labels,
        (0..CUBE_FEATURES).map(|d| format!("x{d}")).collect(),
        (0..CUBE_CLASSES).map(|c| c.to_string()).collect(),
    )
}

/// [`read_csv`] followed by standardization over all rows.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    cost_path: Option<&Path>,
) -> Result<(Dataset, CostModel, Scaling)> {
    let (mut dataset, costs) = read_csv(path, label_column, cost_path)?;
    let scaling = Scaling::fit(&dataset.features);
    dataset.features = scaling.apply(&dataset.features);
    Ok((dataset, costs, scaling))
}

/// Reads a CSV with a header row, leaving values unscaled. The named label
/// column is factorized in first-appearance order; every other column must
/// be numeric. Missing `cost_path` means unit costs.
pub fn read_csv(path: impl AsRef<Path>, label_column: &str, cost_path: Option<&Path>) -> Result<(Dataset, CostModel)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| TafaError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(TafaError::Input {
            path: path.to_path_buf(),
            message: "empty file".into(),
        });
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| TafaError::Input {
            path: path.to_path_buf(),
            message: format!("label column `{label_column}` not found"),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    for (r, record) in reader.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let record = record.map_err(|e| TafaError::Csv {
            path: path.to_path_buf(),
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(TafaError::Csv {
                path: path.to_path_buf(),
                row: line,
                column: String::new(),
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let next = class_names.len();
                let id = *class_index.entry(cell.to_string()).or_insert_with(|| {
                    class_names.push(cell.to_string());
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| TafaError::Csv {
                    path: path.to_path_buf(),
                    row: line,
                    column: headers[c].to_string(),
                    message: format!("non-numeric cell `{cell}`"),
                })?;
                if !v.is_finite() {
                    return Err(TafaError::Csv {
                        path: path.to_path_buf(),
                        row: line,
                        column: headers[c].to_string(),
                        message: format!("non-finite cell `{cell}`"),
                    });
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(TafaError::Input {
            path: path.to_path_buf(),
            message: "empty file: no data rows".into(),
        });
    }
    let features = Matrix::new(labels.len(), feature_names.len(), data)?;
    let costs = match cost_path {
        Some(p) => load_costs(p, &feature_names)?,
        None => CostModel::uniform(feature_names.len(), 1.0),
    };
    let dataset = Dataset::new(features, labels, feature_names, class_names)?;
    Ok((dataset, costs))
}

/// Reads a two-column `feature,cost` file. Every feature must be listed.
pub fn load_costs(path: &Path, feature_names: &[String]) -> Result<CostModel> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| TafaError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut by_name = HashMap::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != 2 {
            return Err(TafaError::Csv {
                path: path.to_path_buf(),
                row: line,
                column: String::new(),
                message: "expected `feature,cost`".into(),
            });
        }
        let cost: f64 = record[1].trim().parse().map_err(|_| TafaError::Csv {
            path: path.to_path_buf(),
            row: line,
            column: "cost".into(),
            message: format!("non-numeric cost `{}`", &record[1]),
        })?;
        by_name.insert(record[0].trim().to_string(), cost);
    }
    let costs = feature_names
        .iter()
        .map(|name| {
            by_name.get(name).copied().ok_or_else(|| TafaError::Input {
                path: path.to_path_buf(),
                message: format!("no cost for feature `{name}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CostModel::new(costs)
}

/// Stratified train/test split. The total test size is `round(n * f)`
/// clamped so both sides are nonempty; it is distributed over classes by
/// largest remainder so every class lands within one row of its share.
pub fn split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TafaError::invalid(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = labels.len();
    if n < 2 {
        return Err(TafaError::invalid("need at least 2 rows to split"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let exact: Vec<f64> = by_class
        .iter()
        .map(|rows| rows.len() as f64 * n_test as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut remaining = n_test - alloc.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if alloc[c] < by_class[c].len() {
            alloc[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (rows, &k) in by_class.iter_mut().zip(&alloc) {
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn cube_shape_and_determinism() {
        let a = generate_cube(8000, 0.1, 0).unwrap();
        assert_eq!(a.n_features(), 20);
        assert_eq!(a.n_classes, 8);
        assert_eq!(a.n_rows(), 8000);
        let b = generate_cube(8, 0.1, 0).unwrap();
        let c = generate_cube(8, 0.1, 0).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn cube_rejects_bad_args() {
        assert!(generate_cube(7, 0.1, 0).is_err());
        assert!(generate_cube(8, 0.0, 0).is_err());
        assert!(generate_cube(8, -1.0, 0).is_err());
    }

    #[test]
    fn cube_moments() {
        let ds = generate_cube(80_000, 0.1, 3).unwrap();
        let rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == 5).collect();
        assert!(rows.len() > 9000);
        let var = |j: usize| {
            let xs: Vec<f64> = rows.iter().map(|&i| ds.features.get(i, j)).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        };
        // 5 = 0b101: feature 5 has mean 1, feature 6 mean 0, feature 7 mean 1
        assert!((var(5) - 0.01).abs() < 0.001, "{}", var(5));
        assert!((var(0) - 1.0 / 12.0).abs() < 0.004, "{}", var(0));
        let mean6 = rows.iter().map(|&i| ds.features.get(i, 6)).sum::<f64>() / rows.len() as f64;
        assert!(mean6.abs() < 0.01);
    }

    #[test]
    fn csv_load_factorizes_and_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,y,c\n1,5,a,2\n2,5,b,4\n3,5,a,9\n");
        let (ds, costs, scaling) = load_csv(&p, "y", None).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_features(), 3);
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.class_names, vec!["a", "b"]);
        assert_eq!(costs.costs, vec![1.0; 3]);
        // constant column b divides by 1
        assert_eq!(scaling.scales[1], 1.0);
        assert!(ds.features.column(1).all(|v| v == 0.0));
        let m: f64 = ds.features.column(0).sum::<f64>() / 3.0;
        let v: f64 = ds.features.column(0).map(|x| x * x).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn csv_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,y\n1,x\nfoo,y\n");
        let err = load_csv(&p, "y", None).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("column a"), "{err}");

        let p = write(&dir, "e.csv", "a,b\n1,2\n");
        let err = load_csv(&p, "y", None).unwrap_err().to_string();
        assert!(err.contains("label column"), "{err}");

        let p = write(&dir, "f.csv", "");
        assert!(load_csv(&p, "y", None).is_err());
    }

    #[test]
    fn csv_costs_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "a,b,y\n1,2,a\n3,5,b\n");
        let c = write(&dir, "c.csv", "feature,cost\nb,2.5\na,0.5\n");
        let (_, costs, _) = load_csv(&p, "y", Some(&c)).unwrap();
        assert_eq!(costs.costs, vec![0.5, 2.5]);
        let bad = write(&dir, "c2.csv", "feature,cost\na,1\n");
        assert!(load_csv(&p, "y", Some(&bad)).is_err());
    }

    #[test]
    fn cube_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_cube(16, 0.1, 1).unwrap();
        let p = dir.path().join("cube.csv");
        ds.write_csv(&p, "label").unwrap();
        let (back, _, scaling) = load_csv(&p, "label", None).unwrap();
        assert_eq!(back.n_rows(), 16);
        let raw = scaling.apply(&ds.features);
        for (a, b) in raw.as_slice().iter().zip(back.features.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let s = split(&labels, 0.2, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, split(&labels, 0.2, 1).unwrap());
        assert!(split(&labels, 0.0, 1).is_err());
        assert!(split(&labels, 1.0, 1).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        for seed in 0..10 {
            let s = split(&labels, 0.3, seed).unwrap();
            for c in 0..4 {
                let k = s.test.iter().filter(|&&i| labels[i] == c).count() as f64;
                assert!((k - 25.0 * 0.3).abs() <= 1.0);
            }
        }
    }
}
