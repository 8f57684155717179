//! WDBC dataset ingestion, standardization, and deterministic splits.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// A labeled tabular dataset. Labels are 0 (benign) / 1 (malignant).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::Dimension(format!(
                "{} feature columns vs {} names",
                features.ncols(),
                feature_names.len()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut feats = Array2::zeros((indices.len(), self.n_features()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            feats.row_mut(row).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features: feats,
            labels,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Loads a UCI-layout WDBC file: `id,diagnosis,f1,...,f30` per row, with an
/// optional header row (detected by a non-numeric first field).
///
/// Diagnosis `M` maps to label 1, `B` to 0. Row order is preserved.
pub fn load_wdbc(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut feature_names: Option<Vec<String>> = None;
    let mut n_features: Option<usize> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();

        // Header detection: a data row starts with a numeric id.
        if idx == 0 && fields[0].trim().parse::<f64>().is_err() {
            if fields.len() >= 3 {
                feature_names = Some(fields[2..].iter().map(|s| s.trim().to_string()).collect());
            }
            continue;
        }

        if let Some(expected) = n_features {
            if fields.len() != expected + 2 {
                return Err(Error::WrongFieldCount {
                    line: line_no,
                    expected: expected + 2,
                    found: fields.len(),
                });
            }
        } else {
            if fields.len() < 3 {
                return Err(Error::WrongFieldCount {
                    line: line_no,
                    expected: 32,
                    found: fields.len(),
                });
            }
            let nf = fields.len() - 2;
            if let Some(names) = &feature_names {
                if names.len() != nf {
                    return Err(Error::WrongFieldCount {
                        line: line_no,
                        expected: names.len() + 2,
                        found: fields.len(),
                    });
                }
            }
            n_features = Some(nf);
        }

        let label = match fields[1].trim() {
            "M" => 1u8,
            "B" => 0u8,
            other => {
                return Err(Error::BadDiagnosis {
                    line: line_no,
                    value: other.to_string(),
                })
            }
        };
        labels.push(label);
        for (col, field) in fields[2..].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::BadFeature {
                line: line_no,
                field: col + 3,
                value: field.to_string(),
            })?;
            features.push(v);
        }
    }

    let nf = n_features.ok_or_else(|| Error::Invalid(format!("{}: no data rows", path.display())))?;
    let n = labels.len();
    let feats = Array2::from_shape_vec((n, nf), features)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let names =
        feature_names.unwrap_or_else(|| (1..=nf).map(|i| format!("f{i}")).collect());
    Dataset::new(feats, labels, names)
}

/// Column-wise standardization parameters fitted on a training set.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub means: Array1<f64>,
    pub stds: Array1<f64>,
    /// Columns with (population) std below 1e-12; transformed to zero.
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Fits per-column mean and population standard deviation (divisor `n`).
    pub fn fit(train: &Dataset) -> Result<Self> {
        let n = train.n_samples();
        if n == 0 {
            return Err(Error::Invalid("cannot standardize an empty dataset".into()));
        }
        let f = train.n_features();
        let mut means = Array1::zeros(f);
        let mut stds = Array1::zeros(f);
        let mut constant = vec![false; f];
        for c in 0..f {
            let col = train.features.column(c);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            means[c] = mean;
            stds[c] = std;
            constant[c] = std < 1e-12;
        }
        Ok(Standardizer {
            means,
            stds,
            constant,
        })
    }

    pub fn transform_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, standardizer has {}",
                x.ncols(),
                self.means.len()
            )));
        }
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = if self.constant[c] {
                    0.0
                } else {
                    (*v - self.means[c]) / self.stds[c]
                };
            }
        }
        Ok(out)
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            features: self.transform_matrix(&data.features)?,
            labels: data.labels.clone(),
            feature_names: data.feature_names.clone(),
        })
    }
}

/// Deterministic stratified split into (train, test).
///
/// The overall test size is `round(test_fraction * n)`; it is apportioned to
/// the classes by largest remainder, so class proportions match the full
/// dataset within one sample. Membership is drawn by a Fisher-Yates shuffle
/// of each class's indices on a single [`SplitMix64`] stream seeded with
/// `seed` (classes processed in ascending label order). Row order within
/// each part follows the original dataset.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.n_samples();
    let total_test = (test_fraction * n as f64).round() as usize;
    if total_test == 0 || total_test >= n {
        return Err(Error::Invalid(format!(
            "test_fraction {test_fraction} leaves an empty train or test set for n = {n}"
        )));
    }

    let classes = [0u8, 1u8];
    let per_class: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            (0..n)
                .filter(|&i| data.labels[i] == c)
                .collect::<Vec<usize>>()
        })
        .collect();

    // Largest-remainder apportionment of the test quota.
    let mut base: Vec<usize> = Vec::new();
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    for (ci, idxs) in per_class.iter().enumerate() {
        let exact = total_test as f64 * idxs.len() as f64 / n as f64;
        base.push(exact.floor() as usize);
        remainders.push((ci, exact - exact.floor()));
    }
    let mut leftover = total_test - base.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (ci, _) in remainders {
        if leftover == 0 {
            break;
        }
        if base[ci] < per_class[ci].len() {
            base[ci] += 1;
            leftover -= 1;
        }
    }

    let mut rng = SplitMix64::new(seed);
    let mut test_idx: Vec<usize> = Vec::with_capacity(total_test);
    for (ci, idxs) in per_class.iter().enumerate() {
        let mut shuffled = idxs.clone();
        rng.shuffle(&mut shuffled);
        test_idx.extend_from_slice(&shuffled[..base[ci]]);
    }
    test_idx.sort_unstable();
    let in_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..n).filter(|i| !in_test.contains(i)).collect();

    Ok((data.select(&train_idx), data.select(&test_idx)))
}

/// Writes a dataset as CSV with header `label,f1,...`.
pub fn write_labeled_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=data.n_features()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for i in 0..data.n_samples() {
        let mut rec = vec![data.labels[i].to_string()];
        rec.extend(data.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
