//! Datasets: CSV ingestion with min-max scaling, the four-component
//! synthetic additive model, and irrelevant-variable augmentation.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpamError};

/// Affine map from a raw column onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    pub const IDENTITY: ColumnScale = ColumnScale { min: 0.0, max: 1.0 };

    pub fn is_constant(&self) -> bool {
        !(self.max > self.min)
    }

    /// Raw value to unit scale, clamped to `[0, 1]`. Constant columns map to 0.
    pub fn scale(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }

    /// Unit scale back to raw units.
    pub fn unscale(&self, u: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            self.min + u * (self.max - self.min)
        }
    }
}

/// Design matrix (stored on the unit scale) and response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    names: Vec<String>,
    response_name: String,
    column_scales: Vec<ColumnScale>,
    constant: Vec<bool>,
    y_mean: f64,
}

impl Dataset {
    /// Builds a dataset from values already on the unit scale.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let p = x.ncols();
        let scales = vec![ColumnScale::IDENTITY; p];
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_metadata(x, y, names, "y".to_string(), scales)
    }

    /// Builds a dataset from raw values, min-max scaling every column.
    pub fn from_raw(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>, response_name: String) -> Result<Self> {
        let scales: Vec<ColumnScale> = x
            .column_iter()
            .map(|c| ColumnScale {
                min: c.min(),
                max: c.max(),
            })
            .collect();
        let scaled = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| scales[j].scale(x[(i, j)]));
        Self::with_metadata(scaled, y, names, response_name, scales)
    }

    fn with_metadata(
        x: DMatrix<f64>,
        y: DVector<f64>,
        names: Vec<String>,
        response_name: String,
        column_scales: Vec<ColumnScale>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 {
            return Err(SpamError::input("dataset has no rows"));
        }
        if p == 0 {
            return Err(SpamError::input("dataset has no covariate columns"));
        }
        if y.len() != n {
            return Err(SpamError::input(format!(
                "response has {} entries but design has {n} rows",
                y.len()
            )));
        }
        if names.len() != p || column_scales.len() != p {
            return Err(SpamError::input("column metadata does not match column count"));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(SpamError::input(format!("non-finite response at row {}", i + 1)));
        }
        for j in 0..p {
            for i in 0..n {
                let v = x[(i, j)];
                if !v.is_finite() {
                    return Err(SpamError::input(format!(
                        "non-finite value at row {}, column {}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let constant = x
            .column_iter()
            .zip(&column_scales)
            .map(|(c, s)| s.is_constant() || c.max() <= c.min())
            .collect();
        let y_mean = y.mean();
        Ok(Dataset {
            x,
            y,
            names,
            response_name,
            column_scales,
            constant,
            y_mean,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn column_scales(&self) -> &[ColumnScale] {
        &self.column_scales
    }

    /// Columns with no spread; these never enter a model.
    pub fn is_constant(&self, j: usize) -> bool {
        self.constant[j]
    }

    /// Copy of column `j` on the unit scale.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }

    /// Column `j` mapped back to raw units.
    pub fn raw_column(&self, j: usize) -> Vec<f64> {
        let s = self.column_scales[j];
        self.x.column(j).iter().map(|&u| s.unscale(u)).collect()
    }

    /// Writes the stored (unit-scale) design and the response as CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(&self.response_name);
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = (0..self.p()).map(|j| format!("{}", self.x[(i, j)])).collect();
            row.push(format!("{}", self.y[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Numeric table read from CSV: header plus row-major values.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a rectangular numeric CSV with a header row.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(SpamError::input(format!(
                "row {} has {} cells, header has {}",
                r + 1,
                record.len(),
                header.len()
            )));
        }
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                cell.trim().parse::<f64>().map_err(|e| SpamError::Parse {
                    row: r + 1,
                    column: name.clone(),
                    message: format!("'{cell}': {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Builds a dataset from a CSV stream. With `scale = false` the covariates
/// are kept as-is and must already lie in `[0, 1]`.
pub fn dataset_from_csv<R: Read>(reader: R, response_column: &str, scale: bool) -> Result<Dataset> {
    let table = read_table(reader)?;
    let target = table
        .header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| SpamError::input(format!("response column '{response_column}' not found")))?;
    let n = table.rows.len();
    let cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != target).collect();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| table.rows[i][cols[j]]);
    let y = DVector::from_iterator(n, table.rows.iter().map(|r| r[target]));
    let names = cols.iter().map(|&c| table.header[c].clone()).collect();
    if scale {
        Dataset::from_raw(x, y, names, response_column.to_string())
    } else {
        for j in 0..x.ncols() {
            for i in 0..n {
                let v = x[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(SpamError::Domain { row: i + 1, value: v });
                }
            }
        }
        let p = x.ncols();
        Dataset::with_metadata(x, y, names, response_column.to_string(), vec![ColumnScale::IDENTITY; p])
    }
}

/// Loads a dataset from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str, scale: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    dataset_from_csv(std::io::BufReader::new(file), response_column, scale)
}

/// Distribution of the synthetic covariates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateLaw {
    /// Independent Uniform(0, 1) columns.
    #[default]
    UniformIID,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub covariate_law: CovariateLaw,
}

impl SyntheticSpec {
    pub fn new(n: usize, p: usize, noise_sd: f64, seed: u64) -> Self {
        SyntheticSpec {
            n,
            p,
            noise_sd,
            seed,
            covariate_law: CovariateLaw::UniformIID,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p < 4 {
            return Err(SpamError::input("synthetic model needs p >= 4"));
        }
        if self.n == 0 {
            return Err(SpamError::input("synthetic model needs n >= 1"));
        }
        if !(self.noise_sd > 0.0) {
            return Err(SpamError::input("noise_sd must be positive"));
        }
        Ok(())
    }
}

/// `-2 sin(2x)`
pub fn true_f1(x: f64) -> f64 {
    -2.0 * (2.0 * x).sin()
}

/// `x² - 1/3`
pub fn true_f2(x: f64) -> f64 {
    x * x - 1.0 / 3.0
}

/// `x - 1/2`
pub fn true_f3(x: f64) -> f64 {
    x - 0.5
}

/// `e^{-x} + e^{-1} - 1`
pub fn true_f4(x: f64) -> f64 {
    (-x).exp() + (-1.0f64).exp() - 1.0
}

/// The four relevant component functions, in column order.
pub const TRUE_COMPONENTS: [fn(f64) -> f64; 4] = [true_f1, true_f2, true_f3, true_f4];

/// Mean of each true component under Uniform(0, 1).
pub fn true_component_mean(j: usize) -> f64 {
    match j {
        0 => (2.0f64).cos() - 1.0,
        1..=3 => 0.0,
        _ => 0.0,
    }
}

/// Sidecar describing the generating model of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// 1-based relevant columns.
    pub support: Vec<usize>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn support_set(&self) -> BTreeSet<usize> {
        self.support.iter().copied().collect()
    }

    /// Value of the true component for 1-based column `j`.
    pub fn component(&self, j: usize, x: f64) -> f64 {
        if (1..=4).contains(&j) {
            TRUE_COMPONENTS[j - 1](x)
        } else {
            0.0
        }
    }
}

/// Draws the synthetic four-component additive model.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let (n, p) = (spec.n, spec.p);
    // row-major draw order so a given seed fixes each observation's covariates
    let mut values = vec![0.0; n * p];
    match spec.covariate_law {
        CovariateLaw::UniformIID => {
            for v in values.iter_mut() {
                *v = rng.random::<f64>();
            }
        }
    }
    let x = DMatrix::from_row_slice(n, p, &values);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| SpamError::input(e.to_string()))?;
    let y = DVector::from_fn(n, |i, _| {
        let signal: f64 = (0..4).map(|j| TRUE_COMPONENTS[j](x[(i, j)])).sum();
        signal + noise.sample(&mut rng)
    });
    let data = Dataset::new(x, y)?;
    Ok((
        data,
        GroundTruth {
            support: vec![1, 2, 3, 4],
            noise_sd: spec.noise_sd,
            seed: spec.seed,
        },
    ))
}

/// Dataset with appended irrelevant columns and a record of where they are.
#[derive(Clone, Debug)]
pub struct Augmented {
    pub data: Dataset,
    /// 0-based indices of every appended column.
    pub irrelevant: Vec<usize>,
    /// For each permuted column, the 0-based original column it copies.
    pub permuted_sources: Vec<usize>,
}

/// Appends `n_uniform` Uniform(0,1) columns and `n_permuted` row-permuted
/// copies of randomly chosen original columns.
pub fn augment_irrelevant(data: &Dataset, n_uniform: usize, n_permuted: usize, seed: u64) -> Result<Augmented> {
    let (n, p) = (data.n(), data.p());
    if n_permuted > p {
        return Err(SpamError::input(format!(
            "cannot permute {n_permuted} columns of a {p}-column dataset"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let total = p + n_uniform + n_permuted;
    let mut x = DMatrix::zeros(n, total);
    x.columns_mut(0, p).copy_from(data.x());
    let mut names = data.names().to_vec();
    let mut scales = data.column_scales().to_vec();

    for u in 0..n_uniform {
        let j = p + u;
        for i in 0..n {
            x[(i, j)] = rng.random::<f64>();
        }
        names.push(format!("uniform{}", u + 1));
        scales.push(ColumnScale::IDENTITY);
    }

    let mut candidates: Vec<usize> = (0..p).collect();
    candidates.shuffle(&mut rng);
    let sources: Vec<usize> = candidates.into_iter().take(n_permuted).collect();
    for (k, &src) in sources.iter().enumerate() {
        let j = p + n_uniform + k;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (i, &from) in order.iter().enumerate() {
            x[(i, j)] = data.x()[(from, src)];
        }
        names.push(format!("{}_perm", data.names()[src]));
        scales.push(data.column_scales()[src]);
    }

    let augmented = Dataset::with_metadata(x, data.y().clone(), names, data.response_name().to_string(), scales)?;
    Ok(Augmented {
        data: augmented,
        irrelevant: (p..total).collect(),
        permuted_sources: sources,
    })
}
