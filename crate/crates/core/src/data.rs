//! Synthetic datasets, label-noise injection and the dataset CSV format.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::{self, Rng, Stream};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DataError {
    DataError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Features with clean and corrupted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    true_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        true_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if class_count < 2 {
            return Err(invalid("class_count", format!("{class_count} < 2")));
        }
        let n = features.rows();
        if n == 0 {
            return Err(invalid("features", "dataset has no rows"));
        }
        if true_labels.len() != n || noisy_labels.len() != n {
            return Err(invalid(
                "labels",
                format!(
                    "{} rows but {} true and {} noisy labels",
                    n,
                    true_labels.len(),
                    noisy_labels.len()
                ),
            ));
        }
        if let Some(&l) = true_labels.iter().chain(&noisy_labels).find(|&&l| l >= class_count) {
            return Err(invalid("labels", format!("label {l} >= class count {class_count}")));
        }
        if !features.all_finite() {
            return Err(invalid("features", "non-finite entry"));
        }
        Ok(Self {
            features,
            true_labels,
            noisy_labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    /// The training-side view: features and observed labels only.
    pub fn noisy_view(&self) -> NoisyView<'_> {
        NoisyView {
            features: &self.features,
            labels: &self.noisy_labels,
            class_count: self.class_count,
        }
    }

    /// Per-class counts of the true labels.
    pub fn true_class_counts(&self) -> Vec<usize> {
        class_counts(&self.true_labels, self.class_count)
    }

    /// Fraction of samples whose observed label differs from the true one.
    pub fn corruption_rate(&self) -> f64 {
        let flipped = self
            .true_labels
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(t, n)| t != n)
            .count();
        flipped as f64 / self.len() as f64
    }

    /// Row-normalized empirical transition matrix `T[i][j] = P(noisy = j | true = i)`.
    pub fn empirical_transition(&self) -> Vec<Vec<f64>> {
        let k = self.class_count;
        let mut counts = vec![vec![0usize; k]; k];
        for (&t, &n) in self.true_labels.iter().zip(&self.noisy_labels) {
            counts[t][n] += 1;
        }
        counts
            .into_iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.into_iter()
                    .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    fn with_noisy_labels(&self, noisy_labels: Vec<usize>) -> Self {
        Self {
            features: self.features.clone(),
            true_labels: self.true_labels.clone(),
            noisy_labels,
            class_count: self.class_count,
        }
    }
}

/// Borrowed dataset view that exposes no ground truth.
#[derive(Debug, Clone, Copy)]
pub struct NoisyView<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
    pub class_count: usize,
}

impl NoisyView<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn class_counts(labels: &[usize], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Pair,
    Instance,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Pair => "pair",
            NoiseKind::Instance => "instance",
        })
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "pair" => Ok(NoiseKind::Pair),
            "instance" => Ok(NoiseKind::Instance),
            other => Err(format!("unknown noise kind `{other}` (expected symmetric, pair or instance)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(invalid("noise.ratio", format!("{} not in [0, 1)", self.ratio)));
        }
        if self.kind == NoiseKind::Pair && self.ratio > 0.5 {
            return Err(invalid(
                "noise.ratio",
                format!("pair noise requires ratio <= 0.5, got {}", self.ratio),
            ));
        }
        Ok(())
    }
}

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class_sizes: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub std_dev: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn class_count(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.class_sizes.len() < 2 {
            return Err(invalid("class_sizes", "need at least two classes"));
        }
        if self.class_sizes.iter().any(|&n| n == 0) {
            return Err(invalid("class_sizes", "every class needs at least one sample"));
        }
        if self.dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(invalid("separation", format!("{} is not positive", self.separation)));
        }
        if !(self.std_dev > 0.0 && self.std_dev.is_finite()) {
            return Err(invalid("std_dev", format!("{} is not positive", self.std_dev)));
        }
        Ok(())
    }

    /// Class centers, a pure function of `(seed, K, dim, separation)`.
    ///
    /// Candidates are drawn from an isotropic Gaussian and rejected while
    /// closer than `separation` to an accepted center; the proposal scale
    /// grows after repeated rejections so placement always terminates.
    pub fn centers(&self) -> Matrix {
        let k = self.class_count();
        let d = self.dim;
        let mut rng = rng::stream(self.seed, Stream::Data);
        let mut scale = 1.25 * self.separation / (2.0 * d as f64).sqrt();
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut rejections = 0;
        while centers.len() < k {
            let cand: Vec<f64> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            let far_enough = centers.iter().all(|c| dist(c, &cand) >= self.separation);
            if far_enough {
                centers.push(cand);
                rejections = 0;
            } else {
                rejections += 1;
                if rejections % 100 == 0 {
                    scale *= 1.05;
                }
            }
        }
        Matrix::from_rows(&centers).expect("centers share a dimension")
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Draws `Σ n_k` rows in class order; noisy labels start equal to true labels.
pub fn generate_blobs(spec: &BlobSpec) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    let centers = spec.centers();
    // Center placement consumes the head of the `data` stream; samples use a
    // second generator keyed off the same seed so they never depend on how
    // many center candidates were rejected.
    let mut rng = rng::stream(spec.seed.wrapping_add(0x9E37_79B9_7F4A_7C15), Stream::Data);
    sample_blobs(spec, &centers, &spec.class_sizes, &mut rng)
}

/// Held-out blobs around the same centers as `spec`, drawn from a disjoint
/// stream with `per_class` rows for every class.
pub fn generate_test_blobs(
    spec: &BlobSpec,
    per_class: usize,
    sample_seed: u64,
) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    if per_class == 0 {
        return Err(invalid("test_per_class", "must be >= 1"));
    }
    let centers = spec.centers();
    let sizes = vec![per_class; spec.class_count()];
    let mut rng = rng::stream(sample_seed, Stream::TestData);
    sample_blobs(spec, &centers, &sizes, &mut rng)
}

fn sample_blobs(
    spec: &BlobSpec,
    centers: &Matrix,
    sizes: &[usize],
    rng: &mut Rng,
) -> Result<LabeledDataset, DataError> {
    let n: usize = sizes.iter().sum();
    let d = spec.dim;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (k, &size) in sizes.iter().enumerate() {
        let center = centers.row(k);
        for _ in 0..size {
            for &c in center {
                let z: f64 = StandardNormal.sample(rng);
                data.push(c + spec.std_dev * z);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(
        Matrix::from_vec(n, d, data),
        labels.clone(),
        labels,
        spec.class_count(),
    )
}

/// Corrupts labels according to `spec`; features and true labels are kept.
pub fn inject_noise(dataset: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    let k = dataset.class_count();
    match spec.kind {
        NoiseKind::Instance => return inject_instance_noise(dataset, spec.ratio, spec.seed),
        NoiseKind::Symmetric | NoiseKind::Pair => {}
    }
    let mut rng = rng::seeded(spec.seed);
    let noisy = dataset
        .true_labels()
        .iter()
        .map(|&y| {
            let flip = rng.random::<f64>() < spec.ratio;
            if !flip {
                return y;
            }
            match spec.kind {
                NoiseKind::Symmetric => {
                    let r = rng.random_range(0..k - 1);
                    if r < y {
                        r
                    } else {
                        r + 1
                    }
                }
                NoiseKind::Pair => (y + 1) % k,
                NoiseKind::Instance => unreachable!(),
            }
        })
        .collect();
    Ok(dataset.with_noisy_labels(noisy))
}

/// Ideal transition matrix for class-conditional noise kinds.
pub fn transition_matrix(kind: NoiseKind, ratio: f64, class_count: usize) -> Option<Vec<Vec<f64>>> {
    let k = class_count;
    let mut t = vec![vec![0.0; k]; k];
    match kind {
        NoiseKind::Symmetric => {
            for (i, row) in t.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { 1.0 - ratio } else { ratio / (k - 1) as f64 };
                }
            }
        }
        NoiseKind::Pair => {
            for (i, row) in t.iter_mut().enumerate() {
                row[i] = 1.0 - ratio;
                row[(i + 1) % k] += ratio;
            }
        }
        NoiseKind::Instance => return None,
    }
    Some(t)
}

/// Feature-dependent noise model.
///
/// Each class owns a random unit direction. A sample's flip probability is
/// its own truncated-normal budget (mean `ratio`, sd 0.1, clipped to [0, 1])
/// scaled by how strongly it projects onto its own class direction, with the
/// scaling normalized to mean one over the dataset. A flipped sample moves to
/// the wrong class whose direction it projects onto most.
#[derive(Debug, Clone)]
pub struct InstanceNoiseModel {
    directions: Matrix,
    proj_mean: f64,
    proj_std: f64,
    score_mean: f64,
    ratio: f64,
}

const INSTANCE_BUDGET_SD: f64 = 0.1;

impl InstanceNoiseModel {
    pub fn fit(dataset: &LabeledDataset, ratio: f64, seed: u64) -> Result<Self, DataError> {
        if dataset.dim() < 1 {
            return Err(invalid("dim", "instance noise needs at least one feature"));
        }
        let k = dataset.class_count();
        let d = dataset.dim();
        let mut rng = rng::seeded(seed);
        let mut dirs = Matrix::zeros(k, d);
        for c in 0..k {
            let row = dirs.row_mut(c);
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let own: Vec<f64> = (0..dataset.len())
            .map(|i| dot(dataset.features().row(i), dirs.row(dataset.true_labels()[i])))
            .collect();
        let n = own.len() as f64;
        let proj_mean = own.iter().sum::<f64>() / n;
        let var = own.iter().map(|p| (p - proj_mean).powi(2)).sum::<f64>() / n;
        let proj_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let mut model = Self {
            directions: dirs,
            proj_mean,
            proj_std,
            score_mean: 1.0,
            ratio,
        };
        let score_sum: f64 = own.iter().map(|&p| model.raw_score(p)).sum();
        model.score_mean = score_sum / n;
        Ok(model)
    }

    fn raw_score(&self, projection: f64) -> f64 {
        let z = (projection - self.proj_mean) / self.proj_std;
        0.5 + 1.0 / (1.0 + (-z).exp())
    }

    /// Flip probability for a row given its per-sample budget.
    pub fn flip_probability(&self, row: &[f64], label: usize, budget: f64) -> f64 {
        let score = self.raw_score(dot(row, self.directions.row(label)));
        (budget * score / self.score_mean).clamp(0.0, 1.0)
    }

    /// Wrong class with the largest projection; ties go to the lower index.
    pub fn route(&self, row: &[f64], label: usize) -> usize {
        let mut best = None::<(usize, f64)>;
        for c in (0..self.directions.rows()).filter(|&c| c != label) {
            let p = dot(row, self.directions.row(c));
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((c, p));
            }
        }
        best.expect("at least two classes").0
    }

    /// Corrupts one row using its own generator.
    pub fn corrupt(&self, row: &[f64], label: usize, rng: &mut Rng) -> usize {
        if self.ratio == 0.0 {
            return label;
        }
        let budget = truncated_normal(rng, self.ratio, INSTANCE_BUDGET_SD, 0.0, 1.0);
        let q = self.flip_probability(row, label, budget);
        if rng.random::<f64>() < q {
            self.route(row, label)
        } else {
            label
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn truncated_normal(rng: &mut Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..1000 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + sd * z;
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

/// Per-row generator for instance noise: stream `row + 1` of `seed`.
pub fn instance_row_rng(seed: u64, row: usize) -> Rng {
    let mut r = rng::seeded(seed);
    r.set_stream(row as u64 + 1);
    // Discard one word so that stream 0 of an unrelated seeded() generator
    // never aliases row streams.
    r.next_u64();
    r
}

pub fn inject_instance_noise(
    dataset: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    NoiseSpec {
        kind: NoiseKind::Instance,
        ratio,
        seed,
    }
    .validate()?;
    let model = InstanceNoiseModel::fit(dataset, ratio, seed)?;
    let noisy = (0..dataset.len())
        .map(|i| {
            let mut r = instance_row_rng(seed, i);
            model.corrupt(dataset.features().row(i), dataset.true_labels()[i], &mut r)
        })
        .collect();
    Ok(dataset.with_noisy_labels(noisy))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_header(dim: usize) -> String {
    let mut h: Vec<String> = (0..dim).map(|j| format!("feature_{j}")).collect();
    h.push("noisy_label".into());
    h.push("true_label".into());
    h.join(",")
}

pub fn write_csv<W: Write>(dataset: &LabeledDataset, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", csv_header(dataset.dim()))?;
    for i in 0..dataset.len() {
        for &v in dataset.features().row(i) {
            write!(w, "{},", fmt_f64(v))?;
        }
        writeln!(w, "{},{}", dataset.noisy_labels()[i], dataset.true_labels()[i])?;
    }
    Ok(())
}

pub fn save_csv(dataset: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_csv(dataset, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Loads a dataset CSV whose labels must lie in `[0, class_count)`.
pub fn load_csv(path: &Path, class_count: usize) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, &path.display().to_string(), Some(class_count))
}

/// Loads a dataset CSV taking the class count as `max label + 1` (at least 2).
pub fn load_csv_infer(path: &Path) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, &path.display().to_string(), None)
}

pub fn parse_csv(
    text: &str,
    origin: &str,
    class_count: Option<usize>,
) -> Result<LabeledDataset, DataError> {
    let perr = |line: usize, reason: String| DataError::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 {
        return Err(perr(1, format!("malformed header `{header}`")));
    }
    let dim = cols.len() - 2;
    if header != csv_header(dim) {
        return Err(perr(1, format!("malformed header `{header}`")));
    }
    let mut features = Vec::new();
    let mut noisy = Vec::new();
    let mut truth = Vec::new();
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(perr(
                line_no,
                format!("expected {} fields, found {}", dim + 2, fields.len()),
            ));
        }
        for f in &fields[..dim] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| perr(line_no, format!("bad number `{f}`")))?;
            if !v.is_finite() {
                return Err(perr(line_no, format!("non-finite value `{f}`")));
            }
            features.push(v);
        }
        let label = |s: &str| -> Result<usize, DataError> {
            let l: usize = s
                .trim()
                .parse()
                .map_err(|_| perr(line_no, format!("bad label `{s}`")))?;
            if let Some(k) = class_count {
                if l >= k {
                    return Err(perr(line_no, format!("label {l} out of range for {k} classes")));
                }
            }
            Ok(l)
        };
        noisy.push(label(fields[dim])?);
        truth.push(label(fields[dim + 1])?);
    }
    if noisy.is_empty() {
        return Err(perr(1, "no data rows".into()));
    }
    let k = class_count.unwrap_or_else(|| {
        noisy.iter().chain(&truth).copied().max().unwrap_or(0).max(1) + 1
    });
    let n = noisy.len();
    LabeledDataset::new(Matrix::from_vec(n, dim, features), truth, noisy, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> BlobSpec {
        BlobSpec {
            class_sizes: vec![3, 3],
            dim: 2,
            separation: 10.0,
            std_dev: 0.1,
            seed: 5,
        }
    }

    pub(crate) fn imbalanced_spec(seed: u64) -> BlobSpec {
        BlobSpec {
            class_sizes: vec![400, 310, 240, 185, 143, 111, 86, 50],
            dim: 16,
            separation: 4.0,
            std_dev: 1.0,
            seed,
        }
    }

    #[test]
    fn blobs_are_in_class_order() {
        let ds = generate_blobs(&small_spec()).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.true_labels(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(ds.noisy_labels(), ds.true_labels());
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = generate_blobs(&small_spec()).unwrap();
        let b = generate_blobs(&small_spec()).unwrap();
        assert_eq!(a, b);
        let bits = |d: &LabeledDataset| d.features().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn imbalanced_marginal_matches_sizes() {
        let spec = imbalanced_spec(1);
        let ds = generate_blobs(&spec).unwrap();
        assert_eq!(ds.len(), 1525);
        let mut tally = vec![0; 8];
        for &l in ds.true_labels() {
            tally[l] += 1;
        }
        assert_eq!(tally, spec.class_sizes);
    }

    #[test]
    fn centers_respect_separation() {
        let spec = imbalanced_spec(3);
        let c = spec.centers();
        for i in 0..c.rows() {
            for j in i + 1..c.rows() {
                assert!(dist(c.row(i), c.row(j)) >= spec.separation);
            }
        }
    }

    #[test]
    fn test_blobs_share_centers() {
        let spec = small_spec();
        let test = generate_test_blobs(&spec, 4, 99).unwrap();
        let train = generate_blobs(&spec).unwrap();
        assert_eq!(test.len(), 8);
        assert_ne!(test.features(), train.features());
        // With sd 0.1 and separation 10 every test point is nearest to its own
        // class mean in the training data.
        let mean = |ds: &LabeledDataset, k: usize| {
            let rows: Vec<&[f64]> = (0..ds.len()).filter(|&i| ds.true_labels()[i] == k).map(|i| ds.features().row(i)).collect();
            (0..2).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect::<Vec<_>>()
        };
        for k in 0..2 {
            assert!(dist(&mean(&test, k), &mean(&train, k)) < 1.0);
        }
    }

    #[test]
    fn invalid_spec_names_field() {
        let mut s = small_spec();
        s.separation = 0.0;
        let e = generate_blobs(&s).unwrap_err().to_string();
        assert!(e.contains("separation"), "{e}");
        let mut s = small_spec();
        s.class_sizes = vec![3, 0];
        assert!(generate_blobs(&s).unwrap_err().to_string().contains("class_sizes"));
    }

    #[test]
    fn zero_ratio_is_identity() {
        let ds = generate_blobs(&imbalanced_spec(2)).unwrap();
        for kind in [NoiseKind::Symmetric, NoiseKind::Pair, NoiseKind::Instance] {
            let noisy = inject_noise(&ds, &NoiseSpec { kind, ratio: 0.0, seed: 4 }).unwrap();
            assert_eq!(noisy.noisy_labels(), ds.true_labels());
        }
    }

    #[test]
    fn pair_noise_goes_to_successor() {
        let spec = BlobSpec {
            class_sizes: vec![100; 10],
            dim: 3,
            separation: 2.0,
            std_dev: 1.0,
            seed: 1,
        };
        let ds = generate_blobs(&spec).unwrap();
        let noisy = inject_noise(&ds, &NoiseSpec { kind: NoiseKind::Pair, ratio: 0.4, seed: 9 }).unwrap();
        let mut flipped = 0;
        for (&y, &n) in noisy.true_labels().iter().zip(noisy.noisy_labels()) {
            if y != n {
                flipped += 1;
                assert_eq!(n, (y + 1) % 10);
            }
        }
        assert!(flipped > 0);
    }

    #[test]
    fn noise_preserves_features_and_truth() {
        let ds = generate_blobs(&imbalanced_spec(2)).unwrap();
        for kind in [NoiseKind::Symmetric, NoiseKind::Pair, NoiseKind::Instance] {
            let noisy = inject_noise(&ds, &NoiseSpec { kind, ratio: 0.3, seed: 4 }).unwrap();
            assert_eq!(noisy.features(), ds.features());
            assert_eq!(noisy.true_labels(), ds.true_labels());
        }
    }

    #[test]
    fn noise_spec_rejects_bad_ratio() {
        let ds = generate_blobs(&small_spec()).unwrap();
        let e = inject_noise(&ds, &NoiseSpec { kind: NoiseKind::Symmetric, ratio: 1.0, seed: 0 });
        assert!(e.is_err());
        let e = inject_noise(&ds, &NoiseSpec { kind: NoiseKind::Pair, ratio: 0.6, seed: 0 });
        assert!(e.is_err());
    }

    #[test]
    fn instance_noise_rate_near_target() {
        let spec = BlobSpec {
            class_sizes: vec![1000; 10],
            dim: 8,
            separation: 3.0,
            std_dev: 1.0,
            seed: 11,
        };
        let ds = generate_blobs(&spec).unwrap();
        for seed in 0..3 {
            let noisy = inject_instance_noise(&ds, 0.4, seed).unwrap();
            let rate = noisy.corruption_rate();
            assert!((0.35..=0.45).contains(&rate), "rate {rate}");
        }
    }

    #[test]
    fn instance_noise_is_per_row_deterministic() {
        let ds = generate_blobs(&small_spec()).unwrap();
        let model = InstanceNoiseModel::fit(&ds, 0.4, 3).unwrap();
        let row = ds.features().row(0);
        for s in 0..50 {
            let a = model.corrupt(row, 0, &mut instance_row_rng(s, 7));
            let b = model.corrupt(row, 0, &mut instance_row_rng(s, 7));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let ds = inject_noise(
            &generate_blobs(&small_spec()).unwrap(),
            &NoiseSpec { kind: NoiseKind::Symmetric, ratio: 0.5, seed: 1 },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "feature_0,feature_1,noisy_label,true_label");
        let back = parse_csv(&text, "mem", Some(2)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let good = "feature_0,noisy_label,true_label\n0.5,0,1\n";
        assert!(parse_csv(good, "f", Some(2)).is_ok());
        let bad_label = "feature_0,noisy_label,true_label\n0.5,0,1\n0.1,2,0\n";
        let e = parse_csv(bad_label, "f", Some(2)).unwrap_err().to_string();
        assert!(e.starts_with("f:3:"), "{e}");
        let ragged = "feature_0,noisy_label,true_label\n0.5,0\n";
        assert!(parse_csv(ragged, "f", Some(2)).unwrap_err().to_string().starts_with("f:2:"));
        let header = "x,noisy_label,true_label\n0.5,0,1\n";
        assert!(parse_csv(header, "f", Some(2)).unwrap_err().to_string().starts_with("f:1:"));
    }
}
