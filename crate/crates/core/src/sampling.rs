//! Class weights, Beta-density weight reversal, weighted batch samplers and
//! mixup.
//!
//! Forward weights are the class frequencies of the selected set. Reversed
//! weights push them through the Beta(1, β) density `β·(1−w)^(β−1)`, which
//! is decreasing on [0, 1] for β > 1, so frequent classes get small values
//! and rare classes large ones; renormalized they form the tail-focused
//! sampling distribution.

use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::nn::MixedTarget;
use crate::rng::Rng;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("no samples selected")]
    EmptySelection,
    #[error("beta must be >= 1, got {0}")]
    Beta(f64),
    #[error("weight {0} not in [0, 1]")]
    Weight(f64),
    #[error("reversed weights sum to zero")]
    ZeroMass,
    #[error("sampling weights are all zero or invalid")]
    InvalidWeights,
    #[error("mixup alpha must be positive, got {0}")]
    Alpha(f64),
    #[error("batch shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// `v`: selected-set class frequencies, summing to 1.
    pub forward: Vec<f64>,
    /// `s`: the mapping applied to each forward weight.
    pub reversed_raw: Vec<f64>,
    /// `ṽ`: `s` renormalized to sum to 1.
    pub reversed: Vec<f64>,
    pub beta: f64,
}

/// `u_k / Σ u_i` over the labels of the selected samples.
pub fn class_weights(selected_labels: &[usize], class_count: usize) -> Result<Vec<f64>, SamplingError> {
    if selected_labels.is_empty() {
        return Err(SamplingError::EmptySelection);
    }
    let mut counts = vec![0usize; class_count];
    for &l in selected_labels {
        counts[l] += 1;
    }
    let total = selected_labels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// The Beta(1, β) density `β·(1−w)^(β−1)` (since `B(1, β) = 1/β`).
pub fn beta_mapping(w: f64, beta: f64) -> f64 {
    beta * (1.0 - w).powf(beta - 1.0)
}

pub fn reverse_weights(forward: &[f64], beta: f64) -> Result<ClassWeights, SamplingError> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(SamplingError::Beta(beta));
    }
    if let Some(&w) = forward.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(SamplingError::Weight(w));
    }
    let raw: Vec<f64> = forward.iter().map(|&w| beta_mapping(w, beta)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(SamplingError::ZeroMass);
    }
    Ok(ClassWeights {
        forward: forward.to_vec(),
        reversed: raw.iter().map(|s| s / total).collect(),
        reversed_raw: raw,
        beta,
    })
}

/// Per-sample draw weights realizing a class distribution over the selected
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawWeights {
    pub weights: Vec<f64>,
    /// Mass of classes with no selected samples was spread over the others.
    pub redistributed: bool,
}

/// `dist_k / count_k` for each selected sample of class `k`, zero otherwise.
pub fn per_sample_draw_weights(
    selected: &[bool],
    labels: &[usize],
    class_dist: &[f64],
) -> Result<DrawWeights, SamplingError> {
    let k = class_dist.len();
    let mut counts = vec![0usize; k];
    for (&s, &l) in selected.iter().zip(labels) {
        if s {
            counts[l] += 1;
        }
    }
    let live_mass: f64 = class_dist.iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(d, _)| d).sum();
    let dead_mass: f64 = class_dist.iter().zip(&counts).filter(|(_, &c)| c == 0).map(|(d, _)| d).sum();
    if counts.iter().all(|&c| c == 0) {
        return Err(SamplingError::EmptySelection);
    }
    if !live_mass.is_finite() || live_mass < 0.0 || class_dist.iter().any(|d| !(*d >= 0.0)) {
        return Err(SamplingError::InvalidWeights);
    }
    // All mass on absent classes: draw the selected classes evenly.
    let even = live_mass == 0.0;
    let live = counts.iter().filter(|&&c| c > 0).count() as f64;
    let redistributed = dead_mass > 0.0;
    let scale = if redistributed { 1.0 / live_mass } else { 1.0 };
    let per_class: Vec<f64> = (0..k)
        .map(|c| match counts[c] {
            0 => 0.0,
            n if even => 1.0 / (live * n as f64),
            n => class_dist[c] * scale / n as f64,
        })
        .collect();
    let weights = selected
        .iter()
        .zip(labels)
        .map(|(&s, &l)| if s { per_class[l] } else { 0.0 })
        .collect();
    Ok(DrawWeights {
        weights,
        redistributed,
    })
}

/// i.i.d. categorical index draws with replacement.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    index: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self, SamplingError> {
        WeightedIndex::new(weights)
            .map(|index| Self { index })
            .map_err(|_| SamplingError::InvalidWeights)
    }

    /// Uniform over the given indices.
    pub fn uniform_over(n: usize, members: &[usize]) -> Result<Self, SamplingError> {
        let mut w = vec![0.0; n];
        for &i in members {
            w[i] = 1.0;
        }
        Self::new(&w)
    }

    pub fn batch(&self, rng: &mut Rng, size: usize) -> Vec<usize> {
        (0..size).map(|_| self.index.sample(rng)).collect()
    }
}

pub fn weighted_batch(rng: &mut Rng, weights: &[f64], size: usize) -> Result<Vec<usize>, SamplingError> {
    Ok(WeightedSampler::new(weights)?.batch(rng, size))
}

/// Where mixup coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaSource {
    /// `γ ~ Beta(α, α)`, one per row or one shared by the whole batch.
    Beta { alpha: f64, per_batch: bool },
    /// A fixed coefficient; draws nothing from the generator.
    Fixed(f64),
}

/// `Beta(α, α)` as `G₁ / (G₁ + G₂)` with independent `Gamma(α, 1)` draws.
pub fn sample_symmetric_beta(rng: &mut Rng, alpha: f64) -> Result<f64, SamplingError> {
    let g = Gamma::new(alpha, 1.0).map_err(|_| SamplingError::Alpha(alpha))?;
    let a = g.sample(rng);
    let b = g.sample(rng);
    if a + b == 0.0 {
        // Both draws underflowed (tiny alpha): the limit is a fair coin.
        return Ok(if rng.random::<bool>() { 1.0 } else { 0.0 });
    }
    Ok(a / (a + b))
}

/// Mixed features and targets; `alpha` is `None` for fixed coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupBatch {
    pub features: Matrix,
    pub targets: Vec<MixedTarget>,
    pub alpha: Option<f64>,
}

/// Row `j` is `γ_j·a_j + (1−γ_j)·b_j` with target `(ỹ_a, ỹ_b, γ_j)`.
pub fn mixup_batch(
    features_a: &Matrix,
    labels_a: &[usize],
    features_b: &Matrix,
    labels_b: &[usize],
    gamma: GammaSource,
    rng: &mut Rng,
) -> Result<MixupBatch, SamplingError> {
    let b = features_a.rows();
    if features_b.rows() != b || labels_a.len() != b || labels_b.len() != b {
        return Err(SamplingError::Shape(format!(
            "{} / {} rows, {} / {} labels",
            b,
            features_b.rows(),
            labels_a.len(),
            labels_b.len()
        )));
    }
    if features_a.cols() != features_b.cols() {
        return Err(SamplingError::Shape(format!(
            "feature widths {} and {}",
            features_a.cols(),
            features_b.cols()
        )));
    }
    let gammas: Vec<f64> = match gamma {
        GammaSource::Fixed(g) => {
            if !(0.0..=1.0).contains(&g) {
                return Err(SamplingError::Shape(format!("fixed gamma {g} not in [0, 1]")));
            }
            vec![g; b]
        }
        GammaSource::Beta { alpha, per_batch: true } => vec![sample_symmetric_beta(rng, alpha)?; b],
        GammaSource::Beta { alpha, per_batch: false } => {
            (0..b).map(|_| sample_symmetric_beta(rng, alpha)).collect::<Result<_, _>>()?
        }
    };
    let mut mixed = Matrix::zeros(b, features_a.cols());
    let mut targets = Vec::with_capacity(b);
    for (j, &g) in gammas.iter().enumerate() {
        for ((m, &xa), &xb) in mixed.row_mut(j).iter_mut().zip(features_a.row(j)).zip(features_b.row(j)) {
            *m = g * xa + (1.0 - g) * xb;
        }
        targets.push(MixedTarget {
            label_a: labels_a[j],
            label_b: labels_b[j],
            gamma: g,
        });
    }
    let alpha = match gamma {
        GammaSource::Beta { alpha, .. } => Some(alpha),
        GammaSource::Fixed(_) => None,
    };
    Ok(MixupBatch {
        features: mixed,
        targets,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn forward_weight_examples() {
        assert_eq!(class_weights(&[0, 0, 0, 1], 2).unwrap(), vec![0.75, 0.25]);
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        assert_eq!(class_weights(&labels, 4).unwrap(), vec![0.25; 4]);
        assert!(matches!(class_weights(&[], 2), Err(SamplingError::EmptySelection)));
    }

    #[test]
    fn reverse_examples() {
        let cw = reverse_weights(&[0.75, 0.25], 1.0).unwrap();
        assert_eq!(cw.reversed_raw, vec![1.0, 1.0]);
        assert_eq!(cw.reversed, vec![0.5, 0.5]);
        assert_eq!(beta_mapping(0.5, 2.0), 1.0);
        let cw = reverse_weights(&[0.75, 0.25], 2.0).unwrap();
        assert_eq!(cw.reversed_raw, vec![0.5, 1.5]);
        assert_eq!(cw.reversed, vec![0.25, 0.75]);
        assert_eq!(beta_mapping(1.0, 3.0), 0.0);
        assert!(reverse_weights(&[0.5, 0.5], 0.5).is_err());
        assert!(reverse_weights(&[1.5, -0.5], 2.0).is_err());
        assert!(matches!(reverse_weights(&[1.0, 1.0], 2.0), Err(SamplingError::ZeroMass)));
    }

    #[test]
    fn draw_weight_examples() {
        let labels = [0, 0, 1, 1, 1, 1];
        let sel = [true; 6];
        let v = class_weights(&labels, 2).unwrap();
        let w = per_sample_draw_weights(&sel, &labels, &v).unwrap();
        for x in &w.weights {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
        let mut labels = vec![0; 10];
        labels.extend(vec![1; 40]);
        let w = per_sample_draw_weights(&[true; 50], &labels, &[0.5, 0.5]).unwrap();
        assert!((w.weights[0] / w.weights[49] - 4.0).abs() < 1e-12);
        assert!(!w.redistributed);
    }

    #[test]
    fn draw_weights_redistribute_empty_class() {
        let labels = [0, 0, 1, 2];
        let sel = [true, true, true, false];
        let w = per_sample_draw_weights(&sel, &labels, &[0.2, 0.3, 0.5]).unwrap();
        assert!(w.redistributed);
        assert_eq!(w.weights[3], 0.0);
        let total: f64 = w.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((w.weights[0] * 2.0 / w.weights[2] - 0.2 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn draw_weights_single_selected_class() {
        // One class holds the whole selection, so its reversed weight is zero.
        let labels = [0, 0, 1];
        let sel = [true, true, false];
        let w = per_sample_draw_weights(&sel, &labels, &[0.0, 1.0]).unwrap();
        assert!(w.redistributed);
        assert_eq!(w.weights, vec![0.5, 0.5, 0.0]);
        assert!(per_sample_draw_weights(&sel, &labels, &[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn weighted_batch_examples() {
        let mut rng = seeded(1);
        assert_eq!(weighted_batch(&mut rng, &[0.0, 2.0, 0.0], 10).unwrap(), vec![1; 10]);
        assert!(weighted_batch(&mut rng, &[0.0, 0.0], 3).is_err());
        let a = weighted_batch(&mut seeded(5), &[1.0, 2.0, 3.0], 50).unwrap();
        let b = weighted_batch(&mut seeded(5), &[1.0, 2.0, 3.0], 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_batch_frequency() {
        let idx = weighted_batch(&mut seeded(2), &[1.0, 1.0], 100_000).unwrap();
        let f0 = idx.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((f0 - 0.5).abs() < 0.01, "{f0}");
    }

    #[test]
    fn mixup_fixed_one_is_identity() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 2, vec![-1.0, 0.0, 9.0, 9.0]);
        let m = mixup_batch(&a, &[0, 1], &b, &[2, 2], GammaSource::Fixed(1.0), &mut seeded(0)).unwrap();
        assert_eq!(m.features, a);
        assert!(m.targets.iter().zip([0, 1]).all(|(t, l)| t.label_a == l && t.gamma == 1.0));
        assert!(mixup_batch(&a, &[0, 1], &b.select_rows(&[0]), &[2], GammaSource::Fixed(1.0), &mut seeded(0)).is_err());
    }

    #[test]
    fn uniform_beta_mean() {
        let mut rng = seeded(4);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_symmetric_beta(&mut rng, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn per_batch_gamma_is_shared() {
        let a = Matrix::from_vec(3, 1, vec![0.0, 0.0, 0.0]);
        let b = Matrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]);
        let m = mixup_batch(&a, &[0; 3], &b, &[1; 3], GammaSource::Beta { alpha: 1.0, per_batch: true }, &mut seeded(3)).unwrap();
        assert!(m.targets.iter().all(|t| t.gamma == m.targets[0].gamma));
    }
}
