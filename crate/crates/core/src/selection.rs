//! Noisy-sample selection on expert heads, and per-class selection quality.
//!
//! Three criteria are provided, all driven by the expert heads of a
//! [`MultiHeadNet`] (every head except the current classifier):
//!
//! * small-loss: keep the globally smallest mean expert losses;
//! * GMM: fit a two-component 1-D Gaussian mixture to min-max normalized
//!   losses and keep samples whose low-mean posterior clears a threshold;
//! * fluctuation: drop samples whose ensemble prediction went from agreeing
//!   with the observed label to disagreeing within a recent window.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::NoisyView;
use crate::nn::{self, MultiHeadNet, NnError};

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("empty loss vector")]
    Empty,
    #[error("keep fraction {0} not in (0, 1]")]
    KeepFraction(f64),
    #[error("need at least 4 values to fit a two-component mixture, got {0}")]
    TooFewValues(usize),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    SmallLoss,
    Gmm,
    Fluctuation,
}

impl CriterionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CriterionKind::SmallLoss => "small_loss",
            CriterionKind::Gmm => "gmm",
            CriterionKind::Fluctuation => "fluctuation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub criterion: CriterionKind,
    /// Ramp length `T_k` of the small-loss keep schedule, in epochs.
    pub ramp_epochs: usize,
    /// Noise rate assumed known by the small-loss schedule.
    pub assumed_noise_rate: f64,
    pub gmm_threshold: f64,
    pub gmm_sigma_floor: f64,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
    /// Number of recorded epochs the fluctuation criterion looks back over.
    pub window: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            criterion: CriterionKind::Gmm,
            ramp_epochs: 10,
            assumed_noise_rate: 0.4,
            gmm_threshold: 0.5,
            gmm_sigma_floor: 1e-4,
            gmm_tol: 1e-6,
            gmm_max_iter: 100,
            window: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    Ok,
    /// Not enough prediction history yet; everything selected.
    InsufficientHistory,
    /// Losses had no spread; the mixture collapsed to a point.
    DegenerateLosses,
}

/// Per-sample selection flags, expert-loss cache and prediction history.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub selected: Vec<bool>,
    pub expert_loss: Vec<f64>,
    window: usize,
    history: VecDeque<Vec<usize>>,
}

impl SelectionState {
    pub fn new(n: usize, window: usize) -> Self {
        Self {
            selected: vec![true; n],
            expert_loss: vec![0.0; n],
            window: window.max(1),
            history: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Recorded epochs, oldest first; at most `window` of them.
    pub fn history(&self) -> impl Iterator<Item = &[usize]> {
        self.history.iter().map(Vec::as_slice)
    }

    pub fn history_depth(&self) -> usize {
        self.history.len()
    }

    /// Appends one epoch of predictions, evicting the oldest beyond the window.
    pub fn push_predictions(&mut self, predictions: Vec<usize>) -> Result<(), SelectionError> {
        if predictions.len() != self.len() {
            return Err(SelectionError::Length(format!(
                "{} predictions for {} samples",
                predictions.len(),
                self.len()
            )));
        }
        self.history.push_back(predictions);
        while self.history.len() > self.window {
            self.history.pop_front();
        }
        Ok(())
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Per-sample mean CE over `heads`.
pub fn mean_head_losses(
    net: &MultiHeadNet,
    view: &NoisyView<'_>,
    heads: &[usize],
) -> Result<Vec<f64>, SelectionError> {
    if heads.is_empty() {
        return Err(SelectionError::Length("no heads to score with".into()));
    }
    let f = net.features(view.features)?;
    let mut losses = vec![0.0; view.len()];
    for &h in heads {
        let logits = net.head_logits(&f, h)?;
        for (i, l) in losses.iter_mut().enumerate() {
            *l += nn::ce_loss(logits.row(i), view.labels[i])?;
        }
    }
    let n = heads.len() as f64;
    losses.iter_mut().for_each(|l| *l /= n);
    Ok(losses)
}

/// Every head except `excluded`.
pub fn expert_heads(head_count: usize, excluded: usize) -> Vec<usize> {
    (0..head_count).filter(|&h| h != excluded).collect()
}

/// Mean CE over all heads except the current classifier.
pub fn compute_expert_losses(
    net: &MultiHeadNet,
    view: &NoisyView<'_>,
    excluded_head: usize,
) -> Result<Vec<f64>, SelectionError> {
    if excluded_head >= net.head_count() {
        return Err(NnError::HeadIndex {
            head: excluded_head,
            count: net.head_count(),
        }
        .into());
    }
    mean_head_losses(net, view, &expert_heads(net.head_count(), excluded_head))
}

/// `1 − ρ̂·min(t / T_k, 1)`.
pub fn small_loss_keep_fraction(epoch: usize, assumed_noise_rate: f64, ramp_epochs: usize) -> f64 {
    let progress = if ramp_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / ramp_epochs as f64).min(1.0)
    };
    1.0 - assumed_noise_rate * progress
}

/// Keeps the `⌈keep·N⌉` smallest losses; ties go to the lower index.
pub fn select_small_loss(losses: &[f64], keep_fraction: f64) -> Result<Vec<bool>, SelectionError> {
    if losses.is_empty() {
        return Err(SelectionError::Empty);
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SelectionError::KeepFraction(keep_fraction));
    }
    let n = losses.len();
    // The epsilon guards products like 0.6 * 1525 = 915.0000000000001.
    let keep = ((keep_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut flags = vec![false; n];
    for &i in &order[..keep] {
        flags[i] = true;
    }
    Ok(flags)
}

/// Two-component 1-D Gaussian mixture, components sorted by mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub std_devs: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmStatus {
    Converged,
    MaxIter,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub gmm: Gmm2,
    pub status: GmmStatus,
    /// Log-likelihood before each M-step, in iteration order.
    pub log_likelihoods: Vec<f64>,
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

impl Gmm2 {
    /// Per-component `log π_k + log N(x | μ_k, σ_k)`.
    fn log_joint(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|k| self.weights[k].ln() + log_normal_pdf(x, self.means[k], self.std_devs[k]))
    }

    /// Posterior probability of the low-mean component.
    pub fn posterior_low(&self, x: f64) -> f64 {
        let [a, b] = self.log_joint(x);
        1.0 / (1.0 + (b - a).exp())
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let [a, b] = self.log_joint(x);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            })
            .sum()
    }
}

/// Rescales to `[0, 1]`; constant input maps to all zeros.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - min) / span).collect()
}

/// EM for a two-component mixture, initialized by splitting at the median.
///
/// Stops once the log-likelihood improves by less than `tol` or after
/// `max_iter` M-steps. Standard deviations never drop below `sigma_floor`.
pub fn fit_gmm2(
    values: &[f64],
    max_iter: usize,
    tol: f64,
    sigma_floor: f64,
) -> Result<GmmFit, SelectionError> {
    let n = values.len();
    if n < 4 {
        return Err(SelectionError::TooFewValues(n));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[n - 1] - sorted[0] <= 0.0 {
        let v = sorted[0];
        return Ok(GmmFit {
            gmm: Gmm2 {
                weights: [0.5, 0.5],
                means: [v, v],
                std_devs: [sigma_floor, sigma_floor],
            },
            status: GmmStatus::Degenerate,
            log_likelihoods: Vec::new(),
        });
    }
    let half = n / 2;
    let moments = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        (m, var.sqrt().max(sigma_floor))
    };
    let (m0, s0) = moments(&sorted[..half]);
    let (m1, s1) = moments(&sorted[half..]);
    let mut gmm = Gmm2 {
        weights: [half as f64 / n as f64, (n - half) as f64 / n as f64],
        means: [m0, m1],
        std_devs: [s0, s1],
    };

    let mut lls = Vec::new();
    let mut resp = vec![0.0; n];
    let mut status = GmmStatus::MaxIter;
    for _ in 0..max_iter {
        // E-step: responsibility of component 0, and the current log-likelihood.
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(values) {
            let [a, b] = gmm.log_joint(x);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            ll += lse;
            *r = (a - lse).exp();
        }
        if let Some(&prev) = lls.last() {
            lls.push(ll);
            if ll - prev < tol {
                status = GmmStatus::Converged;
                break;
            }
        } else {
            lls.push(ll);
        }
        // M-step.
        let mut next = gmm;
        for k in 0..2 {
            let w: Vec<f64> = resp.iter().map(|&r| if k == 0 { r } else { 1.0 - r }).collect();
            let nk: f64 = w.iter().sum();
            if nk <= 1e-12 * n as f64 {
                next.weights[k] = 1e-12;
                continue;
            }
            let mean = w.iter().zip(values).map(|(w, x)| w * x).sum::<f64>() / nk;
            let var = w.iter().zip(values).map(|(w, x)| w * (x - mean).powi(2)).sum::<f64>() / nk;
            next.weights[k] = nk / n as f64;
            next.means[k] = mean;
            next.std_devs[k] = var.sqrt().max(sigma_floor);
        }
        let total = next.weights[0] + next.weights[1];
        next.weights = next.weights.map(|w| w / total);
        gmm = next;
    }
    if gmm.means[0] > gmm.means[1] {
        gmm.weights.swap(0, 1);
        gmm.means.swap(0, 1);
        gmm.std_devs.swap(0, 1);
    }
    Ok(GmmFit {
        gmm,
        status,
        log_likelihoods: lls,
    })
}

/// Selected iff the low-mean posterior is at least `threshold`.
pub fn select_gmm(values: &[f64], gmm: &Gmm2, threshold: f64) -> Vec<bool> {
    values.iter().map(|&x| gmm.posterior_low(x) >= threshold).collect()
}

/// Flags samples whose prediction history holds a fluctuation event: some
/// `t₁ < t₂` with prediction `== label` at `t₁` and `!= label` at `t₂`.
/// Returns everything selected when fewer than two epochs are recorded.
pub fn select_fluctuation(state: &SelectionState, labels: &[usize]) -> (Vec<bool>, SelectionStatus) {
    let hist: Vec<&[usize]> = state.history().collect();
    if hist.len() < 2 {
        return (vec![true; labels.len()], SelectionStatus::InsufficientHistory);
    }
    let flags = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut seen_correct = false;
            for epoch in &hist {
                let correct = epoch[i] == y;
                if seen_correct && !correct {
                    return false;
                }
                seen_correct |= correct;
            }
            true
        })
        .collect();
    (flags, SelectionStatus::Ok)
}

/// Ensemble predictions of `heads` appended to the history.
pub fn update_history(
    state: &mut SelectionState,
    net: &MultiHeadNet,
    view: &NoisyView<'_>,
    heads: &[usize],
) -> Result<(), SelectionError> {
    let preds = nn::ensemble_predict_heads(net, view.features, heads)?;
    state.push_predictions(preds)
}

/// Outcome of running a criterion once.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub selected: Vec<bool>,
    pub status: SelectionStatus,
    pub gmm: Option<Gmm2>,
}

/// Runs the configured criterion on precomputed expert losses and the
/// recorded prediction history.
pub fn apply_criterion(
    config: &SelectionConfig,
    epoch: usize,
    losses: &[f64],
    state: &SelectionState,
    labels: &[usize],
) -> Result<SelectionOutcome, SelectionError> {
    match config.criterion {
        CriterionKind::SmallLoss => {
            let keep = small_loss_keep_fraction(epoch, config.assumed_noise_rate, config.ramp_epochs);
            Ok(SelectionOutcome {
                selected: select_small_loss(losses, keep)?,
                status: SelectionStatus::Ok,
                gmm: None,
            })
        }
        CriterionKind::Gmm => {
            let normalized = normalize_min_max(losses);
            let fit = fit_gmm2(&normalized, config.gmm_max_iter, config.gmm_tol, config.gmm_sigma_floor)?;
            if fit.status == GmmStatus::Degenerate {
                return Ok(SelectionOutcome {
                    selected: vec![true; losses.len()],
                    status: SelectionStatus::DegenerateLosses,
                    gmm: Some(fit.gmm),
                });
            }
            Ok(SelectionOutcome {
                selected: select_gmm(&normalized, &fit.gmm, config.gmm_threshold),
                status: SelectionStatus::Ok,
                gmm: Some(fit.gmm),
            })
        }
        CriterionKind::Fluctuation => {
            let (selected, status) = select_fluctuation(state, labels);
            Ok(SelectionOutcome {
                selected,
                status,
                gmm: None,
            })
        }
    }
}

/// Per-class selection precision, recall and F-score against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSelectionMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub fscore: Vec<f64>,
    /// Mean of the per-class F-scores.
    pub macro_fscore: f64,
}

impl ClassSelectionMetrics {
    pub fn min_fscore(&self) -> f64 {
        self.fscore.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// `P_k = #(sel, y = ỹ = k) / #(sel, ỹ = k)`, `R_k = #(sel, y = ỹ = k) / #(y = ỹ = k)`.
/// Vanishing denominators give 0.
pub fn selection_metrics(
    selected: &[bool],
    noisy_labels: &[usize],
    true_labels: &[usize],
    class_count: usize,
) -> Result<ClassSelectionMetrics, SelectionError> {
    if selected.len() != noisy_labels.len() || selected.len() != true_labels.len() {
        return Err(SelectionError::Length(format!(
            "{} flags, {} noisy labels, {} true labels",
            selected.len(),
            noisy_labels.len(),
            true_labels.len()
        )));
    }
    let mut hit = vec![0usize; class_count];
    let mut sel = vec![0usize; class_count];
    let mut clean = vec![0usize; class_count];
    for ((&s, &n), &t) in selected.iter().zip(noisy_labels).zip(true_labels) {
        if s {
            sel[n] += 1;
        }
        if n == t {
            clean[n] += 1;
            if s {
                hit[n] += 1;
            }
        }
    }
    let precision: Vec<f64> = (0..class_count).map(|k| ratio(hit[k], sel[k])).collect();
    let recall: Vec<f64> = (0..class_count).map(|k| ratio(hit[k], clean[k])).collect();
    let fscore: Vec<f64> = precision.iter().zip(&recall).map(|(&p, &r)| f_score(p, r)).collect();
    let macro_fscore = fscore.iter().sum::<f64>() / class_count as f64;
    Ok(ClassSelectionMetrics {
        precision,
        recall,
        fscore,
        macro_fscore,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRatio {
    /// Largest over smallest nonzero per-class count.
    pub ratio: f64,
    /// Some class has no selected samples (the true ratio is infinite).
    pub has_empty_class: bool,
}

pub fn imbalance_ratio(selected: &[bool], noisy_labels: &[usize], class_count: usize) -> ImbalanceRatio {
    let mut counts = vec![0usize; class_count];
    for (&s, &l) in selected.iter().zip(noisy_labels) {
        if s {
            counts[l] += 1;
        }
    }
    let nonzero: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let has_empty_class = nonzero.len() < class_count;
    let ratio = match (nonzero.iter().max(), nonzero.iter().min()) {
        (Some(&max), Some(&min)) => max as f64 / min as f64,
        _ => 1.0,
    };
    ImbalanceRatio {
        ratio,
        has_empty_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::{Architecture, Dense};
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn small_loss_examples() {
        let f = select_small_loss(&[0.1, 5.0, 0.2, 4.0], 0.5).unwrap();
        assert_eq!(f, vec![true, false, true, false]);
        assert!(select_small_loss(&[3.0, 1.0], 1.0).unwrap().iter().all(|&s| s));
        assert!(matches!(select_small_loss(&[], 0.5), Err(SelectionError::Empty)));
        assert!(select_small_loss(&[1.0], 0.0).is_err());
        // Ties resolved toward the lower index.
        assert_eq!(select_small_loss(&[1.0, 1.0, 1.0], 0.5).unwrap(), vec![true, true, false]);
    }

    #[test]
    fn small_loss_count_against_sort_oracle() {
        let mut rng = seeded(7);
        let losses: Vec<f64> = (0..1525).map(|_| rng.random::<f64>() * 3.0).collect();
        let flags = select_small_loss(&losses, 0.6).unwrap();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 915);
        let max_sel = losses.iter().zip(&flags).filter(|(_, &f)| f).map(|(l, _)| *l).fold(f64::MIN, f64::max);
        let min_rej = losses.iter().zip(&flags).filter(|(_, &f)| !f).map(|(l, _)| *l).fold(f64::MAX, f64::min);
        assert!(max_sel <= min_rej);
    }

    #[test]
    fn keep_schedule() {
        assert_eq!(small_loss_keep_fraction(0, 0.4, 10), 1.0);
        assert!((small_loss_keep_fraction(5, 0.4, 10) - 0.8).abs() < 1e-12);
        assert!((small_loss_keep_fraction(50, 0.4, 10) - 0.6).abs() < 1e-12);
    }

    fn two_delta() -> Vec<f64> {
        let mut v = vec![0.0; 50];
        v.extend(vec![1.0; 50]);
        v
    }

    #[test]
    fn gmm_two_delta_fixture() {
        let fit = fit_gmm2(&two_delta(), 100, 1e-6, 1e-4).unwrap();
        let g = fit.gmm;
        assert!((g.weights[0] - 0.5).abs() <= 0.02 && (g.weights[1] - 0.5).abs() <= 0.02);
        assert!(g.means[0].abs() <= 0.02 && (g.means[1] - 1.0).abs() <= 0.02);
        assert_eq!(fit.status, GmmStatus::Converged);
        let sel = select_gmm(&two_delta(), &g, 0.5);
        assert_eq!(sel, two_delta().iter().map(|&v| v == 0.0).collect::<Vec<_>>());
    }

    #[test]
    fn gmm_degenerate_input() {
        let fit = fit_gmm2(&[0.3; 10], 100, 1e-6, 1e-4).unwrap();
        assert_eq!(fit.status, GmmStatus::Degenerate);
        assert_eq!(fit.gmm.std_devs, [1e-4, 1e-4]);
        assert!(matches!(fit_gmm2(&[0.1, 0.2, 0.3], 10, 1e-6, 1e-4), Err(SelectionError::TooFewValues(3))));
    }

    #[test]
    fn gmm_log_likelihood_monotone() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..200)
                .map(|i| if i % 3 == 0 { 0.7 + 0.1 * rng.random::<f64>() } else { 0.2 * rng.random::<f64>() })
                .collect();
            let fit = fit_gmm2(&normalize_min_max(&vals), 100, 1e-6, 1e-4).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", w);
            }
            assert!((fit.gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(fit.gmm.means[0] <= fit.gmm.means[1]);
        }
    }

    #[test]
    fn gmm_posterior_symmetry() {
        let g = Gmm2 {
            weights: [0.5, 0.5],
            means: [0.1, 0.9],
            std_devs: [0.05, 0.05],
        };
        assert!(g.posterior_low(0.1) > 0.999);
        assert!(g.posterior_low(0.9) < 0.001);
        assert!((g.posterior_low(0.5) - 0.5).abs() < 1e-12);
    }

    fn state_with(hist: &[&[usize]]) -> SelectionState {
        let mut s = SelectionState::new(hist[0].len(), 3);
        for h in hist {
            s.push_predictions(h.to_vec()).unwrap();
        }
        s
    }

    #[test]
    fn fluctuation_patterns() {
        // label 4; "other" is 1.
        let (f, _) = select_fluctuation(&state_with(&[&[4], &[4], &[4]]), &[4]);
        assert_eq!(f, vec![true]);
        let (f, _) = select_fluctuation(&state_with(&[&[4], &[1]]), &[4]);
        assert_eq!(f, vec![false]);
        let (f, _) = select_fluctuation(&state_with(&[&[1], &[4]]), &[4]);
        assert_eq!(f, vec![true]);
        let (f, st) = select_fluctuation(&state_with(&[&[1]]), &[4]);
        assert_eq!((f, st), (vec![true], SelectionStatus::InsufficientHistory));
    }

    #[test]
    fn fluctuation_two_epoch_enumeration() {
        // Oracle: of the four correct/incorrect patterns only (correct, wrong)
        // is a fluctuation event.
        for a in [true, false] {
            for b in [true, false] {
                let p = |c: bool| if c { 2 } else { 0 };
                let (f, _) = select_fluctuation(&state_with(&[&[p(a)], &[p(b)]]), &[2]);
                assert_eq!(f[0], !(a && !b), "pattern {a} {b}");
            }
        }
    }

    #[test]
    fn history_evicts_beyond_window() {
        let mut s = SelectionState::new(1, 3);
        for p in 0..5 {
            s.push_predictions(vec![p]).unwrap();
        }
        assert_eq!(s.history_depth(), 3);
        assert_eq!(s.history().map(|h| h[0]).collect::<Vec<_>>(), vec![2, 3, 4]);

        // correct -> wrong flip, then pushed out of the window.
        let mut s = SelectionState::new(1, 3);
        for p in [4, 0, 1, 1] {
            s.push_predictions(vec![p]).unwrap();
        }
        let (f, _) = select_fluctuation(&s, &[4]);
        assert_eq!(f, vec![true]);
    }

    #[test]
    fn expert_losses_examples() {
        let arch = Architecture {
            input_dim: 3,
            trunk_widths: vec![5],
            class_count: 4,
            experts: 2,
        };
        let net = MultiHeadNet::new(&arch, &mut seeded(1)).unwrap();
        let mut rng = seeded(2);
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect());
        let labels = vec![0, 1, 2, 3, 1];
        let view = NoisyView { features: &x, labels: &labels, class_count: 4 };
        let losses = compute_expert_losses(&net, &view, 1).unwrap();
        for i in 0..5 {
            let xi = x.select_rows(&[i]);
            let l0 = nn::ce_loss(net.forward(&xi, 0).unwrap().row(0), labels[i]).unwrap();
            let l2 = nn::ce_loss(net.forward(&xi, 2).unwrap().row(0), labels[i]).unwrap();
            assert!((losses[i] - (l0 + l2) / 2.0).abs() < 1e-12);
        }

        let two = MultiHeadNet::new(&Architecture { experts: 1, ..arch.clone() }, &mut seeded(1)).unwrap();
        let l = compute_expert_losses(&two, &view, 0).unwrap();
        let plain = mean_head_losses(&two, &view, &[1]).unwrap();
        assert_eq!(l, plain);

        let head = two.head(0).clone();
        let same = MultiHeadNet::from_layers(two.trunk().to_vec(), vec![head.clone(), head.clone(), head]).unwrap();
        let single = mean_head_losses(&same, &view, &[0]).unwrap();
        for ex in 0..3 {
            let l = compute_expert_losses(&same, &view, ex).unwrap();
            for (a, b) in l.iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let _ = Dense::zeros(1, 1, nn::Activation::Relu);
    }

    #[test]
    fn metrics_examples() {
        // Class 0 all clean and all selected; class 1 nothing selected.
        let m = selection_metrics(&[true, true, false, false], &[0, 0, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!((m.precision[0], m.recall[0], m.fscore[0]), (1.0, 1.0, 1.0));
        assert_eq!((m.precision[1], m.recall[1], m.fscore[1]), (0.0, 0.0, 0.0));
        assert_eq!(m.macro_fscore, 0.5);
    }

    #[test]
    fn imbalance_examples() {
        let lab = |counts: &[usize]| -> Vec<usize> {
            counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect()
        };
        let l = lab(&[10, 10, 10]);
        assert_eq!(imbalance_ratio(&vec![true; 30], &l, 3).ratio, 1.0);
        let l = lab(&[40, 10]);
        let r = imbalance_ratio(&vec![true; 50], &l, 2);
        assert_eq!((r.ratio, r.has_empty_class), (4.0, false));
        let r = imbalance_ratio(&vec![true; 50], &l, 3);
        assert!(r.has_empty_class);
        assert_eq!(r.ratio, 4.0);
    }
}
