//! Training loops.
//!
//! [`Trainer`] owns the network, optimizer and selection state and only ever
//! sees a [`NoisyView`]. [`run`] drives it over all epochs and scores each
//! epoch against the ground truth that the trainer never touches.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, DataSource, Mode, RunConfig, WarmupDraw};
use crate::data::{self, DataError, LabeledDataset, NoisyView};
use crate::matrix::Matrix;
use crate::nn::{self, MixedTarget, MultiHeadNet, NnError, OptimizerState};
use crate::rng::{self, Rng, Stream};
use crate::sampling::{self, ClassWeights, GammaSource, SamplingError, WeightedSampler};
use crate::selection::{
    self, ClassSelectionMetrics, CriterionKind, Gmm2, ImbalanceRatio, SelectionConfig, SelectionError,
    SelectionState, SelectionStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("non-finite loss {loss} at epoch {epoch}, iteration {iteration}")]
    NonFinite { epoch: usize, iteration: usize, loss: f64 },
    #[error("non-finite expert loss for sample {sample} at epoch {epoch}")]
    NonFiniteSelection { epoch: usize, sample: usize },
}

/// Training and test sets for a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Builds the noisy training set and the clean test set a config describes.
///
/// Blob sources are generated and corrupted here. CSV training files are
/// taken as-is, with their noisy labels.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData, TrainError> {
    match cfg.data.source {
        DataSource::Blobs => {
            let spec = cfg.blob_spec();
            let clean = data::generate_blobs(&spec)?;
            let train = data::inject_noise(&clean, &cfg.noise_spec())?;
            let test = data::generate_test_blobs(&spec, cfg.data.test_per_class, spec.seed)?;
            Ok(PreparedData { train, test })
        }
        DataSource::Csv => {
            let train_path = cfg.data.train_csv.as_deref().expect("validated");
            let test_path = cfg.data.test_csv.as_deref().expect("validated");
            let (train, test) = match cfg.data.class_count {
                Some(k) => (data::load_csv(train_path, k)?, data::load_csv(test_path, k)?),
                None => {
                    let train = data::load_csv_infer(train_path)?;
                    let k = train.class_count();
                    (train, data::load_csv(test_path, k)?)
                }
            };
            if train.dim() != test.dim() {
                return Err(ConfigError::Invalid {
                    field: "data.test_csv",
                    reason: format!("{} features, training set has {}", test.dim(), train.dim()),
                }
                .into());
            }
            Ok(PreparedData { train, test })
        }
    }
}

/// Uniform draw from `active`; a single active head consumes nothing.
pub fn draw_head(rng: &mut Rng, active: &[usize]) -> usize {
    if active.len() == 1 {
        active[0]
    } else {
        active[rng.random_range(0..active.len())]
    }
}

/// Counts of `draws` head draws over `head_count` heads from the
/// `head_draw` stream of `seed`, without training.
pub fn head_draw_tally(seed: u64, head_count: usize, draws: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, Stream::HeadDraw);
    let active: Vec<usize> = (0..head_count).collect();
    let mut tally = vec![0; head_count];
    for _ in 0..draws {
        tally[draw_head(&mut rng, &active)] += 1;
    }
    tally
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub class_accuracy: Vec<f64>,
}

/// Accuracy of the ensemble over `heads` against true labels.
pub fn evaluate(net: &MultiHeadNet, test: &LabeledDataset, heads: &[usize]) -> Result<Evaluation, NnError> {
    let preds = nn::ensemble_predict_heads(net, test.features(), heads)?;
    let k = test.class_count();
    let mut hit = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(test.true_labels()) {
        total[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let correct: usize = hit.iter().sum();
    Ok(Evaluation {
        accuracy: if preds.is_empty() { 0.0 } else { correct as f64 / preds.len() as f64 },
        class_accuracy: (0..k)
            .map(|c| if total[c] == 0 { 0.0 } else { hit[c] as f64 / total[c] as f64 })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Select,
    /// Plain cross-entropy over the full noisy set.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Select,
    Weights,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub epoch: usize,
    pub kind: EventKind,
}

/// What one epoch did, without reference to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub iterations: usize,
    pub optimizer_steps: u64,
    /// Iterations each head spent as the classifier.
    pub head_draws: Vec<usize>,
    pub selected: Vec<bool>,
    pub selection_status: Option<SelectionStatus>,
    pub gmm: Option<Gmm2>,
    pub weights: Option<ClassWeights>,
    pub flags: Vec<String>,
}

struct Streams {
    sampler_v: Rng,
    sampler_vtilde: Rng,
    head_draw: Rng,
    mixup: Rng,
    shuffle: Rng,
    ssl: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            sampler_v: rng::stream(seed, Stream::SamplerV),
            sampler_vtilde: rng::stream(seed, Stream::SamplerVTilde),
            head_draw: rng::stream(seed, Stream::HeadDraw),
            mixup: rng::stream(seed, Stream::Mixup),
            shuffle: rng::stream(seed, Stream::Shuffle),
            ssl: rng::stream(seed, Stream::Ssl),
        }
    }
}

/// Settings the epoch loop reads from a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub mode: Mode,
    pub warmup_epochs: usize,
    pub warmup_draw: WarmupDraw,
    pub batch_size: usize,
    pub beta: f64,
    pub gamma: GammaSource,
    pub selection: SelectionConfig,
    pub ssl_confidence: Option<f64>,
    pub ssl_jitter: f64,
}

impl LoopSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            mode: cfg.run.mode,
            warmup_epochs: cfg.run.warmup_epochs,
            warmup_draw: cfg.run.warmup_draw,
            batch_size: cfg.run.batch_size,
            beta: cfg.run.beta,
            gamma: cfg.gamma_source(),
            selection: cfg.select.clone(),
            ssl_confidence: cfg.ssl.confidence,
            ssl_jitter: cfg.ssl.jitter,
        }
    }
}

pub struct Trainer<'a> {
    settings: LoopSettings,
    view: NoisyView<'a>,
    net: MultiHeadNet,
    opt: OptimizerState,
    state: SelectionState,
    streams: Streams,
    active: Vec<usize>,
    current_head: usize,
    events: Vec<Event>,
}

impl<'a> Trainer<'a> {
    /// Initializes the full multi-head network from the `init` stream of
    /// `cfg.run.seed`, whatever the mode, so every arm starts from the same
    /// weights.
    pub fn new(cfg: &RunConfig, view: NoisyView<'a>) -> Result<Self, TrainError> {
        let arch = cfg.architecture(view.features.cols(), view.class_count);
        let mut init = rng::stream(cfg.run.seed, Stream::Init);
        let net = MultiHeadNet::new(&arch, &mut init)?;
        let opt = OptimizerState::new(
            &net,
            cfg.optim.lr,
            cfg.optim.momentum,
            cfg.optim.weight_decay,
            cfg.lr_schedule(),
        );
        Ok(Self::from_parts(LoopSettings::from_config(cfg), view, net, opt, cfg.run.seed))
    }

    pub fn from_parts(
        settings: LoopSettings,
        view: NoisyView<'a>,
        net: MultiHeadNet,
        opt: OptimizerState,
        seed: u64,
    ) -> Self {
        let active = if settings.mode.single_head() {
            vec![0]
        } else {
            (0..net.head_count()).collect()
        };
        let state = SelectionState::new(view.len(), settings.selection.window);
        Self {
            settings,
            view,
            net,
            opt,
            state,
            streams: Streams::new(seed),
            active,
            current_head: 0,
            events: Vec::new(),
        }
    }

    pub fn net(&self) -> &MultiHeadNet {
        &self.net
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn selection_state(&self) -> &SelectionState {
        &self.state
    }

    /// Heads that train and vote in this mode.
    pub fn active_heads(&self) -> &[usize] {
        &self.active
    }

    /// The most recently drawn classifier head.
    pub fn current_head(&self) -> usize {
        self.current_head
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_parts(self) -> (MultiHeadNet, OptimizerState, Vec<Event>) {
        (self.net, self.opt, self.events)
    }

    /// Heads whose losses and predictions drive selection.
    pub fn expert_set(&self) -> Vec<usize> {
        if self.settings.mode.single_head() {
            vec![0]
        } else {
            selection::expert_heads(self.net.head_count(), self.current_head)
        }
    }

    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochStats, TrainError> {
        self.opt.set_epoch(epoch);
        let steps_before = self.opt.steps();
        let mut stats = EpochStats {
            epoch,
            phase: Phase::Warmup,
            train_loss: 0.0,
            iterations: 0,
            optimizer_steps: 0,
            head_draws: vec![0; self.net.head_count()],
            selected: vec![true; self.view.len()],
            selection_status: None,
            gmm: None,
            weights: None,
            flags: Vec::new(),
        };
        if self.settings.mode == Mode::BaselineCe {
            stats.phase = Phase::Plain;
            self.plain_epoch(epoch, &mut stats)?;
        } else if epoch < self.settings.warmup_epochs {
            self.plain_epoch(epoch, &mut stats)?;
        } else {
            stats.phase = Phase::Select;
            self.select(epoch, &mut stats)?;
            if stats.selected.iter().any(|&s| s) {
                self.debiased_epoch(epoch, &mut stats)?;
            } else {
                stats.flags.push("empty_selection".into());
                stats.selected = vec![true; self.view.len()];
                self.state.selected = stats.selected.clone();
                self.plain_epoch(epoch, &mut stats)?;
            }
        }
        self.events.push(Event {
            epoch,
            kind: EventKind::Train,
        });
        if self.settings.selection.criterion == CriterionKind::Fluctuation {
            let heads = self.expert_set();
            selection::update_history(&mut self.state, &self.net, &self.view, &heads)?;
        }
        stats.optimizer_steps = self.opt.steps() - steps_before;
        Ok(stats)
    }

    fn select(&mut self, epoch: usize, stats: &mut EpochStats) -> Result<(), TrainError> {
        let heads = self.expert_set();
        let losses = selection::mean_head_losses(&self.net, &self.view, &heads)?;
        if let Some(sample) = losses.iter().position(|l| !l.is_finite()) {
            return Err(TrainError::NonFiniteSelection { epoch, sample });
        }
        self.state.expert_loss = losses;
        let outcome = selection::apply_criterion(
            &self.settings.selection,
            epoch,
            &self.state.expert_loss,
            &self.state,
            self.view.labels,
        )?;
        self.state.selected = outcome.selected.clone();
        self.events.push(Event {
            epoch,
            kind: EventKind::Select,
        });
        match outcome.status {
            SelectionStatus::Ok => {}
            SelectionStatus::InsufficientHistory => stats.flags.push("insufficient_history".into()),
            SelectionStatus::DegenerateLosses => stats.flags.push("degenerate_losses".into()),
        }
        stats.selected = outcome.selected;
        stats.selection_status = Some(outcome.status);
        stats.gmm = outcome.gmm;
        Ok(())
    }

    fn step(
        &mut self,
        x: &Matrix,
        targets: &[MixedTarget],
        head: usize,
        epoch: usize,
        iteration: usize,
    ) -> Result<f64, TrainError> {
        nn::backward_step(&mut self.net, &mut self.opt, x, targets, head).map_err(|e| match e {
            NnError::NonFiniteLoss { loss } => TrainError::NonFinite {
                epoch,
                iteration,
                loss,
            },
            other => other.into(),
        })
    }

    fn draw(&mut self, stats: &mut EpochStats) -> usize {
        let head = draw_head(&mut self.streams.head_draw, &self.active);
        stats.head_draws[head] += 1;
        head
    }

    /// Cross-entropy over a fresh permutation of every row, through one head
    /// per epoch or per mini-batch.
    fn plain_epoch(&mut self, epoch: usize, stats: &mut EpochStats) -> Result<(), TrainError> {
        let mut order: Vec<usize> = (0..self.view.len()).collect();
        order.shuffle(&mut self.streams.shuffle);
        let mut head = draw_head(&mut self.streams.head_draw, &self.active);
        let mut total = 0.0;
        let mut iterations = 0;
        for (it, chunk) in order.chunks(self.settings.batch_size).enumerate() {
            if it > 0 && self.settings.warmup_draw == WarmupDraw::Iteration {
                head = draw_head(&mut self.streams.head_draw, &self.active);
            }
            let x = self.view.features.select_rows(chunk);
            let targets: Vec<MixedTarget> = chunk.iter().map(|&i| MixedTarget::plain(self.view.labels[i])).collect();
            total += self.step(&x, &targets, head, epoch, it)?;
            stats.head_draws[head] += 1;
            self.current_head = head;
            iterations += 1;
        }
        stats.iterations = iterations;
        stats.train_loss = total / iterations.max(1) as f64;
        Ok(())
    }

    fn debiased_epoch(&mut self, epoch: usize, stats: &mut EpochStats) -> Result<(), TrainError> {
        let k = self.view.class_count;
        let labels = self.view.labels;
        let selected = stats.selected.clone();
        let members: Vec<usize> = (0..labels.len()).filter(|&i| selected[i]).collect();
        let selected_labels: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
        let forward = sampling::class_weights(&selected_labels, k)?;
        let weights = sampling::reverse_weights(&forward, self.settings.beta)?;
        self.events.push(Event {
            epoch,
            kind: EventKind::Weights,
        });
        let (sampler_v, sampler_vt) = if self.settings.mode == Mode::NoMixedSampling {
            let u = WeightedSampler::uniform_over(labels.len(), &members)?;
            (u.clone(), u)
        } else {
            let dv = sampling::per_sample_draw_weights(&selected, labels, &weights.forward)?;
            let dvt = sampling::per_sample_draw_weights(&selected, labels, &weights.reversed)?;
            if dv.redistributed || dvt.redistributed {
                stats.flags.push("weights_redistributed".into());
            }
            (WeightedSampler::new(&dv.weights)?, WeightedSampler::new(&dvt.weights)?)
        };
        stats.weights = Some(weights);

        let unlabeled: Vec<usize> = (0..labels.len()).filter(|&i| !selected[i]).collect();
        let sampler_u = if self.settings.mode == Mode::ItemSsl && !unlabeled.is_empty() {
            Some(WeightedSampler::uniform_over(labels.len(), &unlabeled)?)
        } else {
            if self.settings.mode == Mode::ItemSsl {
                stats.flags.push("ssl_no_unlabeled".into());
            }
            None
        };

        let b = self.settings.batch_size;
        let iterations = members.len().div_ceil(b);
        let mut total = 0.0;
        for it in 0..iterations {
            let iv = sampler_v.batch(&mut self.streams.sampler_v, b);
            let ivt = sampler_vt.batch(&mut self.streams.sampler_vtilde, b);
            let head = self.draw(stats);
            let xv = self.view.features.select_rows(&iv);
            let xvt = self.view.features.select_rows(&ivt);
            let lv: Vec<usize> = iv.iter().map(|&i| labels[i]).collect();
            let lvt: Vec<usize> = ivt.iter().map(|&i| labels[i]).collect();
            let loss = match (self.settings.mode, &sampler_u) {
                (Mode::NoMixup, _) => {
                    let tv: Vec<MixedTarget> = lv.iter().map(|&l| MixedTarget::plain(l)).collect();
                    let tvt: Vec<MixedTarget> = lvt.iter().map(|&l| MixedTarget::plain(l)).collect();
                    let a = self.step(&xv, &tv, head, epoch, it)?;
                    let c = self.step(&xvt, &tvt, head, epoch, it)?;
                    0.5 * (a + c)
                }
                (Mode::ItemSsl, Some(su)) => {
                    let (x, t) = self.ssl_batch(su, &xv, &lv, &xvt, &lvt)?;
                    self.step(&x, &t, head, epoch, it)?
                }
                _ => {
                    let mb = sampling::mixup_batch(&xv, &lv, &xvt, &lvt, self.settings.gamma, &mut self.streams.mixup)?;
                    self.step(&mb.features, &mb.targets, head, epoch, it)?
                }
            };
            total += loss;
            self.current_head = head;
        }
        stats.iterations = iterations;
        stats.train_loss = total / iterations.max(1) as f64;
        Ok(())
    }

    /// Labeled rows `B_v ‖ B_ṽ` mixed row-wise with pseudo-labeled rows from
    /// the unselected pool. Rows whose pseudo-label misses the confidence
    /// threshold stay unmixed; if none pass, this is the plain mixup batch.
    fn ssl_batch(
        &mut self,
        sampler_u: &WeightedSampler,
        xv: &Matrix,
        lv: &[usize],
        xvt: &Matrix,
        lvt: &[usize],
    ) -> Result<(Matrix, Vec<MixedTarget>), TrainError> {
        let rows = xv.rows() + xvt.rows();
        let iu = sampler_u.batch(&mut self.streams.ssl, rows);
        let mut xu = self.view.features.select_rows(&iu);
        let probs = nn::ensemble_probabilities(&self.net, &xu, &self.active)?;
        let pseudo: Vec<usize> = probs.iter_rows().map(nn::argmax).collect();
        let keep: Vec<usize> = (0..rows)
            .filter(|&j| match self.settings.ssl_confidence {
                Some(tau) => probs.row(j)[pseudo[j]] >= tau,
                None => true,
            })
            .collect();
        if keep.is_empty() {
            let mb = sampling::mixup_batch(xv, lv, xvt, lvt, self.settings.gamma, &mut self.streams.mixup)?;
            return Ok((mb.features, mb.targets));
        }
        if self.settings.ssl_jitter > 0.0 {
            let s = self.settings.ssl_jitter;
            for v in xu.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut self.streams.ssl);
                *v += s * z;
            }
        }
        let xl = xv.vstack(xvt);
        let ll: Vec<usize> = lv.iter().chain(lvt).copied().collect();
        let a = xl.select_rows(&keep);
        let la: Vec<usize> = keep.iter().map(|&j| ll[j]).collect();
        let u = xu.select_rows(&keep);
        let lu: Vec<usize> = keep.iter().map(|&j| pseudo[j]).collect();
        let mixed = sampling::mixup_batch(&a, &la, &u, &lu, self.settings.gamma, &mut self.streams.mixup)?;
        let mut x = xl;
        let mut targets: Vec<MixedTarget> = ll.iter().map(|&l| MixedTarget::plain(l)).collect();
        for (r, &j) in keep.iter().enumerate() {
            x.row_mut(j).copy_from_slice(mixed.features.row(r));
            targets[j] = mixed.targets[r];
        }
        Ok((x, targets))
    }
}

/// Ground-truth scoring of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub iterations: usize,
    pub optimizer_steps: u64,
    pub head_draws: Vec<usize>,
    pub test_accuracy: f64,
    pub class_accuracy: Vec<f64>,
    pub selected_count: usize,
    /// Selected samples per observed label.
    pub class_selected: Vec<usize>,
    pub selection: ClassSelectionMetrics,
    pub imbalance: ImbalanceRatio,
    pub weights: Option<ClassWeights>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub mode: Mode,
    pub seed: u64,
    pub class_count: usize,
    pub head_count: usize,
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<Event>,
}

/// Final-state digest of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    pub best_epoch: usize,
    pub final_class_accuracy: Vec<f64>,
    pub final_macro_fscore: f64,
    pub final_min_fscore: f64,
    pub final_class_precision: Vec<f64>,
    pub final_class_recall: Vec<f64>,
    pub final_class_fscore: Vec<f64>,
    pub final_selected_count: usize,
    pub final_class_selected: Vec<usize>,
    pub final_imbalance_ratio: f64,
    pub final_imbalance_has_empty_class: bool,
    pub final_weights: Option<ClassWeights>,
    pub optimizer_steps: u64,
    pub dataset_sha256: Option<String>,
}

impl MetricsLog {
    pub fn summary(&self) -> Option<RunSummary> {
        let last = self.epochs.last()?;
        let (best_epoch, best) = self
            .epochs
            .iter()
            .map(|e| (e.epoch, e.test_accuracy))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        Some(RunSummary {
            mode: self.mode,
            seed: self.seed,
            epochs: self.epochs.len(),
            final_test_accuracy: last.test_accuracy,
            best_test_accuracy: best,
            best_epoch,
            final_class_accuracy: last.class_accuracy.clone(),
            final_macro_fscore: last.selection.macro_fscore,
            final_min_fscore: last.selection.min_fscore(),
            final_class_precision: last.selection.precision.clone(),
            final_class_recall: last.selection.recall.clone(),
            final_class_fscore: last.selection.fscore.clone(),
            final_selected_count: last.selected_count,
            final_class_selected: last.class_selected.clone(),
            final_imbalance_ratio: last.imbalance.ratio,
            final_imbalance_has_empty_class: last.imbalance.has_empty_class,
            final_weights: last.weights.clone(),
            optimizer_steps: self.epochs.iter().map(|e| e.optimizer_steps).sum(),
            dataset_sha256: None,
        })
    }
}

pub struct RunOutput {
    pub net: MultiHeadNet,
    pub optimizer: OptimizerState,
    pub log: MetricsLog,
}

/// Trains on `data.train` as configured and scores every epoch.
pub fn run(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput, TrainError> {
    run_with(cfg, data, |_| {})
}

/// [`run`] with a callback after every scored epoch.
pub fn run_with(
    cfg: &RunConfig,
    data: &PreparedData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunOutput, TrainError> {
    cfg.validate()?;
    let train = &data.train;
    let k = train.class_count();
    if data.test.class_count() != k {
        return Err(ConfigError::Invalid {
            field: "data.test_csv",
            reason: format!("{} classes, training set has {k}", data.test.class_count()),
        }
        .into());
    }
    let mut trainer = Trainer::new(cfg, train.noisy_view())?;
    let mut records = Vec::with_capacity(cfg.run.epochs);
    for epoch in 0..cfg.run.epochs {
        let stats = trainer.run_epoch(epoch)?;
        let record = score_epoch(stats, trainer.net(), trainer.active_heads(), train, &data.test)?;
        log::debug!(
            "epoch {} {:?} loss {:.4} acc {:.4} selected {} macro_f {:.4}",
            record.epoch,
            record.phase,
            record.train_loss,
            record.test_accuracy,
            record.selected_count,
            record.selection.macro_fscore
        );
        on_epoch(&record);
        records.push(record);
    }
    let head_count = trainer.net().head_count();
    let (net, optimizer, events) = trainer.into_parts();
    Ok(RunOutput {
        net,
        optimizer,
        log: MetricsLog {
            mode: cfg.run.mode,
            seed: cfg.run.seed,
            class_count: k,
            head_count,
            epochs: records,
            events,
        },
    })
}

fn score_epoch(
    stats: EpochStats,
    net: &MultiHeadNet,
    heads: &[usize],
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<EpochRecord, TrainError> {
    let k = train.class_count();
    let eval = evaluate(net, test, heads)?;
    let selection = selection::selection_metrics(&stats.selected, train.noisy_labels(), train.true_labels(), k)?;
    let imbalance = selection::imbalance_ratio(&stats.selected, train.noisy_labels(), k);
    let mut class_selected = vec![0; k];
    for (&s, &l) in stats.selected.iter().zip(train.noisy_labels()) {
        if s {
            class_selected[l] += 1;
        }
    }
    Ok(EpochRecord {
        epoch: stats.epoch,
        phase: stats.phase,
        train_loss: stats.train_loss,
        iterations: stats.iterations,
        optimizer_steps: stats.optimizer_steps,
        head_draws: stats.head_draws,
        test_accuracy: eval.accuracy,
        class_accuracy: eval.class_accuracy,
        selected_count: class_selected.iter().sum(),
        class_selected,
        selection,
        imbalance,
        weights: stats.weights,
        flags: stats.flags,
    })
}
