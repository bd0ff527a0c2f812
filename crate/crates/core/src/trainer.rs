//! ElasticNet-regularised training: SGD with Nesterov momentum under a
//! clipped cosine schedule, best-validation checkpointing and λ sweeps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadKind, ModelBundle, ModelConfig};
use crate::ops;
use crate::synth::{augment, Dataset, Sample};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Cells with magnitude below this count as zero in sparsity censuses.
pub const SPARSITY_THRESHOLD: f32 = 1e-6;

/// How the second penalty term is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Mode {
    /// `sqrt(Σ a²)`
    #[default]
    Norm,
    /// `Σ a²`
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub l2_mode: L2Mode,
    /// Random horizontal and vertical flips of training samples.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr_init: 1e-3,
            lr_min: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda1: 0.0,
            lambda2: 0.0,
            l2_mode: L2Mode::Norm,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_min > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.lr_min > self.lr_init {
            return bad(format!("lr_min {} exceeds lr_init {}", self.lr_min, self.lr_init));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay must be non-negative".into());
        }
        check_lambdas(self.lambda1, self.lambda2)
    }
}

fn check_lambdas(lambda1: f64, lambda2: f64) -> Result<()> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty weights must be finite and non-negative, got lambda1={lambda1} lambda2={lambda2}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub l1_penalty: f64,
    pub l2_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(ce: f64, l1: f64, l2: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            ce,
            l1_penalty: l1,
            l2_penalty: l2,
            total: ce + lambda1 * l1 + lambda2 * l2,
        }
    }

    fn accumulate(&mut self, other: &LossBreakdown) {
        self.ce += other.ce;
        self.l1_penalty += other.l1_penalty;
        self.l2_penalty += other.l2_penalty;
        self.total += other.total;
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            ce: self.ce * factor,
            l1_penalty: self.l1_penalty * factor,
            l2_penalty: self.l2_penalty * factor,
            total: self.total * factor,
        }
    }
}

fn penalties(evidence: &Tensor, mode: L2Mode) -> (f64, f64) {
    let l1: f64 = evidence.data().iter().map(|&a| (a as f64).abs()).sum();
    let ss: f64 = evidence.data().iter().map(|&a| (a as f64) * (a as f64)).sum();
    let l2 = match mode {
        L2Mode::Norm => ss.sqrt(),
        L2Mode::Squared => ss,
    };
    (l1, l2)
}

/// `CE + λ1·Σ|A| + λ2·‖A‖₂` for one sample.
pub fn elasticnet_loss(
    evidence: &Tensor,
    probs: &Tensor,
    label: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossBreakdown> {
    elasticnet_loss_with(evidence, probs, label, lambda1, lambda2, L2Mode::Norm)
}

pub fn elasticnet_loss_with(
    evidence: &Tensor,
    probs: &Tensor,
    label: usize,
    lambda1: f64,
    lambda2: f64,
    mode: L2Mode,
) -> Result<LossBreakdown> {
    check_lambdas(lambda1, lambda2)?;
    let ce = ops::cross_entropy(probs, label)? as f64;
    let (l1, l2) = penalties(evidence, mode);
    Ok(LossBreakdown::new(ce, l1, l2, lambda1, lambda2))
}

/// Records the regularised loss on `tape`. `evidence` is `None` for
/// black-box heads, whose loss is plain cross-entropy.
pub fn record_loss(
    tape: &mut Tape,
    evidence: Option<NodeId>,
    probs: NodeId,
    label: usize,
    lambda1: f64,
    lambda2: f64,
    mode: L2Mode,
) -> Result<(NodeId, LossBreakdown)> {
    check_lambdas(lambda1, lambda2)?;
    let ce = tape.cross_entropy(probs, label)?;
    let ce_value = tape.value(ce)?.item() as f64;
    let Some(ev) = evidence else {
        return Ok((ce, LossBreakdown::new(ce_value, 0.0, 0.0, lambda1, lambda2)));
    };
    let (l1_value, l2_value) = penalties(tape.value(ev)?, mode);
    let l1 = tape.abs_sum(ev)?;
    let l2 = match mode {
        L2Mode::Norm => tape.l2_norm(ev)?,
        L2Mode::Squared => tape.sum_squares(ev)?,
    };
    let l1 = tape.scale(l1, lambda1 as f32)?;
    let l2 = tape.scale(l2, lambda2 as f32)?;
    let total = tape.add(ce, l1)?;
    let total = tape.add(total, l2)?;
    Ok((total, LossBreakdown::new(ce_value, l1_value, l2_value, lambda1, lambda2)))
}

/// Cosine annealing from `lr_init` to `lr_min`, clipped at `lr_min`.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return config.lr_init;
    }
    let progress = step.min(total_steps) as f64 / total_steps as f64;
    let lr = config.lr_min
        + 0.5 * (config.lr_init - config.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos());
    lr.max(config.lr_min)
}

/// One Nesterov SGD update with decoupled-into-gradient weight decay:
/// `g' = g + wd·w; v ← m·v + g'; w ← w − lr·(g' + m·v)`.
pub fn sgd_nesterov_step(
    weights: &mut Tensor,
    grads: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if weights.shape() != grads.shape() || weights.shape() != velocity.shape() {
        return Err(Error::shape(
            "sgd step",
            format!(
                "weights {:?}, grads {:?} and velocity {:?} differ",
                weights.shape(),
                grads.shape(),
                velocity.shape()
            ),
        ));
    }
    let (lr, m, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((w, &g), v) in weights
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(velocity.data_mut())
    {
        let g = g + wd * *w;
        *v = m * *v + g;
        *w -= lr * (g + m * *v);
    }
    Ok(())
}

/// Area under the ROC curve in Mann–Whitney form, ties counting one half.
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "one label per score");
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Average ranks over tie groups, then the rank-sum statistic.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&t| positive[order[t]]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Classification summary of a model over a set of samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Disease-versus-healthy AUC with score `1 − p(class 0)`.
    pub auc: Option<f64>,
    /// Fraction of evidence cells below [`SPARSITY_THRESHOLD`] in magnitude;
    /// absent for black-box heads.
    pub sparsity: Option<f64>,
}

pub fn evaluate(model: &ModelBundle, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
    }
    let per_sample: Vec<(bool, f64, Option<(usize, usize)>)> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.image)?;
            let correct = p.predicted_class() == s.label;
            let score = 1.0 - p.probs.data()[0] as f64;
            let zeros = p.evidence.as_ref().map(|e| {
                let z = e.data().iter().filter(|a| a.abs() < SPARSITY_THRESHOLD).count();
                (z, e.numel())
            });
            Ok((correct, score, zeros))
        })
        .collect::<Result<_>>()?;
    let correct = per_sample.iter().filter(|r| r.0).count();
    let scores: Vec<f64> = per_sample.iter().map(|r| r.1).collect();
    let positive: Vec<bool> = samples.iter().map(|s| s.label != 0).collect();
    let sparsity = if model.head_kind() == HeadKind::SoftCam {
        let (z, n) = per_sample
            .iter()
            .filter_map(|r| r.2)
            .fold((0, 0), |acc, (z, n)| (acc.0 + z, acc.1 + n));
        Some(z as f64 / n as f64)
    } else {
        None
    };
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        auc: roc_auc(&scores, &positive),
        sparsity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    /// Mean over training samples.
    pub loss: LossBreakdown,
    pub val_acc: f64,
    pub val_auc: Option<f64>,
    pub sparsity: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation accuracy, ties broken by AUC.
    pub model: ModelBundle,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

fn better(candidate: &EpochRecord, best: &EpochRecord) -> bool {
    let auc = |r: &EpochRecord| r.val_auc.unwrap_or(f64::NEG_INFINITY);
    candidate.val_acc > best.val_acc || (candidate.val_acc == best.val_acc && auc(candidate) > auc(best))
}

/// Loss and summed parameter gradients for one batch.
fn batch_gradients(
    model: &ModelBundle,
    batch: &[Sample],
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let per_sample: Vec<(LossBreakdown, Vec<Tensor>)> = batch
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let trace = model.trace(&mut tape, &s.image)?;
            let (total, loss) = record_loss(
                &mut tape,
                trace.evidence,
                trace.probs,
                s.label,
                config.lambda1,
                config.lambda2,
                config.l2_mode,
            )?;
            let grads = model.backward(&tape, total)?;
            let g = trace.params.iter().map(|&p| grads.wrt(p)).collect::<Result<Vec<_>>>()?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss.accumulate(&l);
        for (acc, g) in grads.iter_mut().zip(&g) {
            acc.add_assign(g)?;
        }
    }
    Ok((loss, grads))
}

pub fn train(model: ModelBundle, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, dataset, config, |_| {})
}

/// Trains `model` on the training split, calling `on_epoch` after each
/// epoch's validation pass.
pub fn train_with(
    mut model: ModelBundle,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let classes = model.classes();
    if let Some(s) = dataset.train.iter().chain(&dataset.val).find(|s| s.label >= classes) {
        return Err(Error::InvalidArgument(format!(
            "sample {} has label {} but the model has {classes} classes",
            s.id, s.label
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Tensor> = model.parameters().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let n = dataset.train.len();
    let batches = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(ModelBundle, usize)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for b in 0..batches {
            let idx = &order[b * config.batch_size..((b + 1) * config.batch_size).min(n)];
            let batch: Vec<Sample> = idx
                .iter()
                .map(|&i| {
                    let s = &dataset.train[i];
                    if config.augment {
                        augment(s, rng.random())
                    } else {
                        s.clone()
                    }
                })
                .collect();
            let (loss, grads) = batch_gradients(&model, &batch, config)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss.accumulate(&loss);
            let lr = lr_schedule(epoch * batches + b, total_steps, config);
            let inv = 1.0 / batch.len() as f32;
            for ((w, g), v) in model.parameters_mut().into_iter().zip(grads).zip(&mut velocity) {
                sgd_nesterov_step(w, &g.scale(inv), v, lr, config.momentum, config.weight_decay)?;
            }
        }
        let eval = evaluate(&model, &dataset.val)?;
        let record = EpochRecord {
            epoch,
            lr: lr_schedule(epoch * batches, total_steps, config),
            loss: epoch_loss.scaled(1.0 / n as f64),
            val_acc: eval.accuracy,
            val_auc: eval.auc,
            sparsity: eval.sparsity,
        };
        on_epoch(&record);
        let improved = match &best {
            None => true,
            Some((_, e)) => better(&record, &log[*e]),
        };
        if improved {
            best = Some((model.clone(), epoch));
        }
        log.push(record);
    }
    let (model, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, best_epoch, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub val_acc: f64,
    pub val_auc: Option<f64>,
    pub sparsity: Option<f64>,
    pub best_epoch: usize,
    /// Epoch at which training diverged; such rows are never selected.
    pub diverged_epoch: Option<usize>,
}

impl SweepRow {
    pub fn diverged(&self) -> bool {
        self.diverged_epoch.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Rows in grid order.
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the selected grid point.
    pub selected: usize,
}

impl SweepTable {
    /// Rows by descending validation accuracy, then AUC, then grid order.
    pub fn ranked(&self) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        let auc = |r: &SweepRow| r.val_auc.unwrap_or(f64::NEG_INFINITY);
        rows.sort_by(|a, b| {
            b.val_acc
                .total_cmp(&a.val_acc)
                .then(auc(b).total_cmp(&auc(a)))
                .then(a.index.cmp(&b.index))
        });
        rows
    }
}

/// Largest `λ1 + λ2` whose validation accuracy is within one point of the
/// unregularised run, or of the best run when the grid has no converged
/// `(0, 0)` point.
pub fn select_lambda(rows: &[SweepRow]) -> usize {
    let converged = || rows.iter().filter(|r| !r.diverged());
    let reference = converged()
        .find(|r| r.lambda1 == 0.0 && r.lambda2 == 0.0)
        .map(|r| r.val_acc)
        .unwrap_or_else(|| converged().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max));
    let mut selected = 0;
    let mut strength = f64::NEG_INFINITY;
    for (i, r) in rows.iter().enumerate() {
        let s = r.lambda1 + r.lambda2;
        if !r.diverged() && r.val_acc >= reference - 0.01 - 1e-12 && s > strength {
            selected = i;
            strength = s;
        }
    }
    selected
}

/// One full training per `(λ1, λ2)` grid point, grid point `i` using
/// training seed `base.seed ^ i`. Diverged points are reported, not raised.
pub fn sweep_lambda(
    model_config: &ModelConfig,
    base: &TrainConfig,
    grid: &[(f64, f64)],
    dataset: &Dataset,
) -> Result<SweepTable> {
    sweep_lambda_models(model_config, base, grid, dataset).map(|(table, _)| table)
}

/// [`sweep_lambda`] that also returns the best checkpoint of every grid
/// point (`None` for diverged points), in grid order.
pub fn sweep_lambda_models(
    model_config: &ModelConfig,
    base: &TrainConfig,
    grid: &[(f64, f64)],
    dataset: &Dataset,
) -> Result<(SweepTable, Vec<Option<ModelBundle>>)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let results = grid
        .par_iter()
        .enumerate()
        .map(|(index, &(lambda1, lambda2))| {
            let config = TrainConfig {
                lambda1,
                lambda2,
                seed: base.seed ^ index as u64,
                ..base.clone()
            };
            let outcome = match train(ModelBundle::init(model_config.clone())?, dataset, &config) {
                Ok(o) => o,
                Err(Error::Diverged { epoch }) => {
                    let row = SweepRow {
                        index,
                        lambda1,
                        lambda2,
                        val_acc: 0.0,
                        val_auc: None,
                        sparsity: None,
                        best_epoch: 0,
                        diverged_epoch: Some(epoch),
                    };
                    return Ok((row, None));
                }
                Err(e) => return Err(e),
            };
            let best = &outcome.log[outcome.best_epoch];
            let row = SweepRow {
                index,
                lambda1,
                lambda2,
                val_acc: best.val_acc,
                val_auc: best.val_auc,
                sparsity: best.sparsity,
                best_epoch: outcome.best_epoch,
                diverged_epoch: None,
            };
            Ok((row, Some(outcome.model)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, models): (Vec<SweepRow>, Vec<Option<ModelBundle>>) = results.into_iter().unzip();
    let selected = select_lambda(&rows);
    Ok((SweepTable { rows, selected }, models))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let probs = Tensor::new([2], vec![0.25, 0.75]).unwrap();
        let ev = Tensor::new([1, 2, 2], vec![1.0, -2.0, 0.0, 3.0]).unwrap();
        let dense = elasticnet_loss(&ev, &probs, 1, 0.0, 0.0).unwrap();
        assert_eq!(dense.total, dense.ce);
        assert!((dense.ce - -(0.75f64.ln())).abs() < 1e-6);
        assert_eq!(dense.l1_penalty, 6.0);
        assert!((dense.l2_penalty - 14f64.sqrt()).abs() < 1e-12);
        let zero = elasticnet_loss(&Tensor::zeros([2, 3, 3]), &probs, 0, 1.0, 1.0).unwrap();
        assert_eq!((zero.l1_penalty, zero.l2_penalty), (0.0, 0.0));
        let sq = elasticnet_loss_with(&ev, &probs, 1, 0.0, 1.0, L2Mode::Squared).unwrap();
        assert_eq!(sq.l2_penalty, 14.0);
        assert!(elasticnet_loss(&ev, &probs, 1, -1.0, 0.0).is_err());
        assert!(elasticnet_loss(&ev, &probs, 1, 0.0, -0.5).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig::default();
        assert!((lr_schedule(0, 100, &c) - 1e-3).abs() < 1e-15);
        assert!((lr_schedule(100, 100, &c) - 1e-4).abs() < 1e-15);
        assert!((lr_schedule(50, 100, &c) - 5.5e-4).abs() < 1e-15);
    }

    #[test]
    fn nesterov_examples() {
        let mut w = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let mut v = Tensor::zeros([3]);
        sgd_nesterov_step(&mut w, &Tensor::zeros([3]), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w, before);
        let g = Tensor::new([3], vec![1.0, 2.0, -4.0]).unwrap();
        sgd_nesterov_step(&mut w, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        for i in 0..3 {
            let expected = before.data()[i] - 0.1 * 1.9 * g.data()[i];
            assert!((w.data()[i] - expected).abs() < 1e-6);
        }
        assert!(sgd_nesterov_step(&mut w, &Tensor::zeros([2]), &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn nesterov_descends_quadratic_bowl() {
        let mut w = Tensor::new([2], vec![3.0, -4.0]).unwrap();
        let mut v = Tensor::zeros([2]);
        let f = |w: &Tensor| w.data().iter().map(|x| x * x).sum::<f32>();
        let start = f(&w);
        for _ in 0..200 {
            let g = w.scale(2.0);
            sgd_nesterov_step(&mut w, &g, &mut v, 0.01, 0.9, 0.0).unwrap();
        }
        assert!(f(&w) * 100.0 <= start, "{} vs {}", f(&w), start);
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50 {
            let n = 2 + trial * 4;
            // Coarse scores so that ties occur.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
            let pos: Vec<bool> = (0..n).map(|i| i % 3 == 0 || rng.random_bool(0.3)).collect();
            let mut wins = 0.0;
            let (mut np, mut nn) = (0usize, 0usize);
            for i in 0..n {
                if pos[i] {
                    np += 1;
                } else {
                    nn += 1;
                }
                for j in 0..n {
                    if pos[i] && !pos[j] {
                        wins += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            let brute = if np == 0 || nn == 0 { None } else { Some(wins / (np * nn) as f64) };
            assert_eq!(roc_auc(&scores, &pos), brute, "trial {trial}");
        }
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn selection_rule() {
        let row = |index, l1, acc| SweepRow {
            index,
            lambda1: l1,
            lambda2: 0.0,
            val_acc: acc,
            val_auc: None,
            sparsity: None,
            best_epoch: 0,
            diverged_epoch: None,
        };
        let rows = vec![row(0, 0.0, 0.96), row(1, 0.01, 0.955), row(2, 0.1, 0.951), row(3, 1.0, 0.90)];
        assert_eq!(select_lambda(&rows), 2);
        let no_ref = vec![row(0, 0.1, 0.80), row(1, 0.5, 0.795), row(2, 1.0, 0.7)];
        assert_eq!(select_lambda(&no_ref), 1);
        let mut diverged = rows.clone();
        diverged[2].diverged_epoch = Some(3);
        assert_eq!(select_lambda(&diverged), 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr_min: 1e-2, ..Default::default() },
            TrainConfig { lr_init: 0.0, ..Default::default() },
            TrainConfig { lambda1: -1.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "lambda1": 0.5}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.batch_size, 16);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }
}
