//! Initialization, losses, reverse-mode gradients, mini-batch SGD and a
//! finite-difference gradient check.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{dropout_mask, trace, GcnModel, ModelConfig, SimSource, VideoGraphInput};

/// Standard deviation of the Gaussian used for the affinity transforms, the
/// input transform `g` and the classifier.
pub const INIT_STD: f64 = 0.01;

/// Builds a model: `w`, `w'`, `g` and the classifier are drawn from
/// `N(0, 0.01²)`; every graph-convolution weight starts at exactly zero;
/// norms start at gain 1, bias 0.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<GcnModel> {
    let mut model = GcnModel::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for m in [
        &mut model.transforms.w,
        &mut model.transforms.w_prime,
        &mut model.g_weight,
        &mut model.classifier,
    ] {
        m.data_mut()
            .iter_mut()
            .for_each(|v| *v = normal.sample(&mut rng));
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Single-label softmax cross-entropy.
    #[default]
    SoftmaxCe,
    /// Multi-label: mean over classes of per-class sigmoid cross-entropy.
    PerClassSigmoidBce,
}

/// A training target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    MultiHot(Vec<u8>),
}

impl Label {
    /// `{0, 1}` target vector of length `classes`.
    pub fn to_multi_hot(&self, classes: usize) -> Result<Vec<f64>> {
        match self {
            Label::Class(c) if *c < classes => {
                let mut v = vec![0.0; classes];
                v[*c] = 1.0;
                Ok(v)
            }
            Label::Class(c) => Err(Error::TargetOutOfRange {
                target: *c,
                classes,
            }),
            Label::MultiHot(v) if v.len() == classes && v.iter().all(|&b| b <= 1) => {
                Ok(v.iter().map(|&b| b as f64).collect())
            }
            Label::MultiHot(v) => Err(Error::Invalid(format!(
                "multi-hot target of length {} must hold 0/1 values for {classes} classes",
                v.len()
            ))),
        }
    }

    /// Class index; a multi-hot target qualifies only with exactly one bit.
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::MultiHot(v) => {
                let mut hot = v.iter().enumerate().filter(|(_, &b)| b == 1);
                match (hot.next(), hot.next()) {
                    (Some((i, _)), None) => Some(i),
                    _ => None,
                }
            }
        }
    }
}

/// Loss value and its gradient with respect to the logits.
pub fn loss(logits: &[f64], target: &Label, mode: LossMode) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if c == 0 {
        return Err(Error::Empty { op: "loss" });
    }
    match mode {
        LossMode::SoftmaxCe => {
            let class = target.class().ok_or_else(|| {
                Error::Invalid("softmax loss needs a single class target".into())
            })?;
            if class >= c {
                return Err(Error::TargetOutOfRange { target: class, classes: c });
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let grad = logits
                .iter()
                .enumerate()
                .map(|(i, z)| (z - lse).exp() - if i == class { 1.0 } else { 0.0 })
                .collect();
            Ok((lse - logits[class], grad))
        }
        LossMode::PerClassSigmoidBce => {
            let y = target.to_multi_hot(c)?;
            let n = c as f64;
            let mut value = 0.0;
            let mut grad = Vec::with_capacity(c);
            for (&z, &t) in logits.iter().zip(&y) {
                value += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
                grad.push((sigmoid(z) - t) / n);
            }
            Ok((value / n, grad))
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One gradient tensor per model parameter, in [`GcnModel::tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &GcnModel) -> Self {
        let views = model.tensors();
        Gradients {
            names: views.iter().map(|t| t.name.clone()).collect(),
            tensors: views.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Loss and exact gradients for one clip. The similarity graph is rebuilt
/// from the current transforms so `w` and `w'` receive gradients; front and
/// back graphs are constants.
pub fn backward(
    model: &GcnModel,
    input: &VideoGraphInput,
    target: &Label,
    mode: LossMode,
    dropout: Option<Matrix>,
) -> Result<(f64, Gradients)> {
    let t = trace(model, input, SimSource::Learned, dropout)?;
    let logits = t.tape.value(t.logits).data().to_vec();
    let (value, dlogits) = loss(&logits, target, mode)?;
    let seed = Matrix::from_vec(1, dlogits.len(), dlogits)?;
    let mut grads = t.tape.backward(t.logits, seed)?;
    let views = model.tensors();
    let names = views.iter().map(|v| v.name.clone()).collect();
    let tensors = views
        .iter()
        .zip(&t.params)
        .map(|(v, &var)| grads.take_or_zeros(var, (v.rows, v.cols)))
        .collect();
    Ok((value, Gradients { names, tensors }))
}

/// Loss of the training-mode forward pass (learned similarity graph, no
/// dropout).
pub fn loss_at(
    model: &GcnModel,
    input: &VideoGraphInput,
    target: &Label,
    mode: LossMode,
) -> Result<f64> {
    let t = trace(model, input, SimSource::Learned, None)?;
    Ok(loss(t.tape.value(t.logits).data(), target, mode)?.0)
}

/// Which graph branches are allowed to learn. Disabled branches keep their
/// propagation weights frozen at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Joint,
    SimilarityOnly,
    SpatioTemporalOnly,
    /// No graph propagation at all.
    None,
}

impl Branches {
    fn similarity(self) -> bool {
        matches!(self, Branches::Joint | Branches::SimilarityOnly)
    }

    fn spatio_temporal(self) -> bool {
        matches!(self, Branches::Joint | Branches::SpatioTemporalOnly)
    }

    /// Whether tensor `name` is frozen under this setting.
    pub fn freezes(self, name: &str) -> bool {
        let sim = matches!(name, "w" | "w_prime" | "g_weight") || name.starts_with("sim_weight.");
        let st = name.starts_with("st_front.") || name.starts_with("st_back.");
        (sim && !self.similarity()) || (st && !self.spatio_temporal())
    }
}

/// A clip ready for training: assembled graphs plus its target.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: VideoGraphInput,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// `(iteration, multiplier)`: from that iteration on the rate is
    /// `learning_rate * multiplier`. Iterations strictly increase.
    pub schedule: Vec<(usize, f64)>,
    pub total_iters: usize,
    /// Clips per step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub weight_decay: f64,
    pub momentum: f64,
    pub branches: Branches,
    /// Dropout on the pooled feature during training.
    pub dropout: bool,
    /// Record wall-clock milliseconds in the metrics log. Off by default so
    /// that logs are reproducible byte for byte.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.00125,
            schedule: vec![(1800, 0.1)],
            total_iters: 2000,
            batch_size: 8,
            seed: 0,
            loss_mode: LossMode::SoftmaxCe,
            weight_decay: 0.0,
            momentum: 0.0,
            branches: Branches::Joint,
            dropout: true,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// Default schedule for `total_iters`: drop by 10x for the last 10%.
    pub fn with_iters(mut self, total_iters: usize) -> Self {
        self.total_iters = total_iters;
        self.schedule = vec![(total_iters * 9 / 10, 0.1)];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invalid(
                "schedule iterations must be strictly increasing".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        let mult = self
            .schedule
            .iter()
            .take_while(|(start, _)| *start <= iter)
            .last()
            .map_or(1.0, |(_, m)| *m);
        self.learning_rate * mult
    }
}

/// Mutable optimizer state carried across steps.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub iter: usize,
    velocity: Option<Gradients>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl TrainState {
    pub fn new() -> Self {
        TrainState {
            iter: 0,
            velocity: None,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        }
    }

    /// Next `batch` sample indices, reshuffling deterministically at each
    /// epoch boundary.
    pub fn next_batch(&mut self, samples: usize, batch: usize, seed: u64) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch.min(samples) {
            if self.cursor >= self.order.len() {
                self.order = (0..samples).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5eed_0000 + self.epoch));
                self.order.shuffle(&mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

impl Default for TrainState {
    fn default() -> Self {
        Self::new()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Result of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
}

/// One SGD step on `batch`: `param -= lr * mean_gradient`. Per-clip
/// passes run in parallel; the reduction runs in batch order.
pub fn train_step(
    model: &mut GcnModel,
    state: &mut TrainState,
    batch: &[&TrainSample],
    config: &TrainConfig,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Empty { op: "train_step" });
    }
    let iter = state.iter;
    let lr = config.lr_at(iter);
    let frozen_model: &GcnModel = model;
    let results: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .enumerate()
        .map(|(slot, sample)| {
            let mask = if config.dropout && frozen_model.config.dropout > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, mix(iter as u64, slot as u64)));
                Some(dropout_mask(
                    frozen_model.config.dropout,
                    2 * frozen_model.config.d,
                    &mut rng,
                ))
            } else {
                None
            };
            backward(frozen_model, &sample.input, &sample.label, config.loss_mode, mask)
        })
        .collect();

    let mut total = Gradients::zeros_like(model);
    let mut loss_sum = 0.0;
    for r in results {
        let (l, g) = r?;
        loss_sum += l;
        total.add_assign(&g)?;
    }
    let mean_loss = loss_sum / batch.len() as f64;
    if !mean_loss.is_finite() || !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {mean_loss} at iteration {iter} (lr {lr}); parameters left at their last finite values"
        )));
    }
    total.scale(1.0 / batch.len() as f64);

    if config.momentum > 0.0 {
        let velocity = state.velocity.get_or_insert_with(|| Gradients::zeros_like(model));
        for (v, g) in velocity.tensors.iter_mut().zip(&total.tensors) {
            for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = config.momentum * *vv + gv;
            }
        }
        total = velocity.clone();
    }

    for (param, grad) in model.tensors_mut().into_iter().zip(&total.tensors) {
        if config.branches.freezes(&param.name) {
            continue;
        }
        for (p, g) in param.data.iter_mut().zip(grad.data()) {
            *p -= lr * (g + config.weight_decay * *p);
        }
    }
    state.iter += 1;
    Ok(StepReport {
        iter,
        loss: mean_loss,
        lr,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
    pub wall_ms: Option<f64>,
}

/// Trains `model` on `samples` for `config.total_iters` steps and returns
/// the per-iteration metrics log.
pub fn fit(
    model: &mut GcnModel,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<Vec<MetricRecord>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty { op: "fit" });
    }
    for t in model.tensors_mut() {
        if config.branches.freezes(&t.name) {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let start = Instant::now();
    let mut state = TrainState::new();
    let mut log = Vec::with_capacity(config.total_iters);
    for _ in 0..config.total_iters {
        let idx = state.next_batch(samples.len(), config.batch_size, config.seed);
        let batch: Vec<&TrainSample> = idx.iter().map(|&i| &samples[i]).collect();
        let report = train_step(model, &mut state, &batch, config)?;
        log.push(MetricRecord {
            iter: report.iter,
            loss: report.loss,
            lr: report.lr,
            seed: config.seed,
            wall_ms: config
                .wall_clock
                .then(|| start.elapsed().as_secs_f64() * 1e3),
        });
    }
    Ok(log)
}

/// Writes the metrics log as newline-delimited JSON.
pub fn metrics_ndjson(log: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("plain record"));
        out.push('\n');
    }
    out
}

/// Finite-difference comparison for one tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss_mode: LossMode,
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Denominator floor of the relative error: differences between gradients
/// smaller than this in magnitude are judged in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_FLOOR)
}

/// Compares reverse-mode gradients of every parameter against central
/// differences with step `h`. Dropout is off.
pub fn gradient_check(
    model: &GcnModel,
    input: &VideoGraphInput,
    target: &Label,
    mode: LossMode,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(model, input, target, mode, None)?;
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let count = model.tensors().len();
    for ti in 0..count {
        let len = model.tensors()[ti].data.len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..len {
            let original = model.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = original + h;
            let plus = loss_at(&probe, input, target, mode)?;
            probe.tensors_mut()[ti].data[k] = original - h;
            let minus = loss_at(&probe, input, target, mode)?;
            probe.tensors_mut()[ti].data[k] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors[ti].data()[k];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        tensors.push(TensorCheck {
            name: analytic.names[ti].clone(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = tensors.iter().fold(0.0f64, |m, t| m.max(t.max_rel_error));
    Ok(GradCheckReport {
        loss_mode: mode,
        step: h,
        tolerance,
        passed: max_rel_error < tolerance,
        tensors,
        max_rel_error,
    })
}

/// A seeded instance for gradient checks: `nodes` proposals over
/// consecutive frames, two per frame with overlapping boxes, random features,
/// and a model whose every parameter is perturbed away from its initial
/// value so no path is trivially zero.
pub fn gradcheck_instance(
    nodes: usize,
    d: usize,
    layers: usize,
    classes: usize,
    seed: u64,
) -> Result<(GcnModel, VideoGraphInput)> {
    use crate::data::{assemble, VideoRecord};
    use crate::regions::{BoundingBox, RegionProposal};
    use rand::Rng;

    if nodes == 0 {
        return Err(Error::Empty { op: "gradcheck_instance" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let proposals = (0..nodes)
        .map(|i| {
            let x = rng.random_range(0.0..6.0);
            let y = rng.random_range(0.0..6.0);
            Ok(RegionProposal {
                frame: i / 2,
                bbox: BoundingBox::new(x, y, x + 8.0, y + 8.0)?,
                feature: (0..d).map(|_| normal.sample(&mut rng)).collect(),
                source_id: format!("n{i}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = init_model(ModelConfig::new(d, layers, classes), seed.wrapping_add(1))?;
    let perturb = Normal::new(0.0, 0.3).expect("valid std");
    for t in model.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += perturb.sample(&mut rng));
    }
    let record = VideoRecord {
        video_id: format!("gradcheck-{seed}"),
        proposals,
        global_feature: Some((0..d).map(|_| normal.sample(&mut rng)).collect()),
        label: Label::Class(0),
        volume: None,
    };
    let input = assemble(&record, &model.transforms)?;
    Ok((model, input))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_zero_on_graph_weights() {
        let a = init_model(ModelConfig::new(8, 3, 4), 42).unwrap();
        let b = init_model(ModelConfig::new(8, 3, 4), 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(ModelConfig::new(8, 3, 4), 43).unwrap());
        for w in &a.sim_weights {
            assert!(w.data().iter().all(|&v| v == 0.0));
        }
        for w in &a.st_weights {
            assert!(w.front.data().iter().chain(w.back.data()).all(|&v| v == 0.0));
        }
        assert!(a.sim_norms.iter().all(|n| n.gain.iter().all(|&g| g == 1.0)));
        assert!(a.classifier_bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_std_matches() {
        let m = init_model(ModelConfig::new(512, 1, 2), 7).unwrap();
        let data = m.transforms.w.data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let std = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - INIT_STD).abs() < 0.1 * INIT_STD, "{std}");
    }

    #[test]
    fn loss_closed_forms() {
        let (v, _) = loss(&[0.3; 5], &Label::Class(2), LossMode::SoftmaxCe).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-15);
        let (v, g) = loss(&[0.0], &Label::MultiHot(vec![1]), LossMode::PerClassSigmoidBce).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn loss_gradients_match_central_differences() {
        let logits = [0.7, -1.3, 2.1, 0.05];
        let targets = [
            (Label::Class(1), LossMode::SoftmaxCe),
            (Label::MultiHot(vec![1, 0, 1, 0]), LossMode::PerClassSigmoidBce),
            (Label::Class(3), LossMode::PerClassSigmoidBce),
        ];
        for (target, mode) in targets {
            let (_, grad) = loss(&logits, &target, mode).unwrap();
            for i in 0..logits.len() {
                let h = 1e-6;
                let mut p = logits;
                p[i] += h;
                let mut m = logits;
                m[i] -= h;
                let num = (loss(&p, &target, mode).unwrap().0 - loss(&m, &target, mode).unwrap().0)
                    / (2.0 * h);
                assert!(relative_error(grad[i], num) < 1e-6, "{mode:?} {i}: {} vs {num}", grad[i]);
            }
        }
    }

    #[test]
    fn loss_rejects_bad_targets() {
        assert!(matches!(
            loss(&[0.0, 1.0], &Label::Class(2), LossMode::SoftmaxCe),
            Err(Error::TargetOutOfRange { .. })
        ));
        assert!(loss(&[0.0, 1.0], &Label::MultiHot(vec![1, 1]), LossMode::SoftmaxCe).is_err());
        assert!(loss(&[0.0, 1.0], &Label::MultiHot(vec![1]), LossMode::PerClassSigmoidBce).is_err());
        assert!(loss(&[0.0, 1.0], &Label::Class(5), LossMode::PerClassSigmoidBce).is_err());
    }

    #[test]
    fn losses_are_non_negative_and_stable() {
        for z in [-800.0, -3.0, 0.0, 4.0, 900.0] {
            let (v, g) = loss(&[z, -z], &Label::Class(0), LossMode::SoftmaxCe).unwrap();
            assert!(v >= 0.0 && v.is_finite() && g.iter().all(|x| x.is_finite()));
            let (v, g) = loss(&[z, -z], &Label::MultiHot(vec![0, 1]), LossMode::PerClassSigmoidBce).unwrap();
            assert!(v >= 0.0 && v.is_finite() && g.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn schedule_and_validation() {
        let cfg = TrainConfig::default().with_iters(100);
        assert_eq!(cfg.lr_at(0), 0.00125);
        assert_eq!(cfg.lr_at(89), 0.00125);
        assert!((cfg.lr_at(90) - 0.000125).abs() < 1e-18);
        let mut bad = cfg.clone();
        bad.schedule = vec![(10, 0.1), (10, 0.01)];
        assert!(bad.validate().is_err());
        bad.schedule.clear();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batches_cover_every_sample_each_epoch() {
        let mut s = TrainState::new();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch(6, 2, 9)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let (model, input) = gradcheck_instance(6, 8, 2, 3, 17).unwrap();
        for (mode, target) in [
            (LossMode::SoftmaxCe, Label::Class(2)),
            (LossMode::PerClassSigmoidBce, Label::MultiHot(vec![1, 0, 1])),
        ] {
            let report = gradient_check(&model, &input, &target, mode, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{report:#?}");
            assert!(report.tensors.iter().any(|t| t.name == "w_prime"));
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (mut model, input) = gradcheck_instance(6, 4, 1, 2, 3).unwrap();
        let before = model.clone();
        let sample = TrainSample { input, label: Label::Class(1) };
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        train_step(&mut model, &mut TrainState::new(), &[&sample], &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn single_step_moves_by_minus_lr_gradient() {
        let (mut model, input) = gradcheck_instance(6, 4, 1, 2, 4).unwrap();
        let sample = TrainSample { input, label: Label::Class(1) };
        let cfg = TrainConfig { learning_rate: 0.01, dropout: false, ..TrainConfig::default() };
        let (_, grads) = backward(&model, &sample.input, &sample.label, cfg.loss_mode, None).unwrap();
        let before = model.clone();
        train_step(&mut model, &mut TrainState::new(), &[&sample], &cfg).unwrap();
        for ((after, prior), g) in model.tensors().iter().zip(before.tensors()).zip(&grads.tensors) {
            for ((a, p), gv) in after.data.iter().zip(prior.data).zip(g.data()) {
                assert_eq!(*a, p - 0.01 * gv);
            }
        }
    }

    #[test]
    fn frozen_names() {
        assert!(Branches::None.freezes("sim_weight.0"));
        assert!(Branches::None.freezes("st_back.2"));
        assert!(!Branches::None.freezes("sim_norm.0.gain"));
        assert!(Branches::SimilarityOnly.freezes("st_front.0"));
        assert!(!Branches::SimilarityOnly.freezes("w_prime"));
        assert!(Branches::SpatioTemporalOnly.freezes("g_weight"));
        assert!(!Branches::Joint.freezes("classifier"));
    }
}
