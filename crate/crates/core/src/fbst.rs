//! Student/teacher training on a single user.
//!
//! The student learns from labels (cross-entropy) and, once a teacher has been
//! loaded from the server, from the teacher's hidden-layer outputs (squared
//! feature distance). The teacher only ever changes through
//! [`FbstPair::load_teacher`]; it runs in inference mode and no gradient flows
//! into it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledSeries;
use crate::error::{Error, Result};
use crate::extractor::{FeatureExtractor, ForwardTrace, TraceGrads, WeightBundle, PARAM_NAMES};
use crate::nncore::{AdamConfig, AdamState, Differentiable};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdReduction {
    /// Sum squared differences over features and layers, average over the batch.
    #[default]
    BatchMeanSumFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbstConfig {
    /// Weight of the supervised term; the distillation term gets `1 - epsilon`.
    pub epsilon: f64,
    pub local_epochs_per_round: usize,
    pub batch_size: usize,
    pub kd_reduction: KdReduction,
    pub adam: AdamConfig,
}

impl Default for FbstConfig {
    fn default() -> Self {
        FbstConfig {
            epsilon: 0.9,
            local_epochs_per_round: 1,
            batch_size: 16,
            kd_reduction: KdReduction::BatchMeanSumFeatures,
            adam: AdamConfig::default(),
        }
    }
}

impl FbstConfig {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.local_epochs_per_round == 0 {
            return Err(Error::Config("local_epochs_per_round must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) || !(self.adam.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("epsilon must lie strictly inside (0,1), got {epsilon}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub kd: f64,
    pub sup: f64,
    pub total: f64,
    pub epoch: u32,
}

/// Squared distance between the four hidden outputs of two traces, averaged
/// over the batch.
pub fn kd_loss(student: &ForwardTrace, teacher: &ForwardTrace) -> Result<f64> {
    let mut total = 0.0;
    for (s, t) in student.hidden_outputs().into_iter().zip(teacher.hidden_outputs()) {
        t.expect_shape("kd_loss", s.shape())?;
        let batch = s.dim(0).max(1) as f64;
        let sum: f64 = s.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += sum / batch;
    }
    Ok(total)
}

/// Mean negative log-likelihood of the labelled class.
pub fn sup_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    probs.expect_rank("sup_loss", 2)?;
    let (rows, classes) = (probs.dim(0), probs.dim(1));
    if labels.len() != rows {
        return Err(Error::shape(
            "sup_loss",
            format!("{} labels for {rows} probability rows", labels.len()),
        ));
    }
    if rows == 0 {
        return Err(Error::EmptyBatch("sup_loss"));
    }
    let mut acc = 0.0;
    for (row, &y) in probs.data().chunks(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        acc -= row[y].max(PROB_FLOOR).ln();
    }
    Ok(acc / rows as f64)
}

pub fn total_loss(sup: f64, kd: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(epsilon * sup + (1.0 - epsilon) * kd)
}

/// The loss a student is trained on for one batch.
#[derive(Debug, Clone)]
pub enum Objective {
    Supervised { labels: Vec<usize> },
    Distilled {
        labels: Vec<usize>,
        teacher: ForwardTrace,
        epsilon: f64,
    },
}

impl Objective {
    fn labels(&self) -> &[usize] {
        match self {
            Objective::Supervised { labels } | Objective::Distilled { labels, .. } => labels,
        }
    }
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub sup: f64,
    pub kd: f64,
    pub total: f64,
}

fn evaluate(trace: &ForwardTrace, objective: &Objective) -> Result<BatchLoss> {
    let sup = sup_loss(&trace.probs, objective.labels())?;
    match objective {
        Objective::Supervised { .. } => Ok(BatchLoss { sup, kd: 0.0, total: sup }),
        Objective::Distilled { teacher, epsilon, .. } => {
            let kd = kd_loss(trace, teacher)?;
            Ok(BatchLoss {
                sup,
                kd,
                total: total_loss(sup, kd, *epsilon)?,
            })
        }
    }
}

/// Training-mode forward and backward of `objective` on `x`.
pub fn loss_and_gradients(
    student: &mut FeatureExtractor,
    x: &Tensor,
    objective: &Objective,
) -> Result<(BatchLoss, Vec<Tensor>)> {
    let trace = student.forward(x, true)?;
    let loss = evaluate(&trace, objective)?;
    let rows = trace.probs.dim(0);
    let classes = trace.probs.dim(1);

    let sup_weight = match objective {
        Objective::Supervised { .. } => 1.0,
        Objective::Distilled { epsilon, .. } => *epsilon,
    };
    // d CE / d logits = (p - onehot) / N
    let mut d_logits = trace.probs.clone();
    for (row, &y) in d_logits.data_mut().chunks_mut(classes).zip(objective.labels()) {
        row[y] -= 1.0;
    }
    d_logits.scale(sup_weight / rows as f64);

    let mut upstream = TraceGrads {
        hidden: Default::default(),
        logits: Some(d_logits),
    };
    if let Objective::Distilled { teacher, epsilon, .. } = objective {
        let scale = (1.0 - epsilon) * 2.0 / rows as f64;
        for (m, (s, t)) in trace.hidden_outputs().into_iter().zip(teacher.hidden_outputs()).enumerate() {
            let mut g = s.sub(t)?;
            g.scale(scale);
            upstream.hidden[m] = Some(g);
        }
    }
    let grads = student.backward(&upstream)?;
    Ok((loss, grads))
}

/// Indices of conv biases. A conv bias feeding a training-mode batch norm is
/// cancelled by the mean subtraction, so its true gradient is exactly zero and
/// a finite-difference probe only measures rounding noise.
pub const BN_CANCELLED_PARAMS: [usize; 3] = [1, 5, 9];

/// Finite-difference adapter: checks every learnable parameter except the
/// batch-norm-cancelled conv biases.
impl Differentiable for FeatureExtractor {
    type Input = Tensor;
    type Loss = Objective;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !BN_CANCELLED_PARAMS.contains(i))
            .map(|(_, p)| p.value)
            .collect()
    }

    fn loss(&mut self, input: &Tensor, objective: &Objective) -> Result<f64> {
        let trace = self.forward(input, true)?;
        Ok(evaluate(&trace, objective)?.total)
    }

    fn gradients(&mut self, input: &Tensor, objective: &Objective) -> Result<Vec<Tensor>> {
        let (_, grads) = loss_and_gradients(self, input, objective)?;
        Ok(grads
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !BN_CANCELLED_PARAMS.contains(i))
            .map(|(_, g)| g)
            .collect())
    }
}

/// A user's student and teacher plus the student's optimizer state.
#[derive(Debug, Clone)]
pub struct FbstPair {
    pub student: FeatureExtractor,
    pub teacher: FeatureExtractor,
    teacher_initialized: bool,
    optimizer: AdamState,
}

impl FbstPair {
    /// The teacher starts as a copy of the student and stays unused until the
    /// first server load.
    pub fn new(student: FeatureExtractor, adam: AdamConfig) -> Self {
        FbstPair {
            teacher: student.clone(),
            student,
            teacher_initialized: false,
            optimizer: AdamState::new(adam),
        }
    }

    pub fn teacher_initialized(&self) -> bool {
        self.teacher_initialized
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn load_teacher(&mut self, bundle: &WeightBundle) -> Result<()> {
        self.teacher.load_hidden_weights(bundle)?;
        self.teacher_initialized = true;
        Ok(())
    }

    pub fn load_student(&mut self, bundle: &WeightBundle) -> Result<()> {
        self.student.load_hidden_weights(bundle)
    }

    /// One Adam step on a single batch; returns the loss before the step.
    pub fn train_batch(&mut self, batch: &LabeledSeries, epsilon: f64, use_teacher: bool) -> Result<BatchLoss> {
        let objective = if use_teacher {
            Objective::Distilled {
                labels: batch.labels.clone(),
                teacher: self.teacher.infer(&batch.x)?,
                epsilon,
            }
        } else {
            Objective::Supervised {
                labels: batch.labels.clone(),
            }
        };
        let (loss, grads) = loss_and_gradients(&mut self.student, &batch.x, &objective)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric("training loss".into()));
        }
        let mut params = self.student.params_mut();
        debug_assert_eq!(params.len(), PARAM_NAMES.len());
        self.optimizer.step(&mut params, &grads)?;
        Ok(loss)
    }
}

/// Runs `local_epochs_per_round` passes over `data` for federated epoch `k`
/// (1-based) and returns the mean batch losses and the student's hidden weights.
///
/// The distillation term is used only when `k > 1` and a teacher has been
/// loaded; otherwise the student trains on labels alone.
pub fn local_train_epoch<R: Rng + ?Sized>(
    pair: &mut FbstPair,
    data: &LabeledSeries,
    config: &FbstConfig,
    k: u32,
    rng: &mut R,
) -> Result<(LossReport, WeightBundle)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch("local_train_epoch"));
    }
    let use_teacher = k > 1 && pair.teacher_initialized;
    let (mut sup, mut kd, mut total, mut batches) = (0.0, 0.0, 0.0, 0usize);
    for _ in 0..config.local_epochs_per_round {
        for batch in data.shuffled_batches(config.batch_size, rng) {
            let loss = pair
                .train_batch(&batch, config.epsilon, use_teacher)
                .map_err(|e| match e {
                    Error::Numeric(what) => Error::Numeric(format!("{what} at epoch {k}")),
                    other => other,
                })?;
            sup += loss.sup;
            kd += loss.kd;
            total += loss.total;
            batches += 1;
        }
    }
    let n = batches as f64;
    let report = LossReport {
        kd: kd / n,
        sup: sup / n,
        total: total / n,
        epoch: k,
    };
    Ok((report, pair.student.extract_hidden_weights(k)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::extractor::ArchSpec;
    use crate::nncore::{finite_diff_gradcheck, NormMode};

    fn trace_with(o4: Vec<f64>) -> ForwardTrace {
        let z = |shape: &[usize]| Tensor::zeros(shape);
        ForwardTrace {
            o1: z(&[1, 2, 3]),
            o2: z(&[1, 2, 3]),
            o3: z(&[1, 2, 3]),
            o4: Tensor::from_vec(&[1, 2], o4).unwrap(),
            logits: z(&[1, 2]),
            probs: Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap(),
        }
    }

    fn tiny_model(seed: u64, classes: usize) -> FeatureExtractor {
        FeatureExtractor::new(ArchSpec::tiny(), classes, NormMode::Standard, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    }

    fn toy_data(n: usize, len: usize, seed: u64) -> LabeledSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[n, 1, len], 1.0, &mut rng);
        let labels = (0..n).map(|i| i % 2).collect();
        LabeledSeries::new(x, labels).unwrap()
    }

    #[test]
    fn kd_loss_cases() {
        let a = trace_with(vec![0.0, 0.0]);
        assert_eq!(kd_loss(&a, &a).unwrap(), 0.0);
        let b = trace_with(vec![1.0, 1.0]);
        assert_eq!(kd_loss(&a, &b).unwrap(), 2.0);
        assert_eq!(kd_loss(&b, &a).unwrap(), 2.0);
    }

    #[test]
    fn kd_loss_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| ForwardTrace {
            o1: Tensor::uniform(&[3, 4, 5], 1.0, rng),
            o2: Tensor::uniform(&[3, 6, 5], 1.0, rng),
            o3: Tensor::uniform(&[3, 4, 5], 1.0, rng),
            o4: Tensor::uniform(&[3, 5], 1.0, rng),
            logits: Tensor::zeros(&[3, 2]),
            probs: Tensor::zeros(&[3, 2]),
        };
        let (s, t) = (mk(&mut rng), mk(&mut rng));
        let mut oracle = 0.0;
        for (a, b) in s.hidden_outputs().iter().zip(t.hidden_outputs()) {
            let per_sample = a.len() / 3;
            for j in 0..3 {
                for f in 0..per_sample {
                    let d = a.data()[j * per_sample + f] - b.data()[j * per_sample + f];
                    oracle += d * d / 3.0;
                }
            }
        }
        assert!((kd_loss(&s, &t).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn kd_loss_shape_mismatch() {
        let a = trace_with(vec![0.0, 0.0]);
        let mut b = a.clone();
        b.o2 = Tensor::zeros(&[1, 3, 3]);
        assert!(kd_loss(&a, &b).is_err());
    }

    #[test]
    fn sup_loss_cases() {
        let onehot = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(sup_loss(&onehot, &[0, 1]).unwrap(), 0.0);
        let uniform = Tensor::filled(&[1, 2], 0.5);
        assert!((sup_loss(&uniform, &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((sup_loss(&uniform, &[1]).unwrap() - 0.693147).abs() < 1e-6);

        let rows = Tensor::from_vec(&[3, 3], vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.25, 0.5, 0.25]).unwrap();
        let oracle = -(0.7f64.ln() + 0.8f64.ln() + 0.25f64.ln()) / 3.0;
        assert!((sup_loss(&rows, &[0, 2, 0]).unwrap() - oracle).abs() < 1e-9);

        assert!(matches!(
            sup_loss(&uniform, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        let zero = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!((sup_loss(&zero, &[1]).unwrap() - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn total_loss_cases() {
        assert!((total_loss(1.0, 2.0, 0.9).unwrap() - 1.1).abs() < 1e-12);
        assert_eq!(total_loss(3.0, 0.0, 0.9).unwrap(), 0.9 * 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let x: f64 = rng.gen_range(0.0..10.0);
            assert!((total_loss(x, x, 0.5).unwrap() - x).abs() < 1e-12);
        }
        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(total_loss(1.0, 1.0, bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Tensor::uniform(&[3, 1, 10], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let labels = vec![0, 1, 2];
        let mut model = tiny_model(5, 3);
        let ce = Objective::Supervised { labels: labels.clone() };
        let report = finite_diff_gradcheck(&mut model, &x, &ce, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");

        let teacher = tiny_model(6, 3).infer(&x).unwrap();
        let combined = Objective::Distilled {
            labels,
            teacher,
            epsilon: 0.9,
        };
        let report = finite_diff_gradcheck(&mut model, &x, &combined, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn cancelled_biases_have_zero_gradient() {
        let x = Tensor::uniform(&[2, 1, 9], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let mut model = tiny_model(2, 2);
        let (_, grads) =
            loss_and_gradients(&mut model, &x, &Objective::Supervised { labels: vec![0, 1] }).unwrap();
        for i in BN_CANCELLED_PARAMS {
            assert!(grads[i].data().iter().all(|g| g.abs() < 1e-12), "{}", PARAM_NAMES[i]);
        }
    }

    #[test]
    fn first_epoch_is_supervised_only() {
        let data = toy_data(10, 12, 0);
        let mut pair = FbstPair::new(tiny_model(1, 2), AdamConfig::default());
        let cfg = FbstConfig {
            batch_size: 4,
            ..FbstConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (report, bundle) = local_train_epoch(&mut pair, &data, &cfg, 1, &mut rng).unwrap();
        assert_eq!(report.kd, 0.0);
        assert_eq!(report.total, report.sup);
        assert_eq!(bundle.epoch, 1);
        assert_eq!(pair.optimizer().step_count, 3);

        // Even with a loaded teacher, epoch 1 stays supervised.
        let mut pair = FbstPair::new(tiny_model(1, 2), AdamConfig::default());
        pair.load_teacher(&tiny_model(9, 2).extract_hidden_weights(0)).unwrap();
        let (report, _) = local_train_epoch(&mut pair, &data, &cfg, 1, &mut rng).unwrap();
        assert_eq!(report.total, report.sup);
    }

    #[test]
    fn distilled_epoch_combines_terms() {
        let data = toy_data(8, 12, 1);
        let mut pair = FbstPair::new(tiny_model(1, 2), AdamConfig::default());
        pair.load_teacher(&tiny_model(2, 2).extract_hidden_weights(1)).unwrap();
        let cfg = FbstConfig::default();
        let (report, _) = local_train_epoch(&mut pair, &data, &cfg, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(report.kd > 0.0);
        assert!((report.total - (0.9 * report.sup + 0.1 * report.kd)).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_leaves_learnables_unchanged_and_teacher_is_frozen() {
        let data = toy_data(9, 10, 2);
        let adam = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut pair = FbstPair::new(tiny_model(3, 2), adam);
        pair.load_teacher(&tiny_model(4, 2).extract_hidden_weights(1)).unwrap();
        let teacher_before = pair.teacher.clone();
        let mut student_before = pair.student.clone();
        let cfg = FbstConfig {
            adam,
            batch_size: 4,
            ..FbstConfig::default()
        };
        local_train_epoch(&mut pair, &data, &cfg, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pair.teacher, teacher_before);
        let before: Vec<Tensor> = student_before.params_mut().into_iter().map(|p| p.value.clone()).collect();
        let after: Vec<Tensor> = pair.student.params_mut().into_iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn teacher_bitwise_constant_under_training() {
        let data = toy_data(12, 10, 3);
        let mut pair = FbstPair::new(tiny_model(3, 2), AdamConfig::default());
        pair.load_teacher(&tiny_model(4, 2).extract_hidden_weights(1)).unwrap();
        let teacher_before = pair.teacher.clone();
        let cfg = FbstConfig {
            local_epochs_per_round: 3,
            batch_size: 5,
            ..FbstConfig::default()
        };
        local_train_epoch(&mut pair, &data, &cfg, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pair.teacher, teacher_before);
        assert_ne!(pair.student.extract_hidden_weights(4), teacher_before.extract_hidden_weights(4));
    }

    #[test]
    fn frozen_batch_loss_non_increasing() {
        let batch = toy_data(8, 16, 4);
        let mut pair = FbstPair::new(tiny_model(5, 2), AdamConfig::default());
        pair.load_teacher(&tiny_model(6, 2).extract_hidden_weights(1)).unwrap();
        let mut losses = Vec::new();
        for _ in 0..4 {
            losses.push(pair.train_batch(&batch, 0.9, true).unwrap().total);
        }
        for w in losses.windows(2) {
            assert!(w[1] <= w[0], "{losses:?}");
        }
    }

    #[test]
    fn empty_data_rejected() {
        let data = LabeledSeries::new(Tensor::zeros(&[0, 1, 5]), vec![]).unwrap();
        let mut pair = FbstPair::new(tiny_model(0, 2), AdamConfig::default());
        let err = local_train_epoch(&mut pair, &data, &FbstConfig::default(), 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(err.is_err());
    }

    #[test]
    fn batches_keep_partial_tail() {
        let data = toy_data(10, 4, 5);
        let batches = data.shuffled_batches(4, &mut ChaCha8Rng::seed_from_u64(0));
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }
}
