//! Objective assembly and the disruptor training loop.
//!
//! The combined objective is the cycle-consistency disruption loss plus
//! λ times the answer log-likelihood under disrupted features — both are
//! *minimized*, driving walks toward diffusion and the ground-truth answer
//! toward improbability. Gradients flow through the frozen scorer and
//! projector into the disruptor weights only, by hand-derived backward
//! passes. Optimization is AdamW with decoupled weight decay, linear warmup
//! into a constant rate, and micro-batch gradient averaging.

use std::collections::HashMap;

use crate::disruptor::{disrupt, disrupt_backward, init_disruptor, DisruptorParams};
use crate::error::{Error, Result};
use crate::graph::{
    spatiotemporal_loss_grad, spatiotemporal_loss_opts, CycleScore, SpanPolicy, SpanSchedule,
};
use crate::rng::{shuffle, stream, StreamId};
use crate::scalar::Scalar;
use crate::surrogate::{
    log_likelihood_grad_features, project, sequence_log_likelihood, SurrogateParams, TokenSequence,
};
use crate::tensor::Tensor3;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters for loss assembly and optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    /// Weight of the semantic term in the combined objective.
    pub lambda: T,
    /// Walk softmax temperature.
    pub temperature: T,
    pub epochs: usize,
    pub batch_size: usize,
    /// Micro-batches averaged per optimizer step.
    pub grad_accum: usize,
    /// Peak learning rate. The desk-scale default is 1e-2: an order smaller
    /// leaves the walk term's saturated gradients moving parameters at noise
    /// level within a few dozen steps, an order larger lets the semantic
    /// term inflate features until walk transitions re-saturate.
    pub lr: T,
    /// Fraction of total optimizer steps spent on linear warmup.
    pub warmup_ratio: T,
    /// Decoupled weight decay coefficient.
    pub weight_decay: T,
    pub seed: u64,
    pub span_policy: SpanPolicy,
    /// L2-normalize feature rows before affinities.
    pub normalize_affinity: bool,
    /// Ablation switch: score walks on raw instead of disrupted features.
    pub lt_on_raw: bool,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            lambda: T::from_f64_lossy(5.0),
            temperature: T::from_f64_lossy(0.07),
            epochs: 3,
            batch_size: 2,
            grad_accum: 2,
            lr: T::from_f64_lossy(1e-2),
            warmup_ratio: T::from_f64_lossy(0.05),
            weight_decay: T::from_f64_lossy(0.01),
            seed: 0,
            span_policy: SpanPolicy::Retrace,
            normalize_affinity: false,
            lt_on_raw: false,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.grad_accum < 1 {
            return Err(Error::Config(format!(
                "epochs, batch_size and grad_accum must all be at least 1, got {}, {}, {}",
                self.epochs, self.batch_size, self.grad_accum
            )));
        }
        if !(self.lr > T::zero()) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.temperature > T::zero()) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.lambda < T::zero() || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.warmup_ratio < T::zero() || self.warmup_ratio >= T::one() {
            return Err(Error::Config(format!(
                "warmup_ratio must lie in [0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if self.weight_decay < T::zero() || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One training example: features plus its prompt/answer pair.
#[derive(Debug, Clone)]
pub struct TrainItem<T> {
    pub features: Tensor3<T>,
    pub prompt: TokenSequence,
    pub answer: TokenSequence,
}

/// Loss values of one evaluation or optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub l_t: T,
    pub l_s: T,
    pub total: T,
    /// Optimizer step the values were logged at (0 for one-off evaluations).
    pub step: usize,
}

/// Flat gradient with respect to the disruptor parameters, in
/// `DisruptorParams::flatten` order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> GradientVector<T> {
    /// Errors with the first offending index if any entry is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        if let Some(idx) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "gradient entry {idx} is {}; parameters or features degenerate",
                self.values[idx]
            )));
        }
        Ok(())
    }
}

/// Answer log-likelihood under (possibly disrupted) features. Minimizing it
/// drives the answer's probability down.
pub fn semantic_loss<T: Scalar>(
    h_neg: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    sp: &SurrogateParams<T>,
) -> Result<T> {
    sequence_log_likelihood(&project(h_neg, sp)?, x, y, sp)
}

fn schedule_for<T: Scalar>(cfg: &TrainConfig<T>, frames: usize) -> Result<SpanSchedule> {
    SpanSchedule::new(cfg.span_policy, frames)
}

/// Combined objective on one item: walks are scored on the disrupted
/// features (unless `lt_on_raw`), the answer likelihood always is.
pub fn total_loss<T: Scalar>(
    h: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<LossBreakdown<T>> {
    let (breakdown, _) = total_loss_with_spans(h, x, y, dp, sp, cfg)?;
    Ok(breakdown)
}

/// [`total_loss`] plus the per-walk cycle scores for diagnostics.
pub fn total_loss_with_spans<T: Scalar>(
    h: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<(LossBreakdown<T>, Vec<CycleScore<T>>)> {
    cfg.validate()?;
    let schedule = schedule_for(cfg, h.dims().0)?;
    let h_neg = disrupt(h, dp)?;
    let lt_input = if cfg.lt_on_raw { h } else { &h_neg };
    let (l_t, spans) =
        spatiotemporal_loss_opts(lt_input, cfg.temperature, &schedule, cfg.normalize_affinity)?;
    let l_s = semantic_loss(&h_neg, x, y, sp)?;
    let total = l_t + cfg.lambda * l_s;
    Ok((LossBreakdown { l_t, l_s, total, step: 0 }, spans))
}

/// Loss terms and the flat parameter gradient for one item, sharing a single
/// forward pass.
fn loss_and_gradient<T: Scalar>(
    h: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
    schedule: &SpanSchedule,
) -> Result<(T, T, Vec<T>)> {
    let h_neg = disrupt(h, dp)?;
    let (t, n, d) = h_neg.dims();
    let mut upstream = Tensor3::zeros(t, n, d);

    let l_t = if cfg.lt_on_raw {
        // Walk term sees raw features only: constant in the parameters.
        let (l_t, _) =
            spatiotemporal_loss_opts(h, cfg.temperature, schedule, cfg.normalize_affinity)?;
        l_t
    } else {
        let (l_t, _, g) =
            spatiotemporal_loss_grad(&h_neg, cfg.temperature, schedule, cfg.normalize_affinity)?;
        upstream.add_scaled(&g, T::one())?;
        l_t
    };

    let l_s = if cfg.lambda > T::zero() {
        let (l_s, g) = log_likelihood_grad_features(&h_neg, x, y, sp)?;
        upstream.add_scaled(&g, cfg.lambda)?;
        l_s
    } else {
        semantic_loss(&h_neg, x, y, sp)?
    };

    let flat = disrupt_backward(h, dp, &upstream)?;
    Ok((l_t, l_s, flat))
}

/// Exact gradient of [`total_loss`] with respect to the disruptor parameters
/// (scorer and projector are frozen pass-throughs).
pub fn gradient<T: Scalar>(
    h: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<GradientVector<T>> {
    cfg.validate()?;
    let schedule = schedule_for(cfg, h.dims().0)?;
    let (_, _, values) = loss_and_gradient(h, x, y, dp, sp, cfg, &schedule)?;
    let grad = GradientVector { values };
    grad.check_finite()?;
    Ok(grad)
}

/// Outcome of a central finite-difference sweep over every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffReport<T> {
    pub max_rel_err: T,
    pub worst_index: usize,
    pub worst_analytic: T,
    pub worst_numeric: T,
    pub param_count: usize,
}

/// Compares the analytic gradient against central differences of the total
/// loss. Relative error uses a 1e-5 magnitude floor so near-zero entries are
/// judged by absolute difference.
pub fn finite_diff_check<T: Scalar>(
    h: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
    eps: T,
) -> Result<FiniteDiffReport<T>> {
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::Parameter(format!("finite-difference eps must be positive, got {eps}")));
    }
    let analytic = gradient(h, x, y, dp, sp, cfg)?;
    let flat = dp.flatten();
    let (d, d_h) = (dp.d(), dp.d_h());
    let floor = T::from_f64_lossy(1e-5);

    let mut report = FiniteDiffReport {
        max_rel_err: T::zero(),
        worst_index: 0,
        worst_analytic: T::zero(),
        worst_numeric: T::zero(),
        param_count: flat.len(),
    };
    for idx in 0..flat.len() {
        let mut plus = flat.clone();
        plus[idx] += eps;
        let mut minus = flat.clone();
        minus[idx] -= eps;
        let lp = total_loss(h, x, y, &DisruptorParams::from_flat(d, d_h, &plus)?, sp, cfg)?.total;
        let lm = total_loss(h, x, y, &DisruptorParams::from_flat(d, d_h, &minus)?, sp, cfg)?.total;
        let numeric = (lp - lm) / (eps + eps);
        let a = analytic.values[idx];
        let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(floor);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

/// AdamW first/second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_count: usize) -> Self {
        AdamState { m: vec![T::zero(); param_count], v: vec![T::zero(); param_count], step: 0 }
    }
}

/// One AdamW update in place: bias-corrected adaptive step plus decoupled
/// weight decay (decay shrinks parameters even at zero gradient).
pub fn adam_step<T: Scalar>(
    dp: &mut DisruptorParams<T>,
    grad: &GradientVector<T>,
    state: &mut AdamState<T>,
    lr_t: T,
    weight_decay: T,
) -> Result<()> {
    let mut flat = dp.flatten();
    if grad.values.len() != flat.len() || state.m.len() != flat.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "parameter/gradient/state lengths differ: {} / {} / {}",
                flat.len(),
                grad.values.len(),
                state.m.len()
            ),
        ));
    }
    grad.check_finite()?;
    let b1 = T::from_f64_lossy(ADAM_BETA1);
    let b2 = T::from_f64_lossy(ADAM_BETA2);
    let eps = T::from_f64_lossy(ADAM_EPS);
    state.step += 1;
    let t = state.step as i32;
    let m_corr = T::one() - b1.powi(t);
    let v_corr = T::one() - b2.powi(t);

    for i in 0..flat.len() {
        let g = grad.values[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / m_corr;
        let v_hat = state.v[i] / v_corr;
        flat[i] = flat[i] - lr_t * m_hat / (v_hat.sqrt() + eps) - lr_t * weight_decay * flat[i];
    }
    *dp = DisruptorParams::from_flat(dp.d(), dp.d_h(), &flat)?;
    Ok(())
}

/// Learning rate at 1-based optimizer step `s`: linear ramp over the warmup
/// steps, constant afterwards.
fn lr_at<T: Scalar>(lr: T, warmup_steps: usize, s: usize) -> T {
    if warmup_steps > 0 && s <= warmup_steps {
        lr * T::from_f64_lossy(s as f64) / T::from_f64_lossy(warmup_steps as f64)
    } else {
        lr
    }
}

/// Trains a fresh disruptor on the dataset. Deterministic given the config
/// seed: epoch order, initialization and update arithmetic are all fixed.
/// Returns the trained parameters and one loss record per optimizer step.
pub fn train<T: Scalar>(
    dataset: &[TrainItem<T>],
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<(DisruptorParams<T>, Vec<LossBreakdown<T>>)> {
    let d = preflight(dataset, sp, cfg)?;
    let dp = init_disruptor(d, DisruptorParams::<T>::default_hidden(d), cfg.seed)?;
    train_from(dp, dataset, sp, cfg)
}

/// [`train`] starting from caller-supplied parameters (e.g. a checkpoint).
pub fn train_from<T: Scalar>(
    mut dp: DisruptorParams<T>,
    dataset: &[TrainItem<T>],
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<(DisruptorParams<T>, Vec<LossBreakdown<T>>)> {
    let d = preflight(dataset, sp, cfg)?;
    if dp.d() != d {
        return Err(Error::shape(
            "train",
            format!("disruptor width {} does not match feature width {d}", dp.d()),
        ));
    }
    // Schedules per distinct frame count, and a fail-fast pass so a bad item
    // errors before any optimizer state exists.
    let mut schedules: HashMap<usize, SpanSchedule> = HashMap::new();
    for item in dataset {
        let frames = item.features.dims().0;
        if !schedules.contains_key(&frames) {
            schedules.insert(frames, schedule_for(cfg, frames)?);
        }
    }

    let n_items = dataset.len();
    let micro_per_epoch = n_items.div_ceil(cfg.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(cfg.grad_accum);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps =
        (cfg.warmup_ratio.to_f64_lossy() * total_steps as f64).round() as usize;

    let param_count = dp.param_count();
    let mut state = AdamState::new(param_count);
    let mut shuffle_rng = stream(cfg.seed, StreamId::Shuffle);
    let mut history = Vec::with_capacity(total_steps);
    let mut opt_step = 0usize;

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_items).collect();
        shuffle(&mut shuffle_rng, &mut order);

        let micro_batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for group in micro_batches.chunks(cfg.grad_accum) {
            // Average micro-batch gradients (each itself an item average), so
            // the step magnitude does not depend on batch geometry.
            let mut acc = vec![T::zero(); param_count];
            let mut l_t_sum = T::zero();
            let mut l_s_sum = T::zero();
            for micro in group {
                let inv = T::one() / T::from_f64_lossy(micro.len() as f64);
                let mut micro_grad = vec![T::zero(); param_count];
                let mut micro_l_t = T::zero();
                let mut micro_l_s = T::zero();
                for &idx in micro.iter() {
                    let item = &dataset[idx];
                    let schedule = &schedules[&item.features.dims().0];
                    let (l_t, l_s, flat) = loss_and_gradient(
                        &item.features,
                        &item.prompt,
                        &item.answer,
                        &dp,
                        sp,
                        cfg,
                        schedule,
                    )?;
                    micro_l_t += l_t;
                    micro_l_s += l_s;
                    for (a, g) in micro_grad.iter_mut().zip(flat) {
                        *a += g;
                    }
                }
                l_t_sum += micro_l_t * inv;
                l_s_sum += micro_l_s * inv;
                for (a, g) in acc.iter_mut().zip(micro_grad) {
                    *a += g * inv;
                }
            }
            let group_inv = T::one() / T::from_f64_lossy(group.len() as f64);
            for a in &mut acc {
                *a *= group_inv;
            }
            let grad = GradientVector { values: acc };
            grad.check_finite()?;

            opt_step += 1;
            let lr_t = lr_at(cfg.lr, warmup_steps, opt_step);
            adam_step(&mut dp, &grad, &mut state, lr_t, cfg.weight_decay)?;

            let l_t = l_t_sum * group_inv;
            let l_s = l_s_sum * group_inv;
            history.push(LossBreakdown {
                l_t,
                l_s,
                total: l_t + cfg.lambda * l_s,
                step: opt_step,
            });
        }
    }
    Ok((dp, history))
}

fn preflight<T: Scalar>(
    dataset: &[TrainItem<T>],
    sp: &SurrogateParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<usize> {
    cfg.validate()?;
    sp.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let d = dataset[0].features.dims().2;
    for (i, item) in dataset.iter().enumerate() {
        let dims = item.features.dims();
        if dims.2 != d {
            return Err(Error::Structure(format!(
                "item {i} has feature width {}, expected {d}",
                dims.2
            )));
        }
        if item.answer.is_empty() {
            return Err(Error::Structure(format!("item {i} has an empty answer")));
        }
    }
    if d != sp.d() {
        return Err(Error::shape(
            "train",
            format!("feature width {d} does not match projector input {}", sp.d()),
        ));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{init_surrogate, Role};

    fn tiny_cfg() -> TrainConfig<f64> {
        TrainConfig { temperature: 0.5, ..TrainConfig::default() }
    }

    fn tiny_instance(seed: u64) -> (Tensor3<f64>, TokenSequence, TokenSequence, SurrogateParams<f64>) {
        let sp = init_surrogate::<f64>(4, 8, 16, 100 + seed).unwrap();
        let vocab = sp.vocab().unwrap();
        let h = Tensor3::<f64>::seeded_gaussian(3, 2, 4, 200 + seed).map(|v| v * 0.5);
        let x = TokenSequence::new(vec![3, 7], Role::Prompt, &vocab).unwrap();
        let y = TokenSequence::new(vec![5, 9, 1], Role::Answer, &vocab).unwrap();
        (h, x, y, sp)
    }

    #[test]
    fn default_config_values() {
        let cfg = TrainConfig::<f64>::default();
        assert_eq!(cfg.lambda, 5.0);
        assert_eq!(cfg.temperature, 0.07);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.grad_accum, 2);
        assert_eq!(cfg.lr, 1e-2);
        assert_eq!(cfg.warmup_ratio, 0.05);
        assert_eq!(cfg.weight_decay, 0.01);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainConfig::<f64>::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::<f64>::default();
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::<f64>::default();
        cfg.lambda = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::<f64>::default();
        cfg.warmup_ratio = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn semantic_loss_is_definitionally_the_sequence_likelihood() {
        let (h, x, y, sp) = tiny_instance(1);
        let direct = semantic_loss(&h, &x, &y, &sp).unwrap();
        let composed = sequence_log_likelihood(&project(&h, &sp).unwrap(), &x, &y, &sp).unwrap();
        assert_eq!(direct, composed);
    }

    #[test]
    fn uniform_logit_scorer_gives_analytic_semantic_loss() {
        let mut sp = init_surrogate::<f64>(4, 8, 64, 5).unwrap();
        sp.out = crate::tensor::Matrix::zeros(8, 64);
        let vocab = sp.vocab().unwrap();
        let h = Tensor3::<f64>::seeded_gaussian(2, 2, 4, 6);
        let x = TokenSequence::new(vec![3], Role::Prompt, &vocab).unwrap();
        let y = TokenSequence::new(vec![10, 20, 1], Role::Answer, &vocab).unwrap();
        let l_s = semantic_loss(&h, &x, &y, &sp).unwrap();
        assert!((l_s - 3.0 * (1.0f64 / 64.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn total_reduces_to_walk_term_at_lambda_zero() {
        let (h, x, y, sp) = tiny_instance(2);
        let dp = init_disruptor::<f64>(4, 2, 3).unwrap();
        let mut cfg = tiny_cfg();
        cfg.lambda = 0.0;
        let b = total_loss(&h, &x, &y, &dp, &sp, &cfg).unwrap();
        assert_eq!(b.total, b.l_t);
    }

    #[test]
    fn zero_disruptor_leaves_walk_term_at_raw_value() {
        let (h, x, y, sp) = tiny_instance(3);
        let dp = DisruptorParams::zeros(4, 2);
        let cfg = tiny_cfg();
        let b = total_loss(&h, &x, &y, &dp, &sp, &cfg).unwrap();
        let schedule = SpanSchedule::new(cfg.span_policy, 3).unwrap();
        let (raw_l_t, _) = spatiotemporal_loss_opts(&h, cfg.temperature, &schedule, false).unwrap();
        assert_eq!(b.l_t, raw_l_t);
    }

    #[test]
    fn breakdown_recomposes_from_independent_parts() {
        let (h, x, y, sp) = tiny_instance(4);
        let dp = init_disruptor::<f64>(4, 2, 7).unwrap();
        let cfg = tiny_cfg();
        let b = total_loss(&h, &x, &y, &dp, &sp, &cfg).unwrap();
        let h_neg = disrupt(&h, &dp).unwrap();
        let schedule = SpanSchedule::new(cfg.span_policy, 3).unwrap();
        let (l_t, _) =
            spatiotemporal_loss_opts(&h_neg, cfg.temperature, &schedule, false).unwrap();
        let l_s = semantic_loss(&h_neg, &x, &y, &sp).unwrap();
        assert!((b.total - (l_t + cfg.lambda * l_s)).abs() < 1e-12);
        assert!((b.l_t - l_t).abs() < 1e-15);
        assert!((b.l_s - l_s).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences_on_all_terms() {
        for seed in 0..3u64 {
            let (h, x, y, sp) = tiny_instance(10 + seed);
            let dp = init_disruptor::<f64>(4, 2, 20 + seed).unwrap();
            for (lambda, lt_on_raw) in [(0.0, false), (5.0, true), (5.0, false)] {
                let mut cfg = tiny_cfg();
                cfg.lambda = lambda;
                cfg.lt_on_raw = lt_on_raw;
                let report =
                    finite_diff_check(&h, &x, &y, &dp, &sp, &cfg, 1e-5).unwrap();
                assert!(
                    report.max_rel_err < 1e-4,
                    "seed {seed} lambda {lambda} lt_on_raw {lt_on_raw}: {report:?}"
                );
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_symmetric_point_with_lambda_zero() {
        let sp = init_surrogate::<f64>(4, 8, 16, 30).unwrap();
        let vocab = sp.vocab().unwrap();
        let h = Tensor3::<f64>::zeros(3, 2, 4);
        let x = TokenSequence::new(vec![3], Role::Prompt, &vocab).unwrap();
        let y = TokenSequence::new(vec![5, 1], Role::Answer, &vocab).unwrap();
        let dp = init_disruptor::<f64>(4, 2, 31).unwrap();
        let mut cfg = tiny_cfg();
        cfg.lambda = 0.0;
        let g = gradient(&h, &x, &y, &dp, &sp, &cfg).unwrap();
        for &v in &g.values {
            assert_eq!(v, 0.0, "symmetric point should be exactly stationary");
        }
    }

    #[test]
    fn doubling_lambda_doubles_the_semantic_gradient_component() {
        let (h, x, y, sp) = tiny_instance(5);
        let dp = init_disruptor::<f64>(4, 2, 8).unwrap();
        let grad_at = |lambda: f64| {
            let mut cfg = tiny_cfg();
            cfg.lambda = lambda;
            gradient(&h, &x, &y, &dp, &sp, &cfg).unwrap().values
        };
        let g0 = grad_at(0.0);
        let g1 = grad_at(2.5);
        let g2 = grad_at(5.0);
        for i in 0..g0.len() {
            let once = g1[i] - g0[i];
            let twice = g2[i] - g0[i];
            assert!((twice - 2.0 * once).abs() < 1e-10, "index {i}: {once} vs {twice}");
        }
    }

    #[test]
    fn finite_diff_check_rejects_zero_eps() {
        let (h, x, y, sp) = tiny_instance(6);
        let dp = init_disruptor::<f64>(4, 2, 9).unwrap();
        assert!(finite_diff_check(&h, &x, &y, &dp, &sp, &tiny_cfg(), 0.0).is_err());
    }

    #[test]
    fn adam_zero_gradient_zero_decay_is_a_no_op() {
        let mut dp = init_disruptor::<f64>(4, 2, 40).unwrap();
        let before = dp.flatten();
        let mut state = AdamState::new(dp.param_count());
        let grad = GradientVector { values: vec![0.0; dp.param_count()] };
        adam_step(&mut dp, &grad, &mut state, 0.1, 0.0).unwrap();
        assert_eq!(dp.flatten(), before);
    }

    #[test]
    fn adam_decoupled_decay_shrinks_multiplicatively() {
        let mut dp = init_disruptor::<f64>(4, 2, 41).unwrap();
        let before = dp.flatten();
        let mut state = AdamState::new(dp.param_count());
        let grad = GradientVector { values: vec![0.0; dp.param_count()] };
        let (lr, wd) = (0.05, 0.01);
        adam_step(&mut dp, &grad, &mut state, lr, wd).unwrap();
        for (after, b) in dp.flatten().iter().zip(&before) {
            assert!((after - b * (1.0 - lr * wd)).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // Single-parameter oracle: m̂ = g, v̂ = g², so the update is
        // −lr·g/(|g| + ε) independent of |g| at step 1.
        let mut dp = DisruptorParams::<f64>::zeros(2, 2);
        let mut flat = dp.flatten();
        flat[0] = 0.5;
        dp = DisruptorParams::from_flat(2, 2, &flat).unwrap();

        let mut grad_values = vec![0.0; dp.param_count()];
        grad_values[0] = 0.3;
        let grad = GradientVector { values: grad_values };
        let mut state = AdamState::new(dp.param_count());
        adam_step(&mut dp, &grad, &mut state, 0.1, 0.0).unwrap();

        let m_hat = (0.1 * 0.3) / (1.0 - 0.9);
        let v_hat: f64 = (0.001 * 0.09) / (1.0 - 0.999);
        let want = 0.5 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((dp.flatten()[0] - want).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (h, x, y, sp) = tiny_instance(7);
        let dataset: Vec<TrainItem<f64>> = (0..5)
            .map(|i| TrainItem {
                features: Tensor3::<f64>::seeded_gaussian(3, 2, 4, 300 + i).map(|v| v * 0.5),
                prompt: x.clone(),
                answer: y.clone(),
            })
            .collect();
        let _ = h;
        let mut cfg = tiny_cfg();
        cfg.epochs = 2;
        let (dp_a, hist_a) = train(&dataset, &sp, &cfg).unwrap();
        let (dp_b, hist_b) = train(&dataset, &sp, &cfg).unwrap();
        assert_eq!(dp_a, dp_b);
        assert_eq!(hist_a.len(), hist_b.len());
        for (a, b) in hist_a.iter().zip(&hist_b) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
            assert_eq!(a.l_t.to_bits(), b.l_t.to_bits());
            assert_eq!(a.l_s.to_bits(), b.l_s.to_bits());
        }
        let mut cfg2 = cfg.clone();
        cfg2.seed = cfg.seed + 1;
        let (_, hist_c) = train(&dataset, &sp, &cfg2).unwrap();
        assert!(hist_a
            .iter()
            .zip(&hist_c)
            .any(|(a, c)| a.total.to_bits() != c.total.to_bits()));
    }

    #[test]
    fn training_decreases_the_objective_on_a_fixed_instance() {
        let (h, x, y, sp) = tiny_instance(8);
        let dataset = vec![TrainItem { features: h, prompt: x, answer: y }];
        let mut cfg = tiny_cfg();
        cfg.epochs = 200;
        cfg.batch_size = 1;
        cfg.grad_accum = 1;
        let (_, history) = train(&dataset, &sp, &cfg).unwrap();
        assert_eq!(history.len(), 200);
        let first = history.first().unwrap().total;
        let last = history.last().unwrap().total;
        assert!(last < first, "no improvement: {first} -> {last}");
        for b in &history {
            assert!((b.total - (b.l_t + cfg.lambda * b.l_s)).abs() < 1e-10);
        }
    }

    #[test]
    fn improvement_also_holds_at_a_cautious_learning_rate() {
        let (h, x, y, sp) = tiny_instance(8);
        let dataset = vec![TrainItem { features: h, prompt: x, answer: y }];
        let mut cfg = tiny_cfg();
        cfg.lr = 1e-3;
        cfg.epochs = 200;
        cfg.batch_size = 1;
        cfg.grad_accum = 1;
        let (_, history) = train(&dataset, &sp, &cfg).unwrap();
        assert!(history.last().unwrap().total < history.first().unwrap().total);
    }

    #[test]
    fn semantic_loss_drops_after_fifty_steps() {
        let (h, x, y, sp) = tiny_instance(9);
        let dataset = vec![TrainItem { features: h, prompt: x, answer: y }];
        let mut cfg = tiny_cfg();
        cfg.epochs = 50;
        cfg.batch_size = 1;
        cfg.grad_accum = 1;
        let (_, history) = train(&dataset, &sp, &cfg).unwrap();
        assert!(history.last().unwrap().l_s < history.first().unwrap().l_s);
    }

    #[test]
    fn surrogate_stays_frozen_through_training() {
        let (h, x, y, sp) = tiny_instance(11);
        let before = sp.clone();
        let dataset = vec![TrainItem { features: h, prompt: x, answer: y }];
        let mut cfg = tiny_cfg();
        cfg.epochs = 3;
        let _ = train(&dataset, &sp, &cfg).unwrap();
        assert_eq!(sp, before);
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let sp = init_surrogate::<f64>(4, 8, 16, 1).unwrap();
        let err = train::<f64>(&[], &sp, &tiny_cfg()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn lambda_zero_training_still_decreases_walk_term() {
        let (h, x, y, sp) = tiny_instance(12);
        let dataset = vec![TrainItem { features: h, prompt: x, answer: y }];
        let mut cfg = tiny_cfg();
        cfg.lambda = 0.0;
        cfg.epochs = 100;
        cfg.batch_size = 1;
        cfg.grad_accum = 1;
        let (_, history) = train(&dataset, &sp, &cfg).unwrap();
        assert!(history.last().unwrap().l_t < history.first().unwrap().l_t);
    }

    #[test]
    fn warmup_schedule_ramps_linearly() {
        assert_eq!(lr_at(1.0, 10, 1), 0.1);
        assert_eq!(lr_at(1.0, 10, 5), 0.5);
        assert_eq!(lr_at(1.0, 10, 10), 1.0);
        assert_eq!(lr_at(1.0, 10, 11), 1.0);
        assert_eq!(lr_at(1.0, 0, 1), 1.0);
    }
}
