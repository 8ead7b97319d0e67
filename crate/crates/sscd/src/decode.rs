//! Contrastive decoding with an adaptive plausibility constraint.
//!
//! Each step scores the prompt+prefix twice — once on projected raw features,
//! once on projected disrupted features — calibrates the logit gap, restricts
//! to tokens the positive branch itself finds plausible, renormalizes, and
//! picks greedily or by seeded sampling. The negative branch is computed once
//! per sequence; only the text prefix grows.

use rand_chacha::ChaCha8Rng;

use crate::disruptor::{disrupt, DisruptorParams};
use crate::error::{Error, Result};
use crate::rng::{stream, uniform_f64, StreamId};
use crate::scalar::Scalar;
use crate::surrogate::{logits, project, Role, SurrogateParams, TokenSequence, EOS};
use crate::tensor::{softmax_vec, Matrix, Tensor3};

/// Token selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Deterministic argmax with lowest-id tie-break.
    Greedy,
    /// Draw from the constrained distribution with a seeded generator.
    Sample { seed: u64 },
}

/// Knobs of the contrastive sampling rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodingConfig<T> {
    /// Contrast strength: how far the negative branch is pushed away.
    pub alpha: T,
    /// Plausibility cutoff as a fraction of the top baseline probability.
    pub beta: T,
    /// Hard cap on generated tokens (EOS stops earlier).
    pub max_tokens: usize,
    pub mode: DecodeMode,
}

impl<T: Scalar> Default for DecodingConfig<T> {
    fn default() -> Self {
        DecodingConfig {
            alpha: T::from_f64_lossy(0.8),
            beta: T::from_f64_lossy(0.1),
            max_tokens: 512,
            mode: DecodeMode::Greedy,
        }
    }
}

impl<T: Scalar> DecodingConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < T::zero() || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.beta < T::zero() || self.beta > T::one() {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// One decoding step's constrained distribution: the retained token ids (the
/// plausibility set, ascending) and their renormalized probabilities.
/// Everything outside `retained` has probability exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution<T> {
    pub retained: Vec<usize>,
    pub probs: Vec<T>,
}

impl<T: Scalar> StepDistribution<T> {
    /// Probability of a token id; exactly zero outside the retained set.
    pub fn prob_of(&self, id: usize) -> T {
        match self.retained.iter().position(|&r| r == id) {
            Some(pos) => self.probs[pos],
            None => T::zero(),
        }
    }

    /// Highest-probability retained token; ties break to the lowest id.
    pub fn greedy_token(&self) -> usize {
        let mut best = 0;
        for i in 1..self.retained.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        self.retained[best]
    }

    /// Draws one token from the constrained distribution.
    pub fn sample_token(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = T::from_f64_lossy(uniform_f64(rng));
        let mut cum = T::zero();
        for (pos, &id) in self.retained.iter().enumerate() {
            cum += self.probs[pos];
            if u < cum {
                return id;
            }
        }
        *self.retained.last().expect("plausibility set is never empty")
    }
}

/// Elementwise (1+α)·f_pos − α·f_neg.
pub fn calibrated_logits<T: Scalar>(f_pos: &[T], f_neg: &[T], alpha: T) -> Result<Vec<T>> {
    if f_pos.len() != f_neg.len() {
        return Err(Error::shape(
            "calibrated_logits",
            format!("positive branch has {} logits, negative {}", f_pos.len(), f_neg.len()),
        ));
    }
    Ok(f_pos
        .iter()
        .zip(f_neg)
        .map(|(&p, &n)| (T::one() + alpha) * p - alpha * n)
        .collect())
}

/// Token ids whose baseline probability reaches β times the baseline maximum.
/// Never empty: the argmax always qualifies for β ≤ 1.
pub fn plausibility_set<T: Scalar>(p_base: &[T], beta: T) -> Result<Vec<usize>> {
    if beta < T::zero() || beta > T::one() {
        return Err(Error::Parameter(format!("beta must lie in [0, 1], got {beta}")));
    }
    if p_base.is_empty() {
        return Err(Error::Parameter("empty probability vector".into()));
    }
    let sum: T = p_base.iter().copied().sum();
    if (sum - T::one()).abs() > T::from_f64_lossy(1e-6) {
        return Err(Error::Parameter(format!(
            "baseline probabilities sum to {sum}, expected 1"
        )));
    }
    let max = p_base.iter().cloned().fold(T::neg_infinity(), T::max);
    let threshold = beta * max;
    Ok((0..p_base.len()).filter(|&i| p_base[i] >= threshold).collect())
}

/// The full constrained step. The plausibility set always comes from the
/// positive branch's own softmax — never the calibrated one — then the
/// calibrated logits are renormalized over that set.
pub fn sscd_step<T: Scalar>(
    f_pos: &[T],
    f_neg: &[T],
    cfg: &DecodingConfig<T>,
) -> Result<StepDistribution<T>> {
    cfg.validate()?;
    let (step, _) = constrained_step(f_pos, f_neg, cfg.alpha, cfg.beta)?;
    Ok(step)
}

/// Returns the constrained distribution plus the baseline softmax (needed for
/// diagnostics without recomputation).
fn constrained_step<T: Scalar>(
    f_pos: &[T],
    f_neg: &[T],
    alpha: T,
    beta: T,
) -> Result<(StepDistribution<T>, Vec<T>)> {
    let p_base = softmax_vec(f_pos);
    let retained = plausibility_set(&p_base, beta)?;
    let calibrated = calibrated_logits(f_pos, f_neg, alpha)?;
    let sub: Vec<T> = retained.iter().map(|&i| calibrated[i]).collect();
    let probs = softmax_vec(&sub);
    Ok((StepDistribution { retained, probs }, p_base))
}

/// Per-step decoding diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace<T> {
    /// 0-based position in the generated sequence.
    pub index: usize,
    pub token: usize,
    /// Size of the plausibility set at this step.
    pub retained: usize,
    /// KL(baseline ‖ calibrated), both renormalized over the retained set.
    /// Zero when calibration is a no-op.
    pub kl_baseline_calibrated: T,
}

/// A generated sequence plus its per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput<T> {
    pub tokens: TokenSequence,
    pub steps: Vec<StepTrace<T>>,
}

/// Contrastive decoding: negative features are the disruptor's output,
/// computed once up front. Stops at EOS (kept in the output) or `max_tokens`.
pub fn decode<T: Scalar>(
    h: &Tensor3<T>,
    prompt: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &DecodingConfig<T>,
) -> Result<TokenSequence> {
    decode_with_trace(h, prompt, dp, sp, cfg).map(|out| out.tokens)
}

/// [`decode`] with the per-step trace attached.
pub fn decode_with_trace<T: Scalar>(
    h: &Tensor3<T>,
    prompt: &TokenSequence,
    dp: &DisruptorParams<T>,
    sp: &SurrogateParams<T>,
    cfg: &DecodingConfig<T>,
) -> Result<DecodeOutput<T>> {
    cfg.validate()?;
    sp.validate()?;
    let z = project(h, sp)?;
    let z_neg = project(&disrupt(h, dp)?, sp)?;
    generation_loop(&z, Some(&z_neg), prompt, sp, cfg)
}

/// Vanilla autoregressive decoding on the positive branch only — the
/// reference every reduction identity compares against.
pub fn baseline_decode<T: Scalar>(
    h: &Tensor3<T>,
    prompt: &TokenSequence,
    sp: &SurrogateParams<T>,
    cfg: &DecodingConfig<T>,
) -> Result<TokenSequence> {
    baseline_decode_with_trace(h, prompt, sp, cfg).map(|out| out.tokens)
}

/// [`baseline_decode`] with the per-step trace attached.
pub fn baseline_decode_with_trace<T: Scalar>(
    h: &Tensor3<T>,
    prompt: &TokenSequence,
    sp: &SurrogateParams<T>,
    cfg: &DecodingConfig<T>,
) -> Result<DecodeOutput<T>> {
    cfg.validate()?;
    sp.validate()?;
    let z = project(h, sp)?;
    generation_loop(&z, None, prompt, sp, cfg)
}

fn generation_loop<T: Scalar>(
    z: &Matrix<T>,
    z_neg: Option<&Matrix<T>>,
    prompt: &TokenSequence,
    sp: &SurrogateParams<T>,
    cfg: &DecodingConfig<T>,
) -> Result<DecodeOutput<T>> {
    let vocab = sp.vocab()?;
    let mut rng = match cfg.mode {
        DecodeMode::Sample { seed } => Some(stream(seed, StreamId::Sampling)),
        DecodeMode::Greedy => None,
    };
    let mut generated: Vec<usize> = Vec::new();
    let mut steps = Vec::new();

    while generated.len() < cfg.max_tokens {
        let f_pos = logits(z, prompt, &generated, sp)?;
        // Without a negative branch the step reduces to the baseline rule.
        let (f_neg, alpha) = match z_neg {
            Some(zn) => (logits(zn, prompt, &generated, sp)?, cfg.alpha),
            None => (f_pos.clone(), T::zero()),
        };
        let (step, p_base) = constrained_step(&f_pos, &f_neg, alpha, cfg.beta)?;

        let token = match rng.as_mut() {
            Some(r) => step.sample_token(r),
            None => step.greedy_token(),
        };

        // KL(baseline ‖ calibrated) over the retained set.
        let base_mass: T = step.retained.iter().map(|&i| p_base[i]).sum();
        let mut kl = T::zero();
        for (pos, &id) in step.retained.iter().enumerate() {
            let q = p_base[id] / base_mass;
            if q > T::zero() {
                kl += q * (q / step.probs[pos]).ln();
            }
        }
        steps.push(StepTrace {
            index: generated.len(),
            token,
            retained: step.retained.len(),
            kl_baseline_calibrated: kl,
        });
        generated.push(token);
        if token == EOS {
            break;
        }
    }

    Ok(DecodeOutput { tokens: TokenSequence::new(generated, Role::Generated, &vocab)?, steps })
}
