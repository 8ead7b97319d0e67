//! A tiny deterministic autoregressive scorer.
//!
//! Stands in for a full video-language model at desk scale: a linear
//! projector lifts visual features into the embedding space, position-weighted
//! pools of the visual tokens and the text prefix pass through one tanh mixer
//! layer, and a linear head produces next-token logits. Everything is pure,
//! seeded, and differentiable by hand.

use crate::error::{Error, Result};
use crate::rng::{stream, StreamId};
use crate::scalar::Scalar;
use crate::tensor::{log_sum_exp, matmul, Matrix, Tensor3};

/// Beginning-of-sequence token id.
pub const BOS: usize = 0;
/// End-of-sequence token id.
pub const EOS: usize = 1;
/// Padding token id.
pub const PAD: usize = 2;

/// Token id space; ids 0..2 are reserved (BOS, EOS, PAD).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 4 {
            return Err(Error::Vocab(format!(
                "vocabulary needs at least 4 ids (3 reserved + content), got {size}"
            )));
        }
        Ok(Vocab { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn check(&self, id: usize) -> Result<()> {
        if id >= self.size {
            return Err(Error::Vocab(format!("token id {id} outside vocabulary of {}", self.size)));
        }
        Ok(())
    }

    /// First non-reserved token id.
    pub fn first_content_id(&self) -> usize {
        PAD + 1
    }

    /// Number of non-reserved ids.
    pub fn content_size(&self) -> usize {
        self.size - self.first_content_id()
    }
}

/// What a token sequence is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Prompt,
    Answer,
    Generated,
}

/// Ordered token ids with a declared role. Answers must end with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, role: Role, vocab: &Vocab) -> Result<Self> {
        for &id in &ids {
            vocab.check(id)?;
        }
        if role == Role::Answer && ids.last() != Some(&EOS) {
            return Err(Error::Vocab("answer sequences must be non-empty and end with EOS".into()));
        }
        Ok(TokenSequence { ids, role })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Frozen projector and scorer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams<T> {
    /// V×d_lm token embeddings.
    pub embed: Matrix<T>,
    /// d×d_lm visual projector.
    pub proj: Matrix<T>,
    /// d_lm×d_lm context mixer.
    pub mix: Matrix<T>,
    /// d_lm×V output head.
    pub out: Matrix<T>,
    /// Seed the parameters were drawn from.
    pub seed: u64,
}

impl<T: Scalar> SurrogateParams<T> {
    /// Visual feature width the projector expects.
    pub fn d(&self) -> usize {
        self.proj.rows()
    }

    /// Embedding width.
    pub fn d_lm(&self) -> usize {
        self.proj.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.vocab_size())
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (d_lm, v) = (self.d_lm(), self.vocab_size());
        if self.embed.cols() != d_lm
            || self.mix.rows() != d_lm
            || self.mix.cols() != d_lm
            || self.out.rows() != d_lm
            || self.out.cols() != v
        {
            return Err(Error::shape(
                "surrogate_params",
                format!(
                    "inconsistent shapes: embed {}x{}, proj {}x{}, mix {}x{}, out {}x{}",
                    self.embed.rows(),
                    self.embed.cols(),
                    self.proj.rows(),
                    self.proj.cols(),
                    self.mix.rows(),
                    self.mix.cols(),
                    self.out.rows(),
                    self.out.cols()
                ),
            ));
        }
        Vocab::new(v)?;
        if !(self.embed.is_finite()
            && self.proj.is_finite()
            && self.mix.is_finite()
            && self.out.is_finite())
        {
            return Err(Error::Numerical("surrogate parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Gaussian-initialized parameters, each matrix scaled by 1/√fan_in.
/// Deterministic per seed; draw order is embed, proj, mix, out.
pub fn init_surrogate<T: Scalar>(
    d: usize,
    d_lm: usize,
    v_sz: usize,
    seed: u64,
) -> Result<SurrogateParams<T>> {
    if d < 2 || d_lm < 2 {
        return Err(Error::Parameter(format!("dims must be at least 2, got d={d}, d_lm={d_lm}")));
    }
    Vocab::new(v_sz)?;
    let mut rng = stream(seed, StreamId::Surrogate);
    let scale_lm = T::from_f64_lossy(1.0 / (d_lm as f64).sqrt());
    let scale_d = T::from_f64_lossy(1.0 / (d as f64).sqrt());
    let embed = Matrix::gaussian_from(&mut rng, v_sz, d_lm).map(|v| v * scale_lm);
    let proj = Matrix::gaussian_from(&mut rng, d, d_lm).map(|v| v * scale_d);
    let mix = Matrix::gaussian_from(&mut rng, d_lm, d_lm).map(|v| v * scale_lm);
    let out = Matrix::gaussian_from(&mut rng, d_lm, v_sz).map(|v| v * scale_lm);
    Ok(SurrogateParams { embed, proj, mix, out, seed })
}

/// Projects a feature tensor into visual tokens: frames flattened in temporal
/// order, then one linear map per token row. Output is (T·N)×d_lm.
pub fn project<T: Scalar>(h: &Tensor3<T>, params: &SurrogateParams<T>) -> Result<Matrix<T>> {
    let (_, _, d) = h.dims();
    if d != params.d() {
        return Err(Error::shape(
            "project",
            format!("features have width {d}, projector expects {}", params.d()),
        ));
    }
    matmul(&h.flatten(), &params.proj)
}

/// Position weight for pooling: earlier rows/tokens count more, so order
/// matters and no permutation of context is invisible.
fn pool_weight<T: Scalar>(position: usize) -> T {
    T::one() / T::from_f64_lossy((position + 1) as f64)
}

/// Position-weighted mean of matrix rows. Empty input pools to zero.
fn pool_rows<T: Scalar>(m: &Matrix<T>, width: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); width];
    if m.rows() == 0 {
        return acc;
    }
    let mut total = T::zero();
    for r in 0..m.rows() {
        let w = pool_weight::<T>(r);
        total += w;
        for (a, &v) in acc.iter_mut().zip(m.row(r)) {
            *a += w * v;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    acc
}

/// Position-weighted mean of token embeddings. Empty context pools to zero.
fn pool_tokens<T: Scalar>(ids: &[usize], params: &SurrogateParams<T>) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); params.d_lm()];
    if ids.is_empty() {
        return Ok(acc);
    }
    let vocab = params.vocab()?;
    let mut total = T::zero();
    for (pos, &id) in ids.iter().enumerate() {
        vocab.check(id)?;
        let w = pool_weight::<T>(pos);
        total += w;
        for (a, &e) in acc.iter_mut().zip(params.embed.row(id)) {
            *a += w * e;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(acc)
}

/// Caches the forward pass of one scoring step.
struct StepForward<T> {
    q: Vec<T>,
    logits: Vec<T>,
}

fn step_forward<T: Scalar>(
    z: &Matrix<T>,
    x: &[usize],
    prefix: &[usize],
    params: &SurrogateParams<T>,
) -> Result<StepForward<T>> {
    if z.cols() != params.d_lm() {
        return Err(Error::shape(
            "logits",
            format!("visual tokens have width {}, expected {}", z.cols(), params.d_lm()),
        ));
    }
    let context: Vec<usize> = x.iter().chain(prefix).copied().collect();
    let mut u = pool_rows(z, params.d_lm());
    for (a, b) in u.iter_mut().zip(pool_tokens(&context, params)?) {
        *a += b;
    }
    let a = params.mix.matvec(&u)?;
    let q: Vec<T> = a.iter().map(|&v| v.tanh()).collect();
    let logits = params.out.tr_matvec(&q)?;
    Ok(StepForward { q, logits })
}

/// Next-token logits given visual tokens, the prompt, and the generated
/// prefix so far. Deterministic and finite for finite inputs.
pub fn logits<T: Scalar>(
    z: &Matrix<T>,
    x: &TokenSequence,
    prefix: &[usize],
    params: &SurrogateParams<T>,
) -> Result<Vec<T>> {
    Ok(step_forward(z, x.ids(), prefix, params)?.logits)
}

/// Σ_t log p(y_t | visual tokens, x, y_<t). Strictly ≤ 0, and each appended
/// token only lowers it.
pub fn sequence_log_likelihood<T: Scalar>(
    z: &Matrix<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    params: &SurrogateParams<T>,
) -> Result<T> {
    if y.is_empty() {
        return Err(Error::Parameter("log-likelihood of an empty sequence".into()));
    }
    let mut ll = T::zero();
    for t in 0..y.len() {
        let lg = logits(z, x, &y.ids()[..t], params)?;
        let id = y.ids()[t];
        params.vocab()?.check(id)?;
        ll += lg[id] - log_sum_exp(&lg);
    }
    Ok(ll)
}

/// Log-likelihood together with its exact gradient with respect to the visual
/// tokens `z` (the scorer's own weights stay frozen).
pub fn sequence_log_likelihood_grad<T: Scalar>(
    z: &Matrix<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    params: &SurrogateParams<T>,
) -> Result<(T, Matrix<T>)> {
    if y.is_empty() {
        return Err(Error::Parameter("log-likelihood of an empty sequence".into()));
    }
    let vocab = params.vocab()?;
    let d_lm = params.d_lm();
    let mut ll = T::zero();
    // The visual pool is the same at every step, so per-step gradients w.r.t.
    // the pooled vector can be summed before fanning out to token rows.
    let mut g_u_total = vec![T::zero(); d_lm];
    for t in 0..y.len() {
        let fwd = step_forward(z, x.ids(), &y.ids()[..t], params)?;
        let id = y.ids()[t];
        vocab.check(id)?;
        let lse = log_sum_exp(&fwd.logits);
        ll += fwd.logits[id] - lse;

        // d log p[id] / d logits = onehot(id) − softmax(logits).
        let mut g_logits: Vec<T> =
            fwd.logits.iter().map(|&l| -((l - lse).exp())).collect();
        g_logits[id] += T::one();
        // Through the head: g_q = out · g_logits.
        let g_q = params.out.matvec(&g_logits)?;
        // Through tanh: g_a = g_q ⊙ (1 − q²).
        let g_a: Vec<T> =
            g_q.iter().zip(&fwd.q).map(|(&g, &q)| g * (T::one() - q * q)).collect();
        // Through the mixer: g_u = mixᵀ · g_a.
        let g_u = params.mix.tr_matvec(&g_a)?;
        for (acc, g) in g_u_total.iter_mut().zip(g_u) {
            *acc += g;
        }
    }

    // Fan out through the weighted visual pool: row r gets w_r / Σw of g_u.
    let rows = z.rows();
    let mut g_z = Matrix::zeros(rows, d_lm);
    if rows > 0 {
        let mut total_w = T::zero();
        for r in 0..rows {
            total_w += pool_weight::<T>(r);
        }
        for r in 0..rows {
            let scale = pool_weight::<T>(r) / total_w;
            for (c, &g) in g_u_total.iter().enumerate() {
                g_z.set(r, c, scale * g);
            }
        }
    }
    Ok((ll, g_z))
}

/// Log-likelihood and its gradient pushed all the way back to the raw feature
/// tensor (through the frozen projector).
pub fn log_likelihood_grad_features<T: Scalar>(
    h: &Tensor3<T>,
    x: &TokenSequence,
    y: &TokenSequence,
    params: &SurrogateParams<T>,
) -> Result<(T, Tensor3<T>)> {
    let (t, n, d) = h.dims();
    let z = project(h, params)?;
    let (ll, g_z) = sequence_log_likelihood_grad(&z, x, y, params)?;
    let g_flat = matmul(&g_z, &params.proj.transpose())?;
    let grad = Tensor3::from_vec(t, n, d, g_flat.data().to_vec())?;
    Ok((ll, grad))
}
