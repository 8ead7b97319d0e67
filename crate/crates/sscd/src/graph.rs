//! Spatiotemporal graph machinery.
//!
//! Per-frame feature tokens are graph nodes; edges connect only consecutive
//! frames. Dot-product affinities become row-stochastic transition matrices
//! via temperature softmax, palindromic walks yield round-trip matrices, and
//! their log-diagonals aggregate into the cycle-consistency disruption loss.
//! Frame indices are 1-based in this module's public API.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, softmax_rows, Matrix, Tensor3};

/// Tokens of one frame: an N×d matrix whose rows are graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures<T> {
    frame_index: usize,
    features: Matrix<T>,
}

impl<T: Scalar> FrameFeatures<T> {
    /// `frame_index` is 1-based; frames need at least two tokens (a single
    /// node makes every transition matrix trivially `[1]`).
    pub fn new(frame_index: usize, features: Matrix<T>) -> Result<Self> {
        if frame_index == 0 {
            return Err(Error::Structure("frame indices are 1-based".into()));
        }
        if features.rows() < 2 {
            return Err(Error::Structure(format!(
                "frame {frame_index} has {} token(s); at least 2 required",
                features.rows()
            )));
        }
        Ok(FrameFeatures { frame_index, features })
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }
}

/// Row-stochastic walk probabilities from tokens of frame `from_frame` to
/// tokens of frame `to_frame` == `from_frame` + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    from_frame: usize,
    to_frame: usize,
    probs: Matrix<T>,
}

impl<T: Scalar> TransitionMatrix<T> {
    /// Validates consecutiveness, squareness and row-stochasticity. Entries
    /// must lie in [0, 1]; exact zeros are tolerated so identity chains can
    /// be expressed (softmax-derived matrices are strictly positive).
    pub fn new(from_frame: usize, to_frame: usize, probs: Matrix<T>) -> Result<Self> {
        if to_frame != from_frame + 1 {
            return Err(Error::Structure(format!(
                "transition must span consecutive frames, got {from_frame} -> {to_frame}"
            )));
        }
        if probs.rows() != probs.cols() || probs.rows() < 2 {
            return Err(Error::Structure(format!(
                "transition matrix must be square with N >= 2, got {}x{}",
                probs.rows(),
                probs.cols()
            )));
        }
        let tol = T::from_f64_lossy(1e-9);
        for i in 0..probs.rows() {
            let mut sum = T::zero();
            for j in 0..probs.cols() {
                let p = probs.get(i, j);
                if p < T::zero() || p > T::one() + tol || !p.is_finite() {
                    return Err(Error::Structure(format!(
                        "transition entry ({i},{j}) = {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::Structure(format!("transition row {i} sums to {sum}, not 1")));
            }
        }
        Ok(TransitionMatrix { from_frame, to_frame, probs })
    }

    pub fn from_frame(&self) -> usize {
        self.from_frame
    }

    pub fn to_frame(&self) -> usize {
        self.to_frame
    }

    pub fn probs(&self) -> &Matrix<T> {
        &self.probs
    }
}

/// How valid start frames are enumerated for each span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanPolicy {
    /// The palindromic walk re-traverses frames k..k+z, so any start with
    /// k + z <= T is valid. Default.
    #[default]
    Retrace,
    /// Starts must satisfy k + 2z <= T, as if the walk consumed 2z distinct
    /// forward frames; spans without valid starts are dropped.
    Literal,
}

impl std::fmt::Display for SpanPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpanPolicy::Retrace => write!(f, "retrace"),
            SpanPolicy::Literal => write!(f, "literal"),
        }
    }
}

impl std::str::FromStr for SpanPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrace" => Ok(SpanPolicy::Retrace),
            "literal" => Ok(SpanPolicy::Literal),
            other => Err(Error::Config(format!(
                "unknown span policy {other:?}; expected \"retrace\" or \"literal\""
            ))),
        }
    }
}

/// The (span, valid 1-based start frames) pairs contributing to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanSchedule {
    policy: SpanPolicy,
    frames: usize,
    spans: Vec<(usize, Vec<usize>)>,
}

impl SpanSchedule {
    /// Enumerates spans 1..=T−2 under the given policy for a T-frame video.
    /// Errors when no (start, span) pair exists (fewer than 3 frames under
    /// either policy — the largest admissible span is T−2).
    pub fn new(policy: SpanPolicy, frames: usize) -> Result<Self> {
        let z_max = frames.saturating_sub(2);
        let mut spans = Vec::new();
        for z in 1..=z_max {
            let ks: Vec<usize> = match policy {
                SpanPolicy::Retrace => (1..=frames - z).collect(),
                SpanPolicy::Literal => {
                    if frames < 2 * z {
                        Vec::new()
                    } else {
                        (1..=frames - 2 * z).collect()
                    }
                }
            };
            if !ks.is_empty() {
                spans.push((z, ks));
            }
        }
        if spans.is_empty() {
            return Err(Error::Config(format!(
                "no valid (start, span) pairs for {frames} frame(s) under the {policy} policy"
            )));
        }
        Ok(SpanSchedule { policy, frames, spans })
    }

    pub fn policy(&self) -> SpanPolicy {
        self.policy
    }

    /// Number of frames this schedule was built for.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Spans in ascending z; start lists in ascending k.
    pub fn spans(&self) -> &[(usize, Vec<usize>)] {
        &self.spans
    }

    /// Total number of (k, z) pairs, i.e. Σ_z |K_z|.
    pub fn pair_count(&self) -> usize {
        self.spans.iter().map(|(_, ks)| ks.len()).sum()
    }
}

/// Summed log round-trip diagonal for one palindromic walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleScore<T> {
    /// 1-based start frame.
    pub k: usize,
    /// Forward span length.
    pub z: usize,
    /// Σᵢ log R[i,i] for the round trip R; always ≤ 0.
    pub value: T,
}

/// Dot-product affinities between tokens of two consecutive frames.
pub fn affinity<T: Scalar>(a: &FrameFeatures<T>, b: &FrameFeatures<T>) -> Result<Matrix<T>> {
    if b.frame_index != a.frame_index + 1 {
        return Err(Error::Structure(format!(
            "affinity requires consecutive frames, got {} -> {}",
            a.frame_index, b.frame_index
        )));
    }
    if a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols() {
        return Err(Error::Structure(format!(
            "affinity requires matching token grids, got {}x{} vs {}x{}",
            a.features.rows(),
            a.features.cols(),
            b.features.rows(),
            b.features.cols()
        )));
    }
    matmul(&a.features, &b.features.transpose())
}

/// Temperature softmax of an affinity matrix into walk probabilities for the
/// edge `from_frame` -> `from_frame` + 1.
pub fn transition<T: Scalar>(
    s: &Matrix<T>,
    temperature: T,
    from_frame: usize,
) -> Result<TransitionMatrix<T>> {
    if s.rows() != s.cols() {
        return Err(Error::Structure(format!(
            "affinity matrix must be square, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let probs = softmax_rows(s, temperature)?;
    TransitionMatrix::new(from_frame, from_frame + 1, probs)
}

/// All consecutive-frame transitions of a feature tensor, in frame order.
pub fn transition_chain<T: Scalar>(
    h: &Tensor3<T>,
    temperature: T,
    normalize_affinity: bool,
) -> Result<Vec<TransitionMatrix<T>>> {
    let (t, _, _) = h.dims();
    if t < 2 {
        return Err(Error::Structure(format!("need at least 2 frames, got {t}")));
    }
    let frames = prepared_frames(h, normalize_affinity)?;
    let mut chain = Vec::with_capacity(t - 1);
    for m in 0..t - 1 {
        let a = FrameFeatures::new(m + 1, frames[m].clone())?;
        let b = FrameFeatures::new(m + 2, frames[m + 1].clone())?;
        let s = affinity(&a, &b)?;
        chain.push(transition(&s, temperature, m + 1)?);
    }
    Ok(chain)
}

/// Multi-step transition from frame `k` to frame `k+z`: the ordered product
/// of the one-step matrices along the way.
pub fn multi_step<T: Scalar>(
    chain: &[TransitionMatrix<T>],
    k: usize,
    z: usize,
) -> Result<Matrix<T>> {
    let factors = collect_factors(chain, k, z)?;
    let mut product = factors[0].clone();
    for f in &factors[1..] {
        product = matmul(&product, f)?;
    }
    Ok(product)
}

/// Round-trip matrix T̄ · T̄ᵀ of a multi-step transition.
pub fn round_trip<T: Scalar>(t_bar: &Matrix<T>) -> Result<Matrix<T>> {
    if t_bar.rows() != t_bar.cols() {
        return Err(Error::shape(
            "round_trip",
            format!("expected square matrix, got {}x{}", t_bar.rows(), t_bar.cols()),
        ));
    }
    matmul(t_bar, &t_bar.transpose())
}

/// Cycle-consistency score: the summed log diagonal of a round-trip matrix.
pub fn cycle_score<T: Scalar>(round: &Matrix<T>, k: usize, z: usize) -> Result<CycleScore<T>> {
    if round.rows() != round.cols() {
        return Err(Error::shape(
            "cycle_score",
            format!("expected square matrix, got {}x{}", round.rows(), round.cols()),
        ));
    }
    let mut value = T::zero();
    for i in 0..round.rows() {
        let rii = round.get(i, i);
        if !(rii > T::zero()) {
            return Err(Error::Numerical(format!(
                "round-trip diagonal ({i},{i}) = {rii} is not positive; walk probabilities degenerate"
            )));
        }
        // log of a (0,1] probability; exactly 0 when the walker always returns.
        value += rii.ln();
    }
    Ok(CycleScore { k, z, value })
}

/// Cycle-consistency disruption loss over a whole schedule, plus the per-walk
/// breakdown (ascending z, then ascending k).
///
/// The aggregate is the average per-node log return probability: the summed
/// cycle scores divided by N · Σ_z|K_z|, so fully diffuse walks score exactly
/// −log N no matter how many tokens a frame has. Affinities are raw dot
/// products; see [`spatiotemporal_loss_opts`] for L2-normalized rows.
pub fn spatiotemporal_loss<T: Scalar>(
    h: &Tensor3<T>,
    temperature: T,
    schedule: &SpanSchedule,
) -> Result<(T, Vec<CycleScore<T>>)> {
    spatiotemporal_loss_opts(h, temperature, schedule, false)
}

/// [`spatiotemporal_loss`] with optional row L2-normalization of features
/// before the dot products.
pub fn spatiotemporal_loss_opts<T: Scalar>(
    h: &Tensor3<T>,
    temperature: T,
    schedule: &SpanSchedule,
    normalize_affinity: bool,
) -> Result<(T, Vec<CycleScore<T>>)> {
    let (loss, per_span, _) = loss_core(h, temperature, schedule, normalize_affinity, false)?;
    Ok((loss, per_span))
}

/// Loss plus its exact gradient with respect to every feature entry.
pub fn spatiotemporal_loss_grad<T: Scalar>(
    h: &Tensor3<T>,
    temperature: T,
    schedule: &SpanSchedule,
    normalize_affinity: bool,
) -> Result<(T, Vec<CycleScore<T>>, Tensor3<T>)> {
    let (loss, per_span, grad) = loss_core(h, temperature, schedule, normalize_affinity, true)?;
    Ok((loss, per_span, grad.expect("gradient requested")))
}

fn collect_factors<'a, T: Scalar>(
    chain: &'a [TransitionMatrix<T>],
    k: usize,
    z: usize,
) -> Result<Vec<&'a Matrix<T>>> {
    if z == 0 {
        return Err(Error::Parameter("span must be at least 1".into()));
    }
    let mut factors: Vec<&Matrix<T>> = Vec::with_capacity(z);
    for step in 0..z {
        let from = k + step;
        let tm = chain
            .iter()
            .find(|tm| tm.from_frame == from)
            .ok_or_else(|| Error::Structure(format!("chain has no transition from frame {from}")))?;
        if let Some(prev) = factors.last() {
            if prev.cols() != tm.probs.rows() {
                return Err(Error::Structure(format!(
                    "transition from frame {from} has {} rows, expected {}",
                    tm.probs.rows(),
                    prev.cols()
                )));
            }
        }
        factors.push(&tm.probs);
    }
    Ok(factors)
}

fn prepared_frames<T: Scalar>(h: &Tensor3<T>, normalize: bool) -> Result<Vec<Matrix<T>>> {
    let (t, n, _) = h.dims();
    if n < 2 {
        return Err(Error::Structure(format!("frames need at least 2 tokens, got {n}")));
    }
    let mut frames: Vec<Matrix<T>> = (0..t).map(|k| h.frame(k)).collect();
    if normalize {
        for frame in &mut frames {
            for r in 0..frame.rows() {
                let row = frame.row_mut(r);
                let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                if norm > T::zero() {
                    for v in row {
                        *v /= norm;
                    }
                }
            }
        }
    }
    Ok(frames)
}

fn loss_core<T: Scalar>(
    h: &Tensor3<T>,
    temperature: T,
    schedule: &SpanSchedule,
    normalize_affinity: bool,
    want_grad: bool,
) -> Result<(T, Vec<CycleScore<T>>, Option<Tensor3<T>>)> {
    let (t, n, d) = h.dims();
    if schedule.frames() != t {
        return Err(Error::Structure(format!(
            "schedule was built for {} frames but features have {t}",
            schedule.frames()
        )));
    }
    let pairs = schedule.pair_count();
    if pairs == 0 {
        return Err(Error::Config("span schedule is empty".into()));
    }

    let frames = prepared_frames(h, normalize_affinity)?;
    let mut trans: Vec<Matrix<T>> = Vec::with_capacity(t - 1);
    for m in 0..t - 1 {
        let s = matmul(&frames[m], &frames[m + 1].transpose())?;
        trans.push(softmax_rows(&s, temperature)?);
    }

    let weight = T::one() / T::from_f64_lossy((n * pairs) as f64);
    let two = T::from_f64_lossy(2.0);
    let mut per_span = Vec::with_capacity(pairs);
    let mut total = T::zero();
    let mut g_trans: Vec<Matrix<T>> = if want_grad {
        (0..t - 1).map(|_| Matrix::zeros(n, n)).collect()
    } else {
        Vec::new()
    };

    for (z, ks) in schedule.spans() {
        for &k in ks {
            let factors = &trans[k - 1..k - 1 + z];
            // Prefix products: prefixes[i] = factors[0] ... factors[i-1].
            let mut prefixes = Vec::with_capacity(z + 1);
            prefixes.push(Matrix::identity(n));
            for f in factors {
                let next = matmul(prefixes.last().unwrap(), f)?;
                prefixes.push(next);
            }
            let b = &prefixes[*z];
            let r = matmul(b, &b.transpose())?;
            let score = cycle_score(&r, k, *z)?;
            total += score.value;
            per_span.push(score);

            if want_grad {
                // d(Σ log R_ii)/dB = 2 diag(1/R_ii) B, since R = B Bᵀ.
                let mut g_b = Matrix::zeros(n, n);
                for i in 0..n {
                    let s = two * weight / r.get(i, i);
                    for j in 0..n {
                        g_b.set(i, j, s * b.get(i, j));
                    }
                }
                // Suffix products: suffixes[i] = factors[i+1] ... factors[z-1].
                let mut suffixes = vec![Matrix::identity(n); *z];
                for i in (0..z.saturating_sub(1)).rev() {
                    suffixes[i] = matmul(&factors[i + 1], &suffixes[i + 1])?;
                }
                for i in 0..*z {
                    let left = matmul(&prefixes[i].transpose(), &g_b)?;
                    let contrib = matmul(&left, &suffixes[i].transpose())?;
                    g_trans[k - 1 + i].add_scaled(&contrib, T::one())?;
                }
            }
        }
    }

    let l_t = total * weight;

    let grad = if want_grad {
        let mut g_frames: Vec<Matrix<T>> = (0..t).map(|_| Matrix::zeros(n, d)).collect();
        for m in 0..t - 1 {
            // Softmax backward, row by row: dL/da_j = p_j (g_j − Σ_l g_l p_l) / τ.
            let p = &trans[m];
            let gp = &g_trans[m];
            let mut g_s = Matrix::zeros(n, n);
            for i in 0..n {
                let mut dot = T::zero();
                for j in 0..n {
                    dot += gp.get(i, j) * p.get(i, j);
                }
                for j in 0..n {
                    g_s.set(i, j, p.get(i, j) * (gp.get(i, j) - dot) / temperature);
                }
            }
            // S = F_m F_{m+1}ᵀ.
            g_frames[m].add_scaled(&matmul(&g_s, &frames[m + 1])?, T::one())?;
            g_frames[m + 1].add_scaled(&matmul(&g_s.transpose(), &frames[m])?, T::one())?;
        }

        let mut g = Tensor3::zeros(t, n, d);
        if normalize_affinity {
            // Chain through f̂ = f/‖f‖: g = (ĝ − f̂ (ĝ·f̂)) / ‖f‖.
            for k in 0..t {
                for i in 0..n {
                    let raw = h.token(k, i);
                    let norm = raw.iter().map(|&v| v * v).sum::<T>().sqrt();
                    if norm > T::zero() {
                        let f_hat = frames[k].row(i);
                        let g_hat = g_frames[k].row(i);
                        let mut proj = T::zero();
                        for c in 0..d {
                            proj += g_hat[c] * f_hat[c];
                        }
                        let out = g.token_mut(k, i);
                        for c in 0..d {
                            out[c] = (g_hat[c] - f_hat[c] * proj) / norm;
                        }
                    }
                }
            }
        } else {
            for k in 0..t {
                for i in 0..n {
                    g.token_mut(k, i).copy_from_slice(g_frames[k].row(i));
                }
            }
        }
        Some(g)
    } else {
        None
    };

    Ok((l_t, per_span, grad))
}

/// Average round-trip diagonal entry over a whole schedule: the linear-space
/// cousin of the loss, handy for judging how much a disruptor diffused the
/// walks. 1 means every walker always returns; 1/N is full diffusion.
pub fn round_trip_diagonal_mass<T: Scalar>(
    h: &Tensor3<T>,
    temperature: T,
    schedule: &SpanSchedule,
) -> Result<T> {
    let (_, n, _) = h.dims();
    let chain = transition_chain(h, temperature, false)?;
    let mut mass = T::zero();
    for (z, ks) in schedule.spans() {
        for &k in ks {
            let r = round_trip(&multi_step(&chain, k, *z)?)?;
            for i in 0..n {
                mass += r.get(i, i);
            }
        }
    }
    Ok(mass / T::from_f64_lossy((n * schedule.pair_count()) as f64))
}

/// Exhaustively enumerates every 2z-step palindromic walk and sums the path
/// probabilities — an independent oracle for `round_trip(multi_step(...))`.
/// Refuses instances with more than 10⁶ walk configurations.
pub fn brute_force_roundtrip<T: Scalar>(
    chain: &[TransitionMatrix<T>],
    k: usize,
    z: usize,
) -> Result<Matrix<T>> {
    let factors = collect_factors(chain, k, z)?;
    let n = factors[0].rows();
    let states = (n as f64).powi(2 * z as i32);
    if states > 1e6 {
        return Err(Error::OracleScope(format!(
            "N^(2z) = {n}^{} exceeds the enumeration budget of 1e6",
            2 * z
        )));
    }
    // The palindromic chain: z forward matrices, then their transposes in
    // reverse order (the reverse walk along the same frames).
    let mut walk_mats: Vec<Matrix<T>> = factors.iter().map(|m| (*m).clone()).collect();
    for f in factors.iter().rev() {
        walk_mats.push(f.transpose());
    }

    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, T::from_f64_lossy(sum_paths(&walk_mats, i, j)));
        }
    }
    Ok(out)
}

fn sum_paths<T: Scalar>(mats: &[Matrix<T>], from: usize, to: usize) -> f64 {
    match mats.split_first() {
        None => {
            if from == to {
                1.0
            } else {
                0.0
            }
        }
        Some((head, rest)) => {
            let mut acc = 0.0;
            for next in 0..head.cols() {
                let p = head.get(from, next).to_f64_lossy();
                if p != 0.0 {
                    acc += p * sum_paths(rest, next, to);
                }
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    type M = Matrix<f64>;

    fn uniform_transition(n: usize, from: usize) -> TransitionMatrix<f64> {
        let p = M::from_vec(n, n, vec![1.0 / n as f64; n * n]).unwrap();
        TransitionMatrix::new(from, from + 1, p).unwrap()
    }

    fn identity_transition(n: usize, from: usize) -> TransitionMatrix<f64> {
        TransitionMatrix::new(from, from + 1, M::identity(n)).unwrap()
    }

    #[test]
    fn frame_features_reject_single_token() {
        assert!(FrameFeatures::new(1, M::zeros(1, 4)).is_err());
        assert!(FrameFeatures::new(0, M::zeros(2, 4)).is_err());
        assert!(FrameFeatures::new(1, M::zeros(2, 4)).is_ok());
    }

    #[test]
    fn affinity_of_orthonormal_rows_is_identity() {
        let a = FrameFeatures::new(1, M::identity(2)).unwrap();
        let b = FrameFeatures::new(2, M::identity(2)).unwrap();
        assert_eq!(affinity(&a, &b).unwrap(), M::identity(2));
    }

    #[test]
    fn affinity_zero_row_propagates() {
        let mut f = M::seeded_gaussian(3, 4, 1);
        for c in 0..4 {
            f.set(1, c, 0.0);
        }
        let a = FrameFeatures::new(1, f).unwrap();
        let b = FrameFeatures::new(2, M::seeded_gaussian(3, 4, 2)).unwrap();
        let s = affinity(&a, &b).unwrap();
        for j in 0..3 {
            assert_eq!(s.get(1, j), 0.0);
        }
    }

    #[test]
    fn affinity_matches_dot_product_oracle() {
        let fa = M::seeded_gaussian(3, 4, 5);
        let fb = M::seeded_gaussian(3, 4, 6);
        let s = affinity(
            &FrameFeatures::new(4, fa.clone()).unwrap(),
            &FrameFeatures::new(5, fb.clone()).unwrap(),
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for c in 0..4 {
                    dot += fa.get(i, c) * fb.get(j, c);
                }
                assert!((s.get(i, j) - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinity_rejects_nonconsecutive_frames() {
        let a = FrameFeatures::new(1, M::identity(2)).unwrap();
        let b = FrameFeatures::new(3, M::identity(2)).unwrap();
        assert!(affinity(&a, &b).is_err());
    }

    #[test]
    fn transition_of_zero_affinity_is_uniform() {
        let tm = transition(&M::zeros(3, 3), 0.07, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((tm.probs().get(i, j) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_sharpens_to_identity_at_low_temperature() {
        let tm = transition(&M::identity(2), 1e-3, 1).unwrap();
        assert!((tm.probs().get(0, 0) - 1.0).abs() < 1e-12);
        assert!(tm.probs().get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn transition_identity_affinity_unit_temperature() {
        let tm = transition(&M::identity(2), 1.0, 1).unwrap();
        let e = std::f64::consts::E;
        let p = e / (e + 1.0);
        assert!((tm.probs().get(0, 0) - p).abs() < 1e-4);
        assert!((tm.probs().get(0, 0) - 0.7311).abs() < 1e-4);
        assert!((tm.probs().get(1, 0) - (1.0 - p)).abs() < 1e-4);
    }

    #[test]
    fn multi_step_single_span_returns_factor() {
        let tm = uniform_transition(3, 2);
        let got = multi_step(&[identity_transition(3, 1), tm.clone()], 2, 1).unwrap();
        assert_eq!(&got, tm.probs());
    }

    #[test]
    fn multi_step_identity_chain_is_identity() {
        let chain = vec![identity_transition(2, 1), identity_transition(2, 2)];
        assert_eq!(multi_step(&chain, 1, 2).unwrap(), M::identity(2));
    }

    #[test]
    fn multi_step_detects_gaps() {
        let chain = vec![identity_transition(2, 1), identity_transition(2, 3)];
        assert!(multi_step(&chain, 1, 2).is_err());
    }

    #[test]
    fn round_trip_of_identity_is_identity() {
        assert_eq!(round_trip(&M::identity(3)).unwrap(), M::identity(3));
    }

    #[test]
    fn round_trip_of_uniform_stays_uniform() {
        let u = M::from_vec(2, 2, vec![0.5; 4]).unwrap();
        let r = round_trip(&u).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_diagonal_closed_form() {
        let p = 0.7311;
        let q = 0.2689;
        let t_bar = M::from_rows(vec![vec![p, q], vec![q, p]]).unwrap();
        let r = round_trip(&t_bar).unwrap();
        assert!((r.get(0, 0) - (p * p + q * q)).abs() < 1e-12);
        assert!((r.get(0, 0) - 0.6068).abs() < 1e-4);
    }

    #[test]
    fn cycle_score_of_identity_is_exactly_zero() {
        let c = cycle_score(&M::identity(5), 1, 2).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn cycle_score_uniform_two_nodes() {
        let r = round_trip(&M::from_vec(2, 2, vec![0.5; 4]).unwrap()).unwrap();
        let c = cycle_score(&r, 1, 1).unwrap();
        assert!((c.value - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((c.value + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn cycle_score_for_partially_mixing_walk() {
        let p = 0.7311;
        let q = 0.2689;
        let t_bar = M::from_rows(vec![vec![p, q], vec![q, p]]).unwrap();
        let r = round_trip(&t_bar).unwrap();
        let c = cycle_score(&r, 1, 1).unwrap();
        let want = 2.0 * (p * p + q * q).ln();
        assert!((c.value - want).abs() < 1e-12);
        assert!((c.value + 0.9994).abs() < 1e-3);
    }

    #[test]
    fn cycle_score_rejects_nonpositive_diagonal() {
        let m = M::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(cycle_score(&m, 1, 1).is_err());
    }

    #[test]
    fn schedule_retrace_enumerates_all_starts() {
        let s = SpanSchedule::new(SpanPolicy::Retrace, 4).unwrap();
        assert_eq!(s.spans(), &[(1, vec![1, 2, 3]), (2, vec![1, 2])]);
        assert_eq!(s.pair_count(), 5);
    }

    #[test]
    fn schedule_literal_caps_span() {
        let s = SpanSchedule::new(SpanPolicy::Literal, 5).unwrap();
        assert_eq!(s.spans(), &[(1, vec![1, 2, 3]), (2, vec![1])]);
    }

    #[test]
    fn schedule_rejects_too_few_frames() {
        assert!(SpanSchedule::new(SpanPolicy::Retrace, 2).is_err());
        assert!(SpanSchedule::new(SpanPolicy::Literal, 2).is_err());
        assert!(SpanSchedule::new(SpanPolicy::Retrace, 3).is_ok());
    }

    #[test]
    fn loss_is_exactly_neg_log_n_for_zero_features() {
        for n in [2usize, 3, 5] {
            let h = Tensor3::<f64>::zeros(4, n, 3);
            let schedule = SpanSchedule::new(SpanPolicy::Retrace, 4).unwrap();
            let (l_t, per_span) = spatiotemporal_loss(&h, 0.07, &schedule).unwrap();
            assert!((l_t + (n as f64).ln()).abs() < 1e-9, "n={n} l_t={l_t}");
            assert_eq!(per_span.len(), schedule.pair_count());
        }
    }

    #[test]
    fn loss_vanishes_for_identical_orthonormal_frames_at_low_temperature() {
        let mut h = Tensor3::<f64>::zeros(4, 2, 2);
        for k in 0..4 {
            h.set(k, 0, 0, 1.0);
            h.set(k, 1, 1, 1.0);
        }
        let schedule = SpanSchedule::new(SpanPolicy::Retrace, 4).unwrap();
        let (l_t, _) = spatiotemporal_loss(&h, 1e-3, &schedule).unwrap();
        assert!(l_t.abs() < 1e-12, "l_t={l_t}");
    }

    #[test]
    fn loss_is_mean_of_scores_over_nodes() {
        let h = Tensor3::<f64>::seeded_gaussian(5, 3, 4, 33);
        let schedule = SpanSchedule::new(SpanPolicy::Retrace, 5).unwrap();
        let (l_t, per_span) = spatiotemporal_loss(&h, 0.5, &schedule).unwrap();
        let mean: f64 =
            per_span.iter().map(|c| c.value).sum::<f64>() / per_span.len() as f64;
        assert!((l_t - mean / 3.0).abs() < 1e-12);
        assert!(l_t <= 0.0);
    }

    #[test]
    fn loss_matches_walk_enumeration_oracle() {
        let h = Tensor3::<f64>::seeded_gaussian(4, 2, 3, 77).quantize_f32();
        let schedule = SpanSchedule::new(SpanPolicy::Retrace, 4).unwrap();
        let chain = transition_chain(&h, 0.5, false).unwrap();
        let (l_t, per_span) = spatiotemporal_loss(&h, 0.5, &schedule).unwrap();
        let mut total = 0.0;
        for score in &per_span {
            let oracle = brute_force_roundtrip(&chain, score.k, score.z).unwrap();
            let direct = round_trip(&multi_step(&chain, score.k, score.z).unwrap()).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((oracle.get(i, j) - direct.get(i, j)).abs() < 1e-10);
                }
            }
            total += cycle_score(&oracle, score.k, score.z).unwrap().value;
        }
        let expected = total / (2.0 * per_span.len() as f64);
        assert!((l_t - expected).abs() < 1e-10);
    }

    #[test]
    fn brute_force_identity_and_uniform_chains() {
        let id_chain = vec![identity_transition(2, 1), identity_transition(2, 2)];
        assert_eq!(brute_force_roundtrip(&id_chain, 1, 2).unwrap(), M::identity(2));

        let uni_chain = vec![uniform_transition(2, 1), uniform_transition(2, 2)];
        let r = brute_force_roundtrip(&uni_chain, 1, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn brute_force_refuses_oversized_enumeration() {
        let chain: Vec<_> = (1..=12).map(|k| uniform_transition(4, k)).collect();
        assert!(matches!(
            brute_force_roundtrip(&chain, 1, 12),
            Err(crate::error::Error::OracleScope(_))
        ));
    }

    #[test]
    fn chapman_kolmogorov_holds() {
        let h = Tensor3::<f64>::seeded_gaussian(5, 3, 4, 9);
        let chain = transition_chain(&h, 0.3, false).unwrap();
        let whole = multi_step(&chain, 1, 4).unwrap();
        let left = multi_step(&chain, 1, 2).unwrap();
        let right = multi_step(&chain, 3, 2).unwrap();
        let composed = matmul(&left, &right).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((whole.get(i, j) - composed.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for &normalize in &[false, true] {
            let h = Tensor3::<f64>::seeded_gaussian(4, 2, 3, 13);
            let schedule = SpanSchedule::new(SpanPolicy::Retrace, 4).unwrap();
            let (_, _, grad) =
                spatiotemporal_loss_grad(&h, 0.5, &schedule, normalize).unwrap();
            let eps = 1e-6;
            let mut worst = 0.0f64;
            for idx in 0..h.data().len() {
                let mut hp = h.clone();
                hp.data_mut()[idx] += eps;
                let mut hm = h.clone();
                hm.data_mut()[idx] -= eps;
                let (lp, _) = spatiotemporal_loss_opts(&hp, 0.5, &schedule, normalize).unwrap();
                let (lm, _) = spatiotemporal_loss_opts(&hm, 0.5, &schedule, normalize).unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grad.data()[idx];
                let rel = (numeric - analytic).abs()
                    / numeric.abs().max(analytic.abs()).max(1e-5);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-6, "normalize={normalize} worst rel err {worst}");
        }
    }

    #[test]
    fn gradient_is_zero_at_fully_symmetric_point() {
        let h = Tensor3::<f64>::zeros(3, 2, 4);
        let schedule = SpanSchedule::new(SpanPolicy::Retrace, 3).unwrap();
        let (_, _, grad) = spatiotemporal_loss_grad(&h, 0.07, &schedule, false).unwrap();
        for &g in grad.data() {
            assert_eq!(g, 0.0);
        }
    }
}
