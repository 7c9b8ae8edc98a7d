//! Information-theoretic scores over categorical answer distributions.
//!
//! All quantities are in nats. `0 · ln 0` is taken to be `0` everywhere.
//!
//! | Function | Quantity |
//! |----------|----------|
//! | [`entropy`] | H(p) = -Σ p ln p |
//! | [`kl_divergence`] | KL(p ‖ q) = Σ p ln(p / q) |
//! | [`persuasion_score`] | KL(p(A \| c, q(e)) ‖ prior) |
//! | [`susceptibility_score`] | I(C; A \| q(e)) under the context weights |
//! | [`entity_independent_persuasion`] | Σ_e w_e · persuasion(c, e) |
//! | [`entity_independent_susceptibility`] | Σ_e w_e · susceptibility(e) |

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

/// Vectors longer than this are summed pairwise.
const PAIRWISE_THRESHOLD: usize = 4096;

/// Tolerance on the total mass of an already-normalized distribution.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Tolerance on the sum of context or entity weights.
pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("distribution is empty")]
    Empty,
    #[error("probability mass must be positive before normalization (sum = {0})")]
    NonPositiveMass(f64),
    #[error("invalid probability {value} at index {index}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("vocabulary size mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("conditional table has no rows")]
    EmptyTable,
    #[error("duplicate context id `{0}`")]
    DuplicateContext(String),
    #[error("weights must have one entry per row ({expected}), got {got}")]
    WeightLength { expected: usize, got: usize },
    #[error("weights must be nonnegative and sum to 1 (sum = {0})")]
    InvalidWeights(f64),
    #[error("no entities given")]
    NoEntities,
    #[error("entity `{0}` has no weight")]
    MissingEntityWeight(String),
    #[error("joint distribution is invalid: {0}")]
    InvalidJoint(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Sum of `n` terms produced by `term`, switching to pairwise summation
/// above [`PAIRWISE_THRESHOLD`] entries.
fn accumulate<F: Fn(usize) -> f64>(n: usize, term: &F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
        if hi - lo <= PAIRWISE_THRESHOLD {
            (lo..hi).map(term).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, term) + go(mid, hi, term)
        }
    }
    go(0, n, term)
}

/// Sums a slice with the same pairwise policy used by the metrics.
pub fn stable_sum(xs: &[f64]) -> f64 {
    accumulate(xs.len(), &|i| xs[i])
}

/// A categorical probability vector over an answer vocabulary.
///
/// Construction normalizes the input, so every value of this type sums to
/// one within [`NORMALIZATION_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerDistribution {
    probs: Vec<f64>,
}

impl AnswerDistribution {
    /// Normalizes nonnegative weights into a distribution.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(MetricError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(MetricError::InvalidProbability { index, value });
            }
        }
        let total = stable_sum(&weights);
        if !(total > 0.0) || !total.is_finite() {
            return Err(MetricError::NonPositiveMass(total));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { probs })
    }

    /// Builds a distribution from natural-log probabilities. `-inf` entries
    /// become zeros; the result is renormalized.
    pub fn from_logprobs(logprobs: &[f64]) -> Result<Self> {
        if logprobs.is_empty() {
            return Err(MetricError::Empty);
        }
        let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(MetricError::NonPositiveMass(0.0));
        }
        let mut weights = Vec::with_capacity(logprobs.len());
        for (index, &lp) in logprobs.iter().enumerate() {
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(MetricError::InvalidProbability { index, value: lp });
            }
            weights.push((lp - max).exp());
        }
        Self::new(weights)
    }

    /// Same as [`from_logprobs`](Self::from_logprobs) for float32 payloads
    /// (the cache and wire format).
    pub fn from_logprobs_f32(logprobs: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = logprobs.iter().map(|&x| f64::from(x)).collect();
        Self::from_logprobs(&wide)
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        Self::new(vec![1.0; vocab_size])
    }

    pub fn point_mass(vocab_size: usize, index: usize) -> Result<Self> {
        if index >= vocab_size {
            return Err(MetricError::DimensionMismatch(index + 1, vocab_size));
        }
        let mut w = vec![0.0; vocab_size];
        w[index] = 1.0;
        Self::new(w)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    /// Natural-log probabilities as float32 (`-inf` for zeros).
    pub fn logprobs_f32(&self) -> Vec<f32> {
        self.probs.iter().map(|&p| p.ln() as f32).collect()
    }

    /// Index of the most probable answer (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Adds `floor` to every entry and renormalizes.
    pub fn with_floor(&self, floor: f64) -> Result<Self> {
        Self::new(self.probs.iter().map(|&p| p + floor).collect())
    }

    /// Applies `perm` to the answer indices: entry `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.probs.len() {
            return Err(MetricError::DimensionMismatch(perm.len(), self.probs.len()));
        }
        let mut out = vec![0.0; self.probs.len()];
        for (i, &j) in perm.iter().enumerate() {
            out[j] = self.probs[i];
        }
        Ok(Self { probs: out })
    }
}

/// One row of a [`ConditionalTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRow {
    pub context_id: String,
    pub dist: AnswerDistribution,
}

/// Answer distributions for one fixed query, one row per context, together
/// with the context weights p(c).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    rows: Vec<ConditionalRow>,
    weights: Vec<f64>,
}

impl ConditionalTable {
    /// Table with uniform context weights.
    pub fn uniform(rows: Vec<(String, AnswerDistribution)>) -> Result<Self> {
        let n = rows.len();
        let weights = if n == 0 { Vec::new() } else { vec![1.0 / n as f64; n] };
        Self::with_weights(rows, weights)
    }

    pub fn with_weights(rows: Vec<(String, AnswerDistribution)>, weights: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(MetricError::EmptyTable);
        }
        if weights.len() != rows.len() {
            return Err(MetricError::WeightLength { expected: rows.len(), got: weights.len() });
        }
        check_weights(&weights)?;
        let vocab = rows[0].1.vocab_size();
        let mut seen = HashSet::new();
        for (id, d) in &rows {
            if d.vocab_size() != vocab {
                return Err(MetricError::DimensionMismatch(vocab, d.vocab_size()));
            }
            if !seen.insert(id.as_str()) {
                return Err(MetricError::DuplicateContext(id.clone()));
            }
        }
        let rows = rows
            .into_iter()
            .map(|(context_id, dist)| ConditionalRow { context_id, dist })
            .collect();
        Ok(Self { rows, weights })
    }

    pub fn rows(&self) -> &[ConditionalRow] {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.rows[0].dist.vocab_size()
    }

    /// The context-weighted mixture Σ_c w_c · p(· | c).
    pub fn marginal(&self) -> AnswerDistribution {
        let v = self.vocab_size();
        let n = self.rows.len();
        let probs = (0..v)
            .map(|a| accumulate(n, &|c| self.weights[c] * self.rows[c].dist.probs[a]))
            .collect();
        // Convex combination of normalized rows: already normalized.
        AnswerDistribution { probs }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(MetricError::InvalidWeights(f64::NAN));
    }
    let total = stable_sum(weights);
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(MetricError::InvalidWeights(total));
    }
    Ok(())
}

/// Shannon entropy in nats.
pub fn entropy(d: &AnswerDistribution) -> f64 {
    let p = &d.probs;
    let h = -accumulate(p.len(), &|i| if p[i] > 0.0 { p[i] * p[i].ln() } else { 0.0 });
    h.max(0.0)
}

/// KL(p ‖ q) in nats. Returns `f64::INFINITY` when `p` puts mass where `q`
/// has none.
pub fn kl_divergence(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    if p.vocab_size() != q.vocab_size() {
        return Err(MetricError::DimensionMismatch(p.vocab_size(), q.vocab_size()));
    }
    let (p, q) = (&p.probs, &q.probs);
    if p.iter().zip(q).any(|(&pi, &qi)| pi > 0.0 && qi == 0.0) {
        return Ok(f64::INFINITY);
    }
    let kl = accumulate(p.len(), &|i| if p[i] > 0.0 { p[i] * (p[i] / q[i]).ln() } else { 0.0 });
    // Rounding can push an exact zero slightly negative.
    Ok(kl.max(0.0))
}

/// Half-pointwise mutual information between one context and the answer,
/// i.e. the divergence of the in-context distribution from the prior.
pub fn persuasion_score(cond: &AnswerDistribution, prior: &AnswerDistribution) -> Result<f64> {
    kl_divergence(cond, prior)
}

/// Mutual information between the context and the answer for one query,
/// using the table's marginal as the reference distribution.
pub fn susceptibility_score(table: &ConditionalTable) -> f64 {
    let m = table.marginal();
    let n = table.len();
    let terms: Vec<f64> = (0..n)
        .map(|c| {
            let w = table.weights[c];
            if w == 0.0 {
                0.0
            } else {
                // m dominates every row with positive weight, so this is finite.
                w * kl_divergence(&table.rows[c].dist, &m).expect("rows share vocab")
            }
        })
        .collect();
    stable_sum(&terms).max(0.0)
}

/// Per-context persuasion scores against the table's marginal, in row order.
pub fn persuasion_scores_vs_marginal(table: &ConditionalTable) -> Vec<f64> {
    let m = table.marginal();
    table
        .rows
        .iter()
        .map(|r| kl_divergence(&r.dist, &m).expect("rows share vocab"))
        .collect()
}

/// Which distribution the persuasion score is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Mixture of the in-context distributions over the sampled contexts.
    #[default]
    Marginal,
    /// The model's distribution for the bare query, floored and renormalized.
    NoContext,
}

impl PriorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorMode::Marginal => "marginal",
            PriorMode::NoContext => "no-context",
        }
    }
}

impl std::str::FromStr for PriorMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "marginal" | "marginal-prior" => Ok(PriorMode::Marginal),
            "no-context" | "no-context-prior" => Ok(PriorMode::NoContext),
            other => Err(format!("unknown prior mode `{other}`")),
        }
    }
}

/// Default floor added to the bare-query prior before taking KL against it.
pub const DEFAULT_PRIOR_FLOOR: f64 = 1e-12;

/// Resolves the reference distribution for persuasion scores.
pub fn resolve_prior(
    mode: PriorMode,
    table: &ConditionalTable,
    bare: Option<&AnswerDistribution>,
    floor: f64,
) -> Result<AnswerDistribution> {
    match mode {
        PriorMode::Marginal => Ok(table.marginal()),
        PriorMode::NoContext => {
            let bare = bare.ok_or(MetricError::Empty)?;
            if bare.vocab_size() != table.vocab_size() {
                return Err(MetricError::DimensionMismatch(bare.vocab_size(), table.vocab_size()));
            }
            bare.with_floor(floor)
        }
    }
}

fn normalized_entity_weights<K: Ord + Clone + ToString>(
    keys: impl Iterator<Item = K>,
    weights: Option<&BTreeMap<K, f64>>,
) -> Result<Vec<(K, f64)>> {
    let keys: Vec<K> = keys.collect();
    if keys.is_empty() {
        return Err(MetricError::NoEntities);
    }
    let out: Vec<(K, f64)> = match weights {
        None => {
            let w = 1.0 / keys.len() as f64;
            keys.into_iter().map(|k| (k, w)).collect()
        }
        Some(map) => keys
            .into_iter()
            .map(|k| {
                map.get(&k)
                    .copied()
                    .map(|w| (k.clone(), w))
                    .ok_or_else(|| MetricError::MissingEntityWeight(k.to_string()))
            })
            .collect::<Result<_>>()?,
    };
    let ws: Vec<f64> = out.iter().map(|(_, w)| *w).collect();
    check_weights(&ws)?;
    Ok(out)
}

/// Persuasion of one context averaged over entities.
///
/// `tables` maps each entity to `(in-context distribution, prior)`. With
/// `entity_weights = None` the entities are weighted uniformly.
pub fn entity_independent_persuasion(
    tables: &BTreeMap<String, (AnswerDistribution, AnswerDistribution)>,
    entity_weights: Option<&BTreeMap<String, f64>>,
) -> Result<f64> {
    let weights = normalized_entity_weights(tables.keys().cloned(), entity_weights)?;
    let mut terms = Vec::with_capacity(weights.len());
    for (entity, w) in weights {
        let (cond, prior) = &tables[&entity];
        terms.push(w * persuasion_score(cond, prior)?);
    }
    Ok(stable_sum(&terms))
}

/// Susceptibility averaged over entities.
pub fn entity_independent_susceptibility(
    tables: &BTreeMap<String, ConditionalTable>,
    entity_weights: Option<&BTreeMap<String, f64>>,
) -> Result<f64> {
    let weights = normalized_entity_weights(tables.keys().cloned(), entity_weights)?;
    let vocab = tables.values().next().map(ConditionalTable::vocab_size).unwrap_or(0);
    let mut terms = Vec::with_capacity(weights.len());
    for (entity, w) in weights {
        let t = &tables[&entity];
        if t.vocab_size() != vocab {
            return Err(MetricError::DimensionMismatch(vocab, t.vocab_size()));
        }
        terms.push(w * susceptibility_score(t));
    }
    Ok(stable_sum(&terms))
}

/// A finite joint distribution p(x, y) stored row-major (x indexes rows).
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    n_x: usize,
    n_y: usize,
    data: Vec<f64>,
}

impl JointDistribution {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n_x = rows.len();
        let n_y = rows.first().map_or(0, Vec::len);
        if n_x == 0 || n_y == 0 {
            return Err(MetricError::InvalidJoint("empty".into()));
        }
        if rows.iter().any(|r| r.len() != n_y) {
            return Err(MetricError::InvalidJoint("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MetricError::InvalidJoint("negative or non-finite entry".into()));
        }
        let total = stable_sum(&data);
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MetricError::InvalidJoint(format!("sums to {total}")));
        }
        Ok(Self { n_x, n_y, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n_y + y]
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }
}

/// HPMI(X=x; Y) for one outcome and the two entropy decompositions of it.
#[derive(Debug, Clone, PartialEq)]
pub struct HpmiRow {
    pub x: usize,
    pub p_x: f64,
    pub hpmi: f64,
    /// H(X=x) − H(X=x | Y).
    pub via_x_entropies: f64,
    /// H_x(Y) − H(Y | X=x), with H_x the pointwise cross-entropy.
    pub via_y_entropies: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpmiReport {
    pub rows: Vec<HpmiRow>,
    /// Outcomes of X with zero probability.
    pub excluded_x: Vec<usize>,
    /// Outcomes of Y with zero probability.
    pub excluded_y: Vec<usize>,
    /// Σ_x p(x) · HPMI(X=x; Y).
    pub expected_hpmi: f64,
    pub max_residual_x: f64,
    pub max_residual_y: f64,
}

/// Computes HPMI(X=x; Y) for every x with p(x) > 0 and checks both entropy
/// decompositions against the definition.
pub fn hpmi_decompositions(joint: &JointDistribution) -> HpmiReport {
    let (nx, ny) = (joint.n_x, joint.n_y);
    let px: Vec<f64> = (0..nx).map(|x| accumulate(ny, &|y| joint.get(x, y))).collect();
    let py: Vec<f64> = (0..ny).map(|y| accumulate(nx, &|x| joint.get(x, y))).collect();
    let excluded_x: Vec<usize> = (0..nx).filter(|&x| px[x] <= 0.0).collect();
    let excluded_y: Vec<usize> = (0..ny).filter(|&y| py[y] <= 0.0).collect();

    let mut rows = Vec::new();
    let (mut res_x, mut res_y) = (0.0f64, 0.0f64);
    for x in 0..nx {
        if px[x] <= 0.0 {
            continue;
        }
        let cond = |y: usize| joint.get(x, y) / px[x];
        let hpmi = accumulate(ny, &|y| {
            let c = cond(y);
            if c > 0.0 { c * (c / py[y]).ln() } else { 0.0 }
        });
        // -ln p(x) + Σ_y p(y|x) ln p(x|y)
        let via_x = -px[x].ln()
            + accumulate(ny, &|y| {
                let c = cond(y);
                if c > 0.0 { c * (joint.get(x, y) / py[y]).ln() } else { 0.0 }
            });
        // -Σ_y p(y|x) ln p(y) + Σ_y p(y|x) ln p(y|x)
        let cross = -accumulate(ny, &|y| {
            let c = cond(y);
            if c > 0.0 { c * py[y].ln() } else { 0.0 }
        });
        let neg_cond_entropy = accumulate(ny, &|y| {
            let c = cond(y);
            if c > 0.0 { c * c.ln() } else { 0.0 }
        });
        let via_y = cross + neg_cond_entropy;
        res_x = res_x.max((hpmi - via_x).abs());
        res_y = res_y.max((hpmi - via_y).abs());
        rows.push(HpmiRow { x, p_x: px[x], hpmi, via_x_entropies: via_x, via_y_entropies: via_y });
    }
    let weighted: Vec<f64> = rows.iter().map(|r| r.p_x * r.hpmi).collect();
    HpmiReport {
        expected_hpmi: stable_sum(&weighted),
        rows,
        excluded_x,
        excluded_y,
        max_residual_x: res_x,
        max_residual_y: res_y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(v: &[f64]) -> AnswerDistribution {
        AnswerDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn construction_normalizes_and_rejects_bad_input() {
        let x = d(&[2.0, 2.0]);
        assert_eq!(x.probs(), &[0.5, 0.5]);
        assert!(matches!(AnswerDistribution::new(vec![0.0, 0.0]), Err(MetricError::NonPositiveMass(_))));
        assert!(AnswerDistribution::new(vec![]).is_err());
        assert!(AnswerDistribution::new(vec![1.0, -0.1]).is_err());
        assert!(AnswerDistribution::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&d(&[1.0, 0.0, 0.0])), 0.0);
        assert_abs_diff_eq!(entropy(&d(&[1.0; 4])), 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(entropy(&d(&[0.7, 0.3])), 0.610864, epsilon = 1e-6);
    }

    #[test]
    fn kl_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(kl_divergence(&d(&[0.9, 0.1]), &d(&[0.5, 0.5])).unwrap(), 0.368_064_207_168_497_1, epsilon = 1e-12);
        assert_eq!(kl_divergence(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap(), f64::INFINITY);
        assert!(matches!(kl_divergence(&d(&[1.0]), &d(&[0.5, 0.5])), Err(MetricError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn persuasion_is_kl() {
        let c = d(&[0.1, 0.6, 0.3]);
        let p = d(&[0.3, 0.3, 0.4]);
        assert_eq!(persuasion_score(&c, &p).unwrap().to_bits(), kl_divergence(&c, &p).unwrap().to_bits());
        assert_eq!(persuasion_score(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn susceptibility_examples() {
        let same = ConditionalTable::uniform(vec![("a".into(), d(&[0.2, 0.8])), ("b".into(), d(&[0.2, 0.8]))]).unwrap();
        assert_abs_diff_eq!(susceptibility_score(&same), 0.0, epsilon = 1e-15);
        let det = ConditionalTable::uniform(vec![("a".into(), d(&[1.0, 0.0])), ("b".into(), d(&[0.0, 1.0]))]).unwrap();
        assert_abs_diff_eq!(susceptibility_score(&det), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn table_validation() {
        assert!(matches!(ConditionalTable::uniform(vec![]), Err(MetricError::EmptyTable)));
        let dup = ConditionalTable::uniform(vec![("a".into(), d(&[1.0])), ("a".into(), d(&[1.0]))]);
        assert!(matches!(dup, Err(MetricError::DuplicateContext(_))));
        let mixed = ConditionalTable::uniform(vec![("a".into(), d(&[1.0])), ("b".into(), d(&[1.0, 1.0]))]);
        assert!(matches!(mixed, Err(MetricError::DimensionMismatch(1, 2))));
        let bad_w = ConditionalTable::with_weights(vec![("a".into(), d(&[1.0]))], vec![0.5]);
        assert!(matches!(bad_w, Err(MetricError::InvalidWeights(_))));
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let t = ConditionalTable::with_weights(
            vec![("a".into(), d(&[1.0, 0.0])), ("b".into(), d(&[0.0, 1.0]))],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert_eq!(susceptibility_score(&t), 0.0);
    }

    #[test]
    fn no_context_prior_is_floored() {
        let t = ConditionalTable::uniform(vec![("a".into(), d(&[0.5, 0.5]))]).unwrap();
        let bare = d(&[1.0, 0.0]);
        let prior = resolve_prior(PriorMode::NoContext, &t, Some(&bare), DEFAULT_PRIOR_FLOOR).unwrap();
        assert!(persuasion_score(&t.rows()[0].dist, &prior).unwrap().is_finite());
        assert_eq!(resolve_prior(PriorMode::Marginal, &t, None, 0.0).unwrap(), t.marginal());
    }

    #[test]
    fn entity_independent_examples() {
        let mut one = BTreeMap::new();
        one.insert("e".to_string(), (d(&[1.0, 0.0]), d(&[0.5, 0.5])));
        assert_abs_diff_eq!(entity_independent_persuasion(&one, None).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let mut two = one.clone();
        two.insert("f".to_string(), (d(&[0.5, 0.5]), d(&[0.5, 0.5])));
        assert_abs_diff_eq!(entity_independent_persuasion(&two, None).unwrap(), 0.346574, epsilon = 1e-6);
        assert!(matches!(entity_independent_persuasion(&BTreeMap::new(), None), Err(MetricError::NoEntities)));

        let mut tables = BTreeMap::new();
        tables.insert(
            "e".to_string(),
            ConditionalTable::uniform(vec![("a".into(), d(&[1.0, 0.0])), ("b".into(), d(&[0.0, 1.0]))]).unwrap(),
        );
        assert_abs_diff_eq!(entity_independent_susceptibility(&tables, None).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert!(matches!(
            entity_independent_susceptibility(&BTreeMap::new(), None),
            Err(MetricError::NoEntities)
        ));
    }

    #[test]
    fn hpmi_independent_and_diagonal() {
        let px = [0.2, 0.8];
        let py = [0.1, 0.3, 0.6];
        let rows: Vec<Vec<f64>> = px.iter().map(|a| py.iter().map(|b| a * b).collect()).collect();
        let report = hpmi_decompositions(&JointDistribution::new(&rows).unwrap());
        for r in &report.rows {
            assert_abs_diff_eq!(r.hpmi, 0.0, epsilon = 1e-15);
        }

        let k = 5;
        let diag: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 / k as f64 } else { 0.0 }).collect()).collect();
        let report = hpmi_decompositions(&JointDistribution::new(&diag).unwrap());
        for r in &report.rows {
            assert_abs_diff_eq!(r.hpmi, (k as f64).ln(), epsilon = 1e-12);
        }
        assert!(report.max_residual_x < 1e-12 && report.max_residual_y < 1e-12);
    }

    #[test]
    fn hpmi_reports_degenerate_outcomes() {
        let rows = vec![vec![0.5, 0.0], vec![0.0, 0.0], vec![0.5, 0.0]];
        let report = hpmi_decompositions(&JointDistribution::new(&rows).unwrap());
        assert_eq!(report.excluded_x, vec![1]);
        assert_eq!(report.excluded_y, vec![1]);
        assert_eq!(report.rows.len(), 2);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_long_vectors() {
        let v: Vec<f64> = (0..10_000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let naive: f64 = v.iter().sum();
        assert_abs_diff_eq!(stable_sum(&v), naive, epsilon = 1e-10);
        let big = AnswerDistribution::new(v).unwrap();
        assert!(entropy(&big) <= (10_000f64).ln());
    }
}
