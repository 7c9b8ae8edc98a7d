//! Group comparisons and bookkeeping statistics: Monte Carlo permutation
//! tests over the Welch t-statistic, Benjamini–Hochberg adjustment, Cohen's
//! d, Spearman's rho, answer-agreement labels and the memorization ratio.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("each group needs at least {min} values (got {n_a} and {n_b})")]
    TooFewSamples { min: usize, n_a: usize, n_b: usize },
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("permutation count must be at least 1")]
    NoPermutations,
    #[error("both groups have zero variance; the t-statistic is undefined")]
    ZeroVariance,
    #[error("pooled standard deviation is zero")]
    ZeroPooledSd,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("constant input; correlation is undefined")]
    Constant,
    #[error("p-value {0} outside (0, 1]")]
    InvalidPValue(f64),
    #[error("memorization ratio is undefined: no original or context answers")]
    UndefinedMemorizationRatio,
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// H1: mean(a) > mean(b).
    Greater,
    TwoSided,
}

impl Tail {
    pub fn as_str(self) -> &'static str {
        match self {
            Tail::Greater => "greater",
            Tail::TwoSided => "two_sided",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_raw: f64,
    /// Filled in by [`bh_correct`]; equals `p_raw` until then.
    pub p_adjusted: f64,
    pub effect_size: f64,
    pub tail: Tail,
    pub n_a: usize,
    pub n_b: usize,
    pub k: usize,
    pub seed: u64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples { min: 2, n_a: a.len(), n_b: b.len() });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Welch's t from group sums. Zero denominators map to ±inf (or 0 when the
/// means agree) so that degenerate permutations still order correctly.
fn welch_from_sums(n_a: f64, s_a: f64, q_a: f64, n_b: f64, s_b: f64, q_b: f64) -> f64 {
    let m_a = s_a / n_a;
    let m_b = s_b / n_b;
    let v_a = ((q_a - s_a * m_a) / (n_a - 1.0)).max(0.0);
    let v_b = ((q_b - s_b * m_b) / (n_b - 1.0)).max(0.0);
    let se = (v_a / n_a + v_b / n_b).sqrt();
    let diff = m_a - m_b;
    if se > 0.0 {
        diff / se
    } else if diff > 0.0 {
        f64::INFINITY
    } else if diff < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Welch's t-statistic of `a` against `b`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<f64> {
    check_groups(a, b)?;
    let (m_a, v_a) = mean_var(a);
    let (m_b, v_b) = mean_var(b);
    let se = (v_a / a.len() as f64 + v_b / b.len() as f64).sqrt();
    if se == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((m_a - m_b) / se)
}

/// Monte Carlo permutation test over the Welch t-statistic.
///
/// The p-value is `(1 + #{permutations at least as extreme}) / (k + 1)`.
/// Permutations are drawn from a ChaCha8 stream seeded with `seed`.
pub fn permutation_test(a: &[f64], b: &[f64], tail: Tail, k: usize, seed: u64) -> Result<TestResult> {
    if k == 0 {
        return Err(StatsError::NoPermutations);
    }
    let observed = welch_t(a, b)?;
    let effect = effect_size(a, b).unwrap_or(0.0);

    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n_a, n_b) = (a.len(), b.len());
    let total_s: f64 = pooled.iter().sum();
    let total_q: f64 = pooled.iter().map(|x| x * x).sum();
    // Slack so the identity permutation counts as "at least as extreme"
    // despite a different summation order.
    let slack = 1e-9 * observed.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..k {
        let (head, _) = pooled.partial_shuffle(&mut rng, n_a);
        let s_a: f64 = head.iter().sum();
        let q_a: f64 = head.iter().map(|x| x * x).sum();
        let t = welch_from_sums(n_a as f64, s_a, q_a, n_b as f64, total_s - s_a, total_q - q_a);
        let extreme = match tail {
            Tail::Greater => t >= observed - slack,
            Tail::TwoSided => t.abs() >= observed.abs() - slack,
        };
        if extreme {
            hits += 1;
        }
    }
    let p_raw = (1 + hits) as f64 / (k + 1) as f64;
    Ok(TestResult {
        statistic: observed,
        p_raw,
        p_adjusted: p_raw,
        effect_size: effect,
        tail,
        n_a,
        n_b,
        k,
        seed,
    })
}

/// Derives an independent per-test seed from a master seed and a label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Benjamini–Hochberg step-up adjustment.
///
/// Returns the adjusted p-values in input order and the rejection flags
/// (`adjusted <= alpha`).
pub fn bh_correct(p_values: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if let Some(&bad) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        // m / rank >= 1 exactly, so the product never rounds below p.
        let candidate = (m as f64 / rank as f64) * p_values[i];
        running = running.min(candidate);
        adjusted[i] = running.min(1.0);
    }
    let reject = adjusted.iter().map(|&p| p <= alpha).collect();
    Ok((adjusted, reject))
}

/// Cohen's d with the pooled standard deviation; positive when `a` has the
/// larger mean.
pub fn effect_size(a: &[f64], b: &[f64]) -> Result<f64> {
    check_groups(a, b)?;
    let (m_a, v_a) = mean_var(a);
    let (m_b, v_b) = mean_var(b);
    let (n_a, n_b) = (a.len() as f64, b.len() as f64);
    let pooled = (((n_a - 1.0) * v_a + (n_b - 1.0) * v_b) / (n_a + n_b - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(StatsError::ZeroPooledSd);
    }
    Ok((m_a - m_b) / pooled)
}

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman's rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples { min: 3, n_a: x.len(), n_b: y.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementLabel {
    Context,
    Original,
    Other,
}

impl AgreementLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            AgreementLabel::Context => "context",
            AgreementLabel::Original => "original",
            AgreementLabel::Other => "other",
        }
    }
}

/// Normalization applied before string matching answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    /// Require the answer to match whole words rather than any substring.
    pub whole_words: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { lowercase: true, strip_punctuation: true, whole_words: false }
    }
}

impl MatchConfig {
    pub fn normalize(&self, s: &str) -> String {
        let mapped: String = s
            .chars()
            .map(|c| if self.strip_punctuation && c.is_ascii_punctuation() { ' ' } else { c })
            .collect();
        let joined = mapped.split_whitespace().collect::<Vec<_>>().join(" ");
        if self.lowercase {
            joined.to_lowercase()
        } else {
            joined
        }
    }

    fn contains(&self, haystack: &str, needle: &str) -> bool {
        if needle.is_empty() {
            return false;
        }
        if self.whole_words {
            format!(" {haystack} ").contains(&format!(" {needle} "))
        } else {
            haystack.contains(needle)
        }
    }
}

/// Labels a generated answer by whether it agrees with the in-context
/// answer, the model's original answer, or neither. If both appear, the
/// context wins.
pub fn classify_answer(generated: &str, context_answer: &str, original_answer: &str) -> AgreementLabel {
    classify_answer_with(&MatchConfig::default(), generated, context_answer, original_answer)
}

pub fn classify_answer_with(
    cfg: &MatchConfig,
    generated: &str,
    context_answer: &str,
    original_answer: &str,
) -> AgreementLabel {
    let g = cfg.normalize(generated);
    let c = cfg.normalize(context_answer);
    let o = cfg.normalize(original_answer);
    let has_c = cfg.contains(&g, &c);
    let has_o = cfg.contains(&g, &o);
    if has_c && has_o {
        log::debug!("answer `{generated}` contains both `{context_answer}` and `{original_answer}`; labelled context");
    }
    if has_c {
        AgreementLabel::Context
    } else if has_o {
        AgreementLabel::Original
    } else {
        AgreementLabel::Other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemorizationRatio {
    pub value: f64,
    pub p_o: usize,
    pub p_s: usize,
}

/// Fraction of conflict contexts where the model kept its original answer.
/// `Other` labels are ignored.
pub fn memorization_ratio(labels: &[AgreementLabel]) -> Result<MemorizationRatio> {
    let p_o = labels.iter().filter(|l| **l == AgreementLabel::Original).count();
    let p_s = labels.iter().filter(|l| **l == AgreementLabel::Context).count();
    if p_o + p_s == 0 {
        return Err(StatsError::UndefinedMemorizationRatio);
    }
    Ok(MemorizationRatio { value: p_o as f64 / (p_o + p_s) as f64, p_o, p_s })
}

/// Unbiased (n − 1) sample variance; `None` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    (xs.len() >= 2).then(|| mean_var(xs).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exchangeable_null_gives_large_p() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = permutation_test(&a, &a, Tail::Greater, 10_000, 7).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_raw >= 0.4, "p = {}", r.p_raw);
    }

    #[test]
    fn large_separation_hits_the_floor() {
        let b: Vec<f64> = (0..20).map(|i| i as f64 * 0.37).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1000.0).collect();
        let k = 10_000;
        let r = permutation_test(&a, &b, Tail::Greater, k, 1).unwrap();
        assert_eq!(r.p_raw, 1.0 / (k as f64 + 1.0));
        assert!(r.effect_size > 0.0);
    }

    #[test]
    fn permutation_test_errors() {
        assert!(matches!(permutation_test(&[1.0], &[1.0, 2.0], Tail::Greater, 10, 0), Err(StatsError::TooFewSamples { .. })));
        assert!(matches!(permutation_test(&[1.0, 1.0], &[2.0, 2.0], Tail::Greater, 10, 0), Err(StatsError::ZeroVariance)));
        assert!(matches!(permutation_test(&[1.0, 2.0], &[2.0, 3.0], Tail::Greater, 0, 0), Err(StatsError::NoPermutations)));
        assert!(matches!(permutation_test(&[1.0, f64::NAN], &[2.0, 3.0], Tail::Greater, 5, 0), Err(StatsError::NonFinite)));
    }

    #[test]
    fn seeded_determinism() {
        let a = [0.3, 0.9, 0.4, 1.2];
        let b = [0.1, 0.2, 0.7, 0.3];
        let r1 = permutation_test(&a, &b, Tail::TwoSided, 500, 99).unwrap();
        let r2 = permutation_test(&a, &b, Tail::TwoSided, 500, 99).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn bh_examples() {
        let (adj, rej) = bh_correct(&[0.03], 0.05).unwrap();
        assert_eq!(adj, vec![0.03]);
        assert_eq!(rej, vec![true]);
        let (adj, _) = bh_correct(&[0.2; 4], 0.05).unwrap();
        assert!(adj.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let (adj, rej) = bh_correct(&[0.01, 0.02, 0.03, 0.04, 0.05], 0.05).unwrap();
        // (m / j) · p_(j) = 0.05 for every rank.
        for p in &adj {
            assert_abs_diff_eq!(*p, 0.05, epsilon = 1e-15);
        }
        assert!(rej.iter().all(|&r| r));
        assert_eq!(bh_correct(&[], 0.05).unwrap(), (vec![], vec![]));
        assert!(matches!(bh_correct(&[0.0], 0.05), Err(StatsError::InvalidPValue(_))));
    }

    #[test]
    fn effect_size_examples() {
        assert_eq!(effect_size(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // mean diff 1, pooled sd √2
        assert_abs_diff_eq!(effect_size(&[2.0, 4.0], &[1.0, 3.0]).unwrap(), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        // sd = 1 in both groups, mean diff 1
        assert_abs_diff_eq!(effect_size(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(effect_size(&[1.0, 1.0], &[2.0, 2.0]), Err(StatsError::ZeroPooledSd)));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_abs_diff_eq!(spearman(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_abs_diff_eq!(spearman(&x, &rev).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Constant)));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_answer("Oz", "Oz", "Ljubljana"), AgreementLabel::Context);
        assert_eq!(classify_answer("It is Ljubljana.", "Oz", "Ljubljana"), AgreementLabel::Original);
        assert_eq!(classify_answer("unknown", "Oz", "Ljubljana"), AgreementLabel::Other);
        assert_eq!(classify_answer("Oz, not Ljubljana", "Oz", "Ljubljana"), AgreementLabel::Context);
        let strict = MatchConfig { whole_words: true, ..Default::default() };
        assert_eq!(classify_answer_with(&strict, "ozone", "Oz", "Ljubljana"), AgreementLabel::Other);
    }

    #[test]
    fn memorization_ratio_examples() {
        use AgreementLabel::*;
        assert_eq!(memorization_ratio(&[Original, Original]).unwrap().value, 1.0);
        assert_eq!(memorization_ratio(&[Context]).unwrap().value, 0.0);
        let mr = memorization_ratio(&[Original, Context, Context, Other]).unwrap();
        assert_abs_diff_eq!(mr.value, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!((mr.p_o, mr.p_s), (1, 2));
        assert!(matches!(memorization_ratio(&[Other]), Err(StatsError::UndefinedMemorizationRatio)));
    }

    #[test]
    fn variance_example() {
        assert_abs_diff_eq!(sample_variance(&[0.1, 0.3]).unwrap(), 0.02, epsilon = 1e-15);
        assert_eq!(sample_variance(&[0.1]), None);
    }
}
