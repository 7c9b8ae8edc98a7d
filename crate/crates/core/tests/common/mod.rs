//! Independent oracles and fixtures shared by the integration tests.
//!
//! Oracles are deliberately naive: direct sums over explicit joints,
//! quadratic scans, O(m^2) step-up loops.

#![allow(dead_code)]

pub mod sidecar;

use ctxprobe::dataset::{EntityRecord, RelationSpec};
use rand::Rng;
use std::path::PathBuf;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn capital_spec() -> RelationSpec {
    RelationSpec::load(repo_root().join("configs/relations/capital.json")).expect("capital spec")
}

pub fn capital_entities() -> Vec<EntityRecord> {
    ctxprobe::dataset::load_entities(repo_root().join("configs/entities/capital.json")).expect("capital entities")
}

/// `n_real` real entities with gold answers drawn round-robin from
/// `answers`, and `n_fake` fake ones.
pub fn synthetic_entities(n_real: usize, n_fake: usize, answers: &[String]) -> Vec<EntityRecord> {
    let mut out = Vec::new();
    for i in 0..n_real {
        out.push(EntityRecord {
            id: format!("real{i}"),
            surface: format!("Realland{i}"),
            is_real: true,
            gold_answer: Some(answers[i % answers.len()].clone()),
            entity_class: "country".into(),
        });
    }
    for i in 0..n_fake {
        out.push(EntityRecord {
            id: format!("fake{i}"),
            surface: format!("Fakeland{i}"),
            is_real: false,
            gold_answer: None,
            entity_class: "country".into(),
        });
    }
    out
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, allow_zeros: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if allow_zeros && rng.random_bool(0.2) {
                0.0
            } else {
                // Spread over several orders of magnitude.
                (rng.random_range(-6.0..0.0f64)).exp()
            }
        })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn xlogx_over(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| xlogx_over(*a, *b)).sum()
}

/// I(C; A) from the explicit joint p(c, a) = w_c p(a | c), by a triple loop.
pub fn joint_mi(rows: &[Vec<f64>], weights: &[f64]) -> f64 {
    let na = rows[0].len();
    let joint: Vec<Vec<f64>> = rows.iter().zip(weights).map(|(r, w)| r.iter().map(|p| w * p).collect()).collect();
    let mut mi = 0.0;
    for c in 0..rows.len() {
        let pc: f64 = (0..na).map(|a| joint[c][a]).sum();
        for a in 0..na {
            let pa: f64 = (0..rows.len()).map(|k| joint[k][a]).sum();
            let pca = joint[c][a];
            if pca > 0.0 {
                mi += pca * (pca / (pc * pa)).ln();
            }
        }
    }
    mi
}

/// I(X; Y) of a joint matrix.
pub fn mutual_information(joint: &[Vec<f64>]) -> f64 {
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..joint[0].len()).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    mi
}

/// Definitional half-PMI for outcome `x`: Σ_y p(y|x) ln(p(y|x) / p(y)).
pub fn hpmi(joint: &[Vec<f64>], x: usize) -> f64 {
    let px: f64 = joint[x].iter().sum();
    let py: Vec<f64> = (0..joint[0].len()).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
    joint[x].iter().zip(&py).map(|(pxy, py)| xlogx_over(pxy / px, *py)).sum()
}

/// Benjamini-Hochberg by the step-up definition: the adjusted value at rank
/// r is min over j >= r of (m / j) * p_(j), clipped to 1.
pub fn bh_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted: Vec<(usize, f64)> = p.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut adjusted = vec![0.0; m];
    for r in 0..m {
        let mut best = f64::INFINITY;
        for (j, item) in sorted.iter().enumerate().skip(r) {
            best = best.min((m as f64 / (j + 1) as f64) * item.1);
        }
        adjusted[sorted[r].0] = best.min(1.0);
    }
    adjusted
}

/// Rank by counting: #{smaller} + (#{equal} + 1) / 2.
pub fn count_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson(&count_ranks(x), &count_ranks(y))
}

/// Start indices of `phrase` as a contiguous subsequence of `tokens`.
pub fn phrase_starts(tokens: &[String], phrase: &[String]) -> Vec<usize> {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - phrase.len()).filter(|&i| tokens[i..i + phrase.len()] == *phrase).collect()
}

/// Quadratic co-occurrence count over all (entity start, answer start)
/// pairs within `window`, skipping i == j for identical phrases.
pub fn brute_cooc(docs: &[Vec<String>], entity: &[String], answer: &[String], window: usize) -> u64 {
    let same = entity == answer;
    let mut n = 0;
    for d in docs {
        for i in phrase_starts(d, entity) {
            for j in phrase_starts(d, answer) {
                if same && i == j {
                    continue;
                }
                if i.abs_diff(j) <= window {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Two-sided Kolmogorov-Smirnov distance of a sample from U(0, 1).
pub fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let hi = (i + 1) as f64 / n - x;
        let lo = x - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Hand-built fixture for the graph tests: 12 triples over predicates
/// `capital` and `borders`, including a duplicate, an incoming/outgoing
/// overlap and a self-loop. Expected degrees are enumerated by hand.
pub fn toy_graph() -> (Vec<(&'static str, &'static str, &'static str)>, Vec<(&'static str, &'static str, u64)>) {
    let triples = vec![
        ("slovenia", "borders", "italy"),
        ("slovenia", "borders", "austria"),
        ("slovenia", "borders", "croatia"),
        ("italy", "borders", "slovenia"),
        ("croatia", "borders", "slovenia"),
        ("hungary", "borders", "slovenia"),
        ("slovenia", "borders", "italy"),
        ("austria", "borders", "italy"),
        ("slovenia", "capital", "ljubljana"),
        ("ljubljana", "capital", "slovenia"),
        ("vatican", "borders", "vatican"),
        ("italy", "capital", "rome"),
    ];
    let expected = vec![
        // out {italy, austria, croatia} ∪ in {italy, croatia, hungary}
        ("slovenia", "borders", 4),
        // out {slovenia} ∪ in {slovenia, austria}
        ("italy", "borders", 2),
        // out {italy} ∪ in {slovenia}
        ("austria", "borders", 2),
        ("croatia", "borders", 1),
        ("hungary", "borders", 1),
        ("vatican", "borders", 1),
        ("slovenia", "capital", 1),
        ("ljubljana", "capital", 1),
        ("italy", "capital", 1),
        ("rome", "capital", 1),
        ("rome", "borders", 0),
        ("atlantis", "capital", 0),
    ];
    (triples, expected)
}
