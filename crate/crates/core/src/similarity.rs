//! Similarity primitives and the composite text / image / hybrid
//! similarity functions used by the coverage predictor.
//!
//! Text similarity blends TF-IDF cosine with a symmetrized BLEU score;
//! image similarity converts three histogram distances (Wasserstein,
//! KL, Jensen-Shannon) through a distance-to-similarity map; the hybrid
//! score is a weighted blend of the two. Composite weights are
//! normalized by their sum so identical inputs score exactly 1.0.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use crate::matrix::dot;
use crate::transform::{token_text_to_image, TokenText, TransformConfig};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// How a histogram distance d >= 0 is mapped into a similarity in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceToSimilarity {
    /// sigma(d) = exp(-d)
    ExpNeg,
    /// sigma(d) = 1 / (1 + d)
    InverseOnePlus,
}

impl DistanceToSimilarity {
    pub fn apply(self, d: f64) -> f64 {
        match self {
            DistanceToSimilarity::ExpNeg => (-d).exp(),
            DistanceToSimilarity::InverseOnePlus => 1.0 / (1.0 + d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityConfig {
    /// Text weights: cosine (Y1) and BLEU (Y2).
    pub a1: f64,
    pub a2: f64,
    /// Image weights: Wasserstein (X1), KL (X2), JS (X3).
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    /// Hybrid weights: text (St) and image (Si).
    pub w1: f64,
    pub w2: f64,
    pub bleu_order: usize,
    pub distance_to_similarity: DistanceToSimilarity,
    /// Transform settings for text-derived images.
    pub image: TransformConfig,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            a1: 0.5,
            a2: 0.5,
            b1: 1.0 / 3.0,
            b2: 1.0 / 3.0,
            b3: 1.0 / 3.0,
            w1: 0.5,
            w2: 0.5,
            bleu_order: 4,
            distance_to_similarity: DistanceToSimilarity::ExpNeg,
            image: TransformConfig::default(),
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<(), SimilarityError> {
        let weights = [
            self.a1, self.a2, self.b1, self.b2, self.b3, self.w1, self.w2,
        ];
        if weights.iter().any(|w| *w < 0.0) {
            return Err(SimilarityError::BadWeights(
                "weights must be non-negative".into(),
            ));
        }
        for (name, sum) in [
            ("a1+a2", self.a1 + self.a2),
            ("b1+b2+b3", self.b1 + self.b2 + self.b3),
            ("w1+w2", self.w1 + self.w2),
        ] {
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(SimilarityError::BadWeights(format!(
                    "{name} must sum to 1, got {sum}"
                )));
            }
        }
        if self.bleu_order == 0 {
            return Err(SimilarityError::BadWeights("bleu_order must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum SimilarityError {
    ZeroVector,
    DimensionMismatch { left: usize, right: usize },
    EmptyCandidate,
    UnnormalizedHistogram { sum: f64 },
    BadWeights(String),
    EmptyText,
}

impl fmt::Display for SimilarityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityError::ZeroVector => write!(f, "cosine is undefined for zero vectors"),
            SimilarityError::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left} vs {right}")
            }
            SimilarityError::EmptyCandidate => write!(f, "BLEU candidate must be non-empty"),
            SimilarityError::UnnormalizedHistogram { sum } => {
                write!(f, "histogram must sum to 1, got {sum}")
            }
            SimilarityError::BadWeights(msg) => write!(f, "bad similarity weights: {msg}"),
            SimilarityError::EmptyText => write!(f, "token text must be non-empty"),
        }
    }
}

impl std::error::Error for SimilarityError {}

/// Cosine similarity (Y1), clamped to [-1, 1] against rounding.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU (Y2): geometric mean of clipped n-gram precisions for
/// n = 1..=order, +1 smoothing applied to any zero-match order, times
/// the brevity penalty `min(1, e^(1 - r/c))`.
pub fn bleu(
    candidate: &TokenText,
    reference: &TokenText,
    order: usize,
) -> Result<f64, SimilarityError> {
    if candidate.tokens.is_empty() {
        return Err(SimilarityError::EmptyCandidate);
    }
    let mut log_sum = 0.0;
    for n in 1..=order {
        let cand = ngram_counts(&candidate.tokens, n);
        let reference = ngram_counts(&reference.tokens, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(gram, count)| (*count).min(reference.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if total == 0 {
            1.0 // candidate shorter than n: order contributes nothing
        } else if matched == 0 {
            (matched + 1) as f64 / (total + 1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let geo_mean = (log_sum / order as f64).exp();
    let c = candidate.tokens.len() as f64;
    let r = reference.tokens.len() as f64;
    let brevity = (1.0 - r / c).exp().min(1.0);
    Ok(geo_mean * brevity)
}

fn check_histogram(h: &[f64]) -> Result<(), SimilarityError> {
    let sum: f64 = h.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SimilarityError::UnnormalizedHistogram { sum });
    }
    Ok(())
}

fn check_same_len(p: &[f64], q: &[f64]) -> Result<(), SimilarityError> {
    if p.len() != q.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// 1-D Wasserstein distance (X1) between normalized histograms over an
/// evenly spaced support scaled to [0, 1]:
/// `sum_i |CDF_p(i) - CDF_q(i)| / (bins - 1)`.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64, SimilarityError> {
    check_same_len(p, q)?;
    check_histogram(p)?;
    check_histogram(q)?;
    if p.len() < 2 {
        return Ok(0.0);
    }
    let delta = 1.0 / (p.len() - 1) as f64;
    let mut cdf_p = 0.0;
    let mut cdf_q = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        cdf_p += a;
        cdf_q += b;
        total += (cdf_p - cdf_q).abs() * delta;
    }
    Ok(total)
}

/// KL divergence (X2) in nats, with additive smoothing eps = 1e-9 and
/// renormalization applied to both arguments.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64, SimilarityError> {
    check_same_len(p, q)?;
    check_histogram(p)?;
    check_histogram(q)?;
    const EPS: f64 = 1e-9;
    let smooth = |h: &[f64]| -> Vec<f64> {
        let sum: f64 = h.iter().map(|v| v + EPS).sum();
        h.iter().map(|v| (v + EPS) / sum).collect()
    };
    let ps = smooth(p);
    let qs = smooth(q);
    Ok(ps
        .iter()
        .zip(&qs)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Jensen-Shannon divergence (X3) in nats, in [0, ln 2]. Always finite,
/// so no smoothing is applied.
pub fn js_div(p: &[f64], q: &[f64]) -> Result<f64, SimilarityError> {
    check_same_len(p, q)?;
    check_histogram(p)?;
    check_histogram(q)?;
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / ((x + y) / 2.0)).ln())
            .sum()
    };
    Ok((0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)).max(0.0))
}

/// TF-IDF unigram vectors for a pair of texts over their union
/// vocabulary (document frequency taken from the pair itself).
fn pair_tfidf(t1: &TokenText, t2: &TokenText) -> (Vec<f64>, Vec<f64>) {
    let mut union: BTreeMap<&str, usize> = BTreeMap::new();
    for t in t1.tokens.iter().chain(&t2.tokens) {
        let next = union.len();
        union.entry(t.as_str()).or_insert(next);
    }
    let count = |text: &TokenText| -> Vec<f64> {
        let mut v = vec![0.0; union.len()];
        for t in &text.tokens {
            v[union[t.as_str()]] += 1.0;
        }
        v
    };
    let mut u = count(t1);
    let mut v = count(t2);
    for i in 0..union.len() {
        let df = (u[i] > 0.0) as usize + (v[i] > 0.0) as usize;
        let idf = (3.0 / (1.0 + df as f64)).ln() + 1.0;
        u[i] *= idf;
        v[i] *= idf;
    }
    (u, v)
}

/// Text similarity St: weighted blend of non-negative TF-IDF cosine and
/// symmetrized BLEU (mean of both directions). Result in [0, 1].
pub fn text_similarity(
    t1: &TokenText,
    t2: &TokenText,
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    if t1.tokens.is_empty() || t2.tokens.is_empty() {
        return Err(SimilarityError::EmptyText);
    }
    let (u, v) = pair_tfidf(t1, t2);
    let cos = cosine_sim(&u, &v)?.max(0.0);
    let bleu_sym =
        0.5 * bleu(t1, t2, cfg.bleu_order)? + 0.5 * bleu(t2, t1, cfg.bleu_order)?;
    Ok((cfg.a1 * cos + cfg.a2 * bleu_sym) / (cfg.a1 + cfg.a2))
}

/// Image similarity Si over normalized pixel histograms: each distance
/// is mapped through the configured sigma, then blended. KL is
/// asymmetric, so its component uses the mean of both directions; the
/// result is symmetric and in (0, 1].
pub fn image_similarity_histograms(
    p: &[f64],
    q: &[f64],
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    let sigma = cfg.distance_to_similarity;
    let sw = sigma.apply(wasserstein_1d(p, q)?);
    let skl = sigma.apply(0.5 * kl_div(p, q)? + 0.5 * kl_div(q, p)?);
    let sjs = sigma.apply(js_div(p, q)?);
    Ok((cfg.b1 * sw + cfg.b2 * skl + cfg.b3 * sjs) / (cfg.b1 + cfg.b2 + cfg.b3))
}

pub fn image_similarity(
    i1: &crate::transform::MalImage,
    i2: &crate::transform::MalImage,
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    image_similarity_histograms(&i1.histogram(), &i2.histogram(), cfg)
}

/// Hybrid similarity S = blend of St on the texts and Si on their
/// derived images.
pub fn hybrid_similarity(
    t1: &TokenText,
    t2: &TokenText,
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    let st = text_similarity(t1, t2, cfg)?;
    let i1 = token_text_to_image(t1, &cfg.image).map_err(|_| SimilarityError::EmptyText)?;
    let i2 = token_text_to_image(t2, &cfg.image).map_err(|_| SimilarityError::EmptyText)?;
    let si = image_similarity(&i1, &i2, cfg)?;
    Ok((cfg.w1 * st + cfg.w2 * si) / (cfg.w1 + cfg.w2))
}

/// Writes the pairwise similarity matrix CSV `id_a,id_b,st,si,s`.
pub fn export_similarity_matrix(
    left: &[TokenText],
    right: &[TokenText],
    cfg: &SimilarityConfig,
    out: &mut dyn Write,
) -> Result<(), Box<dyn std::error::Error>> {
    writeln!(out, "id_a,id_b,st,si,s")?;
    let hist = |t: &TokenText| -> Result<Vec<f64>, SimilarityError> {
        Ok(token_text_to_image(t, &cfg.image)
            .map_err(|_| SimilarityError::EmptyText)?
            .histogram())
    };
    let right_hists: Vec<Vec<f64>> = right.iter().map(hist).collect::<Result<_, _>>()?;
    for a in left {
        let ha = hist(a)?;
        for (b, hb) in right.iter().zip(&right_hists) {
            let st = text_similarity(a, b, cfg)?;
            let si = image_similarity_histograms(&ha, hb, cfg)?;
            let s = (cfg.w1 * st + cfg.w2 * si) / (cfg.w1 + cfg.w2);
            writeln!(out, "{},{},{st},{si},{s}", a.sample_id, b.sample_id)?;
        }
    }
    Ok(())
}
