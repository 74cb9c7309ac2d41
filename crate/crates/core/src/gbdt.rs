//! Gradient-boosted regression trees for binary classification, plus the
//! dual-ensemble combiner.
//!
//! Boosting minimizes logistic loss: the base score is the log-odds of
//! the class prior and each round fits a regression tree to the current
//! negative gradient with second-order (Newton) leaf weights
//! `-sum(g) / (sum(h) + lambda)`. Leaves store the unscaled Newton step;
//! the learning rate is applied when scores accumulate, so stored leaf
//! values always equal the closed form. Training is deterministic under
//! a fixed seed.

use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MODEL_MAGIC: &str = "MALDYN-GBDT-v1";
pub const DUAL_MODEL_MAGIC: &str = "MALDYN-GBDT-DUAL-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: f64,
    pub colsample: f64,
    /// L2 regularization on leaf weights; 0 by default.
    pub lambda: f64,
    pub seed: u64,
}

impl GbdtParams {
    /// Depth-wise profile: deeper trees, moderate shrinkage.
    pub fn profile_a(seed: u64) -> Self {
        GbdtParams {
            n_trees: 60,
            max_depth: 6,
            learning_rate: 0.1,
            min_leaf: 1,
            subsample: 1.0,
            colsample: 1.0,
            lambda: 0.0,
            seed,
        }
    }

    /// Shallower, faster profile with a higher learning rate.
    pub fn profile_b(seed: u64) -> Self {
        GbdtParams {
            n_trees: 60,
            max_depth: 4,
            learning_rate: 0.2,
            min_leaf: 1,
            subsample: 1.0,
            colsample: 1.0,
            lambda: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), GbdtError> {
        let ok = self.max_depth >= 1
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.min_leaf >= 1
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.colsample > 0.0
            && self.colsample <= 1.0
            && self.lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GbdtError::BadParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Sum of training hessians that reached this node.
        cover: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf { value: f64, cover: f64 },
}

impl TreeNode {
    fn leaf_value(&self, row: &dyn Fn(usize) -> f64) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if row(*feature) < *threshold {
                    left.leaf_value(row)
                } else {
                    right.leaf_value(row)
                }
            }
        }
    }

    /// Cover-weighted expected leaf value under this node.
    fn expectation(&self) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split { left, right, .. } => {
                let (cl, cr) = (left.cover(), right.cover());
                (cl * left.expectation() + cr * right.expectation()) / (cl + cr)
            }
        }
    }

    fn cover(&self) -> f64 {
        match self {
            TreeNode::Leaf { cover, .. } | TreeNode::Split { cover, .. } => *cover,
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    magic: String,
    pub base_score: f64,
    pub params: GbdtParams,
    pub feature_names: Vec<String>,
    /// Full-data logistic loss after each boosting round.
    pub train_loss: Vec<f64>,
    pub trees: Vec<TreeNode>,
    n_features: usize,
    /// Total split gain credited to each feature during training.
    gain_totals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualModel {
    magic: String,
    pub model_a: GbdtModel,
    pub model_b: GbdtModel,
    pub blend: f64,
}

#[derive(Debug)]
pub enum GbdtError {
    EmptyData,
    SingleClass,
    BadParams(String),
    BadBlend(f64),
    VersionMismatch { expected: String, found: String },
    Serde(String),
    Io(std::io::Error),
}

impl fmt::Display for GbdtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GbdtError::EmptyData => write!(f, "training data must have at least 2 rows"),
            GbdtError::SingleClass => write!(f, "training labels must include both classes"),
            GbdtError::BadParams(p) => write!(f, "invalid gbdt params: {p}"),
            GbdtError::BadBlend(b) => write!(f, "blend must lie in [0,1], got {b}"),
            GbdtError::VersionMismatch { expected, found } => {
                write!(f, "model version mismatch: expected {expected}, found {found}")
            }
            GbdtError::Serde(msg) => write!(f, "model serialization: {msg}"),
            GbdtError::Io(e) => write!(f, "model io: {e}"),
        }
    }
}

impl std::error::Error for GbdtError {}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logistic_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let p = sigmoid(s).clamp(1e-15, 1.0 - 1e-15);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / scores.len() as f64
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    params: &'a GbdtParams,
    gain_totals: &'a mut [f64],
}

impl TreeBuilder<'_> {
    fn leaf(&self, indices: &[usize]) -> TreeNode {
        let g: f64 = indices.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = indices.iter().map(|&i| self.hess[i]).sum();
        TreeNode::Leaf {
            value: -g / (h + self.params.lambda),
            cover: h,
        }
    }

    fn build(&mut self, indices: &[usize], depth: usize) -> TreeNode {
        if depth >= self.params.max_depth || indices.len() < 2 * self.params.min_leaf {
            return self.leaf(indices);
        }
        let g_total: f64 = indices.iter().map(|&i| self.grad[i]).sum();
        let h_total: f64 = indices.iter().map(|&i| self.hess[i]).sum();
        let lambda = self.params.lambda;
        let parent_obj = g_total * g_total / (h_total + lambda);

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut column: Vec<(f64, f64, f64)> = Vec::with_capacity(indices.len());
        for &feature in self.features {
            column.clear();
            column.extend(
                indices
                    .iter()
                    .map(|&i| (self.rows[i][feature], self.grad[i], self.hess[i])),
            );
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut gl = 0.0;
            let mut hl = 0.0;
            for (pos, window) in column.windows(2).enumerate() {
                gl += window[0].1;
                hl += window[0].2;
                if window[0].0 == window[1].0 {
                    continue; // no boundary between equal values
                }
                let n_left = pos + 1;
                let n_right = indices.len() - n_left;
                if n_left < self.params.min_leaf || n_right < self.params.min_leaf {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = 0.5
                    * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_obj);
                // strict > keeps the lowest (feature, threshold) on ties
                if gain > best.map_or(0.0, |(g, _, _)| g) {
                    let threshold = 0.5 * (window[0].0 + window[1].0);
                    best = Some((gain, feature, threshold));
                }
            }
        }

        let Some((gain, feature, threshold)) = best else {
            return self.leaf(indices);
        };
        self.gain_totals[feature] += gain;
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.rows[i][feature] < threshold);
        let left = self.build(&left_idx, depth + 1);
        let right = self.build(&right_idx, depth + 1);
        let cover: f64 = indices.iter().map(|&i| self.hess[i]).sum();
        TreeNode::Split {
            feature,
            threshold,
            cover,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Trains an ensemble on dense rows with labels in {0, 1}.
pub fn train(
    rows: &[Vec<f64>],
    labels: &[f64],
    params: &GbdtParams,
    feature_names: Vec<String>,
) -> Result<GbdtModel, GbdtError> {
    params.validate()?;
    if rows.len() < 2 || rows.len() != labels.len() {
        return Err(GbdtError::EmptyData);
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == rows.len() {
        return Err(GbdtError::SingleClass);
    }
    let n_features = rows.iter().map(Vec::len).max().unwrap_or(0);
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut padded = r.clone();
            padded.resize(n_features, 0.0);
            padded
        })
        .collect();

    let prior = positives as f64 / rows.len() as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let mut scores = vec![base_score; rows.len()];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut train_loss = Vec::with_capacity(params.n_trees);
    let mut gain_totals = vec![0.0; n_features];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let all_rows: Vec<usize> = (0..rows.len()).collect();
    let all_features: Vec<usize> = (0..n_features).collect();

    for _round in 0..params.n_trees {
        let grad: Vec<f64> = scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| sigmoid(s) - y)
            .collect();
        let hess: Vec<f64> = scores
            .iter()
            .map(|&s| {
                let p = sigmoid(s);
                (p * (1.0 - p)).max(1e-16)
            })
            .collect();

        let row_sample: Vec<usize> = if params.subsample < 1.0 {
            let count = ((rows.len() as f64 * params.subsample) as usize).max(1);
            let mut shuffled = all_rows.clone();
            shuffled.shuffle(&mut rng);
            let mut sample = shuffled[..count].to_vec();
            sample.sort_unstable();
            sample
        } else {
            all_rows.clone()
        };
        let feature_sample: Vec<usize> = if params.colsample < 1.0 {
            let count = ((n_features as f64 * params.colsample).ceil() as usize).max(1);
            let mut shuffled = all_features.clone();
            shuffled.shuffle(&mut rng);
            let mut sample = shuffled[..count].to_vec();
            sample.sort_unstable();
            sample
        } else {
            all_features.clone()
        };

        let mut builder = TreeBuilder {
            rows: &rows,
            grad: &grad,
            hess: &hess,
            features: &feature_sample,
            params,
            gain_totals: &mut gain_totals,
        };
        let tree = builder.build(&row_sample, 0);
        debug_assert!(tree.depth() <= params.max_depth);
        for (i, row) in rows.iter().enumerate() {
            scores[i] += params.learning_rate * tree.leaf_value(&|f| row[f]);
        }
        trees.push(tree);
        train_loss.push(logistic_loss(&scores, labels));
    }

    Ok(GbdtModel {
        magic: MODEL_MAGIC.to_string(),
        base_score,
        params: params.clone(),
        feature_names,
        train_loss,
        trees,
        n_features,
        gain_totals,
    })
}

/// Additive score decomposition for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    /// Base score plus the expected output of every tree.
    pub base: f64,
    /// Per-feature contribution, sorted by descending magnitude.
    pub contributions: Vec<(usize, f64)>,
    pub raw_score: f64,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Pre-sigmoid margin. Indices beyond the row length read as 0.
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        let fetch = |f: usize| row.get(f).copied().unwrap_or(0.0);
        self.base_score
            + self
                .trees
                .iter()
                .map(|t| self.params.learning_rate * t.leaf_value(&fetch))
                .sum::<f64>()
    }

    /// Malware probability, strictly inside (0, 1).
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.raw_score(row)).clamp(1e-15, 1.0 - 1e-15)
    }

    /// Share of total split gain per feature; sums to 1 when any split
    /// exists.
    pub fn feature_importance(&self) -> Vec<(usize, f64)> {
        let total: f64 = self.gain_totals.iter().sum();
        if total == 0.0 {
            return Vec::new();
        }
        let mut shares: Vec<(usize, f64)> = self
            .gain_totals
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > 0.0)
            .map(|(i, &g)| (i, g / total))
            .collect();
        shares.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        shares
    }

    /// Path-based additive attribution: walking each split moves the
    /// expected tree output, and the move is credited to the split
    /// feature. Contributions plus `base` reproduce the raw score.
    pub fn explain(&self, row: &[f64]) -> Explanation {
        let fetch = |f: usize| row.get(f).copied().unwrap_or(0.0);
        let mut contributions = vec![0.0; self.n_features];
        let mut base = self.base_score;
        for tree in &self.trees {
            base += self.params.learning_rate * tree.expectation();
            let mut node = tree;
            let mut current = tree.expectation();
            while let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } = node
            {
                let child: &TreeNode = if fetch(*feature) < *threshold { left } else { right };
                let next = child.expectation();
                contributions[*feature] += self.params.learning_rate * (next - current);
                current = next;
                node = child;
            }
        }
        let raw_score = self.raw_score(row);
        let mut contributions: Vec<(usize, f64)> = contributions
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c != 0.0)
            .collect();
        contributions.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        Explanation {
            base,
            contributions,
            raw_score,
        }
    }

    pub fn save(&self, out: &mut dyn Write) -> Result<(), GbdtError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| GbdtError::Serde(e.to_string()))?;
        out.write_all(text.as_bytes()).map_err(GbdtError::Io)?;
        out.write_all(b"\n").map_err(GbdtError::Io)
    }

    pub fn load(input: &mut dyn Read) -> Result<Self, GbdtError> {
        let mut text = String::new();
        input.read_to_string(&mut text).map_err(GbdtError::Io)?;
        let model: GbdtModel =
            serde_json::from_str(&text).map_err(|e| GbdtError::Serde(e.to_string()))?;
        if model.magic != MODEL_MAGIC {
            return Err(GbdtError::VersionMismatch {
                expected: MODEL_MAGIC.to_string(),
                found: model.magic,
            });
        }
        Ok(model)
    }
}

/// Trains the two-profile ensemble pair; the final probability is
/// `blend * p_a + (1 - blend) * p_b`.
pub fn train_dual(
    rows: &[Vec<f64>],
    labels: &[f64],
    params_a: &GbdtParams,
    params_b: &GbdtParams,
    blend: f64,
    feature_names: Vec<String>,
) -> Result<DualModel, GbdtError> {
    if !(0.0..=1.0).contains(&blend) {
        return Err(GbdtError::BadBlend(blend));
    }
    let model_a = train(rows, labels, params_a, feature_names.clone())?;
    let model_b = train(rows, labels, params_b, feature_names)?;
    Ok(DualModel {
        magic: DUAL_MODEL_MAGIC.to_string(),
        model_a,
        model_b,
        blend,
    })
}

impl DualModel {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.blend * self.model_a.predict_proba(row)
            + (1.0 - self.blend) * self.model_b.predict_proba(row)
    }

    pub fn save(&self, out: &mut dyn Write) -> Result<(), GbdtError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| GbdtError::Serde(e.to_string()))?;
        out.write_all(text.as_bytes()).map_err(GbdtError::Io)?;
        out.write_all(b"\n").map_err(GbdtError::Io)
    }

    pub fn load(input: &mut dyn Read) -> Result<Self, GbdtError> {
        let mut text = String::new();
        input.read_to_string(&mut text).map_err(GbdtError::Io)?;
        let model: DualModel =
            serde_json::from_str(&text).map_err(|e| GbdtError::Serde(e.to_string()))?;
        if model.magic != DUAL_MODEL_MAGIC {
            return Err(GbdtError::VersionMismatch {
                expected: DUAL_MODEL_MAGIC.to_string(),
                found: model.magic,
            });
        }
        Ok(model)
    }
}

/// Binary classification metrics with malware (1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// True when any metric denominator was zero (that metric reads 0).
    pub zero_division: bool,
}

/// Confusion-matrix metrics at the 0.5 probability threshold.
pub fn evaluate(probabilities: &[f64], labels: &[f64]) -> EvalMetrics {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut tn = 0.0;
    let mut fn_ = 0.0;
    for (&p, &y) in probabilities.iter().zip(labels) {
        let predicted = p >= 0.5;
        match (predicted, y == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let mut zero_division = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            zero_division = true;
            0.0
        } else {
            num / den
        }
    };
    let accuracy = ratio(tp + tn, tp + tn + fp + fn_);
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + recall == 0.0 {
        zero_division = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    EvalMetrics {
        accuracy,
        recall,
        precision,
        f1,
        zero_division,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D threshold fixture: x < 0 labelled 0, x >= 0 labelled 1.
    fn separable() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<f64> = (-10..10).map(|i| i as f64 + 0.5).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let labels: Vec<f64> = xs.iter().map(|&x| (x >= 0.0) as u8 as f64).collect();
        (rows, labels)
    }

    fn small_params(n_trees: usize, max_depth: usize) -> GbdtParams {
        GbdtParams {
            n_trees,
            max_depth,
            learning_rate: 0.5,
            min_leaf: 1,
            subsample: 1.0,
            colsample: 1.0,
            lambda: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn separable_fixture_reaches_perfect_accuracy() {
        let (rows, labels) = separable();
        let model = train(&rows, &labels, &small_params(10, 1), vec![]).unwrap();
        let probs: Vec<f64> = rows.iter().map(|r| model.predict_proba(r)).collect();
        let metrics = evaluate(&probs, &labels);
        assert_eq!(metrics.accuracy, 1.0);
        assert!(model.predict_proba(&[10.0]) > model.predict_proba(&[-10.0]));
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train(&rows, &[1.0, 1.0], &small_params(5, 2), vec![]),
            Err(GbdtError::SingleClass)
        ));
        assert!(matches!(
            train(&rows[..1], &[1.0], &small_params(5, 2), vec![]),
            Err(GbdtError::EmptyData)
        ));
    }

    #[test]
    fn zero_trees_predicts_prior() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![0.0, 1.0, 0.0, 1.0];
        let model = train(&rows, &labels, &small_params(0, 1), vec![]).unwrap();
        assert_eq!(model.predict_proba(&[100.0]), 0.5);
        assert_eq!(model.predict_proba(&[-3.0]), 0.5);
    }

    #[test]
    fn determinism_under_seed() {
        let (rows, labels) = separable();
        let params = GbdtParams {
            subsample: 0.8,
            colsample: 1.0,
            ..small_params(8, 3)
        };
        let m1 = train(&rows, &labels, &params, vec![]).unwrap();
        let m2 = train(&rows, &labels, &params, vec![]).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        m1.save(&mut b1).unwrap();
        m2.save(&mut b2).unwrap();
        assert_eq!(b1, b2, "serialized models must be byte-identical");
    }

    #[test]
    fn training_loss_non_increasing_full_batch() {
        let (rows, labels) = separable();
        let params = GbdtParams {
            learning_rate: 0.3,
            ..small_params(25, 3)
        };
        let model = train(&rows, &labels, &params, vec![]).unwrap();
        let initial = logistic_loss(&vec![model.base_score; labels.len()], &labels);
        let mut prev = initial;
        for (round, &loss) in model.train_loss.iter().enumerate() {
            assert!(
                loss <= prev + 1e-12,
                "round {round}: loss rose from {prev} to {loss}"
            );
            prev = loss;
        }
    }

    #[test]
    fn depth_one_leaves_match_newton_closed_form() {
        // 10-row fixture; first tree's gradients come from the prior.
        let rows: Vec<Vec<f64>> =
            (0..10).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let labels = vec![0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let model = train(&rows, &labels, &small_params(1, 1), vec![]).unwrap();
        let prior = 0.6f64;
        let base = (prior / (1.0 - prior)).ln();
        let p0 = sigmoid(base);
        let TreeNode::Split {
            feature,
            threshold,
            ref left,
            ref right,
            ..
        } = model.trees[0]
        else {
            panic!("expected a split at the root");
        };
        let mut sums = [(0.0, 0.0), (0.0, 0.0)]; // (sum g, sum h) left/right
        for (row, &y) in rows.iter().zip(&labels) {
            let side = (row[feature] >= threshold) as usize;
            sums[side].0 += p0 - y;
            sums[side].1 += p0 * (1.0 - p0);
        }
        let expect = |(g, h): (f64, f64)| -g / h;
        let (TreeNode::Leaf { value: vl, .. }, TreeNode::Leaf { value: vr, .. }) =
            (left.as_ref(), right.as_ref())
        else {
            panic!("depth-1 children must be leaves");
        };
        assert!((vl - expect(sums[0])).abs() < 1e-9);
        assert!((vr - expect(sums[1])).abs() < 1e-9);
    }

    #[test]
    fn proba_strictly_inside_unit_interval() {
        let (rows, labels) = separable();
        let params = GbdtParams {
            learning_rate: 1.0,
            ..small_params(200, 4)
        };
        let model = train(&rows, &labels, &params, vec![]).unwrap();
        for row in &rows {
            let p = model.predict_proba(row);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn repeat_prediction_identical() {
        let (rows, labels) = separable();
        let model = train(&rows, &labels, &small_params(5, 2), vec![]).unwrap();
        assert_eq!(model.predict_proba(&[3.0]), model.predict_proba(&[3.0]));
    }

    #[test]
    fn dual_blend_degeneracies() {
        let (rows, labels) = separable();
        let pa = small_params(6, 2);
        let pb = GbdtParams {
            max_depth: 1,
            learning_rate: 0.9,
            ..small_params(6, 1)
        };
        let dual = train_dual(&rows, &labels, &pa, &pb, 1.0, vec![]).unwrap();
        for row in &rows {
            assert_eq!(dual.predict_proba(row), dual.model_a.predict_proba(row));
        }
        // identical params + seed on both sides: any blend equals either alone
        let twin = train_dual(&rows, &labels, &pa, &pa, 0.5, vec![]).unwrap();
        for row in &rows {
            assert_eq!(twin.predict_proba(row), twin.model_a.predict_proba(row));
        }
        assert!(matches!(
            train_dual(&rows, &labels, &pa, &pb, 1.5, vec![]),
            Err(GbdtError::BadBlend(_))
        ));
    }

    #[test]
    fn dual_at_least_as_accurate_as_singles_on_fixture() {
        let (rows, labels) = separable();
        let pa = small_params(10, 2);
        let pb = GbdtParams {
            learning_rate: 0.2,
            ..small_params(10, 1)
        };
        let dual = train_dual(&rows, &labels, &pa, &pb, 0.5, vec![]).unwrap();
        let acc = |probs: Vec<f64>| evaluate(&probs, &labels).accuracy;
        let acc_a = acc(rows.iter().map(|r| dual.model_a.predict_proba(r)).collect());
        let acc_b = acc(rows.iter().map(|r| dual.model_b.predict_proba(r)).collect());
        let acc_dual = acc(rows.iter().map(|r| dual.predict_proba(r)).collect());
        assert!(acc_dual >= acc_a.max(acc_b) - 0.01);
    }

    #[test]
    fn metrics_closed_forms() {
        // perfect predictions
        let m = evaluate(&[0.9, 0.1, 0.8, 0.2], &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            (m.accuracy, m.recall, m.precision, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(!m.zero_division);

        // all predicted negative, half positive truth
        let m = evaluate(&[0.1, 0.2, 0.3, 0.4], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.accuracy, 0.5);
        assert!(m.zero_division);
    }

    #[test]
    fn metrics_from_confusion_counts() {
        // TP=96, FP=1, FN=4, TN=99 via synthetic probability lists
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..96 {
            probs.push(0.9);
            labels.push(1.0);
        }
        probs.push(0.9);
        labels.push(0.0);
        for _ in 0..4 {
            probs.push(0.1);
            labels.push(1.0);
        }
        for _ in 0..99 {
            probs.push(0.1);
            labels.push(0.0);
        }
        let m = evaluate(&probs, &labels);
        assert!((m.precision - 96.0 / 97.0).abs() < 1e-9);
        assert!((m.recall - 0.96).abs() < 1e-9);
        let f1 = 2.0 * (96.0 / 97.0) * 0.96 / (96.0 / 97.0 + 0.96);
        assert!((m.f1 - f1).abs() < 1e-9);
        assert!((m.precision - 0.990).abs() < 5e-4);
        assert!((m.f1 - 0.975).abs() < 5e-4);
    }

    #[test]
    fn importance_single_feature_fixture() {
        let (rows, labels) = separable();
        let model = train(&rows, &labels, &small_params(5, 2), vec![]).unwrap();
        let importance = model.feature_importance();
        assert_eq!(importance.len(), 1);
        assert_eq!(importance[0], (0, 1.0));
    }

    #[test]
    fn importance_sums_to_one() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, (i % 5) as f64, (i % 3) as f64])
            .collect();
        let labels: Vec<f64> = (0..40)
            .map(|i| ((i % 7) as f64 + (i % 5) as f64 > 5.0) as u8 as f64)
            .collect();
        let model = train(&rows, &labels, &small_params(20, 3), vec![]).unwrap();
        let total: f64 = model.feature_importance().iter().map(|(_, s)| s).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn explanation_reproduces_raw_score() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 6) as f64, (i % 4) as f64])
            .collect();
        let labels: Vec<f64> = (0..30).map(|i| ((i % 6) >= 3) as u8 as f64).collect();
        let model = train(&rows, &labels, &small_params(12, 3), vec![]).unwrap();
        for row in rows.iter().take(6) {
            let explanation = model.explain(row);
            let total: f64 =
                explanation.base + explanation.contributions.iter().map(|(_, c)| c).sum::<f64>();
            assert!((total - explanation.raw_score).abs() < 1e-9);
        }
    }

    #[test]
    fn save_load_roundtrip_and_version_check() {
        let (rows, labels) = separable();
        let model = train(&rows, &labels, &small_params(4, 2), vec!["x".into()]).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let loaded = GbdtModel::load(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, model);

        let tampered = String::from_utf8(buf).unwrap().replace(
            "MALDYN-GBDT-v1",
            "MALDYN-GBDT-v9",
        );
        assert!(matches!(
            GbdtModel::load(&mut tampered.as_bytes()),
            Err(GbdtError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn dual_save_load_roundtrip() {
        let (rows, labels) = separable();
        let dual = train_dual(
            &rows,
            &labels,
            &small_params(3, 2),
            &small_params(3, 1),
            0.5,
            vec![],
        )
        .unwrap();
        let mut buf = Vec::new();
        dual.save(&mut buf).unwrap();
        let loaded = DualModel::load(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, dual);
    }
}
