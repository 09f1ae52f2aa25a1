//! Training losses for seed-plan generators, the adjacency count they
//! approximate, and the plan-comparison metrics.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::grid::GridPoint;
use crate::plan::{ProbPlan, SeedPlan};

/// Clamp applied to discriminator outputs before taking logarithms.
pub const ADV_EPSILON: f64 = 1e-7;

const DEFAULT_LOSS_DEFINITION: &str = include_str!("../data/loss_definition.json");

/// 3×3×3 correlation kernel detecting face-adjacent seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct AdjKernel {
    values: Array3<f64>,
}

impl Default for AdjKernel {
    fn default() -> Self {
        Self::with_center(7.0, 1.0)
    }
}

impl AdjKernel {
    /// Centre weight `center`, the six face neighbours `face`, zero elsewhere.
    pub fn with_center(center: f64, face: f64) -> Self {
        let mut values = Array3::zeros((3, 3, 3));
        values[[1, 1, 1]] = center;
        for (a, b, c) in [(0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 0), (1, 1, 2)] {
            values[[a, b, c]] = face;
        }
        Self { values }
    }

    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.dim() != (3, 3, 3) {
            return validation(format!("kernel must be 3x3x3, got {:?}", values.dim()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return validation("kernel entries must be finite");
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    /// Non-zero taps as `(offset, weight)`.
    fn taps(&self) -> Vec<([isize; 3], f64)> {
        self.values
            .indexed_iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|((a, b, c), &w)| ([a as isize - 1, b as isize - 1, c as isize - 1], w))
            .collect()
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for AdjKernel {
    type Error = crate::Error;

    fn try_from(v: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let flat: Vec<f64> = v.iter().flatten().flatten().copied().collect();
        if v.len() != 3 || v.iter().any(|p| p.len() != 3 || p.iter().any(|r| r.len() != 3)) {
            return validation("kernel must be nested 3x3x3");
        }
        Self::new(Array3::from_shape_vec((3, 3, 3), flat).expect("27 entries"))
    }
}

impl From<AdjKernel> for Vec<Vec<Vec<f64>>> {
    fn from(k: AdjKernel) -> Self {
        k.values
            .outer_iter()
            .map(|p| p.outer_iter().map(|r| r.to_vec()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "threshold")]
    pub adjacency_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 2.0 / 3.0,
            adjacency_threshold: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return validation("loss weights must be non-negative");
        }
        if !(self.adjacency_threshold > 0.0) {
            return validation("adjacency threshold must be positive");
        }
        Ok(())
    }
}

/// Kernel and weights shared by every implementation of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDefinition {
    pub kernel: AdjKernel,
    #[serde(flatten)]
    pub weights: LossWeights,
}

impl Default for LossDefinition {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LOSS_DEFINITION).expect("bundled loss definition parses")
    }
}

impl LossDefinition {
    pub fn from_json(text: &str) -> Result<Self> {
        let def: Self = serde_json::from_str(text)?;
        def.weights.validate()?;
        Ok(def)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("loss definition serializes")
    }
}

/// Zero-padded correlation of `values` with `kernel`.
pub fn correlate(values: ArrayView3<f64>, kernel: &AdjKernel) -> Array3<f64> {
    let taps = kernel.taps();
    let (n0, n1, n2) = values.dim();
    Array3::from_shape_fn((n0, n1, n2), |(i, j, k)| {
        let mut acc = 0.0;
        for &([a, b, c], w) in &taps {
            let (x, y, z) = (i as isize + a, j as isize + b, k as isize + c);
            if x >= 0 && y >= 0 && z >= 0 && (x as usize) < n0 && (y as usize) < n1 && (z as usize) < n2 {
                acc += w * values[[x as usize, y as usize, z as usize]];
            }
        }
        acc
    })
}

/// Adjacency penalty `Σ max(0, (v ⊛ k) − threshold)` and its subgradient.
pub fn adj_loss_tensor(values: ArrayView3<f64>, kernel: &AdjKernel, threshold: f64) -> (f64, Array3<f64>) {
    let response = correlate(values, kernel);
    let taps = kernel.taps();
    let (n0, n1, n2) = values.dim();
    let mut grad = Array3::zeros((n0, n1, n2));
    let mut value = 0.0;
    for ((i, j, k), &r) in response.indexed_iter() {
        let excess = r - threshold;
        if excess <= 0.0 {
            continue;
        }
        value += excess;
        for &([a, b, c], w) in &taps {
            let (x, y, z) = (i as isize + a, j as isize + b, k as isize + c);
            if x >= 0 && y >= 0 && z >= 0 && (x as usize) < n0 && (y as usize) < n1 && (z as usize) < n2 {
                grad[[x as usize, y as usize, z as usize]] += w;
            }
        }
    }
    (value, grad)
}

pub fn adj_seed_loss(pred: &ProbPlan, kernel: &AdjKernel, weights: &LossWeights) -> (f64, Array3<f64>) {
    adj_loss_tensor(pred.values().view(), kernel, weights.adjacency_threshold)
}

/// Mean absolute error and its subgradient.
pub fn l1_tensor(pred: ArrayView3<f64>, target: ArrayView3<f64>) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != target.dim() {
        return validation(format!("shape mismatch: {:?} vs {:?}", pred.dim(), target.dim()));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    ndarray::Zip::from(&mut grad).and(&pred).and(&target).for_each(|g, &p, &t| {
        sum += (p - t).abs();
        *g = if p > t {
            1.0 / n
        } else if p < t {
            -1.0 / n
        } else {
            0.0
        };
    });
    Ok((sum / n, grad))
}

pub fn l1_loss(pred: &ProbPlan, target: &SeedPlan) -> Result<(f64, Array3<f64>)> {
    l1_tensor(pred.values().view(), target.to_tensor().view())
}

fn clamp_probability(d: f64) -> f64 {
    d.clamp(ADV_EPSILON, 1.0 - ADV_EPSILON)
}

/// Discriminator objective `log D(x,y) + log(1 − D(x,G(x)))`.
pub fn adversarial_loss(d_real: f64, d_fake: f64) -> f64 {
    clamp_probability(d_real).ln() + (1.0 - clamp_probability(d_fake)).ln()
}

/// Non-saturating generator loss `−log D(x,G(x))`.
pub fn generator_adversarial_loss(d_fake: f64) -> f64 {
    -clamp_probability(d_fake).ln()
}

pub fn total_objective(adv: f64, l1: f64, adj: f64, weights: &LossWeights) -> f64 {
    weights.alpha * adv + weights.beta * l1 + weights.alpha * adj
}

/// Unordered seed pairs at face-neighbouring grid positions.
pub fn count_adjacent_pairs(plan: &SeedPlan) -> usize {
    let grid = plan.grid();
    plan.seeds()
        .into_iter()
        .map(|s| {
            grid.face_neighbors(s)
                .filter(|&q| q > s && plan.contains(q))
                .count()
        })
        .sum()
}

/// Seeds of `plan` that have a face-adjacent seed.
pub fn adjacent_seeds(plan: &SeedPlan) -> Vec<GridPoint> {
    let grid = plan.grid();
    plan.seeds()
        .into_iter()
        .filter(|&s| grid.face_neighbors(s).any(|q| plan.contains(q)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanComparison {
    /// `None` when the actual plan has only one class.
    pub auc: Option<f64>,
    pub dice: f64,
    pub adj_seeds: usize,
    pub seed_diff: usize,
}

/// Mann–Whitney AUC with average ranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

pub fn compare_plans(pred: &ProbPlan, actual: &SeedPlan, bin_threshold: f64) -> Result<PlanComparison> {
    let target = actual.to_tensor();
    if pred.values().dim() != target.dim() {
        return validation(format!(
            "shape mismatch: {:?} vs {:?}",
            pred.values().dim(),
            target.dim()
        ));
    }
    let scores: Vec<f64> = pred.values().iter().copied().collect();
    let labels: Vec<bool> = target.iter().map(|&v| v == 1.0).collect();
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= bin_threshold).collect();
    let p = predicted.iter().filter(|&&b| b).count();
    let a = labels.iter().filter(|&&b| b).count();
    let both = predicted.iter().zip(&labels).filter(|(&x, &y)| x && y).count();
    let dice = if p + a == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + a) as f64
    };
    let binarized = SeedPlan::from_tensor(
        pred.grid().clone(),
        actual.source_strength,
        pred.values().mapv(|v| if v >= bin_threshold { 1.0 } else { 0.0 }).view(),
    )?;
    Ok(PlanComparison {
        auc: roc_auc(&scores, &labels),
        dice,
        adj_seeds: count_adjacent_pairs(&binarized),
        seed_diff: p.abs_diff(a),
    })
}
